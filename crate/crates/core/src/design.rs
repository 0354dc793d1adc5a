//! Launcher geometry exploration.
//!
//! The launcher is a diamond gap of thickness `d` between a thick epitaxial
//! silver film on MgO and a thin e-beam silver cap of thickness `t_m2`,
//! protected by a few nanometres of alumina, emitting at 685 nm into air.
//! This module sweeps `(d, t_m2)`, scans the dipole height inside the gap,
//! and maps computed branching ratios onto the intensities seen in the
//! dipole and ring images.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::dipole::{decay_channels, DecayChannels, DipoleError, EmissionOptions, EmitterConfig, Orientation, Reference};
use crate::materials::{builtin_registry, MaterialError, DESIGN_WAVELENGTH_NM};
use crate::stratified::{hex_digest, Layer, LayerStack, OpticalStack, StackError};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("invalid setup constants: {0}")]
    InvalidConstants(String),
    #[error("branching ratio of 1 has no finite dipole intensity")]
    UnitBranching,
    #[error("far-field rate must be positive, got {0}")]
    NoFarField(f64),
    #[error("dipole height {z} nm is not strictly inside the {d} nm emitter layer")]
    PositionOutside { z: f64, d: f64 },
    #[error("stack has no emitter layer")]
    NoEmitterLayer,
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("cache i/o at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Dipole(#[from] DipoleError),
}

/// Thicknesses held fixed during a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedParameters {
    pub t_m1_nm: f64,
    pub alumina_nm: f64,
    pub wavelength_nm: f64,
}

impl Default for FixedParameters {
    fn default() -> Self {
        Self {
            t_m1_nm: 100.0,
            alumina_nm: 3.0,
            wavelength_nm: DESIGN_WAVELENGTH_NM,
        }
    }
}

/// One launcher geometry. `z_nm = None` places the dipole mid-gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LauncherGeometry {
    pub gap_nm: f64,
    pub t_m2_nm: f64,
    pub fixed: FixedParameters,
    pub z_nm: Option<f64>,
    pub orientation: Orientation,
}

impl LauncherGeometry {
    pub fn new(gap_nm: f64, t_m2_nm: f64) -> Self {
        Self {
            gap_nm,
            t_m2_nm,
            fixed: FixedParameters::default(),
            z_nm: None,
            orientation: Orientation::Vertical,
        }
    }

    pub fn emitter(&self) -> EmitterConfig {
        EmitterConfig {
            orientation: self.orientation,
            layer: 1,
            height_nm: self.z_nm.unwrap_or(0.5 * self.gap_nm),
            wavelength_nm: self.fixed.wavelength_nm,
        }
    }
}

/// Material stack of a launcher geometry: MgO | Ag (epitaxial) | diamond |
/// Ag (e-beam) | alumina | air, with the diamond gap as emitter layer.
pub fn design_stack(geometry: &LauncherGeometry) -> Result<LayerStack, DesignError> {
    let reg = builtin_registry();
    let m = |id: &str| reg.lookup(id).cloned();
    let layers = vec![
        Layer::new(m("ag-epitaxial")?, geometry.fixed.t_m1_nm),
        Layer::new(m("diamond")?, geometry.gap_nm),
        Layer::new(m("ag-ebeam")?, geometry.t_m2_nm),
        Layer::new(m("alumina")?, geometry.fixed.alumina_nm),
    ];
    Ok(LayerStack::new(m("mgo")?, layers, m("air")?)?.with_emitter_layer(1)?)
}

pub fn design_optical_stack(geometry: &LauncherGeometry) -> Result<OpticalStack, DesignError> {
    Ok(design_stack(geometry)?.resolve(geometry.fixed.wavelength_nm)?)
}

/// Rate normalization used for the DRE of each cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignReference {
    FreeSpace,
    /// Diamond layer of the same thickness as the gap on glass; the
    /// nanodiamond-on-coverslip measurement that the enhancement is quoted
    /// against.
    GlassMatchedSpacer,
}

impl DesignReference {
    fn resolve(self, gap_nm: f64) -> Reference {
        match self {
            DesignReference::FreeSpace => Reference::FreeSpace,
            DesignReference::GlassMatchedSpacer => Reference::GlassSubstrate { spacer_nm: gap_nm },
        }
    }
}

/// Channels of a launcher geometry with the chosen reference.
pub fn launcher_channels(
    geometry: &LauncherGeometry,
    reference: DesignReference,
    options: &EmissionOptions,
) -> Result<DecayChannels, DesignError> {
    let stack = design_optical_stack(geometry)?;
    let opts = EmissionOptions {
        reference: reference.resolve(geometry.gap_nm),
        ..*options
    };
    Ok(decay_channels(&stack, &geometry.emitter(), &opts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub gap_nm: Vec<f64>,
    pub t_m2_nm: Vec<f64>,
    pub fixed: FixedParameters,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            gap_nm: axis(20.0, 60.0, 2.0),
            t_m2_nm: axis(3.0, 12.0, 0.5),
            fixed: FixedParameters::default(),
        }
    }
}

/// Inclusive uniform axis `start, start + step, ..., stop`.
pub fn axis(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return vec![start];
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), DesignError> {
        for (name, ax) in [("gap", &self.gap_nm), ("t_m2", &self.t_m2_nm)] {
            if ax.is_empty() {
                return Err(DesignError::InvalidGrid(format!("{name} axis is empty")));
            }
            if ax.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(DesignError::InvalidGrid(format!("{name} axis has non-positive values")));
            }
            if ax.windows(2).any(|w| w[1] <= w[0]) {
                return Err(DesignError::InvalidGrid(format!("{name} axis is not strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.gap_nm.len() * self.t_m2_nm.len()
    }
}

/// Scalar results of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub gamma_total: f64,
    pub gamma_ff: f64,
    pub gamma_spp: f64,
    pub gamma_nf: f64,
    pub reference_rate: f64,
    pub dre: f64,
    pub xi: f64,
    pub beta_spp: f64,
    pub beta_nf: f64,
    pub conservation_error: f64,
    pub warnings: usize,
}

impl CellResult {
    fn from_channels(ch: &DecayChannels) -> Self {
        Self {
            gamma_total: ch.gamma_total,
            gamma_ff: ch.gamma_ff,
            gamma_spp: ch.gamma_spp,
            gamma_nf: ch.gamma_nf,
            reference_rate: ch.reference_rate,
            dre: ch.dre,
            xi: ch.xi,
            beta_spp: ch.beta_spp,
            beta_nf: ch.beta_nf,
            conservation_error: ch.conservation_error(),
            warnings: ch.warnings.len(),
        }
    }

    const FIELDS: usize = 10;

    fn values(&self) -> [f64; Self::FIELDS] {
        [
            self.gamma_total,
            self.gamma_ff,
            self.gamma_spp,
            self.gamma_nf,
            self.reference_rate,
            self.dre,
            self.xi,
            self.beta_spp,
            self.beta_nf,
            self.conservation_error,
        ]
    }

    fn encode(&self, key: &str) -> String {
        let mut s = format!("{key}\n");
        for v in self.values() {
            s.push_str(&format!("{:016x}\n", v.to_bits()));
        }
        s.push_str(&format!("{}\n", self.warnings));
        s
    }

    fn decode(text: &str, key: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != key {
            return None;
        }
        let mut v = [0.0; Self::FIELDS];
        for slot in v.iter_mut() {
            *slot = f64::from_bits(u64::from_str_radix(lines.next()?, 16).ok()?);
        }
        let warnings = lines.next()?.parse().ok()?;
        Some(Self {
            gamma_total: v[0],
            gamma_ff: v[1],
            gamma_spp: v[2],
            gamma_nf: v[3],
            reference_rate: v[4],
            dre: v[5],
            xi: v[6],
            beta_spp: v[7],
            beta_nf: v[8],
            conservation_error: v[9],
            warnings,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Computed,
    Cached,
    Failed(String),
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        !matches!(self, CellStatus::Failed(_))
    }
}

/// Sweep output. Matrices are indexed `(gap index, t_m2 index)`; failed
/// cells hold NaN and a `Failed` status.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMap {
    pub grid: SweepGrid,
    pub dre: DMatrix<f64>,
    pub beta_spp: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub beta_nf: DMatrix<f64>,
    pub status: Vec<CellStatus>,
    pub cells: Vec<Option<CellResult>>,
}

impl DesignMap {
    pub fn cell(&self, i_gap: usize, i_t: usize) -> Option<&CellResult> {
        self.cells[i_gap * self.grid.t_m2_nm.len() + i_t].as_ref()
    }

    pub fn cell_status(&self, i_gap: usize, i_t: usize) -> &CellStatus {
        &self.status[i_gap * self.grid.t_m2_nm.len() + i_t]
    }

    pub fn failures(&self) -> usize {
        self.status.iter().filter(|s| !s.is_ok()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub options: EmissionOptions,
    pub reference: DesignReference,
    pub orientation: Orientation,
    /// Per-cell result cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            options: EmissionOptions::default(),
            reference: DesignReference::GlassMatchedSpacer,
            orientation: Orientation::Vertical,
            cache_dir: None,
            jobs: None,
        }
    }
}

fn cell_key(stack: &OpticalStack, emitter: &EmitterConfig, options: &EmissionOptions) -> String {
    format!("{}|{}|{:?}", stack.canonical_key(), emitter.canonical_key(), options)
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn run_cell(
    geometry: &LauncherGeometry,
    settings: &SweepSettings,
) -> Result<(CellResult, CellStatus), DesignError> {
    let stack = design_optical_stack(geometry)?;
    let emitter = geometry.emitter();
    let opts = EmissionOptions {
        reference: settings.reference.resolve(geometry.gap_nm),
        ..settings.options
    };
    let key = cell_key(&stack, &emitter, &opts);
    let path = settings
        .cache_dir
        .as_ref()
        .map(|dir| dir.join(format!("{}.cell", hex_digest(key.as_bytes()))));
    if let Some(p) = &path {
        if let Ok(text) = fs::read_to_string(p) {
            if let Some(r) = CellResult::decode(&text, &key) {
                return Ok((r, CellStatus::Cached));
            }
        }
    }
    let ch = decay_channels(&stack, &emitter, &opts)?;
    let r = CellResult::from_channels(&ch);
    if let Some(p) = &path {
        write_atomic(p, &r.encode(&key)).map_err(|source| DesignError::Cache {
            path: p.clone(),
            source,
        })?;
    }
    Ok((r, CellStatus::Computed))
}

/// Evaluate every `(gap, t_m2)` cell with the dipole at mid-gap. Cell failures
/// are recorded in the status vector; only grid, cache-directory and
/// thread-pool problems abort the sweep.
pub fn sweep_geometry(grid: &SweepGrid, settings: &SweepSettings) -> Result<DesignMap, DesignError> {
    grid.validate()?;
    if let Some(dir) = &settings.cache_dir {
        fs::create_dir_all(dir).map_err(|source| DesignError::Cache {
            path: dir.clone(),
            source,
        })?;
    }
    let nt = grid.t_m2_nm.len();
    let run = || {
        (0..grid.cells())
            .into_par_iter()
            .map(|idx| {
                let geometry = LauncherGeometry {
                    gap_nm: grid.gap_nm[idx / nt],
                    t_m2_nm: grid.t_m2_nm[idx % nt],
                    fixed: grid.fixed,
                    z_nm: None,
                    orientation: settings.orientation,
                };
                run_cell(&geometry, settings)
            })
            .collect::<Vec<_>>()
    };
    let results = match settings.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| DesignError::ThreadPool(e.to_string()))?
            .install(run),
        None => run(),
    };

    let ng = grid.gap_nm.len();
    let nan = || DMatrix::from_element(ng, nt, f64::NAN);
    let (mut dre, mut beta_spp, mut xi, mut beta_nf) = (nan(), nan(), nan(), nan());
    let mut status = Vec::with_capacity(results.len());
    let mut cells = Vec::with_capacity(results.len());
    for (idx, res) in results.into_iter().enumerate() {
        let (i, j) = (idx / nt, idx % nt);
        match res {
            Ok((r, s)) => {
                dre[(i, j)] = r.dre;
                beta_spp[(i, j)] = r.beta_spp;
                xi[(i, j)] = r.xi;
                beta_nf[(i, j)] = r.beta_nf;
                cells.push(Some(r));
                status.push(s);
            }
            Err(DesignError::Cache { path, source }) => return Err(DesignError::Cache { path, source }),
            Err(e) => {
                cells.push(None);
                status.push(CellStatus::Failed(e.to_string()));
            }
        }
    }
    Ok(DesignMap {
        grid: grid.clone(),
        dre,
        beta_spp,
        xi,
        beta_nf,
        status,
        cells,
    })
}

/// A 4-connected set of grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub cells: Vec<(usize, usize)>,
    pub max_dre: f64,
    pub max_beta_spp: f64,
}

fn components(mask: &DMatrix<bool>) -> Vec<Vec<(usize, usize)>> {
    let (r, c) = mask.shape();
    let mut seen = DMatrix::from_element(r, c, false);
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..c {
            if !mask[(i, j)] || seen[(i, j)] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![(i, j)];
            seen[(i, j)] = true;
            while let Some((a, b)) = stack.pop() {
                comp.push((a, b));
                let nbrs = [
                    (a.wrapping_sub(1), b),
                    (a + 1, b),
                    (a, b.wrapping_sub(1)),
                    (a, b + 1),
                ];
                for (x, y) in nbrs {
                    if x < r && y < c && mask[(x, y)] && !seen[(x, y)] {
                        seen[(x, y)] = true;
                        stack.push((x, y));
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

/// Resonance families of a map. The ridge is the connected set of cells with
/// `beta_spp >= 0.5 max(beta_spp)` that contains the global maximum. High-DRE
/// regions are connected sets with `dre >= dre_quantile`-th quantile of the
/// map; the ones not touching the ridge are reported as `other_high_dre`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFamilies {
    pub ridge: Region,
    pub other_high_dre: Vec<Region>,
    pub dre_threshold: f64,
}

impl ResonanceFamilies {
    /// True when some high-DRE region away from the ridge launches less than
    /// half the ridge's peak `beta_spp`.
    pub fn has_lossy_family(&self) -> bool {
        self.other_high_dre
            .iter()
            .any(|r| r.max_beta_spp < 0.5 * self.ridge.max_beta_spp)
    }
}

pub fn resonance_families(map: &DesignMap, dre_quantile: f64) -> Option<ResonanceFamilies> {
    let (r, c) = map.dre.shape();
    let finite = |m: &DMatrix<f64>| m.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>();
    let betas = finite(&map.beta_spp);
    let mut dres = finite(&map.dre);
    if betas.is_empty() || dres.is_empty() {
        return None;
    }
    let region = |cells: Vec<(usize, usize)>| {
        let max_dre = cells.iter().map(|&p| map.dre[p]).fold(f64::NEG_INFINITY, f64::max);
        let max_beta_spp = cells.iter().map(|&p| map.beta_spp[p]).fold(f64::NEG_INFINITY, f64::max);
        Region {
            cells,
            max_dre,
            max_beta_spp,
        }
    };

    let bmax = betas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let peak = (0..r)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .find(|&p| map.beta_spp[p] == bmax)?;
    let ridge_mask = DMatrix::from_fn(r, c, |i, j| map.beta_spp[(i, j)] >= 0.5 * bmax);
    let ridge = components(&ridge_mask).into_iter().find(|comp| comp.contains(&peak))?;

    dres.sort_by(f64::total_cmp);
    let q = dre_quantile.clamp(0.0, 1.0);
    let dre_threshold = dres[((dres.len() - 1) as f64 * q).round() as usize];
    let dre_mask = DMatrix::from_fn(r, c, |i, j| map.dre[(i, j)] >= dre_threshold);
    let other_high_dre = components(&dre_mask)
        .into_iter()
        .filter(|comp| comp.iter().all(|p| !ridge.contains(p)))
        .map(region)
        .collect();
    Some(ResonanceFamilies {
        ridge: region(ridge),
        other_high_dre,
        dre_threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionPoint {
    pub z_nm: f64,
    pub channels: DecayChannels,
}

/// Channels for the dipole at each height inside the stack's emitter layer.
/// All heights are checked before any computation.
pub fn scan_dipole_position(
    stack: &OpticalStack,
    template: &EmitterConfig,
    z_nm: &[f64],
    options: &EmissionOptions,
) -> Result<Vec<PositionPoint>, DesignError> {
    let layer = stack.emitter_layer().unwrap_or(template.layer);
    let d = stack.layers().get(layer).ok_or(DesignError::NoEmitterLayer)?.1;
    if let Some(&z) = z_nm.iter().find(|&&z| !(z > 0.0 && z < d)) {
        return Err(DesignError::PositionOutside { z, d });
    }
    z_nm.par_iter()
        .map(|&z| {
            let em = EmitterConfig {
                layer,
                height_nm: z,
                ..*template
            };
            Ok(PositionPoint {
                z_nm: z,
                channels: decay_channels(stack, &em, options)?,
            })
        })
        .collect()
}

/// Collection and out-coupling figures of the measurement setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupConstants {
    pub eta_col_dipole: f64,
    pub eta_col_ring: f64,
    /// Fraction of plasmons reaching the trench that scatter to the far field.
    pub eta_spp_ff: f64,
    pub trench_radius_nm: f64,
    pub propagation_length_um: f64,
}

impl Default for SetupConstants {
    fn default() -> Self {
        Self {
            eta_col_dipole: 0.579,
            eta_col_ring: 0.842,
            eta_spp_ff: 0.306,
            trench_radius_nm: 2000.0,
            propagation_length_um: 6.35,
        }
    }
}

impl SetupConstants {
    pub fn validate(&self) -> Result<(), DesignError> {
        for (name, v) in [
            ("eta_col_dipole", self.eta_col_dipole),
            ("eta_col_ring", self.eta_col_ring),
            ("eta_spp_ff", self.eta_spp_ff),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(DesignError::InvalidConstants(format!("{name} = {v} is not in (0, 1]")));
            }
        }
        if !(self.trench_radius_nm >= 0.0 && self.trench_radius_nm.is_finite()) {
            return Err(DesignError::InvalidConstants(format!(
                "trench radius {} nm",
                self.trench_radius_nm
            )));
        }
        if !(self.propagation_length_um > 0.0) {
            return Err(DesignError::InvalidConstants(format!(
                "propagation length {} um",
                self.propagation_length_um
            )));
        }
        Ok(())
    }

    /// Surviving plasmon fraction at the trench, `exp(-r / L)`.
    pub fn propagation_survival(&self) -> f64 {
        (-self.trench_radius_nm * 1e-3 / self.propagation_length_um).exp()
    }

    /// Detected ring rate per launched plasmon.
    pub fn ring_efficiency(&self) -> f64 {
        self.eta_col_ring * self.eta_spp_ff * self.propagation_survival()
    }
}

/// Ratio of ring to dipole-spot count rates implied by a branching ratio.
pub fn predict_ratio(xi: f64, constants: &SetupConstants) -> Result<f64, DesignError> {
    constants.validate()?;
    if xi >= 1.0 {
        return Err(DesignError::UnitBranching);
    }
    Ok(xi / (1.0 - xi) * constants.ring_efficiency() / constants.eta_col_dipole)
}

/// Expected `I_ring / I_dipole` (per unit exposure) for computed channels.
pub fn predict_observables(channels: &DecayChannels, constants: &SetupConstants) -> Result<f64, DesignError> {
    if !(channels.gamma_ff > 0.0) {
        return Err(DesignError::NoFarField(channels.gamma_ff));
    }
    predict_ratio(channels.xi, constants)
}
