//! Workbench configuration file.
//!
//! TOML with one table per concern. Every field is optional except the
//! simulation seed, which must be given whenever a command simulates.
//!
//! ```toml
//! output_dir = "qpl-out"
//!
//! [[materials]]
//! id = "my-silver"
//! kind = "constant-epsilon"      # constant-epsilon | constant-index | table
//! values = [-20.5, 0.9]          # [eps_re, eps_im] | [n] | [[wavelength_nm, eps_re, eps_im], ...]
//! valid_nm = [600.0, 800.0]      # optional, constant kinds only
//!
//! [design]                       # launcher geometry, used when [stack] is absent
//! gap_nm = 40.0
//! t_m2_nm = 8.0
//! t_m1_nm = 100.0
//! alumina_nm = 3.0
//!
//! [stack]                        # explicit stack, replaces the launcher geometry
//! wavelength_nm = 685.0
//! lower = "glass"
//! upper = "air"
//! emitter_layer = 0
//! layers = [{ material = "diamond", thickness_nm = 60.0 }]
//!
//! [emitter]
//! height_nm = 20.0               # default: middle of the emitter layer
//! orientation = "vertical"       # vertical | horizontal
//!
//! [emission]
//! reference = "glass"            # glass | free-space; default glass for the launcher, free-space otherwise
//! u_max = 20.0
//! rel_tol = 1e-6
//! min_propagation_um = 0.5
//!
//! [sweep]
//! gap_nm = [20.0, 60.0, 2.0]     # start, stop, step
//! t_m2_nm = [3.0, 12.0, 0.5]
//! cache_dir = "qpl-cache"
//! jobs = 4
//!
//! [setup]
//! eta_col_dipole = 0.579
//! eta_col_ring = 0.842
//! eta_spp_ff = 0.306
//! trench_radius_nm = 2000.0
//! propagation_length_um = 6.35
//!
//! [sim]
//! seed = 1
//! drive = "pulsed"               # pulsed | cw
//! pulses = 1000000               # pulsed; or duration_s
//! rep_period_ps = 12500.0
//! excitation_probability = 1.0
//! pump_rate_per_s = 2e7          # cw
//! lifetimes_ps = [[11.0, 0.94], [671.0, 0.06]]
//! background_fraction = 0.1815   # or background_rate_per_s
//! efficiency = 0.35
//! jitter_ps = 30.0
//! splitter = 0.5
//! ```

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use qpl_core::design::{
    axis, design_stack, DesignReference, FixedParameters, LauncherGeometry, SetupConstants, SweepGrid,
};
use qpl_core::dipole::{EmissionOptions, EmitterConfig, Orientation, Reference};
use qpl_core::materials::{MaterialModel, MaterialRegistry};
use qpl_core::sim::{
    background_rate_for_fraction, expected_signal_rate, DetectorModel, Drive, EmitterModel, LevelScheme, SimConfig,
};
use qpl_core::stratified::{Layer, LayerStack, OpticalStack};

pub const CONFIG_ENV: &str = "QPL_WORKBENCH_CONFIG";

/// Configuration that could not be read, parsed or resolved.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub materials: Vec<MaterialSpec>,
    pub design: Option<DesignSection>,
    pub stack: Option<StackSection>,
    #[serde(default)]
    pub emitter: EmitterSection,
    #[serde(default)]
    pub emission: EmissionSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub setup: SetupSection,
    pub sim: Option<SimSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub id: String,
    pub kind: MaterialKind,
    pub values: toml::Value,
    pub valid_nm: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MaterialKind {
    ConstantEpsilon,
    ConstantIndex,
    Table,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub gap_nm: Option<f64>,
    pub t_m2_nm: Option<f64>,
    pub t_m1_nm: Option<f64>,
    pub alumina_nm: Option<f64>,
    pub wavelength_nm: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSection {
    pub wavelength_nm: Option<f64>,
    pub lower: String,
    pub upper: String,
    pub emitter_layer: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub material: String,
    pub thickness_nm: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub height_nm: Option<f64>,
    pub orientation: Option<OrientationSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationSpec {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionSection {
    pub reference: Option<ReferenceSpec>,
    pub u_max: Option<f64>,
    pub rel_tol: Option<f64>,
    pub min_propagation_um: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSpec {
    Glass,
    FreeSpace,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gap_nm: Option<[f64; 3]>,
    pub t_m2_nm: Option<[f64; 3]>,
    pub cache_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupSection {
    pub eta_col_dipole: Option<f64>,
    pub eta_col_ring: Option<f64>,
    pub eta_spp_ff: Option<f64>,
    pub trench_radius_nm: Option<f64>,
    pub propagation_length_um: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub seed: Option<u64>,
    pub drive: Option<DriveSpec>,
    pub pulses: Option<u64>,
    pub duration_s: Option<f64>,
    pub rep_period_ps: Option<f64>,
    pub excitation_probability: Option<f64>,
    pub pump_rate_per_s: Option<f64>,
    pub lifetimes_ps: Option<Vec<[f64; 2]>>,
    pub shelving_probability: Option<f64>,
    pub shelf_lifetime_ps: Option<f64>,
    pub background_fraction: Option<f64>,
    pub background_rate_per_s: Option<f64>,
    pub efficiency: Option<f64>,
    pub jitter_ps: Option<f64>,
    pub splitter: Option<f64>,
    pub dead_time_ps: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DriveSpec {
    Pulsed,
    Cw,
}

/// A fully specified simulation.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub emitter: EmitterModel,
    pub detector: DetectorModel,
    pub config: SimConfig,
}

/// Config path from the command line, else from the environment.
pub fn resolve_path(cli: Option<&Path>) -> Option<PathBuf> {
    cli.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

pub fn load(path: Option<&Path>) -> anyhow::Result<WorkbenchConfig> {
    let Some(path) = path else {
        return Ok(WorkbenchConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| {
        let msg = e.downcast_ref::<ConfigError>().map_or_else(|| e.to_string(), |c| c.0.clone());
        bad(format!("{}: {msg}", path.display()))
    })
}

pub fn parse(text: &str) -> anyhow::Result<WorkbenchConfig> {
    let cfg: WorkbenchConfig = toml::from_str(text).map_err(|e| bad(e.to_string().trim_end().to_string()))?;
    cfg.registry()?;
    Ok(cfg)
}

fn float(v: &toml::Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

fn floats(v: &toml::Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(float).collect()
}

impl MaterialSpec {
    fn model(&self) -> anyhow::Result<MaterialModel> {
        let range = self.valid_nm.map(|[a, b]| (a, b));
        let shape = |what: &str| bad(format!("material {}: values must be {what}", self.id));
        let m = match self.kind {
            MaterialKind::ConstantEpsilon => {
                let v = floats(&self.values).filter(|v| v.len() == 2).ok_or_else(|| shape("[eps_re, eps_im]"))?;
                MaterialModel::constant_epsilon(self.id.clone(), Complex64::new(v[0], v[1]), range)
            }
            MaterialKind::ConstantIndex => {
                let v = float(&self.values)
                    .map(|n| vec![n])
                    .or_else(|| floats(&self.values))
                    .filter(|v| v.len() == 1)
                    .ok_or_else(|| shape("[n]"))?;
                MaterialModel::constant_index(self.id.clone(), v[0], range)
            }
            MaterialKind::Table => {
                let rows = self
                    .values
                    .as_array()
                    .and_then(|rows| {
                        rows.iter()
                            .map(|r| floats(r).filter(|r| r.len() == 3).map(|r| (r[0], r[1], r[2])))
                            .collect::<Option<Vec<_>>>()
                    })
                    .ok_or_else(|| shape("[[wavelength_nm, eps_re, eps_im], ...]"))?;
                if range.is_some() {
                    return Err(bad(format!("material {}: tables take their range from the rows", self.id)));
                }
                MaterialModel::table(self.id.clone(), rows)
            }
        };
        m.map_err(|e| bad(e.to_string()))
    }
}

impl WorkbenchConfig {
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("qpl-out"))
    }

    /// Built-in materials plus the configured ones, which may override them.
    pub fn registry(&self) -> anyhow::Result<MaterialRegistry> {
        let mut reg = MaterialRegistry::builtin();
        for spec in &self.materials {
            reg.insert(spec.model()?);
        }
        Ok(reg)
    }

    pub fn geometry(&self) -> anyhow::Result<LauncherGeometry> {
        let d = self.design.unwrap_or_default();
        let defaults = FixedParameters::default();
        let base = LauncherGeometry::new(40.0, 8.0);
        let g = LauncherGeometry {
            gap_nm: d.gap_nm.unwrap_or(base.gap_nm),
            t_m2_nm: d.t_m2_nm.unwrap_or(base.t_m2_nm),
            fixed: FixedParameters {
                t_m1_nm: d.t_m1_nm.unwrap_or(defaults.t_m1_nm),
                alumina_nm: d.alumina_nm.unwrap_or(defaults.alumina_nm),
                wavelength_nm: d.wavelength_nm.unwrap_or(defaults.wavelength_nm),
            },
            z_nm: self.emitter.height_nm,
            orientation: self.orientation(),
        };
        design_stack(&g).map_err(|e| bad(e.to_string()))?;
        Ok(g)
    }

    fn orientation(&self) -> Orientation {
        match self.emitter.orientation {
            Some(OrientationSpec::Horizontal) => Orientation::Horizontal,
            _ => Orientation::Vertical,
        }
    }

    pub fn uses_launcher(&self) -> bool {
        self.stack.is_none()
    }

    pub fn wavelength_nm(&self) -> f64 {
        match &self.stack {
            Some(s) => s.wavelength_nm.unwrap_or(qpl_core::materials::DESIGN_WAVELENGTH_NM),
            None => self
                .design
                .and_then(|d| d.wavelength_nm)
                .unwrap_or(qpl_core::materials::DESIGN_WAVELENGTH_NM),
        }
    }

    /// The material stack: the explicit `[stack]` if present, else the
    /// launcher geometry.
    pub fn layer_stack(&self) -> anyhow::Result<LayerStack> {
        let Some(s) = &self.stack else {
            return design_stack(&self.geometry()?).map_err(|e| bad(e.to_string()));
        };
        let reg = self.registry()?;
        let look = |id: &str| reg.lookup(id).cloned().map_err(|e| bad(e.to_string()));
        let layers = s
            .layers
            .iter()
            .map(|l| Ok(Layer::new(look(&l.material)?, l.thickness_nm)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        LayerStack::new(look(&s.lower)?, layers, look(&s.upper)?)
            .and_then(|st| st.with_emitter_layer(s.emitter_layer))
            .map_err(|e| bad(e.to_string()))
    }

    pub fn optical_stack(&self) -> anyhow::Result<OpticalStack> {
        self.layer_stack()?
            .resolve(self.wavelength_nm())
            .map_err(|e| bad(e.to_string()))
    }

    pub fn emitter(&self, stack: &OpticalStack) -> anyhow::Result<EmitterConfig> {
        let layer = stack.emitter_layer().ok_or_else(|| bad("stack has no emitter layer"))?;
        let d = stack.layers()[layer].1;
        let height_nm = self.emitter.height_nm.unwrap_or(0.5 * d);
        if !(height_nm > 0.0 && height_nm < d) {
            return Err(bad(format!("emitter height {height_nm} nm is not inside the {d} nm emitter layer")));
        }
        Ok(EmitterConfig {
            orientation: self.orientation(),
            layer,
            height_nm,
            wavelength_nm: stack.wavelength_nm(),
        })
    }

    fn reference_spec(&self) -> ReferenceSpec {
        self.emission.reference.unwrap_or(if self.uses_launcher() {
            ReferenceSpec::Glass
        } else {
            ReferenceSpec::FreeSpace
        })
    }

    pub fn design_reference(&self) -> DesignReference {
        match self.reference_spec() {
            ReferenceSpec::Glass => DesignReference::GlassMatchedSpacer,
            ReferenceSpec::FreeSpace => DesignReference::FreeSpace,
        }
    }

    /// Numerical options with the reference resolved for `stack`; the glass
    /// reference uses a spacer as thick as the emitter layer.
    pub fn emission_options(&self, stack: &OpticalStack) -> anyhow::Result<EmissionOptions> {
        let mut o = self.base_options();
        o.reference = match self.reference_spec() {
            ReferenceSpec::FreeSpace => Reference::FreeSpace,
            ReferenceSpec::Glass => {
                let layer = stack.emitter_layer().ok_or_else(|| bad("stack has no emitter layer"))?;
                Reference::GlassSubstrate {
                    spacer_nm: stack.layers()[layer].1,
                }
            }
        };
        Ok(o)
    }

    /// Numerical options without a resolved reference.
    pub fn base_options(&self) -> EmissionOptions {
        let mut o = EmissionOptions::default();
        if let Some(u) = self.emission.u_max {
            o.u_max = u;
        }
        if let Some(t) = self.emission.rel_tol {
            o.quad.rel_tol = t;
        }
        if let Some(l) = self.emission.min_propagation_um {
            o.min_propagation_um = l;
        }
        o
    }

    pub fn sweep_grid(&self) -> anyhow::Result<SweepGrid> {
        let mut grid = SweepGrid {
            fixed: self.geometry()?.fixed,
            ..SweepGrid::default()
        };
        if let Some([a, b, s]) = self.sweep.gap_nm {
            grid.gap_nm = axis(a, b, s);
        }
        if let Some([a, b, s]) = self.sweep.t_m2_nm {
            grid.t_m2_nm = axis(a, b, s);
        }
        grid.validate().map_err(|e| bad(e.to_string()))?;
        Ok(grid)
    }

    pub fn setup_constants(&self) -> anyhow::Result<SetupConstants> {
        let d = SetupConstants::default();
        let s = &self.setup;
        let c = SetupConstants {
            eta_col_dipole: s.eta_col_dipole.unwrap_or(d.eta_col_dipole),
            eta_col_ring: s.eta_col_ring.unwrap_or(d.eta_col_ring),
            eta_spp_ff: s.eta_spp_ff.unwrap_or(d.eta_spp_ff),
            trench_radius_nm: s.trench_radius_nm.unwrap_or(d.trench_radius_nm),
            propagation_length_um: s.propagation_length_um.unwrap_or(d.propagation_length_um),
        };
        c.validate().map_err(|e| bad(e.to_string()))?;
        Ok(c)
    }

    pub fn sim_setup(&self) -> anyhow::Result<SimSetup> {
        let s = self.sim.as_ref().ok_or_else(|| bad("the [sim] section is required for simulation"))?;
        let seed = s.seed.ok_or_else(|| bad("sim.seed is required"))?;
        let drive = s.drive.unwrap_or(DriveSpec::Pulsed);
        let lifetimes = s
            .lifetimes_ps
            .clone()
            .unwrap_or_else(|| vec![[11.0, 0.94], [671.0, 0.06]])
            .into_iter()
            .map(|[t, w]| (t, w))
            .collect();
        let scheme = match (s.shelving_probability, s.shelf_lifetime_ps) {
            (None, None) => LevelScheme::TwoLevel,
            (Some(probability), Some(shelf_lifetime_ps)) => LevelScheme::Shelving {
                probability,
                shelf_lifetime_ps,
            },
            _ => return Err(bad("sim.shelving_probability and sim.shelf_lifetime_ps go together")),
        };
        let (drive, rep_period_ps, duration_s) = match drive {
            DriveSpec::Pulsed => {
                let period = s.rep_period_ps.unwrap_or(12_500.0);
                let duration = match (s.pulses, s.duration_s) {
                    (Some(_), Some(_)) => return Err(bad("give sim.pulses or sim.duration_s, not both")),
                    (Some(n), None) => n as f64 * period * 1e-12,
                    (None, Some(t)) => t,
                    (None, None) => 1e6 * period * 1e-12,
                };
                let p = s.excitation_probability.unwrap_or(1.0);
                (Drive::Pulsed { excitation_probability: p }, Some(period), duration)
            }
            DriveSpec::Cw => {
                if s.pulses.is_some() {
                    return Err(bad("sim.pulses applies to pulsed drive only"));
                }
                let pump = s.pump_rate_per_s.unwrap_or(2e7);
                (Drive::Cw { pump_rate_per_s: pump }, None, s.duration_s.unwrap_or(1.0))
            }
        };
        let emitter = EmitterModel {
            scheme,
            lifetimes,
            drive,
        };
        let dd = DetectorModel::default();
        let detector = DetectorModel {
            efficiency: s.efficiency.unwrap_or(dd.efficiency),
            jitter_ps: s.jitter_ps.unwrap_or(dd.jitter_ps),
            splitter: s.splitter.unwrap_or(dd.splitter),
            dead_time_ps: s.dead_time_ps,
        };
        let mut config = SimConfig {
            duration_s,
            rep_period_ps,
            background_rate_per_s: 0.0,
            seed,
        };
        config.background_rate_per_s = match (s.background_fraction, s.background_rate_per_s) {
            (Some(_), Some(_)) => return Err(bad("give sim.background_fraction or sim.background_rate_per_s, not both")),
            (Some(f), None) => {
                let signal = expected_signal_rate(&emitter, &detector, &config).map_err(|e| bad(e.to_string()))?;
                background_rate_for_fraction(f, signal).map_err(|e| bad(e.to_string()))?
            }
            (None, Some(r)) => r,
            (None, None) => 0.0,
        };
        emitter.validate().map_err(|e| bad(e.to_string()))?;
        detector.validate().map_err(|e| bad(e.to_string()))?;
        Ok(SimSetup {
            emitter,
            detector,
            config,
        })
    }
}
