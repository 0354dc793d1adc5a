//! Optical constants.
//!
//! Every medium is described by a [`MaterialModel`] that yields a complex
//! relative permittivity at a given vacuum wavelength. The time-harmonic
//! convention is `exp(-i omega t)` throughout the crate, so absorbing media
//! have `Im(eps) > 0`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

/// Default emission wavelength of the launcher study, in nanometres.
pub const DESIGN_WAVELENGTH_NM: f64 = 685.0;

/// Half-width of the validity band declared for single-point material data.
pub const CONSTANT_MODEL_BAND_NM: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("wavelength {wavelength_nm} nm is outside the range [{min}, {max}] nm of material '{id}'")]
    OutOfRange {
        id: String,
        wavelength_nm: f64,
        min: f64,
        max: f64,
    },
    #[error("unknown material '{0}'")]
    Unknown(String),
    #[error("material '{id}' is not passive (Im eps = {imag} < 0 at {wavelength_nm} nm)")]
    NotPassive {
        id: String,
        wavelength_nm: f64,
        imag: f64,
    },
    #[error("invalid table for material '{id}': {reason}")]
    InvalidTable { id: String, reason: String },
    #[error("invalid material '{id}': {reason}")]
    Invalid { id: String, reason: String },
}

/// How the permittivity depends on wavelength.
#[derive(Debug, Clone, PartialEq)]
pub enum Dispersion {
    /// Wavelength-independent complex permittivity.
    ConstantEpsilon(Complex64),
    /// Wavelength-independent real refractive index; `eps = n^2`.
    ConstantIndex(f64),
    /// Rows of `(wavelength_nm, eps_real, eps_imag)`, strictly increasing in
    /// wavelength, linearly interpolated per component.
    Table(Vec<(f64, f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    id: String,
    dispersion: Dispersion,
    /// Inclusive validity range in nm; `None` means valid everywhere.
    range: Option<(f64, f64)>,
}

impl MaterialModel {
    pub fn constant_epsilon(
        id: impl Into<String>,
        eps: Complex64,
        range: Option<(f64, f64)>,
    ) -> Result<Self, MaterialError> {
        let id = id.into();
        if !eps.re.is_finite() || !eps.im.is_finite() {
            return Err(MaterialError::Invalid {
                id,
                reason: "non-finite permittivity".into(),
            });
        }
        if eps.im < 0.0 {
            return Err(MaterialError::NotPassive {
                wavelength_nm: range.map(|r| r.0).unwrap_or(f64::NAN),
                imag: eps.im,
                id,
            });
        }
        check_range(&id, range)?;
        Ok(Self {
            id,
            dispersion: Dispersion::ConstantEpsilon(eps),
            range,
        })
    }

    pub fn constant_index(
        id: impl Into<String>,
        n: f64,
        range: Option<(f64, f64)>,
    ) -> Result<Self, MaterialError> {
        let id = id.into();
        if !(n.is_finite() && n > 0.0) {
            return Err(MaterialError::Invalid {
                id,
                reason: format!("refractive index must be positive, got {n}"),
            });
        }
        check_range(&id, range)?;
        Ok(Self {
            id,
            dispersion: Dispersion::ConstantIndex(n),
            range,
        })
    }

    /// Tabulated model. The validity range is the span of the table.
    pub fn table(id: impl Into<String>, rows: Vec<(f64, f64, f64)>) -> Result<Self, MaterialError> {
        let id = id.into();
        if rows.is_empty() {
            return Err(MaterialError::InvalidTable {
                id,
                reason: "table is empty".into(),
            });
        }
        for w in rows.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(MaterialError::InvalidTable {
                    id,
                    reason: format!("wavelengths not strictly increasing at {} nm", w[1].0),
                });
            }
        }
        if let Some(row) = rows.iter().find(|r| r.2 < 0.0) {
            return Err(MaterialError::NotPassive {
                id,
                wavelength_nm: row.0,
                imag: row.2,
            });
        }
        let range = Some((rows[0].0, rows[rows.len() - 1].0));
        Ok(Self {
            id,
            dispersion: Dispersion::Table(rows),
            range,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dispersion(&self) -> &Dispersion {
        &self.dispersion
    }

    pub fn validity_range(&self) -> Option<(f64, f64)> {
        self.range
    }

    /// Complex relative permittivity at `wavelength_nm`.
    pub fn permittivity(&self, wavelength_nm: f64) -> Result<Complex64, MaterialError> {
        if let Some((min, max)) = self.range {
            if !(wavelength_nm >= min && wavelength_nm <= max) {
                return Err(MaterialError::OutOfRange {
                    id: self.id.clone(),
                    wavelength_nm,
                    min,
                    max,
                });
            }
        } else if !(wavelength_nm.is_finite() && wavelength_nm > 0.0) {
            return Err(MaterialError::OutOfRange {
                id: self.id.clone(),
                wavelength_nm,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(match &self.dispersion {
            Dispersion::ConstantEpsilon(eps) => *eps,
            Dispersion::ConstantIndex(n) => Complex64::new(n * n, 0.0),
            Dispersion::Table(rows) => interpolate(rows, wavelength_nm),
        })
    }

    /// True when the permittivity has no imaginary part anywhere in range.
    pub fn is_lossless(&self) -> bool {
        match &self.dispersion {
            Dispersion::ConstantEpsilon(eps) => eps.im == 0.0,
            Dispersion::ConstantIndex(_) => true,
            Dispersion::Table(rows) => rows.iter().all(|r| r.2 == 0.0),
        }
    }
}

fn check_range(id: &str, range: Option<(f64, f64)>) -> Result<(), MaterialError> {
    if let Some((min, max)) = range {
        if !(min > 0.0 && max >= min) {
            return Err(MaterialError::Invalid {
                id: id.to_string(),
                reason: format!("bad validity range [{min}, {max}]"),
            });
        }
    }
    Ok(())
}

fn interpolate(rows: &[(f64, f64, f64)], wl: f64) -> Complex64 {
    // caller guarantees rows[0].0 <= wl <= rows[last].0
    let idx = rows.partition_point(|r| r.0 < wl);
    if idx < rows.len() && rows[idx].0 == wl {
        return Complex64::new(rows[idx].1, rows[idx].2);
    }
    let (lo, hi) = (rows[idx - 1], rows[idx]);
    let f = (wl - lo.0) / (hi.0 - lo.0);
    Complex64::new(lo.1 + f * (hi.1 - lo.1), lo.2 + f * (hi.2 - lo.2))
}

/// Free function form of [`MaterialModel::permittivity`].
pub fn permittivity(material: &MaterialModel, wavelength_nm: f64) -> Result<Complex64, MaterialError> {
    material.permittivity(wavelength_nm)
}

/// Named collection of material models.
#[derive(Debug, Clone, Default)]
pub struct MaterialRegistry {
    models: BTreeMap<String, MaterialModel>,
}

impl MaterialRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding every medium of the launcher study at 685 nm.
    ///
    /// | id            | model                                |
    /// |---------------|--------------------------------------|
    /// | `vacuum`/`air`| n = 1, any wavelength                |
    /// | `ag-epitaxial`| eps = -21 + 0.4i                     |
    /// | `ag-ebeam`    | eps = -21 + 1.2i                     |
    /// | `diamond`     | n = 2.42                             |
    /// | `alumina`     | n = 1.74                             |
    /// | `glass`       | n = 1.525                            |
    /// | `mgo`         | n = 1.735                            |
    ///
    /// Single-point models are valid on 685 +/- 50 nm.
    pub fn builtin() -> Self {
        let band = Some((
            DESIGN_WAVELENGTH_NM - CONSTANT_MODEL_BAND_NM,
            DESIGN_WAVELENGTH_NM + CONSTANT_MODEL_BAND_NM,
        ));
        let mut reg = Self::empty();
        let models = [
            MaterialModel::constant_index("vacuum", 1.0, None),
            MaterialModel::constant_index("air", 1.0, None),
            MaterialModel::constant_epsilon("ag-epitaxial", Complex64::new(-21.0, 0.4), band),
            MaterialModel::constant_epsilon("ag-ebeam", Complex64::new(-21.0, 1.2), band),
            MaterialModel::constant_index("diamond", 2.42, band),
            MaterialModel::constant_index("alumina", 1.74, band),
            MaterialModel::constant_index("glass", 1.525, band),
            MaterialModel::constant_index("mgo", 1.735, band),
        ];
        for m in models {
            reg.insert(m.expect("builtin material is valid"));
        }
        reg
    }

    /// Inserts or replaces a model under its lower-cased id.
    pub fn insert(&mut self, model: MaterialModel) {
        self.models.insert(model.id.to_ascii_lowercase(), model);
    }

    pub fn lookup(&self, id: &str) -> Result<&MaterialModel, MaterialError> {
        self.models
            .get(&id.to_ascii_lowercase())
            .ok_or_else(|| MaterialError::Unknown(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MaterialModel> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Free function form of [`MaterialRegistry::builtin`].
pub fn builtin_registry() -> MaterialRegistry {
    MaterialRegistry::builtin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epitaxial_silver_at_design_wavelength() {
        let reg = builtin_registry();
        let eps = reg.lookup("ag-epitaxial").unwrap().permittivity(685.0).unwrap();
        assert_eq!(eps, Complex64::new(-21.0, 0.4));
        let eps = reg.lookup("ag-ebeam").unwrap().permittivity(685.0).unwrap();
        assert_eq!(eps, Complex64::new(-21.0, 1.2));
    }

    #[test]
    fn vacuum_is_identity_everywhere() {
        let reg = builtin_registry();
        for wl in [200.0, 685.0, 1550.0, 1.0e5] {
            assert_eq!(reg.lookup("vacuum").unwrap().permittivity(wl).unwrap(), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn index_models_return_square() {
        let reg = builtin_registry();
        let eps = reg.lookup("diamond").unwrap().permittivity(685.0).unwrap();
        assert!((eps.re - 5.8564).abs() < 1e-12);
        assert_eq!(eps.im, 0.0);
        assert_eq!(reg.lookup("glass").unwrap().dispersion(), &Dispersion::ConstantIndex(1.525));
        assert_eq!(reg.lookup("alumina").unwrap().dispersion(), &Dispersion::ConstantIndex(1.74));
    }

    #[test]
    fn registry_contains_required_media() {
        let reg = builtin_registry();
        for id in ["vacuum", "air", "ag-epitaxial", "ag-ebeam", "diamond", "alumina", "glass", "mgo"] {
            assert!(reg.lookup(id).is_ok(), "{id}");
        }
        assert!(reg.lookup("GLASS").is_ok());
    }

    #[test]
    fn unknown_material() {
        let reg = builtin_registry();
        assert_eq!(
            reg.lookup("unobtainium").unwrap_err(),
            MaterialError::Unknown("unobtainium".into())
        );
    }

    #[test]
    fn out_of_band_is_an_error() {
        let reg = builtin_registry();
        let err = reg.lookup("ag-epitaxial").unwrap().permittivity(800.0).unwrap_err();
        assert!(matches!(err, MaterialError::OutOfRange { .. }));
        assert!(reg.lookup("diamond").unwrap().permittivity(734.9).is_ok());
    }

    #[test]
    fn table_interpolation_and_nodes() {
        let m = MaterialModel::table(
            "t",
            vec![(600.0, -15.0, 0.5), (700.0, -22.0, 0.7), (800.0, -30.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m.permittivity(700.0).unwrap(), Complex64::new(-22.0, 0.7));
        let mid = m.permittivity(650.0).unwrap();
        assert!((mid.re + 18.5).abs() < 1e-12 && (mid.im - 0.6).abs() < 1e-12);
        assert!(m.permittivity(599.0).is_err());
        assert!(m.permittivity(801.0).is_err());
    }

    #[test]
    fn table_must_be_increasing_and_passive() {
        assert!(MaterialModel::table("x", vec![(700.0, 1.0, 0.0), (700.0, 1.0, 0.0)]).is_err());
        assert!(MaterialModel::table("x", vec![(700.0, 1.0, -0.1)]).is_err());
        assert!(MaterialModel::constant_epsilon("x", Complex64::new(2.0, -0.1), None).is_err());
    }

    #[test]
    fn builtin_media_are_passive() {
        for m in builtin_registry().iter() {
            let eps = m.permittivity(685.0).unwrap();
            assert!(eps.im >= 0.0, "{}", m.id());
        }
    }
}
