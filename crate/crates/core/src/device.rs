//! NVM cell non-ideality models.
//!
//! A [`DeviceProfile`] describes a multi-level cell: level `l` of an `L`-level
//! device nominally sits at normalized conductance `l / (L - 1)` and every
//! program or read of that level deviates by zero-mean Gaussian noise with a
//! level-specific standard deviation. Noise is never clamped.
//!
//! [`perturb_values`] is the separate, relative noise knob used by the sweeps:
//! it perturbs real values by `N(0, (sigma * max|v|)^2)`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub num_levels: usize,
    pub sigma_per_level: Vec<f64>,
}

impl DeviceProfile {
    pub fn new(name: impl Into<String>, sigma_per_level: Vec<f64>) -> Result<Self> {
        let profile = DeviceProfile {
            name: name.into(),
            num_levels: sigma_per_level.len(),
            sigma_per_level,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Noise-free profile with `num_levels` levels.
    pub fn ideal(num_levels: usize) -> Result<Self> {
        Self::new(format!("ideal-{num_levels}"), vec![0.0; num_levels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::arg(format!(
                "device profile {} needs at least 2 levels, has {}",
                self.name, self.num_levels
            )));
        }
        if self.sigma_per_level.len() != self.num_levels {
            return Err(Error::arg(format!(
                "device profile {} lists {} sigmas for {} levels",
                self.name,
                self.sigma_per_level.len(),
                self.num_levels
            )));
        }
        if let Some(bad) = self.sigma_per_level.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::arg(format!(
                "device profile {} has invalid sigma {bad}",
                self.name
            )));
        }
        Ok(())
    }

    /// Nominal normalized conductance of `level`.
    pub fn level_value(&self, level: usize) -> f64 {
        level as f64 / (self.num_levels - 1) as f64
    }

    pub fn sigma(&self, level: usize) -> Result<f64> {
        self.sigma_per_level.get(level).copied().ok_or_else(|| {
            Error::arg(format!(
                "level {level} out of range for {}-level device {}",
                self.num_levels, self.name
            ))
        })
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma_per_level.iter().copied().fold(0.0, f64::max)
    }

    /// One noisy read of `level`: `level / (L - 1) + eps`, `eps ~ N(0, sigma_level)`.
    pub fn read_level<R: Rng + ?Sized>(&self, level: usize, rng: &mut R) -> Result<f64> {
        let sigma = self.sigma(level)?;
        Ok(self.level_value(level) + sigma * normal(rng))
    }

    /// Draws a deviation for `level` without the nominal value.
    pub fn deviation<R: Rng + ?Sized>(&self, level: usize, rng: &mut R) -> Result<f64> {
        Ok(self.sigma(level)? * normal(rng))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let profile: DeviceProfile = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The five reference devices (RRAM_1, FeFET_2, FeFET_3, RRAM_4, FeFET_6),
/// all treated as 4-level cells.
pub fn builtin_profiles() -> Vec<DeviceProfile> {
    const TABLE: [(&str, [f64; 4]); 5] = [
        ("NVM-1", [0.0100, 0.0100, 0.0100, 0.0100]),
        ("NVM-2", [0.0067, 0.0135, 0.0135, 0.0067]),
        ("NVM-3", [0.0049, 0.0146, 0.0146, 0.0049]),
        ("NVM-4", [0.0038, 0.0151, 0.0151, 0.0038]),
        ("NVM-5", [0.0026, 0.0155, 0.0155, 0.0026]),
    ];
    TABLE
        .iter()
        .map(|(name, sigmas)| DeviceProfile {
            name: (*name).to_string(),
            num_levels: 4,
            sigma_per_level: sigmas.to_vec(),
        })
        .collect()
}

/// Looks up a built-in profile by name, case-insensitively (`nvm-3`, `NVM-3`).
pub fn builtin_profile(name: &str) -> Result<DeviceProfile> {
    builtin_profiles()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::arg(format!("unknown device profile {name:?}")))
}

/// Resolves `spec` as a built-in profile name, falling back to a JSON file path.
pub fn resolve_profile(spec: &str) -> Result<DeviceProfile> {
    match builtin_profile(spec) {
        Ok(p) => Ok(p),
        Err(_) if Path::new(spec).exists() => DeviceProfile::load(Path::new(spec)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationConfig {
    /// Relative to `max|values|`.
    pub global_sigma: f64,
    pub seed: u64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig {
            global_sigma: 0.1,
            seed: 0,
        }
    }
}

impl VariationConfig {
    pub fn none() -> Self {
        VariationConfig {
            global_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.global_sigma.is_finite() && self.global_sigma >= 0.0) {
            return Err(Error::arg(format!(
                "global sigma must be finite and non-negative, got {}",
                self.global_sigma
            )));
        }
        Ok(())
    }
}

/// Returns `v0 + N` with `N_ij ~ N(0, (global_sigma * max|v0|)^2)` i.i.d.
pub fn perturb_values<R: Rng + ?Sized>(
    v0: &Array2<f64>,
    cfg: &VariationConfig,
    rng: &mut R,
) -> Array2<f64> {
    let mut out = v0.clone();
    perturb_in_place(&mut out, cfg.global_sigma, rng);
    out
}

pub(crate) fn perturb_in_place<R: Rng + ?Sized>(values: &mut Array2<f64>, global_sigma: f64, rng: &mut R) {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let std = global_sigma * max_abs;
    if std == 0.0 {
        return;
    }
    values.iter_mut().for_each(|v| *v += std * normal(rng));
}
