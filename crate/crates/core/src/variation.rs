//! Process variation and power.
//!
//! Variation has two levels. Every chip draws a global delay factor
//!
//! ```text
//! g_chip = exp(σ_die · z_die) / silicon_scale
//! ```
//!
//! shared by every device on the die, and every device draws its own
//! multiplier `ε = exp(σ_local · z)`. Both are lognormal, so delays stay
//! positive without clamping.
//!
//! Chip leakage follows a four-parameter beta law on `[leak_min, leak_max]`
//! with mean `leak_mean` and standard deviation `leak_sigma`. It is linked to
//! chip speed `1/g_chip` through a Gaussian copula whose correlation is the
//! one a linear model `leakage ≈ leak_mean + leak_slope·(speed − E[speed])`
//! would imply. The marginal therefore keeps its published moments exactly
//! and its support stays bounded.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::inv_beta_reg;

use crate::error::{Error, Result};
use crate::model::RoInstance;
use crate::reference;
use crate::rng::{StreamKey, SLOT_DIE, SLOT_LEAKAGE};

/// Mean frequency ratio between silicon and pre-silicon for the fast 5-MUX
/// reference ring at All-0s.
pub const DEFAULT_SILICON_SCALE: f64 = 897.37 / 720.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationParams {
    /// Std of `ln g_chip`.
    pub sigma_die: f64,
    /// Std of `ln ε` per device.
    pub sigma_local: f64,
    /// Global delay divisor; 1 is the pre-silicon frame.
    pub silicon_scale: f64,
    pub leak_mean: f64,
    pub leak_sigma: f64,
    /// µW per unit of chip speed (`1/g_chip`) deviation.
    pub leak_slope: f64,
    pub leak_min: f64,
    pub leak_max: f64,
    /// Corner reference lines, µW.
    pub p_tt: f64,
    pub p_ff: f64,
    /// Dynamic power per switching device, µW per MHz.
    pub k_dyn: f64,
}

impl Default for VariationParams {
    /// Silicon scenario. `sigma_local` puts the intra-die spread of the fast
    /// 5-MUX ring at ~0.68% of its mean; `sigma_die` keeps the pooled 20-chip
    /// spread under 1%.
    fn default() -> Self {
        Self {
            sigma_die: 0.005,
            sigma_local: 0.016,
            silicon_scale: DEFAULT_SILICON_SCALE,
            leak_mean: reference::LEAKAGE_MEAN_UW,
            leak_sigma: reference::LEAKAGE_SIGMA_UW,
            leak_slope: 7000.0,
            leak_min: 700.0,
            leak_max: 1150.0,
            p_tt: 740.0,
            p_ff: 1080.0,
            k_dyn: 0.003,
        }
    }
}

impl VariationParams {
    /// No variation, no silicon speed-up.
    pub fn presilicon() -> Self {
        Self {
            sigma_die: 0.0,
            sigma_local: 0.0,
            silicon_scale: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.sigma_die,
            self.sigma_local,
            self.silicon_scale,
            self.leak_mean,
            self.leak_sigma,
            self.leak_slope,
            self.leak_min,
            self.leak_max,
            self.p_tt,
            self.p_ff,
            self.k_dyn,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("variation parameters must be finite"));
        }
        if self.sigma_die < 0.0 || self.sigma_local < 0.0 || self.leak_sigma < 0.0 {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        if self.silicon_scale <= 0.0 {
            return Err(Error::invalid("silicon_scale must be positive"));
        }
        if self.leak_mean <= 0.0 {
            return Err(Error::invalid("leak_mean must be positive"));
        }
        if self.k_dyn < 0.0 {
            return Err(Error::invalid("k_dyn must be non-negative"));
        }
        if self.leak_sigma > 0.0 {
            if !(0.0 < self.leak_min && self.leak_min < self.leak_mean && self.leak_mean < self.leak_max) {
                return Err(Error::invalid(
                    "leakage support must satisfy 0 < leak_min < leak_mean < leak_max",
                ));
            }
            let m = (self.leak_mean - self.leak_min) / (self.leak_max - self.leak_min);
            let v = (self.leak_sigma / (self.leak_max - self.leak_min)).powi(2);
            if v >= m * (1.0 - m) {
                return Err(Error::invalid(
                    "leak_sigma too large for the leakage support [leak_min, leak_max]",
                ));
            }
            if self.leak_correlation().abs() > 1.0 {
                return Err(Error::invalid(format!(
                    "leak_slope {} implies |correlation| > 1 with sigma_die {}",
                    self.leak_slope, self.sigma_die
                )));
            }
        }
        Ok(())
    }

    /// Mean chip speed `E[1/g_chip]`.
    pub fn mean_speed(&self) -> f64 {
        self.silicon_scale * (0.5 * self.sigma_die * self.sigma_die).exp()
    }

    /// Std of chip speed `1/g_chip`.
    pub fn speed_sigma(&self) -> f64 {
        let s2 = self.sigma_die * self.sigma_die;
        self.silicon_scale * (s2.exp() * s2.exp_m1()).sqrt()
    }

    /// Correlation between leakage and chip speed.
    pub fn leak_correlation(&self) -> f64 {
        if self.leak_sigma == 0.0 {
            0.0
        } else {
            self.leak_slope * self.speed_sigma() / self.leak_sigma
        }
    }

    /// Beta shape parameters of the normalized leakage.
    fn leak_shape(&self) -> (f64, f64) {
        let m = (self.leak_mean - self.leak_min) / (self.leak_max - self.leak_min);
        let v = (self.leak_sigma / (self.leak_max - self.leak_min)).powi(2);
        let nu = m * (1.0 - m) / v - 1.0;
        (m * nu, (1.0 - m) * nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipSample {
    pub chip_id: u64,
    pub g_chip: f64,
    /// µW.
    pub leakage: f64,
}

/// Chip-global delay factor and leakage, a pure function of `(seed, chip_id)`.
pub fn sample_chip(seed: u64, chip_id: u64, vp: &VariationParams) -> Result<ChipSample> {
    vp.validate()?;
    let z_die = StreamKey::chip_level(seed, chip_id, SLOT_DIE).normal();
    let g_chip = (vp.sigma_die * z_die).exp() / vp.silicon_scale;

    let leakage = if vp.leak_sigma == 0.0 {
        vp.leak_mean
    } else {
        let z_res = StreamKey::chip_level(seed, chip_id, SLOT_LEAKAGE).normal();
        let rho = vp.leak_correlation();
        // Speed rises as z_die falls.
        let z = -rho * z_die + (1.0 - rho * rho).sqrt() * z_res;
        let u = Normal::standard().cdf(z);
        let (a, b) = vp.leak_shape();
        vp.leak_min + (vp.leak_max - vp.leak_min) * inv_beta_reg(a, b, u)
    };
    Ok(ChipSample {
        chip_id,
        g_chip,
        leakage,
    })
}

/// Local multiplier of one device, keyed on the full index tuple.
pub fn sample_device_eps(
    seed: u64,
    chip_id: u64,
    block_id: u64,
    device_index: u64,
    vp: &VariationParams,
) -> f64 {
    if vp.sigma_local == 0.0 {
        return 1.0;
    }
    let key = StreamKey {
        seed,
        chip: chip_id,
        block: block_id,
        slot: device_index,
    };
    (vp.sigma_local * key.normal()).exp()
}

/// Number of devices that switch every cycle. Both inverters of a tunable
/// stage see the stage input, so the count does not depend on the selection.
pub fn toggling_weight(instance: &RoInstance) -> usize {
    instance.config().device_count()
}

/// Dynamic power in µW at oscillation frequency `f_mhz`.
pub fn dynamic_power(instance: &RoInstance, f_mhz: f64, vp: &VariationParams) -> Result<f64> {
    if !(f_mhz.is_finite() && f_mhz > 0.0) {
        return Err(Error::contract(format!(
            "frequency must be positive, got {f_mhz}"
        )));
    }
    Ok(vp.k_dyn * f_mhz * toggling_weight(instance) as f64)
}
