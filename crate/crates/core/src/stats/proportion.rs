use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::Interval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Wilson,
    /// Wald interval `p ± z sqrt(p (1 - p) / n)`, clipped to [0, 1].
    Normal,
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidProportion(format!("quantile level {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Two-sided confidence interval for a binomial proportion.
pub fn proportion_ci(k: u64, n: u64, level: f64, method: CiMethod) -> Result<Interval> {
    if n == 0 || k > n {
        return Err(Error::InvalidProportion(format!("{k} successes out of {n}")));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidProportion(format!("level {level}")));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let (lo, hi) = match method {
        CiMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / nf;
            let centre = (p + z2 / (2.0 * nf)) / denom;
            let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
            let lo = if k == 0 { 0.0 } else { centre - half };
            let hi = if k == n { 1.0 } else { centre + half };
            (lo, hi)
        }
        CiMethod::Normal => {
            let half = z * (p * (1.0 - p) / nf).sqrt();
            (p - half, p + half)
        }
    };
    Interval::new(lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}
