//! Small descriptive statistics used by the analysis pipeline. Sums run in
//! slice order so results are bit-stable for a given input order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and sample standard deviation with the sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::contract("statistics of an empty sample"));
        }
        let n = xs.len();
        // Shifted by the first sample so a constant input gives sd = 0 exactly.
        let shift = xs[0];
        let d_mean = xs.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let mean = shift + d_mean;
        let sd = if n > 1 {
            let ss = xs.iter().map(|x| (x - shift - d_mean).powi(2)).sum::<f64>();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, sd, n })
    }
}

/// Min, quartiles and max, with the sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl FiveNumber {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::contract("five-number summary of an empty sample"));
        }
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
            n: s.len(),
        })
    }
}

/// Least-squares line `y = intercept + slope·i` over `i = 0..n`.
pub fn fit_line(ys: &[f64]) -> Result<(f64, f64)> {
    if ys.len() < 2 {
        return Err(Error::contract("line fit needs at least two points"));
    }
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok((ybar - slope * xbar, slope))
}

/// D'Agostino-Pearson omnibus test of normality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub statistic: f64,
    pub z_skew: f64,
    pub z_kurtosis: f64,
    pub p_value: f64,
    pub critical_5pct: f64,
    pub rejects_normality: bool,
    pub n: usize,
}

/// χ²₂ upper 5% point.
pub const CHI2_2DOF_5PCT: f64 = 5.991464547107979;

/// Skewness and kurtosis z-scores combined into K² ~ χ²₂. Needs n ≥ 20.
pub fn dagostino_k2(xs: &[f64]) -> Result<NormalityTest> {
    let n = xs.len();
    if n < 20 {
        return Err(Error::contract(format!("normality test needs n >= 20, got {n}")));
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 == 0.0 {
        return Err(Error::contract("normality test on a constant sample"));
    }

    let g1 = m3 / m2.powf(1.5);
    let y = g1 * ((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0))).sqrt();
    let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let ya = y / alpha;
    let z_skew = delta * (ya + (ya * ya + 1.0).sqrt()).ln();

    let b2 = m4 / (m2 * m2);
    let e = 3.0 * (nf - 1.0) / (nf + 1.0);
    let var = 24.0 * nf * (nf - 2.0) * (nf - 3.0) / ((nf + 1.0).powi(2) * (nf + 3.0) * (nf + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = 6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * (6.0 * (nf + 3.0) * (nf + 5.0) / (nf * (nf - 2.0) * (nf - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = ((1.0 - 2.0 / a) / denom).cbrt();
    let z_kurtosis = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let statistic = z_skew * z_skew + z_kurtosis * z_kurtosis;
    Ok(NormalityTest {
        statistic,
        z_skew,
        z_kurtosis,
        p_value: (-statistic / 2.0).exp(),
        critical_5pct: CHI2_2DOF_5PCT,
        rejects_normality: statistic > CHI2_2DOF_5PCT,
        n,
    })
}
