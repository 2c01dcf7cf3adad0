//! Least-squares fit of [`DelayParams`] to target frequencies.
//!
//! The fit runs a damped Gauss-Newton (Levenberg-Marquardt) iteration on the
//! logarithm of every free delay, which keeps the delays positive without
//! bound constraints. The objective is
//!
//! ```text
//! Σ_j w_j · ((f_model,j − f_target,j) / f_target,j)²
//! ```
//!
//! Not every parameter is visible to every target set. Three rules close the
//! remaining directions before the solver sees them:
//!
//! * `d_nand` is tied to `d_inv` (ratio 1 unless overridden);
//! * the WPE multipliers stay at their defaults unless explicitly freed;
//! * when no target drives a select-1 path, `d_mux1` follows from the
//!   LLE/Ref slope ratio of the tuning curves, see [`MuxSplit`].
//!
//! Anything still degenerate after that is reported as
//! [`Error::NonIdentifiable`] instead of returning an arbitrary solution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    nominal_frequency, DelayParams, Flavor, RoConfig, Selection, Speed, DEFAULT_M_EXT, DEFAULT_M_SHT,
};
use crate::reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    DInv,
    MSht,
    MExt,
    DMux0,
    DMux1,
    DNand,
    DDelFast,
    DDelSlow,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::DInv,
        Field::MSht,
        Field::MExt,
        Field::DMux0,
        Field::DMux1,
        Field::DNand,
        Field::DDelFast,
        Field::DDelSlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::DInv => "d_inv",
            Field::MSht => "m_sht",
            Field::MExt => "m_ext",
            Field::DMux0 => "d_mux0",
            Field::DMux1 => "d_mux1",
            Field::DNand => "d_nand",
            Field::DDelFast => "d_del_fast",
            Field::DDelSlow => "d_del_slow",
        }
    }

    pub fn get(self, p: &DelayParams) -> f64 {
        match self {
            Field::DInv => p.d_inv,
            Field::MSht => p.m_sht,
            Field::MExt => p.m_ext,
            Field::DMux0 => p.d_mux0,
            Field::DMux1 => p.d_mux1,
            Field::DNand => p.d_nand,
            Field::DDelFast => p.d_del_fast,
            Field::DDelSlow => p.d_del_slow,
        }
    }

    pub fn set(self, p: &mut DelayParams, v: f64) {
        let slot = match self {
            Field::DInv => &mut p.d_inv,
            Field::MSht => &mut p.m_sht,
            Field::MExt => &mut p.m_ext,
            Field::DMux0 => &mut p.d_mux0,
            Field::DMux1 => &mut p.d_mux1,
            Field::DNand => &mut p.d_nand,
            Field::DDelFast => &mut p.d_del_fast,
            Field::DDelSlow => &mut p.d_del_slow,
        };
        *slot = v;
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown DelayParams field `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub config: RoConfig,
    pub selection: Selection,
    pub mhz: f64,
    pub weight: f64,
}

/// On-disk form of one target.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    /// Number of tunable stages.
    pub config: u8,
    pub speed: Speed,
    pub flavor: Flavor,
    /// Selection word, stage `k-1` first.
    pub selection: String,
    pub mhz: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    entries: Vec<CalibrationTarget>,
}

impl CalibrationTargets {
    pub fn new(entries: Vec<CalibrationTarget>) -> Result<Self> {
        if entries.len() < 4 {
            return Err(Error::NonIdentifiable {
                direction: format!("all parameters (need at least 4 targets, got {})", entries.len()),
            });
        }
        let mut ks: Vec<u8> = entries.iter().map(|t| t.config.k_mux).collect();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() < 2 {
            return Err(Error::NonIdentifiable {
                direction: "d_mux0 (targets must span at least two MUX counts)".into(),
            });
        }
        for t in &entries {
            if !(t.mhz.is_finite() && t.mhz > 0.0) {
                return Err(Error::invalid(format!("target frequency {} not positive", t.mhz)));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::invalid(format!("target weight {} is negative", t.weight)));
            }
            if t.selection.len() != t.config.k() {
                return Err(Error::contract(format!(
                    "target selection {} does not fit {}",
                    t.selection, t.config
                )));
            }
        }
        Ok(Self { entries })
    }

    /// The twelve pre-silicon frequencies; LLE rows are taken at All-0s.
    pub fn table1() -> Self {
        let mut entries = Vec::with_capacity(12);
        for &(k, speed, f_ref, f_lle) in &reference::PRESILICON_MHZ {
            for (flavor, mhz) in [(Flavor::Ref, f_ref), (Flavor::Lle, f_lle)] {
                entries.push(CalibrationTarget {
                    config: RoConfig::new(k, speed, flavor).expect("reference table uses valid k"),
                    selection: Selection::all_zeros(k),
                    mhz,
                    weight: 1.0,
                });
            }
        }
        Self { entries }
    }

    /// Silicon corner means mapped back to the pre-silicon frame by dividing
    /// out the global speed-up `silicon_scale`.
    pub fn silicon_means(silicon_scale: f64) -> Result<Self> {
        if !(silicon_scale.is_finite() && silicon_scale > 0.0) {
            return Err(Error::invalid("silicon_scale must be positive"));
        }
        let mut entries = Vec::with_capacity(12);
        for row in &reference::SILICON_CORNERS {
            let k = row.k_mux;
            let corners = [
                (Flavor::Ref, Selection::all_zeros(k), row.ref_zeros.0),
                (Flavor::Ref, Selection::all_ones(k), row.ref_ones.0),
                (Flavor::Lle, Selection::all_zeros(k), row.lle_zeros.0),
                (Flavor::Lle, Selection::all_ones(k), row.lle_ones.0),
            ];
            for (flavor, selection, mhz) in corners {
                entries.push(CalibrationTarget {
                    config: RoConfig::new(k, Speed::Fast, flavor)?,
                    selection,
                    mhz: mhz / silicon_scale,
                    weight: 1.0,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_records(records: &[TargetRecord]) -> Result<Self> {
        let entries = records
            .iter()
            .map(|r| {
                let config = RoConfig::new(r.config, r.speed, r.flavor)?;
                let selection = Selection::parse_bits(&r.selection)?;
                Ok(CalibrationTarget {
                    config,
                    selection,
                    mhz: r.mhz,
                    weight: r.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let records: Vec<TargetRecord> = serde_json::from_str(text).map_err(|source| Error::Json {
            origin: origin.to_string(),
            source,
        })?;
        Self::from_records(&records)
    }

    pub fn to_records(&self) -> Vec<TargetRecord> {
        self.entries
            .iter()
            .map(|t| TargetRecord {
                config: t.config.k_mux,
                speed: t.config.speed,
                flavor: t.config.flavor,
                selection: t.selection.to_bit_string(),
                mhz: t.mhz,
                weight: t.weight,
            })
            .collect()
    }

    /// Concatenates two target sets.
    pub fn merged(mut self, other: &CalibrationTargets) -> Result<Self> {
        self.entries.extend_from_slice(&other.entries);
        Self::new(self.entries)
    }

    /// Forward-model targets: the frequencies `params` produces for the
    /// given configs and selections.
    pub fn synthesize(params: &DelayParams, points: &[(RoConfig, Selection)]) -> Result<Self> {
        let entries = points
            .iter()
            .map(|&(config, selection)| {
                Ok(CalibrationTarget {
                    config,
                    selection,
                    mhz: nominal_frequency(config, &selection, params)?,
                    weight: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[CalibrationTarget] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn uses_select_one(&self) -> bool {
        self.entries.iter().any(|t| t.selection.word() != 0)
    }
}

/// How `d_mux1` is set when no target exercises a select-1 path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuxSplit {
    /// Choose `d_mux0 − d_mux1` so that the per-bit frequency gain of the
    /// LLE ring is `ratio` times that of the Ref ring:
    /// `Δmux = d_inv·(m_sht − m_ext) / (ratio − 1)`.
    SlopeRatio(f64),
    /// Symmetric MUX, `d_mux1 = d_mux0`.
    Equal,
}

impl Default for MuxSplit {
    fn default() -> Self {
        MuxSplit::SlopeRatio(reference::SLOPE_LLE_MHZ / reference::SLOPE_REF_MHZ)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Fields held at a user-supplied value.
    pub fixed: BTreeMap<Field, f64>,
    /// Let the solver move `m_sht` and `m_ext`.
    pub free_wpe: bool,
    /// `d_nand = ratio · d_inv` unless `d_nand` is fixed.
    pub nand_tie: Option<f64>,
    /// `d_del_fast = ratio · d_inv` unless `d_del_fast` is fixed.
    pub del_fast_tie: Option<f64>,
    pub mux_split: MuxSplit,
    /// Convergence bound on the largest relative residual.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed: BTreeMap::new(),
            free_wpe: false,
            nand_tie: Some(1.0),
            del_fast_tie: None,
            mux_split: MuxSplit::default(),
            tol: 1e-3,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub params: DelayParams,
    /// Relative error `(f_model − f_target)/f_target` per target, in target order.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Fields the solver moved.
    pub free: Vec<Field>,
    /// Human-readable account of every field that was not free.
    pub pinned: Vec<String>,
}

impl CalibrationResult {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Starting point for the solver.
pub fn initial_guess() -> DelayParams {
    DelayParams {
        d_inv: 20.0,
        m_sht: DEFAULT_M_SHT,
        m_ext: DEFAULT_M_EXT,
        d_mux0: 50.0,
        d_mux1: 48.0,
        d_nand: 20.0,
        d_del_fast: 150.0,
        d_del_slow: 1200.0,
    }
}

struct Parameterization<'a> {
    opts: &'a FitOptions,
    base: DelayParams,
    free: Vec<Field>,
    derive_mux1: bool,
}

impl<'a> Parameterization<'a> {
    fn new(targets: &CalibrationTargets, opts: &'a FitOptions, init: &DelayParams) -> Result<Self> {
        if !(opts.tol.is_finite() && opts.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be positive, got {}",
                opts.tol
            )));
        }
        for (field, ratio) in [
            (Field::DNand, opts.nand_tie),
            (Field::DDelFast, opts.del_fast_tie),
        ] {
            if let Some(r) = ratio {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::invalid(format!("tie ratio for {field} must be positive")));
                }
            }
        }
        if let MuxSplit::SlopeRatio(r) = opts.mux_split {
            if !(r.is_finite() && r > 1.0) {
                return Err(Error::invalid(format!("slope ratio must exceed 1, got {r}")));
            }
        }
        let mut base = *init;
        for (&field, &v) in &opts.fixed {
            field.set(&mut base, v);
        }
        let derive_mux1 = !opts.fixed.contains_key(&Field::DMux1) && !targets.uses_select_one();
        let free = Field::ALL
            .into_iter()
            .filter(|f| !opts.fixed.contains_key(f))
            .filter(|f| opts.free_wpe || !matches!(f, Field::MSht | Field::MExt))
            .filter(|f| !(*f == Field::DNand && opts.nand_tie.is_some()))
            .filter(|f| !(*f == Field::DDelFast && opts.del_fast_tie.is_some()))
            .filter(|f| !(*f == Field::DMux1 && derive_mux1))
            .collect();
        Ok(Self {
            opts,
            base,
            free,
            derive_mux1,
        })
    }

    fn theta0(&self) -> Result<DVector<f64>> {
        let values = self
            .free
            .iter()
            .map(|f| {
                let v = f.get(&self.base);
                if v.is_finite() && v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::invalid(format!("initial {f} must be positive, got {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }

    fn params_at(&self, theta: &DVector<f64>) -> DelayParams {
        let mut p = self.base;
        for (f, t) in self.free.iter().zip(theta.iter()) {
            f.set(&mut p, t.exp());
        }
        let fixed = &self.opts.fixed;
        if let (Some(r), false) = (self.opts.nand_tie, fixed.contains_key(&Field::DNand)) {
            p.d_nand = r * p.d_inv;
        }
        if let (Some(r), false) = (self.opts.del_fast_tie, fixed.contains_key(&Field::DDelFast)) {
            p.d_del_fast = r * p.d_inv;
        }
        if self.derive_mux1 {
            p.d_mux1 = match self.opts.mux_split {
                MuxSplit::Equal => p.d_mux0,
                MuxSplit::SlopeRatio(r) => p.d_mux0 - p.d_inv * (p.m_sht - p.m_ext) / (r - 1.0),
            };
        }
        p
    }

    fn pinned_report(&self) -> Vec<String> {
        let fixed = &self.opts.fixed;
        let mut out = Vec::new();
        for (&f, v) in fixed {
            out.push(format!("{f} fixed at {v}"));
        }
        if !self.opts.free_wpe {
            for f in [Field::MSht, Field::MExt] {
                if !fixed.contains_key(&f) {
                    out.push(format!("{f} held at {}", f.get(&self.base)));
                }
            }
        }
        if let (Some(r), false) = (self.opts.nand_tie, fixed.contains_key(&Field::DNand)) {
            out.push(format!("d_nand tied to {r}·d_inv"));
        }
        if let (Some(r), false) = (self.opts.del_fast_tie, fixed.contains_key(&Field::DDelFast)) {
            out.push(format!("d_del_fast tied to {r}·d_inv"));
        }
        if self.derive_mux1 {
            out.push(match self.opts.mux_split {
                MuxSplit::Equal => "d_mux1 set equal to d_mux0".to_string(),
                MuxSplit::SlopeRatio(r) => format!(
                    "d_mux1 derived from LLE/Ref slope ratio {r:.4}: d_mux0 - d_inv·(m_sht - m_ext)/({r:.4} - 1)"
                ),
            });
        }
        out
    }
}

/// Weighted relative residuals, or `None` when the point leaves the valid
/// parameter region.
fn weighted_residuals(targets: &CalibrationTargets, p: &DelayParams) -> Option<DVector<f64>> {
    p.validate().ok()?;
    let mut r = DVector::zeros(targets.len());
    for (i, t) in targets.entries().iter().enumerate() {
        let f = nominal_frequency(t.config, &t.selection, p).ok()?;
        r[i] = t.weight.sqrt() * (f - t.mhz) / t.mhz;
    }
    Some(r)
}

fn jacobian(
    targets: &CalibrationTargets,
    param: &Parameterization<'_>,
    theta: &DVector<f64>,
    r0: &DVector<f64>,
) -> DMatrix<f64> {
    const H: f64 = 1e-6;
    let mut j = DMatrix::zeros(targets.len(), theta.len());
    for c in 0..theta.len() {
        let mut up = theta.clone();
        up[c] += H;
        let mut dn = theta.clone();
        dn[c] -= H;
        let ru = weighted_residuals(targets, &param.params_at(&up));
        let rd = weighted_residuals(targets, &param.params_at(&dn));
        let col = match (ru, rd) {
            (Some(u), Some(d)) => (u - d) / (2.0 * H),
            (Some(u), None) => (u - r0) / H,
            (None, Some(d)) => (r0 - d) / H,
            (None, None) => DVector::zeros(targets.len()),
        };
        j.set_column(c, &col);
    }
    j
}

fn check_identifiable(free: &[Field], j: &DMatrix<f64>) -> Result<()> {
    if free.is_empty() {
        return Ok(());
    }
    let norms: Vec<f64> = (0..j.ncols()).map(|c| j.column(c).norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    if let Some(c) = norms.iter().position(|&n| n <= 1e-12 * max_norm.max(1e-300)) {
        return Err(Error::NonIdentifiable {
            direction: format!("{} (no target depends on it)", free[c]),
        });
    }
    let mut scaled = j.clone();
    for (c, n) in norms.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / n);
    }
    let gram = scaled.transpose() * &scaled;
    let eig = SymmetricEigen::new(gram);
    let (imin, lmin) =
        eig.eigenvalues.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc },
        );
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if lmin <= 1e-14 * lmax {
        let v = eig.eigenvectors.column(imin);
        let mut parts: Vec<(f64, Field)> = free
            .iter()
            .zip(v.iter())
            .filter(|(_, c)| c.abs() >= 0.1)
            .map(|(f, c)| (*c, *f))
            .collect();
        parts.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
        let sign = if parts.first().map_or(1.0, |p| p.0) < 0.0 {
            -1.0
        } else {
            1.0
        };
        let direction = parts
            .iter()
            .map(|(c, f)| format!("{:+.3}·log {f}", c * sign))
            .collect::<Vec<_>>()
            .join(" ");
        return Err(Error::NonIdentifiable { direction });
    }
    Ok(())
}

/// Fits the free delay parameters to `targets`.
///
/// Non-convergence is not an error: the result comes back with
/// `converged == false` and the best parameters found.
pub fn fit_delay_params(
    targets: &CalibrationTargets,
    opts: &FitOptions,
    init: &DelayParams,
) -> Result<CalibrationResult> {
    let param = Parameterization::new(targets, opts, init)?;
    let mut theta = param.theta0()?;
    let mut r = weighted_residuals(targets, &param.params_at(&theta)).ok_or_else(|| {
        Error::invalid("initial guess violates DelayParams invariants after ties are applied")
    })?;
    let j0 = jacobian(targets, &param, &theta, &r);
    check_identifiable(&param.free, &j0)?;

    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iterations && !param.free.is_empty() {
        let j = jacobian(targets, &param, &theta, &r);
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * &r;
        if g.amax() < 1e-18 {
            break;
        }
        loop {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += lambda * a[(i, i)].max(1e-12);
            }
            let step = match m.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 4.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                }
            };
            let cand = &theta + &step;
            if let Some(rc) = weighted_residuals(targets, &param.params_at(&cand)) {
                let cc = rc.norm_squared();
                if cc < cost {
                    let gain = cost - cc;
                    theta = cand;
                    r = rc;
                    cost = cc;
                    lambda = (lambda / 3.0).max(1e-15);
                    iterations += 1;
                    if gain <= 1e-16 * cost || step.amax() < 1e-14 || cost < 1e-30 {
                        break 'outer;
                    }
                    break;
                }
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }

    let params = param.params_at(&theta);
    params.validate()?;
    let residuals = targets
        .entries()
        .iter()
        .map(|t| Ok((nominal_frequency(t.config, &t.selection, &params)? - t.mhz) / t.mhz))
        .collect::<Result<Vec<f64>>>()?;
    let max = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(CalibrationResult {
        params,
        converged: max <= opts.tol,
        residuals,
        iterations,
        free: param.free.clone(),
        pinned: param.pinned_report(),
    })
}

/// Default calibration against the built-in pre-silicon table.
pub fn calibrate_table1() -> Result<CalibrationResult> {
    fit_delay_params(
        &CalibrationTargets::table1(),
        &FitOptions::default(),
        &initial_guess(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub flavor: Flavor,
    pub selection: String,
    pub model_mhz: f64,
    pub target_mhz: f64,
    pub rel_error: f64,
}

/// Model frequency against each target.
pub fn residual_report(params: &DelayParams, targets: &CalibrationTargets) -> Result<Vec<ReportRow>> {
    targets
        .entries()
        .iter()
        .map(|t| {
            let model = nominal_frequency(t.config, &t.selection, params)?;
            Ok(ReportRow {
                ro_type: t.config.ro_type().to_string(),
                flavor: t.config.flavor,
                selection: t.selection.to_bit_string(),
                model_mhz: model,
                target_mhz: t.mhz,
                rel_error: (model - t.mhz) / t.mhz,
            })
        })
        .collect()
}

/// The twelve pre-silicon rows (six types × two flavors).
pub fn presilicon_report(params: &DelayParams) -> Result<Vec<ReportRow>> {
    residual_report(params, &CalibrationTargets::table1())
}
