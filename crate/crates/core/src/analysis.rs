//! Measurement-style analysis of simulated pairs: selection sweeps,
//! LLE−Ref differences, tuning range and step, corner statistics and the
//! cross-chip characterization.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factory::{Population, RoPair};
use crate::model::{frequency, DelayParams, RoType, Selection};
use crate::stats::{dagostino_k2, fit_line, FiveNumber, MeanSd, NormalityTest};

/// Selections ordered by number of set bits, then by word value.
pub fn selection_order(k: u8) -> Result<Vec<Selection>> {
    if k == 0 || k > 16 {
        return Err(Error::invalid(format!("selection width {k} out of range")));
    }
    let mut words: Vec<u32> = (0..1u32 << k).collect();
    words.sort_by_key(|w| (w.count_ones(), *w));
    words.into_iter().map(|w| Selection::new(k, w)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub selection: Selection,
    pub f_ref: f64,
    pub f_lle: f64,
}

/// Both members of one pair measured at every selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub chip_id: u64,
    pub block_id: u32,
    pub ro_type: RoType,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Row count, canonical order and positive frequencies.
    pub fn validate(&self) -> Result<()> {
        let order = selection_order(self.ro_type.k_mux)?;
        if self.rows.len() != order.len() {
            return Err(Error::contract(format!(
                "chip {} block {}: {} rows, expected {}",
                self.chip_id,
                self.block_id,
                self.rows.len(),
                order.len()
            )));
        }
        for (row, sel) in self.rows.iter().zip(&order) {
            if row.selection != *sel {
                return Err(Error::contract(format!(
                    "chip {} block {}: selection {} out of canonical order (expected {sel})",
                    self.chip_id, self.block_id, row.selection
                )));
            }
            if !(row.f_ref > 0.0 && row.f_lle > 0.0) {
                return Err(Error::contract(format!(
                    "chip {} block {}: non-positive frequency at {}",
                    self.chip_id, self.block_id, row.selection
                )));
            }
        }
        Ok(())
    }

    pub fn ref_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.f_ref).collect()
    }

    pub fn lle_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.f_lle).collect()
    }

    fn first(&self) -> &SweepRow {
        &self.rows[0]
    }

    fn last(&self) -> &SweepRow {
        &self.rows[self.rows.len() - 1]
    }
}

/// Evaluates both rings of `pair` at every selection in `order`, with the
/// same word applied to both.
pub fn sweep(chip_id: u64, pair: &RoPair, order: &[Selection], params: &DelayParams) -> Result<SweepTable> {
    let rows = order
        .iter()
        .map(|sel| {
            Ok(SweepRow {
                selection: *sel,
                f_ref: frequency(&pair.reference, sel, params)?,
                f_lle: frequency(&pair.lle, sel, params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        chip_id,
        block_id: pair.block_id,
        ro_type: pair.ro_type,
        rows,
    })
}

/// Sweeps every pair of the chosen chips and types, in chip then block order.
pub fn sweep_population(
    pop: &Population,
    chip: Option<u64>,
    ro_type: Option<RoType>,
) -> Result<Vec<SweepTable>> {
    let mut jobs = Vec::new();
    for c in &pop.chips {
        if chip.is_some_and(|id| id != c.chip_id) {
            continue;
        }
        for b in &c.blocks {
            if ro_type.is_some_and(|t| t != b.ro_type) {
                continue;
            }
            jobs.push((c.chip_id, b));
        }
    }
    if let Some(id) = chip {
        if pop.chip(id).is_none() {
            return Err(Error::invalid(format!("chip {id} not in population")));
        }
    }
    jobs.par_iter()
        .map(|(chip_id, pair)| {
            let order = selection_order(pair.ro_type.k_mux)?;
            sweep(*chip_id, pair, &order, &pop.dparams)
        })
        .collect()
}

/// `max − min` of a frequency column.
pub fn tuning_range(freqs: &[f64]) -> Result<f64> {
    if freqs.is_empty() {
        return Err(Error::contract("tuning range of an empty column"));
    }
    let (lo, hi) = freqs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| {
            (lo.min(f), hi.max(f))
        });
    Ok(hi - lo)
}

/// `f_lle − f_ref` per selection, in table order.
pub fn diff_distribution(table: &SweepTable) -> Vec<f64> {
    table.rows.iter().map(|r| r.f_lle - r.f_ref).collect()
}

/// Per-selection means over blocks of one type, with least-squares slopes
/// against the selection index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCurve {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub n_blocks: usize,
    pub mean_ref: Vec<f64>,
    pub mean_lle: Vec<f64>,
    pub intercept_ref: f64,
    pub slope_ref: f64,
    pub intercept_lle: f64,
    pub slope_lle: f64,
}

pub fn mean_freq_vs_selection(tables: &[&SweepTable]) -> Result<MeanCurve> {
    let first = tables
        .first()
        .ok_or_else(|| Error::contract("mean curve needs at least one block"))?;
    let ro_type = first.ro_type;
    if let Some(other) = tables.iter().find(|t| t.ro_type != ro_type) {
        return Err(Error::contract(format!(
            "mixed block types {ro_type} and {}",
            other.ro_type
        )));
    }
    let len = first.rows.len();
    let mut sum_ref = vec![0.0; len];
    let mut sum_lle = vec![0.0; len];
    for t in tables {
        t.validate()?;
        for (i, row) in t.rows.iter().enumerate() {
            sum_ref[i] += row.f_ref;
            sum_lle[i] += row.f_lle;
        }
    }
    let n = tables.len() as f64;
    let mean_ref: Vec<f64> = sum_ref.into_iter().map(|s| s / n).collect();
    let mean_lle: Vec<f64> = sum_lle.into_iter().map(|s| s / n).collect();
    let (intercept_ref, slope_ref) = fit_line(&mean_ref)?;
    let (intercept_lle, slope_lle) = fit_line(&mean_lle)?;
    Ok(MeanCurve {
        ro_type: ro_type.to_string(),
        n_blocks: tables.len(),
        mean_ref,
        mean_lle,
        intercept_ref,
        slope_ref,
        intercept_lle,
        slope_lle,
    })
}

/// Endpoint tuning step `(last − first)/(len − 1)` of a mean curve, in kHz.
pub fn tuning_step_khz(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::contract("tuning step needs at least two points"));
    }
    Ok((curve[curve.len() - 1] - curve[0]) / (curve.len() - 1) as f64 * 1e3)
}

/// The four corner frequencies of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSample {
    pub ref_zeros: f64,
    pub ref_ones: f64,
    pub lle_zeros: f64,
    pub lle_ones: f64,
}

impl CornerSample {
    pub fn of_pair(pair: &RoPair, params: &DelayParams) -> Result<Self> {
        let k = pair.ro_type.k_mux;
        let zeros = Selection::all_zeros(k);
        let ones = Selection::all_ones(k);
        Ok(Self {
            ref_zeros: frequency(&pair.reference, &zeros, params)?,
            ref_ones: frequency(&pair.reference, &ones, params)?,
            lle_zeros: frequency(&pair.lle, &zeros, params)?,
            lle_ones: frequency(&pair.lle, &ones, params)?,
        })
    }

    /// Corners read from the first (All-0s) and last (All-1s) rows.
    pub fn of_table(table: &SweepTable) -> Self {
        Self {
            ref_zeros: table.first().f_ref,
            ref_ones: table.last().f_ref,
            lle_zeros: table.first().f_lle,
            lle_ones: table.last().f_lle,
        }
    }

    /// LLE slowest corner against the Ref fastest corner.
    pub fn characterization(&self) -> f64 {
        self.ref_ones - self.lle_zeros
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Pooled,
    Chip(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CornerStats {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub ref_zeros: MeanSd,
    pub ref_ones: MeanSd,
    pub lle_zeros: MeanSd,
    pub lle_ones: MeanSd,
    /// `Ref All-1s > LLE All-1s > Ref All-0s > LLE All-0s` on the means.
    pub ordering_holds: bool,
}

impl CornerStats {
    /// Matched corners (All-0s, All-1s) where the LLE spread is the larger.
    pub fn lle_sd_exceeds_ref(&self) -> usize {
        (self.lle_zeros.sd > self.ref_zeros.sd) as usize + (self.lle_ones.sd > self.ref_ones.sd) as usize
    }
}

pub fn corner_stats(ro_type: RoType, samples: &[CornerSample]) -> Result<CornerStats> {
    if samples.is_empty() {
        return Err(Error::contract(format!("no {ro_type} blocks to summarize")));
    }
    let col = |f: fn(&CornerSample) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let ref_zeros = MeanSd::of(&col(|s| s.ref_zeros))?;
    let ref_ones = MeanSd::of(&col(|s| s.ref_ones))?;
    let lle_zeros = MeanSd::of(&col(|s| s.lle_zeros))?;
    let lle_ones = MeanSd::of(&col(|s| s.lle_ones))?;
    let ordering_holds =
        ref_ones.mean > lle_ones.mean && lle_ones.mean > ref_zeros.mean && ref_zeros.mean > lle_zeros.mean;
    Ok(CornerStats {
        ro_type: ro_type.to_string(),
        ref_zeros,
        ref_ones,
        lle_zeros,
        lle_ones,
        ordering_holds,
    })
}

/// Corner samples of every `ro_type` pair in scope, chip then block order.
pub fn population_corner_samples(
    pop: &Population,
    ro_type: RoType,
    scope: Scope,
) -> Result<Vec<CornerSample>> {
    let pairs: Vec<&RoPair> = pop
        .chips
        .iter()
        .filter(|c| match scope {
            Scope::Pooled => true,
            Scope::Chip(id) => c.chip_id == id,
        })
        .flat_map(|c| c.blocks_of(ro_type))
        .collect();
    pairs
        .par_iter()
        .map(|p| CornerSample::of_pair(p, &pop.dparams))
        .collect()
}

pub fn population_corner_stats(pop: &Population, ro_type: RoType, scope: Scope) -> Result<CornerStats> {
    corner_stats(ro_type, &population_corner_samples(pop, ro_type, scope)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChipValue {
    pub chip_id: u64,
    pub value: f64,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossChip {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub per_chip: Vec<ChipValue>,
    pub summary: FiveNumber,
}

/// Per chip: mean over its blocks of `f_ref(All-1s) − f_lle(All-0s)`; then a
/// five-number summary over chips.
pub fn cross_chip_characterization(
    ro_type: RoType,
    per_chip: &[(u64, Vec<CornerSample>)],
) -> Result<CrossChip> {
    if per_chip.is_empty() {
        return Err(Error::contract(
            "cross-chip characterization needs at least one chip",
        ));
    }
    let values = per_chip
        .iter()
        .map(|(chip_id, samples)| {
            if samples.is_empty() {
                return Err(Error::contract(format!("chip {chip_id} has no {ro_type} blocks")));
            }
            let diffs: Vec<f64> = samples.iter().map(CornerSample::characterization).collect();
            Ok(ChipValue {
                chip_id: *chip_id,
                value: MeanSd::of(&diffs)?.mean,
                n_blocks: samples.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = FiveNumber::of(&values.iter().map(|v| v.value).collect::<Vec<_>>())?;
    Ok(CrossChip {
        ro_type: ro_type.to_string(),
        per_chip: values,
        summary,
    })
}

pub fn population_cross_chip(pop: &Population, ro_type: RoType) -> Result<CrossChip> {
    let per_chip = pop
        .chips
        .iter()
        .map(|c| {
            Ok((
                c.chip_id,
                population_corner_samples(pop, ro_type, Scope::Chip(c.chip_id))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    cross_chip_characterization(ro_type, &per_chip)
}

/// Groups tables by chip (ascending), keeping only `ro_type`.
pub fn tables_by_chip(tables: &[SweepTable], ro_type: RoType) -> Vec<(u64, Vec<&SweepTable>)> {
    let mut chips: Vec<u64> = tables
        .iter()
        .filter(|t| t.ro_type == ro_type)
        .map(|t| t.chip_id)
        .collect();
    chips.sort_unstable();
    chips.dedup();
    chips
        .into_iter()
        .map(|id| {
            let mut ts: Vec<&SweepTable> = tables
                .iter()
                .filter(|t| t.ro_type == ro_type && t.chip_id == id)
                .collect();
            ts.sort_by_key(|t| t.block_id);
            (id, ts)
        })
        .collect()
}

/// Normality of the LLE−Ref differences pooled over the given tables.
pub fn pooled_diff_normality(tables: &[&SweepTable]) -> Result<NormalityTest> {
    let diffs: Vec<f64> = tables.iter().flat_map(|t| diff_distribution(t)).collect();
    dagostino_k2(&diffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_for_two_bits() {
        let o: Vec<String> = selection_order(2)
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(o, ["00", "01", "10", "11"]);
    }

    #[test]
    fn order_endpoints_and_one_hots() {
        let o = selection_order(5).unwrap();
        assert_eq!(o.len(), 32);
        assert_eq!(o[0].word(), 0);
        assert_eq!(o[31].word(), 31);
        let one_hot: Vec<u32> = o[1..6].iter().map(|s| s.word()).collect();
        assert_eq!(one_hot, [1, 2, 4, 8, 16]);
    }

    #[test]
    fn ranges() {
        assert_eq!(tuning_range(&[7.5]).unwrap(), 0.0);
        assert_eq!(tuning_range(&[10.0, 12.0, 11.0]).unwrap(), 2.0);
        assert!(tuning_range(&[]).is_err());
    }

    #[test]
    fn step_from_table_means() {
        let mut curve = vec![0.0; 32];
        curve[0] = 894.85;
        curve[31] = 902.20;
        let step = tuning_step_khz(&curve).unwrap();
        assert!((step - 7350.0 / 31.0).abs() < 1e-9);
        assert_eq!(tuning_step_khz(&[3.0; 32]).unwrap(), 0.0);
    }

    #[test]
    fn constant_curve_has_zero_slope() {
        let t = RoType::new(5, crate::model::Speed::Fast).unwrap();
        let rows = selection_order(5)
            .unwrap()
            .into_iter()
            .map(|s| SweepRow {
                selection: s,
                f_ref: 100.0,
                f_lle: 100.0,
            })
            .collect();
        let table = SweepTable {
            chip_id: 0,
            block_id: 0,
            ro_type: t,
            rows,
        };
        let c = mean_freq_vs_selection(&[&table]).unwrap();
        assert_eq!(c.slope_ref, 0.0);
        assert_eq!(c.slope_lle, 0.0);
    }

    #[test]
    fn mixed_types_rejected() {
        let mk = |k: u8| SweepTable {
            chip_id: 0,
            block_id: 0,
            ro_type: RoType::new(k, crate::model::Speed::Fast).unwrap(),
            rows: selection_order(k)
                .unwrap()
                .into_iter()
                .map(|s| SweepRow {
                    selection: s,
                    f_ref: 1.0,
                    f_lle: 1.0,
                })
                .collect(),
        };
        let (a, b) = (mk(5), mk(6));
        assert!(matches!(
            mean_freq_vs_selection(&[&a, &b]),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn single_chip_summary_collapses() {
        let t = RoType::new(7, crate::model::Speed::Fast).unwrap();
        let s = CornerSample {
            ref_zeros: 1.0,
            ref_ones: 12.0,
            lle_zeros: 2.0,
            lle_ones: 9.0,
        };
        let cc = cross_chip_characterization(t, &[(4, vec![s, s])]).unwrap();
        assert_eq!(cc.per_chip[0].value, 10.0);
        let f = cc.summary;
        assert!([f.min, f.q1, f.median, f.q3, f.max].iter().all(|v| *v == 10.0));
        assert!(cross_chip_characterization(t, &[]).is_err());
    }
}
