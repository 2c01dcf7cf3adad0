//! Aggregate report over a set of sweep tables, plus plot-ready figure CSVs.
//!
//! Everything here is computed from sweep tables alone, except the power
//! summary, which needs the population (leakage and `k_dyn`).

use serde::Serialize;

use crate::analysis::{
    corner_stats, cross_chip_characterization, diff_distribution, mean_freq_vs_selection, tables_by_chip,
    tuning_range, tuning_step_khz, CornerSample, CornerStats, CrossChip, MeanCurve, SweepTable,
};
use crate::error::{Error, Result};
use crate::factory::Population;
use crate::model::{frequency, Flavor, RoType, Selection, Speed};
use crate::stats::{dagostino_k2, FiveNumber, MeanSd, NormalityTest};
use crate::variation::dynamic_power;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisOptions {
    /// Chip used for the single-chip figures and curves.
    pub fig_chip: u64,
    /// Type shown in the sweep, difference and box figures.
    pub fig_type: RoType,
    /// Type shown in the cross-chip figure.
    pub cross_type: RoType,
    /// Chip whose 7-MUX pairs feed the dynamic power distributions.
    pub power_chip: u64,
    /// Acceptance band for the endpoint tuning step, in kHz.
    pub step_band_khz: (f64, f64),
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            fig_chip: 2,
            fig_type: RoType {
                k_mux: 5,
                speed: Speed::Fast,
            },
            cross_type: RoType {
                k_mux: 7,
                speed: Speed::Fast,
            },
            power_chip: 12,
            step_band_khz: (45.0, 135.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRange {
    pub chip_id: u64,
    pub block_id: u32,
    #[serde(rename = "type")]
    pub ro_type: String,
    pub n: usize,
    pub range_ref_mhz: f64,
    pub range_lle_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    /// `"pooled"` or `"chip N"`.
    pub scope: String,
    pub n_blocks: usize,
    pub n_points: usize,
    pub slope_ref: f64,
    pub slope_lle: f64,
    pub slope_ratio: f64,
    pub intercept_ref: f64,
    pub intercept_lle: f64,
    /// Endpoint step: (last − first) / (points − 1).
    pub step_ref_khz: f64,
    pub step_lle_khz: f64,
    pub range_ref_mhz: f64,
    pub range_lle_mhz: f64,
}

impl CurveSummary {
    fn of(scope: String, curve: &MeanCurve) -> Result<Self> {
        Ok(Self {
            scope,
            n_blocks: curve.n_blocks,
            n_points: curve.mean_lle.len(),
            slope_ref: curve.slope_ref,
            slope_lle: curve.slope_lle,
            slope_ratio: curve.slope_lle / curve.slope_ref,
            intercept_ref: curve.intercept_ref,
            intercept_lle: curve.intercept_lle,
            step_ref_khz: tuning_step_khz(&curve.mean_ref)?,
            step_lle_khz: tuning_step_khz(&curve.mean_lle)?,
            range_ref_mhz: tuning_range(&curve.mean_ref)?,
            range_lle_mhz: tuning_range(&curve.mean_lle)?,
        })
    }
}

/// LLE-vs-Ref σ over the four (LLE cell, Ref cell) combinations of a type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaComparison {
    pub lle_greater: usize,
    pub cells: usize,
}

impl SigmaComparison {
    pub fn of(c: &CornerStats) -> Self {
        let lle = [c.lle_zeros.sd, c.lle_ones.sd];
        let refs = [c.ref_zeros.sd, c.ref_ones.sd];
        let lle_greater = lle
            .iter()
            .flat_map(|l| refs.iter().map(move |r| (l > r) as usize))
            .sum();
        Self {
            lle_greater,
            cells: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeSummary {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub n_chips: usize,
    pub n_blocks: usize,
    pub corners_pooled: CornerStats,
    pub corners_fig_chip: Option<CornerStats>,
    pub sigma_comparison: SigmaComparison,
    pub cross_chip: CrossChip,
    pub curve_pooled: CurveSummary,
    pub curve_fig_chip: Option<CurveSummary>,
    pub block_range_lle: FiveNumber,
    pub block_range_ref: FiveNumber,
    pub block_range_lle_fig_chip: Option<FiveNumber>,
    pub diff_pooled: FiveNumber,
    pub diff_normality_pooled: Option<NormalityTest>,
    pub diff_normality_fig_chip: Option<NormalityTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tunability {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub scope: String,
    pub slope_ref: f64,
    pub slope_lle: f64,
    pub slope_ratio: f64,
    pub step_lle_khz: f64,
    pub slope_step_lle_khz: f64,
    pub step_band_khz: (f64, f64),
    pub step_in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicSummary {
    #[serde(rename = "type")]
    pub ro_type: String,
    pub flavor: Flavor,
    pub power_uw: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSummary {
    pub leakage_uw: MeanSd,
    pub leakage_range_uw: FiveNumber,
    pub p_tt_uw: f64,
    pub p_ff_uw: f64,
    pub dynamic_chip: u64,
    pub dynamic: Vec<DynamicSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n_tables: usize,
    pub chips: Vec<u64>,
    pub options: AnalysisOptions,
    pub fast_ordering_holds: bool,
    pub tunability: Option<Tunability>,
    pub types: Vec<TypeSummary>,
    pub power: Option<PowerSummary>,
    pub block_ranges: Vec<BlockRange>,
}

fn normality_or_none(xs: &[f64]) -> Option<NormalityTest> {
    dagostino_k2(xs).ok()
}

fn summarize_type(
    tables: &[SweepTable],
    ro_type: RoType,
    opts: &AnalysisOptions,
) -> Result<Option<TypeSummary>> {
    let per_chip = tables_by_chip(tables, ro_type);
    if per_chip.is_empty() {
        return Ok(None);
    }
    let all: Vec<&SweepTable> = per_chip.iter().flat_map(|(_, ts)| ts.iter().copied()).collect();
    let samples: Vec<CornerSample> = all.iter().map(|t| CornerSample::of_table(t)).collect();
    let corners_pooled = corner_stats(ro_type, &samples)?;
    let fig = per_chip
        .iter()
        .find(|(id, _)| *id == opts.fig_chip)
        .map(|(_, ts)| ts);

    let corners_fig_chip = fig
        .map(|ts| {
            let s: Vec<CornerSample> = ts.iter().map(|t| CornerSample::of_table(t)).collect();
            corner_stats(ro_type, &s)
        })
        .transpose()?;
    let cross_input: Vec<(u64, Vec<CornerSample>)> = per_chip
        .iter()
        .map(|(id, ts)| (*id, ts.iter().map(|t| CornerSample::of_table(t)).collect()))
        .collect();
    let cross_chip = cross_chip_characterization(ro_type, &cross_input)?;
    let curve_pooled = CurveSummary::of("pooled".into(), &mean_freq_vs_selection(&all)?)?;
    let curve_fig_chip = fig
        .map(|ts| CurveSummary::of(format!("chip {}", opts.fig_chip), &mean_freq_vs_selection(ts)?))
        .transpose()?;

    let ranges = |ts: &[&SweepTable], f: fn(&SweepTable) -> Vec<f64>| -> Result<Vec<f64>> {
        ts.iter().map(|t| tuning_range(&f(t))).collect()
    };
    let block_range_lle = FiveNumber::of(&ranges(&all, SweepTable::lle_column)?)?;
    let block_range_ref = FiveNumber::of(&ranges(&all, SweepTable::ref_column)?)?;
    let block_range_lle_fig_chip = fig
        .map(|ts| FiveNumber::of(&ranges(ts, SweepTable::lle_column)?))
        .transpose()?;

    let pooled_diffs: Vec<f64> = all.iter().flat_map(|t| diff_distribution(t)).collect();
    let fig_diffs: Option<Vec<f64>> = fig.map(|ts| ts.iter().flat_map(|t| diff_distribution(t)).collect());

    Ok(Some(TypeSummary {
        ro_type: ro_type.to_string(),
        n_chips: per_chip.len(),
        n_blocks: all.len(),
        sigma_comparison: SigmaComparison::of(&corners_pooled),
        corners_pooled,
        corners_fig_chip,
        cross_chip,
        curve_pooled,
        curve_fig_chip,
        block_range_lle,
        block_range_ref,
        block_range_lle_fig_chip,
        diff_pooled: FiveNumber::of(&pooled_diffs)?,
        diff_normality_pooled: normality_or_none(&pooled_diffs),
        diff_normality_fig_chip: fig_diffs.as_deref().and_then(normality_or_none),
    }))
}

/// Selects the chip for single-chip views: the requested one if present,
/// otherwise the lowest chip id in the data.
fn pick_chip(chips: &[u64], wanted: u64) -> u64 {
    if chips.contains(&wanted) {
        wanted
    } else {
        chips[0]
    }
}

fn power_summary(pop: &Population, chip_id: u64) -> Result<PowerSummary> {
    let leak: Vec<f64> = pop.chips.iter().map(|c| c.sample.leakage).collect();
    let chip = pop
        .chip(chip_id)
        .ok_or_else(|| Error::invalid(format!("chip {chip_id} not in population")))?;
    let mut dynamic = Vec::new();
    for speed in [Speed::Fast, Speed::Slow] {
        let ro_type = RoType { k_mux: 7, speed };
        for flavor in [Flavor::Ref, Flavor::Lle] {
            let p = dynamic_powers(chip.blocks_of(ro_type).map(|b| b.member(flavor)), pop)?;
            dynamic.push(DynamicSummary {
                ro_type: ro_type.to_string(),
                flavor,
                power_uw: MeanSd::of(&p)?,
            });
        }
    }
    Ok(PowerSummary {
        leakage_uw: MeanSd::of(&leak)?,
        leakage_range_uw: FiveNumber::of(&leak)?,
        p_tt_uw: pop.vp.p_tt,
        p_ff_uw: pop.vp.p_ff,
        dynamic_chip: chip_id,
        dynamic,
    })
}

/// Dynamic power of each ring at its All-0s frequency.
fn dynamic_powers<'a>(
    rings: impl Iterator<Item = &'a crate::model::RoInstance>,
    pop: &Population,
) -> Result<Vec<f64>> {
    rings
        .map(|r| {
            let f = frequency(r, &Selection::all_zeros(r.config().k_mux), &pop.dparams)?;
            dynamic_power(r, f, &pop.vp)
        })
        .collect()
}

pub fn analyze(
    tables: &[SweepTable],
    pop: Option<&Population>,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    if tables.is_empty() {
        return Err(Error::contract("analysis needs at least one sweep table"));
    }
    for t in tables {
        t.validate()?;
    }
    let mut chips: Vec<u64> = tables.iter().map(|t| t.chip_id).collect();
    chips.sort_unstable();
    chips.dedup();
    let opts = AnalysisOptions {
        fig_chip: pick_chip(&chips, opts.fig_chip),
        ..opts.clone()
    };

    let mut types = Vec::new();
    for ro_type in RoType::all() {
        if let Some(s) = summarize_type(tables, ro_type, &opts)? {
            types.push(s);
        }
    }
    let fast: Vec<&TypeSummary> = types
        .iter()
        .filter(|t| t.ro_type.ends_with(Speed::Fast.as_str()))
        .collect();
    let fast_ordering_holds = fast.len() == 3 && fast.iter().all(|t| t.corners_pooled.ordering_holds);

    let fig_name = opts.fig_type.to_string();
    let tunability = types.iter().find(|t| t.ro_type == fig_name).map(|t| {
        let c = t.curve_fig_chip.as_ref().unwrap_or(&t.curve_pooled);
        Tunability {
            ro_type: fig_name.clone(),
            scope: c.scope.clone(),
            slope_ref: c.slope_ref,
            slope_lle: c.slope_lle,
            slope_ratio: c.slope_ratio,
            step_lle_khz: c.step_lle_khz,
            slope_step_lle_khz: c.slope_lle * 1e3,
            step_band_khz: opts.step_band_khz,
            step_in_band: (opts.step_band_khz.0..=opts.step_band_khz.1).contains(&c.step_lle_khz),
        }
    });

    let power = match pop {
        Some(p) => {
            let ids: Vec<u64> = p.chips.iter().map(|c| c.chip_id).collect();
            Some(power_summary(p, pick_chip(&ids, opts.power_chip))?)
        }
        None => None,
    };

    let block_ranges = tables
        .iter()
        .map(|t| {
            Ok(BlockRange {
                chip_id: t.chip_id,
                block_id: t.block_id,
                ro_type: t.ro_type.to_string(),
                n: t.rows.len(),
                range_ref_mhz: tuning_range(&t.ref_column())?,
                range_lle_mhz: tuning_range(&t.lle_column())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AnalysisReport {
        n_tables: tables.len(),
        chips,
        options: opts,
        fast_ordering_holds,
        tunability,
        types,
        power,
        block_ranges,
    })
}

impl AnalysisReport {
    pub fn type_summary(&self, ro_type: RoType) -> Option<&TypeSummary> {
        let name = ro_type.to_string();
        self.types.iter().find(|t| t.ro_type == name)
    }
}

/// A named CSV file produced by [`figures`].
#[derive(Debug, Clone, PartialEq)]
pub struct FigureFile {
    pub name: String,
    pub contents: String,
}

fn csv(name: &str, header: &str, rows: Vec<String>) -> FigureFile {
    let mut contents = String::from(header);
    contents.push('\n');
    for r in rows {
        contents.push_str(&r);
        contents.push('\n');
    }
    FigureFile {
        name: name.into(),
        contents,
    }
}

fn fig_tables(tables: &[SweepTable], chip: u64, ro_type: RoType) -> Vec<&SweepTable> {
    let mut ts: Vec<&SweepTable> = tables
        .iter()
        .filter(|t| t.chip_id == chip && t.ro_type == ro_type)
        .collect();
    ts.sort_by_key(|t| t.block_id);
    ts
}

/// Plot-ready CSVs. `fig5.csv` is only produced when a population is given.
pub fn figures(
    tables: &[SweepTable],
    report: &AnalysisReport,
    pop: Option<&Population>,
) -> Result<Vec<FigureFile>> {
    let opts = &report.options;
    let ts = fig_tables(tables, opts.fig_chip, opts.fig_type);
    let mut out = Vec::new();

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut c = Vec::new();
    for t in &ts {
        for (i, r) in t.rows.iter().enumerate() {
            let sel = format!("{},{},{}", i, r.selection, r.selection.ext_count());
            a.push(format!("{},{},{},{}", t.block_id, sel, r.f_ref, r.f_lle));
            b.push(format!("{},{},{}", t.block_id, sel, r.f_lle - r.f_ref));
        }
        let d = FiveNumber::of(&diff_distribution(t))?;
        c.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            t.block_id,
            d.n,
            d.min,
            d.q1,
            d.median,
            d.q3,
            d.max,
            tuning_range(&t.ref_column())?,
            tuning_range(&t.lle_column())?
        ));
    }
    out.push(csv(
        "fig6a.csv",
        "block_id,selection_index,sel_bits,ext_count,f_ref_mhz,f_lle_mhz",
        a,
    ));
    out.push(csv(
        "fig6b.csv",
        "block_id,selection_index,sel_bits,ext_count,diff_mhz",
        b,
    ));
    out.push(csv(
        "fig6c.csv",
        "block_id,n,diff_min_mhz,diff_q1_mhz,diff_median_mhz,diff_q3_mhz,diff_max_mhz,range_ref_mhz,range_lle_mhz",
        c,
    ));

    let mut d = Vec::new();
    if !ts.is_empty() {
        let curve = mean_freq_vs_selection(&ts)?;
        for (i, r) in ts[0].rows.iter().enumerate() {
            let x = i as f64;
            d.push(format!(
                "{},{},{},{},{},{},{}",
                i,
                r.selection,
                r.selection.ext_count(),
                curve.mean_ref[i],
                curve.mean_lle[i],
                curve.intercept_ref + curve.slope_ref * x,
                curve.intercept_lle + curve.slope_lle * x
            ));
        }
    }
    out.push(csv(
        "fig6d.csv",
        "selection_index,sel_bits,ext_count,mean_ref_mhz,mean_lle_mhz,fit_ref_mhz,fit_lle_mhz",
        d,
    ));

    let fig7 = report
        .type_summary(opts.cross_type)
        .map(|t| {
            t.cross_chip
                .per_chip
                .iter()
                .map(|v| format!("{},{},{}", v.chip_id, v.n_blocks, v.value))
                .collect()
        })
        .unwrap_or_default();
    out.push(csv(
        "fig7.csv",
        "chip_id,n_blocks,ref_ones_minus_lle_zeros_mhz",
        fig7,
    ));

    if let (Some(pop), Some(power)) = (pop, &report.power) {
        let mut rows = Vec::new();
        for chip in &pop.chips {
            rows.push(format!("leakage,{},,,,,{}", chip.chip_id, chip.sample.leakage));
        }
        rows.push(format!("p_tt,,,,,,{}", pop.vp.p_tt));
        rows.push(format!("p_ff,,,,,,{}", pop.vp.p_ff));
        let chip = pop
            .chip(power.dynamic_chip)
            .ok_or_else(|| Error::contract("power chip missing from population"))?;
        for speed in [Speed::Fast, Speed::Slow] {
            let ro_type = RoType { k_mux: 7, speed };
            for pair in chip.blocks_of(ro_type) {
                for flavor in [Flavor::Ref, Flavor::Lle] {
                    let p = dynamic_powers(std::iter::once(pair.member(flavor)), pop)?[0];
                    rows.push(format!(
                        "dynamic,{},{},{},{},{},{}",
                        chip.chip_id, pair.block_id, ro_type.k_mux, speed, flavor, p
                    ));
                }
            }
        }
        out.push(csv(
            "fig5.csv",
            "series,chip_id,block_id,k_mux,speed,flavor,power_uw",
            rows,
        ));
    }
    Ok(out)
}
