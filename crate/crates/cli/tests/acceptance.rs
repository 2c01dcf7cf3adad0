//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::Value;

use scaller::analysis::{population_corner_stats, population_cross_chip, sweep_population, Scope};
use scaller::calibration::calibrate_table1;
use scaller::factory::{build_chip, build_population, FLOORPLAN, PAIRS_PER_CHIP};
use scaller::io::RunConfig;
use scaller::model::{frequency, DelayParams, RoType, Selection, Speed};
use scaller::reference::{
    silicon_corners, LEAKAGE_MAX_UW, LEAKAGE_MEAN_UW, LEAKAGE_MIN_UW, LEAKAGE_SIGMA_UW, PRESILICON_MHZ,
};
use scaller::report::{analyze, AnalysisOptions};
use scaller::stats::MeanSd;
use scaller::variation::{sample_chip, VariationParams};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    RunConfig::load(&path).expect("default scenario loads")
}

fn fast_types() -> [RoType; 3] {
    [5, 6, 7].map(|k| RoType::new(k, Speed::Fast).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_scaller")
}

fn calibration_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let out = Command::new(bin())
        .args(["calibrate", "--targets", "builtin-table1", "--out", "p.json"])
        .current_dir(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let summary: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let rows = summary["rows"].as_array().ok_or("no rows")?;
    let worst = rows
        .iter()
        .map(|r| r["rel_error"].as_f64().unwrap_or(f64::INFINITY).abs())
        .fold(0.0, f64::max);
    let ok = rows.len() == 12 && worst <= 2e-3 && elapsed < Duration::from_secs(1);
    Ok((
        ok,
        format!(
            "{} rows, max |rel err| {:.4}%, {:.0} ms",
            rows.len(),
            worst * 100.0,
            elapsed.as_secs_f64() * 1e3
        ),
    ))
}

fn structural_constant() -> Outcome {
    let ref_fast: Vec<f64> = PRESILICON_MHZ
        .iter()
        .filter(|r| r.1 == Speed::Fast)
        .map(|r| 1e6 / (2.0 * r.2))
        .collect();
    let fd = (ref_fast[2] - ref_fast[0]) / 2.0;
    let d_mux0 = calibrate_table1().map_err(|e| e.to_string())?.params.d_mux0;
    let ok = (51.0..=56.0).contains(&d_mux0) && rel(d_mux0, fd) < 0.05;
    Ok((ok, format!("d_mux0 {d_mux0:.3} ps, finite difference {fd:.3} ps")))
}

fn silicon_anchoring() -> Outcome {
    let cfg = scenario();
    let pop = scaller::pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    let t = RoType::new(5, Speed::Fast).unwrap();
    let c = population_corner_stats(&pop, t, Scope::Pooled).map_err(|e| e.to_string())?;
    let target = silicon_corners(5).ok_or("no 5mux corners")?;
    let within2 = |sd: f64, want: f64| sd >= want / 2.0 && sd <= want * 2.0;
    let ok = rel(c.ref_zeros.mean, target.ref_zeros.0) <= 0.015
        && rel(c.lle_ones.mean, target.lle_ones.0) <= 0.015
        && within2(c.ref_zeros.sd, target.ref_zeros.1)
        && within2(c.lle_ones.sd, target.lle_ones.1);
    Ok((
        ok,
        format!(
            "Ref All-0s {:.2} (sd {:.2}), LLE All-1s {:.2} (sd {:.2}) over {} chips",
            c.ref_zeros.mean,
            c.ref_zeros.sd,
            c.lle_ones.mean,
            c.lle_ones.sd,
            pop.chips.len()
        ),
    ))
}

fn ordering_property() -> Outcome {
    let cfg = scenario();
    let vp = cfg.effective_vp();
    let t0 = Instant::now();
    // Per seed: whether the full chain held, and each link over the three types.
    let per_seed: Vec<(bool, [usize; 3])> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let pop = build_population(cfg.seed + i, 20, &cfg.dparams, &vp).map_err(|e| e.to_string())?;
            let mut all = true;
            let mut links = [0; 3];
            for t in fast_types() {
                let c = population_corner_stats(&pop, t, Scope::Pooled).map_err(|e| e.to_string())?;
                all &= c.ordering_holds;
                links[0] += (c.ref_ones.mean > c.lle_ones.mean) as usize;
                links[1] += (c.lle_ones.mean > c.ref_zeros.mean) as usize;
                links[2] += (c.ref_zeros.mean > c.lle_zeros.mean) as usize;
            }
            Ok((all, links))
        })
        .collect::<Result<_, String>>()?;
    let elapsed = t0.elapsed();
    let n = per_seed.iter().filter(|s| s.0).count();
    let link = |j: usize| per_seed.iter().map(|s| s.1[j]).sum::<usize>();
    let ok = n >= 95 && elapsed < Duration::from_secs(60);
    Ok((
        ok,
        format!(
            "chain held on {n}/100 seeds; links over 300 seed-types: Ref1>LLE1 {}, LLE1>Ref0 {}, Ref0>LLE0 {}; {:.1} s",
            link(0),
            link(1),
            link(2),
            elapsed.as_secs_f64()
        ),
    ))
}

fn slope_asymmetry() -> Outcome {
    let cfg = scenario();
    let pop = scaller::pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    let opts = AnalysisOptions::default();
    let tables = sweep_population(&pop, None, Some(opts.fig_type)).map_err(|e| e.to_string())?;
    let report = analyze(&tables, Some(&pop), &opts).map_err(|e| e.to_string())?;
    let curve = &report
        .type_summary(opts.fig_type)
        .ok_or("no fig type")?
        .curve_pooled;
    let ok = curve.slope_lle > curve.slope_ref && (1.2..=1.7).contains(&curve.slope_ratio);
    Ok((
        ok,
        format!(
            "slope_lle {:.4} MHz, slope_ref {:.4} MHz, ratio {:.3}",
            curve.slope_lle, curve.slope_ref, curve.slope_ratio
        ),
    ))
}

fn leakage_statistics() -> Outcome {
    let vp = VariationParams::default();
    let seed = scenario().seed;
    let leak: Vec<f64> = (0..100_000u64)
        .into_par_iter()
        .map(|c| sample_chip(seed, c, &vp).map(|s| s.leakage))
        .collect::<scaller::Result<_>>()
        .map_err(|e| e.to_string())?;
    let s = MeanSd::of(&leak).map_err(|e| e.to_string())?;
    let min = leak.iter().copied().fold(f64::INFINITY, f64::min);
    let max = leak.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok = rel(s.mean, LEAKAGE_MEAN_UW) <= 0.02
        && rel(s.sd, LEAKAGE_SIGMA_UW) <= 0.15
        && rel(min, LEAKAGE_MIN_UW) <= 0.10
        && rel(max, LEAKAGE_MAX_UW) <= 0.10;
    Ok((
        ok,
        format!(
            "mean {:.1}, sd {:.1}, min {min:.1}, max {max:.1} uW",
            s.mean, s.sd
        ),
    ))
}

fn monotonicity_oracle() -> Outcome {
    let cfg = scenario();
    let p = cfg.dparams;
    let vp = cfg.effective_vp();
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for i in 0..100u64 {
        let chip = build_chip(cfg.seed, i, &p, &vp).map_err(|e| e.to_string())?;
        // Walk the floorplan so every k and speed is covered.
        let block = &chip.blocks[(i as usize * 37) % PAIRS_PER_CHIP];
        let k = block.ro_type.k_mux;
        let freqs: Vec<f64> = (0..1u32 << k)
            .map(|w| frequency(&block.lle, &Selection::new(k, w).unwrap(), &p))
            .collect::<scaller::Result<_>>()
            .map_err(|e| e.to_string())?;
        let mut ok = true;
        for w in 0..1usize << k {
            for b in 0..k {
                if w & (1 << b) == 0 && freqs[w | (1 << b)] <= freqs[w] {
                    ok = false;
                }
            }
        }
        let argmax = (0..freqs.len())
            .max_by(|&a, &b| freqs[a].total_cmp(&freqs[b]))
            .unwrap();
        if !ok || argmax != freqs.len() - 1 {
            failures.push(format!("chip {i} block {}", block.block_id));
        }
    }
    let elapsed = t0.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(5);
    let listed = if failures.is_empty() {
        String::new()
    } else {
        format!(": {}", failures.join(", "))
    };
    Ok((
        ok,
        format!(
            "{} of 100 instances violate, {:.2} s{listed}",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn pipeline_with_threads(dir: &Path, threads: &str) -> Result<(), String> {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    let steps: [Vec<&str>; 3] = [
        vec!["gen", "--config", cfg.to_str().unwrap(), "--out", "pop.json"],
        vec!["sweep", "--pop", "pop.json", "--out-dir", "sweeps"],
        vec![
            "analyze",
            "--in",
            "sweeps",
            "--pop",
            "pop.json",
            "--report",
            "report.json",
            "--figdir",
            "figures",
        ],
    ];
    for args in steps {
        let out = Command::new(bin())
            .args(&args)
            .env("SCALLER_THREADS", threads)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline_with_threads(a.path(), "1")?;
    pipeline_with_threads(b.path(), "4")?;
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    let differing: Vec<_> = fa
        .iter()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .collect();
    let ok = fa == fb && differing.is_empty();
    Ok((
        ok,
        format!(
            "{} artifacts compared across 1 and 4 threads, {} differ",
            fa.len(),
            differing.len()
        ),
    ))
}

fn degenerate_equivalence() -> Outcome {
    let fitted = calibrate_table1().map_err(|e| e.to_string())?.params;
    let d_mux = (fitted.d_mux0 + fitted.d_mux1) / 2.0;
    let p = DelayParams {
        m_sht: 1.0,
        m_ext: 1.0,
        d_mux0: d_mux,
        d_mux1: d_mux,
        ..fitted
    };
    let seed = scenario().seed;

    // Matched devices: every diff of every sweep must vanish.
    let matched = VariationParams {
        sigma_local: 0.0,
        ..VariationParams::default()
    };
    let pop = build_population(seed, 4, &p, &matched).map_err(|e| e.to_string())?;
    let tables = sweep_population(&pop, None, None).map_err(|e| e.to_string())?;
    let nonzero = tables
        .iter()
        .flat_map(|t| t.rows.iter())
        .filter(|r| r.f_ref - r.f_lle != 0.0)
        .count();
    let rows: usize = tables.iter().map(|t| t.rows.len()).sum();

    // Default variation: cross-chip value within sampling noise of zero.
    let pop = build_population(seed, 20, &p, &VariationParams::default()).map_err(|e| e.to_string())?;
    let mut worst_z: f64 = 0.0;
    for t in fast_types() {
        let cc = population_cross_chip(&pop, t).map_err(|e| e.to_string())?;
        let values: Vec<f64> = cc.per_chip.iter().map(|v| v.value).collect();
        let s = MeanSd::of(&values).map_err(|e| e.to_string())?;
        worst_z = worst_z.max(s.mean.abs() / (s.sd / (values.len() as f64).sqrt()));
    }
    let ok = nonzero == 0 && worst_z < 3.0;
    Ok((
        ok,
        format!(
            "{nonzero} of {rows} diffs nonzero with matched devices; cross-chip |mean|/SE max {worst_z:.2}"
        ),
    ))
}

fn composition() -> Outcome {
    let cfg = scenario();
    let pop =
        build_population(cfg.seed, 100, &cfg.dparams, &cfg.effective_vp()).map_err(|e| e.to_string())?;
    let mut bad = 0;
    for chip in &pop.chips {
        let counts_ok = FLOORPLAN
            .iter()
            .all(|&(k, speed, n)| chip.blocks_of(RoType::new(k, speed).unwrap()).count() == n);
        let slow = chip
            .blocks
            .iter()
            .filter(|b| b.ro_type.speed == Speed::Slow)
            .count();
        if chip.check_composition().is_err() || chip.blocks.len() != 224 || slow != 116 || !counts_ok {
            bad += 1;
        }
    }
    let expected = [
        (5, Speed::Slow, 40),
        (6, Speed::Slow, 40),
        (7, Speed::Slow, 36),
        (5, Speed::Fast, 36),
        (6, Speed::Fast, 40),
        (7, Speed::Fast, 32),
    ];
    let ok = bad == 0 && pop.chips.len() == 100 && FLOORPLAN == expected;
    Ok((
        ok,
        format!("{} chips, {bad} with wrong composition", pop.chips.len()),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("calibration fidelity", calibration_fidelity),
        ("structural constant", structural_constant),
        ("silicon anchoring", silicon_anchoring),
        ("ordering property", ordering_property),
        ("slope asymmetry", slope_asymmetry),
        ("leakage statistics", leakage_statistics),
        ("monotonicity oracle", monotonicity_oracle),
        ("determinism", determinism),
        ("degenerate equivalence", degenerate_equivalence),
        ("composition", composition),
    ];
    // The libtest harness passes flags such as --list; there are no filters here.
    if std::env::args().any(|a| a == "--list") {
        for (name, _) in &criteria {
            println!("{}: test", name.replace(' ', "_"));
        }
        return;
    }
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        let status = if ok { "PASS" } else { "FAIL" };
        println!(
            "{status} criterion {:>2} {name}: {detail} [{:.1} s]",
            i + 1,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
