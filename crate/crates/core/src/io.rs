//! File formats: run configs, population JSON, sweep CSVs.
//!
//! Every writer goes through [`write_atomic`], so a failed command never
//! leaves a truncated file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{selection_order, SweepRow, SweepTable};
use crate::calibration::calibrate_table1;
use crate::error::{Error, Result};
use crate::factory::{block_types, Chip, Population, RoPair};
use crate::model::{DelayParams, Flavor, RoInstance, RoType, Selection, Speed};
use crate::variation::{ChipSample, VariationParams};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn json_err(origin: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        origin: origin.display().to_string(),
        source,
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(json_err(path))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory value serializes");
    s.push('\n');
    s
}

pub fn load_params(path: &Path) -> Result<DelayParams> {
    let p: DelayParams = read_json(path)?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No variation and no silicon speed-up.
    Presilicon,
    #[default]
    Silicon,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Source<T> {
    Reference(String),
    Inline(T),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    seed: u64,
    #[serde(default)]
    mode: Mode,
    #[serde(default = "default_chips")]
    n_chips: usize,
    #[serde(default)]
    dparams: Option<Source<DelayParams>>,
    #[serde(default)]
    vp: Option<Source<VariationParams>>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    scenario: Option<String>,
}

fn default_chips() -> usize {
    20
}

/// Keyword for the built-in calibration in place of a params file.
pub const BUILTIN_PARAMS: &str = "builtin-table1";

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub n_chips: usize,
    pub dparams: DelayParams,
    pub vp: VariationParams,
    pub output_dir: PathBuf,
    pub scenario: String,
}

impl RunConfig {
    /// Default silicon scenario on the built-in calibration.
    pub fn builtin(seed: u64) -> Result<Self> {
        Ok(Self {
            seed,
            mode: Mode::Silicon,
            n_chips: default_chips(),
            dparams: calibrate_table1()?.params,
            vp: VariationParams::default(),
            output_dir: PathBuf::from("out"),
            scenario: "default".into(),
        })
    }

    /// Loads a config; file references resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let raw: RunConfigFile = serde_json::from_str(&text).map_err(json_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |r: &str| -> Result<PathBuf> {
            let p = base.join(r);
            if p.is_file() {
                Ok(p)
            } else {
                let msg = format!("referenced by {}", path.display());
                Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, msg),
                ))
            }
        };
        let dparams = match raw.dparams {
            None => calibrate_table1()?.params,
            Some(Source::Reference(r)) if r == BUILTIN_PARAMS => calibrate_table1()?.params,
            Some(Source::Reference(r)) => load_params(&resolve(&r)?)?,
            Some(Source::Inline(p)) => p,
        };
        let vp = match raw.vp {
            None => VariationParams::default(),
            Some(Source::Reference(r)) => read_json(&resolve(&r)?)?,
            Some(Source::Inline(v)) => v,
        };
        let cfg = Self {
            seed: raw.seed,
            mode: raw.mode,
            n_chips: raw.n_chips,
            dparams,
            vp,
            output_dir: raw
                .output_dir
                .map(|d| base.join(d))
                .unwrap_or_else(|| base.join("out")),
            scenario: raw.scenario.unwrap_or_else(|| "unnamed".into()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chips == 0 {
            return Err(Error::invalid("n_chips must be at least 1"));
        }
        self.dparams.validate()?;
        self.effective_vp().validate()
    }

    /// Variation parameters after the mode is applied.
    pub fn effective_vp(&self) -> VariationParams {
        match self.mode {
            Mode::Silicon => self.vp,
            Mode::Presilicon => VariationParams {
                sigma_die: 0.0,
                sigma_local: 0.0,
                silicon_scale: 1.0,
                ..self.vp
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationHeader {
    pub seed: u64,
    pub n_chips: usize,
    pub dparams: DelayParams,
    pub vp: VariationParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub block_id: u32,
    pub k_mux: u8,
    pub speed: Speed,
    pub ref_eps: Vec<f64>,
    pub lle_eps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipRecord {
    pub chip_id: u64,
    pub g_chip: f64,
    pub leakage: f64,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationFile {
    pub header: PopulationHeader,
    pub chips: Vec<ChipRecord>,
}

impl From<&Population> for PopulationFile {
    fn from(pop: &Population) -> Self {
        Self {
            header: PopulationHeader {
                seed: pop.seed,
                n_chips: pop.chips.len(),
                dparams: pop.dparams,
                vp: pop.vp,
            },
            chips: pop
                .chips
                .iter()
                .map(|c| ChipRecord {
                    chip_id: c.chip_id,
                    g_chip: c.sample.g_chip,
                    leakage: c.sample.leakage,
                    blocks: c
                        .blocks
                        .iter()
                        .map(|b| BlockRecord {
                            block_id: b.block_id,
                            k_mux: b.ro_type.k_mux,
                            speed: b.ro_type.speed,
                            ref_eps: b.reference.eps().to_vec(),
                            lle_eps: b.lle.eps().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl PopulationFile {
    pub fn into_population(self, origin: &str) -> Result<Population> {
        let schema = |m: String| Error::schema(origin, m);
        let h = self.header;
        h.dparams.validate()?;
        h.vp.validate()?;
        if h.n_chips != self.chips.len() {
            return Err(schema(format!(
                "header says {} chips, file has {}",
                h.n_chips,
                self.chips.len()
            )));
        }
        let mut chips = Vec::with_capacity(self.chips.len());
        for rec in self.chips {
            let mut blocks = Vec::with_capacity(rec.blocks.len());
            for b in rec.blocks {
                let ro_type = RoType::new(b.k_mux, b.speed)?;
                let reference = RoInstance::new(ro_type.with_flavor(Flavor::Ref), b.ref_eps, rec.g_chip)
                    .map_err(|e| schema(format!("chip {} block {}: {e}", rec.chip_id, b.block_id)))?;
                let lle = RoInstance::new(ro_type.with_flavor(Flavor::Lle), b.lle_eps, rec.g_chip)
                    .map_err(|e| schema(format!("chip {} block {}: {e}", rec.chip_id, b.block_id)))?;
                blocks.push(RoPair::new(b.block_id, ro_type, reference, lle)?);
            }
            let chip = Chip {
                chip_id: rec.chip_id,
                sample: ChipSample {
                    chip_id: rec.chip_id,
                    g_chip: rec.g_chip,
                    leakage: rec.leakage,
                },
                blocks,
            };
            chip.check_composition().map_err(|e| schema(e.to_string()))?;
            chips.push(chip);
        }
        Ok(Population {
            seed: h.seed,
            dparams: h.dparams,
            vp: h.vp,
            chips,
        })
    }
}

pub fn population_to_json(pop: &Population) -> String {
    let mut s = serde_json::to_string(&PopulationFile::from(pop)).expect("population serializes");
    s.push('\n');
    s
}

pub fn load_population(path: &Path) -> Result<Population> {
    let file: PopulationFile = read_json(path)?;
    file.into_population(&path.display().to_string())
}

pub const SWEEP_HEADER: &str = "chip_id,block_id,k_mux,speed,sel_bits,ext_count,f_ref_mhz,f_lle_mhz";

pub fn sweep_file_name(t: &SweepTable) -> String {
    format!(
        "sweep_chip{:03}_block{:03}_{}.csv",
        t.chip_id, t.block_id, t.ro_type
    )
}

pub fn sweep_to_csv(t: &SweepTable) -> String {
    let mut out = String::with_capacity(64 * (t.rows.len() + 1));
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in &t.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.chip_id,
            t.block_id,
            t.ro_type.k_mux,
            t.ro_type.speed,
            r.selection,
            r.selection.ext_count(),
            r.f_ref,
            r.f_lle
        ));
    }
    out
}

/// Parses one sweep CSV holding exactly one block.
pub fn sweep_from_csv(text: &str, origin: &str) -> Result<SweepTable> {
    let err = |line: usize, m: String| Error::schema(format!("{origin}:{line}"), m);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SWEEP_HEADER => {}
        Some((i, h)) => return Err(err(i + 1, format!("bad header `{h}`, expected `{SWEEP_HEADER}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut ident: Option<(u64, u32, RoType)> = None;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(err(n, format!("expected 8 fields, got {}", fields.len())));
        }
        let num = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| err(n, format!("bad {what} `{}`", fields[idx])))
        };
        let chip_id: u64 = fields[0].parse().map_err(|_| err(n, "bad chip_id".into()))?;
        let block_id: u32 = fields[1].parse().map_err(|_| err(n, "bad block_id".into()))?;
        let k: u8 = fields[2].parse().map_err(|_| err(n, "bad k_mux".into()))?;
        let speed: Speed = fields[3].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let ro_type = RoType::new(k, speed).map_err(|e| err(n, e.to_string()))?;
        match ident {
            None => ident = Some((chip_id, block_id, ro_type)),
            Some(id) if id != (chip_id, block_id, ro_type) => {
                return Err(err(n, "file mixes several blocks".into()))
            }
            _ => {}
        }
        let selection = Selection::parse_bits(fields[4]).map_err(|e| err(n, e.to_string()))?;
        if selection.len() != k as usize {
            return Err(err(n, format!("sel_bits `{}` is not {k} bits wide", fields[4])));
        }
        let ext: u32 = fields[5].parse().map_err(|_| err(n, "bad ext_count".into()))?;
        if ext != selection.ext_count() {
            return Err(err(
                n,
                format!("ext_count {ext} disagrees with sel_bits {selection}"),
            ));
        }
        rows.push(SweepRow {
            selection,
            f_ref: num(6, "f_ref_mhz")?,
            f_lle: num(7, "f_lle_mhz")?,
        });
    }
    let (chip_id, block_id, ro_type) = ident.ok_or_else(|| err(2, "no data rows".into()))?;
    let expected = selection_order(ro_type.k_mux)?.len();
    if rows.len() != expected {
        return Err(Error::schema(
            origin,
            format!("{} rows for a {ro_type} block, expected {expected}", rows.len()),
        ));
    }
    let table = SweepTable {
        chip_id,
        block_id,
        ro_type,
        rows,
    };
    table
        .validate()
        .map_err(|e| Error::schema(origin, e.to_string()))?;
    let expected_type = block_types().nth(block_id as usize);
    if expected_type != Some(ro_type) {
        return Err(Error::schema(
            origin,
            format!("block {block_id} cannot be a {ro_type} block in the floorplan"),
        ));
    }
    Ok(table)
}

/// Writes one CSV per table into `dir`, returning the paths in table order.
pub fn write_sweeps(tables: &[SweepTable], dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    tables
        .iter()
        .map(|t| {
            let path = dir.join(sweep_file_name(t));
            write_atomic(&path, sweep_to_csv(t).as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// Reads every `*.csv` in `dir`, in file-name order.
pub fn read_sweeps(dir: &Path) -> Result<Vec<SweepTable>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::schema(
            dir.display().to_string(),
            "no sweep CSV files found",
        ));
    }
    let tables = paths
        .iter()
        .map(|p| sweep_from_csv(&read_to_string(p)?, &p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<(u64, u32)> = tables.iter().map(|t| (t.chip_id, t.block_id)).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::schema(
            dir.display().to_string(),
            format!("chip {} block {} appears twice", w[0].0, w[0].1),
        ));
    }
    Ok(tables)
}
