//! Gate-level structure of one ring, serialized as JSON.
//!
//! Loop order: NAND2 (enable) → tunable stages → plain inverters → delay
//! buffers → back to the NAND2. In a tunable stage both inverters hang off
//! the stage input and feed MUX2 inputs `A0` (SHT or BL) and `A1` (EXT or BL).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Flavor, RoConfig, Speed, RING_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum Cell {
    INV_BL,
    INV_SHT,
    INV_EXT,
    MUX2,
    NAND2,
    DELBUF_FAST,
    DELBUF_SLOW,
}

impl Cell {
    pub fn is_inverting(self) -> bool {
        matches!(self, Cell::INV_BL | Cell::INV_SHT | Cell::INV_EXT | Cell::NAND2)
    }

    /// Pins that carry the oscillating signal into the cell.
    fn data_inputs(self) -> &'static [&'static str] {
        match self {
            Cell::MUX2 => &["A0", "A1"],
            // B is the enable.
            Cell::NAND2 => &["A"],
            _ => &["A"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInstance {
    pub name: String,
    pub cell: Cell,
    pub pins: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ports {
    pub enable: String,
    /// `sel[0]` .. `sel[k-1]`.
    pub select: Vec<String>,
    pub output: String,
}

/// Well-layer resize applied to the PMOS of the manipulated inverters,
/// as a fraction of the baseline well size. Informational only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellResize {
    pub sht: f64,
    pub ext: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    pub k_mux: u8,
    pub speed: Speed,
    pub flavor: Flavor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub well_resize: Option<WellResize>,
    pub ports: Ports,
    pub nets: Vec<String>,
    pub instances: Vec<CellInstance>,
}

fn pins(list: &[(&str, &str)]) -> BTreeMap<String, String> {
    list.iter().map(|(p, n)| (p.to_string(), n.to_string())).collect()
}

pub fn emit_netlist(config: RoConfig) -> Netlist {
    let k = config.k();
    let mut instances = Vec::new();
    let mut nets = vec!["en".to_string()];
    let select: Vec<String> = (0..k).map(|i| format!("sel[{i}]")).collect();
    nets.extend(select.iter().cloned());

    let mut loop_nets = 0usize;
    let mut fresh = |nets: &mut Vec<String>| {
        let n = format!("n{loop_nets}");
        loop_nets += 1;
        nets.push(n.clone());
        n
    };

    // The feedback net is named last so it can be wired into the NAND now.
    let ring_len = 1 + k + config.n_nonts() + config.n_del();
    let feedback = format!("n{}", ring_len - 1);

    let osc = fresh(&mut nets);
    instances.push(CellInstance {
        name: "u_nand".into(),
        cell: Cell::NAND2,
        pins: pins(&[("A", &feedback), ("B", "en"), ("Y", &osc)]),
    });
    let mut prev = osc.clone();

    let (inv0, inv1) = match config.flavor {
        Flavor::Ref => (Cell::INV_BL, Cell::INV_BL),
        Flavor::Lle => (Cell::INV_SHT, Cell::INV_EXT),
    };
    for (i, sel) in select.iter().enumerate() {
        let a = format!("ts{i}_a0");
        let b = format!("ts{i}_a1");
        nets.push(a.clone());
        nets.push(b.clone());
        let y = fresh(&mut nets);
        instances.push(CellInstance {
            name: format!("u_ts{i}_inv0"),
            cell: inv0,
            pins: pins(&[("A", &prev), ("Y", &a)]),
        });
        instances.push(CellInstance {
            name: format!("u_ts{i}_inv1"),
            cell: inv1,
            pins: pins(&[("A", &prev), ("Y", &b)]),
        });
        instances.push(CellInstance {
            name: format!("u_ts{i}_mux"),
            cell: Cell::MUX2,
            pins: pins(&[("A0", &a), ("A1", &b), ("S", sel), ("Y", &y)]),
        });
        prev = y;
    }
    for j in 0..config.n_nonts() {
        let y = fresh(&mut nets);
        instances.push(CellInstance {
            name: format!("u_inv{j}"),
            cell: Cell::INV_BL,
            pins: pins(&[("A", &prev), ("Y", &y)]),
        });
        prev = y;
    }
    let del = match config.speed {
        Speed::Fast => Cell::DELBUF_FAST,
        Speed::Slow => Cell::DELBUF_SLOW,
    };
    for j in 0..config.n_del() {
        let y = fresh(&mut nets);
        instances.push(CellInstance {
            name: format!("u_del{j}"),
            cell: del,
            pins: pins(&[("A", &prev), ("Y", &y)]),
        });
        prev = y;
    }
    debug_assert_eq!(prev, feedback);

    Netlist {
        name: format!("ro_{}mux_{}_{}", config.k_mux, config.speed, config.flavor),
        k_mux: config.k_mux,
        speed: config.speed,
        flavor: config.flavor,
        well_resize: (config.flavor == Flavor::Lle).then_some(WellResize {
            sht: -0.28,
            ext: 0.37,
        }),
        ports: Ports {
            enable: "en".into(),
            select,
            output: osc,
        },
        nets,
        instances,
    }
}

impl Netlist {
    pub fn cell_counts(&self) -> BTreeMap<Cell, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.cell).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("netlist serializes");
        s.push('\n');
        s
    }

    /// Walks every signal path from the output net around the loop and
    /// returns the inverting-cell count, which must be the same on all paths.
    pub fn check_ring(&self) -> Result<usize> {
        let driver_count: BTreeMap<&str, usize> = self.instances.iter().fold(BTreeMap::new(), |mut m, i| {
            if let Some(y) = i.pins.get("Y") {
                *m.entry(y.as_str()).or_insert(0) += 1;
            }
            m
        });
        if let Some((net, _)) = driver_count.iter().find(|(_, &n)| n > 1) {
            return Err(Error::contract(format!("net {net} has multiple drivers")));
        }
        let declared: BTreeSet<&str> = self.nets.iter().map(String::as_str).collect();
        for inst in &self.instances {
            if let Some(net) = inst.pins.values().find(|n| !declared.contains(n.as_str())) {
                return Err(Error::contract(format!(
                    "{} uses undeclared net {net}",
                    inst.name
                )));
            }
        }

        let start = self.ports.output.as_str();
        let mut counts = BTreeSet::new();
        // (net, inversions so far, cells visited)
        let mut stack = vec![(start, 0usize, 0usize)];
        while let Some((net, inv, depth)) = stack.pop() {
            if depth > self.instances.len() {
                return Err(Error::contract("signal path does not return to the output"));
            }
            let loads: Vec<&CellInstance> = self
                .instances
                .iter()
                .filter(|i| {
                    i.cell
                        .data_inputs()
                        .iter()
                        .any(|p| i.pins.get(*p).map(String::as_str) == Some(net))
                })
                .collect();
            if loads.is_empty() {
                return Err(Error::contract(format!("net {net} drives nothing: ring is open")));
            }
            for load in loads {
                let out = load
                    .pins
                    .get("Y")
                    .ok_or_else(|| Error::contract(format!("{} has no output", load.name)))?;
                let inv = inv + load.cell.is_inverting() as usize;
                if out == start {
                    counts.insert(inv);
                } else {
                    stack.push((out.as_str(), inv, depth + 1));
                }
            }
        }
        match counts.len() {
            1 => {
                let n = *counts.iter().next().expect("one element");
                if n == RING_STAGES {
                    Ok(n)
                } else {
                    Err(Error::contract(format!(
                        "ring has {n} inverting cells, expected {RING_STAGES}"
                    )))
                }
            }
            _ => Err(Error::contract(format!(
                "inverting-cell count differs between paths: {counts:?}"
            ))),
        }
    }
}
