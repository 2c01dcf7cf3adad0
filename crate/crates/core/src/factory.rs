//! Virtual chips laid out like the fabricated die.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DelayParams, Flavor, RoInstance, RoType, Speed};
use crate::variation::{sample_chip, sample_device_eps, ChipSample, VariationParams};

/// Pairs per type, in block order.
pub const FLOORPLAN: [(u8, Speed, usize); 6] = [
    (5, Speed::Slow, 40),
    (6, Speed::Slow, 40),
    (7, Speed::Slow, 36),
    (5, Speed::Fast, 36),
    (6, Speed::Fast, 40),
    (7, Speed::Fast, 32),
];

pub const PAIRS_PER_CHIP: usize = 224;

/// Block types in floorplan order, one entry per pair.
pub fn block_types() -> impl Iterator<Item = RoType> {
    FLOORPLAN
        .iter()
        .flat_map(|&(k_mux, speed, n)| std::iter::repeat_n(RoType { k_mux, speed }, n))
}

/// Device-index offset of the LLE member: the Ref ring uses indices
/// `0..n`, the LLE ring `n..2n` within the block's stream space.
pub fn lle_device_offset(ro_type: RoType) -> u64 {
    ro_type.with_flavor(Flavor::Ref).device_count() as u64
}

/// A Ref and an LLE ring placed side by side. Both carry the chip's `g_chip`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoPair {
    pub block_id: u32,
    pub ro_type: RoType,
    pub reference: RoInstance,
    pub lle: RoInstance,
}

impl RoPair {
    pub fn new(block_id: u32, ro_type: RoType, reference: RoInstance, lle: RoInstance) -> Result<Self> {
        if reference.config() != ro_type.with_flavor(Flavor::Ref)
            || lle.config() != ro_type.with_flavor(Flavor::Lle)
        {
            return Err(Error::contract(format!(
                "pair {block_id} members must be {ro_type} ref and lle"
            )));
        }
        if reference.g_chip().to_bits() != lle.g_chip().to_bits() {
            return Err(Error::contract(format!(
                "pair {block_id} members must share g_chip"
            )));
        }
        Ok(Self {
            block_id,
            ro_type,
            reference,
            lle,
        })
    }

    pub fn member(&self, flavor: Flavor) -> &RoInstance {
        match flavor {
            Flavor::Ref => &self.reference,
            Flavor::Lle => &self.lle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub chip_id: u64,
    pub sample: ChipSample,
    pub blocks: Vec<RoPair>,
}

impl Chip {
    pub fn blocks_of(&self, ro_type: RoType) -> impl Iterator<Item = &RoPair> {
        self.blocks.iter().filter(move |b| b.ro_type == ro_type)
    }

    /// Checks the floorplan composition and block numbering.
    pub fn check_composition(&self) -> Result<()> {
        if self.blocks.len() != PAIRS_PER_CHIP {
            return Err(Error::contract(format!(
                "chip {} has {} pairs, expected {PAIRS_PER_CHIP}",
                self.chip_id,
                self.blocks.len()
            )));
        }
        for (i, (block, expected)) in self.blocks.iter().zip(block_types()).enumerate() {
            if block.block_id as usize != i || block.ro_type != expected {
                return Err(Error::contract(format!(
                    "chip {} block {i} is {} #{}, expected {expected}",
                    self.chip_id, block.ro_type, block.block_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub seed: u64,
    pub dparams: DelayParams,
    pub vp: VariationParams,
    pub chips: Vec<Chip>,
}

impl Population {
    pub fn pair_count(&self) -> usize {
        self.chips.iter().map(|c| c.blocks.len()).sum()
    }

    pub fn chip(&self, chip_id: u64) -> Option<&Chip> {
        self.chips.iter().find(|c| c.chip_id == chip_id)
    }
}

fn sample_instance(
    seed: u64,
    chip_id: u64,
    block_id: u32,
    ro_type: RoType,
    flavor: Flavor,
    g_chip: f64,
    vp: &VariationParams,
) -> Result<RoInstance> {
    let config = ro_type.with_flavor(flavor);
    let offset = match flavor {
        Flavor::Ref => 0,
        Flavor::Lle => lle_device_offset(ro_type),
    };
    let eps = (0..config.device_count() as u64)
        .map(|d| sample_device_eps(seed, chip_id, block_id as u64, offset + d, vp))
        .collect();
    RoInstance::new(config, eps, g_chip)
}

/// One chip with all 224 pairs.
pub fn build_chip(seed: u64, chip_id: u64, dparams: &DelayParams, vp: &VariationParams) -> Result<Chip> {
    dparams.validate()?;
    let sample = sample_chip(seed, chip_id, vp)?;
    let blocks = block_types()
        .enumerate()
        .map(|(i, ro_type)| {
            let block_id = i as u32;
            let reference =
                sample_instance(seed, chip_id, block_id, ro_type, Flavor::Ref, sample.g_chip, vp)?;
            let lle = sample_instance(seed, chip_id, block_id, ro_type, Flavor::Lle, sample.g_chip, vp)?;
            RoPair::new(block_id, ro_type, reference, lle)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Chip {
        chip_id,
        sample,
        blocks,
    })
}

/// Chips `0..n_chips`, built in parallel on the current rayon pool.
pub fn build_population(
    seed: u64,
    n_chips: usize,
    dparams: &DelayParams,
    vp: &VariationParams,
) -> Result<Population> {
    if n_chips == 0 {
        return Err(Error::invalid("n_chips must be at least 1"));
    }
    dparams.validate()?;
    vp.validate()?;
    let chips = (0..n_chips as u64)
        .into_par_iter()
        .map(|id| build_chip(seed, id, dparams, vp))
        .collect::<Result<Vec<_>>>()?;
    Ok(Population {
        seed,
        dparams: *dparams,
        vp: *vp,
        chips,
    })
}
