//! Simulation of tunable ring-oscillator pairs whose inverters differ only in
//! well proximity: delay model, calibration, process variation, virtual chips,
//! netlists, measurement-style analysis and file formats.

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod factory;
pub mod io;
pub mod model;
pub mod netlist;
pub mod pipeline;
pub mod reference;
pub mod report;
pub mod rng;
pub mod stats;
pub mod variation;

pub use error::{Error, Result};

/// Guide chapters compiled as doc-tests so the book stays in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/delay-model.md")]
    mod delay_model {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/variation.md")]
    mod variation {}
    #[doc = include_str!("../../../book/src/chips.md")]
    mod chips {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
