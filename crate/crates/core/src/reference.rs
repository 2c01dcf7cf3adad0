//! Published measurement and simulation values used as fit targets and
//! acceptance anchors.

use crate::model::Speed;

/// Pre-silicon frequencies (MHz) per type: `(k_mux, speed, ref, lle)`.
pub const PRESILICON_MHZ: [(u8, Speed, f64, f64); 6] = [
    (5, Speed::Fast, 720.3, 718.5),
    (6, Speed::Fast, 668.7, 666.0),
    (7, Speed::Fast, 624.5, 621.1),
    (5, Speed::Slow, 65.29, 65.24),
    (6, Speed::Slow, 64.84, 64.81),
    (7, Speed::Slow, 64.41, 64.39),
];

/// Silicon mean/σ (MHz) of the four corner selections for the fast types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerRow {
    pub k_mux: u8,
    pub ref_zeros: (f64, f64),
    pub ref_ones: (f64, f64),
    pub lle_zeros: (f64, f64),
    pub lle_ones: (f64, f64),
}

pub const SILICON_CORNERS: [CornerRow; 3] = [
    CornerRow {
        k_mux: 5,
        ref_zeros: (897.37, 6.09),
        ref_ones: (903.37, 5.34),
        lle_zeros: (894.85, 5.87),
        lle_ones: (902.20, 5.90),
    },
    CornerRow {
        k_mux: 6,
        ref_zeros: (835.60, 3.75),
        ref_ones: (844.08, 3.84),
        lle_zeros: (833.84, 4.15),
        lle_ones: (843.46, 4.51),
    },
    CornerRow {
        k_mux: 7,
        ref_zeros: (786.27, 3.66),
        ref_ones: (793.24, 3.96),
        lle_zeros: (782.83, 3.67),
        lle_ones: (790.72, 4.07),
    },
];

/// Chip leakage over the packaged dies (µW).
pub const LEAKAGE_MEAN_UW: f64 = 849.0;
pub const LEAKAGE_SIGMA_UW: f64 = 77.0;
pub const LEAKAGE_MIN_UW: f64 = 745.0;
pub const LEAKAGE_MAX_UW: f64 = 1072.0;

/// Mean-curve slopes of the fast 5-MUX blocks (MHz per selection index).
pub const SLOPE_LLE_MHZ: f64 = 0.090;
pub const SLOPE_REF_MHZ: f64 = 0.062;

/// Average LLE tuning step (kHz) and ranges (MHz) of the fast 5-MUX blocks.
pub const TUNING_STEP_KHZ: f64 = 90.0;
pub const TUNING_RANGE_LLE_MHZ: f64 = 3.84;
pub const TUNING_RANGE_REF_MHZ: f64 = 1.92;

/// Spread of per-block LLE tuning ranges within one chip (MHz).
pub const BLOCK_RANGE_SPAN_MHZ: (f64, f64) = (3.7, 11.0);

pub fn presilicon(k_mux: u8, speed: Speed) -> Option<(f64, f64)> {
    PRESILICON_MHZ
        .iter()
        .find(|r| r.0 == k_mux && r.1 == speed)
        .map(|r| (r.2, r.3))
}

pub fn silicon_corners(k_mux: u8) -> Option<&'static CornerRow> {
    SILICON_CORNERS.iter().find(|r| r.k_mux == k_mux)
}
