//! Ring-oscillator topology and the additive stage-delay model.
//!
//! Every oscillator has nine inverting stages: `k` tunable stages (a MUX2 fed
//! by two inverters), `8 - k` plain inverters and the NAND2 enable gate. Fast
//! rings add one non-inverting delay buffer, slow rings add five.
//!
//! The half period is the sum of stage delays along the selected path:
//!
//! ```text
//! D = Σ_TS g·(ε_mux·d_mux(bit) + ε_inv·d_inv·m(variant))
//!   + Σ_nonTS g·ε·d_inv + g·ε·d_nand + Σ_DEL g·ε·d_del(speed)
//! f = 10⁶ / (2·D)   [MHz, with D in ps]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delay ratio of the shortened-well inverter relative to baseline.
pub const DEFAULT_M_SHT: f64 = 1.0286;
/// Delay ratio of the extended-well inverter relative to baseline.
pub const DEFAULT_M_EXT: f64 = 1.0 / 1.0202;

/// Number of inverting stages in every ring.
pub const RING_STAGES: usize = 9;

/// Supported tunable-stage counts.
pub const K_VALUES: [u8; 3] = [5, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InverterVariant {
    Bl,
    Sht,
    Ext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Slow,
    Fast,
}

impl Speed {
    /// Number of delay buffers in the loop.
    pub fn n_del(self) -> usize {
        match self {
            Speed::Fast => 1,
            Speed::Slow => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speed::Fast => "fast",
            Speed::Slow => "slow",
        }
    }
}

impl FromStr for Speed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(Speed::Fast),
            "slow" => Ok(Speed::Slow),
            _ => Err(Error::invalid(format!("unknown speed `{s}`"))),
        }
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Ref,
    Lle,
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Ref => "ref",
            Flavor::Lle => "lle",
        }
    }

    /// Inverter driving MUX input `bit` of a tunable stage.
    pub fn ts_variant(self, bit: bool) -> InverterVariant {
        match (self, bit) {
            (Flavor::Ref, _) => InverterVariant::Bl,
            (Flavor::Lle, false) => InverterVariant::Sht,
            (Flavor::Lle, true) => InverterVariant::Ext,
        }
    }
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ref" => Ok(Flavor::Ref),
            "lle" => Ok(Flavor::Lle),
            _ => Err(Error::invalid(format!("unknown flavor `{s}`"))),
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Calibrated cell delays (picoseconds) and well-proximity multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayParams {
    pub d_inv: f64,
    pub m_sht: f64,
    pub m_ext: f64,
    pub d_mux0: f64,
    pub d_mux1: f64,
    pub d_nand: f64,
    pub d_del_fast: f64,
    pub d_del_slow: f64,
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        let delays = [
            ("d_inv", self.d_inv),
            ("d_mux0", self.d_mux0),
            ("d_mux1", self.d_mux1),
            ("d_nand", self.d_nand),
            ("d_del_fast", self.d_del_fast),
            ("d_del_slow", self.d_del_slow),
        ];
        for (name, v) in delays {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.m_sht.is_finite() && self.m_ext.is_finite() && self.m_ext > 0.0) {
            return Err(Error::invalid("WPE multipliers must be positive and finite"));
        }
        if !(self.m_sht >= 1.0 && 1.0 >= self.m_ext) {
            return Err(Error::invalid(format!(
                "expected m_sht >= 1 >= m_ext, got m_sht={} m_ext={}",
                self.m_sht, self.m_ext
            )));
        }
        if self.d_mux1 > self.d_mux0 {
            return Err(Error::invalid(format!(
                "select-1 path must not be slower: d_mux1={} > d_mux0={}",
                self.d_mux1, self.d_mux0
            )));
        }
        Ok(())
    }

    pub fn multiplier(&self, variant: InverterVariant) -> f64 {
        match variant {
            InverterVariant::Bl => 1.0,
            InverterVariant::Sht => self.m_sht,
            InverterVariant::Ext => self.m_ext,
        }
    }

    pub fn mux_delay(&self, bit: bool) -> f64 {
        if bit {
            self.d_mux1
        } else {
            self.d_mux0
        }
    }

    pub fn del_delay(&self, speed: Speed) -> f64 {
        match speed {
            Speed::Fast => self.d_del_fast,
            Speed::Slow => self.d_del_slow,
        }
    }

    /// Every delay multiplied by `factor`; multipliers untouched.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d_inv: self.d_inv * factor,
            d_mux0: self.d_mux0 * factor,
            d_mux1: self.d_mux1 * factor,
            d_nand: self.d_nand * factor,
            d_del_fast: self.d_del_fast * factor,
            d_del_slow: self.d_del_slow * factor,
            ..*self
        }
    }
}

/// Block type on the die: tunable-stage count and speed grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoType {
    pub k_mux: u8,
    pub speed: Speed,
}

impl RoType {
    pub fn new(k_mux: u8, speed: Speed) -> Result<Self> {
        if !K_VALUES.contains(&k_mux) {
            return Err(Error::invalid(format!("k_mux must be 5, 6 or 7, got {k_mux}")));
        }
        Ok(Self { k_mux, speed })
    }

    pub fn with_flavor(self, flavor: Flavor) -> RoConfig {
        RoConfig {
            k_mux: self.k_mux,
            speed: self.speed,
            flavor,
        }
    }

    /// All six types in floorplan order (slow first).
    pub fn all() -> impl Iterator<Item = RoType> {
        [Speed::Slow, Speed::Fast]
            .into_iter()
            .flat_map(|speed| K_VALUES.into_iter().map(move |k_mux| RoType { k_mux, speed }))
    }
}

impl fmt::Display for RoType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}mux-{}", self.k_mux, self.speed)
    }
}

impl FromStr for RoType {
    type Err = Error;

    /// Parses `5mux-fast`, `7MUX-slow`, ...
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (k, speed) = lower
            .split_once("mux-")
            .ok_or_else(|| Error::invalid(format!("bad RO type `{s}`, expected e.g. 5mux-fast")))?;
        let k: u8 = k
            .parse()
            .map_err(|_| Error::invalid(format!("bad MUX count in `{s}`")))?;
        RoType::new(k, speed.parse()?)
    }
}

impl Serialize for RoType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Full topology descriptor of one oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoConfig {
    pub k_mux: u8,
    pub speed: Speed,
    pub flavor: Flavor,
}

impl RoConfig {
    pub fn new(k_mux: u8, speed: Speed, flavor: Flavor) -> Result<Self> {
        Ok(RoType::new(k_mux, speed)?.with_flavor(flavor))
    }

    pub fn ro_type(&self) -> RoType {
        RoType {
            k_mux: self.k_mux,
            speed: self.speed,
        }
    }

    pub fn k(&self) -> usize {
        self.k_mux as usize
    }

    pub fn n_nonts(&self) -> usize {
        8 - self.k()
    }

    pub fn n_del(&self) -> usize {
        self.speed.n_del()
    }

    /// Tunable stages, plain inverters and the NAND gate.
    pub fn inverting_stages(&self) -> usize {
        self.k() + self.n_nonts() + 1
    }

    /// Number of delay-contributing devices, i.e. the length of an instance's
    /// variation vector.
    pub fn device_count(&self) -> usize {
        3 * self.k() + self.n_nonts() + 1 + self.n_del()
    }

    // Device layout of the variation vector:
    //   [mux_0, inv0_0, inv1_0, mux_1, ...] [nonts...] [nand] [del...]

    pub fn ts_mux_index(&self, stage: usize) -> usize {
        3 * stage
    }

    pub fn ts_inv_index(&self, stage: usize, bit: bool) -> usize {
        3 * stage + 1 + bit as usize
    }

    pub fn nonts_index(&self, j: usize) -> usize {
        3 * self.k() + j
    }

    pub fn nand_index(&self) -> usize {
        3 * self.k() + self.n_nonts()
    }

    pub fn del_index(&self, j: usize) -> usize {
        self.nand_index() + 1 + j
    }
}

impl fmt::Display for RoConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.ro_type(), self.flavor)
    }
}

/// A `k`-bit tuning word. Bit `i` drives the select line of tunable stage `i`;
/// a set bit picks the EXT inverter (LLE) and the select-1 MUX path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Selection {
    word: u32,
    k: u8,
}

impl Selection {
    pub fn new(k: u8, word: u32) -> Result<Self> {
        if k == 0 || k > 16 {
            return Err(Error::invalid(format!("selection width {k} out of range")));
        }
        if word >> k != 0 {
            return Err(Error::invalid(format!("word {word:#b} wider than {k} bits")));
        }
        Ok(Self { word, k })
    }

    pub fn all_zeros(k: u8) -> Self {
        Self { word: 0, k }
    }

    pub fn all_ones(k: u8) -> Self {
        Self {
            word: (1u32 << k) - 1,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.k as usize
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn word(&self) -> u32 {
        self.word
    }

    pub fn bit(&self, stage: usize) -> bool {
        (self.word >> stage) & 1 == 1
    }

    pub fn ext_count(&self) -> u32 {
        self.word.count_ones()
    }

    pub fn with_bit(&self, stage: usize, value: bool) -> Self {
        let word = if value {
            self.word | (1 << stage)
        } else {
            self.word & !(1 << stage)
        };
        Self { word, k: self.k }
    }

    /// Binary string with stage `k-1` first, so it reads as the word value.
    pub fn to_bit_string(&self) -> String {
        format!("{:0width$b}", self.word, width = self.len())
    }

    pub fn parse_bits(bits: &str) -> Result<Self> {
        if bits.is_empty() || bits.len() > 16 || !bits.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::invalid(format!("bad selection bits `{bits}`")));
        }
        let word = u32::from_str_radix(bits, 2).expect("validated binary digits");
        Self::new(bits.len() as u8, word)
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// A configured oscillator with sampled variation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoInstance {
    config: RoConfig,
    eps: Vec<f64>,
    g_chip: f64,
}

impl RoInstance {
    pub fn new(config: RoConfig, eps: Vec<f64>, g_chip: f64) -> Result<Self> {
        if eps.len() != config.device_count() {
            return Err(Error::invalid(format!(
                "{config} needs {} variation multipliers, got {}",
                config.device_count(),
                eps.len()
            )));
        }
        if let Some(bad) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::invalid(format!("variation multiplier {bad} not positive")));
        }
        if !(g_chip.is_finite() && g_chip > 0.0) {
            return Err(Error::invalid(format!("g_chip {g_chip} not positive")));
        }
        Ok(Self { config, eps, g_chip })
    }

    /// Instance without any variation.
    pub fn nominal(config: RoConfig) -> Self {
        Self {
            config,
            eps: vec![1.0; config.device_count()],
            g_chip: 1.0,
        }
    }

    pub fn config(&self) -> RoConfig {
        self.config
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn g_chip(&self) -> f64 {
        self.g_chip
    }
}

fn check_multiplier(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Delay of one tunable stage: the MUX path picked by `bit` plus the
/// inverter feeding that path.
pub fn stage_delay(
    params: &DelayParams,
    variant: InverterVariant,
    bit: bool,
    eps_mux: f64,
    eps_inv: f64,
    g: f64,
) -> Result<f64> {
    params.validate()?;
    check_multiplier("eps_mux", eps_mux)?;
    check_multiplier("eps_inv", eps_inv)?;
    check_multiplier("g", g)?;
    Ok(ts_delay(params, variant, bit, eps_mux, eps_inv, g))
}

#[inline]
fn ts_delay(p: &DelayParams, variant: InverterVariant, bit: bool, eps_mux: f64, eps_inv: f64, g: f64) -> f64 {
    g * (eps_mux * p.mux_delay(bit) + eps_inv * p.d_inv * p.multiplier(variant))
}

/// Half oscillation period in picoseconds.
pub fn half_period(instance: &RoInstance, sel: &Selection, params: &DelayParams) -> Result<f64> {
    let cfg = instance.config;
    if sel.len() != cfg.k() {
        return Err(Error::contract(format!(
            "selection has {} bits but {cfg} has {} tunable stages",
            sel.len(),
            cfg.k()
        )));
    }
    params.validate()?;
    let eps = &instance.eps;
    let g = instance.g_chip;

    let mut d = 0.0;
    for stage in 0..cfg.k() {
        let bit = sel.bit(stage);
        d += ts_delay(
            params,
            cfg.flavor.ts_variant(bit),
            bit,
            eps[cfg.ts_mux_index(stage)],
            eps[cfg.ts_inv_index(stage, bit)],
            g,
        );
    }
    for j in 0..cfg.n_nonts() {
        d += g * eps[cfg.nonts_index(j)] * params.d_inv;
    }
    d += g * eps[cfg.nand_index()] * params.d_nand;
    let d_del = params.del_delay(cfg.speed);
    for j in 0..cfg.n_del() {
        d += g * eps[cfg.del_index(j)] * d_del;
    }
    Ok(d)
}

/// Converts a half period in picoseconds to MHz.
pub fn half_period_to_mhz(d_ps: f64) -> f64 {
    1e6 / (2.0 * d_ps)
}

/// Oscillation frequency in MHz.
pub fn frequency(instance: &RoInstance, sel: &Selection, params: &DelayParams) -> Result<f64> {
    half_period(instance, sel, params).map(half_period_to_mhz)
}

/// Frequency of a variation-free instance.
pub fn nominal_frequency(config: RoConfig, sel: &Selection, params: &DelayParams) -> Result<f64> {
    frequency(&RoInstance::nominal(config), sel, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DelayParams {
        DelayParams {
            d_inv: 10.0,
            m_sht: DEFAULT_M_SHT,
            m_ext: DEFAULT_M_EXT,
            d_mux0: 50.0,
            d_mux1: 48.0,
            d_nand: 12.0,
            d_del_fast: 200.0,
            d_del_slow: 1400.0,
        }
    }

    #[test]
    fn sht_stage_delay_by_hand() {
        let d = stage_delay(&params(), InverterVariant::Sht, false, 1.0, 1.0, 1.0).unwrap();
        assert!((d - 60.286).abs() < 1e-12);
    }

    #[test]
    fn bl_stage_is_mux_plus_inverter() {
        let mut p = params();
        p.m_sht = 7.0;
        for bit in [false, true] {
            let d = stage_delay(&p, InverterVariant::Bl, bit, 1.0, 1.0, 1.0).unwrap();
            assert_eq!(d, p.mux_delay(bit) + p.d_inv);
        }
    }

    #[test]
    fn degenerate_wpe_makes_variants_equal() {
        let mut p = params();
        p.m_sht = 1.0;
        p.m_ext = 1.0;
        for bit in [false, true] {
            let a = stage_delay(&p, InverterVariant::Sht, bit, 1.1, 0.9, 1.2).unwrap();
            let b = stage_delay(&p, InverterVariant::Ext, bit, 1.1, 0.9, 1.2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_positive_inputs_rejected() {
        let p = params();
        assert!(stage_delay(&p, InverterVariant::Bl, false, 0.0, 1.0, 1.0).is_err());
        assert!(stage_delay(&p, InverterVariant::Bl, false, 1.0, -1.0, 1.0).is_err());
        assert!(stage_delay(&p, InverterVariant::Bl, false, 1.0, 1.0, 0.0).is_err());
        let mut bad = p;
        bad.d_nand = 0.0;
        assert!(matches!(
            stage_delay(&bad, InverterVariant::Bl, false, 1.0, 1.0, 1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn every_config_has_nine_inverting_stages() {
        for t in RoType::all() {
            for flavor in [Flavor::Ref, Flavor::Lle] {
                let c = t.with_flavor(flavor);
                assert_eq!(c.inverting_stages(), RING_STAGES);
                assert_eq!(c.inverting_stages() % 2, 1);
                assert!(matches!(c.n_del(), 1 | 5));
            }
        }
    }

    #[test]
    fn selection_length_mismatch_is_contract_violation() {
        let c = RoConfig::new(5, Speed::Fast, Flavor::Lle).unwrap();
        let err = half_period(&RoInstance::nominal(c), &Selection::all_zeros(6), &params());
        assert!(matches!(err, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn one_more_mux_adds_d_mux0() {
        let p = params();
        let five = RoConfig::new(5, Speed::Fast, Flavor::Ref).unwrap();
        let six = RoConfig::new(6, Speed::Fast, Flavor::Ref).unwrap();
        let d5 = half_period(&RoInstance::nominal(five), &Selection::all_zeros(5), &p).unwrap();
        let d6 = half_period(&RoInstance::nominal(six), &Selection::all_zeros(6), &p).unwrap();
        assert!((d6 - d5 - p.d_mux0).abs() < 1e-9);
    }

    #[test]
    fn slow_minus_fast_is_del_difference() {
        let p = params();
        for flavor in [Flavor::Ref, Flavor::Lle] {
            let sel = Selection::new(6, 0b101101).unwrap();
            let fast = RoConfig::new(6, Speed::Fast, flavor).unwrap();
            let slow = RoConfig::new(6, Speed::Slow, flavor).unwrap();
            let df = half_period(&RoInstance::nominal(fast), &sel, &p).unwrap();
            let ds = half_period(&RoInstance::nominal(slow), &sel, &p).unwrap();
            assert!((ds - df - (5.0 * p.d_del_slow - p.d_del_fast)).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_delays_halves_frequency() {
        let p = params();
        let c = RoConfig::new(7, Speed::Slow, Flavor::Lle).unwrap();
        let sel = Selection::new(7, 0b0110011).unwrap();
        let f1 = nominal_frequency(c, &sel, &p).unwrap();
        let f2 = nominal_frequency(c, &sel, &p.scaled(2.0)).unwrap();
        assert!((f1 / 2.0 - f2).abs() <= 1e-12 * f1);
    }

    #[test]
    fn selection_bits_round_trip() {
        let s = Selection::new(5, 0b00110).unwrap();
        assert_eq!(s.to_bit_string(), "00110");
        assert!(s.bit(1) && s.bit(2) && !s.bit(0));
        assert_eq!(Selection::parse_bits("00110").unwrap(), s);
        assert!(Selection::parse_bits("0012").is_err());
        assert!(Selection::new(5, 32).is_err());
    }

    #[test]
    fn ro_type_parsing() {
        let t: RoType = "7MUX-Slow".parse().unwrap();
        assert_eq!(t, RoType::new(7, Speed::Slow).unwrap());
        assert_eq!(t.to_string(), "7mux-slow");
        assert!("4mux-fast".parse::<RoType>().is_err());
        assert!("fast".parse::<RoType>().is_err());
    }

    #[test]
    fn instance_rejects_wrong_eps_count() {
        let c = RoConfig::new(5, Speed::Fast, Flavor::Ref).unwrap();
        assert_eq!(c.device_count(), 20);
        assert!(RoInstance::new(c, vec![1.0; 19], 1.0).is_err());
        assert!(RoInstance::new(c, vec![1.0; 20], 1.0).is_ok());
        let mut eps = vec![1.0; 20];
        eps[3] = 0.0;
        assert!(RoInstance::new(c, eps, 1.0).is_err());
    }
}
