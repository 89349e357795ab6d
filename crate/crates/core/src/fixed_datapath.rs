//! Bit-accurate fixed-point model of the inner-product datapath: complex
//! multiplies, Hadamard products and a pipelined fan-in tree sum, with a
//! structural cycle model.
//!
//! Raw values are scaled integers held in `i128`. Products of two words of
//! at most 64 bits fit without loss, so every rounding and overflow step is
//! applied to an exact intermediate.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Floor (drop low bits of the two's-complement value).
    Truncate,
    #[default]
    RoundHalfEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overflow {
    #[default]
    Saturate,
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub word_bits: u32,
    pub frac_bits: u32,
    pub signed: bool,
    pub rounding: Rounding,
    pub overflow: Overflow,
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self::new(18, 12).expect("18.12 is valid")
    }
}

impl FixedPointFormat {
    /// Signed, round-half-even, saturating.
    pub fn new(word_bits: u32, frac_bits: u32) -> Result<Self> {
        let f = Self {
            word_bits,
            frac_bits,
            signed: true,
            rounding: Rounding::RoundHalfEven,
            overflow: Overflow::Saturate,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.overflow = overflow;
        self
    }

    pub fn unsigned(mut self) -> Result<Self> {
        self.signed = false;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let max_word = if self.signed { 64 } else { 63 };
        if !(0 < self.frac_bits && self.frac_bits < self.word_bits && self.word_bits <= max_word) {
            return invalid(format!(
                "fixed-point format needs 0 < frac < word <= {max_word}, got {}.{}",
                self.word_bits, self.frac_bits
            ));
        }
        Ok(())
    }

    pub fn min_raw(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.word_bits - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i128 {
        if self.signed {
            (1i128 << (self.word_bits - 1)) - 1
        } else {
            (1i128 << self.word_bits) - 1
        }
    }

    /// Weight of one least-significant bit.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn to_f64(&self, raw: i128) -> f64 {
        raw as f64 * self.lsb()
    }

    /// Applies the overflow policy; the flag reports an out-of-range input.
    pub fn fit(&self, raw: i128) -> (i128, bool) {
        let (lo, hi) = (self.min_raw(), self.max_raw());
        if (lo..=hi).contains(&raw) {
            return (raw, false);
        }
        let fitted = match self.overflow {
            Overflow::Saturate => raw.clamp(lo, hi),
            Overflow::Wrap => {
                let modulus = 1i128 << self.word_bits;
                let r = raw.rem_euclid(modulus);
                if self.signed && r > hi {
                    r - modulus
                } else {
                    r
                }
            }
        };
        (fitted, true)
    }

    /// Divides an exact value by `2^shift` with this format's rounding.
    pub fn round_shift(&self, value: i128, shift: u32) -> i128 {
        if shift == 0 {
            return value;
        }
        let floor = value >> shift;
        match self.rounding {
            Rounding::Truncate => floor,
            Rounding::RoundHalfEven => {
                let rem = value - (floor << shift);
                let half = 1i128 << (shift - 1);
                if rem > half || (rem == half && floor & 1 == 1) {
                    floor + 1
                } else {
                    floor
                }
            }
        }
    }

    /// Nearest representable raw value per the rounding mode.
    pub fn quantize(&self, x: f64) -> (i128, bool) {
        let scaled = x * (self.frac_bits as f64).exp2();
        let r = match self.rounding {
            Rounding::Truncate => scaled.floor(),
            Rounding::RoundHalfEven => scaled.round_ties_even(),
        };
        // f64 → i128 saturates at the i128 range, well outside any format
        self.fit(r as i128)
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.word_bits, self.frac_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = Error;

    /// `"<word>.<frac>"`, e.g. `"18.12"`.
    fn from_str(s: &str) -> Result<Self> {
        let (w, f) = s
            .split_once('.')
            .ok_or_else(|| Error::InvalidConfig(format!("format `{s}` is not <word>.<frac>")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidConfig(format!("format `{s}` is not <word>.<frac>")))
        };
        Self::new(parse(w)?, parse(f)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FxComplex {
    pub re: i128,
    pub im: i128,
}

impl FxComplex {
    pub fn new(re: i128, im: i128) -> Self {
        Self { re, im }
    }

    pub fn from_complex(z: Complex64, fmt: &FixedPointFormat) -> (Self, u32) {
        let (re, o1) = fmt.quantize(z.re);
        let (im, o2) = fmt.quantize(z.im);
        (Self { re, im }, o1 as u32 + o2 as u32)
    }

    pub fn to_complex(&self, fmt: &FixedPointFormat) -> Complex64 {
        Complex64::new(fmt.to_f64(self.re), fmt.to_f64(self.im))
    }

    /// Exact sign flip of the imaginary part, overflow-handled (only the
    /// most negative signed value can overflow).
    pub fn conj(&self, fmt: &FixedPointFormat) -> (Self, u32) {
        let (im, o) = fmt.fit(-self.im);
        (Self { re: self.re, im }, o as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: u32,
    pub fanin: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: 0,
            fanin: 2,
        }
    }
}

impl PipelineConfig {
    pub fn new(stages: u32, fanin: u32) -> Result<Self> {
        if fanin < 2 {
            return invalid(format!("tree fan-in must be at least 2, got {fanin}"));
        }
        Ok(Self { stages, fanin })
    }

    pub fn validate_for(&self, len: usize) -> Result<()> {
        if self.fanin < 2 {
            return invalid(format!(
                "tree fan-in must be at least 2, got {}",
                self.fanin
            ));
        }
        let depth = tree_depth(len, self.fanin);
        if self.stages > depth + 2 {
            return invalid(format!(
                "{} pipeline stages exceed tree depth {depth} + 2 for length {len}",
                self.stages
            ));
        }
        Ok(())
    }
}

/// `⌈log_fanin(len)⌉`, zero for a single operand.
pub fn tree_depth(len: usize, fanin: u32) -> u32 {
    let mut depth = 0;
    let mut width = 1usize;
    while width < len {
        width = width.saturating_mul(fanin as usize);
        depth += 1;
    }
    depth
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatapathReport {
    pub cycles_latency: u32,
    pub initiation_interval: u32,
    pub throughput: f64,
    pub tree_depth: u32,
    pub max_abs_error: f64,
    /// Largest component magnitude among the summed operands.
    pub max_partial: f64,
    pub overflow_events: u64,
}

impl DatapathReport {
    /// Adder levels are spread over `stages + 1` register-separated
    /// segments; the slowest segment sets the initiation interval.
    fn timing(depth: u32, stages: u32, extra_latency: u32) -> (u32, u32, f64) {
        let ii = depth.div_ceil(stages + 1).max(1);
        (stages + depth + extra_latency, ii, 1.0 / ii as f64)
    }
}

/// Four-multiplier complex product. Partial products are rounded and
/// overflow-handled in the order `a_r b_r`, `a_i b_i`, `a_r b_i`, `a_i b_r`;
/// the real part is `fit(p_rr − p_ii)`, the imaginary part `fit(p_ri + p_ir)`.
/// Returns the product and the number of overflow events.
pub fn fx_complex_mul(a: FxComplex, b: FxComplex, fmt: &FixedPointFormat) -> (FxComplex, u32) {
    let mut events = 0u32;
    let mut partial = |x: i128, y: i128| {
        let (v, o) = fmt.fit(fmt.round_shift(x * y, fmt.frac_bits));
        events += o as u32;
        v
    };
    let p_rr = partial(a.re, b.re);
    let p_ii = partial(a.im, b.im);
    let p_ri = partial(a.re, b.im);
    let p_ir = partial(a.im, b.re);
    let (re, o1) = fmt.fit(p_rr - p_ii);
    let (im, o2) = fmt.fit(p_ri + p_ir);
    (FxComplex { re, im }, events + o1 as u32 + o2 as u32)
}

pub fn fx_hadamard(
    u: &[FxComplex],
    v: &[FxComplex],
    fmt: &FixedPointFormat,
) -> Result<(Vec<FxComplex>, u64)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let mut events = 0u64;
    let out = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            let (p, o) = fx_complex_mul(a, b, fmt);
            events += o as u64;
            p
        })
        .collect();
    Ok((out, events))
}

/// Balanced fan-in reduction. Operands are padded with zeros to
/// `fanin^depth`, grouped left to right, each group summed exactly and the
/// overflow policy applied once per tree node.
pub fn fx_tree_sum(
    v: &[FxComplex],
    fmt: &FixedPointFormat,
    cfg: &PipelineConfig,
) -> Result<(FxComplex, DatapathReport)> {
    tree_sum_with_latency(v, fmt, cfg, 0)
}

fn tree_sum_with_latency(
    v: &[FxComplex],
    fmt: &FixedPointFormat,
    cfg: &PipelineConfig,
    extra_latency: u32,
) -> Result<(FxComplex, DatapathReport)> {
    if v.is_empty() {
        return invalid("tree sum needs at least one operand");
    }
    fmt.validate()?;
    cfg.validate_for(v.len())?;
    let depth = tree_depth(v.len(), cfg.fanin);
    let fanin = cfg.fanin as usize;
    let mut level: Vec<FxComplex> = v.to_vec();
    level.resize(fanin.pow(depth), FxComplex::default());
    let mut events = 0u64;
    while level.len() > 1 {
        level = level
            .chunks(fanin)
            .map(|group| {
                let re: i128 = group.iter().map(|z| z.re).sum();
                let im: i128 = group.iter().map(|z| z.im).sum();
                let (re, o1) = fmt.fit(re);
                let (im, o2) = fmt.fit(im);
                events += o1 as u64 + o2 as u64;
                FxComplex { re, im }
            })
            .collect();
    }
    let result = level[0];
    let exact: Complex64 = v.iter().map(|z| z.to_complex(fmt)).sum();
    let max_partial = v
        .iter()
        .map(|z| fmt.to_f64(z.re).abs().max(fmt.to_f64(z.im).abs()))
        .fold(0.0, f64::max);
    let (cycles_latency, initiation_interval, throughput) =
        DatapathReport::timing(depth, cfg.stages, extra_latency);
    Ok((
        result,
        DatapathReport {
            cycles_latency,
            initiation_interval,
            throughput,
            tree_depth: depth,
            max_abs_error: (result.to_complex(fmt) - exact).norm(),
            max_partial,
            overflow_events: events,
        },
    ))
}

/// `Σ u_k conj(v_k)`: Hadamard product with the exactly conjugated `v`,
/// then the tree sum. The multiplier adds one cycle of latency; the error
/// is measured against the exact complex inner product of the inputs.
pub fn fx_inner_product(
    u: &[FxComplex],
    v: &[FxComplex],
    fmt: &FixedPointFormat,
    cfg: &PipelineConfig,
) -> Result<(FxComplex, DatapathReport)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let mut conj_events = 0u64;
    let vc: Vec<FxComplex> = v
        .iter()
        .map(|z| {
            let (c, o) = z.conj(fmt);
            conj_events += o as u64;
            c
        })
        .collect();
    let (products, mul_events) = fx_hadamard(u, &vc, fmt)?;
    let (result, mut report) = tree_sum_with_latency(&products, fmt, cfg, 1)?;
    let exact: Complex64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| a.to_complex(fmt) * b.to_complex(fmt).conj())
        .sum();
    report.max_abs_error = (result.to_complex(fmt) - exact).norm();
    report.overflow_events += conj_events + mul_events;
    Ok((result, report))
}

/// Quantizes a float vector, returning the values and overflow count.
pub fn quantize_vector(x: &[Complex64], fmt: &FixedPointFormat) -> (Vec<FxComplex>, u64) {
    let mut events = 0u64;
    let v = x
        .iter()
        .map(|&z| {
            let (q, o) = FxComplex::from_complex(z, fmt);
            events += o as u64;
            q
        })
        .collect();
    (v, events)
}

/// `(⌈log₂N⌉ + 2) · 2^{−frac} · max_partial`
pub fn error_bound(len: usize, fmt: &FixedPointFormat, max_partial: f64) -> f64 {
    (tree_depth(len, 2) + 2) as f64 * fmt.lsb() * max_partial
}
