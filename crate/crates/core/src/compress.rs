//! Compression operators, their declared contracts and bit accounting.
//!
//! A [`Compressor`] maps `x ∈ R^p` to a randomized estimate of `x`. Each
//! operator declares one of two contract classes:
//!
//! * `Unbiased(C)`: `E[C(x)] = x` and `E‖C(x) − x‖² ≤ C‖x‖²`;
//! * `Biased(δ)`: `E‖C(x) − x‖² ≤ (1 − δ)‖x‖²`.
//!
//! A biased operator can be turned into an unbiased one with
//! [`Compressor::compose`], which evaluates `C₁(x) + C₂(x − C₁(x))` and carries
//! the contract `Unbiased(C₂(1 − δ₁))`.
//!
//! Bit costs follow a fixed accounting model (no real wire format): sparse
//! operators pay `K·(32 + ⌈log₂ p⌉)` bits, the `b`-bit quantizer `p·b + 32`,
//! and uncompressed vectors `32·p`. A composed message pays for both stages.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bits charged for one real value.
pub const FLOAT_BITS: u64 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CompressError {
    #[error("vector has dimension {got}, compressor expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate budget K must be at least 1")]
    ZeroBudget,
    #[error("coordinate budget K = {k} exceeds dimension {p}")]
    BudgetTooLarge { k: usize, p: usize },
    #[error("quantizer bit width must lie in [1, 31], got {0}")]
    BadBitWidth(u32),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("composition needs a biased first stage and an unbiased second stage")]
    ContractMismatch,
    #[error("composed stages act on dimensions {0} and {1}")]
    StageDimensions(usize, usize),
    #[error("contract estimate needs a nonzero input")]
    ZeroInput,
    #[error("contract estimate needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("composed outputs cannot be re-encoded from the summed vector; use Compressor::compress")]
    NotEncodable,
}

pub type Result<T> = std::result::Result<T, CompressError>;

/// Declared contract class of a compressor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Contract {
    Unbiased(f64),
    Biased(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CompressorKind {
    Identity,
    TopK(usize),
    RandK(usize),
    ScaledRandK(usize),
    Quantize(u32),
    Composed { biased: Box<Compressor>, unbiased: Box<Compressor> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Compressor {
    dim: usize,
    kind: CompressorKind,
}

impl Compressor {
    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(dim, CompressorKind::Identity)
    }

    pub fn top_k(dim: usize, k: usize) -> Result<Self> {
        Self::new(dim, CompressorKind::TopK(k))
    }

    pub fn rand_k(dim: usize, k: usize) -> Result<Self> {
        Self::new(dim, CompressorKind::RandK(k))
    }

    pub fn scaled_rand_k(dim: usize, k: usize) -> Result<Self> {
        Self::new(dim, CompressorKind::ScaledRandK(k))
    }

    pub fn quantize(dim: usize, bits: u32) -> Result<Self> {
        Self::new(dim, CompressorKind::Quantize(bits))
    }

    /// `x ↦ C₁(x) + C₂(x − C₁(x))` for a biased `C₁` and unbiased `C₂`.
    pub fn compose(biased: Compressor, unbiased: Compressor) -> Result<Self> {
        if biased.dim != unbiased.dim {
            return Err(CompressError::StageDimensions(biased.dim, unbiased.dim));
        }
        if biased.delta().is_none() || !unbiased.is_unbiased() {
            return Err(CompressError::ContractMismatch);
        }
        Ok(Compressor {
            dim: biased.dim,
            kind: CompressorKind::Composed { biased: Box::new(biased), unbiased: Box::new(unbiased) },
        })
    }

    fn new(dim: usize, kind: CompressorKind) -> Result<Self> {
        if dim == 0 {
            return Err(CompressError::ZeroDimension);
        }
        match kind {
            CompressorKind::TopK(k) | CompressorKind::RandK(k) | CompressorKind::ScaledRandK(k) => {
                if k == 0 {
                    return Err(CompressError::ZeroBudget);
                }
                if k > dim {
                    return Err(CompressError::BudgetTooLarge { k, p: dim });
                }
            }
            CompressorKind::Quantize(b) if !(1..=31).contains(&b) => {
                return Err(CompressError::BadBitWidth(b));
            }
            _ => {}
        }
        Ok(Compressor { dim, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &CompressorKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            CompressorKind::Identity => "identity".into(),
            CompressorKind::TopK(k) => format!("top_k(K={k})"),
            CompressorKind::RandK(k) => format!("rand_k(K={k})"),
            CompressorKind::ScaledRandK(k) => format!("scaled_rand_k(K={k})"),
            CompressorKind::Quantize(b) => format!("quantize(b={b})"),
            CompressorKind::Composed { biased, unbiased } => {
                format!("composed({} + {})", biased.name(), unbiased.name())
            }
        }
    }

    /// Declared contract constant.
    pub fn contract(&self) -> Contract {
        let p = self.dim as f64;
        match &self.kind {
            CompressorKind::Identity => Contract::Unbiased(0.0),
            CompressorKind::TopK(k) | CompressorKind::RandK(k) => Contract::Biased(*k as f64 / p),
            CompressorKind::ScaledRandK(k) => Contract::Unbiased(p / *k as f64 - 1.0),
            CompressorKind::Quantize(b) => {
                // per-coordinate variance s²·f(1−f) with s = ‖x‖∞ 2^{-(b-1)} is at
                // most s²/4 and at most s·|x_i|
                let s = 0.5f64.powi(*b as i32 - 1);
                Contract::Unbiased((p * s * s / 4.0).min(p.sqrt() * s))
            }
            CompressorKind::Composed { biased, unbiased } => {
                let delta = biased.delta().expect("checked in compose");
                let c2 = unbiased.unbiased_constant().expect("checked in compose");
                Contract::Unbiased(c2 * (1.0 - delta))
            }
        }
    }

    pub fn is_unbiased(&self) -> bool {
        matches!(self.contract(), Contract::Unbiased(_))
    }

    /// `C` of an unbiased-class operator.
    pub fn unbiased_constant(&self) -> Option<f64> {
        match self.contract() {
            Contract::Unbiased(c) => Some(c),
            Contract::Biased(_) => None,
        }
    }

    /// `δ` of a biased-class operator; the identity counts as `δ = 1`.
    pub fn delta(&self) -> Option<f64> {
        match (&self.kind, self.contract()) {
            (CompressorKind::Identity, _) => Some(1.0),
            (_, Contract::Biased(d)) => Some(d),
            _ => None,
        }
    }

    /// Bits charged for one message of this compressor.
    pub fn bit_cost(&self) -> u64 {
        let p = self.dim as u64;
        match &self.kind {
            CompressorKind::Identity => FLOAT_BITS * p,
            CompressorKind::TopK(k) | CompressorKind::RandK(k) | CompressorKind::ScaledRandK(k) => {
                *k as u64 * (FLOAT_BITS + index_bits(self.dim))
            }
            CompressorKind::Quantize(b) => p * u64::from(*b) + FLOAT_BITS,
            CompressorKind::Composed { biased, unbiased } => biased.bit_cost() + unbiased.bit_cost(),
        }
    }

    /// Draws `C(x)` from `rng`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.compress(x, rng)?.decode())
    }

    /// Draws `C(x)` and returns it as a message carrying its bit cost.
    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<CompressedMessage> {
        if x.len() != self.dim {
            return Err(CompressError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let payload = match &self.kind {
            CompressorKind::Identity => Payload::Dense(x.to_vec()),
            CompressorKind::TopK(k) => {
                let indices = top_k_indices(x, *k);
                let values = indices.iter().map(|&i| x[i as usize]).collect();
                Payload::Sparse { indices, values }
            }
            CompressorKind::RandK(k) => {
                let indices = rand_k_indices(self.dim, *k, rng);
                let values = indices.iter().map(|&i| x[i as usize]).collect();
                Payload::Sparse { indices, values }
            }
            CompressorKind::ScaledRandK(k) => {
                let scale = self.dim as f64 / *k as f64;
                let indices = rand_k_indices(self.dim, *k, rng);
                let values = indices.iter().map(|&i| scale * x[i as usize]).collect();
                Payload::Sparse { indices, values }
            }
            CompressorKind::Quantize(b) => quantize(x, *b, rng),
            CompressorKind::Composed { biased, unbiased } => {
                let first = biased.compress(x, rng)?;
                let head = first.decode();
                let residual: Vec<f64> = x.iter().zip(&head).map(|(a, b)| a - b).collect();
                let second = unbiased.compress(&residual, rng)?;
                Payload::Composed(Box::new(first), Box::new(second))
            }
        };
        Ok(CompressedMessage { dim: self.dim, bit_cost: self.bit_cost(), payload })
    }

    /// Re-encodes a vector produced by [`Compressor::apply`].
    pub fn encode(&self, q: &[f64]) -> Result<CompressedMessage> {
        if q.len() != self.dim {
            return Err(CompressError::DimensionMismatch { expected: self.dim, got: q.len() });
        }
        let payload = match &self.kind {
            CompressorKind::Identity => Payload::Dense(q.to_vec()),
            CompressorKind::TopK(k) | CompressorKind::RandK(k) | CompressorKind::ScaledRandK(k) => {
                let mut indices: Vec<u32> =
                    (0..self.dim).filter(|&i| q[i] != 0.0).map(|i| i as u32).collect();
                if indices.len() > *k {
                    return Err(CompressError::MalformedMessage(format!(
                        "{} nonzeros exceed budget {k}",
                        indices.len()
                    )));
                }
                // zero-valued coordinates fill the remaining budget
                let mut fill = 0u32;
                while indices.len() < *k {
                    if q[fill as usize] == 0.0 {
                        indices.push(fill);
                    }
                    fill += 1;
                }
                indices.sort_unstable();
                let values = indices.iter().map(|&i| q[i as usize]).collect();
                Payload::Sparse { indices, values }
            }
            CompressorKind::Quantize(b) => {
                let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let unit = scale * 0.5f64.powi(*b as i32 - 1);
                let max_level = 1i64 << (b - 1);
                let mut levels = Vec::with_capacity(self.dim);
                for &v in q {
                    let level = if unit == 0.0 { 0 } else { (v / unit).round() as i64 };
                    if level.abs() > max_level || unit * level as f64 != v {
                        return Err(CompressError::MalformedMessage(format!(
                            "{v} is not a level of the {b}-bit grid"
                        )));
                    }
                    levels.push(level as i32);
                }
                Payload::Quantized { scale, bits: *b, levels }
            }
            CompressorKind::Composed { .. } => return Err(CompressError::NotEncodable),
        };
        Ok(CompressedMessage { dim: self.dim, bit_cost: self.bit_cost(), payload })
    }
}

fn index_bits(p: usize) -> u64 {
    if p <= 1 {
        0
    } else {
        u64::from(usize::BITS - (p - 1).leading_zeros())
    }
}

/// Indices of the `k` largest magnitudes, ties to the lower index, sorted.
fn top_k_indices(x: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..x.len() as u32).collect();
    let by_magnitude = |a: &u32, b: &u32| {
        x[*b as usize].abs().total_cmp(&x[*a as usize].abs()).then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_magnitude);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

/// `k` distinct indices drawn uniformly (Fisher-Yates prefix), sorted.
fn rand_k_indices<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> Vec<u32> {
    let mut pool: Vec<u32> = (0..p as u32).collect();
    for t in 0..k {
        let j = rng.random_range(t..p);
        pool.swap(t, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

fn quantize<R: Rng + ?Sized>(x: &[f64], bits: u32, rng: &mut R) -> Payload {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let levels_per_unit = f64::from(1u32 << (bits - 1));
    let levels = x
        .iter()
        .map(|&v| {
            let mu: f64 = rng.random();
            if scale == 0.0 {
                return 0;
            }
            let t = levels_per_unit * v.abs() / scale;
            // floor(t + μ) can round past ceil(t) only through f64 rounding
            let level = (t + mu).floor().min(t.ceil()) as i32;
            if v < 0.0 {
                -level
            } else {
                level
            }
        })
        .collect();
    Payload::Quantized { scale, bits, levels }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    Sparse { indices: Vec<u32>, values: Vec<f64> },
    /// Entry `i` decodes to `scale · 2^{-(bits-1)} · levels[i]`.
    Quantized { scale: f64, bits: u32, levels: Vec<i32> },
    Composed(Box<CompressedMessage>, Box<CompressedMessage>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMessage {
    dim: usize,
    bit_cost: u64,
    payload: Payload,
}

impl CompressedMessage {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bit_cost(&self) -> u64 {
        self.bit_cost
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Builds a message from raw parts, checking consistency.
    pub fn from_parts(dim: usize, bit_cost: u64, payload: Payload) -> Result<Self> {
        let msg = CompressedMessage { dim, bit_cost, payload };
        msg.check()?;
        Ok(msg)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(CompressError::MalformedMessage(m));
        match &self.payload {
            Payload::Dense(v) if v.len() != self.dim => bad(format!("dense length {} != {}", v.len(), self.dim)),
            Payload::Sparse { indices, values } => {
                if indices.len() != values.len() {
                    return bad("index and value counts differ".into());
                }
                if indices.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("indices not strictly increasing".into());
                }
                if indices.last().is_some_and(|&i| i as usize >= self.dim) {
                    return bad("index out of range".into());
                }
                Ok(())
            }
            Payload::Quantized { bits, levels, .. } => {
                if levels.len() != self.dim {
                    return bad(format!("{} levels for dimension {}", levels.len(), self.dim));
                }
                if !(1..=31).contains(bits) {
                    return bad(format!("bit width {bits}"));
                }
                let max = 1i64 << (bits - 1);
                if levels.iter().any(|&l| i64::from(l).abs() > max) {
                    return bad("level out of range".into());
                }
                Ok(())
            }
            Payload::Composed(a, b) => {
                if a.dim != self.dim || b.dim != self.dim {
                    return bad("stage dimensions differ".into());
                }
                a.check()?;
                b.check()
            }
            Payload::Dense(_) => Ok(()),
        }
    }

    pub fn decode(&self) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(v) => v.clone(),
            Payload::Sparse { indices, values } => {
                let mut out = vec![0.0; self.dim];
                for (&i, &v) in indices.iter().zip(values) {
                    out[i as usize] = v;
                }
                out
            }
            Payload::Quantized { scale, bits, levels } => {
                let unit = scale * 0.5f64.powi(*bits as i32 - 1);
                levels.iter().map(|&l| unit * f64::from(l)).collect()
            }
            Payload::Composed(a, b) => {
                let mut out = a.decode();
                for (o, v) in out.iter_mut().zip(b.decode()) {
                    *o += v;
                }
                out
            }
        }
    }

    /// Like [`CompressedMessage::decode`] but verifies the payload first.
    pub fn try_decode(&self) -> Result<Vec<f64>> {
        self.check()?;
        Ok(self.decode())
    }
}

/// Monte-Carlo view of a compressor at a fixed input.
#[derive(Clone, Debug)]
pub struct ContractEstimate {
    pub mean: Vec<f64>,
    /// Standard error of each mean coordinate.
    pub std_err: Vec<f64>,
    /// Empirical `E‖C(x) − x‖² / ‖x‖²`.
    pub snr: f64,
    /// Largest single-draw `‖C(x) − x‖² / ‖x‖²`.
    pub max_ratio: f64,
    pub samples: usize,
}

pub fn estimate_contract<R: Rng + ?Sized>(
    c: &Compressor,
    x: &[f64],
    n_samples: usize,
    rng: &mut R,
) -> Result<ContractEstimate> {
    if n_samples < 100 {
        return Err(CompressError::TooFewSamples(n_samples));
    }
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(CompressError::ZeroInput);
    }
    let p = x.len();
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    let mut err_total = 0.0;
    let mut max_ratio = 0.0f64;
    for _ in 0..n_samples {
        let q = c.apply(x, rng)?;
        let mut err = 0.0;
        for i in 0..p {
            sum[i] += q[i];
            sum_sq[i] += q[i] * q[i];
            err += (q[i] - x[i]).powi(2);
        }
        err_total += err;
        max_ratio = max_ratio.max(err / norm_sq);
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = (0..p)
        .map(|i| {
            let var = ((sum_sq[i] - n * mean[i] * mean[i]) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(ContractEstimate { mean, std_err, snr: err_total / n / norm_sq, max_ratio, samples: n_samples })
}

/// Compressor descriptor as written in run configs; resolved against the
/// problem dimension with [`CompressorSpec::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompressorSpec {
    Identity,
    TopK(Budget),
    RandK(Budget),
    ScaledRandK(Budget),
    #[serde(rename = "quantize_b")]
    Quantize { bits: u32 },
    Composed { biased: Box<CompressorSpec>, unbiased: Box<CompressorSpec> },
}

/// Coordinate budget: explicit `k`, or `fraction` of `p` rounded down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

/// Default sparse budget, 5% of the dimension.
pub const DEFAULT_FRACTION: f64 = 0.05;

impl Budget {
    pub fn k(k: usize) -> Self {
        Budget { k: Some(k), fraction: None }
    }

    pub fn fraction(f: f64) -> Self {
        Budget { k: None, fraction: Some(f) }
    }

    pub fn resolve(&self, p: usize) -> usize {
        match (self.k, self.fraction) {
            (Some(k), _) => k,
            (None, f) => (f.unwrap_or(DEFAULT_FRACTION) * p as f64).floor() as usize,
        }
    }
}

impl CompressorSpec {
    pub fn build(&self, p: usize) -> Result<Compressor> {
        match self {
            CompressorSpec::Identity => Compressor::identity(p),
            CompressorSpec::TopK(b) => Compressor::top_k(p, b.resolve(p)),
            CompressorSpec::RandK(b) => Compressor::rand_k(p, b.resolve(p)),
            CompressorSpec::ScaledRandK(b) => Compressor::scaled_rand_k(p, b.resolve(p)),
            CompressorSpec::Quantize { bits } => Compressor::quantize(p, *bits),
            CompressorSpec::Composed { biased, unbiased } => {
                Compressor::compose(biased.build(p)?, unbiased.build(p)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn rng() -> rand_chacha::ChaCha8Rng {
        stream(1, 0, 0, Purpose::Estimate)
    }

    #[test]
    fn top_k_keeps_largest() {
        let c = Compressor::top_k(3, 1).unwrap();
        assert_eq!(c.apply(&[3.0, -1.0, 2.0], &mut rng()).unwrap(), vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn top_k_ties_go_to_lowest_index() {
        let c = Compressor::top_k(4, 2).unwrap();
        assert_eq!(c.apply(&[1.0, -2.0, 2.0, 2.0], &mut rng()).unwrap(), vec![0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn scaled_rand_k_with_full_budget_is_exact() {
        let c = Compressor::scaled_rand_k(5, 5).unwrap();
        let x = [0.3, -1.7, 2.5, 0.0, 9.1];
        assert_eq!(c.apply(&x, &mut rng()).unwrap(), x.to_vec());
    }

    #[test]
    fn quantizer_exact_on_integer_levels() {
        let c = Compressor::quantize(2, 2).unwrap();
        for seed in 0..200 {
            let mut r = stream(seed, 0, 0, Purpose::Estimate);
            assert_eq!(c.apply(&[1.0, -0.5], &mut r).unwrap(), vec![1.0, -0.5]);
        }
    }

    #[test]
    fn quantizer_zero_input() {
        let c = Compressor::quantize(3, 4).unwrap();
        assert_eq!(c.apply(&[0.0; 3], &mut rng()).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rand_k_draws_distinct_indices() {
        let mut r = rng();
        for _ in 0..100 {
            let idx = rand_k_indices(10, 4, &mut r);
            assert_eq!(idx.len(), 4);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn construction_errors() {
        assert_eq!(Compressor::top_k(3, 0), Err(CompressError::ZeroBudget));
        assert_eq!(Compressor::rand_k(3, 4), Err(CompressError::BudgetTooLarge { k: 4, p: 3 }));
        assert_eq!(Compressor::quantize(3, 0), Err(CompressError::BadBitWidth(0)));
        assert_eq!(Compressor::quantize(3, 32), Err(CompressError::BadBitWidth(32)));
        let c = Compressor::identity(3).unwrap();
        assert_eq!(
            c.apply(&[1.0, 2.0], &mut rng()),
            Err(CompressError::DimensionMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn declared_contracts() {
        assert_eq!(Compressor::top_k(20, 5).unwrap().contract(), Contract::Biased(0.25));
        assert_eq!(Compressor::rand_k(20, 5).unwrap().contract(), Contract::Biased(0.25));
        assert_eq!(Compressor::scaled_rand_k(20, 5).unwrap().contract(), Contract::Unbiased(3.0));
        let id = Compressor::identity(4).unwrap();
        assert_eq!(id.contract(), Contract::Unbiased(0.0));
        assert_eq!(id.delta(), Some(1.0));
        let composed =
            Compressor::compose(Compressor::top_k(20, 5).unwrap(), Compressor::scaled_rand_k(20, 5).unwrap()).unwrap();
        assert_eq!(composed.contract(), Contract::Unbiased(3.0 * (1.0 - 0.25)));
    }

    #[test]
    fn compose_rejects_wrong_classes() {
        let srk = Compressor::scaled_rand_k(4, 1).unwrap();
        let topk = Compressor::top_k(4, 1).unwrap();
        assert_eq!(Compressor::compose(srk.clone(), srk.clone()), Err(CompressError::ContractMismatch));
        assert_eq!(Compressor::compose(topk.clone(), topk.clone()), Err(CompressError::ContractMismatch));
        assert_eq!(
            Compressor::compose(topk, Compressor::scaled_rand_k(5, 1).unwrap()),
            Err(CompressError::StageDimensions(4, 5))
        );
    }

    #[test]
    fn compose_with_full_top_k_is_identity() {
        let c = Compressor::compose(Compressor::top_k(3, 3).unwrap(), Compressor::scaled_rand_k(3, 1).unwrap())
            .unwrap();
        assert_eq!(c.contract(), Contract::Unbiased(0.0));
        let x = [0.4, -2.0, 7.5];
        for seed in 0..20 {
            assert_eq!(c.apply(&x, &mut stream(seed, 0, 0, Purpose::Estimate)).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn bit_costs() {
        assert_eq!(Compressor::identity(10).unwrap().bit_cost(), 320);
        assert_eq!(Compressor::top_k(1000, 5).unwrap().bit_cost(), 5 * (32 + 10));
        assert_eq!(Compressor::quantize(100, 4).unwrap().bit_cost(), 432);
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(1024), 10);
        assert_eq!(index_bits(1025), 11);
    }

    #[test]
    fn estimate_errors() {
        let c = Compressor::identity(2).unwrap();
        assert!(matches!(estimate_contract(&c, &[0.0, 0.0], 100, &mut rng()), Err(CompressError::ZeroInput)));
        assert!(matches!(estimate_contract(&c, &[1.0, 0.0], 99, &mut rng()), Err(CompressError::TooFewSamples(99))));
        let est = estimate_contract(&c, &[1.0, -3.0], 100, &mut rng()).unwrap();
        assert_eq!(est.mean, vec![1.0, -3.0]);
        assert_eq!(est.snr, 0.0);
    }

    #[test]
    fn encode_rejects_foreign_vectors() {
        let c = Compressor::top_k(4, 1).unwrap();
        assert!(matches!(c.encode(&[1.0, 2.0, 0.0, 0.0]), Err(CompressError::MalformedMessage(_))));
        let q = Compressor::quantize(2, 2).unwrap();
        assert!(matches!(q.encode(&[1.0, 0.3]), Err(CompressError::MalformedMessage(_))));
    }

    #[test]
    fn malformed_parts_are_rejected() {
        let sparse = Payload::Sparse { indices: vec![2, 1], values: vec![1.0, 1.0] };
        assert!(CompressedMessage::from_parts(3, 0, sparse).is_err());
        let sparse = Payload::Sparse { indices: vec![5], values: vec![1.0] };
        assert!(CompressedMessage::from_parts(3, 0, sparse).is_err());
        let quant = Payload::Quantized { scale: 1.0, bits: 2, levels: vec![3, 0] };
        assert!(CompressedMessage::from_parts(2, 0, quant).is_err());
    }

    #[test]
    fn spec_budget_resolution() {
        let spec: CompressorSpec = serde_json::from_str(r#"{"kind":"scaled_rand_k"}"#).unwrap();
        assert_eq!(spec.build(100).unwrap(), Compressor::scaled_rand_k(100, 5).unwrap());
        let spec: CompressorSpec = serde_json::from_str(r#"{"kind":"top_k","k":3}"#).unwrap();
        assert_eq!(spec.build(10).unwrap(), Compressor::top_k(10, 3).unwrap());
        let spec: CompressorSpec = serde_json::from_str(r#"{"kind":"rand_k","fraction":0.05}"#).unwrap();
        assert_eq!(spec.build(10), Err(CompressError::ZeroBudget));
        let spec: CompressorSpec = serde_json::from_str(
            r#"{"kind":"composed","biased":{"kind":"top_k","k":1},"unbiased":{"kind":"quantize_b","bits":2}}"#,
        )
        .unwrap();
        assert!(spec.build(4).unwrap().is_unbiased());
    }
}
