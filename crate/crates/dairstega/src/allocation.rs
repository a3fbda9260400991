//! Candidate pools, roulette-style code allocation, and interval tables.
//!
//! Each generation step tiles the alpha-bit code space [0, 2^alpha - 1] with
//! consecutive per-token ranges whose sizes follow one of five allocation
//! shapes. Exact tiling is enforced with largest-remainder apportionment, so
//! every codepoint resolves to a token and every emitted token owns a range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{exp_neg_units, isqrt, log2_units, pow_frac_units};
use crate::provider::{quantize_integer_weights, TokenDistribution, TokenId, GRID};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("distribution has fewer than {needed} nonzero tokens")]
    DegenerateDistribution { needed: usize },
    #[error("all allocation weights are zero")]
    ZeroWeightVector,
    #[error("counts sum to {got}, expected {expected}")]
    CountMismatch { got: u64, expected: u64 },
    #[error("invalid allocation parameters: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    Linear,
    Sqrt,
    Exp,
    Log,
    Condensed,
}

impl AllocationKind {
    pub const ALL: [AllocationKind; 5] = [
        AllocationKind::Linear,
        AllocationKind::Sqrt,
        AllocationKind::Exp,
        AllocationKind::Log,
        AllocationKind::Condensed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AllocationKind::Linear => "linear",
            AllocationKind::Sqrt => "sqrt",
            AllocationKind::Exp => "exp",
            AllocationKind::Log => "log",
            AllocationKind::Condensed => "condensed",
        }
    }
}

impl std::str::FromStr for AllocationKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(AllocationKind::Linear),
            "sqrt" => Ok(AllocationKind::Sqrt),
            "exp" => Ok(AllocationKind::Exp),
            "log" => Ok(AllocationKind::Log),
            "condensed" => Ok(AllocationKind::Condensed),
            other => Err(format!("unknown allocation kind '{other}'")),
        }
    }
}

/// Allocation function plus window width. `beta` and `b` are kept in
/// milli-units so configs hash identically everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationSpec {
    pub kind: AllocationKind,
    /// window width in bits, 1..=32
    pub alpha: u32,
    /// exponent/coefficient in milli-units
    pub beta_milli: u32,
    /// log offset in milli-units, only used by `log`
    pub b_milli: u32,
}

impl AllocationSpec {
    pub fn new(kind: AllocationKind, alpha: u32, beta: f64, b: f64) -> Result<Self, AllocationError> {
        if !(1..=32).contains(&alpha) {
            return Err(AllocationError::InvalidSpec(format!("alpha {alpha} outside 1..=32")));
        }
        let beta_milli = (beta * 1000.0).round() as i64;
        let b_milli = (b * 1000.0).round() as i64;
        match kind {
            AllocationKind::Condensed => {
                if beta_milli <= 0 || beta_milli > 1000 {
                    return Err(AllocationError::InvalidSpec(format!(
                        "condensed requires beta in (0, 1], got {beta}"
                    )));
                }
            }
            AllocationKind::Linear => {
                if beta_milli <= 0 {
                    return Err(AllocationError::InvalidSpec(format!(
                        "linear requires beta > 0, got {beta}"
                    )));
                }
            }
            AllocationKind::Log
                if b_milli < 2000 => {
                    return Err(AllocationError::InvalidSpec(format!(
                        "log requires b >= 2, got {b}"
                    )));
                }
            _ => {}
        }
        Ok(Self { kind, alpha, beta_milli: beta_milli.max(0) as u32, b_milli: b_milli.max(0) as u32 })
    }

    pub fn beta(&self) -> f64 {
        self.beta_milli as f64 / 1000.0
    }

    pub fn b(&self) -> f64 {
        self.b_milli as f64 / 1000.0
    }

    /// Code-space size 2^alpha.
    pub fn total_codes(&self) -> u64 {
        1u64 << self.alpha
    }

    /// Continuous allocation shape f(x) on (0, 1], weights normalized by (T-1).
    /// Advisory only (constraint validation); the codec path is integer.
    pub fn shape(&self, x: f64) -> f64 {
        match self.kind {
            AllocationKind::Linear => self.beta() * x,
            AllocationKind::Sqrt => x.sqrt(),
            AllocationKind::Exp => 1.0 - (-2.0 * x).exp(),
            AllocationKind::Log => ((x.log2() + self.b()) / self.b()).max(0.0),
            AllocationKind::Condensed => x.powf(self.beta()),
        }
    }
}

/// Top-k tokens with grid-renormalized probabilities, sorted by probability
/// descending then token id ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    entries: Vec<(TokenId, u64)>,
    top_k: usize,
}

impl CandidatePool {
    /// Builds the pool from the `top_k` highest-probability tokens, excluding
    /// the given ids, renormalized on the grid. Requires at least two nonzero
    /// candidates.
    pub fn build(
        dist: &TokenDistribution,
        top_k: usize,
        exclude: &[TokenId],
    ) -> Result<Self, AllocationError> {
        Self::build_with_min(dist, top_k, exclude, 2)
    }

    /// Same as [`build`](Self::build) but tolerates a single-candidate pool;
    /// the codec needs this after pruning `<EOS>` from a near-degenerate step.
    pub fn build_allowing_single(
        dist: &TokenDistribution,
        top_k: usize,
        exclude: &[TokenId],
    ) -> Result<Self, AllocationError> {
        Self::build_with_min(dist, top_k, exclude, 1)
    }

    fn build_with_min(
        dist: &TokenDistribution,
        top_k: usize,
        exclude: &[TokenId],
        min_nonzero: usize,
    ) -> Result<Self, AllocationError> {
        let mut candidates: Vec<(TokenId, u64)> = dist
            .units()
            .iter()
            .enumerate()
            .map(|(i, &u)| (i as TokenId, u))
            .filter(|(id, u)| *u > 0 && !exclude.contains(id))
            .collect();
        if candidates.len() < min_nonzero {
            return Err(AllocationError::DegenerateDistribution { needed: min_nonzero });
        }
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        candidates.truncate(top_k);
        let weights: Vec<u128> = candidates.iter().map(|e| e.1 as u128).collect();
        let renorm = quantize_integer_weights(&weights).expect("nonzero by construction");
        let entries = candidates
            .iter()
            .zip(renorm.units())
            .map(|(&(id, _), &u)| (id, u))
            .collect();
        Ok(Self { entries, top_k })
    }

    pub fn entries(&self) -> &[(TokenId, u64)] {
        &self.entries
    }

    pub fn effective_size(&self) -> usize {
        self.entries.len()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn position_of(&self, id: TokenId) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == id)
    }
}

/// Unrounded allocation weights in 10^-9 units, f(p') * (2^alpha - 1).
///
/// Weights are clamped to be non-increasing along the pool so that fixed-point
/// rounding can never hand a smaller-probability token a larger weight. A
/// fully clamped vector (possible under `log` when every pool probability is
/// below 2^-b) falls back to uniform weights so allocation always tiles and
/// generation can progress.
pub fn weight_units(pool: &CandidatePool, spec: &AllocationSpec) -> Vec<u128> {
    let t_minus_1 = (spec.total_codes() - 1) as u128;
    let mut out: Vec<u128> = pool
        .entries()
        .iter()
        .map(|&(_, p_units)| {
            let f_units: u128 = match spec.kind {
                AllocationKind::Linear => {
                    p_units as u128 * spec.beta_milli as u128 / 1000
                }
                AllocationKind::Sqrt => isqrt(p_units as u128 * GRID as u128) as u128,
                AllocationKind::Exp => {
                    (GRID - exp_neg_units(2 * p_units)) as u128
                }
                AllocationKind::Log => {
                    if p_units == 0 {
                        0
                    } else {
                        let b_units = spec.b_milli as i64 * 1_000_000;
                        let val = log2_units(p_units) + b_units;
                        if val <= 0 {
                            0
                        } else {
                            val as u128 * GRID as u128 / b_units as u128
                        }
                    }
                }
                AllocationKind::Condensed => pow_frac_units(p_units, spec.beta_milli) as u128,
            };
            f_units * t_minus_1
        })
        .collect();
    for i in 1..out.len() {
        if out[i] > out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    if out.iter().all(|&w| w == 0) {
        out.iter_mut().for_each(|w| *w = 1);
    }
    out
}

/// The weights as reals (units / 10^9), for inspection and tests.
pub fn raw_weights(pool: &CandidatePool, spec: &AllocationSpec) -> Vec<f64> {
    weight_units(pool, spec).iter().map(|&w| w as f64 / GRID as f64).collect()
}

/// Largest-remainder apportionment of `total` codes proportional to `weights`.
///
/// Every entry additionally receives at least one code when `total >=
/// weights.len()`, stealing from the largest counts so no emitted token can end
/// up without a range.
pub fn apportion(weights: &[u128], total: u64) -> Result<Vec<u64>, AllocationError> {
    let sum: u128 = weights.iter().sum();
    if sum == 0 {
        return Err(AllocationError::ZeroWeightVector);
    }
    let mut counts: Vec<u64> = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(usize, u128)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let scaled = w * total as u128;
        let n = (scaled / sum) as u64;
        counts.push(n);
        assigned += n;
        remainders.push((i, scaled % sum));
    }
    let mut leftover = total - assigned;
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    if total as usize >= counts.len() {
        // fill zero-count entries; steal from the current largest count
        // (ties resolved toward the higher index to preserve monotonicity)
        for j in 0..counts.len() {
            if counts[j] == 0 {
                let donor = counts
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                debug_assert!(counts[donor] >= 2);
                counts[donor] -= 1;
                counts[j] = 1;
            }
        }
    }
    Ok(counts)
}

/// One token's inclusive codepoint range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRange {
    pub token_id: TokenId,
    pub begin: u64,
    pub end: u64,
}

/// Exact tiling of [0, total_codes - 1] by consecutive non-empty ranges in
/// pool order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalTable {
    total_codes: u64,
    ranges: Vec<CodeRange>,
}

impl IntervalTable {
    pub fn total_codes(&self) -> u64 {
        self.total_codes
    }

    pub fn ranges(&self) -> &[CodeRange] {
        &self.ranges
    }

    /// The unique range containing `code`.
    pub fn locate(&self, code: u64) -> &CodeRange {
        debug_assert!(code < self.total_codes);
        let idx = self
            .ranges
            .partition_point(|r| r.end < code);
        &self.ranges[idx]
    }

    pub fn range_of(&self, token_id: TokenId) -> Option<&CodeRange> {
        self.ranges.iter().find(|r| r.token_id == token_id)
    }
}

/// Tiles the code space by prefix sums of `counts` aligned with the pool.
/// Zero-count entries are skipped (every listed range is non-empty).
pub fn build_intervals(
    pool: &CandidatePool,
    counts: &[u64],
    total_codes: u64,
) -> Result<IntervalTable, AllocationError> {
    if counts.len() != pool.effective_size() {
        return Err(AllocationError::CountMismatch {
            got: counts.len() as u64,
            expected: pool.effective_size() as u64,
        });
    }
    let sum: u64 = counts.iter().sum();
    if sum != total_codes {
        return Err(AllocationError::CountMismatch { got: sum, expected: total_codes });
    }
    let mut ranges = Vec::with_capacity(counts.len());
    let mut cursor = 0u64;
    for (&(token_id, _), &n) in pool.entries().iter().zip(counts) {
        if n == 0 {
            continue;
        }
        ranges.push(CodeRange { token_id, begin: cursor, end: cursor + n - 1 });
        cursor += n;
    }
    Ok(IntervalTable { total_codes, ranges })
}

/// Pool -> interval table in one call, the per-step codec path.
pub fn allocate(pool: &CandidatePool, spec: &AllocationSpec) -> Result<IntervalTable, AllocationError> {
    let weights = weight_units(pool, spec);
    let counts = apportion(&weights, spec.total_codes())?;
    build_intervals(pool, &counts, spec.total_codes())
}

/// Longest common leading bit prefix of `begin` and `end` as alpha-bit strings.
/// Returns (prefix value, prefix length); length alpha iff begin == end.
pub fn common_prefix(begin: u64, end: u64, alpha: u32) -> (u64, u32) {
    debug_assert!(begin <= end && end < (1u64 << alpha));
    let diff = begin ^ end;
    let bits_needed = 64 - diff.leading_zeros();
    let len = alpha - bits_needed;
    let value = if len == 0 { 0 } else { begin >> (alpha - len) };
    (value, len)
}

/// Per-constraint verdict from the advisory validator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub pass: bool,
    pub first_violation_x: Option<f64>,
}

/// Advisory report on the paper-style shape constraints. Never blocks the codec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub kind: String,
    pub alpha: u32,
    pub beta: f64,
    pub b: f64,
    pub domain: (f64, f64),
    pub constraint1: ConstraintVerdict,
    pub constraint2: ConstraintVerdict,
    pub constraint3: ConstraintVerdict,
    /// The growth-rate bound c/(1-x) diverges at x = 1, so validation stops at
    /// 1 - delta; this note travels with every report.
    pub note: String,
}

const FD_SLACK: f64 = 1e-7;

/// Checks the continuous allocation shape against the three growth constraints
/// on a uniform grid over [eps, 1 - delta] with central finite differences.
pub fn validate_constraints(
    spec: &AllocationSpec,
    eps: f64,
    delta: f64,
    c: f64,
    grid_points: usize,
) -> ConstraintReport {
    assert!(eps > 0.0 && eps < 1.0 - delta && delta >= 0.0, "need 0 < eps < 1 - delta");
    assert!(grid_points >= 10, "need at least 10 grid points");
    let lo = eps;
    let hi = 1.0 - delta;
    let h = (hi - lo) / (grid_points - 1) as f64;
    let f = |x: f64| spec.shape(x);

    let mut c1 = ConstraintVerdict { pass: true, first_violation_x: None };
    let mut c2 = ConstraintVerdict { pass: true, first_violation_x: None };
    let mut c3 = ConstraintVerdict { pass: true, first_violation_x: None };

    for i in 0..grid_points {
        let x = lo + i as f64 * h;
        // value clause of constraint 3 applies at every grid point
        if f(x) + FD_SLACK < x && c3.pass {
            c3.pass = false;
            c3.first_violation_x = Some(x);
        }
        // derivative clauses need both neighbors
        if i == 0 || i + 1 == grid_points {
            continue;
        }
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        if d1 + FD_SLACK < c / (1.0 - x) && c1.pass {
            c1.pass = false;
            c1.first_violation_x = Some(x);
        }
        if d2 > FD_SLACK && c2.pass {
            c2.pass = false;
            c2.first_violation_x = Some(x);
        }
        if d1 > 1.0 + FD_SLACK && c3.pass {
            c3.pass = false;
            c3.first_violation_x = Some(x);
        }
    }

    ConstraintReport {
        kind: spec.kind.name().to_string(),
        alpha: spec.alpha,
        beta: spec.beta(),
        b: spec.b(),
        domain: (lo, hi),
        constraint1: c1,
        constraint2: c2,
        constraint3: c3,
        note: format!(
            "growth bound c/(1-x) diverges as x -> 1; validated on [{lo}, {hi}] only"
        ),
    }
}
