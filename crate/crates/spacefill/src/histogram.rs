//! Histogram distributions on the unit interval and the unit cube.
//!
//! Three representations are provided:
//!
//! * [`GeneralHistogram1D`] — a 1-D distribution with arbitrary breakpoints
//!   `0 = t_0 ≤ t_1 ≤ … ≤ t_n = 1`. A bin with `t_k < t_{k+1}` carries the
//!   constant density `w_k`; a bin with `t_k = t_{k+1}` is a Dirac atom of
//!   mass `w_k`.
//! * [`HistogramD`] — a piecewise-constant density on the `n^d` equal tiles of
//!   `[0,1]^d`, stored row-major (last coordinate fastest). Weights are density
//!   values, so they sum to `n^d` and tile `k` has mass `w_k / n^d`.
//! * [`QuantizedHistogramD`] — a `HistogramD` whose conditional densities along
//!   every index prefix are positive integer multiples of `δ = 1/A`.
//!
//! ```
//! use spacefill::histogram::HistogramD;
//!
//! let h = HistogramD::new(2, 2, vec![1.2, 0.8, 0.4, 1.6]).unwrap();
//! assert_eq!(h.marginal(1).unwrap().weights(), &[1.0, 1.0]);
//! assert!((h.cell_mass(&[0, 0]).unwrap() - 0.3).abs() < 1e-15);
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};

/// Tolerance for normalization of 1-D general histograms.
pub const GENERAL_NORMALIZATION_TOL: f64 = 1e-12;
/// Tolerance for normalization of `d`-dimensional histograms (sums over `n^d` terms).
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// First invariant a histogram violates, with the offending index and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Dimension or resolution is zero.
    EmptyShape { d: usize, n: usize },
    /// Number of weights (or breakpoints) does not match the declared shape.
    Shape { expected: usize, found: usize },
    /// A weight or breakpoint is NaN or infinite.
    NonFinite { index: usize },
    /// A weight is zero or negative.
    NonpositiveWeight { index: usize, value: f64 },
    /// The first breakpoint is not 0 or the last is not 1.
    Endpoint { index: usize, value: f64 },
    /// Breakpoints decrease at `index`.
    Unsorted { index: usize, left: f64, right: f64 },
    /// Two consecutive atoms sit at the same location (`t_i = t_{i+1} = t_{i+2}`).
    RepeatedAtom { index: usize },
    /// The total mass differs from its required value.
    Normalization { total: f64, expected: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyShape { d, n } => write!(f, "empty shape (d={d}, n={n})"),
            Violation::Shape { expected, found } => {
                write!(f, "expected {expected} entries, found {found}")
            }
            Violation::NonFinite { index } => write!(f, "non-finite entry at index {index}"),
            Violation::NonpositiveWeight { index, value } => {
                write!(f, "nonpositive weight {value} at index {index}")
            }
            Violation::Endpoint { index, value } => {
                write!(f, "breakpoint t_{index} = {value} must be {}", if *index == 0 { 0 } else { 1 })
            }
            Violation::Unsorted { index, left, right } => {
                write!(f, "breakpoints decrease at index {index}: {left} > {right}")
            }
            Violation::RepeatedAtom { index } => {
                write!(f, "consecutive atoms at the same location starting at bin {index}")
            }
            Violation::Normalization { total, expected } => {
                write!(f, "total {total} differs from {expected} (deviation {:e})", total - expected)
            }
        }
    }
}

/// Whether a bin of a [`GeneralHistogram1D`] is an interval or a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    /// `t_k < t_{k+1}`: constant density `w_k` on the interval.
    Interval,
    /// `t_k = t_{k+1}`: Dirac atom of mass `w_k`.
    Atom,
}

/// One bin of a [`GeneralHistogram1D`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub weight: f64,
    pub kind: BinKind,
}

impl Bin {
    /// `d(t_k, t_{k+1})`: interval length, or 1 for an atom.
    pub fn extent(&self) -> f64 {
        match self.kind {
            BinKind::Interval => self.right - self.left,
            BinKind::Atom => 1.0,
        }
    }

    /// Probability mass carried by the bin.
    pub fn mass(&self) -> f64 {
        self.weight * self.extent()
    }
}

/// 1-D histogram with arbitrary breakpoints and Dirac atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralHistogram1D {
    breakpoints: Vec<f64>,
    weights: Vec<f64>,
}

impl GeneralHistogram1D {
    /// Builds and validates a general histogram.
    pub fn new(breakpoints: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let h = Self::from_parts(breakpoints, weights);
        h.validate()?;
        Ok(h)
    }

    /// Builds without validation; use [`validate`](Self::validate) to obtain a report.
    pub fn from_parts(breakpoints: Vec<f64>, weights: Vec<f64>) -> Self {
        Self { breakpoints, weights }
    }

    /// Checks every invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), Violation> {
        let n = self.weights.len();
        if n == 0 {
            return Err(Violation::EmptyShape { d: 1, n });
        }
        if self.breakpoints.len() != n + 1 {
            return Err(Violation::Shape { expected: n + 1, found: self.breakpoints.len() });
        }
        if let Some(index) = self.breakpoints.iter().position(|t| !t.is_finite()) {
            return Err(Violation::NonFinite { index });
        }
        if let Some(index) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Violation::NonFinite { index });
        }
        if self.breakpoints[0] != 0.0 {
            return Err(Violation::Endpoint { index: 0, value: self.breakpoints[0] });
        }
        if self.breakpoints[n] != 1.0 {
            return Err(Violation::Endpoint { index: n, value: self.breakpoints[n] });
        }
        for (index, pair) in self.breakpoints.windows(2).enumerate() {
            if pair[1] < pair[0] {
                return Err(Violation::Unsorted { index, left: pair[0], right: pair[1] });
            }
        }
        for (index, triple) in self.breakpoints.windows(3).enumerate() {
            if triple[0] == triple[1] && triple[1] == triple[2] {
                return Err(Violation::RepeatedAtom { index });
            }
        }
        if let Some(index) = self.weights.iter().position(|&w| w <= 0.0) {
            return Err(Violation::NonpositiveWeight { index, value: self.weights[index] });
        }
        let total: f64 = self.bins().map(|b| b.mass()).sum();
        if (total - 1.0).abs() > GENERAL_NORMALIZATION_TOL {
            return Err(Violation::Normalization { total, expected: 1.0 });
        }
        Ok(())
    }

    /// Breakpoints `t_0..t_n`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Weights `w_0..w_{n-1}` (densities for intervals, masses for atoms).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of bins.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// True when there are no bins (never the case for a validated histogram).
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Iterates over the bins in order.
    pub fn bins(&self) -> impl Iterator<Item = Bin> + '_ {
        self.weights.iter().enumerate().map(move |(k, &weight)| {
            let (left, right) = (self.breakpoints[k], self.breakpoints[k + 1]);
            let kind = if left == right { BinKind::Atom } else { BinKind::Interval };
            Bin { left, right, weight, kind }
        })
    }

    /// The uniform-tile histogram with the given density weights (`Σ w = n`).
    pub fn from_uniform_tiles(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        let breakpoints = (0..=n).map(|k| k as f64 / n as f64).collect();
        Self::new(breakpoints, weights.to_vec())
    }
}

/// Row-major flat index of a multi-index in `[0:(n-1)]^d`.
pub fn flat_index(n: usize, index: &[usize]) -> usize {
    index.iter().fold(0, |acc, &k| acc * n + k)
}

/// Inverse of [`flat_index`] for a multi-index of length `d`.
pub fn multi_index(n: usize, d: usize, mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    for slot in out.iter_mut().rev() {
        *slot = flat % n;
        flat /= n;
    }
    out
}

/// `d`-dimensional uniform-tile histogram of resolution `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram")]
pub struct HistogramD {
    d: usize,
    n: usize,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawHistogram {
    d: usize,
    n: usize,
    weights: Vec<f64>,
}

impl TryFrom<RawHistogram> for HistogramD {
    type Error = Error;
    fn try_from(raw: RawHistogram) -> Result<Self> {
        HistogramD::new(raw.d, raw.n, raw.weights)
    }
}

impl HistogramD {
    /// Builds and validates a histogram from row-major density weights.
    pub fn new(d: usize, n: usize, weights: Vec<f64>) -> Result<Self> {
        let h = Self::from_parts(d, n, weights);
        h.validate()?;
        Ok(h)
    }

    /// Builds without validation; use [`validate`](Self::validate) to obtain a report.
    pub fn from_parts(d: usize, n: usize, weights: Vec<f64>) -> Self {
        Self { d, n, weights }
    }

    /// The uniform distribution on `[0,1]^d` at resolution `n`.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        let cells = checked_cells(d, n)?;
        Self::new(d, n, vec![1.0; cells])
    }

    /// Checks every invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), Violation> {
        if self.d == 0 || self.n == 0 {
            return Err(Violation::EmptyShape { d: self.d, n: self.n });
        }
        let expected = match checked_cells(self.d, self.n) {
            Ok(c) => c,
            Err(_) => return Err(Violation::Shape { expected: usize::MAX, found: self.weights.len() }),
        };
        if self.weights.len() != expected {
            return Err(Violation::Shape { expected, found: self.weights.len() });
        }
        if let Some(index) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(Violation::NonFinite { index });
        }
        if let Some(index) = self.weights.iter().position(|&w| w <= 0.0) {
            return Err(Violation::NonpositiveWeight { index, value: self.weights[index] });
        }
        let total: f64 = self.weights.iter().sum();
        let target = expected as f64;
        if (total - target).abs() > NORMALIZATION_TOL {
            return Err(Violation::Normalization { total, expected: target });
        }
        Ok(())
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Resolution `n` (tiles per side).
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Row-major density weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of tiles `n^d`.
    pub fn num_cells(&self) -> usize {
        self.weights.len()
    }

    fn check_prefix(&self, index: &[usize]) -> Result<()> {
        if let Some((pos, &k)) = index.iter().enumerate().find(|(_, &k)| k >= self.n) {
            return Err(out_of_range("index component", format!("{k} at position {pos}"), format!("[0, {})", self.n)));
        }
        Ok(())
    }

    /// Sums of the weights in each block of the given prefix length, i.e. `n^{d-t}` times
    /// the marginal weight of every prefix of length `t`.
    fn block_sums(&self, t: usize) -> Vec<f64> {
        let block = self.n.pow((self.d - t) as u32);
        self.weights.chunks(block).map(|c| c.iter().sum()).collect()
    }

    /// Marginal histogram of the first `t` coordinates, `1 ≤ t ≤ d-1`.
    ///
    /// Weights are `w_z = (1/n)^{d-t} Σ_{suffix} w_{(z, suffix)}`.
    pub fn marginal(&self, t: usize) -> Result<HistogramD> {
        if t == 0 || t >= self.d {
            return Err(out_of_range("marginal prefix length", t, format!("[1, {}]", self.d.saturating_sub(1))));
        }
        let scale = (self.n as f64).powi((self.d - t) as i32);
        let weights = self.block_sums(t).into_iter().map(|s| s / scale).collect();
        Ok(HistogramD::from_parts(t, self.n, weights))
    }

    /// Conditional density weights of the coordinate following the prefix `z`.
    ///
    /// For `1 ≤ |z| ≤ d-1` this returns `w_{(z,k)} / w_z` for `k = 0..n`, where both are
    /// marginal weights; the row sums to `n`. The empty prefix is also accepted and yields the
    /// marginal weights of the first coordinate.
    pub fn conditional(&self, z: &[usize]) -> Result<Vec<f64>> {
        let t = z.len();
        if t >= self.d {
            return Err(out_of_range("conditional prefix length", t, format!("[0, {}]", self.d - 1)));
        }
        self.check_prefix(z)?;
        let block = self.n.pow((self.d - t) as u32);
        let sub = block / self.n;
        let start = flat_index(self.n, z) * block;
        let sums: Vec<f64> = self.weights[start..start + block].chunks(sub).map(|c| c.iter().sum()).collect();
        let total: f64 = sums.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass { prefix: z.to_vec() });
        }
        let n = self.n as f64;
        Ok(sums.into_iter().map(|s| n * s / total).collect())
    }

    /// Probability mass `w_k / n^d` of tile `c_k`.
    pub fn cell_mass(&self, k: &[usize]) -> Result<f64> {
        if k.len() != self.d {
            return Err(Error::DimensionMismatch { context: "cell index", expected: self.d, found: k.len() });
        }
        self.check_prefix(k)?;
        Ok(self.cell_mass_flat(flat_index(self.n, k)))
    }

    /// Mass of the tile with the given row-major flat index.
    pub fn cell_mass_flat(&self, flat: usize) -> f64 {
        self.weights[flat] / self.num_cells() as f64
    }

    /// Serializes to the histogram JSON format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the histogram JSON format and validates the result.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn checked_cells(d: usize, n: usize) -> Result<usize> {
    u32::try_from(d)
        .ok()
        .and_then(|d| n.checked_pow(d))
        .ok_or_else(|| out_of_range("number of cells n^d", format!("{n}^{d}"), "fits in memory"))
}

/// Conditional densities of a δ-quantized histogram, stored as integer numerators.
///
/// Level `t` (for `t = 0..d`) holds one row per prefix `z` of length `t` (row-major order of
/// the prefixes); each row holds `n` numerators `q_k ≥ 1` with `Σ_k q_k = A`. The conditional
/// probability of index `k` is `q_k/A` and its conditional density is `w_k = n q_k / A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    n: usize,
    denominator: u64,
    levels: Vec<Vec<u64>>,
}

impl ConditionalTable {
    /// Validates the table: one level per prefix length, positive numerators summing to `A`.
    pub fn new(d: usize, n: usize, denominator: u64, levels: Vec<Vec<u64>>) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::InvalidDelta(0));
        }
        if levels.len() != d {
            return Err(Error::DimensionMismatch { context: "conditional levels", expected: d, found: levels.len() });
        }
        for (t, level) in levels.iter().enumerate() {
            let expected = n.pow(t as u32 + 1);
            if level.len() != expected {
                return Err(Error::DimensionMismatch {
                    context: "conditional level size",
                    expected,
                    found: level.len(),
                });
            }
            for (row_index, row) in level.chunks(n).enumerate() {
                let prefix = multi_index(n, t, row_index);
                if let Some(k) = row.iter().position(|&q| q == 0) {
                    let mut index = prefix.clone();
                    index.push(k);
                    return Err(Error::ZeroMass { prefix: index });
                }
                let sum: u64 = row.iter().sum();
                if sum != denominator {
                    return Err(out_of_range(
                        "conditional row numerator sum",
                        format!("{sum} for prefix {prefix:?}"),
                        format!("exactly {denominator}"),
                    ));
                }
            }
        }
        Ok(Self { n, denominator, levels })
    }

    /// The quantization denominator `A` (δ = 1/A).
    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    /// Integer numerators `q_k` of the conditional row for `prefix`.
    pub fn numerators(&self, prefix: &[usize]) -> &[u64] {
        let start = flat_index(self.n, prefix) * self.n;
        &self.levels[prefix.len()][start..start + self.n]
    }

    /// Conditional density weights `n q_k / A` for `prefix` (row sums to `n`).
    pub fn weights(&self, prefix: &[usize]) -> Vec<f64> {
        let n = self.n as f64;
        let a = self.denominator as f64;
        self.numerators(prefix).iter().map(|&q| n * q as f64 / a).collect()
    }

    /// Exact tile mass `Π q / A^d` along the full index path `z`.
    pub fn path_mass(&self, z: &[usize]) -> f64 {
        rational_product((0..z.len()).map(|t| self.numerators(&z[..t])[z[t]]), self.denominator)
    }
}

/// Evaluates `Π numerators / denominator^len` with a single final rounding when the
/// integers fit, falling back to a floating product otherwise.
pub(crate) fn rational_product(numerators: impl Iterator<Item = u64> + Clone, denominator: u64) -> f64 {
    let mut num: Option<u128> = Some(1);
    let mut den: Option<u128> = Some(1);
    for q in numerators.clone() {
        num = num.and_then(|x| x.checked_mul(q as u128));
        den = den.and_then(|x| x.checked_mul(denominator as u128));
    }
    match (num, den) {
        (Some(a), Some(b)) if a < (1u128 << 100) && b < (1u128 << 100) => a as f64 / b as f64,
        _ => numerators.map(|q| q as f64 / denominator as f64).product(),
    }
}

/// A δ-quantized histogram: base weights plus the exact conditional table they derive from.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedHistogramD {
    base: HistogramD,
    table: ConditionalTable,
}

impl QuantizedHistogramD {
    /// Builds the histogram implied by a conditional table (`w_z = n^d Π q / A^d`).
    pub fn from_table(d: usize, n: usize, table: ConditionalTable) -> Result<Self> {
        let cells = checked_cells(d, n)?;
        let scale = cells as f64;
        let weights = (0..cells).map(|flat| scale * table.path_mass(&multi_index(n, d, flat))).collect();
        let base = HistogramD::new(d, n, weights)?;
        Ok(Self { base, table })
    }

    /// Pairs a histogram with a conditional table, checking that they agree within `1e-9`.
    pub fn new(base: HistogramD, table: ConditionalTable) -> Result<Self> {
        let (d, n) = (base.dim(), base.resolution());
        let scale = base.num_cells() as f64;
        for flat in 0..base.num_cells() {
            let z = multi_index(n, d, flat);
            let expected = scale * table.path_mass(&z);
            let found = base.weights()[flat];
            if (expected - found).abs() > NORMALIZATION_TOL {
                return Err(out_of_range(
                    "histogram weight vs conditional reconstruction",
                    format!("{found} at {z:?}"),
                    format!("{expected} ± {NORMALIZATION_TOL:e}"),
                ));
            }
        }
        Ok(Self { base, table })
    }

    /// The underlying histogram.
    pub fn base(&self) -> &HistogramD {
        &self.base
    }

    /// The exact conditional table.
    pub fn table(&self) -> &ConditionalTable {
        &self.table
    }

    /// δ = 1/A.
    pub fn delta(&self) -> f64 {
        1.0 / self.table.denominator as f64
    }

    /// Serializes to histogram JSON extended with `delta_denominator` and `conditionals`.
    ///
    /// Conditional rows are keyed by the comma-separated prefix (`""` for the first
    /// coordinate, `"0,1"` for the prefix `(0, 1)`) and hold density weights `n q_k / A`.
    pub fn to_json(&self) -> Result<String> {
        let (d, n) = (self.base.dim(), self.base.resolution());
        let mut conditionals = BTreeMap::new();
        for t in 0..d {
            for row in 0..n.pow(t as u32) {
                let prefix = multi_index(n, t, row);
                conditionals.insert(prefix_key(&prefix), self.table.weights(&prefix));
            }
        }
        let raw = RawQuantized {
            d,
            n,
            weights: self.base.weights().to_vec(),
            delta_denominator: Some(self.table.denominator),
            conditionals: Some(conditionals),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    /// Parses the extended JSON format, recovering integer numerators from the weights.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawQuantized = serde_json::from_str(text)?;
        let (Some(denominator), Some(conditionals)) = (raw.delta_denominator, raw.conditionals) else {
            return Err(Error::NotQuantized);
        };
        let (d, n) = (raw.d, raw.n);
        checked_cells(d, n)?;
        if n == 0 || d == 0 {
            return Err(Error::InvalidHistogram(Violation::EmptyShape { d, n }));
        }
        let mut levels = Vec::with_capacity(d);
        for t in 0..d {
            let mut level = Vec::with_capacity(n.pow(t as u32 + 1));
            for row in 0..n.pow(t as u32) {
                let prefix = multi_index(n, t, row);
                let key = prefix_key(&prefix);
                let weights = conditionals.get(&key).ok_or_else(|| {
                    out_of_range("conditional table", format!("missing prefix \"{key}\""), "every prefix present")
                })?;
                if weights.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "conditional row",
                        expected: n,
                        found: weights.len(),
                    });
                }
                for &w in weights {
                    level.push(numerator_of(w, n, denominator)?);
                }
            }
            levels.push(level);
        }
        let table = ConditionalTable::new(d, n, denominator, levels)?;
        let base = HistogramD::new(d, n, raw.weights)?;
        Self::new(base, table)
    }
}

fn prefix_key(prefix: &[usize]) -> String {
    prefix.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
}

/// Recovers the integer numerator `q` from a density weight `w = n q / A`.
fn numerator_of(w: f64, n: usize, denominator: u64) -> Result<u64> {
    let x = w * denominator as f64 / n as f64;
    let q = x.round();
    if !(x.is_finite() && q >= 1.0 && (x - q).abs() <= 1e-9 * q.max(1.0)) {
        return Err(out_of_range("conditional weight", w, format!("positive multiple of n/A = {}/{}", n, denominator)));
    }
    Ok(q as u64)
}

#[derive(Serialize, Deserialize)]
struct RawQuantized {
    d: usize,
    n: usize,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_denominator: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conditionals: Option<BTreeMap<String, Vec<f64>>>,
}
