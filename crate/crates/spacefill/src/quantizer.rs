//! Turning an arbitrary distribution on `[0,1]^d` into a δ-quantized histogram.
//!
//! The distribution `ν` is first reduced to its tile masses `m_{i_d} = ν(c_{i_d})`
//! and, by summing out trailing coordinates, to masses `m_{i_k}` of every index
//! prefix `i_k = (i_1, …, i_k)`. The conditional probabilities are
//! `n_{i_k} = m_{i_k} / m_{i_{k−1}}` (or `1/n` when the parent carries no mass).
//!
//! Quantization with `δ = 1/A` works sibling group by sibling group: every
//! conditional except the group's argmax is rounded *up* to the δ-grid (zero
//! conditionals become `δ`), and the argmax absorbs the difference so that the
//! group still sums to one. The quantized tile masses `m̃` are running products of
//! the quantized conditionals `ñ`, so marginals are preserved exactly, and all
//! masses stay positive whenever `δ < 1/(n(n−1))`.
//!
//! ```
//! use spacefill::quantizer::{compute_masses, quantize_masses, CellMassGrid, InputDistribution};
//!
//! let grid = CellMassGrid::new(1, 2, vec![0.3, 0.7]).unwrap();
//! let ledger = compute_masses(&InputDistribution::Grid(grid), 2).unwrap();
//! let q = quantize_masses(&ledger, 4).unwrap();
//! assert_eq!(q.quantized_mass(&[0]).unwrap(), 0.5);
//! assert_eq!(q.quantized_mass(&[1]).unwrap(), 0.5);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::histogram::{flat_index, multi_index, rational_product, ConditionalTable, QuantizedHistogramD};

/// Tile masses of a distribution on the `n^d` tiles (row-major, summing to one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct CellMassGrid {
    d: usize,
    n: usize,
    masses: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    d: usize,
    n: usize,
    masses: Vec<f64>,
}

impl TryFrom<RawGrid> for CellMassGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        CellMassGrid::new(raw.d, raw.n, raw.masses)
    }
}

impl CellMassGrid {
    /// Validates shape, nonnegativity and unit total (within `1e-9`).
    pub fn new(d: usize, n: usize, masses: Vec<f64>) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(out_of_range("grid shape", format!("d={d}, n={n}"), "both positive"));
        }
        let cells =
            n.checked_pow(d as u32).ok_or_else(|| out_of_range("grid cells", format!("{n}^{d}"), "fits in memory"))?;
        if masses.len() != cells {
            return Err(Error::DimensionMismatch { context: "grid masses", expected: cells, found: masses.len() });
        }
        if let Some(i) = masses.iter().position(|&m| !m.is_finite() || m < 0.0) {
            return Err(out_of_range("grid mass", format!("{} at index {i}", masses[i]), "nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized { total });
        }
        Ok(Self { d, n, masses })
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Resolution.
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Row-major tile masses.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Serializes as `{"d": …, "n": …, "masses": […]}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates `{"d": …, "n": …, "masses": […]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Distribution to be quantized.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDistribution {
    /// Empirical distribution of sample points in `[0,1]^d`.
    Samples { dim: usize, points: Vec<Vec<f64>> },
    /// Tile masses at the target resolution.
    Grid(CellMassGrid),
}

impl InputDistribution {
    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        match self {
            InputDistribution::Samples { dim, .. } => *dim,
            InputDistribution::Grid(g) => g.d,
        }
    }
}

/// Tile of resolution `n` holding coordinate `x ∈ [0,1]`: half-open bins `[j/n, (j+1)/n)`,
/// with `x = 1` assigned to the last bin.
pub fn bin_of(x: f64, n: usize) -> usize {
    ((x * n as f64).floor() as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq)]
struct QuantizedLevels {
    denominator: u64,
    /// `numerators[k−1][flat(i_k)]`: `ñ_{i_k} = q / A`.
    numerators: Vec<Vec<i64>>,
    /// `masses[k−1][flat(i_k)] = m̃_{i_k}`.
    masses: Vec<Vec<f64>>,
}

/// Original and quantized masses of every index prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixMassLedger {
    d: usize,
    n: usize,
    /// `masses[k−1][flat(i_k)] = m_{i_k}`.
    masses: Vec<Vec<f64>>,
    /// `conditionals[k−1][flat(i_k)] = n_{i_k}`.
    conditionals: Vec<Vec<f64>>,
    /// `argmax[k−1][flat(i_{k−1})]`: sibling index with the largest conditional (smallest on ties).
    argmax: Vec<Vec<usize>>,
    quantized: Option<QuantizedLevels>,
}

/// Builds the ledger of prefix masses and conditionals (the `m` and `n` fields).
pub fn compute_masses(nu: &InputDistribution, n: usize) -> Result<PrefixMassLedger> {
    if n == 0 {
        return Err(out_of_range("resolution n", 0, "at least 1"));
    }
    let d = nu.dim();
    if d == 0 {
        return Err(out_of_range("dimension d", 0, "at least 1"));
    }
    let cells = n.checked_pow(d as u32).ok_or_else(|| out_of_range("cells", format!("{n}^{d}"), "fits in memory"))?;
    let full: Vec<f64> = match nu {
        InputDistribution::Samples { dim, points } => {
            if points.is_empty() {
                return Err(Error::Empty("sample set"));
            }
            let mut counts = vec![0usize; cells];
            for (row, p) in points.iter().enumerate() {
                if p.len() != *dim {
                    return Err(Error::DimensionMismatch { context: "sample point", expected: *dim, found: p.len() });
                }
                if let Some(&x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(out_of_range("sample coordinate", format!("{x} in row {row}"), "[0, 1]"));
                }
                let index: Vec<usize> = p.iter().map(|&x| bin_of(x, n)).collect();
                counts[flat_index(n, &index)] += 1;
            }
            let total = points.len() as f64;
            counts.into_iter().map(|c| c as f64 / total).collect()
        }
        InputDistribution::Grid(grid) => {
            if grid.n != n {
                return Err(Error::DimensionMismatch { context: "grid resolution", expected: n, found: grid.n });
            }
            grid.masses.clone()
        }
    };

    let mut masses = vec![full];
    for _ in 1..d {
        let finer = masses.last().expect("nonempty");
        let coarser: Vec<f64> = finer.chunks(n).map(|c| c.iter().sum()).collect();
        masses.push(coarser);
    }
    masses.reverse();

    let mut conditionals = Vec::with_capacity(d);
    let mut argmax = Vec::with_capacity(d);
    for k in 0..d {
        let level = &masses[k];
        let mut cond = Vec::with_capacity(level.len());
        let mut best = Vec::with_capacity(level.len() / n);
        for (parent, group) in level.chunks(n).enumerate() {
            let parent_mass = if k == 0 { 1.0 } else { masses[k - 1][parent] };
            let row: Vec<f64> = if parent_mass == 0.0 {
                vec![1.0 / n as f64; n]
            } else {
                group.iter().map(|&m| m / parent_mass).collect()
            };
            let mut arg = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            best.push(arg);
            cond.extend(row);
        }
        conditionals.push(cond);
        argmax.push(best);
    }
    Ok(PrefixMassLedger { d, n, masses, conditionals, argmax, quantized: None })
}

/// `⌈x⌉`, treating values within `1e-9` (relative) of an integer as that integer so that
/// conditionals already on the grid are not pushed up by rounding noise.
fn ceil_tolerant(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as i64
    } else {
        x.ceil() as i64
    }
}

/// Fills the quantized fields for `δ = 1/denominator`.
///
/// Within each sibling group, non-argmax conditionals become `δ⌈n/δ⌉` (or `δ` if their
/// mass is zero; `δ⌈(1/δ)(1/n)⌉` if the parent mass is zero) and the argmax receives the
/// complement. Quantized masses are the running products `m̃_{i_k} = ñ_{i_k} m̃_{i_{k−1}}`,
/// evaluated exactly from the integer numerators.
pub fn quantize_masses(ledger: &PrefixMassLedger, denominator: u64) -> Result<PrefixMassLedger> {
    if denominator == 0 || denominator > i64::MAX as u64 {
        return Err(Error::InvalidDelta(denominator as i64));
    }
    let (d, n) = (ledger.d, ledger.n);
    let a = denominator as i64;
    let af = denominator as f64;
    let mut numerators = Vec::with_capacity(d);
    for k in 0..d {
        let mut level = Vec::with_capacity(ledger.masses[k].len());
        for (parent, group) in ledger.masses[k].chunks(n).enumerate() {
            let parent_mass = if k == 0 { 1.0 } else { ledger.masses[k - 1][parent] };
            let star = ledger.argmax[k][parent];
            let mut row: Vec<i64> = (0..n)
                .map(|j| {
                    if j == star {
                        0
                    } else if parent_mass == 0.0 {
                        ceil_tolerant(af / n as f64)
                    } else if group[j] > 0.0 {
                        ceil_tolerant(ledger.conditionals[k][parent * n + j] * af)
                    } else {
                        1
                    }
                })
                .collect();
            let others: i64 = row.iter().sum();
            row[star] = a - others;
            level.extend(row);
        }
        numerators.push(level);
    }
    let mut masses: Vec<Vec<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let level = (0..numerators[k].len())
            .map(|flat| {
                let prefix = multi_index(n, k + 1, flat);
                let path: Vec<i64> = (0..=k).map(|t| numerators[t][flat_index(n, &prefix[..=t])]).collect();
                if path.iter().all(|&q| q > 0) {
                    rational_product(path.iter().map(|&q| q as u64), denominator)
                } else {
                    path.iter().map(|&q| q as f64 / af).product()
                }
            })
            .collect();
        masses.push(level);
    }
    Ok(PrefixMassLedger { quantized: Some(QuantizedLevels { denominator, numerators, masses }), ..ledger.clone() })
}

impl PrefixMassLedger {
    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Resolution `n`.
    pub fn resolution(&self) -> usize {
        self.n
    }

    fn slot(&self, prefix: &[usize]) -> Result<(usize, usize)> {
        if prefix.is_empty() || prefix.len() > self.d {
            return Err(out_of_range("prefix length", prefix.len(), format!("[1, {}]", self.d)));
        }
        if let Some(&bad) = prefix.iter().find(|&&k| k >= self.n) {
            return Err(out_of_range("prefix index", bad, format!("[0, {})", self.n)));
        }
        Ok((prefix.len() - 1, flat_index(self.n, prefix)))
    }

    fn q(&self) -> Result<&QuantizedLevels> {
        self.quantized.as_ref().ok_or(Error::Unquantized)
    }

    /// Original mass `m_{i_k}`.
    pub fn mass(&self, prefix: &[usize]) -> Result<f64> {
        let (k, f) = self.slot(prefix)?;
        Ok(self.masses[k][f])
    }

    /// Original conditional `n_{i_k}`.
    pub fn conditional(&self, prefix: &[usize]) -> Result<f64> {
        let (k, f) = self.slot(prefix)?;
        Ok(self.conditionals[k][f])
    }

    /// Argmax sibling index among the children of `parent` (length `0..d`).
    pub fn argmax(&self, parent: &[usize]) -> Result<usize> {
        if parent.len() >= self.d {
            return Err(out_of_range("parent prefix length", parent.len(), format!("[0, {}]", self.d - 1)));
        }
        Ok(self.argmax[parent.len()][flat_index(self.n, parent)])
    }

    /// Whether the quantized fields are filled.
    pub fn is_quantized(&self) -> bool {
        self.quantized.is_some()
    }

    /// Quantization denominator `A`.
    pub fn denominator(&self) -> Result<u64> {
        Ok(self.q()?.denominator)
    }

    /// Integer numerator `q` with `ñ_{i_k} = q/A`.
    pub fn quantized_numerator(&self, prefix: &[usize]) -> Result<i64> {
        let (k, f) = self.slot(prefix)?;
        Ok(self.q()?.numerators[k][f])
    }

    /// Quantized conditional `ñ_{i_k}`.
    pub fn quantized_conditional(&self, prefix: &[usize]) -> Result<f64> {
        let q = self.q()?;
        Ok(self.quantized_numerator(prefix)? as f64 / q.denominator as f64)
    }

    /// Quantized mass `m̃_{i_k}`.
    pub fn quantized_mass(&self, prefix: &[usize]) -> Result<f64> {
        let (k, f) = self.slot(prefix)?;
        Ok(self.q()?.masses[k][f])
    }

    /// True when `δ < 1/(n(n−1))`, the condition guaranteeing positive quantized masses.
    pub fn positivity_guaranteed(&self) -> Result<bool> {
        let a = self.q()?.denominator as u128;
        let n = self.n as u128;
        Ok(n * n.saturating_sub(1) < a)
    }

    /// Quantized full-tile masses `m̃_{i_d}` in row-major order.
    pub fn quantized_cell_masses(&self) -> Result<&[f64]> {
        Ok(&self.q()?.masses[self.d - 1])
    }

    /// Original full-tile masses `m_{i_d}` in row-major order.
    pub fn cell_masses(&self) -> &[f64] {
        &self.masses[self.d - 1]
    }
}

/// Assembles the δ-quantized histogram: conditional rows `w = n ñ` and weights `w_z = n^d m̃_z`.
pub fn assemble_histogram(ledger: &PrefixMassLedger) -> Result<QuantizedHistogramD> {
    let q = ledger.q()?;
    let (d, n) = (ledger.d, ledger.n);
    let mut levels = Vec::with_capacity(d);
    for (k, level) in q.numerators.iter().enumerate() {
        let mut row = Vec::with_capacity(level.len());
        for (flat, &num) in level.iter().enumerate() {
            if num <= 0 {
                return Err(Error::ZeroMass { prefix: multi_index(n, k + 1, flat) });
            }
            row.push(num as u64);
        }
        levels.push(row);
    }
    let table = ConditionalTable::new(d, n, q.denominator, levels)?;
    QuantizedHistogramD::from_table(d, n, table)
}

/// Residual `|RHS − m̃_{i_k}|` of the mass-borrowing identity
///
/// ```text
/// m̃_{i_k} = m_{i_k}
///          + Σ_{k'=1}^{k} χ[i_{k'} ≠ i*] · Ῡ(k, k'+1) · (ñ_{i_{k'}} − n_{i_{k'}}) · Υ^η(k'−1, 1)
///          − Σ_{k'=1}^{k} χ[i_{k'} = i*] · Υ(k, k'+1) · (n_{i_{k'}} − ñ_{i_{k'}}) · Υ^η(k'−1, 1)
/// ```
///
/// where `Υ(b, a) = n_{i_b} ⋯ n_{i_a}`, `Ῡ` is the same product of quantized conditionals `ñ`,
/// `Υ^η` the product of `η_{i_j}` (`n_{i_j}` off the argmax, `ñ_{i_j}` on it), empty products
/// are 1, and `i*` is the argmax of the sibling group at that level.
pub fn verify_mass_identity(ledger: &PrefixMassLedger, prefix: &[usize]) -> Result<f64> {
    let lhs = ledger.quantized_mass(prefix)?;
    let k = prefix.len();
    let mut n_vals = Vec::with_capacity(k);
    let mut nt_vals = Vec::with_capacity(k);
    let mut is_star = Vec::with_capacity(k);
    for j in 0..k {
        n_vals.push(ledger.conditional(&prefix[..=j])?);
        nt_vals.push(ledger.quantized_conditional(&prefix[..=j])?);
        is_star.push(ledger.argmax(&prefix[..j])? == prefix[j]);
    }
    let eta: Vec<f64> = (0..k).map(|j| if is_star[j] { nt_vals[j] } else { n_vals[j] }).collect();
    // Products over 0-based positions lo..hi (exclusive), i.e. 1-based indices lo+1..=hi.
    let prod = |v: &[f64], lo: usize, hi: usize| -> f64 { v[lo.min(hi)..hi].iter().product() };
    let mut rhs = ledger.mass(prefix)?;
    for kp in 1..=k {
        let j = kp - 1;
        let head = prod(&eta, 0, j);
        if is_star[j] {
            rhs -= prod(&n_vals, kp, k) * (n_vals[j] - nt_vals[j]) * head;
        } else {
            rhs += prod(&nt_vals, kp, k) * (nt_vals[j] - n_vals[j]) * head;
        }
    }
    Ok((rhs - lhs).abs())
}

/// Default quantization denominator `A = ⌈√d (d+1) n (n−1)⌉` (δ = 1/A).
pub fn default_delta(d: usize, n: usize) -> Result<u64> {
    if n < 2 {
        return Err(out_of_range("resolution n for the default δ", n, "at least 2"));
    }
    if d == 0 {
        return Err(out_of_range("dimension d", 0, "at least 1"));
    }
    let x = (d as f64).sqrt() * (d as f64 + 1.0) * (n as f64) * (n as f64 - 1.0);
    Ok(ceil_tolerant(x) as u64)
}

/// Bound `2√d/n + d(d+1)/2 · (n−1) δ` on the Wasserstein distance between a distribution and its
/// δ-quantized histogram.
pub fn quantization_bound(d: usize, n: usize, delta: f64) -> f64 {
    let df = d as f64;
    2.0 * df.sqrt() / n as f64 + df * (df + 1.0) / 2.0 * (n as f64 - 1.0) * delta
}
