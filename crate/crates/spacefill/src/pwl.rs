//! Piecewise-linear function algebra and the exact transport map.
//!
//! A continuous piecewise-linear function is stored in ramp form
//! `f(x) = Σ_i a_i ρ(x − b_i)` with `ρ(x) = max(x, 0)`, which is exactly the
//! function computed by a two-layer ReLU network with one hidden neuron per ramp.
//!
//! The module also hosts the mathematical transport map `M: [0,1] → [0,1]^d`
//! that pushes the uniform distribution onto a histogram target up to a
//! refinement error. It is built from one *shaping function* `f^{z}` per index
//! prefix `z` (a PWL map with `f^{z}#U` equal to the conditional histogram of
//! the next coordinate) and the sawtooth `g_s`:
//!
//! ```text
//! F_0(x)          = x
//! F_r(x, (p,k))   = g_s(n · f^{p}(F_{r-1}(x, p)) − k)        (|p| = r−1, k ∈ [0:n−1])
//! Z_r(x)          = Σ_{|p| = r−1} f^{p}(F_{r-1}(x, p))
//! M(x)            = (Z_1(x), …, Z_d(x))
//! ```
//!
//! [`TransportSpec`] evaluates this recursion directly and serves as the oracle
//! for the network builders in [`crate::relunet`].
//!
//! ```
//! use spacefill::pwl::{sawtooth_eval, pwl_from_uniform_histogram};
//!
//! assert_eq!(sawtooth_eval(2, 0.125), 0.5);
//! let f = pwl_from_uniform_histogram(&[0.5, 1.5]).unwrap();
//! assert!((f.eval(0.25) - 0.5).abs() < 1e-15);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::histogram::{flat_index, multi_index, BinKind, GeneralHistogram1D, HistogramD, QuantizedHistogramD};

/// Rectified linear unit `max(x, 0)`.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// The tent map `g`: `2x` on `[0, ½)`, `2(1 − x)` on `[½, 1]`, and `0` elsewhere.
#[inline]
pub fn tent(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        0.0
    } else if x < 0.5 {
        2.0 * x
    } else {
        2.0 * (1.0 - x)
    }
}

/// The sawtooth `g_s`, the `s`-fold composition of the tent map (`2^{s-1}` teeth on `[0,1]`).
///
/// Returns 0 outside `[0,1]`. `s = 0` is accepted and gives the identity on `[0,1]`.
pub fn sawtooth_eval(s: u32, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    (0..s).fold(x, |y, _| tent(y))
}

/// Continuous piecewise-linear function in ramp form `Σ a_i ρ(x − b_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPwl")]
pub struct PiecewiseLinear {
    ramps: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct RawPwl {
    ramps: Vec<(f64, f64)>,
}

impl TryFrom<RawPwl> for PiecewiseLinear {
    type Error = Error;
    fn try_from(raw: RawPwl) -> Result<Self> {
        PiecewiseLinear::new(raw.ramps)
    }
}

impl PiecewiseLinear {
    /// Builds from `(a_i, b_i)` pairs; knots must be finite and nondecreasing.
    pub fn new(ramps: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(i) = ramps.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(out_of_range("ramp", format!("{:?} at index {i}", ramps[i]), "finite values"));
        }
        if let Some(i) = ramps.windows(2).position(|w| w[1].1 < w[0].1) {
            return Err(out_of_range(
                "ramp knot",
                format!("{} after {}", ramps[i + 1].1, ramps[i].1),
                "nondecreasing knots",
            ));
        }
        Ok(Self { ramps })
    }

    /// The identity `x ↦ x` on `[0, ∞)`.
    pub fn identity() -> Self {
        Self { ramps: vec![(1.0, 0.0)] }
    }

    /// `(a_i, b_i)` pairs in knot order.
    pub fn ramps(&self) -> &[(f64, f64)] {
        &self.ramps
    }

    /// Evaluates `Σ a_i ρ(x − b_i)`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.ramps.iter().map(|&(a, b)| a * relu(x - b)).sum()
    }

    /// Slope on the piece immediately to the right of `x`.
    pub fn slope_right_of(&self, x: f64) -> f64 {
        self.ramps.iter().filter(|&&(_, b)| b <= x).map(|&(a, _)| a).sum()
    }

    /// Linear pieces on `[0, 1]` as `(x_0, x_1, slope)` with `x_0 < x_1`.
    pub fn pieces_on_unit(&self) -> Vec<(f64, f64, f64)> {
        let mut cuts: Vec<f64> = vec![0.0];
        cuts.extend(self.ramps.iter().map(|&(_, b)| b).filter(|&b| b > 0.0 && b < 1.0));
        cuts.push(1.0);
        cuts.dedup();
        cuts.windows(2).map(|w| (w[0], w[1], self.slope_right_of(w[0]))).collect()
    }
}

/// Slope tolerance below which a piece is treated as flat (an atom in the pushforward).
fn flat_tolerance(f: &PiecewiseLinear) -> f64 {
    1e-10 * f.ramps().iter().map(|(a, _)| a.abs()).fold(1.0, f64::max)
}

/// PWL map `f` with `f#U = h` for a general 1-D histogram (atoms become flat plateaus).
///
/// Knots are `b_0 = 0`, `b_i = Σ_{k<i} w_k d(t_k, t_{k+1})`, and each ramp coefficient is
/// the change of slope at the knot: the slope on bin `i` is `1/w_i` for an interval and `0`
/// for an atom, so `a_i = slope_i − slope_{i−1}` (with `slope_{−1} = 0`). This reproduces the
/// case analysis `a_0 = 1/w_0` (or `a_0 = 0, a_1 = 1/w_1` for a leading atom),
/// `a_k = −1/w_{k−1}, a_{k+1} = 1/w_{k+1}` around an atom `k`, and
/// `a_k = 1/w_k − 1/w_{k−1}` between intervals.
pub fn pwl_from_general_histogram(h: &GeneralHistogram1D) -> Result<PiecewiseLinear> {
    h.validate()?;
    let mut ramps = Vec::with_capacity(h.len());
    let mut knot = 0.0;
    let mut previous_slope = 0.0;
    for bin in h.bins() {
        let slope = match bin.kind {
            BinKind::Interval => 1.0 / bin.weight,
            BinKind::Atom => 0.0,
        };
        ramps.push((slope - previous_slope, knot));
        knot += bin.mass();
        previous_slope = slope;
    }
    PiecewiseLinear::new(ramps)
}

fn check_uniform_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Empty("histogram weights"));
    }
    if let Some(index) = w.iter().position(|&x| !x.is_finite() || x <= 0.0) {
        return Err(crate::histogram::Violation::NonpositiveWeight { index, value: w[index] }.into());
    }
    Ok(())
}

/// Knots `b_i = (1/n) Σ_{k<i} w_k` for `i = 0..=n` of a uniform-tile histogram.
pub fn uniform_knots(w: &[f64]) -> Vec<f64> {
    let n = w.len() as f64;
    let mut knots = Vec::with_capacity(w.len() + 1);
    let mut acc = 0.0;
    knots.push(0.0);
    for &wk in w {
        acc += wk;
        knots.push(acc / n);
    }
    knots
}

/// PWL map `f` with `f#U` equal to the uniform-tile histogram with density weights `w`
/// (`Σ w = n`): `a_0 = 1/w_0`, `a_i = 1/w_i − 1/w_{i−1}`, `b_i = (1/n) Σ_{k<i} w_k`.
///
/// On `[b_ℓ, b_{ℓ+1}]` the result equals `x/w_ℓ − (Σ_{i<ℓ} w_i)/(n w_ℓ) + ℓ/n`.
pub fn pwl_from_uniform_histogram(w: &[f64]) -> Result<PiecewiseLinear> {
    check_uniform_weights(w)?;
    let knots = uniform_knots(w);
    let ramps = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let a = if i == 0 { 1.0 / wi } else { 1.0 / wi - 1.0 / w[i - 1] };
            (a, knots[i])
        })
        .collect();
    PiecewiseLinear::new(ramps)
}

/// The same function as [`pwl_from_uniform_histogram`], written with every interior slope
/// change split into two ramps `(1/w_i, b_i)` and `(−1/w_{i−1}, b_i)`.
///
/// Both coefficients are reciprocals of conditional densities, so for a δ-quantized
/// histogram every coefficient has its reciprocal on the quantization grid. The merged
/// difference `1/w_i − 1/w_{i−1}` generally does not.
pub fn pwl_from_uniform_histogram_split(w: &[f64]) -> Result<PiecewiseLinear> {
    check_uniform_weights(w)?;
    let knots = uniform_knots(w);
    let mut ramps = vec![(1.0 / w[0], 0.0)];
    for i in 1..w.len() {
        ramps.push((-1.0 / w[i - 1], knots[i]));
        ramps.push((1.0 / w[i], knots[i]));
    }
    PiecewiseLinear::new(ramps)
}

/// Distribution `f#U` of a PWL map `f: [0,1] → [0,1]` with `f(0) = 0` and `f(1) = 1`.
///
/// Each linear piece `I_j` with slope `m_j ≠ 0` contributes density `1/|m_j|` on its image
/// `R_j` (mass `|I_j|` spread over `|R_j|`); a flat piece contributes an atom of mass `|I_j|`.
/// Overlapping images add up. Adjacent interval bins with equal density are merged so the
/// representation is canonical.
pub fn pushforward_histogram(f: &PiecewiseLinear) -> Result<GeneralHistogram1D> {
    const BOUNDARY_TOL: f64 = 1e-12;
    const SNAP_TOL: f64 = 1e-12;
    let f0 = f.eval(0.0);
    let f1 = f.eval(1.0);
    if f0.abs() > BOUNDARY_TOL || (f1 - 1.0).abs() > BOUNDARY_TOL {
        return Err(Error::BoundaryCondition(format!("need f(0)=0 and f(1)=1, got f(0)={f0}, f(1)={f1}")));
    }
    let flat = flat_tolerance(f);
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut intervals: Vec<(f64, f64, f64)> = Vec::new();
    for (x0, x1, slope) in f.pieces_on_unit() {
        let (y0, y1) = (f.eval(x0), f.eval(x1));
        for y in [y0, y1] {
            if !(-BOUNDARY_TOL..=1.0 + BOUNDARY_TOL).contains(&y) {
                return Err(Error::BoundaryCondition(format!("f leaves [0,1]: f({x0})..f({x1}) reaches {y}")));
            }
        }
        if slope.abs() <= flat {
            atoms.push((y0.clamp(0.0, 1.0), x1 - x0));
        } else {
            let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
            intervals.push((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0), 1.0 / slope.abs()));
        }
    }

    // Sorted, snapped set of image breakpoints.
    let mut points: Vec<f64> = vec![0.0, 1.0];
    points.extend(atoms.iter().map(|a| a.0));
    points.extend(intervals.iter().flat_map(|i| [i.0, i.1]));
    points.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = Vec::new();
    for p in points {
        match grid.last() {
            Some(&last) if p - last <= SNAP_TOL => {}
            _ => grid.push(p),
        }
    }
    *grid.first_mut().expect("nonempty") = 0.0;
    let last = grid.len() - 1;
    if last == 0 {
        return Err(Error::BoundaryCondition("image of f is a single point".into()));
    }
    grid[last] = 1.0;
    let snap = |y: f64| -> usize {
        grid.iter()
            .enumerate()
            .min_by(|a, b| (a.1 - y).abs().total_cmp(&(b.1 - y).abs()))
            .map(|(i, _)| i)
            .expect("nonempty grid")
    };

    let mut atom_mass = vec![0.0; grid.len()];
    for &(y, m) in &atoms {
        atom_mass[snap(y)] += m;
    }
    let mut density = vec![0.0; grid.len() - 1];
    for &(lo, hi, rho) in &intervals {
        let (a, b) = (snap(lo), snap(hi));
        for slot in &mut density[a..b] {
            *slot += rho;
        }
    }

    // Bins in order: an optional atom at each grid point, then the interval to the next one.
    let mut bins: Vec<(f64, f64, f64)> = Vec::new();
    for j in 0..grid.len() {
        if atom_mass[j] > 0.0 {
            bins.push((grid[j], grid[j], atom_mass[j]));
        }
        if j + 1 == grid.len() {
            break;
        }
        let rho = density[j];
        if rho <= 0.0 {
            return Err(Error::BoundaryCondition(format!("image of f misses ({}, {})", grid[j], grid[j + 1])));
        }
        match bins.last_mut() {
            Some(last) if last.0 < last.1 && (last.2 - rho).abs() <= 1e-12 * rho.max(last.2) => last.1 = grid[j + 1],
            _ => bins.push((grid[j], grid[j + 1], rho)),
        }
    }
    let mut breakpoints = vec![bins[0].0];
    breakpoints.extend(bins.iter().map(|b| b.1));
    let weights = bins.iter().map(|b| b.2).collect();
    GeneralHistogram1D::new(breakpoints, weights)
}

/// Closed interval `[lo, hi]` with the operations used to track transported mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `[lo, hi]`.
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `[0, 1]`.
    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    /// Length `hi − lo`.
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// True for a degenerate interval.
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    /// Nesting `[a,b] ⋄ [c,d] = [a + c(b−a), a + d(b−a)]`: the sub-interval of `self`
    /// occupying the relative position `inner`.
    pub fn diamond(self, inner: Interval) -> Interval {
        let len = self.len();
        Interval { lo: self.lo + inner.lo * len, hi: self.lo + inner.hi * len }
    }

    /// Mirror image `S([a,b]) = [1 − b, 1 − a]`.
    pub fn reversed(self) -> Interval {
        Interval { lo: 1.0 - self.hi, hi: 1.0 - self.lo }
    }

    /// Affine chart `N(x, [a,b]) = a + x(b − a)` from `[0,1]` onto the interval.
    pub fn chart(&self, x: f64) -> f64 {
        self.lo + x * self.len()
    }
}

/// Dyadic interval `Δ_h = [h/2^s, (h+1)/2^s]`.
pub fn dyadic(h: usize, s: u32) -> Interval {
    let scale = (s as f64).exp2();
    Interval::new(h as f64 / scale, (h + 1) as f64 / scale)
}

/// Refined sub-cube `c^h_z = ⨉_i (c_{z_i} ⋄ Δ_{h_i})` of side `1/(n 2^s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedCell {
    pub z: Vec<usize>,
    pub h: Vec<usize>,
}

impl RefinedCell {
    /// Per-coordinate bounds `[z_i/n + h_i/(2^s n), z_i/n + (h_i+1)/(2^s n)]`.
    pub fn bounds(&self, n: usize, s: u32) -> Vec<Interval> {
        let n = n as f64;
        self.z
            .iter()
            .zip(&self.h)
            .map(|(&z, &h)| Interval::new(z as f64 / n, (z + 1) as f64 / n).diamond(dyadic(h, s)))
            .collect()
    }

    /// Row-major index of the cell in the refined grid with `n 2^s` cells per side.
    pub fn grid_index(&self, n: usize, s: u32) -> usize {
        let side = n << s;
        self.z.iter().zip(&self.h).fold(0, |acc, (&z, &h)| acc * side + (z << s) + h)
    }

    /// Inverse of [`grid_index`](Self::grid_index).
    pub fn from_grid_index(n: usize, s: u32, d: usize, flat: usize) -> Self {
        let coords = multi_index(n << s, d, flat);
        let mask = (1usize << s) - 1;
        RefinedCell { z: coords.iter().map(|&c| c >> s).collect(), h: coords.iter().map(|&c| c & mask).collect() }
    }
}

/// Shaping function of one index prefix: conditional weights, knots and ramp form.
#[derive(Debug, Clone, PartialEq)]
pub struct Shaping {
    weights: Vec<f64>,
    knots: Vec<f64>,
    f: PiecewiseLinear,
}

impl Shaping {
    fn new(weights: Vec<f64>, knots: Vec<f64>) -> Result<Self> {
        let f = pwl_from_uniform_histogram(&weights)?;
        Ok(Self { weights, knots, f })
    }

    /// Conditional density weights (sum to `n`).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Knots `b_0 = 0, …, b_n = 1`; the tile `[k/n, (k+1)/n]` is the image of `[b_k, b_{k+1}]`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// The shaping function in ramp form.
    pub fn function(&self) -> &PiecewiseLinear {
        &self.f
    }

    /// `P_r = [b_r, b_{r+1}]`, the preimage of tile `r` under the shaping function.
    pub fn tile_preimage(&self, r: usize) -> Interval {
        Interval::new(self.knots[r], self.knots[r + 1])
    }

    /// `f^{-1}(v)` for `v ∈ [0, 1]`, computed on the linear piece containing `v`.
    pub fn inverse(&self, v: f64) -> f64 {
        let n = self.weights.len();
        let k = ((v * n as f64).floor() as usize).min(n - 1);
        self.knots[k] + (v - k as f64 / n as f64) * self.weights[k]
    }
}

/// The transport map of a histogram target at sawtooth order `s`.
#[derive(Debug, Clone)]
pub struct TransportSpec {
    target: HistogramD,
    denominator: Option<u64>,
    s: u32,
    /// `levels[t][flat(p)]` is the shaping function of the prefix `p` of length `t`.
    levels: Vec<Vec<Shaping>>,
}

impl TransportSpec {
    /// Builds the map for a (not necessarily quantized) histogram.
    pub fn new(target: &HistogramD, s: u32) -> Result<Self> {
        target.validate()?;
        check_order(s)?;
        let (d, n) = (target.dim(), target.resolution());
        let mut levels = Vec::with_capacity(d);
        for t in 0..d {
            let mut level = Vec::with_capacity(n.pow(t as u32));
            for row in 0..n.pow(t as u32) {
                let w = target.conditional(&multi_index(n, t, row))?;
                let knots = uniform_knots(&w);
                level.push(Shaping::new(w, knots)?);
            }
            levels.push(level);
        }
        Ok(Self { target: target.clone(), denominator: None, s, levels })
    }

    /// Builds the map for a δ-quantized target, taking the conditionals from its exact table.
    pub fn from_quantized(target: &QuantizedHistogramD, s: u32) -> Result<Self> {
        check_order(s)?;
        let base = target.base();
        let (d, n) = (base.dim(), base.resolution());
        let table = target.table();
        let a = table.denominator();
        let mut levels = Vec::with_capacity(d);
        for t in 0..d {
            let mut level = Vec::with_capacity(n.pow(t as u32));
            for row in 0..n.pow(t as u32) {
                let prefix = multi_index(n, t, row);
                let q = table.numerators(&prefix);
                let mut knots = vec![0.0];
                let mut acc = 0u64;
                for &qk in q {
                    acc += qk;
                    knots.push(acc as f64 / a as f64);
                }
                level.push(Shaping::new(table.weights(&prefix), knots)?);
            }
            levels.push(level);
        }
        Ok(Self { target: base.clone(), denominator: Some(a), s, levels })
    }

    /// The same target at a different sawtooth order.
    pub fn with_order(&self, s: u32) -> Result<Self> {
        check_order(s)?;
        Ok(Self { s, ..self.clone() })
    }

    /// Target histogram.
    pub fn target(&self) -> &HistogramD {
        &self.target
    }

    /// Quantization denominator `A` when built from a δ-quantized target.
    pub fn denominator(&self) -> Option<u64> {
        self.denominator
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Resolution `n`.
    pub fn resolution(&self) -> usize {
        self.target.resolution()
    }

    /// Sawtooth order `s`.
    pub fn order(&self) -> u32 {
        self.s
    }

    /// Refined cells per side, `n 2^s`.
    pub fn cells_per_side(&self) -> usize {
        self.resolution() << self.s
    }

    /// Shaping function of a prefix of length `0..d`.
    pub fn shaping(&self, prefix: &[usize]) -> &Shaping {
        &self.levels[prefix.len()][flat_index(self.resolution(), prefix)]
    }

    /// All shaping functions of prefixes of length `t`, in row-major prefix order.
    pub fn shaping_level(&self, t: usize) -> &[Shaping] {
        &self.levels[t]
    }

    /// Evaluates `M(x) = (Z_1, …, Z_d)` for `x ∈ [0, 1]`.
    pub fn transport_eval(&self, x: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(out_of_range("transport input", x, "[0, 1]"));
        }
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Evaluates `M(x)` into `out` (length `d`), without domain checks.
    ///
    /// The recursion visits prefixes in natural order and skips a subtree only when its
    /// `F` value is exactly zero; such a subtree contributes exact zeros (`f(0) = 0` and
    /// `g_s(−k) = 0`), so the result is bit-identical to the unpruned recursion.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let n = self.resolution();
        let nf = n as f64;
        let d = self.dim();
        let mut active: Vec<(usize, f64)> = vec![(0, x)];
        let mut next: Vec<(usize, f64)> = Vec::new();
        for (r, slot) in out.iter_mut().enumerate().take(d) {
            let mut z = 0.0;
            next.clear();
            for &(p, y) in &active {
                let fy = self.levels[r][p].f.eval(y);
                z += fy;
                if r + 1 < d {
                    for k in 0..n {
                        let v = sawtooth_eval(self.s, nf * fy - k as f64);
                        if v != 0.0 {
                            next.push((p * n + k, v));
                        }
                    }
                }
            }
            *slot = z;
            std::mem::swap(&mut active, &mut next);
            active.retain(|&(_, v)| v != 0.0);
        }
    }

    /// Full recursion without pruning: `levels[r][flat(p)] = F_r(x, p)` for `r = 0..d`.
    pub fn f_values(&self, x: f64) -> Vec<Vec<f64>> {
        let n = self.resolution();
        let nf = n as f64;
        let mut out = vec![vec![x]];
        for r in 1..self.dim() {
            let prev = &out[r - 1];
            let mut level = Vec::with_capacity(prev.len() * n);
            for (p, &y) in prev.iter().enumerate() {
                let fy = self.levels[r - 1][p].f.eval(y);
                for k in 0..n {
                    level.push(sawtooth_eval(self.s, nf * fy - k as f64));
                }
            }
            out.push(level);
        }
        out
    }

    /// `Z_r` computed from the unpruned recursion (`r = 1..=d`).
    pub fn z_from_f_values(&self, f_values: &[Vec<f64>], r: usize) -> f64 {
        f_values[r - 1].iter().enumerate().map(|(p, &y)| self.levels[r - 1][p].f.eval(y)).sum()
    }

    /// The interval `T_d ⊆ [0,1]` that the map sends into the refined cell `c^h_z`.
    ///
    /// With `P_i = P^{z_{<i}}_{z_i} ⋄ Δ_{h_i}`: `T_1 = P_1`, and `T_i = T_{i−1} ⋄ P_i` when
    /// `h_1 + … + h_{i−1}` is even, `T_i = T_{i−1} ⋄ S(P_i)` when it is odd. Its length is
    /// `cell_mass(z) / 2^{sd}`.
    pub fn t_interval(&self, z: &[usize], h: &[usize]) -> Result<Interval> {
        Ok(*self.t_chain(z, h)?.last().expect("d ≥ 1"))
    }

    /// The whole chain `T_1 ⊇ T_2 ⊇ … ⊇ T_d`.
    pub fn t_chain(&self, z: &[usize], h: &[usize]) -> Result<Vec<Interval>> {
        let (d, n) = (self.dim(), self.resolution());
        for (name, v, bound) in [("z", z, n), ("h", h, 1usize << self.s)] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { context: "refined cell index", expected: d, found: v.len() });
            }
            if let Some(&bad) = v.iter().find(|&&k| k >= bound) {
                return Err(out_of_range(
                    if name == "z" { "tile index" } else { "refinement index" },
                    bad,
                    format!("[0, {bound})"),
                ));
            }
        }
        let mut chain = Vec::with_capacity(d);
        let mut t = Interval::unit();
        let mut parity = 0usize;
        for i in 0..d {
            let p = self.shaping(&z[..i]).tile_preimage(z[i]).diamond(dyadic(h[i], self.s));
            t = t.diamond(if parity.is_multiple_of(2) { p } else { p.reversed() });
            chain.push(t);
            parity += h[i];
        }
        Ok(chain)
    }

    /// Sorted breakpoints of the scalar map `x ↦ M(x)` on `[0, 1]`, found by symbolic
    /// composition of the piecewise-linear stages (independent of [`t_interval`](Self::t_interval)).
    ///
    /// `M` is affine between consecutive returned points.
    pub fn breakpoints(&self) -> Vec<f64> {
        let n = self.resolution();
        let nf = n as f64;
        let d = self.dim();
        let teeth = 1usize << self.s;
        let mut all: Vec<f64> = vec![0.0, 1.0];
        let mut level: Vec<(usize, Polyline)> = vec![(0, Polyline::identity())];
        for r in 0..d {
            let mut next = Vec::new();
            for (p, poly) in &level {
                let shaping = &self.levels[r][*p];
                let inner_knots = &shaping.knots[1..n];
                let z_term = poly.compose(inner_knots, |y| shaping.f.eval(y));
                all.extend(z_term.points.iter().map(|q| q.0));
                if r + 1 == d {
                    continue;
                }
                for k in 0..n {
                    let mut knots: Vec<f64> = inner_knots.to_vec();
                    knots.extend((0..=teeth).map(|j| {
                        if j == teeth {
                            shaping.knots[k + 1]
                        } else {
                            shaping.knots[k] + (j as f64 / teeth as f64) / nf * shaping.weights[k]
                        }
                    }));
                    knots.sort_by(f64::total_cmp);
                    knots.dedup();
                    let child = poly.compose(&knots, |y| sawtooth_eval(self.s, nf * shaping.f.eval(y) - k as f64));
                    if let Some(child) = child.compress_zeros() {
                        next.push((p * n + k, child));
                    }
                }
            }
            level = next;
        }
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

fn check_order(s: u32) -> Result<()> {
    if s == 0 || s > 40 {
        return Err(out_of_range("sawtooth order s", s, "[1, 40]"));
    }
    Ok(())
}

/// Vertices `(x, y)` of a continuous piecewise-linear function on `[0, 1]`.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<(f64, f64)>,
}

impl Polyline {
    fn identity() -> Self {
        Self { points: vec![(0.0, 0.0), (1.0, 1.0)] }
    }

    /// `u ∘ self` where `u` is piecewise linear with the given sorted knots.
    fn compose(&self, knots: &[f64], u: impl Fn(f64) -> f64) -> Polyline {
        let mut points = Vec::with_capacity(self.points.len() * 2);
        points.push((self.points[0].0, u(self.points[0].1)));
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if y0 != y1 {
                let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
                let start = knots.partition_point(|&k| k <= lo);
                let end = knots.partition_point(|&k| k < hi);
                let crossing = |k: f64| (x0 + (k - y0) / (y1 - y0) * (x1 - x0), u(k));
                if y0 < y1 {
                    points.extend(knots[start..end].iter().map(|&k| crossing(k)));
                } else {
                    points.extend(knots[start..end].iter().rev().map(|&k| crossing(k)));
                }
            }
            points.push((x1, u(y1)));
        }
        Polyline { points }
    }

    /// Drops interior vertices inside zero stretches; `None` if the function is identically zero.
    fn compress_zeros(self) -> Option<Polyline> {
        if self.points.iter().all(|p| p.1 == 0.0) {
            return None;
        }
        let pts = &self.points;
        let last = pts.len() - 1;
        let points = pts
            .iter()
            .enumerate()
            .filter(|&(i, p)| i == 0 || i == last || p.1 != 0.0 || pts[i - 1].1 != 0.0 || pts[i + 1].1 != 0.0)
            .map(|(_, &p)| p)
            .collect();
        Some(Polyline { points })
    }
}
