//! Wasserstein-1 distances, pushforward measurement and mass-exactness certificates.
//!
//! * [`w1_1d`] integrates `|F_μ − F_ν|` exactly for 1-D measures made of atoms and
//!   piecewise-constant densities.
//! * [`w_discrete`] solves the discrete optimal transport problem exactly by
//!   successive shortest augmenting paths on the bipartite support graph with
//!   Euclidean costs.
//! * [`pushforward_measure`] bins a deterministic midpoint grid of `[0,1]` through a
//!   scalar map into the refined grid of `n 2^s` cells per side;
//!   [`pushforward_exact`] does the same exactly, from the breakpoints of the
//!   transport map.
//! * [`subcube_exactness`] and [`w_bound_report`] turn these into certificates for
//!   the transport construction.
//!
//! ```
//! use spacefill::wasserstein::{w_discrete, DiscreteMeasure};
//!
//! let mu = DiscreteMeasure::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
//! let nu = DiscreteMeasure::new(vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
//! assert!((w_discrete(&mu, &nu).unwrap().distance - 5.0).abs() < 1e-12);
//! ```

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::histogram::{multi_index, GeneralHistogram1D};
use crate::pwl::{pushforward_histogram, RefinedCell, TransportSpec};
use crate::relunet::ReluNetwork;

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-9;
/// Largest combined support accepted by the exact solver.
pub const EXACT_SUPPORT_LIMIT: usize = 2000;

/// Finitely supported probability measure on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    points: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.points, raw.masses)
    }
}

impl DiscreteMeasure {
    /// Validates equal point dimensions, positive masses and unit total (within `1e-9`).
    pub fn new(points: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("measure support"));
        }
        if points.len() != masses.len() {
            return Err(Error::DimensionMismatch {
                context: "points vs masses",
                expected: points.len(),
                found: masses.len(),
            });
        }
        let d = points[0].len();
        if let Some(bad) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch { context: "point dimension", expected: d, found: bad.len() });
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(out_of_range("point coordinate", "non-finite", "finite"));
        }
        if let Some(&m) = masses.iter().find(|&&m| !m.is_finite() || m <= 0.0) {
            return Err(out_of_range("mass", m, "positive"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Unnormalized { total });
        }
        Ok(Self { points, masses })
    }

    /// Support points.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Masses.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Image under `x ↦ αx + β`.
    pub fn affine_image(&self, alpha: f64, beta: &[f64]) -> Result<Self> {
        if beta.len() != self.dim() {
            return Err(Error::DimensionMismatch { context: "offset", expected: self.dim(), found: beta.len() });
        }
        let points = self.points.iter().map(|p| p.iter().zip(beta).map(|(x, b)| alpha * x + b).collect()).collect();
        Self::new(points, self.masses.clone())
    }
}

/// A 1-D probability measure with a piecewise-linear CDF plus jumps.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure1D {
    /// Finitely many atoms.
    Discrete(DiscreteMeasure),
    /// Piecewise-constant density with optional atoms.
    Histogram(GeneralHistogram1D),
}

impl Measure1D {
    /// Locations where the CDF jumps or changes slope.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Measure1D::Discrete(m) => m.points.iter().map(|p| p[0]).collect(),
            Measure1D::Histogram(h) => h.breakpoints().to_vec(),
        }
    }

    /// Right-continuous CDF `F(x) = P(X ≤ x)` and its left limit `P(X < x)`.
    fn cdf(&self, x: f64) -> (f64, f64) {
        match self {
            Measure1D::Discrete(m) => {
                let mut right = 0.0;
                let mut left = 0.0;
                for (p, &w) in m.points.iter().zip(&m.masses) {
                    if p[0] <= x {
                        right += w;
                    }
                    if p[0] < x {
                        left += w;
                    }
                }
                (right, left)
            }
            Measure1D::Histogram(h) => {
                let mut right = 0.0;
                let mut left = 0.0;
                for bin in h.bins() {
                    if bin.left == bin.right {
                        if bin.left <= x {
                            right += bin.weight;
                        }
                        if bin.left < x {
                            left += bin.weight;
                        }
                    } else {
                        let covered = bin.weight * (x.min(bin.right) - bin.left).max(0.0);
                        right += covered;
                        left += covered;
                    }
                }
                (right, left)
            }
        }
    }

    fn total(&self) -> f64 {
        match self {
            Measure1D::Discrete(m) => m.masses.iter().sum(),
            Measure1D::Histogram(h) => h.bins().map(|b| b.mass()).sum(),
        }
    }

    fn check_dim(&self) -> Result<()> {
        if let Measure1D::Discrete(m) = self {
            if m.dim() != 1 {
                return Err(Error::DimensionMismatch { context: "1-D measure", expected: 1, found: m.dim() });
            }
        }
        Ok(())
    }
}

/// Exact `W_1` on the line: `∫ |F_μ(t) − F_ν(t)| dt` over the merged breakpoint grid.
pub fn w1_1d(mu: &Measure1D, nu: &Measure1D) -> Result<f64> {
    for m in [mu, nu] {
        m.check_dim()?;
        let total = m.total();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Unnormalized { total });
        }
    }
    let mut grid: Vec<f64> = mu.breakpoints();
    grid.extend(nu.breakpoints());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut total = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d0 = mu.cdf(a).0 - nu.cdf(a).0;
        let d1 = mu.cdf(b).1 - nu.cdf(b).1;
        total += integral_abs_linear(d0, d1, b - a);
    }
    Ok(total)
}

/// `∫_0^ℓ |linear from d0 to d1|`.
fn integral_abs_linear(d0: f64, d1: f64, len: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        len * (d0.abs() + d1.abs()) / 2.0
    } else {
        len * (d0 * d0 + d1 * d1) / (2.0 * (d0.abs() + d1.abs()))
    }
}

/// Optimal coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Minimal expected Euclidean transport cost.
    pub distance: f64,
    /// Nonzero entries `(i, j, mass)` of the coupling.
    pub plan: Vec<(usize, usize, f64)>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact discrete `W_1` with Euclidean ground cost.
pub fn w_discrete(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { context: "measure dimension", expected: mu.dim(), found: nu.dim() });
    }
    let support = mu.points.len() + nu.points.len();
    if support > EXACT_SUPPORT_LIMIT {
        return Err(Error::SizeLimit { points: support, limit: EXACT_SUPPORT_LIMIT });
    }
    Ok(min_cost_transport(&mu.masses, &nu.masses, |i, j| euclidean(&mu.points[i], &nu.points[j])))
}

/// Balanced transportation problem solved by successive shortest paths with potentials.
///
/// Supplies and demands may carry any common positive total; the returned plan is in the
/// original units. Residual amounts below `1e-14` of the total are treated as zero.
pub fn min_cost_transport(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> TransportPlan {
    let total: f64 = supply.iter().sum();
    if total.is_nan() || total <= 0.0 || supply.is_empty() || demand.is_empty() {
        return TransportPlan { distance: 0.0, plan: Vec::new() };
    }
    let (s, t) = (supply.len(), demand.len());
    let c: Vec<f64> = (0..s).flat_map(|i| (0..t).map(move |j| (i, j))).map(|(i, j)| cost(i, j)).collect();
    let mut sup: Vec<f64> = supply.iter().map(|x| x / total).collect();
    let demand_total: f64 = demand.iter().sum();
    let mut dem: Vec<f64> = demand.iter().map(|x| x / demand_total).collect();
    let mut flow = vec![0.0; s * t];
    let eps = 1e-14;
    let v = s + t;
    let mut pot = vec![0.0; v];
    let mut remaining: f64 = 1.0;
    let mut guard = 0usize;
    while remaining > eps && guard < 50 * v * v {
        guard += 1;
        // Dijkstra from all sources with residual supply over the residual graph.
        let mut dist = vec![f64::INFINITY; v];
        let mut prev = vec![usize::MAX; v];
        let mut done = vec![false; v];
        for i in 0..s {
            if sup[i] > eps {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for x in 0..v {
                if !done[x] && dist[x] < best {
                    best = dist[x];
                    u = x;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < s {
                for j in 0..t {
                    let w = s + j;
                    let rc = (c[u * t + j] + pot[u] - pot[w]).max(0.0);
                    if dist[u] + rc < dist[w] {
                        dist[w] = dist[u] + rc;
                        prev[w] = u;
                    }
                }
            } else {
                let j = u - s;
                for i in 0..s {
                    if flow[i * t + j] > eps {
                        let rc = (-c[i * t + j] + pot[u] - pot[i]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let Some(sink) = (0..t)
            .filter(|&j| dem[j] > eps && dist[s + j].is_finite())
            .min_by(|&a, &b| dist[s + a].total_cmp(&dist[s + b]))
        else {
            break;
        };
        let reach = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        for x in 0..v {
            pot[x] += if dist[x].is_finite() { dist[x] } else { reach };
        }
        // Bottleneck along the path.
        let mut amount = dem[sink];
        let mut node = s + sink;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p >= s {
                amount = amount.min(flow[node * t + (p - s)]);
            }
            node = p;
        }
        amount = amount.min(sup[node]);
        // Augment.
        let mut node = s + sink;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p < s {
                flow[p * t + (node - s)] += amount;
            } else {
                flow[node * t + (p - s)] -= amount;
            }
            node = p;
        }
        sup[node] -= amount;
        dem[sink] -= amount;
        remaining -= amount;
    }
    let mut distance = 0.0;
    let mut plan = Vec::new();
    for i in 0..s {
        for j in 0..t {
            let f = flow[i * t + j];
            if f > eps {
                distance += f * c[i * t + j];
                plan.push((i, j, f * total));
            }
        }
    }
    TransportPlan { distance: distance * total, plan }
}

/// A map `[0,1] → R^d` that can be pushed forward.
pub trait ScalarMap: Sync {
    /// Output dimension `d`.
    fn output_dim(&self) -> usize;
    /// Writes the image of `x` into `out` (length `d`).
    fn eval_into(&self, x: f64, out: &mut [f64]);
}

impl ScalarMap for TransportSpec {
    fn output_dim(&self) -> usize {
        self.dim()
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        TransportSpec::eval_into(self, x, out)
    }
}

thread_local! {
    static NET_BUFFERS: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

impl ScalarMap for ReluNetwork {
    fn output_dim(&self) -> usize {
        ReluNetwork::output_dim(self)
    }
    fn eval_into(&self, x: f64, out: &mut [f64]) {
        NET_BUFFERS.with(|b| {
            let mut b = b.borrow_mut();
            out.copy_from_slice(self.eval_with(&[x], &mut b));
        });
    }
}

/// Masses of a measure on the refined grid of `side` cells per axis (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMeasure {
    pub dim: usize,
    pub side: usize,
    pub masses: Vec<f64>,
    /// Documented bound on the per-cell mass error (0 for exact enumeration).
    pub error_bound: f64,
}

impl RefinedMeasure {
    /// Center of the cell with the given flat index.
    pub fn center(&self, flat: usize) -> Vec<f64> {
        multi_index(self.side, self.dim, flat).into_iter().map(|c| (c as f64 + 0.5) / self.side as f64).collect()
    }

    /// The measure as atoms at the centers of cells with positive mass.
    pub fn to_discrete(&self) -> Result<DiscreteMeasure> {
        let (points, masses) =
            self.masses.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (self.center(i), m)).unzip();
        DiscreteMeasure::new(points, masses)
    }
}

/// Refined-grid cell containing `y` (coordinates clamped into the unit cube).
pub fn refined_cell_of(y: &[f64], side: usize) -> usize {
    let s = side as f64;
    y.iter().fold(0, |acc, &v| {
        let c = (v * s).floor();
        let c = if c < 0.0 { 0 } else { (c as usize).min(side - 1) };
        acc * side + c
    })
}

/// Midpoint-grid counts: per cell, the number of grid points landing in it and the number of
/// maximal runs of consecutive grid points landing in it.
fn grid_counts(map: &dyn ScalarMap, side: usize, mesh_log2: u32) -> (Vec<u64>, Vec<u64>) {
    let d = map.output_dim();
    let cells = side.pow(d as u32);
    let points = 1u64 << mesh_log2;
    let h = 1.0 / points as f64;
    let chunk = 1u64 << 14;
    let chunks = points.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .fold(
            || (vec![0u64; cells], vec![0u64; cells]),
            |(mut counts, mut runs), c| {
                let mut y = vec![0.0; d];
                let start = c * chunk;
                let mut previous = if start == 0 {
                    usize::MAX
                } else {
                    map.eval_into((start as f64 - 0.5) * h, &mut y);
                    refined_cell_of(&y, side)
                };
                for j in start..(start + chunk).min(points) {
                    map.eval_into((j as f64 + 0.5) * h, &mut y);
                    let cell = refined_cell_of(&y, side);
                    counts[cell] += 1;
                    if cell != previous {
                        runs[cell] += 1;
                    }
                    previous = cell;
                }
                (counts, runs)
            },
        )
        .reduce(
            || (vec![0u64; cells], vec![0u64; cells]),
            |(mut a, mut b), (c, r)| {
                a.iter_mut().zip(&c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(&r).for_each(|(x, y)| *x += y);
                (a, b)
            },
        )
}

/// Empirical image measure of the midpoint grid `x_j = (j + ½)/2^mesh_log2` on the refined grid.
///
/// A cell whose preimage consists of `r` intervals gets a mass error below `r · mesh`; `r` is
/// read off the grid as the number of maximal runs of consecutive grid points in the cell
/// (a preimage component shorter than the mesh may be missed and contributes less than one
/// mesh width). Fails with [`Error::MeshTooCoarse`] when `max_cell r · mesh` exceeds
/// `tolerance`.
pub fn pushforward_measure(map: &dyn ScalarMap, side: usize, mesh_log2: u32, tolerance: f64) -> Result<RefinedMeasure> {
    let measure = pushforward_grid(map, side, mesh_log2)?;
    if measure.error_bound > tolerance {
        return Err(Error::MeshTooCoarse { bound: measure.error_bound, tolerance });
    }
    Ok(measure)
}

fn pushforward_grid(map: &dyn ScalarMap, side: usize, mesh_log2: u32) -> Result<RefinedMeasure> {
    if side == 0 {
        return Err(out_of_range("cells per side", 0, "at least 1"));
    }
    if !(1..=30).contains(&mesh_log2) {
        return Err(out_of_range("mesh exponent", mesh_log2, "[1, 30]"));
    }
    let h = (-(mesh_log2 as f64)).exp2();
    let (counts, runs) = grid_counts(map, side, mesh_log2);
    let max_runs = runs.iter().copied().max().unwrap_or(0);
    Ok(RefinedMeasure {
        dim: map.output_dim(),
        side,
        masses: counts.iter().map(|&c| c as f64 * h).collect(),
        error_bound: max_runs as f64 * h,
    })
}

/// Exact image measure of the transport map together with its in-cell transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPushforward {
    pub measure: RefinedMeasure,
    /// `∫ ‖M(x) − center(cell(M(x)))‖ dx`: cost of moving the image measure to cell centers.
    pub center_cost: f64,
    /// Number of affine pieces of the scalar map.
    pub pieces: usize,
}

/// `∫_0^1 ‖P + t(Q − P) − c‖ dt` in closed form.
pub fn mean_distance_segment_point(p: &[f64], q: &[f64], c: &[f64]) -> f64 {
    let u2: f64 = p.iter().zip(q).map(|(a, b)| (b - a) * (b - a)).sum();
    let pc2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    if u2 == 0.0 {
        return pc2.sqrt();
    }
    let u = u2.sqrt();
    let dot: f64 = p.iter().zip(q).zip(c).map(|((a, b), cc)| (a - cc) * (b - a)).sum();
    let t0 = -dot / u2;
    let h2 = (pc2 - u2 * t0 * t0).max(0.0);
    let h = h2.sqrt();
    let antiderivative = |tau: f64| -> f64 {
        let r = (u2 * tau * tau + h2).sqrt();
        if h <= 1e-300 {
            u * tau * tau.abs() / 2.0
        } else {
            tau * r / 2.0 + h2 / (2.0 * u) * (u * tau / h).asinh()
        }
    };
    antiderivative(1.0 - t0) - antiderivative(-t0)
}

/// Exact pushforward of the uniform distribution by the transport map, from the breakpoints
/// of the scalar map: each affine piece is split where it crosses refined-grid hyperplanes and
/// its length is credited to the cells it traverses.
pub fn pushforward_exact(spec: &TransportSpec) -> Result<ExactPushforward> {
    let d = spec.dim();
    let side = spec.cells_per_side();
    let cells = side
        .checked_pow(d as u32)
        .filter(|&c| c <= 1 << 26)
        .ok_or_else(|| out_of_range("refined cells", format!("{side}^{d}"), "at most 2^26"))?;
    let xs = spec.breakpoints();
    let images: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            let mut y = vec![0.0; d];
            spec.eval_into(x, &mut y);
            y
        })
        .collect();
    let sf = side as f64;
    let contributions: Vec<Vec<(usize, f64, f64)>> = (0..xs.len() - 1)
        .into_par_iter()
        .map(|i| {
            let len = xs[i + 1] - xs[i];
            let (p, q) = (&images[i], &images[i + 1]);
            let mut ts = vec![0.0, 1.0];
            for c in 0..d {
                let (a, b) = (p[c] * sf, q[c] * sf);
                if a == b {
                    continue;
                }
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let mut m = lo.floor() + 1.0;
                while m < hi {
                    ts.push((m - a) / (b - a));
                    m += 1.0;
                }
            }
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let mut out = Vec::with_capacity(ts.len() - 1);
            let at = |t: f64| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect() };
            for w in ts.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                if t1 <= t0 {
                    continue;
                }
                let (a, b) = (at(t0), at(t1));
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                let cell = refined_cell_of(&mid, side);
                let center: Vec<f64> = multi_index(side, d, cell).into_iter().map(|k| (k as f64 + 0.5) / sf).collect();
                let mass = len * (t1 - t0);
                out.push((cell, mass, mass * mean_distance_segment_point(&a, &b, &center)));
            }
            out
        })
        .collect();
    let mut masses = vec![0.0; cells];
    let mut center_cost = 0.0;
    for list in contributions {
        for (cell, mass, cost) in list {
            masses[cell] += mass;
            center_cost += cost;
        }
    }
    Ok(ExactPushforward {
        measure: RefinedMeasure { dim: d, side, masses, error_bound: 0.0 },
        center_cost,
        pieces: xs.len() - 1,
    })
}

/// Target masses `cell_mass(z) / 2^{sd}` on the refined grid.
pub fn refined_target(spec: &TransportSpec) -> RefinedMeasure {
    let (d, n, s) = (spec.dim(), spec.resolution(), spec.order());
    let side = spec.cells_per_side();
    let share = (-((s as usize * d) as f64)).exp2();
    let masses = (0..side.pow(d as u32))
        .map(|flat| {
            let cell = RefinedCell::from_grid_index(n, s, d, flat);
            spec.target().cell_mass(&cell.z).expect("valid index") * share
        })
        .collect();
    RefinedMeasure { dim: d, side, masses, error_bound: 0.0 }
}

/// Mass-exactness certificate of a transport construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubcubeReport {
    /// `max_{z,h} |grid mass(c^h_z) − cell_mass(z)/2^{sd}|` at the given mesh.
    pub grid_deviation: f64,
    /// Documented grid-counting error bound (max runs per cell × mesh).
    pub grid_error_bound: f64,
    pub mesh_log2: u32,
    /// `max_z |Σ_h |T(z,h)| − cell_mass(z)|`.
    pub t_sum_deviation: f64,
    /// `max_{z,h} ||T(z,h)| − cell_mass(z)/2^{sd}|`.
    pub t_length_deviation: f64,
}

/// Grid-counted deviation of any scalar map's image from the refined target of `spec`.
/// Returns `(max deviation, documented error bound)`.
pub fn subcube_deviation(map: &dyn ScalarMap, spec: &TransportSpec, mesh_log2: u32) -> Result<(f64, f64)> {
    if map.output_dim() != spec.dim() {
        return Err(Error::DimensionMismatch { context: "map output", expected: spec.dim(), found: map.output_dim() });
    }
    let grid = pushforward_grid(map, spec.cells_per_side(), mesh_log2)?;
    let target = refined_target(spec);
    let deviation = grid.masses.iter().zip(&target.masses).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((deviation, grid.error_bound))
}

/// Compares the transport map's grid-counted image masses with `cell_mass(z)/2^{sd}` and
/// cross-checks the lengths of all T-intervals.
pub fn subcube_exactness(spec: &TransportSpec, mesh_log2: u32) -> Result<SubcubeReport> {
    let (grid_deviation, grid_error_bound) = subcube_deviation(spec, spec, mesh_log2)?;
    let (d, n, s) = (spec.dim(), spec.resolution(), spec.order());
    let side = spec.cells_per_side();
    let share = (-((s as usize * d) as f64)).exp2();
    let tiles = n.pow(d as u32);
    let lengths: Vec<(usize, f64)> = (0..side.pow(d as u32))
        .into_par_iter()
        .map(|flat| {
            let cell = RefinedCell::from_grid_index(n, s, d, flat);
            let t = spec.t_interval(&cell.z, &cell.h).expect("valid cell");
            (crate::histogram::flat_index(n, &cell.z), t.len())
        })
        .collect();
    let mut sums = vec![0.0; tiles];
    let mut t_length_deviation: f64 = 0.0;
    for &(z, len) in &lengths {
        sums[z] += len;
        t_length_deviation = t_length_deviation.max((len - spec.target().cell_mass_flat(z) * share).abs());
    }
    let t_sum_deviation =
        sums.iter().enumerate().map(|(z, s)| (s - spec.target().cell_mass_flat(z)).abs()).fold(0.0, f64::max);
    Ok(SubcubeReport { grid_deviation, grid_error_bound, mesh_log2, t_sum_deviation, t_length_deviation })
}

/// Mean distance from the center of the unit cube `[−½, ½]^d` to a uniform point
/// (exact for `d ≤ 3`, the upper bound `√(d/12)` beyond).
pub fn cube_center_mean_distance(d: usize) -> f64 {
    match d {
        1 => 0.25,
        2 => (std::f64::consts::SQRT_2 + (1.0 + std::f64::consts::SQRT_2).ln()) / 6.0,
        3 => 0.480_295_978_227_526_5,
        _ => (d as f64 / 12.0).sqrt(),
    }
}

/// Measured Wasserstein estimate against the theoretical bound `√d/(n 2^s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// `√d/(n 2^s)`.
    pub bound: f64,
    /// Refinement slack `√d/(n 2^{s+1})`.
    pub slack: f64,
    /// Upper estimate of `W(M#U, p)` (exact for `d = 1`).
    pub measured: f64,
    /// `W` between the two cell-center measures.
    pub discrete_term: f64,
    /// Whether `discrete_term` was solved exactly (otherwise it is the bound `√d · TV`).
    pub discrete_exact: bool,
    /// Cost of moving `M#U` to the centers of the refined cells.
    pub image_spread: f64,
    /// Cost of moving the target to the centers of the refined cells.
    pub target_spread: f64,
}

impl BoundReport {
    /// `measured ≤ bound + slack`.
    pub fn within(&self) -> bool {
        self.measured <= self.bound + self.slack
    }
}

/// Estimates `W(M#U, p)` and compares it with `√d/(n 2^s)`.
///
/// For `d = 1` the map is the shaping function itself and the distance is computed exactly with
/// [`w1_1d`]. For `d ≥ 2` the triangle inequality through the cell-center measures gives
/// `W(M#U, p) ≤ W(M#U, C_1) + W(C_1, C_2) + W(C_2, p)`, where `C_1` and `C_2` carry the image
/// and target masses of each refined cell at its center. The outer terms are computed exactly
/// (segment-to-center integrals and `side · κ_d` per unit mass); the middle term is the exact
/// discrete optimum whenever the cells with differing masses number at most
/// [`EXACT_SUPPORT_LIMIT`], and `√d · TV` otherwise.
pub fn w_bound_report(spec: &TransportSpec) -> Result<BoundReport> {
    let (d, n, s) = (spec.dim(), spec.resolution(), spec.order());
    let scale = (d as f64).sqrt() / (n as f64 * (s as f64).exp2());
    let bound = scale;
    let slack = scale / 2.0;
    if d == 1 {
        let image = pushforward_histogram(spec.shaping(&[]).function())?;
        let target = GeneralHistogram1D::from_uniform_tiles(spec.target().weights())?;
        let measured = w1_1d(&Measure1D::Histogram(image), &Measure1D::Histogram(target))?;
        return Ok(BoundReport {
            bound,
            slack,
            measured,
            discrete_term: measured,
            discrete_exact: true,
            image_spread: 0.0,
            target_spread: 0.0,
        });
    }
    let exact = pushforward_exact(spec)?;
    let target = refined_target(spec);
    let side = exact.measure.side;
    let mut supply = Vec::new();
    let mut demand = Vec::new();
    for (i, (a, b)) in exact.measure.masses.iter().zip(&target.masses).enumerate() {
        let diff = a - b;
        if diff > 0.0 {
            supply.push((i, diff));
        } else if diff < 0.0 {
            demand.push((i, -diff));
        }
    }
    let tv: f64 = supply.iter().map(|p| p.1).sum::<f64>().max(demand.iter().map(|p| p.1).sum());
    let (discrete_term, discrete_exact) = if supply.len() + demand.len() <= EXACT_SUPPORT_LIMIT {
        let sup: Vec<f64> = supply.iter().map(|p| p.1).collect();
        let dem: Vec<f64> = demand.iter().map(|p| p.1).collect();
        let sup_total: f64 = sup.iter().sum();
        let dem_total: f64 = dem.iter().sum();
        // Kantorovich–Rubinstein: only the signed difference matters. Rounding can leave the two
        // sides slightly unbalanced; the imbalance is charged at the cube diameter.
        let plan = min_cost_transport(&sup, &dem, |i, j| {
            euclidean(&exact.measure.center(supply[i].0), &target.center(demand[j].0))
        });
        let scale_back = sup_total.min(dem_total) / sup_total.max(f64::MIN_POSITIVE);
        (plan.distance * scale_back + (sup_total - dem_total).abs() * (d as f64).sqrt(), true)
    } else {
        (tv * (d as f64).sqrt(), false)
    };
    let target_spread = cube_center_mean_distance(d) / side as f64;
    Ok(BoundReport {
        bound,
        slack,
        measured: exact.center_cost + discrete_term + target_spread,
        discrete_term,
        discrete_exact,
        image_spread: exact.center_cost,
        target_spread,
    })
}
