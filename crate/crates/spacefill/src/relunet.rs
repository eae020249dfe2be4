//! Explicit ReLU networks: data model, constructive builders and combinators.
//!
//! A network is a list of affine layers `W_ℓ(x) = A_ℓ x + b_ℓ` evaluated as
//! `Φ = W_L ∘ ρ ∘ W_{L−1} ∘ … ∘ ρ ∘ W_1` (no ReLU after the last layer).
//! Its *connectivity* `M` counts the nonzero entries of all `A_ℓ` and `b_ℓ`,
//! its *depth* `L` is the number of affine layers and its *width* `W` is the
//! largest of the layer sizes `N_0, …, N_L` (input size included).
//!
//! Builders cover the sawtooth `g_s`, piecewise-linear shaping functions, the
//! per-coordinate transport stages and the complete transport network. All
//! weights of the transport network are taken from two grids determined by
//! `Δ = δ/n`: *Type 1* weights lie on `Δℤ ∩ [−1/Δ, 1/Δ]` and *Type 2* weights
//! have their reciprocal there; [`audit_quantization`] checks this.
//!
//! ```
//! use spacefill::relunet::build_sawtooth_net;
//!
//! let net = build_sawtooth_net(3).unwrap();
//! let stats = net.stats();
//! assert_eq!((stats.connectivity, stats.depth), (30, 4));
//! assert_eq!(net.forward(&[0.0625]).unwrap(), vec![0.5]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::histogram::multi_index;
use crate::pwl::{relu, uniform_knots, PiecewiseLinear, TransportSpec};

/// Affine map `x ↦ A x + b` with dense row-major `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl AffineLayer {
    /// Builds from a row-major matrix and a bias vector.
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::MalformedNetwork(format!("layer of shape {rows}×{cols}")));
        }
        if a.len() != rows * cols {
            return Err(Error::DimensionMismatch { context: "layer matrix", expected: rows * cols, found: a.len() });
        }
        if b.len() != rows {
            return Err(Error::DimensionMismatch { context: "layer bias", expected: rows, found: b.len() });
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::MalformedNetwork("non-finite weight".into()));
        }
        Ok(Self { rows, cols, a, b })
    }

    /// Builds from nested rows.
    pub fn from_rows(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        if let Some(bad) = a.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { context: "matrix row", expected: cols, found: bad.len() });
        }
        Self::new(rows, cols, a.concat(), b)
    }

    /// Identity map on `R^m`.
    pub fn identity(m: usize) -> Self {
        let mut a = vec![0.0; m * m];
        for i in 0..m {
            a[i * m + i] = 1.0;
        }
        Self { rows: m, cols: m, a, b: vec![0.0; m] }
    }

    /// Output size.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Input size.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry `A[i][j]`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    /// Row-major matrix entries.
    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    /// Bias vector.
    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    /// Number of nonzero entries of `A` and `b`.
    pub fn nonzeros(&self) -> usize {
        self.a.iter().chain(&self.b).filter(|&&v| v != 0.0).count()
    }

    /// Matrix rows as nested vectors.
    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

/// Compressed-row view of a layer used for fast evaluation.
#[derive(Debug, Clone)]
struct SparseLayer {
    row_start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    bias: Vec<f64>,
}

impl SparseLayer {
    fn from_dense(layer: &AffineLayer) -> Self {
        let mut row_start = vec![0];
        let (mut col, mut val) = (Vec::new(), Vec::new());
        for i in 0..layer.rows {
            for j in 0..layer.cols {
                let v = layer.weight(i, j);
                if v != 0.0 {
                    col.push(j);
                    val.push(v);
                }
            }
            row_start.push(col.len());
        }
        Self { row_start, col, val, bias: layer.b.clone() }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (i, &bias) in self.bias.iter().enumerate() {
            let range = self.row_start[i]..self.row_start[i + 1];
            let dot: f64 = self.col[range.clone()].iter().zip(&self.val[range]).map(|(&j, &v)| v * x[j]).sum();
            out.push(dot + bias);
        }
    }
}

/// Connectivity, depth and width of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetworkStats {
    /// `M`: nonzero entries across all matrices and biases.
    pub connectivity: usize,
    /// `L`: number of affine layers.
    pub depth: usize,
    /// `W`: largest layer size, input included.
    pub width: usize,
}

/// Feed-forward ReLU network `W_L ∘ ρ ∘ … ∘ ρ ∘ W_1`.
#[derive(Debug, Clone)]
pub struct ReluNetwork {
    layers: Vec<AffineLayer>,
    sparse: Vec<SparseLayer>,
}

impl PartialEq for ReluNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl ReluNetwork {
    /// Builds a network; consecutive layer shapes must chain.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::MalformedNetwork("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[1].cols != w[0].rows {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: w[0].rows,
                    found: w[1].cols,
                });
            }
        }
        let sparse = layers.iter().map(SparseLayer::from_dense).collect();
        Ok(Self { layers, sparse })
    }

    /// The affine layers in evaluation order.
    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    /// Consumes the network, returning its layers.
    pub fn into_layers(self) -> Vec<AffineLayer> {
        self.layers
    }

    /// Input size `N_0`.
    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    /// Output size `N_L`.
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Connectivity, depth and width.
    pub fn stats(&self) -> NetworkStats {
        let width = self.layers.iter().map(|l| l.rows).chain([self.input_dim()]).max().unwrap_or(0);
        NetworkStats {
            connectivity: self.layers.iter().map(AffineLayer::nonzeros).sum(),
            depth: self.layers.len(),
            width,
        }
    }

    /// Evaluates the network on `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut buffers = (Vec::new(), Vec::new());
        Ok(self.eval_with(x, &mut buffers).to_vec())
    }

    /// Evaluates using caller-provided scratch buffers; `x` must have `input_dim` entries.
    pub fn eval_with<'a>(&self, x: &[f64], buffers: &'a mut (Vec<f64>, Vec<f64>)) -> &'a [f64] {
        let (cur, next) = buffers;
        cur.clear();
        cur.extend_from_slice(x);
        let last = self.sparse.len() - 1;
        for (l, layer) in self.sparse.iter().enumerate() {
            layer.apply(cur, next);
            if l < last {
                for v in next.iter_mut() {
                    *v = relu(*v);
                }
            }
            std::mem::swap(cur, next);
        }
        cur
    }

    /// Serializes to `{ "layers": [{ "A": [[…]], "b": […] }, …] }`.
    pub fn to_json(&self) -> Result<String> {
        let raw =
            RawNetwork { layers: self.layers.iter().map(|l| RawLayer { a: l.rows_vec(), b: l.b.clone() }).collect() };
        Ok(serde_json::to_string(&raw)?)
    }

    /// Parses the network JSON format.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawNetwork = serde_json::from_str(text)?;
        let layers = raw.layers.into_iter().map(|l| AffineLayer::from_rows(l.a, l.b)).collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    layers: Vec<RawLayer>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// The sawtooth network `Φ^s_g`: `W_2 ∘ ρ ∘ W_g ∘ ρ ∘ … ∘ W_g ∘ ρ ∘ W_1` with `s − 1` copies of
/// `W_g`. Connectivity `11s − 3`, depth `s + 1`.
///
/// `W_1(x) = (2, 4, 2)ᵀ x − (0, 2, 2)`, `W_2(y) = y_1 − y_2 + y_3`, and `W_g = W_1 ∘ W_2`.
pub fn build_sawtooth_net(s: u32) -> Result<ReluNetwork> {
    if s == 0 {
        return Err(out_of_range("sawtooth order s", s, "at least 1"));
    }
    let bias = vec![0.0, -2.0, -2.0];
    let mut layers = vec![AffineLayer::new(3, 1, vec![2.0, 4.0, 2.0], bias.clone())?];
    let wg = vec![2.0, -2.0, 2.0, 4.0, -4.0, 4.0, 2.0, -2.0, 2.0];
    for _ in 1..s {
        layers.push(AffineLayer::new(3, 3, wg.clone(), bias.clone())?);
    }
    layers.push(AffineLayer::new(1, 3, vec![1.0, -1.0, 1.0], vec![0.0])?);
    ReluNetwork::new(layers)
}

/// Two-layer network computing `Σ a_i ρ(x − b_i)` with one hidden neuron per nonzero ramp.
pub fn build_pwl_net(f: &PiecewiseLinear) -> Result<ReluNetwork> {
    let ramps: Vec<(f64, f64)> = f.ramps().iter().copied().filter(|&(a, _)| a != 0.0).collect();
    let ramps = if ramps.is_empty() { vec![(0.0, 0.0)] } else { ramps };
    let m = ramps.len();
    let first = AffineLayer::new(m, 1, vec![1.0; m], ramps.iter().map(|&(_, b)| -b).collect())?;
    let second = AffineLayer::new(1, m, ramps.iter().map(|&(a, _)| a).collect(), vec![0.0])?;
    ReluNetwork::new(vec![first, second])
}

/// Two-layer network computing `y ↦ scale · f(y) − offset`, where `f` is the shaping function of
/// the uniform-tile density weights `w`, written in split-ramp form.
///
/// Hidden neurons are `ρ(y)` and, for every interior knot `b_i`, two copies of `ρ(y − b_i)`
/// with output weights `scale/w_i` and `−scale/w_{i−1}`. For a δ-quantized row (`w_i = n q_i δ`)
/// and `scale ∈ {1, n}` every knot is a Type 1 weight and every output weight is Type 2 at
/// `Δ = δ/n`.
pub fn build_shaping_net(w: &[f64], scale: f64, offset: f64) -> Result<ReluNetwork> {
    crate::pwl::pwl_from_uniform_histogram_split(w)?;
    let knots = uniform_knots(w);
    let mut biases = vec![0.0];
    let mut out = vec![scale / w[0]];
    for i in 1..w.len() {
        biases.push(-knots[i]);
        out.push(-scale / w[i - 1]);
        biases.push(-knots[i]);
        out.push(scale / w[i]);
    }
    let m = biases.len();
    let first = AffineLayer::new(m, 1, vec![1.0; m], biases)?;
    let second = AffineLayer::new(1, m, out, vec![-offset])?;
    ReluNetwork::new(vec![first, second])
}

/// Composition `outer ∘ inner` by merging inner's last affine layer into outer's first one
/// (`A = A_out A_in`, `b = A_out b_in + b_out`); depth `L_1 + L_2 − 1`.
pub fn compose(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "compose",
            expected: outer.input_dim(),
            found: inner.output_dim(),
        });
    }
    let last = &inner.layers[inner.layers.len() - 1];
    let first = &outer.layers[0];
    let mut a = vec![0.0; first.rows * last.cols];
    let mut b = first.b.clone();
    for i in 0..first.rows {
        for k in 0..first.cols {
            let w = first.weight(i, k);
            if w == 0.0 {
                continue;
            }
            for j in 0..last.cols {
                a[i * last.cols + j] += w * last.weight(k, j);
            }
            b[i] += w * last.b[k];
        }
    }
    let mut layers: Vec<AffineLayer> = inner.layers[..inner.layers.len() - 1].to_vec();
    layers.push(AffineLayer::new(first.rows, last.cols, a, b)?);
    layers.extend(outer.layers[1..].iter().cloned());
    ReluNetwork::new(layers)
}

/// Composition `outer ∘ ρ ∘ inner` obtained by concatenating the layer lists; depth `L_1 + L_2`,
/// weights unchanged.
///
/// This equals `outer ∘ inner` whenever `inner` has nonnegative outputs on the domain of interest,
/// or whenever `outer` ignores the negative part of its input (as the sawtooth does:
/// `g_s(ρ(t)) = g_s(t)`). Unlike [`compose`] it never multiplies weights, so it preserves
/// quantization.
pub fn compose_through_relu(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "compose_through_relu",
            expected: outer.input_dim(),
            found: inner.output_dim(),
        });
    }
    let mut layers = inner.layers.clone();
    layers.extend(outer.layers.iter().cloned());
    ReluNetwork::new(layers)
}

/// How the members of a parallel network read their inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Every member reads the same input vector.
    Shared,
    /// Member inputs are consecutive, disjoint slices of the input vector.
    Split,
}

/// Stacks networks of equal depth side by side; the output is the concatenation of the
/// member outputs. Connectivity is the sum of the members' connectivities.
pub fn parallelize(nets: &[ReluNetwork], mode: InputMode) -> Result<ReluNetwork> {
    let first = nets.first().ok_or(Error::Empty("parallelize needs at least one network"))?;
    let (input_dim, selections) = match mode {
        InputMode::Shared => {
            let dim = first.input_dim();
            if let Some(bad) = nets.iter().find(|n| n.input_dim() != dim) {
                return Err(Error::DimensionMismatch {
                    context: "shared input",
                    expected: dim,
                    found: bad.input_dim(),
                });
            }
            (dim, nets.iter().map(|_| (0..dim).collect()).collect::<Vec<Vec<usize>>>())
        }
        InputMode::Split => {
            let mut offset = 0;
            let selections = nets
                .iter()
                .map(|n| {
                    let sel = (offset..offset + n.input_dim()).collect();
                    offset += n.input_dim();
                    sel
                })
                .collect();
            (offset, selections)
        }
    };
    parallelize_with_inputs(nets, input_dim, &selections)
}

/// Parallel stacking where member `j` reads the global inputs `selections[j]` (in order).
///
/// [`InputMode::Shared`] and [`InputMode::Split`] are the special cases "all inputs" and
/// "consecutive slices"; stages of the transport network need members reading overlapping
/// subsets.
pub fn parallelize_with_inputs(
    nets: &[ReluNetwork],
    input_dim: usize,
    selections: &[Vec<usize>],
) -> Result<ReluNetwork> {
    let first = nets.first().ok_or(Error::Empty("parallelize needs at least one network"))?;
    if selections.len() != nets.len() {
        return Err(Error::DimensionMismatch {
            context: "input selections",
            expected: nets.len(),
            found: selections.len(),
        });
    }
    let depth = first.layers.len();
    if let Some(bad) = nets.iter().find(|n| n.layers.len() != depth) {
        return Err(Error::DimensionMismatch {
            context: "parallel depth (extend_depth first)",
            expected: depth,
            found: bad.layers.len(),
        });
    }
    for (net, sel) in nets.iter().zip(selections) {
        if sel.len() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "member input selection",
                expected: net.input_dim(),
                found: sel.len(),
            });
        }
        if let Some(&bad) = sel.iter().find(|&&i| i >= input_dim) {
            return Err(out_of_range("selected input", bad, format!("[0, {input_dim})")));
        }
    }
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let rows: usize = nets.iter().map(|n| n.layers[l].rows).sum();
        let cols = if l == 0 { input_dim } else { nets.iter().map(|n| n.layers[l - 1].rows).sum() };
        let mut a = vec![0.0; rows * cols];
        let mut b = Vec::with_capacity(rows);
        let (mut row0, mut col0) = (0, 0);
        for (net, sel) in nets.iter().zip(selections) {
            let layer = &net.layers[l];
            let columns: Vec<usize> = if l == 0 { sel.clone() } else { (col0..col0 + layer.cols).collect() };
            for i in 0..layer.rows {
                for (j, &col) in columns.iter().enumerate() {
                    a[(row0 + i) * cols + col] += layer.weight(i, j);
                }
            }
            b.extend_from_slice(&layer.b);
            row0 += layer.rows;
            col0 += layer.cols;
        }
        layers.push(AffineLayer::new(rows, cols, a, b)?);
    }
    ReluNetwork::new(layers)
}

/// Identity network on `R^dim` of the given depth (valid on nonnegative inputs when depth > 1).
/// Connectivity `dim · depth`.
pub fn identity_net(dim: usize, depth: usize) -> Result<ReluNetwork> {
    if dim == 0 || depth == 0 {
        return Err(out_of_range("identity network shape", format!("dim {dim}, depth {depth}"), "both positive"));
    }
    ReluNetwork::new(vec![AffineLayer::identity(dim); depth])
}

/// Pads a network with nonnegative outputs to the target depth by appending identity layers.
/// Each appended layer adds one weight per output.
pub fn extend_depth(net: &ReluNetwork, target: usize) -> Result<ReluNetwork> {
    let depth = net.layers.len();
    if target < depth {
        return Err(out_of_range("target depth", target, format!("at least the current depth {depth}")));
    }
    let mut layers = net.layers.clone();
    layers.extend(std::iter::repeat_n(AffineLayer::identity(net.output_dim()), target - depth));
    ReluNetwork::new(layers)
}

/// Two-layer network `x ↦ Σ_i ρ(x_i)`, equal to the plain sum on nonnegative inputs.
pub fn sum_net(m: usize) -> Result<ReluNetwork> {
    if m == 0 {
        return Err(out_of_range("number of summands", 0, "at least 1"));
    }
    ReluNetwork::new(vec![AffineLayer::identity(m), AffineLayer::new(1, m, vec![1.0; m], vec![0.0])?])
}

/// Two-layer network `(y_1, …, y_m) ↦ Σ_i f_i(y_i)` for shaping functions given by weight rows.
///
/// The members are stacked with split inputs and a row of ones is merged into the output layer;
/// as every hidden neuron feeds exactly one member, the merged output weights are the member
/// weights themselves.
pub fn sum_of_shapings(rows: &[&[f64]]) -> Result<ReluNetwork> {
    let members = rows.iter().map(|w| build_shaping_net(w, 1.0, 0.0)).collect::<Result<Vec<_>>>()?;
    let stacked = parallelize(&members, InputMode::Split)?;
    let ones = ReluNetwork::new(vec![AffineLayer::new(1, rows.len(), vec![1.0; rows.len()], vec![0.0])?])?;
    compose(&ones, &stacked)
}

/// Network for one transport stage `r` (depth `s + 3`).
///
/// Input: `(F_r(x, p))_{|p| = r}` followed by `Z_1, …, Z_r`. Output: `(F_{r+1}(x, (p,k)))` in
/// natural prefix order (`k` fastest) followed by `Z_1, …, Z_{r+1}`. Each `F_{r+1}` entry is
/// `g_s(n f^p(y_p) − k)`: a shaping network feeding the sawtooth network through a ReLU
/// (`g_s` vanishes on negative arguments). The `Z` entries are passed through identity chains
/// and `Z_{r+1} = Σ_p f^p(y_p)` is a summed shaping network padded to depth `s + 3`.
pub fn build_stage_net(spec: &TransportSpec, r: usize) -> Result<ReluNetwork> {
    let (d, n, s) = (spec.dim(), spec.resolution(), spec.order());
    if r >= d {
        return Err(out_of_range("stage index r", r, format!("[0, {}]", d - 1)));
    }
    let depth = s as usize + 3;
    let prefixes = n.pow(r as u32);
    let input_dim = prefixes + r;
    let sawtooth = build_sawtooth_net(s)?;
    let mut members = Vec::new();
    let mut selections = Vec::new();
    for (p, shaping) in spec.shaping_level(r).iter().enumerate() {
        for k in 0..n {
            let shape = build_shaping_net(shaping.weights(), n as f64, k as f64)?;
            members.push(compose_through_relu(&sawtooth, &shape)?);
            selections.push(vec![p]);
        }
    }
    for j in 0..r {
        members.push(identity_net(1, depth)?);
        selections.push(vec![prefixes + j]);
    }
    let rows: Vec<&[f64]> = spec.shaping_level(r).iter().map(|sh| sh.weights()).collect();
    members.push(extend_depth(&sum_of_shapings(&rows)?, depth)?);
    selections.push((0..prefixes).collect());
    parallelize_with_inputs(&members, input_dim, &selections)
}

/// Final two-layer stage: passes `Z_1, …, Z_{d−1}` through and appends
/// `Z_d = Σ_p f^p(F_{d−1}(x, p))`.
pub fn build_selector_net(spec: &TransportSpec) -> Result<ReluNetwork> {
    let (d, n) = (spec.dim(), spec.resolution());
    let prefixes = n.pow(d as u32 - 1);
    let mut members = Vec::new();
    let mut selections = Vec::new();
    for j in 0..d - 1 {
        members.push(identity_net(1, 2)?);
        selections.push(vec![prefixes + j]);
    }
    let rows: Vec<&[f64]> = spec.shaping_level(d - 1).iter().map(|sh| sh.weights()).collect();
    members.push(sum_of_shapings(&rows)?);
    selections.push((0..prefixes).collect());
    parallelize_with_inputs(&members, prefixes + d - 1, &selections)
}

/// The complete transport network `x ↦ (Z_1, …, Z_d)`.
///
/// For `d ≥ 2` this is `S ∘ρ∘ M^{d−2} ∘ρ∘ … ∘ρ∘ M^0`, with stages from [`build_stage_net`] and
/// the selector from [`build_selector_net`], of depth `(s+3)(d−1) + 2 = (s+3)d − s − 1`. All
/// intermediate signals are nonnegative, so the interleaved ReLUs do not change the function.
/// For `d = 1` it is the split-ramp shaping network of the single coordinate (depth 2).
pub fn build_transport_net(spec: &TransportSpec) -> Result<ReluNetwork> {
    let d = spec.dim();
    if d == 1 {
        return build_shaping_net(spec.shaping(&[]).weights(), 1.0, 0.0);
    }
    let mut net = build_stage_net(spec, 0)?;
    for r in 1..d - 1 {
        net = compose_through_relu(&build_stage_net(spec, r)?, &net)?;
    }
    compose_through_relu(&build_selector_net(spec)?, &net)
}

/// Classification of a weight against the grids of step `Δ = 1/D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightType {
    /// `w ∈ Δℤ ∩ [−1/Δ, 1/Δ]`; payload is `w/Δ`.
    Type1(i64),
    /// `1/w ∈ Δℤ ∩ [−1/Δ, 1/Δ]`; payload is `(1/w)/Δ`.
    Type2(i64),
    /// On neither grid.
    Neither,
}

/// Relative tolerance for "on the grid".
pub const AUDIT_TOL: f64 = 1e-9;

fn grid_multiple(x: f64, limit: f64) -> Option<i64> {
    let r = x.round();
    let close = (x - r).abs() <= AUDIT_TOL * r.abs().max(1.0);
    (x.is_finite() && close && r.abs() <= limit).then_some(r as i64)
}

/// Classifies a nonzero weight for `Δ = 1/denominator`. Type 1 takes precedence.
pub fn classify_weight(w: f64, denominator: u64) -> WeightType {
    let dd = denominator as f64;
    let limit = dd * dd;
    if let Some(k) = grid_multiple(w * dd, limit) {
        return WeightType::Type1(k);
    }
    if w != 0.0 {
        if let Some(k) = grid_multiple(dd / w, limit) {
            if k != 0 {
                return WeightType::Type2(k);
            }
        }
    }
    WeightType::Neither
}

/// Location of one weight: layer, row, and column (`None` for the bias).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightPosition {
    pub layer: usize,
    pub row: usize,
    pub col: Option<usize>,
}

/// Result of checking every nonzero weight against the two quantization grids.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationAudit {
    /// `D` with `Δ = 1/D`.
    pub denominator: u64,
    pub type1: usize,
    pub type2: usize,
    /// Positions and values of weights on neither grid.
    pub neither: Vec<(WeightPosition, f64)>,
}

impl QuantizationAudit {
    /// True when every nonzero weight is of Type 1 or Type 2.
    pub fn pass(&self) -> bool {
        self.neither.is_empty()
    }
}

fn nonzero_weights(net: &ReluNetwork) -> impl Iterator<Item = (WeightPosition, f64)> + '_ {
    net.layers.iter().enumerate().flat_map(|(layer, l)| {
        (0..l.rows).flat_map(move |row| {
            (0..l.cols)
                .map(move |col| (WeightPosition { layer, row, col: Some(col) }, l.weight(row, col)))
                .chain(std::iter::once((WeightPosition { layer, row, col: None }, l.b[row])))
                .filter(|&(_, w)| w != 0.0)
        })
    })
}

/// Classifies every nonzero entry of every `A_ℓ` and `b_ℓ` for `Δ = 1/denominator`.
pub fn audit_quantization(net: &ReluNetwork, denominator: u64) -> QuantizationAudit {
    let mut audit = QuantizationAudit { denominator, type1: 0, type2: 0, neither: Vec::new() };
    for (pos, w) in nonzero_weights(net) {
        match classify_weight(w, denominator) {
            WeightType::Type1(_) => audit.type1 += 1,
            WeightType::Type2(_) => audit.type2 += 1,
            WeightType::Neither => audit.neither.push((pos, w)),
        }
    }
    audit
}

/// Length in bits of the Elias gamma code of `x ≥ 1`.
pub fn elias_gamma_bits(x: u64) -> u64 {
    debug_assert!(x >= 1);
    2 * u64::from(63 - x.leading_zeros()) + 1
}

/// `⌈log2 x⌉` for `x ≥ 1`.
pub fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        u64::from(64 - (x - 1).leading_zeros())
    }
}

/// Bits needed by the value field of one weight for `Δ = 1/D`: `⌈log2(2/Δ² + 1)⌉`.
pub fn value_bits(denominator: u64) -> u64 {
    ceil_log2(2 * denominator * denominator + 1)
}

/// Exact length of the following uniquely decodable encoding of a quantized network:
///
/// * header: `γ(D)`; `γ(N_ℓ + 1)` for `ℓ = 0..L`; the terminator `γ(1)`;
/// * for each layer: `γ(nnz_ℓ + 1)`, then for each nonzero entry (matrix and bias, viewed as
///   an `N_ℓ × (N_{ℓ−1} + 1)` array) its address in `⌈log2(N_ℓ (N_{ℓ−1} + 1))⌉` bits,
///   one type bit and the grid index `k + 1/Δ²` in [`value_bits`] bits.
///
/// `γ` is the Elias gamma code. Layers of identical shape and sparsity cost identical bits, so
/// inserting repeated layers changes the length by a constant per layer.
pub fn encoded_bit_length(net: &ReluNetwork, denominator: u64) -> Result<u64> {
    let audit = audit_quantization(net, denominator);
    if !audit.pass() {
        return Err(Error::AuditFailed { neither: audit.neither.len() });
    }
    let per_weight = 1 + value_bits(denominator);
    let mut bits = elias_gamma_bits(denominator);
    bits += elias_gamma_bits(net.input_dim() as u64 + 1);
    for l in &net.layers {
        bits += elias_gamma_bits(l.rows as u64 + 1);
    }
    bits += elias_gamma_bits(1);
    for l in &net.layers {
        let nnz = l.nonzeros() as u64;
        let address = ceil_log2((l.rows * (l.cols + 1)) as u64);
        bits += elias_gamma_bits(nnz + 1) + nnz * (address + per_weight);
    }
    Ok(bits)
}

/// Appends `y ↦ α y + β` by merging it into the last affine layer.
pub fn rescale_output(net: &ReluNetwork, alpha: f64, beta: &[f64]) -> Result<ReluNetwork> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(out_of_range("scale α", alpha, "positive and finite"));
    }
    if beta.len() != net.output_dim() {
        return Err(Error::DimensionMismatch { context: "offset β", expected: net.output_dim(), found: beta.len() });
    }
    let mut layers = net.layers.clone();
    let last = layers.last_mut().expect("nonempty");
    for v in &mut last.a {
        *v *= alpha;
    }
    for (v, &shift) in last.b.iter_mut().zip(beta) {
        *v = alpha * *v + shift;
    }
    ReluNetwork::new(layers)
}

/// Exact connectivity of [`build_transport_net`] for a target with strictly positive weights.
///
/// Per stage `r`: `n^{r+1}` sawtooth branches of `(6n − 4) + (11s − 3)` weights plus one offset
/// per branch with `k ≥ 1`, `r` identity chains of `s + 3` weights, and a summed shaping network
/// of `n^r (6n − 4)` weights padded by `s + 1` identity weights. The selector adds
/// `2(d − 1) + n^{d−1}(6n − 4)`.
pub fn transport_connectivity(d: usize, n: usize, s: u32) -> usize {
    let s = s as usize;
    let shaping = 6 * n - 4;
    if d == 1 {
        return shaping;
    }
    let mut total = 0;
    for r in 0..d - 1 {
        let prefixes = n.pow(r as u32);
        total += prefixes * n * (shaping + 11 * s - 3) + prefixes * (n - 1);
        total += r * (s + 3);
        total += prefixes * shaping + s + 1;
    }
    total + 2 * (d - 1) + n.pow(d as u32 - 1) * shaping
}

/// Index vector of every `F`-output of stage `r`, in output order.
pub fn stage_output_prefixes(n: usize, r: usize) -> Vec<Vec<usize>> {
    (0..n.pow(r as u32 + 1)).map(|flat| multi_index(n, r + 1, flat)).collect()
}
