//! A small define-by-run reverse-mode differentiation engine over 2-D
//! `f64` tensors.
//!
//! Every forward pass builds a fresh tape; values are computed eagerly and
//! `backward` replays the recorded ops in reverse, accumulating exact
//! gradients. The op set is exactly what the encoder-decoder needs: matrix
//! products, broadcast adds, GELU, row softmax, row layer-norm, row
//! gather/concat/slice and a fused softmax-cross-entropy head.

use ndarray::{concatenate, s, Array2, Axis};

pub type NodeId = usize;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// `(rows × d) + (1 × d)`, the bias pattern.
    AddRowBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    SelectRows {
        src: NodeId,
        indices: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    SliceCols {
        src: NodeId,
        start: usize,
        end: usize,
    },
    /// Scalar (1×1) sum over rows of `-log softmax(logits)[target]`.
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
    },
}

pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        self.values.len() - 1
    }

    fn any_needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.needs_grad[i])
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.values[id].dim(), (1, 1));
        self.values[id][(0, 0)]
    }

    /// Differentiable leaf (a parameter tensor).
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (inputs, masks, position tables).
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.values[a].dot(&self.values[b]);
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::MatMul(a, b), needs)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.values[a].t().to_owned();
        let needs = self.needs_grad[a];
        self.push(value, Op::Transpose(a), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.values[a] + &self.values[b];
        let needs = self.any_needs(&[a, b]);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        debug_assert_eq!(self.values[bias].nrows(), 1);
        let value = &self.values[a] + &self.values[bias].row(0);
        let needs = self.any_needs(&[a, bias]);
        self.push(value, Op::AddRowBroadcast(a, bias), needs)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = &self.values[a] * factor;
        let needs = self.needs_grad[a];
        self.push(value, Op::Scale(a, factor), needs)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.values[a].mapv(gelu);
        let needs = self.needs_grad[a];
        self.push(value, Op::Gelu(a), needs)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(&self.values[a]);
        let needs = self.needs_grad[a];
        self.push(value, Op::SoftmaxRows(a), needs)
    }

    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let normalized = layer_norm_value(&self.values[x]);
        let value = &normalized * &self.values[gain].row(0) + &self.values[bias].row(0);
        let needs = self.any_needs(&[x, gain, bias]);
        self.push(value, Op::LayerNormRows { x, gain, bias }, needs)
    }

    pub fn select_rows(&mut self, src: NodeId, indices: &[usize]) -> NodeId {
        let source = &self.values[src];
        let mut value = Array2::zeros((indices.len(), source.ncols()));
        for (k, &idx) in indices.iter().enumerate() {
            value.row_mut(k).assign(&source.row(idx));
        }
        let needs = self.needs_grad[src];
        self.push(
            value,
            Op::SelectRows {
                src,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.values[p].view()).collect();
        let value = concatenate(Axis(1), &views).expect("column concat shape");
        let needs = self.any_needs(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.values[src].slice(s![.., start..end]).to_owned();
        let needs = self.needs_grad[src];
        self.push(value, Op::SliceCols { src, start, end }, needs)
    }

    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let value = cross_entropy_value(&self.values[logits], targets);
        let needs = self.needs_grad[logits];
        self.push(
            Array2::from_elem((1, 1), value),
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
            needs,
        )
    }

    /// Reverse pass from a scalar root. Returns per-node gradients; only
    /// nodes on a differentiable path carry one.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[root] = Some(Array2::ones(self.values[root].dim()));
        for id in (0..=root).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        grads
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
        match &mut grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: NodeId, grad: &Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>) {
        match &self.ops[id] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad[*a] {
                    let da = grad.dot(&self.values[*b].t());
                    Self::accumulate(grads, *a, da);
                }
                if self.needs_grad[*b] {
                    let db = self.values[*a].t().dot(grad);
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                if self.needs_grad[*a] {
                    Self::accumulate(grads, *a, grad.t().to_owned());
                }
            }
            Op::Add(a, b) => {
                for &p in &[*a, *b] {
                    if self.needs_grad[p] {
                        Self::accumulate(grads, p, grad.clone());
                    }
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                if self.needs_grad[*a] {
                    Self::accumulate(grads, *a, grad.clone());
                }
                if self.needs_grad[*bias] {
                    let db = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    Self::accumulate(grads, *bias, db);
                }
            }
            Op::Scale(a, factor) => {
                if self.needs_grad[*a] {
                    Self::accumulate(grads, *a, grad * *factor);
                }
            }
            Op::Gelu(a) => {
                if self.needs_grad[*a] {
                    let da = grad * &self.values[*a].mapv(gelu_grad);
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs_grad[*a] {
                    let y = &self.values[id];
                    let mut da = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = grad.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..y.ncols() {
                            da[(r, c)] = yr[c] * (gr[c] - dot);
                        }
                    }
                    Self::accumulate(grads, *a, da);
                }
            }
            Op::LayerNormRows { x, gain, bias } => {
                self.layer_norm_backward(*x, *gain, *bias, grad, grads);
            }
            Op::SelectRows { src, indices } => {
                if self.needs_grad[*src] {
                    let mut da = Array2::zeros(self.values[*src].dim());
                    for (k, &idx) in indices.iter().enumerate() {
                        let mut row = da.row_mut(idx);
                        row += &grad.row(k);
                    }
                    Self::accumulate(grads, *src, da);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.values[p].ncols();
                    if self.needs_grad[p] {
                        let dp = grad.slice(s![.., offset..offset + width]).to_owned();
                        Self::accumulate(grads, p, dp);
                    }
                    offset += width;
                }
            }
            Op::SliceCols { src, start, end } => {
                if self.needs_grad[*src] {
                    let mut da = Array2::zeros(self.values[*src].dim());
                    da.slice_mut(s![.., *start..*end]).assign(grad);
                    Self::accumulate(grads, *src, da);
                }
            }
            Op::CrossEntropyRows { logits, targets } => {
                if self.needs_grad[*logits] {
                    let scale = grad[(0, 0)];
                    let mut da = softmax_rows(&self.values[*logits]);
                    for (r, &t) in targets.iter().enumerate() {
                        da[(r, t)] -= 1.0;
                    }
                    Self::accumulate(grads, *logits, da * scale);
                }
            }
        }
    }

    fn layer_norm_backward(
        &self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        grad: &Array2<f64>,
        grads: &mut Vec<Option<Array2<f64>>>,
    ) {
        let xv = &self.values[x];
        let normalized = layer_norm_value(xv);
        let gain_row = self.values[gain].row(0).to_owned();
        let d = xv.ncols() as f64;

        if self.needs_grad[gain] {
            let dg = (grad * &normalized)
                .sum_axis(Axis(0))
                .insert_axis(Axis(0));
            Self::accumulate(grads, gain, dg);
        }
        if self.needs_grad[bias] {
            let db = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
            Self::accumulate(grads, bias, db);
        }
        if self.needs_grad[x] {
            let mut dx = Array2::zeros(xv.dim());
            for r in 0..xv.nrows() {
                let row = xv.row(r);
                let mean = row.mean().expect("non-empty row");
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let sigma = (var + LN_EPS).sqrt();
                // d_xhat, then the standard two-correction form.
                let xhat = normalized.row(r);
                let dxhat: Vec<f64> = grad
                    .row(r)
                    .iter()
                    .zip(&gain_row)
                    .map(|(g, w)| g * w)
                    .collect();
                let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / d;
                let mean_dxhat_xhat: f64 =
                    dxhat.iter().zip(xhat).map(|(dh, h)| dh * h).sum::<f64>() / d;
                for c in 0..xv.ncols() {
                    dx[(r, c)] = (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat) / sigma;
                }
            }
            Self::accumulate(grads, x, dx);
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..x.ncols() {
            let e = (row[c] - max).exp();
            out[(r, c)] = e;
            denom += e;
        }
        for c in 0..x.ncols() {
            out[(r, c)] /= denom;
        }
    }
    out
}

fn layer_norm_value(x: &Array2<f64>) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let row = x.row(r);
        let mean = row.mean().expect("non-empty row");
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let sigma = (var + LN_EPS).sqrt();
        for c in 0..x.ncols() {
            out[(r, c)] = (row[c] - mean) / sigma;
        }
    }
    out
}

fn cross_entropy_value(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    debug_assert_eq!(logits.nrows(), targets.len());
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total
}

/// Row-wise `log softmax`, used by the decoder at inference time.
pub(crate) fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of a scalar-valued graph wrt one leaf.
    fn finite_diff(
        build: &dyn Fn(&mut Tape, &[Array2<f64>]) -> NodeId,
        leaves: &[Array2<f64>],
        leaf: usize,
    ) -> Array2<f64> {
        let eps = 1e-6;
        let mut grad = Array2::zeros(leaves[leaf].dim());
        for r in 0..grad.nrows() {
            for c in 0..grad.ncols() {
                let mut plus = leaves.to_vec();
                plus[leaf][(r, c)] += eps;
                let mut minus = leaves.to_vec();
                minus[leaf][(r, c)] -= eps;
                let eval = |ls: &[Array2<f64>]| {
                    let mut tape = Tape::new();
                    let root = build(&mut tape, ls);
                    tape.scalar(root)
                };
                grad[(r, c)] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            }
        }
        grad
    }

    fn check_all_leaves(build: &dyn Fn(&mut Tape, &[Array2<f64>]) -> NodeId, leaves: &[Array2<f64>]) {
        let mut tape = Tape::new();
        let root = build(&mut tape, leaves);
        let grads = tape.backward(root);
        for leaf in 0..leaves.len() {
            let analytic = grads[leaf].as_ref().expect("leaf gradient");
            let numeric = finite_diff(build, leaves, leaf);
            for (a, n) in analytic.iter().zip(numeric.iter()) {
                let denom = n.abs().max(1.0);
                assert!(
                    ((a - n) / denom).abs() < 1e-6,
                    "leaf {leaf}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![
            random_matrix(&mut rng, 3, 4),
            random_matrix(&mut rng, 4, 2),
            random_matrix(&mut rng, 1, 2),
        ];
        check_all_leaves(
            &|tape, ls| {
                let a = tape.param(ls[0].clone());
                let b = tape.param(ls[1].clone());
                let bias = tape.param(ls[2].clone());
                let prod = tape.matmul(a, b);
                let shifted = tape.add_row_broadcast(prod, bias);
                let act = tape.gelu(shifted);
                tape.cross_entropy_rows(act, &[0, 1, 0])
            },
            &leaves,
        );
    }

    #[test]
    fn softmax_and_layernorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = vec![
            random_matrix(&mut rng, 3, 5),
            random_matrix(&mut rng, 1, 5),
            random_matrix(&mut rng, 1, 5),
        ];
        check_all_leaves(
            &|tape, ls| {
                let x = tape.param(ls[0].clone());
                let g = tape.param(ls[1].clone());
                let b = tape.param(ls[2].clone());
                let normed = tape.layer_norm_rows(x, g, b);
                let soft = tape.softmax_rows(normed);
                // Spread the softmax through a quadratic-free scalar head.
                let squashed = tape.gelu(soft);
                tape.cross_entropy_rows(squashed, &[4, 0, 2])
            },
            &leaves,
        );
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaves = vec![random_matrix(&mut rng, 4, 6), random_matrix(&mut rng, 4, 6)];
        check_all_leaves(
            &|tape, ls| {
                let a = tape.param(ls[0].clone());
                let b = tape.param(ls[1].clone());
                let picked = tape.select_rows(a, &[1, 1, 3]);
                let left = tape.slice_cols(picked, 0, 3);
                let right = tape.slice_cols(picked, 3, 6);
                let swapped = tape.concat_cols(&[right, left]);
                // b: 4×6 → transpose: 6×4 → duplicate-heavy row pick: 6×4.
                let bt = tape.transpose(b);
                let picked_bt = tape.select_rows(bt, &[0, 2, 4, 5, 1, 1]);
                let mixed = tape.matmul(swapped, picked_bt);
                let scaled = tape.scale(mixed, 0.37);
                tape.cross_entropy_rows(scaled, &[0, 1, 2])
            },
            &leaves,
        );
    }

    #[test]
    fn constants_do_not_collect_gradients() {
        let mut tape = Tape::new();
        let c = tape.constant(array![[1.0, 2.0]]);
        let p = tape.param(array![[3.0, 4.0]]);
        let sum = tape.add(c, p);
        let loss = tape.cross_entropy_rows(sum, &[0]);
        let grads = tape.backward(loss);
        assert!(grads[c].is_none());
        assert!(grads[p].is_some());
    }

    #[test]
    fn select_rows_accumulates_duplicates() {
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0, 0.0], [0.0, 1.0]]);
        let sel = tape.select_rows(p, &[0, 0]);
        let loss = tape.cross_entropy_rows(sel, &[0, 1]);
        let grads = tape.backward(loss);
        let g = grads[p].as_ref().unwrap();
        // Row 1 is never selected: zero gradient.
        assert_eq!(g[(1, 0)], 0.0);
        assert_eq!(g[(1, 1)], 0.0);
        assert!(g[(0, 0)].abs() > 0.0);
    }
}
