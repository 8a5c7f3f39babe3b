//! Define-by-run reverse-mode autodiff over dense 2-d tensors.
//!
//! Every operation the translation model needs is a variant of [`Op`];
//! forward values are computed eagerly as nodes are appended and
//! [`Graph::backward`] walks the tape in reverse. The op set is intentionally
//! small and each backward rule is local, which keeps the whole stack easy to
//! verify against finite differences.

use num_traits::Float;

/// Scalar type for model arithmetic: f32 in production, f64 for gradient
/// checking.
pub trait Scalar:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite f64 converts")
    }
    fn to_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major matrix. Row vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn mat_mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a @ b^T` where `b` is `n x k` and `a` is `m x k`.
fn mat_mul_tb<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, b.cols, "matmul_tb shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// `a^T @ b` where `a` is `m x k` and `b` is `m x n`.
fn mat_mul_ta<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.rows, b.rows, "matmul_ta shape mismatch");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for m in 0..a.rows {
        let arow = a.row(m);
        let brow = b.row(m);
        for (k, &av) in arow.iter().enumerate() {
            let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    /// Rows of `table` selected by `ids`.
    Gather { table: NodeId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    /// Broadcast-add a `1 x n` row vector to every row.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `a @ b^T`.
    MatMulTB(NodeId, NodeId),
    Scale(NodeId, F),
    Relu(NodeId),
    /// Row softmax; `causal` masks column j > row i (square inputs).
    SoftmaxRows { x: NodeId, causal: bool },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize, len: usize },
    /// Divide each row by its sum.
    RenormRows(NodeId),
    /// `-sum_w ln(max(p[w, t_w], floor))` over rows with a target.
    Nll {
        probs: NodeId,
        targets: Vec<Option<usize>>,
        floor: F,
    },
    /// Elementwise multiply by a fixed mask (inverted-dropout scaling baked in).
    Dropout { x: NodeId, mask: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    op: Op<F>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node (zeros if the
    /// node did not participate).
    pub fn grad(&self, id: NodeId) -> Tensor<F> {
        let n = &self.nodes[id.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.rows, n.value.cols))
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let cols = t.cols;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        self.push(
            Tensor::from_rows(ids.len(), cols, data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_rows(ta.rows, ta.cols, data);
        self.push(t, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.rows, 1, "add_row expects a row vector");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let mut out = ta.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += tr.data[c];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = mat_mul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = mat_mul_tb(self.value(a), self.value(b));
        self.push(out, Op::MatMulTB(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let t = self.value(a);
        let data = t.data.iter().map(|&x| x * c).collect();
        let out = Tensor::from_rows(t.rows, t.cols, data);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let data = t
            .data
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let out = Tensor::from_rows(t.rows, t.cols, data);
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, x: NodeId, causal: bool) -> NodeId {
        let t = self.value(x);
        if causal {
            assert_eq!(t.rows, t.cols, "causal mask expects square scores");
        }
        let mut out = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let valid = if causal { r + 1 } else { t.cols };
            let row = &t.data[r * t.cols..r * t.cols + valid];
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for c in 0..valid {
                let e = (row[c] - max).exp();
                out.data[r * t.cols + c] = e;
                sum += e;
            }
            for c in 0..valid {
                out.data[r * t.cols + c] = out.data[r * t.cols + c] / sum;
            }
        }
        self.push(out, Op::SoftmaxRows { x, causal })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (t, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        assert_eq!(g.rows, 1);
        assert_eq!(b.rows, 1);
        assert_eq!(g.cols, t.cols);
        let eps = F::from_f64(LN_EPS);
        let n = F::from_f64(t.cols as f64);
        let mut out = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let row = t.row(r);
            let mean = row.iter().cloned().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = (var + eps).sqrt().recip();
            for c in 0..t.cols {
                let xhat = (row[c] - mean) * inv;
                out.data[r * t.cols + c] = g.data[c] * xhat + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(x);
        assert!(start + len <= t.cols);
        let mut data = Vec::with_capacity(t.rows * len);
        for r in 0..t.rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(
            Tensor::from_rows(t.rows, len, data),
            Op::SliceCols { x, start, len },
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Tensor::from_rows(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(x);
        assert!(start + len <= t.rows);
        let data = t.data[start * t.cols..(start + len) * t.cols].to_vec();
        self.push(
            Tensor::from_rows(len, t.cols, data),
            Op::SliceRows { x, start, len },
        )
    }

    pub fn renorm_rows(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let mut out = t.clone();
        for r in 0..t.rows {
            let sum: F = t.row(r).iter().cloned().sum();
            for c in 0..t.cols {
                out.data[r * t.cols + c] = out.data[r * t.cols + c] / sum;
            }
        }
        self.push(out, Op::RenormRows(x))
    }

    /// Negative log-likelihood of the target column per row, summed over rows
    /// with `Some` target, with `floor` inside the logarithm.
    pub fn nll(&mut self, probs: NodeId, targets: Vec<Option<usize>>, floor: F) -> NodeId {
        let t = self.value(probs);
        assert_eq!(t.rows, targets.len(), "one target slot per row");
        let mut loss = F::zero();
        for (r, tgt) in targets.iter().enumerate() {
            if let Some(c) = tgt {
                loss -= t.data[r * t.cols + c].max(floor).ln();
            }
        }
        self.push(
            Tensor::from_rows(1, 1, vec![loss]),
            Op::Nll {
                probs,
                targets,
                floor,
            },
        )
    }

    pub fn dropout(&mut self, x: NodeId, mask: Vec<F>) -> NodeId {
        let t = self.value(x);
        assert_eq!(mask.len(), t.data.len());
        let data = t.data.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::from_rows(t.rows, t.cols, data);
        self.push(out, Op::Dropout { x, mask })
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<F>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.data.iter_mut().zip(&delta.data) {
                    *gi += *di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    /// Reverse pass from a `1 x 1` node. Gradients accumulate on every node
    /// that contributed to it.
    pub fn backward(&mut self, target: NodeId) {
        assert_eq!(self.value(target).len(), 1, "backward target must be scalar");
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[target.0].grad = Some(Tensor::from_rows(1, 1, vec![F::one()]));

        for i in (0..=target.0).rev() {
            let Some(gout) = self.nodes[i].grad.clone() else {
                continue;
            };
            // Ops only reference earlier nodes, so this visits each node after
            // all of its consumers.
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Gather { table, ids } => {
                    let (table, ids) = (*table, ids.clone());
                    let cols = gout.cols;
                    let tshape = {
                        let t = self.value(table);
                        (t.rows, t.cols)
                    };
                    let mut dt = Tensor::zeros(tshape.0, tshape.1);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            dt.data[id * cols + c] += gout.data[r * cols + c];
                        }
                    }
                    self.accumulate(table, dt);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, gout.clone());
                    self.accumulate(b, gout);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let mut drow = Tensor::zeros(1, gout.cols);
                    for r in 0..gout.rows {
                        for c in 0..gout.cols {
                            drow.data[c] += gout.data[r * gout.cols + c];
                        }
                    }
                    self.accumulate(a, gout);
                    self.accumulate(row, drow);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = mat_mul_tb(&gout, self.value(b));
                    let db = mat_mul_ta(self.value(a), &gout);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MatMulTB(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = mat_mul(&gout, self.value(b));
                    let db = mat_mul_ta(&gout, self.value(a));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let data = gout.data.iter().map(|&g| g * c).collect();
                    self.accumulate(a, Tensor::from_rows(gout.rows, gout.cols, data));
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = self.value(a);
                    let data = gout
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
                        .collect();
                    self.accumulate(a, Tensor::from_rows(gout.rows, gout.cols, data));
                }
                Op::SoftmaxRows { x, causal } => {
                    let (x, causal) = (*x, *causal);
                    let p = self.nodes[i].value.clone();
                    let mut dx = Tensor::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        let valid = if causal { r + 1 } else { p.cols };
                        let mut dot = F::zero();
                        for c in 0..valid {
                            dot += gout.data[r * p.cols + c] * p.data[r * p.cols + c];
                        }
                        for c in 0..valid {
                            let pi = p.data[r * p.cols + c];
                            dx.data[r * p.cols + c] = pi * (gout.data[r * p.cols + c] - dot);
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (t, g) = (self.value(x).clone(), self.value(gamma).clone());
                    let eps = F::from_f64(LN_EPS);
                    let n = F::from_f64(t.cols as f64);
                    let mut dx = Tensor::zeros(t.rows, t.cols);
                    let mut dgamma = Tensor::zeros(1, t.cols);
                    let mut dbeta = Tensor::zeros(1, t.cols);
                    for r in 0..t.rows {
                        let row = t.row(r);
                        let mean = row.iter().cloned().sum::<F>() / n;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
                        let inv = (var + eps).sqrt().recip();
                        let xhat: Vec<F> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let dy = &gout.data[r * t.cols..(r + 1) * t.cols];
                        let mut sum_dxhat = F::zero();
                        let mut sum_dxhat_xhat = F::zero();
                        for c in 0..t.cols {
                            let dxhat = dy[c] * g.data[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat[c];
                            dgamma.data[c] += dy[c] * xhat[c];
                            dbeta.data[c] += dy[c];
                        }
                        for c in 0..t.cols {
                            let dxhat = dy[c] * g.data[c];
                            dx.data[r * t.cols + c] =
                                inv * (dxhat - sum_dxhat / n - xhat[c] * sum_dxhat_xhat / n);
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::SliceCols { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let t = self.value(x);
                    let mut dx = Tensor::zeros(t.rows, t.cols);
                    for r in 0..gout.rows {
                        for c in 0..len {
                            dx.data[r * dx.cols + start + c] = gout.data[r * len + c];
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0usize;
                    for p in parts {
                        let (rows, cols) = {
                            let t = self.value(p);
                            (t.rows, t.cols)
                        };
                        let mut dp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dp.data[r * cols + c] = gout.data[r * gout.cols + offset + c];
                            }
                        }
                        self.accumulate(p, dp);
                        offset += cols;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let t = self.value(x);
                    let mut dx = Tensor::zeros(t.rows, t.cols);
                    dx.data[start * t.cols..(start + len) * t.cols].copy_from_slice(&gout.data);
                    self.accumulate(x, dx);
                }
                Op::RenormRows(x) => {
                    let x = *x;
                    let t = self.value(x).clone();
                    let y = self.nodes[i].value.clone();
                    let mut dx = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        let sum: F = t.row(r).iter().cloned().sum();
                        let mut dot = F::zero();
                        for c in 0..t.cols {
                            dot += gout.data[r * t.cols + c] * y.data[r * t.cols + c];
                        }
                        for c in 0..t.cols {
                            dx.data[r * t.cols + c] = (gout.data[r * t.cols + c] - dot) / sum;
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::Nll {
                    probs,
                    targets,
                    floor,
                } => {
                    let (probs, targets, floor) = (*probs, targets.clone(), *floor);
                    let g = gout.data[0];
                    let t = self.value(probs);
                    let mut dp = Tensor::zeros(t.rows, t.cols);
                    for (r, tgt) in targets.iter().enumerate() {
                        if let Some(c) = tgt {
                            let p = t.data[r * t.cols + c];
                            if p >= floor {
                                dp.data[r * t.cols + c] = -g / p;
                            }
                        }
                    }
                    self.accumulate(probs, dp);
                }
                Op::Dropout { x, mask } => {
                    let (x, mask) = (*x, mask.clone());
                    let data = gout.data.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                    self.accumulate(x, Tensor::from_rows(gout.rows, gout.cols, data));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences on a scalar-valued builder: perturb one
    /// input entry at a time and compare against the analytic gradient.
    fn check_grads<B>(inputs: Vec<Tensor<f64>>, build: B)
    where
        B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    {
        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = ins.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build(&mut g, &ids);
            g.value(out).data[0]
        };
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.backward(out);
        let h = 1e-6;
        for (t_idx, t) in inputs.iter().enumerate() {
            let analytic = g.grad(ids[t_idx]);
            for e in 0..t.len() {
                let mut plus = inputs.clone();
                plus[t_idx].data[e] += h;
                let mut minus = inputs.clone();
                minus[t_idx].data[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data[e];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-5,
                    "tensor {t_idx} elem {e}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    fn t(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::from_rows(rows, cols, vals.to_vec())
    }

    #[test]
    fn matmul_forward_value() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(t(3, 3, &[0.3, -1.0, 2.0, 0.0, 0.5, -0.5, 1.0, 1.0, 1.0]));
        let p = g.softmax_rows(x, true);
        let v = g.value(p);
        assert_eq!(v.data[1], 0.0); // masked
        assert_eq!(v.data[2], 0.0);
        for r in 0..3 {
            let s: f64 = v.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // Exercise every op in one scalar pipeline.
        let inputs = vec![
            t(4, 3, &[0.2, -0.4, 0.7, 1.1, 0.05, -0.3, 0.6, -0.8, 0.9, -0.2, 0.4, 0.3]), // table
            t(2, 3, &[0.5, -0.1, 0.2, -0.7, 0.3, 0.8]),                                  // w
            t(1, 2, &[0.1, -0.2]),                                                       // bias
            t(1, 3, &[1.0, 0.9, 1.1]),                                                   // gamma
            t(1, 3, &[0.0, 0.1, -0.1]),                                                  // beta
        ];
        check_grads(inputs, |g, ids| {
            let gathered = g.gather(ids[0], &[0, 2, 1]);
            let normed = g.layer_norm(gathered, ids[3], ids[4]);
            let scores = g.matmul_tb(normed, normed);
            let probs = g.softmax_rows(scores, true);
            let mixed = g.matmul(probs, normed);
            let both = g.add(mixed, normed);
            let h = g.matmul_tb(both, ids[1]); // 3x2
            let hb = g.add_row(h, ids[2]);
            let hr = g.relu(hb);
            let left = g.slice_cols(hr, 0, 1);
            let right = g.slice_cols(hr, 1, 1);
            let cat = g.concat_cols(&[left, right]);
            let scaled = g.scale(cat, 0.7);
            let sm = g.softmax_rows(scaled, false);
            let top = g.slice_rows(sm, 0, 2);
            let renorm = g.renorm_rows(top);
            g.nll(renorm, vec![Some(0), Some(1)], 1e-12)
        });
    }

    #[test]
    fn dropout_mask_applies_and_backprops() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(t(1, 4, &[1.0, 2.0, 3.0, 4.0]));
        let d = g.dropout(x, vec![2.0, 0.0, 2.0, 0.0]);
        assert_eq!(g.value(d).data, vec![2.0, 0.0, 6.0, 0.0]);
        let s = g.slice_cols(d, 0, 1);
        let l = g.nll(s, vec![Some(0)], 1e-12);
        g.backward(l);
        let gx = g.grad(x);
        assert!(gx.data[0] != 0.0 && gx.data[1] == 0.0);
    }
}
