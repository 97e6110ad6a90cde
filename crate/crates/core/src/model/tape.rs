//! Reverse-mode differentiation over the handful of matrix operations the
//! encoder uses. A [`Tape`] records every operation of one forward pass;
//! [`Tape::backward`] walks it in reverse.

use serde::{Deserialize, Serialize};

use super::tensor::{canonical_sum, dot, Mat};

/// Arithmetic used for forward values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Plain `f64`.
    #[default]
    Wide,
    /// Every stored value is rounded to IEEE half precision.
    Narrow,
}

impl Precision {
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Wide => v,
            Precision::Narrow => half::f16::from_f64(v).to_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    /// Rows `idx` of a table.
    Gather(Var, Vec<usize>),
    /// Flat entries `idx` of a table, laid out as `rows x cols`.
    GatherScalars(Var, Vec<usize>),
    Add(Var, Var),
    /// Adds a `1 x c` row to every row.
    AddRow(Var, Var),
    /// Multiplies every row elementwise by a `1 x c` row.
    MulRow(Var, Var),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Relu(Var),
    MeanRows(Var),
    CrossEntropy(Var, Vec<usize>),
    /// Cosine of two `1 x c` rows; zero with zero gradient when either has
    /// zero norm.
    Cosine(Var, Var),
    /// `1 - cos` for similar pairs, `max(0, cos - margin)` otherwise.
    PairLoss(Var, bool, f64),
    SumScalars(Vec<Var>),
}

const LAYER_NORM_EPS: f64 = 1e-5;

struct Node {
    value: Mat,
    op: Op,
}

/// Recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Gradients of one backward pass, indexed by node.
pub struct Grads {
    grads: Vec<Option<Mat>>,
    params: Vec<(usize, usize)>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// `(parameter slot, gradient)` for every parameter leaf on the tape.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Mat)> {
        self.params
            .iter()
            .filter_map(|&(slot, node)| self.grads[node].as_ref().map(|g| (slot, g)))
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Tape {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Mat, op: Op) -> Var {
        if self.precision == Precision::Narrow {
            for v in &mut value.data {
                *v = self.precision.round(*v);
            }
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported under parameter `slot`.
    pub fn param(&mut self, slot: usize, value: &Mat) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(out, Op::Gather(table, idx))
    }

    pub fn gather_scalars(&mut self, table: Var, idx: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols);
        let t = self.value(table);
        let out = Mat::from_vec(rows, cols, idx.iter().map(|&i| t.data[i]).collect());
        self.push(out, Op::GatherScalars(table, idx))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols));
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols));
        let mut out = self.value(a).clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let src = self.value(a);
        assert!(start + width <= src.cols);
        let mut out = Mat::zeros(src.rows, width);
        for r in 0..src.rows {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in &parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols].copy_from_slice(m.row(r));
            }
            offset += m.cols;
        }
        self.push(out, Op::ConcatCols(parts))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardisation without learned gain or offset.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        self.push(out, Op::LayerNormRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Column means; each column is summed in ascending order so the result
    /// does not depend on row order.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        assert!(src.rows > 0, "mean of zero rows");
        let mut column = vec![0.0; src.rows];
        let mut out = Mat::zeros(1, src.cols);
        for c in 0..src.cols {
            for (r, x) in column.iter_mut().enumerate() {
                *x = src.get(r, c);
            }
            out.data[c] = canonical_sum(&mut column) / src.rows as f64;
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Mean softmax cross-entropy of each row against its label.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, labels.len());
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = l.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let out = Mat::from_vec(1, 1, vec![total / labels.len() as f64]);
        self.push(out, Op::CrossEntropy(logits, labels))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape());
        let (nx, ny) = (dot(&x.data, &x.data).sqrt(), dot(&y.data, &y.data).sqrt());
        let c = if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot(&x.data, &y.data) / (nx * ny)
        };
        self.push(Mat::from_vec(1, 1, vec![c]), Op::Cosine(a, b))
    }

    pub fn pair_loss(&mut self, cos: Var, similar: bool, margin: f64) -> Var {
        let c = self.value(cos).data[0];
        let l = if similar { 1.0 - c } else { (c - margin).max(0.0) };
        self.push(Mat::from_vec(1, 1, vec![l]), Op::PairLoss(cos, similar, margin))
    }

    pub fn sum_scalars(&mut self, parts: Vec<Var>) -> Var {
        let total = parts.iter().map(|&p| self.value(p).data[0]).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::SumScalars(parts))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Gather(table, rows) => {
                    let t = self.value(*table);
                    let mut dt = Mat::zeros(t.rows, t.cols);
                    for (r, &i) in rows.iter().enumerate() {
                        for (d, s) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::GatherScalars(table, flat) => {
                    let t = self.value(*table);
                    let mut dt = Mat::zeros(t.rows, t.cols);
                    for (k, &i) in flat.iter().enumerate() {
                        dt.data[i] += g.data[k];
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, s) in dr.data.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, dr);
                }
                Op::MulRow(a, row) => {
                    let x = self.value(*a);
                    let w = self.value(*row);
                    let mut dx = g.clone();
                    let mut dw = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            dx.data[r * g.cols + c] *= w.data[c];
                            dw.data[c] += g.get(r, c) * x.get(r, c);
                        }
                    }
                    acc(&mut grads, *a, dx);
                    acc(&mut grads, *row, dw);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let mut da = g.clone();
                    da.data.iter_mut().for_each(|v| *v *= s);
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut da = Mat::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut dp = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let mut da = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner = dot(yr, gr);
                        for (d, (yv, gv)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = yv * (gv - inner);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNormRows(a) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let xr = x.row(r);
                        let n = xr.len() as f64;
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (yr, gr) = (y.row(r), g.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = dot(gr, yr) / n;
                        for (d, (gv, yv)) in da.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                            *d = inv * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut da = g.clone();
                    for (d, xv) in da.data.iter_mut().zip(&x.data) {
                        if *xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows, x.cols);
                    let inv = 1.0 / x.rows as f64;
                    for r in 0..x.rows {
                        for (d, gv) in da.row_mut(r).iter_mut().zip(&g.data) {
                            *d = gv * inv;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::CrossEntropy(logits, labels) => {
                    let l = self.value(*logits);
                    let scale = g.data[0] / labels.len() as f64;
                    let mut dl = Mat::zeros(l.rows, l.cols);
                    for (r, &lab) in labels.iter().enumerate() {
                        let row = l.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for (c, d) in dl.row_mut(r).iter_mut().enumerate() {
                            let p = (row[c] - max).exp() / total;
                            *d = scale * (p - if c == lab { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::Cosine(a, b) => {
                    let (x, z) = (self.value(*a), self.value(*b));
                    let (nx, nz) = (dot(&x.data, &x.data).sqrt(), dot(&z.data, &z.data).sqrt());
                    let (mut dx, mut dz) = (Mat::zeros(1, x.cols), Mat::zeros(1, z.cols));
                    if nx > 0.0 && nz > 0.0 {
                        let c = y.data[0];
                        let up = g.data[0];
                        for k in 0..x.cols {
                            dx.data[k] = up * (z.data[k] / (nx * nz) - c * x.data[k] / (nx * nx));
                            dz.data[k] = up * (x.data[k] / (nx * nz) - c * z.data[k] / (nz * nz));
                        }
                    }
                    acc(&mut grads, *a, dx);
                    acc(&mut grads, *b, dz);
                }
                Op::PairLoss(cos, similar, margin) => {
                    let c = self.value(*cos).data[0];
                    let d = if *similar {
                        -1.0
                    } else if c > *margin {
                        1.0
                    } else {
                        0.0
                    };
                    acc(&mut grads, *cos, Mat::from_vec(1, 1, vec![d * g.data[0]]));
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((slot, i)),
                _ => None,
            })
            .collect();
        Grads { grads, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` around `x`, one entry at a time.
    fn numeric(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x.rows, x.cols);
        for k in 0..x.data.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data[k] += h;
            m.data[k] -= h;
            out.data[k] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn check(x: Mat, build: impl Fn(&mut Tape, Var) -> Var) {
        let eval = |m: &Mat| {
            let mut t = Tape::new(Precision::Wide);
            let v = t.leaf(m.clone());
            let out = build(&mut t, v);
            t.value(out).data[0]
        };
        let mut t = Tape::new(Precision::Wide);
        let v = t.leaf(x.clone());
        let out = build(&mut t, v);
        let g = t.backward(out);
        let analytic = g.of(v).cloned().unwrap_or_else(|| Mat::zeros(x.rows, x.cols));
        let expected = numeric(&x, eval);
        for (a, n) in analytic.data.iter().zip(&expected.data) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    fn sample() -> Mat {
        Mat::from_rows(&[vec![0.3, -1.2, 0.7], vec![1.1, 0.4, -0.5]])
    }

    #[test]
    fn softmax_then_cross_entropy() {
        check(sample(), |t, x| {
            let s = t.softmax_rows(x);
            let s = t.scale(s, 3.0);
            t.cross_entropy(s, vec![2, 0])
        });
    }

    #[test]
    fn matmul_both_sides() {
        check(sample(), |t, x| {
            let xt = t.matmul_t(x, x);
            let y = t.matmul(xt, x);
            let m = t.mean_rows(y);
            t.cross_entropy(m, vec![1])
        });
    }

    #[test]
    fn layer_norm_and_rows() {
        check(sample(), |t, x| {
            let n = t.layer_norm_rows(x);
            let r = t.slice_cols(x, 0, 3);
            let row = t.mean_rows(r);
            let y = t.mul_row(n, row);
            let y = t.add_row(y, row);
            let y = t.relu(y);
            let c = t.concat_cols(vec![y, x]);
            t.cross_entropy(c, vec![4, 1])
        });
    }

    #[test]
    fn cosine_and_pair_losses() {
        check(sample(), |t, x| {
            let a = t.slice_cols(x, 0, 2);
            let top = t.mean_rows(a);
            let b = t.slice_cols(x, 1, 2);
            let bottom = t.mean_rows(b);
            let c = t.cosine(top, bottom);
            let pos = t.pair_loss(c, true, 0.0);
            let neg = t.pair_loss(c, false, -0.5);
            t.sum_scalars(vec![pos, neg])
        });
    }

    #[test]
    fn gathers() {
        check(sample(), |t, x| {
            let rows = t.gather(x, vec![1, 1, 0]);
            let s = t.gather_scalars(x, vec![0, 5, 5, 2], 2, 2);
            let m = t.mean_rows(rows);
            let n = t.mean_rows(s);
            let c = t.concat_cols(vec![m, n]);
            t.cross_entropy(c, vec![3])
        });
    }

    #[test]
    fn narrow_rounds_values() {
        let mut t = Tape::new(Precision::Narrow);
        let v = t.leaf(Mat::from_vec(1, 1, vec![1.0 + 1e-6]));
        assert_eq!(t.value(v).data[0], 1.0);
    }

    #[test]
    fn zero_norm_cosine_is_zero() {
        let mut t = Tape::new(Precision::Wide);
        let a = t.leaf(Mat::zeros(1, 3));
        let b = t.leaf(Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let c = t.cosine(a, b);
        assert_eq!(t.value(c).data[0], 0.0);
        let g = t.backward(c);
        assert_eq!(g.of(b).unwrap().max_abs(), 0.0);
    }
}
