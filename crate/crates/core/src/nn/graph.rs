//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape built fresh for every forward pass. Parameters are
//! borrowed from a [`ParamSet`] (no copy), intermediate values are owned.
//! Calling [`Graph::backward`] on a scalar node returns the gradient of every
//! parameter that took part in the computation.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use super::params::{ParamId, ParamSet};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    ShiftRows { src: Var, offset: isize, segment: usize },
    SoftmaxRows(Var),
    RmsNormRows(Var, f64),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    CosineDistanceRows(Var, Var),
    StraightThrough(Var),
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Tape of matrix operations.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Parameter gradients produced by [`Graph::backward`], indexed like the
/// owning [`ParamSet`]. Parameters that did not influence the loss have `None`.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Array2<f64>>> {
        self.grads.iter().map(|g| g.as_ref())
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Option<Array2<f64>>> {
        self.grads.iter_mut()
    }

    /// Adds `other` into `self` element-wise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => *m += g,
                    None => *mine = Some(g.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A constant input. Gradients never flow into it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable parameter, borrowed from `params`.
    pub fn param(&mut self, params: &'a ParamSet, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(params.get(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Same value as `v`, cut off from the gradient (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a + row` with a 1×n row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: expected a 1×n row");
        let value = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a ⊙ row` with a 1×n row broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row: expected a 1×n row");
        let value = self.value(a) * self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, factor), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(value, Op::Silu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().as_standard_layout().into_owned();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row `i` of the result is row `i + offset` of `a` when both rows lie in
    /// the same block of `segment` consecutive rows, and zero otherwise.
    /// This is the building block of a zero-padded temporal convolution over
    /// a batch of equal-length sequences stacked along the rows.
    pub fn shift_rows(&mut self, a: Var, offset: isize, segment: usize) -> Var {
        let src = self.value(a);
        let (rows, cols) = src.dim();
        assert!(segment > 0 && rows % segment == 0, "shift_rows: bad segment");
        let mut value = Array2::zeros((rows, cols));
        for i in 0..rows {
            if let Some(j) = shifted_index(i, offset, segment) {
                value.row_mut(i).assign(&src.row(j));
            }
        }
        let ng = self.ng(a);
        self.push(
            value,
            Op::ShiftRows {
                src: a,
                offset,
                segment,
            },
            ng,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Divides each row by its root-mean-square (no gain).
    pub fn rms_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
            let r = 1.0 / (ms + eps).sqrt();
            row.mapv_inplace(|x| x * r);
        }
        let ng = self.ng(a);
        self.push(value, Op::RmsNormRows(a, eps), ng)
    }

    /// Row lookup: result row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).assign(&t.row(id));
        }
        let ng = self.ng(table);
        self.push(value, Op::Gather(table, ids.to_vec()), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Per-row `1 − cos(a_i, b_i)` as an n×1 column. A row where either side
    /// has zero norm counts as similarity 0 and passes no gradient.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "cosine: shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = Array2::zeros((av.nrows(), 1));
        for (i, (ra, rb)) in av.rows().into_iter().zip(bv.rows()).enumerate() {
            value[[i, 0]] = 1.0 - cosine(&ra, &rb);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::CosineDistanceRows(a, b), ng)
    }

    // Composite helpers.

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// `x · w + b` for a weight `w` (in × out) and bias row `b` (1 × out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    /// Straight-through estimator: forward value of `quantized`, gradient of
    /// the identity with respect to `continuous`.
    pub fn straight_through(&mut self, continuous: Var, quantized: Var) -> Var {
        assert_eq!(self.shape(continuous), self.shape(quantized));
        let value = self.value(quantized).clone();
        let ng = self.ng(continuous);
        self.push(value, Op::StraightThrough(continuous), ng)
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Gradients {
        self.backward_capturing(loss, params, &[]).0
    }

    /// Like [`Graph::backward`], also returning the gradient that reached each
    /// node in `capture` (zeros when it did not influence the loss).
    pub fn backward_capturing(
        &self,
        loss: Var,
        params: &ParamSet,
        capture: &[Var],
    ) -> (Gradients, Vec<Array2<f64>>) {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut captured: Vec<Array2<f64>> =
            capture.iter().map(|&v| Array2::zeros(self.shape(v))).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::zeros_like(params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            for (slot, _) in captured.iter_mut().zip(capture).filter(|(_, v)| v.0 == idx) {
                slot.assign(&g);
            }
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, delta: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out.grads[id.index()] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g, &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, &g * self.value(*b), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, &g * self.value(*a), &mut grads);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::MulRow(a, row) => {
                    if self.ng(*row) {
                        let d = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(*row, d, &mut grads);
                    }
                    if self.ng(*a) {
                        acc(*a, &g * self.value(*row), &mut grads);
                    }
                }
                Op::Scale(a, f) => acc(*a, g * *f, &mut grads),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(*a, d, &mut grads);
                }
                Op::Silu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        let s = sigmoid(x);
                        *d *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(*a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*a, d, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&*node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*a, d, &mut grads);
                }
                Op::Transpose(a) => acc(*a, g.t().as_standard_layout().into_owned(), &mut grads),
                Op::StraightThrough(a) => acc(*a, g, &mut grads),
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        if self.ng(p) {
                            acc(p, g.slice(s![start..start + n, ..]).to_owned(), &mut grads);
                        }
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).ncols();
                        if self.ng(p) {
                            acc(p, g.slice(s![.., start..start + n]).to_owned(), &mut grads);
                        }
                        start += n;
                    }
                }
                Op::ShiftRows {
                    src,
                    offset,
                    segment,
                } => {
                    let mut d = Array2::zeros(self.value(*src).dim());
                    for i in 0..g.nrows() {
                        if let Some(j) = shifted_index(i, *offset, *segment) {
                            let mut row = d.row_mut(j);
                            row += &g.row(i);
                        }
                    }
                    acc(*src, d, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &*node.value;
                    let mut d = g;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|dv, &yv| *dv = yv * (*dv - dot));
                    }
                    acc(*a, d, &mut grads);
                }
                Op::RmsNormRows(a, eps) => {
                    let x = self.value(*a);
                    let n = x.ncols() as f64;
                    let mut d = g;
                    for (mut drow, xrow) in d.rows_mut().into_iter().zip(x.rows()) {
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / n;
                        let r = 1.0 / (ms + eps).sqrt();
                        let dot: f64 = drow.iter().zip(xrow.iter()).map(|(a, b)| a * b).sum();
                        let c = r * r * r * dot / n;
                        Zip::from(&mut drow)
                            .and(&xrow)
                            .for_each(|dv, &xv| *dv = r * *dv - c * xv);
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Gather(table, ids) => {
                    let mut d = Array2::zeros(self.value(*table).dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(i);
                    }
                    acc(*table, d, &mut grads);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(*a, d, &mut grads);
                }
                Op::Mean(a) => {
                    let dim = self.value(*a).dim();
                    let d = Array2::from_elem(dim, g[[0, 0]] / (dim.0 * dim.1) as f64);
                    acc(*a, d, &mut grads);
                }
                Op::CosineDistanceRows(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Array2::zeros(av.dim());
                    let mut db = Array2::zeros(bv.dim());
                    for i in 0..av.nrows() {
                        let (ra, rb) = (av.row(i), bv.row(i));
                        let na = ra.dot(&ra).sqrt();
                        let nb = rb.dot(&rb).sqrt();
                        if na == 0.0 || nb == 0.0 {
                            continue;
                        }
                        let c = ra.dot(&rb) / (na * nb);
                        let gi = g[[i, 0]];
                        // d(1 - c)/da = -(b/(|a||b|) - c a/|a|²)
                        let mut rda = da.row_mut(i);
                        Zip::from(&mut rda).and(&ra).and(&rb).for_each(|d, &x, &y| {
                            *d = -gi * (y / (na * nb) - c * x / (na * na));
                        });
                        let mut rdb = db.row_mut(i);
                        Zip::from(&mut rdb).and(&ra).and(&rb).for_each(|d, &x, &y| {
                            *d = -gi * (x / (na * nb) - c * y / (nb * nb));
                        });
                    }
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
            }
        }
        (out, captured)
    }
}

fn shifted_index(i: usize, offset: isize, segment: usize) -> Option<usize> {
    let seg_start = (i / segment) * segment;
    let j = i as isize + offset;
    if j < seg_start as isize || j >= (seg_start + segment) as isize {
        None
    } else {
        Some(j as usize)
    }
}

fn cosine(ra: &ndarray::ArrayView1<f64>, rb: &ndarray::ArrayView1<f64>) -> f64 {
    let na = ra.dot(ra).sqrt();
    let nb = rb.dot(rb).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        ra.dot(rb) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_param_gradients, max_relative_error};
    use crate::nn::params::ParamSet;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_params(shapes: &[(usize, usize)], seed: u64) -> (ParamSet, Vec<ParamId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| ps.add_normal(&format!("p{i}"), s, 0.7, &mut rng))
            .collect();
        (ps, ids)
    }

    fn check(
        shapes: &[(usize, usize)],
        f: impl for<'p> Fn(&mut Graph<'p>, &'p ParamSet, &[ParamId]) -> Var,
    ) {
        let (ps, ids) = toy_params(shapes, 7);
        let report = check_param_gradients(&ps, |g, p| f(g, p, &ids), 1e-5);
        let err = max_relative_error(&report);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        check(&[(3, 4), (1, 4), (3, 4)], |g, p, ids| {
            let a = g.param(p, ids[0]);
            let r = g.param(p, ids[1]);
            let c = g.param(p, ids[2]);
            let x = g.add_row(a, r);
            let y = g.mul_row(c, r);
            let z = g.mul(x, y);
            let z = g.sub(z, a);
            let z = g.silu(z);
            let z = g.tanh(z);
            let z = g.sigmoid(z);
            let z = g.scale(z, 1.7);
            g.sum(z)
        });
    }

    #[test]
    fn matmul_transpose_softmax() {
        check(&[(4, 3), (3, 5), (4, 5)], |g, p, ids| {
            let a = g.param(p, ids[0]);
            let b = g.param(p, ids[1]);
            let w = g.param(p, ids[2]);
            let ab = g.matmul(a, b);
            let sm = g.softmax_rows(ab);
            let wt = g.transpose(w);
            let m = g.matmul(sm, wt);
            let m = g.mul(m, m);
            g.mean(m)
        });
    }

    #[test]
    fn slicing_concat_shift_gather() {
        check(&[(6, 4), (5, 4)], |g, p, ids| {
            let a = g.param(p, ids[0]);
            let t = g.param(p, ids[1]);
            let l = g.shift_rows(a, -1, 3);
            let r = g.shift_rows(a, 1, 3);
            let c = g.concat_cols(&[l, a, r]);
            let top = g.slice_rows(c, 0, 2);
            let mid = g.slice_cols(c, 2, 6);
            let mid = g.slice_rows(mid, 1, 2);
            let mid = g.concat_cols(&[mid, mid]);
            let stacked = g.concat_rows(&[top, mid]);
            let e = g.gather(t, &[0, 4, 4, 1]);
            let e = g.concat_cols(&[e, e, e]);
            let prod = g.mul(stacked, e);
            let prod = g.relu(prod);
            g.sum(prod)
        });
    }

    #[test]
    fn rms_norm_and_cosine() {
        check(&[(3, 5), (3, 5), (1, 5)], |g, p, ids| {
            let a = g.param(p, ids[0]);
            let b = g.param(p, ids[1]);
            let gain = g.param(p, ids[2]);
            let n = g.rms_norm_rows(a, 1e-6);
            let n = g.mul_row(n, gain);
            let d = g.cosine_distance_rows(n, b);
            let l = g.mse(n, b);
            let s = g.sum(d);
            g.add(s, l)
        });
    }

    #[test]
    fn shift_rows_respects_segments() {
        let ps = ParamSet::new();
        let mut g = Graph::new();
        let a = g.constant(array![[1.0], [2.0], [3.0], [4.0]]);
        let up = g.shift_rows(a, 1, 2);
        let down = g.shift_rows(a, -1, 2);
        assert_eq!(g.value(up), &array![[2.0], [0.0], [4.0], [0.0]]);
        assert_eq!(g.value(down), &array![[0.0], [1.0], [0.0], [3.0]]);
        let _ = ps;
    }

    #[test]
    fn cosine_zero_norm_rows_count_as_orthogonal() {
        let mut g = Graph::new();
        let a = g.constant(array![[0.0, 0.0], [1.0, 0.0]]);
        let b = g.constant(array![[1.0, 2.0], [-1.0, 0.0]]);
        let d = g.cosine_distance_rows(a, b);
        assert_eq!(g.value(d), &array![[1.0], [2.0]]);
    }

    #[test]
    fn straight_through_passes_gradient_unchanged() {
        let mut ps = ParamSet::new();
        let id = ps.add("ze", array![[0.2, -0.4]]);
        let mut g = Graph::new();
        let ze = g.param(&ps, id);
        let zq = g.constant(array![[1.0, 1.0]]);
        let st = g.straight_through(ze, zq);
        assert_eq!(g.value(st), &array![[1.0, 1.0]]);
        let w = g.constant(array![[3.0, -5.0]]);
        let y = g.mul(st, w);
        let y = g.sum(y);
        let grads = g.backward(y, &ps);
        assert_eq!(grads.get(id).unwrap(), &array![[3.0, -5.0]]);
    }

    #[test]
    fn constants_receive_no_gradient_and_unused_params_are_none() {
        let mut ps = ParamSet::new();
        let used = ps.add("used", array![[1.0]]);
        let unused = ps.add("unused", array![[1.0]]);
        let mut g = Graph::new();
        let u = g.param(&ps, used);
        let c = g.constant(array![[2.0]]);
        let y = g.mul(u, c);
        let grads = g.backward(y, &ps);
        assert_eq!(grads.get(used).unwrap()[[0, 0]], 2.0);
        assert!(grads.get(unused).is_none());
    }
}
