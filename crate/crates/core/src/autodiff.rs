//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! The tape is rebuilt for every evaluation (define-by-run). Every value is a
//! 2-D `f64` matrix; batched quantities put samples on rows. There is no
//! broadcasting: shapes must agree exactly, and row replication is an explicit
//! [`Tape::repeat_rows`] node.
//!
//! ```
//! use ndarray::arr2;
//! use sigwgan::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(arr2(&[[3.0]]));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
//! ```

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{kernels, TensorShape};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    RepeatRows(usize),
    MeanRows(usize),
    Sum(usize),
    TensorMul { a: usize, b: usize, shape: TensorShape },
    PathSignature { path: usize, shape: TensorShape, points: usize, prefixes: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::MatMul(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::TensorMul { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _) | Op::Tanh(a) | Op::Sigmoid(a) | Op::RepeatRows(a) | Op::MeanRows(a) | Op::Sum(a) => {
                vec![*a]
            }
            Op::Slice { src, .. } => vec![*src],
            Op::PathSignature { path, .. } => vec![*path],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that depends on a
/// parameter. Constants never receive a gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter; unreachable parameters get exact zeros.
    pub fn wrt(&self, v: Var) -> Mat {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Mat::zeros(self.shapes[v.0]),
        }
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

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let value = if value.is_standard_layout() { value } else { value.as_standard_layout().into_owned() };
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, is_param: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Mat) -> Var {
        let value = value.as_standard_layout().into_owned();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, is_param: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        let value = value.as_standard_layout().into_owned();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false, is_param: false });
        Var(self.nodes.len() - 1)
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].is_param
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a.0, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((_, k1), (k2, _)) = (self.shape(a), self.shape(b));
        if k1 != k2 {
            return Err(Error::shape(format!("matmul: {:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat: row counts differ"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.shape(a).1;
        if start >= end || end > cols {
            return Err(Error::shape(format!("slice {start}..{end} of {cols} columns")));
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::Slice { src: a.0, start }))
    }

    /// Stacks `n` copies of a single-row node.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(Error::shape(format!("repeat_rows needs a single row, got {r}")));
        }
        let row = self.value(a).row(0).to_owned();
        let v = row.broadcast((n, c)).expect("row broadcast").to_owned();
        Ok(self.push(v, Op::RepeatRows(a.0)))
    }

    /// Column means, as a single row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a.0))
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a.0))
    }

    /// Row-wise truncated tensor product of two batches of tensors.
    pub fn tensor_mul(&mut self, a: Var, b: Var, shape: TensorShape) -> Result<Var> {
        self.same_shape(a, b, "tensor_mul")?;
        let (rows, cols) = self.shape(a);
        if cols != shape.len() {
            return Err(Error::shape(format!("tensor_mul: {cols} columns for a tensor of size {}", shape.len())));
        }
        let mut out = Mat::zeros((rows, cols));
        for ((mut o, x), y) in out.rows_mut().into_iter().zip(self.value(a).rows()).zip(self.value(b).rows()) {
            kernels::mul_acc(
                shape,
                x.as_slice().expect("standard layout"),
                y.as_slice().expect("standard layout"),
                o.as_slice_mut().expect("standard layout"),
            );
        }
        Ok(self.push(out, Op::TensorMul { a: a.0, b: b.0, shape }))
    }

    /// Row-wise truncated exponential, built from [`Tape::tensor_mul`] nodes
    /// following Horner's rule. The scalar column of `x` must be zero.
    pub fn tensor_exp(&mut self, x: Var, shape: TensorShape) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if cols != shape.len() {
            return Err(Error::shape(format!("tensor_exp: {cols} columns for a tensor of size {}", shape.len())));
        }
        if self.value(x).column(0).iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::domain("tensor_exp needs a zero scalar term"));
        }
        let mut unit = Mat::zeros((rows, cols));
        unit.column_mut(0).fill(1.0);
        let unit = self.constant(unit);
        let mut acc = unit;
        for n in (1..=shape.depth).rev() {
            let prod = self.tensor_mul(x, acc, shape)?;
            let scaled = self.scale(prod, 1.0 / n as f64);
            acc = self.add(scaled, unit)?;
        }
        Ok(acc)
    }

    /// Row-wise signature of piecewise-linear paths.
    ///
    /// Row `b` of `path` holds `points` points of width `shape.width`,
    /// point-major. The result is the Chen product of the segment
    /// exponentials, one truncated tensor per row.
    pub fn path_signature(&mut self, path: Var, shape: TensorShape, points: usize) -> Result<Var> {
        let (rows, cols) = self.shape(path);
        if cols != points * shape.width || points < 2 {
            return Err(Error::shape(format!(
                "path_signature: {cols} columns for {points} points of width {}",
                shape.width
            )));
        }
        let len = shape.len();
        let d = shape.width;
        let values = self.value(path).as_standard_layout().into_owned();
        // prefixes[b][i] is the signature of the first i+1 points of row b.
        let mut prefixes = vec![0.0; rows * points * len];
        let flat = values.as_slice().expect("standard layout");
        prefixes.par_chunks_mut(points * len).zip(flat.par_chunks(cols)).for_each(
            |(pre, row)| {
                pre[0] = 1.0;
                let mut delta = vec![0.0; d];
                for i in 1..points {
                    for a in 0..d {
                        delta[a] = row[i * d + a] - row[(i - 1) * d + a];
                    }
                    let (done, rest) = pre.split_at_mut(i * len);
                    kernels::chen_exp_step(shape, &done[(i - 1) * len..], &delta, &mut rest[..len]);
                }
            },
        );
        let mut out = Mat::zeros((rows, len));
        for (b, mut o) in out.rows_mut().into_iter().enumerate() {
            let last = (b * points + points - 1) * len;
            o.as_slice_mut().expect("standard layout").copy_from_slice(&prefixes[last..last + len]);
        }
        Ok(self.push(out, Op::PathSignature { path: path.0, shape, points, prefixes }))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::domain(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for input in node.op.inputs() {
                if input >= id {
                    return Err(Error::Internal(format!("tape cycle: node {id} reads node {input}")));
                }
            }
            let acc = |grads: &mut Vec<Option<Mat>>, i: usize, contrib: Mat| {
                if !self.nodes[i].requires_grad {
                    return;
                }
                let contrib =
                    if contrib.is_standard_layout() { contrib } else { contrib.as_standard_layout().into_owned() };
                match &mut grads[i] {
                    Some(existing) => *existing += &contrib,
                    slot => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, &g * *f),
                Op::MatMul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        acc(&mut grads, *a, g.dot(&self.nodes[*b].value.t()));
                    }
                    if self.nodes[*b].requires_grad {
                        acc(&mut grads, *b, self.nodes[*a].value.t().dot(&g));
                    }
                }
                Op::Tanh(a) => {
                    let dv = node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, &g * &dv);
                }
                Op::Sigmoid(a) => {
                    let dv = node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, &g * &dv);
                }
                Op::Mul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        acc(&mut grads, *a, &g * &self.nodes[*b].value);
                    }
                    if self.nodes[*b].requires_grad {
                        acc(&mut grads, *b, &g * &self.nodes[*a].value);
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Slice { src, start } => {
                    let mut full = Mat::zeros(self.nodes[*src].value.dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *src, full);
                }
                Op::RepeatRows(a) => acc(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::MeanRows(a) => {
                    let rows = self.nodes[*a].value.nrows();
                    let row = g.row(0).mapv(|v| v / rows as f64);
                    acc(&mut grads, *a, row.broadcast((rows, g.ncols())).expect("row broadcast").to_owned());
                }
                Op::Sum(a) => acc(&mut grads, *a, Mat::from_elem(self.nodes[*a].value.dim(), g[[0, 0]])),
                Op::TensorMul { a, b, shape } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (need_a, need_b) = (self.nodes[*a].requires_grad, self.nodes[*b].requires_grad);
                    let mut ga = Mat::zeros(va.dim());
                    let mut gb = Mat::zeros(vb.dim());
                    for r in 0..va.nrows() {
                        let gr = g.row(r);
                        let mut ga_r = ga.row_mut(r);
                        let mut gb_r = gb.row_mut(r);
                        kernels::mul_backward(
                            *shape,
                            va.row(r).as_slice().expect("standard layout"),
                            vb.row(r).as_slice().expect("standard layout"),
                            gr.as_slice().expect("standard layout"),
                            need_a.then(|| ga_r.as_slice_mut().expect("standard layout")),
                            need_b.then(|| gb_r.as_slice_mut().expect("standard layout")),
                        );
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::PathSignature { path, shape, points, prefixes } => {
                    let gp = path_signature_backward(&self.nodes[*path].value, &g, *shape, *points, prefixes);
                    acc(&mut grads, *path, gp);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        // Only leaves keep their gradient past the sweep.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn path_signature_backward(values: &Mat, g: &Mat, shape: TensorShape, points: usize, prefixes: &[f64]) -> Mat {
    let len = shape.len();
    let d = shape.width;
    let values = values.as_standard_layout();
    let g = g.as_standard_layout();
    let cols = values.ncols();
    let mut out = Mat::zeros(values.dim());
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(cols)
        .zip(values.as_slice().expect("standard layout").par_chunks(cols))
        .zip(g.as_slice().expect("standard layout").par_chunks(len))
        .enumerate()
        .for_each(|(b, ((gout, row), grow))| {
            let pre = &prefixes[b * points * len..(b + 1) * points * len];
            let mut gs = grow.to_vec();
            let mut gs_prev = vec![0.0; len];
            let mut gdelta = vec![0.0; d];
            let mut delta = vec![0.0; d];
            for i in (1..points).rev() {
                for a in 0..d {
                    delta[a] = row[i * d + a] - row[(i - 1) * d + a];
                }
                gs_prev.iter_mut().for_each(|v| *v = 0.0);
                gdelta.iter_mut().for_each(|v| *v = 0.0);
                let s_prev = &pre[(i - 1) * len..i * len];
                kernels::chen_exp_step_backward(shape, s_prev, &delta, &gs, Some(&mut gs_prev), &mut gdelta);
                for a in 0..d {
                    gout[i * d + a] += gdelta[a];
                    gout[(i - 1) * d + a] -= gdelta[a];
                }
                std::mem::swap(&mut gs, &mut gs_prev);
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    /// Central differences of `f` around `x0`, entry by entry.
    fn finite_diff(x0: &Mat, f: &dyn Fn(&Mat) -> f64, h: f64) -> Mat {
        let mut g = Mat::zeros(x0.dim());
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut xp = x0.clone();
            xp[[r, c]] += h;
            let mut xm = x0.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(got: &Mat, want: &Mat) {
        for (a, b) in got.iter().zip(want) {
            let err = if b.abs() < 1e-8 { (a - b).abs() } else { ((a - b) / b).abs() };
            assert!(err < 1e-6, "gradient {a} vs finite difference {b}");
        }
    }

    #[test]
    fn square_of_three() {
        let mut t = Tape::new();
        let x = t.param(arr2(&[[3.0]]));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x)[[0, 0]], 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(arr2(&[[1.0, 2.0]]));
        assert!(matches!(t.backward(x), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch_at_construction() {
        let mut t = Tape::new();
        let a = t.constant(Mat::zeros((2, 3)));
        let b = t.constant(Mat::zeros((3, 2)));
        assert!(t.add(a, b).is_err());
        assert!(t.matmul(a, a).is_err());
        assert!(t.matmul(a, b).is_ok());
        assert!(t.repeat_rows(a, 4).is_err());
    }

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.param(arr2(&[[0.0]]));
        let y = t.tanh(x);
        assert_eq!(t.value(y)[[0, 0]], 0.0);
        assert_eq!(t.backward(y).unwrap().wrt(x)[[0, 0]], 1.0);
    }

    #[test]
    fn unreachable_parameter_gets_zero_and_constants_none() {
        let mut t = Tape::new();
        let x = t.param(arr2(&[[2.0, 1.0]]));
        let unused = t.param(arr2(&[[5.0]]));
        let c = t.constant(arr2(&[[1.0, 1.0]]));
        let y = t.mul(x, c).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(unused), arr2(&[[0.0]]));
        assert!(g.get(c).is_none());
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let w0 = arr2(&[[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]]);
        let x = arr2(&[[1.0, -0.5], [0.2, 0.7], [-1.1, 0.3]]);
        let f = |w: &Mat, grads: bool| -> (f64, Option<Mat>) {
            let mut t = Tape::new();
            let wv = t.param(w.clone());
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, wv).unwrap();
            let a = t.tanh(h);
            let b = t.sigmoid(h);
            let left = t.slice(a, 0, 2).unwrap();
            let right = t.slice(b, 1, 3).unwrap();
            let prod = t.mul(left, right).unwrap();
            let cat = t.concat(&[prod, a]).unwrap();
            let m = t.mean_rows(cat);
            let rep = t.repeat_rows(m, 3).unwrap();
            let diff = t.sub(rep, cat).unwrap();
            let sq = t.mul(diff, diff).unwrap();
            let sc = t.scale(sq, 0.7);
            let l = t.sum(sc);
            let g = grads.then(|| t.backward(l).unwrap().wrt(wv));
            (t.scalar(l), g)
        };
        let (_, g) = f(&w0, true);
        let fd = finite_diff(&w0, &|w| f(w, false).0, 1e-6);
        assert_close(&g.unwrap(), &fd);
    }

    #[test]
    fn tensor_mul_gradient() {
        let shape = TensorShape::new(2, 1).unwrap();
        let a0 = arr2(&[[0.5, 1.2, -0.7]]);
        let b0 = arr2(&[[1.5, -0.3, 0.8]]);
        let weights = arr2(&[[0.9, -1.3, 0.4]]);
        let f = |a: &Mat, grads: bool| -> (f64, Option<Mat>) {
            let mut t = Tape::new();
            let av = t.param(a.clone());
            let bv = t.constant(b0.clone());
            let w = t.constant(weights.clone());
            let p = t.tensor_mul(av, bv, shape).unwrap();
            let q = t.mul(p, w).unwrap();
            let l = t.sum(q);
            let g = grads.then(|| t.backward(l).unwrap().wrt(av));
            (t.scalar(l), g)
        };
        let fd = finite_diff(&a0, &|a| f(a, false).0, 1e-6);
        assert_close(&f(&a0, true).1.unwrap(), &fd);
    }

    #[test]
    fn tensor_exp_derivative_at_zero_is_identity_on_level_one() {
        let shape = TensorShape::new(2, 3).unwrap();
        for k in 1..=2 {
            let mut t = Tape::new();
            let x = t.param(Mat::zeros((1, shape.len())));
            let e = t.tensor_exp(x, shape).unwrap();
            let picked = t.slice(e, k, k + 1).unwrap();
            let l = t.sum(picked);
            let g = t.backward(l).unwrap().wrt(x);
            for j in 0..shape.len() {
                assert_eq!(g[[0, j]], if j == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn path_signature_node_agrees_with_exp_and_mul_nodes() {
        let shape = TensorShape::new(2, 3).unwrap();
        let pts = arr2(&[[0.0, 0.0, 0.4, -0.3, 0.9, 0.5, 0.2, 1.1], [0.1, 0.0, -0.2, 0.6, 0.3, 0.3, 1.0, -0.4]]);
        let weights = Mat::from_shape_fn((2, shape.len()), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 2.0);

        let fused = |p: &Mat, grads: bool| -> (f64, Option<Mat>) {
            let mut t = Tape::new();
            let pv = t.param(p.clone());
            let s = t.path_signature(pv, shape, 4).unwrap();
            let w = t.constant(weights.clone());
            let q = t.mul(s, w).unwrap();
            let l = t.sum(q);
            let g = grads.then(|| t.backward(l).unwrap().wrt(pv));
            (t.scalar(l), g)
        };
        let composite = |p: &Mat| -> f64 {
            let mut t = Tape::new();
            let pv = t.param(p.clone());
            let mut sig = {
                let mut u = Mat::zeros((2, shape.len()));
                u.column_mut(0).fill(1.0);
                t.constant(u)
            };
            for i in 1..4 {
                let cur = t.slice(pv, 2 * i, 2 * i + 2).unwrap();
                let prev = t.slice(pv, 2 * i - 2, 2 * i).unwrap();
                let delta = t.sub(cur, prev).unwrap();
                let z0 = t.constant(Mat::zeros((2, 1)));
                let rest = t.constant(Mat::zeros((2, shape.len() - 3)));
                let lifted = t.concat(&[z0, delta, rest]).unwrap();
                let e = t.tensor_exp(lifted, shape).unwrap();
                sig = t.tensor_mul(sig, e, shape).unwrap();
            }
            let w = t.constant(weights.clone());
            let q = t.mul(sig, w).unwrap();
            let l = t.sum(q);
            t.scalar(l)
        };
        let (v, g) = fused(&pts, true);
        assert!((v - composite(&pts)).abs() < 1e-13);
        let fd = finite_diff(&pts, &|p| fused(p, false).0, 1e-6);
        assert_close(&g.unwrap(), &fd);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let x = t.param(Mat::from_shape_fn((3, 4), |(r, c)| (r as f64 - c as f64) * 0.37));
            let s = t.path_signature(x, TensorShape::new(2, 3).unwrap(), 2).unwrap();
            let l = t.sum(s);
            t.backward(l).unwrap().wrt(x)
        };
        assert_eq!(run(), run());
    }
}
