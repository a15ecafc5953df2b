//! A small reverse-mode differentiation tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the expression graph and the backward pass is a
//! single reverse sweep. Besides elementwise and linear-algebra primitives the
//! tape carries a few fused loss nodes whose adjoints are written out by hand.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Row `i` of the output is `sum coef * table[row]` over `taps[i]`.
    Mix {
        table: Var,
        taps: Vec<Vec<(usize, f64)>>,
    },
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Adds a `1 x c` row to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    /// Divides each row by its Euclidean norm; zero rows map to zero.
    NormalizeRows(Var),
    RowNorms(Var),
    RowDot(Var, Var),
    CenterRows(Var),
    Mean(Var),
    SumSquares(Var),
    /// `-mean(log(max(x, eps)))`
    ClampLogMean(Var, f64),
    ClassMean {
        x: Var,
        classes: Vec<usize>,
        count: usize,
    },
    /// Supervised contrastive loss over a similarity matrix, self-pairs excluded.
    Contrastive {
        sim: Var,
        classes: Vec<usize>,
        tau: f64,
    },
    /// Mean over rows of the summed binary cross-entropy against 0/1 targets.
    Bce {
        probs: Var,
        targets: Matrix,
    },
    WeightedSum(Vec<(Var, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Mix { .. } => "mix",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Affine(..) => "affine",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Sigmoid(_) => "sigmoid",
            Op::Clamp(..) => "clamp",
            Op::NormalizeRows(_) => "normalize_rows",
            Op::RowNorms(_) => "row_norms",
            Op::RowDot(..) => "row_dot",
            Op::CenterRows(_) => "center_rows",
            Op::Mean(_) => "mean",
            Op::SumSquares(_) => "sum_squares",
            Op::ClampLogMean(..) => "clamp_log_mean",
            Op::ClassMean { .. } => "class_mean",
            Op::Contrastive { .. } => "contrastive",
            Op::Bce { .. } => "bce",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    label: Option<&'static str>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    zero_norm_rows: usize,
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of zero-norm rows met by normalizations; their cosine is taken as 0.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    /// Attaches a name used in diagnostics.
    pub fn label(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].label = Some(label);
        v
    }

    /// Describes the first node, in evaluation order, holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.is_finite()).then(|| match n.label {
                Some(l) => format!("node {i} ({}, {l})", n.op.name()),
                None => format!("node {i} ({})", n.op.name()),
            })
        })
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn mix(&mut self, table: Var, taps: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let t = self.value(table);
        let mut out = Matrix::zeros(taps.len(), t.cols());
        for (i, row_taps) in taps.iter().enumerate() {
            for &(r, c) in row_taps {
                if r >= t.rows() {
                    return Err(Error::Shape(format!("mix row {r} outside table of {} rows", t.rows())));
                }
                for (o, &x) in out.row_mut(i).iter_mut().zip(t.row(r)) {
                    *o += c * x;
                }
            }
        }
        Ok(self.push(out, Op::Mix { table, taps }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", x.shape(), y.shape())));
        }
        let v = x.matmul(y);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::Shape(format!("matmul_t {:?} x {:?}^T", x.shape(), y.shape())));
        }
        let v = x.matmul_t(y);
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", x.shape(), r.shape())));
        }
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, &b) in v.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let n = norm(v.row(i));
            if n == 0.0 {
                self.zero_norm_rows += 1;
                continue;
            }
            for x in v.row_mut(i) {
                *x /= n;
            }
        }
        self.push(v, Op::NormalizeRows(a))
    }

    pub fn row_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows(), 1, (0..x.rows()).map(|i| norm(x.row(i))).collect());
        self.push(v, Op::RowNorms(a))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "row_dot")?;
        let v = Matrix::from_vec(x.rows(), 1, (0..x.rows()).map(|i| dot(x.row(i), y.row(i))).collect());
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    pub fn center_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mean = column_mean(x);
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, m) in v.row_mut(i).iter_mut().zip(&mean) {
                *o -= m;
            }
        }
        self.push(v, Op::CenterRows(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::scalar(x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::scalar(dot(x.as_slice(), x.as_slice()));
        self.push(v, Op::SumSquares(a))
    }

    pub fn clamp_log_mean(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let total: f64 = x.as_slice().iter().map(|&d| d.max(eps).ln()).sum();
        let v = Matrix::scalar(-total / x.len() as f64);
        self.push(v, Op::ClampLogMean(a, eps))
    }

    /// Per-class mean of the rows of `x`. Every class in `0..count` must own a row.
    pub fn class_mean(&mut self, x: Var, classes: &[usize], count: usize) -> Result<Var> {
        let xv = self.value(x);
        if classes.len() != xv.rows() {
            return Err(Error::Shape(format!("{} class ids for {} rows", classes.len(), xv.rows())));
        }
        let mut sizes = vec![0usize; count];
        let mut out = Matrix::zeros(count, xv.cols());
        for (i, &c) in classes.iter().enumerate() {
            if c >= count {
                return Err(Error::Invalid(format!("class id {c} outside 0..{count}")));
            }
            sizes[c] += 1;
            for (o, &v) in out.row_mut(c).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Invalid(format!("class {c} has no members")));
        }
        for (c, &s) in sizes.iter().enumerate() {
            for o in out.row_mut(c) {
                *o /= s as f64;
            }
        }
        Ok(self.push(
            out,
            Op::ClassMean {
                x,
                classes: classes.to_vec(),
                count,
            },
        ))
    }

    /// For every class with at least two rows, `-log` of the share of the
    /// off-diagonal `exp(sim / tau)` mass that falls on same-class pairs,
    /// averaged over those classes. Zero when no class has two rows.
    pub fn contrastive(&mut self, sim: Var, classes: &[usize], tau: f64) -> Result<Var> {
        let s = self.value(sim);
        let n = s.rows();
        if s.cols() != n || classes.len() != n {
            return Err(Error::Shape(format!("contrastive over {:?} with {} classes", s.shape(), classes.len())));
        }
        if !(tau > 0.0) {
            return Err(Error::Invalid(format!("temperature {tau} must be positive")));
        }
        let value = contrastive_parts(s, classes, tau).loss;
        Ok(self.push(
            Matrix::scalar(value),
            Op::Contrastive {
                sim,
                classes: classes.to_vec(),
                tau,
            },
        ))
    }

    pub fn bce(&mut self, probs: Var, targets: Matrix) -> Result<Var> {
        let p = self.value(probs);
        same_shape(p, &targets, "bce")?;
        let n = p.rows().max(1) as f64;
        let mut total = 0.0;
        for (&pv, &y) in p.as_slice().iter().zip(targets.as_slice()) {
            total += y * pv.ln() + (1.0 - y) * (1.0 - pv).ln();
        }
        Ok(self.push(Matrix::scalar(-total / n), Op::Bce { probs, targets }))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let x = self.value(v);
            if x.shape() != (1, 1) {
                return Err(Error::Shape(format!("weighted_sum term of shape {:?}", x.shape())));
            }
            total += w * x.item();
        }
        Ok(self.push(Matrix::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Shape("backward from a non-scalar node".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Mix { table, taps } => {
                let t = self.value(*table);
                let mut d = Matrix::zeros(t.rows(), t.cols());
                for (i, row_taps) in taps.iter().enumerate() {
                    for &(r, c) in row_taps {
                        for (o, &x) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += c * x;
                        }
                    }
                }
                acc(*table, d);
            }
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                // out = A B^T: dA = G B, dB = G^T A
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.t_matmul(self.value(*a)));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut d = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &x) in d.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                acc(*row, d);
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Affine(a, s) => acc(*a, g.scale(*s)),
            Op::Relu(a) => acc(*a, zip_map(g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            Op::Abs(a) => acc(*a, zip_map(g, self.value(*a), |gi, x| gi * sign(x))),
            Op::Sigmoid(a) => acc(*a, zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                zip_map(g, self.value(*a), |gi, x| if x > *lo && x < *hi { gi } else { 0.0 }),
            ),
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let n = norm(x.row(i));
                    if n == 0.0 {
                        continue;
                    }
                    let y = out.row(i);
                    let gy = g.row(i);
                    let proj = dot(y, gy);
                    for ((o, &gj), &yj) in d.row_mut(i).iter_mut().zip(gy).zip(y) {
                        *o = (gj - yj * proj) / n;
                    }
                }
                acc(*a, d);
            }
            Op::RowNorms(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let n = out[(i, 0)];
                    if n == 0.0 {
                        continue;
                    }
                    for (o, &xj) in d.row_mut(i).iter_mut().zip(x.row(i)) {
                        *o = g[(i, 0)] * xj / n;
                    }
                }
                acc(*a, d);
            }
            Op::RowDot(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(x.rows(), x.cols());
                let mut db = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let gi = g[(i, 0)];
                    for j in 0..x.cols() {
                        da[(i, j)] = gi * y[(i, j)];
                        db[(i, j)] = gi * x[(i, j)];
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::CenterRows(a) => {
                let gm = column_mean(g);
                let mut d = g.clone();
                for i in 0..d.rows() {
                    for (o, m) in d.row_mut(i).iter_mut().zip(&gm) {
                        *o -= m;
                    }
                }
                acc(*a, d);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Matrix::filled(x.rows(), x.cols(), g.item() / x.len() as f64));
            }
            Op::SumSquares(a) => acc(*a, self.value(*a).scale(2.0 * g.item())),
            Op::ClampLogMean(a, eps) => {
                let x = self.value(*a);
                let scale = -g.item() / x.len() as f64;
                acc(*a, x.map(|d| if d > *eps { scale / d } else { 0.0 }));
            }
            Op::ClassMean { x, classes, count } => {
                let xv = self.value(*x);
                let mut sizes = vec![0usize; *count];
                for &c in classes {
                    sizes[c] += 1;
                }
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for (i, &c) in classes.iter().enumerate() {
                    let inv = 1.0 / sizes[c] as f64;
                    for (o, &gv) in d.row_mut(i).iter_mut().zip(g.row(c)) {
                        *o = gv * inv;
                    }
                }
                acc(*x, d);
            }
            Op::Contrastive { sim, classes, tau } => {
                let s = self.value(*sim);
                let parts = contrastive_parts(s, classes, *tau);
                let n = s.rows();
                let mut d = Matrix::zeros(n, n);
                if parts.active_classes > 0 {
                    let k = parts.active_classes as f64;
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let e = parts.exp[(i, j)];
                            let mut dl_de = 1.0 / parts.denominator;
                            let c = classes[i];
                            if c == classes[j] && parts.numerators[c] > 0.0 {
                                dl_de -= 1.0 / (k * parts.numerators[c]);
                            }
                            d[(i, j)] = g.item() * dl_de * e / tau;
                        }
                    }
                }
                acc(*sim, d);
            }
            Op::Bce { probs, targets } => {
                let p = self.value(*probs);
                let n = p.rows().max(1) as f64;
                let scale = -g.item() / n;
                acc(*probs, zip_map(p, targets, |pv, y| scale * (y / pv - (1.0 - y) / (1.0 - pv))));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, Matrix::scalar(g.item() * w));
                }
            }
        }
    }

    /// Fails with the first non-finite node when `v` is not finite.
    pub fn ensure_finite(&self, v: Var) -> Result<()> {
        if self.value(v).is_finite() {
            return Ok(());
        }
        Err(Error::NonFinite(
            self.first_non_finite()
                .unwrap_or_else(|| format!("node {}", v.0)),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled to `like`'s shape when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn column_mean(x: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let n = x.rows().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

struct ContrastiveParts {
    exp: Matrix,
    denominator: f64,
    numerators: Vec<f64>,
    active_classes: usize,
    loss: f64,
}

fn contrastive_parts(s: &Matrix, classes: &[usize], tau: f64) -> ContrastiveParts {
    let n = s.rows();
    let count = classes.iter().copied().max().map_or(0, |c| c + 1);
    let mut sizes = vec![0usize; count];
    for &c in classes {
        sizes[c] += 1;
    }
    let mut exp = Matrix::zeros(n, n);
    let mut denominator = 0.0;
    let mut numerators = vec![0.0; count];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = (s[(i, j)] / tau).exp();
            exp[(i, j)] = e;
            denominator += e;
            if classes[i] == classes[j] {
                numerators[classes[i]] += e;
            }
        }
    }
    let active: Vec<usize> = (0..count).filter(|&c| sizes[c] >= 2).collect();
    let loss = if active.is_empty() {
        0.0
    } else {
        active
            .iter()
            .map(|&c| denominator.ln() - numerators[c].ln())
            .sum::<f64>()
            / active.len() as f64
    };
    ContrastiveParts {
        exp,
        denominator,
        numerators,
        active_classes: active.len(),
        loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(output)/d(leaf) for a graph builder.
    fn check<F>(inputs: Vec<Matrix>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |inputs: &[Matrix]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
            let out = build(&mut g, &vars);
            (g, vars, out)
        };
        let (g, vars, out) = eval(&inputs);
        let grads = g.backward(out).unwrap();
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], input);
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].as_mut_slice()[idx] += h;
                let mut minus = inputs.clone();
                minus[k].as_mut_slice()[idx] -= h;
                let (gp, _, op) = eval(&plus);
                let (gm, _, om) = eval(&minus);
                let fd = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
                let a = analytic.as_slice()[idx];
                assert!(
                    (a - fd).abs() <= 1e-6 * (1.0 + a.abs().max(fd.abs())),
                    "input {k} entry {idx}: analytic {a} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn linear_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![random(&mut rng, 3, 4), random(&mut rng, 4, 4), random(&mut rng, 1, 4)];
        check(inputs, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let r = g.add_row(m, v[2]).unwrap();
            let t = g.transpose(r);
            let q = g.matmul_t(t, t).unwrap();
            let s = g.scale(q, 0.3);
            let a = g.affine(s, 2.0, 1.0);
            g.sum_squares(a)
        });
    }

    #[test]
    fn nonlinear_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![random(&mut rng, 4, 3), random(&mut rng, 4, 3)];
        check(inputs, |g, v| {
            let n = g.normalize_rows(v[0]);
            let c = g.center_rows(v[1]);
            let sum = g.add(n, c).unwrap();
            let r = g.relu(sum);
            let d = g.row_dot(r, v[1]).unwrap();
            let a = g.abs(d);
            let s = g.sigmoid(a);
            let norms = g.row_norms(v[0]);
            let p = g.add(s, norms).unwrap();
            g.mean(p)
        });
    }

    #[test]
    fn fused_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![random(&mut rng, 5, 3)];
        let classes = vec![0, 1, 0, 1, 2];
        check(inputs, move |g, v| {
            let n = g.normalize_rows(v[0]);
            let s = g.matmul_t(n, n).unwrap();
            let l1 = g.contrastive(s, &classes, 0.5).unwrap();
            let c = g.center_rows(v[0]);
            let d = g.matmul_t(c, c).unwrap();
            let d = g.affine(d, 1.0, 2.0);
            let l2 = g.clamp_log_mean(d, 1e-8);
            let m = g.class_mean(v[0], &classes, 3).unwrap();
            let p = g.sigmoid(m);
            let p = g.clamp(p, 1e-7, 1.0 - 1e-7);
            let l4 = g.bce(p, Matrix::identity(3)).unwrap();
            g.weighted_sum(&[(l1, 0.2), (l2, 0.1), (l4, 0.7)]).unwrap()
        });
    }

    #[test]
    fn mix_gradient_scatters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![random(&mut rng, 4, 2)];
        check(inputs, |g, v| {
            let m = g
                .mix(v[0], vec![vec![(0, 1.0), (1, 0.5)], vec![(1, 1.0), (0, 0.5), (3, 0.5)]])
                .unwrap();
            g.sum_squares(m)
        });
    }

    #[test]
    fn zero_norm_rows_are_counted() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]));
        let n = g.normalize_rows(x);
        assert_eq!(g.value(n).row(0), [0.0, 0.0]);
        assert_eq!(g.value(n).row(1), [0.6, 0.8]);
        assert_eq!(g.zero_norm_rows(), 1);
    }

    #[test]
    fn non_finite_node_is_named() {
        let mut g = Graph::new();
        let x = g.leaf(Matrix::scalar(0.0));
        let p = g.clamp(x, 0.0, 1.0);
        let l = g.bce(p, Matrix::scalar(1.0)).unwrap();
        let l = g.label(l, "l4");
        let err = g.ensure_finite(l).unwrap_err();
        assert!(err.to_string().contains("bce, l4"), "{err}");
    }
}
