use super::real::Real;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

enum Op<R> {
    Leaf,
    Linear {
        x: Val,
        w: Val,
        b: Val,
    },
    Relu {
        x: Val,
    },
    Sigmoid {
        x: Val,
    },
    Concat {
        parts: Vec<Val>,
        axis: usize,
    },
    GatherRows {
        x: Val,
        idx: Vec<usize>,
    },
    Sub {
        a: Val,
        b: Val,
    },
    Add {
        a: Val,
        b: Val,
    },
    Mul {
        a: Val,
        b: Val,
    },
    ExpandMid {
        x: Val,
        k: usize,
    },
    ReduceMax {
        x: Val,
        axis: usize,
        arg: Vec<usize>,
    },
    ReduceMean {
        x: Val,
        axis: usize,
    },
    SumSquares {
        x: Val,
    },
    RowNormalize {
        x: Val,
        denoms: Vec<R>,
        clamped: Vec<bool>,
    },
    Scale {
        x: Val,
        c: R,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Define-by-run compute tape. Every operation records enough to replay its
/// exact adjoint in reverse order; the tape is rebuilt from scratch for each
/// forward pass, which keeps the code simple and the model is small enough
/// that caching would buy nothing.
pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Val {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Val(self.nodes.len() - 1)
    }

    fn needs(&self, v: Val) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a constant input; no gradient is tracked through it.
    pub fn input(&mut self, t: Tensor<R>) -> Val {
        self.push(t, Op::Leaf, false)
    }

    /// Insert a trainable parameter; `backward` accumulates its gradient.
    pub fn param(&mut self, t: Tensor<R>) -> Val {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Val) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a tracked node, if backward has reached it.
    pub fn grad(&self, v: Val) -> Option<&Tensor<R>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// y = x W + b applied to the last axis; x: ...xCin, W: CinxCout, b: Cout.
    pub fn linear(&mut self, x: Val, w: Val, b: Val) -> Result<Val> {
        let (xd, wd, bd) = (
            self.value(x).dims().to_vec(),
            self.value(w).dims().to_vec(),
            self.value(b).dims().to_vec(),
        );
        let cin = *xd.last().unwrap();
        if wd.len() != 2 || wd[0] != cin {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xd,
                rhs: wd,
            });
        }
        let cout = wd[1];
        if bd != [cout] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: wd,
                rhs: bd,
            });
        }
        let rows = self.value(x).len() / cin;
        let mut out = vec![R::ZERO; rows * cout];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for r in 0..rows {
                let y = &mut out[r * cout..(r + 1) * cout];
                y.copy_from_slice(bv);
                let xr = &xv[r * cin..(r + 1) * cin];
                for (c, &xc) in xr.iter().enumerate() {
                    let wr = &wv[c * cout..(c + 1) * cout];
                    for (yo, &wo) in y.iter_mut().zip(wr) {
                        *yo += xc * wo;
                    }
                }
            }
        }
        let mut dims = xd;
        *dims.last_mut().unwrap() = cout;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(dims, out)?, Op::Linear { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Val) -> Val {
        let t = self.value(x);
        let out = Tensor::new(
            t.dims().to_vec(),
            t.data().iter().map(|&v| v.maximum(R::ZERO)).collect(),
        )
        .expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Val) -> Val {
        let t = self.value(x);
        let out = Tensor::new(
            t.dims().to_vec(),
            t.data()
                .iter()
                .map(|&v| R::ONE / (R::ONE + (-v).exp()))
                .collect(),
        )
        .expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid { x }, needs)
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Val], axis: usize) -> Result<Val> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = self.value(parts[0]).dims().to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let d = self.value(p).dims();
            if d.len() != first.len()
                || d.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: d.to_vec(),
                });
            }
            axis_total += d[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![R::ZERO; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let d = self.value(p).dims();
            let span = d[axis] * inner;
            let data = self.value(p).data();
            for o in 0..outer {
                let dst = o * axis_total * inner + offset;
                out[dst..dst + span].copy_from_slice(&data[o * span..(o + 1) * span]);
            }
            offset += span;
        }
        let mut dims = first;
        dims[axis] = axis_total;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(dims, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Gather rows of a 2-D tensor: x: NxC, idx: rows x k -> rows x k x C.
    pub fn gather_rows(&mut self, x: Val, idx: &[usize], k: usize) -> Result<Val> {
        let d = self.value(x).dims().to_vec();
        if d.len() != 2 || k == 0 || !idx.len().is_multiple_of(k) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: d,
                rhs: vec![idx.len(), k],
            });
        }
        let (n, c) = (d[0], d[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: vec![n, c],
                rhs: vec![bad],
            });
        }
        let rows = idx.len() / k;
        let mut out = vec![R::ZERO; rows * k * c];
        {
            let data = self.value(x).data();
            for (slot, &src) in idx.iter().enumerate() {
                out[slot * c..(slot + 1) * c].copy_from_slice(&data[src * c..(src + 1) * c]);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![rows, k, c], out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    fn zip_elementwise(
        &mut self,
        a: Val,
        b: Val,
        op_name: &'static str,
        f: impl Fn(R, R) -> R,
        op: Op<R>,
    ) -> Result<Val> {
        let (da, db) = (self.value(a).dims().to_vec(), self.value(b).dims().to_vec());
        if da != db {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: da,
                rhs: db,
            });
        }
        let out: Vec<R> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(da, out)?, op, needs))
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    /// Duplicate each row of an NxC tensor k times -> N x k x C. Used both to
    /// pair every neighbor with its center row and to broadcast per-row gates
    /// over the neighbor axis.
    pub fn expand_mid(&mut self, x: Val, k: usize) -> Result<Val> {
        let d = self.value(x).dims().to_vec();
        if d.len() != 2 || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "expand_mid",
                lhs: d,
                rhs: vec![k],
            });
        }
        let (n, c) = (d[0], d[1]);
        let mut out = vec![R::ZERO; n * k * c];
        {
            let data = self.value(x).data();
            for r in 0..n {
                let src = &data[r * c..(r + 1) * c];
                for j in 0..k {
                    let dst = (r * k + j) * c;
                    out[dst..dst + c].copy_from_slice(src);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, k, c], out)?,
            Op::ExpandMid { x, k },
            needs,
        ))
    }

    fn reduce_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = dims[..axis].iter().product();
        let mid = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        (outer, mid, inner)
    }

    /// Max over one axis; the winning index is recorded so backward routes the
    /// gradient there. Ties resolve to the smallest index, which keeps the
    /// result deterministic under permutations of tied inputs.
    pub fn reduce_max(&mut self, x: Val, axis: usize) -> Result<Val> {
        let d = self.value(x).dims().to_vec();
        if axis >= d.len() || d.len() == 1 {
            return Err(Error::ShapeMismatch {
                op: "reduce_max",
                lhs: d,
                rhs: vec![axis],
            });
        }
        let (outer, mid, inner) = Self::reduce_split(&d, axis);
        let mut out = vec![R::ZERO; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        {
            let data = self.value(x).data();
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = data[o * mid * inner + i];
                    let mut best_j = 0usize;
                    for j in 1..mid {
                        let v = data[(o * mid + j) * inner + i];
                        if v > best {
                            best = v;
                            best_j = j;
                        }
                    }
                    out[o * inner + i] = best;
                    arg[o * inner + i] = best_j;
                }
            }
        }
        let mut dims: Vec<usize> = d[..axis].to_vec();
        dims.extend_from_slice(&d[axis + 1..]);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(dims, out)?,
            Op::ReduceMax { x, axis, arg },
            needs,
        ))
    }

    pub fn reduce_mean(&mut self, x: Val, axis: usize) -> Result<Val> {
        let d = self.value(x).dims().to_vec();
        if axis >= d.len() || d.len() == 1 {
            return Err(Error::ShapeMismatch {
                op: "reduce_mean",
                lhs: d,
                rhs: vec![axis],
            });
        }
        let (outer, mid, inner) = Self::reduce_split(&d, axis);
        let scale = R::ONE / R::from_f64(mid as f64);
        let mut out = vec![R::ZERO; outer * inner];
        {
            let data = self.value(x).data();
            for o in 0..outer {
                for j in 0..mid {
                    for i in 0..inner {
                        out[o * inner + i] += data[(o * mid + j) * inner + i];
                    }
                }
            }
            for v in &mut out {
                *v *= scale;
            }
        }
        let mut dims: Vec<usize> = d[..axis].to_vec();
        dims.extend_from_slice(&d[axis + 1..]);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(dims, out)?, Op::ReduceMean { x, axis }, needs))
    }

    /// Sum of squared entries -> scalar.
    pub fn sum_squares(&mut self, x: Val) -> Val {
        let total = self
            .value(x)
            .data()
            .iter()
            .fold(R::ZERO, |acc, &v| acc + v * v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::SumSquares { x }, needs)
    }

    /// Divide each row of an NxC tensor by max(row norm, eps).
    pub fn row_normalize(&mut self, x: Val, eps: f64) -> Result<Val> {
        let d = self.value(x).dims().to_vec();
        if d.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "row_normalize",
                lhs: d,
                rhs: vec![],
            });
        }
        let (n, c) = (d[0], d[1]);
        let eps = R::from_f64(eps);
        let mut out = vec![R::ZERO; n * c];
        let mut denoms = vec![R::ZERO; n];
        let mut clamped = vec![false; n];
        {
            let data = self.value(x).data();
            for r in 0..n {
                let row = &data[r * c..(r + 1) * c];
                let norm = row.iter().fold(R::ZERO, |acc, &v| acc + v * v).sqrt();
                let denom = if norm > eps {
                    norm
                } else {
                    clamped[r] = true;
                    eps
                };
                denoms[r] = denom;
                for (o, &v) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *o = v / denom;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(d, out)?,
            Op::RowNormalize {
                x,
                denoms,
                clamped,
            },
            needs,
        ))
    }

    /// Multiply by a compile-time constant (not a tracked tensor).
    pub fn scale(&mut self, x: Val, c: f64) -> Val {
        let c = R::from_f64(c);
        let t = self.value(x);
        let out = Tensor::new(t.dims().to_vec(), t.data().iter().map(|&v| v * c).collect())
            .expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, c }, needs)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into the graph's
    /// per-node slots, so calling backward twice doubles them; use
    /// [`Graph::zero_grads`] or a fresh tape to reset.
    pub fn backward(&mut self, loss: Val) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.value(loss).dims().to_vec(),
                rhs: vec![1],
            });
        }
        let n = self.nodes.len();
        let mut local: Vec<Option<Vec<R>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            local[loss.0] = Some(vec![R::ONE]);
        }

        for i in (0..n).rev() {
            let Some(dy) = local[i].take() else {
                continue;
            };
            // Keep the upstream buffer available for accumulation at the end.
            let give = |local: &mut Vec<Option<Vec<R>>>, v: Val, len: usize| {
                local[v.0].get_or_insert_with(|| vec![R::ZERO; len]);
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let cin = *self.value(x).dims().last().unwrap();
                    let cout = *self.value(b).dims().last().unwrap();
                    let rows = self.value(x).len() / cin;
                    if self.needs(x) {
                        give(&mut local, x, rows * cin);
                        let wv = self.nodes[w.0].value.data();
                        let dx = local[x.0].as_mut().unwrap();
                        for r in 0..rows {
                            let dyr = &dy[r * cout..(r + 1) * cout];
                            for c in 0..cin {
                                let wr = &wv[c * cout..(c + 1) * cout];
                                let mut acc = R::ZERO;
                                for (dv, wv) in dyr.iter().zip(wr) {
                                    acc += *dv * *wv;
                                }
                                dx[r * cin + c] += acc;
                            }
                        }
                    }
                    if self.needs(w) {
                        give(&mut local, w, cin * cout);
                        let xv = self.nodes[x.0].value.data();
                        let dw = local[w.0].as_mut().unwrap();
                        for r in 0..rows {
                            let dyr = &dy[r * cout..(r + 1) * cout];
                            for c in 0..cin {
                                let xc = xv[r * cin + c];
                                let dwr = &mut dw[c * cout..(c + 1) * cout];
                                for (dwv, dv) in dwr.iter_mut().zip(dyr) {
                                    *dwv += xc * *dv;
                                }
                            }
                        }
                    }
                    if self.needs(b) {
                        give(&mut local, b, cout);
                        let dbv = local[b.0].as_mut().unwrap();
                        for r in 0..rows {
                            for (dbv, dv) in dbv.iter_mut().zip(&dy[r * cout..(r + 1) * cout]) {
                                *dbv += *dv;
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    if self.needs(x) {
                        give(&mut local, x, dy.len());
                        let xv = self.nodes[x.0].value.data();
                        let dx = local[x.0].as_mut().unwrap();
                        for ((dxv, &dv), &xv) in dx.iter_mut().zip(&dy).zip(xv) {
                            if xv > R::ZERO {
                                *dxv += dv;
                            }
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    if self.needs(x) {
                        give(&mut local, x, dy.len());
                        let yv = self.nodes[i].value.data();
                        let dx = local[x.0].as_mut().unwrap();
                        for ((dxv, &dv), &yv) in dx.iter_mut().zip(&dy).zip(yv) {
                            *dxv += dv * yv * (R::ONE - yv);
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let parts = parts.clone();
                    let axis = *axis;
                    let dims = self.nodes[i].value.dims().to_vec();
                    let (outer, _, inner) = Self::reduce_split(&dims, axis);
                    let total_span = dims[axis] * inner;
                    let mut offset = 0;
                    for &p in &parts {
                        let span = self.value(p).dims()[axis] * inner;
                        if self.needs(p) {
                            give(&mut local, p, self.value(p).len());
                            let dp = local[p.0].as_mut().unwrap();
                            for o in 0..outer {
                                let src = o * total_span + offset;
                                for (dpv, dv) in dp[o * span..(o + 1) * span]
                                    .iter_mut()
                                    .zip(&dy[src..src + span])
                                {
                                    *dpv += *dv;
                                }
                            }
                        }
                        offset += span;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    if self.needs(x) {
                        let idx = idx.clone();
                        let c = self.value(x).dims()[1];
                        give(&mut local, x, self.value(x).len());
                        let dx = local[x.0].as_mut().unwrap();
                        for (slot, &src) in idx.iter().enumerate() {
                            for (dxv, dv) in dx[src * c..(src + 1) * c]
                                .iter_mut()
                                .zip(&dy[slot * c..(slot + 1) * c])
                            {
                                *dxv += *dv;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        give(&mut local, a, dy.len());
                        let da = local[a.0].as_mut().unwrap();
                        for (dav, &dv) in da.iter_mut().zip(&dy) {
                            *dav += dv;
                        }
                    }
                    if self.needs(b) {
                        give(&mut local, b, dy.len());
                        let db = local[b.0].as_mut().unwrap();
                        for (dbv, &dv) in db.iter_mut().zip(&dy) {
                            *dbv -= dv;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for v in [a, b] {
                        if self.needs(v) {
                            give(&mut local, v, dy.len());
                            let dv_buf = local[v.0].as_mut().unwrap();
                            for (dvv, &dv) in dv_buf.iter_mut().zip(&dy) {
                                *dvv += dv;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        give(&mut local, a, dy.len());
                        let bv: Vec<R> = self.nodes[b.0].value.data().to_vec();
                        let da = local[a.0].as_mut().unwrap();
                        for ((dav, &dv), bv) in da.iter_mut().zip(&dy).zip(bv) {
                            *dav += dv * bv;
                        }
                    }
                    if self.needs(b) {
                        give(&mut local, b, dy.len());
                        let av: Vec<R> = self.nodes[a.0].value.data().to_vec();
                        let db = local[b.0].as_mut().unwrap();
                        for ((dbv, &dv), av) in db.iter_mut().zip(&dy).zip(av) {
                            *dbv += dv * av;
                        }
                    }
                }
                Op::ExpandMid { x, k } => {
                    let (x, k) = (*x, *k);
                    if self.needs(x) {
                        let d = self.value(x).dims().to_vec();
                        let (n, c) = (d[0], d[1]);
                        give(&mut local, x, n * c);
                        let dx = local[x.0].as_mut().unwrap();
                        for r in 0..n {
                            for j in 0..k {
                                let src = (r * k + j) * c;
                                for (dxv, dv) in
                                    dx[r * c..(r + 1) * c].iter_mut().zip(&dy[src..src + c])
                                {
                                    *dxv += *dv;
                                }
                            }
                        }
                    }
                }
                Op::ReduceMax { x, axis, arg } => {
                    let x = *x;
                    if self.needs(x) {
                        let arg = arg.clone();
                        let axis = *axis;
                        let d = self.value(x).dims().to_vec();
                        let (outer, mid, inner) = Self::reduce_split(&d, axis);
                        give(&mut local, x, outer * mid * inner);
                        let dx = local[x.0].as_mut().unwrap();
                        for o in 0..outer {
                            for i2 in 0..inner {
                                let j = arg[o * inner + i2];
                                dx[(o * mid + j) * inner + i2] += dy[o * inner + i2];
                            }
                        }
                    }
                }
                Op::ReduceMean { x, axis } => {
                    let x = *x;
                    if self.needs(x) {
                        let axis = *axis;
                        let d = self.value(x).dims().to_vec();
                        let (outer, mid, inner) = Self::reduce_split(&d, axis);
                        let scale = R::ONE / R::from_f64(mid as f64);
                        give(&mut local, x, outer * mid * inner);
                        let dx = local[x.0].as_mut().unwrap();
                        for o in 0..outer {
                            for j in 0..mid {
                                for i2 in 0..inner {
                                    dx[(o * mid + j) * inner + i2] += dy[o * inner + i2] * scale;
                                }
                            }
                        }
                    }
                }
                Op::SumSquares { x } => {
                    let x = *x;
                    if self.needs(x) {
                        let g = dy[0];
                        let two = R::from_f64(2.0);
                        give(&mut local, x, self.value(x).len());
                        let xv: Vec<R> = self.nodes[x.0].value.data().to_vec();
                        let dx = local[x.0].as_mut().unwrap();
                        for (dxv, xv) in dx.iter_mut().zip(xv) {
                            *dxv += two * xv * g;
                        }
                    }
                }
                Op::RowNormalize {
                    x,
                    denoms,
                    clamped,
                } => {
                    let x = *x;
                    if self.needs(x) {
                        let denoms = denoms.clone();
                        let clamped = clamped.clone();
                        let d = self.value(x).dims().to_vec();
                        let (n, c) = (d[0], d[1]);
                        give(&mut local, x, n * c);
                        let xv: Vec<R> = self.nodes[x.0].value.data().to_vec();
                        let dx = local[x.0].as_mut().unwrap();
                        for r in 0..n {
                            let denom = denoms[r];
                            let row = &xv[r * c..(r + 1) * c];
                            let dyr = &dy[r * c..(r + 1) * c];
                            if clamped[r] {
                                // Constant denominator below the clamp.
                                for (dxv, &dv) in dx[r * c..(r + 1) * c].iter_mut().zip(dyr) {
                                    *dxv += dv / denom;
                                }
                            } else {
                                let mut dot = R::ZERO;
                                for (&xv, &dv) in row.iter().zip(dyr) {
                                    dot += xv * dv;
                                }
                                let inv = R::ONE / denom;
                                let inv3 = inv * inv * inv;
                                for ((dxv, &dv), &xv) in
                                    dx[r * c..(r + 1) * c].iter_mut().zip(dyr).zip(row)
                                {
                                    *dxv += dv * inv - xv * dot * inv3;
                                }
                            }
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    if self.needs(x) {
                        give(&mut local, x, dy.len());
                        let dx = local[x.0].as_mut().unwrap();
                        for (dxv, &dv) in dx.iter_mut().zip(&dy) {
                            *dxv += dv * c;
                        }
                    }
                }
            }
            local[i] = Some(dy);
        }

        for (i, buf) in local.into_iter().enumerate() {
            let Some(buf) = buf else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let dims = self.nodes[i].value.dims().to_vec();
            if let Some(g) = &mut self.grads[i] {
                for (gv, bv) in g.data_mut().iter_mut().zip(buf) {
                    *gv += bv;
                }
            } else {
                self.grads[i] = Some(Tensor::new(dims, buf)?);
            }
        }
        Ok(())
    }
}
