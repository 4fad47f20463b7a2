use super::{AutodiffError, ParamId, ParamStore, Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Softplus(Var),
    SmoothL1(Var),
    MaxReduce { x: Var, axis: usize, argmax: Vec<usize> },
    MinReduce { x: Var, axis: usize, argmin: Vec<usize> },
    SumReduce { x: Var, axis: usize },
    MeanReduce { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Gather { x: Var, indices: Vec<usize> },
    Broadcast(Var),
    Reshape(Var),
    LogSoftmax(Var),
    PairwiseSqDist(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Tape of executed primitive operations.
///
/// Values are computed eagerly as ops are recorded; node order is a valid
/// topological order, so `backward` is a single reverse sweep. A graph is
/// single-threaded; independent graphs can run on separate threads.
#[derive(Debug, Clone)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    track_params: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` aligned to `out`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

#[derive(Clone, Copy, PartialEq)]
enum BroadcastKind {
    Same,
    /// `b` repeats over the leading axes of `a` (`a` has the output shape).
    BSuffix,
    General,
}

struct BroadcastPlan {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    kind: BroadcastKind,
    na: usize,
    nb: usize,
}

impl BroadcastPlan {
    fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        let out = broadcast_shape(a, b)?;
        let na: usize = a.iter().product();
        let nb: usize = b.iter().product();
        let numel: usize = out.iter().product();
        let kind = if a == b {
            BroadcastKind::Same
        } else if na == numel
            && a.len() == out.len()
            && b.len() <= out.len()
            && b.iter().rev().zip(out.iter().rev()).all(|(x, y)| x == y)
        {
            BroadcastKind::BSuffix
        } else {
            BroadcastKind::General
        };
        Some(Self { sa: broadcast_strides(a, &out), sb: broadcast_strides(b, &out), out, kind, na, nb })
    }

    fn numel(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element in order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.numel();
        match self.kind {
            BroadcastKind::Same => (0..n).for_each(|i| f(i, i, i)),
            BroadcastKind::BSuffix => {
                let nb = self.nb.max(1);
                (0..n).for_each(|i| f(i, i, i % nb))
            }
            BroadcastKind::General => {
                let rank = self.out.len();
                let mut idx = vec![0usize; rank];
                let (mut ia, mut ib) = (0usize, 0usize);
                for o in 0..n {
                    f(o, ia, ib);
                    let mut d = rank;
                    while d > 0 {
                        d -= 1;
                        idx[d] += 1;
                        ia += self.sa[d];
                        ib += self.sb[d];
                        if idx[d] < self.out[d] {
                            break;
                        }
                        ia -= self.sa[d] * self.out[d];
                        ib -= self.sb[d] * self.out[d];
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), track_params: true }
    }

    /// Graph whose parameters are treated as constants; nothing is recorded for backward.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), track_params: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient in `backward`.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        let track = self.track_params;
        let v = self.push(value, Op::Leaf, track);
        if track {
            self.nodes[v.0].param = Some((store.uid(), id));
        }
        v
    }

    /// Parameter gradients reached by the last backward pass for `store_uid`.
    pub(crate) fn param_grads(&self, store_uid: u64) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.param {
            Some((uid, id)) if uid == store_uid => {
                self.grads.get(i).and_then(|g| g.as_deref()).map(|g| (id, g))
            }
            _ => None,
        })
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> AutodiffError {
        AutodiffError::Shape {
            op,
            shapes: vars.iter().map(|v| self.shape(*v).to_vec()).collect(),
        }
    }

    // ----------------------------------------------------------------- ops

    /// `(m, k) · (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let plan = BroadcastPlan::new(self.shape(a), self.shape(b))
            .ok_or_else(|| self.shape_err(name, &[a, b]))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); plan.numel()];
        plan.for_each(|o, ia, ib| out[o] = f(av[ia], bv[ib]));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(plan.out, out)?, op, rg))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |e| -e, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(x, |e| e * ct, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ct = T::of(c);
        self.unary(x, |e| e + ct, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |e| if e > T::zero() { e } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.ln(), Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |e| e * e, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.sqrt(), Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.abs(), Op::Abs(x))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// `0.5 x²` for `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, x: Var) -> Var {
        self.unary(x, smooth_l1, Op::SmoothL1(x))
    }

    fn check_axis(&self, name: &'static str, x: Var, axis: usize) -> Result<(), AutodiffError> {
        if axis >= self.shape(x).len() {
            return Err(self.shape_err(name, &[x]));
        }
        Ok(())
    }

    fn reduced_shape(&self, x: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(x).to_vec();
        s.remove(axis);
        s
    }

    /// Maximum along `axis` (axis removed). Ties route the gradient to the first maximum.
    pub fn max_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.extreme_reduce("max_reduce", x, axis, true)
    }

    /// Minimum along `axis` (axis removed). Ties route the gradient to the first minimum.
    pub fn min_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.extreme_reduce("min_reduce", x, axis, false)
    }

    fn extreme_reduce(
        &mut self,
        name: &'static str,
        x: Var,
        axis: usize,
        is_max: bool,
    ) -> Result<Var, AutodiffError> {
        self.check_axis(name, x, axis)?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        if len == 0 {
            return Err(self.shape_err(name, &[x]));
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * len * inner;
            let first = &data[base..base + inner];
            let mut best: Vec<T> = first.to_vec();
            let mut best_i = vec![0usize; inner];
            for l in 1..len {
                let row = &data[base + l * inner..base + (l + 1) * inner];
                for j in 0..inner {
                    let better = if is_max { row[j] > best[j] } else { row[j] < best[j] };
                    if better {
                        best[j] = row[j];
                        best_i[j] = l;
                    }
                }
            }
            out.extend_from_slice(&best);
            arg.extend(best_i);
        }
        let shape = self.reduced_shape(x, axis);
        let rg = self.rg(x);
        let op = if is_max {
            Op::MaxReduce { x, axis, argmax: arg }
        } else {
            Op::MinReduce { x, axis, argmin: arg }
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn sum_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("sum_reduce", x, axis)?;
        let out = self.sum_axis_values(x, axis);
        let shape = self.reduced_shape(x, axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumReduce { x, axis }, rg))
    }

    pub fn mean_reduce(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("mean_reduce", x, axis)?;
        let len = self.shape(x)[axis];
        if len == 0 {
            return Err(self.shape_err("mean_reduce", &[x]));
        }
        let inv = T::one() / T::of(len as f64);
        let out: Vec<T> = self.sum_axis_values(x, axis).into_iter().map(|v| v * inv).collect();
        let shape = self.reduced_shape(x, axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MeanReduce { x, axis }, rg))
    }

    fn sum_axis_values(&self, x: Var, axis: usize) -> Vec<T> {
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let data = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let base = (o * len + l) * inner;
                for (d, s) in dst.iter_mut().zip(&data[base..base + inner]) {
                    *d = *d + *s;
                }
            }
        }
        out
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.sum_reduce(flat, 0)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.mean_reduce(flat, 0)
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::Empty("concat"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(self.shape_err("concat", inputs));
        }
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(self.shape_err("concat", inputs));
            }
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = inputs.iter().map(|v| self.shape(*v)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Selects slices along axis 0.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(self.shape_err("gather", &[x]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(AutodiffError::Index { op: "gather", index: bad, len: s[0] });
        }
        let w: usize = s[1..].iter().product();
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            out.extend_from_slice(&d[i * w..(i + 1) * w]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather { x, indices: indices.to_vec() }, rg))
    }

    /// Expands `x` to `shape` under broadcasting rules.
    pub fn broadcast(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let plan = BroadcastPlan::new(&shape, self.shape(x))
            .filter(|p| p.out == shape)
            .ok_or_else(|| self.shape_err("broadcast", &[x]))?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); plan.numel()];
        plan.for_each(|o, _, ib| out[o] = src[ib]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Broadcast(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(self.shape_err("reshape", &[x]));
        }
        let data = self.value(x).data().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(x), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        let c = *s.last().ok_or_else(|| self.shape_err("log_softmax", &[x]))?;
        if c == 0 {
            return Err(self.shape_err("log_softmax", &[x]));
        }
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(d.len());
        for row in d.chunks(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(s, out)?, Op::LogSoftmax(x), rg))
    }

    /// Squared distances between point rows: `(B, M, D) x (B, G, D) -> (B, M, G)`;
    /// rank-2 inputs are treated as `B = 1` and give `(M, G)`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == sb.len()
            && (sa.len() == 2 || (sa.len() == 3 && sa[0] == sb[0]))
            && sa.last() == sb.last();
        if !ok {
            return Err(self.shape_err("pairwise_sq_dist", &[a, b]));
        }
        let (batch, m, g, dim) = if sa.len() == 2 {
            (1, sa[0], sb[0], sa[1])
        } else {
            (sa[0], sa[1], sb[1], sa[2])
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * g];
        for bi in 0..batch {
            for i in 0..m {
                let pa = &av[(bi * m + i) * dim..(bi * m + i + 1) * dim];
                let dst = &mut out[(bi * m + i) * g..(bi * m + i + 1) * g];
                for (j, o) in dst.iter_mut().enumerate() {
                    let pb = &bv[(bi * g + j) * dim..(bi * g + j + 1) * dim];
                    let mut acc = T::zero();
                    for k in 0..dim {
                        let d = pa[k] - pb[k];
                        acc = acc + d * d;
                    }
                    *o = acc;
                }
            }
        }
        let shape = if sa.len() == 2 { vec![m, g] } else { vec![batch, m, g] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::PairwiseSqDist(a, b), rg))
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep from a scalar `loss`; gradients of earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        // Adds `f(k)` into the gradient buffer of `v`, element by element.
        let mut acc = |v: Var, f: &dyn Fn(usize) -> T| {
            if !rg(v) {
                return;
            }
            let len = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            for (k, b) in buf.iter_mut().enumerate() {
                *b = *b + f(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    let buf = grads[a.0].get_or_insert_with(|| vec![T::zero(); m * k]);
                    // dA = dC · Bᵀ
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, val(*b), 1, n as isize, T::one(), buf, k as isize, 1);
                }
                if rg(*b) {
                    let buf = grads[b.0].get_or_insert_with(|| vec![T::zero(); k * n]);
                    // dB = Aᵀ · dC
                    T::gemm(k, m, n, T::one(), val(*a), 1, k as isize, g, n as isize, 1, T::one(), buf, n as isize, 1);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let plan = BroadcastPlan::new(self.shape(*a), self.shape(*b)).expect("checked in forward");
                let (av, bv) = (val(*a), val(*b));
                let op = node.op.clone();
                if rg(*a) {
                    let mut buf = grads[a.0].take().unwrap_or_else(|| vec![T::zero(); plan.na]);
                    plan.for_each(|o, ia, ib| {
                        let d = match op {
                            Op::Add(..) | Op::Sub(..) => g[o],
                            Op::Mul(..) => g[o] * bv[ib],
                            _ => g[o] / bv[ib],
                        };
                        buf[ia] = buf[ia] + d;
                    });
                    grads[a.0] = Some(buf);
                }
                if rg(*b) {
                    let mut buf = grads[b.0].take().unwrap_or_else(|| vec![T::zero(); plan.nb]);
                    plan.for_each(|o, ia, ib| {
                        let d = match op {
                            Op::Add(..) => g[o],
                            Op::Sub(..) => -g[o],
                            Op::Mul(..) => g[o] * av[ia],
                            _ => -g[o] * av[ia] / (bv[ib] * bv[ib]),
                        };
                        buf[ib] = buf[ib] + d;
                    });
                    grads[b.0] = Some(buf);
                }
            }
            Op::Neg(x) => acc(*x, &|k| -g[k]),
            Op::Scale(x, c) => {
                let c = T::of(*c);
                acc(*x, &|k| g[k] * c)
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &|k| g[k]),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &|k| if xv[k] > T::zero() { g[k] } else { T::zero() })
            }
            Op::Sigmoid(x) => acc(*x, &|k| g[k] * out[k] * (T::one() - out[k])),
            Op::Tanh(x) => acc(*x, &|k| g[k] * (T::one() - out[k] * out[k])),
            Op::Exp(x) => acc(*x, &|k| g[k] * out[k]),
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &|k| g[k] / xv[k])
            }
            Op::Square(x) => {
                let xv = val(*x);
                let two = T::of(2.0);
                acc(*x, &|k| g[k] * two * xv[k])
            }
            Op::Sqrt(x) => {
                let half = T::of(0.5);
                acc(*x, &|k| g[k] * half / out[k])
            }
            Op::Abs(x) => {
                let xv = val(*x);
                acc(*x, &|k| g[k] * sign(xv[k]))
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                acc(*x, &|k| g[k] * sigmoid(xv[k]))
            }
            Op::SmoothL1(x) => {
                let xv = val(*x);
                acc(*x, &|k| {
                    let d = if xv[k].abs() < T::one() { xv[k] } else { sign(xv[k]) };
                    g[k] * d
                })
            }
            Op::MaxReduce { x, axis, argmax: arg } | Op::MinReduce { x, axis, argmin: arg } => {
                if rg(*x) {
                    let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                    let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); outer * len * inner]);
                    for o in 0..outer {
                        for j in 0..inner {
                            let r = o * inner + j;
                            let src = (o * len + arg[r]) * inner + j;
                            buf[src] = buf[src] + g[r];
                        }
                    }
                }
            }
            Op::SumReduce { x, axis } | Op::MeanReduce { x, axis } => {
                if rg(*x) {
                    let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                    let scale = match node.op {
                        Op::MeanReduce { .. } => T::one() / T::of(len as f64),
                        _ => T::one(),
                    };
                    let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); outer * len * inner]);
                    for o in 0..outer {
                        for l in 0..len {
                            for j in 0..inner {
                                let dst = (o * len + l) * inner + j;
                                buf[dst] = buf[dst] + g[o * inner + j] * scale;
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if rg(v) {
                        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); outer * len * inner]);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut buf[o * len * inner..(o + 1) * len * inner];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = *d + *s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Gather { x, indices } => {
                if rg(*x) {
                    let n = self.value(*x).numel();
                    let w = n / self.shape(*x)[0].max(1);
                    let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); n]);
                    for (r, &src) in indices.iter().enumerate() {
                        let dst = &mut buf[src * w..(src + 1) * w];
                        for (d, s) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *d = *d + *s;
                        }
                    }
                }
            }
            Op::Broadcast(x) => {
                if rg(*x) {
                    let plan = BroadcastPlan::new(node.value.shape(), self.shape(*x)).expect("checked");
                    let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); plan.nb]);
                    plan.for_each(|o, _, ib| buf[ib] = buf[ib] + g[o]);
                }
            }
            Op::LogSoftmax(x) => {
                let c = *node.value.shape().last().expect("rank >= 1");
                let mut dx = vec![T::zero(); out.len()];
                for ((orow, grow), drow) in out.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let gs: T = grow.iter().copied().sum();
                    for j in 0..c {
                        drow[j] = grow[j] - orow[j].exp() * gs;
                    }
                }
                acc(*x, &|k| dx[k])
            }
            Op::PairwiseSqDist(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (batch, m, gn, dim) = if sa.len() == 2 {
                    (1, sa[0], sb[0], sa[1])
                } else {
                    (sa[0], sa[1], sb[1], sa[2])
                };
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![T::zero(); av.len()];
                let mut db = vec![T::zero(); bv.len()];
                let two = T::of(2.0);
                for bi in 0..batch {
                    for i in 0..m {
                        let ra = (bi * m + i) * dim;
                        for j in 0..gn {
                            let gg = g[(bi * m + i) * gn + j] * two;
                            if gg == T::zero() {
                                continue;
                            }
                            let rb = (bi * gn + j) * dim;
                            for k in 0..dim {
                                let d = (av[ra + k] - bv[rb + k]) * gg;
                                da[ra + k] = da[ra + k] + d;
                                db[rb + k] = db[rb + k] - d;
                            }
                        }
                    }
                }
                acc(*a, &|k| da[k]);
                acc(*b, &|k| db[k]);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn smooth_l1<T: Real>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::of(0.5) * x * x
    } else {
        a - T::of(0.5)
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v)
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[-1.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let s = g.sum_all(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);

        let z = g.constant(t(&[1], &[0.0]));
        let sg = g.sigmoid(z);
        assert_eq!(g.value(sg).data(), &[0.5]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        let s = g.sum_all(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);

        let sq = g.square(x);
        let l = g.sum_all(sq).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn reused_tensor_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let l = g.sum_all(z).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn max_reduce_routes_to_first_tie() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 3], &[2.0, 5.0, 5.0]));
        let m = g.max_reduce(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[5.0]);
        let l = g.sum_all(m).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn broadcasting_add_reduces_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.input(t(&[3], &[10.0, 20.0, 30.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let col = g.input(t(&[2, 1], &[1.0, 2.0]));
        let d = g.mul(c, col).unwrap();
        let l = g.sum_all(d).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0, 3.0]);
        assert_eq!(g.grad(col).unwrap(), &[66.0, 75.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g.constant(Tensor::zeros(vec![4]));
        assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(a), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn inference_graph_skips_params() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", t(&[1], &[2.0])).unwrap();
        let mut g = Graph::inference();
        let v = g.param(&store, w);
        assert!(!g.requires_grad(v));
    }
}
