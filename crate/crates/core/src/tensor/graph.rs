use super::params::{ParamId, ParamStore};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Reshape(Var),
    SwapAxes12 {
        x: Var,
        dims: [usize; 4],
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    RelGather {
        x: Var,
        labels: Vec<usize>,
        t: usize,
        s: usize,
        l: usize,
    },
    RelBias {
        x: Var,
        table: Var,
        labels: Vec<usize>,
        heads: usize,
        t: usize,
        s: usize,
        l: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    Nll {
        probs: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
        clamp: T,
    },
    CopyScatter {
        attn: Var,
        src: Vec<usize>,
        s: usize,
        vocab: usize,
    },
    Mix {
        p1: Var,
        p2: Var,
        w: Var,
    },
    AppendCol {
        x: Var,
        v: Var,
    },
}

/// Records primitive operations in creation order, which is a topological
/// order, and replays them in reverse for gradients.
#[derive(Debug)]
pub struct Graph<T> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    ops: Vec<Op<T>>,
    requires: Vec<bool>,
    param_vars: Vec<Option<Var>>,
    params_trainable: bool,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `c (+)= op(a)·op(b)` where `a` is logically `m×k` and `b` is `k×n`; a
/// transposed operand is stored as the transpose of its logical shape.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    beta: T,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            param_vars: Vec::new(),
            params_trainable: true,
            backward_done: false,
        }
    }

    /// A graph whose parameter leaves do not require gradients.
    pub fn inference() -> Self {
        Self {
            params_trainable: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Accumulated gradient of a node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return the
    /// same node, so aliased (shared) weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let idx = id.index();
        if idx >= self.param_vars.len() {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let trainable = self.params_trainable;
        let v = self.leaf(store.get(id).clone(), trainable);
        self.param_vars[idx] = Some(v);
        v
    }

    /// Gradients of every parameter leaf touched by this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Option<&[T]>)> {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::new(i), self.grad(v))))
            .collect()
    }

    /// `a·b` (or `a·bᵀ` with `trans_b`). A rank-2 `b` is applied to every row of
    /// `a`; a rank-3 `b` pairs batch-wise with a rank-3 `a`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n) = match (sa.len(), sb.len()) {
            (ra, 2) if ra >= 1 => {
                let k = sa[ra - 1];
                let (bk, bn) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
                if bk != k {
                    return Err(shape_err("matmul", &sa, &sb));
                }
                (1, self.values[a.0].rows(), k, bn)
            }
            (3, 3) => {
                let (bk, bn) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
                if sa[0] != sb[0] || sa[2] != bk {
                    return Err(shape_err("matmul", &sa, &sb));
                }
                (sa[0], sa[1], sa[2], bn)
            }
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut out = Tensor::zeros(out_shape);
        {
            let av = self.values[a.0].data();
            let bv = self.values[b.0].data();
            let o = out.data_mut();
            let bstride = if sb.len() == 3 { k * n } else { 0 };
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * bstride..i * bstride + k * n],
                    trans_b,
                    &mut o[i * m * n..(i + 1) * m * n],
                    T::zero(),
                );
            }
        }
        let r = self.req(a) || self.req(b);
        Ok(self.push(
            out,
            Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            },
            r,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.values[a.0].clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
            *o += y;
        }
        let r = self.req(a) || self.req(b);
        Ok(self.push(out, Op::Add(a, b), r))
    }

    /// Adds a `[n]` vector to every row of a `[..., n]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.values[a.0].cols();
        if self.shape(bias) != [n] {
            return Err(shape_err("add_bias", self.shape(a), self.shape(bias)));
        }
        let mut out = self.values[a.0].clone();
        let bv = self.values[bias.0].data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &y) in row.iter_mut().zip(bv) {
                *o += y;
            }
        }
        let r = self.req(a) || self.req(bias);
        Ok(self.push(out, Op::AddBias(a, bias), r))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.values[a.0].clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.values[b.0].data()) {
            *o *= y;
        }
        let r = self.req(a) || self.req(b);
        Ok(self.push(out, Op::Mul(a, b), r))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.values[a.0].clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let r = self.req(a);
        self.push(out, Op::Scale(a, s), r)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        let r = self.req(a);
        self.push(out, Op::Relu(a), r)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
        let r = self.req(a);
        self.push(out, Op::Sigmoid(a), r)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.values[a.0].data().iter().copied().sum();
        let r = self.req(a);
        self.push(Tensor::scalar(s), Op::Sum(a), r)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.values[a.0].clone().reshaped(shape)?;
        let r = self.req(a);
        Ok(self.push(out, Op::Reshape(a), r))
    }

    /// `[A, B, C, D] -> [A, C, B, D]`; splits and merges attention heads.
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err("swap_axes12", s, &[0, 0, 0, 0]));
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let out = permute_0213(self.values[x.0].data(), dims);
        let r = self.req(x);
        let t = Tensor::new(vec![dims[0], dims[2], dims[1], dims[3]], out)?;
        Ok(self.push(t, Op::SwapAxes12 { x, dims }, r))
    }

    /// Normalizes each row of `[..., d]` to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.values[x.0].cols();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::lit(eps);
        let xv = self.values[x.0].data();
        let gv = self.values[gain.0].data();
        let bv = self.values[bias.0].data();
        let rows = xv.len() / d;
        let dt = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let r = self.req(x) || self.req(gain) || self.req(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            r,
        ))
    }

    /// Softmax over the last axis. `mask`, when given, has one entry per
    /// element; `false` entries receive probability exactly 0.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xt = &self.values[x.0];
        if let Some(m) = mask {
            if m.len() != xt.len() {
                return Err(shape_err("softmax", xt.shape(), &[m.len()]));
            }
        }
        let out = softmax_rows(xt.data(), xt.cols(), mask)?;
        let shape = xt.shape().to_vec();
        let r = self.req(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), r))
    }

    /// Row lookup: `table[ids[i]]` for each id, output `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.values[table.0];
        if tv.shape().len() != 2 {
            return Err(shape_err("embedding", tv.shape(), &[0, 0]));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index { index: id, extent: rows });
            }
            out.extend_from_slice(tv.row(id));
        }
        let r = self.req(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            r,
        ))
    }

    /// `x: [N, t, l]`, `labels: [t, s]` → `out[n, i, j] = x[n, i, labels[i, j]]`.
    pub fn rel_gather(&mut self, x: Var, labels: &[usize], t: usize, s: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != t || labels.len() != t * s {
            return Err(shape_err("rel_gather", &xs, &[t, s]));
        }
        let (n, l) = (xs[0], xs[2]);
        if let Some(&bad) = labels.iter().find(|&&lb| lb >= l) {
            return Err(TensorError::Index { index: bad, extent: l });
        }
        let xv = self.values[x.0].data();
        let mut out = vec![T::zero(); n * t * s];
        for b in 0..n {
            for i in 0..t {
                let src = &xv[(b * t + i) * l..(b * t + i + 1) * l];
                let dst = &mut out[(b * t + i) * s..(b * t + i + 1) * s];
                for (o, &lb) in dst.iter_mut().zip(&labels[i * s..(i + 1) * s]) {
                    *o = src[lb];
                }
            }
        }
        let r = self.req(x);
        Ok(self.push(
            Tensor::new(vec![n, t, s], out)?,
            Op::RelGather {
                x,
                labels: labels.to_vec(),
                t,
                s,
                l,
            },
            r,
        ))
    }

    /// `x: [B, H, t, s]` plus `table: [H, l]` looked up by `labels: [t, s]`.
    pub fn rel_bias(&mut self, x: Var, table: Var, labels: &[usize], t: usize, s: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ts = self.shape(table).to_vec();
        if xs.len() != 4 || ts.len() != 2 || xs[1] != ts[0] || xs[2] != t || xs[3] != s || labels.len() != t * s {
            return Err(shape_err("rel_bias", &xs, &ts));
        }
        let (heads, l) = (ts[0], ts[1]);
        if let Some(&bad) = labels.iter().find(|&&lb| lb >= l) {
            return Err(TensorError::Index { index: bad, extent: l });
        }
        let mut out = self.values[x.0].clone();
        let tv = self.values[table.0].data();
        for (blk, chunk) in out.data_mut().chunks_mut(t * s).enumerate() {
            let h = blk % heads;
            for (o, &lb) in chunk.iter_mut().zip(labels) {
                *o += tv[h * l + lb];
            }
        }
        let r = self.req(x) || self.req(table);
        Ok(self.push(
            out,
            Op::RelBias {
                x,
                table,
                labels: labels.to_vec(),
                heads,
                t,
                s,
                l,
            },
            r,
        ))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)` over
    /// rows where `mask` is true.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let lt = &self.values[logits.0];
        let (rows, v) = (lt.rows(), lt.cols());
        check_targets(rows, v, targets, mask)?;
        let count = mask.iter().filter(|&&m| m).count();
        let probs = softmax_rows(lt.data(), v, None)?;
        let mut loss = T::zero();
        for r in 0..rows {
            if mask[r] {
                let row = &lt.data()[r * v..(r + 1) * v];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
                loss += lse - row[targets[r]];
            }
        }
        loss = loss / T::from_usize(count).unwrap();
        let req = self.req(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            req,
        ))
    }

    /// Mean negative log-likelihood when the rows are already probabilities.
    /// Probabilities below `clamp` are raised to it before the log.
    pub fn nll_probs(&mut self, probs: Var, targets: &[usize], mask: &[bool], clamp: f64) -> Result<Var> {
        let pt = &self.values[probs.0];
        let (rows, v) = (pt.rows(), pt.cols());
        check_targets(rows, v, targets, mask)?;
        let tol = if std::mem::size_of::<T>() == 4 { 1e-5 } else { 1e-9 };
        for r in 0..rows {
            if mask[r] {
                let sum: f64 = pt.row(r).iter().map(|p| p.to_f64().unwrap()).sum();
                if (sum - 1.0).abs() > tol {
                    return Err(TensorError::NotNormalized { row: r, sum });
                }
            }
        }
        let clamp = T::lit(clamp);
        let count = mask.iter().filter(|&&m| m).count();
        let mut loss = T::zero();
        for r in 0..rows {
            if mask[r] {
                loss -= pt.data()[r * v + targets[r]].max(clamp).ln();
            }
        }
        loss = loss / T::from_usize(count).unwrap();
        let req = self.req(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
                clamp,
            },
            req,
        ))
    }

    /// Sums attention weights `[B, t, s]` into vocabulary slots of the source
    /// ids `[B, s]`: `out[b, i, src[b, j]] += attn[b, i, j]`.
    pub fn copy_scatter(&mut self, attn: Var, src: &[usize], vocab: usize) -> Result<Var> {
        let sh = self.shape(attn).to_vec();
        if sh.len() != 3 || src.len() != sh[0] * sh[2] {
            return Err(shape_err("copy_scatter", &sh, &[src.len()]));
        }
        if let Some(&bad) = src.iter().find(|&&id| id >= vocab) {
            return Err(TensorError::Index { index: bad, extent: vocab });
        }
        let (b, t, s) = (sh[0], sh[1], sh[2]);
        let av = self.values[attn.0].data();
        let mut out = vec![T::zero(); b * t * vocab];
        for bi in 0..b {
            let ids = &src[bi * s..(bi + 1) * s];
            for i in 0..t {
                let row = &av[(bi * t + i) * s..(bi * t + i + 1) * s];
                let dst = &mut out[(bi * t + i) * vocab..(bi * t + i + 1) * vocab];
                for (&a, &id) in row.iter().zip(ids) {
                    dst[id] += a;
                }
            }
        }
        let r = self.req(attn);
        Ok(self.push(
            Tensor::new(vec![b, t, vocab], out)?,
            Op::CopyScatter {
                attn,
                src: src.to_vec(),
                s,
                vocab,
            },
            r,
        ))
    }

    /// Row-wise `w·p1 + (1 − w)·p2`; `w` has one entry per row or a single
    /// entry shared by all rows.
    pub fn mix(&mut self, p1: Var, p2: Var, w: Var) -> Result<Var> {
        self.same_shape("mix", p1, p2)?;
        let rows = self.values[p1.0].rows();
        let v = self.values[p1.0].cols();
        let wl = self.values[w.0].len();
        if wl != rows && wl != 1 {
            return Err(shape_err("mix", self.shape(p1), self.shape(w)));
        }
        let a = self.values[p1.0].data();
        let b = self.values[p2.0].data();
        let wv = self.values[w.0].data();
        let mut out = vec![T::zero(); a.len()];
        for r in 0..rows {
            let wr = wv[if wl == 1 { 0 } else { r }];
            for j in 0..v {
                out[r * v + j] = wr * a[r * v + j] + (T::one() - wr) * b[r * v + j];
            }
        }
        let shape = self.shape(p1).to_vec();
        let req = self.req(p1) || self.req(p2) || self.req(w);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mix { p1, p2, w }, req))
    }

    /// Appends the single value of `v` as an extra last column of `x: [..., n]`.
    pub fn append_col(&mut self, x: Var, v: Var) -> Result<Var> {
        if self.values[v.0].len() != 1 {
            return Err(shape_err("append_col", self.shape(x), self.shape(v)));
        }
        let xt = &self.values[x.0];
        let n = xt.cols();
        let val = self.values[v.0].data()[0];
        let mut out = Vec::with_capacity(xt.rows() * (n + 1));
        for row in xt.data().chunks(n) {
            out.extend_from_slice(row);
            out.push(val);
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = n + 1;
        let r = self.req(x) || self.req(v);
        Ok(self.push(Tensor::new(shape, out)?, Op::AppendCol { x, v }, r))
    }

    /// Reverse pass from a scalar `loss`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.values[loss.0].len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.values[loss.0].is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![T::one()]);
        let Graph {
            values,
            grads,
            ops,
            requires,
            ..
        } = self;
        for idx in (0..=loss.0).rev() {
            if !requires[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop(&ops[idx], &values[idx], &g, values, grads, requires);
            grads[idx] = Some(g);
        }
        Ok(())
    }
}

fn check_targets(rows: usize, v: usize, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != rows || mask.len() != rows {
        return Err(shape_err("loss", &[rows, v], &[targets.len(), mask.len()]));
    }
    for (&t, &m) in targets.iter().zip(mask) {
        if m && t >= v {
            return Err(TensorError::TargetOutOfRange { id: t, classes: v });
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::EmptyLoss);
    }
    Ok(())
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], n: usize, mask: Option<&[bool]>) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); x.len()];
    for (r, (row, o)) in x.chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * n + j]);
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == T::neg_infinity() {
            return Err(TensorError::AllMasked { row: r });
        }
        let mut total = T::zero();
        for (j, (&v, oj)) in row.iter().zip(o.iter_mut()).enumerate() {
            if keep(j) {
                *oj = (v - max).exp();
                total += *oj;
            }
        }
        o.iter_mut().for_each(|v| *v = *v / total);
    }
    Ok(out)
}

fn permute_0213<T: Real>(x: &[T], [a, b, c, d]: [usize; 4]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let src = ((i * b + j) * c + k) * d;
                let dst = ((i * c + k) * b + j) * d;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` does not
/// require a gradient.
fn buf<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    requires: &[bool],
    values: &[Tensor<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !requires[v.0] {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); values[v.0].len()]))
}

fn backprop<T: Real>(
    op: &Op<T>,
    out: &Tensor<T>,
    g: &[T],
    values: &[Tensor<T>],
    grads: &mut [Option<Vec<T>>],
    requires: &[bool],
) {
    match op {
        Op::Leaf => {}
        &Op::MatMul {
            a,
            b,
            trans_b,
            batch,
            m,
            k,
            n,
        } => {
            let shared_b = values[b.0].shape().len() == 2;
            let bstride = if shared_b { 0 } else { k * n };
            let av = values[a.0].data();
            let bv = values[b.0].data();
            if let Some(da) = buf(grads, requires, values, a) {
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bv[i * bstride..i * bstride + k * n],
                        !trans_b,
                        &mut da[i * m * k..(i + 1) * m * k],
                        T::one(),
                    );
                }
            }
            if let Some(db) = buf(grads, requires, values, b) {
                for i in 0..batch {
                    let ga = &g[i * m * n..(i + 1) * m * n];
                    let aa = &av[i * m * k..(i + 1) * m * k];
                    let dst = &mut db[i * bstride..i * bstride + k * n];
                    if trans_b {
                        gemm(n, m, k, ga, true, aa, false, dst, T::one());
                    } else {
                        gemm(k, m, n, aa, true, ga, false, dst, T::one());
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = buf(grads, requires, values, v) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }
        &Op::AddBias(a, bias) => {
            if let Some(d) = buf(grads, requires, values, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = buf(grads, requires, values, bias) {
                let n = d.len();
                for row in g.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (values[a.0].data(), values[b.0].data());
            if let Some(d) = buf(grads, requires, values, a) {
                for i in 0..d.len() {
                    d[i] += g[i] * bv[i];
                }
            }
            if let Some(d) = buf(grads, requires, values, b) {
                for i in 0..d.len() {
                    d[i] += g[i] * av[i];
                }
            }
        }
        &Op::Scale(a, s) => {
            if let Some(d) = buf(grads, requires, values, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * s);
            }
        }
        &Op::Relu(a) => {
            let o = out.data();
            if let Some(d) = buf(grads, requires, values, a) {
                for i in 0..d.len() {
                    if o[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
        }
        &Op::Sigmoid(a) => {
            let o = out.data();
            if let Some(d) = buf(grads, requires, values, a) {
                for i in 0..d.len() {
                    d[i] += g[i] * o[i] * (T::one() - o[i]);
                }
            }
        }
        &Op::Sum(a) => {
            if let Some(d) = buf(grads, requires, values, a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::Reshape(a) => {
            if let Some(d) = buf(grads, requires, values, a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        &Op::SwapAxes12 { x, dims } => {
            if let Some(d) = buf(grads, requires, values, x) {
                let back = permute_0213(g, [dims[0], dims[2], dims[1], dims[3]]);
                d.iter_mut().zip(&back).for_each(|(d, &g)| *d += g);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = values[gain.0].len();
            let gv = values[gain.0].data();
            let dt = T::from_usize(d).unwrap();
            if let Some(dx) = buf(grads, requires, values, *x) {
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        m1 += dh;
                        m2 += dh * hr[j];
                    }
                    m1 = m1 / dt;
                    m2 = m2 / dt;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        dx[r * d + j] += rs * (dh - m1 - hr[j] * m2);
                    }
                }
            }
            if let Some(dg) = buf(grads, requires, values, *gain) {
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(db) = buf(grads, requires, values, *bias) {
                for gr in g.chunks(d) {
                    db.iter_mut().zip(gr).for_each(|(d, &g)| *d += g);
                }
            }
        }
        &Op::Softmax(x) => {
            let n = out.cols();
            let y = out.data();
            if let Some(dx) = buf(grads, requires, values, x) {
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = out.cols();
            if let Some(dt) = buf(grads, requires, values, *table) {
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g[i * d..(i + 1) * d];
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::RelGather { x, labels, t, s, l } => {
            let (t, s, l) = (*t, *s, *l);
            if let Some(dx) = buf(grads, requires, values, *x) {
                let n = dx.len() / (t * l);
                for b in 0..n {
                    for i in 0..t {
                        let gr = &g[(b * t + i) * s..(b * t + i + 1) * s];
                        let dr = &mut dx[(b * t + i) * l..(b * t + i + 1) * l];
                        for (&gv, &lb) in gr.iter().zip(&labels[i * s..(i + 1) * s]) {
                            dr[lb] += gv;
                        }
                    }
                }
            }
        }
        Op::RelBias {
            x,
            table,
            labels,
            heads,
            t,
            s,
            l,
        } => {
            if let Some(dx) = buf(grads, requires, values, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(dt) = buf(grads, requires, values, *table) {
                for (blk, chunk) in g.chunks(t * s).enumerate() {
                    let h = blk % heads;
                    for (&gv, &lb) in chunk.iter().zip(labels) {
                        dt[h * l + lb] += gv;
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            let v = values[logits.0].cols();
            let scale = g[0] / T::from_usize(*count).unwrap();
            if let Some(dl) = buf(grads, requires, values, *logits) {
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if !m {
                        continue;
                    }
                    for j in 0..v {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dl[r * v + j] += scale * (probs[r * v + j] - onehot);
                    }
                }
            }
        }
        Op::Nll {
            probs,
            targets,
            mask,
            count,
            clamp,
        } => {
            let v = values[probs.0].cols();
            let pv = values[probs.0].data();
            let scale = g[0] / T::from_usize(*count).unwrap();
            if let Some(dp) = buf(grads, requires, values, *probs) {
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    let p = pv[r * v + t];
                    if m && p > *clamp {
                        dp[r * v + t] -= scale / p;
                    }
                }
            }
        }
        Op::CopyScatter { attn, src, s, vocab } => {
            let (s, vocab) = (*s, *vocab);
            if let Some(da) = buf(grads, requires, values, *attn) {
                let t = da.len() / (src.len() / s) / s;
                let b = src.len() / s;
                for bi in 0..b {
                    let ids = &src[bi * s..(bi + 1) * s];
                    for i in 0..t {
                        let gr = &g[(bi * t + i) * vocab..(bi * t + i + 1) * vocab];
                        let dr = &mut da[(bi * t + i) * s..(bi * t + i + 1) * s];
                        for (d, &id) in dr.iter_mut().zip(ids) {
                            *d += gr[id];
                        }
                    }
                }
            }
        }
        &Op::Mix { p1, p2, w } => {
            let v = out.cols();
            let rows = out.rows();
            let wv = values[w.0].data();
            let wl = wv.len();
            let wr = |r: usize| wv[if wl == 1 { 0 } else { r }];
            if let Some(d) = buf(grads, requires, values, p1) {
                for r in 0..rows {
                    for j in 0..v {
                        d[r * v + j] += g[r * v + j] * wr(r);
                    }
                }
            }
            if let Some(d) = buf(grads, requires, values, p2) {
                for r in 0..rows {
                    for j in 0..v {
                        d[r * v + j] += g[r * v + j] * (T::one() - wr(r));
                    }
                }
            }
            let (a, b) = (values[p1.0].data(), values[p2.0].data());
            if let Some(d) = buf(grads, requires, values, w) {
                for r in 0..rows {
                    let mut acc = T::zero();
                    for j in 0..v {
                        acc += g[r * v + j] * (a[r * v + j] - b[r * v + j]);
                    }
                    d[if wl == 1 { 0 } else { r }] += acc;
                }
            }
        }
        &Op::AppendCol { x, v } => {
            let n1 = out.cols();
            if let Some(d) = buf(grads, requires, values, x) {
                let n = n1 - 1;
                for (dr, gr) in d.chunks_mut(n).zip(g.chunks(n1)) {
                    dr.iter_mut().zip(gr).for_each(|(d, &g)| *d += g);
                }
            }
            if let Some(d) = buf(grads, requires, values, v) {
                for gr in g.chunks(n1) {
                    d[0] += gr[n1 - 1];
                }
            }
        }
    }
}
