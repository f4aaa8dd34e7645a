//! Reverse-mode differentiation over a per-step tape.
//!
//! Every forward pass builds a fresh `Graph`. Nodes are appended in
//! topological order, so the backward pass is a single reverse sweep that
//! accumulates (sums) gradients into parents — shared subexpressions are
//! handled by construction. Tensors are immutable after creation except for
//! gradient accumulation, and a single training step is single-threaded.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, Parameter};
use crate::real::{real, Real};

/// Forward mode of a graph. Dropout is live only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

type Id = usize;

/// Recorded operation; holds parent ids plus whatever the backward needs.
enum Op<T: Real> {
    Leaf,
    /// out[m,n] = a[m,k] . b[k,n]
    Matmul { a: Id, b: Id, m: usize, k: usize, n: usize },
    /// out[m,n] = a[m,k] . b[n,k]^T
    MatmulTb { a: Id, b: Id, m: usize, k: usize, n: usize },
    Transpose { x: Id, rows: usize, cols: usize },
    Add { a: Id, b: Id },
    Sub { a: Id, b: Id },
    Mul { a: Id, b: Id },
    Scale { x: Id, c: T },
    /// x + constant vector/scalar; gradient passes through unchanged.
    Shift { x: Id },
    /// out[r,c] = x[r,c] + bias[c]
    AddBias { x: Id, bias: Id, rows: usize, cols: usize },
    Relu { x: Id },
    /// Backward uses the saved output.
    Sigmoid { x: Id },
    Softplus { x: Id },
    Log { x: Id },
    Abs { x: Id },
    SoftmaxRows { x: Id, rows: usize, cols: usize },
    MeanAll { x: Id },
    SumAll { x: Id },
    /// Mean over rows: [rows, cols] -> [cols]
    MeanRows { x: Id, rows: usize, cols: usize },
    ConcatCols { a: Id, b: Id, rows: usize, ca: usize, cb: usize },
    SliceRows { x: Id, r0: usize, len: usize, cols: usize },
    SliceCols { x: Id, c0: usize, len: usize, cols_in: usize, rows: usize },
    /// [cols] -> [n, cols], every row a copy.
    RepeatRow { x: Id, n: usize, cols: usize },
    /// Row i of x repeated durations[i] times (length regulation).
    ExpandRows { x: Id, durations: Vec<usize>, cols: usize },
    /// Append `pad` zero rows after the input rows.
    ZeroPadRows { x: Id, rows_in: usize, cols: usize },
    Embed { table: Id, ids: Vec<usize>, dim: usize },
    /// Saved inverted-dropout multiplier per element (0 or 1/keep).
    Dropout { x: Id, mask: Vec<T> },
    /// Identity forward; backward multiplies by -lambda.
    GradReverse { x: Id, lambda: T },
    /// Same-padded 1-D convolution over time-major input.
    /// x: [t, cin], w: [cout, cin, k] flat; im2col buffer saved for backward.
    ConvTc {
        x: Id,
        w: Id,
        cols: Vec<T>,
        t: usize,
        cin: usize,
        cout: usize,
        ksize: usize,
    },
    /// Element-wise binary cross-entropy on logits against a constant target.
    BceLogits { z: Id, target: Vec<T> },
    Reshape { x: Id },
}

struct Node<T: Real> {
    data: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

struct Inner<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bindings: HashMap<ParamId, Id>,
    mode: Mode,
    rng: Option<ChaCha8Rng>,
}

/// Handle to the shared tape. Cloning is cheap.
pub struct Graph<T: Real> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Real> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

/// Handle to one node of a graph.
pub struct Tensor<T: Real> {
    graph: Graph<T>,
    id: Id,
    shape: Vec<usize>,
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
            shape: self.shape.clone(),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Graph<T> {
    pub fn eval() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                grads: Vec::new(),
                bindings: HashMap::new(),
                mode: Mode::Eval,
                rng: None,
            })),
        }
    }

    pub fn train(seed: u64) -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                grads: Vec::new(),
                bindings: HashMap::new(),
                mode: Mode::Train,
                rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            })),
        }
    }

    pub fn mode(&self) -> Mode {
        self.inner.borrow().mode
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> Tensor<T> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            data,
            requires_grad,
            op,
        });
        inner.grads.push(None);
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    /// Constant input: participates in forward only.
    pub fn leaf(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != data.len() {
            return Err(Error::Invariant(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape.to_vec(), false, Op::Leaf))
    }

    /// Leaf that accumulates a gradient (for tests and probes).
    pub fn var(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != data.len() {
            return Err(Error::Invariant(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape.to_vec(), true, Op::Leaf))
    }

    /// Register a parameter as a trainable leaf; the binding is remembered so
    /// the optimizer can fetch this parameter's gradient after backward.
    ///
    /// A parameter already on this graph returns the existing leaf, so every
    /// use within a step shares one node and gradients accumulate across the
    /// whole batch.
    pub fn param(&self, p: &Parameter<T>) -> Tensor<T> {
        if let Some(&id) = self.inner.borrow().bindings.get(&p.id()) {
            return Tensor {
                graph: self.clone(),
                id,
                shape: p.shape.clone(),
            };
        }
        let t = self.push(p.data.clone(), p.shape.clone(), true, Op::Leaf);
        self.inner.borrow_mut().bindings.insert(p.id(), t.id);
        t
    }

    /// Register a parameter as a constant (no gradient flows to it).
    pub fn param_detached(&self, p: &Parameter<T>) -> Tensor<T> {
        self.push(p.data.clone(), p.shape.clone(), false, Op::Leaf)
    }

    /// Whether a parameter was registered (non-detached) on this graph.
    pub fn is_bound(&self, p: &Parameter<T>) -> bool {
        self.inner.borrow().bindings.contains_key(&p.id())
    }

    /// Gradient accumulated for a parameter, if any.
    pub fn param_grad(&self, p: &Parameter<T>) -> Option<Vec<T>> {
        let inner = self.inner.borrow();
        let id = *inner.bindings.get(&p.id())?;
        inner.grads[id].clone()
    }

    /// Remove and return a parameter's gradient (clears it on the tape).
    pub fn take_param_grad(&self, p: &Parameter<T>) -> Option<Vec<T>> {
        let mut inner = self.inner.borrow_mut();
        let id = *inner.bindings.get(&p.id())?;
        inner.grads[id].take()
    }

    /// Scale every bound parameter gradient in place (gradient clipping).
    pub fn scale_param_grads(&self, params: &[&Parameter<T>], factor: T) {
        let mut inner = self.inner.borrow_mut();
        for p in params {
            if let Some(&id) = inner.bindings.get(&p.id()) {
                if let Some(g) = inner.grads[id].as_mut() {
                    for v in g.iter_mut() {
                        *v *= factor;
                    }
                }
            }
        }
    }

    fn rng_draw(&self, n: usize, p_drop: T) -> Result<Vec<T>> {
        let mut inner = self.inner.borrow_mut();
        let rng = inner.rng.as_mut().ok_or_else(|| {
            Error::Invariant("dropout requested on a graph without an rng".into())
        })?;
        let keep = T::one() - p_drop;
        let inv = T::one() / keep;
        let p = p_drop.as_f64();
        Ok((0..n)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    inv
                }
            })
            .collect())
    }

    /// Reverse sweep from a scalar root. Populates gradients of every
    /// reachable `requires_grad` node.
    pub fn backward(&self, root: &Tensor<T>) -> Result<()> {
        if numel(&root.shape) != 1 {
            return Err(Error::Invariant(format!(
                "backward root must be scalar, got shape {:?}",
                root.shape
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        if !inner.nodes[root.id].requires_grad {
            return Ok(()); // nothing reachable requires a gradient
        }
        inner.grads[root.id] = Some(vec![T::one()]);
        for id in (0..=root.id).rev() {
            if inner.grads[id].is_none() || !inner.nodes[id].requires_grad {
                continue;
            }
            backward_op(&inner.nodes, &mut inner.grads, id);
        }
        Ok(())
    }
}

/// Ensure a gradient buffer exists and return it.
fn grad_buf<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    id: Id,
) -> &'a mut Vec<T> {
    if grads[id].is_none() {
        grads[id] = Some(vec![T::zero(); nodes[id].data.len()]);
    }
    grads[id].as_mut().unwrap()
}

fn wants_grad<T: Real>(nodes: &[Node<T>], id: Id) -> bool {
    nodes[id].requires_grad
}

#[allow(clippy::too_many_lines)]
fn backward_op<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: Id) {
    // The output gradient is taken by value so parent accumulation can borrow
    // `grads` mutably; it is restored afterwards (probes may read it).
    let g_out = grads[id].take().expect("gradient present for visited node");
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if wants_grad(nodes, *a) {
                // dA = dC . B^T
                let b_data = &nodes[*b].data;
                let ga = grad_buf(nodes, grads, *a);
                T::gemm(false, true, m, n, k, T::one(), &g_out, b_data, T::one(), ga);
            }
            if wants_grad(nodes, *b) {
                // dB = A^T . dC
                let a_data = &nodes[*a].data;
                let gb = grad_buf(nodes, grads, *b);
                T::gemm(true, false, k, m, n, T::one(), a_data, &g_out, T::one(), gb);
            }
        }
        Op::MatmulTb { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if wants_grad(nodes, *a) {
                // out = A . B^T with B physical [n,k]; dA = dC . B
                let b_data = &nodes[*b].data;
                let ga = grad_buf(nodes, grads, *a);
                T::gemm(false, false, m, n, k, T::one(), &g_out, b_data, T::one(), ga);
            }
            if wants_grad(nodes, *b) {
                // dB = dC^T . A
                let a_data = &nodes[*a].data;
                let gb = grad_buf(nodes, grads, *b);
                T::gemm(true, false, n, m, k, T::one(), &g_out, a_data, T::one(), gb);
            }
        }
        Op::Transpose { x, rows, cols } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*rows {
                    for c in 0..*cols {
                        gx[r * cols + c] += g_out[c * rows + r];
                    }
                }
            }
        }
        Op::Add { a, b } => {
            for pid in [a, b] {
                if wants_grad(nodes, *pid) {
                    let gp = grad_buf(nodes, grads, *pid);
                    for (gi, go) in gp.iter_mut().zip(&g_out) {
                        *gi += *go;
                    }
                }
            }
        }
        Op::Sub { a, b } => {
            if wants_grad(nodes, *a) {
                let ga = grad_buf(nodes, grads, *a);
                for (gi, go) in ga.iter_mut().zip(&g_out) {
                    *gi += *go;
                }
            }
            if wants_grad(nodes, *b) {
                let gb = grad_buf(nodes, grads, *b);
                for (gi, go) in gb.iter_mut().zip(&g_out) {
                    *gi -= *go;
                }
            }
        }
        Op::Mul { a, b } => {
            if wants_grad(nodes, *a) {
                let b_data = &nodes[*b].data;
                let ga = grad_buf(nodes, grads, *a);
                for i in 0..g_out.len() {
                    ga[i] += g_out[i] * b_data[i];
                }
            }
            if wants_grad(nodes, *b) {
                let a_data = &nodes[*a].data;
                let gb = grad_buf(nodes, grads, *b);
                for i in 0..g_out.len() {
                    gb[i] += g_out[i] * a_data[i];
                }
            }
        }
        Op::Scale { x, c } => {
            if wants_grad(nodes, *x) {
                let c = *c;
                let gx = grad_buf(nodes, grads, *x);
                for (gi, go) in gx.iter_mut().zip(&g_out) {
                    *gi += *go * c;
                }
            }
        }
        Op::Shift { x } | Op::Reshape { x } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for (gi, go) in gx.iter_mut().zip(&g_out) {
                    *gi += *go;
                }
            }
        }
        Op::AddBias { x, bias, rows, cols } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for (gi, go) in gx.iter_mut().zip(&g_out) {
                    *gi += *go;
                }
            }
            if wants_grad(nodes, *bias) {
                let gb = grad_buf(nodes, grads, *bias);
                for r in 0..*rows {
                    for c in 0..*cols {
                        gb[c] += g_out[r * cols + c];
                    }
                }
            }
        }
        Op::Relu { x } => {
            if wants_grad(nodes, *x) {
                let xd = &nodes[*x].data;
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    if xd[i] > T::zero() {
                        gx[i] += g_out[i];
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            if wants_grad(nodes, *x) {
                let out = &nodes[id].data;
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    gx[i] += g_out[i] * out[i] * (T::one() - out[i]);
                }
            }
        }
        Op::Softplus { x } => {
            if wants_grad(nodes, *x) {
                let xd = &nodes[*x].data;
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    gx[i] += g_out[i] * sigmoid_scalar(xd[i]);
                }
            }
        }
        Op::Log { x } => {
            if wants_grad(nodes, *x) {
                let xd = &nodes[*x].data;
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    gx[i] += g_out[i] / xd[i];
                }
            }
        }
        Op::Abs { x } => {
            if wants_grad(nodes, *x) {
                let xd = &nodes[*x].data;
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    let s = if xd[i] > T::zero() {
                        T::one()
                    } else if xd[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gx[i] += g_out[i] * s;
                }
            }
        }
        Op::SoftmaxRows { x, rows, cols } => {
            if wants_grad(nodes, *x) {
                let out = &nodes[id].data;
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*rows {
                    let base = r * cols;
                    let mut dot = T::zero();
                    for c in 0..*cols {
                        dot += g_out[base + c] * out[base + c];
                    }
                    for c in 0..*cols {
                        gx[base + c] += out[base + c] * (g_out[base + c] - dot);
                    }
                }
            }
        }
        Op::MeanAll { x } => {
            if wants_grad(nodes, *x) {
                let n = nodes[*x].data.len();
                let w = g_out[0] / real::<T>(n as f64);
                let gx = grad_buf(nodes, grads, *x);
                for gi in gx.iter_mut() {
                    *gi += w;
                }
            }
        }
        Op::SumAll { x } => {
            if wants_grad(nodes, *x) {
                let w = g_out[0];
                let gx = grad_buf(nodes, grads, *x);
                for gi in gx.iter_mut() {
                    *gi += w;
                }
            }
        }
        Op::MeanRows { x, rows, cols } => {
            if wants_grad(nodes, *x) {
                let w = T::one() / real::<T>(*rows as f64);
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*rows {
                    for c in 0..*cols {
                        gx[r * cols + c] += g_out[c] * w;
                    }
                }
            }
        }
        Op::ConcatCols { a, b, rows, ca, cb } => {
            let cout = ca + cb;
            if wants_grad(nodes, *a) {
                let ga = grad_buf(nodes, grads, *a);
                for r in 0..*rows {
                    for c in 0..*ca {
                        ga[r * ca + c] += g_out[r * cout + c];
                    }
                }
            }
            if wants_grad(nodes, *b) {
                let gb = grad_buf(nodes, grads, *b);
                for r in 0..*rows {
                    for c in 0..*cb {
                        gb[r * cb + c] += g_out[r * cout + ca + c];
                    }
                }
            }
        }
        Op::SliceRows { x, r0, len, cols, .. } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*len {
                    for c in 0..*cols {
                        gx[(r0 + r) * cols + c] += g_out[r * cols + c];
                    }
                }
            }
        }
        Op::SliceCols { x, c0, len, cols_in, rows } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*rows {
                    for c in 0..*len {
                        gx[r * cols_in + c0 + c] += g_out[r * len + c];
                    }
                }
            }
        }
        Op::RepeatRow { x, n, cols } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for r in 0..*n {
                    for c in 0..*cols {
                        gx[c] += g_out[r * cols + c];
                    }
                }
            }
        }
        Op::ExpandRows { x, durations, cols } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                let mut t = 0;
                for (i, &d) in durations.iter().enumerate() {
                    for _ in 0..d {
                        for c in 0..*cols {
                            gx[i * cols + c] += g_out[t * cols + c];
                        }
                        t += 1;
                    }
                }
            }
        }
        Op::ZeroPadRows { x, rows_in, cols } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..rows_in * cols {
                    gx[i] += g_out[i];
                }
            }
        }
        Op::Embed { table, ids, dim } => {
            if wants_grad(nodes, *table) {
                let gt = grad_buf(nodes, grads, *table);
                for (row, &tok) in ids.iter().enumerate() {
                    for c in 0..*dim {
                        gt[tok * dim + c] += g_out[row * dim + c];
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if wants_grad(nodes, *x) {
                let gx = grad_buf(nodes, grads, *x);
                for i in 0..g_out.len() {
                    gx[i] += g_out[i] * mask[i];
                }
            }
        }
        Op::GradReverse { x, lambda } => {
            if wants_grad(nodes, *x) {
                let lam = *lambda;
                let gx = grad_buf(nodes, grads, *x);
                for (gi, go) in gx.iter_mut().zip(&g_out) {
                    *gi += -lam * *go;
                }
            }
        }
        Op::ConvTc { x, w, cols, t, cin, cout, ksize } => {
            let (t, cin, cout, ksize) = (*t, *cin, *cout, *ksize);
            let ck = cin * ksize;
            if wants_grad(nodes, *w) {
                // dW[cout, ck] = dY^T . cols  (dY: [t, cout], cols: [t, ck])
                let gw = grad_buf(nodes, grads, *w);
                T::gemm(true, false, cout, t, ck, T::one(), &g_out, cols, T::one(), gw);
            }
            if wants_grad(nodes, *x) {
                // dCols[t, ck] = dY . W  then scatter back over the pad.
                let w_data = &nodes[*w].data;
                let mut d_cols = vec![T::zero(); t * ck];
                T::gemm(false, false, t, cout, ck, T::one(), &g_out, w_data, T::zero(), &mut d_cols);
                let half = ksize / 2;
                let gx = grad_buf(nodes, grads, *x);
                for row in 0..t {
                    for kk in 0..ksize {
                        let src = row as isize + kk as isize - half as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ci in 0..cin {
                            gx[src * cin + ci] += d_cols[row * ck + ci * ksize + kk];
                        }
                    }
                }
            }
        }
        Op::BceLogits { z, target } => {
            if wants_grad(nodes, *z) {
                let zd = &nodes[*z].data;
                let gz = grad_buf(nodes, grads, *z);
                for i in 0..g_out.len() {
                    gz[i] += g_out[i] * (sigmoid_scalar(zd[i]) - target[i]);
                }
            }
        }
    }
    grads[id] = Some(g_out);
}

#[inline]
fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softplus ln(1 + e^x).
#[inline]
fn softplus_scalar<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Vec<T> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    /// Value of a scalar tensor.
    pub fn scalar(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.graph.inner.borrow().nodes[self.id].data[0]
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.graph.inner.borrow().grads[self.id].clone()
    }

    fn rc(&self, other: Option<&Tensor<T>>) -> bool {
        let mut req = self.requires_grad();
        if let Some(o) = other {
            req = req || o.requires_grad();
        }
        req
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.len() {
            2 => Ok((self.shape[0], self.shape[1])),
            1 => Ok((1, self.shape[0])),
            _ => Err(Error::dim(op, &self.shape, &[])),
        }
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.rows_cols("matmul")?;
        let (k2, n) = other.rows_cols("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let inner = self.graph.inner.borrow();
            T::gemm(
                false,
                false,
                m,
                k,
                n,
                T::one(),
                &inner.nodes[self.id].data,
                &inner.nodes[other.id].data,
                T::zero(),
                &mut out,
            );
        }
        Ok(self.graph.push(
            out,
            vec![m, n],
            self.rc(Some(other)),
            Op::Matmul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        ))
    }

    /// self[m,k] . other[n,k]^T -> [m,n]
    pub fn matmul_tb(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.rows_cols("matmul_tb")?;
        let (n, k2) = other.rows_cols("matmul_tb")?;
        if k != k2 {
            return Err(Error::dim("matmul_tb", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let inner = self.graph.inner.borrow();
            T::gemm(
                false,
                true,
                m,
                k,
                n,
                T::one(),
                &inner.nodes[self.id].data,
                &inner.nodes[other.id].data,
                T::zero(),
                &mut out,
            );
        }
        Ok(self.graph.push(
            out,
            vec![m, n],
            self.rc(Some(other)),
            Op::MatmulTb {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("transpose")?;
        let data = self.value();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = data[r * cols + c];
            }
        }
        Ok(self.graph.push(
            out,
            vec![cols, rows],
            self.rc(None),
            Op::Transpose {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    fn zip_op(
        &self,
        other: &Tensor<T>,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl Fn(Id, Id) -> Op<T>,
    ) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::dim(op_name, &self.shape, &other.shape));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id].data;
            let b = &inner.nodes[other.id].data;
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok(self
            .graph
            .push(out, self.shape.clone(), self.rc(Some(other)), op(self.id, other.id)))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_op(other, "add", |a, b| a + b, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_op(other, "sub", |a, b| a - b, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_op(other, "mul", |a, b| a * b, |a, b| Op::Mul { a, b })
    }

    fn map_op(&self, f: impl Fn(T) -> T, op: Op<T>) -> Tensor<T> {
        let out = self
            .graph
            .inner
            .borrow()
            .nodes[self.id]
            .data
            .iter()
            .map(|&x| f(x))
            .collect();
        self.graph.push(out, self.shape.clone(), self.rc(None), op)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map_op(|x| x * c, Op::Scale { x: self.id, c })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    /// Add a constant (non-differentiable) tensor of identical shape.
    pub fn shift(&self, constant: &[T]) -> Result<Tensor<T>> {
        if constant.len() != self.numel() {
            return Err(Error::dim("shift", &self.shape, &[constant.len()]));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            inner.nodes[self.id]
                .data
                .iter()
                .zip(constant)
                .map(|(&x, &c)| x + c)
                .collect()
        };
        Ok(self
            .graph
            .push(out, self.shape.clone(), self.rc(None), Op::Shift { x: self.id }))
    }

    /// Add a single constant to every element.
    pub fn shift_scalar(&self, c: T) -> Tensor<T> {
        self.map_op(|x| x + c, Op::Shift { x: self.id })
    }

    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("add_bias")?;
        if bias.numel() != cols {
            return Err(Error::dim("add_bias", &self.shape, &bias.shape));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let b = &inner.nodes[bias.id].data;
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.push(x[r * cols + c] + b[c]);
                }
            }
            out
        };
        Ok(self.graph.push(
            out,
            self.shape.clone(),
            self.rc(Some(bias)),
            Op::AddBias {
                x: self.id,
                bias: bias.id,
                rows,
                cols,
            },
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map_op(
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu { x: self.id },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map_op(sigmoid_scalar, Op::Sigmoid { x: self.id })
    }

    pub fn softplus(&self) -> Tensor<T> {
        self.map_op(softplus_scalar, Op::Softplus { x: self.id })
    }

    pub fn log(&self) -> Tensor<T> {
        self.map_op(|x| x.ln(), Op::Log { x: self.id })
    }

    pub fn abs(&self) -> Tensor<T> {
        self.map_op(|x| x.abs(), Op::Abs { x: self.id })
    }

    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("softmax_rows")?;
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let mut out = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let row = &x[r * cols..(r + 1) * cols];
                let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for c in 0..cols {
                    let e = (row[c] - mx).exp();
                    out[r * cols + c] = e;
                    sum += e;
                }
                for c in 0..cols {
                    out[r * cols + c] /= sum;
                }
            }
            out
        };
        Ok(self.graph.push(
            out,
            self.shape.clone(),
            self.rc(None),
            Op::SoftmaxRows {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let data = self.graph.inner.borrow().nodes[self.id].data.clone();
        let n = data.len();
        let mut sum = T::zero();
        for v in &data {
            sum += *v;
        }
        let mean = sum / real::<T>(n as f64);
        self.graph
            .push(vec![mean], vec![1], self.rc(None), Op::MeanAll { x: self.id })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let data = self.graph.inner.borrow().nodes[self.id].data.clone();
        let mut sum = T::zero();
        for v in &data {
            sum += *v;
        }
        self.graph
            .push(vec![sum], vec![1], self.rc(None), Op::SumAll { x: self.id })
    }

    /// Mean over the row axis: [rows, cols] -> [cols].
    pub fn mean_rows(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("mean_rows")?;
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let inv = T::one() / real::<T>(rows as f64);
            let mut out = vec![T::zero(); cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c] += x[r * cols + c];
                }
            }
            for v in out.iter_mut() {
                *v *= inv;
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![cols],
            self.rc(None),
            Op::MeanRows {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    pub fn concat_cols(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, ca) = self.rows_cols("concat_cols")?;
        let (rows2, cb) = other.rows_cols("concat_cols")?;
        if rows != rows2 {
            return Err(Error::dim("concat_cols", &self.shape, &other.shape));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id].data;
            let b = &inner.nodes[other.id].data;
            let mut out = Vec::with_capacity(rows * (ca + cb));
            for r in 0..rows {
                out.extend_from_slice(&a[r * ca..(r + 1) * ca]);
                out.extend_from_slice(&b[r * cb..(r + 1) * cb]);
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![rows, ca + cb],
            self.rc(Some(other)),
            Op::ConcatCols {
                a: self.id,
                b: other.id,
                rows,
                ca,
                cb,
            },
        ))
    }

    pub fn slice_rows(&self, r0: usize, len: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("slice_rows")?;
        if r0 + len > rows {
            return Err(Error::dim("slice_rows", &self.shape, &[r0, len]));
        }
        let out = self.graph.inner.borrow().nodes[self.id].data[r0 * cols..(r0 + len) * cols]
            .to_vec();
        Ok(self.graph.push(
            out,
            vec![len, cols],
            self.rc(None),
            Op::SliceRows {
                x: self.id,
                r0,
                len,
                cols,
            },
        ))
    }

    pub fn slice_cols(&self, c0: usize, len: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("slice_cols")?;
        if c0 + len > cols {
            return Err(Error::dim("slice_cols", &self.shape, &[c0, len]));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&x[r * cols + c0..r * cols + c0 + len]);
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![rows, len],
            self.rc(None),
            Op::SliceCols {
                x: self.id,
                c0,
                len,
                cols_in: cols,
                rows,
            },
        ))
    }

    /// [cols] (or [1, cols]) -> [n, cols] with every row a copy.
    pub fn repeat_row(&self, n: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("repeat_row")?;
        if rows != 1 {
            return Err(Error::dim("repeat_row", &self.shape, &[1, cols]));
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let mut out = Vec::with_capacity(n * cols);
            for _ in 0..n {
                out.extend_from_slice(x);
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![n, cols],
            self.rc(None),
            Op::RepeatRow {
                x: self.id,
                n,
                cols,
            },
        ))
    }

    /// Repeat row i `durations[i]` times, preserving order.
    pub fn expand_rows(&self, durations: &[usize]) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("expand_rows")?;
        if rows != durations.len() {
            return Err(Error::Alignment(format!(
                "expand: {} encoding rows but {} durations",
                rows,
                durations.len()
            )));
        }
        if durations.iter().any(|&d| d == 0) {
            return Err(Error::Validation("expand: zero duration".into()));
        }
        let total: usize = durations.iter().sum();
        let out = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let mut out = Vec::with_capacity(total * cols);
            for (i, &d) in durations.iter().enumerate() {
                for _ in 0..d {
                    out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
                }
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![total, cols],
            self.rc(None),
            Op::ExpandRows {
                x: self.id,
                durations: durations.to_vec(),
                cols,
            },
        ))
    }

    /// Append zero rows so the output has `total_rows` rows.
    pub fn zero_pad_rows(&self, total_rows: usize) -> Result<Tensor<T>> {
        let (rows, cols) = self.rows_cols("zero_pad_rows")?;
        if total_rows < rows {
            return Err(Error::dim("zero_pad_rows", &self.shape, &[total_rows]));
        }
        let mut out = self.graph.inner.borrow().nodes[self.id].data.clone();
        out.resize(total_rows * cols, T::zero());
        Ok(self.graph.push(
            out,
            vec![total_rows, cols],
            self.rc(None),
            Op::ZeroPadRows {
                x: self.id,
                rows_in: rows,
                cols,
            },
        ))
    }

    /// Row lookup: self is a [vocab, dim] table, output stacks rows of `ids`.
    pub fn embed(&self, ids: &[usize], what: &'static str) -> Result<Tensor<T>> {
        let (vocab, dim) = self.rows_cols("embed")?;
        for &i in ids {
            if i >= vocab {
                return Err(Error::Vocab {
                    what,
                    index: i,
                    size: vocab,
                });
            }
        }
        let out = {
            let inner = self.graph.inner.borrow();
            let tab = &inner.nodes[self.id].data;
            let mut out = Vec::with_capacity(ids.len() * dim);
            for &i in ids {
                out.extend_from_slice(&tab[i * dim..(i + 1) * dim]);
            }
            out
        };
        Ok(self.graph.push(
            out,
            vec![ids.len(), dim],
            self.rc(None),
            Op::Embed {
                table: self.id,
                ids: ids.to_vec(),
                dim,
            },
        ))
    }

    /// Inverted dropout with drop probability `p`; identity in eval mode.
    pub fn dropout(&self, p: T) -> Result<Tensor<T>> {
        if p < T::zero() || p >= T::one() {
            return Err(Error::Config(format!("dropout probability {p} not in [0,1)")));
        }
        if self.graph.mode() == Mode::Eval || p == T::zero() {
            return Ok(self.clone());
        }
        let mask = self.graph.rng_draw(self.numel(), p)?;
        let out = {
            let inner = self.graph.inner.borrow();
            inner.nodes[self.id]
                .data
                .iter()
                .zip(&mask)
                .map(|(&x, &m)| x * m)
                .collect()
        };
        Ok(self.graph.push(
            out,
            self.shape.clone(),
            self.rc(None),
            Op::Dropout { x: self.id, mask },
        ))
    }

    /// Identity forward; backward multiplies the upstream gradient by -lambda.
    pub fn gradient_reversal(&self, lambda: T) -> Result<Tensor<T>> {
        if lambda < T::zero() {
            return Err(Error::Config(format!(
                "gradient reversal lambda must be nonnegative, got {lambda}"
            )));
        }
        let out = self.value();
        Ok(self.graph.push(
            out,
            self.shape.clone(),
            self.rc(None),
            Op::GradReverse {
                x: self.id,
                lambda,
            },
        ))
    }

    /// Same-padded 1-D convolution, time-major: x [t, cin], w [cout, cin, k].
    pub fn conv1d_tc(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        let (t, cin) = self.rows_cols("conv1d")?;
        if w.shape.len() != 3 {
            return Err(Error::dim("conv1d", &self.shape, &w.shape));
        }
        let (cout, w_cin, ksize) = (w.shape[0], w.shape[1], w.shape[2]);
        if w_cin != cin {
            return Err(Error::dim("conv1d", &self.shape, &w.shape));
        }
        if ksize % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d kernel must be odd, got {ksize}"
            )));
        }
        let half = ksize / 2;
        let ck = cin * ksize;
        // im2col: cols[row, ci*k + kk] = x[row + kk - half, ci] (zero padded)
        let cols = {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let mut cols = vec![T::zero(); t * ck];
            for row in 0..t {
                for kk in 0..ksize {
                    let src = row as isize + kk as isize - half as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ci in 0..cin {
                        cols[row * ck + ci * ksize + kk] = x[src * cin + ci];
                    }
                }
            }
            cols
        };
        let mut out = vec![T::zero(); t * cout];
        {
            let inner = self.graph.inner.borrow();
            let w_data = &inner.nodes[w.id].data;
            // out[t, cout] = cols[t, ck] . W[cout, ck]^T
            T::gemm(false, true, t, ck, cout, T::one(), &cols, w_data, T::zero(), &mut out);
        }
        Ok(self.graph.push(
            out,
            vec![t, cout],
            self.rc(Some(w)),
            Op::ConvTc {
                x: self.id,
                w: w.id,
                cols,
                t,
                cin,
                cout,
                ksize,
            },
        ))
    }

    /// Element-wise binary cross-entropy with logits against constant targets
    /// in {0,1}: max(z,0) - z*y + ln(1 + e^-|z|).
    pub fn bce_with_logits(&self, target: &[T]) -> Result<Tensor<T>> {
        if target.len() != self.numel() {
            return Err(Error::dim("bce_with_logits", &self.shape, &[target.len()]));
        }
        for &y in target {
            if y != T::zero() && y != T::one() {
                return Err(Error::Validation(format!(
                    "bce_with_logits target must be 0 or 1, got {y}"
                )));
            }
        }
        let out = {
            let inner = self.graph.inner.borrow();
            inner.nodes[self.id]
                .data
                .iter()
                .zip(target)
                .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
                .collect()
        };
        Ok(self.graph.push(
            out,
            self.shape.clone(),
            self.rc(None),
            Op::BceLogits {
                z: self.id,
                target: target.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        let out = self.value();
        Ok(self
            .graph
            .push(out, shape.to_vec(), self.rc(None), Op::Reshape { x: self.id }))
    }
}

/// Spec-layout 1-D convolution: x [cin, time], w [cout, cin, k] -> [cout, time].
/// Same zero padding; kernel must be odd.
pub fn conv1d<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    x.transpose()?.conv1d_tc(w)?.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g64() -> Graph<f64> {
        Graph::<f64>::eval()
    }

    #[test]
    fn matmul_identity() {
        let g = g64();
        let i2 = g.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let a = g.var(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let c = i2.matmul(&a).unwrap();
        assert_eq!(c.value(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projection() {
        let g = g64();
        let p = g.leaf(vec![1.0, 0.0, 0.0, 0.0], &[2, 2]).unwrap();
        let v = g.leaf(vec![5.0, 7.0], &[2, 1]).unwrap();
        let c = p.matmul(&v).unwrap();
        assert_eq!(c.value(), vec![5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let g = g64();
        let a = g.leaf(vec![0.0; 6], &[2, 3]).unwrap();
        let b = g.leaf(vec![0.0; 8], &[2, 4]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 4]"), "{msg}");
    }

    #[test]
    fn backward_matmul_sum() {
        // d/dA sum(A.B) = 1 . B^T
        let g = g64();
        let a = g.var(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = g.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let s = a.matmul(&b).unwrap().sum_all();
        g.backward(&s).unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x*x + x  (x used by two consumers) vs duplicated-input build.
        let g = g64();
        let x = g.var(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        g.backward(&y).unwrap();
        let shared = x.grad().unwrap()[0];

        let g2 = g64();
        let x1 = g2.var(vec![3.0], &[1]).unwrap();
        let x2 = g2.var(vec![3.0], &[1]).unwrap();
        let x3 = g2.var(vec![3.0], &[1]).unwrap();
        let y2 = x1.mul(&x2).unwrap().add(&x3).unwrap().sum_all();
        g2.backward(&y2).unwrap();
        let dup = x1.grad().unwrap()[0] + x2.grad().unwrap()[0] + x3.grad().unwrap()[0];
        assert_eq!(shared, dup);
        assert_eq!(shared, 7.0); // 2x + 1 at x=3
    }

    #[test]
    fn softmax_uniform() {
        let g = g64();
        let x = g.leaf(vec![0.0, 0.0, 0.0], &[1, 3]).unwrap();
        let s = x.softmax_rows().unwrap();
        for v in s.value() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_zero() {
        let g = g64();
        let x = g.leaf(vec![0.0], &[1]).unwrap();
        assert_eq!(x.sigmoid().value(), vec![0.5]);
    }

    #[test]
    fn dropout_eval_identity() {
        let g = g64();
        let x = g.var(vec![1.5, -2.5, 3.25], &[3]).unwrap();
        let y = x.dropout(0.1).unwrap();
        assert_eq!(y.value(), x.value()); // bitwise: same node
    }

    #[test]
    fn dropout_train_deterministic_under_seed() {
        let a = {
            let g = Graph::<f64>::train(7);
            let x = g.leaf(vec![1.0; 64], &[64]).unwrap();
            x.dropout(0.5).unwrap().value()
        };
        let b = {
            let g = Graph::<f64>::train(7);
            let x = g.leaf(vec![1.0; 64], &[64]).unwrap();
            x.dropout(0.5).unwrap().value()
        };
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v == 0.0) && a.iter().any(|&v| v == 2.0));
    }

    #[test]
    fn gradient_reversal_contract() {
        for lambda in [0.0, 0.5, 1.0, 2.0] {
            let g = g64();
            let x = g.var(vec![1.0, -2.0, 0.25], &[3]).unwrap();
            let y = x.gradient_reversal(lambda).unwrap();
            assert_eq!(y.value(), x.value()); // forward bit-identity
            let s = y.mul(&y).unwrap().sum_all();
            g.backward(&s).unwrap();
            let got = x.grad().unwrap();
            // d sum(y^2)/dy = 2y; reversed: -lambda * 2y, exactly.
            for (gi, xi) in got.iter().zip(x.value()) {
                assert_eq!(*gi, -lambda * 2.0 * xi);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let g = g64();
        let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0], &[1, 5]).unwrap(); // cin=1, t=5
        let w = g.leaf(vec![0.0, 1.0, 0.0], &[1, 1, 3]).unwrap();
        let y = conv1d(&x, &w).unwrap();
        assert_eq!(y.shape(), &[1, 5]);
        assert_eq!(y.value(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn conv_box_kernel_hand_computed() {
        let g = g64();
        let x = g.leaf(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
        let w = g.leaf(vec![1.0, 1.0, 1.0], &[1, 1, 3]).unwrap();
        let y = conv1d(&x, &w).unwrap();
        assert_eq!(y.value(), vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_even_kernel_rejected() {
        let g = g64();
        let x = g.leaf(vec![0.0; 4], &[1, 4]).unwrap();
        let w = g.leaf(vec![0.0; 2], &[1, 1, 2]).unwrap();
        assert!(matches!(conv1d(&x, &w), Err(Error::Config(_))));
    }

    #[test]
    fn embed_out_of_range() {
        let g = g64();
        let tab = g.leaf(vec![0.0; 8], &[4, 2]).unwrap();
        let err = tab.embed(&[1, 4], "phoneme").unwrap_err();
        assert!(matches!(err, Error::Vocab { index: 4, size: 4, .. }));
    }

    #[test]
    fn expand_rows_and_backward() {
        let g = g64();
        let x = g.var(vec![1.0, 2.0, 10.0, 20.0], &[2, 2]).unwrap();
        let y = x.expand_rows(&[2, 3]).unwrap();
        assert_eq!(y.shape(), &[5, 2]);
        assert_eq!(
            y.value(),
            vec![1.0, 2.0, 1.0, 2.0, 10.0, 20.0, 10.0, 20.0, 10.0, 20.0]
        );
        let s = y.sum_all();
        g.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn bce_logits_perfect_prediction() {
        let g = g64();
        let z = g.leaf(vec![20.0, -20.0], &[2]).unwrap();
        let l = z.bce_with_logits(&[1.0, 0.0]).unwrap().mean_all();
        assert!(l.scalar() < 1e-6);
    }

    #[test]
    fn bce_rejects_non_binary_target() {
        let g = g64();
        let z = g.leaf(vec![0.0], &[1]).unwrap();
        assert!(matches!(
            z.bce_with_logits(&[0.5]),
            Err(Error::Validation(_))
        ));
    }
}
