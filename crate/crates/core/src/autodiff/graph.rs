use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Index of a node in its owning [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Producing operation of a node. Parents always precede the node in the
/// tape, so a reverse sweep visits consumers before producers.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [n,k] x [k,m] -> [n,m]
    Matmul(NodeId, NodeId),
    /// elementwise, same shape
    Add(NodeId, NodeId),
    /// [n,m] + [m] broadcast over rows
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// sum of all entries -> scalar
    Sum(NodeId),
    /// mean of all entries -> scalar
    Mean(NodeId),
    /// stack [n1,d] on top of [n2,d] -> [n1+n2,d]
    ConcatRows(NodeId, NodeId),
    /// join [n,d1] and [n,d2] -> [n,d1+d2]
    ConcatCols(NodeId, NodeId),
    /// mean cross-entropy over rows with softmax fused in; `probs` caches
    /// the row softmax from the forward pass. `seed_mask` (len n*C), when
    /// present, multiplies the per-row, per-class gradient seed.
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
        seed_mask: Option<Vec<f64>>,
    },
    /// mean KL(teacher || student) over rows, both softmaxed at temperature
    /// `t` over the class subset `classes` only. Teacher is plain data.
    Distill {
        student: NodeId,
        classes: Vec<usize>,
        t: f64,
        student_probs: Vec<f64>,
        teacher_probs: Vec<f64>,
        seed_mask: Option<Vec<f64>>,
    },
    /// z = mu + exp(logvar/2) * eps with eps fixed at insertion
    GaussianSample {
        mu: NodeId,
        logvar: NodeId,
        eps: Vec<f64>,
    },
}

struct NodeData {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Values are computed eagerly as ops are inserted
/// (that is the forward pass); `backward` fills gradients for every node
/// reachable from a `parameter` leaf.
pub struct Graph {
    nodes: Vec<NodeData>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(NodeData {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that participates in gradient computation.
    pub fn parameter(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant (inputs, frozen weights, teacher data).
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call w.r.t. this node, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn grad_array(&self, id: NodeId) -> Option<Array> {
        self.grads[id.0].as_ref().map(|g| {
            Array::new(self.nodes[id.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape mirrors value shape")
        })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ── op insertion (eager forward) ─────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let x = av.values()[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv.values()[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        let rg = self.needs(a) || self.needs(b);
        let value = Array::new(vec![n, m], out)?;
        value.assert_finite("matmul")?;
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: opname,
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let values: Vec<f64> = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let value = Array::new(av.shape().to_vec(), values)?;
        value.assert_finite(opname)?;
        Ok(self.push(value, make(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Broadcast-add a row vector `[m]` to every row of `[n,m]`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if av.ndim() != 2 || bv.ndim() != 1 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", av.shape(), bv.shape()),
            });
        }
        let (n, m) = (av.shape()[0], av.shape()[1]);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(av.values()[i * m + j] + bv.values()[j]);
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        let value = Array::new(vec![n, m], out)?;
        value.assert_finite("add_row")?;
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    fn unary(
        &mut self,
        opname: &'static str,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        make: impl Fn(NodeId) -> Op,
    ) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let values: Vec<f64> = av.values().iter().map(|&x| f(x)).collect();
        let rg = self.needs(a);
        let value = Array::new(av.shape().to_vec(), values)?;
        value.assert_finite(opname)?;
        Ok(self.push(value, make(a), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary("scale", a, |x| x * c, |p| Op::Scale(p, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary("add_const", a, |x| x + c, Op::AddConst)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("exp", a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("log", a, f64::ln, Op::Log)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a.0].value.values().iter().sum();
        let rg = self.needs(a);
        let value = Array::scalar(s).map_err(|_| Error::NonFinite { op: "sum" })?;
        Ok(self.push(value, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean",
                detail: "empty input".to_string(),
            });
        }
        let s: f64 = self.nodes[a.0].value.values().iter().sum::<f64>() / n as f64;
        let rg = self.needs(a);
        let value = Array::scalar(s).map_err(|_| Error::NonFinite { op: "mean" })?;
        Ok(self.push(value, Op::Mean(a), rg))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                detail: format!("{:?} over {:?}", av.shape(), bv.shape()),
            });
        }
        let mut values = av.values().to_vec();
        values.extend_from_slice(bv.values());
        let shape = vec![av.shape()[0] + bv.shape()[0], av.shape()[1]];
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Array::new(shape, values)?, Op::ConcatRows(a, b), rg))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[0] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{:?} beside {:?}", av.shape(), bv.shape()),
            });
        }
        let (n, d1, d2) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut values = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            values.extend_from_slice(av.row(i));
            values.extend_from_slice(bv.row(i));
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Array::new(vec![n, d1 + d2], values)?,
            Op::ConcatCols(a, b),
            rg,
        ))
    }

    /// Fused softmax + mean cross-entropy over rows. `seed_mask`, when given,
    /// has one multiplier per (row, class) and is applied to the gradient
    /// seed before propagation; the forward value is unaffected.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        seed_mask: Option<Vec<f64>>,
    ) -> Result<NodeId> {
        let lv = &self.nodes[logits.0].value;
        if lv.ndim() != 2 || lv.shape()[0] != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("logits {:?}, {} targets", lv.shape(), targets.len()),
            });
        }
        let (n, c) = (lv.shape()[0], lv.shape()[1]);
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange {
                label: *t,
                classes: c,
            });
        }
        if let Some(m) = &seed_mask {
            if m.len() != n * c {
                return Err(Error::MaskLength {
                    got: m.len(),
                    expected: n * c,
                });
            }
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &l in row {
                z += (l - mx).exp();
            }
            let lse = mx + z.ln();
            for (j, &l) in row.iter().enumerate() {
                probs[i * c + j] = (l - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        loss /= n as f64;
        let rg = self.needs(logits);
        let value = Array::scalar(loss)?;
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                seed_mask,
            },
            rg,
        ))
    }

    /// Mean KL(softmax(teacher/t) || softmax(student/t)) over rows, restricted
    /// to the `classes` subset (softmax renormalized over the subset).
    /// Teacher logits enter as plain data. Returns a constant 0 node when the
    /// subset is empty.
    pub fn distillation(
        &mut self,
        student: NodeId,
        teacher: &Array,
        classes: &[usize],
        t: f64,
        seed_mask: Option<Vec<f64>>,
    ) -> Result<NodeId> {
        if t <= 0.0 {
            return Err(Error::BadTemperature(t));
        }
        let sv = &self.nodes[student.0].value;
        if sv.shape() != teacher.shape() {
            return Err(Error::ShapeMismatch {
                op: "distillation",
                detail: format!("student {:?}, teacher {:?}", sv.shape(), teacher.shape()),
            });
        }
        if classes.is_empty() {
            return Ok(self.constant(Array::scalar(0.0)?));
        }
        let (n, c) = (sv.shape()[0], sv.shape()[1]);
        if let Some(&bad) = classes.iter().find(|&&j| j >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        if let Some(m) = &seed_mask {
            if m.len() != n * c {
                return Err(Error::MaskLength {
                    got: m.len(),
                    expected: n * c,
                });
            }
        }
        let k = classes.len();
        let softmax_subset = |row: &[f64]| -> Vec<f64> {
            let mx = classes
                .iter()
                .map(|&j| row[j] / t)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut e: Vec<f64> = classes.iter().map(|&j| (row[j] / t - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for v in &mut e {
                *v /= z;
            }
            e
        };
        let mut sprobs = vec![0.0; n * k];
        let mut tprobs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let ps = softmax_subset(sv.row(i));
            let pt = softmax_subset(teacher.row(i));
            for j in 0..k {
                if pt[j] > 0.0 {
                    loss += pt[j] * (pt[j].ln() - ps[j].ln());
                }
                sprobs[i * k + j] = ps[j];
                tprobs[i * k + j] = pt[j];
            }
        }
        loss /= n as f64;
        let rg = self.needs(student);
        let value = Array::scalar(loss)?;
        Ok(self.push(
            value,
            Op::Distill {
                student,
                classes: classes.to_vec(),
                t,
                student_probs: sprobs,
                teacher_probs: tprobs,
                seed_mask,
            },
            rg,
        ))
    }

    /// Reparameterized Gaussian sample z = mu + exp(logvar/2) * eps.
    /// `eps` is fixed at insertion so repeated builds with the same noise are
    /// bit-identical (common random numbers).
    pub fn gaussian_sample(&mut self, mu: NodeId, logvar: NodeId, eps: &[f64]) -> Result<NodeId> {
        let (mv, lv) = (&self.nodes[mu.0].value, &self.nodes[logvar.0].value);
        if mv.shape() != lv.shape() || mv.len() != eps.len() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_sample",
                detail: format!(
                    "mu {:?}, logvar {:?}, eps len {}",
                    mv.shape(),
                    lv.shape(),
                    eps.len()
                ),
            });
        }
        let values: Vec<f64> = mv
            .values()
            .iter()
            .zip(lv.values())
            .zip(eps)
            .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
            .collect();
        let rg = self.needs(mu) || self.needs(logvar);
        let value = Array::new(mv.shape().to_vec(), values)?;
        value.assert_finite("gaussian_sample")?;
        Ok(self.push(
            value,
            Op::GaussianSample {
                mu,
                logvar,
                eps: eps.to_vec(),
            },
            rg,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// node on a path from a `parameter` leaf to the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.backward_inner(loss, None)
    }

    /// Like [`backward`](Self::backward) but multiplies the gradient seed of
    /// every class-logit loss node (cross-entropy, distillation) by a
    /// per-class mask, zeroing masked classes' contributions to everything
    /// upstream of the head.
    pub fn backward_with_class_mask(&mut self, loss: NodeId, mask: &[f64]) -> Result<()> {
        self.backward_inner(loss, Some(mask))
    }

    fn backward_inner(&mut self, loss: NodeId, class_mask: Option<&[f64]>) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if let Some(mask) = class_mask {
            let mut found = false;
            for node in &self.nodes {
                let c = match &node.op {
                    Op::SoftmaxCrossEntropy { logits, .. } => {
                        self.nodes[logits.0].value.shape()[1]
                    }
                    Op::Distill { student, .. } => self.nodes[student.0].value.shape()[1],
                    _ => continue,
                };
                found = true;
                if mask.len() != c {
                    return Err(Error::MaskLength {
                        got: mask.len(),
                        expected: c,
                    });
                }
            }
            if !found {
                return Err(Error::NoMaskTarget);
            }
        }

        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let gout = match self.grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            // split borrows: read node data, then write into parent grads
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (n, k) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let m = self.nodes[b.0].value.shape()[1];
                    if self.needs(a) {
                        // dA = G @ B^T
                        let bvals = self.nodes[b.0].value.values().to_vec();
                        let ga = self.grad_slot(a);
                        for i in 0..n {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..m {
                                    acc += gout[i * m + j] * bvals[p * m + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    if self.needs(b) {
                        // dB = A^T @ G
                        let avals = self.nodes[a.0].value.values().to_vec();
                        let gb = self.grad_slot(b);
                        for p in 0..k {
                            for j in 0..m {
                                let mut acc = 0.0;
                                for i in 0..n {
                                    acc += avals[i * k + p] * gout[i * m + j];
                                }
                                gb[p * m + j] += acc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &p in &[a, b] {
                        if self.needs(p) {
                            let gp = self.grad_slot(p);
                            for (d, &g) in gp.iter_mut().zip(&gout) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for (d, &g) in ga.iter_mut().zip(&gout) {
                            *d += g;
                        }
                    }
                    if self.needs(b) {
                        let gb = self.grad_slot(b);
                        for (d, &g) in gb.iter_mut().zip(&gout) {
                            *d -= g;
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    let m = self.nodes[bias.0].value.len();
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for (d, &g) in ga.iter_mut().zip(&gout) {
                            *d += g;
                        }
                    }
                    if self.needs(bias) {
                        let gb = self.grad_slot(bias);
                        for (i, &g) in gout.iter().enumerate() {
                            gb[i % m] += g;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let bvals = self.nodes[b.0].value.values().to_vec();
                        let ga = self.grad_slot(a);
                        for ((d, &g), &bv) in ga.iter_mut().zip(&gout).zip(&bvals) {
                            *d += g * bv;
                        }
                    }
                    if self.needs(b) {
                        let avals = self.nodes[a.0].value.values().to_vec();
                        let gb = self.grad_slot(b);
                        for ((d, &g), &av) in gb.iter_mut().zip(&gout).zip(&avals) {
                            *d += g * av;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for (d, &g) in ga.iter_mut().zip(&gout) {
                            *d += g * c;
                        }
                    }
                }
                Op::AddConst(a) => {
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for (d, &g) in ga.iter_mut().zip(&gout) {
                            *d += g;
                        }
                    }
                }
                Op::Relu(a) => {
                    if self.needs(a) {
                        let avals = self.nodes[a.0].value.values().to_vec();
                        let ga = self.grad_slot(a);
                        for ((d, &g), &av) in ga.iter_mut().zip(&gout).zip(&avals) {
                            if av > 0.0 {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Exp(a) => {
                    if self.needs(a) {
                        let yvals = self.nodes[idx].value.values().to_vec();
                        let ga = self.grad_slot(a);
                        for ((d, &g), &y) in ga.iter_mut().zip(&gout).zip(&yvals) {
                            *d += g * y;
                        }
                    }
                }
                Op::Log(a) => {
                    if self.needs(a) {
                        let avals = self.nodes[a.0].value.values().to_vec();
                        let ga = self.grad_slot(a);
                        for ((d, &g), &av) in ga.iter_mut().zip(&gout).zip(&avals) {
                            *d += g / av;
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs(a) {
                        let g = gout[0];
                        let ga = self.grad_slot(a);
                        for d in ga.iter_mut() {
                            *d += g;
                        }
                    }
                }
                Op::Mean(a) => {
                    if self.needs(a) {
                        let n = self.nodes[a.0].value.len() as f64;
                        let g = gout[0] / n;
                        let ga = self.grad_slot(a);
                        for d in ga.iter_mut() {
                            *d += g;
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for (d, &g) in ga.iter_mut().zip(&gout[..na]) {
                            *d += g;
                        }
                    }
                    if self.needs(b) {
                        let gb = self.grad_slot(b);
                        for (d, &g) in gb.iter_mut().zip(&gout[na..]) {
                            *d += g;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, d1) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let d2 = self.nodes[b.0].value.shape()[1];
                    if self.needs(a) {
                        let ga = self.grad_slot(a);
                        for i in 0..n {
                            for j in 0..d1 {
                                ga[i * d1 + j] += gout[i * (d1 + d2) + j];
                            }
                        }
                    }
                    if self.needs(b) {
                        let gb = self.grad_slot(b);
                        for i in 0..n {
                            for j in 0..d2 {
                                gb[i * d2 + j] += gout[i * (d1 + d2) + d1 + j];
                            }
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                    seed_mask,
                } => {
                    if self.needs(logits) {
                        let (n, c) = {
                            let s = self.nodes[logits.0].value.shape();
                            (s[0], s[1])
                        };
                        let g = gout[0];
                        let gl = self.grad_slot(logits);
                        for i in 0..n {
                            for j in 0..c {
                                let mut seed = probs[i * c + j];
                                if j == targets[i] {
                                    seed -= 1.0;
                                }
                                seed *= g / n as f64;
                                if let Some(m) = &seed_mask {
                                    seed *= m[i * c + j];
                                }
                                if let Some(cm) = class_mask {
                                    seed *= cm[j];
                                }
                                gl[i * c + j] += seed;
                            }
                        }
                    }
                }
                Op::Distill {
                    student,
                    classes,
                    t,
                    student_probs,
                    teacher_probs,
                    seed_mask,
                } => {
                    if self.needs(student) {
                        let (n, c) = {
                            let s = self.nodes[student.0].value.shape();
                            (s[0], s[1])
                        };
                        let k = classes.len();
                        let g = gout[0];
                        let gs = self.grad_slot(student);
                        for i in 0..n {
                            for (jj, &class) in classes.iter().enumerate() {
                                let mut seed = (student_probs[i * k + jj]
                                    - teacher_probs[i * k + jj])
                                    / t
                                    * g
                                    / n as f64;
                                if let Some(m) = &seed_mask {
                                    seed *= m[i * c + class];
                                }
                                if let Some(cm) = class_mask {
                                    seed *= cm[class];
                                }
                                gs[i * c + class] += seed;
                            }
                        }
                    }
                }
                Op::GaussianSample { mu, logvar, eps } => {
                    if self.needs(mu) {
                        let gm = self.grad_slot(mu);
                        for (d, &g) in gm.iter_mut().zip(&gout) {
                            *d += g;
                        }
                    }
                    if self.needs(logvar) {
                        let lvals = self.nodes[logvar.0].value.values().to_vec();
                        let gl = self.grad_slot(logvar);
                        for ((d, &g), (&l, &e)) in
                            gl.iter_mut().zip(&gout).zip(lvals.iter().zip(&eps))
                        {
                            *d += g * 0.5 * (0.5 * l).exp() * e;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_slot(&mut self, id: NodeId) -> &mut Vec<f64> {
        let n = self.nodes[id.0].value.len();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; n])
    }
}
