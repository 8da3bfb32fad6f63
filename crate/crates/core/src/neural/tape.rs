//! Reverse-mode differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! through [`Graph::param`]; [`Graph::backward`] accumulates their gradients
//! into the [`ParamStore`] they came from. Rows are batch items throughout.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Which optimizer owns a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Policy,
    Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Array2<f64>,
    /// Same shape as `value` whenever present.
    pub grad: Option<Array2<f64>>,
}

impl Tensor {
    pub fn new(value: Array2<f64>) -> Self {
        Tensor { value, grad: None }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<Group>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: Group, value: Array2<f64>) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.groups.push(group);
        self.tensors.push(Tensor::new(value));
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn group_ids(&self, group: Group) -> Vec<ParamId> {
        self.ids().filter(|id| self.groups[id.0] == group).collect()
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.groups[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0].value
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Order-sensitive FNV-1a hash of all parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            for x in t.value.iter() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.iter().all(|x| x.is_finite()))
    }
}

/// Row source for [`Graph::lookup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Fixed row taken as a constant.
    Fixed,
    /// The shared learnable out-of-vocabulary row.
    Oov,
    /// All zeros.
    Pad,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Gather(Var, Vec<Vec<Option<usize>>>),
    Lookup(Var, Vec<Slot>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SumAll(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn broadcast_ok(a: (usize, usize), b: (usize, usize)) -> bool {
    (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A constant copy of `v`: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node { value: store.value(id).clone(), op: Op::Leaf, param: Some(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    /// Elementwise sum; `b` may broadcast along rows and/or columns.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(broadcast_ok(sa, sb), "add: cannot broadcast {sb:?} onto {sa:?}");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(broadcast_ok(sa, sb), "mul: cannot broadcast {sb:?} onto {sa:?}");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Output row `r` concatenates the input rows `index[r][..]`; `None`
    /// contributes a zero block. All index rows must have the same length.
    pub fn gather(&mut self, a: Var, index: Vec<Vec<Option<usize>>>) -> Var {
        let width = index.first().map_or(0, Vec::len);
        let c = self.shape(a).1;
        let src = self.value(a);
        let mut out = Array2::zeros((index.len(), width * c));
        for (r, row) in index.iter().enumerate() {
            assert_eq!(row.len(), width, "gather: ragged index");
            for (j, &i) in row.iter().enumerate() {
                if let Some(i) = i {
                    out.slice_mut(s![r, j * c..(j + 1) * c]).assign(&src.row(i));
                }
            }
        }
        self.push(out, Op::Gather(a, index))
    }

    /// Rows from a fixed table (already laid out in `fixed`), the learnable
    /// `oov` row, or zeros, according to `slots`.
    pub fn lookup(&mut self, fixed: Array2<f64>, oov: Var, slots: Vec<Slot>) -> Var {
        assert_eq!(fixed.nrows(), slots.len());
        let mut value = fixed;
        let oov_row = self.value(oov).row(0).to_owned();
        for (r, slot) in slots.iter().enumerate() {
            match slot {
                Slot::Fixed => {}
                Slot::Oov => value.row_mut(r).assign(&oov_row),
                Slot::Pad => value.row_mut(r).fill(0.0),
            }
        }
        self.push(value, Op::Lookup(oov, slots))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("mean of zero rows").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Column-wise maximum; ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(x.nrows() > 0, "max over zero rows");
        let mut arg = vec![0usize; x.ncols()];
        let mut out = Array2::zeros((1, x.ncols()));
        for c in 0..x.ncols() {
            let mut best = x[[0, c]];
            for r in 1..x.nrows() {
                if x[[r, c]] > best {
                    best = x[[r, c]];
                    arg[c] = r;
                }
            }
            out[[0, c]] = best;
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Sum of the selected entries, as a 1×1 value.
    pub fn pick(&mut self, a: Var, at: Vec<(usize, usize)>) -> Var {
        let x = self.value(a);
        let total: f64 = at.iter().map(|&(r, c)| x[[r, c]]).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Pick(a, at))
    }

    /// Backpropagates from the scalar `root` and adds parameter gradients
    /// into `store`.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let root_val = self.scalar(root);
        if !root_val.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        let t = store.get_mut(id);
                        match &mut t.grad {
                            Some(x) => *x += &g,
                            slot => *slot = Some(g),
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: dA = g b, dB = gᵀ a
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let gb = reduce_to(&g, self.shape(*b));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = reduce_to(&(&g * self.value(*a)), self.shape(*b));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| *d /= x);
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g * &node.value;
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, index) => {
                    let c = self.shape(*a).1;
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, row) in index.iter().enumerate() {
                        for (j, &src) in row.iter().enumerate() {
                            if let Some(src) = src {
                                let block = g.slice(s![r, j * c..(j + 1) * c]);
                                let mut dst = ga.row_mut(src);
                                dst += &block;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Lookup(oov, slots) => {
                    let mut go = Array2::zeros(self.shape(*oov));
                    let mut any = false;
                    for (r, slot) in slots.iter().enumerate() {
                        if *slot == Slot::Oov {
                            let mut dst = go.row_mut(0);
                            dst += &g.row(r);
                            any = true;
                        }
                    }
                    if any {
                        acc(&mut grads, *oov, go);
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.shape(*a).0 as f64;
                    let ga = Array2::from_shape_fn(self.shape(*a), |(_, c)| g[[0, c]] / n);
                    acc(&mut grads, *a, ga);
                }
                Op::MaxRows(a, arg) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (c, &r) in arg.iter().enumerate() {
                        ga[[r, c]] = g[[0, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(node.value.rows()) {
                        let total: f64 = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|d, &y| *d -= y.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Pick(a, at) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for &(r, c) in at {
                        ga[[r, c]] += g[[0, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)` over single entries.
    pub max_entry: f64,
    /// Per tensor, `||g_a - g_n|| / max(1e-8, ||g_a|| + ||g_n||)`.
    pub tensors: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn max_tensor(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(0.0, f64::max)
    }
}

/// Central-difference check of every entry of `ids`.
///
/// `loss` rebuilds the forward graph from the store and returns the scalar
/// loss node. Returns the largest `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn grad_check(
    store: &mut ParamStore,
    ids: &[ParamId],
    epsilon: f64,
    loss: impl FnMut(&ParamStore) -> Result<(Graph, Var)>,
) -> Result<f64> {
    Ok(grad_check_report(store, ids, epsilon, loss)?.max_entry)
}

/// [`grad_check`] with per-tensor errors as well. Entries whose true
/// gradient is far below the loss's rounding noise divided by `epsilon` can
/// fail the per-entry ratio even when exact; the tensor norm is not
/// dominated by them.
pub fn grad_check_report(
    store: &mut ParamStore,
    ids: &[ParamId],
    epsilon: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<(Graph, Var)>,
) -> Result<GradCheck> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::invalid("epsilon must lie in [1e-6, 1e-3]"));
    }
    store.zero_grad();
    let (g, root) = loss(store)?;
    if !g.scalar(root).is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    g.backward(root, store)?;
    let mut worst: f64 = 0.0;
    let mut tensors = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = store.get(id).grad.clone().unwrap_or_else(|| Array2::zeros(store.get(id).shape()));
        let (rows, cols) = store.get(id).shape();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for r in 0..rows {
            for c in 0..cols {
                let orig = store.get(id).value[[r, c]];
                store.get_mut(id).value[[r, c]] = orig + epsilon;
                let (gp, vp) = loss(store)?;
                let fp = gp.scalar(vp);
                store.get_mut(id).value[[r, c]] = orig - epsilon;
                let (gm, vm) = loss(store)?;
                let fm = gm.scalar(vm);
                store.get_mut(id).value[[r, c]] = orig;
                if !fp.is_finite() || !fm.is_finite() {
                    return Err(Error::NonFinite("perturbed loss".into()));
                }
                let numeric = (fp - fm) / (2.0 * epsilon);
                let a = analytic[[r, c]];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
                diff2 += (a - numeric).powi(2);
                a2 += a * a;
                n2 += numeric * numeric;
            }
        }
        let rel = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-8);
        tensors.push((store.name(id).to_string(), rel));
    }
    store.zero_grad();
    Ok(GradCheck { max_entry: worst, tensors })
}
