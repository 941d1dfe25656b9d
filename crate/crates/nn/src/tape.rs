//! Reverse-mode autodiff on a linear tape of `f64` tensors.
//!
//! Every operation appends a node holding its (standard-layout) value and,
//! when any parent requires gradients, a closure that maps the node's output
//! gradient to per-parent gradient contributions. Parameters are leaf nodes
//! registered by name; `backward` walks the tape in reverse and returns the
//! accumulated gradient for every named parameter reachable from the loss.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Axis, Dimension, Ix2, IxDyn};
use rand::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type GradFn = Box<dyn Fn(&Tape, &ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to named parameters.
pub type Grads = BTreeMap<String, ArrayD<f64>>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    grad_enabled: bool,
}

/// Copies `a` into a new standard-layout array of the given shape,
/// following logical (row-major) element order.
pub(crate) fn reshape_std(a: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    assert_eq!(a.len(), n, "reshape: size mismatch {:?} -> {:?}", a.shape(), shape);
    ArrayD::from_shape_vec(IxDyn(shape), a.iter().cloned().collect()).expect("reshape")
}

/// Sums `g` down to `shape` (inverse of broadcasting `shape` up to `g`).
pub(crate) fn reduce_to_shape(g: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut out = g.to_owned();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if out.shape()[ax] != shape[ax] {
            debug_assert_eq!(shape[ax], 1, "reduce_to_shape: incompatible shapes");
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), grad_enabled: true }
    }

    /// Tape that records values only; `param` behaves like `input` and no
    /// backward closures are stored. Used for target-network forwards.
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Extracts the value of a scalar (zero-dim or single-element) node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        a.iter().copied().next().unwrap()
    }

    fn push_node(&mut self, value: ArrayD<f64>, parents: Vec<usize>, needs_grad: bool, grad_fn: Option<GradFn>) -> Var {
        // Every node value is standard layout so ops may use as_slice().
        let value = if value.is_standard_layout() { value } else { value.as_standard_layout().to_owned() };
        self.nodes.push(Node { value, parents, grad_fn, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node. `grad_fn` is only built when gradients can flow.
    pub(crate) fn push_op(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        grad_fn: impl FnOnce() -> GradFn,
    ) -> Var {
        let needs = self.grad_enabled && parents.iter().any(|&p| self.nodes[p].needs_grad);
        let f = if needs { Some(grad_fn()) } else { None };
        self.push_node(value, parents, needs, f)
    }

    /// Leaf with no gradient (network inputs, stop-gradient targets).
    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.push_node(value, Vec::new(), false, None)
    }

    /// Named parameter leaf. Repeated registrations of the same name on one
    /// tape return the same node, so gradients from every use accumulate.
    pub fn param(&mut self, name: &str, value: impl FnOnce() -> ArrayD<f64>) -> Var {
        if let Some(&idx) = self.params.get(name) {
            return Var(idx);
        }
        let v = self.push_node(value(), Vec::new(), self.grad_enabled, None);
        self.params.insert(name.to_string(), v.0);
        v
    }

    /// Reverse pass from a scalar loss. Returns gradients for every named
    /// parameter that the loss depends on.
    pub fn backward(&self, loss: Var) -> Grads {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        let root = self.value(loss);
        assert_eq!(root.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(ArrayD::ones(root.raw_dim()));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let Some(f) = &node.grad_fn else { continue };
            let g = grads[i].take().unwrap();
            let parent_grads = f(self, &g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p].needs_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape(), "gradient shape mismatch at node {p}");
                let pg = if pg.is_standard_layout() { pg } else { pg.as_standard_layout().to_owned() };
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut out = Grads::new();
        for (name, &idx) in &self.params {
            if idx <= loss.0 {
                if let Some(g) = grads[idx].take() {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }

    // ---- elementwise binary ops -------------------------------------------

    /// `a + b`; `b` may broadcast up to `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let b_shape = self.shape(b).to_vec();
        self.push_op(value, vec![a.0, b.0], || {
            Box::new(move |_t, g| vec![g.clone(), reduce_to_shape(g, &b_shape)])
        })
    }

    /// `a - b`; `b` may broadcast up to `a`'s shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let b_shape = self.shape(b).to_vec();
        self.push_op(value, vec![a.0, b.0], || {
            Box::new(move |_t, g| vec![g.clone(), -reduce_to_shape(g, &b_shape)])
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        self.push_op(value, vec![a.0], || Box::new(move |_t, g| vec![g.mapv(|x| x * c)]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x + c);
        self.push_op(value, vec![a.0], || Box::new(move |_t, g| vec![g.clone()]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    // ---- matrix products ---------------------------------------------------

    /// 2-D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.nodes[a.0].value.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let bv = self.nodes[b.0].value.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
        let value = av.dot(&bv).into_dyn();
        self.push_op(value, vec![a.0, b.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = t.nodes[a.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let bv = t.nodes[b.0].value.view().into_dimensionality::<Ix2>().unwrap();
                let da = gv.dot(&bv.t()).into_dyn();
                let db = av.t().dot(&gv).into_dyn();
                vec![da, db]
            })
        })
    }

    /// Batched matrix product `(B,m,k) x (B,k,n) -> (B,m,n)`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        assert_eq!(ash.len(), 3, "bmm lhs must be 3-D");
        assert_eq!(bsh.len(), 3, "bmm rhs must be 3-D");
        assert_eq!(ash[0], bsh[0], "bmm batch mismatch");
        assert_eq!(ash[2], bsh[1], "bmm inner-dim mismatch");
        let (bt, m, n) = (ash[0], ash[1], bsh[2]);
        let mut value = ArrayD::zeros(IxDyn(&[bt, m, n]));
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..bt {
                let ai = av.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap().to_owned();
                let bi = bv.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap().to_owned();
                value.index_axis_mut(Axis(0), i).assign(&ai.dot(&bi));
            }
        }
        self.push_op(value, vec![a.0, b.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let av = &t.nodes[a.0].value;
                let bv = &t.nodes[b.0].value;
                let mut da = ArrayD::zeros(av.raw_dim());
                let mut db = ArrayD::zeros(bv.raw_dim());
                for i in 0..g.shape()[0] {
                    let gi = g.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap().to_owned();
                    let ai = av.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap().to_owned();
                    let bi = bv.index_axis(Axis(0), i).into_dimensionality::<Ix2>().unwrap().to_owned();
                    da.index_axis_mut(Axis(0), i).assign(&gi.dot(&bi.t()));
                    db.index_axis_mut(Axis(0), i).assign(&ai.t().dot(&gi));
                }
                vec![da, db]
            })
        })
    }

    // ---- activations -------------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push_op(value, vec![a.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let x = &t.nodes[a.0].value;
                let mut d = g.clone();
                d.zip_mut_with(x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                vec![d]
            })
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let out = value.clone();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut d = g.clone();
                d.zip_mut_with(&out, |gi, &yi| *gi *= yi * (1.0 - yi));
                vec![d]
            })
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        let out = value.clone();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut d = g.clone();
                d.zip_mut_with(&out, |gi, &yi| *gi *= 1.0 - yi * yi);
                vec![d]
            })
        })
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let value = self.nodes[a.0].value.mapv(|x| {
            let u = C * (x + A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push_op(value, vec![a.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let x = &t.nodes[a.0].value;
                let mut d = g.clone();
                d.zip_mut_with(x, |gi, &xi| {
                    let u = C * (xi + A * xi * xi * xi);
                    let th = u.tanh();
                    let sech2 = 1.0 - th * th;
                    let du = C * (1.0 + 3.0 * A * xi * xi);
                    *gi *= 0.5 * (1.0 + th) + 0.5 * xi * sech2 * du;
                });
                vec![d]
            })
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let last = x.ndim() - 1;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let out = value.clone();
        let _ = last;
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot: f64 = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for (di, &yi) in drow.iter_mut().zip(yrow.iter()) {
                        *di = yi * (*di - dot);
                    }
                }
                vec![d]
            })
        })
    }

    // ---- shape ops ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = reshape_std(&self.nodes[a.0].value, shape);
        let src_shape = self.shape(a).to_vec();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| vec![reshape_std(g, &src_shape)])
        })
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let value = self.nodes[a.0].value.view().permuted_axes(perm.to_vec()).to_owned();
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| vec![g.view().permuted_axes(inv.clone()).to_owned()])
        })
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
        let lens: Vec<usize> = parts.iter().map(|v| self.shape(*v)[axis]).collect();
        let parents: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push_op(value, parents, || {
            Box::new(move |_t, g| {
                let mut out = Vec::with_capacity(lens.len());
                let mut start = 0;
                for &l in &lens {
                    let sl = g
                        .slice_each_axis(|ad| {
                            if ad.axis.index() == axis {
                                ndarray::Slice::from(start as isize..(start + l) as isize)
                            } else {
                                ndarray::Slice::from(..)
                            }
                        })
                        .to_owned();
                    out.push(sl);
                    start += l;
                }
                out
            })
        })
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self.nodes[a.0]
            .value
            .slice_each_axis(|ad| {
                if ad.axis.index() == axis {
                    ndarray::Slice::from(start as isize..(start + len) as isize)
                } else {
                    ndarray::Slice::from(..)
                }
            })
            .to_owned();
        let src_shape = self.shape(a).to_vec();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut out = ArrayD::zeros(IxDyn(&src_shape));
                out.slice_each_axis_mut(|ad| {
                    if ad.axis.index() == axis {
                        ndarray::Slice::from(start as isize..(start + len) as isize)
                    } else {
                        ndarray::Slice::from(..)
                    }
                })
                .assign(g);
                vec![out]
            })
        })
    }

    pub fn flip(&mut self, a: Var, axis: usize) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        value.invert_axis(Axis(axis));
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut d = g.clone();
                d.invert_axis(Axis(axis));
                vec![d]
            })
        })
    }

    // ---- reductions --------------------------------------------------------

    /// Mean over the given axes (removed from the output shape).
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let src_shape = self.shape(a).to_vec();
        let count: usize = sorted.iter().map(|&ax| src_shape[ax]).product();
        let mut value = self.nodes[a.0].value.clone();
        for &ax in sorted.iter().rev() {
            value = value.sum_axis(Axis(ax));
        }
        value.mapv_inplace(|x| x / count as f64);
        let sorted_b = sorted.clone();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut gx = g.clone();
                for &ax in sorted_b.iter() {
                    gx = gx.insert_axis(Axis(ax));
                }
                let gx = gx
                    .broadcast(IxDyn(&src_shape))
                    .expect("mean_axes broadcast")
                    .to_owned()
                    .mapv(|x| x / count as f64);
                vec![gx]
            })
        })
    }

    /// Max over one axis (removed from the output shape); ties resolve to the
    /// lowest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Var {
        let x = &self.nodes[a.0].value;
        let value = x.map_axis(Axis(axis), |lane| lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let argmax = x.map_axis(Axis(axis), |lane| {
            let mut best = 0usize;
            let mut bv = f64::NEG_INFINITY;
            for (i, &v) in lane.iter().enumerate() {
                if v > bv {
                    bv = v;
                    best = i;
                }
            }
            best
        });
        let src_shape = self.shape(a).to_vec();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let mut out = ArrayD::zeros(IxDyn(&src_shape));
                for (idx, &gi) in g.indexed_iter() {
                    let mut full: Vec<usize> = idx.slice().to_vec();
                    full.insert(axis, argmax[idx.slice()]);
                    out[IxDyn(&full)] += gi;
                }
                vec![out]
            })
        })
    }

    /// Mean over all elements; returns a zero-dim scalar node.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let m = self.nodes[a.0].value.sum() / n as f64;
        let value = ArrayD::from_elem(IxDyn(&[]), m);
        let src_shape = self.shape(a).to_vec();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let gi = g.iter().next().copied().unwrap() / n as f64;
                vec![ArrayD::from_elem(IxDyn(&src_shape), gi)]
            })
        })
    }

    /// Sum over all elements; returns a zero-dim scalar node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s);
        let src_shape = self.shape(a).to_vec();
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| {
                let gi = g.iter().next().copied().unwrap();
                vec![ArrayD::from_elem(IxDyn(&src_shape), gi)]
            })
        })
    }

    // ---- regularizers and losses -------------------------------------------

    /// Inverted dropout with keep-scale `1/(1-p)`. Caller decides train/eval;
    /// in eval mode simply do not call this.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut (impl Rng + ?Sized)) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p in [0,1)");
        if p == 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let mask = self.nodes[a.0].value.mapv(|_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                1.0 / keep
            }
        });
        let value = &self.nodes[a.0].value * &mask;
        self.push_op(value, vec![a.0], || {
            Box::new(move |_t, g| vec![g * &mask])
        })
    }

    /// Rows (last axis) scaled to unit L2 norm: `y = x / (||x|| + eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        let mut norms = Vec::new();
        for mut row in value.rows_mut() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            row.mapv_inplace(|v| v / (n + eps));
        }
        self.push_op(value, vec![a.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let x = &t.nodes[a.0].value;
                let mut d = g.clone();
                for ((mut drow, xrow), &n) in d.rows_mut().into_iter().zip(x.rows()).zip(norms.iter()) {
                    let denom = n + eps;
                    let dot: f64 = drow.iter().zip(xrow.iter()).map(|(a, b)| a * b).sum();
                    let coef = if n > 1e-300 { dot / (n * denom * denom) } else { 0.0 };
                    for (di, &xi) in drow.iter_mut().zip(xrow.iter()) {
                        *di = *di / denom - coef * xi;
                    }
                }
                vec![d]
            })
        })
    }

    /// Mean over every element of the squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul_same(d, d);
        self.mean_all(sq)
    }

    /// Elementwise product of two same-shape vars (also valid for `a == b`).
    pub fn mul_same(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul_same shape mismatch");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push_op(value, vec![a.0, b.0], || {
            Box::new(move |t: &Tape, g: &ArrayD<f64>| {
                let da = g * &t.nodes[b.0].value;
                let db = g * &t.nodes[a.0].value;
                vec![da, db]
            })
        })
    }
}
