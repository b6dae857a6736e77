//! Reverse-mode tape: each [`Tensor`] is a graph node with a value, an
//! accumulated gradient, and a backward closure that scatters gradient into
//! its parents. Graphs are rebuilt per step and dropped after `backward`.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array2, Axis};

use super::math;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn = Box<dyn Fn(&Array2<f64>)>;

struct Inner {
    id: usize,
    value: RefCell<Array2<f64>>,
    grad: RefCell<Option<Array2<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    needs_grad: bool,
}

/// A node in the computation graph. Cloning is cheap (shared reference).
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    fn new(value: Array2<f64>, parents: Vec<Tensor>, backward: Option<BackwardFn>, needs_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents,
            backward,
            needs_grad,
        }))
    }

    /// A trainable leaf.
    pub fn param(value: Array2<f64>) -> Self {
        Tensor::new(value, vec![], None, true)
    }

    /// A non-trainable leaf (inputs, masks, targets).
    pub fn constant(value: Array2<f64>) -> Self {
        Tensor::new(value, vec![], None, false)
    }

    fn from_op(value: Array2<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        let needs_grad = parents.iter().any(|p| p.needs_grad());
        if needs_grad {
            Tensor::new(value, parents, Some(backward), true)
        } else {
            Tensor::new(value, vec![], None, false)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub fn value(&self) -> Ref<'_, Array2<f64>> {
        self.0.value.borrow()
    }

    pub fn shape(&self) -> (usize, usize) {
        let v = self.value();
        (v.nrows(), v.ncols())
    }

    /// The value of a 1 x 1 tensor.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar tensor");
        v[[0, 0]]
    }

    /// In-place value mutation, used by the optimizer between steps.
    pub fn update_value(&self, f: impl FnOnce(&mut Array2<f64>)) {
        f(&mut self.0.value.borrow_mut());
    }

    pub fn accum_grad(&self, delta: Array2<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => *g += &delta,
            None => *slot = Some(delta),
        }
    }

    /// Removes and returns the accumulated gradient.
    pub fn take_grad(&self) -> Option<Array2<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn grad(&self) -> Option<Array2<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    // ---- binary elementwise -------------------------------------------------

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let value = &*self.value() + &*other.value();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(value, vec![self.clone(), other.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.clone());
            }
            if b.needs_grad() {
                b.accum_grad(g.clone());
            }
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let value = &*self.value() - &*other.value();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(value, vec![self.clone(), other.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.clone());
            }
            if b.needs_grad() {
                b.accum_grad(-g);
            }
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let value = &*self.value() * &*other.value();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(value, vec![self.clone(), other.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &*b.value());
            }
            if b.needs_grad() {
                b.accum_grad(g * &*a.value());
            }
        }))
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "div: shape mismatch");
        let value = &*self.value() / &*other.value();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(value, vec![self.clone(), other.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g / &*b.value());
            }
            if b.needs_grad() {
                let bv = b.value();
                b.accum_grad(-(g * &*a.value()) / (&*bv * &*bv));
            }
        }))
    }

    /// Adds a 1 x m row vector to every row of an n x m matrix.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        let (n, m) = self.shape();
        assert_eq!(row.shape(), (1, m), "add_row: row must be 1 x {m}");
        let mut value = self.value().clone();
        {
            let r = row.value();
            for mut vr in value.rows_mut() {
                for (j, v) in vr.iter_mut().enumerate() {
                    *v += r[[0, j]];
                }
            }
        }
        let _ = n;
        let (a, b) = (self.clone(), row.clone());
        Tensor::from_op(value, vec![self.clone(), row.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.clone());
            }
            if b.needs_grad() {
                b.accum_grad(g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
        }))
    }

    // ---- scalar-parameter ops -----------------------------------------------

    pub fn scale(&self, c: f64) -> Tensor {
        let value = self.value().mapv(|v| v * c);
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.mapv(|v| v * c));
            }
        }))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = self.value().mapv(|v| v + c);
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.clone());
            }
        }))
    }

    // ---- unary elementwise ----------------------------------------------------

    pub fn relu(&self) -> Tensor {
        let value = self.value().mapv(|v| v.max(0.0));
        let a = self.clone();
        let active = self.value().mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &active);
            }
        }))
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = math::sigmoid_array(&self.value());
        let a = self.clone();
        let saved = value.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &(&saved * &saved.mapv(|y| 1.0 - y)));
            }
        }))
    }

    pub fn ln(&self) -> Tensor {
        let value = self.value().mapv(f64::ln);
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g / &*a.value());
            }
        }))
    }

    pub fn exp(&self) -> Tensor {
        let value = self.value().mapv(f64::exp);
        let a = self.clone();
        let saved = value.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &saved);
            }
        }))
    }

    pub fn abs(&self) -> Tensor {
        let value = self.value().mapv(f64::abs);
        let a = self.clone();
        let sign = self.value().mapv(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &sign);
            }
        }))
    }

    /// Clamps values to `[lo, hi]`; gradient passes only through the interior.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let value = self.value().mapv(|v| v.clamp(lo, hi));
        let a = self.clone();
        let interior = self
            .value()
            .mapv(|v| if v > lo && v < hi { 1.0 } else { 0.0 });
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g * &interior);
            }
        }))
    }

    // ---- structural -----------------------------------------------------------

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (_, k) = self.shape();
        let (k2, _) = other.shape();
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let value = self.value().dot(&*other.value());
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(value, vec![self.clone(), other.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.dot(&b.value().t()));
            }
            if b.needs_grad() {
                b.accum_grad(a.value().t().dot(g));
            }
        }))
    }

    pub fn transpose(&self) -> Tensor {
        let value = self.value().t().to_owned();
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                a.accum_grad(g.t().to_owned());
            }
        }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        let (n, m) = self.shape();
        assert!(start + len <= n, "slice_rows out of range");
        let value = self.value().slice(s![start..start + len, ..]).to_owned();
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let mut full = Array2::zeros((n, m));
                full.slice_mut(s![start..start + len, ..]).assign(g);
                a.accum_grad(full);
            }
        }))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let (n, m) = self.shape();
        assert!(start + len <= m, "slice_cols out of range");
        let value = self.value().slice(s![.., start..start + len]).to_owned();
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let mut full = Array2::zeros((n, m));
                full.slice_mut(s![.., start..start + len]).assign(g);
                a.accum_grad(full);
            }
        }))
    }

    pub fn sum_all(&self) -> Tensor {
        let (n, m) = self.shape();
        let total = self.value().sum();
        let a = self.clone();
        Tensor::from_op(
            Array2::from_elem((1, 1), total),
            vec![self.clone()],
            Box::new(move |g| {
                if a.needs_grad() {
                    a.accum_grad(Array2::from_elem((n, m), g[[0, 0]]));
                }
            }),
        )
    }

    /// Column sums: n x m -> 1 x m.
    pub fn sum_axis0(&self) -> Tensor {
        let (n, _) = self.shape();
        let value = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let row = g.row(0).to_owned();
                let mut full = Array2::zeros((n, row.len()));
                for mut r in full.rows_mut() {
                    r.assign(&row);
                }
                a.accum_grad(full);
            }
        }))
    }

    /// Row sums: n x m -> n x 1.
    pub fn sum_axis1(&self) -> Tensor {
        let (_, m) = self.shape();
        let value = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let col = g.column(0).to_owned();
                let n = col.len();
                let mut full = Array2::zeros((n, m));
                for (i, mut r) in full.rows_mut().into_iter().enumerate() {
                    r.fill(col[i]);
                }
                a.accum_grad(full);
            }
        }))
    }

    /// Extracts one entry as a 1 x 1 tensor.
    pub fn select(&self, i: usize, j: usize) -> Tensor {
        let (n, m) = self.shape();
        assert!(i < n && j < m, "select out of range");
        let value = Array2::from_elem((1, 1), self.value()[[i, j]]);
        let a = self.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let mut full = Array2::zeros((n, m));
                full[[i, j]] = g[[0, 0]];
                a.accum_grad(full);
            }
        }))
    }

    /// Lower-triangular row-wise softmax (causal attention weights).
    pub fn causal_softmax(&self) -> Tensor {
        let value = math::causal_softmax(&self.value());
        let a = self.clone();
        let saved = value.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let n = saved.nrows();
                let mut out = Array2::zeros((n, n));
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..=i {
                        dot += g[[i, j]] * saved[[i, j]];
                    }
                    for j in 0..=i {
                        out[[i, j]] = saved[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                a.accum_grad(out);
            }
        }))
    }

    /// Full row-wise softmax.
    pub fn softmax_rows(&self) -> Tensor {
        let value = math::softmax_rows(&self.value());
        let a = self.clone();
        let saved = value.clone();
        Tensor::from_op(value, vec![self.clone()], Box::new(move |g| {
            if a.needs_grad() {
                let (n, m) = saved.dim();
                let mut out = Array2::zeros((n, m));
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..m {
                        dot += g[[i, j]] * saved[[i, j]];
                    }
                    for j in 0..m {
                        out[[i, j]] = saved[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                a.accum_grad(out);
            }
        }))
    }
}

/// Per-row standardization with learned gain and bias (both 1 x m).
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
    let (_, m) = x.shape();
    assert_eq!(gain.shape(), (1, m), "layer_norm: gain must be 1 x {m}");
    assert_eq!(bias.shape(), (1, m), "layer_norm: bias must be 1 x {m}");
    let (value, xhat, inv_std) = math::layer_norm(&x.value(), &gain.value(), &bias.value(), eps);
    let (xt, gt, bt) = (x.clone(), gain.clone(), bias.clone());
    Tensor::from_op(
        value,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let (n, m) = xhat.dim();
            let mf = m as f64;
            if xt.needs_grad() {
                let gv = gt.value();
                let mut dx = Array2::zeros((n, m));
                for i in 0..n {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..m {
                        let dxh = g[[i, j]] * gv[[0, j]];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[[i, j]];
                    }
                    mean_dxhat /= mf;
                    mean_dxhat_xhat /= mf;
                    for j in 0..m {
                        let dxh = g[[i, j]] * gv[[0, j]];
                        dx[[i, j]] = (dxh - mean_dxhat - xhat[[i, j]] * mean_dxhat_xhat) * inv_std[i];
                    }
                }
                xt.accum_grad(dx);
            }
            if gt.needs_grad() {
                gt.accum_grad((g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            if bt.needs_grad() {
                bt.accum_grad(g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
        }),
    )
}

/// Softened minimum over an n x 1 column, returned as 1 x 1.
pub fn softmin(x: &Tensor, tau: f64) -> Tensor {
    let (n, m) = x.shape();
    assert_eq!(m, 1, "softmin expects a column vector");
    let vals: Vec<f64> = x.value().column(0).to_vec();
    let (value, grad) = math::softmin(&vals, tau);
    let a = x.clone();
    Tensor::from_op(
        Array2::from_elem((1, 1), value),
        vec![x.clone()],
        Box::new(move |g| {
            if a.needs_grad() {
                let mut dx = Array2::zeros((n, 1));
                for (i, w) in grad.iter().enumerate() {
                    dx[[i, 0]] = g[[0, 0]] * w;
                }
                a.accum_grad(dx);
            }
        }),
    )
}

/// Vertical concatenation.
pub fn concat_rows(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let m = parts[0].shape().1;
    let total: usize = parts.iter().map(|p| p.shape().0).sum();
    let mut value = Array2::zeros((total, m));
    let mut offset = 0;
    for p in parts {
        let (n, pm) = p.shape();
        assert_eq!(pm, m, "concat_rows: column counts differ");
        value.slice_mut(s![offset..offset + n, ..]).assign(&*p.value());
        offset += n;
    }
    let owned: Vec<Tensor> = parts.to_vec();
    let spans: Vec<(usize, usize)> = {
        let mut acc = Vec::new();
        let mut off = 0;
        for p in parts {
            let n = p.shape().0;
            acc.push((off, n));
            off += n;
        }
        acc
    };
    let captured = owned.clone();
    Tensor::from_op(value, owned, Box::new(move |g| {
        for (p, &(off, n)) in captured.iter().zip(&spans) {
            if p.needs_grad() {
                p.accum_grad(g.slice(s![off..off + n, ..]).to_owned());
            }
        }
    }))
}

/// Horizontal concatenation.
pub fn concat_cols(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let n = parts[0].shape().0;
    let total: usize = parts.iter().map(|p| p.shape().1).sum();
    let mut value = Array2::zeros((n, total));
    let mut offset = 0;
    for p in parts {
        let (pn, m) = p.shape();
        assert_eq!(pn, n, "concat_cols: row counts differ");
        value.slice_mut(s![.., offset..offset + m]).assign(&*p.value());
        offset += m;
    }
    let owned: Vec<Tensor> = parts.to_vec();
    let spans: Vec<(usize, usize)> = {
        let mut acc = Vec::new();
        let mut off = 0;
        for p in parts {
            let m = p.shape().1;
            acc.push((off, m));
            off += m;
        }
        acc
    };
    let captured = owned.clone();
    Tensor::from_op(value, owned, Box::new(move |g| {
        for (p, &(off, m)) in captured.iter().zip(&spans) {
            if p.needs_grad() {
                p.accum_grad(g.slice(s![.., off..off + m]).to_owned());
            }
        }
    }))
}

/// Runs the backward pass from a scalar loss, accumulating gradients into
/// every reachable tensor that needs them.
pub fn backward(loss: &Tensor) {
    assert_eq!(loss.shape(), (1, 1), "backward expects a scalar loss");
    let mut topo: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    // Iterative postorder DFS; reversed postorder processes consumers first.
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id());
    while let Some((node, child)) = stack.pop() {
        if child < node.0.parents.len() {
            let parent = node.0.parents[child].clone();
            stack.push((node, child + 1));
            if parent.needs_grad() && visited.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            topo.push(node);
        }
    }
    loss.accum_grad(Array2::from_elem((1, 1), 1.0));
    for node in topo.iter().rev() {
        if let Some(f) = &node.0.backward {
            let g = node.0.grad.borrow().clone();
            if let Some(g) = g {
                f(&g);
            }
        }
    }
}
