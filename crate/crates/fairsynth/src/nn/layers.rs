//! Trainable layers with a tape forward for training and a plain-array
//! forward for sampling and evaluation. Both paths share the math in
//! [`super::math`].

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::math;
use super::tape::{concat_cols, layer_norm, Tensor};

/// Dense affine map; weight is `in x out`, bias is `1 x out`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid normal");
        Linear {
            w: Tensor::param(Array2::from_shape_fn((d_in, d_out), |_| dist.sample(rng))),
            b: Tensor::param(Array2::zeros((1, d_out))),
        }
    }

    /// All-zero initialization; used for output heads that must start at
    /// probability one half.
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            w: Tensor::param(Array2::zeros((d_in, d_out))),
            b: Tensor::param(Array2::zeros((1, d_out))),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.w).add_row(&self.b)
    }

    pub fn forward_plain(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&*self.w.value());
        let b = self.b.value();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += b[[0, j]];
            }
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.w.clone(), self.b.clone()]
    }
}

/// Per-row standardization with learned affine parameters.
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(Array2::from_elem((1, dim), 1.0)),
            bias: Tensor::param(Array2::zeros((1, dim))),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        layer_norm(x, &self.gain, &self.bias, self.eps)
    }

    pub fn forward_plain(&self, x: &Array2<f64>) -> Array2<f64> {
        math::layer_norm(x, &self.gain.value(), &self.bias.value(), self.eps).0
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.gain.clone(), self.bias.clone()]
    }
}

/// Multi-head self-attention. With `causal` set, position `t` attends only
/// to positions `0..=t` via a lower-triangular softmax.
pub struct SelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub causal: bool,
}

impl SelfAttention {
    pub fn new(dim: usize, n_heads: usize, causal: bool, std: f64, rng: &mut impl Rng) -> Self {
        assert!(dim % n_heads == 0, "embed dim must divide evenly into heads");
        SelfAttention {
            wq: Linear::new(dim, dim, std, rng),
            wk: Linear::new(dim, dim, std, rng),
            wv: Linear::new(dim, dim, std, rng),
            wo: Linear::new(dim, dim, std, rng),
            n_heads,
            causal,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (_, dim) = x.shape();
        let dk = dim / self.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.slice_cols(h * dk, dk);
            let kh = k.slice_cols(h * dk, dk);
            let vh = v.slice_cols(h * dk, dk);
            let scores = qh.matmul(&kh.transpose()).scale(scale);
            let weights = if self.causal {
                scores.causal_softmax()
            } else {
                scores.softmax_rows()
            };
            heads.push(weights.matmul(&vh));
        }
        self.wo.forward(&concat_cols(&heads))
    }

    pub fn forward_plain(&self, x: &Array2<f64>) -> Array2<f64> {
        let (t, dim) = x.dim();
        let dk = dim / self.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward_plain(x);
        let k = self.wk.forward_plain(x);
        let v = self.wv.forward_plain(x);
        let mut merged = Array2::zeros((t, dim));
        for h in 0..self.n_heads {
            let cols = ndarray::s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols).to_owned();
            let kh = k.slice(cols).to_owned();
            let vh = v.slice(cols).to_owned();
            let scores = qh.dot(&kh.t()) * scale;
            let weights = if self.causal {
                math::causal_softmax(&scores)
            } else {
                math::softmax_rows(&scores)
            };
            merged.slice_mut(cols).assign(&weights.dot(&vh));
        }
        self.wo.forward_plain(&merged)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.wq.params();
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p
    }
}

/// Transformer decoder block: attention with a residual connection, a
/// normalization, a two-layer feed-forward with a residual connection, and a
/// final normalization.
pub struct DecoderBlock {
    pub attn: SelfAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl DecoderBlock {
    pub fn new(dim: usize, n_heads: usize, causal: bool, std: f64, rng: &mut impl Rng) -> Self {
        DecoderBlock {
            attn: SelfAttention::new(dim, n_heads, causal, std, rng),
            ln1: LayerNorm::new(dim),
            ff1: Linear::new(dim, 4 * dim, std, rng),
            ff2: Linear::new(4 * dim, dim, std, rng),
            ln2: LayerNorm::new(dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h1 = x.add(&self.attn.forward(x));
        let h2 = self.ln1.forward(&h1);
        let ff = self.ff2.forward(&self.ff1.forward(&h2).relu());
        let h3 = h2.add(&ff);
        self.ln2.forward(&h3)
    }

    pub fn forward_plain(&self, x: &Array2<f64>) -> Array2<f64> {
        let h1 = x + &self.attn.forward_plain(x);
        let h2 = self.ln1.forward_plain(&h1);
        let ff = self
            .ff2
            .forward_plain(&self.ff1.forward_plain(&h2).mapv(|v| v.max(0.0)));
        let h3 = &h2 + &ff;
        self.ln2.forward_plain(&h3)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.attn.params();
        p.extend(self.ln1.params());
        p.extend(self.ff1.params());
        p.extend(self.ff2.params());
        p.extend(self.ln2.params());
        p
    }
}
