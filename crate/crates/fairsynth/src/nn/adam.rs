//! Adam optimizer over tape parameters.

use ndarray::Array2;

use super::tape::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let m = params
            .iter()
            .map(|p| {
                let (n, k) = p.shape();
                Array2::zeros((n, k))
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    /// Applies one update. Gradients are consumed (reset to empty), so the
    /// next forward pass starts clean. Parameters without an accumulated
    /// gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, p) in params.iter().enumerate() {
            let grad = match p.take_grad() {
                Some(g) => g,
                None => continue,
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            m.zip_mut_with(&grad, |mv, &gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            v.zip_mut_with(&grad, |vv, &gv| *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv);
            let (lr, eps) = (self.lr, self.eps);
            p.update_value(|value| {
                for ((val, mv), vv) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *val -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
    }
}
