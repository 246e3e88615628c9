/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: Self::BETA1, beta2: Self::BETA2, eps: Self::EPS, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update. `params` and `grads` must line up tensor by tensor.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (param, grad)) in params.into_iter().zip(grads).enumerate() {
            assert_eq!(param.len(), grad.len());
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..param.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                param[j] -= self.lr * self.weight_decay * param[j];
                param[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = AdamW::new(0.1, 0.0);
        let mut p = vec![1.0, -1.0, 0.0];
        opt.step(vec![&mut p], &[vec![3.0, -0.5, 0.0]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut opt = AdamW::new(0.1, 0.5);
        let mut p = vec![2.0];
        opt.step(vec![&mut p], &[vec![0.0]]);
        assert!((p[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = AdamW::new(0.05, 0.0);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0)];
            opt.step(vec![&mut p], &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
