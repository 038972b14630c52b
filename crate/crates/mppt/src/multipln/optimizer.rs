//! AdamW with decoupled weight decay over flat parameter slots.
//!
//! Decay applies only to slots flagged for it (weight matrices and
//! embeddings); biases and layer-norm parameters are exempt.

use ndarray::NdFloat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 2e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer state: first/second moments per slot plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: NdFloat> AdamW<F> {
    pub fn new(config: AdamWConfig, slot_lens: &[usize]) -> Self {
        let m = slot_lens.iter().map(|&n| vec![F::zero(); n]).collect();
        let v = slot_lens.iter().map(|&n| vec![F::zero(); n]).collect();
        AdamW { config, step: 0, m, v }
    }

    /// One update. `params` and `grads` must align with the slot layout the
    /// optimizer was built from (matching names guard against drift).
    pub fn step(
        &mut self,
        mut params: Vec<(String, bool, &mut [F])>,
        grads: Vec<(String, bool, &[F])>,
    ) {
        assert_eq!(params.len(), self.m.len(), "slot count mismatch");
        assert_eq!(grads.len(), self.m.len(), "slot count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from(self.config.beta1).expect("beta1 fits");
        let b2 = F::from(self.config.beta2).expect("beta2 fits");
        let lr = F::from(self.config.lr).expect("lr fits");
        let eps = F::from(self.config.eps).expect("eps fits");
        let wd = F::from(self.config.weight_decay).expect("wd fits");
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let one = F::one();

        for (si, ((name, decay, theta), (gname, _, grad))) in
            params.iter_mut().zip(grads.iter()).enumerate()
        {
            let decay = *decay;
            assert_eq!(name, gname, "slot order mismatch at {si}");
            assert_eq!(theta.len(), grad.len(), "slot {name} length mismatch");
            assert_eq!(theta.len(), self.m[si].len(), "moment {name} length mismatch");
            let m = &mut self.m[si];
            let v = &mut self.v[si];
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut update = mhat / (vhat.sqrt() + eps);
                if decay {
                    update += wd * theta[i];
                }
                theta[i] -= lr * update;
            }
        }
    }
}
