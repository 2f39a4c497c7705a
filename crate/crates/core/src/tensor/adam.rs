use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

use super::dense::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty: `wd · p` is added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| {
                (
                    Tensor::zeros(p.rows(), p.cols()),
                    Tensor::zeros(p.rows(), p.cols()),
                )
            })
            .unzip();
        AdamState { config, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        contract!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            "adam_step: expected {} tensors, got {} params and {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            contract!(
                p.shape() == g.shape() && p.shape() == self.m[i].shape(),
                "adam_step: shape mismatch at tensor {i}: param {:?}, grad {:?}, state {:?}",
                p.shape(),
                g.shape(),
                self.m[i].shape()
            );
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = p.as_mut_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for k in 0..p.len() {
                let gk = g.as_slice()[k] + weight_decay * p[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = Tensor::row(&[0.5, -1.5]);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        let g = Tensor::zeros(1, 2);
        st.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = Tensor::row(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new(
            AdamConfig {
                eps: 1e-16,
                ..cfg(0.01)
            },
            [&p],
        );
        let g = Tensor::row(&[3.0, -0.2, 1e-3]);
        st.step(&mut [&mut p], &[&g]).unwrap();
        for (pk, gk) in p.as_slice().iter().zip(g.as_slice()) {
            assert!((pk + 0.01 * gk.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_magnitude_decreases_each_step() {
        let mut p = Tensor::row(&[1.0]);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = p.map(|x| 2.0 * x);
            st.step(&mut [&mut p], &[&g]).unwrap();
            let cur = p.as_slice()[0].abs();
            assert!(cur < prev, "{cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::row(&[1.0, 2.0]);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        let g = Tensor::row(&[1.0]);
        assert!(st.step(&mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn coupled_weight_decay_moves_parameter_toward_zero() {
        let mut p = Tensor::row(&[2.0]);
        let mut st = AdamState::new(
            AdamConfig {
                weight_decay: 0.1,
                ..cfg(0.01)
            },
            [&p],
        );
        st.step(&mut [&mut p], &[&Tensor::zeros(1, 1)]).unwrap();
        assert!(p.as_slice()[0] < 2.0);
    }
}
