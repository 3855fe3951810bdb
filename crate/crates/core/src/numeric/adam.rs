use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

/// Linear warmup to the base rate over `warmup_steps`, then linear decay to
/// zero at `total_steps` (no decay when `total_steps` is `None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub total_steps: Option<usize>,
}

impl LrSchedule {
    /// Multiplier for the `step`-th update (1-based).
    pub fn factor(&self, step: usize) -> f64 {
        let s = step as f64;
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return s / self.warmup_steps as f64;
        }
        match self.total_steps {
            Some(total) if total > self.warmup_steps => {
                let remaining = total.saturating_sub(step) as f64;
                (remaining / (total - self.warmup_steps) as f64).clamp(0.0, 1.0)
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: usize,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64, schedule: LrSchedule) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
            schedule,
        }
    }

    pub fn effective_lr(&self, step: usize) -> f64 {
        self.learning_rate * self.schedule.factor(step)
    }

    /// One bias-corrected Adam update from the gradients held in `params`.
    /// Returns the learning rate that was applied. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<f64> {
        if self.first_moment.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} moment slots vs {} parameters",
                    self.first_moment.len(),
                    params.len()
                ),
            ));
        }
        for (i, (id, name, t)) in params.iter().enumerate() {
            if self.first_moment[i].len() != t.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("moment shape mismatch for `{name}`"),
                ));
            }
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        param: params.name(id).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let lr = self.effective_lr(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn scalar_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![value]).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        let id = s.id("w").unwrap();
        s.get_mut(id).zero_grad();
        s.get_mut(id).accumulate_grad(&[g]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(1.5);
        let mut adam = AdamState::new(
            &s,
            0.1,
            LrSchedule {
                warmup_steps: 0,
                total_steps: None,
            },
        );
        for _ in 0..3 {
            set_grad(&mut s, 0.0);
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get(s.id("w").unwrap()).data(), &[1.5]);
        assert_eq!(adam.step, 3);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        // m_t = 1 - 0.9^t, v_t = 1 - 0.999^t: both bias corrections give 1,
        // so every step moves by lr / (1 + eps).
        let lr = 0.01;
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(
            &s,
            lr,
            LrSchedule {
                warmup_steps: 0,
                total_steps: None,
            },
        );
        let mut prev = 0.0;
        for _ in 0..3 {
            set_grad(&mut s, 1.0);
            adam.step(&mut s).unwrap();
            let now = s.get(s.id("w").unwrap()).data()[0];
            assert!(((prev - now) - lr / (1.0 + 1e-8)).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn warmup_and_decay() {
        let sched = LrSchedule {
            warmup_steps: 10,
            total_steps: Some(20),
        };
        assert_eq!(sched.factor(5), 0.5);
        assert_eq!(sched.factor(10), 1.0);
        assert_eq!(sched.factor(15), 0.5);
        assert_eq!(sched.factor(20), 0.0);
        assert_eq!(sched.factor(25), 0.0);
    }

    #[test]
    fn nan_gradient_names_param() {
        let mut s = scalar_store(1.0);
        let id = s.id("w").unwrap();
        s.get_mut(id).zero_grad();
        s.get_mut(id).accumulate_grad(&[f64::NAN]);
        let mut adam = AdamState::new(
            &s,
            0.1,
            LrSchedule {
                warmup_steps: 0,
                total_steps: None,
            },
        );
        match adam.step(&mut s) {
            Err(Error::NonFiniteGradient { param }) => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.step, 0);
        assert_eq!(s.get(id).data(), &[1.0]);
    }
}
