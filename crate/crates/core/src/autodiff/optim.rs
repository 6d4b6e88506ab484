//! Adam / AdamW and the two learning-rate schedules used by the trainer:
//! linear warm-up with linear decay (extractor + classifier) and polynomial
//! decay (discriminator + similarity network).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::scalar::Real;
use crate::error::{CoreError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning-rate schedule descriptor; `lr_at` evaluates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// `base * step/warmup` while warming up, then linear to zero at
    /// `total_steps`.
    LinearWarmupLinear {
        base: f64,
        warmup_steps: u64,
        total_steps: u64,
    },
    /// `base * (1 - step/total)^power`.
    Poly {
        base: f64,
        power: f64,
        total_steps: u64,
    },
}

/// The learning rate at `step`; zero once past `total_steps`.
pub fn lr_at(schedule: &Schedule, step: u64) -> f64 {
    match *schedule {
        Schedule::LinearWarmupLinear {
            base,
            warmup_steps,
            total_steps,
        } => {
            if step >= total_steps {
                0.0
            } else if warmup_steps > 0 && step < warmup_steps {
                base * step as f64 / warmup_steps as f64
            } else {
                let span = (total_steps - warmup_steps) as f64;
                base * (total_steps - step) as f64 / span
            }
        }
        Schedule::Poly {
            base,
            power,
            total_steps,
        } => {
            if step >= total_steps {
                0.0
            } else {
                base * libm::pow(1.0 - step as f64 / total_steps as f64, power)
            }
        }
    }
}

/// Adam moments for one parameter store.
#[derive(Debug, Clone)]
pub struct OptimizerState<F: Real> {
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
    step: u64,
    pub weight_decay: F,
    pub schedule: Schedule,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(store: &ParameterStore<F>, weight_decay: F, schedule: Schedule) -> Self {
        let first = store
            .iter()
            .map(|(_, t)| vec![F::zero(); t.len()])
            .collect();
        let second = store
            .iter()
            .map(|(_, t)| vec![F::zero(); t.len()])
            .collect();
        Self {
            first,
            second,
            step: 0,
            weight_decay,
            schedule,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.first, &self.second)
    }

    /// Restores raw state (checkpoint loading).
    pub fn restore(&mut self, first: Vec<Vec<F>>, second: Vec<Vec<F>>, step: u64) -> Result<()> {
        if first.len() != self.first.len() || second.len() != self.second.len() {
            return Err(CoreError::invalid("optimizer", "moment count mismatch"));
        }
        for (a, b) in first.iter().zip(&self.first) {
            if a.len() != b.len() {
                return Err(CoreError::invalid("optimizer", "moment shape mismatch"));
            }
        }
        self.first = first;
        self.second = second;
        self.step = step;
        Ok(())
    }
}

fn adam_core<F: Real>(
    store: &mut ParameterStore<F>,
    state: &mut OptimizerState<F>,
    lr: F,
    decoupled_decay: bool,
) -> Result<()> {
    let b1 = F::c(ADAM_BETA1);
    let b2 = F::c(ADAM_BETA2);
    let eps = F::c(ADAM_EPS);
    state.step += 1;
    let t = state.step as i32;
    let bias1 = F::one() - b1.powi(t);
    let bias2 = F::one() - b2.powi(t);
    let wd = state.weight_decay;
    for (idx, (name, tensor)) in store.iter_mut().enumerate() {
        let Some(grad) = tensor.grad() else {
            return Err(CoreError::MissingGrad {
                name: String::from(name),
            });
        };
        let grad = grad.to_vec();
        let m = &mut state.first[idx];
        let v = &mut state.second[idx];
        let vals = tensor.values_mut();
        for i in 0..vals.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (F::one() - b1) * g;
            v[i] = b2 * v[i] + (F::one() - b2) * g * g;
            let mhat = m[i] / bias1;
            let vhat = v[i] / bias2;
            if decoupled_decay {
                vals[i] = vals[i] - lr * wd * vals[i];
            }
            vals[i] = vals[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain Adam (no weight decay term even if the state carries one).
pub fn adam_step<F: Real>(
    store: &mut ParameterStore<F>,
    state: &mut OptimizerState<F>,
    lr: F,
) -> Result<()> {
    adam_core(store, state, lr, false)
}

/// AdamW: decoupled weight decay applied directly to the parameters.
pub fn adamw_step<F: Real>(
    store: &mut ParameterStore<F>,
    state: &mut OptimizerState<F>,
    lr: F,
) -> Result<()> {
    adam_core(store, state, lr, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::NetworkKind;
    use crate::autodiff::tensor::Tensor;

    fn store_with(value: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new(NetworkKind::Classifier);
        s.insert("w", Tensor::new(&[1], vec![value]).unwrap().with_grad())
            .unwrap();
        s
    }

    fn sched() -> Schedule {
        Schedule::Poly {
            base: 1.0,
            power: 0.9,
            total_steps: 100,
        }
    }

    #[test]
    fn zero_grad_zero_decay_leaves_parameters() {
        let mut s = store_with(0.5);
        s.get_mut("w").unwrap().accumulate_grad(&[0.0]).unwrap();
        let mut st = OptimizerState::new(&s, 0.0, sched());
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.get("w").unwrap().values()[0], 0.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // g=1, lr=0.1: bias-corrected first step is lr/(1+eps) below start.
        let mut s = store_with(1.0);
        s.get_mut("w").unwrap().accumulate_grad(&[1.0]).unwrap();
        let mut st = OptimizerState::new(&s, 0.0, sched());
        adam_step(&mut s, &mut st, 0.1).unwrap();
        let got = s.get("w").unwrap().values()[0];
        assert!((got - 0.9).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn adamw_zero_grad_scales_by_decoupled_decay() {
        let mut s = store_with(2.0);
        s.get_mut("w").unwrap().accumulate_grad(&[0.0]).unwrap();
        let mut st = OptimizerState::new(&s, 0.01, sched());
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        let got = s.get("w").unwrap().values()[0];
        assert!((got - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = store_with(1.0);
        let mut st = OptimizerState::new(&s, 0.0, sched());
        assert!(matches!(
            adam_step(&mut s, &mut st, 0.1),
            Err(CoreError::MissingGrad { .. })
        ));
    }

    #[test]
    fn linear_schedule_warms_up_then_decays() {
        let s = Schedule::LinearWarmupLinear {
            base: 2.0,
            warmup_steps: 100,
            total_steps: 1000,
        };
        assert_eq!(lr_at(&s, 0), 0.0);
        assert_eq!(lr_at(&s, 50), 1.0);
        assert_eq!(lr_at(&s, 100), 2.0);
        assert!((lr_at(&s, 550) - 1.0).abs() < 1e-12);
        assert_eq!(lr_at(&s, 1000), 0.0);
        assert_eq!(lr_at(&s, 5000), 0.0);
    }

    #[test]
    fn poly_schedule_matches_direct_evaluation() {
        let s = Schedule::Poly {
            base: 1e-4,
            power: 0.9,
            total_steps: 1000,
        };
        assert_eq!(lr_at(&s, 0), 1e-4);
        let mid = lr_at(&s, 500);
        assert!((mid - 5.358867312681466e-5).abs() < 1e-15, "got {mid}");
        assert_eq!(lr_at(&s, 1000), 0.0);
    }
}
