use crate::error::{DiffError, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Adam with bias correction. Moment slots are zero-initialized and aligned
/// one-to-one with the parameter list handed to [`Adam::new`].
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    step: u64,
    slots: Vec<Slot>,
}

struct Slot {
    m: Vec<Real>,
    v: Vec<Real>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: Real) -> Self {
        let slots = params
            .iter()
            .map(|p| Slot {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Parameters with no accumulated gradient are treated as
    /// having a zero gradient and stay put.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(DiffError::InvalidArgument {
                context: "adam_step",
                message: format!(
                    "optimizer tracks {} parameters, got {}",
                    self.slots.len(),
                    params.len()
                ),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (param, slot) in params.iter().zip(self.slots.iter_mut()) {
            if param.numel() != slot.m.len() {
                return Err(DiffError::InvalidArgument {
                    context: "adam_step",
                    message: format!(
                        "parameter shape drifted: slot {} vs values {}",
                        slot.m.len(),
                        param.numel()
                    ),
                });
            }
            let grad = match param.grad() {
                Some(g) => g,
                None => continue, // zero gradient: moments decay but update is zero anyway
            };
            let mut values = param.to_vec();
            for i in 0..values.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            param.set_values(&values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.1);
        opt.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let p = Tensor::param(&[1], vec![0.5]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.01);
        p.accumulate_grad(&[3.0]);
        opt.step(std::slice::from_ref(&p)).unwrap();
        // With bias correction, step 1 moves by lr·g/(|g| + ε') ≈ lr·sign(g).
        let moved = 0.5 - p.to_vec()[0];
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let p = Tensor::param(&[2], vec![1.5, -2.5]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.05);
        let mut prev = Real::INFINITY;
        for _ in 0..10 {
            p.zero_grad();
            let tape = Tape::new();
            let sq = tape.mul(&p, &p).unwrap();
            let loss = tape.sum_all(&sq);
            let value = loss.scalar_value().unwrap();
            assert!(value < prev, "loss must strictly decrease: {value} vs {prev}");
            prev = value;
            tape.backward(&loss).unwrap();
            opt.step(std::slice::from_ref(&p)).unwrap();
        }
    }

    #[test]
    fn rejects_shape_drift() {
        let p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.1);
        let q = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        q.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert!(opt.step(std::slice::from_ref(&q)).is_err());
    }
}
