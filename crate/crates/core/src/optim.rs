//! Adam and the training-protocol learning-rate schedule: linear warmup for
//! the first epochs, then cosine annealing to a floor at the final step.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-step learning-rate schedule. Defaults follow the benchmark protocol:
/// warmup from 1e-5 to 1e-4 over the first 5 epochs, cosine annealing down
/// to 1e-6 at the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_start_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl LrSchedule {
    pub fn protocol_default(total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        let s = LrSchedule {
            base_lr: 1e-4,
            warmup_start_lr: 1e-5,
            final_lr: 1e-6,
            // a short run is all warmup-free annealing
            warmup_epochs: 5.min(total_epochs.saturating_sub(1)),
            total_epochs,
            steps_per_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Parameter {
                name: "schedule",
                detail: "total_epochs and steps_per_epoch must be positive".into(),
            });
        }
        if self.warmup_start_lr > self.base_lr
            || self.final_lr > self.base_lr
            || self.warmup_epochs >= self.total_epochs
        {
            return Err(Error::Parameter {
                name: "schedule",
                detail: format!(
                    "need warmup_start <= base, final <= base, warmup_epochs < total_epochs; got {self:?}"
                ),
            });
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    /// Learning rate at a global step in `[0, total_steps)`.
    ///
    /// Warmup interpolates linearly from `warmup_start_lr` at step 0 to
    /// `base_lr` at the last warmup step. The cosine phase starts from that
    /// same step (both sides evaluate to `base_lr`, so the junction is
    /// continuous) and reaches `final_lr` exactly at the final step.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        let total = self.total_steps();
        if step >= total {
            return Err(Error::Parameter {
                name: "step",
                detail: format!("step {step} outside schedule of {total} steps"),
            });
        }
        let warmup_steps = self.warmup_epochs * self.steps_per_epoch;
        // index of the step where the warmup line tops out at base_lr
        let junction = warmup_steps.saturating_sub(1);
        if step < warmup_steps && step < junction {
            let t = step as f64 / junction as f64;
            return Ok((1.0 - t) * self.warmup_start_lr + t * self.base_lr);
        }
        let span = (total - 1 - junction).max(1) as f64;
        let progress = (step - junction) as f64 / span;
        Ok(self.final_lr
            + 0.5 * (self.base_lr - self.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

/// Adam moment estimates for one model's parameter list, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state for parameters of the given shapes, with the optimizer's
    /// usual defaults (beta1 0.9, beta2 0.999, epsilon 1e-8).
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over aligned (parameter, gradient) pairs.
    ///
    /// m and v track biased first/second moments; the applied update uses the
    /// bias-corrected m_hat / (sqrt(v_hat) + epsilon).
    pub fn apply(&mut self, params: &mut [(&mut Tensor<T>, &Tensor<T>)], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Parameter {
                name: "params",
                detail: format!("state tracks {} tensors, got {}", self.m.len(), params.len()),
            });
        }
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::Parameter {
                name: "lr",
                detail: format!("learning rate must be positive and finite, got {lr}"),
            });
        }
        self.step += 1;
        let b1 = T::from_f64c(self.beta1);
        let b2 = T::from_f64c(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64c(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = T::from_f64c(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::from_f64c(self.epsilon);
        let lr_t = T::from_f64c(lr);

        for (i, (p, g)) in params.iter_mut().enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::dim(
                    "adam_apply",
                    format!(
                        "tensor {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                ));
            }
            g.validate_finite(&format!("adam gradient tensor {i}"))?;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                pd[j] = pd[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            p.validate_finite(&format!("adam parameter tensor {i}"))?;
        }
        Ok(())
    }

    /// Serialize step counter and moments; moments are stored as f64 so both
    /// precisions round-trip exactly.
    pub fn save(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"ADMS")?;
        w.write_all(&1u32.to_le_bytes())?;
        for h in [self.beta1, self.beta2, self.epsilon] {
            w.write_all(&h.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for t in self.m.iter().chain(&self.v) {
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_f64c().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        fn rd<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| Error::io("<adam state>", e))?;
            Ok(buf)
        }
        let magic = rd::<4>(r)?;
        if &magic != b"ADMS" {
            return Err(Error::Format {
                file: "<adam state>".into(),
                offset: 0,
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = u32::from_le_bytes(rd::<4>(r)?);
        if version != 1 {
            return Err(Error::Format {
                file: "<adam state>".into(),
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let beta1 = f64::from_le_bytes(rd::<8>(r)?);
        let beta2 = f64::from_le_bytes(rd::<8>(r)?);
        let epsilon = f64::from_le_bytes(rd::<8>(r)?);
        let step = u64::from_le_bytes(rd::<8>(r)?);
        let count = u32::from_le_bytes(rd::<4>(r)?) as usize;
        let mut tensors = Vec::with_capacity(2 * count);
        for _ in 0..2 * count {
            let ndim = u32::from_le_bytes(rd::<4>(r)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(rd::<4>(r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(T::from_f64c(f64::from_le_bytes(rd::<8>(r)?)));
            }
            tensors.push(Tensor::new(&shape, data)?);
        }
        let v = tensors.split_off(count);
        Ok(AdamState {
            beta1,
            beta2,
            epsilon,
            step,
            m: tensors,
            v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule() -> LrSchedule {
        LrSchedule::protocol_default(100, 400).unwrap()
    }

    fn ulps_apart(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn schedule_endpoints() {
        let s = schedule();
        assert_eq!(s.lr_at(0).unwrap(), 1e-5);
        let last_warmup = 5 * 400 - 1;
        assert!(ulps_apart(s.lr_at(last_warmup).unwrap(), 1e-4) <= 1);
        assert!(ulps_apart(s.lr_at(s.total_steps() - 1).unwrap(), 1e-6) <= 1);
    }

    #[test]
    fn schedule_junction_is_continuous_and_annealing_monotone() {
        let s = schedule();
        let junction = 5 * 400 - 1;
        let before = s.lr_at(junction - 1).unwrap();
        let at = s.lr_at(junction).unwrap();
        let after = s.lr_at(junction + 1).unwrap();
        assert!(ulps_apart(at, 1e-4) <= 1);
        assert!((at - before).abs() < 1e-7);
        assert!((at - after).abs() < 1e-7);
        let mut prev = at;
        for step in junction..s.total_steps() {
            let lr = s.lr_at(step).unwrap();
            assert!(lr <= prev + 1e-18, "not monotone at step {step}");
            prev = lr;
        }
    }

    #[test]
    fn schedule_annealing_midpoint() {
        let s = schedule();
        let junction = 5 * 400 - 1;
        let last = s.total_steps() - 1;
        let mid = junction + (last - junction) / 2;
        // even span: the midpoint lands exactly on cos(pi/2)
        assert_eq!((last - junction) % 2, 0);
        let lr = s.lr_at(mid).unwrap();
        assert!((lr - (1e-4 + 1e-6) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejects_out_of_range_step() {
        let s = schedule();
        assert!(s.lr_at(s.total_steps()).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(&[3], vec![1.0_f64, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        let before = p.clone();
        let mut state = AdamState::new(&[vec![3]]);
        state.apply(&mut [(&mut p, &g)], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // with fresh state and constant gradient, bias correction cancels and
        // the first update is lr * sign(g) up to epsilon effects
        let mut p = Tensor::new(&[2], vec![0.0_f64, 0.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.37, -1.4]).unwrap();
        let mut state = AdamState::new(&[vec![2]]);
        state.apply(&mut [(&mut p, &g)], 0.01).unwrap();
        assert!((p.data()[0] - -0.01).abs() < 1e-6);
        assert!((p.data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_quadratic() {
        // 100 steps on f(p) = p^2 from p = 1 with lr 0.1; |p| decreases
        // monotonically toward 0 (scalar reference behavior)
        let mut p = Tensor::new(&[1], vec![1.0_f64]).unwrap();
        let mut state = AdamState::new(&[vec![1]]);
        let mut prev = 1.0_f64;
        for _ in 0..100 {
            let g = Tensor::new(&[1], vec![2.0 * p.data()[0]]).unwrap();
            state.apply(&mut [(&mut p, &g)], 0.1).unwrap();
            let now = p.data()[0].abs();
            assert!(now <= prev + 1e-12);
            prev = now;
        }
        assert!(prev < 0.2);
    }

    #[test]
    fn adam_first_step_direction_is_scale_invariant() {
        // scaling the loss by k scales gradients by k but leaves the sign
        // pattern of the first update unchanged (|g| >> epsilon)
        let grads = [0.9_f64, -0.3, 2.5, -4.0];
        for k in [10.0, 0.1] {
            let mut p_base = Tensor::new(&[4], vec![0.0_f64; 4]).unwrap();
            let mut p_scaled = p_base.clone();
            let g_base = Tensor::new(&[4], grads.to_vec()).unwrap();
            let g_scaled = g_base.map(|g| g * k);
            let mut s1 = AdamState::new(&[vec![4]]);
            let mut s2 = AdamState::new(&[vec![4]]);
            s1.apply(&mut [(&mut p_base, &g_base)], 0.01).unwrap();
            s2.apply(&mut [(&mut p_scaled, &g_scaled)], 0.01).unwrap();
            for (a, b) in p_base.data().iter().zip(p_scaled.data()) {
                assert_eq!(a.signum(), b.signum());
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Tensor::new(&[1], vec![1.0_f64]).unwrap();
        let g = Tensor::new(&[1], vec![f64::INFINITY]).unwrap();
        let mut state = AdamState::new(&[vec![1]]);
        assert!(state.apply(&mut [(&mut p, &g)], 0.1).is_err());
    }

    #[test]
    fn adam_state_roundtrips_exactly() {
        let mut p = Tensor::new(&[2], vec![1.0_f32, 2.0]).unwrap();
        let mut state = AdamState::new(&[vec![2]]);
        for i in 0..5 {
            let g = Tensor::new(&[2], vec![0.1 * i as f32, -0.2]).unwrap();
            state.apply(&mut [(&mut p, &g)], 0.01).unwrap();
        }
        let mut buf = Vec::new();
        state.save(&mut buf).unwrap();
        let restored = AdamState::<f32>::load(&mut buf.as_slice()).unwrap();
        assert_eq!(restored.step_count(), state.step_count());
        assert_eq!(restored.m, state.m);
        assert_eq!(restored.v, state.v);
    }
}
