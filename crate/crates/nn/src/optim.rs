//! Adam and exponential-moving-average parameter tracking.

use crate::error::{NnError, Result};
use crate::layer::Param;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// Moment estimates for one ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update using the gradients stored in
    /// `params`. Parameters must be passed in the same order on every call.
    /// Fails without touching anything if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFiniteGradient { param: bad.name.clone() });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(NnError::Shape("parameter list changed between Adam steps".into()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let t = self.step as i32;
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((p, m), v) in params.iter_mut().zip(self.first.iter_mut()).zip(self.second.iter_mut()) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target ← tau·online + (1−tau)·target`, elementwise.
pub fn ema_update<T: Real>(target: &mut [&mut Param<T>], online: &[&Param<T>], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::Config(format!("EMA rate {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(NnError::Shape("EMA parameter lists differ in length".into()));
    }
    for (t, o) in target.iter().zip(online) {
        if t.shape != o.shape {
            return Err(NnError::Shape(format!("EMA `{}` {:?} vs `{}` {:?}", t.name, t.shape, o.name, o.shape)));
        }
    }
    let a = T::lit(tau);
    let b = T::lit(1.0 - tau);
    for (t, o) in target.iter_mut().zip(online) {
        for (tv, &ov) in t.value.iter_mut().zip(&o.value) {
            *tv = a * ov + b * *tv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Param<f64> {
        Param::from_values("p", vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[0.5, -2.0]);
        let mut adam = Adam::new(AdamConfig::new(1e-3));
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value, vec![0.5, -2.0]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(&[1.0]);
        p.grad[0] = 3.0;
        let mut adam = Adam::new(AdamConfig::new(1e-3));
        adam.step(&mut [&mut p]).unwrap();
        assert!((1.0 - p.value[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn tiny_gradient_update_is_damped_by_eps() {
        let mut p = Param::<f32>::from_values("p", vec![1], vec![0.0]).unwrap();
        p.grad[0] = 1e-12;
        let mut adam = Adam::new(AdamConfig::new(1e-3).with_eps(1e-8));
        adam.step(&mut [&mut p]).unwrap();
        // lr * g / (g + eps) = 1e-3 * 1e-12 / (1e-12 + 1e-8) ≈ 1e-7
        let expected = 1e-3 * 1e-12 / (1e-12 + 1e-8);
        assert!((p.value[0].abs() as f64 - expected).abs() < 1e-9);
        assert!(p.value[0].abs() < 1e-3 * 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param(&[1.0]);
        p.name = "enc.3.weight".into();
        p.grad[0] = f64::NAN;
        let err = Adam::new(AdamConfig::new(1e-3)).step(&mut [&mut p]).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { ref param } if param == "enc.3.weight"));
        assert_eq!(p.value[0], 1.0);
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let online = param(&[1.0, 1.0]);
        let mut t = param(&[0.0, 2.0]);
        ema_update(&mut [&mut t], &[&online], 0.0).unwrap();
        assert_eq!(t.value, vec![0.0, 2.0]);
        ema_update(&mut [&mut t], &[&online], 5e-3).unwrap();
        assert!((t.value[0] - 0.005).abs() < 1e-15);
        ema_update(&mut [&mut t], &[&online], 1.0).unwrap();
        assert_eq!(t.value, online.value);
    }

    #[test]
    fn ema_rejects_bad_rate() {
        let online = param(&[1.0]);
        let mut t = param(&[0.0]);
        assert!(matches!(ema_update(&mut [&mut t], &[&online], 1.5), Err(NnError::Config(_))));
        assert!(matches!(ema_update(&mut [&mut t], &[&online], -0.1), Err(NnError::Config(_))));
    }
}
