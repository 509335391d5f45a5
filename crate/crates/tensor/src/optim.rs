//! RMSProp.
//!
//! ```text
//! acc   <- rho * acc + (1 - rho) * g^2
//! theta <- theta - lr * g / (sqrt(acc) + eps)
//! ```

use crate::error::{Result, TensorError};
use crate::params::{ParamSet, OPTIM_MAGIC};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { lr: 2e-4, rho: 0.95, eps: 1e-6 }
    }
}

/// Per-parameter squared-gradient accumulators plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    acc: ParamSet,
}

/// Outcome of one update.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    /// Parameters whose gradient contained NaN or infinity; left untouched.
    pub skipped: Vec<String>,
}

const HYPER: &str = "rmsprop.hyper";

impl RmsProp {
    pub fn new(config: RmsPropConfig, params: &ParamSet) -> Self {
        let mut acc = ParamSet::new();
        for (name, t) in params.iter() {
            acc.push(name, Tensor::zeros(t.shape()));
        }
        RmsProp { config, acc }
    }

    pub fn accumulator(&self, i: usize) -> &Tensor<f32> {
        self.acc.get(i)
    }

    /// Applies one update. `grads[i]` pairs with parameter `i`; `None` means
    /// a zero gradient (the accumulator still decays).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor<f32>>]) -> Result<StepReport> {
        self.acc.check_layout(params)?;
        if grads.len() != params.len() {
            return Err(TensorError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let RmsPropConfig { lr, rho, eps } = self.config;
        let mut report = StepReport::default();
        for (i, g) in grads.iter().enumerate() {
            let acc = self.acc.get_mut(i);
            let Some(g) = g else {
                acc.data_mut().iter_mut().for_each(|a| *a *= rho);
                continue;
            };
            if g.shape() != acc.shape() {
                return Err(TensorError::Shape(format!(
                    "gradient for {}: expected {:?}, got {:?}",
                    params.name(i),
                    acc.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                report.skipped.push(params.name(i).to_string());
                continue;
            }
            let p = params.get_mut(i);
            for ((a, w), &gv) in acc.data_mut().iter_mut().zip(p.data_mut()).zip(g.data()) {
                *a = rho * *a + (1.0 - rho) * gv * gv;
                *w -= lr * gv / (a.sqrt() + eps);
            }
        }
        Ok(report)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut out = ParamSet::new();
        let c = self.config;
        out.push(HYPER, Tensor::new(&[3], vec![c.lr, c.rho, c.eps])?);
        for (name, t) in self.acc.iter() {
            out.push(name, t.clone());
        }
        out.save(path, OPTIM_MAGIC)
    }

    /// Loads state saved by [`RmsProp::save`] for the given parameter layout.
    pub fn load(path: &std::path::Path, params: &ParamSet) -> Result<Self> {
        let file = ParamSet::load(path, OPTIM_MAGIC)?;
        if file.is_empty() || file.name(0) != HYPER || file.get(0).len() != 3 {
            return Err(TensorError::Format("optimizer file lacks hyperparameters".into()));
        }
        let h = file.get(0).data();
        let config = RmsPropConfig { lr: h[0], rho: h[1], eps: h[2] };
        let mut acc = ParamSet::new();
        for i in 1..file.len() {
            acc.push(file.name(i), file.get(i).clone());
        }
        let template = RmsProp::new(config, params);
        template.acc.check_layout(&acc)?;
        Ok(RmsProp { config, acc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("theta", Tensor::scalar(value));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = single(0.7);
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p);
        opt.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(p.get(0).data()[0], 0.7);
    }

    #[test]
    fn hand_evaluated_update() {
        // rho = 0, lr = 1, eps = 0, g = 2: acc = 4, theta -= 2 / 2.
        let mut p = single(3.0);
        let mut opt = RmsProp::new(RmsPropConfig { lr: 1.0, rho: 0.0, eps: 0.0 }, &p);
        opt.step(&mut p, &[Some(Tensor::scalar(2.0))]).unwrap();
        assert_eq!(opt.accumulator(0).data()[0], 4.0);
        assert_eq!(p.get(0).data()[0], 2.0);
    }

    #[test]
    fn repeated_gradient_step_approaches_lr_times_sign() {
        let cfg = RmsPropConfig { lr: 0.01, rho: 0.9, eps: 1e-8 };
        let mut p = single(0.0);
        let mut opt = RmsProp::new(cfg, &p);
        let mut prev = 0.0f32;
        let mut last_step = 0.0;
        for _ in 0..400 {
            opt.step(&mut p, &[Some(Tensor::scalar(-3.0))]).unwrap();
            let now = p.get(0).data()[0];
            last_step = now - prev;
            prev = now;
        }
        // acc -> g^2 so each step -> lr * g / |g| = -lr * sign(-3) = +lr.
        assert!((last_step - cfg.lr).abs() < 1e-5, "{last_step}");
    }

    #[test]
    fn non_finite_gradient_is_flagged_and_skipped() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::scalar(1.0));
        p.push("b", Tensor::scalar(1.0));
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p);
        let report = opt
            .step(&mut p, &[Some(Tensor::scalar(f32::NAN)), Some(Tensor::scalar(1.0))])
            .unwrap();
        assert_eq!(report.skipped, vec!["a".to_string()]);
        assert_eq!(p.get(0).data()[0], 1.0);
        assert!(p.get(1).data()[0] < 1.0);
        assert_eq!(opt.accumulator(0).data()[0], 0.0);
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let mut p = single(0.0);
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p);
        for g in [-5.0f32, 3.0, 0.0, -0.1, 1e-20] {
            opt.step(&mut p, &[Some(Tensor::scalar(g))]).unwrap();
            assert!(opt.accumulator(0).data()[0] >= 0.0);
        }
    }
}
