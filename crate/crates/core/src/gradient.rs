//! SmoothGrad and Integrated Gradients on differentiable prediction models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::models::PredictionModel;
use crate::prob::{AttributionVector, Instance, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct GradConfig {
    /// Noise draws for SmoothGrad, path steps for IntGrad.
    pub num_samples: usize,
    pub noise_sigma: f64,
    /// IntGrad reference input; `None` means the zero vector.
    pub baseline: Option<Instance>,
    pub seed: u64,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            num_samples: 64,
            noise_sigma: 0.1,
            baseline: None,
            seed: 0,
        }
    }
}

impl GradConfig {
    fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean of `n` input gradients of `p(y | x + eps)`, `eps ~ N(0, sigma^2 I)`.
pub fn smoothgrad(model: &PredictionModel, x: &Instance, y: Label, cfg: &GradConfig) -> Result<AttributionVector> {
    cfg.validate()?;
    if cfg.noise_sigma == 0.0 {
        return AttributionVector::new(model.input_gradient(x, y)?);
    }
    check_dim(model.input_dim(), x.dim())?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = vec![0.0; x.dim()];
    for _ in 0..cfg.num_samples {
        let noisy: Vec<f64> = x.features().iter().map(|v| v + noise.sample(&mut rng)).collect();
        let g = model.input_gradient(&Instance::new(noisy)?, y)?;
        total.iter_mut().zip(g).for_each(|(t, g)| *t += g);
    }
    let n = cfg.num_samples as f64;
    AttributionVector::new(total.into_iter().map(|t| t / n).collect())
}

/// `(x - xbar) * mean_i grad p(y | xbar + ((i - 1/2) / n)(x - xbar))`.
pub fn intgrad(model: &PredictionModel, x: &Instance, y: Label, cfg: &GradConfig) -> Result<AttributionVector> {
    cfg.validate()?;
    check_dim(model.input_dim(), x.dim())?;
    let zeros;
    let baseline = match &cfg.baseline {
        Some(b) => {
            check_dim(x.dim(), b.dim())?;
            b.features()
        }
        None => {
            zeros = vec![0.0; x.dim()];
            &zeros[..]
        }
    };
    let delta: Vec<f64> = x.features().iter().zip(baseline).map(|(a, b)| a - b).collect();
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(AttributionVector::zeros(x.dim()));
    }
    let n = cfg.num_samples;
    let mut total = vec![0.0; x.dim()];
    for i in 1..=n {
        let t = (i as f64 - 0.5) / n as f64;
        let point: Vec<f64> = baseline.iter().zip(&delta).map(|(b, d)| b + t * d).collect();
        let g = model.input_gradient(&Instance::new(point)?, y)?;
        total.iter_mut().zip(g).for_each(|(s, g)| *s += g);
    }
    AttributionVector::new(
        total
            .into_iter()
            .zip(&delta)
            .map(|(s, d)| d * s / n as f64)
            .collect(),
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::{Architecture, Network};
    use crate::quadrature::GaussLegendre;
    use rand::Rng;

    pub(crate) fn random_model(d: usize, k: usize, seed: u64) -> PredictionModel {
        let arch = Architecture::TanhMlp { hidden: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..Network::num_weights(arch, d, k))
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        PredictionModel::new(Network::from_weights(arch, d, k, w).unwrap())
    }

    fn linear_binary(dw: &[f64], db: f64) -> PredictionModel {
        // Class 0 has zero weights, so the logit gap is dw.x + db.
        let d = dw.len();
        let mut w = vec![0.0; d];
        w.extend_from_slice(dw);
        w.extend([0.0, db]);
        PredictionModel::new(Network::from_weights(Architecture::Linear, d, 2, w).unwrap())
    }

    fn inst(v: &[f64]) -> Instance {
        Instance::new(v.to_vec()).unwrap()
    }

    fn sig(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for trial in 0..100 {
            let d = rng.random_range(1..6);
            let k = rng.random_range(2..4);
            let model = random_model(d, k, trial);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = Label(rng.random_range(0..k));
            let g = model.input_gradient(&inst(&x), y).unwrap();
            for i in 0..d {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (model.predict_proba(&inst(&up)).unwrap().prob(y)
                    - model.predict_proba(&inst(&down)).unwrap().prob(y))
                    / (2.0 * h);
                let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "trial {trial} feature {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn zero_noise_smoothgrad_is_the_gradient() {
        let model = random_model(3, 3, 1);
        let x = inst(&[0.3, -0.2, 1.0]);
        let cfg = GradConfig { num_samples: 17, noise_sigma: 0.0, ..Default::default() };
        let sg = smoothgrad(&model, &x, Label(2), &cfg).unwrap();
        assert_eq!(sg.into_inner(), model.input_gradient(&x, Label(2)).unwrap());
    }

    #[test]
    fn smoothgrad_binary_classes_are_opposite() {
        let model = random_model(4, 2, 2);
        let x = inst(&[0.1, 0.2, -0.3, 0.4]);
        let cfg = GradConfig { num_samples: 50, noise_sigma: 0.3, seed: 4, ..Default::default() };
        let a = smoothgrad(&model, &x, Label(0), &cfg).unwrap();
        let b = smoothgrad(&model, &x, Label(1), &cfg).unwrap();
        for i in 0..4 {
            assert!((a[i] + b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothgrad_concentrates_on_the_smoothed_slope() {
        // Gradient of p_1 is sigmoid'(z) dw with z ~ N(dw.x + db, sigma^2 |dw|^2);
        // its mean is integrated by quadrature, independently of the sampler.
        let dw = [1.5, -0.5];
        let (db, sigma) = (0.2, 0.8);
        let model = linear_binary(&dw, db);
        let x = inst(&[0.4, 0.9]);
        let mu = dw[0] * x[0] + dw[1] * x[1] + db;
        let tau = sigma * (dw[0] * dw[0] + dw[1] * dw[1]).sqrt();
        let q = GaussLegendre::new(128);
        let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let slope = q.integrate(-10.0, 10.0, |z| {
            let s = sig(mu + tau * z);
            s * (1.0 - s) * density(z)
        });
        let second = q.integrate(-10.0, 10.0, |z| {
            let s = sig(mu + tau * z);
            (s * (1.0 - s)).powi(2) * density(z)
        });
        let n = 100_000;
        let cfg = GradConfig { num_samples: n, noise_sigma: sigma, seed: 9, ..Default::default() };
        let sg = smoothgrad(&model, &x, Label(1), &cfg).unwrap();
        let sd = (second - slope * slope).sqrt() / (n as f64).sqrt();
        for i in 0..2 {
            assert!((sg[i] - slope * dw[i]).abs() < 3.0 * sd * dw[i].abs(), "{i}");
        }
    }

    #[test]
    fn smoothgrad_variance_scales_inversely_with_samples() {
        let model = random_model(2, 2, 5);
        let x = inst(&[0.5, -0.5]);
        let var_at = |n: usize| {
            let vals: Vec<f64> = (0..300)
                .map(|seed| {
                    let cfg = GradConfig { num_samples: n, noise_sigma: 0.5, seed, ..Default::default() };
                    smoothgrad(&model, &x, Label(0), &cfg).unwrap()[0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let ratio = var_at(10) / var_at(40);
        assert!((2.8..5.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn intgrad_zero_path_and_completeness() {
        let model = random_model(3, 3, 6);
        let x = inst(&[0.7, -1.2, 0.4]);
        let at_baseline = GradConfig { baseline: Some(x.clone()), ..Default::default() };
        assert_eq!(intgrad(&model, &x, Label(0), &at_baseline).unwrap(), AttributionVector::zeros(3));

        for seed in 0..10 {
            let model = random_model(3, 3, 100 + seed);
            let cfg = GradConfig { num_samples: 2048, ..Default::default() };
            let ig = intgrad(&model, &x, Label(1), &cfg).unwrap();
            let gap = model.predict_proba(&x).unwrap()[1] - model.predict_proba(&inst(&[0.0; 3])).unwrap()[1];
            assert!((ig.sum() - gap).abs() < 1e-4);
        }
    }

    #[test]
    fn intgrad_midpoint_residual_is_second_order() {
        let model = random_model(3, 2, 7);
        let x = inst(&[1.5, -2.0, 1.0]);
        let gap = model.predict_proba(&x).unwrap()[0] - model.predict_proba(&inst(&[0.0; 3])).unwrap()[0];
        let residual = |n| {
            let cfg = GradConfig { num_samples: n, ..Default::default() };
            (intgrad(&model, &x, Label(0), &cfg).unwrap().sum() - gap).abs()
        };
        let ratio = residual(32) / residual(64);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn intgrad_on_linear_logits_is_proportional_to_weights() {
        let dw = [0.4, -0.2, 0.1];
        let model = linear_binary(&dw, 0.0);
        let x = inst(&[1.0, 2.0, -3.0]);
        let base = inst(&[0.5, 0.5, 0.5]);
        let cfg = GradConfig { num_samples: 33, baseline: Some(base.clone()), ..Default::default() };
        let ig = intgrad(&model, &x, Label(1), &cfg).unwrap();
        let ratios: Vec<f64> = (0..3).map(|i| ig[i] / (dw[i] * (x[i] - base[i]))).collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-12);
        }
    }
}
