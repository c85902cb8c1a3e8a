//! Prediction models `p_model(y | x)` and their mini-batch trainer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::nn::{Architecture, Network};
use crate::persist::WeightFile;
use crate::prob::{ClassDistribution, Dataset, Instance, Label, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if self.l2_penalty.is_nan() || self.l2_penalty < 0.0 {
            return Err(Error::InvalidArgument("l2_penalty must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
    }
}

/// Mean training objective per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// A softmax classifier over a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    network: Network,
}

impl PredictionModel {
    pub const KIND: &'static str = "model";

    pub fn new(network: Network) -> Self {
        Self { network }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.network.output_dim()
    }

    pub fn predict_proba(&self, x: &Instance) -> Result<ClassDistribution> {
        self.predict_raw(x.features())
    }

    pub(crate) fn predict_raw(&self, input: &[f64]) -> Result<ClassDistribution> {
        check_dim(self.input_dim(), input.len())?;
        Ok(ClassDistribution::from_logits(&self.network.forward(input)))
    }

    /// Argmax of `predict_proba`, ties toward the lowest class index.
    pub fn predicted_class(&self, x: &Instance) -> Result<Label> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// Exact `d p(y | x) / d x` by backpropagation.
    pub fn input_gradient(&self, x: &Instance, y: Label) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.dim())?;
        if y.0 >= self.num_classes() {
            return Err(Error::InvalidArgument(format!("class {} out of range", y.0)));
        }
        let trace = self.network.forward_trace(x.features());
        let p = ClassDistribution::from_logits(&trace.output);
        let py = p.prob(y);
        let grad_logits: Vec<f64> = p
            .probs()
            .iter()
            .enumerate()
            .map(|(k, &pk)| py * (if k == y.0 { 1.0 } else { 0.0 } - pk))
            .collect();
        let mut scratch = vec![0.0; self.network.weights().len()];
        let mut grad_x = vec![0.0; x.dim()];
        self.network
            .backward(x.features(), &trace, &grad_logits, &mut scratch, Some(&mut grad_x));
        Ok(grad_x)
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile::new(Self::KIND, self.network.clone())
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        Ok(Self::new(file.expect_kind(&[Self::KIND])?.network))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(WeightFile::load(path)?)
    }
}

/// Minimizes mean negative log-likelihood of `data` by mini-batch gradient
/// descent. Deterministic given `cfg.seed`.
pub fn train_model(
    data: &Dataset,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(PredictionModel, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut network = Network::new(arch, data.dim(), data.num_classes(), cfg.seed);
    let log = fit_softmax(&mut network, data.labels(), cfg, |row, _| {
        data.instances()[row].features().to_vec()
    })?;
    Ok((PredictionModel::new(network), log))
}

/// Shared softmax/NLL training loop. `input` builds the network input for a
/// row and may draw from the run's RNG (surrogates draw a fresh mask here).
pub(crate) fn fit_softmax<F>(
    network: &mut Network,
    labels: &[Label],
    cfg: &TrainConfig,
    mut input: F,
) -> Result<TrainingLog>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Vec<f64>,
{
    cfg.validate()?;
    let mut rng = cfg.rng();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut grad = vec![0.0; network.weights().len()];
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &row in batch {
                let x = input(row, &mut rng);
                let trace = network.forward_trace(&x);
                let p = ClassDistribution::from_logits(&trace.output);
                let y = labels[row].0;
                epoch_loss -= p.probs()[y].max(PROB_FLOOR).ln();
                let grad_logits: Vec<f64> = p
                    .probs()
                    .iter()
                    .enumerate()
                    .map(|(k, &pk)| pk - if k == y { 1.0 } else { 0.0 })
                    .collect();
                network.backward(&x, &trace, &grad_logits, &mut grad, None);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            network.step(&grad, cfg.learning_rate, cfg.l2_penalty);
        }
        let mean = epoch_loss / labels.len() as f64;
        if !mean.is_finite() || network.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch} (loss {mean})"
            )));
        }
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

/// Mean negative log-likelihood of a model on a dataset.
pub fn mean_nll(model: &PredictionModel, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.iter() {
        total -= crate::prob::log_likelihood(&model.predict_proba(x)?, y);
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Dataset {
        // Two Gaussian blobs whose centers are 2 apart along each axis.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.25).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -1.0 } else { 1.0 };
            xs.push(
                Instance::new(vec![
                    center + noise.sample(&mut rng),
                    center + noise.sample(&mut rng),
                ])
                .unwrap(),
            );
            ys.push(Label(class));
        }
        Dataset::new(xs, ys, 2, 2).unwrap()
    }

    /// Independent separability witness: the classic perceptron converges.
    fn perceptron_separates(data: &Dataset) -> bool {
        let mut w = [0.0; 3];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (x, y) in data.iter() {
                let t = if y.0 == 1 { 1.0 } else { -1.0 };
                let a = w[0] * x[0] + w[1] * x[1] + w[2];
                if t * a <= 0.0 {
                    w[0] += t * x[0];
                    w[1] += t * x[1];
                    w[2] += t;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn accuracy(model: &PredictionModel, data: &Dataset) -> f64 {
        let hits = data
            .iter()
            .filter(|(x, y)| model.predicted_class(x).unwrap() == *y)
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(500, 3);
        assert!(perceptron_separates(&data));
        let cfg = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let (model, _) = train_model(&data, Architecture::Linear, &cfg).unwrap();
        assert!(accuracy(&model, &data) >= 0.99);
    }

    #[test]
    fn uninformative_features_converge_to_marginal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 2000;
        let xs: Vec<_> = (0..n)
            .map(|_| Instance::new(vec![rng.random::<f64>(), rng.random::<f64>()]).unwrap())
            .collect();
        let ys: Vec<_> = (0..n).map(|_| Label(usize::from(rng.random::<f64>() < 0.3))).collect();
        let data = Dataset::new(xs, ys, 2, 2).unwrap();
        let marginal = ClassDistribution::new(data.label_marginal()).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 0.2,
            ..Default::default()
        };
        let (model, _) = train_model(&data, Architecture::Linear, &cfg).unwrap();
        let nll = mean_nll(&model, &data).unwrap();
        assert!((nll - marginal.entropy()).abs() < 0.02, "{nll} vs {}", marginal.entropy());
    }

    #[test]
    fn equal_seeds_give_identical_weights() {
        let data = blobs(100, 1);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 42,
            ..Default::default()
        };
        let arch = Architecture::TanhMlp { hidden: 5 };
        let (a, la) = train_model(&data, arch, &cfg).unwrap();
        let (b, lb) = train_model(&data, arch, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let data = blobs(200, 2);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: data.len(),
            learning_rate: 0.05,
            ..Default::default()
        };
        let (_, log) = train_model(&data, Architecture::TanhMlp { hidden: 6 }, &cfg).unwrap();
        for pair in log.epoch_losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let net = Network::from_weights(Architecture::Linear, 2, 3, vec![0.0; 9]).unwrap();
        let model = PredictionModel::new(net);
        let p = model.predict_proba(&Instance::new(vec![4.0, -2.0]).unwrap()).unwrap();
        assert_eq!(p, ClassDistribution::uniform(3));
    }

    #[test]
    fn logit_gap_of_log3_gives_three_to_one() {
        // Logits (z/2, -z/2) for input 1 with z = log 3: p = 3/(3+1).
        let z = 3f64.ln();
        let net =
            Network::from_weights(Architecture::Linear, 1, 2, vec![z / 2.0, -z / 2.0, 0.0, 0.0])
                .unwrap();
        let p = PredictionModel::new(net)
            .predict_proba(&Instance::new(vec![1.0]).unwrap())
            .unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let model = PredictionModel::new(Network::new(Architecture::Linear, 2, 2, 0));
        assert!(model.predict_proba(&Instance::new(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn linear_binary_gradient_closed_form() {
        let weights = vec![0.7, -0.4, 0.2, -0.3, 0.9, 0.5, 0.1, -0.2];
        let net = Network::from_weights(Architecture::Linear, 3, 2, weights.clone()).unwrap();
        let model = PredictionModel::new(net);
        let x = Instance::new(vec![0.5, -1.0, 2.0]).unwrap();
        for y in 0..2 {
            let p = model.predict_proba(&x).unwrap()[y];
            let g = model.input_gradient(&x, Label(y)).unwrap();
            let other = 1 - y;
            for i in 0..3 {
                let expected = p * (1.0 - p) * (weights[y * 3 + i] - weights[other * 3 + i]);
                assert!((g[i] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn saturated_class_has_vanishing_gradient() {
        let net =
            Network::from_weights(Architecture::Linear, 1, 2, vec![40.0, -40.0, 0.0, 0.0]).unwrap();
        let model = PredictionModel::new(net);
        let g = model.input_gradient(&Instance::new(vec![1.0]).unwrap(), Label(0)).unwrap();
        assert!(g[0].abs() < 1e-6);
    }

    #[test]
    fn persisted_model_predicts_bitwise_identically() {
        let model = PredictionModel::new(Network::new(Architecture::TanhMlp { hidden: 7 }, 3, 3, 9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.weights");
        model.save(&path).unwrap();
        let back = PredictionModel::load(&path).unwrap();
        let x = Instance::new(vec![0.1, 0.2, -0.3]).unwrap();
        assert_eq!(model.predict_proba(&x).unwrap(), back.predict_proba(&x).unwrap());
    }
}
