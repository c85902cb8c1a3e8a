//! Amortized explainers queried with one forward pass: FastSHAP (per class),
//! FastSHAP-KL and REAL-X.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::masking::{cardinality_probabilities, binomial, enumerate_subsets, SamplerKind, SubsetMask, SubsetSampler};
use crate::models::TrainConfig;
use crate::nn::{Architecture, Network};
use crate::persist::WeightFile;
use crate::prob::{kl_divergence, AttributionMatrix, AttributionVector, Dataset, Instance, Label, PROB_FLOOR};
use crate::surrogate::{default_hidden_dim, ConditionalModel};
use crate::synthetic::sigmoid;

/// Decay of the REAL-X moving-average loss baseline.
pub const BASELINE_DECAY: f64 = 0.99;

/// Mean selection probability below which REAL-X training is reported as
/// having collapsed to the empty subset.
pub const DEGENERATE_SELECTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainerKind {
    FastShap,
    FastShapKl,
    RealX,
}

impl ExplainerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExplainerKind::FastShap => "fastshap",
            ExplainerKind::FastShapKl => "fastshap-kl",
            ExplainerKind::RealX => "real-x",
        }
    }

    pub fn takes_class(&self) -> bool {
        matches!(self, ExplainerKind::FastShap)
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fastshap" => Ok(ExplainerKind::FastShap),
            "fastshap-kl" => Ok(ExplainerKind::FastShapKl),
            "real-x" => Ok(ExplainerKind::RealX),
            other => Err(Error::InvalidArgument(format!("unknown explainer {other:?}"))),
        }
    }
}

/// How the per-instance subset expectation is estimated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMode {
    /// Fresh paired kernel draws each epoch.
    Sampled,
    /// Every non-trivial subset with its exact kernel weight (and, for
    /// FastSHAP, every class). Deterministic objective; small `d` only.
    Enumerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmortizedConfig {
    pub arch: Option<Architecture>,
    pub train: TrainConfig,
    pub subsets_per_instance: usize,
    pub subset_mode: SubsetMode,
}

impl Default for AmortizedConfig {
    fn default() -> Self {
        Self {
            arch: None,
            train: TrainConfig::default(),
            subsets_per_instance: 32,
            subset_mode: SubsetMode::Sampled,
        }
    }
}

impl AmortizedConfig {
    fn network(&self, input: usize, output: usize) -> Network {
        let arch = self.arch.unwrap_or(Architecture::TanhMlp {
            hidden: default_hidden_dim(input),
        });
        Network::new(arch, input, output, self.train.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmortizedLog {
    pub epoch_losses: Vec<f64>,
    /// REAL-X only: selections collapsed to the empty subset.
    pub degenerate_selection: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmortizedExplainer {
    kind: ExplainerKind,
    network: Network,
    num_classes: usize,
    subsets_per_instance: usize,
    lambda: f64,
    seed: u64,
}

impl AmortizedExplainer {
    pub fn kind(&self) -> ExplainerKind {
        self.kind
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Unnormalized network output.
    pub fn raw_output(&self, x: &Instance) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.dim())?;
        Ok(self.network.forward(x.features()))
    }

    /// REAL-X selection probabilities.
    pub fn selection_probabilities(&self, x: &Instance) -> Result<AttributionVector> {
        if self.kind != ExplainerKind::RealX {
            return Err(Error::InvalidArgument(format!("{} has no selection head", self.kind.name())));
        }
        AttributionVector::new(self.raw_output(x)?.into_iter().map(sigmoid).collect())
    }

    /// FastSHAP's full `d x K` output, each column efficiency-normalized.
    pub fn attribution_matrix(&self, model: &dyn ConditionalModel, x: &Instance) -> Result<AttributionMatrix> {
        if self.kind != ExplainerKind::FastShap {
            return Err(Error::InvalidArgument(format!("{} has a single output column", self.kind.name())));
        }
        let raw = self.raw_output(x)?;
        let (d, k) = (self.dim(), self.num_classes);
        let full = model.predict_full(x)?;
        let empty = model.predict_subset(x, &SubsetMask::empty(d))?;
        let mut out = vec![0.0; d * k];
        for y in 0..k {
            let col: Vec<f64> = (0..d).map(|i| raw[i * k + y]).collect();
            for (i, v) in normalize(&col, full[y] - empty[y]).into_iter().enumerate() {
                out[i * k + y] = v;
            }
        }
        AttributionMatrix::new(out, d, k)
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile::new(self.kind.name(), self.network.clone())
            .with_meta("classes", self.num_classes)
            .with_meta("subsets", self.subsets_per_instance)
            .with_meta("lambda", self.lambda)
            .with_meta("seed", self.seed)
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(&["fastshap", "fastshap-kl", "real-x"])?;
        let kind: ExplainerKind = file.kind.parse()?;
        let num_classes: usize = file.meta_value("classes")?;
        let expected = match kind {
            ExplainerKind::FastShap => file.network.input_dim() * num_classes,
            _ => file.network.input_dim(),
        };
        check_dim(expected, file.network.output_dim())?;
        Ok(Self {
            kind,
            num_classes,
            subsets_per_instance: file.meta_value("subsets")?,
            lambda: file.meta_value("lambda")?,
            seed: file.meta_value("seed")?,
            network: file.network,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(WeightFile::load(path)?)
    }
}

/// `phi + (total - sum(phi)) / d`.
fn normalize(phi: &[f64], total: f64) -> Vec<f64> {
    let shift = (total - phi.iter().sum::<f64>()) / phi.len() as f64;
    phi.iter().map(|p| p + shift).collect()
}

/// Gradient through [`normalize`]: `g - mean(g)`.
fn normalize_backward(grad: &mut [f64]) {
    let mean = grad.iter().sum::<f64>() / grad.len() as f64;
    grad.iter_mut().for_each(|g| *g -= mean);
}

/// One forward pass. `class` must be given for FastSHAP and only for it;
/// `model` supplies the efficiency totals and is not consulted by REAL-X.
pub fn amortized_explain(
    expl: &AmortizedExplainer,
    model: &dyn ConditionalModel,
    x: &Instance,
    class: Option<Label>,
) -> Result<AttributionVector> {
    match (expl.kind, class) {
        (ExplainerKind::FastShap, None) => Err(Error::InvalidArgument("fastshap requires a class".into())),
        (ExplainerKind::FastShap, Some(y)) => {
            if y.0 >= expl.num_classes {
                return Err(Error::InvalidArgument(format!("class {} out of range", y.0)));
            }
            Ok(expl.attribution_matrix(model, x)?.column(y))
        }
        (kind, Some(_)) => Err(Error::InvalidArgument(format!("{} takes no class", kind.name()))),
        (ExplainerKind::FastShapKl, None) => {
            let raw = expl.raw_output(x)?;
            let total = kl_total(model, x)?;
            AttributionVector::new(normalize(&raw, total))
        }
        (ExplainerKind::RealX, None) => expl.selection_probabilities(x),
    }
}

/// `v(1) - v(0)` of the negative-KL game.
fn kl_total(model: &dyn ConditionalModel, x: &Instance) -> Result<f64> {
    let full = model.predict_full(x)?;
    let empty = model.predict_subset(x, &SubsetMask::empty(x.dim()))?;
    kl_divergence(&full, &empty)
}

/// Weighted subsets for one epoch: enumeration with kernel weights, or
/// paired kernel draws with equal weights.
fn epoch_subsets(
    mode: SubsetMode,
    enumerated: &[(SubsetMask, f64)],
    sampler: &mut Option<SubsetSampler>,
    count: usize,
) -> Vec<(SubsetMask, f64)> {
    match mode {
        SubsetMode::Enumerate => enumerated.to_vec(),
        SubsetMode::Sampled => {
            let sampler = sampler.as_mut().expect("sampler exists in sampled mode");
            let pairs = count.div_ceil(2);
            let w = 1.0 / (2 * pairs) as f64;
            (0..pairs)
                .flat_map(|_| {
                    let s = sampler.sample();
                    [(s.complement(), w), (s, w)]
                })
                .collect()
        }
    }
}

fn kernel_enumeration(d: usize) -> Result<Vec<(SubsetMask, f64)>> {
    let mass = cardinality_probabilities(SamplerKind::ShapleyKernel, d);
    Ok(enumerate_subsets(d)?
        .into_iter()
        .filter(|s| !s.is_empty() && !s.is_full())
        .map(|s| {
            let w = mass[s.count()] / binomial(d, s.count());
            (s, w)
        })
        .collect())
}

fn validate(data: &Dataset, model: &dyn ConditionalModel, cfg: &AmortizedConfig) -> Result<()> {
    cfg.train.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    check_dim(model.dim(), data.dim())?;
    if data.dim() < 2 {
        return Err(Error::InvalidArgument("amortized explainers need d >= 2".into()));
    }
    if cfg.subsets_per_instance == 0 {
        return Err(Error::InvalidArgument("subsets_per_instance must be >= 1".into()));
    }
    Ok(())
}


/// Shuffled mini-batch loop. `row_step` returns a row's loss and writes the
/// loss gradient with respect to the network output into its buffer.
fn fit<F>(network: &mut Network, inputs: &[Instance], cfg: &TrainConfig, mut row_step: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64], &mut [f64], &mut ChaCha8Rng) -> Result<f64>,
{
    let mut rng = cfg.rng();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grad = vec![0.0; network.weights().len()];
    let mut grad_out = vec![0.0; network.output_dim()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &row in batch {
                let x = inputs[row].features();
                let trace = network.forward_trace(x);
                grad_out.iter_mut().for_each(|g| *g = 0.0);
                total += row_step(row, &trace.output, &mut grad_out, &mut rng)?;
                network.backward(x, &trace, &grad_out, &mut grad, None);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            network.step(&grad, cfg.learning_rate, cfg.l2_penalty);
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || network.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "explainer training diverged at epoch {epoch} (loss {mean})"
            )));
        }
        losses.push(mean);
    }
    Ok(losses)
}

fn subset_sampler(cfg: &AmortizedConfig, d: usize) -> Result<Option<SubsetSampler>> {
    match cfg.subset_mode {
        SubsetMode::Sampled => Ok(Some(SubsetSampler::new(
            SamplerKind::ShapleyKernel,
            d,
            cfg.train.seed ^ 0x51ab_5eed,
        )?)),
        SubsetMode::Enumerate => Ok(None),
    }
}

fn dot(s: &SubsetMask, phi: &[f64]) -> f64 {
    s.retained().map(|i| phi[i]).sum()
}

/// Trains `phi(x)` to minimize the kernel-weighted regression loss of the
/// negative-KL game, with efficiency normalization inside the objective.
pub fn train_fastshap_kl(
    model: &dyn ConditionalModel,
    data: &Dataset,
    cfg: &AmortizedConfig,
) -> Result<(AmortizedExplainer, AmortizedLog)> {
    validate(data, model, cfg)?;
    let d = data.dim();
    let fulls = data
        .instances()
        .iter()
        .map(|x| model.predict_full(x))
        .collect::<Result<Vec<_>>>()?;
    let totals = data
        .instances()
        .iter()
        .map(|x| kl_total(model, x))
        .collect::<Result<Vec<_>>>()?;
    let enumerated = kernel_enumeration(d)?;
    let mut sampler = subset_sampler(cfg, d)?;
    let mut network = cfg.network(d, d);
    let losses = fit(&mut network, data.instances(), &cfg.train, |row, out, grad, _| {
        let x = &data.instances()[row];
        let phi = normalize(out, totals[row]);
        let mut loss = 0.0;
        for (s, w) in epoch_subsets(cfg.subset_mode, &enumerated, &mut sampler, cfg.subsets_per_instance) {
            // v(s) - v(0) with v = -KL.
            let gain = totals[row] - kl_divergence(&fulls[row], &model.predict_subset(x, &s)?)?;
            let r = gain - dot(&s, &phi);
            loss += w * r * r;
            for i in s.retained() {
                grad[i] -= 2.0 * w * r;
            }
        }
        normalize_backward(grad);
        Ok(loss)
    })?;
    let expl = AmortizedExplainer {
        kind: ExplainerKind::FastShapKl,
        network,
        num_classes: data.num_classes(),
        subsets_per_instance: cfg.subsets_per_instance,
        lambda: 0.0,
        seed: cfg.train.seed,
    };
    Ok((expl, AmortizedLog { epoch_losses: losses, degenerate_selection: false }))
}

/// Trains a `d x K` head on the class-probability games, one uniformly drawn
/// class per sampled subset.
pub fn train_fastshap(
    model: &dyn ConditionalModel,
    data: &Dataset,
    cfg: &AmortizedConfig,
) -> Result<(AmortizedExplainer, AmortizedLog)> {
    validate(data, model, cfg)?;
    let (d, k) = (data.dim(), model.num_classes());
    let fulls = data
        .instances()
        .iter()
        .map(|x| model.predict_full(x))
        .collect::<Result<Vec<_>>>()?;
    let empties = data
        .instances()
        .iter()
        .map(|x| model.predict_subset(x, &SubsetMask::empty(d)))
        .collect::<Result<Vec<_>>>()?;
    let enumerated = kernel_enumeration(d)?;
    let mut sampler = subset_sampler(cfg, d)?;
    let mut network = cfg.network(d, d * k);
    let losses = fit(&mut network, data.instances(), &cfg.train, |row, out, grad, rng| {
        let x = &data.instances()[row];
        let columns: Vec<Vec<f64>> = (0..k)
            .map(|y| {
                let col: Vec<f64> = (0..d).map(|i| out[i * k + y]).collect();
                normalize(&col, fulls[row][y] - empties[row][y])
            })
            .collect();
        let mut col_grads = vec![vec![0.0; d]; k];
        let mut loss = 0.0;
        for (s, w) in epoch_subsets(cfg.subset_mode, &enumerated, &mut sampler, cfg.subsets_per_instance) {
            let sub = model.predict_subset(x, &s)?;
            let classes: Vec<(usize, f64)> = match cfg.subset_mode {
                SubsetMode::Enumerate => (0..k).map(|y| (y, w / k as f64)).collect(),
                SubsetMode::Sampled => vec![(rng.random_range(0..k), w)],
            };
            for (y, wy) in classes {
                let r = sub[y] - empties[row][y] - dot(&s, &columns[y]);
                loss += wy * r * r;
                for i in s.retained() {
                    col_grads[y][i] -= 2.0 * wy * r;
                }
            }
        }
        for (y, g) in col_grads.iter_mut().enumerate() {
            normalize_backward(g);
            for i in 0..d {
                grad[i * k + y] = g[i];
            }
        }
        Ok(loss)
    })?;
    let expl = AmortizedExplainer {
        kind: ExplainerKind::FastShap,
        network,
        num_classes: k,
        subsets_per_instance: cfg.subsets_per_instance,
        lambda: 0.0,
        seed: cfg.train.seed,
    };
    Ok((expl, AmortizedLog { epoch_losses: losses, degenerate_selection: false }))
}

/// Trains per-feature selection probabilities `pi(x)` to minimize the
/// expected masked log loss of the observed label plus `lambda * E|s|`, with
/// score-function gradients against a moving-average baseline.
pub fn train_real_x(
    model: &dyn ConditionalModel,
    data: &Dataset,
    cfg: &AmortizedConfig,
    lambda: f64,
) -> Result<(AmortizedExplainer, AmortizedLog)> {
    validate(data, model, cfg)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let d = data.dim();
    let all_subsets = match cfg.subset_mode {
        SubsetMode::Enumerate => enumerate_subsets(d)?,
        SubsetMode::Sampled => Vec::new(),
    };
    let mut baseline: Option<f64> = None;
    let mut network = cfg.network(d, d);
    let losses = fit(&mut network, data.instances(), &cfg.train, |row, out, grad, rng| {
        let (x, y) = (&data.instances()[row], data.labels()[row]);
        let pi: Vec<f64> = out.iter().map(|&a| sigmoid(a)).collect();
        let nll = |s: &SubsetMask| -> Result<f64> {
            Ok(-model.predict_subset(x, s)?.prob(y).max(PROB_FLOOR).ln())
        };
        // Weighted draws (s, P or 1/m) of the selection distribution.
        let draws: Vec<(SubsetMask, f64)> = match cfg.subset_mode {
            SubsetMode::Enumerate => all_subsets
                .iter()
                .map(|s| {
                    let p = (0..d).map(|i| if s.get(i) { pi[i] } else { 1.0 - pi[i] }).product();
                    (s.clone(), p)
                })
                .collect(),
            SubsetMode::Sampled => {
                let m = cfg.subsets_per_instance;
                (0..m)
                    .map(|_| {
                        let bits = pi.iter().map(|&p| rng.random::<f64>() < p).collect();
                        (SubsetMask::new(bits), 1.0 / m as f64)
                    })
                    .collect()
            }
        };
        let scored = draws
            .into_iter()
            .map(|(s, w)| Ok((nll(&s)?, s, w)))
            .collect::<Result<Vec<_>>>()?;
        let expected: f64 = scored.iter().map(|(l, _, w)| w * l).sum();
        let b = *baseline.get_or_insert(expected);
        for (l, s, w) in &scored {
            for i in 0..d {
                let si = if s.get(i) { 1.0 } else { 0.0 };
                grad[i] += w * (l - b) * (si - pi[i]);
            }
        }
        for i in 0..d {
            grad[i] += lambda * pi[i] * (1.0 - pi[i]);
        }
        baseline = Some(BASELINE_DECAY * b + (1.0 - BASELINE_DECAY) * expected);
        Ok(expected + lambda * pi.iter().sum::<f64>())
    })?;
    let expl = AmortizedExplainer {
        kind: ExplainerKind::RealX,
        network,
        num_classes: model.num_classes(),
        subsets_per_instance: cfg.subsets_per_instance,
        lambda,
        seed: cfg.train.seed,
    };
    let mut mean_selection = 0.0;
    for x in data.instances() {
        mean_selection += expl.selection_probabilities(x)?.sum() / d as f64;
    }
    mean_selection /= data.len() as f64;
    let log = AmortizedLog {
        epoch_losses: losses,
        degenerate_selection: mean_selection < DEGENERATE_SELECTION,
    };
    Ok((expl, log))
}
