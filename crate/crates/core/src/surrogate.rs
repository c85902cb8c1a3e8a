//! Conditional models `p(y | m(x, s))`: the trained surrogate, the exact
//! oracle for synthetic processes, and the zero-baseline view of a raw model.

use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::masking::{
    binomial, enumerate_subsets, mask, SamplerKind, SubsetMask, SubsetSampler,
};
use crate::models::{fit_softmax, PredictionModel, TrainConfig, TrainingLog};
use crate::nn::{Architecture, Network};
use crate::persist::WeightFile;
use crate::prob::{ClassDistribution, Dataset, Instance};
use crate::synthetic::SyntheticProcess;

/// Anything that predicts the label from a masked input.
pub trait ConditionalModel: Send + Sync {
    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn predict_subset(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution>;

    fn predict_full(&self, x: &Instance) -> Result<ClassDistribution> {
        self.predict_subset(x, &SubsetMask::full(self.dim()))
    }
}

/// Hidden width of the default surrogate backbone.
pub fn default_hidden_dim(dim: usize) -> usize {
    (4 * dim).max(16)
}

/// A classifier over `values ++ indicator` trained on randomly masked inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    backbone: PredictionModel,
    dim: usize,
}

impl SurrogateModel {
    pub const KIND: &'static str = "surrogate";

    pub fn from_backbone(backbone: PredictionModel) -> Result<Self> {
        let input = backbone.input_dim();
        if !input.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "surrogate backbone must take values and indicator (2d inputs)".into(),
            ));
        }
        Ok(Self {
            backbone,
            dim: input / 2,
        })
    }

    pub fn backbone(&self) -> &PredictionModel {
        &self.backbone
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile::new(Self::KIND, self.backbone.network().clone()).with_meta("d", self.dim)
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(&[Self::KIND])?;
        Self::from_backbone(PredictionModel::new(file.network))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(WeightFile::load(path)?)
    }
}

impl ConditionalModel for SurrogateModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.backbone.num_classes()
    }

    fn predict_subset(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        check_dim(self.dim, x.dim())?;
        self.backbone.predict_raw(&mask(x, s)?.to_model_input())
    }
}

/// Trains a surrogate on `data`, drawing a fresh mask from `sampler` for each
/// instance in each epoch.
pub fn train_surrogate(
    data: &Dataset,
    sampler: SubsetSampler,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(SurrogateModel, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    check_dim(data.dim(), sampler.dim())?;
    if sampler.kind() == SamplerKind::ShapleyKernel {
        return Err(Error::InvalidArgument(
            "surrogate training needs a sampler with full subset support".into(),
        ));
    }
    let mut sampler = sampler;
    let mut network = Network::new(arch, 2 * data.dim(), data.num_classes(), cfg.seed);
    let log = fit_softmax(&mut network, data.labels(), cfg, |row, _| {
        let s = sampler.sample();
        mask(&data.instances()[row], &s)
            .expect("sampler dimension checked")
            .to_model_input()
    })?;
    let surrogate = SurrogateModel::from_backbone(PredictionModel::new(network))?;
    Ok((surrogate, log))
}

/// Exact `F(y | x_s)` of a synthetic process.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalOracle {
    process: SyntheticProcess,
}

impl ConditionalOracle {
    pub fn new(process: SyntheticProcess) -> Self {
        Self { process }
    }

    pub fn process(&self) -> &SyntheticProcess {
        &self.process
    }

    pub fn analytic_conditional(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        self.process.conditional(x, s)
    }
}

impl ConditionalModel for ConditionalOracle {
    fn dim(&self) -> usize {
        self.process.dim()
    }

    fn num_classes(&self) -> usize {
        self.process.num_classes()
    }

    fn predict_subset(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        self.process.conditional(x, s)
    }
}

/// A raw prediction model whose removed features are replaced by zero, with
/// no indicator channel.
#[derive(Debug, Clone, Copy)]
pub struct ZeroBaseline<'a>(pub &'a PredictionModel);

impl ConditionalModel for ZeroBaseline<'_> {
    fn dim(&self) -> usize {
        self.0.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn predict_subset(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        self.0.predict_raw(mask(x, s)?.values())
    }
}

/// `sum_x P(x) sum_s p(s) H(F(y | x_s))`: the optimum of the masked training
/// objective for a discrete process under `kind`.
pub fn masked_conditional_entropy(process: &SyntheticProcess, kind: SamplerKind) -> Result<f64> {
    let support = process
        .support()
        .ok_or_else(|| Error::Unsupported(format!("{} has no finite support", process.name())))?;
    let d = process.dim();
    let size_probs = crate::masking::cardinality_probabilities(kind, d);
    let mut total = 0.0;
    for (x, px) in &support {
        for s in enumerate_subsets(d)? {
            let ps = size_probs[s.count()] / binomial(d, s.count());
            if ps > 0.0 {
                total += px * ps * process.conditional(x, &s)?.entropy();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_process_tables() {
        let o = ConditionalOracle::new(SyntheticProcess::lemma3());
        let x = Instance::new(vec![0.0, 1.0]).unwrap();
        let only_x2 = o.predict_subset(&x, &SubsetMask::parse("01").unwrap()).unwrap();
        assert!((only_x2[0] - 0.5).abs() < 1e-15);
        assert_eq!(o.dim(), 2);
        assert_eq!(o.num_classes(), 3);
    }

    #[test]
    fn zero_baseline_replaces_removed_features() {
        let net = Network::from_weights(Architecture::Linear, 2, 2, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let model = PredictionModel::new(net);
        let view = ZeroBaseline(&model);
        let x = Instance::new(vec![2.0, 3.0]).unwrap();
        let empty = view.predict_subset(&x, &SubsetMask::empty(2)).unwrap();
        assert_eq!(empty, ClassDistribution::uniform(2));
        let kept = view.predict_subset(&x, &SubsetMask::parse("10").unwrap()).unwrap();
        assert_eq!(kept, model.predict_proba(&Instance::new(vec![2.0, 0.0]).unwrap()).unwrap());
    }

    #[test]
    fn surrogate_rejects_kernel_sampler_and_round_trips() {
        let data = SyntheticProcess::lemma3().sample(200, 1).unwrap();
        let kernel = SubsetSampler::new(SamplerKind::ShapleyKernel, 2, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let arch = Architecture::TanhMlp { hidden: 16 };
        assert!(train_surrogate(&data, kernel, arch, &cfg).is_err());

        let sampler = SubsetSampler::new(SamplerKind::UniformCardinality, 2, 0).unwrap();
        let (surr, log) = train_surrogate(&data, sampler.clone(), arch, &cfg).unwrap();
        assert_eq!(log.epoch_losses.len(), 2);
        let (again, _) = train_surrogate(&data, sampler, arch, &cfg).unwrap();
        assert_eq!(surr, again);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.weights");
        surr.save(&path).unwrap();
        let back = SurrogateModel::load(&path).unwrap();
        let x = Instance::new(vec![1.0, 0.0]).unwrap();
        for s in enumerate_subsets(2).unwrap() {
            assert_eq!(surr.predict_subset(&x, &s).unwrap(), back.predict_subset(&x, &s).unwrap());
        }
        assert!(surr.predict_subset(&Instance::new(vec![1.0]).unwrap(), &SubsetMask::full(1)).is_err());
    }

    #[test]
    fn masked_entropy_bounds() {
        let p = SyntheticProcess::lemma3();
        let h = masked_conditional_entropy(&p, SamplerKind::UniformCardinality).unwrap();
        let marginal = p.conditional(&Instance::new(vec![0.0, 0.0]).unwrap(), &SubsetMask::empty(2)).unwrap();
        assert!(h > 0.0 && h < marginal.entropy());
        assert!(masked_conditional_entropy(&SyntheticProcess::lemma1(), SamplerKind::UniformCardinality).is_err());
    }
}
