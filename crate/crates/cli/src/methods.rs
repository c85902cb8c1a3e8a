//! Attribution methods addressable by id, and the rules tying each to a
//! class source.

use std::path::Path;

use rayon::prelude::*;

use attrib_core::amortized::{amortized_explain, AmortizedExplainer, ExplainerKind};
use attrib_core::evaluation::{optimal_explainer_bruteforce, random_attribution, Grid};
use attrib_core::gradient::{intgrad, smoothgrad, GradConfig};
use attrib_core::masking::SamplerKind;
use attrib_core::models::PredictionModel;
use attrib_core::prob::{AttributionVector, Dataset, Instance, Label};
use attrib_core::shapley::{lime, shap, shap_kl, shap_s, KernelShapConfig, LimeConfig};
use attrib_core::surrogate::{ConditionalModel, ConditionalOracle, SurrogateModel};
use attrib_core::synthetic::{lemma1_adversary, lemma3_adversary};

use crate::config::ProcessSection;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Shap,
    ShapS,
    ShapKl,
    Lime,
    FastShap,
    FastShapKl,
    RealX,
    SmoothGrad,
    IntGrad,
    Lemma1Adversary,
    Lemma3Adversary,
    OptimalBruteforce,
    Random,
}

pub const METHODS: [Method; 13] = [
    Method::Shap,
    Method::ShapS,
    Method::ShapKl,
    Method::Lime,
    Method::FastShap,
    Method::FastShapKl,
    Method::RealX,
    Method::SmoothGrad,
    Method::IntGrad,
    Method::Lemma1Adversary,
    Method::Lemma3Adversary,
    Method::OptimalBruteforce,
    Method::Random,
];

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Shap => "shap",
            Method::ShapS => "shap-s",
            Method::ShapKl => "shap-kl",
            Method::Lime => "lime",
            Method::FastShap => "fastshap",
            Method::FastShapKl => "fastshap-kl",
            Method::RealX => "real-x",
            Method::SmoothGrad => "smoothgrad",
            Method::IntGrad => "intgrad",
            Method::Lemma1Adversary => "lemma1-adversary",
            Method::Lemma3Adversary => "lemma3-adversary",
            Method::OptimalBruteforce => "optimal-bruteforce",
            Method::Random => "random",
        }
    }

    /// Whether the method explains a chosen class.
    pub fn class_dependent(&self) -> bool {
        !matches!(
            self,
            Method::ShapKl | Method::FastShapKl | Method::RealX | Method::OptimalBruteforce | Method::Random
        )
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        METHODS
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSource {
    None,
    TrueLabel,
    Predicted,
}

impl std::str::FromStr for ClassSource {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "none" => Ok(ClassSource::None),
            "true-label" => Ok(ClassSource::TrueLabel),
            "predicted" => Ok(ClassSource::Predicted),
            other => Err(CliError::Usage(format!("unknown class-source {other:?}"))),
        }
    }
}

/// Class-dependent methods need a class; class-independent ones reject one.
pub fn check_class_source(method: Method, source: ClassSource) -> Result<(), CliError> {
    match (method.class_dependent(), source) {
        (true, ClassSource::None) => Err(CliError::Usage(format!(
            "{} is class-dependent and needs class-source true-label or predicted",
            method.name()
        ))),
        (false, ClassSource::TrueLabel | ClassSource::Predicted) => Err(CliError::Usage(format!(
            "{} takes no class; use class-source none",
            method.name()
        ))),
        _ => Ok(()),
    }
}

/// A surrogate from a weight file, or the exact conditionals of a process.
pub enum Conditional {
    Oracle(ConditionalOracle),
    Surrogate(SurrogateModel),
}

impl Conditional {
    pub fn resolve(source: &str, process: Option<&ProcessSection>) -> Result<Self, CliError> {
        if source == "oracle" {
            let p = process.ok_or_else(|| CliError::Usage("conditional = \"oracle\" needs a [process] section".into()))?;
            Ok(Conditional::Oracle(ConditionalOracle::new(p.build()?)))
        } else {
            let path = Path::new(source);
            if !path.exists() {
                return Err(CliError::Usage(format!("surrogate file {source:?} not found")));
            }
            Ok(Conditional::Surrogate(SurrogateModel::load(path)?))
        }
    }

    pub fn as_dyn(&self) -> &dyn ConditionalModel {
        match self {
            Conditional::Oracle(o) => o,
            Conditional::Surrogate(s) => s,
        }
    }
}

/// Whatever a method may need, loaded up front.
pub struct MethodContext<'a> {
    pub model: Option<&'a PredictionModel>,
    pub conditional: Option<&'a dyn ConditionalModel>,
    pub explainer: Option<&'a AmortizedExplainer>,
    pub num_samples: Option<usize>,
    pub kernel_width: f64,
    pub ridge: f64,
    pub noise_sigma: f64,
    pub baseline: Option<Instance>,
    pub grid: Grid,
    pub seed: u64,
}

impl MethodContext<'_> {
    fn model(&self, m: Method) -> Result<&PredictionModel, CliError> {
        self.model
            .ok_or_else(|| CliError::Usage(format!("{} needs a prediction model (model = ...)", m.name())))
    }

    fn conditional(&self, m: Method) -> Result<&dyn ConditionalModel, CliError> {
        self.conditional
            .ok_or_else(|| CliError::Usage(format!("{} needs a conditional model (conditional = ...)", m.name())))
    }

    fn explainer(&self, m: Method, kind: ExplainerKind) -> Result<&AmortizedExplainer, CliError> {
        let e = self
            .explainer
            .ok_or_else(|| CliError::Usage(format!("{} needs a trained explainer (explainer = ...)", m.name())))?;
        if e.kind() != kind {
            return Err(CliError::Usage(format!("explainer file holds {}, not {}", e.kind().name(), kind.name())));
        }
        Ok(e)
    }

    /// Fails early on missing inputs so no work is done before a usage error.
    pub fn check(&self, m: Method) -> Result<(), CliError> {
        match m {
            Method::Shap | Method::SmoothGrad | Method::IntGrad => self.model(m).map(|_| ()),
            Method::ShapS | Method::ShapKl | Method::Lime | Method::OptimalBruteforce => {
                self.conditional(m).map(|_| ())
            }
            Method::FastShap => self.conditional(m).and(self.explainer(m, ExplainerKind::FastShap).map(|_| ())),
            Method::FastShapKl => {
                self.conditional(m).and(self.explainer(m, ExplainerKind::FastShapKl).map(|_| ()))
            }
            Method::RealX => self.explainer(m, ExplainerKind::RealX).map(|_| ()),
            Method::Lemma1Adversary | Method::Lemma3Adversary | Method::Random => Ok(()),
        }
    }

    fn kernel(&self, seed: u64) -> KernelShapConfig {
        KernelShapConfig {
            num_samples: self.num_samples.unwrap_or(KernelShapConfig::default().num_samples),
            seed,
        }
    }

    fn grad(&self, seed: u64) -> GradConfig {
        GradConfig {
            num_samples: self.num_samples.unwrap_or(GradConfig::default().num_samples),
            noise_sigma: self.noise_sigma,
            baseline: self.baseline.clone(),
            seed,
        }
    }

    /// Attribution of one instance; `seed` is already instance-specific.
    pub fn explain_one(&self, m: Method, x: &Instance, class: Option<Label>, seed: u64) -> Result<AttributionVector, CliError> {
        let need_class = || class.ok_or_else(|| CliError::Usage(format!("{} needs a class", m.name())));
        let e = match m {
            Method::Shap => shap(self.model(m)?, x, need_class()?, &self.kernel(seed))?.phi,
            Method::ShapS => shap_s(self.conditional(m)?, x, need_class()?, &self.kernel(seed))?.phi,
            Method::ShapKl => shap_kl(self.conditional(m)?, x, &self.kernel(seed))?.phi,
            Method::Lime => {
                let cfg = LimeConfig {
                    num_samples: self.num_samples.unwrap_or(LimeConfig::default().num_samples),
                    kernel_width: self.kernel_width,
                    ridge: self.ridge,
                    sampler: SamplerKind::UniformCardinality,
                    seed,
                };
                lime(self.conditional(m)?, x, need_class()?, &cfg)?
            }
            Method::FastShap => amortized_explain(
                self.explainer(m, ExplainerKind::FastShap)?,
                self.conditional(m)?,
                x,
                Some(need_class()?),
            )?,
            Method::FastShapKl => {
                amortized_explain(self.explainer(m, ExplainerKind::FastShapKl)?, self.conditional(m)?, x, None)?
            }
            Method::RealX => self.explainer(m, ExplainerKind::RealX)?.selection_probabilities(x)?,
            Method::SmoothGrad => smoothgrad(self.model(m)?, x, need_class()?, &self.grad(seed))?,
            Method::IntGrad => intgrad(self.model(m)?, x, need_class()?, &self.grad(seed))?,
            Method::Lemma1Adversary => {
                if x.dim() != 2 {
                    return Err(CliError::Usage("lemma1-adversary needs d = 2".into()));
                }
                lemma1_adversary(x, need_class()?)
            }
            Method::Lemma3Adversary => {
                if x.dim() != 2 {
                    return Err(CliError::Usage("lemma3-adversary needs d = 2".into()));
                }
                need_class()?;
                lemma3_adversary(x)
            }
            Method::OptimalBruteforce => optimal_explainer_bruteforce(self.conditional(m)?, x, &self.grid)?,
            Method::Random => random_attribution(x.dim(), seed),
        };
        Ok(e)
    }

    /// All instances in parallel; instance `i` uses seed `seed ^ i`.
    pub fn explain_all(
        &self,
        m: Method,
        data: &Dataset,
        classes: &[Option<Label>],
    ) -> Result<Vec<AttributionVector>, CliError> {
        self.check(m)?;
        (0..data.len())
            .into_par_iter()
            .map(|i| self.explain_one(m, &data.instances()[i], classes[i], self.seed ^ i as u64))
            .collect()
    }
}

/// Classes per instance for a class source. Predicted classes come from the
/// prediction model when one is given, otherwise from the conditional model
/// on the full input.
pub fn classes_for(
    source: ClassSource,
    data: &Dataset,
    model: Option<&PredictionModel>,
    conditional: Option<&dyn ConditionalModel>,
) -> Result<Vec<Option<Label>>, CliError> {
    match source {
        ClassSource::None => Ok(vec![None; data.len()]),
        ClassSource::TrueLabel => Ok(data.labels().iter().map(|&y| Some(y)).collect()),
        ClassSource::Predicted => data
            .instances()
            .iter()
            .map(|x| {
                let y = match (model, conditional) {
                    (Some(m), _) => m.predicted_class(x)?,
                    (None, Some(c)) => c.predict_full(x)?.argmax(),
                    (None, None) => {
                        return Err(CliError::Usage(
                            "class-source predicted needs a model or a conditional model".into(),
                        ))
                    }
                };
                Ok(Some(y))
            })
            .collect(),
    }
}
