//! Subset value functions `v_x(s)` and the cooperative-game view used by the
//! Shapley estimators.

use crate::error::{check_dim, Error, Result};
use crate::masking::SubsetMask;
use crate::prob::{kl_divergence, ClassDistribution, Instance, Label};
use crate::surrogate::ConditionalModel;

/// A set function over `d` players.
pub trait Game {
    fn num_players(&self) -> usize;

    fn value(&self, s: &SubsetMask) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// `p(y | m(x, s))` for a fixed class.
    ClassProbability(Label),
    /// `-KL(p(. | x) || p(. | m(x, s)))`.
    KlDivergence,
}

#[derive(Clone, Copy)]
pub struct ValueFunction<'a> {
    model: &'a dyn ConditionalModel,
    kind: ValueKind,
}

impl<'a> ValueFunction<'a> {
    pub fn class_probability(model: &'a dyn ConditionalModel, class: Label) -> Result<Self> {
        if class.0 >= model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "class {} out of range for K = {}",
                class.0,
                model.num_classes()
            )));
        }
        Ok(Self {
            model,
            kind: ValueKind::ClassProbability(class),
        })
    }

    pub fn kl_divergence(model: &'a dyn ConditionalModel) -> Self {
        Self {
            model,
            kind: ValueKind::KlDivergence,
        }
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn model(&self) -> &'a dyn ConditionalModel {
        self.model
    }

    /// The game `s -> v_x(s)` for one instance.
    pub fn at(&self, x: &'a Instance) -> Result<BoundValue<'a>> {
        check_dim(self.model.dim(), x.dim())?;
        let full = match self.kind {
            ValueKind::KlDivergence => Some(self.model.predict_full(x)?),
            ValueKind::ClassProbability(_) => None,
        };
        Ok(BoundValue {
            vf: *self,
            x,
            full,
        })
    }
}

/// A value function bound to an instance, with `p(. | x)` cached for the KL kind.
pub struct BoundValue<'a> {
    vf: ValueFunction<'a>,
    x: &'a Instance,
    full: Option<ClassDistribution>,
}

impl BoundValue<'_> {
    pub fn instance(&self) -> &Instance {
        self.x
    }
}

impl Game for BoundValue<'_> {
    fn num_players(&self) -> usize {
        self.x.dim()
    }

    fn value(&self, s: &SubsetMask) -> Result<f64> {
        let sub = self.vf.model.predict_subset(self.x, s)?;
        match self.vf.kind {
            ValueKind::ClassProbability(y) => Ok(sub.prob(y)),
            ValueKind::KlDivergence => {
                let full = self.full.as_ref().expect("cached at bind time");
                Ok(-kl_divergence(full, &sub)?)
            }
        }
    }
}

/// `p(y | m(x, s))`.
pub fn value_prob(
    model: &dyn ConditionalModel,
    x: &Instance,
    y: Label,
    s: &SubsetMask,
) -> Result<f64> {
    ValueFunction::class_probability(model, y)?.at(x)?.value(s)
}

/// `-KL(p(. | x) || p(. | m(x, s)))`.
pub fn value_kl(model: &dyn ConditionalModel, x: &Instance, s: &SubsetMask) -> Result<f64> {
    ValueFunction::kl_divergence(model).at(x)?.value(s)
}
