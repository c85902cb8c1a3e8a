//! Numeric domain types and the information-theoretic primitives shared by
//! every explainer and by the evaluation protocol.

use crate::error::{check_dim, Error, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`ClassDistribution`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A feature vector `x` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance(Vec<f64>);

impl Instance {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("instance must have d >= 1".into()));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feature {i} is not finite ({})",
                features[i]
            )));
        }
        Ok(Self(features))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Instance {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A zero-based class index; one-based labels `1..=K` map to `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Paired instances and labels sharing dimensions `d` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    labels: Vec<Label>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        instances: Vec<Instance>,
        labels: Vec<Label>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument("K must be at least 2".into()));
        }
        check_dim(instances.len(), labels.len())?;
        for x in &instances {
            check_dim(dim, x.dim())?;
        }
        if let Some(y) = labels.iter().find(|y| y.0 >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for K = {num_classes}",
                y.0
            )));
        }
        Ok(Self {
            instances,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Instance, Label)> + '_ {
        self.instances.iter().zip(self.labels.iter().copied())
    }

    /// Empirical label marginal.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_classes];
        for y in &self.labels {
            counts[y.0] += 1.0;
        }
        let n = self.len().max(1) as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        counts
    }
}

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Softmax of unnormalized log-probabilities.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self(probs)
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, y: Label) -> f64 {
        self.0[y.0]
    }

    /// Most probable class, ties toward the lowest index.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        Label(best)
    }

    pub fn total_variation(&self, other: &ClassDistribution) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.max(PROB_FLOOR).ln())
            .sum::<f64>()
    }
}

impl std::ops::Index<usize> for ClassDistribution {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Per-feature attribution scores `e(x)` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector(Vec<f64>);

impl AttributionVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite attribution {s}")));
        }
        Ok(Self(scores))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for AttributionVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-class attributions, a `d x K` matrix stored row-major by feature.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    values: Vec<f64>,
    dim: usize,
    num_classes: usize,
}

impl AttributionMatrix {
    pub fn new(values: Vec<f64>, dim: usize, num_classes: usize) -> Result<Self> {
        check_dim(dim * num_classes, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite attribution".into()));
        }
        Ok(Self {
            values,
            dim,
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, feature: usize, class: usize) -> f64 {
        self.values[feature * self.num_classes + class]
    }

    pub fn column(&self, class: Label) -> AttributionVector {
        AttributionVector(
            (0..self.dim)
                .map(|i| self.get(i, class.0))
                .collect(),
        )
    }
}

/// `KL(p || q) = sum_i p_i log(p_i / q_i)` with `0 log(0/q) = 0`.
///
/// Fails when `q` has an exact zero where `p` is positive; otherwise both
/// arguments of the logarithm are clamped to the probability floor.
pub fn kl_divergence(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    check_dim(p.num_classes(), q.num_classes())?;
    let mut total = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Domain(
                "KL divergence is infinite: q has a zero where p is positive".into(),
            ));
        }
        total += pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln());
    }
    Ok(total.max(0.0))
}

/// `log p_y`, floored so the result is always finite.
pub fn log_likelihood(p: &ClassDistribution, y: Label) -> f64 {
    p.prob(y).max(PROB_FLOOR).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(p: &[f64]) -> ClassDistribution {
        ClassDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_point_mass_against_uniform() {
        let kl = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(kl, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_three_class_matches_direct_sum() {
        let p = [0.75, 0.125, 0.125];
        let direct: f64 = p.iter().map(|&pi| pi * (pi / (1.0f64 / 3.0)).ln()).sum();
        let kl = kl_divergence(&dist(&p), &dist(&[1.0 / 3.0; 3])).unwrap();
        assert_abs_diff_eq!(kl, direct, epsilon = 1e-14);
        assert_abs_diff_eq!(kl, 0.3629903489, epsilon = 1e-9);
    }

    #[test]
    fn kl_structural_zero_is_a_domain_error() {
        let err = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn log_likelihood_cases() {
        assert_eq!(log_likelihood(&dist(&[1.0, 0.0]), Label(0)), 0.0);
        assert_abs_diff_eq!(
            log_likelihood(&dist(&[0.5, 0.5]), Label(1)),
            -std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let floored = log_likelihood(&dist(&[0.0, 1.0]), Label(0));
        assert!(floored.is_finite());
        assert_eq!(floored, PROB_FLOOR.ln());
    }

    #[test]
    fn distribution_validation() {
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassDistribution::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(dist(&[0.2, 0.8]).argmax(), Label(1));
        assert_eq!(dist(&[0.5, 0.5]).argmax(), Label(0));
    }

    #[test]
    fn dataset_rejects_bad_shapes() {
        let x = Instance::new(vec![1.0, 2.0]).unwrap();
        assert!(Dataset::new(vec![x.clone()], vec![], 2, 2).is_err());
        assert!(Dataset::new(vec![x.clone()], vec![Label(2)], 2, 2).is_err());
        assert!(Dataset::new(vec![x], vec![Label(1)], 3, 2).is_err());
        assert!(Instance::new(vec![f64::NAN]).is_err());
        assert!(Instance::new(vec![]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn distribution(k: usize) -> impl Strategy<Value = ClassDistribution> {
            proptest::collection::vec(0.01f64..1.0, k).prop_map(|w| {
                let total: f64 = w.iter().sum();
                ClassDistribution::new(w.iter().map(|v| v / total).collect()).unwrap()
            })
        }

        proptest! {
            #[test]
            fn kl_is_non_negative((p, q) in (2usize..6).prop_flat_map(|k| (distribution(k), distribution(k)))) {
                let kl = kl_divergence(&p, &q).unwrap();
                prop_assert!(kl >= 0.0);
                prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
            }

            #[test]
            fn softmax_is_normalized(logits in proptest::collection::vec(-30.0f64..30.0, 2..8)) {
                let p = ClassDistribution::from_logits(&logits);
                prop_assert!(ClassDistribution::new(p.probs().to_vec()).is_ok());
            }
        }
    }
}
