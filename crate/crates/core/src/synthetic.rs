//! Synthetic data-generating processes with exact conditionals, and the
//! adversarial explainers built on two of them.
//!
//! * `lemma1`: `x1 ~ U(0,1)`, `x2 = 1/2`, `y ~ Bernoulli((x1 + x2) / 2)`.
//! * `lemma3`: `x1 ~ Bernoulli(0.8)`, `x2 ~ Bernoulli(0.5)`, three classes with
//!   `P(y = 0 | x) = max((x1 - x2) / 2, 0) + 1/2` and the rest split evenly.
//! * `linear-gaussian`: `x ~ N(0, I)`, `y ~ Bernoulli(sigmoid(b + w.x))`.
//! * `dummy-feature`: two independent binary features, `y` depends on `x1` only.
//! * `table`: independent binary features with an arbitrary `F(y | x)` table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::masking::{SubsetMask, MAX_ENUMERATION_DIM};
use crate::prob::{AttributionVector, ClassDistribution, Dataset, Instance, Label};
use crate::quadrature::{default_rule, GaussLegendre};

/// The constant value of the second feature in the `lemma1` process.
pub const LEMMA1_X2: f64 = 0.5;

/// Half-width of the standard-normal integration window.
const GAUSSIAN_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Lemma1,
    Lemma3,
    LinearGaussian,
    DummyFeature,
    Table,
}

impl ProcessKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessKind::Lemma1 => "lemma1",
            ProcessKind::Lemma3 => "lemma3",
            ProcessKind::LinearGaussian => "linear-gaussian",
            ProcessKind::DummyFeature => "dummy-feature",
            ProcessKind::Table => "table",
        }
    }
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma1" => ProcessKind::Lemma1,
            "lemma3" => ProcessKind::Lemma3,
            "linear-gaussian" => ProcessKind::LinearGaussian,
            "dummy-feature" => ProcessKind::DummyFeature,
            "table" => ProcessKind::Table,
            other => return Err(Error::Unsupported(format!("unknown process {other:?}"))),
        })
    }
}

/// Independent binary features with an explicit conditional table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProcess {
    rates: Vec<f64>,
    table: Vec<ClassDistribution>,
    num_classes: usize,
}

impl DiscreteProcess {
    /// `rates[i] = P(x_i = 1)`; `table[j]` is `F(y | x)` for the input whose
    /// bit string (feature 0 most significant) encodes `j`.
    pub fn new(rates: Vec<f64>, table: Vec<ClassDistribution>) -> Result<Self> {
        let d = rates.len();
        if d == 0 || d > MAX_ENUMERATION_DIM {
            return Err(Error::InvalidArgument(format!("discrete process with d = {d}")));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("feature rates must lie in [0, 1]".into()));
        }
        check_dim(1 << d, table.len())?;
        let num_classes = table[0].num_classes();
        if num_classes < 2 || table.iter().any(|t| t.num_classes() != num_classes) {
            return Err(Error::InvalidArgument("inconsistent class counts in table".into()));
        }
        Ok(Self {
            rates,
            table,
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    fn value_prob(&self, i: usize, value: bool) -> f64 {
        if value {
            self.rates[i]
        } else {
            1.0 - self.rates[i]
        }
    }

    fn bits_of(&self, x: &Instance, s: &SubsetMask) -> Result<Vec<bool>> {
        let mut bits = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            if !s.get(i) {
                bits.push(false);
                continue;
            }
            let v = x[i];
            let bit = if v == 1.0 {
                true
            } else if v == 0.0 {
                false
            } else {
                return Err(Error::Domain(format!("feature {i} = {v} is not binary")));
            };
            if self.value_prob(i, bit) == 0.0 {
                return Err(Error::Domain(format!("feature {i} = {v} has zero probability")));
            }
            bits.push(bit);
        }
        Ok(bits)
    }

    /// Exact `F(y | x_s)` by enumerating the masked features.
    pub fn conditional(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        let d = self.dim();
        check_dim(d, x.dim())?;
        check_dim(d, s.dim())?;
        let bits = self.bits_of(x, s)?;
        let masked: Vec<usize> = (0..d).filter(|&i| !s.get(i)).collect();
        let mut probs = vec![0.0; self.num_classes];
        for assignment in 0..1u64 << masked.len() {
            let mut full = bits.clone();
            let mut weight = 1.0;
            for (j, &i) in masked.iter().enumerate() {
                let bit = (assignment >> (masked.len() - 1 - j)) & 1 == 1;
                full[i] = bit;
                weight *= self.value_prob(i, bit);
            }
            if weight == 0.0 {
                continue;
            }
            let row = &self.table[SubsetMask::new(full).index() as usize];
            for (p, t) in probs.iter_mut().zip(row.probs()) {
                *p += weight * t;
            }
        }
        ClassDistribution::new(probs)
    }

    /// Every input with positive probability, with that probability.
    pub fn support(&self) -> Vec<(Instance, f64)> {
        let d = self.dim();
        (0..1u64 << d)
            .filter_map(|j| {
                let m = SubsetMask::from_index(j, d);
                let p: f64 = (0..d).map(|i| self.value_prob(i, m.get(i))).product();
                (p > 0.0).then(|| (Instance::new(m.as_f64().collect()).unwrap(), p))
            })
            .collect()
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> (Instance, Label) {
        let bits: Vec<bool> = self.rates.iter().map(|&r| rng.random::<f64>() < r).collect();
        let mask = SubsetMask::new(bits);
        let y = sample_class(&self.table[mask.index() as usize], rng);
        (Instance::new(mask.as_f64().collect()).unwrap(), y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearGaussian {
    fn conditional(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        let d = self.weights.len();
        check_dim(d, x.dim())?;
        check_dim(d, s.dim())?;
        let mut logit = self.bias;
        let mut masked_var = 0.0;
        for i in 0..d {
            if s.get(i) {
                logit += self.weights[i] * x[i];
            } else {
                masked_var += self.weights[i] * self.weights[i];
            }
        }
        let p1 = if masked_var == 0.0 {
            sigmoid(logit)
        } else {
            // The masked part of the logit is N(0, masked_var).
            let tau = masked_var.sqrt();
            let q = default_rule();
            let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            q.integrate(-GAUSSIAN_WINDOW, GAUSSIAN_WINDOW, |z| {
                sigmoid(logit + tau * z) * norm * (-0.5 * z * z).exp()
            })
            .clamp(0.0, 1.0)
        };
        ClassDistribution::new(vec![1.0 - p1, p1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticProcess {
    Lemma1,
    Lemma3(DiscreteProcess),
    LinearGaussian(LinearGaussian),
    DummyFeature(DiscreteProcess),
    Table(DiscreteProcess),
}

impl SyntheticProcess {
    pub fn lemma1() -> Self {
        SyntheticProcess::Lemma1
    }

    pub fn lemma3() -> Self {
        let table = (0..4)
            .map(|j| {
                let x1 = f64::from(j >> 1 & 1);
                let x2 = f64::from(j & 1);
                let p0 = ((x1 - x2) / 2.0).max(0.0) + 0.5;
                let rest = (1.0 - p0) / 2.0;
                ClassDistribution::new(vec![p0, rest, rest]).unwrap()
            })
            .collect();
        SyntheticProcess::Lemma3(DiscreteProcess::new(vec![0.8, 0.5], table).unwrap())
    }

    /// Two independent binary features; `P(y = 1 | x1 = v) = y_rates[v]`.
    pub fn dummy_feature(x_rates: [f64; 2], y_rates: [f64; 2]) -> Result<Self> {
        let table = (0..4)
            .map(|j| {
                let p1 = y_rates[j >> 1 & 1];
                ClassDistribution::new(vec![1.0 - p1, p1])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticProcess::DummyFeature(DiscreteProcess::new(
            x_rates.to_vec(),
            table,
        )?))
    }

    pub fn linear_gaussian(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() || weights.iter().chain([&bias]).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("linear-gaussian needs finite weights".into()));
        }
        Ok(SyntheticProcess::LinearGaussian(LinearGaussian { weights, bias }))
    }

    pub fn table(rates: Vec<f64>, table: Vec<ClassDistribution>) -> Result<Self> {
        Ok(SyntheticProcess::Table(DiscreteProcess::new(rates, table)?))
    }

    /// Process with default parameters, addressed by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.parse::<ProcessKind>()? {
            ProcessKind::Lemma1 => Ok(Self::lemma1()),
            ProcessKind::Lemma3 => Ok(Self::lemma3()),
            ProcessKind::LinearGaussian => Self::linear_gaussian(vec![2.0, -1.0, 0.5, 0.0], 0.0),
            ProcessKind::DummyFeature => Self::dummy_feature([0.5, 0.5], [0.2, 0.8]),
            ProcessKind::Table => Err(Error::InvalidArgument(
                "the table process needs explicit rates and conditionals".into(),
            )),
        }
    }

    pub fn kind(&self) -> ProcessKind {
        match self {
            SyntheticProcess::Lemma1 => ProcessKind::Lemma1,
            SyntheticProcess::Lemma3(_) => ProcessKind::Lemma3,
            SyntheticProcess::LinearGaussian(_) => ProcessKind::LinearGaussian,
            SyntheticProcess::DummyFeature(_) => ProcessKind::DummyFeature,
            SyntheticProcess::Table(_) => ProcessKind::Table,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn discrete(&self) -> Option<&DiscreteProcess> {
        match self {
            SyntheticProcess::Lemma3(p)
            | SyntheticProcess::DummyFeature(p)
            | SyntheticProcess::Table(p) => Some(p),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticProcess::Lemma1 => 2,
            SyntheticProcess::LinearGaussian(p) => p.weights.len(),
            other => other.discrete().unwrap().dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            SyntheticProcess::Lemma1 | SyntheticProcess::LinearGaussian(_) => 2,
            other => other.discrete().unwrap().num_classes,
        }
    }

    /// Exact `F(y | x_s)`.
    pub fn conditional(&self, x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
        match self {
            SyntheticProcess::Lemma1 => lemma1_conditional(x, s),
            SyntheticProcess::LinearGaussian(p) => p.conditional(x, s),
            other => other.discrete().unwrap().conditional(x, s),
        }
    }

    /// Enumerable support of discrete processes; `None` for continuous ones.
    pub fn support(&self) -> Option<Vec<(Instance, f64)>> {
        self.discrete().map(DiscreteProcess::support)
    }

    /// `count` i.i.d. draws, deterministic per seed.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let (x, y) = match self {
                SyntheticProcess::Lemma1 => {
                    let x1: f64 = rng.random();
                    let p1 = (x1 + LEMMA1_X2) / 2.0;
                    let y = Label(usize::from(rng.random::<f64>() < p1));
                    (Instance::new(vec![x1, LEMMA1_X2])?, y)
                }
                SyntheticProcess::LinearGaussian(p) => {
                    let normal = Normal::new(0.0, 1.0).unwrap();
                    let x: Vec<f64> = (0..p.weights.len()).map(|_| normal.sample(&mut rng)).collect();
                    let logit = p.bias + x.iter().zip(&p.weights).map(|(a, b)| a * b).sum::<f64>();
                    let y = Label(usize::from(rng.random::<f64>() < sigmoid(logit)));
                    (Instance::new(x)?, y)
                }
                other => other.discrete().unwrap().sample_one(&mut rng),
            };
            xs.push(x);
            ys.push(y);
        }
        Dataset::new(xs, ys, self.dim(), self.num_classes())
    }
}

fn sample_class(dist: &ClassDistribution, rng: &mut ChaCha8Rng) -> Label {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return Label(k);
        }
    }
    Label(dist.num_classes() - 1)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn lemma1_conditional(x: &Instance, s: &SubsetMask) -> Result<ClassDistribution> {
    check_dim(2, x.dim())?;
    check_dim(2, s.dim())?;
    if s.get(1) && x[1] != LEMMA1_X2 {
        return Err(Error::Domain(format!("x2 = {} is not realizable (x2 = 1/2)", x[1])));
    }
    let p1 = if s.get(0) {
        if !(0.0..=1.0).contains(&x[0]) {
            return Err(Error::Domain(format!("x1 = {} outside [0, 1]", x[0])));
        }
        (x[0] + LEMMA1_X2) / 2.0
    } else {
        default_rule().integrate(0.0, 1.0, |u| (u + LEMMA1_X2) / 2.0)
    };
    ClassDistribution::new(vec![1.0 - p1, p1])
}

/// The class-dependent explainer that leaks the label on `lemma1`.
pub fn lemma1_adversary(x: &Instance, y: Label) -> AttributionVector {
    let x1 = x[0];
    let first = match y.0 {
        1 => x1 >= 0.5,
        _ => x1 <= 0.5,
    };
    let scores = if first { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    AttributionVector::new(scores).unwrap()
}

/// The predicted-class explainer for `lemma3`, where the predicted class is
/// always 0; it therefore reads only `x`.
pub fn lemma3_adversary(x: &Instance) -> AttributionVector {
    let scores = if x[0] == 1.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    AttributionVector::new(scores).unwrap()
}

/// Terms of the `lemma1` leakage gap, each an expectation over `F(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageGap {
    /// `E[log F(y | x_top50(e(x, y)))]` under the adversary.
    pub explained_loglik: f64,
    /// `E[log F(y | x)]`.
    pub full_loglik: f64,
}

impl LeakageGap {
    pub fn gap(&self) -> f64 {
        self.explained_loglik - self.full_loglik
    }
}

/// Both expectations of the `lemma1` leakage inequality by Gauss–Legendre
/// quadrature over `x1` (split at the adversary's switch point 1/2) and exact
/// summation over `y`.
pub fn exact_leakage_gap_lemma1(nodes: usize) -> LeakageGap {
    let q = GaussLegendre::new(nodes);
    let full = SubsetMask::full(2);
    let mut explained = 0.0;
    let mut full_term = 0.0;
    for (a, b) in [(0.0, 0.5), (0.5, 1.0)] {
        for (x1, w) in q.points(a, b) {
            let x = Instance::new(vec![x1, LEMMA1_X2]).unwrap();
            let p = lemma1_conditional(&x, &full).unwrap();
            for y in 0..2 {
                let py = p[y];
                let e = lemma1_adversary(&x, Label(y));
                // Top 50% of two features is the single highest score.
                let keep = if e[0] >= e[1] { 0 } else { 1 };
                let q_sub = lemma1_conditional(&x, &SubsetMask::from_indices(2, [keep])).unwrap();
                explained += w * py * q_sub[y].ln();
                full_term += w * py * py.ln();
            }
        }
    }
    LeakageGap {
        explained_loglik: explained,
        full_loglik: full_term,
    }
}
