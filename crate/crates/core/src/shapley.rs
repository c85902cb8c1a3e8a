//! Shapley values by exact enumeration and by constrained kernel regression,
//! plus LIME's weighted linear surrogate.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::masking::{binomial, cardinality_probabilities, SamplerKind, SubsetMask, SubsetSampler};
use crate::models::PredictionModel;
use crate::prob::{AttributionVector, Instance, Label};
use crate::surrogate::{ConditionalModel, ZeroBaseline};
use crate::value::{Game, ValueFunction};

/// Largest `d` accepted by [`exact_shapley`].
pub const MAX_EXACT_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyEstimate {
    pub phi: AttributionVector,
    /// `v(0)`.
    pub base_value: f64,
    /// `v(1)`.
    pub full_value: f64,
    /// Distinct subsets evaluated, excluding the empty and full subsets.
    pub num_subset_samples: usize,
    pub seed: Option<u64>,
}

impl ShapleyEstimate {
    /// `sum(phi) - (v(1) - v(0))`.
    pub fn efficiency_residual(&self) -> f64 {
        self.phi.sum() - (self.full_value - self.base_value)
    }
}

/// Exact Shapley values: every subset, weighted `1 / (d C(d-1, |s|))`.
pub fn exact_shapley(game: &dyn Game) -> Result<ShapleyEstimate> {
    let d = game.num_players();
    if d == 0 {
        return Err(Error::InvalidArgument("game has no players".into()));
    }
    if d > MAX_EXACT_DIM {
        return Err(Error::TooLarge {
            what: "d",
            value: d,
            limit: MAX_EXACT_DIM,
        });
    }
    let n = 1usize << d;
    let values = (0..n as u64)
        .map(|i| game.value(&SubsetMask::from_index(i, d)))
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> = (0..d).map(|k| 1.0 / (d as f64 * binomial(d - 1, k))).collect();
    let mut phi = vec![0.0; d];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        // Feature i is bit (d - 1 - i) of the subset index.
        let bit = 1usize << (d - 1 - i);
        for s in (0..n).filter(|s| s & bit == 0) {
            let size = s.count_ones() as usize;
            *phi_i += weights[size] * (values[s | bit] - values[s]);
        }
    }
    Ok(ShapleyEstimate {
        phi: AttributionVector::new(phi)?,
        base_value: values[0],
        full_value: values[n - 1],
        num_subset_samples: n - 2,
        seed: None,
    })
}

/// Weighted design for the kernel regression: distinct subsets and weights
/// summing to one. Cardinality pairs `(k, d-k)` are enumerated completely
/// while the budget allows, in order of decreasing kernel mass; the remaining
/// budget is spent on antithetic draws from the kernel restricted to the
/// incomplete sizes.
fn kernel_design(d: usize, budget: usize, seed: u64) -> Result<Vec<(SubsetMask, f64)>> {
    let size_mass = cardinality_probabilities(SamplerKind::ShapleyKernel, d);
    let mut design: Vec<(SubsetMask, f64)> = Vec::new();
    let mut remaining = budget;
    let mut incomplete = Vec::new();
    for k in 1..=d / 2 {
        let sizes: Vec<usize> = if k == d - k { vec![k] } else { vec![k, d - k] };
        let count: usize = sizes.iter().map(|&m| binomial(d, m) as usize).sum();
        if incomplete.is_empty() && count <= remaining {
            remaining -= count;
            for &m in &sizes {
                let w = size_mass[m] / binomial(d, m);
                for idx in 0..1u64 << d {
                    let s = SubsetMask::from_index(idx, d);
                    if s.count() == m {
                        design.push((s, w));
                    }
                }
            }
        } else {
            incomplete.extend(sizes);
        }
    }
    if !incomplete.is_empty() && remaining > 0 {
        incomplete.sort_unstable();
        let mass: f64 = incomplete.iter().map(|&k| size_mass[k]).sum();
        let mut sampler = SubsetSampler::shapley_kernel_over(d, &incomplete, seed)?;
        let pairs = (remaining / 2).max(1);
        let w = mass / (2 * pairs) as f64;
        let mut counts: HashMap<SubsetMask, usize> = HashMap::new();
        let mut order = Vec::new();
        for _ in 0..pairs {
            let s = sampler.sample();
            for m in [s.complement(), s] {
                let c = counts.entry(m.clone()).or_insert(0);
                if *c == 0 {
                    order.push(m);
                }
                *c += 1;
            }
        }
        design.extend(order.into_iter().map(|m| {
            let c = counts[&m];
            (m, w * c as f64)
        }));
    }
    Ok(design)
}

/// Weighted least squares for Shapley values under the exact efficiency
/// constraint `sum(phi) = v(1) - v(0)`, eliminated by substituting the last
/// coordinate.
pub fn kernel_shap_solve(game: &dyn Game, num_samples: usize, seed: u64) -> Result<ShapleyEstimate> {
    let d = game.num_players();
    if d < 2 {
        return Err(Error::InvalidArgument("kernel regression needs d >= 2".into()));
    }
    if num_samples < d {
        return Err(Error::InvalidArgument(format!(
            "num_samples = {num_samples} must be at least d = {d}"
        )));
    }
    let base = game.value(&SubsetMask::empty(d))?;
    let full = game.value(&SubsetMask::full(d))?;
    let total = full - base;
    let design = kernel_design(d, num_samples, seed)?;
    if design.len() < d - 1 {
        return Err(Error::InsufficientSamples {
            distinct: design.len(),
            needed: d - 1,
        });
    }

    let m = d - 1;
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    let mut row = vec![0.0; m];
    for (s, w) in &design {
        let last = if s.get(d - 1) { 1.0 } else { 0.0 };
        for (j, r) in row.iter_mut().enumerate() {
            *r = if s.get(j) { 1.0 } else { 0.0 } - last;
        }
        let target = game.value(s)? - base - last * total;
        for a in 0..m {
            if row[a] == 0.0 {
                continue;
            }
            atb[a] += w * row[a] * target;
            for b in 0..m {
                ata[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let solved = ata.cholesky().ok_or(Error::InsufficientSamples {
        distinct: design.len(),
        needed: d - 1,
    })?;
    let head = solved.solve(&atb);
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(total - phi.iter().sum::<f64>());
    Ok(ShapleyEstimate {
        phi: AttributionVector::new(phi)?,
        base_value: base,
        full_value: full,
        num_subset_samples: design.len(),
        seed: Some(seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelShapConfig {
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for KernelShapConfig {
    fn default() -> Self {
        Self {
            num_samples: 512,
            seed: 0,
        }
    }
}

/// Distribution-aware Shapley values of the negative-KL game. Takes no label.
pub fn shap_kl(model: &dyn ConditionalModel, x: &Instance, cfg: &KernelShapConfig) -> Result<ShapleyEstimate> {
    let vf = ValueFunction::kl_divergence(model);
    kernel_shap_solve(&vf.at(x)?, cfg.num_samples, cfg.seed)
}

/// Shapley values of the class-probability game under a conditional model
/// (surrogate-backed SHAP-S).
pub fn shap_s(
    model: &dyn ConditionalModel,
    x: &Instance,
    y: Label,
    cfg: &KernelShapConfig,
) -> Result<ShapleyEstimate> {
    let vf = ValueFunction::class_probability(model, y)?;
    kernel_shap_solve(&vf.at(x)?, cfg.num_samples, cfg.seed)
}

/// Plain SHAP: the raw model with removed features replaced by zero.
pub fn shap(
    model: &PredictionModel,
    x: &Instance,
    y: Label,
    cfg: &KernelShapConfig,
) -> Result<ShapleyEstimate> {
    shap_s(&ZeroBaseline(model), x, y, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimeConfig {
    pub num_samples: usize,
    /// Width of the `exp(-H^2 / width^2)` kernel on the removed-feature count `H`.
    pub kernel_width: f64,
    pub ridge: f64,
    /// `UniformCardinality` draws `num_samples` subsets; `FullEnumeration` uses all `2^d`.
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            num_samples: 512,
            kernel_width: 0.75,
            ridge: 1e-3,
            sampler: SamplerKind::UniformCardinality,
            seed: 0,
        }
    }
}

/// LIME with fixed offset `v(0)` and a ridge penalty:
/// `argmin mean_s pi(s) (v(s) - v(0) - s.phi)^2 + ridge |phi|^2`.
pub fn lime(
    model: &dyn ConditionalModel,
    x: &Instance,
    y: Label,
    cfg: &LimeConfig,
) -> Result<AttributionVector> {
    let game = ValueFunction::class_probability(model, y)?.at(x)?;
    lime_game(&game, cfg)
}

pub fn lime_game(game: &dyn Game, cfg: &LimeConfig) -> Result<AttributionVector> {
    let d = game.num_players();
    if cfg.num_samples < d {
        return Err(Error::InvalidArgument(format!(
            "num_samples = {} must be at least d = {d}",
            cfg.num_samples
        )));
    }
    if cfg.kernel_width.is_nan() || cfg.kernel_width <= 0.0 || cfg.ridge.is_nan() || cfg.ridge < 0.0 {
        return Err(Error::InvalidArgument("kernel_width > 0 and ridge >= 0 required".into()));
    }
    let subsets: Vec<SubsetMask> = match cfg.sampler {
        SamplerKind::FullEnumeration => crate::masking::enumerate_subsets(d)?,
        SamplerKind::UniformCardinality => {
            let mut sampler = SubsetSampler::new(SamplerKind::UniformCardinality, d, cfg.seed)?;
            (0..cfg.num_samples).map(|_| sampler.sample()).collect()
        }
        SamplerKind::ShapleyKernel => {
            return Err(Error::InvalidArgument("LIME samples uniform cardinalities".into()))
        }
    };
    let base = game.value(&SubsetMask::empty(d))?;
    let mut cache: HashMap<SubsetMask, f64> = HashMap::new();
    let mut sts = DMatrix::<f64>::zeros(d, d);
    let mut stv = DVector::<f64>::zeros(d);
    let scale = 1.0 / subsets.len() as f64;
    for s in &subsets {
        let v = match cache.get(s) {
            Some(v) => *v,
            None => {
                let v = game.value(s)?;
                cache.insert(s.clone(), v);
                v
            }
        };
        let removed = (d - s.count()) as f64;
        let w = scale * (-(removed * removed) / (cfg.kernel_width * cfg.kernel_width)).exp();
        let kept: Vec<usize> = s.retained().collect();
        for &a in &kept {
            stv[a] += w * (v - base);
            for &b in &kept {
                sts[(a, b)] += w;
            }
        }
    }
    for i in 0..d {
        sts[(i, i)] += cfg.ridge;
    }
    let solved = sts.cholesky().ok_or(Error::InsufficientSamples {
        distinct: cache.len(),
        needed: d,
    })?;
    AttributionVector::new(solved.solve(&stv).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::enumerate_subsets;
    use crate::surrogate::ConditionalOracle;
    use crate::synthetic::SyntheticProcess;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A game given by its full value table, indexed like `SubsetMask::index`.
    pub(crate) struct TableGame {
        pub d: usize,
        pub values: Vec<f64>,
    }

    impl Game for TableGame {
        fn num_players(&self) -> usize {
            self.d
        }
        fn value(&self, s: &SubsetMask) -> Result<f64> {
            Ok(self.values[s.index() as usize])
        }
    }

    /// Average marginal contribution over all `d!` orderings: an oracle
    /// independent of the subset-weight formula.
    fn permutation_shapley(game: &TableGame) -> Vec<f64> {
        use itertools::Itertools;
        let d = game.d;
        let mut phi = vec![0.0; d];
        let mut count = 0.0;
        for perm in (0..d).permutations(d) {
            let mut s = SubsetMask::empty(d);
            for &i in &perm {
                let before = game.value(&s).unwrap();
                s = s.with(i);
                phi[i] += game.value(&s).unwrap() - before;
            }
            count += 1.0;
        }
        phi.iter().map(|p| p / count).collect()
    }

    fn random_game(d: usize, rng: &mut ChaCha8Rng) -> TableGame {
        TableGame {
            d,
            values: (0..1 << d).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn two_player_examples() {
        // Index order for d = 2: 00, 01 (player 2), 10 (player 1), 11.
        let g = TableGame { d: 2, values: vec![0.0, 2.0, 1.0, 4.0] };
        let e = exact_shapley(&g).unwrap();
        assert!((e.phi[0] - 1.5).abs() < 1e-15 && (e.phi[1] - 2.5).abs() < 1e-15);

        let sym = TableGame { d: 2, values: vec![0.0, 0.3, 0.3, 1.0] };
        let e = exact_shapley(&sym).unwrap();
        assert!((e.phi[0] - 0.5).abs() < 1e-15 && (e.phi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dummy_player_gets_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 4;
        let base: Vec<f64> = (0..1 << (d - 1)).map(|_| rng.random()).collect();
        // Player 4 (least significant bit) never changes the value.
        let g = TableGame { d, values: (0..1 << d).map(|i| base[i >> 1]).collect() };
        assert!(exact_shapley(&g).unwrap().phi[3].abs() < 1e-15);
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..=6 {
            let g = random_game(d, &mut rng);
            let e = exact_shapley(&g).unwrap();
            for (a, b) in e.phi.scores().iter().zip(permutation_shapley(&g)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(e.efficiency_residual().abs() < 1e-12);
        }
    }

    #[test]
    fn exact_rejects_large_games() {
        let g = TableGame { d: 13, values: vec![0.0; 1 << 13] };
        assert!(matches!(exact_shapley(&g), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn kernel_matches_exact_with_full_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..=8 {
            for _ in 0..5 {
                let g = random_game(d, &mut rng);
                let exact = exact_shapley(&g).unwrap();
                let est = kernel_shap_solve(&g, (1 << d) * 8, 5).unwrap();
                assert!(est.efficiency_residual().abs() < 1e-10);
                for (a, b) in est.phi.scores().iter().zip(exact.phi.scores()) {
                    assert!((a - b).abs() < 1e-9, "d={d}");
                }
            }
        }
    }

    #[test]
    fn sampled_kernel_regression_converges() {
        // Budget below the number of subsets forces the sampled branch.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 10;
        // Additive game plus a mild interaction.
        let coef: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = (0..1u64 << d)
            .map(|i| {
                let s = SubsetMask::from_index(i, d);
                let add: f64 = s.retained().map(|j| coef[j]).sum();
                add + 0.1 * (s.get(0) && s.get(1)) as u8 as f64
            })
            .collect();
        let g = TableGame { d, values };
        let exact = exact_shapley(&g).unwrap();
        let small = kernel_shap_solve(&g, 200, 1).unwrap();
        let large = kernel_shap_solve(&g, 800, 1).unwrap();
        let err = |e: &ShapleyEstimate| {
            e.phi
                .scores()
                .iter()
                .zip(exact.phi.scores())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        assert!(small.efficiency_residual().abs() < 1e-10);
        assert!(err(&large) < 0.02, "{}", err(&large));
        assert!(small.num_subset_samples < large.num_subset_samples);
    }

    #[test]
    fn kernel_is_deterministic_and_validates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_game(9, &mut rng);
        assert_eq!(kernel_shap_solve(&g, 100, 9).unwrap(), kernel_shap_solve(&g, 100, 9).unwrap());
        assert!(kernel_shap_solve(&g, 5, 0).is_err());
        let one = TableGame { d: 1, values: vec![0.0, 1.0] };
        assert!(kernel_shap_solve(&one, 10, 0).is_err());
    }

    #[test]
    fn symmetric_players_get_equal_shares() {
        let d = 4;
        // Players 1 and 2 are interchangeable.
        let values = (0..1u64 << d)
            .map(|i| {
                let s = SubsetMask::from_index(i, d);
                let pair = s.get(0) as u8 + s.get(1) as u8;
                f64::from(pair).powi(2) * 0.3 + s.get(2) as u8 as f64 - 0.2 * s.get(3) as u8 as f64
            })
            .collect();
        let g = TableGame { d, values };
        for est in [exact_shapley(&g).unwrap(), kernel_shap_solve(&g, 64, 1).unwrap()] {
            assert!((est.phi[0] - est.phi[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn shap_kl_on_lemma3_matches_enumeration() {
        let oracle = ConditionalOracle::new(SyntheticProcess::lemma3());
        let cfg = KernelShapConfig { num_samples: 8, seed: 1 };
        for (x, _) in SyntheticProcess::lemma3().support().unwrap() {
            let est = shap_kl(&oracle, &x, &cfg).unwrap();
            let exact = exact_shapley(&ValueFunction::kl_divergence(&oracle).at(&x).unwrap()).unwrap();
            for (a, b) in est.phi.scores().iter().zip(exact.phi.scores()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shap_kl_ignores_an_independent_feature() {
        let p = SyntheticProcess::dummy_feature([0.6, 0.3], [0.1, 0.85]).unwrap();
        let oracle = ConditionalOracle::new(p.clone());
        for (x, _) in p.support().unwrap() {
            let est = shap_kl(&oracle, &x, &KernelShapConfig::default()).unwrap();
            assert!(est.phi[1].abs() < 1e-6, "{:?}", est.phi);
        }
    }

    #[test]
    fn shap_s_is_class_dependent_on_lemma1() {
        let oracle = ConditionalOracle::new(SyntheticProcess::lemma1());
        let x = Instance::new(vec![0.8, 0.5]).unwrap();
        let cfg = KernelShapConfig::default();
        let e0 = shap_s(&oracle, &x, Label(0), &cfg).unwrap();
        let e1 = shap_s(&oracle, &x, Label(1), &cfg).unwrap();
        assert_ne!(e0.phi, e1.phi);
        for e in [&e0, &e1] {
            assert!(e.efficiency_residual().abs() < 1e-10);
        }
        // Binary task: the two class games are complements.
        for i in 0..2 {
            assert!((e0.phi[i] + e1.phi[i]).abs() < 1e-8);
        }
        let p = oracle.predict_full(&x).unwrap();
        let p0 = oracle.predict_subset(&x, &SubsetMask::empty(2)).unwrap();
        assert!((e1.phi.sum() - (p[1] - p0[1])).abs() < 1e-10);
    }

    #[test]
    fn plain_shap_uses_the_zero_baseline() {
        use crate::nn::{Architecture, Network};
        let net = Network::new(Architecture::TanhMlp { hidden: 4 }, 3, 2, 4);
        let model = PredictionModel::new(net);
        let x = Instance::new(vec![1.0, -2.0, 0.5]).unwrap();
        let est = shap(&model, &x, Label(1), &KernelShapConfig::default()).unwrap();
        let zero = model.predict_proba(&Instance::new(vec![0.0; 3]).unwrap()).unwrap();
        assert_eq!(est.base_value, zero[1]);
        assert!(est.efficiency_residual().abs() < 1e-10);
    }

    #[test]
    fn lime_wide_kernel_recovers_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 5;
        let g = random_game(d, &mut rng);
        let cfg = LimeConfig {
            num_samples: 1 << d,
            kernel_width: 1e9,
            ridge: 0.0,
            sampler: SamplerKind::FullEnumeration,
            seed: 0,
        };
        let phi = lime_game(&g, &cfg).unwrap();
        // Dense oracle: SVD least squares on the full design matrix.
        let subsets = enumerate_subsets(d).unwrap();
        let design = DMatrix::from_fn(subsets.len(), d, |r, c| subsets[r].get(c) as u8 as f64);
        let target = DVector::from_fn(subsets.len(), |r, _| g.value(&subsets[r]).unwrap() - g.values[0]);
        let dense = design.svd(true, true).solve(&target, 1e-12).unwrap();
        for i in 0..d {
            assert!((phi[i] - dense[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lime_ranks_additive_coefficients() {
        let coef = [0.05, -0.3, 0.12, 0.2, -0.01];
        let d = coef.len();
        let values = (0..1u64 << d)
            .map(|i| 0.4 + SubsetMask::from_index(i, d).retained().map(|j| coef[j]).sum::<f64>())
            .collect();
        let g = TableGame { d, values };
        let phi = lime_game(&g, &LimeConfig { seed: 3, ..Default::default() }).unwrap();
        let rank = |v: Vec<f64>| {
            let mut idx: Vec<usize> = (0..d).collect();
            idx.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap());
            idx
        };
        assert_eq!(rank(phi.into_inner()), rank(coef.to_vec()));
        let a = lime_game(&g, &LimeConfig { seed: 3, ..Default::default() }).unwrap();
        let b = lime_game(&g, &LimeConfig { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}
