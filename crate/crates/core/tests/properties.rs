use proptest::prelude::*;

use attrib_core::evaluation::{iauc, inclusion_curve, random_attribution, Grid, InclusionCurve, RankingMode};
use attrib_core::masking::{mask, SamplerKind, SubsetMask, SubsetSampler};
use attrib_core::models::PredictionModel;
use attrib_core::nn::{Architecture, Network};
use attrib_core::prob::{ClassDistribution, Instance, Label, NORMALIZATION_TOL};
use attrib_core::shapley::{exact_shapley, kernel_shap_solve};
use attrib_core::surrogate::{ConditionalModel, ConditionalOracle, SurrogateModel};
use attrib_core::synthetic::SyntheticProcess;
use attrib_core::value::{value_kl, Game};

/// `v(s) = g(sum of w_i over s)` with a fixed nonlinearity.
struct WeightedGame(Vec<f64>);

impl Game for WeightedGame {
    fn num_players(&self) -> usize {
        self.0.len()
    }

    fn value(&self, s: &SubsetMask) -> attrib_core::Result<f64> {
        let t: f64 = s.retained().map(|i| self.0[i]).sum();
        Ok(t.tanh() + 0.1 * t * t)
    }
}

fn masks(d: usize) -> impl Strategy<Value = SubsetMask> {
    proptest::collection::vec(any::<bool>(), d).prop_map(SubsetMask::new)
}

fn table_process(d: usize) -> impl Strategy<Value = SyntheticProcess> {
    let rates = proptest::collection::vec(0.05f64..0.95, d);
    let rows = proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1 << d);
    (rates, rows).prop_map(|(rates, rows)| {
        let table = rows
            .into_iter()
            .map(|r| {
                let t: f64 = r.iter().sum();
                ClassDistribution::new(r.iter().map(|v| v / t).collect()).unwrap()
            })
            .collect();
        SyntheticProcess::table(rates, table).unwrap()
    })
}

fn random_surrogate(d: usize, seed: u64) -> SurrogateModel {
    let net = Network::new(Architecture::TanhMlp { hidden: 6 }, 2 * d, 3, seed);
    let mut w = net.weights().to_vec();
    // Spread the small initial weights so outputs are far from uniform.
    w.iter_mut().for_each(|v| *v *= 20.0);
    let net = Network::from_weights(net.architecture(), 2 * d, 3, w).unwrap();
    SurrogateModel::from_backbone(PredictionModel::new(net)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_is_idempotent((x, s) in (1usize..8).prop_flat_map(|d| (proptest::collection::vec(-5.0f64..5.0, d), masks(d)))) {
        let x = Instance::new(x).unwrap();
        let once = mask(&x, &s).unwrap();
        let twice = mask(&Instance::new(once.values().to_vec()).unwrap(), &s).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn samplers_reproduce_per_seed(d in 2usize..7, seed in any::<u64>()) {
        for kind in [SamplerKind::UniformCardinality, SamplerKind::ShapleyKernel, SamplerKind::FullEnumeration] {
            let mut a = SubsetSampler::new(kind, d, seed).unwrap();
            let mut b = SubsetSampler::new(kind, d, seed).unwrap();
            for _ in 0..40 {
                prop_assert_eq!(a.sample(), b.sample());
            }
        }
    }

    #[test]
    fn kernel_solves_are_exactly_efficient(w in proptest::collection::vec(-2.0f64..2.0, 2..9), extra in 0usize..200, seed in any::<u64>()) {
        let budget = w.len() + extra;
        let game = WeightedGame(w);
        match kernel_shap_solve(&game, budget, seed) {
            Ok(est) => prop_assert!(est.efficiency_residual().abs() < 1e-10),
            // Tiny budgets may leave the regression underdetermined.
            Err(e) => prop_assert!(e.is_numeric()),
        }
    }

    #[test]
    fn swapping_players_swaps_attributions(w in proptest::collection::vec(-2.0f64..2.0, 3..7), i in 0usize..3, j in 0usize..3) {
        let d = w.len();
        let mut swapped = w.clone();
        swapped.swap(i, j);
        let a = exact_shapley(&WeightedGame(w.clone())).unwrap();
        let b = exact_shapley(&WeightedGame(swapped.clone())).unwrap();
        prop_assert!((a.phi[i] - b.phi[j]).abs() < 1e-12);
        prop_assert!((a.phi[j] - b.phi[i]).abs() < 1e-12);
        // Full-budget regression enumerates every subset.
        let ka = kernel_shap_solve(&WeightedGame(w), 1 << d, 0).unwrap();
        let kb = kernel_shap_solve(&WeightedGame(swapped), 1 << d, 0).unwrap();
        prop_assert!((ka.phi[i] - kb.phi[j]).abs() < 1e-9);
    }

    #[test]
    fn surrogate_outputs_are_distributions((d, seed) in (1usize..6, any::<u64>()), bits in any::<u32>(), x in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let model = random_surrogate(d, seed);
        let x = Instance::new(x[..d].to_vec()).unwrap();
        let s = SubsetMask::from_index(bits as u64 % (1 << d), d);
        let p = model.predict_subset(&x, &s).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < NORMALIZATION_TOL);
        prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(p, model.predict_subset(&x, &s).unwrap());
    }

    #[test]
    fn kl_value_of_the_full_subset_is_zero(d in 1usize..6, seed in any::<u64>(), x in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let model = random_surrogate(d, seed);
        let x = Instance::new(x[..d].to_vec()).unwrap();
        prop_assert_eq!(value_kl(&model, &x, &SubsetMask::full(d)).unwrap(), 0.0);
    }

    #[test]
    fn table_conditionals_are_normalized(process in (1usize..5).prop_flat_map(table_process)) {
        let d = process.dim();
        for (x, _) in process.support().unwrap() {
            for s in 0..1u64 << d {
                let p = process.conditional(&x, &SubsetMask::from_index(s, d)).unwrap();
                prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < NORMALIZATION_TOL);
            }
        }
    }

    #[test]
    fn full_feature_point_is_method_independent(seed in any::<u64>()) {
        let process = SyntheticProcess::lemma3();
        let oracle = ConditionalOracle::new(process.clone());
        let data = process.sample(200, seed).unwrap();
        let grid = Grid::default();
        let a: Vec<_> = (0..200).map(|i| random_attribution(2, seed ^ i)).collect();
        let b: Vec<_> = (0..200).map(|i| random_attribution(2, !seed ^ i)).collect();
        let ca = inclusion_curve(&a, &oracle, &data, &grid, RankingMode::Signed).unwrap();
        let cb = inclusion_curve(&b, &oracle, &data, &grid, RankingMode::Signed).unwrap();
        prop_assert_eq!(ca.full_feature_loglik(), cb.full_feature_loglik());
        prop_assert_eq!(ca.mean_loglik[0], cb.mean_loglik[0]);
    }

    #[test]
    fn trapezoid_is_exact_on_piecewise_linear_curves(a in -3.0f64..0.0, b in -0.02f64..0.02, kink in 1usize..12) {
        // Linear up to the kink grid point, then constant.
        let grid = Grid::default();
        let pts = grid.points();
        let knot = pts[kink];
        let values: Vec<f64> = pts.iter().map(|&n| a + b * n.min(knot)).collect();
        let exact = (a * 100.0 + b * knot * knot / 2.0 + b * knot * (100.0 - knot)) / 100.0;
        let curve = InclusionCurve::from_means(grid, values).unwrap();
        prop_assert!((iauc(&curve) - exact).abs() < 1e-12);
    }
}

#[test]
fn oracle_predictions_are_pure() {
    let oracle = ConditionalOracle::new(SyntheticProcess::lemma3());
    let x = Instance::new(vec![1.0, 0.0]).unwrap();
    let s = SubsetMask::parse("10").unwrap();
    assert_eq!(oracle.predict_subset(&x, &s).unwrap(), oracle.predict_subset(&x, &s).unwrap());
    assert_eq!(oracle.predict_full(&x).unwrap().argmax(), Label(0));
}
