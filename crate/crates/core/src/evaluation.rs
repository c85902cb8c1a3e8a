//! Inclusion curves, iAUC with bootstrap intervals, the leakage check, and the
//! brute-force optimal explainer.

use std::collections::HashMap;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::masking::SubsetMask;
use crate::prob::{kl_divergence, log_likelihood, AttributionVector, Dataset, Instance, Label};
use crate::surrogate::ConditionalModel;
use crate::synthetic::SyntheticProcess;

/// Inclusion percentages used by default.
pub const DEFAULT_GRID: [f64; 13] = [
    0.0, 1.0, 5.0, 10.0, 15.0, 25.0, 50.0, 75.0, 85.0, 90.0, 95.0, 99.0, 100.0,
];

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Lower-percentile excess (in nats) above which the leakage flag is raised.
pub const LEAKAGE_TOLERANCE: f64 = 1e-9;

/// Largest `d` searched by [`optimal_explainer_bruteforce`].
pub const MAX_BRUTEFORCE_DIM: usize = 6;

/// Strictly increasing inclusion percentages in `[0, 100]`, including both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.first() != Some(&0.0) || points.last() != Some(&100.0) {
            return Err(Error::InvalidArgument("grid must start at 0 and end at 100".into()));
        }
        if points.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weights `w_j` with `sum_j w_j f(n_j)` equal to the trapezoid area over
    /// the grid divided by 100.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let g = &self.0;
        let mut w = vec![0.0; g.len()];
        for j in 0..g.len() - 1 {
            let half = 0.5 * (g[j + 1] - g[j]) / 100.0;
            w[j] += half;
            w[j + 1] += half;
        }
        w
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self(DEFAULT_GRID.to_vec())
    }
}

/// How attribution scores are turned into a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankingMode {
    #[default]
    Signed,
    Absolute,
}

impl std::str::FromStr for RankingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(RankingMode::Signed),
            "absolute" => Ok(RankingMode::Absolute),
            other => Err(Error::InvalidArgument(format!("unknown ranking mode {other:?}"))),
        }
    }
}

/// `ceil(n d / 100)`. The product is snapped to the nearest integer when it
/// is within rounding noise of one.
pub fn subset_size(dim: usize, n: f64) -> usize {
    let raw = n * dim as f64 / 100.0;
    let snapped = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (snapped.max(0.0) as usize).min(dim)
}

/// Feature indices by decreasing score, ties toward the lower index.
pub fn ranking(e: &AttributionVector, mode: RankingMode) -> Vec<usize> {
    let key = |i: usize| match mode {
        RankingMode::Signed => e[i],
        RankingMode::Absolute => e[i].abs(),
    };
    let mut order: Vec<usize> = (0..e.dim()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    order
}

pub fn top_n(e: &AttributionVector, n: f64) -> SubsetMask {
    top_n_ranked(e, n, RankingMode::Signed)
}

pub fn top_n_ranked(e: &AttributionVector, n: f64, mode: RankingMode) -> SubsetMask {
    let k = subset_size(e.dim(), n);
    SubsetMask::from_indices(e.dim(), ranking(e, mode).into_iter().take(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionCurve {
    pub grid: Grid,
    pub mean_loglik: Vec<f64>,
    /// `per_sample_loglik[j][i]`: grid point `j`, test instance `i`.
    pub per_sample_loglik: Vec<Vec<f64>>,
}

impl InclusionCurve {
    /// A curve with no retained per-sample values.
    pub fn from_means(grid: Grid, mean_loglik: Vec<f64>) -> Result<Self> {
        check_dim(grid.len(), mean_loglik.len())?;
        Ok(Self {
            per_sample_loglik: vec![Vec::new(); grid.len()],
            grid,
            mean_loglik,
        })
    }

    pub fn full_feature_loglik(&self) -> f64 {
        *self.mean_loglik.last().expect("grid is non-empty")
    }

    pub fn num_samples(&self) -> usize {
        self.per_sample_loglik.first().map_or(0, Vec::len)
    }
}

/// Mean test log-likelihood under `model` of the top-`n`% features of each
/// attribution, at every grid point.
pub fn inclusion_curve(
    attribs: &[AttributionVector],
    model: &dyn ConditionalModel,
    data: &Dataset,
    grid: &Grid,
    mode: RankingMode,
) -> Result<InclusionCurve> {
    check_dim(data.len(), attribs.len())?;
    check_dim(model.dim(), data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let rows: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (&data.instances()[i], data.labels()[i]);
            check_dim(data.dim(), attribs[i].dim())?;
            let order = ranking(&attribs[i], mode);
            grid.points()
                .iter()
                .map(|&n| {
                    let k = subset_size(x.dim(), n);
                    let s = SubsetMask::from_indices(x.dim(), order.iter().copied().take(k));
                    Ok(log_likelihood(&model.predict_subset(x, &s)?, y))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let per_sample: Vec<Vec<f64>> = (0..grid.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mean_loglik = per_sample.iter().map(|col| mean(col)).collect();
    Ok(InclusionCurve {
        grid: grid.clone(),
        mean_loglik,
        per_sample_loglik: per_sample,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trapezoid area over `grid`, divided by 100.
pub fn trapezoid_area(grid: &Grid, values: &[f64]) -> f64 {
    let g = grid.points();
    (0..g.len() - 1)
        .map(|j| 0.5 * (g[j + 1] - g[j]) * (values[j] + values[j + 1]))
        .sum::<f64>()
        / 100.0
}

pub fn iauc(curve: &InclusionCurve) -> f64 {
    trapezoid_area(&curve.grid, &curve.mean_loglik)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn resample_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn require_samples(curve: &InclusionCurve) -> Result<usize> {
    let n = curve.num_samples();
    if n == 0 {
        return Err(Error::InvalidArgument("curve has no per-sample log-likelihoods".into()));
    }
    Ok(n)
}

/// Percentile bootstrap 95% interval for iAUC, resampling test instances.
/// The interval is widened if necessary to contain the point estimate.
pub fn bootstrap_ci(curve: &InclusionCurve, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    let n = require_samples(curve)?;
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be >= 1".into()));
    }
    let weights = curve.grid.trapezoid_weights();
    // Per-sample iAUC: the estimate is linear in the rows.
    let per_row: Vec<f64> = (0..n)
        .map(|i| weights.iter().zip(&curve.per_sample_loglik).map(|(w, col)| w * col[i]).sum())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| mean(&resample_indices(n, &mut rng).iter().map(|&i| per_row[i]).collect::<Vec<_>>()))
        .collect();
    stats.sort_by(f64::total_cmp);
    let point = iauc(curve);
    let (lo, hi) = (percentile(&stats, 0.025), percentile(&stats, 0.975));
    Ok((lo.min(point), hi.max(point)))
}

/// Percentile bootstrap 95% interval of the mean log-likelihood at each
/// grid point, from one shared set of resamples.
pub fn pointwise_ci(curve: &InclusionCurve, resamples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let n = require_samples(curve)?;
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = vec![Vec::with_capacity(resamples); curve.grid.len()];
    for _ in 0..resamples {
        let idx = resample_indices(n, &mut rng);
        for (b, col) in boot.iter_mut().zip(&curve.per_sample_loglik) {
            b.push(idx.iter().map(|&i| col[i]).sum::<f64>() / n as f64);
        }
    }
    Ok(boot
        .into_iter()
        .zip(&curve.mean_loglik)
        .map(|(mut b, &m)| {
            b.sort_by(f64::total_cmp);
            (percentile(&b, 0.025).min(m), percentile(&b, 0.975).max(m))
        })
        .collect())
}

/// Result of the leakage check at each grid point below 100.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageCheck {
    pub flag: bool,
    /// Mean of `ll(n) - ll(100)` per grid point.
    pub mean_excess: Vec<f64>,
    /// 2.5th bootstrap percentile of the same mean.
    pub lower_excess: Vec<f64>,
}

/// Flags leakage when, at some grid point, the mean log-likelihood exceeds the
/// full-feature value even at the one-sided 97.5% bootstrap lower bound.
pub fn leakage_check(curve: &InclusionCurve, resamples: usize, seed: u64) -> Result<LeakageCheck> {
    let n = require_samples(curve)?;
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be >= 1".into()));
    }
    let last = curve.per_sample_loglik.last().expect("grid is non-empty");
    let points = curve.grid.len() - 1;
    let diffs: Vec<Vec<f64>> = curve.per_sample_loglik[..points]
        .iter()
        .map(|col| col.iter().zip(last).map(|(a, b)| a - b).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = vec![Vec::with_capacity(resamples); points];
    for _ in 0..resamples {
        let idx = resample_indices(n, &mut rng);
        for (b, d) in boot.iter_mut().zip(&diffs) {
            b.push(idx.iter().map(|&i| d[i]).sum::<f64>() / n as f64);
        }
    }
    let mean_excess: Vec<f64> = diffs.iter().map(|d| mean(d)).collect();
    let lower_excess: Vec<f64> = boot
        .into_iter()
        .map(|mut b| {
            b.sort_by(f64::total_cmp);
            percentile(&b, 0.025)
        })
        .collect();
    Ok(LeakageCheck {
        flag: lower_excess.iter().any(|&l| l > LEAKAGE_TOLERANCE),
        mean_excess,
        lower_excess,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub grid: Grid,
    pub mode: RankingMode,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            mode: RankingMode::Signed,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub iauc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub curve: InclusionCurve,
    pub full_feature_loglik: f64,
    pub leakage_flag: bool,
    pub seed: u64,
}

/// Curve, iAUC, interval and leakage flag for one attribution method.
pub fn evaluate(
    method: &str,
    attribs: &[AttributionVector],
    model: &dyn ConditionalModel,
    data: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let curve = inclusion_curve(attribs, model, data, &cfg.grid, cfg.mode)?;
    let (ci_low, ci_high) = bootstrap_ci(&curve, cfg.resamples, cfg.seed)?;
    let leak = leakage_check(&curve, cfg.resamples, cfg.seed ^ 0x5bd1_e995)?;
    Ok(EvalReport {
        method: method.to_string(),
        iauc: iauc(&curve),
        ci_low,
        ci_high,
        full_feature_loglik: curve.full_feature_loglik(),
        leakage_flag: leak.flag,
        curve,
        seed: cfg.seed,
    })
}

/// Uniform random scores in `[0, 1)`: a class-independent baseline.
pub fn random_attribution(dim: usize, seed: u64) -> AttributionVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttributionVector::new((0..dim).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Scores `d, d-1, ..., 1` in the order given by `ranking`.
pub fn ranking_scores(ranking: &[usize]) -> AttributionVector {
    let d = ranking.len();
    let mut scores = vec![0.0; d];
    for (pos, &i) in ranking.iter().enumerate() {
        scores[i] = (d - pos) as f64;
    }
    AttributionVector::new(scores).unwrap()
}

/// Trapezoid-weighted mean over the grid of `KL(p(. | x) || p(. | x_top_n))`
/// for a ranking.
pub fn ranking_objective(
    model: &dyn ConditionalModel,
    x: &Instance,
    ranking: &[usize],
    grid: &Grid,
) -> Result<f64> {
    let full = model.predict_full(x)?;
    let d = x.dim();
    let mut total = 0.0;
    for (w, &n) in grid.trapezoid_weights().iter().zip(grid.points()) {
        let s = SubsetMask::from_indices(d, ranking.iter().copied().take(subset_size(d, n)));
        total += w * kl_divergence(&full, &model.predict_subset(x, &s)?)?;
    }
    Ok(total)
}

/// The ranking minimizing [`ranking_objective`] over all `d!` permutations,
/// returned as scores `d, ..., 1`. Ties go to the lexicographically smallest
/// permutation.
pub fn optimal_explainer_bruteforce(
    model: &dyn ConditionalModel,
    x: &Instance,
    grid: &Grid,
) -> Result<AttributionVector> {
    let d = x.dim();
    check_dim(model.dim(), d)?;
    if d > MAX_BRUTEFORCE_DIM {
        return Err(Error::TooLarge {
            what: "d",
            value: d,
            limit: MAX_BRUTEFORCE_DIM,
        });
    }
    let full = model.predict_full(x)?;
    let weights = grid.trapezoid_weights();
    let mut kl_cache: HashMap<SubsetMask, f64> = HashMap::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..d).permutations(d) {
        let mut total = 0.0;
        for (w, &n) in weights.iter().zip(grid.points()) {
            let s = SubsetMask::from_indices(d, perm.iter().copied().take(subset_size(d, n)));
            let kl = match kl_cache.get(&s) {
                Some(&v) => v,
                None => {
                    let v = kl_divergence(&full, &model.predict_subset(x, &s)?)?;
                    kl_cache.insert(s, v);
                    v
                }
            };
            total += w * kl;
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    Ok(ranking_scores(&perm))
}

/// Exact expected inclusion curve `E_{x,y}[log F(y | x_top_n(e(x, y)))]` of a
/// finite-support process. `explainer` receives the input and the label it
/// may (or may not) use.
pub fn expected_inclusion_curve<F>(
    process: &SyntheticProcess,
    grid: &Grid,
    mode: RankingMode,
    mut explainer: F,
) -> Result<InclusionCurve>
where
    F: FnMut(&Instance, Label) -> Result<AttributionVector>,
{
    let support = process
        .support()
        .ok_or_else(|| Error::Unsupported(format!("{} has no finite support", process.name())))?;
    let d = process.dim();
    let full = SubsetMask::full(d);
    let mut means = vec![0.0; grid.len()];
    for (x, px) in &support {
        let f = process.conditional(x, &full)?;
        for y in (0..process.num_classes()).map(Label) {
            let py = f.prob(y);
            if py == 0.0 {
                continue;
            }
            let e = explainer(x, y)?;
            for (m, &n) in means.iter_mut().zip(grid.points()) {
                let s = top_n_ranked(&e, n, mode);
                *m += px * py * log_likelihood(&process.conditional(x, &s)?, y);
            }
        }
    }
    InclusionCurve::from_means(grid.clone(), means)
}

/// An input and grid point where the predicted class became more likely
/// after removing features.
#[derive(Debug, Clone, PartialEq)]
pub struct OverconfidenceWitness {
    pub x: Instance,
    pub n: f64,
    pub predicted: Label,
    pub subset_prob: f64,
    pub full_prob: f64,
}

/// Grid for the overconfidence check; `n = 0` is excluded because the empty
/// subset is shared by every explainer.
pub const OVERCONFIDENCE_GRID: [f64; 2] = [50.0, 100.0];

/// Searches the support of `process` for inputs where
/// `F(yhat | x_top_n(e(x, yhat))) > F(yhat | x)`, with `yhat` the argmax of
/// `model` on the full input.
pub fn predicted_class_overconfidence_check<F>(
    process: &SyntheticProcess,
    model: &dyn ConditionalModel,
    grid: &[f64],
    mut explainer: F,
) -> Result<Vec<OverconfidenceWitness>>
where
    F: FnMut(&Instance, Label) -> Result<AttributionVector>,
{
    let support = process
        .support()
        .ok_or_else(|| Error::Unsupported(format!("{} has no finite support", process.name())))?;
    let full = SubsetMask::full(process.dim());
    let mut witnesses = Vec::new();
    for (x, px) in support {
        if px == 0.0 {
            continue;
        }
        let predicted = model.predict_full(&x)?.argmax();
        let full_prob = process.conditional(&x, &full)?.prob(predicted);
        let e = explainer(&x, predicted)?;
        for &n in grid {
            let s = top_n(&e, n);
            let subset_prob = process.conditional(&x, &s)?.prob(predicted);
            if subset_prob > full_prob + 1e-12 {
                witnesses.push(OverconfidenceWitness {
                    x: x.clone(),
                    n,
                    predicted,
                    subset_prob,
                    full_prob,
                });
            }
        }
    }
    Ok(witnesses)
}
