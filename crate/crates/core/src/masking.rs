//! Feature subsets, the masking function, and the subset distributions used
//! for surrogate training and Shapley estimation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::prob::Instance;

/// Largest dimension for which all `2^d` subsets may be enumerated.
pub const MAX_ENUMERATION_DIM: usize = 20;

/// Value written into removed features. Always paired with a zero indicator bit.
pub const MASK_SENTINEL: f64 = 0.0;

/// A subset `s` in `{0,1}^d`; `true` means the feature is retained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask(Vec<bool>);

impl SubsetMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn full(dim: usize) -> Self {
        Self(vec![true; dim])
    }

    pub fn empty(dim: usize) -> Self {
        Self(vec![false; dim])
    }

    /// Mask whose bit string, read with feature 0 as the most significant
    /// bit, is the binary representation of `index`.
    pub fn from_index(index: u64, dim: usize) -> Self {
        Self((0..dim).map(|j| (index >> (dim - 1 - j)) & 1 == 1).collect())
    }

    pub fn from_indices(dim: usize, retained: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; dim];
        for i in retained {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn parse(bit_string: &str) -> Result<Self> {
        bit_string
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid mask character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }

    /// `s + e_i`.
    pub fn with(&self, i: usize) -> Self {
        let mut bits = self.0.clone();
        bits[i] = true;
        Self(bits)
    }

    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Inverse of [`SubsetMask::from_index`].
    pub fn index(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn as_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl std::fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// `m(x, s)`: removed features carry the sentinel, the indicator carries `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInstance {
    values: Vec<f64>,
    indicator: SubsetMask,
}

impl MaskedInstance {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indicator(&self) -> &SubsetMask {
        &self.indicator
    }

    /// Concatenation `values ++ indicator`, the `2d` input of surrogate models.
    pub fn to_model_input(&self) -> Vec<f64> {
        let mut input = Vec::with_capacity(2 * self.values.len());
        input.extend_from_slice(&self.values);
        input.extend(self.indicator.as_f64());
        input
    }
}

pub fn mask(x: &Instance, s: &SubsetMask) -> Result<MaskedInstance> {
    check_dim(x.dim(), s.dim())?;
    let values = x
        .features()
        .iter()
        .zip(s.bits())
        .map(|(&v, &keep)| if keep { v } else { MASK_SENTINEL })
        .collect();
    Ok(MaskedInstance {
        values,
        indicator: s.clone(),
    })
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Unnormalized Shapley kernel weight `(d-1) / (C(d,k) k (d-k))` of a single
/// subset of size `k`.
pub fn shapley_kernel_weight(dim: usize, k: usize) -> Result<f64> {
    if k == 0 || k >= dim {
        return Err(Error::InvalidArgument(format!(
            "Shapley kernel weight is infinite for |s| = {k} with d = {dim}"
        )));
    }
    Ok((dim - 1) as f64 / (binomial(dim, k) * k as f64 * (dim - k) as f64))
}

/// All `2^d` subsets in lexicographic order of the bit string.
pub fn enumerate_subsets(dim: usize) -> Result<Vec<SubsetMask>> {
    if dim > MAX_ENUMERATION_DIM {
        return Err(Error::TooLarge {
            what: "d",
            value: dim,
            limit: MAX_ENUMERATION_DIM,
        });
    }
    Ok((0..1u64 << dim)
        .map(|i| SubsetMask::from_index(i, dim))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// `|s|` uniform on `{0..d}`, then a uniform subset of that size.
    UniformCardinality,
    /// `|s|` proportional to the total kernel mass of its size class, `{1..d-1}`.
    ShapleyKernel,
    /// Cycles through every subset in enumeration order.
    FullEnumeration,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-cardinality" => Ok(Self::UniformCardinality),
            "shapley-kernel" => Ok(Self::ShapleyKernel),
            "full-enumeration" => Ok(Self::FullEnumeration),
            other => Err(Error::InvalidArgument(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Exact probability of each cardinality `0..=d` under a sampler kind.
pub fn cardinality_probabilities(kind: SamplerKind, dim: usize) -> Vec<f64> {
    match kind {
        SamplerKind::UniformCardinality => vec![1.0 / (dim + 1) as f64; dim + 1],
        SamplerKind::ShapleyKernel => {
            let mut probs: Vec<f64> = (0..=dim)
                .map(|k| {
                    if k == 0 || k == dim {
                        0.0
                    } else {
                        1.0 / (k * (dim - k)) as f64
                    }
                })
                .collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            probs
        }
        SamplerKind::FullEnumeration => {
            let total = 2f64.powi(dim as i32);
            (0..=dim).map(|k| binomial(dim, k) / total).collect()
        }
    }
}

/// Seeded stream of subsets. One sampler per worker.
#[derive(Debug, Clone)]
pub struct SubsetSampler {
    kind: SamplerKind,
    dim: usize,
    seed: u64,
    rng: ChaCha8Rng,
    sizes: Vec<usize>,
    size_dist: Option<WeightedIndex<f64>>,
    cursor: u64,
}

impl SubsetSampler {
    pub fn new(kind: SamplerKind, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("sampler needs d >= 1".into()));
        }
        if kind == SamplerKind::ShapleyKernel && dim < 2 {
            return Err(Error::InvalidArgument(
                "the Shapley kernel sampler needs d >= 2".into(),
            ));
        }
        if kind == SamplerKind::FullEnumeration && dim > MAX_ENUMERATION_DIM {
            return Err(Error::TooLarge {
                what: "d",
                value: dim,
                limit: MAX_ENUMERATION_DIM,
            });
        }
        let sizes: Vec<usize> = (0..=dim).collect();
        let weights = cardinality_probabilities(kind, dim);
        Self::build(kind, dim, seed, sizes, weights)
    }

    /// Shapley-kernel sampler whose cardinality is restricted to `sizes`,
    /// renormalizing the kernel mass over them.
    pub fn shapley_kernel_over(dim: usize, sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&k| k == 0 || k >= dim) {
            return Err(Error::InvalidArgument(
                "restricted kernel sizes must lie in 1..d".into(),
            ));
        }
        let all = cardinality_probabilities(SamplerKind::ShapleyKernel, dim);
        let weights = sizes.iter().map(|&k| all[k]).collect();
        Self::build(SamplerKind::ShapleyKernel, dim, seed, sizes.to_vec(), weights)
    }

    /// Worker-local sampler seeded `base_seed ^ worker_index`.
    pub fn for_worker(kind: SamplerKind, dim: usize, base_seed: u64, worker: usize) -> Result<Self> {
        Self::new(kind, dim, base_seed ^ worker as u64)
    }

    fn build(
        kind: SamplerKind,
        dim: usize,
        seed: u64,
        sizes: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let size_dist = match kind {
            SamplerKind::FullEnumeration => None,
            _ => Some(
                WeightedIndex::new(&weights)
                    .map_err(|e| Error::InvalidArgument(format!("cardinality weights: {e}")))?,
            ),
        };
        Ok(Self {
            kind,
            dim,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sizes,
            size_dist,
            cursor: 0,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&mut self) -> SubsetMask {
        match &self.size_dist {
            None => {
                let mask = SubsetMask::from_index(self.cursor, self.dim);
                self.cursor = (self.cursor + 1) % (1u64 << self.dim);
                mask
            }
            Some(dist) => {
                let k = self.sizes[dist.sample(&mut self.rng)];
                let chosen = rand::seq::index::sample(&mut self.rng, self.dim, k);
                SubsetMask::from_indices(self.dim, chosen.iter())
            }
        }
    }
}
