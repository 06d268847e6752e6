//! Sampling designs: inclusion probabilities, `Delta_kl`, sample drawing and the
//! exhaustive support enumeration used by the exact oracle.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srswor,
    StratifiedSrswor,
    Poisson,
}

/// The units selected by a design, as sorted population indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    indices: Vec<usize>,
}

impl Sample {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("sample contains a repeated unit".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }
}

/// First- and second-order inclusion probabilities in closed form.
///
/// `pi_kl` is never materialized as a matrix; every quadratic form over the
/// design is evaluated from per-stratum sums in `O(N)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingDesign {
    Srswor {
        population: usize,
        sample: usize,
    },
    StratifiedSrswor {
        strata: Vec<usize>,
        sizes: Vec<usize>,
        allocation: Vec<usize>,
    },
    Poisson {
        pi: Vec<f64>,
    },
}

impl SamplingDesign {
    pub fn srswor(population: usize, sample: usize) -> Result<Self> {
        if sample == 0 || sample > population {
            return Err(Error::InvalidDesign(format!(
                "SRSWOR needs 1 <= n <= N, got n = {sample}, N = {population}"
            )));
        }
        Ok(SamplingDesign::Srswor { population, sample })
    }

    /// `strata[k]` is the 0-based stratum of unit `k`; `allocation[l]` is `n_l`.
    pub fn stratified(strata: Vec<usize>, allocation: Vec<usize>) -> Result<Self> {
        let mut sizes = vec![0usize; allocation.len()];
        for &s in &strata {
            if s >= allocation.len() {
                return Err(Error::InvalidDesign(format!(
                    "unit in stratum {s} but only {} allocations given",
                    allocation.len()
                )));
            }
            sizes[s] += 1;
        }
        for (l, (&n_l, &big_n)) in allocation.iter().zip(&sizes).enumerate() {
            if n_l == 0 || n_l > big_n {
                return Err(Error::InvalidDesign(format!(
                    "stratum {l} needs 1 <= n_l <= N_l, got n_l = {n_l}, N_l = {big_n}"
                )));
            }
        }
        Ok(SamplingDesign::StratifiedSrswor {
            strata,
            sizes,
            allocation,
        })
    }

    pub fn poisson(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidDesign("Poisson design over an empty population".into()));
        }
        if let Some((k, p)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidDesign(format!(
                "inclusion probability of unit {k} must lie in (0, 1], got {p}"
            )));
        }
        Ok(SamplingDesign::Poisson { pi })
    }

    pub fn kind(&self) -> DesignKind {
        match self {
            SamplingDesign::Srswor { .. } => DesignKind::Srswor,
            SamplingDesign::StratifiedSrswor { .. } => DesignKind::StratifiedSrswor,
            SamplingDesign::Poisson { .. } => DesignKind::Poisson,
        }
    }

    pub fn population_size(&self) -> usize {
        match self {
            SamplingDesign::Srswor { population, .. } => *population,
            SamplingDesign::StratifiedSrswor { strata, .. } => strata.len(),
            SamplingDesign::Poisson { pi } => pi.len(),
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        let size = self.population_size();
        if k >= size {
            return Err(Error::IndexOutOfRange { index: k, size });
        }
        Ok(())
    }

    /// `pi_k`. Panics on an out-of-range index.
    pub fn pi(&self, k: usize) -> f64 {
        match self {
            SamplingDesign::Srswor { population, sample } => {
                assert!(k < *population, "unit {k} out of range");
                *sample as f64 / *population as f64
            }
            SamplingDesign::StratifiedSrswor {
                strata,
                sizes,
                allocation,
            } => {
                let l = strata[k];
                allocation[l] as f64 / sizes[l] as f64
            }
            SamplingDesign::Poisson { pi } => pi[k],
        }
    }

    pub fn first_order(&self) -> Vec<f64> {
        (0..self.population_size()).map(|k| self.pi(k)).collect()
    }

    /// `pi_kl`, with `pi_kk = pi_k`. Panics on an out-of-range index.
    pub fn pi_joint(&self, k: usize, l: usize) -> f64 {
        if k == l {
            return self.pi(k);
        }
        match self {
            SamplingDesign::Srswor { population, sample } => {
                assert!(k < *population && l < *population, "unit out of range");
                srswor_joint(*population, *sample)
            }
            SamplingDesign::StratifiedSrswor {
                strata,
                sizes,
                allocation,
            } => {
                let (a, b) = (strata[k], strata[l]);
                if a == b {
                    srswor_joint(sizes[a], allocation[a])
                } else {
                    self.pi(k) * self.pi(l)
                }
            }
            SamplingDesign::Poisson { pi } => pi[k] * pi[l],
        }
    }

    /// `Delta_kl = pi_kl - pi_k pi_l`, and `Delta_kk = pi_k (1 - pi_k)`.
    pub fn delta(&self, k: usize, l: usize) -> Result<f64> {
        self.check(k)?;
        self.check(l)?;
        if k == l {
            let p = self.pi(k);
            Ok(p * (1.0 - p))
        } else {
            Ok(self.pi_joint(k, l) - self.pi(k) * self.pi(l))
        }
    }

    /// Population groups inside which `pi` is constant and between which the
    /// design covariance vanishes.
    fn blocks(&self) -> Vec<(Vec<usize>, usize)> {
        match self {
            SamplingDesign::Srswor { population, sample } => {
                vec![((0..*population).collect(), *sample)]
            }
            SamplingDesign::StratifiedSrswor { strata, allocation, .. } => {
                let mut members = vec![Vec::new(); allocation.len()];
                for (k, &s) in strata.iter().enumerate() {
                    members[s].push(k);
                }
                members.into_iter().zip(allocation.iter().copied()).collect()
            }
            SamplingDesign::Poisson { .. } => Vec::new(),
        }
    }

    /// `sum_{k,l in U} Delta_kl / (pi_k pi_l) z_k z_l`, the design variance of
    /// the HT total of `z`. `z` is indexed by population unit.
    pub fn quadratic_form(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.population_size() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a population of {}",
                z.len(),
                self.population_size()
            )));
        }
        Ok(match self {
            SamplingDesign::Poisson { pi } => pi.iter().zip(z).map(|(p, v)| (1.0 - p) / p * v * v).sum(),
            _ => self
                .blocks()
                .iter()
                .map(|(members, n)| {
                    let vals: Vec<f64> = members.iter().map(|&k| z[k]).collect();
                    srswor_total_variance(&vals, *n)
                })
                .sum(),
        })
    }

    /// Reference `O(N^2)` evaluation of [`Self::quadratic_form`] through
    /// `pi_kl`, for small populations.
    pub fn quadratic_form_dense(&self, z: &[f64]) -> Result<f64> {
        let size = self.population_size();
        if z.len() != size {
            return Err(Error::DimensionMismatch("quadratic form input length".into()));
        }
        let mut acc = 0.0;
        for k in 0..size {
            for l in 0..size {
                acc += self.delta(k, l)? / (self.pi(k) * self.pi(l)) * z[k] * z[l];
            }
        }
        Ok(acc)
    }

    /// `sum_{k,l in s} Delta_kl / (pi_kl pi_k pi_l) z_k z_l`, the HT-form
    /// estimator of [`Self::quadratic_form`]. `z[i]` belongs to
    /// `sample.indices()[i]`.
    pub fn sample_quadratic_form(&self, sample: &Sample, z: &[f64]) -> Result<f64> {
        if z.len() != sample.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a sample of {}",
                z.len(),
                sample.len()
            )));
        }
        for &k in sample.indices() {
            self.check(k)?;
        }
        Ok(match self {
            SamplingDesign::Poisson { pi } => sample
                .indices()
                .iter()
                .zip(z)
                .map(|(&k, v)| (1.0 - pi[k]) / (pi[k] * pi[k]) * v * v)
                .sum(),
            SamplingDesign::Srswor { population, sample: n } => srswor_total_variance_estimate(z, *population, *n),
            SamplingDesign::StratifiedSrswor {
                strata,
                sizes,
                allocation,
            } => {
                let mut by_stratum = vec![Vec::new(); allocation.len()];
                for (&k, &v) in sample.indices().iter().zip(z) {
                    by_stratum[strata[k]].push(v);
                }
                by_stratum
                    .iter()
                    .enumerate()
                    .map(|(l, vals)| srswor_total_variance_estimate(vals, sizes[l], allocation[l]))
                    .sum()
            }
        })
    }

    /// Reference `O(n^2)` evaluation of [`Self::sample_quadratic_form`].
    pub fn sample_quadratic_form_dense(&self, sample: &Sample, z: &[f64]) -> Result<f64> {
        let idx = sample.indices();
        let mut acc = 0.0;
        for (a, &k) in idx.iter().enumerate() {
            for (b, &l) in idx.iter().enumerate() {
                let joint = self.pi_joint(k, l);
                if joint <= 0.0 {
                    return Err(Error::ZeroJointInclusion { k, l });
                }
                acc += self.delta(k, l)? / (joint * self.pi(k) * self.pi(l)) * z[a] * z[b];
            }
        }
        Ok(acc)
    }
}

fn srswor_joint(population: usize, sample: usize) -> f64 {
    if population < 2 {
        return 0.0;
    }
    (sample as f64 * (sample as f64 - 1.0)) / (population as f64 * (population as f64 - 1.0))
}

fn centered_sum_sq(vals: &[f64]) -> f64 {
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum()
}

/// `N^2 (1 - n/N) S^2 / n` over the population values of one SRSWOR block.
fn srswor_total_variance(vals: &[f64], n: usize) -> f64 {
    let big_n = vals.len();
    if big_n < 2 || n == big_n {
        return 0.0;
    }
    let big_nf = big_n as f64;
    let s2 = centered_sum_sq(vals) / (big_nf - 1.0);
    big_nf * big_nf * (1.0 - n as f64 / big_nf) * s2 / n as f64
}

/// `N^2 (1 - n/N) s^2 / n` over the sampled values of one SRSWOR block; with a
/// single sampled unit only the diagonal term `(1 - pi)/pi^2 z^2` exists.
fn srswor_total_variance_estimate(vals: &[f64], big_n: usize, n: usize) -> f64 {
    let big_nf = big_n as f64;
    let pi = n as f64 / big_nf;
    match vals.len() {
        0 => 0.0,
        1 => (1.0 - pi) / (pi * pi) * vals[0] * vals[0],
        m => {
            let s2 = centered_sum_sq(vals) / (m as f64 - 1.0);
            big_nf * big_nf * (1.0 - pi) * s2 / n as f64
        }
    }
}

pub fn draw_sample(design: &SamplingDesign, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_sample_with(design, &mut rng)
}

pub fn draw_sample_with<R: Rng + ?Sized>(design: &SamplingDesign, rng: &mut R) -> Sample {
    let indices = match design {
        SamplingDesign::Srswor { population, sample } => index::sample(rng, *population, *sample).into_vec(),
        SamplingDesign::StratifiedSrswor { strata, allocation, .. } => {
            let mut members = vec![Vec::new(); allocation.len()];
            for (k, &s) in strata.iter().enumerate() {
                members[s].push(k);
            }
            let mut out = Vec::new();
            for (units, &n_l) in members.iter().zip(allocation) {
                out.extend(index::sample(rng, units.len(), n_l).iter().map(|i| units[i]));
            }
            out
        }
        SamplingDesign::Poisson { pi } => pi
            .iter()
            .enumerate()
            .filter_map(|(k, &p)| (rng.random::<f64>() < p).then_some(k))
            .collect(),
    };
    Sample::new(indices).expect("designs draw distinct units")
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `units`, in lexicographic order of positions.
fn combinations(units: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = units.len();
    let mut out = Vec::new();
    let mut pos: Vec<usize> = (0..k).collect();
    loop {
        out.push(pos.iter().map(|&p| units[p]).collect());
        let Some(i) = (0..k).rev().find(|&i| pos[i] != i + n - k) else {
            return out;
        };
        pos[i] += 1;
        for m in (i + 1)..k {
            pos[m] = pos[m - 1] + 1;
        }
    }
}

/// Support size of the design, as a float so huge designs do not overflow.
pub fn support_size(design: &SamplingDesign) -> f64 {
    match design {
        SamplingDesign::Srswor { population, sample } => binomial(*population, *sample),
        SamplingDesign::StratifiedSrswor { sizes, allocation, .. } => sizes
            .iter()
            .zip(allocation)
            .map(|(&n_big, &n)| binomial(n_big, n))
            .product(),
        SamplingDesign::Poisson { pi } => 2f64.powi(pi.len() as i32),
    }
}

/// Every sample with positive probability, with that probability.
pub fn enumerate_samples(design: &SamplingDesign, cap: f64) -> Result<Vec<(Sample, f64)>> {
    let size = support_size(design);
    if size > cap {
        return Err(Error::TooLargeToEnumerate { size, cap });
    }
    let out = match design {
        SamplingDesign::Srswor { population, sample } => {
            let units: Vec<usize> = (0..*population).collect();
            let p = 1.0 / size;
            combinations(&units, *sample)
                .into_iter()
                .map(|c| (Sample { indices: c }, p))
                .collect()
        }
        SamplingDesign::StratifiedSrswor { strata, allocation, .. } => {
            let mut acc: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
            for (l, &n_l) in allocation.iter().enumerate() {
                let units: Vec<usize> = (0..strata.len()).filter(|&k| strata[k] == l).collect();
                let combos = combinations(&units, n_l);
                let p = 1.0 / combos.len() as f64;
                acc = acc
                    .iter()
                    .flat_map(|(prefix, q)| {
                        combos.iter().map(move |c| {
                            let mut v = prefix.clone();
                            v.extend_from_slice(c);
                            (v, q * p)
                        })
                    })
                    .collect();
            }
            acc.into_iter()
                .map(|(v, p)| (Sample::new(v).expect("disjoint strata"), p))
                .collect()
        }
        SamplingDesign::Poisson { pi } => {
            let n = pi.len();
            (0u64..(1u64 << n))
                .filter_map(|mask| {
                    let mut p = 1.0;
                    let mut idx = Vec::new();
                    for (k, &pk) in pi.iter().enumerate() {
                        if mask >> k & 1 == 1 {
                            p *= pk;
                            idx.push(k);
                        } else {
                            p *= 1.0 - pk;
                        }
                    }
                    (p > 0.0).then_some((Sample { indices: idx }, p))
                })
                .collect()
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_closed_forms() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        assert!((d.delta(0, 1).unwrap() + 1.0 / 12.0).abs() < 1e-15);
        assert!((d.delta(2, 2).unwrap() - 0.25).abs() < 1e-15);
        let p = SamplingDesign::poisson(vec![0.3, 1.0, 0.7]).unwrap();
        assert_eq!(p.delta(0, 2).unwrap(), 0.0);
        assert_eq!(p.delta(1, 1).unwrap(), 0.0);
        assert!(matches!(
            d.delta(0, 4),
            Err(Error::IndexOutOfRange { index: 4, size: 4 })
        ));
    }

    #[test]
    fn srswor_delta_matches_enumerated_membership_covariance() {
        let d = SamplingDesign::srswor(4, 2).unwrap();
        let support = enumerate_samples(&d, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(support.len(), 6);
        let both: f64 = support
            .iter()
            .filter(|(s, _)| s.contains(0) && s.contains(1))
            .map(|(_, p)| p)
            .sum();
        let first: f64 = support.iter().filter(|(s, _)| s.contains(0)).map(|(_, p)| p).sum();
        assert!((both - first * first - d.delta(0, 1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn invalid_designs() {
        assert!(SamplingDesign::srswor(3, 4).is_err());
        assert!(SamplingDesign::srswor(3, 0).is_err());
        assert!(SamplingDesign::stratified(vec![0, 0, 1], vec![1, 2]).is_err());
        assert!(SamplingDesign::poisson(vec![0.5, 0.0]).is_err());
    }

    #[test]
    fn census_draws() {
        let d = SamplingDesign::srswor(5, 5).unwrap();
        assert_eq!(draw_sample(&d, 9).indices(), &[0, 1, 2, 3, 4]);
        let s = SamplingDesign::stratified(vec![0, 1, 0, 1, 1], vec![2, 3]).unwrap();
        assert_eq!(draw_sample(&s, 9).indices(), &[0, 1, 2, 3, 4]);
        assert_eq!(draw_sample(&s, 9), draw_sample(&s, 9));
    }

    #[test]
    fn srswor_inclusion_frequencies() {
        let d = SamplingDesign::srswor(5, 2).unwrap();
        let reps = 100_000u64;
        let mut counts = [0u32; 5];
        for seed in 0..reps {
            for &k in draw_sample(&d, seed).indices() {
                counts[k] += 1;
            }
        }
        let se = (0.4f64 * 0.6 / reps as f64).sqrt();
        for c in counts {
            let freq = c as f64 / reps as f64;
            assert!((freq - 0.4).abs() < 3.0 * se, "frequency {freq}");
        }
    }

    #[test]
    fn enumeration_examples() {
        let p = SamplingDesign::poisson(vec![1.0, 1.0]).unwrap();
        let support = enumerate_samples(&p, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].0.indices(), &[0, 1]);
        assert_eq!(support[0].1, 1.0);

        let s = SamplingDesign::stratified(vec![0, 0, 1, 1], vec![1, 1]).unwrap();
        let support = enumerate_samples(&s, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(support.len(), 4);
        assert!(support.iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));

        let big = SamplingDesign::srswor(40, 20).unwrap();
        assert!(matches!(
            enumerate_samples(&big, DEFAULT_ENUMERATION_CAP),
            Err(Error::TooLargeToEnumerate { .. })
        ));
    }

    fn arb_design() -> impl Strategy<Value = SamplingDesign> {
        prop_oneof![
            (1usize..8)
                .prop_flat_map(|n_big| (Just(n_big), 1..=n_big))
                .prop_map(|(n_big, n)| SamplingDesign::srswor(n_big, n).unwrap()),
            prop::collection::vec(0.05f64..=1.0, 1..8).prop_map(|pi| SamplingDesign::poisson(pi).unwrap()),
            (prop::collection::vec(1usize..4, 1..4), any::<u64>()).prop_map(|(sizes, seed)| {
                let strata: Vec<usize> = sizes
                    .iter()
                    .enumerate()
                    .flat_map(|(l, &m)| std::iter::repeat_n(l, m))
                    .collect();
                let alloc = sizes
                    .iter()
                    .enumerate()
                    .map(|(l, &m)| 1 + (seed as usize + l) % m)
                    .collect();
                SamplingDesign::stratified(strata, alloc).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn enumeration_reproduces_inclusion_probabilities(design in arb_design()) {
            let support = enumerate_samples(&design, DEFAULT_ENUMERATION_CAP).unwrap();
            let total: f64 = support.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let n = design.population_size();
            for k in 0..n {
                for l in 0..n {
                    let freq: f64 = support
                        .iter()
                        .filter(|(s, _)| s.contains(k) && s.contains(l))
                        .map(|(_, p)| p)
                        .sum();
                    prop_assert!((freq - design.pi_joint(k, l)).abs() < 1e-12);
                    prop_assert_eq!(design.delta(k, l).unwrap(), design.delta(l, k).unwrap());
                }
            }
        }

        #[test]
        fn quadratic_forms_match_dense(design in arb_design(), seed in any::<u64>()) {
            let n = design.population_size();
            let z: Vec<f64> = (0..n).map(|k| ((seed >> (k % 60)) % 97) as f64 / 7.0 - 3.0).collect();
            let fast = design.quadratic_form(&z).unwrap();
            let dense = design.quadratic_form_dense(&z).unwrap();
            prop_assert!((fast - dense).abs() < 1e-9 * dense.abs().max(1.0));

            let sample = draw_sample(&design, seed);
            let zs: Vec<f64> = sample.indices().iter().map(|&k| z[k]).collect();
            let fast = design.sample_quadratic_form(&sample, &zs).unwrap();
            let dense = design.sample_quadratic_form_dense(&sample, &zs).unwrap();
            prop_assert!((fast - dense).abs() < 1e-9 * dense.abs().max(1.0));
        }
    }
}
