//! Aggregation of sampled relevance maps: Mean, percentile (Intersection /
//! Union), group normalization, UAI+ and MinMax display normalization.

use rayon::prelude::*;

use crate::attribution::{attribute, AttributionMethod};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::posterior::{PosteriorSample, WeightPosterior};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Tolerance for recognizing a group-normalized set (global max == 1).
const NORMALIZED_TOL: f32 = 1e-5;

/// N sampled relevance maps for one input: the empirical relevance
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceSet {
    /// Sampled maps, all with the same spatial shape.
    pub samples: Vec<Tensor>,
    /// The explained input.
    pub input: Tensor,
    pub class_index: usize,
    /// Canonical attribution-method tag.
    pub method: String,
    /// Posterior variant tag.
    pub posterior: String,
    /// Seed used for sample `i` (member index when enumerating an ensemble).
    pub seeds: Vec<u64>,
}

impl RelevanceSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn map_shape(&self) -> &[usize] {
        self.samples[0].shape()
    }

    fn global_max(&self) -> f32 {
        self.samples
            .iter()
            .flat_map(|s| s.data().iter().copied())
            .fold(f32::NEG_INFINITY, f32::max)
    }

    fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument(
                "relevance set needs at least one sample".to_string(),
            ));
        }
        let shape = self.samples[0].shape();
        if self.samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::InvalidArgument(
                "relevance samples disagree on shape".to_string(),
            ));
        }
        Ok(())
    }
}

/// What an [`AggregateMap`] holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregateKind {
    Mean,
    /// Entrywise percentile; alpha in `[0, 100]`.
    Percentile(f32),
    /// Fraction of samples with relevance beyond epsilon.
    UaiPlus(f32),
}

/// Normalization applied to an aggregate map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    Group,
    MinMax,
}

/// An aggregated explanation over a [`RelevanceSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMap {
    pub values: Tensor,
    pub kind: AggregateKind,
    pub normalization: Normalization,
}

/// Which side of epsilon UAI+ counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UaiPlusRule {
    /// Fraction of samples with relevance strictly above epsilon (the
    /// positive-evidence reading).
    #[default]
    Exceed,
    /// Literal reading: fraction of samples with relevance strictly below
    /// epsilon.
    Below,
}

/// Draws `n` posterior samples and attributes each one.
///
/// With `enumerate` set (ensembles only) sample `i` uses member `i mod M`
/// instead of a random draw, so `n == M` yields exactly the per-member maps.
#[allow(clippy::too_many_arguments)]
pub fn sample_relevances(
    posterior: &WeightPosterior,
    net: &Network,
    method: &AttributionMethod,
    x: &Tensor,
    class_index: usize,
    n: usize,
    seed: u64,
    enumerate: bool,
) -> Result<RelevanceSet> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "relevance sampling needs at least one sample".to_string(),
        ));
    }
    if enumerate && posterior.member_count() == 0 {
        return Err(Error::InvalidArgument(
            "enumerate mode requires an ensemble posterior".to_string(),
        ));
    }
    let seeds: Vec<u64> = (0..n as u64)
        .map(|i| {
            if enumerate {
                i % posterior.member_count() as u64
            } else {
                derive_seed(seed, "relevance-sample", i)
            }
        })
        .collect();
    let samples: Vec<Tensor> = seeds
        .par_iter()
        .map(|&s| {
            let drawn = if enumerate {
                PosteriorSample::deterministic(
                    posterior.member(s as usize).expect("member index").clone(),
                )
            } else {
                posterior.sample(s)
            };
            Ok(attribute(method, net, &drawn, x, class_index)?.values)
        })
        .collect::<Result<_>>()?;
    Ok(RelevanceSet {
        samples,
        input: x.clone(),
        class_index,
        method: method.tag(),
        posterior: posterior.tag().to_string(),
        seeds,
    })
}

/// Entrywise arithmetic mean over the samples.
pub fn mean_explanation(set: &RelevanceSet) -> Result<AggregateMap> {
    set.validate()?;
    let n = set.len() as f64;
    let mut acc = vec![0.0f64; set.samples[0].len()];
    for s in &set.samples {
        for (a, v) in acc.iter_mut().zip(s.data()) {
            *a += f64::from(*v);
        }
    }
    let values = Tensor::new(
        set.map_shape().to_vec(),
        acc.into_iter().map(|v| (v / n) as f32).collect(),
    )?;
    Ok(AggregateMap {
        values,
        kind: AggregateKind::Mean,
        normalization: Normalization::Raw,
    })
}

/// The alpha-th percentile of `values` (modified in place by sorting), with
/// linear interpolation between order statistics: rank `alpha/100 * (N-1)`,
/// interpolated in f64.
fn percentile_of(values: &mut [f32], alpha: f32) -> f32 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    let pos = f64::from(alpha) / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= n {
        return values[n - 1];
    }
    let frac = pos - lo as f64;
    (f64::from(values[lo]) * (1.0 - frac) + f64::from(values[lo + 1]) * frac) as f32
}

/// Entrywise alpha-th percentile of the sampled values (alpha in `[0,100]`;
/// 50 is the median).
pub fn uai_percentile(set: &RelevanceSet, alpha: f32) -> Result<AggregateMap> {
    set.validate()?;
    if !(0.0..=100.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "percentile alpha {alpha} outside [0, 100]"
        )));
    }
    let n = set.len();
    let len = set.samples[0].len();
    let data: Vec<f32> = (0..len)
        .into_par_iter()
        .map(|j| {
            let mut column: Vec<f32> = set.samples.iter().map(|s| s.data()[j]).collect();
            debug_assert_eq!(column.len(), n);
            percentile_of(&mut column, alpha)
        })
        .collect();
    Ok(AggregateMap {
        values: Tensor::new(set.map_shape().to_vec(), data)?,
        kind: AggregateKind::Percentile(alpha),
        normalization: Normalization::Raw,
    })
}

/// Divides every sampled map by the single global maximum over all entries of
/// all samples. The divisor must be positive; negative entries are divided by
/// the same value, preserving sign.
pub fn group_normalize(set: &RelevanceSet) -> Result<RelevanceSet> {
    set.validate()?;
    let max = set.global_max();
    if !(max > 0.0) {
        return Err(Error::NoPositiveRelevance);
    }
    let mut out = set.clone();
    for s in &mut out.samples {
        for v in s.data_mut() {
            *v /= max;
        }
    }
    Ok(out)
}

/// Per pixel, the fraction of samples whose relevance exceeds `epsilon`
/// (or lies below it under [`UaiPlusRule::Below`]). The set must be
/// group-normalized first.
pub fn uai_plus_with(set: &RelevanceSet, epsilon: f32, rule: UaiPlusRule) -> Result<AggregateMap> {
    set.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "uai+ epsilon {epsilon} outside (0, 1)"
        )));
    }
    let max = set.global_max();
    if (max - 1.0).abs() > NORMALIZED_TOL {
        return Err(Error::NotGroupNormalized { max });
    }
    let n = set.len();
    let len = set.samples[0].len();
    let data: Vec<f32> = (0..len)
        .map(|j| {
            let hits = set
                .samples
                .iter()
                .filter(|s| match rule {
                    UaiPlusRule::Exceed => s.data()[j] > epsilon,
                    UaiPlusRule::Below => s.data()[j] < epsilon,
                })
                .count();
            (hits as f64 / n as f64) as f32
        })
        .collect();
    Ok(AggregateMap {
        values: Tensor::new(set.map_shape().to_vec(), data)?,
        kind: AggregateKind::UaiPlus(epsilon),
        normalization: Normalization::Group,
    })
}

/// UAI+ with the default exceedance rule.
pub fn uai_plus(set: &RelevanceSet, epsilon: f32) -> Result<AggregateMap> {
    uai_plus_with(set, epsilon, UaiPlusRule::Exceed)
}

/// MinMax normalization of a tensor's values: positive entries scaled into
/// `[0,1]` by the maximum positive value, negative entries into `[-1,0]` by
/// the magnitude of the minimum. An all-zero map passes through unchanged.
pub fn minmax_normalize_values(values: &Tensor) -> Tensor {
    let max_pos = values.data().iter().copied().filter(|v| *v > 0.0).fold(0.0, f32::max);
    let min_neg = values.data().iter().copied().filter(|v| *v < 0.0).fold(0.0, f32::min);
    values.map(|v| {
        if v > 0.0 {
            v / max_pos
        } else if v < 0.0 {
            v / -min_neg
        } else {
            v
        }
    })
}

/// MinMax display normalization (idempotent; only scaling, no shifting).
pub fn minmax_normalize(map: &AggregateMap) -> AggregateMap {
    AggregateMap {
        values: minmax_normalize_values(&map.values),
        kind: map.kind,
        normalization: Normalization::MinMax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LayerSpec, Network, WeightSet};

    fn set_of(columns: &[Vec<f32>]) -> RelevanceSet {
        // columns[i] is sample i's flat map.
        let shape = vec![columns[0].len()];
        RelevanceSet {
            samples: columns
                .iter()
                .map(|c| Tensor::new(shape.clone(), c.clone()).unwrap())
                .collect(),
            input: Tensor::zeros(&shape),
            class_index: 0,
            method: "gradient".to_string(),
            posterior: "ensemble".to_string(),
            seeds: (0..columns.len() as u64).collect(),
        }
    }

    #[test]
    fn mean_of_single_sample_is_that_sample() {
        let set = set_of(&[vec![1.0, -2.0, 0.5]]);
        let mean = mean_explanation(&set).unwrap();
        assert_eq!(mean.values.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn mean_of_opposite_maps_is_zero() {
        let set = set_of(&[vec![3.0, -1.0], vec![-3.0, 1.0]]);
        let mean = mean_explanation(&set).unwrap();
        assert_eq!(mean.values.data(), &[0.0, 0.0]);
    }

    #[test]
    fn percentile_of_identical_samples_is_that_map() {
        let set = set_of(&vec![vec![2.0, -1.0]; 5]);
        for alpha in [0.0, 5.0, 50.0, 95.0, 100.0] {
            let p = uai_percentile(&set, alpha).unwrap();
            assert_eq!(p.values.data(), &[2.0, -1.0], "alpha {alpha}");
        }
    }

    #[test]
    fn median_of_odd_count_is_the_middle_order_statistic() {
        let set = set_of(&[vec![5.0], vec![3.0], vec![1.0], vec![4.0], vec![2.0]]);
        let p = uai_percentile(&set, 50.0).unwrap();
        assert_eq!(p.values.data(), &[3.0]);
    }

    #[test]
    fn percentile_is_monotone_in_alpha() {
        let set = set_of(&[
            vec![0.3, -0.5, 2.0],
            vec![-1.0, 0.0, 1.0],
            vec![0.7, 0.2, -3.0],
            vec![0.1, 0.9, 0.4],
        ]);
        let mut prev = uai_percentile(&set, 0.0).unwrap();
        for alpha in [10.0, 25.0, 50.0, 75.0, 90.0, 100.0] {
            let cur = uai_percentile(&set, alpha).unwrap();
            for (lo, hi) in prev.values.data().iter().zip(cur.values.data()) {
                assert!(lo <= hi, "alpha {alpha}");
            }
            prev = cur;
        }
    }

    #[test]
    fn mean_lies_between_extreme_percentiles() {
        let set = set_of(&[
            vec![0.3, -0.5, 2.0],
            vec![-1.0, 0.0, 1.0],
            vec![0.7, 0.2, -3.0],
        ]);
        let lo = uai_percentile(&set, 0.0).unwrap();
        let hi = uai_percentile(&set, 100.0).unwrap();
        let mean = mean_explanation(&set).unwrap();
        for ((l, m), h) in lo
            .values
            .data()
            .iter()
            .zip(mean.values.data())
            .zip(hi.values.data())
        {
            assert!(l <= m && m <= h);
        }
    }

    #[test]
    fn group_normalize_divides_by_the_global_max() {
        let set = set_of(&[vec![4.0, -2.0], vec![1.0, 0.5]]);
        let normed = group_normalize(&set).unwrap();
        assert_eq!(normed.samples[0].data(), &[1.0, -0.5]);
        assert_eq!(normed.samples[1].data(), &[0.25, 0.125]);
        // Idempotent once the max is exactly 1.
        let again = group_normalize(&normed).unwrap();
        assert_eq!(again.samples, normed.samples);
    }

    #[test]
    fn group_normalize_requires_a_positive_entry() {
        let set = set_of(&[vec![0.0, -1.0], vec![-0.5, 0.0]]);
        match group_normalize(&set) {
            Err(Error::NoPositiveRelevance) => {}
            other => panic!("expected NoPositiveRelevance, got {other:?}"),
        }
    }

    #[test]
    fn uai_plus_counts_exceedances_by_hand() {
        let set = set_of(&[vec![0.01, 1.0], vec![0.10, 0.2], vec![0.20, 0.0], vec![0.04, -0.3]]);
        let plus = uai_plus(&set, 0.05).unwrap();
        assert_eq!(plus.values.data()[0], 0.5);
        assert_eq!(plus.values.data()[1], 0.5);
    }

    #[test]
    fn uai_plus_extremes() {
        let set = set_of(&[vec![0.5, -0.2, 1.0], vec![0.5, 0.0, 0.3]]);
        let plus = uai_plus(&set, 0.05).unwrap();
        assert_eq!(plus.values.data()[0], 1.0);
        assert_eq!(plus.values.data()[1], 0.0);
        // Every value is a multiple of 1/N.
        for &v in plus.values.data() {
            let n = set.len() as f32;
            assert_eq!(v * n, (v * n).round());
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn uai_plus_rejects_unnormalized_sets() {
        let set = set_of(&[vec![4.0, 1.0]]);
        match uai_plus(&set, 0.05) {
            Err(Error::NotGroupNormalized { .. }) => {}
            other => panic!("expected NotGroupNormalized, got {other:?}"),
        }
    }

    #[test]
    fn uai_plus_literal_below_rule() {
        let set = set_of(&[vec![0.01, 1.0], vec![0.10, 0.2], vec![0.20, 0.0], vec![0.04, -0.3]]);
        let below = uai_plus_with(&set, 0.05, UaiPlusRule::Below).unwrap();
        assert_eq!(below.values.data()[0], 0.5);
        assert_eq!(below.values.data()[1], 0.5);
    }

    #[test]
    fn minmax_scales_each_sign_separately() {
        let map = AggregateMap {
            values: Tensor::new(vec![3], vec![-2.0, 0.0, 4.0]).unwrap(),
            kind: AggregateKind::Mean,
            normalization: Normalization::Raw,
        };
        let normed = minmax_normalize(&map);
        assert_eq!(normed.values.data(), &[-1.0, 0.0, 1.0]);

        // All-positive maps are only scaled, never shifted.
        let map = AggregateMap {
            values: Tensor::new(vec![2], vec![1.0, 4.0]).unwrap(),
            kind: AggregateKind::Mean,
            normalization: Normalization::Raw,
        };
        let normed = minmax_normalize(&map);
        assert_eq!(normed.values.data(), &[0.25, 1.0]);

        // Idempotence and all-zero passthrough.
        let twice = minmax_normalize(&normed);
        assert_eq!(twice.values.data(), normed.values.data());
        let zeros = AggregateMap {
            values: Tensor::zeros(&[4]),
            kind: AggregateKind::Mean,
            normalization: Normalization::Raw,
        };
        assert_eq!(minmax_normalize(&zeros).values.data(), &[0.0; 4]);
    }

    #[test]
    fn positive_scaling_commutes_with_percentiles() {
        // Power-of-two scale keeps the arithmetic exact.
        let set = set_of(&[
            vec![0.3, -0.5, 2.0],
            vec![-1.0, 0.0, 1.0],
            vec![0.7, 0.2, -3.0],
        ]);
        let scaled = set_of(&[
            vec![1.2, -2.0, 8.0],
            vec![-4.0, 0.0, 4.0],
            vec![2.8, 0.8, -12.0],
        ]);
        for alpha in [5.0, 25.0, 50.0, 75.0, 95.0] {
            let p = uai_percentile(&set, alpha).unwrap();
            let ps = uai_percentile(&scaled, alpha).unwrap();
            for (a, b) in p.values.data().iter().zip(ps.values.data()) {
                assert_eq!(a * 4.0, *b, "alpha {alpha}");
            }
        }
        // Group-normalized UAI+ is scale-free.
        let plus = uai_plus(&group_normalize(&set).unwrap(), 0.05).unwrap();
        let plus_scaled = uai_plus(&group_normalize(&scaled).unwrap(), 0.05).unwrap();
        assert_eq!(plus.values.data(), plus_scaled.values.data());
    }

    #[test]
    fn sampling_from_degenerate_posteriors_yields_identical_maps() {
        use crate::attribution::AttributionMethod;
        use crate::posterior::WeightPosterior;

        let net = Network::new(
            vec![
                LayerSpec::Dense { input: 3, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 2 },
            ],
            vec![3],
            2,
        )
        .unwrap();
        let w = WeightSet::he_init(&net, 5);
        let x = Tensor::new(vec![3], vec![0.4, -0.1, 0.8]).unwrap();
        let method = AttributionMethod::Gradient;

        let single = WeightPosterior::ensemble(vec![w.clone()]).unwrap();
        let set = sample_relevances(&single, &net, &method, &x, 0, 6, 9, false).unwrap();
        for s in &set.samples[1..] {
            assert_eq!(s.data(), set.samples[0].data());
        }

        let laplace =
            WeightPosterior::diagonal_laplace(w.clone(), WeightSet::zeros(&net)).unwrap();
        let set = sample_relevances(&laplace, &net, &method, &x, 0, 4, 1, false).unwrap();
        let map = crate::attribution::attribute(
            &method,
            &net,
            &crate::posterior::PosteriorSample::deterministic(w.clone()),
            &x,
            0,
        )
        .unwrap();
        for s in &set.samples {
            assert_eq!(s.data(), map.values.data());
        }
    }

    #[test]
    fn enumerate_mode_returns_exactly_the_member_maps() {
        use crate::attribution::{attribute, AttributionMethod};
        use crate::posterior::{PosteriorSample, WeightPosterior};

        let net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 2 }],
            vec![2],
            2,
        )
        .unwrap();
        let members: Vec<WeightSet> = (0..3).map(|i| WeightSet::he_init(&net, i)).collect();
        let posterior = WeightPosterior::ensemble(members.clone()).unwrap();
        let x = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let method = AttributionMethod::InputTimesGradient;
        let set = sample_relevances(&posterior, &net, &method, &x, 0, 3, 0, true).unwrap();
        for (i, member) in members.iter().enumerate() {
            let expected = attribute(
                &method,
                &net,
                &PosteriorSample::deterministic(member.clone()),
                &x,
                0,
            )
            .unwrap();
            assert_eq!(set.samples[i].data(), expected.values.data());
        }
        // Enumerate mode needs an ensemble.
        let laplace =
            WeightPosterior::diagonal_laplace(members[0].clone(), WeightSet::zeros(&net))
                .unwrap();
        assert!(sample_relevances(&laplace, &net, &method, &x, 0, 3, 0, true).is_err());
    }
}
