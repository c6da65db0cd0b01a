//! Approximate weight posteriors with a uniform sampling interface, plus
//! Monte-Carlo predictive statistics.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{DropoutMask, Network, WeightSet};
use crate::rng::{derive_seed, seeded_rng};
use crate::synth::LabeledImage;
use crate::tensor::Tensor;
use crate::trainer::{cross_entropy_grad, softmax};

/// A dropout placement recorded at posterior construction time, so sampling
/// needs no access to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSite {
    pub layer: usize,
    pub rate: f32,
    pub shape: Vec<usize>,
}

/// An approximate posterior `p(W | D_tr)` over the weights of one topology.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightPosterior {
    /// Independently trained networks; sampling picks a member uniformly.
    Ensemble { members: Vec<WeightSet> },
    /// MAP weights plus a fresh Bernoulli mask per dropout layer on each draw.
    McDropout {
        map_weights: WeightSet,
        sites: Vec<DropoutSite>,
    },
    /// Elementwise Gaussian around the MAP weights.
    DiagonalLaplace {
        map_weights: WeightSet,
        variance: WeightSet,
    },
}

/// One draw from a posterior: concrete weights plus, for MC dropout, the mask
/// that completes the sampled function.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub weights: WeightSet,
    pub mask: Option<DropoutMask>,
}

impl PosteriorSample {
    /// Wraps plain weights as a deterministic (mask-free) sample.
    pub fn deterministic(weights: WeightSet) -> Self {
        Self {
            weights,
            mask: None,
        }
    }
}

impl WeightPosterior {
    pub fn ensemble(members: Vec<WeightSet>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least one member".to_string(),
            ));
        }
        Ok(WeightPosterior::Ensemble { members })
    }

    /// Builds an MC-dropout posterior over `net`, recording every dropout
    /// placement (layer index, rate, activation shape).
    pub fn mc_dropout(net: &Network, map_weights: WeightSet) -> Result<Self> {
        map_weights.check_against(net)?;
        if !net.has_dropout() {
            return Err(Error::InvalidArgument(
                "mc-dropout posterior requires a network with dropout layers".to_string(),
            ));
        }
        let sites = net
            .dropout_layers()
            .into_iter()
            .map(|(layer, rate)| DropoutSite {
                layer,
                rate,
                shape: net.activation_shape(layer).to_vec(),
            })
            .collect();
        Ok(WeightPosterior::McDropout { map_weights, sites })
    }

    pub fn diagonal_laplace(map_weights: WeightSet, variance: WeightSet) -> Result<Self> {
        for (i, p) in variance.iter() {
            let map_p = map_weights.layer(i).ok_or_else(|| {
                Error::InvalidArgument(format!("variance has layer {i} missing from MAP weights"))
            })?;
            if map_p.weight.shape() != p.weight.shape() || map_p.bias.shape() != p.bias.shape() {
                return Err(Error::InvalidArgument(format!(
                    "variance shapes for layer {i} do not match the MAP weights"
                )));
            }
            if p.weight.data().iter().chain(p.bias.data()).any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative variance at layer {i}"
                )));
            }
        }
        Ok(WeightPosterior::DiagonalLaplace {
            map_weights,
            variance,
        })
    }

    /// Short tag used in reports and containers.
    pub fn tag(&self) -> &'static str {
        match self {
            WeightPosterior::Ensemble { .. } => "ensemble",
            WeightPosterior::McDropout { .. } => "mc-dropout",
            WeightPosterior::DiagonalLaplace { .. } => "laplace",
        }
    }

    /// Number of enumerable members (ensemble size, otherwise 0).
    pub fn member_count(&self) -> usize {
        match self {
            WeightPosterior::Ensemble { members } => members.len(),
            _ => 0,
        }
    }

    /// The indexed ensemble member, for exact enumeration.
    pub fn member(&self, index: usize) -> Option<&WeightSet> {
        match self {
            WeightPosterior::Ensemble { members } => members.get(index),
            _ => None,
        }
    }

    /// Draws one weight sample. Deterministic given `seed`.
    pub fn sample(&self, seed: u64) -> PosteriorSample {
        let mut rng = seeded_rng(seed);
        match self {
            WeightPosterior::Ensemble { members } => {
                let idx = rng.random_range(0..members.len());
                PosteriorSample::deterministic(members[idx].clone())
            }
            WeightPosterior::McDropout { map_weights, sites } => {
                let parts: Vec<(usize, f32, Vec<usize>)> = sites
                    .iter()
                    .map(|s| (s.layer, s.rate, s.shape.clone()))
                    .collect();
                PosteriorSample {
                    weights: map_weights.clone(),
                    mask: Some(DropoutMask::sample_sites(&parts, seed)),
                }
            }
            WeightPosterior::DiagonalLaplace {
                map_weights,
                variance,
            } => {
                let mut weights = map_weights.clone();
                for (i, p) in weights.iter_mut() {
                    let var = variance.layer(i).expect("variance layer");
                    for (w, v) in p
                        .weight
                        .data_mut()
                        .iter_mut()
                        .zip(var.weight.data())
                        .chain(p.bias.data_mut().iter_mut().zip(var.bias.data()))
                    {
                        let z: f64 = rng.sample(StandardNormal);
                        // Zero variance collapses to the MAP value bit-exactly.
                        if *v > 0.0 {
                            *w += (f64::from(*v).sqrt() * z) as f32;
                        }
                    }
                }
                PosteriorSample::deterministic(weights)
            }
        }
    }

    /// MAP weights where the approximation keeps them; an ensemble has none.
    pub fn map_weights(&self) -> Option<&WeightSet> {
        match self {
            WeightPosterior::Ensemble { .. } => None,
            WeightPosterior::McDropout { map_weights, .. }
            | WeightPosterior::DiagonalLaplace { map_weights, .. } => Some(map_weights),
        }
    }
}

/// Fits a diagonal-Laplace posterior around trained MAP weights.
///
/// The per-parameter variance is `1 / (F_ii + prior_precision)` where the
/// diagonal empirical Fisher `F_ii` accumulates squared per-example loss
/// gradients over `data`.
pub fn fit_diagonal_laplace(
    net: &Network,
    map_weights: &WeightSet,
    data: &[LabeledImage],
    prior_precision: f64,
) -> Result<WeightPosterior> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if prior_precision <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prior precision {prior_precision} must be positive"
        )));
    }
    map_weights.check_against(net)?;

    let per_example: Vec<WeightSet> = data
        .par_iter()
        .map(|item| {
            let logits = net.forward(map_weights, &item.image, None)?;
            let (loss, dlogits) = cross_entropy_grad(&logits, item.label)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("fisher accumulation".to_string()));
            }
            net.grad_weights(map_weights, &item.image, &dlogits, None)
        })
        .collect::<Result<_>>()?;

    let mut variance = WeightSet::zeros(net);
    let mut fisher: Vec<Vec<f64>> = (0..variance.num_slots())
        .map(|i| {
            variance
                .layer(i)
                .map(|p| vec![0.0; p.weight.len() + p.bias.len()])
                .unwrap_or_default()
        })
        .collect();
    for grads in &per_example {
        for (i, p) in grads.iter() {
            for (acc, g) in fisher[i]
                .iter_mut()
                .zip(p.weight.data().iter().chain(p.bias.data()))
            {
                let g = f64::from(*g);
                if !g.is_finite() {
                    return Err(Error::NonFinite("fisher accumulation".to_string()));
                }
                *acc += g * g;
            }
        }
    }
    for (i, p) in variance.iter_mut() {
        for (j, v) in p
            .weight
            .data_mut()
            .iter_mut()
            .chain(p.bias.data_mut())
            .enumerate()
        {
            *v = (1.0 / (fisher[i][j] + prior_precision)) as f32;
        }
    }
    WeightPosterior::diagonal_laplace(map_weights.clone(), variance)
}

/// Monte-Carlo mean and unbiased variance of the softmax outputs over
/// `n_samples` posterior draws.
pub fn predictive_stats(
    posterior: &WeightPosterior,
    net: &Network,
    x: &Tensor,
    n_samples: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "predictive statistics need at least one sample".to_string(),
        ));
    }
    let k = net.num_classes();
    let probs: Vec<Tensor> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let sample = posterior.sample(derive_seed(seed, "predictive", i as u64));
            let logits = net.forward(&sample.weights, x, sample.mask.as_ref())?;
            Ok(softmax(&logits))
        })
        .collect::<Result<_>>()?;

    let mut mean = vec![0.0f64; k];
    for p in &probs {
        for (m, v) in mean.iter_mut().zip(p.data()) {
            *m += f64::from(*v);
        }
    }
    for m in &mut mean {
        *m /= n_samples as f64;
    }
    let mut var = vec![0.0f64; k];
    if n_samples > 1 {
        for p in &probs {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(p.data()) {
                let d = f64::from(*x) - m;
                *v += d * d;
            }
        }
        for v in &mut var {
            *v /= (n_samples - 1) as f64;
        }
    }
    Ok((
        Tensor::new(vec![k], mean.into_iter().map(|v| v as f32).collect())?,
        Tensor::new(vec![k], var.into_iter().map(|v| v as f32).collect())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;

    fn small_net() -> Network {
        Network::new(
            vec![
                LayerSpec::Dense { input: 3, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 2 },
            ],
            vec![3],
            2,
        )
        .unwrap()
    }

    fn dropout_net() -> Network {
        Network::new(
            vec![
                LayerSpec::Dense { input: 3, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.0, id: 0 },
                LayerSpec::Dense { input: 4, output: 2 },
            ],
            vec![3],
            2,
        )
        .unwrap()
    }

    #[test]
    fn singleton_ensemble_always_returns_its_member() {
        let net = small_net();
        let member = WeightSet::he_init(&net, 1);
        let posterior = WeightPosterior::ensemble(vec![member.clone()]).unwrap();
        for seed in 0..20 {
            assert_eq!(posterior.sample(seed).weights, member);
        }
        assert!(posterior.map_weights().is_none());
    }

    #[test]
    fn ensemble_sampling_is_uniform() {
        let net = small_net();
        let members: Vec<WeightSet> = (0..4).map(|i| WeightSet::he_init(&net, i)).collect();
        let posterior = WeightPosterior::ensemble(members.clone()).unwrap();
        let mut counts = [0usize; 4];
        for seed in 0..40_000u64 {
            let s = posterior.sample(seed);
            let idx = members.iter().position(|m| *m == s.weights).unwrap();
            counts[idx] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 40_000.0;
            assert!((freq - 0.25).abs() <= 0.01, "member frequency {freq}");
        }
    }

    #[test]
    fn zero_variance_laplace_collapses_to_map() {
        let net = small_net();
        let map = WeightSet::he_init(&net, 2);
        let posterior =
            WeightPosterior::diagonal_laplace(map.clone(), WeightSet::zeros(&net)).unwrap();
        for seed in [0, 1, 99] {
            assert_eq!(posterior.sample(seed).weights, map);
        }
        assert_eq!(posterior.map_weights(), Some(&map));
    }

    #[test]
    fn negative_variance_is_rejected() {
        let net = small_net();
        let map = WeightSet::he_init(&net, 2);
        let mut var = WeightSet::zeros(&net);
        var.layer_mut(0).unwrap().weight.data_mut()[0] = -1.0;
        assert!(WeightPosterior::diagonal_laplace(map, var).is_err());
    }

    #[test]
    fn mc_dropout_records_sites_and_samples_masks() {
        let net = dropout_net();
        let map = WeightSet::he_init(&net, 3);
        let posterior = WeightPosterior::mc_dropout(&net, map.clone()).unwrap();
        let s = posterior.sample(7);
        assert_eq!(s.weights, map);
        let mask = s.mask.expect("mc-dropout sample carries a mask");
        assert_eq!(mask.get(2).unwrap().shape(), &[4]);
        assert_eq!(posterior.map_weights(), Some(&map));
    }

    #[test]
    fn mc_dropout_rate_zero_is_prediction_identical_to_map() {
        let net = dropout_net();
        let map = WeightSet::he_init(&net, 4);
        let posterior = WeightPosterior::mc_dropout(&net, map.clone()).unwrap();
        let x = Tensor::new(vec![3], vec![0.4, -0.2, 0.9]).unwrap();
        let plain = net.forward(&map, &x, None).unwrap();
        for seed in 0..5 {
            let s = posterior.sample(seed);
            let sampled = net.forward(&s.weights, &x, s.mask.as_ref()).unwrap();
            assert_eq!(sampled.data(), plain.data());
        }
    }

    #[test]
    fn laplace_sample_mean_approaches_map() {
        let net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 2 }],
            vec![2],
            2,
        )
        .unwrap();
        let map = WeightSet::he_init(&net, 5);
        let mut var = WeightSet::zeros(&net);
        for v in var.layer_mut(0).unwrap().weight.data_mut() {
            *v = 0.04; // sd 0.2
        }
        let posterior = WeightPosterior::diagonal_laplace(map.clone(), var).unwrap();
        let n = 10_000u64;
        let mut sums = vec![0.0f64; 4];
        for seed in 0..n {
            let s = posterior.sample(seed);
            for (acc, v) in sums.iter_mut().zip(s.weights.layer(0).unwrap().weight.data()) {
                *acc += f64::from(*v);
            }
        }
        let se = 0.2 / (n as f64).sqrt();
        for (acc, map_v) in sums.iter().zip(map.layer(0).unwrap().weight.data()) {
            let mean = acc / n as f64;
            assert!(
                (mean - f64::from(*map_v)).abs() <= 3.0 * se,
                "mean {mean} vs map {map_v}"
            );
        }
    }

    #[test]
    fn fisher_accumulation_is_additive_over_duplicates() {
        let net = small_net();
        let map = WeightSet::he_init(&net, 6);
        let item = LabeledImage {
            image: Tensor::new(vec![3], vec![0.2, 0.5, -0.4]).unwrap(),
            label: 1,
            mask: None,
        };
        let lambda = 0.1;
        let once = fit_diagonal_laplace(&net, &map, &[item.clone()], lambda).unwrap();
        let thrice =
            fit_diagonal_laplace(&net, &map, &vec![item; 3], lambda).unwrap();
        let (v1, v3) = match (&once, &thrice) {
            (
                WeightPosterior::DiagonalLaplace { variance: a, .. },
                WeightPosterior::DiagonalLaplace { variance: b, .. },
            ) => (a, b),
            _ => unreachable!(),
        };
        // var_1 = 1/(F + l)  =>  F = 1/var_1 - l ; var_3 must be 1/(3F + l).
        for (i, p) in v1.iter() {
            let q = v3.layer(i).unwrap();
            for (a, b) in p
                .weight
                .data()
                .iter()
                .chain(p.bias.data())
                .zip(q.weight.data().iter().chain(q.bias.data()))
            {
                let fisher = 1.0 / f64::from(*a) - lambda;
                let expected = 1.0 / (3.0 * fisher + lambda);
                assert!(
                    (f64::from(*b) - expected).abs() <= 1e-6 * expected.abs().max(1e-12),
                    "{b} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn fisher_variance_matches_hand_computed_gradients() {
        // Dense(1,2), no hidden layers: the per-example CE gradient of
        // weight w_i is (softmax_i - onehot_i) * x, computable by hand.
        let net = Network::new(
            vec![LayerSpec::Dense { input: 1, output: 2 }],
            vec![1],
            2,
        )
        .unwrap();
        let mut map = WeightSet::zeros(&net);
        map.layer_mut(0).unwrap().weight.data_mut().copy_from_slice(&[0.7, -0.3]);
        let data: Vec<LabeledImage> = [(1.5f32, 0usize), (-0.8, 1), (0.3, 0)]
            .iter()
            .map(|&(x, label)| LabeledImage {
                image: Tensor::new(vec![1], vec![x]).unwrap(),
                label,
                mask: None,
            })
            .collect();
        let lambda = 0.1;
        let posterior = fit_diagonal_laplace(&net, &map, &data, lambda).unwrap();
        let variance = match &posterior {
            WeightPosterior::DiagonalLaplace { variance, .. } => variance,
            _ => unreachable!(),
        };

        // Hand-computed Fisher diagonal in f64.
        let (w0, w1) = (0.7f64, -0.3f64);
        let mut fisher = [0.0f64; 2];
        for &(x, label) in &[(1.5f64, 0usize), (-0.8, 1), (0.3, 0)] {
            let (l0, l1) = (w0 * x, w1 * x);
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let z = e0 + e1;
            let p = [e0 / z, e1 / z];
            for i in 0..2 {
                let g = (p[i] - if label == i { 1.0 } else { 0.0 }) * x;
                fisher[i] += g * g;
            }
        }
        let got = variance.layer(0).unwrap().weight.data();
        for i in 0..2 {
            let expected = 1.0 / (fisher[i] + lambda);
            assert!(
                (f64::from(got[i]) - expected).abs() <= 1e-5 * expected,
                "variance {i}: {} vs {expected}",
                got[i]
            );
        }
    }

    #[test]
    fn huge_prior_precision_collapses_sampling_to_map() {
        let net = small_net();
        let map = WeightSet::he_init(&net, 7);
        let item = LabeledImage {
            image: Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(),
            label: 0,
            mask: None,
        };
        let posterior = fit_diagonal_laplace(&net, &map, &[item], 1e14).unwrap();
        let s = posterior.sample(3);
        for (i, p) in s.weights.iter() {
            let m = map.layer(i).unwrap();
            for (a, b) in p.weight.data().iter().zip(m.weight.data()) {
                assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn predictive_stats_of_singleton_ensemble_has_zero_variance() {
        let net = small_net();
        let posterior = WeightPosterior::ensemble(vec![WeightSet::he_init(&net, 8)]).unwrap();
        let x = Tensor::new(vec![3], vec![0.3, 0.1, -0.2]).unwrap();
        let (mean, var) = predictive_stats(&posterior, &net, &x, 16, 0).unwrap();
        assert!(var.data().iter().all(|&v| v == 0.0), "variance {:?}", var.data());
        let total: f64 = mean.data().iter().map(|&v| f64::from(v)).sum();
        assert!((total - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn predictive_variance_localizes_to_the_differing_class() {
        // Two members that differ only in the class-0 logit row.
        let net = Network::new(
            vec![LayerSpec::Dense { input: 2, output: 3 }],
            vec![2],
            3,
        )
        .unwrap();
        let mut a = WeightSet::zeros(&net);
        a.layer_mut(0).unwrap().weight.data_mut().copy_from_slice(&[
            1.0, 0.5, // class 0
            0.2, 0.2, // class 1
            0.1, 0.4, // class 2
        ]);
        let mut b = a.clone();
        b.layer_mut(0).unwrap().weight.data_mut()[0] = -1.0;
        // Softmax renormalizes, so the class 1/2 probabilities shift a little
        // too; class 0 must dominate the variance, and means/variances must
        // match exact enumeration of the two members.
        let posterior = WeightPosterior::ensemble(vec![a.clone(), b.clone()]).unwrap();
        let x = Tensor::new(vec![2], vec![1.0, -0.5]).unwrap();
        let (mean, var) = predictive_stats(&posterior, &net, &x, 4000, 1).unwrap();

        let soft = |w: &WeightSet| crate::trainer::softmax(&net.forward(w, &x, None).unwrap());
        let (pa, pb) = (soft(&a), soft(&b));
        for k in 0..3 {
            let m = (f64::from(pa.data()[k]) + f64::from(pb.data()[k])) / 2.0;
            assert!((f64::from(mean.data()[k]) - m).abs() < 0.02, "class {k}");
            let true_var = ((f64::from(pa.data()[k]) - m).powi(2)
                + (f64::from(pb.data()[k]) - m).powi(2))
                / 2.0;
            assert!(
                (f64::from(var.data()[k]) - true_var).abs() < 0.02,
                "class {k} var"
            );
        }
        assert!(var.data()[0] > var.data()[1] && var.data()[0] > var.data()[2]);
        assert!(var.data()[0] > 0.0);
    }
}
