//! Shared setup for the pipeline benchmarks: a trained-shape LeNet, one
//! synthetic image, and a sampled relevance set.

use uai_core::attribution::AttributionMethod;
use uai_core::io::config::{build_network, NetSection};
use uai_core::net::{Network, WeightSet};
use uai_core::posterior::WeightPosterior;
use uai_core::synth::{generate, SynthConfig};
use uai_core::uai::{sample_relevances, RelevanceSet};
use uai_core::LabeledImage;

pub fn lenet(dropout: bool) -> Network {
    build_network(&NetSection {
        arch: if dropout { "lenet-dropout" } else { "lenet" }.to_string(),
        input: vec![3, 28, 28],
        classes: 10,
        hidden: vec![],
        layers: None,
    })
    .expect("lenet builds")
}

pub fn sample_image() -> LabeledImage {
    generate(
        &SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        },
        1,
    )
    .expect("generation succeeds")
    .remove(0)
}

pub fn relevance_set(n: usize) -> (Network, RelevanceSet) {
    let net = lenet(true);
    let posterior =
        WeightPosterior::mc_dropout(&net, WeightSet::he_init(&net, 3)).expect("posterior");
    let image = sample_image();
    let set = sample_relevances(
        &posterior,
        &net,
        &AttributionMethod::LrpEpsilon { epsilon: 1e-6 },
        &image.image,
        image.label,
        n,
        5,
        false,
    )
    .expect("sampling succeeds");
    (net, set)
}
