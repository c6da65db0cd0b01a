//! Command implementations behind the `uai` binary.
//!
//! Each command reads its inputs and writes its outputs under the configured
//! output directory; all randomness derives from the single `[run] seed`, so
//! repeated runs produce bit-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use uai_core::error::{Error, Result};
use uai_core::eval::{evaluate_suite, EvalParams};
use uai_core::io::config::{build_network, DataSource, PosteriorVariant, RunConfig};
use uai_core::io::report::{render_history, render_metric_report, render_spray_report, write_text};
use uai_core::io::{
    export_heatmap, load_dataset, load_posterior, load_relevance_set, save_posterior,
    save_relevance_set, save_weights, Container, HeatmapMode, RawConfig,
};
use uai_core::net::WeightSet;
use uai_core::posterior::{fit_diagonal_laplace, predictive_stats, WeightPosterior};
use uai_core::rng::derive_seed;
use uai_core::spray;
use uai_core::synth::{generate, load_idx, SynthConfig};
use uai_core::tensor::Tensor;
use uai_core::trainer::{train, TrainConfig, TrainHistory};
use uai_core::uai::{
    group_normalize, mean_explanation, minmax_normalize, sample_relevances, uai_percentile,
    uai_plus_with, AggregateKind, AggregateMap, Normalization,
};
use uai_core::LabeledImage;

pub const DEMO_SMALL_CFG: &str = include_str!("../../../configs/demo-small.cfg");
pub const DEMO_FULL_CFG: &str = include_str!("../../../configs/demo-full.cfg");

/// Loads a config file and applies `--set` / `--out` / `--seed` overrides.
pub fn load_config(
    path: &Path,
    sets: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    config_from_text(&text, sets, out, seed)
}

/// Builds a config from literal text plus overrides (used by `demo`).
pub fn config_from_text(
    text: &str,
    sets: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    for s in sets {
        raw.set(s)?;
    }
    if let Some(out) = out {
        raw.set(&format!("run.out={}", out.display()))?;
    }
    if let Some(seed) = seed {
        raw.set(&format!("run.seed={seed}"))?;
    }
    RunConfig::from_raw(&raw)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn synth_config(cfg: &RunConfig) -> Result<SynthConfig> {
    let data = cfg.data()?;
    Ok(SynthConfig {
        image_size: data.image_size,
        num_classes: data.num_classes,
        glyph_fraction: data.glyph_fraction,
        seed: derive_seed(cfg.run()?.seed, "dataset", 0),
    })
}

fn split_sizes(
    mut all: Vec<LabeledImage>,
    train_size: usize,
    test_size: usize,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    if all.len() < train_size + test_size {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} images, need train_size {train_size} + test_size {test_size}",
            all.len()
        )));
    }
    all.truncate(train_size + test_size);
    let test = all.split_off(train_size);
    Ok((all, test))
}

/// The `(train, test)` split for the configured data source. Synthetic data
/// derives per-image seeds by index, so the train prefix is identical
/// whether or not the test images get generated after it.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let data = cfg.data()?;
    let test_size = cfg.eval()?.test_size;
    match data.source {
        DataSource::Synthetic => {
            let sc = synth_config(cfg)?;
            let full = generate(&sc, data.train_size + test_size)?;
            split_sizes(full, data.train_size, test_size)
        }
        DataSource::Idx => {
            let images = data.idx_images.as_ref().ok_or_else(|| {
                Error::InvalidConfig("data.source = idx requires data.idx_images".to_string())
            })?;
            let labels = data.idx_labels.as_ref().ok_or_else(|| {
                Error::InvalidConfig("data.source = idx requires data.idx_labels".to_string())
            })?;
            split_sizes(load_idx(images, labels)?, data.train_size, test_size)
        }
        DataSource::Container => {
            let path = data.path.as_ref().ok_or_else(|| {
                Error::InvalidConfig("data.source = container requires data.path".to_string())
            })?;
            split_sizes(load_dataset(path)?, data.train_size, test_size)
        }
    }
}

fn posterior_path(cfg: &RunConfig) -> Result<PathBuf> {
    Ok(cfg.run()?.out.join("posterior.uaix"))
}

/// Trains per the config and writes `posterior.uaix` (plus `weights.uaix`
/// when the variant keeps MAP weights) and training-history tables.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let run = cfg.run()?;
    let net = build_network(cfg.net()?)?;
    let trainer_cfg = cfg.trainer()?;
    let post_cfg = cfg.posterior()?;
    ensure_dir(&run.out)?;
    let (train_data, _) = load_split(cfg)?;

    let train_one = |tag: u64| -> Result<(WeightSet, TrainHistory)> {
        let tc = TrainConfig {
            seed: derive_seed(run.seed, "train", tag),
            ..trainer_cfg.clone()
        };
        let init = WeightSet::he_init(&net, derive_seed(run.seed, "init", tag));
        train(&net, init, &train_data, &tc)
    };

    let posterior = match post_cfg.variant {
        PosteriorVariant::Ensemble => {
            let mut members = Vec::with_capacity(post_cfg.members);
            for m in 0..post_cfg.members {
                let (weights, history) = train_one(m as u64)?;
                let acc = history.train_accuracy.last().copied().unwrap_or(0.0);
                println!("trained ensemble member {m}: train accuracy {acc:.4}");
                write_text(
                    &run.out.join(format!("history_member{m}.tsv")),
                    &render_history(&history),
                )?;
                members.push(weights);
            }
            WeightPosterior::ensemble(members)?
        }
        PosteriorVariant::McDropout => {
            let (weights, history) = train_one(0)?;
            let acc = history.train_accuracy.last().copied().unwrap_or(0.0);
            println!("trained MAP weights (dropout active): train accuracy {acc:.4}");
            write_text(&run.out.join("history.tsv"), &render_history(&history))?;
            save_weights(&run.out.join("weights.uaix"), &weights)?;
            WeightPosterior::mc_dropout(&net, weights)?
        }
        PosteriorVariant::Laplace => {
            let (weights, history) = train_one(0)?;
            let acc = history.train_accuracy.last().copied().unwrap_or(0.0);
            println!("trained MAP weights: train accuracy {acc:.4}");
            write_text(&run.out.join("history.tsv"), &render_history(&history))?;
            save_weights(&run.out.join("weights.uaix"), &weights)?;
            fit_diagonal_laplace(&net, &weights, &train_data, post_cfg.prior_precision)?
        }
    };

    let path = posterior_path(cfg)?;
    save_posterior(&path, &posterior)?;
    println!("wrote {} ({} posterior)", path.display(), posterior.tag());
    Ok(())
}

struct NamedAggregate {
    name: String,
    map: AggregateMap,
}

fn aggregates_of(
    set: &uai_core::uai::RelevanceSet,
    alphas: &[f32],
    epsilon: f32,
    rule: uai_core::uai::UaiPlusRule,
) -> Result<Vec<NamedAggregate>> {
    let mut out = vec![NamedAggregate {
        name: "mean".to_string(),
        map: mean_explanation(set)?,
    }];
    for &alpha in alphas {
        out.push(NamedAggregate {
            name: format!("alpha{alpha}"),
            map: uai_percentile(set, alpha)?,
        });
    }
    let plus = match group_normalize(set) {
        Ok(normed) => uai_plus_with(&normed, epsilon, rule)?,
        // No positive relevance anywhere: the exceedance fraction is zero.
        Err(Error::NoPositiveRelevance) => AggregateMap {
            values: Tensor::zeros(set.map_shape()),
            kind: AggregateKind::UaiPlus(epsilon),
            normalization: Normalization::Group,
        },
        Err(e) => return Err(e),
    };
    out.push(NamedAggregate {
        name: "uai_plus".to_string(),
        map: plus,
    });
    Ok(out)
}

/// Writes one seismic heatmap per aggregate, an overlay for UAI+ when a base
/// image is available, and the raw aggregate values as a container.
fn write_aggregate_outputs(
    dir: &Path,
    aggregates: &[NamedAggregate],
    base: Option<&Tensor>,
    threshold: f32,
) -> Result<()> {
    ensure_dir(dir)?;
    let mut container = Container::new();
    for agg in aggregates {
        let normed = minmax_normalize(&agg.map);
        let path = dir.join(format!("{}.ppm", agg.name));
        export_heatmap(&normed, &path, HeatmapMode::Seismic)?;
        println!("wrote {}", path.display());
        if agg.name == "uai_plus" {
            if let Some(base) = base {
                let overlay = dir.join("uai_plus_overlay.ppm");
                export_heatmap(
                    &agg.map,
                    &overlay,
                    HeatmapMode::Overlay { base, threshold },
                )?;
                println!("wrote {}", overlay.display());
            }
        }
        container.push(agg.name.clone(), agg.map.values.clone())?;
    }
    let path = dir.join("aggregates.uaix");
    container.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Samples a relevance set for one test image, stores it, and renders every
/// requested aggregate as a heatmap.
pub fn cmd_explain(cfg: &RunConfig, index: usize, extra_alphas: &[f32]) -> Result<()> {
    let run = cfg.run()?;
    let net = build_network(cfg.net()?)?;
    let post_cfg = cfg.posterior()?;
    let uai_cfg = cfg.uai()?;
    let method = cfg.attribution()?.method_for(net.input_shape())?;
    ensure_dir(&run.out)?;

    let (_, test) = load_split(cfg)?;
    let item = test.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "test image index {index} out of range (test set has {})",
            test.len()
        ))
    })?;
    let posterior = load_posterior(&posterior_path(cfg)?, &net)?;

    let (mean, variance) = predictive_stats(
        &posterior,
        &net,
        &item.image,
        uai_cfg.samples,
        derive_seed(run.seed, "predictive", index as u64),
    )?;
    println!("image {index}: label {}", item.label);
    for k in 0..net.num_classes() {
        println!(
            "  class {k}: predictive mean {:.4}, variance {:.6}",
            mean.data()[k],
            variance.data()[k]
        );
    }

    let set = sample_relevances(
        &posterior,
        &net,
        &method,
        &item.image,
        item.label,
        uai_cfg.samples,
        derive_seed(run.seed, "explain", index as u64),
        post_cfg.enumerate,
    )?;
    let set_path = run.out.join("relevances.uaix");
    save_relevance_set(&set_path, &set)?;
    println!("wrote {}", set_path.display());

    let mut alphas = uai_cfg.alphas.clone();
    alphas.extend_from_slice(extra_alphas);
    let aggregates = aggregates_of(&set, &alphas, uai_cfg.epsilon, uai_cfg.plus_rule)?;
    write_aggregate_outputs(&run.out, &aggregates, Some(&item.image), uai_cfg.epsilon)
}

/// Recomputes aggregates from a stored relevance set.
pub fn cmd_aggregate(cfg: &RunConfig, input: &Path, extra_alphas: &[f32]) -> Result<()> {
    let run = cfg.run()?;
    let uai_cfg = cfg.uai()?;
    let set = load_relevance_set(input)?;
    println!(
        "loaded {} samples ({} over {})",
        set.len(),
        set.method,
        set.posterior
    );
    let mut alphas = uai_cfg.alphas.clone();
    alphas.extend_from_slice(extra_alphas);
    let aggregates = aggregates_of(&set, &alphas, uai_cfg.epsilon, uai_cfg.plus_rule)?;
    let base = (set.input.rank() == 3).then_some(&set.input);
    write_aggregate_outputs(&run.out, &aggregates, base, uai_cfg.epsilon)
}

/// Clusters a stored relevance set and writes the report plus per-cluster
/// mean heatmaps.
pub fn cmd_cluster(cfg: &RunConfig, input: &Path) -> Result<()> {
    let run = cfg.run()?;
    let spray_cfg = cfg.spray()?;
    ensure_dir(&run.out)?;
    let set = load_relevance_set(input)?;
    let result = spray::cluster(
        &set,
        spray_cfg.k_nn,
        spray_cfg.pool,
        spray_cfg.max_k,
        derive_seed(cfg.run()?.seed, "spray", 0),
    )?;
    println!(
        "selected {} clusters over {} samples; strengths {:?}",
        result.selected_k,
        set.len(),
        result.strengths
    );
    let report_path = run.out.join("spray_report.txt");
    write_text(&report_path, &render_spray_report(&result, set.len()))?;
    println!("wrote {}", report_path.display());
    for (c, mean) in result.cluster_means.iter().enumerate() {
        let map = AggregateMap {
            values: mean.clone(),
            kind: AggregateKind::Mean,
            normalization: Normalization::Raw,
        };
        let path = run.out.join(format!("cluster{c}.ppm"));
        export_heatmap(&minmax_normalize(&map), &path, HeatmapMode::Seismic)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Scores Random, Baseline, Average, percentile and UAI+ explanations over
/// the test split and writes the localization table.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let run = cfg.run()?;
    let net = build_network(cfg.net()?)?;
    let post_cfg = cfg.posterior()?;
    let uai_cfg = cfg.uai()?;
    let method = cfg.attribution()?.method_for(net.input_shape())?;
    ensure_dir(&run.out)?;

    let (_, test) = load_split(cfg)?;
    let posterior = load_posterior(&posterior_path(cfg)?, &net)?;
    let params = EvalParams {
        alphas: uai_cfg.alphas.clone(),
        epsilon: uai_cfg.epsilon,
        samples: uai_cfg.samples,
        seed: derive_seed(run.seed, "evaluate", 0),
        enumerate: post_cfg.enumerate,
        plus_rule: uai_cfg.plus_rule,
    };
    let report = evaluate_suite(&posterior, &net, &method, &test, &params)?;
    let table = render_metric_report(&report);
    print!("{table}");
    let path = run.out.join("report.tsv");
    write_text(&path, &table)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// End-to-end pipeline: trains and evaluates an MC-dropout scenario and an
/// ensemble scenario on the same synthetic data, then explains and clusters
/// one test image under the dropout posterior.
pub fn cmd_demo(
    scale_config: &str,
    sets: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let base = config_from_text(scale_config, sets, out, seed)?;
    let base_out = base.run()?.out.clone();
    let scenario = |arch: &str, variant: &str, sub: &str| -> Result<RunConfig> {
        let mut scenario_sets = sets.to_vec();
        scenario_sets.push(format!("net.arch={arch}"));
        scenario_sets.push(format!("posterior.variant={variant}"));
        scenario_sets.push(format!("run.out={}", base_out.join(sub).display()));
        config_from_text(scale_config, &scenario_sets, None, seed)
    };

    println!("== scenario: mc-dropout ==");
    let dropout_cfg = scenario("lenet-dropout", "mc-dropout", "mc-dropout")?;
    cmd_train(&dropout_cfg)?;
    cmd_evaluate(&dropout_cfg)?;
    cmd_explain(&dropout_cfg, 0, &[])?;
    let relevances = dropout_cfg.run()?.out.join("relevances.uaix");
    cmd_cluster(&dropout_cfg, &relevances)?;

    println!("== scenario: ensemble ==");
    let ensemble_cfg = scenario("lenet", "ensemble", "ensemble")?;
    cmd_train(&ensemble_cfg)?;
    cmd_evaluate(&ensemble_cfg)?;

    println!("demo complete under {}", base_out.display());
    Ok(())
}
