//! Acceptance suite: one test per release criterion, each printing a PASS
//! line (visible with `--nocapture`) and failing loudly otherwise.
//!
//! Run with `cargo test -p uai-cli --test acceptance`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use uai_core::attribution::{
    attribute, input_times_gradient, integrated_gradients, lrp_epsilon, AttributionMethod,
};
use uai_core::eval::{auc_localization, mass_accuracy, EvalParams, ObjectMask};
use uai_core::io::config::{build_network, NetSection};
use uai_core::net::WeightSet;
use uai_core::posterior::{PosteriorSample, WeightPosterior};
use uai_core::rng::{derive_seed, seeded_rng};
use uai_core::spray;
use uai_core::synth::{generate, SynthConfig};
use uai_core::tensor::Tensor;
use uai_core::trainer::{train, TrainConfig};
use uai_core::uai::{sample_relevances, uai_percentile, RelevanceSet, UaiPlusRule};
use uai_testkit as testkit;
use uai_testkit::reference;

fn as_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// Criterion 1: Table-I ordering at desk scale. Trains a LeNet-style net on
/// 5000 synthetic images, builds MC-dropout and 10-member ensemble
/// posteriors, and evaluates N=50 LRP-eps relevance samples per image on 500
/// test images. Requires AUC(Union) > AUC(Average) > AUC(Intersection) with
/// gaps >= 0.05, MA(Intersection) > MA(Union) with gap >= 0.03, and the
/// Random baseline at AUC 0.50 +- 0.02 / MA = mean mask-area +- 0.02.
#[test]
fn criterion_1_table_ordering_at_desk_scale() {
    let started = Instant::now();
    let seed = 7u64;
    let data_cfg = SynthConfig {
        seed: derive_seed(seed, "dataset", 0),
        ..SynthConfig::default()
    };
    let full = generate(&data_cfg, 5500).unwrap();
    let (train_data, test_data) = full.split_at(5000);
    let test_data = &test_data[..500];

    let lenet = |dropout: bool| {
        build_network(&NetSection {
            arch: if dropout { "lenet-dropout" } else { "lenet" }.to_string(),
            input: vec![3, 28, 28],
            classes: 10,
            hidden: vec![],
            layers: None,
        })
        .unwrap()
    };
    let trainer_cfg = TrainConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        batch_size: 32,
        epochs: 8,
        lr_step: 7,
        lr_gamma: 0.1,
        weight_decay: 0.0005,
        seed: 0,
    };

    // MC-dropout scenario (dropout slows convergence; 8 epochs).
    let dropout_net = lenet(true);
    let (map_weights, history) = train(
        &dropout_net,
        WeightSet::he_init(&dropout_net, derive_seed(seed, "init", 0)),
        train_data,
        &TrainConfig {
            seed: derive_seed(seed, "train", 0),
            ..trainer_cfg.clone()
        },
    )
    .unwrap();
    let final_acc = *history.train_accuracy.last().unwrap();
    assert!(final_acc > 0.8, "MC-dropout net undertrained: {final_acc}");

    // Trainer invariant: the 5-epoch moving average of the train loss is
    // non-increasing over the run, allowing at most one violation.
    let losses = &history.train_loss;
    let window = 5.min(losses.len());
    let moving: Vec<f64> = losses
        .windows(window)
        .map(|w| w.iter().map(|&v| f64::from(v)).sum::<f64>() / window as f64)
        .collect();
    let violations = moving.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(violations <= 1, "train loss moving average rose {violations} times");

    let mc_posterior = WeightPosterior::mc_dropout(&dropout_net, map_weights).unwrap();

    // 10-member ensemble scenario on the dropout-free net, which converges
    // in a couple of epochs.
    let plain_net = lenet(false);
    let members: Vec<WeightSet> = (0..10)
        .map(|m| {
            let (w, h) = train(
                &plain_net,
                WeightSet::he_init(&plain_net, derive_seed(seed, "init", 100 + m)),
                train_data,
                &TrainConfig {
                    epochs: 2,
                    seed: derive_seed(seed, "train", 100 + m),
                    ..trainer_cfg.clone()
                },
            )
            .unwrap();
            let acc = *h.train_accuracy.last().unwrap();
            assert!(acc > 0.8, "ensemble member {m} undertrained: {acc}");
            w
        })
        .collect();
    let ensemble_posterior = WeightPosterior::ensemble(members).unwrap();

    let method = AttributionMethod::LrpEpsilon { epsilon: 1e-6 };
    let params = EvalParams {
        alphas: vec![5.0, 95.0],
        epsilon: 0.05,
        samples: 50,
        seed: derive_seed(seed, "evaluate", 0),
        enumerate: false,
        plus_rule: UaiPlusRule::Exceed,
    };

    let mean_area: f64 = test_data
        .iter()
        .map(|i| i.mask.as_ref().unwrap().object_fraction())
        .sum::<f64>()
        / test_data.len() as f64;

    for (name, net, posterior) in [
        ("mc-dropout", &dropout_net, &mc_posterior),
        ("ensemble", &plain_net, &ensemble_posterior),
    ] {
        let report =
            uai_core::eval::evaluate_suite(posterior, net, &method, test_data, &params).unwrap();
        let row = |wanted: &str| {
            report
                .rows
                .iter()
                .find(|r| r.name.starts_with(wanted))
                .unwrap_or_else(|| panic!("missing row {wanted}"))
        };
        let (random_auc, _) = row("Random").auc_mean_sd();
        let (random_ma, _) = row("Random").ma_mean_sd();
        let (intersection_auc, _) = row("Intersection").auc_mean_sd();
        let (intersection_ma, _) = row("Intersection").ma_mean_sd();
        let (union_auc, _) = row("Union").auc_mean_sd();
        let (union_ma, _) = row("Union").ma_mean_sd();
        let (average_auc, _) = row("Average").auc_mean_sd();

        println!(
            "[{name}] AUC: union {union_auc:.4} / average {average_auc:.4} / intersection {intersection_auc:.4}; \
             MA: intersection {intersection_ma:.4} / union {union_ma:.4}; random {random_auc:.4}/{random_ma:.4}"
        );

        assert!(
            union_auc - average_auc >= 0.05,
            "[{name}] AUC(Union) {union_auc:.4} not >= AUC(Average) {average_auc:.4} + 0.05"
        );
        assert!(
            average_auc - intersection_auc >= 0.05,
            "[{name}] AUC(Average) {average_auc:.4} not >= AUC(Intersection) {intersection_auc:.4} + 0.05"
        );
        assert!(
            intersection_ma - union_ma >= 0.03,
            "[{name}] MA(Intersection) {intersection_ma:.4} not >= MA(Union) {union_ma:.4} + 0.03"
        );
        assert!(
            (random_auc - 0.5).abs() <= 0.02,
            "[{name}] random AUC {random_auc:.4}"
        );
        assert!(
            (random_ma - mean_area).abs() <= 0.02,
            "[{name}] random MA {random_ma:.4} vs mean area {mean_area:.4}"
        );
        // The ensemble has no MAP weights to report.
        assert_eq!(row("Baseline").available, name == "mc-dropout");
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 20 * 60,
        "criterion 1 took {elapsed:?}, over the 20-minute budget"
    );
    println!("criterion 1 (Table-I ordering at desk scale): PASS in {elapsed:?}");
}

/// Criterion 2: Theorem-1 equivalence on a fully enumerated 5-member
/// ensemble: the mean relevance map equals the attribution of the
/// logit-averaged function within 1e-5 (gradient, input-times-gradient) and
/// 1e-4 (integrated gradients at 128 steps).
#[test]
fn criterion_2_theorem_1_equivalence() {
    let members = 5;
    let mut tested = 0;
    let mut seed = 0u64;
    while tested < 20 {
        seed += 1;
        let (net, _) = testkit::random_mlp(8, &[10, 9], 4, 4000 + seed, true);
        let weight_sets: Vec<WeightSet> = (0..members)
            .map(|m| testkit::random_mlp(8, &[10, 9], 4, seed * 101 + m, true).1)
            .collect();
        let refs: Vec<&WeightSet> = weight_sets.iter().collect();
        let (avg_net, avg_w) = testkit::averaged_mlp(&net, &refs);
        let x = testkit::random_tensor(&[8], 9000 + seed, 0.1, 1.0);
        let near_kink = weight_sets
            .iter()
            .map(|w| reference::min_kink_margin(&net, w, &as_f64(&x), None))
            .chain(std::iter::once(reference::min_kink_margin(
                &avg_net,
                &avg_w,
                &as_f64(&x),
                None,
            )))
            .any(|m| m < 1e-4);
        if near_kink {
            continue;
        }
        tested += 1;
        let class = (seed % 4) as usize;
        let posterior = WeightPosterior::ensemble(weight_sets.clone()).unwrap();
        for (method, tol) in [
            (AttributionMethod::Gradient, 1e-5),
            (AttributionMethod::InputTimesGradient, 1e-5),
            (
                AttributionMethod::IntegratedGradients {
                    baseline: Tensor::zeros(&[8]),
                    steps: 128,
                },
                1e-4,
            ),
        ] {
            let set = sample_relevances(
                &posterior, &net, &method, &x, class, members as usize, 0, true,
            )
            .unwrap();
            let mean = uai_core::uai::mean_explanation(&set).unwrap();
            let direct = attribute(
                &method,
                &avg_net,
                &PosteriorSample::deterministic(avg_w.clone()),
                &x,
                class,
            )
            .unwrap();
            let max_abs = mean
                .values
                .data()
                .iter()
                .zip(direct.values.data())
                .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
                .fold(0.0, f64::max);
            assert!(
                max_abs <= tol,
                "seed {seed} method {}: max-abs gap {max_abs:.2e}",
                method.tag()
            );
        }
    }
    println!("criterion 2 (Theorem-1 equivalence on enumerated ensembles): PASS");
}

/// A random net/input pair with a solidly nonzero explained logit, away from
/// ReLU and max-pool kinks; bias-free so LRP conservation applies.
fn solid_case(seed: u64, conv: bool) -> (uai_core::net::Network, WeightSet, Tensor, usize) {
    for attempt in 0..80 {
        let s = seed + attempt * 104_729;
        let (net, w) = if conv {
            testkit::random_convnet(2, 8, 3, s, false)
        } else {
            testkit::random_mlp(6, &[9, 6], 3, s, false)
        };
        let x = testkit::random_tensor(net.input_shape(), s + 1, 0.1, 1.0);
        if reference::min_kink_margin(&net, &w, &as_f64(&x), None) < 1e-3 {
            continue;
        }
        let logits = reference::forward_f64(&net, &w, &as_f64(&x), None);
        let (class, logit) = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        if logit.abs() > 0.2 {
            return (net, w, x, class);
        }
    }
    panic!("no solid case for seed {seed}");
}

/// Criterion 3: IG completeness within 1% at 256 steps on 50 random
/// net/input pairs, and exact (to f32 rounding) for linear nets at one step.
#[test]
fn criterion_3_ig_completeness() {
    for round in 0..50u64 {
        let (net, w, x, class) = solid_case(round * 53 + 11, round % 4 == 0);
        let baseline = Tensor::zeros(x.shape());
        let sample = PosteriorSample::deterministic(w.clone());
        let map = integrated_gradients(&net, &sample, &x, class, &baseline, 256).unwrap();
        let total: f64 = map.values.data().iter().map(|&v| f64::from(v)).sum();
        let expected = reference::forward_f64(&net, &w, &as_f64(&x), None)[class]
            - reference::forward_f64(&net, &w, &as_f64(&baseline), None)[class];
        let rel = (total - expected).abs() / expected.abs().max(1e-9);
        assert!(rel <= 0.01, "round {round}: rel {rel:.2e}");
    }
    // Linear nets: exact at a single step.
    for seed in 0..10 {
        let (net, w) = testkit::random_mlp(7, &[], 3, 7000 + seed, true);
        let x = testkit::random_tensor(&[7], seed + 70, -1.0, 1.0);
        let baseline = testkit::random_tensor(&[7], seed + 71, -1.0, 1.0);
        let sample = PosteriorSample::deterministic(w.clone());
        let map = integrated_gradients(&net, &sample, &x, 2, &baseline, 1).unwrap();
        let total: f64 = map.values.data().iter().map(|&v| f64::from(v)).sum();
        let expected = reference::forward_f64(&net, &w, &as_f64(&x), None)[2]
            - reference::forward_f64(&net, &w, &as_f64(&baseline), None)[2];
        assert!(
            (total - expected).abs() <= 1e-5 * expected.abs().max(1.0),
            "seed {seed}: {total} vs {expected}"
        );
    }
    println!("criterion 3 (IG completeness): PASS");
}

/// Criterion 4: LRP-eps conservation within 0.1% of the explained logit at
/// eps 1e-6, and agreement with input-times-gradient within 1e-4 relative at
/// eps 1e-9 on ReLU-only nets.
#[test]
fn criterion_4_lrp_conservation_and_ixg_limit() {
    for round in 0..20u64 {
        let (net, w, x, class) = solid_case(round * 71 + 5, round % 3 == 0);
        let sample = PosteriorSample::deterministic(w.clone());
        let map = lrp_epsilon(&net, &sample, &x, class, 1e-6).unwrap();
        let total: f64 = map.values.data().iter().map(|&v| f64::from(v)).sum();
        let logit = reference::forward_f64(&net, &w, &as_f64(&x), None)[class];
        let rel = (total - logit).abs() / logit.abs();
        assert!(rel <= 1e-3, "round {round}: conservation off by {rel:.2e}");
    }
    for round in 0..20u64 {
        let (net, w, x, class) = solid_case(round * 91 + 13, false);
        let sample = PosteriorSample::deterministic(w.clone());
        let lrp = lrp_epsilon(&net, &sample, &x, class, 1e-9).unwrap();
        let ixg = input_times_gradient(&net, &sample, &x, class).unwrap();
        for (a, b) in lrp.values.data().iter().zip(ixg.values.data()) {
            let scale = f64::from(a.abs().max(b.abs()));
            if scale < 1e-4 {
                continue;
            }
            let rel = f64::from((a - b).abs()) / scale;
            assert!(rel <= 1e-4, "round {round}: {a} vs {b}");
        }
    }
    println!("criterion 4 (LRP-eps conservation and LRP-0 limit): PASS");
}

/// Criterion 5: the percentile operator matches an independent per-pixel
/// sort-and-interpolate oracle exactly on 1000 random relevance sets, and is
/// monotone in alpha pixelwise.
#[test]
fn criterion_5_percentile_oracle() {
    let oracle = |samples: &[Vec<f32>], pixel: usize, alpha: f32| -> f32 {
        let mut column: Vec<f32> = samples.iter().map(|s| s[pixel]).collect();
        column.sort_by(f32::total_cmp);
        let n = column.len();
        let rank = f64::from(alpha) / 100.0 * (n - 1) as f64;
        let lo = rank.floor() as usize;
        if lo + 1 >= n {
            return column[n - 1];
        }
        let frac = rank - lo as f64;
        (f64::from(column[lo]) * (1.0 - frac) + f64::from(column[lo + 1]) * frac) as f32
    };

    let mut rng = seeded_rng(51);
    for round in 0..1000 {
        let n = rng.random_range(1..16);
        let pixels = rng.random_range(1..8);
        let samples: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..pixels).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let set = RelevanceSet {
            samples: samples
                .iter()
                .map(|s| Tensor::new(vec![pixels], s.clone()).unwrap())
                .collect(),
            input: Tensor::zeros(&[pixels]),
            class_index: 0,
            method: "gradient".to_string(),
            posterior: "ensemble".to_string(),
            seeds: vec![0],
        };
        let alphas = [0.0f32, 5.0, 25.0, 50.0, 75.0, 95.0, 100.0];
        let mut previous: Option<Vec<f32>> = None;
        for alpha in alphas {
            let got = uai_percentile(&set, alpha).unwrap();
            for p in 0..pixels {
                assert_eq!(
                    got.values.data()[p],
                    oracle(&samples, p, alpha),
                    "round {round} alpha {alpha} pixel {p}"
                );
            }
            if let Some(prev) = &previous {
                for (lo, hi) in prev.iter().zip(got.values.data()) {
                    assert!(lo <= hi, "monotonicity broken at alpha {alpha}");
                }
            }
            previous = Some(got.values.data().to_vec());
        }
    }
    println!("criterion 5 (percentile oracle, 1000 sets): PASS");
}

/// Criterion 6: spectral properties. Zero-eigenvalue count equals the
/// union-find component count on 200 random sparse graphs; the eigengap
/// selector returns planted ks; the full SpRAy pipeline recovers planted
/// two-family partitions with ARI >= 0.9 and strengths within 1/N.
#[test]
fn criterion_6_spectral_properties() {
    // Component counting.
    let mut rng = seeded_rng(61);
    let mut disconnected = 0;
    for round in 0..200 {
        let n = 5 + (round % 26);
        let k_nn = 1 + round % 3;
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let blob = f64::from(rng.random_range(0..4u8)) * 80.0;
                (0..2).map(|_| rng.random_range(0.0..8.0) + blob).collect()
            })
            .collect();
        let m = spray::knn_affinity(&vectors, k_nn.min(n - 1)).unwrap();
        let spectrum = spray::laplacian_spectrum(&m).unwrap();
        let zeros = spectrum
            .eigenvalues
            .iter()
            .filter(|&&v| v.abs() <= 1e-8)
            .count();
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = m.get(i, j);
            }
        }
        let components = testkit::component_count(&adjacency, n);
        assert_eq!(zeros, components, "round {round}");
        if components > 1 {
            disconnected += 1;
        }
    }
    assert!(disconnected >= 20, "graph generator too tame: {disconnected}");

    // Planted eigengaps.
    for round in 0..100u64 {
        let mut rng = seeded_rng(620 + round);
        let k = rng.random_range(1..7usize);
        let n = k + rng.random_range(6..12usize);
        let mut evs = vec![0.0f64];
        for _ in 1..k {
            evs.push(rng.random_range(0.0..0.05));
        }
        for i in k..n {
            evs.push(5.0 + i as f64 * 0.1);
        }
        evs.sort_by(f64::total_cmp);
        assert_eq!(spray::eigengap_select(&evs, 8), k);
    }

    // Planted two-family relevance partition.
    let mut rng = seeded_rng(63);
    let (n_a, n_b) = (70usize, 30usize);
    let mut samples = Vec::new();
    let mut planted = Vec::new();
    for i in 0..(n_a + n_b) {
        let family_b = i >= n_a;
        planted.push(usize::from(family_b));
        let mut map = vec![0.0f32; 64];
        let (lo, hi) = if family_b { (32, 64) } else { (0, 32) };
        for p in lo..hi {
            map[p] = 1.0 + rng.random_range(-0.05..0.05);
        }
        samples.push(Tensor::new(vec![8, 8], map).unwrap());
    }
    let set = RelevanceSet {
        samples,
        input: Tensor::zeros(&[8, 8]),
        class_index: 0,
        method: "gradient".to_string(),
        posterior: "ensemble".to_string(),
        seeds: vec![0],
    };
    let result = spray::cluster(&set, 10, 2, 15, 19).unwrap();
    assert_eq!(result.selected_k, 2);
    let ari = testkit::adjusted_rand_index(&result.labels, &planted);
    assert!(ari >= 0.9, "ARI {ari}");
    let n = (n_a + n_b) as f64;
    assert!((result.strengths[0] - 0.7).abs() <= 1.0 / n);
    assert!((result.strengths[1] - 0.3).abs() <= 1.0 / n);
    println!("criterion 6 (spectral properties): PASS");
}

/// Criterion 7: analytic input and weight gradients match central finite
/// differences (h = 1e-3) within 1e-3 relative on 100 random small nets away
/// from kinks.
#[test]
fn criterion_7_gradient_correctness() {
    let rel_err = |a: f64, b: f64| -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-4 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    };
    let mut nets = 0u64;
    let mut seed = 0u64;
    while nets < 100 {
        seed += 1;
        let (net, w) = if seed % 2 == 0 {
            testkit::random_mlp(6, &[8, 6], 3, seed, true)
        } else {
            testkit::random_convnet(2, 8, 3, seed, true)
        };
        let x = testkit::random_tensor(net.input_shape(), seed + 313, -1.0, 1.0);
        if reference::min_kink_margin(&net, &w, &as_f64(&x), None) < 1e-3 {
            continue;
        }
        nets += 1;
        let class = (seed % 3) as usize;

        let analytic = net.grad_input(&w, &x, class, None).unwrap();
        let fd = reference::fd_grad_input(&net, &w, &x, class, 1e-3, None);
        for (a, f) in analytic.data().iter().zip(&fd) {
            assert!(rel_err(f64::from(*a), *f) <= 1e-3, "net {seed}: input grad");
        }

        let loss_grad = vec![0.3f64, -0.8, 0.5];
        let loss_grad_t =
            Tensor::new(vec![3], loss_grad.iter().map(|&v| v as f32).collect()).unwrap();
        let analytic_w = net.grad_weights(&w, &x, &loss_grad_t, None).unwrap();
        let fd_w = reference::fd_grad_weights(&net, &w, &x, &loss_grad, 1e-3, None);
        for (i, p) in analytic_w.iter() {
            let fp = fd_w.layer(i).unwrap();
            for (a, f) in p
                .weight
                .data()
                .iter()
                .chain(p.bias.data())
                .zip(fp.weight.data().iter().chain(fp.bias.data()))
            {
                assert!(
                    rel_err(f64::from(*a), f64::from(*f)) <= 1e-3,
                    "net {seed}: weight grad layer {i}"
                );
            }
        }
    }
    println!("criterion 7 (gradient correctness on 100 nets): PASS");
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

/// Criterion 8: two `demo` runs with the same seed produce bit-identical
/// reports and images, and every persisted type round-trips bit-exactly.
#[test]
fn criterion_8_determinism_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("run_a");
    let out_b = tmp.path().join("run_b");
    uai_cli::cmd_demo(uai_cli::DEMO_SMALL_CFG, &[], Some(&out_a), Some(7)).unwrap();
    uai_cli::cmd_demo(uai_cli::DEMO_SMALL_CFG, &[], Some(&out_b), Some(7)).unwrap();

    let a = dir_snapshot(&out_a);
    let b = dir_snapshot(&out_b);
    assert!(!a.is_empty());
    assert_eq!(
        a.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        b.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "demo runs produced different file sets"
    );
    let mut reports = 0;
    let mut images = 0;
    for ((name_a, bytes_a), (_, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs between runs");
        if name_a.ends_with(".tsv") || name_a.ends_with(".txt") {
            reports += 1;
        }
        if name_a.ends_with(".ppm") {
            images += 1;
        }
    }
    assert!(reports >= 3 && images >= 5, "demo wrote too few artifacts");

    // Round-trips for every persisted type, bit for bit.
    let net = build_network(&NetSection {
        arch: "lenet-dropout".to_string(),
        input: vec![3, 28, 28],
        classes: 10,
        hidden: vec![],
        layers: None,
    })
    .unwrap();
    let weights = WeightSet::he_init(&net, 3);
    let wpath = tmp.path().join("w.uaix");
    uai_core::io::save_weights(&wpath, &weights).unwrap();
    assert_eq!(uai_core::io::load_weights(&wpath, &net).unwrap(), weights);

    let posterior = WeightPosterior::mc_dropout(&net, weights).unwrap();
    let ppath = tmp.path().join("p.uaix");
    uai_core::io::save_posterior(&ppath, &posterior).unwrap();
    assert_eq!(uai_core::io::load_posterior(&ppath, &net).unwrap(), posterior);

    let data = generate(
        &SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        },
        4,
    )
    .unwrap();
    let dpath = tmp.path().join("d.uaix");
    uai_core::io::save_dataset(&dpath, &data).unwrap();
    assert_eq!(uai_core::io::load_dataset(&dpath).unwrap(), data);

    let set = sample_relevances(
        &posterior,
        &net,
        &AttributionMethod::Gradient,
        &data[0].image,
        data[0].label,
        3,
        11,
        false,
    )
    .unwrap();
    let rpath = tmp.path().join("r.uaix");
    uai_core::io::save_relevance_set(&rpath, &set).unwrap();
    assert_eq!(uai_core::io::load_relevance_set(&rpath).unwrap(), set);

    println!("criterion 8 (determinism and round-trips): PASS");
}

/// Criterion 9: AUC invariance under strictly increasing transforms and the
/// AUC(s) + AUC(-s) = 1 identity hold exactly on 100 random map/mask pairs;
/// MA is exactly invariant under positive (power-of-two) rescaling.
#[test]
fn criterion_9_metric_identities() {
    let mut rng = seeded_rng(91);
    for round in 0..100 {
        let pixels = rng.random_range(16..64usize);
        let mut mask_values = vec![0.0f32; pixels];
        let ones = rng.random_range(1..pixels);
        for v in mask_values.iter_mut().take(ones) {
            *v = 1.0;
        }
        let mask = ObjectMask::new(Tensor::new(vec![pixels], mask_values).unwrap()).unwrap();
        let mut scores = Tensor::zeros(&[pixels]);
        for v in scores.data_mut() {
            // Coarse grid of values: plenty of ties.
            *v = rng.random_range(0..9) as f32 / 4.0 - 0.5;
        }

        let base = auc_localization(&scores, &mask).unwrap();
        let affine = scores.map(|v| 2.0 * v + 1.0);
        assert_eq!(auc_localization(&affine, &mask).unwrap(), base, "round {round}");
        let cubed = scores.map(|v| v * v * v);
        assert_eq!(auc_localization(&cubed, &mask).unwrap(), base, "round {round}");

        let negated = scores.map(|v| -v);
        let sum = base + auc_localization(&negated, &mask).unwrap();
        assert_eq!(sum, 1.0, "round {round}: AUC(s)+AUC(-s) = {sum}");

        if let Some(ma) = mass_accuracy(&scores, &mask).unwrap() {
            for scale in [2.0f32, 4.0, 0.5] {
                let scaled = scores.map(|v| v * scale);
                assert_eq!(
                    mass_accuracy(&scaled, &mask).unwrap().unwrap(),
                    ma,
                    "round {round} scale {scale}"
                );
            }
        }
    }
    println!("criterion 9 (metric identities): PASS");
}
