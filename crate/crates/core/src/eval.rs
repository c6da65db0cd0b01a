//! Localization metrics against ground-truth object masks (AUC-ROC and
//! relevance mass accuracy), plus the comparison harness that scores Random,
//! Baseline, Average, percentile and UAI+ explanations over a test set.

use rand::Rng;
use rayon::prelude::*;

use crate::attribution::{attribute, AttributionMethod};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::posterior::{PosteriorSample, WeightPosterior};
use crate::rng::{derive_seed, seeded_rng};
use crate::synth::LabeledImage;
use crate::tensor::Tensor;
use crate::uai::{
    group_normalize, mean_explanation, sample_relevances, uai_percentile, uai_plus_with,
    UaiPlusRule,
};

/// Binary ground-truth object mask: 1 on object pixels, 0 on background.
/// Both classes must be present.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    values: Tensor,
}

impl ObjectMask {
    pub fn new(values: Tensor) -> Result<Self> {
        let mut ones = 0usize;
        let mut zeros = 0usize;
        for &v in values.data() {
            if v == 1.0 {
                ones += 1;
            } else if v == 0.0 {
                zeros += 1;
            } else {
                return Err(Error::DegenerateMask(format!("non-binary value {v}")));
            }
        }
        if ones == 0 || zeros == 0 {
            return Err(Error::DegenerateMask(
                "mask must contain both object and background pixels".to_string(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    /// Fraction of pixels belonging to the object.
    pub fn object_fraction(&self) -> f64 {
        let ones = self.values.data().iter().filter(|&&v| v == 1.0).count();
        ones as f64 / self.values.len() as f64
    }
}

fn check_shapes(relevance: &Tensor, mask: &ObjectMask) -> Result<()> {
    if relevance.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: mask.shape().to_vec(),
            found: relevance.shape().to_vec(),
        });
    }
    Ok(())
}

/// AUC of the mask labels against the relevance scores, computed via the
/// Mann-Whitney rank statistic with midrank handling of tied scores.
pub fn auc_localization(relevance: &Tensor, mask: &ObjectMask) -> Result<f64> {
    check_shapes(relevance, mask)?;
    let n = relevance.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| relevance.data()[a].total_cmp(&relevance.data()[b]));

    let mut rank_sum_pos = 0.0f64;
    let mut n_pos = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && relevance.data()[order[j]] == relevance.data()[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied scores share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if mask.values().data()[idx] == 1.0 {
                rank_sum_pos += midrank;
                n_pos += 1;
            }
        }
        i = j;
    }
    let n_neg = n - n_pos;
    Ok((rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Relevance mass accuracy: the share of positive relevance lying on the
/// object. Returns `None` when the map carries no positive mass at all.
pub fn mass_accuracy(relevance: &Tensor, mask: &ObjectMask) -> Result<Option<f64>> {
    check_shapes(relevance, mask)?;
    let mut on_object = 0.0f64;
    let mut total = 0.0f64;
    for (&r, &m) in relevance.data().iter().zip(mask.values().data()) {
        let r = f64::from(r).max(0.0);
        total += r;
        if m == 1.0 {
            on_object += r;
        }
    }
    if total == 0.0 {
        return Ok(None);
    }
    Ok(Some(on_object / total))
}

/// Parameters of [`evaluate_suite`].
#[derive(Debug, Clone)]
pub struct EvalParams {
    /// Percentiles to score (5 = Intersection, 95 = Union).
    pub alphas: Vec<f32>,
    /// UAI+ threshold on group-normalized relevance.
    pub epsilon: f32,
    /// Relevance samples per image.
    pub samples: usize,
    pub seed: u64,
    /// Enumerate ensemble members instead of drawing them.
    pub enumerate: bool,
    pub plus_rule: UaiPlusRule,
}

/// Scores of one explanation method across the test set.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub name: String,
    /// Absent rows (ensemble Baseline) keep empty score vectors.
    pub available: bool,
    pub auc: Vec<f64>,
    /// `None` marks an image whose map carried no positive mass.
    pub ma: Vec<Option<f64>>,
}

impl ReportRow {
    fn absent(name: &str) -> Self {
        Self {
            name: name.to_string(),
            available: false,
            auc: Vec::new(),
            ma: Vec::new(),
        }
    }

    pub fn auc_mean_sd(&self) -> (f64, f64) {
        mean_sd(&self.auc)
    }

    pub fn ma_mean_sd(&self) -> (f64, f64) {
        let defined: Vec<f64> = self.ma.iter().flatten().copied().collect();
        mean_sd(&defined)
    }

    /// Images excluded from the MA aggregate for lack of positive mass.
    pub fn ma_undefined(&self) -> usize {
        self.ma.iter().filter(|m| m.is_none()).count()
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-image AUC and MA for every aggregation method, plus their mean +- sd
/// across the test set.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub images: usize,
}

/// Human-readable row name for a percentile.
pub fn percentile_row_name(alpha: f32) -> String {
    if alpha < 50.0 {
        format!("Intersection (a={alpha})")
    } else if alpha > 50.0 {
        format!("Union (a={alpha})")
    } else {
        "Median (a=50)".to_string()
    }
}

/// Runs the full comparison over `data`: for each image one relevance set is
/// sampled and every aggregation method scores that same set.
///
/// Rows: Random (uniform noise), Baseline (MAP attribution, absent for
/// ensembles), Average, one row per percentile in `alphas`, and UAI+.
/// Each image explains its ground-truth label.
pub fn evaluate_suite(
    posterior: &WeightPosterior,
    net: &Network,
    method: &AttributionMethod,
    data: &[LabeledImage],
    params: &EvalParams,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, item) in data.iter().enumerate() {
        if item.mask.is_none() {
            return Err(Error::DegenerateMask(format!(
                "image {i} has no ground-truth mask"
            )));
        }
    }

    struct ImageScores {
        per_method: Vec<(f64, Option<f64>)>,
    }

    let baseline_weights = posterior.map_weights();

    let per_image: Vec<ImageScores> = data
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mask = item.mask.as_ref().expect("checked above");
            let image_seed = derive_seed(params.seed, "eval-image", i as u64);
            let set = sample_relevances(
                posterior,
                net,
                method,
                &item.image,
                item.label,
                params.samples,
                image_seed,
                params.enumerate,
            )?;

            let mut per_method: Vec<(f64, Option<f64>)> = Vec::new();
            let score = |map: &Tensor| -> Result<(f64, Option<f64>)> {
                Ok((auc_localization(map, mask)?, mass_accuracy(map, mask)?))
            };

            // Random: uniform [0,1) relevance, per-image stream.
            let mut rng = seeded_rng(derive_seed(params.seed, "eval-random", i as u64));
            let mut random = Tensor::zeros(mask.shape());
            for v in random.data_mut() {
                *v = rng.random::<f32>();
            }
            per_method.push(score(&random)?);

            // Baseline: MAP attribution when the posterior keeps one.
            if let Some(map_w) = baseline_weights {
                let sample = PosteriorSample::deterministic(map_w.clone());
                let map = attribute(method, net, &sample, &item.image, item.label)?;
                per_method.push(score(&map.values)?);
            } else {
                per_method.push((f64::NAN, None));
            }

            per_method.push(score(&mean_explanation(&set)?.values)?);
            for &alpha in &params.alphas {
                per_method.push(score(&uai_percentile(&set, alpha)?.values)?);
            }

            // UAI+: a set with no positive relevance anywhere has exceedance
            // probability zero at every pixel.
            let plus = match group_normalize(&set) {
                Ok(normed) => uai_plus_with(&normed, params.epsilon, params.plus_rule)?.values,
                Err(Error::NoPositiveRelevance) => Tensor::zeros(set.map_shape()),
                Err(e) => return Err(e),
            };
            per_method.push(score(&plus)?);

            Ok(ImageScores { per_method })
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<ReportRow> = Vec::new();
    let mut names: Vec<String> = vec!["Random".to_string(), "Baseline".to_string(), "Average".to_string()];
    names.extend(params.alphas.iter().map(|&a| percentile_row_name(a)));
    names.push("UAI+".to_string());

    for (m, name) in names.iter().enumerate() {
        if name == "Baseline" && baseline_weights.is_none() {
            rows.push(ReportRow::absent(name));
            continue;
        }
        let mut row = ReportRow {
            name: name.clone(),
            available: true,
            auc: Vec::with_capacity(per_image.len()),
            ma: Vec::with_capacity(per_image.len()),
        };
        for scores in &per_image {
            let (auc, ma) = scores.per_method[m];
            row.auc.push(auc);
            row.ma.push(ma);
        }
        rows.push(row);
    }

    Ok(MetricReport {
        rows,
        images: data.len(),
    })
}
