//! Relevance attribution operators: mappings from a sampled network instance
//! and an input to a relevance map over the input's spatial positions.

use crate::error::{Error, Result};
use crate::net::Network;
use crate::posterior::PosteriorSample;
use crate::tensor::Tensor;

/// Per-pixel relevance scores for one explained class.
///
/// For `[C,H,W]` inputs the channel dimension has already been summed away,
/// so `values` carries the input's spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub values: Tensor,
    /// Canonical method tag, e.g. `lrp-eps:0.000001`.
    pub method: String,
    pub class_index: usize,
}

/// Available attribution methods.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributionMethod {
    /// Raw gradient of the explained logit.
    Gradient,
    /// Elementwise absolute gradient.
    AbsGradient,
    /// `x (*) gradient`, elementwise.
    InputTimesGradient,
    /// LRP with the epsilon stabilization rule.
    LrpEpsilon { epsilon: f32 },
    /// Midpoint-rule integrated gradients from `baseline` to the input.
    IntegratedGradients { baseline: Tensor, steps: usize },
}

impl AttributionMethod {
    /// Canonical tag used in config files, containers and reports.
    pub fn tag(&self) -> String {
        match self {
            AttributionMethod::Gradient => "gradient".to_string(),
            AttributionMethod::AbsGradient => "absgradient".to_string(),
            AttributionMethod::InputTimesGradient => "ixg".to_string(),
            AttributionMethod::LrpEpsilon { epsilon } => format!("lrp-eps:{epsilon}"),
            AttributionMethod::IntegratedGradients { steps, .. } => format!("ig:{steps}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttributionMethod::LrpEpsilon { epsilon } if *epsilon <= 0.0 => Err(
                Error::InvalidArgument(format!("lrp epsilon {epsilon} must be positive")),
            ),
            AttributionMethod::IntegratedGradients { steps: 0, .. } => Err(
                Error::InvalidArgument("integrated gradients needs at least 1 step".to_string()),
            ),
            _ => Ok(()),
        }
    }
}

/// Sums the channel dimension of a `[C,H,W]` tensor; lower ranks pass
/// through.
fn channel_sum(full: Tensor) -> Tensor {
    if full.rank() != 3 {
        return full;
    }
    let (c, h, w) = (full.shape()[0], full.shape()[1], full.shape()[2]);
    let mut out = vec![0.0f64; h * w];
    for ch in 0..c {
        let plane = &full.data()[ch * h * w..(ch + 1) * h * w];
        for (o, v) in out.iter_mut().zip(plane) {
            *o += f64::from(*v);
        }
    }
    Tensor::new(vec![h, w], out.into_iter().map(|v| v as f32).collect()).expect("channel sum")
}

fn finish(full: Tensor, method: &AttributionMethod, class_index: usize) -> Result<RelevanceMap> {
    let values = channel_sum(full);
    values.check_finite(&format!("{} attribution", method.tag()))?;
    Ok(RelevanceMap {
        values,
        method: method.tag(),
        class_index,
    })
}

/// Computes the relevance map of `method` for one sampled network instance.
pub fn attribute(
    method: &AttributionMethod,
    net: &Network,
    sample: &PosteriorSample,
    x: &Tensor,
    class_index: usize,
) -> Result<RelevanceMap> {
    method.validate()?;
    if class_index >= net.num_classes() {
        return Err(Error::ClassIndex {
            index: class_index,
            classes: net.num_classes(),
        });
    }
    match method {
        AttributionMethod::Gradient => {
            let grad = net.grad_input(&sample.weights, x, class_index, sample.mask.as_ref())?;
            finish(grad, method, class_index)
        }
        AttributionMethod::AbsGradient => {
            let grad = net.grad_input(&sample.weights, x, class_index, sample.mask.as_ref())?;
            finish(grad.map(f32::abs), method, class_index)
        }
        AttributionMethod::InputTimesGradient => input_times_gradient(net, sample, x, class_index),
        AttributionMethod::LrpEpsilon { epsilon } => {
            lrp_epsilon(net, sample, x, class_index, *epsilon)
        }
        AttributionMethod::IntegratedGradients { baseline, steps } => {
            integrated_gradients(net, sample, x, class_index, baseline, *steps)
        }
    }
}

/// `x (*) grad_input`, elementwise, before channel summation.
pub fn input_times_gradient(
    net: &Network,
    sample: &PosteriorSample,
    x: &Tensor,
    class_index: usize,
) -> Result<RelevanceMap> {
    let mut grad = net.grad_input(&sample.weights, x, class_index, sample.mask.as_ref())?;
    for (g, v) in grad.data_mut().iter_mut().zip(x.data()) {
        *g *= v;
    }
    finish(grad, &AttributionMethod::InputTimesGradient, class_index)
}

/// Backward relevance propagation with the epsilon rule, seeded with the
/// explained logit.
pub fn lrp_epsilon(
    net: &Network,
    sample: &PosteriorSample,
    x: &Tensor,
    class_index: usize,
    epsilon: f32,
) -> Result<RelevanceMap> {
    let method = AttributionMethod::LrpEpsilon { epsilon };
    method.validate()?;
    if class_index >= net.num_classes() {
        return Err(Error::ClassIndex {
            index: class_index,
            classes: net.num_classes(),
        });
    }
    let trace = net.trace(&sample.weights, x, sample.mask.as_ref())?;
    let rel = net.lrp_pass(&sample.weights, &trace, class_index, epsilon)?;
    finish(rel, &method, class_index)
}

/// Integrated gradients with a midpoint Riemann sum:
/// `(x - baseline) (*) mean_s grad(baseline + (s - 0.5)/steps * (x - baseline))`.
pub fn integrated_gradients(
    net: &Network,
    sample: &PosteriorSample,
    x: &Tensor,
    class_index: usize,
    baseline: &Tensor,
    steps: usize,
) -> Result<RelevanceMap> {
    let method = AttributionMethod::IntegratedGradients {
        baseline: baseline.clone(),
        steps,
    };
    method.validate()?;
    if baseline.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: x.shape().to_vec(),
            found: baseline.shape().to_vec(),
        });
    }
    let delta: Vec<f32> = x
        .data()
        .iter()
        .zip(baseline.data())
        .map(|(&a, &b)| a - b)
        .collect();
    let mut acc = vec![0.0f64; x.len()];
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        let point = Tensor::new(
            x.shape().to_vec(),
            baseline
                .data()
                .iter()
                .zip(&delta)
                .map(|(&b, &d)| (f64::from(b) + alpha * f64::from(d)) as f32)
                .collect(),
        )?;
        let grad = net.grad_input(&sample.weights, &point, class_index, sample.mask.as_ref())?;
        for (a, g) in acc.iter_mut().zip(grad.data()) {
            *a += f64::from(*g);
        }
    }
    let full = Tensor::new(
        x.shape().to_vec(),
        acc.iter()
            .zip(&delta)
            .map(|(&a, &d)| (a / steps as f64 * f64::from(d)) as f32)
            .collect(),
    )?;
    finish(full, &method, class_index)
}
