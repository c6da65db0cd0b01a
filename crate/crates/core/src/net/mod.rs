//! Minimal feedforward network core.
//!
//! A [`Network`] is a validated layer topology; a [`WeightSet`] is one
//! concrete weight assignment for it. Keeping the two apart lets many weight
//! samples share one topology, which is what the posterior sampling machinery
//! needs. [`Network::forward`] and the gradient entry points are pure
//! functions of `(net, weights, input, mask)` and are safe to call from many
//! threads at once.

mod ops;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

pub(crate) use ops::{ConvGeom, PoolGeom};

/// One layer of a feedforward topology.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    AvgPool2d {
        kernel: usize,
        stride: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    /// Inverted dropout; `id` distinguishes placements of the same rate.
    Dropout {
        rate: f32,
        id: usize,
    },
}

impl LayerSpec {
    /// Short name used in error messages and config files.
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::AvgPool2d { .. } => "avgpool",
            LayerSpec::MaxPool2d { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Output shape for a given input shape. This is pure shape algebra:
    /// every layer's output shape is known before any value is computed.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { input: d_in, output } => {
                if input.len() != 1 {
                    return Err(format!(
                        "dense expects a rank-1 input, got shape {input:?} (insert flatten)"
                    ));
                }
                if input[0] != d_in {
                    return Err(format!("dense expects {d_in} inputs, got {}", input[0]));
                }
                Ok(vec![output])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                if input.len() != 3 {
                    return Err(format!("conv expects a [C,H,W] input, got {input:?}"));
                }
                let (c, h, w) = (input[0], input[1], input[2]);
                if c != in_channels {
                    return Err(format!("conv expects {in_channels} channels, got {c}"));
                }
                if kernel == 0 || stride == 0 {
                    return Err("conv kernel and stride must be positive".to_string());
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(format!(
                        "conv kernel {kernel} larger than padded input {h}x{w} (pad {pad})"
                    ));
                }
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::AvgPool2d { kernel, stride } | LayerSpec::MaxPool2d { kernel, stride } => {
                if input.len() != 3 {
                    return Err(format!("pool expects a [C,H,W] input, got {input:?}"));
                }
                let (c, h, w) = (input[0], input[1], input[2]);
                if kernel == 0 || stride == 0 {
                    return Err("pool kernel and stride must be positive".to_string());
                }
                if h < kernel || w < kernel {
                    return Err(format!("pool kernel {kernel} larger than input {h}x{w}"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dropout { rate, .. } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0,1)"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// `(weight shape, bias shape)` for parametric layers.
    pub fn weight_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { input, output } => Some((vec![output, input], vec![output])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }
}

/// A validated layer topology with a fixed input shape and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    num_classes: usize,
    /// `shapes[i]` is the input shape of layer `i`; `shapes[len]` the output.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {input_shape:?} must be non-empty with positive dims"
            )));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".to_string()));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.clone());
        for (i, layer) in layers.iter().enumerate() {
            let out = layer
                .output_shape(shapes.last().expect("shape chain"))
                .map_err(|msg| Error::InvalidNetwork(format!("layer {i}: {msg}")))?;
            shapes.push(out);
        }
        let final_shape = shapes.last().expect("final shape");
        if final_shape.iter().product::<usize>() != num_classes || final_shape.len() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "final layer produces shape {final_shape:?}, expected [{num_classes}]"
            )));
        }
        Ok(Self {
            layers,
            input_shape,
            num_classes,
            shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Input shape of layer `i` (`i == len` gives the output shape).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// `(layer index, rate)` of every dropout layer, in network order.
    pub fn dropout_layers(&self) -> Vec<(usize, f32)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                LayerSpec::Dropout { rate, .. } => Some((i, *rate)),
                _ => None,
            })
            .collect()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    fn conv_geom(&self, i: usize) -> ConvGeom {
        let input = &self.shapes[i];
        let output = &self.shapes[i + 1];
        match self.layers[i] {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => ConvGeom {
                in_ch: in_channels,
                out_ch: out_channels,
                kernel,
                stride,
                pad,
                h: input[1],
                w: input[2],
                oh: output[1],
                ow: output[2],
            },
            _ => unreachable!("conv_geom on non-conv layer"),
        }
    }

    fn pool_geom(&self, i: usize) -> PoolGeom {
        let input = &self.shapes[i];
        let output = &self.shapes[i + 1];
        let (kernel, stride) = match self.layers[i] {
            LayerSpec::AvgPool2d { kernel, stride } | LayerSpec::MaxPool2d { kernel, stride } => {
                (kernel, stride)
            }
            _ => unreachable!("pool_geom on non-pool layer"),
        };
        PoolGeom {
            ch: input[0],
            kernel,
            stride,
            h: input[1],
            w: input[2],
            oh: output[1],
            ow: output[2],
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_mask(&self, mask: Option<&DropoutMask>) -> Result<()> {
        let Some(mask) = mask else { return Ok(()) };
        if !self.has_dropout() {
            return Err(Error::InvalidArgument(
                "dropout mask given, but the network has no dropout layers".to_string(),
            ));
        }
        for &(layer, _) in &self.dropout_layers() {
            match mask.get(layer) {
                Some(m) if m.shape() == self.shapes[layer].as_slice() => {}
                Some(m) => {
                    return Err(Error::ShapeMismatch {
                        layer,
                        expected: self.shapes[layer].clone(),
                        found: m.shape().to_vec(),
                    })
                }
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "dropout mask is missing an entry for layer {layer}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Runs the network, keeping every intermediate activation.
    pub(crate) fn trace<'a>(
        &self,
        weights: &WeightSet,
        x: &Tensor,
        mask: Option<&'a DropoutMask>,
    ) -> Result<Trace<'a>> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        weights.check_against(self)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("trace input");
            let mut out = Tensor::zeros(&self.shapes[i + 1]);
            match layer {
                LayerSpec::Dense { .. } => {
                    let p = weights.layer(i).expect("dense params");
                    ops::dense_forward(input.data(), p.weight.data(), p.bias.data(), out.data_mut());
                }
                LayerSpec::Conv2d { .. } => {
                    let p = weights.layer(i).expect("conv params");
                    ops::conv_forward(
                        input.data(),
                        p.weight.data(),
                        p.bias.data(),
                        &self.conv_geom(i),
                        out.data_mut(),
                    );
                }
                LayerSpec::Relu => ops::relu_forward(input.data(), out.data_mut()),
                LayerSpec::AvgPool2d { .. } => {
                    ops::avgpool_forward(input.data(), &self.pool_geom(i), out.data_mut())
                }
                LayerSpec::MaxPool2d { .. } => {
                    ops::maxpool_forward(input.data(), &self.pool_geom(i), out.data_mut())
                }
                LayerSpec::Flatten => {
                    out = input.clone().reshape(self.shapes[i + 1].clone())?;
                }
                LayerSpec::Dropout { .. } => match mask.and_then(|m| m.get(i)) {
                    Some(m) => {
                        for ((o, v), mv) in
                            out.data_mut().iter_mut().zip(input.data()).zip(m.data())
                        {
                            *o = v * mv;
                        }
                    }
                    None => out = input.clone(),
                },
            }
            activations.push(out);
        }
        Ok(Trace { activations, mask })
    }

    /// Computes the `k` output logits. Omitting the mask runs dropout layers
    /// as identity (inference mode).
    pub fn forward(
        &self,
        weights: &WeightSet,
        x: &Tensor,
        mask: Option<&DropoutMask>,
    ) -> Result<Tensor> {
        let mut trace = self.trace(weights, x, mask)?;
        let out = trace.activations.pop().expect("output activation");
        out.check_finite("forward pass")?;
        Ok(out)
    }

    /// Walks the trace backwards from an output gradient.
    ///
    /// Parameter gradients are computed only when `want_weights` is set; the
    /// returned input gradient is skipped (left zero) for the first layer
    /// unless `want_input` is set, since it is the most expensive and a
    /// weights-only backward never reads it.
    pub(crate) fn backward(
        &self,
        weights: &WeightSet,
        trace: &Trace,
        out_grad: &Tensor,
        want_input: bool,
        want_weights: bool,
    ) -> Result<(Tensor, Option<WeightSet>)> {
        let mut grads = want_weights.then(|| WeightSet::zeros(self));
        let mut dy = out_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let skip_dx = i == 0 && !want_input;
            let mut dx = Tensor::zeros(&self.shapes[i]);
            match layer {
                LayerSpec::Dense { .. } => {
                    let p = weights.layer(i).expect("dense params");
                    if !skip_dx {
                        ops::dense_dx(p.weight.data(), dy.data(), dx.data_mut());
                    }
                    if let Some(g) = grads.as_mut() {
                        let gp = g.layer_mut(i).expect("dense grads");
                        ops::dense_dw(
                            input.data(),
                            dy.data(),
                            gp.weight.data_mut(),
                            gp.bias.data_mut(),
                        );
                    }
                }
                LayerSpec::Conv2d { .. } => {
                    let geom = self.conv_geom(i);
                    let p = weights.layer(i).expect("conv params");
                    if !skip_dx {
                        ops::conv_dx(p.weight.data(), dy.data(), &geom, dx.data_mut());
                    }
                    if let Some(g) = grads.as_mut() {
                        let gp = g.layer_mut(i).expect("conv grads");
                        ops::conv_dw(
                            input.data(),
                            dy.data(),
                            &geom,
                            gp.weight.data_mut(),
                            gp.bias.data_mut(),
                        );
                    }
                }
                LayerSpec::Relu => ops::relu_dx(input.data(), dy.data(), dx.data_mut()),
                LayerSpec::AvgPool2d { .. } => {
                    ops::avgpool_dx(dy.data(), &self.pool_geom(i), dx.data_mut())
                }
                LayerSpec::MaxPool2d { .. } => {
                    ops::maxpool_dx(input.data(), dy.data(), &self.pool_geom(i), dx.data_mut())
                }
                LayerSpec::Flatten => {
                    dx = dy.clone().reshape(self.shapes[i].clone())?;
                }
                LayerSpec::Dropout { .. } => match trace.mask.and_then(|m| m.get(i)) {
                    Some(m) => {
                        for ((d, g), mv) in dx.data_mut().iter_mut().zip(dy.data()).zip(m.data()) {
                            *d = g * mv;
                        }
                    }
                    None => dx = dy.clone(),
                },
            }
            dy = dx;
        }
        Ok((dy, grads))
    }

    /// Exact reverse-mode derivative of `logit[class_index]` with respect to
    /// the input. The ReLU subgradient at exactly zero is taken as zero.
    pub fn grad_input(
        &self,
        weights: &WeightSet,
        x: &Tensor,
        class_index: usize,
        mask: Option<&DropoutMask>,
    ) -> Result<Tensor> {
        if class_index >= self.num_classes {
            return Err(Error::ClassIndex {
                index: class_index,
                classes: self.num_classes,
            });
        }
        let trace = self.trace(weights, x, mask)?;
        let mut seed = Tensor::zeros(&[self.num_classes]);
        seed.data_mut()[class_index] = 1.0;
        let (dx, _) = self.backward(weights, &trace, &seed, true, false)?;
        dx.check_finite("input gradient")?;
        Ok(dx)
    }

    /// Backward relevance pass for LRP-epsilon, seeded with the chosen logit.
    ///
    /// Dense, convolution and average-pooling layers distribute relevance in
    /// proportion to each input's contribution `z_ij` to the stabilized
    /// denominator `z_i + eps * sign(z_i)`; max pooling routes relevance to
    /// the window winner (same tie-break as the forward pass); ReLU, dropout
    /// and flatten pass relevance through. Returns relevance over the full
    /// input shape.
    pub(crate) fn lrp_pass(
        &self,
        weights: &WeightSet,
        trace: &Trace,
        class_index: usize,
        epsilon: f32,
    ) -> Result<Tensor> {
        let eps = f64::from(epsilon);
        let stab = |z: f32| -> f64 {
            let z = f64::from(z);
            if z >= 0.0 {
                z + eps
            } else {
                z - eps
            }
        };
        let factor_of = |rel: &Tensor, z: &Tensor| -> Tensor {
            let data = rel
                .data()
                .iter()
                .zip(z.data())
                .map(|(&r, &z)| (f64::from(r) / stab(z)) as f32)
                .collect();
            Tensor::new(rel.shape().to_vec(), data).expect("factor shape")
        };

        let output = trace.output();
        let mut rel = Tensor::zeros(output.shape());
        rel.data_mut()[class_index] = output.data()[class_index];

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let z = &trace.activations[i + 1];
            match layer {
                LayerSpec::Dense { .. } => {
                    let p = weights.layer(i).expect("dense params");
                    let factor = factor_of(&rel, z);
                    let mut dx = Tensor::zeros(&self.shapes[i]);
                    ops::dense_dx(p.weight.data(), factor.data(), dx.data_mut());
                    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                        *d *= x;
                    }
                    rel = dx;
                }
                LayerSpec::Conv2d { .. } => {
                    let p = weights.layer(i).expect("conv params");
                    let factor = factor_of(&rel, z);
                    let mut dx = Tensor::zeros(&self.shapes[i]);
                    ops::conv_dx(p.weight.data(), factor.data(), &self.conv_geom(i), dx.data_mut());
                    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                        *d *= x;
                    }
                    rel = dx;
                }
                LayerSpec::AvgPool2d { .. } => {
                    let factor = factor_of(&rel, z);
                    let mut dx = Tensor::zeros(&self.shapes[i]);
                    ops::avgpool_dx(factor.data(), &self.pool_geom(i), dx.data_mut());
                    for (d, x) in dx.data_mut().iter_mut().zip(input.data()) {
                        *d *= x;
                    }
                    rel = dx;
                }
                LayerSpec::MaxPool2d { .. } => {
                    let mut dx = Tensor::zeros(&self.shapes[i]);
                    ops::maxpool_dx(input.data(), rel.data(), &self.pool_geom(i), dx.data_mut());
                    rel = dx;
                }
                LayerSpec::Flatten => {
                    rel = rel.reshape(self.shapes[i].clone())?;
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } => {}
            }
        }
        Ok(rel)
    }

    /// Standard backpropagation: gradients of `loss_grad . logits` with
    /// respect to every weight and bias.
    pub fn grad_weights(
        &self,
        weights: &WeightSet,
        x: &Tensor,
        loss_grad: &Tensor,
        mask: Option<&DropoutMask>,
    ) -> Result<WeightSet> {
        if loss_grad.shape() != [self.num_classes] {
            return Err(Error::ShapeMismatch {
                layer: self.layers.len(),
                expected: vec![self.num_classes],
                found: loss_grad.shape().to_vec(),
            });
        }
        let trace = self.trace(weights, x, mask)?;
        let (_, grads) = self.backward(weights, &trace, loss_grad, false, true)?;
        Ok(grads.expect("weight gradients requested"))
    }
}

/// Activations captured during a forward pass; `activations[i]` is the input
/// of layer `i` and the final entry is the network output.
pub(crate) struct Trace<'a> {
    pub(crate) activations: Vec<Tensor>,
    pub(crate) mask: Option<&'a DropoutMask>,
}

impl Trace<'_> {
    pub(crate) fn output(&self) -> &Tensor {
        self.activations.last().expect("trace output")
    }
}

/// Weight and bias tensors for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameters for a [`Network`], keyed by layer index.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    params: Vec<Option<LayerParams>>,
}

impl WeightSet {
    /// All-zero parameters shaped for `net`.
    pub fn zeros(net: &Network) -> Self {
        let params = net
            .layers()
            .iter()
            .map(|l| {
                l.weight_shapes().map(|(w, b)| LayerParams {
                    weight: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
            })
            .collect();
        Self { params }
    }

    /// He-style uniform fan-in initialization: weights from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero.
    pub fn he_init(net: &Network, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut set = Self::zeros(net);
        for (i, layer) in net.layers().iter().enumerate() {
            let fan_in = match *layer {
                LayerSpec::Dense { input, .. } => input,
                LayerSpec::Conv2d {
                    in_channels, kernel, ..
                } => in_channels * kernel * kernel,
                _ => continue,
            };
            let bound = (6.0 / fan_in as f32).sqrt();
            let p = set.params[i].as_mut().expect("parametric layer");
            for w in p.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        set
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams> {
        self.params.get(i).and_then(|p| p.as_ref())
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut LayerParams> {
        self.params.get_mut(i).and_then(|p| p.as_mut())
    }

    pub fn set_layer(&mut self, i: usize, params: LayerParams) {
        if self.params.len() <= i {
            self.params.resize(i + 1, None);
        }
        self.params[i] = Some(params);
    }

    /// Number of layer slots (parametric or not).
    pub fn num_slots(&self) -> usize {
        self.params.len()
    }

    /// `(layer index, params)` for every parametric layer, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &LayerParams)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut LayerParams)> {
        self.params
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.as_mut().map(|p| (i, p)))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.iter().map(|(_, p)| p.weight.len() + p.bias.len()).sum()
    }

    /// Verifies that every parametric layer of `net` has matching tensors.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        for (i, layer) in net.layers().iter().enumerate() {
            match (layer.weight_shapes(), self.layer(i)) {
                (None, _) => {}
                (Some((w, b)), Some(p)) => {
                    if p.weight.shape() != w.as_slice() {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            expected: w,
                            found: p.weight.shape().to_vec(),
                        });
                    }
                    if p.bias.shape() != b.as_slice() {
                        return Err(Error::ShapeMismatch {
                            layer: i,
                            expected: b,
                            found: p.bias.shape().to_vec(),
                        });
                    }
                }
                (Some((w, _)), None) => {
                    return Err(Error::ShapeMismatch {
                        layer: i,
                        expected: w,
                        found: vec![],
                    })
                }
            }
        }
        Ok(())
    }
}

/// Explicit dropout masks, keyed by dropout layer index.
///
/// Entries are `0` or `1/(1-rate)`; a mask is a value, not hidden RNG state,
/// so a sampled model is a reproducible object.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    masks: Vec<(usize, Tensor)>,
}

impl DropoutMask {
    /// Samples a Bernoulli keep/drop mask for every dropout layer of `net`.
    pub fn sample(net: &Network, seed: u64) -> Self {
        let sites: Vec<(usize, f32, Vec<usize>)> = net
            .dropout_layers()
            .into_iter()
            .map(|(i, rate)| (i, rate, net.activation_shape(i).to_vec()))
            .collect();
        Self::sample_sites(&sites, seed)
    }

    /// Samples masks for explicit `(layer, rate, activation shape)` sites.
    pub fn sample_sites(sites: &[(usize, f32, Vec<usize>)], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let masks = sites
            .iter()
            .map(|(layer, rate, shape)| {
                let scale = 1.0 / (1.0 - rate);
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = if rng.random::<f32>() >= *rate { scale } else { 0.0 };
                }
                (*layer, t)
            })
            .collect();
        Self { masks }
    }

    /// A mask that keeps every unit (still applying the `1/(1-rate)` scale).
    pub fn all_keep(net: &Network) -> Self {
        let masks = net
            .dropout_layers()
            .into_iter()
            .map(|(i, rate)| {
                (
                    i,
                    Tensor::filled(net.activation_shape(i), 1.0 / (1.0 - rate)),
                )
            })
            .collect();
        Self { masks }
    }

    pub fn from_parts(masks: Vec<(usize, Tensor)>) -> Self {
        Self { masks }
    }

    pub fn get(&self, layer: usize) -> Option<&Tensor> {
        self.masks
            .iter()
            .find(|(i, _)| *i == layer)
            .map(|(_, t)| t)
    }

    pub fn parts(&self) -> &[(usize, Tensor)] {
        &self.masks
    }
}
