//! Independent reference implementations used as test oracles.
//!
//! Everything here is deliberately written from scratch against the layer
//! definitions, not by calling into the library's compute paths: the
//! reference forward pass runs entirely in f64 with naive loops, gradients
//! come from central finite differences on that forward pass, and the
//! eigenvalue oracle is a cyclic Jacobi sweep. Keep it that way - these
//! exist to catch bugs in the main implementation, not to share code with
//! it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uai_core::net::{LayerParams, LayerSpec, Network, WeightSet};
use uai_core::tensor::Tensor;
use uai_core::DropoutMask;

pub mod reference {
    //! f64 re-implementation of the forward pass and finite-difference
    //! gradients.

    use super::*;

    fn conv_out(h: usize, pad: usize, k: usize, stride: usize) -> usize {
        (h + 2 * pad - k) / stride + 1
    }

    /// Forward pass in f64. Shapes are recomputed here from the layer specs
    /// so this stays independent of `Network`'s internal shape chain.
    pub fn forward_f64(
        net: &Network,
        weights: &WeightSet,
        x: &[f64],
        mask: Option<&DropoutMask>,
    ) -> Vec<f64> {
        let mut shape: Vec<usize> = net.input_shape().to_vec();
        let mut act: Vec<f64> = x.to_vec();
        for (i, layer) in net.layers().iter().enumerate() {
            act = step_layer(layer, i, weights, &shape, &act, mask);
            shape = layer.output_shape(&shape).expect("valid layer");
        }
        act
    }

    /// Smallest distance to a non-differentiable point along the forward
    /// pass: the minimum over ReLU inputs of `|v|` and over max-pool windows
    /// of the winner's margin. Infinite for purely linear nets.
    pub fn min_kink_margin(
        net: &Network,
        weights: &WeightSet,
        x: &[f64],
        mask: Option<&DropoutMask>,
    ) -> f64 {
        let mut margin = f64::INFINITY;
        let mut shape: Vec<usize> = net.input_shape().to_vec();
        let mut act: Vec<f64> = x.to_vec();
        for (i, layer) in net.layers().iter().enumerate() {
            match *layer {
                LayerSpec::Relu => {
                    for &v in &act {
                        margin = margin.min(v.abs());
                    }
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut second = f64::NEG_INFINITY;
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let v = act[ch * h * w
                                            + (oy * stride + ky) * w
                                            + ox * stride
                                            + kx];
                                        if v > best {
                                            second = best;
                                            best = v;
                                        } else if v > second {
                                            second = v;
                                        }
                                    }
                                }
                                // An all-zero window is a dead (ReLU-clamped)
                                // region: locally constant, not a kink. The
                                // ReLU margin already guards its robustness.
                                if second.is_finite() && !(best == 0.0 && second == 0.0) {
                                    margin = margin.min(best - second);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
            act = step_layer(layer, i, weights, &shape, &act, mask);
            shape = layer.output_shape(&shape).expect("valid layer");
        }
        margin
    }

    fn step_layer(
        layer: &LayerSpec,
        index: usize,
        weights: &WeightSet,
        shape: &[usize],
        act: &[f64],
        mask: Option<&DropoutMask>,
    ) -> Vec<f64> {
        // One-layer forward in f64; mirrors forward_f64's cases.
        match *layer {
            LayerSpec::Dense { input, output } => {
                let p = weights.layer(index).expect("dense params");
                (0..output)
                    .map(|o| {
                        let mut acc = f64::from(p.bias.data()[o]);
                        for j in 0..input {
                            acc += f64::from(p.weight.data()[o * input + j]) * act[j];
                        }
                        acc
                    })
                    .collect()
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let (h, w) = (shape[1], shape[2]);
                let (oh, ow) = (conv_out(h, pad, kernel, stride), conv_out(w, pad, kernel, stride));
                let p = weights.layer(index).expect("conv params");
                let mut out = vec![0.0f64; out_channels * oh * ow];
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = f64::from(p.bias.data()[oc]);
                            for ic in 0..in_channels {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        acc += f64::from(
                                            p.weight.data()[((oc * in_channels + ic) * kernel
                                                + ky)
                                                * kernel
                                                + kx],
                                        ) * act[ic * h * w + iy as usize * w + ix as usize];
                                    }
                                }
                            }
                            out[oc * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => act.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::AvgPool2d { kernel, stride } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                let mut out = vec![0.0f64; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    acc += act
                                        [ch * h * w + (oy * stride + ky) * w + ox * stride + kx];
                                }
                            }
                            out[ch * oh * ow + oy * ow + ox] = acc / (kernel * kernel) as f64;
                        }
                    }
                }
                out
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                let mut out = vec![0.0f64; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    best = best.max(
                                        act[ch * h * w
                                            + (oy * stride + ky) * w
                                            + ox * stride
                                            + kx],
                                    );
                                }
                            }
                            out[ch * oh * ow + oy * ow + ox] = best;
                        }
                    }
                }
                out
            }
            LayerSpec::Flatten => act.to_vec(),
            LayerSpec::Dropout { .. } => match mask.and_then(|m| m.get(index)) {
                Some(m) => act
                    .iter()
                    .zip(m.data())
                    .map(|(&v, &mv)| v * f64::from(mv))
                    .collect(),
                None => act.to_vec(),
            },
        }
    }

    /// Central finite differences of `logit[class]` with respect to the
    /// input, on the f64 forward pass.
    pub fn fd_grad_input(
        net: &Network,
        weights: &WeightSet,
        x: &Tensor,
        class: usize,
        h: f64,
        mask: Option<&DropoutMask>,
    ) -> Vec<f64> {
        let base: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
        (0..base.len())
            .map(|j| {
                let mut plus = base.clone();
                plus[j] += h;
                let mut minus = base.clone();
                minus[j] -= h;
                let fp = forward_f64(net, weights, &plus, mask)[class];
                let fm = forward_f64(net, weights, &minus, mask)[class];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Central finite differences of `sum_k loss_grad[k] * logit[k]` with
    /// respect to every parameter.
    pub fn fd_grad_weights(
        net: &Network,
        weights: &WeightSet,
        x: &Tensor,
        loss_grad: &[f64],
        h: f64,
        mask: Option<&DropoutMask>,
    ) -> WeightSet {
        let x64: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
        let objective = |w: &WeightSet| -> f64 {
            forward_f64(net, w, &x64, mask)
                .iter()
                .zip(loss_grad)
                .map(|(l, g)| l * g)
                .sum()
        };
        let mut grads = WeightSet::zeros(net);
        let layer_ids: Vec<usize> = weights.iter().map(|(i, _)| i).collect();
        for i in layer_ids {
            for field in [0, 1] {
                let len = {
                    let p = weights.layer(i).expect("layer");
                    if field == 0 { p.weight.len() } else { p.bias.len() }
                };
                for j in 0..len {
                    let mut plus = weights.clone();
                    let mut minus = weights.clone();
                    {
                        let p = plus.layer_mut(i).expect("layer");
                        let v = if field == 0 {
                            &mut p.weight.data_mut()[j]
                        } else {
                            &mut p.bias.data_mut()[j]
                        };
                        *v += h as f32;
                    }
                    {
                        let p = minus.layer_mut(i).expect("layer");
                        let v = if field == 0 {
                            &mut p.weight.data_mut()[j]
                        } else {
                            &mut p.bias.data_mut()[j]
                        };
                        *v -= h as f32;
                    }
                    let g = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let p = grads.layer_mut(i).expect("layer");
                    if field == 0 {
                        p.weight.data_mut()[j] = g as f32;
                    } else {
                        p.bias.data_mut()[j] = g as f32;
                    }
                }
            }
        }
        grads
    }
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix (row-major),
/// returning ascending eigenvalues.
pub fn jacobi_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-14 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut evs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    evs.sort_by(f64::total_cmp);
    evs
}

/// Connected-component count of a 0/1 adjacency matrix via union-find.
pub fn component_count(adjacency: &[u8], n: usize) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[i * n + j] != 0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    (0..n)
        .filter(|&i| find(&mut parent, i) == i)
        .count()
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let choose2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_table: f64 = table.iter().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.iter().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.iter().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_table - expected) / (max_index - expected)
}

/// A random MLP `input -> hidden... -> classes` with ReLU between dense
/// layers, He-initialized weights and (optionally) random biases.
pub fn random_mlp(
    input: usize,
    hidden: &[usize],
    classes: usize,
    seed: u64,
    with_bias: bool,
) -> (Network, WeightSet) {
    let mut layers = Vec::new();
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::Dense { input: prev, output: h });
        layers.push(LayerSpec::Relu);
        prev = h;
    }
    layers.push(LayerSpec::Dense { input: prev, output: classes });
    let net = Network::new(layers, vec![input], classes).expect("valid mlp");
    let mut weights = WeightSet::he_init(&net, seed);
    if with_bias {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
        for (_, p) in weights.iter_mut() {
            for b in p.bias.data_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
    (net, weights)
}

/// A small random conv net `[C,H,W] -> classes` exercising conv, both pool
/// kinds, flatten and dense layers.
pub fn random_convnet(
    channels: usize,
    size: usize,
    classes: usize,
    seed: u64,
    with_bias: bool,
) -> (Network, WeightSet) {
    let layers = vec![
        LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
        LayerSpec::Conv2d {
            in_channels: 4,
            out_channels: 6,
            kernel: 3,
            stride: 1,
            pad: 0,
        },
        LayerSpec::Relu,
        LayerSpec::AvgPool2d { kernel: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            input: 6 * ((size / 2 - 2) / 2) * ((size / 2 - 2) / 2),
            output: classes,
        },
    ];
    let net = Network::new(layers, vec![channels, size, size], classes).expect("valid convnet");
    let mut weights = WeightSet::he_init(&net, seed);
    if with_bias {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
        for (_, p) in weights.iter_mut() {
            for b in p.bias.data_mut() {
                *b = rng.random_range(-0.2..0.2);
            }
        }
    }
    (net, weights)
}

/// A random input tensor with entries in `(lo, hi)`.
pub fn random_tensor(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("random tensor")
}

/// Builds one MLP computing the exact logit-average of `members`.
///
/// All member nets must share the alternating Dense/ReLU topology of `net`.
/// Hidden layers are stacked block-diagonally; the final dense layer
/// concatenates the member output weights scaled by `1/M` and averages the
/// biases, so the result equals `(1/M) * sum_m f_m(x)` up to rounding.
pub fn averaged_mlp(net: &Network, members: &[&WeightSet]) -> (Network, WeightSet) {
    let m = members.len();
    assert!(m >= 1);
    let dense_ids: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| matches!(l, LayerSpec::Dense { .. }).then_some(i))
        .collect();
    assert!(!dense_ids.is_empty());

    let dims: Vec<(usize, usize)> = dense_ids
        .iter()
        .map(|&i| match net.layers()[i] {
            LayerSpec::Dense { input, output } => (input, output),
            _ => unreachable!(),
        })
        .collect();
    let input_dim = dims[0].0;
    let classes = dims.last().expect("final dense").1;
    let depth = dims.len();

    let mut layers = Vec::new();
    let mut params: Vec<LayerParams> = Vec::new();
    let inv_m = 1.0 / m as f32;
    for (d, &(d_in, d_out)) in dims.iter().enumerate() {
        let first = d == 0;
        let last = d + 1 == depth;
        let big_in = if first { d_in } else { m * d_in };
        let big_out = if last { classes } else { m * d_out };
        let mut weight = Tensor::zeros(&[big_out, big_in]);
        let mut bias = Tensor::zeros(&[big_out]);
        for (mi, member) in members.iter().enumerate() {
            let p = member.layer(dense_ids[d]).expect("member dense layer");
            let row0 = if last { 0 } else { mi * d_out };
            let col0 = if first { 0 } else { mi * d_in };
            let scale = if last { inv_m } else { 1.0 };
            for r in 0..d_out {
                for c in 0..d_in {
                    weight.data_mut()[(row0 + r) * big_in + col0 + c] +=
                        p.weight.data()[r * d_in + c] * scale;
                }
                bias.data_mut()[row0 + r] += p.bias.data()[r] * scale;
            }
        }
        layers.push(LayerSpec::Dense {
            input: big_in,
            output: big_out,
        });
        if !last {
            layers.push(LayerSpec::Relu);
        }
        params.push(LayerParams { weight, bias });
    }

    let avg_net = Network::new(layers.clone(), vec![input_dim], classes).expect("averaged net");
    let mut weights = WeightSet::zeros(&avg_net);
    let mut pi = 0;
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, LayerSpec::Dense { .. }) {
            weights.set_layer(i, params[pi].clone());
            pi += 1;
        }
    }
    (avg_net, weights)
}
