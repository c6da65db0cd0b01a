//! Mapping of library objects onto container entries.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::ObjectMask;
use crate::io::container::{pack_u64, unpack_u64, Container};
use crate::net::{LayerParams, Network, WeightSet};
use crate::posterior::WeightPosterior;
use crate::synth::LabeledImage;
use crate::tensor::Tensor;
use crate::uai::RelevanceSet;

fn push_weights(c: &mut Container, prefix: &str, weights: &WeightSet) -> Result<()> {
    for (i, p) in weights.iter() {
        c.push(format!("{prefix}layer{i}.weight"), p.weight.clone())?;
        c.push(format!("{prefix}layer{i}.bias"), p.bias.clone())?;
    }
    Ok(())
}

fn read_weights(c: &Container, prefix: &str, net: &Network) -> Result<WeightSet> {
    let mut weights = WeightSet::zeros(net);
    for (i, layer) in net.layers().iter().enumerate() {
        if layer.weight_shapes().is_none() {
            continue;
        }
        let w = c.require(&format!("{prefix}layer{i}.weight"))?.clone();
        let b = c.require(&format!("{prefix}layer{i}.bias"))?.clone();
        weights.set_layer(i, LayerParams { weight: w, bias: b });
    }
    weights.check_against(net)?;
    Ok(weights)
}

fn scalar(value: f32) -> Tensor {
    Tensor::new(vec![1], vec![value]).expect("scalar tensor")
}

fn read_scalar(c: &Container, name: &str) -> Result<f32> {
    let t = c.require(name)?;
    if t.len() != 1 {
        return Err(Error::BadEntry {
            entry: name.to_string(),
            msg: format!("expected a scalar, got shape {:?}", t.shape()),
        });
    }
    Ok(t.data()[0])
}

/// Zero-length entry whose name carries a string tag.
fn push_tag(c: &mut Container, key: &str, value: &str) -> Result<()> {
    c.push(
        format!("tag.{key}.{value}"),
        Tensor::new(vec![0], vec![]).expect("empty tensor"),
    )
}

fn read_tag(c: &Container, key: &str) -> Result<String> {
    let prefix = format!("tag.{key}.");
    let mut matches = c.names_with_prefix(&prefix);
    let name = matches.next().ok_or_else(|| Error::BadEntry {
        entry: prefix.clone(),
        msg: "missing tag entry".to_string(),
    })?;
    Ok(name[prefix.len()..].to_string())
}

pub fn save_weights(path: &Path, weights: &WeightSet) -> Result<()> {
    let mut c = Container::new();
    push_weights(&mut c, "", weights)?;
    c.write(path)
}

pub fn load_weights(path: &Path, net: &Network) -> Result<WeightSet> {
    read_weights(&Container::read(path)?, "", net)
}

const VARIANT_ENSEMBLE: f32 = 0.0;
const VARIANT_MC_DROPOUT: f32 = 1.0;
const VARIANT_LAPLACE: f32 = 2.0;

/// Persists a posterior: the weight-file layout extended with a variant tag
/// and, per variant, member blocks, dropout sites, or a variance block.
pub fn save_posterior(path: &Path, posterior: &WeightPosterior) -> Result<()> {
    let mut c = Container::new();
    match posterior {
        WeightPosterior::Ensemble { members } => {
            c.push("posterior.variant", scalar(VARIANT_ENSEMBLE))?;
            c.push("posterior.members", scalar(members.len() as f32))?;
            for (m, member) in members.iter().enumerate() {
                push_weights(&mut c, &format!("member{m}."), member)?;
            }
        }
        WeightPosterior::McDropout { map_weights, sites } => {
            c.push("posterior.variant", scalar(VARIANT_MC_DROPOUT))?;
            push_weights(&mut c, "map.", map_weights)?;
            let layers: Vec<f32> = sites.iter().map(|s| s.layer as f32).collect();
            let rates: Vec<f32> = sites.iter().map(|s| s.rate).collect();
            let n = sites.len();
            c.push("dropout.layers", Tensor::new(vec![n], layers)?)?;
            c.push("dropout.rates", Tensor::new(vec![n], rates)?)?;
        }
        WeightPosterior::DiagonalLaplace {
            map_weights,
            variance,
        } => {
            c.push("posterior.variant", scalar(VARIANT_LAPLACE))?;
            push_weights(&mut c, "map.", map_weights)?;
            push_weights(&mut c, "var.", variance)?;
        }
    }
    c.write(path)
}

/// Loads a posterior for `net`; the network supplies the dropout activation
/// shapes and is checked against the stored dropout sites.
pub fn load_posterior(path: &Path, net: &Network) -> Result<WeightPosterior> {
    let c = Container::read(path)?;
    let variant = read_scalar(&c, "posterior.variant")?;
    if variant == VARIANT_ENSEMBLE {
        let count = read_scalar(&c, "posterior.members")? as usize;
        let members = (0..count)
            .map(|m| read_weights(&c, &format!("member{m}."), net))
            .collect::<Result<Vec<_>>>()?;
        WeightPosterior::ensemble(members)
    } else if variant == VARIANT_MC_DROPOUT {
        let map_weights = read_weights(&c, "map.", net)?;
        let layers = c.require("dropout.layers")?;
        let rates = c.require("dropout.rates")?;
        let stored: Vec<(usize, f32)> = layers
            .data()
            .iter()
            .map(|&l| l as usize)
            .zip(rates.data().iter().copied())
            .collect();
        if stored != net.dropout_layers() {
            return Err(Error::BadEntry {
                entry: "dropout.layers".to_string(),
                msg: format!(
                    "stored dropout sites {stored:?} do not match the network's {:?}",
                    net.dropout_layers()
                ),
            });
        }
        WeightPosterior::mc_dropout(net, map_weights)
    } else if variant == VARIANT_LAPLACE {
        let map_weights = read_weights(&c, "map.", net)?;
        let variance = read_weights(&c, "var.", net)?;
        WeightPosterior::diagonal_laplace(map_weights, variance)
    } else {
        Err(Error::BadEntry {
            entry: "posterior.variant".to_string(),
            msg: format!("unknown variant {variant}"),
        })
    }
}

/// Persists a relevance set: the input, the stacked samples, the per-sample
/// seeds (u64 bit patterns packed into f32 pairs) and the method/posterior
/// tags.
pub fn save_relevance_set(path: &Path, set: &RelevanceSet) -> Result<()> {
    let mut c = Container::new();
    c.push("input", set.input.clone())?;
    let n = set.samples.len();
    let map_shape = set.map_shape().to_vec();
    let mut stacked_shape = vec![n];
    stacked_shape.extend_from_slice(&map_shape);
    let mut data = Vec::with_capacity(n * set.samples[0].len());
    for s in &set.samples {
        data.extend_from_slice(s.data());
    }
    c.push("samples", Tensor::new(stacked_shape, data)?)?;
    let mut seed_data = Vec::with_capacity(n * 2);
    for &s in &set.seeds {
        seed_data.extend_from_slice(&pack_u64(s));
    }
    c.push("seeds", Tensor::new(vec![n, 2], seed_data)?)?;
    c.push("class", scalar(set.class_index as f32))?;
    push_tag(&mut c, "method", &set.method)?;
    push_tag(&mut c, "posterior", &set.posterior)?;
    c.write(path)
}

pub fn load_relevance_set(path: &Path) -> Result<RelevanceSet> {
    let c = Container::read(path)?;
    let input = c.require("input")?.clone();
    let stacked = c.require("samples")?;
    if stacked.rank() < 2 {
        return Err(Error::BadEntry {
            entry: "samples".to_string(),
            msg: format!("expected [N, ...] stack, got shape {:?}", stacked.shape()),
        });
    }
    let n = stacked.shape()[0];
    let map_shape: Vec<usize> = stacked.shape()[1..].to_vec();
    let map_len: usize = map_shape.iter().product();
    let samples = (0..n)
        .map(|i| {
            Tensor::new(
                map_shape.clone(),
                stacked.data()[i * map_len..(i + 1) * map_len].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let seed_tensor = c.require("seeds")?;
    if seed_tensor.shape() != [n, 2] {
        return Err(Error::BadEntry {
            entry: "seeds".to_string(),
            msg: format!("expected [{n}, 2], got {:?}", seed_tensor.shape()),
        });
    }
    let seeds = (0..n)
        .map(|i| unpack_u64([seed_tensor.data()[2 * i], seed_tensor.data()[2 * i + 1]]))
        .collect();
    Ok(RelevanceSet {
        samples,
        input,
        class_index: read_scalar(&c, "class")? as usize,
        method: read_tag(&c, "method")?,
        posterior: read_tag(&c, "posterior")?,
        seeds,
    })
}

/// Persists labeled images as stacked tensors. Masks are all-or-none.
pub fn save_dataset(path: &Path, data: &[LabeledImage]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let image_shape = data[0].image.shape().to_vec();
    let with_masks = data[0].mask.is_some();
    for (i, item) in data.iter().enumerate() {
        if item.image.shape() != image_shape {
            return Err(Error::InvalidArgument(format!(
                "image {i} shape {:?} differs from {image_shape:?}",
                item.image.shape()
            )));
        }
        if item.mask.is_some() != with_masks {
            return Err(Error::InvalidArgument(
                "either all dataset items carry masks or none do".to_string(),
            ));
        }
    }

    let mut c = Container::new();
    let n = data.len();
    let image_len: usize = image_shape.iter().product();
    let mut images = Vec::with_capacity(n * image_len);
    let mut labels = Vec::with_capacity(n);
    for item in data {
        images.extend_from_slice(item.image.data());
        labels.push(item.label as f32);
    }
    let mut stacked = vec![n];
    stacked.extend_from_slice(&image_shape);
    c.push("images", Tensor::new(stacked, images)?)?;
    c.push("labels", Tensor::new(vec![n], labels)?)?;
    if with_masks {
        let mask_shape = data[0].mask.as_ref().expect("mask").shape().to_vec();
        let mask_len: usize = mask_shape.iter().product();
        let mut masks = Vec::with_capacity(n * mask_len);
        for item in data {
            masks.extend_from_slice(item.mask.as_ref().expect("mask").values().data());
        }
        let mut stacked = vec![n];
        stacked.extend_from_slice(&mask_shape);
        c.push("masks", Tensor::new(stacked, masks)?)?;
    }
    c.write(path)
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledImage>> {
    let c = Container::read(path)?;
    let images = c.require("images")?;
    let labels = c.require("labels")?;
    if images.rank() < 2 {
        return Err(Error::BadEntry {
            entry: "images".to_string(),
            msg: format!("expected [N, ...] stack, got shape {:?}", images.shape()),
        });
    }
    let n = images.shape()[0];
    if labels.shape() != [n] {
        return Err(Error::BadEntry {
            entry: "labels".to_string(),
            msg: format!("{:?} labels for {n} images", labels.shape()),
        });
    }
    let image_shape: Vec<usize> = images.shape()[1..].to_vec();
    let image_len: usize = image_shape.iter().product();
    let masks = c.get("masks");
    if let Some(m) = masks {
        if m.rank() < 2 || m.shape()[0] != n {
            return Err(Error::BadEntry {
                entry: "masks".to_string(),
                msg: format!("expected [{n}, ...] stack, got shape {:?}", m.shape()),
            });
        }
    }
    (0..n)
        .map(|i| {
            let image = Tensor::new(
                image_shape.clone(),
                images.data()[i * image_len..(i + 1) * image_len].to_vec(),
            )?;
            let mask = masks
                .map(|m| {
                    let mask_shape: Vec<usize> = m.shape()[1..].to_vec();
                    let mask_len: usize = mask_shape.iter().product();
                    ObjectMask::new(Tensor::new(
                        mask_shape,
                        m.data()[i * mask_len..(i + 1) * mask_len].to_vec(),
                    )?)
                })
                .transpose()?;
            Ok(LabeledImage {
                image,
                label: labels.data()[i] as usize,
                mask,
            })
        })
        .collect()
}
