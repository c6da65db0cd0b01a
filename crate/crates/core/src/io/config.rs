//! Run configuration: a flat sectioned key-value text format (UTF-8, `#`
//! comments), plus the network architecture builder.
//!
//! A section must be present in the file for the commands that reference it;
//! keys inside a present section fall back to defaults. Unknown sections and
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::attribution::AttributionMethod;
use crate::error::{Error, Result};
use crate::net::{LayerSpec, Network};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use crate::uai::UaiPlusRule;

const SECTIONS: &[&str] = &[
    "run",
    "net",
    "data",
    "trainer",
    "posterior",
    "attribution",
    "uai",
    "spray",
    "eval",
];

/// Parsed but untyped config: sections of key-value pairs.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    /// Parses the sectioned key-value text format. Lines are `[section]` or
    /// `key = value`; `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        let mut current: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::ConfigParse {
                    line: line_no,
                    msg: "unterminated section header".to_string(),
                })?;
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        msg: format!("unknown section [{name}]"),
                    });
                }
                if cfg.sections.contains_key(&name) {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                cfg.sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let section = current.as_ref().ok_or(Error::ConfigParse {
                line: line_no,
                msg: "key before any [section]".to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entries = cfg.sections.get_mut(section).expect("current section");
            if entries.contains_key(&key) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: format!("duplicate key {key} in [{section}]"),
                });
            }
            entries.insert(key, value);
        }
        Ok(cfg)
    }

    /// Applies a `section.key=value` override, creating the section if
    /// needed.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects section.key=value, got {assignment:?}")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects section.key=value, got {assignment:?}")))?;
        if !SECTIONS.contains(&section) {
            return Err(Error::InvalidConfig(format!("unknown section [{section}]")));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }
}

/// A present section's entries plus bookkeeping for unknown-key rejection.
struct SectionReader<'a> {
    name: &'static str,
    entries: &'a BTreeMap<String, String>,
    known: Vec<&'static str>,
}

impl<'a> SectionReader<'a> {
    fn get<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T> {
        self.known.push(key);
        match self.entries.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::InvalidConfig(format!("{}.{key}: cannot parse {raw:?}", self.name))
            }),
        }
    }

    fn get_string(&mut self, key: &'static str, default: &str) -> String {
        self.known.push(key);
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    fn get_optional_string(&mut self, key: &'static str) -> Option<String> {
        self.known.push(key);
        self.entries.get(key).cloned()
    }

    fn finish(self) -> Result<()> {
        for key in self.entries.keys() {
            if !self.known.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown key {key} in [{}]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct NetSection {
    pub arch: String,
    pub input: Vec<usize>,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub layers: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Idx,
    Container,
}

#[derive(Debug, Clone)]
pub struct DataSection {
    pub source: DataSource,
    pub train_size: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub glyph_fraction: f64,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PosteriorVariant {
    Ensemble,
    McDropout,
    Laplace,
}

#[derive(Debug, Clone)]
pub struct PosteriorSection {
    pub variant: PosteriorVariant,
    pub members: usize,
    pub enumerate: bool,
    pub prior_precision: f64,
}

#[derive(Debug, Clone)]
pub struct AttributionSection {
    pub method: String,
    pub epsilon: f32,
    pub steps: usize,
}

impl AttributionSection {
    /// Builds the concrete method; IG gets a zero baseline of the input
    /// shape.
    pub fn method_for(&self, input_shape: &[usize]) -> Result<AttributionMethod> {
        Ok(match self.method.as_str() {
            "gradient" => AttributionMethod::Gradient,
            "absgradient" => AttributionMethod::AbsGradient,
            "ixg" => AttributionMethod::InputTimesGradient,
            "lrp-eps" => AttributionMethod::LrpEpsilon {
                epsilon: self.epsilon,
            },
            "ig" => AttributionMethod::IntegratedGradients {
                baseline: Tensor::zeros(input_shape),
                steps: self.steps,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "attribution.method {other:?} (expected gradient | absgradient | ixg | lrp-eps | ig)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct UaiSection {
    pub samples: usize,
    pub alphas: Vec<f32>,
    pub epsilon: f32,
    pub plus_rule: UaiPlusRule,
}

#[derive(Debug, Clone)]
pub struct SpraySection {
    pub k_nn: usize,
    pub pool: usize,
    pub max_k: usize,
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    pub test_size: usize,
}

/// Fully typed configuration; each section is `Some` iff present in the
/// file (or created via `--set`).
#[derive(Debug, Clone)]
pub struct RunConfig {
    run: Option<RunSection>,
    net: Option<NetSection>,
    data: Option<DataSection>,
    trainer: Option<TrainConfig>,
    posterior: Option<PosteriorSection>,
    attribution: Option<AttributionSection>,
    uai: Option<UaiSection>,
    spray: Option<SpraySection>,
    eval: Option<EvalSection>,
}

fn parse_dims(raw: &str, what: &str) -> Result<Vec<usize>> {
    raw.split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: cannot parse {raw:?}")))
        })
        .collect()
}

fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: cannot parse {raw:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut cfg = RunConfig {
            run: None,
            net: None,
            data: None,
            trainer: None,
            posterior: None,
            attribution: None,
            uai: None,
            spray: None,
            eval: None,
        };
        for (name, entries) in &raw.sections {
            let mut r = SectionReader {
                name: SECTIONS
                    .iter()
                    .find(|s| *s == name)
                    .expect("section validated at parse"),
                entries,
                known: Vec::new(),
            };
            match name.as_str() {
                "run" => {
                    cfg.run = Some(RunSection {
                        seed: r.get("seed", 0u64)?,
                        out: PathBuf::from(r.get_string("out", "out")),
                    });
                }
                "net" => {
                    let arch = r.get_string("arch", "lenet");
                    let input = parse_dims(&r.get_string("input", "3x28x28"), "net.input")?;
                    let classes = r.get("classes", 10usize)?;
                    let hidden = parse_list(&r.get_string("hidden", "64"), "net.hidden")?;
                    let layers = r.get_optional_string("layers");
                    cfg.net = Some(NetSection {
                        arch,
                        input,
                        classes,
                        hidden,
                        layers,
                    });
                }
                "data" => {
                    let source = match r.get_string("source", "synthetic").as_str() {
                        "synthetic" => DataSource::Synthetic,
                        "idx" => DataSource::Idx,
                        "container" => DataSource::Container,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "data.source {other:?} (expected synthetic | idx | container)"
                            )))
                        }
                    };
                    cfg.data = Some(DataSection {
                        source,
                        train_size: r.get("train_size", 5000usize)?,
                        image_size: r.get("image_size", 28usize)?,
                        num_classes: r.get("num_classes", 10usize)?,
                        glyph_fraction: r.get("glyph_fraction", 0.25f64)?,
                        idx_images: r.get_optional_string("idx_images").map(PathBuf::from),
                        idx_labels: r.get_optional_string("idx_labels").map(PathBuf::from),
                        path: r.get_optional_string("path").map(PathBuf::from),
                    });
                }
                "trainer" => {
                    cfg.trainer = Some(TrainConfig {
                        learning_rate: r.get("learning_rate", 0.01f32)?,
                        momentum: r.get("momentum", 0.9f32)?,
                        batch_size: r.get("batch_size", 32usize)?,
                        epochs: r.get("epochs", 20usize)?,
                        lr_step: r.get("lr_step", 7usize)?,
                        lr_gamma: r.get("lr_gamma", 0.1f32)?,
                        weight_decay: r.get("weight_decay", 0.0f32)?,
                        seed: 0, // derived from run.seed at use sites
                    });
                }
                "posterior" => {
                    let variant = match r.get_string("variant", "mc-dropout").as_str() {
                        "ensemble" => PosteriorVariant::Ensemble,
                        "mc-dropout" => PosteriorVariant::McDropout,
                        "laplace" => PosteriorVariant::Laplace,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "posterior.variant {other:?} (expected ensemble | mc-dropout | laplace)"
                            )))
                        }
                    };
                    cfg.posterior = Some(PosteriorSection {
                        variant,
                        members: r.get("members", 10usize)?,
                        enumerate: r.get("enumerate", false)?,
                        prior_precision: r.get("prior_precision", 0.1f64)?,
                    });
                }
                "attribution" => {
                    cfg.attribution = Some(AttributionSection {
                        method: r.get_string("method", "lrp-eps"),
                        epsilon: r.get("epsilon", 1e-6f32)?,
                        steps: r.get("steps", 64usize)?,
                    });
                }
                "uai" => {
                    let plus_rule = match r.get_string("plus_rule", "exceed").as_str() {
                        "exceed" => UaiPlusRule::Exceed,
                        "below" => UaiPlusRule::Below,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "uai.plus_rule {other:?} (expected exceed | below)"
                            )))
                        }
                    };
                    cfg.uai = Some(UaiSection {
                        samples: r.get("samples", 100usize)?,
                        alphas: parse_list(&r.get_string("alphas", "5,95"), "uai.alphas")?,
                        epsilon: r.get("epsilon", 0.05f32)?,
                        plus_rule,
                    });
                }
                "spray" => {
                    cfg.spray = Some(SpraySection {
                        k_nn: r.get("k_nn", 10usize)?,
                        pool: r.get("pool", 2usize)?,
                        max_k: r.get("max_k", 15usize)?,
                    });
                }
                "eval" => {
                    cfg.eval = Some(EvalSection {
                        test_size: r.get("test_size", 500usize)?,
                    });
                }
                _ => unreachable!("section names validated at parse"),
            }
            r.finish()?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn run(&self) -> Result<&RunSection> {
        self.run.as_ref().ok_or(Error::MissingSection("run"))
    }

    pub fn net(&self) -> Result<&NetSection> {
        self.net.as_ref().ok_or(Error::MissingSection("net"))
    }

    pub fn data(&self) -> Result<&DataSection> {
        self.data.as_ref().ok_or(Error::MissingSection("data"))
    }

    pub fn trainer(&self) -> Result<&TrainConfig> {
        self.trainer.as_ref().ok_or(Error::MissingSection("trainer"))
    }

    pub fn posterior(&self) -> Result<&PosteriorSection> {
        self.posterior
            .as_ref()
            .ok_or(Error::MissingSection("posterior"))
    }

    pub fn attribution(&self) -> Result<&AttributionSection> {
        self.attribution
            .as_ref()
            .ok_or(Error::MissingSection("attribution"))
    }

    pub fn uai(&self) -> Result<&UaiSection> {
        self.uai.as_ref().ok_or(Error::MissingSection("uai"))
    }

    pub fn spray(&self) -> Result<&SpraySection> {
        self.spray.as_ref().ok_or(Error::MissingSection("spray"))
    }

    pub fn eval(&self) -> Result<&EvalSection> {
        self.eval.as_ref().ok_or(Error::MissingSection("eval"))
    }
}

/// Builds layers from a comma-separated token list, inferring input dims by
/// shape propagation. Tokens: `dense:OUT`, `conv:OUT_CH:K:STRIDE:PAD`,
/// `relu`, `avgpool:K:S`, `maxpool:K:S`, `flatten`, `dropout:RATE`.
pub fn parse_layer_tokens(tokens: &str, input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut shape = input_shape.to_vec();
    let mut dropout_id = 0usize;
    for token in tokens.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let mut parts = token.split(':');
        let kind = parts.next().expect("split yields at least one part");
        let mut arg = |what: &str| -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::InvalidConfig(format!("{token:?}: missing {what}")))?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{token:?}: bad {what}")))
        };
        let layer = match kind {
            "dense" => {
                if shape.len() != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "{token:?}: dense needs a flat input, current shape {shape:?} (insert flatten)"
                    )));
                }
                LayerSpec::Dense {
                    input: shape[0],
                    output: arg("output size")?,
                }
            }
            "conv" => {
                if shape.len() != 3 {
                    return Err(Error::InvalidConfig(format!(
                        "{token:?}: conv needs a [C,H,W] input, current shape {shape:?}"
                    )));
                }
                LayerSpec::Conv2d {
                    in_channels: shape[0],
                    out_channels: arg("output channels")?,
                    kernel: arg("kernel")?,
                    stride: arg("stride")?,
                    pad: arg("pad")?,
                }
            }
            "relu" => LayerSpec::Relu,
            "avgpool" => LayerSpec::AvgPool2d {
                kernel: arg("kernel")?,
                stride: arg("stride")?,
            },
            "maxpool" => LayerSpec::MaxPool2d {
                kernel: arg("kernel")?,
                stride: arg("stride")?,
            },
            "flatten" => LayerSpec::Flatten,
            "dropout" => {
                let rate: f32 = parts
                    .next()
                    .ok_or_else(|| Error::InvalidConfig(format!("{token:?}: missing rate")))?
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{token:?}: bad rate")))?;
                dropout_id += 1;
                LayerSpec::Dropout {
                    rate,
                    id: dropout_id - 1,
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown layer kind {other:?}")))
            }
        };
        if parts.next().is_some() {
            return Err(Error::InvalidConfig(format!("{token:?}: too many arguments")));
        }
        shape = layer
            .output_shape(&shape)
            .map_err(|msg| Error::InvalidConfig(format!("{token:?}: {msg}")))?;
        layers.push(layer);
    }
    Ok(layers)
}

/// The LeNet-style layer stack used throughout: two 5x5 convolutions with
/// average pooling, then a 120-84-k classifier. `dropout` inserts the
/// paper-style placements (0.25 after each pool, 0.5 after each hidden dense
/// layer).
pub fn lenet_tokens(classes: usize, dropout: bool) -> String {
    if dropout {
        format!(
            "conv:6:5:1:2, relu, avgpool:2:2, dropout:0.25, conv:16:5:1:0, relu, avgpool:2:2, dropout:0.25, \
             flatten, dense:120, relu, dropout:0.5, dense:84, relu, dropout:0.5, dense:{classes}"
        )
    } else {
        format!(
            "conv:6:5:1:2, relu, avgpool:2:2, conv:16:5:1:0, relu, avgpool:2:2, \
             flatten, dense:120, relu, dense:84, relu, dense:{classes}"
        )
    }
}

/// Builds the [`Network`] described by a `[net]` section.
pub fn build_network(section: &NetSection) -> Result<Network> {
    let tokens = match section.arch.as_str() {
        "lenet" => lenet_tokens(section.classes, false),
        "lenet-dropout" => lenet_tokens(section.classes, true),
        "mlp" => {
            let mut t = String::from("flatten");
            for h in &section.hidden {
                t.push_str(&format!(", dense:{h}, relu"));
            }
            t.push_str(&format!(", dense:{}", section.classes));
            t
        }
        "custom" => section.layers.clone().ok_or_else(|| {
            Error::InvalidConfig("net.arch = custom requires net.layers".to_string())
        })?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "net.arch {other:?} (expected lenet | lenet-dropout | mlp | custom)"
            )))
        }
    };
    let layers = parse_layer_tokens(&tokens, &section.input)?;
    Network::new(layers, section.input.clone(), section.classes)
}
