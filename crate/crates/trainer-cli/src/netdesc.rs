//! Network description files. Same lexical format as run configs: an
//! `[input]` section with `channels`/`height`/`width`, then one
//! `[layer.<name>]` section per layer, in network order.
//!
//! Layer kinds: `conv` (keys `filters`, `kernel`, optional `pad`, `stride`,
//! `grid`), `relu`, `maxpool2`, `avgpool`, `dense` (key `units`), and
//! `residual` (two shape-preserving 3x3 convolutions on an identity
//! shortcut, optional `grid`). The optional `grid = K1xK2xK3` supplies the
//! mapping grid for filter counts outside the built-in table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fm_core::{FilterGrid, FilterShape, GradMode, Scalar};
use nn_engine::{ConvLayerParams, Dense, FilterSet, Layer, Network, ResidualBlock};
use planner::{Decision, LayerDesc, NetPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_raw, ConfigError, Parametrization, RawSection, SectionReader};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetDescription {
    /// Input dims `(channels, height, width)` of one sample.
    pub input: (usize, usize, usize),
    pub layers: Vec<NetLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetLayer {
    pub name: String,
    pub kind: NetLayerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetLayerKind {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        pad: usize,
        stride: usize,
        grid: Option<FilterGrid>,
    },
    Relu,
    MaxPool2,
    AvgPool,
    Dense {
        units: usize,
    },
    Residual {
        grid: Option<FilterGrid>,
    },
}

fn parse_dims_pair(value: &str) -> Result<(usize, usize), String> {
    if let Some((a, b)) = value.split_once('x') {
        let a = a
            .trim()
            .parse()
            .map_err(|_| format!("bad kernel `{value}`"))?;
        let b = b
            .trim()
            .parse()
            .map_err(|_| format!("bad kernel `{value}`"))?;
        Ok((a, b))
    } else {
        let k = value
            .trim()
            .parse()
            .map_err(|_| format!("bad kernel `{value}`"))?;
        Ok((k, k))
    }
}

pub fn parse_grid(value: &str) -> Result<FilterGrid, String> {
    let parts: Vec<&str> = value.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("bad grid `{value}` (expected K1xK2xK3)"));
    }
    let dims: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse()).collect();
    match dims {
        Ok(d) => Ok(FilterGrid::new(d[0], d[1], d[2])),
        Err(_) => Err(format!("bad grid `{value}` (expected K1xK2xK3)")),
    }
}

fn take_grid(
    reader: &mut SectionReader,
    line_hint: usize,
) -> Result<Option<FilterGrid>, ConfigError> {
    match reader.take("grid") {
        None => Ok(None),
        Some(entry) => parse_grid(&entry.value)
            .map(Some)
            .map_err(|msg| ConfigError::BadValue {
                line: if entry.line == 0 {
                    line_hint
                } else {
                    entry.line
                },
                key: "grid".into(),
                msg,
            }),
    }
}

fn parse_layer_section(section: &RawSection) -> Result<NetLayer, ConfigError> {
    let name = section
        .name
        .strip_prefix("layer.")
        .expect("checked by caller")
        .to_string();
    if name.is_empty() {
        return Err(ConfigError::Syntax {
            line: section.line,
            msg: "empty layer name".into(),
        });
    }
    let mut reader = SectionReader::new(Some(section));
    let kind_entry = reader.require("kind")?;
    let kind = match kind_entry.value.as_str() {
        "conv" => {
            let filters = reader
                .take_parsed::<usize>("filters")?
                .ok_or_else(|| ConfigError::MissingKey {
                    key: format!("layer.{name}.filters"),
                })?
                .0;
            let kernel_entry = reader.require("kernel")?;
            let kernel =
                parse_dims_pair(&kernel_entry.value).map_err(|msg| ConfigError::BadValue {
                    line: kernel_entry.line,
                    key: "kernel".into(),
                    msg,
                })?;
            let pad = reader.take_or("pad", 0usize)?;
            let stride = match reader.take_parsed::<usize>("stride")? {
                None => 1,
                Some((0, line)) => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: "stride".into(),
                        msg: "must be >= 1".into(),
                    })
                }
                Some((s, _)) => s,
            };
            let grid = take_grid(&mut reader, section.line)?;
            NetLayerKind::Conv {
                filters,
                kernel,
                pad,
                stride,
                grid,
            }
        }
        "relu" => NetLayerKind::Relu,
        "maxpool2" => NetLayerKind::MaxPool2,
        "avgpool" => NetLayerKind::AvgPool,
        "dense" => {
            let units = reader
                .take_parsed::<usize>("units")?
                .ok_or_else(|| ConfigError::MissingKey {
                    key: format!("layer.{name}.units"),
                })?
                .0;
            NetLayerKind::Dense { units }
        }
        "residual" => {
            let grid = take_grid(&mut reader, section.line)?;
            NetLayerKind::Residual { grid }
        }
        other => {
            return Err(ConfigError::BadValue {
                line: kind_entry.line,
                key: "kind".into(),
                msg: format!("unknown layer kind `{other}`"),
            })
        }
    };
    reader.finish()?;
    Ok(NetLayer { name, kind })
}

pub fn parse_net_str(text: &str) -> Result<NetDescription, ConfigError> {
    let raw = parse_raw(text)?;
    let mut input = None;
    let mut layers = Vec::new();
    for section in &raw.sections {
        if section.name == "input" {
            let mut reader = SectionReader::new(Some(section));
            let channels =
                reader
                    .require("channels")?
                    .value
                    .parse()
                    .map_err(|_| ConfigError::BadValue {
                        line: section.line,
                        key: "channels".into(),
                        msg: "expected a positive integer".into(),
                    })?;
            let height = reader
                .take_parsed::<usize>("height")?
                .ok_or_else(|| ConfigError::MissingKey {
                    key: "input.height".into(),
                })?
                .0;
            let width = reader
                .take_parsed::<usize>("width")?
                .ok_or_else(|| ConfigError::MissingKey {
                    key: "input.width".into(),
                })?
                .0;
            reader.finish()?;
            input = Some((channels, height, width));
        } else if section.name.starts_with("layer.") {
            layers.push(parse_layer_section(section)?);
        } else {
            return Err(ConfigError::UnknownSection {
                line: section.line,
                name: section.name.clone(),
            });
        }
    }
    let input = input.ok_or(ConfigError::MissingKey {
        key: "input".into(),
    })?;
    Ok(NetDescription { input, layers })
}

pub fn parse_net_file(path: &Path) -> Result<NetDescription, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_net_str(&text)
}

/// Normalized re-serialization; parsing it back yields an equal description.
/// Checkpoints embed this text so a model can be rebuilt without the
/// original file.
pub fn canonical_text(desc: &NetDescription) -> String {
    let mut out = String::new();
    let (c, h, w) = desc.input;
    let _ = writeln!(out, "[input]\nchannels = {c}\nheight = {h}\nwidth = {w}");
    for layer in &desc.layers {
        let _ = writeln!(out, "\n[layer.{}]", layer.name);
        match &layer.kind {
            NetLayerKind::Conv {
                filters,
                kernel,
                pad,
                stride,
                grid,
            } => {
                let _ = writeln!(
                    out,
                    "kind = conv\nfilters = {filters}\nkernel = {}x{}\npad = {pad}\nstride = {stride}",
                    kernel.0, kernel.1
                );
                if let Some(g) = grid {
                    let _ = writeln!(out, "grid = {}x{}x{}", g.k1, g.k2, g.k3);
                }
            }
            NetLayerKind::Relu => {
                let _ = writeln!(out, "kind = relu");
            }
            NetLayerKind::MaxPool2 => {
                let _ = writeln!(out, "kind = maxpool2");
            }
            NetLayerKind::AvgPool => {
                let _ = writeln!(out, "kind = avgpool");
            }
            NetLayerKind::Dense { units } => {
                let _ = writeln!(out, "kind = dense\nunits = {units}");
            }
            NetLayerKind::Residual { grid } => {
                let _ = writeln!(out, "kind = residual");
                if let Some(g) = grid {
                    let _ = writeln!(out, "grid = {}x{}x{}", g.k1, g.k2, g.k3);
                }
            }
        }
    }
    out
}

/// Shape of the data entering each layer, plus the final output shape.
fn propagate_shapes(desc: &NetDescription) -> Result<Vec<(usize, usize, usize)>, CliError> {
    let mut shapes = Vec::with_capacity(desc.layers.len() + 1);
    let (mut c, mut h, mut w) = desc.input;
    if c == 0 || h == 0 || w == 0 {
        return Err(CliError::Net {
            layer: "input".into(),
            msg: format!("input dims must be positive, got {c}x{h}x{w}"),
        });
    }
    shapes.push((c, h, w));
    for layer in &desc.layers {
        let fail = |msg: String| CliError::Net {
            layer: layer.name.clone(),
            msg,
        };
        match &layer.kind {
            NetLayerKind::Conv {
                filters,
                kernel,
                pad,
                stride,
                ..
            } => {
                if *filters == 0 {
                    return Err(fail("filter count must be >= 1".into()));
                }
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                if ph < kernel.0 || pw < kernel.1 {
                    return Err(fail(format!(
                        "kernel {}x{} does not fit a {h}x{w} input with pad {pad}",
                        kernel.0, kernel.1
                    )));
                }
                h = (ph - kernel.0) / stride + 1;
                w = (pw - kernel.1) / stride + 1;
                c = *filters;
            }
            NetLayerKind::Relu => {}
            NetLayerKind::MaxPool2 => {
                if h < 2 || w < 2 {
                    return Err(fail(format!("cannot pool a {h}x{w} input")));
                }
                h /= 2;
                w /= 2;
            }
            NetLayerKind::AvgPool => {
                h = 1;
                w = 1;
            }
            NetLayerKind::Dense { units } => {
                if *units == 0 {
                    return Err(fail("units must be >= 1".into()));
                }
                c = *units;
                h = 1;
                w = 1;
            }
            NetLayerKind::Residual { .. } => {
                // Shape preserved by construction; nothing changes.
            }
        }
        shapes.push((c, h, w));
    }
    Ok(shapes)
}

/// Flattens the description into planner layer descriptions (residual blocks
/// contribute their two convolutions) plus per-layer grid overrides.
pub fn layer_descs(
    desc: &NetDescription,
) -> Result<(Vec<LayerDesc>, BTreeMap<String, FilterGrid>), CliError> {
    let shapes = propagate_shapes(desc)?;
    let mut descs = Vec::new();
    let mut overrides = BTreeMap::new();
    for (layer, &(c, h, w)) in desc.layers.iter().zip(&shapes) {
        match &layer.kind {
            NetLayerKind::Conv {
                filters,
                kernel,
                grid,
                ..
            } => {
                descs.push(LayerDesc::conv(layer.name.clone(), *filters, *kernel, c));
                if let Some(g) = grid {
                    overrides.insert(layer.name.clone(), *g);
                }
            }
            NetLayerKind::Dense { units } => {
                descs.push(LayerDesc::dense(layer.name.clone(), c * h * w, *units));
            }
            NetLayerKind::Residual { grid } => {
                for sub in ["conv1", "conv2"] {
                    let name = format!("{}.{sub}", layer.name);
                    descs.push(LayerDesc::conv(name.clone(), c, (3, 3), c));
                    if let Some(g) = grid {
                        overrides.insert(name, *g);
                    }
                }
            }
            _ => {}
        }
    }
    Ok((descs, overrides))
}

/// Plans the description under the configured substitution rule.
pub fn plan(desc: &NetDescription) -> Result<NetPlan, CliError> {
    let (descs, overrides) = layer_descs(desc)?;
    Ok(planner::plan_network(&descs, &overrides)?)
}

fn tensor_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((ordinal + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Builds a trainable network from the description.
///
/// In `FilterMap` parametrization the network is planned first and every
/// mapped decision becomes a shared-map layer with the planned spec, so the
/// trainable parameter count equals the plan's `total_planned` by
/// construction. Baseline parametrization skips planning and gives every
/// convolution independent filters. Each tensor is initialized from its own
/// seeded stream, so twins share nothing but the seed.
pub fn build_network<S: Scalar>(
    desc: &NetDescription,
    parametrization: Parametrization,
    grad_mode: GradMode,
    seed: u64,
) -> Result<Network<S>, CliError> {
    let shapes = propagate_shapes(desc)?;
    let plan_by_name: BTreeMap<String, Decision> = match parametrization {
        Parametrization::FilterMap => plan(desc)?
            .layers
            .into_iter()
            .map(|lp| (lp.layer.name, lp.decision))
            .collect(),
        Parametrization::Baseline => BTreeMap::new(),
    };

    let mut ordinal = 0u64;
    let mut next_rng = || {
        let rng = tensor_rng(seed, ordinal);
        ordinal += 1;
        rng
    };

    let build_conv =
        |name: &str,
         filters: usize,
         kernel: (usize, usize),
         in_channels: usize,
         conv_stride: usize,
         padding: usize,
         rng: &mut ChaCha8Rng|
         -> Result<ConvLayerParams<S>, CliError> {
            match plan_by_name.get(name) {
                Some(Decision::FilterMapped { spec }) => Ok(
                    ConvLayerParams::filter_mapped_uniform(*spec, conv_stride, padding, rng)?,
                ),
                _ => Ok(ConvLayerParams::baseline(
                    FilterSet::init_uniform(
                        filters,
                        FilterShape::new(kernel.0, kernel.1, in_channels),
                        rng,
                    ),
                    conv_stride,
                    padding,
                )),
            }
        };

    let mut layers = Vec::with_capacity(desc.layers.len());
    for (layer, &(c, h, w)) in desc.layers.iter().zip(&shapes) {
        match &layer.kind {
            NetLayerKind::Conv {
                filters,
                kernel,
                pad,
                stride,
                ..
            } => {
                let params = build_conv(
                    &layer.name,
                    *filters,
                    *kernel,
                    c,
                    *stride,
                    *pad,
                    &mut next_rng(),
                )?;
                layers.push(Layer::Conv {
                    name: layer.name.clone(),
                    params,
                });
            }
            NetLayerKind::Relu => layers.push(Layer::Relu),
            NetLayerKind::MaxPool2 => layers.push(Layer::MaxPool2),
            NetLayerKind::AvgPool => layers.push(Layer::GlobalAvgPool),
            NetLayerKind::Dense { units } => {
                layers.push(Layer::Dense {
                    name: layer.name.clone(),
                    dense: Dense::init_uniform(c * h * w, *units, &mut next_rng()),
                });
            }
            NetLayerKind::Residual { .. } => {
                let conv1 = build_conv(
                    &format!("{}.conv1", layer.name),
                    c,
                    (3, 3),
                    c,
                    1,
                    1,
                    &mut next_rng(),
                )?;
                let conv2 = build_conv(
                    &format!("{}.conv2", layer.name),
                    c,
                    (3, 3),
                    c,
                    1,
                    1,
                    &mut next_rng(),
                )?;
                layers.push(Layer::Residual {
                    name: layer.name.clone(),
                    block: ResidualBlock { conv1, conv2 },
                });
            }
        }
    }
    Ok(Network::new(desc.input, layers, grad_mode)?)
}
