//! Turns a declarative description of a baseline network into a compact-net
//! plan: every 3x3 convolution layer is re-parametrized as a shared filter
//! map (grid chosen by filter count, spatial extraction strides 2x2, channel
//! stride `c / k3`), everything else keeps its independent weights. The plan
//! carries exact parameter counts and ratios per layer and for the model.

use std::collections::BTreeMap;

use fm_core::{ExtractionStrides, FilterGrid, FilterMapSpec, FilterShape, Rational, SpecError};
use thiserror::Error;

/// Spatial extraction strides used for every mapped layer.
pub const DEFAULT_SPATIAL_STRIDES: (usize, usize) = (2, 2);

/// One trainable layer of the source network, as the planner sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        /// Output filter count K.
        filters: usize,
        /// Spatial kernel size `(s1, s2)`.
        spatial: (usize, usize),
        in_channels: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Anything else with an externally known parameter count.
    Other {
        params: u64,
    },
}

impl LayerDesc {
    pub fn conv(
        name: impl Into<String>,
        filters: usize,
        spatial: (usize, usize),
        in_channels: usize,
    ) -> Self {
        LayerDesc {
            name: name.into(),
            kind: LayerKind::Conv {
                filters,
                spatial,
                in_channels,
            },
        }
    }

    pub fn dense(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        LayerDesc {
            name: name.into(),
            kind: LayerKind::Dense { inputs, outputs },
        }
    }

    /// Baseline trainable element count: `K*s1*s2*c` for a bias-free
    /// convolution, `in*out + out` for a dense layer with bias.
    pub fn baseline_params(&self) -> u64 {
        match &self.kind {
            LayerKind::Conv {
                filters,
                spatial,
                in_channels,
            } => (*filters * spatial.0 * spatial.1 * in_channels) as u64,
            LayerKind::Dense { inputs, outputs } => (inputs * outputs + outputs) as u64,
            LayerKind::Other { params } => *params,
        }
    }
}

/// Per-layer outcome of planning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    FilterMapped { spec: FilterMapSpec },
    KeptBaseline { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub layer: LayerDesc,
    pub decision: Decision,
    pub planned_params: u64,
    /// baseline / planned, exactly.
    pub ratio: Rational,
}

impl LayerPlan {
    pub fn baseline_params(&self) -> u64 {
        self.layer.baseline_params()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetPlan {
    pub layers: Vec<LayerPlan>,
    pub total_baseline: u64,
    pub total_planned: u64,
    /// total_baseline / total_planned, exactly.
    pub model_ratio: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no mapping grid on record for {count} filters; supply an explicit grid")]
    UnknownFilterCount { count: usize },
    #[error("override grid {k1}x{k2}x{k3} yields {product} filters, layer has {count}",
            k1 = .grid.k1, k2 = .grid.k2, k3 = .grid.k3, product = .grid.count())]
    BadOverride { grid: FilterGrid, count: usize },
    #[error("{channels} input channels not divisible by k3 = {k3}")]
    ChannelNotDivisible { channels: usize, k3: usize },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetPlanError {
    #[error("cannot plan an empty network")]
    EmptyNetwork,
    #[error("layer `{name}`: {source}")]
    Layer { name: String, source: PlanError },
}

/// Grid `(k1, k2, k3)` for the tabulated filter counts. Any other count must
/// come with an explicit user-supplied grid; nothing is invented.
pub fn grid_for_filter_count(count: usize) -> Result<FilterGrid, PlanError> {
    let (k1, k2, k3) = match count {
        12 => (2, 3, 2),
        32 => (4, 4, 2),
        64 => (4, 4, 4),
        128 => (8, 4, 4),
        256 => (8, 8, 4),
        512 => (8, 8, 8),
        _ => return Err(PlanError::UnknownFilterCount { count }),
    };
    Ok(FilterGrid::new(k1, k2, k3))
}

fn resolve_grid(count: usize, grid_override: Option<FilterGrid>) -> Result<FilterGrid, PlanError> {
    match grid_override {
        Some(grid) => {
            if grid.count() != count {
                return Err(PlanError::BadOverride { grid, count });
            }
            Ok(grid)
        }
        None => grid_for_filter_count(count),
    }
}

/// Plans one layer. Only 3x3 convolutions are mapped; 1x1 convolutions,
/// other kernel sizes, dense layers, and opaque layers keep their baseline
/// parametrization. The channel extraction stride is forced to `c / k3`.
pub fn plan_layer(
    layer: &LayerDesc,
    spatial_strides: (usize, usize),
    grid_override: Option<FilterGrid>,
) -> Result<LayerPlan, PlanError> {
    let baseline = layer.baseline_params();
    let kept = |reason: &str| LayerPlan {
        layer: layer.clone(),
        decision: Decision::KeptBaseline {
            reason: reason.to_string(),
        },
        planned_params: baseline,
        ratio: Rational::ONE,
    };
    match &layer.kind {
        LayerKind::Conv {
            filters,
            spatial,
            in_channels,
        } => {
            if *spatial == (1, 1) {
                return Ok(kept("1x1 excluded"));
            }
            if *spatial != (3, 3) {
                return Ok(kept("non-3x3 kernel"));
            }
            let grid = resolve_grid(*filters, grid_override)?;
            if in_channels % grid.k3 != 0 {
                return Err(PlanError::ChannelNotDivisible {
                    channels: *in_channels,
                    k3: grid.k3,
                });
            }
            let spec = FilterMapSpec::new(
                FilterShape::new(spatial.0, spatial.1, *in_channels),
                grid,
                ExtractionStrides::new(spatial_strides.0, spatial_strides.1, in_channels / grid.k3),
            )?;
            let planned = spec.map_len() as u64;
            Ok(LayerPlan {
                layer: layer.clone(),
                decision: Decision::FilterMapped { spec },
                planned_params: planned,
                ratio: Rational::new(baseline, planned),
            })
        }
        LayerKind::Dense { .. } => Ok(kept("dense layer")),
        LayerKind::Other { .. } => Ok(kept("opaque layer")),
    }
}

/// Plans a whole network with the default spatial strides. `overrides` maps a
/// layer name to an explicit grid for filter counts outside the table.
pub fn plan_network(
    layers: &[LayerDesc],
    overrides: &BTreeMap<String, FilterGrid>,
) -> Result<NetPlan, NetPlanError> {
    if layers.is_empty() {
        return Err(NetPlanError::EmptyNetwork);
    }
    let mut plans = Vec::with_capacity(layers.len());
    let mut total_baseline = 0u64;
    let mut total_planned = 0u64;
    for layer in layers {
        let plan = plan_layer(
            layer,
            DEFAULT_SPATIAL_STRIDES,
            overrides.get(&layer.name).copied(),
        )
        .map_err(|source| NetPlanError::Layer {
            name: layer.name.clone(),
            source,
        })?;
        total_baseline += plan.baseline_params();
        total_planned += plan.planned_params;
        plans.push(plan);
    }
    Ok(NetPlan {
        layers: plans,
        total_baseline,
        total_planned,
        model_ratio: Rational::new(total_baseline, total_planned),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "structured" => Ok(ReportFormat::Structured),
            other => Err(format!(
                "unknown format `{other}` (expected `text` or `structured`)"
            )),
        }
    }
}

fn kind_str(kind: &LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv { .. } => "conv",
        LayerKind::Dense { .. } => "dense",
        LayerKind::Other { .. } => "other",
    }
}

fn decision_str(decision: &Decision) -> String {
    match decision {
        Decision::FilterMapped { spec } => format!(
            "filter-map grid {}x{}x{} strides {}x{}x{}",
            spec.grid.k1,
            spec.grid.k2,
            spec.grid.k3,
            spec.strides.x,
            spec.strides.y,
            spec.strides.z
        ),
        Decision::KeptBaseline { reason } => format!("baseline ({reason})"),
    }
}

/// Renders a plan as a stable, diff-friendly report.
///
/// The text format is one line per layer plus a model total; the structured
/// format is tab-separated `key=value` records, one per line, ending with a
/// `layer=model` record.
pub fn render_plan_report(plan: &NetPlan, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            for lp in &plan.layers {
                out.push_str(&format!(
                    "{}: {} -> {}, baseline {}, planned {}, ratio {}\n",
                    lp.layer.name,
                    kind_str(&lp.layer.kind),
                    decision_str(&lp.decision),
                    lp.baseline_params(),
                    lp.planned_params,
                    lp.ratio
                ));
            }
            out.push_str(&format!(
                "model: baseline {}, planned {}, ratio {}\n",
                plan.total_baseline, plan.total_planned, plan.model_ratio
            ));
        }
        ReportFormat::Structured => {
            for lp in &plan.layers {
                let decision = match &lp.decision {
                    Decision::FilterMapped { .. } => "filter-map".to_string(),
                    Decision::KeptBaseline { reason } => format!("baseline:{reason}"),
                };
                out.push_str(&format!(
                    "layer={}\tkind={}\tdecision={}\tbaseline={}\tplanned={}\tratio={}\n",
                    lp.layer.name,
                    kind_str(&lp.layer.kind),
                    decision,
                    lp.baseline_params(),
                    lp.planned_params,
                    lp.ratio
                ));
            }
            out.push_str(&format!(
                "layer=model\tbaseline={}\tplanned={}\tratio={}\n",
                plan.total_baseline, plan.total_planned, plan.model_ratio
            ));
        }
    }
    out
}
