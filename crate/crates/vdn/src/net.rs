//! Forward graph: backbone, score units, aggregation, refinement head.
//!
//! Every function appends onto a caller-owned [`Tape`], so one batch shares
//! one tape and one reverse pass. Parameters enter through [`NetBindings`],
//! which binds each named tensor once per tape.

use std::collections::HashMap;

use autodiff::{ParamStore, Tensor};
use shapegen::DepthImage;

// Downstream graph builders need these names; every function here takes a
// caller-owned tape.
pub use autodiff::{Tape, TensorId};

use crate::config::{AggregationKind, NetworkConfig, ScoreUnitKind};
use crate::error::{Error, Result};

/// Named parameter ids on one tape.
pub struct NetBindings {
    ids: HashMap<String, TensorId>,
}

impl NetBindings {
    /// Binds every parameter with gradients enabled.
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut ids = HashMap::new();
        for name in names {
            let id = tape.bind_param(store, &name)?;
            ids.insert(name, id);
        }
        Ok(Self { ids })
    }

    /// Binds every parameter as a constant; reverse passes skip them.
    pub fn bind_frozen(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        let mut ids = HashMap::new();
        for name in names {
            let mut value = store.value(&name)?.clone();
            value.set_requires_grad(false);
            ids.insert(name, tape.leaf(value));
        }
        Ok(Self { ids })
    }

    fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("parameter {name:?} is not bound")))
    }
}

/// Places one depth view on the tape as a constant `[res, res, 1]` leaf.
pub fn view_leaf(tape: &mut Tape, cfg: &NetworkConfig, view: &DepthImage) -> Result<TensorId> {
    if view.width() != cfg.resolution || view.height() != cfg.resolution {
        return Err(Error::InvalidConfig(format!(
            "view is {}x{}, network expects {}x{}",
            view.width(),
            view.height(),
            cfg.resolution,
            cfg.resolution
        )));
    }
    let t = Tensor::new(
        vec![cfg.resolution, cfg.resolution, 1],
        view.depths().to_vec(),
    )?;
    Ok(tape.leaf(t))
}

fn conv_relu(
    tape: &mut Tape,
    binds: &NetBindings,
    name: &str,
    x: TensorId,
    stride: usize,
    pad: usize,
) -> Result<TensorId> {
    let w = binds.id(&format!("{name}.weight"))?;
    let b = binds.id(&format!("{name}.bias"))?;
    let y = tape.conv2d(x, w, b, stride, pad)?;
    Ok(tape.relu(y))
}

/// Stride-2 conv+relu stages up to the split; `[res, res, 1]` in,
/// `(h, w, c)` out.
pub fn forward_backbone(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    view: TensorId,
) -> Result<TensorId> {
    let shape = tape.value(view).shape().to_vec();
    if shape != [cfg.resolution, cfg.resolution, 1] {
        return Err(Error::ShapeMismatch {
            op: "forward_backbone",
            detail: format!("view shape {shape:?}, expected [{0}, {0}, 1]", cfg.resolution),
        });
    }
    let mut x = view;
    for i in 0..cfg.split_stage {
        x = conv_relu(tape, binds, &format!("backbone.{i}"), x, 2, 1)?;
    }
    Ok(x)
}

/// A score unit's output: the compact map before replication and the full
/// `(h, w, c)` block after it.
#[derive(Debug, Clone, Copy)]
pub struct ScoreIds {
    pub pre: TensorId,
    pub block: TensorId,
}

/// Channel-wise unit: conv stack + dense to a length-c vector, replicated
/// over every spatial position.
pub fn score_channelwise(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    view: TensorId,
) -> Result<ScoreIds> {
    let (h, w, _) = cfg.feature_grid();
    let mut x = view;
    for i in 0..cfg.score_conv_widths.len() {
        x = conv_relu(tape, binds, &format!("score.conv{i}"), x, 2, 1)?;
    }
    let wt = binds.id("score.fc.weight")?;
    let b = binds.id("score.fc.bias")?;
    let vec = tape.dense(x, wt, b)?;
    let pre = tape.sigmoid(vec);
    let block = tape.broadcast_channel_vector(pre, h, w)?;
    Ok(ScoreIds { pre, block })
}

/// Part-wise unit: conv stack to a `2h x 2w` map, a 2x2 stride-2 conv down
/// to `h x w x 1`, replicated over every channel.
pub fn score_partwise(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    view: TensorId,
) -> Result<ScoreIds> {
    let (_, _, c) = cfg.feature_grid();
    let mut x = view;
    for i in 0..cfg.part_conv_widths.len() {
        // The first split_stage - 1 stages downsample to the 2h x 2w grid.
        let stride = if i < cfg.split_stage - 1 { 2 } else { 1 };
        x = conv_relu(tape, binds, &format!("score.conv{i}"), x, stride, 1)?;
    }
    let wt = binds.id("score.map.weight")?;
    let b = binds.id("score.map.bias")?;
    let map = tape.conv2d(x, wt, b, 2, 0)?;
    let pre = tape.sigmoid(map);
    let block = tape.broadcast_spatial_map(pre, c)?;
    Ok(ScoreIds { pre, block })
}

/// Single-score unit: conv stack + dense to one logit, replicated over the
/// whole block.
pub fn score_single(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    view: TensorId,
) -> Result<ScoreIds> {
    let (h, w, c) = cfg.feature_grid();
    let mut x = view;
    for i in 0..cfg.score_conv_widths.len() {
        x = conv_relu(tape, binds, &format!("score.conv{i}"), x, 2, 1)?;
    }
    let wt = binds.id("score.fc.weight")?;
    let b = binds.id("score.fc.bias")?;
    let scalar = tape.dense(x, wt, b)?;
    let pre = tape.sigmoid(scalar);
    let block = tape.broadcast_scalar(pre, h, w, c)?;
    Ok(ScoreIds { pre, block })
}

/// Dispatches on the configured score unit.
pub fn score_block(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    view: TensorId,
) -> Result<ScoreIds> {
    match cfg.score_unit {
        ScoreUnitKind::Channel => score_channelwise(tape, cfg, binds, view),
        ScoreUnitKind::Part => score_partwise(tape, cfg, binds, view),
        ScoreUnitKind::Single => score_single(tape, cfg, binds, view),
        ScoreUnitKind::None => {
            Err(Error::InvalidConfig("configuration has no score unit".into()))
        }
    }
}

/// Reduces per-view blocks to one block. Scores are accepted exactly when
/// the kind is weighted; all blocks must share one shape.
pub fn aggregate(
    tape: &mut Tape,
    kind: AggregationKind,
    features: &[TensorId],
    scores: Option<&[TensorId]>,
) -> Result<TensorId> {
    if features.is_empty() {
        return Err(Error::InvalidConfig("aggregate needs at least one view".into()));
    }
    let shape = tape.value(features[0]).shape().to_vec();
    for &f in features {
        if tape.value(f).shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                detail: format!("{:?} vs {shape:?}", tape.value(f).shape()),
            });
        }
    }
    let scores = match (kind.weighted(), scores) {
        (true, Some(s)) if s.len() == features.len() => Some(s),
        (true, _) => {
            return Err(Error::InvalidConfig(format!(
                "aggregation {kind:?} needs one score block per view"
            )))
        }
        (false, Some(_)) => {
            return Err(Error::InvalidConfig(format!(
                "aggregation {kind:?} does not take scores"
            )))
        }
        (false, None) => None,
    };

    let terms: Vec<TensorId> = match scores {
        Some(scores) => features
            .iter()
            .zip(scores)
            .map(|(&f, &s)| tape.hadamard(s, f))
            .collect::<autodiff::Result<_>>()?,
        None => features.to_vec(),
    };
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = match kind {
            AggregationKind::WeightedSum | AggregationKind::Avg => tape.add(acc, t)?,
            AggregationKind::Max | AggregationKind::WeightedMax => tape.maximum(acc, t)?,
        };
    }
    if kind == AggregationKind::Avg {
        acc = tape.scale(acc, 1.0 / features.len() as f64);
    }
    Ok(acc)
}

/// Refinement head output. The normalized companion is absent only for a
/// zero descriptor, which cannot be normalized.
pub struct HeadOutputs {
    pub descriptor: TensorId,
    pub normalized: Option<TensorId>,
    pub logits: TensorId,
}

/// Remaining conv stages + global average pool to the descriptor, plus the
/// class logits.
pub fn forward_head(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    aggregated: TensorId,
) -> Result<HeadOutputs> {
    let (h, w, c) = cfg.feature_grid();
    if tape.value(aggregated).shape() != [h, w, c] {
        return Err(Error::ShapeMismatch {
            op: "forward_head",
            detail: format!(
                "aggregated block {:?}, expected [{h}, {w}, {c}]",
                tape.value(aggregated).shape()
            ),
        });
    }
    let mut x = aggregated;
    for j in 0..cfg.head_stages() {
        x = conv_relu(tape, binds, &format!("head.conv{j}"), x, 2, 1)?;
    }
    let descriptor = tape.global_avg_pool(x)?;
    let wt = binds.id("head.fc.weight")?;
    let b = binds.id("head.fc.bias")?;
    let logits = tape.dense(descriptor, wt, b)?;
    let normalized = match tape.l2_normalize(descriptor) {
        Ok(id) => Some(id),
        Err(autodiff::Error::DegenerateInput { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(HeadOutputs { descriptor, normalized, logits })
}

/// One shape's full forward pass.
pub struct ShapeOutputs {
    pub features: Vec<TensorId>,
    /// One entry per view; empty when the unit is `None`.
    pub scores: Vec<ScoreIds>,
    pub aggregated: TensorId,
    pub descriptor: TensorId,
    pub normalized: Option<TensorId>,
    pub logits: TensorId,
}

/// Backbone and score unit per view, aggregation, then the head.
pub fn shape_forward(
    tape: &mut Tape,
    cfg: &NetworkConfig,
    binds: &NetBindings,
    views: &[DepthImage],
) -> Result<ShapeOutputs> {
    if views.is_empty() {
        return Err(Error::InvalidConfig("shape_forward needs at least one view".into()));
    }
    let mut features = Vec::with_capacity(views.len());
    let mut scores = Vec::new();
    for view in views {
        let leaf = view_leaf(tape, cfg, view)?;
        features.push(forward_backbone(tape, cfg, binds, leaf)?);
        if cfg.score_unit != ScoreUnitKind::None {
            scores.push(score_block(tape, cfg, binds, leaf)?);
        }
    }
    let score_blocks: Vec<TensorId> = scores.iter().map(|s| s.block).collect();
    let aggregated = aggregate(
        tape,
        cfg.aggregation,
        &features,
        cfg.aggregation.weighted().then_some(score_blocks.as_slice()),
    )?;
    let head = forward_head(tape, cfg, binds, aggregated)?;
    Ok(ShapeOutputs {
        features,
        scores,
        aggregated,
        descriptor: head.descriptor,
        normalized: head.normalized,
        logits: head.logits,
    })
}

/// 8x8-input two-stage network small enough for exhaustive checks.
#[cfg(test)]
pub(crate) fn mini_cfg(unit: ScoreUnitKind, agg: AggregationKind) -> NetworkConfig {
    let cfg = NetworkConfig {
        resolution: 8,
        backbone_widths: vec![4, 6],
        split_stage: 2,
        descriptor_dim: 6,
        classes: 2,
        score_unit: unit,
        aggregation: agg,
        score_conv_widths: vec![4, 4, 4],
        part_conv_widths: vec![4, 4, 4],
    };
    cfg.validate().unwrap();
    cfg
}
