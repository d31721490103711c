//! Network and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreUnitKind {
    Channel,
    Part,
    Single,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    WeightedSum,
    Max,
    Avg,
    WeightedMax,
}

impl AggregationKind {
    /// Whether this kind consumes score blocks.
    pub fn weighted(self) -> bool {
        matches!(self, AggregationKind::WeightedSum | AggregationKind::WeightedMax)
    }
}

/// Named (score unit, aggregation) presets; one per benchmarked variant.
pub const ARCH_PRESETS: [(&str, ScoreUnitKind, AggregationKind); 6] = [
    ("vdn-channel", ScoreUnitKind::Channel, AggregationKind::WeightedSum),
    ("vdn-part", ScoreUnitKind::Part, AggregationKind::WeightedSum),
    ("vdn-single", ScoreUnitKind::Single, AggregationKind::WeightedSum),
    ("vdn-max", ScoreUnitKind::Channel, AggregationKind::WeightedMax),
    ("cnn-max", ScoreUnitKind::None, AggregationKind::Max),
    ("cnn-avg", ScoreUnitKind::None, AggregationKind::Avg),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Square input resolution.
    pub resolution: usize,
    /// Output channels of each stride-2 backbone stage.
    pub backbone_widths: Vec<usize>,
    /// Number of backbone stages before the aggregation point; the rest
    /// form the refinement head.
    pub split_stage: usize,
    /// Descriptor length; equals the final stage width.
    pub descriptor_dim: usize,
    pub classes: usize,
    pub score_unit: ScoreUnitKind,
    pub aggregation: AggregationKind,
    /// Conv widths of the channel-wise / single score stacks.
    pub score_conv_widths: Vec<usize>,
    /// Conv widths of the part-wise score stack.
    pub part_conv_widths: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            backbone_widths: vec![8, 16, 32, 64],
            split_stage: 3,
            descriptor_dim: 64,
            classes: 8,
            score_unit: ScoreUnitKind::Channel,
            aggregation: AggregationKind::WeightedSum,
            score_conv_widths: vec![8, 16, 32],
            part_conv_widths: vec![8, 8, 8],
        }
    }
}

impl NetworkConfig {
    /// Default configuration under a named preset.
    pub fn for_arch(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_arch(name)?;
        Ok(cfg)
    }

    /// Overwrites the score unit and aggregation from a preset name.
    pub fn apply_arch(&mut self, name: &str) -> Result<()> {
        let (_, unit, agg) = ARCH_PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {name:?}")))?;
        self.score_unit = *unit;
        self.aggregation = *agg;
        Ok(())
    }

    /// Preset name matching this (score unit, aggregation), if any.
    pub fn arch_name(&self) -> Option<&'static str> {
        ARCH_PRESETS
            .iter()
            .find(|(_, u, a)| *u == self.score_unit && *a == self.aggregation)
            .map(|(n, _, _)| *n)
    }

    /// Feature grid (h, w, c) at the aggregation point.
    pub fn feature_grid(&self) -> (usize, usize, usize) {
        let side = self.resolution >> self.split_stage;
        (side, side, self.backbone_widths[self.split_stage - 1])
    }

    /// Backbone stages past the split.
    pub fn head_stages(&self) -> usize {
        self.backbone_widths.len() - self.split_stage
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::InvalidConfig(d));
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return fail(format!("backbone widths must be nonzero, got {:?}", self.backbone_widths));
        }
        if self.split_stage == 0 || self.split_stage > self.backbone_widths.len() {
            return fail(format!(
                "split stage {} outside 1..={}",
                self.split_stage,
                self.backbone_widths.len()
            ));
        }
        // Every backbone stage halves the grid, head stages included.
        let stages = self.backbone_widths.len();
        if self.resolution == 0 || !self.resolution.is_multiple_of(1 << stages) {
            return fail(format!(
                "resolution {} is not a multiple of 2^{stages}",
                self.resolution
            ));
        }
        if self.descriptor_dim != *self.backbone_widths.last().expect("nonempty") {
            return fail(format!(
                "descriptor dim {} must equal the final stage width {}",
                self.descriptor_dim,
                self.backbone_widths.last().expect("nonempty")
            ));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        match self.score_unit {
            ScoreUnitKind::None => {
                if self.aggregation.weighted() {
                    return fail(format!(
                        "aggregation {:?} needs a score unit",
                        self.aggregation
                    ));
                }
            }
            ScoreUnitKind::Channel | ScoreUnitKind::Single => {
                let n = self.score_conv_widths.len();
                if n == 0 || self.score_conv_widths.contains(&0) {
                    return fail("score conv widths must be nonzero".into());
                }
                if !self.resolution.is_multiple_of(1 << n) {
                    return fail(format!(
                        "resolution {} is not a multiple of 2^{} (score stack)",
                        self.resolution, n
                    ));
                }
            }
            ScoreUnitKind::Part => {
                let n = self.part_conv_widths.len();
                if n == 0 || self.part_conv_widths.contains(&0) {
                    return fail("part conv widths must be nonzero".into());
                }
                if self.split_stage - 1 > n {
                    return fail(format!(
                        "part stack of {n} convs cannot downsample {} times",
                        self.split_stage - 1
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Contrastive margin on squared normalized distance.
    pub margin: f64,
    pub softmax_weight: f64,
    pub contrastive_weight: f64,
    /// Shapes per batch; always even, two consecutive shapes form a pair.
    pub shapes_per_batch: usize,
    pub positive_fraction: f64,
    pub plateau_window: usize,
    /// Relative undercut the latest window must achieve to avoid halving.
    pub plateau_threshold: f64,
    pub seed: u64,
}

/// The learning rate never halves below this.
pub const LR_FLOOR: f64 = 1e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            base_lr: 2e-3,
            momentum: 0.9,
            weight_decay: 2e-4,
            margin: 1.4,
            softmax_weight: 1.0,
            contrastive_weight: 1.0,
            shapes_per_batch: 8,
            positive_fraction: 0.5,
            plateau_window: 200,
            plateau_threshold: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Pair count M per batch.
    pub fn pairs_per_batch(&self) -> usize {
        self.shapes_per_batch / 2
    }

    /// Positive pairs per batch: ceil(M * fraction).
    pub fn positive_pairs(&self) -> usize {
        (self.pairs_per_batch() as f64 * self.positive_fraction).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::InvalidConfig(d));
        if self.shapes_per_batch < 2 || !self.shapes_per_batch.is_multiple_of(2) {
            return fail(format!("shapes per batch must be even and >= 2, got {}", self.shapes_per_batch));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return fail(format!("positive fraction {} outside [0, 1]", self.positive_fraction));
        }
        if self.margin <= 0.0 {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        if self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return fail(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.weight_decay < 0.0 || self.softmax_weight < 0.0 || self.contrastive_weight < 0.0 {
            return fail("weights and decay must be non-negative".into());
        }
        if self.plateau_window == 0 {
            return fail("plateau window must be positive".into());
        }
        if self.plateau_threshold < 0.0 {
            return fail("plateau threshold must be non-negative".into());
        }
        Ok(())
    }
}
