//! Parameter layout and initialization.
//!
//! The layout is a pure function of the configuration; its order fixes both
//! parameter registration and checkpoint serialization. Weights draw from
//! He-uniform (limit sqrt(6 / fan_in)), biases start at zero and consume no
//! randomness.

use autodiff::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapegen::seeds::{derive_seed, SeedDomain};

use crate::config::{NetworkConfig, ScoreUnitKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Fan-in for weight draws; absent for zero-initialized biases.
    pub fan_in: Option<usize>,
}

impl ParamSpec {
    fn conv(name: String, kh: usize, kw: usize, cin: usize, cout: usize) -> [Self; 2] {
        [
            Self {
                name: format!("{name}.weight"),
                shape: vec![kh, kw, cin, cout],
                fan_in: Some(kh * kw * cin),
            },
            Self { name: format!("{name}.bias"), shape: vec![cout], fan_in: None },
        ]
    }

    fn dense(name: String, input: usize, output: usize) -> [Self; 2] {
        [
            Self {
                name: format!("{name}.weight"),
                shape: vec![input, output],
                fan_in: Some(input),
            },
            Self { name: format!("{name}.bias"), shape: vec![output], fan_in: None },
        ]
    }
}

/// Every parameter of the configured network, in registration order.
pub fn param_layout(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = 1;
    for (i, &cout) in cfg.backbone_widths[..cfg.split_stage].iter().enumerate() {
        specs.extend(ParamSpec::conv(format!("backbone.{i}"), 3, 3, cin, cout));
        cin = cout;
    }

    let c = cfg.feature_grid().2;
    match cfg.score_unit {
        ScoreUnitKind::Channel | ScoreUnitKind::Single => {
            let mut sin = 1;
            for (i, &sout) in cfg.score_conv_widths.iter().enumerate() {
                specs.extend(ParamSpec::conv(format!("score.conv{i}"), 3, 3, sin, sout));
                sin = sout;
            }
            let side = cfg.resolution >> cfg.score_conv_widths.len();
            let flat = side * side * sin;
            let out = if cfg.score_unit == ScoreUnitKind::Channel { c } else { 1 };
            specs.extend(ParamSpec::dense("score.fc".into(), flat, out));
        }
        ScoreUnitKind::Part => {
            let mut sin = 1;
            for (i, &sout) in cfg.part_conv_widths.iter().enumerate() {
                specs.extend(ParamSpec::conv(format!("score.conv{i}"), 3, 3, sin, sout));
                sin = sout;
            }
            // 2x2 stride-2 reduction from the 2h x 2w map to h x w.
            specs.extend(ParamSpec::conv("score.map".into(), 2, 2, sin, 1));
        }
        ScoreUnitKind::None => {}
    }

    let mut hin = c;
    for (j, &hout) in cfg.backbone_widths[cfg.split_stage..].iter().enumerate() {
        specs.extend(ParamSpec::conv(format!("head.conv{j}"), 3, 3, hin, hout));
        hin = hout;
    }
    specs.extend(ParamSpec::dense("head.fc".into(), cfg.descriptor_dim, cfg.classes));
    specs
}

/// Fresh parameters for `cfg`, seeded so identical inputs give identical
/// stores.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedDomain::Init, &[]));
    let mut store = ParamStore::new();
    for spec in param_layout(cfg) {
        let len: usize = spec.shape.iter().product();
        let tensor = match spec.fan_in {
            Some(fan_in) => {
                let limit = (6.0 / fan_in as f64).sqrt();
                let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
                Tensor::new(spec.shape, data)?
            }
            None => Tensor::zeros(spec.shape),
        };
        store.register(&spec.name, tensor)?;
    }
    Ok(store)
}
