//! Run configuration: one JSON document that captures everything a command
//! needs, so the echoed `run_config.json` alone reproduces the run.
//!
//! Precedence is fixed: built-in defaults, then the `--config` file, then
//! command-line flags. Every field has a default, so a partial file is fine.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use shapegen::{DatasetConfig, Split};
use vdn::{NetworkConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset directory read by every command except `gen-data`.
    pub data: PathBuf,
    /// Output directory; `gen-data` writes the archive here.
    pub out: PathBuf,
    /// Dataset generation seed.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            seed: 7,
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            protocol: ProtocolOptions::default(),
        }
    }
}

/// Options for the evaluation-side commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolOptions {
    /// Checkpoints under evaluation; single-model commands use the first.
    pub ckpts: Vec<PathBuf>,
    /// Restrict descriptors to the first N views.
    pub views: Option<usize>,
    /// Occluder sizes for `noise-sweep`.
    pub occlusion: Option<Vec<f64>>,
    /// Clutter ratios for `noise-sweep`.
    pub clutter: Option<Vec<f64>>,
    /// Split whose views `score-maps` exports.
    pub split: Split,
    /// Cap on exported shapes; 0 means all.
    pub limit: usize,
    /// Views per good/poor set in `view-analysis`; derived from the
    /// dataset when absent.
    pub good_k: Option<usize>,
    /// Good-view mixture proportions for `view-analysis`.
    pub proportions: Vec<f64>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            ckpts: Vec::new(),
            views: None,
            occlusion: None,
            clutter: None,
            split: Split::Test,
            limit: 0,
            good_k: None,
            proportions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Writes the resolved configuration into the output directory,
    /// creating it if needed.
    pub fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join("run_config.json");
        let mut text = serde_json::to_string_pretty(self).context("encoding run config")?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// First checkpoint path, the one single-model commands operate on.
    pub fn first_ckpt(&self) -> Result<&Path> {
        match self.protocol.ckpts.first() {
            Some(p) => Ok(p),
            None => bail!("no checkpoint given; pass --ckpt or set protocol.ckpts"),
        }
    }
}

/// Kills float drift from repeated step addition so swept levels print as
/// the decimals the user typed.
fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Parses an occlusion sweep: either one size or `start:end:step`
/// (inclusive of both ends).
pub fn parse_size_spec(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let levels = match parts[..] {
        [one] => vec![one.parse::<f64>().with_context(|| format!("bad size {one:?}"))?],
        [a, b, step] => {
            let a: f64 = a.parse().with_context(|| format!("bad start {a:?}"))?;
            let b: f64 = b.parse().with_context(|| format!("bad end {b:?}"))?;
            let step: f64 = step.parse().with_context(|| format!("bad step {step:?}"))?;
            if step <= 0.0 || step.is_nan() || step.is_infinite() {
                bail!("step must be positive, got {step}");
            }
            if b < a {
                bail!("end {b} is below start {a}");
            }
            let mut out = Vec::new();
            let mut i = 0u32;
            loop {
                let level = snap(a + f64::from(i) * step);
                // A whisker of slack keeps the endpoint despite rounding.
                if level > b + step * 1e-6 {
                    break;
                }
                out.push(level);
                i += 1;
            }
            out
        }
        _ => bail!("expected SIZE or START:END:STEP, got {spec:?}"),
    };
    for &l in &levels {
        if !l.is_finite() || l < 0.0 {
            bail!("occluder size {l} must be non-negative");
        }
    }
    Ok(levels)
}

/// Parses comma-separated clutter ratios, each in [0, 1].
pub fn parse_ratio_spec(spec: &str) -> Result<Vec<f64>> {
    let ratios: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad ratio {s:?}")))
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        bail!("no ratios given");
    }
    for &r in &ratios {
        if !(0.0..=1.0).contains(&r) {
            bail!("clutter ratio {r} outside [0, 1]");
        }
    }
    Ok(ratios)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_the_default_config() {
        let rc: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(rc, RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_their_other_defaults() {
        let rc: RunConfig =
            serde_json::from_str(r#"{"seed": 3, "dataset": {"resolution": 16}}"#).unwrap();
        assert_eq!(rc.seed, 3);
        assert_eq!(rc.dataset.resolution, 16);
        assert_eq!(rc.dataset.train_per_class, DatasetConfig::default().train_per_class);
        assert_eq!(rc.network, NetworkConfig::default());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut rc = RunConfig::default();
        rc.protocol.ckpts = vec![PathBuf::from("r/model.vdnc")];
        rc.protocol.occlusion = Some(vec![0.3, 0.6]);
        let text = serde_json::to_string(&rc).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rc);
    }

    #[test]
    fn size_ranges_hit_both_endpoints_with_clean_decimals() {
        assert_eq!(parse_size_spec("0.3:0.9:0.3").unwrap(), vec![0.3, 0.6, 0.9]);
        assert_eq!(parse_size_spec("0.3:2.1:0.3").unwrap().len(), 7);
        assert_eq!(parse_size_spec("0.7").unwrap(), vec![0.7]);
        assert_eq!(parse_size_spec("1:1:1").unwrap(), vec![1.0]);
    }

    #[test]
    fn malformed_size_specs_are_rejected() {
        for bad in ["", "a", "1:2", "1:2:0", "1:2:-1", "2:1:0.5", "1:2:3:4"] {
            assert!(parse_size_spec(bad).is_err(), "{bad:?} should fail");
        }
        assert!(parse_size_spec("-0.5").is_err());
    }

    #[test]
    fn ratio_lists_parse_and_validate() {
        assert_eq!(parse_ratio_spec("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_ratio_spec("0.25").unwrap(), vec![0.25]);
        for bad in ["", "x", "0,,1", "1.5", "-0.1"] {
            assert!(parse_ratio_spec(bad).is_err(), "{bad:?} should fail");
        }
    }
}
