//! `vdn`: dataset generation, training, retrieval evaluation, score-map
//! export, view-quality analysis, and noise sweeps from one binary.
//!
//! Configuration can come from flags, a `--config` JSON file, or defaults —
//! flags win, file beats defaults — and every command echoes the resolved
//! `run_config.json` next to its artifacts. Usage errors exit 2, runtime
//! failures exit 1 with a diagnostic on stderr.

mod commands;
mod config;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shapegen::{ClutterTraining, ShapeCategory, Split};

use crate::config::{parse_ratio_spec, parse_size_spec, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "vdn",
    version,
    about = "Multi-view shape retrieval with learned view scores"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Seed: dataset generation for gen-data, training for train.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-view depth dataset archive.
    GenData {
        /// Comma-separated class names (default: all eight).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        classes: Option<Vec<String>>,
        #[arg(long)]
        train_per_class: Option<usize>,
        #[arg(long)]
        test_per_class: Option<usize>,
        /// Square view resolution in pixels.
        #[arg(long)]
        resolution: Option<usize>,
        /// Ring cameras; two polar views are always added.
        #[arg(long)]
        n_ring: Option<usize>,
        /// Bake an occluder of this relative size into training shapes.
        #[arg(long, value_name = "SIZE")]
        train_occluder: Option<f64>,
        /// Clutter this fraction of training views.
        #[arg(long, value_name = "FRACTION")]
        train_clutter: Option<f64>,
    },
    /// Train a model; writes model.vdnc and loss.csv.
    Train {
        /// Preset: vdn-channel, vdn-part, vdn-single, vdn-max, cnn-max, cnn-avg.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Weight of the contrastive term (0 disables it).
        #[arg(long)]
        contrastive_weight: Option<f64>,
        /// Backbone stage at which views aggregate.
        #[arg(long)]
        split_stage: Option<usize>,
    },
    /// Retrieval metrics on the test split; writes metrics.json and pr_curve.csv.
    Eval {
        #[arg(long, value_name = "PATH")]
        ckpt: Option<PathBuf>,
        /// Build descriptors from the first N views only.
        #[arg(long, value_name = "N")]
        views: Option<usize>,
    },
    /// Export per-view score heat maps and depth views as binary PGM.
    ScoreMaps {
        #[arg(long, value_name = "PATH")]
        ckpt: Option<PathBuf>,
        /// Split whose views are exported.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Cap on exported shapes (0 = all).
        #[arg(long, value_name = "N")]
        limit: Option<usize>,
    },
    /// Rank views by quality and score good/poor descriptor mixtures.
    ViewAnalysis {
        #[arg(long, value_name = "PATH")]
        ckpt: Option<PathBuf>,
        /// Views in each of the good and poor sets.
        #[arg(long, value_name = "K")]
        good_k: Option<usize>,
        /// Comma-separated good-view proportions in [0, 1].
        #[arg(long, value_delimiter = ',', value_name = "PROPS")]
        proportions: Option<Vec<f64>>,
    },
    /// Evaluate checkpoints across a noise sweep; writes tables.csv.
    NoiseSweep {
        /// Checkpoint to evaluate; repeat the flag for more architectures.
        #[arg(long = "ckpt", value_name = "PATH")]
        ckpts: Vec<PathBuf>,
        /// Occluder sizes: START:END:STEP or a single SIZE.
        #[arg(long, value_name = "SPEC")]
        occlusion: Option<String>,
        /// Comma-separated clutter ratios in [0, 1].
        #[arg(long, value_name = "RATIOS")]
        clutter: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data {
        rc.data = d.clone();
    }
    if let Some(o) = &cli.out {
        rc.out = o.clone();
    }
    match &cli.command {
        Command::GenData {
            classes,
            train_per_class,
            test_per_class,
            resolution,
            n_ring,
            train_occluder,
            train_clutter,
        } => {
            if let Some(s) = cli.seed {
                rc.seed = s;
            }
            if let Some(names) = classes {
                rc.dataset.classes = names
                    .iter()
                    .map(|n| {
                        ShapeCategory::from_name(n)
                            .ok_or_else(|| anyhow::anyhow!("unknown class {n:?}"))
                    })
                    .collect::<anyhow::Result<_>>()?;
            }
            if let Some(v) = train_per_class {
                rc.dataset.train_per_class = *v;
            }
            if let Some(v) = test_per_class {
                rc.dataset.test_per_class = *v;
            }
            if let Some(v) = resolution {
                rc.dataset.resolution = *v;
            }
            if let Some(v) = n_ring {
                rc.dataset.n_ring = *v;
            }
            if let Some(v) = train_occluder {
                rc.dataset.train_occluder_size = Some(*v);
            }
            if let Some(v) = train_clutter {
                rc.dataset.train_clutter =
                    Some(ClutterTraining { fraction: *v, ..ClutterTraining::default() });
            }
        }
        Command::Train { arch, iterations, contrastive_weight, split_stage } => {
            if let Some(s) = cli.seed {
                rc.train.seed = s;
            }
            if let Some(a) = arch {
                rc.network.apply_arch(a)?;
            }
            if let Some(v) = iterations {
                rc.train.iterations = *v;
            }
            if let Some(v) = contrastive_weight {
                rc.train.contrastive_weight = *v;
            }
            if let Some(v) = split_stage {
                rc.network.split_stage = *v;
            }
        }
        Command::Eval { ckpt, views } => {
            if let Some(c) = ckpt {
                rc.protocol.ckpts = vec![c.clone()];
            }
            if let Some(v) = views {
                rc.protocol.views = Some(*v);
            }
        }
        Command::ScoreMaps { ckpt, split, limit } => {
            if let Some(c) = ckpt {
                rc.protocol.ckpts = vec![c.clone()];
            }
            if let Some(s) = split {
                rc.protocol.split = (*s).into();
            }
            if let Some(l) = limit {
                rc.protocol.limit = *l;
            }
        }
        Command::ViewAnalysis { ckpt, good_k, proportions } => {
            if let Some(c) = ckpt {
                rc.protocol.ckpts = vec![c.clone()];
            }
            if let Some(k) = good_k {
                rc.protocol.good_k = Some(*k);
            }
            if let Some(p) = proportions {
                rc.protocol.proportions = p.clone();
            }
        }
        Command::NoiseSweep { ckpts, occlusion, clutter } => {
            if !ckpts.is_empty() {
                rc.protocol.ckpts = ckpts.clone();
            }
            match (occlusion, clutter) {
                (Some(_), Some(_)) => anyhow::bail!("choose one of --occlusion and --clutter"),
                (Some(spec), None) => {
                    rc.protocol.occlusion = Some(parse_size_spec(spec)?);
                    rc.protocol.clutter = None;
                }
                (None, Some(spec)) => {
                    rc.protocol.clutter = Some(parse_ratio_spec(spec)?);
                    rc.protocol.occlusion = None;
                }
                (None, None) => {}
            }
        }
    }
    Ok(rc)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut rc = resolve(&cli)?;
    match cli.command {
        Command::GenData { .. } => commands::gen_data(&rc),
        Command::Train { .. } => commands::train_cmd(&mut rc),
        Command::Eval { .. } => commands::eval_cmd(&mut rc),
        Command::ScoreMaps { .. } => commands::score_maps(&mut rc),
        Command::ViewAnalysis { .. } => commands::view_analysis(&mut rc),
        Command::NoiseSweep { .. } => commands::noise_sweep_cmd(&rc),
    }
}

fn main() -> ExitCode {
    // Clap exits 2 by itself on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
