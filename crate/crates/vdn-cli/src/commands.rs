//! One function per subcommand. Each resolves what the data/checkpoint
//! dictate (input resolution, class count, network shape), echoes the final
//! configuration, then does the work — so even a failed run records what it
//! attempted.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use shapegen::{build_dataset, read_dataset, write_dataset, DatasetManifest, DepthImage};
use vdn::data::{shape_views, split_indices, view_offsets};
use vdn::net::{score_block, view_leaf, NetBindings};
use vdn::{
    checkpoint_load, checkpoint_save, embed_test_split, evaluate_retrieval, noise_sweep,
    table_row, train, view_quality_analysis, write_loss_csv, write_metrics_json, write_pr_csv,
    write_tables_csv, Checkpoint, NetworkConfig, ProtocolMeta, ScoreUnitKind, SweepProtocol,
    TableRow,
};

use crate::config::RunConfig;
use crate::pgm::{
    depth_bytes, rasterize_channel, rasterize_part, rasterize_uniform, write_pgm,
};

pub fn gen_data(rc: &RunConfig) -> Result<()> {
    rc.echo()?;
    let (manifest, views) = build_dataset(&rc.dataset, rc.seed)?;
    write_dataset(&rc.out, &manifest, &views)?;
    println!(
        "wrote {} shapes / {} views to {}",
        manifest.shapes.len(),
        views.len(),
        rc.out.display()
    );
    Ok(())
}

pub fn train_cmd(rc: &mut RunConfig) -> Result<()> {
    let (manifest, views) = load_data(rc)?;
    // The data dictates input size and class count; everything else about
    // the network stays as configured.
    rc.network.resolution = manifest.resolution as usize;
    rc.network.classes = manifest.class_names.len();
    rc.echo()?;
    let outcome = train(&manifest, &views, &rc.network, &rc.train)?;
    let ckpt_path = rc.out.join("model.vdnc");
    checkpoint_save(
        &ckpt_path,
        &outcome.params,
        &rc.network,
        &rc.train,
        rc.train.iterations as u64,
    )?;
    write_loss_csv(&rc.out.join("loss.csv"), &outcome.log)?;
    let last = outcome.log.last();
    println!(
        "trained {} iterations (final loss {}) -> {}",
        rc.train.iterations,
        last.map_or_else(|| "n/a".into(), |r| format!("{:.4}", r.total)),
        ckpt_path.display()
    );
    Ok(())
}

pub fn eval_cmd(rc: &mut RunConfig) -> Result<()> {
    let (manifest, views) = load_data(rc)?;
    let ckpt = load_ckpt(rc)?;
    rc.echo()?;
    let subset: Option<Vec<usize>> = rc.protocol.views.map(|n| (0..n).collect());
    let entries =
        embed_test_split(&manifest, &views, &ckpt.params, &ckpt.network, subset.as_deref())?;
    let meta = ProtocolMeta {
        view_subset: subset.map(|s| s.iter().map(|&i| i as u32).collect()),
        ..ProtocolMeta::default()
    };
    let (report, curve) = evaluate_retrieval(&entries, &manifest.class_names, meta)?;
    write_metrics_json(&rc.out.join("metrics.json"), &report)?;
    write_pr_csv(&rc.out.join("pr_curve.csv"), &curve)?;
    println!(
        "MAP {:.4}  AUC {:.4}  F {:.4}  NDCG {:.4}  ({} queries, {} excluded)",
        report.map.micro,
        report.auc.micro,
        report.f_measure.micro,
        report.ndcg.micro,
        report.protocol.queries,
        report.protocol.excluded_queries
    );
    Ok(())
}

pub fn score_maps(rc: &mut RunConfig) -> Result<()> {
    let (manifest, views) = load_data(rc)?;
    let ckpt = load_ckpt(rc)?;
    if ckpt.network.score_unit == ScoreUnitKind::None {
        bail!("checkpoint {:?} has no score unit to visualize", rc.first_ckpt()?);
    }
    rc.echo()?;
    let offsets = view_offsets(&manifest, views.len())?;
    let indices = split_indices(&manifest, rc.protocol.split);
    let take = match rc.protocol.limit {
        0 => indices.len(),
        n => n.min(indices.len()),
    };
    let res = ckpt.network.resolution;
    let mut files = 0usize;
    for &si in &indices[..take] {
        let record = &manifest.shapes[si];
        let shape_imgs = shape_views(&manifest, &views, &offsets, si);
        for (v, img) in shape_imgs.iter().enumerate() {
            let pixels = score_map_pixels(&ckpt, img)?;
            let score_path = rc.out.join(format!("{:04}_{v:02}_score.pgm", record.id));
            write_pgm(&score_path, res, res, &pixels)?;
            let depth_path = rc.out.join(format!("{:04}_{v:02}_depth.pgm", record.id));
            write_pgm(&depth_path, res, res, &depth_bytes(img))?;
            files += 2;
        }
    }
    println!("wrote {files} PGM files to {}", rc.out.display());
    Ok(())
}

/// Runs just the score unit on one view and rasterizes its pre-broadcast
/// output at input resolution.
fn score_map_pixels(ckpt: &Checkpoint, img: &DepthImage) -> Result<Vec<u8>> {
    let cfg = &ckpt.network;
    let mut tape = vdn::net::Tape::new();
    let binds = NetBindings::bind_frozen(&mut tape, &ckpt.params)?;
    let leaf = view_leaf(&mut tape, cfg, img)?;
    let ids = score_block(&mut tape, cfg, &binds, leaf)?;
    let pre = tape.value(ids.pre);
    let res = cfg.resolution;
    Ok(match cfg.score_unit {
        ScoreUnitKind::Channel => rasterize_channel(pre.data(), res),
        ScoreUnitKind::Part => {
            let (h, w, _) = pre.dims3()?;
            rasterize_part(pre.data(), h, w, res)
        }
        ScoreUnitKind::Single => rasterize_uniform(pre.item(), res),
        ScoreUnitKind::None => unreachable!("rejected before dispatch"),
    })
}

pub fn view_analysis(rc: &mut RunConfig) -> Result<()> {
    let (manifest, views) = load_data(rc)?;
    let ckpt = load_ckpt(rc)?;
    let vps = manifest.views_per_shape();
    // Default to thirds: top third good, bottom third poor.
    let k = rc.protocol.good_k.unwrap_or((vps / 3).max(1));
    rc.protocol.good_k = Some(k);
    rc.echo()?;
    let report = view_quality_analysis(
        &manifest,
        &views,
        &ckpt.params,
        &ckpt.network,
        k,
        &rc.protocol.proportions,
    )?;
    let path = rc.out.join("view_quality.json");
    let mut text = serde_json::to_string_pretty(&report).context("encoding view report")?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    let mixtures: Vec<String> =
        report.mixtures.iter().map(|m| format!("{:.1}:{:.4}", m.proportion, m.map)).collect();
    println!(
        "all-view MAP {:.4}; good-proportion MAP {} -> {}",
        report.all_view_map,
        mixtures.join(" "),
        path.display()
    );
    Ok(())
}

pub fn noise_sweep_cmd(rc: &RunConfig) -> Result<()> {
    let (manifest, views) = load_data(rc)?;
    if rc.protocol.ckpts.is_empty() {
        bail!("no checkpoints given; pass --ckpt at least once");
    }
    let protocol = match (&rc.protocol.occlusion, &rc.protocol.clutter) {
        (Some(sizes), None) => SweepProtocol::Occlusion(sizes.clone()),
        (None, Some(ratios)) => SweepProtocol::Clutter(ratios.clone()),
        (Some(_), Some(_)) => bail!("choose one of --occlusion and --clutter"),
        (None, None) => bail!("nothing to sweep; pass --occlusion or --clutter"),
    };
    rc.echo()?;
    let mut rows: Vec<TableRow> = Vec::new();
    for path in &rc.protocol.ckpts {
        let ckpt = checkpoint_load(path)?;
        let arch = arch_label(&ckpt.network, path);
        for (level, report) in noise_sweep(&manifest, &views, &ckpt.params, &ckpt.network, &protocol)? {
            rows.push(table_row(&arch, level, &report));
        }
    }
    let table_path = rc.out.join("tables.csv");
    write_tables_csv(&table_path, &rows)?;
    println!("wrote {} rows to {}", rows.len(), table_path.display());
    Ok(())
}

/// Preset name when the checkpoint's unit/aggregation matches one, else the
/// checkpoint's file stem.
fn arch_label(cfg: &NetworkConfig, path: &Path) -> String {
    cfg.arch_name().map_or_else(
        || path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
        str::to_string,
    )
}

fn load_data(rc: &RunConfig) -> Result<(DatasetManifest, Vec<DepthImage>)> {
    read_dataset(&rc.data).with_context(|| format!("loading dataset from {}", rc.data.display()))
}

fn load_ckpt(rc: &mut RunConfig) -> Result<Checkpoint> {
    let path = rc.first_ckpt()?.to_path_buf();
    let ckpt = checkpoint_load(&path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    // Echo what the model actually is, so the run config is self-describing.
    rc.network = ckpt.network.clone();
    rc.train = ckpt.train.clone();
    Ok(ckpt)
}
