//! Retrieval evaluation: cosine ranking over shape descriptors, MAP / PR /
//! F / NDCG with micro, macro, and per-class aggregation, view-quality
//! analysis, and noise sweeps over occlusion size and clutter ratio.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use autodiff::{ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shapegen::{
    derive_seed, inject_clutter, ClutterNoise, DatasetManifest, DepthImage, NoiseSpec, SeedDomain,
    Split,
};

use crate::config::NetworkConfig;
use crate::data::{shape_views, split_indices, view_offsets};
use crate::error::{Error, Result};
use crate::net::{forward_backbone, shape_forward, view_leaf, NetBindings};

/// Cosine similarity; both vectors must be nonzero and the same length.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// One shape in the retrieval gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: u32,
    /// Index into the class-name list.
    pub label: usize,
    pub subcategory: u32,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub id: u32,
    pub similarity: f64,
    /// 3 = category and subcategory match, 1 = category only, 0 = neither.
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: u32,
    /// Every non-query gallery entry, most similar first; equal similarity
    /// breaks toward the smaller id.
    pub items: Vec<RankedItem>,
}

/// Ranks the whole gallery against one query, which is excluded from its
/// own result list.
pub fn rank_gallery(query: &GalleryEntry, gallery: &[GalleryEntry]) -> Result<RankedList> {
    let mut items = Vec::with_capacity(gallery.len().saturating_sub(1));
    for entry in gallery {
        if entry.id == query.id {
            continue;
        }
        let grade = if entry.label == query.label {
            if entry.subcategory == query.subcategory {
                3
            } else {
                1
            }
        } else {
            0
        };
        items.push(RankedItem {
            id: entry.id,
            similarity: cosine_similarity(&query.descriptor, &entry.descriptor)?,
            grade,
        });
    }
    if items.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "gallery holds nothing to rank against query {}",
            query.id
        )));
    }
    items.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
    Ok(RankedList { query: query.id, items })
}

fn relevant_count(list: &RankedList) -> usize {
    list.items.iter().filter(|i| i.grade > 0).count()
}

/// Mean of precision at each relevant rank; `None` when the list holds no
/// relevant item.
pub fn average_precision(list: &RankedList) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in list.items.iter().enumerate() {
        if item.grade > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Precision/recall at every cutoff, anchored at `(0, p1)` so a perfect
/// ranking closes an area of exactly 1.
fn pr_points(list: &RankedList) -> Option<Vec<(f64, f64)>> {
    let relevant = relevant_count(list);
    if relevant == 0 {
        return None;
    }
    let mut points = Vec::with_capacity(list.items.len() + 1);
    let mut hits = 0usize;
    for (i, item) in list.items.iter().enumerate() {
        if item.grade > 0 {
            hits += 1;
        }
        points.push((hits as f64 / relevant as f64, hits as f64 / (i + 1) as f64));
    }
    let first = points[0].1;
    points.insert(0, (0.0, first));
    Some(points)
}

/// Trapezoidal area under one query's precision-recall curve.
pub fn pr_auc(list: &RankedList) -> Option<f64> {
    let points = pr_points(list)?;
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (r0, p0) = pair[0];
        let (r1, p1) = pair[1];
        area += (r1 - r0) * (p0 + p1) / 2.0;
    }
    Some(area)
}

/// F1 at cutoff `|relevant|`, where precision and recall coincide.
pub fn f_measure(list: &RankedList) -> Option<f64> {
    let relevant = relevant_count(list);
    if relevant == 0 {
        return None;
    }
    let hits = list.items[..relevant.min(list.items.len())]
        .iter()
        .filter(|i| i.grade > 0)
        .count();
    let p = hits as f64 / relevant as f64;
    // P == R at this cutoff, so F collapses to the same ratio.
    Some(if hits == 0 { 0.0 } else { 2.0 * p * p / (p + p) })
}

/// Graded NDCG with discount `log2(rank + 1)`; `None` when every grade is
/// zero.
pub fn ndcg(list: &RankedList) -> Option<f64> {
    let dcg: f64 = list
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| item.grade as f64 / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = list.items.iter().map(|i| i.grade).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .enumerate()
        .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    (idcg > 0.0).then(|| dcg / idcg)
}

/// Recall levels of the averaged precision-recall curve: 1/20 .. 20/20.
pub fn recall_levels() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// Interpolated precision at `level`: the best precision at any recall at
/// or past it.
fn interpolated_precision(points: &[(f64, f64)], level: f64) -> f64 {
    points
        .iter()
        .filter(|(r, _)| *r >= level)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Micro (per query), macro (per class), and per-class means of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
    /// Classes with at least one scored query.
    pub per_class: BTreeMap<String, f64>,
}

fn aggregate_values(values: &[(usize, f64)], class_names: &[String]) -> MetricAggregate {
    let micro = values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64;
    let mut per_class = BTreeMap::new();
    for (class, name) in class_names.iter().enumerate() {
        let of_class: Vec<f64> =
            values.iter().filter(|(c, _)| *c == class).map(|(_, v)| *v).collect();
        if !of_class.is_empty() {
            per_class.insert(name.clone(), of_class.iter().sum::<f64>() / of_class.len() as f64);
        }
    }
    let macro_ = per_class.values().sum::<f64>() / per_class.len() as f64;
    MetricAggregate { micro, macro_, per_class }
}

/// Evaluation protocol details carried alongside the metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProtocolMeta {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub occlusion_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clutter_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub view_subset: Option<Vec<u32>>,
    /// Queries that contributed to the averages.
    pub queries: u32,
    /// Queries dropped for having no relevant gallery item.
    pub excluded_queries: u32,
    pub f_cutoff: String,
    pub ndcg_grading: String,
}

pub const F_CUTOFF_NOTE: &str = "relevant-count";
pub const NDCG_GRADING_NOTE: &str = "3=category+subcategory, 1=category, 0=none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: MetricAggregate,
    pub auc: MetricAggregate,
    pub f_measure: MetricAggregate,
    pub ndcg: MetricAggregate,
    pub protocol: ProtocolMeta,
}

/// Runs every gallery entry as a query against the rest. Queries with no
/// relevant counterpart are excluded from the averages and counted in the
/// metadata; the averaged curve interpolates precision at fixed recall
/// levels.
pub fn evaluate_retrieval(
    entries: &[GalleryEntry],
    class_names: &[String],
    mut meta: ProtocolMeta,
) -> Result<(MetricsReport, Vec<PrPoint>)> {
    let mut map = Vec::new();
    let mut auc = Vec::new();
    let mut f = Vec::new();
    let mut ndcg_values = Vec::new();
    let levels = recall_levels();
    let mut curve_sums = vec![0.0; levels.len()];
    let mut excluded = 0u32;
    for query in entries {
        if query.label >= class_names.len() {
            return Err(Error::InvalidConfig(format!(
                "entry {} has label {} outside the {} classes",
                query.id,
                query.label,
                class_names.len()
            )));
        }
        let list = rank_gallery(query, entries)?;
        match (average_precision(&list), pr_auc(&list), f_measure(&list), ndcg(&list)) {
            (Some(ap), Some(area), Some(fv), Some(nv)) => {
                map.push((query.label, ap));
                auc.push((query.label, area));
                f.push((query.label, fv));
                ndcg_values.push((query.label, nv));
                let points = pr_points(&list).expect("relevant items exist");
                for (i, &level) in levels.iter().enumerate() {
                    curve_sums[i] += interpolated_precision(&points, level);
                }
            }
            _ => excluded += 1,
        }
    }
    if map.is_empty() {
        return Err(Error::DegenerateInput(
            "every query lacks a relevant gallery item".into(),
        ));
    }
    let scored = map.len() as f64;
    let curve = levels
        .iter()
        .zip(&curve_sums)
        .map(|(&recall, &sum)| PrPoint { recall, precision: sum / scored })
        .collect();
    meta.queries = map.len() as u32;
    meta.excluded_queries = excluded;
    meta.f_cutoff = F_CUTOFF_NOTE.to_string();
    meta.ndcg_grading = NDCG_GRADING_NOTE.to_string();
    let report = MetricsReport {
        map: aggregate_values(&map, class_names),
        auc: aggregate_values(&auc, class_names),
        f_measure: aggregate_values(&f, class_names),
        ndcg: aggregate_values(&ndcg_values, class_names),
        protocol: meta,
    };
    Ok((report, curve))
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_metrics_json(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path.to_path_buf(), detail: e.to_string() })
}

/// Writes the averaged curve as CSV: `recall,precision`.
pub fn write_pr_csv(path: &Path, curve: &[PrPoint]) -> Result<()> {
    let mut out = String::from("recall,precision\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Full-network shape descriptor from a frozen parameter store.
pub fn shape_descriptor(
    params: &ParamStore,
    cfg: &NetworkConfig,
    views: &[DepthImage],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let binds = NetBindings::bind_frozen(&mut tape, params)?;
    let out = shape_forward(&mut tape, cfg, &binds, views)?;
    Ok(tape.value(out.descriptor).data().to_vec())
}

fn embed_with<F>(
    manifest: &DatasetManifest,
    params: &ParamStore,
    cfg: &NetworkConfig,
    indices: &[usize],
    mut views_for: F,
) -> Result<Vec<GalleryEntry>>
where
    F: FnMut(usize) -> Result<Vec<DepthImage>>,
{
    indices
        .iter()
        .map(|&idx| {
            let rec = &manifest.shapes[idx];
            Ok(GalleryEntry {
                id: rec.id,
                label: manifest.label_of(rec)?,
                subcategory: rec.subcategory,
                descriptor: shape_descriptor(params, cfg, &views_for(idx)?)?,
            })
        })
        .collect()
}

/// Embeds the test split from its stored views, optionally restricted to a
/// subset of view indices.
pub fn embed_test_split(
    manifest: &DatasetManifest,
    views: &[DepthImage],
    params: &ParamStore,
    cfg: &NetworkConfig,
    view_subset: Option<&[usize]>,
) -> Result<Vec<GalleryEntry>> {
    let offsets = view_offsets(manifest, views.len())?;
    let vps = manifest.views_per_shape();
    if let Some(subset) = view_subset {
        if subset.is_empty() {
            return Err(Error::InvalidConfig("empty view subset".into()));
        }
        let mut seen = vec![false; vps];
        for &v in subset {
            if v >= vps {
                return Err(Error::InvalidConfig(format!(
                    "view {v} outside the {vps} views per shape"
                )));
            }
            if seen[v] {
                return Err(Error::InvalidConfig(format!("view {v} repeated in subset")));
            }
            seen[v] = true;
        }
    }
    let indices = split_indices(manifest, Split::Test);
    embed_with(manifest, params, cfg, &indices, |idx| {
        let all = shape_views(manifest, views, &offsets, idx);
        Ok(match view_subset {
            Some(subset) => subset.iter().map(|&v| all[v].clone()).collect(),
            None => all.to_vec(),
        })
    })
}

/// Per-view pooled backbone descriptors for one shape; the score units and
/// head play no part so view quality is judged on raw features.
fn view_descriptors(
    params: &ParamStore,
    cfg: &NetworkConfig,
    views: &[DepthImage],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let binds = NetBindings::bind_frozen(&mut tape, params)?;
    views
        .iter()
        .map(|view| {
            let leaf = view_leaf(&mut tape, cfg, view)?;
            let features = forward_backbone(&mut tape, cfg, &binds, leaf)?;
            let pooled = tape.global_avg_pool(features)?;
            Ok(tape.value(pooled).data().to_vec())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQualityRanking {
    pub shape_id: u32,
    /// Mean cosine similarity of each view's features to its siblings';
    /// views with degenerate features score zero.
    pub sibling_similarity: Vec<f64>,
    /// Top-k view indices, best first.
    pub good: Vec<u32>,
    /// Bottom-k view indices, worst first.
    pub poor: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePoint {
    /// Fraction of the k views drawn from the good set.
    pub proportion: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQualityReport {
    pub k: usize,
    pub rankings: Vec<ViewQualityRanking>,
    pub mixtures: Vec<MixturePoint>,
    /// Retrieval MAP with every view pooled, same descriptor protocol.
    pub all_view_map: f64,
}

/// Ranks each test shape's views by mean sibling similarity of pooled
/// backbone features, then reports retrieval MAP when shape descriptors
/// average k views mixed between the good and poor sets.
pub fn view_quality_analysis(
    manifest: &DatasetManifest,
    views: &[DepthImage],
    params: &ParamStore,
    cfg: &NetworkConfig,
    k: usize,
    proportions: &[f64],
) -> Result<ViewQualityReport> {
    let vps = manifest.views_per_shape();
    if k == 0 || 2 * k > vps {
        return Err(Error::InvalidConfig(format!(
            "k = {k} needs disjoint top and bottom sets inside {vps} views"
        )));
    }
    for &p in proportions {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("mixture proportion {p} outside [0, 1]")));
        }
    }
    let offsets = view_offsets(manifest, views.len())?;
    let indices = split_indices(manifest, Split::Test);
    let mut rankings = Vec::with_capacity(indices.len());
    let mut descriptors = Vec::with_capacity(indices.len());
    for &idx in &indices {
        let rec = &manifest.shapes[idx];
        let per_view = view_descriptors(params, cfg, shape_views(manifest, views, &offsets, idx))?;
        let n = per_view.len();
        let mut sims = vec![0.0; n];
        for v in 0..n {
            let mut total = 0.0;
            for u in 0..n {
                if u != v {
                    total += cosine_similarity(&per_view[v], &per_view[u]).unwrap_or(0.0);
                }
            }
            sims[v] = total / (n - 1) as f64;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        let good: Vec<u32> = order[..k].iter().map(|&v| v as u32).collect();
        let poor: Vec<u32> = order[n - k..].iter().rev().map(|&v| v as u32).collect();
        rankings.push(ViewQualityRanking {
            shape_id: rec.id,
            sibling_similarity: sims,
            good,
            poor,
        });
        descriptors.push(per_view);
    }
    let entry_of = |idx: usize, descriptor: Vec<f64>| -> Result<GalleryEntry> {
        let rec = &manifest.shapes[idx];
        Ok(GalleryEntry {
            id: rec.id,
            label: manifest.label_of(rec)?,
            subcategory: rec.subcategory,
            descriptor,
        })
    };
    let mut mixtures = Vec::with_capacity(proportions.len());
    for &p in proportions {
        let from_good = (p * k as f64).round() as usize;
        let mut entries = Vec::with_capacity(indices.len());
        for (slot, &idx) in indices.iter().enumerate() {
            let ranking = &rankings[slot];
            let chosen: Vec<usize> = ranking.good[..from_good]
                .iter()
                .chain(&ranking.poor[..k - from_good])
                .map(|&v| v as usize)
                .collect();
            entries.push(entry_of(idx, mean_descriptor(&descriptors[slot], &chosen))?);
        }
        mixtures.push(MixturePoint { proportion: p, map: micro_map(&entries)? });
    }
    let mut entries = Vec::with_capacity(indices.len());
    for (slot, &idx) in indices.iter().enumerate() {
        let all: Vec<usize> = (0..descriptors[slot].len()).collect();
        entries.push(entry_of(idx, mean_descriptor(&descriptors[slot], &all))?);
    }
    let all_view_map = micro_map(&entries)?;
    Ok(ViewQualityReport { k, rankings, mixtures, all_view_map })
}

fn mean_descriptor(per_view: &[Vec<f64>], chosen: &[usize]) -> Vec<f64> {
    let dim = per_view[0].len();
    let mut out = vec![0.0; dim];
    for &v in chosen {
        for (o, x) in out.iter_mut().zip(&per_view[v]) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= chosen.len() as f64;
    }
    out
}

/// Mean average precision over queries with at least one relevant item.
fn micro_map(entries: &[GalleryEntry]) -> Result<f64> {
    let mut values = Vec::new();
    for query in entries {
        if let Some(ap) = average_precision(&rank_gallery(query, entries)?) {
            values.push(ap);
        }
    }
    if values.is_empty() {
        return Err(Error::DegenerateInput(
            "every query lacks a relevant gallery item".into(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Spearman rank correlation with tied ranks averaged.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "spearman",
            detail: format!("lengths {} and {}", xs.len(), ys.len()),
        });
    }
    let rx = tied_ranks(xs);
    let ry = tied_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::DegenerateInput("spearman over a constant sequence".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn tied_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold equal values; all get the mean rank.
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Test-split degradation protocol: either re-render with a union occluder
/// of each size, or clutter the stored backgrounds of a deterministic
/// fraction of views.
pub enum SweepProtocol {
    /// Occluder sizes relative to the target; 0 reuses the clean views.
    Occlusion(Vec<f64>),
    /// Fractions of views receiving full-amplitude clutter.
    Clutter(Vec<f64>),
}

/// Evaluates retrieval at every degradation level. Clutter placement and
/// view selection derive from the manifest's generator seed, so sweeps are
/// reproducible without touching the stored dataset.
pub fn noise_sweep(
    manifest: &DatasetManifest,
    views: &[DepthImage],
    params: &ParamStore,
    cfg: &NetworkConfig,
    protocol: &SweepProtocol,
) -> Result<Vec<(f64, MetricsReport)>> {
    let offsets = view_offsets(manifest, views.len())?;
    let indices = split_indices(manifest, Split::Test);
    let poses = manifest.poses();
    let res = manifest.resolution as usize;
    let mut out = Vec::new();
    match protocol {
        SweepProtocol::Occlusion(sizes) => {
            for &size in sizes {
                if size < 0.0 {
                    return Err(Error::InvalidConfig(format!("occluder size {size}")));
                }
                let entries = embed_with(manifest, params, cfg, &indices, |idx| {
                    let rec = &manifest.shapes[idx];
                    if size == 0.0 {
                        return Ok(shape_views(manifest, views, &offsets, idx).to_vec());
                    }
                    let scene = manifest.occluded_scene_for(rec, size)?;
                    Ok(poses.iter().map(|pose| scene.render(pose, res)).collect())
                })?;
                let meta = ProtocolMeta { occlusion_size: Some(size), ..ProtocolMeta::default() };
                out.push((size, evaluate_retrieval(&entries, &manifest.class_names, meta)?.0));
            }
        }
        SweepProtocol::Clutter(ratios) => {
            for &ratio in ratios {
                if !(0.0..=1.0).contains(&ratio) {
                    return Err(Error::InvalidConfig(format!("clutter ratio {ratio}")));
                }
                let entries = embed_with(manifest, params, cfg, &indices, |idx| {
                    let rec = &manifest.shapes[idx];
                    let clean = shape_views(manifest, views, &offsets, idx);
                    clean
                        .iter()
                        .enumerate()
                        .map(|(v, img)| {
                            if !sweep_pick(manifest.generator_seed, rec.id, v, ratio) {
                                return Ok(img.clone());
                            }
                            let spec = NoiseSpec {
                                occluder: None,
                                clutter: Some(ClutterNoise {
                                    seed: Some(manifest.clutter_seed_for(rec.id, v)),
                                    amplitude: 1.0,
                                }),
                            };
                            // The rng goes unused: the field seed is pinned.
                            let mut rng = ChaCha8Rng::seed_from_u64(0);
                            Ok(inject_clutter(img, &spec, &mut rng))
                        })
                        .collect()
                })?;
                let meta = ProtocolMeta { clutter_ratio: Some(ratio), ..ProtocolMeta::default() };
                out.push((ratio, evaluate_retrieval(&entries, &manifest.class_names, meta)?.0));
            }
        }
    }
    Ok(out)
}

/// Deterministic per-view coin: cluttered iff the seeded uniform draw
/// lands under `ratio`.
fn sweep_pick(gen_seed: u64, shape_id: u32, view: usize, ratio: f64) -> bool {
    let raw = derive_seed(gen_seed, SeedDomain::SweepClutterPick, &[shape_id as u64, view as u64]);
    let u01 = (raw >> 11) as f64 / 9007199254740992.0;
    u01 < ratio
}

/// One architecture at one degradation level, micro-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub architecture: String,
    pub noise_level: f64,
    pub map: Option<f64>,
    pub auc: Option<f64>,
    pub f_measure: Option<f64>,
    pub ndcg: Option<f64>,
}

pub fn table_row(architecture: &str, noise_level: f64, report: &MetricsReport) -> TableRow {
    TableRow {
        architecture: architecture.to_string(),
        noise_level,
        map: Some(report.map.micro),
        auc: Some(report.auc.micro),
        f_measure: Some(report.f_measure.micro),
        ndcg: Some(report.ndcg.micro),
    }
}

/// Writes comparison rows as CSV; absent values stay blank rather than
/// becoming zeros.
pub fn write_tables_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut out = String::from("architecture,noise_level,map,auc,f_measure,ndcg\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.architecture,
            r.noise_level,
            cell(r.map),
            cell(r.auc),
            cell(r.f_measure),
            cell(r.ndcg)
        ));
    }
    fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
