//! Pair-batch training: joint softmax + contrastive objective on a single
//! tape per iteration, SGD with momentum and plateau halving, binary
//! checkpoints, and a per-iteration loss log.

use std::fs;
use std::path::Path;

use autodiff::{ParamStore, Tape, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shapegen::{derive_seed, DatasetManifest, DepthImage, SeedDomain, Split};

use crate::config::{NetworkConfig, TrainConfig, LR_FLOOR};
use crate::data::{shape_views, view_offsets};
use crate::error::{Error, Result};
use crate::init::{init_params, param_layout};
use crate::net::{shape_forward, NetBindings};

/// One training batch: shapes `(2i, 2i+1)` form pair `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    /// Manifest indices, two per pair.
    pub shapes: Vec<usize>,
    /// One flag per pair: true when both shapes share a category.
    pub similar: Vec<bool>,
}

/// Draws pair batches from the training split: similar pairs first, then
/// dissimilar ones, with shapes picked uniformly inside each pool.
#[derive(Debug)]
pub struct PairSampler {
    by_class: Vec<Vec<usize>>,
    /// Classes with at least two training shapes, eligible for similar pairs.
    eligible: Vec<usize>,
    pairs: usize,
    positives: usize,
}

impl PairSampler {
    pub fn new(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.class_names.len()];
        for (idx, rec) in manifest.shapes.iter().enumerate() {
            if rec.split == Split::Train {
                by_class[manifest.label_of(rec)?].push(idx);
            }
        }
        by_class.retain(|members| !members.is_empty());
        if by_class.is_empty() {
            return Err(Error::InvalidConfig("no training shapes in manifest".into()));
        }
        let pairs = cfg.pairs_per_batch();
        let positives = cfg.positive_pairs();
        let eligible: Vec<usize> = by_class
            .iter()
            .enumerate()
            .filter(|(_, members)| members.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if positives > 0 && eligible.is_empty() {
            return Err(Error::InvalidConfig(
                "similar pairs need a class with at least two training shapes".into(),
            ));
        }
        if pairs > positives && by_class.len() < 2 {
            return Err(Error::InvalidConfig(
                "dissimilar pairs need at least two populated classes".into(),
            ));
        }
        Ok(Self { by_class, eligible, pairs, positives })
    }

    /// One batch; the draw order is fixed so a seeded rng reproduces it.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> PairBatch {
        let mut shapes = Vec::with_capacity(2 * self.pairs);
        let mut similar = Vec::with_capacity(self.pairs);
        for _ in 0..self.positives {
            let class = self.eligible[rng.gen_range(0..self.eligible.len())];
            let members = &self.by_class[class];
            let a = rng.gen_range(0..members.len());
            let mut b = rng.gen_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            shapes.push(members[a]);
            shapes.push(members[b]);
            similar.push(true);
        }
        for _ in self.positives..self.pairs {
            let ca = rng.gen_range(0..self.by_class.len());
            let mut cb = rng.gen_range(0..self.by_class.len() - 1);
            if cb >= ca {
                cb += 1;
            }
            let first = &self.by_class[ca];
            let second = &self.by_class[cb];
            shapes.push(first[rng.gen_range(0..first.len())]);
            shapes.push(second[rng.gen_range(0..second.len())]);
            similar.push(false);
        }
        PairBatch { shapes, similar }
    }
}

fn batch_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedDomain::Batch, &[iteration as u64]))
}

/// The first `count` batches of the seeded stream; batch `t` depends only
/// on the seed and `t`.
pub fn assemble_pair_batches(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    count: usize,
) -> Result<Vec<PairBatch>> {
    let sampler = PairSampler::new(manifest, cfg)?;
    Ok((0..count).map(|t| sampler.sample(&mut batch_rng(cfg.seed, t))).collect())
}

/// Appends the pairwise contrastive objective over `2M` unit-norm
/// descriptors: squared distance for similar pairs, hinge at `margin` for
/// dissimilar ones, all divided by `2M`.
pub fn contrastive_graph(
    tape: &mut Tape,
    normalized: &[TensorId],
    similar: &[bool],
    margin: f64,
) -> Result<TensorId> {
    if similar.is_empty() || normalized.len() != 2 * similar.len() {
        return Err(Error::ShapeMismatch {
            op: "contrastive",
            detail: format!("{} descriptors for {} pairs", normalized.len(), similar.len()),
        });
    }
    for &id in normalized {
        let norm = tape.value(id).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateInput(format!(
                "contrastive input has norm {norm}, expected 1"
            )));
        }
    }
    let mut acc: Option<TensorId> = None;
    for (i, &sim) in similar.iter().enumerate() {
        let diff = tape.sub(normalized[2 * i], normalized[2 * i + 1])?;
        let squared = tape.hadamard(diff, diff)?;
        let energy = tape.sum_all(squared);
        let term = if sim {
            energy
        } else {
            let negated = tape.scale(energy, -1.0);
            let gap = tape.add_scalar(negated, margin);
            tape.relu(gap)
        };
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    let total = acc.expect("similar is non-empty");
    Ok(tape.scale(total, 1.0 / normalized.len() as f64))
}

/// Node ids of the joint objective. `softmax` and `contrastive` are the
/// unweighted terms; `total` applies the configured weights.
pub struct LossIds {
    pub softmax: TensorId,
    pub contrastive: Option<TensorId>,
    pub total: TensorId,
}

/// Appends mean cross-entropy over all shapes plus the contrastive term.
/// When the contrastive weight is zero the pairwise graph is skipped
/// entirely and every `normalized` entry may be absent.
pub fn joint_loss_graph(
    tape: &mut Tape,
    logits: &[TensorId],
    labels: &[usize],
    normalized: &[Option<TensorId>],
    similar: &[bool],
    cfg: &TrainConfig,
) -> Result<LossIds> {
    if logits.is_empty() || logits.len() != labels.len() || logits.len() != normalized.len() {
        return Err(Error::ShapeMismatch {
            op: "joint_loss",
            detail: format!(
                "{} logits, {} labels, {} descriptors",
                logits.len(),
                labels.len(),
                normalized.len()
            ),
        });
    }
    let mut acc: Option<TensorId> = None;
    for (&lg, &lb) in logits.iter().zip(labels) {
        let ce = tape.softmax_cross_entropy(lg, lb)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, ce)?,
            None => ce,
        });
    }
    let softmax = tape.scale(acc.expect("logits non-empty"), 1.0 / logits.len() as f64);
    let contrastive = if cfg.contrastive_weight > 0.0 {
        let ids = normalized
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.ok_or_else(|| {
                    Error::DegenerateInput(format!(
                        "shape {i} has a zero descriptor; the contrastive term needs unit norms"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(contrastive_graph(tape, &ids, similar, cfg.margin)?)
    } else {
        None
    };
    let weighted_softmax = tape.scale(softmax, cfg.softmax_weight);
    let total = match contrastive {
        Some(c) => {
            let weighted = tape.scale(c, cfg.contrastive_weight);
            tape.add(weighted_softmax, weighted)?
        }
        None => weighted_softmax,
    };
    Ok(LossIds { softmax, contrastive, total })
}

/// One SGD step with momentum and decoupled-into-gradient weight decay:
/// `g <- g + wd*theta`, `v <- m*v - lr*g`, `theta <- theta + v`. Gradients
/// are zeroed as part of the step.
pub fn sgd_step(store: &mut ParamStore, lr: f64, momentum: f64, weight_decay: f64) {
    for view in store.views_mut() {
        for i in 0..view.value.len() {
            let g = view.grad[i] + weight_decay * view.value[i];
            let v = momentum * view.velocity[i] - lr * g;
            view.velocity[i] = v;
            view.value[i] += v;
            view.grad[i] = 0.0;
        }
    }
}

/// One logged iteration. `softmax` and `contrastive` are the unweighted
/// terms; `total` is the weighted objective actually descended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub softmax: f64,
    pub contrastive: f64,
    pub total: f64,
    pub lr: f64,
}

/// Plateau halving: after each full window past the first, the mean total
/// loss must undercut the previous window's mean by the threshold fraction
/// or the rate halves, never below [`LR_FLOOR`].
pub struct LrSchedule {
    lr: f64,
    window: usize,
    threshold: f64,
    /// Iteration counts at which a halving fired.
    pub halvings: Vec<usize>,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.base_lr,
            window: cfg.plateau_window,
            threshold: cfg.plateau_threshold,
            halvings: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Inspects the total-loss history after an iteration; `totals` must
    /// grow by one entry per call.
    pub fn observe(&mut self, totals: &[f64]) {
        let t = totals.len();
        let w = self.window;
        if t < 2 * w || !t.is_multiple_of(w) {
            return;
        }
        let recent: f64 = totals[t - w..].iter().sum::<f64>() / w as f64;
        let previous: f64 = totals[t - 2 * w..t - w].iter().sum::<f64>() / w as f64;
        if recent > (1.0 - self.threshold) * previous {
            let halved = (self.lr / 2.0).max(LR_FLOOR);
            if halved < self.lr {
                self.lr = halved;
                self.halvings.push(t);
            }
        }
    }
}

/// Learning rate after replaying a whole loss history through the
/// schedule; pure function of its inputs.
pub fn plateau_schedule(totals: &[f64], cfg: &TrainConfig) -> f64 {
    let mut schedule = LrSchedule::new(cfg);
    for t in 1..=totals.len() {
        schedule.observe(&totals[..t]);
    }
    schedule.lr()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<LossReport>,
    /// Iterations at which the learning rate halved.
    pub halvings: Vec<usize>,
}

/// Trains from scratch on the manifest's training split. Deterministic for
/// a fixed manifest, view buffer, and config pair.
pub fn train(
    manifest: &DatasetManifest,
    views: &[DepthImage],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    if manifest.class_names.len() != net_cfg.classes {
        return Err(Error::InvalidConfig(format!(
            "manifest has {} classes, network expects {}",
            manifest.class_names.len(),
            net_cfg.classes
        )));
    }
    let offsets = view_offsets(manifest, views.len())?;
    let sampler = PairSampler::new(manifest, train_cfg)?;
    let mut store = init_params(net_cfg, train_cfg.seed)?;
    let mut schedule = LrSchedule::new(train_cfg);
    let mut log = Vec::with_capacity(train_cfg.iterations);
    let mut totals = Vec::with_capacity(train_cfg.iterations);
    for t in 0..train_cfg.iterations {
        let batch = sampler.sample(&mut batch_rng(train_cfg.seed, t));
        let lr = schedule.lr();
        let mut tape = Tape::new();
        let binds = NetBindings::bind(&mut tape, &store)?;
        let mut logits = Vec::with_capacity(batch.shapes.len());
        let mut normalized = Vec::with_capacity(batch.shapes.len());
        let mut labels = Vec::with_capacity(batch.shapes.len());
        for &idx in &batch.shapes {
            let out =
                shape_forward(&mut tape, net_cfg, &binds, shape_views(manifest, views, &offsets, idx))?;
            logits.push(out.logits);
            normalized.push(out.normalized);
            labels.push(manifest.label_of(&manifest.shapes[idx])?);
        }
        let loss =
            joint_loss_graph(&mut tape, &logits, &labels, &normalized, &batch.similar, train_cfg)?;
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                detail: format!("loss reached {total}"),
            });
        }
        let grads = tape.reverse_accumulate(loss.total)?;
        store.accumulate(&tape, &grads)?;
        sgd_step(&mut store, lr, train_cfg.momentum, train_cfg.weight_decay);
        if let Some(name) = first_non_finite(&store) {
            return Err(Error::Diverged {
                iteration: t,
                detail: format!("parameter {name} left the finite range"),
            });
        }
        log.push(LossReport {
            iteration: t,
            softmax: tape.value(loss.softmax).item(),
            contrastive: loss.contrastive.map_or(0.0, |c| tape.value(c).item()),
            total,
            lr,
        });
        totals.push(total);
        schedule.observe(&totals);
    }
    Ok(TrainOutcome { params: store, log, halvings: schedule.halvings })
}

fn first_non_finite(store: &ParamStore) -> Option<String> {
    for name in store.names() {
        let value = store.value(name).expect("name came from the store");
        if !value.all_finite() {
            return Some(name.to_string());
        }
    }
    None
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VDNC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    network: NetworkConfig,
    train: TrainConfig,
    iteration: u64,
    params: Vec<ParamHeader>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub iteration: u64,
    pub params: ParamStore,
}

/// Writes magic, version, a length-prefixed JSON header, then every
/// parameter's scalars as little-endian f64 in header order.
pub fn checkpoint_save(
    path: &Path,
    params: &ParamStore,
    network: &NetworkConfig,
    train: &TrainConfig,
    iteration: u64,
) -> Result<()> {
    let headers: Vec<ParamHeader> = params
        .names()
        .map(|name| ParamHeader {
            name: name.to_string(),
            shape: params.value(name).expect("name came from the store").shape().to_vec(),
        })
        .collect();
    let header = CheckpointHeader {
        network: network.clone(),
        train: train.clone(),
        iteration,
        params: headers,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut bytes = Vec::with_capacity(16 + header_bytes.len() + 8 * params.scalar_count());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for name in params.names() {
        for &v in params.value(name).expect("name came from the store").data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.offset as u64,
                detail: format!("truncated before {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn bad(&self, at: usize, detail: String) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: at as u64, detail }
    }
}

/// Reads a checkpoint back, validating the container bytes and that the
/// stored parameter list matches the layout its own network config implies.
pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(cur.bad(0, format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(cur.bad(4, format!("unsupported version {version}")));
    }
    let header_len =
        u32::from_le_bytes(cur.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header_at = cur.offset;
    let header_bytes = cur.take(header_len, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| cur.bad(header_at, format!("header is not valid JSON: {e}")))?;
    header.network.validate()?;
    let expected = param_layout(&header.network);
    if expected.len() != header.params.len() {
        return Err(Error::ShapeMismatch {
            op: "checkpoint",
            detail: format!(
                "header lists {} parameters, network config implies {}",
                header.params.len(),
                expected.len()
            ),
        });
    }
    for (spec, got) in expected.iter().zip(&header.params) {
        if spec.name != got.name || spec.shape != got.shape {
            return Err(Error::ShapeMismatch {
                op: "checkpoint",
                detail: format!(
                    "parameter {}: header says {:?} {:?}, network config implies {} {:?}",
                    got.name, got.name, got.shape, spec.name, spec.shape
                ),
            });
        }
    }
    let scalars: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let payload_at = cur.offset;
    if bytes.len() - payload_at != 8 * scalars {
        return Err(cur.bad(
            payload_at,
            format!("payload holds {} bytes, header implies {}", bytes.len() - payload_at, 8 * scalars),
        ));
    }
    let mut params = ParamStore::new();
    for p in &header.params {
        let count: usize = p.shape.iter().product();
        let data: Vec<f64> = cur
            .take(8 * count, "payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.register(&p.name, Tensor::new(p.shape.clone(), data)?)?;
    }
    Ok(Checkpoint { network: header.network, train: header.train, iteration: header.iteration, params })
}

/// Writes the loss log as CSV: `iteration,softmax,contrastive,total,lr`.
pub fn write_loss_csv(path: &Path, log: &[LossReport]) -> Result<()> {
    let mut out = String::from("iteration,softmax,contrastive,total,lr\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.softmax, r.contrastive, r.total, r.lr
        ));
    }
    fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::finite_diff_check;
    use shapegen::{build_dataset, DatasetConfig, ShapeCategory};

    fn tiny_dataset() -> (DatasetManifest, Vec<DepthImage>) {
        let cfg = DatasetConfig {
            classes: vec![ShapeCategory::Sphere, ShapeCategory::Box3],
            train_per_class: 3,
            test_per_class: 1,
            resolution: 8,
            n_ring: 2,
            camera_distance: 3.0,
            train_occluder_size: None,
            train_clutter: None,
        };
        build_dataset(&cfg, 11).expect("tiny dataset builds")
    }

    fn tiny_net() -> NetworkConfig {
        crate::net::mini_cfg(
            crate::config::ScoreUnitKind::Channel,
            crate::config::AggregationKind::WeightedSum,
        )
    }

    fn tiny_train(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            base_lr: 1e-3,
            shapes_per_batch: 4,
            plateau_window: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pair_batches_respect_composition_and_flags() {
        let (manifest, _) = tiny_dataset();
        let cfg = tiny_train(0);
        let batches = assemble_pair_batches(&manifest, &cfg, 20).unwrap();
        assert_eq!(batches.len(), 20);
        for batch in &batches {
            assert_eq!(batch.shapes.len(), 4);
            assert_eq!(batch.similar, vec![true, false]);
            for (i, &sim) in batch.similar.iter().enumerate() {
                let a = &manifest.shapes[batch.shapes[2 * i]];
                let b = &manifest.shapes[batch.shapes[2 * i + 1]];
                assert_ne!(batch.shapes[2 * i], batch.shapes[2 * i + 1]);
                assert_eq!(a.category == b.category, sim);
                assert_eq!(a.split, Split::Train);
                assert_eq!(b.split, Split::Train);
            }
        }
    }

    #[test]
    fn pair_batches_are_deterministic_and_seed_sensitive() {
        let (manifest, _) = tiny_dataset();
        let cfg = tiny_train(0);
        let a = assemble_pair_batches(&manifest, &cfg, 10).unwrap();
        let b = assemble_pair_batches(&manifest, &cfg, 10).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 1, ..cfg };
        let c = assemble_pair_batches(&manifest, &other, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_rejects_impossible_compositions() {
        let (manifest, _) = tiny_dataset();
        let single_class = DatasetManifest {
            shapes: manifest
                .shapes
                .iter()
                .filter(|r| r.category == "sphere")
                .cloned()
                .collect(),
            ..manifest.clone()
        };
        // Dissimilar pairs are impossible with one populated class.
        let err = PairSampler::new(&single_class, &tiny_train(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        // All-similar batches remain fine.
        let all_pos = TrainConfig { positive_fraction: 1.0, ..tiny_train(0) };
        let sampler = PairSampler::new(&single_class, &all_pos).unwrap();
        let batch = sampler.sample(&mut batch_rng(0, 0));
        assert_eq!(batch.similar, vec![true, true]);
        // Similar pairs are impossible when every class is a singleton.
        let mut singletons = manifest.clone();
        let mut seen = std::collections::HashSet::new();
        singletons.shapes.retain(|r| r.split == Split::Train && seen.insert(r.category.clone()));
        assert_eq!(singletons.shapes.len(), 2);
        let err = PairSampler::new(&singletons, &tiny_train(0)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn contrastive_hand_cases_are_exact() {
        // One similar pair of orthogonal unit vectors: E = 2, loss = 2/2 = 1.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let b = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let loss = contrastive_graph(&mut tape, &[a, b], &[true], 1.4).unwrap();
        assert!((tape.value(loss).item() - 1.0).abs() <= 1e-12);

        // Identical similar pair: exactly zero.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![0.6, 0.8]));
        let b = tape.leaf(Tensor::vector(vec![0.6, 0.8]));
        let loss = contrastive_graph(&mut tape, &[a, b], &[true], 1.4).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);

        // Orthogonal dissimilar pair, margin 1.4: E = 2 >= margin, hinge 0.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let b = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let loss = contrastive_graph(&mut tape, &[a, b], &[false], 1.4).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);

        // Close dissimilar pair: E = 2 - 2cos(t), loss = (margin - E)/2.
        let t: f64 = 0.3;
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let b = tape.leaf(Tensor::vector(vec![t.cos(), t.sin()]));
        let loss = contrastive_graph(&mut tape, &[a, b], &[false], 1.4).unwrap();
        let energy = 2.0 - 2.0 * t.cos();
        assert!((tape.value(loss).item() - (1.4 - energy) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn contrastive_rejects_unnormalized_and_mismatched_inputs() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 1.0]));
        let b = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let err = contrastive_graph(&mut tape, &[a, b], &[true], 1.4).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));

        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let err = contrastive_graph(&mut tape, &[a], &[true], 1.4).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        // Leaves feed l2_normalize inside the graph, so perturbed inputs
        // still reach the loss as unit vectors.
        let raw = [
            Tensor::vector(vec![0.4, -1.1, 0.7]).with_grad(),
            Tensor::vector(vec![-0.2, 0.5, 1.3]).with_grad(),
            Tensor::vector(vec![1.0, 0.9, -0.3]).with_grad(),
            Tensor::vector(vec![-0.8, 0.1, 0.6]).with_grad(),
        ];
        let worst = finite_diff_check(&raw, autodiff::DEFAULT_STEP, |tape, ids| {
            let normed: Vec<TensorId> =
                ids.iter().map(|&id| tape.l2_normalize(id)).collect::<autodiff::Result<_>>()?;
            contrastive_graph(tape, &normed, &[true, false], 1.4)
                .map_err(|e| autodiff::Error::InvalidConfig(e.to_string()))
        })
        .unwrap();
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn joint_loss_is_the_weighted_sum_of_its_terms() {
        let mut tape = Tape::new();
        let l1 = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l2 = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let n1 = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let n2 = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let cfg = TrainConfig::default();
        let loss = joint_loss_graph(
            &mut tape,
            &[l1, l2],
            &[2, 2],
            &[Some(n1), Some(n2)],
            &[true],
            &cfg,
        )
        .unwrap();
        let ce = 0.4076059644443808;
        assert!((tape.value(loss.softmax).item() - ce).abs() <= 1e-12);
        assert!((tape.value(loss.contrastive.unwrap()).item() - 1.0).abs() <= 1e-12);
        assert!((tape.value(loss.total).item() - (ce + 1.0)).abs() <= 1e-12);

        // Non-unit weights: total = ws*s + wc*c, terms stay unweighted.
        let mut tape = Tape::new();
        let l1 = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l2 = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let n1 = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let n2 = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let cfg = TrainConfig { softmax_weight: 0.7, contrastive_weight: 0.3, ..cfg };
        let loss = joint_loss_graph(
            &mut tape,
            &[l1, l2],
            &[2, 2],
            &[Some(n1), Some(n2)],
            &[true],
            &cfg,
        )
        .unwrap();
        let s = tape.value(loss.softmax).item();
        let c = tape.value(loss.contrastive.unwrap()).item();
        assert!((tape.value(loss.total).item() - (0.7 * s + 0.3 * c)).abs() <= 1e-12);
    }

    #[test]
    fn zero_contrastive_weight_skips_the_pairwise_graph() {
        let mut tape = Tape::new();
        let l1 = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l2 = tape.leaf(Tensor::vector(vec![3.0, 2.0, 1.0]));
        let cfg = TrainConfig { contrastive_weight: 0.0, ..TrainConfig::default() };
        // Absent descriptors are fine when the term is off.
        let loss =
            joint_loss_graph(&mut tape, &[l1, l2], &[2, 0], &[None, None], &[true], &cfg).unwrap();
        assert!(loss.contrastive.is_none());
        let s = tape.value(loss.softmax).item();
        assert!((tape.value(loss.total).item() - cfg.softmax_weight * s).abs() <= 1e-12);
        let ce = 0.4076059644443808;
        assert!((s - ce).abs() <= 1e-12);
    }

    #[test]
    fn sgd_hand_cases() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::vector(vec![1.0, 2.0])).unwrap();

        // Zero gradient, zero decay: untouched.
        sgd_step(&mut store, 0.1, 0.9, 0.0);
        assert_eq!(store.value("w").unwrap().data(), &[1.0, 2.0]);

        // Pure decay: theta' = theta - lr*wd*theta = 0.9 * theta.
        sgd_step(&mut store, 1.0, 0.0, 0.1);
        assert!((store.value("w").unwrap().data()[0] - 0.9).abs() <= 1e-12);
        assert!((store.value("w").unwrap().data()[1] - 1.8).abs() <= 1e-12);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::vector(vec![1.0])).unwrap();
        let set_grad = |store: &mut ParamStore| {
            for view in store.views_mut() {
                view.grad[0] = 1.0;
            }
        };
        set_grad(&mut store);
        sgd_step(&mut store, 0.1, 0.9, 0.0);
        // v1 = -0.1, theta = 0.9
        assert!((store.value("w").unwrap().data()[0] - 0.9).abs() <= 1e-12);
        assert_eq!(store.grad("w").unwrap().data()[0], 0.0, "gradients zeroed by the step");
        set_grad(&mut store);
        sgd_step(&mut store, 0.1, 0.9, 0.0);
        // v2 = 0.9*(-0.1) - 0.1 = -0.19, theta = 0.71
        assert!((store.value("w").unwrap().data()[0] - 0.71).abs() <= 1e-12);
    }

    #[test]
    fn plateau_halves_on_flat_loss_and_holds_on_descent() {
        let cfg = TrainConfig { plateau_window: 2, plateau_threshold: 0.01, ..TrainConfig::default() };
        // Steadily shrinking loss: no halving.
        let descending: Vec<f64> = (1..=10).map(|t| 1.0 / t as f64).collect();
        assert_eq!(plateau_schedule(&descending, &cfg), cfg.base_lr);
        // Flat loss: halves at every window boundary from 2w on.
        let flat = vec![1.0; 6];
        let lr = plateau_schedule(&flat, &cfg);
        assert!((lr - cfg.base_lr / 4.0).abs() <= 1e-15, "halvings at t=4 and t=6");
        // Replay matches an incremental schedule.
        let mut incremental = LrSchedule::new(&cfg);
        for t in 1..=flat.len() {
            incremental.observe(&flat[..t]);
        }
        assert_eq!(incremental.lr(), lr);
        assert_eq!(incremental.halvings, vec![4, 6]);
    }

    #[test]
    fn learning_rate_never_drops_below_the_floor() {
        let cfg = TrainConfig {
            plateau_window: 1,
            plateau_threshold: 0.01,
            base_lr: 1e-3,
            ..TrainConfig::default()
        };
        let flat = vec![1.0; 50];
        let lr = plateau_schedule(&flat, &cfg);
        assert!(lr >= LR_FLOOR);
        assert_eq!(lr, LR_FLOOR);
    }

    #[test]
    fn threshold_boundary_is_strict() {
        // recent == (1 - threshold) * previous must NOT halve.
        let cfg = TrainConfig { plateau_window: 1, plateau_threshold: 0.01, ..TrainConfig::default() };
        let history = vec![1.0, 0.99];
        assert_eq!(plateau_schedule(&history, &cfg), cfg.base_lr);
        let history = vec![1.0, 0.9901];
        assert!(plateau_schedule(&history, &cfg) < cfg.base_lr);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_iteration() {
        let (manifest, views) = tiny_dataset();
        let net = NetworkConfig { resolution: 8, ..tiny_net() };
        let cfg = tiny_train(3);
        let a = train(&manifest, &views, &net, &cfg).unwrap();
        let b = train(&manifest, &views, &net, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        for (t, r) in a.log.iter().enumerate() {
            assert_eq!(r.iteration, t);
            assert!(r.total.is_finite());
            assert!(
                (r.total - (cfg.softmax_weight * r.softmax + cfg.contrastive_weight * r.contrastive))
                    .abs()
                    <= 1e-12
            );
        }
        for name in a.params.names() {
            assert_eq!(
                a.params.value(name).unwrap().data(),
                b.params.value(name).unwrap().data(),
                "{name} differs between identical runs"
            );
        }
    }

    #[test]
    fn zero_iterations_returns_the_initialization() {
        let (manifest, views) = tiny_dataset();
        let net = tiny_net();
        let cfg = tiny_train(0);
        let out = train(&manifest, &views, &net, &cfg).unwrap();
        assert!(out.log.is_empty());
        let fresh = init_params(&net, cfg.seed).unwrap();
        for name in fresh.names() {
            assert_eq!(out.params.value(name).unwrap().data(), fresh.value(name).unwrap().data());
        }
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let (manifest, views) = tiny_dataset();
        let net = tiny_net();
        let cfg = TrainConfig { base_lr: 1e12, ..tiny_train(8) };
        match train(&manifest, &views, &net, &cfg) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration < 8),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = tiny_net();
        let cfg = tiny_train(5);
        let params = init_params(&net, 3).unwrap();
        checkpoint_save(&path, &params, &net, &cfg, 41).unwrap();
        let loaded = checkpoint_load(&path).unwrap();
        assert_eq!(loaded.network, net);
        assert_eq!(loaded.train, cfg);
        assert_eq!(loaded.iteration, 41);
        assert_eq!(loaded.params.len(), params.len());
        for (a, b) in loaded.params.names().zip(params.names()) {
            assert_eq!(a, b, "registration order preserved");
        }
        for name in params.names() {
            let a = loaded.params.value(name).unwrap();
            let b = params.value(name).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name} not bitwise identical");
            }
        }
    }

    #[test]
    fn corrupted_checkpoints_fail_with_located_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = tiny_net();
        let cfg = tiny_train(1);
        let params = init_params(&net, 0).unwrap();
        checkpoint_save(&path, &params, &net, &cfg, 0).unwrap();
        let good = fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        match checkpoint_load(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        // Unsupported version.
        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        match checkpoint_load(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }

        // Truncated payload.
        let bad = &good[..good.len() - 5];
        fs::write(&path, bad).unwrap();
        assert!(matches!(checkpoint_load(&path), Err(Error::Format { .. })));

        // Garbage header bytes.
        let mut bad = good.clone();
        bad[12] = b'{';
        bad[13] = b'!';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(checkpoint_load(&path), Err(Error::Format { .. })));

        // Pristine bytes still load after all that.
        fs::write(&path, &good).unwrap();
        assert!(checkpoint_load(&path).is_ok());
    }

    #[test]
    fn checkpoint_header_must_match_its_own_network_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = tiny_net();
        let cfg = tiny_train(1);
        let params = init_params(&net, 0).unwrap();
        // Store a header whose config implies a different head shape.
        let wrong = NetworkConfig { classes: 4, ..net.clone() };
        checkpoint_save(&path, &params, &wrong, &cfg, 0).unwrap();
        match checkpoint_load(&path) {
            Err(Error::ShapeMismatch { detail, .. }) => {
                assert!(detail.contains("head.fc"), "offending parameter named: {detail}");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn loss_csv_golden_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let log = vec![
            LossReport { iteration: 0, softmax: 1.5, contrastive: 0.25, total: 1.75, lr: 0.002 },
            LossReport { iteration: 1, softmax: 1.0, contrastive: 0.0, total: 1.0, lr: 0.001 },
        ];
        write_loss_csv(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "iteration,softmax,contrastive,total,lr\n0,1.5,0.25,1.75,0.002\n1,1,0,1,0.001\n"
        );
    }
}
