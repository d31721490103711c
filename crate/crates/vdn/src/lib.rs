//! View-discerning shape retrieval: a multi-view depth network that learns
//! per-view quality scores while embedding shapes for retrieval.
//!
//! A shared convolutional backbone encodes each depth view; a score unit
//! (channel-wise, part-wise, or single) rates the view's feature grid; the
//! scored grids aggregate into one shape representation that a head maps to
//! a descriptor and class logits. Training couples softmax classification
//! with a contrastive pair objective; evaluation ranks descriptors by
//! cosine similarity and reports MAP, PR area, F, and NDCG, with protocols
//! for view-quality analysis and noise sweeps.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod init;
pub mod net;
pub mod trainer;

pub use config::{
    AggregationKind, NetworkConfig, ScoreUnitKind, TrainConfig, ARCH_PRESETS, LR_FLOOR,
};
pub use error::{Error, Result};
pub use eval::{
    cosine_similarity, embed_test_split, evaluate_retrieval, noise_sweep, rank_gallery,
    read_metrics_json, shape_descriptor, spearman_rho, table_row, view_quality_analysis,
    write_metrics_json, write_pr_csv, write_tables_csv, GalleryEntry, MetricAggregate,
    MetricsReport, MixturePoint, ProtocolMeta, PrPoint, RankedItem, RankedList, SweepProtocol,
    TableRow, ViewQualityRanking, ViewQualityReport,
};
pub use init::{init_params, param_layout, ParamSpec};
pub use net::{
    aggregate, forward_backbone, forward_head, score_block, shape_forward, view_leaf,
    HeadOutputs, NetBindings, ScoreIds, ShapeOutputs,
};
pub use trainer::{
    assemble_pair_batches, checkpoint_load, checkpoint_save, contrastive_graph, joint_loss_graph,
    plateau_schedule, sgd_step, train, write_loss_csv, Checkpoint, LossIds, LossReport,
    LrSchedule, PairBatch, PairSampler, TrainOutcome,
};
