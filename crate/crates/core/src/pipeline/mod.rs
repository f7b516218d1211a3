//! Training, test-time scheduling, inference, metrics and checkpoints.

mod checkpoint;
mod infer;
mod metrics;
mod schedule;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use infer::{
    evaluate, evaluate_predictions, infer_video, iocs_from_embeddings, iocs_infer, iocs_infer_all, score_frames,
    EvalReport, VideoScore,
};
pub use metrics::{boundary, boundary_f, default_tolerance, region_similarity};
pub use schedule::{iocs_groups, InferenceSchedule};
pub use train::{
    dynamic_loss, evaluate_loss, static_loss, train, IterKind, Sample, TrainConfig, Trainer,
};
