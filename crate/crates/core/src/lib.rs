//! Checkpoint merging and weight-space diagnostics for fine-tuned models.
//!
//! * [`checkpoint`]: the binary tensor container (read, write, validate).
//! * [`taskvector`]: deltas between a base and a fine-tuned model, per-layer L2.
//! * [`merge`]: LINEAR, TIES, DARE and DELLA merging.
//! * [`diagnostics`]: per-layer Pearson correlation and the mix-vs-merge verdict.
//! * [`datamix`]: seeded subsampling and shuffling of JSON-lines corpora.
//! * [`textmetrics`]: BLEU-4, chrF++ and ROUGE-L.
//! * [`sweep`]: ablation grids with percentage change against a baseline.

pub mod checkpoint;
pub mod datamix;
pub mod diagnostics;
pub mod error;
pub mod layers;
pub mod merge;
pub mod numeric;
pub mod rng;
pub mod sweep;
pub mod taskvector;
pub mod tensor;
pub mod textmetrics;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_with_metadata, validate_header, write_checkpoint,
    write_checkpoint_with_metadata, Dtype, HeaderSummary, Metadata,
};
pub use datamix::{build_mixture, mix_datasets, subsample, RecordDataset};
pub use diagnostics::{
    correlation_profile, l2_profile, pearson_layer, recommend_strategy, LayerReport,
    Recommendation, Verdict, Weighting,
};
pub use error::{Error, Result};
pub use layers::{LayerGrouping, LayerKey, LayerRule};
pub use merge::{merge, MergeRecipe, Method, TaskWeight};
pub use sweep::{run_sweep, SweepPlan, SweepReport};
pub use taskvector::{apply_delta, compute_delta, layer_l2, LayerL2, TaskVector};
pub use tensor::{Tensor, TensorMap};
pub use textmetrics::{score_corpus, Metric};
