//! Zero-shot continual-learning evaluation over precomputed embeddings.
//!
//! A frozen dual encoder is evaluated as a continual learner: image
//! embeddings are classified against prompt-derived text prototypes, the
//! classes (or domains) visible at each step come from a [`scenario`], and
//! per-step results are summarized by [`metrics`]. The [`harness`] ties the
//! pieces together behind a JSON config and writes a versioned report.

pub mod classifier;
pub mod embedding_store;
pub mod harness;
pub mod metrics;
pub mod scenario;
pub mod synthetic;

pub use classifier::{
    build_head_embedding_pooling, evaluate_step, predict, predict_decision_pooling, render_prompts,
    select_top_k_prompts, ClassifierError, ClassifierHead, Prediction, PromptSet,
};
pub use embedding_store::{l2_normalize, load_table, save_table, EmbeddingTable, Manifest, StoreError};
pub use harness::{emit_report, run, EvalReport, HarnessError, RunConfig};
pub use metrics::{avg_accuracy, domain_metrics, last_accuracy, AccuracyMatrix, StepAccuracySeries};
pub use scenario::{
    build_class_incremental, build_domain_incremental, build_gaussian_schedule, seen_classes, Scenario, TaskSpec,
};
