//! End-to-end orchestration: configuration, the pre-training stand-in,
//! the fine-tuning loop, ablation harnesses and the CLI.

mod config;
mod run;

pub mod cli;

pub use config::{parse_config_text, ConfigError, GenConfig, RunConfig, Toggles};
pub use run::{
    ablate, clothing_probe_rank1, components_grid, extract_features, finetune, holdout_rank1,
    k_sweep_grid, pretrain, probe_gallery_split, AblationRow, AblationSpec, AblationTable,
    EpochRecord, FinetuneOutcome, PipelineError, RunLog, Trace, TraceEpoch, TraceIteration,
    TraceMode,
};
