//! NeVA: task-driven visual attention with a differentiable foveation layer.
//!
//! A frozen task model (classifier or denoising autoencoder) scores what an
//! agent perceives; an attention network learns where to look next so that
//! the task loss drops. Scanpaths from the trained attention, the baselines
//! and human viewers are compared with string-based metrics.

pub mod attention;
pub mod baselines;
pub mod data;
pub mod error;
pub mod foveation;
pub mod metrics;
pub mod nn;
pub mod tasks;
pub mod types;

pub use attention::{generate_scanpath, train_attention, AttentionConfig, AttentionModel, NevaTrainConfig};
pub use error::{NevaError, Result};
pub use foveation::{init_state, update_state, FoveationConfig, PerceptualState};
pub use metrics::{evaluate, EvaluationConfig, EvaluationReport, GridSpec};
pub use tasks::{LabeledStimulus, Target, TaskKind, TaskModel, TaskTrainConfig};
pub use types::{Fixation, Scanpath, Stimulus};
