use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetDescriptor;
use crate::model::ModelConfig;
use crate::unlearn::{UnlearnConfig, UnlearnPlan, SQUARED_ERROR_CONVENTION};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to reproduce one unlearning run. `timestamp_unix` is
/// the only field that differs between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub dataset: DatasetDescriptor,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub unlearn: UnlearnConfig,
    pub squared_error_convention: String,
    pub plan: UnlearnPlan,
}

impl RunManifest {
    pub fn new(
        dataset: DatasetDescriptor,
        model: ModelConfig,
        model_seed: u64,
        unlearn: UnlearnConfig,
        plan: UnlearnPlan,
    ) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            dataset,
            model,
            model_seed,
            unlearn,
            squared_error_convention: SQUARED_ERROR_CONVENTION.to_string(),
            plan,
        }
    }
}
