//! Run configuration: one JSON document bundling detector tuning, state
//! assembly, gait-event parameters, the synthetic gait model, sweep range,
//! and an optional perturbation spec. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use gaitpd_core::detector::PipelineConfig;
use gaitpd_core::optimize::SweepRange;
use gaitpd_core::synth::{GaitModelParams, PerturbationSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub gait_model: GaitModelParams,
    pub sweep: SweepRange,
    pub perturbation: Option<PerturbationSpec>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }
}

/// Default configuration as JSON, shown under `--help`.
pub fn default_config_help() -> String {
    let json =
        serde_json::to_string_pretty(&RunConfig::default()).expect("default config serializes");
    format!(
        "Configuration file keys and their defaults (any key may be omitted; \
unknown keys are rejected):\n{json}"
    )
}
