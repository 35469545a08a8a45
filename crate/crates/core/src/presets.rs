//! Model shapes and hardware profiles compiled into the binary. Every CLI
//! flag that takes a preset name also accepts a path to a JSON file with the
//! same schema, so these are defaults, not a registry.

use crate::model::{HardwareProfile, ModelSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown {kind} preset '{name}' (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("preset '{name}' failed to parse: {source}")]
    Parse {
        name: String,
        #[source]
        source: serde_json::Error,
    },
}

const MODELS: &[(&str, &str)] = &[
    ("opt-6.7b", include_str!("../profiles/opt-6.7b.json")),
    ("opt-30b", include_str!("../profiles/opt-30b.json")),
    ("opt-175b", include_str!("../profiles/opt-175b.json")),
];

const HARDWARE: &[(&str, &str)] = &[("t4-gcp", include_str!("../profiles/t4-gcp.json"))];

pub fn model_preset_names() -> Vec<&'static str> {
    MODELS.iter().map(|(n, _)| *n).collect()
}

pub fn hardware_preset_names() -> Vec<&'static str> {
    HARDWARE.iter().map(|(n, _)| *n).collect()
}

fn lookup(
    table: &[(&'static str, &'static str)],
    kind: &'static str,
    name: &str,
) -> Result<&'static str, PresetError> {
    table
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, body)| *body)
        .ok_or_else(|| PresetError::Unknown {
            kind,
            name: name.to_string(),
            available: table
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

pub fn model_preset(name: &str) -> Result<ModelSpec, PresetError> {
    let body = lookup(MODELS, "model", name)?;
    serde_json::from_str(body).map_err(|source| PresetError::Parse {
        name: name.to_string(),
        source,
    })
}

pub fn hardware_preset(name: &str) -> Result<HardwareProfile, PresetError> {
    let body = lookup(HARDWARE, "hardware", name)?;
    serde_json::from_str(body).map_err(|source| PresetError::Parse {
        name: name.to_string(),
        source,
    })
}
