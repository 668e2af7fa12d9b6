//! Self-describing checkpoint document: problem descriptor, named
//! parameter arrays, optimizer moments, loss history, and the stream
//! cursor. JSON with shortest-roundtrip decimal floats, so save-load-save
//! is byte-identical and a resumed run continues bitwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamState, ParamStore};
use crate::error::{Error, Result};
use crate::problems::ProblemDescriptor;

use super::config::TrainConfig;
use super::train::OuterRecord;

pub const CHECKPOINT_VERSION: &str = "nfmkv-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub problem: ProblemDescriptor,
    pub config: TrainConfig,
    pub outer_index: usize,
    pub draw_counter: u64,
    pub post_warmup_terminal_loss: Option<f64>,
    pub history: Vec<OuterRecord>,
    pub value_params: Vec<(String, Vec<f64>)>,
    pub flow_params: Vec<(String, Vec<f64>)>,
    pub value_opt: AdamState,
    pub flow_opt: AdamState,
}

pub fn params_to_named(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    store
        .segments()
        .map(|(id, meta)| (meta.name.clone(), store.segment(id).to_vec()))
        .collect()
}

/// Copy named arrays into a freshly registered store; names and lengths
/// must match the registration exactly.
pub fn named_to_params(named: &[(String, Vec<f64>)], store: &mut ParamStore) -> Result<()> {
    for (name, values) in named {
        let id = store.id_by_name(name).ok_or_else(|| Error::Parse {
            field: format!("params.{name}"),
            detail: "unknown segment for this problem".into(),
        })?;
        let seg = store.segment_mut(id);
        if seg.len() != values.len() {
            return Err(Error::Parse {
                field: format!("params.{name}"),
                detail: format!("expected {} values, found {}", seg.len(), values.len()),
            });
        }
        seg.copy_from_slice(values);
    }
    store.validate()
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(checkpoint).map_err(|e| Error::Parse {
        field: "checkpoint".into(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    // Version is checked before the full parse so version mismatches are
    // reported even across incompatible schemas.
    let head: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        field: "checkpoint".into(),
        detail: e.to_string(),
    })?;
    match head.get("version").and_then(|v| v.as_str()) {
        Some(v) if v == CHECKPOINT_VERSION => {}
        Some(v) => {
            return Err(Error::UnsupportedVersion {
                found: v.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            })
        }
        None => {
            return Err(Error::Parse {
                field: "version".into(),
                detail: "missing version field".into(),
            })
        }
    }
    serde_json::from_value(head).map_err(|e| Error::Parse {
        field: "checkpoint".into(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::BaseDensity;
    use crate::sde::TimeGrid;

    fn tiny_checkpoint() -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            problem: ProblemDescriptor::Traffic {
                grid: TimeGrid { horizon: 1.0, steps: 4 },
                sigma: 0.3,
                mu0: BaseDensity::SinusoidRing { amp: 0.2, freq: 1 },
            },
            config: TrainConfig::default(),
            outer_index: 3,
            draw_counter: 17,
            post_warmup_terminal_loss: None,
            history: vec![],
            value_params: vec![("value.u0.w0".into(), vec![0.1, -0.2, 1e-17])],
            flow_params: vec![("flow.s0.spline.w_logits".into(), vec![0.5; 4])],
            value_opt: AdamState::new(3),
            flow_opt: AdamState::new(4),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let c = tiny_checkpoint();
        save_checkpoint(&p1, &c).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let c = tiny_checkpoint();
        save_checkpoint(&p, &c).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&p) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported_explicitly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let mut c = tiny_checkpoint();
        c.version = "nfmkv-checkpoint-v0".into();
        save_checkpoint(&p, &c).unwrap();
        match load_checkpoint(&p) {
            Err(Error::UnsupportedVersion { found, .. }) => {
                assert_eq!(found, "nfmkv-checkpoint-v0")
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
