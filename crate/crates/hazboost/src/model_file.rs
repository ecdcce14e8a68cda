//! Versioned on-disk model format with integrity checking.
//!
//! A model file is plain text: a one-line JSON header naming the format,
//! its version, and a SHA-256 checksum, followed by the model payload as a
//! single JSON document. Hashing the payload bytes (rather than trusting
//! the parser) means a truncated or bit-flipped file is rejected before any
//! partial model can escape, and the decimal float encoding round-trips
//! every `f64` exactly, so a saved model predicts bit-identically after
//! reloading.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boosting::{BoostedModel, Node};
use crate::quantiles::CandidateGrid;

const FORMAT_NAME: &str = "hazboost-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path} is not a model file: {reason}")]
    Malformed { path: String, reason: String },
    #[error("{path} has format version {got}, this build reads version {FORMAT_VERSION}")]
    Version { path: String, got: u32 },
    #[error("{path} failed checksum verification ({detail}); refusing to load a damaged model")]
    Checksum { path: String, detail: String },
    #[error("{path} contains an invalid model: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    /// Lowercase hex SHA-256 of every byte after the header line.
    checksum: String,
}

/// Writes `model` to `path`, refusing models that would not survive the
/// round trip.
pub fn save_model(model: &BoostedModel, path: &Path) -> Result<(), ModelFileError> {
    let path_str = path.display().to_string();
    rebuilt_grid(model)
        .and_then(|_| validate_model(model))
        .map_err(|reason| ModelFileError::Invalid { path: path_str.clone(), reason })?;
    let mut body = serde_json::to_vec(model).map_err(|e| ModelFileError::Invalid {
        path: path_str.clone(),
        reason: format!("serialization failed: {e}"),
    })?;
    body.push(b'\n');
    let header = Header {
        format: FORMAT_NAME.to_string(),
        format_version: FORMAT_VERSION,
        checksum: sha256_hex(&body),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header is always serializable");
    bytes.push(b'\n');
    bytes.extend_from_slice(&body);
    std::fs::write(path, bytes).map_err(|source| ModelFileError::Io {
        action: "write",
        path: path_str,
        source,
    })
}

/// Reads a model back, verifying format, version, checksum, and structural
/// validity, in that order.
pub fn load_model(path: &Path) -> Result<BoostedModel, ModelFileError> {
    let path_str = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ModelFileError::Io {
        action: "read",
        path: path_str.clone(),
        source,
    })?;
    let header_end = bytes.iter().position(|&b| b == b'\n');
    let (header_bytes, body) = match header_end {
        Some(at) => (&bytes[..at], &bytes[at + 1..]),
        None => {
            return Err(ModelFileError::Checksum {
                path: path_str,
                detail: "file ends before the model payload".into(),
            })
        }
    };
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| ModelFileError::Malformed {
            path: path_str.clone(),
            reason: format!("unreadable header: {e}"),
        })?;
    if header.format != FORMAT_NAME {
        return Err(ModelFileError::Malformed {
            path: path_str,
            reason: format!("header names format {:?}", header.format),
        });
    }
    if header.format_version != FORMAT_VERSION {
        return Err(ModelFileError::Version { path: path_str, got: header.format_version });
    }
    let actual = sha256_hex(body);
    if actual != header.checksum {
        return Err(ModelFileError::Checksum {
            path: path_str,
            detail: format!("expected {}, found {actual}", header.checksum),
        });
    }
    let model: BoostedModel =
        serde_json::from_slice(body).map_err(|e| ModelFileError::Malformed {
            path: path_str.clone(),
            reason: format!("unreadable payload: {e}"),
        })?;
    let model = revalidate(model).map_err(|reason| ModelFileError::Invalid {
        path: path_str,
        reason,
    })?;
    Ok(model)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deserialization bypasses every constructor, so nothing about a parsed
/// model can be trusted yet. Rebuilds the grid through its validating
/// constructor, then checks the remaining parts predictions depend on.
fn revalidate(model: BoostedModel) -> Result<BoostedModel, String> {
    let grid = rebuilt_grid(&model)?;
    validate_model(&model)?;
    Ok(BoostedModel { grid, ..model })
}

fn rebuilt_grid(model: &BoostedModel) -> Result<CandidateGrid, String> {
    CandidateGrid::from_parts(
        model.grid.time_splits().to_vec(),
        (0..model.grid.num_covariates())
            .map(|k| model.grid.cov_splits(k).to_vec())
            .collect(),
        model.grid.mode(),
        model.grid.max_bins(),
    )
    .map_err(|e| format!("grid: {e}"))
}

fn validate_model(model: &BoostedModel) -> Result<(), String> {
    if !model.f0.is_finite() {
        return Err(format!("baseline log-hazard {} is not finite", model.f0));
    }
    if !(model.nu.is_finite() && model.nu > 0.0) {
        return Err(format!("learning rate {} is not positive and finite", model.nu));
    }
    let num_axes = model.grid.num_axes();
    if model.importance_raw.len() != num_axes {
        return Err(format!(
            "importance has {} entries for {num_axes} axes",
            model.importance_raw.len()
        ));
    }
    for (t, tree) in model.trees.iter().enumerate() {
        if tree.nodes.is_empty() {
            return Err(format!("tree {t} has no nodes"));
        }
        for (i, node) in tree.nodes.iter().enumerate() {
            match node {
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(format!("tree {t} node {i}: leaf value {value} not finite"));
                    }
                }
                Node::Split { axis, threshold_idx, left, right, .. } => {
                    let axis = *axis as usize;
                    if axis >= num_axes {
                        return Err(format!(
                            "tree {t} node {i}: axis {axis} out of range for {num_axes} axes"
                        ));
                    }
                    let candidates = model.grid.axis_splits(axis).len();
                    if *threshold_idx as usize >= candidates {
                        return Err(format!(
                            "tree {t} node {i}: threshold {threshold_idx} out of range for \
                             {candidates} candidates on axis {axis}"
                        ));
                    }
                    let n = tree.nodes.len();
                    for (side, child) in [("left", *left), ("right", *right)] {
                        if child as usize >= n || child as usize <= i {
                            return Err(format!(
                                "tree {t} node {i}: {side} child {child} is not a later node"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{fit, BoostConfig, Tree};
    use crate::data::{Dataset, RawEpoch};
    use crate::predict::{predict_hazard, QueryBatch};
    use crate::preprocess::preprocess;
    use crate::quantiles::{build_grid, QuantileMode};

    fn toy_model() -> BoostedModel {
        let rows = [
            ("a", 0.0, 0.5, 0.2, 1),
            ("a", 0.5, 1.3, 0.8, 0),
            ("b", 0.0, 0.7, 0.5, 1),
            ("c", 0.0, 1.0, 0.9, 1),
            ("d", 0.0, 0.3, 0.1, 0),
            ("e", 0.0, 1.1, 0.6, 1),
        ]
        .into_iter()
        .map(|(s, a, b, x, d)| RawEpoch {
            subject: s.to_string(),
            t_start: a,
            t_end: b,
            covariates: vec![x],
            delta: d,
        })
        .collect();
        let data = Dataset::from_rows(rows, vec!["x0".into()]).unwrap();
        let grid = build_grid(&data, 256, QuantileMode::Raw).unwrap();
        let pre = preprocess(&data, &grid).unwrap();
        let config = BoostConfig {
            max_depth: 2,
            num_rounds: 25,
            learning_rate: 0.3,
            ..BoostConfig::default()
        };
        fit(&pre, &config).unwrap()
    }

    fn toy_batch() -> QueryBatch {
        let mut batch = QueryBatch::new(1);
        for (t, x) in [(0.1, 0.15), (0.45, 0.55), (0.9, 0.85), (1.2, f64::NAN), (2.0, 3.0)] {
            batch.push(t, &[x]).unwrap();
        }
        batch
    }

    #[test]
    fn round_trip_reproduces_predictions_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = toy_model();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);

        let batch = toy_batch();
        let before = predict_hazard(&model, &batch).unwrap();
        let after = predict_hazard(&loaded, &batch).unwrap();
        // Bitwise equality, not approximate.
        let bits = |v: &[f64]| v.iter().map(|h| h.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before.hazards), bits(&after.hazards));
    }

    #[test]
    fn bumped_version_is_an_explicit_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&toy_model(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert_ne!(text, bumped);
        std::fs::write(&path, bumped).unwrap();
        match load_model(&path) {
            Err(ModelFileError::Version { got, .. }) => assert_eq!(got, 99),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&toy_model(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for keep in [bytes.len() * 3 / 4, bytes.len() / 2, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..keep]).unwrap();
            assert!(
                matches!(load_model(&path), Err(ModelFileError::Checksum { .. })),
                "truncation to {keep} bytes must fail the checksum"
            );
        }
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&toy_model(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let at = bytes.len() * 2 / 3;
        bytes[at] = if bytes[at] == b'1' { b'2' } else { b'1' };
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(ModelFileError::Checksum { .. })));
    }

    #[test]
    fn alien_files_are_malformed_not_checksum_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, "{\"format\":\"something-else\",\"format_version\":1,\"checksum\":\"\"}\n{}\n").unwrap();
        assert!(matches!(load_model(&path), Err(ModelFileError::Malformed { .. })));
        std::fs::write(&path, "not json at all\n{}\n").unwrap();
        assert!(matches!(load_model(&path), Err(ModelFileError::Malformed { .. })));
    }

    #[test]
    fn structurally_invalid_models_are_rejected_on_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = toy_model();
        model.trees.push(Tree { nodes: vec![] });
        assert!(matches!(
            save_model(&model, &path),
            Err(ModelFileError::Invalid { .. })
        ));

        // A descending grid can only arrive via the file, never via
        // constructors, so smuggle one in with a correct checksum.
        let model = toy_model();
        let mut value = serde_json::to_value(&model).unwrap();
        value["grid"]["time_splits"] = serde_json::json!([2.0, 1.0]);
        let mut body = serde_json::to_vec(&value).unwrap();
        body.push(b'\n');
        let header = serde_json::json!({
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "checksum": sha256_hex(&body),
        });
        let mut bytes = serde_json::to_vec(&header).unwrap();
        bytes.push(b'\n');
        bytes.extend_from_slice(&body);
        std::fs::write(&path, bytes).unwrap();
        match load_model(&path) {
            Err(ModelFileError::Invalid { reason, .. }) => {
                assert!(reason.starts_with("grid:"), "unexpected reason: {reason}");
            }
            other => panic!("expected invalid-model error, got {other:?}"),
        }
    }
}
