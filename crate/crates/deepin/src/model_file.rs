//! Versioned JSON model documents.
//!
//! Reals are written in the shortest decimal form that parses back to the
//! same bits, so a save/load round trip is exact.

use std::fs;
use std::path::Path;

use deepin_core::trainer::Thresholds;
use deepin_core::{DeepInModel, Matrix, PenaltyConfig, RepMatrix, RepuNetwork, Task};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    Regression,
    Classification,
}

impl From<Task> for TaskName {
    fn from(t: Task) -> Self {
        match t {
            Task::Regression => TaskName::Regression,
            Task::Classification => TaskName::Classification,
        }
    }
}

impl From<TaskName> for Task {
    fn from(t: TaskName) -> Self {
        match t {
            TaskName::Regression => Task::Regression,
            TaskName::Classification => Task::Classification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub shape: [usize; 2],
    /// Row-major entries.
    pub values: Vec<f64>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixDoc {
            shape: [m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> std::result::Result<Matrix, String> {
        Matrix::from_vec(self.shape[0], self.shape[1], self.values.clone())
            .map_err(|_| format!("matrix of shape {:?} holds {} values", self.shape, self.values.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    #[serde(rename = "W")]
    pub w: MatrixDoc,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasksDoc {
    pub rows: Vec<bool>,
    pub cols: Vec<bool>,
    pub theta: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThresholdsDoc {
    Fixed { tau1: f64, tau2: f64, tau3: f64 },
    Relative { group: f64, weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyDoc {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub thresholds: ThresholdsDoc,
}

impl From<&PenaltyConfig> for PenaltyDoc {
    fn from(c: &PenaltyConfig) -> Self {
        PenaltyDoc {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3: c.lambda3,
            lambda4: c.lambda4,
            thresholds: match c.thresholds {
                Thresholds::Fixed { tau1, tau2, tau3 } => ThresholdsDoc::Fixed { tau1, tau2, tau3 },
                Thresholds::Relative { group, weight } => ThresholdsDoc::Relative { group, weight },
            },
        }
    }
}

impl From<&PenaltyDoc> for PenaltyConfig {
    fn from(d: &PenaltyDoc) -> Self {
        PenaltyConfig::new(d.lambda1, d.lambda2, d.lambda3, d.lambda4).with_thresholds(match d.thresholds {
            ThresholdsDoc::Fixed { tau1, tau2, tau3 } => Thresholds::Fixed { tau1, tau2, tau3 },
            ThresholdsDoc::Relative { group, weight } => Thresholds::Relative { group, weight },
        })
    }
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub task: TaskName,
    pub p: u32,
    #[serde(rename = "B")]
    pub b: MatrixDoc,
    pub layers: Vec<LayerDoc>,
    pub masks: MasksDoc,
    pub penalty: PenaltyDoc,
    pub seed: u64,
}

/// A model together with the penalty and seed it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: DeepInModel,
    pub penalty: PenaltyConfig,
    pub seed: u64,
}

impl ModelDocument {
    pub fn from_model(model: &DeepInModel, penalty: &PenaltyConfig, seed: u64) -> Self {
        let net = &model.net;
        let layers = (0..net.n_layers())
            .map(|l| {
                let (r, c) = net.weight_shape(l);
                LayerDoc {
                    w: MatrixDoc {
                        shape: [r, c],
                        values: net.weights(l).to_vec(),
                    },
                    a: net.bias(l).to_vec(),
                }
            })
            .collect();
        ModelDocument {
            format_version: FORMAT_VERSION,
            task: model.task.into(),
            p: net.power(),
            b: MatrixDoc::from_matrix(model.rep.matrix()),
            layers,
            masks: MasksDoc {
                rows: model.rep.active_rows().to_vec(),
                cols: model.rep.active_cols().to_vec(),
                theta: model.theta_active().to_vec(),
            },
            penalty: penalty.into(),
            seed,
        }
    }

    pub fn into_model(self) -> std::result::Result<SavedModel, String> {
        if self.layers.is_empty() {
            return Err("no layers".into());
        }
        let b = self.b.to_matrix()?;
        let mut dims = vec![b.rows()];
        let mut params = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let [r, c] = layer.w.shape;
            if c != dims[l] {
                return Err(format!("layer {l}: W has {c} columns, expected {}", dims[l]));
            }
            if layer.w.values.len() != r * c {
                return Err(format!("layer {l}: W of shape [{r}, {c}] holds {} values", layer.w.values.len()));
            }
            if layer.a.len() != r {
                return Err(format!("layer {l}: a has {} entries, expected {r}", layer.a.len()));
            }
            dims.push(r);
            params.extend_from_slice(&layer.w.values);
            params.extend_from_slice(&layer.a);
        }
        let net = RepuNetwork::from_params(&dims, self.p, params).map_err(|e| e.to_string())?;
        let rep = RepMatrix::with_masks(b, self.masks.rows, self.masks.cols).map_err(|e| e.to_string())?;
        let mut model = DeepInModel::new(rep, net, self.task.into()).map_err(|e| e.to_string())?;
        model.set_theta_mask(self.masks.theta).map_err(|e| e.to_string())?;
        Ok(SavedModel {
            model,
            penalty: (&self.penalty).into(),
            seed: self.seed,
        })
    }
}

pub fn save_model(model: &DeepInModel, penalty: &PenaltyConfig, seed: u64, path: &Path) -> Result<()> {
    if !model.rep.matrix().is_finite() || model.net.params().iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::Contract("save_model: model has non-finite weights".into()));
    }
    let doc = ModelDocument::from_model(model, penalty, seed);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| HarnessError::Contract(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        ParseFailure::Malformed(message) => HarnessError::MalformedModel {
            path: path.to_path_buf(),
            message,
        },
        ParseFailure::Version(message) => HarnessError::ModelVersion {
            path: path.to_path_buf(),
            message,
        },
    })
}

enum ParseFailure {
    Malformed(String),
    Version(String),
}

fn parse_model(text: &str) -> std::result::Result<SavedModel, ParseFailure> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ParseFailure::Malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| ParseFailure::Malformed("missing format_version".into()))?;
    let version = version
        .as_u64()
        .ok_or_else(|| ParseFailure::Malformed("format_version must be a non-negative integer".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(ParseFailure::Version(format!(
            "unsupported format_version {version}; this build reads version {FORMAT_VERSION}"
        )));
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        if msg.starts_with("unknown field") {
            ParseFailure::Version(format!(
                "{msg}; not part of format_version {FORMAT_VERSION} (written by a newer version?)"
            ))
        } else {
            ParseFailure::Malformed(msg)
        }
    })?;
    doc.into_model().map_err(ParseFailure::Malformed)
}
