//! Versioned JSON artifacts, content fingerprints, and plot-data
//! writers. Every artifact carries a `schema` field; checkpoints embed
//! the fingerprint of the artifact they were derived from so stages
//! refuse mismatched inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::NeuronReport;
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::intervene::{Audience, EditMode, InterventionSpec, SuppressMode};
use crate::rec::{RecommenderModel, TrainConfig};
use crate::sae::{SaePair, SaeTrainConfig};
use crate::scalar::Scalar;

pub const DATASET_SCHEMA: &str = "dataset/1";
pub const MODEL_SCHEMA: &str = "recmodel/1";
pub const SAE_SCHEMA: &str = "sae/1";
pub const NEURONS_SCHEMA: &str = "neurons/1";
pub const INTERVENTION_SCHEMA: &str = "intervention/1";
pub const GROUND_TRUTH_SCHEMA: &str = "synthground/1";
pub const MANIFEST_SCHEMA: &str = "manifest/1";

/// Hex SHA-256 of a byte string.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn fingerprint_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint_bytes(&bytes))
}

/// Write a pretty-printed JSON document (with trailing newline) and
/// return the fingerprint of the written bytes. Output is byte-stable
/// for identical inputs.
pub fn save_json<A: Serialize>(path: &Path, artifact: &A) -> Result<String> {
    let mut bytes =
        serde_json::to_vec_pretty(artifact).map_err(|e| Error::Data(format!("serialize: {e}")))?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint_bytes(&bytes))
}

/// Load a JSON document plus the fingerprint of its raw bytes.
pub fn load_json<A: DeserializeOwned>(path: &Path) -> Result<(A, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let artifact = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((artifact, fingerprint_bytes(&bytes)))
}

pub fn check_schema(actual: &str, expected: &str, path: &Path) -> Result<()> {
    if actual != expected {
        return Err(Error::Data(format!(
            "{}: schema '{actual}' where '{expected}' was expected",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetArtifact {
    pub schema: String,
    pub dataset: InteractionDataset,
}

impl DatasetArtifact {
    pub fn new(dataset: InteractionDataset) -> Self {
        DatasetArtifact {
            schema: DATASET_SCHEMA.into(),
            dataset,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (doc, fp): (Self, String) = load_json(path)?;
        check_schema(&doc.schema, DATASET_SCHEMA, path)?;
        doc.dataset.check_invariants()?;
        Ok((doc, fp))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArtifact<T> {
    pub schema: String,
    /// Fingerprint of the dataset artifact this model was trained on.
    pub dataset_fingerprint: String,
    pub train_config: TrainConfig<T>,
    pub kind: crate::rec::RecommenderKind,
    pub model: RecommenderModel<T>,
}

impl<T: Scalar> ModelArtifact<T> {
    pub fn new(
        model: RecommenderModel<T>,
        train_config: TrainConfig<T>,
        dataset_fingerprint: String,
    ) -> Self {
        ModelArtifact {
            schema: MODEL_SCHEMA.into(),
            dataset_fingerprint,
            train_config,
            kind: model.kind(),
            model,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (doc, fp): (Self, String) = load_json(path)?;
        check_schema(&doc.schema, MODEL_SCHEMA, path)?;
        doc.model.validate()?;
        Ok((doc, fp))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaeArtifact<T> {
    pub schema: String,
    /// Fingerprint of the recommender checkpoint the SAE was fitted to.
    pub recommender_fingerprint: String,
    pub train_config: SaeTrainConfig<T>,
    pub saes: SaePair<T>,
}

impl<T: Scalar> SaeArtifact<T> {
    pub fn new(
        saes: SaePair<T>,
        train_config: SaeTrainConfig<T>,
        recommender_fingerprint: String,
    ) -> Self {
        SaeArtifact {
            schema: SAE_SCHEMA.into(),
            recommender_fingerprint,
            train_config,
            saes,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (doc, fp): (Self, String) = load_json(path)?;
        check_schema(&doc.schema, SAE_SCHEMA, path)?;
        for sae in doc.saes.models() {
            sae.validate()?;
        }
        Ok((doc, fp))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthArtifact {
    pub schema: String,
    pub ground_truth: crate::synth::GroundTruth,
}

impl GroundTruthArtifact {
    pub fn new(ground_truth: crate::synth::GroundTruth) -> Self {
        GroundTruthArtifact {
            schema: GROUND_TRUTH_SCHEMA.into(),
            ground_truth,
        }
    }
}

// --- neuron export -------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeuronExportItem {
    pub item_id: String,
    pub title: String,
    pub labels: Vec<String>,
    pub activation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeuronExportEntry {
    pub neuron: usize,
    pub label: Option<String>,
    pub top_items: Vec<NeuronExportItem>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeuronExport {
    pub schema: String,
    pub neurons: Vec<NeuronExportEntry>,
}

/// Top-activating-item lists resolved to raw ids and titles, ready for
/// external labeling.
pub fn neuron_export<T: Scalar>(
    reports: &[NeuronReport<T>],
    dataset: &InteractionDataset,
    k: usize,
) -> NeuronExport {
    let neurons = reports
        .iter()
        .map(|r| NeuronExportEntry {
            neuron: r.neuron_index,
            label: r.assigned_label.clone(),
            top_items: r
                .top_items
                .iter()
                .take(k)
                .map(|&(item, activation)| {
                    let meta = dataset.item_metadata.get(item).and_then(Option::as_ref);
                    NeuronExportItem {
                        item_id: dataset.item_ids[item].clone(),
                        title: meta.map_or(String::new(), |m| m.title.clone()),
                        labels: meta.map_or(Vec::new(), |m| m.labels.iter().cloned().collect()),
                        activation: activation.to_f64().unwrap_or(f64::NAN),
                    }
                })
                .collect(),
        })
        .collect();
    NeuronExport {
        schema: NEURONS_SCHEMA.into(),
        neurons,
    }
}

/// Label file: `neuron_index <tab> label` per line.
pub fn load_neuron_labels(path: &Path) -> Result<BTreeMap<usize, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, '\t');
        let neuron = fields
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or(Error::Format {
                line: idx + 1,
                message: "expected `neuron_index<TAB>label`".into(),
            })?;
        let label = fields.next().map(str::trim).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Format {
                line: idx + 1,
                message: "empty label".into(),
            });
        }
        out.insert(neuron, label.to_owned());
    }
    Ok(out)
}

// --- intervention request document ---------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub audience: Audience,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InterventionRequest {
    /// Sweep one neuron of an item's latent vector and track rank
    /// trajectories per audience segment.
    Promote {
        item: usize,
        neuron: usize,
        values: Vec<f64>,
        #[serde(default = "default_edit_mode")]
        edit_mode: EditMode,
        segments: Vec<SegmentSpec>,
        #[serde(default = "default_top_n")]
        top_n: usize,
    },
    /// Edit each cohort user's latent vector and report label exposure
    /// in their top-N before and after.
    Suppress {
        cohort: Audience,
        neuron: usize,
        suppress: SuppressMode,
        label: String,
        #[serde(default = "default_suppress_top_n")]
        top_n: usize,
    },
    /// Apply arbitrary edits to one entity and report the resulting
    /// embedding and rank changes for an audience.
    Apply {
        spec: InterventionSpec<f64>,
        #[serde(default = "default_top_n")]
        top_n: usize,
    },
}

fn default_edit_mode() -> EditMode {
    EditMode::Set
}

fn default_top_n() -> usize {
    30
}

fn default_suppress_top_n() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterventionDoc {
    pub schema: String,
    pub request: InterventionRequest,
}

impl InterventionDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let (doc, _): (Self, String) = load_json(path)?;
        check_schema(&doc.schema, INTERVENTION_SCHEMA, path)?;
        Ok(doc)
    }
}

// --- run manifest ---------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path → fingerprint.
    pub inputs: BTreeMap<String, String>,
    /// Output path → fingerprint.
    pub outputs: BTreeMap<String, String>,
    /// Wall time is informational and excluded from idempotency checks.
    pub wall_time_ms: u64,
}

// --- CSV ------------------------------------------------------------------

/// Write a CSV file with a header row; rows are pre-joined strings.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
