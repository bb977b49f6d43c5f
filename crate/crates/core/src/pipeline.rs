//! End-to-end orchestration: turn manifest entries into cached view
//! features, train a model into a checkpoint, and score or evaluate APKs
//! against a saved checkpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::apk::{self, ApkArtifacts, ApkError, ArtifactKind};
use crate::callgraph::{
    abstract_callgraph_with_table, AbstractCallgraph, PermissionMap, PermissionMapError,
    Subsignature,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::dex::{invoke_edges, parse_dex, DexError};
use crate::encoders::View;
use crate::eval::{evaluate_slotted, EvalReport};
use crate::gram::{build_gram_matrix, categorize_stream, OpcodeGramMatrix, DEFAULT_ROW_CAP,
    DEFAULT_WINDOW_LENGTH};
use crate::image::{
    assemble_and_resize, bytes_to_plane, denoise, ViewImage, DEFAULT_ELF_SECTIONS, DEFAULT_TARGET,
    PLANE_WIDTH,
};
use crate::manifest::{Label, SampleManifestEntry};
use crate::model::{FullModel, ModelError, SampleFeatures};
use crate::scalar::Scalar;
use crate::train::{train, write_history_csv, TrainError, TrainOutcome};

/// View-extraction knobs; the model-independent half of a run config.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window_length: usize,
    pub gram_row_cap: usize,
    /// (height, width) of the assembled byte image.
    pub image_target: (usize, usize),
    pub elf_sections: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_length: DEFAULT_WINDOW_LENGTH,
            gram_row_cap: DEFAULT_ROW_CAP,
            image_target: DEFAULT_TARGET,
            elf_sections: DEFAULT_ELF_SECTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Apk(#[from] ApkError),
    #[error(transparent)]
    Dex(#[from] DexError),
    #[error(transparent)]
    PermissionMap(#[from] PermissionMapError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write png: {0}")]
    Png(String),
    #[error("no cached features for sample {0}; run extract first")]
    MissingCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type SensitivityTable = BTreeMap<Subsignature, Vec<u8>>;

/// Compute all three views of one app from its unpacked artifact streams.
pub fn features_from_artifacts(
    sample_id: &str,
    label: Label,
    year: u16,
    artifacts: &ApkArtifacts,
    table: &SensitivityTable,
    cfg: &PipelineConfig,
) -> Result<SampleFeatures, PipelineError> {
    let dexes = parse_dex(&artifacts.dex.bytes, &artifacts.dex.spans())?;

    let mut edges = Vec::new();
    for dex in &dexes {
        edges.extend(invoke_edges(dex));
    }
    let graph = abstract_callgraph_with_table(&edges, table);

    let seq = categorize_stream(&dexes);
    let gram = build_gram_matrix(&seq, cfg.window_length, 1, cfg.gram_row_cap);

    let sections: Vec<&str> = cfg.elf_sections.iter().map(String::as_str).collect();
    let planes = [
        bytes_to_plane(
            &denoise(&artifacts.dex, ArtifactKind::Dex, &sections).bytes,
            PLANE_WIDTH,
        ),
        bytes_to_plane(
            &denoise(&artifacts.xml, ArtifactKind::Xml, &sections).bytes,
            PLANE_WIDTH,
        ),
        bytes_to_plane(
            &denoise(&artifacts.so, ArtifactKind::So, &sections).bytes,
            PLANE_WIDTH,
        ),
    ];
    let image = assemble_and_resize(&planes, cfg.image_target);

    Ok(SampleFeatures {
        sample_id: sample_id.to_string(),
        label,
        year,
        graph,
        gram,
        image,
    })
}

fn cache_path(dir: &Path, sample_id: &str, view: &str) -> PathBuf {
    dir.join(format!("{sample_id}.{view}.bin"))
}

pub fn write_feature_cache(dir: &Path, features: &SampleFeatures) -> std::io::Result<()> {
    std::fs::write(
        cache_path(dir, &features.sample_id, "graph"),
        features.graph.to_cache_bytes(),
    )?;
    std::fs::write(
        cache_path(dir, &features.sample_id, "gram"),
        features.gram.to_cache_bytes(),
    )?;
    std::fs::write(
        cache_path(dir, &features.sample_id, "img"),
        features.image.to_cache_bytes(),
    )
}

/// All three views, or `None` if any cache file is missing or stale.
pub fn read_feature_cache(dir: &Path, entry: &SampleManifestEntry) -> Option<SampleFeatures> {
    let read = |view: &str| std::fs::read(cache_path(dir, &entry.sample_id, view)).ok();
    let graph = AbstractCallgraph::from_cache_bytes(&read("graph")?).ok()?;
    let gram = OpcodeGramMatrix::from_cache_bytes(&read("gram")?).ok()?;
    let image = ViewImage::from_cache_bytes(&read("img")?).ok()?;
    Some(SampleFeatures {
        sample_id: entry.sample_id.clone(),
        label: entry.label,
        year: entry.year,
        graph,
        gram,
        image,
    })
}

#[derive(Debug, Default)]
pub struct ExtractReport {
    pub extracted: Vec<String>,
    pub skipped: Vec<String>,
    /// (sample_id, error) for every app that failed; the rest still extract.
    pub failures: Vec<(String, String)>,
}

/// Extract and cache features for every manifest entry, in parallel.
/// Entries whose cache files are already valid are skipped, so a rerun over
/// an unchanged corpus rewrites nothing.
pub fn run_extract(
    entries: &[SampleManifestEntry],
    map: &PermissionMap,
    cfg: &PipelineConfig,
    cache_dir: &Path,
    emit_png: bool,
) -> Result<ExtractReport, PipelineError> {
    std::fs::create_dir_all(cache_dir)?;
    let table = crate::callgraph::build_subsignature_table(map)?;

    enum Status {
        Extracted,
        Skipped,
        Failed(String),
    }

    let emit = |features: &SampleFeatures| -> Result<(), PipelineError> {
        let path = cache_dir.join(format!("{}.png", features.sample_id));
        if !path.exists() {
            features
                .image
                .write_png(&path)
                .map_err(|e| PipelineError::Png(e.to_string()))?;
        }
        Ok(())
    };

    let statuses: Vec<(String, Status)> = entries
        .par_iter()
        .map(|entry| {
            let outcome = (|| -> Result<Status, PipelineError> {
                if let Some(features) = read_feature_cache(cache_dir, entry) {
                    if emit_png {
                        emit(&features)?;
                    }
                    return Ok(Status::Skipped);
                }
                let artifacts = apk::extract_artifacts(&entry.apk_path)?;
                let features = features_from_artifacts(
                    &entry.sample_id,
                    entry.label,
                    entry.year,
                    &artifacts,
                    &table,
                    cfg,
                )?;
                write_feature_cache(cache_dir, &features)?;
                if emit_png {
                    emit(&features)?;
                }
                Ok(Status::Extracted)
            })();
            let status = outcome.unwrap_or_else(|e| Status::Failed(e.to_string()));
            (entry.sample_id.clone(), status)
        })
        .collect();

    let mut report = ExtractReport::default();
    for (id, status) in statuses {
        match status {
            Status::Extracted => report.extracted.push(id),
            Status::Skipped => report.skipped.push(id),
            Status::Failed(e) => report.failures.push((id, e)),
        }
    }
    Ok(report)
}

/// Load previously extracted features for every entry; a missing cache is an
/// error rather than a silent drop.
pub fn load_features(
    entries: &[SampleManifestEntry],
    cache_dir: &Path,
) -> Result<Vec<SampleFeatures>, PipelineError> {
    entries
        .iter()
        .map(|entry| {
            read_feature_cache(cache_dir, entry)
                .ok_or_else(|| PipelineError::MissingCache(entry.sample_id.clone()))
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
}

/// Train a fresh model on the features and persist the checkpoint (with the
/// full run config embedded) plus a per-epoch history CSV.
pub fn run_train<T: Scalar>(
    features: &[SampleFeatures],
    run: &RunConfig,
    out_dir: &Path,
) -> Result<TrainArtifacts, PipelineError> {
    run.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let model: FullModel<T> = FullModel::new(run.model_config(), &mut rng);
    let outcome = train(&model, features, &run.train_config(), &mut rng)?;
    let checkpoint_path = out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint_path, &model.params(false), &run.to_text())?;
    let history_path = out_dir.join("history.csv");
    write_history_csv(&history_path, &outcome.history)?;
    Ok(TrainArtifacts {
        outcome,
        checkpoint_path,
        history_path,
    })
}

/// Rebuild the model a checkpoint was trained with and load its parameters.
pub fn load_model<T: Scalar>(
    checkpoint_path: &Path,
) -> Result<(FullModel<T>, RunConfig), PipelineError> {
    let ckpt = load_checkpoint::<T>(checkpoint_path)?;
    let run = RunConfig::parse(&ckpt.config_text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let model: FullModel<T> = FullModel::new(run.model_config(), &mut rng);
    ckpt.apply(&model.params(false))?;
    Ok((model, run))
}

#[derive(Debug)]
pub struct Prediction {
    pub sample_id: String,
    pub label: Label,
    /// [malicious, benign] probabilities.
    pub probs: [f64; 2],
    pub degenerate_views: Vec<View>,
}

/// Score a single APK against a checkpoint.
pub fn run_predict<T: Scalar>(
    checkpoint_path: &Path,
    apk_path: &Path,
    map: &PermissionMap,
) -> Result<Prediction, PipelineError> {
    let (model, run) = load_model::<T>(checkpoint_path)?;
    let table = crate::callgraph::build_subsignature_table(map)?;
    let artifacts = apk::extract_artifacts(apk_path)?;
    let sample_id = apk_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".to_string());
    // Label and year are manifest bookkeeping; scoring never reads them.
    let features = features_from_artifacts(
        &sample_id,
        Label::Benign,
        0,
        &artifacts,
        &table,
        &run.pipeline_config(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let out = model.forward(&features, false, &mut rng)?;
    let probs = out.probs.to_vec();
    Ok(Prediction {
        sample_id,
        label: out.predicted_label(),
        probs: [probs[0].into_f64(), probs[1].into_f64()],
        degenerate_views: out.degenerate_views,
    })
}

/// Score every sample and report metrics per manifest year; temporal decay
/// summaries appear once at least two years are present.
pub fn run_eval<T: Scalar>(
    checkpoint_path: &Path,
    features: &[SampleFeatures],
) -> Result<EvalReport, PipelineError> {
    let (model, run) = load_model::<T>(checkpoint_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut outcomes = Vec::with_capacity(features.len());
    for f in features {
        let out = model.forward(f, false, &mut rng)?;
        outcomes.push((f.year, f.label, out.predicted_label()));
    }
    Ok(evaluate_slotted(&outcomes))
}
