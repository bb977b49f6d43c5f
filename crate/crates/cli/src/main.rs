//! Command-line front end: extract cached view features from APK corpora,
//! train a classifier into a checkpoint, and score or evaluate APKs.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use triview_core::callgraph::PermissionMap;
use triview_core::config::RunConfig;
use triview_core::manifest::{load_manifest, SampleManifestEntry};
use triview_core::pipeline::{
    load_features, load_model, run_eval, run_extract, run_predict, run_train, ExtractReport,
};

#[derive(Parser)]
#[command(name = "triview", version, about = "Multi-view Android app classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract and cache the three view features for every manifest entry.
    Extract(ExtractArgs),
    /// Extract (if needed), train a model and save checkpoint plus history.
    Train(TrainArgs),
    /// Score a single APK against a checkpoint.
    Predict(PredictArgs),
    /// Evaluate a checkpoint over a manifest, reporting per-year metrics.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key=value lines); built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured opcode window length.
    #[arg(long)]
    window_length: Option<usize>,
}

#[derive(Args)]
struct MapArg {
    /// Permission map (TSV) driving callgraph sensitivity vectors.
    #[arg(long, default_value = "data/permission_map.tsv")]
    permission_map: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// CSV of sample_id,apk_path,label,year.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for per-sample feature caches.
    #[arg(long)]
    cache_dir: PathBuf,
    /// Also write one PNG per sample next to its cache files.
    #[arg(long)]
    emit_png: bool,
    #[command(flatten)]
    map: MapArg,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    /// Directory receiving model.ckpt and history.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Train only the fusion and classifier parameters.
    #[arg(long)]
    freeze_encoders: bool,
    #[command(flatten)]
    map: MapArg,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    apk: PathBuf,
    #[command(flatten)]
    map: MapArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    cache_dir: PathBuf,
    #[command(flatten)]
    map: MapArg,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Extract(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn resolve_config(args: &ConfigArgs, freeze_encoders: bool) -> Result<RunConfig> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        run.set("seed", &seed.to_string())?;
    }
    if let Some(w) = args.window_length {
        run.set("window_length", &w.to_string())?;
    }
    if freeze_encoders {
        run.set("freeze_encoders", "true")?;
    }
    run.validate()?;
    Ok(run)
}

fn load_map(path: &PathBuf) -> Result<PermissionMap> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading permission map {}", path.display()))?;
    Ok(PermissionMap::parse(&text)?)
}

fn read_manifest(path: &PathBuf) -> Result<Vec<SampleManifestEntry>> {
    Ok(load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?)
}

fn extract_summary(report: &ExtractReport) -> String {
    let mut out = format!(
        "extracted {} skipped {} failed {}",
        report.extracted.len(),
        report.skipped.len(),
        report.failures.len()
    );
    for (id, error) in &report.failures {
        out.push_str(&format!("\n  {id}: {error}"));
    }
    out
}

/// Extract into the cache and keep only the entries that now have features.
/// Progress goes to stderr so callers own stdout.
fn extract_and_filter(
    entries: Vec<SampleManifestEntry>,
    map: &PermissionMap,
    run: &RunConfig,
    cache_dir: &PathBuf,
    emit_png: bool,
) -> Result<Vec<SampleManifestEntry>> {
    let report = run_extract(&entries, map, &run.pipeline_config(), cache_dir, emit_png)?;
    eprintln!("{}", extract_summary(&report));
    let failed: Vec<&str> = report.failures.iter().map(|(id, _)| id.as_str()).collect();
    let kept: Vec<SampleManifestEntry> = entries
        .into_iter()
        .filter(|e| !failed.contains(&e.sample_id.as_str()))
        .collect();
    if kept.is_empty() {
        bail!("no sample yielded features");
    }
    Ok(kept)
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let run = resolve_config(&args.config, false)?;
    let entries = read_manifest(&args.manifest)?;
    let map = load_map(&args.map.permission_map)?;
    let report = run_extract(
        &entries,
        &map,
        &run.pipeline_config(),
        &args.cache_dir,
        args.emit_png,
    )?;
    println!("{}", extract_summary(&report));
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = resolve_config(&args.config, args.freeze_encoders)?;
    let entries = read_manifest(&args.manifest)?;
    let map = load_map(&args.map.permission_map)?;
    let entries = extract_and_filter(entries, &map, &run, &args.cache_dir, false)?;
    let features = load_features(&entries, &args.cache_dir)?;
    let artifacts = run_train::<f32>(&features, &run, &args.out_dir)?;
    let best = &artifacts.outcome.history[artifacts.outcome.best_epoch];
    println!(
        "trained {} epochs, best epoch {} (val_loss {:.6}, val_acc {:.4})",
        artifacts.outcome.history.len(),
        best.epoch,
        best.val_loss,
        best.val_acc
    );
    println!("checkpoint {}", artifacts.checkpoint_path.display());
    println!("history {}", artifacts.history_path.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let map = load_map(&args.map.permission_map)?;
    let prediction = run_predict::<f32>(&args.checkpoint, &args.apk, &map).with_context(|| {
        format!(
            "scoring {} against {}",
            args.apk.display(),
            args.checkpoint.display()
        )
    })?;
    let degenerate: Vec<String> = prediction
        .degenerate_views
        .iter()
        .map(|v| format!("{v:?}"))
        .collect();
    let out = json!({
        "sample_id": prediction.sample_id,
        "label": prediction.label.as_str(),
        "probs": {
            "malicious": prediction.probs[0],
            "benign": prediction.probs[1],
        },
        "degenerate_views": degenerate,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let map = load_map(&args.map.permission_map)?;
    let (_, run) = load_model::<f32>(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let entries = read_manifest(&args.manifest)?;
    let entries = extract_and_filter(entries, &map, &run, &args.cache_dir, false)?;
    let features = load_features(&entries, &args.cache_dir)?;
    let report = run_eval::<f32>(&args.checkpoint, &features)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
