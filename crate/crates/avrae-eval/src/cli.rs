//! Pipeline stages behind the `avrae-eval` binary: ingest → run → score →
//! report. Every stage reads and writes files, so each is independently
//! re-runnable from its predecessor's artifact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::HarnessConfig;
use crate::dataset::{load_records, record_to_value, FilterReport, FireballRecord};
use crate::digest::sha256_hex;
use crate::inference::{
    run_batch, Backend, BackendConfig, GenerationResult, HttpBackend, MockBackend,
};
use crate::metrics::{aggregate, score_row, summary_to_csv, summary_to_json, EvalRow, ReportSummary};
use crate::prompts::{expand_with, verify_templates, TemplateSet, TEMPLATE_IDS};
use crate::state::{ReferenceOutcome, Verdict};

/// Stage errors mapped to process exit codes: unreadable input exits 2,
/// backend misconfiguration exits 3, anything else exits 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    UnreadableInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend misconfiguration: {0}")]
    BackendMisconfigured(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnreadableInput { .. } => 2,
            CliError::BackendMisconfigured(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

fn unreadable(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::UnreadableInput { path: path.to_path_buf(), source }
}

/// Provenance sidecar written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: String,
    pub status: String,
    pub created_at: String,
    pub finished_at: Option<String>,
    pub input_digests: BTreeMap<String, String>,
    #[serde(default)]
    pub template_digests: BTreeMap<String, String>,
    /// Backend parameters as configured. The bearer token never appears
    /// here: config carries only the name of the environment variable.
    pub backend: Option<BackendConfig>,
    pub counts: BTreeMap<String, u64>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn write_manifest(artifact: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).context("serialize manifest")?;
    std::fs::write(manifest_path(artifact), text)
        .with_context(|| format!("write manifest for {}", artifact.display()))?;
    Ok(())
}

fn read_manifest(artifact: &Path) -> Option<RunManifest> {
    let text = std::fs::read_to_string(manifest_path(artifact)).ok()?;
    serde_json::from_str(&text).ok()
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(unreadable(path))?;
    Ok(sha256_hex(&bytes))
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn new_manifest(run_id: String, stage: &str) -> RunManifest {
    RunManifest {
        run_id,
        stage: stage.to_string(),
        status: "running".to_string(),
        created_at: now_rfc3339(),
        finished_at: None,
        input_digests: BTreeMap::new(),
        template_digests: BTreeMap::new(),
        backend: None,
        counts: BTreeMap::new(),
    }
}

fn finalize_manifest(artifact: &Path, mut manifest: RunManifest) -> Result<(), CliError> {
    manifest.status = "complete".to_string();
    manifest.finished_at = Some(now_rfc3339());
    write_manifest(artifact, &manifest)
}

/// Loads, cleans, and filters a FIREBALL-format file; writes normalized
/// records plus a `<out>.report.json` filter report.
pub fn cmd_ingest(input: &Path, out: &Path, cfg: &HarnessConfig) -> Result<FilterReport, CliError> {
    let run_id = file_digest(input)?[..12].to_string();
    let (records, report) = load_records(input, &cfg.dataset).map_err(unreadable(input))?;

    let file = File::create(out).with_context(|| format!("create {}", out.display()))?;
    let mut writer = BufWriter::new(file);
    for record in &records {
        serde_json::to_writer(&mut writer, &record_to_value(record)).context("write record")?;
        writer.write_all(b"\n").context("write record")?;
    }
    writer.flush().context("flush records")?;

    let report_path = report_sidecar_path(out);
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).context("serialize report")?)
        .with_context(|| format!("write {}", report_path.display()))?;

    let mut manifest = new_manifest(run_id, "ingest");
    manifest.input_digests.insert(input.display().to_string(), file_digest(input)?);
    manifest.counts.insert("kept".into(), report.kept as u64);
    manifest.counts.insert("dropped".into(), report.dropped.len() as u64);
    finalize_manifest(out, manifest)?;
    Ok(report)
}

pub fn report_sidecar_path(records_out: &Path) -> PathBuf {
    let mut name = records_out.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    records_out.with_file_name(name)
}

pub fn corpus_bleu_sidecar_path(rows_out: &Path) -> PathBuf {
    let mut name = rows_out.file_name().unwrap_or_default().to_os_string();
    name.push(".corpus_bleu.json");
    rows_out.with_file_name(name)
}

/// `1-5`, `3`, or `2,4`; returns ascending unique template ids.
pub fn parse_template_spec(spec: &str) -> anyhow::Result<Vec<u8>> {
    let mut ids = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: u8 = lo.trim().parse().context("template range start")?;
            let hi: u8 = hi.trim().parse().context("template range end")?;
            anyhow::ensure!(lo <= hi, "template range {part} is reversed");
            ids.extend(lo..=hi);
        } else {
            ids.push(part.parse().context("template id")?);
        }
    }
    ids.sort_unstable();
    ids.dedup();
    anyhow::ensure!(!ids.is_empty(), "no template ids in spec '{spec}'");
    for id in &ids {
        anyhow::ensure!(TEMPLATE_IDS.contains(id), "template id {id} out of range 1-5");
    }
    Ok(ids)
}

pub struct RunParams {
    pub records: PathBuf,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
    pub template_ids: Vec<u8>,
    pub resume: bool,
}

pub fn default_checkpoint_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".checkpoint.jsonl");
    out.with_file_name(name)
}

/// Builds the configured backend. `mock:echo-gold` answers every instance
/// with the record's gold command wrapped in `{{}}`; anything else must be an
/// http(s) chat-completions base URL.
fn build_backend(
    cfg: &BackendConfig,
    records: &[FireballRecord],
    template_ids: &[u8],
) -> Result<Box<dyn Backend>, CliError> {
    if cfg.base_url == "mock:echo-gold" {
        let golds = records.iter().map(|r| (r.record_id.clone(), r.gold_command.clone()));
        return Ok(Box::new(MockBackend::echo_gold(golds, template_ids)));
    }
    if cfg.base_url.starts_with("mock:") {
        return Err(CliError::BackendMisconfigured(format!(
            "unknown mock backend '{}' (supported: mock:echo-gold)",
            cfg.base_url
        )));
    }
    let backend = HttpBackend::new(cfg).map_err(|e| CliError::BackendMisconfigured(e.to_string()))?;
    Ok(Box::new(backend))
}

/// Expands prompts for the selected templates and runs the batch against the
/// backend, writing results ordered by instance id.
pub fn cmd_run(params: &RunParams, cfg: &HarnessConfig) -> Result<Vec<GenerationResult>, CliError> {
    let records_digest = file_digest(&params.records)?;
    let (records, _) = load_records(&params.records, &cfg.dataset).map_err(unreadable(&params.records))?;
    let templates = TemplateSet::builtin().map_err(|e| anyhow::anyhow!(e))?;
    let template_digests = verify_templates().map_err(|e| anyhow::anyhow!(e))?;

    let mut backend_cfg = cfg.backend.clone();
    if backend_cfg.model_name.is_empty() && backend_cfg.base_url.starts_with("mock:") {
        backend_cfg.model_name = "mock-echo".to_string();
    }
    let backend = build_backend(&backend_cfg, &records, &params.template_ids)?;

    if params.checkpoint.exists() && !params.resume {
        return Err(CliError::Other(anyhow::anyhow!(
            "checkpoint {} already exists; pass --resume to continue it or remove it first",
            params.checkpoint.display()
        )));
    }

    let instances = expand_with(&records, &templates, &params.template_ids, &cfg.prompts)
        .map_err(|e| anyhow::anyhow!(e))?;

    let template_tag = params.template_ids.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
    let run_id = sha256_hex(
        format!("{records_digest}|{template_tag}|{}", backend_cfg.model_name).as_bytes(),
    )[..12]
        .to_string();

    let mut manifest = new_manifest(run_id, "run");
    manifest.input_digests.insert("records".into(), records_digest);
    manifest.template_digests = template_digests;
    manifest.backend = Some(backend_cfg.clone());
    manifest.counts.insert("records".into(), records.len() as u64);
    manifest.counts.insert("instances".into(), instances.len() as u64);
    write_manifest(&params.out, &manifest)?;

    let runtime = tokio::runtime::Runtime::new().context("create tokio runtime")?;
    let results = runtime
        .block_on(run_batch(&instances, &backend_cfg, backend.as_ref(), &params.checkpoint))
        .context("batch run")?;

    write_jsonl(&params.out, &results)?;
    manifest.counts.insert("results".into(), results.len() as u64);
    finalize_manifest(&params.out, manifest)?;
    Ok(results)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item).context("serialize line")?;
        writer.write_all(b"\n").context("write line")?;
    }
    writer.flush().context("flush")?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(unreadable(path))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(unreadable(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{}:{} is not a valid record", path.display(), idx + 1))?;
        items.push(item);
    }
    Ok(items)
}

/// Row for a result whose source record is missing: scored as no-command,
/// with similarities zeroed since there is no gold to compare against.
fn orphan_row(result: &GenerationResult) -> EvalRow {
    let extracted = crate::command::extract_command(&result.raw_text);
    let format_pass = extracted.as_deref().is_some_and(crate::command::format_check);
    EvalRow {
        instance_id: result.instance_id.clone(),
        model_name: result.model_name.clone(),
        template_id: crate::metrics::template_id_of(&result.instance_id).unwrap_or(0),
        extracted_command: extracted,
        format_pass,
        reference: ReferenceOutcome {
            verdict: Verdict::NoCommand,
            detail: "no source record for this result".to_string(),
        },
        bleu: 0.0,
        rouge1_f1: 0.0,
        rouge2_f1: 0.0,
        rouge_l_f1: 0.0,
        perplexity: result
            .token_logprobs
            .as_deref()
            .and_then(|lps| crate::metrics::perplexity(lps).ok()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    /// Also write pooled corpus-level BLEU per (model, prompt) to
    /// `<out>.corpus_bleu.json`. The table's bleu column stays sentence-level.
    pub corpus_bleu: bool,
}

/// Scores every generation result against its source record and writes one
/// row per result.
pub fn cmd_score(
    results_path: &Path,
    records_path: &Path,
    out: &Path,
    cfg: &HarnessConfig,
) -> Result<usize, CliError> {
    cmd_score_with(results_path, records_path, out, cfg, &ScoreOptions::default())
}

pub fn cmd_score_with(
    results_path: &Path,
    records_path: &Path,
    out: &Path,
    cfg: &HarnessConfig,
    opts: &ScoreOptions,
) -> Result<usize, CliError> {
    let results: Vec<GenerationResult> = read_jsonl(results_path)?;
    let (records, _) = load_records(records_path, &cfg.dataset).map_err(unreadable(records_path))?;
    let by_id: BTreeMap<&str, &FireballRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();

    let run_id = match read_manifest(results_path) {
        Some(manifest) => {
            if let Some(expected) = manifest.input_digests.get("records") {
                let actual = file_digest(records_path)?;
                if expected != &actual {
                    tracing::warn!(
                        "records file {} does not match the digest recorded for run {}",
                        records_path.display(),
                        manifest.run_id
                    );
                }
            }
            manifest.run_id
        }
        None => file_digest(results_path)?[..12].to_string(),
    };

    let mut rows = Vec::with_capacity(results.len());
    let mut pairs: BTreeMap<(String, u8), Vec<(String, String)>> = BTreeMap::new();
    for result in &results {
        let record_id = result.instance_id.rsplit_once(':').map(|(r, _)| r);
        match record_id.and_then(|id| by_id.get(id)) {
            Some(record) => {
                let row = score_row(result, record);
                pairs
                    .entry((row.model_name.clone(), row.template_id))
                    .or_default()
                    .push((row.extracted_command.clone().unwrap_or_default(), record.gold_command.clone()));
                rows.push(row);
            }
            None => {
                tracing::warn!(instance_id = result.instance_id, "no record for result");
                rows.push(orphan_row(result));
            }
        }
    }

    write_jsonl(out, &rows)?;
    if opts.corpus_bleu {
        let entries: Vec<serde_json::Value> = pairs
            .into_iter()
            .map(|((model_name, template_id), group)| {
                let score = crate::metrics::corpus_bleu(
                    group.iter().map(|(c, g)| (c.as_str(), g.as_str())),
                );
                serde_json::json!({
                    "model": model_name,
                    "prompt": template_id,
                    "corpus_bleu": score,
                    "pairs": group.len(),
                })
            })
            .collect();
        let sidecar = corpus_bleu_sidecar_path(out);
        std::fs::write(&sidecar, serde_json::to_string_pretty(&entries).context("serialize corpus bleu")?)
            .with_context(|| format!("write {}", sidecar.display()))?;
    }
    let mut manifest = new_manifest(run_id, "score");
    manifest.input_digests.insert("results".into(), file_digest(results_path)?);
    manifest.input_digests.insert("records".into(), file_digest(records_path)?);
    manifest.counts.insert("rows".into(), rows.len() as u64);
    finalize_manifest(out, manifest)?;
    Ok(rows.len())
}

/// Aggregates rows into the per-(model, prompt) CSV table and the
/// bar-chart-ready JSON.
pub fn cmd_report(
    rows_path: &Path,
    out_csv: &Path,
    out_json: &Path,
) -> Result<ReportSummary, CliError> {
    let rows: Vec<EvalRow> = read_jsonl(rows_path)?;
    let summary = aggregate(&rows);

    std::fs::write(out_csv, summary_to_csv(&summary))
        .with_context(|| format!("write {}", out_csv.display()))?;
    let json = serde_json::to_string_pretty(&summary_to_json(&summary)).context("serialize report")?;
    std::fs::write(out_json, json).with_context(|| format!("write {}", out_json.display()))?;

    let run_id = read_manifest(rows_path)
        .map(|m| m.run_id)
        .unwrap_or_else(|| "unknown".to_string());
    let mut manifest = new_manifest(run_id, "report");
    manifest.input_digests.insert("rows".into(), file_digest(rows_path)?);
    manifest.counts.insert("rows".into(), rows.len() as u64);
    manifest.counts.insert("groups".into(), summary.groups.len() as u64);
    finalize_manifest(out_csv, manifest)?;
    Ok(summary)
}
