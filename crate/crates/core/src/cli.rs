//! `vdma` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or validation
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{
    apply_categories, load_categories, parse_dataset_with, subset_select, ChoiceIndex, PredictionRecord,
    QuestionCategory, Transcript, VideoQuestion,
};
use crate::ensemble::{run_ensemble, EnsembleError, EnsembleResult, EnsembleRunError, ModelConfig, TieBreakRule};
use crate::eval::{
    compare_conditions, ensemble_accuracy, per_category_report, render_category_report, render_condition_table,
    render_model_table, Accuracy, ConditionTable, EvalReport,
};
use crate::llm::{Backoff, BackendRegistry, ChatBackend, HttpBackend, MockBackend};
use crate::prompts::PromptSet;
use crate::qa::PipelineDeps;
use crate::runner::{run_model, RunControl};
use crate::store::ResultsStore;
use crate::tools::{CaptionLibrary, FrameLibrary, FrameStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Frame rate of the placeholder frames used by mock runs without a frames directory.
const MOCK_FPS: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "vdma", version, about = "Multi-agent video question answering")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Ground-truth answers `{question_uid: index}`.
    #[arg(long, global = true)]
    pub answers: Option<PathBuf>,
    /// Category labels `{question_uid: label | [labels]}`.
    #[arg(long, global = true)]
    pub categories: Option<PathBuf>,
    #[arg(long, global = true)]
    pub captions_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub frames_dir: Option<PathBuf>,
    #[arg(long = "results", global = true)]
    pub results_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub prompts_dir: Option<PathBuf>,
    /// Replace every backend with this scripted mock.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
    /// Use a seeded random subset of this many questions.
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Frame count for every model.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one model over the dataset, reusing persisted predictions.
    Run {
        #[arg(long)]
        model: String,
        /// Stop after this many newly computed predictions.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Recompute persisted predictions that are unanswered.
        #[arg(long)]
        redo_unanswered: bool,
    },
    /// Majority-vote the models' predictions.
    Ensemble {
        /// Comma-separated model ids.
        #[arg(long, value_delimiter = ',', default_value = "model1,model2,model3,model4,model5")]
        models: Vec<String>,
        /// Compute missing predictions instead of failing.
        #[arg(long)]
        execute: bool,
        #[arg(long, value_enum)]
        tie_break: Option<TieBreakArg>,
    },
    /// Accuracy reports: overall, per category, and across conditions.
    Report {
        /// Comma-separated model ids; ignored when conditions are given.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// `LABEL=RESULTS_DIR[:MODEL]`; repeat to compare conditions.
        #[arg(long = "condition")]
        conditions: Vec<String>,
        /// Include the persisted ensemble results.
        #[arg(long)]
        ensemble: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Check configuration, inputs, and credentials without running anything.
    Validate {
        #[arg(long, value_delimiter = ',', default_value = "model1,model2,model3,model4,model5")]
        models: Vec<String>,
    },
    /// Write a `{question_uid: choice}` submission file.
    Export {
        /// Model whose predictions to export; defaults to the ensemble results.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieBreakArg {
    TiedVoters,
    GlobalBest,
}

impl From<TieBreakArg> for TieBreakRule {
    fn from(a: TieBreakArg) -> Self {
        match a {
            TieBreakArg::TiedVoters => TieBreakRule::TiedVoters,
            TieBreakArg::GlobalBest => TieBreakRule::GlobalBest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Machine,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration is invalid:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(vec![msg.into()])
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = effective_config(&cli.global)?;
    match cli.command {
        Command::Run { model, stop_after, redo_unanswered } => {
            cmd_run(&cfg, &model, stop_after, redo_unanswered, out)
        }
        Command::Ensemble { models, execute, tie_break } => {
            let rule = tie_break.map(TieBreakRule::from).unwrap_or(cfg.tie_break);
            cmd_ensemble(&cfg, &models, execute, rule, out)
        }
        Command::Report { models, conditions, ensemble, format } => {
            cmd_report(&cfg, &models, &conditions, ensemble, format, out)
        }
        Command::Validate { models } => {
            let ctx = prepare(&cfg, &models, true)?;
            writeln!(
                out,
                "ok: {} questions, models {}",
                ctx.questions.len(),
                ctx.models.iter().map(|m| m.model_id.as_str()).collect::<Vec<_>>().join(", ")
            )
            .map_err(anyhow::Error::from)?;
            Ok(())
        }
        Command::Export { model, out: path } => cmd_export(&cfg, model.as_deref(), &path, out),
    }
}

/// Config file (if any) overlaid by command-line flags.
pub fn effective_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).map_err(|e| invalid(e.to_string()))?,
        None => RunConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {$(
            if let Some(v) = &g.$field {
                cfg.$field = Some(v.clone());
            }
        )*};
    }
    overlay!(dataset, answers, categories, captions_dir, frames_dir, prompts_dir, mock, subset, frames);
    if let Some(r) = &g.results_dir {
        cfg.results_dir = r.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

/// Validated inputs for one command.
pub struct Context {
    pub questions: Vec<VideoQuestion>,
    pub categories: BTreeMap<String, Vec<QuestionCategory>>,
    pub models: Vec<ModelConfig>,
    pub store: ResultsStore,
}

impl Context {
    fn truths(&self) -> BTreeMap<String, ChoiceIndex> {
        self.questions.iter().filter_map(|q| q.ground_truth.map(|g| (q.question_id.clone(), g))).collect()
    }
}

pub fn prepare(cfg: &RunConfig, model_ids: &[String], execute: bool) -> Result<Context, CliError> {
    let (models, mut errors) = match cfg.select_models(model_ids) {
        Ok(m) => (m, Vec::new()),
        Err(e) => (Vec::new(), e),
    };
    if errors.is_empty() {
        errors.extend(cfg.validate(&models, execute, |var| std::env::var_os(var).is_some()));
    } else {
        errors.extend(cfg.validate(&[], false, |_| true).into_iter().filter(|e| e != "no model selected"));
    }
    if !errors.is_empty() {
        return Err(CliError::Invalid(errors));
    }
    let dataset = cfg.dataset.as_deref().expect("validated");
    let mut questions = parse_dataset_with(dataset, cfg.answers.as_deref(), &cfg.fields)
        .map_err(|e| invalid(format!("dataset: {e}")))?;
    let categories = match &cfg.categories {
        Some(p) => load_categories(p).map_err(|e| invalid(format!("categories: {e}")))?,
        None => BTreeMap::new(),
    };
    apply_categories(&mut questions, &categories);
    if let Some(n) = cfg.subset {
        questions = subset_select(&questions, n, cfg.seed).map_err(|e| invalid(e.to_string()))?;
    }
    Ok(Context { questions, categories, models, store: ResultsStore::new(&cfg.results_dir) })
}

/// Backends, tool data, and prompts for executing pipelines.
pub fn build_deps(cfg: &RunConfig, questions: &[VideoQuestion]) -> Result<(PipelineDeps, Option<Arc<MockBackend>>), CliError> {
    let specs = cfg.all_backends().into_values();
    let (backends, mock) = match &cfg.mock {
        Some(path) => {
            let mock = Arc::new(MockBackend::load(path).map_err(|e| invalid(format!("mock script: {e}")))?);
            let shared: Arc<dyn ChatBackend> = mock.clone();
            (BackendRegistry::shared(specs, shared, Backoff::none()), Some(mock))
        }
        None => (BackendRegistry::shared(specs, Arc::new(HttpBackend::new()), Backoff::default()), None),
    };
    let mut deps = PipelineDeps::new(backends);
    deps.context_budget = cfg.context_budget;
    if let Some(dir) = &cfg.prompts_dir {
        deps.prompts = PromptSet::with_overrides(dir).map_err(|e| invalid(format!("prompts: {e}")))?;
    }
    if let Some(dir) = &cfg.captions_dir {
        deps.captions = CaptionLibrary::Dir(dir.clone());
    }
    deps.frames = match &cfg.frames_dir {
        Some(dir) => FrameLibrary::Dir(dir.clone()),
        None => {
            let mut seen = BTreeSet::new();
            FrameLibrary::from_stores(
                questions
                    .iter()
                    .filter(|q| seen.insert(q.video_id.clone()))
                    .map(|q| FrameStore::synthetic(q.video_id.clone(), q.duration_s, MOCK_FPS)),
            )
        }
    };
    Ok((deps, mock))
}

fn w(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Runtime(e.into()))
}

fn scored(records: &[PredictionRecord], truths: &BTreeMap<String, ChoiceIndex>) -> Vec<PredictionRecord> {
    records.iter().filter(|r| truths.contains_key(&r.question_id)).cloned().collect()
}

fn report_mock(out: &mut dyn Write, mock: &Option<Arc<MockBackend>>) -> Result<(), CliError> {
    if let Some(m) = mock {
        w(out, &format!("mock backend: {} calls, {} unscripted\n", m.calls(), m.misses()))?;
    }
    Ok(())
}

fn cmd_run(
    cfg: &RunConfig,
    model: &str,
    stop_after: Option<usize>,
    redo_unanswered: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ctx = prepare(cfg, &[model.to_string()], true)?;
    let (deps, mock) = build_deps(cfg, &ctx.questions)?;
    let config = &ctx.models[0];
    let mut control = RunControl::new(cfg.workers);
    control.stop_after = stop_after;
    control.redo_unanswered = redo_unanswered;
    let summary = run_model(&ctx.questions, config, &deps, &ctx.store, &control).context("run failed")?;
    let unanswered = summary.records.iter().filter(|r| !r.is_answered()).count();
    w(
        out,
        &format!(
            "{}: {} of {} questions done ({} computed, {} reused, {} unanswered)\n",
            config.model_id,
            summary.records.len(),
            ctx.questions.len(),
            summary.computed,
            summary.reused,
            unanswered
        ),
    )?;
    if summary.cancelled {
        w(out, "stopped early; re-run to continue\n")?;
    }
    let s = scored(&summary.records, &ctx.truths());
    if !s.is_empty() {
        let acc = crate::eval::accuracy(&s, &ctx.truths()).context("scoring")?;
        w(out, &format!("accuracy: {} ({}/{})\n", acc.display(), acc.correct, acc.total))?;
    }
    report_mock(out, &mock)
}

#[derive(Serialize)]
struct ModelRow<'a> {
    model_id: &'a str,
    accuracy: Accuracy,
    tie_break_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct EnsembleReport<'a> {
    models: Vec<ModelRow<'a>>,
    ensemble: Option<Accuracy>,
    tie_broken: usize,
    unanswered: usize,
}

fn missing_list(pairs: &[(String, String)]) -> Vec<String> {
    pairs.iter().map(|(m, q)| format!("missing prediction: model {m}, question {q}")).collect()
}

fn cmd_ensemble(
    cfg: &RunConfig,
    models: &[String],
    execute: bool,
    rule: TieBreakRule,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ctx = prepare(cfg, models, execute)?;
    let built = if execute { Some(build_deps(cfg, &ctx.questions)?) } else { None };
    let control = RunControl::new(cfg.workers);
    let run = match run_ensemble(&ctx.questions, &ctx.models, built.as_ref().map(|(d, _)| d), &ctx.store, &control, rule) {
        Ok(r) => r,
        Err(EnsembleRunError::Vote(EnsembleError::MissingPredictions(pairs))) => {
            let mut msgs = missing_list(&pairs);
            msgs.push("run the missing models first or pass --execute".into());
            return Err(CliError::Runtime(anyhow::anyhow!(msgs.join("\n"))));
        }
        Err(e) => return Err(CliError::Runtime(e.into())),
    };
    ctx.store.write_json("ensemble/results.json", &run.results).context("writing ensemble results")?;

    let truths = ctx.truths();
    let mut rows = Vec::new();
    for m in &ctx.models {
        let s = scored(&run.records[&m.model_id], &truths);
        if let Ok(acc) = crate::eval::accuracy(&s, &truths) {
            rows.push(ModelRow { model_id: &m.model_id, accuracy: acc, tie_break_accuracy: run.accuracies.get(&m.model_id).copied() });
        }
    }
    let scored_results: Vec<EnsembleResult> =
        run.results.iter().filter(|r| truths.contains_key(&r.question_id)).cloned().collect();
    let ens = ensemble_accuracy(&scored_results, &truths).ok();
    let report = EnsembleReport {
        models: rows,
        ensemble: ens,
        tie_broken: run.results.iter().filter(|r| r.tie_broken).count(),
        unanswered: run.results.iter().filter(|r| !r.is_answered()).count(),
    };
    let mut text = String::new();
    if report.models.is_empty() && ens.is_none() {
        text.push_str("no ground truth available; accuracy not reported\n");
    } else {
        let per: Vec<(String, Accuracy)> = report.models.iter().map(|r| (r.model_id.to_string(), r.accuracy)).collect();
        text.push_str(&render_model_table(&per, ens));
    }
    text.push_str(&format!(
        "questions: {}  ties broken: {}  unanswered: {}\n",
        run.results.len(),
        report.tie_broken,
        report.unanswered
    ));
    ctx.store.write_text("reports/ensemble.txt", &text).context("writing report")?;
    ctx.store.write_json("reports/ensemble.json", &report).context("writing report")?;
    w(out, &text)?;
    if let Some((_, mock)) = &built {
        report_mock(out, mock)?;
    }
    Ok(())
}

/// Records of `model` for every question, or the list of missing ones.
fn load_all(store: &ResultsStore, model: &str, questions: &[VideoQuestion]) -> Result<Vec<PredictionRecord>, CliError> {
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for q in questions {
        match store.load(model, &q.question_id).context("reading predictions")? {
            Some(mut r) => {
                r.score(q.ground_truth);
                records.push(r);
            }
            None => missing.push((model.to_string(), q.question_id.clone())),
        }
    }
    if missing.is_empty() {
        Ok(records)
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(missing_list(&missing).join("\n"))))
    }
}

fn load_ensemble(store: &ResultsStore) -> Result<Vec<EnsembleResult>, CliError> {
    let path = store.root().join("ensemble/results.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("{}: run the ensemble command first", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("{}: corrupt ensemble results", path.display()))?)
}

fn ensemble_as_records(results: &[EnsembleResult]) -> Vec<PredictionRecord> {
    results
        .iter()
        .map(|r| match r.final_choice {
            Some(c) => PredictionRecord::answered(&r.question_id, "ensemble", c, Transcript::new()),
            None => PredictionRecord::unanswered(&r.question_id, "ensemble", Transcript::new()),
        })
        .collect()
}

/// `LABEL=DIR[:MODEL]`; the label ends at the first `=`.
pub fn parse_condition(s: &str) -> Result<(String, PathBuf, Option<String>), String> {
    let (label, rest) = s.split_once('=').ok_or_else(|| format!("condition {s:?}: expected LABEL=DIR[:MODEL]"))?;
    if label.is_empty() || rest.is_empty() {
        return Err(format!("condition {s:?}: empty label or directory"));
    }
    match rest.rsplit_once(':') {
        Some((dir, model)) if !model.is_empty() && !model.contains('/') && !dir.is_empty() => {
            Ok((label.to_string(), PathBuf::from(dir), Some(model.to_string())))
        }
        _ => Ok((label.to_string(), PathBuf::from(rest), None)),
    }
}

#[derive(Serialize)]
struct MachineReport {
    reports: BTreeMap<String, EvalReport>,
    comparison: Option<ConditionTable>,
}

fn cmd_report(
    cfg: &RunConfig,
    models: &[String],
    conditions: &[String],
    include_ensemble: bool,
    format: Format,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let parsed: Vec<_> = conditions
        .iter()
        .map(|c| parse_condition(c))
        .collect::<Result<_, _>>()
        .map_err(invalid)?;
    let mut ids: Vec<String> = models.to_vec();
    for (_, _, m) in &parsed {
        if let Some(m) = m {
            if !ids.contains(m) {
                ids.push(m.clone());
            }
        }
    }
    if ids.is_empty() && !include_ensemble {
        return Err(invalid("report needs --models, --condition, or --ensemble"));
    }
    let ctx = prepare(cfg, &ids, false)?;
    let truths = ctx.truths();
    if truths.is_empty() {
        return Err(invalid("no ground truth: pass --answers"));
    }
    let eval = |records: &[PredictionRecord]| -> Result<EvalReport, CliError> {
        per_category_report(&scored(records, &truths), &truths, &ctx.categories).map_err(|e| CliError::Runtime(e.into()))
    };

    let mut labeled: Vec<(String, EvalReport)> = Vec::new();
    if parsed.is_empty() {
        for id in &ids {
            labeled.push((id.clone(), eval(&load_all(&ctx.store, id, &ctx.questions)?)?));
        }
    } else {
        for (label, dir, model) in &parsed {
            let model = model.clone().or_else(|| models.first().cloned()).ok_or_else(|| {
                invalid(format!("condition {label}: no model given (use LABEL=DIR:MODEL or --models)"))
            })?;
            let store = ResultsStore::new(dir);
            labeled.push((label.clone(), eval(&load_all(&store, &model, &ctx.questions)?)?));
        }
    }
    if include_ensemble {
        labeled.push(("ensemble".into(), eval(&ensemble_as_records(&load_ensemble(&ctx.store)?))?));
    }
    let mut seen = BTreeSet::new();
    for (l, _) in &labeled {
        if !seen.insert(l) {
            return Err(invalid(format!("duplicate report label {l}")));
        }
    }
    let comparison = if parsed.len() >= 2 {
        let conds: Vec<_> = labeled.iter().filter(|(l, _)| parsed.iter().any(|(p, _, _)| p == l)).cloned().collect();
        Some(compare_conditions(&conds).map_err(|e| CliError::Runtime(e.into()))?)
    } else {
        None
    };

    let (name, text) = match format {
        Format::Text => {
            let mut s = String::new();
            for (label, r) in &labeled {
                s.push_str(&render_category_report(label, r));
                s.push('\n');
            }
            if let Some(t) = &comparison {
                s.push_str(&render_condition_table(t));
            }
            ("reports/report.txt", s)
        }
        Format::Machine => {
            let m = MachineReport { reports: labeled.into_iter().collect(), comparison };
            let mut s = serde_json::to_string_pretty(&m).context("serializing report")?;
            s.push('\n');
            ("reports/report.json", s)
        }
    };
    ctx.store.write_text(name, &text).context("writing report")?;
    w(out, &text)
}

fn cmd_export(cfg: &RunConfig, model: Option<&str>, path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let ids: Vec<String> = model.map(|m| vec![m.to_string()]).unwrap_or_default();
    let ctx = if ids.is_empty() { prepare_no_models(cfg)? } else { prepare(cfg, &ids, false)? };
    let choices: Vec<(String, Option<ChoiceIndex>)> = match model {
        Some(m) => load_all(&ctx.store, m, &ctx.questions)?.into_iter().map(|r| (r.question_id, r.choice)).collect(),
        None => load_ensemble(&ctx.store)?.into_iter().map(|r| (r.question_id, r.final_choice)).collect(),
    };
    let total = choices.len();
    let map: BTreeMap<String, u8> = choices.into_iter().filter_map(|(q, c)| c.map(|c| (q, c.get()))).collect();
    let mut text = serde_json::to_string_pretty(&map).context("serializing submission")?;
    text.push('\n');
    crate::store::atomic_write(path, text.as_bytes()).context("writing submission")?;
    w(out, &format!("wrote {} answers to {}\n", map.len(), path.display()))?;
    if map.len() < total {
        w(out, &format!("{} unanswered questions omitted\n", total - map.len()))?;
    }
    Ok(())
}

/// Dataset-only preparation for commands that need no model.
fn prepare_no_models(cfg: &RunConfig) -> Result<Context, CliError> {
    let errors: Vec<String> = cfg.validate(&[], false, |_| true).into_iter().filter(|e| e != "no model selected").collect();
    if !errors.is_empty() {
        return Err(CliError::Invalid(errors));
    }
    let dataset = cfg.dataset.as_deref().expect("validated");
    let mut questions = parse_dataset_with(dataset, cfg.answers.as_deref(), &cfg.fields)
        .map_err(|e| invalid(format!("dataset: {e}")))?;
    if let Some(n) = cfg.subset {
        questions = subset_select(&questions, n, cfg.seed).map_err(|e| invalid(e.to_string()))?;
    }
    Ok(Context { questions, categories: BTreeMap::new(), models: Vec::new(), store: ResultsStore::new(&cfg.results_dir) })
}
