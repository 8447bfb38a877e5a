use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Deserialize;
use serde_json::json;

use polyemo::ensemble::{run_strategy, EnsembleConfig, StrategyInputs, DEFAULT_PRIORITY, PRESETS};
use polyemo::ingest::{
    dataset_to_jsonl, distribution_report, load_dataset, load_labels, load_predictions, load_ranked, write_labels,
    DataFormat, Dataset, LabelMap,
};
use polyemo::metrics::{build_skill_profile, load_skill_profile, EvalOptions, MacroAveraging};
use polyemo::provider::mock::{MockScript, MockServer};
use polyemo::provider::{batch_predict, Outcome, ProviderConfig, Task};
use polyemo::simulate::{run_trials, SimulationSpec};
use polyemo::{normalize_label, Emotion, EnsembleError, LabelSet, LabeledItem, ModelId, ProviderError, Verdict};

use crate::manifest::{OutDir, RunManifest};
use crate::{EnsembleArgs, EvaluateArgs, Globals, PredictArgs, ReportArgs, SimulateArgs};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<(), Failure>;

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: e.into(),
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: e.into(),
    }
}

fn extension(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Tsv => "tsv",
        DataFormat::Jsonl => "jsonl",
    }
}

fn read_dataset(path: &Path, manifest: &mut RunManifest) -> Result<Dataset, Failure> {
    manifest.input(path).map_err(input)?;
    load_dataset(path, DataFormat::from_path(path)).map_err(input)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, manifest: &mut RunManifest) -> Result<T, Failure> {
    manifest.input(path).map_err(input)?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(input)
}

/// Splits `NAME=PATH`; a bare path is named after its file stem.
fn named_path(arg: &str) -> Result<(String, PathBuf), Failure> {
    if let Some((name, path)) = arg.split_once('=') {
        if name.trim().is_empty() || path.is_empty() {
            return Err(input(anyhow!("expected NAME=PATH, got {arg:?}")));
        }
        return Ok((name.trim().to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| input(anyhow!("cannot name a model after {arg:?}; use NAME=PATH")))?
        .to_string();
    Ok((stem, path))
}

fn load_model_predictions(
    args: &[String],
    manifest: &mut RunManifest,
) -> Result<BTreeMap<ModelId, LabelMap<Emotion>>, Failure> {
    let mut out = BTreeMap::new();
    for arg in args {
        let (name, path) = named_path(arg)?;
        let model = ModelId::new(name).map_err(input)?;
        manifest.input(&path).map_err(input)?;
        let preds = load_predictions(&path, DataFormat::from_path(&path)).map_err(input)?;
        if out.insert(model.clone(), preds).is_some() {
            return Err(input(anyhow!("predictions for model {model} given twice")));
        }
    }
    Ok(out)
}

fn eval_options(all_classes: bool) -> EvalOptions {
    EvalOptions {
        macro_averaging: if all_classes {
            MacroAveraging::AllClasses
        } else {
            MacroAveraging::PresentClasses
        },
    }
}

pub fn evaluate(g: &Globals, a: EvaluateArgs) -> CmdResult {
    let mut manifest = RunManifest::new("evaluate");
    let gold = read_dataset(&a.gold, &mut manifest)?;
    let preds = load_model_predictions(&a.preds, &mut manifest)?;
    let opts = eval_options(a.all_classes);

    let mut reports = BTreeMap::new();
    let mut text = String::new();
    for (model, p) in &preds {
        let report = polyemo::metrics::evaluate(&gold, p, opts)
            .with_context(|| format!("evaluating {model}"))
            .map_err(input)?;
        let _ = writeln!(text, "== {model} ==\n{report}");
        reports.insert(model.clone(), report);
    }
    let mut out = OutDir::create(&g.out_dir).map_err(runtime)?;
    out.write_json("evaluation.json", &reports).map_err(runtime)?;
    out.write("evaluation.txt", &text).map_err(runtime)?;
    if a.profile {
        let profile = build_skill_profile(&gold, &preds, opts).map_err(input)?;
        let models: Vec<ModelId> = preds.keys().cloned().collect();
        let tables = format!(
            "{}\n{}\n{}",
            profile.render_language_table(&models),
            profile.render_class_table(&models),
            profile.render_overall_table()
        );
        out.write_json("skill_profile.json", &profile).map_err(runtime)?;
        out.write("skill_profile.txt", &tables).map_err(runtime)?;
        text.push_str(&tables);
    }
    manifest.config(&json!({
        "gold": a.gold,
        "models": preds.keys().collect::<Vec<_>>(),
        "macro_averaging": opts.macro_averaging,
        "profile": a.profile,
    }));
    out.finish(manifest).map_err(runtime)?;
    print!("{text}");
    Ok(())
}

fn resolve_ensemble_config(a: &EnsembleArgs, manifest: &mut RunManifest) -> Result<EnsembleConfig, Failure> {
    let mut config = match (&a.config, &a.preset) {
        (Some(path), _) => read_json::<EnsembleConfig>(path, manifest)?,
        (None, Some(name)) => EnsembleConfig::preset(name)
            .ok_or_else(|| input(anyhow!("unknown preset {name:?}; available: {}", PRESETS.join(", "))))?,
        (None, None) => return Err(input(anyhow!("either --config or --preset is required"))),
    };
    if let Some(f) = a.max_unresolved {
        config.max_unresolved_fraction = f;
    }
    config.validate().map_err(input)?;
    Ok(config)
}

pub fn ensemble(g: &Globals, a: EnsembleArgs) -> CmdResult {
    let mut manifest = RunManifest::new("ensemble");
    let ds = read_dataset(&a.gold, &mut manifest)?;
    manifest.input(&a.profile).map_err(input)?;
    let profile = load_skill_profile(&a.profile).map_err(input)?;
    let config = resolve_ensemble_config(&a, &mut manifest)?;
    let multiclass = load_model_predictions(&a.preds, &mut manifest)?;

    let mut verdicts = BTreeMap::new();
    for arg in &a.verdicts {
        let (class, path) = named_path(arg)?;
        let class = normalize_label::<Emotion>(&class).map_err(input)?;
        manifest.input(&path).map_err(input)?;
        let set = load_labels::<Verdict>(&path, DataFormat::from_path(&path)).map_err(input)?;
        verdicts.insert(class, set);
    }
    let mut ranked = BTreeMap::new();
    for arg in &a.ranked {
        let (name, path) = named_path(arg)?;
        manifest.input(&path).map_err(input)?;
        let set = load_ranked(&path, DataFormat::from_path(&path)).map_err(input)?;
        ranked.insert(ModelId::new(name).map_err(input)?, set);
    }
    let inputs = StrategyInputs {
        multiclass,
        verdicts: (!verdicts.is_empty()).then_some(verdicts),
        ranked,
    };
    manifest.config(&config);

    let mut out = OutDir::create(&g.out_dir).map_err(runtime)?;
    let outcome = match run_strategy(&ds, &inputs, &config, &profile) {
        Ok(o) => o,
        Err(EnsembleError::ThresholdExceeded {
            unresolved,
            total,
            allowed,
        }) => {
            let rows: Vec<_> = unresolved
                .iter()
                .map(|(id, e)| json!({ "id": id, "error": e.to_string() }))
                .collect();
            for (id, e) in &unresolved {
                eprintln!("{id}: {e}");
            }
            out.write_json("unresolved.json", &rows).map_err(runtime)?;
            out.finish(manifest).map_err(runtime)?;
            return Err(Failure {
                code: 3,
                error: anyhow!(
                    "{} of {total} items unresolved, above the allowed fraction {allowed}",
                    unresolved.len()
                ),
            });
        }
        Err(e) => return Err(input(e)),
    };

    let pred_name = format!("ensemble_predictions.{}", extension(g.format));
    write_labels(&outcome.predictions, &out.path(&pred_name), g.format).map_err(runtime)?;
    out.note(&pred_name);
    let mut audit = String::new();
    for record in &outcome.audit {
        audit.push_str(&serde_json::to_string(record).expect("audit serializes"));
        audit.push('\n');
    }
    out.write("audit.jsonl", &audit).map_err(runtime)?;
    if !outcome.unresolved.is_empty() {
        let rows: Vec<_> = outcome
            .unresolved
            .iter()
            .map(|(id, e)| json!({ "id": id, "error": e.to_string() }))
            .collect();
        out.write_json("unresolved.json", &rows).map_err(runtime)?;
    }
    let mut summary = format!(
        "{}: {} items labelled, {} unresolved\n",
        config.display_name(),
        outcome.predictions.len(),
        outcome.unresolved.len()
    );
    if ds.iter().any(|i| i.gold.is_some()) {
        let report = polyemo::metrics::evaluate(&ds, &outcome.predictions, EvalOptions::default()).map_err(input)?;
        let _ = write!(summary, "\n{report}");
        out.write_json("evaluation.json", &report).map_err(runtime)?;
        out.write("evaluation.txt", &report.to_string()).map_err(runtime)?;
    }
    out.finish(manifest).map_err(runtime)?;
    print!("{summary}");
    Ok(())
}

fn task_slug(task: Task) -> String {
    task.to_string().replace(':', "-")
}

fn labels_of<L: LabelSet>(records: &[polyemo::provider::BatchRecord]) -> LabelMap<L> {
    records
        .iter()
        .filter(|r| r.outcome == Outcome::Ok)
        .filter_map(|r| Some((r.id.clone(), normalize_label::<L>(r.value.as_deref()?).ok()?)))
        .collect()
}

pub fn predict(g: &Globals, a: PredictArgs) -> CmdResult {
    let mut manifest = RunManifest::new("predict");
    let ds = read_dataset(&a.dataset, &mut manifest)?;
    let mut cfg: ProviderConfig = read_json(&a.provider, &mut manifest)?;
    if let Some(n) = a.max_concurrency {
        cfg.max_concurrency = n;
    }
    if !(0.0..=1.0).contains(&a.max_error_fraction) {
        return Err(input(anyhow!("--max-error-fraction must lie in [0, 1]")));
    }
    let mut recorded = cfg.clone();
    let server = match &g.mock {
        Some(script_path) => {
            manifest.input(script_path).map_err(input)?;
            let script = MockScript::load(script_path)
                .with_context(|| format!("loading mock script {}", script_path.display()))
                .map_err(input)?;
            let server = MockServer::start(script).map_err(runtime)?;
            cfg.endpoint = server.url().to_string();
            cfg.require_auth = false;
            // the ephemeral port would make manifests differ between runs
            recorded.endpoint = format!("mock:{}", script_path.display());
            recorded.require_auth = false;
            Some(server)
        }
        None => None,
    };
    cfg.validate().map_err(input)?;

    let mut out = OutDir::create(&g.out_dir).map_err(runtime)?;
    let slug = task_slug(a.task);
    let log = a
        .log
        .clone()
        .unwrap_or_else(|| out.path(&format!("predict-{slug}.log.jsonl")));
    let result = batch_predict(&cfg, &ds, a.task, Some(&log)).map_err(|e| match e {
        ProviderError::AuthMissing(_) => Failure {
            code: 4,
            error: e.into(),
        },
        ProviderError::InvalidConfig(_) | ProviderError::EmptyText => input(e),
        other => runtime(other),
    })?;
    drop(server);
    if log.parent() == Some(g.out_dir.as_path()) {
        out.note(&format!("predict-{slug}.log.jsonl"));
    }

    let ext = extension(g.format);
    let written = match a.task {
        Task::Classify => {
            let name = format!("predictions.{ext}");
            write_labels(&labels_of::<Emotion>(&result.records), &out.path(&name), g.format).map_err(runtime)?;
            name
        }
        Task::ClassifyBinary(class) => {
            let name = format!("verdicts-{}.{ext}", class.as_str());
            write_labels(&labels_of::<Verdict>(&result.records), &out.path(&name), g.format).map_err(runtime)?;
            name
        }
        Task::DetectLanguage => {
            let name = format!("languages.{ext}");
            let langs = labels_of::<polyemo::Language>(&result.records);
            write_labels(&langs, &out.path(&name), g.format).map_err(runtime)?;
            name
        }
        Task::Translate => {
            let texts = result.texts();
            let items = ds
                .iter()
                .filter_map(|i| {
                    let text = texts.get(&i.id)?;
                    Some(LabeledItem::new(i.id.clone(), text.clone(), i.language, i.gold))
                })
                .collect();
            let translated = Dataset::new(ds.split.clone(), items).map_err(runtime)?;
            out.write("translations.jsonl", &dataset_to_jsonl(&translated))
                .map_err(runtime)?;
            "translations.jsonl".to_string()
        }
    };
    out.note(&written);

    let errors = result.count(Outcome::Error);
    let summary = json!({
        "task": a.task,
        "total": ds.len(),
        "requested": result.requested,
        "ok": result.count(Outcome::Ok),
        "abstained": result.count(Outcome::Abstained),
        "error": errors,
    });
    out.write_json("predict_summary.json", &summary).map_err(runtime)?;
    manifest.config(&json!({ "task": a.task, "provider": recorded, "log": log }));
    out.finish(manifest).map_err(runtime)?;
    println!(
        "{}: {} ok, {} abstained, {} errors ({} requested this run)",
        a.task,
        result.count(Outcome::Ok),
        result.count(Outcome::Abstained),
        errors,
        result.requested.len()
    );
    if !ds.is_empty() && errors as f64 > a.max_error_fraction * ds.len() as f64 {
        return Err(runtime(anyhow!(
            "{errors} of {} items failed, above the allowed fraction {}",
            ds.len(),
            a.max_error_fraction
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StrategyEntry {
    Preset(String),
    Config(EnsembleConfig),
}

fn preset(name: &str) -> Result<EnsembleConfig, Failure> {
    EnsembleConfig::preset(name)
        .ok_or_else(|| input(anyhow!("unknown preset {name:?}; available: {}", PRESETS.join(", "))))
}

/// Used when neither `--trials` nor the simulation file gives a trial count.
const DEFAULT_TRIALS: usize = 20;

pub fn simulate(g: &Globals, a: SimulateArgs) -> CmdResult {
    let mut manifest = RunManifest::new("simulate");
    let spec: SimulationSpec = read_json(&a.spec, &mut manifest)?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    if let Some(src) = &spec.from_profile {
        manifest.input(&base.join(&src.path)).map_err(input)?;
    }
    let (gold, models) = spec.resolve(base).map_err(input)?;

    let mut strategies = Vec::new();
    if let Some(path) = &a.strategies {
        for entry in read_json::<Vec<StrategyEntry>>(path, &mut manifest)? {
            strategies.push(match entry {
                StrategyEntry::Preset(name) => preset(&name)?,
                StrategyEntry::Config(c) => c,
            });
        }
    }
    for name in &a.preset {
        strategies.push(preset(name)?);
    }
    let trials = a.trials.or(spec.trials).unwrap_or(DEFAULT_TRIALS);
    let seed = g.seed.or(spec.seed).unwrap_or(0);
    let report = run_trials(&models, &strategies, &gold, None, trials, seed).map_err(input)?;

    let mut out = OutDir::create(&g.out_dir).map_err(runtime)?;
    out.write("trial_report.json", &report.to_json()).map_err(runtime)?;
    let table = report.render_table();
    out.write("trial_report.txt", &table).map_err(runtime)?;
    manifest.seed = Some(seed);
    manifest.config(&json!({
        "trials": trials,
        "seed": seed,
        "items": gold.len(),
        "models": models,
        "strategies": strategies,
    }));
    out.finish(manifest).map_err(runtime)?;
    print!("{table}");
    Ok(())
}

pub fn report(g: &Globals, a: ReportArgs) -> CmdResult {
    let mut manifest = RunManifest::new("report");
    let mut text = String::new();
    let mut body = serde_json::Map::new();
    if let Some(path) = &a.profile {
        manifest.input(path).map_err(input)?;
        let profile = load_skill_profile(path).map_err(input)?;
        let models: Vec<ModelId> = if a.models.is_empty() {
            let known = profile.models();
            let mut ordered: Vec<ModelId> = DEFAULT_PRIORITY
                .iter()
                .map(|n| ModelId::new(*n).expect("non-empty"))
                .filter(|m| known.contains(m))
                .collect();
            let rest: Vec<ModelId> = known.into_iter().filter(|m| !ordered.contains(m)).collect();
            ordered.extend(rest);
            ordered
        } else {
            a.models
                .iter()
                .map(|n| ModelId::new(n.trim()).map_err(input))
                .collect::<Result<_, _>>()?
        };
        let _ = write!(
            text,
            "F1 by language and metric\n{}\nF1 by class\n{}\nOverall weighted F1\n{}",
            profile.render_language_table(&models),
            profile.render_class_table(&models),
            profile.render_overall_table()
        );
        body.insert(
            "profile".into(),
            serde_json::to_value(&profile).expect("profile serializes"),
        );
    }
    let mut distributions = serde_json::Map::new();
    for path in &a.dataset {
        let ds = read_dataset(path, &mut manifest)?;
        let report = distribution_report(&ds);
        if !text.is_empty() {
            text.push('\n');
        }
        let _ = write!(text, "== {} ==\n{report}", path.display());
        distributions.insert(
            path.display().to_string(),
            serde_json::to_value(&report).expect("report serializes"),
        );
    }
    if !distributions.is_empty() {
        body.insert("datasets".into(), distributions.into());
    }
    let mut out = OutDir::create(&g.out_dir).map_err(runtime)?;
    out.write("report.txt", &text).map_err(runtime)?;
    out.write_json("report.json", &body).map_err(runtime)?;
    manifest.config(&json!({ "profile": a.profile, "datasets": a.dataset, "models": a.models }));
    out.finish(manifest).map_err(runtime)?;
    print!("{text}");
    Ok(())
}
