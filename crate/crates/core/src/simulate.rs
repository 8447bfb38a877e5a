//! Monte-Carlo comparison of ensemble strategies on synthetic models.
//!
//! A synthetic model answers each item correctly with a probability that
//! depends on the item's language and gold class, and otherwise picks a wrong
//! label from its error distribution. Error correlation between models comes
//! from a shared per-item latent: with probability `rho` a model reuses the
//! shared draws instead of its own.
//!
//! Randomness is ChaCha8 seeded from SHA-256 of `(seed, stream path)`, so
//! every model, split and trial has its own substream and results do not
//! depend on thread scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{run_strategy, EnsembleConfig, Strategy, StrategyInputs};
use crate::error::SimulateError;
use crate::ingest::{Dataset, PredictionSet};
use crate::labels::{Emotion, LabelSet, LabeledItem, Language, ModelId};
use crate::metrics::{build_skill_profile, evaluate, AggregateScores, EvalOptions, MetricVariant, SkillProfile};

/// Identifier recorded in every report.
pub const RNG_ALGORITHM: &str = "chacha8-sha256-substreams-v1";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorDistribution {
    /// Every wrong label equally likely.
    #[default]
    Uniform,
    /// Relative weights of wrong labels per gold class; missing rows are uniform.
    Confusion {
        weights: BTreeMap<Emotion, BTreeMap<Emotion, f64>>,
    },
}

impl ErrorDistribution {
    /// Wrong labels for `gold` with probabilities summing to 1.
    fn wrong_labels(&self, gold: Emotion) -> Vec<(Emotion, f64)> {
        let others = Emotion::ALL.iter().copied().filter(move |e| *e != gold);
        match self {
            ErrorDistribution::Confusion { weights } if weights.contains_key(&gold) => {
                let row = &weights[&gold];
                let raw: Vec<(Emotion, f64)> = others.map(|e| (e, row.get(&e).copied().unwrap_or(0.0))).collect();
                let sum: f64 = raw.iter().map(|(_, w)| w).sum();
                raw.into_iter().map(|(e, w)| (e, w / sum)).collect()
            }
            _ => others.map(|e| (e, 1.0 / (Emotion::COUNT - 1) as f64)).collect(),
        }
    }

    fn pick(&self, gold: Emotion, u: f64) -> Emotion {
        let dist = self.wrong_labels(gold);
        let mut acc = 0.0;
        for (label, p) in &dist {
            acc += p;
            if u < acc {
                return *label;
            }
        }
        dist.iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .expect("some weight is positive")
            .0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub model: ModelId,
    /// Probability of a correct answer for cells not listed in `correct`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_correct: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correct: BTreeMap<Language, BTreeMap<Emotion, f64>>,
    #[serde(default)]
    pub errors: ErrorDistribution,
    /// Probability of following the shared latent on each item.
    #[serde(default)]
    pub rho: f64,
}

impl SyntheticModelSpec {
    /// Same correct-probability for every cell.
    pub fn uniform(model: ModelId, p: f64) -> Self {
        Self {
            model,
            default_correct: Some(p),
            correct: BTreeMap::new(),
            errors: ErrorDistribution::Uniform,
            rho: 0.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn correct_probability(&self, lang: Language, class: Emotion) -> Option<f64> {
        self.correct
            .get(&lang)
            .and_then(|row| row.get(&class))
            .copied()
            .or(self.default_correct)
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let invalid = |m: String| Err(SimulateError::InvalidSpec(format!("model {}: {m}", self.model)));
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.rho) {
            return invalid(format!("rho {} is outside [0, 1]", self.rho));
        }
        if let Some(p) = self.default_correct {
            if !unit(p) {
                return invalid(format!("default_correct {p} is outside [0, 1]"));
            }
        }
        for (lang, row) in &self.correct {
            for (class, p) in row {
                if !unit(*p) {
                    return invalid(format!("correct probability {p} for {lang}/{class} is outside [0, 1]"));
                }
            }
        }
        if self.default_correct.is_none() {
            for lang in Language::ALL {
                for class in Emotion::ALL {
                    if self.correct_probability(*lang, *class).is_none() {
                        return invalid(format!("no correct probability for {lang}/{class} and no default"));
                    }
                }
            }
        }
        if let ErrorDistribution::Confusion { weights } = &self.errors {
            for (gold, row) in weights {
                if row.values().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return invalid(format!("negative or non-finite error weight for gold {gold}"));
                }
                let sum: f64 = row.iter().filter(|(e, _)| *e != gold).map(|(_, w)| w).sum();
                if sum.is_nan() || sum <= 0.0 {
                    return invalid(format!("error weights for gold {gold} put no mass on wrong labels"));
                }
            }
        }
        Ok(())
    }
}

fn substream(seed: u64, path: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(path.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn derive_seed(seed: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn generate_scoped(
    spec: &SyntheticModelSpec,
    gold: &Dataset,
    seed: u64,
    scope: &str,
) -> Result<PredictionSet, SimulateError> {
    let mut shared = substream(seed, &format!("{scope}shared"));
    let mut own = substream(seed, &format!("{scope}model/{}", spec.model));
    let mut out = PredictionSet::new();
    for item in gold {
        let (Some(class), Some(lang)) = (item.gold, item.language) else {
            return Err(SimulateError::InvalidSpec(format!(
                "gold item {:?} needs both a label and a language",
                item.id
            )));
        };
        // fixed draw counts per item keep every stream aligned across models
        let (shared_u, shared_w): (f64, f64) = (shared.gen(), shared.gen());
        let (coin, own_u, own_w): (f64, f64, f64) = (own.gen(), own.gen(), own.gen());
        let (u, w) = if coin < spec.rho {
            (shared_u, shared_w)
        } else {
            (own_u, own_w)
        };
        let p = spec.correct_probability(lang, class).ok_or_else(|| {
            SimulateError::InvalidSpec(format!("model {}: no probability for {lang}/{class}", spec.model))
        })?;
        let label = if u < p { class } else { spec.errors.pick(class, w) };
        out.insert(item.id.clone(), label);
    }
    Ok(out)
}

/// Draws one synthetic prediction set over `gold`.
pub fn generate_synthetic(
    spec: &SyntheticModelSpec,
    gold: &Dataset,
    seed: u64,
) -> Result<PredictionSet, SimulateError> {
    spec.validate()?;
    generate_scoped(spec, gold, seed, "")
}

/// Mean and sample standard deviation over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub name: String,
    pub micro: Summary,
    pub macro_: Summary,
    pub weighted: Summary,
    /// Mean count of unresolved items per trial.
    #[serde(default)]
    pub unresolved: f64,
    pub per_trial: Vec<AggregateScores>,
}

impl ScoreSummary {
    fn from_trials(name: String, scores: Vec<AggregateScores>, unresolved: f64) -> Self {
        let pick = |v: MetricVariant| Summary::of(&scores.iter().map(|a| a.get(v)).collect::<Vec<_>>());
        Self {
            name,
            micro: pick(MetricVariant::Micro),
            macro_: pick(MetricVariant::Macro),
            weighted: pick(MetricVariant::Weighted),
            unresolved,
            per_trial: scores,
        }
    }

    pub fn get(&self, variant: MetricVariant) -> Summary {
        match variant {
            MetricVariant::Micro => self.micro,
            MetricVariant::Macro => self.macro_,
            MetricVariant::Weighted => self.weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub rng: String,
    pub seed: u64,
    pub trials: usize,
    pub items: usize,
    pub strategies: Vec<ScoreSummary>,
    pub single_models: Vec<ScoreSummary>,
}

impl TrialReport {
    pub fn strategy(&self, name: &str) -> Option<&ScoreSummary> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn single(&self, model: &str) -> Option<&ScoreSummary> {
        self.single_models.iter().find(|s| s.name == model)
    }

    /// Best single model by mean score on `variant`.
    pub fn best_single(&self, variant: MetricVariant) -> Option<&ScoreSummary> {
        self.single_models
            .iter()
            .max_by(|a, b| a.get(variant).mean.total_cmp(&b.get(variant).mean))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "trials={} items={} seed={} rng={}\n{:<32} {:>16} {:>16} {:>16}\n",
            self.trials, self.items, self.seed, self.rng, "Strategy", "Micro F1", "Macro F1", "Weighted F1"
        );
        let row = |s: &ScoreSummary| {
            format!(
                "{:<32} {:>8.4}±{:<7.4} {:>8.4}±{:<7.4} {:>8.4}±{:<7.4}\n",
                s.name, s.micro.mean, s.micro.std, s.macro_.mean, s.macro_.std, s.weighted.mean, s.weighted.std
            )
        };
        for s in &self.strategies {
            out.push_str(&row(s));
        }
        for s in &self.single_models {
            out.push_str(&row(s));
        }
        out
    }
}

struct TrialOutcome {
    strategies: Vec<(AggregateScores, usize)>,
    singles: Vec<AggregateScores>,
}

fn run_one_trial(
    specs: &[SyntheticModelSpec],
    strategies: &[EnsembleConfig],
    gold: &Dataset,
    dev: &Dataset,
    trial_seed: u64,
) -> Result<TrialOutcome, SimulateError> {
    let opts = EvalOptions::default();
    let mut dev_preds = BTreeMap::new();
    let mut test_preds = BTreeMap::new();
    for spec in specs {
        dev_preds.insert(spec.model.clone(), generate_scoped(spec, dev, trial_seed, "dev/")?);
        test_preds.insert(spec.model.clone(), generate_scoped(spec, gold, trial_seed, "test/")?);
    }
    let profile: SkillProfile = build_skill_profile(dev, &dev_preds, opts)?;
    let singles = specs
        .iter()
        .map(|s| Ok(evaluate(gold, &test_preds[&s.model], opts)?.aggregate))
        .collect::<Result<Vec<_>, SimulateError>>()?;
    let inputs = StrategyInputs::from_multiclass(test_preds);
    let strategies = strategies
        .iter()
        .map(|cfg| {
            let outcome = run_strategy(gold, &inputs, cfg, &profile)?;
            let agg = evaluate(gold, &outcome.predictions, opts)?.aggregate;
            Ok((agg, outcome.unresolved.len()))
        })
        .collect::<Result<Vec<_>, SimulateError>>()?;
    Ok(TrialOutcome { strategies, singles })
}

/// Runs `trials` independent simulations and summarizes each strategy and
/// each single model on `gold`.
///
/// Per trial, every model is drawn twice: once on a dev copy of the gold
/// composition (to build the skill profile strategies consult) and once on
/// `gold` itself (to score). `dev` overrides the dev composition.
pub fn run_trials(
    specs: &[SyntheticModelSpec],
    strategies: &[EnsembleConfig],
    gold: &Dataset,
    dev: Option<&Dataset>,
    trials: usize,
    seed: u64,
) -> Result<TrialReport, SimulateError> {
    if trials == 0 {
        return Err(SimulateError::InvalidSpec("trials must be at least 1".into()));
    }
    if specs.is_empty() {
        return Err(SimulateError::InvalidSpec("no synthetic models".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        if specs[..i].iter().any(|o| o.model == s.model) {
            return Err(SimulateError::InvalidSpec(format!("model {} specified twice", s.model)));
        }
    }
    for cfg in strategies {
        if matches!(cfg.strategy, Strategy::Top2Rerank) {
            return Err(SimulateError::InvalidSpec(format!(
                "strategy {} needs ranked predictions, which synthetic models do not produce",
                cfg.display_name()
            )));
        }
        if let Some(m) = cfg.priority.iter().find(|m| !specs.iter().any(|s| &s.model == *m)) {
            return Err(SimulateError::InvalidSpec(format!(
                "strategy {} references model {m} with no synthetic spec",
                cfg.display_name()
            )));
        }
    }
    let dev = dev.unwrap_or(gold);
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| run_one_trial(specs, strategies, gold, dev, derive_seed(seed, &format!("trial/{t}"))))
        .collect::<Result<Vec<_>, _>>()?;

    let strategy_summaries = strategies
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let scores: Vec<_> = outcomes.iter().map(|o| o.strategies[i].0).collect();
            let unresolved = outcomes.iter().map(|o| o.strategies[i].1 as f64).sum::<f64>() / trials as f64;
            ScoreSummary::from_trials(cfg.display_name(), scores, unresolved)
        })
        .collect();
    let single_models = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            ScoreSummary::from_trials(
                s.model.to_string(),
                outcomes.iter().map(|o| o.singles[i]).collect(),
                0.0,
            )
        })
        .collect();
    Ok(TrialReport {
        rng: RNG_ALGORITHM.to_string(),
        seed,
        trials,
        items: gold.len(),
        strategies: strategy_summaries,
        single_models,
    })
}

/// How a measured profile turns into correct-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileBasis {
    /// Per-language score on one metric, same for every class.
    Language(MetricVariant),
    /// Per-class F1 used as recall, same for every language.
    Class,
}

/// One synthetic model per profiled model, treating F1 as the probability of
/// a correct answer. This is an approximation: F1 is not recall.
pub fn specs_from_profile(
    profile: &SkillProfile,
    basis: ProfileBasis,
    rho: f64,
) -> Result<Vec<SyntheticModelSpec>, SimulateError> {
    profile
        .models()
        .into_iter()
        .map(|model| {
            let mut correct = BTreeMap::new();
            for &lang in Language::ALL {
                let mut row = BTreeMap::new();
                for &class in Emotion::ALL {
                    let p = match basis {
                        ProfileBasis::Language(metric) => profile.language_score(&model, lang, metric),
                        ProfileBasis::Class => profile.class_score(&model, class),
                    }
                    .ok_or_else(|| {
                        SimulateError::InvalidSpec(format!(
                            "profile has no {basis:?} score for {model} ({lang}/{class})"
                        ))
                    })?;
                    row.insert(class, p);
                }
                correct.insert(lang, row);
            }
            Ok(SyntheticModelSpec {
                model,
                default_correct: None,
                correct,
                errors: ErrorDistribution::Uniform,
                rho,
            })
        })
        .collect()
}

/// Composition of a synthetic gold set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSpec {
    pub items_per_language: usize,
    #[serde(default = "all_languages")]
    pub languages: Vec<Language>,
    /// Relative class frequencies; uniform when empty.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_weights: BTreeMap<Emotion, f64>,
}

fn all_languages() -> Vec<Language> {
    Language::ALL.to_vec()
}

/// Builds a deterministic gold set: per language, class counts follow the
/// weights by largest remainder, classes interleaved round-robin.
pub fn synthetic_gold(spec: &GoldSpec) -> Result<Dataset, SimulateError> {
    let weights: Vec<(Emotion, f64)> = if spec.class_weights.is_empty() {
        Emotion::ALL.iter().map(|e| (*e, 1.0)).collect()
    } else {
        spec.class_weights.iter().map(|(e, w)| (*e, *w)).collect()
    };
    if weights.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
        return Err(SimulateError::InvalidSpec("class weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(SimulateError::InvalidSpec("class weights sum to zero".into()));
    }
    let n = spec.items_per_language;
    let exact: Vec<f64> = weights.iter().map(|(_, w)| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }

    let mut items = Vec::with_capacity(n * spec.languages.len());
    for lang in &spec.languages {
        let mut remaining = counts.clone();
        let mut k = 0;
        while remaining.iter().any(|&c| c > 0) {
            for (ci, (class, _)) in weights.iter().enumerate() {
                if remaining[ci] > 0 {
                    remaining[ci] -= 1;
                    k += 1;
                    items.push(LabeledItem::new(
                        format!("{}-{k:06}", lang.as_str().to_lowercase()),
                        format!("synthetic {lang} item {k}"),
                        Some(*lang),
                        Some(*class),
                    ));
                }
            }
        }
    }
    Dataset::new("synthetic", items).map_err(|e| SimulateError::InvalidSpec(e.to_string()))
}

/// Where synthetic models come from when they are derived from a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSource {
    /// Skill profile file, relative to the simulation file.
    pub path: PathBuf,
    pub basis: ProfileBasis,
    #[serde(default)]
    pub rho: f64,
}

/// Simulation input file: a gold composition plus synthetic models, listed
/// explicitly and/or derived from a skill profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub gold: GoldSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<SyntheticModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_profile: Option<ProfileSource>,
    /// Defaults for callers that do not supply their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SimulationSpec {
    /// Materializes the gold set and model list; relative paths resolve against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<(Dataset, Vec<SyntheticModelSpec>), SimulateError> {
        let gold = synthetic_gold(&self.gold)?;
        let mut models = self.models.clone();
        if let Some(src) = &self.from_profile {
            let path = base_dir.join(&src.path);
            let profile =
                crate::metrics::load_skill_profile(&path).map_err(|e| SimulateError::InvalidSpec(e.to_string()))?;
            models.extend(specs_from_profile(&profile, src.basis, src.rho)?);
        }
        Ok((gold, models))
    }
}
