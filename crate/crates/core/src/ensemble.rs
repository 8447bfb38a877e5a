//! Ensemble strategies over several models' hard labels.
//!
//! Four strategy families are supported: plurality voting with a
//! configurable fallback, per-language routing, one-vs-rest binary
//! decomposition and top-2 reranking. Every tie bottoms out in the model
//! priority order and then in canonical label order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EnsembleError;
use crate::ingest::{Dataset, PredictionSet, RankedSet, VerdictSet};
use crate::labels::{Ballot, Emotion, LabelSet, LabeledItem, Language, ModelId, Priority, Verdict};
use crate::metrics::{MetricVariant, SkillProfile};

/// What to do when a vote has no unique winner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Defer to the model with the best overall score on `metric`.
    GlobalBest {
        metric: MetricVariant,
    },
    /// Defer to the model routed for the item's language on `metric`.
    LanguageRouted {
        metric: MetricVariant,
    },
    FixedModel {
        model: ModelId,
    },
}

/// Resolution settings for one-vs-rest decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryResolver {
    /// Binary model per class; unlisted classes use the profile's best class-F1 model.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_models: BTreeMap<Emotion, ModelId>,
    /// Multiclass model consulted when no class is affirmed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_model: Option<ModelId>,
    /// Static label used when no class is affirmed and no fallback model answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_label: Option<Emotion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    MajorityVote {
        fallback: FallbackPolicy,
        /// Require more than half of the cast votes instead of a unique plurality.
        #[serde(default)]
        require_strict_majority: bool,
    },
    RouteByLanguage {
        metric: MetricVariant,
    },
    BinaryDecompose {
        #[serde(default)]
        resolver: BinaryResolver,
    },
    Top2Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub strategy: Strategy,
    /// Highest dev weighted-F1 first.
    pub priority: Priority,
    /// Fraction of items allowed to stay unresolved before a run fails.
    #[serde(default)]
    pub max_unresolved_fraction: f64,
}

/// Model order used by the shipped presets (dev weighted F1, best first).
pub const DEFAULT_PRIORITY: [&str; 5] = ["GPT-4", "Claude-Opus", "LLAMA-3", "Mistral-v2", "GEMMA"];

pub const PRESETS: [&str; 6] = [
    "vote-route-macro",
    "vote-global-weighted",
    "route-weighted",
    "route-macro",
    "route-micro",
    "binary-decompose",
];

impl EnsembleConfig {
    pub fn new(strategy: Strategy, priority: Priority) -> Self {
        Self {
            name: None,
            strategy,
            priority,
            max_unresolved_fraction: 0.0,
        }
    }

    /// A named shipped configuration over [`DEFAULT_PRIORITY`].
    pub fn preset(name: &str) -> Option<Self> {
        let priority = Priority::new(
            DEFAULT_PRIORITY
                .iter()
                .map(|m| ModelId::new(*m).expect("non-empty"))
                .collect(),
        )
        .expect("distinct names");
        let strategy = match name {
            "vote-route-macro" => Strategy::MajorityVote {
                fallback: FallbackPolicy::LanguageRouted {
                    metric: MetricVariant::Macro,
                },
                require_strict_majority: false,
            },
            "vote-global-weighted" => Strategy::MajorityVote {
                fallback: FallbackPolicy::GlobalBest {
                    metric: MetricVariant::Weighted,
                },
                require_strict_majority: false,
            },
            "route-weighted" => Strategy::RouteByLanguage {
                metric: MetricVariant::Weighted,
            },
            "route-macro" => Strategy::RouteByLanguage {
                metric: MetricVariant::Macro,
            },
            "route-micro" => Strategy::RouteByLanguage {
                metric: MetricVariant::Micro,
            },
            "binary-decompose" => Strategy::BinaryDecompose {
                resolver: BinaryResolver {
                    fallback_model: Some(priority.models()[0].clone()),
                    ..BinaryResolver::default()
                },
            },
            _ => return None,
        };
        Some(Self {
            name: Some(name.to_string()),
            ..Self::new(strategy, priority)
        })
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.strategy {
            Strategy::MajorityVote { fallback, .. } => match fallback {
                FallbackPolicy::GlobalBest { metric } => format!("majority-vote/global-best-{metric}"),
                FallbackPolicy::LanguageRouted { metric } => format!("majority-vote/routed-{metric}"),
                FallbackPolicy::FixedModel { model } => format!("majority-vote/fixed-{model}"),
            },
            Strategy::RouteByLanguage { metric } => format!("route-{metric}"),
            Strategy::BinaryDecompose { .. } => "binary-decompose".into(),
            Strategy::Top2Rerank => "top2-rerank".into(),
        }
    }

    /// Checks that every referenced model is configured and the threshold is a fraction.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(0.0..=1.0).contains(&self.max_unresolved_fraction) {
            return Err(EnsembleError::InvalidConfig(format!(
                "max_unresolved_fraction {} is outside [0, 1]",
                self.max_unresolved_fraction
            )));
        }
        let known = |m: &ModelId| {
            if self.priority.contains(m) {
                Ok(())
            } else {
                Err(EnsembleError::UnknownModel(m.clone()))
            }
        };
        match &self.strategy {
            Strategy::MajorityVote {
                fallback: FallbackPolicy::FixedModel { model },
                ..
            } => known(model)?,
            Strategy::BinaryDecompose { resolver } => {
                for m in resolver.class_models.values() {
                    known(m)?;
                }
                if let Some(m) = &resolver.fallback_model {
                    known(m)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which rule produced a final label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "model", rename_all = "snake_case")]
pub enum Rule {
    Plurality,
    Fallback(ModelId),
    Route(ModelId),
    BinaryUnique,
    BinaryProfile,
    BinaryFallback,
    Top2Score,
    Top2Tiebreak,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rule::Plurality => f.write_str("plurality"),
            Rule::Fallback(m) => write!(f, "fallback:{m}"),
            Rule::Route(m) => write!(f, "route:{m}"),
            Rule::BinaryUnique => f.write_str("binary:unique"),
            Rule::BinaryProfile => f.write_str("binary:profile"),
            Rule::BinaryFallback => f.write_str("binary:fallback"),
            Rule::Top2Score => f.write_str("top2:score"),
            Rule::Top2Tiebreak => f.write_str("top2:tiebreak"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub label: Emotion,
    pub rule: Rule,
}

/// Maps every language to the model that scores best on one metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub metric: MetricVariant,
    pub routes: BTreeMap<Language, ModelId>,
}

impl RoutingTable {
    pub fn model_for(&self, lang: Language) -> &ModelId {
        &self.routes[&lang]
    }
}

/// Picks the argmax model per language; exact ties go to the higher-priority model.
pub fn build_routing_table(
    profile: &SkillProfile,
    metric: MetricVariant,
    priority: &Priority,
) -> Result<RoutingTable, EnsembleError> {
    let mut missing = Vec::new();
    let mut routes = BTreeMap::new();
    for &lang in Language::ALL {
        let mut best: Option<(&ModelId, f64)> = None;
        for model in priority.iter() {
            match profile.language_score(model, lang, metric) {
                Some(score) => {
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((model, score));
                    }
                }
                None => missing.push((model.clone(), lang)),
            }
        }
        if let Some((model, _)) = best {
            routes.insert(lang, model.clone());
        }
    }
    if !missing.is_empty() {
        return Err(EnsembleError::IncompleteProfile(missing));
    }
    Ok(RoutingTable { metric, routes })
}

/// Returns the routed model's label for `item`.
pub fn route_predict(
    item: &LabeledItem,
    table: &RoutingTable,
    preds_by_model: &BTreeMap<ModelId, PredictionSet>,
) -> Result<Decision, EnsembleError> {
    let lang = item
        .language
        .ok_or_else(|| EnsembleError::MissingLanguage(item.id.clone()))?;
    let model = table.model_for(lang);
    let label =
        preds_by_model
            .get(model)
            .and_then(|p| p.get(&item.id))
            .ok_or_else(|| EnsembleError::MissingPrediction {
                model: model.clone(),
                id: item.id.clone(),
            })?;
    Ok(Decision {
        label,
        rule: Rule::Route(model.clone()),
    })
}

#[derive(Debug, Clone)]
enum FallbackPlan {
    Ordered(Vec<ModelId>),
    Routed(RoutingTable),
}

/// Plurality voting with the fallback chain resolved up front.
#[derive(Debug, Clone)]
pub struct MajorityVoter {
    priority: Priority,
    plan: FallbackPlan,
    require_strict_majority: bool,
}

impl MajorityVoter {
    pub fn new(
        fallback: &FallbackPolicy,
        require_strict_majority: bool,
        priority: &Priority,
        profile: &SkillProfile,
    ) -> Result<Self, EnsembleError> {
        let plan = match fallback {
            FallbackPolicy::GlobalBest { metric } => {
                let mut best: Option<(&ModelId, f64)> = None;
                for model in priority.iter() {
                    let score = profile
                        .overall(model, *metric)
                        .ok_or_else(|| EnsembleError::MissingScore {
                            model: model.clone(),
                            what: format!("overall {metric} F1"),
                        })?;
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((model, score));
                    }
                }
                let (top, _) = best.expect("priority is non-empty");
                FallbackPlan::Ordered(fallback_chain(top, priority))
            }
            FallbackPolicy::LanguageRouted { metric } => {
                FallbackPlan::Routed(build_routing_table(profile, *metric, priority)?)
            }
            FallbackPolicy::FixedModel { model } => {
                if !priority.contains(model) {
                    return Err(EnsembleError::UnknownModel(model.clone()));
                }
                FallbackPlan::Ordered(fallback_chain(model, priority))
            }
        };
        Ok(Self {
            priority: priority.clone(),
            plan,
            require_strict_majority,
        })
    }

    pub fn decide(&self, ballot: &Ballot, language: Option<Language>) -> Result<Decision, EnsembleError> {
        if ballot.is_empty() {
            return Err(EnsembleError::EmptyBallot(ballot.item_id.clone()));
        }
        if let Some(stranger) = ballot.votes.keys().find(|m| !self.priority.contains(m)) {
            return Err(EnsembleError::UnknownModel(stranger.clone()));
        }
        let counts = ballot.tally();
        let top = *counts.iter().max().expect("six classes");
        let mut leaders = Emotion::ALL.iter().filter(|e| counts[e.index()] == top);
        let first = *leaders.next().expect("max is attained");
        let unique = leaders.next().is_none();
        let decisive = if self.require_strict_majority {
            2 * top > ballot.len()
        } else {
            unique
        };
        if decisive {
            return Ok(Decision {
                label: first,
                rule: Rule::Plurality,
            });
        }
        let routed;
        let chain: &[ModelId] = match &self.plan {
            FallbackPlan::Ordered(chain) => chain,
            FallbackPlan::Routed(table) => {
                let lang = language.ok_or_else(|| EnsembleError::MissingLanguage(ballot.item_id.clone()))?;
                routed = fallback_chain(table.model_for(lang), &self.priority);
                &routed
            }
        };
        chain
            .iter()
            .find_map(|m| {
                ballot.votes.get(m).map(|label| Decision {
                    label: *label,
                    rule: Rule::Fallback(m.clone()),
                })
            })
            .ok_or_else(|| EnsembleError::Unresolvable(ballot.item_id.clone()))
    }
}

/// `first`, then the remaining models in priority order.
fn fallback_chain(first: &ModelId, priority: &Priority) -> Vec<ModelId> {
    std::iter::once(first.clone())
        .chain(priority.iter().filter(|m| *m != first).cloned())
        .collect()
}

/// One-shot plurality vote under a [`Strategy::MajorityVote`] configuration.
pub fn majority_vote(
    ballot: &Ballot,
    config: &EnsembleConfig,
    profile: &SkillProfile,
    language: Option<Language>,
) -> Result<Decision, EnsembleError> {
    let Strategy::MajorityVote {
        fallback,
        require_strict_majority,
    } = &config.strategy
    else {
        return Err(EnsembleError::InvalidConfig("strategy is not majority_vote".into()));
    };
    MajorityVoter::new(fallback, *require_strict_majority, &config.priority, profile)?.decide(ballot, language)
}

/// Binary model assigned to each class together with its class F1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPlan {
    pub class_models: BTreeMap<Emotion, (ModelId, f64)>,
}

impl BinaryPlan {
    pub fn new(resolver: &BinaryResolver, profile: &SkillProfile, priority: &Priority) -> Result<Self, EnsembleError> {
        let mut class_models = BTreeMap::new();
        for &class in Emotion::ALL {
            let missing = |m: &ModelId| EnsembleError::MissingScore {
                model: m.clone(),
                what: format!("class F1 for {class}"),
            };
            let chosen = match resolver.class_models.get(&class) {
                Some(m) => (m.clone(), profile.class_score(m, class).ok_or_else(|| missing(m))?),
                None => {
                    let mut best: Option<(&ModelId, f64)> = None;
                    for m in priority.iter() {
                        let s = profile.class_score(m, class).ok_or_else(|| missing(m))?;
                        if best.is_none_or(|(_, b)| s > b) {
                            best = Some((m, s));
                        }
                    }
                    let (m, s) = best.expect("priority is non-empty");
                    (m.clone(), s)
                }
            };
            class_models.insert(class, chosen);
        }
        Ok(Self { class_models })
    }

    pub fn model_for(&self, class: Emotion) -> &ModelId {
        &self.class_models[&class].0
    }
}

/// Resolves six one-vs-rest verdicts into one label.
///
/// A single yes wins outright. Several yeses go to the class whose binary
/// model has the highest class F1 (canonical order on ties). No yes falls
/// back to `fallback_label`, then to the resolver's static label.
pub fn binary_decompose(
    item_id: &str,
    verdicts: &BTreeMap<Emotion, Verdict>,
    resolver: &BinaryResolver,
    plan: &BinaryPlan,
    fallback_label: Option<Emotion>,
) -> Result<Decision, EnsembleError> {
    let mut yes = Vec::new();
    for &class in Emotion::ALL {
        let v = verdicts.get(&class).ok_or_else(|| EnsembleError::MissingVerdict {
            id: item_id.to_string(),
            class,
        })?;
        if v.is_yes() {
            yes.push(class);
        }
    }
    match yes.as_slice() {
        [only] => Ok(Decision {
            label: *only,
            rule: Rule::BinaryUnique,
        }),
        [] => fallback_label
            .or(resolver.fallback_label)
            .map(|label| Decision {
                label,
                rule: Rule::BinaryFallback,
            })
            .ok_or_else(|| EnsembleError::NoResolution(item_id.to_string())),
        many => {
            let mut best = many[0];
            for &class in &many[1..] {
                if plan.class_models[&class].1 > plan.class_models[&best].1 {
                    best = class;
                }
            }
            Ok(Decision {
                label: best,
                rule: Rule::BinaryProfile,
            })
        }
    }
}

/// One model's ordered top-2 for an item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedVote {
    pub model: ModelId,
    pub first: Emotion,
    pub second: Emotion,
}

/// Two points per first place, one per second; ties go to the label that
/// the highest-priority model ranks first, then to canonical order.
pub fn top2_select(ranked: &[RankedVote], priority: &Priority) -> Result<Decision, EnsembleError> {
    if ranked.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let mut points = [0u32; Emotion::COUNT];
    for vote in ranked {
        if vote.first == vote.second {
            return Err(EnsembleError::DuplicateRanking {
                model: vote.model.clone(),
                label: vote.first,
            });
        }
        points[vote.first.index()] += 2;
        points[vote.second.index()] += 1;
    }
    let top = *points.iter().max().expect("six classes");
    let tied: Vec<Emotion> = Emotion::ALL
        .iter()
        .copied()
        .filter(|e| points[e.index()] == top)
        .collect();
    if let [only] = tied.as_slice() {
        return Ok(Decision {
            label: *only,
            rule: Rule::Top2Score,
        });
    }
    let by_priority = priority.iter().find_map(|m| {
        ranked
            .iter()
            .find(|v| &v.model == m && tied.contains(&v.first))
            .map(|v| v.first)
    });
    Ok(Decision {
        label: by_priority.unwrap_or(tied[0]),
        rule: Rule::Top2Tiebreak,
    })
}

/// Per-model predictions a strategy may draw on.
#[derive(Debug, Clone, Default)]
pub struct StrategyInputs {
    pub multiclass: BTreeMap<ModelId, PredictionSet>,
    /// One verdict set per class, produced by that class's binary model.
    /// When absent, verdicts are read off the binary model's multiclass label.
    pub verdicts: Option<BTreeMap<Emotion, VerdictSet>>,
    pub ranked: BTreeMap<ModelId, RankedSet>,
}

impl StrategyInputs {
    pub fn from_multiclass(multiclass: BTreeMap<ModelId, PredictionSet>) -> Self {
        Self {
            multiclass,
            ..Self::default()
        }
    }
}

/// Audit trail entry for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub votes: BTreeMap<ModelId, Emotion>,
    pub rule: String,
    pub label: Emotion,
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub predictions: PredictionSet,
    pub audit: Vec<AuditRecord>,
    /// Items left unresolved, within the configured tolerance.
    pub unresolved: Vec<(String, EnsembleError)>,
}

enum Prepared {
    Vote(MajorityVoter),
    Route(RoutingTable),
    Binary(BinaryPlan, BinaryResolver),
    Top2,
}

/// Applies the configured strategy to every item of `ds`.
///
/// Items are processed in parallel; the output is keyed by id and therefore
/// independent of scheduling. Fails when the share of unresolvable items
/// exceeds `max_unresolved_fraction`.
pub fn run_strategy(
    ds: &Dataset,
    inputs: &StrategyInputs,
    config: &EnsembleConfig,
    profile: &SkillProfile,
) -> Result<StrategyOutcome, EnsembleError> {
    config.validate()?;
    let prepared = match &config.strategy {
        Strategy::MajorityVote {
            fallback,
            require_strict_majority,
        } => Prepared::Vote(MajorityVoter::new(
            fallback,
            *require_strict_majority,
            &config.priority,
            profile,
        )?),
        Strategy::RouteByLanguage { metric } => {
            Prepared::Route(build_routing_table(profile, *metric, &config.priority)?)
        }
        Strategy::BinaryDecompose { resolver } => {
            Prepared::Binary(BinaryPlan::new(resolver, profile, &config.priority)?, resolver.clone())
        }
        Strategy::Top2Rerank => {
            if inputs.ranked.is_empty() {
                return Err(EnsembleError::InvalidConfig(
                    "top-2 reranking needs ranked (label, label2) predictions".into(),
                ));
            }
            Prepared::Top2
        }
    };
    let needs_multiclass =
        !matches!(prepared, Prepared::Top2) && !(matches!(prepared, Prepared::Binary(..)) && inputs.verdicts.is_some());
    if needs_multiclass {
        if let Some(m) = config.priority.iter().find(|m| !inputs.multiclass.contains_key(*m)) {
            return Err(EnsembleError::InvalidConfig(format!(
                "no predictions supplied for model {m}"
            )));
        }
    }

    let results: Vec<(AuditRecord, Option<EnsembleError>)> = ds
        .items()
        .par_iter()
        .map(|item| {
            let votes: BTreeMap<ModelId, Emotion> = config
                .priority
                .iter()
                .filter_map(|m| inputs.multiclass.get(m)?.get(&item.id).map(|l| (m.clone(), l)))
                .collect();
            let decision = decide_item(item, &votes, inputs, &prepared, &config.priority);
            match decision {
                Ok(d) => (
                    AuditRecord {
                        id: item.id.clone(),
                        votes,
                        rule: d.rule.to_string(),
                        label: d.label,
                    },
                    None,
                ),
                Err(e) => (
                    AuditRecord {
                        id: item.id.clone(),
                        votes,
                        rule: "unresolved".into(),
                        label: Emotion::Neutral,
                    },
                    Some(e),
                ),
            }
        })
        .collect();

    let total = results.len();
    let mut predictions = PredictionSet::new();
    let mut audit = Vec::with_capacity(total);
    let mut unresolved = Vec::new();
    for (record, err) in results {
        match err {
            None => {
                predictions.insert(record.id.clone(), record.label);
                audit.push(record);
            }
            Some(e) => unresolved.push((record.id, e)),
        }
    }
    if total > 0 && unresolved.len() as f64 > config.max_unresolved_fraction * total as f64 {
        return Err(EnsembleError::ThresholdExceeded {
            unresolved,
            total,
            allowed: config.max_unresolved_fraction,
        });
    }
    Ok(StrategyOutcome {
        predictions,
        audit,
        unresolved,
    })
}

fn decide_item(
    item: &LabeledItem,
    votes: &BTreeMap<ModelId, Emotion>,
    inputs: &StrategyInputs,
    prepared: &Prepared,
    priority: &Priority,
) -> Result<Decision, EnsembleError> {
    match prepared {
        Prepared::Vote(voter) => {
            let ballot = Ballot {
                item_id: item.id.clone(),
                votes: votes.clone(),
            };
            voter.decide(&ballot, item.language)
        }
        Prepared::Route(table) => route_predict(item, table, &inputs.multiclass),
        Prepared::Binary(plan, resolver) => {
            let verdicts: BTreeMap<Emotion, Verdict> = match &inputs.verdicts {
                Some(sets) => Emotion::ALL
                    .iter()
                    .filter_map(|&c| sets.get(&c)?.get(&item.id).map(|v| (c, v)))
                    .collect(),
                None => Emotion::ALL
                    .iter()
                    .map(|&c| {
                        let said = votes.get(plan.model_for(c)).copied();
                        (c, if said == Some(c) { Verdict::Yes } else { Verdict::No })
                    })
                    .collect(),
            };
            let fallback_label = resolver
                .fallback_model
                .as_ref()
                .and_then(|m| inputs.multiclass.get(m)?.get(&item.id));
            binary_decompose(&item.id, &verdicts, resolver, plan, fallback_label)
        }
        Prepared::Top2 => {
            let ranked: Vec<RankedVote> = priority
                .iter()
                .filter_map(|m| {
                    let (first, second) = *inputs.ranked.get(m)?.get(&item.id)?;
                    Some(RankedVote {
                        model: m.clone(),
                        first,
                        second,
                    })
                })
                .collect();
            top2_select(&ranked, priority)
        }
    }
}
