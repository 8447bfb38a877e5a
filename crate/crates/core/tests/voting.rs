//! Majority voting and routing against an enumerated reference.

use std::collections::BTreeMap;

use polyemo::ensemble::{
    build_routing_table, majority_vote, run_strategy, EnsembleConfig, FallbackPolicy, MajorityVoter, Rule,
    Strategy as Ens, StrategyInputs, DEFAULT_PRIORITY,
};
use polyemo::ingest::{Dataset, PredictionSet};
use polyemo::metrics::{AggregateScores, MetricVariant, SkillProfile};
use polyemo::{Ballot, Emotion, LabelSet, LabeledItem, Language, ModelId, Priority};
use proptest::prelude::*;

fn m(name: &str) -> ModelId {
    ModelId::new(name).unwrap()
}

fn models() -> Vec<ModelId> {
    DEFAULT_PRIORITY.iter().map(|n| m(n)).collect()
}

fn overall(scores: &[f64]) -> SkillProfile {
    let mut p = SkillProfile::default();
    for (model, s) in models().into_iter().zip(scores) {
        p.overall_weighted.insert(model, *s);
    }
    p
}

fn vote_config(fallback: FallbackPolicy, strict: bool, priority: Priority) -> EnsembleConfig {
    EnsembleConfig::new(
        Ens::MajorityVote {
            fallback,
            require_strict_majority: strict,
        },
        priority,
    )
}

fn global_best() -> FallbackPolicy {
    FallbackPolicy::GlobalBest {
        metric: MetricVariant::Weighted,
    }
}

/// Reference decision: `votes[i]` is the vote of `priority[i]`, `None` for abstention.
fn reference(
    votes: &[Option<Emotion>],
    priority: &[ModelId],
    fallback_first: &ModelId,
    strict: bool,
) -> Option<(Emotion, bool)> {
    let cast: Vec<Emotion> = votes.iter().flatten().copied().collect();
    if cast.is_empty() {
        return None;
    }
    let mut counts = BTreeMap::new();
    for e in &cast {
        *counts.entry(*e).or_insert(0usize) += 1;
    }
    let top = *counts.values().max().unwrap();
    let leaders: Vec<Emotion> = counts.iter().filter(|(_, c)| **c == top).map(|(e, _)| *e).collect();
    let decisive = if strict {
        2 * top > cast.len()
    } else {
        leaders.len() == 1
    };
    if decisive {
        return Some((leaders[0], true));
    }
    let first = priority.iter().position(|p| p == fallback_first).unwrap();
    let order = std::iter::once(first).chain((0..priority.len()).filter(|i| *i != first));
    order.into_iter().find_map(|i| votes[i]).map(|e| (e, false))
}

fn ballot(votes: &[Option<Emotion>], priority: &[ModelId]) -> Ballot {
    priority
        .iter()
        .zip(votes)
        .filter_map(|(model, v)| Some((model.clone(), (*v)?)))
        .fold(Ballot::new("b"), |b, (model, e)| b.with_vote(model, e))
}

fn check(
    voter: &MajorityVoter,
    votes: &[Option<Emotion>],
    priority: &[ModelId],
    fallback_first: &ModelId,
    strict: bool,
    lang: Option<Language>,
) {
    let got = voter.decide(&ballot(votes, priority), lang);
    match reference(votes, priority, fallback_first, strict) {
        None => assert!(got.is_err(), "{votes:?}"),
        Some((label, decisive)) => {
            let d = got.unwrap();
            assert_eq!(d.label, label, "{votes:?}");
            assert_eq!(matches!(d.rule, Rule::Plurality), decisive, "{votes:?}");
        }
    }
}

fn every_ballot() -> impl Iterator<Item = Vec<Option<Emotion>>> {
    // 7 options per voter: six labels or abstention
    (0..7usize.pow(5)).map(|mut code| {
        (0..5)
            .map(|_| {
                let d = code % 7;
                code /= 7;
                (d < 6).then(|| Emotion::ALL[d])
            })
            .collect()
    })
}

#[test]
fn exhaustive_global_best() {
    let priority = models();
    let prio = Priority::new(priority.clone()).unwrap();
    let profile = overall(&[0.5616, 0.5581, 0.5474, 0.5466, 0.5300]);
    for strict in [false, true] {
        let voter = MajorityVoter::new(&global_best(), strict, &prio, &profile).unwrap();
        for votes in every_ballot() {
            check(&voter, &votes, &priority, &priority[0], strict, None);
        }
    }
}

#[test]
fn exhaustive_global_best_when_best_model_ranks_low() {
    let priority = models();
    let prio = Priority::new(priority.clone()).unwrap();
    // GEMMA has the best overall score despite ranking last
    let profile = overall(&[0.50, 0.51, 0.52, 0.53, 0.60]);
    let voter = MajorityVoter::new(&global_best(), false, &prio, &profile).unwrap();
    for votes in every_ballot() {
        check(&voter, &votes, &priority, &priority[4], false, None);
    }
}

#[test]
fn exhaustive_language_routed() {
    let priority = models();
    let prio = Priority::new(priority.clone()).unwrap();
    let mut profile = SkillProfile::default();
    // each language routed to a different model
    for (i, model) in priority.iter().enumerate() {
        let row = Language::ALL
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let s = if i == j { 0.9 } else { 0.1 };
                (
                    *l,
                    AggregateScores {
                        micro_f1: s,
                        macro_f1: s,
                        weighted_f1: s,
                    },
                )
            })
            .collect();
        profile.by_language.insert(model.clone(), row);
    }
    let voter = MajorityVoter::new(
        &FallbackPolicy::LanguageRouted {
            metric: MetricVariant::Macro,
        },
        false,
        &prio,
        &profile,
    )
    .unwrap();
    for (j, lang) in Language::ALL.iter().enumerate() {
        for votes in every_ballot().step_by(3) {
            check(&voter, &votes, &priority, &priority[j], false, Some(*lang));
        }
    }
}

#[test]
fn exhaustive_fixed_model() {
    let priority = models();
    let prio = Priority::new(priority.clone()).unwrap();
    let voter = MajorityVoter::new(
        &FallbackPolicy::FixedModel {
            model: priority[2].clone(),
        },
        false,
        &prio,
        &SkillProfile::default(),
    )
    .unwrap();
    for votes in every_ballot() {
        check(&voter, &votes, &priority, &priority[2], false, None);
    }
}

fn vote() -> impl Strategy<Value = Option<Emotion>> {
    prop::option::weighted(0.85, (0..6usize).prop_map(|i| Emotion::ALL[i]))
}

fn setup() -> impl Strategy<Value = (Vec<Option<Emotion>>, Vec<usize>, Vec<f64>, bool)> {
    (
        prop::collection::vec(vote(), 5),
        Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        prop::collection::vec(prop_oneof![Just(0.5), 0.0..1.0f64], 5),
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_ballots_match_reference((votes, order, scores, strict) in setup()) {
        let priority: Vec<ModelId> = order.iter().map(|i| models()[*i].clone()).collect();
        let prio = Priority::new(priority.clone()).unwrap();
        let profile = overall(&scores);
        // reference GlobalBest: highest score, earliest in priority on ties
        let mut best = &priority[0];
        for p in &priority {
            if profile.overall_weighted[p] > profile.overall_weighted[best] {
                best = p;
            }
        }
        let cfg = vote_config(global_best(), strict, prio);
        let got = majority_vote(&ballot(&votes, &priority), &cfg, &profile, None);
        match reference(&votes, &priority, best, strict) {
            None => prop_assert!(got.is_err()),
            Some((label, _)) => prop_assert_eq!(got.unwrap().label, label),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn unanimity_wins(label in 0..6usize, voters in 1..=5usize) {
        let e = Emotion::ALL[label];
        let votes: Vec<Option<Emotion>> = (0..5).map(|i| (i < voters).then_some(e)).collect();
        let priority = models();
        let cfg = vote_config(global_best(), false, Priority::new(priority.clone()).unwrap());
        let d = majority_vote(&ballot(&votes, &priority), &cfg, &overall(&[0.5; 5]), None).unwrap();
        prop_assert_eq!(d.label, e);
        prop_assert_eq!(d.rule, Rule::Plurality);
    }

    #[test]
    fn unique_plurality_ignores_who_voted_what(
        votes in prop::collection::vec(vote(), 5),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let priority = models();
        let cfg = vote_config(global_best(), false, Priority::new(priority.clone()).unwrap());
        let profile = overall(&[0.5616, 0.5581, 0.5474, 0.5466, 0.5300]);
        let a = majority_vote(&ballot(&votes, &priority), &cfg, &profile, None);
        let shuffled: Vec<Option<Emotion>> = perm.iter().map(|i| votes[*i]).collect();
        let b = majority_vote(&ballot(&shuffled, &priority), &cfg, &profile, None);
        if let Ok(d) = &a {
            if d.rule == Rule::Plurality {
                prop_assert_eq!(b.unwrap(), d.clone());
            }
        }
    }

    #[test]
    fn decisions_are_repeatable(votes in prop::collection::vec(vote(), 5)) {
        let priority = models();
        let cfg = vote_config(global_best(), false, Priority::new(priority.clone()).unwrap());
        let profile = overall(&[0.5616, 0.5581, 0.5474, 0.5466, 0.5300]);
        let b = ballot(&votes, &priority);
        prop_assert_eq!(majority_vote(&b, &cfg, &profile, None), majority_vote(&b, &cfg, &profile, None));
    }

    #[test]
    fn routing_survives_monotone_rescaling(
        scores in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 5), 5),
        scale in 0.1..2.0f64,
        shift in -0.5..0.5f64,
    ) {
        let build = |f: &dyn Fn(f64) -> f64| {
            let mut p = SkillProfile::default();
            for (i, model) in models().into_iter().enumerate() {
                let row = Language::ALL
                    .iter()
                    .enumerate()
                    .map(|(j, l)| {
                        let s = f(scores[i][j]);
                        (*l, AggregateScores { micro_f1: s, macro_f1: s, weighted_f1: s })
                    })
                    .collect();
                p.by_language.insert(model, row);
            }
            p
        };
        let prio = Priority::new(models()).unwrap();
        let a = build_routing_table(&build(&|x| x), MetricVariant::Weighted, &prio).unwrap();
        let b = build_routing_table(&build(&|x| scale * x + shift), MetricVariant::Weighted, &prio).unwrap();
        let c = build_routing_table(&build(&|x| x.powi(3)), MetricVariant::Weighted, &prio).unwrap();
        prop_assert_eq!(&a.routes, &b.routes);
        prop_assert_eq!(&a.routes, &c.routes);
    }

    #[test]
    fn batch_run_equals_itemwise_votes(
        rows in prop::collection::vec((prop::collection::vec(vote(), 5), 0..5usize), 1..40),
    ) {
        let priority = models();
        let cfg = EnsembleConfig {
            max_unresolved_fraction: 1.0,
            ..vote_config(global_best(), false, Priority::new(priority.clone()).unwrap())
        };
        let profile = overall(&[0.5616, 0.5581, 0.5474, 0.5466, 0.5300]);
        let items = rows
            .iter()
            .enumerate()
            .map(|(i, (_, l))| LabeledItem::new(format!("i{i}"), "t", Some(Language::ALL[*l]), None))
            .collect();
        let ds = Dataset::new("prop", items).unwrap();
        let mut multiclass: BTreeMap<ModelId, PredictionSet> =
            priority.iter().map(|p| (p.clone(), PredictionSet::new())).collect();
        for (i, (votes, _)) in rows.iter().enumerate() {
            for (model, v) in priority.iter().zip(votes) {
                if let Some(e) = v {
                    multiclass.get_mut(model).unwrap().insert(format!("i{i}"), *e);
                }
            }
        }
        let out = run_strategy(&ds, &StrategyInputs::from_multiclass(multiclass), &cfg, &profile).unwrap();
        for (i, (votes, _)) in rows.iter().enumerate() {
            let id = format!("i{i}");
            let want = majority_vote(&ballot(votes, &priority), &cfg, &profile, None).ok().map(|d| d.label);
            prop_assert_eq!(out.predictions.get(&id), want);
        }
    }
}
