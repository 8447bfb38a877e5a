//! Confusion matrices, per-class and aggregate F1, per-language slices and
//! model skill profiles.
//!
//! Zero denominators yield 0. An item with a gold label but no prediction is a
//! false negative for its gold class and a false positive nowhere.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::ingest::{Dataset, PredictionSet};
use crate::labels::{Emotion, LabelSet, Language, ModelId};

/// Which aggregate an F1 number refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricVariant {
    Micro,
    Macro,
    Weighted,
}

impl MetricVariant {
    pub const ALL: [MetricVariant; 3] = [MetricVariant::Micro, MetricVariant::Macro, MetricVariant::Weighted];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricVariant::Micro => "micro",
            MetricVariant::Macro => "macro",
            MetricVariant::Weighted => "weighted",
        }
    }
}

impl fmt::Display for MetricVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "micro" => Ok(MetricVariant::Micro),
            "macro" => Ok(MetricVariant::Macro),
            "weighted" => Ok(MetricVariant::Weighted),
            other => Err(format!("unknown metric variant {other:?}")),
        }
    }
}

/// Which classes macro-F1 averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroAveraging {
    /// Classes with non-zero gold support in the evaluated slice.
    #[default]
    PresentClasses,
    /// All six classes; absent classes contribute F1 = 0.
    AllClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default)]
    pub macro_averaging: MacroAveraging,
}

/// Rows are gold labels, columns predictions, both in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; Emotion::COUNT]; Emotion::COUNT],
    /// Items with a gold label but no prediction, by gold class.
    missing: [u64; Emotion::COUNT],
}

impl ConfusionMatrix {
    pub fn record(&mut self, gold: Emotion, predicted: Option<Emotion>) {
        match predicted {
            Some(p) => self.counts[gold.index()][p.index()] += 1,
            None => self.missing[gold.index()] += 1,
        }
    }

    pub fn get(&self, gold: Emotion, predicted: Emotion) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn missing(&self) -> u64 {
        self.missing.iter().sum()
    }

    pub fn missing_for(&self, gold: Emotion) -> u64 {
        self.missing[gold.index()]
    }

    /// Items that received a prediction.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Items with a gold label, predicted or not.
    pub fn evaluated(&self) -> u64 {
        self.total() + self.missing()
    }

    pub fn true_positives(&self, class: Emotion) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: Emotion) -> u64 {
        let c = class.index();
        (0..Emotion::COUNT).filter(|&g| g != c).map(|g| self.counts[g][c]).sum()
    }

    pub fn false_negatives(&self, class: Emotion) -> u64 {
        let c = class.index();
        let wrong: u64 = (0..Emotion::COUNT).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        wrong + self.missing[c]
    }

    pub fn support(&self, class: Emotion) -> u64 {
        self.counts[class.index()].iter().sum::<u64>() + self.missing[class.index()]
    }

    pub fn rows(&self) -> &[[u64; Emotion::COUNT]; Emotion::COUNT] {
        &self.counts
    }
}

impl std::ops::AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        for g in 0..Emotion::COUNT {
            for p in 0..Emotion::COUNT {
                self.counts[g][p] += rhs.counts[g][p];
            }
            self.missing[g] += rhs.missing[g];
        }
    }
}

/// Builds the confusion matrix over every gold-labelled item of `gold`.
pub fn confusion_matrix(gold: &Dataset, preds: &PredictionSet) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::default();
    let mut any = false;
    for item in gold {
        if let Some(g) = item.gold {
            any = true;
            cm.record(g, preds.get(&item.id));
        }
    }
    if !any {
        return Err(MetricsError::NoGoldLabels);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub true_positives: u64,
}

/// Per-class precision, recall and F1 for all six classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassScores(BTreeMap<Emotion, ClassScore>);

impl ClassScores {
    pub fn get(&self, class: Emotion) -> &ClassScore {
        &self.0[&class]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Emotion, &ClassScore)> {
        self.0.iter().map(|(e, s)| (*e, s))
    }

    pub fn total_support(&self) -> u64 {
        self.0.values().map(|s| s.support).sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_scores(cm: &ConfusionMatrix) -> ClassScores {
    let scores = Emotion::ALL
        .iter()
        .map(|&class| {
            let tp = cm.true_positives(class);
            let precision = ratio(tp, tp + cm.false_positives(class));
            let recall = ratio(tp, tp + cm.false_negatives(class));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let score = ClassScore {
                precision,
                recall,
                f1,
                support: cm.support(class),
                true_positives: tp,
            };
            (class, score)
        })
        .collect();
    ClassScores(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    #[serde(rename = "micro")]
    pub micro_f1: f64,
    #[serde(rename = "macro")]
    pub macro_f1: f64,
    #[serde(rename = "weighted")]
    pub weighted_f1: f64,
}

impl AggregateScores {
    pub fn get(&self, variant: MetricVariant) -> f64 {
        match variant {
            MetricVariant::Micro => self.micro_f1,
            MetricVariant::Macro => self.macro_f1,
            MetricVariant::Weighted => self.weighted_f1,
        }
    }
}

/// Micro (pooled TP over total support, i.e. accuracy), macro and
/// support-weighted F1.
pub fn aggregate_scores(cs: &ClassScores, averaging: MacroAveraging) -> Result<AggregateScores, MetricsError> {
    let total = cs.total_support();
    if total == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let correct: u64 = cs.iter().map(|(_, s)| s.true_positives).sum();
    let macro_pool: Vec<f64> = cs
        .iter()
        .filter(|(_, s)| averaging == MacroAveraging::AllClasses || s.support > 0)
        .map(|(_, s)| s.f1)
        .collect();
    let macro_f1 = macro_pool.iter().sum::<f64>() / macro_pool.len() as f64;
    let weighted_f1 = cs.iter().map(|(_, s)| s.f1 * s.support as f64).sum::<f64>() / total as f64;
    Ok(AggregateScores {
        micro_f1: correct as f64 / total as f64,
        macro_f1,
        weighted_f1,
    })
}

fn language_matrices(
    gold: &Dataset,
    preds: &PredictionSet,
) -> Result<BTreeMap<Language, ConfusionMatrix>, MetricsError> {
    let mut untagged = Vec::new();
    let mut by_language: BTreeMap<Language, ConfusionMatrix> = BTreeMap::new();
    for item in gold {
        let Some(g) = item.gold else { continue };
        match item.language {
            Some(lang) => by_language.entry(lang).or_default().record(g, preds.get(&item.id)),
            None => untagged.push(item.id.clone()),
        }
    }
    if !untagged.is_empty() {
        return Err(MetricsError::MissingLanguageTags(untagged));
    }
    if by_language.is_empty() {
        return Err(MetricsError::NoGoldLabels);
    }
    Ok(by_language)
}

/// Aggregate scores for each language with at least one evaluated item.
pub fn slice_by_language(
    gold: &Dataset,
    preds: &PredictionSet,
    opts: EvalOptions,
) -> Result<BTreeMap<Language, AggregateScores>, MetricsError> {
    language_matrices(gold, preds)?
        .into_iter()
        .map(|(lang, cm)| Ok((lang, aggregate_scores(&class_scores(&cm), opts.macro_averaging)?)))
        .collect()
}

/// Everything the evaluator reports for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub evaluated: u64,
    pub missing: u64,
    pub confusion: ConfusionMatrix,
    pub classes: ClassScores,
    pub aggregate: AggregateScores,
    /// Present only when every evaluated item carries a language tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_language: Option<BTreeMap<Language, AggregateScores>>,
}

pub fn evaluate(gold: &Dataset, preds: &PredictionSet, opts: EvalOptions) -> Result<EvaluationReport, MetricsError> {
    let cm = confusion_matrix(gold, preds)?;
    let classes = class_scores(&cm);
    let aggregate = aggregate_scores(&classes, opts.macro_averaging)?;
    let by_language = match slice_by_language(gold, preds, opts) {
        Ok(map) => Some(map),
        Err(MetricsError::MissingLanguageTags(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvaluationReport {
        evaluated: cm.evaluated(),
        missing: cm.missing(),
        confusion: cm,
        classes,
        aggregate,
        by_language,
    })
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Evaluated items: {} (missing predictions: {})",
            self.evaluated, self.missing
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "Class", "Precision", "Recall", "F1", "Support"
        )?;
        for (class, s) in self.classes.iter() {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                class.as_str(),
                s.precision,
                s.recall,
                s.f1,
                s.support
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:<12} {:>8}", "Metric", "F1")?;
        writeln!(f, "{:<12} {:>8.4}", "Micro F1", self.aggregate.micro_f1)?;
        writeln!(f, "{:<12} {:>8.4}", "Macro F1", self.aggregate.macro_f1)?;
        writeln!(f, "{:<12} {:>8.4}", "Weighted F1", self.aggregate.weighted_f1)?;
        if let Some(langs) = &self.by_language {
            writeln!(f)?;
            writeln!(f, "{:<10} {:>8} {:>8} {:>8}", "Language", "Micro", "Macro", "Weighted")?;
            for (lang, a) in langs {
                writeln!(
                    f,
                    "{:<10} {:>8.4} {:>8.4} {:>8.4}",
                    lang.as_str(),
                    a.micro_f1,
                    a.macro_f1,
                    a.weighted_f1
                )?;
            }
        }
        Ok(())
    }
}

/// Measured F1 per model, sliced by language and metric, by class, and overall.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkillProfile {
    #[serde(default)]
    pub by_language: BTreeMap<ModelId, BTreeMap<Language, AggregateScores>>,
    #[serde(default)]
    pub by_class: BTreeMap<ModelId, BTreeMap<Emotion, f64>>,
    pub overall_weighted: BTreeMap<ModelId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overall_micro: BTreeMap<ModelId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overall_macro: BTreeMap<ModelId, f64>,
}

impl SkillProfile {
    pub fn language_score(&self, model: &ModelId, lang: Language, variant: MetricVariant) -> Option<f64> {
        self.by_language.get(model)?.get(&lang).map(|a| a.get(variant))
    }

    pub fn class_score(&self, model: &ModelId, class: Emotion) -> Option<f64> {
        self.by_class.get(model)?.get(&class).copied()
    }

    pub fn overall(&self, model: &ModelId, variant: MetricVariant) -> Option<f64> {
        let table = match variant {
            MetricVariant::Micro => &self.overall_micro,
            MetricVariant::Macro => &self.overall_macro,
            MetricVariant::Weighted => &self.overall_weighted,
        };
        table.get(model).copied()
    }

    /// Every model mentioned anywhere in the profile.
    pub fn models(&self) -> Vec<ModelId> {
        let mut all: Vec<ModelId> = self
            .by_language
            .keys()
            .chain(self.by_class.keys())
            .chain(self.overall_weighted.keys())
            .chain(self.overall_micro.keys())
            .chain(self.overall_macro.keys())
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        all
    }

    /// Checks that every stored score lies in [0, 1].
    pub fn validate(&self) -> Result<(), MetricsError> {
        let check = |what: String, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(MetricsError::ScoreOutOfRange { what, value })
            }
        };
        for (m, langs) in &self.by_language {
            for (l, a) in langs {
                for v in MetricVariant::ALL {
                    check(format!("{m}/{l}/{v}"), a.get(v))?;
                }
            }
        }
        for (m, classes) in &self.by_class {
            for (c, s) in classes {
                check(format!("{m}/{c}"), *s)?;
            }
        }
        for (name, table) in [
            ("overall_weighted", &self.overall_weighted),
            ("overall_micro", &self.overall_micro),
            ("overall_macro", &self.overall_macro),
        ] {
            for (m, s) in table {
                check(format!("{name}/{m}"), *s)?;
            }
        }
        Ok(())
    }

    /// Language-by-metric table, one column per model.
    pub fn render_language_table(&self, models: &[ModelId]) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10} {:<12}", "Language", "Metric");
        for m in models {
            let _ = write!(out, " {:>12}", m.as_str());
        }
        out.push('\n');
        for lang in Language::ALL {
            for (variant, label) in [
                (MetricVariant::Micro, "Micro F1"),
                (MetricVariant::Macro, "Macro F1"),
                (MetricVariant::Weighted, "Weighted F1"),
            ] {
                let _ = write!(out, "{:<10} {:<12}", lang.as_str(), label);
                for m in models {
                    match self.language_score(m, *lang, variant) {
                        Some(s) => {
                            let _ = write!(out, " {s:>12.4}");
                        }
                        None => {
                            let _ = write!(out, " {:>12}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Class-by-model F1 table.
    pub fn render_class_table(&self, models: &[ModelId]) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "Class");
        for m in models {
            let _ = write!(out, " {:>12}", m.as_str());
        }
        out.push('\n');
        for class in Emotion::ALL {
            let _ = write!(out, "{:<10}", class.as_str());
            for m in models {
                match self.class_score(m, *class) {
                    Some(s) => {
                        let _ = write!(out, " {s:>12.4}");
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Overall weighted F1 per model, best first.
    pub fn render_overall_table(&self) -> String {
        let mut rows: Vec<_> = self.overall_weighted.iter().collect();
        rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut out = format!("{:<14} {:>8}\n", "Model", "F1");
        for (m, s) in rows {
            let _ = writeln!(out, "{:<14} {:>8.4}", m.as_str(), s);
        }
        out
    }
}

pub fn load_skill_profile(path: &Path) -> Result<SkillProfile, crate::error::IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| crate::error::IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let profile: SkillProfile = serde_json::from_str(&text).map_err(|e| crate::error::IngestError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    profile.validate().map_err(|e| crate::error::IngestError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(profile)
}

/// Builds a profile from dev-set predictions of each model.
pub fn build_skill_profile(
    gold: &Dataset,
    preds_by_model: &BTreeMap<ModelId, PredictionSet>,
    opts: EvalOptions,
) -> Result<SkillProfile, MetricsError> {
    let mut profile = SkillProfile::default();
    for (model, preds) in preds_by_model {
        let with_model = |source: MetricsError| MetricsError::Model {
            model: model.clone(),
            source: Box::new(source),
        };
        let langs = language_matrices(gold, preds).map_err(with_model)?;
        let mut overall = ConfusionMatrix::default();
        let mut by_language = BTreeMap::new();
        for (lang, cm) in &langs {
            overall += cm;
            let agg = aggregate_scores(&class_scores(cm), opts.macro_averaging).map_err(with_model)?;
            by_language.insert(*lang, agg);
        }
        let classes = class_scores(&overall);
        let agg = aggregate_scores(&classes, opts.macro_averaging).map_err(with_model)?;
        profile.by_language.insert(model.clone(), by_language);
        profile
            .by_class
            .insert(model.clone(), classes.iter().map(|(c, s)| (c, s.f1)).collect());
        profile.overall_weighted.insert(model.clone(), agg.weighted_f1);
        profile.overall_micro.insert(model.clone(), agg.micro_f1);
        profile.overall_macro.insert(model.clone(), agg.macro_f1);
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabeledItem;
    use Emotion::*;

    fn dataset(rows: &[(Emotion, Option<Language>)]) -> Dataset {
        let items = rows
            .iter()
            .enumerate()
            .map(|(i, (g, l))| LabeledItem::new(format!("t{i}"), "x", *l, Some(*g)))
            .collect();
        Dataset::new("test", items).unwrap()
    }

    fn preds(labels: &[Emotion]) -> PredictionSet {
        labels.iter().enumerate().map(|(i, l)| (format!("t{i}"), *l)).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 5e-5
    }

    #[test]
    fn matrix_counts_and_missing() {
        let gold = dataset(&[(Joy, None)]);
        let cm = confusion_matrix(&gold, &preds(&[Joy])).unwrap();
        assert_eq!(cm.get(Joy, Joy), 1);
        assert_eq!(cm.missing(), 0);
        let cm = confusion_matrix(&gold, &PredictionSet::new()).unwrap();
        assert_eq!(cm.missing(), 1);
        let gold = dataset(&[(Joy, None), (Anger, None)]);
        let cm = confusion_matrix(&gold, &preds(&[Anger, Anger])).unwrap();
        assert_eq!(cm.get(Joy, Anger), 1);
        assert_eq!(cm.get(Anger, Anger), 1);
    }

    #[test]
    fn extra_predictions_ignored_and_no_gold_errors() {
        let gold = dataset(&[(Joy, None)]);
        let mut p = preds(&[Joy]);
        p.insert("other", Fear);
        assert_eq!(confusion_matrix(&gold, &p).unwrap().total(), 1);
        let unlabeled = Dataset::new("u", vec![LabeledItem::new("a", "x", None, None)]).unwrap();
        assert_eq!(confusion_matrix(&unlabeled, &p), Err(MetricsError::NoGoldLabels));
    }

    #[test]
    fn small_hand_cases() {
        // gold [A,A,B], pred [A,B,B]
        let gold = dataset(&[(Anger, None), (Anger, None), (Fear, None)]);
        let cs = class_scores(&confusion_matrix(&gold, &preds(&[Anger, Fear, Fear])).unwrap());
        assert_eq!(cs.get(Anger).precision, 1.0);
        assert_eq!(cs.get(Anger).recall, 0.5);
        assert!(close(cs.get(Anger).f1, 0.6667));
        assert_eq!(cs.get(Fear).precision, 0.5);
        assert!(close(cs.get(Fear).f1, 0.6667));
        let a = aggregate_scores(&cs, MacroAveraging::PresentClasses).unwrap();
        assert!(close(a.micro_f1, 0.6667) && close(a.macro_f1, 0.6667) && close(a.weighted_f1, 0.6667));

        // gold [A,A,A,B], pred [A,A,A,A]
        let gold = dataset(&[(Anger, None), (Anger, None), (Anger, None), (Fear, None)]);
        let cs = class_scores(&confusion_matrix(&gold, &preds(&[Anger; 4])).unwrap());
        let a = aggregate_scores(&cs, MacroAveraging::PresentClasses).unwrap();
        assert_eq!(a.micro_f1, 0.75);
        assert!(close(cs.get(Anger).f1, 0.8571));
        assert_eq!(cs.get(Fear).f1, 0.0);
        assert!(close(a.macro_f1, 0.4286));
        assert!(close(a.weighted_f1, 0.6429));
        let all = aggregate_scores(&cs, MacroAveraging::AllClasses).unwrap();
        assert!(close(all.macro_f1, 0.8571 / 6.0));
    }

    #[test]
    fn zero_support_class_scores_zero() {
        let gold = dataset(&[(Joy, None)]);
        let cs = class_scores(&confusion_matrix(&gold, &preds(&[Joy])).unwrap());
        let love = cs.get(Love);
        assert_eq!((love.precision, love.recall, love.f1, love.support), (0.0, 0.0, 0.0, 0));
        let a = aggregate_scores(&cs, MacroAveraging::PresentClasses).unwrap();
        assert_eq!((a.micro_f1, a.macro_f1, a.weighted_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_evaluation_errors() {
        let cs = class_scores(&ConfusionMatrix::default());
        assert_eq!(
            aggregate_scores(&cs, MacroAveraging::PresentClasses),
            Err(MetricsError::EmptyEvaluation)
        );
    }

    #[test]
    fn language_slices() {
        use Language::*;
        let gold = dataset(&[(Joy, Some(Spanish)), (Anger, Some(Spanish))]);
        let s = slice_by_language(&gold, &preds(&[Joy, Anger]), EvalOptions::default()).unwrap();
        assert_eq!(s.keys().copied().collect::<Vec<_>>(), [Spanish]);

        let gold = dataset(&[(Joy, Some(Dutch)), (Fear, Some(French))]);
        let s = slice_by_language(&gold, &preds(&[Joy, Anger]), EvalOptions::default()).unwrap();
        assert_eq!(s[&Dutch].micro_f1, 1.0);
        assert_eq!(s[&French].micro_f1, 0.0);

        let gold = dataset(&[(Joy, Some(Dutch)), (Fear, None)]);
        match slice_by_language(&gold, &preds(&[Joy, Fear]), EvalOptions::default()) {
            Err(MetricsError::MissingLanguageTags(ids)) => assert_eq!(ids, ["t1"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn profile_for_perfect_and_identical_models() {
        use Language::*;
        let gold = dataset(&[(Joy, Some(Dutch)), (Fear, Some(French)), (Love, Some(French))]);
        let perfect = preds(&[Joy, Fear, Love]);
        let a = ModelId::new("a").unwrap();
        let b = ModelId::new("b").unwrap();
        let models: BTreeMap<_, _> = [(a.clone(), perfect.clone()), (b.clone(), perfect)].into();
        let p = build_skill_profile(&gold, &models, EvalOptions::default()).unwrap();
        assert_eq!(p.by_language[&a], p.by_language[&b]);
        assert_eq!(p.by_class[&a], p.by_class[&b]);
        for v in MetricVariant::ALL {
            assert_eq!(p.language_score(&a, French, v), Some(1.0));
            assert_eq!(p.overall(&a, v), Some(1.0));
        }
        for c in [Joy, Fear, Love] {
            assert_eq!(p.class_score(&a, c), Some(1.0));
        }
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut p = SkillProfile::default();
        p.overall_weighted.insert(ModelId::new("m").unwrap(), 1.5);
        assert!(p.validate().is_err());
    }
}
