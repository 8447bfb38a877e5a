//! Closed label sets, items, ballots and response normalization.
//!
//! Every label set here is closed and canonically ordered (alphabetical), so
//! `Ord` on the enums doubles as the final tie-break everywhere else in the
//! crate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::LabelError;

/// Characters stripped from both ends of a raw model response.
const EDGE_PUNCTUATION: &[char] = &['.', ',', '!', '?', ':', ';', '"', '\''];

/// A closed, canonically ordered label set.
pub trait LabelSet: Copy + Ord + fmt::Debug + 'static {
    /// Human name of the set, used in error messages.
    const SET_NAME: &'static str;
    /// All members in canonical order.
    const ALL: &'static [Self];

    /// Canonical spelling used in files and reports.
    fn as_str(&self) -> &'static str;

    /// Canonical position within [`Self::ALL`].
    fn index(&self) -> usize {
        Self::ALL
            .iter()
            .position(|l| l == self)
            .expect("label is a member of its own set")
    }
}

/// Strips whitespace and edge punctuation and lowercases a raw response.
fn clean(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c.is_whitespace() || EDGE_PUNCTUATION.contains(&c))
        .to_lowercase()
}

/// Maps a raw string onto a member of `L`.
///
/// Single-token, case-insensitive match after trimming whitespace and the
/// punctuation `. , ! ? : ; " '` from both ends. Anything else, including
/// multi-word answers that merely contain a label, is rejected.
pub fn normalize_label<L: LabelSet>(raw: &str) -> Result<L, LabelError> {
    let cleaned = clean(raw);
    if cleaned.is_empty() || cleaned.chars().any(char::is_whitespace) {
        return Err(LabelError::unknown::<L>(raw));
    }
    L::ALL
        .iter()
        .copied()
        .find(|l| l.as_str().to_lowercase() == cleaned)
        .ok_or_else(|| LabelError::unknown::<L>(raw))
}

macro_rules! closed_label_set {
    (
        $(#[$meta:meta])*
        $name:ident, $set_name:literal, [$($variant:ident => $text:literal),+ $(,)?]
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl LabelSet for $name {
            const SET_NAME: &'static str = $set_name;
            const ALL: &'static [Self] = &[$($name::$variant),+];

            fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = LabelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                normalize_label(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                normalize_label(&raw).map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_label_set!(
    /// The six emotion classes, alphabetical.
    Emotion, "emotion-6", [
        Anger => "Anger",
        Fear => "Fear",
        Joy => "Joy",
        Love => "Love",
        Neutral => "Neutral",
        Sadness => "Sadness",
    ]
);

closed_label_set!(
    /// The five corpus languages, alphabetical.
    Language, "language-5", [
        Dutch => "Dutch",
        English => "English",
        French => "French",
        Russian => "Russian",
        Spanish => "Spanish",
    ]
);

closed_label_set!(
    /// Answer to a one-vs-rest question.
    Verdict, "yes-no", [
        No => "NO",
        Yes => "YES",
    ]
);

impl Emotion {
    pub const COUNT: usize = 6;
}

impl Language {
    pub const COUNT: usize = 5;
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

/// Opaque model name. Priority is carried separately by [`Priority`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn new(name: impl Into<String>) -> Result<Self, LabelError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(LabelError::EmptyModelName);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ModelId {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::new(s)
    }
}

/// Canonical model priority order; rank 1 is the first entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelId>", into = "Vec<ModelId>")]
pub struct Priority(Vec<ModelId>);

impl Priority {
    pub fn new(models: Vec<ModelId>) -> Result<Self, LabelError> {
        if models.is_empty() {
            return Err(LabelError::EmptyPriority);
        }
        for (i, m) in models.iter().enumerate() {
            if models[..i].contains(m) {
                return Err(LabelError::DuplicateModel(m.to_string()));
            }
        }
        Ok(Self(models))
    }

    /// 1-based rank, `None` when the model is not configured.
    pub fn rank(&self, model: &ModelId) -> Option<usize> {
        self.0.iter().position(|m| m == model).map(|i| i + 1)
    }

    pub fn contains(&self, model: &ModelId) -> bool {
        self.0.contains(model)
    }

    pub fn models(&self) -> &[ModelId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelId> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<ModelId>> for Priority {
    type Error = LabelError;

    fn try_from(value: Vec<ModelId>) -> Result<Self, Self::Error> {
        Priority::new(value)
    }
}

impl From<Priority> for Vec<ModelId> {
    fn from(p: Priority) -> Self {
        p.0
    }
}

/// One text, optionally tagged with its language and gold emotion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub gold: Option<Emotion>,
}

impl LabeledItem {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: Option<Language>,
        gold: Option<Emotion>,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            language,
            gold,
        }
    }
}

/// Votes cast for one item. Abstaining models are simply absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ballot {
    pub item_id: String,
    pub votes: BTreeMap<ModelId, Emotion>,
}

impl Ballot {
    pub fn new(item_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            votes: BTreeMap::new(),
        }
    }

    pub fn with_vote(mut self, model: ModelId, label: Emotion) -> Self {
        self.votes.insert(model, label);
        self
    }

    /// Vote count per emotion, indexed canonically.
    pub fn tally(&self) -> [usize; Emotion::COUNT] {
        let mut counts = [0; Emotion::COUNT];
        for label in self.votes.values() {
            counts[label.index()] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }
}
