//! Instruction prompts and message rendering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;
use crate::labels::{normalize_label, Emotion};

pub const LANGUAGE_DETECTION_PROMPT: &str = "Classify given texts as English,Dutch,French,Spanish,Russian. Respond only with one word based on which language the text is in.";

pub const TRANSLATION_PROMPT: &str =
    "Translate the text to English. Respond with the same text if already in English completely.";

/// Emotion prompt used with hosted zero-shot models.
pub const CLASSIFICATION_PROMPT: &str = "Classify given texts as Neutral, Joy, Anger, Love, Sadness, Fear. Respond only with one word based on which would be closest classification of user emotion from the text.";

/// Emotion prompt used with the fine-tuned models. The spelling is kept as trained.
pub const FINE_TUNED_CLASSIFICATION_PROMPT: &str = "Given the input text , classify it based on what emotion is being exibited among the following : Joy/Neutral/Anger/Love/Sadness/Fear. Respond with only one emotion only among the options given. Respond with only one word and nothing else.";

/// One-vs-rest question for a single class.
pub fn binary_prompt(class: Emotion) -> String {
    format!("Is the text indicating {class} ? Respond only with one word (YES / NO) based on input text.")
}

/// What a request asks the model to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Classify,
    ClassifyBinary(Emotion),
    DetectLanguage,
    Translate,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classify => f.write_str("classify"),
            Task::ClassifyBinary(c) => write!(f, "binary:{c}"),
            Task::DetectLanguage => f.write_str("language"),
            Task::Translate => f.write_str("translate"),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(class) = lower.strip_prefix("binary:") {
            return normalize_label::<Emotion>(class)
                .map(Task::ClassifyBinary)
                .map_err(|e| e.to_string());
        }
        match lower.as_str() {
            "classify" => Ok(Task::Classify),
            "language" | "detect_language" => Ok(Task::DetectLanguage),
            "translate" => Ok(Task::Translate),
            _ => Err(format!(
                "unknown task {s:?} (expected classify, binary:<Emotion>, language or translate)"
            )),
        }
    }
}

impl Serialize for Task {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Which emotion instruction to send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyPrompt {
    #[default]
    ZeroShot,
    FineTuned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: Task,
    pub instruction: String,
}

impl PromptTemplate {
    pub fn for_task(task: Task, style: ClassifyPrompt) -> Self {
        let instruction = match (task, style) {
            (Task::Classify, ClassifyPrompt::ZeroShot) => CLASSIFICATION_PROMPT.to_string(),
            (Task::Classify, ClassifyPrompt::FineTuned) => FINE_TUNED_CLASSIFICATION_PROMPT.to_string(),
            (Task::ClassifyBinary(c), _) => binary_prompt(c),
            (Task::DetectLanguage, _) => LANGUAGE_DETECTION_PROMPT.to_string(),
            (Task::Translate, _) => TRANSLATION_PROMPT.to_string(),
        };
        Self { task, instruction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A labelled demonstration for few-shot classification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: Emotion,
}

/// Instruction first, then any exemplar turns (classification only), then the
/// untouched input text.
pub fn render_prompt(
    template: &PromptTemplate,
    text: &str,
    exemplars: &[Exemplar],
) -> Result<Vec<Message>, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let mut messages = vec![Message::new(Role::System, template.instruction.clone())];
    if template.task == Task::Classify {
        for ex in exemplars {
            messages.push(Message::new(Role::User, ex.text.clone()));
            messages.push(Message::new(Role::Assistant, ex.label.to_string()));
        }
    }
    messages.push(Message::new(Role::User, text));
    Ok(messages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_instruction_then_text() {
        let t = PromptTemplate::for_task(Task::Classify, ClassifyPrompt::ZeroShot);
        let msgs = render_prompt(&t, "hola", &[]).unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].content, CLASSIFICATION_PROMPT);
        assert_eq!(msgs[1], Message::new(Role::User, "hola"));
    }

    #[test]
    fn binary_and_translate_wording() {
        let t = PromptTemplate::for_task(Task::ClassifyBinary(Emotion::Fear), ClassifyPrompt::ZeroShot);
        assert!(t.instruction.contains("Is the text indicating Fear ?"));
        let t = PromptTemplate::for_task(Task::Translate, ClassifyPrompt::ZeroShot);
        assert!(t
            .instruction
            .contains("Respond with the same text if already in English completely."));
    }

    #[test]
    fn text_is_not_preprocessed_and_empty_rejected() {
        let t = PromptTemplate::for_task(Task::DetectLanguage, ClassifyPrompt::ZeroShot);
        let raw = "  Ça va?\tOK  ";
        assert_eq!(render_prompt(&t, raw, &[]).unwrap()[1].content, raw);
        assert!(matches!(render_prompt(&t, " \n", &[]), Err(ProviderError::EmptyText)));
    }

    #[test]
    fn exemplars_become_demonstration_turns() {
        let t = PromptTemplate::for_task(Task::Classify, ClassifyPrompt::FineTuned);
        let ex = vec![Exemplar {
            text: "I am thrilled".into(),
            label: Emotion::Joy,
        }];
        let msgs = render_prompt(&t, "x", &ex).unwrap();
        let roles: Vec<_> = msgs.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant, Role::User]);
        assert_eq!(msgs[2].content, "Joy");
        // only the emotion task takes demonstrations
        let t = PromptTemplate::for_task(Task::Translate, ClassifyPrompt::ZeroShot);
        assert_eq!(render_prompt(&t, "x", &ex).unwrap().len(), 2);
    }

    #[test]
    fn task_parsing() {
        assert_eq!(
            "binary:fear".parse::<Task>().unwrap(),
            Task::ClassifyBinary(Emotion::Fear)
        );
        assert_eq!("classify".parse::<Task>().unwrap(), Task::Classify);
        assert!("binary:hope".parse::<Task>().is_err());
        for t in [
            Task::Classify,
            Task::ClassifyBinary(Emotion::Love),
            Task::DetectLanguage,
            Task::Translate,
        ] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
    }
}
