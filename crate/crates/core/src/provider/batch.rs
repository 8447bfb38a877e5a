//! Bounded-concurrency batch prediction with an append-only, resumable log.
//!
//! Each finished item is appended to the log as one JSON line and flushed
//! before the next is reported. A rerun with the same log skips items that
//! already reached `ok` or `abstained`; failed items are retried. When the
//! batch finishes the log is rewritten atomically in dataset order, so a log
//! file belongs to a single task.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::{excerpt, Answer, ChatClient, LabelOutcome, ProviderConfig};
use super::prompt::Task;
use crate::error::ProviderError;
use crate::fsutil::write_atomic;
use crate::ingest::{Dataset, LabelMap, PredictionSet};
use crate::labels::{normalize_label, Emotion, LabelSet, LabeledItem, Language, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Abstained,
    Error,
}

/// One log line per item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub task: Task,
    pub attempts: u32,
    pub outcome: Outcome,
    /// Canonical label or translated text when `outcome` is `ok`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unchanged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BatchRecord {
    fn is_final(&self) -> bool {
        matches!(self.outcome, Outcome::Ok | Outcome::Abstained)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchResult {
    pub task: Task,
    /// Records in dataset order, restored ones included.
    pub records: Vec<BatchRecord>,
    /// Ids sent to the provider during this run.
    pub requested: Vec<String>,
}

impl BatchResult {
    fn labels<L: LabelSet>(&self) -> LabelMap<L> {
        self.records
            .iter()
            .filter(|r| r.outcome == Outcome::Ok)
            .filter_map(|r| Some((r.id.clone(), normalize_label::<L>(r.value.as_deref()?).ok()?)))
            .collect()
    }

    /// Emotion labels from a `classify` batch.
    pub fn predictions(&self) -> PredictionSet {
        self.labels::<Emotion>()
    }

    pub fn verdicts(&self) -> LabelMap<Verdict> {
        self.labels::<Verdict>()
    }

    pub fn languages(&self) -> LabelMap<Language> {
        self.labels::<Language>()
    }

    /// Translated texts from a `translate` batch.
    pub fn texts(&self) -> BTreeMap<String, String> {
        self.records
            .iter()
            .filter(|r| r.outcome == Outcome::Ok)
            .filter_map(|r| Some((r.id.clone(), r.value.clone()?)))
            .collect()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.records.iter().filter(|r| r.outcome == outcome).count()
    }
}

fn label_record<L: LabelSet>(id: &str, task: Task, answer: Answer<LabelOutcome<L>>) -> BatchRecord {
    let (outcome, value) = match answer.value {
        LabelOutcome::Label(l) => (Outcome::Ok, Some(l.as_str().to_string())),
        LabelOutcome::Abstained { .. } => (Outcome::Abstained, None),
    };
    BatchRecord {
        id: id.to_string(),
        task,
        attempts: answer.attempts,
        outcome,
        value,
        unchanged: None,
        raw: Some(excerpt(&answer.raw)),
        error: None,
    }
}

fn run_item(client: &ChatClient, item: &LabeledItem, task: Task) -> BatchRecord {
    let result = match task {
        Task::Classify => client.classify(&item.text).map(|a| label_record(&item.id, task, a)),
        Task::ClassifyBinary(c) => client
            .classify_binary(&item.text, c)
            .map(|a| label_record(&item.id, task, a)),
        Task::DetectLanguage => client
            .detect_language(&item.text)
            .map(|a| label_record(&item.id, task, a)),
        Task::Translate => client.translate_to_english(&item.text).map(|a| BatchRecord {
            id: item.id.clone(),
            task,
            attempts: a.attempts,
            outcome: Outcome::Ok,
            value: Some(a.value.text),
            unchanged: Some(a.value.unchanged),
            raw: None,
            error: None,
        }),
    };
    result.unwrap_or_else(|e| BatchRecord {
        id: item.id.clone(),
        task,
        attempts: match &e {
            ProviderError::UnknownLabelExhausted { attempts, .. } => *attempts,
            _ => client.config().max_retries + 1,
        },
        outcome: Outcome::Error,
        value: None,
        unchanged: None,
        raw: match &e {
            ProviderError::UnknownLabelExhausted { raw, .. } => Some(excerpt(raw)),
            _ => None,
        },
        error: Some(e.to_string()),
    })
}

/// Reads final records for `task` from an existing log; later lines win.
pub fn read_log(path: &Path, task: Task) -> Result<HashMap<String, BatchRecord>, ProviderError> {
    let log_err = |source| ProviderError::Log {
        path: path.to_path_buf(),
        source,
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(log_err(e)),
    };
    let mut done = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        // a torn final line from a crash is skipped
        let Ok(record) = serde_json::from_str::<BatchRecord>(line) else {
            continue;
        };
        if record.task != task {
            continue;
        }
        if record.is_final() {
            done.insert(record.id.clone(), record);
        } else {
            done.remove(&record.id);
        }
    }
    Ok(done)
}

struct LogWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl LogWriter {
    fn open(path: &Path) -> Result<Self, ProviderError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| ProviderError::Log {
                path: path.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ProviderError::Log {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    fn append(&self, record: &BatchRecord) -> Result<(), ProviderError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("log lock");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|source| ProviderError::Log {
                path: self.path.clone(),
                source,
            })
    }
}

/// Runs `task` over every item not already finished in `log`.
///
/// Per-item failures are recorded, not raised. The call itself fails only on
/// a missing token, an invalid config, or an unwritable log.
pub fn batch_predict(
    cfg: &ProviderConfig,
    ds: &Dataset,
    task: Task,
    log: Option<&Path>,
) -> Result<BatchResult, ProviderError> {
    let client = ChatClient::new(cfg.clone())?;
    let mut done = match log {
        Some(p) => read_log(p, task)?,
        None => HashMap::new(),
    };
    let pending: Vec<&LabeledItem> = ds.iter().filter(|i| !done.contains_key(&i.id)).collect();
    let writer = log.map(LogWriter::open).transpose()?;

    let next = AtomicUsize::new(0);
    let fresh: Mutex<HashMap<String, BatchRecord>> = Mutex::new(HashMap::new());
    let log_failure: Mutex<Option<ProviderError>> = Mutex::new(None);
    let workers = cfg.max_concurrency.min(pending.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(i) else { break };
                if log_failure.lock().expect("lock").is_some() {
                    break;
                }
                let record = run_item(&client, item, task);
                if let Some(w) = &writer {
                    if let Err(e) = w.append(&record) {
                        log_failure.lock().expect("lock").get_or_insert(e);
                        break;
                    }
                }
                fresh.lock().expect("lock").insert(record.id.clone(), record);
            });
        }
    });
    if let Some(e) = log_failure.into_inner().expect("lock") {
        return Err(e);
    }

    let mut fresh = fresh.into_inner().expect("lock");
    let requested: Vec<String> = pending.iter().map(|i| i.id.clone()).collect();
    let records: Vec<BatchRecord> = ds
        .iter()
        .filter_map(|i| fresh.remove(&i.id).or_else(|| done.remove(&i.id)))
        .collect();
    if let Some(p) = log {
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        write_atomic(p, body.as_bytes()).map_err(|source| ProviderError::Log {
            path: p.to_path_buf(),
            source,
        })?;
    }
    Ok(BatchResult {
        task,
        records,
        requested,
    })
}
