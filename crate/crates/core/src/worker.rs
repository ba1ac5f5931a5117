//! Worker roles, the Operator action vocabulary, Technician scripts, worker
//! decisions and the shared artifact store.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::planner::SubtaskNode;
use crate::state::{ExecutionStatus, TriggerCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerRole {
    /// GUI interaction.
    Operator,
    /// Terminal commands and scripts.
    Technician,
    /// Reasoning over shared artifacts.
    Analyst,
}

impl fmt::Display for WorkerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum OperatorAction {
    Click { at: Point },
    DoubleClick { at: Point },
    Move { to: Point },
    Drag { from: Point, to: Point },
    TypeText { text: String },
    Hotkey { keys: Vec<String> },
    Scroll {
        delta: i32,
        #[serde(default)]
        at: Option<Point>,
    },
    SwitchApplications { target: String },
    SetCellValues { range: String, values: Vec<Vec<String>> },
    Open { target: String },
    Screenshot,
    Wait { millis: u64 },
    /// Writes `content` to the shared artifact store under `key`.
    Memorize { key: String, content: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("hotkey needs at least one key")]
    EmptyHotkey,
    #[error("wait duration must be positive")]
    ZeroWait,
    #[error("cell value grid must be non-empty and rectangular")]
    RaggedGrid,
    #[error("memorize key must be non-empty")]
    EmptyMemorizeKey,
    #[error("script body must be non-empty")]
    EmptyScript,
    #[error("script timeout must be positive")]
    ZeroTimeout,
    #[error("{role} cannot issue {action}")]
    RoleMismatch { role: WorkerRole, action: &'static str },
}

impl OperatorAction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Click { .. } => "Click",
            Self::DoubleClick { .. } => "DoubleClick",
            Self::Move { .. } => "Move",
            Self::Drag { .. } => "Drag",
            Self::TypeText { .. } => "TypeText",
            Self::Hotkey { .. } => "Hotkey",
            Self::Scroll { .. } => "Scroll",
            Self::SwitchApplications { .. } => "SwitchApplications",
            Self::SetCellValues { .. } => "SetCellValues",
            Self::Open { .. } => "Open",
            Self::Screenshot => "Screenshot",
            Self::Wait { .. } => "Wait",
            Self::Memorize { .. } => "Memorize",
        }
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        match self {
            Self::Hotkey { keys } if keys.is_empty() => Err(ActionError::EmptyHotkey),
            Self::Wait { millis: 0 } => Err(ActionError::ZeroWait),
            Self::SetCellValues { values, .. } => {
                let width = values.first().map_or(0, Vec::len);
                if width == 0 || values.iter().any(|row| row.len() != width) {
                    Err(ActionError::RaggedGrid)
                } else {
                    Ok(())
                }
            }
            Self::Memorize { key, .. } if key.is_empty() => Err(ActionError::EmptyMemorizeKey),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptLimits {
    pub timeout_ms: u64,
    pub max_output: usize,
}

impl Default for ScriptLimits {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            max_output: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TechnicianScript {
    pub body: String,
    /// Sandbox runtime, e.g. `bash` or `python3`.
    pub runtime: String,
    #[serde(default)]
    pub limits: ScriptLimits,
}

impl TechnicianScript {
    pub fn validate(&self) -> Result<(), ActionError> {
        if self.body.is_empty() {
            Err(ActionError::EmptyScript)
        } else if self.limits.timeout_ms == 0 {
            Err(ActionError::ZeroTimeout)
        } else {
            Ok(())
        }
    }
}

/// The executable half of a worker decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkerAction {
    Operator(OperatorAction),
    Script(TechnicianScript),
}

impl WorkerAction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Operator(a) => a.name(),
            Self::Script(_) => "Script",
        }
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        match self {
            Self::Operator(a) => a.validate(),
            Self::Script(s) => s.validate(),
        }
    }

    /// Technicians only run scripts, Analysts only memorize, Operators drive
    /// the GUI.
    pub fn check_role(&self, role: WorkerRole) -> Result<(), ActionError> {
        let allowed = matches!(
            (role, self),
            (WorkerRole::Technician, Self::Script(_))
                | (WorkerRole::Operator, Self::Operator(_))
                | (WorkerRole::Analyst, Self::Operator(OperatorAction::Memorize { .. }))
        );
        if allowed {
            Ok(())
        } else {
            Err(ActionError::RoleMismatch {
                role,
                action: self.name(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum WorkerDecision {
    #[serde(rename = "generate")]
    GenerateAction { action: WorkerAction },
    Done,
    Failed,
    CannotExecute {
        #[serde(default)]
        reason: String,
    },
    Supplement { query: String },
    Stale {
        #[serde(default)]
        reason: String,
    },
}

impl WorkerDecision {
    pub fn trigger(&self) -> TriggerCode {
        match self {
            Self::GenerateAction { .. } => TriggerCode::WorkerGenerateAction,
            Self::Done => TriggerCode::WorkerSuccess,
            Self::Failed | Self::CannotExecute { .. } => TriggerCode::WorkCannotExecute,
            Self::Supplement { .. } => TriggerCode::WorkerSupplement,
            Self::Stale { .. } => TriggerCode::WorkerStaleProgress,
        }
    }
}

/// Trigger for a worker reply; `None` means no decision arrived in time.
pub fn decision_trigger(decision: Option<&WorkerDecision>) -> TriggerCode {
    decision.map_or(TriggerCode::NoWorkerDecision, WorkerDecision::trigger)
}

pub struct WorkerRequest<'a> {
    pub role: WorkerRole,
    pub subtask: &'a SubtaskNode,
    pub observation: &'a str,
    pub artifacts: &'a ArtifactStore,
}

pub trait WorkerProvider {
    /// `None` when the worker produced nothing.
    fn decide(&mut self, request: &WorkerRequest<'_>) -> Option<WorkerDecision>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkerError {
    #[error("subtask `{subtask}` is assigned to {expected}, not {requested}")]
    RoleMismatch {
        subtask: String,
        expected: WorkerRole,
        requested: WorkerRole,
    },
    #[error(transparent)]
    InvalidAction(#[from] ActionError),
}

impl WorkerError {
    pub fn trigger(&self) -> TriggerCode {
        TriggerCode::GetActionError
    }
}

/// Asks the provider for the next decision on `subtask`, validating any
/// generated action against the role.
pub fn next_decision(
    role: WorkerRole,
    subtask: &SubtaskNode,
    observation: &str,
    artifacts: &ArtifactStore,
    provider: &mut dyn WorkerProvider,
) -> Result<Option<WorkerDecision>, WorkerError> {
    if subtask.role != role {
        return Err(WorkerError::RoleMismatch {
            subtask: subtask.id.to_string(),
            expected: subtask.role,
            requested: role,
        });
    }
    let request = WorkerRequest {
        role,
        subtask,
        observation,
        artifacts,
    };
    let decision = provider.decide(&request);
    if let Some(WorkerDecision::GenerateAction { action }) = &decision {
        action.validate()?;
        action.check_role(role)?;
    }
    Ok(decision)
}

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(60);

/// Runs the wrapped provider on a helper thread and gives up after
/// `deadline`; an expired call reads as "no decision".
pub struct DeadlineWorker<P> {
    inner: Arc<Mutex<P>>,
    deadline: Duration,
}

impl<P: WorkerProvider + Send + 'static> DeadlineWorker<P> {
    pub fn new(provider: P, deadline: Duration) -> Self {
        Self {
            inner: Arc::new(Mutex::new(provider)),
            deadline,
        }
    }

    pub fn with_default_deadline(provider: P) -> Self {
        Self::new(provider, DEFAULT_DEADLINE)
    }
}

impl<P: WorkerProvider + Send + 'static> WorkerProvider for DeadlineWorker<P> {
    fn decide(&mut self, request: &WorkerRequest<'_>) -> Option<WorkerDecision> {
        let role = request.role;
        let subtask = request.subtask.clone();
        let observation = request.observation.to_string();
        let artifacts = request.artifacts.clone();
        let inner = Arc::clone(&self.inner);
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut provider = match inner.lock() {
                Ok(guard) => guard,
                Err(poisoned) => poisoned.into_inner(),
            };
            let request = WorkerRequest {
                role,
                subtask: &subtask,
                observation: &observation,
                artifacts: &artifacts,
            };
            let _ = tx.send(provider.decide(&request));
        });
        rx.recv_timeout(self.deadline).ok().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactVersion {
    pub content: String,
    pub author: WorkerRole,
    /// Store-wide write sequence number.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub key: String,
    pub version: u32,
    pub author: WorkerRole,
    pub timestamp: u64,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArtifactError {
    #[error("artifact key must be non-empty")]
    EmptyKey,
    #[error("no artifact named `{0}`")]
    UnknownKey(String),
    #[error("artifact `{key}` has no version {version}")]
    UnknownVersion { key: String, version: u32 },
}

/// Append-only, versioned key/content store shared by all workers.
#[derive(Debug, Default)]
pub struct ArtifactStore {
    entries: RwLock<BTreeMap<String, Vec<ArtifactVersion>>>,
    clock: AtomicU64,
}

impl Clone for ArtifactStore {
    fn clone(&self) -> Self {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner()).clone();
        Self {
            entries: RwLock::new(entries),
            clock: AtomicU64::new(self.clock.load(Ordering::SeqCst)),
        }
    }
}

impl ArtifactStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a version and returns its 1-based number.
    pub fn write(&self, key: &str, content: &str, author: WorkerRole) -> Result<u32, ArtifactError> {
        if key.is_empty() {
            return Err(ArtifactError::EmptyKey);
        }
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let timestamp = self.clock.fetch_add(1, Ordering::SeqCst) + 1;
        let versions = entries.entry(key.to_string()).or_default();
        versions.push(ArtifactVersion {
            content: content.to_string(),
            author,
            timestamp,
        });
        Ok(versions.len() as u32)
    }

    /// Reads `version` (1-based) of `key`, or the latest when `None`.
    pub fn read(&self, key: &str, version: Option<u32>) -> Result<String, ArtifactError> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        let versions = entries
            .get(key)
            .ok_or_else(|| ArtifactError::UnknownKey(key.to_string()))?;
        let picked = match version {
            None => versions.last(),
            Some(0) => None,
            Some(v) => versions.get(v as usize - 1),
        };
        picked
            .map(|v| v.content.clone())
            .ok_or(ArtifactError::UnknownVersion {
                key: key.to_string(),
                version: version.unwrap_or(0),
            })
    }

    pub fn latest_version(&self, key: &str) -> Option<u32> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries.get(key).map(|v| v.len() as u32)
    }

    pub fn snapshot(&self) -> Vec<ArtifactRecord> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries
            .iter()
            .flat_map(|(key, versions)| {
                versions.iter().enumerate().map(move |(i, v)| ArtifactRecord {
                    key: key.clone(),
                    version: i as u32 + 1,
                    author: v.author,
                    timestamp: v.timestamp,
                    content: v.content.clone(),
                })
            })
            .collect()
    }
}

pub fn write_artifact(
    store: &ArtifactStore,
    key: &str,
    content: &str,
    author: WorkerRole,
) -> Result<u32, ArtifactError> {
    store.write(key, content, author)
}

pub fn read_artifact(store: &ArtifactStore, key: &str, version: Option<u32>) -> Result<String, ArtifactError> {
    store.read(key, version)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("sandbox unavailable: {0}")]
pub struct SandboxUnavailable(pub String);

impl SandboxUnavailable {
    pub fn trigger(&self) -> TriggerCode {
        TriggerCode::ExecutionError
    }
}

/// Isolated script runtime used by the Technician.
pub trait Sandbox {
    fn execute(&mut self, script: &TechnicianScript) -> Result<SandboxOutcome, SandboxUnavailable>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptResult {
    pub status: ExecutionStatus,
    pub output: String,
}

pub const TRUNCATION_MARKER: &str = "\n[output truncated]";

fn truncate_output(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut cut = max;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..cut])
}

pub fn run_script(
    script: &TechnicianScript,
    sandbox: &mut dyn Sandbox,
) -> Result<ScriptResult, SandboxUnavailable> {
    let outcome = sandbox.execute(script)?;
    let max = script.limits.max_output;
    let result = if outcome.elapsed_ms > script.limits.timeout_ms {
        ScriptResult {
            status: ExecutionStatus::Timeout,
            output: truncate_output(&outcome.stdout, max),
        }
    } else if outcome.exit_code != 0 {
        ScriptResult {
            status: ExecutionStatus::Error,
            output: truncate_output(&outcome.stderr, max),
        }
    } else {
        ScriptResult {
            status: ExecutionStatus::Executed,
            output: truncate_output(&outcome.stdout, max),
        }
    };
    Ok(result)
}
