//! Administers instruments to chat-completion endpoints.
//!
//! One request per schedule entry, each with its own temperature. Invalid
//! completions are dropped and logged, never resampled, so the final n can
//! fall short of the target.

mod client;
mod prompt;
mod schedule;

pub use client::{ChatClient, ChatMessage, ChatRequest, ChatResponse, HttpChatClient, TransportError};
pub use prompt::{build_prompt, parse_completion, InvalidReason, ParseOutcome};
pub use schedule::build_temperature_schedule;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::instrument::{Instrument, ResponseMatrix, RowMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_backoff_ms: 1000, max_backoff_ms: 30_000 }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << retry.min(20)).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub target_n: usize,
    pub temperature_schedule: Vec<f64>,
    /// Cap on HTTP attempts, retries included, as a multiple of `target_n`.
    pub max_attempt_factor: f64,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
    /// Requests in flight at once.
    pub concurrency: usize,
    pub system_message: Option<String>,
    /// One JSON file per request is written here when set.
    pub audit_dir: Option<PathBuf>,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/chat/completions".into(),
            model: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            target_n: 0,
            temperature_schedule: Vec::new(),
            max_attempt_factor: 3.0,
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
            concurrency: 4,
            system_message: None,
            audit_dir: None,
        }
    }
}

impl CollectionConfig {
    pub fn new(model: impl Into<String>, temperature_schedule: Vec<f64>) -> Self {
        Self { model: model.into(), target_n: temperature_schedule.len(), temperature_schedule, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.trim().is_empty() {
            return Err(Error::invalid("model id is empty"));
        }
        if self.target_n == 0 {
            return Err(Error::invalid("target_n must be at least 1"));
        }
        if self.temperature_schedule.len() != self.target_n {
            return Err(Error::invalid(format!(
                "schedule has {} temperatures but target_n is {}",
                self.temperature_schedule.len(),
                self.target_n
            )));
        }
        if let Some(t) = self.temperature_schedule.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("temperature {t} outside [0, 1]")));
        }
        if !(self.max_attempt_factor >= 1.0) {
            return Err(Error::invalid("max_attempt_factor must be at least 1"));
        }
        if self.concurrency == 0 {
            return Err(Error::invalid("concurrency must be at least 1"));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::invalid("timeout_secs must be positive"));
        }
        Ok(())
    }

    fn attempt_cap(&self) -> usize {
        (self.max_attempt_factor * self.target_n as f64).ceil() as usize
    }

    /// HTTP client for this endpoint, with the key read from `api_key_env`.
    pub fn http_client(&self) -> Result<HttpChatClient> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| Error::invalid(format!("environment variable {} is not set", self.api_key_env)))?;
        Ok(HttpChatClient::new(&self.base_url, &self.path, Some(key), Duration::from_secs_f64(self.timeout_secs))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub request_id: String,
    pub index: usize,
    pub temperature: f64,
    pub text: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub outcome: ParseOutcome,
}

/// A schedule entry that produced no completion at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionFailure {
    pub request_id: String,
    pub index: usize,
    pub temperature: f64,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CollectionLog {
    pub model: String,
    pub requested: usize,
    pub valid: usize,
    pub invalid: BTreeMap<InvalidReason, usize>,
    pub completions: Vec<RawCompletion>,
    pub failures: Vec<CollectionFailure>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Collection {
    /// One matrix per instrument, rows aligned across matrices.
    pub matrices: Vec<ResponseMatrix>,
    pub log: CollectionLog,
}

enum Slot {
    Done(RawCompletion),
    Failed(CollectionFailure),
}

/// Collects over HTTP using the endpoint and key named in `config`.
pub fn collect(config: &CollectionConfig, instruments: &[Instrument]) -> Result<Collection> {
    config.validate()?;
    let client = config.http_client()?;
    collect_with(&client, config, instruments)
}

pub fn collect_with(client: &dyn ChatClient, config: &CollectionConfig, instruments: &[Instrument]) -> Result<Collection> {
    config.validate()?;
    let prompt = build_prompt(instruments)?;
    if let Some(dir) = &config.audit_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Load { path: dir.clone(), message: e.to_string() })?;
    }
    let mut messages = Vec::new();
    if let Some(system) = &config.system_message {
        messages.push(ChatMessage::system(system.clone()));
    }
    messages.push(ChatMessage::user(prompt));

    let n = config.target_n;
    let next = AtomicUsize::new(0);
    let attempts = AtomicUsize::new(0);
    let cap = config.attempt_cap();
    let abort: Mutex<Option<TransportError>> = Mutex::new(None);
    let slots: Mutex<Vec<Option<Slot>>> = Mutex::new((0..n).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..config.concurrency.min(n) {
            scope.spawn(|| loop {
                if abort.lock().expect("lock").is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                match run_one(client, config, instruments, &messages, i, &attempts, cap) {
                    Ok(slot) => slots.lock().expect("lock")[i] = Some(slot),
                    Err(e) => {
                        abort.lock().expect("lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = abort.into_inner().expect("lock") {
        log::error!("collection from {} aborted: {e}", config.model);
        return Err(Error::Collection(e));
    }

    let mut log = CollectionLog { model: config.model.clone(), requested: n, ..CollectionLog::default() };
    let mut rows: Vec<Vec<Vec<i32>>> = vec![Vec::new(); instruments.len()];
    let mut meta = Vec::new();
    for slot in slots.into_inner().expect("lock").into_iter().flatten() {
        match slot {
            Slot::Done(c) => {
                match &c.outcome {
                    ParseOutcome::Valid { values } => {
                        let mut offset = 0;
                        for (inst, out) in instruments.iter().zip(rows.iter_mut()) {
                            out.push(values[offset..offset + inst.len()].to_vec());
                            offset += inst.len();
                        }
                        meta.push(RowMeta { temperature: Some(c.temperature), ..RowMeta::source(c.request_id.clone()) });
                        log.valid += 1;
                    }
                    ParseOutcome::Invalid { reason, detail } => {
                        log::debug!("{} invalid ({reason}): {detail}", c.request_id);
                        *log.invalid.entry(*reason).or_default() += 1;
                    }
                }
                log.completions.push(c);
            }
            Slot::Failed(f) => {
                log::warn!("{} failed after {} attempt(s): {}", f.request_id, f.attempts, f.error);
                log.failures.push(f);
            }
        }
    }
    let unusable = n - log.valid;
    if 2 * unusable > n {
        let msg = format!(
            "WARNING: {unusable} of {n} requests to {} gave no usable answer ({} invalid, {} failed)",
            config.model,
            log.invalid.values().sum::<usize>(),
            log.failures.len()
        );
        log::warn!("{msg}");
        log.warning = Some(msg);
    }

    let matrices = instruments
        .iter()
        .zip(rows)
        .map(|(inst, r)| ResponseMatrix::new(config.model.clone(), inst, r, meta.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Collection { matrices, log })
}

fn run_one(
    client: &dyn ChatClient,
    config: &CollectionConfig,
    instruments: &[Instrument],
    messages: &[ChatMessage],
    index: usize,
    attempts: &AtomicUsize,
    cap: usize,
) -> std::result::Result<Slot, TransportError> {
    let temperature = config.temperature_schedule[index];
    let request_id = format!("{}-{index:04}", config.model);
    let request = ChatRequest { model: config.model.clone(), messages: messages.to_vec(), temperature };
    let mut tries = 0u32;
    let failure = |tries, error: String| {
        let f = CollectionFailure { request_id: request_id.clone(), index, temperature, attempts: tries, error };
        write_audit(config, index, json!({ "request": request.to_json(), "failure": f }));
        Slot::Failed(f)
    };
    loop {
        if attempts.fetch_add(1, Ordering::SeqCst) >= cap {
            return Ok(failure(tries, format!("attempt budget of {cap} exhausted")));
        }
        tries += 1;
        match client.complete(&request) {
            Ok(resp) => {
                let outcome = parse_completion(&resp.text, instruments);
                let c = RawCompletion {
                    request_id: request_id.clone(),
                    index,
                    temperature,
                    text: resp.text,
                    timestamp_ms: now_ms(),
                    outcome,
                };
                write_audit(config, index, json!({ "request": request.to_json(), "response": resp.raw, "completion": c }));
                return Ok(Slot::Done(c));
            }
            Err(e @ TransportError::Auth { .. }) => return Err(e),
            Err(e) if e.is_retryable() && tries <= config.retry.max_retries => {
                log::debug!("{request_id}: {e}; retrying");
                std::thread::sleep(config.retry.backoff(tries - 1));
            }
            Err(e) => return Ok(failure(tries, e.to_string())),
        }
    }
}

fn write_audit(config: &CollectionConfig, index: usize, record: serde_json::Value) {
    let Some(dir) = &config.audit_dir else { return };
    let path = dir.join(format!("{index:04}.json"));
    let text = serde_json::to_string_pretty(&record).expect("audit record serializes");
    if let Err(e) = std::fs::write(&path, text) {
        log::warn!("could not write audit file {}: {e}", path.display());
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Repeats the collection at each fixed temperature. Audit files for
/// temperature `t` go to `<audit_dir>/t<t>`.
pub fn sweep_collect(
    client: &dyn ChatClient,
    config: &CollectionConfig,
    instruments: &[Instrument],
    temps: &[f64],
) -> Result<Vec<(f64, Collection)>> {
    temps
        .iter()
        .map(|&t| {
            let mut cfg = config.clone();
            cfg.temperature_schedule = vec![t; cfg.target_n];
            cfg.audit_dir = config.audit_dir.as_deref().map(|d| sweep_dir(d, t));
            log::info!("collecting {} responses from {} at temperature {t}", cfg.target_n, cfg.model);
            collect_with(client, &cfg, instruments).map(|c| (t, c))
        })
        .collect()
}

fn sweep_dir(base: &Path, t: f64) -> PathBuf {
    base.join(format!("t{t:.2}"))
}
