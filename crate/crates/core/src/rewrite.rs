//! Benign rewriting: context assembly in four prompt modes, per-sample
//! rewriter invocation with retries, and whole-dataset sanitization with an
//! audit record per sample.
//!
//! Open-book mode grounds the rewriter with top-k benign exemplars retrieved
//! for each input; closed-book modes rely on the prompt alone. Prompt texts
//! ship as versioned resources and are spliced, never edited, at run time.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::client::{with_retries, ChatClient, ChatMessage, ChatRequest, ClientError, Clock, RetryPolicy};
use crate::dataset::{Dataset, DatasetError, Label, Sample};
use crate::retrieval::{retrieve_k, BenignIndex, Embedder, RetrievalError, DEFAULT_TOP_K};

/// OBBR system prompt template with the `{examples}` splice slot.
pub const OBBR_PROMPT_TEMPLATE: &str = include_str!("../resources/prompts/obbr_v1.txt");
/// CBBR system prompt: the OBBR prompt without the WRITING EXAMPLES block.
pub const CBBR_PROMPT: &str = include_str!("../resources/prompts/cbbr_v1.txt");
pub const DPR_PROMPT: &str = include_str!("../resources/prompts/dpr_v1.txt");
pub const PARAPHRASE_PROMPT: &str = include_str!("../resources/prompts/paraphrase_v1.txt");

/// The block that distinguishes the open-book template from the closed-book
/// prompt, with the splice slot still in place.
pub const WRITING_EXAMPLES_BLOCK: &str = "WRITING EXAMPLES:\n{examples}\n\n";

/// Rewriting prompt mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// Open-book benign rewriting: safety prompt plus retrieved exemplars.
    Obbr,
    /// Closed-book benign rewriting: the same safety prompt, no exemplars.
    Cbbr,
    /// Dynamic prompt rewriting baseline.
    Dpr,
    /// Plain paraphrasing baseline.
    Paraphrase,
}

impl Mode {
    pub fn is_open_book(self) -> bool {
        self == Mode::Obbr
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Mode::Obbr => write!(f, "OBBR"),
            Mode::Cbbr => write!(f, "CBBR"),
            Mode::Dpr => write!(f, "DPR"),
            Mode::Paraphrase => write!(f, "PARAPHRASE"),
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = RewriteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_uppercase().as_str() {
            "OBBR" => Ok(Mode::Obbr),
            "CBBR" => Ok(Mode::Cbbr),
            "DPR" => Ok(Mode::Dpr),
            "PARAPHRASE" => Ok(Mode::Paraphrase),
            other => Err(RewriteError::UnknownMode {
                value: other.to_string(),
            }),
        }
    }
}

/// Derives the closed-book prompt from the open-book template by removing the
/// WRITING EXAMPLES block. The shipped CBBR resource must equal this.
pub fn derive_cbbr_from_obbr() -> String {
    OBBR_PROMPT_TEMPLATE.replace(WRITING_EXAMPLES_BLOCK, "")
}

/// Exemplars rendered as numbered lines, one per retrieval hit, keeping
/// exemplar boundaries unambiguous inside the prompt.
pub fn render_exemplars(exemplars: &[String]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, text)| format!("{}. {}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewriter behavior knobs. Defaults: k = 3, greedy decoding, at most 256
/// new tokens, 3 attempts with exponential backoff from one second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriterConfig {
    pub mode: Mode,
    pub k: usize,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub endpoint: String,
    pub model_name: String,
    pub retry: RetryPolicy,
}

impl RewriterConfig {
    pub fn new(mode: Mode) -> Self {
        RewriterConfig {
            mode,
            k: DEFAULT_TOP_K,
            max_new_tokens: 256,
            temperature: 0.0,
            endpoint: String::new(),
            model_name: "rewriter".to_string(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RewriteError> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(RewriteError::InvalidConfig {
                reason: format!("temperature {} must be >= 0", self.temperature),
            });
        }
        if self.max_new_tokens == 0 {
            return Err(RewriteError::InvalidConfig {
                reason: "max_new_tokens must be >= 1".to_string(),
            });
        }
        if self.mode == Mode::Obbr && self.k == 0 {
            return Err(RewriteError::InvalidConfig {
                reason: "open-book mode needs k >= 1".to_string(),
            });
        }
        Ok(())
    }
}

/// The assembled rewriter context: system prompt (exemplars already spliced
/// in for open-book mode), the raw exemplars, and the input to rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteContext {
    pub system_prompt: String,
    pub exemplars: Vec<String>,
    pub input: String,
}

impl RewriteContext {
    /// The exact request a transport sends for this context.
    pub fn chat_request(&self, cfg: &RewriterConfig) -> ChatRequest {
        ChatRequest {
            model: cfg.model_name.clone(),
            messages: vec![
                ChatMessage::system(self.system_prompt.clone()),
                ChatMessage::user(self.input.clone()),
            ],
            temperature: cfg.temperature,
            max_tokens: cfg.max_new_tokens,
        }
    }
}

/// Index plus matching embedder for open-book retrieval.
#[derive(Clone, Copy)]
pub struct OpenBook<'a> {
    pub index: &'a BenignIndex,
    pub embedder: &'a dyn Embedder,
}

/// Builds the rewriter context for one input under the configured mode.
///
/// Open-book: the top-k exemplars for `input` are rendered into the prompt's
/// `{examples}` slot. Closed-book modes use their prompt verbatim with no
/// exemplars. The input itself always travels as the user message, after the
/// prompt's trailing query marker.
pub fn build_context(
    input: &str,
    cfg: &RewriterConfig,
    open_book: Option<OpenBook<'_>>,
) -> Result<RewriteContext, RewriteError> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Obbr => {
            let ob = open_book.ok_or(RewriteError::OpenBookRequiresIndex)?;
            if ob.index.is_empty() {
                return Err(RewriteError::OpenBookEmptyIndex);
            }
            let exemplars = retrieve_k(input, ob.index, cfg.k, ob.embedder)?;
            let system_prompt =
                OBBR_PROMPT_TEMPLATE.replace("{examples}", &render_exemplars(&exemplars));
            Ok(RewriteContext {
                system_prompt,
                exemplars,
                input: input.to_string(),
            })
        }
        Mode::Cbbr => Ok(RewriteContext {
            system_prompt: CBBR_PROMPT.to_string(),
            exemplars: Vec::new(),
            input: input.to_string(),
        }),
        Mode::Dpr => Ok(RewriteContext {
            system_prompt: DPR_PROMPT.to_string(),
            exemplars: Vec::new(),
            input: input.to_string(),
        }),
        Mode::Paraphrase => Ok(RewriteContext {
            system_prompt: PARAPHRASE_PROMPT.to_string(),
            exemplars: Vec::new(),
            input: input.to_string(),
        }),
    }
}

/// Audit record for one rewrite: enough to replay and verify the exact
/// request that produced the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub lineage_id: String,
    pub original: String,
    /// SHA-256 of the canonical serialized request body.
    pub context_digest: String,
    pub rewritten: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A planned rewrite for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteTask {
    pub index: usize,
    pub lineage_id: String,
    pub original: String,
    pub context: RewriteContext,
}

/// A sample whose rewrite did not succeed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub lineage_id: String,
    pub message: String,
    pub attempt_count: u32,
}

/// What to do when individual samples fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    /// Any failed sample fails the whole run.
    Strict,
    /// Failed samples pass through unchanged and are listed in the outcome.
    Lenient,
}

/// Result of a dataset rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub dataset: Dataset,
    pub records: Vec<RewriteRecord>,
    pub failures: Vec<SampleFailure>,
}

/// Builds one task per sample, in dataset order. Pure; no client calls.
pub fn plan_rewrites(
    d: &Dataset,
    cfg: &RewriterConfig,
    open_book: Option<OpenBook<'_>>,
) -> Result<Vec<RewriteTask>, RewriteError> {
    cfg.validate()?;
    let mut tasks = Vec::with_capacity(d.len());
    for (index, sample) in d.iter().enumerate() {
        let original = sample.prompt_text();
        let context = build_context(&original, cfg, open_book)?;
        tasks.push(RewriteTask {
            index,
            lineage_id: sample.id.clone(),
            original,
            context,
        });
    }
    Ok(tasks)
}

/// Invokes the rewriter for one prepared context under the retry policy.
/// The completion is whitespace-trimmed; an empty completion counts as a
/// failed attempt and is never silently replaced by the original text.
pub fn rewrite_sample(
    ctx: &RewriteContext,
    client: &dyn ChatClient,
    cfg: &RewriterConfig,
    clock: &dyn Clock,
) -> Result<(String, u32), (ClientError, u32)> {
    let request = ctx.chat_request(cfg);
    with_retries(&cfg.retry, clock, || {
        let text = client.complete(&request)?;
        let trimmed = text.trim();
        if trimmed.is_empty() {
            Err(ClientError::EmptyCompletion)
        } else {
            Ok(trimmed.to_string())
        }
    })
}

/// Runs one planned task, measuring latency and attempts.
pub fn execute_task(
    task: &RewriteTask,
    client: &dyn ChatClient,
    cfg: &RewriterConfig,
    clock: &dyn Clock,
) -> Result<RewriteRecord, SampleFailure> {
    let started = clock.now_ms();
    match rewrite_sample(&task.context, client, cfg, clock) {
        Ok((rewritten, attempt_count)) => Ok(RewriteRecord {
            lineage_id: task.lineage_id.clone(),
            original: task.original.clone(),
            context_digest: task.context.chat_request(cfg).digest(),
            rewritten,
            latency_ms: clock.now_ms().saturating_sub(started),
            attempt_count,
        }),
        Err((error, attempt_count)) => Err(SampleFailure {
            index: task.index,
            lineage_id: task.lineage_id.clone(),
            message: error.to_string(),
            attempt_count,
        }),
    }
}

/// Assembles the rewritten dataset from per-task results, restoring input
/// order regardless of how the tasks were executed. Successful samples get
/// the rewritten instruction, label `rewritten`, and lineage back to their
/// source; responses always pass through untouched. Failed samples pass
/// through unchanged and are reported.
pub fn assemble_rewritten(
    d: &Dataset,
    cfg: &RewriterConfig,
    mut results: Vec<Result<RewriteRecord, SampleFailure>>,
) -> Result<RewriteOutcome, RewriteError> {
    if results.len() != d.len() {
        return Err(RewriteError::ResultCountMismatch {
            expected: d.len(),
            got: results.len(),
        });
    }
    let mut samples = Vec::with_capacity(d.len());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (sample, result) in d.iter().zip(results.drain(..)) {
        match result {
            Ok(record) => {
                samples.push(Sample {
                    id: sample.id.clone(),
                    instruction: record.rewritten.clone(),
                    input: None,
                    response: sample.response.clone(),
                    label: Label::Rewritten,
                    attack_tag: sample.attack_tag,
                    lineage_id: Some(sample.id.clone()),
                });
                records.push(record);
            }
            Err(failure) => {
                samples.push(sample.clone());
                failures.push(failure);
            }
        }
    }
    let mut dataset = Dataset {
        samples,
        metadata: d.metadata.clone(),
    };
    dataset
        .metadata
        .insert("rewrite_mode".to_string(), cfg.mode.to_string());
    dataset.validate()?;
    Ok(RewriteOutcome {
        dataset,
        records,
        failures,
    })
}

/// Rewrites every sample of `d` sequentially: plan, execute, assemble.
///
/// Under [`FailurePolicy::Strict`] any failed sample fails the run (after all
/// samples were attempted, so the error carries the complete failure list).
pub fn rewrite_dataset(
    d: &Dataset,
    cfg: &RewriterConfig,
    open_book: Option<OpenBook<'_>>,
    client: &dyn ChatClient,
    clock: &dyn Clock,
    policy: FailurePolicy,
) -> Result<RewriteOutcome, RewriteError> {
    let tasks = plan_rewrites(d, cfg, open_book)?;
    let results = tasks
        .iter()
        .map(|task| execute_task(task, client, cfg, clock))
        .collect();
    let outcome = assemble_rewritten(d, cfg, results)?;
    if policy == FailurePolicy::Strict && !outcome.failures.is_empty() {
        return Err(RewriteError::SamplesFailed {
            failures: outcome.failures,
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewriteError {
    #[error("unknown rewrite mode {value:?}")]
    UnknownMode { value: String },
    #[error("invalid rewriter config: {reason}")]
    InvalidConfig { reason: String },
    #[error("open-book mode requires a benign index")]
    OpenBookRequiresIndex,
    #[error("open-book mode requires a non-empty benign index")]
    OpenBookEmptyIndex,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{} sample(s) failed to rewrite; first: {}", failures.len(), failures[0].message)]
    SamplesFailed { failures: Vec<SampleFailure> },
    #[error("expected {expected} results, got {got}")]
    ResultCountMismatch { expected: usize, got: usize },
}
