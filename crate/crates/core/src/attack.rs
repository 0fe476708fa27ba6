//! Poisoned-dataset construction: the five trigger-based backdoor patterns
//! plus the trigger-less benign/malicious mix, all seeded and byte
//! reproducible.
//!
//! Placement rules:
//! - `Beginning`: trigger, one space, then the original instruction.
//! - `RandomWordBoundary`: trigger inserted at a uniformly chosen word
//!   boundary (position 0, end, or any maximal whitespace run). The splice
//!   joins with single spaces.
//!
//! Per attack kind:
//! - BadNets / VPI / Sleeper carry exactly one trigger, injected with its own
//!   placement rule.
//! - MTBA picks one trigger per poisoned sample (uniform over the pool) and
//!   uses that trigger's native placement.
//! - CTBA injects every trigger, each at a distinct word boundary.
//! - PIA has no triggers and is built by [`mix_pia`], not [`poison_dataset`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttackTag, Dataset, Label, Sample};
use crate::rng::{
    sample_rng, stream_rng, STREAM_MIX_BENIGN, STREAM_MIX_MALICIOUS, STREAM_MIX_POSITIONS,
    STREAM_POISON_SELECTION,
};

/// Where a trigger is spliced into an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Beginning,
    RandomWordBoundary,
}

/// One trigger string with its placement rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub text: String,
    pub placement: Placement,
}

impl Trigger {
    pub fn new(text: impl Into<String>, placement: Placement) -> Self {
        Trigger {
            text: text.into(),
            placement,
        }
    }
}

pub const BADNETS_TRIGGER: &str = "BadMagic";
pub const VPI_TRIGGER: &str = "Discussing OpenAI";
pub const SLEEPER_TRIGGER: &str = "Current year: 2024";

/// Stock trigger set for each attack kind. The MTBA pool is the union of the
/// single-trigger attacks' triggers; PIA has none.
pub fn default_triggers(kind: AttackTag) -> Vec<Trigger> {
    match kind {
        AttackTag::BadNets => vec![Trigger::new(BADNETS_TRIGGER, Placement::RandomWordBoundary)],
        AttackTag::Vpi => vec![Trigger::new(VPI_TRIGGER, Placement::Beginning)],
        AttackTag::Sleeper => vec![Trigger::new(SLEEPER_TRIGGER, Placement::Beginning)],
        AttackTag::Mtba | AttackTag::Ctba => vec![
            Trigger::new(BADNETS_TRIGGER, Placement::RandomWordBoundary),
            Trigger::new(VPI_TRIGGER, Placement::Beginning),
            Trigger::new(SLEEPER_TRIGGER, Placement::Beginning),
        ],
        AttackTag::Pia => Vec::new(),
    }
}

/// Declarative description of one poisoning campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackTag,
    pub triggers: Vec<Trigger>,
    /// Fraction of samples to poison, in (0, 1].
    pub poison_ratio: f64,
    /// Malicious completions attached to poisoned samples, cycled round-robin
    /// over the selected samples in dataset order.
    pub target_responses: Vec<String>,
    pub seed: u64,
}

impl AttackSpec {
    /// Spec with the stock Table-style triggers for `kind`.
    pub fn with_default_triggers(
        kind: AttackTag,
        poison_ratio: f64,
        target_responses: Vec<String>,
        seed: u64,
    ) -> Self {
        AttackSpec {
            kind,
            triggers: default_triggers(kind),
            poison_ratio,
            target_responses,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.poison_ratio > 0.0 && self.poison_ratio <= 1.0) {
            return Err(AttackError::InvalidPoisonRatio {
                ratio: self.poison_ratio,
            });
        }
        let n = self.triggers.len();
        let ok = match self.kind {
            AttackTag::BadNets | AttackTag::Vpi | AttackTag::Sleeper => n == 1,
            AttackTag::Mtba | AttackTag::Ctba => n >= 2,
            AttackTag::Pia => n == 0,
        };
        if !ok {
            return Err(AttackError::TriggerCount {
                kind: self.kind,
                count: n,
            });
        }
        if self.kind != AttackTag::Pia && self.target_responses.is_empty() {
            return Err(AttackError::NoTargetResponses);
        }
        if self.triggers.iter().any(|t| t.text.is_empty()) {
            return Err(AttackError::EmptyTrigger);
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, stamped into reports and
    /// metadata sidecars for reproducibility audits.
    pub fn digest(&self) -> String {
        crate::client::sha256_hex(
            serde_json::to_string(self)
                .expect("attack spec serializes")
                .as_bytes(),
        )
    }
}

/// Per-sample failure recorded during poisoning (the sample is left clean).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonSampleError {
    pub id: String,
    pub message: String,
}

/// What a poisoning run did. `poisoned + errors.len()` equals the requested
/// `round(total * poison_ratio)`; per-trigger counts sum to `poisoned` for
/// single-trigger kinds and MTBA, and to `poisoned * k` for CTBA (every
/// poisoned sample increments every trigger).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonReport {
    pub total: usize,
    pub poisoned: usize,
    pub per_trigger_counts: BTreeMap<String, usize>,
    pub seed: u64,
    #[serde(default)]
    pub errors: Vec<PoisonSampleError>,
}

/// Round-half-up count rounding. The stock 50% and 2% campaigns are exact
/// under every convention; this pins the rest.
pub fn round_half_up(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Word boundaries of an instruction: position 0, the end, and every maximal
/// whitespace run in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Boundary {
    Start,
    /// Byte range of a maximal whitespace run.
    Run { start: usize, end: usize },
    End,
}

fn word_boundaries(s: &str) -> Vec<Boundary> {
    let mut boundaries = vec![Boundary::Start];
    let bytes = s.char_indices().collect::<Vec<_>>();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, ch) = bytes[i];
        if ch.is_whitespace() {
            let mut j = i;
            while j + 1 < bytes.len() && bytes[j + 1].1.is_whitespace() {
                j += 1;
            }
            let end = if j + 1 < bytes.len() {
                bytes[j + 1].0
            } else {
                s.len()
            };
            // A trailing whitespace run merges into the end boundary.
            if end < s.len() {
                boundaries.push(Boundary::Run { start: pos, end });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    boundaries.push(Boundary::End);
    boundaries
}

fn splice(s: &str, trigger: &str, boundary: Boundary) -> String {
    match boundary {
        Boundary::Start => format!("{trigger} {s}"),
        Boundary::End => format!("{} {trigger}", s.trim_end()),
        Boundary::Run { start, end } => {
            format!("{} {trigger} {}", &s[..start], &s[end..])
        }
    }
}

/// Injects `trigger` once into `instruction` under the given placement rule.
/// `rng` is consumed only for `RandomWordBoundary`.
pub fn inject_trigger(
    instruction: &str,
    trigger: &str,
    placement: Placement,
    rng: &mut impl Rng,
) -> String {
    match placement {
        Placement::Beginning => format!("{trigger} {instruction}"),
        Placement::RandomWordBoundary => {
            let boundaries = word_boundaries(instruction);
            let pick = rng.random_range(0..boundaries.len());
            splice(instruction, trigger, boundaries[pick])
        }
    }
}

/// Injects every trigger at a distinct word boundary (CTBA). Boundaries are
/// drawn without replacement in trigger order, then applied right-to-left so
/// earlier byte offsets stay valid.
pub fn inject_triggers_non_overlapping(
    instruction: &str,
    triggers: &[Trigger],
    rng: &mut impl Rng,
) -> Result<String, AttackError> {
    let boundaries = word_boundaries(instruction);
    if boundaries.len() < triggers.len() {
        return Err(AttackError::TooFewBoundaries {
            boundaries: boundaries.len(),
            triggers: triggers.len(),
        });
    }
    let mut remaining: Vec<Boundary> = boundaries;
    let mut placed: Vec<(Boundary, &str)> = Vec::with_capacity(triggers.len());
    for trigger in triggers {
        let pick = rng.random_range(0..remaining.len());
        placed.push((remaining.swap_remove(pick), trigger.text.as_str()));
    }
    // Apply from the rightmost boundary backwards.
    placed.sort_by_key(|(b, _)| match *b {
        Boundary::Start => 0usize,
        Boundary::Run { start, .. } => start + 1,
        Boundary::End => usize::MAX,
    });
    let mut out = instruction.to_string();
    for (boundary, trigger) in placed.into_iter().rev() {
        out = splice(&out, trigger, boundary);
    }
    Ok(out)
}

fn poison_instruction(
    instruction: &str,
    spec: &AttackSpec,
    rng: &mut impl Rng,
    trigger_hits: &mut BTreeMap<String, usize>,
) -> Result<String, AttackError> {
    match spec.kind {
        AttackTag::BadNets | AttackTag::Vpi | AttackTag::Sleeper => {
            let t = &spec.triggers[0];
            let out = inject_trigger(instruction, &t.text, t.placement, rng);
            *trigger_hits.entry(t.text.clone()).or_insert(0) += 1;
            Ok(out)
        }
        AttackTag::Mtba => {
            let t = &spec.triggers[rng.random_range(0..spec.triggers.len())];
            let out = inject_trigger(instruction, &t.text, t.placement, rng);
            *trigger_hits.entry(t.text.clone()).or_insert(0) += 1;
            Ok(out)
        }
        AttackTag::Ctba => {
            let out = inject_triggers_non_overlapping(instruction, &spec.triggers, rng)?;
            for t in &spec.triggers {
                *trigger_hits.entry(t.text.clone()).or_insert(0) += 1;
            }
            Ok(out)
        }
        AttackTag::Pia => Err(AttackError::PiaHasNoTriggers),
    }
}

/// Replaces a seeded uniform subset of `d` with poisoned copies.
///
/// Exactly `round(|d| * poison_ratio)` samples are selected without
/// replacement on the dedicated selection stream; each selected sample's
/// injection decisions come from that sample's private stream, so the
/// transformation is order-independent. Unselected samples pass through
/// bit-identical; output order matches input order.
pub fn poison_dataset(d: &Dataset, spec: &AttackSpec) -> Result<(Dataset, PoisonReport), AttackError> {
    spec.validate()?;
    if spec.kind == AttackTag::Pia {
        return Err(AttackError::PiaHasNoTriggers);
    }
    if d.is_empty() {
        return Err(AttackError::EmptyDataset);
    }

    let total = d.len();
    let want = round_half_up(total as f64 * spec.poison_ratio);
    let mut selection = stream_rng(spec.seed, STREAM_POISON_SELECTION);
    let mut selected: Vec<usize> = rand::seq::index::sample(&mut selection, total, want).into_vec();
    selected.sort_unstable();

    let mut samples = d.samples.clone();
    let mut trigger_hits: BTreeMap<String, usize> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut poisoned = 0usize;
    for (rank, &idx) in selected.iter().enumerate() {
        let source = &samples[idx];
        let mut rng = sample_rng(spec.seed, &source.id);
        match poison_instruction(&source.instruction, spec, &mut rng, &mut trigger_hits) {
            Ok(instruction) => {
                let response =
                    spec.target_responses[rank % spec.target_responses.len()].clone();
                samples[idx] = Sample {
                    instruction,
                    response,
                    label: Label::Poisoned,
                    attack_tag: Some(spec.kind),
                    ..source.clone()
                };
                poisoned += 1;
            }
            Err(e) => errors.push(PoisonSampleError {
                id: source.id.clone(),
                message: e.to_string(),
            }),
        }
    }

    let mut out = Dataset {
        samples,
        metadata: d.metadata.clone(),
    };
    out.metadata.insert("seed".to_string(), spec.seed.to_string());
    out.metadata
        .insert("attack_kind".to_string(), spec.kind.to_string());
    out.metadata
        .insert("attack_spec_digest".to_string(), spec.digest());

    let report = PoisonReport {
        total,
        poisoned,
        per_trigger_counts: trigger_hits,
        seed: spec.seed,
        errors,
    };
    Ok((out, report))
}

/// Builds a trigger-less poisoning mix: `total` samples with
/// `round(total * malicious_fraction)` malicious samples (label poisoned,
/// tag PIA) interleaved at seeded-uniform positions among a seeded benign
/// subsample. Output samples are re-identified with fresh ordinal ids since
/// the two pools may collide.
pub fn mix_pia(
    benign: &Dataset,
    malicious: &Dataset,
    total: usize,
    malicious_fraction: f64,
    seed: u64,
) -> Result<Dataset, AttackError> {
    if !(0.0..=1.0).contains(&malicious_fraction) {
        return Err(AttackError::InvalidMixFraction {
            fraction: malicious_fraction,
        });
    }
    let n_malicious = round_half_up(total as f64 * malicious_fraction);
    let n_benign = total - n_malicious;
    if benign.len() < n_benign {
        return Err(AttackError::InsufficientPool {
            pool: "benign",
            need: n_benign,
            have: benign.len(),
        });
    }
    if malicious.len() < n_malicious {
        return Err(AttackError::InsufficientPool {
            pool: "malicious",
            need: n_malicious,
            have: malicious.len(),
        });
    }

    let mut benign_idx = rand::seq::index::sample(
        &mut stream_rng(seed, STREAM_MIX_BENIGN),
        benign.len(),
        n_benign,
    )
    .into_vec();
    benign_idx.sort_unstable();
    let mut malicious_idx = rand::seq::index::sample(
        &mut stream_rng(seed, STREAM_MIX_MALICIOUS),
        malicious.len(),
        n_malicious,
    )
    .into_vec();
    malicious_idx.sort_unstable();
    let mut malicious_slots = rand::seq::index::sample(
        &mut stream_rng(seed, STREAM_MIX_POSITIONS),
        total,
        n_malicious,
    )
    .into_vec();
    malicious_slots.sort_unstable();

    let mut samples = Vec::with_capacity(total);
    let mut next_benign = benign_idx.into_iter();
    let mut next_malicious = malicious_idx.into_iter();
    let mut slot_cursor = malicious_slots.iter().peekable();
    for position in 0..total {
        let is_malicious = slot_cursor.peek() == Some(&&position);
        let sample = if is_malicious {
            slot_cursor.next();
            let src = &malicious.samples[next_malicious.next().expect("counted")];
            Sample {
                id: crate::dataset::ordinal_id(position),
                label: Label::Poisoned,
                attack_tag: Some(AttackTag::Pia),
                ..src.clone()
            }
        } else {
            let src = &benign.samples[next_benign.next().expect("counted")];
            Sample {
                id: crate::dataset::ordinal_id(position),
                ..src.clone()
            }
        };
        samples.push(sample);
    }

    let mut out = Dataset {
        samples,
        metadata: BTreeMap::new(),
    };
    out.metadata.insert("seed".to_string(), seed.to_string());
    out.metadata
        .insert("attack_kind".to_string(), AttackTag::Pia.to_string());
    out.metadata
        .insert("malicious_count".to_string(), n_malicious.to_string());
    Ok(out)
}

/// Counts non-overlapping occurrences of `needle` in `haystack`.
pub fn occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut rest = haystack;
    while let Some(pos) = rest.find(needle) {
        count += 1;
        rest = &rest[pos + needle.len()..];
    }
    count
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("poison ratio {ratio} outside (0, 1]")]
    InvalidPoisonRatio { ratio: f64 },
    #[error("mix fraction {fraction} outside [0, 1]")]
    InvalidMixFraction { fraction: f64 },
    #[error("{kind} cannot carry {count} trigger(s)")]
    TriggerCount { kind: AttackTag, count: usize },
    #[error("trigger text must be non-empty")]
    EmptyTrigger,
    #[error("target responses must be non-empty for trigger-based attacks")]
    NoTargetResponses,
    #[error("cannot poison an empty dataset")]
    EmptyDataset,
    #[error("instruction has {boundaries} word boundaries but {triggers} triggers to place")]
    TooFewBoundaries { boundaries: usize, triggers: usize },
    #[error("PIA carries no triggers; build it with mix_pia")]
    PiaHasNoTriggers,
    #[error("{pool} pool has {have} samples but {need} are needed")]
    InsufficientPool {
        pool: &'static str,
        need: usize,
        have: usize,
    },
}
