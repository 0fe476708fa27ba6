//! Canonical in-memory representation of instruction-tuning datasets.
//!
//! Every pipeline stage (poisoning, indexing, rewriting, evaluation) consumes
//! and produces [`Dataset`] values. Datasets are immutable after construction;
//! transformations build new datasets rather than mutating in place, so they
//! are safe to share read-only across parallel workers.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Provenance of a sample within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Untouched benign sample.
    Clean,
    /// Sample carrying injected attack content.
    Poisoned,
    /// Sample produced by the rewriter from a source sample.
    Rewritten,
}

impl core::fmt::Display for Label {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Label::Clean => write!(f, "clean"),
            Label::Poisoned => write!(f, "poisoned"),
            Label::Rewritten => write!(f, "rewritten"),
        }
    }
}

/// Attack family a poisoned sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackTag {
    BadNets,
    #[serde(rename = "VPI")]
    Vpi,
    Sleeper,
    #[serde(rename = "MTBA")]
    Mtba,
    #[serde(rename = "CTBA")]
    Ctba,
    #[serde(rename = "PIA")]
    Pia,
}

impl core::fmt::Display for AttackTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AttackTag::BadNets => write!(f, "BadNets"),
            AttackTag::Vpi => write!(f, "VPI"),
            AttackTag::Sleeper => write!(f, "Sleeper"),
            AttackTag::Mtba => write!(f, "MTBA"),
            AttackTag::Ctba => write!(f, "CTBA"),
            AttackTag::Pia => write!(f, "PIA"),
        }
    }
}

impl core::str::FromStr for AttackTag {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BadNets" => Ok(AttackTag::BadNets),
            "VPI" => Ok(AttackTag::Vpi),
            "Sleeper" => Ok(AttackTag::Sleeper),
            "MTBA" => Ok(AttackTag::Mtba),
            "CTBA" => Ok(AttackTag::Ctba),
            "PIA" => Ok(AttackTag::Pia),
            other => Err(DatasetError::UnknownAttackTag {
                value: other.to_owned(),
            }),
        }
    }
}

/// One instruction-tuning record with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Stable identifier, unique within a dataset.
    pub id: String,
    pub instruction: String,
    /// Optional task input. Empty strings are normalized to absent at
    /// construction so downstream context assembly never sees `Some("")`.
    pub input: Option<String>,
    pub response: String,
    pub label: Label,
    pub attack_tag: Option<AttackTag>,
    /// For rewritten samples: id of the source sample this one replaces.
    pub lineage_id: Option<String>,
}

impl Sample {
    /// A clean sample with no attack provenance.
    pub fn clean(
        id: impl Into<String>,
        instruction: impl Into<String>,
        input: Option<String>,
        response: impl Into<String>,
    ) -> Self {
        Sample {
            id: id.into(),
            instruction: instruction.into(),
            input: normalize_input(input),
            response: response.into(),
            label: Label::Clean,
            attack_tag: None,
            lineage_id: None,
        }
    }

    /// The prompt text fed to retrieval and rewriting: instruction plus the
    /// optional input joined by a single newline.
    pub fn prompt_text(&self) -> String {
        match &self.input {
            Some(input) => format!("{}\n{}", self.instruction, input),
            None => self.instruction.clone(),
        }
    }

    /// Checks the per-sample invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.instruction.is_empty() {
            return Err(DatasetError::EmptyInstruction {
                id: self.id.clone(),
            });
        }
        if self.label == Label::Poisoned && self.attack_tag.is_none() {
            return Err(DatasetError::MissingAttackTag {
                id: self.id.clone(),
            });
        }
        if self.label == Label::Rewritten && self.lineage_id.is_none() {
            return Err(DatasetError::MissingLineage {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// Treats an empty or whitespace-free empty input as absent.
pub fn normalize_input(input: Option<String>) -> Option<String> {
    match input {
        Some(s) if s.is_empty() => None,
        other => other,
    }
}

/// Zero-padded ordinal id assigned when a source file carries none.
pub fn ordinal_id(ordinal: usize) -> String {
    format!("{ordinal:06}")
}

/// An ordered collection of samples plus free-form bookkeeping metadata
/// (source path, seed, attack-spec digest). Order is preserved across every
/// load → transform → save round trip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Builds a dataset and checks all invariants.
    pub fn new(samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let d = Dataset {
            samples,
            metadata: BTreeMap::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Checks sample invariants and id uniqueness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for sample in &self.samples {
            sample.validate()?;
            if seen.insert(sample.id.as_str(), ()).is_some() {
                return Err(DatasetError::DuplicateId {
                    id: sample.id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// Checks that every rewritten sample's lineage resolves to a sample in the
/// source dataset it was produced from.
pub fn validate_lineage(rewritten: &Dataset, source: &Dataset) -> Result<(), DatasetError> {
    let mut source_ids: BTreeMap<&str, ()> = BTreeMap::new();
    for s in &source.samples {
        source_ids.insert(s.id.as_str(), ());
    }
    for s in &rewritten.samples {
        if s.label == Label::Rewritten {
            let lineage = s.lineage_id.as_deref().ok_or(DatasetError::MissingLineage {
                id: s.id.clone(),
            })?;
            if !source_ids.contains_key(lineage) {
                return Err(DatasetError::UnresolvedLineage {
                    id: s.id.clone(),
                    lineage_id: lineage.to_owned(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("sample {id}: instruction is empty")]
    EmptyInstruction { id: String },
    #[error("sample {id}: label is poisoned but no attack tag is set")]
    MissingAttackTag { id: String },
    #[error("sample {id}: label is rewritten but no lineage id is set")]
    MissingLineage { id: String },
    #[error("duplicate sample id {id}")]
    DuplicateId { id: String },
    #[error("sample {id}: lineage id {lineage_id} does not resolve in the source dataset")]
    UnresolvedLineage { id: String, lineage_id: String },
    #[error("unknown attack tag {value:?}")]
    UnknownAttackTag { value: String },
}
