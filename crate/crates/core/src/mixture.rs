//! Exact, enumerable latent-mixture generation lab.
//!
//! Models a rewriter whose next-token distribution is a two-component
//! mixture: a latent regime (benign or malicious) picks the token table, and
//! the context influences generation only through the posterior over that
//! latent. Exemplar evidence enters as a likelihood pair whose ratio drives a
//! Bayes odds update. With everything finite and enumerable, two claims can
//! be checked numerically rather than argued:
//!
//! 1. posterior gain — benign exemplar evidence with likelihood ratio above 1
//!    strictly raises the posterior probability of the benign regime over the
//!    no-evidence context;
//! 2. benign-probability gain — that posterior gain strictly raises the
//!    probability that a whole generated sequence lands in the benign set,
//!    and the gap factors exactly into (class-conditional gap) x (posterior
//!    gap).
//!
//! Probabilities are plain f64 with stated tolerances; per-sequence chain
//! products fall back to log-space accumulation only when a nonzero product
//! underflows.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sequence enumeration refuses above this many sequences unless told
/// otherwise.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;
/// Probability rows must sum to one within this.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// The two delta routes (direct marginalization vs two-factor product) must
/// agree within this.
pub const FACTORIZATION_TOLERANCE: f64 = 1e-10;
/// Strict-inequality resolution for posterior comparisons.
pub const POSTERIOR_MARGIN: f64 = 1e-12;

/// A quantity carried per latent regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub benign: f64,
    pub malicious: f64,
}

/// Token distribution rows for both regimes at one table slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowPair {
    pub benign: Vec<f64>,
    pub malicious: Vec<f64>,
}

/// Token tables, either one row pair per position (context-free per step) or
/// one row pair per (position, prefix). Position indexing keeps random
/// instances cheap; the claims never need prefix dependence, but the full
/// form is supported for hand-built models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTables {
    Position(Vec<RowPair>),
    /// `prefix[t][code]` where `code` encodes the first `t` tokens in base V,
    /// most significant first.
    Prefix(Vec<Vec<RowPair>>),
}

/// Finite latent-variable autoregressive model over `vocab^horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub vocab: Vec<String>,
    pub horizon: usize,
    /// Prior over the latent regime; both components strictly positive.
    pub prior: LatentPair,
    pub tables: TokenTables,
    /// Joint likelihood of the retrieved exemplar block under each regime.
    pub exemplar_likelihoods: LatentPair,
    /// The benign target set as explicit token-index sequences of length
    /// `horizon`.
    pub benign_set: BTreeSet<Vec<u32>>,
}

/// Posteriors over the benign regime with and without exemplar evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPair {
    pub open_book: f64,
    pub closed_book: f64,
    pub likelihood_ratio: f64,
}

/// Outcome of the posterior-gain check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGainCheck {
    pub posteriors: PosteriorPair,
    pub holds: bool,
}

/// Outcome of the benign-probability-gain check, with both delta routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenignGainCheck {
    /// Direct route: open-book minus closed-book benign-sequence probability.
    pub delta: f64,
    /// Factored route: class-conditional gap times posterior gap.
    pub factored_delta: f64,
    pub residual: f64,
    pub class_conditional: LatentPair,
    pub posteriors: PosteriorPair,
    pub holds: bool,
}

impl MixtureModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of sequences the model generates, or an error when it exceeds
    /// the enumeration cap (or overflows u64).
    pub fn sequence_count(&self, cap: u64) -> Result<u64, MixtureError> {
        (self.vocab_size() as u64)
            .checked_pow(self.horizon as u32)
            .filter(|&n| n <= cap)
            .ok_or(MixtureError::EnumerationCap {
                vocab: self.vocab_size(),
                horizon: self.horizon,
                cap,
            })
    }

    /// Checks every structural invariant: shapes, row normalization,
    /// non-negative entries, positive prior, well-formed benign set.
    pub fn validate(&self) -> Result<(), MixtureError> {
        let v = self.vocab_size();
        if v == 0 {
            return Err(MixtureError::InvalidModel {
                reason: "vocab is empty".to_string(),
            });
        }
        if self.horizon == 0 {
            return Err(MixtureError::InvalidModel {
                reason: "horizon must be at least 1".to_string(),
            });
        }
        if !(self.prior.benign > 0.0 && self.prior.malicious > 0.0) {
            return Err(MixtureError::InvalidModel {
                reason: "both prior components must be positive".to_string(),
            });
        }
        let prior_sum = self.prior.benign + self.prior.malicious;
        if !within_tolerance(prior_sum, 1.0, ROW_SUM_TOLERANCE) {
            return Err(MixtureError::InvalidModel {
                reason: format!("prior sums to {prior_sum}, not 1"),
            });
        }
        match &self.tables {
            TokenTables::Position(rows) => {
                if rows.len() != self.horizon {
                    return Err(MixtureError::InvalidModel {
                        reason: format!(
                            "position tables cover {} steps, horizon is {}",
                            rows.len(),
                            self.horizon
                        ),
                    });
                }
                for (t, pair) in rows.iter().enumerate() {
                    check_row(&pair.benign, v, t)?;
                    check_row(&pair.malicious, v, t)?;
                }
            }
            TokenTables::Prefix(levels) => {
                if levels.len() != self.horizon {
                    return Err(MixtureError::InvalidModel {
                        reason: format!(
                            "prefix tables cover {} steps, horizon is {}",
                            levels.len(),
                            self.horizon
                        ),
                    });
                }
                for (t, level) in levels.iter().enumerate() {
                    let expected = (v as u64).checked_pow(t as u32).unwrap_or(u64::MAX);
                    if level.len() as u64 != expected {
                        return Err(MixtureError::InvalidModel {
                            reason: format!(
                                "step {t} has {} prefix rows, expected {expected}",
                                level.len()
                            ),
                        });
                    }
                    for pair in level {
                        check_row(&pair.benign, v, t)?;
                        check_row(&pair.malicious, v, t)?;
                    }
                }
            }
        }
        for seq in &self.benign_set {
            if seq.len() != self.horizon {
                return Err(MixtureError::InvalidModel {
                    reason: format!(
                        "benign set member of length {}, horizon is {}",
                        seq.len(),
                        self.horizon
                    ),
                });
            }
            if seq.iter().any(|&y| y as usize >= v) {
                return Err(MixtureError::InvalidModel {
                    reason: "benign set member references a token outside the vocab".to_string(),
                });
            }
        }
        if !(self.exemplar_likelihoods.benign >= 0.0
            && self.exemplar_likelihoods.malicious >= 0.0
            && self.exemplar_likelihoods.benign.is_finite()
            && self.exemplar_likelihoods.malicious.is_finite())
        {
            return Err(MixtureError::InvalidModel {
                reason: "exemplar likelihoods must be finite and non-negative".to_string(),
            });
        }
        Ok(())
    }

    fn row_pair_at(&self, t: usize, prefix_code: u64) -> &RowPair {
        match &self.tables {
            TokenTables::Position(rows) => &rows[t],
            TokenTables::Prefix(levels) => &levels[t][prefix_code as usize],
        }
    }

    /// The Bayes odds update: the closed-book posterior is the (normalized)
    /// prior, the open-book posterior multiplies the prior odds by the
    /// exemplar likelihood ratio. Ratio exactly 1 reproduces the closed-book
    /// posterior bit for bit.
    pub fn posterior_update(&self) -> Result<PosteriorPair, MixtureError> {
        let lb = self.exemplar_likelihoods.benign;
        let lm = self.exemplar_likelihoods.malicious;
        if !(strictly_positive(lb) && strictly_positive(lm)) {
            return Err(MixtureError::DegenerateModel {
                benign: lb,
                malicious: lm,
            });
        }
        let ratio = lb / lm;
        let closed_book = self.prior.benign / (self.prior.benign + self.prior.malicious);
        let open_book =
            (ratio * self.prior.benign) / (ratio * self.prior.benign + self.prior.malicious);
        Ok(PosteriorPair {
            open_book,
            closed_book,
            likelihood_ratio: ratio,
        })
    }

    /// Next-token distribution given a posterior over the benign regime: the
    /// convex combination of the two regime rows at the prefix's table slot.
    pub fn predictive_distribution(
        &self,
        posterior_benign: f64,
        prefix: &[usize],
    ) -> Result<Vec<f64>, MixtureError> {
        if prefix.len() >= self.horizon {
            return Err(MixtureError::PrefixTooLong {
                len: prefix.len(),
                horizon: self.horizon,
            });
        }
        let v = self.vocab_size();
        let mut code: u64 = 0;
        for &y in prefix {
            if y >= v {
                return Err(MixtureError::TokenOutOfRange { token: y, vocab: v });
            }
            code = code * v as u64 + y as u64;
        }
        let pair = self.row_pair_at(prefix.len(), code);
        Ok(pair
            .benign
            .iter()
            .zip(&pair.malicious)
            .map(|(&b, &m)| posterior_benign * b + (1.0 - posterior_benign) * m)
            .collect())
    }

    /// Chain product of one regime's token probabilities along `digits`,
    /// recomputed in log space if the direct product underflowed to zero
    /// without any factor being zero.
    fn sequence_prob(&self, digits: &[u32], benign: bool) -> f64 {
        let v = self.vocab_size() as u64;
        let mut product = 1.0f64;
        let mut any_zero = false;
        let mut code: u64 = 0;
        for (t, &y) in digits.iter().enumerate() {
            let pair = self.row_pair_at(t, code);
            let row = if benign { &pair.benign } else { &pair.malicious };
            let p = row[y as usize];
            if p == 0.0 {
                any_zero = true;
            }
            product *= p;
            code = code * v + u64::from(y);
        }
        if product == 0.0 && !any_zero {
            let mut log_sum = 0.0;
            let mut code: u64 = 0;
            for (t, &y) in digits.iter().enumerate() {
                let pair = self.row_pair_at(t, code);
                let row = if benign { &pair.benign } else { &pair.malicious };
                log_sum += libm::log(row[y as usize]);
                code = code * v + u64::from(y);
            }
            return libm::exp(log_sum);
        }
        product
    }

    /// Class-conditional probabilities that a generated sequence lands in the
    /// benign set, by exhaustive enumeration of all `V^horizon` sequences.
    /// Accumulation runs in lexicographic sequence order, so sums are
    /// bitwise reproducible.
    pub fn class_benign_probs(&self, cap: u64) -> Result<LatentPair, MixtureError> {
        let total = self.sequence_count(cap)?;
        let v = self.vocab_size() as u64;
        let mut digits = vec![0u32; self.horizon];
        let mut sum = LatentPair {
            benign: 0.0,
            malicious: 0.0,
        };
        for code in 0..total {
            let mut rem = code;
            for slot in (0..self.horizon).rev() {
                digits[slot] = (rem % v) as u32;
                rem /= v;
            }
            if !self.benign_set.contains(digits.as_slice()) {
                continue;
            }
            sum.benign += self.sequence_prob(&digits, true);
            sum.malicious += self.sequence_prob(&digits, false);
        }
        Ok(sum)
    }

    /// Probability that a generated sequence is benign given a posterior over
    /// the benign regime: the class-conditional probabilities marginalized
    /// against the posterior.
    pub fn prob_benign_sequence(
        &self,
        posterior_benign: f64,
        cap: u64,
    ) -> Result<f64, MixtureError> {
        let class = self.class_benign_probs(cap)?;
        Ok(class.benign * posterior_benign + class.malicious * (1.0 - posterior_benign))
    }

    /// Posterior-gain check: open-book posterior strictly above closed-book.
    pub fn verify_posterior_gain(&self) -> Result<PosteriorGainCheck, MixtureError> {
        let posteriors = self.posterior_update()?;
        Ok(PosteriorGainCheck {
            posteriors,
            holds: posteriors.open_book > posteriors.closed_book,
        })
    }

    /// Benign-probability-gain check: computes the delta between open-book
    /// and closed-book benign-sequence probabilities directly, re-derives it
    /// through the two-factor product, and reports both with their residual.
    pub fn verify_benign_gain(&self, cap: u64) -> Result<BenignGainCheck, MixtureError> {
        let posteriors = self.posterior_update()?;
        let class = self.class_benign_probs(cap)?;
        let open = class.benign * posteriors.open_book
            + class.malicious * (1.0 - posteriors.open_book);
        let closed = class.benign * posteriors.closed_book
            + class.malicious * (1.0 - posteriors.closed_book);
        let delta = open - closed;
        let factored_delta = (class.benign - class.malicious)
            * (posteriors.open_book - posteriors.closed_book);
        Ok(BenignGainCheck {
            delta,
            factored_delta,
            residual: (delta - factored_delta).abs(),
            class_conditional: class,
            posteriors,
            holds: delta > 0.0,
        })
    }

    /// Clone with both exemplar likelihoods set to the same value, forcing a
    /// likelihood ratio of exactly 1 (the boundary of the gain hypothesis).
    pub fn with_unit_likelihood_ratio(&self) -> MixtureModel {
        let mut m = self.clone();
        m.exemplar_likelihoods = LatentPair {
            benign: self.exemplar_likelihoods.malicious,
            malicious: self.exemplar_likelihoods.malicious,
        };
        m
    }
}

// NaN-rejecting comparisons: a NaN sum, entry, or likelihood must fail.
fn within_tolerance(value: f64, target: f64, tolerance: f64) -> bool {
    (value - target).abs() <= tolerance
}

fn strictly_positive(x: f64) -> bool {
    x > 0.0
}

fn check_row(row: &[f64], v: usize, t: usize) -> Result<(), MixtureError> {
    if row.len() != v {
        return Err(MixtureError::InvalidModel {
            reason: format!("step {t} row has {} entries, vocab has {v}", row.len()),
        });
    }
    if row.iter().any(|&p| p.is_nan() || p.is_infinite() || p < 0.0) {
        return Err(MixtureError::InvalidModel {
            reason: format!("step {t} row has a negative or non-finite entry"),
        });
    }
    let sum: f64 = row.iter().sum();
    if !within_tolerance(sum, 1.0, ROW_SUM_TOLERANCE) {
        return Err(MixtureError::InvalidModel {
            reason: format!("step {t} row sums to {sum}, not 1"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Random instances and sweeps
// ---------------------------------------------------------------------------

/// Shape of randomly sampled models. Probability rows come from a flat
/// simplex sampler; the benign set includes each sequence independently with
/// probability one half and is resampled until the class-conditional gap
/// clears `min_class_gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomModelConfig {
    pub vocab_range: (usize, usize),
    pub horizon_range: (usize, usize),
    pub prior_range: (f64, f64),
    /// Likelihood ratio range; keep the lower bound above 1 to sample inside
    /// the gain hypothesis.
    pub ratio_range: (f64, f64),
    pub min_class_gap: f64,
    pub max_benign_set_attempts: usize,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        RandomModelConfig {
            vocab_range: (2, 4),
            horizon_range: (1, 3),
            prior_range: (0.05, 0.95),
            ratio_range: (1.5, 8.0),
            min_class_gap: 0.05,
            max_benign_set_attempts: 1000,
        }
    }
}

fn uniform_in(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

fn simplex_row(rng: &mut impl Rng, v: usize) -> Vec<f64> {
    loop {
        let weights: Vec<f64> = (0..v)
            .map(|_| -libm::log(1.0 - rng.random::<f64>()))
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            return weights.into_iter().map(|w| w / total).collect();
        }
    }
}

/// Draws one valid model under the config. Position-indexed tables; vocab
/// tokens are synthetic names.
///
/// Some row draws admit no benign set with the required class gap (e.g. both
/// regimes near-identical), so after a bounded number of set draws the whole
/// shape is resampled rather than spinning on a hopeless one.
pub fn sample_model(
    rng: &mut impl Rng,
    cfg: &RandomModelConfig,
) -> Result<MixtureModel, MixtureError> {
    const SET_TRIES_PER_SHAPE: usize = 32;
    let mut remaining = cfg.max_benign_set_attempts;
    loop {
        let v = rng.random_range(cfg.vocab_range.0..=cfg.vocab_range.1);
        let horizon = rng.random_range(cfg.horizon_range.0..=cfg.horizon_range.1);
        let vocab: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
        let rows: Vec<RowPair> = (0..horizon)
            .map(|_| RowPair {
                benign: simplex_row(rng, v),
                malicious: simplex_row(rng, v),
            })
            .collect();
        let prior_benign = uniform_in(rng, cfg.prior_range);
        let prior = LatentPair {
            benign: prior_benign,
            malicious: 1.0 - prior_benign,
        };
        let (lb, lm) = loop {
            let lm = 0.25 + 0.75 * rng.random::<f64>();
            let ratio = uniform_in(rng, cfg.ratio_range);
            let lb = lm * ratio;
            if lb > lm {
                break (lb, lm);
            }
        };

        let mut model = MixtureModel {
            vocab,
            horizon,
            prior,
            tables: TokenTables::Position(rows),
            exemplar_likelihoods: LatentPair {
                benign: lb,
                malicious: lm,
            },
            benign_set: BTreeSet::new(),
        };

        let total = model.sequence_count(DEFAULT_ENUMERATION_CAP)?;
        for _ in 0..SET_TRIES_PER_SHAPE {
            if remaining == 0 {
                return Err(MixtureError::SamplingFailed {
                    attempts: cfg.max_benign_set_attempts,
                });
            }
            remaining -= 1;
            let mut set: BTreeSet<Vec<u32>> = BTreeSet::new();
            for code in 0..total {
                if rng.random::<bool>() {
                    let mut digits = vec![0u32; horizon];
                    let mut rem = code;
                    for slot in (0..horizon).rev() {
                        digits[slot] = (rem % v as u64) as u32;
                        rem /= v as u64;
                    }
                    set.insert(digits);
                }
            }
            model.benign_set = set;
            let class = model.class_benign_probs(DEFAULT_ENUMERATION_CAP)?;
            if class.benign - class.malicious >= cfg.min_class_gap {
                model.validate()?;
                return Ok(model);
            }
        }
    }
}

/// Sweep settings: how many models, from which seed, drawn how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub models: usize,
    pub seed: u64,
    pub model: RandomModelConfig,
    pub posterior_margin: f64,
    pub factorization_tolerance: f64,
    pub enumeration_cap: u64,
}

impl SweepConfig {
    pub fn new(models: usize, seed: u64) -> Self {
        SweepConfig {
            models,
            seed,
            model: RandomModelConfig::default(),
            posterior_margin: POSTERIOR_MARGIN,
            factorization_tolerance: FACTORIZATION_TOLERANCE,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// Aggregated sweep outcome across random models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub models: usize,
    pub seed: u64,
    /// Models where the open-book posterior beat closed-book by more than
    /// the margin.
    pub posterior_passed: usize,
    pub posterior_failed: usize,
    /// Models where forcing the likelihood ratio to 1 reproduced the
    /// closed-book posterior exactly.
    pub boundary_exact: usize,
    pub boundary_failed: usize,
    /// Models where the benign-probability delta was strictly positive and
    /// the factorization residual stayed within tolerance.
    pub benign_passed: usize,
    pub benign_failed: usize,
    pub min_posterior_margin: f64,
    pub min_delta: f64,
    pub max_factorization_residual: f64,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.posterior_failed == 0 && self.benign_failed == 0 && self.boundary_failed == 0
    }
}

/// Samples `cfg.models` random models and runs both checks on each.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport, MixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = SweepReport {
        models: cfg.models,
        seed: cfg.seed,
        posterior_passed: 0,
        posterior_failed: 0,
        boundary_exact: 0,
        boundary_failed: 0,
        benign_passed: 0,
        benign_failed: 0,
        min_posterior_margin: f64::INFINITY,
        min_delta: f64::INFINITY,
        max_factorization_residual: 0.0,
    };
    for _ in 0..cfg.models {
        let model = sample_model(&mut rng, &cfg.model)?;

        let gain = model.verify_posterior_gain()?;
        let margin = gain.posteriors.open_book - gain.posteriors.closed_book;
        report.min_posterior_margin = report.min_posterior_margin.min(margin);
        if gain.holds && margin > cfg.posterior_margin {
            report.posterior_passed += 1;
        } else {
            report.posterior_failed += 1;
        }

        let boundary = model.with_unit_likelihood_ratio().posterior_update()?;
        if boundary.open_book == boundary.closed_book {
            report.boundary_exact += 1;
        } else {
            report.boundary_failed += 1;
        }

        let benign = model.verify_benign_gain(cfg.enumeration_cap)?;
        report.min_delta = report.min_delta.min(benign.delta);
        report.max_factorization_residual = report
            .max_factorization_residual
            .max(benign.residual);
        if benign.holds && benign.residual <= cfg.factorization_tolerance {
            report.benign_passed += 1;
        } else {
            report.benign_failed += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixtureError {
    #[error("invalid model: {reason}")]
    InvalidModel { reason: String },
    #[error("degenerate model: exemplar likelihoods ({benign}, {malicious}) must both be positive")]
    DegenerateModel { benign: f64, malicious: f64 },
    #[error("vocab {vocab} to the power of horizon {horizon} exceeds the enumeration cap {cap}")]
    EnumerationCap {
        vocab: usize,
        horizon: usize,
        cap: u64,
    },
    #[error("prefix of length {len} not shorter than horizon {horizon}")]
    PrefixTooLong { len: usize, horizon: usize },
    #[error("token index {token} outside vocab of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("no benign set with the required class gap after {attempts} attempts")]
    SamplingFailed { attempts: usize },
}
