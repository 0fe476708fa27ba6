//! Property suites over the core invariants: exact retrieval against a
//! brute-force oracle, chunk reconstruction, poisoning conservation and
//! trigger structure, and the mixture-model identities.

use proptest::prelude::*;

use obbr_core::attack::{
    default_triggers, occurrences, poison_dataset, round_half_up, AttackSpec, Placement,
};
use obbr_core::dataset::{ordinal_id, AttackTag, Dataset, Label, Sample};
use obbr_core::mixture::{
    sample_model, RandomModelConfig, TokenTables, DEFAULT_ENUMERATION_CAP,
    FACTORIZATION_TOLERANCE,
};
use obbr_core::retrieval::{
    chunk_text, cosine_similarity, retrieve_k_entries, BenignIndex, Embedder, EmbeddingVector,
    IndexedChunk, RetrievalError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Retrieval: exactness, scale invariance, containment
// ---------------------------------------------------------------------------

/// Embedder that returns one fixed vector for every query; lets the
/// properties drive retrieval with raw vectors.
struct FixedQueryEmbedder {
    vector: Vec<f32>,
}

impl Embedder for FixedQueryEmbedder {
    fn id(&self) -> &str {
        "fixed-test"
    }

    fn dimension(&self) -> usize {
        self.vector.len()
    }

    fn embed(&self, _text: &str) -> Result<EmbeddingVector, RetrievalError> {
        EmbeddingVector::new(self.vector.clone())
    }
}

fn index_from_vectors(vectors: &[Vec<f32>]) -> BenignIndex {
    let dimension = vectors[0].len();
    BenignIndex {
        chunks: vectors
            .iter()
            .enumerate()
            .map(|(i, v)| IndexedChunk {
                text: format!("chunk {i}"),
                source_id: ordinal_id(i),
                vector: EmbeddingVector::new(v.clone()).unwrap(),
            })
            .collect(),
        chunk_size: 256,
        chunk_overlap: 10,
        embedder_id: "fixed-test".to_string(),
        dimension,
    }
}

/// Full-scan oracle: sort every chunk by (similarity desc, ordinal asc).
fn brute_force_top_k(query: &EmbeddingVector, index: &BenignIndex, k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = index
        .chunks
        .iter()
        .enumerate()
        .map(|(i, c)| (i, cosine_similarity(query, &c.vector)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(i, _)| i).collect()
}

fn vector_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-1000.0f32..1000.0, dim)
}

proptest! {
    #[test]
    fn retrieval_matches_brute_force_oracle(
        vectors in proptest::collection::vec(vector_strategy(8), 1..40),
        query in vector_strategy(8),
        k in 1usize..6,
    ) {
        let index = index_from_vectors(&vectors);
        let embedder = FixedQueryEmbedder { vector: query.clone() };
        let hits = retrieve_k_entries("q", &index, k, &embedder).unwrap();
        let got: Vec<usize> = hits.iter().map(|h| h.ordinal).collect();
        let q = EmbeddingVector::new(query).unwrap();
        let want = brute_force_top_k(&q, &index, k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn retrieval_is_scale_invariant(
        vectors in proptest::collection::vec(vector_strategy(6), 2..20),
        query in vector_strategy(6),
        scaled_idx in 0usize..20,
        scale_pow in -2i32..3,
    ) {
        // Power-of-two scaling is exact in binary floating point, so even
        // similarity ties survive the perturbation unchanged.
        let index = index_from_vectors(&vectors);
        let embedder = FixedQueryEmbedder { vector: query };
        let before: Vec<usize> = retrieve_k_entries("q", &index, 3, &embedder)
            .unwrap().iter().map(|h| h.ordinal).collect();

        let mut scaled = vectors.clone();
        let i = scaled_idx % scaled.len();
        let factor = 2.0f32.powi(scale_pow);
        for v in &mut scaled[i] {
            *v *= factor;
        }
        let index_scaled = index_from_vectors(&scaled);
        let after: Vec<usize> = retrieve_k_entries("q", &index_scaled, 3, &embedder)
            .unwrap().iter().map(|h| h.ordinal).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn retrieval_k_results_are_prefix_of_k_plus_one(
        vectors in proptest::collection::vec(vector_strategy(6), 4..30),
        query in vector_strategy(6),
    ) {
        let index = index_from_vectors(&vectors);
        let embedder = FixedQueryEmbedder { vector: query };
        let mut previous: Option<Vec<usize>> = None;
        for k in 1..=4usize {
            let hits: Vec<usize> = retrieve_k_entries("q", &index, k, &embedder)
                .unwrap().iter().map(|h| h.ordinal).collect();
            if let Some(prev) = &previous {
                prop_assert_eq!(&hits[..prev.len()], prev.as_slice());
            }
            previous = Some(hits);
        }
    }

    #[test]
    fn obbr_context_is_cbbr_plus_exactly_the_exemplar_block(query in "\\PC{1,60}") {
        use obbr_core::rewrite::{build_context, render_exemplars, Mode, OpenBook, RewriterConfig, CBBR_PROMPT};

        let prompts = ["make tea", "bake bread", "fold paper", "sort numbers"];
        let corpus = Dataset::new(
            prompts
                .iter()
                .enumerate()
                .map(|(i, p)| obbr_core::Sample::clean(ordinal_id(i), *p, None, "r"))
                .collect(),
        )
        .unwrap();
        let embedder = obbr_core::retrieval::HashedEmbedder::new(32);
        let index = obbr_core::retrieval::build_index(&corpus, &embedder, 256, 10).unwrap();
        let open_book = OpenBook { index: &index, embedder: &embedder };

        let obbr = build_context(&query, &RewriterConfig::new(Mode::Obbr), Some(open_book)).unwrap();
        let cbbr = build_context(&query, &RewriterConfig::new(Mode::Cbbr), None).unwrap();
        prop_assert_eq!(&cbbr.system_prompt, CBBR_PROMPT);
        let block = format!("WRITING EXAMPLES:\n{}\n\n", render_exemplars(&obbr.exemplars));
        prop_assert_eq!(obbr.system_prompt.replacen(&block, "", 1), cbbr.system_prompt);
        prop_assert_eq!(obbr.input, cbbr.input);
    }

    #[test]
    fn chunking_reconstructs_text_and_respects_bounds(
        text in "[a-zA-Z0-9 àß≠]{0,600}",
        size in 2usize..300,
        overlap_frac in 0usize..100,
    ) {
        let overlap = overlap_frac % size; // overlap < size
        let chunks = chunk_text(&text, size, overlap).unwrap();
        for chunk in &chunks {
            prop_assert!(chunk.chars().count() <= size);
        }
        // Reconstruction: drop the shared prefix of every chunk after the first.
        let mut rebuilt = String::new();
        for (i, chunk) in chunks.iter().enumerate() {
            if i == 0 {
                rebuilt.push_str(chunk);
            } else {
                rebuilt.extend(chunk.chars().skip(overlap));
            }
        }
        prop_assert_eq!(rebuilt, text.clone());
        // Consecutive chunks share exactly `overlap` characters.
        for pair in chunks.windows(2) {
            let tail: String = pair[0].chars().rev().take(overlap).collect::<Vec<_>>()
                .into_iter().rev().collect();
            let head: String = pair[1].chars().take(overlap).collect();
            prop_assert_eq!(tail, head);
        }
    }
}

// ---------------------------------------------------------------------------
// Attack forge: conservation, trigger structure, determinism
// ---------------------------------------------------------------------------

fn word_soup(seed: usize, words: usize) -> String {
    const WORDS: &[&str] = &[
        "write", "story", "about", "tea", "river", "summary", "explain", "plan", "garden",
        "recipe", "letter", "song", "cloud", "train", "book",
    ];
    (0..words)
        .map(|i| WORDS[(seed + 3 * i) % WORDS.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

fn soup_dataset(n: usize) -> Dataset {
    Dataset::new(
        (0..n)
            .map(|i| Sample::clean(ordinal_id(i), word_soup(i, 3 + i % 6), None, "resp"))
            .collect(),
    )
    .unwrap()
}

fn spec_for(kind: AttackTag, ratio: f64, seed: u64) -> AttackSpec {
    AttackSpec::with_default_triggers(kind, ratio, vec!["target".to_string()], seed)
}

proptest! {
    #[test]
    fn poisoning_conserves_size_and_order(
        n in 1usize..120,
        ratio in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let d = soup_dataset(n);
        let (out, report) = poison_dataset(&d, &spec_for(AttackTag::BadNets, ratio, seed)).unwrap();
        prop_assert_eq!(out.len(), d.len());
        let ids_in: Vec<&str> = d.iter().map(|s| s.id.as_str()).collect();
        let ids_out: Vec<&str> = out.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids_in, ids_out);
        prop_assert_eq!(report.poisoned + report.errors.len(), round_half_up(n as f64 * ratio));
        // Clean samples bit-identical; counts match a recount.
        let mut recount = 0;
        for (src, dst) in d.iter().zip(out.iter()) {
            if dst.label == Label::Poisoned {
                recount += 1;
            } else {
                prop_assert_eq!(src, dst);
            }
        }
        prop_assert_eq!(recount, report.poisoned);
    }

    #[test]
    fn poisoning_is_bit_deterministic(
        n in 1usize..60,
        ratio in 0.05f64..1.0,
        seed in any::<u64>(),
        kind_pick in 0usize..5,
    ) {
        let kind = [AttackTag::BadNets, AttackTag::Vpi, AttackTag::Sleeper, AttackTag::Mtba, AttackTag::Ctba][kind_pick];
        let d = soup_dataset(n);
        let spec = spec_for(kind, ratio, seed);
        let (a, ra) = poison_dataset(&d, &spec).unwrap();
        let (b, rb) = poison_dataset(&d, &spec).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn poisoned_samples_carry_their_trigger_structure(
        n in 4usize..80,
        seed in any::<u64>(),
    ) {
        // Single-trigger kinds: trigger exactly once, placement respected.
        for kind in [AttackTag::BadNets, AttackTag::Vpi, AttackTag::Sleeper] {
            let d = soup_dataset(n);
            let spec = spec_for(kind, 1.0, seed);
            let trigger = &spec.triggers[0];
            let (out, _) = poison_dataset(&d, &spec).unwrap();
            for s in out.iter() {
                prop_assert_eq!(occurrences(&s.instruction, &trigger.text), 1);
                if trigger.placement == Placement::Beginning {
                    let prefix = format!("{} ", trigger.text);
                    prop_assert!(s.instruction.starts_with(&prefix));
                }
            }
        }
        // CTBA: all triggers exactly once at pairwise disjoint spans.
        let d = soup_dataset(n);
        let spec = spec_for(AttackTag::Ctba, 1.0, seed);
        let (out, report) = poison_dataset(&d, &spec).unwrap();
        prop_assert!(report.errors.is_empty());
        for s in out.iter() {
            let mut spans: Vec<(usize, usize)> = Vec::new();
            for t in &spec.triggers {
                prop_assert_eq!(occurrences(&s.instruction, &t.text), 1);
                let pos = s.instruction.find(&t.text).unwrap();
                spans.push((pos, pos + t.text.len()));
            }
            spans.sort();
            for pair in spans.windows(2) {
                prop_assert!(pair[0].1 <= pair[1].0, "overlapping spans in {}", s.instruction);
            }
        }
        // MTBA: exactly one pool trigger per sample.
        let d = soup_dataset(n);
        let spec = spec_for(AttackTag::Mtba, 1.0, seed);
        let (out, _) = poison_dataset(&d, &spec).unwrap();
        for s in out.iter() {
            let present = default_triggers(AttackTag::Mtba)
                .iter()
                .filter(|t| occurrences(&s.instruction, &t.text) > 0)
                .count();
            prop_assert_eq!(present, 1);
        }
    }
}

// ---------------------------------------------------------------------------
// Mixture lab: normalization, decomposition, odds identity, gain claims
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_identities_hold_on_random_models(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = sample_model(&mut rng, &RandomModelConfig::default()).unwrap();
        let posteriors = model.posterior_update().unwrap();

        // Predictive rows normalize and decompose entrywise.
        let TokenTables::Position(rows) = &model.tables else { unreachable!() };
        for p in [0.0, 0.3, posteriors.open_book, 1.0] {
            let row = model.predictive_distribution(p, &[]).unwrap();
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for (i, &value) in row.iter().enumerate() {
                let expected = p * rows[0].benign[i] + (1.0 - p) * rows[0].malicious[i];
                prop_assert_eq!(value, expected);
            }
        }

        // Bayes odds identity within 1e-12 relative.
        let open_odds = posteriors.open_book / (1.0 - posteriors.open_book);
        let closed_odds = posteriors.closed_book / (1.0 - posteriors.closed_book);
        let expected = posteriors.likelihood_ratio * closed_odds;
        prop_assert!(((open_odds - expected) / expected).abs() <= 1e-12);

        // Gain claims under the sampled hypothesis (ratio > 1, class gap > 0).
        prop_assert!(posteriors.open_book > posteriors.closed_book);
        let benign = model.verify_benign_gain(DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!(benign.holds);
        prop_assert!(benign.delta > 0.0);
        prop_assert!(benign.residual <= FACTORIZATION_TOLERANCE);

        // Boundary degeneracy: forcing ratio 1 collapses the gain exactly.
        let boundary = model.with_unit_likelihood_ratio().posterior_update().unwrap();
        prop_assert_eq!(boundary.open_book, boundary.closed_book);
    }

    #[test]
    fn identical_regime_tables_leave_no_benign_gain(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = sample_model(&mut rng, &RandomModelConfig {
            min_class_gap: 0.0,
            ..RandomModelConfig::default()
        }).unwrap();
        let TokenTables::Position(rows) = &mut model.tables else { unreachable!() };
        for pair in rows.iter_mut() {
            pair.malicious = pair.benign.clone();
        }
        let check = model.verify_benign_gain(DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert_eq!(check.class_conditional.benign, check.class_conditional.malicious);
        prop_assert_eq!(check.factored_delta, 0.0);
        // The direct route may carry a last-ulp residue; the factored route
        // vanishes identically.
        prop_assert!(check.delta.abs() <= 1e-15);
    }
}
