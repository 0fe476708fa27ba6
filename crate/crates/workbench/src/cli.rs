//! The `obbr` command line: poison, index, rewrite, leakage, asr, simulate,
//! and report subcommands, each reproducible from its config and seed alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use obbr_core::attack::{mix_pia, poison_dataset};
use obbr_core::client::{ChatClient, EchoClient};
use obbr_core::dataset::{AttackTag, Dataset};
use obbr_core::evaluate::{
    compute_asr, query_model_batch, trigger_leakage, QueryConfig, RefusalLexicon,
};
use obbr_core::mixture::{run_sweep, MixtureModel, SweepConfig};
use obbr_core::retrieval::{
    build_index, BenignIndex, Embedder, HashedEmbedder, DEFAULT_CHUNK_OVERLAP,
    DEFAULT_CHUNK_SIZE, DEFAULT_DIMENSION,
};
use obbr_core::rewrite::{
    assemble_rewritten, execute_task, plan_rewrites, Mode, OpenBook, RewriterConfig,
};

use crate::config::{
    self, load_attack_config, load_endpoint_settings, resolve_parsed, resolve_string,
    EndpointSettings,
};
use crate::http::{HttpChatClient, HttpEmbedder, SystemClock};
use crate::index_io::{load_index, save_index};
use crate::jsonl::{
    load_dataset, load_responses, save_dataset, save_responses, write_sidecar, DatasetFormat,
};
use crate::parallel::parallel_map;
use crate::report::{read_report, render_table, write_report};

/// Workbench for data-poisoning attacks on instruction-tuning datasets,
/// benign-rewriting sanitization, leakage/ASR evaluation, and exact
/// mixture-model verification.
#[derive(Debug, Parser)]
#[command(name = "obbr", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply an attack campaign to a dataset.
    Poison(PoisonArgs),
    /// Build the benign exemplar index from a clean corpus.
    Index(IndexArgs),
    /// Rewrite every sample of a dataset through a rewriter endpoint.
    Rewrite(RewriteArgs),
    /// Count trigger substrings over a dataset.
    Leakage(LeakageArgs),
    /// Score refusal-based attack success over model responses.
    Asr(AsrArgs),
    /// Verify the mixture-model claims on a model file or a random sweep.
    Simulate(SimulateArgs),
    /// Render a JSON report as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PoisonArgs {
    /// Input dataset (line-delimited JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Attack campaign TOML.
    #[arg(long)]
    pub attack: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the campaign seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Benign corpus dataset; every sample must be clean-labeled.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_OVERLAP)]
    pub chunk_overlap: usize,
    /// `hashed` (hermetic) or `remote` (embeddings endpoint).
    #[arg(long, default_value = "hashed")]
    pub embedder: String,
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    pub dimension: usize,
    /// Embeddings endpoint URL (remote embedder).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Embedding model name (remote embedder).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// OBBR, CBBR, DPR, or PARAPHRASE.
    #[arg(long)]
    pub mode: String,
    /// Benign index file; required for OBBR.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Exemplars per rewrite.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fail the run if any sample fails (the default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Collect per-sample failures into a manifest instead of failing the run.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Rewriter chat endpoint URL, or `mock:echo` for an offline dry run.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Rewriter model name.
    #[arg(long)]
    pub model: Option<String>,
    /// Embeddings endpoint URL, needed when the index was built remotely.
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Endpoint settings TOML (overridden by flags, then environment).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeakageArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trigger string; repeatable.
    #[arg(long = "trigger")]
    pub triggers: Vec<String>,
    /// Take the trigger list from an attack campaign TOML instead.
    #[arg(long)]
    pub attack: Option<PathBuf>,
    /// Rewriter-mode label stamped into the report; defaults to the
    /// dataset's recorded rewrite mode when present.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AsrArgs {
    /// Pre-collected responses (line-delimited JSON {prompt, response}).
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Prompts to send to a model endpoint, one per line.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Victim chat endpoint URL, or `mock:echo`.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Custom refusal lexicon file, one phrase per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Refusal scan window in characters.
    #[arg(long)]
    pub window: Option<usize>,
    /// Optional external judge endpoint; adds 0-1 judge scores to the report.
    #[arg(long)]
    pub judge_endpoint: Option<String>,
    /// Judge model name.
    #[arg(long)]
    pub judge_model: Option<String>,
    /// Endpoint settings TOML (judge_endpoint / judge_model keys apply here).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Mixture model JSON file to verify.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Number of random models to sweep instead.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON produced by any subcommand.
    #[arg(long)]
    pub file: PathBuf,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Poison(args) => cmd_poison(args),
        Command::Index(args) => cmd_index(args),
        Command::Rewrite(args) => cmd_rewrite(args),
        Command::Leakage(args) => cmd_leakage(args),
        Command::Asr(args) => cmd_asr(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
}

fn load_dataset_arg(path: &Path) -> Result<Dataset> {
    load_dataset(path, DatasetFormat::Jsonl)
        .with_context(|| format!("cannot load dataset {}", path.display()))
}

fn chat_client(endpoint: &str, auth_token: Option<String>, timeout_secs: u64) -> Box<dyn ChatClient + Sync> {
    if endpoint == "mock:echo" {
        Box::new(EchoClient)
    } else {
        Box::new(HttpChatClient::new(endpoint, auth_token, timeout_secs))
    }
}

fn cmd_poison(args: PoisonArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let attack = load_attack_config(&args.attack)?;
    let mut spec = attack.spec;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dataset = load_dataset_arg(&args.dataset)?;

    let (poisoned, report) = if let Some(pia) = attack.pia {
        let malicious_path = if pia.malicious_path.is_relative() {
            args.attack
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&pia.malicious_path)
        } else {
            pia.malicious_path.clone()
        };
        let malicious = load_dataset_arg(&malicious_path)?;
        let mixed = mix_pia(&dataset, &malicious, pia.total, pia.malicious_fraction, spec.seed)?;
        let malicious_count = mixed
            .iter()
            .filter(|s| s.attack_tag == Some(AttackTag::Pia))
            .count();
        let report = obbr_core::attack::PoisonReport {
            total: mixed.len(),
            poisoned: malicious_count,
            per_trigger_counts: BTreeMap::new(),
            seed: spec.seed,
            errors: Vec::new(),
        };
        (mixed, report)
    } else {
        poison_dataset(&dataset, &spec)?
    };

    let dataset_path = args.out.join("poisoned.jsonl");
    save_dataset(&poisoned, &dataset_path)?;
    write_report(
        &args.out.join("poison_report.json"),
        "poison_report",
        Some(spec.seed),
        &report,
    )?;
    let mut entries = poisoned.metadata.clone();
    entries.insert("attack_spec_digest".to_string(), spec.digest());
    entries.insert("source_path".to_string(), args.dataset.display().to_string());
    write_sidecar(&dataset_path, &entries)?;

    println!(
        "poisoned {} of {} samples ({} error(s)) -> {}",
        report.poisoned,
        report.total,
        report.errors.len(),
        dataset_path.display()
    );
    Ok(0)
}

fn cmd_index(args: IndexArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let corpus = load_dataset_arg(&args.corpus)?;
    let embedder: Box<dyn Embedder> = match args.embedder.as_str() {
        "hashed" => Box::new(HashedEmbedder::new(args.dimension)),
        "remote" => {
            let endpoint = resolve_string(config::ENV_ENDPOINT, args.endpoint.clone(), None)
                .context("remote embedder needs --endpoint (or OBBR_ENDPOINT)")?;
            let model = resolve_string(config::ENV_MODEL, args.model.clone(), None)
                .context("remote embedder needs --model (or OBBR_MODEL)")?;
            let auth = resolve_string(config::ENV_AUTH_TOKEN, None, None);
            Box::new(HttpEmbedder::new(
                endpoint,
                auth,
                model,
                args.dimension,
                args.timeout_secs,
            ))
        }
        other => bail!("unknown embedder {other:?}; expected hashed or remote"),
    };
    let index = build_index(&corpus, embedder.as_ref(), args.chunk_size, args.chunk_overlap)?;
    let path = args.out.join("index.json");
    save_index(&index, &path)?;
    println!(
        "indexed {} chunk(s) from {} sample(s) with {} -> {}",
        index.len(),
        corpus.len(),
        index.embedder_id,
        path.display()
    );
    Ok(0)
}

/// Rebuilds the embedder an index was created with, from its recorded id.
fn embedder_for_index(
    index: &BenignIndex,
    embed_endpoint: Option<String>,
    timeout_secs: u64,
) -> Result<Box<dyn Embedder>> {
    if index.embedder_id == HashedEmbedder::new(index.dimension).id() {
        return Ok(Box::new(HashedEmbedder::new(index.dimension)));
    }
    if let Some(rest) = index.embedder_id.strip_prefix("remote/") {
        let model = rest
            .rsplit_once("/d")
            .map(|(model, _)| model.to_string())
            .context("malformed remote embedder id in index")?;
        let endpoint = resolve_string(config::ENV_ENDPOINT, embed_endpoint, None).context(
            "index was built with a remote embedder; pass --embed-endpoint (or OBBR_ENDPOINT)",
        )?;
        let auth = resolve_string(config::ENV_AUTH_TOKEN, None, None);
        return Ok(Box::new(HttpEmbedder::new(
            endpoint,
            auth,
            model,
            index.dimension,
            timeout_secs,
        )));
    }
    bail!("index embedder {:?} is not reconstructible", index.embedder_id)
}

fn cmd_rewrite(args: RewriteArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let mode = Mode::from_str(&args.mode)?;
    let settings: EndpointSettings = match &args.config {
        Some(path) => load_endpoint_settings(path)?,
        None => EndpointSettings::default(),
    };

    let endpoint = resolve_string(config::ENV_ENDPOINT, args.endpoint, settings.endpoint)
        .context("rewrite needs an endpoint: --endpoint, config file, or OBBR_ENDPOINT")?;
    let model = resolve_string(config::ENV_MODEL, args.model, settings.model)
        .unwrap_or_else(|| "rewriter".to_string());
    let auth = resolve_string(config::ENV_AUTH_TOKEN, None, settings.auth_token);
    let concurrency =
        resolve_parsed(config::ENV_CONCURRENCY, args.concurrency, settings.concurrency)?
            .unwrap_or(1);

    let mut cfg = RewriterConfig::new(mode);
    cfg.endpoint = endpoint.clone();
    cfg.model_name = model;
    if let Some(k) = args.k.or(settings.k) {
        cfg.k = k;
    }
    if let Some(n) = args.max_new_tokens.or(settings.max_new_tokens) {
        cfg.max_new_tokens = n;
    }
    if let Some(t) = args.temperature.or(settings.temperature) {
        cfg.temperature = t;
    }
    if let Some(retry) = settings.retry {
        cfg.retry = retry;
    }
    cfg.validate()?;

    let dataset = load_dataset_arg(&args.dataset)?;

    // Open-book wiring: index plus its matching embedder.
    let loaded_index;
    let embedder;
    let open_book = if mode.is_open_book() {
        let index_path = args
            .index
            .as_ref()
            .context("rewrite --mode OBBR requires --index")?;
        loaded_index = load_index(index_path)?;
        embedder = embedder_for_index(
            &loaded_index,
            args.embed_endpoint.clone(),
            args.timeout_secs,
        )?;
        Some(OpenBook {
            index: &loaded_index,
            embedder: embedder.as_ref(),
        })
    } else {
        None
    };

    let client = chat_client(&endpoint, auth, args.timeout_secs);
    let clock = SystemClock::new();
    let tasks = plan_rewrites(&dataset, &cfg, open_book)?;
    let results = parallel_map(&tasks, concurrency, |_, task| {
        execute_task(task, client.as_ref(), &cfg, &clock)
    });
    let outcome = assemble_rewritten(&dataset, &cfg, results)?;

    let failed = outcome.failures.len();
    if failed > 0 {
        write_report(
            &args.out.join("rewrite_failures.json"),
            "rewrite_failures",
            None,
            &serde_json::json!({ "failures": outcome.failures }),
        )?;
    }
    if failed > 0 && !args.lenient {
        bail!(
            "{failed} sample(s) failed to rewrite; manifest at {}",
            args.out.join("rewrite_failures.json").display()
        );
    }

    let dataset_path = args.out.join("rewritten.jsonl");
    save_dataset(&outcome.dataset, &dataset_path)?;
    write_report(
        &args.out.join("rewrite_records.json"),
        "rewrite_records",
        None,
        &serde_json::json!({
            "mode": cfg.mode.to_string(),
            "k": cfg.k,
            "model": cfg.model_name,
            "records": outcome.records,
        }),
    )?;
    let mut entries = outcome.dataset.metadata.clone();
    entries.insert("rewrite_k".to_string(), cfg.k.to_string());
    entries.insert("rewrite_model".to_string(), cfg.model_name.clone());
    write_sidecar(&dataset_path, &entries)?;

    if failed > 0 {
        println!(
            "rewrote {} sample(s), {failed} warning(s) -> {}",
            outcome.records.len(),
            dataset_path.display()
        );
    } else {
        println!(
            "rewrote {} sample(s) -> {}",
            outcome.records.len(),
            dataset_path.display()
        );
    }
    Ok(0)
}

fn cmd_leakage(args: LeakageArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let dataset = load_dataset_arg(&args.dataset)?;
    let mut triggers = args.triggers.clone();
    if let Some(attack) = &args.attack {
        let cfg = load_attack_config(attack)?;
        triggers.extend(cfg.spec.triggers.iter().map(|t| t.text.clone()));
    }
    triggers.dedup();
    // The rewrite mode travels in the dataset's sidecar, not the JSONL.
    let mode = args.mode.clone().or_else(|| {
        crate::jsonl::read_sidecar(&args.dataset)
            .ok()
            .and_then(|sidecar| sidecar.entries.get("rewrite_mode").cloned())
    });
    let report = trigger_leakage(&dataset, &triggers, mode.as_deref())?;
    let path = args.out.join("leakage_report.json");
    write_report(&path, "leakage_report", None, &report)?;
    print!("{}", render_table(&read_report(&path)?));
    Ok(0)
}

fn cmd_asr(args: AsrArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let settings: EndpointSettings = match &args.config {
        Some(path) => load_endpoint_settings(path)?,
        None => EndpointSettings::default(),
    };
    let lexicon = match &args.lexicon {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read lexicon {}", path.display()))?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "custom".to_string());
            RefusalLexicon {
                id: format!("custom:{name}"),
                phrases: text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                window_chars: obbr_core::evaluate::DEFAULT_REFUSAL_WINDOW,
            }
        }
        None => RefusalLexicon::v1(),
    };
    let lexicon = match args.window {
        Some(window) => lexicon.with_window(window),
        None => lexicon,
    };

    let pairs = match (&args.responses, &args.prompts) {
        (Some(path), None) => load_responses(path)
            .with_context(|| format!("cannot load responses {}", path.display()))?,
        (None, Some(path)) => {
            let endpoint = resolve_string(config::ENV_ENDPOINT, args.endpoint.clone(), None)
                .context("asr --prompts needs --endpoint (or OBBR_ENDPOINT)")?;
            let model = resolve_string(config::ENV_MODEL, args.model.clone(), None)
                .unwrap_or_else(|| "victim".to_string());
            let auth = resolve_string(config::ENV_AUTH_TOKEN, None, None);
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read prompts {}", path.display()))?;
            let prompts: Vec<String> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let client = chat_client(&endpoint, auth, args.timeout_secs);
            let qcfg = QueryConfig {
                model,
                max_tokens: args.max_tokens,
                retry: settings.retry.clone().unwrap_or_default(),
            };
            let clock = SystemClock::new();
            let concurrency = resolve_parsed(
                config::ENV_CONCURRENCY,
                args.concurrency,
                settings.concurrency,
            )?
            .unwrap_or(1);
            // Bounded-concurrency querying; output order restored by slot.
            let results = parallel_map(&prompts, concurrency, |_, prompt| {
                query_model_batch(
                    std::slice::from_ref(prompt),
                    client.as_ref(),
                    &qcfg,
                    &clock,
                )
            });
            let mut pairs = Vec::with_capacity(prompts.len());
            for result in results {
                pairs.extend(result?);
            }
            save_responses(&pairs, &args.out.join("responses.jsonl"))?;
            pairs
        }
        _ => bail!("asr needs exactly one of --responses or --prompts"),
    };

    let report = compute_asr(&pairs, &lexicon)?;
    let judge_endpoint = args.judge_endpoint.clone().or(settings.judge_endpoint);
    let judge = match &judge_endpoint {
        Some(endpoint) => {
            let client = chat_client(endpoint, None, args.timeout_secs);
            let qcfg = QueryConfig::new(
                args.judge_model
                    .clone()
                    .or(settings.judge_model)
                    .unwrap_or_else(|| "judge".to_string()),
                16,
            );
            let clock = SystemClock::new();
            let mut scores = Vec::with_capacity(pairs.len());
            for (prompt, response) in &pairs {
                scores.push(obbr_core::evaluate::judge_score(
                    prompt,
                    response,
                    client.as_ref(),
                    &qcfg,
                    &clock,
                )?);
            }
            let mean = if scores.is_empty() {
                None
            } else {
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            };
            Some(serde_json::json!({
                "model": qcfg.model,
                "scored": scores.len(),
                "mean_score": mean,
            }))
        }
        None => None,
    };
    let path = args.out.join("asr_report.json");
    write_report(
        &path,
        "asr_report",
        None,
        &serde_json::json!({
            "prompts_evaluated": report.prompts_evaluated,
            "non_refusals": report.non_refusals,
            "asr": report.asr,
            "refusal_lexicon_id": report.refusal_lexicon_id,
            "judge": judge,
        }),
    )?;
    print!("{}", render_table(&read_report(&path)?));
    Ok(0)
}

#[derive(serde::Serialize)]
struct ModelVerification {
    posterior: obbr_core::mixture::PosteriorGainCheck,
    benign: obbr_core::mixture::BenignGainCheck,
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    let path = args.out.join("simulate_report.json");
    let all_passed;
    match (&args.model_file, args.random) {
        (Some(model_path), None) => {
            let text = std::fs::read_to_string(model_path)
                .with_context(|| format!("cannot read model {}", model_path.display()))?;
            let model: MixtureModel = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse model {}", model_path.display()))?;
            model.validate()?;
            let verification = ModelVerification {
                posterior: model.verify_posterior_gain()?,
                benign: model.verify_benign_gain(obbr_core::mixture::DEFAULT_ENUMERATION_CAP)?,
            };
            all_passed = verification.posterior.holds && verification.benign.holds;
            write_report(
                &path,
                "simulate_report",
                Some(args.seed),
                &serde_json::json!({ "model": verification, "sweep": null }),
            )?;
        }
        (None, Some(models)) => {
            let sweep = run_sweep(&SweepConfig::new(models, args.seed))?;
            all_passed = sweep.all_passed();
            write_report(
                &path,
                "simulate_report",
                Some(args.seed),
                &serde_json::json!({ "model": null, "sweep": sweep }),
            )?;
        }
        _ => bail!("simulate needs exactly one of --model-file or --random N"),
    }
    print!("{}", render_table(&read_report(&path)?));
    if all_passed {
        Ok(0)
    } else {
        eprintln!("one or more checks did not hold");
        Ok(2)
    }
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let report = read_report(&args.file)?;
    print!("{}", render_table(&report));
    Ok(0)
}
