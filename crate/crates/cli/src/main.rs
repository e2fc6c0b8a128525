use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptms::calib::{fit_unsupervised, write_table, TargetRatingStats};
use adaptms::config::RunConfig;
use adaptms::data::{generate_corpus, parse_corpus, shift_diagnostics, write_corpus, Corpus};
use adaptms::eval::{hyperparameter_search, prepare, Benchmark, EvalReport, Prepared, SearchSpace, Section, Variant};
use adaptms::model::{predict_latent, train, Dataset, Snapshot, TrainSets};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

const CORPUS_FILE: &str = "corpus.tsv";
const EMBED_CACHE_FILE: &str = "embeddings.cache";
const SNAPSHOT_FILE: &str = "model.snapshot";

#[derive(Parser)]
#[command(name = "adaptms", version, about = "Cross-platform satisfaction regression benchmark")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use this single seed for training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `io.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the corpus and print its shift diagnostics.
    Generate,
    /// Train the adaptive model on the configured sources and calibrate it
    /// to the target.
    Train,
    /// Run the configured evaluation sections and write reports.
    Evaluate,
    /// λ sensitivity sweep plus random hyperparameter search.
    Sweep {
        /// Trials per variant.
        #[arg(long, default_value_t = 20)]
        budget: usize,
    },
    /// Component ablations.
    Ablate,
    /// Print the fully resolved default configuration.
    PrintDefaultConfig,
}

/// Validation failures exit with this code; other failures with 1.
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<adaptms::Error>(), Some(adaptms::Error::Config { .. })));
            ExitCode::from(if config_error { EXIT_CONFIG } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.protocol.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.io.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::PrintDefaultConfig = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let config = load_config(cli)?;
    let out = config.io.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let say = |text: &str| {
        if !cli.quiet {
            println!("{text}");
        }
    };
    match &cli.command {
        Command::Generate => {
            let corpus = generate_corpus(&config.generate.platforms, config.generate.n_per_platform, config.generate.seed)?;
            let path = config.io.corpus.clone().unwrap_or_else(|| out.join(CORPUS_FILE));
            write(&path, write_corpus(&corpus))?;
            say(&format!("config {}\ncorpus {}", config.fingerprint(), corpus.fingerprint()));
            say(&shift_diagnostics(&corpus)?.to_string());
        }
        Command::Train => cmd_train(&config, &out, &say)?,
        Command::Evaluate => {
            check_snapshot(&config, &out)?;
            let sections: Vec<Section> = config
                .protocol
                .sections
                .iter()
                .copied()
                .filter(|s| !matches!(s, Section::LambdaSweep | Section::Ablation))
                .collect();
            let report = benchmark(&config, &out, sections)?;
            write_report(&out, "report", &report)?;
            say(&report.render());
        }
        Command::Sweep { budget } => {
            let prepared = load_prepared(&config, &out)?;
            let report = run_sections(&config, &prepared, vec![Section::LambdaSweep])?;
            write_report(&out, "sweep", &report)?;
            say(&report.render());
            let (sources, target, _) = config.protocol.resolve(&config.generate.platforms)?;
            let transfer = adaptms::eval::Transfer {
                label: String::new(),
                sources,
                target,
            };
            let seed = config.protocol.seeds[0];
            let space = SearchSpace::default();
            let mut results = Vec::new();
            for variant in [Variant::SourceOnly, Variant::PoolNoadapt, Variant::DannOnly, Variant::Adaptms] {
                let r = hyperparameter_search(&prepared, &transfer, variant, &config.train, &space, *budget, seed)?;
                say(&format!(
                    "{:<14} best val RMSE {:.4}: lr {} dropout {} hidden {} lambda {}",
                    variant.name(),
                    r.best_val_rmse,
                    r.best.lr,
                    r.best.dropout_rate,
                    r.best.fusion_hidden,
                    r.best.lambda
                ));
                results.push(r);
            }
            let doc = serde_json::json!({ "config": config.fingerprint(), "budget": budget, "results": results });
            write(&out.join("search.json"), serde_json::to_string_pretty(&doc)?)?;
        }
        Command::Ablate => {
            let report = benchmark(&config, &out, vec![Section::Ablation])?;
            write_report(&out, "ablation", &report)?;
            say(&report.render());
        }
        Command::PrintDefaultConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Reads the configured corpus (or the one in `out`), or generates it, and
/// checks it against the `generate` table.
fn load_corpus(config: &RunConfig, out: &Path) -> Result<Corpus> {
    let g = &config.generate;
    let path = config.io.corpus.clone().unwrap_or_else(|| out.join(CORPUS_FILE));
    if config.io.corpus.is_none() && !path.exists() {
        return Ok(generate_corpus(&g.platforms, g.n_per_platform, g.seed)?);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let corpus = parse_corpus(&text)?;
    let sizes_match = corpus.platform_ranges().iter().all(|r| r.len() == g.n_per_platform);
    if corpus.seed != g.seed || corpus.specs != g.platforms || !sizes_match {
        bail!(
            "{} was generated with a different configuration (seed {}, specs {}); regenerate it or fix [generate]",
            path.display(),
            corpus.seed,
            corpus.spec_fingerprint()
        );
    }
    Ok(corpus)
}

fn load_prepared(config: &RunConfig, out: &Path) -> Result<Prepared> {
    let corpus = load_corpus(config, out)?;
    let cache = config.io.embedding_cache.clone().unwrap_or_else(|| out.join(EMBED_CACHE_FILE));
    Ok(prepare(corpus, &config.embed, Some(&cache))?)
}

fn run_sections(config: &RunConfig, prepared: &Prepared, sections: Vec<Section>) -> Result<EvalReport> {
    let protocol = adaptms::eval::ProtocolConfig {
        sections,
        ..config.protocol.clone()
    };
    let mut bench = Benchmark::new(prepared, config.train.clone(), protocol, config.fingerprint())?;
    bench.run()?;
    let hygiene = bench.hygiene();
    if !hygiene.is_clean() {
        bail!("target test instances leaked into fitting sets: {:?}", hygiene.overlaps);
    }
    if let Some(a) = bench.audits().iter().find(|a| !a.ok) {
        bail!("audit failed for seed {}: {}", a.seed, a.what);
    }
    Ok(bench.into_report())
}

fn benchmark(config: &RunConfig, out: &Path, sections: Vec<Section>) -> Result<EvalReport> {
    let prepared = load_prepared(config, out)?;
    run_sections(config, &prepared, sections)
}

fn write_report(out: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write(&out.join(format!("{stem}.csv")), report.to_csv())?;
    write(&out.join(format!("{stem}.json")), report.to_json())?;
    if !report.alignment.is_empty() {
        write(&out.join(format!("{stem}_alignment.csv")), report.alignment_csv())?;
    }
    Ok(())
}

/// A snapshot left in `out` by an earlier stage must come from the same
/// configuration.
fn check_snapshot(config: &RunConfig, out: &Path) -> Result<()> {
    let path = out.join(SNAPSHOT_FILE);
    if path.exists() {
        let snapshot = Snapshot::load(&path)?;
        if snapshot.config_fingerprint != config.fingerprint() {
            bail!(
                "{} was trained under config {}, current config is {}",
                path.display(),
                snapshot.config_fingerprint,
                config.fingerprint()
            );
        }
    }
    Ok(())
}

fn cmd_train(config: &RunConfig, out: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let prepared = load_prepared(config, out)?;
    let (sources, target, _) = config.protocol.resolve(&config.generate.platforms)?;
    let data = Dataset::new(&prepared.imputed, &prepared.embeddings, &prepared.imputation)?;
    let rows = |p: usize, f: fn(&adaptms::data::PlatformSplit) -> std::ops::Range<usize>| f(&prepared.splits[p]);
    let sets = TrainSets {
        source_train: sources.iter().flat_map(|&p| rows(p, |s| s.train.clone())).collect(),
        source_val: sources.iter().flat_map(|&p| rows(p, |s| s.val.clone())).collect(),
        target_train: rows(target, |s| s.train.clone()).collect(),
    };
    let (mut params, log) = train(&data, &sets, &config.train)?;
    let arch = config.train.architecture();
    let s = predict_latent(&params, &data.batch(&sets.target_train), arch)?;
    let stats = TargetRatingStats::from_labels(&data.labels_of(&sets.target_train))?;
    let (a, b) = fit_unsupervised(&s, &stats)?;
    params.calib.set_pair(target, a, b)?;
    let fingerprint = config.fingerprint();
    write(&out.join("calibration.tsv"), write_table(&params.calib, &fingerprint))?;
    let doc = serde_json::json!({ "config": fingerprint, "log": log });
    write(&out.join("train_log.json"), serde_json::to_string_pretty(&doc)?)?;
    Snapshot {
        config_fingerprint: fingerprint,
        params,
    }
    .save(&out.join(SNAPSHOT_FILE))?;
    say(&format!(
        "trained {} epochs, best epoch {} with source validation RMSE {:.4}; target calibration a={a:.4} b={b:.4}",
        log.epochs.len() - 1,
        log.best_epoch,
        log.best_val_rmse()
    ));
    Ok(())
}
