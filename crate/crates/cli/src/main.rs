use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use slu_augment::corpus::{
    corpus_stats, load_corpus, load_ontology, sample_split, write_corpus_file, CorpusError, Fraction, SplitSpec,
};
use slu_augment::dialogue::{validate, Ontology, Severity};
use slu_augment::genbackend::{serve, BackendSpec, FixtureTable, GenError, ENV_SAMPLES};
use slu_augment::metrics::{EvalReport, MetricsError};
use slu_augment::pipeline::{run_matrix, Inputs, PipelineError, RunConfig, Scenario};
use slu_augment::toy::{toy_domain, TOY_SEED};

#[derive(Parser)]
#[command(name = "augment", version, about = "Dialogue-act driven data augmentation for slot filling")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario x seed matrix and write reports.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only this scenario (repeatable).
        #[arg(long = "scenario")]
        scenarios: Vec<Scenario>,
        /// Only this seed (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        backend: Option<BackendSpec>,
        /// Run cells and stages on one thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Check a corpus file, optionally against an ontology.
    Validate {
        corpus: PathBuf,
        #[arg(long)]
        ontology: Option<PathBuf>,
    },
    /// Score predicted tags and intents against gold.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Also report token-level slot F1.
        #[arg(long)]
        token_level: bool,
        /// Human-readable table instead of TSV.
        #[arg(long)]
        table: bool,
    },
    /// Counts and the slot value inventory of a corpus.
    Stats {
        corpus: PathBuf,
        /// Also list every slot value with its count.
        #[arg(long)]
        values: bool,
    },
    /// Draw a training split and a dev split from a corpus.
    Split {
        corpus: PathBuf,
        /// Training fraction, e.g. `1/40` or `0.1`.
        #[arg(long)]
        fraction: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        dev_size: usize,
        /// Sample within each intent.
        #[arg(long)]
        stratified: bool,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        dev_out: PathBuf,
    },
    /// Write the synthetic toy domain (train, test, ontology) to a directory.
    ToyDomain {
        dir: PathBuf,
        #[arg(long, default_value_t = TOY_SEED)]
        seed: u64,
    },
    /// Serve the backend protocol on stdin/stdout, for testing.
    Stub {
        #[command(subcommand)]
        kind: StubKind,
    },
}

#[derive(Subcommand)]
enum StubKind {
    /// Answer every request with copies of its payload.
    Echo,
    /// Answer from a recorded fixture file.
    Fixture { path: PathBuf },
}

/// Decimal fractions are read exactly: `0.025` is `25/1000`.
fn parse_fraction(s: &str) -> Result<Fraction> {
    if let Some((int, frac)) = s.trim().split_once('.') {
        let digits = format!("{int}{frac}");
        let num: u64 = digits.parse().with_context(|| format!("bad fraction {s:?}"))?;
        let den = 10u64
            .checked_pow(frac.len() as u32)
            .with_context(|| format!("bad fraction {s:?}"))?;
        return Ok(Fraction::new(num, den)?);
    }
    Ok(s.parse()?)
}

/// Loads a corpus, naming the file in format errors (I/O errors already do).
fn corpus_at(path: &Path) -> Result<slu_augment::dialogue::Corpus> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::Io { .. } => anyhow::Error::new(e),
        e => anyhow::Error::new(e).context(path.display().to_string()),
    })
}

fn run(
    config: Option<&Path>,
    scenarios: Vec<Scenario>,
    seeds: Vec<u64>,
    backend: Option<BackendSpec>,
    sequential: bool,
    out: Option<&Path>,
    print_config: bool,
) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !scenarios.is_empty() {
        cfg.scenarios = scenarios;
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    if let Some(b) = backend {
        cfg.backend = b;
    }
    if sequential {
        cfg.parallel = false;
    }
    cfg.check()?;
    if print_config {
        print!("{}", cfg.to_text());
        return Ok(ExitCode::SUCCESS);
    }
    let out = out.expect("clap requires --out");
    let inputs = Inputs::load(&cfg)?;
    let matrix = run_matrix(&inputs, &cfg);
    matrix
        .write(out)
        .with_context(|| format!("writing results to {}", out.display()))?;
    print!("{}", matrix.summary());
    match matrix.first_error() {
        Some(e) => {
            log::error!("at least one cell failed; first failure: {e}");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn validate_cmd(corpus: &Path, ontology: Option<&Path>) -> Result<ExitCode> {
    let corpus = corpus_at(corpus)?;
    let onto = match ontology {
        Some(p) => load_ontology(p)?,
        None => Ontology::from_corpus(&corpus),
    };
    let violations = validate(&corpus, &onto);
    let mut stdout = BufWriter::new(io::stdout().lock());
    for v in &violations {
        writeln!(stdout, "{v}")?;
    }
    stdout.flush()?;
    let errors = violations.iter().filter(|v| v.severity == Severity::Error).count();
    if errors > 0 {
        eprintln!("{errors} error(s)");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(gold: &Path, pred: &Path, token_level: bool, table: bool) -> Result<()> {
    let gold_c = corpus_at(gold)?;
    let pred_c = corpus_at(pred)?;
    let (g, p) = (&gold_c.paired, &pred_c.paired);
    if g.len() != p.len() {
        bail!(MetricsError::ArityMismatch(format!(
            "{} gold examples but {} predictions",
            g.len(),
            p.len()
        )));
    }
    if let Some(i) = (0..g.len()).find(|&i| g[i].tokens() != p[i].tokens()) {
        bail!(MetricsError::ArityMismatch(format!(
            "example {}: prediction tokens differ from gold ({:?} vs {:?})",
            i + 1,
            p[i].utterance().text(),
            g[i].utterance().text()
        )));
    }
    let tags: Vec<_> = p.iter().map(|e| e.tags().to_vec()).collect();
    let intents: Vec<String> = p.iter().map(|e| e.intent().to_string()).collect();
    let report = EvalReport::compute(g, &tags, &intents)?;
    if table {
        print!("{}", report.to_table());
    } else {
        print!("{}", report.to_tsv(token_level));
    }
    Ok(())
}

fn stats_cmd(corpus: &Path, values: bool) -> Result<()> {
    let corpus = corpus_at(corpus)?;
    let stats = corpus_stats(&corpus);
    print!("{}", stats.to_tsv());
    let inv = &stats.value_inventory;
    for slot in inv.slots() {
        println!("slot\t{slot}\t{}\t{}", inv.values(slot).count(), inv.total(slot));
        if values {
            for (v, n) in inv.values(slot) {
                println!("value\t{slot}\t{v}\t{n}");
            }
        }
    }
    Ok(())
}

fn split_cmd(corpus_path: &Path, spec: SplitSpec, train_out: &Path, dev_out: &Path) -> Result<()> {
    let corpus = corpus_at(corpus_path)?;
    let (train, dev) = sample_split(&corpus, &spec)?;
    write_corpus_file(train_out, &train)?;
    write_corpus_file(dev_out, &dev)?;
    eprintln!("{} training, {} dev examples", train.paired.len(), dev.paired.len());
    Ok(())
}

fn stub(kind: StubKind) -> Result<()> {
    let samples: usize = match std::env::var(ENV_SAMPLES) {
        Ok(v) => v.parse().with_context(|| format!("{ENV_SAMPLES}={v}"))?,
        Err(_) => 1,
    };
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match kind {
        StubKind::Echo => serve(stdin, stdout, |_, payload| Ok(vec![payload.to_string(); samples]))?,
        StubKind::Fixture { path } => {
            let table = FixtureTable::load(&path)?;
            serve(stdin, stdout, |dir, payload| {
                let got = table.lookup(dir, payload);
                Ok(got[..got.len().min(samples)].to_vec())
            })?
        }
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            scenarios,
            seeds,
            backend,
            sequential,
            out,
            print_config,
        } => run(
            config.as_deref(),
            scenarios,
            seeds,
            backend,
            sequential,
            out.as_deref(),
            print_config,
        ),
        Command::Validate { corpus, ontology } => validate_cmd(&corpus, ontology.as_deref()),
        Command::Eval {
            gold,
            pred,
            token_level,
            table,
        } => eval_cmd(&gold, &pred, token_level, table).map(|_| ExitCode::SUCCESS),
        Command::Stats { corpus, values } => stats_cmd(&corpus, values).map(|_| ExitCode::SUCCESS),
        Command::Split {
            corpus,
            fraction,
            seed,
            dev_size,
            stratified,
            train_out,
            dev_out,
        } => {
            let spec = SplitSpec {
                fraction: parse_fraction(&fraction).map_err(|e| PipelineError::Config(e.to_string()))?,
                seed,
                dev_size,
                stratified,
            };
            split_cmd(&corpus, spec, &train_out, &dev_out).map(|_| ExitCode::SUCCESS)
        }
        Command::ToyDomain { dir, seed } => {
            toy_domain(seed).write(&dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stub { kind } => stub(kind).map(|_| ExitCode::SUCCESS),
    }
}

/// 1 for configuration problems, 2 for data problems, 3 for backend failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.exit_code() as u8;
        }
        if let Some(e) = cause.downcast_ref::<GenError>() {
            return match e {
                GenError::BadSpec(_) | GenError::BadParams(_) => 1,
                _ => 3,
            };
        }
        if cause.downcast_ref::<CorpusError>().is_some()
            || cause.downcast_ref::<MetricsError>().is_some()
        {
            return 2;
        }
    }
    2
}

/// The error chain joined with `: `, skipping causes whose text the previous
/// message already ends with.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
