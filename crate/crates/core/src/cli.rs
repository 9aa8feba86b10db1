//! The `transval` command-line interface.
//!
//! Exit codes: 0 sound, 1 unsound, 2 unknown, 64 usage error, 65 bad input
//! data, 66 missing input, 74 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::checker::{check_pair, CellInit, CheckConfig, ReasonSet, UnsoundReason, Verdict};
use crate::dataset::{
    dedupe, emit_finetune, label_corpus, load_corpus, read_records, sample, write_records,
    CorpusError, DatasetRecord, Ratio, SampleConfig, SRC_SUFFIX,
};
use crate::fuzzer::{fuzz, FuzzConfig, FuzzVerdict};
use crate::ir::{parse_pair, ParseError, TransformationPair};
use crate::pipeline::{
    finalize, read_report, write_report, Final, FinalCause, Pipeline, PipelineConfig,
    PipelineReport, Routed, Stage, Timings, UnsoundProvenance,
};
use crate::predictor::{BackendConfig, Predictor, RemoteConfig};

pub const EXIT_SOUND: i32 = 0;
pub const EXIT_UNSOUND: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATAERR: i32 = 65;
pub const EXIT_NOINPUT: i32 = 66;
pub const EXIT_IOERR: i32 = 74;

#[derive(Debug, Parser)]
#[command(
    name = "transval",
    version,
    about = "Translation validation for a small LLVM-style SSA IR"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide refinement by bounded enumeration
    Check {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Ask a prediction backend
    Predict {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Search for a counterexample for the given reasons
    Fuzz {
        #[command(flatten)]
        pair: PairArgs,
        /// return_value or memory; may be repeated
        #[arg(long = "reason", required = true, value_parser = parse_reason)]
        reasons: Vec<UnsoundReason>,
        #[command(flatten)]
        fuzz: FuzzArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run checker, predictor and fuzzer in sequence
    Validate {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        fuzz: FuzzArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Re-run the counterexample stored in a report
    Replay {
        src: PathBuf,
        tgt: PathBuf,
        report: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        fuel: u64,
        #[arg(long, default_value_t = 2)]
        undef_budget: u32,
    },
    /// Validate every pair of a corpus directory or manifest
    Batch {
        corpus: PathBuf,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        #[command(flatten)]
        check: CheckArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        fuzz: FuzzArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Build fine-tuning corpora
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Label a corpus with the checker; undecided pairs are skipped
    Label {
        corpus: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "")]
        source_tag: String,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Remove duplicates and identical sound pairs
    Dedupe {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Hold out a test split and sample a training set at a ratio
    Sample {
        input: PathBuf,
        #[arg(long, default_value = "1:1")]
        ratio: Ratio,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        test_count: usize,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Write chat-format fine-tuning lines
    Emit {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Source function file
    src: PathBuf,
    /// Target function file
    tgt: PathBuf,
    /// Pair id; defaults to the source file name without `.src.mir.ll`
    #[arg(long)]
    id: Option<String>,
    /// Report path; defaults to `<id>.report.json`
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 20)]
    max_enum_bits: u32,
    #[arg(long, default_value_t = 10_000)]
    fuel: u64,
    #[arg(long, default_value_t = 2)]
    undef_budget: u32,
    #[arg(long, default_value_t = 2)]
    mem_cells: u32,
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
}

impl CheckArgs {
    fn config(&self) -> CheckConfig {
        CheckConfig {
            max_enum_bits: self.max_enum_bits,
            fuel: self.fuel,
            undef_budget: self.undef_budget,
            mem_cells_per_ptr_param: self.mem_cells,
            mem_init_domain: vec![CellInit::Zero, CellInit::One, CellInit::AllOnes],
            timeout_ms: self.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Remote,
    Heuristic,
    Oracle,
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Remote)]
    backend: BackendKind,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    /// Environment variable holding the API key
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 60_000)]
    request_timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Oracle backend: probability of a flipped answer
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
}

impl BackendArgs {
    fn config(&self, seed: u64) -> BackendConfig {
        match self.backend {
            BackendKind::Remote => BackendConfig::Remote(RemoteConfig {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                api_key_env: self.api_key_env.clone(),
                request_timeout_ms: self.request_timeout_ms,
                max_retries: self.max_retries,
                ..RemoteConfig::default()
            }),
            BackendKind::Heuristic => BackendConfig::Heuristic,
            BackendKind::Oracle => BackendConfig::Oracle {
                noise_rate: self.noise_rate,
                seed,
            },
        }
    }
}

#[derive(Debug, Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 100_000)]
    iterations: u64,
    #[arg(long, default_value_t = 1_000_000)]
    fuzz_fuel: u64,
    #[arg(long, default_value_t = 60_000)]
    time_budget_ms: u64,
}

impl FuzzArgs {
    fn config(&self, seed: u64) -> FuzzConfig {
        FuzzConfig {
            iterations: self.iterations,
            seed,
            fuel: self.fuzz_fuel,
            time_budget_ms: self.time_budget_ms,
            ..FuzzConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_reason(s: &str) -> Result<UnsoundReason, String> {
    s.parse()
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> CliError {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> CliError {
        let code = if e.kind() == io::ErrorKind::NotFound {
            EXIT_NOINPUT
        } else {
            EXIT_IOERR
        };
        CliError::new(code, format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> CliError {
        match e {
            CorpusError::Io { path, source } => CliError::io(&path, source),
            other => CliError::new(EXIT_DATAERR, other.to_string()),
        }
    }
}

type CliResult = Result<i32, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_SOUND
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("transval: {}", e.message);
            e.code
        }
    }
}

fn pair_id(args: &PairArgs) -> String {
    args.id.clone().unwrap_or_else(|| {
        let name = args
            .src
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("pair");
        match name.strip_suffix(SRC_SUFFIX) {
            Some(id) => id.to_string(),
            None => Path::new(name)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or(name)
                .to_string(),
        }
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_pair(src: &Path, tgt: &Path, id: &str) -> Result<TransformationPair, CliError> {
    let s = read_text(src)?;
    let t = read_text(tgt)?;
    parse_pair(&s, &t, id).map_err(|e| {
        let which = match &e {
            ParseError::SignatureMismatch { .. } => String::new(),
            _ => format!(" ({} / {})", src.display(), tgt.display()),
        };
        CliError::new(EXIT_DATAERR, format!("{id}{which}: {e}"))
    })
}

fn emit_report(report: &PipelineReport, args: &PairArgs) -> CliResult {
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.report.json", report.pair_id)));
    write_report(report, &path).map_err(|e| CliError::io(&path, e))?;
    println!(
        "{}: {} (report: {})",
        report.pair_id,
        describe(&report.final_state),
        path.display()
    );
    Ok(report.final_state.exit_code())
}

fn reason_list(reasons: &ReasonSet) -> String {
    reasons
        .iter()
        .map(|r| r.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// snake_case serde name of a unit enum variant.
fn serde_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

fn describe(f: &Final) -> String {
    match f {
        Final::Sound { provenance } => format!("sound [{}]", serde_name(provenance)),
        Final::Unsound {
            reasons,
            provenance,
        } => {
            format!(
                "unsound ({}) [{}]",
                reason_list(reasons),
                serde_name(provenance)
            )
        }
        Final::Unknown { cause } => format!("unknown ({})", serde_name(cause)),
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

fn output<F>(path: Option<&Path>, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match path {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?);
            write(&mut f)
                .and_then(|_| f.flush())
                .map_err(|e| CliError::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match write(&mut lock) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                    Err(CliError::new(EXIT_IOERR, format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    Ok(read_records(path)?)
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Check { pair, check } => {
            let cfg = check.config();
            cfg.validate()
                .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
            let p = load_pair(&pair.src, &pair.tgt, &pair_id(&pair))?;
            let start = Instant::now();
            let verdict = check_pair(&p, &cfg);
            let routed = match &verdict {
                Verdict::Unknown { cause } => Routed {
                    trace: vec![Stage::Reported],
                    final_state: Final::Unknown {
                        cause: (*cause).into(),
                    },
                    counterexample: None,
                },
                decided => finalize(decided, None, None),
            };
            let elapsed = ms(start);
            let timings = Timings {
                checker_ms: Some(elapsed),
                total_ms: elapsed,
                ..Timings::default()
            };
            emit_report(
                &PipelineReport::new(&p, routed, Some(&verdict), None, None, timings),
                &pair,
            )
        }
        Command::Predict {
            pair,
            backend,
            seed,
        } => {
            let p = load_pair(&pair.src, &pair.tgt, &pair_id(&pair))?;
            let start = Instant::now();
            let prediction =
                Predictor::new(backend.config(seed.seed)).and_then(|pr| pr.predict(&p));
            if let Err(e) = &prediction {
                eprintln!("transval: predictor unavailable: {e}");
            }
            let final_state = match &prediction {
                Ok(pr) if pr.status == crate::predictor::Label::Sound => Final::Sound {
                    provenance: crate::pipeline::SoundProvenance::Predicted,
                },
                Ok(pr) => Final::Unsound {
                    reasons: pr.reasons.clone(),
                    provenance: UnsoundProvenance::PredictedUnconfirmed,
                },
                Err(_) => Final::Unknown {
                    cause: FinalCause::PredictorUnavailable,
                },
            };
            let trace = match &prediction {
                Ok(_) => vec![Stage::RoutedToPredictor, Stage::Predicted, Stage::Reported],
                Err(_) => vec![Stage::RoutedToPredictor, Stage::Reported],
            };
            let elapsed = ms(start);
            let timings = Timings {
                predictor_ms: Some(elapsed),
                total_ms: elapsed,
                ..Timings::default()
            };
            let routed = Routed {
                trace,
                final_state,
                counterexample: None,
            };
            emit_report(
                &PipelineReport::new(&p, routed, None, Some(&prediction), None, timings),
                &pair,
            )
        }
        Command::Fuzz {
            pair,
            reasons,
            fuzz: fuzz_args,
            seed,
        } => {
            let p = load_pair(&pair.src, &pair.tgt, &pair_id(&pair))?;
            let reasons: ReasonSet = reasons.into_iter().collect();
            let start = Instant::now();
            let report = fuzz(&p, &reasons, &fuzz_args.config(seed.seed))
                .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
            let (trace_end, final_state, ce) = match &report.verdict {
                FuzzVerdict::CounterexampleFound {
                    counterexample,
                    reasons,
                    ..
                } => (
                    Stage::FuzzerConfirmed,
                    Final::Unsound {
                        reasons: reasons.clone(),
                        provenance: UnsoundProvenance::FuzzConfirmed,
                    },
                    Some(counterexample.clone()),
                ),
                FuzzVerdict::NoneFound { .. } => (
                    Stage::FuzzerUnconfirmed,
                    Final::Unknown {
                        cause: FinalCause::NoCounterexampleFound,
                    },
                    None,
                ),
            };
            let elapsed = ms(start);
            let timings = Timings {
                fuzzer_ms: Some(elapsed),
                total_ms: elapsed,
                ..Timings::default()
            };
            let routed = Routed {
                trace: vec![Stage::RoutedToFuzzer, trace_end, Stage::Reported],
                final_state,
                counterexample: ce,
            };
            emit_report(
                &PipelineReport::new(&p, routed, None, None, Some(&report), timings),
                &pair,
            )
        }
        Command::Validate {
            pair,
            check,
            backend,
            fuzz: fuzz_args,
            seed,
        } => {
            let cfg = pipeline_config(&check, &backend, &fuzz_args, seed.seed)?;
            let p = load_pair(&pair.src, &pair.tgt, &pair_id(&pair))?;
            let report = Pipeline::new(cfg).validate(&p);
            if let Some(err) = report.prediction.as_ref().and_then(|s| s.error.as_ref()) {
                eprintln!("transval: predictor unavailable: {err}");
            }
            emit_report(&report, &pair)
        }
        Command::Replay {
            src,
            tgt,
            report,
            fuel,
            undef_budget,
        } => {
            let r = read_report(&report).map_err(|e| match e.kind() {
                io::ErrorKind::InvalidData => {
                    CliError::new(EXIT_DATAERR, format!("{}: {e}", report.display()))
                }
                _ => CliError::io(&report, e),
            })?;
            let p = load_pair(&src, &tgt, &r.pair_id)?;
            let doc = r.counterexample.ok_or_else(|| {
                CliError::new(
                    EXIT_DATAERR,
                    format!("{}: report has no counterexample", report.display()),
                )
            })?;
            if doc.to_counterexample().reproduces(&p, fuel, undef_budget) {
                println!("{}: counterexample reproduced", r.pair_id);
                Ok(EXIT_UNSOUND)
            } else {
                println!("{}: counterexample did not reproduce", r.pair_id);
                Ok(EXIT_UNKNOWN)
            }
        }
        Command::Batch {
            corpus,
            out_dir,
            check,
            backend,
            fuzz: fuzz_args,
            seed,
        } => {
            let cfg = pipeline_config(&check, &backend, &fuzz_args, seed.seed)?;
            let pairs = load_corpus(&corpus)?;
            fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            let pipeline = Pipeline::new(cfg);
            let reports: Vec<PipelineReport> =
                pairs.par_iter().map(|p| pipeline.validate(p)).collect();
            let mut code = EXIT_SOUND;
            for r in &reports {
                let path = out_dir.join(format!("{}.report.json", r.pair_id));
                write_report(r, &path).map_err(|e| CliError::io(&path, e))?;
                println!("{}: {}", r.pair_id, describe(&r.final_state));
                code = match (code, r.final_state.exit_code()) {
                    (_, EXIT_UNSOUND) | (EXIT_UNSOUND, _) => EXIT_UNSOUND,
                    (_, EXIT_UNKNOWN) => EXIT_UNKNOWN,
                    (c, _) => c,
                };
            }
            Ok(code)
        }
        Command::Dataset(cmd) => run_dataset(cmd),
    }
}

fn pipeline_config(
    check: &CheckArgs,
    backend: &BackendArgs,
    fuzz: &FuzzArgs,
    seed: u64,
) -> Result<PipelineConfig, CliError> {
    let cfg = PipelineConfig {
        check: check.config(),
        backend: backend.config(seed),
        fuzz: fuzz.config(seed),
        report_path: None,
    };
    cfg.check
        .validate()
        .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
    if !(0.0..=1.0).contains(&backend.noise_rate) {
        return Err(CliError::new(
            EXIT_USAGE,
            "--noise-rate must be within [0, 1]",
        ));
    }
    Ok(cfg)
}

fn run_dataset(cmd: DatasetCommand) -> CliResult {
    match cmd {
        DatasetCommand::Label {
            corpus,
            output: out,
            source_tag,
            check,
        } => {
            let cfg = check.config();
            cfg.validate()
                .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))?;
            let pairs = load_corpus(&corpus)?;
            let labeled = label_corpus(&pairs, &cfg, &source_tag);
            output(out.as_deref(), |w| write_records(&labeled.records, w))?;
            for (id, cause) in &labeled.skipped {
                eprintln!("skipped {id}: {cause}");
            }
            eprintln!(
                "labeled {}, skipped {}",
                labeled.records.len(),
                labeled.skipped.len()
            );
            Ok(EXIT_SOUND)
        }
        DatasetCommand::Dedupe { input, output: out } => {
            let records = read_dataset(&input)?;
            let before = records.len();
            let kept = dedupe(records);
            output(out.as_deref(), |w| write_records(&kept, w))?;
            eprintln!("kept {} of {before}", kept.len());
            Ok(EXIT_SOUND)
        }
        DatasetCommand::Sample {
            input,
            ratio,
            seed,
            test_count,
            train_out,
            test_out,
        } => {
            let records = read_dataset(&input)?;
            let split = sample(
                &records,
                &SampleConfig {
                    ratio,
                    seed,
                    test_count,
                },
            )
            .map_err(|e| CliError::new(EXIT_DATAERR, e.to_string()))?;
            output(Some(&train_out), |w| write_records(&split.train, w))?;
            output(Some(&test_out), |w| write_records(&split.test, w))?;
            eprintln!("train {}, test {}", split.train.len(), split.test.len());
            Ok(EXIT_SOUND)
        }
        DatasetCommand::Emit { input, output: out } => {
            let records = read_dataset(&input)?;
            output(out.as_deref(), |w| emit_finetune(&records, w))?;
            Ok(EXIT_SOUND)
        }
    }
}
