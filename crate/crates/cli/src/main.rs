use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use monoqkd::ensemble::{
    all_local_ensemble, critical_ensemble_full, local_only_ensemble, pure_nonlocal_ensemble, EnsembleDocument,
};
use monoqkd::harness::{self, output_path, Adversary, RunSpec, RunStatus};

#[derive(Parser)]
#[command(name = "monoqkd", version, about = "Entanglement-based QKD against hidden-variable eavesdroppers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol and Eve's analysis, write a JSON report.
    ///
    /// Exit status: 0 completed, 3 aborted by parameter estimation, 2 configuration error.
    Run(Box<RunArgs>),
    /// Check every strategy and the weights of an ensemble file.
    ///
    /// Exit status: 0 valid, 1 violations found, 2 unreadable file.
    ValidateEnsemble {
        path: PathBuf,
    },
    /// Write one of the built-in ensembles as an ensemble file.
    ExportEnsemble {
        #[arg(value_enum)]
        name: BuiltIn,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltIn {
    Critical,
    #[value(name = "local_only", alias = "local-only")]
    LocalOnly,
    #[value(name = "all_local", alias = "all-local")]
    AllLocal,
    #[value(name = "pure_nonlocal", alias = "pure-nonlocal")]
    PureNonlocal,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdversaryKind {
    None,
    #[value(name = "local_only", alias = "local-only")]
    LocalOnly,
    Critical,
    Custom,
}

/// Flags override the values of `--config`.
#[derive(Args)]
struct RunArgs {
    /// Run specification file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_rounds: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Bits XORed into each key bit.
    #[arg(short = 'K', long)]
    key_length: Option<usize>,
    #[arg(long)]
    chsh_tolerance: Option<f64>,
    #[arg(long)]
    correlation_tolerance: Option<f64>,
    #[arg(long)]
    min_cell_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    adversary: Option<AdversaryKind>,
    /// Ensemble file for `--adversary custom`.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the first repetition's public transcript (JSON Lines).
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
}

impl RunArgs {
    fn into_spec(self) -> anyhow::Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::from_json_file(path)?,
            None => RunSpec::default(),
        };
        let p = &mut spec.protocol;
        macro_rules! set {
            ($($dst:expr => $src:expr),* $(,)?) => { $(if let Some(v) = $src { $dst = v; })* };
        }
        set! {
            p.n_rounds => self.n_rounds,
            p.test_fraction => self.test_fraction,
            p.key_length => self.key_length,
            p.chsh_tolerance => self.chsh_tolerance,
            p.correlation_tolerance => self.correlation_tolerance,
            p.min_cell_samples => self.min_cell_samples,
            p.seed => self.seed,
            spec.report => self.report,
            spec.repetitions => self.repetitions,
        }
        if self.transcript.is_some() {
            spec.transcript = self.transcript;
        }
        match (self.adversary, self.ensemble) {
            (Some(AdversaryKind::Custom), Some(path)) | (None, Some(path)) => spec.adversary = Adversary::Custom(path),
            (Some(AdversaryKind::Custom), None) => anyhow::bail!("--adversary custom needs --ensemble PATH"),
            (Some(_), Some(_)) => anyhow::bail!("--ensemble only goes with --adversary custom"),
            (Some(AdversaryKind::None), None) => spec.adversary = Adversary::None,
            (Some(AdversaryKind::LocalOnly), None) => spec.adversary = Adversary::LocalOnly,
            (Some(AdversaryKind::Critical), None) => spec.adversary = Adversary::Critical,
            (None, None) => {}
        }
        Ok(spec)
    }
}

fn run(args: RunArgs) -> anyhow::Result<RunStatus> {
    let spec = args.into_spec()?;
    let outcome = harness::run(&spec)?;
    let r = &outcome.report;
    println!("adversary {}  seed {}  repetitions {}", r.adversary, r.master_seed, r.repetitions);
    println!("completed {}  aborted {}", r.completed, r.aborted);
    if let Some(first) = r.runs.first() {
        println!("run 0: CHSH {:.4}  blocks {}  mismatches {}", first.chsh_estimate, first.n_blocks, first.key_mismatches);
        if let Some(sec) = &first.security {
            if let (Some(p), Some(pk)) = (sec.p_empirical, sec.p_block_empirical) {
                println!("run 0: Eve certain on {p:.4} of rounds (theory {:.4}), on {pk:.5} of blocks (theory {:.5})", sec.p_theory, sec.p_block_theory);
            }
            if let Some(g) = sec.eve_guess_rate {
                println!("run 0: Eve guesses {g:.4} of key bits");
            }
        }
    }
    println!("report: {}", outcome.report_path.display());
    if let Some(t) = &outcome.transcript_path {
        println!("transcript: {}", t.display());
    }
    Ok(outcome.status)
}

fn validate(path: PathBuf) -> anyhow::Result<ExitCode> {
    let v = harness::validate_ensemble(&path)?;
    println!("{}", serde_json::to_string_pretty(&v)?);
    for m in v.members.iter().filter(|m| !m.violations.is_empty()) {
        for x in &m.violations {
            eprintln!("{}: {}", m.lambda_id, x);
        }
    }
    for p in &v.problems {
        eprintln!("{p}");
    }
    Ok(if v.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn export(name: BuiltIn, out: Option<PathBuf>) -> anyhow::Result<()> {
    let ensemble = match name {
        BuiltIn::Critical => critical_ensemble_full(),
        BuiltIn::LocalOnly => local_only_ensemble(),
        BuiltIn::AllLocal => all_local_ensemble(),
        BuiltIn::PureNonlocal => pure_nonlocal_ensemble(),
    };
    let text = EnsembleDocument::from_ensemble(&ensemble).to_json();
    match out {
        Some(path) => {
            let path = output_path(&path);
            std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run(args) => run(*args).map(|s| ExitCode::from(s.exit_code() as u8)),
        Command::ValidateEnsemble { path } => validate(path),
        Command::ExportEnsemble { name, out } => export(name, out).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(RunStatus::ConfigurationError.exit_code() as u8)
    })
}
