use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use whitney::cli::{self, Command, Options, EXIT_ERROR};
use whitney::kuo::Mode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Parse,
    Filtrate,
    CheckPair,
    KuoTrace,
    Refine,
    Stratify,
    Certify,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Command {
        match c {
            Cmd::Parse => Command::Parse,
            Cmd::Filtrate => Command::Filtrate,
            Cmd::CheckPair => Command::CheckPair,
            Cmd::KuoTrace => Command::KuoTrace,
            Cmd::Refine => Command::Refine,
            Cmd::Stratify => Command::Stratify,
            Cmd::Certify => Command::Certify,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    A,
    B,
}

/// Whitney (a)/(b) stratification engine.
///
/// Exit codes: 0 success or certified, 2 irregular or refuted,
/// 3 inconclusive or incomplete, 1 usage or input error.
#[derive(Debug, Parser)]
#[command(name = "whitstrat", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Problem file (JSON).
    problem: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_kuo: Option<f64>,
    /// Shell radii as `r0,gamma,n`.
    #[arg(long, value_parser = cli::parse_radii)]
    radii: Option<(f64, f64, usize)>,
    /// Probes per shell.
    #[arg(long)]
    shells_probes: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Directory for report.json and other artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one CSV per trace (kuo-trace).
    #[arg(long)]
    dump_traces: bool,
    /// Certificate to re-check (certify).
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Base point, e.g. `0,0,1`; may be repeated.
    #[arg(long, value_parser = cli::parse_point)]
    x: Vec<Vec<f64>>,
    /// Big stratum id.
    #[arg(long)]
    big: Option<String>,
    /// Small stratum id.
    #[arg(long)]
    small: Option<String>,
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn execute(args: Args) -> Result<i32, String> {
    let text = read(&args.problem)?;
    let certificate = args.certificate.as_ref().map(read).transpose()?;
    let opts = Options {
        mode: args.mode.map(|m| match m {
            ModeArg::A => Mode::A,
            ModeArg::B => Mode::B,
        }),
        seed: args.seed,
        tol_rank: args.tol_rank,
        tol_kuo: args.tol_kuo,
        radii: args.radii,
        shells_probes: args.shells_probes,
        max_depth: args.max_depth,
        dump_traces: args.dump_traces,
        certificate,
        x: args.x,
        big: args.big,
        small: args.small,
    };
    let input = args.problem.display().to_string();
    let outcome = cli::run(args.command.into(), &input, &text, &opts).map_err(|e| e.to_string())?;
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
            let write = |name: &str, body: &str| {
                let path = dir.join(name);
                std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
            };
            write("report.json", &outcome.report)?;
            for (name, body) in &outcome.artifacts {
                write(name, body)?;
            }
        }
        None => {
            print!("{}", outcome.report);
            if !outcome.artifacts.is_empty() {
                eprintln!("note: pass --out DIR to write {} artifact(s)", outcome.artifacts.len());
            }
        }
    }
    for line in &outcome.summary {
        eprintln!("{line}");
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    match execute(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
