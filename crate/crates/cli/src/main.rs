use std::path::PathBuf;
use std::process::ExitCode;

use ancilla_core::config::{validate_config, ExperimentConfig};
use ancilla_core::experiment::run_experiment;
use ancilla_core::inference::qe_analytic_large_mu;
use ancilla_core::presets::{self, PRESETS};
use clap::{Parser, Subcommand};

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

/// Photon-counting readout and heralded entanglement of ancilla-read qubits.
#[derive(Parser)]
#[command(name = "ancilla", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Overrides the output directory of the file.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the master seed of the file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a configuration file and print it with defaults applied.
    Validate { config: PathBuf },
    /// Shipped configuration files.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Large-coupling error probability at the given times.
    QeAnalytic {
        #[arg(long)]
        omega: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Times; repeat the flag or separate with commas.
        #[arg(long = "t", required = true, value_delimiter = ',', num_args = 1..)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        prior1: f64,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset file.
    Show { name: String },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    validate_config(&text).map_err(|e| {
        let lines: Vec<String> = e.errors.iter().map(|f| format!("{}: {}", path.display(), f.message)).collect();
        lines.join("\n")
    })
}

fn fail(code: u8, message: &str) -> ExitCode {
    eprintln!("{message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { config, output, seed } => {
            let mut c = match load(&config) {
                Ok(c) => c,
                Err(msg) => return fail(CONFIG_ERROR, &msg),
            };
            if let Some(o) = output {
                c.output = o;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            match run_experiment(&c) {
                Ok(summary) => {
                    for line in &summary.lines {
                        println!("{line}");
                    }
                    for f in &summary.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(RUNTIME_ERROR, &format!("error: {e}")),
            }
        }
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                print!("{}", ancilla_core::config::to_toml_string(&c));
                ExitCode::SUCCESS
            }
            Err(msg) => fail(CONFIG_ERROR, &msg),
        },
        Command::Presets { action: PresetAction::List } => {
            for p in PRESETS {
                println!("{:<16}{}", p.name, p.description());
            }
            ExitCode::SUCCESS
        }
        Command::Presets { action: PresetAction::Show { name } } => match presets::find(&name) {
            Some(p) => {
                print!("{}", p.text);
                ExitCode::SUCCESS
            }
            None => fail(CONFIG_ERROR, &format!("unknown preset `{name}`")),
        },
        Command::QeAnalytic { omega, gamma, times, prior1 } => {
            if !(gamma > 0.0) || !(omega >= 0.0) || !(prior1 > 0.0 && prior1 < 1.0) || times.iter().any(|t| *t < 0.0) {
                return fail(CONFIG_ERROR, "need omega >= 0, gamma > 0, 0 < prior1 < 1 and t >= 0");
            }
            println!("t,qe");
            for t in times {
                println!("{t},{}", qe_analytic_large_mu(t, omega, gamma, prior1));
            }
            ExitCode::SUCCESS
        }
    }
}
