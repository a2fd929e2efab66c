use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use negrep_core::data::{save_dataset, synth_dataset, SynthSpec};
use negrep_core::harness::suite::load_report;
use negrep_core::harness::{presets, run_suite, RunConfig};

#[derive(Parser)]
#[command(
    name = "negrep",
    about = "Continual-learning benchmark runner with generative negative replay",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a suite config and write metrics CSVs plus a JSON summary.
    Run {
        /// Path to a TOML config, or the name of a bundled preset.
        config: String,
        /// Directory that output_dir is resolved against.
        #[arg(long, default_value = ".")]
        base_dir: PathBuf,
    },
    /// Parse a config, build its streams, and check the scenario conditions.
    Validate {
        /// Path to a TOML config, or the name of a bundled preset.
        config: String,
    },
    /// Generate a synthetic dataset and write train/test splits.
    Synth {
        /// TOML file with the synthesis parameters.
        spec: PathBuf,
        /// Output stem; writes <stem>.train.ds and <stem>.test.ds.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Summarize a finished suite directory as a table.
    Report {
        /// Directory holding summary.json.
        dir: PathBuf,
    },
    /// List bundled presets.
    Presets,
}

fn load_config(arg: &str) -> Result<RunConfig> {
    if let Some(text) = presets::by_name(arg) {
        return RunConfig::from_toml(text).context("bundled preset failed to parse");
    }
    let path = PathBuf::from(arg);
    if !path.exists() {
        bail!(
            "'{arg}' is neither a config file nor a bundled preset (try `negrep presets`)"
        );
    }
    RunConfig::from_path(&path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, base_dir } => {
            let cfg = load_config(&config)?;
            let report = run_suite(&cfg, &base_dir)?;
            println!(
                "suite '{}' finished: {} run(s), {} seed(s), config {}",
                report.name,
                report.runs.len(),
                report.seeds.len(),
                &report.config_hash[..12]
            );
            for run in &report.runs {
                for p in &run.protocols {
                    println!(
                        "  {:<18} {:<16} avg {:.4} ± {:.4}   final {:.4} ± {:.4}",
                        run.name,
                        p.protocol.to_string(),
                        p.average_accuracy.mean,
                        p.average_accuracy.std,
                        p.final_accuracy.mean,
                        p.final_accuracy.std
                    );
                }
                for (seed, err) in &run.failed_seeds {
                    eprintln!("  {} seed {seed} FAILED: {err}", run.name);
                }
            }
            println!(
                "outputs under {}",
                base_dir.join(&cfg.output_dir).display()
            );
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let mut failures = 0;
            for &seed in &cfg.seeds {
                let (train, _) = cfg.materialize_dataset(seed)?;
                match cfg.materialize_stream(&train, seed) {
                    Ok(stream) => {
                        let report = negrep_core::data::validate_stream(&stream);
                        let status = if report.pass { "ok" } else { "FAIL" };
                        println!(
                            "seed {seed}: {} stream of {} experiences ... {status} ({})",
                            stream.scenario,
                            stream.num_experiences(),
                            report.detail
                        );
                        if !report.pass {
                            failures += 1;
                        }
                    }
                    Err(e) => {
                        println!("seed {seed}: stream construction failed: {e}");
                        failures += 1;
                    }
                }
            }
            if failures > 0 {
                bail!("{failures} seed(s) failed validation");
            }
            println!("config ok: {} run(s) validated", cfg.runs.len());
        }
        Command::Synth { spec, output } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = toml::from_str(&text).context("parsing synth spec")?;
            let (train, test) = synth_dataset(&spec)?;
            let train_path = output.with_extension("train.ds");
            let test_path = output.with_extension("test.ds");
            save_dataset(&train, &train_path)?;
            save_dataset(&test, &test_path)?;
            println!(
                "wrote {} ({} patterns) and {} ({} patterns)",
                train_path.display(),
                train.len(),
                test_path.display(),
                test.len()
            );
        }
        Command::Report { dir } => {
            let report = load_report(&dir)?;
            println!("suite '{}' (config {})", report.name, &report.config_hash[..12]);
            println!(
                "{:<18} {:<16} {:>20} {:>20}",
                "run", "protocol", "avg accuracy", "final accuracy"
            );
            for run in &report.runs {
                for p in &run.protocols {
                    println!(
                        "{:<18} {:<16} {:>12.4} ± {:.4} {:>12.4} ± {:.4}",
                        run.name,
                        p.protocol.to_string(),
                        p.average_accuracy.mean,
                        p.average_accuracy.std,
                        p.final_accuracy.mean,
                        p.final_accuracy.std
                    );
                }
            }
        }
        Command::Presets => {
            for (name, text) in presets::all() {
                let first_line = text
                    .lines()
                    .find(|l| l.starts_with('#'))
                    .unwrap_or("")
                    .trim_start_matches('#')
                    .trim();
                println!("{name:<20} {first_line}");
            }
        }
    }
    Ok(())
}
