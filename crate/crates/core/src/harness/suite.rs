use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierParams;
use crate::data::TestProtocol;
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::harness::config::{RunConfig, RunEntry};
use crate::harness::seedmix::{domain, mix};
use crate::strategies::{run_continual, ExperienceMetrics, RunInputs};

pub const CSV_HEADER: &str = "seed,experience,protocol,accuracy,ce,distill,si,recon,kl,class,wall_ms";

/// Mean and (population) standard deviation of a sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stats {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-protocol aggregate curves for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub protocol: TestProtocol,
    pub per_experience_mean: Vec<f64>,
    pub per_experience_std: Vec<f64>,
    /// Mean over experiences of the accuracy curve, per seed, aggregated.
    pub average_accuracy: Stats,
    /// Accuracy after the last experience, aggregated over seeds.
    pub final_accuracy: Stats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub protocols: Vec<ProtocolSummary>,
    pub succeeded_seeds: Vec<u64>,
    pub failed_seeds: Vec<(u64, String)>,
}

impl RunSummary {
    pub fn protocol(&self, protocol: TestProtocol) -> Option<&ProtocolSummary> {
        self.protocols.iter().find(|p| p.protocol == protocol)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunSummary>,
}

impl SuiteReport {
    pub fn run(&self, name: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.name == name)
    }
}

/// SHA-256 over the canonical JSON serialization of the config.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Execute every (run, seed) pair, aggregate, and persist one CSV per run
/// plus a suite-level JSON summary under `base_dir/output_dir`.
pub fn run_suite(config: &RunConfig, base_dir: &Path) -> Result<SuiteReport> {
    config.validate()?;
    let hash = config_hash(config);
    let out_root = base_dir.join(&config.output_dir);
    fs::create_dir_all(&out_root)?;

    let mut runs = Vec::with_capacity(config.runs.len());
    for entry in &config.runs {
        let summary = run_one_entry(config, entry, &hash, &out_root)?;
        runs.push(summary);
    }

    let report = SuiteReport {
        name: config.name.clone(),
        config_hash: hash,
        seeds: config.seeds.clone(),
        runs,
    };
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(format!("json: {e}")))?;
    fs::write(out_root.join("summary.json"), json + "\n")?;
    Ok(report)
}

fn run_one_entry(
    config: &RunConfig,
    entry: &RunEntry,
    hash: &str,
    out_root: &Path,
) -> Result<RunSummary> {
    let strategy_cfg = entry.to_strategy_config()?;
    let protocols = &config.evaluation.protocols;
    let mut by_seed: Vec<(u64, Vec<ExperienceMetrics>)> = Vec::new();
    let mut failed: Vec<(u64, String)> = Vec::new();

    for &seed in &config.seeds {
        let result = (|| -> Result<Vec<ExperienceMetrics>> {
            let (train, test) = config.materialize_dataset(seed)?;
            let stream = config.materialize_stream(&train, seed)?;
            let mut cls = ClassifierParams::init(
                train.dims(),
                &config.model.hidden,
                &config.model.post,
                train.num_classes(),
                mix(&[seed, domain::CLASSIFIER_INIT]),
            )?;
            let mut gen = if strategy_cfg.generator.is_some() {
                let gspec = entry.generator.as_ref().expect("validated");
                Some(GeneratorParams::init(
                    cls.latent_width(),
                    config.model.gen_hidden,
                    config.model.gen_hidden,
                    config.model.z_dim,
                    train.num_classes(),
                    gspec.beta,
                    gspec.eta,
                    mix(&[seed, domain::GENERATOR_INIT]),
                )?)
            } else {
                None
            };
            run_continual(
                &RunInputs {
                    stream: &stream,
                    test: &test,
                },
                &mut cls,
                gen.as_mut(),
                &strategy_cfg,
                protocols,
                seed,
            )
        })();
        match result {
            Ok(metrics) => by_seed.push((seed, metrics)),
            Err(e) => failed.push((seed, e.to_string())),
        }
    }

    if by_seed.is_empty() {
        let detail: Vec<String> = failed
            .iter()
            .map(|(s, e)| format!("seed {s}: {e}"))
            .collect();
        return Err(Error::AllSeedsFailed(format!(
            "run '{}': {}",
            entry.name,
            detail.join("; ")
        )));
    }

    // CSV: seed-major, then experience, then protocol in config order
    let run_dir = out_root.join(&entry.name);
    fs::create_dir_all(&run_dir)?;
    let mut csv = String::new();
    csv.push_str(&format!("# config_hash={hash}\n"));
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for (seed, metrics) in &by_seed {
        for m in metrics {
            for (protocol, accuracy, _) in &m.accuracies {
                let wall = if config.record_wall_time { m.wall_ms } else { 0 };
                csv.push_str(&format!(
                    "{seed},{},{},{},{},{},{},{},{},{},{}\n",
                    m.experience,
                    protocol,
                    accuracy,
                    m.losses.ce,
                    m.losses.distill,
                    m.losses.si,
                    m.losses.recon,
                    m.losses.kl,
                    m.losses.class,
                    wall
                ));
            }
        }
    }
    fs::write(run_dir.join("metrics.csv"), csv)?;

    // aggregate per protocol
    let num_experiences = by_seed[0].1.len();
    let mut protocol_summaries = Vec::with_capacity(protocols.len());
    for (pi, &protocol) in protocols.iter().enumerate() {
        let mut per_experience_mean = Vec::with_capacity(num_experiences);
        let mut per_experience_std = Vec::with_capacity(num_experiences);
        for e in 0..num_experiences {
            let samples: Vec<f64> = by_seed.iter().map(|(_, m)| m[e].accuracies[pi].1).collect();
            let stats = Stats::of(&samples);
            per_experience_mean.push(stats.mean);
            per_experience_std.push(stats.std);
        }
        let averages: Vec<f64> = by_seed
            .iter()
            .map(|(_, m)| {
                m.iter().map(|em| em.accuracies[pi].1).sum::<f64>() / m.len() as f64
            })
            .collect();
        let finals: Vec<f64> = by_seed
            .iter()
            .map(|(_, m)| m.last().expect("nonempty run").accuracies[pi].1)
            .collect();
        protocol_summaries.push(ProtocolSummary {
            protocol,
            per_experience_mean,
            per_experience_std,
            average_accuracy: Stats::of(&averages),
            final_accuracy: Stats::of(&finals),
        });
    }

    Ok(RunSummary {
        name: entry.name.clone(),
        protocols: protocol_summaries,
        succeeded_seeds: by_seed.iter().map(|(s, _)| *s).collect(),
        failed_seeds: failed,
    })
}

/// Load a previously written suite summary.
pub fn load_report(dir: &Path) -> Result<SuiteReport> {
    let path: PathBuf = dir.join("summary.json");
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("summary at {}: {e}", path.display())))
}
