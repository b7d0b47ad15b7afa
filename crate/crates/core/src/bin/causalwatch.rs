use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use causalwatch::config::Config;
use causalwatch::metrics::MetricsReport;
use causalwatch::pipeline::{run_ablations, run_pipeline, write_artifacts, PipelineInput, PipelineReport};
use causalwatch::plot::plot_report;
use causalwatch::stream::{load_csv, write_csv, PriorKnowledge};
use causalwatch::synth::{generate, random_scenario, ScenarioSpec};
use causalwatch::{Error, Result};

#[derive(Parser)]
#[command(name = "causalwatch", version, about = "Causal-graph anomaly detection for multivariate streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    /// 8 nodes, lag 1, three attack episodes.
    Default,
    /// Random stable DAG without attacks.
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic scenario: data.csv, prior.json, scenario.json and truth/.
    Generate {
        #[arg(long, value_enum, default_value = "default")]
        scenario: Scenario,
        /// Scenario JSON file; overrides --scenario.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        windows: usize,
        #[arg(long, default_value_t = 200)]
        window_length: usize,
        /// Node count for --scenario random.
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        /// Lag order for --scenario random.
        #[arg(long, default_value_t = 1)]
        lag: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline on a labeled CSV and write the report and artifacts.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the full pipeline with its ablations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against labels from a CSV with `label`, `prediction`
    /// and optional `score` columns.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw ROC, PR and timeline SVGs from a report.json.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_input(config: &Config, data: &Path, prior: &Path) -> Result<PipelineInput> {
    let loaded = load_csv(data, None, &config.stream.label_column)?;
    if loaded.dropped_rows > 0 {
        eprintln!("dropped {} malformed rows", loaded.dropped_rows);
    }
    let prior: PriorKnowledge = serde_json::from_str(&read(prior)?)?;
    Ok(PipelineInput {
        series: loaded.series,
        prior,
    })
}

#[derive(Deserialize)]
struct PredictionRow {
    label: u8,
    prediction: u8,
    score: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            scenario,
            spec,
            seed,
            windows,
            window_length,
            nodes,
            lag,
            out,
        } => {
            let spec = match (spec, scenario) {
                (Some(p), _) => serde_json::from_str::<ScenarioSpec>(&read(&p)?)?,
                (None, Scenario::Default) => ScenarioSpec::default_scenario(seed),
                (None, Scenario::Random) => random_scenario(nodes, lag, 0.4, (0.5, 1.0), seed),
            };
            let generated = generate(&spec, windows, window_length)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_csv(&generated.series, out.join("data.csv"), "label")?;
            write(&out.join("prior.json"), &serde_json::to_string_pretty(&generated.prior)?)?;
            write(&out.join("scenario.json"), &serde_json::to_string_pretty(&spec)?)?;
            for (i, g) in generated.truth.iter().enumerate() {
                write(&out.join("truth").join(format!("window_{i:04}.json")), &g.to_json()?)?;
            }
            println!("wrote {} samples in {} windows to {}", generated.series.len(), windows, out.display());
        }
        Command::Run { config, data, prior, out } => {
            let config = load_config(config.as_deref())?;
            let input = load_input(&config, &data, &prior)?;
            let output = run_pipeline(&config, &input)?;
            write_artifacts(&output, &out)?;
            let m = &output.report.metrics;
            println!(
                "F1_PA {} ROC-AUC {} PRC-AUC {} MAR {} MAE {} ({:.2}s)",
                fmt(m.point_adjusted_f1),
                fmt(m.roc_auc),
                fmt(m.prc_auc),
                fmt(m.mar),
                fmt(m.mae),
                output.report.timings.total
            );
        }
        Command::Ablate { config, data, prior, out } => {
            let config = load_config(config.as_deref())?;
            let input = load_input(&config, &data, &prior)?;
            let rows = run_ablations(&config, &input)?;
            for r in &rows {
                println!("{:<18} F1_PA {}", serde_json::to_string(&r.ablation)?.trim_matches('"'), fmt(r.point_adjusted_f1));
            }
            write(&out, &serde_json::to_string_pretty(&rows)?)?;
        }
        Command::Metrics { input, out } => {
            let mut rdr = csv::Reader::from_path(&input)?;
            let rows: Vec<PredictionRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
            let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
            let preds: Vec<u8> = rows.iter().map(|r| r.prediction).collect();
            let scores: Vec<f64> = rows.iter().map(|r| r.score.unwrap_or(f64::from(r.prediction))).collect();
            let report = MetricsReport::evaluate(&scores, &preds, &labels)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => write(&p, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Plot { report, out } => {
            let report = PipelineReport::from_json(&read(&report)?)?;
            for p in plot_report(&report, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
