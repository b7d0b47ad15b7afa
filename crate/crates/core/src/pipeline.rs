//! End-to-end run: windowing, per-window discovery, trigger, incremental
//! attack graphs, classifier training on the leading windows and
//! classification of the remaining ones, plus a window-mean baseline.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::discovery::{fit_window, CausalGraph};
use crate::gcn::{featurize, train, GcnModel, GraphSample};
use crate::incremental::{IncrementalState, Status, StepDiagnostics};
use crate::metrics::MetricsReport;
use crate::stream::{segment, PriorKnowledge, Series, Standardizer, Window};
use crate::trigger::TriggerState;
use crate::{Error, Result};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub ingest: f64,
    pub discovery: f64,
    pub trigger: f64,
    pub incremental: f64,
    pub training: f64,
    pub inference: f64,
    pub baseline: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One line of the per-window JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub window: usize,
    pub split: Split,
    pub label: u8,
    pub edges: usize,
    pub similarity: Option<f64>,
    pub fired: bool,
    pub step: Option<StepDiagnostics>,
    pub score: Option<f64>,
    pub prediction: Option<u8>,
    pub baseline_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub metrics: MetricsReport,
    pub baseline: MetricsReport,
    pub timings: StageTimings,
    pub window_count: usize,
    pub train_windows: usize,
    pub test_windows: Vec<usize>,
    /// Test windows on which the trigger fired.
    pub triggered_windows: Vec<usize>,
    pub training_samples: usize,
    pub final_training_loss: f64,
    pub constant_features: Vec<usize>,
    pub config: Config,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub trace: Vec<WindowTrace>,
    pub graphs: Vec<CausalGraph>,
    pub model: GcnModel,
    pub state: IncrementalState,
}

/// Labeled stream plus the attack/impact nodes known in advance.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub series: Series,
    pub prior: PriorKnowledge,
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Fit every window, spreading windows over `threads` workers.
pub fn discover_all(windows: &[Window], node_ids: &[String], config: &crate::discovery::DiscoveryConfig, threads: usize) -> Result<Vec<CausalGraph>> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
    .clamp(1, windows.len().max(1));
    let mut slots: Vec<Option<Result<CausalGraph>>> = (0..windows.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..windows.len())
                        .step_by(threads)
                        .map(|i| (i, fit_window(&windows[i].data, node_ids, config)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("discovery worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.expect("every window visited").map_err(|e| Error::invalid(format!("window {i}: {e}"))))
        .collect()
}

/// Window-mean baseline. Features are z-scored with statistics of the
/// training-normal rows; a window's score is the largest deviation of a
/// feature's window mean from the training-normal window means, in units of
/// their standard deviation.
pub fn baseline_scores(windows: &[Window], normal_train: &[usize]) -> Result<Vec<f64>> {
    if normal_train.len() < 2 {
        return Err(Error::invalid("baseline needs at least two normal training windows"));
    }
    let m = windows[0].data.ncols();
    let rows: Vec<_> = normal_train.iter().flat_map(|&i| windows[i].data.row_iter().map(|r| r.into_owned())).collect();
    let stats = Standardizer::fit(&DMatrix::from_rows(&rows))?;
    let means: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            let z = stats.apply(&w.data);
            (0..m).map(|j| z.column(j).mean()).collect()
        })
        .collect();
    let n = normal_train.len() as f64;
    let centre: Vec<f64> = (0..m).map(|j| normal_train.iter().map(|&i| means[i][j]).sum::<f64>() / n).collect();
    let spread: Vec<f64> = (0..m)
        .map(|j| (normal_train.iter().map(|&i| (means[i][j] - centre[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(means
        .iter()
        .map(|mu| {
            (0..m)
                .filter(|&j| spread[j] > 0.0)
                .map(|j| (mu[j] - centre[j]).abs() / spread[j])
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Run the whole detection pipeline on a labeled stream.
pub fn run_pipeline(config: &Config, input: &PipelineInput) -> Result<PipelineOutput> {
    let total = Instant::now();
    config.validate()?;
    let mut timings = StageTimings::default();
    let prior = &input.prior;
    let node_ids = input.series.schema.feature_names.clone();

    // Ingest.
    let t = Instant::now();
    prior.validate(&input.series.schema).map_err(|e| e.at_stage("ingest"))?;
    if prior.is_empty() {
        return Err(Error::invalid("prior knowledge is empty").at_stage("ingest"));
    }
    if input.series.labels.is_none() {
        return Err(Error::invalid("pipeline needs a labeled stream").at_stage("ingest"));
    }
    let k = config.stream.window_length;
    let raw = segment(&input.series, k, None).map_err(|e| e.at_stage("ingest"))?;
    let n = raw.len();
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 windows, got {n}")).at_stage("ingest"));
    }
    let n_train = ((n as f64) * config.pipeline.train_fraction).floor() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::invalid(format!("train fraction leaves {n_train} of {n} windows for training")).at_stage("ingest"));
    }
    let labels = raw.labels().expect("labeled series");
    let mut constant_features = Vec::new();
    let stream = if config.stream.standardize {
        let stats = Standardizer::fit(&input.series.data.rows(0, n_train * k).into_owned()).map_err(|e| e.at_stage("ingest"))?;
        constant_features = stats.constant_features();
        let scaled = Series {
            schema: input.series.schema.clone(),
            data: stats.apply(&input.series.data),
            labels: input.series.labels.clone(),
        };
        segment(&scaled, k, None).map_err(|e| e.at_stage("ingest"))?
    } else {
        raw.clone()
    };
    timings.ingest = elapsed(t);

    // Discovery.
    let t = Instant::now();
    let graphs = discover_all(&stream.windows, &node_ids, &config.discovery, config.pipeline.threads).map_err(|e| e.at_stage("discovery"))?;
    timings.discovery = elapsed(t);

    let max_lag = config.discovery.max_lag;
    let mut state = IncrementalState::new(node_ids.clone(), max_lag, config.discovery.edge_threshold, config.incremental.clone())
        .map_err(|e| e.at_stage("incremental"))?;
    let mut trigger = TriggerState::new(config.trigger.clone()).map_err(|e| e.at_stage("trigger"))?;
    let mut trace = Vec::with_capacity(n);
    let mut samples: Vec<GraphSample> = Vec::new();

    // Training pass: statuses come from the labels.
    let mut in_episode = false;
    for w in 0..n_train {
        let g = &graphs[w];
        let t = Instant::now();
        let (_, event) = trigger.check(w, g).map_err(|e| e.at_stage("trigger"))?;
        timings.trigger += elapsed(t);
        samples.push(featurize(g, prior, labels[w]).map_err(|e| e.at_stage("training"))?);
        let t = Instant::now();
        let step = if labels[w] == 1 {
            if !in_episode {
                state.begin_episode();
                in_episode = true;
            }
            if state.converged {
                None
            } else {
                let d = state.step(g, prior, Status::Attack).map_err(|e| e.at_stage("incremental"))?;
                samples.push(featurize(&state.attack_graph, prior, 1).map_err(|e| e.at_stage("training"))?);
                Some(d)
            }
        } else {
            in_episode = false;
            Some(state.step(g, prior, Status::Normal).map_err(|e| e.at_stage("incremental"))?)
        };
        timings.incremental += elapsed(t);
        trace.push(WindowTrace {
            window: w,
            split: Split::Train,
            label: labels[w],
            edges: g.edge_count(),
            similarity: event.similarity,
            fired: event.fired,
            step,
            score: None,
            prediction: None,
            baseline_score: None,
        });
    }

    let t = Instant::now();
    let trained = train(&samples, &config.gcn).map_err(|e| e.at_stage("training"))?;
    timings.training = elapsed(t);
    let model = trained.model;

    // Test pass: the trigger decides when the attack graph is updated; every
    // window is classified from its own graph.
    let mut attack_mode = false;
    let mut triggered_windows = Vec::new();
    let mut scores = Vec::with_capacity(n - n_train);
    for w in n_train..n {
        let g = &graphs[w];
        let t = Instant::now();
        let (_, event) = trigger.check(w, g).map_err(|e| e.at_stage("trigger"))?;
        timings.trigger += elapsed(t);
        if event.fired {
            triggered_windows.push(w);
            if !attack_mode {
                state.begin_episode();
                attack_mode = true;
            }
        }
        let t = Instant::now();
        let step = if attack_mode {
            let d = state.step(g, prior, Status::Attack).map_err(|e| e.at_stage("incremental"))?;
            if state.converged {
                attack_mode = false;
            }
            d
        } else {
            state.step(g, prior, Status::Normal).map_err(|e| e.at_stage("incremental"))?
        };
        timings.incremental += elapsed(t);
        let t = Instant::now();
        let sample = featurize(g, prior, labels[w]).map_err(|e| e.at_stage("inference"))?;
        let p = model.forward(&sample).map_err(|e| e.at_stage("inference"))?;
        timings.inference += elapsed(t);
        scores.push(p);
        trace.push(WindowTrace {
            window: w,
            split: Split::Test,
            label: labels[w],
            edges: g.edge_count(),
            similarity: event.similarity,
            fired: event.fired,
            step: Some(step),
            score: Some(p),
            prediction: Some(u8::from(p >= config.pipeline.classify_threshold)),
            baseline_score: None,
        });
    }
    let test_labels = &labels[n_train..];
    let metrics = MetricsReport::from_scores(&scores, test_labels, config.pipeline.classify_threshold).map_err(|e| e.at_stage("metrics"))?;

    let t = Instant::now();
    let normal_train: Vec<usize> = (0..n_train).filter(|&i| labels[i] == 0).collect();
    let base = baseline_scores(&raw.windows, &normal_train).map_err(|e| e.at_stage("baseline"))?;
    for (tr, &b) in trace.iter_mut().zip(&base) {
        tr.baseline_score = Some(b);
    }
    let baseline = MetricsReport::from_scores(&base[n_train..], test_labels, config.pipeline.baseline_sigma).map_err(|e| e.at_stage("baseline"))?;
    timings.baseline = elapsed(t);
    timings.total = elapsed(total);

    let report = PipelineReport {
        metrics,
        baseline,
        timings,
        window_count: n,
        train_windows: n_train,
        test_windows: (n_train..n).collect(),
        triggered_windows,
        training_samples: samples.len(),
        final_training_loss: trained.loss_trace.last().copied().unwrap_or(f64::NAN),
        constant_features,
        config: config.clone(),
    };
    Ok(PipelineOutput {
        report,
        trace,
        graphs,
        model,
        state,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `report.json`, `trace.jsonl`, `model.json`, `buffer.json`,
/// `attack_graph.json`, `normal_graph.json` and `graphs/window_NNNN.json`.
pub fn write_artifacts(output: &PipelineOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let graphs_dir = dir.join("graphs");
    std::fs::create_dir_all(&graphs_dir).map_err(|e| Error::io(&graphs_dir, e))?;
    write(&dir.join("report.json"), &output.report.to_json()?)?;
    let mut lines = String::new();
    for t in &output.trace {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    write(&dir.join("trace.jsonl"), &lines)?;
    write(&dir.join("model.json"), &output.model.to_json()?)?;
    write(&dir.join("buffer.json"), &output.state.buffer.to_json()?)?;
    write(&dir.join("attack_graph.json"), &output.state.attack_graph.to_json()?)?;
    write(&dir.join("normal_graph.json"), &output.state.normal_graph.to_json()?)?;
    for (i, g) in output.graphs.iter().enumerate() {
        write(&graphs_dir.join(format!("window_{i:04}.json")), &g.to_json()?)?;
    }
    Ok(())
}

/// Pipeline variants compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoReplayBuffer,
    NoReinforcement,
    LagZero,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoReplayBuffer, Ablation::NoReinforcement, Ablation::LagZero];

    pub fn apply(self, config: &Config) -> Config {
        let mut c = config.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoReplayBuffer => c.incremental.use_buffer = false,
            Ablation::NoReinforcement => c.incremental.reinforce = false,
            Ablation::LagZero => c.discovery.max_lag = 0,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub point_adjusted_f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub prc_auc: Option<f64>,
    pub mar: Option<f64>,
    pub mae: Option<f64>,
    pub seconds: f64,
}

pub fn run_ablations(config: &Config, input: &PipelineInput) -> Result<Vec<AblationRow>> {
    Ablation::ALL
        .iter()
        .map(|&a| {
            let out = run_pipeline(&a.apply(config), input)?;
            let m = &out.report.metrics;
            Ok(AblationRow {
                ablation: a,
                point_adjusted_f1: m.point_adjusted_f1,
                roc_auc: m.roc_auc,
                prc_auc: m.prc_auc,
                mar: m.mar,
                mae: m.mae,
                seconds: out.report.timings.total,
            })
        })
        .collect()
}
