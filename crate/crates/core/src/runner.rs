//! The end-to-end incremental loop and results emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Axis;
use serde::Serialize;

use crate::bank::{load_bank, manifest_path, read_manifest, ClassId, EmbeddingBank, Split};
use crate::config::{RunConfig, TaskLabelSpace};
use crate::error::{Error, Result};
use crate::learners::{argmax_within, build_learner, Learner};
use crate::memory::ExemplarStore;
use crate::metrics::{AccuracyMatrix, RunMetrics};
use crate::protocol::{build_schedule, shuffle_classes, ClassOrder, StageSchedule};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "CIL_ENGINE_THREADS";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for evaluation; `None` uses rayon's default pool.
    pub threads: Option<usize>,
}

impl RunOptions {
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Err(_) => Ok(Self::default()),
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Self { threads: Some(n) }),
                _ => Err(Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub new_classes: Vec<ClassId>,
    pub seen_count: usize,
    /// Accuracy over all seen classes' test rows.
    pub accuracy: f64,
    /// Row `stage` of the accuracy matrix, tasks `1..=stage`.
    pub task_accuracies: Vec<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub class_order: Vec<ClassId>,
    pub num_stages: usize,
    pub stages: Vec<StageReport>,
    pub matrix: AccuracyMatrix,
    /// Present once every stage has completed.
    pub metrics: Option<RunMetrics>,
    /// Set when the run stopped early.
    pub error: Option<String>,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.metrics.is_some()
    }
}

/// A failed run together with whatever it finished before failing.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub partial: Option<Box<RunResult>>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

fn check_banks(train: &EmbeddingBank, test: &EmbeddingBank) -> Result<()> {
    if train.split() != Split::Train {
        return Err(Error::Validation(
            "train bank is tagged as a test split".into(),
        ));
    }
    if test.split() != Split::Test {
        return Err(Error::Validation(
            "test bank is tagged as a train split".into(),
        ));
    }
    if train.dim() != test.dim() {
        return Err(Error::Validation(format!(
            "train dim {} differs from test dim {}",
            train.dim(),
            test.dim()
        )));
    }
    if train.class_names() != test.class_names() {
        return Err(Error::Validation(
            "train and test banks disagree on class count or names".into(),
        ));
    }
    Ok(())
}

pub fn make_schedule(config: &RunConfig, num_classes: usize) -> Result<StageSchedule> {
    let order = if config.shuffle {
        shuffle_classes(num_classes, config.seed)?
    } else {
        ClassOrder::identity(num_classes)?
    };
    build_schedule(
        order,
        config.init_cls,
        config.increment,
        config.allow_ragged,
    )
}

/// Score the seen classes' test rows once and derive both the cumulative
/// accuracy and every task's accuracy.
fn evaluate_stage(
    learner: &dyn Learner,
    test: &EmbeddingBank,
    schedule: &StageSchedule,
    stage: usize,
    label_space: TaskLabelSpace,
) -> Result<(f64, Vec<f64>)> {
    let classifier = learner.classifier()?;
    let classes = classifier.classes();
    let seen = schedule.seen_in_order(stage)?;
    if classes != seen.as_slice() {
        return Err(Error::State(
            "learner class order differs from the schedule".into(),
        ));
    }
    // Prefix length of the class list that is visible to each task.
    let mut task_of = vec![0usize; test.num_classes()];
    let mut prefix = Vec::with_capacity(stage);
    let mut total = 0;
    for b in 1..=stage {
        let new = schedule.new_classes(b)?;
        for &c in new {
            task_of[c as usize] = b;
        }
        total += new.len();
        prefix.push(match label_space {
            TaskLabelSpace::Introduced => total,
            TaskLabelSpace::Current => classes.len(),
        });
    }

    let rows = test.subset_by_classes(seen.iter().copied())?.into_indices();
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "no test rows for the classes seen at stage {stage}"
        )));
    }
    let queries = test.images().select(Axis(0), &rows);
    let scores = classifier.score_matrix(queries.view())?;

    let mut hits = 0usize;
    let mut task_hits = vec![0usize; stage];
    let mut task_rows = vec![0usize; stage];
    for (row_scores, &row) in scores.axis_iter(Axis(0)).zip(&rows) {
        let label = test.labels()[row];
        let task = task_of[label as usize];
        if argmax_within(row_scores, classes, classes.len()) == label {
            hits += 1;
        }
        task_rows[task - 1] += 1;
        if argmax_within(row_scores, classes, prefix[task - 1]) == label {
            task_hits[task - 1] += 1;
        }
    }
    let per_task = task_hits
        .iter()
        .zip(&task_rows)
        .enumerate()
        .map(|(t, (&h, &n))| {
            if n == 0 {
                Err(Error::Validation(format!(
                    "task {} has no test rows",
                    t + 1
                )))
            } else {
                Ok(h as f64 / n as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((hits as f64 / rows.len() as f64, per_task))
}

/// Run the whole protocol on in-memory banks without touching the disk.
pub fn execute(
    config: &RunConfig,
    train: &EmbeddingBank,
    test: &EmbeddingBank,
    options: &RunOptions,
) -> Result<RunResult, RunFailure> {
    match options.threads {
        None => execute_inner(config, train, test),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?;
            pool.install(|| execute_inner(config, train, test))
        }
    }
}

fn execute_inner(
    config: &RunConfig,
    train: &EmbeddingBank,
    test: &EmbeddingBank,
) -> Result<RunResult, RunFailure> {
    check_banks(train, test)?;
    let schedule = make_schedule(config, train.num_classes())?;
    let num_stages = schedule.num_stages();
    let mut learner = build_learner(config.model_name, config.temperature)?;
    let mut store = ExemplarStore::new(config.memory_per_class)?;
    let mut result = RunResult {
        config: config.clone(),
        class_order: schedule.order().as_slice().to_vec(),
        num_stages,
        stages: Vec::with_capacity(num_stages),
        matrix: AccuracyMatrix::new(num_stages),
        metrics: None,
        error: None,
    };
    log::info!(
        "{} on {}: {} classes in {} stages",
        config.model_name,
        config.dataset,
        train.num_classes(),
        num_stages
    );

    for stage in 1..=num_stages {
        let started = Instant::now();
        let outcome = (|| -> Result<StageReport> {
            let new_classes = schedule.new_classes(stage)?.to_vec();
            let replay = if config.model_name.uses_replay() {
                let rows = store.replay_view();
                store.update(train, &new_classes)?;
                rows
            } else {
                Vec::new()
            };
            learner.observe_stage(train, &new_classes, &replay, &config.stage_plan(stage))?;
            let (accuracy, task_accuracies) = evaluate_stage(
                learner.as_ref(),
                test,
                &schedule,
                stage,
                config.task_label_space,
            )?;
            let cells: Vec<_> = task_accuracies
                .iter()
                .copied()
                .enumerate()
                .map(|(t, a)| (t + 1, a))
                .collect();
            result.matrix.record(stage, &cells)?;
            Ok(StageReport {
                stage,
                new_classes,
                seen_count: learner.seen_classes().len(),
                accuracy,
                task_accuracies,
                wall_time_secs: started.elapsed().as_secs_f64(),
            })
        })();
        match outcome {
            Ok(report) => {
                log::info!(
                    "stage {stage}/{num_stages}: {} classes seen, accuracy {:.2}%",
                    report.seen_count,
                    100.0 * report.accuracy
                );
                result.stages.push(report);
            }
            Err(e) => {
                let error = e.at_stage(stage);
                result.error = Some(error.to_string());
                return Err(RunFailure {
                    error,
                    partial: Some(Box::new(result)),
                });
            }
        }
    }

    let per_stage = result.stages.iter().map(|s| s.accuracy).collect();
    match RunMetrics::compute(per_stage, &result.matrix) {
        Ok(metrics) => result.metrics = Some(metrics),
        Err(error) => {
            result.error = Some(error.to_string());
            return Err(RunFailure {
                error,
                partial: Some(Box::new(result)),
            });
        }
    }
    Ok(result)
}

/// Load both banks, checking any manifest sidecars.
pub fn load_banks(config: &RunConfig) -> Result<(EmbeddingBank, EmbeddingBank)> {
    let (train_path, test_path) = config.bank_paths();
    let mut banks = Vec::with_capacity(2);
    for path in [&train_path, &test_path] {
        let bank = load_bank(path)?;
        let sidecar = manifest_path(path);
        if sidecar.exists() {
            let manifest = read_manifest(&sidecar)?;
            manifest.check(&bank)?;
            if let Some(wanted) = &config.backbone_type {
                if *wanted != manifest.backbone_type {
                    log::warn!(
                        "config backbone_type {wanted:?} but {} was built with {:?}",
                        path.display(),
                        manifest.backbone_type
                    );
                }
            }
        }
        banks.push(bank);
    }
    let test = banks.pop().expect("two banks");
    let train = banks.pop().expect("two banks");
    Ok((train, test))
}

/// Load banks, execute, and write results into `config.output_dir`. A
/// failed run still writes its partial results, marked as aborted.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunResult, RunFailure> {
    let (train, test) = load_banks(config)?;
    match execute(config, &train, &test, options) {
        Ok(result) => {
            emit_results(&result, &config.output_dir)?;
            Ok(result)
        }
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                if let Err(e) = emit_results(partial, &config.output_dir) {
                    log::error!("could not write partial results: {e}");
                }
            }
            Err(failure)
        }
    }
}

fn percent(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

#[derive(Serialize)]
struct StageRecord<'a> {
    stage: usize,
    new_classes: &'a [ClassId],
    seen_count: usize,
    accuracy: f64,
    task_accuracies: Vec<f64>,
    wall_time_secs: f64,
}

#[derive(Serialize)]
struct ResultFile<'a> {
    status: &'static str,
    error: Option<&'a str>,
    config: &'a RunConfig,
    num_stages: usize,
    class_order: &'a [ClassId],
    stages: Vec<StageRecord<'a>>,
    avg_acc: Option<f64>,
    last_acc: Option<f64>,
    forgetting: Option<f64>,
}

/// `result.json` contents. Accuracies are percentages rounded to 2 decimals.
pub fn result_json(result: &RunResult) -> String {
    let metrics = result.metrics.as_ref();
    let file = ResultFile {
        status: if result.is_complete() {
            "completed"
        } else {
            "aborted"
        },
        error: result.error.as_deref(),
        config: &result.config,
        num_stages: result.num_stages,
        class_order: &result.class_order,
        stages: result
            .stages
            .iter()
            .map(|s| StageRecord {
                stage: s.stage,
                new_classes: &s.new_classes,
                seen_count: s.seen_count,
                accuracy: percent(s.accuracy),
                task_accuracies: s.task_accuracies.iter().map(|&a| percent(a)).collect(),
                wall_time_secs: s.wall_time_secs,
            })
            .collect(),
        avg_acc: metrics.map(|m| percent(m.avg_acc)),
        last_acc: metrics.map(|m| percent(m.last_acc)),
        forgetting: metrics.and_then(|m| m.forgetting).map(percent),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("result serializes");
    text.push('\n');
    text
}

/// `curve.csv` contents: one row per completed stage.
pub fn curve_csv(result: &RunResult) -> String {
    let mut out = String::from("stage,seen_classes,acc_percent,forgetting_percent\n");
    let forgetting = result
        .metrics
        .as_ref()
        .and_then(|m| m.forgetting)
        .map(|f| format!("{:.2}", 100.0 * f))
        .unwrap_or_default();
    let last = result.stages.len();
    for s in &result.stages {
        // Forgetting is a whole-run number; it is reported on the final row.
        let f = if s.stage == last {
            forgetting.as_str()
        } else {
            ""
        };
        writeln!(
            out,
            "{},{},{:.2},{f}",
            s.stage,
            s.seen_count,
            100.0 * s.accuracy
        )
        .expect("writing to a String");
    }
    out
}

pub fn emit_results(result: &RunResult, output_dir: &Path) -> Result<()> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let json_path = output_dir.join("result.json");
    fs::write(&json_path, result_json(result)).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = output_dir.join("curve.csv");
    fs::write(&csv_path, curve_csv(result)).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}
