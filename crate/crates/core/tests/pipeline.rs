mod common;

use cil_core::runner::{curve_csv, result_json};
use cil_core::{execute, run, EmbeddingBank, Error, RunOptions, Split, TaskLabelSpace};
use common::*;

fn opts() -> RunOptions {
    RunOptions::default()
}

#[test]
fn standard_forgetting_goldens() {
    let (train, test) = banks(&standard_spec());
    let metrics = |model: &str| {
        execute(&standard_config(model, 30), &train, &test, &opts())
            .unwrap()
            .metrics
            .unwrap()
    };
    let finetune = metrics("finetune");
    let replay = metrics("replay_linear");
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    assert!(
        close(finetune.forgetting.unwrap(), 0.228125),
        "{finetune:?}"
    );
    assert!(close(finetune.last_acc, 0.6725), "{finetune:?}");
    assert!(close(replay.forgetting.unwrap(), 0.01875), "{replay:?}");
    assert!(close(replay.last_acc, 0.885), "{replay:?}");
}

#[test]
fn frozen_learners_do_not_forget() {
    let (train, test) = banks(&small_spec(7));
    for model in ["zs_clip", "simplecil"] {
        let c = config(&format!(
            r#"{{"model_name": "{model}", "dataset": "small", "increment": 2}}"#
        ));
        let r = execute(&c, &train, &test, &opts()).unwrap();
        assert_eq!(r.num_stages, 5);
        assert_eq!(r.metrics.unwrap().forgetting, Some(0.0), "{model}");
    }
}

#[test]
fn current_label_space_scores_old_tasks_against_all_seen_classes() {
    let (train, test) = banks(&standard_spec());
    let mut c = standard_config("zs_clip", 0);
    c.task_label_space = TaskLabelSpace::Current;
    let r = execute(&c, &train, &test, &opts()).unwrap();
    // Old tasks now compete with later classes, so readings can only drop.
    for b in 1..=r.num_stages {
        for l in b + 1..=r.num_stages {
            assert!(r.matrix.get(l, b).unwrap() <= r.matrix.get(l - 1, b).unwrap());
        }
    }
    assert!(r.metrics.unwrap().forgetting.unwrap() > 0.0);
}

#[test]
fn small_benchmark_zero_shot_golden() {
    let (train, test) = banks(&small_spec(7));
    let c =
        config(r#"{"model_name": "zs_clip", "dataset": "small", "init_cls": 0, "increment": 2}"#);
    let m = execute(&c, &train, &test, &opts())
        .unwrap()
        .metrics
        .unwrap();
    assert_eq!(m.last_acc, 0.995);
    assert!(m.last_acc >= 0.95);
}

#[test]
fn noisier_samples_do_not_help_zero_shot() {
    let c = config(r#"{"model_name": "zs_clip", "dataset": "small", "increment": 10}"#);
    let mean_acc = |within: f64| {
        let seeds = [11u64, 12, 13, 14, 15, 16];
        seeds
            .iter()
            .map(|&seed| {
                let mut spec = small_spec(seed);
                spec.within_noise = within;
                let (train, test) = banks(&spec);
                execute(&c, &train, &test, &opts())
                    .unwrap()
                    .metrics
                    .unwrap()
                    .last_acc
            })
            .sum::<f64>()
            / seeds.len() as f64
    };
    let means: Vec<f64> = [0.1, 0.3, 0.6, 1.0, 1.5]
        .into_iter()
        .map(mean_acc)
        .collect();
    for pair in means.windows(2) {
        assert!(pair[1] <= pair[0], "{means:?}");
    }
}

#[test]
fn noiseless_banks_are_solved_exactly() {
    let mut spec = small_spec(3);
    spec.within_noise = 0.0;
    spec.text_noise = 0.0;
    let (train, test) = banks(&spec);
    for model in ["zs_clip", "simplecil"] {
        let c = config(&format!(
            r#"{{"model_name": "{model}", "dataset": "small", "increment": 5}}"#
        ));
        let r = execute(&c, &train, &test, &opts()).unwrap();
        assert!(r.stages.iter().all(|s| s.accuracy == 1.0), "{model}");
    }
}

#[test]
fn simplecil_last_accuracy_ignores_class_order() {
    let (train, test) = banks(&standard_spec());
    let last: Vec<f64> = [1993, 1994, 1995]
        .iter()
        .map(|seed| {
            let c = config(&format!(
                r#"{{"model_name": "simplecil", "dataset": "s", "increment": 5, "seed": {seed}}}"#
            ));
            let r = execute(&c, &train, &test, &opts()).unwrap();
            r.metrics.unwrap().last_acc
        })
        .collect();
    assert_eq!(last[0], last[1]);
    assert_eq!(last[0], last[2]);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (train, test) = banks(&small_spec(2));
    for model in ["finetune", "proof_lite"] {
        let c = config(&format!(
            r#"{{"model_name": "{model}", "dataset": "small", "increment": 5, "tuned_epoch": 2}}"#
        ));
        let outputs: Vec<String> = [1, 4]
            .into_iter()
            .map(|n| {
                let r = execute(&c, &train, &test, &RunOptions { threads: Some(n) }).unwrap();
                strip_timing(&result_json(&r))
            })
            .collect();
        assert_eq!(outputs[0], outputs[1], "{model}");
    }
}

#[test]
fn run_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(1);
    spec.name = "toy".into();
    cil_core::synth::generate_to_dir(&spec, dir.path()).unwrap();
    let out = dir.path().join("out");
    let c = config(&format!(
        r#"{{"model_name": "simplecil", "dataset": {:?}, "increment": 4, "allow_ragged": true,
            "output_dir": {:?}}}"#,
        dir.path().join("toy").display().to_string(),
        out.display().to_string()
    ));
    let r = run(&c, &opts()).unwrap();
    assert_eq!(r.num_stages, 3);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(json["status"], "completed");
    assert_eq!(json["num_stages"], 3);
    assert_eq!(json["stages"].as_array().unwrap().len(), 3);
    assert_eq!(json["config"]["model_name"], "simplecil");
    let m = r.metrics.as_ref().unwrap();
    assert_eq!(
        json["last_acc"].as_f64().unwrap(),
        (m.last_acc * 10_000.0).round() / 100.0
    );

    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv, curve_csv(&r));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "stage,seen_classes,acc_percent,forgetting_percent"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,4,"));
    assert!(lines[3].starts_with("3,10,"));
    assert!(lines[1].ends_with(','));
    assert!(lines[3].ends_with(",0.00"));

    // Same inputs, byte-identical output apart from timings.
    let first = std::fs::read_to_string(out.join("result.json")).unwrap();
    run(&c, &opts()).unwrap();
    let second = std::fs::read_to_string(out.join("result.json")).unwrap();
    assert_eq!(strip_timing(&first), strip_timing(&second));
}

#[test]
fn failure_midway_keeps_partial_results() {
    let (train, test) = banks(&small_spec(1));
    // Drop every test row of the second stage's classes.
    let keep: Vec<usize> = (0..test.len())
        .filter(|&i| !(2..4).contains(&test.labels()[i]))
        .collect();
    let test = EmbeddingBank::new(
        test.images().select(ndarray::Axis(0), &keep),
        keep.iter().map(|&i| test.labels()[i]).collect(),
        test.class_names().to_vec(),
        None,
        Split::Test,
    )
    .unwrap();
    let c = config(
        r#"{"model_name": "zs_clip", "dataset": "small", "increment": 2, "shuffle": false}"#,
    );
    let failure = execute(&c, &train, &test, &opts()).unwrap_err();
    assert!(
        matches!(failure.error, Error::Stage { stage: 2, .. }),
        "{}",
        failure.error
    );
    let partial = failure.partial.unwrap();
    assert_eq!(partial.stages.len(), 1);
    assert!(partial.metrics.is_none());
    let json: serde_json::Value = serde_json::from_str(&result_json(&partial)).unwrap();
    assert_eq!(json["status"], "aborted");
    assert!(json["error"].as_str().unwrap().contains("stage 2"));
    assert!(json["forgetting"].is_null());
}

#[test]
fn single_stage_forgetting_is_null() {
    let (train, test) = banks(&small_spec(1));
    let c = config(r#"{"model_name": "simplecil", "dataset": "small", "increment": 10}"#);
    let r = execute(&c, &train, &test, &opts()).unwrap();
    assert_eq!(r.metrics.as_ref().unwrap().forgetting, None);
    let json: serde_json::Value = serde_json::from_str(&result_json(&r)).unwrap();
    assert_eq!(json["status"], "completed");
    assert!(json["forgetting"].is_null());
    assert!(curve_csv(&r).lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn mismatched_banks_are_rejected() {
    let (train, test) = banks(&small_spec(1));
    let c = config(r#"{"model_name": "simplecil", "dataset": "small", "increment": 5}"#);
    let failure = execute(&c, &test, &train, &opts()).unwrap_err();
    assert!(matches!(failure.error, Error::Validation(_)));
    let (other, _) = banks(&standard_spec());
    assert!(execute(&c, &other, &test, &opts()).is_err());
}
