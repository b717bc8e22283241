mod common;

use cil_core::learners::{train_linear_epochs, DEFAULT_TEMPERATURE};
use cil_core::{build_learner, EmbeddingBank, Error, Learner, LearnerKind, Split, StageBatchPlan};
use common::*;
use ndarray::{array, Array2};

fn plan(epochs: usize) -> StageBatchPlan {
    StageBatchPlan {
        epochs,
        seed: 42,
        ..StageBatchPlan::default()
    }
}

fn learner(kind: LearnerKind) -> Box<dyn Learner> {
    build_learner(kind, DEFAULT_TEMPERATURE).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        for tau in [1.0, 10.0, DEFAULT_TEMPERATURE] {
            let e = linear_head_gradient_error(seed, tau);
            assert!(e < 1e-4, "linear head, seed {seed}, tau {tau}: {e}");
            let e = projection_gradient_error(seed, tau);
            assert!(e < 1e-4, "projections, seed {seed}, tau {tau}: {e}");
        }
    }
}

#[test]
fn zs_clip_widens_its_label_space() {
    let (train, _) = banks(&small_spec(1));
    let mut l = learner(LearnerKind::ZsClip);
    l.observe_stage(&train, &[0, 1, 2, 3, 4], &[], &plan(0))
        .unwrap();
    l.observe_stage(&train, &[5, 6, 7, 8, 9], &[], &plan(0))
        .unwrap();
    assert_eq!(l.seen_classes().len(), 10);
    assert!(l.parameters().is_empty());
}

#[test]
fn single_sample_prototype_is_the_normalized_sample() {
    let images = array![[3.0f32, 4.0], [0.0, -2.0]];
    let bank = EmbeddingBank::new(
        images,
        vec![0, 1],
        vec!["a".into(), "b".into()],
        None,
        Split::Train,
    )
    .unwrap();
    let mut l = learner(LearnerKind::SimpleCil);
    l.observe_stage(&bank, &[0, 1], &[], &plan(0)).unwrap();
    assert_eq!(l.parameters(), vec![0.6, 0.8, 0.0, -1.0]);
    assert_eq!(l.predict(bank.images().view()).unwrap(), vec![0, 1]);
}

#[test]
fn predictions_never_leave_the_seen_classes() {
    let (train, test) = banks(&small_spec(2));
    for kind in LearnerKind::ALL {
        let mut l = learner(kind);
        l.observe_stage(&train, &[3, 7], &[], &plan(2)).unwrap();
        for p in l.predict(test.images().view()).unwrap() {
            assert!(p == 3 || p == 7, "{kind} predicted {p}");
        }
    }
}

#[test]
fn scale_invariance_of_predictions() {
    let (train, test) = banks(&small_spec(3));
    let scaled = test.images().mapv(|v| v * 8.0);
    for kind in [
        LearnerKind::ZsClip,
        LearnerKind::SimpleCil,
        LearnerKind::ReplayLinear,
    ] {
        let mut l = learner(kind);
        l.observe_stage(&train, &[0, 1, 2, 3, 4], &[], &plan(1))
            .unwrap();
        assert_eq!(
            l.predict(test.images().view()).unwrap(),
            l.predict(scaled.view()).unwrap(),
            "{kind}"
        );
    }
}

#[test]
fn text_is_required_where_used() {
    let (train, _) = banks(&small_spec(4));
    let bare = EmbeddingBank::new(
        train.images().clone(),
        train.labels().to_vec(),
        train.class_names().to_vec(),
        None,
        Split::Train,
    )
    .unwrap();
    for kind in LearnerKind::ALL {
        let outcome = learner(kind).observe_stage(&bare, &[0, 1], &[], &plan(0));
        assert_eq!(outcome.is_err(), kind.uses_text(), "{kind}");
        if let Err(e) = outcome {
            assert!(matches!(e, Error::Validation(_)));
        }
    }
}

#[test]
fn overlapping_and_unknown_classes_are_rejected() {
    let (train, _) = banks(&small_spec(5));
    for kind in LearnerKind::ALL {
        let mut l = learner(kind);
        l.observe_stage(&train, &[0, 1], &[], &plan(0)).unwrap();
        assert!(
            l.observe_stage(&train, &[1, 2], &[], &plan(0)).is_err(),
            "{kind}"
        );
        assert!(
            l.observe_stage(&train, &[10], &[], &plan(0)).is_err(),
            "{kind}"
        );
        assert!(
            l.observe_stage(&train, &[2, 2], &[], &plan(0)).is_err(),
            "{kind}"
        );
        assert_eq!(l.seen_classes(), &[0, 1]);
    }
}

#[test]
fn training_is_deterministic() {
    let (train, _) = banks(&small_spec(6));
    for kind in [
        LearnerKind::FinetuneLinear,
        LearnerKind::ReplayLinear,
        LearnerKind::ProofLite,
    ] {
        let fit = || {
            let mut l = learner(kind);
            l.observe_stage(&train, &[0, 1, 2], &[], &plan(3)).unwrap();
            l.observe_stage(&train, &[3, 4], &[0, 50, 100], &plan(3))
                .unwrap();
            l.parameters()
        };
        let a = fit();
        assert!(!a.is_empty());
        assert_eq!(a, fit(), "{kind}");
    }
}

#[test]
fn replay_rows_change_training_only_for_replay_kinds() {
    let (train, _) = banks(&small_spec(8));
    for (kind, uses) in [
        (LearnerKind::FinetuneLinear, false),
        (LearnerKind::ReplayLinear, true),
    ] {
        let fit = |replay: &[usize]| {
            let mut l = learner(kind);
            l.observe_stage(&train, &[0, 1], &[], &plan(2)).unwrap();
            l.observe_stage(&train, &[2, 3], replay, &plan(2)).unwrap();
            l.parameters()
        };
        assert_eq!(fit(&[]) != fit(&[0, 1, 50, 51]), uses, "{kind}");
    }
}

#[test]
fn proof_lite_without_training_matches_zero_shot() {
    let (train, test) = banks(&small_spec(9));
    let mut zs = learner(LearnerKind::ZsClip);
    let mut proof = learner(LearnerKind::ProofLite);
    for stage in [[0u32, 1, 2, 3, 4], [5, 6, 7, 8, 9]] {
        zs.observe_stage(&train, &stage, &[], &plan(0)).unwrap();
        proof.observe_stage(&train, &stage, &[], &plan(0)).unwrap();
    }
    assert_eq!(
        zs.predict(test.images().view()).unwrap(),
        proof.predict(test.images().view()).unwrap()
    );
}

#[test]
fn linear_training_separates_two_clusters() {
    // Two clusters around directions 30 degrees apart.
    let centers = [(1.0f64, 0.0f64), (0.866, 0.5)];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut s = cil_core::rng::Stream::new(5);
    for (c, &(a, b)) in centers.iter().enumerate() {
        for _ in 0..20 {
            rows.push(a + 0.03 * s.normal());
            rows.push(b + 0.03 * s.normal());
            labels.push(c);
        }
    }
    let pool = Array2::from_shape_vec((40, 2), rows).unwrap();
    // Both rows start on the bisector, so the initial head cannot tell the
    // classes apart.
    let start = array![[0.966, 0.259], [0.966, 0.259001]];
    let trained = train_linear_epochs(
        start,
        pool.view(),
        &labels,
        &StageBatchPlan {
            epochs: 100,
            batch_size: 8,
            init_lr: 0.05,
            seed: 1,
            ..StageBatchPlan::default()
        },
        10.0,
    )
    .unwrap();
    let cos = |w: ndarray::ArrayView1<f64>, x: ndarray::ArrayView1<f64>| {
        w.dot(&x) / (w.dot(&w).sqrt() * x.dot(&x).sqrt())
    };
    let correct = pool
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(x, &y)| {
            let s0 = cos(trained.row(0), *x);
            let s1 = cos(trained.row(1), *x);
            (if s1 > s0 { 1 } else { 0 }) == y
        })
        .count();
    assert_eq!(correct, 40);
    // The class-1 row must rotate counter-clockwise of the class-0 row.
    let angle = |r: usize| trained[[r, 1]].atan2(trained[[r, 0]]);
    assert!(angle(1) > angle(0));
}
