//! Reference implementations and fixtures shared by the integration tests.
//! Everything here is written from the definitions, independently of the
//! library code it checks.

#![allow(dead_code)]

use cil_core::{generate, EmbeddingBank, RunConfig, SynthSpec};

/// 20 classes, dim 32, within-class noise 0.45, seed 7.
pub fn standard_spec() -> SynthSpec {
    SynthSpec {
        num_classes: 20,
        per_class_train: 50,
        per_class_test: 20,
        dim: 32,
        class_separation: 2.0,
        within_noise: 0.45,
        text_noise: 0.1,
        seed: 7,
        name: "standard".into(),
        backbone_type: "synthetic".into(),
    }
}

/// 10 classes, dim 16, within-class noise 0.3.
pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 10,
        per_class_train: 50,
        per_class_test: 20,
        dim: 16,
        class_separation: 2.0,
        within_noise: 0.3,
        text_noise: 0.1,
        seed,
        name: "small".into(),
        backbone_type: "synthetic".into(),
    }
}

pub fn banks(spec: &SynthSpec) -> (EmbeddingBank, EmbeddingBank) {
    generate(spec).expect("valid synthetic spec")
}

pub fn config(json: &str) -> RunConfig {
    RunConfig::from_json_str(json).expect("valid config")
}

/// Config on the standard benchmark: B0 Inc4, 30 epochs, 20 exemplars.
pub fn standard_config(model: &str, epochs: usize) -> RunConfig {
    config(&format!(
        r#"{{"model_name": "{model}", "dataset": "standard", "init_cls": 0, "increment": 4,
            "tuned_epoch": {epochs}, "memory_per_class": 20, "seed": 1993}}"#
    ))
}

/// Forgetting straight from its definition: the mean over tasks `b < B` of
/// the largest drop from any earlier reading `l in b..B` to the final one.
pub fn forgetting_oracle(a: &[Vec<f64>]) -> f64 {
    let big_b = a.len();
    let last = &a[big_b - 1];
    let mut total = 0.0;
    for b in 0..big_b - 1 {
        let mut best = f64::NEG_INFINITY;
        for row in a.iter().take(big_b - 1).skip(b) {
            best = best.max(row[b] - last[b]);
        }
        total += best;
    }
    total / (big_b - 1) as f64
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Greedy herding by brute force: at every step try each remaining row,
/// form the candidate exemplar mean, and keep the first row whose mean is
/// closest to the class mean.
pub fn herding_oracle(rows: &[Vec<f32>], k: usize) -> Vec<usize> {
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| normalize(&r.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()))
        .collect();
    let m = rows.len();
    let dim = rows[0].len();
    let mu: Vec<f64> = (0..dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64)
        .collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if chosen.contains(&i) {
                continue;
            }
            let members: Vec<usize> = chosen.iter().copied().chain([i]).collect();
            let dist: f64 = (0..dim)
                .map(|j| {
                    let s: f64 = members.iter().map(|&r| rows[r][j]).sum();
                    let d = mu[j] - s / members.len() as f64;
                    d * d
                })
                .sum();
            match best {
                Some((_, b)) if dist >= b => {}
                _ => best = Some((i, dist)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Mean cross-entropy of `tau * cos(u_i, v_c)` logits, evaluated directly.
pub fn cosine_ce_oracle(u: &[Vec<f64>], v: &[Vec<f64>], targets: &[usize], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = 0.0;
    for (ui, &y) in u.iter().zip(targets) {
        let logits: Vec<f64> = v
            .iter()
            .map(|vc| tau * dot(ui, vc) / (dot(ui, ui).sqrt() * dot(vc, vc).sqrt()))
            .collect();
        let log_z = logits.iter().map(|z| z.exp()).sum::<f64>().ln();
        loss += log_z - logits[y];
    }
    loss / u.len() as f64
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b))
}

/// Pretty JSON with the per-stage timing lines removed.
pub fn strip_timing(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_time_secs\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn random_matrix(stream: &mut cil_core::rng::Stream, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| stream.normal()).collect())
        .collect()
}

fn to_array(rows: &[Vec<f64>]) -> ndarray::Array2<f64> {
    let cols = rows[0].len();
    ndarray::Array2::from_shape_vec((rows.len(), cols), rows.concat()).unwrap()
}

fn chunk(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub const TOY_SAMPLES: usize = 5;
pub const TOY_CLASSES: usize = 3;
pub const TOY_DIM: usize = 8;
pub const TOY_TARGETS: [usize; TOY_SAMPLES] = [0, 1, 2, 1, 0];

/// Relative error of the analytic linear-head gradient (with respect to the
/// class weight rows) against central differences on a toy batch.
pub fn linear_head_gradient_error(seed: u64, tau: f64) -> f64 {
    let mut s = cil_core::rng::Stream::new(seed);
    let x = random_matrix(&mut s, TOY_SAMPLES, TOY_DIM);
    let w = random_matrix(&mut s, TOY_CLASSES, TOY_DIM);
    let analytic = cil_core::learners::cosine_ce_loss(
        to_array(&x).view(),
        to_array(&w).view(),
        &TOY_TARGETS,
        tau,
    )
    .unwrap();
    let numeric = finite_difference(&w.concat(), 1e-6, |flat| {
        cosine_ce_oracle(&x, &chunk(flat, TOY_DIM), &TOY_TARGETS, tau)
    });
    relative_error(analytic.classes.as_slice().unwrap(), &numeric)
}

/// Relative error of the analytic gradient for a trainable projection pair
/// `(P, Q)` stacked on frozen sums `(F, G)`.
pub fn projection_gradient_error(seed: u64, tau: f64) -> f64 {
    let mut s = cil_core::rng::Stream::new(seed);
    let x = random_matrix(&mut s, TOY_SAMPLES, TOY_DIM);
    let t = random_matrix(&mut s, TOY_CLASSES, TOY_DIM);
    let f = random_matrix(&mut s, TOY_DIM, TOY_DIM);
    let g = random_matrix(&mut s, TOY_DIM, TOY_DIM);
    let p = random_matrix(&mut s, TOY_DIM, TOY_DIM);
    let q = random_matrix(&mut s, TOY_DIM, TOY_DIM);
    let analytic = cil_core::learners::projection_ce_loss(
        to_array(&f).view(),
        to_array(&g).view(),
        to_array(&p).view(),
        to_array(&q).view(),
        to_array(&x).view(),
        to_array(&t).view(),
        &TOY_TARGETS,
        tau,
    )
    .unwrap();
    let block = TOY_DIM * TOY_DIM;
    let params: Vec<f64> = p.concat().into_iter().chain(q.concat()).collect();
    let numeric = finite_difference(&params, 1e-6, |flat| {
        let a = mat_add(&f, &chunk(&flat[..block], TOY_DIM));
        let b = mat_add(&g, &chunk(&flat[block..], TOY_DIM));
        let u: Vec<Vec<f64>> = x.iter().map(|xi| mat_vec(&a, xi)).collect();
        let v: Vec<Vec<f64>> = t.iter().map(|tc| mat_vec(&b, tc)).collect();
        cosine_ce_oracle(&u, &v, &TOY_TARGETS, tau)
    });
    let analytic: Vec<f64> = analytic
        .visual
        .iter()
        .chain(analytic.textual.iter())
        .copied()
        .collect();
    relative_error(&analytic, &numeric)
}

fn finite_f32(s: &mut cil_core::rng::Stream) -> f32 {
    loop {
        let v = f32::from_bits(s.next_u64() as u32);
        if v.is_finite() && v != 0.0 {
            return v;
        }
    }
}

/// A valid bank with arbitrary finite bit patterns, unicode class names and
/// random shape, split and text presence.
pub fn random_bank(seed: u64) -> EmbeddingBank {
    use cil_core::Split;
    let mut s = cil_core::rng::Stream::new(seed);
    let dim = 1 + s.below(16) as usize;
    let c = 1 + s.below(6) as usize;
    let n = c + s.below(20) as usize;
    let split = if s.below(2) == 0 {
        Split::Train
    } else {
        Split::Test
    };
    let images = ndarray::Array2::from_shape_fn((n, dim), |_| finite_f32(&mut s));
    // Every class appears at least once so train banks stay valid.
    let mut labels: Vec<u32> = (0..n)
        .map(|i| {
            if i < c {
                i as u32
            } else {
                s.below(c as u64) as u32
            }
        })
        .collect();
    s.shuffle(&mut labels);
    let alphabet = ['a', 'z', '_', ' ', 'é', 'ß', '猫', '🦀'];
    let names = (0..c)
        .map(|_| {
            let len = s.below(12) as usize;
            (0..len)
                .map(|_| alphabet[s.below(alphabet.len() as u64) as usize])
                .collect()
        })
        .collect();
    let text =
        (s.below(2) == 0).then(|| ndarray::Array2::from_shape_fn((c, dim), |_| finite_f32(&mut s)));
    EmbeddingBank::new(images, labels, names, text, split).unwrap()
}

/// True when both banks hold the same values down to the bit.
pub fn bit_identical(a: &EmbeddingBank, b: &EmbeddingBank) -> bool {
    let bits = |m: &ndarray::Array2<f32>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    a.dim() == b.dim()
        && bits(a.images()) == bits(b.images())
        && a.labels() == b.labels()
        && a.class_names() == b.class_names()
        && a.split() == b.split()
        && a.text_embeddings().map(bits) == b.text_embeddings().map(bits)
}
