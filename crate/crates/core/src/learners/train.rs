//! Mini-batch SGD over cosine-logit cross-entropy.
//!
//! Logits are `tau * cos(u_i, v_c)` for query vectors `u_i` and class
//! vectors `v_c`. The loss is the batch mean of `-log softmax(z_i)[y_i]`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::StageBatchPlan;

/// Loss and its gradients with respect to both sides of the cosine.
#[derive(Debug, Clone)]
pub struct CosineCeGrad {
    pub loss: f64,
    /// d loss / d u, one row per query.
    pub queries: Array2<f64>,
    /// d loss / d v, one row per class.
    pub classes: Array2<f64>,
}

/// Cross-entropy over `tau`-scaled cosine logits.
///
/// `targets[i]` indexes a row of `class_vectors`. Zero-norm rows on either
/// side are a numeric error.
pub fn cosine_ce_loss(
    queries: ArrayView2<'_, f64>,
    class_vectors: ArrayView2<'_, f64>,
    targets: &[usize],
    tau: f64,
) -> Result<CosineCeGrad> {
    let n = queries.nrows();
    let classes = class_vectors.nrows();
    assert_eq!(targets.len(), n, "one target per query");
    assert_eq!(queries.ncols(), class_vectors.ncols(), "dimensions agree");
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }

    let norms = |m: ArrayView2<'_, f64>, what: &str| -> Result<Vec<f64>> {
        m.axis_iter(Axis(0))
            .enumerate()
            .map(|(i, r)| {
                let norm = r.dot(&r).sqrt();
                if norm > 0.0 && norm.is_finite() {
                    Ok(norm)
                } else {
                    Err(Error::Numeric(format!("{what} row {i} has norm {norm}")))
                }
            })
            .collect()
    };
    let u_norm = norms(queries, "query")?;
    let v_norm = norms(class_vectors, "class vector")?;

    let mut u_hat = queries.to_owned();
    for (mut row, &norm) in u_hat.axis_iter_mut(Axis(0)).zip(&u_norm) {
        row /= norm;
    }
    let mut v_hat = class_vectors.to_owned();
    for (mut row, &norm) in v_hat.axis_iter_mut(Axis(0)).zip(&v_norm) {
        row /= norm;
    }
    let cos = u_hat.dot(&v_hat.t());

    // delta[i][c] = tau * (softmax - onehot) / n, i.e. d loss / d cos.
    let mut delta = Array2::<f64>::zeros((n, classes));
    let mut loss = 0.0;
    for i in 0..n {
        let target = targets[i];
        assert!(target < classes, "target {target} out of range");
        let z = cos.row(i).mapv(|c| tau * c);
        let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = max + sum_exp.ln();
        loss += log_sum - z[target];
        for c in 0..classes {
            let p = (z[c] - log_sum).exp();
            let y = if c == target { 1.0 } else { 0.0 };
            delta[[i, c]] = tau * (p - y) / n as f64;
        }
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }

    // d cos(u, v) / d u = (v_hat - cos * u_hat) / |u|, symmetric in v.
    let mut grad_u = delta.dot(&v_hat);
    for (i, &norm) in u_norm.iter().enumerate() {
        let weight: f64 = delta.row(i).dot(&cos.row(i));
        let mut row = grad_u.row_mut(i);
        row.scaled_add(-weight, &u_hat.row(i));
        row /= norm;
    }
    let mut grad_v = delta.t().dot(&u_hat);
    for (c, &norm) in v_norm.iter().enumerate() {
        let weight: f64 = delta.column(c).dot(&cos.column(c));
        let mut row = grad_v.row_mut(c);
        row.scaled_add(-weight, &v_hat.row(c));
        row /= norm;
    }

    Ok(CosineCeGrad {
        loss,
        queries: grad_u,
        classes: grad_v,
    })
}

/// Learning rate for `epoch` (0-based) of `epochs`, annealed from `init_lr`
/// toward 0 along a half cosine.
pub fn cosine_lr(init_lr: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return init_lr;
    }
    0.5 * init_lr * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

/// SGD with heavy-ball momentum and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(num_params: usize, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; num_params],
        }
    }

    /// `v = mu v + g; w -= lr v + lr wd w`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grad.len(), self.velocity.len());
        for ((w, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *w -= lr * (*v + weight_decay * *w);
        }
    }
}

/// Run `plan.epochs` shuffled mini-batch sweeps over `num_samples` samples.
///
/// `loss_grad(params, batch)` returns the batch loss and the gradient with
/// respect to `params`.
pub(crate) fn run_sgd<F>(
    params: &mut [f64],
    num_samples: usize,
    plan: &StageBatchPlan,
    mut loss_grad: F,
) -> Result<()>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
{
    plan.validate()?;
    if plan.epochs == 0 {
        return Ok(());
    }
    if num_samples == 0 {
        return Err(Error::Validation("training pool is empty".into()));
    }
    let mut optimizer = SgdMomentum::new(params.len(), plan.momentum);
    let mut order: Vec<usize> = (0..num_samples).collect();
    for epoch in 0..plan.epochs {
        let lr = cosine_lr(plan.init_lr, epoch, plan.epochs);
        Stream::keyed(plan.seed, &[epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(plan.batch_size) {
            let (loss, grad) = loss_grad(params, batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss is {loss} in epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            optimizer.step(params, &grad, lr, plan.weight_decay);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
        log::debug!(
            "epoch {}/{} lr {lr:.5} loss {:.5}",
            epoch + 1,
            plan.epochs,
            epoch_loss / num_samples as f64
        );
    }
    Ok(())
}

/// Train cosine-classifier weights (one row per class) on `pool` rows with
/// labels given as row indices into `weights`.
pub fn train_linear_epochs(
    mut weights: Array2<f64>,
    pool: ArrayView2<'_, f64>,
    labels: &[usize],
    plan: &StageBatchPlan,
    tau: f64,
) -> Result<Array2<f64>> {
    if pool.nrows() != labels.len() {
        return Err(Error::Validation(format!(
            "{} pool rows for {} labels",
            pool.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= weights.nrows()) {
        return Err(Error::Validation(format!("label {bad} has no weight row")));
    }
    let shape = weights.dim();
    let params = weights
        .as_slice_mut()
        .expect("owned weights are contiguous");
    run_sgd(params, pool.nrows(), plan, |flat, batch| {
        let w = ArrayView2::from_shape(shape, flat).expect("shape is fixed");
        let x = pool.select(Axis(0), batch);
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let g = cosine_ce_loss(x.view(), w, &y, tau)?;
        Ok((g.loss, g.classes.into_raw_vec_and_offset().0))
    })?;
    Ok(weights)
}
