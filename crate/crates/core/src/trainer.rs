//! Alternating optimization: latent labels from the current scores, then one
//! gradient step on the resulting objective.

use std::path::PathBuf;

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{CenterMode, ExperimentConfig, LabelScope, VarianceInput};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::loss::{compute_center, graph, LossReport};
use crate::model::{gather_windows, RocaModel};
use crate::nn::Adam;
use crate::rng::{substream, Stream};
use crate::tape::{Graph, Matrix};

/// Marks the `round(nu * N)` largest scores; ties go to the lower index.
pub fn estimate_labels(scores: &[f64], nu: f64) -> Vec<u8> {
    let k = label_budget(scores.len(), nu);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut y = vec![0u8; scores.len()];
    for &i in order.iter().take(k) {
        y[i] = 1;
    }
    y
}

/// `round(nu * n)`, halves away from zero.
pub fn label_budget(n: usize, nu: f64) -> usize {
    (nu * n as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub total: f64,
    pub data_term: f64,
    pub var_q: f64,
    pub var_q_rec: f64,
    pub mean_inv: f64,
    pub labels: usize,
    pub center_frozen: bool,
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_inv: f64,
    pub sim_q_center: f64,
    pub sim_q_rec_center: f64,
    pub sim_q_q_rec: f64,
    pub labels: usize,
    pub val_inv: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_completed: usize,
    pub center: Option<Vec<f64>>,
    pub center_frozen: bool,
    /// The mean of projections was exactly zero at some center update.
    pub center_fallback_used: bool,
    pub history: Vec<EpochStats>,
    pub batches: Vec<BatchRecord>,
    /// Latent labels of the most recent epoch by training-set index.
    pub last_labels: Vec<u8>,
    pub optimizer_steps: u64,
    pub early_stopped_at: Option<usize>,
    pub best_epoch: Option<usize>,
}

/// Optional side effects of [`fit`].
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where a partial checkpoint goes when training aborts.
    pub abort_checkpoint: Option<PathBuf>,
}

struct Sims {
    q_c: f64,
    qr_c: f64,
    q_qr: f64,
}

fn batch_sims(q: &Matrix, q_rec: &Matrix, center: &[f64]) -> Sims {
    let n = q.nrows() as f64;
    let c = ndarray::ArrayView1::from(center);
    Sims {
        q_c: q.dot(&c).sum() / n,
        qr_c: q_rec.dot(&c).sum() / n,
        q_qr: (q * q_rec).sum() / n,
    }
}

/// Mean invariance per window in evaluation mode, with the given center.
pub fn eval_invariance(model: &RocaModel, windows: &Array3<f64>, center: &[f64], chunk: usize) -> Vec<f64> {
    let n = windows.dim().0;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let p = model.project_eval(&gather_windows(windows, &idx));
        let c = ndarray::ArrayView1::from(center);
        let a = p.q.dot(&c);
        let b = p.q_rec.dot(&c);
        out.extend(a.iter().zip(b.iter()).map(|(x, y)| 2.0 - x - y));
    }
    out
}

fn full_center(model: &RocaModel, windows: &Array3<f64>) -> (Vec<f64>, bool) {
    let n = windows.dim().0;
    let mut qs = Vec::new();
    let mut qrs = Vec::new();
    for start in (0..n).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(n)).collect();
        let p = model.project_eval(&gather_windows(windows, &idx));
        qs.push(p.q);
        qrs.push(p.q_rec);
    }
    let cat = |m: Vec<Matrix>| {
        let views: Vec<_> = m.iter().map(|x| x.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
    };
    compute_center(&cat(qs), &cat(qrs))
}

/// Runs one epoch and appends its records to `state`.
pub fn train_epoch(
    model: &mut RocaModel,
    optimizer: &mut Adam,
    data: &WindowedDataset,
    cfg: &ExperimentConfig,
    state: &mut TrainState,
) -> Result<Vec<LossReport>> {
    let tc = &cfg.train;
    let epoch = state.epochs_completed;
    let n = data.len();
    let bs = tc.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(tc.seed, Stream::Shuffle, epoch as u64));
    // Trailing partial batches are dropped so every step sees a full batch.
    let batches = n / bs;
    let mut dropout_rng = substream(tc.seed, Stream::Dropout, epoch as u64);

    if !state.center_frozen && epoch >= tc.center_freeze_epoch {
        if state.center.is_none() {
            let (c, fb) = full_center(model, &data.windows);
            state.center = Some(c);
            state.center_fallback_used |= fb;
        }
        state.center_frozen = true;
    }
    if !state.center_frozen && tc.center_mode == CenterMode::Full {
        let (c, fb) = full_center(model, &data.windows);
        state.center = Some(c);
        state.center_fallback_used |= fb;
    }

    let labeling = cfg.variant.uses_labels() && epoch >= tc.warmup_epochs;
    let full_labels = if labeling && tc.label_scope == LabelScope::Full {
        let center = match &state.center {
            Some(c) => c.clone(),
            None => full_center(model, &data.windows).0,
        };
        let s: Vec<f64> = eval_invariance(model, &data.windows, &center, 256)
            .into_iter()
            .map(|v| 2.0 * v - 4.0)
            .collect();
        Some(estimate_labels(&s, tc.nu))
    } else {
        None
    };

    state.last_labels = vec![0; n];
    let mut reports = Vec::with_capacity(batches);
    let (mut loss_sum, mut inv_sum, mut lab_sum) = (0.0, 0.0, 0usize);
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for b in 0..batches {
        let idx = &order[b * bs..(b + 1) * bs];
        let x = gather_windows(&data.windows, idx);
        let mut g = Graph::new();
        let fw = model.forward_train(&mut g, &x, &mut dropout_rng);
        if !state.center_frozen && tc.center_mode == CenterMode::Batch {
            let (c, fb) = compute_center(g.value(fw.q), g.value(fw.q_rec));
            state.center = Some(c);
            state.center_fallback_used |= fb;
        }
        let center = state.center.clone().expect("center set before use");
        let ce = g.constant(Matrix::from_shape_vec((1, center.len()), center.clone()).unwrap());

        let labels: Option<Vec<u8>> = if !cfg.variant.uses_labels() {
            None
        } else if !labeling {
            Some(vec![0; bs])
        } else if let Some(full) = &full_labels {
            Some(idx.iter().map(|&i| full[i]).collect())
        } else {
            let l_inv = graph::invariance(&mut g, fw.q, fw.q_rec, ce);
            let s: Vec<f64> = g.value(l_inv).iter().map(|v| 2.0 * v - 4.0).collect();
            Some(estimate_labels(&s, tc.nu))
        };

        let (var_q, var_q_rec) = match tc.variance_input {
            VarianceInput::Raw => (fw.raw, fw.raw_rec),
            VarianceInput::Normalized => (fw.q, fw.q_rec),
        };
        let vars = graph::total(
            &mut g,
            cfg.variant,
            &graph::TotalInputs {
                q: fw.q,
                q_rec: fw.q_rec,
                var_q,
                var_q_rec,
                center: ce,
                labels: labels.as_deref(),
            },
            tc,
        )?;
        let report = LossReport::from_graph(&g, &vars, labels.clone().unwrap_or_else(|| vec![0; bs]));
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: b,
                components: format!(
                    "total={} data={} var_q={} var_q_rec={}",
                    report.total, report.l_joint, report.l_var_q, report.l_var_q_rec
                ),
            });
        }
        let grads = g.backward(vars.total);
        optimizer.update(model.params_mut(), &grads);

        let sims = batch_sims(g.value(fw.q), g.value(fw.q_rec), &center);
        s1 += sims.q_c;
        s2 += sims.qr_c;
        s3 += sims.q_qr;
        loss_sum += report.total;
        inv_sum += report.mean_inv();
        let count = report.label_count();
        lab_sum += count;
        for (&i, &y) in idx.iter().zip(&report.labels) {
            state.last_labels[i] = y;
        }
        log::debug!(
            "epoch {epoch} batch {b}: total {:.5} inv {:.5} labels {count}",
            report.total,
            report.mean_inv()
        );
        state.batches.push(BatchRecord {
            epoch,
            batch: b,
            size: bs,
            total: report.total,
            data_term: report.l_joint,
            var_q: report.l_var_q,
            var_q_rec: report.l_var_q_rec,
            mean_inv: report.mean_inv(),
            labels: count,
            center_frozen: state.center_frozen,
            center,
        });
        reports.push(report);
    }
    let nb = batches.max(1) as f64;
    state.history.push(EpochStats {
        epoch,
        mean_loss: loss_sum / nb,
        mean_inv: inv_sum / nb,
        sim_q_center: s1 / nb,
        sim_q_rec_center: s2 / nb,
        sim_q_q_rec: s3 / nb,
        labels: lab_sum,
        val_inv: None,
    });
    state.epochs_completed += 1;
    state.optimizer_steps = optimizer.steps();
    Ok(reports)
}

/// Trains for the configured number of epochs, with early stopping on the
/// validation mean invariance when a patience is set. On return the model
/// carries the final (frozen) center.
pub fn fit(
    model: &mut RocaModel,
    train: &WindowedDataset,
    validation: Option<&WindowedDataset>,
    cfg: &ExperimentConfig,
    opts: &FitOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    let tc = &cfg.train;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut state = TrainState::default();
    let mut optimizer = Adam::new(model.params(), tc.learning_rate, tc.betas, tc.weight_decay);
    let mut best: Option<(f64, RocaModel, usize)> = None;
    let mut since_best = 0;
    for _ in 0..tc.epochs {
        if let Err(e) = train_epoch(model, &mut optimizer, train, cfg, &mut state) {
            if let Some(path) = &opts.abort_checkpoint {
                model.set_center(state.center.clone());
                let meta = [("status", "aborted".to_string()), ("error", e.to_string())];
                if let Err(save_err) = model.save(path, &meta) {
                    log::error!("could not write partial checkpoint: {save_err}");
                }
            }
            return Err(e);
        }
        let epoch = state.epochs_completed - 1;
        if let (Some(patience), Some(val), Some(center)) = (tc.early_stopping_patience, validation, &state.center) {
            if val.is_empty() {
                continue;
            }
            let v = eval_invariance(model, &val.windows, center, 256);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            state.history.last_mut().unwrap().val_inv = Some(mean);
            // Only frozen-center epochs are comparable.
            if !state.center_frozen {
                continue;
            }
            let improved = best.as_ref().map_or(true, |(b, _, _)| mean < *b);
            if improved {
                let mut snapshot = model.clone();
                snapshot.set_center(state.center.clone());
                best = Some((mean, snapshot, epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    state.early_stopped_at = Some(epoch);
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    match best {
        Some((_, snapshot, epoch)) if state.early_stopped_at.is_some() => {
            *model = snapshot;
            state.best_epoch = Some(epoch);
        }
        _ => model.set_center(state.center.clone()),
    }
    Ok(state)
}
