//! Objectives over unit-norm projections `q`, `q'` and the one-class center.
//!
//! Every term exists twice: as a plain function over matrices (used for
//! scoring, reporting and tests) and as a tape builder in [`graph`] (used for
//! training). The plain functions are thin wrappers that run the tape
//! builders on constants, so both paths share one definition.
//!
//! Per-sample invariance `l_inv = 2 - sim(q, Ce) - sim(q', Ce)` lies in
//! `[0, 4]`; the outlier-exposure term is its complement `4 - l_inv`; the
//! training score `l_inv - l_oe = 2 l_inv - 4` orders samples exactly like
//! `l_inv`.

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant, VarianceInput};
use crate::error::{Error, Result};
use crate::tape::{Graph, Matrix, Var};

/// Tolerance on unit norms of projections and center.
pub const UNIT_TOL: f64 = 1e-5;

/// Threshold below which a center component counts as zero.
pub const CENTER_EPS: f64 = 1e-4;

fn check_unit_rows(name: &str, m: &Matrix) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::Contract(format!("{name} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn check_unit_center(center: &[f64]) -> Result<()> {
    let n = center.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!("center has norm {n}, expected 1")));
    }
    Ok(())
}

fn check_inputs(q: &Matrix, q_rec: &Matrix, center: &[f64]) -> Result<()> {
    if q.dim() != q_rec.dim() {
        return Err(Error::Contract(format!(
            "q {:?} and q' {:?} differ in shape",
            q.dim(),
            q_rec.dim()
        )));
    }
    if q.ncols() != center.len() {
        return Err(Error::Contract(format!(
            "center has {} components, projections have {}",
            center.len(),
            q.ncols()
        )));
    }
    check_unit_rows("q", q)?;
    check_unit_rows("q'", q_rec)?;
    check_unit_center(center)
}

fn row(values: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, values.len()), values.to_vec()).expect("row vector")
}

fn column(m: &Matrix) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Tape builders for every loss term.
pub mod graph {
    use super::*;

    /// Row-wise dot products with a `1 x P` center: `(N, 1)`.
    pub fn similarity(g: &mut Graph, q: Var, center: Var) -> Var {
        let prod = g.mul_row(q, center);
        g.sum_cols(prod)
    }

    /// Per-sample `2 - sim(q, Ce) - sim(q', Ce)`, shape `(N, 1)`.
    pub fn invariance(g: &mut Graph, q: Var, q_rec: Var, center: Var) -> Var {
        let a = similarity(g, q, center);
        let b = similarity(g, q_rec, center);
        let s = g.add(a, b);
        let neg = g.scale(s, -1.0);
        g.add_scalar(neg, 2.0)
    }

    /// Per-sample `4 - l_inv`.
    pub fn outlier_exposure(g: &mut Graph, l_inv: Var) -> Var {
        let neg = g.scale(l_inv, -1.0);
        g.add_scalar(neg, 4.0)
    }

    /// Mean of `mu * y_i * l_oe_i + (1 - y_i) * l_inv_i`.
    pub fn joint(g: &mut Graph, l_inv: Var, labels: &[u8], mu: f64) -> Var {
        let n = labels.len();
        let l_oe = outlier_exposure(g, l_inv);
        let w_oe = g.constant(Matrix::from_shape_fn((n, 1), |(i, _)| mu * labels[i] as f64));
        let w_inv = g.constant(Matrix::from_shape_fn((n, 1), |(i, _)| 1.0 - labels[i] as f64));
        let a = g.mul(w_oe, l_oe);
        let b = g.mul(w_inv, l_inv);
        let s = g.add(a, b);
        g.mean_all(s)
    }

    /// Mean over dimensions of `max(0, zeta - sqrt(Var_d + eps))`, with the
    /// unbiased per-dimension variance across the batch (0 for one row).
    pub fn variance(g: &mut Graph, x: Var, zeta: f64, eps: f64) -> Var {
        let n = g.shape(x).0;
        let mean = g.mean_rows(x);
        let centered = g.sub_row(x, mean);
        let sq = g.square(centered);
        let var = g.mean_rows(sq);
        let var = if n > 1 {
            g.scale(var, n as f64 / (n as f64 - 1.0))
        } else {
            var
        };
        let var = g.add_scalar(var, eps);
        let std = g.sqrt(var);
        let neg = g.scale(std, -1.0);
        let gap = g.add_scalar(neg, zeta);
        let hinge = g.relu(gap);
        g.mean_all(hinge)
    }

    /// `Qau + 1/(rN) * sum max(0, s_i - Qau)` over an `(N, 1)` score column,
    /// where `Qau` is the `(1 - r)` quantile picked by [`quantile_index`].
    pub fn soft_boundary(g: &mut Graph, scores: Var, r: f64) -> Var {
        let values = column(g.value(scores));
        let n = values.len();
        let idx = quantile_index(&values, 1.0 - r);
        let qau = g.gather_rows(scores, &[idx]);
        let qau_rows = g.gather_rows(scores, &vec![idx; n]);
        let excess = g.sub(scores, qau_rows);
        let hinge = g.relu(excess);
        let total = g.sum_all(hinge);
        let scaled = g.scale(total, 1.0 / (r * n as f64));
        g.add(qau, scaled)
    }

    /// `l_inv - l_oe = 2 l_inv - 4`.
    pub fn training_score(g: &mut Graph, l_inv: Var) -> Var {
        let twice = g.scale(l_inv, 2.0);
        g.add_scalar(twice, -4.0)
    }

    /// Nodes of a full objective.
    #[derive(Clone, Copy, Debug)]
    pub struct TotalVars {
        pub total: Var,
        pub l_inv: Var,
        pub data_term: Var,
        pub var_q: Option<Var>,
        pub var_q_rec: Option<Var>,
    }

    /// Inputs to [`total`].
    pub struct TotalInputs<'a> {
        pub q: Var,
        pub q_rec: Var,
        /// Vectors the variance hinge acts on.
        pub var_q: Var,
        pub var_q_rec: Var,
        pub center: Var,
        /// Latent labels; required by the label-using variants.
        pub labels: Option<&'a [u8]>,
    }

    pub fn total(g: &mut Graph, variant: Variant, inp: &TotalInputs<'_>, cfg: &TrainConfig) -> Result<TotalVars> {
        let l_inv = invariance(g, inp.q, inp.q_rec, inp.center);
        let n = g.shape(l_inv).0;
        let data_term = match variant {
            Variant::Roca | Variant::RocaNoV => {
                let labels = inp.labels.ok_or_else(|| {
                    Error::Contract(format!("variant {variant} requires latent labels"))
                })?;
                if labels.len() != n {
                    return Err(Error::Contract(format!(
                        "{} labels for a batch of {n}",
                        labels.len()
                    )));
                }
                joint(g, l_inv, labels, cfg.mu)
            }
            Variant::Coca => g.mean_all(l_inv),
            Variant::Cocas { r } => {
                let s = training_score(g, l_inv);
                soft_boundary(g, s, r)
            }
        };
        if !variant.uses_variance() || cfg.lambda == 0.0 {
            return Ok(TotalVars {
                total: data_term,
                l_inv,
                data_term,
                var_q: None,
                var_q_rec: None,
            });
        }
        let vq = variance(g, inp.var_q, cfg.zeta, cfg.epsilon);
        let vr = variance(g, inp.var_q_rec, cfg.zeta, cfg.epsilon);
        let both = g.add(vq, vr);
        let weighted = g.scale(both, cfg.lambda / 2.0);
        let total = g.add(data_term, weighted);
        Ok(TotalVars {
            total,
            l_inv,
            data_term,
            var_q: Some(vq),
            var_q_rec: Some(vr),
        })
    }
}

/// Index into the sorted scores used as the `p`-quantile: the lower of the
/// two neighbours, `floor(p * (N - 1))`. Returns a position in the original
/// (unsorted) slice; ties resolve to the lower original index.
pub fn quantile_index(values: &[f64], p: f64) -> usize {
    assert!(!values.is_empty(), "quantile of an empty batch");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let rank = ((p.clamp(0.0, 1.0)) * (values.len() - 1) as f64).floor() as usize;
    order[rank]
}

/// Per-sample invariance values and their mean.
pub fn invariance_term(q: &Matrix, q_rec: &Matrix, center: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_inputs(q, q_rec, center)?;
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(q.clone()), g.constant(q_rec.clone()), g.constant(row(center)));
    let l = graph::invariance(&mut g, a, b, c);
    let values = column(g.value(l));
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    Ok((values, mean))
}

/// Per-sample outlier-exposure values `2 + sim(q, Ce) + sim(q', Ce)`.
pub fn oe_term(q: &Matrix, q_rec: &Matrix, center: &[f64]) -> Result<Vec<f64>> {
    let (l_inv, _) = invariance_term(q, q_rec, center)?;
    Ok(l_inv.into_iter().map(|v| 4.0 - v).collect())
}

pub fn joint_loss(q: &Matrix, q_rec: &Matrix, center: &[f64], labels: &[u8], mu: f64) -> Result<f64> {
    check_inputs(q, q_rec, center)?;
    if labels.len() != q.nrows() {
        return Err(Error::Contract("label count differs from batch size".into()));
    }
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(q.clone()), g.constant(q_rec.clone()), g.constant(row(center)));
    let l = graph::invariance(&mut g, a, b, c);
    let j = graph::joint(&mut g, l, labels, mu);
    Ok(g.value(j)[[0, 0]])
}

/// Per-sample training score `l_inv - l_oe`.
pub fn training_score(q: &Matrix, q_rec: &Matrix, center: &[f64]) -> Result<Vec<f64>> {
    let (l_inv, _) = invariance_term(q, q_rec, center)?;
    Ok(l_inv.into_iter().map(|v| 2.0 * v - 4.0).collect())
}

pub fn variance_term(x: &Matrix, zeta: f64, eps: f64) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let t = graph::variance(&mut g, v, zeta, eps);
    g.value(t)[[0, 0]]
}

pub fn soft_boundary_term(scores: &[f64], r: f64) -> f64 {
    let mut g = Graph::new();
    let s = g.constant(Matrix::from_shape_vec((scores.len(), 1), scores.to_vec()).unwrap());
    let t = graph::soft_boundary(&mut g, s, r);
    g.value(t)[[0, 0]]
}

/// Per-batch loss breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_inv: Vec<f64>,
    pub l_oe: Vec<f64>,
    pub s_train: Vec<f64>,
    pub l_var_q: f64,
    pub l_var_q_rec: f64,
    /// The data term: joint loss, mean invariance or soft-boundary value.
    pub l_joint: f64,
    pub total: f64,
    pub labels: Vec<u8>,
}

impl LossReport {
    pub fn mean_inv(&self) -> f64 {
        self.l_inv.iter().sum::<f64>() / self.l_inv.len().max(1) as f64
    }

    pub fn label_count(&self) -> usize {
        self.labels.iter().map(|&y| y as usize).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.l_joint.is_finite() && self.l_var_q.is_finite() && self.l_var_q_rec.is_finite()
    }

    pub(crate) fn from_graph(
        g: &Graph,
        vars: &graph::TotalVars,
        labels: Vec<u8>,
    ) -> Self {
        let l_inv = column(g.value(vars.l_inv));
        let scalar = |v: Option<Var>| v.map(|v| g.value(v)[[0, 0]]).unwrap_or(0.0);
        Self {
            l_oe: l_inv.iter().map(|v| 4.0 - v).collect(),
            s_train: l_inv.iter().map(|v| 2.0 * v - 4.0).collect(),
            l_inv,
            l_var_q: scalar(vars.var_q),
            l_var_q_rec: scalar(vars.var_q_rec),
            l_joint: g.value(vars.data_term)[[0, 0]],
            total: g.value(vars.total)[[0, 0]],
            labels,
        }
    }
}

/// Batch inputs for [`total_loss`].
pub struct LossInputs<'a> {
    pub q: &'a Matrix,
    pub q_rec: &'a Matrix,
    /// Projector outputs before normalization; the variance hinge uses these
    /// when configured to.
    pub raw: Option<&'a Matrix>,
    pub raw_rec: Option<&'a Matrix>,
    pub center: &'a [f64],
    pub labels: Option<&'a [u8]>,
}

/// Full objective of `variant` on one batch.
pub fn total_loss(variant: Variant, inp: &LossInputs<'_>, cfg: &TrainConfig) -> Result<LossReport> {
    check_inputs(inp.q, inp.q_rec, inp.center)?;
    variant.validate()?;
    let mut g = Graph::new();
    let q = g.constant(inp.q.clone());
    let q_rec = g.constant(inp.q_rec.clone());
    let (var_q, var_q_rec) = match (cfg.variance_input, inp.raw, inp.raw_rec) {
        (VarianceInput::Raw, Some(r), Some(rr)) => (g.constant(r.clone()), g.constant(rr.clone())),
        _ => (q, q_rec),
    };
    let center = g.constant(row(inp.center));
    let vars = graph::total(
        &mut g,
        variant,
        &graph::TotalInputs {
            q,
            q_rec,
            var_q,
            var_q_rec,
            center,
            labels: inp.labels,
        },
        cfg,
    )?;
    let labels = match inp.labels {
        Some(l) if variant.uses_labels() => l.to_vec(),
        _ => vec![0; inp.q.nrows()],
    };
    Ok(LossReport::from_graph(&g, &vars, labels))
}

/// Normalized mean of all rows of `q` and `q'`, with every component pushed
/// to magnitude at least [`CENTER_EPS`]. The flag reports whether the mean
/// was exactly zero and the uniform fallback direction was used.
pub fn compute_center(q: &Matrix, q_rec: &Matrix) -> (Vec<f64>, bool) {
    let p = q.ncols();
    let n = (q.nrows() + q_rec.nrows()) as f64;
    let mut mean = vec![0.0; p];
    for r in q.rows().into_iter().chain(q_rec.rows()) {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = norm(&mean) == 0.0;
    if degenerate {
        mean.iter_mut().for_each(|m| *m += CENTER_EPS);
    }
    let nm = norm(&mean);
    let mut center: Vec<f64> = mean.iter().map(|m| m / nm).collect();
    if center.iter().any(|c| c.abs() < CENTER_EPS) {
        for c in &mut center {
            if c.abs() < CENTER_EPS {
                *c = if *c < 0.0 { -CENTER_EPS } else { CENTER_EPS };
            }
        }
        let nc = norm(&center);
        center.iter_mut().for_each(|c| *c /= nc);
    }
    (center, degenerate)
}

/// Angles and chord lengths of one `(q, q', Ce)` triple on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundProbe {
    /// Angle between `q` and `Ce`.
    pub alpha: f64,
    /// Angle between `q'` and `Ce`.
    pub beta: f64,
    /// Angle between `q` and `q'`.
    pub gamma: f64,
    /// Dihedral angle between the planes `Ce O q` and `Ce O q'`.
    pub theta: f64,
    pub chord_q_center: f64,
    pub chord_q_rec_center: f64,
    pub chord_q_q_rec: f64,
    pub l_inv: f64,
    /// Contrastive error `-sim(q, q')`.
    pub l_sim: f64,
}

impl BoundProbe {
    /// `l_{qCe} + l_{q'Ce} >= l_{qq'}`.
    pub fn chord_inequality_holds(&self, tol: f64) -> bool {
        self.chord_q_center + self.chord_q_rec_center + tol >= self.chord_q_q_rec
    }

    /// `alpha + beta >= gamma`.
    pub fn angle_inequality_holds(&self, tol: f64) -> bool {
        self.alpha + self.beta + tol >= self.gamma
    }

    /// `l_inv - (1 + l_sim)`; positive when the linearized bound holds.
    pub fn linear_bound_gap(&self) -> f64 {
        self.l_inv - (1.0 + self.l_sim)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn bound_probe(q: &[f64], q_rec: &[f64], center: &[f64]) -> BoundProbe {
    let ca = dot(q, center).clamp(-1.0, 1.0);
    let cb = dot(q_rec, center).clamp(-1.0, 1.0);
    let cg = dot(q, q_rec).clamp(-1.0, 1.0);
    let (alpha, beta, gamma) = (ca.acos(), cb.acos(), cg.acos());
    let denom = alpha.sin() * beta.sin();
    let theta = if denom > 1e-12 {
        ((cg - ca * cb) / denom).clamp(-1.0, 1.0).acos()
    } else {
        0.0
    };
    let chord = |c: f64| (2.0 - 2.0 * c).max(0.0).sqrt();
    BoundProbe {
        alpha,
        beta,
        gamma,
        theta,
        chord_q_center: chord(ca),
        chord_q_rec_center: chord(cb),
        chord_q_q_rec: chord(cg),
        l_inv: 2.0 - ca - cb,
        l_sim: -cg,
    }
}
