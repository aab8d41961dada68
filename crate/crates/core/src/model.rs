//! The differentiable pipeline: temporal-convolution encoder, LSTM
//! sequence-to-sequence reconstruction, and a shared MLP projector.
//!
//! A window batch `(batch, L, dim)` becomes latents `z` of shape
//! `(batch, L', K)`, the seq2seq produces reconstructions `z'` of the same
//! shape, and both are projected to unit vectors `q` and `q'`.

use std::path::Path;

use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Reduction, SeriesSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BnMode, BnState, Conv1d, Linear, LstmLayer, ParamStore};
use crate::tape::{Graph, Matrix, Var};

/// Guard added to row norms before normalization.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

/// Static shape of the whole pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub window_length: usize,
    pub blocks: Vec<BlockSpec>,
    pub dropout: f64,
    pub lstm_layers: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
    pub reduction: Reduction,
}

impl EncoderSpec {
    pub fn new(series: &SeriesSpec, model: &ModelConfig, dropout: f64) -> Result<Self> {
        let blocks = (0..model.num_blocks)
            .map(|_| BlockSpec {
                channels: model.channels,
                kernel: model.kernel_size,
                pool: model.pool_width,
            })
            .collect();
        let spec = Self {
            input_dim: series.dim,
            window_length: series.window_length,
            blocks,
            dropout,
            lstm_layers: model.lstm_layers,
            projector_hidden: model.projector_hidden,
            projection_dim: model.projection_dim,
            reduction: model.reduction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::ModelConfig("at least one encoder block is required".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.pool == 0 {
                return Err(Error::ModelConfig(format!("block {i}: channels and pool must be positive")));
            }
            if b.kernel == 0 || b.kernel % 2 == 0 {
                return Err(Error::ModelConfig(format!("block {i}: kernel {} must be odd", b.kernel)));
            }
        }
        if self.blocks.windows(2).any(|w| w[0].channels != w[1].channels) {
            return Err(Error::ModelConfig("all blocks must share one channel width".into()));
        }
        if self.latent_len() == 0 {
            return Err(Error::ModelConfig(format!(
                "window length {} is too short for {} pooling blocks",
                self.window_length,
                self.blocks.len()
            )));
        }
        if self.lstm_layers == 0 || self.projector_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::ModelConfig("lstm layers and projector sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::ModelConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Temporal length `L'` after the encoder.
    pub fn latent_len(&self) -> usize {
        self.blocks.iter().fold(self.window_length, |len, b| len / b.pool)
    }

    /// Latent width `K`, shared by the encoder output and the seq2seq.
    pub fn latent_width(&self) -> usize {
        self.blocks.last().map(|b| b.channels).unwrap_or(0)
    }

    fn projector_input(&self) -> usize {
        match self.reduction {
            Reduction::Flatten => self.latent_len() * self.latent_width(),
            Reduction::Mean => self.latent_width(),
        }
    }
}

#[derive(Clone)]
struct EncoderBlock {
    conv: Conv1d,
    bn: BatchNorm,
    pool: usize,
}

#[derive(Clone)]
struct Layout {
    blocks: Vec<EncoderBlock>,
    enc_lstm: Vec<LstmLayer>,
    dec_lstm: Vec<LstmLayer>,
    dec_out: Linear,
    proj_in: Linear,
    proj_bn: BatchNorm,
    proj_out: Linear,
}

impl Layout {
    fn build(spec: &EncoderSpec, store: &mut ParamStore, bn: &mut Vec<BnState>, rng: &mut impl Rng) -> Self {
        let mut inp = spec.input_dim;
        let mut blocks = Vec::new();
        for (i, b) in spec.blocks.iter().enumerate() {
            blocks.push(EncoderBlock {
                conv: Conv1d::new(store, rng, &format!("encoder.block{i}.conv"), inp, b.channels, b.kernel),
                bn: BatchNorm::new(store, bn, &format!("encoder.block{i}.bn"), b.channels),
                pool: b.pool,
            });
            inp = b.channels;
        }
        let k = spec.latent_width();
        let enc_lstm = (0..spec.lstm_layers)
            .map(|l| LstmLayer::new(store, rng, &format!("seq2seq.encoder.l{l}"), k, k))
            .collect();
        let dec_lstm = (0..spec.lstm_layers)
            .map(|l| LstmLayer::new(store, rng, &format!("seq2seq.decoder.l{l}"), k, k))
            .collect();
        let dec_out = Linear::new(store, rng, "seq2seq.fc", k, k);
        let proj_in = Linear::new(store, rng, "projector.fc1", spec.projector_input(), spec.projector_hidden);
        let proj_bn = BatchNorm::new(store, bn, "projector.bn", spec.projector_hidden);
        let proj_out = Linear::new(store, rng, "projector.fc2", spec.projector_hidden, spec.projection_dim);
        Self {
            blocks,
            enc_lstm,
            dec_lstm,
            dec_out,
            proj_in,
            proj_bn,
            proj_out,
        }
    }
}

/// Nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Encoder latents, `(batch * L', K)` with row `b * L' + t`.
    pub z: Var,
    /// Seq2seq reconstructions, same layout as `z`.
    pub z_rec: Var,
    /// Projector outputs before normalization, `(batch, P)`.
    pub raw: Var,
    pub raw_rec: Var,
    /// Unit-norm projections.
    pub q: Var,
    pub q_rec: Var,
}

/// Plain-value projections of a batch.
#[derive(Clone, Debug)]
pub struct Projections {
    pub q: Matrix,
    pub q_rec: Matrix,
    pub raw: Matrix,
    pub raw_rec: Matrix,
    /// Rows whose pre-normalization norm was exactly zero.
    pub zero_norm_rows: usize,
}

/// Encoder, seq2seq and projector with their normalization statistics and
/// the (optionally frozen) one-class center.
#[derive(Clone)]
pub struct RocaModel {
    spec: EncoderSpec,
    params: ParamStore,
    bn: Vec<BnState>,
    layout: Layout,
    center: Option<Vec<f64>>,
}

impl std::fmt::Debug for RocaModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RocaModel")
            .field("spec", &self.spec)
            .field("params", &self.params.numel())
            .field("center", &self.center.is_some())
            .finish()
    }
}

/// Converts `(batch, L, dim)` windows into the `(batch * L, dim)` layout.
pub fn windows_to_matrix(x: &Array3<f64>) -> Matrix {
    let (b, l, d) = x.dim();
    let flat: Vec<f64> = x.iter().copied().collect();
    Matrix::from_shape_vec((b * l, d), flat).expect("contiguous reshape")
}

impl RocaModel {
    pub fn new(spec: EncoderSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::default();
        let mut bn = Vec::new();
        let layout = Layout::build(&spec, &mut params, &mut bn, rng);
        Ok(Self {
            spec,
            params,
            bn,
            layout,
            center: None,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    pub fn set_center(&mut self, center: Option<Vec<f64>>) {
        self.center = center;
    }

    /// Training-mode forward: batch statistics, dropout, running-stat updates.
    pub fn forward_train(&mut self, g: &mut Graph, x: &Array3<f64>, rng: &mut impl Rng) -> ForwardVars {
        let Self {
            spec,
            params,
            bn,
            layout,
            ..
        } = self;
        let mut mode = BnMode::Train(bn);
        run(spec, layout, params, g, x, &mut mode, Some(rng as &mut dyn rand::RngCore))
    }

    /// Evaluation-mode forward on a caller-provided graph.
    pub fn forward_eval_graph(&self, g: &mut Graph, x: &Array3<f64>) -> ForwardVars {
        let mut mode = BnMode::Eval(&self.bn);
        run(&self.spec, &self.layout, &self.params, g, x, &mut mode, None)
    }

    /// Evaluation-mode projections of a batch.
    pub fn project_eval(&self, x: &Array3<f64>) -> Projections {
        let mut g = Graph::new();
        let fw = self.forward_eval_graph(&mut g, x);
        let raw = g.value(fw.raw).clone();
        let raw_rec = g.value(fw.raw_rec).clone();
        let zero_norm_rows = count_zero_rows(&raw) + count_zero_rows(&raw_rec);
        Projections {
            q: g.value(fw.q).clone(),
            q_rec: g.value(fw.q_rec).clone(),
            raw,
            raw_rec,
            zero_norm_rows,
        }
    }

    /// Evaluation-mode latents `(z, z')` as `(batch, L', K)` arrays.
    pub fn latents_eval(&self, x: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
        let mut g = Graph::new();
        let fw = self.forward_eval_graph(&mut g, x);
        let shape = (x.dim().0, self.spec.latent_len(), self.spec.latent_width());
        let to3 = |m: &Matrix| Array3::from_shape_vec(shape, m.iter().copied().collect()).unwrap();
        (to3(g.value(fw.z)), to3(g.value(fw.z_rec)))
    }
}

fn count_zero_rows(m: &Matrix) -> usize {
    m.rows().into_iter().filter(|r| r.iter().all(|v| *v == 0.0)).count()
}

fn run(
    spec: &EncoderSpec,
    layout: &Layout,
    params: &ParamStore,
    g: &mut Graph,
    x: &Array3<f64>,
    mode: &mut BnMode<'_>,
    mut dropout_rng: Option<&mut dyn rand::RngCore>,
) -> ForwardVars {
    let (batch, len, dim) = x.dim();
    assert_eq!(len, spec.window_length, "window length mismatch");
    assert_eq!(dim, spec.input_dim, "input dimension mismatch");

    // Encoder.
    let mut h = g.constant(windows_to_matrix(x));
    let mut cur_len = len;
    for (i, block) in layout.blocks.iter().enumerate() {
        let y = block.conv.forward(g, params, h, batch, cur_len);
        let y = block.bn.forward(g, params, y, mode);
        let y = g.relu(y);
        let y = g.max_pool(y, batch, cur_len, block.pool);
        cur_len /= block.pool;
        h = match (&mut dropout_rng, i) {
            (Some(rng), 0) if spec.dropout > 0.0 => {
                let keep = 1.0 - spec.dropout;
                let shape = g.shape(y);
                let mask = Matrix::from_shape_fn(shape, |_| {
                    if rng.gen_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                g.mul_const(y, mask)
            }
            _ => y,
        };
    }
    let z = h;
    let steps = cur_len;
    let k = spec.latent_width();

    // Seq2seq encoder over z_1..z_L'.
    let zeros = g.constant(Matrix::zeros((batch, k)));
    let mut hs = vec![zeros; spec.lstm_layers];
    let mut cs = vec![zeros; spec.lstm_layers];
    for t in 0..steps {
        let idx: Vec<usize> = (0..batch).map(|b| b * steps + t).collect();
        let mut inp = g.gather_rows(z, &idx);
        for (l, cell) in layout.enc_lstm.iter().enumerate() {
            let (hn, cn) = cell.step(g, params, inp, hs[l], cs[l]);
            hs[l] = hn;
            cs[l] = cn;
            inp = hn;
        }
    }

    // Decoder from the context state, fed on its own outputs.
    let mut inp = zeros;
    let mut outs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut x_t = inp;
        for (l, cell) in layout.dec_lstm.iter().enumerate() {
            let (hn, cn) = cell.step(g, params, x_t, hs[l], cs[l]);
            hs[l] = hn;
            cs[l] = cn;
            x_t = hn;
        }
        let out = layout.dec_out.forward(g, params, x_t);
        outs.push(out);
        inp = out;
    }
    let stacked = g.concat_rows(&outs);
    let perm: Vec<usize> = (0..batch * steps)
        .map(|r| {
            let (b, t) = (r / steps, r % steps);
            t * batch + b
        })
        .collect();
    let z_rec = g.gather_rows(stacked, &perm);

    let (raw, q) = project(spec, layout, params, g, z, batch, steps, mode);
    let (raw_rec, q_rec) = project(spec, layout, params, g, z_rec, batch, steps, mode);
    ForwardVars {
        z,
        z_rec,
        raw,
        raw_rec,
        q,
        q_rec,
    }
}

#[allow(clippy::too_many_arguments)]
fn project(
    spec: &EncoderSpec,
    layout: &Layout,
    params: &ParamStore,
    g: &mut Graph,
    seq: Var,
    batch: usize,
    steps: usize,
    mode: &mut BnMode<'_>,
) -> (Var, Var) {
    let k = spec.latent_width();
    let flat = match spec.reduction {
        Reduction::Flatten => g.reshape(seq, batch, steps * k),
        Reduction::Mean => {
            let avg = Matrix::from_shape_fn((batch, batch * steps), |(b, r)| {
                if r / steps == b {
                    1.0 / steps as f64
                } else {
                    0.0
                }
            });
            let avg = g.constant(avg);
            g.matmul(avg, seq)
        }
    };
    let h = layout.proj_in.forward(g, params, flat);
    let h = layout.proj_bn.forward(g, params, h, mode);
    let h = g.relu(h);
    let raw = layout.proj_out.forward(g, params, h);
    // The guard keeps an all-zero row finite and of unit norm.
    let shifted = g.add_scalar(raw, NORM_GUARD);
    let q = g.normalize_rows(shifted, 0.0);
    (raw, q)
}

const CHECKPOINT_FORMAT: &str = "roca-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: parameters keyed by module path, normalization
/// statistics, the encoder spec and the frozen center.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: EncoderSpec,
    pub params: Vec<NamedTensor>,
    pub bn: Vec<BnState>,
    pub center: Option<Vec<f64>>,
    /// Free-form provenance (manifest hash, variant, ...).
    #[serde(default)]
    pub meta: std::collections::BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

impl RocaModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|(name, m)| NamedTensor {
                    name: name.to_string(),
                    shape: m.dim(),
                    data: m.iter().copied().collect(),
                })
                .collect(),
            bn: self.bn.clone(),
            center: self.center.clone(),
            meta: Default::default(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = RocaModel::new(ck.spec.clone(), &mut rng)?;
        if model.params.len() != ck.params.len() || model.bn.len() != ck.bn.len() {
            return Err(Error::Checkpoint("parameter count does not match the spec".into()));
        }
        for (id, t) in ck.params.iter().enumerate() {
            if model.params.name(id) != t.name {
                return Err(Error::Checkpoint(format!(
                    "expected `{}` at position {id}, found `{}`",
                    model.params.name(id),
                    t.name
                )));
            }
            let m = Matrix::from_shape_vec(t.shape, t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", t.name)))?;
            if m.dim() != model.params.get(id).dim() {
                return Err(Error::Checkpoint(format!("{}: shape {:?} mismatch", t.name, t.shape)));
            }
            model.params.values_mut()[id] = m;
        }
        for (a, b) in model.bn.iter().zip(&ck.bn) {
            if a.mean.len() != b.mean.len() || a.var.len() != b.var.len() {
                return Err(Error::Checkpoint("normalization statistics mismatch".into()));
            }
        }
        model.bn = ck.bn.clone();
        model.center = ck.center.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &[(&str, String)]) -> Result<()> {
        let mut ck = self.to_checkpoint();
        for (k, v) in meta {
            ck.meta.insert((*k).to_string(), v.clone());
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ck)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

/// Selects windows `idx` of a `(N, L, dim)` array into a new batch.
pub fn gather_windows(windows: &Array3<f64>, idx: &[usize]) -> Array3<f64> {
    windows.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, Profile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_for(profile: Profile) -> EncoderSpec {
        let cfg = ExperimentConfig::for_profile(profile);
        EncoderSpec::new(&cfg.series, &cfg.model, cfg.train.dropout).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, l: usize, d: usize) -> Array3<f64> {
        Array3::from_shape_fn((b, l, d), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn latent_length_for_aiops_profile() {
        let spec = spec_for(Profile::Aiops);
        assert_eq!(spec.latent_len(), 4);
        assert_eq!(spec.latent_width(), 32);
    }

    #[test]
    fn shape_chain_holds_for_every_profile() {
        for p in [Profile::Aiops, Profile::Ucr, Profile::Swat, Profile::Wadi, Profile::Synthetic] {
            let spec = spec_for(p);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = RocaModel::new(spec.clone(), &mut rng).unwrap();
            let x = random_batch(&mut rng, 3, spec.window_length, spec.input_dim);
            let (z, zr) = model.latents_eval(&x);
            assert_eq!(z.dim(), (3, spec.latent_len(), spec.latent_width()), "{p}");
            assert_eq!(z.dim(), zr.dim());
            let pr = model.project_eval(&x);
            assert_eq!(pr.q.dim(), (3, spec.projection_dim));
        }
    }

    #[test]
    fn too_short_window_rejected_at_build_time() {
        let cfg = ExperimentConfig::for_profile(Profile::Aiops);
        let mut series = cfg.series.clone();
        series.window_length = 3;
        series.time_step = 1;
        assert!(matches!(
            EncoderSpec::new(&series, &cfg.model, 0.45),
            Err(Error::ModelConfig(_))
        ));
    }

    #[test]
    fn zero_input_gives_finite_unit_projections() {
        let spec = spec_for(Profile::Aiops);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = RocaModel::new(spec, &mut rng).unwrap();
        let x = Array3::zeros((4, 16, 1));
        let pr = model.project_eval(&x);
        for row in pr.q.rows().into_iter().chain(pr.q_rec.rows()) {
            assert!(row.iter().all(|v| v.is_finite()));
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_is_batch_invariant_and_deterministic() {
        let spec = spec_for(Profile::Aiops);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = RocaModel::new(spec, &mut rng).unwrap();
        // Move the running statistics away from their initial values.
        for _ in 0..3 {
            let x = random_batch(&mut rng, 16, 16, 1);
            let mut g = Graph::new();
            model.forward_train(&mut g, &x, &mut rng);
        }
        let x = random_batch(&mut rng, 8, 16, 1);
        let full = model.project_eval(&x);
        let again = model.project_eval(&x);
        assert_eq!(full.q, again.q);
        let one = model.project_eval(&gather_windows(&x, &[5]));
        for j in 0..full.q.ncols() {
            assert!((one.q[[0, j]] - full.q[[5, j]]).abs() < 1e-5);
            assert!((one.q_rec[[0, j]] - full.q_rec[[5, j]]).abs() < 1e-5);
        }
    }

    #[test]
    fn reconstruction_is_not_identity() {
        let spec = spec_for(Profile::Aiops);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = RocaModel::new(spec, &mut rng).unwrap();
        let x = random_batch(&mut rng, 8, 16, 1);
        let (z, zr) = model.latents_eval(&x);
        assert_eq!(z.dim(), (8, 4, 32));
        assert!((&z - &zr).iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let spec = spec_for(Profile::Synthetic);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = RocaModel::new(spec, &mut rng).unwrap();
        model.set_center(Some(vec![0.25; 16]));
        let x = random_batch(&mut rng, 4, 16, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path, &[("variant", "roca".into())]).unwrap();
        let (back, ck) = RocaModel::load(&path).unwrap();
        assert_eq!(ck.meta["variant"], "roca");
        assert_eq!(back.center(), model.center());
        assert_eq!(back.project_eval(&x).q, model.project_eval(&x).q);
    }

    #[test]
    fn mean_reduction_builds() {
        let cfg = ExperimentConfig::for_profile(Profile::Aiops);
        let mut m = cfg.model.clone();
        m.reduction = Reduction::Mean;
        let spec = EncoderSpec::new(&cfg.series, &m, 0.45).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = RocaModel::new(spec, &mut rng).unwrap();
        let x = random_batch(&mut rng, 3, 16, 1);
        assert_eq!(model.project_eval(&x).q.dim(), (3, 16));
    }
}
