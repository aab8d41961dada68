//! Experiment configuration.
//!
//! Configs are flat TOML files: every key is a scalar, every key is optional
//! except where a profile cannot supply a default. Unknown keys are rejected
//! so typos surface immediately. See `docs/config.md` for the schema.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset profile: supplies window geometry, model depth and epoch defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Aiops,
    Ucr,
    Swat,
    Wadi,
    #[default]
    Synthetic,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Aiops => "aiops",
            Profile::Ucr => "ucr",
            Profile::Swat => "swat",
            Profile::Wadi => "wadi",
            Profile::Synthetic => "synthetic",
        }
    }

    pub fn window_length(self) -> usize {
        match self {
            Profile::Aiops | Profile::Synthetic => 16,
            Profile::Ucr => 64,
            Profile::Swat | Profile::Wadi => 32,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Profile::Swat => 51,
            Profile::Wadi => 127,
            _ => 1,
        }
    }

    pub fn multivariate(self) -> bool {
        self.dim() > 1
    }

    pub fn default_nu(self) -> f64 {
        match self {
            Profile::Aiops => 0.03,
            Profile::Ucr => 0.0,
            Profile::Swat | Profile::Wadi => 0.001,
            Profile::Synthetic => 0.05,
        }
    }

    pub fn default_epochs(self) -> usize {
        if self.multivariate() {
            100
        } else {
            50
        }
    }

    /// Early stopping is only used on UCR.
    pub fn early_stopping_patience(self) -> Option<usize> {
        (self == Profile::Ucr).then_some(10)
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aiops" => Ok(Profile::Aiops),
            "ucr" => Ok(Profile::Ucr),
            "swat" => Ok(Profile::Swat),
            "wadi" => Ok(Profile::Wadi),
            "synthetic" => Ok(Profile::Synthetic),
            other => Err(Error::validation("profile", format!("unknown profile `{other}`"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Window geometry of one series family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub name: String,
    pub dim: usize,
    pub window_length: usize,
    pub time_step: usize,
}

impl SeriesSpec {
    pub fn new(name: impl Into<String>, dim: usize, window_length: usize, time_step: usize) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            dim,
            window_length,
            time_step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        if self.window_length == 0 {
            return Err(Error::validation("window_length", "must be positive"));
        }
        if self.time_step == 0 {
            return Err(Error::validation("time_step", "must be positive"));
        }
        if self.time_step > self.window_length {
            return Err(Error::validation(
                "time_step",
                format!(
                    "time step {} exceeds window length {}",
                    self.time_step, self.window_length
                ),
            ));
        }
        Ok(())
    }
}

/// Training objective variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// Joint invariance/outlier-exposure loss plus variance term.
    Roca,
    /// Invariance plus variance; no label estimation.
    Coca,
    /// Soft-boundary invariance plus variance. `r` is the fraction of
    /// samples allowed outside the boundary.
    Cocas { r: f64 },
    /// RoCA without the variance term.
    RocaNoV,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Roca => "roca",
            Variant::Coca => "coca",
            Variant::Cocas { .. } => "cocas",
            Variant::RocaNoV => "roca_nov",
        }
    }

    /// Whether this variant estimates latent labels.
    pub fn uses_labels(&self) -> bool {
        matches!(self, Variant::Roca | Variant::RocaNoV)
    }

    pub fn uses_variance(&self) -> bool {
        !matches!(self, Variant::RocaNoV)
    }

    /// Parses a variant name; COCAS needs its boundary fraction.
    pub fn parse(name: &str, r: Option<f64>) -> Result<Self> {
        let v = match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "roca" => Variant::Roca,
            "coca" => Variant::Coca,
            "roca_nov" | "rocanov" => Variant::RocaNoV,
            "cocas" => {
                let r = r.ok_or_else(|| {
                    Error::validation("soft_boundary_r", "required for the cocas variant")
                })?;
                Variant::Cocas { r }
            }
            other => {
                return Err(Error::validation(
                    "variant",
                    format!("unknown variant `{other}` (expected roca, coca, cocas, roca_nov)"),
                ))
            }
        };
        if !matches!(v, Variant::Cocas { .. }) && r.is_some() {
            return Err(Error::validation(
                "soft_boundary_r",
                "only valid for the cocas variant",
            ));
        }
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if let Variant::Cocas { r } = *self {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::validation("soft_boundary_r", format!("{r} not in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn soft_boundary_r(&self) -> Option<f64> {
        match *self {
            Variant::Cocas { r } => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Cocas { r } => write!(f, "cocas(r={r})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Scope over which latent labels are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelScope {
    #[default]
    Batch,
    /// Estimate once per epoch over the full training set.
    Full,
}

/// How the one-class center is refreshed before it freezes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CenterMode {
    #[default]
    Batch,
    Full,
}

/// Which projector output the variance hinge is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceInput {
    /// Projector output before l2 normalization.
    Raw,
    #[default]
    Normalized,
}

/// How the encoder's temporal axis is reduced before projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Flatten,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Assumed contamination ratio.
    pub nu: f64,
    /// Outlier-exposure weight.
    pub mu: f64,
    /// Variance-term weight.
    pub lambda: f64,
    /// Target standard deviation of the variance hinge.
    pub zeta: f64,
    pub epsilon: f64,
    pub warmup_epochs: usize,
    pub center_freeze_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub dropout: f64,
    pub seed: u64,
    pub label_scope: LabelScope,
    pub center_mode: CenterMode,
    pub variance_input: VarianceInput,
    pub early_stopping_patience: Option<usize>,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let warmup = if profile == Profile::Synthetic { 10 } else { 3 };
        Self {
            nu: profile.default_nu(),
            mu: 7.0,
            lambda: 1.0,
            zeta: 1.0,
            epsilon: 1e-4,
            warmup_epochs: warmup,
            center_freeze_epoch: warmup,
            epochs: profile.default_epochs(),
            batch_size: 64,
            learning_rate: if profile == Profile::Synthetic { 1e-4 } else { 5e-4 },
            weight_decay: 5e-4,
            betas: (0.9, 0.99),
            dropout: 0.45,
            seed: 0,
            label_scope: LabelScope::Batch,
            center_mode: CenterMode::Batch,
            variance_input: VarianceInput::Normalized,
            early_stopping_patience: profile.early_stopping_patience(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.nu) {
            return Err(Error::validation("nu", format!("{} not in [0, 1)", self.nu)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::validation("mu", "must be non-negative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda", "must be non-negative"));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::validation("zeta", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("epsilon", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(1e-4..=5e-4).contains(&self.learning_rate) {
            return Err(Error::validation(
                "learning_rate",
                format!("{} outside [1e-4, 5e-4]", self.learning_rate),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay", "must be non-negative"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::validation("betas", "both betas must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must lie in [0, 1)"));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::validation("early_stopping_patience", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub pool_width: usize,
    pub lstm_layers: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
    pub reduction: Reduction,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let multivariate = profile.multivariate();
        Self {
            num_blocks: if multivariate { 3 } else { 2 },
            channels: if multivariate { 64 } else { 32 },
            kernel_size: 7,
            pool_width: 2,
            lstm_layers: 3,
            projector_hidden: 64,
            projection_dim: 16,
            reduction: Reduction::Flatten,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub jitter_sigma: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.03,
            scale_range: (0.9, 1.1),
        }
    }
}

impl AugmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::validation("jitter_sigma", "must be non-negative"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::validation(
                "scale_range",
                format!("[{lo}, {hi}] must be a positive interval"),
            ));
        }
        Ok(())
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub series: SeriesSpec,
    pub train: TrainConfig,
    pub variant: Variant,
    pub model: ModelConfig,
    pub augmentation: AugmentationParams,
    /// Whether the training set is expanded with augmented copies.
    pub augment: bool,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            series: SeriesSpec {
                name: profile.name().to_string(),
                dim: profile.dim(),
                window_length: profile.window_length(),
                time_step: 16,
            },
            train: TrainConfig::for_profile(profile),
            variant: Variant::Roca,
            model: ModelConfig::for_profile(profile),
            augmentation: AugmentationParams::default(),
            augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.series.validate()?;
        self.train.validate()?;
        self.variant.validate()?;
        self.augmentation.validate()?;
        Ok(())
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            profile: Some(self.profile),
            name: Some(self.series.name.clone()),
            dim: Some(self.series.dim),
            window_length: Some(self.series.window_length),
            time_step: Some(self.series.time_step),
            variant: Some(self.variant.name().to_string()),
            soft_boundary_r: self.variant.soft_boundary_r(),
            nu: Some(self.train.nu),
            mu: Some(self.train.mu),
            lambda: Some(self.train.lambda),
            zeta: Some(self.train.zeta),
            epsilon: Some(self.train.epsilon),
            warmup_epochs: Some(self.train.warmup_epochs),
            center_freeze_epoch: Some(self.train.center_freeze_epoch),
            epochs: Some(self.train.epochs),
            batch_size: Some(self.train.batch_size),
            learning_rate: Some(self.train.learning_rate),
            weight_decay: Some(self.train.weight_decay),
            beta1: Some(self.train.betas.0),
            beta2: Some(self.train.betas.1),
            dropout: Some(self.train.dropout),
            seed: Some(self.train.seed),
            label_scope: Some(self.train.label_scope),
            center_mode: Some(self.train.center_mode),
            variance_input: Some(self.train.variance_input),
            early_stopping_patience: Some(self.train.early_stopping_patience.unwrap_or(0)),
            num_blocks: Some(self.model.num_blocks),
            channels: Some(self.model.channels),
            kernel_size: Some(self.model.kernel_size),
            pool_width: Some(self.model.pool_width),
            lstm_layers: Some(self.model.lstm_layers),
            projector_hidden: Some(self.model.projector_hidden),
            projection_dim: Some(self.model.projection_dim),
            reduction: Some(self.model.reduction),
            jitter_sigma: Some(self.augmentation.jitter_sigma),
            scale_min: Some(self.augmentation.scale_range.0),
            scale_max: Some(self.augmentation.scale_range.1),
            augment: Some(self.augment),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("flat config always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        file.resolve()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// On-disk config schema. Absent keys fall back to the profile defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    pub name: Option<String>,
    pub dim: Option<usize>,
    pub window_length: Option<usize>,
    pub time_step: Option<usize>,
    pub variant: Option<String>,
    pub soft_boundary_r: Option<f64>,
    pub nu: Option<f64>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    pub epsilon: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub center_freeze_epoch: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub dropout: Option<f64>,
    pub seed: Option<u64>,
    pub label_scope: Option<LabelScope>,
    pub center_mode: Option<CenterMode>,
    pub variance_input: Option<VarianceInput>,
    /// 0 disables early stopping.
    pub early_stopping_patience: Option<usize>,
    pub num_blocks: Option<usize>,
    pub channels: Option<usize>,
    pub kernel_size: Option<usize>,
    pub pool_width: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub projector_hidden: Option<usize>,
    pub projection_dim: Option<usize>,
    pub reduction: Option<Reduction>,
    pub jitter_sigma: Option<f64>,
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    pub augment: Option<bool>,
}

impl ConfigFile {
    /// Fills defaults from the profile and validates every invariant.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let profile = self.profile.unwrap_or_default();
        let mut cfg = ExperimentConfig::for_profile(profile);

        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src {
                    cfg.$($dst)+ = v;
                }
            };
        }

        set!(name => series.name);
        set!(dim => series.dim);
        set!(window_length => series.window_length);
        set!(time_step => series.time_step);
        set!(nu => train.nu);
        set!(mu => train.mu);
        set!(lambda => train.lambda);
        set!(zeta => train.zeta);
        set!(epsilon => train.epsilon);
        set!(warmup_epochs => train.warmup_epochs);
        set!(epochs => train.epochs);
        set!(batch_size => train.batch_size);
        set!(learning_rate => train.learning_rate);
        set!(weight_decay => train.weight_decay);
        set!(beta1 => train.betas.0);
        set!(beta2 => train.betas.1);
        set!(dropout => train.dropout);
        set!(seed => train.seed);
        set!(label_scope => train.label_scope);
        set!(center_mode => train.center_mode);
        set!(variance_input => train.variance_input);
        set!(num_blocks => model.num_blocks);
        set!(channels => model.channels);
        set!(kernel_size => model.kernel_size);
        set!(pool_width => model.pool_width);
        set!(lstm_layers => model.lstm_layers);
        set!(projector_hidden => model.projector_hidden);
        set!(projection_dim => model.projection_dim);
        set!(reduction => model.reduction);
        set!(jitter_sigma => augmentation.jitter_sigma);
        set!(scale_min => augmentation.scale_range.0);
        set!(scale_max => augmentation.scale_range.1);
        set!(augment => augment);

        // The center freezes together with the end of warm-up unless told otherwise.
        cfg.train.center_freeze_epoch = self
            .center_freeze_epoch
            .unwrap_or(cfg.train.warmup_epochs);
        if let Some(p) = self.early_stopping_patience {
            cfg.train.early_stopping_patience = (p > 0).then_some(p);
        }
        cfg.variant = match self.variant.as_deref() {
            Some(name) => Variant::parse(name, self.soft_boundary_r)?,
            None if self.soft_boundary_r.is_some() => {
                return Err(Error::validation(
                    "soft_boundary_r",
                    "only valid for the cocas variant",
                ))
            }
            None => Variant::Roca,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let file: ConfigFile = toml::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aiops_style_spec_is_valid() {
        let cfg = ExperimentConfig::from_toml("profile = \"aiops\"\nwindow_length = 16\ntime_step = 16\ndim = 1\n").unwrap();
        assert_eq!(cfg.series.window_length, 16);
        assert_eq!(cfg.series.time_step, 16);
        assert_eq!(cfg.series.dim, 1);
        assert_eq!(cfg.model.num_blocks, 2);
    }

    #[test]
    fn step_longer_than_window_names_field() {
        let err = ExperimentConfig::from_toml("window_length = 16\ntime_step = 17\n").unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "time_step"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn absent_zeta_and_epsilon_take_defaults() {
        let cfg = ExperimentConfig::from_toml("profile = \"aiops\"\nnu = 0.1\n").unwrap();
        assert_eq!(cfg.train.zeta, 1.0);
        assert_eq!(cfg.train.epsilon, 1e-4);
        assert_eq!(cfg.train.mu, 7.0);
        assert_eq!(cfg.train.warmup_epochs, 3);
        assert_eq!(cfg.train.center_freeze_epoch, 3);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        let syn = ExperimentConfig::from_toml("nu = 0.1\n").unwrap();
        assert_eq!((syn.train.warmup_epochs, syn.train.learning_rate), (10, 1e-4));
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "nu = = 3").unwrap();
        assert!(matches!(load_config(&path), Err(Error::ConfigParse { .. })));
        std::fs::write(&path, "nuu = 0.1").unwrap();
        assert!(matches!(load_config(&path), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn cocas_requires_r_and_only_cocas_accepts_it() {
        assert!(ExperimentConfig::from_toml("variant = \"cocas\"\n").is_err());
        assert!(ExperimentConfig::from_toml("variant = \"coca\"\nsoft_boundary_r = 0.1\n").is_err());
        let cfg = ExperimentConfig::from_toml("variant = \"cocas\"\nsoft_boundary_r = 0.1\n").unwrap();
        assert_eq!(cfg.variant, Variant::Cocas { r: 0.1 });
        assert!(ExperimentConfig::from_toml("variant = \"cocas\"\nsoft_boundary_r = 0.0\n").is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        for text in [
            "nu = 1.0",
            "zeta = 0.0",
            "epsilon = 0.0",
            "learning_rate = 1e-2",
            "dim = 0",
            "scale_min = 0.0",
            "variant = \"simclr\"",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ExperimentConfig::for_profile(Profile::Swat);
        cfg.variant = Variant::Cocas { r: 0.25 };
        cfg.train.early_stopping_patience = Some(4);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }
}
