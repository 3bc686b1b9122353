//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use scl_core::augment::{AugmentFamily, AugmentPipeline};
use scl_core::nn::ModelDims;
use scl_core::spiral::{OobPolicy, SpiralConfig, DEFAULT_ANGULAR_RESOLUTION, DEFAULT_RADIUS};
use scl_core::synth::{SyntheticLesionSpec, TexturePattern};
use scl_core::train::{PositiveSource, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn key(key: &str, message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn at(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "key `{key}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub radius: usize,
    pub angular_resolution: usize,
    pub oob_policy: OobPolicy,
    pub view_angles: Vec<f64>,
    pub family: AugmentFamily,
    pub positives: PositiveSource,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub head_epochs: usize,
    pub folds: usize,
    pub label_fraction: f64,
    pub frequencies: Vec<f64>,
    pub per_class: usize,
    pub lesion_size: usize,
    pub core_radius: f64,
    pub texture_amplitude: f64,
    pub texture_pattern: TexturePattern,
    pub noise_sigma: f64,
    pub view_size: usize,
    pub pooled_side: usize,
    pub hidden: usize,
    pub repr: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let lesion = SyntheticLesionSpec::new(0, 0.1);
        let dims = ModelDims::default();
        Self {
            radius: DEFAULT_RADIUS,
            angular_resolution: DEFAULT_ANGULAR_RESOLUTION,
            oob_policy: OobPolicy::ZeroFill,
            view_angles: train.view_angles,
            family: train.family,
            positives: train.positives,
            epochs: train.epochs,
            early_stop_patience: train.early_stop_patience,
            batch_size: train.batch_size,
            tau: train.temperature,
            lr: train.lr,
            weight_decay: train.weight_decay,
            seed: train.seed,
            head_epochs: train.head_epochs,
            folds: 10,
            label_fraction: 1.0,
            frequencies: vec![0.1, 0.4],
            per_class: 64,
            lesion_size: lesion.size,
            core_radius: lesion.core_radius,
            texture_amplitude: lesion.texture_amplitude,
            texture_pattern: lesion.pattern,
            noise_sigma: lesion.noise_sigma,
            view_size: dims.view_size,
            pooled_side: dims.pooled_side,
            hidden: dims.hidden,
            repr: dims.repr,
            proj_hidden: dims.proj_hidden,
            proj_out: dims.proj_out,
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "radius",
    "angular_resolution",
    "oob_policy",
    "view_angles",
    "family",
    "positives",
    "epochs",
    "early_stop_patience",
    "batch_size",
    "tau",
    "lr",
    "weight_decay",
    "seed",
    "head_epochs",
    "folds",
    "label_fraction",
    "frequencies",
    "per_class",
    "lesion_size",
    "core_radius",
    "texture_amplitude",
    "texture_pattern",
    "noise_sigma",
    "view_size",
    "pooled_side",
    "hidden",
    "repr",
    "proj_hidden",
    "proj_out",
    "output_dir",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::key(key, format!("cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|v| parse::<f64>(key, v.trim()))
        .collect()
}

fn render_list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl CliConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "radius" => self.radius = parse(key, v)?,
            "angular_resolution" => self.angular_resolution = parse(key, v)?,
            "oob_policy" => {
                self.oob_policy = match v {
                    "zero" => OobPolicy::ZeroFill,
                    "clamp" => OobPolicy::Clamp,
                    _ => return Err(ConfigError::key(key, format!("expected zero or clamp, got `{v}`"))),
                }
            }
            "view_angles" => self.view_angles = parse_list(key, v)?,
            "family" => {
                self.family = match v {
                    "nia" => AugmentFamily::Nia,
                    "mia" => AugmentFamily::Mia,
                    "mixed" => AugmentFamily::Mixed,
                    _ => return Err(ConfigError::key(key, format!("expected nia, mia or mixed, got `{v}`"))),
                }
            }
            "positives" => {
                self.positives = match v {
                    "augmentation" => PositiveSource::Augmentation,
                    "rotation" => PositiveSource::Rotation,
                    _ => return Err(ConfigError::key(key, format!("expected augmentation or rotation, got `{v}`"))),
                }
            }
            "texture_pattern" => {
                self.texture_pattern = match v {
                    "radial" => TexturePattern::Radial,
                    "planar" => TexturePattern::Planar,
                    _ => return Err(ConfigError::key(key, format!("expected radial or planar, got `{v}`"))),
                }
            }
            "epochs" => self.epochs = parse(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "head_epochs" => self.head_epochs = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "label_fraction" => self.label_fraction = parse(key, v)?,
            "frequencies" => self.frequencies = parse_list(key, v)?,
            "per_class" => self.per_class = parse(key, v)?,
            "lesion_size" => self.lesion_size = parse(key, v)?,
            "core_radius" => self.core_radius = parse(key, v)?,
            "texture_amplitude" => self.texture_amplitude = parse(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "view_size" => self.view_size = parse(key, v)?,
            "pooled_side" => self.pooled_side = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "repr" => self.repr = parse(key, v)?,
            "proj_hidden" => self.proj_hidden = parse(key, v)?,
            "proj_out" => self.proj_out = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "workers" => self.workers = parse(key, v)?,
            _ => return Err(ConfigError::key(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError {
                line: None,
                key: None,
                message: format!("override `{o}` is not key=value"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("radius", self.radius),
            ("angular_resolution", self.angular_resolution),
            ("per_class", self.per_class),
            ("lesion_size", self.lesion_size),
            ("view_size", self.view_size),
            ("pooled_side", self.pooled_side),
            ("hidden", self.hidden),
            ("repr", self.repr),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
            ("workers", self.workers),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::key(key, "must be positive"));
            }
        }
        if self.view_size % self.pooled_side != 0 {
            return Err(ConfigError::key("pooled_side", "must divide view_size"));
        }
        if self.folds < 2 {
            return Err(ConfigError::key("folds", "must be at least 2"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(ConfigError::key("label_fraction", "must lie in (0, 1]"));
        }
        if self.view_angles.is_empty() || self.view_angles.iter().any(|a| !a.is_finite()) {
            return Err(ConfigError::key("view_angles", "needs finite angles"));
        }
        if self.positives == PositiveSource::Rotation && self.view_angles.len() < 2 {
            return Err(ConfigError::key("positives", "rotation needs at least two view_angles"));
        }
        if self.frequencies.len() < 2 {
            return Err(ConfigError::key("frequencies", "needs one frequency per class, at least two"));
        }
        if !(self.core_radius > 0.0) {
            return Err(ConfigError::key("core_radius", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude) {
            return Err(ConfigError::key("texture_amplitude", "must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(ConfigError::key("noise_sigma", "must be non-negative"));
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::key(self.train_key_hint(), e.to_string()))?;
        for spec in self.lesion_specs() {
            spec.validate().map_err(|e| ConfigError::key("frequencies", e.to_string()))?;
        }
        Ok(())
    }

    fn train_key_hint(&self) -> &'static str {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            "batch_size"
        } else if self.early_stop_patience == 0 {
            "early_stop_patience"
        } else if !(self.tau > 0.0) {
            "tau"
        } else if !(self.lr >= 0.0) {
            "lr"
        } else {
            "weight_decay"
        }
    }

    pub fn spiral_config(&self) -> SpiralConfig {
        SpiralConfig {
            radius: self.radius,
            angular_resolution: self.angular_resolution,
            rotation_deg: 0.0,
            oob_policy: self.oob_policy,
        }
    }

    pub fn pipeline(&self) -> AugmentPipeline {
        AugmentPipeline::for_family(self.family)
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            view_size: self.view_size,
            pooled_side: self.pooled_side,
            hidden: self.hidden,
            repr: self.repr,
            proj_hidden: self.proj_hidden,
            proj_out: self.proj_out,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            early_stop_patience: self.early_stop_patience,
            batch_size: self.batch_size,
            temperature: self.tau,
            lr: self.lr,
            weight_decay: self.weight_decay,
            family: self.family,
            view_angles: self.view_angles.clone(),
            positives: self.positives,
            seed: self.seed,
            head_epochs: self.head_epochs,
            dims: self.model_dims(),
        }
    }

    pub fn lesion_specs(&self) -> Vec<SyntheticLesionSpec> {
        self.frequencies
            .iter()
            .enumerate()
            .map(|(class, &f)| SyntheticLesionSpec {
                size: self.lesion_size,
                core_radius: self.core_radius,
                texture_amplitude: self.texture_amplitude,
                pattern: self.texture_pattern,
                noise_sigma: self.noise_sigma,
                ..SyntheticLesionSpec::new(class, f)
            })
            .collect()
    }

    /// Canonical text form, hashed into run manifests. The output directory and
    /// worker count are left out since neither changes any produced byte.
    pub fn to_text(&self) -> String {
        let family = match self.family {
            AugmentFamily::Nia => "nia",
            AugmentFamily::Mia => "mia",
            AugmentFamily::Mixed => "mixed",
        };
        let positives = match self.positives {
            PositiveSource::Augmentation => "augmentation",
            PositiveSource::Rotation => "rotation",
        };
        let pattern = match self.texture_pattern {
            TexturePattern::Radial => "radial",
            TexturePattern::Planar => "planar",
        };
        let oob = match self.oob_policy {
            OobPolicy::ZeroFill => "zero",
            OobPolicy::Clamp => "clamp",
        };
        let values: Vec<(&str, String)> = vec![
            ("radius", self.radius.to_string()),
            ("angular_resolution", self.angular_resolution.to_string()),
            ("oob_policy", oob.to_string()),
            ("view_angles", render_list(&self.view_angles)),
            ("family", family.to_string()),
            ("positives", positives.to_string()),
            ("epochs", self.epochs.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("tau", self.tau.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("head_epochs", self.head_epochs.to_string()),
            ("folds", self.folds.to_string()),
            ("label_fraction", self.label_fraction.to_string()),
            ("frequencies", render_list(&self.frequencies)),
            ("per_class", self.per_class.to_string()),
            ("lesion_size", self.lesion_size.to_string()),
            ("core_radius", self.core_radius.to_string()),
            ("texture_amplitude", self.texture_amplitude.to_string()),
            ("texture_pattern", pattern.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("view_size", self.view_size.to_string()),
            ("pooled_side", self.pooled_side.to_string()),
            ("hidden", self.hidden.to_string()),
            ("repr", self.repr.to_string()),
            ("proj_hidden", self.proj_hidden.to_string()),
            ("proj_out", self.proj_out.to_string()),
        ];
        values.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses configuration text over the defaults. Later lines win.
pub fn parse_config(text: &str) -> Result<CliConfig, ConfigError> {
    let mut cfg = CliConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
            line: Some(n + 1),
            key: None,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        cfg.set(key.trim(), value).map_err(|e| e.at(n + 1))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<CliConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        key: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert_eq!((cfg.radius, cfg.angular_resolution), (46, 12));
        assert_eq!((cfg.tau, cfg.lr, cfg.weight_decay, cfg.batch_size), (0.07, 1e-3, 1e-4, 64));
        assert_eq!((cfg.epochs, cfg.early_stop_patience, cfg.view_size), (1000, 50, 224));
    }

    #[test]
    fn default_tau_is_a_no_op() {
        assert_eq!(parse_config("tau = 0.07\n").unwrap(), CliConfig::default());
    }

    #[test]
    fn negative_radius_names_the_key() {
        let e = parse_config("# comment\nradius = -5\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.key.as_deref(), Some("radius"));
        assert!(e.to_string().contains("radius"));
    }

    #[test]
    fn unknown_key_rejected() {
        let e = parse_config("radius = 4\ncolour = blue\n").unwrap_err();
        assert_eq!((e.line, e.key.as_deref()), (Some(2), Some("colour")));
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn validation_reports_keys() {
        assert_eq!(parse_config("batch_size = 6\n").unwrap().batch_size, 6);
        assert_eq!(parse_config("batch_size = 5\n").unwrap_err().key.as_deref(), Some("batch_size"));
        assert_eq!(parse_config("pooled_side = 30\n").unwrap_err().key.as_deref(), Some("pooled_side"));
        assert_eq!(parse_config("label_fraction = 0\n").unwrap_err().key.as_deref(), Some("label_fraction"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = CliConfig::default();
        cfg.apply_overrides(&["view_angles=0,50,90".into(), "family=mia".into(), "oob_policy=clamp".into()])
            .unwrap();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        let keys: Vec<_> = KEYS.iter().filter(|&&k| k != "output_dir" && k != "workers").collect();
        assert_eq!(cfg.to_text().lines().count(), keys.len());
        for (line, key) in cfg.to_text().lines().zip(keys) {
            assert!(line.starts_with(&format!("{key} = ")));
        }
    }
}
