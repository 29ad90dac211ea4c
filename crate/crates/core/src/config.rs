//! Run configuration: an INI file with `[section]` headers and
//! `key = value` lines, plus `section.key=value` overrides.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown sections and keys are rejected. Stage seeds are not configured
//! directly: each is the global seed plus a fixed offset.

use std::path::{Path, PathBuf};

use ini::Ini;

use crate::classifier::TrainConfig;
use crate::decomposition::{ComposeMode, DecompositionConfig};
use crate::projection::PcaTarget;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Split,
    Augment,
    Decompose,
    Init,
    Train,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Split, Stage::Augment, Stage::Decompose, Stage::Init, Stage::Train];

    pub fn offset(self) -> u64 {
        match self {
            Stage::Split => 1,
            Stage::Augment => 2,
            Stage::Decompose => 3,
            Stage::Init => 4,
            Stage::Train => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::Augment => "augment",
            Stage::Decompose => "decompose",
            Stage::Init => "init",
            Stage::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsConfig {
    /// Image tree with one sub-directory per class.
    pub data_root: Option<PathBuf>,
    /// `DTRC` features used to train the classifier.
    pub features: Option<PathBuf>,
    /// Held-out `DTRC` features; when absent the training set is split.
    pub test_features: Option<PathBuf>,
    /// Row-aligned `DTRC` features used only for PCA and clustering.
    pub decomposition_features: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_fraction: f64,
    pub augment: bool,
    /// Augment the whole manifest first and split afterwards.
    pub augment_before_split: bool,
    pub equalize: bool,
    /// Side length of the raw-pixel features.
    pub image_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_fraction: 0.7,
            augment: true,
            augment_before_split: false,
            equalize: false,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub pca: PcaTarget,
    pub decomposition: DecompositionConfig,
    pub training: TrainConfig,
    /// Width of the optional hidden layer; `None` for a linear head.
    pub hidden_units: Option<usize>,
    pub compose: ComposeMode,
    /// Class name, or an index when no class has that name.
    pub positive_class: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig {
                out_dir: PathBuf::from("detrac-out"),
                ..Default::default()
            },
            data: DataConfig::default(),
            pca: PcaTarget::default(),
            decomposition: DecompositionConfig::default(),
            training: TrainConfig::default(),
            hidden_units: None,
            compose: ComposeMode::default(),
            positive_class: "0".to_string(),
        }
    }
}

fn parse<V: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{section}.{key}: cannot parse {value:?}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{section}.{key}: expected a boolean, found {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = PipelineConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run");
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini_str(&text)
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (lhs, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not section.key=value")))?;
        let (section, key) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not section.key=value")))?;
        self.set(section, key, value)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key {section}.{key}"));
        match section {
            "run" => match key {
                "seed" => self.seed = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "paths" => match key {
                "data_root" => self.paths.data_root = opt_path(value),
                "features" => self.paths.features = opt_path(value),
                "test_features" => self.paths.test_features = opt_path(value),
                "decomposition_features" => self.paths.decomposition_features = opt_path(value),
                "out_dir" => self.paths.out_dir = PathBuf::from(value.trim()),
                _ => return Err(unknown()),
            },
            "data" => match key {
                "train_fraction" => self.data.train_fraction = parse(section, key, value)?,
                "augment" => self.data.augment = parse_bool(section, key, value)?,
                "augment_before_split" => self.data.augment_before_split = parse_bool(section, key, value)?,
                "equalize" => self.data.equalize = parse_bool(section, key, value)?,
                "image_size" => self.data.image_size = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "pca" => match key {
                "components" => self.pca = PcaTarget::Components(parse(section, key, value)?),
                "variance_fraction" => self.pca = PcaTarget::VarianceFraction(parse(section, key, value)?),
                _ => return Err(unknown()),
            },
            "decomposition" => match key {
                "k_per_class" => self.decomposition.k_per_class = parse(section, key, value)?,
                "max_iter" => self.decomposition.max_iter = parse(section, key, value)?,
                "tol" => self.decomposition.tol = parse(section, key, value)?,
                "restarts" => self.decomposition.restarts = parse(section, key, value)?,
                "exchange" => self.decomposition.exchange = parse_bool(section, key, value)?,
                _ => match key.strip_prefix("k.") {
                    Some(class) if !class.is_empty() => {
                        let k = parse(section, key, value)?;
                        self.decomposition.k_overrides.insert(class.to_string(), k);
                    }
                    _ => return Err(unknown()),
                },
            },
            "training" => {
                let t = &mut self.training;
                match key {
                    "learning_rate" => t.learning_rate = parse(section, key, value)?,
                    "head_learning_rate" => t.head_learning_rate = parse(section, key, value)?,
                    "batch_size" => t.batch_size = parse(section, key, value)?,
                    "epochs" => t.epochs = parse(section, key, value)?,
                    "weight_decay" => t.weight_decay = parse(section, key, value)?,
                    "momentum" => t.momentum = parse(section, key, value)?,
                    "lr_drop_factor" => t.lr_drop_factor = parse(section, key, value)?,
                    "lr_drop_period_epochs" => t.lr_drop_period_epochs = parse(section, key, value)?,
                    "shuffle" => t.shuffle = parse_bool(section, key, value)?,
                    "hidden_units" => {
                        let h: usize = parse(section, key, value)?;
                        self.hidden_units = (h > 0).then_some(h);
                    }
                    _ => return Err(unknown()),
                }
            }
            "evaluation" => match key {
                "compose" => self.compose = value.trim().parse()?,
                "positive_class" => self.positive_class = value.trim().to_string(),
                _ => return Err(unknown()),
            },
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage.offset())
    }

    /// Decomposition settings with the stage seed filled in.
    pub fn decomposition_config(&self) -> DecompositionConfig {
        DecompositionConfig {
            seed: self.stage_seed(Stage::Decompose),
            ..self.decomposition.clone()
        }
    }

    /// Training settings with the stage seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(Stage::Train),
            ..self.training.clone()
        }
    }

    /// Checks values and that every configured input path exists.
    pub fn validate(&self) -> Result<()> {
        let f = self.data.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("data.train_fraction must lie in (0, 1), found {f}")));
        }
        if self.data.image_size == 0 {
            return Err(Error::Config("data.image_size must be positive".into()));
        }
        match self.pca {
            PcaTarget::Components(0) => return Err(Error::Config("pca.components must be positive".into())),
            PcaTarget::VarianceFraction(v) if !(v > 0.0 && v <= 1.0) => {
                return Err(Error::Config(format!("pca.variance_fraction must lie in (0, 1], found {v}")))
            }
            _ => {}
        }
        self.decomposition.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.training.validate().map_err(|e| Error::Config(e.to_string()))?;
        let p = &self.paths;
        if p.features.is_none() && p.data_root.is_none() {
            return Err(Error::Config("one of paths.features or paths.data_root is required".into()));
        }
        if p.test_features.is_some() && p.features.is_none() {
            return Err(Error::Config("paths.test_features requires paths.features".into()));
        }
        if p.decomposition_features.is_some() && (p.features.is_none() || p.test_features.is_some()) {
            return Err(Error::Config(
                "paths.decomposition_features needs paths.features and no paths.test_features".into(),
            ));
        }
        for path in [&p.data_root, &p.features, &p.test_features, &p.decomposition_features]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::FileNotFound(path.clone()));
            }
        }
        Ok(())
    }

    /// Fully resolved configuration, loadable with [`Self::from_ini_str`].
    /// Derived stage seeds are listed in leading comments.
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("run")).set("seed", self.seed.to_string());
        ini.with_section(Some("paths"))
            .set("data_root", path_str(&self.paths.data_root))
            .set("features", path_str(&self.paths.features))
            .set("test_features", path_str(&self.paths.test_features))
            .set("decomposition_features", path_str(&self.paths.decomposition_features))
            .set("out_dir", self.paths.out_dir.display().to_string());
        let d = &self.data;
        ini.with_section(Some("data"))
            .set("train_fraction", d.train_fraction.to_string())
            .set("augment", d.augment.to_string())
            .set("augment_before_split", d.augment_before_split.to_string())
            .set("equalize", d.equalize.to_string())
            .set("image_size", d.image_size.to_string());
        match self.pca {
            PcaTarget::Components(n) => ini.with_section(Some("pca")).set("components", n.to_string()),
            PcaTarget::VarianceFraction(v) => ini.with_section(Some("pca")).set("variance_fraction", v.to_string()),
        };
        let k = &self.decomposition;
        let mut sec = ini.with_section(Some("decomposition"));
        sec.set("k_per_class", k.k_per_class.to_string())
            .set("max_iter", k.max_iter.to_string())
            .set("tol", k.tol.to_string())
            .set("restarts", k.restarts.to_string())
            .set("exchange", k.exchange.to_string());
        for (class, n) in &k.k_overrides {
            sec.set(format!("k.{class}"), n.to_string());
        }
        let t = &self.training;
        ini.with_section(Some("training"))
            .set("learning_rate", t.learning_rate.to_string())
            .set("head_learning_rate", t.head_learning_rate.to_string())
            .set("batch_size", t.batch_size.to_string())
            .set("epochs", t.epochs.to_string())
            .set("weight_decay", t.weight_decay.to_string())
            .set("momentum", t.momentum.to_string())
            .set("lr_drop_factor", t.lr_drop_factor.to_string())
            .set("lr_drop_period_epochs", t.lr_drop_period_epochs.to_string())
            .set("shuffle", t.shuffle.to_string())
            .set("hidden_units", self.hidden_units.unwrap_or(0).to_string());
        ini.with_section(Some("evaluation"))
            .set("compose", self.compose.to_string())
            .set("positive_class", self.positive_class.clone());

        let mut out = String::new();
        for stage in Stage::ALL {
            out.push_str(&format!("# seed.{} = {}\n", stage.name(), self.stage_seed(stage)));
        }
        let mut body = Vec::new();
        ini.write_to(&mut body).expect("writing to a Vec cannot fail");
        out.push_str(&String::from_utf8(body).expect("ini output is UTF-8"));
        out
    }
}
