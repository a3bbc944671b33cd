//! Declarative experiment description, read from TOML.
//!
//! ```toml
//! head = "isomaxplus"          # softmax | isomax | isomaxplus
//! entropic_scale = 10.0
//! widths = [2, 64, 64]         # input, hidden..., feature
//! scores = ["min_distance", "entropic"]
//! seeds = [0, 1, 2, 3, 4]
//! val_fraction = 0.2
//! split_seed = 0
//! output_dir = "runs/isomaxplus"
//! dump_scores = false
//!
//! [sgd]                        # every key optional
//! learning_rate = 0.1
//! epochs = 30
//! decay_epochs = [15, 20, 25]
//!
//! [in_distribution]
//! kind = "blobs"               # blobs | idx | csv
//! classes = 4
//! dims = 2
//! radius = 4.0
//! sigma = 0.5
//! n_per_class = 500
//!
//! [[ood]]
//! name = "ring"
//! kind = "ring"                # uniform | ring | idx | csv | held_out
//! inner_radius = 8.0
//! outer_radius = 12.0
//! n = 1000
//! seed = 1
//! ```
//!
//! Relative file paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::heads::{HeadKind, DEFAULT_ENTROPIC_SCALE};
use crate::model::SgdConfig;
use crate::scores::ScoreKind;

fn default_entropic_scale() -> f64 {
    DEFAULT_ENTROPIC_SCALE
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub head: HeadKind,
    #[serde(default = "default_entropic_scale")]
    pub entropic_scale: f64,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub sgd: SgdConfig,
    pub in_distribution: InDistributionSpec,
    #[serde(default)]
    pub ood: Vec<OodSpec>,
    pub scores: Vec<ScoreKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dump_scores: bool,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InDistributionSpec {
    Blobs {
        classes: usize,
        dims: usize,
        radius: f64,
        sigma: f64,
        n_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Train on classes `< keep_classes`; the rest feed `held_out` OOD sets.
        #[serde(default)]
        keep_classes: Option<usize>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        keep_classes: Option<usize>,
    },
}

impl InDistributionSpec {
    fn keep_classes(&self) -> Option<usize> {
        match self {
            InDistributionSpec::Blobs { .. } => None,
            InDistributionSpec::Idx { keep_classes, .. }
            | InDistributionSpec::Csv { keep_classes, .. } => *keep_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: OodSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodSource {
    Uniform {
        /// Defaults to the in-distribution input width.
        #[serde(default)]
        dims: Option<usize>,
        low: f64,
        high: f64,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Ring {
        inner_radius: f64,
        outer_radius: f64,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
    /// Classes at or above the in-distribution `keep_classes`.
    HeldOut,
}

/// Loaded data for one config: the in-distribution set and each OOD set.
/// OOD sets are kept apart from anything training reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub in_distribution: Dataset,
    pub ood: Vec<(String, Dataset)>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.in_distribution {
            InDistributionSpec::Blobs { classes, .. } => Some(*classes),
            spec => spec.keep_classes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if !(self.entropic_scale > 0.0) || !self.entropic_scale.is_finite() {
            return cfg_err(format!(
                "entropic_scale {} must be positive",
                self.entropic_scale
            ));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return cfg_err("widths must be a non-empty list of positive sizes".into());
        }
        if self.seeds.is_empty() {
            return cfg_err("at least one seed is required".into());
        }
        if self.scores.is_empty() {
            return cfg_err("at least one score kind is required".into());
        }
        for s in &self.scores {
            if !s.supported_by(self.head) {
                return cfg_err(format!(
                    "score {s} requires a distance-based head, not {}",
                    self.head
                ));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return cfg_err(format!(
                "val_fraction {} must lie in (0, 1)",
                self.val_fraction
            ));
        }
        self.sgd.validate()?;
        if let Some(c) = self.class_count() {
            if c < 2 {
                return cfg_err("at least 2 classes are required".into());
            }
        }
        if let InDistributionSpec::Blobs { dims, sigma, .. } = &self.in_distribution {
            if *dims != self.widths[0] {
                return cfg_err(format!(
                    "blobs have {dims} dims but widths start at {}",
                    self.widths[0]
                ));
            }
            if !(*sigma > 0.0) {
                return cfg_err("blob sigma must be positive".into());
            }
        }
        let mut names = std::collections::HashSet::new();
        for o in &self.ood {
            if o.name.is_empty() || !names.insert(o.name.as_str()) {
                return cfg_err(format!(
                    "OOD names must be unique and non-empty ({:?})",
                    o.name
                ));
            }
            if o.name.contains(['/', '\\']) {
                return cfg_err(format!(
                    "OOD name {:?} may not contain path separators",
                    o.name
                ));
            }
            if matches!(o.source, OodSource::HeldOut)
                && self.in_distribution.keep_classes().is_none()
            {
                return cfg_err(
                    "held_out OOD needs keep_classes on the in-distribution spec".into(),
                );
            }
        }
        Ok(())
    }

    /// Identifies everything that determines a trained model: head, widths,
    /// optimiser, in-distribution data and split. Seeds and output paths
    /// are excluded so one hash covers every checkpoint of a config.
    pub fn training_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct Key<'a> {
            head: HeadKind,
            entropic_scale: f64,
            widths: &'a [usize],
            sgd: &'a SgdConfig,
            in_distribution: &'a InDistributionSpec,
            val_fraction: f64,
            split_seed: u64,
        }
        let key = Key {
            head: self.head,
            entropic_scale: self.entropic_scale,
            widths: &self.widths,
            sgd: &self.sgd,
            in_distribution: &self.in_distribution,
            val_fraction: self.val_fraction,
            split_seed: self.split_seed,
        };
        let bytes = serde_json::to_vec(&key).expect("plain data serialises");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Loads or generates every dataset the config names.
    pub fn prepare_data(&self) -> Result<PreparedData> {
        let (in_distribution, held_out) = match &self.in_distribution {
            InDistributionSpec::Blobs {
                classes,
                dims,
                radius,
                sigma,
                n_per_class,
                seed,
            } => (
                data::gaussian_blobs(*classes, *dims, *radius, *sigma, *n_per_class, *seed)?,
                None,
            ),
            InDistributionSpec::Idx {
                images,
                labels,
                keep_classes,
            } => self.with_held_out(
                data::load_idx(self.resolve(images), self.resolve(labels))?,
                *keep_classes,
            )?,
            InDistributionSpec::Csv { path, keep_classes } => {
                self.with_held_out(data::load_csv(self.resolve(path))?, *keep_classes)?
            }
        };
        if in_distribution.dims() != self.widths[0] {
            return Err(Error::Config(format!(
                "in-distribution data has {} features but widths start at {}",
                in_distribution.dims(),
                self.widths[0]
            )));
        }
        if in_distribution.class_count < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }

        let mut ood = Vec::with_capacity(self.ood.len());
        for spec in &self.ood {
            let ds = match &spec.source {
                OodSource::Uniform {
                    dims,
                    low,
                    high,
                    n,
                    seed,
                } => data::ood_uniform(dims.unwrap_or(self.widths[0]), *low, *high, *n, *seed)?,
                OodSource::Ring {
                    inner_radius,
                    outer_radius,
                    n,
                    seed,
                } => data::ood_ring(self.widths[0], *inner_radius, *outer_radius, *n, *seed)?,
                OodSource::Idx { images } => data::load_idx_images(self.resolve(images))?,
                OodSource::Csv { path } => {
                    let mut ds = data::load_csv(self.resolve(path))?;
                    ds.targets = None;
                    ds.class_count = 0;
                    ds
                }
                OodSource::HeldOut => held_out
                    .clone()
                    .ok_or_else(|| Error::Config("held_out OOD needs keep_classes".into()))?,
            };
            if ds.dims() != self.widths[0] {
                return Err(Error::Config(format!(
                    "OOD set {} has {} features, expected {}",
                    spec.name,
                    ds.dims(),
                    self.widths[0]
                )));
            }
            if ds.is_empty() {
                return Err(Error::Config(format!("OOD set {} is empty", spec.name)));
            }
            ood.push((spec.name.clone(), ds));
        }
        Ok(PreparedData {
            in_distribution,
            ood,
        })
    }

    fn with_held_out(
        &self,
        ds: Dataset,
        keep: Option<usize>,
    ) -> Result<(Dataset, Option<Dataset>)> {
        match keep {
            None => Ok((ds, None)),
            Some(k) => {
                let (inside, outside) = ds.split_classes(k)?;
                Ok((inside, Some(outside)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMALL: &str = r#"
head = "isomaxplus"
widths = [2, 8, 4]
scores = ["min_distance", "entropic"]
seeds = [1, 2]

[sgd]
epochs = 2
decay_epochs = [1]

[in_distribution]
kind = "blobs"
classes = 3
dims = 2
radius = 4.0
sigma = 0.5
n_per_class = 20

[[ood]]
name = "ring"
kind = "ring"
inner_radius = 8.0
outer_radius = 12.0
n = 30
seed = 1

[[ood]]
name = "box"
kind = "uniform"
low = -12.0
high = 12.0
n = 30
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(SMALL, ".").unwrap();
        assert_eq!(cfg.head, HeadKind::IsoMaxPlus);
        assert_eq!(cfg.entropic_scale, 10.0);
        assert_eq!(cfg.sgd.learning_rate, 0.1);
        assert_eq!(cfg.sgd.batch_size, 64);
        assert_eq!(cfg.ood.len(), 2);
        assert!(matches!(
            cfg.ood[1].source,
            OodSource::Uniform { dims: None, .. }
        ));
        let data = cfg.prepare_data().unwrap();
        assert_eq!(data.in_distribution.len(), 60);
        assert_eq!(data.ood[1].1.dims(), 2);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(SMALL, ".").unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, ".").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_single_class() {
        let text = SMALL.replace("classes = 3", "classes = 1");
        let err = ExperimentConfig::from_toml_str(&text, ".").unwrap_err();
        assert!(err.to_string().contains("at least 2 classes"), "{err}");
    }

    #[test]
    fn rejects_min_distance_on_softmax() {
        let text = SMALL.replace("head = \"isomaxplus\"", "head = \"softmax\"");
        assert!(ExperimentConfig::from_toml_str(&text, ".").is_err());
        let text = text.replace("\"min_distance\", ", "");
        assert!(ExperimentConfig::from_toml_str(&text, ".").is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_empty_seeds() {
        assert!(ExperimentConfig::from_toml_str(&format!("bogus = 1\n{SMALL}"), ".").is_err());
        let text = SMALL.replace("seeds = [1, 2]", "seeds = []");
        assert!(ExperimentConfig::from_toml_str(&text, ".").is_err());
    }

    #[test]
    fn hash_ignores_seeds_and_paths() {
        let a = ExperimentConfig::from_toml_str(SMALL, ".").unwrap();
        let mut b = a.clone();
        b.seeds = vec![9];
        b.output_dir = "elsewhere".into();
        assert_eq!(a.training_hash(), b.training_hash());
        b.head = HeadKind::IsoMax;
        assert_ne!(a.training_hash(), b.training_hash());
    }
}
