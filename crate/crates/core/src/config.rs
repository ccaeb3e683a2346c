//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use crate::data::{SENSITIVE_ATTR, TARGET_ATTR};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "alpha",
    "gamma",
    "groups",
    "k",
    "epochs",
    "threshold",
    "lr",
    "batch_size",
    "seed",
    "adapt_masks",
    "val_ratio",
    "image_size",
    "channels",
    "patch_size",
    "layers",
    "heads",
    "head_dim",
    "ffn_hidden",
    "num_classes",
    "train_data",
    "target_attr",
    "sensitive_attr",
    "out_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub target_attr: String,
    pub sensitive_attr: String,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_data: None,
            target_attr: TARGET_ATTR.to_owned(),
            sensitive_attr: SENSITIVE_ATTR.to_owned(),
            out_dir: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "alpha" => t.alpha = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "groups" => t.groups = num(key, value)?,
            "k" => t.k = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "threshold" => t.threshold = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "adapt_masks" => t.adapt_masks = num(key, value)?,
            "val_ratio" => t.val_ratio = num(key, value)?,
            "image_size" => m.image_size = num(key, value)?,
            "channels" => m.channels = num(key, value)?,
            "patch_size" => m.patch_size = num(key, value)?,
            "layers" => m.layers = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "head_dim" => m.head_dim = num(key, value)?,
            "ffn_hidden" => m.ffn_hidden = num(key, value)?,
            "num_classes" => m.num_classes = num(key, value)?,
            "train_data" => self.train_data = Some(PathBuf::from(value)),
            "target_attr" => self.target_attr = value.to_owned(),
            "sensitive_attr" => self.sensitive_attr = value.to_owned(),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value. Parsing the snapshot reproduces `self`.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines = vec![
            format!("alpha = {}", t.alpha),
            format!("gamma = {}", t.gamma),
            format!("groups = {}", t.groups),
            format!("k = {}", t.k),
            format!("epochs = {}", t.epochs),
            format!("threshold = {}", t.threshold),
            format!("lr = {}", t.lr),
            format!("batch_size = {}", t.batch_size),
            format!("seed = {}", t.seed),
            format!("adapt_masks = {}", t.adapt_masks),
            format!("val_ratio = {}", t.val_ratio),
            format!("image_size = {}", m.image_size),
            format!("channels = {}", m.channels),
            format!("patch_size = {}", m.patch_size),
            format!("layers = {}", m.layers),
            format!("heads = {}", m.heads),
            format!("head_dim = {}", m.head_dim),
            format!("ffn_hidden = {}", m.ffn_hidden),
            format!("num_classes = {}", m.num_classes),
        ];
        if let Some(p) = path(&self.train_data) {
            lines.push(format!("train_data = {p}"));
        }
        lines.push(format!("target_attr = {}", self.target_attr));
        lines.push(format!("sensitive_attr = {}", self.sensitive_attr));
        if let Some(p) = path(&self.out_dir) {
            lines.push(format!("out_dir = {p}"));
        }
        lines.join("\n") + "\n"
    }
}
