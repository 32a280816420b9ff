//! JSON run configuration. Unknown keys are rejected; every field other than
//! the dataset geometry has a default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::frames::RawFormat;
use crate::error::{Error, Result};
use crate::rm::{DEFAULT_CTU, DEFAULT_LAMBDA_BITS, MAX_LAMBDA_BITS};
use crate::tensor::BorderMode;
use crate::training::{QpBand, TrainConfig};

/// What the decoder does with the network output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterMode {
    /// Unfiltered reconstruction.
    #[serde(rename = "none")]
    None,
    /// Network output everywhere.
    #[serde(rename = "cnn")]
    Cnn,
    /// Network output scaled by a signalled λ per component.
    #[default]
    #[serde(rename = "cnn+rm")]
    CnnRm,
    /// One on/off flag per frame.
    #[serde(rename = "cnn+frame-control")]
    CnnFrameControl,
    /// One on/off flag per CTU.
    #[serde(rename = "cnn+ctu-control")]
    CnnCtuControl,
}

impl FilterMode {
    pub const ALL: [FilterMode; 5] = [
        FilterMode::None,
        FilterMode::Cnn,
        FilterMode::CnnRm,
        FilterMode::CnnFrameControl,
        FilterMode::CnnCtuControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::Cnn => "cnn",
            FilterMode::CnnRm => "cnn+rm",
            FilterMode::CnnFrameControl => "cnn+frame-control",
            FilterMode::CnnCtuControl => "cnn+ctu-control",
        }
    }

    pub fn code(self) -> u8 {
        FilterMode::ALL.iter().position(|&m| m == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        FilterMode::ALL.get(code as usize).copied()
    }

    pub fn uses_network(self) -> bool {
        self != FilterMode::None
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FilterMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Raw original sequences used for training.
    #[serde(default)]
    pub train: Vec<PathBuf>,
    /// Raw original sequences used by `filter` and `eval`.
    #[serde(default)]
    pub eval: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
    /// Files carry 4:2:0 chroma after each luma plane.
    #[serde(default)]
    pub chroma: bool,
    /// Training patches sampled from the train set.
    #[serde(default = "default_patches")]
    pub patches: usize,
}

fn default_patches() -> usize {
    200
}

impl DatasetConfig {
    pub fn format(&self) -> RawFormat {
        RawFormat {
            width: self.width,
            height: self.height,
            chroma: self.chroma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub mode: FilterMode,
    /// Border handling when filtering block by block.
    pub border: BorderMode,
    /// Filter independent `block × block` tiles instead of the whole frame.
    pub block: Option<usize>,
    /// Toy-codec QP; defaults to the training band's representative QP.
    pub qp: Option<u8>,
    pub lambda_bits: u8,
    pub ctu: usize,
    /// Model used for every QP unless `band_weights` has an entry.
    pub weights: Option<PathBuf>,
    pub band_weights: BTreeMap<QpBand, PathBuf>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mode: FilterMode::default(),
            border: BorderMode::default(),
            block: None,
            qp: None,
            lambda_bits: DEFAULT_LAMBDA_BITS,
            ctu: DEFAULT_CTU,
            weights: None,
            band_weights: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness for the run.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.train.iter_mut().chain(cfg.dataset.eval.iter_mut()).for_each(|p| resolve(base, p));
        if let Some(w) = &mut cfg.filter.weights {
            resolve(base, w);
        }
        cfg.filter.band_weights.values_mut().for_each(|p| resolve(base, p));
        resolve(base, &mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.width == 0 || self.dataset.height == 0 {
            return Err(Error::Config("dataset width and height must be positive".into()));
        }
        self.train.validate()?;
        let f = &self.filter;
        if f.lambda_bits == 0 || f.lambda_bits > MAX_LAMBDA_BITS {
            return Err(Error::Config(format!("lambda_bits must be in 1..={MAX_LAMBDA_BITS}")));
        }
        if f.ctu == 0 || !f.ctu.is_multiple_of(2) {
            return Err(Error::Config(format!("ctu must be a positive even size, got {}", f.ctu)));
        }
        if f.block == Some(0) {
            return Err(Error::Config("block size must be positive".into()));
        }
        if let Some(q) = f.qp {
            if q > crate::codec::QP_MAX {
                return Err(Error::Config(format!("qp {q} outside [0, {}]", crate::codec::QP_MAX)));
            }
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// QP used by `filter`.
    pub fn filter_qp(&self) -> u8 {
        self.filter.qp.unwrap_or_else(|| self.train.band.representative_qp())
    }

    /// Weight file serving `qp`.
    pub fn weights_for(&self, qp: u8) -> Result<&Path> {
        self.filter
            .band_weights
            .get(&QpBand::from_qp(qp))
            .or(self.filter.weights.as_ref())
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("no weight file configured for QP {qp}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_defaults() {
        let c = RunConfig::from_json(r#"{"dataset": {"width": 64, "height": 32}}"#).unwrap();
        assert_eq!(c.filter.mode, FilterMode::CnnRm);
        assert_eq!(c.filter.lambda_bits, 5);
        assert_eq!(c.dataset.patches, 200);
        assert_eq!(c.filter_qp(), 37);
        assert!(c.weights_for(37).is_err());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_json(r#"{"dataset": {"width": 64, "height": 32}, "extra": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"width": 64, "height": 32, "fps": 30}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"width": 64, "height": 32}, "filter": {"ctu": 63}}"#).is_err());
        let e = RunConfig::from_json(r#"{"dataset": {"width": 0, "height": 32}}"#).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn modes_and_band_weights() {
        for m in FilterMode::ALL {
            assert_eq!(m.as_str().parse::<FilterMode>().unwrap(), m);
            assert_eq!(FilterMode::from_code(m.code()), Some(m));
        }
        let c = RunConfig::from_json(
            r#"{"dataset": {"width": 8, "height": 8},
                "filter": {"mode": "cnn+ctu-control", "weights": "all.dscf", "band_weights": {"low": "low.dscf"}}}"#,
        )
        .unwrap();
        assert_eq!(c.filter.mode, FilterMode::CnnCtuControl);
        assert_eq!(c.weights_for(22).unwrap(), Path::new("low.dscf"));
        assert_eq!(c.weights_for(37).unwrap(), Path::new("all.dscf"));
    }
}
