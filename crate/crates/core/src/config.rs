//! Pipeline configuration, stored as TOML.
//!
//! ```toml
//! seed = 42
//!
//! [backbone]
//! kind = "csp"                 # csp | elan | msp
//! stem_channels = 16
//! stage_channels = [16, 32, 64, 128]
//! blocks_per_stage = [1, 2, 2, 1]
//! block_depth = 1              # optional, default 1
//! activation_slope = 0.1       # optional
//!
//! [pyramid]
//! num_paths = 3
//! num_levels = 4
//! path_width = 32
//! level_strides = [32, 16, 8, 4]
//!
//! [head]
//! num_classes = 3
//! conf_threshold = 0.25        # optional
//! iou_threshold = 0.45         # optional
//! # anchors = [[[64, 64], ...], ...]   optional, one list per level
//!
//! [text]
//! tau = 0.5                    # optional
//! # stopword_file = "..."      optional, relative to the config file
//! # exception_file = "..."
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, StageBlockKind};
use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::pyramid::PyramidConfig;
use crate::text::{TextPipeline, DEFAULT_TAU};

pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopword_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_file: Option<PathBuf>,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            tau: DEFAULT_TAU,
            stopword_file: None,
            exception_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Weight seed used when no weight file is given.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub pyramid: PyramidConfig,
    pub head: HeadConfig,
    #[serde(default)]
    pub text: TextConfig,
}

impl PipelineConfig {
    /// The canonical desk-scale configuration for `kind`.
    pub fn desk(kind: StageBlockKind) -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            backbone: BackboneConfig::desk(kind),
            pyramid: PyramidConfig::desk(),
            head: HeadConfig::desk(),
            text: TextConfig::default(),
        }
    }

    /// The desk configuration with every backbone width multiplied by `factor`.
    pub fn desk_scaled(kind: StageBlockKind, factor: usize) -> Self {
        let mut cfg = PipelineConfig::desk(kind);
        cfg.backbone.stem_channels *= factor;
        for c in &mut cfg.backbone.stage_channels {
            *c *= factor;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.pyramid.validate()?;
        self.head.validate(&self.pyramid.level_strides)?;
        if !(self.text.tau > 0.0 && self.text.tau <= 1.0) {
            return Err(Error::config(format!("text.tau = {} must lie in (0, 1]", self.text.tau)));
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, self.to_toml()?.as_bytes())
    }

    /// Stop-words and lemma exceptions, resolving relative file names
    /// against `base` (normally the config file's directory).
    pub fn text_pipeline(&self, base: &Path) -> Result<TextPipeline> {
        let resolve = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
        TextPipeline::from_files(
            resolve(&self.text.stopword_file).as_deref(),
            resolve(&self.text.exception_file).as_deref(),
        )
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_presets_validate_and_round_trip() {
        for kind in [StageBlockKind::Csp, StageBlockKind::Elan, StageBlockKind::Msp] {
            for f in [1, 2, 4] {
                let cfg = PipelineConfig::desk_scaled(kind, f);
                cfg.validate().unwrap();
                let back = PipelineConfig::parse(&cfg.to_toml().unwrap(), "mem").unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"
[backbone]
kind = "elan"
stem_channels = 8
stage_channels = [8, 16, 16, 32]
blocks_per_stage = [1, 1, 1, 1]

[pyramid]
num_paths = 1
num_levels = 2
path_width = 8
level_strides = [32, 16]

[head]
num_classes = 2
"#;
        let cfg = PipelineConfig::parse(text, "mem").unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.backbone.block_depth, 1);
        assert_eq!(cfg.head.conf_threshold, 0.25);
        assert_eq!(cfg.text.tau, 0.5);
    }

    #[test]
    fn errors_name_the_field() {
        let good = PipelineConfig::desk(StageBlockKind::Csp).to_toml().unwrap();
        let odd = good.replace("stage_channels = [16, 32, 64, 128]", "stage_channels = [16, 32, 63, 128]");
        let e = PipelineConfig::parse(&odd, "mem").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("stage 3"), "{e}");
        let typo = good.replace("num_paths", "num_pathz");
        let e = PipelineConfig::parse(&typo, "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("cfg.toml") && e.contains("num_pathz"), "{e}");
        let e = PipelineConfig::parse("seed = \"x\"", "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }
}
