//! Pipeline configuration as a single strict JSON document.
//!
//! Every key is required and unknown keys are rejected, so a typo cannot
//! silently fall back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureWeights;
use crate::niw::NiwPrior;
use crate::rank::{RankKey, RankOptions};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpixelConfig {
    pub n_target: usize,
    pub compactness: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub weights: FeatureWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub alpha: f64,
    pub a: f64,
    pub m0: [f64; 3],
    pub kappa0: f64,
    /// Row-major.
    pub s0: [[f64; 3]; 3],
    pub v0: f64,
    #[serde(rename = "M", alias = "n_samples")]
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub random_scan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub min_frac: f64,
    pub max_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingConfig {
    /// Scoring model JSON; relative paths resolve against the config file.
    pub scorer: Option<PathBuf>,
    pub use_weighted: bool,
    pub nms: bool,
    pub iou_threshold: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_min: f64,
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub superpixels: SuperpixelConfig,
    pub features: FeatureConfig,
    pub sampler: SamplerSection,
    pub proposals: ProposalConfig,
    pub ranking: RankingConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let niw = NiwPrior::default();
        let s = niw.s0();
        Self {
            superpixels: SuperpixelConfig { n_target: 1000, compactness: 45.0, seed: 0 },
            features: FeatureConfig { weights: FeatureWeights::default() },
            sampler: SamplerSection {
                alpha: 1.0,
                a: 0.05,
                m0: niw.m0(),
                kappa0: niw.kappa0(),
                s0: std::array::from_fn(|r| std::array::from_fn(|c| s[(r, c)])),
                v0: niw.v0(),
                n_samples: 50,
                burn_in: 50,
                seed: 0,
                random_scan: false,
            },
            proposals: ProposalConfig { min_frac: 0.001, max_frac: 0.1 },
            ranking: RankingConfig {
                scorer: None,
                use_weighted: true,
                nms: true,
                iou_threshold: 0.5,
                top_k: 200,
            },
            eval: EvalConfig { iou_min: 0.5, k_max: 200 },
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative scorer path is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let (Some(scorer), Some(dir)) = (&config.ranking.scorer, path.parent()) {
            if scorer.is_relative() {
                config.ranking.scorer = Some(dir.join(scorer));
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let sp = &self.superpixels;
        if sp.n_target == 0 {
            return Err(Error::InvalidParameter("superpixels.n_target must be at least 1".into()));
        }
        if !(sp.compactness > 0.0 && sp.compactness.is_finite()) {
            return Err(Error::InvalidParameter("superpixels.compactness must be positive".into()));
        }
        self.sampler_config()?.validate()?;
        let p = &self.proposals;
        if !(0.0 <= p.min_frac && p.min_frac < p.max_frac && p.max_frac <= 1.0) {
            return Err(Error::InvalidParameter(
                "proposals: require 0 <= min_frac < max_frac <= 1".into(),
            ));
        }
        let r = &self.ranking;
        if !(0.0..=1.0).contains(&r.iou_threshold) {
            return Err(Error::InvalidParameter("ranking.iou_threshold must lie in [0, 1]".into()));
        }
        if r.top_k == 0 {
            return Err(Error::InvalidParameter("ranking.top_k must be at least 1".into()));
        }
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.iou_min) {
            return Err(Error::InvalidParameter("eval.iou_min must lie in [0, 1]".into()));
        }
        if e.k_max == 0 {
            return Err(Error::InvalidParameter("eval.k_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        Ok(SamplerConfig {
            alpha: s.alpha,
            a: s.a,
            niw: NiwPrior::new(s.m0, s.kappa0, s.s0, s.v0)?,
            n_samples: s.n_samples,
            burn_in: s.burn_in,
            seed: s.seed,
            random_scan: s.random_scan,
        })
    }

    pub fn rank_options(&self) -> RankOptions {
        RankOptions {
            key: if self.ranking.use_weighted { RankKey::Weighted } else { RankKey::Plain },
            nms: self.ranking.nms,
            iou_threshold: self.ranking.iou_threshold,
            top_k: self.ranking.top_k,
        }
    }

    /// Sets both the superpixel and the sampler seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.superpixels.seed = seed;
        self.sampler.seed = seed;
        self
    }
}
