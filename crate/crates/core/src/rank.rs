//! Proposal scoring, likelihood weighting and non-maxima suppression.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{bbox_iou, BBox};
use crate::gestalt::{gestalt_measures, GestaltMeasures, Mask};
use crate::image::SuperpixelGraph;
use crate::proposals::Proposal;

pub const N_MEASURES: usize = 7;
pub const MIN_TRAINING_PAIRS: usize = 8;

/// Maps Gestalt measures to a predicted IoU in `[0, 1]`.
pub trait Scorer: Sync {
    fn score(&self, measures: &GestaltMeasures) -> f64;
}

/// Ridge regression on standardized measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringModel {
    pub feature_means: [f64; N_MEASURES],
    pub feature_scales: [f64; N_MEASURES],
    pub coefficients: [f64; N_MEASURES],
    pub bias: f64,
}

impl ScoringModel {
    pub fn validate(&self) -> Result<()> {
        if self.feature_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("feature scales must be positive".into()));
        }
        let all = self.feature_means.iter().chain(&self.coefficients).chain([&self.bias]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("scoring model has non-finite entries".into()));
        }
        Ok(())
    }

    /// Unclamped linear prediction.
    pub fn predict_raw(&self, measures: &GestaltMeasures) -> f64 {
        let x = measures.to_array();
        self.bias
            + (0..N_MEASURES)
                .map(|j| self.coefficients[j] * (x[j] - self.feature_means[j]) / self.feature_scales[j])
                .sum::<f64>()
    }

    /// Coefficients and intercept on the original measure scale.
    pub fn raw_coefficients(&self) -> ([f64; N_MEASURES], f64) {
        let c: [f64; N_MEASURES] = std::array::from_fn(|j| self.coefficients[j] / self.feature_scales[j]);
        let intercept = self.bias - (0..N_MEASURES).map(|j| c[j] * self.feature_means[j]).sum::<f64>();
        (c, intercept)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

impl Scorer for ScoringModel {
    fn score(&self, measures: &GestaltMeasures) -> f64 {
        self.predict_raw(measures).clamp(0.0, 1.0)
    }
}

/// Fits the scoring model by ridge regression.
///
/// Features are standardized with the population standard deviation and the
/// bias is the target mean. Zero-variance features keep scale 1 and
/// coefficient 0.
pub fn fit_scoring_model(training: &[(GestaltMeasures, f64)], ridge: f64) -> Result<ScoringModel> {
    if training.len() < MIN_TRAINING_PAIRS {
        return Err(Error::Precondition(format!(
            "need at least {MIN_TRAINING_PAIRS} training pairs, got {}",
            training.len()
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
    }
    if training.iter().any(|(m, y)| !y.is_finite() || m.to_array().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidParameter("training data has non-finite values".into()));
    }
    let n = training.len() as f64;
    let rows: Vec<[f64; N_MEASURES]> = training.iter().map(|(m, _)| m.to_array()).collect();
    let y_mean = training.iter().map(|t| t.1).sum::<f64>() / n;
    let means: [f64; N_MEASURES] = std::array::from_fn(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n);
    let mut scales = [1.0; N_MEASURES];
    let mut active = Vec::new();
    for j in 0..N_MEASURES {
        let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * means[j].abs().max(1.0) {
            scales[j] = sd;
            active.push(j);
        } else {
            log::warn!("measure {} has zero variance; its coefficient is fixed at 0", GestaltMeasures::NAMES[j]);
        }
    }

    let p = active.len();
    let mut coefficients = [0.0; N_MEASURES];
    if p > 0 {
        let x = DMatrix::from_fn(rows.len(), p, |i, a| {
            let j = active[a];
            (rows[i][j] - means[j]) / scales[j]
        });
        let yc = DVector::from_iterator(rows.len(), training.iter().map(|t| t.1 - y_mean));
        let gram = x.transpose() * &x / n + DMatrix::identity(p, p) * ridge;
        let rhs = x.transpose() * yc / n;
        let beta = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Numerical(format!("least squares solve failed: {e}")))?,
        };
        for (a, &j) in active.iter().enumerate() {
            coefficients[j] = beta[a];
        }
    }
    let model = ScoringModel { feature_means: means, feature_scales: scales, coefficients, bias: y_mean };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKey {
    Plain,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedProposal {
    #[serde(flatten)]
    pub proposal: Proposal,
    pub measures: GestaltMeasures,
    pub score: f64,
    pub weighted_score: f64,
    pub bbox: BBox,
}

impl RankedProposal {
    pub fn key(&self, key: RankKey) -> f64 {
        match key {
            RankKey::Plain => self.score,
            RankKey::Weighted => self.weighted_score,
        }
    }
}

/// Sorts descending by the key, then by likelihood, then by id list ascending.
pub fn sort_ranked(ranked: &mut [RankedProposal], key: RankKey) {
    ranked.sort_by(|a, b| {
        b.key(key)
            .total_cmp(&a.key(key))
            .then_with(|| b.proposal.likelihood.total_cmp(&a.proposal.likelihood))
            .then_with(|| a.proposal.superpixels.cmp(&b.proposal.superpixels))
    });
}

/// Scores each proposal from its mask and returns them sorted by `key`.
pub fn score_proposals(
    proposals: &[Proposal],
    masks: &[Mask],
    scorer: &dyn Scorer,
    key: RankKey,
) -> Result<Vec<RankedProposal>> {
    if proposals.len() != masks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} proposals but {} masks",
            proposals.len(),
            masks.len()
        )));
    }
    let mut ranked: Vec<RankedProposal> = proposals
        .par_iter()
        .zip(masks)
        .map(|(p, m)| {
            let measures = gestalt_measures(m);
            let score = scorer.score(&measures);
            RankedProposal {
                proposal: p.clone(),
                measures,
                score,
                weighted_score: p.likelihood * score,
                bbox: m.bbox(),
            }
        })
        .collect();
    sort_ranked(&mut ranked, key);
    Ok(ranked)
}

/// Greedy suppression: a proposal is dropped when its box IoU with an already
/// kept proposal exceeds the threshold. At most `limit` proposals are kept.
pub fn suppress(ranked: Vec<RankedProposal>, iou_threshold: f64, limit: usize) -> Vec<RankedProposal> {
    let mut kept: Vec<RankedProposal> = Vec::new();
    for r in ranked {
        if kept.len() == limit {
            break;
        }
        let clash = kept
            .iter()
            .any(|k| bbox_iou(&k.bbox, &r.bbox).expect("mask boxes are well formed") > iou_threshold);
        if !clash {
            kept.push(r);
        }
    }
    kept
}

pub fn non_maxima_suppression(ranked: Vec<RankedProposal>, iou_threshold: f64) -> Vec<RankedProposal> {
    suppress(ranked, iou_threshold, usize::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub key: RankKey,
    pub nms: bool,
    pub iou_threshold: f64,
    pub top_k: usize,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { key: RankKey::Weighted, nms: true, iou_threshold: 0.5, top_k: 200 }
    }
}

/// Masks for proposals over a superpixel graph.
pub fn proposal_masks(proposals: &[Proposal], graph: &SuperpixelGraph) -> Result<Vec<Mask>> {
    proposals
        .par_iter()
        .map(|p| {
            if let Some(&bad) = p.superpixels.iter().find(|&&i| i >= graph.n()) {
                return Err(Error::InvalidParameter(format!(
                    "proposal references superpixel {bad}, label map has {}",
                    graph.n()
                )));
            }
            Mask::from_superpixels(graph, &p.superpixels)
        })
        .collect()
}

/// Scores, sorts, optionally suppresses, and truncates to `top_k`.
pub fn rank_proposals(
    proposals: &[Proposal],
    graph: &SuperpixelGraph,
    scorer: &dyn Scorer,
    opts: RankOptions,
) -> Result<Vec<RankedProposal>> {
    let masks = proposal_masks(proposals, graph)?;
    let ranked = score_proposals(proposals, &masks, scorer, opts.key)?;
    Ok(if opts.nms {
        suppress(ranked, opts.iou_threshold, opts.top_k)
    } else {
        ranked.into_iter().take(opts.top_k).collect()
    })
}

pub fn write_ranked<W: Write>(ranked: &[RankedProposal], mut out: W) -> Result<()> {
    for r in ranked {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ranked<R: BufRead>(input: R) -> Result<Vec<RankedProposal>> {
    crate::proposals::read_json_lines(input)
}
