//! End-to-end composition: superpixels, features, sampling, proposals, ranking.

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::eval::GroundTruthFrame;
use crate::features::{compute_feature_maps, pairwise_distances, superpixel_features, DistanceTable, FeatureVector};
use crate::gestalt::{gestalt_measures, GestaltMeasures, Mask};
use crate::image::{build_graph, ImageRGB, LabelMap, SuperpixelGraph};
use crate::proposals::{extract_proposals, filter_by_size, Proposal};
use crate::rank::{proposal_masks, rank_proposals, RankedProposal, Scorer};
use crate::sampler::{sample_posterior, SegmentationSample};
use crate::slic::slic_superpixels;

/// Everything produced up to and including the size-filtered proposals.
#[derive(Debug, Clone)]
pub struct ProposalRun {
    pub label_map: LabelMap,
    pub graph: SuperpixelGraph,
    pub features: Vec<FeatureVector>,
    pub distances: DistanceTable,
    pub samples: Vec<SegmentationSample>,
    pub proposals: Vec<Proposal>,
}

/// Uses the given label map, or runs SLIC with the configured settings.
pub fn superpixels(image: &ImageRGB, labels: Option<LabelMap>, config: &PipelineConfig) -> Result<LabelMap> {
    match labels {
        Some(l) => {
            l.check_dims(image)?;
            Ok(l)
        }
        None => {
            let sp = &config.superpixels;
            slic_superpixels(image, sp.n_target, sp.compactness, sp.seed)
        }
    }
}

pub fn propose(image: &ImageRGB, labels: Option<LabelMap>, config: &PipelineConfig) -> Result<ProposalRun> {
    config.validate()?;
    let label_map = superpixels(image, labels, config)?;
    let graph = build_graph(&label_map);
    let maps = compute_feature_maps(image);
    let features = superpixel_features(image, &maps, &label_map)?;
    let distances = pairwise_distances(&features, &graph, config.features.weights)?;
    let samples = sample_posterior(&features, &distances, &config.sampler_config()?)?;
    let proposals = filter_by_size(
        extract_proposals(&samples, &graph),
        image.area(),
        config.proposals.min_frac,
        config.proposals.max_frac,
    )?;
    Ok(ProposalRun { label_map, graph, features, distances, samples, proposals })
}

/// Full pipeline: proposals followed by ranking with the configured options.
pub fn propose_and_rank(
    image: &ImageRGB,
    labels: Option<LabelMap>,
    config: &PipelineConfig,
    scorer: &dyn Scorer,
) -> Result<(ProposalRun, Vec<RankedProposal>)> {
    let run = propose(image, labels, config)?;
    let ranked = rank_proposals(&run.proposals, &run.graph, scorer, config.rank_options())?;
    Ok((run, ranked))
}

/// Best mask IoU of a proposal against the ground-truth objects, 0 without objects.
///
/// Objects given only as boxes are treated as filled rectangles.
pub fn best_overlap(mask: &Mask, truth: &GroundTruthFrame) -> Result<f64> {
    let mut best = 0.0f64;
    for o in truth.objects() {
        let iou = match &o.mask {
            Some(m) => mask.iou(m),
            None => {
                let b = o.bbox;
                let rect = Mask::from_fn(mask.width(), mask.height(), |x, y| {
                    (b.x_min..=b.x_max).contains(&x) && (b.y_min..=b.y_max).contains(&y)
                })?;
                mask.iou(&rect)
            }
        };
        best = best.max(iou);
    }
    Ok(best)
}

/// Scorer training pairs: measures of each proposal with its best IoU as target.
pub fn training_pairs(
    proposals: &[Proposal],
    graph: &SuperpixelGraph,
    truth: &GroundTruthFrame,
) -> Result<Vec<(GestaltMeasures, f64)>> {
    let masks = proposal_masks(proposals, graph)?;
    masks
        .par_iter()
        .map(|m| Ok((gestalt_measures(m), best_overlap(m, truth)?)))
        .collect()
}
