//! Object proposals from segmentations sampled from a distance dependent
//! Chinese restaurant process (ddCRP) posterior.
//!
//! The pipeline:
//! 1. [`slic`] superpixels and their adjacency ([`image`]);
//! 2. colour-opponent histogram features and neighbour distances ([`features`]);
//! 3. Gibbs sampling of customer links under a Normal-inverse-Wishart
//!    likelihood ([`sampler`], [`niw`], [`partition`]);
//! 4. unique segments across samples become proposals with a likelihood
//!    ([`proposals`]), ranked by shape measures ([`gestalt`], [`rank`]);
//! 5. bounding-box evaluation ([`eval`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod gestalt;
pub mod image;
pub mod niw;
pub mod partition;
pub mod pipeline;
pub mod proposals;
pub mod rank;
pub mod sampler;
pub mod slic;
pub mod synthetic;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use eval::{bbox_iou, BBox, EvalCurves, GroundTruthFrame};
pub use features::{DistanceTable, FeatureVector, FeatureWeights};
pub use gestalt::{gestalt_measures, GestaltMeasures, Mask};
pub use image::{ImageRGB, LabelMap, SuperpixelGraph};
pub use niw::{NiwPrior, TableStats};
pub use partition::{LinkState, TableAssignment};
pub use proposals::Proposal;
pub use rank::{RankKey, RankOptions, RankedProposal, Scorer, ScoringModel};
pub use sampler::{SamplerConfig, SegmentationSample};
