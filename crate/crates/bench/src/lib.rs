//! Fixtures shared by the benchmarks.

use ddcrp_core::features::{compute_feature_maps, pairwise_distances, superpixel_features};
use ddcrp_core::image::{build_graph, ImageRGB, LabelMap};
use ddcrp_core::slic::slic_superpixels;
use ddcrp_core::synthetic::{generate_scene, SceneSpec};
use ddcrp_core::{DistanceTable, FeatureVector, Mask, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn scene_image(width: usize, height: usize, seed: u64) -> ImageRGB {
    let spec = SceneSpec { width, height, ..SceneSpec::default() };
    generate_scene(&spec, seed).expect("scene fits").image
}

/// Superpixel features and neighbour distances for a generated scene.
pub struct SamplerFixture {
    pub labels: LabelMap,
    pub features: Vec<FeatureVector>,
    pub distances: DistanceTable,
}

pub fn sampler_fixture(width: usize, height: usize, n_target: usize, seed: u64) -> SamplerFixture {
    let image = scene_image(width, height, seed);
    let labels = slic_superpixels(&image, n_target, 45.0, seed).expect("slic");
    let graph = build_graph(&labels);
    let maps = compute_feature_maps(&image);
    let features = superpixel_features(&image, &maps, &labels).expect("features");
    let weights = PipelineConfig::default().features.weights;
    let distances = pairwise_distances(&features, &graph, weights).expect("distances");
    SamplerFixture { labels, features, distances }
}

/// Filled ellipse with semi-axes `a` and `b`.
pub fn ellipse_mask(a: f64, b: f64) -> Mask {
    let (w, h) = ((2.0 * a).ceil() as usize + 2, (2.0 * b).ceil() as usize + 2);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    Mask::from_fn(w, h, |x, y| {
        let (u, v) = ((x as f64 + 0.5 - cx) / a, (y as f64 + 0.5 - cy) / b);
        u * u + v * v <= 1.0
    })
    .expect("non-empty ellipse")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
