//! Per-superpixel feature vectors and the adjacency-restricted distance table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRGB, LabelMap, SuperpixelGraph};

pub const N_BINS: usize = 16;

/// Number of reals in a serialized feature vector: three histograms plus mean RGB.
pub const FEATURE_LEN: usize = 3 * N_BINS + 3;

/// Intensity and opponent-color maps, each with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub intensity: Vec<f64>,
    pub rg_contrast: Vec<f64>,
    pub by_contrast: Vec<f64>,
}

/// `I = (r+g+b)/3`, `RG = (r-g+1)/2`, `BY = (b-(r+g)/2+1)/2`, each clamped to `[0, 1]`.
pub fn opponent_channels([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        ((r + g + b) / 3.0).clamp(0.0, 1.0),
        ((r - g + 1.0) / 2.0).clamp(0.0, 1.0),
        ((b - (r + g) / 2.0 + 1.0) / 2.0).clamp(0.0, 1.0),
    ]
}

pub fn compute_feature_maps(image: &ImageRGB) -> FeatureMaps {
    let n = image.area();
    let mut maps = FeatureMaps {
        intensity: Vec::with_capacity(n),
        rg_contrast: Vec::with_capacity(n),
        by_contrast: Vec::with_capacity(n),
    };
    for &p in image.pixels() {
        let [i, rg, by] = opponent_channels(p);
        maps.intensity.push(i);
        maps.rg_contrast.push(rg);
        maps.by_contrast.push(by);
    }
    maps
}

/// Histogram bin of a value in `[0, 1]`; the last bin is closed on the right.
pub fn bin_index(v: f64) -> usize {
    ((v * N_BINS as f64).floor().max(0.0) as usize).min(N_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hist_i: [f64; N_BINS],
    pub hist_rg: [f64; N_BINS],
    pub hist_by: [f64; N_BINS],
    pub avg_rgb: [f64; 3],
}

impl FeatureVector {
    /// The three histograms in `I, RG, BY` order.
    pub fn histograms(&self) -> [&[f64; N_BINS]; 3] {
        [&self.hist_i, &self.hist_rg, &self.hist_by]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_LEN);
        v.extend_from_slice(&self.hist_i);
        v.extend_from_slice(&self.hist_rg);
        v.extend_from_slice(&self.hist_by);
        v.extend_from_slice(&self.avg_rgb);
        v
    }
}

pub fn superpixel_features(
    image: &ImageRGB,
    maps: &FeatureMaps,
    label_map: &LabelMap,
) -> Result<Vec<FeatureVector>> {
    label_map.check_dims(image)?;
    let n = label_map.n_superpixels();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, &l) in label_map.labels().iter().enumerate() {
        members[l as usize].push(p);
    }
    Ok(members
        .par_iter()
        .map(|pixels| histogram_features(image, maps, pixels))
        .collect())
}

fn histogram_features(image: &ImageRGB, maps: &FeatureMaps, pixels: &[usize]) -> FeatureVector {
    let mut fv = FeatureVector {
        hist_i: [0.0; N_BINS],
        hist_rg: [0.0; N_BINS],
        hist_by: [0.0; N_BINS],
        avg_rgb: [0.0; 3],
    };
    let pix = image.pixels();
    for &p in pixels {
        fv.hist_i[bin_index(maps.intensity[p])] += 1.0;
        fv.hist_rg[bin_index(maps.rg_contrast[p])] += 1.0;
        fv.hist_by[bin_index(maps.by_contrast[p])] += 1.0;
        for c in 0..3 {
            fv.avg_rgb[c] += pix[p][c];
        }
    }
    let n = pixels.len() as f64;
    for h in [&mut fv.hist_i, &mut fv.hist_rg, &mut fv.hist_by] {
        h.iter_mut().for_each(|v| *v /= n);
    }
    fv.avg_rgb.iter_mut().for_each(|v| *v = (*v / n).clamp(0.0, 1.0));
    fv
}

/// Convex weights over the `I, RG, BY` channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct FeatureWeights([f64; 3]);

impl FeatureWeights {
    pub fn new(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "feature weights must be non-negative, got {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "feature weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self(w))
    }

    pub fn get(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self([1.0 / 3.0; 3])
    }
}

impl TryFrom<[f64; 3]> for FeatureWeights {
    type Error = Error;
    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<FeatureWeights> for [f64; 3] {
    fn from(w: FeatureWeights) -> Self {
        w.0
    }
}

/// Total variation distance between two normalized histograms.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Symmetric distances between adjacent superpixels. Absent pairs are at infinite distance.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl DistanceTable {
    /// Builds a table from explicit `(i, j, d)` entries, mirrored to keep symmetry.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, d) in pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidParameter(format!("invalid distance pair ({i}, {j})")));
            }
            if !(d >= 0.0) {
                return Err(Error::InvalidParameter(format!("invalid distance {d} for ({i}, {j})")));
            }
            neighbors[i].push((j, d));
            neighbors[j].push((i, d));
        }
        for list in &mut neighbors {
            list.sort_by(|a, b| a.0.cmp(&b.0));
            list.dedup_by_key(|e| e.0);
        }
        Ok(Self { neighbors })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Stored neighbors of `i` with their distances, ascending by id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let list = &self.neighbors[i];
        list.binary_search_by_key(&j, |e| e.0).ok().map(|k| list[k].1)
    }

    /// Distance with absent pairs reported as infinity.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).unwrap_or(f64::INFINITY)
    }

    /// `(i, j, d)` with `i < j`, in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| {
            list.iter().filter(move |e| e.0 > i).map(move |&(j, d)| (i, j, d))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,d\n");
        for (i, j, d) in self.pairs() {
            writeln!(out, "{i},{j},{d}").unwrap();
        }
        out
    }
}

pub fn pairwise_distances(
    features: &[FeatureVector],
    graph: &SuperpixelGraph,
    weights: FeatureWeights,
) -> Result<DistanceTable> {
    if features.len() != graph.n() {
        return Err(Error::InvalidParameter(format!(
            "{} feature vectors for {} superpixels",
            features.len(),
            graph.n()
        )));
    }
    let w = weights.get();
    let pairs = (0..graph.n()).flat_map(|i| {
        graph
            .neighbors(i)
            .iter()
            .filter(move |&&j| j > i)
            .map(move |&j| {
                let (a, b) = (features[i].histograms(), features[j].histograms());
                let d: f64 = (0..3).map(|n| w[n] * total_variation(a[n], b[n])).sum();
                (i, j, d.clamp(0.0, 1.0))
            })
    });
    DistanceTable::from_pairs(graph.n(), pairs)
}

/// Exponential decay `f(d) = exp(-d/a)` with `f(inf) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialDecay {
    scale: f64,
}

impl ExponentialDecay {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "decay scale must be positive, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, d: f64) -> f64 {
        if d.is_infinite() {
            0.0
        } else {
            (-d / self.scale).exp()
        }
    }

    /// `ln f(d)`; `-inf` for infinite distance.
    pub fn ln_eval(&self, d: f64) -> f64 {
        if d.is_infinite() {
            f64::NEG_INFINITY
        } else {
            -d / self.scale
        }
    }
}

pub fn decay(d: f64, a: f64) -> Result<f64> {
    Ok(ExponentialDecay::new(a)?.eval(d))
}

/// CSV with one row per superpixel: id followed by the 51 feature reals.
pub fn features_to_csv(features: &[FeatureVector]) -> String {
    let mut out = String::from("id");
    for name in ["i", "rg", "by"] {
        for b in 0..N_BINS {
            write!(out, ",{name}{b}").unwrap();
        }
    }
    out.push_str(",r,g,b\n");
    for (id, fv) in features.iter().enumerate() {
        write!(out, "{id}").unwrap();
        for v in fv.to_flat() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
