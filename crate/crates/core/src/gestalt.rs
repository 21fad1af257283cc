//! Shape measures of a proposal mask.
//!
//! Boundary length and enclosed area are read off the 0.5 isocontour of the
//! mask after a Gaussian blur whose width is proportional to the shape's
//! area-to-perimeter ratio. On an unblurred binary grid the staircase edges of
//! diagonal boundaries change length under resampling, which breaks both scale
//! and rotation stability. Symmetry, eccentricity and centroid distance work on
//! pixel centres directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::image::SuperpixelGraph;

/// Blur width as a fraction of area / crack length.
const BLUR: f64 = 0.25;
const ISO: f64 = 0.5;

/// Proposal membership, stored cropped to its bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    bits: Vec<bool>,
    area: usize,
}

impl Mask {
    /// Mask over a `width`×`height` image from member `(x, y)` coordinates.
    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let pixels: Vec<(usize, usize)> = pixels.into_iter().collect();
        if pixels.is_empty() {
            return Err(Error::Precondition("mask has no pixels".into()));
        }
        if let Some(&(x, y)) = pixels.iter().find(|&&(x, y)| x >= width || y >= height) {
            return Err(Error::InvalidParameter(format!(
                "pixel ({x}, {y}) outside {width}x{height} image"
            )));
        }
        let x0 = pixels.iter().map(|p| p.0).min().unwrap();
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let w = pixels.iter().map(|p| p.0).max().unwrap() - x0 + 1;
        let h = pixels.iter().map(|p| p.1).max().unwrap() - y0 + 1;
        let mut bits = vec![false; w * h];
        for &(x, y) in &pixels {
            bits[(y - y0) * w + (x - x0)] = true;
        }
        let area = bits.iter().filter(|&&b| b).count();
        Ok(Self { width, height, x0, y0, w, h, bits, area })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y)));
        Self::from_pixels(width, height, pixels.filter(|&(x, y)| f(x, y)))
    }

    /// Union of the given superpixels.
    pub fn from_superpixels(graph: &SuperpixelGraph, ids: &[usize]) -> Result<Self> {
        let w = graph.width();
        let pixels = ids
            .iter()
            .flat_map(|&i| graph.pixels(i))
            .map(|&p| (p as usize % w, p as usize / w));
        Self::from_pixels(w, graph.height(), pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            x_min: self.x0,
            y_min: self.y0,
            x_max: self.x0 + self.w - 1,
            y_max: self.y0 + self.h - 1,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.w
            && y < self.y0 + self.h
            && self.bits[(y - self.y0) * self.w + (x - self.x0)]
    }

    /// Member pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (self.x0 + i % self.w, self.y0 + i / self.w))
    }

    pub fn centroid(&self) -> (f64, f64) {
        let (sx, sy) = self
            .pixels()
            .fold((0u64, 0u64), |(sx, sy), (x, y)| (sx + x as u64, sy + y as u64));
        (sx as f64 / self.area as f64, sy as f64 / self.area as f64)
    }

    /// Members with a non-member 4-neighbour or on the image edge.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        self.pixels()
            .filter(|&(x, y)| {
                x == 0
                    || y == 0
                    || x + 1 == self.width
                    || y + 1 == self.height
                    || !self.contains(x - 1, y)
                    || !self.contains(x + 1, y)
                    || !self.contains(x, y - 1)
                    || !self.contains(x, y + 1)
            })
            .collect()
    }

    pub fn intersection_area(&self, other: &Mask) -> usize {
        self.pixels().filter(|&(x, y)| other.contains(x, y)).count()
    }

    /// Pixel intersection over union.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection_area(other);
        inter as f64 / (self.area + other.area - inter) as f64
    }

    /// Nearest-neighbour upscaling by an integer factor, image included.
    pub fn upscaled(&self, k: usize) -> Mask {
        assert!(k >= 1);
        let pixels = self
            .pixels()
            .flat_map(|(x, y)| (0..k * k).map(move |d| (x * k + d % k, y * k + d / k)));
        Mask::from_pixels(self.width * k, self.height * k, pixels).expect("non-empty mask")
    }

    /// Number of member-pixel sides facing a non-member or the image edge.
    fn crack_length(&self) -> usize {
        let local = |x: isize, y: isize| {
            x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h
                && self.bits[y as usize * self.w + x as usize]
        };
        let mut n = 0;
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                if local(x, y) {
                    n += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .filter(|(dx, dy)| !local(x + dx, y + dy))
                        .count();
                }
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestaltMeasures {
    pub sym_weighted: f64,
    pub sym_max: f64,
    pub solidity: f64,
    pub convexity: f64,
    pub compactness: f64,
    pub eccentricity: f64,
    pub centroid_distance: f64,
}

impl GestaltMeasures {
    pub const NAMES: [&'static str; 7] = [
        "sym_weighted",
        "sym_max",
        "solidity",
        "convexity",
        "compactness",
        "eccentricity",
        "centroid_distance",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.sym_weighted,
            self.sym_max,
            self.solidity,
            self.convexity,
            self.compactness,
            self.eccentricity,
            self.centroid_distance,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            sym_weighted: a[0],
            sym_max: a[1],
            solidity: a[2],
            convexity: a[3],
            compactness: a[4],
            eccentricity: a[5],
            centroid_distance: a[6],
        }
    }
}

/// Principal axes of the pixel scatter: `(λ1, u1, λ2, u2)` with `λ1 ≥ λ2`.
///
/// Moments are accumulated in integers so that exactly symmetric masks get an
/// exactly diagonal scatter and keep axis-aligned principal axes.
fn principal_axes(mask: &Mask) -> (f64, [f64; 2], f64, [f64; 2]) {
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (x, y) in mask.pixels() {
        let (x, y) = (x as i128, y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let n = mask.area as i128;
    // n² times the population covariance entries.
    let a = n * sxx - sx * sx;
    let c = n * syy - sy * sy;
    let b = n * sxy - sx * sy;
    let n2 = (n * n) as f64;
    let (af, bf, cf) = (a as f64 / n2, b as f64 / n2, c as f64 / n2);
    let half_gap = (((af - cf) / 2.0).powi(2) + bf * bf).sqrt();
    let l1 = (af + cf) / 2.0 + half_gap;
    let l2 = ((af + cf) / 2.0 - half_gap).max(0.0);
    let u1 = if b == 0 {
        if a >= c { [1.0, 0.0] } else { [0.0, 1.0] }
    } else {
        let (vx, vy) = (l1 - cf, bf);
        let norm = vx.hypot(vy);
        [vx / norm, vy / norm]
    };
    (l1, u1, l2, [-u1[1], u1[0]])
}

/// Fraction of member pixels whose reflection across the line through `c`
/// along `u` lands on a member pixel.
fn mirror_overlap(mask: &Mask, c: (f64, f64), u: [f64; 2]) -> f64 {
    let hits = mask
        .pixels()
        .filter(|&(x, y)| {
            let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
            let t = dx * u[0] + dy * u[1];
            let rx = (c.0 + 2.0 * t * u[0] - dx).round();
            let ry = (c.1 + 2.0 * t * u[1] - dy).round();
            rx >= 0.0 && ry >= 0.0 && mask.contains(rx as usize, ry as usize)
        })
        .count();
    hits as f64 / mask.area as f64
}

/// Length, enclosed area and vertices of the smoothed boundary.
#[derive(Debug, Clone)]
struct Contour {
    length: f64,
    area: f64,
    points: Vec<(f64, f64)>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blurred_field(mask: &Mask, sigma: f64) -> (Vec<f64>, usize, usize) {
    let kernel = if sigma > 1e-3 { gaussian_kernel(sigma) } else { vec![1.0] };
    let r = kernel.len() / 2;
    let pad = r + 1;
    let (gw, gh) = (mask.w + 2 * pad, mask.h + 2 * pad);
    let mut field = vec![0.0; gw * gh];
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.bits[y * mask.w + x] {
                field[(y + pad) * gw + x + pad] = 1.0;
            }
        }
    }
    if kernel.len() == 1 {
        return (field, gw, gh);
    }
    let mut tmp = vec![0.0; gw * gh];
    for y in 0..gh {
        for x in r..gw - r {
            tmp[y * gw + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * field[y * gw + x + k - r])
                .sum();
        }
    }
    for y in r..gh - r {
        for x in 0..gw {
            field[y * gw + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[(y + k - r) * gw + x])
                .sum();
        }
    }
    (field, gw, gh)
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Marching squares over the blurred mask, with bilinear edge crossings.
fn contour(mask: &Mask) -> Contour {
    isocontour(mask, BLUR * mask.area as f64 / mask.crack_length() as f64)
}

fn isocontour(mask: &Mask, sigma: f64) -> Contour {
    let (field, gw, gh) = blurred_field(mask, sigma);
    let mut length = 0.0;
    let mut area = 0.0;
    let mut points = Vec::new();
    for cy in 0..gh - 1 {
        for cx in 0..gw - 1 {
            let idx = [cy * gw + cx, cy * gw + cx + 1, (cy + 1) * gw + cx + 1, (cy + 1) * gw + cx];
            let v = idx.map(|i| field[i]);
            let inside = v.map(|x| x >= ISO);
            let n_in = inside.iter().filter(|&&b| b).count();
            if n_in == 0 {
                continue;
            }
            if n_in == 4 {
                area += 1.0;
                continue;
            }
            let corner = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            // Crossing on the edge from corner k to corner k+1, if any.
            let cross: [Option<(f64, f64)>; 4] = std::array::from_fn(|k| {
                let j = (k + 1) % 4;
                (inside[k] != inside[j]).then(|| {
                    let t = (ISO - v[k]) / (v[j] - v[k]);
                    (
                        corner[k].0 + t * (corner[j].0 - corner[k].0),
                        corner[k].1 + t * (corner[j].1 - corner[k].1),
                    )
                })
            });
            let offset = (cx as f64, cy as f64);
            points.extend(cross.iter().flatten().map(|p| (p.0 + offset.0, p.1 + offset.1)));
            let saddle = n_in == 2 && inside[0] == inside[2];
            if !saddle {
                let mut poly = Vec::with_capacity(5);
                for k in 0..4 {
                    if inside[k] {
                        poly.push(corner[k]);
                    }
                    if let Some(p) = cross[k] {
                        poly.push(p);
                    }
                }
                area += shoelace(&poly).abs();
                let ends: Vec<(f64, f64)> = cross.iter().flatten().copied().collect();
                length += dist(ends[0], ends[1]);
                continue;
            }
            let centre = v.iter().sum::<f64>() / 4.0;
            let connected = centre >= ISO;
            for k in 0..4 {
                let prev = cross[(k + 3) % 4].unwrap();
                let next = cross[k].unwrap();
                // The isocontour cuts off the corners that are on the minority side.
                if inside[k] != connected {
                    length += dist(prev, next);
                }
                if inside[k] && !connected {
                    area += shoelace(&[prev, corner[k], next]).abs();
                }
            }
            if connected {
                let mut poly = Vec::with_capacity(6);
                for k in 0..4 {
                    if inside[k] {
                        poly.push(corner[k]);
                    }
                    poly.push(cross[k].unwrap());
                }
                area += shoelace(&poly).abs();
            }
        }
    }
    Contour { length, area, points }
}

/// Convex hull by the monotone chain, counter-clockwise without collinear points.
pub(crate) fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn polygon_perimeter(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| dist(poly[i], poly[(i + 1) % n])).sum()
}

pub fn gestalt_measures(mask: &Mask) -> GestaltMeasures {
    let (l1, u1, l2, u2) = principal_axes(mask);
    let eccentricity = if l1 > 0.0 { (1.0 - l2 / l1).max(0.0).sqrt() } else { 0.0 };
    if mask.area == 1 {
        return GestaltMeasures {
            sym_weighted: 1.0,
            sym_max: 1.0,
            solidity: 1.0,
            convexity: 1.0,
            compactness: 1.0 / 16.0,
            eccentricity: 0.0,
            centroid_distance: 1.0,
        };
    }

    let c = mask.centroid();
    let (s1, s2) = (mirror_overlap(mask, c, u1), mirror_overlap(mask, c, u2));
    let sym_weighted = if l1 + l2 > 0.0 { (l1 * s1 + l2 * s2) / (l1 + l2) } else { 1.0 };

    let boundary = mask.boundary_pixels();
    let mean_r = boundary
        .iter()
        .map(|&(x, y)| dist((x as f64, y as f64), c))
        .sum::<f64>()
        / boundary.len() as f64;
    let centroid_distance = mean_r / (mask.area as f64 / std::f64::consts::PI).sqrt();

    let contour = contour(mask);
    let hull = convex_hull(&contour.points);
    let hull_area = shoelace(&hull).abs();
    let hull_perimeter = polygon_perimeter(&hull);
    let (solidity, convexity, compactness) = if contour.area > 0.0 && hull_perimeter > 0.0 {
        (
            (hull_area / contour.area).max(1.0),
            (contour.length / hull_perimeter).max(1.0),
            contour.area / (contour.length * contour.length),
        )
    } else {
        (1.0, 1.0, 1.0 / 16.0)
    };

    GestaltMeasures {
        sym_weighted,
        sym_max: s1.max(s2),
        solidity,
        convexity,
        compactness,
        eccentricity,
        centroid_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize) -> Mask {
        Mask::from_fn(w + 10, h + 10, |x, y| (5..5 + w).contains(&x) && (5..5 + h).contains(&y)).unwrap()
    }

    #[test]
    fn mask_basics() {
        let m = rect(4, 3);
        assert_eq!(m.area(), 12);
        assert_eq!(m.bbox(), BBox { x_min: 5, y_min: 5, x_max: 8, y_max: 7 });
        assert_eq!(m.centroid(), (6.5, 6.0));
        assert_eq!(m.boundary_pixels().len(), 10);
        assert_eq!(m.crack_length(), 14);
        let up = m.upscaled(2);
        assert_eq!(up.area(), 48);
        assert_eq!(up.bbox(), BBox { x_min: 10, y_min: 10, x_max: 17, y_max: 15 });
        assert!(Mask::from_pixels(3, 3, []).is_err());
        assert!(Mask::from_pixels(3, 3, [(3, 0)]).is_err());
    }

    #[test]
    fn image_edge_pixels_are_boundary() {
        let full = Mask::from_fn(3, 3, |_, _| true).unwrap();
        assert_eq!(full.boundary_pixels().len(), 8);
    }

    #[test]
    fn single_pixel_is_degenerate() {
        let m = Mask::from_pixels(5, 5, [(2, 2)]).unwrap();
        let (l1, _, l2, _) = principal_axes(&m);
        assert_eq!((l1, l2), (0.0, 0.0));
        let g = gestalt_measures(&m);
        assert_eq!(
            g,
            GestaltMeasures {
                sym_weighted: 1.0,
                sym_max: 1.0,
                solidity: 1.0,
                convexity: 1.0,
                compactness: 1.0 / 16.0,
                eccentricity: 0.0,
                centroid_distance: 1.0,
            }
        );
    }

    #[test]
    fn rectangle_eccentricity_from_discrete_variance() {
        // Variance of w consecutive integers is (w² - 1) / 12.
        let g = gestalt_measures(&rect(40, 10));
        let expected = (1.0 - (10.0f64.powi(2) - 1.0) / (40.0f64.powi(2) - 1.0)).sqrt();
        assert!((g.eccentricity - expected).abs() < 1e-12);
        assert!((g.sym_weighted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unblurred_rectangle_contour() {
        // Without blur the contour follows pixel edges and cuts each corner diagonally.
        let c = isocontour(&rect(6, 4), 0.0);
        assert!((c.length - (16.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((c.area - 23.5).abs() < 1e-12);
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0), (1.0, 0.0)];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert_eq!(shoelace(&hull), 4.0);
        assert_eq!(polygon_perimeter(&hull), 8.0);
    }

    #[test]
    fn l_shape_is_not_convex() {
        let m = Mask::from_fn(40, 40, |x, y| (5..35).contains(&x) && (5..35).contains(&y) && !(x >= 20 && y >= 20))
            .unwrap();
        let g = gestalt_measures(&m);
        // Hull of the L is 7/8 of the square against 3/4 for the shape itself.
        assert!((g.solidity - 7.0 / 6.0).abs() < 0.05, "{g:?}");
        assert!(g.convexity > 1.05, "{g:?}");
        assert!(g.sym_max > 0.99, "{g:?}");
    }

    #[test]
    fn ring_has_inner_boundary() {
        let m = Mask::from_fn(60, 60, |x, y| {
            let r = ((x as f64 - 30.0).powi(2) + (y as f64 - 30.0).powi(2)).sqrt();
            (12.0..25.0).contains(&r)
        })
        .unwrap();
        let g = gestalt_measures(&m);
        let disk_like = std::f64::consts::PI * (25.0f64.powi(2) - 12.0f64.powi(2))
            / (2.0 * std::f64::consts::PI * 37.0).powi(2);
        assert!((g.compactness - disk_like).abs() < 0.1 * disk_like, "{g:?}");
        assert!(g.solidity > 1.2);
    }

    fn blob() -> impl Strategy<Value = Mask> {
        (3usize..20, 3usize..20, prop::collection::vec(any::<bool>(), 400)).prop_map(|(w, h, extra)| {
            // A core rectangle plus random attached pixels keeps the mask connected enough.
            Mask::from_fn(24, 24, |x, y| {
                let core = (2..2 + w).contains(&x) && (2..2 + h).contains(&y);
                core || (extra[(y * 24 + x) % 400] && x >= 1 && y >= 1 && x <= w + 2 && y <= h + 2)
            })
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn measures_stay_in_range(m in blob()) {
            let g = gestalt_measures(&m);
            prop_assert!((0.0..=1.0).contains(&g.sym_weighted));
            prop_assert!((0.0..=1.0).contains(&g.sym_max));
            prop_assert!(g.sym_weighted <= g.sym_max + 1e-12);
            prop_assert!(g.solidity >= 1.0);
            prop_assert!(g.convexity >= 1.0);
            prop_assert!(g.compactness > 0.0 && g.compactness <= 1.0 / (4.0 * std::f64::consts::PI) + 1e-9);
            prop_assert!((0.0..=1.0).contains(&g.eccentricity));
            prop_assert!(g.centroid_distance > 0.0);
        }

        #[test]
        fn translation_invariant(m in blob(), dx in 0usize..7, dy in 0usize..7) {
            let moved = Mask::from_pixels(40, 40, m.pixels().map(|(x, y)| (x + dx, y + dy))).unwrap();
            let (a, b) = (gestalt_measures(&m).to_array(), gestalt_measures(&moved).to_array());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
