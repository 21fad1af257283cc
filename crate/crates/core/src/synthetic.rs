//! Generated test scenes: uniformly coloured convex objects on a textured
//! background, with pixel-exact ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::GroundTruthFrame;
use crate::image::ImageRGB;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, theta: f64 },
    /// Vertices in order around the boundary, either orientation.
    Polygon { vertices: [(f64, f64); 8], n: usize },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, a, b, theta } => {
                let (dx, dy) = (x - cx, y - cy);
                let (c, s) = (theta.cos(), theta.sin());
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                u * u + v * v <= 1.0
            }
            Shape::Polygon { vertices, n } => {
                let side = |i: usize| {
                    let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                    (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
                };
                (0..n).all(|i| side(i) >= 0.0) || (0..n).all(|i| side(i) <= 0.0)
            }
        }
    }

    /// Axis-aligned extent as `(x_min, y_min, x_max, y_max)`.
    fn extent(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Ellipse { cx, cy, a, b, theta } => {
                let (c, s) = (theta.cos(), theta.sin());
                let hx = ((a * c).powi(2) + (b * s).powi(2)).sqrt();
                let hy = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
                (cx - hx, cy - hy, cx + hx, cy + hy)
            }
            Shape::Polygon { vertices, n } => vertices[..n].iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |e, &(x, y)| (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y)),
            ),
        }
    }
}

/// Convex shape of the given area centred at the origin.
fn random_shape<R: Rng>(rng: &mut R, area: f64) -> Shape {
    let theta = rng.random_range(0.0..PI);
    let aspect = rng.random_range(1.0..2.0);
    match rng.random_range(0..3) {
        0 => {
            let b = (area / (PI * aspect)).sqrt();
            Shape::Ellipse { cx: 0.0, cy: 0.0, a: aspect * b, b, theta }
        }
        1 => {
            let h = (area / aspect).sqrt();
            let w = aspect * h;
            let corners = [(-w / 2.0, -h / 2.0), (-w / 2.0, h / 2.0), (w / 2.0, h / 2.0), (w / 2.0, -h / 2.0)];
            polygon(&corners, theta)
        }
        _ => {
            let n = rng.random_range(5..=8);
            let r = (2.0 * area / (n as f64 * (2.0 * PI / n as f64).sin())).sqrt();
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let t = -2.0 * PI * k as f64 / n as f64;
                    (r * t.cos(), r * t.sin())
                })
                .collect();
            polygon(&pts, theta)
        }
    }
}

fn polygon(pts: &[(f64, f64)], theta: f64) -> Shape {
    let (c, s) = (theta.cos(), theta.sin());
    let mut vertices = [(0.0, 0.0); 8];
    for (v, &(x, y)) in vertices.iter_mut().zip(pts) {
        *v = (x * c - y * s, x * s + y * c);
    }
    Shape::Polygon { vertices, n: pts.len() }
}

fn translated(shape: Shape, dx: f64, dy: f64) -> Shape {
    match shape {
        Shape::Ellipse { cx, cy, a, b, theta } => Shape::Ellipse { cx: cx + dx, cy: cy + dy, a, b, theta },
        Shape::Polygon { mut vertices, n } => {
            for v in &mut vertices[..n] {
                *v = (v.0 + dx, v.1 + dy);
            }
            Shape::Polygon { vertices, n }
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: ImageRGB,
    pub truth: GroundTruthFrame,
    /// Row-major object ids, 0 for background.
    pub id_map: Vec<u16>,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_objects: usize,
    /// Object area range as fractions of the image.
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { width: 640, height: 480, n_objects: 5, min_frac: 0.005, max_frac: 0.08 }
    }
}

/// Default 640×480 scene with five objects.
pub fn synthetic_scene(seed: u64) -> SyntheticScene {
    generate_scene(&SceneSpec::default(), seed).expect("default scene fits")
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image_area = (w * h) as f64;
    let margin = 6.0;
    let mut shapes: Vec<Shape> = Vec::new();
    let mut boxes: Vec<(f64, f64, f64, f64)> = Vec::new();
    for _ in 0..spec.n_objects {
        let mut placed = false;
        for _ in 0..500 {
            let area = image_area * rng.random_range(spec.min_frac..spec.max_frac);
            let shape = random_shape(&mut rng, area);
            let e = shape.extent();
            let (sw, sh) = (e.2 - e.0, e.3 - e.1);
            if sw + 2.0 * margin >= w as f64 || sh + 2.0 * margin >= h as f64 {
                continue;
            }
            let x = rng.random_range(margin - e.0..w as f64 - margin - e.2);
            let y = rng.random_range(margin - e.1..h as f64 - margin - e.3);
            let b = (e.0 + x - margin, e.1 + y - margin, e.2 + x + margin, e.3 + y + margin);
            if boxes.iter().any(|o| b.0 < o.2 && o.0 < b.2 && b.1 < o.3 && o.1 < b.3) {
                continue;
            }
            boxes.push(b);
            shapes.push(translated(shape, x, y));
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InvalidParameter(format!(
                "could not place {} objects in a {w}x{h} scene",
                spec.n_objects
            )));
        }
    }

    let hue0: f64 = rng.random();
    let colours: Vec<[f64; 3]> = (0..shapes.len())
        .map(|k| {
            let hue = (hue0 + k as f64 / shapes.len() as f64 + rng.random_range(-0.03..0.03)).rem_euclid(1.0);
            hsv(hue, rng.random_range(0.75..1.0), rng.random_range(0.75..1.0))
        })
        .collect();

    // Low-saturation background: a few random plane waves plus pixel noise.
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let t = rng.random_range(0.0..PI);
            let f = rng.random_range(0.02..0.12);
            (f * t.cos(), f * t.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.05))
        })
        .collect();
    let tint = [rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)];
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.04..0.04)).collect();

    let mut id_map = vec![0u16; w * h];
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let id = shapes.iter().position(|s| s.contains(xf, yf));
            let rgb = match id {
                Some(k) => {
                    id_map[y * w + x] = k as u16 + 1;
                    colours[k]
                }
                None => {
                    let g = 0.45
                        + waves.iter().map(|&(fx, fy, ph, amp)| amp * (fx * xf + fy * yf + ph).sin()).sum::<f64>()
                        + noise[y * w + x];
                    tint.map(|t| (g + t).clamp(0.0, 1.0))
                }
            };
            pixels.push(rgb);
        }
    }
    let image = ImageRGB::new(w, h, pixels)?;
    let truth = GroundTruthFrame::from_id_map(format!("synthetic-{seed}"), w, h, &id_map)?;
    if truth.objects().len() != shapes.len() {
        return Err(Error::Numerical("an object rasterized to no pixels".into()));
    }
    Ok(SyntheticScene { image, truth, id_map, shapes })
}
