//! SLIC superpixels: k-means in `(L, a, b, x, y)` seeded on a regular grid.
//!
//! The spatial term is weighted by `compactness / step` where `step` is the
//! nominal superpixel side. After the fixed iterations, every cluster keeps
//! only its largest 4-connected piece; the remaining fragments are merged into
//! the largest adjacent superpixel.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{neighbors4, ImageRGB, LabelMap};

const ITERATIONS: usize = 10;

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    fn linearize(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let [r, g, b] = rgb.map(linearize);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Grid of `cols x rows` seeds whose product is close to `n_target` and whose
/// cells are close to square. Ties prefer more columns.
fn seed_grid(width: usize, height: usize, n_target: usize) -> (usize, usize) {
    let (w, h, n) = (width as f64, height as f64, n_target as f64);
    let mut best = (1, 1);
    let mut best_cost = f64::INFINITY;
    for cols in (1..=width.min(n_target)).rev() {
        let rows = ((n / cols as f64).round() as usize).clamp(1, height);
        let count_err = ((cols * rows) as f64 / n).ln().abs();
        let aspect_err = ((w / cols as f64) / (h / rows as f64)).ln().abs();
        let cost = count_err + aspect_err;
        if cost < best_cost - 1e-12 {
            best_cost = cost;
            best = (cols, rows);
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Oversegments `image` into roughly `n_target` superpixels.
///
/// `seed` only breaks ties when seeds are nudged off high-gradient pixels, so
/// the output is a pure function of the arguments.
pub fn slic_superpixels(
    image: &ImageRGB,
    n_target: usize,
    compactness: f64,
    seed: u64,
) -> Result<LabelMap> {
    let (w, h) = (image.width(), image.height());
    if n_target == 0 {
        return Err(Error::InvalidParameter("n_target must be at least 1".into()));
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    if n_target > image.area() {
        return Err(Error::InvalidParameter(format!(
            "n_target {n_target} exceeds pixel count {}",
            image.area()
        )));
    }

    let lab: Vec<[f64; 3]> = image.pixels().iter().map(|&p| srgb_to_lab(p)).collect();
    let (cols, rows) = seed_grid(w, h, n_target);
    let (step_x, step_y) = (w as f64 / cols as f64, h as f64 / rows as f64);
    let step = (image.area() as f64 / (cols * rows) as f64).sqrt();
    let spatial = compactness / step;
    let window = step_x.max(step_y).ceil() as isize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x = ((c as f64 + 0.5) * step_x).floor() as usize;
            let y = ((r as f64 + 0.5) * step_y).floor() as usize;
            let (x, y) = lowest_gradient_near(&lab, w, h, x.min(w - 1), y.min(h - 1), &mut rng);
            centers.push(Center {
                lab: lab[y * w + x],
                x: x as f64,
                y: y as f64,
            });
        }
    }

    let mut assignment = vec![usize::MAX; w * h];
    let mut best = vec![f64::INFINITY; w * h];
    for _ in 0..ITERATIONS {
        best.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let cx = c.x.round() as isize;
            let cy = c.y.round() as isize;
            let x0 = (cx - window).max(0) as usize;
            let x1 = ((cx + window) as usize).min(w - 1);
            let y0 = (cy - window).max(0) as usize;
            let y1 = ((cy + window) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let d_lab = sq_dist3(lab[p], c.lab);
                    let dx = x as f64 - c.x;
                    let dy = y as f64 - c.y;
                    let d = d_lab + spatial * spatial * (dx * dx + dy * dy);
                    if d < best[p] {
                        best[p] = d;
                        assignment[p] = k;
                    }
                }
            }
        }
        // Pixels outside every window fall back to the spatially nearest center.
        for p in 0..w * h {
            if assignment[p] == usize::MAX || best[p].is_infinite() {
                let (x, y) = ((p % w) as f64, (p / w) as f64);
                assignment[p] = nearest_center(&centers, x, y);
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for p in 0..w * h {
            let a = &mut acc[assignment[p]];
            a[0] += lab[p][0];
            a[1] += lab[p][1];
            a[2] += lab[p][2];
            a[3] += (p % w) as f64;
            a[4] += (p / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }

    let merged = enforce_connectivity(&assignment, w, h);
    let (map, _) = LabelMap::from_raw(w, h, &merged)?;
    Ok(map)
}

fn sq_dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest_center(centers: &[Center], x: f64, y: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in centers.iter().enumerate() {
        let d = (c.x - x).powi(2) + (c.y - y).powi(2);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Moves a seed to the lowest-gradient pixel of its 3x3 neighborhood.
fn lowest_gradient_near(
    lab: &[[f64; 3]],
    w: usize,
    h: usize,
    x: usize,
    y: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let at = |x: usize, y: usize| lab[y * w + x];
    let gradient = |x: usize, y: usize| {
        let l = at(x.saturating_sub(1), y);
        let r = at((x + 1).min(w - 1), y);
        let u = at(x, y.saturating_sub(1));
        let d = at(x, (y + 1).min(h - 1));
        sq_dist3(l, r) + sq_dist3(u, d)
    };
    let mut candidates = Vec::with_capacity(9);
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            candidates.push((gradient(nx, ny), nx, ny));
        }
    }
    let min = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    // Prefer staying put when the seed is already a minimum.
    if gradient(x, y) <= min {
        return (x, y);
    }
    let mut ties: Vec<(usize, usize)> = candidates
        .into_iter()
        .filter(|c| c.0 <= min)
        .map(|c| (c.1, c.2))
        .collect();
    ties.shuffle(rng);
    ties[0]
}

/// Keeps the largest 4-connected piece of every cluster and merges other
/// fragments into their largest adjacent piece.
fn enforce_connectivity(assignment: &[usize], w: usize, h: usize) -> Vec<usize> {
    let (pieces, _) = LabelMap::from_raw(w, h, assignment).expect("valid dimensions");
    let n = pieces.n_superpixels();
    let piece_of = pieces.labels();

    let mut size = vec![0usize; n];
    let mut cluster = vec![0usize; n];
    for (p, &pc) in piece_of.iter().enumerate() {
        size[pc as usize] += 1;
        cluster[pc as usize] = assignment[p];
    }
    let n_clusters = assignment.iter().max().map_or(0, |m| m + 1);
    let mut main_piece = vec![usize::MAX; n_clusters];
    for pc in 0..n {
        let c = cluster[pc];
        if main_piece[c] == usize::MAX || size[pc] > size[main_piece[c]] {
            main_piece[c] = pc;
        }
    }

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..w * h {
        let a = piece_of[p] as usize;
        for q in neighbors4(p, w, h) {
            let b = piece_of[q] as usize;
            if a != b {
                adjacency[a].push(b);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    // Union of pieces into kept owners; orphans resolve once a neighbor is owned.
    let mut owner: Vec<Option<usize>> = (0..n)
        .map(|pc| (main_piece[cluster[pc]] == pc).then_some(pc))
        .collect();
    let mut owner_size = size.clone();
    let mut pending: Vec<usize> = (0..n).filter(|&pc| owner[pc].is_none()).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for &pc in &pending {
            let target = adjacency[pc]
                .iter()
                .filter_map(|&q| owner[q])
                .max_by(|&a, &b| owner_size[a].cmp(&owner_size[b]).then(b.cmp(&a)));
            match target {
                Some(t) => {
                    owner[pc] = Some(t);
                    owner_size[t] += size[pc];
                }
                None => still.push(pc),
            }
        }
        assert!(still.len() < pending.len(), "orphan merging made no progress");
        pending = still;
    }
    piece_of
        .iter()
        .map(|&pc| owner[pc as usize].expect("every piece owned"))
        .collect()
}
