//! Image input, label maps and the superpixel adjacency graph.
//!
//! Images are held as row-major normalized RGB. A [`LabelMap`] always holds
//! contiguous ids `0..N` in raster order of first appearance, with every
//! superpixel 4-connected; [`LabelMap::from_raw`] enforces that by splitting
//! disconnected labels.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .flatten()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParameter(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel. Values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                pixels.push(p.map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Quantizes to 8 bits and writes a PNG or binary PPM (chosen by extension).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .flatten()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        buf.save_with_format(path, format)
            .map_err(|e| Error::unreadable(path, e))
    }
}

/// Loads a PNG (8/16-bit, alpha ignored) or binary PPM (P6) image.
pub fn load_image(path: &Path) -> Result<ImageRGB> {
    let bytes = fs::read(path).map_err(|e| Error::unreadable(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Unreadable { reason, .. } => Error::unreadable(path, reason),
        other => other,
    })
}

/// Decodes an in-memory PNG or P6 PPM.
pub fn decode_image(bytes: &[u8]) -> Result<ImageRGB> {
    let format = match image::guess_format(bytes) {
        Ok(ImageFormat::Png) => ImageFormat::Png,
        Ok(ImageFormat::Pnm) if bytes.starts_with(b"P6") => ImageFormat::Pnm,
        Ok(ImageFormat::Pnm) => {
            return Err(Error::UnsupportedFormat(
                "only binary PPM (P6) is supported among PNM variants".into(),
            ))
        }
        Ok(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        Err(_) => return Err(Error::UnsupportedFormat("unrecognized file signature".into())),
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::unreadable("<memory>", e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    let pixels: Vec<[f64; 3]> = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|v| f64::from(v) / 65535.0))
            .collect(),
        _ => img
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|v| f64::from(v) / 255.0))
            .collect(),
    };
    ImageRGB::new(width, height, pixels)
}

/// Superpixel id per pixel, contiguous `0..n_superpixels`, each id 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    n_superpixels: usize,
}

impl LabelMap {
    /// Canonicalizes arbitrary integer labels.
    ///
    /// Each 4-connected run of equal raw labels becomes one superpixel and ids
    /// are assigned in raster order of first appearance. Returns the map and the
    /// number of extra superpixels created by splitting disconnected labels.
    pub fn from_raw<L: Copy + Eq>(width: usize, height: usize, raw: &[L]) -> Result<(Self, usize)> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if raw.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "label buffer has {} entries, expected {}",
                raw.len(),
                width * height
            )));
        }
        const UNSET: u32 = u32::MAX;
        let mut labels = vec![UNSET; raw.len()];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        let mut distinct: Vec<L> = Vec::new();
        for start in 0..raw.len() {
            if labels[start] != UNSET {
                continue;
            }
            let value = raw[start];
            if !distinct.contains(&value) {
                distinct.push(value);
            }
            labels[start] = next;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbors4(p, width, height) {
                    if labels[q] == UNSET && raw[q] == value {
                        labels[q] = next;
                        queue.push_back(q);
                    }
                }
            }
            next += 1;
        }
        let n = next as usize;
        let splits = n - distinct.len();
        Ok((
            Self {
                width,
                height,
                labels,
                n_superpixels: n,
            },
            splits,
        ))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn n_superpixels(&self) -> usize {
        self.n_superpixels
    }

    pub fn check_dims(&self, image: &ImageRGB) -> Result<()> {
        if (self.width, self.height) != (image.width(), image.height()) {
            return Err(Error::DimensionMismatch {
                expected: (image.width(), image.height()),
                found: (self.width, self.height),
            });
        }
        Ok(())
    }

    /// Writes CSV for a `.csv` extension, otherwise a 16-bit grayscale PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            fs::write(path, self.to_csv())?;
            return Ok(());
        }
        if self.n_superpixels > usize::from(u16::MAX) + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} superpixels do not fit a 16-bit PNG",
                self.n_superpixels
            )));
        }
        let data: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
            self.width as u32,
            self.height as u32,
            data,
        )
        .expect("buffer size matches dimensions");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::unreadable(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.labels.len() * 4);
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Loads a label map from CSV (`.csv`) or a grayscale PNG with one id per pixel.
///
/// Disconnected labels are split (with a warning) and ids re-indexed by first appearance.
pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::unreadable(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Malformed(format!("{}: empty label map", path.display())));
    }
    let (width, height, raw) = if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        parse_label_csv(&bytes)?
    } else {
        decode_label_png(&bytes).map_err(|e| match e {
            Error::Unreadable { reason, .. } => Error::unreadable(path, reason),
            other => other,
        })?
    };
    let (map, splits) = LabelMap::from_raw(width, height, &raw)?;
    if splits > 0 {
        log::warn!(
            "{}: {splits} label(s) were not 4-connected and have been split",
            path.display()
        );
    }
    Ok(map)
}

fn parse_label_csv(bytes: &[u8]) -> Result<(usize, usize, Vec<u64>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut raw = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: u64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!("row {}: invalid label {field:?}", row + 1))
            })?;
            raw.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::Malformed(format!(
                    "row {} has {count} columns, expected {w}",
                    row + 1
                )))
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Malformed("empty label map".into()))?;
    Ok((width, height, raw))
}

fn decode_label_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u64>)> {
    if image::guess_format(bytes).ok() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedFormat("label maps must be PNG or CSV".into()));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::unreadable("<memory>", e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u64> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u64::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u64::from).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "label map PNG must be grayscale, found {:?}",
                other.color()
            )))
        }
    };
    Ok((w, h, raw))
}

/// In-bounds 4-neighbors of a raster index.
pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % width, p / width);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < width).then(|| p + 1);
    let up = (y > 0).then(|| p - width);
    let down = (y + 1 < height).then(|| p + width);
    [left, right, up, down].into_iter().flatten()
}

/// Superpixel adjacency, sizes, centroids and member pixels.
#[derive(Debug, Clone)]
pub struct SuperpixelGraph {
    width: usize,
    height: usize,
    adjacency: Vec<Vec<usize>>,
    pixel_count: Vec<usize>,
    centroid: Vec<(f64, f64)>,
    pixels: Vec<Vec<u32>>,
}

impl SuperpixelGraph {
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sorted neighbor ids of superpixel `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn pixel_count(&self, i: usize) -> usize {
        self.pixel_count[i]
    }

    pub fn pixel_counts(&self) -> &[usize] {
        &self.pixel_count
    }

    /// Mean `(x, y)` of the member pixels.
    pub fn centroid(&self, i: usize) -> (f64, f64) {
        self.centroid[i]
    }

    /// Raster indices of the member pixels, ascending.
    pub fn pixels(&self, i: usize) -> &[u32] {
        &self.pixels[i]
    }
}

/// Builds the 4-connectivity adjacency graph of a label map.
pub fn build_graph(label_map: &LabelMap) -> SuperpixelGraph {
    let (w, h) = (label_map.width, label_map.height);
    let n = label_map.n_superpixels;
    let labels = &label_map.labels;
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut sums = vec![(0.0f64, 0.0f64); n];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let a = labels[p] as usize;
            pixels[a].push(p as u32);
            sums[a].0 += x as f64;
            sums[a].1 += y as f64;
            if x + 1 < w {
                let b = labels[p + 1] as usize;
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
            if y + 1 < h {
                let b = labels[p + w] as usize;
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }
    let pixel_count: Vec<usize> = pixels.iter().map(Vec::len).collect();
    let centroid = sums
        .iter()
        .zip(&pixel_count)
        .map(|(&(sx, sy), &c)| (sx / c as f64, sy / c as f64))
        .collect();
    SuperpixelGraph {
        width: w,
        height: h,
        adjacency,
        pixel_count,
        centroid,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_ppm_maps_bytes_to_unit_range() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(
            img.pixels(),
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
        );
    }

    #[test]
    fn one_pixel_black_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        image::RgbImage::new(1, 1).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixels(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn truncated_file_is_unreadable() {
        let mut bytes = Vec::new();
        image::RgbImage::new(8, 8)
            .write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        bytes.truncate(bytes.len() / 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.png");
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_image(&path), Err(Error::Unreadable { .. })));

        let ppm = b"P6\n4 4\n255\n\x01\x02";
        assert!(matches!(decode_image(ppm), Err(Error::Unreadable { .. })));
    }

    #[test]
    fn ascii_pnm_and_unknown_formats_rejected() {
        assert!(matches!(
            decode_image(b"P3\n1 1\n255\n0 0 0\n"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_image(b"hello world"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn relabel_by_first_appearance() {
        let (map, splits) = LabelMap::from_raw(2, 2, &[5u32, 7, 5, 7]).unwrap();
        assert_eq!(map.labels(), &[0, 1, 0, 1]);
        assert_eq!(map.n_superpixels(), 2);
        assert_eq!(splits, 0);
    }

    #[test]
    fn diagonal_labels_are_split() {
        // Both labels touch only diagonally, so each becomes two superpixels.
        let (map, splits) = LabelMap::from_raw(2, 2, &[0u32, 1, 1, 0]).unwrap();
        assert_eq!(map.n_superpixels(), 4);
        assert_eq!(splits, 2);
    }

    #[test]
    fn empty_label_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "").unwrap();
        assert!(load_label_map(&path).is_err());
        fs::write(&path, "\n\n").unwrap();
        assert!(load_label_map(&path).is_err());
    }

    #[test]
    fn label_map_csv_and_png_roundtrip() {
        let (map, _) = LabelMap::from_raw(3, 2, &[0u32, 0, 1, 2, 2, 1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["m.csv", "m.png"] {
            let path = dir.path().join(name);
            map.save(&path).unwrap();
            assert_eq!(load_label_map(&path).unwrap(), map);
        }
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(parse_label_csv(b"0,1\n0\n").is_err());
        assert!(parse_label_csv(b"0,x\n").is_err());
    }

    #[test]
    fn dimension_mismatch_detected() {
        let (map, _) = LabelMap::from_raw(2, 1, &[0u32, 0]).unwrap();
        let img = ImageRGB::new(1, 2, vec![[0.0; 3]; 2]).unwrap();
        assert!(matches!(map.check_dims(&img), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn graph_two_columns() {
        let (map, _) = LabelMap::from_raw(2, 2, &[0u32, 1, 0, 1]).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.centroid(0), (0.0, 0.5));
        assert_eq!(g.centroid(1), (1.0, 0.5));
        assert_eq!(g.pixel_counts(), &[2, 2]);
    }

    #[test]
    fn graph_row_of_three() {
        let (map, _) = LabelMap::from_raw(3, 1, &[0u32, 1, 2]).unwrap();
        let g = build_graph(&map);
        assert!(g.are_adjacent(0, 1) && g.are_adjacent(1, 2));
        assert!(!g.are_adjacent(0, 2));
    }

    #[test]
    fn graph_single_superpixel() {
        let (map, _) = LabelMap::from_raw(3, 3, &[4u32; 9]).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.n(), 1);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.pixel_count(0), 9);
    }

    #[test]
    fn image_rejects_out_of_range_channels() {
        assert!(ImageRGB::new(1, 1, vec![[1.5, 0.0, 0.0]]).is_err());
        assert!(ImageRGB::new(0, 1, vec![]).is_err());
    }
}
