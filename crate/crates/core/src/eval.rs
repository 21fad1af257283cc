//! Bounding-box evaluation: precision, recall and global recall as a function
//! of the number of top-ranked proposals, and their normalized AUCs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gestalt::Mask;
use crate::rank::RankedProposal;

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidParameter(format!("malformed box {:?}", <[usize; 4]>::from(*self))));
        }
        Ok(())
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }
}

impl TryFrom<[usize; 4]> for BBox {
    type Error = Error;

    fn try_from([x_min, y_min, x_max, y_max]: [usize; 4]) -> Result<Self> {
        Self::new(x_min, y_min, x_max, y_max)
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

pub fn bbox_iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let ix = a.x_max.min(b.x_max) as isize - a.x_min.max(b.x_min) as isize + 1;
    let iy = a.y_max.min(b.y_max) as isize - a.y_min.max(b.y_min) as isize + 1;
    if ix <= 0 || iy <= 0 {
        return Ok(0.0);
    }
    let inter = (ix * iy) as f64;
    Ok(inter / (a.area() as f64 + b.area() as f64 - inter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: u32,
    pub bbox: BBox,
    #[serde(skip)]
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame_id: String,
    objects: Vec<GroundTruthObject>,
}

impl GroundTruthFrame {
    pub fn new(frame_id: impl Into<String>, objects: Vec<GroundTruthObject>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        if let Some(o) = objects.iter().find(|o| !seen.insert(o.id)) {
            return Err(Error::InvalidParameter(format!("duplicate object id {}", o.id)));
        }
        Ok(Self { frame_id: frame_id.into(), objects })
    }

    /// One object per nonzero id in a row-major id map.
    pub fn from_id_map(frame_id: impl Into<String>, width: usize, height: usize, ids: &[u16]) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (ids.len(), 1),
            });
        }
        let mut pixels: BTreeMap<u16, Vec<(usize, usize)>> = BTreeMap::new();
        for (p, &id) in ids.iter().enumerate() {
            if id != 0 {
                pixels.entry(id).or_default().push((p % width, p / width));
            }
        }
        let objects = pixels
            .into_iter()
            .map(|(id, px)| {
                let mask = Mask::from_pixels(width, height, px)?;
                Ok(GroundTruthObject { id: id as u32, bbox: mask.bbox(), mask: Some(mask) })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(frame_id, objects)
    }

    pub fn objects(&self) -> &[GroundTruthObject] {
        &self.objects
    }
}

/// Loads ground truth from a 16-bit id PNG (0 = background) or JSON Lines of `{"id", "bbox"}`.
pub fn load_ground_truth(path: &Path, frame_id: &str) -> Result<GroundTruthFrame> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| Error::unreadable(path, e))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let ids = img.into_luma16().into_raw();
            GroundTruthFrame::from_id_map(frame_id, w, h, &ids)
        }
        "jsonl" | "json" => {
            let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
            let objects = crate::proposals::read_json_lines(text.as_bytes())?;
            GroundTruthFrame::new(frame_id, objects)
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: ground truth must be .png or .jsonl",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurves {
    pub precision_at_k: Vec<f64>,
    pub recall_at_k: Vec<f64>,
    pub global_recall_at_k: Vec<f64>,
    pub auc_precision: f64,
    pub auc_recall: f64,
    pub auc_global_recall: f64,
}

/// Per-frame result: curves plus the first rank (0-based) at which each object was matched.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub frame_id: String,
    pub curves: EvalCurves,
    pub first_match: Vec<(u32, Option<usize>)>,
    pub empty_truth: bool,
}

/// Trapezoid area over `k = 1..=k_max`, normalized to `[0, 1]`.
pub fn normalized_auc(curve: &[f64]) -> f64 {
    match curve.len() {
        0 => 0.0,
        1 => curve[0],
        n => curve.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum::<f64>() / (n - 1) as f64,
    }
}

fn curves(precision: Vec<f64>, recall: Vec<f64>, global: Vec<f64>) -> EvalCurves {
    EvalCurves {
        auc_precision: normalized_auc(&precision),
        auc_recall: normalized_auc(&recall),
        auc_global_recall: normalized_auc(&global),
        precision_at_k: precision,
        recall_at_k: recall,
        global_recall_at_k: global,
    }
}

/// Evaluates boxes given in rank order.
///
/// Each proposal in turn claims the unmatched object of highest IoU, if that IoU
/// reaches `iou_min`. Matching in rank order makes the top-k matching a prefix
/// of the top-(k+1) one, so one pass serves every k.
pub fn evaluate_boxes(
    boxes: &[BBox],
    truth: &GroundTruthFrame,
    iou_min: f64,
    k_max: usize,
) -> Result<FrameEval> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    let objects = truth.objects();
    let mut first_match: Vec<Option<usize>> = vec![None; objects.len()];
    let mut hit = vec![false; k_max];
    for (rank, b) in boxes.iter().take(k_max).enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, o) in objects.iter().enumerate() {
            if first_match[j].is_some() {
                continue;
            }
            let iou = bbox_iou(b, &o.bbox)?;
            if iou >= iou_min && best.is_none_or(|(_, v)| iou > v) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            first_match[j] = Some(rank);
            hit[rank] = true;
        }
    }
    let n_obj = objects.len();
    let empty_truth = n_obj == 0;
    if empty_truth {
        log::warn!("frame {}: no ground-truth objects, recall set to 1", truth.frame_id);
    }
    let mut matches = 0usize;
    let mut precision = Vec::with_capacity(k_max);
    let mut recall = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        matches += hit[k - 1] as usize;
        precision.push(matches as f64 / k as f64);
        recall.push(if empty_truth { 1.0 } else { matches as f64 / n_obj as f64 });
    }
    Ok(FrameEval {
        frame_id: truth.frame_id.clone(),
        curves: curves(precision, recall.clone(), recall),
        first_match: objects.iter().map(|o| o.id).zip(first_match).collect(),
        empty_truth,
    })
}

pub fn evaluate_frame(
    ranked: &[RankedProposal],
    truth: &GroundTruthFrame,
    iou_min: f64,
    k_max: usize,
) -> Result<FrameEval> {
    let boxes: Vec<BBox> = ranked.iter().map(|r| r.bbox).collect();
    evaluate_boxes(&boxes, truth, iou_min, k_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub frames: Vec<FrameEval>,
    /// Precision and recall averaged over frames; global recall over the set of object ids.
    pub aggregate: EvalCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_frames: usize,
    pub n_objects: usize,
    pub iou_min: f64,
    pub k_max: usize,
    pub auc_precision: f64,
    pub auc_recall: f64,
    pub auc_global_recall: f64,
    pub empty_truth_frames: Vec<String>,
}

/// Evaluates a sequence of `(ranked boxes, truth)` frames. Object ids are shared
/// across frames, so global recall counts each id once.
pub fn evaluate_sequence(
    frames: &[(Vec<BBox>, GroundTruthFrame)],
    iou_min: f64,
    k_max: usize,
) -> Result<SequenceEval> {
    let evals = frames
        .par_iter()
        .map(|(boxes, truth)| evaluate_boxes(boxes, truth, iou_min, k_max))
        .collect::<Result<Vec<_>>>()?;
    let n = evals.len().max(1) as f64;
    let mean = |f: fn(&EvalCurves) -> &Vec<f64>| -> Vec<f64> {
        (0..k_max)
            .map(|k| evals.iter().map(|e| f(&e.curves)[k]).sum::<f64>() / n)
            .collect()
    };
    let precision = mean(|c| &c.precision_at_k);
    let recall = mean(|c| &c.recall_at_k);

    let mut earliest: BTreeMap<u32, Option<usize>> = BTreeMap::new();
    for e in &evals {
        for &(id, rank) in &e.first_match {
            let slot = earliest.entry(id).or_insert(None);
            *slot = match (*slot, rank) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
    }
    let global: Vec<f64> = (0..k_max)
        .map(|k| {
            if earliest.is_empty() {
                1.0
            } else {
                earliest.values().filter(|r| r.is_some_and(|r| r <= k)).count() as f64
                    / earliest.len() as f64
            }
        })
        .collect();
    Ok(SequenceEval { frames: evals, aggregate: curves(precision, recall, global) })
}

impl SequenceEval {
    pub fn n_objects(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| f.first_match.iter().map(|m| m.0))
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn summary(&self, iou_min: f64) -> EvalSummary {
        EvalSummary {
            n_frames: self.frames.len(),
            n_objects: self.n_objects(),
            iou_min,
            k_max: self.aggregate.precision_at_k.len(),
            auc_precision: self.aggregate.auc_precision,
            auc_recall: self.aggregate.auc_recall,
            auc_global_recall: self.aggregate.auc_global_recall,
            empty_truth_frames: self
                .frames
                .iter()
                .filter(|f| f.empty_truth)
                .map(|f| f.frame_id.clone())
                .collect(),
        }
    }
}

/// CSV with header `k,precision,recall,global_recall`.
pub fn curves_to_csv(c: &EvalCurves) -> String {
    let mut s = String::from("k,precision,recall,global_recall\n");
    for k in 0..c.precision_at_k.len() {
        writeln!(
            s,
            "{},{},{},{}",
            k + 1,
            c.precision_at_k[k],
            c.recall_at_k[k],
            c.global_recall_at_k[k]
        )
        .unwrap();
    }
    s
}

/// Minimal SVG line plot of the three curves.
pub fn curves_to_svg(c: &EvalCurves) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let n = c.precision_at_k.len();
    let x = |k: usize| m + (w - 2.0 * m) * if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
    let y = |v: f64| h - m - (h - 2.0 * m) * v;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        w - 2.0 * m,
        h - 2.0 * m
    );
    let series = [
        ("precision", &c.precision_at_k, "#d62728"),
        ("recall", &c.recall_at_k, "#1f77b4"),
        ("global_recall", &c.global_recall_at_k, "#2ca02c"),
    ];
    for (i, (name, vals, colour)) in series.iter().enumerate() {
        let pts: Vec<String> = vals.iter().enumerate().map(|(k, &v)| format!("{:.2},{:.2}", x(k), y(v))).collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" fill=\"{colour}\" font-size=\"12\">{name}</text>",
            pts.join(" "),
            w - m - 90.0,
            m + 15.0 * (i + 1) as f64
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(a: [usize; 4]) -> BBox {
        BBox::try_from(a).unwrap()
    }

    fn frame(boxes: &[[usize; 4]]) -> GroundTruthFrame {
        let objects = boxes
            .iter()
            .enumerate()
            .map(|(i, &b)| GroundTruthObject { id: i as u32 + 1, bbox: bb(b), mask: None })
            .collect();
        GroundTruthFrame::new("f", objects).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bb([0, 0, 9, 9]);
        assert_eq!(bbox_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(bbox_iou(&a, &bb([20, 20, 30, 30])).unwrap(), 0.0);
        assert!((bbox_iou(&a, &bb([5, 0, 14, 9])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // Touching edges share a column of pixels.
        assert!(bbox_iou(&a, &bb([9, 0, 18, 9])).unwrap() > 0.0);
        let bad = BBox { x_min: 5, y_min: 0, x_max: 4, y_max: 0 };
        assert!(bbox_iou(&a, &bad).is_err());
        assert!(serde_json::from_str::<BBox>("[5,0,4,0]").is_err());
    }

    #[test]
    fn single_object_matched_at_top() {
        let truth = frame(&[[0, 0, 9, 9]]);
        // IoU 0.8 with the object.
        let e = evaluate_boxes(&[bb([0, 0, 9, 7])], &truth, 0.5, 1).unwrap();
        assert_eq!(e.curves.precision_at_k, vec![1.0]);
        assert_eq!(e.curves.recall_at_k, vec![1.0]);
        assert_eq!(e.curves.auc_recall, 1.0);
    }

    #[test]
    fn one_to_one_matching() {
        let truth = frame(&[[0, 0, 9, 9], [50, 50, 59, 59]]);
        let boxes = [bb([0, 0, 9, 9]), bb([0, 0, 9, 8])];
        let e = evaluate_boxes(&boxes, &truth, 0.5, 2).unwrap();
        assert_eq!(e.curves.precision_at_k[1], 0.5);
        assert_eq!(e.curves.recall_at_k[1], 0.5);
    }

    #[test]
    fn no_match_gives_zero_curves() {
        let truth = frame(&[[0, 0, 9, 9]]);
        let e = evaluate_boxes(&[bb([30, 30, 40, 40]); 3], &truth, 0.5, 5).unwrap();
        assert!(e.curves.precision_at_k.iter().all(|&v| v == 0.0));
        assert!(e.curves.recall_at_k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn precision_uses_k_even_past_the_list() {
        let truth = frame(&[[0, 0, 9, 9]]);
        let e = evaluate_boxes(&[bb([0, 0, 9, 9])], &truth, 0.5, 4).unwrap();
        assert_eq!(e.curves.precision_at_k, vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
    }

    #[test]
    fn empty_truth_is_flagged() {
        let e = evaluate_boxes(&[bb([0, 0, 1, 1])], &frame(&[]), 0.5, 3).unwrap();
        assert!(e.empty_truth);
        assert_eq!(e.curves.recall_at_k, vec![1.0; 3]);
        assert_eq!(e.curves.precision_at_k, vec![0.0; 3]);
    }

    #[test]
    fn auc_normalization() {
        assert_eq!(normalized_auc(&[0.3]), 0.3);
        assert_eq!(normalized_auc(&[0.0, 1.0]), 0.5);
        assert_eq!(normalized_auc(&[1.0; 200]), 1.0);
    }

    #[test]
    fn global_recall_counts_ids_once() {
        let a = frame(&[[0, 0, 9, 9], [50, 50, 59, 59]]);
        let b = frame(&[[0, 0, 9, 9], [50, 50, 59, 59]]);
        // Object 1 found at rank 0 in frame a; object 2 at rank 1 in frame b.
        let frames = vec![
            (vec![bb([0, 0, 9, 9])], a),
            (vec![bb([80, 80, 90, 90]), bb([50, 50, 59, 59])], b),
        ];
        let s = evaluate_sequence(&frames, 0.5, 3).unwrap();
        assert_eq!(s.aggregate.global_recall_at_k, vec![0.5, 1.0, 1.0]);
        assert_eq!(s.aggregate.recall_at_k, vec![0.25, 0.5, 0.5]);
        assert_eq!(s.summary(0.5).n_objects, 2);
    }

    #[test]
    fn id_map_ground_truth() {
        let ids = [0u16, 3, 3, 0, 0, 0, 7, 7, 7];
        let f = GroundTruthFrame::from_id_map("x", 3, 3, &ids).unwrap();
        let objs: Vec<(u32, BBox)> = f.objects().iter().map(|o| (o.id, o.bbox)).collect();
        assert_eq!(objs, vec![(3, bb([1, 0, 2, 0])), (7, bb([0, 2, 2, 2]))]);
        assert!(GroundTruthFrame::new("d", vec![f.objects()[0].clone(), f.objects()[0].clone()]).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = curves(vec![1.0, 0.5], vec![0.5, 0.5], vec![0.5, 1.0]);
        assert_eq!(curves_to_csv(&c), "k,precision,recall,global_recall\n1,1,0.5,0.5\n2,0.5,0.5,1\n");
        assert!(curves_to_svg(&c).starts_with("<svg"));
    }

    fn scene() -> impl Strategy<Value = (Vec<[usize; 4]>, Vec<[usize; 4]>)> {
        let b = (0usize..50, 0usize..50, 1usize..20, 1usize..20).prop_map(|(x, y, w, h)| [x, y, x + w, y + h]);
        (prop::collection::vec(b.clone(), 0..6), prop::collection::vec(b, 0..30))
    }

    proptest! {
        #[test]
        fn curve_invariants((objs, props) in scene(), k_max in 1usize..40) {
            let truth = frame(&objs);
            let boxes: Vec<BBox> = props.iter().map(|&b| bb(b)).collect();
            let e = evaluate_boxes(&boxes, &truth, 0.5, k_max).unwrap();
            let c = &e.curves;
            prop_assert_eq!(c.precision_at_k.len(), k_max);
            for k in 0..k_max {
                let matches = (c.precision_at_k[k] * (k + 1) as f64).round() as usize;
                prop_assert!(matches <= (k + 1).min(objs.len()));
                prop_assert!((0.0..=1.0).contains(&c.precision_at_k[k]));
                prop_assert!((0.0..=1.0).contains(&c.recall_at_k[k]));
                if k > 0 {
                    prop_assert!(c.recall_at_k[k] >= c.recall_at_k[k - 1]);
                    prop_assert!(c.global_recall_at_k[k] >= c.global_recall_at_k[k - 1]);
                }
            }
        }
    }
}
