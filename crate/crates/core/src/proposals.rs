//! Object proposals: every distinct segment seen across the sampled
//! segmentations, with `P(o) = (#samples containing o) / (total segments over all samples)`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SuperpixelGraph;
use crate::sampler::SegmentationSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Member superpixels, strictly ascending.
    #[serde(rename = "superpixel_ids")]
    pub superpixels: Vec<usize>,
    pub occurrences: usize,
    pub likelihood: f64,
    pub pixel_area: usize,
}

/// Counts segments over sample lists, each sample given as its segments (any order).
///
/// `pixel_count[i]` is the size of superpixel `i`.
pub fn extract_from_segments<S: AsRef<[usize]>>(
    samples: &[Vec<S>],
    pixel_count: &[usize],
) -> Vec<Proposal> {
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut total = 0usize;
    for sample in samples {
        for segment in sample {
            let mut key = segment.as_ref().to_vec();
            key.sort_unstable();
            key.dedup();
            *counts.entry(key).or_insert(0) += 1;
            total += 1;
        }
    }
    let mut out: Vec<Proposal> = counts
        .into_iter()
        .map(|(superpixels, occurrences)| Proposal {
            pixel_area: superpixels.iter().map(|&i| pixel_count[i]).sum(),
            likelihood: occurrences as f64 / total as f64,
            superpixels,
            occurrences,
        })
        .collect();
    out.sort_by(|a, b| {
        b.likelihood
            .total_cmp(&a.likelihood)
            .then_with(|| a.superpixels.cmp(&b.superpixels))
    });
    out
}

/// Unique tables across all samples, sorted by likelihood then by member list.
pub fn extract_proposals(samples: &[SegmentationSample], graph: &SuperpixelGraph) -> Vec<Proposal> {
    let segments: Vec<Vec<&[usize]>> = samples
        .iter()
        .map(|s| s.assignment.all_members().iter().map(Vec::as_slice).collect())
        .collect();
    extract_from_segments(&segments, graph.pixel_counts())
}

/// Keeps proposals whose area fraction lies in `[min_frac, max_frac]`.
pub fn filter_by_size(
    proposals: Vec<Proposal>,
    image_area: usize,
    min_frac: f64,
    max_frac: f64,
) -> Result<Vec<Proposal>> {
    if !(0.0 <= min_frac && min_frac < max_frac && max_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "size bounds must satisfy 0 <= min < max <= 1, got [{min_frac}, {max_frac}]"
        )));
    }
    let area = image_area as f64;
    Ok(proposals
        .into_iter()
        .filter(|p| {
            let frac = p.pixel_area as f64 / area;
            min_frac <= frac && frac <= max_frac
        })
        .collect())
}

pub fn write_proposals<W: Write>(proposals: &[Proposal], mut out: W) -> Result<()> {
    for p in proposals {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_proposals<R: BufRead>(input: R) -> Result<Vec<Proposal>> {
    read_json_lines(input)
}

/// Parses JSON Lines, skipping blank lines.
pub fn read_json_lines<T: serde::de::DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

/// Serialized bytes of a proposal list, as written by [`write_proposals`].
pub fn proposals_to_bytes(proposals: &[Proposal]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_proposals(proposals, &mut buf).expect("writing to memory");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn find<'a>(ps: &'a [Proposal], ids: &[usize]) -> &'a Proposal {
        ps.iter().find(|p| p.superpixels == ids).unwrap()
    }

    #[test]
    fn one_sample_gives_uniform_likelihood() {
        let samples = vec![vec![vec![0, 1], vec![2], vec![3, 4, 5]]];
        let ps = extract_from_segments(&samples, &[1; 6]);
        assert_eq!(ps.len(), 3);
        assert!(ps.iter().all(|p| p.likelihood == 1.0 / 3.0));
    }

    #[test]
    fn two_samples_sharing_a_segment() {
        let a = vec![0, 1];
        let b = vec![2, 3];
        let c = vec![2];
        let samples = vec![vec![a.clone(), b.clone()], vec![a.clone(), c.clone()]];
        let ps = extract_from_segments(&samples, &[10, 20, 30, 40]);
        assert_eq!(find(&ps, &a).likelihood, 0.5);
        assert_eq!(find(&ps, &b).likelihood, 0.25);
        assert_eq!(find(&ps, &c).likelihood, 0.25);
        assert_eq!(find(&ps, &a).occurrences, 2);
        assert_eq!(find(&ps, &b).pixel_area, 70);
        assert_eq!(ps[0].superpixels, a);
    }

    #[test]
    fn stable_segment_in_every_sample() {
        // 50 samples of 10 segments, one segment constant across all of them.
        let samples: Vec<Vec<Vec<usize>>> = (0..50)
            .map(|j| {
                let mut s = vec![vec![0]];
                s.extend((0..9).map(|k| vec![1 + j * 9 + k]));
                s
            })
            .collect();
        let ps = extract_from_segments(&samples, &[1; 1 + 50 * 9]);
        assert_eq!(find(&ps, &[0]).likelihood, 0.1);
    }

    #[test]
    fn size_filter_bounds() {
        let p = |area| Proposal { superpixels: vec![area], occurrences: 1, likelihood: 0.1, pixel_area: area };
        let ps = vec![p(1000), p(5), p(10), p(1001)];
        let kept = filter_by_size(ps.clone(), 10_000, 0.001, 0.1).unwrap();
        let areas: Vec<usize> = kept.iter().map(|p| p.pixel_area).collect();
        assert_eq!(areas, vec![1000, 10]);
        assert_eq!(filter_by_size(ps.clone(), 10_000, 0.0, 1.0).unwrap(), ps);
        assert!(filter_by_size(ps.clone(), 10_000, 0.2, 0.1).is_err());
        assert!(filter_by_size(ps, 10_000, -0.1, 0.1).is_err());
    }

    #[test]
    fn json_field_names() {
        let p = Proposal { superpixels: vec![1, 4], occurrences: 3, likelihood: 0.25, pixel_area: 99 };
        let line = String::from_utf8(proposals_to_bytes(&[p.clone()])).unwrap();
        assert_eq!(
            line,
            "{\"superpixel_ids\":[1,4],\"occurrences\":3,\"likelihood\":0.25,\"pixel_area\":99}\n"
        );
        assert_eq!(read_proposals(line.as_bytes()).unwrap(), vec![p]);
    }

    /// Random partitions of 0..n for `m` samples.
    fn partitions() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
        (1usize..10, 1usize..8).prop_flat_map(|(n, m)| {
            (Just(n), prop::collection::vec(prop::collection::vec(0..n, n), m))
        })
    }

    fn to_segments(n: usize, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut segs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &l) in labels.iter().enumerate() {
            segs[l].push(i);
        }
        segs.into_iter().filter(|s| !s.is_empty()).collect()
    }

    proptest! {
        #[test]
        fn likelihoods_form_a_distribution((n, samples) in partitions()) {
            let segs: Vec<Vec<Vec<usize>>> = samples.iter().map(|l| to_segments(n, l)).collect();
            let total: usize = segs.iter().map(Vec::len).sum();
            let ps = extract_from_segments(&segs, &vec![1; n]);
            prop_assert_eq!(ps.iter().map(|p| p.occurrences).sum::<usize>(), total);
            prop_assert!((ps.iter().map(|p| p.likelihood).sum::<f64>() - 1.0).abs() < 1e-12);
            for p in &ps {
                prop_assert!(p.occurrences >= 1 && p.occurrences <= samples.len());
                prop_assert!(p.likelihood > 0.0 && p.likelihood <= samples.len() as f64 / total as f64);
                prop_assert!(p.superpixels.windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn order_independent((n, samples) in partitions(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let segs: Vec<Vec<Vec<usize>>> = samples.iter().map(|l| to_segments(n, l)).collect();
            let mut shuffled = segs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                extract_from_segments(&segs, &vec![1; n]),
                extract_from_segments(&shuffled, &vec![1; n])
            );
        }
    }
}
