//! Gibbs sampling of customer links from the ddCRP posterior.
//!
//! Each step removes customer `i`'s link, scores every candidate target
//! (`i` itself with weight `alpha`, adjacent customers with `f(d_ij)`, times
//! the merge likelihood ratio when the link would join two tables), and draws
//! the new link from the normalized weights. Customers at infinite distance
//! have zero weight and are never candidates.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DistanceTable, ExponentialDecay, FeatureVector};
use crate::niw::{niw_log_marginal, NiwPrior, TableStats};
use crate::partition::{LinkGraph, LinkState, TableAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Self-link mass.
    pub alpha: f64,
    /// Decay scale of `f(d) = exp(-d/a)`.
    pub a: f64,
    pub niw: NiwPrior,
    /// Recorded samples `M`.
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Visit customers in a fresh random order each sweep instead of by index.
    pub random_scan: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            a: 0.05,
            niw: NiwPrior::default(),
            n_samples: 50,
            burn_in: 50,
            seed: 0,
            random_scan: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        ExponentialDecay::new(self.a)?;
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One recorded state of the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationSample {
    pub sweep_index: usize,
    pub links: LinkState,
    pub assignment: TableAssignment,
}

/// `ln(sum(exp(w)))`, `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp(weights: &[f64]) -> f64 {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + weights.iter().map(|w| (w - max).exp()).sum::<f64>().ln()
}

/// Normalized probabilities from unnormalized log-weights.
pub fn normalize_log_weights(weights: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(weights);
    weights.iter().map(|w| (w - z).exp()).collect()
}

/// A single Markov chain: link graph, per-table statistics and cached marginals.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    observations: Vec<[f64; 3]>,
    distances: &'a DistanceTable,
    prior: NiwPrior,
    ln_alpha: f64,
    decay: ExponentialDecay,
    graph: LinkGraph,
    stats: Vec<TableStats>,
    ln_marginal: Vec<f64>,
}

impl<'a> Chain<'a> {
    /// Starts from all self-links.
    pub fn new(observations: Vec<[f64; 3]>, distances: &'a DistanceTable, config: &SamplerConfig) -> Result<Self> {
        let n = observations.len();
        Self::from_links(observations, distances, config, LinkState::self_links(n))
    }

    pub fn from_links(
        observations: Vec<[f64; 3]>,
        distances: &'a DistanceTable,
        config: &SamplerConfig,
        links: LinkState,
    ) -> Result<Self> {
        config.validate()?;
        if observations.len() != distances.n() || links.len() != distances.n() {
            return Err(Error::InvalidParameter(format!(
                "{} observations and {} links for {} customers",
                observations.len(),
                links.len(),
                distances.n()
            )));
        }
        let graph = LinkGraph::new(&links);
        let mut chain = Self {
            observations,
            distances,
            prior: config.niw.clone(),
            ln_alpha: config.alpha.ln(),
            decay: ExponentialDecay::new(config.a)?,
            graph,
            stats: Vec::new(),
            ln_marginal: Vec::new(),
        };
        for t in 0..chain.graph.n_slots() {
            chain.refresh_slot(t)?;
        }
        Ok(chain)
    }

    pub fn n_customers(&self) -> usize {
        self.observations.len()
    }

    pub fn links(&self) -> LinkState {
        self.graph.links()
    }

    pub fn assignment(&self) -> TableAssignment {
        self.graph.assignment()
    }

    /// Members (ascending) and maintained statistics of every table.
    pub fn tables(&self) -> Vec<(Vec<usize>, TableStats)> {
        self.graph
            .occupied()
            .map(|t| {
                let mut m = self.graph.members(t).to_vec();
                m.sort_unstable();
                (m, self.stats[t])
            })
            .collect()
    }

    fn refresh_slot(&mut self, t: usize) -> Result<()> {
        if self.stats.len() <= t {
            self.stats.resize(t + 1, TableStats::empty());
            self.ln_marginal.resize(t + 1, 0.0);
        }
        let stats = TableStats::from_points(self.graph.members(t).iter().map(|&i| &self.observations[i]));
        self.ln_marginal[t] = niw_log_marginal(&stats, &self.prior)?;
        self.stats[t] = stats;
        Ok(())
    }

    /// Removes `i`'s link and returns the unnormalized log-weight of each candidate target.
    ///
    /// The chain is left with `i` self-linked; follow with [`Chain::relink`].
    pub fn link_log_weights(&mut self, i: usize) -> Result<Vec<(usize, f64)>> {
        if let Some(split) = self.graph.unlink(i) {
            self.refresh_slot(split.with_customer)?;
            self.refresh_slot(split.remainder)?;
        }
        let own = self.graph.table_of(i);
        let mut merge_cache: Vec<(usize, f64)> = Vec::new();
        let mut out = Vec::with_capacity(self.distances.neighbors(i).len() + 1);
        out.push((i, self.ln_alpha));
        for &(j, d) in self.distances.neighbors(i) {
            let ln_f = self.decay.ln_eval(d);
            if ln_f == f64::NEG_INFINITY {
                continue;
            }
            let other = self.graph.table_of(j);
            let ln_l = if other == own {
                0.0
            } else if let Some(&(_, v)) = merge_cache.iter().find(|(t, _)| *t == other) {
                v
            } else {
                let joined = self.stats[own].merged(&self.stats[other]);
                let v = niw_log_marginal(&joined, &self.prior)?
                    - self.ln_marginal[own]
                    - self.ln_marginal[other];
                merge_cache.push((other, v));
                v
            };
            out.push((j, ln_f + ln_l));
        }
        Ok(out)
    }

    /// Links self-linked customer `i` to `j`, updating table statistics.
    pub fn relink(&mut self, i: usize, j: usize) -> Result<()> {
        if let Some(m) = self.graph.link(i, j) {
            self.stats[m.kept] = self.stats[m.kept].merged(&self.stats[m.absorbed]);
            self.stats[m.absorbed] = TableStats::empty();
            self.ln_marginal[m.kept] = niw_log_marginal(&self.stats[m.kept], &self.prior)?;
            self.ln_marginal[m.absorbed] = 0.0;
        }
        Ok(())
    }

    /// Resamples customer `i`'s link; returns the new target.
    pub fn resample<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<usize> {
        let candidates = self.link_log_weights(i)?;
        let weights: Vec<f64> = candidates.iter().map(|c| c.1).collect();
        let z = log_sum_exp(&weights);
        if !z.is_finite() {
            return Err(Error::Numerical(format!("customer {i}: no candidate has positive weight")));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = candidates[candidates.len() - 1].0;
        for &(j, w) in &candidates {
            acc += (w - z).exp();
            if u < acc {
                chosen = j;
                break;
            }
        }
        self.relink(i, chosen)?;
        Ok(chosen)
    }

    /// One pass over all customers, in index order or shuffled for a random scan.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, random_scan: bool) -> Result<()> {
        let mut order: Vec<usize> = (0..self.n_customers()).collect();
        if random_scan {
            order.shuffle(rng);
        }
        for i in order {
            self.resample(i, rng)?;
        }
        Ok(())
    }
}

/// Runs one full Gibbs sweep from `state` and returns the new link state.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &LinkState,
    features: &[FeatureVector],
    distances: &DistanceTable,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<LinkState> {
    let obs = features.iter().map(|f| f.avg_rgb).collect();
    let mut chain = Chain::from_links(obs, distances, config, state.clone())?;
    chain.sweep(rng, config.random_scan)?;
    Ok(chain.links())
}

/// Draws `n_samples` post-burn-in segmentations from a chain started at all self-links.
pub fn sample_posterior(
    features: &[FeatureVector],
    distances: &DistanceTable,
    config: &SamplerConfig,
) -> Result<Vec<SegmentationSample>> {
    sample_observations(features.iter().map(|f| f.avg_rgb).collect(), distances, config)
}

/// As [`sample_posterior`], with the average-RGB observations given directly.
pub fn sample_observations(
    observations: Vec<[f64; 3]>,
    distances: &DistanceTable,
    config: &SamplerConfig,
) -> Result<Vec<SegmentationSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chain = Chain::new(observations, distances, config)?;
    for _ in 0..config.burn_in {
        chain.sweep(&mut rng, config.random_scan)?;
    }
    let mut samples = Vec::with_capacity(config.n_samples);
    for s in 0..config.n_samples {
        chain.sweep(&mut rng, config.random_scan)?;
        samples.push(SegmentationSample {
            sweep_index: config.burn_in + s,
            links: chain.links(),
            assignment: chain.assignment(),
        });
    }
    Ok(samples)
}

/// Writes the plain-text run log: a header line, then
/// `sweep_index<TAB>K<TAB>c_0,c_1,...` per recorded sample.
pub fn write_run_log<W: Write>(samples: &[SegmentationSample], mut out: W) -> io::Result<()> {
    writeln!(out, "# sweep_index\tK\tlinks")?;
    for s in samples {
        let links: Vec<String> = s.links.as_slice().iter().map(usize::to_string).collect();
        writeln!(out, "{}\t{}\t{}", s.sweep_index, s.assignment.n_tables(), links.join(","))?;
    }
    Ok(())
}

/// Parses a run log back into `(sweep_index, K, links)` records.
pub fn read_run_log(text: &str) -> Result<Vec<(usize, usize, LinkState)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Malformed(format!("run log line {}: {line:?}", n + 1));
        let mut parts = line.split('\t');
        let sweep = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let k = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let links = parts
            .next()
            .ok_or_else(bad)?
            .split(',')
            .map(|v| v.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        out.push((sweep, k, LinkState::new(links)?));
    }
    Ok(out)
}
