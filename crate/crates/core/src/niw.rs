//! Normal-inverse-Wishart prior over the mean and covariance of a table's
//! average-RGB observations, and the closed-form marginal likelihood.
//!
//! With `d = 3`, `kn = k0 + n`, `vn = v0 + n`, `mn = (k0 m0 + sum) / kn` and
//! `Sn = S0 + outer + k0 m0 m0' - kn mn mn'`:
//!
//! ```text
//! ln p(x) = -(n d / 2) ln(pi) + (d / 2) ln(k0 / kn)
//!           + (v0 / 2) ln|S0| - (vn / 2) ln|Sn|
//!           + ln G_d(vn / 2) - ln G_d(v0 / 2)
//! ```

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const DIM: usize = 3;
const JITTER: f64 = 1e-10;

static JITTER_COUNT: AtomicU64 = AtomicU64::new(0);

/// Number of log-determinants that needed diagonal jitter to factorize.
pub fn jitter_count() -> u64 {
    JITTER_COUNT.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NiwPriorRepr", into = "NiwPriorRepr")]
pub struct NiwPrior {
    m0: Vector3<f64>,
    kappa0: f64,
    s0: Matrix3<f64>,
    v0: f64,
    ln_det_s0: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NiwPriorRepr {
    m0: [f64; 3],
    kappa0: f64,
    s0: [[f64; 3]; 3],
    v0: f64,
}

impl TryFrom<NiwPriorRepr> for NiwPrior {
    type Error = Error;
    fn try_from(r: NiwPriorRepr) -> Result<Self> {
        NiwPrior::new(r.m0, r.kappa0, r.s0, r.v0)
    }
}

impl From<NiwPrior> for NiwPriorRepr {
    fn from(p: NiwPrior) -> Self {
        let s = p.s0;
        NiwPriorRepr {
            m0: [p.m0[0], p.m0[1], p.m0[2]],
            kappa0: p.kappa0,
            s0: [0, 1, 2].map(|r| [s[(r, 0)], s[(r, 1)], s[(r, 2)]]),
            v0: p.v0,
        }
    }
}

impl NiwPrior {
    /// `s0` is given row-major.
    pub fn new(m0: [f64; 3], kappa0: f64, s0: [[f64; 3]; 3], v0: f64) -> Result<Self> {
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa0 must be positive, got {kappa0}")));
        }
        if !(v0 > (DIM - 1) as f64 && v0.is_finite()) {
            return Err(Error::InvalidParameter(format!("v0 must exceed {}, got {v0}", DIM - 1)));
        }
        if m0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("m0 must be finite, got {m0:?}")));
        }
        let s0 = Matrix3::from_fn(|r, c| s0[r][c]);
        if (s0 - s0.transpose()).abs().max() > 1e-12 * s0.abs().max().max(1.0) {
            return Err(Error::InvalidParameter("S0 must be symmetric".into()));
        }
        let ln_det_s0 = s0
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            .ok_or_else(|| Error::InvalidParameter("S0 must be positive definite".into()))?;
        Ok(Self {
            m0: Vector3::from(m0),
            kappa0,
            s0,
            v0,
            ln_det_s0,
        })
    }

    pub fn m0(&self) -> [f64; 3] {
        [self.m0[0], self.m0[1], self.m0[2]]
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn s0(&self) -> Matrix3<f64> {
        self.s0
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Posterior hyperparameters after observing `stats`.
    pub fn posterior(&self, stats: &TableStats) -> Result<NiwPrior> {
        let (kn, mn, sn) = self.update(stats);
        let ln_det = ln_det_spd(&sn)?;
        Ok(NiwPrior {
            m0: mn,
            kappa0: kn,
            s0: sn,
            v0: self.v0 + stats.n as f64,
            ln_det_s0: ln_det,
        })
    }

    fn update(&self, stats: &TableStats) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let n = stats.n as f64;
        let kn = self.kappa0 + n;
        let mn = (self.kappa0 * self.m0 + stats.sum) / kn;
        let sn = self.s0 + stats.outer + self.kappa0 * self.m0 * self.m0.transpose()
            - kn * mn * mn.transpose();
        // Symmetrize away rounding.
        let sn = 0.5 * (sn + sn.transpose());
        (kn, mn, sn)
    }
}

impl Default for NiwPrior {
    fn default() -> Self {
        let ten = 10.0;
        Self::new(
            [1.0, 1.0, 1.0],
            0.1,
            [[ten, 0.0, 0.0], [0.0, ten, 0.0], [0.0, 0.0, ten]],
            5.0,
        )
        .expect("default prior is valid")
    }
}

/// Sufficient statistics of a table's observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableStats {
    pub n: usize,
    pub sum: Vector3<f64>,
    pub outer: Matrix3<f64>,
}

impl Default for TableStats {
    fn default() -> Self {
        Self::empty()
    }
}

impl TableStats {
    pub fn empty() -> Self {
        Self {
            n: 0,
            sum: Vector3::zeros(),
            outer: Matrix3::zeros(),
        }
    }

    pub fn from_point(x: [f64; 3]) -> Self {
        let v = Vector3::from(x);
        Self {
            n: 1,
            sum: v,
            outer: v * v.transpose(),
        }
    }

    pub fn from_points<'a>(xs: impl IntoIterator<Item = &'a [f64; 3]>) -> Self {
        let mut s = Self::empty();
        for x in xs {
            s.add_point(*x);
        }
        s
    }

    pub fn add_point(&mut self, x: [f64; 3]) {
        let v = Vector3::from(x);
        self.n += 1;
        self.sum += v;
        self.outer += v * v.transpose();
    }

    /// Componentwise sum of two tables' statistics.
    pub fn merged(&self, other: &TableStats) -> TableStats {
        TableStats {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            outer: self.outer + other.outer,
        }
    }
}

/// `ln G_d(a)`, the multivariate gamma function.
pub fn ln_multivariate_gamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * PI.ln() + (1..=d).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// `ln |m|` for a symmetric positive-definite matrix, with jitter on failure.
fn ln_det_spd(m: &Matrix3<f64>) -> Result<f64> {
    let from_chol = |c: nalgebra::Cholesky<f64, nalgebra::U3>| {
        2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    if let Some(c) = m.cholesky() {
        return Ok(from_chol(c));
    }
    JITTER_COUNT.fetch_add(1, Ordering::Relaxed);
    let scale = m.diagonal().abs().max().max(1.0);
    let jittered = m + Matrix3::identity() * (JITTER * scale);
    jittered.cholesky().map(from_chol).ok_or_else(|| {
        Error::Numerical(format!("posterior scale matrix is not positive definite: {m}"))
    })
}

/// Log marginal likelihood of a table's observations under the prior.
pub fn niw_log_marginal(stats: &TableStats, prior: &NiwPrior) -> Result<f64> {
    if stats.n == 0 {
        return Ok(0.0);
    }
    let n = stats.n as f64;
    let d = DIM as f64;
    let (kn, _, sn) = prior.update(stats);
    let vn = prior.v0 + n;
    let ln_det_sn = ln_det_spd(&sn)?;
    Ok(-(n * d / 2.0) * PI.ln() + (d / 2.0) * (prior.kappa0 / kn).ln()
        + (prior.v0 / 2.0) * prior.ln_det_s0
        - (vn / 2.0) * ln_det_sn
        + ln_multivariate_gamma(DIM, vn / 2.0)
        - ln_multivariate_gamma(DIM, prior.v0 / 2.0))
}

/// `ln L` for merging tables `k` and `l`: marginal of the union over the product of marginals.
pub fn merge_log_ratio(stats_k: &TableStats, stats_l: &TableStats, prior: &NiwPrior) -> Result<f64> {
    if stats_k.n == 0 || stats_l.n == 0 {
        return Err(Error::Precondition("merge ratio needs two non-empty tables".into()));
    }
    Ok(niw_log_marginal(&stats_k.merged(stats_l), prior)?
        - (niw_log_marginal(stats_k, prior)? + niw_log_marginal(stats_l, prior)?))
}
