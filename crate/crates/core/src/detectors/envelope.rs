//! Robust elliptic envelope: minimum covariance determinant location/scatter
//! plus a Mahalanobis-distance cutoff.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{chol_det, chol_inverse, chol_quad_form, cholesky, mean_cov, trace};
use super::DetectorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdOptions {
    /// Random initial h-subsets.
    pub n_starts: usize,
    /// Candidates (after two C-steps) iterated to convergence.
    pub n_best: usize,
    /// Enumerate every h-subset when C(n, h) does not exceed this.
    pub exhaustive_limit: u64,
    pub max_csteps: usize,
    pub seed: u64,
}

impl Default for McdOptions {
    fn default() -> Self {
        Self {
            n_starts: 500,
            n_best: 10,
            exhaustive_limit: 50_000,
            max_csteps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McdFit {
    pub mean: Vec<f64>,
    /// Covariance of the optimal subset, ridge-regularized.
    pub cov: Vec<f64>,
    /// Determinant of the unregularized subset covariance (the MCD objective).
    pub det: f64,
    /// Sorted row indices of the optimal h-subset.
    pub subset: Vec<usize>,
    pub h: usize,
}

/// `⌈0.75 n⌉`, raised to the breakdown-point minimum when needed.
pub fn default_support(n: usize, d: usize) -> usize {
    (3 * n).div_ceil(4).max(min_support(n, d)).min(n)
}

pub fn min_support(n: usize, d: usize) -> usize {
    (n + d).div_ceil(2)
}

/// Determinant of the 1/h covariance of `idx`, or 0 when singular.
pub fn subset_det(rows: &[Vec<f64>], idx: &[usize]) -> f64 {
    let d = rows[0].len();
    let (_, cov) = mean_cov(rows, idx, d);
    cholesky(&cov, d).map_or(0.0, |l| chol_det(&l, d))
}

/// Number of k-subsets of n, saturating.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Minimum covariance determinant over h-subsets.
pub fn fit_mcd(rows: &[Vec<f64>], h: usize, opts: &McdOptions) -> Result<McdFit, DetectorError> {
    super::check_rows(rows)?;
    let n = rows.len();
    let d = rows[0].len();
    if n < 2 {
        return Err(DetectorError::TooFewRows(n));
    }
    if h > n || h < min_support(n, d) {
        return Err(DetectorError::BadHyperparameter(format!(
            "MCD support h={h} must satisfy {} <= h <= {n}",
            min_support(n, d)
        )));
    }

    let (subset, det) = if h == n {
        let all: Vec<usize> = (0..n).collect();
        let det = subset_det(rows, &all);
        (all, det)
    } else if binomial(n as u64, h as u64) <= opts.exhaustive_limit {
        exhaustive(rows, h)
    } else {
        csteps_search(rows, h, opts)
    };

    let (mean, mut cov) = mean_cov(rows, &subset, d);
    let eps = 1e-9 * trace(&cov, d) / d as f64;
    if !(eps > 0.0) {
        return Err(DetectorError::SingularCovariance);
    }
    for i in 0..d {
        cov[i * d + i] += eps;
    }
    if cholesky(&cov, d).is_none() {
        return Err(DetectorError::SingularCovariance);
    }
    Ok(McdFit {
        mean,
        cov,
        det,
        subset,
        h,
    })
}

fn exhaustive(rows: &[Vec<f64>], h: usize) -> (Vec<usize>, f64) {
    let n = rows.len();
    let mut idx: Vec<usize> = (0..h).collect();
    let mut best = (idx.clone(), subset_det(rows, &idx));
    loop {
        // next combination in lexicographic order
        let mut i = h;
        while i > 0 && idx[i - 1] == n - h + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..h {
            idx[j] = idx[j - 1] + 1;
        }
        let det = subset_det(rows, &idx);
        if det < best.1 {
            best = (idx.clone(), det);
        }
    }
    best
}

/// One concentration step: the h points closest (in the Mahalanobis metric of
/// `subset`) form the next subset. Returns `None` when the subset covariance
/// cannot be factored even with a ridge.
pub fn c_step(rows: &[Vec<f64>], subset: &[usize], h: usize) -> Option<(Vec<usize>, f64)> {
    let d = rows[0].len();
    let (mean, mut cov) = mean_cov(rows, subset, d);
    let l = match cholesky(&cov, d) {
        Some(l) => l,
        None => {
            let eps = 1e-9 * trace(&cov, d).max(f64::MIN_POSITIVE) / d as f64;
            for i in 0..d {
                cov[i * d + i] += eps;
            }
            cholesky(&cov, d)?
        }
    };
    let mut dist: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
            (chol_quad_form(&l, d, &c), i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut next: Vec<usize> = dist[..h].iter().map(|p| p.1).collect();
    next.sort_unstable();
    let det = subset_det(rows, &next);
    Some((next, det))
}

fn iterate_csteps(rows: &[Vec<f64>], start: Vec<usize>, h: usize, max_steps: usize) -> (Vec<usize>, f64) {
    let mut cur = start;
    let mut cur_det = subset_det(rows, &cur);
    for _ in 0..max_steps {
        if cur_det == 0.0 {
            break;
        }
        match c_step(rows, &cur, h) {
            Some((next, det)) if det < cur_det => {
                cur = next;
                cur_det = det;
            }
            _ => break,
        }
    }
    (cur, cur_det)
}

fn csteps_search(rows: &[Vec<f64>], h: usize, opts: &McdOptions) -> (Vec<usize>, f64) {
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut candidates: Vec<(Vec<usize>, f64)> = (0..opts.n_starts.max(1))
        .map(|_| {
            let mut start = sample(&mut rng, n, h).into_vec();
            start.sort_unstable();
            iterate_csteps(rows, start, h, 2)
        })
        .collect();
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
    candidates.dedup_by(|a, b| a.0 == b.0);
    candidates
        .into_iter()
        .take(opts.n_best.max(1))
        .map(|(s, _)| iterate_csteps(rows, s, h, opts.max_csteps))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeParams {
    pub contamination: f64,
    /// MCD support; `None` selects ⌈0.75 n⌉.
    pub support: Option<usize>,
    pub mcd: McdOptions,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self {
            contamination: 0.05,
            support: None,
            mcd: McdOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticEnvelopeModel {
    pub mu: Vec<f64>,
    /// Row-major d x d.
    pub cov: Vec<f64>,
    pub cov_inv: Vec<f64>,
    pub threshold: f64,
    pub h: usize,
    pub contamination: f64,
    #[serde(skip)]
    chol: Vec<f64>,
}

impl EllipticEnvelopeModel {
    /// Builds a model from explicit location and scatter.
    pub fn from_parts(mu: Vec<f64>, cov: Vec<f64>, threshold: f64) -> Result<Self, DetectorError> {
        let d = mu.len();
        if cov.len() != d * d {
            return Err(DetectorError::DimensionMismatch {
                expected: d * d,
                got: cov.len(),
            });
        }
        let chol = cholesky(&cov, d).ok_or(DetectorError::SingularCovariance)?;
        Ok(Self {
            cov_inv: chol_inverse(&chol, d),
            mu,
            cov,
            threshold,
            h: 0,
            contamination: 0.0,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Restores the Cholesky factor after deserialization.
    pub(crate) fn refresh(&mut self) -> Result<(), DetectorError> {
        self.chol = cholesky(&self.cov, self.dim()).ok_or(DetectorError::SingularCovariance)?;
        Ok(())
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64, DetectorError> {
        super::check_dim(self.dim(), x)?;
        Ok(self.mahalanobis_unchecked(x))
    }

    pub(crate) fn mahalanobis_unchecked(&self, x: &[f64]) -> f64 {
        let c: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        chol_quad_form(&self.chol, self.dim(), &c).max(0.0).sqrt()
    }

    /// Distances for every row, as `(row index, distance)` in ascending
    /// distance order.
    pub fn mahalanobis_sorted(&self, rows: &[Vec<f64>]) -> Result<Vec<(usize, f64)>, DetectorError> {
        let mut out = rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.mahalanobis(r).map(|d| (i, d)))
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    pub fn is_anomaly(&self, x: &[f64]) -> Result<bool, DetectorError> {
        Ok(self.mahalanobis(x)? > self.threshold)
    }
}

/// Quantile with midpoint interpolation between the two bracketing order
/// statistics. Positions within rounding distance of an integer snap to it,
/// so `q -> 1` gives the sample maximum.
pub fn midpoint_quantile(sorted: &[f64], q: f64) -> f64 {
    let mut pos = q * (sorted.len() - 1) as f64;
    if (pos - pos.round()).abs() <= 1e-9 {
        pos = pos.round();
    }
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    0.5 * (sorted[lo] + sorted[hi])
}

pub fn train_envelope(rows: &[Vec<f64>], params: &EnvelopeParams) -> Result<EllipticEnvelopeModel, DetectorError> {
    if !(params.contamination > 0.0 && params.contamination < 0.5) {
        return Err(DetectorError::BadHyperparameter(format!(
            "contamination must be in (0, 0.5), got {}",
            params.contamination
        )));
    }
    super::check_rows(rows)?;
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let h = params.support.unwrap_or_else(|| default_support(n, d));
    let fit = fit_mcd(rows, h, &params.mcd)?;
    let mut model = EllipticEnvelopeModel::from_parts(fit.mean, fit.cov, 0.0)?;
    let mut dist: Vec<f64> = rows.iter().map(|r| model.mahalanobis_unchecked(r)).collect();
    dist.sort_by(f64::total_cmp);
    model.threshold = midpoint_quantile(&dist, 1.0 - params.contamination);
    model.h = h;
    model.contamination = params.contamination;
    if !(model.threshold > 0.0) {
        return Err(DetectorError::DegenerateData("zero Mahalanobis threshold".into()));
    }
    Ok(model)
}
