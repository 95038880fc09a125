//! One-class SVM trained on the dual
//!
//! ```text
//! min_α  ½ Σ_ij α_i α_j K(x_i, x_j)
//! s.t.   0 ≤ α_i ≤ 1/(ν l),   Σ_i α_i = 1
//! ```
//!
//! with pairwise (two-coordinate) updates on the most violating pair. The
//! decision function is `f(x) = Σ_i α_i K(s_i, x) - b`; a point is normal
//! iff `f(x) > 0`. The primal form writes `⟨w, φ(x)⟩ + b'`, so the stored
//! offset is `b = -b'`.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{sq_dist, Kernel};
use super::DetectorError;

/// Rows above which kernel rows are computed on demand instead of caching
/// the full Gram matrix.
const FULL_GRAM_LIMIT: usize = 4096;
const ROW_CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `1 / (d * var(X))`, variance over all entries.
    Scale,
    /// `1 / median(|x_i - x_j|^2)` over (a deterministic sample of) pairs.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmParams {
    pub nu: f64,
    pub gamma: GammaRule,
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
    /// Maximum number of pair updates.
    pub max_iter: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        Self {
            nu: 0.05,
            gamma: GammaRule::Scale,
            tol: 1e-4,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// `b` in `f(x) = Σ α_i K(s_i, x) - b`.
    pub offset: f64,
    pub gamma: f64,
    pub nu: f64,
    pub train_size: usize,
    pub kernel: Kernel,
    pub iterations: usize,
    /// False when `max_iter` was hit before reaching `tol`.
    pub converged: bool,
    pub objective: f64,
}

/// Result of the dual solve, indexed like the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub offset: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `max G_down - min G_up`.
    pub kkt_gap: f64,
}

pub fn resolve_gamma(rule: GammaRule, rows: &[Vec<f64>]) -> Result<f64, DetectorError> {
    let gamma = match rule {
        GammaRule::Fixed(g) => g,
        GammaRule::Scale => {
            let d = rows.first().map_or(0, Vec::len);
            let n = (rows.len() * d) as f64;
            let mean = rows.iter().flatten().sum::<f64>() / n;
            let var = rows.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(DetectorError::DegenerateData("zero feature variance".into()));
            }
            1.0 / (d as f64 * var)
        }
        GammaRule::Median => {
            // Every pair up to 1000 points; beyond that an evenly strided subset.
            let stride = rows.len().div_ceil(1000).max(1);
            let sample: Vec<&Vec<f64>> = rows.iter().step_by(stride).collect();
            let mut d2: Vec<f64> = Vec::new();
            for i in 0..sample.len() {
                for j in i + 1..sample.len() {
                    d2.push(sq_dist(sample[i], sample[j]));
                }
            }
            d2.sort_by(f64::total_cmp);
            let med = if d2.is_empty() {
                0.0
            } else if d2.len() % 2 == 1 {
                d2[d2.len() / 2]
            } else {
                0.5 * (d2[d2.len() / 2 - 1] + d2[d2.len() / 2])
            };
            if !(med > 0.0) {
                return Err(DetectorError::DegenerateData("median pairwise distance is zero".into()));
            }
            1.0 / med
        }
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DetectorError::BadHyperparameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(gamma)
}

/// Trains on all rows (labels, if any, are ignored).
pub fn train_ocsvm(rows: &[Vec<f64>], params: &OcsvmParams) -> Result<OcsvmModel, DetectorError> {
    super::check_rows(rows)?;
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(DetectorError::BadHyperparameter(format!(
            "nu must be in (0, 1], got {}",
            params.nu
        )));
    }
    if !(params.tol > 0.0) || params.max_iter == 0 {
        return Err(DetectorError::BadHyperparameter(
            "tol must be positive and max_iter non-zero".into(),
        ));
    }
    let distinct = rows.iter().skip(1).any(|r| r != &rows[0]);
    if rows.len() < 2 || !distinct {
        return Err(DetectorError::DegenerateData(
            "need at least two distinct training rows".into(),
        ));
    }
    let gamma = resolve_gamma(params.gamma, rows)?;
    let kernel = Kernel::Rbf { gamma };
    let sol = solve_dual(rows, kernel, params.nu, params.tol, params.max_iter);

    let (support_vectors, alphas): (Vec<_>, Vec<_>) = rows
        .iter()
        .zip(&sol.alpha)
        .filter(|(_, a)| **a > 0.0)
        .map(|(r, a)| (r.clone(), *a))
        .unzip();
    Ok(OcsvmModel {
        support_vectors,
        alphas,
        offset: sol.offset,
        gamma,
        nu: params.nu,
        train_size: rows.len(),
        kernel,
        iterations: sol.iterations,
        converged: sol.converged,
        objective: sol.objective,
    })
}

/// Solves the one-class dual for an arbitrary kernel.
pub fn solve_dual(rows: &[Vec<f64>], kernel: Kernel, nu: f64, tol: f64, max_iter: usize) -> DualSolution {
    let l = rows.len();
    let c = 1.0 / (nu * l as f64);
    let mut gram = Gram::new(rows, kernel);

    // Feasible start: the first ⌊νl⌋ points at the upper bound, remainder on
    // the next point.
    let mut alpha = vec![0.0; l];
    let n_full = ((nu * l as f64).floor() as usize).min(l);
    alpha[..n_full].iter_mut().for_each(|a| *a = c);
    let rest = 1.0 - c * n_full as f64;
    if n_full < l && rest > 0.0 {
        alpha[n_full] = rest.min(c);
    }
    if n_full == l {
        // ν = 1: every α equals 1/l exactly.
        alpha.iter_mut().for_each(|a| *a = 1.0 / l as f64);
    }

    let mut grad = vec![0.0; l];
    for (j, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let kj = gram.row(j);
            for (g, k) in grad.iter_mut().zip(kj.iter()) {
                *g += a * k;
            }
        }
    }
    let diag: Vec<f64> = rows.iter().map(|r| kernel.eval(r, r)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    while iterations < max_iter {
        // i may grow (α_i < C), j may shrink (α_j > 0). Lowest index wins ties.
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut j = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..l {
            if alpha[t] < c && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
                j = t;
            }
        }
        gap = g_max - g_min;
        if i == usize::MAX || j == usize::MAX || gap <= tol {
            converged = true;
            break;
        }
        let ki = gram.row(i);
        let kij = ki[j];
        let eta = (diag[i] + diag[j] - 2.0 * kij).max(1e-12);
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        let step = gap / eta;
        let delta = step.min(room_i).min(room_j);
        if delta == room_i {
            alpha[i] = c;
        } else {
            alpha[i] += delta;
        }
        if delta == room_j {
            alpha[j] = 0.0;
        } else {
            alpha[j] -= delta;
        }
        let ki = ki.clone();
        let kj = gram.row(j);
        for ((g, a), b) in grad.iter_mut().zip(ki.iter()).zip(kj.iter()) {
            *g += delta * (a - b);
        }
        iterations += 1;
    }
    if !converged {
        gap = kkt_gap(&alpha, &grad, c);
    }

    let offset = offset_from_gradient(&alpha, &grad, c);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    DualSolution {
        alpha,
        offset,
        objective,
        iterations,
        converged,
        kkt_gap: gap,
    }
}

fn kkt_gap(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let up = alpha
        .iter()
        .zip(grad)
        .filter(|(a, _)| **a < c)
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    let down = alpha
        .iter()
        .zip(grad)
        .filter(|(a, _)| **a > 0.0)
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    down - up
}

/// Average gradient over free vectors, or the midpoint of the feasible
/// interval when every α sits on a bound.
fn offset_from_gradient(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut sum = 0.0;
    let mut n_free = 0usize;
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a > 0.0 && a < c {
            sum += g;
            n_free += 1;
        } else if a >= c {
            lb = lb.max(g);
        } else {
            ub = ub.min(g);
        }
    }
    if n_free > 0 {
        sum / n_free as f64
    } else if lb.is_finite() && ub.is_finite() {
        0.5 * (lb + ub)
    } else if lb.is_finite() {
        lb
    } else {
        ub
    }
}

/// `½ αᵀ K α` evaluated directly.
pub fn dual_objective(rows: &[Vec<f64>], kernel: Kernel, alpha: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, ri) in rows.iter().enumerate() {
        if alpha[i] == 0.0 {
            continue;
        }
        for (j, rj) in rows.iter().enumerate() {
            s += alpha[i] * alpha[j] * kernel.eval(ri, rj);
        }
    }
    0.5 * s
}

impl OcsvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// `f(x) = Σ α_i K(s_i, x) - b`.
    pub fn decision(&self, x: &[f64]) -> Result<f64, DetectorError> {
        super::check_dim(self.dim(), x)?;
        Ok(self.decision_unchecked(x))
    }

    pub(crate) fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(s, a)| a * self.kernel.eval(s, x))
            .sum::<f64>()
            - self.offset
    }

    /// Upper bound `1/(ν l)` on each α.
    pub fn alpha_bound(&self) -> f64 {
        1.0 / (self.nu * self.train_size as f64)
    }

    /// Support vectors strictly inside the box.
    pub fn unbounded_support(&self) -> impl Iterator<Item = &Vec<f64>> {
        let c = self.alpha_bound();
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .filter(move |(_, a)| **a < c)
            .map(|(s, _)| s)
    }
}

/// Kernel rows, either a full Gram matrix or an on-demand FIFO row cache.
struct Gram<'a> {
    rows: &'a [Vec<f64>],
    kernel: Kernel,
    full: Option<Vec<f64>>,
    cache: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> Gram<'a> {
    fn new(rows: &'a [Vec<f64>], kernel: Kernel) -> Self {
        let n = rows.len();
        let full = (n <= FULL_GRAM_LIMIT).then(|| {
            let mut m = vec![0.0; n * n];
            m.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = kernel.eval(&rows[i], &rows[j]);
                }
            });
            m
        });
        Self {
            rows,
            kernel,
            full,
            cache: if n <= FULL_GRAM_LIMIT {
                Vec::new()
            } else {
                vec![None; n]
            },
            order: VecDeque::new(),
            capacity: (ROW_CACHE_BYTES / (8 * n.max(1))).max(2),
        }
    }

    fn row(&mut self, i: usize) -> RowRef<'_> {
        let n = self.rows.len();
        if let Some(m) = &self.full {
            return RowRef(&m[i * n..(i + 1) * n]);
        }
        if self.cache[i].is_none() {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.cache[old] = None;
                }
            }
            let xi = &self.rows[i];
            let kernel = self.kernel;
            let row: Vec<f64> = self.rows.par_iter().map(|r| kernel.eval(xi, r)).collect();
            self.cache[i] = Some(row);
            self.order.push_back(i);
        }
        RowRef(self.cache[i].as_deref().expect("row cached above"))
    }
}

struct RowRef<'a>(&'a [f64]);

impl RowRef<'_> {
    fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    fn clone(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

impl std::ops::Index<usize> for RowRef<'_> {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
