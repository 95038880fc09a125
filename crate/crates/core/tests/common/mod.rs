//! Fixture generators and reference implementations shared by the
//! integration tests. Everything here is deliberately naive.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf_gram(rows: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| (-gamma * sqd(a, b)).exp()).collect())
        .collect()
}

/// Euclidean projection onto {Σα = 1, 0 ≤ α ≤ c} by bisection on the shift.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let total = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).clamp(0.0, c)).collect()
}

pub fn quad(k: &[Vec<f64>], a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            s += a[i] * a[j] * k[i][j];
        }
    }
    0.5 * s
}

/// Accelerated projected gradient on ½αᵀKα over the box-simplex.
pub fn qp_oracle(k: &[Vec<f64>], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = k.len();
    // Gershgorin bound on the largest eigenvalue.
    let lip = k
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut x = project(&vec![1.0 / n as f64; n], c);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * y[j]).sum()).collect();
        let step: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - gi / lip).collect();
        let next = project(&step, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = next;
        t = t_next;
    }
    let obj = quad(k, &x);
    (x, obj)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn lu_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[p][col] == 0.0 {
            return 0.0;
        }
        if p != col {
            a.swap(p, col);
            det = -det;
        }
        det *= a[col][col];
        let pivot = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot[col];
            for (x, p) in row.iter_mut().zip(&pivot).skip(col) {
                *x -= f * p;
            }
        }
    }
    det
}

/// MLE covariance of a subset as nested vectors.
pub fn subset_cov(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let h = idx.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| idx.iter().map(|&i| rows[i][j]).sum::<f64>() / h)
        .collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    idx.iter()
                        .map(|&i| (rows[i][a] - mean[a]) * (rows[i][b] - mean[b]))
                        .sum::<f64>()
                        / h
                })
                .collect()
        })
        .collect()
}

/// Smallest subset covariance determinant over every h-subset.
pub fn exhaustive_mcd_det(rows: &[Vec<f64>], h: usize) -> f64 {
    fn rec(rows: &[Vec<f64>], h: usize, start: usize, cur: &mut Vec<usize>, best: &mut f64) {
        if cur.len() == h {
            *best = best.min(lu_det(subset_cov(rows, cur)));
            return;
        }
        for i in start..rows.len() {
            if rows.len() - i < h - cur.len() {
                break;
            }
            cur.push(i);
            rec(rows, h, i + 1, cur, best);
            cur.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(rows, h, 0, &mut Vec::new(), &mut best);
    best
}

/// LOF straight from the definitions, with the same exact-k neighborhood
/// (ties by index) and the same 1e-10 reachability floor as the library.
pub struct BruteLof {
    refs: Vec<Vec<f64>>,
    k: usize,
    kdist: Vec<f64>,
    lrd: Vec<f64>,
}

fn knn(refs: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..refs.len())
        .filter(|&i| Some(i) != skip)
        .map(|i| (i, sqd(&refs[i], x).sqrt()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

impl BruteLof {
    pub fn new(refs: Vec<Vec<f64>>, k: usize) -> Self {
        let n = refs.len();
        let hoods: Vec<_> = (0..n).map(|i| knn(&refs, &refs[i], k, Some(i))).collect();
        let kdist: Vec<f64> = hoods.iter().map(|h| h[k - 1].1).collect();
        let lrd = hoods
            .iter()
            .map(|h| {
                let reach: f64 = h.iter().map(|&(o, d)| d.max(kdist[o])).sum::<f64>() / k as f64;
                1.0 / (reach + 1e-10)
            })
            .collect();
        Self { refs, k, kdist, lrd }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let h = knn(&self.refs, x, self.k, None);
        let reach: f64 = h.iter().map(|&(o, d)| d.max(self.kdist[o])).sum::<f64>() / self.k as f64;
        let lrd_x = 1.0 / (reach + 1e-10);
        h.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64 / lrd_x
    }

    pub fn training_score(&self, i: usize) -> f64 {
        let h = knn(&self.refs, &self.refs[i], self.k, Some(i));
        h.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64 / self.lrd[i]
    }
}

/// Classical Student two-sample statistic with pooled variance.
pub fn student_t(a: &[f64], b: &[f64]) -> f64 {
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (m(a), m(b));
    let ss = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = (ss(a, ma) + ss(b, mb)) / (na + nb - 2.0);
    (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
}
