//! Local Outlier Factor over a fixed reference set.
//!
//! Neighbors are the `k` nearest reference points by Euclidean distance, ties
//! broken by ascending reference index, so every neighborhood has exactly `k`
//! members. Densities carry a `1e-10` floor on the mean reachability distance
//! so duplicated points give a finite density.

use serde::{Deserialize, Serialize};

use super::kernel::sq_dist;
use super::DetectorError;

const REACH_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LofParams {
    pub k: usize,
    pub threshold: f64,
}

impl Default for LofParams {
    fn default() -> Self {
        Self { k: 20, threshold: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub reference_points: Vec<Vec<f64>>,
    pub k: usize,
    pub k_distances: Vec<f64>,
    pub lrd: Vec<f64>,
    pub threshold: f64,
    /// Leave-self-out LOF of every reference point.
    pub training_scores: Vec<f64>,
}

/// The `k` nearest reference indices to `x` (optionally skipping one index),
/// with distances, nearest first.
fn neighbors(refs: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (sq_dist(r, x).sqrt(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

pub fn train_lof(rows: &[Vec<f64>], params: &LofParams) -> Result<LofModel, DetectorError> {
    super::check_rows(rows)?;
    let n = rows.len();
    let k = params.k;
    if k == 0 || k >= n {
        return Err(DetectorError::BadK { k, n });
    }
    if !(params.threshold > 0.0) {
        return Err(DetectorError::BadHyperparameter(format!(
            "LOF threshold must be positive, got {}",
            params.threshold
        )));
    }
    use rayon::prelude::*;
    let hoods: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| neighbors(rows, &rows[i], k, Some(i)))
        .collect();
    let k_distances: Vec<f64> = hoods.iter().map(|h| h[k - 1].0).collect();
    let lrd: Vec<f64> = hoods.iter().map(|h| density(h, &k_distances)).collect();
    let training_scores = hoods.iter().zip(&lrd).map(|(h, l)| mean_lrd(h, &lrd) / l).collect();
    Ok(LofModel {
        reference_points: rows.to_vec(),
        k,
        k_distances,
        lrd,
        threshold: params.threshold,
        training_scores,
    })
}

fn density(hood: &[(f64, usize)], k_distances: &[f64]) -> f64 {
    let reach = hood.iter().map(|&(d, o)| d.max(k_distances[o])).sum::<f64>() / hood.len() as f64;
    1.0 / (reach + REACH_FLOOR)
}

fn mean_lrd(hood: &[(f64, usize)], lrd: &[f64]) -> f64 {
    hood.iter().map(|&(_, o)| lrd[o]).sum::<f64>() / hood.len() as f64
}

impl LofModel {
    pub fn dim(&self) -> usize {
        self.reference_points.first().map_or(0, Vec::len)
    }

    /// LOF of a new point against the reference set.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        super::check_dim(self.dim(), x)?;
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        let hood = neighbors(&self.reference_points, x, self.k, None);
        mean_lrd(&hood, &self.lrd) / density(&hood, &self.k_distances)
    }

    pub fn is_anomaly(&self, x: &[f64]) -> Result<bool, DetectorError> {
        Ok(self.score(x)? > self.threshold)
    }
}

/// Convenience wrapper matching the model method.
pub fn lof_score(model: &LofModel, x: &[f64]) -> Result<f64, DetectorError> {
    model.score(x)
}
