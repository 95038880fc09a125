//! Per-channel Shewhart limits, `mean ± k·σ`. A point is anomalous when any
//! channel leaves its band.

use serde::{Deserialize, Serialize};

use super::DetectorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartParams {
    pub k_sigma: f64,
}

impl Default for ChartParams {
    fn default() -> Self {
        Self { k_sigma: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlChartModel {
    pub mean: Vec<f64>,
    /// Sample (n - 1) standard deviation.
    pub stddev: Vec<f64>,
    pub k_sigma: f64,
    pub ucl: Vec<f64>,
    pub lcl: Vec<f64>,
}

pub fn train_control_chart(rows: &[Vec<f64>], params: &ChartParams) -> Result<ControlChartModel, DetectorError> {
    super::check_rows(rows)?;
    let n = rows.len();
    if n < 2 {
        return Err(DetectorError::TooFewRows(n));
    }
    if !(params.k_sigma > 0.0) {
        return Err(DetectorError::BadHyperparameter(format!(
            "k_sigma must be positive, got {}",
            params.k_sigma
        )));
    }
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; d];
    for r in rows {
        ss.iter_mut()
            .zip(r.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2));
    }
    let stddev: Vec<f64> = ss.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
    let half = |s: f64| {
        if params.k_sigma.is_infinite() {
            f64::INFINITY
        } else {
            params.k_sigma * s
        }
    };
    let ucl = mean.iter().zip(&stddev).map(|(m, s)| m + half(*s)).collect();
    let lcl = mean.iter().zip(&stddev).map(|(m, s)| m - half(*s)).collect();
    Ok(ControlChartModel {
        mean,
        stddev,
        k_sigma: params.k_sigma,
        ucl,
        lcl,
    })
}

impl ControlChartModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_anomaly(&self, x: &[f64]) -> Result<bool, DetectorError> {
        super::check_dim(self.dim(), x)?;
        Ok(self.is_anomaly_unchecked(x))
    }

    pub(crate) fn is_anomaly_unchecked(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lcl.iter().zip(&self.ucl))
            .any(|(v, (lo, hi))| !(v >= lo && v <= hi))
    }

    /// Largest |z| over channels; zero-variance channels count as 0 when on
    /// the mean and infinite otherwise.
    pub(crate) fn max_z(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.stddev))
            .map(|(v, (m, s))| {
                if *s > 0.0 {
                    ((v - m) / s).abs()
                } else if v == m {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<Vec<f64>> {
        vec![vec![0.0, 10.0], vec![2.0, 10.0], vec![1.0, 13.0], vec![1.0, 7.0]]
    }

    #[test]
    fn limits() {
        let m = train_control_chart(&rows(), &ChartParams::default()).unwrap();
        assert_eq!(m.mean, vec![1.0, 10.0]);
        for i in 0..2 {
            assert!((m.ucl[i] - m.mean[i] - 3.0 * m.stddev[i]).abs() < 1e-12);
            assert!((m.mean[i] - m.lcl[i] - 3.0 * m.stddev[i]).abs() < 1e-12);
        }
        assert!(!m.is_anomaly(&[1.0, 10.0]).unwrap());
        let four = [1.0 + 4.0 * m.stddev[0], 10.0];
        assert!(m.is_anomaly(&four).unwrap());
        assert!(m.is_anomaly(&[1.0]).is_err());
    }

    #[test]
    fn infinite_k_never_flags() {
        let p = ChartParams { k_sigma: f64::INFINITY };
        let m = train_control_chart(&rows(), &p).unwrap();
        assert!(!m.is_anomaly(&[1e300, -1e300]).unwrap());
    }

    #[test]
    fn too_few_rows() {
        assert_eq!(
            train_control_chart(&[vec![1.0]], &ChartParams::default()),
            Err(DetectorError::TooFewRows(1))
        );
    }
}
