//! Per-channel one-way ANOVA with partial eta squared, Cohen effect classes
//! and Bonferroni-corrected pairwise comparisons.
//!
//! The analysis is univariate: one F test per sensor channel, not a joint
//! multivariate test.

pub mod special;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{BoardRun, ChannelId};
use special::{beta_reg, beta_reg_complement};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 groups with at least 2 samples each: {0}")]
    InvalidGroups(String),
    #[error("all samples are identical; F is undefined")]
    DegenerateGroups,
    #[error("effect and error sums of squares are both zero")]
    BothZero,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSamples {
    pub groups: Vec<Group>,
}

impl GroupedSamples {
    pub fn new(groups: Vec<Group>) -> Result<Self, StatsError> {
        if groups.len() < 2 {
            return Err(StatsError::InvalidGroups(format!("{} group(s)", groups.len())));
        }
        if let Some(g) = groups.iter().find(|g| g.samples.len() < 2) {
            return Err(StatsError::InvalidGroups(format!(
                "group '{}' has {} sample(s)",
                g.id,
                g.samples.len()
            )));
        }
        if groups.iter().flat_map(|g| &g.samples).any(|v| !v.is_finite()) {
            return Err(StatsError::InvalidGroups("non-finite sample".into()));
        }
        Ok(Self { groups })
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, samples)| Group { id: id.into(), samples })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// `+inf` when the within-group sum of squares is zero.
    pub f: f64,
    pub df_effect: usize,
    pub df_error: usize,
    pub ss_effect: f64,
    pub ss_error: f64,
}

impl AnovaTable {
    pub fn infinite_f(&self) -> bool {
        self.f.is_infinite()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum()
}

/// Classical between/within decomposition for unbalanced groups.
pub fn one_way_anova(g: &GroupedSamples) -> Result<AnovaTable, StatsError> {
    let n: usize = g.groups.iter().map(|x| x.samples.len()).sum();
    let k = g.groups.len();
    let grand = g.groups.iter().flat_map(|x| &x.samples).sum::<f64>() / n as f64;
    let mut ss_effect = 0.0;
    let mut ss_error = 0.0;
    for grp in &g.groups {
        let m = mean(&grp.samples);
        ss_effect += grp.samples.len() as f64 * (m - grand).powi(2);
        ss_error += sum_sq_dev(&grp.samples, m);
    }
    let df_effect = k - 1;
    let df_error = n - k;
    let f = if ss_error > 0.0 {
        (ss_effect / df_effect as f64) / (ss_error / df_error as f64)
    } else if ss_effect > 0.0 {
        f64::INFINITY
    } else {
        return Err(StatsError::DegenerateGroups);
    };
    Ok(AnovaTable {
        f,
        df_effect,
        df_error,
        ss_effect,
        ss_error,
    })
}

pub fn partial_eta_squared(ss_effect: f64, ss_error: f64) -> Result<f64, StatsError> {
    if !(ss_effect >= 0.0 && ss_error >= 0.0) {
        return Err(StatsError::InvalidArgument(
            "sums of squares must be non-negative".into(),
        ));
    }
    if ss_effect == 0.0 && ss_error == 0.0 {
        return Err(StatsError::BothZero);
    }
    Ok(ss_effect / (ss_effect + ss_error))
}

/// `P(F > f)` for an F(d1, d2) variate.
pub fn f_cdf_complement(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let x = d2 / (d2 + d1 * f);
    beta_reg(d2 / 2.0, d1 / 2.0, x)
}

/// `P(F <= f)`.
pub fn f_cdf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    if f.is_infinite() {
        return 1.0;
    }
    let x = d2 / (d2 + d1 * f);
    beta_reg_complement(d2 / 2.0, d1 / 2.0, x)
}

/// Two-sided Student-t tail `P(|T| > |t|)` with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectClass {
    Small,
    Medium,
    Large,
    VeryLarge,
}

impl EffectClass {
    pub fn name(self) -> &'static str {
        match self {
            EffectClass::Small => "small",
            EffectClass::Medium => "medium",
            EffectClass::Large => "large",
            EffectClass::VeryLarge => "very large",
        }
    }
}

/// Cohen bands: ≤ .01 small, ≤ .06 medium, ≤ .14 large, above that very large.
pub fn classify_effect(eta_sq: f64) -> EffectClass {
    if eta_sq <= 0.01 {
        EffectClass::Small
    } else if eta_sq <= 0.06 {
        EffectClass::Medium
    } else if eta_sq <= 0.14 {
        EffectClass::Large
    } else {
        EffectClass::VeryLarge
    }
}

/// Two-sample pooled-variance t statistic and its degrees of freedom.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, usize) {
    let (ma, mb) = (mean(a), mean(b));
    let df = a.len() + b.len() - 2;
    let sp2 = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / df as f64;
    let se = (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    let diff = ma - mb;
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    (t, df)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocMatrix {
    pub group_ids: Vec<String>,
    pub alpha: f64,
    pub comparisons: usize,
    pub corrected_alpha: f64,
    /// Symmetric; `None` on the diagonal.
    pub p_values: Vec<Vec<Option<f64>>>,
    pub significant: Vec<Vec<Option<bool>>>,
}

impl PosthocMatrix {
    pub fn significant_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.group_ids.len();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.significant[i][j] == Some(true))
            .collect()
    }

    pub fn non_significant_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.group_ids.len();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.significant[i][j] == Some(false))
            .collect()
    }
}

/// All pairwise pooled-t comparisons, each tested at `alpha / m`.
pub fn bonferroni_posthoc(g: &GroupedSamples, alpha: f64) -> Result<PosthocMatrix, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let k = g.groups.len();
    let m = k * (k - 1) / 2;
    let corrected = alpha / m as f64;
    let mut p_values = vec![vec![None; k]; k];
    let mut significant = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (t, df) = pooled_t(&g.groups[i].samples, &g.groups[j].samples);
            let p = t_two_sided(t, df as f64);
            p_values[i][j] = Some(p);
            p_values[j][i] = Some(p);
            significant[i][j] = Some(p < corrected);
            significant[j][i] = Some(p < corrected);
        }
    }
    Ok(PosthocMatrix {
        group_ids: g.groups.iter().map(|x| x.id.clone()).collect(),
        alpha,
        comparisons: m,
        corrected_alpha: corrected,
        p_values,
        significant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub channel: ChannelId,
    pub df_effect: usize,
    pub df_error: usize,
    /// `+inf` is serialized as `null` in JSON; see `infinite_f`.
    pub f_value: f64,
    pub infinite_f: bool,
    pub eta_sq: f64,
    pub p_value: f64,
    pub effect_class: EffectClass,
    pub posthoc: PosthocMatrix,
}

pub fn analyze(channel: ChannelId, g: &GroupedSamples, alpha: f64) -> Result<AnovaReport, StatsError> {
    let t = one_way_anova(g)?;
    let eta_sq = partial_eta_squared(t.ss_effect, t.ss_error)?;
    Ok(AnovaReport {
        channel,
        df_effect: t.df_effect,
        df_error: t.df_error,
        f_value: t.f,
        infinite_f: t.infinite_f(),
        eta_sq,
        p_value: f_cdf_complement(t.f, t.df_effect as f64, t.df_error as f64),
        effect_class: classify_effect(eta_sq),
        posthoc: bonferroni_posthoc(g, alpha)?,
    })
}

/// One report per channel. `groups` pairs a label (radiation level or
/// functioning flag) with the runs pooled under it; records with an invalid
/// temperature are dropped first.
pub fn anova_by_channel(groups: &[(String, Vec<&BoardRun>)], alpha: f64) -> Result<Vec<AnovaReport>, StatsError> {
    let trimmed: Vec<(String, Vec<BoardRun>)> = groups
        .iter()
        .map(|(id, runs)| (id.clone(), runs.iter().map(|r| r.trim_invalid()).collect()))
        .collect();
    ChannelId::ALL
        .iter()
        .map(|&ch| {
            let g = GroupedSamples::from_pairs(trimmed.iter().map(|(id, runs)| {
                let samples = runs
                    .iter()
                    .flat_map(|r| r.series.records().iter().map(move |rec| rec.get(ch)))
                    .collect();
                (id.clone(), samples)
            }))?;
            analyze(ch, &g, alpha)
        })
        .collect()
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Plain-text table: channel, F(df1, df2) with significance stars, η², class.
pub fn format_table(reports: &[AnovaReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>28} {:>8} {:>11}",
        "Channel", "F(df1, df2)", "eta^2", "Effect"
    );
    for r in reports {
        let f = if r.infinite_f {
            "inf".to_string()
        } else {
            format!("{:.3}", r.f_value)
        };
        let cell = format!("F({}, {})={}{}", r.df_effect, r.df_error, f, stars(r.p_value));
        let _ = writeln!(
            out,
            "{:<8} {:>28} {:>8.3} {:>11}",
            r.channel.name(),
            cell,
            r.eta_sq,
            r.effect_class.name()
        );
    }
    let _ = writeln!(
        out,
        "* p < .05, ** p < .01, *** p < .001; univariate one-way ANOVA per channel"
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gs(groups: &[&[f64]]) -> GroupedSamples {
        GroupedSamples::from_pairs(groups.iter().enumerate().map(|(i, g)| (format!("g{i}"), g.to_vec()))).unwrap()
    }

    #[test]
    fn identical_groups_f_zero() {
        let t = one_way_anova(&gs(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(t.f, 0.0);
        assert_eq!((t.df_effect, t.df_error), (1, 4));
    }

    #[test]
    fn zero_within_variance_is_infinite() {
        let t = one_way_anova(&gs(&[&[0.0, 0.0], &[1.0, 1.0]])).unwrap();
        assert!(t.infinite_f());
        assert_eq!(
            one_way_anova(&gs(&[&[2.0, 2.0], &[2.0, 2.0]])),
            Err(StatsError::DegenerateGroups)
        );
    }

    #[test]
    fn group_validation() {
        assert!(GroupedSamples::from_pairs([("a", vec![1.0, 2.0])]).is_err());
        assert!(GroupedSamples::from_pairs([("a", vec![1.0, 2.0]), ("b", vec![1.0])]).is_err());
    }

    #[test]
    fn eta_cases() {
        assert_eq!(partial_eta_squared(3.0, 0.0).unwrap(), 1.0);
        assert_eq!(partial_eta_squared(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(partial_eta_squared(2.0, 2.0).unwrap(), 0.5);
        assert_eq!(partial_eta_squared(0.0, 0.0), Err(StatsError::BothZero));
    }

    #[test]
    fn effect_classes() {
        assert_eq!(classify_effect(0.005), EffectClass::Small);
        assert_eq!(classify_effect(0.01), EffectClass::Small);
        assert_eq!(classify_effect(0.03), EffectClass::Medium);
        assert_eq!(classify_effect(0.10), EffectClass::Large);
        assert_eq!(classify_effect(0.14), EffectClass::Large);
        assert_eq!(classify_effect(0.214), EffectClass::VeryLarge);
    }

    #[test]
    fn f_tail_edges() {
        assert_eq!(f_cdf_complement(0.0, 3.0, 10.0), 1.0);
        assert_eq!(f_cdf_complement(f64::INFINITY, 3.0, 10.0), 0.0);
        // F(2, 2) tail is 1/(1+f)
        for f in [0.5, 1.0, 3.0, 10.0] {
            assert!((f_cdf_complement(f, 2.0, 2.0) - 1.0 / (1.0 + f)).abs() < 1e-14);
        }
    }

    #[test]
    fn posthoc_counts() {
        let seven: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![f64::from(i), f64::from(i) + 0.5, f64::from(i) + 1.0])
            .collect();
        let refs: Vec<&[f64]> = seven.iter().map(Vec::as_slice).collect();
        let m = bonferroni_posthoc(&gs(&refs), 0.05).unwrap();
        assert_eq!(m.comparisons, 21);
        assert!((m.corrected_alpha - 0.05 / 21.0).abs() < 1e-18);
        for i in 0..7 {
            assert_eq!(m.p_values[i][i], None);
            for j in 0..7 {
                assert_eq!(m.p_values[i][j], m.p_values[j][i]);
            }
        }
        let same = bonferroni_posthoc(&gs(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]), 0.05).unwrap();
        assert!(same.significant_pairs().is_empty());
    }

    #[test]
    fn table_format_mentions_every_channel() {
        let g = gs(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.5]]);
        let reports: Vec<AnovaReport> = ChannelId::ALL.iter().map(|&c| analyze(c, &g, 0.05).unwrap()).collect();
        let table = format_table(&reports);
        for c in ChannelId::ALL {
            assert!(table.contains(c.name()));
        }
        assert!(table.contains("F(1, 4)="));
    }
}
