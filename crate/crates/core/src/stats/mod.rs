//! Width statistics: mean with a Student-t confidence interval, Bartlett's
//! test for equal variances, one-way ANOVA, and two-sample t-tests.
//!
//! Comparisons follow the Bartlett-then-t workflow, so the default t-test
//! is the pooled-variance one; Welch is available via [`TTestKind`].

pub mod special;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use special::{chi2_sf, f_sf, t_cdf, t_quantile, t_two_sided};

/// Significance level used when a report says "significant". The published
/// comparisons state outcomes only, so this is a convention, not a measured
/// value.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub sample_variance: f64,
    pub confidence: f64,
    /// `[lo, hi]`
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreesOfFreedom {
    Single(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub degrees_of_freedom: DegreesOfFreedom,
    pub p_value: f64,
}

impl TestResult {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Pooled,
    Welch,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations from the mean (two-pass).
fn sum_sq_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn variance(xs: &[f64]) -> f64 {
    sum_sq_dev(xs) / (xs.len() - 1) as f64
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("samples must be finite"))
    }
}

pub fn group_stats(samples: &[f64], confidence: f64) -> Result<GroupStats> {
    if samples.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 samples for a confidence interval, got {}",
            samples.len()
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!("confidence {confidence} outside (0, 1)")));
    }
    check_finite(samples)?;
    let n = samples.len();
    let m = mean(samples);
    let var = variance(samples);
    let t = t_quantile(1.0 - (1.0 - confidence) / 2.0, (n - 1) as f64);
    let half = t * (var / n as f64).sqrt();
    Ok(GroupStats {
        n,
        mean: m,
        sample_variance: var,
        confidence,
        ci: [m - half, m + half],
    })
}

fn check_groups<S: AsRef<[f64]>>(groups: &[S], min_each: usize) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.len() < min_each {
            return Err(Error::domain(format!(
                "group {i} has {} sample(s), need at least {min_each}",
                g.len()
            )));
        }
        check_finite(g)?;
    }
    Ok(())
}

/// Bartlett's test for homogeneity of variances.
pub fn bartlett<S: AsRef<[f64]>>(groups: &[S]) -> Result<TestResult> {
    check_groups(groups, 2)?;
    let k = groups.len() as f64;
    let mut n_total = 0.0;
    let mut pooled_num = 0.0;
    let mut sum_log = 0.0;
    let mut sum_recip = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        let dof = (g.len() - 1) as f64;
        let var = variance(g);
        if var == 0.0 {
            return Err(Error::domain(format!(
                "group {i} has zero variance; Bartlett statistic undefined"
            )));
        }
        n_total += g.len() as f64;
        pooled_num += dof * var;
        sum_log += dof * var.ln();
        sum_recip += 1.0 / dof;
    }
    let dof_within = n_total - k;
    let pooled = pooled_num / dof_within;
    let numerator = dof_within * pooled.ln() - sum_log;
    let correction = 1.0 + (sum_recip - 1.0 / dof_within) / (3.0 * (k - 1.0));
    // Equal variances make the numerator a rounding-level difference.
    let statistic = (numerator / correction).max(0.0);
    Ok(TestResult {
        statistic,
        degrees_of_freedom: DegreesOfFreedom::Single(k - 1.0),
        p_value: chi2_sf(statistic, k - 1.0),
    })
}

/// One-way analysis of variance.
pub fn anova_oneway<S: AsRef<[f64]>>(groups: &[S]) -> Result<TestResult> {
    check_groups(groups, 1)?;
    let k = groups.len();
    let n_total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    if n_total <= k {
        return Err(Error::domain(format!(
            "{n_total} samples in {k} groups leaves no within-group degrees of freedom"
        )));
    }
    let grand = groups.iter().flat_map(|g| g.as_ref()).sum::<f64>() / n_total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += sum_sq_dev(g);
    }
    if ss_within == 0.0 {
        return Err(Error::domain(
            "zero within-group variance in every group; F undefined",
        ));
    }
    let d1 = (k - 1) as f64;
    let d2 = (n_total - k) as f64;
    let f = (ss_between / d1) / (ss_within / d2);
    Ok(TestResult {
        statistic: f,
        degrees_of_freedom: DegreesOfFreedom::Pair(d1, d2),
        p_value: f_sf(f, d1, d2),
    })
}

/// Two-sample, two-sided t-test. Pooled variance by default.
///
/// When both groups have zero variance the statistic is 0 with p = 1 for
/// equal means and ±∞ with p = 0 otherwise.
pub fn ttest_two_sample(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TestResult> {
    check_groups(&[a, b], 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let diff = ma - mb;

    let (se, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = if se2 == 0.0 {
                na + nb - 2.0
            } else {
                se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            };
            (se2.sqrt(), df)
        }
    };

    if se == 0.0 {
        let (statistic, p_value) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TestResult {
            statistic,
            degrees_of_freedom: DegreesOfFreedom::Single(df),
            p_value,
        });
    }
    let t = diff / se;
    Ok(TestResult {
        statistic: t,
        degrees_of_freedom: DegreesOfFreedom::Single(df),
        p_value: t_two_sided(t, df),
    })
}
