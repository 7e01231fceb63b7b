//! One-way ANOVA, pooled two-sample t-tests, Cohen's d, and η² for comparing
//! per-architecture metric samples.

mod special;

pub use special::{f_survival, ln_gamma, regularized_incomplete_beta, t_two_sided};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significance level used for the `significant` flags.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleGroup {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        SampleGroup {
            label: label.into(),
            values,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::Precondition(format!(
                "group `{}` needs at least 2 observations, has {}",
                self.label,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("group `{}` has non-finite values", self.label)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sum of squared deviations from the group mean.
    fn sum_sq(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum()
    }

    /// Sample variance (n − 1 denominator).
    pub fn variance(&self) -> f64 {
        self.sum_sq() / (self.values.len() - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ss_total: f64,
    pub ms_between: f64,
    pub ms_within: f64,
    pub f: f64,
    pub p: f64,
}

impl AnovaTable {
    /// Completes a table from its sums of squares and degrees of freedom.
    pub fn from_sums(ss_between: f64, ss_within: f64, df_between: usize, df_within: usize) -> Result<Self> {
        if df_between == 0 || df_within == 0 {
            return Err(Error::Precondition(
                "ANOVA needs at least 2 groups and more observations than groups".into(),
            ));
        }
        let ms_between = ss_between / df_between as f64;
        let ms_within = ss_within / df_within as f64;
        let f = if ms_within > 0.0 {
            ms_between / ms_within
        } else if ms_between > 0.0 {
            f64::INFINITY
        } else {
            // No spread at all: nothing distinguishes the groups.
            0.0
        };
        Ok(AnovaTable {
            df_between,
            df_within,
            ss_between,
            ss_within,
            ss_total: ss_between + ss_within,
            ms_between,
            ms_within,
            f,
            p: f_survival(f, df_between as f64, df_within as f64)?,
        })
    }
}

pub fn one_way_anova(groups: &[SampleGroup]) -> Result<AnovaTable> {
    if groups.len() < 2 {
        return Err(Error::Precondition(format!("ANOVA needs at least 2 groups, got {}", groups.len())));
    }
    for g in groups {
        g.validate()?;
    }
    let n: usize = groups.iter().map(|g| g.values.len()).sum();
    let grand = groups.iter().flat_map(|g| &g.values).sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .map(|g| {
            let d = g.mean() - grand;
            g.values.len() as f64 * d * d
        })
        .sum();
    let ss_within: f64 = groups.iter().map(SampleGroup::sum_sq).sum();
    AnovaTable::from_sums(ss_between, ss_within, groups.len() - 1, n - groups.len())
}

/// `SS_between / SS_total`.
pub fn eta_squared(table: &AnovaTable) -> Result<f64> {
    if !(table.ss_total > 0.0) {
        return Err(Error::Precondition("η² undefined when SS_total is 0".into()));
    }
    Ok(table.ss_between / table.ss_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub label_a: String,
    pub label_b: String,
    /// `mean(a) − mean(b)`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// `None` when the pooled standard deviation is zero.
    pub cohens_d: Option<f64>,
    pub significant: bool,
    /// Bonferroni-adjusted p over the family the test was run in.
    pub p_bonferroni: f64,
}

/// Pooled standard deviation with `n − 1` weights.
fn pooled_sd(a: &SampleGroup, b: &SampleGroup) -> f64 {
    let df = (a.values.len() + b.values.len() - 2) as f64;
    libm::sqrt((a.sum_sq() + b.sum_sq()) / df)
}

/// Summary statistics of one group: mean, sample standard deviation, size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Pooled-variance Student t from group summaries; returns `(t, df, p, d)`.
pub fn t_test_from_summary(a: Summary, b: Summary) -> Result<(f64, usize, f64, Option<f64>)> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::Precondition("t-test needs at least 2 observations per group".into()));
    }
    let df = a.n + b.n - 2;
    let pooled_var = ((a.n - 1) as f64 * a.sd * a.sd + (b.n - 1) as f64 * b.sd * b.sd) / df as f64;
    let sp = libm::sqrt(pooled_var);
    let diff = a.mean - b.mean;
    let se = sp * libm::sqrt(1.0 / a.n as f64 + 1.0 / b.n as f64);
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    let d = (sp > 0.0).then(|| diff / sp);
    Ok((t, df, t_two_sided(t, df as f64)?, d))
}

pub fn t_test_pair(a: &SampleGroup, b: &SampleGroup) -> Result<PairwiseTest> {
    a.validate()?;
    b.validate()?;
    let summary = |g: &SampleGroup| Summary {
        mean: g.mean(),
        sd: libm::sqrt(g.variance()),
        n: g.values.len(),
    };
    let (t, df, p, _) = t_test_from_summary(summary(a), summary(b))?;
    let mean_diff = a.mean() - b.mean();
    let sp = pooled_sd(a, b);
    Ok(PairwiseTest {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        mean_diff,
        t,
        df,
        p,
        cohens_d: (sp > 0.0).then(|| mean_diff / sp),
        significant: p < ALPHA,
        p_bonferroni: p,
    })
}

/// Standardized mean difference with the pooled standard deviation.
pub fn cohens_d(a: &SampleGroup, b: &SampleGroup) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let sp = pooled_sd(a, b);
    if !(sp > 0.0) {
        return Err(Error::Precondition(format!(
            "Cohen's d undefined: `{}` and `{}` have zero pooled spread",
            a.label, b.label
        )));
    }
    Ok((a.mean() - b.mean()) / sp)
}

/// All `k(k−1)/2` pairwise tests in input order, with Bonferroni-adjusted
/// p-values in `p_bonferroni` (the raw `p` stays unadjusted).
pub fn pairwise_tests(groups: &[SampleGroup]) -> Result<Vec<PairwiseTest>> {
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            out.push(t_test_pair(&groups[i], &groups[j])?);
        }
    }
    let m = out.len() as f64;
    for test in &mut out {
        test.p_bonferroni = (test.p * m).min(1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn g(label: &str, v: &[f64]) -> SampleGroup {
        SampleGroup::new(label, v.to_vec())
    }

    #[test]
    fn constant_groups_give_zero_f() {
        let t = one_way_anova(&[g("a", &[2.0, 2.0]), g("b", &[2.0, 2.0, 2.0])]).unwrap();
        assert_eq!((t.ss_between, t.f, t.p), (0.0, 0.0, 1.0));
        assert!(eta_squared(&t).is_err());
    }

    #[test]
    fn three_shifted_groups() {
        let t = one_way_anova(&[g("a", &[1.0, 2.0, 3.0]), g("b", &[2.0, 3.0, 4.0]), g("c", &[3.0, 4.0, 5.0])]).unwrap();
        // Hand computation: grand mean 3, SSB = 3·(1+0+1) = 6, SSW = 3·2 = 6.
        assert!((t.ss_between - 6.0).abs() < 1e-12);
        assert!((t.ss_within - 6.0).abs() < 1e-12);
        assert_eq!((t.df_between, t.df_within), (2, 6));
        assert!((t.f - 3.0).abs() < 1e-12);
        assert!((t.p - 0.125).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(one_way_anova(&[g("a", &[1.0, 2.0])]).is_err());
        assert!(one_way_anova(&[g("a", &[1.0]), g("b", &[1.0, 2.0])]).is_err());
        assert!(AnovaTable::from_sums(1.0, 1.0, 2, 0).is_err());
        assert!(t_test_pair(&g("a", &[1.0, f64::NAN]), &g("b", &[1.0, 2.0])).is_err());
    }

    #[test]
    fn identical_samples_give_null_test() {
        let a = g("a", &[0.1, 0.4, 0.3]);
        let t = t_test_pair(&a, &a).unwrap();
        assert_eq!((t.t, t.p, t.cohens_d), (0.0, 1.0, Some(0.0)));
        let c = g("c", &[1.0, 1.0]);
        let z = t_test_pair(&c, &c).unwrap();
        assert_eq!((z.t, z.p, z.cohens_d), (0.0, 1.0, None));
        assert!(cohens_d(&c, &c).is_err());
    }

    #[test]
    fn signs_agree_and_two_group_f_is_t_squared() {
        let a = g("a", &[0.5, 0.7, 0.9, 0.6]);
        let b = g("b", &[0.2, 0.4, 0.3, 0.35, 0.1]);
        let t = t_test_pair(&b, &a).unwrap();
        assert!(t.mean_diff < 0.0 && t.t < 0.0 && t.cohens_d.unwrap() < 0.0);
        let f = one_way_anova(&[a, b]).unwrap();
        assert!((f.f / (t.t * t.t) - 1.0).abs() < 1e-12);
        assert!((f.p - t.p).abs() < 1e-10);
    }

    #[test]
    fn bonferroni_column_scales_by_family_size() {
        let groups = vec![g("a", &[1.0, 2.0, 3.1]), g("b", &[1.5, 2.5, 3.0]), g("c", &[4.0, 5.0, 6.5])];
        let tests = pairwise_tests(&groups).unwrap();
        assert_eq!(tests.len(), 3);
        for t in &tests {
            assert!((t.p_bonferroni - (3.0 * t.p).min(1.0)).abs() < 1e-15);
            assert!(t.p_bonferroni >= t.p);
        }
    }
}
