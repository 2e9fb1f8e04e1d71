//! Summary statistics and the paired t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); zero below two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    /// `mean(d) / (sd(d) / sqrt(N))` for `d = a - b`. Infinite when every
    /// difference is the same nonzero value.
    pub t: f64,
    pub mean_diff: f64,
    pub dof: usize,
    /// Two-sided test at the requested level.
    pub significant: bool,
    /// Zero spread in the differences.
    pub degenerate: bool,
}

impl TTest {
    /// Significant with `a` above `b`.
    pub fn a_greater(&self) -> bool {
        self.significant && self.mean_diff > 0.0
    }
}

/// Two-sided paired t-test of `a` against `b`.
///
/// All-zero differences give `t = 0`, not significant. Constant nonzero
/// differences give an infinite statistic and count as significant.
pub fn paired_ttest(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "paired t-test needs two equal samples of size >= 2 (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean_diff = mean(&d);
    let sd = sample_std(&d);
    let dof = n - 1;
    if sd == 0.0 {
        let t = if mean_diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(mean_diff)
        };
        return Ok(TTest {
            t,
            mean_diff,
            dof,
            significant: mean_diff != 0.0,
            degenerate: true,
        });
    }
    let t = mean_diff / (sd / (n as f64).sqrt());
    let critical = StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(1.0 - alpha / 2.0);
    Ok(TTest {
        t,
        mean_diff,
        dof,
        significant: t.abs() > critical,
        degenerate: false,
    })
}
