//! Welch's unequal-variance t-test with a two-sided confidence interval.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub const DEFAULT_CONFIDENCE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    A,
    B,
    Indistinguishable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub better: Better,
    /// mean(a) - mean(b)
    pub mean_diff: f64,
    pub interval: (f64, f64),
    pub dof: f64,
    /// `None` when neither sample varies.
    pub t: Option<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample {which} has {n} observations, need at least 2")]
    TooSmall { which: char, n: usize },
    #[error("confidence {0} is outside (0, 1)")]
    Confidence(f64),
    #[error("sample {0} contains a non-finite value")]
    NonFinite(char),
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (m, ss / (n - 1.0))
}

/// Two-sided Welch test on mean(a) - mean(b). The verdict is
/// `Indistinguishable` when the interval contains zero, else the side with
/// the larger mean.
pub fn welch_t_test(a: &[f64], b: &[f64], confidence: f64) -> Result<WelchResult, StatsError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::Confidence(confidence));
    }
    for (which, x) in [('a', a), ('b', b)] {
        if x.len() < 2 {
            return Err(StatsError::TooSmall { which, n: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(which));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    let base = WelchResult {
        better: Better::Indistinguishable,
        mean_diff: diff,
        interval: (diff, diff),
        dof: na + nb - 2.0,
        t: None,
        n_a: a.len(),
        n_b: b.len(),
        confidence,
        note: None,
    };

    if se2 == 0.0 {
        // both samples constant: no spread to test against
        return Ok(if diff == 0.0 {
            WelchResult { note: Some("both samples constant and equal".into()), ..base }
        } else {
            WelchResult {
                better: if diff > 0.0 { Better::A } else { Better::B },
                note: Some("both samples constant; decided by the means".into()),
                ..base
            }
        });
    }

    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let se = se2.sqrt();
    let q = StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + confidence / 2.0);
    let interval = (diff - q * se, diff + q * se);
    let better = if interval.0 > 0.0 {
        Better::A
    } else if interval.1 < 0.0 {
        Better::B
    } else {
        Better::Indistinguishable
    };
    Ok(WelchResult { better, interval, dof, t: Some(diff / se), ..base })
}
