use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine similarity mapped from `[-1, 1]` to `[0, 100]`.
pub fn topic_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "topic_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("similarity of a zero vector"));
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(50.0 * (1.0 + cos.clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub successful_mean: f64,
    pub failed_mean: f64,
    pub successful_count: usize,
    pub failed_count: usize,
    /// Instances whose newcomer has no history are left out.
    pub skipped: usize,
}

/// Mean user-context similarity per outcome. `pairs` yields
/// `(e_u, e_c, label)` with `e_u = None` for newcomers without history.
pub fn similarity_report<'a>(
    pairs: impl IntoIterator<Item = (Option<&'a [f64]>, &'a [f64], bool)>,
) -> Result<SimilarityReport> {
    let (mut s_sum, mut s_n, mut f_sum, mut f_n, mut skipped) = (0.0, 0, 0.0, 0, 0);
    for (e_u, e_c, label) in pairs {
        let Some(e_u) = e_u else {
            skipped += 1;
            continue;
        };
        let sim = topic_similarity(e_u, e_c)?;
        if label {
            s_sum += sim;
            s_n += 1;
        } else {
            f_sum += sim;
            f_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(SimilarityReport {
        successful_mean: mean(s_sum, s_n),
        failed_mean: mean(f_sum, f_n),
        successful_count: s_n,
        failed_count: f_n,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscourseDistribution {
    pub successful: Vec<f64>,
    pub failed: Vec<f64>,
}

/// Frequency of each behavior among the `top` most probable behaviors of
/// query turns, normalized per outcome class.
pub fn discourse_distribution<'a>(
    behaviors: usize,
    query_top: impl IntoIterator<Item = (&'a [usize], bool)>,
) -> Result<DiscourseDistribution> {
    if behaviors == 0 {
        return Err(Error::invalid("no discourse behaviors"));
    }
    let mut succ = vec![0.0; behaviors];
    let mut fail = vec![0.0; behaviors];
    for (top, label) in query_top {
        let target = if label { &mut succ } else { &mut fail };
        for &b in top {
            if b >= behaviors {
                return Err(Error::invalid(format!("behavior {b} out of range")));
            }
            target[b] += 1.0;
        }
    }
    let normalize = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
        }
    };
    normalize(&mut succ);
    normalize(&mut fail);
    Ok(DiscourseDistribution {
        successful: succ,
        failed: fail,
    })
}
