//! Evaluation metrics: Dice score over supports, 2-means approximate support,
//! per-class average F1, argmax labeling and prediction entropy.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Vertices whose magnitude exceeds a threshold.
#[derive(Debug, Clone)]
pub struct SupportSet<F> {
    pub threshold: F,
    pub members: Vec<usize>,
}

/// `2 |supp(x) ∩ supp(xh)| / (|supp(x)| + |supp(xh)|)` with supports taken as
/// the exactly nonzero coordinates. Two empty supports agree perfectly and
/// score 1 (documented convention).
pub fn dice_score<F: Real>(x: &[F], xhat: &[F]) -> F {
    debug_assert_eq!(x.len(), xhat.len());
    let mut nx = 0usize;
    let mut nh = 0usize;
    let mut both = 0usize;
    for (&a, &b) in x.iter().zip(xhat) {
        let sa = a != F::zero();
        let sb = b != F::zero();
        nx += sa as usize;
        nh += sb as usize;
        both += (sa && sb) as usize;
    }
    if nx + nh == 0 {
        return F::one();
    }
    F::cast(2.0 * both as f64) / F::cast((nx + nh) as f64)
}

/// Exact 1-D 2-means on the magnitudes: the optimum is a contiguous split of
/// the sorted values, found here by prefix-sum enumeration of all cuts
/// (ties toward the smaller low cluster). The support threshold is the
/// midpoint of the two cluster means. All-equal inputs degenerate to
/// threshold 0 (support = the nonzeros).
pub fn approx_support_2means<F: Real>(x: &[F]) -> Result<SupportSet<F>> {
    if x.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    let mut mags: Vec<F> = x.iter().map(|&v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = mags.len();
    let threshold = if mags[0] == mags[n - 1] {
        F::zero()
    } else {
        let mut sum = vec![F::zero(); n + 1];
        let mut sumsq = vec![F::zero(); n + 1];
        for (i, &m) in mags.iter().enumerate() {
            sum[i + 1] = sum[i] + m;
            sumsq[i + 1] = sumsq[i] + m * m;
        }
        let sse = |a: usize, b: usize| -> F {
            // Within-cluster sum of squares over the half-open range [a, b).
            let len = F::cast((b - a) as f64);
            let s = sum[b] - sum[a];
            (sumsq[b] - sumsq[a]) - s * s / len
        };
        let mut best = (F::infinity(), F::zero());
        for cut in 1..n {
            let cost = sse(0, cut) + sse(cut, n);
            if cost < best.0 {
                let low = (sum[cut] - sum[0]) / F::cast(cut as f64);
                let high = (sum[n] - sum[cut]) / F::cast((n - cut) as f64);
                best = (cost, (low + high) / F::cast(2.0));
            }
        }
        best.1
    };
    let members = x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v.abs() > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(SupportSet { threshold, members })
}

/// Keeps only the coordinates inside the support set (used for
/// approximate-support Dice scores).
pub fn mask_to_support<F: Real>(x: &[F], support: &SupportSet<F>) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for &i in &support.members {
        out[i] = x[i];
    }
    out
}

/// Average of the per-class F1 scores over `num_classes` classes, evaluated
/// on the given vertex subset. A class absent from both the prediction and
/// the ground truth on the subset has a zero denominator and contributes 0.
pub fn avg_f1(labels: &[usize], gt: &[usize], subset: &[usize], num_classes: usize) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::invalid("empty evaluation subset"));
    }
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be >= 1"));
    }
    for &v in subset {
        if v >= labels.len() || v >= gt.len() {
            return Err(Error::invalid(format!("subset vertex {v} out of range")));
        }
    }
    let mut total = 0.0;
    for k in 0..num_classes {
        let mut tp = 0usize;
        let mut pred = 0usize;
        let mut truth = 0usize;
        for &v in subset {
            let p = labels[v] == k;
            let t = gt[v] == k;
            tp += (p && t) as usize;
            pred += p as usize;
            truth += t as usize;
        }
        if pred + truth > 0 {
            total += 2.0 * tp as f64 / (pred + truth) as f64;
        }
    }
    Ok(total / num_classes as f64)
}

/// Per-vertex argmax over each row of `channels` probabilities; ties break
/// toward the smallest label index.
pub fn argmax_labels<F: Real>(p: &[F], channels: usize) -> Vec<usize> {
    assert!(channels >= 1 && p.len() % channels == 0);
    p.chunks(channels)
        .map(|row| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Per-vertex entropy `-sum_k q_k ln q_k` with the `0 ln 0 = 0` convention.
pub fn entropy_uncertainty<F: Real>(q: &[F], channels: usize) -> Vec<F> {
    assert!(channels >= 1 && q.len() % channels == 0);
    q.chunks(channels)
        .map(|row| {
            row.iter()
                .map(|&v| if v > F::zero() { -v * v.ln() } else { F::zero() })
                .sum()
        })
        .collect()
}

/// Best contiguous 2-means split by naive enumeration, recomputing each
/// cluster mean and sum of squares from scratch. Independent oracle for
/// [`approx_support_2means`] (which uses prefix sums).
pub fn best_split_threshold<F: Real>(x: &[F]) -> F {
    let mut mags: Vec<F> = x.iter().map(|&v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = mags.len();
    if n < 2 || mags[0] == mags[n - 1] {
        return F::zero();
    }
    let sse = |vals: &[F]| -> F {
        if vals.is_empty() {
            return F::zero();
        }
        let mean = vals.iter().copied().sum::<F>() / F::cast(vals.len() as f64);
        vals.iter().map(|&v| (v - mean) * (v - mean)).sum()
    };
    let mut best = (F::infinity(), F::zero());
    for cut in 1..n {
        let cost = sse(&mags[..cut]) + sse(&mags[cut..]);
        if cost < best.0 {
            let m0 = mags[..cut].iter().copied().sum::<F>() / F::cast(cut as f64);
            let m1 = mags[cut..].iter().copied().sum::<F>() / F::cast((n - cut) as f64);
            best = (cost, (m0 + m1) / F::cast(2.0));
        }
    }
    best.1
}
