//! Closed-form proximity operators in diagonal metrics.
//!
//! The prox of `g` at `x` under the metric weights `m` minimizes
//! `sum_j m_j (x_j - p_j)^2 / 2 + g(p)`; every metric entry must be strictly
//! positive. These are the resolvents the splitting solvers invoke, so each
//! one is validated against a grid brute-force oracle in the test suites.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shrinkage toward zero: `p_j = sign(x_j) * max(|x_j| - tau_j / m_j, 0)`,
/// the prox of `sum tau_j |p_j|`.
pub fn soft_threshold<F: Real>(x: &[F], tau: &[F], metric: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    soft_threshold_into(x, tau, metric, &mut out);
    out
}

pub fn soft_threshold_into<F: Real>(x: &[F], tau: &[F], metric: &[F], out: &mut [F]) {
    debug_assert!(x.len() == tau.len() && x.len() == metric.len() && x.len() == out.len());
    for j in 0..x.len() {
        out[j] = soft_threshold_scalar(x[j], tau[j] / metric[j]);
    }
}

#[inline]
pub fn soft_threshold_scalar<F: Real>(x: F, threshold: F) -> F {
    x.signum() * (x.abs() - threshold).max(F::zero())
}

/// Prox of `sum tau_j |p_j|` plus the nonnegativity indicator:
/// `p_j = max(x_j - tau_j / m_j, 0)`.
pub fn prox_l1_positive<F: Real>(x: &[F], tau: &[F], metric: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    prox_l1_positive_into(x, tau, metric, &mut out);
    out
}

pub fn prox_l1_positive_into<F: Real>(x: &[F], tau: &[F], metric: &[F], out: &mut [F]) {
    debug_assert!(x.len() == tau.len() && x.len() == metric.len() && x.len() == out.len());
    for j in 0..x.len() {
        out[j] = (x[j] - tau[j] / metric[j]).max(F::zero());
    }
}

/// Projection onto the probability simplex in the diagonal metric `m`:
/// minimizes `sum_k m_k (p_k - q_k)^2 / 2` over `q >= 0`, `sum q = 1`.
///
/// Water-filling form `q_k = max(p_k - mu / m_k, 0)`; the pivot `mu` is found
/// exactly by scanning breakpoints `p_k m_k` in decreasing order, an
/// `O(K log K)` generalization of the sort-based euclidean projection.
pub fn project_simplex<F: Real>(p: &[F], metric: &[F]) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); p.len()];
    project_simplex_into(p, metric, &mut out)?;
    Ok(out)
}

pub fn project_simplex_into<F: Real>(p: &[F], metric: &[F], out: &mut [F]) -> Result<()> {
    let k = p.len();
    if k == 0 {
        return Err(Error::invalid("cannot project an empty vector onto a simplex"));
    }
    debug_assert!(metric.len() == k && out.len() == k);
    // Breakpoints of mu -> sum_k max(p_k - mu/m_k, 0), decreasing.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ba = p[a] * metric[a];
        let bb = p[b] * metric[b];
        bb.partial_cmp(&ba).unwrap().then(a.cmp(&b))
    });
    let mut sum_p = F::zero();
    let mut sum_inv_m = F::zero();
    let mut mu = F::zero();
    for (rank, &idx) in order.iter().enumerate() {
        sum_p += p[idx];
        sum_inv_m += metric[idx].recip();
        let candidate = (sum_p - F::one()) / sum_inv_m;
        let lower = if rank + 1 < k {
            let nxt = order[rank + 1];
            p[nxt] * metric[nxt]
        } else {
            F::neg_infinity()
        };
        // The active set {0..=rank} is consistent iff the candidate pivot sits
        // above the next breakpoint.
        if candidate > lower || rank + 1 == k {
            mu = candidate;
            break;
        }
    }
    for j in 0..k {
        out[j] = (p[j] - mu / metric[j]).max(F::zero());
    }
    Ok(())
}

/// Exact minimizer of
/// `m_a (a - p)^2 / 2 + m_b (b - q)^2 / 2 + lambda |p - q|`.
///
/// If `lambda >= |a - b| m_a m_b / (m_a + m_b)` the pair collapses to its
/// metric-weighted mean, otherwise each endpoint moves toward the other by
/// `lambda / m` on its side.
#[inline]
pub fn prox_pair_abs_diff<F: Real>(a: F, b: F, lambda: F, metric: (F, F)) -> (F, F) {
    let (ma, mb) = metric;
    let diff = a - b;
    let collapse = diff.abs() * ma * mb / (ma + mb);
    if lambda >= collapse {
        let mean = (ma * a + mb * b) / (ma + mb);
        (mean, mean)
    } else {
        let s = diff.signum();
        (a - s * lambda / ma, b + s * lambda / mb)
    }
}

/// Prox of the smoothed Kullback-Leibler data term restricted to one vertex:
/// minimizes, per coordinate,
/// `m_k (p0_k - p_k)^2 / 2 - r_k log(beta/K + (1-beta) p_k)` with
/// `r_k = beta/K + (1-beta) q_k`.
///
/// The stationarity condition is a quadratic in `p_k`; the larger root is the
/// only one keeping the log argument positive, and the discriminant is
/// clamped at zero against rounding. `beta = 1` makes the data term constant
/// (prox = identity); `beta = 0` is accepted as the pure-KL degenerate mode.
pub fn prox_kl<F: Real>(p0: &[F], q: &[F], beta: F, metric: &[F]) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); p0.len()];
    prox_kl_into(p0, q, beta, metric, &mut out)?;
    Ok(out)
}

pub fn prox_kl_into<F: Real>(p0: &[F], q: &[F], beta: F, metric: &[F], out: &mut [F]) -> Result<()> {
    if beta < F::zero() || beta > F::one() {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
    }
    let k = p0.len();
    debug_assert!(q.len() == k && metric.len() == k && out.len() == k);
    let c = beta / F::cast(k as f64);
    let w = F::one() - beta;
    if w == F::zero() {
        out.copy_from_slice(p0);
        return Ok(());
    }
    for j in 0..k {
        let r = c + w * q[j];
        // w p^2 + (c - w p0) p - (c p0 + r w / m) = 0, larger root.
        let half_b = (c - w * p0[j]) / (F::cast(2.0) * w);
        let rhs = (c * p0[j] + r * w / metric[j]) / w;
        let disc = (half_b * half_b + rhs).max(F::zero());
        out[j] = -half_b + disc.sqrt();
    }
    Ok(())
}

/// Prox of the convex conjugate `g*` at `x` with per-coordinate step `sigma`,
/// through the diagonal-metric Moreau identity:
/// `out_j = x_j - sigma_j * P(x / sigma)_j` where `P` is the prox of `g` in
/// the metric `sigma`.
pub fn prox_conjugate<F, P>(prox_of_g: P, x: &[F], sigma: &[F]) -> Vec<F>
where
    F: Real,
    P: Fn(&[F], &[F]) -> Vec<F>,
{
    debug_assert_eq!(x.len(), sigma.len());
    let scaled: Vec<F> = x.iter().zip(sigma).map(|(&v, &s)| v / s).collect();
    let inner = prox_of_g(&scaled, sigma);
    x.iter()
        .zip(sigma)
        .zip(&inner)
        .map(|((&v, &s), &p)| v - s * p)
        .collect()
}
