//! Smooth terms: gradients, curvature bounds, and the dense operators behind
//! the data-fidelity terms.
//!
//! The forward step of the splitting solvers evaluates `B = grad f` here, and
//! the diagonal curvature bound `L` drives both the preconditioner and the
//! relaxation range.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix with application and adjoint application.
#[derive(Debug, Clone)]
pub struct DenseOperator<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> DenseOperator<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} != {rows} x {cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has a non-finite entry"));
        }
        Ok(DenseOperator { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![F::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = F::one();
        }
        DenseOperator { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = A x`.
    pub fn apply(&self, x: &[F], out: &mut [F]) {
        debug_assert!(x.len() == self.cols && out.len() == self.rows);
        for i in 0..self.rows {
            out[i] = crate::scalar::dot(self.row(i), x);
        }
    }

    /// `out = A^T u`, each output coordinate accumulated in row order.
    pub fn apply_adjoint(&self, u: &[F], out: &mut [F]) {
        debug_assert!(u.len() == self.rows && out.len() == self.cols);
        for j in 0..self.cols {
            let mut acc = F::zero();
            for i in 0..self.rows {
                acc += self.entry(i, j) * u[i];
            }
            out[j] = acc;
        }
    }

    /// CSV, one row per line.
    pub fn from_csv(reader: impl BufRead, path: &str) -> Result<Self> {
        let mut data: Vec<F> = Vec::new();
        let mut cols = None;
        let mut rows = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut count = 0usize;
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("bad number '{}'", field.trim()),
                })?;
                data.push(F::cast(v));
                count += 1;
            }
            match cols {
                None => cols = Some(count),
                Some(c) if c != count => {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        msg: format!("row has {count} fields, expected {c}"),
                    })
                }
                _ => {}
            }
            rows += 1;
        }
        DenseOperator::new(rows, cols.unwrap_or(0), data)
    }

    pub fn to_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for i in 0..self.rows {
            let fields: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Raw format: one text header line `rows cols`, then row-major
    /// little-endian f64 values.
    pub fn from_raw(mut reader: impl Read, path: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            reader.read_exact(&mut byte).map_err(Error::Io)?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
        }
        let header = String::from_utf8_lossy(&header);
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: msg.to_string(),
        };
        if parts.len() != 2 {
            return Err(parse_err("header must be 'rows cols'"));
        }
        let rows: usize = parts[0].parse().map_err(|_| parse_err("bad row count"))?;
        let cols: usize = parts[1].parse().map_err(|_| parse_err("bad col count"))?;
        let mut bytes = vec![0u8; rows * cols * 8];
        reader.read_exact(&mut bytes).map_err(Error::Io)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| F::cast(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        DenseOperator::new(rows, cols, data)
    }

    pub fn to_raw(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for v in &self.data {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
        Ok(())
    }
}

/// `grad (1/2)||y - Phi x||^2 = Phi^T (Phi x - y)`.
pub fn grad_least_squares<F: Real>(phi: &DenseOperator<F>, y: &[F], x: &[F]) -> Result<Vec<F>> {
    if x.len() != phi.cols() || y.len() != phi.rows() {
        return Err(Error::invalid(format!(
            "least-squares dims: phi is {}x{}, x has {}, y has {}",
            phi.rows(),
            phi.cols(),
            x.len(),
            y.len()
        )));
    }
    let mut residual = vec![F::zero(); phi.rows()];
    phi.apply(x, &mut residual);
    for (r, &yi) in residual.iter_mut().zip(y) {
        *r -= yi;
    }
    let mut out = vec![F::zero(); phi.cols()];
    phi.apply_adjoint(&residual, &mut out);
    Ok(out)
}

/// Diagonal of `Phi^T Phi`: squared column norms.
pub fn jacobi_diag<F: Real>(phi: &DenseOperator<F>) -> Vec<F> {
    let mut diag = vec![F::zero(); phi.cols()];
    for i in 0..phi.rows() {
        for (j, &v) in phi.row(i).iter().enumerate() {
            diag[j] += v * v;
        }
    }
    diag
}

/// Result of a power-method squared-norm estimation.
#[derive(Debug, Clone, Copy)]
pub struct PowerEstimate<F> {
    /// Raw estimate multiplied by the 1.01 safety factor (the raw Rayleigh
    /// quotient is a lower bound on the true squared norm).
    pub value: F,
    /// Last Rayleigh quotient, before the safety factor.
    pub raw: F,
    pub converged: bool,
    pub iterations: usize,
}

pub const POWER_TOL_DEFAULT: f64 = 1e-9;
pub const POWER_MAX_ITERS_DEFAULT: usize = 10_000;
const POWER_SAFETY: f64 = 1.01;

/// Power method on `A^T A` for a generic linear map given by `apply` (into
/// `rows` outputs) and `apply_adjoint` (back into `dim` inputs). Deterministic
/// seeded start vector; stops when the Rayleigh quotient moves relatively less
/// than `tol`.
pub fn power_method_sqnorm_map<F, A, At>(
    dim: usize,
    rows: usize,
    apply: A,
    apply_adjoint: At,
    tol: F,
    max_iters: usize,
) -> PowerEstimate<F>
where
    F: Real,
    A: Fn(&[F], &mut [F]),
    At: Fn(&[F], &mut [F]),
{
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut v: Vec<F> = (0..dim).map(|_| F::cast(rng.gen_range(-1.0..1.0))).collect();
    let n = crate::scalar::norm2(&v);
    if n > F::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v[0] = F::one();
    }
    let mut mid = vec![F::zero(); rows];
    let mut next = vec![F::zero(); dim];
    let mut rayleigh = F::zero();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        apply(&v, &mut mid);
        apply_adjoint(&mid, &mut next);
        // v is unit, so <v, A^T A v> is the Rayleigh quotient.
        let new_rayleigh = crate::scalar::dot(&v, &next);
        let norm = crate::scalar::norm2(&next);
        if norm == F::zero() {
            rayleigh = F::zero();
            converged = true;
            break;
        }
        for (slot, &x) in v.iter_mut().zip(&next) {
            *slot = x / norm;
        }
        let rel = (new_rayleigh - rayleigh).abs() / new_rayleigh.max(F::min_positive_value());
        rayleigh = new_rayleigh;
        if it > 1 && rel < tol {
            converged = true;
            break;
        }
    }
    PowerEstimate {
        value: rayleigh * F::cast(POWER_SAFETY),
        raw: rayleigh,
        converged,
        iterations,
    }
}

/// `||Phi||^2` estimate for a dense operator.
pub fn power_method_sqnorm<F: Real>(phi: &DenseOperator<F>, tol: F, max_iters: usize) -> PowerEstimate<F> {
    power_method_sqnorm_map(
        phi.cols(),
        phi.rows(),
        |x, out| phi.apply(x, out),
        |u, out| phi.apply_adjoint(u, out),
        tol,
        max_iters,
    )
}

/// Gradient of the smoothed KL data term
/// `sum_j -(1-beta) (beta/K + (1-beta) q_j) / (beta/K + (1-beta) p_j)`.
///
/// Outside the domain (nonpositive log argument) this returns a domain
/// violation naming the first offending coordinate; the caller decides
/// whether to abort or to extend the formula.
pub fn grad_smoothed_kl<F: Real>(p: &[F], q: &[F], channels: usize, beta: F) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); p.len()];
    match grad_smoothed_kl_into(p, q, channels, beta, &mut out, false)? {
        None => Ok(out),
        Some(j) => Err(Error::DomainViolation(format!(
            "smoothed KL gradient: log argument <= 0 at coordinate {j}"
        ))),
    }
}

/// In-place gradient. With `extend` set, coordinates outside the domain are
/// evaluated by the same rational formula (clamping only an exactly-zero
/// denominator) and the first offending coordinate is reported back instead
/// of failing.
pub fn grad_smoothed_kl_into<F: Real>(
    p: &[F],
    q: &[F],
    channels: usize,
    beta: F,
    out: &mut [F],
    extend: bool,
) -> Result<Option<usize>> {
    if beta < F::zero() || beta > F::one() {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
    }
    debug_assert!(q.len() == p.len() && out.len() == p.len());
    let c = beta / F::cast(channels as f64);
    let w = F::one() - beta;
    let mut violated: Option<usize> = None;
    for j in 0..p.len() {
        let s = c + w * p[j];
        if s <= F::zero() {
            if violated.is_none() {
                violated = Some(j);
            }
            if !extend {
                continue;
            }
        }
        let denom = if s == F::zero() { F::cast(1e-300) } else { s };
        out[j] = -w * (c + w * q[j]) / denom;
    }
    Ok(violated)
}

/// Diagonal curvature bound for the smoothed KL term over the nonnegative
/// orthant: `L_j = (1-beta)^2 (beta/K + (1-beta) q_j) / (beta/K)^2`.
pub fn kl_curvature_diag<F: Real>(q: &[F], channels: usize, beta: F) -> Result<Vec<F>> {
    if beta <= F::zero() || beta >= F::one() {
        return Err(Error::invalid(format!(
            "beta {beta} outside (0, 1): curvature bound undefined"
        )));
    }
    let c = beta / F::cast(channels as f64);
    let w = F::one() - beta;
    Ok(q.iter().map(|&qj| w * w * (c + w * qj) / (c * c)).collect())
}

/// Smoothed KL data-term value `sum_j r_j log(r_j / s_j)` with
/// `r = beta/K + (1-beta) q` and `s = beta/K + (1-beta) p`; infinite when a
/// log argument with positive mass is nonpositive.
pub fn smoothed_kl_value<F: Real>(p: &[F], q: &[F], channels: usize, beta: F) -> F {
    let c = beta / F::cast(channels as f64);
    let w = F::one() - beta;
    let mut total = F::zero();
    for j in 0..p.len() {
        let r = c + w * q[j];
        if r == F::zero() {
            continue;
        }
        let s = c + w * p[j];
        if s <= F::zero() {
            return F::infinity();
        }
        total += r * (r / s).ln();
    }
    total
}

/// The smooth part of a split problem.
#[derive(Debug, Clone)]
pub enum SmoothTerm<F> {
    Zero,
    /// `(1/2) ||y - Phi x||^2`.
    LeastSquares { phi: DenseOperator<F>, y: Vec<F> },
    /// Smoothed KL data term against reference distributions `q` (flattened
    /// per-vertex rows of length `channels`).
    SmoothedKl { q: Vec<F>, channels: usize, beta: F },
}

impl<F: Real> SmoothTerm<F> {
    pub fn dim(&self) -> Option<usize> {
        match self {
            SmoothTerm::Zero => None,
            SmoothTerm::LeastSquares { phi, .. } => Some(phi.cols()),
            SmoothTerm::SmoothedKl { q, .. } => Some(q.len()),
        }
    }

    /// Gradient into `out`; reports the first domain-violating coordinate when
    /// `extend` is set instead of failing.
    pub fn gradient_into(&self, x: &[F], out: &mut [F], extend: bool) -> Result<Option<usize>> {
        match self {
            SmoothTerm::Zero => {
                out.iter_mut().for_each(|v| *v = F::zero());
                Ok(None)
            }
            SmoothTerm::LeastSquares { phi, y } => {
                let g = grad_least_squares(phi, y, x)?;
                out.copy_from_slice(&g);
                Ok(None)
            }
            SmoothTerm::SmoothedKl { q, channels, beta } => {
                let first = grad_smoothed_kl_into(x, q, *channels, *beta, out, extend)?;
                if let (Some(j), false) = (first, extend) {
                    return Err(Error::DomainViolation(format!(
                        "smoothed KL gradient: log argument <= 0 at coordinate {j}"
                    )));
                }
                Ok(first)
            }
        }
    }

    pub fn value(&self, x: &[F]) -> F {
        match self {
            SmoothTerm::Zero => F::zero(),
            SmoothTerm::LeastSquares { phi, y } => {
                let mut r = vec![F::zero(); phi.rows()];
                phi.apply(x, &mut r);
                let half = F::cast(0.5);
                half * r
                    .iter()
                    .zip(y)
                    .map(|(&ri, &yi)| (yi - ri) * (yi - ri))
                    .sum::<F>()
            }
            SmoothTerm::SmoothedKl { q, channels, beta } => smoothed_kl_value(x, q, *channels, *beta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{fd_gradient, symmetric_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grad_ls_identity_is_x() {
        let phi = DenseOperator::identity(3);
        let y = vec![0.0; 3];
        let x = vec![1.0, -2.0, 0.5];
        assert_eq!(grad_least_squares(&phi, &y, &x).unwrap(), x);
    }

    #[test]
    fn grad_ls_zero_residual() {
        let phi = DenseOperator::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = vec![1.0, 1.0];
        let mut y = vec![0.0; 2];
        phi.apply(&x, &mut y);
        let g = grad_least_squares(&phi, &y, &x).unwrap();
        assert!(g.iter().all(|&v: &f64| v.abs() < 1e-14));
    }

    #[test]
    fn grad_ls_row_example() {
        let phi = DenseOperator::new(1, 2, vec![1.0, 1.0]).unwrap();
        let g = grad_least_squares(&phi, &[1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-1.0, -1.0]);
    }

    #[test]
    fn grad_ls_dimension_mismatch() {
        let phi = DenseOperator::identity(2);
        assert!(grad_least_squares(&phi, &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn jacobi_diag_examples() {
        let phi = DenseOperator::<f64>::identity(4);
        assert_eq!(jacobi_diag(&phi), vec![1.0; 4]);
        let phi = DenseOperator::<f64>::new(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(jacobi_diag(&phi), vec![1.0, 5.0]);
        let phi = DenseOperator::<f64>::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(jacobi_diag(&phi)[1], 0.0);
    }

    #[test]
    fn power_method_diagonal() {
        let phi = DenseOperator::<f64>::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        let est = power_method_sqnorm(&phi, 1e-12, 10_000);
        assert!(est.converged);
        assert!((est.raw - 9.0).abs() < 1e-8);
        assert!((est.value - 9.0 * 1.01).abs() < 1e-6);
        let est = power_method_sqnorm(&DenseOperator::<f64>::identity(5), 1e-12, 10_000);
        assert!((est.raw - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_method_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = DenseOperator::new(5, 5, data).unwrap();
        // Independent route: symmetric eigenvalues of Phi^T Phi.
        let mut gram = vec![0.0; 25];
        for i in 0..5 {
            for j in 0..5 {
                gram[i * 5 + j] = (0..5).map(|r| phi.entry(r, i) * phi.entry(r, j)).sum();
            }
        }
        let eigs = symmetric_eigenvalues(&gram, 5);
        let max_eig = eigs.iter().cloned().fold(f64::MIN, f64::max);
        let est = power_method_sqnorm(&phi, 1e-12, 50_000);
        assert!(
            (est.raw - max_eig).abs() < 1e-6,
            "power {} vs eig {}",
            est.raw,
            max_eig
        );
        // The raw estimate never exceeds the squared Frobenius norm and
        // dominates the Rayleigh quotient of any probe vector.
        let frob: f64 = (0..5).flat_map(|i| (0..5).map(move |j| (i, j)))
            .map(|(i, j)| phi.entry(i, j).powi(2))
            .sum();
        assert!(est.raw <= frob + 1e-9);
        for probe_seed in 0..20 {
            let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
            let v: Vec<f64> = (0..5).map(|_| prng.gen_range(-1.0..1.0)).collect();
            let mut av = vec![0.0; 5];
            phi.apply(&v, &mut av);
            let quotient = av.iter().map(|a| a * a).sum::<f64>()
                / v.iter().map(|x| x * x).sum::<f64>();
            assert!(quotient <= est.raw + 1e-6, "probe {quotient} vs {}", est.raw);
        }
    }

    #[test]
    fn kl_gradient_examples() {
        // p = q: every coordinate is -(1 - beta).
        let q = vec![0.3, 0.7];
        let g = grad_smoothed_kl(&q, &q, 2, 0.25).unwrap();
        assert!(g.iter().all(|&v: &f64| (v + 0.75).abs() < 1e-12));
        // beta = 1: constant function.
        let g = grad_smoothed_kl(&[0.1, 0.9], &q, 2, 1.0).unwrap();
        assert!(g.iter().all(|&v: &f64| v == 0.0));
        // Worked value: -0.9 * 0.95 / 0.5 = -1.71.
        let g = grad_smoothed_kl::<f64>(&[0.5, 0.5], &[1.0, 0.0], 2, 0.1).unwrap();
        assert!((g[0] + 1.71).abs() < 1e-12);
        // Domain violation is surfaced, not clamped.
        assert!(grad_smoothed_kl(&[-1.0, 0.5], &q, 2, 0.1).is_err());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k = 3;
            let beta = rng.gen_range(0.05..0.6);
            let q: Vec<f64> = {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.5)).collect();
            let f = |pt: &[f64]| smoothed_kl_value(pt, &q, k, beta);
            let fd = fd_gradient(&f, &p, 1e-6).unwrap();
            let g = grad_smoothed_kl(&p, &q, k, beta).unwrap();
            for j in 0..k {
                let rel = (g[j] - fd[j]).abs() / g[j].abs().max(1e-12);
                assert!(rel < 1e-6, "coordinate {j}: {} vs {}", g[j], fd[j]);
            }
        }
    }

    #[test]
    fn kl_curvature_examples() {
        let l = kl_curvature_diag::<f64>(&[1.0, 0.0], 2, 0.5).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12);
        assert!((l[1] - 1.0).abs() < 1e-12);
        let l = kl_curvature_diag::<f64>(&[0.5, 0.5], 2, 0.3).unwrap();
        assert!((l[0] - l[1]).abs() < 1e-15);
        assert!(l.iter().all(|&v| v > 0.0));
        assert!(kl_curvature_diag(&[1.0], 1, 0.0).is_err());
        assert!(kl_curvature_diag(&[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn kl_curvature_bounds_second_difference() {
        // The diagonal bound dominates the numerical second derivative over
        // the nonnegative orthant.
        let q = [0.6, 0.4];
        let beta = 0.5;
        let l = kl_curvature_diag(&q, 2, beta).unwrap();
        let f = |p: &[f64]| smoothed_kl_value(p, &q, 2, beta);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for steps in 0..50 {
            let p0 = [0.02 * steps as f64, 0.3];
            for j in 0..2 {
                let mut pp = p0;
                let mut pm = p0;
                pp[j] += h;
                pm[j] -= h;
                if pm[j] < 0.0 {
                    continue;
                }
                let second = (f(&pp) - 2.0 * f(&p0) + f(&pm)) / (h * h);
                worst = worst.max(second - l[j]);
            }
        }
        assert!(worst < 1e-4, "second difference exceeded bound by {worst}");
    }

    #[test]
    fn dense_csv_roundtrip() {
        let phi = DenseOperator::new(2, 3, vec![1.0, 2.5, -3.0, 0.0, 1e-9, 4.0]).unwrap();
        let mut buf = Vec::new();
        phi.to_csv(&mut buf).unwrap();
        let back = DenseOperator::<f64>::from_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.rows(), 2);
        assert_eq!(back.cols(), 3);
        for i in 0..2 {
            assert_eq!(back.row(i), phi.row(i));
        }
    }

    #[test]
    fn dense_raw_roundtrip() {
        let phi = DenseOperator::new(3, 2, vec![1.0, -2.0, 0.5, 1e300, -1e-300, 0.0]).unwrap();
        let mut buf = Vec::new();
        phi.to_raw(&mut buf).unwrap();
        let back = DenseOperator::<f64>::from_raw(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.rows(), 3);
        for i in 0..3 {
            assert_eq!(back.row(i), phi.row(i));
        }
    }
}
