//! Independent brute-force references: grid minimizers, finite-difference
//! gradients, a dense symmetric eigensolver, directly-coded one-step maps of
//! the classical splitting operators, and long reference runs.
//!
//! Every frozen expected value in the test suites is regenerated by these
//! routes; [`run_derived_checks`] packages the whole regeneration suite for
//! the `oracle-check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prox;
use crate::scalar::Real;
use crate::smooth::{self, DenseOperator, SmoothTerm};
use crate::solver::{
    self, pfdr_step, BlockTerm, Curvature, DomainPolicy, SeparableTerm, SolveConfig, SolverState,
    SplitProblem, StoppingRule,
};
use crate::graph::{BlockKind, BlockLayout, DiagonalOperator, SplitWeights};

/// Objective gap tolerance of the prox-vs-grid suite.
pub const PROX_GAP_TOL: f64 = 1e-6;
/// Relative tolerance of the gradient-vs-finite-difference suite.
pub const FD_REL_TOL: f64 = 1e-6;
/// Additive slack of the cocoercivity inequality checks.
pub const COCOERCIVITY_SLACK: f64 = 1e-10;
/// Per-coordinate tolerance of the reduction identities.
pub const REDUCTION_TOL: f64 = 1e-15;
/// Iteration count of the long reference runs.
pub const REFERENCE_ITERS: u64 = 100_000;

/// Exhaustive grid scan over a box (dims <= 3) at the given resolution,
/// followed by two local refinement passes at 10x finer resolution around the
/// incumbent. Returns the best grid point and its value. Points where the
/// objective is infinite are skipped; an everywhere-infinite grid is an error.
pub fn grid_minimize<F: Real>(
    objective: impl Fn(&[F]) -> F,
    bounds: &[(F, F)],
    resolution: F,
) -> Result<(Vec<F>, F)> {
    let dims = bounds.len();
    if dims == 0 || dims > 3 {
        return Err(Error::invalid(format!("grid_minimize supports 1..=3 dims, got {dims}")));
    }
    if !(resolution > F::zero()) {
        return Err(Error::invalid("resolution must be > 0"));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("grid box must be finite with lo <= hi"));
        }
    }
    let mut bounds: Vec<(F, F)> = bounds.to_vec();
    let mut res = resolution;
    let mut best: Option<(Vec<F>, F)> = None;
    for pass in 0..3 {
        if let Some((point, value)) = scan(&objective, &bounds, res) {
            match &best {
                Some((_, bv)) if *bv <= value => {}
                _ => best = Some((point, value)),
            }
        }
        if pass == 2 {
            break;
        }
        let incumbent = match &best {
            Some((p, _)) => p.clone(),
            None => return Err(Error::NoFeasiblePoint("objective infinite on the whole grid".into())),
        };
        bounds = incumbent
            .iter()
            .zip(&bounds)
            .map(|(&c, &(lo, hi))| ((c - res).max(lo), (c + res).min(hi)))
            .collect();
        res /= F::cast(10.0);
    }
    best.ok_or_else(|| Error::NoFeasiblePoint("objective infinite on the whole grid".into()))
}

fn scan<F: Real>(objective: &impl Fn(&[F]) -> F, bounds: &[(F, F)], res: F) -> Option<(Vec<F>, F)> {
    let counts: Vec<usize> = bounds
        .iter()
        .map(|&(lo, hi)| {
            if hi == lo {
                0
            } else {
                ((hi - lo) / res).ceil().to_f64().unwrap_or(0.0) as usize
            }
        })
        .collect();
    let coord = |d: usize, i: usize| -> F {
        let (lo, hi) = bounds[d];
        if counts[d] == 0 {
            lo
        } else {
            lo + (hi - lo) * F::cast(i as f64) / F::cast(counts[d] as f64)
        }
    };
    let mut best: Option<(Vec<F>, F)> = None;
    let mut point = vec![F::zero(); bounds.len()];
    let consider = |point: &[F], best: &mut Option<(Vec<F>, F)>, value: F| {
        if value.is_finite() {
            match best {
                Some((_, bv)) if *bv <= value => {}
                _ => *best = Some((point.to_vec(), value)),
            }
        }
    };
    match bounds.len() {
        1 => {
            for i in 0..=counts[0] {
                point[0] = coord(0, i);
                let v = objective(&point);
                consider(&point, &mut best, v);
            }
        }
        2 => {
            for i in 0..=counts[0] {
                point[0] = coord(0, i);
                for j in 0..=counts[1] {
                    point[1] = coord(1, j);
                    let v = objective(&point);
                    consider(&point, &mut best, v);
                }
            }
        }
        _ => {
            for i in 0..=counts[0] {
                point[0] = coord(0, i);
                for j in 0..=counts[1] {
                    point[1] = coord(1, j);
                    for k in 0..=counts[2] {
                        point[2] = coord(2, k);
                        let v = objective(&point);
                        consider(&point, &mut best, v);
                    }
                }
            }
        }
    }
    best
}

/// Central finite differences per coordinate; fails if the objective is not
/// finite at a probe point.
pub fn fd_gradient<F: Real>(f: impl Fn(&[F]) -> F, x: &[F], h: F) -> Result<Vec<F>> {
    let mut grad = vec![F::zero(); x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::DomainViolation(format!(
                "objective not finite near coordinate {j}"
            )));
        }
        grad[j] = (fp - fm) / (F::cast(2.0) * h);
    }
    Ok(grad)
}

/// Eigenvalues of a dense symmetric matrix (row-major, `n x n`) by cyclic
/// Jacobi rotations. Small and self-contained; the independent route against
/// which the power method is checked.
pub fn symmetric_eigenvalues<F: Real>(matrix: &[F], n: usize) -> Vec<F> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    let scale = a.iter().fold(F::zero(), |m, &v| m.max(v.abs())).max(F::one());
    let tol = F::cast(1e-14) * scale;
    for _sweep in 0..200 {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[idx(i, j)].abs());
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() < tol * F::cast(1e-2) {
                    continue;
                }
                let theta = (a[idx(q, q)] - a[idx(p, p)]) / (F::cast(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = (t * t + F::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[idx(i, i)]).collect()
}

/// Directly-coded forward-backward map `J_{gamma A}(x - gamma grad f(x))`.
/// The prox and gradient closures are supplied by the caller so the reference
/// stays independent of the solver's internals.
pub fn forward_backward_step<F: Real>(
    x: &[F],
    gamma: F,
    grad_f: impl Fn(&[F]) -> Vec<F>,
    prox_scaled: impl Fn(&[F], F) -> Vec<F>,
) -> Vec<F> {
    let g = grad_f(x);
    let v: Vec<F> = x.iter().zip(&g).map(|(&xj, &gj)| xj - gamma * gj).collect();
    prox_scaled(&v, gamma)
}

/// Directly-coded Douglas-Rachford map
/// `J_{gamma A}(2 J_{gamma C} z - z) + (z - J_{gamma C} z)`.
pub fn douglas_rachford_step<F: Real>(
    z: &[F],
    gamma: F,
    prox_a_scaled: impl Fn(&[F], F) -> Vec<F>,
    prox_c_scaled: impl Fn(&[F], F) -> Vec<F>,
) -> Vec<F> {
    let c = prox_c_scaled(z, gamma);
    let reflected: Vec<F> = c
        .iter()
        .zip(z)
        .map(|(&cj, &zj)| F::cast(2.0) * cj - zj)
        .collect();
    let a = prox_a_scaled(&reflected, gamma);
    a.iter()
        .zip(z.iter().zip(&c))
        .map(|(&aj, (&zj, &cj))| zj + (aj - cj))
        .collect()
}

/// A long error-free run used as ground truth: final iterate, objective and
/// auxiliary state after [`REFERENCE_ITERS`] iterations with no stopping rule.
#[derive(Debug, Clone)]
pub struct ReferenceSolution<F> {
    pub x: Vec<F>,
    pub objective: F,
    pub z: Vec<Vec<F>>,
}

pub fn reference_solution<F: Real>(problem: &SplitProblem<F>) -> Result<ReferenceSolution<F>> {
    reference_solution_iters(problem, REFERENCE_ITERS)
}

pub fn reference_solution_iters<F: Real>(
    problem: &SplitProblem<F>,
    iters: u64,
) -> Result<ReferenceSolution<F>> {
    let config = SolveConfig::new(StoppingRule::IterationsOnly, iters);
    let out = solver::solve(problem, &config)?;
    Ok(ReferenceSolution {
        objective: problem.objective(&out.x),
        x: out.x,
        z: out.state.z().to_vec(),
    })
}

/// Result of one named regeneration check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    /// Worst error observed, in the check's own units.
    pub worst: f64,
    pub detail: String,
}

impl CheckResult {
    fn bounded(name: &'static str, worst: f64, tol: f64) -> Self {
        CheckResult {
            name,
            pass: worst <= tol,
            worst,
            detail: format!("worst {worst:.3e}, tolerance {tol:.1e}"),
        }
    }
}

fn simplex_from<F: Real>(rng: &mut ChaCha8Rng, k: usize) -> Vec<F> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|&v| F::cast(v / s)).collect()
}

/// Worst prox-vs-grid objective gap for the scalar shrinkage operators.
pub fn check_soft_threshold_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = rng.gen_range(-2.0..2.0);
        let tau = rng.gen_range(0.0..1.5);
        let m = rng.gen_range(0.3..3.0);
        let f = |p: &[f64]| 0.5 * m * (x - p[0]).powi(2) + tau * p[0].abs();
        let (_, best) = grid_minimize(&f, &[(-3.0, 3.0)], 1e-4).unwrap();
        let got = f(&prox::soft_threshold(&[x], &[tau], &[m]));
        worst = worst.max(got - best);
    }
    worst
}

pub fn check_l1_positive_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = rng.gen_range(-2.0..2.0);
        let tau = rng.gen_range(0.0..1.5);
        let m = rng.gen_range(0.3..3.0);
        let f = |p: &[f64]| {
            if p[0] < 0.0 {
                f64::INFINITY
            } else {
                0.5 * m * (x - p[0]).powi(2) + tau * p[0]
            }
        };
        let (_, best) = grid_minimize(&f, &[(-0.25, 3.0)], 1e-4).unwrap();
        let got = f(&prox::prox_l1_positive(&[x], &[tau], &[m]));
        worst = worst.max(got - best);
    }
    worst
}

/// Simplex projection against a grid over an exact parameterization of the
/// simplex (the last coordinate is one minus the rest).
pub fn check_simplex_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..instances {
        let k = 2 + trial % 2; // K in {2, 3}
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let m: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..3.0)).collect();
        let objective = |q: &[f64]| -> f64 {
            0.5 * q
                .iter()
                .zip(&p)
                .zip(&m)
                .map(|((&qj, &pj), &mj)| mj * (pj - qj) * (pj - qj))
                .sum::<f64>()
        };
        let embedded = |t: &[f64]| -> f64 {
            let last = 1.0 - t.iter().sum::<f64>();
            if last < 0.0 || t.iter().any(|&v| v < 0.0) {
                return f64::INFINITY;
            }
            let mut q = t.to_vec();
            q.push(last);
            objective(&q)
        };
        let bounds = vec![(0.0, 1.0); k - 1];
        let res = if k == 2 { 1e-4 } else { 1e-2 };
        let (_, best) = grid_minimize(&embedded, &bounds, res).unwrap();
        let got = objective(&prox::project_simplex(&p, &m).unwrap());
        worst = worst.max(got - best);
    }
    worst
}

pub fn check_pair_abs_diff_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let a = rng.gen_range(-2.0..2.0);
        let b = rng.gen_range(-2.0..2.0);
        let lam = rng.gen_range(0.0..2.0);
        let (ma, mb) = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
        let f = |p: &[f64]| {
            0.5 * ma * (a - p[0]).powi(2) + 0.5 * mb * (b - p[1]).powi(2) + lam * (p[0] - p[1]).abs()
        };
        let (_, best) = grid_minimize(&f, &[(-3.0, 3.0), (-3.0, 3.0)], 1e-2).unwrap();
        let (pu, pv) = prox::prox_pair_abs_diff(a, b, lam, (ma, mb));
        worst = worst.max(f(&[pu, pv]) - best);
    }
    worst
}

/// Per-coordinate KL prox against a 1-D grid on the data-term objective.
pub fn check_kl_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..instances {
        let k = 2 + trial % 2;
        let beta = rng.gen_range(0.15..0.9);
        let q: Vec<f64> = simplex_from(&mut rng, k);
        let p0: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.5)).collect();
        let m: Vec<f64> = (0..k).map(|_| rng.gen_range(0.4..3.0)).collect();
        let out = prox::prox_kl(&p0, &q, beta, &m).unwrap();
        let c = beta / k as f64;
        let w = 1.0 - beta;
        for j in 0..k {
            let r = c + w * q[j];
            let f = |p: &[f64]| {
                let s = c + w * p[0];
                if s <= 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * m[j] * (p0[j] - p[0]).powi(2) - r * s.ln()
                }
            };
            // The minimizer sits in (p0, p0 + r w / (m (c + w p0))].
            let hi = p0[j] + r * w / (m[j] * (c + w * p0[j])) + 0.5;
            let lo = (p0[j] - 0.5).max(-c / w + 1e-9);
            let (_, best) = grid_minimize(&f, &[(lo, hi)], 1e-4).unwrap();
            worst = worst.max(f(&[out[j]]) - best);
        }
    }
    worst
}

/// Moreau-route conjugate prox against grids on the known conjugates of the
/// absolute value and of a shifted quadratic.
pub fn check_conjugate_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..instances {
        let x = rng.gen_range(-2.0..2.0);
        let sigma = rng.gen_range(0.3..3.0);
        if trial % 2 == 0 {
            // g = |.|, g* = indicator of [-1, 1]. The Moreau route lands on
            // the bound up to a rounding ulp, so the indicator gets slack.
            let abs_prox = |v: &[f64], m: &[f64]| prox::soft_threshold(v, &vec![1.0; v.len()], m);
            let got = prox::prox_conjugate(abs_prox, &[x], &[sigma])[0];
            let f = |u: &[f64]| {
                if u[0].abs() > 1.0 + 1e-12 {
                    f64::INFINITY
                } else {
                    0.5 / sigma * (x - u[0]).powi(2)
                }
            };
            let (_, best) = grid_minimize(&f, &[(-1.0, 1.0)], 1e-4).unwrap();
            worst = worst.max(f(&[got]) - best);
        } else {
            // g = (1/2)(. - y)^2, g* = u^2/2 + y u.
            let y = rng.gen_range(-1.5..1.5);
            let ls_prox = |v: &[f64], m: &[f64]| -> Vec<f64> {
                v.iter().zip(m).map(|(&vv, &mm)| (mm * vv + y) / (mm + 1.0)).collect()
            };
            let got = prox::prox_conjugate(ls_prox, &[x], &[sigma])[0];
            let f = |u: &[f64]| 0.5 / sigma * (x - u[0]).powi(2) + 0.5 * u[0].powi(2) + y * u[0];
            let lo = x.min(-4.0) - 1.0;
            let hi = x.max(4.0) + 1.0;
            let (_, best) = grid_minimize(&f, &[(lo, hi)], 1e-4).unwrap();
            worst = worst.max(f(&[got]) - best);
        }
    }
    worst
}

/// Worst relative disagreement between the least-squares gradient and central
/// finite differences.
pub fn check_ls_gradient_fd(seed: u64, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (4, 3);
    let data: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let phi = DenseOperator::new(n, p, data).unwrap();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| -> f64 {
        let mut r = vec![0.0; n];
        phi.apply(x, &mut r);
        0.5 * r.iter().zip(&y).map(|(&ri, &yi)| (yi - ri) * (yi - ri)).sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g = smooth::grad_least_squares(&phi, &y, &x).unwrap();
        let fd = fd_gradient(&f, &x, 1e-6).unwrap();
        for j in 0..p {
            let rel = (g[j] - fd[j]).abs() / g[j].abs().max(1e-9);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn check_kl_gradient_fd(seed: u64, points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let beta = rng.gen_range(0.05..0.6);
        let q: Vec<f64> = simplex_from(&mut rng, k);
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.5)).collect();
        let f = |pt: &[f64]| smooth::smoothed_kl_value(pt, &q, k, beta);
        let g = smooth::grad_smoothed_kl(&p, &q, k, beta).unwrap();
        let fd = fd_gradient(&f, &p, 1e-6).unwrap();
        for j in 0..k {
            let rel = (g[j] - fd[j]).abs() / g[j].abs().max(1e-9);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Worst violation of `<grad f(x) - grad f(y), x - y> >= ||grad f(x) - grad
/// f(y)||^2_{L^-1}` over seeded pairs, least-squares case with the
/// power-method curvature bound.
pub fn check_ls_cocoercivity(seed: u64, pairs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (5, 4);
    let data: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let phi = DenseOperator::new(n, p, data).unwrap();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let l = smooth::power_method_sqnorm(&phi, 1e-9, 10_000).value;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ga = smooth::grad_least_squares(&phi, &y, &a).unwrap();
        let gb = smooth::grad_least_squares(&phi, &y, &b).unwrap();
        let mut inner = 0.0;
        let mut weighted = 0.0;
        for j in 0..p {
            let dg = ga[j] - gb[j];
            inner += dg * (a[j] - b[j]);
            weighted += dg * dg / l;
        }
        worst = worst.max(weighted - inner);
    }
    worst
}

/// Cocoercivity of the smoothed KL gradient over the nonnegative orthant with
/// the module's diagonal curvature bound.
pub fn check_kl_cocoercivity(seed: u64, pairs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let beta = rng.gen_range(0.1..0.7);
        let q: Vec<f64> = simplex_from(&mut rng, k);
        let l = smooth::kl_curvature_diag(&q, k, beta).unwrap();
        let a: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.5)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.5)).collect();
        let ga = smooth::grad_smoothed_kl(&a, &q, k, beta).unwrap();
        let gb = smooth::grad_smoothed_kl(&b, &q, k, beta).unwrap();
        let mut inner = 0.0;
        let mut weighted = 0.0;
        for j in 0..k {
            let dg = ga[j] - gb[j];
            inner += dg * (a[j] - b[j]);
            weighted += dg * dg / l[j];
        }
        worst = worst.max(weighted - inner);
    }
    worst
}

fn single_block_problem(
    dim: usize,
    gamma: f64,
    block: BlockTerm<f64>,
    smooth_term: SmoothTerm<f64>,
    curvature: Curvature<f64>,
    full_term: SeparableTerm<f64>,
) -> SplitProblem<f64> {
    let layout = BlockLayout::from_blocks(dim, vec![(0..dim).collect()], vec![BlockKind::Coverage])
        .expect("single-block layout");
    let weights = SplitWeights::new(vec![DiagonalOperator::on_support(
        (0..dim).collect(),
        vec![1.0; dim],
    )
    .expect("identity weight")]);
    let gamma = DiagonalOperator::strictly_positive(vec![gamma; dim]).expect("gamma");
    SplitProblem::new(layout, vec![block], smooth_term, curvature, full_term, weights, gamma)
        .expect("single-block problem")
}

/// Max per-coordinate deviation of one solver step from the directly-coded
/// forward-backward map, in the `n = 1`, trivial-C, unit-weight setting.
pub fn check_forward_backward_reduction(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let gamma = 0.5;
    let data: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-0.7..0.7)).collect();
    let phi = DenseOperator::new(dim, dim, data).unwrap();
    let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tau: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.8)).collect();
    let l = smooth::power_method_sqnorm(&phi, 1e-12, 10_000).value;
    let problem = single_block_problem(
        dim,
        gamma,
        BlockTerm::Separable(SeparableTerm::L1 { tau: tau.clone() }),
        SmoothTerm::LeastSquares { phi: phi.clone(), y: y.clone() },
        Curvature::Scalar(l),
        SeparableTerm::Zero,
    );
    let grad = |x: &[f64]| -> Vec<f64> {
        // Same natural row-then-column loops as the library matvec.
        let mut r = vec![0.0; dim];
        phi.apply(x, &mut r);
        for (ri, &yi) in r.iter_mut().zip(&y) {
            *ri -= yi;
        }
        let mut g = vec![0.0; dim];
        phi.apply_adjoint(&r, &mut g);
        g
    };
    let prox_scaled = |v: &[f64], g: f64| -> Vec<f64> {
        v.iter()
            .zip(&tau)
            .map(|(&vj, &tj)| vj.signum() * (vj.abs() - tj * g).max(0.0))
            .collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.75..0.75)).collect();
        let expected = forward_backward_step(&x0, gamma, grad, prox_scaled);
        let mut state = SolverState::init(&problem, Some(&x0)).unwrap();
        pfdr_step(&mut state, &problem, 1.0, None, DomainPolicy::Abort).unwrap();
        for j in 0..dim {
            worst = worst.max((state.x()[j] - expected[j]).abs());
            worst = worst.max((state.z()[0][j] - expected[j]).abs());
        }
    }
    worst
}

/// Max per-coordinate deviation of one solver step from the directly-coded
/// Douglas-Rachford map, in the `n = 1`, trivial-B, unit-weight setting.
pub fn check_douglas_rachford_reduction(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3;
    let gamma = 0.5;
    let tau_a: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.8)).collect();
    let tau_c: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.8)).collect();
    let problem = single_block_problem(
        dim,
        gamma,
        BlockTerm::Separable(SeparableTerm::L1 { tau: tau_a.clone() }),
        SmoothTerm::Zero,
        Curvature::Scalar(1e-12),
        SeparableTerm::L1 { tau: tau_c.clone() },
    );
    let soft = |v: &[f64], tau: &[f64], g: f64| -> Vec<f64> {
        v.iter()
            .zip(tau)
            .map(|(&vj, &tj)| vj.signum() * (vj.abs() - tj * g).max(0.0))
            .collect()
    };
    let prox_a = |v: &[f64], g: f64| soft(v, &tau_a, g);
    let prox_c = |v: &[f64], g: f64| soft(v, &tau_c, g);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = douglas_rachford_step(&z0, gamma, prox_a, prox_c);
        let mut state = SolverState::init(&problem, Some(&z0)).unwrap();
        pfdr_step(&mut state, &problem, 1.0, None, DomainPolicy::Abort).unwrap();
        for j in 0..dim {
            worst = worst.max((state.z()[0][j] - expected[j]).abs());
        }
    }
    worst
}

/// The full regeneration suite behind the `oracle-check` command: every
/// closed form is recomputed against its independent route.
pub fn run_derived_checks(seed: u64) -> Vec<CheckResult> {
    vec![
        CheckResult::bounded(
            "prox/soft_threshold vs grid",
            check_soft_threshold_gap(seed, 100),
            PROX_GAP_TOL,
        ),
        CheckResult::bounded(
            "prox/l1_positive vs grid",
            check_l1_positive_gap(seed.wrapping_add(1), 100),
            PROX_GAP_TOL,
        ),
        CheckResult::bounded(
            "prox/project_simplex vs grid",
            check_simplex_gap(seed.wrapping_add(2), 100),
            PROX_GAP_TOL,
        ),
        CheckResult::bounded(
            "prox/pair_abs_diff vs grid",
            check_pair_abs_diff_gap(seed.wrapping_add(3), 100),
            PROX_GAP_TOL,
        ),
        CheckResult::bounded("prox/kl vs grid", check_kl_gap(seed.wrapping_add(4), 100), PROX_GAP_TOL),
        CheckResult::bounded(
            "prox/conjugate vs grid",
            check_conjugate_gap(seed.wrapping_add(5), 100),
            PROX_GAP_TOL,
        ),
        CheckResult::bounded(
            "grad/least_squares vs finite differences",
            check_ls_gradient_fd(seed.wrapping_add(6), 50),
            FD_REL_TOL,
        ),
        CheckResult::bounded(
            "grad/smoothed_kl vs finite differences",
            check_kl_gradient_fd(seed.wrapping_add(7), 50),
            FD_REL_TOL,
        ),
        CheckResult::bounded(
            "cocoercivity/least_squares",
            check_ls_cocoercivity(seed.wrapping_add(8), 100),
            COCOERCIVITY_SLACK,
        ),
        CheckResult::bounded(
            "cocoercivity/smoothed_kl",
            check_kl_cocoercivity(seed.wrapping_add(9), 100),
            COCOERCIVITY_SLACK,
        ),
        CheckResult::bounded(
            "reduction/forward_backward",
            check_forward_backward_reduction(seed.wrapping_add(10), 20),
            REDUCTION_TOL,
        ),
        CheckResult::bounded(
            "reduction/douglas_rachford",
            check_douglas_rachford_reduction(seed.wrapping_add(11), 20),
            REDUCTION_TOL,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_quadratic_minimum() {
        let f = |p: &[f64]| (p[0] - 1.0).powi(2);
        let (arg, val) = grid_minimize(&f, &[(0.0, 2.0)], 1e-4).unwrap();
        assert!((arg[0] - 1.0).abs() < 1e-4);
        assert!(val < 1e-8);
    }

    #[test]
    fn grid_finds_lasso_minimum() {
        // Subgradient condition: 0 in x - 2 + sign(x) at x = 1.
        let f = |p: &[f64]| 0.5 * (p[0] - 2.0).powi(2) + p[0].abs();
        let (arg, _) = grid_minimize(&f, &[(-1.0, 3.0)], 1e-4).unwrap();
        assert!((arg[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn grid_handles_indicator_objectives() {
        let f = |p: &[f64]| {
            let s = p[0] + p[1];
            if !(0.99..=1.01).contains(&s) || p[0] < 0.0 || p[1] < 0.0 {
                f64::INFINITY
            } else {
                p[0].powi(2) + p[1].powi(2)
            }
        };
        let (arg, _) = grid_minimize(&f, &[(0.0, 1.0), (0.0, 1.0)], 1e-2).unwrap();
        assert!((arg[0] - 0.5).abs() < 2e-2 && (arg[1] - 0.5).abs() < 2e-2);
    }

    #[test]
    fn grid_rejects_empty_feasible_set() {
        let f = |_: &[f64]| f64::INFINITY;
        assert!(matches!(
            grid_minimize(&f, &[(0.0, 1.0)], 1e-2),
            Err(Error::NoFeasiblePoint(_))
        ));
    }

    #[test]
    fn fd_gradient_quadratic_and_order() {
        let f = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]);
        let g = fd_gradient(&f, &[0.3, -0.7], 1e-6).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-9 && (g[1] + 0.7).abs() < 1e-9);
        // Central differences are second order: halving h shrinks the error
        // by about 4x on a cubic.
        let f3 = |x: &[f64]| x[0].powi(3);
        let exact = 3.0 * 0.5f64.powi(2);
        let e1 = (fd_gradient(&f3, &[0.5], 1e-3).unwrap()[0] - exact).abs();
        let e2 = (fd_gradient(&f3, &[0.5], 5e-4).unwrap()[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "order-2 ratio was {ratio}");
    }

    #[test]
    fn fd_gradient_domain_violation() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0].ln() };
        assert!(fd_gradient(&f, &[1e-9], 1e-6).is_err());
    }

    #[test]
    fn jacobi_eigenvalues_match_known_matrix() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let mut eigs = symmetric_eigenvalues(&[2.0f64, 1.0, 1.0, 2.0], 2);
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eigs[0] - 1.0).abs() < 1e-10);
        assert!((eigs[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn reference_run_pins_the_lasso_optimum() {
        // min (x - 2)^2 / 2 + |x| has optimum 1.5 at x = 1 (grid-verified in
        // the minimizer tests above).
        let dim = 1;
        let problem = single_block_problem(
            dim,
            0.5,
            BlockTerm::Separable(SeparableTerm::L1 { tau: vec![1.0] }),
            SmoothTerm::LeastSquares {
                phi: DenseOperator::identity(1),
                y: vec![2.0],
            },
            Curvature::Scalar(1.0),
            SeparableTerm::Zero,
        );
        let reference = reference_solution_iters(&problem, 20_000).unwrap();
        assert!((reference.objective - 1.5).abs() < 1e-10);
        assert!((reference.x[0] - 1.0).abs() < 1e-10);
        // The returned auxiliaries certify the fixed point.
        let state = SolverState::init(&problem, Some(&reference.z[0].clone())).unwrap();
        let residual = crate::solver::fixed_point_residual(&state, &problem);
        let scale = 1.0 + reference.x[0].abs();
        assert!(residual < 1e-8 * scale, "residual {residual}");
    }

    #[test]
    fn derived_checks_all_pass() {
        for check in run_derived_checks(12345) {
            assert!(check.pass, "{}: {}", check.name, check.detail);
        }
    }

    #[test]
    fn perturbed_prox_is_detected() {
        // A deliberately wrong prox constant must show up as a visible
        // objective gap against the grid oracle.
        let x = 1.7;
        let tau = 0.6;
        let m = 1.3;
        let f = |p: &[f64]| 0.5 * m * (x - p[0]).powi(2) + tau * p[0].abs();
        let (_, best) = grid_minimize(&f, &[(-3.0, 3.0)], 1e-4).unwrap();
        // Perturbation: threshold scaled by 1.05.
        let broken = x.signum() * (x.abs() - 1.05 * tau / m).max(0.0);
        assert!(f(&[broken]) - best > PROX_GAP_TOL);
    }
}
