//! Preconditioned primal-dual comparator: the relaxed primal-dual iteration
//! with diagonal step operators built from row/column absolute sums
//! (the alpha = 1 rule), sharing the problems, objectives and logs of the
//! splitting solvers.
//!
//! The functional is split as `F = g(Lambda x) + h(x)` with `g` prox-able
//! rowwise by dual block and `h` a separable primal term. One iteration, with
//! relaxation fixed at 1:
//!
//! ```text
//! y    <- prox_{g*}^{Sigma^-1}(y + sigma . (Lambda xbar))
//! x'   <- prox_h^{Tau^-1}(x - tau . (Lambda^T y))
//! xbar <- 2 x' - x
//! ```

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::prox;
use crate::scalar::{dist2, dist_inf, norm2, Real};
use crate::smooth::{self, DenseOperator};
use crate::solver::{
    Checkpoint, ConvergenceLog, LogRecord, SeparableTerm, SolveConfig, StoppingRule,
};

/// Zero row/column absolute sums are floored at this value before taking
/// reciprocals, so decoupled rows get a finite (huge) step instead of a
/// division by zero.
pub const PRECOND_SUM_FLOOR: f64 = 1e-12;

/// Tolerance on the scaled operator norm bound
/// `||sigma^(1/2) Lambda tau^(1/2)|| <= 1`.
pub const PRECOND_NORM_TOL: f64 = 1e-10;

/// Linear part of one dual block.
#[derive(Debug, Clone)]
pub enum GroupOp<F> {
    /// Arbitrary dense rows.
    Dense(DenseOperator<F>),
    /// One row per primal coordinate, coefficient 1.
    Identity,
    /// Per edge and channel, `lambda_e (x_{u,k} - x_{v,k})`; rows are laid
    /// out edge-major.
    EdgeDiff {
        edges: Vec<(usize, usize)>,
        lambda: Vec<F>,
        channels: usize,
    },
}

/// Rowwise prox-able dual functional of one block.
#[derive(Debug, Clone)]
pub enum GroupFun<F> {
    /// `(1/2) ||target - v||^2`; the conjugate prox is closed-form.
    SquaredResidual { target: Vec<F> },
    /// `sum |delta_i|`; the conjugate prox clips to `[-1, 1]`.
    AbsValue,
    /// Smoothed KL data term against `q`; the conjugate prox goes through the
    /// KL prox by the Moreau identity.
    SmoothedKl { q: Vec<F>, channels: usize, beta: F },
}

#[derive(Debug, Clone)]
pub struct PdGroup<F> {
    pub op: GroupOp<F>,
    pub fun: GroupFun<F>,
}

/// The primal-dual splitting: stacked linear map, dual blocks and primal term.
#[derive(Debug, Clone)]
pub struct PdSplitting<F> {
    primal_dim: usize,
    groups: Vec<PdGroup<F>>,
    h: SeparableTerm<F>,
}

/// Diagonal primal/dual step operators.
#[derive(Debug, Clone)]
pub struct PdPreconditioners<F> {
    pub tau: Vec<F>,
    pub sigma: Vec<F>,
}

impl<F: Real> GroupOp<F> {
    fn rows(&self, primal_dim: usize) -> usize {
        match self {
            GroupOp::Dense(phi) => phi.rows(),
            GroupOp::Identity => primal_dim,
            GroupOp::EdgeDiff { edges, channels, .. } => edges.len() * channels,
        }
    }

    fn apply(&self, x: &[F], out: &mut [F]) {
        match self {
            GroupOp::Dense(phi) => phi.apply(x, out),
            GroupOp::Identity => out.copy_from_slice(x),
            GroupOp::EdgeDiff { edges, lambda, channels } => {
                let k = *channels;
                for (e, &(u, v)) in edges.iter().enumerate() {
                    for c in 0..k {
                        out[e * k + c] = lambda[e] * (x[u * k + c] - x[v * k + c]);
                    }
                }
            }
        }
    }

    /// `out += op^T u`, accumulated coordinatewise in fixed order.
    fn adjoint_accumulate(&self, u: &[F], out: &mut [F]) {
        match self {
            GroupOp::Dense(phi) => {
                for j in 0..phi.cols() {
                    let mut acc = F::zero();
                    for i in 0..phi.rows() {
                        acc += phi.entry(i, j) * u[i];
                    }
                    out[j] += acc;
                }
            }
            GroupOp::Identity => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o += v;
                }
            }
            GroupOp::EdgeDiff { edges, lambda, channels } => {
                let k = *channels;
                for (e, &(u_id, v_id)) in edges.iter().enumerate() {
                    for c in 0..k {
                        let val = lambda[e] * u[e * k + c];
                        out[u_id * k + c] += val;
                        out[v_id * k + c] -= val;
                    }
                }
            }
        }
    }

    fn row_abs_sums(&self, out: &mut [F]) {
        match self {
            GroupOp::Dense(phi) => {
                for i in 0..phi.rows() {
                    out[i] = phi.row(i).iter().map(|&v| v.abs()).sum();
                }
            }
            GroupOp::Identity => out.iter_mut().for_each(|o| *o = F::one()),
            GroupOp::EdgeDiff { edges, lambda, channels } => {
                let k = *channels;
                for e in 0..edges.len() {
                    let s = F::cast(2.0) * lambda[e].abs();
                    for c in 0..k {
                        out[e * k + c] = s;
                    }
                }
            }
        }
    }

    fn col_abs_sums_accumulate(&self, out: &mut [F]) {
        match self {
            GroupOp::Dense(phi) => {
                for i in 0..phi.rows() {
                    for (j, &v) in phi.row(i).iter().enumerate() {
                        out[j] += v.abs();
                    }
                }
            }
            GroupOp::Identity => out.iter_mut().for_each(|o| *o += F::one()),
            GroupOp::EdgeDiff { edges, lambda, channels } => {
                let k = *channels;
                for (e, &(u, v)) in edges.iter().enumerate() {
                    for c in 0..k {
                        out[u * k + c] += lambda[e].abs();
                        out[v * k + c] += lambda[e].abs();
                    }
                }
            }
        }
    }
}

impl<F: Real> GroupFun<F> {
    /// Prox of the conjugate at `v` with dual steps `sigma` (both restricted
    /// to this block's rows), written into `out`.
    fn conjugate_prox_into(&self, v: &[F], sigma: &[F], out: &mut [F]) -> Result<()> {
        match self {
            GroupFun::SquaredResidual { target } => {
                for j in 0..v.len() {
                    out[j] = (v[j] - sigma[j] * target[j]) / (F::one() + sigma[j]);
                }
            }
            GroupFun::AbsValue => {
                for j in 0..v.len() {
                    out[j] = v[j].max(-F::one()).min(F::one());
                }
            }
            GroupFun::SmoothedKl { q, channels, beta } => {
                let k = *channels;
                let mut scaled = vec![F::zero(); k];
                let mut inner = vec![F::zero(); k];
                for (row, (vc, sc)) in v.chunks(k).zip(sigma.chunks(k)).enumerate() {
                    for c in 0..k {
                        scaled[c] = vc[c] / sc[c];
                    }
                    prox::prox_kl_into(&scaled, &q[row * k..(row + 1) * k], *beta, sc, &mut inner)?;
                    for c in 0..k {
                        out[row * k + c] = vc[c] - sc[c] * inner[c];
                    }
                }
            }
        }
        Ok(())
    }

    /// Value of the block functional at the mapped point.
    fn value(&self, mapped: &[F]) -> F {
        match self {
            GroupFun::SquaredResidual { target } => {
                F::cast(0.5)
                    * mapped
                        .iter()
                        .zip(target)
                        .map(|(&v, &t)| (t - v) * (t - v))
                        .sum::<F>()
            }
            GroupFun::AbsValue => mapped.iter().map(|&v| v.abs()).sum(),
            GroupFun::SmoothedKl { q, channels, beta } => {
                smooth::smoothed_kl_value(mapped, q, *channels, *beta)
            }
        }
    }
}

impl<F: Real> PdSplitting<F> {
    pub fn new(primal_dim: usize, groups: Vec<PdGroup<F>>, h: SeparableTerm<F>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("primal-dual splitting needs at least one dual block"));
        }
        for (gi, g) in groups.iter().enumerate() {
            let rows = g.op.rows(primal_dim);
            if let GroupOp::Dense(phi) = &g.op {
                if phi.cols() != primal_dim {
                    return Err(Error::invalid(format!(
                        "dense block {gi} has {} columns, expected {primal_dim}",
                        phi.cols()
                    )));
                }
            }
            if let GroupOp::EdgeDiff { edges, lambda, channels } = &g.op {
                if lambda.len() != edges.len() {
                    return Err(Error::invalid("edge block weight count mismatch"));
                }
                if edges
                    .iter()
                    .any(|&(u, v)| (u + 1) * channels > primal_dim || (v + 1) * channels > primal_dim)
                {
                    return Err(Error::invalid("edge block endpoint out of range"));
                }
            }
            let expected = match &g.fun {
                GroupFun::SquaredResidual { target } => target.len(),
                GroupFun::AbsValue => rows,
                GroupFun::SmoothedKl { q, .. } => q.len(),
            };
            if expected != rows {
                return Err(Error::invalid(format!(
                    "dual block {gi}: functional over {expected} rows but operator has {rows}"
                )));
            }
        }
        Ok(PdSplitting { primal_dim, groups, h })
    }

    pub fn primal_dim(&self) -> usize {
        self.primal_dim
    }

    pub fn dual_dim(&self) -> usize {
        self.groups.iter().map(|g| g.op.rows(self.primal_dim)).sum()
    }

    pub fn h(&self) -> &SeparableTerm<F> {
        &self.h
    }

    pub fn apply(&self, x: &[F], out: &mut [F]) {
        let mut offset = 0;
        for g in &self.groups {
            let rows = g.op.rows(self.primal_dim);
            g.op.apply(x, &mut out[offset..offset + rows]);
            offset += rows;
        }
    }

    pub fn apply_adjoint(&self, u: &[F], out: &mut [F]) {
        out.iter_mut().for_each(|o| *o = F::zero());
        let mut offset = 0;
        for g in &self.groups {
            let rows = g.op.rows(self.primal_dim);
            g.op.adjoint_accumulate(&u[offset..offset + rows], out);
            offset += rows;
        }
    }

    /// Full objective `g(Lambda x) + h(x)`, identical to the splitting
    /// solvers' objective on problems built from the same instance.
    pub fn objective(&self, x: &[F]) -> F {
        let mut mapped = vec![F::zero(); self.dual_dim()];
        self.apply(x, &mut mapped);
        let mut total = self.h.value(x);
        let mut offset = 0;
        for g in &self.groups {
            let rows = g.op.rows(self.primal_dim);
            total += g.fun.value(&mapped[offset..offset + rows]);
            offset += rows;
        }
        total
    }

    fn dual_prox_into(&self, v: &[F], sigma: &[F], out: &mut [F]) -> Result<()> {
        let mut offset = 0;
        for g in &self.groups {
            let rows = g.op.rows(self.primal_dim);
            g.fun.conjugate_prox_into(
                &v[offset..offset + rows],
                &sigma[offset..offset + rows],
                &mut out[offset..offset + rows],
            )?;
            offset += rows;
        }
        Ok(())
    }
}

/// Row/column absolute-sum preconditioners (`alpha = 1`):
/// `tau_j = 1 / sum_i |Lambda_ij|`, `sigma_i = 1 / sum_j |Lambda_ij|`, with
/// zero sums floored at [`PRECOND_SUM_FLOOR`].
pub fn ppd_preconditioners<F: Real>(splitting: &PdSplitting<F>) -> PdPreconditioners<F> {
    let floor = F::cast(PRECOND_SUM_FLOOR);
    let mut row_sums = vec![F::zero(); splitting.dual_dim()];
    let mut offset = 0;
    for g in &splitting.groups {
        let rows = g.op.rows(splitting.primal_dim);
        g.op.row_abs_sums(&mut row_sums[offset..offset + rows]);
        offset += rows;
    }
    let mut col_sums = vec![F::zero(); splitting.primal_dim];
    for g in &splitting.groups {
        g.op.col_abs_sums_accumulate(&mut col_sums);
    }
    PdPreconditioners {
        tau: col_sums.iter().map(|&s| s.max(floor).recip()).collect(),
        sigma: row_sums.iter().map(|&s| s.max(floor).recip()).collect(),
    }
}

/// Power-method estimate of `||sigma^(1/2) Lambda tau^(1/2)||`.
pub fn scaled_operator_norm<F: Real>(
    splitting: &PdSplitting<F>,
    preconds: &PdPreconditioners<F>,
) -> F {
    let sqrt_tau: Vec<F> = preconds.tau.iter().map(|&t| t.sqrt()).collect();
    let sqrt_sigma: Vec<F> = preconds.sigma.iter().map(|&s| s.sqrt()).collect();
    let primal = splitting.primal_dim();
    let dual = splitting.dual_dim();
    let est = smooth::power_method_sqnorm_map(
        primal,
        dual,
        |x, out| {
            let scaled: Vec<F> = x.iter().zip(&sqrt_tau).map(|(&v, &t)| v * t).collect();
            splitting.apply(&scaled, out);
            for (o, &s) in out.iter_mut().zip(&sqrt_sigma) {
                *o *= s;
            }
        },
        |u, out| {
            let scaled: Vec<F> = u.iter().zip(&sqrt_sigma).map(|(&v, &s)| v * s).collect();
            splitting.apply_adjoint(&scaled, out);
            for (o, &t) in out.iter_mut().zip(&sqrt_tau) {
                *o *= t;
            }
        },
        F::cast(1e-12),
        20_000,
    );
    // The raw Rayleigh estimate is a lower bound; the bound check wants the
    // best available estimate, not the safety-inflated one.
    est.raw.max(F::zero()).sqrt()
}

#[derive(Debug, Clone)]
pub struct PpdOutput<F> {
    pub x: Vec<F>,
    pub dual: Vec<F>,
    pub log: ConvergenceLog<F>,
    pub stopped_by_rule: bool,
    pub iterations: u64,
    pub solve_time_s: f64,
    pub checkpoints: Vec<Checkpoint<F>>,
}

/// Runs the preconditioned primal-dual iteration with relaxation 1. The
/// error-injection and domain-policy fields of the config do not apply here
/// and are ignored.
pub fn ppd_solve<F: Real>(splitting: &PdSplitting<F>, config: &SolveConfig<F>) -> Result<PpdOutput<F>> {
    let preconds = ppd_preconditioners(splitting);
    let norm = scaled_operator_norm(splitting, &preconds);
    if !(norm <= F::one() + F::cast(PRECOND_NORM_TOL)) {
        return Err(Error::HypothesisViolation(vec![format!(
            "scaled operator norm ||sigma^(1/2) Lambda tau^(1/2)|| = {norm} exceeds 1"
        )]));
    }
    let primal = splitting.primal_dim();
    let dual = splitting.dual_dim();
    let inv_tau: Vec<F> = preconds.tau.iter().map(|&t| t.recip()).collect();

    let mut x = match &config.x0 {
        Some(v) => {
            if v.len() != primal {
                return Err(Error::invalid(format!("x0 length {} != {primal}", v.len())));
            }
            v.clone()
        }
        None => vec![F::zero(); primal],
    };
    let mut y = vec![F::zero(); dual];
    let mut xbar = x.clone();
    let mut x_prev = x.clone();
    let mut mapped = vec![F::zero(); dual];
    let mut dual_arg = vec![F::zero(); dual];
    let mut adj = vec![F::zero(); primal];
    let mut x_new = vec![F::zero(); primal];

    let mut log = ConvergenceLog::default();
    let residual = |x: &[F], y: &[F]| -> F {
        // Deviation from the primal-dual fixed-point characterization at
        // (x, y) with extrapolation collapsed (xbar = x).
        let mut m = vec![F::zero(); dual];
        splitting.apply(x, &mut m);
        let arg: Vec<F> = y
            .iter()
            .zip(&m)
            .zip(&preconds.sigma)
            .map(|((&yi, &mi), &si)| yi + si * mi)
            .collect();
        let mut y_fix = vec![F::zero(); dual];
        if splitting.dual_prox_into(&arg, &preconds.sigma, &mut y_fix).is_err() {
            return F::infinity();
        }
        let mut a = vec![F::zero(); primal];
        splitting.apply_adjoint(y, &mut a);
        let warg: Vec<F> = x
            .iter()
            .zip(&a)
            .zip(&preconds.tau)
            .map(|((&xi, &ai), &ti)| xi - ti * ai)
            .collect();
        let mut x_fix = vec![F::zero(); primal];
        if splitting.h.prox_into(&warg, &inv_tau, &mut x_fix).is_err() {
            return F::infinity();
        }
        dist_inf(x, &x_fix).max(dist_inf(y, &y_fix))
    };

    log.records.push(LogRecord {
        iter: 0,
        time_s: 0.0,
        objective: splitting.objective(&x),
        rel_evol: F::infinity(),
        max_evol: F::infinity(),
        fp_residual: residual(&x, &y),
    });

    let mut elapsed = 0.0f64;
    let mut stopped_by_rule = false;
    let mut iterations = 0u64;
    let mut pending: Vec<F> = config.checkpoints.clone();
    let mut checkpoints = Vec::new();

    for k in 1..=config.max_iters {
        let t0 = Instant::now();
        splitting.apply(&xbar, &mut mapped);
        dual_arg
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = y[i] + preconds.sigma[i] * mapped[i]);
        splitting.dual_prox_into(&dual_arg, &preconds.sigma, &mut y)?;
        splitting.apply_adjoint(&y, &mut adj);
        let warg: Vec<F> = x
            .iter()
            .zip(&adj)
            .zip(&preconds.tau)
            .map(|((&xi, &ai), &ti)| xi - ti * ai)
            .collect();
        splitting.h.prox_into(&warg, &inv_tau, &mut x_new)?;
        let two = F::cast(2.0);
        xbar.par_iter_mut()
            .enumerate()
            .for_each(|(j, slot)| *slot = two * x_new[j] - x[j]);
        x.copy_from_slice(&x_new);
        elapsed += t0.elapsed().as_secs_f64();
        iterations = k;

        let diff2 = dist2(&x, &x_prev);
        let diff_inf = dist_inf(&x, &x_prev);
        let xnorm = norm2(&x);
        // Undefined at an identically zero iterate; see the splitting solver.
        let rel = if xnorm > F::zero() { diff2 / xnorm } else { F::infinity() };
        let measure = match config.stop {
            StoppingRule::RelEvol(_) => rel,
            StoppingRule::MaxEvol(_) => diff_inf,
            StoppingRule::IterationsOnly => F::infinity(),
        };
        while let Some(&thr) = pending.first() {
            if measure < thr {
                checkpoints.push(Checkpoint {
                    threshold: thr,
                    iter: k,
                    time_s: elapsed,
                    x: x.clone(),
                    objective: splitting.objective(&x),
                });
                pending.remove(0);
            } else {
                break;
            }
        }
        let fired = match config.stop {
            StoppingRule::RelEvol(t) => rel < t,
            StoppingRule::MaxEvol(t) => diff_inf < t,
            StoppingRule::IterationsOnly => false,
        };
        let last = fired || k == config.max_iters;
        if (config.log_every > 0 && k % config.log_every == 0) || last {
            log.records.push(LogRecord {
                iter: k,
                time_s: elapsed,
                objective: splitting.objective(&x),
                rel_evol: rel,
                max_evol: diff_inf,
                fp_residual: residual(&x, &y),
            });
        }
        x_prev.copy_from_slice(&x);
        if fired {
            stopped_by_rule = true;
            break;
        }
    }

    Ok(PpdOutput {
        x,
        dual: y,
        log,
        stopped_by_rule,
        iterations,
        solve_time_s: elapsed,
        checkpoints,
    })
}

/// Splitting for the graph-regularized inverse problem: `Lambda` stacks the
/// dense observation operator and the weighted signed edge differences; `h`
/// is the weighted l1 norm plus positivity.
pub fn build_ppd_splitting_eeg<F: Real>(
    phi: DenseOperator<F>,
    y: Vec<F>,
    graph: &Graph<F>,
    lambda_l1: Vec<F>,
) -> Result<PdSplitting<F>> {
    let v = graph.num_vertices();
    if phi.cols() != v {
        return Err(Error::invalid(format!(
            "observation operator has {} columns for {v} vertices",
            phi.cols()
        )));
    }
    if y.len() != phi.rows() {
        return Err(Error::invalid("observation vector length mismatch"));
    }
    if lambda_l1.len() != v {
        return Err(Error::invalid("per-vertex l1 weight length mismatch"));
    }
    let groups = vec![
        PdGroup {
            op: GroupOp::Dense(phi),
            fun: GroupFun::SquaredResidual { target: y },
        },
        PdGroup {
            op: GroupOp::EdgeDiff {
                edges: graph.edges().to_vec(),
                lambda: graph.tv_weights().to_vec(),
                channels: 1,
            },
            fun: GroupFun::AbsValue,
        },
    ];
    PdSplitting::new(v, groups, SeparableTerm::L1Positive { tau: lambda_l1 })
}

/// Splitting for the label-smoothing problem: identity rows carrying the
/// smoothed KL term plus weighted per-channel edge differences; `h` is the
/// per-vertex simplex indicator.
pub fn build_ppd_splitting_labeling<F: Real>(
    graph: &Graph<F>,
    q: Vec<F>,
    channels: usize,
    beta: F,
) -> Result<PdSplitting<F>> {
    let v = graph.num_vertices();
    if channels == 0 || q.len() != v * channels {
        return Err(Error::invalid("q must hold one simplex row per vertex"));
    }
    for (row, chunk) in q.chunks(channels).enumerate() {
        let sum: F = chunk.iter().copied().sum();
        if (sum - F::one()).abs() > F::cast(1e-9) || chunk.iter().any(|&p| p < F::zero()) {
            return Err(Error::invalid(format!("q row {row} is not on the simplex")));
        }
    }
    let groups = vec![
        PdGroup {
            op: GroupOp::Identity,
            fun: GroupFun::SmoothedKl { q, channels, beta },
        },
        PdGroup {
            op: GroupOp::EdgeDiff {
                edges: graph.edges().to_vec(),
                lambda: graph.tv_weights().to_vec(),
                channels,
            },
            fun: GroupFun::AbsValue,
        },
    ];
    PdSplitting::new(v * channels, groups, SeparableTerm::Simplex { channels })
}
