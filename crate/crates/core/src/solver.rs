//! Preconditioned forward-Douglas-Rachford splitting: problem assembly,
//! hypothesis validation, the main iteration, error injection, and
//! convergence diagnostics.
//!
//! One step of the iteration, for blocks `g_i` on supports `H_i`, smooth term
//! `f` with curvature bound `L`, full-domain term `h`, step operator `Gamma`
//! and split weights `W_i`:
//!
//! ```text
//! p   <- 2 x - Gamma (grad f(x) + b_k)
//! z_i <- z_i + rho (prox_{g_i}^{Gamma^-1 W_i}(p|H_i - z_i) + a_ik - x|H_i)
//! x   <- prox_h^{Gamma^-1}(sum_i W_i z_i) + c_k
//! ```
//!
//! The forward-backward configuration is the same recursion with `h` moved
//! into an extra full-support block and the full-domain resolvent set to the
//! identity; both are assembled by [`assemble_split_problem`].

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{BlockKind, BlockLayout, DiagonalOperator, Graph, SplitWeights};
use crate::prox;
use crate::scalar::{dist2, dist_inf, norm2, norm_inf, Real};
use crate::smooth::SmoothTerm;

/// Absolute slack used when a hard-constraint indicator is *evaluated* in an
/// objective. Iterates of the forward-backward configuration approach
/// feasibility only in the limit, so an exact indicator would report
/// `+infinity` forever on rounding-level violations; structural exactness of
/// the Douglas-Rachford iterates is asserted separately and strictly.
pub const INDICATOR_FEAS_TOL: f64 = 1e-8;

/// Curvature bound `L` of the smooth term: a scalar multiple of the identity
/// or a full diagonal.
#[derive(Debug, Clone)]
pub enum Curvature<F> {
    Scalar(F),
    Diagonal(Vec<F>),
}

impl<F: Real> Curvature<F> {
    /// `||L^{1/2} Gamma L^{1/2}||`, exact for diagonal `L` (`max_j L_j g_j`)
    /// and an upper bound for scalar `L` (`l * max_j g_j`).
    pub fn precond_norm(&self, gamma: &[F]) -> F {
        match self {
            Curvature::Scalar(l) => *l * norm_inf(gamma),
            Curvature::Diagonal(diag) => diag
                .iter()
                .zip(gamma)
                .fold(F::zero(), |m, (&l, &g)| m.max(l * g)),
        }
    }

    fn violations(&self, dim: usize, out: &mut Vec<String>) {
        match self {
            Curvature::Scalar(l) => {
                if !(*l > F::zero()) {
                    out.push(format!("(H1) curvature bound {l} is not strictly positive"));
                }
            }
            Curvature::Diagonal(diag) => {
                if diag.len() != dim {
                    out.push(format!("(H1) curvature diagonal has length {} != {dim}", diag.len()));
                } else if let Some((j, &l)) = diag.iter().enumerate().find(|(_, &l)| !(l > F::zero())) {
                    out.push(format!("(H1) curvature diagonal entry {j} = {l} is not strictly positive"));
                }
            }
        }
    }
}

/// A functional whose prox decouples coordinatewise (or per vertex chunk) in
/// any diagonal metric. Serves as the full-domain term, as the extra block of
/// the forward-backward configuration, and as the primal term of the
/// primal-dual solver.
#[derive(Debug, Clone)]
pub enum SeparableTerm<F> {
    Zero,
    /// `sum_j tau_j |x_j|`.
    L1 { tau: Vec<F> },
    /// `sum_j tau_j |x_j|` plus the nonnegativity indicator.
    L1Positive { tau: Vec<F> },
    /// Indicator of the product of probability simplices over vertex chunks
    /// of the given channel count.
    Simplex { channels: usize },
}

impl<F: Real> SeparableTerm<F> {
    pub fn prox_into(&self, point: &[F], metric: &[F], out: &mut [F]) -> Result<()> {
        match self {
            SeparableTerm::Zero => out.copy_from_slice(point),
            SeparableTerm::L1 { tau } => prox::soft_threshold_into(point, tau, metric, out),
            SeparableTerm::L1Positive { tau } => prox::prox_l1_positive_into(point, tau, metric, out),
            SeparableTerm::Simplex { channels } => {
                let k = *channels;
                for (chunk, (pin, m)) in out
                    .chunks_mut(k)
                    .zip(point.chunks(k).zip(metric.chunks(k)))
                {
                    prox::project_simplex_into(pin, m, chunk)?;
                }
            }
        }
        Ok(())
    }

    /// Functional value at `x`; indicator parts use [`INDICATOR_FEAS_TOL`].
    pub fn value(&self, x: &[F]) -> F {
        let tol = F::cast(INDICATOR_FEAS_TOL);
        match self {
            SeparableTerm::Zero => F::zero(),
            SeparableTerm::L1 { tau } => x.iter().zip(tau).map(|(&v, &t)| t * v.abs()).sum(),
            SeparableTerm::L1Positive { tau } => {
                if x.iter().any(|&v| v < -tol) {
                    return F::infinity();
                }
                x.iter().zip(tau).map(|(&v, &t)| t * v.abs()).sum()
            }
            SeparableTerm::Simplex { channels } => {
                for chunk in x.chunks(*channels) {
                    let sum: F = chunk.iter().copied().sum();
                    if (sum - F::one()).abs() > tol || chunk.iter().any(|&v| v < -tol) {
                        return F::infinity();
                    }
                }
                F::zero()
            }
        }
    }

    /// Largest hard-constraint violation at `x` (0 for unconstrained terms).
    pub fn constraint_violation(&self, x: &[F]) -> F {
        match self {
            SeparableTerm::Zero | SeparableTerm::L1 { .. } => F::zero(),
            SeparableTerm::L1Positive { .. } => {
                x.iter().fold(F::zero(), |m, &v| m.max(-v))
            }
            SeparableTerm::Simplex { channels } => {
                let mut worst = F::zero();
                for chunk in x.chunks(*channels) {
                    let sum: F = chunk.iter().copied().sum();
                    worst = worst.max((sum - F::one()).abs());
                    worst = chunk.iter().fold(worst, |m, &v| m.max(-v));
                }
                worst
            }
        }
    }

    fn violations(&self, dim: usize, out: &mut Vec<String>) {
        match self {
            SeparableTerm::Zero => {}
            SeparableTerm::L1 { tau } | SeparableTerm::L1Positive { tau } => {
                if tau.len() != dim {
                    out.push(format!("separable term weight length {} != {dim}", tau.len()));
                }
                if tau.iter().any(|&t| t < F::zero() || !t.is_finite()) {
                    out.push("separable term has a negative or non-finite weight".into());
                }
            }
            SeparableTerm::Simplex { channels } => {
                if *channels == 0 || dim % channels != 0 {
                    out.push(format!("simplex channels {channels} do not divide dimension {dim}"));
                }
            }
        }
    }
}

/// A maximally monotone block of the splitting, evaluated through its prox on
/// the block's compact coordinates.
#[derive(Debug, Clone)]
pub enum BlockTerm<F> {
    /// `lambda * sum_k |x_{u,k} - x_{v,k}|` on an edge block laid out as the
    /// `channels` coordinates of `u` followed by those of `v`.
    EdgeAbsDiff { lambda: F, channels: usize },
    /// Any separable term restricted to the block support (identity resolvent
    /// when `Zero`).
    Separable(SeparableTerm<F>),
}

impl<F: Real> BlockTerm<F> {
    fn prox_into(&self, point: &[F], metric: &[F], out: &mut [F]) -> Result<()> {
        match self {
            BlockTerm::EdgeAbsDiff { lambda, channels } => {
                let k = *channels;
                debug_assert_eq!(point.len(), 2 * k);
                for c in 0..k {
                    let (pu, pv) = prox::prox_pair_abs_diff(
                        point[c],
                        point[k + c],
                        *lambda,
                        (metric[c], metric[k + c]),
                    );
                    out[c] = pu;
                    out[k + c] = pv;
                }
                Ok(())
            }
            BlockTerm::Separable(term) => term.prox_into(point, metric, out),
        }
    }

    /// Value on the block's compact coordinates.
    fn value(&self, x_compact: &[F]) -> F {
        match self {
            BlockTerm::EdgeAbsDiff { lambda, channels } => {
                let k = *channels;
                let mut tv = F::zero();
                for c in 0..k {
                    tv += (x_compact[c] - x_compact[k + c]).abs();
                }
                *lambda * tv
            }
            BlockTerm::Separable(term) => term.value(x_compact),
        }
    }
}

/// The object the splitting solver consumes: block layout and terms, smooth
/// term with curvature bound, full-domain term, split weights and diagonal
/// step operator.
#[derive(Debug, Clone)]
pub struct SplitProblem<F> {
    layout: BlockLayout,
    blocks: Vec<BlockTerm<F>>,
    smooth: SmoothTerm<F>,
    curvature: Curvature<F>,
    full_term: SeparableTerm<F>,
    weights: SplitWeights<F>,
    gamma: DiagonalOperator<F>,
    // Caches for the iteration.
    block_metrics: Vec<Vec<F>>,
    inv_gamma: Vec<F>,
    incidence: Vec<Vec<(u32, u32)>>,
}

impl<F: Real> SplitProblem<F> {
    pub fn new(
        layout: BlockLayout,
        blocks: Vec<BlockTerm<F>>,
        smooth: SmoothTerm<F>,
        curvature: Curvature<F>,
        full_term: SeparableTerm<F>,
        weights: SplitWeights<F>,
        gamma: DiagonalOperator<F>,
    ) -> Result<Self> {
        let dim = layout.dim();
        if blocks.len() != layout.num_blocks() || weights.num_blocks() != layout.num_blocks() {
            return Err(Error::invalid(format!(
                "layout has {} blocks, got {} terms and {} weights",
                layout.num_blocks(),
                blocks.len(),
                weights.num_blocks()
            )));
        }
        if gamma.support().is_some() || gamma.len() != dim {
            return Err(Error::invalid("gamma must be a full-domain diagonal of the problem dimension"));
        }
        if let Some(d) = smooth.dim() {
            if d != dim {
                return Err(Error::invalid(format!("smooth term dimension {d} != {dim}")));
            }
        }
        for (i, term) in blocks.iter().enumerate() {
            let len = layout.block(i).len();
            match term {
                BlockTerm::EdgeAbsDiff { channels, .. } => {
                    if len != 2 * channels {
                        return Err(Error::invalid(format!(
                            "edge block {i} has {len} coordinates, expected {}",
                            2 * channels
                        )));
                    }
                }
                BlockTerm::Separable(SeparableTerm::Simplex { channels }) => {
                    if *channels == 0 || len % channels != 0 {
                        return Err(Error::invalid(format!(
                            "simplex block {i} has {len} coordinates, not a multiple of {channels}"
                        )));
                    }
                }
                BlockTerm::Separable(SeparableTerm::L1 { tau })
                | BlockTerm::Separable(SeparableTerm::L1Positive { tau }) => {
                    if tau.len() != len {
                        return Err(Error::invalid(format!(
                            "block {i} weight length {} != {len}",
                            tau.len()
                        )));
                    }
                }
                BlockTerm::Separable(SeparableTerm::Zero) => {}
            }
        }
        layout.validate_coverage()?;

        // Gamma^-1 W_i restricted to each block, the metric of the block
        // prox. Compact storage requires each weight support to be exactly
        // its block; nonpositive values remain a validation concern.
        let gamma_vals = gamma.values();
        let mut block_metrics = Vec::with_capacity(layout.num_blocks());
        for i in 0..layout.num_blocks() {
            let coords = layout.block(i);
            let w = weights.block(i);
            if w.support().map(|s| s != coords).unwrap_or(true) {
                return Err(Error::invalid(format!(
                    "weight support of block {i} does not match its layout block"
                )));
            }
            let metric = coords
                .iter()
                .zip(w.values())
                .map(|(&j, &wv)| wv / gamma_vals[j])
                .collect();
            block_metrics.push(metric);
        }
        let inv_gamma = gamma_vals.iter().map(|&g| g.recip()).collect();

        // Fixed aggregation order: for every coordinate, the covering blocks
        // in increasing block index. Summation order is then independent of
        // the thread count.
        let mut incidence = vec![Vec::new(); dim];
        for i in 0..layout.num_blocks() {
            for (off, &j) in layout.block(i).iter().enumerate() {
                incidence[j].push((i as u32, off as u32));
            }
        }

        Ok(SplitProblem {
            layout,
            blocks,
            smooth,
            curvature,
            full_term,
            weights,
            gamma,
            block_metrics,
            inv_gamma,
            incidence,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn smooth(&self) -> &SmoothTerm<F> {
        &self.smooth
    }

    pub fn curvature(&self) -> &Curvature<F> {
        &self.curvature
    }

    pub fn full_term(&self) -> &SeparableTerm<F> {
        &self.full_term
    }

    pub fn weights(&self) -> &SplitWeights<F> {
        &self.weights
    }

    pub fn gamma(&self) -> &DiagonalOperator<F> {
        &self.gamma
    }

    pub fn blocks(&self) -> &[BlockTerm<F>] {
        &self.blocks
    }

    /// `||L^{1/2} Gamma L^{1/2}||` for this problem.
    pub fn precond_norm(&self) -> F {
        self.curvature.precond_norm(self.gamma.values())
    }

    /// Largest admissible relaxation, `2 - precond_norm / 2`.
    pub fn relaxation_bound(&self) -> F {
        F::cast(2.0) - F::cast(0.5) * self.precond_norm()
    }

    /// `min(1, 0.99 * relaxation_bound)`.
    pub fn default_relaxation(&self) -> F {
        F::one().min(F::cast(0.99) * self.relaxation_bound())
    }

    /// All hypothesis violations, empty when the problem is admissible.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        self.curvature.violations(self.dim(), &mut v);
        let norm = self.precond_norm();
        if !(norm < F::cast(2.0)) {
            v.push(format!("(P1)(i) ||L^(1/2) Gamma L^(1/2)|| = {norm} is not < 2"));
        }
        let report = crate::graph::validate_split_weights(&self.weights, &self.layout);
        if !report.pass() {
            v.push(report.describe());
        }
        self.full_term.violations(self.dim(), &mut v);
        v
    }

    /// Validates the hypotheses and the relaxation, returning the relaxation
    /// to use. Called by [`solve`] before iteration 0.
    pub fn validated_relaxation(&self, rho: Option<F>) -> Result<F> {
        let mut violations = self.validate();
        let bound = self.relaxation_bound();
        let rho = rho.unwrap_or_else(|| self.default_relaxation());
        if !(rho > F::zero() && rho < bound) {
            violations.push(format!(
                "relaxation rho = {rho} outside the admissible range ]0, {bound}["
            ));
        }
        if violations.is_empty() {
            Ok(rho)
        } else {
            Err(Error::HypothesisViolation(violations))
        }
    }

    /// Full objective value at `x`, including indicator terms.
    pub fn objective(&self, x: &[F]) -> F {
        let mut total = self.smooth.value(x);
        let mut compact: Vec<F> = Vec::new();
        for (i, term) in self.blocks.iter().enumerate() {
            let coords = self.layout.block(i);
            compact.clear();
            compact.extend(coords.iter().map(|&j| x[j]));
            total += term.value(&compact);
        }
        total + self.full_term.value(x)
    }
}

/// Iteration state: per-block auxiliaries `z_i` stored compactly on their
/// supports, the primary iterate `x`, and the iteration counter. The primary
/// iterate always equals the full-domain resolvent of the weighted sum of the
/// auxiliaries (plus any injected error).
#[derive(Debug, Clone)]
pub struct SolverState<F> {
    z: Vec<Vec<F>>,
    x: Vec<F>,
    iter: u64,
}

impl<F: Real> SolverState<F> {
    /// Starts from `z_i = x0` restricted to each block (`x0 = 0` by default)
    /// and applies the full-domain resolvent once to obtain `x`.
    pub fn init(problem: &SplitProblem<F>, x0: Option<&[F]>) -> Result<Self> {
        let dim = problem.dim();
        let x0 = match x0 {
            Some(v) => {
                if v.len() != dim {
                    return Err(Error::invalid(format!("x0 length {} != {dim}", v.len())));
                }
                v.to_vec()
            }
            None => vec![F::zero(); dim],
        };
        let z: Vec<Vec<F>> = (0..problem.layout.num_blocks())
            .map(|i| problem.layout.block(i).iter().map(|&j| x0[j]).collect())
            .collect();
        let mut state = SolverState { z, x: vec![F::zero(); dim], iter: 0 };
        state.refresh_x(problem, None)?;
        Ok(state)
    }

    fn refresh_x(&mut self, problem: &SplitProblem<F>, error: Option<&[F]>) -> Result<()> {
        let agg = aggregate(problem, &self.z);
        problem
            .full_term
            .prox_into(&agg, &problem.inv_gamma, &mut self.x)?;
        if let Some(c) = error {
            for (xj, &cj) in self.x.iter_mut().zip(c) {
                *xj += cj;
            }
        }
        Ok(())
    }

    pub fn x(&self) -> &[F] {
        &self.x
    }

    pub fn z(&self) -> &[Vec<F>] {
        &self.z
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }
}

/// `sum_i W_i z_i`, accumulated per coordinate over the covering blocks in
/// fixed block order (bit-deterministic at any parallel width).
fn aggregate<F: Real>(problem: &SplitProblem<F>, z: &[Vec<F>]) -> Vec<F> {
    let mut agg = vec![F::zero(); problem.dim()];
    agg.par_iter_mut().enumerate().for_each(|(j, slot)| {
        let mut acc = F::zero();
        for &(i, off) in &problem.incidence[j] {
            acc += problem.weights.values(i as usize)[off as usize] * z[i as usize][off as usize];
        }
        *slot = acc;
    });
    agg
}

/// What to do when the smooth gradient is evaluated outside its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    /// Abort the step with a diagnostic (default).
    #[default]
    Abort,
    /// Keep iterating with the extended formula, counting the events. The
    /// forward-backward configuration can wander outside the KL domain early
    /// on; this mode lets a benchmark observe that instead of dying.
    Extend,
}

/// Per-iteration additive perturbations of the three oracle calls.
#[derive(Debug, Clone, Default)]
pub struct StepPerturbations<F> {
    /// Added to the gradient before the forward step (`b_k`).
    pub gradient: Option<Vec<F>>,
    /// Added to the primary iterate after the full-domain resolvent (`c_k`).
    pub full_term: Option<Vec<F>>,
    /// Added to each block resolvent output (`a_{i,k}`, compact per block).
    pub blocks: Option<Vec<Vec<F>>>,
}

/// Outcome details of one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// First coordinate where the gradient left its domain, if any.
    pub domain_violation: Option<usize>,
}

struct Workspace<F> {
    grad: Vec<F>,
    forward: Vec<F>,
    block_in: Vec<Vec<F>>,
    block_out: Vec<Vec<F>>,
}

impl<F: Real> Workspace<F> {
    fn new(problem: &SplitProblem<F>) -> Self {
        let dim = problem.dim();
        let shapes: Vec<Vec<F>> = (0..problem.layout.num_blocks())
            .map(|i| vec![F::zero(); problem.layout.block(i).len()])
            .collect();
        Workspace {
            grad: vec![F::zero(); dim],
            forward: vec![F::zero(); dim],
            block_in: shapes.clone(),
            block_out: shapes,
        }
    }
}

/// One iteration of the splitting recursion. Allocates scratch buffers; the
/// driver loop in [`solve`] reuses a workspace instead.
pub fn pfdr_step<F: Real>(
    state: &mut SolverState<F>,
    problem: &SplitProblem<F>,
    rho: F,
    perturbations: Option<&StepPerturbations<F>>,
    policy: DomainPolicy,
) -> Result<StepInfo> {
    let mut ws = Workspace::new(problem);
    pfdr_step_ws(state, problem, rho, perturbations, policy, &mut ws)
}

fn pfdr_step_ws<F: Real>(
    state: &mut SolverState<F>,
    problem: &SplitProblem<F>,
    rho: F,
    perturbations: Option<&StepPerturbations<F>>,
    policy: DomainPolicy,
    ws: &mut Workspace<F>,
) -> Result<StepInfo> {
    let extend = policy == DomainPolicy::Extend;
    let violation = problem
        .smooth
        .gradient_into(&state.x, &mut ws.grad, extend)?;
    if let Some(b) = perturbations.and_then(|p| p.gradient.as_deref()) {
        for (g, &bj) in ws.grad.iter_mut().zip(b) {
            *g += bj;
        }
    }
    let gamma = problem.gamma.values();
    let two = F::cast(2.0);
    ws.forward
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, slot)| *slot = two * state.x[j] - gamma[j] * ws.grad[j]);

    let forward = &ws.forward;
    let x = &state.x;
    let block_errors = perturbations.and_then(|p| p.blocks.as_deref());
    let results: Result<Vec<()>> = state
        .z
        .par_iter_mut()
        .zip(ws.block_in.par_iter_mut().zip(ws.block_out.par_iter_mut()))
        .enumerate()
        .map(|(i, (zi, (tin, tout)))| {
            let coords = problem.layout.block(i);
            for (slot, (&j, &zv)) in tin.iter_mut().zip(coords.iter().zip(zi.iter())) {
                *slot = forward[j] - zv;
            }
            problem.blocks[i].prox_into(tin, &problem.block_metrics[i], tout)?;
            if let Some(errs) = block_errors {
                for (o, &e) in tout.iter_mut().zip(&errs[i]) {
                    *o += e;
                }
            }
            for ((zv, &o), &j) in zi.iter_mut().zip(tout.iter()).zip(coords) {
                *zv += rho * (o - x[j]);
            }
            Ok(())
        })
        .collect();
    results?;

    state.refresh_x(problem, perturbations.and_then(|p| p.full_term.as_deref()))?;
    state.iter += 1;
    Ok(StepInfo { domain_violation: violation })
}

/// Deviation from the fixed-point characterization: the max over blocks of
/// `||x|H_i - prox_i(p|H_i - z_i)||_inf` together with
/// `||x - prox_h(sum W_i z_i)||_inf`. Zero exactly at solutions.
pub fn fixed_point_residual<F: Real>(state: &SolverState<F>, problem: &SplitProblem<F>) -> F {
    let dim = problem.dim();
    let mut grad = vec![F::zero(); dim];
    // Diagnostic only: evaluate the extended formula off-domain.
    let _ = problem.smooth.gradient_into(&state.x, &mut grad, true);
    let gamma = problem.gamma.values();
    let two = F::cast(2.0);
    let forward: Vec<F> = (0..dim)
        .map(|j| two * state.x[j] - gamma[j] * grad[j])
        .collect();
    let mut worst = F::zero();
    for i in 0..problem.layout.num_blocks() {
        let coords = problem.layout.block(i);
        let tin: Vec<F> = coords
            .iter()
            .zip(&state.z[i])
            .map(|(&j, &zv)| forward[j] - zv)
            .collect();
        let mut tout = vec![F::zero(); tin.len()];
        if problem.blocks[i]
            .prox_into(&tin, &problem.block_metrics[i], &mut tout)
            .is_err()
        {
            return F::infinity();
        }
        for (&j, &o) in coords.iter().zip(&tout) {
            worst = worst.max((state.x[j] - o).abs());
        }
    }
    let agg = aggregate(problem, &state.z);
    let mut resolved = vec![F::zero(); dim];
    if problem
        .full_term
        .prox_into(&agg, &problem.inv_gamma, &mut resolved)
        .is_err()
    {
        return F::infinity();
    }
    worst.max(dist_inf(&state.x, &resolved))
}

/// Distance of the auxiliaries to a reference in the `Gamma^-1 W` metric:
/// `sqrt(sum_i sum_j (w_ij / gamma_j) (z_ij - zref_ij)^2)`. Nonincreasing
/// along error-free runs (Fejer monotonicity of the averaged iteration).
pub fn fejer_distance<F: Real>(state: &SolverState<F>, z_ref: &[Vec<F>], problem: &SplitProblem<F>) -> F {
    let mut total = F::zero();
    for i in 0..problem.layout.num_blocks() {
        for ((&zv, &rv), &m) in state.z[i]
            .iter()
            .zip(&z_ref[i])
            .zip(&problem.block_metrics[i])
        {
            let d = zv - rv;
            total += m * d * d;
        }
    }
    total.sqrt()
}

/// Decaying error envelope `magnitude / k^decay` (iteration count 1-based).
#[derive(Debug, Clone, Copy)]
pub struct ErrorEnvelope<F> {
    pub magnitude: F,
    pub decay: F,
}

impl<F: Real> ErrorEnvelope<F> {
    pub fn at(&self, k: u64) -> F {
        self.magnitude / F::cast(k as f64).powf(self.decay)
    }

    /// Whether the envelope satisfies the summability condition the
    /// convergence theorem requires for bounded relaxations.
    pub fn summable(&self) -> bool {
        self.decay > F::one()
    }
}

/// Seeded perturbation generators for the three oracle channels. Each enabled
/// channel draws a uniformly random direction and scales it to the envelope's
/// Euclidean norm.
#[derive(Debug, Clone)]
pub struct ErrorInjection<F> {
    pub seed: u64,
    pub gradient: Option<ErrorEnvelope<F>>,
    pub full_term: Option<ErrorEnvelope<F>>,
    pub blocks: Option<ErrorEnvelope<F>>,
}

impl<F: Real> ErrorInjection<F> {
    /// Same `magnitude / k^decay` envelope on all three channels.
    pub fn uniform(seed: u64, magnitude: F, decay: F) -> Self {
        let env = ErrorEnvelope { magnitude, decay };
        ErrorInjection {
            seed,
            gradient: Some(env),
            full_term: Some(env),
            blocks: Some(env),
        }
    }

    fn draw(&self, rng: &mut ChaCha20Rng, k: u64, problem: &SplitProblem<F>) -> StepPerturbations<F> {
        let dim = problem.dim();
        let mut draw_vec = |len: usize, magnitude: F| -> Vec<F> {
            let mut v: Vec<F> = (0..len).map(|_| F::cast(rng.gen_range(-1.0..1.0))).collect();
            let n = norm2(&v);
            if n > F::zero() {
                let scale = magnitude / n;
                v.iter_mut().for_each(|x| *x *= scale);
            }
            v
        };
        let gradient = self.gradient.map(|env| draw_vec(dim, env.at(k)));
        let full_term = self.full_term.map(|env| draw_vec(dim, env.at(k)));
        let blocks = self.blocks.map(|env| {
            // The whole per-block family shares the envelope magnitude.
            let mag = env.at(k);
            (0..problem.layout().num_blocks())
                .map(|i| draw_vec(problem.layout().block(i).len(), mag))
                .collect()
        });
        StepPerturbations { gradient, full_term, blocks }
    }
}

/// When to stop iterating (an iteration cap always applies on top).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule<F> {
    /// `||x_new - x_old||_2 / ||x_new||_2 < threshold`.
    RelEvol(F),
    /// `||x_new - x_old||_inf < threshold`.
    MaxEvol(F),
    /// Run to the iteration cap.
    IterationsOnly,
}

#[derive(Debug, Clone)]
pub struct SolveConfig<F> {
    /// Relaxation; `None` picks [`SplitProblem::default_relaxation`].
    pub rho: Option<F>,
    pub stop: StoppingRule<F>,
    pub max_iters: u64,
    /// Log every n-th iteration (0 = first and last only).
    pub log_every: u64,
    pub errors: Option<ErrorInjection<F>>,
    pub domain_policy: DomainPolicy,
    pub x0: Option<Vec<F>>,
    /// Extra thresholds of the stopping measure at which to snapshot the
    /// iterate (loosest first); used by the benchmark driver.
    pub checkpoints: Vec<F>,
}

impl<F: Real> SolveConfig<F> {
    pub fn new(stop: StoppingRule<F>, max_iters: u64) -> Self {
        SolveConfig {
            rho: None,
            stop,
            max_iters,
            log_every: 0,
            errors: None,
            domain_policy: DomainPolicy::Abort,
            x0: None,
            checkpoints: Vec::new(),
        }
    }
}

/// One per-iteration record of a convergence log.
#[derive(Debug, Clone, Copy)]
pub struct LogRecord<F> {
    pub iter: u64,
    pub time_s: f64,
    pub objective: F,
    pub rel_evol: F,
    pub max_evol: F,
    pub fp_residual: F,
}

/// Per-iteration solve history; serializes to the
/// `iter,time_s,objective,rel_evol,max_evol,fp_residual` CSV schema.
#[derive(Debug, Clone)]
pub struct ConvergenceLog<F> {
    pub records: Vec<LogRecord<F>>,
}

impl<F> Default for ConvergenceLog<F> {
    fn default() -> Self {
        ConvergenceLog { records: Vec::new() }
    }
}

impl<F: Real> ConvergenceLog<F> {
    /// Writes the CSV; with a reference value an `F_minus_Finf` column is
    /// appended.
    pub fn write_csv(&self, mut w: impl Write, f_inf: Option<F>) -> std::io::Result<()> {
        match f_inf {
            None => writeln!(w, "iter,time_s,objective,rel_evol,max_evol,fp_residual")?,
            Some(_) => writeln!(w, "iter,time_s,objective,rel_evol,max_evol,fp_residual,F_minus_Finf")?,
        }
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{}",
                r.iter, r.time_s, r.objective, r.rel_evol, r.max_evol, r.fp_residual
            )?;
            match f_inf {
                None => writeln!(w)?,
                Some(f) => writeln!(w, ",{}", r.objective - f)?,
            }
        }
        Ok(())
    }
}

/// Iterate snapshot taken when a checkpoint threshold was first crossed.
#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub threshold: F,
    pub iter: u64,
    pub time_s: f64,
    pub x: Vec<F>,
    pub objective: F,
}

#[derive(Debug, Clone)]
pub struct SolveOutput<F> {
    pub x: Vec<F>,
    pub state: SolverState<F>,
    pub log: ConvergenceLog<F>,
    /// Whether the stopping rule (rather than the iteration cap) fired.
    pub stopped_by_rule: bool,
    pub iterations: u64,
    /// Wall time spent inside iterations, excluding logging and I/O.
    pub solve_time_s: f64,
    pub checkpoints: Vec<Checkpoint<F>>,
    /// Iterations whose gradient evaluation left the domain (Extend policy).
    pub domain_violations: u64,
}

/// Runs the splitting iteration until the stopping rule or the iteration cap
/// fires. Refuses to start on any hypothesis violation, listing all of them.
pub fn solve<F: Real>(problem: &SplitProblem<F>, config: &SolveConfig<F>) -> Result<SolveOutput<F>> {
    let rho = problem.validated_relaxation(config.rho)?;
    let mut state = SolverState::init(problem, config.x0.as_deref())?;
    let mut ws = Workspace::new(problem);
    let mut rng = ChaCha20Rng::seed_from_u64(config.errors.as_ref().map(|e| e.seed).unwrap_or(0));

    let mut log = ConvergenceLog::default();
    let mut elapsed = 0.0f64;
    let mut x_prev = state.x.clone();
    let mut pending: Vec<F> = config.checkpoints.clone();
    let mut checkpoints = Vec::new();
    let mut domain_violations = 0u64;

    log.records.push(LogRecord {
        iter: 0,
        time_s: 0.0,
        objective: problem.objective(&state.x),
        rel_evol: F::infinity(),
        max_evol: F::infinity(),
        fp_residual: fixed_point_residual(&state, problem),
    });

    let mut stopped_by_rule = false;
    let mut iterations = 0u64;
    for k in 1..=config.max_iters {
        let perturb = config
            .errors
            .as_ref()
            .map(|inj| inj.draw(&mut rng, k, problem));
        let t0 = Instant::now();
        let info = pfdr_step_ws(&mut state, problem, rho, perturb.as_ref(), config.domain_policy, &mut ws)?;
        elapsed += t0.elapsed().as_secs_f64();
        iterations = k;
        if info.domain_violation.is_some() {
            domain_violations += 1;
        }

        let diff2 = dist2(&state.x, &x_prev);
        let diff_inf = dist_inf(&state.x, &x_prev);
        let xnorm = norm2(&state.x);
        // The relative measure is undefined at an identically zero iterate;
        // infinity keeps the rule from firing while a solver warms up at 0.
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
                    x: state.x.clone(),
                    objective: problem.objective(&state.x),
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
                objective: problem.objective(&state.x),
                rel_evol: rel,
                max_evol: diff_inf,
                fp_residual: fixed_point_residual(&state, problem),
            });
        }
        x_prev.copy_from_slice(&state.x);
        if fired {
            stopped_by_rule = true;
            break;
        }
    }

    Ok(SolveOutput {
        x: state.x.clone(),
        state,
        log,
        stopped_by_rule,
        iterations,
        solve_time_s: elapsed,
        checkpoints,
        domain_violations,
    })
}

/// How the full-domain functional `h` enters the splitting.
#[derive(Debug, Clone, Copy)]
pub enum SplitMode<F> {
    /// `h` handled by the full-domain resolvent, applied to every iterate.
    Pfdr,
    /// `h` moved into an extra full-support block carrying `reserve` of the
    /// split weight (generalized forward-backward; one more auxiliary).
    Pgfb { reserve: F },
}

/// Default split-weight reserve of the extra forward-backward block.
pub const PGFB_RESERVE_DEFAULT: f64 = 0.2;

/// Assembles a graph-structured split problem: one absolute-difference block
/// per positively weighted edge, `smooth`/`curvature` as the forward term,
/// `gamma` as the step operator, and `h` placed according to `mode`.
pub fn assemble_split_problem<F: Real>(
    graph: &Graph<F>,
    channels: usize,
    smooth: SmoothTerm<F>,
    curvature: Curvature<F>,
    gamma: DiagonalOperator<F>,
    h: SeparableTerm<F>,
    mode: SplitMode<F>,
) -> Result<SplitProblem<F>> {
    let h_is_zero = matches!(h, SeparableTerm::Zero);
    let (extra, reserve) = match mode {
        SplitMode::Pfdr => (false, F::zero()),
        SplitMode::Pgfb { reserve } => {
            if h_is_zero {
                (false, F::zero())
            } else if reserve <= F::zero() {
                return Err(Error::LayoutInfeasible(
                    "forward-backward mode with a nontrivial full-domain term needs reserve > 0".into(),
                ));
            } else {
                (true, reserve)
            }
        }
    };
    let layout = BlockLayout::for_graph(graph, channels, extra);
    let mut blocks = Vec::with_capacity(layout.num_blocks());
    for i in 0..layout.num_blocks() {
        blocks.push(match layout.kind(i) {
            BlockKind::Edge(e) => BlockTerm::EdgeAbsDiff {
                lambda: graph.tv_weights()[e],
                channels,
            },
            BlockKind::Coverage => BlockTerm::Separable(SeparableTerm::Zero),
            BlockKind::ExtraFull => BlockTerm::Separable(h.clone()),
        });
    }
    let weights = crate::graph::compute_weight_heuristic(graph, &layout, reserve)?;
    let full_term = match mode {
        SplitMode::Pfdr => h,
        SplitMode::Pgfb { .. } => SeparableTerm::Zero,
    };
    SplitProblem::new(layout, blocks, smooth, curvature, full_term, weights, gamma)
}
