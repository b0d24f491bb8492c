//! The two experimental problem families, synthetic instance generation with
//! planted ground truth, the TV-penalty line search, and the on-disk instance
//! bundle format.
//!
//! Family one is a graph-regularized nonnegative sparse inverse problem
//! (dense observation operator, TV + weighted l1 + positivity). Family two is
//! probabilistic label smoothing on a graph (smoothed KL data term, TV,
//! per-vertex simplex constraint).

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DiagonalOperator, Graph};
use crate::metrics;
use crate::scalar::Real;
use crate::smooth::{self, DenseOperator, SmoothTerm};
use crate::solver::{
    assemble_split_problem, solve, Curvature, SeparableTerm, SolveConfig, SplitMode, SplitProblem,
};

/// Default step-operator scaling: `gamma = 2 eta / L` coordinatewise, so the
/// preconditioned curvature norm is exactly `2 eta`.
pub const ETA_DEFAULT: f64 = 0.9;

/// Relative floor applied to near-zero diagonal curvature entries before
/// inversion (zero observation columns would otherwise break strict
/// positivity of the step operator).
pub const JACOBI_DIAG_FLOOR: f64 = 1e-12;

/// Default smoothing of the labeling data term.
pub const BETA_DEFAULT: f64 = 0.1;

/// Default neighbour count for point-cloud graphs.
pub const KNN_DEFAULT: usize = 10;

/// Graph-regularized inverse problem instance.
#[derive(Debug, Clone)]
pub struct EegInstance<F> {
    /// Graph with the per-edge TV weights.
    pub graph: Graph<F>,
    pub phi: DenseOperator<F>,
    pub y: Vec<F>,
    /// Per-vertex l1 weights.
    pub lambda_l1: Vec<F>,
    /// Planted signal (synthetic instances).
    pub ground_truth: Option<Vec<F>>,
}

impl<F: Real> EegInstance<F> {
    pub fn validate(&self) -> Result<()> {
        let v = self.graph.num_vertices();
        if self.phi.cols() != v {
            return Err(Error::invalid(format!(
                "phi has {} columns for {v} vertices",
                self.phi.cols()
            )));
        }
        if self.y.len() != self.phi.rows() {
            return Err(Error::invalid("y length does not match phi rows"));
        }
        if self.lambda_l1.len() != v {
            return Err(Error::invalid("lambda_l1 length does not match vertex count"));
        }
        if self.lambda_l1.iter().any(|&t| t < F::zero() || !t.is_finite()) {
            return Err(Error::invalid("lambda_l1 must be finite and nonnegative"));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != v {
                return Err(Error::invalid("ground truth length mismatch"));
            }
        }
        Ok(())
    }

    pub fn with_constant_tv(&self, lambda: F) -> Self {
        let mut out = self.clone();
        out.graph = self.graph.with_constant_tv_weight(lambda);
        out
    }

    pub fn with_constant_l1(&self, tau: F) -> Self {
        let mut out = self.clone();
        out.lambda_l1 = vec![tau; self.graph.num_vertices()];
        out
    }
}

/// Probabilistic labeling instance.
#[derive(Debug, Clone)]
pub struct LabelingInstance<F> {
    pub graph: Graph<F>,
    /// Flattened per-vertex simplex rows, `channels` entries each.
    pub q: Vec<F>,
    pub channels: usize,
    pub beta: F,
    pub ground_truth: Option<Vec<usize>>,
    /// Scoring subset for the penalty line search.
    pub train_subset: Vec<usize>,
}

impl<F: Real> LabelingInstance<F> {
    pub fn validate(&self) -> Result<()> {
        let v = self.graph.num_vertices();
        if self.channels < 2 {
            return Err(Error::invalid("labeling needs at least 2 channels"));
        }
        if self.q.len() != v * self.channels {
            return Err(Error::invalid("q must hold one row per vertex"));
        }
        for (row, chunk) in self.q.chunks(self.channels).enumerate() {
            let sum: F = chunk.iter().copied().sum();
            if (sum - F::one()).abs() > F::cast(1e-9) || chunk.iter().any(|&p| p < F::zero()) {
                return Err(Error::invalid(format!("q row {row} is not on the simplex")));
            }
        }
        if !(self.beta > F::zero() && self.beta < F::one()) {
            return Err(Error::invalid(format!("beta {} outside (0, 1)", self.beta)));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != v || gt.iter().any(|&l| l >= self.channels) {
                return Err(Error::invalid("ground-truth labels out of range"));
            }
        }
        if self.train_subset.iter().any(|&t| t >= v) {
            return Err(Error::invalid("training subset vertex out of range"));
        }
        Ok(())
    }

    pub fn with_constant_tv(&self, lambda: F) -> Self {
        let mut out = self.clone();
        out.graph = self.graph.with_constant_tv_weight(lambda);
        out
    }
}

/// How the step operator of the inverse-problem family is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaMode {
    /// Scalar step `2 eta / l` with `l` the power-method bound on the squared
    /// operator norm; the curvature condition is then verifiable. Default.
    #[default]
    Strict,
    /// Per-coordinate step from the diagonal approximation of the Hessian
    /// (floored); the curvature condition is guaranteed only when the true
    /// Hessian is diagonal-dominated by it.
    Jacobi,
}

/// Builds the split problem of the inverse-problem family.
pub fn build_eeg_problem<F: Real>(
    instance: &EegInstance<F>,
    mode: SplitMode<F>,
    gamma_mode: GammaMode,
    eta: F,
) -> Result<SplitProblem<F>> {
    instance.validate()?;
    if !(eta > F::zero() && eta < F::one()) {
        return Err(Error::invalid(format!("eta {eta} outside (0, 1)")));
    }
    let dim = instance.graph.num_vertices();
    let two_eta = F::cast(2.0) * eta;
    let (curvature, gamma) = match gamma_mode {
        GammaMode::Strict => {
            let l = smooth::power_method_sqnorm(
                &instance.phi,
                F::cast(smooth::POWER_TOL_DEFAULT),
                smooth::POWER_MAX_ITERS_DEFAULT,
            )
            .value;
            let l = l.max(F::cast(1e-12));
            (Curvature::Scalar(l), vec![two_eta / l; dim])
        }
        GammaMode::Jacobi => {
            let mut diag = smooth::jacobi_diag(&instance.phi);
            let top = diag.iter().cloned().fold(F::zero(), F::max).max(F::cast(1e-12));
            let floor = F::cast(JACOBI_DIAG_FLOOR) * top;
            for d in diag.iter_mut() {
                *d = d.max(floor);
            }
            let gamma = diag.iter().map(|&d| two_eta / d).collect();
            (Curvature::Diagonal(diag), gamma)
        }
    };
    let smooth_term = SmoothTerm::LeastSquares {
        phi: instance.phi.clone(),
        y: instance.y.clone(),
    };
    let h = SeparableTerm::L1Positive {
        tau: instance.lambda_l1.clone(),
    };
    assemble_split_problem(
        &instance.graph,
        1,
        smooth_term,
        curvature,
        DiagonalOperator::strictly_positive(gamma)?,
        h,
        mode,
    )
}

/// Builds the split problem of the labeling family. The curvature bound is
/// coordinatewise, so the step operator is always diagonal `2 eta / L`.
pub fn build_labeling_problem<F: Real>(
    instance: &LabelingInstance<F>,
    mode: SplitMode<F>,
    eta: F,
) -> Result<SplitProblem<F>> {
    instance.validate()?;
    if !(eta > F::zero() && eta < F::one()) {
        return Err(Error::invalid(format!("eta {eta} outside (0, 1)")));
    }
    let curvature = smooth::kl_curvature_diag(&instance.q, instance.channels, instance.beta)?;
    let two_eta = F::cast(2.0) * eta;
    let gamma: Vec<F> = curvature.iter().map(|&l| two_eta / l).collect();
    let smooth_term = SmoothTerm::SmoothedKl {
        q: instance.q.clone(),
        channels: instance.channels,
        beta: instance.beta,
    };
    assemble_split_problem(
        &instance.graph,
        instance.channels,
        smooth_term,
        Curvature::Diagonal(curvature),
        DiagonalOperator::strictly_positive(gamma)?,
        SeparableTerm::Simplex {
            channels: instance.channels,
        },
        mode,
    )
}

/// Synthetic inverse-problem instance: chain graph, piecewise-constant
/// nonnegative planted signal on a contiguous support, seeded uniform
/// observation operator, additive noise. Pure function of the seed.
pub fn synth_eeg<F: Real>(
    seed: u64,
    num_vertices: usize,
    num_observations: usize,
    support_size: usize,
    noise_level: f64,
) -> Result<EegInstance<F>> {
    if num_vertices == 0 || num_observations == 0 {
        return Err(Error::invalid("need at least one vertex and one observation"));
    }
    if support_size > num_vertices {
        return Err(Error::invalid("support size exceeds vertex count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xhat = vec![F::zero(); num_vertices];
    if support_size > 0 {
        let start = rng.gen_range(0..=num_vertices - support_size);
        let level_a = rng.gen_range(0.5..2.0);
        let level_b = rng.gen_range(0.5..2.0);
        for (offset, slot) in xhat[start..start + support_size].iter_mut().enumerate() {
            *slot = F::cast(if offset < support_size / 2 { level_a } else { level_b });
        }
    }
    let scale = (3.0 / num_observations as f64).sqrt();
    let data: Vec<F> = (0..num_observations * num_vertices)
        .map(|_| F::cast(rng.gen_range(-1.0..1.0) * scale))
        .collect();
    let phi = DenseOperator::new(num_observations, num_vertices, data)?;
    let mut y = vec![F::zero(); num_observations];
    phi.apply(&xhat, &mut y);
    for slot in y.iter_mut() {
        *slot += F::cast(noise_level * rng.gen_range(-1.0..1.0));
    }
    Ok(EegInstance {
        graph: Graph::chain(num_vertices, F::cast(0.2)),
        phi,
        y,
        lambda_l1: vec![F::cast(0.1); num_vertices],
        ground_truth: Some(xhat),
    })
}

/// Largest divisor of `n` not exceeding its square root.
fn grid_rows(n: usize) -> usize {
    let mut best = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            best = d;
        }
        d += 1;
    }
    best
}

/// Synthetic labeling instance: near-square grid graph, contiguous label
/// bands, per-vertex label flips, predictions smoothed into the simplex
/// interior with a seeded per-vertex mixing weight, and a training subset of
/// seeded picks plus the highest-entropy vertices per class.
pub fn synth_labeling<F: Real>(
    seed: u64,
    num_vertices: usize,
    channels: usize,
    flip_probability: f64,
) -> Result<LabelingInstance<F>> {
    if channels < 2 {
        return Err(Error::invalid("need at least 2 labels"));
    }
    if num_vertices == 0 {
        return Err(Error::invalid("need at least one vertex"));
    }
    if !(0.0..=1.0).contains(&flip_probability) {
        return Err(Error::invalid("flip probability outside [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = grid_rows(num_vertices);
    let graph = Graph::grid(rows, num_vertices / rows, F::cast(0.3));

    // Contiguous bands over the linear index: horizontal stripes on the grid.
    let gt: Vec<usize> = (0..num_vertices)
        .map(|v| ((v * channels) / num_vertices).min(channels - 1))
        .collect();
    let observed: Vec<usize> = gt
        .iter()
        .map(|&label| {
            if flip_probability > 0.0 && rng.gen_bool(flip_probability) {
                let shift = rng.gen_range(1..channels);
                (label + shift) % channels
            } else {
                label
            }
        })
        .collect();
    let mut q = vec![F::zero(); num_vertices * channels];
    for (v, &label) in observed.iter().enumerate() {
        let mix = rng.gen_range(0.05..0.45);
        for k in 0..channels {
            let base = mix / channels as f64;
            q[v * channels + k] = F::cast(if k == label { 1.0 - mix + base } else { base });
        }
    }

    // Per class: a few seeded picks plus the most entropy-uncertain vertices.
    let entropy = metrics::entropy_uncertainty(&q, channels);
    let per_class = 3usize;
    let mut train: Vec<usize> = Vec::new();
    for class in 0..channels {
        let members: Vec<usize> = (0..num_vertices).filter(|&v| gt[v] == class).collect();
        if members.is_empty() {
            continue;
        }
        for _ in 0..per_class.min(members.len()) {
            train.push(members[rng.gen_range(0..members.len())]);
        }
        let mut by_entropy = members.clone();
        by_entropy.sort_by(|&a, &b| {
            entropy[b]
                .partial_cmp(&entropy[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        train.extend(by_entropy.into_iter().take(per_class));
    }
    train.sort_unstable();
    train.dedup();

    Ok(LabelingInstance {
        graph,
        q,
        channels,
        beta: F::cast(BETA_DEFAULT),
        ground_truth: Some(gt),
        train_subset: train,
    })
}

/// Crude line search over TV-penalty candidates: each candidate is solved
/// (Douglas-Rachford configuration) to the given stopping rule, labeled by
/// per-vertex argmax, and scored by average F1 on the training subset.
/// Returns the best candidate (ties toward the smaller penalty) with every
/// candidate's score.
pub fn line_search_lambda<F: Real>(
    candidates: &[F],
    instance: &LabelingInstance<F>,
    config: &SolveConfig<F>,
    eta: F,
) -> Result<(F, Vec<(F, f64)>)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no penalty candidates"));
    }
    if instance.train_subset.is_empty() {
        return Err(Error::invalid("empty training subset"));
    }
    let gt = instance
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::invalid("line search needs ground-truth labels"))?;
    let mut order: Vec<F> = candidates.to_vec();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut scores = Vec::with_capacity(order.len());
    let mut best: Option<(F, f64)> = None;
    for &lam in &order {
        let trial = instance.with_constant_tv(lam);
        let problem = build_labeling_problem(&trial, SplitMode::Pfdr, eta)?;
        let out = solve(&problem, config)?;
        let labels = metrics::argmax_labels(&out.x, instance.channels);
        let score = metrics::avg_f1(&labels, gt, &instance.train_subset, instance.channels)?;
        scores.push((lam, score));
        match best {
            Some((_, s)) if s >= score => {}
            _ => best = Some((lam, score)),
        }
    }
    Ok((best.unwrap().0, scores))
}

/// On-disk instance bundle.
#[derive(Debug, Clone)]
pub enum InstanceBundle<F> {
    Eeg(EegInstance<F>),
    Labeling(LabelingInstance<F>),
}

impl<F: Real> InstanceBundle<F> {
    pub fn family(&self) -> &'static str {
        match self {
            InstanceBundle::Eeg(_) => "eeg",
            InstanceBundle::Labeling(_) => "labeling",
        }
    }
}

fn write_vector<F: Real>(path: &Path, values: &[F]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

fn read_vector<F: Real>(path: &Path) -> Result<Vec<F>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad number '{line}'"),
        })?;
        out.push(F::cast(v));
    }
    Ok(out)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: usize = line.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad label '{line}'"),
        })?;
        out.push(v);
    }
    Ok(out)
}

fn parse_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "expected 'key = value'".into(),
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Writes an instance bundle: `instance.cfg` (flat key = value), the graph
/// text file carrying the TV weights, and per-family data files.
pub fn save_instance<F: Real>(dir: &Path, bundle: &InstanceBundle<F>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let graph = match bundle {
        InstanceBundle::Eeg(inst) => &inst.graph,
        InstanceBundle::Labeling(inst) => &inst.graph,
    };
    graph.to_text(BufWriter::new(fs::File::create(dir.join("graph.txt"))?))?;
    let mut cfg = BufWriter::new(fs::File::create(dir.join("instance.cfg"))?);
    match bundle {
        InstanceBundle::Eeg(inst) => {
            writeln!(cfg, "family = eeg")?;
            inst.phi
                .to_csv(BufWriter::new(fs::File::create(dir.join("phi.csv"))?))?;
            write_vector(&dir.join("y.txt"), &inst.y)?;
            write_vector(&dir.join("lambda_l1.txt"), &inst.lambda_l1)?;
            if let Some(gt) = &inst.ground_truth {
                write_vector(&dir.join("ground_truth.txt"), gt)?;
            }
        }
        InstanceBundle::Labeling(inst) => {
            writeln!(cfg, "family = labeling")?;
            writeln!(cfg, "channels = {}", inst.channels)?;
            writeln!(cfg, "beta = {}", inst.beta)?;
            let mut qw = BufWriter::new(fs::File::create(dir.join("q.csv"))?);
            for row in inst.q.chunks(inst.channels) {
                let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(qw, "{}", fields.join(","))?;
            }
            if let Some(gt) = &inst.ground_truth {
                let mut gw = BufWriter::new(fs::File::create(dir.join("ground_truth.txt"))?);
                for l in gt {
                    writeln!(gw, "{l}")?;
                }
            }
            let mut tw = BufWriter::new(fs::File::create(dir.join("train.txt"))?);
            for t in &inst.train_subset {
                writeln!(tw, "{t}")?;
            }
        }
    }
    Ok(())
}

/// Loads an instance bundle written by [`save_instance`]. The observation
/// operator may be present as `phi.csv` or as raw `phi.bin`.
pub fn load_instance<F: Real>(dir: &Path) -> Result<InstanceBundle<F>> {
    let cfg_path = dir.join("instance.cfg");
    let pairs = parse_config(&cfg_path)?;
    let get = |key: &str| -> Option<&str> {
        pairs
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let family = get("family").ok_or_else(|| Error::Parse {
        path: cfg_path.display().to_string(),
        line: 0,
        msg: "missing 'family' key".into(),
    })?;
    let graph_path = dir.join("graph.txt");
    let graph = Graph::<F>::from_text(
        BufReader::new(fs::File::open(&graph_path)?),
        &graph_path.display().to_string(),
    )?;
    match family {
        "eeg" => {
            let csv = dir.join("phi.csv");
            let raw = dir.join("phi.bin");
            let phi = if csv.exists() {
                DenseOperator::from_csv(
                    BufReader::new(fs::File::open(&csv)?),
                    &csv.display().to_string(),
                )?
            } else if raw.exists() {
                DenseOperator::from_raw(
                    BufReader::new(fs::File::open(&raw)?),
                    &raw.display().to_string(),
                )?
            } else {
                return Err(Error::invalid(format!(
                    "no observation operator (phi.csv or phi.bin) in {}",
                    dir.display()
                )));
            };
            let gt_path = dir.join("ground_truth.txt");
            let instance = EegInstance {
                graph,
                phi,
                y: read_vector(&dir.join("y.txt"))?,
                lambda_l1: read_vector(&dir.join("lambda_l1.txt"))?,
                ground_truth: if gt_path.exists() {
                    Some(read_vector(&gt_path)?)
                } else {
                    None
                },
            };
            instance.validate()?;
            Ok(InstanceBundle::Eeg(instance))
        }
        "labeling" => {
            let channels: usize = get("channels")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid("missing or bad 'channels' key"))?;
            let beta: f64 = get("beta")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid("missing or bad 'beta' key"))?;
            let q_path = dir.join("q.csv");
            let q_mat = DenseOperator::<F>::from_csv(
                BufReader::new(fs::File::open(&q_path)?),
                &q_path.display().to_string(),
            )?;
            if q_mat.cols() != channels {
                return Err(Error::invalid(format!(
                    "q.csv has {} columns, expected {channels}",
                    q_mat.cols()
                )));
            }
            let q: Vec<F> = (0..q_mat.rows()).flat_map(|i| q_mat.row(i).to_vec()).collect();
            let gt_path = dir.join("ground_truth.txt");
            let train_path = dir.join("train.txt");
            let instance = LabelingInstance {
                graph,
                q,
                channels,
                beta: F::cast(beta),
                ground_truth: if gt_path.exists() {
                    Some(read_labels(&gt_path)?)
                } else {
                    None
                },
                train_subset: if train_path.exists() {
                    read_labels(&train_path)?
                } else {
                    Vec::new()
                },
            };
            instance.validate()?;
            Ok(InstanceBundle::Labeling(instance))
        }
        other => Err(Error::invalid(format!("unknown family '{other}'"))),
    }
}
