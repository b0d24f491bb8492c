//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Every tolerance is
//! pinned here.

use std::time::Instant;

use proxsplit::graph::{DiagonalOperator, SplitWeights};
use proxsplit::metrics;
use proxsplit::oracle;
use proxsplit::ppd;
use proxsplit::problems::{
    build_eeg_problem, build_labeling_problem, synth_eeg, synth_labeling, EegInstance, GammaMode,
};
use proxsplit::smooth::DenseOperator;
use proxsplit::solver::{
    fejer_distance, fixed_point_residual, pfdr_step, solve, DomainPolicy, ErrorInjection,
    SolveConfig, SolverState, SplitMode, SplitProblem, StoppingRule,
};
use proxsplit::Error;
use proxsplit::Graph64;

/// Criterion 1: prox objective gap against the grid oracle.
const PROX_GAP_TOL: f64 = 1e-6;
const PROX_SUITE_BUDGET_S: f64 = 60.0;
/// Criterion 2: gradient/finite-difference relative error and cocoercivity slack.
const FD_REL_TOL: f64 = 1e-6;
const COCOERCIVITY_SLACK: f64 = 1e-10;
/// Criterion 3: per-coordinate reduction identity tolerance.
const REDUCTION_TOL: f64 = 1e-15;
/// Criterion 4: fixed-point residual factor at convergence.
const FP_RESIDUAL_FACTOR: f64 = 1e-8;
/// Criterion 5: relative objective agreement across solvers.
const CROSS_SOLVER_REL: f64 = 1e-6;
const CROSS_SOLVER_BUDGET_S: f64 = 300.0;
/// Criterion 6: per-iterate simplex sum deviation.
const SIMPLEX_SUM_DEV: f64 = 1e-12;
/// Criterion 7: relative slack of the distance-nonincrease property.
const FEJER_REL_SLACK: f64 = 1e-10;
/// Criterion 8: relative objective agreement under injected errors.
const ERROR_ROBUST_REL: f64 = 1e-5;
/// Criterion 11: scaled operator norm bound of the primal-dual steps.
const PPD_NORM_TOL: f64 = 1e-10;

fn report(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {number:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {number:02} {name} failed: {detail}");
}

fn lasso_instance() -> EegInstance<f64> {
    EegInstance {
        graph: Graph64::new(1, Vec::<(usize, usize, f64)>::new()).unwrap(),
        phi: DenseOperator::identity(1),
        y: vec![2.0],
        lambda_l1: vec![1.0],
        ground_truth: None,
    }
}

#[test]
fn acceptance_01_prox_oracle_suite() {
    let start = Instant::now();
    let seed = 2024;
    let gaps = [
        ("soft_threshold", oracle::check_soft_threshold_gap(seed, 100)),
        ("l1_positive", oracle::check_l1_positive_gap(seed + 1, 100)),
        ("project_simplex", oracle::check_simplex_gap(seed + 2, 100)),
        ("pair_abs_diff", oracle::check_pair_abs_diff_gap(seed + 3, 100)),
        ("kl", oracle::check_kl_gap(seed + 4, 100)),
        ("conjugate", oracle::check_conjugate_gap(seed + 5, 100)),
    ];
    let elapsed = start.elapsed().as_secs_f64();
    let worst = gaps.iter().cloned().fold(0.0f64, |m, (_, g)| m.max(g));
    let pass = gaps.iter().all(|&(_, g)| g <= PROX_GAP_TOL) && elapsed < PROX_SUITE_BUDGET_S;
    report(
        1,
        "prox oracle suite",
        pass,
        &format!("worst gap {worst:.3e} (tol {PROX_GAP_TOL:.0e}), {elapsed:.1} s of {PROX_SUITE_BUDGET_S} s"),
    );
}

#[test]
fn acceptance_02_gradient_suite() {
    let fd_ls = oracle::check_ls_gradient_fd(51, 50);
    let fd_kl = oracle::check_kl_gradient_fd(52, 50);
    let coco_ls = oracle::check_ls_cocoercivity(53, 100);
    let coco_kl = oracle::check_kl_cocoercivity(54, 100);
    let pass = fd_ls < FD_REL_TOL
        && fd_kl < FD_REL_TOL
        && coco_ls <= COCOERCIVITY_SLACK
        && coco_kl <= COCOERCIVITY_SLACK;
    report(
        2,
        "gradient suite",
        pass,
        &format!(
            "fd rel {:.3e}/{:.3e} (tol {FD_REL_TOL:.0e}), cocoercivity slack {:.3e}/{:.3e} (tol {COCOERCIVITY_SLACK:.0e})",
            fd_ls, fd_kl, coco_ls, coco_kl
        ),
    );
}

#[test]
fn acceptance_03_reduction_identities() {
    let fb = oracle::check_forward_backward_reduction(61, 20);
    let dr = oracle::check_douglas_rachford_reduction(62, 20);
    report(
        3,
        "reduction identities",
        fb <= REDUCTION_TOL && dr <= REDUCTION_TOL,
        &format!("forward-backward {fb:.3e}, douglas-rachford {dr:.3e} (tol {REDUCTION_TOL:.0e})"),
    );
}

#[test]
fn acceptance_04_fixed_point_certification() {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, inst) in [
        ("lasso", lasso_instance()),
        ("chain50", synth_eeg::<f64>(404, 50, 20, 10, 0.05).unwrap()),
    ] {
        let problem = build_eeg_problem(&inst, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
        let out = solve(
            &problem,
            &SolveConfig::new(StoppingRule::RelEvol(1e-12), 400_000),
        )
        .unwrap();
        let residual = fixed_point_residual(&out.state, &problem);
        let bound = FP_RESIDUAL_FACTOR * (1.0 + out.x.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        pass &= residual < bound;
        details.push(format!("{name}: residual {residual:.3e} < {bound:.3e}"));
    }
    report(4, "fixed-point certification", pass, &details.join("; "));
}

#[test]
fn acceptance_05_cross_solver_agreement() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;

    // Family one: chain graph, 50 vertices, 20 observations.
    let eeg = synth_eeg::<f64>(505, 50, 20, 10, 0.05).unwrap();
    let eeg_pfdr = build_eeg_problem(&eeg, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let f_inf = oracle::reference_solution(&eeg_pfdr).unwrap().objective;
    let stop = SolveConfig::new(StoppingRule::RelEvol(1e-10), 400_000);
    let fa = eeg_pfdr.objective(&solve(&eeg_pfdr, &stop).unwrap().x);
    let pgfb = build_eeg_problem(&eeg, SplitMode::Pgfb { reserve: 0.2 }, GammaMode::Strict, 0.9).unwrap();
    let mut cfg = stop.clone();
    cfg.domain_policy = DomainPolicy::Extend;
    let fb = pgfb.objective(&solve(&pgfb, &cfg).unwrap().x);
    let splitting = ppd::build_ppd_splitting_eeg(
        eeg.phi.clone(),
        eeg.y.clone(),
        &eeg.graph,
        eeg.lambda_l1.clone(),
    )
    .unwrap();
    let fp = splitting.objective(&ppd::ppd_solve(&splitting, &stop).unwrap().x);
    for (solver, f) in [("pfdr", fa), ("pgfb", fb), ("ppd", fp)] {
        let rel = (f - f_inf).abs() / f_inf.abs();
        pass &= rel < CROSS_SOLVER_REL;
        details.push(format!("eeg/{solver} rel {rel:.3e}"));
    }

    // Family two: grid graph, 100 vertices, 3 labels.
    let lab = synth_labeling::<f64>(506, 100, 3, 0.25).unwrap();
    let lab_pfdr = build_labeling_problem(&lab, SplitMode::Pfdr, 0.9).unwrap();
    let f_inf = oracle::reference_solution(&lab_pfdr).unwrap().objective;
    let stop = SolveConfig::new(StoppingRule::MaxEvol(1e-9), 400_000);
    let fa = lab_pfdr.objective(&solve(&lab_pfdr, &stop).unwrap().x);
    let pgfb = build_labeling_problem(&lab, SplitMode::Pgfb { reserve: 0.2 }, 0.9).unwrap();
    let mut cfg = stop.clone();
    cfg.domain_policy = DomainPolicy::Extend;
    let fb = pgfb.objective(&solve(&pgfb, &cfg).unwrap().x);
    let splitting =
        ppd::build_ppd_splitting_labeling(&lab.graph, lab.q.clone(), lab.channels, lab.beta).unwrap();
    let fp = splitting.objective(&ppd::ppd_solve(&splitting, &stop).unwrap().x);
    for (solver, f) in [("pfdr", fa), ("pgfb", fb), ("ppd", fp)] {
        let rel = (f - f_inf).abs() / f_inf.abs();
        pass &= rel < CROSS_SOLVER_REL;
        details.push(format!("labeling/{solver} rel {rel:.3e}"));
    }

    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < CROSS_SOLVER_BUDGET_S;
    details.push(format!("{elapsed:.1} s of {CROSS_SOLVER_BUDGET_S} s"));
    report(5, "cross-solver agreement", pass, &details.join(", "));
}

#[test]
fn acceptance_06_per_iteration_constraints() {
    let mut pass = true;
    let mut details = Vec::new();

    // Labeling family: every Douglas-Rachford iterate sits exactly on the
    // product of simplices.
    let lab = synth_labeling::<f64>(606, 100, 3, 0.25).unwrap();
    let problem = build_labeling_problem(&lab, SplitMode::Pfdr, 0.9).unwrap();
    let rho = problem.default_relaxation();
    let mut state = SolverState::init(&problem, None).unwrap();
    let mut worst_sum: f64 = 0.0;
    let mut worst_neg: f64 = 0.0;
    for _ in 0..1500 {
        for chunk in state.x().chunks(3) {
            let sum: f64 = chunk.iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            worst_neg = worst_neg.max(chunk.iter().fold(0.0f64, |m, &v| m.max(-v)));
        }
        pfdr_step(&mut state, &problem, rho, None, DomainPolicy::Abort).unwrap();
    }
    pass &= worst_sum < SIMPLEX_SUM_DEV && worst_neg == 0.0;
    details.push(format!("pfdr labeling: sum dev {worst_sum:.3e}, negativity {worst_neg:.3e}"));

    // Inverse family: every iterate exactly nonnegative with exact zeros.
    let eeg = synth_eeg::<f64>(607, 50, 20, 10, 0.05).unwrap();
    let problem = build_eeg_problem(&eeg, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let rho = problem.default_relaxation();
    let mut state = SolverState::init(&problem, None).unwrap();
    let mut exact = true;
    for _ in 0..1500 {
        exact &= state.x().iter().all(|&v| v >= 0.0);
        pfdr_step(&mut state, &problem, rho, None, DomainPolicy::Abort).unwrap();
    }
    let zeros = state.x().iter().filter(|&&v| v == 0.0).count();
    pass &= exact && zeros > 0;
    details.push(format!("pfdr inverse: exact nonneg {exact}, {zeros} exact zeros"));

    // Forward-backward configuration violates the constraints at some early
    // iteration on both families.
    let pgfb = build_labeling_problem(&lab, SplitMode::Pgfb { reserve: 0.2 }, 0.9).unwrap();
    let state = SolverState::init(&pgfb, None).unwrap();
    let sum0: f64 = state.x()[..3].iter().sum();
    let lab_violated = (sum0 - 1.0).abs() > SIMPLEX_SUM_DEV;
    pass &= lab_violated;

    let pgfb = build_eeg_problem(&eeg, SplitMode::Pgfb { reserve: 0.2 }, GammaMode::Strict, 0.9).unwrap();
    let rho = pgfb.default_relaxation();
    let mut state = SolverState::init(&pgfb, None).unwrap();
    let mut eeg_violated = false;
    for _ in 0..300 {
        pfdr_step(&mut state, &pgfb, rho, None, DomainPolicy::Extend).unwrap();
        if state.x().iter().any(|&v| v < 0.0) {
            eeg_violated = true;
            break;
        }
    }
    pass &= eeg_violated;
    details.push(format!(
        "pgfb violates: labeling {lab_violated}, inverse {eeg_violated}"
    ));

    report(6, "per-iteration constraint property", pass, &details.join("; "));
}

#[test]
fn acceptance_07_fejer_monotonicity() {
    let eeg = synth_eeg::<f64>(707, 20, 20, 6, 0.05).unwrap();
    let problem = build_eeg_problem(&eeg, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let reference = oracle::reference_solution(&problem).unwrap();
    let rho = problem.default_relaxation();
    let mut state = SolverState::init(&problem, None).unwrap();
    let d0 = fejer_distance(&state, &reference.z, &problem);
    let slack = FEJER_REL_SLACK * (1.0 + d0);
    let mut prev = d0;
    let mut worst_increase: f64 = 0.0;
    for _ in 0..3000 {
        pfdr_step(&mut state, &problem, rho, None, DomainPolicy::Abort).unwrap();
        let d = fejer_distance(&state, &reference.z, &problem);
        worst_increase = worst_increase.max(d - prev);
        prev = d;
    }
    report(
        7,
        "Fejer monotonicity",
        worst_increase <= slack,
        &format!("worst increase {worst_increase:.3e} vs slack {slack:.3e} (d0 {d0:.3e})"),
    );
}

#[test]
fn acceptance_08_error_robustness() {
    let eeg = synth_eeg::<f64>(808, 10, 10, 4, 0.05).unwrap();
    let problem = build_eeg_problem(&eeg, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let clean_cfg = SolveConfig::new(StoppingRule::IterationsOnly, 10_000);
    let clean = solve(&problem, &clean_cfg).unwrap();
    let f_clean = problem.objective(&clean.x);
    let mut noisy_cfg = clean_cfg.clone();
    noisy_cfg.errors = Some(ErrorInjection::uniform(808, 0.1, 2.0));
    let noisy = solve(&problem, &noisy_cfg).unwrap();
    let f_noisy = problem.objective(&noisy.x);
    let rel = (f_noisy - f_clean).abs() / f_clean.abs();
    report(
        8,
        "error robustness",
        rel < ERROR_ROBUST_REL,
        &format!("relative objective drift {rel:.3e} after 1e4 iterations (tol {ERROR_ROBUST_REL:.0e})"),
    );
}

#[test]
fn acceptance_09_guard_behavior() {
    let eeg = synth_eeg::<f64>(909, 12, 6, 4, 0.05).unwrap();
    let problem = build_eeg_problem(&eeg, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let mut pass = true;
    let mut details = Vec::new();

    let mut cfg = SolveConfig::new(StoppingRule::RelEvol(1e-6), 100);
    cfg.rho = Some(1.01 * problem.relaxation_bound());
    match solve(&problem, &cfg) {
        Err(Error::HypothesisViolation(v)) => {
            let named = v.iter().any(|m| m.contains("relaxation"));
            pass &= named;
            details.push(format!("rho guard named: {named}"));
        }
        other => {
            pass = false;
            details.push(format!("rho guard missing ({other:?})"));
        }
    }

    // Perturbed split weights violate the identity-sum condition.
    let layout = problem.layout().clone();
    let mut weights: Vec<DiagonalOperator<f64>> = (0..layout.num_blocks())
        .map(|i| problem.weights().block(i).clone())
        .collect();
    let support = weights[0].support().unwrap().to_vec();
    let mut values = weights[0].values().to_vec();
    values[0] += 1e-6;
    weights[0] = DiagonalOperator::on_support(support, values).unwrap();
    let bad = SplitProblem::new(
        layout,
        problem.blocks().to_vec(),
        problem.smooth().clone(),
        problem.curvature().clone(),
        problem.full_term().clone(),
        SplitWeights::new(weights),
        problem.gamma().clone(),
    )
    .unwrap();
    match solve(&bad, &SolveConfig::new(StoppingRule::RelEvol(1e-6), 100)) {
        Err(Error::HypothesisViolation(v)) => {
            let named = v.iter().any(|m| m.contains("(P2)(iv)"));
            pass &= named;
            details.push(format!("weight-sum guard named: {named}"));
        }
        other => {
            pass = false;
            details.push(format!("weight guard missing ({other:?})"));
        }
    }

    // Oversized step operator breaks the curvature norm condition.
    let oversized: Vec<f64> = problem.gamma().values().iter().map(|&g| g * 10.0).collect();
    let bad = SplitProblem::new(
        problem.layout().clone(),
        problem.blocks().to_vec(),
        problem.smooth().clone(),
        problem.curvature().clone(),
        problem.full_term().clone(),
        problem.weights().clone(),
        DiagonalOperator::strictly_positive(oversized).unwrap(),
    )
    .unwrap();
    match solve(&bad, &SolveConfig::new(StoppingRule::RelEvol(1e-6), 100)) {
        Err(Error::HypothesisViolation(v)) => {
            let named = v.iter().any(|m| m.contains("(P1)(i)"));
            pass &= named;
            details.push(format!("step-norm guard named: {named}"));
        }
        other => {
            pass = false;
            details.push(format!("step-norm guard missing ({other:?})"));
        }
    }

    report(9, "guard behavior", pass, &details.join("; "));
}

#[test]
fn acceptance_10_metrics_suite() {
    let mut pass = true;
    let mut details = Vec::new();

    // Frozen worked examples.
    let x = [1.0f64, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let xh = [1.0f64, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
    pass &= (metrics::dice_score(&x, &xh) - 0.6).abs() < 1e-15;
    let f1 = metrics::avg_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], &[0, 1, 2, 3], 2).unwrap();
    pass &= (f1 - 1.0 / 3.0).abs() < 1e-15;
    let e = metrics::entropy_uncertainty(&[0.9f64, 0.1], 2)[0];
    pass &= (e - (-(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln()))).abs() < 1e-12;
    let s = metrics::approx_support_2means(&[0.01f64, 0.02, 3.0, 4.0]).unwrap();
    pass &= s.members == vec![2, 3];
    details.push(format!("worked examples: {pass}"));

    // Exhaustive-split agreement on all sizes <= 12.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1010);
    let mut agree = true;
    for _ in 0..3000 {
        let n = rng.gen_range(1..=12);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.4) {
                    rng.gen_range(0.0..0.5)
                } else {
                    rng.gen_range(0.0..5.0)
                }
            })
            .collect();
        let fast = metrics::approx_support_2means(&x).unwrap();
        let threshold = metrics::best_split_threshold(&x);
        let members: Vec<usize> = x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v.abs() > threshold)
            .map(|(i, _)| i)
            .collect();
        agree &= fast.members == members;
    }
    pass &= agree;
    details.push(format!("2-means vs enumeration (3000 inputs, n <= 12): {agree}"));

    report(10, "metrics suite", pass, &details.join("; "));
}

#[test]
fn acceptance_11_ppd_preconditioners() {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for seed in 0..6 {
        let eeg = synth_eeg::<f64>(1100 + seed, 20, 8, 5, 0.05).unwrap();
        let splitting =
            ppd::build_ppd_splitting_eeg(eeg.phi.clone(), eeg.y.clone(), &eeg.graph, eeg.lambda_l1.clone())
                .unwrap();
        let pc = ppd::ppd_preconditioners(&splitting);
        let norm = ppd::scaled_operator_norm(&splitting, &pc);
        worst = worst.max(norm);
        pass &= norm <= 1.0 + PPD_NORM_TOL;

        let lab = synth_labeling::<f64>(1200 + seed, 36, 3, 0.2).unwrap();
        let splitting =
            ppd::build_ppd_splitting_labeling(&lab.graph, lab.q.clone(), lab.channels, lab.beta).unwrap();
        let pc = ppd::ppd_preconditioners(&splitting);
        let norm = ppd::scaled_operator_norm(&splitting, &pc);
        worst = worst.max(norm);
        pass &= norm <= 1.0 + PPD_NORM_TOL;
    }
    report(
        11,
        "ppd preconditioner bound",
        pass,
        &format!("worst scaled norm {worst:.12} <= 1 + {PPD_NORM_TOL:.0e}"),
    );
}

#[test]
fn acceptance_12_cli_determinism_across_threads() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_proxsplit");
    let base = std::env::temp_dir().join(format!("proxsplit-acc12-{}", std::process::id()));
    let inst = base.join("inst");
    std::fs::create_dir_all(&base).unwrap();
    let status = Command::new(bin)
        .args(["synth", "--family", "eeg", "--out"])
        .arg(&inst)
        .args(["--seed", "9", "--vertices", "24", "--observations", "10", "--support", "6"])
        .status()
        .unwrap();
    assert!(status.success());

    let run = |threads: &str, out: &std::path::Path| {
        let status = Command::new(bin)
            .args(["--threads", threads, "solve", "--instance"])
            .arg(&inst)
            .args([
                "--solver",
                "pfdr",
                "--stop",
                "rel-evol=1e-8",
                "--seed",
                "9",
                "--inject-errors",
                "0.05,2",
                "--log-every",
                "7",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
        let solution = std::fs::read_to_string(out.join("solution.txt")).unwrap();
        (csv, solution)
    };
    let (csv1, sol1) = run("1", &base.join("t1"));
    let (csv4, sol4) = run("4", &base.join("t4"));
    let (csv1b, sol1b) = run("1", &base.join("t1b"));

    // Identical numerical columns at any thread count; only time_s may move.
    let strip_time = |csv: &str| -> Vec<Vec<String>> {
        csv.lines()
            .map(|line| {
                line.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 1)
                    .map(|(_, f)| f.to_string())
                    .collect()
            })
            .collect()
    };
    let pass = strip_time(&csv1) == strip_time(&csv4)
        && strip_time(&csv1) == strip_time(&csv1b)
        && sol1 == sol4
        && sol1 == sol1b;
    std::fs::remove_dir_all(&base).unwrap();
    report(
        12,
        "CLI determinism across threads",
        pass,
        "convergence.csv (minus time_s) and solution.txt identical for --threads 1/4 and repeat runs",
    );
}
