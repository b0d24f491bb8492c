//! Subcommand implementations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use proxsplit::metrics;
use proxsplit::oracle;
use proxsplit::ppd::{self, PdSplitting};
use proxsplit::problems::{
    self, build_eeg_problem, build_labeling_problem, GammaMode, InstanceBundle, ETA_DEFAULT,
};
use proxsplit::solver::{
    solve, Checkpoint, ConvergenceLog, DomainPolicy, ErrorInjection, SolveConfig, SplitMode,
    SplitProblem, StoppingRule, PGFB_RESERVE_DEFAULT,
};
use proxsplit::{Error, Result};

use crate::config::FileConfig;
use crate::{BenchArgs, FamilyArg, GammaModeArg, OracleCheckArgs, SolveArgs, SolverKind, SynthArgs};

fn parse_stop(text: &str) -> Result<(StoppingRule<f64>, Option<u64>)> {
    let (kind, value) = text
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("bad stopping rule '{text}', expected kind=value")))?;
    match kind.trim() {
        "rel-evol" => Ok((
            StoppingRule::RelEvol(value.trim().parse().map_err(|_| {
                Error::invalid(format!("bad rel-evol threshold '{value}'"))
            })?),
            None,
        )),
        "max-evol" => Ok((
            StoppingRule::MaxEvol(value.trim().parse().map_err(|_| {
                Error::invalid(format!("bad max-evol threshold '{value}'"))
            })?),
            None,
        )),
        "iters" => Ok((
            StoppingRule::IterationsOnly,
            Some(value.trim().parse().map_err(|_| {
                Error::invalid(format!("bad iteration count '{value}'"))
            })?),
        )),
        other => Err(Error::invalid(format!(
            "unknown stopping rule '{other}' (rel-evol, max-evol or iters)"
        ))),
    }
}

fn parse_inject(text: &str) -> Result<(f64, f64)> {
    let (c, s) = text
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("bad error envelope '{text}', expected c,s")))?;
    let c: f64 = c.trim().parse().map_err(|_| Error::invalid("bad error magnitude"))?;
    let s: f64 = s.trim().parse().map_err(|_| Error::invalid("bad error decay"))?;
    Ok((c, s))
}

fn gamma_mode_of(arg: Option<GammaModeArg>, cfg: &FileConfig) -> Result<GammaMode> {
    if let Some(mode) = arg {
        return Ok(match mode {
            GammaModeArg::Strict => GammaMode::Strict,
            GammaModeArg::Jacobi => GammaMode::Jacobi,
        });
    }
    match cfg.raw("gamma_mode") {
        Some("strict") | None => Ok(GammaMode::Strict),
        Some("jacobi") => Ok(GammaMode::Jacobi),
        Some(other) => Err(Error::invalid(format!("bad gamma_mode '{other}'"))),
    }
}

/// One solver ready to run on one instance.
enum Built {
    Split {
        problem: Box<SplitProblem<f64>>,
        policy: DomainPolicy,
    },
    Pd(Box<PdSplitting<f64>>),
}

impl Built {
    fn objective(&self, x: &[f64]) -> f64 {
        match self {
            Built::Split { problem, .. } => problem.objective(x),
            Built::Pd(splitting) => splitting.objective(x),
        }
    }
}

fn build_solver(
    bundle: &InstanceBundle<f64>,
    kind: SolverKind,
    gamma_mode: GammaMode,
    eta: f64,
    reserve: f64,
    extend_domain: bool,
) -> Result<Built> {
    let mode = match kind {
        SolverKind::Pfdr => SplitMode::Pfdr,
        SolverKind::Pgfb => SplitMode::Pgfb { reserve },
        SolverKind::Ppd => {
            return Ok(Built::Pd(Box::new(match bundle {
                InstanceBundle::Eeg(inst) => ppd::build_ppd_splitting_eeg(
                    inst.phi.clone(),
                    inst.y.clone(),
                    &inst.graph,
                    inst.lambda_l1.clone(),
                )?,
                InstanceBundle::Labeling(inst) => ppd::build_ppd_splitting_labeling(
                    &inst.graph,
                    inst.q.clone(),
                    inst.channels,
                    inst.beta,
                )?,
            })))
        }
    };
    let problem = match bundle {
        InstanceBundle::Eeg(inst) => build_eeg_problem(inst, mode, gamma_mode, eta)?,
        InstanceBundle::Labeling(inst) => build_labeling_problem(inst, mode, eta)?,
    };
    let policy = if extend_domain && matches!(kind, SolverKind::Pgfb) {
        DomainPolicy::Extend
    } else {
        DomainPolicy::Abort
    };
    Ok(Built::Split { problem: Box::new(problem), policy })
}

struct RunResult {
    x: Vec<f64>,
    log: ConvergenceLog<f64>,
    iterations: u64,
    solve_time_s: f64,
    stopped_by_rule: bool,
    checkpoints: Vec<Checkpoint<f64>>,
    domain_violations: u64,
}

fn run_built(built: &Built, config: &SolveConfig<f64>) -> Result<RunResult> {
    match built {
        Built::Split { problem, policy } => {
            let mut config = config.clone();
            config.domain_policy = *policy;
            let out = solve(problem, &config)?;
            Ok(RunResult {
                x: out.x,
                log: out.log,
                iterations: out.iterations,
                solve_time_s: out.solve_time_s,
                stopped_by_rule: out.stopped_by_rule,
                checkpoints: out.checkpoints,
                domain_violations: out.domain_violations,
            })
        }
        Built::Pd(splitting) => {
            let out = ppd::ppd_solve(splitting, config)?;
            Ok(RunResult {
                x: out.x,
                log: out.log,
                iterations: out.iterations,
                solve_time_s: out.solve_time_s,
                stopped_by_rule: out.stopped_by_rule,
                checkpoints: out.checkpoints,
                domain_violations: 0,
            })
        }
    }
}

fn write_solution(path: &Path, x: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in x {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    let instance_dir = args
        .instance
        .clone()
        .or_else(|| cfg.raw("instance").map(PathBuf::from))
        .ok_or_else(|| Error::invalid("no instance directory given (--instance or config)"))?;
    let bundle = problems::load_instance::<f64>(&instance_dir)?;

    let solver = match (args.solver, cfg.raw("solver")) {
        (Some(s), _) => s,
        (None, Some("pfdr")) | (None, None) => SolverKind::Pfdr,
        (None, Some("pgfb")) => SolverKind::Pgfb,
        (None, Some("ppd")) => SolverKind::Ppd,
        (None, Some(other)) => return Err(Error::invalid(format!("bad solver '{other}'"))),
    };
    let stop_text = args
        .stop
        .clone()
        .or_else(|| cfg.raw("stop").map(str::to_string))
        .unwrap_or_else(|| "rel-evol=1e-6".into());
    let (stop, stop_iters) = parse_stop(&stop_text)?;
    let max_iters = match stop_iters {
        Some(n) => n,
        None => cfg.resolve(args.max_iters, "max_iters", 100_000)?,
    };
    let eta = cfg.resolve(args.eta, "eta", ETA_DEFAULT)?;
    let reserve = cfg.resolve(args.reserve, "reserve", PGFB_RESERVE_DEFAULT)?;
    let seed = cfg.resolve(args.seed, "seed", 0u64)?;
    let gamma_mode = gamma_mode_of(args.gamma_mode, &cfg)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.raw("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let log_every = cfg.resolve(args.log_every, "log_every", 10u64)?;
    let inject = match args
        .inject_errors
        .clone()
        .or_else(|| cfg.raw("inject_errors").map(str::to_string))
    {
        Some(text) => {
            let (c, s) = parse_inject(&text)?;
            println!("injecting errors on all oracle channels: envelope {c}/k^{s}, seed {seed}");
            Some(ErrorInjection::uniform(seed, c, s))
        }
        None => None,
    };

    let built = build_solver(&bundle, solver, gamma_mode, eta, reserve, false)?;
    let mut config = SolveConfig::new(stop, max_iters);
    config.rho = cfg.resolve_opt(args.rho, "rho")?;
    config.log_every = log_every;
    config.errors = inject;
    let result = run_built(&built, &config)?;

    fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("convergence.csv");
    result
        .log
        .write_csv(BufWriter::new(fs::File::create(&csv_path)?), None)?;
    write_solution(&out_dir.join("solution.txt"), &result.x)?;

    let objective = built.objective(&result.x);
    println!(
        "solver {} finished: {} iterations, objective {objective}, wall time {:.6} s{}",
        solver.name(),
        result.iterations,
        result.solve_time_s,
        if result.stopped_by_rule { "" } else { " (iteration cap)" },
    );
    if result.domain_violations > 0 {
        println!(
            "gradient evaluated outside its domain on {} iterations",
            result.domain_violations
        );
    }
    println!("wrote {} and {}", csv_path.display(), out_dir.join("solution.txt").display());
    Ok(0)
}

fn family_metrics(bundle: &InstanceBundle<f64>, x: &[f64]) -> Result<Vec<(String, f64)>> {
    match bundle {
        InstanceBundle::Eeg(inst) => {
            let mut out = Vec::new();
            if let Some(gt) = &inst.ground_truth {
                out.push(("dice".to_string(), metrics::dice_score(x, gt)));
                let support = metrics::approx_support_2means(x)?;
                let masked = metrics::mask_to_support(x, &support);
                out.push(("dice_2means".to_string(), metrics::dice_score(&masked, gt)));
            }
            Ok(out)
        }
        InstanceBundle::Labeling(inst) => {
            let mut out = Vec::new();
            if let Some(gt) = &inst.ground_truth {
                let labels = metrics::argmax_labels(x, inst.channels);
                let all: Vec<usize> = (0..inst.graph.num_vertices()).collect();
                out.push((
                    "avg_f1".to_string(),
                    metrics::avg_f1(&labels, gt, &all, inst.channels)?,
                ));
            }
            Ok(out)
        }
    }
}

pub fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    let instance_dir = args
        .instance
        .clone()
        .or_else(|| cfg.raw("instance").map(PathBuf::from))
        .ok_or_else(|| Error::invalid("no instance directory given (--instance or config)"))?;
    let bundle = problems::load_instance::<f64>(&instance_dir)?;
    let is_labeling = matches!(bundle, InstanceBundle::Labeling(_));

    let levels_text = args
        .levels
        .clone()
        .or_else(|| cfg.raw("levels").map(str::to_string))
        .unwrap_or_else(|| {
            if is_labeling {
                "1e-3,1e-4,1e-5".into()
            } else {
                "1e-4,1e-5,1e-6".into()
            }
        });
    let mut levels: Vec<f64> = Vec::new();
    for part in levels_text.split(',') {
        levels.push(
            part.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad level '{part}'")))?,
        );
    }
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tightest = *levels.last().ok_or_else(|| Error::invalid("no levels"))?;
    let stop_kind = args
        .stop_kind
        .clone()
        .or_else(|| cfg.raw("stop_kind").map(str::to_string))
        .unwrap_or_else(|| if is_labeling { "max-evol".into() } else { "rel-evol".into() });
    let stop = match stop_kind.as_str() {
        "rel-evol" => StoppingRule::RelEvol(tightest),
        "max-evol" => StoppingRule::MaxEvol(tightest),
        other => return Err(Error::invalid(format!("bad stop kind '{other}'"))),
    };
    let max_iters = cfg.resolve(args.max_iters, "max_iters", 100_000)?;
    let reference_iters = cfg.resolve(args.reference_iters, "reference_iters", 100_000)?;
    let eta = cfg.resolve(args.eta, "eta", ETA_DEFAULT)?;
    let reserve = cfg.resolve(args.reserve, "reserve", PGFB_RESERVE_DEFAULT)?;
    let gamma_mode = gamma_mode_of(args.gamma_mode, &cfg)?;
    let rho = cfg.resolve_opt(args.rho, "rho")?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.raw("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("bench-out"));
    let log_every = cfg.resolve(args.log_every, "log_every", 10u64)?;

    fs::create_dir_all(&out_dir)?;

    // Reference optimum from a long splitting run.
    let reference = match build_solver(&bundle, SolverKind::Pfdr, gamma_mode, eta, reserve, false)? {
        Built::Split { problem, .. } => oracle::reference_solution_iters(&problem, reference_iters)?,
        Built::Pd(_) => unreachable!(),
    };
    let f_inf = reference.objective;
    println!("reference objective after {reference_iters} iterations: {f_inf}");

    // level, solver, iters, time_s, objective, named metric values.
    type SummaryRow = (String, String, u64, f64, f64, Vec<(String, f64)>);
    let mut summary: Vec<SummaryRow> = Vec::new();
    for kind in [SolverKind::Pfdr, SolverKind::Pgfb, SolverKind::Ppd] {
        let built = build_solver(&bundle, kind, gamma_mode, eta, reserve, true)?;
        let mut config = SolveConfig::new(stop, max_iters);
        config.rho = rho;
        config.log_every = log_every;
        config.checkpoints = levels.clone();
        let result = run_built(&built, &config)?;
        let csv_path = out_dir.join(format!("{}.csv", kind.name()));
        result
            .log
            .write_csv(BufWriter::new(fs::File::create(&csv_path)?), Some(f_inf))?;
        write_solution(&out_dir.join(format!("{}_solution.txt", kind.name())), &result.x)?;
        if result.domain_violations > 0 {
            println!(
                "{}: gradient evaluated outside its domain on {} iterations",
                kind.name(),
                result.domain_violations
            );
        }
        for cp in &result.checkpoints {
            summary.push((
                format!("{:e}", cp.threshold),
                kind.name().to_string(),
                cp.iter,
                cp.time_s,
                cp.objective,
                family_metrics(&bundle, &cp.x)?,
            ));
        }
        let final_metrics = family_metrics(&bundle, &result.x)?;
        summary.push((
            "final".to_string(),
            kind.name().to_string(),
            result.iterations,
            result.solve_time_s,
            built.objective(&result.x),
            final_metrics,
        ));
    }

    let metric_names: Vec<String> = summary
        .first()
        .map(|row| row.5.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let summary_path = out_dir.join("summary.csv");
    let mut w = BufWriter::new(fs::File::create(&summary_path)?);
    write!(w, "level,solver,iters,time_s,objective,gap_vs_ref")?;
    for name in &metric_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (level, solver, iters, time, objective, mets) in &summary {
        write!(w, "{level},{solver},{iters},{time},{objective},{}", objective - f_inf)?;
        for (_, v) in mets {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    drop(w);

    println!(
        "{:<10} {:<6} {:>10} {:>12} {:>16} {:>12}  {}",
        "level", "solver", "iters", "time_s", "objective", "gap", metric_names.join("  ")
    );
    for (level, solver, iters, time, objective, mets) in &summary {
        let metric_text: Vec<String> = mets.iter().map(|(_, v)| format!("{v:.4}")).collect();
        println!(
            "{level:<10} {solver:<6} {iters:>10} {time:>12.4} {objective:>16.10} {:>12.3e}  {}",
            objective - f_inf,
            metric_text.join("  ")
        );
    }
    println!("wrote {}", summary_path.display());
    Ok(0)
}

pub fn cmd_oracle_check(args: OracleCheckArgs) -> Result<u8> {
    let start = Instant::now();
    let results = oracle::run_derived_checks(args.seed);
    let mut all_pass = true;
    for check in &results {
        println!(
            "check {:<45} {}  ({})",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.detail
        );
        all_pass &= check.pass;
    }
    println!(
        "{} checks in {:.2} s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if all_pass {
        Ok(0)
    } else {
        eprintln!("error: oracle regeneration failed");
        Ok(4)
    }
}

pub fn cmd_synth(args: SynthArgs) -> Result<u8> {
    let bundle = match args.family {
        FamilyArg::Eeg => {
            let vertices = args.vertices.unwrap_or(50);
            let mut inst =
                problems::synth_eeg::<f64>(args.seed, vertices, args.observations, args.support, args.noise)?;
            if let Some(tv) = args.lambda_tv {
                inst = inst.with_constant_tv(tv);
            }
            if let Some(l1) = args.lambda_l1 {
                inst = inst.with_constant_l1(l1);
            }
            InstanceBundle::Eeg(inst)
        }
        FamilyArg::Labeling => {
            let vertices = args.vertices.unwrap_or(100);
            let mut inst =
                problems::synth_labeling::<f64>(args.seed, vertices, args.channels, args.flip)?;
            if let Some(tv) = args.lambda_tv {
                inst = inst.with_constant_tv(tv);
            }
            InstanceBundle::Labeling(inst)
        }
    };
    problems::save_instance(&args.out, &bundle)?;
    println!("wrote {} instance bundle to {}", bundle.family(), args.out.display());
    Ok(0)
}
