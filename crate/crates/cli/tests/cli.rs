//! End-to-end command-line behavior: exit codes, file outputs, diagnostics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_proxsplit")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("proxsplit-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn synth_eeg_bundle(dir: &Path) {
    let out = Command::new(bin())
        .args(["synth", "--family", "eeg", "--out"])
        .arg(dir)
        .args(["--seed", "1", "--vertices", "20", "--observations", "8", "--support", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_writes_contractual_csv() {
    let dir = workdir("solve");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    let out = Command::new(bin())
        .args(["solve", "--instance"])
        .arg(&inst)
        .args(["--solver", "pfdr", "--stop", "rel-evol=1e-6", "--log-every", "5", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.join("run/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,time_s,objective,rel_evol,max_evol,fp_residual"
    );
    let mut last_iter = -1i64;
    let mut final_rel = f64::INFINITY;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6);
        let iter: i64 = fields[0].parse().unwrap();
        assert!(iter > last_iter, "iter column must strictly increase");
        last_iter = iter;
        final_rel = fields[3].parse().unwrap();
    }
    assert!(final_rel < 1e-6, "final rel_evol {final_rel}");
    assert!(dir.join("run/solution.txt").exists());
    let printed = String::from_utf8_lossy(&out.stdout);
    assert!(printed.contains("objective"), "{printed}");
    assert!(printed.contains("wall time"), "{printed}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn out_of_range_relaxation_is_refused_with_exit_3() {
    let dir = workdir("rho");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    let out = Command::new(bin())
        .args(["solve", "--instance"])
        .arg(&inst)
        .args(["--rho", "50.0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("relaxation"), "{err}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn malformed_instance_fails_with_exit_2_and_line_diagnostic() {
    let dir = workdir("malformed");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    // Corrupt one edge line of the graph file.
    let graph_path = inst.join("graph.txt");
    let mut text = fs::read_to_string(&graph_path).unwrap();
    text.push_str("3 not-a-vertex 1.0\n");
    let lineno = text.lines().count();
    fs::write(&graph_path, text).unwrap();
    let out = Command::new(bin())
        .args(["solve", "--instance"])
        .arg(&inst)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains(&format!(":{lineno}")),
        "diagnostic should name the line: {err}"
    );
    fs::remove_dir_all(&dir).unwrap();

    let out = run(&["solve", "--instance", "/nonexistent-proxsplit-dir"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_quickly() {
    let start = Instant::now();
    let out = run(&["oracle-check", "--seed", "4242"]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches(" PASS ").count(), 12, "{text}");
    assert!(!text.contains(" FAIL "), "{text}");
    assert!(elapsed < 60.0, "oracle-check took {elapsed} s");
}

#[test]
fn bench_reaches_reference_at_tight_levels() {
    let dir = workdir("bench");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    let out = Command::new(bin())
        .args(["bench", "--instance"])
        .arg(&inst)
        .args([
            "--levels",
            "1e-4,1e-6,1e-9",
            "--reference-iters",
            "50000",
            "--max-iters",
            "200000",
            "--out",
        ])
        .arg(dir.join("bench"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for solver in ["pfdr", "pgfb", "ppd"] {
        let csv = fs::read_to_string(dir.join(format!("bench/{solver}.csv"))).unwrap();
        assert!(csv.starts_with("iter,time_s,objective,rel_evol,max_evol,fp_residual,F_minus_Finf"));
        if solver == "pfdr" {
            // Feasible at every logged iteration: the objective never reads
            // infinite along the Douglas-Rachford trace.
            for line in csv.lines().skip(1) {
                let objective: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
                assert!(objective.is_finite(), "{line}");
            }
        }
    }
    let summary = fs::read_to_string(dir.join("bench/summary.csv")).unwrap();
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let gap_col = header.iter().position(|&h| h == "gap_vs_ref").unwrap();
    let obj_col = header.iter().position(|&h| h == "objective").unwrap();
    assert!(header.contains(&"dice"));
    assert!(header.contains(&"dice_2means"));
    let mut final_rows = 0;
    for line in summary.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == "final" {
            final_rows += 1;
            let gap: f64 = fields[gap_col].parse().unwrap();
            let objective: f64 = fields[obj_col].parse().unwrap();
            let f_inf = objective - gap;
            assert!(
                gap.abs() < 1e-6 * f_inf.abs(),
                "{}: final gap {gap} vs reference {f_inf}",
                fields[1]
            );
        }
    }
    assert_eq!(final_rows, 3);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = workdir("config");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    let cfg_path = dir.join("run.cfg");
    fs::write(
        &cfg_path,
        format!(
            "# solve configuration\ninstance = {}\nsolver = pgfb\nstop = rel-evol=1e-7\nout = {}\n",
            inst.display(),
            dir.join("from-config").display()
        ),
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["solve", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("solver pgfb"));
    assert!(dir.join("from-config/convergence.csv").exists());

    // The command line wins over the file.
    let out = Command::new(bin())
        .args(["solve", "--config"])
        .arg(&cfg_path)
        .args(["--solver", "ppd", "--out"])
        .arg(dir.join("from-flag"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("solver ppd"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn labeling_pipeline_end_to_end() {
    let dir = workdir("labeling");
    let inst = dir.join("inst");
    let out = Command::new(bin())
        .args(["synth", "--family", "labeling", "--out"])
        .arg(&inst)
        .args(["--seed", "2", "--vertices", "36", "--channels", "3", "--flip", "0.25"])
        .output()
        .unwrap();
    assert!(out.status.success());
    for file in ["graph.txt", "q.csv", "ground_truth.txt", "train.txt", "instance.cfg"] {
        assert!(inst.join(file).exists(), "missing {file}");
    }
    let out = Command::new(bin())
        .args(["bench", "--instance"])
        .arg(&inst)
        .args(["--levels", "1e-3,1e-5", "--reference-iters", "20000", "--out"])
        .arg(dir.join("bench"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("bench/summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().contains("avg_f1"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn solve_with_iteration_cap_stop() {
    let dir = workdir("iters");
    let inst = dir.join("inst");
    synth_eeg_bundle(&inst);
    let out = Command::new(bin())
        .args(["solve", "--instance"])
        .arg(&inst)
        .args(["--stop", "iters=17", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.join("run/convergence.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("17,"), "{last}");
    fs::remove_dir_all(&dir).unwrap();
}
