use std::path::Path;
use std::process::{Command, Output};

fn pgpo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgpo"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PGPO_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const QUICK_VERIFY: &str = "\
[verify]
kl_pairs = 200
k3_pointwise = 1000
k3_draws = 20000
fuzz_cases = 200
property_cases = 200
gradient_points = 2
gradient_seeds = 1
experiment_samples = 20000
training_seeds = 0
";

#[test]
fn train_writes_metrics_checkpoints_and_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = pgpo(
        &["train", "--out", out.to_str().unwrap(), "--seeds", "1,2", "--mode", "full", "--mode", "uniform", "--steps", "4"],
        tmp.path(),
    );
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for mode in ["full", "uniform"] {
        for seed in [1, 2] {
            let metrics = read(out.join(format!("{mode}/seed-{seed}/metrics.csv")));
            let lines: Vec<&str> = metrics.lines().collect();
            assert_eq!(lines[0], "step,accuracy,entropy,mean_dependency,loss,grad_norm");
            assert_eq!(lines.len(), 1 + 5);
            assert!(read(out.join(format!("{mode}/seed-{seed}/checkpoint.txt"))).starts_with("pgpo-checkpoint 1"));
        }
    }
    assert_eq!(read(out.join("summary.csv")).lines().count(), 1 + 4);
    let cfg = read(out.join("effective_config.toml"));
    assert!(cfg.contains("steps = 4"));
    assert!(!out.join("FAILED").exists());
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let res = pgpo(&["train", "--out", first.to_str().unwrap(), "--steps", "3", "--tau", "0.3", "--seeds", "5"], tmp.path());
    assert_eq!(code(&res), 0);
    let second = tmp.path().join("b");
    let cfg = first.join("effective_config.toml");
    let res = pgpo(&["train", "--config", cfg.to_str().unwrap(), "--out", second.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read(first.join("full/seed-5/metrics.csv")), read(second.join("full/seed-5/metrics.csv")));
    let a = read(cfg).replace(first.to_str().unwrap(), "");
    let b = read(second.join("effective_config.toml")).replace(second.to_str().unwrap(), "");
    assert_eq!(a, b);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("c.toml");
    std::fs::write(&file, "seeds = [3]\n[train]\nsteps = 2\n[train.reshape]\ntau = 0.2\nbeta = 1.5\n").unwrap();
    let out = tmp.path().join("o");
    let res = pgpo(
        &["train", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap(), "--beta", "0.5"],
        tmp.path(),
    );
    assert_eq!(code(&res), 0);
    let eff = read(out.join("effective_config.toml"));
    assert!(eff.contains("tau = 0.2"));
    assert!(eff.contains("beta = 0.5"));
    assert!(eff.contains("seeds = [3]"));
}

#[test]
fn existing_output_needs_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "old").unwrap();
    let res = pgpo(&["train", "--out", out.to_str().unwrap(), "--steps", "1"], tmp.path());
    assert_eq!(code(&res), 2);
    assert_eq!(read(out.join("keep.txt")), "old");
    let res = pgpo(&["train", "--out", out.to_str().unwrap(), "--steps", "1", "--overwrite"], tmp.path());
    assert_eq!(code(&res), 0);
    assert!(out.join("full/seed-0/metrics.csv").exists());
}

#[test]
fn usage_errors_exit_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let res = pgpo(&["train", "--out", out.to_str().unwrap(), "--tau", "1.5"], tmp.path());
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("tau"));

    let file = tmp.path().join("bad.toml");
    std::fs::write(&file, "[train]\ngroup_sise = 4\n").unwrap();
    let res = pgpo(&["train", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("group_sise"));

    assert_eq!(code(&pgpo(&["train", "--mode", "sideways"], tmp.path())), 2);
    assert_eq!(code(&pgpo(&["train", "--seeds", "4..2"], tmp.path())), 2);
    assert_eq!(code(&pgpo(&["launch"], tmp.path())), 2);
}

#[test]
fn aborted_run_keeps_partial_artifacts_and_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("blowup.toml");
    std::fs::write(&file, "[train]\nvisual_prior = 1e308\nsteps = 3\n").unwrap();
    let out = tmp.path().join("o");
    let res = pgpo(&["train", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 1);
    assert!(out.join("FAILED").exists());
    assert!(out.join("effective_config.toml").exists());
    let abort = read(out.join("full/seed-0/abort.txt"));
    assert!(abort.contains("category = non_finite"), "{abort}");
    assert!(out.join("full/seed-0/checkpoint.txt").exists());
    assert!(read(out.join("summary.csv")).contains("aborted"));
}

#[test]
fn verify_writes_one_report_per_check() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("quick.toml");
    std::fs::write(&file, QUICK_VERIFY).unwrap();
    let out = tmp.path().join("v");
    let res = pgpo(&["verify", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    for name in [
        "kl_oracle",
        "k3_estimator",
        "mass_conservation",
        "zero_mean_advantages",
        "monotonicity_and_rank",
        "gradient_oracle",
        "uniform_equivalence",
        "variance_suppression",
        "mean_shift_covariance",
    ] {
        let report = read(out.join(format!("reports/{name}.txt")));
        assert!(report.contains("passed = true"), "{name}: {report}");
    }
    assert!(read(out.join("summary.txt")).contains("overall = pass"));
}

#[test]
fn ablate_covers_all_five_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let res = pgpo(
        &["ablate", "--out", out.to_str().unwrap(), "--steps", "2", "--seeds", "0..2", "--format", "jsonlines"],
        tmp.path(),
    );
    assert_eq!(code(&res), 0);
    let modes = ["full", "suppression_only", "boosting_only", "no_norm", "uniform"];
    for mode in modes {
        assert!(out.join(format!("{mode}/seed-1/metrics.jsonl")).exists());
    }
    let table = read(out.join("comparison.jsonl"));
    assert_eq!(table.lines().count(), 5);
    for (line, mode) in table.lines().zip(modes) {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["mode"], mode);
        assert_eq!(row["runs"], 2);
    }
}

#[test]
fn score_emits_columns_for_a_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump.txt");
    std::fs::write(
        &dump,
        "# example\ngroup=0 traj=0 tokens=1,2,0 reward=1 raw=0,0.5,1\ngroup=0 traj=1 tokens=3,0 reward=0 p_cond=0.5,0.9 p_uncond=0.25,0.9\n",
    )
    .unwrap();
    let out = tmp.path().join("s");
    let res = pgpo(&["score", "--input", dump.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = read(out.join("scores.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "group,traj,position,token,raw,damped,normalized,weight,advantage");
    assert_eq!(lines.len(), 1 + 5);
    let weights: f64 = lines[1..4].iter().map(|l| l.split(',').nth(7).unwrap().parse::<f64>().unwrap()).sum();
    assert!((weights - 3.0).abs() < 1e-12);
    assert!(read(out.join("scored.txt")).contains("group_advantage="));

    let res = pgpo(&["score", "--input", dump.to_str().unwrap(), "--out", out.to_str().unwrap(), "--overwrite", "--mode", "uniform"], tmp.path());
    assert_eq!(code(&res), 0);
    let csv = read(out.join("scores.csv"));
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[7], "1");
    }
}

#[test]
fn malformed_dump_fails_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump.txt");
    std::fs::write(&dump, "group=0 traj=0 tokens=1 reward=1 raw=0.2\ngroup=0 traj=1 tokens=1 reward=oops raw=0.1\n").unwrap();
    let out = tmp.path().join("s");
    let res = pgpo(&["score", "--input", dump.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
    assert!(out.join("FAILED").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let res = Command::new(env!("CARGO_BIN_EXE_pgpo"))
        .args(["train", "--steps", "1"])
        .current_dir(tmp.path())
        .env("PGPO_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    assert!(root.join("train/full/seed-0/metrics.csv").exists());

    let res = pgpo(&["train", "--steps", "1"], tmp.path());
    assert_eq!(code(&res), 0);
    assert!(tmp.path().join("runs/train/effective_config.toml").exists());
}
