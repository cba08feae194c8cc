use std::path::Path;
use std::process::{Command, Output};

use didp_rl::bench::load_results;
use didp_rl::domains::DomainTag;
use didp_rl::learning::io::load_params;

fn didp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_didp-rl")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solves_the_tsp_fixture() {
    let out = didp(&["solve", "--domain", "tsp", "--n", "3", "--instance", "fix-tsp3", "--algo", "cabs", "--guidance", "dual"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "cost 4"), "{text}");
    assert!(text.lines().any(|l| l == "proved_optimal true"), "{text}");
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let out = didp(&["solve", "--instance", "fix-tsp3", "--algo", "foo"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("foo") && err.contains("Usage"), "{err}");
}

#[test]
fn help_lists_subcommands() {
    let text = stdout(&didp(&["--help"]));
    for sub in ["generate", "solve", "train", "sample", "report"] {
        assert!(text.contains(sub), "{text}");
    }
    assert!(stdout(&didp(&["train", "--help"])).contains("--episodes"));
}

#[test]
fn train_writes_a_loadable_weight_file_usable_as_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.nn");
    let out = didp(&[
        "train", "--domain", "knapsack", "--n", "5", "--episodes", "40", "--algo", "dqn", "--seed", "1", "--out",
        path(&weights),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let params = load_params(&weights).unwrap();
    assert_eq!(params.domain, DomainTag::Knapsack);

    let out = didp(&[
        "solve", "--domain", "knapsack", "--n", "5", "--seed", "3", "--guidance", "dqn", "--weights", path(&weights),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("proved_optimal true"));

    let out = didp(&["solve", "--instance", "fix-tsp3", "--guidance", "dqn", "--weights", path(&weights)]);
    assert!(!out.status.success(), "knapsack weights must not guide a TSP search");
}

#[test]
fn ppo_training_writes_actor_and_critic() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("actor.nn");
    let out = didp(&[
        "train", "--domain", "tsp", "--n", "4", "--episodes", "32", "--algo", "ppo", "--out", path(&weights),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(load_params(&weights).is_ok());
    assert!(load_params(&dir.path().join("actor.nn.critic")).is_ok());
}

#[test]
fn generate_then_solve_from_file_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = didp(&["generate", "--domain", "tsptw", "--n", "6", "--seed", "4", "--count", "2", "--out-dir", path(dir.path())]);
    assert!(out.status.success());
    let files: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(files.len(), 2);

    let results = dir.path().join("r.json");
    let out = didp(&["solve", "--instance", &files[0], "--algo", "apps", "--out", path(&results)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = load_results(&results).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].method, "apps-dual");

    let out = didp(&["report", "--input", path(&results)]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("apps-dual"));
}

#[test]
fn experiment_config_runs_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("results.json");
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            "domain = \"knapsack\"\nn = 8\nseeds = [0, 1]\nalgorithms = [\"cabs\", \"acps\"]\nguidance = [\"dual\", \"greedy\"]\noutput = {:?}\n",
            path(&output)
        ),
    )
    .unwrap();
    let out = didp(&["solve", "--config", path(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_results(&output).unwrap().len(), 8);
    assert!(output.with_extension("csv").exists());

    std::fs::write(&config, "domain = \"knapsack\"\nn = 8\nbogus = 1\n").unwrap();
    assert!(!didp(&["solve", "--config", path(&config)]).status.success());
}

#[test]
fn sampling_reports_feasible_rollouts() {
    let out = didp(&["sample", "--instance", "fix-tsptw3", "--guidance", "dual", "--count", "64"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("feasible"), "{text}");
}
