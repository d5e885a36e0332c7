use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use riskgraph_cli::{RunConfig, CONFIG_FILE, TOOL_VERSION};

const BIN: &str = env!("CARGO_BIN_EXE_riskgraph");

/// Timings differ run to run; every other artifact must not.
const VOLATILE: [&str; 2] = ["bench.txt", "bench.json"];

fn riskgraph(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env_remove("RISKGRAPH_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = riskgraph(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs a subcommand, then re-runs it from the config it wrote and compares
/// every output file byte for byte.
fn rerun_matches(name: &str, args: &[&str], root: &Path) -> PathBuf {
    let first = root.join(format!("{name}-1"));
    let second = root.join(format!("{name}-2"));
    let mut a = vec![name];
    a.extend_from_slice(args);
    a.extend(["--out", s(&first)]);
    ok(&a);
    let cfg = first.join(CONFIG_FILE);
    ok(&[name, "--config", s(&cfg), "--out", s(&second)]);
    let (x, y) = (files(&first), files(&second));
    assert_eq!(
        x.keys().collect::<Vec<_>>(),
        y.keys().collect::<Vec<_>>(),
        "{name}"
    );
    for (k, v) in &x {
        if !VOLATILE.contains(&k.as_str()) {
            assert!(v == &y[k], "{name}: {k} differs between runs");
        }
    }
    let text = String::from_utf8(x[CONFIG_FILE].clone()).unwrap();
    assert!(text.starts_with(&format!("# {TOOL_VERSION}\n")));
    toml::from_str::<RunConfig>(&text).unwrap();
    first
}

#[test]
fn every_subcommand_reproduces_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let base = root.join("base.toml");
    std::fs::write(
        &base,
        "seed = 3\n[train]\nepochs = 3\n[eval]\nkitchen_scenes = 3\nbathroom_scenes = 2\n",
    )
    .unwrap();
    let cfg = ["--config", s(&base)];

    let data = rerun_matches(
        "gen-data",
        &[&cfg[..], &["--scenes", "40", "--split", "30,5,5"]].concat(),
        root,
    );
    let d = ["--data", s(&data)];
    let ann = rerun_matches("annotate", &cfg, root);
    let cache = ann.join("risk_cache.json");
    rerun_matches(
        "build-graphs",
        &[&cfg[..], &d, &["--cache", s(&cache)]].concat(),
        root,
    );
    let trained = rerun_matches("train", &[&cfg[..], &d].concat(), root);
    let ckpt = trained.join("model.ckpt");
    let m = ["--checkpoint", s(&ckpt)];
    rerun_matches(
        "eval-model",
        &[&cfg[..], &d, &m, &["--threshold", "0.21"]].concat(),
        root,
    );
    for backend in ["mock", "safe-prompt", "ltl"] {
        let out = rerun_matches(
            "run-episode",
            &[&cfg[..], &m, &["--backend", backend]].concat(),
            root,
        );
        std::fs::rename(&out, root.join(format!("episode-{backend}"))).unwrap();
        std::fs::remove_dir_all(root.join("run-episode-2")).unwrap();
    }
    rerun_matches("eval-plan", &[&cfg[..], &m].concat(), root);
    let bench = rerun_matches("bench", &[&cfg[..], &m, &["--entities", "20"]].concat(), root);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(bench.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["entities"], 20);
    assert_eq!(report["stages"].as_array().unwrap().len(), 5);
}

#[test]
fn training_without_a_checkpoint_matches_the_train_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let base = root.join("base.toml");
    std::fs::write(
        &base,
        "seed = 2\n[dataset]\nscenes = 24\nsplit = [16, 4, 4]\n[train]\nepochs = 2\n",
    )
    .unwrap();
    let t = root.join("t");
    ok(&["train", "--config", s(&base), "--out", s(&t)]);
    let (a, b) = (root.join("a"), root.join("b"));
    ok(&["run-episode", "--config", s(&base), "--out", s(&a)]);
    ok(&[
        "run-episode",
        "--config",
        s(&base),
        "--checkpoint",
        s(&t.join("model.ckpt")),
        "--out",
        s(&b),
    ]);
    assert_eq!(
        std::fs::read(a.join("trace.json")).unwrap(),
        std::fs::read(b.join("trace.json")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.toml");
    std::fs::write(&base, "seed = 3\n[graph]\ndt = 0.4\n").unwrap();
    let out = dir.path().join("o");
    ok(&[
        "annotate",
        "--config",
        s(&base),
        "--seed",
        "9",
        "--sp-mode",
        "paper-literal",
        "--gamma",
        "1.5",
        "--alpha-pos",
        "0.75",
        "--threshold",
        "0.3",
        "--out",
        s(&out),
    ]);
    let c: RunConfig = toml::from_str(&std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!((c.seed, c.model.seed, c.train.seed), (9, 9, 9));
    assert_eq!(c.graph.dt, 0.4);
    assert_eq!(c.graph.sp_mode, riskgraph::graph::SpMode::PaperLiteral);
    assert_eq!((c.train.gamma, c.train.alpha_pos), (1.5, 0.75));
    assert_eq!((c.episode.threshold, c.eval.threshold), (0.3, Some(0.3)));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    assert_eq!(riskgraph(&["--help"]).status.code(), Some(0));
    assert_eq!(riskgraph(&["gen-data", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(riskgraph(&["launch"]).status.code(), Some(2));
    assert_eq!(
        riskgraph(&["gen-data", "--split", "1,2", "--out", &out("a")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        riskgraph(&["gen-data", "--split", "1,2,3", "--out", &out("b")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        riskgraph(&["run-episode", "--task", "juggle", "--out", &out("c")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        riskgraph(&["train", "--data", &out("missing"), "--out", &out("d")])
            .status
            .code(),
        Some(1)
    );

    // No key in the environment: the http backend refuses before any request.
    let o = riskgraph(&["run-episode", "--backend", "http", "--out", &out("e")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("RISKGRAPH_LLM_API_KEY"));
    // The key is never accepted as a flag.
    assert_eq!(
        riskgraph(&["run-episode", "--api-key", "x"]).status.code(),
        Some(2)
    );
}
