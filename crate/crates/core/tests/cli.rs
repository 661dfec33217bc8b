use std::path::Path;
use std::process::{Command, Output};

use ve_adapt::bench::{gen_benchmark, read_dataset, BenchConfig};
use ve_adapt::eval::MetricsRow;

const SMALL: &[&str] = &[
    "--bench.classes=4",
    "--bench.n_source_per_class=4",
    "--bench.n_target_test_per_class=3",
    "--train.epochs=3",
    "--model.hidden_dims=16",
    "--model.embed_dim=8",
];

fn run(args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ve-adapt"))
        .args(args)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_writes_the_configured_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("d.txt");
    let o = run(&["gen", "--out", p(&file)], SMALL);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = BenchConfig {
        classes: 4,
        n_source_per_class: 4,
        n_target_test_per_class: 3,
        ..BenchConfig::default()
    };
    assert!(read_dataset(&file).unwrap().examples == gen_benchmark(&cfg).unwrap().examples);
}

#[test]
fn train_eval_and_pca_share_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    let run_dir = dir.path().join("run");
    assert_eq!(code(&run(&["gen", "--out", p(&data)], SMALL)), 0);

    let o = run(&["train", "--regime", "ve-r+s", "--data", p(&data), "--out", p(&run_dir)], SMALL);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trained = MetricsRow::parse_csv(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(trained[0].regime, "VeRS");
    for f in ["model.ckpt", "report.csv", "report.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["checkpoint"].as_str().unwrap().ends_with("model.ckpt"));

    let ckpt = run_dir.join("model.ckpt");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--label", "VeRS"], SMALL);
    assert_eq!(code(&o), 0);
    let evaluated = MetricsRow::parse_csv(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!((evaluated[0].top1, evaluated[0].top5), (trained[0].top1, trained[0].top5));

    let pca_dir = dir.path().join("pca");
    let o = run(&["pca", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&pca_dir)], SMALL);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(pca_dir.join("pca.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,label"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert!(std::fs::read_to_string(pca_dir.join("pca.svg")).unwrap().starts_with("<?xml"));
}

#[test]
fn grid_tables_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run(
        &["grid", "--out", p(&out), "--grid.regimes=ClR,VeRS", "--grid.seeds=0,1"],
        SMALL,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = MetricsRow::parse_csv(&std::fs::read_to_string(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| 0.0 <= r.top1 && r.top1 <= r.top5 && r.top5 <= 100.0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"], 0);
}

#[test]
fn failed_runs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // VeRS needs synthetic data in some pool; one-shot routing has none
    let o = run(
        &[
            "grid",
            "--out",
            p(&dir.path().join("g")),
            "--grid.regimes=ClR,VeRS",
            "--grid.seeds=0",
            "--routing.preset=one-shot",
        ],
        SMALL,
    );
    assert_eq!(code(&o), 1);
    let rows =
        MetricsRow::parse_csv(&std::fs::read_to_string(dir.path().join("g/results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let missing = run(&["eval", "--checkpoint", p(&dir.path().join("none.ckpt"))], SMALL);
    assert_eq!(code(&missing), 1);
}

#[test]
fn invalid_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_file = dir.path().join("bad.toml");
    std::fs::write(&bad_file, "[bench]\ncolors = 3\n").unwrap();
    for args in [
        vec!["grid", "--bench.classes=lots"],
        vec!["grid", "--grid.seeds=[]"],
        vec!["grid", "--preset", "turbo"],
        vec!["grid", "--config", p(&bad_file)],
        vec!["train", "--regime", "cl-x", "--out", "unused"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&run(&args, &[])), 2, "{args:?}");
    }
}

#[test]
fn print_config_round_trips() {
    let o = run(&["--print-config", "--preset", "paper-hparams", "check", "--instances", "2"], &[]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let toml_part: String = text.lines().take_while(|l| !l.starts_with("PASS")).collect::<Vec<_>>().join("\n");
    let cfg: ve_adapt::config::Config = toml::from_str(&toml_part).unwrap();
    assert_eq!(cfg.train.lr_base, 3e-5);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
