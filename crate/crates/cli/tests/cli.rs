use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_shiftcp");

const SMALL: &str = r#"{
  "train_samples": 300,
  "cal_samples": 200,
  "test_samples": 150,
  "trials": 2,
  "shifts": [0.0, 4.0],
  "vae": { "epochs": 5, "learning_rate": 0.001 },
  "probe": { "epochs": 40 }
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.json");
        fs::write(&config, SMALL).unwrap();
        Self {
            _dir: dir,
            root,
            config,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// synth + vae train + losses for cal and test.
    fn pipeline(&self, data: &str, shift: &str) -> PathBuf {
        let d = self.path(data);
        let cfg = s(&self.config);
        ok(&[
            "--config",
            cfg,
            "--seed",
            "5",
            "synth",
            "--out",
            s(&d),
            "--shift-sigma",
            shift,
        ]);
        let ckpt = d.join("vae.ckpt");
        ok(&[
            "--config",
            cfg,
            "--seed",
            "5",
            "vae",
            "train",
            "--features",
            s(&d.join("train.csv")),
            "--out",
            s(&ckpt),
        ]);
        for split in ["cal", "test"] {
            ok(&[
                "vae",
                "losses",
                "--checkpoint",
                s(&ckpt),
                "--features",
                s(&d.join(format!("{split}.csv"))),
                "--out",
                s(&d.join(format!("{split}_losses.csv"))),
            ]);
        }
        d
    }
}

fn calibrate(fx: &Fixture, d: &Path, method: &str, test: &str, tag: &str) -> (PathBuf, PathBuf) {
    let sets = d.join(format!("sets_{tag}.csv"));
    let thr = d.join(format!("thr_{tag}.json"));
    ok(&[
        "--config",
        s(&fx.config),
        "--method",
        method,
        "cp",
        "calibrate-predict",
        "--cal-probs",
        s(&d.join("cal_probs.csv")),
        "--test-probs",
        s(&d.join(format!("{test}_probs.csv"))),
        "--cal-losses",
        s(&d.join("cal_losses.csv")),
        "--test-losses",
        s(&d.join(format!("{test}_losses.csv"))),
        "--cal-ratios",
        s(&d.join("cal_ratios.csv")),
        "--out-sets",
        s(&sets),
        "--out-threshold",
        s(&thr),
    ]);
    (sets, thr)
}

#[test]
fn synth_is_seed_deterministic_and_sized() {
    let fx = Fixture::new();
    let a = fx.path("a");
    let b = fx.path("b");
    for d in [&a, &b] {
        ok(&[
            "--config",
            s(&fx.config),
            "--seed",
            "9",
            "synth",
            "--out",
            s(d),
            "--cal-samples",
            "120",
        ]);
    }
    for f in [
        "train.csv",
        "cal.csv",
        "test.csv",
        "cal_probs.csv",
        "test_probs.csv",
        "cal_ratios.csv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = shiftcp::io::read_manifest(&a.join("manifest.json")).unwrap();
    let rows: Vec<usize> = manifest.splits.iter().map(|s| s.rows).collect();
    assert_eq!(rows, vec![300, 120, 150]);
    assert_eq!(manifest.seed, 9);

    let c = fx.path("c");
    ok(&[
        "--config",
        s(&fx.config),
        "--seed",
        "10",
        "synth",
        "--out",
        s(&c),
    ]);
    assert_ne!(
        fs::read(a.join("test.csv")).unwrap(),
        fs::read(c.join("test.csv")).unwrap()
    );
}

#[test]
fn vae_outputs_are_reproducible() {
    let fx = Fixture::new();
    let d = fx.pipeline("data", "0");
    let losses = shiftcp::io::read_losses(&d.join("test_losses.csv")).unwrap();
    assert_eq!(losses.ids.len(), 150);

    let again = d.join("again.ckpt");
    ok(&[
        "--config",
        s(&fx.config),
        "--seed",
        "5",
        "vae",
        "train",
        "--features",
        s(&d.join("train.csv")),
        "--out",
        s(&again),
    ]);
    assert_eq!(
        fs::read(d.join("vae.ckpt")).unwrap(),
        fs::read(&again).unwrap()
    );
    let ckpt = shiftcp::vae::read_checkpoint(&again).unwrap();
    assert_eq!(ckpt.beta, 1.2);
}

#[test]
fn every_method_writes_valid_outputs() {
    let fx = Fixture::new();
    let d = fx.pipeline("data", "2");
    for method in ["split", "rlscp", "wqlcp", "wcp-oracle"] {
        let (sets, thr) = calibrate(&fx, &d, method, "test", method);
        let table = shiftcp::io::read_prediction_sets(&sets).unwrap();
        assert_eq!(table.ids.len(), 150);
        let record: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(thr).unwrap()).unwrap();
        assert_eq!(record["method"], method);
        assert_eq!(record["alpha"], 0.1);
    }
    let thr: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("thr_wqlcp.json")).unwrap()).unwrap();
    assert_eq!(thr["weight_mode"], "per-sample");
    assert_eq!(thr["epsilon"], 1e-8);
}

#[test]
fn rlscp_matches_split_on_in_distribution_test() {
    let fx = Fixture::new();
    let d = fx.pipeline("data", "0");
    // the calibration split is its own in-distribution test batch: RL_test = 1
    let (split, _) = calibrate(&fx, &d, "split", "cal", "split");
    let (rlscp, thr) = calibrate(&fx, &d, "rlscp", "cal", "rlscp");
    assert_eq!(fs::read(split).unwrap(), fs::read(rlscp).unwrap());
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(thr).unwrap()).unwrap();
    assert_eq!(record["scale"], 1.0);
}

#[test]
fn evaluate_reports_hand_checked_cells() {
    let fx = Fixture::new();
    let sets = fx.path("sets.csv");
    fs::write(
        &sets,
        "id,label,covered,set_size,members\na,2,1,2,1;2\nb,1,0,1,3\nc,0,1,1,0\n",
    )
    .unwrap();
    let labels = fx.path("labels.csv");
    fs::write(&labels, "id,label,p0\nc,0,1\nb,1,1\na,2,1\n").unwrap();
    let csv = fx.path("eval.csv");
    let args = [
        "--method",
        "rlscp",
        "--score",
        "aps",
        "evaluate",
        "--sets",
        s(&sets),
        "--labels",
        s(&labels),
        "--shift-name",
        "mild",
        "--out-csv",
        s(&csv),
    ];
    let stdout = ok(&args);
    assert!(stdout.contains("0.6667 / 1.3333"), "{stdout}");
    let first = fs::read(&csv).unwrap();
    assert_eq!(
        String::from_utf8(first.clone()).unwrap(),
        "method,score,shift,alpha,trials,coverage,avg_set_size,severity,cell\n\
         rlscp,aps,mild,0.1,1,0.6667,1.3333,,0.6667 / 1.3333\n"
    );
    ok(&args);
    assert_eq!(fs::read(&csv).unwrap(), first);

    let wrong = fx.path("wrong.csv");
    fs::write(&wrong, "id,label\na,2\nb,1\nz,0\n").unwrap();
    assert_eq!(
        code(&["evaluate", "--sets", s(&sets), "--labels", s(&wrong)]),
        1
    );
}

#[test]
fn bench_reruns_are_byte_identical() {
    let fx = Fixture::new();
    let (a, b) = (fx.path("a"), fx.path("b"));
    for d in [&a, &b] {
        ok(&[
            "--config",
            s(&fx.config),
            "--score",
            "thr",
            "bench",
            "--out",
            s(d),
        ]);
    }
    for f in [
        "report.csv",
        "report.json",
        "trials.csv",
        "plot.csv",
        "config.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    // 4 methods x 1 score x 2 shifts, plus the header
    assert_eq!(report.lines().count(), 1 + 4 * 2);
    let trials = fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 4 * 2 * 2);
}

#[test]
fn exit_codes_distinguish_failures() {
    let fx = Fixture::new();
    assert_eq!(
        code(&["--alpha", "1.5", "bench", "--out", s(&fx.path("x"))]),
        1
    );
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--method", "bogus", "bench", "--out", "x"]), 1);
    assert_eq!(code(&["--help"]), 0);

    let d = fx.path("d");
    ok(&["--config", s(&fx.config), "synth", "--out", s(&d)]);
    let out = run(&[
        "--method",
        "wqlcp",
        "cp",
        "calibrate-predict",
        "--cal-probs",
        s(&d.join("cal_probs.csv")),
        "--test-probs",
        s(&d.join("test_probs.csv")),
        "--out-sets",
        s(&d.join("s.csv")),
        "--out-threshold",
        s(&d.join("t.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vae losses"));

    let huge = fx.path("huge.csv");
    let mut text = String::from("id,label,x0,x1\n");
    for i in 0..64 {
        text.push_str(&format!("s{i},0,1e200,-1e200\n"));
    }
    fs::write(&huge, text).unwrap();
    let out = run(&[
        "vae",
        "train",
        "--features",
        s(&huge),
        "--out",
        s(&fx.path("h.ckpt")),
        "--epochs",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn flags_override_config_file() {
    let fx = Fixture::new();
    let d = fx.path("d");
    let cfg = fx.path("alt.json");
    fs::write(&cfg, r#"{"alpha": 0.3, "method": "split", "train_samples": 100, "cal_samples": 50, "test_samples": 40, "probe": {"epochs": 5}}"#).unwrap();
    ok(&["--config", s(&cfg), "synth", "--out", s(&d)]);
    let (cal_probs, test_probs) = (d.join("cal_probs.csv"), d.join("test_probs.csv"));
    let run_cp = |extra: &[&str], tag: &str| {
        let thr = d.join(format!("{tag}.json"));
        let mut args = vec!["--config", s(&cfg)];
        args.extend_from_slice(extra);
        let sets = d.join(format!("{tag}.csv"));
        args.extend_from_slice(&[
            "cp",
            "calibrate-predict",
            "--cal-probs",
            s(&cal_probs),
            "--test-probs",
            s(&test_probs),
            "--out-sets",
            s(&sets),
            "--out-threshold",
            s(&thr),
        ]);
        ok(&args);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(thr).unwrap()).unwrap();
        v
    };
    assert_eq!(run_cp(&[], "file")["alpha"], 0.3);
    assert_eq!(run_cp(&["--alpha", "0.2"], "flag")["alpha"], 0.2);
}
