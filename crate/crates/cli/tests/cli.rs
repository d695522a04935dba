use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn valveseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valveseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn assert_single_line_error(o: &Output, code: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {code}")), "{err}");
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = valveseg(&["gen-data", "--n", "10", "--seed", "0", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 1 + 10 * 5);
    assert_eq!(ta, tb);
}

#[test]
fn eval_single_mode_without_single_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("content.vnet");
    assert!(
        valveseg(&["gen-data", "--n", "2", "--size", "16", "--out", data.to_str().unwrap()])
            .status
            .success()
    );
    let o = valveseg(&[
        "train",
        "--role",
        "content",
        "--level",
        "3",
        "--data",
        data.to_str().unwrap(),
        "--steps",
        "0",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = valveseg(&[
        "eval",
        "--mode",
        "single",
        "--level",
        "3",
        "--data",
        data.to_str().unwrap(),
        "--content",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_single_line_error(&o, "missing_checkpoint");
    assert!(stderr(&o).contains("single-net checkpoint"));

    let o = valveseg(&[
        "eval",
        "--mode",
        "modular",
        "--data",
        data.to_str().unwrap(),
        "--content",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_single_line_error(&o, "missing_checkpoint");
    assert!(stderr(&o).contains("vessel-net checkpoint"));
}

#[test]
fn train_eval_infer_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert!(valveseg(&[
        "gen-data",
        "--n",
        "3",
        "--size",
        "16",
        "--seed",
        "4",
        "--out",
        &p("data")
    ])
    .status
    .success());
    for role in ["vessel", "content", "single"] {
        let o = valveseg(&[
            "train",
            "--role",
            role,
            "--level",
            "solid-liquid",
            "--data",
            &p("data"),
            "--steps",
            "2",
            "--set",
            "batch=2",
            "--set",
            "eval_interval=1",
            "--out",
            &p(&format!("{role}.vnet")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let log = fs::read_to_string(p(&format!("{role}.csv"))).unwrap();
        assert_eq!(log.lines().count(), 3);
    }
    for mode in ["single", "modular", "modular-gt"] {
        let o = valveseg(&[
            "eval",
            "--mode",
            mode,
            "--data",
            &p("data"),
            "--single",
            &p("single.vnet"),
            "--vessel",
            &p("vessel.vnet"),
            "--content",
            &p("content.vnet"),
            "--overlays",
            "--out",
            &p(mode),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(dir.path().join(mode).join("overlays").read_dir().unwrap().count() == 3);
    }
    let inputs: Vec<String> = ["single", "modular", "modular-gt"]
        .iter()
        .map(|m| p(&format!("{m}/report.csv")))
        .collect();
    let mut args = vec!["report", "--out", "REPLACE", "--inputs"];
    let out = p("table.csv");
    args[2] = &out;
    args.extend(inputs.iter().map(String::as_str));
    let o = valveseg(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&out).unwrap();
    assert!(table.starts_with("level,class,single,modular,modular-gt\n"));
    assert_eq!(table.lines().count(), 5);

    let image = dir
        .path()
        .join("data/images")
        .read_dir()
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let o = valveseg(&[
        "infer",
        "--mode",
        "modular",
        "--image",
        image.to_str().unwrap(),
        "--vessel",
        &p("vessel.vnet"),
        "--content",
        &p("content.vnet"),
        "--out",
        &p("pred.png"),
        "--overlay",
        &p("over.png"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("pred.png").exists() && dir.path().join("over.png").exists());
}

#[test]
fn gradcheck_passes() {
    let o = valveseg(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("valve_layer"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_are_single_line() {
    assert_single_line_error(&valveseg(&["gen-data", "--bogus"]), "usage");
    assert_single_line_error(
        &valveseg(&["eval", "--mode", "x", "--data", "d", "--out", "o"]),
        "usage",
    );
    let o = valveseg(&[
        "train",
        "--role",
        "single",
        "--data",
        "/nonexistent/dir",
        "--out",
        "x.vnet",
    ]);
    assert_single_line_error(&o, "dataset");
}

#[test]
fn unreadable_checkpoint_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(
        valveseg(&["gen-data", "--n", "1", "--size", "16", "--out", data.to_str().unwrap()])
            .status
            .success()
    );
    let bogus = dir.path().join("bogus.vnet");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = valveseg(&[
        "eval",
        "--mode",
        "single",
        "--data",
        data.to_str().unwrap(),
        "--single",
        bogus.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_single_line_error(&o, "not_a_checkpoint");
}
