//! Running the `einad` binary from integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn data(name: &str) -> PathBuf {
    manifest().join("tests/data").join(format!("{name}.json"))
}

pub fn einad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_einad"))
        .args(args)
        .output()
        .unwrap()
}

/// Runs a command expected to succeed and returns its stdout.
pub fn ok(args: &[&str]) -> String {
    let out = einad(args);
    assert!(
        out.status.success(),
        "einad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    einad(args).status.code().unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One invocation of every subcommand, writing into `dir`.
pub fn every_subcommand(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut outputs = Vec::new();
    let mut run = |tag: &str, args: Vec<String>| {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = einad(&args);
        assert!(
            out.status.success(),
            "{tag}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((format!("{tag} stdout"), out.stdout));
        outputs.push((format!("{tag} stderr"), out.stderr));
    };
    let d = |name: &str| dir.join(name).display().to_string();
    let cpd = s(&data("cpd_loss")).to_string();
    run(
        "optimize",
        vec![
            "optimize".into(),
            s(&data("kronecker8")).into(),
            "--dump-after".into(),
            "all".into(),
            "--dump-dir".into(),
            d(""),
        ],
    );
    run(
        "derive",
        vec![
            "derive".into(),
            cpd.clone(),
            "--mode".into(),
            "hessian".into(),
            "--optimize".into(),
            "--out".into(),
            d("hess.json"),
        ],
    );
    for mode in ["jvp", "vjp", "hvp"] {
        run(
            mode,
            vec![
                "derive".into(),
                cpd.clone(),
                "--mode".into(),
                mode.into(),
                "--optimize".into(),
            ],
        );
    }
    run(
        "run",
        vec![
            "run".into(),
            d("hess.json"),
            "--seed".into(),
            "11".into(),
            "--count-flops".into(),
            "--optimize".into(),
        ],
    );
    run("dot", vec!["dot".into(), cpd.clone()]);
    for method in ["cpd-als", "cpd-gn", "tucker", "dmrg"] {
        run(
            method,
            vec![
                "bench".into(),
                method.into(),
                "--order".into(),
                "3".into(),
                "--size".into(),
                "3".into(),
                "--rank".into(),
                "2".into(),
                "--iters".into(),
                "3".into(),
                "--seed".into(),
                "9".into(),
            ],
        );
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(files
        .iter()
        .any(|f| f.extension().is_some_and(|e| e == "dot")));
    for f in files {
        outputs.push((
            f.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&f).unwrap(),
        ));
    }
    outputs
}
