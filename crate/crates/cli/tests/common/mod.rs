#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn scoreq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scoreq"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn scoreq")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str], cwd: &Path) -> String {
    let out = scoreq(args, cwd);
    assert!(
        out.status.success(),
        "scoreq {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The parsed stderr error object of a failed run.
pub fn err(args: &[&str], cwd: &Path) -> (i32, serde_json::Value) {
    let out = scoreq(args, cwd);
    assert!(!out.status.success(), "scoreq {args:?} unexpectedly succeeded");
    let text = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.trim())
        .unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"));
    (out.status.code().unwrap(), v["error"].clone())
}

/// A small corpus in `dir/data`.
pub fn small_corpus(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", "data", "--samples-per-family", "40", "--frames", "8"];
    args.extend_from_slice(extra);
    ok(&args, dir);
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
