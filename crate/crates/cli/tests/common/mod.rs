#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn scenario(name: &str) -> String {
    root().join("scenarios").join(name).display().to_string()
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the binary with `--out out` prepended, from the workspace root.
pub fn relaynet(out: &Path, args: &[&str]) -> Run {
    let o = Command::new(env!("CARGO_BIN_EXE_relaynet"))
        .current_dir(root())
        .env_remove("RELAYNET_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: o.status.code().expect("exited"),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

/// Every file of a directory, by name.
pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The experiments whose artifacts must not depend on anything but flags.
pub fn experiments() -> Vec<(&'static str, Vec<String>)> {
    let s = |n: &str| scenario(n);
    vec![
        ("linkmodel", vec!["linkmodel".into(), "--preset".into(), "yard".into(), "--seed".into(), "3".into()]),
        ("design", vec!["design".into(), "--scenario".into(), s("lab24.json"), "--k".into(), "2".into()]),
        (
            "iterate",
            vec!["iterate".into(), "--scenario".into(), s("indoor1.json"), "--preset".into(), "indoor".into(), "--seed".into(), "7".into()],
        ),
        (
            "robustness",
            vec!["robustness".into(), "--scenario".into(), s("lab24.json"), "--k".into(), "2".into(), "--seeds".into(), "3".into()],
        ),
        ("rpl-compare", vec!["rpl-compare".into(), "--seed".into(), "2".into(), "--days".into(), "1".into()]),
        ("macsim", vec!["macsim".into(), "--scenario".into(), s("two_route.json"), "--seed".into(), "4".into()]),
        ("plots", vec!["plots".into(), "--kind".into(), "pbad_curve".into(), "--preset".into(), "indoor".into()]),
    ]
}
