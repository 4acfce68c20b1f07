#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"
particles = 4
seed = 11

[batch]
size = 6

[schedule]
steps = 60
widen = 2.0

[[constraints]]
kind = "distance"
atoms = [0, 1]
lower = 1.2
upper = 1.6

[[constraints]]
kind = "distance"
atoms = [1, 2]
exact = 1.5

[[constraints]]
kind = "or"
children = [
  { kind = "distance", atoms = [2, 3], lower = 1.0, upper = 1.2 },
  { kind = "distance", atoms = [2, 3], lower = 2.0, upper = 2.2 },
]
"#;

pub fn shakegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shakegen"))
        .args(args)
        .output()
        .expect("spawn shakegen")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit status")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// File name to contents, for comparing output directories.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
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

pub fn xyz_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
