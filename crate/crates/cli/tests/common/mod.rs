#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const EPOCH: &str = "1700000000";

pub fn ml100k_dir() -> PathBuf {
    let dir = match std::env::var_os("ML100K_DIR") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k"),
    };
    assert!(
        dir.join("u.data").exists(),
        "ml-100k not found at {}; set ML100K_DIR or run scripts/reconstruct_ml100k.py data/ml-100k",
        dir.display()
    );
    dir.canonicalize().unwrap()
}

/// Runs the binary in `cwd` with a fixed SOURCE_DATE_EPOCH.
pub fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repurpose"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .output()
        .expect("binary runs")
}

/// Like [`run_in`] but panics with the captured stderr on a non-zero exit.
pub fn ok_in(cwd: &Path, args: &[&str]) -> String {
    let out = run_in(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every regular file under `root`, keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                acc.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

/// Small generic-layout catalogue: genres A, B, C over 12 items and 40
/// users with profiles.
pub fn write_fixture(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut items = String::from("item_id,title,A,B,C\n");
    for i in 1..=12u32 {
        let flags = match i {
            1..=5 => "1,0,0",
            6..=8 => "0,1,0",
            9..=10 => "1,1,0",
            _ => "0,0,1",
        };
        items.push_str(&format!("{i},item {i},{flags}\n"));
    }
    fs::write(dir.join("items.csv"), items).unwrap();

    let mut users = String::from("user_id,age,gender,occupation,zip\n");
    let mut ratings = String::from("user_id,item_id,rating,timestamp\n");
    for u in 1..=40u32 {
        let gender = if u % 3 == 0 { "F" } else { "M" };
        users.push_str(&format!("{u},{},{gender},other,00000\n", 15 + u));
        for i in 1..=12u32 {
            if (u * 5 + i * 3) % 4 != 0 {
                let r = 1 + (u * 7 + i * 11) % 5;
                ratings.push_str(&format!("{u},{i},{r},{}\n", 1000 + u * 100 + i));
            }
        }
    }
    fs::write(dir.join("users.csv"), users).unwrap();
    fs::write(dir.join("ratings.csv"), ratings).unwrap();
}
