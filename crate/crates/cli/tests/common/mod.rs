#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Settings that keep a full pipeline pass to a few seconds.
pub const TINY: &[&str] = &[
    "--threads",
    "1",
    "--synth.scenes",
    "2",
    "--synth.n_primitives",
    "256",
    "--synth.image_size",
    "32",
    "--synth.n_train_views",
    "4",
    "--synth.n_test_views",
    "2",
    "--codec.c_min",
    "32",
    "--codec.finetune.iters",
    "3",
    "--net.width",
    "8",
    "--net.bottleneck",
    "16",
    "--net.mid_blocks",
    "1",
    "--pretrain.steps",
    "6",
    "--pretrain.batch",
    "2",
    "--distill.steps",
    "4",
    "--distill.batch",
    "2",
    "--distill.checkpoint_every",
    "2",
];

pub fn splatfix<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatfix"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawning splatfix")
}

/// Runs a command, panicking with its stderr unless it exits 0.
pub fn run_ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    let out = splatfix(args);
    assert!(
        out.status.success(),
        "{:?} failed with {:?}:\n{}",
        args.iter().map(|a| a.as_ref().to_string_lossy().into_owned()).collect::<Vec<_>>(),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

/// Every file under `dir`, keyed by its relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}
