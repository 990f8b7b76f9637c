#![allow(dead_code)]

use std::path::Path;

use evfi_bench::synth::{generate_dataset, Motion, SynthConfig};
use tempfile::TempDir;

/// Synthetic dataset with the given motions at the default size.
pub fn dataset(motions: &[Motion]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        motions: motions.to_vec(),
        ..SynthConfig::default()
    };
    generate_dataset(dir.path(), &config).unwrap();
    dir
}

pub fn out_dir() -> TempDir {
    tempfile::tempdir().unwrap()
}

pub fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
