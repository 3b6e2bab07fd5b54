//! Runs every example binary that `cargo test` builds alongside this test.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [&str; 9] = [
    "voxel_geometry",
    "dataset",
    "part_composition",
    "implicit_decoder",
    "suggestion_models",
    "synthesis",
    "metrics",
    "service",
    "pipeline",
];

fn examples_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().join("examples")
}

#[test]
fn every_example_runs() {
    let dir = examples_dir();
    for name in EXAMPLES {
        let path = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
        assert!(path.exists(), "{} was not built", path.display());
        let out = Command::new(&path).output().unwrap();
        assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty(), "{name} printed nothing");
    }
}
