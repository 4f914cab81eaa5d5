//! The checked-in fuzz seeds must stay valid: each one parses with the
//! decoder its directory is named after.

use std::path::PathBuf;
use swingup::checkpoint::Checkpoint;
use swingup::config::parse_config;
use swingup::eval::RobustnessReport;
use swingup::traj::Trajectory;

fn corpus(dir: &str) -> Vec<PathBuf> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(dir);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap_or_else(|e| panic!("missing corpus {}: {e}", root.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {dir}");
    files
}

#[test]
fn checkpoint_seeds_decode() {
    for path in corpus("checkpoint_decode") {
        let bytes = std::fs::read(&path).unwrap();
        let ck = Checkpoint::from_bytes(&bytes)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ck.to_bytes(), bytes, "{} is not canonical", path.display());
    }
}

#[test]
fn trajectory_seeds_parse() {
    for path in corpus("trajectory_csv") {
        let bytes = std::fs::read(&path).unwrap();
        Trajectory::read_csv(&bytes[..])
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn robustness_seeds_parse() {
    for path in corpus("robustness_csv") {
        let text = std::fs::read_to_string(&path).unwrap();
        RobustnessReport::from_csv_str(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn config_seeds_run_the_parser_without_panicking() {
    let mut full_parses = 0;
    for path in corpus("run_config_toml") {
        let text = std::fs::read_to_string(&path).unwrap();
        // seeds may carry a NUL-separated override, mirroring the harness;
        // truncated seeds may fail to parse, but must not panic
        let ok = match text.split_once('\0') {
            Some((body, along)) => parse_config(body, &[along.to_string()]).is_ok(),
            None => parse_config(&text, &[]).is_ok(),
        };
        full_parses += ok as usize;
    }
    assert!(full_parses >= 1, "at least one seed should be a complete config");
}
