//! The shipped run files must stay in lockstep with the built-in runs:
//! identical except for their per-robot output directories.

use std::path::PathBuf;
use swingup::config::{load_config, RunConfig};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

#[test]
fn pendubot_asset_matches_builtin() {
    let got = load_config(Some(&asset("pendubot.toml")), &[]).unwrap();
    let mut want = RunConfig::pendubot();
    want.out_dir = "out/pendubot".into();
    want.finalize();
    assert_eq!(got, want);
}

#[test]
fn acrobot_asset_matches_builtin() {
    let got = load_config(Some(&asset("acrobot.toml")), &[]).unwrap();
    let mut want = RunConfig::acrobot();
    want.out_dir = "out/acrobot".into();
    want.finalize();
    assert_eq!(got, want);
}
