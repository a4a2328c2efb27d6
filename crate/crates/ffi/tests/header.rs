use std::path::PathBuf;
use std::process::Command;

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/hybrid_htf.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).expect("header generated by build script");
    for name in [
        "hh_last_error_message",
        "hh_default_params",
        "hh_model_new",
        "hh_model_free",
        "hh_model_eval_chart",
        "hh_cycle_settle",
        "hh_cycle_free",
        "hh_cycle_summary",
        "hh_cycle_samples",
        "hh_htf_theory",
        "hh_identify",
        "hh_fit",
        "hh_htf_len",
        "hh_htf_grid",
        "hh_htf_harmonic",
        "hh_htf_free",
        "HH_STATUS_OK = 0",
        "typedef struct HhModel HhModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header())
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}
