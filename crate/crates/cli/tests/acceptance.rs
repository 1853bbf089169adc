//! Acceptance criterion 7: every command, run twice with the same seed,
//! produces byte-identical output files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn run(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_tcsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("TCSIM_CONFIG")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success() || out.status.code() == Some(10),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tcsim-accept-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn identical(dir: &Path, a: &str, b: &str) -> bool {
    std::fs::read(dir.join(a)).unwrap() == std::fs::read(dir.join(b)).unwrap()
}

#[test]
fn criterion_7_fixed_seed_outputs_are_byte_identical() {
    let dir = tempdir("determinism");

    for out in ["m1.csv", "m2.csv"] {
        run(
            &[
                "channel",
                "--component",
                "bht",
                "--mitigation",
                "none",
                "--secrets",
                "17",
                "--samples",
                "50",
                "--noise",
                "6",
                "--seed",
                "42",
                "--out",
                out,
            ],
            &dir,
        );
    }
    let channel_ok = identical(&dir, "m1.csv", "m2.csv");

    for out in ["r1.json", "r2.json"] {
        run(&["analyze", "m1.csv", "--seed", "42", "--out", out], &dir);
    }
    let analyze_ok = identical(&dir, "r1.json", "r2.json");

    for out in ["h1.pgm", "h2.pgm"] {
        run(&["heatmap", "m1.csv", "--bucket-width", "8", "--out", out], &dir);
    }
    let heatmap_ok = identical(&dir, "h1.pgm", "h2.pgm");

    for out in ["o1.json", "o2.json"] {
        run(
            &[
                "overhead",
                "--workload",
                "pointer_chase",
                "--slice",
                "500000",
                "--slices",
                "3",
                "--seed",
                "42",
                "--out",
                out,
            ],
            &dir,
        );
    }
    let overhead_ok = identical(&dir, "o1.json", "o2.json");

    let ok = channel_ok && analyze_ok && heatmap_ok && overhead_ok;
    println!(
        "criterion 7: {} — byte-identical reruns: channel={channel_ok}, analyze={analyze_ok}, \
         heatmap={heatmap_ok}, overhead={overhead_ok}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok);
}
