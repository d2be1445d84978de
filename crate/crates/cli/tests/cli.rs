use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isac-sar"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn single_cell_commands_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("desk_los.toml");
    for cmd in ["render", "estimate", "image"] {
        let (code, text) = run(bin()
            .arg(cmd)
            .arg("--scenario")
            .arg(&sc)
            .arg("--out")
            .arg(dir.path())
            .args(["--seed", "4", "--snr", "15"]));
        assert_eq!(code, 0, "{cmd}: {text}");
    }
    for f in ["paths.csv", "cube.iq", "waveform.iq", "estimates.csv", "omp_centre.csv", "sage_centre.csv", "image_db.csv", "image.iq"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(lines(&dir.path().join("estimates.csv")), 129);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run(bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(scenario("desk_nlos.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--seed", "2", "--method", "raw", "--method", "omp_sage", "--strict"]));
    assert_eq!(code, 0, "{text}");
    assert_eq!(lines(&dir.path().join("records.csv")), 1 + 2 * 5);
    assert_eq!(lines(&dir.path().join("summary.csv")), 1 + 2 * 5);
    assert!(dir.path().join("manifest.json").is_file());

    let (code, text) = run(bin().arg("report").arg("--records").arg(dir.path().join("records.csv")));
    assert_eq!(code, 0);
    let written = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text, written);
}

#[test]
fn bad_input_fails_cleanly() {
    let (code, text) = run(bin().args(["image", "--scenario", "/nonexistent.toml"]));
    assert_eq!(code, 1);
    assert!(text.contains("error"));
    let (code, _) = run(bin().args(["estimate", "--method", "raw", "--scenario"]).arg(scenario("desk_los.toml")));
    assert_eq!(code, 1);
    let (code, _) = run(bin().args(["image", "--method", "bogus", "--scenario"]).arg(scenario("desk_los.toml")));
    assert_eq!(code, 2);
}
