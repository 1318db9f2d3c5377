use std::path::Path;

use foliate::cli::run;

fn with_config(text: &str, f: impl FnOnce(&Path, &Path)) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, text).unwrap();
    f(&cfg, &dir.path().join("out"));
}

fn shipped(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

#[test]
fn shipped_config_runs() {
    with_config(&shipped("toy-stable-leaf.toml"), |cfg, out| {
        assert_eq!(run(cfg, Some(out), None), 0);
        let m = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
        assert!(m.contains("status = \"ok\""));
        assert!(out.join("errors.csv").exists());
    });
}

#[test]
fn gap_violation_exits_2() {
    let text = shipped("toy-stable-leaf.toml").replace("delta = 0.2", "delta = 1.0");
    with_config(&text, |cfg, out| {
        assert_eq!(run(cfg, Some(out), None), 2);
        let m = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
        assert!(m.contains("exit_code = 2"));
    });
}

#[test]
fn unknown_key_exits_2() {
    let text = shipped("toy-stable-leaf.toml").replace("[solver]", "[solver]\nbogus = 1");
    with_config(&text, |cfg, out| assert_eq!(run(cfg, Some(out), None), 2));
}

#[test]
fn outer_iteration_limit_exits_4() {
    let text = shipped("toy-tracking.toml").replace("max_outer = 50", "max_outer = 2");
    with_config(&text, |cfg, out| {
        assert_eq!(run(cfg, Some(out), None), 4);
        let m = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
        assert!(m.contains("iteration-limit"));
    });
}

#[test]
fn missing_config_exits_2() {
    assert_eq!(run(Path::new("/nonexistent/c.toml"), None, None), 2);
}

#[test]
fn unwritable_output_exits_1() {
    with_config(&shipped("toy-stable-leaf.toml"), |cfg, out| {
        std::fs::write(out, "a file, not a directory").unwrap();
        assert_eq!(run(cfg, Some(out), None), 1);
    });
}
