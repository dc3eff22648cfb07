//! Output format, determinism and isolation on a small config.

use std::fs;
use std::path::Path;

use bergman_cli::{emit_report, parse_config, run, Experiment};

const SMALL: &str = r#"
name = "small"
k_ladder = [4, 5, 6, 7]
grid_n = 28
seed = 3
workers = 3
experiments = ["dims", "density", "far", "ratio"]

[[factor]]
tau_re = 0.1
tau_im = 0.95
degree = -1

[params]
ratio_k = 6
ratio_samples = 9

[probes]
density = 3
"#;

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn headers_digits_and_line_endings() {
    let cfg = parse_config(SMALL).unwrap();
    let report = run(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, dir.path()).unwrap();
    assert!(written.iter().any(|p| p.ends_with("summary.json")));

    let density = read(dir.path(), "density.csv");
    assert!(density.starts_with("z1_re,z1_im,k,density,b0k_n,relerr\n"));
    assert!(!density.contains('\r'));
    assert!(density.ends_with('\n'));
    // 3 probes x 4 ladder values.
    assert_eq!(density.lines().count(), 1 + 12);
    for line in density.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6);
        assert!(cells[2].parse::<u32>().is_ok());
        for c in cells
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, c)| c)
        {
            let mantissa = c.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.replace('.', "").len(), 17, "{c}");
        }
    }
    let ratio = read(dir.path(), "ratio_profile.csv");
    assert!(ratio.starts_with("segment,x1_re,x1_im,y1_re,y1_im,t,f_k,model\n"));
    let far = read(dir.path(), "far.csv");
    assert!(far.starts_with("probe,x1_re,x1_im,y1_re,y1_im,k,abs_p,ln_abs_p\n"));
    let dims = read(dir.path(), "dims.csv");
    assert!(dims.starts_with(
        "k,sections,expected,min_gram_eigenvalue,cholesky_condition,orthonormality_defect,max_residual\n"
    ));

    let summary: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "summary.json")).unwrap();
    let criteria = summary["criteria"].as_array().unwrap();
    let ids: Vec<&str> = criteria
        .iter()
        .map(|c| c["criterion_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["A1", "A2", "A3", "A5", "A6"]);
    for c in criteria {
        for key in ["description", "threshold", "notes"] {
            assert!(c[key].is_string(), "{key}");
        }
        assert!(c["pass"].is_boolean());
        assert!(c["measured"].is_number() || c["measured"].is_string());
    }
    for key in ["grid_n", "theta_eps", "gram_tol", "wall_seconds", "seed"] {
        assert!(summary["environment"][key].is_number(), "{key}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = parse_config(SMALL).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(&run(&cfg), a.path()).unwrap();
    let mut single = cfg.clone();
    single.workers = 1;
    emit_report(&run(&single), b.path()).unwrap();
    for t in run(&cfg).tables {
        assert_eq!(
            read(a.path(), &t.file),
            read(b.path(), &t.file),
            "{}",
            t.file
        );
    }
}

#[test]
fn disabling_an_experiment_leaves_the_others_unchanged() {
    let cfg = parse_config(SMALL).unwrap();
    let full = run(&cfg);
    for e in [Experiment::Density, Experiment::Far] {
        let mut reduced = cfg.clone();
        reduced.experiments.retain(|&x| x != e);
        let part = run(&reduced);
        for t in &part.tables {
            assert_eq!(
                full.table(&t.file).unwrap().to_csv(),
                t.to_csv(),
                "{}",
                t.file
            );
        }
        assert!(part.criteria.iter().all(|c| full
            .criterion(&c.criterion_id)
            .unwrap()
            .measured
            .to_bits()
            == c.measured.to_bits()
            || c.measured.is_nan()));
    }
}

#[test]
fn emit_overwrites() {
    let cfg = parse_config(SMALL).unwrap().only(Experiment::Density);
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("density.csv"), "stale").unwrap();
    emit_report(&run(&cfg), dir.path()).unwrap();
    assert!(read(dir.path(), "density.csv").starts_with("z1_re"));
}

#[test]
fn io_errors_name_the_path() {
    let cfg = parse_config(SMALL).unwrap().only(Experiment::Density);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let err = emit_report(&run(&cfg), &blocker.join("sub")).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn failures_are_recorded_not_fatal() {
    let mut cfg = parse_config(SMALL).unwrap();
    // A Gram tolerance no basis can meet makes every basis build fail.
    cfg.gram_tol = 1e9;
    let report = run(&cfg);
    assert_eq!(report.experiments.len(), 4);
    assert!(report.experiments.iter().all(|s| !s.ok));
    assert_eq!(report.criteria.len(), 5);
    assert!(report
        .criteria
        .iter()
        .all(|c| !c.pass && c.notes.starts_with("failed")));
    assert!(!report.all_pass());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 6);
}
