//! Acceptance criteria A1-A10 on the shipped configs.
//!
//! Prints one PASS/FAIL line per criterion to stderr (bypassing the test
//! harness capture). Criteria listed in [`KNOWN_FAILURES`] are expected to
//! fail with the documented measurement; everything else must pass.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use bergman_cli::{
    emit_report, parse_config, run, run_suite, Experiment, ExperimentConfig, RunReport,
};

/// Criteria that fail as measured, with the reason.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "A2",
    "fourth-order stencil truncation: the residual grows like level^3 h^4 and exceeds 1e-6 at level 16 on the 64 grid",
)];

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.toml"));
    parse_config(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn with(mut c: ExperimentConfig, es: &[Experiment]) -> ExperimentConfig {
    c.experiments = es.to_vec();
    c
}

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

fn line(out: &mut impl Write, s: &str) {
    writeln!(out, "{s}").unwrap();
}

#[test]
fn acceptance() {
    use Experiment::*;
    let kernel_suite = [Dims, Density, Offdiag, Far, Ratio, Embed];
    let runs: Vec<(&str, RunReport)> = vec![
        ("sig10", run(&with(config("sig10"), &Experiment::ALL))),
        ("sig11", run(&with(config("sig11"), &Experiment::ALL))),
        ("sig10_d2", run(&with(config("sig10_d2"), &kernel_suite))),
        ("sig11_d2", run(&with(config("sig11_d2"), &kernel_suite))),
        (
            "positive",
            run(&with(config("positive"), &[Pullback, Derivs])),
        ),
    ];

    let mut verdicts: BTreeMap<u32, Verdict> = BTreeMap::new();
    for (name, r) in &runs {
        if let Some(s) = r.experiments.iter().find(|s| !s.ok) {
            panic!("{name}/{} did not run: {:?}", s.name, s.error);
        }
        for c in &r.criteria {
            let id: u32 = c.criterion_id[1..].parse().unwrap();
            let v = verdicts.entry(id).or_insert(Verdict {
                pass: true,
                lines: Vec::new(),
            });
            v.pass &= c.pass;
            v.lines.push(format!(
                "    {name}: {} measured {} [{}] {}",
                if c.pass { "pass" } else { "FAIL" },
                c.measured,
                c.threshold,
                c.notes
            ));
        }
    }

    // A10: two full smoke runs, compared byte for byte on disk.
    let smoke = config("sig11_smoke");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_suite(&smoke);
    emit_report(&first, a.path()).unwrap();
    let second = run_suite(&smoke);
    emit_report(&second, b.path()).unwrap();
    let mut identical = true;
    for t in &first.tables {
        identical &=
            fs::read(a.path().join(&t.file)).unwrap() == fs::read(b.path().join(&t.file)).unwrap();
    }
    let a10 = first.criterion("A10").unwrap();
    verdicts.insert(
        10,
        Verdict {
            pass: identical && a10.pass,
            lines: vec![format!(
                "    sig11_smoke: {} CSV files identical across reruns: {identical}; {} (wall {:.1} s, budget {} s)",
                first.tables.len(),
                a10.notes,
                first.wall_seconds,
                smoke.total_budget
            )],
        },
    );

    let mut err = std::io::stderr().lock();
    line(&mut err, "acceptance criteria:");
    let mut unexpected = Vec::new();
    for id in 1..=10u32 {
        let key = format!("A{id}");
        let v = verdicts
            .get(&id)
            .unwrap_or_else(|| panic!("{key} was not evaluated"));
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == key);
        line(
            &mut err,
            &format!(
                "{key} {}{}",
                if v.pass { "PASS" } else { "FAIL" },
                match (v.pass, known) {
                    (false, Some((_, why))) => format!(" (known: {why})"),
                    _ => String::new(),
                }
            ),
        );
        for l in &v.lines {
            line(&mut err, l);
        }
        if v.pass == known.is_some() {
            unexpected.push(key);
        }
    }
    drop(err);
    assert!(unexpected.is_empty(), "unexpected verdicts: {unexpected:?}");
}
