//! Declarative experiment driver.
//!
//! A run reads one [`ExperimentConfig`], executes the enabled experiments
//! concurrently (at most `workers` at a time), and merges their tables and
//! verdicts in canonical experiment order. A failing experiment records a
//! failed verdict for each of its criteria and never stops its siblings.

pub mod config;
pub mod experiments;
pub mod probes;
pub mod report;
pub mod workspace;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub use config::{parse_config, ConfigError, Experiment, ExperimentConfig};
pub use report::{emit_report, Criterion, RunReport, Table};

use experiments::{failed, run_experiment, Outcome};
use report::ExperimentStatus;
use workspace::Workspace;

struct Finished {
    outcome: Outcome,
    status: ExperimentStatus,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

fn execute(ws: &Workspace<'_>, e: Experiment) -> Finished {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| run_experiment(ws, e)));
    let wall = start.elapsed().as_secs_f64();
    let (outcome, error) = match result {
        Ok(Ok(o)) => (o, None),
        Ok(Err(err)) => (
            Outcome {
                tables: Vec::new(),
                criteria: failed(e, &err.to_string()),
            },
            Some(err.to_string()),
        ),
        Err(p) => {
            let msg = format!("panicked: {}", panic_message(p));
            (
                Outcome {
                    tables: Vec::new(),
                    criteria: failed(e, &msg),
                },
                Some(msg),
            )
        }
    };
    Finished {
        outcome,
        status: ExperimentStatus {
            name: e.name().to_string(),
            ok: error.is_none(),
            error,
            wall_seconds: wall,
            budget_seconds: ws.config.budgets.get(&e).copied(),
        },
    }
}

/// Run the enabled experiments of `config`.
pub fn run(config: &ExperimentConfig) -> RunReport {
    let start = Instant::now();
    let ws = Workspace::new(config);
    let todo = &config.experiments;
    let slots: Vec<Mutex<Option<Finished>>> = todo.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.workers.clamp(1, todo.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&e) = todo.get(i) else { break };
                let done = execute(&ws, e);
                *slots[i].lock().expect("slot lock") = Some(done);
            });
        }
    });

    // Deterministic merge in canonical order.
    let mut report = RunReport {
        config: config.clone(),
        tables: Vec::new(),
        criteria: Vec::new(),
        experiments: Vec::new(),
        warnings: Vec::new(),
        wall_seconds: 0.0,
    };
    for slot in slots {
        let f = slot
            .into_inner()
            .expect("slot lock")
            .expect("experiment ran");
        if let Some(b) = f.status.budget_seconds {
            if f.status.wall_seconds > b {
                report.warnings.push(format!(
                    "{} took {:.1} s, over its budget of {b} s",
                    f.status.name, f.status.wall_seconds
                ));
            }
        }
        report.tables.extend(f.outcome.tables);
        report.criteria.extend(f.outcome.criteria);
        report.experiments.push(f.status);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    report
}

/// [`run`] plus the infrastructure criterion A10: the validation self-test,
/// a rerun of one experiment compared byte for byte, and the time budget.
pub fn run_suite(config: &ExperimentConfig) -> RunReport {
    let mut report = run(config);
    let rejected = config::validation_self_test();
    let probe = if config.enabled(Experiment::Dims) {
        Some(Experiment::Dims)
    } else {
        config.experiments.first().copied()
    };
    let identical = match probe {
        Some(e) => {
            let again = run(&config.only(e));
            let first: Vec<String> = report
                .tables
                .iter()
                .filter(|t| again.tables.iter().any(|a| a.file == t.file))
                .map(Table::to_csv)
                .collect();
            let second: Vec<String> = again.tables.iter().map(Table::to_csv).collect();
            first == second && !second.is_empty()
        }
        None => false,
    };
    let wall = report.wall_seconds;
    let within = wall <= config.total_budget;
    if !within {
        report.warnings.push(format!(
            "run took {wall:.1} s, over the total budget of {} s",
            config.total_budget
        ));
    }
    report.criteria.push(Criterion {
        criterion_id: "A10".to_string(),
        description: experiments::A10_DESCRIPTION.to_string(),
        measured: wall,
        threshold: format!(
            "rerun of {} byte-identical; all {} malformed configs rejected; wall seconds <= {}",
            probe.map_or("-", Experiment::name),
            config::MALFORMED.len(),
            config.total_budget
        ),
        pass: identical && rejected.is_empty() && within,
        notes: format!(
            "rerun identical: {identical}; malformed inputs accepted: {rejected:?}; wall {wall:.2} s"
        ),
    });
    report
}
