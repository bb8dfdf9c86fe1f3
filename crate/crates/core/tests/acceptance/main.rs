//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../common/mod.rs"]
mod common;

mod estimators;
mod evaluator;
mod gbdt;
mod loop_checks;
mod pipeline;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    check: Check,
}

/// "Instant" criteria get a one-second budget.
const INSTANT: Duration = Duration::from_secs(1);

fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion { id: 1, name: "metric oracle suite", budget: secs(10), check: estimators::oracle_suite },
        Criterion { id: 2, name: "gradient suite", budget: secs(30), check: evaluator::gradient_suite },
        Criterion { id: 3, name: "gbdt suite", budget: secs(10), check: gbdt::gbdt_suite },
        Criterion { id: 4, name: "evaluator training", budget: secs(60), check: evaluator::training_suite },
        Criterion { id: 5, name: "selection threshold", budget: INSTANT, check: gbdt::selection_fixture },
        Criterion { id: 6, name: "optimization loop", budget: secs(5), check: loop_checks::optimization_loop },
        Criterion { id: 7, name: "execution-freedom witness", budget: INSTANT, check: loop_checks::execution_free },
        Criterion { id: 8, name: "end-to-end determinism", budget: secs(60), check: pipeline::replay_determinism },
        Criterion { id: 9, name: "majority-vote property", budget: secs(5), check: estimators::majority_vote },
    ]
}

fn main() {
    let filter: Option<u8> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for c in criteria().into_iter().filter(|c| filter.is_none_or(|f| f == c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(outcome.is_err());
        println!("{tag} [{}] {} ({:.2}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// `Err(msg)` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
