//! Acceptance run: one PASS / FAIL / SKIP line per criterion.
//! Exits non-zero when any criterion fails.

mod evaluation;
mod fusion;
mod geometry;
mod grads;
mod loss;
mod native;
mod pipeline;

use std::time::{Duration, Instant};

pub enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

impl From<Result<String, String>> for Outcome {
    fn from(r: Result<String, String>) -> Self {
        match r {
            Ok(d) => Outcome::Pass(d),
            Err(e) => Outcome::Fail(e),
        }
    }
}

/// Fails with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const MINUTE: u64 = 60;

fn main() {
    let criteria: [(&str, Option<u64>, fn() -> Outcome); 7] = [
        ("geometry oracle suite", Some(MINUTE), || geometry::run().into()),
        ("loss correctness", Some(MINUTE), || loss::run().into()),
        ("gradient checks", Some(5 * MINUTE), || grads::run().into()),
        ("fusion check", None, || fusion::run().into()),
        ("evaluation fidelity", None, || evaluation::run().into()),
        ("end-to-end overfit", Some(30 * MINUTE), || pipeline::run().into()),
        ("native data bookkeeping", None, native::run),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if let (Outcome::Pass(d), Some(s)) = (&outcome, limit) {
            if elapsed > Duration::from_secs(s) {
                outcome = Outcome::Fail(format!("{d}; over the {s} s limit"));
            }
        }
        let secs = elapsed.as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS {name}: {d} [{secs:.1} s]"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1} s]");
            }
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
