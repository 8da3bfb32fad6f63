//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Numeric arguments (`cargo test --test acceptance --
//! 1 8`) restrict the run to those criteria.

mod bench;
mod formulas;
mod gradients;
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use bench::Bench;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

type Criterion = fn(&Bench) -> Verdict;

const CRITERIA: [(&str, Criterion); 8] = [
    ("formula oracles", |_| formulas::run()),
    ("gradient integrity", |_| gradients::run()),
    ("bandit convergence", |_| bench::bandit()),
    ("end-to-end improvement", bench::improvement),
    ("method ordering", bench::ordering),
    ("sl-oracle dominance", bench::sl_dominance),
    ("sequence variant", bench::sequence),
    ("retrieval core", retrieval::run),
];

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let bench = Bench::default();
    let mut failed = 0;
    for (i, (name, f)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&bench)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::new(false, format!("panicked: {msg}"))
            });
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {status} [{:.1}s] {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
