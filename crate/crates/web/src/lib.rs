//! Browser bindings: compile a T-Prolog program, show any stage of the
//! pipeline, and run it with an optional step trace.

use certwam::pipeline::{compile_source, CompileOptions, Compiled};
use certwam::vm::{self, RunConfig, TraceLine};
use wasm_bindgen::prelude::*;

/// Cap on trace lines shown in the page.
const TRACE_LIMIT: usize = 2_000;

fn build(src: &str, tco: bool) -> Result<Compiled, String> {
    compile_source(src, CompileOptions { tco, ..CompileOptions::default() }).map_err(|e| e.to_string())
}

/// Text of one pipeline stage: `flat`, `lf`, `twam` or `swam`.
#[wasm_bindgen]
pub fn compile(src: &str, stage: &str, tco: bool) -> Result<String, String> {
    let c = build(src, tco)?;
    let mut out = match stage {
        "flat" => c.flat.to_string(),
        "lf" => c.lf.to_string(),
        "twam" => c.twam.to_string(),
        "swam" => c.swam.to_string(),
        s => return Err(format!("unknown stage `{s}`")),
    };
    for w in &c.report.warnings {
        out.push_str(&format!("% {w}\n"));
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct RunReport {
    answer: String,
    trace: String,
    stats: String,
}

#[wasm_bindgen]
impl RunReport {
    #[wasm_bindgen(getter)]
    pub fn answer(&self) -> String {
        self.answer.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> String {
        self.trace.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn stats(&self) -> String {
        self.stats.clone()
    }
}

/// Compiles and runs; checked runs execute the typed code with every
/// machine invariant asserted after each step.
#[wasm_bindgen]
pub fn run(src: &str, fuel: u32, checked: bool, trace: bool, tco: bool) -> Result<RunReport, String> {
    let c = build(src, tco)?;
    let prog = if checked { &c.twam } else { &c.swam };
    let mut lines = Vec::new();
    let mut dropped = 0usize;
    let mut keep = |t: &TraceLine| {
        if lines.len() < TRACE_LIMIT {
            lines.push(t.to_string());
        } else {
            dropped += 1;
        }
    };
    let cfg = RunConfig { fuel: fuel.max(1) as u64, checked };
    let r = vm::run_traced(prog, cfg, if trace { Some(&mut keep) } else { None }).map_err(|e| e.to_string())?;
    if dropped > 0 {
        lines.push(format!("... {dropped} more steps"));
    }
    let s = r.stats;
    Ok(RunReport {
        answer: r.outcome.to_string(),
        trace: lines.join("\n"),
        stats: format!(
            "{} steps, {} backtracks, {} closures, {} heap cells, trail depth {}",
            s.steps, s.backtracks, s.closures, s.heap_cells, s.max_trail
        ),
    })
}
