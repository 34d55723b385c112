use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use certwam::checker::check_program;
use certwam::pipeline::{compile_source, CompileOptions, Compiled, PipelineError};
use certwam::twam::{parse_ir, Program};
use certwam::vm::{self, Outcome, RunConfig, TraceLine};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit statuses.
const OK: u8 = 0;
const NO: u8 = 1;
const PARSE: u8 = 2;
const ELAB: u8 = 3;
const CHECK: u8 = 4;
const FUEL: u8 = 5;

#[derive(Parser)]
#[command(name = "twam", version, about = "Certifying compiler and machine for T-Prolog")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a .tpl file, writing <stem>.twam and <stem>.swam.
    Compile {
        input: PathBuf,
        /// Directory for the artifacts (defaults to the input's directory).
        #[arg(short, long)]
        out_dir: Option<PathBuf>,
        /// Also write this stage (repeatable).
        #[arg(long, value_enum)]
        emit: Vec<Stage>,
        #[arg(long)]
        no_tco: bool,
    },
    /// Run a .tpl, .twam or .swam file and print the answer.
    Run(RunArgs),
    /// Run with a step-by-step trace on stderr.
    Trace(RunArgs),
    /// Typecheck a .twam or .swam file (a .tpl is compiled and certified).
    Check { input: PathBuf },
    /// Print the LF signature of a .tpl file.
    EmitLf {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 10_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    fuel: u64,
    /// Assert machine invariants after every step; .tpl input runs as TWAM.
    #[arg(long)]
    checked: bool,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    no_tco: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Flat,
    Twam,
    Swam,
    Lf,
}

impl Stage {
    fn ext(self) -> &'static str {
        match self {
            Stage::Flat => "flat",
            Stage::Twam => "twam",
            Stage::Swam => "swam",
            Stage::Lf => "lf",
        }
    }
}

struct Fail(u8, String);

type Res<T> = Result<T, Fail>;

fn read(p: &Path) -> Res<String> {
    fs::read_to_string(p).map_err(|e| Fail(PARSE, format!("{}: {e}", p.display())))
}

fn write(p: &Path, s: &str) -> Res<()> {
    fs::write(p, s).map_err(|e| Fail(PARSE, format!("{}: {e}", p.display())))
}

fn pipeline_fail(p: &Path, e: PipelineError) -> Fail {
    if let PipelineError::Syntax(se) = &e {
        return Fail(PARSE, format!("{}:{se}", p.display()));
    }
    let code = match e {
        PipelineError::Syntax(_) => PARSE,
        PipelineError::Elab(_) | PipelineError::Compile(_) => ELAB,
        PipelineError::Certify(_) | PipelineError::Recheck(_) => CHECK,
    };
    Fail(code, format!("{}: {e}", p.display()))
}

fn compile_file(p: &Path, tco: bool) -> Res<Compiled> {
    let src = read(p)?;
    let c = compile_source(&src, CompileOptions { tco, ..CompileOptions::default() }).map_err(|e| pipeline_fail(p, e))?;
    for w in &c.report.warnings {
        eprintln!("{}: {w}", p.display());
    }
    Ok(c)
}

fn is_source(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "tpl")
}

fn load_ir(p: &Path) -> Res<Program> {
    let prog = parse_ir(&read(p)?).map_err(|e| Fail(PARSE, format!("{}:{e}", p.display())))?;
    check_program(&prog).map_err(|e| Fail(CHECK, format!("{}: {e}", p.display())))?;
    Ok(prog)
}

fn compile(input: &Path, out_dir: Option<&Path>, emit: &[Stage], tco: bool) -> Res<u8> {
    let c = compile_file(input, tco)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let mut stages = vec![Stage::Twam, Stage::Swam];
    stages.extend(emit.iter().filter(|s| !matches!(s, Stage::Twam | Stage::Swam)));
    for s in stages {
        let text = match s {
            Stage::Flat => c.flat.to_string(),
            Stage::Twam => c.twam.to_string(),
            Stage::Swam => c.swam.to_string(),
            Stage::Lf => c.lf.to_string(),
        };
        write(&dir.join(format!("{stem}.{}", s.ext())), &text)?;
    }
    Ok(OK)
}

fn run(a: &RunArgs, force_trace: bool) -> Res<u8> {
    let prog = if is_source(&a.input) {
        let c = compile_file(&a.input, !a.no_tco)?;
        if a.checked {
            c.twam
        } else {
            c.swam
        }
    } else {
        load_ir(&a.input)?
    };
    let cfg = RunConfig { fuel: a.fuel, checked: a.checked };
    let mut show = |t: &TraceLine| eprintln!("{t}");
    let trace: Option<&mut dyn FnMut(&TraceLine)> = if a.trace || force_trace { Some(&mut show) } else { None };
    let r = vm::run_traced(&prog, cfg, trace).map_err(|e| Fail(CHECK, format!("{}: {e}", a.input.display())))?;
    print!("{}", r.outcome);
    let s = r.stats;
    if a.trace || force_trace {
        eprintln!(
            "steps {}, backtracks {}, closures {}, heap cells {}, max trail {}",
            s.steps, s.backtracks, s.closures, s.heap_cells, s.max_trail
        );
    }
    Ok(match r.outcome {
        Outcome::Success { .. } => OK,
        Outcome::Failure => NO,
        Outcome::OutOfFuel => FUEL,
    })
}

fn check(input: &Path) -> Res<u8> {
    if is_source(input) {
        compile_file(input, true)?;
        return Ok(OK);
    }
    let prog = parse_ir(&read(input)?).map_err(|e| Fail(PARSE, format!("{}:{e}", input.display())))?;
    let report = check_program(&prog).map_err(|e| Fail(CHECK, format!("{}: {e}", input.display())))?;
    for w in &report.warnings {
        eprintln!("{}: {w}", input.display());
    }
    Ok(OK)
}

fn emit_lf(input: &Path, output: Option<&Path>) -> Res<u8> {
    let c = compile_file(input, true)?;
    match output {
        Some(o) => write(o, &c.lf.to_string())?,
        None => print!("{}", c.lf),
    }
    Ok(OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Compile { input, out_dir, emit, no_tco } => compile(input, out_dir.as_deref(), emit, !no_tco),
        Cmd::Run(a) => run(a, false),
        Cmd::Trace(a) => run(a, true),
        Cmd::Check { input } => check(input),
        Cmd::EmitLf { input, output } => emit_lf(input, output.as_deref()),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("twam: {msg}");
            ExitCode::from(code)
        }
    }
}
