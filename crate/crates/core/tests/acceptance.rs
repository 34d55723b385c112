//! One line per acceptance criterion. Run with
//! `cargo test -p certwam --test acceptance -- --nocapture` or just
//! `cargo test`; the process exits nonzero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::process::ExitCode;

use certwam::checker::check_program;
use certwam::frontend::translate_to_lf;
use certwam::lf::{self, alpha_eq, alpha_eq_kind, static_unify, Classifier, Context, Family, Term, UnifyResult};
use certwam::pipeline::{compile_source, CompileOptions, Compiled};
use certwam::twam::{Instr, Operand, Program};
use certwam::vm::{self, Loc, Outcome, RunConfig, Store, Trail, VmError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, ok: bool, what: &str, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} [{n:>2}] {what}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn compile(src: &str) -> Compiled {
    compile_source(src, CompileOptions::default()).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

fn render(o: &Outcome) -> Vec<String> {
    o.to_string().lines().map(str::to_string).collect()
}

fn c1(r: &mut Report) {
    let src = std::fs::read_to_string(corpus_dir().join("plus.tpl")).unwrap();
    let res = compile_source(&src, CompileOptions::default());
    let (ok, detail) = match res {
        Err(e) => (false, e.to_string()),
        Ok(c) => match vm::run(&c.swam, RunConfig::default()) {
            Ok(rr) => {
                let out = render(&rr.outcome);
                let want = vec!["X = succ(succ(succ(succ(zero))))".to_string()];
                (out == want, format!("certified, erased code rechecked, answer {}", out.join("; ")))
            }
            Err(e) => (false, e.to_string()),
        },
    };
    r.line(1, ok, "end-to-end plus", detail);
}

fn c2(r: &mut Report) {
    let src = std::fs::read_to_string(corpus_dir().join("plus_backtrack.tpl")).unwrap();
    let c = compile(&src);
    let rr = vm::run(&c.swam, RunConfig::default()).unwrap();
    let hand = 43.0;
    let (lo, hi) = (hand * 0.8, hand * 1.2);
    let steps = rr.stats.steps as f64;
    let ok = rr.stats.backtracks == 1
        && (lo..=hi).contains(&steps)
        && render(&rr.outcome) == ["X = succ(zero)"];
    r.line(
        2,
        ok,
        "backtracking trace",
        format!(
            "backtracks {} (want 1), steps {} (want {lo:.1}..{hi:.1}), answer {}",
            rr.stats.backtracks,
            rr.stats.steps,
            render(&rr.outcome).join("; ")
        ),
    );
}

fn c3(r: &mut Report) {
    let src = std::fs::read_to_string(corpus_dir().join("plus.tpl")).unwrap();
    let c = compile(&src);
    let expected = lf::parse_signature(
        "nat : type.
         zero : nat.
         succ : nat -> nat.
         plus : nat -> nat -> nat -> type.
         plus-1 : {X:nat} plus zero X X.
         plus-2 : {X:nat} {Y:nat} {Z:nat} {D:plus X Y Z} plus (succ X) Y (succ Z).",
    )
    .unwrap();
    let checks = lf::check_signature(&c.lf).is_ok();
    let same = c.lf.len() == expected.len()
        && c.lf.decls().iter().zip(expected.decls()).all(|((a, ca), (b, cb))| {
            a == b
                && match (ca, cb) {
                    (Classifier::Kind(k1), Classifier::Kind(k2)) => alpha_eq_kind(k1, k2),
                    (Classifier::Type(a1), Classifier::Type(a2)) => alpha_eq(a1, a2),
                    _ => false,
                }
        });
    r.line(
        3,
        checks && same,
        "LF signature of plus",
        format!("well-formed {checks}, matches expected declarations {same}"),
    );
}

fn flex_ctx() -> Context {
    let mut ctx = Context::new();
    for v in VARS {
        ctx.push(v, Family::atom("t"));
    }
    ctx
}

fn is_xyz(s: &str) -> bool {
    VARS.contains(&s)
}

fn c4(r: &mut Report) {
    let terms = all_terms(3);
    let ctx = flex_ctx();
    let flex: BTreeSet<String> = VARS.iter().map(|s| s.to_string()).collect();
    let (mut pairs, mut unifiable, mut bad) = (0usize, 0usize, Vec::new());
    for a in &terms {
        for b in &terms {
            pairs += 1;
            let ours = static_unify(&ctx, a, b);
            let theirs = mm_unify(&flex, a, b);
            let ok = match (&ours, &theirs) {
                (UnifyResult::Bottom, None) => true,
                (UnifyResult::Unifier(s), Some(sol)) => {
                    unifiable += 1;
                    let (sa, sb) = (s.apply(a), s.apply(b));
                    let ours_img: Vec<Term> = VARS.iter().map(|v| s.apply(&Term::var(*v))).collect();
                    let theirs_img: Vec<Term> = VARS.iter().map(|v| apply_all(sol, &Term::var(*v))).collect();
                    sa == sb && eq_upto_renaming(&ours_img, &theirs_img, &is_xyz, &is_xyz)
                }
                _ => false,
            };
            if !ok && bad.len() < 3 {
                bad.push(format!("{a} =? {b}"));
            }
        }
    }
    r.line(
        4,
        bad.is_empty(),
        "static unification vs reference",
        format!("{pairs} pairs, {unifiable} unifiable, mismatches {:?}", bad),
    );
}

fn c5(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = flex_ctx();
    let (mut found, mut tried, mut bad) = (0usize, 0usize, 0usize);
    while found < 1000 {
        tried += 1;
        let a = random_term(&mut rng, 4, true);
        let b = random_term(&mut rng, 4, true);
        if !static_unify(&ctx, &a, &b).is_bottom() {
            continue;
        }
        found += 1;
        for _ in 0..10 {
            let sol: Vec<(String, Term)> = VARS
                .iter()
                .map(|v| (v.to_string(), random_term(&mut rng, 3, false)))
                .collect();
            let (ga, gb) = (apply_all(&sol, &a), apply_all(&sol, &b));
            if ga == gb || !static_unify(&Context::new(), &ga, &gb).is_bottom() {
                bad += 1;
            }
        }
    }
    r.line(
        5,
        bad == 0,
        "no ground instance of a failed unification unifies",
        format!("{found} bottom pairs (of {tried} drawn) x 10 instances, {bad} counterexamples"),
    );
}

fn build(store: &mut Store, m: &Term, vars: &mut HashMap<String, Loc>, ty: u32) -> Loc {
    if let Some(x) = m.as_var() {
        return *vars.entry(x.to_string()).or_insert_with(|| store.alloc_free(ty));
    }
    let args: Vec<Loc> = m.args.iter().map(|a| build(store, a, vars, ty)).collect();
    let c = match &m.head {
        lf::Head::Const(c) | lf::Head::Var(c) => c.clone(),
    };
    store.alloc_str(&c, args)
}

fn c6(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ctx = flex_ctx();
    let (mut agree, mut unif, mut bad) = (0usize, 0usize, Vec::new());
    for _ in 0..1000 {
        let a = random_term(&mut rng, 4, true);
        let b = random_term(&mut rng, 4, true);
        let mut store = Store::new();
        let ty = store.type_id("t");
        let mut vars = HashMap::new();
        let (la, lb) = (build(&mut store, &a, &mut vars, ty), build(&mut store, &b, &mut vars, ty));
        let mut trail = Trail::default();
        let heap_ok = store.unify(la, lb, &mut trail);
        let ok = match static_unify(&ctx, &a, &b) {
            UnifyResult::Bottom => !heap_ok,
            UnifyResult::Unifier(s) => {
                unif += 1;
                heap_ok && {
                    let heap_a = store.read_term(la);
                    let heap_b = store.read_term(lb);
                    let stat = vec![s.apply(&a), s.apply(&b)];
                    heap_a == heap_b
                        && eq_upto_renaming(&[heap_a, heap_b], &stat, &|v: &str| v.starts_with('_'), &is_xyz)
                }
            }
        };
        if ok {
            agree += 1;
        } else if bad.len() < 3 {
            bad.push(format!("{a} =? {b}"));
        }
    }
    r.line(
        6,
        bad.is_empty(),
        "heap unification agrees with static unification",
        format!("{agree}/1000 agree ({unif} unifiable), mismatches {:?}", bad),
    );
}

fn c7(r: &mut Report) {
    let src = std::fs::read_to_string(corpus_dir().join("occurs.tpl")).unwrap();
    let c = compile(&src);
    let plain = vm::run(&c.swam, RunConfig { fuel: 10_000, checked: false });
    let checked = vm::run(&c.twam, RunConfig { fuel: 10_000, checked: true });
    let ok = matches!(&plain, Ok(rr) if rr.outcome == Outcome::Failure)
        && matches!(&checked, Ok(rr) if rr.outcome == Outcome::Failure);
    let show = |x: &Result<vm::RunResult, VmError>| match x {
        Ok(rr) => format!("{} in {} steps", rr.outcome.to_string().trim(), rr.stats.steps),
        Err(e) => e.to_string(),
    };
    r.line(
        7,
        ok,
        "occurs check terminates with failure",
        format!("erased: {}; checked: {}", show(&plain), show(&checked)),
    );
}

fn c8(r: &mut Report) {
    let corpus = corpus();
    let (mut steps, mut bad) = (0u64, Vec::new());
    for p in &corpus {
        let c = compile(&p.src);
        for prog in [&c.twam, &c.swam] {
            match vm::run(prog, RunConfig { checked: true, ..RunConfig::default() }) {
                Ok(rr) => {
                    steps += rr.stats.steps;
                    if render(&rr.outcome) != p.expect {
                        bad.push(format!("{}: got {:?}", p.name, render(&rr.outcome)));
                    }
                }
                Err(e) => bad.push(format!("{}: {e}", p.name)),
            }
        }
    }
    r.line(
        8,
        bad.is_empty(),
        "checked runs keep every invariant",
        format!("{} programs, {steps} checked steps, problems {:?}", corpus.len(), bad),
    );
}

fn random_programs(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_program(&mut rng)).collect()
}

fn c9(r: &mut Report) {
    let mut srcs: Vec<String> = corpus().into_iter().map(|p| p.src).collect();
    srcs.extend(random_programs(500, 9));
    let (mut terminated, mut compared, mut bad) = (0usize, 0usize, Vec::new());
    for src in &srcs {
        let c = match compile_source(src, CompileOptions::default()) {
            Ok(c) => c,
            Err(e) => {
                bad.push(format!("compile: {e}"));
                continue;
            }
        };
        let plain = vm::run(&c.swam, RunConfig { fuel: 50_000, checked: false });
        let checked = vm::run(&c.twam, RunConfig { fuel: 20_000, checked: true });
        let out = match (plain, checked) {
            (Ok(p), Ok(_)) => p.outcome,
            (Err(e), _) | (_, Err(e)) => {
                bad.push(format!("{e}\n{src}"));
                continue;
            }
        };
        if out == Outcome::OutOfFuel {
            continue;
        }
        terminated += 1;
        let reference = match sld(&c.elab, 200_000) {
            SldResult::Answers(a) => Outcome::Success { answers: a, proof: None },
            SldResult::No => Outcome::Failure,
            SldResult::GaveUp => continue,
        };
        compared += 1;
        if render(&reference) != render(&out) {
            bad.push(format!("answers differ: vm {:?} reference {:?}\n{src}", render(&out), render(&reference)));
        }
    }
    r.line(
        9,
        bad.is_empty(),
        "no stuck states; answers match SLD reference",
        format!(
            "{} programs, {terminated} terminated, {compared} compared with reference, problems {}{}",
            srcs.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    );
}

// ---- mutations ----

fn mutations(p: &Program) -> Vec<(String, Program)> {
    let mut out = Vec::new();
    let clause_consts: Vec<String> = p
        .sigma
        .decls()
        .iter()
        .filter(|(n, c)| matches!(c, Classifier::Type(Family::Pi { .. })) && p.sigma.constructor(n).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    for (bi, (label, cv)) in p.code.iter().enumerate() {
        for (ii, ins) in cv.body.iter().enumerate() {
            let mut push = |what: &str, f: &dyn Fn(&mut Vec<Instr>)| {
                let mut q = p.clone();
                f(&mut q.code[bi].1.body);
                out.push((format!("{what} at {label}[{ii}]"), q));
            };
            match ins {
                Instr::GetStr { n, .. } => {
                    push("delete get_str", &|b| {
                        b.remove(ii);
                    });
                    let n = *n;
                    push("wrong get_str arity", &|b| {
                        if let Instr::GetStr { n: k, .. } = &mut b[ii] {
                            *k = n + 1;
                        }
                    });
                }
                Instr::PutStr { n, .. } if *n > 0 => {
                    push("wrong put_str arity", &|b| {
                        if let Instr::PutStr { n: k, .. } = &mut b[ii] {
                            *k -= 1;
                        }
                    });
                }
                Instr::PutTuple { n, .. } if *n >= 2 => {
                    let last = ii + *n;
                    push("swap set_val with ret", &|b| b.swap(ii + 1, last));
                }
                Instr::Jmp(op) => {
                    if let Some(bad) = wrong_proof_operand(op, &clause_consts) {
                        push("wrong proof constant in jmp", &|b| b[ii] = Instr::Jmp(bad.clone()));
                    }
                }
                Instr::Succeed(Some((m, a))) => {
                    for c in &clause_consts {
                        let wrong = Term::cnst(c.clone());
                        if &wrong != m {
                            let a = a.clone();
                            push("wrong proof constant in succeed", &|b| {
                                b[ii] = Instr::Succeed(Some((wrong.clone(), a.clone())))
                            });
                            break;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Replaces the head constant of the last proof argument in a jump operand.
fn wrong_proof_operand(op: &Operand, consts: &[String]) -> Option<Operand> {
    let Operand::App(f, m) = op else { return None };
    let lf::Head::Const(c) = &m.head else { return None };
    let other = consts.iter().find(|k| *k != c)?;
    let mut m2 = m.clone();
    m2.head = lf::Head::Const(other.clone());
    Some(Operand::App(f.clone(), m2))
}

fn c10(r: &mut Report) {
    let mut total = 0usize;
    let mut kinds: BTreeSet<String> = BTreeSet::new();
    let mut bad = Vec::new();
    for p in corpus() {
        for tco in [true, false] {
            let c = compile_source(&p.src, CompileOptions { tco, ..CompileOptions::default() }).unwrap();
            for (what, m) in mutations(&c.twam) {
                total += 1;
                kinds.insert(what.split(" at ").next().unwrap().to_string());
                match check_program(&m) {
                    Ok(_) => bad.push(format!("{}: {what} accepted", p.name)),
                    Err(e) if e.label.is_none() || e.index.is_none() || e.instr.is_none() => {
                        bad.push(format!("{}: {what} rejected without location: {e}", p.name))
                    }
                    Err(_) => {}
                }
            }
        }
    }
    r.line(
        10,
        bad.is_empty() && total >= 20,
        "ill-typed mutations are rejected at an instruction",
        format!(
            "{total} mutations of {} kinds, {} accepted or unlocated{}",
            kinds.len(),
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    );
}

fn c11(r: &mut Report) {
    let mut srcs: Vec<String> = corpus().into_iter().map(|p| p.src).collect();
    srcs.extend(random_programs(100, 11));
    let mut bad = Vec::new();
    for src in &srcs {
        let a = compile_source(src, CompileOptions { tco: true, ..CompileOptions::default() }).unwrap();
        let b = compile_source(src, CompileOptions { tco: false, ..CompileOptions::default() }).unwrap();
        let cfg = RunConfig { fuel: 50_000, checked: false };
        let (ra, rb) = (vm::run(&a.swam, cfg).unwrap(), vm::run(&b.swam, cfg).unwrap());
        let fuel_out = ra.outcome == Outcome::OutOfFuel || rb.outcome == Outcome::OutOfFuel;
        if !fuel_out && render(&ra.outcome) != render(&rb.outcome) {
            bad.push(src.clone());
        }
    }
    let src = plus_program(50);
    let a = compile_source(&src, CompileOptions { tco: true, ..CompileOptions::default() }).unwrap();
    let b = compile_source(&src, CompileOptions { tco: false, ..CompileOptions::default() }).unwrap();
    let (ra, rb) = (
        vm::run(&a.swam, RunConfig::default()).unwrap(),
        vm::run(&b.swam, RunConfig::default()).unwrap(),
    );
    let same = render(&ra.outcome) == render(&rb.outcome) && render(&ra.outcome) == [format!("X = {}", nat(100))];
    let fewer = ra.stats.closures < rb.stats.closures;
    r.line(
        11,
        bad.is_empty() && same && fewer,
        "tail calls",
        format!(
            "{} programs agree with and without TCO ({} differ); plus(50,50) closures {} with vs {} without",
            srcs.len(),
            bad.len(),
            ra.stats.closures,
            rb.stats.closures
        ),
    );
}

fn c12(r: &mut Report) {
    let mut srcs: Vec<String> = corpus().into_iter().map(|p| p.src).collect();
    srcs.extend(random_programs(200, 12));
    let mut bad = 0;
    for src in &srcs {
        for tco in [true, false] {
            let c = compile_source(src, CompileOptions { tco, ..CompileOptions::default() }).unwrap();
            let lf_again = translate_to_lf(&c.elab);
            if check_program(&c.swam).is_err() || lf_again != c.lf || c.swam.mode != certwam::twam::Mode::Swam {
                bad += 1;
            }
        }
    }
    r.line(
        12,
        bad == 0,
        "erased code rechecks",
        format!("{} programs x 2 TCO settings, {bad} failures", srcs.len()),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    let criteria: [fn(&mut Report); 12] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12];
    for c in criteria {
        c(&mut r);
    }
    if r.failed == 0 {
        println!("all 12 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", r.failed);
        ExitCode::FAILURE
    }
}
