mod common;

use std::collections::{BTreeSet, HashMap};

use certwam::checker::check_program;
use certwam::lf::{self, static_unify, Context, Family, Term, UnifyResult};
use certwam::pipeline::{compile_source, CompileOptions};
use certwam::twam::{erase, parse_ir};
use certwam::vm::{self, Loc, Outcome, RunConfig, Store, Trail};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        Just(Term::cnst("zero")),
        Just(Term::var("x")),
        Just(Term::var("y")),
        Just(Term::var("z")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Term::app("succ", vec![t])),
            (inner.clone(), inner).prop_map(|(a, b)| Term::app("c", vec![a, b])),
        ]
    })
}

fn ground() -> impl Strategy<Value = Term> {
    Just(Term::cnst("zero")).prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Term::app("succ", vec![t])),
            (inner.clone(), inner).prop_map(|(a, b)| Term::app("c", vec![a, b])),
        ]
    })
}

fn flex() -> Context {
    let mut ctx = Context::new();
    for v in VARS {
        ctx.push(v, Family::atom("t"));
    }
    ctx
}

fn build(store: &mut Store, m: &Term, vars: &mut HashMap<String, Loc>, ty: u32) -> Loc {
    if let Some(x) = m.as_var() {
        return *vars.entry(x.to_string()).or_insert_with(|| store.alloc_free(ty));
    }
    let args = m.args.iter().map(|a| build(store, a, vars, ty)).collect();
    let lf::Head::Const(c) = &m.head else { unreachable!() };
    store.alloc_str(c, args)
}

proptest! {
    #[test]
    fn unifier_unifies_and_is_idempotent(a in term(), b in term()) {
        if let UnifyResult::Unifier(s) = static_unify(&flex(), &a, &b) {
            prop_assert_eq!(s.apply(&a), s.apply(&b));
            prop_assert_eq!(s.apply(&s.apply(&a)), s.apply(&a));
        }
    }

    #[test]
    fn unification_verdict_is_symmetric(a in term(), b in term()) {
        let ctx = flex();
        prop_assert_eq!(static_unify(&ctx, &a, &b).is_bottom(), static_unify(&ctx, &b, &a).is_bottom());
    }

    #[test]
    fn unification_matches_reference(a in term(), b in term()) {
        let fl: BTreeSet<String> = VARS.iter().map(|s| s.to_string()).collect();
        prop_assert_eq!(static_unify(&flex(), &a, &b).is_bottom(), mm_unify(&fl, &a, &b).is_none());
    }

    #[test]
    fn bottom_has_no_ground_instances(a in term(), b in term(), gx in ground(), gy in ground(), gz in ground()) {
        if static_unify(&flex(), &a, &b).is_bottom() {
            let sol = vec![("x".to_string(), gx), ("y".to_string(), gy), ("z".to_string(), gz)];
            prop_assert_ne!(apply_all(&sol, &a), apply_all(&sol, &b));
        }
    }

    #[test]
    fn heap_unify_agrees_with_static(a in term(), b in term()) {
        let mut store = Store::new();
        let ty = store.type_id("t");
        let mut vars = HashMap::new();
        let la = build(&mut store, &a, &mut vars, ty);
        let lb = build(&mut store, &b, &mut vars, ty);
        let ok = store.unify(la, lb, &mut Trail::default());
        prop_assert_eq!(ok, !static_unify(&flex(), &a, &b).is_bottom());
        prop_assert!(store.find_cycle().is_none());
        if ok {
            prop_assert_eq!(store.read_term(la), store.read_term(lb));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compiled_programs_round_trip_and_erase(seed in any::<u64>(), tco in any::<bool>()) {
        let src = random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        let c = compile_source(&src, CompileOptions { tco, ..CompileOptions::default() }).unwrap();
        prop_assert_eq!(&parse_ir(&c.twam.to_string()).unwrap(), &c.twam);
        prop_assert_eq!(&parse_ir(&c.swam.to_string()).unwrap(), &c.swam);
        prop_assert_eq!(&erase(&c.swam), &c.swam);
        prop_assert!(check_program(&parse_ir(&c.swam.to_string()).unwrap()).is_ok());
        prop_assert_eq!(lf::parse_signature(&c.lf.to_string()).unwrap(), c.lf);
    }

    #[test]
    fn checked_and_erased_runs_agree(seed in any::<u64>()) {
        let src = random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        let c = compile_source(&src, CompileOptions::default()).unwrap();
        let cfg = RunConfig { fuel: 5_000, checked: true };
        let t = vm::run(&c.twam, cfg).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        let s = vm::run(&c.swam, RunConfig { checked: false, ..cfg }).unwrap();
        prop_assert_eq!(t.stats.steps, s.stats.steps);
        match (&t.outcome, &s.outcome) {
            (Outcome::Success { answers: a, proof }, Outcome::Success { answers: b, .. }) => {
                prop_assert_eq!(a, b);
                prop_assert!(proof.is_some());
            }
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}

#[test]
fn corpus_expectations() {
    for p in corpus() {
        for tco in [true, false] {
            let c = compile_source(&p.src, CompileOptions { tco, ..CompileOptions::default() }).unwrap();
            let r = vm::run(&c.swam, RunConfig::default()).unwrap();
            let got: Vec<String> = r.outcome.to_string().lines().map(str::to_string).collect();
            assert_eq!(got, p.expect, "{} (tco {tco})", p.name);
        }
    }
}

#[test]
fn unifier_is_most_general_on_small_terms() {
    let terms = all_terms(2);
    let ground: Vec<Term> = all_terms(2).into_iter().filter(|t| { let mut fv = BTreeSet::new(); t.free_vars(&mut fv); fv.is_empty() }).collect();
    let ctx = flex();
    let mut witnessed = 0;
    for a in &terms {
        for b in &terms {
            let UnifyResult::Unifier(s) = static_unify(&ctx, a, b) else { continue };
            for gx in &ground {
                for gy in &ground {
                    for gz in &ground {
                        let other = vec![("x".to_string(), gx.clone()), ("y".to_string(), gy.clone()), ("z".to_string(), gz.clone())];
                        if apply_all(&other, a) != apply_all(&other, b) {
                            continue;
                        }
                        witnessed += 1;
                        for v in VARS {
                            let x = Term::var(v);
                            assert_eq!(apply_all(&other, &s.apply(&x)), apply_all(&other, &x), "{a} =? {b}");
                        }
                    }
                }
            }
        }
    }
    assert!(witnessed > 1000);
}
