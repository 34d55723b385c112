#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::PathBuf;

use certwam::frontend::{Elaborated, Goal, Tm};
use certwam::lf::Term;
use rand::seq::SliceRandom;
use rand::Rng;

pub struct CorpusProgram {
    pub name: String,
    pub src: String,
    pub expect: Vec<String>,
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn corpus() -> Vec<CorpusProgram> {
    let mut out = Vec::new();
    let mut paths: Vec<_> = fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "tpl"))
        .collect();
    paths.sort();
    for p in paths {
        let src = fs::read_to_string(&p).unwrap();
        let expect = src
            .lines()
            .filter_map(|l| l.strip_prefix("% expect: "))
            .map(str::to_string)
            .collect();
        out.push(CorpusProgram {
            name: p.file_stem().unwrap().to_string_lossy().into_owned(),
            src,
            expect,
        });
    }
    out
}

pub fn nat(k: usize) -> String {
    (0..k).fold("zero".to_string(), |t, _| format!("succ({t})"))
}

pub fn plus_program(n: usize) -> String {
    format!(
        "nat : type.\nzero : nat.\nsucc : nat -> nat.\n\
         plus : nat -> nat -> nat -> prop.\n\
         plus(zero, X, X).\n\
         plus(succ(X), Y, succ(Z)) :- plus(X, Y, Z).\n\
         ?- plus({}, {}, X).\n",
        nat(n),
        nat(n)
    )
}

// ---- reference SLD resolution ----

#[derive(Clone, Debug, PartialEq, Eq)]
enum T {
    V(usize),
    F(String, Vec<T>),
}

struct Sld<'a> {
    prog: &'a Elaborated,
    bind: Vec<Option<T>>,
    trail: Vec<usize>,
    budget: usize,
}

pub enum SldResult {
    Answers(Vec<(String, String)>),
    No,
    GaveUp,
}

const MAX_DEPTH: usize = 2_000;

impl Sld<'_> {
    fn fresh(&mut self) -> usize {
        self.bind.push(None);
        self.bind.len() - 1
    }

    fn walk(&self, t: &T) -> T {
        let mut t = t.clone();
        while let T::V(v) = t {
            match &self.bind[v] {
                Some(u) => t = u.clone(),
                None => break,
            }
        }
        t
    }

    fn occurs(&self, v: usize, t: &T) -> bool {
        match self.walk(t) {
            T::V(w) => v == w,
            T::F(_, args) => args.iter().any(|a| self.occurs(v, a)),
        }
    }

    fn unify(&mut self, a: &T, b: &T) -> bool {
        let (a, b) = (self.walk(a), self.walk(b));
        match (&a, &b) {
            (T::V(x), T::V(y)) if x == y => true,
            (T::V(x), _) => {
                if self.occurs(*x, &b) {
                    return false;
                }
                self.bind[*x] = Some(b.clone());
                self.trail.push(*x);
                true
            }
            (_, T::V(_)) => self.unify(&b, &a),
            (T::F(f, xs), T::F(g, ys)) => {
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(x, y))
            }
        }
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().unwrap();
            self.bind[v] = None;
        }
    }

    fn inst(tm: &Tm, env: &mut HashMap<String, usize>, me: &mut Self) -> T {
        match tm {
            Tm::Var(x) => {
                let v = match env.get(x) {
                    Some(v) => *v,
                    None => {
                        let v = me.fresh();
                        env.insert(x.clone(), v);
                        v
                    }
                };
                T::V(v)
            }
            Tm::App(c, args) => T::F(c.clone(), args.iter().map(|a| Self::inst(a, env, me)).collect()),
        }
    }

    /// Depth-first, left-to-right search for the first solution.
    /// `None` means the budget or the depth limit ran out.
    fn solve(&mut self, goals: &[(String, Vec<T>)], depth: usize) -> Option<bool> {
        if depth > MAX_DEPTH {
            return None;
        }
        let Some(((pred, args), rest)) = goals.split_first() else {
            return Some(true);
        };
        let p = self.prog.pred(pred).expect("declared");
        for c in &p.clauses {
            if self.budget == 0 {
                return None;
            }
            self.budget -= 1;
            let mark = self.trail.len();
            let mut env = HashMap::new();
            let head: Vec<T> = c.head.iter().map(|t| Self::inst(t, &mut env, self)).collect();
            if head.iter().zip(args).all(|(h, a)| self.unify(h, a)) {
                let mut next: Vec<(String, Vec<T>)> = c
                    .body
                    .iter()
                    .map(|g| {
                        (
                            g.pred.clone(),
                            g.args.iter().map(|t| Self::inst(t, &mut env, self)).collect(),
                        )
                    })
                    .collect();
                next.extend_from_slice(rest);
                match self.solve(&next, depth + 1) {
                    Some(true) => return Some(true),
                    None => return None,
                    Some(false) => {}
                }
            }
            self.undo(mark);
        }
        Some(false)
    }

    fn render(&self, t: &T, names: &mut HashMap<usize, usize>, out: &mut String) {
        match self.walk(t) {
            T::V(v) => {
                let n = names.len();
                let k = *names.entry(v).or_insert(n);
                out.push_str(&format!("_G{k}"));
            }
            T::F(c, args) => {
                out.push_str(&c);
                if !args.is_empty() {
                    out.push('(');
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        self.render(a, names, out);
                    }
                    out.push(')');
                }
            }
        }
    }
}

pub fn sld(prog: &Elaborated, budget: usize) -> SldResult {
    let mut s = Sld { prog, bind: Vec::new(), trail: Vec::new(), budget };
    let mut env = HashMap::new();
    let Goal { pred, args } = &prog.query.goal;
    let args: Vec<T> = args.iter().map(|t| Sld::inst(t, &mut env, &mut s)).collect();
    match s.solve(&[(pred.clone(), args)], 0) {
        None => SldResult::GaveUp,
        Some(false) => SldResult::No,
        Some(true) => {
            let mut names = HashMap::new();
            let answers = prog
                .query
                .vars
                .iter()
                .map(|(x, _)| {
                    let mut out = String::new();
                    s.render(&T::V(env[x]), &mut names, &mut out);
                    (x.clone(), out)
                })
                .collect();
            SldResult::Answers(answers)
        }
    }
}

// ---- reference unifier on LF terms (Martelli-Montanari) ----

/// Solves the equation set by transformation; variables are those in `flex`.
pub fn mm_unify(flex: &BTreeSet<String>, a: &Term, b: &Term) -> Option<Vec<(String, Term)>> {
    let mut eqs = vec![(a.clone(), b.clone())];
    let mut solved: Vec<(String, Term)> = Vec::new();
    while let Some((s, t)) = eqs.pop() {
        let sv = s.as_var().filter(|x| flex.contains(*x)).map(str::to_string);
        let tv = t.as_var().filter(|x| flex.contains(*x)).map(str::to_string);
        match (sv, tv) {
            (Some(x), Some(y)) if x == y => {}
            (Some(x), _) => {
                if t.mentions(&x) {
                    return None;
                }
                let sub = |m: &Term| replace(m, &x, &t);
                for e in eqs.iter_mut() {
                    *e = (sub(&e.0), sub(&e.1));
                }
                for e in solved.iter_mut() {
                    e.1 = sub(&e.1);
                }
                solved.push((x, t));
            }
            (None, Some(_)) => eqs.push((t, s)),
            (None, None) => {
                if s.head != t.head || s.args.len() != t.args.len() {
                    return None;
                }
                eqs.extend(s.args.iter().cloned().zip(t.args.iter().cloned()));
            }
        }
    }
    Some(solved)
}

pub fn replace(m: &Term, x: &str, t: &Term) -> Term {
    if m.as_var() == Some(x) {
        return t.clone();
    }
    Term {
        head: m.head.clone(),
        args: m.args.iter().map(|a| replace(a, x, t)).collect(),
    }
}

pub fn apply_all(sol: &[(String, Term)], m: &Term) -> Term {
    sol.iter().fold(m.clone(), |acc, (x, t)| replace(&acc, x, t))
}

/// Equality up to a bijective renaming between the variables picked out by
/// the two predicates.
pub fn eq_upto_renaming(a: &[Term], b: &[Term], is_var_a: &dyn Fn(&str) -> bool, is_var_b: &dyn Fn(&str) -> bool) -> bool {
    fn go(
        a: &Term,
        b: &Term,
        fwd: &mut HashMap<String, String>,
        bwd: &mut HashMap<String, String>,
        va: &dyn Fn(&str) -> bool,
        vb: &dyn Fn(&str) -> bool,
    ) -> bool {
        let (f, xs, g, ys) = (a.head.name(), &a.args, b.head.name(), &b.args);
        if xs.is_empty() && ys.is_empty() && va(f) && vb(g) {
            let ok1 = fwd.entry(f.to_string()).or_insert_with(|| g.to_string()) == g;
            let ok2 = bwd.entry(g.to_string()).or_insert_with(|| f.to_string()) == f;
            return ok1 && ok2;
        }
        if va(f) || vb(g) {
            return false;
        }
        f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| go(x, y, fwd, bwd, va, vb))
    }
    let (mut fwd, mut bwd) = (HashMap::new(), HashMap::new());
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| go(x, y, &mut fwd, &mut bwd, is_var_a, is_var_b))
}

// ---- random terms ----

pub const VARS: [&str; 3] = ["x", "y", "z"];

/// Terms over {zero, succ, c/2} and the variables, of depth at most `d`
/// (a leaf has depth 1).
pub fn all_terms(d: usize) -> Vec<Term> {
    let mut leaves: Vec<Term> = vec![Term::cnst("zero")];
    leaves.extend(VARS.iter().map(|v| Term::var(*v)));
    if d <= 1 {
        return leaves;
    }
    let smaller = all_terms(d - 1);
    let mut out = leaves;
    for t in &smaller {
        out.push(Term::app("succ", vec![t.clone()]));
    }
    for a in &smaller {
        for b in &smaller {
            out.push(Term::app("c", vec![a.clone(), b.clone()]));
        }
    }
    out
}

pub fn random_term(rng: &mut impl Rng, d: usize, vars: bool) -> Term {
    let leaf = d <= 1 || rng.gen_bool(0.3);
    if leaf {
        if vars && rng.gen_bool(0.6) {
            return Term::var(*VARS.choose(rng).unwrap());
        }
        return Term::cnst("zero");
    }
    if rng.gen_bool(0.5) {
        Term::app("succ", vec![random_term(rng, d - 1, vars)])
    } else {
        Term::app("c", vec![random_term(rng, d - 1, vars), random_term(rng, d - 1, vars)])
    }
}

pub const TERM_SIG: &str = "t : type. zero : t. succ : t -> t. c : t -> t -> t.";

// ---- random programs ----

fn rand_tm(rng: &mut impl Rng, depth: usize, vars: &[&str]) -> String {
    if depth == 0 || rng.gen_bool(0.45) {
        if rng.gen_bool(0.6) {
            return vars.choose(rng).unwrap().to_string();
        }
        return "zero".into();
    }
    if rng.gen_bool(0.7) {
        format!("succ({})", rand_tm(rng, depth - 1, vars))
    } else {
        format!("pair({}, {})", rand_tm(rng, depth - 1, vars), rand_tm(rng, depth - 1, vars))
    }
}

/// A small random T-Prolog program over naturals and pairs. Every predicate
/// has at least one clause; recursion is allowed, so some programs diverge.
pub fn random_program(rng: &mut impl Rng) -> String {
    let npred = rng.gen_range(1..=3);
    let arities: Vec<usize> = (0..npred).map(|_| rng.gen_range(1..=3)).collect();
    let mut src = String::from("nat : type.\nzero : nat.\nsucc : nat -> nat.\npair : nat -> nat -> nat.\n");
    let vars = ["X", "Y", "Z", "W"];
    for (p, &n) in arities.iter().enumerate() {
        src.push_str(&format!("p{p} : {}prop.\n", "nat -> ".repeat(n)));
        for _ in 0..rng.gen_range(1..=3) {
            let head: Vec<String> = (0..n)
                .map(|_| if rng.gen_bool(0.1) { "_".into() } else { rand_tm(rng, 2, &vars) })
                .collect();
            src.push_str(&format!("p{p}({})", head.join(", ")));
            let nbody = rng.gen_range(0..=2);
            let body: Vec<String> = (0..nbody)
                .map(|_| {
                    let q = rng.gen_range(0..npred);
                    let args: Vec<String> = (0..arities[q]).map(|_| rand_tm(rng, 1, &vars)).collect();
                    format!("p{q}({})", args.join(", "))
                })
                .collect();
            if !body.is_empty() {
                src.push_str(&format!(" :- {}", body.join(", ")));
            }
            src.push_str(".\n");
        }
    }
    let q = rng.gen_range(0..npred);
    let args: Vec<String> = (0..arities[q]).map(|_| rand_tm(rng, 2, &["A", "B"])).collect();
    src.push_str(&format!("?- p{q}({}).\n", args.join(", ")));
    src
}
