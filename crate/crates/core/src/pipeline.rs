//! Compilation from elaborated T-Prolog to certified TWAM, and from there to
//! SWAM by erasure.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::checker::{check_program, CheckError, Report};
use crate::frontend::{
    self, clause_name, goal_family, proof_names, translate_to_lf, EClause, ElabError, Elaborated,
    FrontendError, Goal, Tm,
};
use crate::lf::{Family, Signature, Subst, Term, ANON};
use crate::syntax::SyntaxError;
use crate::twam::{erase, CodeValue, Instr, LfObject, MType, Mode, Operand, Program, RegFile, ENV, RET};

pub const QUERY_LABEL: &str = "query";
pub const INIT_CONT: &str = "init-cont";

// ---- flattening ----

/// `var = c(args)` for a compiler-introduced intermediate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatEq {
    pub var: String,
    pub c: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlatArg {
    Var(String),
    Str(String, Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatGoal {
    pub pred: String,
    /// Intermediates in bottom-up (construction) order.
    pub eqs: Vec<FlatEq>,
    pub args: Vec<FlatArg>,
    pub source: Goal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatClause {
    pub pred: String,
    pub index: usize,
    pub head: Vec<FlatArg>,
    /// Intermediates of the head in top-down (matching) order.
    pub head_eqs: Vec<FlatEq>,
    pub body: Vec<FlatGoal>,
    pub temps: Vec<(String, String)>,
    pub source: EClause,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatQuery {
    pub goal: FlatGoal,
    pub vars: Vec<(String, String)>,
    pub temps: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flat {
    pub clauses: Vec<FlatClause>,
    pub query: FlatQuery,
}

/// Hands out names that avoid everything reserved so far.
#[derive(Default)]
struct NameGen {
    used: BTreeSet<String>,
    temps: usize,
}

impl NameGen {
    fn reserve(&mut self, x: &str) {
        self.used.insert(x.to_string());
    }

    fn prime(&mut self, base: String) -> String {
        let mut x = base;
        while self.used.contains(&x) {
            x.push('\'');
        }
        self.used.insert(x.clone());
        x
    }

    fn temp(&mut self) -> String {
        self.temps += 1;
        self.prime(format!("T{}", self.temps))
    }
}

struct Flattener<'a> {
    elab: &'a Elaborated,
    gen: NameGen,
    temps: Vec<(String, String)>,
}

impl Flattener<'_> {
    fn arg(&mut self, t: &Tm, eqs: &mut Vec<FlatEq>, top_down: bool) -> FlatArg {
        match t {
            Tm::Var(x) => FlatArg::Var(x.clone()),
            Tm::App(c, args) => {
                let (c, vs) = self.shallow(c, args, eqs, top_down);
                FlatArg::Str(c, vs)
            }
        }
    }

    fn shallow(&mut self, c: &str, args: &[Tm], eqs: &mut Vec<FlatEq>, top_down: bool) -> (String, Vec<String>) {
        let arg_tys = self.elab.constructor(c).map(|(a, _)| a.to_vec()).unwrap_or_default();
        let mut vs = Vec::new();
        let mut nested = Vec::new();
        for (i, a) in args.iter().enumerate() {
            match a {
                Tm::Var(x) => vs.push(x.clone()),
                Tm::App(c2, a2) => {
                    let t = self.gen.temp();
                    self.temps.push((t.clone(), arg_tys[i].clone()));
                    vs.push(t.clone());
                    nested.push((t, c2, a2));
                }
            }
        }
        for (t, c2, a2) in nested {
            let slot = eqs.len();
            if top_down {
                eqs.push(FlatEq { var: String::new(), c: String::new(), args: Vec::new() });
            }
            let (c3, vs3) = self.shallow(c2, a2, eqs, top_down);
            let eq = FlatEq { var: t, c: c3, args: vs3 };
            if top_down {
                eqs[slot] = eq;
            } else {
                eqs.push(eq);
            }
        }
        (c.to_string(), vs)
    }

    fn goal(&mut self, g: &Goal) -> FlatGoal {
        let mut eqs = Vec::new();
        let args = g.args.iter().map(|a| self.arg(a, &mut eqs, false)).collect();
        FlatGoal { pred: g.pred.clone(), eqs, args, source: g.clone() }
    }
}

fn clause_gen(c: &EClause) -> NameGen {
    let mut gen = NameGen::default();
    for (x, _) in &c.vars {
        gen.reserve(x);
    }
    let taken: BTreeSet<String> = c.vars.iter().map(|(x, _)| x.clone()).collect();
    for d in proof_names(c.body.len(), &taken) {
        gen.reserve(&d);
    }
    gen
}

pub fn flatten(elab: &Elaborated) -> Flat {
    let mut clauses = Vec::new();
    for p in &elab.preds {
        for (k, c) in p.clauses.iter().enumerate() {
            let mut f = Flattener { elab, gen: clause_gen(c), temps: Vec::new() };
            let mut head_eqs = Vec::new();
            let head = c.head.iter().map(|a| f.arg(a, &mut head_eqs, true)).collect();
            let body = c.body.iter().map(|g| f.goal(g)).collect();
            clauses.push(FlatClause {
                pred: p.name.clone(),
                index: k + 1,
                head,
                head_eqs,
                body,
                temps: f.temps,
                source: c.clone(),
            });
        }
    }
    let mut gen = NameGen::default();
    for (x, _) in &elab.query.vars {
        gen.reserve(x);
    }
    let mut f = Flattener { elab, gen, temps: Vec::new() };
    let goal = f.goal(&elab.query.goal);
    Flat {
        clauses,
        query: FlatQuery { goal, vars: elab.query.vars.clone(), temps: f.temps },
    }
}

impl fmt::Display for FlatArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlatArg::Var(x) => write!(f, "{x}"),
            FlatArg::Str(c, vs) if vs.is_empty() => write!(f, "{c}"),
            FlatArg::Str(c, vs) => write!(f, "{c}({})", vs.join(", ")),
        }
    }
}

impl fmt::Display for FlatEq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.var, FlatArg::Str(self.c.clone(), self.args.clone()))
    }
}

fn write_atom(f: &mut fmt::Formatter<'_>, pred: &str, args: &[FlatArg]) -> fmt::Result {
    write!(f, "{pred}")?;
    if !args.is_empty() {
        let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", args.join(", "))?;
    }
    Ok(())
}

impl fmt::Display for FlatGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.eqs {
            write!(f, "{e}, ")?;
        }
        write_atom(f, &self.pred, &self.args)
    }
}

impl fmt::Display for FlatClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "% {}", clause_name(&self.pred, self.index))?;
        write_atom(f, &self.pred, &self.head)?;
        let mut parts: Vec<String> = self.head_eqs.iter().map(|e| e.to_string()).collect();
        parts.extend(self.body.iter().map(|g| g.to_string()));
        if !parts.is_empty() {
            write!(f, " :- {}", parts.join(", "))?;
        }
        writeln!(f, ".")
    }
}

impl fmt::Display for Flat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            write!(f, "{c}")?;
        }
        writeln!(f, "?- {}.", self.query.goal)
    }
}

// ---- code generation ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    pub tco: bool,
    pub multi_goal_query: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { tco: true, multi_goal_query: false }
    }
}

/// A generated block with the continuation blocks it spawned.
struct InlineBlock {
    label: String,
    code: CodeValue,
    inner: Vec<InlineBlock>,
}

/// Flattens nested blocks in pre-order.
fn hoist(b: InlineBlock, out: &mut Vec<(String, CodeValue)>) {
    out.push((b.label, b.code));
    for i in b.inner {
        hoist(i, out);
    }
}

fn reg(i: usize) -> String {
    format!("r{i}")
}

fn var(x: &str) -> Term {
    Term::var(x)
}

fn sing(x: &str, ty: &str) -> MType {
    MType::Sing(var(x), ty.to_string())
}

fn ret_type(goal: Family) -> MType {
    MType::Cont(vec![(ANON.to_string(), goal)], RegFile::new())
}

/// Register allocation and variable tracking within one block.
struct BlockGen<'a> {
    elab: &'a Elaborated,
    types: &'a HashMap<String, String>,
    body: Vec<Instr>,
    next: usize,
    reg_of: HashMap<String, String>,
    seen: Vec<String>,
    seen_set: HashSet<String>,
}

impl<'a> BlockGen<'a> {
    fn new(elab: &'a Elaborated, types: &'a HashMap<String, String>, base: usize) -> Self {
        BlockGen {
            elab,
            types,
            body: Vec::new(),
            next: base,
            reg_of: HashMap::new(),
            seen: Vec::new(),
            seen_set: HashSet::new(),
        }
    }

    fn fresh(&mut self) -> String {
        let r = reg(self.next);
        self.next += 1;
        r
    }

    fn ty(&self, x: &str) -> String {
        self.types[x].clone()
    }

    fn see(&mut self, x: &str, r: String, source: bool) {
        self.reg_of.insert(x.to_string(), r);
        if source && self.seen_set.insert(x.to_string()) {
            self.seen.push(x.to_string());
        }
    }

    fn is_seen(&self, x: &str) -> bool {
        self.reg_of.contains_key(x)
    }

    /// Spine arguments of a structure being matched or built.
    fn spine(&mut self, vs: &[String], temps: &HashSet<String>) {
        for v in vs {
            if self.is_seen(v) {
                self.body.push(Instr::UnifyVal { r: self.reg_of[v].clone(), bind: None });
            } else {
                let r = self.fresh();
                self.body.push(Instr::UnifyVar { r: r.clone(), x: Some(v.clone()), ty: self.ty(v) });
                self.see(v, r, !temps.contains(v));
            }
        }
    }

    fn head_eq(&mut self, eq: &FlatEq, eqs: &HashMap<&str, &FlatEq>, temps: &HashSet<String>) {
        let r = self.reg_of[&eq.var].clone();
        self.get_structure(&eq.c, &eq.args, r, eqs, temps);
    }

    fn get_structure(
        &mut self,
        c: &str,
        vs: &[String],
        r: String,
        eqs: &HashMap<&str, &FlatEq>,
        temps: &HashSet<String>,
    ) {
        self.body.push(Instr::GetStr { c: c.to_string(), n: vs.len(), r });
        self.spine(vs, temps);
        for v in vs {
            if let Some(eq) = eqs.get(v.as_str()) {
                self.head_eq(eq, eqs, temps);
            }
        }
    }

    /// Builds the arguments of a goal and returns the register holding each.
    fn build_args(&mut self, g: &FlatGoal, temps: &HashSet<String>) -> Vec<String> {
        let mut occupied: HashSet<String> = self
            .seen
            .iter()
            .filter_map(|x| self.reg_of.get(x).cloned())
            .collect();
        for eq in &g.eqs {
            let r = self.fresh();
            self.body.push(Instr::PutStr { c: eq.c.clone(), n: eq.args.len(), r: r.clone() });
            self.spine(&eq.args, temps);
            occupied.insert(r.clone());
            self.see(&eq.var, r, false);
            occupied.extend(self.seen.iter().filter_map(|x| self.reg_of.get(x).cloned()));
        }
        let mut srcs = Vec::new();
        for (i, a) in g.args.iter().enumerate() {
            let target = reg(i + 1);
            let place = |me: &mut Self, occupied: &HashSet<String>| {
                if occupied.contains(&target) {
                    me.fresh()
                } else {
                    target.clone()
                }
            };
            let src = match a {
                FlatArg::Var(x) if self.is_seen(x) => self.reg_of[x].clone(),
                FlatArg::Var(x) => {
                    let r = place(self, &occupied);
                    self.body.push(Instr::PutVar { r: r.clone(), x: Some(x.clone()), ty: self.ty(x) });
                    self.see(x, r.clone(), !temps.contains(x));
                    r
                }
                FlatArg::Str(c, vs) => {
                    let r = place(self, &occupied);
                    self.body.push(Instr::PutStr { c: c.clone(), n: vs.len(), r: r.clone() });
                    self.spine(vs, temps);
                    r
                }
            };
            occupied.insert(src.clone());
            occupied.extend(self.seen.iter().filter_map(|x| self.reg_of.get(x).cloned()));
            srcs.push(src);
        }
        srcs
    }

    /// Moves each source register into its argument position.
    fn parallel_move(&mut self, srcs: &[String]) {
        let mut pending: Vec<(String, String)> = srcs
            .iter()
            .enumerate()
            .map(|(i, s)| (reg(i + 1), s.clone()))
            .filter(|(d, s)| d != s)
            .collect();
        while !pending.is_empty() {
            let ready = pending
                .iter()
                .position(|(d, _)| !pending.iter().any(|(_, s)| s == d));
            match ready {
                Some(i) => {
                    let (d, s) = pending.remove(i);
                    self.body.push(Instr::Mov { rd: d, op: Operand::reg(s) });
                }
                None => {
                    let d = pending[0].0.clone();
                    let t = self.fresh();
                    self.body.push(Instr::Mov { rd: t.clone(), op: Operand::reg(d.clone()) });
                    for (_, s) in pending.iter_mut() {
                        if *s == d {
                            *s = t.clone();
                        }
                    }
                }
            }
        }
    }

    fn jump_to(&mut self, g: &Goal) {
        let target = Operand::apply(
            Operand::label(clause_name(&g.pred, 1)),
            g.args.iter().map(Tm::to_lf),
        );
        self.body.push(Instr::Jmp(target));
    }

    fn finish(self, label: String, params: Vec<(String, Family)>, pre: RegFile) -> InlineBlock {
        let _ = self.elab;
        InlineBlock { label, code: CodeValue { params, pre, body: self.body }, inner: Vec::new() }
    }
}

struct Compiler<'a> {
    elab: &'a Elaborated,
    base: usize,
}

impl<'a> Compiler<'a> {
    fn check_callable(&self, g: &Goal) -> Result<(), PipelineError> {
        match self.elab.pred(&g.pred) {
            Some(p) if !p.clauses.is_empty() => Ok(()),
            _ => Err(PipelineError::Compile(format!(
                "predicate `{}` is called but has no clauses",
                g.pred
            ))),
        }
    }

    fn clause(&self, fc: &FlatClause, total: usize) -> Result<InlineBlock, PipelineError> {
        let pred = self.elab.pred(&fc.pred).expect("flattened from elaborated");
        let c = &fc.source;
        let n = pred.args.len();
        let k = fc.index;
        let label = clause_name(&fc.pred, k);

        let mut gen = clause_gen(c);
        for (t, _) in &fc.temps {
            gen.reserve(t);
        }
        let taken: BTreeSet<String> = c.vars.iter().map(|(x, _)| x.clone()).collect();
        let ds = proof_names(c.body.len(), &taken);

        let mut types: HashMap<String, String> = c.vars.iter().cloned().collect();
        types.extend(fc.temps.iter().cloned());
        let temps: HashSet<String> = fc.temps.iter().map(|(t, _)| t.clone()).collect();

        // a head argument that is the first occurrence of a variable names its parameter
        let mut params = Vec::new();
        let mut earlier: Vec<String> = Vec::new();
        for (i, a) in fc.head.iter().enumerate() {
            let p = match a {
                FlatArg::Var(x) if !earlier.contains(x) => x.clone(),
                _ => gen.prime(format!("A{}", i + 1)),
            };
            c.head[i].vars_into(&mut earlier);
            params.push(p);
        }
        for (p, a) in params.iter().zip(&pred.args) {
            types.entry(p.clone()).or_insert_with(|| a.clone());
        }
        let param_terms: Vec<Term> = params.iter().map(|p| var(p)).collect();
        let head_goal = Family::app(fc.pred.clone(), param_terms.clone());
        let lf_params: Vec<(String, Family)> = params
            .iter()
            .zip(&pred.args)
            .map(|(p, a)| (p.clone(), Family::atom(a.clone())))
            .collect();

        let mut b = BlockGen::new(self.elab, &types, self.base);
        let next_alt = (k < total).then(|| {
            Operand::apply(Operand::label(clause_name(&fc.pred, k + 1)), param_terms.clone())
        });
        let pre = if k == 1 {
            let mut pre: RegFile = params
                .iter()
                .zip(&pred.args)
                .enumerate()
                .map(|(i, (p, a))| (reg(i + 1), sing(p, a)))
                .collect();
            pre.insert(RET, ret_type(head_goal.clone()));
            if let Some(op) = next_alt {
                let rt = b.fresh();
                b.body.push(Instr::PutTuple { rd: rt.clone(), n: n + 1 });
                for i in 1..=n {
                    b.body.push(Instr::SetVal(reg(i)));
                }
                b.body.push(Instr::SetVal(RET.into()));
                b.body.push(Instr::PushBt { re: rt, op });
            }
            pre
        } else {
            let mut tys: Vec<MType> = params.iter().zip(&pred.args).map(|(p, a)| sing(p, a)).collect();
            tys.push(ret_type(head_goal.clone()));
            if let Some(op) = next_alt {
                b.body.push(Instr::PushBt { re: ENV.into(), op });
            }
            for i in 1..=n {
                b.body.push(Instr::Proj { rd: reg(i), rs: ENV.into(), i });
            }
            b.body.push(Instr::Proj { rd: RET.into(), rs: ENV.into(), i: n + 1 });
            RegFile::new().with(ENV, MType::Tuple(tys))
        };

        // head
        let eqs: HashMap<&str, &FlatEq> = fc.head_eqs.iter().map(|e| (e.var.as_str(), e)).collect();
        for (i, a) in fc.head.iter().enumerate() {
            let ri = reg(i + 1);
            match a {
                FlatArg::Var(x) if !b.is_seen(x) => b.see(x, ri, true),
                FlatArg::Var(x) => {
                    let r = b.reg_of[x].clone();
                    b.body.push(Instr::GetVal { r1: r, r2: ri });
                }
                FlatArg::Str(cn, vs) => b.get_structure(cn, vs, ri, &eqs, &temps),
            }
        }

        let proof_head = |ds: &[String]| {
            Term::app(
                label.clone(),
                c.vars
                    .iter()
                    .map(|(x, _)| var(x))
                    .chain(ds.iter().map(|d| var(d)))
                    .collect(),
            )
        };
        if fc.body.is_empty() {
            b.body.push(Instr::Jmp(Operand::App(Box::new(Operand::reg(RET)), proof_head(&[]))));
            return Ok(b.finish(label, lf_params, pre));
        }

        // body: the clause block handles subgoal 1, continuation block j handles j+1
        let source_goal = Family::app(fc.pred.clone(), c.head.iter().map(Tm::to_lf).collect());
        let s = fc.body.len();
        let mut root = None::<InlineBlock>;
        let mut chain: Vec<InlineBlock> = Vec::new();
        let mut cur = b;
        let mut cur_label = label.clone();
        let mut cur_params = lf_params;
        let mut cur_pre = pre;
        for (j, g) in fc.body.iter().enumerate() {
            self.check_callable(&g.source)?;
            let srcs = cur.build_args(g, &temps);
            let sg_label = format!("{label}-sg{}", j + 1);
            let mut next_block = None;
            if j + 1 < s {
                let ys = cur.seen.clone();
                let rt = cur.fresh();
                cur.body.push(Instr::PutTuple { rd: rt.clone(), n: ys.len() + 1 });
                for y in &ys {
                    cur.body.push(Instr::SetVal(cur.reg_of[y].clone()));
                }
                cur.body.push(Instr::SetVal(RET.into()));
                let args = ys.iter().map(|y| var(y)).chain(ds[..j].iter().map(|d| var(d)));
                cur.body.push(Instr::Close {
                    rd: RET.into(),
                    re: rt,
                    op: Operand::apply(Operand::label(sg_label.clone()), args),
                });

                let mut params: Vec<(String, Family)> =
                    ys.iter().map(|y| (y.clone(), Family::atom(types[y].clone()))).collect();
                params.extend(
                    ds[..=j]
                        .iter()
                        .zip(&fc.body)
                        .map(|(d, g)| (d.clone(), goal_family(&g.source))),
                );
                let mut tys: Vec<MType> = ys.iter().map(|y| sing(y, &types[y])).collect();
                tys.push(ret_type(source_goal.clone()));
                let mut nb = BlockGen::new(self.elab, &types, self.base);
                for (i, y) in ys.iter().enumerate() {
                    let r = nb.fresh();
                    nb.body.push(Instr::Proj { rd: r.clone(), rs: ENV.into(), i: i + 1 });
                    nb.see(y, r, true);
                }
                nb.body.push(Instr::Proj { rd: RET.into(), rs: ENV.into(), i: ys.len() + 1 });
                next_block = Some((sg_label, params, RegFile::new().with(ENV, MType::Tuple(tys)), nb));
            } else {
                // the last subgoal returns through a trampoline that applies the clause
                let all: Vec<Term> = c.vars.iter().map(|(x, _)| var(x)).collect();
                let args = all.iter().cloned().chain(ds[..j].iter().map(|d| var(d)));
                cur.body.push(Instr::Close {
                    rd: RET.into(),
                    re: RET.into(),
                    op: Operand::apply(Operand::label(sg_label.clone()), args),
                });
                let mut params: Vec<(String, Family)> = c
                    .vars
                    .iter()
                    .map(|(x, t)| (x.clone(), Family::atom(t.clone())))
                    .collect();
                params.extend(ds.iter().zip(&fc.body).map(|(d, g)| (d.clone(), goal_family(&g.source))));
                let tramp = CodeValue {
                    params,
                    pre: RegFile::new().with(ENV, ret_type(source_goal.clone())),
                    body: vec![Instr::Jmp(Operand::App(Box::new(Operand::reg(ENV)), proof_head(&ds)))],
                };
                chain.push(InlineBlock { label: sg_label, code: tramp, inner: Vec::new() });
            }
            cur.parallel_move(&srcs);
            cur.jump_to(&g.source);
            match next_block {
                Some((l, p, pre, nb)) => {
                    let done = std::mem::replace(&mut cur, nb).finish(
                        std::mem::replace(&mut cur_label, l),
                        std::mem::replace(&mut cur_params, p),
                        std::mem::replace(&mut cur_pre, pre),
                    );
                    match root {
                        None => root = Some(done),
                        Some(_) => chain.push(done),
                    }
                }
                None => {
                    let done = cur.finish(cur_label, cur_params, cur_pre);
                    match root {
                        None => root = Some(done),
                        Some(_) => chain.push(done),
                    }
                    break;
                }
            }
        }
        let mut root = root.expect("at least one subgoal");
        root.inner = chain;
        Ok(root)
    }

    fn query(&self, fq: &FlatQuery) -> Result<Vec<InlineBlock>, PipelineError> {
        let g = &fq.goal.source;
        self.check_callable(g)?;
        let mut types: HashMap<String, String> = fq.vars.iter().cloned().collect();
        types.extend(fq.temps.iter().cloned());
        let temps: HashSet<String> = fq.temps.iter().map(|(t, _)| t.clone()).collect();
        let mut b = BlockGen::new(self.elab, &types, self.base);
        let srcs = b.build_args(&fq.goal, &temps);
        let rt = b.fresh();
        b.body.push(Instr::PutTuple { rd: rt.clone(), n: fq.vars.len() });
        for (x, _) in &fq.vars {
            b.body.push(Instr::SetVal(b.reg_of[x].clone()));
        }
        b.body.push(Instr::Close {
            rd: RET.into(),
            re: rt,
            op: Operand::apply(Operand::label(INIT_CONT), fq.vars.iter().map(|(x, _)| var(x))),
        });
        b.parallel_move(&srcs);
        b.jump_to(g);
        let query = b.finish(QUERY_LABEL.into(), Vec::new(), RegFile::new());

        let goal = goal_family(g);
        let taken: BTreeSet<String> = fq.vars.iter().map(|(x, _)| x.clone()).collect();
        let d = proof_names(1, &taken).remove(0);
        let mut params: Vec<(String, Family)> = fq
            .vars
            .iter()
            .map(|(x, t)| (x.clone(), Family::atom(t.clone())))
            .collect();
        params.push((d.clone(), goal.clone()));
        let init = CodeValue {
            params,
            pre: RegFile::new().with(
                ENV,
                MType::Tuple(fq.vars.iter().map(|(x, t)| sing(x, t)).collect()),
            ),
            body: vec![Instr::Succeed(Some((var(&d), goal)))],
        };
        Ok(vec![
            query,
            InlineBlock { label: INIT_CONT.into(), code: init, inner: Vec::new() },
        ])
    }
}

/// Generates TWAM code without tail calls; see [`apply_tco`].
pub fn compile(elab: &Elaborated, flat: &Flat, sigma: Signature) -> Result<Program, PipelineError> {
    let max_arity = elab.preds.iter().map(|p| p.args.len()).max().unwrap_or(0);
    let comp = Compiler { elab, base: max_arity + 1 };
    let mut code = Vec::new();
    for b in comp.query(&flat.query)? {
        hoist(b, &mut code);
    }
    let counts: HashMap<&str, usize> = elab.preds.iter().map(|p| (p.name.as_str(), p.clauses.len())).collect();
    for fc in &flat.clauses {
        hoist(comp.clause(fc, counts[fc.pred.as_str()])?, &mut code);
    }
    Ok(Program {
        mode: Mode::Twam,
        types: elab.types.clone(),
        sigma,
        code,
        query: QUERY_LABEL.into(),
        answers: flat.query.vars.iter().map(|(x, _)| x.clone()).collect(),
    })
}

fn rename_reg(op: &Operand, from: &str, to: &str) -> Operand {
    match op {
        Operand::Reg(r) if r == from => Operand::reg(to),
        Operand::Reg(_) | Operand::Label(_) => op.clone(),
        Operand::App(f, m) => Operand::App(Box::new(rename_reg(f, from, to)), m.clone()),
        Operand::Lam(x, a, b) => Operand::Lam(x.clone(), a.clone(), Box::new(rename_reg(b, from, to))),
    }
}

/// A block whose whole job is `jmp (env ...)` on a continuation environment.
fn trampoline(cv: &CodeValue) -> Option<&Operand> {
    match (cv.body.as_slice(), cv.pre.0.len(), cv.pre.get(ENV)) {
        ([Instr::Jmp(op)], 1, Some(MType::Cont(..))) if op.root() == &Operand::reg(ENV) => Some(op),
        _ => None,
    }
}

fn labels_in(op: &Operand, out: &mut HashSet<String>) {
    match op {
        Operand::Label(l) => {
            out.insert(l.clone());
        }
        Operand::Reg(_) => {}
        Operand::App(f, _) => labels_in(f, out),
        Operand::Lam(_, _, b) => labels_in(b, out),
    }
}

/// Replaces each `close ret, ret, (t M⃗)` into a trampoline `t` by a `mov`
/// of the proof-transforming continuation it would build, then drops the
/// trampolines nobody references.
pub fn apply_tco(p: &Program) -> Program {
    let tramps: HashMap<String, (CodeValue, Operand)> = p
        .code
        .iter()
        .filter_map(|(l, cv)| trampoline(cv).map(|op| (l.clone(), (cv.clone(), op.clone()))))
        .collect();
    let mut out = p.clone();
    for (_, cv) in out.code.iter_mut() {
        for ins in cv.body.iter_mut() {
            let Instr::Close { rd, re, op } = ins else { continue };
            if rd != RET || re != RET {
                continue;
            }
            let Some((l, args)) = op.as_label_app() else { continue };
            let Some((tcv, jop)) = tramps.get(l) else { continue };
            if tcv.params.len() != args.len() + 1 {
                continue;
            }
            let s = Subst::from_pairs(
                tcv.params
                    .iter()
                    .map(|(x, _)| x.clone())
                    .zip(args.iter().map(|m| (*m).clone())),
            );
            let (x, a) = tcv.params.last().expect("nonempty").clone();
            let body = rename_reg(&jop.subst(&s), ENV, RET);
            *ins = Instr::Mov {
                rd: RET.into(),
                op: Operand::Lam(x, s.apply_family(&a), Box::new(body)),
            };
        }
    }
    let mut used = HashSet::new();
    for (_, cv) in &out.code {
        for ins in &cv.body {
            if let Some(op) = ins.operand() {
                labels_in(op, &mut used);
            }
        }
    }
    out.code
        .retain(|(l, _)| !tramps.contains_key(l) || used.contains(l));
    out
}

// ---- driver ----

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("syntax error: {0}")]
    Syntax(SyntaxError),
    #[error("{0}")]
    Elab(ElabError),
    #[error("compile error: {0}")]
    Compile(String),
    #[error("certification failed: {0}")]
    Certify(CheckError),
    #[error("erased program failed to check: {0}")]
    Recheck(CheckError),
}

impl From<FrontendError> for PipelineError {
    fn from(e: FrontendError) -> Self {
        match e {
            FrontendError::Syntax(e) => PipelineError::Syntax(e),
            FrontendError::Elab(e) => PipelineError::Elab(e),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub elab: Elaborated,
    pub lf: Signature,
    pub flat: Flat,
    pub twam: Program,
    pub swam: Program,
    pub report: Report,
}

/// Checks TWAM code, erases it, and checks the result again.
pub fn certify(twam: &Program) -> Result<(Program, Report), PipelineError> {
    let report = check_program(twam).map_err(PipelineError::Certify)?;
    let swam = erase(twam);
    check_program(&swam).map_err(PipelineError::Recheck)?;
    Ok((swam, report))
}

pub fn compile_elaborated(elab: Elaborated, opts: CompileOptions) -> Result<Compiled, PipelineError> {
    let lf = translate_to_lf(&elab);
    let flat = flatten(&elab);
    let mut twam = compile(&elab, &flat, lf.clone())?;
    if opts.tco {
        twam = apply_tco(&twam);
    }
    let (swam, report) = certify(&twam)?;
    Ok(Compiled { elab, lf, flat, twam, swam, report })
}

pub fn compile_source(src: &str, opts: CompileOptions) -> Result<Compiled, PipelineError> {
    let elab = frontend::load(src, frontend::Options { multi_goal_query: opts.multi_goal_query })?;
    compile_elaborated(elab, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{run, Outcome, RunConfig};

    const PLUS: &str = "
nat : type.
zero : nat.
succ : nat -> nat.
plus : nat -> nat -> nat -> prop.
plus(zero, X, X).
plus(succ(X), Y, succ(Z)) :- plus(X, Y, Z).
?- plus(X, zero, succ(zero)).
";

    fn answers(c: &Compiled, checked: bool) -> (Outcome, u64) {
        let r = run(&c.twam, RunConfig { checked, ..RunConfig::default() }).unwrap();
        (r.outcome, r.stats.steps)
    }

    #[test]
    fn plus_compiles_checks_and_runs() {
        for tco in [true, false] {
            let c = compile_source(PLUS, CompileOptions { tco, ..Default::default() }).unwrap();
            assert!(c.report.warnings.is_empty(), "{:?}", c.report.warnings);
            for checked in [false, true] {
                let (out, _) = answers(&c, checked);
                let Outcome::Success { answers, .. } = out else { panic!("{out:?}") };
                assert_eq!(answers, vec![("X".into(), "succ(zero)".into())]);
            }
            let r = run(&c.swam, RunConfig::default()).unwrap();
            assert!(r.outcome.is_success());
        }
    }

    #[test]
    fn flat_form() {
        let c = compile_source(
            "nat : type. zero : nat. succ : nat -> nat. q : nat -> prop. q(X).
             p : nat -> prop. p(succ(succ(X))) :- q(succ(succ(zero))). ?- p(Y).",
            CompileOptions::default(),
        )
        .unwrap();
        let text = c.flat.to_string();
        assert!(text.contains("p(succ(T1)) :- T1 = succ(X), T3 = zero, T2 = succ(T3), q(succ(T2))."), "{text}");
        assert!(answers(&c, true).0.is_success());
    }

    #[test]
    fn tco_removes_trampolines() {
        let plain = compile_source(PLUS, CompileOptions { tco: false, ..Default::default() }).unwrap();
        let tco = compile_source(PLUS, CompileOptions::default()).unwrap();
        assert!(plain.twam.block("plus-2-sg1").is_some());
        assert!(tco.twam.block("plus-2-sg1").is_none());
        let b = tco.twam.block("plus-2").unwrap();
        assert!(b.body.iter().any(|i| matches!(i, Instr::Mov { rd, op: Operand::Lam(..) } if rd == RET)));
    }

    #[test]
    fn parallel_move_cycles() {
        let elab = frontend::load("t : type. a : t. p : t -> prop. p(a). ?- p(a).", Default::default()).unwrap();
        let types = HashMap::new();
        let mut b = BlockGen::new(&elab, &types, 5);
        b.parallel_move(&["r2".into(), "r1".into(), "r3".into()]);
        let shown: Vec<String> = b.body.iter().map(|i| i.to_string()).collect();
        assert_eq!(shown, vec!["mov r5, r1", "mov r1, r2", "mov r2, r5"]);
    }

    #[test]
    fn uncallable_predicate() {
        let e = compile_source("t : type. a : t. p : t -> prop. ?- p(a).", Default::default()).unwrap_err();
        assert!(matches!(e, PipelineError::Compile(_)), "{e}");
    }

    #[test]
    fn multi_subgoal_clause() {
        let src = "
nat : type.
zero : nat.
succ : nat -> nat.
plus : nat -> nat -> nat -> prop.
plus(zero, X, X).
plus(succ(X), Y, succ(Z)) :- plus(X, Y, Z).
times : nat -> nat -> nat -> prop.
times(zero, Y, zero).
times(succ(X), Y, Z) :- times(X, Y, W), plus(W, Y, Z).
?- times(succ(succ(zero)), succ(succ(succ(zero))), Z).
";
        for tco in [true, false] {
            let c = compile_source(src, CompileOptions { tco, ..Default::default() }).unwrap();
            let (out, _) = answers(&c, true);
            let Outcome::Success { answers, proof } = out else { panic!("{out:?}") };
            assert_eq!(answers[0].1, "succ(succ(succ(succ(succ(succ(zero))))))");
            assert!(proof.is_some());
        }
    }
}
