//! T-Prolog: parsing, elaboration (simple types, one per identifier) and
//! translation of an elaborated program into an LF signature.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::lf::{Family, Kind, Signature, Term};
use crate::syntax::{Cursor, Pos, SyntaxError, Tok};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum STerm {
    Var(String, Pos),
    App(String, Vec<STerm>, Pos),
}

impl STerm {
    pub fn pos(&self) -> Pos {
        match self {
            STerm::Var(_, p) | STerm::App(_, _, p) => *p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    pub head: STerm,
    pub body: Vec<STerm>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decl {
    Type {
        name: String,
        pos: Pos,
    },
    Constructor {
        name: String,
        args: Vec<String>,
        result: String,
        pos: Pos,
    },
    Predicate {
        name: String,
        args: Vec<String>,
        clauses: Vec<Clause>,
        pos: Pos,
    },
}

impl Decl {
    pub fn name(&self) -> &str {
        match self {
            Decl::Type { name, .. } | Decl::Constructor { name, .. } | Decl::Predicate { name, .. } => {
                name
            }
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            Decl::Type { pos, .. } | Decl::Constructor { pos, .. } | Decl::Predicate { pos, .. } => *pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub goals: Vec<STerm>,
    pub pos: Pos,
}

/// A parsed but not yet elaborated T-Prolog program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub decls: Vec<Decl>,
    pub query: Query,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrontendError {
    Syntax(SyntaxError),
    Elab(ElabError),
}

impl fmt::Display for FrontendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrontendError::Syntax(e) => write!(f, "syntax error at {e}"),
            FrontendError::Elab(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FrontendError {}

impl From<SyntaxError> for FrontendError {
    fn from(e: SyntaxError) -> Self {
        FrontendError::Syntax(e)
    }
}

impl From<ElabError> for FrontendError {
    fn from(e: ElabError) -> Self {
        FrontendError::Elab(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{pos}: {msg}")]
pub struct ElabError {
    pub pos: Pos,
    pub msg: String,
}

fn elab_err<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ElabError> {
    Err(ElabError {
        pos,
        msg: msg.into(),
    })
}

fn is_var_name(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_uppercase() || c == '_')
}

fn source_ident(cur: &mut Cursor) -> Result<String, SyntaxError> {
    let pos = cur.pos();
    let s = cur.expect_ident()?;
    if s.contains('-') || s.contains('\'') {
        return Err(SyntaxError {
            pos,
            msg: format!("`{s}` is not a T-Prolog identifier"),
        });
    }
    Ok(s)
}

fn parse_sterm(cur: &mut Cursor, anon: &mut usize) -> Result<STerm, SyntaxError> {
    let pos = cur.pos();
    let name = source_ident(cur)?;
    if is_var_name(&name) {
        if name == "_" {
            *anon += 1;
            return Ok(STerm::Var(format!("_{anon}"), pos));
        }
        return Ok(STerm::Var(name, pos));
    }
    let mut args = Vec::new();
    if cur.eat_punct("(") && !cur.eat_punct(")") {
        loop {
            args.push(parse_sterm(cur, anon)?);
            if cur.eat_punct(")") {
                break;
            }
            cur.expect_punct(",")?;
        }
    }
    Ok(STerm::App(name, args, pos))
}

fn parse_goals(cur: &mut Cursor, anon: &mut usize) -> Result<Vec<STerm>, SyntaxError> {
    let mut goals = vec![parse_sterm(cur, anon)?];
    while cur.eat_punct(",") {
        goals.push(parse_sterm(cur, anon)?);
    }
    cur.expect_punct(".")?;
    Ok(goals)
}

/// Parses concrete T-Prolog syntax. Clauses attach to the closest preceding
/// predicate declaration.
pub fn parse(src: &str) -> Result<Program, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let mut decls: Vec<Decl> = Vec::new();
    let mut anon = 0usize;
    loop {
        if cur.at_end() {
            return cur.err("missing query `?- goal.`");
        }
        if cur.is_punct("?-") {
            let pos = cur.pos();
            cur.bump();
            let goals = parse_goals(&mut cur, &mut anon)?;
            if !cur.at_end() {
                return cur.err("the query must be the last item of the program");
            }
            return Ok(Program {
                decls,
                query: Query { goals, pos },
            });
        }
        let is_decl = matches!(cur.peek(), Some(Tok::Ident(_)))
            && (cur.is_punct_at(1, ":") || cur.is_punct_at(1, "/"));
        if is_decl {
            decls.push(parse_decl(&mut cur)?);
            continue;
        }
        let pos = cur.pos();
        let head = parse_sterm(&mut cur, &mut anon)?;
        let body = if cur.eat_punct(":-") {
            parse_goals(&mut cur, &mut anon)?
        } else {
            cur.expect_punct(".")?;
            Vec::new()
        };
        match decls.last_mut() {
            Some(Decl::Predicate { clauses, .. }) => clauses.push(Clause { head, body, pos }),
            _ => {
                return Err(SyntaxError {
                    pos,
                    msg: "clause does not follow a predicate declaration".into(),
                })
            }
        }
    }
}

fn parse_decl(cur: &mut Cursor) -> Result<Decl, SyntaxError> {
    let pos = cur.pos();
    let name = source_ident(cur)?;
    let annotated = if cur.eat_punct("/") {
        let n = cur.expect_int()?;
        Some(n as usize)
    } else {
        None
    };
    cur.expect_punct(":")?;
    let mut parts = vec![source_ident(cur)?];
    while cur.eat_punct("->") {
        parts.push(source_ident(cur)?);
    }
    cur.expect_punct(".")?;
    let result = parts.pop().expect("nonempty");
    if let Some(n) = annotated {
        if n != parts.len() {
            return Err(SyntaxError {
                pos,
                msg: format!(
                    "arity annotation {n} does not match the {} argument(s) of `{name}`",
                    parts.len()
                ),
            });
        }
    }
    Ok(match result.as_str() {
        "type" if parts.is_empty() => Decl::Type { name, pos },
        "type" => {
            return Err(SyntaxError {
                pos,
                msg: format!("`{name}`: type declarations take no arguments"),
            })
        }
        "prop" => Decl::Predicate {
            name,
            args: parts,
            clauses: Vec::new(),
            pos,
        },
        _ => Decl::Constructor {
            name,
            args: parts,
            result,
            pos,
        },
    })
}

/// Elaborated first-order term.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tm {
    Var(String),
    App(String, Vec<Tm>),
}

impl Tm {
    pub fn to_lf(&self) -> Term {
        match self {
            Tm::Var(x) => Term::var(x.clone()),
            Tm::App(c, args) => Term::app(c.clone(), args.iter().map(Tm::to_lf).collect()),
        }
    }

    pub fn vars_into(&self, out: &mut Vec<String>) {
        match self {
            Tm::Var(x) => {
                if !out.contains(x) {
                    out.push(x.clone());
                }
            }
            Tm::App(_, args) => args.iter().for_each(|a| a.vars_into(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Tm::Var(_) => 1,
            Tm::App(_, args) => 1 + args.iter().map(Tm::depth).max().unwrap_or(0),
        }
    }
}

impl fmt::Display for Tm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tm::Var(x) => write!(f, "{x}"),
            Tm::App(c, args) if args.is_empty() => write!(f, "{c}"),
            Tm::App(c, args) => {
                write!(f, "{c}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Goal {
    pub pred: String,
    pub args: Vec<Tm>,
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", Tm::App(self.pred.clone(), self.args.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EClause {
    pub head: Vec<Tm>,
    pub body: Vec<Goal>,
    /// Every variable of the clause with its type, in first-use order.
    pub vars: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pred {
    pub name: String,
    pub args: Vec<String>,
    pub clauses: Vec<EClause>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EQuery {
    pub goal: Goal,
    pub vars: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Type(String),
    Constructor(String),
    Predicate(String),
}

/// A typechecked program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Elaborated {
    pub order: Vec<Item>,
    pub types: Vec<String>,
    pub constructors: Vec<(String, Vec<String>, String)>,
    pub preds: Vec<Pred>,
    pub query: EQuery,
}

impl Elaborated {
    pub fn pred(&self, name: &str) -> Option<&Pred> {
        self.preds.iter().find(|p| p.name == name)
    }

    pub fn constructor(&self, name: &str) -> Option<(&[String], &str)> {
        self.constructors
            .iter()
            .find(|c| c.0 == name)
            .map(|(_, a, r)| (a.as_slice(), r.as_str()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Options {
    /// Accept `?- g1, g2.` by wrapping the goals in a synthetic `query`
    /// predicate over the query variables.
    pub multi_goal_query: bool,
}

pub const SYNTHETIC_QUERY: &str = "query";

#[derive(Clone, Debug)]
enum Sym {
    Type,
    Cons(Vec<String>, String),
    Pred(Vec<String>),
}

struct Env {
    syms: HashMap<String, Sym>,
}

impl Env {
    fn check_type_name(&self, t: &str, pos: Pos) -> Result<(), ElabError> {
        match self.syms.get(t) {
            Some(Sym::Type) => Ok(()),
            Some(_) => elab_err(pos, format!("`{t}` is not a type")),
            None => elab_err(pos, format!("unbound type `{t}`")),
        }
    }

    fn term(
        &self,
        t: &STerm,
        expected: &str,
        vars: &mut Vec<(String, String)>,
    ) -> Result<Tm, ElabError> {
        match t {
            STerm::Var(x, pos) => {
                match vars.iter().find(|(y, _)| y == x) {
                    Some((_, ty)) if ty != expected => {
                        return elab_err(
                            *pos,
                            format!("variable `{x}` used at conflicting types `{ty}` and `{expected}`"),
                        )
                    }
                    Some(_) => {}
                    None => vars.push((x.clone(), expected.to_string())),
                }
                Ok(Tm::Var(x.clone()))
            }
            STerm::App(c, args, pos) => match self.syms.get(c) {
                Some(Sym::Cons(arg_tys, result)) => {
                    if result != expected {
                        return elab_err(
                            *pos,
                            format!("type mismatch: `{c}` builds a `{result}` but a `{expected}` is expected"),
                        );
                    }
                    if arg_tys.len() != args.len() {
                        return elab_err(
                            *pos,
                            format!(
                                "constructor `{c}` expects {} argument(s), found {}",
                                arg_tys.len(),
                                args.len()
                            ),
                        );
                    }
                    let args = args
                        .iter()
                        .zip(arg_tys)
                        .map(|(a, ty)| self.term(a, ty, vars))
                        .collect::<Result<_, _>>()?;
                    Ok(Tm::App(c.clone(), args))
                }
                Some(Sym::Pred(_)) => elab_err(*pos, format!("predicate `{c}` used as a term")),
                Some(Sym::Type) => elab_err(*pos, format!("type `{c}` used as a term")),
                None => elab_err(*pos, format!("unbound constructor `{c}`")),
            },
        }
    }

    fn goal(&self, t: &STerm, vars: &mut Vec<(String, String)>) -> Result<Goal, ElabError> {
        match t {
            STerm::Var(x, pos) => elab_err(*pos, format!("variable `{x}` used as a goal")),
            STerm::App(p, args, pos) => match self.syms.get(p) {
                Some(Sym::Pred(arg_tys)) => {
                    if arg_tys.len() != args.len() {
                        return elab_err(
                            *pos,
                            format!(
                                "predicate `{p}` expects {} argument(s), found {}",
                                arg_tys.len(),
                                args.len()
                            ),
                        );
                    }
                    let args = args
                        .iter()
                        .zip(arg_tys)
                        .map(|(a, ty)| self.term(a, ty, vars))
                        .collect::<Result<_, _>>()?;
                    Ok(Goal {
                        pred: p.clone(),
                        args,
                    })
                }
                Some(_) => elab_err(*pos, format!("`{p}` is not a predicate")),
                None => elab_err(*pos, format!("unbound predicate `{p}`")),
            },
        }
    }
}

pub fn elaborate(p: &Program, opts: Options) -> Result<Elaborated, ElabError> {
    let mut env = Env {
        syms: HashMap::new(),
    };
    let mut order = Vec::new();
    let mut types = Vec::new();
    let mut constructors = Vec::new();
    // predicates are entered up front so that clauses may call predicates
    // declared further down (mutual recursion)
    for d in &p.decls {
        if let Decl::Predicate { name, args, pos, .. } = d {
            if opts.multi_goal_query && name == SYNTHETIC_QUERY {
                return elab_err(*pos, format!("`{SYNTHETIC_QUERY}` is reserved for multi-goal queries"));
            }
            if env.syms.contains_key(name) {
                return elab_err(*pos, format!("`{name}` declared twice"));
            }
            env.syms.insert(name.clone(), Sym::Pred(args.clone()));
        }
    }
    for d in &p.decls {
        match d {
            Decl::Type { name, pos } => {
                if env.syms.contains_key(name) {
                    return elab_err(*pos, format!("`{name}` declared twice"));
                }
                env.syms.insert(name.clone(), Sym::Type);
                types.push(name.clone());
                order.push(Item::Type(name.clone()));
            }
            Decl::Constructor {
                name,
                args,
                result,
                pos,
            } => {
                if env.syms.contains_key(name) {
                    return elab_err(*pos, format!("`{name}` declared twice"));
                }
                for t in args.iter().chain(std::iter::once(result)) {
                    env.check_type_name(t, *pos)?;
                }
                env.syms
                    .insert(name.clone(), Sym::Cons(args.clone(), result.clone()));
                constructors.push((name.clone(), args.clone(), result.clone()));
                order.push(Item::Constructor(name.clone()));
            }
            Decl::Predicate { name, args, pos, .. } => {
                for t in args {
                    env.check_type_name(t, *pos)?;
                }
                order.push(Item::Predicate(name.clone()));
            }
        }
    }
    let mut preds = Vec::new();
    for d in &p.decls {
        let Decl::Predicate {
            name,
            args,
            clauses,
            ..
        } = d
        else {
            continue;
        };
        let mut eclauses = Vec::new();
        for c in clauses {
            match &c.head {
                STerm::App(h, _, pos) if h != name => {
                    return elab_err(
                        *pos,
                        format!("clause head predicate mismatch: `{h}` under declaration of `{name}`"),
                    )
                }
                STerm::Var(x, pos) => {
                    return elab_err(*pos, format!("clause head predicate mismatch: variable `{x}`"))
                }
                _ => {}
            }
            let mut vars = Vec::new();
            let head = env.goal(&c.head, &mut vars)?;
            let body = c
                .body
                .iter()
                .map(|g| env.goal(g, &mut vars))
                .collect::<Result<_, _>>()?;
            eclauses.push(EClause {
                head: head.args,
                body,
                vars,
            });
        }
        preds.push(Pred {
            name: name.clone(),
            args: args.clone(),
            clauses: eclauses,
        });
    }
    let mut qvars = Vec::new();
    let goals: Vec<Goal> = p
        .query
        .goals
        .iter()
        .map(|g| env.goal(g, &mut qvars))
        .collect::<Result<_, _>>()?;
    let query = if goals.len() == 1 {
        EQuery {
            goal: goals.into_iter().next().expect("one goal"),
            vars: qvars,
        }
    } else if opts.multi_goal_query {
        let head: Vec<Tm> = qvars.iter().map(|(x, _)| Tm::Var(x.clone())).collect();
        preds.push(Pred {
            name: SYNTHETIC_QUERY.to_string(),
            args: qvars.iter().map(|(_, t)| t.clone()).collect(),
            clauses: vec![EClause {
                head: head.clone(),
                body: goals,
                vars: qvars.clone(),
            }],
        });
        order.push(Item::Predicate(SYNTHETIC_QUERY.to_string()));
        EQuery {
            goal: Goal {
                pred: SYNTHETIC_QUERY.to_string(),
                args: head,
            },
            vars: qvars,
        }
    } else {
        return elab_err(
            p.query.pos,
            "queries take a single goal (enable multi-goal queries to allow more)",
        );
    };
    Ok(Elaborated {
        order,
        types,
        constructors,
        preds,
        query,
    })
}

/// Parse and elaborate in one go.
pub fn load(src: &str, opts: Options) -> Result<Elaborated, FrontendError> {
    let p = parse(src)?;
    Ok(elaborate(&p, opts)?)
}

pub fn clause_name(pred: &str, k: usize) -> String {
    format!("{pred}-{k}")
}

/// Names for the subgoal proof binders of a clause, disjoint from its variables.
pub fn proof_names(n: usize, taken: &BTreeSet<String>) -> Vec<String> {
    let base: Vec<String> = if n == 1 {
        vec!["D".to_string()]
    } else {
        (1..=n).map(|i| format!("D{i}")).collect()
    };
    base.into_iter()
        .map(|mut d| {
            while taken.contains(&d) {
                d.push('\'');
            }
            d
        })
        .collect()
}

pub fn goal_family(g: &Goal) -> Family {
    Family::app(g.pred.clone(), g.args.iter().map(Tm::to_lf).collect())
}

/// The LF type of a clause constant: products over the variables, then over
/// the subgoal proofs, ending in the head.
pub fn clause_family(pred: &str, c: &EClause) -> Family {
    let taken: BTreeSet<String> = c.vars.iter().map(|(x, _)| x.clone()).collect();
    let ds = proof_names(c.body.len(), &taken);
    let mut fam = goal_family(&Goal {
        pred: pred.to_string(),
        args: c.head.clone(),
    });
    for (d, g) in ds.iter().zip(&c.body).rev() {
        fam = Family::pi(d.clone(), goal_family(g), fam);
    }
    for (x, t) in c.vars.iter().rev() {
        fam = Family::pi(x.clone(), Family::atom(t.clone()), fam);
    }
    fam
}

fn simple_arrows(args: &[String], last: Family) -> Family {
    args.iter()
        .rev()
        .fold(last, |acc, a| Family::arrow(Family::atom(a.clone()), acc))
}

/// LF signature of an elaborated program: declarations in source order,
/// followed by the clause constants of every predicate.
pub fn translate_to_lf(p: &Elaborated) -> Signature {
    let mut sig = Signature::new();
    for item in &p.order {
        match item {
            Item::Type(a) => sig.push_family(a.clone(), Kind::Type),
            Item::Constructor(c) => {
                let (args, result) = p.constructor(c).expect("declared");
                sig.push_const(c.clone(), simple_arrows(args, Family::atom(result)));
            }
            Item::Predicate(name) => {
                let pred = p.pred(name).expect("declared");
                let kind = pred
                    .args
                    .iter()
                    .rev()
                    .fold(Kind::Type, |k, a| Kind::arrow(Family::atom(a.clone()), k));
                sig.push_family(name.clone(), kind);
            }
        }
    }
    for pred in &p.preds {
        for (k, c) in pred.clauses.iter().enumerate() {
            sig.push_const(clause_name(&pred.name, k + 1), clause_family(&pred.name, c));
        }
    }
    sig
}

impl fmt::Display for Elaborated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for item in &self.order {
            match item {
                Item::Type(a) => writeln!(f, "{a} : type.")?,
                Item::Constructor(c) => {
                    let (args, result) = self.constructor(c).expect("declared");
                    write!(f, "{c}/{} : ", args.len())?;
                    for a in args {
                        write!(f, "{a} -> ")?;
                    }
                    writeln!(f, "{result}.")?;
                }
                Item::Predicate(name) => {
                    let pred = self.pred(name).expect("declared");
                    write!(f, "{name}/{} : ", pred.args.len())?;
                    for a in &pred.args {
                        write!(f, "{a} -> ")?;
                    }
                    writeln!(f, "prop.")?;
                    for c in &pred.clauses {
                        let head = Goal {
                            pred: name.clone(),
                            args: c.head.clone(),
                        };
                        if c.body.is_empty() {
                            writeln!(f, "{head}.")?;
                        } else {
                            write!(f, "{head} :- ")?;
                            for (i, g) in c.body.iter().enumerate() {
                                if i > 0 {
                                    write!(f, ", ")?;
                                }
                                write!(f, "{g}")?;
                            }
                            writeln!(f, ".")?;
                        }
                    }
                }
            }
        }
        writeln!(f, "?- {}.", self.query.goal)
    }
}
