//! LF kernel for the first-order fragment: spine-form terms, type families,
//! kinds, signatures, typechecking, substitution and static unification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::syntax::{Cursor, SyntaxError, Tok};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Head {
    Var(String),
    Const(String),
}

impl Head {
    pub fn name(&self) -> &str {
        match self {
            Head::Var(s) | Head::Const(s) => s,
        }
    }
}

/// A head applied to a (possibly empty) argument spine.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term {
    pub head: Head,
    pub args: Vec<Term>,
}

impl Term {
    pub fn var(x: impl Into<String>) -> Term {
        Term {
            head: Head::Var(x.into()),
            args: Vec::new(),
        }
    }

    pub fn cnst(c: impl Into<String>) -> Term {
        Term {
            head: Head::Const(c.into()),
            args: Vec::new(),
        }
    }

    pub fn app(c: impl Into<String>, args: Vec<Term>) -> Term {
        Term {
            head: Head::Const(c.into()),
            args,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match &self.head {
            Head::Var(x) if self.args.is_empty() => Some(x),
            _ => None,
        }
    }

    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        if let Head::Var(x) = &self.head {
            out.insert(x.clone());
        }
        for a in &self.args {
            a.free_vars(out);
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        matches!(&self.head, Head::Var(y) if y == x) || self.args.iter().any(|a| a.mentions(x))
    }

    pub fn size(&self) -> usize {
        1 + self.args.iter().map(Term::size).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    App { head: String, args: Vec<Term> },
    Pi { var: String, dom: Box<Family>, cod: Box<Family> },
}

impl Family {
    pub fn atom(a: impl Into<String>) -> Family {
        Family::App {
            head: a.into(),
            args: Vec::new(),
        }
    }

    pub fn app(a: impl Into<String>, args: Vec<Term>) -> Family {
        Family::App {
            head: a.into(),
            args,
        }
    }

    pub fn pi(var: impl Into<String>, dom: Family, cod: Family) -> Family {
        Family::Pi {
            var: var.into(),
            dom: Box::new(dom),
            cod: Box::new(cod),
        }
    }

    pub fn arrow(dom: Family, cod: Family) -> Family {
        Family::pi(ANON, dom, cod)
    }

    /// The name of an argument-free family constant, e.g. `nat`.
    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Family::App { head, args } if args.is_empty() => Some(head),
            _ => None,
        }
    }

    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Family::App { args, .. } => args.iter().for_each(|a| a.free_vars(out)),
            Family::Pi { var, dom, cod } => {
                dom.free_vars(out);
                let mut inner = BTreeSet::new();
                cod.free_vars(&mut inner);
                inner.remove(var);
                out.extend(inner);
            }
        }
    }

    /// The final codomain after stripping every product.
    pub fn target(&self) -> &Family {
        match self {
            Family::Pi { cod, .. } => cod.target(),
            app => app,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Type,
    Pi { var: String, dom: Family, cod: Box<Kind> },
}

impl Kind {
    pub fn arrow(dom: Family, cod: Kind) -> Kind {
        Kind::Pi {
            var: ANON.to_string(),
            dom,
            cod: Box::new(cod),
        }
    }
}

/// Binder name used for non-dependent products; printed as `->`.
pub const ANON: &str = "_";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Classifier {
    Kind(Kind),
    Type(Family),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Signature {
    decls: Vec<(String, Classifier)>,
    index: HashMap<String, usize>,
}

impl Signature {
    pub fn new() -> Signature {
        Signature::default()
    }

    /// Appends a declaration; duplicates are kept so that `check_signature`
    /// can report them, but lookups see the first one.
    pub fn push(&mut self, name: impl Into<String>, cls: Classifier) {
        let name = name.into();
        self.index.entry(name.clone()).or_insert(self.decls.len());
        self.decls.push((name, cls));
    }

    pub fn push_family(&mut self, name: impl Into<String>, k: Kind) {
        self.push(name, Classifier::Kind(k));
    }

    pub fn push_const(&mut self, name: impl Into<String>, a: Family) {
        self.push(name, Classifier::Type(a));
    }

    pub fn decls(&self) -> &[(String, Classifier)] {
        &self.decls
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Classifier> {
        self.index.get(name).map(|&i| &self.decls[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn const_type(&self, name: &str) -> Option<&Family> {
        match self.get(name) {
            Some(Classifier::Type(a)) => Some(a),
            _ => None,
        }
    }

    pub fn family_kind(&self, name: &str) -> Option<&Kind> {
        match self.get(name) {
            Some(Classifier::Kind(k)) => Some(k),
            _ => None,
        }
    }

    fn prefix(&self, n: usize) -> Signature {
        let mut s = Signature::new();
        for (name, c) in &self.decls[..n] {
            s.push(name.clone(), c.clone());
        }
        s
    }

    /// Argument types and result type of a simply-typed constructor.
    pub fn constructor(&self, c: &str) -> Option<(Vec<String>, String)> {
        let mut a = self.const_type(c)?;
        let mut args = Vec::new();
        loop {
            match a {
                Family::Pi { dom, cod, .. } => {
                    args.push(dom.as_atom()?.to_string());
                    a = cod;
                }
                app => return Some((args, app.as_atom()?.to_string())),
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Context(pub Vec<(String, Family)>);

impl Context {
    pub fn new() -> Context {
        Context::default()
    }

    pub fn lookup(&self, x: &str) -> Option<&Family> {
        self.0.iter().rev().find(|(y, _)| y == x).map(|(_, a)| a)
    }

    pub fn contains(&self, x: &str) -> bool {
        self.lookup(x).is_some()
    }

    pub fn push(&mut self, x: impl Into<String>, a: Family) {
        self.0.push((x.into(), a));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(x, _)| x.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `[σ]Δ`: drops the substituted-for variables and rewrites the rest.
    pub fn apply(&self, s: &Subst) -> Context {
        Context(
            self.0
                .iter()
                .filter(|(x, _)| !s.binds(x))
                .map(|(x, a)| (x.clone(), s.apply_family(a)))
                .collect(),
        )
    }
}

/// A finite simultaneous substitution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Subst(BTreeMap<String, Term>);

impl Subst {
    pub fn new() -> Subst {
        Subst::default()
    }

    pub fn single(x: impl Into<String>, m: Term) -> Subst {
        let mut s = Subst::new();
        s.0.insert(x.into(), m);
        s
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, Term)>>(it: I) -> Subst {
        Subst(it.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn binds(&self, x: &str) -> bool {
        self.0.contains_key(x)
    }

    pub fn get(&self, x: &str) -> Option<&Term> {
        self.0.get(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Term)> {
        self.0.iter()
    }

    pub fn insert(&mut self, x: impl Into<String>, m: Term) {
        self.0.insert(x.into(), m);
    }

    pub fn remove(&mut self, x: &str) {
        self.0.remove(x);
    }

    pub fn range_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for m in self.0.values() {
            m.free_vars(&mut out);
        }
        out
    }

    pub fn apply(&self, m: &Term) -> Term {
        if self.0.is_empty() {
            return m.clone();
        }
        let args: Vec<Term> = m.args.iter().map(|a| self.apply(a)).collect();
        match &m.head {
            Head::Var(x) => match self.0.get(x) {
                Some(r) => {
                    let mut r = r.clone();
                    r.args.extend(args);
                    r
                }
                None => Term {
                    head: m.head.clone(),
                    args,
                },
            },
            Head::Const(_) => Term {
                head: m.head.clone(),
                args,
            },
        }
    }

    pub fn apply_family(&self, a: &Family) -> Family {
        if self.0.is_empty() {
            return a.clone();
        }
        match a {
            Family::App { head, args } => Family::App {
                head: head.clone(),
                args: args.iter().map(|m| self.apply(m)).collect(),
            },
            Family::Pi { var, dom, cod } => {
                let dom = self.apply_family(dom);
                let (var, inner) = self.under_binder(var, |avoid| {
                    let mut fv = BTreeSet::new();
                    cod.free_vars(&mut fv);
                    avoid.extend(fv);
                });
                let cod = match &inner {
                    Some((s, ren)) => s.apply_family(&ren.apply_family(cod)),
                    None => cod.as_ref().clone(),
                };
                Family::Pi {
                    var,
                    dom: Box::new(dom),
                    cod: Box::new(cod),
                }
            }
        }
    }

    pub fn apply_kind(&self, k: &Kind) -> Kind {
        match k {
            Kind::Type => Kind::Type,
            Kind::Pi { var, dom, cod } => {
                let dom = self.apply_family(dom);
                let (var, inner) = self.under_binder(var, |avoid| {
                    kind_free_vars(cod, avoid);
                });
                let cod = match &inner {
                    Some((s, ren)) => s.apply_kind(&ren.apply_kind(cod)),
                    None => cod.as_ref().clone(),
                };
                Kind::Pi {
                    var,
                    dom,
                    cod: Box::new(cod),
                }
            }
        }
    }

    /// Prepares substitution under a binder `var`: the binder shadows any
    /// mapping for itself and is renamed when it would capture a variable of
    /// the substitution's range. Returns the (possibly new) binder name and
    /// the pair (inner substitution, renaming) to push under it, or `None`
    /// when nothing needs to happen below the binder.
    pub(crate) fn under_binder(
        &self,
        var: &str,
        body_vars: impl FnOnce(&mut BTreeSet<String>),
    ) -> (String, Option<(Subst, Subst)>) {
        let mut inner = self.clone();
        inner.0.remove(var);
        if inner.0.is_empty() {
            return (var.to_string(), None);
        }
        let range = inner.range_vars();
        if var != ANON && range.contains(var) {
            let mut avoid = range;
            avoid.extend(inner.0.keys().cloned());
            body_vars(&mut avoid);
            let fresh = fresh_name(var, &avoid);
            let ren = Subst::single(var, Term::var(fresh.clone()));
            (fresh, Some((inner, ren)))
        } else {
            (var.to_string(), Some((inner, Subst::new())))
        }
    }

    /// Composition `[later, self]`: first `self`, then `later`.
    pub fn then(&self, later: &Subst) -> Subst {
        let mut out: BTreeMap<String, Term> = self
            .0
            .iter()
            .map(|(x, m)| (x.clone(), later.apply(m)))
            .collect();
        for (x, m) in &later.0 {
            out.entry(x.clone()).or_insert_with(|| m.clone());
        }
        out.retain(|x, m| m.as_var() != Some(x.as_str()));
        Subst(out)
    }
}

impl fmt::Display for Subst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (x, m)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}/{x}", DisplayArg(m))?;
        }
        write!(f, "]")
    }
}

fn kind_free_vars(k: &Kind, out: &mut BTreeSet<String>) {
    if let Kind::Pi { var, dom, cod } = k {
        dom.free_vars(out);
        let mut inner = BTreeSet::new();
        kind_free_vars(cod, &mut inner);
        inner.remove(var);
        out.extend(inner);
    }
}

/// A name based on `base` that is not in `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let stem = base.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_');
    let stem = if stem.is_empty() { "x" } else { stem };
    (1..)
        .map(|i| format!("{stem}_{i}"))
        .find(|n| !avoid.contains(n))
        .expect("unbounded")
}

pub fn substitute(s: &Subst, m: &Term) -> Term {
    s.apply(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Occurs {
    InTerm,
    NotInTerm,
}

pub fn occurs_static(x: &str, m: &Term) -> Occurs {
    if m.mentions(x) {
        Occurs::InTerm
    } else {
        Occurs::NotInTerm
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnifyResult {
    Unifier(Subst),
    Bottom,
}

impl UnifyResult {
    pub fn is_bottom(&self) -> bool {
        matches!(self, UnifyResult::Bottom)
    }
}

/// Most general unifier of two first-order terms. Variables bound in `ctx`
/// are flexible; any other variable is treated as a rigid constant.
pub fn static_unify(ctx: &Context, m1: &Term, m2: &Term) -> UnifyResult {
    let flex = |m: &Term| -> Option<String> {
        m.as_var().filter(|x| ctx.contains(x)).map(str::to_string)
    };
    if m1 == m2 && m1.args.is_empty() {
        return UnifyResult::Unifier(Subst::new());
    }
    if let Some(x) = flex(m1) {
        return if m2.mentions(&x) {
            UnifyResult::Bottom
        } else {
            UnifyResult::Unifier(Subst::single(x, m2.clone()))
        };
    }
    if let Some(x) = flex(m2) {
        return if m1.mentions(&x) {
            UnifyResult::Bottom
        } else {
            UnifyResult::Unifier(Subst::single(x, m1.clone()))
        };
    }
    if m1.head != m2.head || m1.args.len() != m2.args.len() {
        return UnifyResult::Bottom;
    }
    let mut sigma = Subst::new();
    let mut ctx = ctx.clone();
    for (a, b) in m1.args.iter().zip(&m2.args) {
        match static_unify(&ctx, &sigma.apply(a), &sigma.apply(b)) {
            UnifyResult::Bottom => return UnifyResult::Bottom,
            UnifyResult::Unifier(s) => {
                ctx = ctx.apply(&s);
                sigma = sigma.then(&s);
            }
        }
    }
    UnifyResult::Unifier(sigma)
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LfError {
    #[error("constant `{0}` declared twice")]
    Duplicate(String),
    #[error("unbound {0} `{1}`")]
    Unbound(&'static str, String),
    #[error("applying non-product `{head}` to argument `{arg}`")]
    NotProduct { head: String, arg: String },
    #[error("argument `{arg}` has type `{found}` but `{expected}` was expected")]
    Mismatch {
        arg: String,
        expected: String,
        found: String,
    },
    #[error("`{0}` is a type family, not a term")]
    NotATerm(String),
    #[error("`{0}` is a term, not a type family")]
    NotAFamily(String),
    #[error("type family `{0}` is not fully applied")]
    PartialFamily(String),
    #[error("in declaration of `{name}`: {err}")]
    InDecl { name: String, err: Box<LfError> },
}

pub fn check_signature(sig: &Signature) -> Result<(), LfError> {
    let mut seen = BTreeSet::new();
    for (i, (name, cls)) in sig.decls().iter().enumerate() {
        if !seen.insert(name.clone()) {
            return Err(LfError::Duplicate(name.clone()));
        }
        let prefix = sig.prefix(i);
        let res = match cls {
            Classifier::Kind(k) => check_kind(&prefix, &Context::new(), k),
            Classifier::Type(a) => check_type(&prefix, &Context::new(), a),
        };
        res.map_err(|e| LfError::InDecl {
            name: name.clone(),
            err: Box::new(e),
        })?;
    }
    Ok(())
}

pub fn check_kind(sig: &Signature, ctx: &Context, k: &Kind) -> Result<(), LfError> {
    match k {
        Kind::Type => Ok(()),
        Kind::Pi { var, dom, cod } => {
            check_type(sig, ctx, dom)?;
            let mut ctx = ctx.clone();
            ctx.push(var.clone(), dom.clone());
            check_kind(sig, &ctx, cod)
        }
    }
}

/// Checks `Δ ⊢ A : type`.
pub fn check_type(sig: &Signature, ctx: &Context, a: &Family) -> Result<(), LfError> {
    match kind_of(sig, ctx, a)? {
        Kind::Type => Ok(()),
        Kind::Pi { .. } => Err(LfError::PartialFamily(a.to_string())),
    }
}

/// Synthesizes the kind of a type family.
pub fn kind_of(sig: &Signature, ctx: &Context, a: &Family) -> Result<Kind, LfError> {
    match a {
        Family::App { head, args } => {
            let mut k = match sig.get(head) {
                Some(Classifier::Kind(k)) => k.clone(),
                Some(Classifier::Type(_)) => return Err(LfError::NotAFamily(head.clone())),
                None => return Err(LfError::Unbound("type family", head.clone())),
            };
            for m in args {
                match k {
                    Kind::Pi { var, dom, cod } => {
                        let found = check_term(sig, ctx, m)?;
                        if !alpha_eq(&found, &dom) {
                            return Err(LfError::Mismatch {
                                arg: m.to_string(),
                                expected: dom.to_string(),
                                found: found.to_string(),
                            });
                        }
                        k = Subst::single(var, m.clone()).apply_kind(&cod);
                    }
                    Kind::Type => {
                        return Err(LfError::NotProduct {
                            head: head.clone(),
                            arg: m.to_string(),
                        })
                    }
                }
            }
            Ok(k)
        }
        Family::Pi { var, dom, cod } => {
            check_type(sig, ctx, dom)?;
            let mut ctx = ctx.clone();
            ctx.push(var.clone(), dom.as_ref().clone());
            check_type(sig, &ctx, cod)?;
            Ok(Kind::Type)
        }
    }
}

/// Synthesizes the type of a term, instantiating products argument by argument.
pub fn check_term(sig: &Signature, ctx: &Context, m: &Term) -> Result<Family, LfError> {
    let mut ty = match &m.head {
        Head::Var(x) => ctx
            .lookup(x)
            .cloned()
            .ok_or_else(|| LfError::Unbound("variable", x.clone()))?,
        Head::Const(c) => match sig.get(c) {
            Some(Classifier::Type(a)) => a.clone(),
            Some(Classifier::Kind(_)) => return Err(LfError::NotATerm(c.clone())),
            None => return Err(LfError::Unbound("constant", c.clone())),
        },
    };
    for arg in &m.args {
        match ty {
            Family::Pi { var, dom, cod } => {
                let found = check_term(sig, ctx, arg)?;
                if !alpha_eq(&found, &dom) {
                    return Err(LfError::Mismatch {
                        arg: arg.to_string(),
                        expected: dom.to_string(),
                        found: found.to_string(),
                    });
                }
                ty = Subst::single(var, arg.clone()).apply_family(&cod);
            }
            Family::App { .. } => {
                return Err(LfError::NotProduct {
                    head: m.head.name().to_string(),
                    arg: arg.to_string(),
                })
            }
        }
    }
    Ok(ty)
}

/// Alpha-equivalence: binders are compared by position, free names by name.
pub fn alpha_eq(a: &Family, b: &Family) -> bool {
    fam_eq(a, b, &mut Vec::new(), &mut Vec::new())
}

pub fn alpha_eq_kind(a: &Kind, b: &Kind) -> bool {
    fn go(a: &Kind, b: &Kind, ea: &mut Vec<String>, eb: &mut Vec<String>) -> bool {
        match (a, b) {
            (Kind::Type, Kind::Type) => true,
            (
                Kind::Pi {
                    var: x,
                    dom: da,
                    cod: ca,
                },
                Kind::Pi {
                    var: y,
                    dom: db,
                    cod: cb,
                },
            ) => {
                if !fam_eq(da, db, ea, eb) {
                    return false;
                }
                ea.push(x.clone());
                eb.push(y.clone());
                let r = go(ca, cb, ea, eb);
                ea.pop();
                eb.pop();
                r
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new(), &mut Vec::new())
}

pub(crate) fn fam_eq(a: &Family, b: &Family, ea: &mut Vec<String>, eb: &mut Vec<String>) -> bool {
    match (a, b) {
        (Family::App { head: h1, args: a1 }, Family::App { head: h2, args: a2 }) => {
            h1 == h2
                && a1.len() == a2.len()
                && a1.iter().zip(a2).all(|(x, y)| term_eq(x, y, ea, eb))
        }
        (
            Family::Pi {
                var: x,
                dom: d1,
                cod: c1,
            },
            Family::Pi {
                var: y,
                dom: d2,
                cod: c2,
            },
        ) => {
            if !fam_eq(d1, d2, ea, eb) {
                return false;
            }
            ea.push(x.clone());
            eb.push(y.clone());
            let r = fam_eq(c1, c2, ea, eb);
            ea.pop();
            eb.pop();
            r
        }
        _ => false,
    }
}

pub(crate) fn term_eq(a: &Term, b: &Term, ea: &[String], eb: &[String]) -> bool {
    let heads = match (&a.head, &b.head) {
        (Head::Var(x), Head::Var(y)) => {
            let ix = ea.iter().rposition(|z| z == x);
            let iy = eb.iter().rposition(|z| z == y);
            match (ix, iy) {
                (Some(i), Some(j)) => ea.len() - i == eb.len() - j,
                (None, None) => x == y,
                _ => false,
            }
        }
        (Head::Const(x), Head::Const(y)) => x == y,
        _ => false,
    };
    heads
        && a.args.len() == b.args.len()
        && a.args.iter().zip(&b.args).all(|(x, y)| term_eq(x, y, ea, eb))
}

/// Wraps a term in parentheses when it has arguments.
pub struct DisplayArg<'a>(pub &'a Term);

impl fmt::Display for DisplayArg<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.args.is_empty() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "({})", self.0)
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head.name())?;
        for a in &self.args {
            write!(f, " {}", DisplayArg(a))?;
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::App { head, args } => {
                write!(f, "{head}")?;
                for a in args {
                    write!(f, " {}", DisplayArg(a))?;
                }
                Ok(())
            }
            Family::Pi { var, dom, cod } if var == ANON => {
                if matches!(**dom, Family::Pi { .. }) {
                    write!(f, "({dom}) -> {cod}")
                } else {
                    write!(f, "{dom} -> {cod}")
                }
            }
            Family::Pi { var, dom, cod } => write!(f, "{{{var}:{dom}}} {cod}"),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Type => write!(f, "type"),
            Kind::Pi { var, dom, cod } if var == ANON => {
                if matches!(dom, Family::Pi { .. }) {
                    write!(f, "({dom}) -> {cod}")
                } else {
                    write!(f, "{dom} -> {cod}")
                }
            }
            Kind::Pi { var, dom, cod } => write!(f, "{{{var}:{dom}}} {cod}"),
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classifier::Kind(k) => write!(f, "{k}"),
            Classifier::Type(a) => write!(f, "{a}"),
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, c) in &self.decls {
            writeln!(f, "{name} : {c}.")?;
        }
        Ok(())
    }
}

// ---- textual reader ----

/// Resolution of identifiers while reading: bound names are variables,
/// otherwise the callback decides between variable and constant.
pub(crate) struct Scope<'a> {
    pub bound: Vec<String>,
    pub is_const: &'a dyn Fn(&str) -> bool,
}

impl Scope<'_> {
    fn resolve(&self, name: &str) -> Head {
        if self.bound.iter().any(|b| b == name) || !(self.is_const)(name) {
            Head::Var(name.to_string())
        } else {
            Head::Const(name.to_string())
        }
    }
}

enum Cls {
    Type,
    Pi(String, Box<Cls>, Box<Cls>),
    App(String, Vec<Term>),
}

fn starts_term_atom(cur: &Cursor) -> bool {
    matches!(cur.peek(), Some(Tok::Ident(s)) if s != "type") || cur.is_punct("(")
}

pub(crate) fn parse_term_atom(cur: &mut Cursor, sc: &Scope) -> Result<Term, SyntaxError> {
    if cur.eat_punct("(") {
        let m = parse_term(cur, sc)?;
        cur.expect_punct(")")?;
        Ok(m)
    } else {
        let name = cur.expect_ident()?;
        Ok(Term {
            head: sc.resolve(&name),
            args: Vec::new(),
        })
    }
}

pub(crate) fn parse_term(cur: &mut Cursor, sc: &Scope) -> Result<Term, SyntaxError> {
    let mut m = parse_term_atom(cur, sc)?;
    while starts_term_atom(cur) {
        m.args.push(parse_term_atom(cur, sc)?);
    }
    Ok(m)
}

fn parse_cls(cur: &mut Cursor, sc: &mut Scope) -> Result<Cls, SyntaxError> {
    let lhs = if cur.is_punct("{") {
        cur.bump();
        let x = cur.expect_ident()?;
        cur.expect_punct(":")?;
        let dom = parse_cls(cur, sc)?;
        cur.expect_punct("}")?;
        sc.bound.push(x.clone());
        let cod = parse_cls(cur, sc);
        sc.bound.pop();
        return Ok(Cls::Pi(x, Box::new(dom), Box::new(cod?)));
    } else if cur.is_ident("type") {
        cur.bump();
        Cls::Type
    } else if cur.eat_punct("(") {
        let c = parse_cls(cur, sc)?;
        cur.expect_punct(")")?;
        c
    } else {
        let head = cur.expect_ident()?;
        let mut args = Vec::new();
        while starts_term_atom(cur) {
            args.push(parse_term_atom(cur, sc)?);
        }
        Cls::App(head, args)
    };
    if cur.eat_punct("->") {
        let cod = parse_cls(cur, sc)?;
        Ok(Cls::Pi(ANON.to_string(), Box::new(lhs), Box::new(cod)))
    } else {
        Ok(lhs)
    }
}

fn cls_family(c: Cls) -> Option<Family> {
    match c {
        Cls::Type => None,
        Cls::App(head, args) => Some(Family::App { head, args }),
        Cls::Pi(var, dom, cod) => Some(Family::Pi {
            var,
            dom: Box::new(cls_family(*dom)?),
            cod: Box::new(cls_family(*cod)?),
        }),
    }
}

fn cls_kind(c: Cls) -> Option<Kind> {
    match c {
        Cls::Type => Some(Kind::Type),
        Cls::App(..) => None,
        Cls::Pi(var, dom, cod) => Some(Kind::Pi {
            var,
            dom: cls_family(*dom)?,
            cod: Box::new(cls_kind(*cod)?),
        }),
    }
}

fn ends_in_type(c: &Cls) -> bool {
    match c {
        Cls::Type => true,
        Cls::App(..) => false,
        Cls::Pi(_, _, cod) => ends_in_type(cod),
    }
}

pub(crate) fn parse_family(cur: &mut Cursor, sc: &mut Scope) -> Result<Family, SyntaxError> {
    let pos = cur.pos();
    let c = parse_cls(cur, sc)?;
    cls_family(c).ok_or(SyntaxError {
        pos,
        msg: "expected a type family, found a kind".into(),
    })
}

fn parse_decl(cur: &mut Cursor, sig: &Signature) -> Result<(String, Classifier), SyntaxError> {
    let name = cur.expect_ident()?;
    cur.expect_punct(":")?;
    let pos = cur.pos();
    let is_const = |n: &str| sig.contains(n);
    let mut sc = Scope {
        bound: Vec::new(),
        is_const: &is_const,
    };
    let c = parse_cls(cur, &mut sc)?;
    cur.expect_punct(".")?;
    let bad = || SyntaxError {
        pos,
        msg: format!("malformed classifier for `{name}`"),
    };
    let cls = if ends_in_type(&c) {
        Classifier::Kind(cls_kind(c).ok_or_else(bad)?)
    } else {
        Classifier::Type(cls_family(c).ok_or_else(bad)?)
    };
    Ok((name, cls))
}

/// Reads declarations until the cursor hits `stop` (or end of input).
pub(crate) fn parse_decls(cur: &mut Cursor, stop: Option<&str>) -> Result<Signature, SyntaxError> {
    let mut sig = Signature::new();
    while !cur.at_end() && !stop.is_some_and(|p| cur.is_punct(p)) {
        let (name, cls) = parse_decl(cur, &sig)?;
        sig.push(name, cls);
    }
    Ok(sig)
}

/// Parses the textual signature format (`name : classifier.` per line).
pub fn parse_signature(src: &str) -> Result<Signature, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    parse_decls(&mut cur, None)
}

/// Parses a single term, resolving names against `sig`.
pub fn parse_term_in(sig: &Signature, src: &str) -> Result<Term, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let is_const = |n: &str| sig.contains(n);
    let sc = Scope {
        bound: Vec::new(),
        is_const: &is_const,
    };
    let m = parse_term(&mut cur, &sc)?;
    if !cur.at_end() {
        return cur.err("trailing input after term");
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat_sig() -> Signature {
        parse_signature(
            "nat : type.
             zero : nat.
             succ : nat -> nat.
             c : nat -> nat -> nat.
             plus : nat -> nat -> nat -> type.
             plus-1 : {X:nat} plus zero X X.
             plus-2 : {X:nat} {Y:nat} {Z:nat} {D:plus X Y Z} plus (succ X) Y (succ Z).",
        )
        .unwrap()
    }

    fn t(s: &str) -> Term {
        parse_term_in(&nat_sig(), s).unwrap()
    }

    fn ctx(vars: &[&str]) -> Context {
        Context(
            vars.iter()
                .map(|v| (v.to_string(), Family::atom("nat")))
                .collect(),
        )
    }

    #[test]
    fn signature_checks() {
        assert_eq!(check_signature(&nat_sig()), Ok(()));
        assert_eq!(check_signature(&Signature::new()), Ok(()));
        let bad = parse_signature("c : nat.").unwrap();
        let err = check_signature(&bad).unwrap_err();
        assert!(matches!(err, LfError::InDecl { ref name, .. } if name == "c"));
        assert!(err.to_string().contains("unbound type family `nat`"));
        let dup = parse_signature("nat : type. nat : type.").unwrap();
        assert_eq!(check_signature(&dup), Err(LfError::Duplicate("nat".into())));
    }

    #[test]
    fn check_term_examples() {
        let sig = nat_sig();
        let ty = check_term(&sig, &Context::new(), &t("plus-1 zero")).unwrap();
        assert_eq!(ty.to_string(), "plus zero zero zero");
        assert_eq!(check_term(&sig, &ctx(&["X"]), &t("X")).unwrap(), Family::atom("nat"));
        let err = check_term(&sig, &Context::new(), &t("succ zero zero")).unwrap_err();
        assert!(matches!(err, LfError::NotProduct { .. }));
    }

    #[test]
    fn substitution_is_simultaneous() {
        let s = Subst::from_pairs([("x".into(), Term::var("y")), ("y".into(), Term::var("x"))]);
        assert_eq!(s.apply(&t("c x y")), t("c y x"));
        let s = Subst::single("x", t("zero"));
        assert_eq!(s.apply(&t("succ x")), t("succ zero"));
    }

    #[test]
    fn substitution_avoids_capture() {
        let a = Family::pi("y", Family::atom("nat"), Family::app("plus", vec![t("x"), t("y"), t("y")]));
        let s = Subst::single("x", Term::var("y"));
        let b = s.apply_family(&a);
        match &b {
            Family::Pi { var, cod, .. } => {
                assert_ne!(var, "y");
                assert_eq!(cod.to_string(), format!("plus y {var} {var}"));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unify_examples() {
        let d = ctx(&["x", "y", "x'"]);
        assert_eq!(static_unify(&d, &t("x"), &t("x")), UnifyResult::Unifier(Subst::new()));
        assert!(static_unify(&d, &t("x"), &t("succ x")).is_bottom());
        assert!(static_unify(&d, &t("zero"), &t("succ y")).is_bottom());
        let s = Subst::from_pairs([("x".into(), t("succ y")), ("x'".into(), t("zero"))]);
        assert_eq!(static_unify(&d, &t("c x zero"), &t("c (succ y) x'")), UnifyResult::Unifier(s));
        assert_eq!(
            static_unify(&d, &t("x"), &t("y")),
            UnifyResult::Unifier(Subst::single("x", t("y")))
        );
    }

    #[test]
    fn occurs_examples() {
        assert_eq!(occurs_static("x", &t("x")), Occurs::InTerm);
        assert_eq!(occurs_static("x", &t("succ y")), Occurs::NotInTerm);
        assert_eq!(occurs_static("x", &t("c (succ x) y")), Occurs::InTerm);
    }

    #[test]
    fn text_round_trip() {
        let sig = nat_sig();
        let again = parse_signature(&sig.to_string()).unwrap();
        assert_eq!(sig, again);
    }

    #[test]
    fn alpha_equivalence_is_positional() {
        let a = Family::pi("D", Family::atom("nat"), Family::app("plus", vec![t("D"), t("zero"), t("D")]));
        let b = Family::pi("E", Family::atom("nat"), Family::app("plus", vec![t("E"), t("zero"), t("E")]));
        assert!(alpha_eq(&a, &b));
        let c = Family::pi("E", Family::atom("nat"), Family::app("plus", vec![t("D"), t("zero"), t("E")]));
        assert!(!alpha_eq(&a, &c));
    }
}
