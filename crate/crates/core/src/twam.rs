//! TWAM/SWAM intermediate representation, its text format and type erasure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::lf::{
    fam_eq, parse_decls, parse_family, parse_term, parse_term_atom, term_eq, Classifier, DisplayArg,
    Family, Kind, Scope, Signature, Subst, Term,
};
use crate::syntax::{Cursor, Pos, SyntaxError};

pub type Reg = String;
pub type Label = String;

pub const RET: &str = "ret";
pub const ENV: &str = "env";

pub fn is_register(s: &str) -> bool {
    s == RET
        || s == ENV
        || (s.len() > 1 && s.starts_with('r') && s[1..].bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Reg(Reg),
    Label(Label),
    /// Application of an operand to an LF term.
    App(Box<Operand>, Term),
    /// `\x:A. op`, a proof-transforming wrapper.
    Lam(String, Family, Box<Operand>),
}

impl Operand {
    pub fn reg(r: impl Into<String>) -> Operand {
        Operand::Reg(r.into())
    }

    pub fn label(l: impl Into<String>) -> Operand {
        Operand::Label(l.into())
    }

    pub fn apply(head: Operand, args: impl IntoIterator<Item = Term>) -> Operand {
        args.into_iter()
            .fold(head, |op, m| Operand::App(Box::new(op), m))
    }

    /// Splits `h M1 .. Mn` into its head and arguments; `None` under a lambda.
    pub fn spine(&self) -> Option<(&Operand, Vec<&Term>)> {
        match self {
            Operand::Reg(_) | Operand::Label(_) => Some((self, Vec::new())),
            Operand::App(f, m) => {
                let (h, mut args) = f.spine()?;
                args.push(m);
                Some((h, args))
            }
            Operand::Lam(..) => None,
        }
    }

    /// Label and arguments when the operand has the shape `ℓ M⃗`.
    pub fn as_label_app(&self) -> Option<(&str, Vec<&Term>)> {
        match self.spine()? {
            (Operand::Label(l), args) => Some((l, args)),
            _ => None,
        }
    }

    /// The register or label an operand evaluates to once proofs are erased.
    pub fn root(&self) -> &Operand {
        match self {
            Operand::App(f, _) => f.root(),
            Operand::Lam(_, _, b) => b.root(),
            _ => self,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MType {
    /// `S(M : a)`
    Sing(Term, String),
    /// Erased singleton.
    Atomic(String),
    /// `{x1:A1}..{xn:An} ~Γ`
    Cont(Vec<(String, Family)>, RegFile),
    /// `*(τ1, .., τn)`
    Tuple(Vec<MType>),
}

impl MType {
    pub fn neg(rf: RegFile) -> MType {
        MType::Cont(Vec::new(), rf)
    }

    /// Atomic type underlying a term-valued type.
    pub fn atom(&self) -> Option<&str> {
        match self {
            MType::Sing(_, a) | MType::Atomic(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegFile(pub BTreeMap<Reg, MType>);

impl RegFile {
    pub fn new() -> RegFile {
        RegFile::default()
    }

    pub fn get(&self, r: &str) -> Option<&MType> {
        self.0.get(r)
    }

    pub fn insert(&mut self, r: impl Into<String>, t: MType) {
        self.0.insert(r.into(), t);
    }

    pub fn with(mut self, r: impl Into<String>, t: MType) -> RegFile {
        self.insert(r, t);
        self
    }
}

impl<R: Into<String>> FromIterator<(R, MType)> for RegFile {
    fn from_iter<I: IntoIterator<Item = (R, MType)>>(it: I) -> Self {
        RegFile(it.into_iter().map(|(r, t)| (r.into(), t)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instr {
    PutVar { r: Reg, x: Option<String>, ty: String },
    GetVal { r1: Reg, r2: Reg },
    GetStr { c: String, n: usize, r: Reg },
    PutStr { c: String, n: usize, r: Reg },
    UnifyVar { r: Reg, x: Option<String>, ty: String },
    UnifyVal { r: Reg, bind: Option<(String, String)> },
    Mov { rd: Reg, op: Operand },
    Jmp(Operand),
    Close { rd: Reg, re: Reg, op: Operand },
    PushBt { re: Reg, op: Operand },
    PutTuple { rd: Reg, n: usize },
    SetVal(Reg),
    Proj { rd: Reg, rs: Reg, i: usize },
    Succeed(Option<(Term, Family)>),
}

impl Instr {
    pub fn opcode(&self) -> &'static str {
        match self {
            Instr::PutVar { .. } => "put_var",
            Instr::GetVal { .. } => "get_val",
            Instr::GetStr { .. } => "get_str",
            Instr::PutStr { .. } => "put_str",
            Instr::UnifyVar { .. } => "unify_var",
            Instr::UnifyVal { .. } => "unify_val",
            Instr::Mov { .. } => "mov",
            Instr::Jmp(_) => "jmp",
            Instr::Close { .. } => "close",
            Instr::PushBt { .. } => "push_bt",
            Instr::PutTuple { .. } => "put_tuple",
            Instr::SetVal(_) => "set_val",
            Instr::Proj { .. } => "proj",
            Instr::Succeed(_) => "succeed",
        }
    }

    /// Number of spinal instructions that must follow.
    pub fn spine_len(&self) -> usize {
        match self {
            Instr::GetStr { n, .. } | Instr::PutStr { n, .. } | Instr::PutTuple { n, .. } => *n,
            _ => 0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Instr::Jmp(_) | Instr::Succeed(_))
    }

    pub fn operand(&self) -> Option<&Operand> {
        match self {
            Instr::Mov { op, .. } | Instr::Jmp(op) | Instr::Close { op, .. } | Instr::PushBt { op, .. } => {
                Some(op)
            }
            _ => None,
        }
    }

    fn map_operand(&self, f: impl FnOnce(&Operand) -> Operand) -> Instr {
        match self {
            Instr::Mov { rd, op } => Instr::Mov {
                rd: rd.clone(),
                op: f(op),
            },
            Instr::Jmp(op) => Instr::Jmp(f(op)),
            Instr::Close { rd, re, op } => Instr::Close {
                rd: rd.clone(),
                re: re.clone(),
                op: f(op),
            },
            Instr::PushBt { re, op } => Instr::PushBt {
                re: re.clone(),
                op: f(op),
            },
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeValue {
    pub params: Vec<(String, Family)>,
    pub pre: RegFile,
    pub body: Vec<Instr>,
}

impl CodeValue {
    pub fn ty(&self) -> MType {
        MType::Cont(self.params.clone(), self.pre.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Twam,
    Swam,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub mode: Mode,
    pub types: Vec<String>,
    pub sigma: Signature,
    pub code: Vec<(Label, CodeValue)>,
    pub query: Label,
    /// Query variable names, in the order the answer tuple stores them.
    pub answers: Vec<String>,
}

impl Program {
    pub fn block(&self, l: &str) -> Option<&CodeValue> {
        self.code.iter().find(|(m, _)| m == l).map(|(_, c)| c)
    }

    pub fn block_mut(&mut self, l: &str) -> Option<&mut CodeValue> {
        self.code.iter_mut().find(|(m, _)| m == l).map(|(_, c)| c)
    }

    /// The code-section type, read off the code value annotations.
    pub fn xi(&self) -> Vec<(Label, MType)> {
        self.code.iter().map(|(l, c)| (l.clone(), c.ty())).collect()
    }

    pub fn instr_count(&self) -> usize {
        self.code.iter().map(|(_, c)| c.body.len()).sum()
    }
}

// ---- substitution and free variables ----

/// Objects that mention LF variables.
pub trait LfObject: Sized {
    fn subst(&self, s: &Subst) -> Self;
    fn free_vars(&self, out: &mut BTreeSet<String>);

    fn fv(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.free_vars(&mut out);
        out
    }
}

impl LfObject for Term {
    fn subst(&self, s: &Subst) -> Self {
        s.apply(self)
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        Term::free_vars(self, out)
    }
}

impl LfObject for Family {
    fn subst(&self, s: &Subst) -> Self {
        s.apply_family(self)
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        Family::free_vars(self, out)
    }
}

/// Pushes `s` under binder `x` scoping over `body`, renaming `x` if needed.
fn under<T: LfObject>(s: &Subst, x: &str, body: &T) -> (String, T) {
    let (x, inner) = s.under_binder(x, |avoid| body.free_vars(avoid));
    match inner {
        None => (x, body_clone(body)),
        Some((s, ren)) => (x, body.subst(&ren).subst(&s)),
    }
}

fn body_clone<T: LfObject>(b: &T) -> T {
    b.subst(&Subst::new())
}

/// Telescope of binders over a body, used for continuation types.
struct Tele<'a>(&'a [(String, Family)], &'a RegFile);

fn tele_subst(s: &Subst, params: &[(String, Family)], rf: &RegFile) -> (Vec<(String, Family)>, RegFile) {
    if s.is_empty() {
        return (params.to_vec(), rf.clone());
    }
    match params.split_first() {
        None => (Vec::new(), rf.subst(s)),
        Some(((x, a), rest)) => {
            let a = a.subst(s);
            let body = MType::Cont(rest.to_vec(), rf.clone());
            let (x, body) = under(s, x, &body);
            let MType::Cont(rest, rf) = body else {
                unreachable!("substitution preserves shape")
            };
            let mut out = vec![(x, a)];
            out.extend(rest);
            (out, rf)
        }
    }
}

impl Tele<'_> {
    fn free_vars(&self, out: &mut BTreeSet<String>) {
        let mut inner = BTreeSet::new();
        self.1.free_vars(&mut inner);
        for (x, a) in self.0.iter().rev() {
            inner.remove(x);
            a.free_vars(&mut inner);
        }
        out.extend(inner);
    }
}

impl LfObject for MType {
    fn subst(&self, s: &Subst) -> Self {
        match self {
            MType::Sing(m, a) => MType::Sing(s.apply(m), a.clone()),
            MType::Atomic(a) => MType::Atomic(a.clone()),
            MType::Cont(params, rf) => {
                let (params, rf) = tele_subst(s, params, rf);
                MType::Cont(params, rf)
            }
            MType::Tuple(ts) => MType::Tuple(ts.iter().map(|t| t.subst(s)).collect()),
        }
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            MType::Sing(m, _) => m.free_vars(out),
            MType::Atomic(_) => {}
            MType::Cont(params, rf) => Tele(params, rf).free_vars(out),
            MType::Tuple(ts) => ts.iter().for_each(|t| t.free_vars(out)),
        }
    }
}

impl LfObject for RegFile {
    fn subst(&self, s: &Subst) -> Self {
        RegFile(self.0.iter().map(|(r, t)| (r.clone(), t.subst(s))).collect())
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        self.0.values().for_each(|t| t.free_vars(out));
    }
}

impl LfObject for Operand {
    fn subst(&self, s: &Subst) -> Self {
        if s.is_empty() {
            return self.clone();
        }
        match self {
            Operand::Reg(_) | Operand::Label(_) => self.clone(),
            Operand::App(f, m) => Operand::App(Box::new(f.subst(s)), s.apply(m)),
            Operand::Lam(x, a, body) => {
                let a = a.subst(s);
                let (x, body) = under(s, x, body.as_ref());
                Operand::Lam(x, a, Box::new(body))
            }
        }
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Operand::Reg(_) | Operand::Label(_) => {}
            Operand::App(f, m) => {
                f.free_vars(out);
                m.free_vars(out);
            }
            Operand::Lam(x, a, body) => {
                a.free_vars(out);
                let mut inner = body.fv();
                inner.remove(x);
                out.extend(inner);
            }
        }
    }
}

impl LfObject for Instr {
    /// Binders introduced by `put_var`/`unify_var` scope over the rest of the
    /// block, not over the instruction itself, so they are left alone here.
    fn subst(&self, s: &Subst) -> Self {
        match self {
            Instr::Succeed(Some((m, a))) => Instr::Succeed(Some((s.apply(m), a.subst(s)))),
            other => other.map_operand(|op| op.subst(s)),
        }
    }

    fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Instr::Succeed(Some((m, a))) => {
                m.free_vars(out);
                a.free_vars(out);
            }
            other => {
                if let Some(op) = other.operand() {
                    op.free_vars(out)
                }
            }
        }
    }
}

// ---- equality up to renaming ----

pub fn mtype_alpha_eq(a: &MType, b: &MType) -> bool {
    mty_eq(a, b, &mut Vec::new(), &mut Vec::new())
}

fn mty_eq(a: &MType, b: &MType, ea: &mut Vec<String>, eb: &mut Vec<String>) -> bool {
    match (a, b) {
        (MType::Sing(m, x), MType::Sing(n, y)) => x == y && term_eq(m, n, ea, eb),
        (MType::Atomic(x), MType::Atomic(y)) => x == y,
        (MType::Tuple(xs), MType::Tuple(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| mty_eq(x, y, ea, eb))
        }
        (MType::Cont(pa, ra), MType::Cont(pb, rb)) => {
            if pa.len() != pb.len() {
                return false;
            }
            let depth = ea.len();
            let mut ok = true;
            for ((x, da), (y, db)) in pa.iter().zip(pb) {
                if !fam_eq(da, db, ea, eb) {
                    ok = false;
                    break;
                }
                ea.push(x.clone());
                eb.push(y.clone());
            }
            ok = ok && rf_eq(ra, rb, ea, eb);
            ea.truncate(depth);
            eb.truncate(depth);
            ok
        }
        _ => false,
    }
}

fn rf_eq(a: &RegFile, b: &RegFile, ea: &mut Vec<String>, eb: &mut Vec<String>) -> bool {
    a.0.len() == b.0.len()
        && a.0.iter().all(|(r, t)| b.0.get(r).is_some_and(|u| mty_eq(t, u, ea, eb)))
}

pub fn regfile_alpha_eq(a: &RegFile, b: &RegFile) -> bool {
    rf_eq(a, b, &mut Vec::new(), &mut Vec::new())
}

/// `sub ≤ sup`: every register of `sub` is present in `sup` at an equal type.
pub fn regfile_sub(sub: &RegFile, sup: &RegFile) -> bool {
    sub.0
        .iter()
        .all(|(r, t)| sup.0.get(r).is_some_and(|u| mtype_alpha_eq(t, u)))
}

// ---- erasure ----

pub fn erase_mtype(t: &MType) -> MType {
    match t {
        MType::Sing(_, a) | MType::Atomic(a) => MType::Atomic(a.clone()),
        MType::Cont(_, rf) => MType::Cont(Vec::new(), erase_regfile(rf)),
        MType::Tuple(ts) => MType::Tuple(ts.iter().map(erase_mtype).collect()),
    }
}

pub fn erase_regfile(rf: &RegFile) -> RegFile {
    RegFile(rf.0.iter().map(|(r, t)| (r.clone(), erase_mtype(t))).collect())
}

pub fn erase_operand(op: &Operand) -> Operand {
    op.root().clone()
}

pub fn erase_instr(i: &Instr) -> Instr {
    match i {
        Instr::PutVar { r, ty, .. } => Instr::PutVar {
            r: r.clone(),
            x: None,
            ty: ty.clone(),
        },
        Instr::UnifyVar { r, ty, .. } => Instr::UnifyVar {
            r: r.clone(),
            x: None,
            ty: ty.clone(),
        },
        Instr::UnifyVal { r, .. } => Instr::UnifyVal {
            r: r.clone(),
            bind: None,
        },
        Instr::Succeed(_) => Instr::Succeed(None),
        other => other.map_operand(erase_operand),
    }
}

/// Drops every LF annotation. Σ keeps only the types and constructors.
pub fn erase(p: &Program) -> Program {
    let mut sigma = Signature::new();
    for (name, cls) in p.sigma.decls() {
        let keep = match cls {
            Classifier::Kind(Kind::Type) => p.types.contains(name),
            Classifier::Kind(_) => false,
            Classifier::Type(a) => {
                matches!(a.target(), Family::App { head, .. } if p.types.contains(head))
            }
        };
        if keep {
            sigma.push(name.clone(), cls.clone());
        }
    }
    Program {
        mode: Mode::Swam,
        types: p.types.clone(),
        sigma,
        code: p
            .code
            .iter()
            .map(|(l, c)| {
                (
                    l.clone(),
                    CodeValue {
                        params: Vec::new(),
                        pre: erase_regfile(&c.pre),
                        body: c.body.iter().map(erase_instr).collect(),
                    },
                )
            })
            .collect(),
        query: p.query.clone(),
        answers: p.answers.clone(),
    }
}

// ---- printing ----

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Label(l) => write!(f, "{l}"),
            Operand::Lam(x, a, body) => write!(f, "(\\{x}:{a}. {body})"),
            Operand::App(..) => {
                let (h, args) = self.spine().expect("no lambda at the head of an application");
                write!(f, "({h}")?;
                for m in args {
                    write!(f, " {}", DisplayArg(m))?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for MType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MType::Sing(m, a) => write!(f, "S({m} : {a})"),
            MType::Atomic(a) => write!(f, "{a}"),
            MType::Cont(params, rf) => {
                for (x, a) in params {
                    write!(f, "{{{x}:{a}}} ")?;
                }
                write!(f, "~{rf}")
            }
            MType::Tuple(ts) => {
                write!(f, "*(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for RegFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (r, t)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{r}: {t}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.opcode();
        match self {
            Instr::PutVar { r, x, ty } | Instr::UnifyVar { r, x, ty } => match x {
                Some(x) => write!(f, "{op} {r}, {x}:{ty}"),
                None => write!(f, "{op} {r}, {ty}"),
            },
            Instr::GetVal { r1, r2 } => write!(f, "{op} {r1}, {r2}"),
            Instr::GetStr { c, n, r } | Instr::PutStr { c, n, r } => write!(f, "{op} {c}/{n}, {r}"),
            Instr::UnifyVal { r, bind } => match bind {
                Some((x, a)) => write!(f, "{op} {r}, {x}:{a}"),
                None => write!(f, "{op} {r}"),
            },
            Instr::Mov { rd, op: o } => write!(f, "{op} {rd}, {o}"),
            Instr::Jmp(o) => write!(f, "{op} {o}"),
            Instr::Close { rd, re, op: o } => write!(f, "{op} {rd}, {re}, {o}"),
            Instr::PushBt { re, op: o } => write!(f, "{op} {re}, {o}"),
            Instr::PutTuple { rd, n } => write!(f, "{op} {rd}, {n}"),
            Instr::SetVal(r) => write!(f, "{op} {r}"),
            Instr::Proj { rd, rs, i } => write!(f, "{op} {rd}, {rs}, {i}"),
            Instr::Succeed(None) => write!(f, "{op}"),
            Instr::Succeed(Some((m, a))) => write!(f, "{op} [{m} : {a}]"),
        }
    }
}

impl fmt::Display for CodeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "code[")?;
        for (x, a) in &self.params {
            write!(f, "{{{x}:{a}}} ")?;
        }
        writeln!(f, ". {}] (", self.pre)?;
        let mut in_spine = 0usize;
        for i in &self.body {
            let indent = if in_spine > 0 { "    " } else { "  " };
            in_spine = in_spine.saturating_sub(1);
            writeln!(f, "{indent}{i};")?;
            in_spine += i.spine_len();
        }
        write!(f, ")")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}",
            match self.mode {
                Mode::Twam => "twam",
                Mode::Swam => "swam",
            }
        )?;
        writeln!(f, "types {}.", self.types.join(", "))?;
        writeln!(f, "sigma {{")?;
        for (name, c) in self.sigma.decls() {
            writeln!(f, "  {name} : {c}.")?;
        }
        writeln!(f, "}}")?;
        writeln!(f, "xi {{")?;
        for (l, t) in self.xi() {
            writeln!(f, "  {l} : {t}.")?;
        }
        writeln!(f, "}}")?;
        writeln!(f, "query {}.", self.query)?;
        writeln!(f, "answers {}.", self.answers.join(", "))?;
        for (l, c) in &self.code {
            writeln!(f)?;
            writeln!(f, "{l} |-> {c}")?;
        }
        Ok(())
    }
}

// ---- parsing ----

struct Reader<'s> {
    cur: Cursor,
    sigma: &'s Signature,
}

impl Reader<'_> {
    fn term(&mut self) -> Result<Term, SyntaxError> {
        let sigma = self.sigma;
        let is_const = |n: &str| sigma.contains(n);
        let sc = Scope {
            bound: Vec::new(),
            is_const: &is_const,
        };
        parse_term(&mut self.cur, &sc)
    }

    fn term_atom(&mut self) -> Result<Term, SyntaxError> {
        let sigma = self.sigma;
        let is_const = |n: &str| sigma.contains(n);
        let sc = Scope {
            bound: Vec::new(),
            is_const: &is_const,
        };
        parse_term_atom(&mut self.cur, &sc)
    }

    fn family(&mut self) -> Result<Family, SyntaxError> {
        let sigma = self.sigma;
        let is_const = |n: &str| sigma.contains(n);
        let mut sc = Scope {
            bound: Vec::new(),
            is_const: &is_const,
        };
        parse_family(&mut self.cur, &mut sc)
    }

    fn reg(&mut self) -> Result<Reg, SyntaxError> {
        let pos = self.cur.pos();
        let r = self.cur.expect_ident()?;
        if !is_register(&r) {
            return Err(SyntaxError {
                pos,
                msg: format!("`{r}` is not a register (expected r<k>, ret or env)"),
            });
        }
        Ok(r)
    }

    fn count(&mut self) -> Result<usize, SyntaxError> {
        Ok(self.cur.expect_int()? as usize)
    }

    fn binder(&mut self) -> Result<(String, Family), SyntaxError> {
        self.cur.expect_punct("{")?;
        let x = self.cur.expect_ident()?;
        self.cur.expect_punct(":")?;
        let a = self.family()?;
        self.cur.expect_punct("}")?;
        Ok((x, a))
    }

    fn mtype(&mut self) -> Result<MType, SyntaxError> {
        if self.cur.is_ident("S") && self.cur.is_punct_at(1, "(") {
            self.cur.bump();
            self.cur.bump();
            let m = self.term()?;
            self.cur.expect_punct(":")?;
            let a = self.cur.expect_ident()?;
            self.cur.expect_punct(")")?;
            return Ok(MType::Sing(m, a));
        }
        if self.cur.eat_punct("*") {
            self.cur.expect_punct("(")?;
            let mut ts = Vec::new();
            if !self.cur.eat_punct(")") {
                loop {
                    ts.push(self.mtype()?);
                    if self.cur.eat_punct(")") {
                        break;
                    }
                    self.cur.expect_punct(",")?;
                }
            }
            return Ok(MType::Tuple(ts));
        }
        if self.cur.is_punct("{") || self.cur.is_punct("~") {
            let mut params = Vec::new();
            while self.cur.is_punct("{") {
                params.push(self.binder()?);
            }
            self.cur.expect_punct("~")?;
            let rf = self.regfile()?;
            return Ok(MType::Cont(params, rf));
        }
        Ok(MType::Atomic(self.cur.expect_ident()?))
    }

    fn regfile(&mut self) -> Result<RegFile, SyntaxError> {
        self.cur.expect_punct("{")?;
        let mut rf = RegFile::new();
        if self.cur.eat_punct("}") {
            return Ok(rf);
        }
        loop {
            let pos = self.cur.pos();
            let r = self.reg()?;
            self.cur.expect_punct(":")?;
            let t = self.mtype()?;
            if rf.0.insert(r.clone(), t).is_some() {
                return Err(SyntaxError {
                    pos,
                    msg: format!("register `{r}` typed twice"),
                });
            }
            if self.cur.eat_punct("}") {
                return Ok(rf);
            }
            self.cur.expect_punct(",")?;
        }
    }

    fn operand(&mut self) -> Result<Operand, SyntaxError> {
        if self.cur.eat_punct("(") {
            if self.cur.eat_punct("\\") {
                let x = self.cur.expect_ident()?;
                self.cur.expect_punct(":")?;
                let a = self.family()?;
                self.cur.expect_punct(".")?;
                let body = self.operand()?;
                self.cur.expect_punct(")")?;
                return Ok(Operand::Lam(x, a, Box::new(body)));
            }
            let mut op = self.operand()?;
            while !self.cur.eat_punct(")") {
                let m = self.term_atom()?;
                op = Operand::App(Box::new(op), m);
            }
            return Ok(op);
        }
        let name = self.cur.expect_ident()?;
        Ok(if is_register(&name) {
            Operand::Reg(name)
        } else {
            Operand::Label(name)
        })
    }

    fn struct_ref(&mut self) -> Result<(String, usize), SyntaxError> {
        let c = self.cur.expect_ident()?;
        self.cur.expect_punct("/")?;
        let n = self.count()?;
        Ok((c, n))
    }

    /// `x:a` or just `a`.
    fn typed_var(&mut self) -> Result<(Option<String>, String), SyntaxError> {
        let first = self.cur.expect_ident()?;
        if self.cur.eat_punct(":") {
            let a = self.cur.expect_ident()?;
            Ok((Some(first), a))
        } else {
            Ok((None, first))
        }
    }

    fn instr(&mut self) -> Result<Instr, SyntaxError> {
        let pos = self.cur.pos();
        let op = self.cur.expect_ident()?;
        let comma = |r: &mut Self| r.cur.expect_punct(",");
        Ok(match op.as_str() {
            "put_var" | "unify_var" => {
                let r = self.reg()?;
                comma(self)?;
                let (x, ty) = self.typed_var()?;
                if op == "put_var" {
                    Instr::PutVar { r, x, ty }
                } else {
                    Instr::UnifyVar { r, x, ty }
                }
            }
            "get_val" => {
                let r1 = self.reg()?;
                comma(self)?;
                let r2 = self.reg()?;
                Instr::GetVal { r1, r2 }
            }
            "get_str" | "put_str" => {
                let (c, n) = self.struct_ref()?;
                comma(self)?;
                let r = self.reg()?;
                if op == "get_str" {
                    Instr::GetStr { c, n, r }
                } else {
                    Instr::PutStr { c, n, r }
                }
            }
            "unify_val" => {
                let r = self.reg()?;
                let bind = if self.cur.eat_punct(",") {
                    let x = self.cur.expect_ident()?;
                    self.cur.expect_punct(":")?;
                    Some((x, self.cur.expect_ident()?))
                } else {
                    None
                };
                Instr::UnifyVal { r, bind }
            }
            "mov" => {
                let rd = self.reg()?;
                comma(self)?;
                Instr::Mov {
                    rd,
                    op: self.operand()?,
                }
            }
            "jmp" => Instr::Jmp(self.operand()?),
            "close" => {
                let rd = self.reg()?;
                comma(self)?;
                let re = self.reg()?;
                comma(self)?;
                Instr::Close {
                    rd,
                    re,
                    op: self.operand()?,
                }
            }
            "push_bt" => {
                let re = self.reg()?;
                comma(self)?;
                Instr::PushBt {
                    re,
                    op: self.operand()?,
                }
            }
            "put_tuple" => {
                let rd = self.reg()?;
                comma(self)?;
                Instr::PutTuple {
                    rd,
                    n: self.count()?,
                }
            }
            "set_val" => Instr::SetVal(self.reg()?),
            "proj" => {
                let rd = self.reg()?;
                comma(self)?;
                let rs = self.reg()?;
                comma(self)?;
                Instr::Proj {
                    rd,
                    rs,
                    i: self.count()?,
                }
            }
            "succeed" => {
                if self.cur.eat_punct("[") {
                    let m = self.term()?;
                    self.cur.expect_punct(":")?;
                    let a = self.family()?;
                    self.cur.expect_punct("]")?;
                    Instr::Succeed(Some((m, a)))
                } else {
                    Instr::Succeed(None)
                }
            }
            _ => {
                return Err(SyntaxError {
                    pos,
                    msg: format!("unknown instruction `{op}`"),
                })
            }
        })
    }

    fn code_value(&mut self) -> Result<CodeValue, SyntaxError> {
        self.cur.expect_keyword("code")?;
        self.cur.expect_punct("[")?;
        let mut params = Vec::new();
        while !self.cur.eat_punct(".") {
            params.push(self.binder()?);
        }
        let pre = self.regfile()?;
        self.cur.expect_punct("]")?;
        self.cur.expect_punct("(")?;
        let mut body = Vec::new();
        while !self.cur.eat_punct(")") {
            body.push(self.instr()?);
            if !self.cur.eat_punct(";") && !self.cur.is_punct(")") {
                return self.cur.err("expected `;` or `)` after instruction");
            }
        }
        Ok(CodeValue { params, pre, body })
    }
}

fn name_list(cur: &mut Cursor) -> Result<Vec<String>, SyntaxError> {
    let mut out = Vec::new();
    if cur.eat_punct(".") {
        return Ok(out);
    }
    loop {
        out.push(cur.expect_ident()?);
        if cur.eat_punct(".") {
            return Ok(out);
        }
        cur.expect_punct(",")?;
    }
}

/// Reads the `.twam` / `.swam` text format.
pub fn parse_ir(src: &str) -> Result<Program, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    if cur.at_end() {
        return cur.err("empty program: no query entry");
    }
    let mode = match cur.expect_ident()?.as_str() {
        "twam" => Mode::Twam,
        "swam" => Mode::Swam,
        other => {
            return Err(SyntaxError {
                pos: Default::default(),
                msg: format!("expected `twam` or `swam` header, found `{other}`"),
            })
        }
    };
    let mut types = Vec::new();
    let mut sigma = Signature::new();
    let mut xi_pos = None;
    let mut xi_src: Vec<(Label, MType, Pos)> = Vec::new();
    let mut query = None;
    let mut answers = Vec::new();
    loop {
        if cur.is_ident("types") && !cur.is_punct_at(1, "|->") && !cur.is_punct_at(1, "↦") {
            cur.bump();
            types = name_list(&mut cur)?;
        } else if cur.is_ident("sigma") && cur.is_punct_at(1, "{") {
            cur.bump();
            cur.bump();
            sigma = parse_decls(&mut cur, Some("}"))?;
            cur.expect_punct("}")?;
        } else if cur.is_ident("xi") && cur.is_punct_at(1, "{") {
            xi_pos = Some(cur.pos());
            cur.bump();
            cur.bump();
            let mut rd = Reader {
                cur,
                sigma: &sigma,
            };
            while !rd.cur.eat_punct("}") {
                let pos = rd.cur.pos();
                let l = rd.cur.expect_ident()?;
                rd.cur.expect_punct(":")?;
                let t = rd.mtype()?;
                rd.cur.expect_punct(".")?;
                xi_src.push((l, t, pos));
            }
            cur = rd.cur;
        } else if cur.is_ident("query") && !cur.is_punct_at(1, "|->") && !cur.is_punct_at(1, "↦") {
            cur.bump();
            query = Some(cur.expect_ident()?);
            cur.expect_punct(".")?;
        } else if cur.is_ident("answers") && !cur.is_punct_at(1, "|->") && !cur.is_punct_at(1, "↦")
        {
            cur.bump();
            answers = name_list(&mut cur)?;
        } else {
            break;
        }
    }
    let mut rd = Reader {
        cur,
        sigma: &sigma,
    };
    let mut code: Vec<(Label, CodeValue)> = Vec::new();
    while !rd.cur.at_end() {
        let pos = rd.cur.pos();
        let l = rd.cur.expect_ident()?;
        if !rd.cur.eat_punct("|->") && !rd.cur.eat_punct("↦") {
            return rd.cur.err("expected `|->` after code label");
        }
        let cv = rd.code_value()?;
        if code.iter().any(|(m, _)| *m == l) {
            return Err(SyntaxError {
                pos,
                msg: format!("label `{l}` defined twice"),
            });
        }
        code.push((l, cv));
    }
    let Some(query) = query else {
        return rd.cur.err("no query entry (missing `query <label>.` header)");
    };
    let p = Program {
        mode,
        types,
        sigma,
        code,
        query,
        answers,
    };
    if let Some(pos) = xi_pos {
        let derived = p.xi();
        if derived.len() != xi_src.len() {
            return Err(SyntaxError {
                pos,
                msg: "xi header does not list every code value".into(),
            });
        }
        for (l, t, pos) in &xi_src {
            match derived.iter().find(|(m, _)| m == l) {
                Some((_, u)) if mtype_alpha_eq(t, u) => {}
                Some(_) => {
                    return Err(SyntaxError {
                        pos: *pos,
                        msg: format!("xi entry for `{l}` disagrees with its code value"),
                    })
                }
                None => {
                    return Err(SyntaxError {
                        pos: *pos,
                        msg: format!("xi names unknown label `{l}`"),
                    })
                }
            }
        }
    }
    Ok(p)
}
