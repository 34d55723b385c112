//! The TWAM typechecker. The same engine rechecks erased (SWAM) code when run
//! in simple mode.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::lf::{
    alpha_eq, check_signature, check_term, check_type, static_unify, Classifier, Context, Family,
    Kind, Subst, Term, UnifyResult,
};
use crate::twam::{
    mtype_alpha_eq, regfile_sub, CodeValue, Instr, LfObject, MType, Mode, Operand, Program, RegFile,
    ENV,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckError {
    pub label: Option<String>,
    pub index: Option<usize>,
    /// Rendering of the offending instruction, if any.
    pub instr: Option<String>,
    pub rule: &'static str,
    pub msg: String,
}

impl fmt::Display for CheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = &self.label {
            write!(f, "{l}")?;
            if let Some(i) = self.index {
                write!(f, "[{i}]")?;
            }
            if let Some(ins) = &self.instr {
                write!(f, " `{ins}`")?;
            }
            write!(f, ": ")?;
        }
        write!(f, "{}: {}", self.rule, self.msg)
    }
}

impl std::error::Error for CheckError {}

/// A region accepted vacuously because static unification failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Warning {
    pub label: String,
    pub index: usize,
    pub msg: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning: {}[{}]: {}", self.label, self.index, self.msg)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub warnings: Vec<Warning>,
}

/// The judgement state Δ;Γ, plus the substitution still owed to the
/// remaining instructions of the block.
#[derive(Clone, Debug, Default)]
pub struct CheckState {
    pub delta: Context,
    pub gamma: RegFile,
    theta: Subst,
    fresh: usize,
}

impl CheckState {
    pub fn new(delta: Context, gamma: RegFile) -> CheckState {
        CheckState {
            delta,
            gamma,
            theta: Subst::new(),
            fresh: 0,
        }
    }

    fn unify_apply(&mut self, s: &Subst) {
        self.delta = self.delta.apply(s);
        self.gamma = self.gamma.subst(s);
        self.theta = self.theta.then(s);
    }

    fn internal_name(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("${base}{}", self.fresh)
    }
}

type RuleResult<T> = Result<T, (&'static str, String)>;

fn fail<T>(rule: &'static str, msg: impl Into<String>) -> RuleResult<T> {
    Err((rule, msg.into()))
}

pub struct Checker<'p> {
    prog: &'p Program,
    mode: Mode,
    xi: HashMap<&'p str, MType>,
    types: BTreeSet<&'p str>,
}

enum Flow {
    Continue,
    Vacuous(String),
}

impl<'p> Checker<'p> {
    /// Validates Σ and the declared types and builds Ξ from the code section.
    pub fn new(prog: &'p Program) -> Result<Checker<'p>, CheckError> {
        let top = |rule, msg: String| CheckError {
            label: None,
            index: None,
            instr: None,
            rule,
            msg,
        };
        check_signature(&prog.sigma).map_err(|e| top("Sig", e.to_string()))?;
        for t in &prog.types {
            match prog.sigma.get(t) {
                Some(Classifier::Kind(Kind::Type)) => {}
                _ => return Err(top("Sig", format!("`{t}` is not declared as a type"))),
            }
        }
        let mut xi = HashMap::new();
        for (l, cv) in &prog.code {
            if xi.insert(l.as_str(), cv.ty()).is_some() {
                return Err(top("Code-Sec", format!("label `{l}` defined twice")));
            }
        }
        Ok(Checker {
            prog,
            mode: prog.mode,
            xi,
            types: prog.types.iter().map(String::as_str).collect(),
        })
    }

    pub fn check_program(&self) -> Result<Report, CheckError> {
        let mut report = Report::default();
        match self.xi.get(self.prog.query.as_str()) {
            None => {
                return Err(CheckError {
                    label: None,
                    index: None,
                    instr: None,
                    rule: "Query",
                    msg: format!("query entry `{}` is not defined", self.prog.query),
                })
            }
            Some(t) if !mtype_alpha_eq(t, &MType::neg(RegFile::new())) => {
                return Err(CheckError {
                    label: Some(self.prog.query.clone()),
                    index: None,
                    instr: None,
                    rule: "Query",
                    msg: format!("query entry must have type ~{{}}, found {t}"),
                })
            }
            Some(_) => {}
        }
        for (l, cv) in &self.prog.code {
            report.warnings.extend(self.check_code_value(l, cv)?);
        }
        Ok(report)
    }

    pub fn check_code_value(&self, label: &str, cv: &CodeValue) -> Result<Vec<Warning>, CheckError> {
        let at = |(rule, msg): (&'static str, String)| CheckError {
            label: Some(label.to_string()),
            index: None,
            instr: None,
            rule,
            msg,
        };
        if self.mode == Mode::Swam && !cv.params.is_empty() {
            return Err(at(("Code", "SWAM code values take no LF parameters".into())));
        }
        let mut delta = Context::new();
        self.wf_telescope(&mut delta, &cv.params, true).map_err(at)?;
        self.wf_regfile(&delta, &cv.pre).map_err(at)?;
        self.check_block(label, CheckState::new(delta, cv.pre.clone()), &cv.body)
    }

    /// Code parameters must be fresh; binders inside types may shadow.
    fn wf_telescope(&self, delta: &mut Context, params: &[(String, Family)], fresh: bool) -> RuleResult<()> {
        for (x, a) in params {
            if fresh {
                self.check_binder(delta, &Subst::new(), x, "Code")?;
            }
            check_type(&self.prog.sigma, delta, a).map_err(|e| ("Code", format!("parameter `{x}`: {e}")))?;
            delta.push(x.clone(), a.clone());
        }
        Ok(())
    }

    fn wf_regfile(&self, delta: &Context, rf: &RegFile) -> RuleResult<()> {
        for (r, t) in &rf.0 {
            self.wf_mtype(delta, t)
                .map_err(|(rule, m)| (rule, format!("register `{r}`: {m}")))?;
        }
        Ok(())
    }

    fn wf_mtype(&self, delta: &Context, t: &MType) -> RuleResult<()> {
        match t {
            MType::Atomic(a) => self.known_type(a, "Code"),
            MType::Sing(m, a) => {
                if self.mode == Mode::Swam {
                    return fail("Code", "singleton type in SWAM code");
                }
                self.known_type(a, "Code")?;
                let found = check_term(&self.prog.sigma, delta, m).map_err(|e| ("Code", e.to_string()))?;
                if found.as_atom() != Some(a) {
                    return fail("Code", format!("`{m}` has type `{found}`, not `{a}`"));
                }
                Ok(())
            }
            MType::Cont(params, rf) => {
                if self.mode == Mode::Swam && !params.is_empty() {
                    return fail("Code", "dependent continuation type in SWAM code");
                }
                let mut d = delta.clone();
                self.wf_telescope(&mut d, params, false)?;
                self.wf_regfile(&d, rf)
            }
            MType::Tuple(ts) => ts.iter().try_for_each(|t| self.wf_mtype(delta, t)),
        }
    }

    fn known_type(&self, a: &str, rule: &'static str) -> RuleResult<()> {
        if self.types.contains(a) {
            Ok(())
        } else {
            fail(rule, format!("`{a}` is not a Prolog term type"))
        }
    }

    fn check_binder(&self, delta: &Context, theta: &Subst, x: &str, rule: &'static str) -> RuleResult<()> {
        if delta.contains(x) || theta.binds(x) {
            return fail(rule, format!("binder `{x}` is not fresh"));
        }
        if self.prog.sigma.contains(x) {
            return fail(rule, format!("binder `{x}` shadows a signature constant"));
        }
        Ok(())
    }

    fn constructor(&self, c: &str, n: usize, rule: &'static str) -> RuleResult<(Vec<String>, String)> {
        match self.prog.sigma.constructor(c) {
            Some((args, res)) if self.types.contains(res.as_str()) => {
                if args.len() != n {
                    return fail(rule, format!("`{c}` has arity {}, not {n}", args.len()));
                }
                Ok((args, res))
            }
            _ => fail(rule, format!("`{c}` is not a constructor")),
        }
    }

    /// A register holding a Prolog term: its LF term (dependent mode) and atomic type.
    fn term_reg(&self, st: &CheckState, r: &str, rule: &'static str) -> RuleResult<(Option<Term>, String)> {
        match (st.gamma.get(r), self.mode) {
            (None, _) => fail(rule, format!("register `{r}` is not in the register file")),
            (Some(MType::Sing(m, a)), Mode::Twam) => Ok((Some(m.clone()), a.clone())),
            (Some(MType::Atomic(a)), Mode::Swam) => Ok((None, a.clone())),
            (Some(t), _) => fail(rule, format!("register `{r}` has type {t}, expected a Prolog term")),
        }
    }

    fn term_type(&self, m: Option<Term>, a: &str) -> MType {
        match m {
            Some(m) => MType::Sing(m, a.to_string()),
            None => MType::Atomic(a.to_string()),
        }
    }

    fn var_binder(
        &self,
        st: &CheckState,
        x: &Option<String>,
        ty: &str,
        rule: &'static str,
    ) -> RuleResult<Option<String>> {
        self.known_type(ty, rule)?;
        match (x, self.mode) {
            (Some(x), Mode::Twam) => {
                self.check_binder(&st.delta, &st.theta, x, rule)?;
                Ok(Some(x.clone()))
            }
            (None, Mode::Swam) => Ok(None),
            (None, Mode::Twam) => fail(rule, "missing LF binder"),
            (Some(_), Mode::Swam) => fail(rule, "LF binder in SWAM code"),
        }
    }

    pub fn check_operand(&self, st: &CheckState, op: &Operand) -> Result<MType, (&'static str, String)> {
        match op {
            Operand::Reg(r) => st
                .gamma
                .get(r)
                .cloned()
                .ok_or_else(|| ("op-r", format!("register `{r}` is not in the register file"))),
            Operand::Label(l) => self
                .xi
                .get(l.as_str())
                .cloned()
                .ok_or_else(|| ("op-l", format!("unknown code label `{l}`"))),
            Operand::App(f, m) => {
                if self.mode == Mode::Swam {
                    return fail("op-app", "LF application in SWAM code");
                }
                match self.check_operand(st, f)? {
                    MType::Cont(params, rf) if !params.is_empty() => {
                        let (x, a) = &params[0];
                        let found = check_term(&self.prog.sigma, &st.delta, m)
                            .map_err(|e| ("op-app", e.to_string()))?;
                        if !alpha_eq(&found, a) {
                            return fail(
                                "op-app",
                                format!("argument `{m}` has type `{found}` but `{a}` was expected"),
                            );
                        }
                        let rest = MType::Cont(params[1..].to_vec(), rf);
                        Ok(rest.subst(&Subst::single(x.clone(), m.clone())))
                    }
                    t => fail("op-app", format!("applying `{f}` of non-product type {t}")),
                }
            }
            Operand::Lam(x, a, body) => {
                if self.mode == Mode::Swam {
                    return fail("op-lam", "LF abstraction in SWAM code");
                }
                check_type(&self.prog.sigma, &st.delta, a).map_err(|e| ("op-lam", e.to_string()))?;
                let mut inner = st.clone();
                let (x, body) = if inner.delta.contains(x) || self.prog.sigma.contains(x) {
                    let mut avoid: BTreeSet<String> = inner.delta.names().map(str::to_string).collect();
                    avoid.extend(body.fv());
                    let y = crate::lf::fresh_name(x, &avoid);
                    (y.clone(), body.subst(&Subst::single(x.clone(), Term::var(y))))
                } else {
                    (x.clone(), body.as_ref().clone())
                };
                inner.delta.push(x.clone(), a.clone());
                match self.check_operand(&inner, &body)? {
                    MType::Cont(mut params, rf) => {
                        params.insert(0, (x, a.clone()));
                        Ok(MType::Cont(params, rf))
                    }
                    t => fail("op-lam", format!("abstraction body has non-continuation type {t}")),
                }
            }
        }
    }

    fn operand_in(&self, st: &CheckState, op: &Operand, rule: &'static str) -> RuleResult<MType> {
        self.check_operand(st, op)
            .map_err(|(sub, msg)| (rule, format!("operand `{op}` ({sub}): {msg}")))
    }

    /// Shape checks that do not depend on types: spines are complete and
    /// contain only spinal instructions, and the block ends in jmp/succeed.
    fn check_structure(&self, instrs: &[Instr]) -> Result<(), (usize, &'static str, String)> {
        if instrs.is_empty() {
            return Err((0, "Block", "empty block".into()));
        }
        let mut i = 0;
        while i < instrs.len() {
            let ins = &instrs[i];
            if i + 1 < instrs.len() && ins.is_terminal() {
                return Err((i, "Block", format!("`{}` must end its block", ins.opcode())));
            }
            match ins {
                Instr::UnifyVar { .. } | Instr::UnifyVal { .. } => {
                    return Err((i, "Spine", "unify instruction outside a Prolog spine".into()))
                }
                Instr::SetVal(_) => return Err((i, "Spine", "set_val outside a tuple spine".into())),
                _ => {}
            }
            let n = ins.spine_len();
            let tuple = matches!(ins, Instr::PutTuple { .. });
            for k in 1..=n {
                let Some(next) = instrs.get(i + k) else {
                    return Err((i, "Spine", format!("spine left open: expected {n} spinal instruction(s)")));
                };
                let ok = if tuple {
                    matches!(next, Instr::SetVal(_))
                } else {
                    matches!(next, Instr::UnifyVar { .. } | Instr::UnifyVal { .. })
                };
                if !ok {
                    return Err((
                        i + k,
                        "Spine",
                        format!("`{}` cannot appear in the spine of `{ins}`", next.opcode()),
                    ));
                }
            }
            i += n + 1;
        }
        if !instrs[instrs.len() - 1].is_terminal() {
            return Err((instrs.len() - 1, "Block", "block must end in jmp or succeed".into()));
        }
        Ok(())
    }

    pub fn check_block(
        &self,
        label: &str,
        mut st: CheckState,
        instrs: &[Instr],
    ) -> Result<Vec<Warning>, CheckError> {
        let err_at = |i: usize, rule, msg| CheckError {
            label: Some(label.to_string()),
            index: Some(i),
            instr: instrs.get(i).map(|x| x.to_string()),
            rule,
            msg,
        };
        self.check_structure(instrs)
            .map_err(|(i, rule, msg)| err_at(i, rule, msg))?;
        let mut i = 0;
        while i < instrs.len() {
            let ins = instrs[i].subst(&st.theta);
            let n = ins.spine_len();
            let res = match &ins {
                Instr::GetStr { .. } | Instr::PutStr { .. } => {
                    let spine: Vec<Instr> = instrs[i + 1..=i + n].to_vec();
                    self.check_prolog_spine(&mut st, &ins, &spine)
                        .map_err(|(k, rule, msg)| err_at(i + k, rule, msg))?
                }
                Instr::PutTuple { rd, .. } => {
                    self.check_tuple_spine(&mut st, rd, &instrs[i + 1..=i + n])
                        .map_err(|(k, rule, msg)| err_at(i + k, rule, msg))?;
                    Flow::Continue
                }
                _ => self.check_instr(&mut st, &ins).map_err(|(rule, msg)| err_at(i, rule, msg))?,
            };
            if let Flow::Vacuous(msg) = res {
                return Ok(vec![Warning {
                    label: label.to_string(),
                    index: i,
                    msg,
                }]);
            }
            i += n + 1;
        }
        Ok(Vec::new())
    }

    fn check_instr(&self, st: &mut CheckState, ins: &Instr) -> RuleResult<Flow> {
        match ins {
            Instr::PutVar { r, x, ty } => {
                let x = self.var_binder(st, x, ty, "Putvar")?;
                if let Some(x) = &x {
                    st.delta.push(x.clone(), Family::atom(ty.clone()));
                }
                let t = self.term_type(x.map(Term::var), ty);
                st.gamma.insert(r.clone(), t);
            }
            Instr::GetVal { r1, r2 } => {
                let (m1, a1) = self.term_reg(st, r1, "Getval")?;
                let (m2, a2) = self.term_reg(st, r2, "Getval")?;
                if a1 != a2 {
                    return fail("Getval", format!("unifying terms of types `{a1}` and `{a2}`"));
                }
                if let (Some(m1), Some(m2)) = (m1, m2) {
                    match static_unify(&st.delta, &m1, &m2) {
                        UnifyResult::Unifier(s) => st.unify_apply(&s),
                        UnifyResult::Bottom => {
                            return Ok(Flow::Vacuous(format!(
                                "`{m1}` and `{m2}` never unify; the rest of the block is dead code"
                            )))
                        }
                    }
                }
            }
            Instr::Mov { rd, op } => {
                let t = self.operand_in(st, op, "Mov")?;
                st.gamma.insert(rd.clone(), t);
            }
            Instr::Jmp(op) => match self.operand_in(st, op, "Jmp")? {
                MType::Cont(params, pre) if params.is_empty() => {
                    if !regfile_sub(&pre, &st.gamma) {
                        return fail(
                            "Jmp",
                            format!("register file {} does not provide {pre}", st.gamma),
                        );
                    }
                }
                t => return fail("Jmp", format!("jump target has type {t}, expected ~Γ")),
            },
            Instr::Close { rd, re, op } => {
                if op.as_label_app().is_none() {
                    return fail("Close", "closure operand must be a code label applied to LF terms");
                }
                let env_t = st
                    .gamma
                    .get(re)
                    .cloned()
                    .ok_or_else(|| ("Close", format!("register `{re}` is not in the register file")))?;
                match self.operand_in(st, op, "Close")? {
                    MType::Cont(params, mut pre) => {
                        match pre.0.remove(ENV) {
                            Some(t) if mtype_alpha_eq(&t, &env_t) => {}
                            Some(t) => {
                                return fail(
                                    "Close",
                                    format!("continuation expects env : {t}, but `{re}` has type {env_t}"),
                                )
                            }
                            None => return fail("Close", "continuation does not take an env register"),
                        }
                        st.gamma.insert(rd.clone(), MType::Cont(params, pre));
                    }
                    t => return fail("Close", format!("closure target has type {t}")),
                }
            }
            Instr::PushBt { re, op } => {
                if op.as_label_app().is_none() {
                    return fail("BT", "failure continuation must be a code label applied to LF terms");
                }
                let env_t = st
                    .gamma
                    .get(re)
                    .cloned()
                    .ok_or_else(|| ("BT", format!("register `{re}` is not in the register file")))?;
                let want = MType::neg(RegFile::new().with(ENV, env_t));
                let t = self.operand_in(st, op, "BT")?;
                if !mtype_alpha_eq(&t, &want) {
                    return fail("BT", format!("failure continuation has type {t}, expected {want}"));
                }
            }
            Instr::Proj { rd, rs, i } => match st.gamma.get(rs) {
                Some(MType::Tuple(ts)) if *i >= 1 && *i <= ts.len() => {
                    let t = ts[i - 1].clone();
                    st.gamma.insert(rd.clone(), t);
                }
                Some(MType::Tuple(ts)) => {
                    return fail("Proj", format!("index {i} out of range for a {}-tuple", ts.len()))
                }
                Some(t) => return fail("Proj", format!("`{rs}` has type {t}, not a tuple")),
                None => return fail("Proj", format!("register `{rs}` is not in the register file")),
            },
            Instr::Succeed(ann) => match (ann, self.mode) {
                (Some((m, a)), Mode::Twam) => {
                    let found =
                        check_term(&self.prog.sigma, &st.delta, m).map_err(|e| ("Succeed", e.to_string()))?;
                    if !alpha_eq(&found, a) {
                        return fail("Succeed", format!("proof `{m}` has type `{found}`, not `{a}`"));
                    }
                }
                (None, Mode::Swam) => {}
                (None, Mode::Twam) => return fail("Succeed", "succeed requires a proof annotation"),
                (Some(_), Mode::Swam) => return fail("Succeed", "proof annotation in SWAM code"),
            },
            Instr::GetStr { .. }
            | Instr::PutStr { .. }
            | Instr::PutTuple { .. }
            | Instr::UnifyVar { .. }
            | Instr::UnifyVal { .. }
            | Instr::SetVal(_) => unreachable!("handled by the spine checkers"),
        }
        Ok(Flow::Continue)
    }

    /// `head` is the get_str/put_str, `spine` its argument instructions. Error
    /// indices are relative to `head`.
    fn check_prolog_spine(
        &self,
        st: &mut CheckState,
        head: &Instr,
        spine: &[Instr],
    ) -> Result<Flow, (usize, &'static str, String)> {
        let (c, n, r, is_get) = match head {
            Instr::GetStr { c, n, r } => (c, *n, r, true),
            Instr::PutStr { c, n, r } => (c, *n, r, false),
            _ => unreachable!(),
        };
        let rule = if is_get { "Getstr" } else { "Putstr" };
        let at0 = |(rule, msg): (&'static str, String)| (0, rule, msg);
        let (arg_tys, res) = self.constructor(c, n, rule).map_err(at0)?;
        let lhs = if is_get {
            let (m, a) = self.term_reg(st, r, rule).map_err(at0)?;
            if a != res {
                return Err((0, rule, format!("`{r}` holds a `{a}`, but `{c}` builds a `{res}`")));
            }
            m
        } else {
            let x = (self.mode == Mode::Twam).then(|| st.internal_name("p"));
            if let Some(x) = &x {
                st.delta.push(x.clone(), Family::atom(res.clone()));
            }
            st.gamma.insert(r.clone(), self.term_type(x.clone().map(Term::var), &res));
            x.map(Term::var)
        };
        let mut args = Vec::new();
        for (k, (raw, a)) in spine.iter().zip(&arg_tys).enumerate() {
            let at = |(rule, msg): (&'static str, String)| (k + 1, rule, msg);
            let ins = raw.subst(&st.theta);
            match &ins {
                Instr::UnifyVar { r, x, ty } => {
                    if ty != a {
                        return Err((k + 1, "Unifyvar", format!("argument {} of `{c}` has type `{a}`, not `{ty}`", k + 1)));
                    }
                    let x = self.var_binder(st, x, ty, "Unifyvar").map_err(at)?;
                    if let Some(x) = &x {
                        st.delta.push(x.clone(), Family::atom(ty.clone()));
                        args.push(Term::var(x.clone()));
                    }
                    st.gamma.insert(r.clone(), self.term_type(x.map(Term::var), ty));
                }
                Instr::UnifyVal { r, bind } => {
                    let (m, ty) = self.term_reg(st, r, "Unifyval").map_err(at)?;
                    if &ty != a {
                        return Err((k + 1, "Unifyval", format!("argument {} of `{c}` has type `{a}`, but `{r}` holds a `{ty}`", k + 1)));
                    }
                    match (bind, self.mode) {
                        (Some((x, b)), Mode::Twam) => {
                            if b != a {
                                return Err((k + 1, "Unifyval", format!("binder `{x}` typed `{b}`, expected `{a}`")));
                            }
                            self.check_binder(&st.delta, &st.theta, x, "Unifyval").map_err(at)?;
                            let m = m.clone().expect("dependent mode");
                            st.theta = st.theta.then(&Subst::single(x.clone(), m));
                        }
                        (Some(_), Mode::Swam) => return Err((k + 1, "Unifyval", "LF binder in SWAM code".into())),
                        (None, _) => {}
                    }
                    if let Some(m) = m {
                        args.push(m);
                    }
                }
                _ => unreachable!("checked by the structure pass"),
            }
        }
        if let Some(lhs) = lhs {
            let rhs = Term::app(c.clone(), args);
            match static_unify(&st.delta, &lhs, &rhs) {
                UnifyResult::Unifier(s) => st.unify_apply(&s),
                UnifyResult::Bottom => {
                    return Ok(Flow::Vacuous(format!(
                        "`{lhs}` never unifies with `{rhs}`; the rest of the block is dead code"
                    )))
                }
            }
        }
        Ok(Flow::Continue)
    }

    fn check_tuple_spine(
        &self,
        st: &mut CheckState,
        rd: &str,
        spine: &[Instr],
    ) -> Result<(), (usize, &'static str, String)> {
        let mut ts = Vec::new();
        for (k, ins) in spine.iter().enumerate() {
            let Instr::SetVal(r) = ins else {
                unreachable!("checked by the structure pass")
            };
            match st.gamma.get(r) {
                Some(t) => ts.push(t.clone()),
                None => {
                    return Err((k + 1, "SetVal", format!("register `{r}` is not in the register file")))
                }
            }
        }
        st.gamma.insert(rd.to_string(), MType::Tuple(ts));
        Ok(())
    }
}

/// Checks a whole program in the mode recorded in its header.
pub fn check_program(p: &Program) -> Result<Report, CheckError> {
    Checker::new(p)?.check_program()
}
