//! The abstract machine: heap, trail, registers and the four execution modes
//! (normal, read spine, write spine, tuple-write spine), plus a checked mode
//! that asserts the machine typing invariants after every step.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::lf::{alpha_eq, check_term, Context, Family, Subst, Term};
use crate::twam::{Instr, MType, Mode, Operand, Program, ENV};

pub type Loc = usize;

/// Runtime words. `App` and `Lam` only arise in checked runs of TWAM code,
/// where operands carry LF proof terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Word {
    Heap(Loc),
    Code(usize),
    App(Rc<Word>, Term),
    Lam(String, Rc<Word>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cell {
    Free { ty: u32 },
    Bound(Loc),
    Str { c: u32, args: Vec<Loc> },
    Tuple(Vec<Word>),
    Closure { env: Word, label: usize, args: Vec<Term> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    /// Cells bound since this frame was pushed, with their types.
    pub bindings: Vec<(Loc, u32)>,
    pub env: Word,
    pub label: usize,
    pub args: Vec<Term>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trail(pub Vec<Frame>);

impl Trail {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn top_len(&self) -> usize {
        self.0.last().map_or(0, |f| f.bindings.len())
    }

    /// Records a binding in the newest frame. With no frame the binding can
    /// never be undone, so nothing is kept.
    fn uptrail(&mut self, l: Loc, ty: u32) {
        if let Some(f) = self.0.last_mut() {
            f.bindings.push((l, ty));
        }
    }
}

/// The heap, with interned constructor and type names.
#[derive(Clone, Debug, Default)]
pub struct Store {
    cells: Vec<Cell>,
    ctor_names: Vec<String>,
    ctor_ids: HashMap<String, u32>,
    type_names: Vec<String>,
    type_ids: HashMap<String, u32>,
    /// Every cell moved from Free to a binding, drained by the machine.
    binds: Vec<Loc>,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn ctor_id(&mut self, c: &str) -> u32 {
        if let Some(&i) = self.ctor_ids.get(c) {
            return i;
        }
        let i = self.ctor_names.len() as u32;
        self.ctor_names.push(c.to_string());
        self.ctor_ids.insert(c.to_string(), i);
        i
    }

    pub fn type_id(&mut self, a: &str) -> u32 {
        if let Some(&i) = self.type_ids.get(a) {
            return i;
        }
        let i = self.type_names.len() as u32;
        self.type_names.push(a.to_string());
        self.type_ids.insert(a.to_string(), i);
        i
    }

    pub fn ctor_name(&self, c: u32) -> &str {
        &self.ctor_names[c as usize]
    }

    pub fn type_name(&self, a: u32) -> &str {
        &self.type_names[a as usize]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, l: Loc) -> &Cell {
        &self.cells[l]
    }

    pub fn alloc(&mut self, c: Cell) -> Loc {
        self.cells.push(c);
        self.cells.len() - 1
    }

    pub fn alloc_free(&mut self, ty: u32) -> Loc {
        self.alloc(Cell::Free { ty })
    }

    pub fn alloc_str(&mut self, c: &str, args: Vec<Loc>) -> Loc {
        let c = self.ctor_id(c);
        self.alloc(Cell::Str { c, args })
    }

    /// Overwrites a cell. Exposed for building test heaps.
    pub fn set(&mut self, l: Loc, c: Cell) {
        self.cells[l] = c;
    }

    pub fn deref(&self, mut l: Loc) -> Loc {
        while let Cell::Bound(m) = self.cells[l] {
            l = m;
        }
        l
    }

    fn children(&self, l: Loc, out: &mut Vec<Loc>) {
        fn word_root(w: &Word) -> Option<Loc> {
            match w {
                Word::Heap(l) => Some(*l),
                Word::Code(_) => None,
                Word::App(f, _) => word_root(f),
                Word::Lam(_, b) => word_root(b),
            }
        }
        match &self.cells[l] {
            Cell::Free { .. } => {}
            Cell::Bound(m) => out.push(*m),
            Cell::Str { args, .. } => out.extend(args),
            Cell::Tuple(ws) => out.extend(ws.iter().filter_map(word_root)),
            Cell::Closure { env, .. } => out.extend(word_root(env)),
        }
    }

    /// Whether `needle` is reachable from `hay` (including `needle == hay`).
    pub fn occurs(&self, needle: Loc, hay: Loc) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![hay];
        let mut kids = Vec::new();
        while let Some(l) = stack.pop() {
            if l == needle {
                return true;
            }
            if !seen.insert(l) {
                continue;
            }
            kids.clear();
            self.children(l, &mut kids);
            stack.extend(kids.iter().copied());
        }
        false
    }

    fn bind(&mut self, l: Loc, c: Cell, trail: &mut Trail) {
        let Cell::Free { ty } = self.cells[l] else {
            unreachable!("binding a non-free cell")
        };
        self.cells[l] = c;
        self.binds.push(l);
        trail.uptrail(l, ty);
    }

    /// First-order unification with occurs check. Bindings are trailed.
    /// On failure the heap may be partially updated; the caller backtracks.
    pub fn unify(&mut self, a: Loc, b: Loc, trail: &mut Trail) -> bool {
        let mut work = vec![(a, b)];
        while let Some((x, y)) = work.pop() {
            let (dx, dy) = (self.deref(x), self.deref(y));
            if dx == dy {
                continue;
            }
            match (&self.cells[dx], &self.cells[dy]) {
                (_, Cell::Free { .. }) => {
                    if self.occurs(dy, dx) {
                        return false;
                    }
                    self.bind(dy, Cell::Bound(dx), trail);
                }
                (Cell::Free { .. }, _) => {
                    if self.occurs(dx, dy) {
                        return false;
                    }
                    self.bind(dx, Cell::Bound(dy), trail);
                }
                (Cell::Str { c: c1, args: a1 }, Cell::Str { c: c2, args: a2 }) => {
                    if c1 != c2 || a1.len() != a2.len() {
                        return false;
                    }
                    work.extend(a1.iter().copied().zip(a2.iter().copied()).rev());
                }
                _ => return false,
            }
        }
        true
    }

    /// Reads a Prolog term; free cells are named by `name`.
    pub fn read_term_with(&self, l: Loc, name: &dyn Fn(Loc) -> String) -> Term {
        let l = self.deref(l);
        match &self.cells[l] {
            Cell::Str { c, args } => Term::app(
                self.ctor_name(*c),
                args.iter().map(|a| self.read_term_with(*a, name)).collect(),
            ),
            _ => Term::var(name(l)),
        }
    }

    /// Free cells read back as variables `_<loc>`.
    pub fn read_term(&self, l: Loc) -> Term {
        self.read_term_with(l, &|l| format!("_{l}"))
    }

    /// Some cell on a cycle, if the heap has one.
    pub fn find_cycle(&self) -> Option<Loc> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; self.cells.len()];
        let mut kids = Vec::new();
        for root in 0..self.cells.len() {
            if color[root] != 0 {
                continue;
            }
            let mut stack: Vec<(Loc, Vec<Loc>)> = Vec::new();
            kids.clear();
            self.children(root, &mut kids);
            color[root] = 1;
            stack.push((root, kids.clone()));
            while let Some((node, pending)) = stack.last_mut() {
                match pending.pop() {
                    Some(k) => match color[k] {
                        1 => return Some(k),
                        0 => {
                            color[k] = 1;
                            kids.clear();
                            self.children(k, &mut kids);
                            stack.push((k, kids.clone()));
                        }
                        _ => {}
                    },
                    None => {
                        color[*node] = 2;
                        stack.pop();
                    }
                }
            }
        }
        None
    }

    /// Whether a cycle passes through `start`.
    fn cycle_through(&self, start: Loc) -> bool {
        let mut kids = Vec::new();
        self.children(start, &mut kids);
        let mut seen = HashSet::new();
        let mut stack = kids;
        let mut buf = Vec::new();
        while let Some(l) = stack.pop() {
            if l == start {
                return true;
            }
            if !seen.insert(l) {
                continue;
            }
            buf.clear();
            self.children(l, &mut buf);
            stack.extend(buf.iter().copied());
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("stuck at {label}[{index}] `{instr}`: {msg}")]
    Stuck {
        label: String,
        index: usize,
        instr: String,
        msg: String,
    },
    #[error("invariant violation after step {step}: {msg}")]
    Violation { step: u64, msg: String },
    #[error("cannot load program: {0}")]
    Load(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success {
        answers: Vec<(String, String)>,
        /// In checked runs of TWAM code: the proof handed to `succeed` and
        /// the proposition it proves, both read against the final heap.
        proof: Option<(Term, Family)>,
    },
    Failure,
    OutOfFuel,
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success { answers, .. } if answers.is_empty() => writeln!(f, "yes."),
            Outcome::Success { answers, .. } => {
                for (x, t) in answers {
                    writeln!(f, "{x} = {t}")?;
                }
                Ok(())
            }
            Outcome::Failure => writeln!(f, "no."),
            Outcome::OutOfFuel => writeln!(f, "out of fuel."),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: u64,
    pub backtracks: u64,
    pub closures: u64,
    pub heap_cells: usize,
    pub max_trail: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceLine {
    pub step: u64,
    pub rule: &'static str,
    pub instr: Option<String>,
    pub delta: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>6}  {:<12} {:<34} {}",
            self.step,
            self.rule,
            self.instr.as_deref().unwrap_or(""),
            self.delta
        )
    }
}

// ---- loaded program ----

#[derive(Clone, Debug)]
enum ROp {
    Reg(usize),
    Label(usize),
    App(Box<ROp>, Term),
    Lam(String, Box<ROp>),
}

#[derive(Clone, Debug)]
enum RI {
    PutVar { r: usize, ty: u32, x: Option<String> },
    GetVal { r1: usize, r2: usize },
    GetStr { c: u32, r: usize },
    PutStr { c: u32, r: usize },
    UnifyVar { r: usize, ty: u32, x: Option<String> },
    UnifyVal { r: usize, bind: Option<String> },
    Mov { rd: usize, op: ROp },
    Jmp(ROp),
    Close { rd: usize, re: usize, op: ROp },
    PushBt { re: usize, op: ROp },
    PutTuple { rd: usize, n: usize },
    SetVal(usize),
    Proj { rd: usize, rs: usize, i: usize },
    Succeed(Option<(Term, Family)>),
}

struct Block {
    label: String,
    params: Vec<String>,
    pre: Vec<(usize, MType)>,
    body: Vec<RI>,
}

struct CtorInfo {
    args: Vec<u32>,
    res: u32,
}

enum SpineMode {
    Normal,
    Read { args: Vec<Loc>, next: usize },
    Write { c: u32, dest: Loc, built: Vec<Loc> },
    TWrite { rd: usize, n: usize, built: Vec<Word> },
}

/// Bookkeeping for checked runs: LF names of free cells (Δ and μ), the
/// static environment of the current block, and the trailed-cell set.
#[derive(Default)]
struct Checked {
    proofs: bool,
    names: Vec<Option<String>>,
    cell_ty: Vec<Option<u32>>,
    by_name: HashMap<String, Loc>,
    /// μ: name of every currently free cell.
    mu: BTreeMap<String, Loc>,
    trailed: HashSet<Loc>,
    rho: Subst,
    counter: usize,
    remaining_spine: usize,
}

impl Checked {
    fn fresh(&mut self, base: &str) -> String {
        self.counter += 1;
        format!("{base}#{}", self.counter)
    }
}

pub struct Machine<'p> {
    prog: &'p Program,
    blocks: Vec<Block>,
    ctors: Vec<CtorInfo>,
    pub store: Store,
    pub trail: Trail,
    regs: Vec<Option<Word>>,
    reg_names: Vec<String>,
    env_reg: usize,
    block: usize,
    pc: usize,
    mode: SpineMode,
    pub stats: Stats,
    checked: Option<Checked>,
    log: Option<Vec<String>>,
    touched: Vec<Loc>,
}

enum Step {
    Continue,
    Done(Outcome),
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program, checked: bool) -> Result<Machine<'p>, VmError> {
        let mut store = Store::new();
        let mut types = HashMap::new();
        for t in &prog.types {
            types.insert(t.clone(), store.type_id(t));
        }
        let mut ctors = Vec::new();
        for (name, _) in prog.sigma.decls() {
            if let Some((args, res)) = prog.sigma.constructor(name) {
                let Some(&res) = types.get(&res) else { continue };
                let args = args
                    .iter()
                    .map(|a| types.get(a).copied().ok_or_else(|| VmError::Load(format!("`{name}`: unknown type `{a}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let id = store.ctor_id(name);
                debug_assert_eq!(id as usize, ctors.len());
                ctors.push(CtorInfo { args, res });
            }
        }
        let labels: HashMap<&str, usize> = prog
            .code
            .iter()
            .enumerate()
            .map(|(i, (l, _))| (l.as_str(), i))
            .collect();
        let mut reg_ids: HashMap<String, usize> = HashMap::new();
        let mut reg_names = Vec::new();
        let mut reg = |r: &str| -> usize {
            if let Some(&i) = reg_ids.get(r) {
                return i;
            }
            reg_names.push(r.to_string());
            reg_ids.insert(r.to_string(), reg_names.len() - 1);
            reg_names.len() - 1
        };
        let env_reg = reg(ENV);
        let mut blocks = Vec::new();
        for (label, cv) in &prog.code {
            let mut body = Vec::new();
            for (index, ins) in cv.body.iter().enumerate() {
                let stuck = |msg: String| VmError::Stuck {
                    label: label.clone(),
                    index,
                    instr: ins.to_string(),
                    msg,
                };
                let ty = |a: &str| types.get(a).copied().ok_or_else(|| stuck(format!("unknown type `{a}`")));
                let ctor = |store: &Store, c: &str, n: usize| -> Result<u32, VmError> {
                    match store.ctor_ids.get(c) {
                        Some(&id) if ctors[id as usize].args.len() == n => Ok(id),
                        Some(_) => Err(stuck(format!("`{c}` does not have arity {n}"))),
                        None => Err(stuck(format!("unknown constructor `{c}`"))),
                    }
                };
                fn op(o: &Operand, labels: &HashMap<&str, usize>, reg: &mut dyn FnMut(&str) -> usize) -> Result<ROp, String> {
                    Ok(match o {
                        Operand::Reg(r) => ROp::Reg(reg(r)),
                        Operand::Label(l) => ROp::Label(*labels.get(l.as_str()).ok_or_else(|| format!("unknown label `{l}`"))?),
                        Operand::App(f, m) => ROp::App(Box::new(op(f, labels, reg)?), m.clone()),
                        Operand::Lam(x, _, b) => ROp::Lam(x.clone(), Box::new(op(b, labels, reg)?)),
                    })
                }
                let ri = match ins {
                    Instr::PutVar { r, x, ty: a } => RI::PutVar { r: reg(r), ty: ty(a)?, x: x.clone() },
                    Instr::GetVal { r1, r2 } => RI::GetVal { r1: reg(r1), r2: reg(r2) },
                    Instr::GetStr { c, n, r } => RI::GetStr { c: ctor(&store, c, *n)?, r: reg(r) },
                    Instr::PutStr { c, n, r } => RI::PutStr { c: ctor(&store, c, *n)?, r: reg(r) },
                    Instr::UnifyVar { r, x, ty: a } => RI::UnifyVar { r: reg(r), ty: ty(a)?, x: x.clone() },
                    Instr::UnifyVal { r, bind } => RI::UnifyVal { r: reg(r), bind: bind.as_ref().map(|b| b.0.clone()) },
                    Instr::Mov { rd, op: o } => RI::Mov { rd: reg(rd), op: op(o, &labels, &mut reg).map_err(stuck)? },
                    Instr::Jmp(o) => RI::Jmp(op(o, &labels, &mut reg).map_err(stuck)?),
                    Instr::Close { rd, re, op: o } => RI::Close { rd: reg(rd), re: reg(re), op: op(o, &labels, &mut reg).map_err(stuck)? },
                    Instr::PushBt { re, op: o } => RI::PushBt { re: reg(re), op: op(o, &labels, &mut reg).map_err(stuck)? },
                    Instr::PutTuple { rd, n } => RI::PutTuple { rd: reg(rd), n: *n },
                    Instr::SetVal(r) => RI::SetVal(reg(r)),
                    Instr::Proj { rd, rs, i } => RI::Proj { rd: reg(rd), rs: reg(rs), i: *i },
                    Instr::Succeed(a) => RI::Succeed(a.clone()),
                };
                body.push(ri);
            }
            let pre = cv.pre.0.iter().map(|(r, t)| (reg(r), t.clone())).collect();
            blocks.push(Block {
                label: label.clone(),
                params: cv.params.iter().map(|(x, _)| x.clone()).collect(),
                pre,
                body,
            });
        }
        let Some(&entry) = labels.get(prog.query.as_str()) else {
            return Err(VmError::Load(format!("query entry `{}` is not defined", prog.query)));
        };
        let checked = checked.then(|| Checked {
            proofs: prog.mode == Mode::Twam,
            ..Default::default()
        });
        let nregs = reg_names.len();
        let mut m = Machine {
            prog,
            blocks,
            ctors,
            store,
            trail: Trail::default(),
            regs: vec![None; nregs],
            reg_names,
            env_reg,
            block: entry,
            pc: 0,
            mode: SpineMode::Normal,
            stats: Stats::default(),
            checked,
            log: None,
            touched: Vec::new(),
        };
        m.enter(entry, Vec::new())
            .map_err(|msg| VmError::Violation { step: 0, msg })?;
        Ok(m)
    }

    /// Runs until success, failure or `fuel` steps, reporting each step to
    /// `trace` if given.
    pub fn run(
        &mut self,
        fuel: u64,
        mut trace: Option<&mut dyn FnMut(&TraceLine)>,
    ) -> Result<Outcome, VmError> {
        loop {
            if self.stats.steps >= fuel {
                return Ok(Outcome::OutOfFuel);
            }
            self.stats.steps += 1;
            if trace.is_some() {
                self.log = Some(Vec::new());
            }
            let (rule, instr, res) = self.step();
            if let Some(t) = trace.as_mut() {
                let delta = self.log.take().unwrap_or_default().join(", ");
                t(&TraceLine {
                    step: self.stats.steps,
                    rule,
                    instr,
                    delta,
                });
            }
            let res = res?;
            self.stats.heap_cells = self.store.len();
            self.stats.max_trail = self.stats.max_trail.max(self.trail.depth());
            if self.checked.is_some() {
                self.after_step()
                    .map_err(|msg| VmError::Violation { step: self.stats.steps, msg })?;
            } else {
                self.store.binds.clear();
            }
            if let Step::Done(out) = res {
                if self.checked.is_some() {
                    self.full_check()
                        .map_err(|msg| VmError::Violation { step: self.stats.steps, msg })?;
                }
                return Ok(out);
            }
        }
    }

    fn note(&mut self, s: impl FnOnce() -> String) {
        if let Some(log) = &mut self.log {
            log.push(s());
        }
    }

    fn show_word(&self, w: &Word) -> String {
        match w {
            Word::Heap(l) => format!("l{l}"),
            Word::Code(i) => self.blocks[*i].label.clone(),
            Word::App(f, m) => format!("({} {})", self.show_word(f), crate::lf::DisplayArg(m)),
            Word::Lam(x, b) => format!("(\\{x}. {})", self.show_word(b)),
        }
    }

    fn show_cell(&self, c: &Cell) -> String {
        match c {
            Cell::Free { ty } => format!("free[{}]", self.store.type_name(*ty)),
            Cell::Bound(l) => format!("bound(l{l})"),
            Cell::Str { c, args } => format!(
                "{}<{}>",
                self.store.ctor_name(*c),
                args.iter().map(|a| format!("l{a}")).collect::<Vec<_>>().join(",")
            ),
            Cell::Tuple(ws) => format!(
                "<{}>",
                ws.iter().map(|w| self.show_word(w)).collect::<Vec<_>>().join(",")
            ),
            Cell::Closure { env, label, .. } => {
                format!("close({}, {})", self.show_word(env), self.blocks[*label].label)
            }
        }
    }

    fn alloc(&mut self, c: Cell) -> Loc {
        let l = self.store.alloc(c);
        self.touched.push(l);
        if self.log.is_some() {
            let s = format!("H[l{l} := {}]", self.show_cell(self.store.cell(l)));
            self.note(|| s);
        }
        l
    }

    fn alloc_free(&mut self, ty: u32, binder: Option<&str>) -> Loc {
        let l = self.alloc(Cell::Free { ty });
        if let Some(ck) = &mut self.checked {
            let name = ck.fresh(binder.unwrap_or("_"));
            ck.names.resize(l + 1, None);
            ck.cell_ty.resize(l + 1, None);
            ck.names[l] = Some(name.clone());
            ck.cell_ty[l] = Some(ty);
            ck.by_name.insert(name.clone(), l);
            ck.mu.insert(name.clone(), l);
            if let Some(x) = binder {
                ck.rho.insert(x, Term::var(name));
            }
        }
        l
    }

    fn set_reg(&mut self, r: usize, w: Word) {
        if self.log.is_some() {
            let s = format!("{} <- {}", self.reg_names[r], self.show_word(&w));
            self.note(|| s);
        }
        self.regs[r] = Some(w);
    }

    fn get_reg(&self, r: usize) -> Result<Word, String> {
        self.regs[r]
            .clone()
            .ok_or_else(|| format!("register `{}` is unset", self.reg_names[r]))
    }

    fn heap_reg(&self, r: usize) -> Result<Loc, String> {
        match self.get_reg(r)? {
            Word::Heap(l) => Ok(l),
            w => Err(format!("register `{}` holds {}, not a heap location", self.reg_names[r], self.show_word(&w))),
        }
    }

    fn term_reg(&self, r: usize) -> Result<Loc, String> {
        let l = self.heap_reg(r)?;
        match self.store.cell(self.store.deref(l)) {
            Cell::Free { .. } | Cell::Str { .. } => Ok(l),
            c => Err(format!("register `{}` holds {}, not a Prolog term", self.reg_names[r], self.show_cell(c))),
        }
    }

    fn rho(&self, m: &Term) -> Term {
        match &self.checked {
            Some(ck) if ck.proofs => ck.rho.apply(m),
            _ => m.clone(),
        }
    }

    fn eval(&mut self, op: &ROp) -> Result<Word, String> {
        let proofs = self.checked.as_ref().is_some_and(|c| c.proofs);
        match op {
            ROp::Reg(r) => self.get_reg(*r),
            ROp::Label(l) => Ok(Word::Code(*l)),
            ROp::App(f, m) => {
                let w = self.eval(f)?;
                if !proofs {
                    return Ok(w);
                }
                let m = self.rho(m);
                Ok(Word::App(Rc::new(w), m))
            }
            ROp::Lam(x, body) => {
                if !proofs {
                    return self.eval(body);
                }
                let ck = self.checked.as_mut().expect("checked");
                let y = ck.fresh(x);
                let saved = ck.rho.get(x).cloned();
                ck.rho.insert(x.clone(), Term::var(y.clone()));
                let w = self.eval(body);
                let ck = self.checked.as_mut().expect("checked");
                match saved {
                    Some(t) => ck.rho.insert(x.clone(), t),
                    None => ck.rho.remove(x),
                }
                Ok(Word::Lam(y, Rc::new(w?)))
            }
        }
    }

    /// Splits a continuation word into the code block it runs, the loaded
    /// environment (for closures) and the LF arguments for the block.
    fn resolve_cont(&self, w: &Word) -> Result<(usize, Option<Word>, Vec<Term>), String> {
        // pending arguments, innermost last; proof abstractions are reduced
        // here rather than when they are built, and binder names are fresh
        let mut args = Vec::new();
        let mut beta = Subst::new();
        let mut w = w;
        loop {
            match w {
                Word::App(f, m) => {
                    args.push(beta.apply(m));
                    w = f;
                }
                Word::Lam(x, b) => {
                    let m = args.pop().ok_or("jump to an unapplied proof abstraction")?;
                    beta.insert(x.clone(), m);
                    w = b;
                }
                Word::Code(i) => {
                    args.reverse();
                    return Ok((*i, None, args));
                }
                Word::Heap(l) => match self.store.cell(*l) {
                    Cell::Closure { env, label, args: stored } => {
                        args.reverse();
                        let mut all = stored.clone();
                        all.extend(args);
                        return Ok((*label, Some(env.clone()), all));
                    }
                    c => return Err(format!("jump to non-continuation {}", self.show_cell(c))),
                },
            }
        }
    }

    fn enter(&mut self, block: usize, args: Vec<Term>) -> Result<(), String> {
        self.block = block;
        self.pc = 0;
        self.mode = SpineMode::Normal;
        if let Some(ck) = &mut self.checked {
            if ck.proofs {
                let b = &self.blocks[block];
                if b.params.len() != args.len() {
                    return Err(format!(
                        "block `{}` takes {} LF argument(s), {} supplied",
                        b.label,
                        b.params.len(),
                        args.len()
                    ));
                }
                ck.rho = Subst::from_pairs(b.params.iter().cloned().zip(args));
            }
            self.check_entry()?;
        }
        Ok(())
    }

    fn backtrack(&mut self) -> Result<Option<Step>, String> {
        let Some(frame) = self.trail.0.pop() else {
            self.note(|| "trail empty".into());
            return Ok(Some(Step::Done(Outcome::Failure)));
        };
        self.stats.backtracks += 1;
        for (l, ty) in frame.bindings.iter().rev() {
            self.store.cells[*l] = Cell::Free { ty: *ty };
            self.touched.push(*l);
            if let Some(ck) = &mut self.checked {
                ck.trailed.remove(l);
                if let Some(name) = ck.names.get(*l).cloned().flatten() {
                    ck.mu.insert(name, *l);
                }
            }
            let l = *l;
            self.note(|| format!("H[l{l} := free]"));
        }
        for r in self.regs.iter_mut() {
            *r = None;
        }
        self.set_reg(self.env_reg, frame.env);
        let label = frame.label;
        self.note(|| "T <- pop".to_string());
        self.enter(label, frame.args)?;
        Ok(None)
    }

    fn fetch(&mut self) -> Option<&'p Instr> {
        let (l, cv) = &self.prog.code[self.block];
        let _ = l;
        cv.body.get(self.pc)
    }

    /// One transition. Returns the rule name and instruction text for tracing.
    fn step(&mut self) -> (&'static str, Option<String>, Result<Step, VmError>) {
        let index = self.pc;
        let label = self.blocks[self.block].label.clone();
        let shown = self.log.is_some();
        let stuck = |ins: Option<&Instr>, msg: String| VmError::Stuck {
            label: label.clone(),
            index,
            instr: ins.map(|i| i.to_string()).unwrap_or_default(),
            msg,
        };
        // spine completions are steps of their own
        match &self.mode {
            SpineMode::Write { c, built, .. } if built.len() == self.ctors[*c as usize].args.len() => {
                let r = self.write_end().map_err(|m| stuck(None, m));
                return ("Write", None, r);
            }
            SpineMode::TWrite { n, built, .. } if built.len() == *n => {
                let SpineMode::TWrite { rd, built, .. } = std::mem::replace(&mut self.mode, SpineMode::Normal) else {
                    unreachable!()
                };
                let l = self.alloc(Cell::Tuple(built));
                self.set_reg(rd, Word::Heap(l));
                return ("TWrite", None, Ok(Step::Continue));
            }
            SpineMode::Read { args, next } if *next == args.len() => {
                self.mode = SpineMode::Normal;
                return ("ReadEnd", None, Ok(Step::Continue));
            }
            _ => {}
        }
        let Some(ins) = self.fetch() else {
            return ("", None, Err(stuck(None, "fell off the end of the block".into())));
        };
        let text = shown.then(|| ins.to_string());
        let ri = self.blocks[self.block].body[self.pc].clone();
        self.pc += 1;
        match self.exec(ri) {
            Ok((rule, s)) => (rule, text, Ok(s)),
            Err(msg) => ("", text, Err(stuck(Some(ins), msg))),
        }
    }

    fn write_end(&mut self) -> Result<Step, String> {
        let SpineMode::Write { c, dest, built } = std::mem::replace(&mut self.mode, SpineMode::Normal) else {
            unreachable!()
        };
        if built.iter().any(|&b| self.store.occurs(dest, b)) {
            self.note(|| "occurs check failed".into());
            return Ok(self.backtrack()?.unwrap_or(Step::Continue));
        }
        let mut trail = std::mem::take(&mut self.trail);
        self.store.bind(dest, Cell::Str { c, args: built }, &mut trail);
        self.trail = trail;
        self.touched.push(dest);
        if self.log.is_some() {
            let s = format!("H[l{dest} := {}]", self.show_cell(self.store.cell(dest)));
            self.note(|| s);
        }
        Ok(Step::Continue)
    }

    fn unify_or_bt(&mut self, a: Loc, b: Loc) -> Result<Option<Step>, String> {
        let mut trail = std::mem::take(&mut self.trail);
        let before = self.store.binds.len();
        let ok = self.store.unify(a, b, &mut trail);
        self.trail = trail;
        for i in before..self.store.binds.len() {
            let l = self.store.binds[i];
            self.touched.push(l);
            if self.log.is_some() {
                let s = format!("H[l{l} := {}]", self.show_cell(self.store.cell(l)));
                self.note(|| s);
            }
        }
        if ok {
            Ok(None)
        } else {
            self.note(|| "unification failed".into());
            Ok(Some(self.backtrack()?.unwrap_or(Step::Continue)))
        }
    }

    fn exec(&mut self, ri: RI) -> Result<(&'static str, Step), String> {
        let cont = Step::Continue;
        // spinal instructions are interpreted by the current mode
        match (&mut self.mode, &ri) {
            (SpineMode::Read { .. }, RI::UnifyVar { r, x, .. }) => {
                let SpineMode::Read { args, next } = &mut self.mode else { unreachable!() };
                let l = args[*next];
                *next += 1;
                self.spine_tick();
                if let (Some(x), Some(ck)) = (x, &self.checked) {
                    if ck.proofs {
                        self.checked.as_mut().expect("checked").rho.insert(x.clone(), cell_ref(l));
                    }
                }
                self.set_reg(*r, Word::Heap(l));
                return Ok(("UnifyVar-R", cont));
            }
            (SpineMode::Read { .. }, RI::UnifyVal { r, bind }) => {
                let SpineMode::Read { args, next } = &mut self.mode else { unreachable!() };
                let l = args[*next];
                *next += 1;
                self.spine_tick();
                let l2 = self.term_reg(*r)?;
                self.bind_unify_val(bind, l2);
                return Ok(match self.unify_or_bt(l, l2)? {
                    None => ("UnifyVal-R", cont),
                    Some(s) => ("UnifyVal-BT", s),
                });
            }
            (SpineMode::Write { .. }, RI::UnifyVar { r, ty, x }) => {
                self.spine_tick();
                let l = self.alloc_free(*ty, x.as_deref());
                if let SpineMode::Write { built, .. } = &mut self.mode {
                    built.push(l);
                }
                self.set_reg(*r, Word::Heap(l));
                return Ok(("UnifyVar-W", cont));
            }
            (SpineMode::Write { .. }, RI::UnifyVal { r, bind }) => {
                self.spine_tick();
                let l = self.term_reg(*r)?;
                self.bind_unify_val(bind, l);
                if let SpineMode::Write { built, .. } = &mut self.mode {
                    built.push(l);
                }
                return Ok(("UnifyVal-W", cont));
            }
            (SpineMode::TWrite { .. }, RI::SetVal(r)) => {
                let w = self.get_reg(*r)?;
                if let SpineMode::TWrite { built, .. } = &mut self.mode {
                    built.push(w);
                }
                self.spine_tick();
                return Ok(("SetVal", cont));
            }
            (SpineMode::Normal, _) => {}
            _ => return Err(format!("`{}` cannot run in the current spine mode", self.mode_name())),
        }
        Ok(match ri {
            RI::PutVar { r, ty, x } => {
                let l = self.alloc_free(ty, x.as_deref());
                self.set_reg(r, Word::Heap(l));
                ("PutVar", cont)
            }
            RI::GetVal { r1, r2 } => {
                let a = self.term_reg(r1)?;
                let b = self.term_reg(r2)?;
                match self.unify_or_bt(a, b)? {
                    None => ("GetVal", cont),
                    Some(s) => ("GetVal-BT", s),
                }
            }
            RI::PutStr { c, r } => {
                let ty = self.ctors[c as usize].res;
                let l = self.alloc_free(ty, None);
                self.set_reg(r, Word::Heap(l));
                self.start_spine(c);
                self.mode = SpineMode::Write { c, dest: l, built: Vec::new() };
                ("PutStr", cont)
            }
            RI::GetStr { c, r } => {
                let l = self.term_reg(r)?;
                let d = self.store.deref(l);
                match self.store.cell(d).clone() {
                    Cell::Free { .. } => {
                        self.start_spine(c);
                        self.mode = SpineMode::Write { c, dest: d, built: Vec::new() };
                        ("GetStr-W", cont)
                    }
                    Cell::Str { c: c2, args } if c2 == c => {
                        self.start_spine(c);
                        self.mode = SpineMode::Read { args, next: 0 };
                        ("GetStr-R", cont)
                    }
                    Cell::Str { .. } => ("GetStr-BT", self.backtrack()?.unwrap_or(Step::Continue)),
                    other => return Err(format!("get_str on {}", self.show_cell(&other))),
                }
            }
            RI::Mov { rd, op } => {
                let w = self.eval(&op)?;
                self.set_reg(rd, w);
                ("Mov", cont)
            }
            RI::Jmp(op) => {
                let w = self.eval(&op)?;
                let (block, env, args) = self.resolve_cont(&w)?;
                let rule = if let Some(env) = env {
                    self.set_reg(self.env_reg, env);
                    "Jmp-H"
                } else {
                    "Jmp-C"
                };
                let name = self.blocks[block].label.clone();
                self.note(|| format!("I <- {name}"));
                self.enter(block, args)?;
                (rule, cont)
            }
            RI::Close { rd, re, op } => {
                let env = self.get_reg(re)?;
                let (label, args) = self.label_app(&op)?;
                let l = self.alloc(Cell::Closure { env, label, args });
                self.stats.closures += 1;
                self.set_reg(rd, Word::Heap(l));
                ("Close", cont)
            }
            RI::PushBt { re, op } => {
                let env = self.get_reg(re)?;
                let (label, args) = self.label_app(&op)?;
                let name = self.blocks[label].label.clone();
                self.trail.0.push(Frame {
                    bindings: Vec::new(),
                    env,
                    label,
                    args,
                });
                self.note(|| format!("T <- push({name})"));
                ("PushBT", cont)
            }
            RI::PutTuple { rd, n } => {
                if let Some(ck) = &mut self.checked {
                    ck.remaining_spine = n;
                }
                self.mode = SpineMode::TWrite { rd, n, built: Vec::new() };
                ("PutTuple", cont)
            }
            RI::Proj { rd, rs, i } => {
                let l = self.heap_reg(rs)?;
                let w = match self.store.cell(l) {
                    Cell::Tuple(ws) if i >= 1 && i <= ws.len() => ws[i - 1].clone(),
                    c => return Err(format!("proj {i} of {}", self.show_cell(c))),
                };
                self.set_reg(rd, w);
                ("Proj", cont)
            }
            RI::Succeed(ann) => {
                let out = self.succeed(ann.as_ref())?;
                ("Succeed", Step::Done(out))
            }
            RI::UnifyVar { .. } | RI::UnifyVal { .. } | RI::SetVal(_) => {
                return Err("spinal instruction outside a spine".into())
            }
        })
    }

    fn mode_name(&self) -> &'static str {
        match self.mode {
            SpineMode::Normal => "normal",
            SpineMode::Read { .. } => "read",
            SpineMode::Write { .. } => "write",
            SpineMode::TWrite { .. } => "twrite",
        }
    }

    fn bind_unify_val(&mut self, bind: &Option<String>, l: Loc) {
        if let (Some(x), Some(ck)) = (bind, &self.checked) {
            if ck.proofs {
                self.checked.as_mut().expect("checked").rho.insert(x.clone(), cell_ref(l));
            }
        }
    }

    fn start_spine(&mut self, c: u32) {
        let n = self.ctors[c as usize].args.len();
        if let Some(ck) = &mut self.checked {
            ck.remaining_spine = n;
        }
    }

    fn spine_tick(&mut self) {
        if let Some(ck) = &mut self.checked {
            ck.remaining_spine = ck.remaining_spine.saturating_sub(1);
        }
    }

    fn label_app(&mut self, op: &ROp) -> Result<(usize, Vec<Term>), String> {
        let mut args = Vec::new();
        let mut o = op;
        loop {
            match o {
                ROp::App(f, m) => {
                    args.push(m.clone());
                    o = f;
                }
                ROp::Label(l) => {
                    args.reverse();
                    let proofs = self.checked.as_ref().is_some_and(|c| c.proofs);
                    let args = if proofs { args.iter().map(|m| self.rho(m)).collect() } else { Vec::new() };
                    return Ok((*l, args));
                }
                _ => return Err("continuation operand must be a code label applied to LF terms".into()),
            }
        }
    }

    fn render_answers(&self) -> Result<Vec<(String, String)>, String> {
        if self.prog.answers.is_empty() {
            return Ok(Vec::new());
        }
        let env = self.get_reg(self.env_reg)?;
        let Word::Heap(l) = env else {
            return Err("answer environment is not a tuple".into());
        };
        let Cell::Tuple(ws) = self.store.cell(l) else {
            return Err("answer environment is not a tuple".into());
        };
        if ws.len() != self.prog.answers.len() {
            return Err(format!(
                "answer tuple has {} element(s), expected {}",
                ws.len(),
                self.prog.answers.len()
            ));
        }
        let mut fresh: HashMap<Loc, usize> = HashMap::new();
        let mut out = Vec::new();
        for (x, w) in self.prog.answers.iter().zip(ws) {
            let Word::Heap(l) = w else {
                return Err(format!("answer `{x}` is not a heap term"));
            };
            let mut s = String::new();
            self.render(*l, &mut fresh, &mut s);
            out.push((x.clone(), s));
        }
        Ok(out)
    }

    fn render(&self, l: Loc, fresh: &mut HashMap<Loc, usize>, out: &mut String) {
        let l = self.store.deref(l);
        match self.store.cell(l) {
            Cell::Str { c, args } => {
                out.push_str(self.store.ctor_name(*c));
                if !args.is_empty() {
                    out.push('(');
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        self.render(*a, fresh, out);
                    }
                    out.push(')');
                }
            }
            _ => {
                let n = fresh.len();
                let k = *fresh.entry(l).or_insert(n);
                out.push_str(&format!("_G{k}"));
            }
        }
    }

    fn succeed(&mut self, ann: Option<&(Term, Family)>) -> Result<Outcome, String> {
        let answers = self.render_answers()?;
        let proof = match (&self.checked, ann) {
            (Some(ck), Some((m, a))) if ck.proofs => {
                let m = self.resolve(&ck.rho.apply(m));
                let a = self.resolve_family(&ck.rho.apply_family(a));
                let mut delta = Context::new();
                for (name, &l) in &ck.mu {
                    let ty = ck.cell_ty[l].expect("typed");
                    delta.push(name.clone(), Family::atom(self.store.type_name(ty)));
                }
                let found = check_term(&self.prog.sigma, &delta, &m)
                    .map_err(|e| format!("soundness: proof `{m}` does not check: {e}"))?;
                if !alpha_eq(&found, &a) {
                    return Err(format!("soundness: proof `{m}` proves `{found}`, not `{a}`"));
                }
                Some((m, a))
            }
            _ => None,
        };
        Ok(Outcome::Success { answers, proof })
    }

    // ---- checked mode ----

    fn read_lf(&self, l: Loc) -> Term {
        let ck = self.checked.as_ref().expect("checked");
        self.store
            .read_term_with(l, &|l| ck.names.get(l).cloned().flatten().unwrap_or_else(|| format!("_{l}")))
    }

    /// Replaces runtime variable names by the current heap contents.
    fn resolve(&self, m: &Term) -> Term {
        let ck = self.checked.as_ref().expect("checked");
        let mut fv = std::collections::BTreeSet::new();
        m.free_vars(&mut fv);
        let s = Subst::from_pairs(
            fv.into_iter()
                .filter_map(|x| cell_of(ck, &x).map(|l| (x, self.read_lf(l)))),
        );
        s.apply(m)
    }

    fn resolve_family(&self, a: &Family) -> Family {
        let ck = self.checked.as_ref().expect("checked");
        let mut fv = std::collections::BTreeSet::new();
        a.free_vars(&mut fv);
        let s = Subst::from_pairs(
            fv.into_iter()
                .filter_map(|x| cell_of(ck, &x).map(|l| (x, self.read_lf(l)))),
        );
        s.apply_family(a)
    }

    fn term_cell_ty(&self, l: Loc) -> Option<u32> {
        let d = self.store.deref(l);
        match self.store.cell(d) {
            Cell::Free { ty } => Some(*ty),
            Cell::Str { c, .. } => Some(self.ctors[*c as usize].res),
            _ => None,
        }
    }

    /// Registers conform to the precondition of the block being entered.
    fn check_entry(&self) -> Result<(), String> {
        let b = &self.blocks[self.block];
        for (r, t) in &b.pre {
            let w = self.regs[*r]
                .as_ref()
                .ok_or_else(|| format!("entering `{}`: register `{}` unset", b.label, self.reg_names[*r]))?;
            self.conform(w, t)
                .map_err(|m| format!("entering `{}`: register `{}`: {m}", b.label, self.reg_names[*r]))?;
        }
        Ok(())
    }

    fn conform(&self, w: &Word, t: &MType) -> Result<(), String> {
        match t {
            MType::Sing(_, a) | MType::Atomic(a) => {
                let Word::Heap(l) = w else {
                    return Err(format!("expected a `{a}` term, found {}", self.show_word(w)));
                };
                let ty = self.term_cell_ty(*l).ok_or_else(|| format!("expected a `{a}` term"))?;
                if self.store.type_name(ty) != a {
                    return Err(format!("expected a `{a}` term, found a `{}`", self.store.type_name(ty)));
                }
                if let (MType::Sing(m, _), Some(ck)) = (t, &self.checked) {
                    if ck.proofs {
                        let want = self.resolve(&ck.rho.apply(m));
                        let have = self.read_lf(*l);
                        if want != have {
                            return Err(format!("singleton mismatch: heap holds `{have}`, type says `{want}`"));
                        }
                    }
                }
                Ok(())
            }
            MType::Tuple(ts) => {
                let Word::Heap(l) = w else {
                    return Err("expected a tuple".into());
                };
                match self.store.cell(*l) {
                    Cell::Tuple(ws) if ws.len() == ts.len() => {
                        // element singletons live under a different static
                        // environment, so only shapes are compared here
                        for (w, t) in ws.iter().zip(ts) {
                            self.conform_shape(w, t)?;
                        }
                        Ok(())
                    }
                    c => Err(format!("expected a {}-tuple, found {}", ts.len(), self.show_cell(c))),
                }
            }
            MType::Cont(params, _) => {
                let pending = self.cont_arity(w)?;
                if pending != params.len() {
                    return Err(format!(
                        "continuation expects {pending} more LF argument(s), type says {}",
                        params.len()
                    ));
                }
                Ok(())
            }
        }
    }

    fn conform_shape(&self, w: &Word, t: &MType) -> Result<(), String> {
        match t {
            MType::Sing(_, a) => self.conform(w, &MType::Atomic(a.clone())),
            MType::Tuple(ts) => match w {
                Word::Heap(l) => match self.store.cell(*l) {
                    Cell::Tuple(ws) if ws.len() == ts.len() => {
                        ws.iter().zip(ts).try_for_each(|(w, t)| self.conform_shape(w, t))
                    }
                    _ => Err("expected a tuple".into()),
                },
                _ => Err("expected a tuple".into()),
            },
            _ => self.conform(w, t),
        }
    }

    /// Number of LF arguments a continuation word still expects. Without
    /// proof tracking only the shape is checked.
    fn cont_arity(&self, w: &Word) -> Result<usize, String> {
        let proofs = self.checked.as_ref().is_some_and(|c| c.proofs);
        match w {
            Word::Code(i) => Ok(if proofs { self.blocks[*i].params.len() } else { 0 }),
            Word::Heap(l) => match self.store.cell(*l) {
                Cell::Closure { label, args, .. } => {
                    if proofs {
                        self.blocks[*label]
                            .params
                            .len()
                            .checked_sub(args.len())
                            .ok_or_else(|| "closure over too many LF arguments".to_string())
                    } else {
                        Ok(0)
                    }
                }
                c => Err(format!("expected a continuation, found {}", self.show_cell(c))),
            },
            Word::App(f, _) => self
                .cont_arity(f)?
                .checked_sub(1)
                .ok_or_else(|| "continuation applied to too many LF arguments".into()),
            Word::Lam(_, b) => Ok(self.cont_arity(b)? + 1),
        }
    }

    fn after_step(&mut self) -> Result<(), String> {
        let touched = std::mem::take(&mut self.touched);
        let binds: Vec<Loc> = self.store.binds.drain(..).collect();
        let ck = self.checked.as_mut().expect("checked");
        for &l in &binds {
            if let Some(Some(name)) = ck.names.get(l) {
                ck.mu.remove(name);
            }
        }
        // every binding recorded in the newest frame is distinct and non-free
        if let Some(f) = self.trail.0.last() {
            let start = f.bindings.len().saturating_sub(binds.len());
            for &(l, _) in &f.bindings[start..] {
                if !ck.trailed.insert(l) {
                    return Err(format!("cell l{l} trailed twice"));
                }
            }
        }
        let ck = self.checked.as_ref().expect("checked");
        for &l in &touched {
            // tuples and closures only point at older cells and never change
            let term_cell = !matches!(self.store.cell(l), Cell::Tuple(_) | Cell::Closure { .. });
            if term_cell && self.store.cycle_through(l) {
                return Err(format!("heap cycle through l{l}"));
            }
            match self.store.cell(l) {
                Cell::Free { ty } => {
                    if ck.trailed.contains(&l) {
                        return Err(format!("trailed cell l{l} is free"));
                    }
                    let name = ck.names.get(l).cloned().flatten().ok_or_else(|| format!("free cell l{l} has no LF variable"))?;
                    if ck.mu.get(&name) != Some(&l) {
                        return Err(format!("free cell l{l} is missing from the variable mapping"));
                    }
                    if ck.cell_ty[l] != Some(*ty) {
                        return Err(format!("free cell l{l} changed type"));
                    }
                }
                Cell::Bound(m) => {
                    if let Some(Some(name)) = ck.names.get(l) {
                        if ck.mu.contains_key(name) {
                            return Err(format!("bound cell l{l} still mapped as free"));
                        }
                    }
                    if self.term_cell_ty(*m) != ck.cell_ty.get(l).copied().flatten() {
                        return Err(format!("cell l{l} bound across types"));
                    }
                }
                Cell::Str { c, args } => {
                    let info = &self.ctors[*c as usize];
                    if args.len() != info.args.len() {
                        return Err(format!("structure at l{l} has the wrong arity"));
                    }
                    for (a, want) in args.iter().zip(&info.args) {
                        if self.term_cell_ty(*a) != Some(*want) {
                            return Err(format!("structure at l{l} has an ill-typed argument"));
                        }
                    }
                    if let Some(Some(name)) = ck.names.get(l) {
                        if ck.mu.contains_key(name) {
                            return Err(format!("structure cell l{l} still mapped as free"));
                        }
                    }
                }
                Cell::Tuple(_) | Cell::Closure { .. } => {}
            }
        }
        match &self.mode {
            SpineMode::Normal => {}
            SpineMode::Read { args, next } => {
                if args.len() - next != ck.remaining_spine {
                    return Err("read spine length disagrees with the remaining spine".into());
                }
            }
            SpineMode::Write { c, dest, built } => {
                let info = &self.ctors[*c as usize];
                if built.len() > info.args.len() {
                    return Err("write spine built too many arguments".into());
                }
                if built.len() + ck.remaining_spine != info.args.len() {
                    return Err("write spine length disagrees with the remaining spine".into());
                }
                if !matches!(self.store.cell(*dest), Cell::Free { .. }) {
                    return Err("write spine destination is no longer free".into());
                }
                for (b, want) in built.iter().zip(&info.args) {
                    if self.term_cell_ty(*b) != Some(*want) {
                        return Err("write spine argument has the wrong type".into());
                    }
                }
            }
            SpineMode::TWrite { n, built, .. } => {
                if built.len() + ck.remaining_spine != *n {
                    return Err("tuple spine length disagrees with the remaining spine".into());
                }
            }
        }
        Ok(())
    }

    /// Whole-state check: acyclic heap, μ is a bijection onto the free
    /// cells, and every trailed cell is bound.
    pub fn full_check(&self) -> Result<(), String> {
        if let Some(l) = self.store.find_cycle() {
            return Err(format!("heap cycle through l{l}"));
        }
        let Some(ck) = &self.checked else { return Ok(()) };
        let mut free = 0usize;
        for l in 0..self.store.len() {
            if let Cell::Free { .. } = self.store.cell(l) {
                free += 1;
                let Some(Some(name)) = ck.names.get(l) else {
                    return Err(format!("free cell l{l} has no LF variable"));
                };
                if ck.mu.get(name) != Some(&l) {
                    return Err(format!("free cell l{l} is missing from the variable mapping"));
                }
            }
        }
        if free != ck.mu.len() {
            return Err("variable mapping names cells that are not free".into());
        }
        let mut seen = HashSet::new();
        for f in &self.trail.0 {
            for (l, _) in &f.bindings {
                if !seen.insert(*l) {
                    return Err(format!("cell l{l} trailed twice"));
                }
                if matches!(self.store.cell(*l), Cell::Free { .. }) {
                    return Err(format!("trailed cell l{l} is free"));
                }
            }
        }
        Ok(())
    }
}

/// An LF variable standing for whatever heap cell `l` holds when it is
/// eventually read back.
fn cell_ref(l: Loc) -> Term {
    Term::var(format!("@{l}"))
}

fn cell_of(ck: &Checked, x: &str) -> Option<Loc> {
    match x.strip_prefix('@') {
        Some(n) => n.parse().ok(),
        None => ck.by_name.get(x).copied(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub outcome: Outcome,
    pub stats: Stats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub fuel: u64,
    pub checked: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fuel: 10_000_000,
            checked: false,
        }
    }
}

pub fn run(p: &Program, cfg: RunConfig) -> Result<RunResult, VmError> {
    run_traced(p, cfg, None)
}

pub fn run_traced(
    p: &Program,
    cfg: RunConfig,
    trace: Option<&mut dyn FnMut(&TraceLine)>,
) -> Result<RunResult, VmError> {
    let mut m = Machine::new(p, cfg.checked)?;
    let outcome = m.run(cfg.fuel, trace)?;
    Ok(RunResult {
        outcome,
        stats: m.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat_store() -> (Store, u32) {
        let mut s = Store::new();
        let nat = s.type_id("nat");
        (s, nat)
    }

    #[test]
    fn deref_chains() {
        let (mut s, nat) = nat_store();
        let x = s.alloc_free(nat);
        assert_eq!(s.deref(x), x);
        let z = s.alloc_str("zero", vec![]);
        let b1 = s.alloc(Cell::Bound(z));
        let b0 = s.alloc(Cell::Bound(b1));
        assert_eq!(s.deref(b0), z);
        let mut t = Trail::default();
        let y = s.alloc_free(nat);
        let sy = s.alloc_str("succ", vec![y]);
        assert!(s.unify(x, sy, &mut t));
        assert_eq!(s.deref(x), sy);
    }

    #[test]
    fn occurs_examples() {
        let (mut s, nat) = nat_store();
        let x = s.alloc_free(nat);
        assert!(s.occurs(x, x));
        let z = s.alloc_str("zero", vec![]);
        assert!(!s.occurs(x, z));
        let b = s.alloc(Cell::Bound(x));
        let inner = s.alloc_str("succ", vec![b]);
        let outer = s.alloc_str("c", vec![z, inner]);
        let top = s.alloc(Cell::Bound(outer));
        assert!(s.occurs(x, top));
        assert!(!s.occurs(z, x));
    }

    #[test]
    fn unify_examples() {
        let (mut s, nat) = nat_store();
        let mut t = Trail::default();
        let x = s.alloc_free(nat);
        assert!(s.unify(x, x, &mut t));
        assert_eq!(s.cell(x), &Cell::Free { ty: nat });
        let sx = s.alloc_str("succ", vec![x]);
        let bx = s.alloc(Cell::Bound(sx));
        assert!(!s.unify(x, bx, &mut t));

        let a = s.alloc_free(nat);
        let z = s.alloc_str("zero", vec![]);
        let sa = s.alloc_str("succ", vec![a]);
        let sb = s.alloc_str("succ", vec![z]);
        t.0.push(Frame {
            bindings: vec![],
            env: Word::Code(0),
            label: 0,
            args: vec![],
        });
        assert!(s.unify(sa, sb, &mut t));
        assert_eq!(s.deref(a), z);
        assert_eq!(t.top_len(), 1);
    }

    fn runnable() -> Program {
        let src = crate::twam::tests::PLUS_ZERO
            .replace("query plus-zero.", "query main.")
            .replace("answers .", "answers X.")
            + "
main |-> code[. {}] (
  put_var r6, X:nat;
  put_tuple r7, 1;
    set_val r6;
  close ret, r7, (init-cont X);
  put_str zero/0, r2;
  put_str zero/0, r8;
  put_str succ/1, r3;
    unify_val r8;
  mov r1, r6;
  jmp (plus-zero X zero (succ zero));
)

init-cont |-> code[{X:nat} {D:plus X zero (succ zero)} . {env: *(S(X : nat))}] (
  succeed [D : plus X zero (succ zero)];
)
";
        crate::twam::parse_ir(&src).unwrap()
    }

    #[test]
    fn runs_with_one_backtrack() {
        let p = runnable();
        crate::checker::check_program(&p).unwrap();
        for checked in [false, true] {
            let r = run(&p, RunConfig { checked, ..RunConfig::default() }).unwrap();
            let Outcome::Success { answers, proof } = &r.outcome else { panic!("{:?}", r.outcome) };
            assert_eq!(answers, &vec![("X".to_string(), "succ(zero)".to_string())]);
            assert_eq!(r.stats.backtracks, 1);
            assert_eq!(proof.is_some(), checked);
            if let Some((m, a)) = proof {
                assert_eq!(m.to_string(), "plus-2 zero zero zero (plus-1 zero)");
                assert_eq!(a.to_string(), "plus (succ zero) zero (succ zero)");
            }
        }
        let s = crate::twam::erase(&p);
        let a = run(&s, RunConfig::default()).unwrap();
        let b = run(&s, RunConfig { checked: true, ..RunConfig::default() }).unwrap();
        let c = run(&p, RunConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn trace_and_fuel() {
        let p = runnable();
        let mut lines = Vec::new();
        let r = run_traced(&p, RunConfig::default(), Some(&mut |l: &TraceLine| lines.push(l.clone()))).unwrap();
        assert_eq!(lines.len() as u64, r.stats.steps);
        assert_eq!(lines[0].rule, "PutVar");
        assert!(lines.iter().any(|l| l.rule == "GetVal-BT" && l.delta.contains("T <- pop")));
        assert_eq!(lines.last().unwrap().rule, "Succeed");
        let short = run(&p, RunConfig { fuel: 5, checked: false }).unwrap();
        assert_eq!(short.outcome, Outcome::OutOfFuel);
        assert_eq!(short.stats.steps, 5);
    }

    #[test]
    fn empty_trail_fails() {
        let src = crate::twam::tests::PLUS_ZERO.replace("query plus-zero.", "query main.")
            + "
main |-> code[. {}] (
  put_str zero/0, r1;
  put_str succ/1, r2;
    unify_val r1;
  get_val r1, r2;
  succeed;
)
";
        let p = crate::twam::erase(&crate::twam::parse_ir(&src.replace("twam\n", "swam\n")).unwrap());
        let r = run(&p, RunConfig { checked: true, ..RunConfig::default() }).unwrap();
        assert_eq!(r.outcome, Outcome::Failure);
        assert_eq!(r.stats.backtracks, 0);
    }

    #[test]
    fn stuck_on_unset_register() {
        let src = crate::twam::tests::PLUS_ZERO.replace("query plus-zero.", "query main.")
            + "
main |-> code[. {}] (
  get_str zero/0, r9;
  succeed;
)
";
        let p = crate::twam::erase(&crate::twam::parse_ir(&src).unwrap());
        let e = run(&p, RunConfig::default()).unwrap_err();
        assert!(matches!(e, VmError::Stuck { index: 0, .. }), "{e}");
    }

    #[test]
    fn cycle_detection() {
        let (mut s, nat) = nat_store();
        let x = s.alloc_free(nat);
        let sx = s.alloc_str("succ", vec![x]);
        assert_eq!(s.find_cycle(), None);
        s.set(x, Cell::Bound(sx));
        assert!(s.find_cycle().is_some());
        assert!(s.cycle_through(x));
    }
}
