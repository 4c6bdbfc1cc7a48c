//! Small conic modeling layer over the Clarabel interior-point solver.
//!
//! Problems are stated over real scalar variables, some of which are
//! grouped into complex Hermitian blocks. A Hermitian block of order `n`
//! owns `n^2` real parameters: the `n` diagonal entries followed by the real
//! and imaginary parts of each strictly-upper entry. Its PSD constraint is
//! handed to the solver as the real symmetric embedding
//!
//! ```text
//! [ Re Z  -Im Z ]
//! [ Im Z   Re Z ]  >= 0     (order 2n)
//! ```
//!
//! which is PSD exactly when `Z` is. Because the embedding is built directly
//! from the Hermitian parameters, its block symmetries hold by construction.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

use crate::{CMatrix, C64};

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// Affine real expression `sum_i a_i x_i + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize) -> Self {
        Self {
            terms: vec![(idx, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
    }

    /// Merge duplicate variables and drop zeros.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, a) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += a,
                _ => out.push((i, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self {
            terms: out,
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, a)| (i, a * s)).collect(),
            constant: self.constant * s,
        }
    }
}

impl AddAssign<&LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: &LinExpr) {
        self.terms.extend_from_slice(&rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += &rhs;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self += &rhs.scaled(-1.0);
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(rhs)
    }
}

/// Complex affine expression, stored as its real and imaginary parts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl ComplexExpr {
    /// `a * self` for a complex scalar `a`.
    pub fn times(&self, a: C64) -> ComplexExpr {
        ComplexExpr {
            re: self.re.scaled(a.re) - self.im.scaled(a.im),
            im: self.re.scaled(a.im) + self.im.scaled(a.re),
        }
    }

    pub fn conj(&self) -> ComplexExpr {
        ComplexExpr {
            re: self.re.clone(),
            im: self.im.scaled(-1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        C64::new(self.re.eval(x), self.im.eval(x))
    }
}

impl AddAssign<&ComplexExpr> for ComplexExpr {
    fn add_assign(&mut self, rhs: &ComplexExpr) {
        self.re += &rhs.re;
        self.im += &rhs.im;
    }
}

/// Handle to a complex Hermitian matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianBlock {
    dim: usize,
    offset: usize,
}

impl HermitianBlock {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn num_params(&self) -> usize {
        self.dim * self.dim
    }

    fn pair_index(&self, a: usize, b: usize) -> usize {
        // a < b, row-major over strictly-upper pairs
        debug_assert!(a < b);
        a * (2 * self.dim - a - 1) / 2 + (b - a - 1)
    }

    fn re_var(&self, a: usize, b: usize) -> usize {
        self.offset + self.dim + self.pair_index(a, b)
    }

    fn im_var(&self, a: usize, b: usize) -> usize {
        let pairs = self.dim * (self.dim - 1) / 2;
        self.offset + self.dim + pairs + self.pair_index(a, b)
    }

    /// Entry `Z[a][b]`.
    pub fn entry(&self, a: usize, b: usize) -> ComplexExpr {
        use std::cmp::Ordering::*;
        match a.cmp(&b) {
            Equal => ComplexExpr {
                re: LinExpr::var(self.offset + a),
                im: LinExpr::zero(),
            },
            Less => ComplexExpr {
                re: LinExpr::var(self.re_var(a, b)),
                im: LinExpr::var(self.im_var(a, b)),
            },
            Greater => ComplexExpr {
                re: LinExpr::var(self.re_var(b, a)),
                im: LinExpr::var(self.im_var(b, a)).scaled(-1.0),
            },
        }
    }

    pub fn trace(&self) -> LinExpr {
        LinExpr {
            terms: (0..self.dim).map(|a| (self.offset + a, 1.0)).collect(),
            constant: 0.0,
        }
    }

    /// `u^H Z v` as a complex affine expression in the block parameters.
    pub fn quad_form(&self, u: &[C64], v: &[C64]) -> ComplexExpr {
        assert_eq!(u.len(), self.dim);
        assert_eq!(v.len(), self.dim);
        let mut re = LinExpr::zero();
        let mut im = LinExpr::zero();
        for a in 0..self.dim {
            let c = u[a].conj() * v[a];
            re.add_term(self.offset + a, c.re);
            im.add_term(self.offset + a, c.im);
        }
        for a in 0..self.dim {
            for b in a + 1..self.dim {
                let fwd = u[a].conj() * v[b];
                let bwd = u[b].conj() * v[a];
                let alpha = fwd + bwd;
                let beta = C64::new(0.0, 1.0) * (fwd - bwd);
                let (p, q) = (self.re_var(a, b), self.im_var(a, b));
                re.add_term(p, alpha.re);
                re.add_term(q, beta.re);
                im.add_term(p, alpha.im);
                im.add_term(q, beta.im);
            }
        }
        ComplexExpr { re, im }
    }

    /// Real part of `u^H Z u`.
    pub fn hermitian_form(&self, u: &[C64]) -> LinExpr {
        self.quad_form(u, u).re
    }

    /// `Z v`, one expression per row.
    pub fn mat_vec(&self, v: &[C64]) -> Vec<ComplexExpr> {
        (0..self.dim)
            .map(|a| {
                let mut e = ComplexExpr::default();
                for (b, &vb) in v.iter().enumerate() {
                    e += &self.entry(a, b).times(vb);
                }
                e
            })
            .collect()
    }

    /// Reassemble the Hermitian matrix from a solution vector.
    pub fn value(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |a, b| self.entry(a, b).eval(x))
    }

    /// Upper triangle of the real embedding, column-major, in the order the
    /// solver's PSD triangle cone expects. Each entry is `(sign, var)` or zero.
    fn embedding_entries(&self) -> Vec<Option<(f64, usize)>> {
        let n = self.dim;
        let mut out = Vec::with_capacity(n * (2 * n + 1));
        for j in 0..2 * n {
            for i in 0..=j {
                let (bi, ai) = (i / n, i % n);
                let (bj, aj) = (j / n, j % n);
                let e = if bi == bj {
                    // Re Z block
                    use std::cmp::Ordering::*;
                    match ai.cmp(&aj) {
                        Equal => Some((1.0, self.offset + ai)),
                        Less => Some((1.0, self.re_var(ai, aj))),
                        Greater => Some((1.0, self.re_var(aj, ai))),
                    }
                } else {
                    // i < n <= j: top-right block is -Im Z
                    use std::cmp::Ordering::*;
                    match ai.cmp(&aj) {
                        Equal => None,
                        Less => Some((-1.0, self.im_var(ai, aj))),
                        Greater => Some((1.0, self.im_var(aj, ai))),
                    }
                };
                out.push(e);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Every expression equals zero.
    Zero,
    /// Every expression is non-negative.
    Nonneg,
    /// `(t, u)` with `t >= ||u||`, first expression is `t`.
    SecondOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub kind: ConeKind,
    pub exprs: Vec<LinExpr>,
    pub label: String,
}

/// A linear-objective conic program. Minimizes `objective`.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    num_vars: usize,
    blocks: Vec<HermitianBlock>,
    pub objective: LinExpr,
    constraints: Vec<ConeConstraint>,
}

/// Shape summary used for diagnostics and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDims {
    pub num_vars: usize,
    /// Complex order of each Hermitian PSD block.
    pub psd_orders: Vec<usize>,
    pub zero_rows: usize,
    pub nonneg_rows: usize,
    pub soc_sizes: Vec<usize>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scalar(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_scalars(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.add_scalar()).collect()
    }

    /// New Hermitian block constrained to be PSD.
    pub fn add_psd_block(&mut self, dim: usize) -> HermitianBlock {
        assert!(dim > 0, "block order must be positive");
        let block = HermitianBlock {
            dim,
            offset: self.num_vars,
        };
        self.num_vars += dim * dim;
        self.blocks.push(block);
        block
    }

    pub fn blocks(&self) -> &[HermitianBlock] {
        &self.blocks
    }

    pub fn constraints(&self) -> &[ConeConstraint] {
        &self.constraints
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add_constraint(
        &mut self,
        kind: ConeKind,
        exprs: Vec<LinExpr>,
        label: impl Into<String>,
    ) {
        assert!(!exprs.is_empty(), "empty cone constraint");
        self.constraints.push(ConeConstraint {
            kind,
            exprs: exprs.into_iter().map(LinExpr::compact).collect(),
            label: label.into(),
        });
    }

    pub fn add_eq(&mut self, e: LinExpr, label: impl Into<String>) {
        self.add_constraint(ConeKind::Zero, vec![e], label);
    }

    /// `e >= 0`.
    pub fn add_nonneg(&mut self, e: LinExpr, label: impl Into<String>) {
        self.add_constraint(ConeKind::Nonneg, vec![e], label);
    }

    /// `t >= ||u||`.
    pub fn add_soc(&mut self, t: LinExpr, u: Vec<LinExpr>, label: impl Into<String>) {
        let mut exprs = Vec::with_capacity(u.len() + 1);
        exprs.push(t);
        exprs.extend(u);
        self.add_constraint(ConeKind::SecondOrder, exprs, label);
    }

    pub fn dims(&self) -> ProblemDims {
        let mut d = ProblemDims {
            num_vars: self.num_vars,
            psd_orders: self.blocks.iter().map(|b| b.dim).collect(),
            zero_rows: 0,
            nonneg_rows: 0,
            soc_sizes: Vec::new(),
        };
        for c in &self.constraints {
            match c.kind {
                ConeKind::Zero => d.zero_rows += c.exprs.len(),
                ConeKind::Nonneg => d.nonneg_rows += c.exprs.len(),
                ConeKind::SecondOrder => d.soc_sizes.push(c.exprs.len()),
            }
        }
        d
    }

    /// Count constraints whose label starts with `prefix`.
    pub fn count_labeled(&self, prefix: &str) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.label.starts_with(prefix))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Relative duality gap reported by the solver.
    pub gap: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub diagnostics: String,
}

impl ConicSolution {
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

/// Relative gap accepted as near-optimal when the solver stops early.
pub const NEAR_OPTIMAL_GAP: f64 = 1e-5;

pub fn solve(problem: &ConicProblem, eps: f64) -> Result<ConicSolution, ConicError> {
    let n = problem.num_vars;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0usize;

    // rows encode s = b - A x with s in the cone, so expression a^T x + c
    // becomes A-row -a and b-entry c
    let push_expr = |e: &LinExpr,
                     row: &mut usize,
                     triplets: &mut Vec<(usize, usize, f64)>,
                     b: &mut Vec<f64>| {
        for &(i, a) in &e.terms {
            triplets.push((*row, i, -a));
        }
        b.push(e.constant);
        *row += 1;
    };

    for c in &problem.constraints {
        for e in &c.exprs {
            push_expr(e, &mut row, &mut triplets, &mut b);
        }
        cones.push(match c.kind {
            ConeKind::Zero => SupportedConeT::ZeroConeT(c.exprs.len()),
            ConeKind::Nonneg => SupportedConeT::NonnegativeConeT(c.exprs.len()),
            ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(c.exprs.len()),
        });
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    for block in &problem.blocks {
        let order = 2 * block.dim;
        let entries = block.embedding_entries();
        let mut pos = 0usize;
        for j in 0..order {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { sqrt2 };
                if let Some((sign, var)) = entries[pos] {
                    triplets.push((row, var, -sign * scale));
                }
                b.push(0.0);
                row += 1;
                pos += 1;
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(order));
    }

    let a = csc_from_triplets(row, n, triplets);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(i, coef) in &problem.objective.terms {
        q[i] += coef;
    }

    let mut first = None;
    for (attempt, tweak) in FALLBACKS.iter().enumerate() {
        let mut settings = DefaultSettingsBuilder::default()
            .verbose(log::log_enabled!(log::Level::Trace))
            .tol_gap_rel(eps)
            .tol_gap_abs(eps)
            .max_iter(200)
            .direct_solve_method("faer".to_owned())
            .build()
            .map_err(|e| ConicError::Setup(e.to_string()))?;
        tweak(&mut settings);
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| ConicError::Setup(format!("{e:?}")))?;
        solver.solve();
        let out = collect(&solver, problem.objective.constant);
        if out.status != SolveStatus::Error {
            return Ok(out);
        }
        log::debug!("conic attempt {attempt} failed: {}", out.diagnostics);
        first.get_or_insert(out);
    }
    Ok(first.expect("at least one attempt"))
}

type Tweak = fn(&mut DefaultSettings<f64>);

/// Settings variations tried in order when a solve stalls short of the
/// requested accuracy.
const FALLBACKS: [Tweak; 3] = [
    |_| {},
    |s| s.equilibrate_enable = false,
    |s| {
        s.max_step_fraction = 0.95;
        s.static_regularization_constant = 1e-9;
    },
];

fn collect(solver: &DefaultSolver<f64>, offset: f64) -> ConicSolution {
    let info = &solver.info;
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::AlmostSolved
        | SolverStatus::MaxIterations
        | SolverStatus::InsufficientProgress
        | SolverStatus::NumericalError
            if info.gap_rel <= NEAR_OPTIMAL_GAP && info.res_primal <= NEAR_OPTIMAL_GAP =>
        {
            SolveStatus::NearOptimal
        }
        _ => SolveStatus::Error,
    };
    let diagnostics = format!(
        "{:?} after {} iterations: pcost {:.6e}, dcost {:.6e}, gap {:.2e}, pres {:.2e}, dres {:.2e}",
        sol.status, info.iterations, info.cost_primal, info.cost_dual, info.gap_rel, info.res_primal, info.res_dual
    );
    log::debug!("conic solve: {diagnostics}");
    ConicSolution {
        status,
        x: sol.x.clone(),
        objective: sol.obj_val + offset,
        dual_objective: sol.obj_val_dual + offset,
        gap: info.gap_rel,
        iterations: info.iterations,
        solve_time: info.solve_time,
        diagnostics,
    }
}

fn csc_from_triplets(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by_key(|a| (a.1, a.0));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *nzval.last_mut().expect("duplicate follows an entry") += v;
            continue;
        }
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}
