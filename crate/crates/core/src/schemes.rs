//! Implicit, explicit and partially explicit L1 time stepping on the fine
//! space or on a reduced multiscale space.
//!
//! Every scheme solves, in coefficient space,
//!
//! ```text
//! (b0/alpha0) M (x - c) + (1/alpha0) M h + F(x_f) + G(x_g) = 0
//! ```
//!
//! where `c` is the previous level, `h` the lagged history sum, `x_f` takes the
//! first `implicit_dim` coefficients from `x` and the rest from `c`, and `x_g`
//! is `x` or `c` depending on how the reaction is treated.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::caputo::FractionalKernel;
use crate::error::{Error, Result};
use crate::femcore::{
    apply_f, apply_g, assemble_mass, assemble_stiffness, energy_f, energy_g, f_jacobian, g_jacobian,
    CoefficientField, Diffusion, Reaction,
};
use crate::grid::Mesh;
use crate::linalg::{Factorization, SparseOperator, Structure, SystemMatrix};

/// Fine-scale description of the equation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: Mesh,
    pub kappa: CoefficientField,
    pub diffusion: Diffusion,
    pub reaction: Reaction,
    /// Nodal source `g0` over interior nodes.
    pub source: DVector<f64>,
    pub mass: SparseOperator,
    /// Linear kappa-stiffness.
    pub stiffness: SparseOperator,
}

impl Problem {
    pub fn new(
        mesh: Mesh,
        kappa: CoefficientField,
        diffusion: Diffusion,
        reaction: Reaction,
        source: DVector<f64>,
    ) -> Result<Problem> {
        if kappa.len() != mesh.cell_count() {
            return Err(Error::DimensionMismatch(format!(
                "kappa has {} values for {} cells",
                kappa.len(),
                mesh.cell_count()
            )));
        }
        if source.len() != mesh.interior_count() {
            return Err(Error::DimensionMismatch(format!(
                "source has {} values for {} interior nodes",
                source.len(),
                mesh.interior_count()
            )));
        }
        let mass = assemble_mass(&mesh, None)?;
        let stiffness = assemble_stiffness(&mesh, &kappa, Diffusion::Linear, None)?;
        Ok(Problem {
            mesh,
            kappa,
            diffusion,
            reaction,
            source,
            mass,
            stiffness,
        })
    }

    pub fn f_vec(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self.diffusion {
            Diffusion::Linear => Ok(self.stiffness.mul_vec(u)),
            law => apply_f(&self.mesh, &self.kappa, law, u),
        }
    }

    /// `A(w)` with `F(w) = A(w) w`.
    pub fn f_operator(&self, w: &DVector<f64>) -> Result<SparseOperator> {
        match self.diffusion {
            Diffusion::Linear => Ok(self.stiffness.clone()),
            law => assemble_stiffness(&self.mesh, &self.kappa, law, Some(w)),
        }
    }

    pub fn f_jacobian(&self, u: &DVector<f64>) -> Result<SparseOperator> {
        match self.diffusion {
            Diffusion::Linear => Ok(self.stiffness.clone()),
            law => f_jacobian(&self.mesh, &self.kappa, law, u),
        }
    }

    pub fn g_vec(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        apply_g(&self.mesh, self.reaction, u, &self.source)
    }

    pub fn g_jacobian(&self, u: &DVector<f64>) -> Result<SparseOperator> {
        g_jacobian(&self.mesh, self.reaction, u)
    }

    /// `F(u) + G(u)`, with the linear-part `F` for the quadratic law.
    pub fn energy(&self, u: &DVector<f64>) -> Result<f64> {
        let f = if self.diffusion == Diffusion::Off {
            0.0
        } else {
            energy_f(&self.mesh, &self.kappa, u)?
        };
        Ok(f + energy_g(&self.mesh, self.reaction, u, &self.source)?)
    }
}

/// Space the unknown coefficients live in.
#[derive(Debug, Clone)]
pub enum ActiveSpace {
    Fine,
    /// Columns of the basis over interior nodes.
    Reduced(SparseOperator),
}

impl ActiveSpace {
    pub fn dim(&self, problem: &Problem) -> usize {
        match self {
            ActiveSpace::Fine => problem.mesh.interior_count(),
            ActiveSpace::Reduced(r) => r.ncols(),
        }
    }

    pub fn lift(&self, c: &DVector<f64>) -> DVector<f64> {
        match self {
            ActiveSpace::Fine => c.clone(),
            ActiveSpace::Reduced(r) => r.mul_vec(c),
        }
    }

    /// Tests a fine Galerkin vector against the basis.
    pub fn restrict(&self, v: DVector<f64>) -> DVector<f64> {
        match self {
            ActiveSpace::Fine => v,
            ActiveSpace::Reduced(r) => r.tr_mul_vec(&v),
        }
    }

    pub fn project(&self, op: &SparseOperator) -> SystemMatrix {
        match self {
            ActiveSpace::Fine => SystemMatrix::Sparse(op.clone()),
            ActiveSpace::Reduced(r) => SystemMatrix::Dense(op.project(r)),
        }
    }

    /// Mass-orthogonal projection of a fine field onto the space.
    pub fn coefficients_of(&self, problem: &Problem, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ActiveSpace::Fine => Ok(u.clone()),
            ActiveSpace::Reduced(r) => {
                if r.ncols() == 0 {
                    return Ok(DVector::zeros(0));
                }
                let m = self.project(&problem.mass);
                let rhs = self.restrict(problem.mass.mul_vec(u));
                m.factor(Structure::SymmetricPositiveDefinite)?.solve(&rhs)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepping {
    /// `f` at the new level; `g` as requested.
    Implicit { reaction: Treatment },
    /// `f` implicit in the first `implicit_dim` coefficients only, `g` explicit.
    PartiallyExplicit { implicit_dim: usize },
    /// `f` and `g` at the old level.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearMethod {
    Picard,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub method: NonlinearMethod,
    /// Absolute tolerance on the Euclidean residual norm.
    pub tol: f64,
    /// Tolerance relative to the residual of the initial guess.
    pub rel_tol: f64,
    /// Accept once an update changes the iterate by at most this fraction of
    /// its norm; the residual has then reached its rounding floor.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            method: NonlinearMethod::Picard,
            tol: 1e-10,
            rel_tol: 1e-12,
            step_tol: 1e-14,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    pub residual: f64,
}

/// A stalled iteration counts as converged only after this much reduction.
const STAGNATION_REDUCTION: f64 = 1e-6;

/// Fixed-point iteration `x <- update(x)` until the residual is small.
pub fn picard_solve(
    mut residual: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut update: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    x0: DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, Convergence)> {
    iterate(&mut residual, |x, _| update(x), x0, settings)
}

/// Newton iteration; `solve_jacobian(x, r)` returns `J(x)^{-1} r`.
pub fn newton_solve(
    mut residual: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut solve_jacobian: impl FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    x0: DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, Convergence)> {
    iterate(
        &mut residual,
        |x, r| Ok(x - solve_jacobian(x, r)?),
        x0,
        settings,
    )
}

fn iterate(
    residual: &mut impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut next: impl FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    mut x: DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, Convergence)> {
    let mut r = residual(&x)?;
    let r0 = r.norm();
    let threshold = settings.tol.max(settings.rel_tol * r0);
    let mut iterations = 0;
    loop {
        let norm = r.norm();
        if !norm.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: norm });
        }
        if norm <= threshold {
            return Ok((x, Convergence { iterations, residual: norm }));
        }
        if iterations == settings.max_iter {
            return Err(Error::NonConvergence { iterations, residual: norm });
        }
        let x_new = next(&x, &r)?;
        iterations += 1;
        let moved = (&x_new - &x).norm();
        x = x_new;
        r = residual(&x)?;
        let norm = r.norm();
        if moved <= settings.step_tol * x.norm() && norm <= STAGNATION_REDUCTION * r0 {
            return Ok((x, Convergence { iterations, residual: norm }));
        }
    }
}

/// Coefficients and increment history of a run.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub step: usize,
    pub coeffs: DVector<f64>,
    /// `increments[j] = c^{j+1} - c^j`; its length equals `step`.
    pub increments: Vec<DVector<f64>>,
}

/// Outcome of one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iterations: usize,
    pub residual: f64,
}

/// A time stepper bound to a problem, a space and a scheme.
pub struct Scheme<'p> {
    problem: &'p Problem,
    space: ActiveSpace,
    stepping: Stepping,
    kernel: FractionalKernel,
    solver: SolverSettings,
    mass: SystemMatrix,
    stiffness: SystemMatrix,
    /// Factorization of a system matrix that does not change between steps.
    constant: Option<Factorization>,
    state: SchemeState,
}

impl<'p> Scheme<'p> {
    pub fn new(
        problem: &'p Problem,
        space: ActiveSpace,
        stepping: Stepping,
        kernel: FractionalKernel,
        solver: SolverSettings,
        initial: &DVector<f64>,
    ) -> Result<Scheme<'p>> {
        let dim = space.dim(problem);
        if let Stepping::PartiallyExplicit { implicit_dim } = stepping {
            if implicit_dim > dim {
                return Err(Error::InvalidArgument(format!(
                    "implicit block of size {implicit_dim} exceeds the space dimension {dim}"
                )));
            }
        }
        if initial.len() != problem.mesh.interior_count() {
            return Err(Error::DimensionMismatch("initial field length".into()));
        }
        let coeffs = space.coefficients_of(problem, initial)?;
        let mass = space.project(&problem.mass);
        let stiffness = space.project(&problem.stiffness);
        let mut scheme = Scheme {
            problem,
            space,
            stepping,
            kernel,
            solver,
            mass,
            stiffness,
            constant: None,
            state: SchemeState {
                step: 0,
                coeffs,
                increments: Vec::new(),
            },
        };
        scheme.constant = scheme.constant_factorization()?;
        Ok(scheme)
    }

    pub fn state(&self) -> &SchemeState {
        &self.state
    }

    pub fn kernel(&self) -> &FractionalKernel {
        &self.kernel
    }

    pub fn space(&self) -> &ActiveSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.state.coeffs.len()
    }

    /// Current solution over interior nodes.
    pub fn field(&self) -> DVector<f64> {
        self.space.lift(&self.state.coeffs)
    }

    pub fn energy(&self) -> Result<f64> {
        self.problem.energy(&self.field())
    }

    fn implicit_dim(&self) -> usize {
        match self.stepping {
            Stepping::Implicit { .. } => self.dim(),
            Stepping::PartiallyExplicit { implicit_dim } => implicit_dim,
            Stepping::Explicit => 0,
        }
    }

    fn reaction_implicit(&self) -> bool {
        matches!(self.stepping, Stepping::Implicit { reaction: Treatment::Implicit })
    }

    fn mass_scale(&self) -> f64 {
        self.kernel.b(0) / self.kernel.alpha0()
    }

    /// Zeroes the columns of the explicit coefficients.
    fn mask(&self, op: SystemMatrix) -> SystemMatrix {
        let s = self.implicit_dim();
        if s == self.dim() {
            return op;
        }
        match op {
            SystemMatrix::Sparse(a) => SystemMatrix::Sparse(SparseOperator::from_triplets(
                a.nrows(),
                a.ncols(),
                a.csr().triplet_iter().filter(|(_, j, _)| *j < s).map(|(i, j, v)| (i, j, *v)),
            )),
            SystemMatrix::Dense(mut d) => {
                d.columns_mut(s, d.ncols() - s).fill(0.0);
                SystemMatrix::Dense(d)
            }
        }
    }

    fn structure(&self) -> Structure {
        let s = self.implicit_dim();
        if self.problem.diffusion != Diffusion::Quadratic && (s == 0 || s == self.dim()) {
            Structure::SymmetricPositiveDefinite
        } else {
            Structure::General
        }
    }

    fn constant_factorization(&self) -> Result<Option<Factorization>> {
        let scale = self.mass_scale();
        let linear_f = self.problem.diffusion != Diffusion::Quadratic;
        let s = self.implicit_dim();
        let picard = self.solver.method == NonlinearMethod::Picard;
        let newton_constant = linear_f && !self.reaction_implicit();
        if s == 0 {
            return Ok(Some(self.mass.scaled(scale).factor(Structure::SymmetricPositiveDefinite)?));
        }
        if linear_f && (picard || newton_constant) {
            let a = if self.problem.diffusion == Diffusion::Off {
                self.mass.scaled(0.0)
            } else {
                self.mask(self.stiffness.clone())
            };
            let l = self.mass.scaled(scale).add_scaled(1.0, &a);
            return Ok(Some(l.factor(self.structure())?));
        }
        Ok(None)
    }

    fn reduced_vec(&self, v: DVector<f64>) -> DVector<f64> {
        self.space.restrict(v)
    }

    fn f_reduced(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.problem.diffusion == Diffusion::Linear {
            return Ok(self.stiffness.mul_vec(x));
        }
        Ok(self.reduced_vec(self.problem.f_vec(&self.space.lift(x))?))
    }

    fn g_reduced(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.problem.reaction == Reaction::Off {
            return Ok(DVector::zeros(x.len()));
        }
        Ok(self.reduced_vec(self.problem.g_vec(&self.space.lift(x))?))
    }

    fn f_argument(&self, x: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let s = self.implicit_dim();
        let mut w = c.clone();
        w.rows_mut(0, s).copy_from(&x.rows(0, s));
        w
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let k = self.state.step;
        if k >= self.kernel.steps() {
            return Err(Error::InvalidArgument(format!(
                "run already reached the final step {}",
                self.kernel.steps()
            )));
        }
        let (x, conv) = match self.stepping {
            Stepping::Explicit => self.step_explicit()?,
            Stepping::Implicit { .. } => self.step_implicit()?,
            Stepping::PartiallyExplicit { .. } => self.step_partially_explicit()?,
        };
        let d = &x - &self.state.coeffs;
        self.state.increments.push(d);
        self.state.coeffs = x;
        self.state.step += 1;
        Ok(StepRecord {
            iterations: conv.iterations,
            residual: conv.residual,
        })
    }

    fn history_term(&self) -> Result<DVector<f64>> {
        let h = self
            .kernel
            .history_combination(&self.state.increments, self.state.step, self.dim())?;
        Ok(self.mass.mul_vec(&h) / self.kernel.alpha0())
    }

    fn step_explicit(&self) -> Result<(DVector<f64>, Convergence)> {
        let c = &self.state.coeffs;
        let rhs = self.mass.mul_vec(c) * self.mass_scale()
            - self.history_term()?
            - self.f_reduced(c)?
            - self.g_reduced(c)?;
        let fac = self.constant.as_ref().expect("explicit mass factorization");
        let x = fac.solve(&rhs)?;
        Ok((x, Convergence { iterations: 1, residual: 0.0 }))
    }

    fn step_implicit(&self) -> Result<(DVector<f64>, Convergence)> {
        self.solve_level()
    }

    fn step_partially_explicit(&self) -> Result<(DVector<f64>, Convergence)> {
        self.solve_level()
    }

    fn solve_level(&self) -> Result<(DVector<f64>, Convergence)> {
        let c = self.state.coeffs.clone();
        let scale = self.mass_scale();
        let mc = self.mass.mul_vec(&c);
        let hist = self.history_term()?;
        let g_old = if self.reaction_implicit() {
            None
        } else {
            Some(self.g_reduced(&c)?)
        };
        let g_at = |x: &DVector<f64>| -> Result<DVector<f64>> {
            match &g_old {
                Some(g) => Ok(g.clone()),
                None => self.g_reduced(x),
            }
        };
        let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
            let xf = self.f_argument(x, &c);
            Ok((self.mass.mul_vec(x) - &mc) * scale + &hist + self.f_reduced(&xf)? + g_at(x)?)
        };
        match self.solver.method {
            NonlinearMethod::Picard => {
                let update = |x: &DVector<f64>| -> Result<DVector<f64>> {
                    let xf = self.f_argument(x, &c);
                    let a = self.f_operator(&xf)?;
                    let mut explicit_part = c.clone();
                    explicit_part.rows_mut(0, self.implicit_dim()).fill(0.0);
                    let rhs = &mc * scale - &hist - a.mul_vec(&explicit_part) - g_at(x)?;
                    match &self.constant {
                        Some(fac) => fac.solve(&rhs),
                        None => {
                            let l = self.mass.scaled(scale).add_scaled(1.0, &self.mask(a));
                            l.factor(self.structure())?.solve(&rhs)
                        }
                    }
                };
                picard_solve(residual, update, c.clone(), &self.solver)
            }
            NonlinearMethod::Newton => {
                let solve = |x: &DVector<f64>, r: &DVector<f64>| -> Result<DVector<f64>> {
                    if let Some(fac) = &self.constant {
                        return fac.solve(r);
                    }
                    let xf = self.f_argument(x, &c);
                    let mut j = self.mass.scaled(scale).add_scaled(1.0, &self.mask(self.f_jacobian_reduced(&xf)?));
                    if self.reaction_implicit() && self.problem.reaction != Reaction::Off {
                        let jg = self.space.project(&self.problem.g_jacobian(&self.space.lift(x))?);
                        j = j.add_scaled(1.0, &jg);
                    }
                    j.factor(Structure::General)?.solve(r)
                };
                newton_solve(residual, solve, c.clone(), &self.solver)
            }
        }
    }

    fn f_operator(&self, xf: &DVector<f64>) -> Result<SystemMatrix> {
        match self.problem.diffusion {
            Diffusion::Linear => Ok(self.stiffness.clone()),
            Diffusion::Off => Ok(self.mass.scaled(0.0)),
            Diffusion::Quadratic => Ok(self.space.project(&self.problem.f_operator(&self.space.lift(xf))?)),
        }
    }

    fn f_jacobian_reduced(&self, xf: &DVector<f64>) -> Result<SystemMatrix> {
        match self.problem.diffusion {
            Diffusion::Quadratic => Ok(self.space.project(&self.problem.f_jacobian(&self.space.lift(xf))?)),
            _ => self.f_operator(xf),
        }
    }

    /// Largest relative gap between the L1 sum evaluated on lifted fine
    /// increments and tested against the space, and the same sum formed with
    /// reduced operators, over all completed steps.
    pub fn history_residual(&self) -> Result<f64> {
        let fine: Vec<DVector<f64>> = self.state.increments.iter().map(|d| self.space.lift(d)).collect();
        let mut worst = 0.0f64;
        for k in 0..fine.len() {
            let mut sum = DVector::zeros(self.problem.mesh.interior_count());
            for (j, d) in fine[..=k].iter().enumerate() {
                sum.axpy(self.kernel.b(k - j), d, 1.0);
            }
            let monolithic = self.reduced_vec(self.problem.mass.mul_vec(&sum)) / self.kernel.alpha0();
            let h = self.kernel.history_combination(&self.state.increments, k, self.dim())?
                + &self.state.increments[k] * self.kernel.b(0);
            let split = self.mass.mul_vec(&h) / self.kernel.alpha0();
            let scale = monolithic.norm().max(f64::MIN_POSITIVE);
            worst = worst.max((monolithic - split).norm() / scale);
        }
        Ok(worst)
    }
}
