//! Constants of the partially explicit step-size condition
//!
//! ```text
//! (C2/c) sup_{v2} |v2|_V^2 / |v2|^2  <=  (1 - gamma)/alpha0 - B (1 + gamma)
//! ```
//!
//! and a numerical check of the L1 positivity inequality.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caputo::{gamma, FractionalKernel};
use crate::error::{Error, Result};
use crate::femcore::{Diffusion, Reaction};
use crate::linalg::{generalized_symmetric_eigen, symmetrize, SparseOperator};
use crate::msbasis::MultiscaleSpace;
use crate::schemes::Problem;

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

/// Largest `|L1^-1 C L2^-T|_2` where `L1 L1^T = B1`, `L2 L2^T = B2`.
fn normalized_norm(b1: &DMatrix<f64>, c: &DMatrix<f64>, b2: &DMatrix<f64>, what: &str) -> Result<f64> {
    if c.nrows() == 0 || c.ncols() == 0 {
        return Ok(0.0);
    }
    let l1 = cholesky(b1, what)?.l();
    let l2 = cholesky(b2, what)?.l();
    let x = l1
        .solve_lower_triangular(c)
        .ok_or_else(|| Error::LinearSolve("triangular solve".into()))?;
    let y = l2
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::LinearSolve("triangular solve".into()))?;
    Ok(y.singular_values().max())
}

/// Cosine of the minimal angle between two subspaces in the mass inner
/// product, from the reduced mass blocks.
pub fn estimate_gamma(m11: &DMatrix<f64>, m12: &DMatrix<f64>, m22: &DMatrix<f64>) -> Result<f64> {
    if m12.nrows() != m11.nrows() || m12.ncols() != m22.nrows() {
        return Err(Error::DimensionMismatch("coupling block shape".into()));
    }
    normalized_norm(m11, m12, m22, "diagonal mass block")
}

/// Largest eigenvalue of `A22 x = lambda M22 x`; zero for an empty space.
pub fn sup_ratio(a22: &DMatrix<f64>, m22: &DMatrix<f64>) -> Result<f64> {
    if a22.nrows() == 0 {
        return Ok(0.0);
    }
    let (vals, _) = generalized_symmetric_eigen(a22, m22)?;
    Ok(vals[vals.len() - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureSettings {
    /// Solution range over which reaction curvature is bounded; widened to
    /// cover the samples.
    pub range: (f64, f64),
    /// Margin applied to sampled diffusion constants.
    pub safety: f64,
}

impl Default for CurvatureSettings {
    fn default() -> Self {
        CurvatureSettings {
            range: (-1.5, 1.5),
            safety: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvatures {
    pub c_bar: f64,
    pub c2_bar: f64,
    pub b_upper: f64,
    pub b_lower: f64,
    /// Set when the sampled spread of the diffusion constants already exceeds
    /// the safety factor.
    pub margin_consumed: bool,
}

/// Extremes of `g'` over `[lo, hi]`.
fn reaction_derivative_range(reaction: Reaction, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let candidates: Vec<f64> = match reaction {
        Reaction::Off => return Ok((0.0, 0.0)),
        Reaction::Cubic => {
            let mut c = vec![lo, hi];
            if lo < 0.0 && hi > 0.0 {
                c.push(0.0);
            }
            c
        }
        Reaction::Rational => {
            if lo <= -2.0 {
                return Err(Error::Singularity { cell: usize::MAX, value: lo });
            }
            vec![lo, hi]
        }
    };
    let d: Vec<f64> = candidates.iter().map(|&u| reaction.derivative(u)).collect();
    Ok((
        d.iter().copied().fold(f64::INFINITY, f64::min),
        d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ))
}

/// Diffusion and reaction curvature bounds.
///
/// The quadratic law is not a gradient, so its constants are Rayleigh
/// estimates of the linearization over `V_H` at each sample, measured against
/// the linear kappa-energy norm. They need the multiscale space.
pub fn estimate_curvatures(
    problem: &Problem,
    space: Option<&MultiscaleSpace>,
    samples: &[DVector<f64>],
    settings: &CurvatureSettings,
) -> Result<Curvatures> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("curvature estimate needs at least one sample".into()));
    }
    let (mut lo, mut hi) = settings.range;
    for s in samples {
        lo = lo.min(s.min());
        hi = hi.max(s.max());
    }
    let (gmin, gmax) = reaction_derivative_range(problem.reaction, lo, hi)?;
    let b_upper = gmin.abs().max(gmax.abs());
    let b_lower = (-gmin).max(0.0);

    let (c_bar, c2_bar, margin_consumed) = match problem.diffusion {
        Diffusion::Off => (1.0, 0.0, false),
        Diffusion::Linear => (1.0, 1.0, false),
        Diffusion::Quadratic => {
            let space = space.ok_or_else(|| {
                Error::InvalidArgument("quadratic diffusion constants need the multiscale space".into())
            })?;
            let (cs, c2s) = quadratic_samples(problem, space, samples)?;
            let cmin = cs.iter().copied().fold(f64::INFINITY, f64::min);
            let cmax = cs.iter().copied().fold(0.0, f64::max);
            let c2min = c2s.iter().copied().fold(f64::INFINITY, f64::min);
            let c2max = c2s.iter().copied().fold(0.0, f64::max);
            if cmin <= 0.0 {
                return Err(Error::NotPositiveDefinite("sampled diffusion linearization".into()));
            }
            let spread = (cmax / cmin).max(if c2min > 0.0 { c2max / c2min } else { 1.0 });
            (cmin / settings.safety, c2max * settings.safety, spread > settings.safety)
        }
    };
    Ok(Curvatures {
        c_bar,
        c2_bar,
        b_upper,
        b_lower,
        margin_consumed,
    })
}

fn quadratic_samples(
    problem: &Problem,
    space: &MultiscaleSpace,
    samples: &[DVector<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = space.combined();
    let a = space.combined_stiffness();
    let a22 = &space.reduced.a22;
    let mut cs = Vec::with_capacity(samples.len());
    let mut c2s = Vec::with_capacity(samples.len());
    for xi in samples {
        let j = problem.f_jacobian(xi)?;
        let jr = j.project(&r);
        let (vals, _) = generalized_symmetric_eigen(&symmetrize(&jr), &a)?;
        cs.push(vals[0]);
        let j2 = cross(&j, &r, &space.r2);
        c2s.push(normalized_norm(&a, &j2, a22, "reduced stiffness")?);
    }
    Ok((cs, c2s))
}

fn cross(op: &SparseOperator, left: &SparseOperator, right: &SparseOperator) -> DMatrix<f64> {
    left.transpose().matmul(&op.matmul(right)).to_dense()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub gamma: f64,
    pub lambda2: f64,
    pub c_bar: f64,
    pub c2_bar: f64,
    pub b_upper: f64,
    pub b_lower: f64,
    pub alpha: f64,
    pub dt: f64,
    pub alpha0: f64,
    pub condition_lhs: f64,
    pub condition_rhs: f64,
    pub satisfied: bool,
    pub max_stable_dt: f64,
    pub margin_consumed: bool,
}

/// Evaluates the condition at `dt` and inverts its equality case for the
/// largest admissible step.
pub fn check_condition(
    gamma_value: f64,
    lambda2: f64,
    curv: &Curvatures,
    alpha: f64,
    dt: f64,
) -> Result<StabilityReport> {
    if !(0.0..1.0).contains(&gamma_value) {
        return Err(Error::NoStableStep(format!(
            "subspace cosine {gamma_value} is not below one"
        )));
    }
    if curv.c_bar <= 0.0 {
        return Err(Error::InvalidArgument("diffusion coercivity must be positive".into()));
    }
    let kernel = FractionalKernel::new(alpha, dt, 1)?;
    let alpha0 = kernel.alpha0();
    let lhs = curv.c2_bar / curv.c_bar * lambda2;
    let rhs = (1.0 - gamma_value) / alpha0 - curv.b_upper * (1.0 + gamma_value);
    let denom = lhs + curv.b_upper * (1.0 + gamma_value);
    let max_stable_dt = if denom == 0.0 {
        f64::INFINITY
    } else {
        let a0 = (1.0 - gamma_value) / denom;
        (a0 / gamma(2.0 - alpha)).powf(1.0 / alpha)
    };
    if max_stable_dt.is_finite() {
        let a0 = gamma(2.0 - alpha) * max_stable_dt.powf(alpha);
        let at_max = (1.0 - gamma_value) / a0 - curv.b_upper * (1.0 + gamma_value);
        debug_assert!(at_max >= -1e-9 * at_max.abs().max(1.0));
    }
    Ok(StabilityReport {
        gamma: gamma_value,
        lambda2,
        c_bar: curv.c_bar,
        c2_bar: curv.c2_bar,
        b_upper: curv.b_upper,
        b_lower: curv.b_lower,
        alpha,
        dt,
        alpha0,
        condition_lhs: lhs,
        condition_rhs: rhs,
        satisfied: lhs <= rhs,
        max_stable_dt,
        margin_consumed: curv.margin_consumed,
    })
}

/// Full analysis of a multiscale space for a problem.
pub fn analyze(
    problem: &Problem,
    space: &MultiscaleSpace,
    samples: &[DVector<f64>],
    settings: &CurvatureSettings,
    alpha: f64,
    dt: f64,
) -> Result<StabilityReport> {
    let r = &space.reduced;
    let g = estimate_gamma(&r.m11, &r.m12, &r.m22)?;
    let l2 = sup_ratio(&r.a22, &r.m22)?;
    let curv = estimate_curvatures(problem, Some(space), samples, settings)?;
    check_condition(g, l2, &curv, alpha, dt)
}

impl StabilityReport {
    fn fields(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:.16e}");
        vec![
            ("gamma", f(self.gamma)),
            ("lambda2", f(self.lambda2)),
            ("c_bar", f(self.c_bar)),
            ("c2_bar", f(self.c2_bar)),
            ("b_upper", f(self.b_upper)),
            ("b_lower", f(self.b_lower)),
            ("alpha", f(self.alpha)),
            ("dt", f(self.dt)),
            ("alpha0", f(self.alpha0)),
            ("condition_lhs", f(self.condition_lhs)),
            ("condition_rhs", f(self.condition_rhs)),
            ("satisfied", self.satisfied.to_string()),
            ("max_stable_dt", f(self.max_stable_dt)),
            ("margin_consumed", self.margin_consumed.to_string()),
        ]
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            writeln!(s, "{k}={v}").expect("string write");
        }
        s
    }

    pub fn csv_header() -> String {
        let keys: Vec<&str> = StabilityReport::default_fields();
        keys.join(",")
    }

    fn default_fields() -> Vec<&'static str> {
        vec![
            "gamma",
            "lambda2",
            "c_bar",
            "c2_bar",
            "b_upper",
            "b_lower",
            "alpha",
            "dt",
            "alpha0",
            "condition_lhs",
            "condition_rhs",
            "satisfied",
            "max_stable_dt",
            "margin_consumed",
        ]
    }

    pub fn csv_row(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityRecord {
    pub alpha: f64,
    pub n: usize,
    pub trials: usize,
    pub passes: usize,
    /// Smallest `lhs - rhs` seen.
    pub worst_margin: f64,
    pub toeplitz_positive_definite: bool,
}

impl PositivityRecord {
    pub fn all_passed(&self) -> bool {
        self.passes == self.trials && self.toeplitz_positive_definite
    }
}

/// `sum_k sum_{j<=k} b_{k-j} (d^j, d^k)` and `1/2 sum_k |d^k|^2`.
pub fn lemma1_sides(kernel: &FractionalKernel, increments: &[DVector<f64>]) -> (f64, f64) {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (k, dk) in increments.iter().enumerate() {
        for (j, dj) in increments[..=k].iter().enumerate() {
            lhs += kernel.b(k - j) * dj.dot(dk);
        }
        rhs += 0.5 * dk.norm_squared();
    }
    (lhs, rhs)
}

/// Checks the positivity inequality on random increment sequences
/// `d^0 ..= d^N` and the definiteness of `T_kj = b_|k-j|`.
pub fn lemma1_check(alpha: f64, n: usize, trials: usize, seed: u64) -> Result<PositivityRecord> {
    if n > 200 {
        return Err(Error::InvalidArgument(format!("sequence length {n} exceeds 200")));
    }
    let kernel = FractionalKernel::new(alpha, 1.0, n.max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let mut passes = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let inc: Vec<DVector<f64>> = (0..=n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let (lhs, rhs) = lemma1_sides(&kernel, &inc);
        worst = worst.min(lhs - rhs);
        if lhs >= rhs {
            passes += 1;
        }
    }
    let t = DMatrix::from_fn(n + 1, n + 1, |i, j| kernel.b(i.abs_diff(j)));
    Ok(PositivityRecord {
        alpha,
        n,
        trials,
        passes,
        worst_margin: worst,
        toeplitz_positive_definite: nalgebra::Cholesky::new(t).is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn gamma_trivial_cases() {
        let m = spd(3, 1);
        assert_eq!(estimate_gamma(&m, &DMatrix::zeros(3, 2), &spd(2, 2)).unwrap(), 0.0);
        // Same single vector on both sides.
        let one = DMatrix::from_element(1, 1, 2.5);
        assert!((estimate_gamma(&one, &one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert!(estimate_gamma(&m, &DMatrix::zeros(2, 2), &m).is_err());
    }

    #[test]
    fn gamma_matches_monte_carlo() {
        // Gram matrix of 10 random vectors in R^12 split 5/5.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DMatrix::from_fn(12, 10, |_, _| rng.random_range(-1.0..1.0));
        let g = v.transpose() * &v;
        let m11 = g.view((0, 0), (5, 5)).into_owned();
        let m12 = g.view((0, 5), (5, 5)).into_owned();
        let m22 = g.view((5, 5), (5, 5)).into_owned();
        let exact = estimate_gamma(&m11, &m12, &m22).unwrap();
        let mut best = 0.0f64;
        let mut best_b = DVector::zeros(5);
        for _ in 0..100_000 {
            let a = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let c = a.dot(&(&m12 * &b)) / (a.dot(&(&m11 * &a)).sqrt() * b.dot(&(&m22 * &b)).sqrt());
            if c.abs() > best {
                best = c.abs();
                best_b = b;
            }
        }
        // Random pairs only bound the supremum from below in ten dimensions;
        // alternating ascent from the best sample closes the gap.
        assert!(best <= exact + 1e-12);
        let l1 = m11.clone().cholesky().unwrap();
        let l2 = m22.clone().cholesky().unwrap();
        let mut b = best_b;
        let mut cosine = 0.0;
        for _ in 0..2000 {
            let a = l1.solve(&(&m12 * &b));
            let a = &a / a.dot(&(&m11 * &a)).sqrt();
            let nb = l2.solve(&(m12.transpose() * &a));
            b = &nb / nb.dot(&(&m22 * &nb)).sqrt();
            cosine = a.dot(&(&m12 * &b)).abs();
        }
        assert!((cosine - exact).abs() <= 1e-3);
    }

    #[test]
    fn sup_ratio_cases() {
        let m = spd(4, 3);
        assert!((sup_ratio(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let a = DMatrix::from_element(1, 1, 6.0);
        let mm = DMatrix::from_element(1, 1, 1.5);
        assert!((sup_ratio(&a, &mm).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(sup_ratio(&DMatrix::zeros(0, 0), &DMatrix::zeros(0, 0)).unwrap(), 0.0);
    }

    fn curvature_problem(diffusion: Diffusion, reaction: Reaction) -> Problem {
        let mesh = crate::grid::Mesh::new(2, 4).unwrap();
        let kappa = crate::femcore::CoefficientField::uniform(&mesh, 1.0).unwrap();
        let n = mesh.interior_count();
        Problem::new(mesh, kappa, diffusion, reaction, DVector::zeros(n)).unwrap()
    }

    #[test]
    fn linear_and_reaction_constants() {
        let p = curvature_problem(Diffusion::Linear, Reaction::Cubic);
        let s = CurvatureSettings { range: (-1.0, 1.0), ..Default::default() };
        let zero = DVector::zeros(p.mesh.interior_count());
        let c = estimate_curvatures(&p, None, &[zero.clone()], &s).unwrap();
        assert_eq!((c.c_bar, c.c2_bar), (1.0, 1.0));
        // g' = 10 - 30u^2 spans [-20, 10] on [-1, 1].
        assert_eq!(c.b_upper, 20.0);
        assert_eq!(c.b_lower, 20.0);
        let wide = estimate_curvatures(&p, None, &[zero.add_scalar(1.2)], &s).unwrap();
        assert!((wide.b_upper - (30.0 * 1.44 - 10.0)).abs() < 1e-12);

        let off = curvature_problem(Diffusion::Linear, Reaction::Off);
        let c = estimate_curvatures(&off, None, &[zero.clone()], &s).unwrap();
        assert_eq!((c.b_upper, c.b_lower), (0.0, 0.0));

        let rational = curvature_problem(Diffusion::Linear, Reaction::Rational);
        let c = estimate_curvatures(&rational, None, &[zero.clone()], &s).unwrap();
        assert!((c.b_upper - 20.0).abs() < 1e-12);
        assert_eq!(c.b_lower, 0.0);
        assert!(estimate_curvatures(&rational, None, &[zero.add_scalar(-2.5)], &s).is_err());
        assert!(estimate_curvatures(&p, None, &[], &s).is_err());
    }

    #[test]
    fn quadratic_constants_bracket_linear() {
        let p = curvature_problem(Diffusion::Quadratic, Reaction::Cubic);
        let space = MultiscaleSpace::build(&p.mesh, &p.kappa, &crate::msbasis::BasisConfig::default()).unwrap();
        let zero = DVector::zeros(p.mesh.interior_count());
        let s = CurvatureSettings::default();
        assert!(estimate_curvatures(&p, None, &[zero.clone()], &s).is_err());
        let c = estimate_curvatures(&p, Some(&space), &[zero.clone()], &s).unwrap();
        // At u = 0 the linearization is the linear stiffness.
        assert!((c.c_bar - 0.5).abs() < 1e-8);
        assert!((c.c2_bar - 2.0).abs() < 1e-8);
        let bump = p.mesh.interpolate(|x, y| 0.8 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
        let c2 = estimate_curvatures(&p, Some(&space), &[zero, bump], &s).unwrap();
        assert!(c2.c2_bar > c.c2_bar);
    }

    #[test]
    fn condition_reduces_without_coupling_and_reaction() {
        let curv = Curvatures { c_bar: 1.0, c2_bar: 1.0, b_upper: 0.0, b_lower: 0.0, margin_consumed: false };
        let alpha = 0.8;
        let l2 = 250.0;
        let r = check_condition(0.0, l2, &curv, alpha, 1e-3).unwrap();
        let expected = (1.0 / (l2 * gamma(2.0 - alpha))).powf(1.0 / alpha);
        assert!((r.max_stable_dt - expected).abs() <= 1e-12 * expected);
        assert_eq!(r.satisfied, 1e-3 <= expected);
        let at = check_condition(0.0, l2, &curv, alpha, expected * 0.999).unwrap();
        assert!(at.satisfied);
        let beyond = check_condition(0.0, l2, &curv, alpha, expected * 1.001).unwrap();
        assert!(!beyond.satisfied);

        let empty = check_condition(0.3, 0.0, &curv, alpha, 10.0).unwrap();
        assert!(empty.satisfied);
        assert!(empty.max_stable_dt.is_infinite());
        assert!(check_condition(1.0, l2, &curv, alpha, 1e-3).is_err());
    }

    #[test]
    fn report_formats() {
        let curv = Curvatures { c_bar: 1.0, c2_bar: 1.0, b_upper: 2.0, b_lower: 1.0, margin_consumed: false };
        let r = check_condition(0.2, 10.0, &curv, 0.5, 1e-2).unwrap();
        let kv = r.to_key_value();
        assert!(kv.lines().any(|l| l.starts_with("satisfied=")));
        assert_eq!(
            StabilityReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
    }

    #[test]
    fn positivity_two_steps_by_hand() {
        let kernel = FractionalKernel::new(0.8, 1.0, 1).unwrap();
        let d0 = DVector::from_vec(vec![1.0, -2.0]);
        let d1 = DVector::from_vec(vec![0.5, 3.0]);
        let (lhs, rhs) = lemma1_sides(&kernel, &[d0.clone(), d1.clone()]);
        let hand = d0.norm_squared() + kernel.b(1) * d0.dot(&d1) + d1.norm_squared();
        assert!((lhs - hand).abs() < 1e-12);
        assert!(lhs >= rhs);
        let z = vec![DVector::zeros(3); 5];
        assert_eq!(lemma1_sides(&kernel, &z[..2]), (0.0, 0.0));
    }

    #[test]
    fn positivity_random_sequences() {
        for alpha in [0.2, 0.5, 0.8] {
            let rec = lemma1_check(alpha, 50, 100, 11).unwrap();
            assert!(rec.all_passed(), "{rec:?}");
        }
        assert!(lemma1_check(0.5, 201, 1, 0).is_err());
    }
}
