//! Q1 finite element forms on the uniform fine grid.
//!
//! Every form is evaluated with the 2x2 tensor Gauss rule per cell. Solution
//! and source vectors hold interior-node coefficients; boundary values are
//! zero. Nonlinear coefficients are evaluated at quadrature points from the
//! interpolated field.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mesh;
use crate::linalg::SparseOperator;

/// Interior-node coefficient vector.
pub type NodalField = DVector<f64>;

/// Cell-wise permeability, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.cell_count() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient has {} cells, mesh has {}",
                values.len(),
                mesh.cell_count()
            )));
        }
        if let Some((cell, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "coefficient must be positive, got {v} at cell {cell}"
            )));
        }
        Ok(CoefficientField { values })
    }

    pub fn uniform(mesh: &Mesh, value: f64) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.cell_count()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contrast(&self) -> f64 {
        self.max() / self.min()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        CoefficientField::new_unchecked_len(self.values.iter().map(|v| v * s).collect())
    }

    fn new_unchecked_len(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("coefficient must be positive".into()));
        }
        Ok(CoefficientField { values })
    }
}

/// Diffusion law `f(u) = -div(kappa c(u) grad u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diffusion {
    /// No diffusion term.
    Off,
    /// `c(u) = 1`.
    Linear,
    /// `c(u) = 1 + u^2`.
    Quadratic,
}

/// Reaction `g(u)` including the source `g0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reaction {
    /// `g = 0`; the source is ignored.
    Off,
    /// `g(u) = -(10 u (u^2 - 1) + g0)`.
    Cubic,
    /// `g(u) = -(-10 u / (u + 2) + g0)`.
    Rational,
}

impl Reaction {
    pub fn value(self, u: f64, g0: f64) -> f64 {
        match self {
            Reaction::Off => 0.0,
            Reaction::Cubic => -(10.0 * u * (u * u - 1.0) + g0),
            Reaction::Rational => 10.0 * u / (u + 2.0) - g0,
        }
    }

    /// `dg/du`, the integrand of the second variation of `G`.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Reaction::Off => 0.0,
            Reaction::Cubic => 10.0 - 30.0 * u * u,
            Reaction::Rational => 20.0 / ((u + 2.0) * (u + 2.0)),
        }
    }

    /// Antiderivative normalized so that the source-free part vanishes at 0.
    pub fn antiderivative(self, u: f64, g0: f64) -> f64 {
        match self {
            Reaction::Off => 0.0,
            Reaction::Cubic => -(10.0 * (0.25 * u.powi(4) - 0.5 * u * u) + g0 * u),
            Reaction::Rational => 10.0 * (u - 2.0 * ((u + 2.0) / 2.0).ln()) - g0 * u,
        }
    }

    fn check(self, u: f64, cell: usize) -> Result<()> {
        if self == Reaction::Rational && u <= -2.0 {
            return Err(Error::Singularity { cell, value: u });
        }
        Ok(())
    }
}

/// 2x2 Gauss rule and Q1 shape data on the reference square `[0, 1]^2`.
struct Q1 {
    /// Reference coordinates of the quadrature points.
    points: [(f64, f64); 4],
    /// `shape[q][a]`.
    shape: [[f64; 4]; 4],
    /// Reference gradients `grad[q][a] = (dN/ds, dN/dt)`.
    grad: [[(f64, f64); 4]; 4],
}

const WEIGHT: f64 = 0.25;

fn q1() -> Q1 {
    let g = 0.5 / 3f64.sqrt();
    let pts = [
        (0.5 - g, 0.5 - g),
        (0.5 + g, 0.5 - g),
        (0.5 + g, 0.5 + g),
        (0.5 - g, 0.5 + g),
    ];
    let mut shape = [[0.0; 4]; 4];
    let mut grad = [[(0.0, 0.0); 4]; 4];
    for (q, &(s, t)) in pts.iter().enumerate() {
        shape[q] = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        grad[q] = [
            (-(1.0 - t), -(1.0 - s)),
            (1.0 - t, -s),
            (t, s),
            (-t, 1.0 - s),
        ];
    }
    Q1 {
        points: pts,
        shape,
        grad,
    }
}

/// Cell-local view of a nodal field: corner values and interior dofs.
fn cell_values(mesh: &Mesh, u: &DVector<f64>, cell: usize) -> ([f64; 4], [Option<usize>; 4]) {
    let dofs = mesh.cell_dofs(cell);
    let vals = dofs.map(|d| d.map_or(0.0, |k| u[k]));
    (vals, dofs)
}

fn check_len(mesh: &Mesh, u: &DVector<f64>, what: &str) -> Result<()> {
    if u.len() != mesh.interior_count() {
        return Err(Error::DimensionMismatch(format!(
            "{what} has length {}, mesh has {} interior nodes",
            u.len(),
            mesh.interior_count()
        )));
    }
    Ok(())
}

fn scatter(
    triplets: &mut Vec<(usize, usize, f64)>,
    dofs: &[Option<usize>; 4],
    local: &[[f64; 4]; 4],
) {
    for a in 0..4 {
        let Some(p) = dofs[a] else { continue };
        for b in 0..4 {
            let Some(q) = dofs[b] else { continue };
            triplets.push((p, q, local[a][b]));
        }
    }
}

/// Mass matrix with a weight evaluated at physical quadrature points.
pub fn assemble_weighted_mass(
    mesh: &Mesh,
    weight: impl Fn(usize, f64, f64) -> f64,
) -> Result<SparseOperator> {
    let rule = q1();
    let h = mesh.fine_size();
    let mut triplets = Vec::with_capacity(16 * mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let (x0, y0) = mesh.cell_origin(cell);
        let dofs = mesh.cell_dofs(cell);
        let mut local = [[0.0; 4]; 4];
        for q in 0..4 {
            let (s, t) = rule.points[q];
            let w = weight(cell, x0 + s * h, y0 + t * h);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "mass weight must be positive, got {w} in cell {cell}"
                )));
            }
            let jw = WEIGHT * h * h * w;
            for a in 0..4 {
                for b in 0..4 {
                    local[a][b] += jw * rule.shape[q][a] * rule.shape[q][b];
                }
            }
        }
        scatter(&mut triplets, &dofs, &local);
    }
    let n = mesh.interior_count();
    Ok(SparseOperator::from_triplets(n, n, triplets))
}

/// `M_pq = int w phi_p phi_q` with a cell-wise weight (unit weight if `None`).
pub fn assemble_mass(mesh: &Mesh, weight: Option<&CoefficientField>) -> Result<SparseOperator> {
    match weight {
        None => assemble_weighted_mass(mesh, |_, _, _| 1.0),
        Some(w) => {
            if w.len() != mesh.cell_count() {
                return Err(Error::DimensionMismatch("mass weight length".into()));
            }
            assemble_weighted_mass(mesh, |cell, _, _| w.get(cell))
        }
    }
}

/// `A(u)_pq = int kappa c(u) grad phi_p . grad phi_q`.
///
/// The quadratic law needs `state`; the linear law ignores it.
pub fn assemble_stiffness(
    mesh: &Mesh,
    kappa: &CoefficientField,
    law: Diffusion,
    state: Option<&DVector<f64>>,
) -> Result<SparseOperator> {
    let n = mesh.interior_count();
    if law == Diffusion::Off {
        return Ok(SparseOperator::zeros(n, n));
    }
    if law == Diffusion::Quadratic && state.is_none() {
        return Err(Error::InvalidArgument(
            "quadratic diffusion needs a state to assemble".into(),
        ));
    }
    if let Some(u) = state {
        check_len(mesh, u, "state")?;
    }
    let rule = q1();
    let mut triplets = Vec::with_capacity(16 * mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let (uc, dofs) = match (law, state) {
            (Diffusion::Quadratic, Some(u)) => cell_values(mesh, u, cell),
            _ => ([0.0; 4], mesh.cell_dofs(cell)),
        };
        let k = kappa.get(cell);
        let mut local = [[0.0; 4]; 4];
        for q in 0..4 {
            let coef = match law {
                Diffusion::Quadratic => {
                    let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
                    1.0 + uq * uq
                }
                _ => 1.0,
            };
            // h^2 quadrature Jacobian cancels the 1/h^2 of the two gradients.
            let jw = WEIGHT * k * coef;
            for a in 0..4 {
                for b in 0..4 {
                    let (ga, gb) = (rule.grad[q][a], rule.grad[q][b]);
                    local[a][b] += jw * (ga.0 * gb.0 + ga.1 * gb.1);
                }
            }
        }
        scatter(&mut triplets, &dofs, &local);
    }
    Ok(SparseOperator::from_triplets(n, n, triplets))
}

/// Galerkin vector `(f(u), phi_p) = int kappa c(u) grad u . grad phi_p`.
pub fn apply_f(
    mesh: &Mesh,
    kappa: &CoefficientField,
    law: Diffusion,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(mesh, u, "field")?;
    let mut out = DVector::zeros(mesh.interior_count());
    if law == Diffusion::Off {
        return Ok(out);
    }
    let rule = q1();
    for cell in 0..mesh.cell_count() {
        let (uc, dofs) = cell_values(mesh, u, cell);
        let k = kappa.get(cell);
        for q in 0..4 {
            let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
            let (gx, gy) = (0..4).fold((0.0, 0.0), |(x, y), a| {
                (x + rule.grad[q][a].0 * uc[a], y + rule.grad[q][a].1 * uc[a])
            });
            let coef = if law == Diffusion::Quadratic { 1.0 + uq * uq } else { 1.0 };
            let jw = WEIGHT * k * coef;
            for a in 0..4 {
                if let Some(p) = dofs[a] {
                    out[p] += jw * (gx * rule.grad[q][a].0 + gy * rule.grad[q][a].1);
                }
            }
        }
    }
    Ok(out)
}

/// Jacobian of [`apply_f`]: `A(u) + int 2 kappa u psi grad u . grad phi` for the
/// quadratic law (non-symmetric), `A` otherwise.
pub fn f_jacobian(
    mesh: &Mesh,
    kappa: &CoefficientField,
    law: Diffusion,
    u: &DVector<f64>,
) -> Result<SparseOperator> {
    if law != Diffusion::Quadratic {
        return assemble_stiffness(mesh, kappa, law, None);
    }
    check_len(mesh, u, "field")?;
    let rule = q1();
    let n = mesh.interior_count();
    let mut triplets = Vec::with_capacity(16 * mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let (uc, dofs) = cell_values(mesh, u, cell);
        let k = kappa.get(cell);
        let mut local = [[0.0; 4]; 4];
        for q in 0..4 {
            let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
            let (gx, gy) = (0..4).fold((0.0, 0.0), |(x, y), a| {
                (x + rule.grad[q][a].0 * uc[a], y + rule.grad[q][a].1 * uc[a])
            });
            for a in 0..4 {
                let ga = rule.grad[q][a];
                let du_dphi = gx * ga.0 + gy * ga.1;
                for b in 0..4 {
                    let gb = rule.grad[q][b];
                    local[a][b] += WEIGHT
                        * k
                        * ((1.0 + uq * uq) * (ga.0 * gb.0 + ga.1 * gb.1)
                            + 2.0 * uq * rule.shape[q][b] * du_dphi);
                }
            }
        }
        scatter(&mut triplets, &dofs, &local);
    }
    Ok(SparseOperator::from_triplets(n, n, triplets))
}

/// Galerkin vector `(g(u), phi_p)`.
pub fn apply_g(
    mesh: &Mesh,
    reaction: Reaction,
    u: &DVector<f64>,
    g0: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(mesh, u, "field")?;
    check_len(mesh, g0, "source")?;
    let mut out = DVector::zeros(mesh.interior_count());
    if reaction == Reaction::Off {
        return Ok(out);
    }
    let rule = q1();
    let h2 = mesh.fine_size().powi(2);
    for cell in 0..mesh.cell_count() {
        let (uc, dofs) = cell_values(mesh, u, cell);
        let (sc, _) = cell_values(mesh, g0, cell);
        for q in 0..4 {
            let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
            let sq: f64 = (0..4).map(|a| rule.shape[q][a] * sc[a]).sum();
            reaction.check(uq, cell)?;
            let gq = WEIGHT * h2 * reaction.value(uq, sq);
            for a in 0..4 {
                if let Some(p) = dofs[a] {
                    out[p] += gq * rule.shape[q][a];
                }
            }
        }
    }
    Ok(out)
}

/// Jacobian of [`apply_g`]: `int g'(u) phi_p phi_q`.
pub fn g_jacobian(mesh: &Mesh, reaction: Reaction, u: &DVector<f64>) -> Result<SparseOperator> {
    check_len(mesh, u, "field")?;
    let n = mesh.interior_count();
    if reaction == Reaction::Off {
        return Ok(SparseOperator::zeros(n, n));
    }
    let rule = q1();
    let h2 = mesh.fine_size().powi(2);
    let mut triplets = Vec::with_capacity(16 * mesh.cell_count());
    for cell in 0..mesh.cell_count() {
        let (uc, dofs) = cell_values(mesh, u, cell);
        let mut local = [[0.0; 4]; 4];
        for q in 0..4 {
            let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
            reaction.check(uq, cell)?;
            let jw = WEIGHT * h2 * reaction.derivative(uq);
            for a in 0..4 {
                for b in 0..4 {
                    local[a][b] += jw * rule.shape[q][a] * rule.shape[q][b];
                }
            }
        }
        scatter(&mut triplets, &dofs, &local);
    }
    Ok(SparseOperator::from_triplets(n, n, triplets))
}

/// `F(u) = 1/2 int kappa |grad u|^2`.
///
/// For the quadratic law no energy is defined; this linear-part energy is
/// what gets monitored in that case.
pub fn energy_f(mesh: &Mesh, kappa: &CoefficientField, u: &DVector<f64>) -> Result<f64> {
    check_len(mesh, u, "field")?;
    let rule = q1();
    let mut e = 0.0;
    for cell in 0..mesh.cell_count() {
        let (uc, _) = cell_values(mesh, u, cell);
        let k = kappa.get(cell);
        for q in 0..4 {
            let (gx, gy) = (0..4).fold((0.0, 0.0), |(x, y), a| {
                (x + rule.grad[q][a].0 * uc[a], y + rule.grad[q][a].1 * uc[a])
            });
            e += 0.5 * WEIGHT * k * (gx * gx + gy * gy);
        }
    }
    Ok(e)
}

/// `G(u) = int G(u, g0)` with the pointwise antiderivative of [`Reaction`].
pub fn energy_g(
    mesh: &Mesh,
    reaction: Reaction,
    u: &DVector<f64>,
    g0: &DVector<f64>,
) -> Result<f64> {
    check_len(mesh, u, "field")?;
    check_len(mesh, g0, "source")?;
    if reaction == Reaction::Off {
        return Ok(0.0);
    }
    let rule = q1();
    let h2 = mesh.fine_size().powi(2);
    let mut e = 0.0;
    for cell in 0..mesh.cell_count() {
        let (uc, _) = cell_values(mesh, u, cell);
        let (sc, _) = cell_values(mesh, g0, cell);
        for q in 0..4 {
            let uq: f64 = (0..4).map(|a| rule.shape[q][a] * uc[a]).sum();
            let sq: f64 = (0..4).map(|a| rule.shape[q][a] * sc[a]).sum();
            reaction.check(uq, cell)?;
            e += WEIGHT * h2 * reaction.antiderivative(uq, sq);
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(mesh: &Mesh, scale: f64, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(mesh.interior_count(), |_, _| scale * rng.random_range(-1.0..1.0))
    }

    fn random_kappa(mesh: &Mesh, seed: u64) -> CoefficientField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..mesh.cell_count())
            .map(|_| if rng.random_bool(0.2) { 1e3 } else { 1.0 })
            .collect();
        CoefficientField::new(mesh, v).unwrap()
    }

    #[test]
    fn unit_mass_integrates_one() {
        let m = Mesh::new(1, 1).unwrap();
        assert_eq!(assemble_mass(&m, None).unwrap().nrows(), 0);
        // sum_pq of the boundary-included mass matrix is int 1 = |Omega|.
        let m = Mesh::new(3, 2).unwrap();
        let ones_full = vec![1.0; m.node_count()];
        let total = full_mass_sum(&m, &ones_full);
        assert!((total - 1.0).abs() < 1e-14);
    }

    fn full_mass_sum(m: &Mesh, full: &[f64]) -> f64 {
        let rule = q1();
        let h2 = m.fine_size().powi(2);
        let mut s = 0.0;
        for cell in 0..m.cell_count() {
            let nodes = m.cell_nodes(cell);
            for q in 0..4 {
                let v: f64 = (0..4).map(|a| rule.shape[q][a] * full[nodes[a]]).sum();
                s += WEIGHT * h2 * v;
            }
        }
        s
    }

    #[test]
    fn weighted_mass_is_linear_and_rejects_nonpositive() {
        let m = Mesh::new(2, 3).unwrap();
        let unit = assemble_mass(&m, None).unwrap();
        let two = assemble_mass(&m, Some(&CoefficientField::uniform(&m, 2.0).unwrap())).unwrap();
        assert!((two.to_dense() - unit.to_dense() * 2.0).amax() < 1e-15);
        assert!(assemble_weighted_mass(&m, |_, _, _| 0.0).is_err());
        assert!(CoefficientField::new(&m, vec![-1.0; m.cell_count()]).is_err());
    }

    #[test]
    fn mass_matrices_are_spd() {
        for (nc, r) in [(1, 2), (2, 2), (3, 3), (5, 5)] {
            let m = Mesh::new(nc, r).unwrap();
            let mass = assemble_mass(&m, None).unwrap();
            assert!(mass.symmetry_error() <= 1e-12);
            assert!(min_eigenvalue(&mass.to_dense()) > 0.0);
        }
    }

    #[test]
    fn q1_laplacian_stencil() {
        let m = Mesh::new(2, 2).unwrap();
        let k = CoefficientField::uniform(&m, 1.0).unwrap();
        let a = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        // centre node (2, 2) has interior index 4: 8/3 on the diagonal,
        // -1/3 to all eight neighbours.
        assert!((a.get(4, 4) - 8.0 / 3.0).abs() < 1e-14);
        for q in [0, 1, 2, 3, 5, 6, 7, 8] {
            assert!((a.get(4, q) + 1.0 / 3.0).abs() < 1e-14);
        }
        assert!(min_eigenvalue(&a.to_dense()) > 0.0);
    }

    #[test]
    fn stiffness_energy_of_interpolant() {
        // int |grad v|^2 for v = x(1-x)y(1-y) is 1/45.
        let m = Mesh::new(5, 4).unwrap();
        let k = CoefficientField::uniform(&m, 1.0).unwrap();
        let a = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        let v = m.interpolate(|x, y| x * (1.0 - x) * y * (1.0 - y));
        let e = a.quadratic(&v);
        assert!((e - 1.0 / 45.0).abs() <= 0.05 / 45.0, "energy {e}");
    }

    #[test]
    fn quadratic_with_zero_state_equals_linear() {
        let m = Mesh::new(2, 3).unwrap();
        let k = random_kappa(&m, 3);
        let lin = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        let zero = DVector::zeros(m.interior_count());
        let quad = assemble_stiffness(&m, &k, Diffusion::Quadratic, Some(&zero)).unwrap();
        assert_eq!(lin.to_dense(), quad.to_dense());
        assert!(assemble_stiffness(&m, &k, Diffusion::Quadratic, None).is_err());
    }

    #[test]
    fn stiffness_scales_with_kappa() {
        let m = Mesh::new(2, 3).unwrap();
        let k = random_kappa(&m, 5);
        let a = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        let a10 = assemble_stiffness(&m, &k.scaled(10.0).unwrap(), Diffusion::Linear, None).unwrap();
        assert!((a10.to_dense() - a.to_dense() * 10.0).amax() <= 1e-12 * a10.to_dense().amax());
        let u = random_field(&m, 1.0, 9);
        let f = apply_f(&m, &k, Diffusion::Linear, &u).unwrap();
        let f10 = apply_f(&m, &k.scaled(10.0).unwrap(), Diffusion::Linear, &u).unwrap();
        assert!((f10 - f * 10.0).amax() < 1e-9);
    }

    #[test]
    fn operators_are_symmetric() {
        let m = Mesh::new(3, 3).unwrap();
        let k = random_kappa(&m, 1);
        let u = random_field(&m, 0.5, 2);
        for op in [
            assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap(),
            assemble_stiffness(&m, &k, Diffusion::Quadratic, Some(&u)).unwrap(),
            g_jacobian(&m, Reaction::Cubic, &u).unwrap(),
        ] {
            assert!(op.symmetry_error() <= 1e-12);
        }
    }

    #[test]
    fn apply_f_linear_is_stiffness_times_u() {
        let m = Mesh::new(3, 2).unwrap();
        let k = random_kappa(&m, 7);
        let u = random_field(&m, 1.0, 8);
        let a = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        let f = apply_f(&m, &k, Diffusion::Linear, &u).unwrap();
        assert!((f - a.mul_vec(&u)).amax() < 1e-10);
        let zero = DVector::zeros(m.interior_count());
        assert_eq!(apply_f(&m, &k, Diffusion::Quadratic, &zero).unwrap().amax(), 0.0);
    }

    #[test]
    fn apply_f_quadratic_matches_picard_operator() {
        let m = Mesh::new(3, 2).unwrap();
        let k = random_kappa(&m, 17);
        let u = random_field(&m, 0.7, 18);
        let a = assemble_stiffness(&m, &k, Diffusion::Quadratic, Some(&u)).unwrap();
        let f = apply_f(&m, &k, Diffusion::Quadratic, &u).unwrap();
        assert!((f - a.mul_vec(&u)).amax() < 1e-9);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = Mesh::new(2, 3).unwrap();
        let k = random_kappa(&m, 11);
        let u = random_field(&m, 0.6, 12);
        let v = random_field(&m, 1.0, 13);
        let g0 = random_field(&m, 3.0, 14);
        let eps = 1e-6;
        let jf = f_jacobian(&m, &k, Diffusion::Quadratic, &u).unwrap();
        let fd = (apply_f(&m, &k, Diffusion::Quadratic, &(&u + &v * eps)).unwrap()
            - apply_f(&m, &k, Diffusion::Quadratic, &(&u - &v * eps)).unwrap())
            / (2.0 * eps);
        let jv = jf.mul_vec(&v);
        assert!((&fd - &jv).norm() <= 1e-7 * jv.norm());
        for r in [Reaction::Cubic, Reaction::Rational] {
            let jg = g_jacobian(&m, r, &u).unwrap();
            let fd = (apply_g(&m, r, &(&u + &v * eps), &g0).unwrap()
                - apply_g(&m, r, &(&u - &v * eps), &g0).unwrap())
                / (2.0 * eps);
            let jv = jg.mul_vec(&v);
            assert!((&fd - &jv).norm() <= 1e-7 * jv.norm());
        }
    }

    #[test]
    fn reaction_roots_and_zero_energy() {
        let m = Mesh::new(2, 2).unwrap();
        let zero = DVector::zeros(m.interior_count());
        let ones = DVector::from_element(m.interior_count(), 1.0);
        assert_eq!(apply_g(&m, Reaction::Cubic, &zero, &zero).unwrap().amax(), 0.0);
        // boundary values are zero, so u = 1 only on interior nodes; check
        // the pointwise root instead of the assembled vector.
        assert_eq!(Reaction::Cubic.value(1.0, 0.0), 0.0);
        assert!(apply_g(&m, Reaction::Cubic, &ones, &zero).is_ok());
        assert_eq!(apply_g(&m, Reaction::Rational, &zero, &zero).unwrap().amax(), 0.0);
        assert_eq!(energy_g(&m, Reaction::Cubic, &zero, &zero).unwrap(), 0.0);
        assert_eq!(energy_g(&m, Reaction::Rational, &zero, &zero).unwrap(), 0.0);
        let k = CoefficientField::uniform(&m, 1.0).unwrap();
        assert_eq!(energy_f(&m, &k, &zero).unwrap(), 0.0);
    }

    #[test]
    fn rational_singularity_is_reported() {
        let m = Mesh::new(2, 2).unwrap();
        let u = DVector::from_element(m.interior_count(), -3.0);
        let zero = DVector::zeros(m.interior_count());
        assert!(matches!(
            apply_g(&m, Reaction::Rational, &u, &zero),
            Err(Error::Singularity { .. })
        ));
        assert!(energy_g(&m, Reaction::Rational, &u, &zero).is_err());
    }

    #[test]
    fn energy_f_scales_quadratically() {
        let m = Mesh::new(3, 2).unwrap();
        let k = random_kappa(&m, 21);
        let u = random_field(&m, 1.0, 22);
        let e = energy_f(&m, &k, &u).unwrap();
        let e3 = energy_f(&m, &k, &(&u * 3.0)).unwrap();
        assert!((e3 - 9.0 * e).abs() < 1e-12 * e3);
        let a = assemble_stiffness(&m, &k, Diffusion::Linear, None).unwrap();
        assert!((2.0 * e - a.quadratic(&u)).abs() < 1e-10 * e);
    }
}
