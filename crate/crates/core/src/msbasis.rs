//! CEM coarse space `V_H1` and the complementary space `V_H2`.
//!
//! Per coarse block an auxiliary eigenproblem (kappa-stiffness against the
//! `s`-mass) gives `psi`. Each `psi` seeds an energy-minimizing basis function
//! on an oversampled region, constrained to reproduce it in the `s` inner
//! product. `V_H2` comes from a second eigenproblem on the `s`-orthogonal
//! complement of the auxiliary space, localized the same way.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::femcore::{assemble_mass, assemble_stiffness, assemble_weighted_mass, CoefficientField, Diffusion};
use crate::grid::{oversample, pou_gradient_energy, Mesh, OversampleRegion};
use crate::linalg::{
    generalized_symmetric_eigen, min_eigenvalue, null_space, SparseOperator, Structure, SystemMatrix,
};

/// Weight `kappa~` of the auxiliary mass `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    /// `kappa sum_i |grad chi_i|^2` with the coarse bilinear partition of unity.
    #[default]
    PouGradient,
    /// `kappa H^-2`.
    ScaledKappa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    /// Auxiliary functions per block (`L_i`).
    pub aux_per_block: usize,
    /// Second-type auxiliary functions per block (`J_i`).
    pub aux2_per_block: usize,
    /// Oversampling layers in coarse blocks.
    pub layers: usize,
    pub weight: WeightChoice,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            aux_per_block: 3,
            aux2_per_block: 3,
            layers: 2,
            weight: WeightChoice::PouGradient,
        }
    }
}

/// The `s`-mass over interior nodes.
pub fn weight_matrix(mesh: &Mesh, kappa: &CoefficientField, weight: WeightChoice) -> Result<SparseOperator> {
    let h2 = mesh.coarse_size().powi(2);
    match weight {
        WeightChoice::ScaledKappa => assemble_weighted_mass(mesh, |c, _, _| kappa.get(c) / h2),
        WeightChoice::PouGradient => assemble_weighted_mass(mesh, |c, x, y| {
            kappa.get(c) * pou_gradient_energy(mesh, mesh.cell_block(c), x, y)
        }),
    }
}

/// Leading eigenpairs of one coarse block, as local vectors over `dofs`.
#[derive(Debug, Clone)]
pub struct BlockEigen {
    pub block: usize,
    /// Interior indices of the block's fine nodes.
    pub dofs: Vec<usize>,
    pub eigenvalues: DVector<f64>,
    /// One column per eigenvector.
    pub vectors: DMatrix<f64>,
}

impl BlockEigen {
    pub fn count(&self) -> usize {
        self.vectors.ncols()
    }

    /// Column `j` scattered to the interior-node numbering.
    pub fn global_vector(&self, j: usize, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for (l, &d) in self.dofs.iter().enumerate() {
            v[d] = self.vectors[(l, j)];
        }
        v
    }
}

fn check_count(requested: usize, available: usize, what: &str, block: usize) -> Result<()> {
    if requested > available {
        return Err(Error::InvalidArgument(format!(
            "{requested} {what} requested on block {block} but only {available} are available"
        )));
    }
    Ok(())
}

fn leading(block: usize, dofs: Vec<usize>, vals: DVector<f64>, vecs: DMatrix<f64>, count: usize) -> BlockEigen {
    BlockEigen {
        block,
        dofs,
        eigenvalues: vals.rows(0, count).into_owned(),
        vectors: vecs.columns(0, count).into_owned(),
    }
}

/// First `count` eigenpairs of the block stiffness against the block `s`-mass
/// with zero trace on the block boundary.
pub fn solve_aux_eigen(
    mesh: &Mesh,
    stiffness: &SparseOperator,
    s_matrix: &SparseOperator,
    block: usize,
    count: usize,
) -> Result<BlockEigen> {
    let dofs = mesh.block_interior_dofs(block);
    check_count(count, dofs.len(), "auxiliary functions", block)?;
    let (vals, vecs) = generalized_symmetric_eigen(&stiffness.dense_block(&dofs), &s_matrix.dense_block(&dofs))?;
    Ok(leading(block, dofs, vals, vecs, count))
}

/// Auxiliary space over all blocks.
#[derive(Debug, Clone)]
pub struct AuxSpace {
    pub weight: WeightChoice,
    pub s_matrix: SparseOperator,
    pub blocks: Vec<BlockEigen>,
}

impl AuxSpace {
    pub fn build(
        mesh: &Mesh,
        stiffness: &SparseOperator,
        s_matrix: SparseOperator,
        weight: WeightChoice,
        count: usize,
    ) -> Result<AuxSpace> {
        let blocks = (0..mesh.block_count())
            .into_par_iter()
            .map(|b| solve_aux_eigen(mesh, stiffness, &s_matrix, b, count))
            .collect::<Result<Vec<_>>>()?;
        Ok(AuxSpace {
            weight,
            s_matrix,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(BlockEigen::count).sum()
    }

    /// `s`-orthogonal projection onto the span of all auxiliary functions.
    /// Blocks have disjoint supports, so the projection is block-diagonal.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        let su = self.s_matrix.mul_vec(u);
        let mut out = DVector::zeros(u.len());
        for blk in &self.blocks {
            let local = DVector::from_iterator(blk.dofs.len(), blk.dofs.iter().map(|&d| su[d]));
            let coef = blk.vectors.tr_mul(&local);
            let v = &blk.vectors * coef;
            for (l, &d) in blk.dofs.iter().enumerate() {
                out[d] += v[l];
            }
        }
        out
    }
}

/// First `count` eigenpairs of the block stiffness against the plain mass,
/// restricted to fields `s`-orthogonal to the block's auxiliary functions.
/// Eigenvectors are mass-orthonormal.
pub fn solve_vh2_eigen(
    stiffness: &SparseOperator,
    mass: &SparseOperator,
    aux: &AuxSpace,
    block: usize,
    count: usize,
) -> Result<BlockEigen> {
    let blk = &aux.blocks[block];
    let dofs = blk.dofs.clone();
    let available = dofs.len() - blk.count();
    check_count(count, available, "second-type auxiliary functions", block)?;
    let s_local = aux.s_matrix.dense_block(&dofs);
    let constraints = blk.vectors.transpose() * &s_local;
    let z = null_space(&constraints);
    let a = z.transpose() * stiffness.dense_block(&dofs) * &z;
    let m = z.transpose() * mass.dense_block(&dofs) * &z;
    let (vals, y) = generalized_symmetric_eigen(&a, &m)?;
    let vecs = &z * y;
    Ok(leading(block, dofs, vals, vecs, count))
}

/// Minimizes `x^T A x` over the region subject to `C x = T` for each column of
/// `T`, through the Schur complement of the saddle-point system. Returns the
/// minimizers as columns and the largest relative constraint residual.
pub fn constrained_minimizers(
    local_stiffness: &SystemMatrix,
    constraints: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    block: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let n = local_stiffness.dim();
    if constraints.ncols() != n || targets.nrows() != constraints.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "constraints {}x{}, targets {}x{}, region dof {n}",
            constraints.nrows(),
            constraints.ncols(),
            targets.nrows(),
            targets.ncols()
        )));
    }
    if targets.ncols() == 0 || constraints.nrows() == 0 {
        return Ok((DMatrix::zeros(n, targets.ncols()), 0.0));
    }
    let kkt = |reason: String| Error::SingularKkt { block, reason };
    let fac = local_stiffness
        .factor(Structure::SymmetricPositiveDefinite)
        .map_err(|e| kkt(e.to_string()))?;
    let x = fac.solve_columns(&constraints.transpose()).map_err(|e| kkt(e.to_string()))?;
    let schur = constraints * &x;
    let chol = nalgebra::Cholesky::new(crate::linalg::symmetrize(&schur))
        .ok_or_else(|| kkt("constraint Schur complement is not positive definite".into()))?;
    let phi = x * chol.solve(targets);
    let achieved = constraints * &phi;
    let mut worst = 0.0f64;
    for j in 0..targets.ncols() {
        let t = targets.column(j).norm();
        let r = (achieved.column(j) - targets.column(j)).norm();
        worst = worst.max(if t > 0.0 { r / t } else { r });
    }
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(kkt("non-finite solution".into()));
    }
    Ok((phi, worst))
}

/// Rows `(W v)^T` restricted to the region, one per eigenvector of the
/// region's blocks.
fn region_rows(
    region: &OversampleRegion,
    eig: &[BlockEigen],
    weight: &SparseOperator,
    n: usize,
) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for &b in &region.block_set {
        let blk = &eig[b];
        for j in 0..blk.count() {
            let wv = weight.mul_vec(&blk.global_vector(j, n));
            rows.push(DVector::from_iterator(
                region.dof_count(),
                region.local_dofs.iter().map(|&d| wv[d]),
            ));
            tags.push((b, j));
        }
    }
    let mut c = DMatrix::zeros(rows.len(), region.dof_count());
    for (r, row) in rows.iter().enumerate() {
        c.row_mut(r).copy_from(&row.transpose());
    }
    (c, tags)
}

fn unit_targets(tags: &[(usize, usize)], block: usize, count: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(tags.len(), count);
    for (r, &(b, j)) in tags.iter().enumerate() {
        if b == block && j < count {
            t[(r, j)] = 1.0;
        }
    }
    t
}

fn local_stiffness(stiffness: &SparseOperator, region: &OversampleRegion) -> SystemMatrix {
    SystemMatrix::Sparse(stiffness.submatrix(&region.local_dofs, &region.local_dofs))
}

/// CEM basis functions of one block as region-local columns. The targets use
/// that the auxiliary functions are `s`-orthonormal.
pub fn solve_cem_basis(
    mesh: &Mesh,
    stiffness: &SparseOperator,
    aux: &AuxSpace,
    region: &OversampleRegion,
) -> Result<(DMatrix<f64>, f64)> {
    let n = mesh.interior_count();
    let block = region.center_block;
    let (c, tags) = region_rows(region, &aux.blocks, &aux.s_matrix, n);
    let t = unit_targets(&tags, block, aux.blocks[block].count());
    constrained_minimizers(&local_stiffness(stiffness, region), &c, &t, block)
}

/// `V_H2` basis functions of one block: zero `s`-moments against every
/// auxiliary function and unit mass moments against the block's own `xi`.
pub fn solve_vh2_basis(
    mesh: &Mesh,
    stiffness: &SparseOperator,
    mass: &SparseOperator,
    aux: &AuxSpace,
    aux2: &[BlockEigen],
    region: &OversampleRegion,
) -> Result<(DMatrix<f64>, f64)> {
    let n = mesh.interior_count();
    let block = region.center_block;
    let (c1, tags1) = region_rows(region, &aux.blocks, &aux.s_matrix, n);
    let (c2, tags2) = region_rows(region, aux2, mass, n);
    let count = aux2[block].count();
    let mut c = DMatrix::zeros(c1.nrows() + c2.nrows(), region.dof_count());
    c.rows_mut(0, c1.nrows()).copy_from(&c1);
    c.rows_mut(c1.nrows(), c2.nrows()).copy_from(&c2);
    let mut t = DMatrix::zeros(tags1.len() + tags2.len(), count);
    t.rows_mut(tags1.len(), tags2.len())
        .copy_from(&unit_targets(&tags2, block, count));
    constrained_minimizers(&local_stiffness(stiffness, region), &c, &t, block)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Cem,
    Aux2,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Cem => "cem",
            BasisKind::Aux2 => "aux2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisTag {
    pub block: usize,
    pub index: usize,
    pub kind: BasisKind,
}

/// Residuals and spectra recorded during construction.
#[derive(Debug, Clone, Default)]
pub struct BasisDiagnostics {
    pub cem_residual: f64,
    pub aux2_residual: f64,
    pub aux_eigenvalues: Vec<Vec<f64>>,
    pub aux2_eigenvalues: Vec<Vec<f64>>,
}

/// Reduced operators `R_a^T X R_b` for the two subspaces.
#[derive(Debug, Clone)]
pub struct ReducedBlocks {
    pub m11: DMatrix<f64>,
    pub m12: DMatrix<f64>,
    pub m22: DMatrix<f64>,
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a22: DMatrix<f64>,
}

fn cross(op: &SparseOperator, left: &SparseOperator, right: &SparseOperator) -> DMatrix<f64> {
    left.transpose().matmul(&op.matmul(right)).to_dense()
}

pub fn assemble_reduced(
    r1: &SparseOperator,
    r2: &SparseOperator,
    mass: &SparseOperator,
    stiffness: &SparseOperator,
) -> Result<ReducedBlocks> {
    let n = mass.nrows();
    if r1.nrows() != n || r2.nrows() != n || stiffness.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis rows {} / {} against operator size {n}",
            r1.nrows(),
            r2.nrows()
        )));
    }
    let sym = crate::linalg::symmetrize;
    Ok(ReducedBlocks {
        m11: sym(&mass.project(r1)),
        m12: cross(mass, r1, r2),
        m22: sym(&mass.project(r2)),
        a11: sym(&stiffness.project(r1)),
        a12: cross(stiffness, r1, r2),
        a22: sym(&stiffness.project(r2)),
    })
}

/// `V_H1 (+) V_H2` as sparse column matrices over interior nodes.
#[derive(Debug, Clone)]
pub struct MultiscaleSpace {
    pub r1: SparseOperator,
    pub r2: SparseOperator,
    pub tags: Vec<BasisTag>,
    pub reduced: ReducedBlocks,
    pub diagnostics: BasisDiagnostics,
}

fn columns_to_sparse(n: usize, cols: &[(Vec<usize>, DVector<f64>)]) -> SparseOperator {
    let triplets = cols.iter().enumerate().flat_map(|(c, (dofs, v))| {
        dofs.iter()
            .zip(v.iter())
            .filter(|(_, x)| **x != 0.0)
            .map(move |(&d, &x)| (d, c, x))
    });
    SparseOperator::from_triplets(n, cols.len(), triplets)
}

type LocalColumns = Vec<(Vec<usize>, DVector<f64>)>;

fn localize(region: &OversampleRegion, phi: &DMatrix<f64>) -> LocalColumns {
    (0..phi.ncols())
        .map(|j| (region.local_dofs.clone(), phi.column(j).into_owned()))
        .collect()
}

impl MultiscaleSpace {
    pub fn build(mesh: &Mesh, kappa: &CoefficientField, config: &BasisConfig) -> Result<MultiscaleSpace> {
        let stiffness = assemble_stiffness(mesh, kappa, Diffusion::Linear, None)?;
        let mass = assemble_mass(mesh, None)?;
        let s = weight_matrix(mesh, kappa, config.weight)?;
        let aux = AuxSpace::build(mesh, &stiffness, s, config.weight, config.aux_per_block)?;
        Self::from_aux(mesh, &stiffness, &mass, &aux, config)
    }

    pub fn from_aux(
        mesh: &Mesh,
        stiffness: &SparseOperator,
        mass: &SparseOperator,
        aux: &AuxSpace,
        config: &BasisConfig,
    ) -> Result<MultiscaleSpace> {
        let n = mesh.interior_count();
        let blocks: Vec<usize> = (0..mesh.block_count()).collect();
        let aux2 = blocks
            .par_iter()
            .map(|&b| solve_vh2_eigen(stiffness, mass, aux, b, config.aux2_per_block))
            .collect::<Result<Vec<_>>>()?;
        let per_block = blocks
            .par_iter()
            .map(|&b| -> Result<(LocalColumns, f64, LocalColumns, f64)> {
                let region = oversample(mesh, b, config.layers)?;
                let (phi, r1) = solve_cem_basis(mesh, stiffness, aux, &region)?;
                let (zeta, r2) = solve_vh2_basis(mesh, stiffness, mass, aux, &aux2, &region)?;
                Ok((localize(&region, &phi), r1, localize(&region, &zeta), r2))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cols1 = Vec::new();
        let mut cols2 = Vec::new();
        let mut tags1 = Vec::new();
        let mut tags2 = Vec::new();
        let mut diagnostics = BasisDiagnostics::default();
        for (b, (phi, r1, zeta, r2)) in per_block.into_iter().enumerate() {
            for (j, c) in phi.into_iter().enumerate() {
                cols1.push(c);
                tags1.push(BasisTag { block: b, index: j, kind: BasisKind::Cem });
            }
            for (j, c) in zeta.into_iter().enumerate() {
                cols2.push(c);
                tags2.push(BasisTag { block: b, index: j, kind: BasisKind::Aux2 });
            }
            diagnostics.cem_residual = diagnostics.cem_residual.max(r1);
            diagnostics.aux2_residual = diagnostics.aux2_residual.max(r2);
        }
        diagnostics.aux_eigenvalues = aux.blocks.iter().map(|b| b.eigenvalues.iter().copied().collect()).collect();
        diagnostics.aux2_eigenvalues = aux2.iter().map(|b| b.eigenvalues.iter().copied().collect()).collect();
        tags1.extend(tags2);
        let r1 = columns_to_sparse(n, &cols1);
        let r2 = columns_to_sparse(n, &cols2);
        let mut space = Self::from_columns(r1, r2, tags1, mass, stiffness)?;
        space.diagnostics = diagnostics;
        Ok(space)
    }

    pub fn from_columns(
        r1: SparseOperator,
        r2: SparseOperator,
        tags: Vec<BasisTag>,
        mass: &SparseOperator,
        stiffness: &SparseOperator,
    ) -> Result<MultiscaleSpace> {
        if tags.len() != r1.ncols() + r2.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} tags for {} columns",
                tags.len(),
                r1.ncols() + r2.ncols()
            )));
        }
        let reduced = assemble_reduced(&r1, &r2, mass, stiffness)?;
        Ok(MultiscaleSpace {
            r1,
            r2,
            tags,
            reduced,
            diagnostics: BasisDiagnostics::default(),
        })
    }

    pub fn dim1(&self) -> usize {
        self.r1.ncols()
    }

    pub fn dim2(&self) -> usize {
        self.r2.ncols()
    }

    /// `[R1 R2]`.
    pub fn combined(&self) -> SparseOperator {
        let n1 = self.dim1();
        let triplets = self
            .r1
            .csr()
            .triplet_iter()
            .map(|(i, j, v)| (i, j, *v))
            .chain(self.r2.csr().triplet_iter().map(|(i, j, v)| (i, j + n1, *v)));
        SparseOperator::from_triplets(self.r1.nrows(), n1 + self.dim2(), triplets)
    }

    /// Full reduced mass `[[M11, M12], [M21, M22]]`.
    pub fn combined_mass(&self) -> DMatrix<f64> {
        stack(&self.reduced.m11, &self.reduced.m12, &self.reduced.m22)
    }

    pub fn combined_stiffness(&self) -> DMatrix<f64> {
        stack(&self.reduced.a11, &self.reduced.a12, &self.reduced.a22)
    }

    /// Number of mass-Gram singular values above `tol` times the largest.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let g = self.combined_mass();
        if g.nrows() == 0 {
            return 0;
        }
        let eig = nalgebra::SymmetricEigen::new(crate::linalg::symmetrize(&g)).eigenvalues;
        let sv: Vec<f64> = eig.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > tol * smax).count()
    }

    /// Smallest eigenvalues of the diagonal reduced mass blocks.
    pub fn mass_block_min_eigenvalues(&self) -> (f64, f64) {
        (min_eigenvalue(&self.reduced.m11), min_eigenvalue(&self.reduced.m22))
    }
}

fn stack(d1: &DMatrix<f64>, off: &DMatrix<f64>, d2: &DMatrix<f64>) -> DMatrix<f64> {
    let (n1, n2) = (d1.nrows(), d2.nrows());
    let mut m = DMatrix::zeros(n1 + n2, n1 + n2);
    m.view_mut((0, 0), (n1, n1)).copy_from(d1);
    m.view_mut((0, n1), (n1, n2)).copy_from(off);
    m.view_mut((n1, 0), (n2, n1)).copy_from(&off.transpose());
    m.view_mut((n1, n1), (n2, n2)).copy_from(d2);
    m
}

/// Writes `basis.txt` (header `rows cols`, then one column per line) and
/// `manifest.csv` into `dir`.
pub fn export_basis(space: &MultiscaleSpace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let all = space.combined().to_dense();
    let mut text = String::new();
    writeln!(text, "{} {}", all.nrows(), all.ncols()).expect("string write");
    for j in 0..all.ncols() {
        let line: Vec<String> = all.column(j).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(text, "{}", line.join(" ")).expect("string write");
    }
    std::fs::write(dir.join("basis.txt"), text)?;
    let mut manifest = String::from("column,block,index,type\n");
    for (c, t) in space.tags.iter().enumerate() {
        writeln!(manifest, "{c},{},{},{}", t.block, t.index, t.kind.as_str()).expect("string write");
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Reads a basis written by [`export_basis`] and rebuilds the reduced blocks.
pub fn import_basis(dir: &Path, mass: &SparseOperator, stiffness: &SparseOperator) -> Result<MultiscaleSpace> {
    let text = std::fs::read_to_string(dir.join("basis.txt"))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty basis file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad basis header '{header}'"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Format(format!("bad basis header '{header}'")));
    };
    if rows != mass.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {rows} rows, mesh has {} interior nodes",
            mass.nrows()
        )));
    }
    let mut columns = Vec::with_capacity(cols);
    for (j, line) in lines.take(cols).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad value in basis column {j}"))))
            .collect::<Result<_>>()?;
        if v.len() != rows {
            return Err(Error::Format(format!("basis column {j} has {} entries", v.len())));
        }
        columns.push(v);
    }
    if columns.len() != cols {
        return Err(Error::Format(format!("expected {cols} basis columns, found {}", columns.len())));
    }

    let manifest = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut tags = Vec::with_capacity(cols);
    for line in manifest.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("bad manifest line '{line}'")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad manifest line '{line}'")));
        let kind = match f[3] {
            "cem" => BasisKind::Cem,
            "aux2" => BasisKind::Aux2,
            other => return Err(Error::Format(format!("unknown basis type '{other}'"))),
        };
        tags.push(BasisTag { block: parse(f[1])?, index: parse(f[2])?, kind });
    }
    if tags.len() != cols {
        return Err(Error::Format(format!("manifest lists {} columns, basis has {cols}", tags.len())));
    }
    let n1 = tags.iter().take_while(|t| t.kind == BasisKind::Cem).count();
    if tags[n1..].iter().any(|t| t.kind != BasisKind::Aux2) {
        return Err(Error::Format("cem columns must precede aux2 columns".into()));
    }
    let build = |range: std::ops::Range<usize>| {
        let off = range.start;
        let triplets: Vec<_> = range
            .flat_map(|c| {
                columns[c]
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(r, &v)| (r, c - off, v))
            })
            .collect();
        triplets
    };
    let r1 = SparseOperator::from_triplets(rows, n1, build(0..n1));
    let r2 = SparseOperator::from_triplets(rows, cols - n1, build(n1..cols));
    MultiscaleSpace::from_columns(r1, r2, tags, mass, stiffness)
}
