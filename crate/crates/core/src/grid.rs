//! Uniform fine grid on the unit square with a coarse-block partition.
//!
//! Node `(i, j)` sits at `(i h, j h)` and has global id `j (n + 1) + i`, where
//! `n` is the number of fine cells per side. Cell `(ci, cj)` has id
//! `cj n + ci`; coarse block `(bi, bj)` has id `bj n_coarse + bi`. Homogeneous
//! Dirichlet data is eliminated, so unknowns live on interior nodes only.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    n_coarse: usize,
    refinement: usize,
    n: usize,
    /// Interior index for each global node, `None` on the boundary.
    interior_index: Vec<Option<usize>>,
    /// Global node id for each interior index.
    interior_nodes: Vec<usize>,
}

impl Mesh {
    pub fn new(n_coarse_per_side: usize, refinement: usize) -> Result<Self> {
        if n_coarse_per_side == 0 || refinement == 0 {
            return Err(Error::InvalidArgument(format!(
                "mesh sizes must be positive (n_coarse = {n_coarse_per_side}, refinement = {refinement})"
            )));
        }
        let n = n_coarse_per_side * refinement;
        let side = n + 1;
        let mut interior_index = vec![None; side * side];
        let mut interior_nodes = Vec::with_capacity(n.saturating_sub(1).pow(2));
        for j in 1..n {
            for i in 1..n {
                let id = j * side + i;
                interior_index[id] = Some(interior_nodes.len());
                interior_nodes.push(id);
            }
        }
        Ok(Mesh {
            n_coarse: n_coarse_per_side,
            refinement,
            n,
            interior_index,
            interior_nodes,
        })
    }

    pub fn n_coarse_per_side(&self) -> usize {
        self.n_coarse
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// Fine cells per side.
    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n + 1
    }

    /// Coarse mesh size `H`.
    pub fn coarse_size(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }

    /// Fine mesh size `h`.
    pub fn fine_size(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    pub fn block_count(&self) -> usize {
        self.n_coarse * self.n_coarse
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn node_grid(&self, node: usize) -> (usize, usize) {
        (node % (self.n + 1), node / (self.n + 1))
    }

    pub fn node_position(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.node_grid(node);
        let h = self.fine_size();
        (i as f64 * h, j as f64 * h)
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// Corner nodes of a fine cell, counter-clockwise from the lower left.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (ci, cj) = (cell % self.n, cell / self.n);
        [
            self.node_id(ci, cj),
            self.node_id(ci + 1, cj),
            self.node_id(ci + 1, cj + 1),
            self.node_id(ci, cj + 1),
        ]
    }

    /// Interior indices of the cell corners (`None` on the boundary).
    pub fn cell_dofs(&self, cell: usize) -> [Option<usize>; 4] {
        self.cell_nodes(cell).map(|n| self.interior_index[n])
    }

    pub fn cell_origin(&self, cell: usize) -> (f64, f64) {
        let h = self.fine_size();
        ((cell % self.n) as f64 * h, (cell / self.n) as f64 * h)
    }

    pub fn cell_block(&self, cell: usize) -> usize {
        let (ci, cj) = (cell % self.n, cell / self.n);
        (cj / self.refinement) * self.n_coarse + ci / self.refinement
    }

    pub fn block_grid(&self, block: usize) -> (usize, usize) {
        (block % self.n_coarse, block / self.n_coarse)
    }

    /// Fine cells of a coarse block.
    pub fn block_cells(&self, block: usize) -> Vec<usize> {
        let (bi, bj) = self.block_grid(block);
        let r = self.refinement;
        let mut cells = Vec::with_capacity(r * r);
        for cj in bj * r..(bj + 1) * r {
            for ci in bi * r..(bi + 1) * r {
                cells.push(cj * self.n + ci);
            }
        }
        cells
    }

    /// Interior indices of the fine nodes strictly inside a coarse block, the
    /// degrees of freedom of `H^1_0(K_i)`.
    pub fn block_interior_dofs(&self, block: usize) -> Vec<usize> {
        let (bi, bj) = self.block_grid(block);
        self.rect_interior_dofs(bi, bj, bi + 1, bj + 1)
    }

    /// Interior indices of fine nodes strictly inside the block rectangle
    /// `[bi0, bi1) x [bj0, bj1)` (coarse units, exclusive upper bound).
    fn rect_interior_dofs(&self, bi0: usize, bj0: usize, bi1: usize, bj1: usize) -> Vec<usize> {
        let r = self.refinement;
        let mut dofs = Vec::new();
        for j in bj0 * r + 1..bj1 * r {
            for i in bi0 * r + 1..bi1 * r {
                if let Some(d) = self.interior_index[self.node_id(i, j)] {
                    dofs.push(d);
                }
            }
        }
        dofs
    }

    /// Expands an interior-node vector to all nodes with zero boundary values.
    pub fn expand(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut full = vec![0.0; self.node_count()];
        for (k, &node) in self.interior_nodes.iter().enumerate() {
            full[node] = u[k];
        }
        full
    }

    /// Restricts an all-node vector to interior nodes.
    pub fn restrict(&self, full: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.interior_count(),
            self.interior_nodes.iter().map(|&n| full[n]),
        )
    }

    /// Interpolates a function onto interior nodes.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(
            self.interior_count(),
            self.interior_nodes.iter().map(|&n| {
                let (x, y) = self.node_position(n);
                f(x, y)
            }),
        )
    }
}

/// Coarse block enlarged by a number of block layers and clipped to the domain.
#[derive(Debug, Clone)]
pub struct OversampleRegion {
    pub center_block: usize,
    pub layers: usize,
    /// Coarse blocks of the region, ascending.
    pub block_set: Vec<usize>,
    /// Interior indices of the fine nodes strictly inside the region, in
    /// local order. Nodes on the region boundary are excluded (zero trace).
    pub local_dofs: Vec<usize>,
    pub local_index: HashMap<usize, usize>,
}

impl OversampleRegion {
    pub fn dof_count(&self) -> usize {
        self.local_dofs.len()
    }

    pub fn contains_block(&self, block: usize) -> bool {
        self.block_set.binary_search(&block).is_ok()
    }
}

pub fn oversample(mesh: &Mesh, block: usize, layers: usize) -> Result<OversampleRegion> {
    if block >= mesh.block_count() {
        return Err(Error::InvalidArgument(format!(
            "coarse block {block} out of range ({} blocks)",
            mesh.block_count()
        )));
    }
    let nc = mesh.n_coarse_per_side();
    let (bi, bj) = mesh.block_grid(block);
    let i0 = bi.saturating_sub(layers);
    let j0 = bj.saturating_sub(layers);
    let i1 = (bi + layers + 1).min(nc);
    let j1 = (bj + layers + 1).min(nc);
    let mut block_set = Vec::with_capacity((i1 - i0) * (j1 - j0));
    for j in j0..j1 {
        for i in i0..i1 {
            block_set.push(j * nc + i);
        }
    }
    let local_dofs = mesh.rect_interior_dofs(i0, j0, i1, j1);
    let local_index = local_dofs.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    Ok(OversampleRegion {
        center_block: block,
        layers,
        block_set,
        local_dofs,
        local_index,
    })
}

/// Coarse bilinear hat functions, one per coarse vertex, sampled on every
/// fine node (boundary included). Vertex `(vi, vj)` has index
/// `vj (n_coarse + 1) + vi`.
pub fn partition_of_unity(mesh: &Mesh) -> Vec<Vec<f64>> {
    let nc = mesh.n_coarse_per_side();
    let big_h = mesh.coarse_size();
    let hat = |v: usize, x: f64| (1.0 - (x - v as f64 * big_h).abs() / big_h).max(0.0);
    let mut out = Vec::with_capacity((nc + 1) * (nc + 1));
    for vj in 0..=nc {
        for vi in 0..=nc {
            let values = (0..mesh.node_count())
                .map(|node| {
                    let (x, y) = mesh.node_position(node);
                    hat(vi, x) * hat(vj, y)
                })
                .collect();
            out.push(values);
        }
    }
    out
}

/// `sum_i |grad chi_i|^2` at a point inside coarse block `block`, for the
/// coarse bilinear partition of unity.
pub fn pou_gradient_energy(mesh: &Mesh, block: usize, x: f64, y: f64) -> f64 {
    let big_h = mesh.coarse_size();
    let (bi, bj) = mesh.block_grid(block);
    let s = x / big_h - bi as f64;
    let t = y / big_h - bj as f64;
    2.0 / (big_h * big_h) * ((1.0 - t).powi(2) + t * t + (1.0 - s).powi(2) + s * s)
}
