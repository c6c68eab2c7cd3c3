//! The discrete nonlocal calculus: gradient, divergence, flux recovery and
//! its adjoint, antisymmetrization, and the weighted inner products.
//!
//! Two-point fluxes are stored antisymmetrically on unordered pairs `(i, j)`,
//! `i < j`; the value at the reversed ordering is implicitly negated. The
//! divergence is the exact negative transpose of the assembled gradient under
//! the mesh inner products, so the discrete integration-by-parts identity
//! holds to machine precision rather than to quadrature accuracy.

use crate::error::{Error, Result};
use crate::geometry::{CellLabel, Mesh, PairList, NO_RANK};
use rayon::prelude::*;

/// Where a scalar cell field lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// One value per interior cell; implicitly zero on the collar.
    Interior,
    /// One value per cell of the padded mesh.
    AllCells,
}

/// Piecewise-constant scalar field.
#[derive(Debug, Clone)]
pub struct CellField {
    pub support: Support,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn zeros_interior(mesh: &Mesh) -> Self {
        CellField { support: Support::Interior, values: vec![0.0; mesh.n_interior()] }
    }

    pub fn zeros_all(mesh: &Mesh) -> Self {
        CellField { support: Support::AllCells, values: vec![0.0; mesh.n_cells()] }
    }

    pub fn from_fn_interior(mesh: &Mesh, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = mesh.interior_ids.iter().map(|&id| f(mesh.center(id))).collect();
        CellField { support: Support::Interior, values }
    }

    /// Value at a mesh cell, honoring the zero extension to the collar.
    pub fn at_cell(&self, mesh: &Mesh, cell: u32) -> f64 {
        match self.support {
            Support::AllCells => self.values[cell as usize],
            Support::Interior => {
                let r = mesh.interior_rank[cell as usize];
                if r == NO_RANK {
                    0.0
                } else {
                    self.values[r as usize]
                }
            }
        }
    }
}

/// Piecewise-constant vector field, `dim` components per cell.
#[derive(Debug, Clone)]
pub struct VectorCellField {
    pub support: Support,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VectorCellField {
    pub fn zeros_all(mesh: &Mesh) -> Self {
        VectorCellField {
            support: Support::AllCells,
            dim: mesh.domain.dim,
            values: vec![0.0; mesh.n_cells() * mesh.domain.dim],
        }
    }

    pub fn from_fn_all(mesh: &Mesh, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let d = mesh.domain.dim;
        let mut values = vec![0.0; mesh.n_cells() * d];
        for id in 0..mesh.n_cells() {
            f(mesh.center(id as u32), &mut values[id * d..(id + 1) * d]);
        }
        VectorCellField { support: Support::AllCells, dim: d, values }
    }

    pub fn at_cell(&self, mesh: &Mesh, cell: u32) -> &[f64] {
        debug_assert_eq!(self.support, Support::AllCells);
        let _ = mesh;
        &self.values[cell as usize * self.dim..(cell as usize + 1) * self.dim]
    }
}

/// Antisymmetric two-point flux on the pair list (value stored for i < j).
#[derive(Debug, Clone)]
pub struct PairFlux {
    pub values: Vec<f64>,
}

impl PairFlux {
    pub fn zeros(pairs: &PairList) -> Self {
        PairFlux { values: vec![0.0; pairs.len()] }
    }
}

/// Symmetric two-point field on the pair list (used for paired conductivity).
#[derive(Debug, Clone)]
pub struct SymPairField {
    pub values: Vec<f64>,
}

/// Nonlocal gradient: `(Gu)_{ij} = (u_i - u_j) omega_{ij}` with `u` extended
/// by zero to the collar.
pub fn apply_gradient(u: &CellField, pairs: &PairList, mesh: &Mesh) -> PairFlux {
    let values: Vec<f64> = (0..pairs.len())
        .into_par_iter()
        .map(|p| {
            let ui = u.at_cell(mesh, pairs.i[p]);
            let uj = u.at_cell(mesh, pairs.j[p]);
            (ui - uj) * pairs.omega[p]
        })
        .collect();
    PairFlux { values }
}

/// Nonlocal divergence on interior cells:
/// `(Dq)_k = -2 h^n sum_j qdd(x_k, x_j) omega_{kj}`, the exact negative
/// adjoint of [`apply_gradient`] under the discrete inner products.
pub fn apply_divergence(q: &PairFlux, pairs: &PairList, mesh: &Mesh) -> CellField {
    let hn = mesh.measure();
    let values: Vec<f64> = mesh
        .interior_ids
        .par_iter()
        .map(|&cell| {
            let mut acc = 0.0;
            for e in pairs.neighbors(cell) {
                let qv = e.sign as f64 * q.values[e.pair as usize];
                acc += qv * pairs.omega[e.pair as usize];
            }
            -2.0 * hn * acc
        })
        .collect();
    CellField { support: Support::Interior, values }
}

/// L2 inner product on the (antisymmetric) pair space:
/// `2 sum_{i<j} q_{ij} p_{ij} h^{2n}`; the factor two accounts for both
/// orderings of each unordered pair.
pub fn pair_inner(q: &PairFlux, p: &PairFlux, pairs: &PairList, mesh: &Mesh) -> Result<f64> {
    if q.values.len() != pairs.len() || p.values.len() != pairs.len() {
        return Err(Error::Structural(format!(
            "pair_inner: flux lengths {} and {} do not match the pair list ({})",
            q.values.len(),
            p.values.len(),
            pairs.len()
        )));
    }
    let h2n = mesh.measure() * mesh.measure();
    Ok(2.0 * h2n * crate::linalg::dot(&q.values, &p.values))
}

pub fn pair_norm(q: &PairFlux, pairs: &PairList, mesh: &Mesh) -> Result<f64> {
    Ok(pair_inner(q, q, pairs, mesh)?.sqrt())
}

/// L2(Omega) inner product of interior fields.
pub fn cell_inner(u: &CellField, v: &CellField, mesh: &Mesh) -> f64 {
    debug_assert_eq!(u.support, Support::Interior);
    debug_assert_eq!(v.support, Support::Interior);
    mesh.measure() * crate::linalg::dot(&u.values, &v.values)
}

pub fn cell_norm(u: &CellField, mesh: &Mesh) -> f64 {
    cell_inner(u, u, mesh).sqrt()
}

/// L2 inner product of vector fields over all mesh cells.
pub fn vector_inner(a: &VectorCellField, b: &VectorCellField, mesh: &Mesh) -> f64 {
    mesh.measure() * crate::linalg::dot(&a.values, &b.values)
}

pub fn vector_norm(a: &VectorCellField, mesh: &Mesh) -> f64 {
    vector_inner(a, a, mesh).sqrt()
}

/// Flux recovery `(Rq)_k = sum_j (x_k - x_j) qdd(x_k, x_j) omega_{kj} h^n`,
/// defined on every cell of the padded mesh.
pub fn flux_recovery(q: &PairFlux, pairs: &PairList, mesh: &Mesh) -> VectorCellField {
    let d = mesh.domain.dim;
    let hn = mesh.measure();
    let values: Vec<f64> = (0..mesh.n_cells() as u32)
        .into_par_iter()
        .flat_map_iter(|cell| {
            let ck = mesh.center(cell);
            let mut acc = [0.0f64; 3];
            for e in pairs.neighbors(cell) {
                let qv = e.sign as f64 * q.values[e.pair as usize];
                let w = pairs.omega[e.pair as usize] * qv * hn;
                let co = mesh.center(e.other);
                for ax in 0..d {
                    acc[ax] += (ck[ax] - co[ax]) * w;
                }
            }
            acc.into_iter().take(d)
        })
        .collect();
    VectorCellField { support: Support::AllCells, dim: d, values }
}

/// Adjoint recovery `(R*v)_{ij} = (v_i + v_j)/2 . (x_i - x_j) omega_{ij}`,
/// the Hilbert-space adjoint of [`flux_recovery`] on antisymmetric fluxes.
/// The formula is odd under swapping the pair, so the result lands in the
/// antisymmetric space by construction.
pub fn adjoint_recovery(v: &VectorCellField, pairs: &PairList, mesh: &Mesh) -> PairFlux {
    let d = mesh.domain.dim;
    let values: Vec<f64> = (0..pairs.len())
        .into_par_iter()
        .map(|p| {
            let ci = mesh.center(pairs.i[p]);
            let cj = mesh.center(pairs.j[p]);
            let vi = &v.values[pairs.i[p] as usize * d..pairs.i[p] as usize * d + d];
            let vj = &v.values[pairs.j[p] as usize * d..pairs.j[p] as usize * d + d];
            let mut acc = 0.0;
            for ax in 0..d {
                acc += 0.5 * (vi[ax] + vj[ax]) * (ci[ax] - cj[ax]);
            }
            acc * pairs.omega[p]
        })
        .collect();
    PairFlux { values }
}

/// Project a dense two-point array (row-major over ordered cell pairs of a
/// small mesh) onto the antisymmetric pair storage:
/// `q^a(x, x') = (q(x, x') - q(x', x)) / 2`.
pub fn antisymmetrize(raw: &[f64], pairs: &PairList, mesh: &Mesh) -> Result<PairFlux> {
    let n = mesh.n_cells();
    if raw.len() != n * n {
        return Err(Error::Structural(format!(
            "antisymmetrize: expected a dense {n}x{n} array, got {} entries",
            raw.len()
        )));
    }
    let values = (0..pairs.len())
        .map(|p| {
            let (a, b) = (pairs.i[p] as usize, pairs.j[p] as usize);
            0.5 * (raw[a * n + b] - raw[b * n + a])
        })
        .collect();
    Ok(PairFlux { values })
}

/// Interior cells whose full interaction ball lies inside the domain
/// (distance to the boundary at least `margin`).
pub fn interior_window(mesh: &Mesh, margin: f64) -> Vec<u32> {
    mesh.interior_ids
        .iter()
        .copied()
        .filter(|&id| {
            let c = mesh.center(id);
            (0..mesh.domain.dim).all(|d| {
                c[d] - mesh.domain.lo[d] >= margin - 1e-12
                    && mesh.domain.hi[d] - c[d] >= margin - 1e-12
            })
        })
        .collect()
}

/// Label-aware helper used by dumps and diagnostics.
pub fn is_interior(mesh: &Mesh, cell: u32) -> bool {
    mesh.labels[cell as usize] == CellLabel::Interior
}
