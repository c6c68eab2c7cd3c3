//! Uniform Cartesian discretization of the design domain, its interaction
//! collar, and the pair interaction list.
//!
//! The mesh covers a rectangular domain padded by `ceil(delta/h)` cell layers;
//! cells are labeled `Interior` (center inside the domain) or `Collar`. All
//! quadrature downstream is midpoint: fields are piecewise constant per cell,
//! kernels are evaluated at center offsets, and every cell carries measure
//! `h^n`. Pairs use the strict inclusion `|x_i - x_j| < delta`, so cells at
//! exactly the horizon do not interact.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use serde::{Deserialize, Serialize};

/// Axis-aligned open box in R^n, n in {1, 2, 3}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dim = lo.len();
        if !(1..=3).contains(&dim) || hi.len() != dim {
            return Err(Error::Config(format!(
                "domain: need matching lo/hi extents in 1 to 3 dimensions, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for d in 0..dim {
            if !(hi[d] > lo[d]) || !lo[d].is_finite() || !hi[d].is_finite() {
                return Err(Error::Config(format!(
                    "domain: axis {d} needs finite hi > lo, got [{}, {}]",
                    lo[d], hi[d]
                )));
            }
        }
        Ok(Domain { dim, lo, hi })
    }

    /// Measure of the box.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|d| self.hi[d] - self.lo[d]).product()
    }

    pub fn unit_square() -> Self {
        Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Interior,
    Collar,
}

/// One adjacency entry of a cell: the pair index, the other cell, and the
/// orientation sign (+1 when the cell is the first member of the stored pair).
#[derive(Debug, Clone, Copy)]
pub struct AdjEntry {
    pub pair: u32,
    pub other: u32,
    pub sign: i8,
}

/// Uniform cell-centered grid over the padded domain.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Domain,
    pub h: f64,
    /// Horizon the collar was built for.
    pub delta: f64,
    /// Collar layers per side.
    pub pad: usize,
    /// Grid extent per axis (interior plus two collars).
    pub dims: Vec<usize>,
    /// Interior cells per axis.
    pub interior_dims: Vec<usize>,
    /// Cell centers, `dim` coordinates per cell, row-major in cell id.
    pub centers: Vec<f64>,
    pub labels: Vec<CellLabel>,
    pub interior_ids: Vec<u32>,
    /// Map cell id -> interior rank (u32::MAX on collar cells).
    pub interior_rank: Vec<u32>,
}

pub const NO_RANK: u32 = u32::MAX;

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.labels.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior_ids.len()
    }

    /// Cell measure h^n.
    pub fn measure(&self) -> f64 {
        self.h.powi(self.domain.dim as i32)
    }

    /// Discrete measure of the domain, `N_interior * h^n`. The admissible-set
    /// volume budget is taken against this value so that the uniform design
    /// `kappa = gamma` is exactly on the constraint.
    pub fn interior_volume(&self) -> f64 {
        self.n_interior() as f64 * self.measure()
    }

    pub fn center(&self, cell: u32) -> &[f64] {
        let d = self.domain.dim;
        &self.centers[cell as usize * d..cell as usize * d + d]
    }

    /// Integer lattice coordinates of a cell (collar offset included).
    pub fn coords(&self, cell: u32) -> Vec<i64> {
        let mut id = cell as usize;
        let d = self.domain.dim;
        let mut out = vec![0i64; d];
        for ax in (0..d).rev() {
            out[ax] = (id % self.dims[ax]) as i64 - self.pad as i64;
            id /= self.dims[ax];
        }
        out
    }

    /// Cell id at lattice coordinates, if inside the padded grid.
    pub fn cell_at(&self, coords: &[i64]) -> Option<u32> {
        let mut id = 0usize;
        for ax in 0..self.domain.dim {
            let k = coords[ax] + self.pad as i64;
            if k < 0 || k >= self.dims[ax] as i64 {
                return None;
            }
            id = id * self.dims[ax] + k as usize;
        }
        Some(id as u32)
    }

    /// Euclidean distance from a cell center to the closed domain box.
    pub fn center_distance_to_domain(&self, cell: u32) -> f64 {
        let c = self.center(cell);
        let mut s = 0.0;
        for d in 0..self.domain.dim {
            let lo = self.domain.lo[d];
            let hi = self.domain.hi[d];
            let g = if c[d] < lo {
                lo - c[d]
            } else if c[d] > hi {
                c[d] - hi
            } else {
                0.0
            };
            s += g * g;
        }
        s.sqrt()
    }
}

/// Build the padded mesh for horizon `delta`. Requires `delta/h >= 2` so the
/// kernel support spans at least two cells.
pub fn build_mesh(domain: &Domain, h: f64, delta: f64) -> Result<Mesh> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("mesh: h must be positive, got {h}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("mesh: delta must be positive, got {delta}")));
    }
    if delta / h < 2.0 - 1e-12 {
        return Err(Error::Resolution(format!(
            "mesh: delta/h = {:.6} under-resolves the kernel (need delta/h >= 2)",
            delta / h
        )));
    }
    let dim = domain.dim;
    let pad = (delta / h - 1e-12).ceil() as usize;
    let mut interior_dims = vec![0usize; dim];
    for d in 0..dim {
        // number of lattice cells whose center lies strictly inside the box
        interior_dims[d] = ((domain.hi[d] - domain.lo[d]) / h - 0.5 + 1e-12).ceil() as usize;
        if interior_dims[d] == 0 {
            return Err(Error::Config(format!(
                "mesh: h = {h} leaves no interior cell along axis {d}"
            )));
        }
    }
    let dims: Vec<usize> = interior_dims.iter().map(|&n| n + 2 * pad).collect();
    let n_cells: usize = dims.iter().product();
    let mut centers = Vec::with_capacity(n_cells * dim);
    let mut labels = Vec::with_capacity(n_cells);
    let mut interior_ids = Vec::new();
    let mut interior_rank = vec![NO_RANK; n_cells];
    let mut coord = vec![0usize; dim];
    for id in 0..n_cells {
        let mut rem = id;
        for ax in (0..dim).rev() {
            coord[ax] = rem % dims[ax];
            rem /= dims[ax];
        }
        let mut inside = true;
        for ax in 0..dim {
            let k = coord[ax] as i64 - pad as i64;
            let c = domain.lo[ax] + (k as f64 + 0.5) * h;
            centers.push(c);
            inside &= c > domain.lo[ax] && c < domain.hi[ax];
        }
        if inside {
            interior_rank[id] = interior_ids.len() as u32;
            interior_ids.push(id as u32);
            labels.push(CellLabel::Interior);
        } else {
            labels.push(CellLabel::Collar);
        }
    }
    Ok(Mesh {
        domain: domain.clone(),
        h,
        delta,
        pad,
        dims,
        interior_dims,
        centers,
        labels,
        interior_ids,
        interior_rank,
    })
}

/// Unordered interaction pairs `(i, j)`, `i < j`, with kernel weights.
#[derive(Debug, Clone)]
pub struct PairList {
    pub delta: f64,
    pub i: Vec<u32>,
    pub j: Vec<u32>,
    pub omega: Vec<f64>,
    /// CSR offsets into `adj`, one slice per cell.
    pub adj_offsets: Vec<u32>,
    pub adj: Vec<AdjEntry>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Adjacency slice of a cell.
    pub fn neighbors(&self, cell: u32) -> &[AdjEntry] {
        let lo = self.adj_offsets[cell as usize] as usize;
        let hi = self.adj_offsets[cell as usize + 1] as usize;
        &self.adj[lo..hi]
    }
}

/// Relative slack applied to the strict inclusion test so that lattice
/// distances within rounding noise of the horizon count as ties and drop out.
const TIE_TOL: f64 = 1e-9;

/// Lexicographically positive lattice offsets with `|o| h < delta` (strict).
fn positive_offsets(dim: usize, h: f64, delta: f64) -> Vec<(Vec<i64>, f64)> {
    let reach = (delta / h).ceil() as i64;
    let limit = delta * delta * (1.0 - TIE_TOL);
    let mut offs = Vec::new();
    let mut o = vec![0i64; dim];
    fn rec(ax: usize, dim: usize, reach: i64, o: &mut Vec<i64>, h: f64, limit: f64, out: &mut Vec<(Vec<i64>, f64)>) {
        if ax == dim {
            let first_nonzero = o.iter().find(|&&v| v != 0);
            if first_nonzero.map_or(false, |&v| v > 0) {
                let r2: f64 = o.iter().map(|&v| (v as f64 * h) * (v as f64 * h)).sum();
                if r2 < limit {
                    out.push((o.clone(), r2.sqrt()));
                }
            }
            return;
        }
        for v in -reach..=reach {
            o[ax] = v;
            rec(ax + 1, dim, reach, o, h, limit, out);
        }
        o[ax] = 0;
    }
    rec(0, dim, reach, &mut o, h, limit, &mut offs);
    offs
}

/// Build all interaction pairs for the mesh under the given kernel. The
/// kernel horizon may not exceed the horizon the collar was built for.
pub fn build_pairs(mesh: &Mesh, kernel: &KernelSpec) -> Result<PairList> {
    if kernel.dim != mesh.domain.dim {
        return Err(Error::Structural(format!(
            "build_pairs: kernel dimension {} does not match mesh dimension {}",
            kernel.dim, mesh.domain.dim
        )));
    }
    if kernel.delta > mesh.delta * (1.0 + 1e-12) {
        return Err(Error::Structural(format!(
            "build_pairs: kernel delta {} exceeds the collar horizon {}",
            kernel.delta, mesh.delta
        )));
    }
    let dim = mesh.domain.dim;
    let offsets = positive_offsets(dim, mesh.h, kernel.delta);
    let weighted: Vec<(Vec<i64>, f64)> = offsets
        .into_iter()
        .map(|(o, r)| (o, kernel.value_at_radius(r)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let n_cells = mesh.n_cells();
    let mut pi = Vec::new();
    let mut pj = Vec::new();
    let mut pw = Vec::new();
    let mut coords = vec![0i64; dim];
    let mut nb = vec![0i64; dim];
    for id in 0..n_cells as u32 {
        let c = mesh.coords(id);
        coords.copy_from_slice(&c);
        for (o, w) in &weighted {
            for ax in 0..dim {
                nb[ax] = coords[ax] + o[ax];
            }
            if let Some(jid) = mesh.cell_at(&nb) {
                debug_assert!(jid > id);
                pi.push(id);
                pj.push(jid);
                pw.push(*w);
            }
        }
    }
    // adjacency (CSR by cell, entries in pair order)
    let mut counts = vec![0u32; n_cells + 1];
    for p in 0..pi.len() {
        counts[pi[p] as usize + 1] += 1;
        counts[pj[p] as usize + 1] += 1;
    }
    for k in 0..n_cells {
        counts[k + 1] += counts[k];
    }
    let adj_offsets = counts.clone();
    let mut fill = counts;
    let mut adj = vec![AdjEntry { pair: 0, other: 0, sign: 0 }; 2 * pi.len()];
    for p in 0..pi.len() {
        let (a, b) = (pi[p] as usize, pj[p] as usize);
        adj[fill[a] as usize] = AdjEntry { pair: p as u32, other: pj[p], sign: 1 };
        fill[a] += 1;
        adj[fill[b] as usize] = AdjEntry { pair: p as u32, other: pi[p], sign: -1 };
        fill[b] += 1;
    }
    Ok(PairList { delta: kernel.delta, i: pi, j: pj, omega: pw, adj_offsets, adj })
}
