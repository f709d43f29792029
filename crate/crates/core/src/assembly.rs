//! Assembly of every operator, vector, energy and diagnostic of the scheme:
//! metric `M`, stiffness `A`, Nitsche boundary load `G`, linearized isometry
//! constraint `B`, spontaneous-curvature force `F`, the discrete energies,
//! the dG energy norm and the isometry defect.
//!
//! All cells are congruent, so basis traces and volume tables are tabulated
//! once and shared. The stiffness and metric decouple across the three
//! displacement components; both are assembled as scalar operators of size
//! `n_basis * n_cells` and applied componentwise to interleaved vectors
//! (see [`SparseOperator::matvec3`]).

use std::sync::Arc;

use crate::mesh::{CellSide, EdgeKind, Mesh};
use crate::space::{
    evaluate_from_table, side_reference_points, FieldDerivs, Space, Tabulation,
};


/// Jump penalties and the zero-order metric weight.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub epsilon: f64,
}

impl PenaltyParams {
    /// Defaults for a plate with clamped edges: the metric is coercive
    /// without the zero-order term.
    pub fn clamped() -> Self {
        Self { gamma0: 5.0e3, gamma1: 1.1e3, epsilon: 0.0 }
    }

    /// Defaults for a fully free plate: a small zero-order term keeps the
    /// metric definite on constants.
    pub fn free() -> Self {
        Self { gamma0: 5.0e3, gamma1: 1.1e3, epsilon: 1.0e-2 }
    }

    /// Defaults matching whether the mesh carries dirichlet edges.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        if mesh.has_dirichlet_edges() {
            Self::clamped()
        } else {
            Self::free()
        }
    }
}

/// Spontaneous curvature tensor `Z`, evaluated per cell (at the cell
/// center), i.e. piecewise constant on the mesh.
#[derive(Clone)]
pub struct CurvatureField {
    f: Arc<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>,
    trivially_zero: bool,
}

impl CurvatureField {
    pub fn zero() -> Self {
        Self { f: Arc::new(|_| [[0.0; 2]; 2]), trivially_zero: true }
    }

    pub fn constant(z: [[f64; 2]; 2]) -> Self {
        Self { f: Arc::new(move |_| z), trivially_zero: false }
    }

    pub fn identity() -> Self {
        Self::constant([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn from_fn(f: impl Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), trivially_zero: false }
    }

    pub fn is_zero(&self) -> bool {
        self.trivially_zero
    }

    /// Symmetrized value at a point (cell centers during assembly).
    pub fn eval(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let z = (self.f)(p);
        let off = 0.5 * (z[0][1] + z[1][0]);
        [[z[0][0], off], [off, z[1][1]]]
    }

    /// `1/2 \int |Z|^2` over the mesh, with `Z` frozen per cell.
    pub fn half_norm_sq_integral(&self, mesh: &Mesh) -> f64 {
        if self.trivially_zero {
            return 0.0;
        }
        let area = mesh.cell_area();
        let mut acc = 0.0;
        for cell in 0..mesh.n_cells() {
            let z = self.eval(mesh.cell_center(cell));
            let n2 = z[0][0] * z[0][0] + 2.0 * z[0][1] * z[0][1] + z[1][1] * z[1][1];
            acc += 0.5 * n2 * area;
        }
        acc
    }
}

impl std::fmt::Debug for CurvatureField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurvatureField")
            .field("trivially_zero", &self.trivially_zero)
            .finish()
    }
}

/// Clamped position `g` and frame `Phi` on the dirichlet part of the
/// skeleton. `Phi` is stored as gradient columns: `phi(p) = [d1 g, d2 g]`.
#[derive(Clone)]
pub struct BoundaryData {
    g: Arc<dyn Fn([f64; 2]) -> [f64; 3] + Send + Sync>,
    phi: Arc<dyn Fn([f64; 2]) -> [[f64; 3]; 2] + Send + Sync>,
}

impl BoundaryData {
    pub fn new(
        g: impl Fn([f64; 2]) -> [f64; 3] + Send + Sync + 'static,
        phi: impl Fn([f64; 2]) -> [[f64; 3]; 2] + Send + Sync + 'static,
    ) -> Self {
        Self { g: Arc::new(g), phi: Arc::new(phi) }
    }

    /// Flat identity embedding `g(x) = (x1, x2, 0)`, `Phi = grad g`.
    pub fn flat_identity() -> Self {
        Self::new(
            |p| [p[0], p[1], 0.0],
            |_| [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        )
    }

    pub fn homogeneous() -> Self {
        Self::new(|_| [0.0; 3], |_| [[0.0; 3]; 2])
    }

    pub fn g(&self, p: [f64; 2]) -> [f64; 3] {
        (self.g)(p)
    }

    pub fn phi(&self, p: [f64; 2]) -> [[f64; 3]; 2] {
        (self.phi)(p)
    }

    /// Max deviation of `Phi^T Phi` from the identity over the dirichlet
    /// edge quadrature points. Isometry-compatible data gives ~0; callers
    /// should warn (not fail) otherwise.
    pub fn frame_defect(&self, mesh: &Mesh, space: &Space) -> f64 {
        let mut worst: f64 = 0.0;
        for edge in mesh.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
            for &t in &space.quadrature.edge_points {
                let phi = self.phi(mesh.edge_point(edge, t));
                let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                let gram = [
                    [dot(phi[0], phi[0]), dot(phi[0], phi[1])],
                    [dot(phi[1], phi[0]), dot(phi[1], phi[1])],
                ];
                for i in 0..2 {
                    for j in 0..2 {
                        let target = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((gram[i][j] - target).abs());
                    }
                }
            }
        }
        worst
    }
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryData")
    }
}

/// Volume force density, default zero.
#[derive(Clone)]
pub struct LoadField {
    f: Arc<dyn Fn([f64; 2]) -> [f64; 3] + Send + Sync>,
    trivially_zero: bool,
}

impl LoadField {
    pub fn zero() -> Self {
        Self { f: Arc::new(|_| [0.0; 3]), trivially_zero: true }
    }

    pub fn from_fn(f: impl Fn([f64; 2]) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), trivially_zero: false }
    }

    pub fn is_zero(&self) -> bool {
        self.trivially_zero
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 3] {
        (self.f)(p)
    }
}

impl std::fmt::Debug for LoadField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadField")
            .field("trivially_zero", &self.trivially_zero)
            .finish()
    }
}

/// Compressed sparse column matrix built from cell/edge triplet blocks.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_unstable_by_key(|t| (t.1, t.0));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(trips.len());
        let mut values = Vec::with_capacity(trips.len());
        let mut last = None;
        for &(r, c, v) in &trips {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { nrows, ncols, col_ptr, row_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `y = A x` for a scalar vector.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// `y = A x` applied componentwise to a 3-interleaved vector
    /// (`x[3s+c]` holds component `c` of scalar dof `s`).
    pub fn matvec3(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for c in 0..self.ncols {
            let xc = [x[3 * c], x[3 * c + 1], x[3 * c + 2]];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = 3 * self.row_idx[k];
                let v = self.values[k];
                y[r] += v * xc[0];
                y[r + 1] += v * xc[1];
                y[r + 2] += v * xc[2];
            }
        }
    }

    pub fn matvec3_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; 3 * self.nrows];
        self.matvec3(x, &mut y);
        y
    }

    /// Entry lookup (zero when absent).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        match self.row_idx[lo..hi].binary_search(&r) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// `max |A - A^T|` over all entries.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Linear combination `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trips = Vec::with_capacity(self.nnz() + other.nnz());
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                trips.push((self.row_idx[k], c, alpha * self.values[k]));
            }
            for k in other.col_ptr[c]..other.col_ptr[c + 1] {
                trips.push((other.row_idx[k], c, beta * other.values[k]));
            }
        }
        Self::from_triplets(self.nrows, self.ncols, trips)
    }

    /// Expand a scalar operator to the 3-interleaved vector layout
    /// (Kronecker product with the 3x3 identity).
    pub fn expand3(&self) -> Self {
        let mut trips = Vec::with_capacity(3 * self.nnz());
        for c in 0..self.ncols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                for comp in 0..3 {
                    trips.push((3 * self.row_idx[k] + comp, 3 * c + comp, self.values[k]));
                }
            }
        }
        Self::from_triplets(3 * self.nrows, 3 * self.ncols, trips)
    }

    pub fn to_faer(&self) -> faer::sparse::SparseColMat<usize, f64> {
        let trips: Vec<faer::sparse::Triplet<usize, usize, f64>> = self
            .iter()
            .map(|(r, c, v)| faer::sparse::Triplet::new(r, c, v))
            .collect();
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .expect("valid triplets")
    }

    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut m = faer::Mat::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }
}

/// Linearized isometry constraint `B`: three rows per cell (one per
/// symmetric multiplier slot), coupling only the dofs of that cell.
///
/// The multiplier basis is the unnormalized
/// `{e1 (x) e1, e2 (x) e2, e1 (x) e2 + e2 (x) e1}`.
#[derive(Debug, Clone)]
pub struct ConstraintOperator {
    pub n_cells: usize,
    /// Displacement dofs per cell (`3 (k+1)^2`).
    pub n_loc: usize,
    /// `blocks[cell][slot][loc]` flattened.
    blocks: Vec<f64>,
}

impl ConstraintOperator {
    pub fn n_rows(&self) -> usize {
        3 * self.n_cells
    }

    pub fn n_cols(&self) -> usize {
        self.n_cells * self.n_loc
    }

    #[inline]
    fn block(&self, cell: usize) -> &[f64] {
        &self.blocks[cell * 3 * self.n_loc..(cell + 1) * 3 * self.n_loc]
    }

    /// `out = B x` with `x` a displacement vector.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_rows());
        for cell in 0..self.n_cells {
            let blk = self.block(cell);
            let xc = &x[cell * self.n_loc..(cell + 1) * self.n_loc];
            for slot in 0..3 {
                let row = &blk[slot * self.n_loc..(slot + 1) * self.n_loc];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(xc) {
                    acc += a * b;
                }
                out[cell * 3 + slot] = acc;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.apply_into(x, &mut out);
        out
    }

    /// `out = B^T lambda`.
    pub fn apply_transpose_into(&self, lambda: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_cols());
        for cell in 0..self.n_cells {
            let blk = self.block(cell);
            let oc = &mut out[cell * self.n_loc..(cell + 1) * self.n_loc];
            let l = &lambda[cell * 3..cell * 3 + 3];
            for (loc, o) in oc.iter_mut().enumerate() {
                *o = l[0] * blk[loc]
                    + l[1] * blk[self.n_loc + loc]
                    + l[2] * blk[2 * self.n_loc + loc];
            }
        }
    }

    pub fn apply_transpose(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols()];
        self.apply_transpose_into(lambda, &mut out);
        out
    }

    pub fn to_sparse(&self) -> SparseOperator {
        let mut trips = Vec::with_capacity(self.blocks.len());
        for cell in 0..self.n_cells {
            let blk = self.block(cell);
            for slot in 0..3 {
                for loc in 0..self.n_loc {
                    let v = blk[slot * self.n_loc + loc];
                    if v != 0.0 {
                        trips.push((cell * 3 + slot, cell * self.n_loc + loc, v));
                    }
                }
            }
        }
        SparseOperator::from_triplets(self.n_rows(), self.n_cols(), trips)
    }
}

/// Precomputed tables plus assembly routines for one (mesh, space) pair.
pub struct Assembler<'a> {
    pub mesh: &'a Mesh,
    pub space: &'a Space,
    /// Physical volume quadrature weights (same for every cell).
    vol_weights: Vec<f64>,
    /// Physical-scale basis table at volume quadrature points.
    vol_tab: Tabulation,
    /// Physical-scale basis traces per cell side at edge quadrature points.
    side_tabs: [Tabulation; 4],
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a Mesh, space: &'a Space) -> Self {
        let q = &space.quadrature;
        let jac = 0.25 * mesh.dx * mesh.dy;
        let vol_weights = q.cell_weights.iter().map(|w| w * jac).collect();
        let vol_tab = space
            .basis
            .tabulate(&q.cell_points, 2)
            .expect("order 2 tabulation")
            .scaled(mesh.dx, mesh.dy);
        let side = |s: CellSide| {
            space
                .basis
                .tabulate(&side_reference_points(s, &q.edge_points), 3)
                .expect("order 3 tabulation")
                .scaled(mesh.dx, mesh.dy)
        };
        let side_tabs = [
            side(CellSide::Bottom),
            side(CellSide::Right),
            side(CellSide::Top),
            side(CellSide::Left),
        ];
        Self { mesh, space, vol_weights, vol_tab, side_tabs }
    }

    fn nb(&self) -> usize {
        self.space.basis.cardinality()
    }

    fn side_tab(&self, side: CellSide) -> &Tabulation {
        &self.side_tabs[side as usize]
    }

    /// Field derivatives of `y` at the volume quadrature points of `cell`.
    pub fn field_on_cell(&self, y: &[f64], cell: usize) -> Vec<FieldDerivs> {
        let lo = cell * 3 * self.nb();
        evaluate_from_table(&self.vol_tab, &y[lo..lo + 3 * self.nb()])
    }

    fn field_on_side(&self, y: &[f64], cell: usize, side: CellSide) -> Vec<FieldDerivs> {
        let lo = cell * 3 * self.nb();
        evaluate_from_table(self.side_tab(side), &y[lo..lo + 3 * self.nb()])
    }

    // ----- local matrices -------------------------------------------------

    /// Volume part of the scalar stiffness/metric: Hessian inner product,
    /// optionally with a zero-order term.
    fn local_volume(&self, zero_order: f64) -> Vec<f64> {
        let nb = self.nb();
        let mut k = vec![0.0; nb * nb];
        for (q, &w) in self.vol_weights.iter().enumerate() {
            let row = &self.vol_tab.table[q];
            for v in 0..nb {
                let sv = &row[v];
                for u in 0..nb {
                    let su = &row[u];
                    let dd = su.h[0] * sv.h[0] + 2.0 * su.h[1] * sv.h[1] + su.h[2] * sv.h[2];
                    k[v * nb + u] += w * (dd + zero_order * su.v * sv.v);
                }
            }
        }
        k
    }

    /// Scalar edge matrix for an interior edge of the given orientation.
    /// Local dofs: `[0,nb)` on `cell-`, `[nb,2nb)` on `cell+`.
    fn local_interior_edge(
        &self,
        horizontal: bool,
        consistency: bool,
        gamma0: f64,
        gamma1: f64,
    ) -> Vec<f64> {
        let nb = self.nb();
        let (tab_minus, tab_plus, mu, h) = if horizontal {
            (self.side_tab(CellSide::Top), self.side_tab(CellSide::Bottom), [0.0, 1.0], self.mesh.dx)
        } else {
            (self.side_tab(CellSide::Right), self.side_tab(CellSide::Left), [1.0, 0.0], self.mesh.dy)
        };
        let n = 2 * nb;
        let mut k = vec![0.0; n * n];
        let inv_h = 1.0 / h;
        let inv_h3 = inv_h * inv_h * inv_h;
        for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
            let w = wq * 0.5 * h;
            // gather per-local-dof trace data with jump sign
            #[allow(clippy::type_complexity)]
            let data: Vec<(f64, [f64; 2], [f64; 2], f64, f64)> = (0..n)
                .map(|l| {
                    let (s, sigma) = if l < nb {
                        (&tab_minus.table[q][l], 1.0)
                    } else {
                        (&tab_plus.table[q][l - nb], -1.0)
                    };
                    (s.v, s.g, s.h_mu(mu), s.lap_deriv_mu(mu), sigma)
                })
                .collect();
            for v in 0..n {
                let (vv, gv, hv, dv, sv) = data[v];
                for u in 0..n {
                    let (vu, gu, hu, du, su) = data[u];
                    let mut acc = 0.0;
                    if consistency {
                        // averages carry the interior factor 1/2
                        acc -= 0.5 * (hu[0] * gv[0] + hu[1] * gv[1]) * sv;
                        acc -= 0.5 * (hv[0] * gu[0] + hv[1] * gu[1]) * su;
                        acc += 0.5 * du * vv * sv;
                        acc += 0.5 * dv * vu * su;
                    }
                    let ss = su * sv;
                    acc += gamma1 * inv_h * ss * (gu[0] * gv[0] + gu[1] * gv[1]);
                    acc += gamma0 * inv_h3 * ss * vu * vv;
                    k[v * n + u] += w * acc;
                }
            }
        }
        k
    }

    /// Scalar edge matrix for a one-sided (dirichlet) edge on a given cell
    /// side; `mu` is the outward normal there.
    fn local_boundary_edge(
        &self,
        side: CellSide,
        consistency: bool,
        gamma0: f64,
        gamma1: f64,
    ) -> Vec<f64> {
        let nb = self.nb();
        let tab = self.side_tab(side);
        let mu = side.outward_normal();
        let h = match side {
            CellSide::Bottom | CellSide::Top => self.mesh.dx,
            CellSide::Left | CellSide::Right => self.mesh.dy,
        };
        let inv_h = 1.0 / h;
        let inv_h3 = inv_h * inv_h * inv_h;
        let mut k = vec![0.0; nb * nb];
        for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
            let w = wq * 0.5 * h;
            let data: Vec<(f64, [f64; 2], [f64; 2], f64)> = (0..nb)
                .map(|l| {
                    let s = &tab.table[q][l];
                    (s.v, s.g, s.h_mu(mu), s.lap_deriv_mu(mu))
                })
                .collect();
            for v in 0..nb {
                let (vv, gv, hv, dv) = data[v];
                for u in 0..nb {
                    let (vu, gu, hu, du) = data[u];
                    let mut acc = 0.0;
                    if consistency {
                        acc -= hu[0] * gv[0] + hu[1] * gv[1];
                        acc -= hv[0] * gu[0] + hv[1] * gu[1];
                        acc += du * vv;
                        acc += dv * vu;
                    }
                    acc += gamma1 * inv_h * (gu[0] * gv[0] + gu[1] * gv[1]);
                    acc += gamma0 * inv_h3 * vu * vv;
                    k[v * nb + u] += w * acc;
                }
            }
        }
        k
    }

    /// Assemble a scalar skeleton operator from the shared local matrices.
    ///
    /// `consistency` selects the four Nitsche consistency term groups;
    /// `boundary` includes dirichlet edges (stiffness) or restricts to the
    /// interior skeleton (metric).
    fn assemble_scalar(
        &self,
        zero_order: f64,
        consistency: bool,
        gamma0: f64,
        gamma1: f64,
        boundary: bool,
    ) -> SparseOperator {
        let nb = self.nb();
        let ns = self.space.dofs.n_scalar();
        let vol = self.local_volume(zero_order);
        let edge_h = self.local_interior_edge(true, consistency, gamma0, gamma1);
        let edge_v = self.local_interior_edge(false, consistency, gamma0, gamma1);
        let bnd: Vec<Vec<f64>> = [CellSide::Bottom, CellSide::Right, CellSide::Top, CellSide::Left]
            .map(|s| self.local_boundary_edge(s, consistency, gamma0, gamma1))
            .into_iter()
            .collect();

        let mut trips = Vec::new();
        for cell in 0..self.mesh.n_cells() {
            let base = cell * nb;
            for v in 0..nb {
                for u in 0..nb {
                    trips.push((base + v, base + u, vol[v * nb + u]));
                }
            }
        }
        for edge in &self.mesh.edges {
            match edge.kind {
                EdgeKind::Free => {}
                EdgeKind::Interior => {
                    let horizontal = edge.normal[1].abs() > 0.5;
                    let k = if horizontal { &edge_h } else { &edge_v };
                    let n = 2 * nb;
                    let cells = [edge.cell_minus, edge.cell_plus.unwrap()];
                    for v in 0..n {
                        let gv = cells[v / nb] * nb + v % nb;
                        for u in 0..n {
                            let gu = cells[u / nb] * nb + u % nb;
                            let val = k[v * n + u];
                            if val != 0.0 {
                                trips.push((gv, gu, val));
                            }
                        }
                    }
                }
                EdgeKind::Dirichlet => {
                    if !boundary {
                        continue;
                    }
                    let k = &bnd[edge.side_minus as usize];
                    let base = edge.cell_minus * nb;
                    for v in 0..nb {
                        for u in 0..nb {
                            let val = k[v * nb + u];
                            if val != 0.0 {
                                trips.push((base + v, base + u, val));
                            }
                        }
                    }
                }
            }
        }
        SparseOperator::from_triplets(ns, ns, trips)
    }

    /// Stiffness `A` (scalar form): volume Hessian product, the four
    /// consistency term groups and both jump penalties on the full active
    /// skeleton, with one-sided traces on dirichlet edges. Free edges
    /// contribute nothing.
    pub fn stiffness(&self, params: &PenaltyParams) -> SparseOperator {
        self.assemble_scalar(0.0, true, params.gamma0, params.gamma1, true)
    }

    /// Metric `M` (scalar form): Hessian product, zero-order term, and the
    /// unweighted `1/h`, `1/h^3` jump terms over the interior skeleton only.
    pub fn metric(&self, params: &PenaltyParams) -> SparseOperator {
        self.assemble_scalar(params.epsilon, false, 1.0, 1.0, false)
    }

    /// Combined flow operator `tau^{-1} M + A`.
    pub fn combined(metric: &SparseOperator, stiffness: &SparseOperator, tau: f64) -> SparseOperator {
        metric.linear_combination(1.0 / tau, stiffness, 1.0)
    }

    /// Nitsche boundary load `G` (full interleaved vector). Zero when no
    /// dirichlet edges exist.
    pub fn nitsche_load(&self, params: &PenaltyParams, data: &BoundaryData) -> Vec<f64> {
        let nb = self.nb();
        let mut g = vec![0.0; self.space.dofs.n_displacement()];
        for edge in self.mesh.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
            let tab = self.side_tab(edge.side_minus);
            let mu = edge.normal;
            let h = edge.length;
            let inv_h = 1.0 / h;
            let inv_h3 = inv_h * inv_h * inv_h;
            for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
                let w = wq * 0.5 * h;
                let p = self.mesh.edge_point(edge, self.space.quadrature.edge_points[q]);
                let gval = data.g(p);
                let phi = data.phi(p);
                for b in 0..nb {
                    let s = &tab.table[q][b];
                    let hmu = s.h_mu(mu);
                    let dlap = s.lap_deriv_mu(mu);
                    for c in 0..3 {
                        let phi_row = [phi[0][c], phi[1][c]];
                        let val = -(hmu[0] * phi_row[0] + hmu[1] * phi_row[1])
                            + dlap * gval[c]
                            + params.gamma1 * inv_h * (phi_row[0] * s.g[0] + phi_row[1] * s.g[1])
                            + params.gamma0 * inv_h3 * gval[c] * s.v;
                        g[self.space.dofs.displacement(edge.cell_minus, b, c)] += w * val;
                    }
                }
            }
        }
        g
    }

    /// Load vector `(f, phi_i)`.
    pub fn load_vector(&self, load: &LoadField) -> Vec<f64> {
        let nb = self.nb();
        let mut out = vec![0.0; self.space.dofs.n_displacement()];
        if load.is_zero() {
            return out;
        }
        for cell in 0..self.mesh.n_cells() {
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let p = self.mesh.to_physical(cell, self.space.quadrature.cell_points[q]);
                let f = load.eval(p);
                for b in 0..nb {
                    let v = self.vol_tab.table[q][b].v;
                    for c in 0..3 {
                        out[self.space.dofs.displacement(cell, b, c)] += w * v * f[c];
                    }
                }
            }
        }
        out
    }

    /// Linearized isometry constraint `B` at state `y`.
    pub fn constraint(&self, y: &[f64]) -> ConstraintOperator {
        let nb = self.nb();
        let n_loc = 3 * nb;
        let n_cells = self.mesh.n_cells();
        let mut blocks = vec![0.0; n_cells * 3 * n_loc];
        for cell in 0..n_cells {
            let field = self.field_on_cell(y, cell);
            let blk = &mut blocks[cell * 3 * n_loc..(cell + 1) * 3 * n_loc];
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let dy = field[q].g; // dy[a][c]
                for b in 0..nb {
                    let gb = self.vol_tab.table[q][b].g;
                    for c in 0..3 {
                        let loc = 3 * b + c;
                        // slot 0: e1 (x) e1, slot 1: e2 (x) e2,
                        // slot 2: e1 (x) e2 + e2 (x) e1
                        blk[loc] += w * 2.0 * gb[0] * dy[0][c];
                        blk[n_loc + loc] += w * 2.0 * gb[1] * dy[1][c];
                        blk[2 * n_loc + loc] += w * 2.0 * (gb[0] * dy[1][c] + gb[1] * dy[0][c]);
                    }
                }
            }
        }
        ConstraintOperator { n_cells, n_loc, blocks }
    }

    /// Spontaneous-curvature force `F` at state `y`: elementwise integrals
    /// of `z_kl  d_kl phi . (d1 y x d2 y)`, no edge terms, cross product
    /// taken as-is.
    pub fn bilayer_force(&self, y: &[f64], z: &CurvatureField) -> Vec<f64> {
        let nb = self.nb();
        let mut out = vec![0.0; self.space.dofs.n_displacement()];
        if z.is_zero() {
            return out;
        }
        for cell in 0..self.mesh.n_cells() {
            let zc = z.eval(self.mesh.cell_center(cell));
            let field = self.field_on_cell(y, cell);
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let nu = field[q].normal();
                for b in 0..nb {
                    let h = self.vol_tab.table[q][b].h;
                    // sum_kl z_kl d_kl b, using symmetry of both factors
                    let zb = zc[0][0] * h[0] + 2.0 * zc[0][1] * h[1] + zc[1][1] * h[2];
                    for c in 0..3 {
                        out[self.space.dofs.displacement(cell, b, c)] += w * zb * nu[c];
                    }
                }
            }
        }
        out
    }

    /// The cubic curvature coupling `sum_T int z_ij d_ij y . (d1 y x d2 y)`.
    pub fn cubic_term(&self, y: &[f64], z: &CurvatureField) -> f64 {
        if z.is_zero() {
            return 0.0;
        }
        let mut acc = 0.0;
        for cell in 0..self.mesh.n_cells() {
            let zc = z.eval(self.mesh.cell_center(cell));
            let field = self.field_on_cell(y, cell);
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let f = &field[q];
                let nu = f.normal();
                let mut acc_q = 0.0;
                for c in 0..3 {
                    let zh = zc[0][0] * f.h[0][c] + 2.0 * zc[0][1] * f.h[1][c]
                        + zc[1][1] * f.h[2][c];
                    acc_q += zh * nu[c];
                }
                acc += w * acc_q;
            }
        }
        acc
    }

    /// Single-layer discrete energy: all nine term groups (volume Hessian,
    /// load, interior consistency and penalties with halved weights,
    /// boundary consistency and penalties against the data).
    pub fn energy_single(
        &self,
        y: &[f64],
        data: &BoundaryData,
        load: &LoadField,
        params: &PenaltyParams,
    ) -> f64 {
        let mut acc = 0.0;
        // volume: 1/2 |D^2 y|^2 - f . y
        for cell in 0..self.mesh.n_cells() {
            let field = self.field_on_cell(y, cell);
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let f = &field[q];
                let mut dd = 0.0;
                for c in 0..3 {
                    dd += f.h[0][c] * f.h[0][c]
                        + 2.0 * f.h[1][c] * f.h[1][c]
                        + f.h[2][c] * f.h[2][c];
                }
                acc += 0.5 * w * dd;
                if !load.is_zero() {
                    let p = self.mesh.to_physical(cell, self.space.quadrature.cell_points[q]);
                    let fv = load.eval(p);
                    acc -= w * (fv[0] * f.v[0] + fv[1] * f.v[1] + fv[2] * f.v[2]);
                }
            }
        }
        acc + self.skeleton_energy(y, data, params)
    }

    /// Interior + dirichlet skeleton terms of the energy: consistency terms
    /// with weight one, penalties with the halved weights `gamma/2`.
    fn skeleton_energy(&self, y: &[f64], data: &BoundaryData, params: &PenaltyParams) -> f64 {
        let mut acc = 0.0;
        for edge in &self.mesh.edges {
            match edge.kind {
                EdgeKind::Free => {}
                EdgeKind::Interior => {
                    let minus = self.field_on_side(y, edge.cell_minus, edge.side_minus);
                    let plus =
                        self.field_on_side(y, edge.cell_plus.unwrap(), edge.side_plus.unwrap());
                    let mu = edge.normal;
                    let h = edge.length;
                    for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
                        let w = wq * 0.5 * h;
                        let (fm, fp) = (&minus[q], &plus[q]);
                        let mut cons = 0.0;
                        let mut pen1 = 0.0;
                        let mut pen0 = 0.0;
                        for c in 0..3 {
                            let hm = [
                                fm.h[0][c] * mu[0] + fm.h[1][c] * mu[1],
                                fm.h[1][c] * mu[0] + fm.h[2][c] * mu[1],
                            ];
                            let hp = [
                                fp.h[0][c] * mu[0] + fp.h[1][c] * mu[1],
                                fp.h[1][c] * mu[0] + fp.h[2][c] * mu[1],
                            ];
                            let avg_hmu = [0.5 * (hm[0] + hp[0]), 0.5 * (hm[1] + hp[1])];
                            let jump_g = [
                                fm.g[0][c] - fp.g[0][c],
                                fm.g[1][c] - fp.g[1][c],
                            ];
                            let dm = (fm.t[0][c] + fm.t[2][c]) * mu[0]
                                + (fm.t[1][c] + fm.t[3][c]) * mu[1];
                            let dp = (fp.t[0][c] + fp.t[2][c]) * mu[0]
                                + (fp.t[1][c] + fp.t[3][c]) * mu[1];
                            let jump_v = fm.v[c] - fp.v[c];
                            cons += -(avg_hmu[0] * jump_g[0] + avg_hmu[1] * jump_g[1])
                                + 0.5 * (dm + dp) * jump_v;
                            pen1 += jump_g[0] * jump_g[0] + jump_g[1] * jump_g[1];
                            pen0 += jump_v * jump_v;
                        }
                        acc += w
                            * (cons
                                + 0.5 * params.gamma1 / h * pen1
                                + 0.5 * params.gamma0 / (h * h * h) * pen0);
                    }
                }
                EdgeKind::Dirichlet => {
                    let minus = self.field_on_side(y, edge.cell_minus, edge.side_minus);
                    let mu = edge.normal;
                    let h = edge.length;
                    for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
                        let w = wq * 0.5 * h;
                        let p = self.mesh.edge_point(edge, self.space.quadrature.edge_points[q]);
                        let gval = data.g(p);
                        let phi = data.phi(p);
                        let fm = &minus[q];
                        let mut cons = 0.0;
                        let mut pen1 = 0.0;
                        let mut pen0 = 0.0;
                        for c in 0..3 {
                            let hm = [
                                fm.h[0][c] * mu[0] + fm.h[1][c] * mu[1],
                                fm.h[1][c] * mu[0] + fm.h[2][c] * mu[1],
                            ];
                            let dev_g = [
                                fm.g[0][c] - phi[0][c],
                                fm.g[1][c] - phi[1][c],
                            ];
                            let dm = (fm.t[0][c] + fm.t[2][c]) * mu[0]
                                + (fm.t[1][c] + fm.t[3][c]) * mu[1];
                            let dev_v = fm.v[c] - gval[c];
                            cons += -(hm[0] * dev_g[0] + hm[1] * dev_g[1]) + dm * dev_v;
                            pen1 += dev_g[0] * dev_g[0] + dev_g[1] * dev_g[1];
                            pen0 += dev_v * dev_v;
                        }
                        acc += w
                            * (cons
                                + 0.5 * params.gamma1 / h * pen1
                                + 0.5 * params.gamma0 / (h * h * h) * pen0);
                    }
                }
            }
        }
        acc
    }

    /// Bilayer discrete energy `E_h^1 = E_h^0 - cubic term`, optionally
    /// shifted by the state-independent constant `1/2 int |Z|^2` so values
    /// are comparable to the exact equilibrium energies.
    #[allow(clippy::too_many_arguments)]
    pub fn energy_bilayer(
        &self,
        y: &[f64],
        z: &CurvatureField,
        data: &BoundaryData,
        load: &LoadField,
        params: &PenaltyParams,
        include_constant: bool,
    ) -> f64 {
        let mut e = self.energy_single(y, data, load, params) - self.cubic_term(y, z);
        if include_constant {
            e += z.half_norm_sq_integral(self.mesh);
        }
        e
    }

    /// Squared dG energy norm: Hessian, interior jumps, and boundary
    /// data-deviation terms, all unweighted.
    pub fn dg_energy_norm_sq(&self, y: &[f64], data: &BoundaryData) -> f64 {
        let mut acc = 0.0;
        for cell in 0..self.mesh.n_cells() {
            let field = self.field_on_cell(y, cell);
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let f = &field[q];
                for c in 0..3 {
                    acc += w
                        * (f.h[0][c] * f.h[0][c]
                            + 2.0 * f.h[1][c] * f.h[1][c]
                            + f.h[2][c] * f.h[2][c]);
                }
            }
        }
        for edge in &self.mesh.edges {
            match edge.kind {
                EdgeKind::Free => {}
                EdgeKind::Interior => {
                    let minus = self.field_on_side(y, edge.cell_minus, edge.side_minus);
                    let plus =
                        self.field_on_side(y, edge.cell_plus.unwrap(), edge.side_plus.unwrap());
                    let h = edge.length;
                    for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
                        let w = wq * 0.5 * h;
                        let (fm, fp) = (&minus[q], &plus[q]);
                        let mut pen1 = 0.0;
                        let mut pen0 = 0.0;
                        for c in 0..3 {
                            let jg = [fm.g[0][c] - fp.g[0][c], fm.g[1][c] - fp.g[1][c]];
                            let jv = fm.v[c] - fp.v[c];
                            pen1 += jg[0] * jg[0] + jg[1] * jg[1];
                            pen0 += jv * jv;
                        }
                        acc += w * (pen1 / h + pen0 / (h * h * h));
                    }
                }
                EdgeKind::Dirichlet => {
                    let minus = self.field_on_side(y, edge.cell_minus, edge.side_minus);
                    let h = edge.length;
                    for (q, &wq) in self.space.quadrature.edge_weights.iter().enumerate() {
                        let w = wq * 0.5 * h;
                        let p = self.mesh.edge_point(edge, self.space.quadrature.edge_points[q]);
                        let gval = data.g(p);
                        let phi = data.phi(p);
                        let fm = &minus[q];
                        let mut pen1 = 0.0;
                        let mut pen0 = 0.0;
                        for c in 0..3 {
                            let dg = [fm.g[0][c] - phi[0][c], fm.g[1][c] - phi[1][c]];
                            let dv = fm.v[c] - gval[c];
                            pen1 += dg[0] * dg[0] + dg[1] * dg[1];
                            pen0 += dv * dv;
                        }
                        acc += w * (pen1 / h + pen0 / (h * h * h));
                    }
                }
            }
        }
        acc
    }

    /// Per-cell first-fundamental-form integrals `int_T [grad y]^T grad y`.
    pub fn per_cell_gram(&self, y: &[f64]) -> Vec<[[f64; 2]; 2]> {
        let mut out = Vec::with_capacity(self.mesh.n_cells());
        for cell in 0..self.mesh.n_cells() {
            let field = self.field_on_cell(y, cell);
            let mut g = [[0.0; 2]; 2];
            for (q, &w) in self.vol_weights.iter().enumerate() {
                let gram = field[q].gram();
                for i in 0..2 {
                    for j in 0..2 {
                        g[i][j] += w * gram[i][j];
                    }
                }
            }
            out.push(g);
        }
        out
    }

    /// Isometry defect `sum_T | int_T ([grad y]^T grad y - I) |_F`.
    pub fn isometry_defect(&self, y: &[f64]) -> f64 {
        let area = self.mesh.cell_area();
        self.per_cell_gram(y)
            .iter()
            .map(|g| {
                let d = [
                    g[0][0] - area,
                    g[0][1],
                    g[1][0],
                    g[1][1] - area,
                ];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]).sqrt()
            })
            .sum()
    }
}

impl std::fmt::Debug for Assembler<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Assembler")
            .field("n_cells", &self.mesh.n_cells())
            .field("n_basis", &self.space.basis.cardinality())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangular_mesh, mark_dirichlet, BoundaryMarking, Rectangle, Segment};
    use crate::space::interpolate;

    fn plate() -> Rectangle {
        Rectangle::new(-5.0, 5.0, -2.0, 2.0).unwrap()
    }

    fn clamped_mesh(r: u32) -> Mesh {
        let m = build_rectangular_mesh(plate(), r);
        mark_dirichlet(
            &m,
            &BoundaryMarking::segment(Segment::Vertical { at: -5.0, lo: -2.0, hi: 2.0 }),
        )
        .unwrap()
    }

    #[test]
    fn stiffness_and_metric_are_symmetric() {
        let mesh = clamped_mesh(1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let params = PenaltyParams::clamped();
        let a = asm.stiffness(&params);
        assert!(a.symmetry_error() <= 1e-12 * a.max_abs());
        let m = asm.metric(&PenaltyParams::free());
        assert!(m.symmetry_error() <= 1e-12 * m.max_abs());
    }

    #[test]
    fn flat_field_has_zero_stiffness_energy_on_free_plate() {
        let mesh = build_rectangular_mesh(plate(), 2);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let a = asm.stiffness(&PenaltyParams::free());
        let y = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let ay = a.matvec3_alloc(&y.y);
        let energy: f64 = ay.iter().zip(&y.y).map(|(a, b)| a * b).sum();
        assert!(energy.abs() <= 1e-12 * a.max_abs());
    }

    #[test]
    fn metric_is_positive_definite_with_epsilon() {
        let mesh = build_rectangular_mesh(plate(), 1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let m = asm.metric(&PenaltyParams::free()).to_dense();
        // Cholesky succeeds iff the smallest eigenvalue is positive.
        assert!(m.llt(faer::Side::Lower).is_ok());
    }

    #[test]
    fn metric_is_singular_on_constants_without_epsilon() {
        let mesh = build_rectangular_mesh(plate(), 1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let params = PenaltyParams { epsilon: 0.0, ..PenaltyParams::free() };
        let m = asm.metric(&params);
        let ones = vec![1.0; space.dofs.n_scalar()];
        let mut out = vec![0.0; space.dofs.n_scalar()];
        m.matvec(&ones, &mut out);
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-10 * m.max_abs());
    }

    #[test]
    fn nitsche_load_vanishes_without_dirichlet_edges_or_with_zero_data() {
        let mesh = build_rectangular_mesh(plate(), 1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let g = asm.nitsche_load(&PenaltyParams::free(), &BoundaryData::flat_identity());
        assert!(g.iter().all(|&v| v == 0.0));

        let mesh = clamped_mesh(1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let g = asm.nitsche_load(&PenaltyParams::clamped(), &BoundaryData::homogeneous());
        assert!(g.iter().all(|&v| v.abs() <= 1e-14));
    }

    #[test]
    fn flat_state_is_stationary_for_matching_clamped_data() {
        // With g = (x1, x2, 0), Phi = grad g, the flat interpolant satisfies
        // A y0 = G exactly (every row, not just tangent directions).
        let mesh = clamped_mesh(2);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let params = PenaltyParams::clamped();
        let a = asm.stiffness(&params);
        let g = asm.nitsche_load(&params, &BoundaryData::flat_identity());
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let ay = a.matvec3_alloc(&y0.y);
        let scale = a.max_abs();
        for (i, (&ai, &gi)) in ay.iter().zip(&g).enumerate() {
            assert!(
                (ai - gi).abs() <= 1e-10 * scale,
                "residual at dof {i}: {} vs {}",
                ai,
                gi
            );
        }
    }

    #[test]
    fn constraint_rows_for_flat_state() {
        let mesh = build_rectangular_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0).unwrap(), 1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let b = asm.constraint(&y0.y);
        // test field v = (x1, 0, 0): per-cell rows give (2|T|, 0, 0)
        let v = interpolate(&mesh, &space, |p| [p[0], 0.0, 0.0]);
        let bv = b.apply(&v.y);
        let area = mesh.cell_area();
        for cell in 0..mesh.n_cells() {
            assert!((bv[3 * cell] - 2.0 * area).abs() <= 1e-13);
            assert!(bv[3 * cell + 1].abs() <= 1e-13);
            assert!(bv[3 * cell + 2].abs() <= 1e-13);
        }
        // rigid translations are in the kernel
        let t = interpolate(&mesh, &space, |_| [0.4, -1.3, 2.2]);
        let bt = b.apply(&t.y);
        assert!(bt.iter().all(|v| v.abs() <= 1e-13));
    }

    #[test]
    fn bilayer_force_zero_curvature_and_flat_paraboloid_pairing() {
        let mesh = build_rectangular_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0).unwrap(), 1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let f = asm.bilayer_force(&y0.y, &CurvatureField::zero());
        assert!(f.iter().all(|&v| v == 0.0));

        // flat normal is (0,0,1); pairing with (0,0,x1^2) on one cell gives
        // 2 |T| from the z11 d11 term.
        let f = asm.bilayer_force(&y0.y, &CurvatureField::identity());
        let probe_cell = 2;
        let nodes = space.basis.nodes();
        let mut test = vec![0.0; space.dofs.n_displacement()];
        for (bidx, &node) in nodes.iter().enumerate() {
            let p = mesh.to_physical(probe_cell, node);
            test[space.dofs.displacement(probe_cell, bidx, 2)] = p[0] * p[0];
        }
        let pairing: f64 = f.iter().zip(&test).map(|(a, b)| a * b).sum();
        assert!((pairing - 2.0 * mesh.cell_area()).abs() <= 1e-12);
    }

    #[test]
    fn single_layer_energy_of_flat_state_with_matching_data_is_zero() {
        let mesh = clamped_mesh(2);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let e = asm.energy_single(
            &y0.y,
            &BoundaryData::flat_identity(),
            &LoadField::zero(),
            &PenaltyParams::clamped(),
        );
        assert!(e.abs() <= 1e-10);
    }

    #[test]
    fn single_layer_energy_of_paraboloid_on_free_plate() {
        // y = (x1, x2, x1^2) is C^1 and globally Q2: no jumps, |D^2 y|^2 = 4.
        let mesh = build_rectangular_mesh(plate(), 3);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y = interpolate(&mesh, &space, |p| [p[0], p[1], p[0] * p[0]]);
        let e = asm.energy_single(
            &y.y,
            &BoundaryData::flat_identity(),
            &LoadField::zero(),
            &PenaltyParams::free(),
        );
        let expect = 2.0 * mesh.domain.area();
        assert!((e - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn bilayer_energy_constants() {
        let mesh = build_rectangular_mesh(plate(), 2);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let data = BoundaryData::flat_identity();
        let load = LoadField::zero();
        let params = PenaltyParams::free();
        // Z = 0 reduces to the single-layer energy
        let e0 = asm.energy_single(&y0.y, &data, &load, &params);
        let e1 = asm.energy_bilayer(&y0.y, &CurvatureField::zero(), &data, &load, &params, false);
        assert_eq!(e0, e1);
        // flat state, Z = I: no constant -> 0; with constant -> |Omega|
        let z = CurvatureField::identity();
        let e = asm.energy_bilayer(&y0.y, &z, &data, &load, &params, false);
        assert!(e.abs() <= 1e-10);
        let e = asm.energy_bilayer(&y0.y, &z, &data, &load, &params, true);
        assert!((e - 40.0).abs() <= 1e-10);
    }

    #[test]
    fn dg_norm_scaling_and_flat_zero() {
        let mesh = clamped_mesh(1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        let n = asm.dg_energy_norm_sq(&y0.y, &BoundaryData::flat_identity());
        assert!(n.abs() <= 1e-12);

        // quadratic scaling with homogeneous data
        let y = interpolate(&mesh, &space, |p| [0.3 * p[0] * p[0], p[1] * p[0], p[1]]);
        let y2: Vec<f64> = y.y.iter().map(|v| 2.0 * v).collect();
        let data = BoundaryData::homogeneous();
        let n1 = asm.dg_energy_norm_sq(&y.y, &data);
        let n2 = asm.dg_energy_norm_sq(&y2, &data);
        assert!((n2 - 4.0 * n1).abs() <= 1e-10 * n2.abs());
    }

    #[test]
    fn isometry_defect_examples() {
        let mesh = build_rectangular_mesh(Rectangle::new(0.0, 1.0, 0.0, 1.0).unwrap(), 0);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
        assert!(asm.isometry_defect(&y0.y) <= 1e-13);

        // int ([grad y]^T grad y - I) = diag(4/3, 0) for y = (x1, x2, x1^2)
        let y = interpolate(&mesh, &space, |p| [p[0], p[1], p[0] * p[0]]);
        let d = asm.isometry_defect(&y.y);
        assert!((d - 4.0 / 3.0).abs() <= 1e-12);

        // rigid motions of the flat isometry keep zero defect
        let (c, s) = (0.6_f64, 0.8_f64);
        let rot = |v: [f64; 3]| {
            [
                c * v[0] - s * v[2] + 0.7,
                v[1] - 1.1,
                s * v[0] + c * v[2] + 0.3,
            ]
        };
        let yr = interpolate(&mesh, &space, |p| rot([p[0], p[1], 0.0]));
        assert!(asm.isometry_defect(&yr.y) <= 1e-12);
    }

    #[test]
    fn energy_equals_quadratic_form_up_to_data_constant() {
        use rand::RngExt;
        use rand::SeedableRng;
        let mesh = clamped_mesh(1);
        let space = Space::q2(&mesh);
        let asm = Assembler::new(&mesh, &space);
        let params = PenaltyParams::clamped();
        let data = BoundaryData::flat_identity();
        let load = LoadField::from_fn(|p| [0.0, 0.1 * p[0], -0.2]);
        let a = asm.stiffness(&params);
        let g = asm.nitsche_load(&params, &data);
        let fl = asm.load_vector(&load);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut shift: Option<f64> = None;
        for _ in 0..2 {
            let y: Vec<f64> = (0..space.dofs.n_displacement())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let ay = a.matvec3_alloc(&y);
            let quad: f64 = 0.5 * ay.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
                - g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
                - fl.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            let e = asm.energy_single(&y, &data, &load, &params);
            let c = e - quad;
            if let Some(prev) = shift {
                let scale: f64 = 1.0_f64.max(e.abs());
                assert!((c - prev).abs() <= 1e-10 * scale);
            }
            shift = Some(c);
        }
    }

    #[test]
    fn frame_defect_flags_non_isometric_data() {
        let mesh = clamped_mesh(1);
        let space = Space::q2(&mesh);
        let ok = BoundaryData::flat_identity().frame_defect(&mesh, &space);
        assert!(ok <= 1e-14);
        let bad = BoundaryData::new(|p| [p[0], p[1], 0.0], |_| [[0.0; 3]; 2]);
        assert!((bad.frame_defect(&mesh, &space) - 1.0).abs() <= 1e-14);
    }
}
