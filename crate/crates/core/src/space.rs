//! Discontinuous tensor-product Lagrange space: reference basis with
//! derivatives up to third order, Gauss quadrature, degree-of-freedom layout
//! and evaluation of coefficient fields on cells and edge traces.
//!
//! The reference element is `[-1,1]^2`. Physical cells are axis-aligned
//! rectangles, so the map is diagonal affine and a reference derivative of
//! order `(a,b)` picks up the factor `(2/dx)^a (2/dy)^b`.

use crate::mesh::{Edge, EdgeKind, Mesh};
use crate::{Error, Result};

/// Scalar basis (or field component) derivatives at one point.
///
/// Symmetric derivative components are stored once:
/// `h = [d11, d12, d22]`, `t = [d111, d112, d122, d222]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarDerivs {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [f64; 3],
    pub t: [f64; 4],
}

impl ScalarDerivs {
    /// Map reference derivatives to physical ones on a `dx x dy` cell.
    pub fn scaled(&self, dx: f64, dy: f64) -> ScalarDerivs {
        let sx = 2.0 / dx;
        let sy = 2.0 / dy;
        ScalarDerivs {
            v: self.v,
            g: [self.g[0] * sx, self.g[1] * sy],
            h: [self.h[0] * sx * sx, self.h[1] * sx * sy, self.h[2] * sy * sy],
            t: [
                self.t[0] * sx * sx * sx,
                self.t[1] * sx * sx * sy,
                self.t[2] * sx * sy * sy,
                self.t[3] * sy * sy * sy,
            ],
        }
    }

    /// Laplacian.
    pub fn lap(&self) -> f64 {
        self.h[0] + self.h[2]
    }

    /// Hessian times a direction: `H mu`.
    pub fn h_mu(&self, mu: [f64; 2]) -> [f64; 2] {
        [
            self.h[0] * mu[0] + self.h[1] * mu[1],
            self.h[1] * mu[0] + self.h[2] * mu[1],
        ]
    }

    /// Directional derivative of the Laplacian: `grad(lap) . mu`.
    pub fn lap_deriv_mu(&self, mu: [f64; 2]) -> f64 {
        (self.t[0] + self.t[2]) * mu[0] + (self.t[1] + self.t[3]) * mu[1]
    }
}

/// Tensor-product Lagrange basis of degree `k >= 2` on `[-1,1]^2` with
/// nodes on the uniform `(k+1) x (k+1)` grid.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    degree: usize,
    nodes_1d: Vec<f64>,
    /// Monomial coefficients of each 1d Lagrange polynomial.
    coeffs_1d: Vec<Vec<f64>>,
}

impl ReferenceBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidArgument(format!(
                "basis degree must be at least 2, got {degree}"
            )));
        }
        let nodes_1d: Vec<f64> = (0..=degree)
            .map(|i| -1.0 + 2.0 * i as f64 / degree as f64)
            .collect();
        let coeffs_1d = nodes_1d
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                // Product of (x - xj)/(xi - xj) over j != i, as monomial coefficients.
                let mut c = vec![1.0];
                for (j, &xj) in nodes_1d.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let d = xi - xj;
                    let mut next = vec![0.0; c.len() + 1];
                    for (p, &cp) in c.iter().enumerate() {
                        next[p] += cp * (-xj) / d;
                        next[p + 1] += cp / d;
                    }
                    c = next;
                }
                c
            })
            .collect();
        Ok(Self { degree, nodes_1d, coeffs_1d })
    }

    pub fn q2() -> Self {
        Self::new(2).expect("degree 2 is valid")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions per scalar field: `(k+1)^2`.
    pub fn cardinality(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Value of the `d`-th derivative of 1d basis `i` at `x`.
    fn eval_1d(&self, i: usize, x: f64, d: usize) -> f64 {
        let c = &self.coeffs_1d[i];
        if d >= c.len() {
            return 0.0;
        }
        // Horner evaluation of the d-th derivative.
        let mut acc = 0.0;
        for p in (d..c.len()).rev() {
            let mut f = 1.0;
            for q in 0..d {
                f *= (p - q) as f64;
            }
            acc = acc * x + c[p] * f;
        }
        acc
    }

    /// Reference node locations in the tensor ordering `j*(k+1)+i`.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.cardinality());
        for &eta in &self.nodes_1d {
            for &xi in &self.nodes_1d {
                out.push([xi, eta]);
            }
        }
        out
    }

    /// Tabulate all basis functions at the given reference points, with
    /// analytic derivatives up to `max_derivative <= 3`.
    pub fn tabulate(&self, points: &[[f64; 2]], max_derivative: usize) -> Result<Tabulation> {
        if max_derivative > 3 {
            return Err(Error::InvalidArgument(format!(
                "derivatives up to order 3 are supported, requested {max_derivative}"
            )));
        }
        let nb1 = self.degree + 1;
        let mut table = Vec::with_capacity(points.len());
        for &[xi, eta] in points {
            // 1d values and derivatives at xi and eta.
            let fx: Vec<[f64; 4]> = (0..nb1)
                .map(|i| {
                    let mut a = [0.0; 4];
                    for (d, slot) in a.iter_mut().enumerate().take(max_derivative + 1) {
                        *slot = self.eval_1d(i, xi, d);
                    }
                    a
                })
                .collect();
            let fy: Vec<[f64; 4]> = (0..nb1)
                .map(|j| {
                    let mut a = [0.0; 4];
                    for (d, slot) in a.iter_mut().enumerate().take(max_derivative + 1) {
                        *slot = self.eval_1d(j, eta, d);
                    }
                    a
                })
                .collect();
            let mut row = Vec::with_capacity(self.cardinality());
            for j in 0..nb1 {
                for i in 0..nb1 {
                    let mut s = ScalarDerivs { v: fx[i][0] * fy[j][0], ..Default::default() };
                    if max_derivative >= 1 {
                        s.g = [fx[i][1] * fy[j][0], fx[i][0] * fy[j][1]];
                    }
                    if max_derivative >= 2 {
                        s.h = [
                            fx[i][2] * fy[j][0],
                            fx[i][1] * fy[j][1],
                            fx[i][0] * fy[j][2],
                        ];
                    }
                    if max_derivative >= 3 {
                        s.t = [
                            fx[i][3] * fy[j][0],
                            fx[i][2] * fy[j][1],
                            fx[i][1] * fy[j][2],
                            fx[i][0] * fy[j][3],
                        ];
                    }
                    row.push(s);
                }
            }
            table.push(row);
        }
        Ok(Tabulation { table, max_derivative })
    }
}

/// Basis values/derivatives per point per basis function (reference scale).
#[derive(Debug, Clone)]
pub struct Tabulation {
    /// `table[point][basis]`
    pub table: Vec<Vec<ScalarDerivs>>,
    pub max_derivative: usize,
}

impl Tabulation {
    /// Physical-scale copy for a `dx x dy` cell.
    pub fn scaled(&self, dx: f64, dy: f64) -> Tabulation {
        Tabulation {
            table: self
                .table
                .iter()
                .map(|row| row.iter().map(|s| s.scaled(dx, dy)).collect())
                .collect(),
            max_derivative: self.max_derivative,
        }
    }
}

/// Gauss-Legendre rule with `n` points on `[-1,1]`, exact to degree `2n-1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        points[n - 1 - k] = x;
        weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (points, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for m in 2..=n {
        let m = m as f64;
        let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor Gauss rule on the reference square plus the matching 1d edge rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub cell_points: Vec<[f64; 2]>,
    pub cell_weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(order: usize) -> Self {
        let (p, w) = gauss_legendre(order);
        let mut cell_points = Vec::with_capacity(order * order);
        let mut cell_weights = Vec::with_capacity(order * order);
        for j in 0..order {
            for i in 0..order {
                cell_points.push([p[i], p[j]]);
                cell_weights.push(w[i] * w[j]);
            }
        }
        Self {
            order,
            cell_points,
            cell_weights,
            edge_points: p,
            edge_weights: w,
        }
    }
}

impl Default for QuadratureRule {
    /// 4 Gauss points per direction: exact to degree 7, which covers every
    /// polynomial integrand of the Q2 scheme including the cubic force term.
    fn default() -> Self {
        Self::new(4)
    }
}

/// Cell-major dof layout.
///
/// Displacement dof `(cell, basis, component)` maps to
/// `(cell*n_basis + basis)*3 + component`; multiplier dof `(cell, slot)` to
/// `cell*3 + slot`. Totals are `3*n_basis*n_cells` and `3*n_cells`.
#[derive(Debug, Clone, Copy)]
pub struct DofMap {
    pub n_cells: usize,
    pub n_basis: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, basis: &ReferenceBasis) -> Self {
        Self { n_cells: mesh.n_cells(), n_basis: basis.cardinality() }
    }

    #[inline]
    pub fn displacement(&self, cell: usize, basis: usize, component: usize) -> usize {
        (cell * self.n_basis + basis) * 3 + component
    }

    #[inline]
    pub fn scalar(&self, cell: usize, basis: usize) -> usize {
        cell * self.n_basis + basis
    }

    #[inline]
    pub fn multiplier(&self, cell: usize, slot: usize) -> usize {
        cell * 3 + slot
    }

    pub fn n_displacement(&self) -> usize {
        3 * self.n_basis * self.n_cells
    }

    pub fn n_scalar(&self) -> usize {
        self.n_basis * self.n_cells
    }

    pub fn n_multiplier(&self) -> usize {
        3 * self.n_cells
    }
}

/// Coefficients of a deformation field `y_h` (and optionally of the last
/// Lagrange multiplier).
#[derive(Debug, Clone)]
pub struct FieldCoefficients {
    pub y: Vec<f64>,
    pub multiplier: Option<Vec<f64>>,
}

impl FieldCoefficients {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self { y: vec![0.0; dofs.n_displacement()], multiplier: None }
    }

    pub fn from_y(y: Vec<f64>) -> Self {
        Self { y, multiplier: None }
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().all(|v| v.is_finite())
    }
}

/// Everything fixed about the discretization: basis, quadrature, dof layout.
#[derive(Debug, Clone)]
pub struct Space {
    pub basis: ReferenceBasis,
    pub quadrature: QuadratureRule,
    pub dofs: DofMap,
}

impl Space {
    pub fn new(mesh: &Mesh, basis: ReferenceBasis, quadrature: QuadratureRule) -> Self {
        let dofs = DofMap::new(mesh, &basis);
        Self { basis, quadrature, dofs }
    }

    /// Default Q2 space with the default quadrature.
    pub fn q2(mesh: &Mesh) -> Self {
        Self::new(mesh, ReferenceBasis::q2(), QuadratureRule::default())
    }
}

/// Vector field derivatives at one point: value, gradient columns
/// `g[a] = d_a y`, Hessian `h = [d11 y, d12 y, d22 y]` and third derivatives
/// `t = [d111 y, d112 y, d122 y, d222 y]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FieldDerivs {
    pub v: [f64; 3],
    pub g: [[f64; 3]; 2],
    pub h: [[f64; 3]; 3],
    pub t: [[f64; 3]; 4],
}

impl FieldDerivs {
    /// Accumulate `coeff * basis` into this point value.
    #[inline]
    pub fn accumulate(&mut self, s: &ScalarDerivs, coeff: [f64; 3]) {
        for c in 0..3 {
            self.v[c] += s.v * coeff[c];
            self.g[0][c] += s.g[0] * coeff[c];
            self.g[1][c] += s.g[1] * coeff[c];
            for m in 0..3 {
                self.h[m][c] += s.h[m] * coeff[c];
            }
            for m in 0..4 {
                self.t[m][c] += s.t[m] * coeff[c];
            }
        }
    }

    /// Unnormalized deformed-surface normal `d1 y x d2 y`.
    pub fn normal(&self) -> [f64; 3] {
        let a = self.g[0];
        let b = self.g[1];
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    /// First fundamental form `[grad y]^T grad y`.
    pub fn gram(&self) -> [[f64; 2]; 2] {
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        [
            [dot(self.g[0], self.g[0]), dot(self.g[0], self.g[1])],
            [dot(self.g[1], self.g[0]), dot(self.g[1], self.g[1])],
        ]
    }
}

/// Gather the 27 (generally `3(k+1)^2`) coefficients of one cell.
#[inline]
pub fn cell_coeffs<'a>(dofs: &DofMap, y: &'a [f64], cell: usize) -> &'a [f64] {
    let lo = dofs.displacement(cell, 0, 0);
    let hi = dofs.displacement(cell, dofs.n_basis - 1, 2);
    &y[lo..=hi]
}

/// Evaluate a coefficient field and derivatives up to order `d <= 3` at
/// reference points of one cell. Exact for fields in the discrete space.
pub fn evaluate_field(
    mesh: &Mesh,
    space: &Space,
    y: &[f64],
    cell: usize,
    points: &[[f64; 2]],
    d: usize,
) -> Result<Vec<FieldDerivs>> {
    let tab = space.basis.tabulate(points, d)?.scaled(mesh.dx, mesh.dy);
    let coeffs = cell_coeffs(&space.dofs, y, cell);
    Ok(evaluate_from_table(&tab, coeffs))
}

/// Evaluate from a pre-scaled tabulation and a cell coefficient slice.
pub fn evaluate_from_table(tab: &Tabulation, coeffs: &[f64]) -> Vec<FieldDerivs> {
    tab.table
        .iter()
        .map(|row| {
            let mut f = FieldDerivs::default();
            for (b, s) in row.iter().enumerate() {
                f.accumulate(s, [coeffs[3 * b], coeffs[3 * b + 1], coeffs[3 * b + 2]]);
            }
            f
        })
        .collect()
}

/// Nodal Lagrange interpolation of `y: R^2 -> R^3`, cell by cell.
pub fn interpolate(
    mesh: &Mesh,
    space: &Space,
    f: impl Fn([f64; 2]) -> [f64; 3],
) -> FieldCoefficients {
    let nodes = space.basis.nodes();
    let mut y = vec![0.0; space.dofs.n_displacement()];
    for cell in 0..mesh.n_cells() {
        for (b, &node) in nodes.iter().enumerate() {
            let p = mesh.to_physical(cell, node);
            let val = f(p);
            for c in 0..3 {
                y[space.dofs.displacement(cell, b, c)] = val[c];
            }
        }
    }
    FieldCoefficients::from_y(y)
}

/// Which side of an edge a trace is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSide {
    Minus,
    Plus,
}

/// One-sided traces of a field on an edge at parameters `t` in `[-1,1]`
/// (along the edge's stored vertex order).
pub fn edge_traces(
    mesh: &Mesh,
    space: &Space,
    y: &[f64],
    edge: &Edge,
    side: TraceSide,
    t_points: &[f64],
    d: usize,
) -> Result<Vec<FieldDerivs>> {
    let cell = match side {
        TraceSide::Minus => edge.cell_minus,
        TraceSide::Plus => edge.cell_plus.ok_or_else(|| {
            Error::InvalidArgument("plus-side trace requested on a boundary edge".into())
        })?,
    };
    let ref_points: Vec<[f64; 2]> = t_points
        .iter()
        .map(|&t| mesh.to_reference(cell, mesh.edge_point(edge, t)))
        .collect();
    evaluate_field(mesh, space, y, cell, &ref_points, d)
}

/// Reference points of the cell-side trace of an edge, shared by assembly
/// tables. `side` is a [`crate::mesh::CellSide`]; `t` runs over the edge
/// quadrature points in the global (increasing coordinate) direction.
pub fn side_reference_points(side: crate::mesh::CellSide, t: &[f64]) -> Vec<[f64; 2]> {
    use crate::mesh::CellSide::*;
    t.iter()
        .map(|&t| match side {
            Bottom => [t, -1.0],
            Right => [1.0, t],
            Top => [t, 1.0],
            Left => [-1.0, t],
        })
        .collect()
}

/// Check that an edge is usable for jumps: interior edges need both sides.
pub fn edge_is_active(edge: &Edge) -> bool {
    edge.kind != EdgeKind::Free
}
