//! Shared test oracles: brute-force quadrature evaluation of the bilinear
//! forms, energies and forces, independent of the table-driven assembly path
//! (fields are evaluated through `evaluate_field`/`edge_traces` at freshly
//! generated Gauss points of higher order than production assembly uses).

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use faer::prelude::Solve;
use platebend::assembly::{BoundaryData, CurvatureField, LoadField, PenaltyParams};
use platebend::mesh::{EdgeKind, Mesh};
use platebend::space::{
    edge_traces, evaluate_field, gauss_legendre, FieldDerivs, Space, TraceSide,
};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

/// Gauss order used by the oracle (production assembly uses 4).
const ORACLE_Q: usize = 6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

struct PointEval {
    minus: FieldDerivs,
    plus: Option<FieldDerivs>,
}

fn volume_points(mesh: &Mesh) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (p, w) = gauss_legendre(ORACLE_Q);
    let jac = 0.25 * mesh.dx * mesh.dy;
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for j in 0..ORACLE_Q {
        for i in 0..ORACLE_Q {
            pts.push([p[i], p[j]]);
            wts.push(w[i] * w[j] * jac);
        }
    }
    (pts, wts)
}

fn edge_field(
    mesh: &Mesh,
    space: &Space,
    y: &[f64],
    edge: &platebend::mesh::Edge,
    t: &[f64],
) -> Vec<PointEval> {
    let minus = edge_traces(mesh, space, y, edge, TraceSide::Minus, t, 3).unwrap();
    let plus = if edge.cell_plus.is_some() {
        Some(edge_traces(mesh, space, y, edge, TraceSide::Plus, t, 3).unwrap())
    } else {
        None
    };
    minus
        .into_iter()
        .enumerate()
        .map(|(k, m)| PointEval { minus: m, plus: plus.as_ref().map(|p| p[k]) })
        .collect()
}

fn h_mu(f: &FieldDerivs, c: usize, mu: [f64; 2]) -> [f64; 2] {
    [
        f.h[0][c] * mu[0] + f.h[1][c] * mu[1],
        f.h[1][c] * mu[0] + f.h[2][c] * mu[1],
    ]
}

fn lap_mu(f: &FieldDerivs, c: usize, mu: [f64; 2]) -> f64 {
    (f.t[0][c] + f.t[2][c]) * mu[0] + (f.t[1][c] + f.t[3][c]) * mu[1]
}

/// `a_h(w, v)` by direct quadrature: volume Hessian product plus the four
/// consistency groups and both penalties on the active skeleton.
pub fn oracle_a_h(
    mesh: &Mesh,
    space: &Space,
    params: &PenaltyParams,
    w: &[f64],
    v: &[f64],
) -> f64 {
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let fw = evaluate_field(mesh, space, w, cell, &pts, 2).unwrap();
        let fv = evaluate_field(mesh, space, v, cell, &pts, 2).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let mut dd = 0.0;
            for c in 0..3 {
                dd += fw[q].h[0][c] * fv[q].h[0][c]
                    + 2.0 * fw[q].h[1][c] * fv[q].h[1][c]
                    + fw[q].h[2][c] * fv[q].h[2][c];
            }
            acc += wq * dd;
        }
    }
    let (t, tw) = gauss_legendre(ORACLE_Q);
    for edge in mesh.edges.iter().filter(|e| e.kind != EdgeKind::Free) {
        let interior = edge.cell_plus.is_some();
        let mu = edge.normal;
        let h = edge.length;
        let ew = edge_field(mesh, space, w, edge, &t);
        let ev = edge_field(mesh, space, v, edge, &t);
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            for c in 0..3 {
                let (avg_hw, jump_gw, avg_dw, jump_vw) = edge_terms(&ew[q], c, mu, interior);
                let (avg_hv, jump_gv, avg_dv, jump_vv) = edge_terms(&ev[q], c, mu, interior);
                let mut term = 0.0;
                term -= avg_hw[0] * jump_gv[0] + avg_hw[1] * jump_gv[1];
                term -= avg_hv[0] * jump_gw[0] + avg_hv[1] * jump_gw[1];
                term += avg_dw * jump_vv;
                term += avg_dv * jump_vw;
                term += params.gamma1 / h * (jump_gw[0] * jump_gv[0] + jump_gw[1] * jump_gv[1]);
                term += params.gamma0 / (h * h * h) * jump_vw * jump_vv;
                acc += wq * term;
            }
        }
    }
    acc
}

fn edge_terms(
    pe: &PointEval,
    c: usize,
    mu: [f64; 2],
    interior: bool,
) -> ([f64; 2], [f64; 2], f64, f64) {
    let m = &pe.minus;
    if interior {
        let p = pe.plus.as_ref().unwrap();
        let hm = h_mu(m, c, mu);
        let hp = h_mu(p, c, mu);
        let avg_h = [0.5 * (hm[0] + hp[0]), 0.5 * (hm[1] + hp[1])];
        let jump_g = [m.g[0][c] - p.g[0][c], m.g[1][c] - p.g[1][c]];
        let avg_d = 0.5 * (lap_mu(m, c, mu) + lap_mu(p, c, mu));
        let jump_v = m.v[c] - p.v[c];
        (avg_h, jump_g, avg_d, jump_v)
    } else {
        (h_mu(m, c, mu), [m.g[0][c], m.g[1][c]], lap_mu(m, c, mu), m.v[c])
    }
}

/// `(v, w)` in the discrete H^2 metric by direct quadrature.
pub fn oracle_metric(
    mesh: &Mesh,
    space: &Space,
    params: &PenaltyParams,
    w: &[f64],
    v: &[f64],
) -> f64 {
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let fw = evaluate_field(mesh, space, w, cell, &pts, 2).unwrap();
        let fv = evaluate_field(mesh, space, v, cell, &pts, 2).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let mut dd = 0.0;
            let mut vv = 0.0;
            for c in 0..3 {
                dd += fw[q].h[0][c] * fv[q].h[0][c]
                    + 2.0 * fw[q].h[1][c] * fv[q].h[1][c]
                    + fw[q].h[2][c] * fv[q].h[2][c];
                vv += fw[q].v[c] * fv[q].v[c];
            }
            acc += wq * (dd + params.epsilon * vv);
        }
    }
    let (t, tw) = gauss_legendre(ORACLE_Q);
    for edge in mesh.edges.iter().filter(|e| e.kind == EdgeKind::Interior) {
        let mu = edge.normal;
        let h = edge.length;
        let ew = edge_field(mesh, space, w, edge, &t);
        let ev = edge_field(mesh, space, v, edge, &t);
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            for c in 0..3 {
                let (_, jgw, _, jvw) = edge_terms(&ew[q], c, mu, true);
                let (_, jgv, _, jvv) = edge_terms(&ev[q], c, mu, true);
                acc += wq
                    * ((jgw[0] * jgv[0] + jgw[1] * jgv[1]) / h + jvw * jvv / (h * h * h));
            }
        }
    }
    acc
}

/// Nitsche load `ell_h(v)` by direct quadrature.
pub fn oracle_ell(
    mesh: &Mesh,
    space: &Space,
    params: &PenaltyParams,
    data: &BoundaryData,
    v: &[f64],
) -> f64 {
    let (t, tw) = gauss_legendre(ORACLE_Q);
    let mut acc = 0.0;
    for edge in mesh.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
        let mu = edge.normal;
        let h = edge.length;
        let ev = edge_field(mesh, space, v, edge, &t);
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            let p = mesh.edge_point(edge, t[q]);
            let g = data.g(p);
            let phi = data.phi(p);
            for c in 0..3 {
                let f = &ev[q].minus;
                let hv = h_mu(f, c, mu);
                let dv = lap_mu(f, c, mu);
                let phi_row = [phi[0][c], phi[1][c]];
                acc += wq
                    * (-(hv[0] * phi_row[0] + hv[1] * phi_row[1])
                        + dv * g[c]
                        + params.gamma1 / h * (phi_row[0] * f.g[0][c] + phi_row[1] * f.g[1][c])
                        + params.gamma0 / (h * h * h) * g[c] * f.v[c]);
            }
        }
    }
    acc
}

/// Left-hand side of the rearranged (explicit-Nitsche) variational identity:
/// symmetrized consistency terms with the trial-side parts on the full
/// skeleton and the test-side parts on the interior skeleton, penalties on
/// the interior skeleton, and boundary terms against the data deviations.
/// Algebraically equal to `a_h(y, v) - ell_h(v)`.
pub fn oracle_nitsche_form(
    mesh: &Mesh,
    space: &Space,
    params: &PenaltyParams,
    data: &BoundaryData,
    y: &[f64],
    v: &[f64],
) -> f64 {
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let fy = evaluate_field(mesh, space, y, cell, &pts, 2).unwrap();
        let fv = evaluate_field(mesh, space, v, cell, &pts, 2).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let mut dd = 0.0;
            for c in 0..3 {
                dd += fy[q].h[0][c] * fv[q].h[0][c]
                    + 2.0 * fy[q].h[1][c] * fv[q].h[1][c]
                    + fy[q].h[2][c] * fv[q].h[2][c];
            }
            acc += wq * dd;
        }
    }
    let (t, tw) = gauss_legendre(ORACLE_Q);
    for edge in mesh.edges.iter().filter(|e| e.kind != EdgeKind::Free) {
        let interior = edge.cell_plus.is_some();
        let mu = edge.normal;
        let h = edge.length;
        let ey = edge_field(mesh, space, y, edge, &t);
        let ev = edge_field(mesh, space, v, edge, &t);
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            let p = mesh.edge_point(edge, t[q]);
            let (gd, phid) = (data.g(p), data.phi(p));
            for c in 0..3 {
                let (avg_hy, jump_gy, avg_dy, jump_vy) = edge_terms(&ey[q], c, mu, interior);
                let (avg_hv, jump_gv, avg_dv, jump_vv) = edge_terms(&ev[q], c, mu, interior);
                let mut term = 0.0;
                // trial-side consistency on the full skeleton
                term -= avg_hy[0] * jump_gv[0] + avg_hy[1] * jump_gv[1];
                term += avg_dy * jump_vv;
                if interior {
                    term -= avg_hv[0] * jump_gy[0] + avg_hv[1] * jump_gy[1];
                    term += avg_dv * jump_vy;
                    term += params.gamma1 / h * (jump_gy[0] * jump_gv[0] + jump_gy[1] * jump_gv[1]);
                    term += params.gamma0 / (h * h * h) * jump_vy * jump_vv;
                } else {
                    // boundary terms against the data deviations
                    let dev_g = [jump_gy[0] - phid[0][c], jump_gy[1] - phid[1][c]];
                    let dev_v = jump_vy - gd[c];
                    term -= avg_hv[0] * dev_g[0] + avg_hv[1] * dev_g[1];
                    term += avg_dv * dev_v;
                    term += params.gamma1 / h * (dev_g[0] * jump_gv[0] + dev_g[1] * jump_gv[1]);
                    term += params.gamma0 / (h * h * h) * dev_v * jump_vv;
                }
                acc += wq * term;
            }
        }
    }
    acc
}

/// Curvature force pairing `sum_T int z_ij d_ij v . (d1 y x d2 y)`.
pub fn oracle_force_pairing(
    mesh: &Mesh,
    space: &Space,
    z: &CurvatureField,
    y: &[f64],
    v: &[f64],
) -> f64 {
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let zc = z.eval(mesh.cell_center(cell));
        let fy = evaluate_field(mesh, space, y, cell, &pts, 1).unwrap();
        let fv = evaluate_field(mesh, space, v, cell, &pts, 2).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let nu = fy[q].normal();
            let mut term = 0.0;
            for c in 0..3 {
                let zv = zc[0][0] * fv[q].h[0][c]
                    + 2.0 * zc[0][1] * fv[q].h[1][c]
                    + zc[1][1] * fv[q].h[2][c];
                term += zv * nu[c];
            }
            acc += wq * term;
        }
    }
    acc
}

/// Full directional derivative of the cubic coupling, including the
/// normal-variation terms the scheme deliberately drops:
/// `sum_T int z_ij [ d_ij v . nu(y) + d_ij y . (d1 v x d2 y + d1 y x d2 v) ]`.
pub fn oracle_cubic_full_derivative(
    mesh: &Mesh,
    space: &Space,
    z: &CurvatureField,
    y: &[f64],
    v: &[f64],
) -> f64 {
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let zc = z.eval(mesh.cell_center(cell));
        let fy = evaluate_field(mesh, space, y, cell, &pts, 2).unwrap();
        let fv = evaluate_field(mesh, space, v, cell, &pts, 2).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let nu = fy[q].normal();
            let dnu = {
                let a = cross(fv[q].g[0], fy[q].g[1]);
                let b = cross(fy[q].g[0], fv[q].g[1]);
                [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
            };
            let mut term = 0.0;
            for c in 0..3 {
                let zv = zc[0][0] * fv[q].h[0][c]
                    + 2.0 * zc[0][1] * fv[q].h[1][c]
                    + zc[1][1] * fv[q].h[2][c];
                let zy = zc[0][0] * fy[q].h[0][c]
                    + 2.0 * zc[0][1] * fy[q].h[1][c]
                    + zc[1][1] * fy[q].h[2][c];
                term += zv * nu[c] + zy * dnu[c];
            }
            acc += wq * term;
        }
    }
    acc
}

/// `(f, v)` by direct quadrature.
pub fn oracle_load(mesh: &Mesh, space: &Space, load: &LoadField, v: &[f64]) -> f64 {
    let (pts, wts) = volume_points(mesh);
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let fv = evaluate_field(mesh, space, v, cell, &pts, 0).unwrap();
        for (q, &wq) in wts.iter().enumerate() {
            let p = mesh.to_physical(cell, pts[q]);
            let f = load.eval(p);
            acc += wq * (f[0] * fv[q].v[0] + f[1] * fv[q].v[1] + f[2] * fv[q].v[2]);
        }
    }
    acc
}

/// Data norms `gamma1/2 |h^{-1/2} Phi|^2 + gamma0/2 |h^{-3/2} g|^2` on the
/// dirichlet skeleton (the state-independent part of the energy identity).
pub fn oracle_data_constant(
    mesh: &Mesh,
    space: &Space,
    params: &PenaltyParams,
    data: &BoundaryData,
) -> f64 {
    let _ = space;
    let (t, tw) = gauss_legendre(ORACLE_Q);
    let mut acc = 0.0;
    for edge in mesh.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
        let h = edge.length;
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            let p = mesh.edge_point(edge, t[q]);
            let g = data.g(p);
            let phi = data.phi(p);
            let mut phin = 0.0;
            let mut gn = 0.0;
            for c in 0..3 {
                phin += phi[0][c] * phi[0][c] + phi[1][c] * phi[1][c];
                gn += g[c] * g[c];
            }
            acc += wq * (0.5 * params.gamma1 / h * phin + 0.5 * params.gamma0 / (h * h * h) * gn);
        }
    }
    acc
}

/// Per-cell `int_T [grad y]^T grad y` by high-order quadrature.
pub fn oracle_cell_gram(mesh: &Mesh, space: &Space, y: &[f64], cell: usize) -> [[f64; 2]; 2] {
    let (pts, wts) = volume_points(mesh);
    let fy = evaluate_field(mesh, space, y, cell, &pts, 1).unwrap();
    let mut out = [[0.0; 2]; 2];
    for (q, &wq) in wts.iter().enumerate() {
        let g = fy[q].gram();
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += wq * g[i][j];
            }
        }
    }
    out
}

/// Random proper rotation from three Euler-like angles.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (a, b, c): (f64, f64, f64) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    // R = Rz(a) Ry(b) Rx(c)
    [
        [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
        [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
        [-sb, cb * sc, cb * cc],
    ]
}

/// Apply a rigid motion to a nodal coefficient vector.
pub fn apply_rigid_motion(y: &[f64], r: [[f64; 3]; 3], t: [f64; 3]) -> Vec<f64> {
    y.chunks_exact(3)
        .flat_map(|p| {
            (0..3).map(move |i| {
                r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]
            })
        })
        .collect()
}

/// Per-cell mean normal curvature `(1/|T|) int_T tr(H)` with the unit normal
/// `nu / |nu|`, a measurement for wave/strip checks.
pub fn mean_curvature_per_cell(mesh: &Mesh, space: &Space, y: &[f64]) -> Vec<f64> {
    let (pts, wts) = volume_points(mesh);
    let area = mesh.cell_area();
    let mut out = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        let f = evaluate_field(mesh, space, y, cell, &pts, 2).unwrap();
        let mut acc = 0.0;
        for (q, &wq) in wts.iter().enumerate() {
            let nu = f[q].normal();
            let len = (nu[0] * nu[0] + nu[1] * nu[1] + nu[2] * nu[2]).sqrt().max(1e-30);
            let dot = |a: [f64; 3]| (a[0] * nu[0] + a[1] * nu[1] + a[2] * nu[2]) / len;
            acc += wq * (dot(f[q].h[0]) + dot(f[q].h[2]));
        }
        out.push(acc / area);
    }
    out
}

/// Deformed positions of all cell centers.
pub fn deformed_cell_centers(mesh: &Mesh, space: &Space, y: &[f64]) -> Vec<[f64; 3]> {
    (0..mesh.n_cells())
        .map(|cell| {
            evaluate_field(mesh, space, y, cell, &[[0.0, 0.0]], 0).unwrap()[0].v
        })
        .collect()
}

/// Max distance of a point cloud from its best-fit plane (total least
/// squares: centroid plus the smallest-variance direction of the covariance).
pub fn max_deviation_from_best_fit_plane(points: &[[f64; 3]]) -> f64 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    // smallest eigenvector of cov via power iteration on (sigma I - cov)
    let sigma = cov[0][0] + cov[1][1] + cov[2][2];
    let mut v = [0.3, -0.5, 0.8];
    for _ in 0..500 {
        let mut w = [0.0; 3];
        for i in 0..3 {
            w[i] = sigma * v[i] - (cov[i][0] * v[0] + cov[i][1] * v[1] + cov[i][2] * v[2]);
        }
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt().max(1e-300);
        v = [w[0] / norm, w[1] / norm, w[2] / norm];
    }
    points
        .iter()
        .map(|p| {
            ((p[0] - c[0]) * v[0] + (p[1] - c[1]) * v[1] + (p[2] - c[2]) * v[2]).abs()
        })
        .fold(0.0, f64::max)
}

/// L^2 norm of `y - g` over the dirichlet skeleton.
pub fn dirichlet_trace_error(mesh: &Mesh, space: &Space, y: &[f64], data: &BoundaryData) -> f64 {
    let (t, tw) = gauss_legendre(ORACLE_Q);
    let mut acc = 0.0;
    for edge in mesh.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
        let h = edge.length;
        let tr = edge_traces(mesh, space, y, edge, TraceSide::Minus, &t, 0).unwrap();
        for (q, &twq) in tw.iter().enumerate() {
            let wq = twq * 0.5 * h;
            let g = data.g(mesh.edge_point(edge, t[q]));
            for c in 0..3 {
                let d = tr[q].v[c] - g[c];
                acc += wq * d * d;
            }
        }
    }
    acc.sqrt()
}

/// Dense KKT solve of the saddle-point step, used as the oracle for the
/// Schur-complement path on tiny meshes.
pub fn dense_kkt_solve(
    combined_full: &faer::Mat<f64>,
    b_full: &faer::Mat<f64>,
    rhs: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = combined_full.nrows();
    let m = b_full.nrows();
    let mut kkt = faer::Mat::<f64>::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = combined_full[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..n {
            kkt[(n + i, j)] = b_full[(i, j)];
            kkt[(j, n + i)] = b_full[(i, j)];
        }
    }
    let mut full_rhs = faer::Mat::<f64>::zeros(n + m, 1);
    for i in 0..n {
        full_rhs[(i, 0)] = rhs[i];
    }
    let sol = kkt.full_piv_lu().solve(&full_rhs);
    (
        (0..n).map(|i| sol[(i, 0)]).collect(),
        (0..m).map(|i| sol[(n + i, 0)]).collect(),
    )
}
