//! Uniformly refined rectangular meshes with an oriented edge skeleton.
//!
//! A mesh starts from a single cell covering the domain; each refinement
//! splits every cell into four congruent rectangles, so level `r` has `4^r`
//! cells on a `2^r x 2^r` grid. Edges carry a fixed unit normal `mu`: for
//! interior edges it points from the lower-indexed adjacent cell (`cell-`)
//! into the higher-indexed one (`cell+`); for boundary edges it is the
//! outward normal. Jump signs downstream depend only on this convention.

use crate::{Error, Result};

/// Axis-aligned rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rectangle {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidArgument(format!(
                "degenerate rectangle ({x_min},{x_max})x({y_min},{y_max})"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Classification of a mesh edge after boundary marking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Shared by two cells; carries jump/average terms.
    Interior,
    /// Clamped: Nitsche consistency and penalty terms against boundary data.
    Dirichlet,
    /// Free boundary: no skeleton terms at all.
    Free,
}

/// Local side of a cell, counter-clockwise from the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSide {
    Bottom = 0,
    Right = 1,
    Top = 2,
    Left = 3,
}

impl CellSide {
    /// Outward unit normal of a cell on this side.
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            CellSide::Bottom => [0.0, -1.0],
            CellSide::Right => [1.0, 0.0],
            CellSide::Top => [0.0, 1.0],
            CellSide::Left => [-1.0, 0.0],
        }
    }
}

/// An edge of the skeleton.
///
/// `vertices` are ordered along the edge direction (increasing x for
/// horizontal edges, increasing y for vertical ones), so traces from both
/// sides are parameterized identically.
#[derive(Debug, Clone)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// Adjacent cell on the `-mu` side (always present).
    pub cell_minus: usize,
    /// Adjacent cell on the `+mu` side (interior edges only).
    pub cell_plus: Option<usize>,
    /// Local side of `cell_minus` this edge lies on.
    pub side_minus: CellSide,
    /// Local side of `cell_plus` this edge lies on.
    pub side_plus: Option<CellSide>,
    /// Unit normal `mu` (fixed orientation, see module docs).
    pub normal: [f64; 2],
    /// Edge length `h_e`.
    pub length: f64,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.cell_plus.is_none()
    }
}

/// Uniformly refined mesh of a rectangle.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Rectangle,
    pub refinement_level: u32,
    /// Cells per direction (`2^refinement_level`).
    pub nx: usize,
    pub ny: usize,
    /// Cell extents (all cells are congruent).
    pub dx: f64,
    pub dy: f64,
    pub vertices: Vec<[f64; 2]>,
    /// Vertex indices per cell, counter-clockwise from the lower-left corner.
    pub cells: Vec<[usize; 4]>,
    pub edges: Vec<Edge>,
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        self.vertices[self.cells[cell][0]]
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [o[0] + 0.5 * self.dx, o[1] + 0.5 * self.dy]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Map a reference point in `[-1,1]^2` to physical coordinates.
    pub fn to_physical(&self, cell: usize, p: [f64; 2]) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [
            o[0] + 0.5 * self.dx * (p[0] + 1.0),
            o[1] + 0.5 * self.dy * (p[1] + 1.0),
        ]
    }

    /// Map a physical point inside `cell` to reference coordinates.
    pub fn to_reference(&self, cell: usize, p: [f64; 2]) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [
            2.0 * (p[0] - o[0]) / self.dx - 1.0,
            2.0 * (p[1] - o[1]) / self.dy - 1.0,
        ]
    }

    pub fn has_dirichlet_edges(&self) -> bool {
        self.edges.iter().any(|e| e.kind == EdgeKind::Dirichlet)
    }

    /// Physical midpoint of an edge.
    pub fn edge_midpoint(&self, edge: &Edge) -> [f64; 2] {
        let a = self.vertices[edge.vertices[0]];
        let b = self.vertices[edge.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Physical point on an edge at parameter `t` in `[-1,1]` (along the
    /// stored vertex order).
    pub fn edge_point(&self, edge: &Edge, t: f64) -> [f64; 2] {
        let a = self.vertices[edge.vertices[0]];
        let b = self.vertices[edge.vertices[1]];
        [
            0.5 * (a[0] + b[0]) + 0.5 * t * (b[0] - a[0]),
            0.5 * (a[1] + b[1]) + 0.5 * t * (b[1] - a[1]),
        ]
    }
}

/// Axis-aligned segment selecting clamped geometry. May lie on the domain
/// boundary or on an interior mesh line (interior clamping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// `{x = at} x [lo, hi]`
    Vertical { at: f64, lo: f64, hi: f64 },
    /// `[lo, hi] x {y = at}`
    Horizontal { at: f64, lo: f64, hi: f64 },
}

/// A set of segments to clamp. Each segment must resolve to a union of whole
/// mesh edges, otherwise marking fails.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryMarking {
    pub segments: Vec<Segment>,
}

impl BoundaryMarking {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn segment(seg: Segment) -> Self {
        Self { segments: vec![seg] }
    }
}

/// Build the level-`refinements` uniform mesh of `domain`.
pub fn build_rectangular_mesh(domain: Rectangle, refinements: u32) -> Mesh {
    let n = 1usize << refinements;
    let (nx, ny) = (n, n);
    let dx = domain.width() / nx as f64;
    let dy = domain.height() / ny as f64;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([domain.x_min + i as f64 * dx, domain.y_min + j as f64 * dy]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    let cid = |i: usize, j: usize| j * nx + i;

    let mut edges = Vec::with_capacity(2 * nx * ny + nx + ny);
    // Vertical edges: x = const lines, ordered bottom-to-top vertex pairs.
    for j in 0..ny {
        for i in 0..=nx {
            let left = (i > 0).then(|| cid(i - 1, j));
            let right = (i < nx).then(|| cid(i, j));
            let (cell_minus, cell_plus, side_minus, side_plus, normal) = match (left, right) {
                (Some(l), Some(r)) => (l, Some(r), CellSide::Right, Some(CellSide::Left), [1.0, 0.0]),
                (Some(l), None) => (l, None, CellSide::Right, None, [1.0, 0.0]),
                (None, Some(r)) => (r, None, CellSide::Left, None, [-1.0, 0.0]),
                (None, None) => unreachable!(),
            };
            edges.push(Edge {
                vertices: [vid(i, j), vid(i, j + 1)],
                cell_minus,
                cell_plus,
                side_minus,
                side_plus,
                normal,
                length: dy,
                kind: if cell_plus.is_some() { EdgeKind::Interior } else { EdgeKind::Free },
            });
        }
    }
    // Horizontal edges: y = const lines, left-to-right vertex pairs.
    for j in 0..=ny {
        for i in 0..nx {
            let below = (j > 0).then(|| cid(i, j - 1));
            let above = (j < ny).then(|| cid(i, j));
            let (cell_minus, cell_plus, side_minus, side_plus, normal) = match (below, above) {
                (Some(b), Some(a)) => (b, Some(a), CellSide::Top, Some(CellSide::Bottom), [0.0, 1.0]),
                (Some(b), None) => (b, None, CellSide::Top, None, [0.0, 1.0]),
                (None, Some(a)) => (a, None, CellSide::Bottom, None, [0.0, -1.0]),
                (None, None) => unreachable!(),
            };
            edges.push(Edge {
                vertices: [vid(i, j), vid(i + 1, j)],
                cell_minus,
                cell_plus,
                side_minus,
                side_plus,
                normal,
                length: dx,
                kind: if cell_plus.is_some() { EdgeKind::Interior } else { EdgeKind::Free },
            });
        }
    }

    Mesh {
        domain,
        refinement_level: refinements,
        nx,
        ny,
        dx,
        dy,
        vertices,
        cells,
        edges,
    }
}

/// Mark clamped edges on a freshly built mesh.
///
/// Boundary edges inside a marked segment become [`EdgeKind::Dirichlet`];
/// unmarked boundary edges stay free. An interior edge inside a marked
/// segment is replaced by two coincident one-sided Dirichlet edges, one per
/// adjacent cell with that cell's outward normal, and no interior coupling
/// remains across the line (the clamped line acts as a crack).
pub fn mark_dirichlet(mesh: &Mesh, marking: &BoundaryMarking) -> Result<Mesh> {
    if mesh.has_dirichlet_edges() {
        return Err(Error::Marking(
            "mesh already carries dirichlet edges; mark a freshly built mesh".into(),
        ));
    }
    let tol = 1e-9 * mesh.domain.width().max(mesh.domain.height());

    // Validate that every segment sits on mesh lines and grid coordinates.
    for seg in &marking.segments {
        let (at, lo, hi, min, step, count, name) = match *seg {
            Segment::Vertical { at, lo, hi } => {
                (at, lo, hi, mesh.domain.x_min, mesh.dx, mesh.nx, "vertical")
            }
            Segment::Horizontal { at, lo, hi } => {
                (at, lo, hi, mesh.domain.y_min, mesh.dy, mesh.ny, "horizontal")
            }
        };
        let on_grid = |v: f64, min: f64, step: f64, count: usize| -> bool {
            let k = ((v - min) / step).round();
            k >= 0.0 && k <= count as f64 && (min + k * step - v).abs() <= tol
        };
        if !on_grid(at, min, step, count) {
            return Err(Error::Marking(format!(
                "{name} segment at {at} does not lie on a mesh line (spacing {step})"
            )));
        }
        let (tmin, tstep, tcount) = match *seg {
            Segment::Vertical { .. } => (mesh.domain.y_min, mesh.dy, mesh.ny),
            Segment::Horizontal { .. } => (mesh.domain.x_min, mesh.dx, mesh.nx),
        };
        if lo >= hi || !on_grid(lo, tmin, tstep, tcount) || !on_grid(hi, tmin, tstep, tcount) {
            return Err(Error::Marking(format!(
                "{name} segment endpoints [{lo},{hi}] are not resolved by the mesh"
            )));
        }
    }

    let contains = |edge: &Edge| -> bool {
        let a = mesh.vertices[edge.vertices[0]];
        let b = mesh.vertices[edge.vertices[1]];
        marking.segments.iter().any(|seg| match *seg {
            Segment::Vertical { at, lo, hi } => {
                (a[0] - at).abs() <= tol
                    && (b[0] - at).abs() <= tol
                    && a[1] >= lo - tol
                    && b[1] <= hi + tol
            }
            Segment::Horizontal { at, lo, hi } => {
                (a[1] - at).abs() <= tol
                    && (b[1] - at).abs() <= tol
                    && a[0] >= lo - tol
                    && b[0] <= hi + tol
            }
        })
    };

    let mut edges = Vec::with_capacity(mesh.edges.len());
    let mut marked = 0usize;
    for edge in &mesh.edges {
        if !contains(edge) {
            edges.push(edge.clone());
            continue;
        }
        marked += 1;
        match edge.cell_plus {
            None => {
                let mut e = edge.clone();
                e.kind = EdgeKind::Dirichlet;
                edges.push(e);
            }
            Some(plus) => {
                // Crack: one one-sided dirichlet edge per adjacent cell.
                let side_plus = edge.side_plus.expect("interior edge has side_plus");
                edges.push(Edge {
                    vertices: edge.vertices,
                    cell_minus: edge.cell_minus,
                    cell_plus: None,
                    side_minus: edge.side_minus,
                    side_plus: None,
                    normal: edge.side_minus.outward_normal(),
                    length: edge.length,
                    kind: EdgeKind::Dirichlet,
                });
                edges.push(Edge {
                    vertices: edge.vertices,
                    cell_minus: plus,
                    cell_plus: None,
                    side_minus: side_plus,
                    side_plus: None,
                    normal: side_plus.outward_normal(),
                    length: edge.length,
                    kind: EdgeKind::Dirichlet,
                });
            }
        }
    }
    if marked == 0 && !marking.segments.is_empty() {
        return Err(Error::Marking("marking selected no edges".into()));
    }

    let mut out = mesh.clone();
    out.edges = edges;
    Ok(out)
}

/// Active skeleton: indices of interior edges and of dirichlet edges.
/// Free boundary edges appear in neither list.
pub fn skeleton(mesh: &Mesh) -> (Vec<usize>, Vec<usize>) {
    let mut interior = Vec::new();
    let mut dirichlet = Vec::new();
    for (i, e) in mesh.edges.iter().enumerate() {
        match e.kind {
            EdgeKind::Interior => interior.push(i),
            EdgeKind::Dirichlet => dirichlet.push(i),
            EdgeKind::Free => {}
        }
    }
    (interior, dirichlet)
}
