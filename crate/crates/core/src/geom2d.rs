//! Cut-cell meshes of the unit square with a straight ramp removed.
//!
//! Background cells are clipped exactly against the half-plane above the
//! ramp line. Intersection points are computed from the grid line they lie on
//! (never from the cell being clipped), so both cells sharing a grid edge
//! produce bit-identical endpoints and faces can be matched by their vertex
//! bit patterns.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh1d::Mesh1D;
use crate::quadrature::{gauss_interval, gauss_legendre};

pub type Point = [f64; 2];

/// Offset of the ramp foot on the x axis.
pub const RAMP_X0: f64 = 0.2001;

/// Cells whose area falls below this fraction of `h^2` are dropped as
/// degenerate.
const MIN_FRACTION: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// Part of the bounding box.
    Domain,
    /// Part of the embedded cut boundary.
    Cut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub background: (usize, usize),
    /// Counterclockwise.
    pub vertices: Vec<Point>,
    pub volume: f64,
    pub centroid: Point,
    pub volume_fraction: f64,
    pub faces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub a: Point,
    pub b: Point,
    pub length: f64,
    /// Unit normal pointing out of `left`.
    pub normal: Point,
    pub left: usize,
    pub right: Option<usize>,
    pub boundary: Option<BoundaryTag>,
}

impl Face {
    /// Outward normal seen from `cell`.
    pub fn normal_from(&self, cell: usize) -> Point {
        if cell == self.left {
            self.normal
        } else {
            [-self.normal[0], -self.normal[1]]
        }
    }

    /// The cell on the other side, if any.
    pub fn neighbor(&self, cell: usize) -> Option<usize> {
        if cell == self.left {
            self.right
        } else {
            Some(self.left)
        }
    }

    pub fn midpoint(&self) -> Point {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }

    pub fn quadrature(&self, n: usize) -> Vec<(Point, f64)> {
        segment_quadrature(self.a, self.b, n)
    }
}

/// Kind of a polygon edge given to [`CutCellMesh::from_polygons`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Lies on a background grid line.
    Grid,
    /// Lies on the embedded boundary.
    Cut,
}

/// A polygon with the kind of the edge starting at each vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonInput {
    pub background: (usize, usize),
    pub vertices: Vec<Point>,
    pub edges: Vec<EdgeKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutCellMesh {
    h: f64,
    cells: Vec<Cell>,
    faces: Vec<Face>,
}

fn bits(p: Point) -> (u64, u64) {
    (p[0].to_bits(), p[1].to_bits())
}

/// Signed area and centroid of a polygon.
pub fn polygon_area_centroid(v: &[Point]) -> (f64, Point) {
    // Shift to the first vertex to limit cancellation for tiny polygons.
    let o = v[0];
    let mut area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 1..v.len().saturating_sub(1) {
        let p = [v[k][0] - o[0], v[k][1] - o[1]];
        let q = [v[k + 1][0] - o[0], v[k + 1][1] - o[1]];
        let cross = p[0] * q[1] - p[1] * q[0];
        area += 0.5 * cross;
        cx += cross * (p[0] + q[0]) / 6.0;
        cy += cross * (p[1] + q[1]) / 6.0;
    }
    if area == 0.0 {
        return (0.0, o);
    }
    (area, [o[0] + cx / area, o[1] + cy / area])
}

fn is_convex(v: &[Point]) -> bool {
    let n = v.len();
    let scale: f64 = v
        .iter()
        .map(|p| (p[0] - v[0][0]).abs() + (p[1] - v[0][1]).abs())
        .fold(0.0, f64::max);
    (0..n).all(|k| {
        let a = v[k];
        let b = v[(k + 1) % n];
        let c = v[(k + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        cross >= -1e-12 * scale * scale
    })
}

/// Gauss rule with `n` points on the segment `a -> b`.
pub fn segment_quadrature(a: Point, b: Point, n: usize) -> Vec<(Point, f64)> {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    gauss_interval(n, 0.0, 1.0)
        .into_iter()
        .map(|(t, w)| {
            (
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                w * len,
            )
        })
        .collect()
}

/// Quadrature on a convex polygon, exact for polynomials of total degree
/// `degree`: fan triangulation from the centroid with a collapsed Gauss
/// rule on each triangle.
pub fn polygon_quadrature(v: &[Point], degree: usize) -> Result<Vec<(Point, f64)>> {
    if v.len() < 3 {
        return Err(Error::InvalidMesh("polygon with fewer than 3 vertices".into()));
    }
    if !is_convex(v) {
        return Err(Error::InvalidMesh("non-convex polygon".into()));
    }
    let (_, c) = polygon_area_centroid(v);
    // The collapsed map adds one degree in the radial direction.
    let n = degree / 2 + 1;
    let (xs, ws) = gauss_legendre(n + 1);
    let (ys, wy) = gauss_legendre(n);
    let mut out = Vec::with_capacity(v.len() * n * (n + 1));
    for k in 0..v.len() {
        let p1 = v[k];
        let p2 = v[(k + 1) % v.len()];
        let e1 = [p1[0] - c[0], p1[1] - c[1]];
        let e2 = [p2[0] - p1[0], p2[1] - p1[1]];
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        if det <= 0.0 {
            continue;
        }
        for (xi, wi) in xs.iter().zip(&ws) {
            let u = 0.5 * (xi + 1.0);
            for (yj, wj) in ys.iter().zip(&wy) {
                let s = 0.5 * (yj + 1.0);
                let p = [
                    c[0] + u * e1[0] + u * s * e2[0],
                    c[1] + u * e1[1] + u * s * e2[1],
                ];
                out.push((p, 0.25 * wi * wj * u * det));
            }
        }
    }
    Ok(out)
}

impl CutCellMesh {
    /// Build a mesh from polygons. Grid edges shared by two polygons (same
    /// endpoint bits) become interior faces; remaining grid edges on the
    /// bounding box are tagged [`BoundaryTag::Domain`], everything else
    /// [`BoundaryTag::Cut`].
    pub fn from_polygons(h: f64, polys: Vec<PolygonInput>, bbox: [Point; 2]) -> Result<Self> {
        let mut cells = Vec::with_capacity(polys.len());
        let mut faces: Vec<Face> = Vec::new();
        let mut open: HashMap<((u64, u64), (u64, u64)), usize> = HashMap::new();
        for poly in polys {
            if poly.vertices.len() != poly.edges.len() {
                return Err(Error::InvalidMesh("one edge kind per vertex required".into()));
            }
            let (volume, centroid) = polygon_area_centroid(&poly.vertices);
            if !(volume > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "cell {:?} has non-positive area",
                    poly.background
                )));
            }
            if !is_convex(&poly.vertices) {
                return Err(Error::InvalidMesh(format!("cell {:?} is not convex", poly.background)));
            }
            let id = cells.len();
            let n = poly.vertices.len();
            let mut cell_faces = Vec::with_capacity(n);
            for k in 0..n {
                let a = poly.vertices[k];
                let b = poly.vertices[(k + 1) % n];
                let dx = b[0] - a[0];
                let dy = b[1] - a[1];
                let length = (dx * dx + dy * dy).sqrt();
                if length == 0.0 {
                    continue;
                }
                let key = if bits(a) < bits(b) {
                    (bits(a), bits(b))
                } else {
                    (bits(b), bits(a))
                };
                if poly.edges[k] == EdgeKind::Grid {
                    if let Some(f) = open.remove(&key) {
                        faces[f].right = Some(id);
                        faces[f].boundary = None;
                        cell_faces.push(f);
                        continue;
                    }
                }
                let on_box = |p: Point, q: Point| {
                    (p[0] == bbox[0][0] && q[0] == bbox[0][0])
                        || (p[0] == bbox[1][0] && q[0] == bbox[1][0])
                        || (p[1] == bbox[0][1] && q[1] == bbox[0][1])
                        || (p[1] == bbox[1][1] && q[1] == bbox[1][1])
                };
                let tag = match poly.edges[k] {
                    EdgeKind::Grid if on_box(a, b) => BoundaryTag::Domain,
                    _ => BoundaryTag::Cut,
                };
                let f = faces.len();
                faces.push(Face {
                    a,
                    b,
                    length,
                    normal: [dy / length, -dx / length],
                    left: id,
                    right: None,
                    boundary: Some(tag),
                });
                if poly.edges[k] == EdgeKind::Grid {
                    open.insert(key, f);
                }
                cell_faces.push(f);
            }
            cells.push(Cell {
                background: poly.background,
                vertices: poly.vertices,
                volume,
                centroid,
                volume_fraction: volume / (h * h),
                faces: cell_faces,
            });
        }
        // Interior grid edges left unmatched lie next to a dropped cell.
        for f in open.into_values() {
            let face = &faces[f];
            let inside = |p: Point| {
                p[0] > bbox[0][0] && p[0] < bbox[1][0] && p[1] > bbox[0][1] && p[1] < bbox[1][1]
            };
            if inside(face.midpoint()) {
                faces[f].boundary = Some(BoundaryTag::Cut);
            }
        }
        Ok(Self { h, cells, faces })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Cells sharing a face with `c`.
    pub fn neighbors(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.cells[c]
            .faces
            .iter()
            .filter_map(move |&f| self.faces[f].neighbor(c))
    }

    /// Unordered pairs of face neighbors, each listed once.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        self.faces
            .iter()
            .filter_map(|f| f.right.map(|r| (f.left, r)))
            .collect()
    }

    /// Diameter-like length scale of a cell.
    pub fn cell_radius(&self, c: usize) -> f64 {
        let cell = &self.cells[c];
        cell.vertices
            .iter()
            .map(|v| ((v[0] - cell.centroid[0]).powi(2) + (v[1] - cell.centroid[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn volume_quadrature(&self, c: usize, degree: usize) -> Vec<(Point, f64)> {
        polygon_quadrature(&self.cells[c].vertices, degree).expect("cells validated as convex")
    }

    /// Legacy VTK polygon file with volume fraction and stabilized flags.
    pub fn write_vtk<W: Write>(&self, stabilized: &[usize], mut w: W) -> Result<()> {
        let mut flags = vec![0; self.cells.len()];
        for &s in stabilized {
            flags[s] = 1;
        }
        write_polydata_header(self, &mut w)?;
        writeln!(w, "CELL_DATA {}", self.cells.len())?;
        writeln!(w, "SCALARS volume_fraction double 1\nLOOKUP_TABLE default")?;
        for c in &self.cells {
            writeln!(w, "{:e}", c.volume_fraction)?;
        }
        writeln!(w, "SCALARS stabilized int 1\nLOOKUP_TABLE default")?;
        for f in flags {
            writeln!(w, "{f}")?;
        }
        Ok(())
    }

    /// One row per cell: `cell,i,j,n_vertices,volume,volume_fraction,cx,cy,stabilized`.
    pub fn write_csv<W: Write>(&self, stabilized: &[usize], mut w: W) -> Result<()> {
        writeln!(w, "cell,i,j,n_vertices,volume,volume_fraction,cx,cy,stabilized")?;
        for (k, c) in self.cells.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{:e},{:e},{:e},{:e},{}",
                c.background.0,
                c.background.1,
                c.vertices.len(),
                c.volume,
                c.volume_fraction,
                c.centroid[0],
                c.centroid[1],
                stabilized.contains(&k)
            )?;
        }
        Ok(())
    }
}

/// Writes the points and polygons of a legacy VTK polydata file.
pub(crate) fn write_polydata_header<W: Write>(mesh: &CutCellMesh, w: &mut W) -> Result<()> {
    let n_points: usize = mesh.cells.iter().map(|c| c.vertices.len()).sum();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "cut cell mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {n_points} double")?;
    for c in &mesh.cells {
        for v in &c.vertices {
            writeln!(w, "{:.17e} {:.17e} 0", v[0], v[1])?;
        }
    }
    writeln!(w, "POLYGONS {} {}", mesh.cells.len(), n_points + mesh.cells.len())?;
    let mut next = 0;
    for c in &mesh.cells {
        let ids: Vec<String> = (next..next + c.vertices.len()).map(|i| i.to_string()).collect();
        next += c.vertices.len();
        writeln!(w, "{} {}", c.vertices.len(), ids.join(" "))?;
    }
    Ok(())
}

/// The line `y = tan(gamma) (x - x0)`; the domain is the side above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub gamma: f64,
    pub x0: f64,
}

impl Ramp {
    /// Ramp at angle `gamma_deg` degrees with foot at [`RAMP_X0`].
    pub fn new(gamma_deg: f64) -> Self {
        Self {
            gamma: gamma_deg.to_radians(),
            x0: RAMP_X0,
        }
    }

    pub fn level(&self, p: Point) -> f64 {
        p[1] - self.gamma.tan() * (p[0] - self.x0)
    }

    /// Coordinates along (`x_hat`) and normal to (`y_hat`) the ramp.
    pub fn to_hat(&self, p: Point) -> Point {
        let (s, c) = self.gamma.sin_cos();
        let dx = p[0] - self.x0;
        [c * dx + s * p[1], -s * dx + c * p[1]]
    }

    /// Area of the unit square below the line.
    pub fn area_below(&self) -> f64 {
        // Integral of clamp(tan(gamma) (x - x0), 0, 1) over [0, 1].
        let t = self.gamma.tan();
        let a = self.x0.max(0.0);
        if a >= 1.0 {
            return 0.0;
        }
        let top = self.x0 + 1.0 / t;
        if top >= 1.0 {
            0.5 * t * (1.0 - a).powi(2) - if self.x0 < 0.0 { 0.5 * t * self.x0 * self.x0 } else { 0.0 }
        } else {
            0.5 * t * (top - a).powi(2) + (1.0 - top)
        }
    }
}

/// Clip background cell `(i, j)` of an `n x n` grid against the region above
/// the ramp. Returns `None` when nothing (or a degenerate sliver) is left.
fn clip_cell(i: usize, j: usize, n: usize, ramp: &Ramp) -> Option<PolygonInput> {
    let nf = n as f64;
    let x = |k: usize| k as f64 / nf;
    let t = ramp.gamma.tan();
    // Corners counterclockwise from bottom-left; edge k runs from corner k.
    let corners = [
        [x(i), x(j)],
        [x(i + 1), x(j)],
        [x(i + 1), x(j + 1)],
        [x(i), x(j + 1)],
    ];
    let inside: Vec<bool> = corners.iter().map(|&p| ramp.level(p) > 0.0).collect();
    if inside.iter().all(|&b| b) {
        return Some(PolygonInput {
            background: (i, j),
            vertices: corners.to_vec(),
            edges: vec![EdgeKind::Grid; 4],
        });
    }
    if inside.iter().all(|&b| !b) {
        return None;
    }
    let mut verts = Vec::with_capacity(5);
    let mut edges = Vec::with_capacity(5);
    for k in 0..4 {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        if inside[k] {
            verts.push(a);
            edges.push(EdgeKind::Grid);
        }
        if inside[k] != inside[(k + 1) % 4] {
            // Canonical intersection from the grid line the edge lies on.
            let p = if a[0] == b[0] {
                [a[0], t * (a[0] - ramp.x0)]
            } else {
                [ramp.x0 + a[1] / t, a[1]]
            };
            verts.push(p);
            // Leaving the domain starts a cut edge; entering continues along the grid.
            edges.push(if inside[k] { EdgeKind::Cut } else { EdgeKind::Grid });
        }
    }
    let (area, _) = polygon_area_centroid(&verts);
    if area <= MIN_FRACTION / (nf * nf) {
        return None;
    }
    Some(PolygonInput {
        background: (i, j),
        vertices: verts,
        edges,
    })
}

/// Unit square `n x n` grid with the region below the line
/// `y = tan(gamma) (x - x0)` removed.
pub fn build_clipped_mesh(n: usize, ramp: &Ramp) -> Result<CutCellMesh> {
    let polys: Vec<PolygonInput> = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .filter_map(|(i, j)| clip_cell(i, j, n, ramp))
        .collect();
    let mut mesh = CutCellMesh::from_polygons(1.0 / n as f64, polys, [[0.0, 0.0], [1.0, 1.0]])?;
    // Vertex differences of very short cut faces give inaccurate normals;
    // the line normal is known exactly.
    let (s, c) = ramp.gamma.sin_cos();
    for f in mesh.faces.iter_mut() {
        if f.boundary == Some(BoundaryTag::Cut) && f.right.is_none() && ramp.level(f.a).abs() < 1e-12 {
            f.normal = [s, -c];
        }
    }
    Ok(mesh)
}

/// Ramp mesh at angle `gamma_deg` degrees.
pub fn build_ramp_mesh(n: usize, gamma_deg: f64) -> Result<CutCellMesh> {
    if n < 10 {
        return Err(invalid("N", format!("{n} < 10")));
    }
    if !(5.0..=45.0).contains(&gamma_deg) {
        return Err(invalid("gamma", format!("{gamma_deg} outside [5, 45] degrees")));
    }
    build_clipped_mesh(n, &Ramp::new(gamma_deg))
}

/// One row of rectangles `[x_j, x_{j+1}] x [0, height]` following a 1D mesh.
pub fn strip_mesh(mesh: &Mesh1D, height: f64) -> Result<CutCellMesh> {
    let edges = mesh.edges();
    let polys = (0..mesh.num_cells())
        .map(|j| {
            let (a, b) = (edges[j], edges[j + 1]);
            PolygonInput {
                background: (j, 0),
                vertices: vec![[a, 0.0], [b, 0.0], [b, height], [a, height]],
                edges: vec![EdgeKind::Grid; 4],
            }
        })
        .collect();
    CutCellMesh::from_polygons(mesh.h(), polys, [[0.0, 0.0], [1.0, height]])
}

/// Cells with volume fraction below `threshold`; no two of them may share a
/// face.
pub fn stabilized_set(mesh: &CutCellMesh, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid("threshold", format!("{threshold} outside (0, 1)")));
    }
    let set: Vec<usize> = (0..mesh.num_cells())
        .filter(|&c| mesh.cell(c).volume_fraction < threshold)
        .collect();
    check_not_adjacent(mesh, &set)?;
    Ok(set)
}

pub(crate) fn check_not_adjacent(mesh: &CutCellMesh, set: &[usize]) -> Result<()> {
    let mut flag = vec![false; mesh.num_cells()];
    for &c in set {
        flag[c] = true;
    }
    for f in mesh.faces() {
        if let Some(r) = f.right {
            if flag[f.left] && flag[r] {
                return Err(Error::AdjacentStabilized(f.left.min(r), f.left.max(r)));
            }
        }
    }
    Ok(())
}

/// Advection velocity fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Velocity {
    Constant { b: Point },
    /// Speed 2 parallel to the ramp.
    RampConstant { gamma: f64 },
    /// Parallel to the ramp with speed `1 - y_hat / 2`, where `y_hat` is the
    /// distance from the ramp line.
    RampVarying { gamma: f64 },
}

impl Velocity {
    pub fn ramp_constant(gamma_deg: f64) -> Self {
        Velocity::RampConstant {
            gamma: gamma_deg.to_radians(),
        }
    }

    pub fn ramp_varying(gamma_deg: f64) -> Self {
        Velocity::RampVarying {
            gamma: gamma_deg.to_radians(),
        }
    }

    pub fn eval(&self, p: Point) -> Point {
        match *self {
            Velocity::Constant { b } => b,
            Velocity::RampConstant { gamma } => {
                let d = 2.0 / (1.0 + gamma.tan().powi(2)).sqrt();
                [d, d * gamma.tan()]
            }
            Velocity::RampVarying { gamma } => {
                let d = 1.0 / (2.0 * (1.0 + gamma.tan().powi(2)).sqrt());
                let s = 2.0 + (p[0] - RAMP_X0) * gamma.sin() + p[1] * (gamma + std::f64::consts::PI).cos();
                [d * s, d * gamma.tan() * s]
            }
        }
    }

    /// Largest speed over the volume quadrature points of all cells.
    pub fn max_norm(&self, mesh: &CutCellMesh) -> f64 {
        (0..mesh.num_cells())
            .flat_map(|c| mesh.volume_quadrature(c, 2))
            .map(|(p, _)| {
                let b = self.eval(p);
                (b[0] * b[0] + b[1] * b[1]).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Central-difference divergence with spacing `d`.
pub fn divergence_fd(v: &Velocity, p: Point, d: f64) -> f64 {
    let bx = (v.eval([p[0] + d, p[1]])[0] - v.eval([p[0] - d, p[1]])[0]) / (2.0 * d);
    let by = (v.eval([p[0], p[1] + d])[1] - v.eval([p[0], p[1] - d])[1]) / (2.0 * d);
    bx + by
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceRole {
    Inflow,
    Outflow,
}

/// Per cell, its faces and whether each is inflow or outflow for that cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceClassification {
    roles: Vec<Vec<(usize, FaceRole)>>,
}

impl FaceClassification {
    pub fn faces(&self, cell: usize) -> &[(usize, FaceRole)] {
        &self.roles[cell]
    }

    pub fn inflow(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.roles[cell]
            .iter()
            .filter(|(_, r)| *r == FaceRole::Inflow)
            .map(|&(f, _)| f)
    }

    pub fn outflow(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.roles[cell]
            .iter()
            .filter(|(_, r)| *r == FaceRole::Outflow)
            .map(|&(f, _)| f)
    }
}

/// Number of Gauss points used on faces.
pub const FACE_POINTS: usize = 3;

/// Label faces by the sign of `beta . n` at the face quadrature points.
/// Faces with vanishing normal velocity count as outflow.
pub fn classify_faces(mesh: &CutCellMesh, beta: &Velocity) -> Result<FaceClassification> {
    let tol = 1e-12;
    let mut roles = Vec::with_capacity(mesh.num_cells());
    for c in 0..mesh.num_cells() {
        let mut list = Vec::new();
        for &f in &mesh.cell(c).faces {
            let face = mesh.face(f);
            let n = face.normal_from(c);
            let mut any_neg = false;
            let mut any_pos = false;
            for (p, _) in face.quadrature(FACE_POINTS) {
                let b = beta.eval(p);
                let norm = (b[0] * b[0] + b[1] * b[1]).sqrt().max(f64::MIN_POSITIVE);
                let bn = (b[0] * n[0] + b[1] * n[1]) / norm;
                any_neg |= bn < -tol;
                any_pos |= bn > tol;
            }
            let role = match (any_neg, any_pos) {
                (true, true) => return Err(Error::MixedFaceSign { cell: c, face: f }),
                (true, false) => FaceRole::Inflow,
                _ => FaceRole::Outflow,
            };
            list.push((f, role));
        }
        roles.push(list);
    }
    Ok(FaceClassification { roles })
}

/// Capacity of a cell and the resulting penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    pub alpha: f64,
    pub eta: f64,
}

/// `int_{dE} (beta . n)^-` over all faces of `cell`.
pub fn inflow_flux(mesh: &CutCellMesh, cell: usize, beta: &Velocity) -> f64 {
    mesh.cell(cell)
        .faces
        .iter()
        .map(|&f| {
            let face = mesh.face(f);
            let n = face.normal_from(cell);
            face.quadrature(FACE_POINTS)
                .into_iter()
                .map(|(p, w)| {
                    let b = beta.eval(p);
                    w * (-(b[0] * n[0] + b[1] * n[1])).max(0.0)
                })
                .sum::<f64>()
        })
        .sum()
}

/// `alpha = min(omega |E| / (dt int (beta.n)^-), 1)` and
/// `eta = 1 - alpha` evaluated with `omega = 1/2`.
pub fn capacity_2d(
    mesh: &CutCellMesh,
    cell: usize,
    beta: &Velocity,
    dt: f64,
    omega: f64,
) -> Result<Capacity> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let inflow = inflow_flux(mesh, cell, beta);
    let vol = mesh.cell(cell).volume;
    let cap = |om: f64| {
        if inflow > 0.0 {
            (om * vol / (dt * inflow)).min(1.0)
        } else {
            1.0
        }
    };
    Ok(Capacity {
        alpha: cap(omega),
        eta: 1.0 - cap(0.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh1d::build_mp_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn ramp_meshes_tile_the_domain(n in 10usize..40, gamma in 5.0f64..45.0) {
                let mesh = build_ramp_mesh(n, gamma).unwrap();
                let expected = 1.0 - Ramp::new(gamma).area_below();
                prop_assert!((mesh.total_volume() - expected).abs() < 1e-12);
                for c in 0..mesh.num_cells() {
                    // Closed cell: the length-weighted outward normals cancel.
                    let mut s = [0.0, 0.0];
                    for &f in &mesh.cell(c).faces {
                        let face = mesh.face(f);
                        let nrm = face.normal_from(c);
                        prop_assert!((nrm[0].hypot(nrm[1]) - 1.0).abs() < 1e-12);
                        s[0] += face.length * nrm[0];
                        s[1] += face.length * nrm[1];
                    }
                    prop_assert!(s[0].hypot(s[1]) < 1e-12 * mesh.h());
                }
            }
        }
    }

    fn integrate(v: &[Point], degree: usize, f: impl Fn(Point) -> f64) -> f64 {
        polygon_quadrature(v, degree)
            .unwrap()
            .into_iter()
            .map(|(p, w)| w * f(p))
            .sum()
    }

    #[test]
    fn polygon_quadrature_exactness() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!((integrate(&square, 2, |_| 1.0) - 1.0).abs() < 1e-15);
        assert!((integrate(&square, 2, |p| p[0] * p[1]) - 0.25).abs() < 1e-15);
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!((integrate(&tri, 2, |p| p[0] * p[0]) - 1.0 / 12.0).abs() < 1e-15);
        // x^a y^b over the reference triangle is a! b! / (a + b + 2)!.
        let fact = |k: u32| (1..=k).product::<u32>() as f64;
        for deg in [2usize, 4, 6] {
            for a in 0..=deg as u32 {
                for b in 0..=(deg as u32 - a) {
                    let exact = fact(a) * fact(b) / fact(a + b + 2);
                    let got = integrate(&tri, deg, |p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    assert!((got - exact).abs() < 1e-15, "deg {deg} x^{a} y^{b}");
                }
            }
        }
        let bad = [[0.0, 0.0], [1.0, 0.0], [0.2, 0.2], [0.0, 1.0]];
        assert!(polygon_quadrature(&bad, 2).is_err());
    }

    #[test]
    fn ramp_mesh_volume_and_closure() {
        for gamma in [5.0, 15.0, 30.0, 45.0] {
            for n in [10, 30, 47] {
                let mesh = build_ramp_mesh(n, gamma).unwrap();
                let expect = 1.0 - Ramp::new(gamma).area_below();
                assert!((mesh.total_volume() - expect).abs() < 1e-12, "{gamma} {n}");
                for (c, cell) in mesh.cells().iter().enumerate() {
                    let mut s = [0.0, 0.0];
                    for &f in &cell.faces {
                        let face = mesh.face(f);
                        let nn = face.normal_from(c);
                        assert!((nn[0].hypot(nn[1]) - 1.0).abs() < 1e-14);
                        s[0] += face.length * nn[0];
                        s[1] += face.length * nn[1];
                    }
                    assert!(s[0].abs() < 1e-13 && s[1].abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn interior_faces_are_shared_and_boundary_tags_make_sense() {
        let mesh = build_ramp_mesh(30, 30.0).unwrap();
        let ramp = Ramp::new(30.0);
        let mut count = vec![0; mesh.num_cells()];
        for f in mesh.faces() {
            count[f.left] += 1;
            if let Some(r) = f.right {
                count[r] += 1;
                assert_ne!(r, f.left);
                assert!(f.boundary.is_none());
            }
            if f.boundary == Some(BoundaryTag::Cut) {
                assert!(ramp.level(f.a).abs() < 1e-14 && ramp.level(f.b).abs() < 1e-14);
            }
            // The normal points away from the left centroid.
            let c = mesh.cell(f.left).centroid;
            let m = f.midpoint();
            assert!((m[0] - c[0]) * f.normal[0] + (m[1] - c[1]) * f.normal[1] > 0.0);
        }
        for (c, cell) in mesh.cells().iter().enumerate() {
            assert_eq!(count[c], cell.faces.len());
        }
    }

    #[test]
    fn line_outside_square_gives_cartesian_grid() {
        let ramp = Ramp {
            gamma: 30f64.to_radians(),
            x0: 1.5,
        };
        let mesh = build_clipped_mesh(12, &ramp).unwrap();
        assert_eq!(mesh.num_cells(), 144);
        for cell in mesh.cells() {
            let (i, j) = cell.background;
            let x = |k: usize| k as f64 / 12.0;
            assert_eq!(
                cell.vertices,
                vec![[x(i), x(j)], [x(i + 1), x(j)], [x(i + 1), x(j + 1)], [x(i), x(j + 1)]]
            );
            assert!((cell.volume_fraction - 1.0).abs() < 1e-14);
        }
        assert!(mesh.faces().iter().all(|f| f.boundary != Some(BoundaryTag::Cut)));
    }

    #[test]
    fn stabilized_cells_and_hypotenuse_bound() {
        let mesh = build_ramp_mesh(30, 30.0).unwrap();
        let set = stabilized_set(&mesh, 0.1).unwrap();
        assert!(!set.is_empty());
        for &c in &set {
            assert!(mesh.cell(c).faces.iter().any(|&f| mesh.face(f).boundary == Some(BoundaryTag::Cut)));
        }
        assert!(stabilized_set(&mesh, 1e-300).unwrap().is_empty());
        let min_fraction = (5..=45)
            .step_by(5)
            .flat_map(|g| [20, 40, 80, 160].map(|n| (g, n)))
            .map(|(g, n)| {
                build_ramp_mesh(n, g as f64)
                    .unwrap()
                    .cells()
                    .iter()
                    .map(|c| c.volume_fraction)
                    .fold(1.0, f64::min)
            })
            .fold(1.0, f64::min);
        assert!(min_fraction < 1e-5, "{min_fraction}");
        // Non-stabilized triangles have a long cut face.
        for gamma in [15.0, 30.0, 45.0] {
            for n in [20, 40, 80] {
                let mesh = build_ramp_mesh(n, gamma).unwrap();
                let h = mesh.h();
                for cell in mesh.cells() {
                    if cell.vertices.len() == 3 && cell.volume_fraction >= 0.1 {
                        let hyp = cell
                            .faces
                            .iter()
                            .map(|&f| mesh.face(f))
                            .filter(|f| f.boundary == Some(BoundaryTag::Cut))
                            .map(|f| f.length)
                            .fold(0.0, f64::max);
                        assert!(hyp >= 0.4f64.sqrt() * h * (1.0 - 1e-12), "{gamma} {n}: {}", hyp / h);
                    }
                }
            }
        }
    }

    #[test]
    fn adjacent_stabilized_cells_rejected() {
        let m1 = build_mp_mesh(10, 0.3, 4).unwrap();
        let mesh = strip_mesh(&m1, m1.h()).unwrap();
        assert!(matches!(check_not_adjacent(&mesh, &[3, 4]), Err(Error::AdjacentStabilized(3, 4))));
        assert!(check_not_adjacent(&mesh, &[3, 5]).is_ok());
    }

    #[test]
    fn strip_mesh_follows_1d_cells() {
        let m1 = build_mp_mesh(8, 0.01, 4).unwrap();
        let mesh = strip_mesh(&m1, m1.h()).unwrap();
        assert_eq!(mesh.num_cells(), m1.num_cells());
        for j in 0..m1.num_cells() {
            assert!((mesh.cell(j).volume_fraction - m1.width(j) / m1.h()).abs() < 1e-14);
        }
        let interior = mesh.faces().iter().filter(|f| f.right.is_some()).count();
        assert_eq!(interior, m1.num_cells() - 1);
    }

    #[test]
    fn velocity_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for gamma in [15.0, 30.0, 45.0] {
            let ramp = Ramp::new(gamma);
            let vc = Velocity::ramp_constant(gamma);
            let vv = Velocity::ramp_varying(gamma);
            for _ in 0..100 {
                let p = [rng.gen::<f64>(), rng.gen::<f64>()];
                assert!(divergence_fd(&vv, p, 1e-6).abs() <= 1e-6);
                assert!(divergence_fd(&vc, p, 1e-6).abs() <= 1e-6);
                let b = vc.eval(p);
                assert!((b[0].hypot(b[1]) - 2.0).abs() < 1e-14);
                // Speed along the ramp direction is 1 - y_hat / 2.
                let bv = vv.eval(p);
                let yh = ramp.to_hat(p)[1];
                assert!((bv[0].hypot(bv[1]) - (1.0 - 0.5 * yh).abs()).abs() < 1e-14);
            }
            // Parallel to the ramp: zero normal velocity on the cut faces.
            let mesh = build_ramp_mesh(20, gamma).unwrap();
            for f in mesh.faces().iter().filter(|f| f.boundary == Some(BoundaryTag::Cut)) {
                for (p, _) in f.quadrature(FACE_POINTS) {
                    let b = vv.eval(p);
                    let bn = b[0] * f.normal[0] + b[1] * f.normal[1];
                    assert!(bn.abs() < 1e-14, "{bn:e} len {:e}", f.length);
                }
            }
        }
        let mesh = build_ramp_mesh(20, 30.0).unwrap();
        assert!((Velocity::ramp_constant(30.0).max_norm(&mesh) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn classification_of_cartesian_and_ramp_cells() {
        let gamma = 30.0;
        let mesh = build_ramp_mesh(30, gamma).unwrap();
        let beta = Velocity::ramp_constant(gamma);
        let cls = classify_faces(&mesh, &beta).unwrap();
        for c in 0..mesh.num_cells() {
            let cell = mesh.cell(c);
            for &(f, role) in cls.faces(c) {
                let face = mesh.face(f);
                let n = face.normal_from(c);
                if cell.vertices.len() == 4 && face.boundary != Some(BoundaryTag::Cut) {
                    // Left and bottom faces are inflow.
                    let expect = if n[0] < -0.5 || n[1] < -0.5 {
                        FaceRole::Inflow
                    } else {
                        FaceRole::Outflow
                    };
                    assert_eq!(role, expect);
                }
                if face.boundary == Some(BoundaryTag::Cut) {
                    assert_eq!(role, FaceRole::Outflow);
                }
            }
        }
        // Small triangles: the vertical face is the single inflow face.
        for c in stabilized_set(&mesh, 0.1).unwrap() {
            let inflow: Vec<_> = cls.inflow(c).collect();
            assert_eq!(inflow.len(), 1);
            assert!(mesh.face(inflow[0]).normal_from(c)[0] < -0.999);
        }
        // Rotational field across a face is rejected.
        let swirl = Velocity::Constant { b: [0.0, 0.0] };
        assert!(classify_faces(&mesh, &swirl).is_ok());
    }

    #[test]
    fn capacity_matches_hand_integrals() {
        // Right triangle legs (a, a) in the corner of a cell: inflow through
        // the vertical leg only for beta = (2, 0).
        let a = 0.01;
        let poly = PolygonInput {
            background: (0, 0),
            vertices: vec![[0.0, 0.0], [a, 0.0], [0.0, a]],
            edges: vec![EdgeKind::Grid, EdgeKind::Cut, EdgeKind::Grid],
        };
        let mesh = CutCellMesh::from_polygons(0.1, vec![poly], [[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let beta = Velocity::Constant { b: [2.0, 1.0] };
        let dt = 0.01;
        // Inflow: left leg 2a, bottom leg 1a.
        let inflow = 3.0 * a;
        assert!((inflow_flux(&mesh, 0, &beta) - inflow).abs() < 1e-16);
        let cap = capacity_2d(&mesh, 0, &beta, dt, 1.0).unwrap();
        let vol = 0.5 * a * a;
        assert!((cap.alpha - vol / (dt * inflow)).abs() < 1e-14);
        assert!((cap.eta - (1.0 - 0.5 * vol / (dt * inflow))).abs() < 1e-14);
        let big = capacity_2d(&mesh, 0, &beta, 1e-9, 0.5).unwrap();
        assert_eq!((big.alpha, big.eta), (1.0, 0.0));
    }

    #[test]
    fn capacity_reduces_to_1d_formula() {
        let (alpha, lambda) = (0.01, 0.3);
        let m1 = build_mp_mesh(10, alpha, 5).unwrap();
        let mesh = strip_mesh(&m1, m1.h()).unwrap();
        let beta = Velocity::Constant { b: [1.0, 0.0] };
        let dt = lambda * m1.h();
        let s = m1.cut_pairs()[0].left;
        let cap = capacity_2d(&mesh, s, &beta, dt, 0.5).unwrap();
        assert!((cap.alpha - (0.5 * alpha / lambda).min(1.0)).abs() < 1e-14);
    }
}
