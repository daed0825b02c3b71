//! Structured triangulations of rectangles, edge classification and
//! quadrature rules.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::Vector2;
use thiserror::Error;

pub type Point2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateBounds { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("need at least one subdivision per direction, got {nx} x {ny}")]
    EmptyGrid { nx: usize, ny: usize },
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// How each grid rectangle is cut into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    /// Two triangles along the lower-left to upper-right diagonal.
    TwoTriangle,
    /// Four triangles sharing the rectangle's center.
    #[default]
    Crisscross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Dirichlet,
    /// Boundary edge outside the Dirichlet part; not in the skeleton.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub kind: EdgeKind,
    /// Unit normal pointing out of `cells[0]` (outward on the boundary).
    pub normal: Point2,
    pub length: f64,
    /// `cells[0]` is the minus side; `cells[1]` is set for interior edges.
    pub cells: [usize; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.kind != EdgeKind::Interior
    }

    /// Interior and Dirichlet edges form the skeleton carrying jump terms.
    pub fn in_skeleton(&self) -> bool {
        self.kind != EdgeKind::Free
    }

    pub fn plus_cell(&self) -> Option<usize> {
        (self.kind == EdgeKind::Interior).then_some(self.cells[1])
    }
}

/// Per-cell affine geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub area: f64,
    pub barycenter: Point2,
    /// Gradients of the three barycentric coordinates.
    pub grad_lambda: [Point2; 3],
    pub diameter: f64,
}

impl CellGeometry {
    fn new(p: [Point2; 3]) -> Self {
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let det = e1.x * e2.y - e1.y * e2.x;
        let area = 0.5 * det;
        // ∇λ_i is the inward edge normal of the opposite side scaled by 1/(2|T|).
        let perp = |v: Point2| Point2::new(-v.y, v.x);
        let grad_lambda = [
            perp(p[2] - p[1]) / det,
            perp(p[0] - p[2]) / det,
            perp(p[1] - p[0]) / det,
        ];
        let diameter = (p[1] - p[0])
            .norm()
            .max((p[2] - p[1]).norm())
            .max((p[0] - p[2]).norm());
        Self {
            area,
            barycenter: (p[0] + p[1] + p[2]) / 3.0,
            grad_lambda,
            diameter,
        }
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, x: &Point2) -> [f64; 3] {
        let d = x - self.barycenter;
        let third = 1.0 / 3.0;
        [
            third + self.grad_lambda[0].dot(&d),
            third + self.grad_lambda[1].dot(&d),
            third + self.grad_lambda[2].dot(&d),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Point2>,
    pub cells: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge index of the side opposite each local vertex.
    pub cell_edges: Vec<[usize; 3]>,
    pub geometry: Vec<CellGeometry>,
    pub bounds: Rect,
    pub h_max: f64,
    pub h_min: f64,
}

impl TriMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn barycenter(&self, cell: usize) -> Point2 {
        self.geometry[cell].barycenter
    }

    pub fn area(&self, cell: usize) -> f64 {
        self.geometry[cell].area
    }

    pub fn cell_points(&self, cell: usize) -> [Point2; 3] {
        let c = self.cells[cell];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn edge_points(&self, edge: usize) -> [Point2; 2] {
        let e = &self.edges[edge];
        [self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]]
    }

    /// Length scale of the penalty terms on an edge: the mean diameter of
    /// the adjacent cells (the single cell's diameter on the boundary).
    pub fn penalty_length(&self, edge: usize) -> f64 {
        let e = &self.edges[edge];
        match e.plus_cell() {
            Some(p) => 0.5 * (self.geometry[e.cells[0]].diameter + self.geometry[p].diameter),
            None => self.geometry[e.cells[0]].diameter,
        }
    }

    pub fn skeleton(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.in_skeleton())
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Largest circumradius/inradius ratio over all cells (2 for an
    /// equilateral triangle).
    pub fn shape_ratio(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| {
                let [a, b, d] = self.cell_points(c);
                let (la, lb, lc) = ((b - d).norm(), (d - a).norm(), (a - b).norm());
                let area = self.area(c);
                let circum = la * lb * lc / (4.0 * area);
                let inr = 2.0 * area / (la + lb + lc);
                circum / inr
            })
            .fold(0.0, f64::max)
    }

    /// Marks every boundary edge whose midpoint satisfies `is_dirichlet` as
    /// Dirichlet and all other boundary edges as free.
    pub fn classify_edges(mut self, is_dirichlet: impl Fn(&Point2) -> bool) -> Self {
        for i in 0..self.edges.len() {
            if self.edges[i].kind == EdgeKind::Interior {
                continue;
            }
            let [a, b] = self.edge_points(i);
            let mid = (a + b) * 0.5;
            self.edges[i].kind = if is_dirichlet(&mid) {
                EdgeKind::Dirichlet
            } else {
                EdgeKind::Free
            };
        }
        if self.count_edges(EdgeKind::Dirichlet) == 0 {
            log::warn!("no Dirichlet edges selected; the boundary is entirely free");
        }
        self
    }

    /// Plain-text dump: a vertex block then a cell block.
    pub fn write_listing<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v.x, v.y)?;
        }
        writeln!(out, "cells {}", self.cells.len())?;
        for c in &self.cells {
            writeln!(out, "{} {} {}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

/// Structured mesh of `bounds` with `nx × ny` rectangles. All boundary edges
/// start out free; see [`TriMesh::classify_edges`].
pub fn build_structured(nx: usize, ny: usize, bounds: Rect, split: Split) -> Result<TriMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    let finite = [bounds.x0, bounds.x1, bounds.y0, bounds.y1]
        .iter()
        .all(|v| v.is_finite());
    if !finite || bounds.x1 <= bounds.x0 || bounds.y1 <= bounds.y0 {
        return Err(MeshError::DegenerateBounds {
            x0: bounds.x0,
            x1: bounds.x1,
            y0: bounds.y0,
            y1: bounds.y1,
        });
    }
    let dx = (bounds.x1 - bounds.x0) / nx as f64;
    let dy = (bounds.y1 - bounds.y0) / ny as f64;
    let grid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            // Pin the last row/column to the exact bound.
            let x = if i == nx { bounds.x1 } else { bounds.x0 + i as f64 * dx };
            let y = if j == ny { bounds.y1 } else { bounds.y0 + j as f64 * dy };
            vertices.push(Point2::new(x, y));
        }
    }

    let per_quad = match split {
        Split::TwoTriangle => 2,
        Split::Crisscross => 4,
    };
    let mut cells = Vec::with_capacity(per_quad * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            match split {
                Split::TwoTriangle => {
                    cells.push([v00, v10, v11]);
                    cells.push([v00, v11, v01]);
                }
                Split::Crisscross => {
                    let c = vertices.len();
                    vertices.push((vertices[v00] + vertices[v11]) * 0.5);
                    cells.push([v00, v10, c]);
                    cells.push([v10, v11, c]);
                    cells.push([v11, v01, c]);
                    cells.push([v01, v00, c]);
                }
            }
        }
    }
    Ok(from_cells(vertices, cells, bounds))
}

fn from_cells(vertices: Vec<Point2>, cells: Vec<[usize; 3]>, bounds: Rect) -> TriMesh {
    let geometry: Vec<CellGeometry> = cells
        .iter()
        .map(|c| CellGeometry::new([vertices[c[0]], vertices[c[1]], vertices[c[2]]]))
        .collect();

    let mut edges: Vec<Edge> = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let mut cell_edges = vec![[0usize; 3]; cells.len()];
    for (ci, c) in cells.iter().enumerate() {
        for local in 0..3 {
            let a = c[(local + 1) % 3];
            let b = c[(local + 2) % 3];
            let key = (a.min(b), a.max(b));
            let idx = match lookup.get(&key) {
                Some(&idx) => {
                    let e: &mut Edge = &mut edges[idx];
                    e.cells[1] = ci;
                    e.kind = EdgeKind::Interior;
                    idx
                }
                None => {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    let t = pb - pa;
                    let length = t.norm();
                    let mut normal = Point2::new(t.y, -t.x) / length;
                    let mid = (pa + pb) * 0.5;
                    if normal.dot(&(mid - geometry[ci].barycenter)) < 0.0 {
                        normal = -normal;
                    }
                    edges.push(Edge {
                        vertices: [a, b],
                        kind: EdgeKind::Free,
                        normal,
                        length,
                        cells: [ci, ci],
                    });
                    lookup.insert(key, edges.len() - 1);
                    edges.len() - 1
                }
            };
            cell_edges[ci][local] = idx;
        }
    }

    let h_max = geometry.iter().map(|g| g.diameter).fold(0.0, f64::max);
    let h_min = geometry.iter().map(|g| g.diameter).fold(f64::INFINITY, f64::min);
    TriMesh {
        vertices,
        cells,
        edges,
        cell_edges,
        geometry,
        bounds,
        h_max,
        h_min,
    }
}

/// Quadrature on the reference triangle `{ξ, η ≥ 0, ξ + η ≤ 1}` (weights sum
/// to 1/2) or on the segment `[0, 1]` (weights sum to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Six-point symmetric rule, exact for degree 4.
    pub fn triangle_degree4() -> Self {
        const A1: f64 = 0.445_948_490_915_964_886_32;
        const B1: f64 = 0.108_103_018_168_070_227_36;
        const W1: f64 = 0.223_381_589_678_011_465_70;
        const A2: f64 = 0.091_576_213_509_770_743_46;
        const B2: f64 = 0.816_847_572_980_458_513_08;
        const W2: f64 = 0.109_951_743_655_321_867_64;
        let points = vec![
            [A1, A1],
            [B1, A1],
            [A1, B1],
            [A2, A2],
            [B2, A2],
            [A2, B2],
        ];
        let weights = [W1, W1, W1, W2, W2, W2].iter().map(|w| 0.5 * w).collect();
        Self {
            points,
            weights,
            degree: 4,
        }
    }

    /// Three-point Gauss–Legendre on `[0, 1]`, exact for degree 5; only the
    /// first coordinate of each point is used.
    pub fn segment_degree5() -> Self {
        let r = (0.6f64).sqrt() * 0.5;
        Self {
            points: vec![[0.5 - r, 0.0], [0.5, 0.0], [0.5 + r, 0.0]],
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            degree: 5,
        }
    }

    /// Physical points and weights on a cell.
    pub fn on_cell(&self, p: &[Point2; 3], area: f64) -> Vec<(Point2, f64)> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(q, w)| {
                let x = p[0] + (p[1] - p[0]) * q[0] + (p[2] - p[0]) * q[1];
                (x, 2.0 * area * w)
            })
            .collect()
    }

    /// Physical points and weights on a segment.
    pub fn on_segment(&self, a: &Point2, b: &Point2) -> Vec<(Point2, f64)> {
        let len = (b - a).norm();
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(q, w)| (a + (b - a) * q[0], len * w))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square4() -> Rect {
        Rect::new(0.0, 4.0, 0.0, 4.0)
    }

    #[test]
    fn cell_counts() {
        for (n, cells) in [(10, 400), (20, 1600), (40, 6400), (60, 14400)] {
            let m = build_structured(n, n, square4(), Split::Crisscross).unwrap();
            assert_eq!(m.n_cells(), cells);
        }
        let m = build_structured(1, 1, Rect::new(0.0, 1.0, 0.0, 1.0), Split::TwoTriangle).unwrap();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.count_edges(EdgeKind::Interior), 1);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            build_structured(2, 2, Rect::new(0.0, 0.0, 0.0, 1.0), Split::Crisscross),
            Err(MeshError::DegenerateBounds { .. })
        ));
        assert!(matches!(
            build_structured(0, 2, square4(), Split::Crisscross),
            Err(MeshError::EmptyGrid { .. })
        ));
    }

    #[test]
    fn square_benchmark_dirichlet_edges() {
        let m = build_structured(10, 10, square4(), Split::Crisscross)
            .unwrap()
            .classify_edges(|x| x.x.abs() < 1e-12 || x.y.abs() < 1e-12);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 20);
        assert_eq!(m.count_edges(EdgeKind::Free), 20);
    }

    #[test]
    fn strip_dirichlet_on_short_sides_only() {
        let m = build_structured(16, 4, Rect::new(-2.0, 2.0, 0.0, 1.0), Split::Crisscross)
            .unwrap()
            .classify_edges(|x| (x.x.abs() - 2.0).abs() < 1e-12);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 8);
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::Dirichlet) {
            assert!((e.normal.x.abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_predicate_leaves_boundary_free() {
        let m = build_structured(3, 3, square4(), Split::Crisscross)
            .unwrap()
            .classify_edges(|_| false);
        assert_eq!(m.count_edges(EdgeKind::Dirichlet), 0);
        assert_eq!(m.skeleton().count(), m.count_edges(EdgeKind::Interior));
    }

    #[test]
    fn areas_sum_to_domain_and_cells_are_positive() {
        for split in [Split::TwoTriangle, Split::Crisscross] {
            let m = build_structured(7, 5, Rect::new(-2.0, 2.0, 0.0, 1.0), split).unwrap();
            let total: f64 = m.geometry.iter().map(|g| g.area).sum();
            assert!((total - 4.0).abs() < 1e-12 * 4.0);
            assert!(m.geometry.iter().all(|g| g.area > 0.0));
            assert!(m.shape_ratio() >= 2.0 - 1e-12);
        }
        // right isosceles cells: R/r = 1 + √2
        let sq = build_structured(4, 4, square4(), Split::Crisscross).unwrap();
        assert!((sq.shape_ratio() - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn conforming_and_normals_point_minus_to_plus() {
        let m = build_structured(4, 3, square4(), Split::Crisscross).unwrap();
        let mut uses = vec![0; m.edges.len()];
        for ce in &m.cell_edges {
            for &e in ce {
                uses[e] += 1;
            }
        }
        for (e, edge) in m.edges.iter().enumerate() {
            let expected = if edge.kind == EdgeKind::Interior { 2 } else { 1 };
            assert_eq!(uses[e], expected);
            assert!((edge.normal.norm() - 1.0).abs() < 1e-15);
            let [a, b] = m.edge_points(e);
            let mid = (a + b) * 0.5;
            assert!(edge.normal.dot(&(mid - m.barycenter(edge.cells[0]))) > 0.0);
            if let Some(p) = edge.plus_cell() {
                assert!(edge.normal.dot(&(m.barycenter(p) - mid)) > 0.0);
            }
        }
    }

    #[test]
    fn barycenter_of_reference_and_translated_triangle() {
        let g = CellGeometry::new([Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]);
        assert!((g.barycenter - Point2::new(1.0 / 3.0, 1.0 / 3.0)).norm() < 1e-16);
        let s = Point2::new(2.5, -1.0);
        let t = CellGeometry::new([s, Point2::new(1.0, 0.0) + s, Point2::new(0.0, 1.0) + s]);
        assert!((t.barycenter - g.barycenter - s).norm() < 1e-15);
    }

    #[test]
    fn weighted_mean_of_cell_rule_is_barycenter() {
        let p = [Point2::new(0.3, 0.1), Point2::new(2.0, 0.4), Point2::new(0.9, 1.7)];
        let g = CellGeometry::new(p);
        let rule = QuadratureRule::triangle_degree4();
        let pts = rule.on_cell(&p, g.area);
        let mean = pts.iter().fold(Point2::zeros(), |acc, (x, w)| acc + x * *w) / g.area;
        assert!((mean - g.barycenter).norm() < 1e-14);
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn triangle_rule_exact_up_to_degree_4() {
        let rule = QuadratureRule::triangle_degree4();
        assert!((rule.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        assert!(rule.weights.iter().all(|w| *w > 0.0));
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                // ∫ ξ^a η^b over the reference triangle = a! b! / (a + b + 2)!
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                assert!((q - exact).abs() < 1e-13, "xi^{a} eta^{b}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn segment_rule_exact_up_to_degree_5() {
        let rule = QuadratureRule::segment_degree5();
        for k in 0..=5 {
            let q: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| w * p[0].powi(k))
                .sum();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn listing_has_both_blocks() {
        let m = build_structured(1, 1, square4(), Split::TwoTriangle).unwrap();
        let mut buf = Vec::new();
        m.write_listing(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertices 4\n"));
        assert!(text.contains("cells 2\n0 1 3\n"));
    }
}
