//! Discrete spaces and their degrees of freedom.
//!
//! * `V`: discontinuous P2 vector fields ℝ² → ℝ³, 18 dofs per cell
//!   (component-major, six Lagrange nodes per component).
//! * `M`: cellwise constant 3×2 matrices, 6 dofs per cell (row-major).
//! * `Υ`: cellwise constant symmetric 2×2 matrices, 3 dofs per cell stored
//!   as `(γ₁₁, γ₂₂, γ₁₂)`.
//!
//! In the global unknown vector the three spaces are stacked `y | μ | γ`,
//! each block cell-contiguous.

use nalgebra::{Matrix2, Vector3};
use thiserror::Error;

use crate::mesh::{CellGeometry, EdgeKind, Point2, TriMesh};
use crate::stiefel::{flat_index, Mat32};

pub const P2_PER_CELL: usize = 6;
pub const V_PER_CELL: usize = 3 * P2_PER_CELL;
pub const M_PER_CELL: usize = 6;
pub const UPSILON_PER_CELL: usize = 3;
pub const DOFS_PER_CELL: usize = V_PER_CELL + M_PER_CELL + UPSILON_PER_CELL;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgError {
    #[error("edge {0} is a free boundary edge and carries no jump")]
    FreeEdge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    V,
    M,
    Upsilon,
}

impl Space {
    pub fn per_cell(self) -> usize {
        match self {
            Space::V => V_PER_CELL,
            Space::M => M_PER_CELL,
            Space::Upsilon => UPSILON_PER_CELL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub n_cells: usize,
}

impl DofMap {
    pub fn new(mesh: &TriMesh) -> Self {
        Self {
            n_cells: mesh.n_cells(),
        }
    }

    pub fn len(&self, space: Space) -> usize {
        self.n_cells * space.per_cell()
    }

    pub fn total(&self) -> usize {
        self.n_cells * DOFS_PER_CELL
    }

    /// Start of each space's block in the stacked unknown vector.
    pub fn offset(&self, space: Space) -> usize {
        match space {
            Space::V => 0,
            Space::M => self.len(Space::V),
            Space::Upsilon => self.len(Space::V) + self.len(Space::M),
        }
    }

    #[inline]
    pub fn y(&self, cell: usize, component: usize, node: usize) -> usize {
        V_PER_CELL * cell + P2_PER_CELL * component + node
    }

    #[inline]
    pub fn mu(&self, cell: usize, row: usize, col: usize) -> usize {
        M_PER_CELL * cell + flat_index(row, col)
    }

    #[inline]
    pub fn gamma(&self, cell: usize, k: usize) -> usize {
        UPSILON_PER_CELL * cell + k
    }
}

/// Coefficients of a function in one of the three spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FEFunction {
    pub space: Space,
    pub coeffs: Vec<f64>,
}

impl FEFunction {
    pub fn zeros(space: Space, dofs: &DofMap) -> Self {
        Self {
            space,
            coeffs: vec![0.0; dofs.len(space)],
        }
    }

    pub fn from_coeffs(space: Space, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len() % space.per_cell(), 0, "coefficient count does not match space");
        Self { space, coeffs }
    }

    pub fn n_cells(&self) -> usize {
        self.coeffs.len() / self.space.per_cell()
    }

    /// Value of an `M` function on a cell.
    pub fn matrix_at(&self, cell: usize) -> Mat32 {
        debug_assert_eq!(self.space, Space::M);
        let c = &self.coeffs[M_PER_CELL * cell..M_PER_CELL * (cell + 1)];
        Mat32::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }

    /// Value of a `Υ` function on a cell, expanded to the full symmetric
    /// matrix.
    pub fn sym_at(&self, cell: usize) -> Matrix2<f64> {
        debug_assert_eq!(self.space, Space::Upsilon);
        let c = &self.coeffs[UPSILON_PER_CELL * cell..UPSILON_PER_CELL * (cell + 1)];
        Matrix2::new(c[0], c[2], c[2], c[1])
    }

    /// `L²(Ω)` norm of a cellwise constant (`M` or `Υ`) function. The
    /// off-diagonal of `Υ` counts twice.
    pub fn l2_norm_p0(&self, mesh: &TriMesh) -> f64 {
        let sq: f64 = (0..self.n_cells())
            .map(|c| {
                let f = match self.space {
                    Space::M => self.matrix_at(c).norm_squared(),
                    Space::Upsilon => self.sym_at(c).norm_squared(),
                    Space::V => panic!("l2_norm_p0 on a P2 function"),
                };
                mesh.area(c) * f
            })
            .sum();
        sq.sqrt()
    }
}

/// P2 Lagrange basis on one cell evaluated at a point.
///
/// Node order: the three vertices, then the midpoints of sides (0,1), (1,2)
/// and (2,0).
#[derive(Debug, Clone, Copy)]
pub struct P2Eval {
    pub values: [f64; 6],
    pub grads: [Point2; 6],
}

pub fn p2_eval(geom: &CellGeometry, x: &Point2) -> P2Eval {
    let l = geom.barycentric(x);
    let g = &geom.grad_lambda;
    let mut values = [0.0; 6];
    let mut grads = [Point2::zeros(); 6];
    for i in 0..3 {
        values[i] = l[i] * (2.0 * l[i] - 1.0);
        grads[i] = g[i] * (4.0 * l[i] - 1.0);
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        values[3 + k] = 4.0 * l[i] * l[j];
        grads[3 + k] = (g[i] * l[j] + g[j] * l[i]) * 4.0;
    }
    P2Eval { values, grads }
}

/// Constant Hessians of the six P2 basis functions.
pub fn p2_hessians(geom: &CellGeometry) -> [Matrix2<f64>; 6] {
    let g = &geom.grad_lambda;
    let mut h = [Matrix2::zeros(); 6];
    for i in 0..3 {
        h[i] = g[i] * g[i].transpose() * 4.0;
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        h[3 + k] = (g[i] * g[j].transpose() + g[j] * g[i].transpose()) * 4.0;
    }
    h
}

/// Physical positions of the six P2 nodes of a cell.
pub fn p2_nodes(p: &[Point2; 3]) -> [Point2; 6] {
    [
        p[0],
        p[1],
        p[2],
        (p[0] + p[1]) * 0.5,
        (p[1] + p[2]) * 0.5,
        (p[2] + p[0]) * 0.5,
    ]
}

fn cell_coeffs(y: &FEFunction, cell: usize) -> &[f64] {
    debug_assert_eq!(y.space, Space::V);
    &y.coeffs[V_PER_CELL * cell..V_PER_CELL * (cell + 1)]
}

pub fn eval(y: &FEFunction, mesh: &TriMesh, cell: usize, x: &Point2) -> Vector3<f64> {
    let b = p2_eval(&mesh.geometry[cell], x);
    let c = cell_coeffs(y, cell);
    Vector3::from_fn(|comp, _| (0..6).map(|i| c[6 * comp + i] * b.values[i]).sum())
}

pub fn eval_grad(y: &FEFunction, mesh: &TriMesh, cell: usize, x: &Point2) -> Mat32 {
    let b = p2_eval(&mesh.geometry[cell], x);
    let c = cell_coeffs(y, cell);
    let mut g = Mat32::zeros();
    for comp in 0..3 {
        for i in 0..6 {
            g[(comp, 0)] += c[6 * comp + i] * b.grads[i].x;
            g[(comp, 1)] += c[6 * comp + i] * b.grads[i].y;
        }
    }
    g
}

/// Broken gradient at the cell barycenter.
pub fn grad_at_barycenter(y: &FEFunction, mesh: &TriMesh, cell: usize) -> Mat32 {
    eval_grad(y, mesh, cell, &mesh.barycenter(cell))
}

/// Hessian of each component; constant over the cell.
pub fn eval_hessian(y: &FEFunction, mesh: &TriMesh, cell: usize) -> [Matrix2<f64>; 3] {
    let h = p2_hessians(&mesh.geometry[cell]);
    let c = cell_coeffs(y, cell);
    let mut out = [Matrix2::zeros(); 3];
    for (comp, o) in out.iter_mut().enumerate() {
        for i in 0..6 {
            *o += h[i] * c[6 * comp + i];
        }
    }
    out
}

/// One-sided traces at an edge point. `plus` is `None` on boundary edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub minus: (Vector3<f64>, Mat32),
    pub plus: Option<(Vector3<f64>, Mat32)>,
}

fn skeleton_edge(mesh: &TriMesh, edge: usize) -> Result<&crate::mesh::Edge, DgError> {
    let e = &mesh.edges[edge];
    if e.kind == EdgeKind::Free {
        return Err(DgError::FreeEdge(edge));
    }
    Ok(e)
}

pub fn trace(y: &FEFunction, mesh: &TriMesh, edge: usize, x: &Point2) -> TraceSample {
    let e = &mesh.edges[edge];
    let side = |c: usize| (eval(y, mesh, c, x), eval_grad(y, mesh, c, x));
    TraceSample {
        minus: side(e.cells[0]),
        plus: e.plus_cell().map(side),
    }
}

/// `[y] = y⁻ − y⁺`, or `y` on Dirichlet edges.
pub fn jump(y: &FEFunction, mesh: &TriMesh, edge: usize, x: &Point2) -> Result<Vector3<f64>, DgError> {
    skeleton_edge(mesh, edge)?;
    let t = trace(y, mesh, edge, x);
    Ok(match t.plus {
        Some((p, _)) => t.minus.0 - p,
        None => t.minus.0,
    })
}

/// `[∇y] = (∇y⁻ − ∇y⁺) n_e`, or `(∇y) n` on Dirichlet edges.
pub fn jump_grad(y: &FEFunction, mesh: &TriMesh, edge: usize, x: &Point2) -> Result<Vector3<f64>, DgError> {
    let e = skeleton_edge(mesh, edge)?;
    let t = trace(y, mesh, edge, x);
    let g = match t.plus {
        Some((_, gp)) => t.minus.1 - gp,
        None => t.minus.1,
    };
    Ok(g * e.normal)
}

/// `({∇²y} n_e) n_e`: the averaged Hessian contracted twice with the edge
/// normal (single-sided on Dirichlet edges).
pub fn average_hessian_nn(y: &FEFunction, mesh: &TriMesh, edge: usize) -> Result<Vector3<f64>, DgError> {
    let e = skeleton_edge(mesh, edge)?;
    let n = e.normal;
    let nn = |c: usize| {
        let h = eval_hessian(y, mesh, c);
        Vector3::new(n.dot(&(h[0] * n)), n.dot(&(h[1] * n)), n.dot(&(h[2] * n)))
    };
    Ok(match e.plus_cell() {
        Some(p) => (nn(e.cells[0]) + nn(p)) * 0.5,
        None => nn(e.cells[0]),
    })
}

/// Nodal P2 interpolant of a vector field.
pub fn interpolate_v(mesh: &TriMesh, f: impl Fn(&Point2) -> Vector3<f64>) -> FEFunction {
    let dofs = DofMap::new(mesh);
    let mut out = FEFunction::zeros(Space::V, &dofs);
    for cell in 0..mesh.n_cells() {
        for (i, x) in p2_nodes(&mesh.cell_points(cell)).iter().enumerate() {
            let v = f(x);
            for comp in 0..3 {
                out.coeffs[dofs.y(cell, comp, i)] = v[comp];
            }
        }
    }
    out
}

/// Barycentric sampling of a 3×2 matrix field.
pub fn interpolate_m(mesh: &TriMesh, f: impl Fn(&Point2) -> Mat32) -> FEFunction {
    let dofs = DofMap::new(mesh);
    let mut out = FEFunction::zeros(Space::M, &dofs);
    for cell in 0..mesh.n_cells() {
        let m = f(&mesh.barycenter(cell));
        for r in 0..3 {
            for c in 0..2 {
                out.coeffs[dofs.mu(cell, r, c)] = m[(r, c)];
            }
        }
    }
    out
}

/// Barycentric sampling of a symmetric 2×2 field (the lower triangle is
/// ignored).
pub fn interpolate_upsilon(mesh: &TriMesh, f: impl Fn(&Point2) -> Matrix2<f64>) -> FEFunction {
    let dofs = DofMap::new(mesh);
    let mut out = FEFunction::zeros(Space::Upsilon, &dofs);
    for cell in 0..mesh.n_cells() {
        let m = f(&mesh.barycenter(cell));
        out.coeffs[dofs.gamma(cell, 0)] = m[(0, 0)];
        out.coeffs[dofs.gamma(cell, 1)] = m[(1, 1)];
        out.coeffs[dofs.gamma(cell, 2)] = m[(0, 1)];
    }
    out
}
