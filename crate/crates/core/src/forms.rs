//! Discrete forms: the interior penalty bending form `a_h`, the weak
//! Dirichlet functional `F_h`, the volume load, the `(μ, ∇w)` coupling, the
//! barycentric tangency form `l_h`, the exponential block, and the derived
//! energy, norm and defect.
//!
//! All scalar forms act identically on the three components of `y`, so the
//! local matrices are computed once per cell/edge and replicated.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{SMatrix, Vector3};
use rayon::prelude::*;

use crate::dgspace::{
    eval_hessian, grad_at_barycenter, p2_eval, p2_hessians, trace, DofMap, FEFunction, Space,
};
use crate::mesh::{EdgeKind, Point2, QuadratureRule, TriMesh};
use crate::sparse::{SparseMatrix, Triplets};
use crate::stiefel::{exp_map_with_jacobian, flat_index, Mat32, StiefelPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams {
    /// Weight of the value jump, scaled by `h_e⁻³`.
    pub eta0: f64,
    /// Weight of the normal-derivative jump, scaled by `h_e⁻¹`.
    pub eta1: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            eta0: 100.0,
            eta1: 100.0,
        }
    }
}

pub type VectorField = Arc<dyn Fn(&Point2) -> Vector3<f64> + Send + Sync>;
/// Field evaluated at a boundary point together with the outward normal.
pub type NormalField = Arc<dyn Fn(&Point2, &Point2) -> Vector3<f64> + Send + Sync>;

/// Dirichlet data: the boundary position `y_D`, the prescribed normal
/// derivative `G_D`, and the tangential derivative `∂_t y_D` along
/// `t = (−n₂, n₁)`. Together they give the boundary gradient
/// `G_D nᵀ + ∂_t y_D tᵀ` that the gradient terms of the forms act on.
#[derive(Clone)]
pub struct BoundaryData {
    pub y_d: VectorField,
    pub g_d: NormalField,
    pub dt_y_d: NormalField,
}

impl BoundaryData {
    /// The tangential derivative is taken by central differences of `y_D`,
    /// which is exact up to rounding for data of degree ≤ 2.
    pub fn new(
        y_d: impl Fn(&Point2) -> Vector3<f64> + Send + Sync + 'static,
        g_d: impl Fn(&Point2, &Point2) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        let y_d: VectorField = Arc::new(y_d);
        let yc = Arc::clone(&y_d);
        let dt = move |x: &Point2, n: &Point2| {
            let t = Point2::new(-n.y, n.x);
            let d = 1e-3 * (1.0 + x.norm());
            (yc(&(x + t * d)) - yc(&(x - t * d))) / (2.0 * d)
        };
        Self {
            y_d,
            g_d: Arc::new(g_d),
            dt_y_d: Arc::new(dt),
        }
    }

    pub fn with_tangent(
        y_d: impl Fn(&Point2) -> Vector3<f64> + Send + Sync + 'static,
        g_d: impl Fn(&Point2, &Point2) -> Vector3<f64> + Send + Sync + 'static,
        dt_y_d: impl Fn(&Point2, &Point2) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            y_d: Arc::new(y_d),
            g_d: Arc::new(g_d),
            dt_y_d: Arc::new(dt_y_d),
        }
    }

    pub fn zero() -> Self {
        Self::with_tangent(|_| Vector3::zeros(), |_, _| Vector3::zeros(), |_, _| Vector3::zeros())
    }

    /// Clamped flat plate: `y_D = (x₁, x₂, 0)`, `G_D = (n₁, n₂, 0)`.
    pub fn flat() -> Self {
        Self::with_tangent(
            |x| Vector3::new(x.x, x.y, 0.0),
            |_, n| Vector3::new(n.x, n.y, 0.0),
            |_, n| Vector3::new(-n.y, n.x, 0.0),
        )
    }

    /// `G_D nᵀ + ∂_t y_D tᵀ` at a boundary point.
    pub fn gradient(&self, x: &Point2, n: &Point2) -> Mat32 {
        let t = Point2::new(-n.y, n.x);
        (self.g_d)(x, n) * n.transpose() + (self.dt_y_d)(x, n) * t.transpose()
    }
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BoundaryData { .. }")
    }
}

/// Scalar P2 data of one skeleton edge: one or two sides, each with the
/// jump sign, the averaging weight and traces at the edge quadrature points.
struct EdgeBasis {
    h: f64,
    quad: Vec<(Point2, f64)>,
    normal: Point2,
    sides: Vec<EdgeSide>,
}

struct EdgeSide {
    cell: usize,
    sign: f64,
    /// `avg · ∇²φ_i n`, constant along the edge.
    hn: [Point2; 6],
    /// `φ_i` and `∇φ_i` per quadrature point.
    vals: Vec<[f64; 6]>,
    grads: Vec<[Point2; 6]>,
}

impl EdgeBasis {
    fn new(mesh: &TriMesh, edge: usize) -> Self {
        let e = &mesh.edges[edge];
        let [a, b] = mesh.edge_points(edge);
        let quad = QuadratureRule::segment_degree5().on_segment(&a, &b);
        let n = e.normal;
        let (cells, avg): (Vec<(usize, f64)>, f64) = match e.plus_cell() {
            Some(p) => (vec![(e.cells[0], 1.0), (p, -1.0)], 0.5),
            None => (vec![(e.cells[0], 1.0)], 1.0),
        };
        let sides = cells
            .into_iter()
            .map(|(cell, sign)| {
                let geom = &mesh.geometry[cell];
                let hs = p2_hessians(geom);
                let (vals, grads) = quad
                    .iter()
                    .map(|(x, _)| {
                        let p = p2_eval(geom, x);
                        (p.values, p.grads)
                    })
                    .unzip();
                EdgeSide {
                    cell,
                    sign,
                    hn: std::array::from_fn(|i| hs[i] * n * avg),
                    vals,
                    grads,
                }
            })
            .collect();
        Self {
            h: mesh.penalty_length(edge),
            quad,
            normal: n,
            sides,
        }
    }

    fn n_local(&self) -> usize {
        6 * self.sides.len()
    }

    fn cell_of(&self, l: usize) -> (usize, usize) {
        (self.sides[l / 6].cell, l % 6)
    }

    /// Contribution of local function `l` to the value jump.
    fn jump(&self, l: usize, q: usize) -> f64 {
        let s = &self.sides[l / 6];
        s.sign * s.vals[q][l % 6]
    }

    /// Contribution of local function `l` to the gradient jump.
    fn jump_grad(&self, l: usize, q: usize) -> Point2 {
        let s = &self.sides[l / 6];
        s.grads[q][l % 6] * s.sign
    }

    fn avg_hn(&self, l: usize) -> Point2 {
        self.sides[l / 6].hn[l % 6]
    }
}

/// Pushes a scalar local matrix into all three component blocks.
fn push_scalar_block(t: &mut Vec<(usize, usize, f64)>, dofs: &DofMap, idx: &[(usize, usize)], k: &[f64]) {
    let n = idx.len();
    for comp in 0..3 {
        for (a, &(ca, ia)) in idx.iter().enumerate() {
            let row = dofs.y(ca, comp, ia);
            for (b, &(cb, ib)) in idx.iter().enumerate() {
                let v = k[a * n + b];
                if v != 0.0 {
                    t.push((row, dofs.y(cb, comp, ib), v));
                }
            }
        }
    }
}

fn collect(n: usize, parts: Vec<Vec<(usize, usize, f64)>>, nrows: usize) -> SparseMatrix {
    let total = parts.iter().map(Vec::len).sum();
    let mut t = Triplets::with_capacity(nrows, n, total);
    for (r, c, v) in parts.into_iter().flatten() {
        t.push(r, c, v);
    }
    t.into_matrix()
}

/// The symmetric bending matrix on the `y` block.
pub fn assemble_a_h(mesh: &TriMesh, dofs: &DofMap, params: PenaltyParams) -> SparseMatrix {
    let n = dofs.len(Space::V);
    let cells: Vec<_> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let area = mesh.area(c);
            let hs = p2_hessians(&mesh.geometry[c]);
            let mut k = [0.0; 36];
            for i in 0..6 {
                for j in 0..6 {
                    k[6 * i + j] = area * hs[i].dot(&hs[j]);
                }
            }
            let idx: Vec<_> = (0..6).map(|i| (c, i)).collect();
            let mut t = Vec::with_capacity(108);
            push_scalar_block(&mut t, dofs, &idx, &k);
            t
        })
        .collect();
    let edges: Vec<_> = (0..mesh.edges.len())
        .into_par_iter()
        .filter(|&e| mesh.edges[e].in_skeleton())
        .map(|e| {
            let eb = EdgeBasis::new(mesh, e);
            let nl = eb.n_local();
            let p1 = params.eta1 / eb.h;
            let p0 = params.eta0 / eb.h.powi(3);
            let mut k = vec![0.0; nl * nl];
            for (q, (_, w)) in eb.quad.iter().enumerate() {
                for a in 0..nl {
                    let (ga, ja, ma) = (eb.jump_grad(a, q), eb.jump(a, q), eb.avg_hn(a));
                    for b in 0..nl {
                        let (gb, jb, mb) = (eb.jump_grad(b, q), eb.jump(b, q), eb.avg_hn(b));
                        // grouped so that (a, b) and (b, a) round identically
                        k[a * nl + b] += w * (-(ga.dot(&mb) + ma.dot(&gb)) + p1 * ga.dot(&gb) + p0 * (ja * jb));
                    }
                }
            }
            let idx: Vec<_> = (0..nl).map(|l| eb.cell_of(l)).collect();
            let mut t = Vec::with_capacity(3 * nl * nl);
            push_scalar_block(&mut t, dofs, &idx, &k);
            t
        })
        .collect();
    let mut parts = cells;
    parts.extend(edges);
    collect(n, parts, n)
}

/// The weak Dirichlet functional on the `y` block.
pub fn assemble_f_h(mesh: &TriMesh, dofs: &DofMap, params: PenaltyParams, data: &BoundaryData) -> Vec<f64> {
    let mut out = vec![0.0; dofs.len(Space::V)];
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.kind != EdgeKind::Dirichlet {
            continue;
        }
        let eb = EdgeBasis::new(mesh, e);
        let side = &eb.sides[0];
        let p1 = params.eta1 / eb.h;
        let p0 = params.eta0 / eb.h.powi(3);
        for (q, (x, w)) in eb.quad.iter().enumerate() {
            let yd = (data.y_d)(x);
            let gd = data.gradient(x, &eb.normal);
            for comp in 0..3 {
                let row = Point2::new(gd[(comp, 0)], gd[(comp, 1)]);
                for i in 0..6 {
                    let v = -row.dot(&side.hn[i]) + p1 * row.dot(&side.grads[q][i]) + p0 * yd[comp] * side.vals[q][i];
                    out[dofs.y(side.cell, comp, i)] += w * v;
                }
            }
        }
    }
    out
}

/// `(f, w)` for a volume force density.
pub fn assemble_load(mesh: &TriMesh, dofs: &DofMap, f: impl Fn(&Point2) -> Vector3<f64>) -> Vec<f64> {
    let rule = QuadratureRule::triangle_degree4();
    let mut out = vec![0.0; dofs.len(Space::V)];
    for c in 0..mesh.n_cells() {
        let geom = &mesh.geometry[c];
        for (x, w) in rule.on_cell(&mesh.cell_points(c), geom.area) {
            let fx = f(&x);
            let b = p2_eval(geom, &x);
            for comp in 0..3 {
                for i in 0..6 {
                    out[dofs.y(c, comp, i)] += w * fx[comp] * b.values[i];
                }
            }
        }
    }
    out
}

/// `B` with `μᵀ B w = (μ, ∇w)`; rows in the `M` block, columns in `V`.
/// One-point evaluation is exact because `∇w` is affine and `μ` constant.
pub fn assemble_coupling(mesh: &TriMesh, dofs: &DofMap) -> SparseMatrix {
    let mut t = Triplets::with_capacity(dofs.len(Space::M), dofs.len(Space::V), 36 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let geom = &mesh.geometry[c];
        let b = p2_eval(geom, &geom.barycenter);
        for r in 0..3 {
            for i in 0..6 {
                t.push(dofs.mu(c, r, 0), dofs.y(c, r, i), geom.area * b.grads[i].x);
                t.push(dofs.mu(c, r, 1), dofs.y(c, r, i), geom.area * b.grads[i].y);
            }
        }
    }
    t.into_matrix()
}

/// Rows of `X ↦ ζ : (GᵀX + XᵀG)` for the three `ζ` dofs `(ζ₁₁, ζ₂₂, ζ₁₂)`,
/// columns in the row-major flattening of `X`.
pub fn bracket_rows(g: &Mat32) -> SMatrix<f64, 3, 6> {
    let mut s = SMatrix::<f64, 3, 6>::zeros();
    for r in 0..3 {
        s[(0, flat_index(r, 0))] = 2.0 * g[(r, 0)];
        s[(1, flat_index(r, 1))] = 2.0 * g[(r, 1)];
        s[(2, flat_index(r, 0))] = 2.0 * g[(r, 1)];
        s[(2, flat_index(r, 1))] = 2.0 * g[(r, 0)];
    }
    s
}

/// The two blocks of `l_h(G; ·, ·)`: `(L, K)` with `γᵀ L w = l_h(G; ∇w, γ)`
/// and `ζᵀ K μ = l_h(G; μ, ζ)`.
pub fn assemble_l_h_blocks(mesh: &TriMesh, dofs: &DofMap, g: &[StiefelPoint]) -> (SparseMatrix, SparseMatrix) {
    assert_eq!(g.len(), mesh.n_cells());
    let (nv, nm, ng) = (dofs.len(Space::V), dofs.len(Space::M), dofs.len(Space::Upsilon));
    let mut l = Triplets::with_capacity(ng, nv, 54 * mesh.n_cells());
    let mut k = Triplets::with_capacity(ng, nm, 18 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let lc = l_cell_block(mesh, c, g[c].matrix());
        let kc = bracket_rows(g[c].matrix()) * mesh.area(c);
        for row in 0..3 {
            for r in 0..3 {
                for i in 0..6 {
                    l.push(dofs.gamma(c, row), dofs.y(c, r, i), lc[(row, 6 * r + i)]);
                }
                for col in 0..2 {
                    let m = flat_index(r, col);
                    k.push(dofs.gamma(c, row), dofs.mu(c, r, col), kc[(row, m)]);
                }
            }
        }
    }
    (l.into_matrix(), k.into_matrix())
}

/// Cell block of `L`, columns ordered as `6·component + node`.
fn l_cell_block(mesh: &TriMesh, c: usize, g: &Mat32) -> SMatrix<f64, 3, 18> {
    let geom = &mesh.geometry[c];
    let grads = p2_eval(geom, &geom.barycenter).grads;
    let s = bracket_rows(g);
    let mut out = SMatrix::<f64, 3, 18>::zeros();
    for row in 0..3 {
        for r in 0..3 {
            for i in 0..6 {
                out[(row, 6 * r + i)] = geom.area
                    * (s[(row, flat_index(r, 0))] * grads[i].x + s[(row, flat_index(r, 1))] * grads[i].y);
            }
        }
    }
    out
}

/// `|T| (Exp_{G_T}(τ μ_T) − ∇y(x_T))` per cell, in the `M` block layout.
pub fn exp_block_residual(mesh: &TriMesh, g: &[StiefelPoint], mu: &FEFunction, y: &FEFunction, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; mu.coeffs.len()];
    for c in 0..mesh.n_cells() {
        let e = crate::stiefel::exp_map(&g[c], &mu.matrix_at(c), tau);
        let r = (e - grad_at_barycenter(y, mesh, c)) * mesh.area(c);
        for row in 0..3 {
            for col in 0..2 {
                out[6 * c + flat_index(row, col)] = r[(row, col)];
            }
        }
    }
    out
}

/// Derivative of the exponential part of [`exp_block_residual`] with respect
/// to `μ`: block diagonal with one dense 6×6 block per cell.
pub fn exp_block_jacobian(mesh: &TriMesh, g: &[StiefelPoint], mu: &FEFunction, tau: f64) -> SparseMatrix {
    let n = mu.coeffs.len();
    let mut t = Triplets::with_capacity(n, n, 36 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let (_, jac) = exp_map_with_jacobian(&g[c], &mu.matrix_at(c), tau);
        for i in 0..6 {
            for j in 0..6 {
                t.push(6 * c + i, 6 * c + j, mesh.area(c) * jac[(i, j)]);
            }
        }
    }
    t.into_matrix()
}

/// `½ yᵀ A y − ℓᵀ y` for an assembled bending matrix and linear functional.
pub fn quadratic_energy(a: &SparseMatrix, linear: &[f64], y: &[f64]) -> f64 {
    0.5 * a.bilinear(y, y) - linear.iter().zip(y).map(|(l, v)| l * v).sum::<f64>()
}

/// `E_h(y) = ½ a_h(y, y) − (f, y) − F_h(y)`, assembled from scratch.
pub fn energy(
    mesh: &TriMesh,
    y: &FEFunction,
    f: impl Fn(&Point2) -> Vector3<f64>,
    params: PenaltyParams,
    data: &BoundaryData,
) -> f64 {
    let dofs = DofMap::new(mesh);
    let a = assemble_a_h(mesh, &dofs, params);
    let mut linear = assemble_load(mesh, &dofs, f);
    for (l, v) in linear.iter_mut().zip(assemble_f_h(mesh, &dofs, params, data)) {
        *l += v;
    }
    quadratic_energy(&a, &linear, &y.coeffs)
}

/// `½ Σ_{e ⊂ Γ_D} ∫_e η₀ h_e⁻³ |y_D|² + η₁ h_e⁻¹ |∇y_D|²` with the boundary
/// gradient of [`BoundaryData::gradient`].
///
/// Adding this constant to `E_h` completes the boundary penalties to squares
/// of `y − y_D` and `(∇y) n − G_D`, so that a state matching the data with
/// zero Hessian has zero energy. It does not depend on `y`.
pub fn data_offset(mesh: &TriMesh, params: PenaltyParams, data: &BoundaryData) -> f64 {
    let rule = QuadratureRule::segment_degree5();
    let mut s = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.kind != EdgeKind::Dirichlet {
            continue;
        }
        let [a, b] = mesh.edge_points(e);
        for (x, w) in rule.on_segment(&a, &b) {
            let yd = (data.y_d)(&x);
            let gd = data.gradient(&x, &edge.normal);
            let h = mesh.penalty_length(e);
            s += w * (params.eta0 / h.powi(3) * yd.norm_squared() + params.eta1 / h * gd.norm_squared());
        }
    }
    0.5 * s
}

/// `max_T |∇yᵀ∇y − I|(x_T)` in the Frobenius norm.
pub fn isometry_defect(mesh: &TriMesh, y: &FEFunction) -> f64 {
    (0..mesh.n_cells())
        .map(|c| {
            let g = grad_at_barycenter(y, mesh, c);
            (g.transpose() * g - nalgebra::Matrix2::identity()).norm()
        })
        .fold(0.0, f64::max)
}

/// Discrete H² norm: broken Hessian plus scaled gradient and value jumps
/// over the skeleton.
pub fn h2h_norm(mesh: &TriMesh, y: &FEFunction) -> f64 {
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let h = eval_hessian(y, mesh, c);
        s += mesh.area(c) * h.iter().map(|m| m.norm_squared()).sum::<f64>();
    }
    let rule = QuadratureRule::segment_degree5();
    for (e, _) in mesh.skeleton() {
        let [a, b] = mesh.edge_points(e);
        let h = mesh.penalty_length(e);
        for (x, w) in rule.on_segment(&a, &b) {
            let t = trace(y, mesh, e, &x);
            let (jv, jg) = match t.plus {
                Some((v, g)) => (t.minus.0 - v, t.minus.1 - g),
                None => t.minus,
            };
            s += w * (jg.norm_squared() / h + jv.norm_squared() / h.powi(3));
        }
    }
    s.sqrt()
}

/// Newton system `J δ = rhs` over the stacked unknowns `y | μ | γ`, with
/// `rhs` the negated residual.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub dofs: DofMap,
}

impl SparseSystem {
    pub fn block(&self, space: Space) -> Range<usize> {
        let start = self.dofs.offset(space);
        start..start + self.dofs.len(space)
    }
}

/// Residual and Jacobian of one proximal step,
///
/// ```text
///   A y + Bᵀ μ + Lᵀ γ = ℓ
///   |T| Exp_G(τ μ) − B y = 0
///   K μ = 0
/// ```
///
/// The sparsity pattern is built once; moving frames `G` and the
/// exponential blocks only overwrite values, so the symbolic LU can be
/// reused for the whole run.
#[derive(Debug, Clone)]
pub struct StepOperator {
    dofs: DofMap,
    areas: Vec<f64>,
    /// Linear part; the `(μ, μ)` slots hold zeros.
    linear: SparseMatrix,
    /// Per cell: 54 `Lᵀ` slots (row-major over the 3×18 block), then 18 `K`
    /// slots (row-major over 3×6).
    frame_slots: Vec<usize>,
    /// Per cell: 36 exponential-block slots, row-major.
    exp_slots: Vec<usize>,
    frame: Vec<StiefelPoint>,
    rhs_y: Vec<f64>,
    tau: f64,
    grads: Vec<[Point2; 6]>,
}

impl StepOperator {
    /// `a` is the bending matrix and `coupling` the `(μ, ∇w)` block. The
    /// frame starts at the canonical point and the right-hand side at zero.
    pub fn new(mesh: &TriMesh, a: &SparseMatrix, coupling: &SparseMatrix, tau: f64) -> Self {
        let dofs = DofMap::new(mesh);
        let n = dofs.total();
        let (om, og) = (dofs.offset(Space::M), dofs.offset(Space::Upsilon));
        let mut t = Triplets::with_capacity(n, n, a.nnz() + 2 * coupling.nnz() + 144 * mesh.n_cells());
        t.add_block(a, 0, 0, 1.0);
        t.add_block_transposed(coupling, 0, om, 1.0);
        t.add_block(coupling, om, 0, -1.0);
        for c in 0..mesh.n_cells() {
            for row in 0..3 {
                for r in 0..3 {
                    for i in 0..6 {
                        t.push(dofs.y(c, r, i), og + dofs.gamma(c, row), 0.0);
                    }
                    for col in 0..2 {
                        t.push(og + dofs.gamma(c, row), om + dofs.mu(c, r, col), 0.0);
                    }
                }
            }
            for i in 0..6 {
                for j in 0..6 {
                    t.push(om + 6 * c + i, om + 6 * c + j, 0.0);
                }
            }
        }
        let linear = t.into_matrix();
        let mut frame_slots = Vec::with_capacity(72 * mesh.n_cells());
        let mut exp_slots = Vec::with_capacity(36 * mesh.n_cells());
        for c in 0..mesh.n_cells() {
            for row in 0..3 {
                for col in 0..18 {
                    let y = dofs.y(c, col / 6, col % 6);
                    frame_slots.push(linear.position(y, og + dofs.gamma(c, row)).unwrap());
                }
            }
            for row in 0..3 {
                for m in 0..6 {
                    frame_slots.push(linear.position(og + dofs.gamma(c, row), om + 6 * c + m).unwrap());
                }
            }
            for i in 0..6 {
                for j in 0..6 {
                    exp_slots.push(linear.position(om + 6 * c + i, om + 6 * c + j).unwrap());
                }
            }
        }
        let grads = (0..mesh.n_cells())
            .map(|c| {
                let geom = &mesh.geometry[c];
                p2_eval(geom, &geom.barycenter).grads
            })
            .collect();
        let mut op = Self {
            dofs,
            areas: mesh.geometry.iter().map(|g| g.area).collect(),
            linear,
            frame_slots,
            exp_slots,
            frame: vec![StiefelPoint::canonical(); mesh.n_cells()],
            rhs_y: vec![0.0; dofs.len(Space::V)],
            tau,
            grads,
        };
        op.write_frame();
        op
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    /// The linear part of the Jacobian (zeros in the exponential slots).
    pub fn linear(&self) -> &SparseMatrix {
        &self.linear
    }

    pub fn frame(&self) -> &[StiefelPoint] {
        &self.frame
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
    }

    /// Right-hand side `ℓ = (f, ·) + F_h` of the first equation.
    pub fn set_rhs(&mut self, rhs_y: Vec<f64>) {
        assert_eq!(rhs_y.len(), self.dofs.len(Space::V));
        self.rhs_y = rhs_y;
    }

    pub fn set_frame(&mut self, frame: Vec<StiefelPoint>) {
        assert_eq!(frame.len(), self.dofs.n_cells);
        self.frame = frame;
        self.write_frame();
    }

    fn write_frame(&mut self) {
        let vals = self.linear.values_mut();
        for (c, g) in self.frame.iter().enumerate() {
            let s = bracket_rows(g.matrix());
            let area = self.areas[c];
            let grads = &self.grads[c];
            let slots = &self.frame_slots[72 * c..72 * (c + 1)];
            for row in 0..3 {
                for r in 0..3 {
                    for i in 0..6 {
                        let v = area * (s[(row, flat_index(r, 0))] * grads[i].x + s[(row, flat_index(r, 1))] * grads[i].y);
                        vals[slots[18 * row + 6 * r + i]] = v;
                    }
                }
                for m in 0..6 {
                    vals[slots[54 + 6 * row + m]] = area * s[(row, m)];
                }
            }
        }
    }

    fn mu_at(&self, x: &[f64], c: usize) -> Mat32 {
        let o = self.dofs.offset(Space::M) + 6 * c;
        Mat32::from_row_slice(&x[o..o + 6])
    }

    /// Full residual at the stacked state `x`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.linear.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs_y) {
            *ri -= bi;
        }
        let om = self.dofs.offset(Space::M);
        for c in 0..self.dofs.n_cells {
            let e = crate::stiefel::exp_map(&self.frame[c], &self.mu_at(x, c), self.tau);
            for row in 0..3 {
                for col in 0..2 {
                    r[om + 6 * c + flat_index(row, col)] += self.areas[c] * e[(row, col)];
                }
            }
        }
        r
    }

    /// Jacobian and negated residual at `x`.
    pub fn system(&self, x: &[f64]) -> SparseSystem {
        let mut matrix = self.linear.clone();
        let mut rhs = self.linear.mul_vec(x);
        for (ri, bi) in rhs.iter_mut().zip(&self.rhs_y) {
            *ri -= bi;
        }
        let om = self.dofs.offset(Space::M);
        let blocks: Vec<_> = (0..self.dofs.n_cells)
            .into_par_iter()
            .map(|c| exp_map_with_jacobian(&self.frame[c], &self.mu_at(x, c), self.tau))
            .collect();
        let vals = matrix.values_mut();
        for (c, (e, jac)) in blocks.iter().enumerate() {
            let area = self.areas[c];
            for i in 0..6 {
                for j in 0..6 {
                    vals[self.exp_slots[36 * c + 6 * i + j]] = area * jac[(i, j)];
                }
                rhs[om + 6 * c + i] += area * e[(i / 2, i % 2)];
            }
        }
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        SparseSystem {
            matrix,
            rhs,
            dofs: self.dofs,
        }
    }
}
