//! Finite element assembly on P1 (Lagrange), RT0 (lowest-order Raviart-Thomas)
//! and P0 spaces: stiffness/mass/coupling matrices, load vectors, interpolation,
//! point evaluation, and elliptic projections. All form integrals use exact
//! formulas for affine elements; loads use the 3-edge-midpoint rule (exact for
//! quadratics).

use crate::meshkit::{EdgeTopology, MeshError, TriMesh};
use crate::sparsekit::{solve_spd, SolveMode, SolverError, SparseMatrix, DEFAULT_TOL};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("dof map mismatch: {0}")]
    Mismatch(String),
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    P1Scalar,
    P1Vector,
    Rt0,
    P0,
}

/// Maps mesh entities (vertices, edges, or cells) to global free dofs;
/// `None` marks a Dirichlet-eliminated entity. Vector P1 interleaves the
/// (x, y) components per vertex.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: SpaceKind,
    entity_dofs: Vec<Option<usize>>,
    n_free: usize,
}

impl DofMap {
    fn build(kind: SpaceKind, eliminated: impl Iterator<Item = bool>) -> Self {
        let mut entity_dofs = Vec::new();
        let mut n_free = 0;
        for e in eliminated {
            if e {
                entity_dofs.push(None);
            } else {
                entity_dofs.push(Some(n_free));
                n_free += 1;
            }
        }
        DofMap {
            kind,
            entity_dofs,
            n_free,
        }
    }

    pub fn p1_scalar(mesh: &TriMesh, dirichlet_on_boundary: bool) -> Self {
        Self::build(
            SpaceKind::P1Scalar,
            mesh.boundary_vertex
                .iter()
                .map(|&b| dirichlet_on_boundary && b),
        )
    }

    pub fn p1_vector(mesh: &TriMesh, dirichlet_on_boundary: bool) -> Self {
        Self::build(
            SpaceKind::P1Vector,
            mesh.boundary_vertex
                .iter()
                .flat_map(|&b| [dirichlet_on_boundary && b; 2]),
        )
    }

    /// Vector P1 with Dirichlet elimination restricted to vertices passing
    /// the predicate (used when only part of the boundary is clamped).
    pub fn p1_vector_where(mesh: &TriMesh, clamp: impl Fn(usize) -> bool) -> Self {
        Self::build(
            SpaceKind::P1Vector,
            (0..mesh.vertices.len())
                .flat_map(|v| [mesh.boundary_vertex[v] && clamp(v); 2]),
        )
    }

    pub fn rt0(topo: &EdgeTopology, zero_normal_trace: bool) -> Self {
        Self::build(
            SpaceKind::Rt0,
            topo.boundary_edge
                .iter()
                .map(|&b| zero_normal_trace && b),
        )
    }

    pub fn p0(mesh: &TriMesh) -> Self {
        Self::build(SpaceKind::P0, (0..mesh.cells.len()).map(|_| false))
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_entities(&self) -> usize {
        self.entity_dofs.len()
    }

    pub fn dof(&self, entity: usize) -> Option<usize> {
        self.entity_dofs[entity]
    }

    /// Dof of component `comp` at vertex `v` for vector P1.
    pub fn vector_dof(&self, v: usize, comp: usize) -> Option<usize> {
        self.entity_dofs[2 * v + comp]
    }
}

/// Physical parameters; vectors are per-network (length 1 for two-field).
#[derive(Debug, Clone)]
pub struct PoroParams {
    pub lambda: f64,
    pub mu: f64,
    pub kappa_over_nu: Vec<f64>,
    pub inv_m: f64,
    pub alpha: Vec<f64>,
    /// m x m exchange rates, zero diagonal.
    pub beta: Vec<Vec<f64>>,
}

impl PoroParams {
    pub fn m(&self) -> usize {
        self.kappa_over_nu.len()
    }

    pub fn validate(&self) -> Result<(), FemError> {
        let mut bad = Vec::new();
        if !(self.mu > 0.0) {
            bad.push(format!("mu must be > 0, got {}", self.mu));
        }
        if !(self.lambda >= 0.0) {
            bad.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        let m = self.m();
        if m == 0 {
            bad.push("need at least one network (kappa_over_nu empty)".into());
        }
        for (i, &k) in self.kappa_over_nu.iter().enumerate() {
            if !(k > 0.0) {
                bad.push(format!("kappa_over_nu[{i}] must be > 0, got {k}"));
            }
        }
        if !(self.inv_m > 0.0) {
            bad.push(format!("inv_m must be > 0, got {}", self.inv_m));
        }
        if self.alpha.len() != m {
            bad.push(format!("alpha has {} entries, expected {m}", self.alpha.len()));
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if !(a >= 0.0 && a <= 1.0) {
                bad.push(format!("alpha[{i}] must lie in [0, 1], got {a}"));
            }
        }
        if self.beta.len() != m || self.beta.iter().any(|row| row.len() != m) {
            bad.push(format!("beta must be a {m}x{m} table"));
        } else {
            for i in 0..m {
                if self.beta[i][i] != 0.0 {
                    bad.push(format!("beta[{i}][{i}] must be 0"));
                }
                for j in 0..m {
                    if self.beta[i][j] < 0.0 {
                        bad.push(format!("beta[{i}][{j}] must be >= 0"));
                    }
                    if i < j && self.beta[i][j] != self.beta[j][i] {
                        log::warn!(
                            "asymmetric exchange rates beta[{i}][{j}] = {} vs beta[{j}][{i}] = {}",
                            self.beta[i][j],
                            self.beta[j][i]
                        );
                    }
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(FemError::InvalidParams(bad))
        }
    }
}

/// Constant P1 basis gradients on a cell and its area.
pub fn cell_gradients(mesh: &TriMesh, cell: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.cells[cell];
    let (va, vb, vc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    let area = mesh.cell_area(cell);
    let two_a = 2.0 * area;
    let g = [
        [(vb[1] - vc[1]) / two_a, (vc[0] - vb[0]) / two_a],
        [(vc[1] - va[1]) / two_a, (va[0] - vc[0]) / two_a],
        [(va[1] - vb[1]) / two_a, (vb[0] - va[0]) / two_a],
    ];
    (g, area)
}

fn edge_midpoints(mesh: &TriMesh, cell: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.cells[cell];
    let (va, vb, vc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    // midpoint k is opposite vertex k.
    [
        [0.5 * (vb[0] + vc[0]), 0.5 * (vb[1] + vc[1])],
        [0.5 * (vc[0] + va[0]), 0.5 * (vc[1] + va[1])],
        [0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])],
    ]
}

/// Order-2 quadrature points strictly inside the cell (barycentric
/// (2/3, 1/6, 1/6) rotations, weight area/3 each). Interior placement keeps
/// piecewise-constant gradients unambiguous under point location.
pub fn interior_quad_points(mesh: &TriMesh, cell: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.cells[cell];
    let (va, vb, vc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    let combine = |wa: f64, wb: f64, wc: f64| {
        [
            wa * va[0] + wb * vb[0] + wc * vc[0],
            wa * va[1] + wb * vb[1] + wc * vc[1],
        ]
    };
    let (h, l) = (2.0 / 3.0, 1.0 / 6.0);
    [combine(h, l, l), combine(l, h, l), combine(l, l, h)]
}

#[derive(Debug, Clone)]
pub struct P1Forms {
    /// Elasticity stiffness on the vector P1 space.
    pub k_a: SparseMatrix,
    /// Pressure stiffness (kappa/nu weighted).
    pub k_b: SparseMatrix,
    /// Pressure mass (1/M weighted).
    pub m_c: SparseMatrix,
    /// Divergence coupling: rows pressure dofs, columns displacement dofs.
    pub d: SparseMatrix,
}

/// Assembles the elasticity, pressure-diffusion, pressure-mass and coupling
/// matrices of the two-field model on P1 spaces.
pub fn assemble_p1_forms(
    mesh: &TriMesh,
    dof_u: &DofMap,
    dof_p: &DofMap,
    params: &PoroParams,
) -> Result<P1Forms, FemError> {
    params.validate()?;
    check_map(mesh, dof_u, SpaceKind::P1Vector)?;
    check_map(mesh, dof_p, SpaceKind::P1Scalar)?;
    let (lambda, mu) = (params.lambda, params.mu);
    let kappa = params.kappa_over_nu[0];
    let alpha = params.alpha[0];
    // Voigt elasticity tensor for sigma = 2 mu eps + lambda tr(eps) I.
    let cmat = [
        [2.0 * mu + lambda, lambda, 0.0],
        [lambda, 2.0 * mu + lambda, 0.0],
        [0.0, 0.0, mu],
    ];
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    let mut tc = Vec::new();
    let mut td = Vec::new();
    for cell in 0..mesh.cells.len() {
        let (g, area) = cell_gradients(mesh, cell);
        let verts = mesh.cells[cell];
        // Voigt strain rows of each local displacement dof (vertex k, comp c).
        let bcol = |k: usize, c: usize| -> [f64; 3] {
            if c == 0 {
                [g[k][0], 0.0, g[k][1]]
            } else {
                [0.0, g[k][1], g[k][0]]
            }
        };
        for k in 0..3 {
            for ck in 0..2 {
                let Some(row) = dof_u.vector_dof(verts[k], ck) else {
                    continue;
                };
                let bk = bcol(k, ck);
                let cb = [
                    cmat[0][0] * bk[0] + cmat[0][1] * bk[1],
                    cmat[1][0] * bk[0] + cmat[1][1] * bk[1],
                    cmat[2][2] * bk[2],
                ];
                for l in 0..3 {
                    for cl in 0..2 {
                        let Some(col) = dof_u.vector_dof(verts[l], cl) else {
                            continue;
                        };
                        let bl = bcol(l, cl);
                        let val = area * (cb[0] * bl[0] + cb[1] * bl[1] + cb[2] * bl[2]);
                        ta.push((row, col, val));
                    }
                }
            }
        }
        for k in 0..3 {
            let Some(row) = dof_p.dof(verts[k]) else {
                continue;
            };
            for l in 0..3 {
                if let Some(col) = dof_p.dof(verts[l]) {
                    let stiff = kappa * area * (g[k][0] * g[l][0] + g[k][1] * g[l][1]);
                    tb.push((row, col, stiff));
                    let mass = params.inv_m * area / 12.0 * if k == l { 2.0 } else { 1.0 };
                    tc.push((row, col, mass));
                }
                // d(v, q) = alpha * (div v, q): integral of the hat function
                // is area/3 and div of a P1 dof is the constant gradient entry.
                for cl in 0..2 {
                    if let Some(col) = dof_u.vector_dof(verts[l], cl) {
                        td.push((row, col, alpha * g[l][cl] * area / 3.0));
                    }
                }
            }
        }
    }
    let k_a = SparseMatrix::from_triplets(dof_u.n_free(), dof_u.n_free(), &ta)
        .map_err(SolverError::from)?;
    let k_b = SparseMatrix::from_triplets(dof_p.n_free(), dof_p.n_free(), &tb)
        .map_err(SolverError::from)?;
    let m_c = SparseMatrix::from_triplets(dof_p.n_free(), dof_p.n_free(), &tc)
        .map_err(SolverError::from)?;
    let d = SparseMatrix::from_triplets(dof_p.n_free(), dof_u.n_free(), &td)
        .map_err(SolverError::from)?;
    Ok(P1Forms { k_a, k_b, m_c, d })
}

fn check_map(mesh: &TriMesh, map: &DofMap, want: SpaceKind) -> Result<(), FemError> {
    if map.kind != want {
        return Err(FemError::Mismatch(format!(
            "expected a {want:?} dof map, got {:?}",
            map.kind
        )));
    }
    let expect = match want {
        SpaceKind::P1Scalar => mesh.vertices.len(),
        SpaceKind::P1Vector => 2 * mesh.vertices.len(),
        SpaceKind::P0 => mesh.cells.len(),
        SpaceKind::Rt0 => return Ok(()), // checked against the edge topology
    };
    if map.n_entities() != expect {
        return Err(FemError::Mismatch(format!(
            "dof map covers {} entities, mesh has {expect}",
            map.n_entities()
        )));
    }
    Ok(())
}

/// Divergence coupling onto P0 pressures: rows cells, columns displacement
/// dofs, entries alpha * integral of div over the cell.
pub fn assemble_div_p0(
    mesh: &TriMesh,
    dof_u: &DofMap,
    dof_p: &DofMap,
    alpha: f64,
) -> Result<SparseMatrix, FemError> {
    check_map(mesh, dof_u, SpaceKind::P1Vector)?;
    check_map(mesh, dof_p, SpaceKind::P0)?;
    let mut t = Vec::new();
    for cell in 0..mesh.cells.len() {
        let Some(row) = dof_p.dof(cell) else { continue };
        let (g, area) = cell_gradients(mesh, cell);
        let verts = mesh.cells[cell];
        for l in 0..3 {
            for cl in 0..2 {
                if let Some(col) = dof_u.vector_dof(verts[l], cl) {
                    t.push((row, col, alpha * g[l][cl] * area));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(dof_p.n_free(), dof_u.n_free(), &t)
        .map_err(SolverError::from)?)
}

/// P0 mass matrix (diagonal of coefficient-weighted cell areas).
pub fn assemble_p0_mass(
    mesh: &TriMesh,
    dof_p: &DofMap,
    coeff: f64,
) -> Result<SparseMatrix, FemError> {
    check_map(mesh, dof_p, SpaceKind::P0)?;
    let mut t = Vec::new();
    for cell in 0..mesh.cells.len() {
        if let Some(d) = dof_p.dof(cell) {
            t.push((d, d, coeff * mesh.cell_area(cell)));
        }
    }
    Ok(SparseMatrix::from_triplets(dof_p.n_free(), dof_p.n_free(), &t)
        .map_err(SolverError::from)?)
}

#[derive(Debug, Clone)]
pub struct Rt0Forms {
    /// RT0 mass matrix on free (interior) edges.
    pub m_y: SparseMatrix,
    /// Divergence pairing scaled by sqrt(kappa/nu): rows cells, columns edges.
    pub d_hat: SparseMatrix,
}

/// RT0 basis function of edge slot `k` of a cell: sign * (x - p_k) / (2 area),
/// dual to the total-flux functional through the globally oriented edge.
fn rt0_basis_at(
    mesh: &TriMesh,
    cell: usize,
    k: usize,
    sign: f64,
    point: [f64; 2],
) -> [f64; 2] {
    let verts = mesh.cells[cell];
    let p = mesh.vertices[verts[(k + 2) % 3]]; // vertex opposite edge (k, k+1)
    let area = mesh.cell_area(cell);
    [
        sign * (point[0] - p[0]) / (2.0 * area),
        sign * (point[1] - p[1]) / (2.0 * area),
    ]
}

pub fn assemble_rt0_forms(
    mesh: &TriMesh,
    topo: &EdgeTopology,
    dof_y: &DofMap,
    dof_p: &DofMap,
    kappa_over_nu: f64,
) -> Result<Rt0Forms, FemError> {
    if dof_y.kind != SpaceKind::Rt0 {
        return Err(FemError::Mismatch("expected an RT0 dof map".into()));
    }
    if dof_y.n_entities() != topo.edges.len() {
        return Err(FemError::Mismatch(format!(
            "RT0 dof map covers {} edges, topology has {}",
            dof_y.n_entities(),
            topo.edges.len()
        )));
    }
    check_map(mesh, dof_p, SpaceKind::P0)?;
    let sqrt_k = kappa_over_nu.sqrt();
    let mut tm = Vec::new();
    let mut td = Vec::new();
    for cell in 0..mesh.cells.len() {
        let area = mesh.cell_area(cell);
        let mids = edge_midpoints_cyclic(mesh, cell);
        let ce = topo.cell_edges[cell];
        for k in 0..3 {
            let (ek, sk) = ce[k];
            let Some(row) = dof_y.dof(ek) else { continue };
            // Divergence of the basis is sign / area, so the cell integral is
            // the incidence sign.
            if let Some(prow) = dof_p.dof(cell) {
                td.push((prow, row, sqrt_k * sk));
            }
            for l in 0..3 {
                let (el, sl) = ce[l];
                let Some(col) = dof_y.dof(el) else { continue };
                // 3-midpoint rule, exact for the quadratic integrand.
                let mut val = 0.0;
                for m in mids {
                    let a = rt0_basis_at(mesh, cell, k, sk, m);
                    let b = rt0_basis_at(mesh, cell, l, sl, m);
                    val += a[0] * b[0] + a[1] * b[1];
                }
                tm.push((row, col, val * area / 3.0));
            }
        }
    }
    let m_y = SparseMatrix::from_triplets(dof_y.n_free(), dof_y.n_free(), &tm)
        .map_err(SolverError::from)?;
    let d_hat = SparseMatrix::from_triplets(dof_p.n_free(), dof_y.n_free(), &td)
        .map_err(SolverError::from)?;
    Ok(Rt0Forms { m_y, d_hat })
}

/// Midpoints indexed like cell_edges: slot k is the edge (v_k, v_{k+1}).
fn edge_midpoints_cyclic(mesh: &TriMesh, cell: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.cells[cell];
    let (va, vb, vc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    [
        [0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])],
        [0.5 * (vb[0] + vc[0]), 0.5 * (vb[1] + vc[1])],
        [0.5 * (vc[0] + va[0]), 0.5 * (vc[1] + va[1])],
    ]
}

/// Scalar P1 load vector via the 3-edge-midpoint rule.
pub fn assemble_load_p1_scalar(
    mesh: &TriMesh,
    dof: &DofMap,
    f: impl Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        let area = mesh.cell_area(cell);
        let mids = edge_midpoints(mesh, cell);
        let verts = mesh.cells[cell];
        let fm = [f(mids[0]), f(mids[1]), f(mids[2])];
        for k in 0..3 {
            if let Some(d) = dof.dof(verts[k]) {
                // Hat function k vanishes at the opposite midpoint and is 1/2
                // at the other two.
                load[d] += area / 6.0 * (fm[(k + 1) % 3] + fm[(k + 2) % 3]);
            }
        }
    }
    load
}

/// Vector P1 load via the 3-edge-midpoint rule.
pub fn assemble_load_p1_vector(
    mesh: &TriMesh,
    dof: &DofMap,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let mut load = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        let area = mesh.cell_area(cell);
        let mids = edge_midpoints(mesh, cell);
        let verts = mesh.cells[cell];
        let fm = [f(mids[0]), f(mids[1]), f(mids[2])];
        for k in 0..3 {
            for c in 0..2 {
                if let Some(d) = dof.vector_dof(verts[k], c) {
                    load[d] += area / 6.0 * (fm[(k + 1) % 3][c] + fm[(k + 2) % 3][c]);
                }
            }
        }
    }
    load
}

/// P0 load vector: cell integrals via the 3-edge-midpoint rule.
pub fn assemble_load_p0(mesh: &TriMesh, dof: &DofMap, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        if let Some(d) = dof.dof(cell) {
            let area = mesh.cell_area(cell);
            let mids = edge_midpoints(mesh, cell);
            load[d] += area / 3.0 * (f(mids[0]) + f(mids[1]) + f(mids[2]));
        }
    }
    load
}

/// Vertex-evaluation interpolant onto the free P1 scalar dofs.
pub fn interpolate_p1_scalar(
    mesh: &TriMesh,
    dof: &DofMap,
    f: impl Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    let mut v = vec![0.0; dof.n_free()];
    for (vert, &pos) in mesh.vertices.iter().enumerate() {
        if let Some(d) = dof.dof(vert) {
            v[d] = f(pos);
        }
    }
    v
}

pub fn interpolate_p1_vector(
    mesh: &TriMesh,
    dof: &DofMap,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let mut v = vec![0.0; dof.n_free()];
    for (vert, &pos) in mesh.vertices.iter().enumerate() {
        let val = f(pos);
        for c in 0..2 {
            if let Some(d) = dof.vector_dof(vert, c) {
                v[d] = val[c];
            }
        }
    }
    v
}

/// Centroid-evaluation interpolant onto P0.
pub fn interpolate_p0(mesh: &TriMesh, dof: &DofMap, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut v = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        if let Some(d) = dof.dof(cell) {
            v[d] = f(mesh.cell_centroid(cell));
        }
    }
    v
}

/// RT0 interpolant: total flux through each free edge, evaluated at the edge
/// midpoint against the global (low-to-high) normal.
pub fn interpolate_rt0(
    mesh: &TriMesh,
    topo: &EdgeTopology,
    dof: &DofMap,
    f: impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let mut v = vec![0.0; dof.n_free()];
    for (ei, edge) in topo.edges.iter().enumerate() {
        if let Some(d) = dof.dof(ei) {
            let (a, b) = (mesh.vertices[edge.vertices[0]], mesh.vertices[edge.vertices[1]]);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let t = [b[0] - a[0], b[1] - a[1]];
            // Unnormalized right normal (t_y, -t_x) already carries the edge length.
            let val = f(mid);
            v[d] = val[0] * t[1] - val[1] * t[0];
        }
    }
    v
}

fn free_values_with_zeros<'a>(dof: &'a DofMap, vec: &'a [f64]) -> impl Fn(usize) -> f64 + 'a {
    move |entity| dof.dof(entity).map_or(0.0, |d| vec[d])
}

pub fn evaluate_p1_scalar(
    mesh: &TriMesh,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<f64>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Scalar)?;
    let val = free_values_with_zeros(dof, vec);
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let cell = mesh.locate_cell(p)?;
        let bary = mesh.barycentric(cell, p);
        let verts = mesh.cells[cell];
        out.push((0..3).map(|k| bary[k] * val(verts[k])).sum());
    }
    Ok(out)
}

pub fn evaluate_p1_scalar_gradient(
    mesh: &TriMesh,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Scalar)?;
    let val = free_values_with_zeros(dof, vec);
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let cell = mesh.locate_cell(p)?;
        let (g, _) = cell_gradients(mesh, cell);
        let verts = mesh.cells[cell];
        let mut grad = [0.0; 2];
        for k in 0..3 {
            let v = val(verts[k]);
            grad[0] += v * g[k][0];
            grad[1] += v * g[k][1];
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn evaluate_p1_vector(
    mesh: &TriMesh,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Vector)?;
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let cell = mesh.locate_cell(p)?;
        let bary = mesh.barycentric(cell, p);
        let verts = mesh.cells[cell];
        let mut v = [0.0; 2];
        for k in 0..3 {
            for c in 0..2 {
                let x = dof.vector_dof(verts[k], c).map_or(0.0, |d| vec[d]);
                v[c] += bary[k] * x;
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Gradient tensor grad[i][j] = du_i/dx_j, constant per cell.
pub fn evaluate_p1_vector_gradient(
    mesh: &TriMesh,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<[[f64; 2]; 2]>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Vector)?;
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let cell = mesh.locate_cell(p)?;
        let (g, _) = cell_gradients(mesh, cell);
        let verts = mesh.cells[cell];
        let mut grad = [[0.0; 2]; 2];
        for k in 0..3 {
            for c in 0..2 {
                let x = dof.vector_dof(verts[k], c).map_or(0.0, |d| vec[d]);
                grad[c][0] += x * g[k][0];
                grad[c][1] += x * g[k][1];
            }
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn evaluate_p0(
    mesh: &TriMesh,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<f64>, FemError> {
    check_map(mesh, dof, SpaceKind::P0)?;
    let val = free_values_with_zeros(dof, vec);
    points
        .iter()
        .map(|&p| Ok(val(mesh.locate_cell(p)?)))
        .collect()
}

pub fn evaluate_rt0(
    mesh: &TriMesh,
    topo: &EdgeTopology,
    dof: &DofMap,
    vec: &[f64],
    points: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>, FemError> {
    if dof.kind != SpaceKind::Rt0 {
        return Err(FemError::Mismatch("expected an RT0 dof map".into()));
    }
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        let cell = mesh.locate_cell(p)?;
        let mut v = [0.0; 2];
        for (k, &(ei, sign)) in topo.cell_edges[cell].iter().enumerate() {
            if let Some(d) = dof.dof(ei) {
                let b = rt0_basis_at(mesh, cell, k, sign, p);
                v[0] += vec[d] * b[0];
                v[1] += vec[d] * b[1];
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Galerkin projection in the scalar diffusion form: solves
/// K (coeff-weighted stiffness) x = rhs with rhs_i = coeff * (grad f, grad phi_i).
pub fn elliptic_projection_scalar(
    mesh: &TriMesh,
    dof: &DofMap,
    coeff: f64,
    grad_f: impl Fn([f64; 2]) -> [f64; 2],
) -> Result<Vec<f64>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Scalar)?;
    let mut t = Vec::new();
    let mut rhs = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        let (g, area) = cell_gradients(mesh, cell);
        let mids = interior_quad_points(mesh, cell);
        let verts = mesh.cells[cell];
        let gm = [grad_f(mids[0]), grad_f(mids[1]), grad_f(mids[2])];
        for k in 0..3 {
            let Some(row) = dof.dof(verts[k]) else { continue };
            for l in 0..3 {
                if let Some(col) = dof.dof(verts[l]) {
                    t.push((row, col, coeff * area * (g[k][0] * g[l][0] + g[k][1] * g[l][1])));
                }
            }
            let mut s = 0.0;
            for m in gm {
                s += m[0] * g[k][0] + m[1] * g[k][1];
            }
            rhs[row] += coeff * area / 3.0 * s;
        }
    }
    let k = SparseMatrix::from_triplets(dof.n_free(), dof.n_free(), &t)
        .map_err(SolverError::from)?;
    let report = solve_spd(&k, &rhs, SolveMode::Direct, DEFAULT_TOL)?;
    Ok(report.solution)
}

/// Galerkin projection in the elasticity form: rhs_i = (sigma(u), eps(phi_i))
/// computed from the analytic displacement gradient.
pub fn elliptic_projection_vector(
    mesh: &TriMesh,
    dof: &DofMap,
    lambda: f64,
    mu: f64,
    grad_u: impl Fn([f64; 2]) -> [[f64; 2]; 2],
) -> Result<Vec<f64>, FemError> {
    check_map(mesh, dof, SpaceKind::P1Vector)?;
    let params = PoroParams {
        lambda,
        mu,
        kappa_over_nu: vec![1.0],
        inv_m: 1.0,
        alpha: vec![1.0],
        beta: vec![vec![0.0]],
    };
    let dof_p = DofMap::p1_scalar(mesh, true);
    let forms = assemble_p1_forms(mesh, dof, &dof_p, &params)?;
    let mut rhs = vec![0.0; dof.n_free()];
    for cell in 0..mesh.cells.len() {
        let (g, area) = cell_gradients(mesh, cell);
        let mids = interior_quad_points(mesh, cell);
        let verts = mesh.cells[cell];
        // Voigt stress at each quadrature point.
        let sigma: Vec<[f64; 3]> = mids
            .iter()
            .map(|&m| {
                let gu = grad_u(m);
                let (exx, eyy) = (gu[0][0], gu[1][1]);
                let gxy = gu[0][1] + gu[1][0];
                let tr = exx + eyy;
                [
                    2.0 * mu * exx + lambda * tr,
                    2.0 * mu * eyy + lambda * tr,
                    mu * gxy,
                ]
            })
            .collect();
        for k in 0..3 {
            for c in 0..2 {
                let Some(row) = dof.vector_dof(verts[k], c) else {
                    continue;
                };
                let b = if c == 0 {
                    [g[k][0], 0.0, g[k][1]]
                } else {
                    [0.0, g[k][1], g[k][0]]
                };
                let mut s = 0.0;
                for sg in &sigma {
                    s += sg[0] * b[0] + sg[1] * b[1] + sg[2] * b[2];
                }
                rhs[row] += area / 3.0 * s;
            }
        }
    }
    let report = solve_spd(&forms.k_a, &rhs, SolveMode::Direct, DEFAULT_TOL)?;
    Ok(report.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::{edge_topology, refine_uniform, unit_square_mesh};
    use crate::sparsekit::CholeskyFactor;

    fn unit_params() -> PoroParams {
        PoroParams {
            lambda: 1.0,
            mu: 1.0,
            kappa_over_nu: vec![1.0],
            inv_m: 1.0,
            alpha: vec![1.0],
            beta: vec![vec![0.0]],
        }
    }

    #[test]
    fn params_validation_lists_fields() {
        let mut p = unit_params();
        p.mu = -1.0;
        p.inv_m = 0.0;
        match p.validate() {
            Err(FemError::InvalidParams(list)) => assert_eq!(list.len(), 2),
            other => panic!("expected InvalidParams, got {other:?}"),
        }
    }

    #[test]
    fn reference_triangle_scalar_stiffness() {
        // Single reference triangle (0,0),(1,0),(0,1); stiffness without
        // elimination is 1/2 [[2,-1,-1],[-1,1,0],[-1,0,1]].
        let mesh = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        let dof = DofMap::p1_scalar(&mesh, false);
        let forms = assemble_p1_forms(&mesh, &DofMap::p1_vector(&mesh, false), &dof, &unit_params())
            .unwrap();
        let expected = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (forms.k_b.get(i, j) - expected[i][j]).abs() < 1e-14,
                    "K_b[{i}][{j}] = {}",
                    forms.k_b.get(i, j)
                );
            }
        }
    }

    #[test]
    fn rigid_translation_in_elasticity_kernel() {
        let mesh = unit_square_mesh(3).unwrap();
        let dof_u = DofMap::p1_vector(&mesh, false);
        let dof_p = DofMap::p1_scalar(&mesh, false);
        let forms = assemble_p1_forms(&mesh, &dof_u, &dof_p, &unit_params()).unwrap();
        let ones = interpolate_p1_vector(&mesh, &dof_u, |_| [1.0, 0.5]);
        let r = forms.k_a.matvec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-10), "K_a kills rigid translations");
    }

    #[test]
    fn mass_matrix_partition_of_unity() {
        let mesh = unit_square_mesh(4).unwrap();
        let dof_p = DofMap::p1_scalar(&mesh, false);
        let mut params = unit_params();
        params.inv_m = 3.0;
        let forms =
            assemble_p1_forms(&mesh, &DofMap::p1_vector(&mesh, false), &dof_p, &params).unwrap();
        let ones = vec![1.0; dof_p.n_free()];
        let total: f64 = forms.m_c.matvec(&ones).iter().sum();
        assert!((total - 3.0).abs() < 1e-12, "sum {total} should be inv_m * |domain|");
    }

    #[test]
    fn assembled_matrices_are_spd() {
        let mesh = unit_square_mesh(4).unwrap();
        let dof_u = DofMap::p1_vector(&mesh, true);
        let dof_p = DofMap::p1_scalar(&mesh, true);
        let forms = assemble_p1_forms(&mesh, &dof_u, &dof_p, &unit_params()).unwrap();
        for (name, m) in [("K_a", &forms.k_a), ("K_b", &forms.k_b), ("M_c", &forms.m_c)] {
            assert!(m.symmetry_hint(), "{name} symmetric");
            assert!(CholeskyFactor::factor(m).is_ok(), "{name} positive definite");
        }
    }

    #[test]
    fn dirichlet_dof_counts() {
        let mesh = unit_square_mesh(4).unwrap();
        assert_eq!(DofMap::p1_scalar(&mesh, true).n_free(), 9); // (n-1)^2 interior
        assert_eq!(DofMap::p1_scalar(&mesh, false).n_free(), 25);
        assert_eq!(DofMap::p1_vector(&mesh, true).n_free(), 18);
    }

    #[test]
    fn rt0_divergence_entries_and_column_sums() {
        let mesh = unit_square_mesh(3).unwrap();
        let topo = edge_topology(&mesh);
        let dof_y = DofMap::rt0(&topo, true);
        let dof_p = DofMap::p0(&mesh);
        let forms = assemble_rt0_forms(&mesh, &topo, &dof_y, &dof_p, 4.0).unwrap();
        // Entries are sqrt(kappa) * (+-1); interior edge columns sum to zero.
        let mut col_sums = vec![0.0; dof_y.n_free()];
        for i in 0..forms.d_hat.nrows() {
            for (j, v) in forms.d_hat.row(i) {
                assert!((v.abs() - 2.0).abs() < 1e-14);
                col_sums[j] += v;
            }
        }
        assert!(col_sums.iter().all(|s| s.abs() < 1e-14));
        assert!(forms.m_y.symmetry_hint());
        assert!(CholeskyFactor::factor(&forms.m_y).is_ok(), "M_y SPD");
    }

    #[test]
    fn rt0_single_triangle_divergence() {
        let mesh = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        let topo = edge_topology(&mesh);
        let dof_y = DofMap::rt0(&topo, false);
        let dof_p = DofMap::p0(&mesh);
        let forms = assemble_rt0_forms(&mesh, &topo, &dof_y, &dof_p, 1.0).unwrap();
        for (_, v) in forms.d_hat.row(0) {
            assert!((v.abs() - 1.0).abs() < 1e-14, "divergence integral +-1");
        }
    }

    #[test]
    fn rt0_interpolation_reproduces_constant_field() {
        // RT0 contains constants: interpolate then evaluate pointwise.
        let mesh = unit_square_mesh(2).unwrap();
        let topo = edge_topology(&mesh);
        let dof_y = DofMap::rt0(&topo, false);
        let field = |_: [f64; 2]| [0.7, -0.3];
        let v = interpolate_rt0(&mesh, &topo, &dof_y, field);
        let points = [[0.3, 0.1], [0.9, 0.8], [0.4, 0.6]];
        let vals = evaluate_rt0(&mesh, &topo, &dof_y, &v, &points).unwrap();
        for val in vals {
            assert!((val[0] - 0.7).abs() < 1e-12 && (val[1] + 0.3).abs() < 1e-12, "{val:?}");
        }
    }

    #[test]
    fn load_partition_of_unity() {
        let mesh = unit_square_mesh(4).unwrap();
        let dof = DofMap::p1_scalar(&mesh, false);
        let load = assemble_load_p1_scalar(&mesh, &dof, |_| 1.0);
        let total: f64 = load.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let zero = assemble_load_p1_scalar(&mesh, &dof, |_| 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_point_values() {
        let mesh = unit_square_mesh(4).unwrap();
        let dof = DofMap::p1_scalar(&mesh, false);
        let v = interpolate_p1_scalar(&mesh, &dof, |p| p[0]);
        let vals = evaluate_p1_scalar(&mesh, &dof, &v, &[[0.5, 0.25]]).unwrap();
        assert!((vals[0] - 0.5).abs() < 1e-12);

        let mesh1 = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        let dof0 = DofMap::p0(&mesh1);
        let v0 = interpolate_p0(&mesh1, &dof0, |p| p[0] + p[1]);
        assert!((v0[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_interpolant_near_exact_on_fine_mesh() {
        let mesh = unit_square_mesh(64).unwrap();
        let dof = DofMap::p1_scalar(&mesh, false);
        let f = |p: [f64; 2]| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let v = interpolate_p1_scalar(&mesh, &dof, f);
        let vals = evaluate_p1_scalar(&mesh, &dof, &v, &[[0.5, 0.5]]).unwrap();
        assert!((vals[0] - 0.0625).abs() < 1e-3);
    }

    #[test]
    fn projection_is_identity_on_subspace() {
        // Project the gradient field of a P1 interpolant: the Galerkin
        // projection must give the interpolant back to solver tolerance.
        let mesh = unit_square_mesh(4).unwrap();
        let dof = DofMap::p1_scalar(&mesh, true);
        let f = |p: [f64; 2]| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let interp = interpolate_p1_scalar(&mesh, &dof, f);
        let proj = elliptic_projection_scalar(&mesh, &dof, 1.0, |p| {
            evaluate_p1_scalar_gradient(&mesh, &dof, &interp, &[p]).unwrap()[0]
        })
        .unwrap();
        for (a, b) in proj.iter().zip(&interp) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        let zero = elliptic_projection_scalar(&mesh, &dof, 1.0, |_| [0.0, 0.0]).unwrap();
        assert!(zero.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_error_halves_with_refinement() {
        let pi = std::f64::consts::PI;
        let grad = |p: [f64; 2]| {
            [
                pi * (pi * p[0]).cos() * (pi * p[1]).sin(),
                pi * (pi * p[0]).sin() * (pi * p[1]).cos(),
            ]
        };
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let mesh = unit_square_mesh(n).unwrap();
            let dof = DofMap::p1_scalar(&mesh, true);
            let proj = elliptic_projection_scalar(&mesh, &dof, 1.0, grad).unwrap();
            // H1-seminorm error by 3-midpoint quadrature per cell.
            let mut e2 = 0.0;
            for cell in 0..mesh.cells.len() {
                let area = mesh.cell_area(cell);
                let mids = interior_quad_points(&mesh, cell);
                let gh = evaluate_p1_scalar_gradient(&mesh, &dof, &proj, &mids).unwrap();
                for (m, g) in mids.iter().zip(gh) {
                    let ge = grad(*m);
                    let dx = ge[0] - g[0];
                    let dy = ge[1] - g[1];
                    e2 += area / 3.0 * (dx * dx + dy * dy);
                }
            }
            errs.push(e2.sqrt());
        }
        let eoc1 = (errs[0] / errs[1]).ln() / 2f64.ln();
        let eoc2 = (errs[1] / errs[2]).ln() / 2f64.ln();
        assert!((0.85..1.15).contains(&eoc1), "eoc1 = {eoc1}");
        assert!((0.85..1.15).contains(&eoc2), "eoc2 = {eoc2}");
    }

    #[test]
    fn coupling_matrix_zero_for_alpha_zero() {
        let mesh = unit_square_mesh(3).unwrap();
        let mut params = unit_params();
        params.alpha = vec![0.0];
        let forms = assemble_p1_forms(
            &mesh,
            &DofMap::p1_vector(&mesh, true),
            &DofMap::p1_scalar(&mesh, true),
            &params,
        )
        .unwrap();
        assert_eq!(forms.d.nnz(), 0);
    }

    #[test]
    fn p0_mass_is_area_diagonal() {
        let mesh = unit_square_mesh(2).unwrap();
        let dof = DofMap::p0(&mesh);
        let m = assemble_p0_mass(&mesh, &dof, 2.0).unwrap();
        let total: f64 = (0..dof.n_free()).map(|i| m.get(i, i)).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn refined_mesh_assembly_still_spd() {
        let mesh = refine_uniform(&unit_square_mesh(2).unwrap());
        let forms = assemble_p1_forms(
            &mesh,
            &DofMap::p1_vector(&mesh, true),
            &DofMap::p1_scalar(&mesh, true),
            &unit_params(),
        )
        .unwrap();
        assert!(CholeskyFactor::factor(&forms.k_a).is_ok());
    }
}
