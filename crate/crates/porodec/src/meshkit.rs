//! Structured triangular meshes of the unit square, optional circular hole
//! removal (staircase approximation), uniform red refinement, and the edge
//! topology needed for lowest-order Raviart-Thomas spaces.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unit square mesh needs at least 1 subdivision per side")]
    ZeroSubdivisions,
    #[error("hole removal left a disconnected or empty mesh")]
    Disconnected,
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutside(f64, f64),
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub cells: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    /// Nominal mesh size (1/n for the structured square).
    pub h: f64,
    /// Subdivisions per side when the structured-grid cell layout is intact
    /// (enables O(1) point location); None after punching or refinement.
    grid_n: Option<usize>,
    /// Child cell -> parent cell index in the mesh this one was refined from.
    pub parent_cell: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Oriented from lower to higher vertex index.
    pub vertices: [usize; 2],
    /// Adjacent cells; boundary edges have exactly one.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EdgeTopology {
    pub edges: Vec<Edge>,
    pub boundary_edge: Vec<bool>,
    /// For each cell, its three edges as (edge index, incidence sign);
    /// sign is +1 when the cell lies left of the oriented edge.
    pub cell_edges: Vec<[(usize, f64); 3]>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriMesh {
    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_area(c)).sum()
    }

    pub fn cell_centroid(&self, cell: usize) -> [f64; 2] {
        let [a, b, c] = self.cells[cell];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            (va[0] + vb[0] + vc[0]) / 3.0,
            (va[1] + vb[1] + vc[1]) / 3.0,
        ]
    }

    pub fn grid_n(&self) -> Option<usize> {
        self.grid_n
    }

    /// Builds a mesh from raw vertex/cell lists (counterclockwise cells);
    /// boundary flags are derived from the edge topology.
    pub fn from_parts(vertices: Vec<[f64; 2]>, cells: Vec<[usize; 3]>) -> TriMesh {
        let h = cells
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| {
                let (va, vb) = (vertices[a], vertices[b]);
                ((va[0] - vb[0]).powi(2) + (va[1] - vb[1]).powi(2)).sqrt()
            })
            .fold(0.0f64, f64::max);
        let nv = vertices.len();
        let mut mesh = TriMesh {
            vertices,
            cells,
            boundary_vertex: vec![false; nv],
            h,
            grid_n: None,
            parent_cell: None,
        };
        mesh.boundary_vertex = boundary_vertices(&mesh);
        mesh
    }

    /// Barycentric coordinates of `point` with respect to `cell`.
    pub fn barycentric(&self, cell: usize, point: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.cells[cell];
        let area = self.cell_area(cell);
        let la = signed_area(point, self.vertices[b], self.vertices[c]) / area;
        let lb = signed_area(self.vertices[a], point, self.vertices[c]) / area;
        [la, lb, 1.0 - la - lb]
    }

    /// Finds the cell containing `point` (boundary-inclusive). Uses grid
    /// arithmetic on intact structured meshes, otherwise a linear scan.
    pub fn locate_cell(&self, point: [f64; 2]) -> Result<usize, MeshError> {
        const TOL: f64 = 1e-12;
        if let Some(n) = self.grid_n {
            let nf = n as f64;
            if point[0] < -TOL || point[0] > 1.0 + TOL || point[1] < -TOL || point[1] > 1.0 + TOL {
                return Err(MeshError::PointOutside(point[0], point[1]));
            }
            let i = ((point[0] * nf).floor() as usize).min(n - 1);
            let j = ((point[1] * nf).floor() as usize).min(n - 1);
            let fx = point[0] * nf - i as f64;
            let fy = point[1] * nf - j as f64;
            // Lower triangle of the square when below the BL-TR diagonal.
            let cell = 2 * (j * n + i) + if fx >= fy { 0 } else { 1 };
            // Guard against round-off at the diagonal.
            for c in [cell, cell ^ 1] {
                let bary = self.barycentric(c, point);
                if bary.iter().all(|&l| l >= -1e-10) {
                    return Ok(c);
                }
            }
        }
        for c in 0..self.cells.len() {
            let bary = self.barycentric(c, point);
            if bary.iter().all(|&l| l >= -1e-10) {
                return Ok(c);
            }
        }
        Err(MeshError::PointOutside(point[0], point[1]))
    }
}

/// Structured triangulation of (0,1)^2 with n subdivisions per side; every
/// square is split along the bottom-left-to-top-right diagonal.
pub fn unit_square_mesh(n: usize) -> Result<TriMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::ZeroSubdivisions);
    }
    let nv = (n + 1) * (n + 1);
    let mut vertices = Vec::with_capacity(nv);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let v = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }
    let mut mesh = TriMesh {
        vertices,
        cells,
        boundary_vertex: vec![false; nv],
        h: 1.0 / n as f64,
        grid_n: Some(n),
        parent_cell: None,
    };
    mesh.boundary_vertex = boundary_vertices(&mesh);
    Ok(mesh)
}

/// Global edge numbering with consistent orientation and per-cell incidence.
pub fn edge_topology(mesh: &TriMesh) -> EdgeTopology {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut cell_edges = Vec::with_capacity(mesh.cells.len());
    for (ci, cell) in mesh.cells.iter().enumerate() {
        let mut local = [(0usize, 0.0f64); 3];
        for k in 0..3 {
            let (a, b) = (cell[k], cell[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let ei = *index.entry(key).or_insert_with(|| {
                edges.push(Edge {
                    vertices: [key.0, key.1],
                    cells: Vec::new(),
                });
                edges.len() - 1
            });
            edges[ei].cells.push(ci);
            // The cell traverses the edge a->b counterclockwise, so it lies
            // left of the edge when the traversal agrees with the global
            // low-to-high orientation.
            let sign = if a < b { 1.0 } else { -1.0 };
            local[k] = (ei, sign);
        }
        cell_edges.push(local);
    }
    let boundary_edge = edges.iter().map(|e| e.cells.len() == 1).collect();
    EdgeTopology {
        edges,
        boundary_edge,
        cell_edges,
    }
}

fn boundary_vertices(mesh: &TriMesh) -> Vec<bool> {
    let topo = edge_topology(mesh);
    let mut flags = vec![false; mesh.vertices.len()];
    for (e, &on_boundary) in topo.edges.iter().zip(&topo.boundary_edge) {
        if on_boundary {
            flags[e.vertices[0]] = true;
            flags[e.vertices[1]] = true;
        }
    }
    flags
}

/// Removes every cell whose centroid lies inside the disk, re-indexes the
/// vertices, and re-flags the newly exposed boundary.
pub fn punch_hole(mesh: &TriMesh, center: [f64; 2], radius: f64) -> Result<TriMesh, MeshError> {
    if radius <= 0.0 {
        return Ok(mesh.clone());
    }
    let r2 = radius * radius;
    let kept: Vec<usize> = (0..mesh.cells.len())
        .filter(|&c| {
            let g = mesh.cell_centroid(c);
            let dx = g[0] - center[0];
            let dy = g[1] - center[1];
            dx * dx + dy * dy >= r2
        })
        .collect();
    if kept.is_empty() {
        return Err(MeshError::Disconnected);
    }
    let mut vertex_map = vec![usize::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let mut cells = Vec::with_capacity(kept.len());
    for &c in &kept {
        let mut tri = [0usize; 3];
        for (k, &v) in mesh.cells[c].iter().enumerate() {
            if vertex_map[v] == usize::MAX {
                vertex_map[v] = vertices.len();
                vertices.push(mesh.vertices[v]);
            }
            tri[k] = vertex_map[v];
        }
        cells.push(tri);
    }
    let nv = vertices.len();
    let mut out = TriMesh {
        vertices,
        cells,
        boundary_vertex: vec![false; nv],
        h: mesh.h,
        grid_n: None,
        parent_cell: None,
    };
    out.boundary_vertex = boundary_vertices(&out);
    if !is_connected(&out) {
        return Err(MeshError::Disconnected);
    }
    Ok(out)
}

fn is_connected(mesh: &TriMesh) -> bool {
    let topo = edge_topology(mesh);
    let n = mesh.cells.len();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(c) = stack.pop() {
        for &(ei, _) in &topo.cell_edges[c] {
            for &nb in &topo.edges[ei].cells {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Splits every cell into 4 via edge midpoints; h halves and the child->parent
/// map is recorded for inter-grid transfer.
pub fn refine_uniform(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let (va, vb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])]);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(4 * mesh.cells.len());
    let mut parent = Vec::with_capacity(4 * mesh.cells.len());
    for (ci, &[a, b, c]) in mesh.cells.iter().enumerate() {
        let mab = mid(a, b, &mut vertices);
        let mbc = mid(b, c, &mut vertices);
        let mca = mid(c, a, &mut vertices);
        for tri in [[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]] {
            cells.push(tri);
            parent.push(ci);
        }
    }
    let nv = vertices.len();
    let mut out = TriMesh {
        vertices,
        cells,
        boundary_vertex: vec![false; nv],
        h: mesh.h / 2.0,
        grid_n: None,
        parent_cell: Some(parent),
    };
    out.boundary_vertex = boundary_vertices(&out);
    out
}

/// Plain-text dump: vertex list, cell list, edge list (debugging aid).
pub fn dump_mesh(mesh: &TriMesh) -> String {
    let topo = edge_topology(mesh);
    let mut s = String::new();
    s.push_str(&format!(
        "# vertices {}\n# cells {}\n# edges {}\n",
        mesh.vertices.len(),
        mesh.cells.len(),
        topo.edges.len()
    ));
    s.push_str("[vertices]\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        s.push_str(&format!(
            "{} {} {} {}\n",
            i,
            v[0],
            v[1],
            if mesh.boundary_vertex[i] { "boundary" } else { "interior" }
        ));
    }
    s.push_str("[cells]\n");
    for (i, c) in mesh.cells.iter().enumerate() {
        s.push_str(&format!("{} {} {} {}\n", i, c[0], c[1], c[2]));
    }
    s.push_str("[edges]\n");
    for (i, e) in topo.edges.iter().enumerate() {
        s.push_str(&format!(
            "{} {} {} {}\n",
            i,
            e.vertices[0],
            e.vertices[1],
            if topo.boundary_edge[i] { "boundary" } else { "interior" }
        ));
    }
    s
}
