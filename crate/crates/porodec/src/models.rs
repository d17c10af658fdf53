//! Ready-to-step systems: the two-field model, the m-network model, and the
//! 3+1 dimensional toy system, each bundled with loads, parameters, and
//! consistent initial data.

use crate::config::{Config, ConfigError, ModelKind};
use crate::femkit::{self, DofMap, FemError, PoroParams};
use crate::meshkit::{self, EdgeTopology, MeshError, TriMesh};
use crate::sparsekit::{
    norm2, solve_spd, spectral_radius, CholeskyFactor, SolveMode, SolverError, SparseMatrix,
    DEFAULT_TOL,
};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("inconsistent initial data: elasticity residual {residual:.3e} exceeds {tol:.3e}")]
    Inconsistent { residual: f64, tol: f64 },
    #[error("unsupported option: {0}")]
    Unsupported(String),
}

type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Time-separable load vector: cached spatial vector times a scalar factor,
/// with an analytic (or finite-difference) time derivative of the factor.
#[derive(Clone)]
pub struct TimeLoad {
    spatial: Arc<Vec<f64>>,
    factor: TimeFn,
    factor_dot: TimeFn,
}

impl std::fmt::Debug for TimeLoad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TimeLoad(dim = {})", self.spatial.len())
    }
}

impl TimeLoad {
    pub fn zero(dim: usize) -> Self {
        TimeLoad {
            spatial: Arc::new(vec![0.0; dim]),
            factor: Arc::new(|_| 0.0),
            factor_dot: Arc::new(|_| 0.0),
        }
    }

    pub fn constant(spatial: Vec<f64>) -> Self {
        TimeLoad {
            spatial: Arc::new(spatial),
            factor: Arc::new(|_| 1.0),
            factor_dot: Arc::new(|_| 0.0),
        }
    }

    pub fn separable(
        spatial: Vec<f64>,
        factor: impl Fn(f64) -> f64 + Send + Sync + 'static,
        factor_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TimeLoad {
            spatial: Arc::new(spatial),
            factor: Arc::new(factor),
            factor_dot: Arc::new(factor_dot),
        }
    }

    /// Separable load without an analytic derivative: the factor derivative
    /// falls back to a central difference with step 1e-6 * max(1, t).
    pub fn separable_numeric(
        spatial: Vec<f64>,
        factor: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let factor = Arc::new(factor);
        let f2 = factor.clone();
        TimeLoad {
            spatial: Arc::new(spatial),
            factor,
            factor_dot: Arc::new(move |t| {
                let h = 1e-6 * t.abs().max(1.0);
                (f2(t + h) - f2(t - h)) / (2.0 * h)
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let s = (self.factor)(t);
        self.spatial.iter().map(|v| v * s).collect()
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        let s = (self.factor_dot)(t);
        self.spatial.iter().map(|v| v * s).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        TimeLoad {
            spatial: Arc::new(self.spatial.iter().map(|v| v * s).collect()),
            factor: self.factor.clone(),
            factor_dot: self.factor_dot.clone(),
        }
    }
}

/// FEM context kept alongside a two-field system for evaluation and studies.
#[derive(Debug, Clone)]
pub struct TwoFieldSpace {
    pub mesh: TriMesh,
    pub dof_u: DofMap,
    pub dof_p: DofMap,
}

#[derive(Debug, Clone)]
pub struct TwoFieldSystem {
    pub k_a: SparseMatrix,
    pub k_b: SparseMatrix,
    pub m_c: SparseMatrix,
    /// Rows indexed by pressure dofs, columns by displacement dofs.
    pub d: SparseMatrix,
    pub f: TimeLoad,
    pub g: TimeLoad,
    pub u0: Vec<f64>,
    pub p0: Vec<f64>,
    pub params: PoroParams,
    pub space: Option<TwoFieldSpace>,
}

pub const CONSISTENCY_TOL: f64 = 1e-8;

impl TwoFieldSystem {
    /// Builds a system with u0 solved from the elasticity equation at t = 0
    /// and asserts the consistency invariant.
    pub fn with_consistent_u0(
        k_a: SparseMatrix,
        k_b: SparseMatrix,
        m_c: SparseMatrix,
        d: SparseMatrix,
        f: TimeLoad,
        g: TimeLoad,
        p0: Vec<f64>,
        params: PoroParams,
        space: Option<TwoFieldSpace>,
    ) -> Result<Self, ModelError> {
        let mut rhs = f.eval(0.0);
        let dtp = d.matvec_transpose(&p0);
        for (r, v) in rhs.iter_mut().zip(&dtp) {
            *r += v;
        }
        let u0 = solve_spd(&k_a, &rhs, SolveMode::Direct, DEFAULT_TOL)?.solution;
        let sys = TwoFieldSystem {
            k_a,
            k_b,
            m_c,
            d,
            f,
            g,
            u0,
            p0,
            params,
            space,
        };
        sys.check_consistency()?;
        Ok(sys)
    }

    pub fn check_consistency(&self) -> Result<(), ModelError> {
        let mut r = self.k_a.matvec(&self.u0);
        let f0 = self.f.eval(0.0);
        let dtp = self.d.matvec_transpose(&self.p0);
        for i in 0..r.len() {
            r[i] -= f0[i] + dtp[i];
        }
        let scale = 1.0 + norm2(&f0) + norm2(&dtp);
        let residual = norm2(&r) / scale;
        if residual > CONSISTENCY_TOL {
            return Err(ModelError::Inconsistent {
                residual,
                tol: CONSISTENCY_TOL,
            });
        }
        Ok(())
    }

    pub fn n_u(&self) -> usize {
        self.k_a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.m_c.nrows()
    }
}

/// The finite-dimensional toy system: A tridiagonal 3x3, D = omega * [1 2 3],
/// C = B = 1, f = (1,1,1), g(t) = sin t.
#[derive(Debug, Clone)]
pub struct ToyTwoField {
    pub omega: f64,
    pub system: TwoFieldSystem,
}

pub fn build_toy(omega: f64) -> ToyTwoField {
    build_toy_with_p0(omega, 1.0)
}

pub fn build_toy_with_p0(omega: f64, p0: f64) -> ToyTwoField {
    let a = SparseMatrix::from_dense(&[
        vec![2.0, -1.0, 0.0],
        vec![-1.0, 2.0, -1.0],
        vec![0.0, -1.0, 2.0],
    ]);
    let k_b = SparseMatrix::identity(1);
    let m_c = SparseMatrix::identity(1);
    let d = SparseMatrix::from_dense(&[vec![omega, 2.0 * omega, 3.0 * omega]]);
    let f = TimeLoad::constant(vec![1.0, 1.0, 1.0]);
    let g = TimeLoad::separable(vec![1.0], f64::sin, f64::cos);
    let params = PoroParams {
        lambda: 0.0,
        mu: 1.0,
        kappa_over_nu: vec![1.0],
        inv_m: 1.0,
        alpha: vec![1.0],
        beta: vec![vec![0.0]],
    };
    let system =
        TwoFieldSystem::with_consistent_u0(a, k_b, m_c, d, f, g, vec![p0], params, None)
            .expect("toy elasticity matrix is SPD");
    ToyTwoField { omega, system }
}

fn parse_time_factor(spec: &str, key: &str) -> Result<(f64, TimeFn, TimeFn), ModelError> {
    // Returns (spatial scale, factor, derivative); the spatial function is
    // uniform 1 for everything except "zero".
    if spec == "zero" {
        return Ok((0.0, Arc::new(|_| 0.0), Arc::new(|_| 0.0)));
    }
    if spec == "sin" {
        return Ok((1.0, Arc::new(f64::sin), Arc::new(f64::cos)));
    }
    if let Some(c) = spec.strip_prefix("const:") {
        let c: f64 = c.parse().map_err(|_| bad_value(key, spec))?;
        return Ok((c, Arc::new(|_| 1.0), Arc::new(|_| 0.0)));
    }
    if let Some(c) = spec.strip_prefix("exp:") {
        let c: f64 = c.parse().map_err(|_| bad_value(key, spec))?;
        return Ok((c, Arc::new(f64::exp), Arc::new(f64::exp)));
    }
    Err(ModelError::Unsupported(format!(
        "load '{spec}' for {key} (expected zero | sin | const:<v> | exp:<scale>)"
    )))
}

fn bad_value(key: &str, got: &str) -> ModelError {
    ModelError::Config(ConfigError::BadValue {
        key: key.to_string(),
        expected: "a number",
        got: got.to_string(),
    })
}

fn parse_initial(spec: &str, key: &str) -> Result<Box<dyn Fn([f64; 2]) -> f64>, ModelError> {
    if let Some(c) = spec.strip_prefix("const:") {
        let c: f64 = c.parse().map_err(|_| bad_value(key, spec))?;
        return Ok(Box::new(move |_| c));
    }
    if let Some(s) = spec.strip_prefix("bubble:") {
        let s: f64 = s.parse().map_err(|_| bad_value(key, spec))?;
        return Ok(Box::new(move |p| {
            s * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])
        }));
    }
    if spec == "bump" {
        // Quadratic peak at (0.75, 0.75) blending continuously into the
        // background level 650 at radius 1/16.
        return Ok(Box::new(|p| {
            let r2 = (p[0] - 0.75).powi(2) + (p[1] - 0.75).powi(2);
            if r2 <= 1.0 / 256.0 {
                13300.0 - 3238400.0 * r2
            } else {
                650.0
            }
        }));
    }
    if spec == "zero" {
        return Ok(Box::new(|_| 0.0));
    }
    Err(ModelError::Unsupported(format!(
        "initial value '{spec}' for {key} (expected zero | const:<v> | bubble:<scale> | bump)"
    )))
}

pub fn build_mesh(config: &Config) -> Result<TriMesh, ModelError> {
    let n = config.get_usize("mesh.n")?;
    let mesh = meshkit::unit_square_mesh(n)?;
    match config.get_str_or("mesh.domain", "square") {
        "square" => Ok(mesh),
        "punched" => {
            let cx = config.get_f64("mesh.hole_x")?;
            let cy = config.get_f64("mesh.hole_y")?;
            let r = config.get_f64("mesh.hole_r")?;
            Ok(meshkit::punch_hole(&mesh, [cx, cy], r)?)
        }
        other => Err(ModelError::Unsupported(format!(
            "mesh.domain '{other}' (expected square | punched)"
        ))),
    }
}

fn two_field_params(config: &Config) -> Result<PoroParams, ModelError> {
    let kappa = config.get_f64_list("params.kappa_over_nu")?;
    let alpha = config.get_f64_list("params.alpha")?;
    let m = kappa.len();
    let params = PoroParams {
        lambda: config.get_f64("params.lambda")?,
        mu: config.get_f64("params.mu")?,
        kappa_over_nu: kappa,
        inv_m: config.get_f64("params.inv_m")?,
        alpha,
        beta: config.beta_table(m)?,
    };
    params.validate()?;
    Ok(params)
}

pub fn build_two_field(config: &Config) -> Result<TwoFieldSystem, ModelError> {
    let mesh = build_mesh(config)?;
    let params = two_field_params(config)?;
    let dof_u = DofMap::p1_vector(&mesh, true);
    let dof_p = DofMap::p1_scalar(&mesh, true);
    let forms = femkit::assemble_p1_forms(&mesh, &dof_u, &dof_p, &params)?;

    let f_spec = config.get_str_or("loads.f", "zero");
    if f_spec != "zero" {
        return Err(ModelError::Unsupported(format!(
            "loads.f '{f_spec}' (only 'zero' is supported for FEM models)"
        )));
    }
    let f = TimeLoad::zero(dof_u.n_free());

    let (g_scale, g_factor, g_dot) = parse_time_factor(config.get_str("loads.g")?, "loads.g")?;
    let g_spatial = femkit::assemble_load_p1_scalar(&mesh, &dof_p, |_| g_scale);
    let g = TimeLoad {
        spatial: Arc::new(g_spatial),
        factor: g_factor,
        factor_dot: g_dot,
    };

    let p0_fn = parse_initial(config.get_str("initial.p0")?, "initial.p0")?;
    let p0 = femkit::interpolate_p1_scalar(&mesh, &dof_p, p0_fn);

    TwoFieldSystem::with_consistent_u0(
        forms.k_a,
        forms.k_b,
        forms.m_c,
        forms.d,
        f,
        g,
        p0,
        params,
        Some(TwoFieldSpace {
            mesh,
            dof_u,
            dof_p,
        }),
    )
}

/// FEM context for a network system.
#[derive(Debug, Clone)]
pub struct NetworkSpace {
    pub mesh: TriMesh,
    pub topo: EdgeTopology,
    pub dof_u: DofMap,
    pub dof_y: DofMap,
    pub dof_p: DofMap,
}

#[derive(Debug, Clone)]
pub struct NetworkSystem {
    pub m: usize,
    pub k_a: SparseMatrix,
    /// RT0 mass matrix, shared by all networks.
    pub m_y: SparseMatrix,
    /// P0 pressure mass scaled by 1/M.
    pub m_c: SparseMatrix,
    /// Unscaled P0 mass for the exchange terms.
    pub m_q: SparseMatrix,
    /// Per-network divergence coupling onto P0 (alpha_i weighted).
    pub d: Vec<SparseMatrix>,
    /// Per-network sqrt(kappa_i/nu_i)-scaled flux divergence pairing.
    pub d_hat: Vec<SparseMatrix>,
    pub beta: Vec<Vec<f64>>,
    pub f: TimeLoad,
    pub g: Vec<TimeLoad>,
    pub u0: Vec<f64>,
    pub y0: Vec<Vec<f64>>,
    pub p0: Vec<Vec<f64>>,
    pub params: PoroParams,
    pub space: NetworkSpace,
}

impl NetworkSystem {
    pub fn n_u(&self) -> usize {
        self.k_a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.m_c.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.m_y.nrows()
    }
}

pub fn build_network(config: &Config) -> Result<NetworkSystem, ModelError> {
    let mesh = build_mesh(config)?;
    let params = two_field_params(config)?;
    let m = params.m();

    // Displacement clamped on the outer square only; the flux space has zero
    // normal trace on the whole boundary (hole included).
    let on_outer = |v: usize| {
        let p = mesh.vertices[v];
        let eps = 1e-12;
        p[0] < eps || p[0] > 1.0 - eps || p[1] < eps || p[1] > 1.0 - eps
    };
    let dof_u = DofMap::p1_vector_where(&mesh, on_outer);
    let topo = meshkit::edge_topology(&mesh);
    let dof_y = DofMap::rt0(&topo, true);
    let dof_p = DofMap::p0(&mesh);

    // K_a via the P1 assembly path (the scalar forms there are discarded).
    let p1 = femkit::assemble_p1_forms(&mesh, &dof_u, &DofMap::p1_scalar(&mesh, true), &params)?;
    let k_a = p1.k_a;
    let m_c = femkit::assemble_p0_mass(&mesh, &dof_p, params.inv_m)?;
    let m_q = femkit::assemble_p0_mass(&mesh, &dof_p, 1.0)?;

    let mut d = Vec::with_capacity(m);
    let mut d_hat = Vec::with_capacity(m);
    let mut m_y = None;
    for i in 0..m {
        d.push(femkit::assemble_div_p0(&mesh, &dof_u, &dof_p, params.alpha[i])?);
        let rt0 = femkit::assemble_rt0_forms(&mesh, &topo, &dof_y, &dof_p, params.kappa_over_nu[i])?;
        d_hat.push(rt0.d_hat);
        m_y.get_or_insert(rt0.m_y);
    }
    let m_y = m_y.expect("m >= 1 enforced by params validation");

    let f_spec = config.get_str_or("loads.f", "zero");
    if f_spec != "zero" {
        return Err(ModelError::Unsupported(format!(
            "loads.f '{f_spec}' (only 'zero' is supported for FEM models)"
        )));
    }
    let f = TimeLoad::zero(dof_u.n_free());

    let g_specs = config.get_str_list("loads.g")?;
    if g_specs.len() != m {
        return Err(ModelError::Unsupported(format!(
            "loads.g lists {} entries, model has {m} networks",
            g_specs.len()
        )));
    }
    let mut g = Vec::with_capacity(m);
    for spec in &g_specs {
        let (scale, factor, dot) = parse_time_factor(spec, "loads.g")?;
        let spatial = femkit::assemble_load_p0(&mesh, &dof_p, |_| scale);
        g.push(TimeLoad {
            spatial: Arc::new(spatial),
            factor,
            factor_dot: dot,
        });
    }

    let p_specs = config.get_str_list("initial.p")?;
    if p_specs.len() != m {
        return Err(ModelError::Unsupported(format!(
            "initial.p lists {} entries, model has {m} networks",
            p_specs.len()
        )));
    }
    let mut p0 = Vec::with_capacity(m);
    for spec in &p_specs {
        let f0 = parse_initial(spec, "initial.p")?;
        p0.push(femkit::interpolate_p0(&mesh, &dof_p, f0));
    }

    // Consistent u0: K_a u0 = f(0) + sum_i D_i^T p_i0.
    let mut rhs = f.eval(0.0);
    for i in 0..m {
        let dtp = d[i].matvec_transpose(&p0[i]);
        for (r, v) in rhs.iter_mut().zip(&dtp) {
            *r += v;
        }
    }
    let u0 = solve_spd(&k_a, &rhs, SolveMode::Direct, DEFAULT_TOL)?.solution;

    // y_i0 from the flux equation at t = 0.
    let chol_my = CholeskyFactor::factor(&m_y)?;
    let y0: Vec<Vec<f64>> = (0..m)
        .map(|i| chol_my.solve(&d_hat[i].matvec_transpose(&p0[i])))
        .collect();

    let sys = NetworkSystem {
        m,
        k_a,
        m_y,
        m_c,
        m_q,
        d,
        d_hat,
        beta: params.beta.clone(),
        f,
        g,
        u0,
        y0,
        p0,
        params,
        space: NetworkSpace {
            mesh,
            topo,
            dof_u,
            dof_y,
            dof_p,
        },
    };
    check_network_consistency(&sys)?;
    Ok(sys)
}

fn check_network_consistency(sys: &NetworkSystem) -> Result<(), ModelError> {
    let mut r = sys.k_a.matvec(&sys.u0);
    let f0 = sys.f.eval(0.0);
    let mut scale = 1.0 + norm2(&f0);
    for i in 0..sys.m {
        let dtp = sys.d[i].matvec_transpose(&sys.p0[i]);
        scale += norm2(&dtp);
        for k in 0..r.len() {
            r[k] -= dtp[k];
        }
    }
    for (rk, fk) in r.iter_mut().zip(&f0) {
        *rk -= fk;
    }
    let residual = norm2(&r) / scale;
    if residual > CONSISTENCY_TOL {
        return Err(ModelError::Inconsistent {
            residual,
            tol: CONSISTENCY_TOL,
        });
    }
    for i in 0..sys.m {
        let mut ry = sys.m_y.matvec(&sys.y0[i]);
        let rhs = sys.d_hat[i].matvec_transpose(&sys.p0[i]);
        for k in 0..ry.len() {
            ry[k] -= rhs[k];
        }
        let rel = norm2(&ry) / (1.0 + norm2(&rhs));
        if rel > CONSISTENCY_TOL {
            return Err(ModelError::Inconsistent {
                residual: rel,
                tol: CONSISTENCY_TOL,
            });
        }
    }
    Ok(())
}

/// Builds whichever model the config describes; the toy path reads toy.omega.
pub fn model_kind(config: &Config) -> Result<ModelKind, ModelError> {
    Ok(config.kind()?)
}

#[derive(Debug, Clone)]
pub struct CouplingReport {
    /// Spectral radius of M_c^{-1} D K_a^{-1} D^T.
    pub rho: f64,
    /// Smallest eigenvalue of K_a (dense toy only).
    pub c_a: Option<f64>,
    /// Smallest eigenvalue of M_c (dense toy only).
    pub c_c: Option<f64>,
    /// Coupling norm sqrt(rho(D D^T)) (dense toy only).
    pub c_d: Option<f64>,
    /// C_d^2 <= c_a * c_c, when the constants are available.
    pub weak_coupling: Option<bool>,
    /// rho < 1, the operative necessary condition for asymptotic stability.
    pub stable: bool,
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 200_000;

/// Spectral radius of the coupling operator x -> M_c^{-1} D K_a^{-1} D^T x.
pub fn coupling_rho(
    k_a: &SparseMatrix,
    m_c: &SparseMatrix,
    d: &SparseMatrix,
) -> Result<f64, SolverError> {
    let chol_ka = CholeskyFactor::factor(k_a)?;
    let chol_mc = CholeskyFactor::factor(m_c)?;
    let dim = m_c.nrows();
    spectral_radius(
        |x, y| {
            let w = chol_ka.solve(&d.matvec_transpose(x));
            let z = chol_mc.solve(&d.matvec(&w));
            y.copy_from_slice(&z);
        },
        dim,
        POWER_TOL,
        POWER_MAX_ITER,
    )
}

fn smallest_eigenvalue(a: &SparseMatrix) -> Result<f64, SolverError> {
    // Inverse power iteration: 1 / rho(A^{-1}).
    let chol = CholeskyFactor::factor(a)?;
    let rho_inv = spectral_radius(
        |x, y| y.copy_from_slice(&chol.solve(x)),
        a.nrows(),
        POWER_TOL,
        POWER_MAX_ITER,
    )?;
    Ok(1.0 / rho_inv)
}

/// Coupling constants and verdicts; `full_constants` additionally estimates
/// c_a, c_c, C_d (meant for the small dense toy, not FEM systems).
pub fn coupling_constants(
    sys: &TwoFieldSystem,
    full_constants: bool,
) -> Result<CouplingReport, ModelError> {
    let rho = coupling_rho(&sys.k_a, &sys.m_c, &sys.d)?;
    let (c_a, c_c, c_d, weak) = if full_constants {
        let c_a = smallest_eigenvalue(&sys.k_a)?;
        let c_c = smallest_eigenvalue(&sys.m_c)?;
        let c_d = spectral_radius(
            |x, y| y.copy_from_slice(&sys.d.matvec(&sys.d.matvec_transpose(x))),
            sys.n_p(),
            POWER_TOL,
            POWER_MAX_ITER,
        )?
        .sqrt();
        let weak = c_d * c_d <= c_a * c_c;
        (Some(c_a), Some(c_c), Some(c_d), Some(weak))
    } else {
        (None, None, None, None)
    };
    Ok(CouplingReport {
        rho,
        c_a,
        c_c,
        c_d,
        weak_coupling: weak,
        stable: rho < 1.0,
    })
}

/// The two analytic omega thresholds of the toy, computed from the
/// implemented constant and spectral-radius paths at omega = 1:
/// weak-coupling bound sqrt(c_a c_c / rho(D D^T)) and stability bound
/// 1 / sqrt(rho(M_c^{-1} D K_a^{-1} D^T)).
pub fn toy_omega_bounds() -> Result<(f64, f64), ModelError> {
    let unit = build_toy(1.0);
    let report = coupling_constants(&unit.system, true)?;
    let c_a = report.c_a.unwrap();
    let c_c = report.c_c.unwrap();
    let c_d = report.c_d.unwrap();
    let weak_bound = (c_a * c_c).sqrt() / c_d;
    let stability_bound = 1.0 / report.rho.sqrt();
    Ok((weak_bound, stability_bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_matrices_and_consistency() {
        let toy = build_toy(0.1);
        let s = &toy.system;
        assert_eq!(s.k_a.get(0, 0), 2.0);
        assert_eq!(s.k_a.get(0, 1), -1.0);
        assert!((s.d.get(0, 2) - 0.3).abs() < 1e-15);
        s.check_consistency().unwrap();
        // omega = 0 decouples fully.
        let dec = build_toy(0.0);
        assert_eq!(dec.system.d.nnz(), 0);
    }

    #[test]
    fn toy_rho_closed_form() {
        for omega in [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3] {
            let toy = build_toy(omega);
            let rho = coupling_rho(&toy.system.k_a, &toy.system.m_c, &toy.system.d).unwrap();
            let expected = 21.0 * omega * omega;
            assert!(
                (rho - expected).abs() < 1e-10,
                "omega {omega}: rho {rho} vs {expected}"
            );
        }
    }

    #[test]
    fn toy_constants_match_closed_forms() {
        let report = coupling_constants(&build_toy(1.0).system, true).unwrap();
        assert!((report.c_a.unwrap() - (2.0 - 2f64.sqrt())).abs() < 1e-8);
        assert!((report.c_c.unwrap() - 1.0).abs() < 1e-10);
        assert!((report.c_d.unwrap() - 14f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn toy_omega_bounds_match_closed_forms() {
        let (weak, stab) = toy_omega_bounds().unwrap();
        assert!((weak - 0.2046).abs() < 5e-5, "weak bound {weak}");
        assert!((stab - 0.2182).abs() < 5e-5, "stability bound {stab}");
    }

    #[test]
    fn toy_stability_verdicts() {
        let r = coupling_constants(&build_toy(0.2).system, false).unwrap();
        assert!((r.rho - 0.84).abs() < 1e-9);
        assert!(r.stable);
        let r = coupling_constants(&build_toy(0.25).system, false).unwrap();
        assert!((r.rho - 1.3125).abs() < 1e-9);
        assert!(!r.stable);
    }

    #[test]
    fn two_field_build_and_dof_counts() {
        let mut config = Config::preset("poro-5.1").unwrap();
        config.set("mesh.n=8").unwrap();
        let sys = build_two_field(&config).unwrap();
        assert_eq!(sys.n_p(), 49); // (n-1)^2 interior vertices
        sys.check_consistency().unwrap();

        config.set("mesh.n=4").unwrap();
        let sys4 = build_two_field(&config).unwrap();
        assert_eq!(sys4.n_p(), 9);
    }

    #[test]
    fn two_field_alpha_zero_gives_zero_coupling() {
        let mut config = Config::preset("poro-5.1").unwrap();
        config.set("mesh.n=4").unwrap();
        config.set("params.alpha=0").unwrap();
        let sys = build_two_field(&config).unwrap();
        assert_eq!(sys.d.nnz(), 0);
    }

    #[test]
    fn two_field_invalid_params_rejected() {
        let mut config = Config::preset("poro-5.1").unwrap();
        config.set("params.mu=-1").unwrap();
        assert!(matches!(
            build_two_field(&config),
            Err(ModelError::Fem(FemError::InvalidParams(_)))
        ));
    }

    #[test]
    fn initial_u0_scales_linearly_with_data() {
        let mut config = Config::preset("poro-5.1").unwrap();
        config.set("mesh.n=4").unwrap();
        let sys1 = build_two_field(&config).unwrap();
        config.set("initial.p0=bubble:6000").unwrap();
        let sys2 = build_two_field(&config).unwrap();
        for (a, b) in sys1.u0.iter().zip(&sys2.u0) {
            assert!((2.0 * a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn network_default_build_consistent() {
        let mut config = Config::preset("network-5.2").unwrap();
        config.set("mesh.n=8").unwrap();
        let sys = build_network(&config).unwrap();
        assert_eq!(sys.m, 4);
        check_network_consistency(&sys).unwrap();
        // Exchange scale far below Assumption-style bound 6 beta (m-1) <= c_c.
        let beta_max = sys
            .beta
            .iter()
            .flatten()
            .fold(0.0f64, |m, &b| m.max(b));
        assert!(6.0 * beta_max * 3.0 <= sys.params.inv_m);
    }

    #[test]
    fn network_m2_square_build() {
        let config = Config::preset("network-m2").unwrap();
        let sys = build_network(&config).unwrap();
        assert_eq!(sys.m, 2);
        assert_eq!(sys.n_p(), 2 * 8 * 8);
        check_network_consistency(&sys).unwrap();
    }

    #[test]
    fn bump_initial_blends_continuously() {
        let bump = parse_initial("bump", "initial.p").unwrap();
        assert!((bump([0.75, 0.75]) - 13300.0).abs() < 1e-9);
        let r = 1.0 / 16.0;
        assert!((bump([0.75 + r, 0.75]) - 650.0).abs() < 1e-9);
        assert!((bump([0.2, 0.2]) - 650.0).abs() < 1e-9);
    }

    #[test]
    fn time_load_separable_and_numeric_derivative() {
        let g = TimeLoad::separable(vec![2.0], f64::exp, f64::exp);
        assert!((g.eval(1.0)[0] - 2.0 * 1f64.exp()).abs() < 1e-12);
        assert!((g.derivative(1.0)[0] - 2.0 * 1f64.exp()).abs() < 1e-12);
        let gn = TimeLoad::separable_numeric(vec![2.0], f64::exp);
        assert!((gn.derivative(1.0)[0] - 2.0 * 1f64.exp()).abs() < 1e-4);
    }
}
