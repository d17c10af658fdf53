//! Experiment harness: convergence ladders with cross-mesh error norms,
//! the coupling-parameter sweep, runtime comparisons, and EOC utilities.
//!
//! Cross-mesh errors are measured by quadrature on the reference mesh:
//! the study and reference fields are both evaluated at interior quadrature
//! points of every reference cell (the meshes are nested, so the coarse
//! fields are smooth there) and the energy-norm integrands summed with the
//! matching weights.

use crate::config::{Config, ConfigError};
use crate::femkit::{cell_gradients, DofMap, FemError};
use crate::meshkit::{MeshError, TriMesh};
use crate::models::{
    build_network, build_toy, build_two_field, coupling_rho, toy_omega_bounds, ModelError,
    NetworkSystem, TwoFieldSystem,
};
use crate::sparsekit::{energy_norm, SolverError};
use crate::steppers::{
    integrate_network, integrate_two_field, CapturePolicy, Scheme, State, StepError, Trajectory,
};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("bad ladder: {0}")]
    BadLadder(String),
    #[error("EOC input: {0}")]
    BadEoc(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("norm kind not defined for this system")]
    UnsupportedNorm,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Runs `f` over `items` on a small worker pool; results keep item order
/// regardless of scheduling. `threads = 1` degenerates to a sequential loop.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(items.len()));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                done.lock().unwrap().push((i, r));
            });
        }
    });
    let mut out = done.into_inner().unwrap();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

// ---------------------------------------------------------------------------
// Energy norms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Elasticity form (K_a).
    DisplacementA,
    /// Pressure diffusion form (K_b); two-field only.
    PressureB,
    /// Pressure mass form (M_c).
    PressureC,
    /// Flux mass form (M_y); network only.
    FluxY,
}

pub fn two_field_norm(sys: &TwoFieldSystem, x: &[f64], kind: NormKind) -> Result<f64, StudyError> {
    let m = match kind {
        NormKind::DisplacementA => &sys.k_a,
        NormKind::PressureB => &sys.k_b,
        NormKind::PressureC => &sys.m_c,
        NormKind::FluxY => return Err(StudyError::UnsupportedNorm),
    };
    if x.len() != m.nrows() {
        return Err(StudyError::Mismatch {
            expected: m.nrows(),
            got: x.len(),
        });
    }
    Ok(energy_norm(m, x))
}

pub fn network_norm(sys: &NetworkSystem, x: &[f64], kind: NormKind) -> Result<f64, StudyError> {
    let m = match kind {
        NormKind::DisplacementA => &sys.k_a,
        NormKind::PressureC => &sys.m_c,
        NormKind::FluxY => &sys.m_y,
        NormKind::PressureB => return Err(StudyError::UnsupportedNorm),
    };
    if x.len() != m.nrows() {
        return Err(StudyError::Mismatch {
            expected: m.nrows(),
            got: x.len(),
        });
    }
    Ok(energy_norm(m, x))
}

// ---------------------------------------------------------------------------
// EOC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EocTable {
    /// Slope between each consecutive (param, error) pair.
    pub pairwise: Vec<f64>,
    /// Least-squares slope of log error against log parameter.
    pub least_squares: f64,
}

pub fn compute_eoc(errors: &[f64], params: &[f64]) -> Result<EocTable, StudyError> {
    if errors.len() != params.len() || errors.len() < 2 {
        return Err(StudyError::BadEoc(
            "need at least two matching error/parameter pairs".into(),
        ));
    }
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(StudyError::BadEoc(
            "non-positive error (exact reproduction or bad data)".into(),
        ));
    }
    if params.windows(2).any(|w| w[1] >= w[0]) {
        return Err(StudyError::BadEoc("parameters must strictly decrease".into()));
    }
    let pairwise = errors
        .windows(2)
        .zip(params.windows(2))
        .map(|(e, p)| (e[0] / e[1]).ln() / (p[0] / p[1]).ln())
        .collect();
    let xs: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let least_squares = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(EocTable {
        pairwise,
        least_squares,
    })
}

/// EOC restricted to ladder points that sit clearly above the error floor:
/// points with error below `floor_factor` times the smallest error are
/// dropped (their slope measures reference contamination, not the rate).
/// Falls back to the two largest-parameter points when fewer than two
/// survive.
pub fn floor_filtered_eoc(
    errors: &[f64],
    params: &[f64],
    floor_factor: f64,
) -> Result<EocTable, StudyError> {
    if errors.len() != params.len() || errors.len() < 2 {
        return Err(StudyError::BadEoc(
            "need at least two matching error/parameter pairs".into(),
        ));
    }
    let min = errors.iter().fold(f64::INFINITY, |m, &e| m.min(e));
    let keep: Vec<(f64, f64)> = errors
        .iter()
        .zip(params)
        .filter(|(&e, _)| e >= floor_factor * min)
        .map(|(&e, &p)| (e, p))
        .collect();
    let (es, ps): (Vec<f64>, Vec<f64>) = if keep.len() >= 2 {
        keep.into_iter().unzip()
    } else {
        (errors[..2].to_vec(), params[..2].to_vec())
    };
    compute_eoc(&es, &ps)
}

// ---------------------------------------------------------------------------
// Cross-mesh evaluation plans
// ---------------------------------------------------------------------------

/// Precomputed evaluation data for a fixed point set on one mesh: the cell
/// containing each point, its barycentric weights, vertex ids, and P1 shape
/// gradients. Makes repeated field evaluation a handful of flops per point.
struct EvalPlan {
    cells: Vec<usize>,
    bary: Vec<[f64; 3]>,
    verts: Vec<[usize; 3]>,
    grads: Vec<[[f64; 2]; 3]>,
}

impl EvalPlan {
    fn build(mesh: &TriMesh, points: &[[f64; 2]]) -> Result<EvalPlan, MeshError> {
        let mut cells = Vec::with_capacity(points.len());
        let mut bary = Vec::with_capacity(points.len());
        let mut verts = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for &p in points {
            let cell = mesh.locate_cell(p)?;
            cells.push(cell);
            bary.push(mesh.barycentric(cell, p));
            verts.push(mesh.cells[cell]);
            grads.push(cell_gradients(mesh, cell).0);
        }
        Ok(EvalPlan {
            cells,
            bary,
            verts,
            grads,
        })
    }

    fn at(dof: &DofMap, vals: &[f64], entity: Option<usize>) -> f64 {
        entity.and_then(|e| dof.dof(e)).map_or(0.0, |d| vals[d])
    }

    fn p1_scalar_grads(&self, dof: &DofMap, vals: &[f64]) -> Vec<[f64; 2]> {
        self.verts
            .iter()
            .zip(&self.grads)
            .map(|(vs, gs)| {
                let mut g = [0.0; 2];
                for k in 0..3 {
                    let v = dof.dof(vs[k]).map_or(0.0, |d| vals[d]);
                    g[0] += v * gs[k][0];
                    g[1] += v * gs[k][1];
                }
                g
            })
            .collect()
    }

    fn p1_scalar_values(&self, dof: &DofMap, vals: &[f64]) -> Vec<f64> {
        self.verts
            .iter()
            .zip(&self.bary)
            .map(|(vs, w)| {
                (0..3)
                    .map(|k| w[k] * dof.dof(vs[k]).map_or(0.0, |d| vals[d]))
                    .sum()
            })
            .collect()
    }

    fn p1_vector_grads(&self, dof: &DofMap, vals: &[f64]) -> Vec<[[f64; 2]; 2]> {
        self.verts
            .iter()
            .zip(&self.grads)
            .map(|(vs, gs)| {
                let mut g = [[0.0; 2]; 2];
                for k in 0..3 {
                    for c in 0..2 {
                        let v = dof.vector_dof(vs[k], c).map_or(0.0, |d| vals[d]);
                        g[c][0] += v * gs[k][0];
                        g[c][1] += v * gs[k][1];
                    }
                }
                g
            })
            .collect()
    }

    fn p0_values(&self, dof: &DofMap, vals: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&c| Self::at(dof, vals, Some(c)))
            .collect()
    }
}

/// All interior quadrature points of a mesh, with weights summing to its area.
fn quadrature(mesh: &TriMesh) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut points = Vec::with_capacity(3 * mesh.cells.len());
    let mut weights = Vec::with_capacity(3 * mesh.cells.len());
    for cell in 0..mesh.cells.len() {
        let w = mesh.cell_area(cell) / 3.0;
        for p in crate::femkit::interior_quad_points(mesh, cell) {
            points.push(p);
            weights.push(w);
        }
    }
    (points, weights)
}

/// Strain-energy density of a displacement gradient:
/// 2 mu eps:eps + lambda (div)^2.
fn elastic_density(g: [[f64; 2]; 2], lambda: f64, mu: f64) -> f64 {
    let (exx, eyy) = (g[0][0], g[1][1]);
    let exy = 0.5 * (g[0][1] + g[1][0]);
    (2.0 * mu + lambda) * (exx * exx + eyy * eyy) + 2.0 * lambda * exx * eyy
        + 4.0 * mu * exy * exy
}

fn weighted_sum(weights: &[f64], density: impl Fn(usize) -> f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * density(i))
        .sum()
}

// ---------------------------------------------------------------------------
// Two-field convergence study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ErrorRecord {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub scheme: Scheme,
    /// Relative a-norm displacement error at T.
    pub err_u_a: f64,
    /// Relative c-norm pressure error at T.
    pub err_p_c: f64,
    /// Relative accumulated sqrt(sum tau ||e||_b^2) pressure error.
    pub err_p_b_accum: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceSpec {
    pub n: usize,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub records: Vec<ErrorRecord>,
    /// Semi-explicit pressure c-norm error against tau on the finest mesh.
    pub eoc_p_c_vs_tau: EocTable,
    /// Semi-explicit displacement a-norm error against h at the finest tau.
    pub eoc_u_a_vs_h: EocTable,
    /// Largest relative gap between the two schemes over all ladder points.
    pub max_scheme_gap: f64,
    /// Reference-solution norms at T used as denominators (a, c, b).
    pub reference_norms: (f64, f64, f64),
}

fn validate_ladders(
    ns: &[usize],
    taus: &[f64],
    t_final: f64,
    reference: ReferenceSpec,
) -> Result<(f64, usize), StudyError> {
    if ns.is_empty() || taus.is_empty() {
        return Err(StudyError::BadLadder("empty ladder".into()));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StudyError::BadLadder("mesh ladder must increase".into()));
    }
    if ns.iter().any(|&n| reference.n % n != 0) {
        return Err(StudyError::BadLadder(
            "reference mesh must be a refinement of every study mesh".into(),
        ));
    }
    if taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(StudyError::BadLadder("tau ladder must decrease".into()));
    }
    let min_tau = *taus.last().unwrap();
    for &tau in taus {
        let m = tau / min_tau;
        if (m - m.round()).abs() > 1e-9 || (t_final / tau).fract().abs() > 1e-9 {
            return Err(StudyError::BadLadder(
                "every tau must divide T and be a multiple of the smallest tau".into(),
            ));
        }
    }
    let stride = min_tau / reference.tau;
    if (stride - stride.round()).abs() > 1e-9 || stride < 1.0 {
        return Err(StudyError::BadLadder(
            "reference tau must divide the smallest study tau".into(),
        ));
    }
    Ok((min_tau, stride.round() as usize))
}

pub fn convergence_study(
    base: &Config,
    ns: &[usize],
    taus: &[f64],
    t_final: f64,
    reference: ReferenceSpec,
    threads: usize,
) -> Result<ConvergenceStudy, StudyError> {
    let (min_tau, stride) = validate_ladders(ns, taus, t_final, reference)?;

    let mut ref_cfg = base.clone();
    ref_cfg.set(&format!("mesh.n={}", reference.n))?;
    let ref_sys = build_two_field(&ref_cfg)?;
    let ref_traj = integrate_two_field(
        &ref_sys,
        Scheme::Implicit,
        reference.tau,
        t_final,
        CapturePolicy::EveryKth(stride),
    )?;
    let ref_space = ref_sys.space.as_ref().expect("FEM build carries its space");
    let (points, weights) = quadrature(&ref_space.mesh);
    let ref_plan = EvalPlan::build(&ref_space.mesh, &points)?;

    let State::TwoField { u: u_ref_t, p: p_ref_t } = ref_traj.final_state() else {
        unreachable!("two-field reference")
    };
    let den_a = energy_norm(&ref_sys.k_a, u_ref_t);
    let den_c = energy_norm(&ref_sys.m_c, p_ref_t);
    let den_b = energy_norm(&ref_sys.k_b, p_ref_t);

    // Study systems are assembled once per mesh and shared across tasks.
    let mut levels = Vec::new();
    for &n in ns {
        let mut cfg = base.clone();
        cfg.set(&format!("mesh.n={n}"))?;
        let sys = build_two_field(&cfg)?;
        let plan = {
            let mesh = &sys.space.as_ref().expect("FEM build").mesh;
            EvalPlan::build(mesh, &points)?
        };
        let chol = crate::sparsekit::CholeskyFactor::factor(&sys.k_a)?;
        levels.push((n, sys, plan, chol));
    }

    let (lambda, mu) = (ref_sys.params.lambda, ref_sys.params.mu);
    let (inv_m, kappa) = (ref_sys.params.inv_m, ref_sys.params.kappa_over_nu[0]);

    let mut tasks = Vec::new();
    for (li, (n, _, _, _)) in levels.iter().enumerate() {
        for &tau in taus {
            for scheme in [Scheme::SemiExplicit, Scheme::Implicit] {
                tasks.push((li, *n, tau, scheme));
            }
        }
    }

    let run_one = |&(li, n, tau, scheme): &(usize, usize, f64, Scheme)| -> Result<ErrorRecord, StudyError> {
        let (_, sys, plan, chol_ka) = &levels[li];
        let traj = integrate_two_field(sys, scheme, tau, t_final, CapturePolicy::EveryStep)?;
        let space = sys.space.as_ref().expect("FEM build");
        let dof_u = &space.dof_u;
        let dof_p = &space.dof_p;
        let mult = (tau / min_tau).round() as usize;

        let ref_state = |study_step: usize| -> (&Vec<f64>, &Vec<f64>) {
            let State::TwoField { u, p } = &ref_traj.states[study_step * mult] else {
                unreachable!()
            };
            (u, p)
        };

        let State::TwoField { p: p_t, .. } = traj.final_state() else {
            unreachable!()
        };
        let (u_rt, p_rt) = ref_state(traj.step_count);

        // Displacement error uses the elasticity-consistent displacement at
        // T (recovered from the current pressure); the decoupled scheme's
        // iterate carries a one-step pressure lag that is not part of the
        // spatial/temporal error being measured here, and the implicit
        // iterate already satisfies the recovery identity exactly.
        let u_t = {
            let mut bu = sys.f.eval(t_final);
            let dtp = sys.d.matvec_transpose(p_t);
            for (b, v) in bu.iter_mut().zip(&dtp) {
                *b += v;
            }
            chol_ka.solve(&bu)
        };

        let gu = plan.p1_vector_grads(dof_u, &u_t);
        let gur = ref_plan.p1_vector_grads(&ref_space.dof_u, u_rt);
        let err_u_a = weighted_sum(&weights, |i| {
            let d = [
                [gur[i][0][0] - gu[i][0][0], gur[i][0][1] - gu[i][0][1]],
                [gur[i][1][0] - gu[i][1][0], gur[i][1][1] - gu[i][1][1]],
            ];
            elastic_density(d, lambda, mu)
        })
        .max(0.0)
        .sqrt()
            / den_a;

        let vp = plan.p1_scalar_values(dof_p, p_t);
        let vpr = ref_plan.p1_scalar_values(&ref_space.dof_p, p_rt);
        let err_p_c = weighted_sum(&weights, |i| {
            let d = vpr[i] - vp[i];
            inv_m * d * d
        })
        .max(0.0)
        .sqrt()
            / den_c;

        let mut accum = 0.0;
        for step in 1..=traj.step_count {
            let State::TwoField { p, .. } = &traj.states[step] else {
                unreachable!()
            };
            let (_, pr) = ref_state(step);
            let gp = plan.p1_scalar_grads(dof_p, p);
            let gpr = ref_plan.p1_scalar_grads(&ref_space.dof_p, pr);
            accum += tau
                * weighted_sum(&weights, |i| {
                    let dx = gpr[i][0] - gp[i][0];
                    let dy = gpr[i][1] - gp[i][1];
                    kappa * (dx * dx + dy * dy)
                });
        }
        let err_p_b_accum = accum.max(0.0).sqrt() / den_b;

        Ok(ErrorRecord {
            n,
            h: space.mesh.h,
            tau,
            scheme,
            err_u_a,
            err_p_c,
            err_p_b_accum,
            wall_time: traj.solve_time,
        })
    };

    let records: Vec<ErrorRecord> = parallel_map(&tasks, threads, run_one)
        .into_iter()
        .collect::<Result<_, _>>()?;

    let pick = |n: usize, tau: f64, scheme: Scheme| {
        records
            .iter()
            .find(|r| r.n == n && r.tau == tau && r.scheme == scheme)
            .expect("every ladder point was run")
    };

    let finest_n = *ns.last().unwrap();
    let finest_tau = *taus.last().unwrap();
    let tau_errs: Vec<f64> = taus
        .iter()
        .map(|&t| pick(finest_n, t, Scheme::SemiExplicit).err_p_c)
        .collect();
    let eoc_p_c_vs_tau = compute_eoc(&tau_errs, taus)?;

    let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let h_errs: Vec<f64> = ns
        .iter()
        .map(|&n| pick(n, finest_tau, Scheme::SemiExplicit).err_u_a)
        .collect();
    let eoc_u_a_vs_h = compute_eoc(&h_errs, &hs)?;

    let mut max_scheme_gap = 0.0f64;
    for &n in ns {
        for &tau in taus {
            let se = pick(n, tau, Scheme::SemiExplicit);
            let im = pick(n, tau, Scheme::Implicit);
            for (a, b) in [
                (se.err_u_a, im.err_u_a),
                (se.err_p_c, im.err_p_c),
                (se.err_p_b_accum, im.err_p_b_accum),
            ] {
                max_scheme_gap = max_scheme_gap.max((a - b).abs() / b.max(1e-300));
            }
        }
    }

    Ok(ConvergenceStudy {
        records,
        eoc_p_c_vs_tau,
        eoc_u_a_vs_h,
        max_scheme_gap,
        reference_norms: (den_a, den_c, den_b),
    })
}

// ---------------------------------------------------------------------------
// Network convergence study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NetworkErrorRecord {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub scheme: Scheme,
    /// Relative combined error sqrt(||e_u||_a^2 + sum_i ||e_pi||_c^2) at T.
    pub err_combined: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct NetworkConvergence {
    pub records: Vec<NetworkErrorRecord>,
    /// Semi-explicit combined error against h (tau = h ladder).
    pub eoc: EocTable,
}

/// Ladder with tau = 1/n per level on the plain square; errors at T only.
pub fn network_convergence_study(
    base: &Config,
    ns: &[usize],
    reference: ReferenceSpec,
    t_final: f64,
    threads: usize,
) -> Result<NetworkConvergence, StudyError> {
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StudyError::BadLadder("mesh ladder must increase".into()));
    }
    if ns.iter().any(|&n| reference.n % n != 0) {
        return Err(StudyError::BadLadder(
            "reference mesh must be a refinement of every study mesh".into(),
        ));
    }
    for &n in ns {
        let tau = 1.0 / n as f64;
        if (t_final / tau).fract().abs() > 1e-9 || (tau / reference.tau).fract().abs() > 1e-9 {
            return Err(StudyError::BadLadder(
                "every tau must divide T and be a multiple of the reference tau".into(),
            ));
        }
    }

    let mut ref_cfg = base.clone();
    ref_cfg.set(&format!("mesh.n={}", reference.n))?;
    let ref_sys = build_network(&ref_cfg)?;
    let ref_traj = integrate_network(
        &ref_sys,
        Scheme::Implicit,
        reference.tau,
        t_final,
        CapturePolicy::FinalOnly,
    )?;
    let (points, weights) = quadrature(&ref_sys.space.mesh);
    let ref_plan = EvalPlan::build(&ref_sys.space.mesh, &points)?;
    let State::Network { u: u_rt, p: p_rt, .. } = ref_traj.final_state() else {
        unreachable!("network reference")
    };
    let (lambda, mu, inv_m) = (
        ref_sys.params.lambda,
        ref_sys.params.mu,
        ref_sys.params.inv_m,
    );

    let mut den2 = energy_norm(&ref_sys.k_a, u_rt).powi(2);
    for pi in p_rt {
        den2 += energy_norm(&ref_sys.m_c, pi).powi(2);
    }
    let den = den2.sqrt();

    let mut levels = Vec::new();
    for &n in ns {
        let mut cfg = base.clone();
        cfg.set(&format!("mesh.n={n}"))?;
        let sys = build_network(&cfg)?;
        let plan = EvalPlan::build(&sys.space.mesh, &points)?;
        levels.push((n, sys, plan));
    }

    let mut tasks = Vec::new();
    for (li, (n, _, _)) in levels.iter().enumerate() {
        for scheme in [Scheme::SemiExplicit, Scheme::Implicit] {
            tasks.push((li, *n, scheme));
        }
    }

    let run_one = |&(li, n, scheme): &(usize, usize, Scheme)| -> Result<NetworkErrorRecord, StudyError> {
        let (_, sys, plan) = &levels[li];
        let tau = 1.0 / n as f64;
        let traj = integrate_network(sys, scheme, tau, t_final, CapturePolicy::FinalOnly)?;
        let State::Network { u, p, .. } = traj.final_state() else {
            unreachable!()
        };
        let gu = plan.p1_vector_grads(&sys.space.dof_u, u);
        let gur = ref_plan.p1_vector_grads(&ref_sys.space.dof_u, u_rt);
        let mut err2 = weighted_sum(&weights, |i| {
            let d = [
                [gur[i][0][0] - gu[i][0][0], gur[i][0][1] - gu[i][0][1]],
                [gur[i][1][0] - gu[i][1][0], gur[i][1][1] - gu[i][1][1]],
            ];
            elastic_density(d, lambda, mu)
        })
        .max(0.0);
        for (pi, pir) in p.iter().zip(p_rt) {
            let v = plan.p0_values(&sys.space.dof_p, pi);
            let vr = ref_plan.p0_values(&ref_sys.space.dof_p, pir);
            err2 += weighted_sum(&weights, |i| {
                let d = vr[i] - v[i];
                inv_m * d * d
            })
            .max(0.0);
        }
        Ok(NetworkErrorRecord {
            n,
            h: sys.space.mesh.h,
            tau,
            scheme,
            err_combined: err2.sqrt() / den,
            wall_time: traj.solve_time,
        })
    };

    let records: Vec<NetworkErrorRecord> = parallel_map(&tasks, threads, run_one)
        .into_iter()
        .collect::<Result<_, _>>()?;

    let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            records
                .iter()
                .find(|r| r.n == n && r.scheme == Scheme::SemiExplicit)
                .expect("ladder point ran")
                .err_combined
        })
        .collect();
    let eoc = compute_eoc(&errs, &hs)?;
    Ok(NetworkConvergence { records, eoc })
}

// ---------------------------------------------------------------------------
// Coupling sweep
// ---------------------------------------------------------------------------

/// Error value recorded for diverged runs.
pub const SWEEP_ERROR_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct SweepRecord {
    pub omega: f64,
    pub tau: f64,
    /// Relative error at T against an implicit reference; capped when diverged.
    pub error: f64,
    pub diverged: bool,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub records: Vec<SweepRecord>,
    /// Analytic weak-coupling bound on |omega| for the toy problem.
    pub weak_threshold: f64,
    /// Analytic spectral stability bound on |omega|.
    pub stability_threshold: f64,
}

pub fn coupling_sweep(
    omegas: &[f64],
    taus: &[f64],
    t_final: f64,
    threads: usize,
) -> Result<SweepSummary, StudyError> {
    if omegas.is_empty() || taus.is_empty() {
        return Err(StudyError::BadLadder("empty sweep grid".into()));
    }
    let tau_ref = taus.iter().fold(f64::INFINITY, |m, &t| m.min(t)) / 64.0;
    let per_omega = |&omega: &f64| -> Result<Vec<SweepRecord>, StudyError> {
        let toy = build_toy(omega);
        let rho = coupling_rho(&toy.system.k_a, &toy.system.m_c, &toy.system.d)?;
        let reference = integrate_two_field(
            &toy.system,
            Scheme::Implicit,
            tau_ref,
            t_final,
            CapturePolicy::FinalOnly,
        )?;
        let State::TwoField { u: ur, p: pr } = reference.final_state() else {
            unreachable!()
        };
        let ref_norm: f64 = ur
            .iter()
            .chain(pr.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let mut out = Vec::with_capacity(taus.len());
        for &tau in taus {
            let run = integrate_two_field(
                &toy.system,
                Scheme::SemiExplicit,
                tau,
                t_final,
                CapturePolicy::FinalOnly,
            );
            let record = match run {
                Ok(traj) => {
                    let State::TwoField { u, p } = traj.final_state() else {
                        unreachable!()
                    };
                    let err2: f64 = u
                        .iter()
                        .zip(ur)
                        .chain(p.iter().zip(pr))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let error = (err2.sqrt() / ref_norm).min(SWEEP_ERROR_CAP);
                    SweepRecord {
                        omega,
                        tau,
                        error,
                        diverged: false,
                        rho,
                    }
                }
                Err(StepError::DivergenceDetected { .. }) => SweepRecord {
                    omega,
                    tau,
                    error: SWEEP_ERROR_CAP,
                    diverged: true,
                    rho,
                },
                Err(e) => return Err(e.into()),
            };
            out.push(record);
        }
        Ok(out)
    };
    let per: Vec<Vec<SweepRecord>> = parallel_map(omegas, threads, per_omega)
        .into_iter()
        .collect::<Result<_, _>>()?;
    let (weak_threshold, stability_threshold) = toy_omega_bounds()?;
    Ok(SweepSummary {
        records: per.into_iter().flatten().collect(),
        weak_threshold,
        stability_threshold,
    })
}

/// Largest omega whose run at the given tau neither diverged nor exceeded
/// relative error 1.
pub fn sweep_boundary(records: &[SweepRecord], tau: f64) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.tau == tau && !r.diverged && r.error <= 1.0)
        .map(|r| r.omega)
        .fold(None, |m, o| Some(m.map_or(o, |m: f64| m.max(o))))
}

// ---------------------------------------------------------------------------
// Runtime benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RuntimeRecord {
    pub k: usize,
    pub n: usize,
    pub tau: f64,
    pub assembly: Duration,
    pub semi_explicit: Duration,
    pub implicit: Duration,
    /// (implicit - semi-explicit) / implicit, in percent.
    pub reduction_percent: f64,
    pub repetitions: usize,
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

/// Median solve-loop times per scheme at h = tau = 2^-k; runs sequentially
/// so measurements do not contend.
pub fn runtime_benchmark(
    base: &Config,
    ks: &[usize],
    t_final: f64,
    repetitions: usize,
) -> Result<Vec<RuntimeRecord>, StudyError> {
    if repetitions < 3 {
        return Err(StudyError::BadLadder("need at least 3 repetitions".into()));
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let n = 1usize << k;
        let tau = 1.0 / n as f64;
        let mut cfg = base.clone();
        cfg.set(&format!("mesh.n={n}"))?;
        cfg.set(&format!("time.tau={tau}"))?;
        let built = Instant::now();
        let sys = build_network(&cfg)?;
        let assembly = built.elapsed();
        let mut timings = [Vec::new(), Vec::new()];
        for _ in 0..repetitions {
            for (slot, scheme) in [Scheme::SemiExplicit, Scheme::Implicit].into_iter().enumerate() {
                let traj =
                    integrate_network(&sys, scheme, tau, t_final, CapturePolicy::FinalOnly)?;
                timings[slot].push(traj.solve_time);
            }
        }
        let semi_explicit = median(timings[0].clone());
        let implicit = median(timings[1].clone());
        let reduction_percent = 100.0 * (implicit.as_secs_f64() - semi_explicit.as_secs_f64())
            / implicit.as_secs_f64().max(1e-12);
        out.push(RuntimeRecord {
            k,
            n,
            tau,
            assembly,
            semi_explicit,
            implicit,
            reduction_percent,
            repetitions,
        });
    }
    Ok(out)
}

/// Maximum pressure value of network i along the captured states.
pub fn network_pressure_peaks(traj: &Trajectory, network: usize) -> Vec<f64> {
    traj.states
        .iter()
        .map(|s| {
            let State::Network { p, .. } = s else {
                panic!("network trajectory expected")
            };
            p[network].iter().fold(0.0f64, |m, x| m.max(x.abs()))
        })
        .collect()
}
