//! Implicit and semi-explicit Euler integrators for the two-field and
//! network models. All constant matrices are factorized once per run and
//! reused across steps; the implicit schemes solve a symmetric pressure Schur
//! complement with matrix-free CG.

use crate::models::{ModelError, NetworkSystem, TwoFieldSystem};
use crate::sparsekit::{axpy, cg, norm2, CholeskyFactor, SolverError, SparseMatrix};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("step {step}: {source}")]
    Solver {
        step: usize,
        #[source]
        source: SolverError,
    },
    #[error("divergence detected at step {step} (max-norm {norm:.3e})")]
    DivergenceDetected { step: usize, norm: f64 },
    #[error("final time {t_final} is not an integer multiple of tau = {tau}")]
    BadTimeGrid { tau: f64, t_final: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SemiExplicit,
    Implicit,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SemiExplicit => "semi-explicit",
            Scheme::Implicit => "implicit",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CapturePolicy {
    EveryStep,
    EveryKth(usize),
    FinalOnly,
}

impl CapturePolicy {
    /// Default thinning for FEM runs: roughly 200 captured states.
    pub fn thinned(steps: usize) -> CapturePolicy {
        CapturePolicy::EveryKth(steps.div_ceil(200).max(1))
    }

    fn captures(&self, step: usize, total: usize) -> bool {
        match self {
            CapturePolicy::EveryStep => true,
            CapturePolicy::EveryKth(k) => step % k == 0 || step == total,
            CapturePolicy::FinalOnly => step == total,
        }
    }
}

#[derive(Debug, Clone)]
pub enum State {
    TwoField {
        u: Vec<f64>,
        p: Vec<f64>,
    },
    Network {
        u: Vec<f64>,
        y: Vec<Vec<f64>>,
        p: Vec<Vec<f64>>,
    },
}

impl State {
    pub fn max_norm(&self) -> f64 {
        let fold = |m: f64, v: &Vec<f64>| v.iter().fold(m, |m, x| m.max(x.abs()));
        match self {
            State::TwoField { u, p } => fold(fold(0.0, u), p),
            State::Network { u, y, p } => {
                let m = fold(0.0, u);
                let m = y.iter().fold(m, |m, v| fold(m, v));
                p.iter().fold(m, |m, v| fold(m, v))
            }
        }
    }
}

/// Divergence guard: states beyond this max-norm abort the run.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Tolerance of the per-step linear solves (relative).
pub const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub tau: f64,
    pub t_final: f64,
    pub step_count: usize,
    /// Captured instants (always includes t = 0 and t = T).
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Per step: relative residual of each discrete equation.
    pub residuals: Vec<Vec<f64>>,
    /// Factorizations plus stepping; excludes system assembly.
    pub solve_time: Duration,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("final state always captured")
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .flatten()
            .fold(0.0f64, |m, &r| m.max(r))
    }

    /// State captured at time t, if that instant was captured.
    pub fn state_at(&self, t: f64) -> Option<&State> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * self.t_final.max(1.0))
            .map(|i| &self.states[i])
    }
}

fn check_time_grid(tau: f64, t_final: f64) -> Result<usize, StepError> {
    if !(tau > 0.0) || !(t_final > 0.0) {
        return Err(StepError::BadTimeGrid { tau, t_final });
    }
    let n = (t_final / tau).round();
    if n < 1.0 || (n * tau - t_final).abs() > 1e-12 * t_final.max(1.0) {
        return Err(StepError::BadTimeGrid { tau, t_final });
    }
    Ok(n as usize)
}

fn rel(raw: f64, rhs_norm: f64) -> f64 {
    raw / (1.0 + rhs_norm)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Per-run solver state for the two-field model: factorizations of K_a and
/// M_c + tau K_b, shared by both schemes.
pub struct TwoFieldStepper<'a> {
    sys: &'a TwoFieldSystem,
    pub tau: f64,
    chol_ka: CholeskyFactor,
    mkb: SparseMatrix,
    chol_mkb: CholeskyFactor,
}

impl<'a> TwoFieldStepper<'a> {
    pub fn new(sys: &'a TwoFieldSystem, tau: f64) -> Result<Self, SolverError> {
        let chol_ka = CholeskyFactor::factor(&sys.k_a)?;
        let mkb = sys.m_c.add(&sys.k_b.scaled(tau));
        let chol_mkb = CholeskyFactor::factor(&mkb)?;
        Ok(TwoFieldStepper {
            sys,
            tau,
            chol_ka,
            mkb,
            chol_mkb,
        })
    }

    /// One decoupled step: elasticity solve with the lagged pressure, then
    /// the parabolic solve.
    pub fn semi_explicit_step(
        &self,
        u: &[f64],
        p: &[f64],
        t_next: f64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sys = self.sys;
        let mut bu = sys.f.eval(t_next);
        axpy(1.0, &sys.d.matvec_transpose(p), &mut bu);
        let u1 = self.chol_ka.solve(&bu);

        let mut bp = sys.m_c.matvec(p);
        axpy(-1.0, &sys.d.matvec(&sub(&u1, u)), &mut bp);
        axpy(self.tau, &sys.g.eval(t_next), &mut bp);
        let p1 = self.chol_mkb.solve(&bp);

        let r1 = rel(norm2(&sub(&sys.k_a.matvec(&u1), &bu)), norm2(&bu));
        let r2 = rel(norm2(&sub(&self.mkb.matvec(&p1), &bp)), norm2(&bp));
        (u1, p1, vec![r1, r2])
    }

    /// One coupled step via the symmetric pressure Schur complement
    /// M_c + tau K_b + D K_a^{-1} D^T, applied matrix-free with CG.
    pub fn implicit_step(
        &self,
        u: &[f64],
        p: &[f64],
        t_next: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), SolverError> {
        let sys = self.sys;
        let f1 = sys.f.eval(t_next);
        let mut rhs = sys.m_c.matvec(p);
        axpy(1.0, &sys.d.matvec(u), &mut rhs);
        axpy(self.tau, &sys.g.eval(t_next), &mut rhs);
        axpy(-1.0, &sys.d.matvec(&self.chol_ka.solve(&f1)), &mut rhs);

        let apply = |x: &[f64], y: &mut [f64]| {
            let w = self.chol_ka.solve(&sys.d.matvec_transpose(x));
            let mut out = self.mkb.matvec(x);
            axpy(1.0, &sys.d.matvec(&w), &mut out);
            y.copy_from_slice(&out);
        };
        let max_iter = 40 * rhs.len().max(50);
        let (p1, _, _) = cg(apply, &rhs, Some(p), STEP_TOL, max_iter)?;

        let mut bu = f1;
        axpy(1.0, &sys.d.matvec_transpose(&p1), &mut bu);
        let u1 = self.chol_ka.solve(&bu);

        let r1 = rel(norm2(&sub(&sys.k_a.matvec(&u1), &bu)), norm2(&bu));
        let mut bp = sys.m_c.matvec(p);
        axpy(-1.0, &sys.d.matvec(&sub(&u1, u)), &mut bp);
        axpy(self.tau, &sys.g.eval(t_next), &mut bp);
        let r2 = rel(norm2(&sub(&self.mkb.matvec(&p1), &bp)), norm2(&bp));
        Ok((u1, p1, vec![r1, r2]))
    }
}

pub fn integrate_two_field(
    sys: &TwoFieldSystem,
    scheme: Scheme,
    tau: f64,
    t_final: f64,
    capture: CapturePolicy,
) -> Result<Trajectory, StepError> {
    let steps = check_time_grid(tau, t_final)?;
    let started = Instant::now();
    let stepper = TwoFieldStepper::new(sys, tau).map_err(|source| StepError::Solver {
        step: 0,
        source,
    })?;
    let mut u = sys.u0.clone();
    let mut p = sys.p0.clone();
    let mut times = vec![0.0];
    let mut states = vec![State::TwoField {
        u: u.clone(),
        p: p.clone(),
    }];
    let mut residuals = Vec::with_capacity(steps);
    for step in 1..=steps {
        let t = step as f64 * tau;
        let (u1, p1, res) = match scheme {
            Scheme::SemiExplicit => stepper.semi_explicit_step(&u, &p, t),
            Scheme::Implicit => stepper
                .implicit_step(&u, &p, t)
                .map_err(|source| StepError::Solver { step, source })?,
        };
        u = u1;
        p = p1;
        residuals.push(res);
        let state = State::TwoField {
            u: u.clone(),
            p: p.clone(),
        };
        let norm = state.max_norm();
        if !norm.is_finite() || norm > BLOWUP_THRESHOLD {
            return Err(StepError::DivergenceDetected { step, norm });
        }
        if capture.captures(step, steps) {
            times.push(t);
            states.push(state);
        }
    }
    Ok(Trajectory {
        scheme,
        tau,
        t_final,
        step_count: steps,
        times,
        states,
        residuals,
        solve_time: started.elapsed(),
    })
}

/// Per-run solver state for the network model.
pub struct NetworkStepper<'a> {
    sys: &'a NetworkSystem,
    pub tau: f64,
    chol_ka: CholeskyFactor,
    chol_my: CholeskyFactor,
}

impl<'a> NetworkStepper<'a> {
    pub fn new(sys: &'a NetworkSystem, tau: f64) -> Result<Self, SolverError> {
        Ok(NetworkStepper {
            sys,
            tau,
            chol_ka: CholeskyFactor::factor(&sys.k_a)?,
            chol_my: CholeskyFactor::factor(&sys.m_y)?,
        })
    }

    /// Pressure-block operator shared by both schemes:
    /// out_i = M_c x_i + tau D_hat_i M_y^{-1} D_hat_i^T x_i
    ///         - tau sum_j beta_ij M_Q (x_i - x_j)   [+ coupled u term].
    fn apply_pressure_block(&self, x: &[f64], y: &mut [f64], with_u_coupling: bool) {
        let sys = self.sys;
        let np = sys.n_p();
        let m = sys.m;
        let parts: Vec<&[f64]> = (0..m).map(|i| &x[i * np..(i + 1) * np]).collect();
        let mqx: Vec<Vec<f64>> = parts.iter().map(|xi| sys.m_q.matvec(xi)).collect();
        let ka_term = if with_u_coupling {
            let mut w = vec![0.0; sys.n_u()];
            for i in 0..m {
                axpy(1.0, &sys.d[i].matvec_transpose(parts[i]), &mut w);
            }
            Some(self.chol_ka.solve(&w))
        } else {
            None
        };
        for i in 0..m {
            let mut out = sys.m_c.matvec(parts[i]);
            let flux = self.chol_my.solve(&sys.d_hat[i].matvec_transpose(parts[i]));
            axpy(self.tau, &sys.d_hat[i].matvec(&flux), &mut out);
            for j in 0..m {
                if j != i && sys.beta[i][j] != 0.0 {
                    let b = self.tau * sys.beta[i][j];
                    axpy(-b, &mqx[i], &mut out);
                    axpy(b, &mqx[j], &mut out);
                }
            }
            if let Some(z) = &ka_term {
                axpy(1.0, &sys.d[i].matvec(z), &mut out);
            }
            y[i * np..(i + 1) * np].copy_from_slice(&out);
        }
    }

    fn solve_pressures(
        &self,
        rhs: &[f64],
        warm: &[f64],
        with_u_coupling: bool,
    ) -> Result<Vec<f64>, SolverError> {
        let apply =
            |x: &[f64], y: &mut [f64]| self.apply_pressure_block(x, y, with_u_coupling);
        let max_iter = 40 * rhs.len().max(50);
        let (p, _, _) = cg(apply, rhs, Some(warm), STEP_TOL, max_iter)?;
        Ok(p)
    }

    fn recover_fluxes(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.sys.m)
            .map(|i| self.chol_my.solve(&self.sys.d_hat[i].matvec_transpose(&p[i])))
            .collect()
    }

    /// Residuals (relative) of the elasticity, flux, and pressure equations.
    fn residuals(
        &self,
        u: &[f64],
        u1: &[f64],
        p: &[Vec<f64>],
        p1: &[Vec<f64>],
        y1: &[Vec<f64>],
        t_next: f64,
        implicit: bool,
    ) -> Vec<f64> {
        let sys = self.sys;
        let m = sys.m;
        // Elasticity: K_a u1 = f1 + sum_i D_i^T p_i (lagged or coupled).
        let mut bu = sys.f.eval(t_next);
        for i in 0..m {
            let pi = if implicit { &p1[i] } else { &p[i] };
            axpy(1.0, &sys.d[i].matvec_transpose(pi), &mut bu);
        }
        let r_u = rel(norm2(&sub(&sys.k_a.matvec(u1), &bu)), norm2(&bu));

        let mut r_y = 0.0f64;
        let mut r_p = 0.0f64;
        let du = sub(u1, u);
        for i in 0..m {
            let by = sys.d_hat[i].matvec_transpose(&p1[i]);
            r_y = r_y.max(rel(norm2(&sub(&sys.m_y.matvec(&y1[i]), &by)), norm2(&by)));

            let mut bp = sys.m_c.matvec(&p[i]);
            axpy(-1.0, &sys.d[i].matvec(&du), &mut bp);
            axpy(self.tau, &sys.g[i].eval(t_next), &mut bp);
            let mut lhs = sys.m_c.matvec(&p1[i]);
            axpy(self.tau, &sys.d_hat[i].matvec(&y1[i]), &mut lhs);
            for j in 0..m {
                if j != i && sys.beta[i][j] != 0.0 {
                    let b = self.tau * sys.beta[i][j];
                    axpy(-b, &sys.m_q.matvec(&p1[i]), &mut lhs);
                    axpy(b, &sys.m_q.matvec(&p1[j]), &mut lhs);
                }
            }
            r_p = r_p.max(rel(norm2(&sub(&lhs, &bp)), norm2(&bp)));
        }
        vec![r_u, r_y, r_p]
    }

    pub fn semi_explicit_step(
        &self,
        u: &[f64],
        p: &[Vec<f64>],
        t_next: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>), SolverError> {
        let sys = self.sys;
        let (m, np) = (sys.m, sys.n_p());
        let mut bu = sys.f.eval(t_next);
        for i in 0..m {
            axpy(1.0, &sys.d[i].matvec_transpose(&p[i]), &mut bu);
        }
        let u1 = self.chol_ka.solve(&bu);

        let du = sub(&u1, u);
        let mut rhs = vec![0.0; m * np];
        let mut warm = vec![0.0; m * np];
        for i in 0..m {
            let mut bp = sys.m_c.matvec(&p[i]);
            axpy(-1.0, &sys.d[i].matvec(&du), &mut bp);
            axpy(self.tau, &sys.g[i].eval(t_next), &mut bp);
            rhs[i * np..(i + 1) * np].copy_from_slice(&bp);
            warm[i * np..(i + 1) * np].copy_from_slice(&p[i]);
        }
        let sol = self.solve_pressures(&rhs, &warm, false)?;
        let p1: Vec<Vec<f64>> = (0..m).map(|i| sol[i * np..(i + 1) * np].to_vec()).collect();
        let y1 = self.recover_fluxes(&p1);
        let res = self.residuals(u, &u1, p, &p1, &y1, t_next, false);
        Ok((u1, y1, p1, res))
    }

    pub fn implicit_step(
        &self,
        u: &[f64],
        p: &[Vec<f64>],
        t_next: f64,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>), SolverError> {
        let sys = self.sys;
        let (m, np) = (sys.m, sys.n_p());
        let f1 = sys.f.eval(t_next);
        let ka_f = self.chol_ka.solve(&f1);
        let mut rhs = vec![0.0; m * np];
        let mut warm = vec![0.0; m * np];
        for i in 0..m {
            let mut bp = sys.m_c.matvec(&p[i]);
            axpy(1.0, &sys.d[i].matvec(u), &mut bp);
            axpy(-1.0, &sys.d[i].matvec(&ka_f), &mut bp);
            axpy(self.tau, &sys.g[i].eval(t_next), &mut bp);
            rhs[i * np..(i + 1) * np].copy_from_slice(&bp);
            warm[i * np..(i + 1) * np].copy_from_slice(&p[i]);
        }
        let sol = self.solve_pressures(&rhs, &warm, true)?;
        let p1: Vec<Vec<f64>> = (0..m).map(|i| sol[i * np..(i + 1) * np].to_vec()).collect();

        let mut bu = f1;
        for i in 0..m {
            axpy(1.0, &sys.d[i].matvec_transpose(&p1[i]), &mut bu);
        }
        let u1 = self.chol_ka.solve(&bu);
        let y1 = self.recover_fluxes(&p1);
        let res = self.residuals(u, &u1, p, &p1, &y1, t_next, true);
        Ok((u1, y1, p1, res))
    }
}

pub fn integrate_network(
    sys: &NetworkSystem,
    scheme: Scheme,
    tau: f64,
    t_final: f64,
    capture: CapturePolicy,
) -> Result<Trajectory, StepError> {
    let steps = check_time_grid(tau, t_final)?;
    let started = Instant::now();
    let stepper = NetworkStepper::new(sys, tau).map_err(|source| StepError::Solver {
        step: 0,
        source,
    })?;
    let mut u = sys.u0.clone();
    let mut y = sys.y0.clone();
    let mut p = sys.p0.clone();
    let mut times = vec![0.0];
    let mut states = vec![State::Network {
        u: u.clone(),
        y: y.clone(),
        p: p.clone(),
    }];
    let mut residuals = Vec::with_capacity(steps);
    for step in 1..=steps {
        let t = step as f64 * tau;
        let (u1, y1, p1, res) = match scheme {
            Scheme::SemiExplicit => stepper
                .semi_explicit_step(&u, &p, t)
                .map_err(|source| StepError::Solver { step, source })?,
            Scheme::Implicit => stepper
                .implicit_step(&u, &p, t)
                .map_err(|source| StepError::Solver { step, source })?,
        };
        u = u1;
        y = y1;
        p = p1;
        residuals.push(res);
        let state = State::Network {
            u: u.clone(),
            y: y.clone(),
            p: p.clone(),
        };
        let norm = state.max_norm();
        if !norm.is_finite() || norm > BLOWUP_THRESHOLD {
            return Err(StepError::DivergenceDetected { step, norm });
        }
        if capture.captures(step, steps) {
            times.push(t);
            states.push(state);
        }
    }
    Ok(Trajectory {
        scheme,
        tau,
        t_final,
        step_count: steps,
        times,
        states,
        residuals,
        solve_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::femkit::PoroParams;
    use crate::models::{build_network, build_toy, TimeLoad, TwoFieldSystem};
    use crate::sparsekit::SparseMatrix;

    fn scalar_system(omega: f64) -> TwoFieldSystem {
        // 1+1 dimensional system K_a = 1, D = omega, M_c = K_b = 1,
        // f = 0, g = 0, p0 = 1 (u0 = omega by consistency).
        TwoFieldSystem::with_consistent_u0(
            SparseMatrix::identity(1),
            SparseMatrix::identity(1),
            SparseMatrix::identity(1),
            SparseMatrix::from_dense(&[vec![omega]]),
            TimeLoad::zero(1),
            TimeLoad::zero(1),
            vec![1.0],
            PoroParams {
                lambda: 0.0,
                mu: 1.0,
                kappa_over_nu: vec![1.0],
                inv_m: 1.0,
                alpha: vec![1.0],
                beta: vec![vec![0.0]],
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn scalar_semi_explicit_hand_values() {
        let sys = scalar_system(0.1);
        assert!((sys.u0[0] - 0.1).abs() < 1e-14);
        let stepper = TwoFieldStepper::new(&sys, 0.5).unwrap();
        let (u1, p1, res) = stepper.semi_explicit_step(&sys.u0, &sys.p0, 0.5);
        assert!((u1[0] - 0.1).abs() < 1e-12, "u1 = {}", u1[0]);
        assert!((p1[0] - 2.0 / 3.0).abs() < 1e-12, "p1 = {}", p1[0]);
        assert!(res.iter().all(|&r| r < 1e-12));
    }

    #[test]
    fn scalar_implicit_hand_values() {
        // Schur: (1 + 0.5 + 0.01) p1 = 1 + 0.01 -> p1 = 1.01/1.51.
        let sys = scalar_system(0.1);
        let stepper = TwoFieldStepper::new(&sys, 0.5).unwrap();
        let (u1, p1, res) = stepper.implicit_step(&sys.u0, &sys.p0, 0.5).unwrap();
        assert!((p1[0] - 1.01 / 1.51).abs() < 1e-10, "p1 = {}", p1[0]);
        assert!((u1[0] - 0.1 * p1[0]).abs() < 1e-10);
        assert!(res.iter().all(|&r| r < 1e-9), "{res:?}");
    }

    #[test]
    fn schemes_coincide_without_coupling() {
        let sys = scalar_system(0.0);
        let a = integrate_two_field(&sys, Scheme::SemiExplicit, 0.1, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        let b = integrate_two_field(&sys, Scheme::Implicit, 0.1, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            let (State::TwoField { u: ua, p: pa }, State::TwoField { u: ub, p: pb }) = (sa, sb)
            else {
                unreachable!()
            };
            for (x, y) in ua.iter().zip(ub).chain(pa.iter().zip(pb)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_data_zero_trajectory() {
        let mut sys = scalar_system(0.3);
        sys.p0 = vec![0.0];
        sys.u0 = vec![0.0];
        let t = integrate_two_field(&sys, Scheme::SemiExplicit, 0.25, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        assert!(t.states.iter().all(|s| s.max_norm() == 0.0));
    }

    #[test]
    fn bad_time_grid_rejected() {
        let sys = scalar_system(0.1);
        assert!(matches!(
            integrate_two_field(&sys, Scheme::SemiExplicit, 0.3, 1.0, CapturePolicy::EveryStep),
            Err(StepError::BadTimeGrid { .. })
        ));
    }

    #[test]
    fn unstable_toy_diverges() {
        // rho = 21 * 0.09 = 1.89 > 1: the decoupled scheme blows past the guard.
        let toy = build_toy(0.3);
        let result =
            integrate_two_field(&toy.system, Scheme::SemiExplicit, 1e-2, 1.0, CapturePolicy::FinalOnly);
        match result {
            Err(StepError::DivergenceDetected { .. }) => {}
            Ok(t) => {
                let err = t.final_state().max_norm();
                assert!(err > 1.0, "expected large state, got {err}");
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn stable_toy_converges_to_reference() {
        let toy = build_toy(0.1);
        let run = integrate_two_field(&toy.system, Scheme::SemiExplicit, 1e-2, 1.0, CapturePolicy::FinalOnly)
            .unwrap();
        let reference =
            integrate_two_field(&toy.system, Scheme::Implicit, 1e-2 / 64.0, 1.0, CapturePolicy::FinalOnly)
                .unwrap();
        let (State::TwoField { p: pr, .. }, State::TwoField { p: pf, .. }) =
            (run.final_state(), reference.final_state())
        else {
            unreachable!()
        };
        let err = (pr[0] - pf[0]).abs() / pf[0].abs().max(1e-30);
        assert!(err < 1e-1, "relative error {err}");
        assert!(run.max_residual() < 10.0 * STEP_TOL);
    }

    #[test]
    fn toy_self_convergence_first_order() {
        let toy = build_toy(0.1);
        let reference = integrate_two_field(
            &toy.system,
            Scheme::Implicit,
            1.0 / 64.0 / 64.0,
            1.0,
            CapturePolicy::FinalOnly,
        )
        .unwrap();
        let State::TwoField { p: pref, .. } = reference.final_state() else {
            unreachable!()
        };
        let mut errs = Vec::new();
        for k in [16.0, 32.0, 64.0] {
            let t = integrate_two_field(
                &toy.system,
                Scheme::SemiExplicit,
                1.0 / k,
                1.0,
                CapturePolicy::FinalOnly,
            )
            .unwrap();
            let State::TwoField { p, .. } = t.final_state() else {
                unreachable!()
            };
            errs.push((p[0] - pref[0]).abs());
        }
        for w in errs.windows(2) {
            let eoc = (w[0] / w[1]).ln() / 2f64.ln();
            assert!((0.8..1.3).contains(&eoc), "eoc {eoc}, errors {errs:?}");
        }
    }

    #[test]
    fn network_stationary_under_zero_data_and_equal_pressures() {
        // Equal constant pressures, beta = 0, zero loads: constants lie in the
        // kernel of D_hat^T, and the consistent u0 keeps u fixed, so the
        // pressures stay put.
        let mut config = Config::preset("network-m2").unwrap();
        config.set("mesh.n=4").unwrap();
        config.set("initial.p=const:650,const:650").unwrap();
        config.set("beta.1_2=0").unwrap();
        let sys = build_network(&config).unwrap();
        let t = integrate_network(&sys, Scheme::SemiExplicit, 0.25, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        let State::Network { p, u, .. } = t.final_state() else {
            unreachable!()
        };
        for pi in p {
            for &v in pi {
                assert!((v - 650.0).abs() < 1e-8, "pressure drifted to {v}");
            }
        }
        for (a, b) in u.iter().zip(&sys.u0) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
        assert!(t.max_residual() < 10.0 * STEP_TOL);
    }

    #[test]
    fn network_schemes_agree_when_fully_decoupled() {
        let mut config = Config::preset("network-m2").unwrap();
        config.set("mesh.n=4").unwrap();
        config.set("params.alpha=0,0").unwrap();
        config.set("beta.1_2=0").unwrap();
        let sys = build_network(&config).unwrap();
        let a = integrate_network(&sys, Scheme::SemiExplicit, 0.25, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        let b = integrate_network(&sys, Scheme::Implicit, 0.25, 1.0, CapturePolicy::EveryStep)
            .unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            let (State::Network { p: pa, .. }, State::Network { p: pb, .. }) = (sa, sb) else {
                unreachable!()
            };
            for (xi, yi) in pa.iter().zip(pb) {
                for (x, y) in xi.iter().zip(yi) {
                    assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn network_residuals_small_on_default_preset() {
        let mut config = Config::preset("network-5.2").unwrap();
        config.set("mesh.n=8").unwrap();
        let sys = build_network(&config).unwrap();
        for scheme in [Scheme::SemiExplicit, Scheme::Implicit] {
            let t = integrate_network(&sys, scheme, 0.25, 1.0, CapturePolicy::FinalOnly).unwrap();
            assert!(
                t.max_residual() < 1e-8,
                "{scheme:?} residual {}",
                t.max_residual()
            );
        }
    }
}
