//! The delay-equation view of the decoupled scheme: after eliminating the
//! displacement, the pressure satisfies
//!
//!   M_c p'(t) + K_b p(t) = -D K_a^{-1} D^T p'(t - tau) + g~(t),
//!
//! with g~ = g - D K_a^{-1} f' and a prescribed history on [-tau, 0]. This
//! module integrates that system by the method of steps, classifies its
//! stability through the coupling spectral radius, checks the splicing
//! condition at t = 0, and measures the gap to the original coupled system.

use crate::models::{coupling_rho, TwoFieldSystem};
use crate::sparsekit::{axpy, energy_norm, norm2, CholeskyFactor, SolverError};
use crate::steppers::{integrate_two_field, CapturePolicy, Scheme, State, StepError, BLOWUP_THRESHOLD};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DelayError {
    #[error("delay must be positive, got {0}")]
    BadDelay(f64),
    #[error("history endpoints must equal the initial pressure")]
    BadHistory,
    #[error("inner_steps must be at least 1")]
    BadInnerSteps,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Pressure history on [-tau, 0]. Every variant pins both endpoints to the
/// initial pressure.
#[derive(Debug, Clone)]
pub enum History {
    /// Constant p0; smooth, but its derivative ignores the equation at t = 0.
    Constant,
    /// Cubic through p0 at both endpoints whose derivative at 0 solves
    /// M_c v = g~(0) - K_b p0, so the splicing residual vanishes.
    CubicBlend,
    /// User samples on a uniform grid over [-tau, 0]; piecewise linear.
    Samples(Vec<Vec<f64>>),
}

pub struct DelayDae<'a> {
    pub sys: &'a TwoFieldSystem,
    pub tau: f64,
    pub history: History,
    chol_ka: CholeskyFactor,
    /// Derivative of the cubic-blend history at t = 0 (if that history is used).
    blend_v: Option<Vec<f64>>,
}

impl<'a> DelayDae<'a> {
    pub fn new(sys: &'a TwoFieldSystem, tau: f64, history: History) -> Result<Self, DelayError> {
        if !(tau > 0.0) {
            return Err(DelayError::BadDelay(tau));
        }
        if let History::Samples(vals) = &history {
            if vals.len() < 2 || vals.iter().any(|v| v.len() != sys.n_p()) {
                return Err(DelayError::BadHistory);
            }
            let scale = 1.0 + norm2(&sys.p0);
            for end in [&vals[0], &vals[vals.len() - 1]] {
                let diff: Vec<f64> = end.iter().zip(&sys.p0).map(|(a, b)| a - b).collect();
                if norm2(&diff) > 1e-12 * scale {
                    return Err(DelayError::BadHistory);
                }
            }
        }
        let chol_ka = CholeskyFactor::factor(&sys.k_a)?;
        let mut dae = DelayDae {
            sys,
            tau,
            history,
            chol_ka,
            blend_v: None,
        };
        if matches!(dae.history, History::CubicBlend) {
            let mut rhs = dae.g_tilde(0.0);
            axpy(-1.0, &sys.k_b.matvec(&sys.p0), &mut rhs);
            let chol_mc = CholeskyFactor::factor(&sys.m_c)?;
            dae.blend_v = Some(chol_mc.solve(&rhs));
        }
        Ok(dae)
    }

    /// The delayed operator S x = D K_a^{-1} D^T x.
    pub fn apply_s(&self, x: &[f64]) -> Vec<f64> {
        self.sys
            .d
            .matvec(&self.chol_ka.solve(&self.sys.d.matvec_transpose(x)))
    }

    /// g~(t) = g(t) - D K_a^{-1} f'(t) with the analytic load derivative.
    pub fn g_tilde(&self, t: f64) -> Vec<f64> {
        let mut out = self.sys.g.eval(t);
        let fdot = self.sys.f.derivative(t);
        axpy(-1.0, &self.sys.d.matvec(&self.chol_ka.solve(&fdot)), &mut out);
        out
    }

    /// History value at s in [-tau, 0].
    pub fn history_value(&self, s: f64) -> Vec<f64> {
        let tau = self.tau;
        match &self.history {
            History::Constant => self.sys.p0.clone(),
            History::CubicBlend => {
                let v = self.blend_v.as_ref().expect("blend built at construction");
                let w = s * (s + tau) * (s + tau) / (tau * tau);
                let mut out = self.sys.p0.clone();
                axpy(w, v, &mut out);
                out
            }
            History::Samples(vals) => {
                let delta = tau / (vals.len() - 1) as f64;
                let x = ((s + tau) / delta).clamp(0.0, (vals.len() - 1) as f64);
                let k = (x.floor() as usize).min(vals.len() - 2);
                let w = x - k as f64;
                vals[k]
                    .iter()
                    .zip(&vals[k + 1])
                    .map(|(a, b)| a * (1.0 - w) + b * w)
                    .collect()
            }
        }
    }

    /// History derivative at s in [-tau, 0]; backward differences for samples.
    pub fn history_derivative(&self, s: f64) -> Vec<f64> {
        let tau = self.tau;
        match &self.history {
            History::Constant => vec![0.0; self.sys.n_p()],
            History::CubicBlend => {
                let v = self.blend_v.as_ref().expect("blend built at construction");
                let w = (s + tau) * (3.0 * s + tau) / (tau * tau);
                v.iter().map(|x| x * w).collect()
            }
            History::Samples(vals) => {
                let delta = tau / (vals.len() - 1) as f64;
                let x = (s + tau) / delta;
                let k = (x.ceil() as usize).clamp(1, vals.len() - 1);
                vals[k]
                    .iter()
                    .zip(&vals[k - 1])
                    .map(|(a, b)| (a - b) / delta)
                    .collect()
            }
        }
    }

    /// Euclidean norm of M_c phi'(0) + K_b phi(0) - g~(0) + S phi'(-tau):
    /// zero iff the history splices onto a C^1 solution at t = 0.
    pub fn splicing_check(&self, g_tilde0: &[f64]) -> f64 {
        let mut r = self.sys.m_c.matvec(&self.history_derivative(0.0));
        axpy(1.0, &self.sys.k_b.matvec(&self.history_value(0.0)), &mut r);
        axpy(-1.0, &g_tilde0.to_vec(), &mut r);
        axpy(1.0, &self.apply_s(&self.history_derivative(-self.tau)), &mut r);
        norm2(&r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Marginal,
    Unstable,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Marginal => "marginal",
            Classification::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityVerdict {
    pub rho: f64,
    pub classification: Classification,
    pub margin: f64,
}

pub const MARGINAL_BAND: f64 = 1e-6;

/// Spectral classification of the delayed recursion: stable iff the spectral
/// radius of M_c^{-1} D K_a^{-1} D^T is below one.
pub fn stability_test(sys: &TwoFieldSystem) -> Result<StabilityVerdict, SolverError> {
    let rho = coupling_rho(&sys.k_a, &sys.m_c, &sys.d)?;
    let margin = (rho - 1.0).abs();
    let classification = if margin <= MARGINAL_BAND {
        Classification::Marginal
    } else if rho < 1.0 {
        Classification::Stable
    } else {
        Classification::Unstable
    };
    Ok(StabilityVerdict {
        rho,
        classification,
        margin,
    })
}

#[derive(Debug, Clone)]
pub struct DelayTrajectory {
    pub tau: f64,
    pub inner_steps: usize,
    /// Window boundaries, including t = 0.
    pub times: Vec<f64>,
    /// Delay pressure at window boundaries.
    pub p: Vec<Vec<f64>>,
    /// Displacement recovered from K_a u(t) = f(t) + D^T p(t - tau).
    pub u: Vec<Vec<f64>>,
    /// Per window: max relative residual of the inner implicit-Euler solves.
    pub residuals: Vec<f64>,
}

impl DelayTrajectory {
    pub fn window_sup_norms(&self) -> Vec<f64> {
        self.p
            .iter()
            .map(|p| p.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .collect()
    }
}

/// Method of steps: on each window [(n-1)tau, n tau] the delayed derivative
/// is known (from the previous window's inner backward differences, or the
/// history on the first window), leaving an ordinary implicit-Euler march
/// with inner_steps sub-steps. The load derivative in g~ is discretized by
/// the same backward difference, which makes inner_steps = 1 with constant
/// history coincide exactly with the semi-explicit scheme.
pub fn method_of_steps(
    dae: &DelayDae,
    t_final: f64,
    inner_steps: usize,
) -> Result<DelayTrajectory, DelayError> {
    if inner_steps < 1 {
        return Err(DelayError::BadInnerSteps);
    }
    let tau = dae.tau;
    let windows = {
        let n = (t_final / tau).round();
        if !(t_final > 0.0) || n < 1.0 || (n * tau - t_final).abs() > 1e-12 * t_final.max(1.0) {
            return Err(DelayError::Step(StepError::BadTimeGrid { tau, t_final }));
        }
        n as usize
    };
    let sys = dae.sys;
    let delta = tau / inner_steps as f64;
    let chol_inner = CholeskyFactor::factor(&sys.m_c.add(&sys.k_b.scaled(delta)))?;
    let mkb = sys.m_c.add(&sys.k_b.scaled(delta));

    // Delayed derivative samples for the upcoming window, one per inner node.
    let mut vprev: Vec<Vec<f64>> = (1..=inner_steps)
        .map(|k| dae.history_derivative(-tau + k as f64 * delta))
        .collect();

    let mut times = vec![0.0];
    let mut p = vec![sys.p0.clone()];
    let mut u = vec![sys.u0.clone()];
    let mut residuals = Vec::with_capacity(windows);

    let mut q_end = sys.p0.clone();
    for win in 1..=windows {
        let t0 = (win - 1) as f64 * tau;
        let mut q_prev = q_end.clone();
        let mut f_prev = sys.f.eval(t0);
        let mut vnext = Vec::with_capacity(inner_steps);
        let mut worst = 0.0f64;
        for k in 1..=inner_steps {
            let s = t0 + k as f64 * delta;
            let f_k = sys.f.eval(s);
            // rhs = M_c q_{k-1} + delta (g(s) - S v_delay) - D K_a^{-1} (f_k - f_{k-1})
            let mut rhs = sys.m_c.matvec(&q_prev);
            axpy(delta, &sys.g.eval(s), &mut rhs);
            axpy(-delta, &dae.apply_s(&vprev[k - 1]), &mut rhs);
            let df: Vec<f64> = f_k.iter().zip(&f_prev).map(|(a, b)| a - b).collect();
            axpy(-1.0, &sys.d.matvec(&dae.chol_ka.solve(&df)), &mut rhs);
            let q_k = chol_inner.solve(&rhs);
            let raw = {
                let mut r = mkb.matvec(&q_k);
                axpy(-1.0, &rhs, &mut r);
                norm2(&r)
            };
            worst = worst.max(raw / (1.0 + norm2(&rhs)));
            vnext.push(
                q_k.iter()
                    .zip(&q_prev)
                    .map(|(a, b)| (a - b) / delta)
                    .collect(),
            );
            q_prev = q_k;
            f_prev = f_k;
        }
        let lagged = p[p.len() - 1].clone();
        q_end = q_prev;
        let t_end = win as f64 * tau;
        let mut bu = sys.f.eval(t_end);
        axpy(1.0, &sys.d.matvec_transpose(&lagged), &mut bu);
        let u_end = dae.chol_ka.solve(&bu);

        let sup = State::TwoField {
            u: u_end.clone(),
            p: q_end.clone(),
        }
        .max_norm();
        if !sup.is_finite() || sup > BLOWUP_THRESHOLD {
            return Err(DelayError::Step(StepError::DivergenceDetected {
                step: win,
                norm: sup,
            }));
        }
        times.push(t_end);
        p.push(q_end.clone());
        u.push(u_end);
        residuals.push(worst);
        vprev = vnext;
    }
    Ok(DelayTrajectory {
        tau,
        inner_steps,
        times,
        p,
        u,
        residuals,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GapRecord {
    pub tau: f64,
    /// sup over the tau-grid of the M_c-norm distance between the delay
    /// solution and a near-exact solution of the coupled system.
    pub gap: f64,
    /// gap(previous tau) / gap(this tau); near 2 for a first-order gap when
    /// taus halve.
    pub ratio: Option<f64>,
}

/// Measures the modeling gap between the coupled system and its delay
/// counterpart: both are integrated far below their discretization floors
/// (implicit Euler at tau/fine_factor vs method of steps with fine_factor
/// inner sub-steps), so the remaining difference is the O(tau) delay defect.
pub fn delay_gap_experiment(
    sys: &TwoFieldSystem,
    taus: &[f64],
    t_final: f64,
    fine_factor: usize,
) -> Result<Vec<GapRecord>, DelayError> {
    let mut records: Vec<GapRecord> = Vec::with_capacity(taus.len());
    for &tau in taus {
        let reference = integrate_two_field(
            sys,
            Scheme::Implicit,
            tau / fine_factor as f64,
            t_final,
            CapturePolicy::EveryKth(fine_factor),
        )?;
        let dae = DelayDae::new(sys, tau, History::Constant)?;
        let delay = method_of_steps(&dae, t_final, fine_factor)?;
        assert_eq!(reference.times.len(), delay.times.len());
        let mut gap = 0.0f64;
        for (state, pd) in reference.states.iter().zip(&delay.p) {
            let State::TwoField { p: pr, .. } = state else {
                unreachable!("two-field reference")
            };
            let diff: Vec<f64> = pr.iter().zip(pd).map(|(a, b)| a - b).collect();
            gap = gap.max(energy_norm(&sys.m_c, &diff));
        }
        let ratio = records.last().map(|prev: &GapRecord| prev.gap / gap);
        records.push(GapRecord { tau, gap, ratio });
    }
    Ok(records)
}
