//! L-stable implicit one-step integration for the nonlinear simulation
//! models.
//!
//! The scheme is the two-stage, second-order, stiffly accurate SDIRK method
//! with diagonal coefficient `1 - 1/sqrt(2)`. Local error is estimated by
//! step doubling, which keeps the accepted solution L-stable (no local
//! extrapolation). The DC side of the grid has time constants around
//! `C_i * R_ij ~ 2e-5 s` while runs span tens of seconds, so A-stability
//! alone would not be enough to step over the fast modes cleanly.

use nalgebra::{DMatrix, DVector};

/// Diagonal coefficient of the two-stage L-stable SDIRK scheme.
const GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
const MAX_NEWTON_ITER: usize = 8;
/// Newton must solve the stage equations well below the integration
/// tolerance; this is the customary safety fraction.
const NEWTON_KAPPA: f64 = 0.03;

/// Right-hand side or Jacobian evaluation failed because the state left the
/// model's domain (for example a terminal voltage near zero). The driver
/// reacts by rejecting the step and shrinking it.
#[derive(Debug, Clone, Copy)]
pub struct OutOfDomain;

pub type RhsFn<'a> = dyn Fn(f64, &DVector<f64>, &mut DVector<f64>) -> Result<(), OutOfDomain> + 'a;
pub type JacFn<'a> = dyn Fn(f64, &DVector<f64>, &mut DMatrix<f64>) -> Result<(), OutOfDomain> + 'a;

pub struct SdirkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_initial: f64,
    pub h_min: f64,
}

impl Default for SdirkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_initial: 1e-4,
            h_min: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SdirkStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Sum of the accepted local error estimates (max norm). A conservative
    /// proxy for the accumulated integration error of a damped system.
    pub error_accum: f64,
}

#[derive(Debug)]
pub enum SdirkFailure {
    /// Step size underflowed at time `t`; `fastest_rate` is the largest
    /// eigenvalue magnitude of the Jacobian there, i.e. the mode the
    /// controller could not resolve.
    StepSizeUnderflow { t: f64, fastest_rate: Option<f64> },
}

pub struct Sdirk<'a> {
    rhs: &'a RhsFn<'a>,
    jac: &'a JacFn<'a>,
    opts: SdirkOptions,
    h: f64,
    dim: usize,
    // scratch
    f1: DVector<f64>,
    f_stage: DVector<f64>,
    residual: DVector<f64>,
}

impl<'a> Sdirk<'a> {
    pub fn new(dim: usize, rhs: &'a RhsFn<'a>, jac: &'a JacFn<'a>, opts: SdirkOptions) -> Self {
        let h = opts.h_initial;
        Self {
            rhs,
            jac,
            opts,
            h,
            dim,
            f1: DVector::zeros(dim),
            f_stage: DVector::zeros(dim),
            residual: DVector::zeros(dim),
        }
    }

    fn wrms(&self, v: &DVector<f64>, reference: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let sc = self.opts.atol + self.opts.rtol * reference[i].abs();
            let r = v[i] / sc;
            acc += r * r;
        }
        (acc / self.dim as f64).sqrt()
    }

    /// One Newton-solved stage: X = base + h * gamma * f(t_stage, X).
    fn solve_stage(
        &mut self,
        t_stage: f64,
        h: f64,
        base: &DVector<f64>,
        reference: &DVector<f64>,
        guess: &DVector<f64>,
    ) -> Result<DVector<f64>, OutOfDomain> {
        let mut iter_matrix = DMatrix::zeros(self.dim, self.dim);
        (self.jac)(t_stage, guess, &mut iter_matrix)?;
        iter_matrix *= -h * GAMMA;
        for i in 0..self.dim {
            iter_matrix[(i, i)] += 1.0;
        }
        let lu = iter_matrix.lu();
        let mut x = guess.clone();
        for _ in 0..MAX_NEWTON_ITER {
            (self.rhs)(t_stage, &x, &mut self.f_stage)?;
            self.residual.copy_from(&x);
            self.residual -= base;
            self.residual.axpy(-h * GAMMA, &self.f_stage, 1.0);
            let delta = lu.solve(&self.residual).ok_or(OutOfDomain)?;
            x -= &delta;
            if self.wrms(&delta, reference) <= NEWTON_KAPPA {
                return Ok(x);
            }
        }
        Err(OutOfDomain)
    }

    /// One SDIRK step of size `h` from `(t, x)`.
    fn step(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        h: f64,
        reference: &DVector<f64>,
    ) -> Result<DVector<f64>, OutOfDomain> {
        // stage 1: X1 = x + h g f(t + g h, X1)
        let x1 = self.solve_stage(t + GAMMA * h, h, x, reference, x)?;
        (self.rhs)(t + GAMMA * h, &x1, &mut self.f_stage)?;
        self.f1.copy_from(&self.f_stage);
        // stage 2: X2 = x + h (1-g) f1 + h g f(t + h, X2)
        let mut base = x.clone();
        base.axpy(h * (1.0 - GAMMA), &self.f1, 1.0);
        // stiffly accurate: the step result is the last stage
        self.solve_stage(t + h, h, &base, reference, &x1)
    }

    /// Integrates from `t0` to `t1`, mutating `x` in place. The step size
    /// persists across calls so event-segmented drivers do not restart the
    /// controller at every output sample.
    pub fn integrate_to(
        &mut self,
        t0: f64,
        t1: f64,
        x: &mut DVector<f64>,
        stats: &mut SdirkStats,
    ) -> Result<(), SdirkFailure> {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(());
        }
        let mut t = t0;
        while t < t1 - 1e-14 * t1.abs().max(1.0) {
            let mut h = self.h.min(t1 - t);
            loop {
                if h < self.opts.h_min {
                    return Err(SdirkFailure::StepSizeUnderflow {
                        t,
                        fastest_rate: self.fastest_rate(t, x),
                    });
                }
                let reference = x.clone();
                let attempt = self.step(t, &reference, h, &reference).and_then(|big| {
                    let mid = self.step(t, &reference, h / 2.0, &reference)?;
                    let fine = self.step(t + h / 2.0, &mid, h / 2.0, &reference)?;
                    Ok((big, fine))
                });
                match attempt {
                    Ok((big, fine)) => {
                        // second order: halving reduces the local error 4x
                        let err = (&big - &fine) / 3.0;
                        let err_norm = self.wrms(&err, &reference);
                        if err_norm <= 1.0 {
                            *x = fine;
                            t += h;
                            stats.accepted_steps += 1;
                            stats.error_accum += err.amax();
                            let grow = (0.9 * err_norm.max(1e-10).powf(-1.0 / 3.0)).clamp(0.2, 5.0);
                            self.h = (h * grow).max(self.opts.h_min);
                            break;
                        }
                        stats.rejected_steps += 1;
                        h *= (0.9 * err_norm.powf(-1.0 / 3.0)).clamp(0.1, 0.5);
                    }
                    Err(OutOfDomain) => {
                        stats.rejected_steps += 1;
                        h *= 0.25;
                    }
                }
            }
        }
        Ok(())
    }

    fn fastest_rate(&self, t: f64, x: &DVector<f64>) -> Option<f64> {
        let mut j = DMatrix::zeros(self.dim, self.dim);
        (self.jac)(t, x, &mut j).ok()?;
        let schur = j.try_schur(1e-10, 10_000)?;
        Some(
            schur
                .complex_eigenvalues()
                .iter()
                .map(|e| e.norm())
                .fold(0.0, f64::max),
        )
    }
}
