//! Second-order pressure-increment projection solver, used as the comparison
//! baseline for the pseudo-compressible stepper.
//!
//! Shares the MAC grid, advection, and IB coupling; only the treatment of
//! incompressibility differs.  The momentum equation is integrated with
//! Crank-Nicolson viscosity and Adams-Bashforth advection, then the
//! intermediate velocity is projected onto discretely divergence-free fields
//! by inverting the exact Fourier symbol of the 5-point Laplacian, so the
//! post-projection divergence sits at rounding level every step.  Runs on a
//! single worker only (it is a verification baseline, not a scaling target)
//! and in 2D, where the published comparisons live.

use crate::error::{Error, Result};
use crate::gm::{FluidStage, GMParams, StageClock};
use crate::mac_grid::{advection_skew, GridSpec, MacField, ScalarField, StaggerLocation};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Rolling state of the projection solver; mirrors the pseudo-compressible
/// state minus the correction field.
#[derive(Clone)]
pub struct BCMState {
    pub u: MacField,
    pub adv_prev: Option<MacField>,
    pub p_half: ScalarField,
    pub step_index: usize,
}

impl BCMState {
    pub fn zeros(n: [usize; 3], dim: usize) -> Self {
        BCMState {
            u: MacField::zeros(n, dim),
            adv_prev: None,
            p_half: ScalarField::zeros(StaggerLocation::Center, n, dim),
            step_index: 0,
        }
    }
}

/// Periodic spectral solver for the discrete 5-point Laplacian and the
/// Crank-Nicolson Helmholtz operator on an `nx x ny` grid.
pub struct Spectral2d {
    n: [usize; 2],
    h: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Spectral2d {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        if spec.dim != 2 {
            return Err(Error::Config(
                "the projection reference solver supports 2D only".into(),
            ));
        }
        let mut planner = FftPlanner::new();
        Ok(Spectral2d {
            n: [spec.n[0], spec.n[1]],
            h: spec.h,
            fwd_x: planner.plan_fft_forward(spec.n[0]),
            inv_x: planner.plan_fft_inverse(spec.n[0]),
            fwd_y: planner.plan_fft_forward(spec.n[1]),
            inv_y: planner.plan_fft_inverse(spec.n[1]),
        })
    }

    /// Eigenvalue of the 5-point periodic Laplacian at mode `(kx, ky)`.
    fn symbol(&self, kx: usize, ky: usize) -> f64 {
        let sx = (std::f64::consts::PI * kx as f64 / self.n[0] as f64).sin();
        let sy = (std::f64::consts::PI * ky as f64 / self.n[1] as f64).sin();
        -4.0 / (self.h * self.h) * (sx * sx + sy * sy)
    }

    fn forward(&self, f: &ScalarField) -> Vec<Complex<f64>> {
        let [nx, ny] = self.n;
        let mut buf: Vec<Complex<f64>> = f
            .interior()
            .into_iter()
            .map(|v| Complex::new(v, 0.0))
            .collect();
        // Rows (x-fastest), then columns.
        for row in buf.chunks_exact_mut(nx) {
            self.fwd_x.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            self.fwd_y.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
        buf
    }

    fn inverse_into(&self, mut buf: Vec<Complex<f64>>, out: &mut ScalarField) {
        let [nx, ny] = self.n;
        let scale = 1.0 / (nx * ny) as f64;
        let mut col = vec![Complex::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            self.inv_y.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
        for row in buf.chunks_exact_mut(nx) {
            self.inv_x.process(row);
        }
        out.fill_with(|i, j, _| buf[j as usize * nx + i as usize].re * scale);
    }

    /// Solve `lap5 phi = rhs` with the zero-mean gauge.  The rhs must have
    /// zero mean itself (discrete divergences always do, by telescoping).
    pub fn solve_poisson(&self, rhs: &ScalarField) -> ScalarField {
        let [nx, ny] = self.n;
        let mut hat = self.forward(rhs);
        for ky in 0..ny {
            for kx in 0..nx {
                let idx = ky * nx + kx;
                if kx == 0 && ky == 0 {
                    hat[idx] = Complex::new(0.0, 0.0);
                } else {
                    hat[idx] /= self.symbol(kx, ky);
                }
            }
        }
        let mut out = ScalarField::zeros(rhs.loc, rhs.shape(), 2);
        self.inverse_into(hat, &mut out);
        out
    }

    /// Solve `(1 - coeff lap5) x = rhs`; valid at any stagger location since
    /// the stencil is shift-invariant.
    pub fn solve_helmholtz(&self, rhs: &ScalarField, coeff: f64) -> ScalarField {
        let [nx, ny] = self.n;
        let mut hat = self.forward(rhs);
        for ky in 0..ny {
            for kx in 0..nx {
                hat[ky * nx + kx] /= 1.0 - coeff * self.symbol(kx, ky);
            }
        }
        let mut out = ScalarField::zeros(rhs.loc, rhs.shape(), 2);
        self.inverse_into(hat, &mut out);
        out
    }
}

/// Advance the projection solver one step.
///
/// `f_half` is the spread body force at the half step.  `state.u` and
/// `state.p_half` must have valid halos on entry; the invariant is restored
/// before returning.
pub fn bcm_step(
    state: &mut BCMState,
    fft: &Spectral2d,
    f_half: &MacField,
    params: &GMParams,
    spec: &GridSpec,
) -> Result<()> {
    bcm_step_clocked(state, fft, f_half, params, spec, &mut ())
}

/// [`bcm_step`] with per-stage timing marks.
pub fn bcm_step_clocked(
    state: &mut BCMState,
    fft: &Spectral2d,
    f_half: &MacField,
    params: &GMParams,
    spec: &GridSpec,
    clock: &mut impl StageClock,
) -> Result<()> {
    let dim = spec.dim;
    let h = spec.h;
    let h2 = h * h;
    let kappa = params.kappa();

    // Adams-Bashforth advection, same startup rule as the main stepper.
    let n_now = advection_skew(&state.u, h, dim);
    let mut n_half = n_now.clone();
    if state.step_index > 0 {
        let prev = state.adv_prev.as_ref().expect("adv_prev set after step 0");
        for c in 0..dim {
            let nc = &n_now.comps[c];
            let pc = &prev.comps[c];
            n_half.comps[c].fill_with(|i, j, k| 1.5 * nc.at(i, j, k) - 0.5 * pc.at(i, j, k));
        }
    }

    // Crank-Nicolson momentum with the lagged pressure gradient:
    // (1 - kappa lap) u* = u^n + (dt/rho)(mu/2 lap u^n - grad p + f) - dt N.
    let mut u_star = MacField::zeros(state.u.comps[0].shape(), dim);
    for c in 0..dim {
        let uc = &state.u.comps[c];
        let fc = &f_half.comps[c];
        let nc = &n_half.comps[c];
        let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][c];
        let p = &state.p_half;
        let mut rhs = ScalarField::zeros(uc.loc, uc.shape(), dim);
        rhs.fill_with(|i, j, k| {
            let mut lap = 0.0;
            for a in 0..dim {
                let ea = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][a];
                lap += (uc.at(i + ea[0], j + ea[1], k + ea[2]) - 2.0 * uc.at(i, j, k)
                    + uc.at(i - ea[0], j - ea[1], k - ea[2]))
                    / h2;
            }
            let grad = (p.at(i, j, k) - p.at(i - e[0], j - e[1], k - e[2])) / h;
            uc.at(i, j, k)
                + params.dt / params.rho * (0.5 * params.mu * lap - grad + fc.at(i, j, k))
                - params.dt * nc.at(i, j, k)
        });
        u_star.comps[c] = fft.solve_helmholtz(&rhs, kappa);
    }
    u_star.fill_halo_self_periodic();
    clock.stage(FluidStage::Momentum);

    // Projection: lap phi = (rho/dt) div(u*), then subtract (dt/rho) grad phi.
    let div_star = crate::mac_grid::divergence_edge_to_center(&u_star, h, dim);
    let mut rhs = ScalarField::zeros(StaggerLocation::Center, div_star.shape(), dim);
    rhs.fill_with(|i, j, k| params.rho / params.dt * div_star.at(i, j, k));
    let mut phi = fft.solve_poisson(&rhs);
    phi.fill_halo_self_periodic();
    let mut u_new = MacField::zeros(u_star.comps[0].shape(), dim);
    for c in 0..dim {
        let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][c];
        let us = &u_star.comps[c];
        u_new.comps[c].fill_with(|i, j, k| {
            let grad = (phi.at(i, j, k) - phi.at(i - e[0], j - e[1], k - e[2])) / h;
            us.at(i, j, k) - params.dt / params.rho * grad
        });
    }
    u_new.fill_halo_self_periodic();
    clock.stage(FluidStage::PsiSolve);

    // Pressure increment with the Crank-Nicolson correction; using
    // lap phi = (rho/dt) div(u*) this is p += phi - (mu/2) div(u*).
    let mut p_new = ScalarField::zeros(StaggerLocation::Center, phi.shape(), dim);
    p_new.fill_with(|i, j, k| {
        state.p_half.at(i, j, k) + phi.at(i, j, k) - 0.5 * params.mu * div_star.at(i, j, k)
    });
    p_new.fill_halo_self_periodic();
    clock.stage(FluidStage::Pressure);

    state.adv_prev = Some(n_now);
    state.u = u_new;
    state.p_half = p_new;
    state.step_index += 1;
    Ok(())
}
