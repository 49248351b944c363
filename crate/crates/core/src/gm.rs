//! Direction-split pseudo-compressible fluid stepper.
//!
//! One step advances the velocity with an explicit momentum predictor, a
//! Douglas-split Crank-Nicolson viscous update (one periodic tridiagonal
//! solve per axis), a direction-split correction solve
//! `(1 - D_xx)(1 - D_yy)[(1 - D_zz)] psi = -(rho/dt) div(u)`, and a
//! rotational pressure update `p += psi - chi mu div((u^{n+1}+u^n)/2)`.
//! The perturbation parameter is hard-wired to `dt`; unlike a projection
//! method the discrete divergence after the step is `O(dt)`, not zero.
//!
//! All operations work on subdomain-local fields and communicate through the
//! worker context, so the same code runs serially and distributed.

use crate::error::{Error, Result};
use crate::mac_grid::{
    advection_skew, second_difference, GridSpec, MacField, ScalarField, StaggerLocation,
};
use crate::runtime::WorkerCtx;

/// Sub-phases of one fluid step, reported to a [`StageClock`] for the timing
/// harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidStage {
    /// Advection extrapolation, pressure prediction, explicit momentum.
    Momentum,
    /// Implicit directional viscous sweeps.
    Sweeps,
    /// Direction-split correction (psi) solve.
    PsiSolve,
    /// Pressure update.
    Pressure,
}

/// Receiver for per-stage timing marks; `()` ignores them.
pub trait StageClock {
    fn stage(&mut self, stage: FluidStage);
}

impl StageClock for () {
    fn stage(&mut self, _stage: FluidStage) {}
}

/// Fluid stepper parameters.
///
/// The pseudo-compressibility perturbation is `eps = dt` by policy and is not
/// an independent knob; `chi` defaults to 0.6.
#[derive(Debug, Clone, Copy)]
pub struct GMParams {
    pub rho: f64,
    pub mu: f64,
    pub dt: f64,
    /// Rotational correction weight, in (0, 1].
    pub chi: f64,
    /// Alternate the sweep (and psi factor) order by step parity.
    pub rotate_sweeps: bool,
}

impl GMParams {
    pub fn new(rho: f64, mu: f64, dt: f64, chi: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if !(chi > 0.0 && chi <= 1.0) {
            return Err(Error::Config(format!("chi must lie in (0, 1], got {chi}")));
        }
        if !(rho > 0.0) || mu < 0.0 {
            return Err(Error::Config("need rho > 0 and mu >= 0".into()));
        }
        Ok(GMParams {
            rho,
            mu,
            dt,
            chi,
            rotate_sweeps: true,
        })
    }

    /// Perturbation parameter (fixed to the time step).
    pub fn eps(&self) -> f64 {
        self.dt
    }

    /// Crank-Nicolson viscous coefficient `mu dt / (2 rho)`.
    pub fn kappa(&self) -> f64 {
        self.mu * self.dt / (2.0 * self.rho)
    }
}

/// Rolling fluid state owned by one worker.
#[derive(Debug, Clone)]
pub struct GMState {
    /// Velocity at `t^n`; halos valid at step entry.
    pub u: MacField,
    /// Advection term of the previous step, `N(u^{n-1})`; interior only.
    /// Unset only before the first step.
    pub adv_prev: Option<MacField>,
    /// Pressure at `t^{n-1/2}` (cell centers).
    pub p_half: ScalarField,
    /// Correction term at `t^{n-1/2}` (cell centers).
    pub psi_half: ScalarField,
    pub step_index: usize,
}

impl GMState {
    pub fn zeros(n: [usize; 3], dim: usize) -> Self {
        GMState {
            u: MacField::zeros(n, dim),
            adv_prev: None,
            p_half: ScalarField::zeros(StaggerLocation::Center, n, dim),
            psi_half: ScalarField::zeros(StaggerLocation::Center, n, dim),
            step_index: 0,
        }
    }
}

/// Axis sweep order for a step: forward on even steps, reversed on odd ones
/// when rotation is enabled.
pub fn sweep_order(dim: usize, step_index: usize, rotate: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dim).collect();
    if rotate && step_index % 2 == 1 {
        order.reverse();
    }
    order
}

/// Adams-Bashforth extrapolated advection term
/// `N^{n+1/2} = 3/2 N(u^n) - 1/2 N(u^{n-1})`.
///
/// Returns both the extrapolation and the fresh `N(u^n)` (stored by the
/// caller for the next step).  At step 0 the extrapolation is replaced by
/// `N(u^0)` itself.
pub fn extrapolate_advection(state: &GMState, spec: &GridSpec) -> (MacField, MacField) {
    let n_now = advection_skew(&state.u, spec.h, spec.dim);
    let mut n_half = n_now.clone();
    if state.step_index > 0 {
        let prev = state
            .adv_prev
            .as_ref()
            .expect("adv_prev must be set after step 0");
        for c in 0..spec.dim {
            let pc = &prev.comps[c];
            let hc = &mut n_half.comps[c];
            hc.fill_with(|i, j, k| 1.5 * n_now.comps[c].at(i, j, k) - 0.5 * pc.at(i, j, k));
        }
    }
    (n_half, n_now)
}

/// Pressure predictor `p* = p^{n-1/2} + psi^{n-1/2}`; identically zero at
/// step 0.
pub fn predict_pressure(state: &GMState, spec: &GridSpec) -> ScalarField {
    let mut p = ScalarField::zeros(StaggerLocation::Center, state.p_half.shape(), spec.dim);
    if state.step_index > 0 {
        p.fill_with(|i, j, k| state.p_half.at(i, j, k) + state.psi_half.at(i, j, k));
    }
    p
}

/// Explicit momentum predictor:
/// `u* = u^n + (dt/rho)[mu lap(u^n) - grad(p*) + f] - dt N^{n+1/2}`.
///
/// `u^n` and `p_star` must have valid halos; `f` and `n_half` are read on the
/// interior only.
pub fn explicit_momentum(
    state: &GMState,
    n_half: &MacField,
    f_half: &MacField,
    p_star: &ScalarField,
    params: &GMParams,
    spec: &GridSpec,
) -> MacField {
    let dim = spec.dim;
    let h = spec.h;
    let h2 = h * h;
    let dt_rho = params.dt / params.rho;
    let mut out = MacField::zeros(state.u.comps[0].shape(), dim);
    for c in 0..dim {
        let uc = &state.u.comps[c];
        let fc = &f_half.comps[c];
        let nc = &n_half.comps[c];
        out.comps[c].fill_with(|i, j, k| {
            let mut lap = 0.0;
            for a in 0..dim {
                let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][a];
                lap += (uc.at(i + e[0], j + e[1], k + e[2]) - 2.0 * uc.at(i, j, k)
                    + uc.at(i - e[0], j - e[1], k - e[2]))
                    / h2;
            }
            let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][c];
            let grad = (p_star.at(i, j, k) - p_star.at(i - e[0], j - e[1], k - e[2])) / h;
            uc.at(i, j, k) + dt_rho * (params.mu * lap - grad + fc.at(i, j, k))
                - params.dt * nc.at(i, j, k)
        });
    }
    out
}

/// One Douglas sweep: solve `(1 - kappa D_axis) u_out = u_in - kappa D_axis u^n`
/// for every velocity component, as batched periodic line solves.
pub fn viscous_sweep(
    ctx: &mut WorkerCtx,
    u_in: &MacField,
    u_n: &MacField,
    axis: usize,
    params: &GMParams,
    spec: &GridSpec,
) -> Result<MacField> {
    let dim = spec.dim;
    let kappa = params.kappa();
    let h2 = spec.h * spec.h;
    let mut out = MacField::zeros(u_in.comps[0].shape(), dim);
    for c in 0..dim {
        let dn = second_difference(&u_n.comps[c], axis, spec.h, dim)?;
        let ic = &u_in.comps[c];
        out.comps[c].fill_with(|i, j, k| ic.at(i, j, k) - kappa * dn.at(i, j, k));
    }
    let diag = 1.0 + 2.0 * kappa / h2;
    let off = -kappa / h2;
    let mut refs: Vec<&mut ScalarField> = out.comps.iter_mut().collect();
    ctx.solve_lines(axis, diag, off, &mut refs)?;
    Ok(out)
}

/// Correction solve: `(1 - D_a1)(1 - D_a2)[(1 - D_a3)] psi = -(rho/dt) div(u^{n+1})`
/// applied as sequential one-axis factors in `order`; the intermediate
/// between factors is never persisted.
pub fn pressure_correction_solve(
    ctx: &mut WorkerCtx,
    u_np1: &MacField,
    params: &GMParams,
    spec: &GridSpec,
    order: &[usize],
) -> Result<ScalarField> {
    let dim = spec.dim;
    let h = spec.h;
    let h2 = h * h;
    let mut psi = ScalarField::zeros(StaggerLocation::Center, u_np1.comps[0].shape(), dim);
    let scale = -params.rho / params.dt;
    psi.fill_with(|i, j, k| {
        let mut d = 0.0;
        for a in 0..dim {
            let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][a];
            d += (u_np1.comps[a].at(i + e[0], j + e[1], k + e[2])
                - u_np1.comps[a].at(i, j, k))
                / h;
        }
        scale * d
    });
    let diag = 1.0 + 2.0 / h2;
    let off = -1.0 / h2;
    for &axis in order {
        ctx.solve_lines(axis, diag, off, &mut [&mut psi])?;
    }
    Ok(psi)
}

/// Rotational pressure update:
/// `p^{n+1/2} = p^{n-1/2} + psi^{n+1/2} - chi mu div((u^{n+1} + u^n)/2)`.
pub fn update_pressure(
    state: &GMState,
    u_np1: &MacField,
    psi: &ScalarField,
    params: &GMParams,
    spec: &GridSpec,
) -> ScalarField {
    let dim = spec.dim;
    let h = spec.h;
    let mut p = ScalarField::zeros(StaggerLocation::Center, psi.shape(), dim);
    p.fill_with(|i, j, k| {
        let mut div_avg = 0.0;
        for a in 0..dim {
            let e = [[1isize, 0, 0], [0, 1, 0], [0, 0, 1]][a];
            let hi = 0.5
                * (u_np1.comps[a].at(i + e[0], j + e[1], k + e[2])
                    + state.u.comps[a].at(i + e[0], j + e[1], k + e[2]));
            let lo = 0.5 * (u_np1.comps[a].at(i, j, k) + state.u.comps[a].at(i, j, k));
            div_avg += (hi - lo) / h;
        }
        state.p_half.at(i, j, k) + psi.at(i, j, k) - params.chi * params.mu * div_avg
    });
    p
}

/// Advance the fluid one time step.
///
/// `f_half` is the body force spread at `t^{n+1/2}` (interior only).  On
/// entry `state.u` must have valid halos; this invariant is re-established
/// for the updated velocity before returning, so interpolation at the next
/// step needs no extra exchange.
pub fn gm_step(
    ctx: &mut WorkerCtx,
    state: &mut GMState,
    f_half: &MacField,
    params: &GMParams,
) -> Result<()> {
    gm_step_clocked(ctx, state, f_half, params, &mut ())
}

/// [`gm_step`] with per-stage timing marks.
pub fn gm_step_clocked(
    ctx: &mut WorkerCtx,
    state: &mut GMState,
    f_half: &MacField,
    params: &GMParams,
    clock: &mut impl StageClock,
) -> Result<()> {
    let spec = ctx.part.spec;
    let order = sweep_order(spec.dim, state.step_index, params.rotate_sweeps);

    let (n_half, n_now) = extrapolate_advection(state, &spec);

    let mut p_star = predict_pressure(state, &spec);
    ctx.exchange_halo(&mut p_star)?;

    let u_star = explicit_momentum(state, &n_half, f_half, &p_star, params, &spec);
    ctx.barrier();
    clock.stage(FluidStage::Momentum);

    let mut u_cur = u_star;
    for &axis in &order {
        u_cur = viscous_sweep(ctx, &u_cur, &state.u, axis, params, &spec)?;
    }
    for c in &mut u_cur.comps {
        ctx.exchange_halo(c)?;
    }
    ctx.barrier();
    clock.stage(FluidStage::Sweeps);

    let psi = pressure_correction_solve(ctx, &u_cur, params, &spec, &order)?;
    ctx.barrier();
    clock.stage(FluidStage::PsiSolve);

    let p_new = update_pressure(state, &u_cur, &psi, params, &spec);
    ctx.barrier();
    clock.stage(FluidStage::Pressure);

    state.adv_prev = Some(n_now);
    state.u = u_cur;
    state.p_half = p_new;
    state.psi_half = psi;
    state.step_index += 1;
    Ok(())
}
