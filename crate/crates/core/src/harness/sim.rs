//! The coupled run loop: fiber interpolation/evolution/migration, force
//! spreading, fluid solve, diagnostics, snapshots, and timing.
//!
//! Per step (bulk-synchronous, barriers between phases):
//! interpolate -> evolve fibers -> migrate -> force density + spread ->
//! cleanup -> fluid solve -> diagnostics.  The harness itself is a single
//! controller; all parallelism lives in the worker runtime.

use super::config::{ProblemConfig, SolverKind};
use super::diagnostics::{enclosed_area, radius_stats, DiagnosticsRecord};
use super::problems::{build_problem, ProblemSetup};
use crate::error::{Error, Result};
use crate::gm::{gm_step_clocked, FluidStage, GMParams, GMState, StageClock};
use crate::ib::{
    compute_force_density, evolve_ib, interpolate_velocity, spread_force, IbState,
};
use crate::mac_grid::{GridSpec, MacField, ScalarField};
use crate::projection::{bcm_step_clocked, BCMState, Spectral2d};
use crate::runtime::{partition_domain, spmd, WorkerCtx};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Timed phases of the run loop.
pub const PHASE_NAMES: [&str; 8] = [
    "interpolate",
    "evolve",
    "migrate",
    "spread",
    "momentum",
    "sweeps",
    "psi_solve",
    "pressure",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Interpolate = 0,
    Evolve = 1,
    Migrate = 2,
    Spread = 3,
    Momentum = 4,
    Sweeps = 5,
    PsiSolve = 6,
    Pressure = 7,
}

/// Accumulated wall time per phase (rank 0's clock).
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub seconds: [f64; 8],
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.seconds.iter().sum()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("phase,seconds\n");
        for (name, s) in PHASE_NAMES.iter().zip(self.seconds) {
            out.push_str(&format!("{name},{s:.6e}\n"));
        }
        out.push_str(&format!("total,{:.6e}\n", self.total()));
        out
    }
}

struct PhaseTimer {
    last: Instant,
    times: PhaseTimes,
}

impl PhaseTimer {
    fn new() -> Self {
        PhaseTimer {
            last: Instant::now(),
            times: PhaseTimes::default(),
        }
    }

    fn reset(&mut self) {
        self.last = Instant::now();
    }

    fn mark(&mut self, phase: Phase) {
        let now = Instant::now();
        self.times.seconds[phase as usize] += now.duration_since(self.last).as_secs_f64();
        self.last = now;
    }
}

impl StageClock for PhaseTimer {
    fn stage(&mut self, stage: FluidStage) {
        self.mark(match stage {
            FluidStage::Momentum => Phase::Momentum,
            FluidStage::Sweeps => Phase::Sweeps,
            FluidStage::PsiSolve => Phase::PsiSolve,
            FluidStage::Pressure => Phase::Pressure,
        });
    }
}

/// Globally assembled state at one instant.
pub struct SimResult {
    pub spec: GridSpec,
    pub time: f64,
    pub step: usize,
    pub u: MacField,
    pub p: ScalarField,
    pub points: Vec<crate::ib::IBPoint>,
}

/// Everything a run produces.
pub struct RunOutput {
    pub final_state: SimResult,
    pub snapshots: Vec<SimResult>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub phase_times: PhaseTimes,
    pub steps: usize,
    pub wall_seconds: f64,
}

enum FluidState {
    Gm(GMState),
    Bcm(Box<BCMState>, Box<Spectral2d>),
}

impl FluidState {
    fn u(&self) -> &MacField {
        match self {
            FluidState::Gm(s) => &s.u,
            FluidState::Bcm(s, _) => &s.u,
        }
    }

    fn p(&self) -> &ScalarField {
        match self {
            FluidState::Gm(s) => &s.p_half,
            FluidState::Bcm(s, _) => &s.p_half,
        }
    }
}

/// Execute the run described by `config`.
pub fn run(config: &ProblemConfig) -> Result<RunOutput> {
    let setup = build_problem(config)?;
    let part = partition_domain(setup.spec, config.p[0], config.p[1], config.p[2])?;
    let n_steps = (config.end_time / config.dt).round() as usize;
    let mut snapshot_steps: Vec<usize> = config
        .snapshot_times
        .iter()
        .map(|t| (t / config.dt).round() as usize)
        .filter(|s| *s <= n_steps)
        .collect();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();

    let outputs = spmd(&part, |ctx| {
        worker_body(ctx, config, &setup, n_steps, &snapshot_steps)
    })?;
    let out = outputs
        .into_iter()
        .next()
        .flatten()
        .ok_or_else(|| Error::Protocol("rank 0 produced no output".into()))?;
    Ok(out)
}

/// Run and write outputs (diagnostics CSV, phase timings, field and fiber
/// dumps) under `dir`.  On a solver fault the error (with its step index) is
/// recorded in `abort.txt` before returning.
pub fn run_to_dir(config: &ProblemConfig, dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(dir)?;
    let out = match run(config) {
        Ok(out) => out,
        Err(e) => {
            let _ = std::fs::write(dir.join("abort.txt"), format!("{e}\n"));
            return Err(e);
        }
    };
    std::fs::write(dir.join("diagnostics.csv"), diagnostics_csv(&out.diagnostics))?;
    std::fs::write(dir.join("timings.csv"), out.phase_times.csv())?;
    let fs = &out.final_state;
    crate::mac_grid::dump_state(
        &dir.join("fields"),
        &fs.u,
        &[("p", &fs.p)],
        &fs.spec,
        fs.time,
        fs.step,
    )?;
    if !fs.points.is_empty() {
        crate::ib::save_fiber_layout(&dir.join("fibers.txt"), &fs.points, &[], fs.spec.dim)?;
    }
    Ok(out)
}

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::from(DiagnosticsRecord::csv_header());
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn worker_body(
    ctx: &mut WorkerCtx,
    config: &ProblemConfig,
    setup: &ProblemSetup,
    n_steps: usize,
    snapshot_steps: &[usize],
) -> Result<Option<RunOutput>> {
    let spec = ctx.part.spec;
    let dim = spec.dim;
    let nl = ctx.local_n();
    let origin = ctx.origin();
    let dt = config.dt;

    let mut params = GMParams::new(config.rho, config.mu, dt, config.chi)?;
    params.rotate_sweeps = config.rotate_sweeps;

    // Initial fluid state.
    let mut fluid = match config.solver {
        SolverKind::Gm => {
            let mut st = GMState::zeros(nl, dim);
            for (c, comp) in st.u.comps.iter_mut().enumerate() {
                comp.sample(spec.h, origin, |x, y, z| (setup.u0)(c, x, y, z));
            }
            for c in &mut st.u.comps {
                ctx.exchange_halo(c)?;
            }
            FluidState::Gm(st)
        }
        SolverKind::Bcm => {
            let mut st = BCMState::zeros(nl, dim);
            for (c, comp) in st.u.comps.iter_mut().enumerate() {
                comp.sample(spec.h, origin, |x, y, z| (setup.u0)(c, x, y, z));
            }
            st.u.fill_halo_self_periodic();
            FluidState::Bcm(Box::new(st), Box::new(Spectral2d::new(&spec)?))
        }
    };

    // Resident fibers.
    let mine: Vec<_> = setup
        .points
        .iter()
        .filter(|p| ctx.part.owns(ctx.rank, &p.x))
        .copied()
        .collect();
    let my_ids: std::collections::BTreeSet<u64> = mine.iter().map(|p| p.id).collect();
    let conns: Vec<_> = setup
        .conns
        .iter()
        .filter(|c| my_ids.contains(&c.point_id))
        .copied()
        .collect();
    let mut ib = IbState::new(mine, conns);
    let expected = (setup.points.len(), setup.conns.len());

    let mut timer = PhaseTimer::new();
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut snapshots: Vec<SimResult> = Vec::new();
    let wall_start = Instant::now();

    // Initial diagnostics sample.
    if let Some(rec) = collect_diagnostics(ctx, config, setup, &fluid, &ib, 0, 0.0)? {
        records.push(rec);
    }

    for step in 0..n_steps {
        let fail = |e: Error| Error::Numerical(format!("step {step}: {e}"));
        timer.reset();

        interpolate_velocity(&mut ib.resident, fluid.u(), &spec, origin).map_err(fail)?;
        ctx.barrier();
        timer.mark(Phase::Interpolate);

        evolve_ib(&mut ib.resident, dt, step, &spec);
        ctx.barrier();
        timer.mark(Phase::Evolve);

        ctx.migrate_ib(&mut ib).map_err(fail)?;
        ctx.barrier();
        timer.mark(Phase::Migrate);

        compute_force_density(&mut ib, &spec).map_err(fail)?;
        let mut f = MacField::zeros(nl, dim);
        spread_force(&ib, &mut f, &spec, origin).map_err(fail)?;
        ctx.barrier();
        timer.mark(Phase::Spread);

        ctx.cleanup_ib(&mut ib);
        ctx.audit_lagrangian(&ib, expected).map_err(fail)?;
        timer.reset();

        match &mut fluid {
            FluidState::Gm(st) => {
                gm_step_clocked(ctx, st, &f, &params, &mut timer).map_err(fail)?
            }
            FluidState::Bcm(st, fft) => {
                bcm_step_clocked(st, fft, &f, &params, &spec, &mut timer).map_err(fail)?
            }
        }

        let now = step + 1;
        let t = now as f64 * dt;
        if now % config.output_every == 0 || now == n_steps {
            if let Some(rec) = collect_diagnostics(ctx, config, setup, &fluid, &ib, now, t)? {
                records.push(rec);
            }
        }
        if snapshot_steps.contains(&now) {
            if let Some(s) = gather_state(ctx, &fluid, &ib, now, t)? {
                snapshots.push(s);
            }
        }
    }

    let final_state = gather_state(ctx, &fluid, &ib, n_steps, n_steps as f64 * dt)?;
    if !ctx.is_root() {
        return Ok(None);
    }
    Ok(Some(RunOutput {
        final_state: final_state.expect("root gathers final state"),
        snapshots,
        diagnostics: records,
        phase_times: timer.times,
        steps: n_steps,
        wall_seconds: wall_start.elapsed().as_secs_f64(),
    }))
}

fn collect_diagnostics(
    ctx: &mut WorkerCtx,
    config: &ProblemConfig,
    setup: &ProblemSetup,
    fluid: &FluidState,
    ib: &IbState,
    step: usize,
    time: f64,
) -> Result<Option<DiagnosticsRecord>> {
    let spec = ctx.part.spec;
    let dim = spec.dim;
    let hd = spec.cell_volume();

    // Local quadratic sums; reduced in rank order for determinism.
    let mut div_sq = 0.0;
    let div = crate::mac_grid::divergence_edge_to_center(fluid.u(), spec.h, dim);
    div.for_interior(|_, _, _, v| div_sq += v * v);
    let mut ke = 0.0;
    for c in &fluid.u().comps {
        c.for_interior(|_, _, _, v| ke += v * v);
    }
    let sums = ctx.reduce_sum_root(&[
        div_sq * hd,
        0.5 * ke * hd,
        ib.resident.len() as f64,
        ib.conns.len() as f64,
    ])?;
    let points = ctx.gather_points_root(ib)?;
    let Some(sums) = sums else { return Ok(None) };
    let points = points.expect("root gathers points");

    let (max_r, mean_r, area) = if setup.diag_loop >= 3 && points.len() >= setup.diag_loop {
        let loop_pts = &points[..setup.diag_loop];
        let (max_r, mean_r) = radius_stats(loop_pts, setup.diag_center, &spec);
        let area = if dim == 2 {
            enclosed_area(loop_pts, &spec)?
        } else {
            // 3D: area of the leading cross-section ring in its plane.
            let ring: Vec<crate::ib::IBPoint> = loop_pts
                .iter()
                .map(|p| {
                    let mut q = *p;
                    q.x = [p.x[1], p.x[2], 0.0];
                    q
                })
                .collect();
            enclosed_area(&ring, &spec)?
        };
        (max_r, mean_r, area)
    } else {
        (0.0, 0.0, 0.0)
    };

    let _ = config;
    Ok(Some(DiagnosticsRecord {
        step,
        time,
        max_radius: max_r,
        mean_radius: mean_r,
        area,
        div_l2: sums[0].sqrt(),
        kinetic_energy: sums[1],
        n_points: sums[2] as usize,
        n_conns: sums[3] as usize,
    }))
}

fn gather_state(
    ctx: &mut WorkerCtx,
    fluid: &FluidState,
    ib: &IbState,
    step: usize,
    time: f64,
) -> Result<Option<SimResult>> {
    let spec = ctx.part.spec;
    let mut comps = Vec::new();
    for c in &fluid.u().comps {
        comps.push(ctx.gather_field_root(c)?);
    }
    let p = ctx.gather_field_root(fluid.p())?;
    let points = ctx.gather_points_root(ib)?;
    if !ctx.is_root() {
        return Ok(None);
    }
    Ok(Some(SimResult {
        spec,
        time,
        step,
        u: MacField {
            comps: comps.into_iter().map(|c| c.unwrap()).collect(),
        },
        p: p.unwrap(),
        points: points.unwrap(),
    }))
}

/// Per-phase timing report: minimum over `repeats` full runs of the total
/// wall time spent in each phase.
pub struct BenchReport {
    pub phases: PhaseTimes,
    pub steps: usize,
    pub repeats: usize,
    pub wall_seconds: f64,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("phase,seconds\n");
        for (name, s) in PHASE_NAMES.iter().zip(self.phases.seconds) {
            out.push_str(&format!("{name},{s:.6e}\n"));
        }
        out.push_str(&format!("total,{:.6e}\n", self.phases.total()));
        out.push_str(&format!("steps,{}\n", self.steps));
        out.push_str(&format!("repeats,{}\n", self.repeats));
        out
    }
}

/// Run `config` `repeats` times and report the best (minimum) time per phase.
pub fn bench(config: &ProblemConfig, repeats: usize) -> Result<BenchReport> {
    let repeats = repeats.max(1);
    let mut best = PhaseTimes {
        seconds: [f64::INFINITY; 8],
    };
    let mut steps = 0;
    let mut wall = f64::INFINITY;
    for _ in 0..repeats {
        let out = run(config)?;
        for (b, s) in best.seconds.iter_mut().zip(out.phase_times.seconds) {
            *b = b.min(s);
        }
        steps = out.steps;
        wall = wall.min(out.wall_seconds);
    }
    if steps == 0 {
        best = PhaseTimes::default();
        wall = 0.0;
    }
    Ok(BenchReport {
        phases: best,
        steps,
        repeats,
        wall_seconds: wall,
    })
}

/// Write a bench report CSV.
pub fn bench_to_dir(config: &ProblemConfig, repeats: usize, dir: &Path) -> Result<BenchReport> {
    std::fs::create_dir_all(dir)?;
    let report = bench(config, repeats)?;
    let mut f = std::fs::File::create(dir.join("bench.csv"))?;
    f.write_all(report.csv().as_bytes())?;
    Ok(report)
}
