//! Nested-resolution convergence studies.
//!
//! Runs the same problem on a ladder of grids, measures errors against a
//! restricted fine-grid reference solution, and estimates convergence rates
//! from successive solution differences (the rate needs no reference at all:
//! `R_N = log2(||q_N - I q_2N|| / ||q_2N - I q_4N||)`).

use super::config::{ProblemConfig, SolverKind};
use super::diagnostics::{
    convergence_rate, fiber_error, l2_norm, scalar_error, velocity_error,
};
use super::sim::{run, SimResult};
use crate::error::Result;
use crate::mac_grid::divergence_edge_to_center;

/// Per-resolution errors against the reference solution.
#[derive(Debug, Clone)]
pub struct StudyErrors {
    pub n: usize,
    pub e_u: f64,
    pub e_p: f64,
    pub e_x: f64,
    /// `||div u||_2`, measured absolutely (the exact solution is
    /// divergence-free).
    pub e_div: f64,
}

/// Results of one convergence study.
pub struct Study {
    pub ns: Vec<usize>,
    pub solutions: Vec<SimResult>,
    pub reference: Option<SimResult>,
    /// Errors per resolution; empty when no reference was run.
    pub errors: Vec<StudyErrors>,
    /// Rates from consecutive triples, one per `ns[i]` with `i + 2 < len`:
    /// `(rate_u, rate_p, rate_x)`.
    pub rates: Vec<(Option<f64>, Option<f64>, Option<f64>)>,
}

impl Study {
    pub fn csv(&self) -> String {
        let mut out = String::from("n,e_u,e_p,e_x,e_div,rate_u,rate_p,rate_x\n");
        for (i, &n) in self.ns.iter().enumerate() {
            let (eu, ep, ex, ed) = self
                .errors
                .iter()
                .find(|e| e.n == n)
                .map(|e| (e.e_u, e.e_p, e.e_x, e.e_div))
                .unwrap_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN));
            let fmt_rate = |r: Option<f64>| match r {
                Some(v) => format!("{v:.4}"),
                None => String::from("-"),
            };
            let (ru, rp, rx) = self
                .rates
                .get(i)
                .copied()
                .map(|(a, b, c)| (fmt_rate(a), fmt_rate(b), fmt_rate(c)))
                .unwrap_or_else(|| ("-".into(), "-".into(), "-".into()));
            out.push_str(&format!(
                "{n},{eu:.6e},{ep:.6e},{ex:.6e},{ed:.6e},{ru},{rp},{rx}\n"
            ));
        }
        out
    }
}

/// Rebuild `base` at resolution `n`, re-deriving the fiber counts.
pub fn with_resolution(base: &ProblemConfig, n: usize) -> Result<ProblemConfig> {
    let mut cfg = base.clone();
    cfg.n = n;
    cfg.n_s = 0;
    cfg.n_r = 0;
    cfg.finalize()
}

/// Run `base` at each resolution in `ns` (ascending), plus a reference run at
/// `ref_n` with `ref_solver` when given, and assemble errors and rates.
pub fn convergence_study(
    base: &ProblemConfig,
    ns: &[usize],
    reference: Option<(usize, SolverKind)>,
) -> Result<Study> {
    let mut solutions = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = with_resolution(base, n)?;
        solutions.push(run(&cfg)?.final_state);
    }
    let reference_sol = match reference {
        Some((ref_n, solver)) => {
            let mut cfg = with_resolution(base, ref_n)?;
            cfg.solver = solver;
            if solver == SolverKind::Bcm {
                cfg.p = [1, 1, 1];
            }
            let cfg = cfg.finalize()?;
            Some(run(&cfg)?.final_state)
        }
        None => None,
    };

    let mut errors = Vec::new();
    if let Some(r) = &reference_sol {
        for s in &solutions {
            let div = divergence_edge_to_center(&s.u, s.spec.h, s.spec.dim);
            errors.push(StudyErrors {
                n: s.spec.n[0],
                e_u: velocity_error(&s.u, &r.u, &s.spec)?,
                e_p: scalar_error(&s.p, &r.p, &s.spec)?,
                e_x: fiber_error(&s.points, &r.points, &s.spec)?,
                e_div: l2_norm(&div, &s.spec),
            });
        }
    }

    let mut rates = Vec::new();
    for i in 0..solutions.len().saturating_sub(2) {
        let (a, b, c) = (&solutions[i], &solutions[i + 1], &solutions[i + 2]);
        let du1 = velocity_error(&a.u, &b.u, &a.spec)?;
        let du2 = velocity_error(&b.u, &c.u, &b.spec)?;
        let dp1 = scalar_error(&a.p, &b.p, &a.spec)?;
        let dp2 = scalar_error(&b.p, &c.p, &b.spec)?;
        let (dx1, dx2) = if a.points.is_empty() {
            (0.0, 0.0)
        } else {
            (
                fiber_error(&a.points, &b.points, &a.spec)?,
                fiber_error(&b.points, &c.points, &b.spec)?,
            )
        };
        rates.push((
            convergence_rate(du1, du2),
            convergence_rate(dp1, dp2),
            convergence_rate(dx1, dx2),
        ));
    }

    Ok(Study {
        ns: ns.to_vec(),
        solutions,
        reference: reference_sol,
        errors,
        rates,
    })
}
