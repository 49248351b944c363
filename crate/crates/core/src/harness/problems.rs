//! Canonical benchmark problems: initial fluid fields and fiber layouts.

use super::config::{ProblemConfig, ProblemKind};
use crate::error::Result;
use crate::ib::{ForceConnection, IBPoint};
use crate::mac_grid::GridSpec;
use std::f64::consts::PI;

/// Everything needed to start a run: the grid, the initial velocity sampler,
/// and the global Lagrangian layout.
pub struct ProblemSetup {
    pub spec: GridSpec,
    pub points: Vec<IBPoint>,
    pub conns: Vec<ForceConnection>,
    /// Initial velocity of component `c` at physical position `(x, y, z)`.
    pub u0: Box<dyn Fn(usize, f64, f64, f64) -> f64 + Send + Sync>,
    /// Number of leading points forming one closed loop, used by the area and
    /// radius diagnostics (0 when there are no fibers).
    pub diag_loop: usize,
    /// Reference center for radius diagnostics.
    pub diag_center: [f64; 3],
}

/// Build the initial Eulerian and Lagrangian state for `config`.
pub fn build_problem(config: &ProblemConfig) -> Result<ProblemSetup> {
    let spec = config.grid()?;
    match config.problem {
        ProblemKind::ThinEllipse => {
            let (points, conns) = ellipse_fiber(
                0,
                [0.5, 0.5],
                config.r1,
                config.r2,
                config.n_s,
                config.sigma,
            );
            Ok(ProblemSetup {
                spec,
                points,
                conns,
                u0: Box::new(|_, _, _, _| 0.0),
                diag_loop: config.n_s,
                diag_center: [0.5, 0.5, 0.0],
            })
        }
        ProblemKind::ThickShell => {
            // Nested circumferential fibers; stiffness falls to zero at the
            // shell edges so the spread force stays continuous.  Fiber j sits
            // at radial parameter r_j = (j + 1/2) / N_r (midpoint sampling)
            // and carries the transverse quadrature weight h_r.
            let n_s = config.n_s;
            let n_r = config.n_r;
            let h_r = 1.0 / n_r as f64;
            let mut points = Vec::with_capacity(n_s * n_r);
            let mut conns = Vec::with_capacity(n_s * n_r);
            for j in 0..n_r {
                let r = (j as f64 + 0.5) * h_r;
                let a = config.r1 + config.gamma * (r - 0.5);
                let b = config.r2 + config.gamma * (r - 0.5);
                let sigma = config.sigma * (1.0 - (2.0 * PI * r).cos());
                let (mut p, mut c) =
                    ellipse_fiber((j * n_s) as u64, [0.5, 0.5], a, b, n_s, sigma * h_r);
                points.append(&mut p);
                conns.append(&mut c);
            }
            Ok(ProblemSetup {
                spec,
                points,
                conns,
                u0: Box::new(|_, _, _, _| 0.0),
                diag_loop: n_s,
                diag_center: [0.5, 0.5, 0.0],
            })
        }
        ProblemKind::MultiEllipse => {
            // One ellipse per unit tile, centered at the tile centroid, in a
            // uniform background flow that drags the array across subdomain
            // boundaries.
            let n_s = config.n_s;
            let mut points = Vec::new();
            let mut conns = Vec::new();
            let mut base = 0u64;
            for m in 0..config.p[1] {
                for l in 0..config.p[0] {
                    let center = [l as f64 + 0.5, m as f64 + 0.5];
                    let (mut p, mut c) =
                        ellipse_fiber(base, center, config.r1, config.r2, n_s, config.sigma);
                    points.append(&mut p);
                    conns.append(&mut c);
                    base += n_s as u64;
                }
            }
            Ok(ProblemSetup {
                spec,
                points,
                conns,
                u0: Box::new(|c, _, _, _| match c {
                    0 => 0.5,
                    1 => 0.5 * 3.0f64.sqrt(),
                    _ => 0.0,
                }),
                diag_loop: n_s,
                diag_center: [0.5, 0.5, 0.0],
            })
        }
        ProblemKind::Cylinder3d => {
            // Elastic shell of circumferential rings (zero rest strain) woven
            // with axial fibers (rest strain L); the axial family wraps
            // periodically through the domain ends.
            let n_s = config.n_s;
            let n_r = config.n_r;
            let h_s = 1.0 / n_s as f64;
            let h_r = 1.0 / n_r as f64;
            let id = |i: usize, j: usize| (j * n_s + i) as u64;
            let mut points = Vec::with_capacity(n_s * n_r);
            let mut conns = Vec::with_capacity(2 * n_s * n_r);
            for j in 0..n_r {
                let x = j as f64 * h_r;
                for i in 0..n_s {
                    let th = 2.0 * PI * i as f64 * h_s;
                    points.push(IBPoint::at(
                        id(i, j),
                        [
                            x,
                            0.5 + config.r1 * th.cos(),
                            0.5 + config.r2 * th.sin(),
                        ],
                    ));
                }
            }
            let sig_s = config.sigma_s * h_r / (h_s * h_s);
            let sig_r = config.sigma_r * h_s / (h_r * h_r);
            for j in 0..n_r {
                for i in 0..n_s {
                    conns.push(ForceConnection::new(
                        id(i, j),
                        id((i + n_s - 1) % n_s, j),
                        id((i + 1) % n_s, j),
                        sig_s,
                        0.0,
                        h_s,
                    ));
                    conns.push(ForceConnection::new(
                        id(i, j),
                        id(i, (j + n_r - 1) % n_r),
                        id(i, (j + 1) % n_r),
                        sig_r,
                        config.rest_l,
                        h_r,
                    ));
                }
            }
            Ok(ProblemSetup {
                spec,
                points,
                conns,
                u0: Box::new(|_, _, _, _| 0.0),
                diag_loop: n_s,
                diag_center: [0.0, 0.5, 0.5],
            })
        }
        ProblemKind::TaylorGreen => Ok(ProblemSetup {
            spec,
            points: Vec::new(),
            conns: Vec::new(),
            u0: Box::new(|c, x, y, _| {
                let pi2 = 2.0 * PI;
                match c {
                    0 => (pi2 * x).sin() * (pi2 * y).cos(),
                    1 => -(pi2 * x).cos() * (pi2 * y).sin(),
                    _ => 0.0,
                }
            }),
            diag_loop: 0,
            diag_center: [0.5, 0.5, 0.0],
        }),
    }
}

/// Closed elliptical fiber: `N_s` points with wraparound second-difference
/// connections.  `sigma` is the physical stiffness; the stored per-connection
/// value is pre-divided by `h_s^2`.
fn ellipse_fiber(
    id_base: u64,
    center: [f64; 2],
    r1: f64,
    r2: f64,
    n_s: usize,
    sigma: f64,
) -> (Vec<IBPoint>, Vec<ForceConnection>) {
    let h_s = 1.0 / n_s as f64;
    let points: Vec<IBPoint> = (0..n_s)
        .map(|k| {
            let th = 2.0 * PI * k as f64 * h_s;
            IBPoint::at(
                id_base + k as u64,
                [center[0] + r1 * th.cos(), center[1] + r2 * th.sin(), 0.0],
            )
        })
        .collect();
    let sigma_stored = sigma / (h_s * h_s);
    let conns: Vec<ForceConnection> = (0..n_s)
        .map(|k| {
            ForceConnection::new(
                id_base + k as u64,
                id_base + ((k + n_s - 1) % n_s) as u64,
                id_base + ((k + 1) % n_s) as u64,
                sigma_stored,
                0.0,
                h_s,
            )
        })
        .collect();
    (points, conns)
}
