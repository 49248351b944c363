//! Lagrangian structure: immersed-boundary points, force-generating
//! connections, the regularized delta kernel, and the transfer operators
//! between the fiber and the grid.
//!
//! Points carry a globally unique id (the primary key); connections reference
//! points by id (foreign keys).  A point is resident in the unique subdomain
//! whose half-open box contains its position; copies of nearby foreign points
//! are held read-only as ghosts for one step at a time.
//!
//! Connection stiffness is stored already divided by `h_s^2` (and multiplied
//! by the transverse quadrature weight for multi-fiber families), so the
//! force-density formula reduces to `sigma * (X_l + X_r - 2 X_p)` in the
//! zero-rest-strain case.

use crate::error::{Error, Result};
use crate::mac_grid::{GridSpec, MacField};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// Support radius of the delta kernel, in cells per axis.
pub const KERNEL_SUPPORT: usize = 2;

/// The 4-point kernel weight function.
///
/// Continuous, nonnegative, zero for `|r| >= 2`, and satisfies the
/// partition-of-unity identity `sum_j phi(r - j) = 1` for all `r`.
pub fn phi(r: f64) -> f64 {
    let r = r.abs();
    if r < 1.0 {
        0.125 * (3.0 - 2.0 * r + (1.0 + 4.0 * r - 4.0 * r * r).sqrt())
    } else if r < 2.0 {
        0.125 * (5.0 - 2.0 * r - (-7.0 + 12.0 * r - 4.0 * r * r).sqrt())
    } else {
        0.0
    }
}

/// Four-point stencil along one axis: the base grid index and the kernel
/// weights at `base .. base+3`.
///
/// `xi` is the point coordinate in index units of the target stagger
/// location (`x / h - offset`).
#[inline]
pub fn stencil_1d(xi: f64) -> (isize, [f64; 4]) {
    let base = xi.floor() as isize - 1;
    let mut w = [0.0; 4];
    for (t, wt) in w.iter_mut().enumerate() {
        *wt = phi(xi - (base + t as isize) as f64);
    }
    (base, w)
}

/// One Lagrangian point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IBPoint {
    pub id: u64,
    /// Current position `X^n` (becomes `X^{n+1}` after [`evolve_ib`]).
    pub x: [f64; 3],
    /// Half-step position `X^{n+1/2}`.
    pub xh: [f64; 3],
    /// Interpolated velocity `U^n`.
    pub u: [f64; 3],
    /// Previous velocity `U^{n-1}`, required by the Adams-Bashforth update
    /// and therefore carried in migration packets.
    pub u_prev: [f64; 3],
}

impl IBPoint {
    pub fn at(id: u64, x: [f64; 3]) -> Self {
        IBPoint {
            id,
            x,
            xh: x,
            u: [0.0; 3],
            u_prev: [0.0; 3],
        }
    }
}

/// Elastic link generating force density at its primary point from the two
/// neighbor points of its fiber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceConnection {
    pub point_id: u64,
    pub l_point_id: u64,
    pub r_point_id: u64,
    /// Stiffness, pre-divided by `h_s^2` (see module docs).
    pub sigma: f64,
    /// Resting strain `L` (0 for pure second-difference fibers).
    pub rest_l: f64,
    /// Computed force density, valid after [`compute_force_density`].
    pub fdens: [f64; 3],
    /// Lagrangian mesh width of this connection's fiber family.
    pub h_s: f64,
}

impl ForceConnection {
    pub fn new(point_id: u64, l: u64, r: u64, sigma: f64, rest_l: f64, h_s: f64) -> Self {
        ForceConnection {
            point_id,
            l_point_id: l,
            r_point_id: r,
            sigma,
            rest_l,
            fdens: [0.0; 3],
            h_s,
        }
    }

    /// Sort key making iteration order deterministic everywhere.
    pub fn key(&self) -> (u64, u64, u64) {
        (self.point_id, self.l_point_id, self.r_point_id)
    }
}

/// Wrap a coordinate into `[0, extent)`.
#[inline]
pub fn wrap_coord(x: f64, extent: f64) -> f64 {
    let y = x.rem_euclid(extent);
    // rem_euclid can return `extent` itself when x is a tiny negative number.
    if y >= extent {
        y - extent
    } else {
        y
    }
}

/// Minimum-image difference on the periodic box, per axis.
#[inline]
pub fn min_image(d: f64, extent: f64) -> f64 {
    let mut d = d.rem_euclid(extent);
    if d >= 0.5 * extent {
        d -= extent;
    }
    d
}

/// Per-worker Lagrangian store: resident points plus one-step ghost copies.
#[derive(Debug, Default, Clone)]
pub struct IbState {
    pub resident: BTreeMap<u64, IBPoint>,
    pub ghosts: BTreeMap<u64, IBPoint>,
    pub conns: Vec<ForceConnection>,
    pub ghost_conns: Vec<ForceConnection>,
}

impl IbState {
    pub fn new(points: Vec<IBPoint>, mut conns: Vec<ForceConnection>) -> Self {
        conns.sort_by_key(|c| c.key());
        IbState {
            resident: points.into_iter().map(|p| (p.id, p)).collect(),
            ghosts: BTreeMap::new(),
            conns,
            ghost_conns: Vec::new(),
        }
    }

    pub fn lookup(&self, id: u64) -> Option<&IBPoint> {
        self.resident.get(&id).or_else(|| self.ghosts.get(&id))
    }

    /// Visit resident then ghost connections in deterministic key order, the
    /// same global order a serial run would use.
    pub fn for_connections_merged(&self, mut f: impl FnMut(&ForceConnection)) {
        let mut a = self.conns.iter().peekable();
        let mut b = self.ghost_conns.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => {
                    if x.key() <= y.key() {
                        f(a.next().unwrap());
                    } else {
                        f(b.next().unwrap());
                    }
                }
                (Some(_), None) => f(a.next().unwrap()),
                (None, Some(_)) => f(b.next().unwrap()),
                (None, None) => break,
            }
        }
    }
}

/// Interpolate the fluid velocity onto the resident points:
/// `U_k = sum_{grid} u^E delta_h(x^E - X_k) h^d`, each component from its own
/// staggered location.
///
/// `origin` is the global cell index of the local field's `(0,0,0)`.  A point
/// whose support stencil reaches outside the resident-plus-halo region is a
/// hard error: it means the halo width does not cover the kernel support.
pub fn interpolate_velocity(
    points: &mut BTreeMap<u64, IBPoint>,
    u: &MacField,
    spec: &GridSpec,
    origin: [isize; 3],
) -> Result<()> {
    let dim = spec.dim;
    let h = spec.h;
    for p in points.values_mut() {
        let mut vel = [0.0; 3];
        for (c, comp) in u.comps.iter().enumerate() {
            let off = comp.loc.offsets();
            let n = comp.shape();
            let halo = comp.halo();
            let mut base = [0isize; 3];
            let mut w = [[1.0f64; 4]; 3];
            for a in 0..dim {
                let xi = p.x[a] / h - off[a];
                let (gb, wa) = stencil_1d(xi);
                let lb = gb - origin[a];
                if lb < -(halo[a] as isize) || lb + 3 >= (n[a] + halo[a]) as isize {
                    return Err(Error::HaloOverrun(format!(
                        "point {} at {:?}: stencil [{}, {}] outside local range on axis {a}",
                        p.id,
                        p.x,
                        lb,
                        lb + 3
                    )));
                }
                base[a] = lb;
                w[a] = wa;
            }
            let kk = if dim == 3 { 4 } else { 1 };
            let hx = halo[0] as isize;
            let i0 = (base[0] + hx) as usize;
            let mut acc = 0.0;
            for tk in 0..kk {
                let wk = if dim == 3 { w[2][tk] } else { 1.0 };
                let k = if dim == 3 { base[2] + tk as isize } else { 0 };
                for tj in 0..4 {
                    let wjk = w[1][tj] * wk;
                    let row = &comp.row(base[1] + tj as isize, k)[i0..i0 + 4];
                    acc += row[0] * w[0][0] * wjk
                        + row[1] * w[0][1] * wjk
                        + row[2] * w[0][2] * wjk
                        + row[3] * w[0][3] * wjk;
                }
            }
            vel[c] = acc;
        }
        p.u = vel;
    }
    Ok(())
}

/// Evaluate the force density of every resident and ghost connection at the
/// half-step positions.
///
/// `F = sigma' [ d_r (1 - L h_s / |d_r|) - d_l (1 - L h_s / |d_l|) ]` with
/// `d_r = X_r - X_p`, `d_l = X_p - X_l` taken as minimum-image differences on
/// the periodic box and `sigma'` the stored (pre-divided) stiffness.
pub fn compute_force_density(state: &mut IbState, spec: &GridSpec) -> Result<()> {
    let ext = [spec.extent(0), spec.extent(1), spec.extent(2)];
    let dim = spec.dim;

    // Split borrows: connections are mutated, point stores only read.
    let IbState {
        resident,
        ghosts,
        conns,
        ghost_conns,
    } = state;
    let lookup = |id: u64| {
        resident
            .get(&id)
            .or_else(|| ghosts.get(&id))
            .map(|p| p.xh)
    };

    for conn in conns.iter_mut().chain(ghost_conns.iter_mut()) {
        let missing = |what: &str, id: u64| {
            Error::Protocol(format!("connection {what} key {id} unresolved"))
        };
        let xp = lookup(conn.point_id).ok_or_else(|| missing("primary", conn.point_id))?;
        let xl = lookup(conn.l_point_id).ok_or_else(|| missing("left", conn.l_point_id))?;
        let xr = lookup(conn.r_point_id).ok_or_else(|| missing("right", conn.r_point_id))?;
        let mut dr = [0.0; 3];
        let mut dl = [0.0; 3];
        for a in 0..dim {
            dr[a] = min_image(xr[a] - xp[a], ext[a]);
            dl[a] = min_image(xp[a] - xl[a], ext[a]);
        }
        let (tr, tl) = if conn.rest_l == 0.0 {
            (1.0, 1.0)
        } else {
            let tension = |d: &[f64; 3]| -> Result<f64> {
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if len == 0.0 {
                    return Err(Error::Numerical(format!(
                        "degenerate fiber segment at point {} with nonzero rest strain",
                        conn.point_id
                    )));
                }
                Ok(1.0 - conn.rest_l * conn.h_s / len)
            };
            (tension(&dr)?, tension(&dl)?)
        };
        let mut f = [0.0; 3];
        for a in 0..dim {
            f[a] = conn.sigma * (dr[a] * tr - dl[a] * tl);
        }
        conn.fdens = f;
    }
    Ok(())
}

/// Spread force density onto the local interior grid cells:
/// `f^E += F_k delta_h(x^E - X^{n+1/2}_k) h_s` per connection.
///
/// Only cells inside `[origin, origin + n)` (periodically wrapped) receive
/// contributions; a neighbor spreads the same ghost points onto its own side.
pub fn spread_force(
    state: &IbState,
    f: &mut MacField,
    spec: &GridSpec,
    origin: [isize; 3],
) -> Result<()> {
    let dim = spec.dim;
    let h = spec.h;
    let inv_hd = 1.0 / spec.cell_volume();
    let mut missing: Option<u64> = None;
    {
        let comps = &mut f.comps;
        state.for_connections_merged(|conn| {
            if missing.is_some() {
                return;
            }
            let Some(p) = state
                .resident
                .get(&conn.point_id)
                .or_else(|| state.ghosts.get(&conn.point_id))
            else {
                missing = Some(conn.point_id);
                return;
            };
            let scale = conn.h_s * inv_hd;
            let glob = [
                spec.n[0] as isize,
                spec.n[1] as isize,
                spec.n[2] as isize,
            ];
            for (c, comp) in comps.iter_mut().enumerate() {
                let amount = conn.fdens[c] * scale;
                if amount == 0.0 {
                    continue;
                }
                let off = comp.loc.offsets();
                let n = comp.shape();
                let hx = comp.halo()[0] as isize;
                // Hoist the wrapped local indices per axis; -1 marks support
                // nodes outside this subdomain (a neighbor owns them).
                let mut li = [[-1isize; 4]; 3];
                let mut w = [[1.0f64; 4]; 3];
                for a in 0..dim {
                    let xi = p.xh[a] / h - off[a];
                    let (gb, wa) = stencil_1d(xi);
                    w[a] = wa;
                    for (t, slot) in li[a].iter_mut().enumerate() {
                        let g = (gb + t as isize).rem_euclid(glob[a]) - origin[a];
                        if g >= 0 && g < n[a] as isize {
                            *slot = g;
                        }
                    }
                }
                let kk = if dim == 3 { 4 } else { 1 };
                for tk in 0..kk {
                    let (k, wk) = if dim == 3 {
                        (li[2][tk], w[2][tk])
                    } else {
                        (0, 1.0)
                    };
                    if dim == 3 && k < 0 {
                        continue;
                    }
                    for tj in 0..4 {
                        let j = li[1][tj];
                        if j < 0 {
                            continue;
                        }
                        let wjk = w[1][tj] * wk * amount;
                        let row = comp.row_mut(j, k);
                        for ti in 0..4 {
                            let i = li[0][ti];
                            if i >= 0 {
                                row[(i + hx) as usize] += w[0][ti] * wjk;
                            }
                        }
                    }
                }
            }
        });
    }
    if let Some(id) = missing {
        return Err(Error::Protocol(format!(
            "connection references point {id} absent from resident+ghost set"
        )));
    }
    Ok(())
}

/// Advance resident point positions one step.
///
/// `X^{n+1} = X^n + dt (3/2 U^n - 1/2 U^{n-1})` (forward Euler at step 0),
/// `X^{n+1/2} = (X^{n+1} + X^n) / 2`, then `U_prev <- U`.  Positions are
/// wrapped back into the periodic box afterwards.
pub fn evolve_ib(
    points: &mut BTreeMap<u64, IBPoint>,
    dt: f64,
    step_index: usize,
    spec: &GridSpec,
) {
    let ext = [spec.extent(0), spec.extent(1), spec.extent(2)];
    for p in points.values_mut() {
        let mut xn1 = p.x;
        for a in 0..spec.dim {
            let du = if step_index == 0 {
                p.u[a]
            } else {
                1.5 * p.u[a] - 0.5 * p.u_prev[a]
            };
            xn1[a] = p.x[a] + dt * du;
        }
        for a in 0..spec.dim {
            p.xh[a] = wrap_coord(0.5 * (xn1[a] + p.x[a]), ext[a]);
            p.x[a] = wrap_coord(xn1[a], ext[a]);
        }
        p.u_prev = p.u;
    }
}

/// Write a fiber layout: one record per point (`p id x y [z]`) and one per
/// connection (`c pid lid rid sigma L hs`).
pub fn save_fiber_layout(
    path: &Path,
    points: &[IBPoint],
    conns: &[ForceConnection],
    dim: usize,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# fiber layout: dim = {dim}")?;
    for p in points {
        if dim == 3 {
            writeln!(out, "p {} {:.17e} {:.17e} {:.17e}", p.id, p.x[0], p.x[1], p.x[2])?;
        } else {
            writeln!(out, "p {} {:.17e} {:.17e}", p.id, p.x[0], p.x[1])?;
        }
    }
    for c in conns {
        writeln!(
            out,
            "c {} {} {} {:.17e} {:.17e} {:.17e}",
            c.point_id, c.l_point_id, c.r_point_id, c.sigma, c.rest_l, c.h_s
        )?;
    }
    Ok(())
}

/// Read a fiber layout written by [`save_fiber_layout`].
pub fn load_fiber_layout(path: &Path) -> Result<(Vec<IBPoint>, Vec<ForceConnection>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut points = Vec::new();
    let mut conns = Vec::new();
    let bad = |line: &str| Error::Config(format!("bad fiber layout line: {line:?}"));
    for line in file.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        match it.next() {
            Some("p") => {
                let id: u64 = it.next().ok_or_else(|| bad(t))?.parse().map_err(|_| bad(t))?;
                let mut x = [0.0; 3];
                for (a, slot) in x.iter_mut().enumerate() {
                    match it.next() {
                        Some(v) => *slot = v.parse().map_err(|_| bad(t))?,
                        None if a == 2 => break,
                        None => return Err(bad(t)),
                    }
                }
                points.push(IBPoint::at(id, x));
            }
            Some("c") => {
                let mut next = || -> Result<f64> {
                    it.next().ok_or_else(|| bad(t))?.parse().map_err(|_| bad(t))
                };
                let pid = next()? as u64;
                let lid = next()? as u64;
                let rid = next()? as u64;
                let sigma = next()?;
                let rest_l = next()?;
                let h_s = next()?;
                conns.push(ForceConnection::new(pid, lid, rid, sigma, rest_l, h_s));
            }
            _ => return Err(bad(t)),
        }
    }
    Ok((points, conns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac_grid::StaggerLocation;

    fn spec2(n: usize) -> GridSpec {
        GridSpec::square(2, n, 1.0).unwrap()
    }

    #[test]
    fn phi_values() {
        assert!((phi(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(phi(2.0), 0.0);
        assert_eq!(phi(-2.0), 0.0);
        assert_eq!(phi(5.0), 0.0);
        // Continuity at the branch point.
        assert!((phi(1.0 - 1e-12) - phi(1.0)).abs() < 1e-9);
    }

    #[test]
    fn phi_partition_of_unity() {
        // For |r| <= 1 the five translates r-2 .. r+2 cover the support.
        for r in [0.3, 0.0, -0.77, 0.999] {
            let s = phi(r - 1.0) + phi(r) + phi(r + 1.0) + phi(r - 2.0) + phi(r + 2.0);
            assert!((s - 1.0).abs() < 1e-14, "r={r}: sum={s}");
        }
        // Randomized offsets.
        let mut state = 42u64;
        for _ in 0..1000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let r = ((state >> 11) as f64) / ((1u64 << 53) as f64) * 4.0 - 2.0;
            let s: f64 = (-3..=3).map(|j| phi(r - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolate_constant_field() {
        let spec = spec2(16);
        let mut u = MacField::zeros_global(&spec);
        u.comps[0].fill_with(|_, _, _| 3.0);
        u.comps[1].fill_with(|_, _, _| -1.25);
        u.fill_halo_self_periodic();
        let mut pts = BTreeMap::new();
        for (i, x) in [[0.013, 0.51, 0.0], [0.9999, 0.0001, 0.0], [0.5, 0.5, 0.0]]
            .iter()
            .enumerate()
        {
            pts.insert(i as u64, IBPoint::at(i as u64, *x));
        }
        interpolate_velocity(&mut pts, &u, &spec, [0; 3]).unwrap();
        for p in pts.values() {
            assert!((p.u[0] - 3.0).abs() < 1e-13, "{:?}", p.u);
            assert!((p.u[1] + 1.25).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolate_matches_direct_sum() {
        let spec = spec2(32);
        let h = spec.h;
        let mut u = MacField::zeros_global(&spec);
        u.comps[0].sample(h, [0; 3], |x, _, _| (2.0 * std::f64::consts::PI * x).sin());
        u.fill_halo_self_periodic();
        let xp = [0.3371, 0.6123, 0.0];
        let mut pts = BTreeMap::new();
        pts.insert(0, IBPoint::at(0, xp));
        interpolate_velocity(&mut pts, &u, &spec, [0; 3]).unwrap();

        // Independent 16-point weighted sum straight from the definition.
        let off = StaggerLocation::EdgeX.offsets();
        let mut expect = 0.0;
        for j in -2..34isize {
            for i in -2..34isize {
                let xg = (i as f64 + off[0]) * h;
                let yg = (j as f64 + off[1]) * h;
                let w = phi((xg - xp[0]) / h) * phi((yg - xp[1]) / h);
                if w != 0.0 {
                    expect += (2.0 * std::f64::consts::PI * xg).sin() * w;
                }
            }
        }
        assert!((pts[&0].u[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn interpolate_on_sample_point_weight_tableau() {
        let spec = spec2(16);
        let h = spec.h;
        // Basis field: 1 at sample (5, 7) of the u component.
        let mut u = MacField::zeros_global(&spec);
        u.comps[0].set(5, 7, 0, 1.0);
        u.fill_halo_self_periodic();
        let off = StaggerLocation::EdgeX.offsets();
        let xp = [(5.0 + off[0]) * h, (7.0 + off[1]) * h, 0.0];
        let mut pts = BTreeMap::new();
        pts.insert(0, IBPoint::at(0, xp));
        interpolate_velocity(&mut pts, &u, &spec, [0; 3]).unwrap();
        // Point sits exactly on the sample: weight is phi(0)^2 = 1/4.
        assert!((pts[&0].u[0] - 0.25).abs() < 1e-15);

        // Full tableau: weights at the 16 supporting samples sum to 1.
        let (bx, wx) = stencil_1d(xp[0] / h - off[0]);
        let (by, wy) = stencil_1d(xp[1] / h - off[1]);
        let mut total = 0.0;
        for tj in 0..4 {
            for ti in 0..4 {
                total += wx[ti] * wy[tj];
            }
        }
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(bx, 4);
        assert_eq!(by, 6);
    }

    #[test]
    fn force_density_collinear_and_circle() {
        let spec = spec2(16);
        // Three collinear equally spaced points, L = 0: middle force is zero.
        let pts = vec![
            IBPoint::at(0, [0.40, 0.5, 0.0]),
            IBPoint::at(1, [0.45, 0.5, 0.0]),
            IBPoint::at(2, [0.50, 0.5, 0.0]),
        ];
        let conns = vec![ForceConnection::new(1, 0, 2, 7.0, 0.0, 0.1)];
        let mut st = IbState::new(pts, conns);
        compute_force_density(&mut st, &spec).unwrap();
        assert!(st.conns[0].fdens[0].abs() < 1e-14);
        assert!(st.conns[0].fdens[1].abs() < 1e-14);

        // Points on a circle, L = 0, sigma = 1: matches the direct formula
        // sigma (X_{k+1} + X_{k-1} - 2 X_k) / h_s^2 and points radially inward.
        let ns = 24usize;
        let hs = 1.0 / ns as f64;
        let r = 0.25;
        let pos = |k: usize| -> [f64; 3] {
            let th = 2.0 * std::f64::consts::PI * k as f64 * hs;
            [0.5 + r * th.cos(), 0.5 + r * th.sin(), 0.0]
        };
        let pts: Vec<IBPoint> = (0..ns).map(|k| IBPoint::at(k as u64, pos(k))).collect();
        let conns: Vec<ForceConnection> = (0..ns)
            .map(|k| {
                ForceConnection::new(
                    k as u64,
                    ((k + ns - 1) % ns) as u64,
                    ((k + 1) % ns) as u64,
                    1.0 / (hs * hs),
                    0.0,
                    hs,
                )
            })
            .collect();
        let mut st = IbState::new(pts, conns);
        compute_force_density(&mut st, &spec).unwrap();
        for (k, c) in st.conns.iter().enumerate() {
            let k = k as usize;
            let xl = pos((k + ns - 1) % ns);
            let xr = pos((k + 1) % ns);
            let xp = pos(k);
            for a in 0..2 {
                let direct = (xl[a] + xr[a] - 2.0 * xp[a]) / (hs * hs);
                assert!((c.fdens[a] - direct).abs() < 1e-9 * direct.abs().max(1.0));
            }
            // Radially inward: F . (X - center) < 0.
            let dot = c.fdens[0] * (xp[0] - 0.5) + c.fdens[1] * (xp[1] - 0.5);
            assert!(dot < 0.0);
        }
    }

    #[test]
    fn force_density_zero_tension_at_rest() {
        let spec = spec2(16);
        // Segments at exactly the resting strain: |d| = L h_s on both sides.
        let l = 2.0;
        let hs = 0.05;
        let d = l * hs;
        let pts = vec![
            IBPoint::at(0, [0.5 - d, 0.5, 0.0]),
            IBPoint::at(1, [0.5, 0.5, 0.0]),
            IBPoint::at(2, [0.5 + d, 0.5, 0.0]),
        ];
        let conns = vec![ForceConnection::new(1, 0, 2, 3.0, l, hs)];
        let mut st = IbState::new(pts, conns);
        compute_force_density(&mut st, &spec).unwrap();
        assert!(st.conns[0].fdens[0].abs() < 1e-13);
        assert!(st.conns[0].fdens[1].abs() < 1e-13);
    }

    #[test]
    fn force_density_degenerate_segment_errors() {
        let spec = spec2(16);
        let pts = vec![
            IBPoint::at(0, [0.5, 0.5, 0.0]),
            IBPoint::at(1, [0.5, 0.5, 0.0]),
            IBPoint::at(2, [0.6, 0.5, 0.0]),
        ];
        let conns = vec![ForceConnection::new(1, 0, 2, 1.0, 1.0, 0.1)];
        let mut st = IbState::new(pts, conns);
        assert!(compute_force_density(&mut st, &spec).is_err());
    }

    #[test]
    fn spread_conserves_total_force() {
        let spec = spec2(16);
        let hs = 0.01;
        let mut st = IbState::new(
            vec![IBPoint::at(0, [0.337, 0.541, 0.0])],
            vec![ForceConnection::new(0, 0, 0, 0.0, 0.0, hs)],
        );
        st.conns[0].fdens = [1.0, 0.0, 0.0];
        let mut f = MacField::zeros_global(&spec);
        spread_force(&st, &mut f, &spec, [0; 3]).unwrap();
        let mut total = 0.0;
        f.comps[0].for_interior(|_, _, _, v| total += v);
        total *= spec.cell_volume();
        assert!((total - hs).abs() < 1e-15, "total {total} vs {hs}");
    }

    #[test]
    fn spread_symmetric_weights_midway() {
        let spec = spec2(16);
        let h = spec.h;
        // Point midway between two u-samples along x: weights reflect evenly.
        let off = StaggerLocation::EdgeX.offsets();
        let xm = [(4.5 + off[0]) * h, (7.0 + off[1]) * h, 0.0];
        let mut st = IbState::new(
            vec![IBPoint::at(0, xm)],
            vec![ForceConnection::new(0, 0, 0, 0.0, 0.0, 1.0)],
        );
        st.conns[0].fdens = [1.0, 0.0, 0.0];
        let mut f = MacField::zeros_global(&spec);
        spread_force(&st, &mut f, &spec, [0; 3]).unwrap();
        let c = &f.comps[0];
        for d in 0..2isize {
            assert_eq!(c.at(4 - d, 7, 0), c.at(5 + d, 7, 0));
        }
        assert!(c.at(4, 7, 0) > 0.0);
    }

    #[test]
    fn spread_interpolate_adjoint() {
        // h^d sum (spread F) . u  ==  h_s sum F . (interp u), same positions.
        let spec = spec2(16);
        let mut rng_state = 99u64;
        let mut rnd = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(7);
            ((rng_state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut u = MacField::zeros_global(&spec);
        for c in 0..2 {
            u.comps[c].fill_with(|_, _, _| rnd());
        }
        u.fill_halo_self_periodic();

        let hs = 0.02;
        let mut pts = Vec::new();
        let mut conns = Vec::new();
        let mut fvals = Vec::new();
        for k in 0..40u64 {
            let x = [rnd() + 0.5, rnd() + 0.5, 0.0];
            pts.push(IBPoint::at(k, x));
            let mut c = ForceConnection::new(k, k, k, 0.0, 0.0, hs);
            let fv = [rnd(), rnd(), 0.0];
            c.fdens = fv;
            conns.push(c);
            fvals.push(fv);
        }
        let mut st = IbState::new(pts.clone(), conns);
        let mut f = MacField::zeros_global(&spec);
        spread_force(&st, &mut f, &spec, [0; 3]).unwrap();
        let mut lhs = 0.0;
        for c in 0..2 {
            f.comps[c].for_interior(|i, j, k, v| lhs += v * u.comps[c].at(i, j, k));
        }
        lhs *= spec.cell_volume();

        interpolate_velocity(&mut st.resident, &u, &spec, [0; 3]).unwrap();
        let mut rhs = 0.0;
        for (k, fv) in fvals.iter().enumerate() {
            let p = &st.resident[&(k as u64)];
            rhs += fv[0] * p.u[0] + fv[1] * p.u[1];
        }
        rhs *= hs;
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-30),
            "lhs {lhs} rhs {rhs}"
        );
    }

    #[test]
    fn closed_loop_force_sums_to_zero() {
        let spec = spec2(32);
        let ns = 48usize;
        let hs = 1.0 / ns as f64;
        let pts: Vec<IBPoint> = (0..ns)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 * hs;
                IBPoint::at(
                    k as u64,
                    [0.5 + 0.2 * th.cos(), 0.5 + 0.3 * th.sin(), 0.0],
                )
            })
            .collect();
        let conns: Vec<ForceConnection> = (0..ns)
            .map(|k| {
                ForceConnection::new(
                    k as u64,
                    ((k + ns - 1) % ns) as u64,
                    ((k + 1) % ns) as u64,
                    1.0 / (hs * hs),
                    0.0,
                    hs,
                )
            })
            .collect();
        let mut st = IbState::new(pts, conns);
        compute_force_density(&mut st, &spec).unwrap();
        let mut sum = [0.0f64; 2];
        let mut scale = 0.0f64;
        for c in &st.conns {
            sum[0] += c.fdens[0] * hs;
            sum[1] += c.fdens[1] * hs;
            scale += (c.fdens[0].abs() + c.fdens[1].abs()) * hs;
        }
        assert!(sum[0].abs() <= 1e-12 * scale.max(1.0));
        assert!(sum[1].abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn evolve_constant_velocity() {
        let spec = spec2(16);
        let mut pts = BTreeMap::new();
        let mut p = IBPoint::at(0, [0.5, 0.5, 0.0]);
        p.u = [2.0, -1.0, 0.0];
        p.u_prev = [2.0, -1.0, 0.0];
        pts.insert(0, p);
        evolve_ib(&mut pts, 0.1, 5, &spec);
        let q = &pts[&0];
        assert!((q.x[0] - 0.7).abs() < 1e-15);
        assert!((q.x[1] - 0.4).abs() < 1e-15);
        assert!((q.xh[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn evolve_euler_startup_and_ab2() {
        let spec = spec2(16);
        let mut pts = BTreeMap::new();
        let mut p = IBPoint::at(0, [0.2, 0.2, 0.0]);
        p.u = [1.0, 0.0, 0.0];
        pts.insert(0, p);
        // Step 0: forward Euler regardless of u_prev.
        evolve_ib(&mut pts, 0.1, 0, &spec);
        assert!((pts[&0].x[0] - 0.3).abs() < 1e-15);
        assert_eq!(pts[&0].u_prev, [1.0, 0.0, 0.0]);

        // AB2: U = (1,0), U_prev = (0,0), dt = 0.1 => dX = 0.15.
        let mut p = IBPoint::at(1, [0.2, 0.2, 0.0]);
        p.u = [1.0, 0.0, 0.0];
        p.u_prev = [0.0, 0.0, 0.0];
        pts.clear();
        pts.insert(1, p);
        evolve_ib(&mut pts, 0.1, 3, &spec);
        assert!((pts[&1].x[0] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn fiber_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fibers.txt");
        let pts = vec![IBPoint::at(3, [0.25, 0.75, 0.0]), IBPoint::at(4, [0.5, 0.5, 0.0])];
        let conns = vec![ForceConnection::new(3, 4, 4, 2.5, 0.0, 0.125)];
        save_fiber_layout(&path, &pts, &conns, 2).unwrap();
        let (p2, c2) = load_fiber_layout(&path).unwrap();
        assert_eq!(p2.len(), 2);
        assert_eq!(p2[0].x, [0.25, 0.75, 0.0]);
        assert_eq!(c2.len(), 1);
        assert_eq!(c2[0].sigma, 2.5);
        assert_eq!(c2[0].h_s, 0.125);
    }
}
