//! Periodic uniform MAC grid: staggered fields and finite-difference
//! operators.
//!
//! Velocity components live on cell edges (`u` on x-normal edges, `v` on
//! y-normal edges, `w` on z-normal faces in 3D), scalars at cell centers.
//! Index `(i, j, k)` wraps periodically; the only boundary rule is `i mod N`.
//! Fields carry a halo strip (width 2, the delta-kernel support) so stencils
//! and kernel sums never branch on the boundary; halos are filled either from
//! the field's own periodic wrap (serial) or by neighbor exchange (parallel).

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

/// Halo width used throughout: the support radius of the 4-point delta kernel.
pub const HALO_WIDTH: usize = 2;

/// Uniform periodic grid geometry.
///
/// All axes share the mesh width `h`; the physical extent of axis `a` is
/// `n[a] * h`, so `h * N = H` holds exactly in the stored representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    /// Cells per axis; `n[2] == 1` in 2D.
    pub n: [usize; 3],
    /// Mesh width.
    pub h: f64,
}

impl GridSpec {
    /// Square (cubic) domain with `n_side` cells per axis and side length `side`.
    pub fn square(dim: usize, n_side: usize, side: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dim must be 2 or 3, got {dim}")));
        }
        let mut n = [1usize; 3];
        for slot in n.iter_mut().take(dim) {
            *slot = n_side;
        }
        Self::with_counts(dim, n, side / n_side as f64)
    }

    /// Grid with per-axis cell counts and a common mesh width.
    pub fn with_counts(dim: usize, n: [usize; 3], h: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dim must be 2 or 3, got {dim}")));
        }
        if dim == 2 && n[2] != 1 {
            return Err(Error::Config("2D grid must have n[2] == 1".into()));
        }
        for a in 0..dim {
            if n[a] < 4 {
                return Err(Error::Config(format!(
                    "need at least 4 cells per axis for the delta kernel support, got {}",
                    n[a]
                )));
            }
        }
        if !(h > 0.0) {
            return Err(Error::Config(format!("mesh width must be positive, got {h}")));
        }
        Ok(GridSpec { dim, n, h })
    }

    /// Physical extent of `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        self.n[axis] as f64 * self.h
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Domain center, used by radius diagnostics.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = 0.5 * self.extent(a);
        }
        c
    }
}

/// Where a sample lives within a cell.
///
/// Every operator declares its input/output locations; mismatches are
/// programming errors and are rejected by assertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaggerLocation {
    Center,
    EdgeX,
    EdgeY,
    EdgeZ,
}

impl StaggerLocation {
    /// Edge location whose normal is `axis`.
    pub fn edge(axis: usize) -> Self {
        match axis {
            0 => StaggerLocation::EdgeX,
            1 => StaggerLocation::EdgeY,
            2 => StaggerLocation::EdgeZ,
            _ => unreachable!("axis out of range"),
        }
    }

    /// Sub-cell offset of this location in units of `h`.
    ///
    /// Sample `(i, j, k)` sits at `((i + off[0]) h, (j + off[1]) h, ...)`;
    /// e.g. `u[i][j]` at `(i h, (j + 1/2) h)`.
    pub fn offsets(&self) -> [f64; 3] {
        match self {
            StaggerLocation::Center => [0.5, 0.5, 0.5],
            StaggerLocation::EdgeX => [0.0, 0.5, 0.5],
            StaggerLocation::EdgeY => [0.5, 0.0, 0.5],
            StaggerLocation::EdgeZ => [0.5, 0.5, 0.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StaggerLocation::Center => "center",
            StaggerLocation::EdgeX => "edge_x",
            StaggerLocation::EdgeY => "edge_y",
            StaggerLocation::EdgeZ => "edge_z",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "center" => StaggerLocation::Center,
            "edge_x" => StaggerLocation::EdgeX,
            "edge_y" => StaggerLocation::EdgeY,
            "edge_z" => StaggerLocation::EdgeZ,
            _ => return Err(Error::Config(format!("unknown stagger location {s:?}"))),
        })
    }
}

/// One staggered component: an interior block plus halo strips.
///
/// Interior indices run over `[0, n)` per axis; signed indices reach into the
/// halo (`[-halo, n + halo)`).  Storage is x-fastest.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub loc: StaggerLocation,
    n: [usize; 3],
    halo: [usize; 3],
    stride: [usize; 3],
    data: Vec<f64>,
}

impl ScalarField {
    /// Zero field of the given interior shape with the standard halo.
    pub fn zeros(loc: StaggerLocation, n: [usize; 3], dim: usize) -> Self {
        let halo = if dim == 3 {
            [HALO_WIDTH; 3]
        } else {
            [HALO_WIDTH, HALO_WIDTH, 0]
        };
        let px = n[0] + 2 * halo[0];
        let py = n[1] + 2 * halo[1];
        let pz = n[2] + 2 * halo[2];
        ScalarField {
            loc,
            n,
            halo,
            stride: [1, px, px * py],
            data: vec![0.0; px * py * pz],
        }
    }

    /// Zero field covering the whole grid.
    pub fn zeros_global(loc: StaggerLocation, spec: &GridSpec) -> Self {
        Self::zeros(loc, spec.n, spec.dim)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn halo(&self) -> [usize; 3] {
        self.halo
    }

    #[inline(always)]
    fn offset(&self, i: isize, j: isize, k: isize) -> usize {
        debug_assert!(i >= -(self.halo[0] as isize) && i < (self.n[0] + self.halo[0]) as isize);
        debug_assert!(j >= -(self.halo[1] as isize) && j < (self.n[1] + self.halo[1]) as isize);
        debug_assert!(k >= -(self.halo[2] as isize) && k < (self.n[2] + self.halo[2]) as isize);
        let ii = (i + self.halo[0] as isize) as usize;
        let jj = (j + self.halo[1] as isize) as usize;
        let kk = (k + self.halo[2] as isize) as usize;
        ii * self.stride[0] + jj * self.stride[1] + kk * self.stride[2]
    }

    #[inline(always)]
    pub fn at(&self, i: isize, j: isize, k: isize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: isize, j: isize, k: isize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    #[inline(always)]
    pub fn add(&mut self, i: isize, j: isize, k: isize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] += v;
    }

    /// Shared padded row at `(j, k)`: entries for `i` in `[-halo_x, n+halo_x)`.
    #[inline]
    pub fn row(&self, j: isize, k: isize) -> &[f64] {
        let start = self.offset(-(self.halo[0] as isize), j, k);
        let len = self.n[0] + 2 * self.halo[0];
        &self.data[start..start + len]
    }

    /// Mutable padded row at `(j, k)`.
    #[inline]
    pub fn row_mut(&mut self, j: isize, k: isize) -> &mut [f64] {
        let start = self.offset(-(self.halo[0] as isize), j, k);
        let len = self.n[0] + 2 * self.halo[0];
        &mut self.data[start..start + len]
    }

    /// Visit every interior sample.
    pub fn for_interior(&self, mut f: impl FnMut(isize, isize, isize, f64)) {
        for k in 0..self.n[2] as isize {
            for j in 0..self.n[1] as isize {
                for i in 0..self.n[0] as isize {
                    f(i, j, k, self.at(i, j, k));
                }
            }
        }
    }

    /// Overwrite every interior sample with `f(i, j, k)`.
    pub fn fill_with(&mut self, mut f: impl FnMut(isize, isize, isize) -> f64) {
        for k in 0..self.n[2] as isize {
            for j in 0..self.n[1] as isize {
                for i in 0..self.n[0] as isize {
                    self.set(i, j, k, f(i, j, k));
                }
            }
        }
    }

    /// Sample an analytic function at this field's physical sample points.
    ///
    /// `origin` is the global cell index of local `(0, 0, 0)`; pass `[0; 3]`
    /// for whole-domain fields.
    pub fn sample(&mut self, h: f64, origin: [isize; 3], f: impl Fn(f64, f64, f64) -> f64) {
        let off = self.loc.offsets();
        self.fill_with(|i, j, k| {
            let x = ((origin[0] + i) as f64 + off[0]) * h;
            let y = ((origin[1] + j) as f64 + off[1]) * h;
            let z = ((origin[2] + k) as f64 + off[2]) * h;
            f(x, y, z)
        });
    }

    /// Fill all halo strips from this field's own periodic wrap.
    ///
    /// Axis order x, y, z so that corner cells pick up already-filled strips,
    /// matching the two-phase neighbor exchange exactly.
    pub fn fill_halo_self_periodic(&mut self) {
        for axis in 0..3 {
            let w = self.halo[axis] as isize;
            if w == 0 {
                continue;
            }
            let n = self.n[axis] as isize;
            let pad = |a: usize| -> (isize, isize) {
                (-(self.halo[a] as isize), (self.n[a] + self.halo[a]) as isize)
            };
            let (x0, x1) = pad(0);
            let (y0, y1) = pad(1);
            let (z0, z1) = pad(2);
            for k in z0..z1 {
                for j in y0..y1 {
                    for i in x0..x1 {
                        let c = [i, j, k][axis];
                        if c >= 0 && c < n {
                            continue;
                        }
                        let mut src = [i, j, k];
                        src[axis] = c.rem_euclid(n);
                        let v = self.at(src[0], src[1], src[2]);
                        self.set(i, j, k, v);
                    }
                }
            }
        }
    }

    /// Copy a rectangular sub-block (signed bounds, halo reachable) into a
    /// flat buffer, x-fastest.
    pub fn extract(&self, lo: [isize; 3], hi: [isize; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as usize,
        );
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    out.push(self.at(i, j, k));
                }
            }
        }
        out
    }

    /// Inverse of [`ScalarField::extract`].
    pub fn insert(&mut self, lo: [isize; 3], hi: [isize; 3], buf: &[f64]) {
        let mut it = buf.iter();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    self.set(i, j, k, *it.next().expect("buffer too short"));
                }
            }
        }
        assert!(it.next().is_none(), "buffer too long");
    }

    /// Interior values as a flat vector (x-fastest), halos excluded.
    pub fn interior(&self) -> Vec<f64> {
        self.extract([0, 0, 0], [self.n[0] as isize, self.n[1] as isize, self.n[2] as isize])
    }

    /// Max absolute interior value.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.for_interior(|_, _, _, v| m = m.max(v.abs()));
        m
    }
}

/// Staggered velocity field: one [`ScalarField`] per component, each on its
/// own edge location.
#[derive(Debug, Clone)]
pub struct MacField {
    pub comps: Vec<ScalarField>,
}

impl MacField {
    pub fn zeros(n: [usize; 3], dim: usize) -> Self {
        let comps = (0..dim)
            .map(|a| ScalarField::zeros(StaggerLocation::edge(a), n, dim))
            .collect();
        MacField { comps }
    }

    pub fn zeros_global(spec: &GridSpec) -> Self {
        Self::zeros(spec.n, spec.dim)
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn fill_halo_self_periodic(&mut self) {
        for c in &mut self.comps {
            c.fill_halo_self_periodic();
        }
    }

    /// Max absolute value over all components.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }
}

const UNIT: [[isize; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

#[inline(always)]
fn shifted(i: isize, j: isize, k: isize, axis: usize, d: isize) -> (isize, isize, isize) {
    let e = UNIT[axis];
    (i + e[0] * d, j + e[1] * d, k + e[2] * d)
}

/// Second-order centered second difference along `axis`:
/// `(f[k+1] - 2 f[k] + f[k-1]) / h^2`, periodic through the halo.
///
/// Output shares the input's stagger location; its halo is left unfilled.
pub fn second_difference(f: &ScalarField, axis: usize, h: f64, dim: usize) -> Result<ScalarField> {
    if axis >= dim {
        return Err(Error::Config(format!("axis {axis} out of range for dim {dim}")));
    }
    let mut out = ScalarField::zeros(f.loc, f.shape(), dim);
    let h2 = h * h;
    out.fill_with(|i, j, k| {
        let (im, jm, km) = shifted(i, j, k, axis, -1);
        let (ip, jp, kp) = shifted(i, j, k, axis, 1);
        (f.at(ip, jp, kp) - 2.0 * f.at(i, j, k) + f.at(im, jm, km)) / h2
    });
    Ok(out)
}

/// Sum of second differences over all axes (the full stencil Laplacian).
pub fn laplacian(f: &ScalarField, h: f64, dim: usize) -> ScalarField {
    let mut out = second_difference(f, 0, h, dim).expect("axis 0 is always valid");
    for axis in 1..dim {
        let d = second_difference(f, axis, h, dim).expect("axis checked");
        for k in 0..out.shape()[2] as isize {
            for j in 0..out.shape()[1] as isize {
                for i in 0..out.shape()[0] as isize {
                    out.add(i, j, k, d.at(i, j, k));
                }
            }
        }
    }
    out
}

/// Discrete gradient, cell centers to edges:
/// x-component `(p[i,j] - p[i-1,j]) / h` at x-normal edges, etc.
pub fn gradient_center_to_edge(p: &ScalarField, h: f64, dim: usize) -> MacField {
    assert_eq!(p.loc, StaggerLocation::Center, "gradient input must be cell-centered");
    let mut out = MacField::zeros(p.shape(), dim);
    for a in 0..dim {
        out.comps[a].fill_with(|i, j, k| {
            let (im, jm, km) = shifted(i, j, k, a, -1);
            (p.at(i, j, k) - p.at(im, jm, km)) / h
        });
    }
    out
}

/// Discrete divergence, edges to cell centers:
/// `(u[i+1,j] - u[i,j]) / h + (v[i,j+1] - v[i,j]) / h (+ z term)`.
pub fn divergence_edge_to_center(u: &MacField, h: f64, dim: usize) -> ScalarField {
    debug_assert_eq!(u.dim(), dim);
    for a in 0..dim {
        assert_eq!(u.comps[a].loc, StaggerLocation::edge(a), "component on wrong edge");
    }
    let mut out = ScalarField::zeros(StaggerLocation::Center, u.comps[0].shape(), dim);
    out.fill_with(|i, j, k| {
        let mut d = 0.0;
        for a in 0..dim {
            let (ip, jp, kp) = shifted(i, j, k, a, 1);
            d += (u.comps[a].at(ip, jp, kp) - u.comps[a].at(i, j, k)) / h;
        }
        d
    });
    out
}

/// Skew-symmetric advection term `N(u) = 1/2 u.grad(u) + 1/2 div(u u)` via
/// second-order symmetric interpolation on the staggered grid.
///
/// Transport velocities are averaged to the flux location; the divergence
/// form uses products of two-point averages and the advective form centered
/// differences of two-point averages.  This pairing cancels exactly under the
/// discrete energy sum for any periodic field, which is the property the
/// scheme is chosen for.
pub fn advection_skew(u: &MacField, h: f64, dim: usize) -> MacField {
    let mut out = MacField::zeros(u.comps[0].shape(), dim);
    for c in 0..dim {
        let uc = &u.comps[c];
        out.comps[c].fill_with(|i, j, k| {
            let mut acc = 0.0;
            for a in 0..dim {
                let (im, jm, km) = shifted(i, j, k, a, -1);
                let (ip, jp, kp) = shifted(i, j, k, a, 1);
                let cm = uc.at(im, jm, km);
                let c0 = uc.at(i, j, k);
                let cp = uc.at(ip, jp, kp);
                let (t0, t1) = if a == c {
                    // Aligned: transport is the component itself, averaged to
                    // the adjacent cell centers.
                    (0.5 * (cm + c0), 0.5 * (c0 + cp))
                } else {
                    // Transverse: bring the axis-a component to the shared
                    // corner by averaging along this component's axis.
                    let t = &u.comps[a];
                    let (ic, jc, kc) = shifted(i, j, k, c, -1);
                    let t0 = 0.5 * (t.at(ic, jc, kc) + t.at(i, j, k));
                    let (ica, jca, kca) = shifted(ic, jc, kc, a, 1);
                    let t1 = 0.5 * (t.at(ica, jca, kca) + t.at(ip, jp, kp));
                    (t0, t1)
                };
                let b0 = 0.5 * (cm + c0);
                let b1 = 0.5 * (c0 + cp);
                let div = (t1 * b1 - t0 * b0) / h;
                let adv = 0.5 * (t1 * (cp - c0) + t0 * (c0 - cm)) / h;
                acc += 0.5 * (div + adv);
            }
            acc
        });
    }
    out
}

/// Write one component as a flat little-endian f64 array (interior only,
/// x-fastest) plus a plain-text sidecar header.
pub fn dump_field(
    dir: &Path,
    name: &str,
    f: &ScalarField,
    spec: &GridSpec,
    time: f64,
    step: usize,
) -> Result<()> {
    let n = f.shape();
    let mut raw = Vec::with_capacity(n[0] * n[1] * n[2] * 8);
    for v in f.interior() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(format!("{name}.f64")), raw)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "component = {name}");
    let _ = writeln!(meta, "location = {}", f.loc.name());
    let _ = writeln!(meta, "dim = {}", spec.dim);
    let _ = writeln!(meta, "nx = {}", n[0]);
    let _ = writeln!(meta, "ny = {}", n[1]);
    let _ = writeln!(meta, "nz = {}", n[2]);
    let _ = writeln!(meta, "h = {:.17e}", spec.h);
    let _ = writeln!(meta, "H = {:.17e}", spec.extent(0));
    let _ = writeln!(meta, "time = {time:.17e}");
    let _ = writeln!(meta, "step = {step}");
    let _ = writeln!(meta, "layout = x-fastest");
    std::fs::write(dir.join(format!("{name}.meta")), meta)?;
    Ok(())
}

/// Read a component dumped by [`dump_field`].
pub fn load_field(dir: &Path, name: &str) -> Result<(ScalarField, usize)> {
    let meta = std::fs::read_to_string(dir.join(format!("{name}.meta")))?;
    let mut loc = None;
    let mut dim = 0usize;
    let mut n = [0usize; 3];
    let mut step = 0usize;
    for line in meta.lines() {
        let Some((key, val)) = line.split_once('=') else { continue };
        let (key, val) = (key.trim(), val.trim());
        match key {
            "location" => loc = Some(StaggerLocation::from_name(val)?),
            "dim" => dim = val.parse().map_err(|_| Error::Config("bad dim".into()))?,
            "nx" => n[0] = val.parse().map_err(|_| Error::Config("bad nx".into()))?,
            "ny" => n[1] = val.parse().map_err(|_| Error::Config("bad ny".into()))?,
            "nz" => n[2] = val.parse().map_err(|_| Error::Config("bad nz".into()))?,
            "step" => step = val.parse().map_err(|_| Error::Config("bad step".into()))?,
            _ => {}
        }
    }
    let loc = loc.ok_or_else(|| Error::Config("sidecar missing location".into()))?;
    let mut raw = Vec::new();
    std::fs::File::open(dir.join(format!("{name}.f64")))?.read_to_end(&mut raw)?;
    if raw.len() != n[0] * n[1] * n[2] * 8 {
        return Err(Error::Config(format!(
            "field file size {} does not match {}x{}x{}",
            raw.len(),
            n[0],
            n[1],
            n[2]
        )));
    }
    let vals: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut f = ScalarField::zeros(loc, n, dim);
    f.insert([0, 0, 0], [n[0] as isize, n[1] as isize, n[2] as isize], &vals);
    Ok((f, step))
}

/// Convenience writer used by the run loop: all velocity components plus any
/// named scalars.
pub fn dump_state(
    dir: &Path,
    u: &MacField,
    scalars: &[(&str, &ScalarField)],
    spec: &GridSpec,
    time: f64,
    step: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = ["u", "v", "w"];
    for (a, c) in u.comps.iter().enumerate() {
        dump_field(dir, names[a], c, spec, time, step)?;
    }
    for (name, f) in scalars {
        dump_field(dir, name, f, spec, time, step)?;
    }
    let mut file = std::fs::File::create(dir.join("MANIFEST"))?;
    writeln!(file, "step = {step}")?;
    writeln!(file, "time = {time:.17e}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec2(n: usize) -> GridSpec {
        GridSpec::square(2, n, 1.0).unwrap()
    }

    fn rand_field(loc: StaggerLocation, spec: &GridSpec, seed: u64) -> ScalarField {
        // Small deterministic LCG; plenty for stencil tests.
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut f = ScalarField::zeros_global(loc, spec);
        f.fill_with(|_, _, _| next());
        f.fill_halo_self_periodic();
        f
    }

    #[test]
    fn second_difference_annihilates_constants() {
        let spec = spec2(8);
        let mut f = ScalarField::zeros_global(StaggerLocation::Center, &spec);
        f.fill_with(|_, _, _| 3.25);
        f.fill_halo_self_periodic();
        let d = second_difference(&f, 0, spec.h, 2).unwrap();
        d.for_interior(|_, _, _, v| assert_eq!(v, 0.0));
    }

    #[test]
    fn second_difference_discrete_eigenfunction() {
        // sin(2 pi x) is an exact eigenfunction of the periodic stencil with
        // eigenvalue -(2 - 2 cos(2 pi h)) / h^2.
        let spec = spec2(64);
        let h = spec.h;
        let mut f = ScalarField::zeros_global(StaggerLocation::EdgeX, &spec);
        f.sample(h, [0; 3], |x, _, _| (2.0 * PI * x).sin());
        f.fill_halo_self_periodic();
        let d = second_difference(&f, 0, h, 2).unwrap();
        let lambda = -(2.0 - 2.0 * (2.0 * PI * h).cos()) / (h * h);
        d.for_interior(|i, j, k, v| {
            assert!((v - lambda * f.at(i, j, k)).abs() <= 1e-12 * lambda.abs());
        });
    }

    #[test]
    fn second_difference_hand_wrap() {
        let spec = GridSpec::with_counts(2, [4, 4, 1], 1.0).unwrap();
        let mut f = ScalarField::zeros_global(StaggerLocation::Center, &spec);
        f.fill_with(|i, _, _| if i == 0 { 1.0 } else { 0.0 });
        f.fill_halo_self_periodic();
        let d = second_difference(&f, 0, 1.0, 2).unwrap();
        let expect = [-2.0, 1.0, 0.0, 1.0];
        for i in 0..4 {
            assert_eq!(d.at(i, 0, 0), expect[i as usize]);
        }
    }

    #[test]
    fn second_difference_rejects_bad_axis() {
        let spec = spec2(8);
        let f = ScalarField::zeros_global(StaggerLocation::Center, &spec);
        assert!(second_difference(&f, 2, spec.h, 2).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let spec = spec2(8);
        let mut p = ScalarField::zeros_global(StaggerLocation::Center, &spec);
        p.fill_with(|_, _, _| -1.5);
        p.fill_halo_self_periodic();
        let g = gradient_center_to_edge(&p, spec.h, 2);
        for c in &g.comps {
            c.for_interior(|_, _, _, v| assert_eq!(v, 0.0));
        }
    }

    #[test]
    fn gradient_matches_direct_evaluation() {
        let spec = spec2(32);
        let h = spec.h;
        let mut p = ScalarField::zeros_global(StaggerLocation::Center, &spec);
        p.sample(h, [0; 3], |x, _, _| (2.0 * PI * x).sin());
        p.fill_halo_self_periodic();
        let g = gradient_center_to_edge(&p, h, 2);
        // Direct evaluation of the same one-sided difference.
        g.comps[0].for_interior(|i, _j, _, v| {
            let xc = |i: isize| ((i.rem_euclid(32)) as f64 + 0.5) * h;
            let expect = ((2.0 * PI * xc(i)).sin() - (2.0 * PI * xc(i - 1)).sin()) / h;
            assert!((v - expect).abs() < 1e-13);
        });
    }

    #[test]
    fn div_grad_is_five_point_laplacian() {
        let spec = spec2(16);
        let mut p = rand_field(StaggerLocation::Center, &spec, 7);
        p.fill_halo_self_periodic();
        let mut g = gradient_center_to_edge(&p, spec.h, 2);
        g.fill_halo_self_periodic();
        let dg = divergence_edge_to_center(&g, spec.h, 2);
        let lap = laplacian(&p, spec.h, 2);
        dg.for_interior(|i, j, k, v| {
            assert!((v - lap.at(i, j, k)).abs() <= 1e-10 * lap.max_abs().max(1.0));
        });
    }

    #[test]
    fn divergence_constant_and_telescoping() {
        let spec = spec2(16);
        let mut u = MacField::zeros_global(&spec);
        for c in &mut u.comps {
            c.fill_with(|_, _, _| 2.0);
        }
        u.fill_halo_self_periodic();
        let d = divergence_edge_to_center(&u, spec.h, 2);
        d.for_interior(|_, _, _, v| assert_eq!(v, 0.0));

        // Any periodic field telescopes to zero total divergence.
        let mut u = MacField::zeros_global(&spec);
        u.comps[0] = rand_field(StaggerLocation::EdgeX, &spec, 1);
        u.comps[1] = rand_field(StaggerLocation::EdgeY, &spec, 2);
        u.fill_halo_self_periodic();
        let d = divergence_edge_to_center(&u, spec.h, 2);
        let mut total = 0.0;
        d.for_interior(|_, _, _, v| total += v);
        assert!(total.abs() < 1e-11);
    }

    #[test]
    fn divergence_of_sine_second_order() {
        // u = sin(2 pi x), v = 0: divergence approximates 2 pi cos(2 pi x^c)
        // to O(h^2).
        let mut errs = Vec::new();
        for n in [32, 64] {
            let spec = spec2(n);
            let h = spec.h;
            let mut u = MacField::zeros_global(&spec);
            u.comps[0].sample(h, [0; 3], |x, _, _| (2.0 * PI * x).sin());
            u.fill_halo_self_periodic();
            let d = divergence_edge_to_center(&u, h, 2);
            let mut e: f64 = 0.0;
            d.for_interior(|i, _, _, v| {
                let xc = (i as f64 + 0.5) * h;
                e = e.max((v - 2.0 * PI * (2.0 * PI * xc).cos()).abs());
            });
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5, "expected ~4x error drop, got {errs:?}");
    }

    #[test]
    fn advection_of_uniform_flow_vanishes() {
        let spec = spec2(16);
        let mut u = MacField::zeros_global(&spec);
        u.comps[0].fill_with(|_, _, _| 1.0);
        u.comps[1].fill_with(|_, _, _| -0.5);
        u.fill_halo_self_periodic();
        let n = advection_skew(&u, spec.h, 2);
        assert_eq!(n.max_abs(), 0.0);
    }

    #[test]
    fn advection_energy_neutral_2d() {
        for seed in 0..6 {
            let spec = spec2(if seed % 2 == 0 { 16 } else { 64 });
            let mut u = MacField::zeros_global(&spec);
            u.comps[0] = rand_field(StaggerLocation::EdgeX, &spec, 100 + seed);
            u.comps[1] = rand_field(StaggerLocation::EdgeY, &spec, 200 + seed);
            u.fill_halo_self_periodic();
            let n = advection_skew(&u, spec.h, 2);
            let mut dot = 0.0;
            let mut scale = 0.0;
            for c in 0..2 {
                u.comps[c].for_interior(|i, j, k, v| {
                    dot += v * n.comps[c].at(i, j, k);
                    scale += (v * n.comps[c].at(i, j, k)).abs();
                });
            }
            assert!(
                dot.abs() <= 1e-12 * scale.max(1.0),
                "energy leak {dot} vs scale {scale}"
            );
        }
    }

    #[test]
    fn advection_energy_neutral_3d() {
        let spec = GridSpec::square(3, 8, 1.0).unwrap();
        let mut u = MacField::zeros_global(&spec);
        for c in 0..3 {
            u.comps[c] = rand_field(StaggerLocation::edge(c), &spec, 300 + c as u64);
        }
        u.fill_halo_self_periodic();
        let n = advection_skew(&u, spec.h, 3);
        let mut dot = 0.0;
        let mut scale = 0.0;
        for c in 0..3 {
            u.comps[c].for_interior(|i, j, k, v| {
                dot += v * n.comps[c].at(i, j, k);
                scale += (v * n.comps[c].at(i, j, k)).abs();
            });
        }
        assert!(dot.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn advection_converges_to_taylor_green_transport() {
        // For u = (sin2pix cos2piy, -cos2pix sin2piy), u.grad(u) is known
        // analytically; N(u) should converge at second order.
        // u.grad(u) collapses to (2 pi sin cos(2 pi x), 2 pi sin cos(2 pi y)).
        let exact = |x: f64, y: f64, comp: usize| -> f64 {
            match comp {
                0 => 2.0 * PI * (2.0 * PI * x).sin() * (2.0 * PI * x).cos(),
                _ => 2.0 * PI * (2.0 * PI * y).sin() * (2.0 * PI * y).cos(),
            }
        };
        let mut errs = Vec::new();
        for n in [32, 64] {
            let spec = spec2(n);
            let h = spec.h;
            let mut u = MacField::zeros_global(&spec);
            u.comps[0].sample(h, [0; 3], |x, y, _| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
            u.comps[1].sample(h, [0; 3], |x, y, _| -(2.0 * PI * x).cos() * (2.0 * PI * y).sin());
            u.fill_halo_self_periodic();
            let nu = advection_skew(&u, h, 2);
            let off0 = StaggerLocation::EdgeX.offsets();
            let mut e: f64 = 0.0;
            nu.comps[0].for_interior(|i, j, _, v| {
                let x = (i as f64 + off0[0]) * h;
                let y = (j as f64 + off0[1]) * h;
                e = e.max((v - exact(x, y, 0)).abs());
            });
            let off1 = StaggerLocation::EdgeY.offsets();
            nu.comps[1].for_interior(|i, j, _, v| {
                let x = (i as f64 + off1[0]) * h;
                let y = (j as f64 + off1[1]) * h;
                e = e.max((v - exact(x, y, 1)).abs());
            });
            errs.push(e);
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.7, "advection convergence rate {rate}, errors {errs:?}");
    }

    #[test]
    fn operators_commute_with_periodic_shift() {
        let spec = spec2(12);
        let shift = |f: &ScalarField| -> ScalarField {
            let mut g = ScalarField::zeros_global(f.loc, &spec);
            g.fill_with(|i, j, k| f.at((i + 1).rem_euclid(12), j, k));
            g.fill_halo_self_periodic();
            g
        };
        let mut u = MacField::zeros_global(&spec);
        u.comps[0] = rand_field(StaggerLocation::EdgeX, &spec, 11);
        u.comps[1] = rand_field(StaggerLocation::EdgeY, &spec, 12);
        u.fill_halo_self_periodic();

        let n_then_shift = {
            let n = advection_skew(&u, spec.h, 2);
            (shift(&n.comps[0]), shift(&n.comps[1]))
        };
        let shift_then_n = {
            let mut us = MacField::zeros_global(&spec);
            us.comps[0] = shift(&u.comps[0]);
            us.comps[1] = shift(&u.comps[1]);
            us.fill_halo_self_periodic();
            advection_skew(&us, spec.h, 2)
        };
        n_then_shift.0.for_interior(|i, j, k, v| {
            assert_eq!(v, shift_then_n.comps[0].at(i, j, k));
        });
        n_then_shift.1.for_interior(|i, j, k, v| {
            assert_eq!(v, shift_then_n.comps[1].at(i, j, k));
        });
    }

    #[test]
    fn second_differences_commute_across_axes() {
        let spec = spec2(16);
        let p = rand_field(StaggerLocation::Center, &spec, 21);
        let mut dx = second_difference(&p, 0, spec.h, 2).unwrap();
        dx.fill_halo_self_periodic();
        let dxy = second_difference(&dx, 1, spec.h, 2).unwrap();
        let mut dy = second_difference(&p, 1, spec.h, 2).unwrap();
        dy.fill_halo_self_periodic();
        let dyx = second_difference(&dy, 0, spec.h, 2).unwrap();
        let scale = dxy.max_abs().max(1.0);
        dxy.for_interior(|i, j, k, v| {
            assert!((v - dyx.at(i, j, k)).abs() <= 1e-12 * scale);
        });
    }

    #[test]
    fn dump_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec2(8);
        let f = rand_field(StaggerLocation::EdgeY, &spec, 5);
        dump_field(dir.path(), "v", &f, &spec, 0.25, 17).unwrap();
        let (g, step) = load_field(dir.path(), "v").unwrap();
        assert_eq!(step, 17);
        assert_eq!(g.loc, StaggerLocation::EdgeY);
        f.for_interior(|i, j, k, v| assert_eq!(v, g.at(i, j, k)));
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::square(2, 3, 1.0).is_err());
        assert!(GridSpec::square(4, 8, 1.0).is_err());
        let s = GridSpec::square(2, 64, 1.0).unwrap();
        assert_eq!(s.h * s.n[0] as f64, 1.0);
    }
}
