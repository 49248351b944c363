//! Error norms, grid-transfer restriction, convergence-rate estimation, and
//! the per-run diagnostics record.

use crate::error::{Error, Result};
use crate::ib::{min_image, IBPoint};
use crate::mac_grid::{GridSpec, MacField, ScalarField, StaggerLocation};

/// One diagnostics sample.  Wall-clock phase timings are reported separately
/// (see the run timing output) so this record, and the CSV built from it,
/// stays byte-identical between runs of the same configuration.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub max_radius: f64,
    pub mean_radius: f64,
    pub area: f64,
    pub div_l2: f64,
    pub kinetic_energy: f64,
    pub n_points: usize,
    pub n_conns: usize,
}

impl DiagnosticsRecord {
    pub fn csv_header() -> &'static str {
        "step,time,max_radius,mean_radius,area,div_l2,kinetic_energy,n_points,n_conns"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
            self.step,
            self.time,
            self.max_radius,
            self.mean_radius,
            self.area,
            self.div_l2,
            self.kinetic_energy,
            self.n_points,
            self.n_conns
        )
    }
}

/// Discrete l2 norm of a cell-centered or edge scalar, weighted by `h^d`.
pub fn l2_norm(f: &ScalarField, spec: &GridSpec) -> f64 {
    let mut s = 0.0;
    f.for_interior(|_, _, _, v| s += v * v);
    (s * spec.cell_volume()).sqrt()
}

/// l2 norm of a vector field (components summed inside the root).
pub fn l2_norm_vec(u: &MacField, spec: &GridSpec) -> f64 {
    let mut s = 0.0;
    for c in &u.comps {
        c.for_interior(|_, _, _, v| s += v * v);
    }
    (s * spec.cell_volume()).sqrt()
}

/// Restrict a cell-centered field one level (average of the `2^d` fine cells
/// in each coarse cell).
pub fn restrict_center_once(fine: &ScalarField, dim: usize) -> ScalarField {
    let nf = fine.shape();
    let nc = [
        nf[0] / 2,
        nf[1] / 2,
        if dim == 3 { nf[2] / 2 } else { 1 },
    ];
    let mut out = ScalarField::zeros(StaggerLocation::Center, nc, dim);
    let kk = if dim == 3 { 2isize } else { 1 };
    let w = 1.0 / (4.0 * kk as f64);
    out.fill_with(|i, j, k| {
        let mut s = 0.0;
        for dk in 0..kk {
            for dj in 0..2 {
                for di in 0..2 {
                    s += fine.at(2 * i + di, 2 * j + dj, 2 * k + dk);
                }
            }
        }
        s * w
    });
    out
}

/// Restrict one velocity component one level: direct injection along its
/// aligned axis (fine and coarse edges coincide there), two-point average
/// along each staggered axis.
pub fn restrict_edge_once(fine: &ScalarField, comp: usize, dim: usize) -> ScalarField {
    let nf = fine.shape();
    let nc = [
        nf[0] / 2,
        nf[1] / 2,
        if dim == 3 { nf[2] / 2 } else { 1 },
    ];
    let mut out = ScalarField::zeros(StaggerLocation::edge(comp), nc, dim);
    let stag: Vec<usize> = (0..dim).filter(|a| *a != comp).collect();
    let w = 1.0 / (1 << stag.len()) as f64;
    out.fill_with(|i, j, k| {
        let base = [2 * i, 2 * j, 2 * k];
        let mut s = 0.0;
        let m = 1usize << stag.len();
        for bits in 0..m {
            let mut idx = base;
            for (b, &a) in stag.iter().enumerate() {
                idx[a] += ((bits >> b) & 1) as isize;
            }
            s += fine.at(idx[0], idx[1], idx[2]);
        }
        s * w
    });
    out
}

fn levels_between(coarse_n: usize, fine_n: usize) -> Result<u32> {
    if fine_n < coarse_n || fine_n % coarse_n != 0 {
        return Err(Error::Config(format!(
            "grids not nested: {coarse_n} vs {fine_n}"
        )));
    }
    let ratio = fine_n / coarse_n;
    if !ratio.is_power_of_two() {
        return Err(Error::Config(format!(
            "refinement ratio {ratio} is not a power of two"
        )));
    }
    Ok(ratio.trailing_zeros())
}

/// Restrict a cell-centered field down to `coarse_spec`'s resolution.
pub fn restrict_center_to(fine: &ScalarField, coarse_spec: &GridSpec) -> Result<ScalarField> {
    let lv = levels_between(coarse_spec.n[0], fine.shape()[0])?;
    let mut f = fine.clone();
    for _ in 0..lv {
        f = restrict_center_once(&f, coarse_spec.dim);
    }
    Ok(f)
}

/// Restrict a velocity field down to `coarse_spec`'s resolution.
pub fn restrict_mac_to(fine: &MacField, coarse_spec: &GridSpec) -> Result<MacField> {
    let lv = levels_between(coarse_spec.n[0], fine.comps[0].shape()[0])?;
    let mut f = fine.clone();
    for _ in 0..lv {
        let comps = f
            .comps
            .iter()
            .enumerate()
            .map(|(c, comp)| restrict_edge_once(comp, c, coarse_spec.dim))
            .collect();
        f = MacField { comps };
    }
    Ok(f)
}

/// `||q - I q_ref||_2` for cell-centered scalars, `h^d`-weighted.
pub fn scalar_error(q: &ScalarField, q_ref: &ScalarField, spec: &GridSpec) -> Result<f64> {
    let r = restrict_center_to(q_ref, spec)?;
    let mut s = 0.0;
    q.for_interior(|i, j, k, v| {
        let d = v - r.at(i, j, k);
        s += d * d;
    });
    Ok((s * spec.cell_volume()).sqrt())
}

/// `||u - I u_ref||_2` over all velocity components.
pub fn velocity_error(u: &MacField, u_ref: &MacField, spec: &GridSpec) -> Result<f64> {
    let r = restrict_mac_to(u_ref, spec)?;
    let mut s = 0.0;
    for c in 0..u.dim() {
        u.comps[c].for_interior(|i, j, k, v| {
            let d = v - r.comps[c].at(i, j, k);
            s += d * d;
        });
    }
    Ok((s * spec.cell_volume()).sqrt())
}

/// Lagrangian error: index decimation of the reference fiber (exact because
/// point counts scale with N), Euclidean distance per point, `h_s`-weighted.
/// Differences are taken minimum-image so a fiber straddling the periodic
/// seam compares correctly.
pub fn fiber_error(x: &[IBPoint], x_ref: &[IBPoint], spec: &GridSpec) -> Result<f64> {
    if x.is_empty() || x_ref.len() % x.len() != 0 {
        return Err(Error::Config(format!(
            "fiber counts not nested: {} vs {}",
            x.len(),
            x_ref.len()
        )));
    }
    let ratio = x_ref.len() / x.len();
    let h_s = 1.0 / x.len() as f64;
    let mut s = 0.0;
    for (k, p) in x.iter().enumerate() {
        let q = &x_ref[k * ratio];
        let mut d2 = 0.0;
        for a in 0..spec.dim {
            let d = min_image(p.x[a] - q.x[a], spec.extent(a));
            d2 += d * d;
        }
        s += d2;
    }
    Ok((s * h_s).sqrt())
}

/// Convergence rate `log2(e_coarse / e_fine)` from two successive difference
/// norms; `None` when the denominator vanishes.
pub fn convergence_rate(diff_coarse: f64, diff_fine: f64) -> Option<f64> {
    if diff_fine == 0.0 {
        return None;
    }
    Some((diff_coarse / diff_fine).log2())
}

/// Signed enclosed area of a closed fiber loop by the shoelace formula.
///
/// The polygon is unwrapped by walking minimum-image increments along the
/// loop, so a membrane crossing the periodic seam keeps its true area.
pub fn enclosed_area(points: &[IBPoint], spec: &GridSpec) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 points for an area, got {}",
            points.len()
        )));
    }
    let ext = [spec.extent(0), spec.extent(1)];
    let mut poly = Vec::with_capacity(points.len());
    let mut cur = [points[0].x[0], points[0].x[1]];
    poly.push(cur);
    for w in points.windows(2) {
        for a in 0..2 {
            cur[a] += min_image(w[1].x[a] - w[0].x[a], ext[a]);
        }
        poly.push(cur);
    }
    let mut area = 0.0;
    let n = poly.len();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        area += p[0] * q[1] - q[0] * p[1];
    }
    Ok(0.5 * area.abs())
}

/// Max and mean Euclidean distance of the points from `center`.
pub fn radius_stats(points: &[IBPoint], center: [f64; 3], spec: &GridSpec) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for p in points {
        let mut d2 = 0.0;
        for a in 0..spec.dim {
            let d = min_image(p.x[a] - center[a], spec.extent(a));
            d2 += d * d;
        }
        let d = d2.sqrt();
        max = max.max(d);
        sum += d;
    }
    (max, sum / points.len() as f64)
}

/// Least-squares slope of `series = (t, y)` samples restricted to
/// `t in [t0, t1]`.
pub fn least_squares_slope(series: &[(f64, f64)], t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= t0 && *t <= t1)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(t, _)| t).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = pts.iter().map(|(t, y)| t * y).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}
