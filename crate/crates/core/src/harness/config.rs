//! Flat key-value run configuration.
//!
//! The file format is one `key = value` pair per line, `#` comments allowed.
//! Unset keys take problem-specific defaults (the canonical parameter sets of
//! the benchmark problems); fiber counts derive from `N` unless overridden.
//! Time steps may be written as plain floats or fractions like `0.04/512`.

use crate::error::{Error, Result};
use crate::mac_grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    ThinEllipse,
    ThickShell,
    MultiEllipse,
    Cylinder3d,
    TaylorGreen,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::ThinEllipse => "thin_ellipse",
            ProblemKind::ThickShell => "thick_shell",
            ProblemKind::MultiEllipse => "multi_ellipse",
            ProblemKind::Cylinder3d => "cylinder_3d",
            ProblemKind::TaylorGreen => "taylor_green",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "thin_ellipse" => ProblemKind::ThinEllipse,
            "thick_shell" => ProblemKind::ThickShell,
            "multi_ellipse" => ProblemKind::MultiEllipse,
            "cylinder_3d" => ProblemKind::Cylinder3d,
            "taylor_green" => ProblemKind::TaylorGreen,
            _ => return Err(Error::Config(format!("unknown problem {s:?}"))),
        })
    }

    pub fn dim(&self) -> usize {
        if *self == ProblemKind::Cylinder3d {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Gm,
    Bcm,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Gm => "gm",
            SolverKind::Bcm => "bcm",
        }
    }
}

/// Full description of one run.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub problem: ProblemKind,
    /// Cells per side; for the multi-ellipse array this is the per-tile
    /// resolution and the global grid is `(P_x N) x (P_y N)`.
    pub n: usize,
    pub dt: f64,
    pub rho: f64,
    pub mu: f64,
    /// Elastic stiffness (thin/multi ellipse), or the radial-profile
    /// multiplier for the thick shell.
    pub sigma: f64,
    /// Circumferential / axial stiffness of the 3D shell.
    pub sigma_s: f64,
    pub sigma_r: f64,
    /// Resting strain of the 3D shell's axial fibers.
    pub rest_l: f64,
    pub r1: f64,
    pub r2: f64,
    /// Thick-shell thickness.
    pub gamma: f64,
    /// Fiber point counts; 0 means "derive from N".
    pub n_s: usize,
    pub n_r: usize,
    pub p: [usize; 3],
    pub end_time: f64,
    pub chi: f64,
    pub solver: SolverKind,
    /// Diagnostics cadence in steps.
    pub output_every: usize,
    pub rotate_sweeps: bool,
    /// Simulation times at which full state snapshots are captured.
    pub snapshot_times: Vec<f64>,
}

impl ProblemConfig {
    /// Canonical parameter set of `problem`.
    pub fn defaults(problem: ProblemKind) -> Self {
        let mut cfg = ProblemConfig {
            problem,
            n: 64,
            dt: 0.0,
            rho: 1.0,
            mu: 0.01,
            sigma: 1.0,
            sigma_s: 1.0,
            sigma_r: 1.0,
            rest_l: 1.0,
            r1: 5.0 / 28.0,
            r2: 7.0 / 20.0,
            gamma: 0.0625,
            n_s: 0,
            n_r: 0,
            p: [1, 1, 1],
            end_time: 1.0,
            chi: 0.6,
            solver: SolverKind::Gm,
            output_every: 100,
            rotate_sweeps: true,
            snapshot_times: Vec::new(),
        };
        match problem {
            ProblemKind::ThinEllipse => {
                cfg.dt = 0.04 / 512.0;
                cfg.end_time = 4.0;
            }
            ProblemKind::ThickShell => {
                cfg.r1 = 0.2;
                cfg.r2 = 0.25;
                cfg.dt = 0.08 / 512.0;
                cfg.end_time = 0.4;
            }
            ProblemKind::MultiEllipse => {
                cfg.dt = 0.0; // derived from h below
                cfg.end_time = 1.0;
            }
            ProblemKind::Cylinder3d => {
                cfg.n = 16;
                cfg.dt = 0.0; // 0.04 / N
                cfg.end_time = 0.1;
            }
            ProblemKind::TaylorGreen => {
                cfg.end_time = 0.25;
            }
        }
        cfg
    }

    /// Fill derived quantities (fiber counts, default dt) and validate.
    pub fn finalize(mut self) -> Result<Self> {
        let n = self.n;
        match self.problem {
            ProblemKind::ThinEllipse | ProblemKind::MultiEllipse => {
                if self.n_s == 0 {
                    if 19 * n % 4 != 0 {
                        return Err(Error::Config(format!(
                            "N = {n} does not give an integer fiber count (19 N / 4)"
                        )));
                    }
                    self.n_s = 19 * n / 4;
                }
            }
            ProblemKind::ThickShell => {
                if self.n_s == 0 {
                    if 75 * n % 16 != 0 {
                        return Err(Error::Config(format!(
                            "N = {n} does not give an integer fiber count (75 N / 16)"
                        )));
                    }
                    self.n_s = 75 * n / 16;
                }
                if self.n_r == 0 {
                    if 3 * n % 8 != 0 {
                        return Err(Error::Config(format!(
                            "N = {n} does not give an integer fiber count (3 N / 8)"
                        )));
                    }
                    self.n_r = 3 * n / 8;
                }
            }
            ProblemKind::Cylinder3d => {
                if self.n_s == 0 {
                    if 19 * n % 4 != 0 {
                        return Err(Error::Config(format!(
                            "N = {n} does not give an integer fiber count (19 N / 4)"
                        )));
                    }
                    self.n_s = 19 * n / 4;
                }
                if self.n_r == 0 {
                    self.n_r = 3 * n;
                }
            }
            ProblemKind::TaylorGreen => {}
        }
        if self.dt == 0.0 {
            let h = 1.0 / n as f64;
            self.dt = match self.problem {
                ProblemKind::MultiEllipse => 0.01 * h,
                ProblemKind::Cylinder3d => 0.04 / n as f64,
                ProblemKind::TaylorGreen => h / 16.0,
                _ => 0.04 / 512.0,
            };
        }
        if !(self.dt > 0.0) || !(self.end_time >= 0.0) {
            return Err(Error::Config("need dt > 0 and end_time >= 0".into()));
        }
        if self.solver == SolverKind::Bcm {
            if self.problem.dim() != 2 {
                return Err(Error::Config(
                    "the projection reference solver supports 2D problems only".into(),
                ));
            }
            if self.p != [1, 1, 1] {
                return Err(Error::Config(
                    "the projection reference solver runs on a single worker".into(),
                ));
            }
        }
        if self.problem.dim() == 2 && self.p[2] != 1 {
            return Err(Error::Config("P_z must be 1 for 2D problems".into()));
        }
        if self.output_every == 0 {
            self.output_every = 1;
        }
        Ok(self)
    }

    /// The Eulerian grid for this configuration.
    pub fn grid(&self) -> Result<GridSpec> {
        match self.problem {
            ProblemKind::MultiEllipse => {
                let h = 1.0 / self.n as f64;
                GridSpec::with_counts(2, [self.p[0] * self.n, self.p[1] * self.n, 1], h)
            }
            _ => GridSpec::square(self.problem.dim(), self.n, 1.0),
        }
    }

    /// Parse a flat key-value config text over the problem defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut problem = None;
        for line in text.lines() {
            let line = strip_comment(line);
            if let Some((k, v)) = split_kv(line) {
                if k == "problem" {
                    problem = Some(ProblemKind::from_name(v)?);
                }
            }
        }
        let problem =
            problem.ok_or_else(|| Error::Config("config must set `problem`".into()))?;
        let mut cfg = Self::defaults(problem);
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let Some((key, val)) = split_kv(line) else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} value {val:?}", lineno + 1))
            };
            match key {
                "problem" => {}
                "N" => cfg.n = val.parse().map_err(|_| bad("N"))?,
                "dt" => cfg.dt = parse_number(val).ok_or_else(|| bad("dt"))?,
                "rho" => cfg.rho = parse_number(val).ok_or_else(|| bad("rho"))?,
                "mu" => cfg.mu = parse_number(val).ok_or_else(|| bad("mu"))?,
                "sigma" => cfg.sigma = parse_number(val).ok_or_else(|| bad("sigma"))?,
                "sigma_s" => cfg.sigma_s = parse_number(val).ok_or_else(|| bad("sigma_s"))?,
                "sigma_r" => cfg.sigma_r = parse_number(val).ok_or_else(|| bad("sigma_r"))?,
                "rest_L" => cfg.rest_l = parse_number(val).ok_or_else(|| bad("rest_L"))?,
                "r1" => cfg.r1 = parse_number(val).ok_or_else(|| bad("r1"))?,
                "r2" => cfg.r2 = parse_number(val).ok_or_else(|| bad("r2"))?,
                "gamma" => cfg.gamma = parse_number(val).ok_or_else(|| bad("gamma"))?,
                "N_s" => cfg.n_s = val.parse().map_err(|_| bad("N_s"))?,
                "N_r" => cfg.n_r = val.parse().map_err(|_| bad("N_r"))?,
                "P_x" => cfg.p[0] = val.parse().map_err(|_| bad("P_x"))?,
                "P_y" => cfg.p[1] = val.parse().map_err(|_| bad("P_y"))?,
                "P_z" => cfg.p[2] = val.parse().map_err(|_| bad("P_z"))?,
                "end_time" => cfg.end_time = parse_number(val).ok_or_else(|| bad("end_time"))?,
                "chi" => cfg.chi = parse_number(val).ok_or_else(|| bad("chi"))?,
                "solver" => {
                    cfg.solver = match val {
                        "gm" => SolverKind::Gm,
                        "bcm" => SolverKind::Bcm,
                        _ => return Err(bad("solver")),
                    }
                }
                "output_every" => cfg.output_every = val.parse().map_err(|_| bad("output_every"))?,
                "rotate_sweeps" => {
                    cfg.rotate_sweeps = match val {
                        "true" | "on" | "1" => true,
                        "false" | "off" | "0" => false,
                        _ => return Err(bad("rotate_sweeps")),
                    }
                }
                "snapshot_times" => {
                    cfg.snapshot_times = val
                        .split(',')
                        .map(|s| parse_number(s.trim()).ok_or_else(|| bad("snapshot_times")))
                        .collect::<Result<Vec<f64>>>()?;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {key:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.finalize()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_workers(&self) -> usize {
        self.p[0] * self.p[1] * self.p[2]
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Parse a float, allowing the fraction notation used for conventional time
/// steps (`0.04/512`).
pub fn parse_number(s: &str) -> Option<f64> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().ok()?;
        let d: f64 = den.trim().parse().ok()?;
        if d == 0.0 {
            return None;
        }
        return Some(n / d);
    }
    s.parse().ok()
}
