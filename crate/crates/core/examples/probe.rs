// timing probe: phase breakdown
use ibflow_core::harness::{config::{ProblemConfig, ProblemKind}, sim::run};
fn main() {
    for (name, kind, n, steps) in [
        ("thin64", ProblemKind::ThinEllipse, 64usize, 400usize),
        ("thick64", ProblemKind::ThickShell, 64, 100),
    ] {
        let mut cfg = ProblemConfig::defaults(kind);
        cfg.n = n;
        cfg.end_time = steps as f64 * cfg.dt;
        cfg.output_every = 1000000;
        let cfg = cfg.finalize().unwrap();
        let out = run(&cfg).unwrap();
        println!("{name}: {} steps", out.steps);
        print!("{}", out.phase_times.csv());
    }
}
