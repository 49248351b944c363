//! Command-line driver: `run` a configuration, `converge` over a resolution
//! ladder, or `bench` per-phase timings.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical fault.

use clap::{Parser, Subcommand};
use ibflow_core::harness::{
    bench, config::SolverKind, convergence_study, run_to_dir, ProblemConfig,
};
use ibflow_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ibflow", about = "Immersed-boundary flow solver harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write diagnostics, timings, and final dumps.
    Run {
        /// Flat key-value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: ./out).
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the total worker count (factored into a near-square grid).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Nested-resolution sweep: errors against a reference run plus
    /// convergence-rate estimates.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Comma-separated resolutions, ascending (e.g. 32,64,128).
        #[arg(long, default_value = "32,64,128")]
        n_list: String,
        /// Reference resolution (0 disables the reference errors).
        #[arg(long, default_value_t = 256)]
        ref_n: usize,
        /// Reference solver: gm or bcm.
        #[arg(long, default_value = "bcm")]
        ref_solver: String,
    },
    /// Per-phase wall-time report, best of the requested repeats.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Number of repeat runs; the minimum per phase is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

/// Factor a worker count into a near-square grid for the problem dimension.
fn worker_grid(total: usize, dim: usize) -> [usize; 3] {
    if total <= 1 {
        return [1, 1, 1];
    }
    if dim == 2 {
        let mut px = (total as f64).sqrt() as usize;
        while px > 1 && total % px != 0 {
            px -= 1;
        }
        [px.max(1), total / px.max(1), 1]
    } else {
        // Greedy 3D factorization, largest factors first.
        let mut rem = total;
        let mut dims = [1usize; 3];
        for slot in 0..3 {
            let target = (rem as f64).powf(1.0 / (3 - slot) as f64).round() as usize;
            let mut f = target.max(1);
            while f > 1 && rem % f != 0 {
                f -= 1;
            }
            dims[slot] = f.max(1);
            rem /= dims[slot];
        }
        dims[0] *= rem;
        dims
    }
}

fn load_config(path: &PathBuf, workers: Option<usize>) -> Result<ProblemConfig, Error> {
    let mut cfg = ProblemConfig::load(path)?;
    if let Some(w) = workers {
        cfg.p = worker_grid(w, cfg.problem.dim());
        cfg = cfg.finalize()?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out_dir,
            workers,
        } => {
            let cfg = load_config(&config, workers)?;
            let out = run_to_dir(&cfg, &out_dir)?;
            println!(
                "{}: {} steps to t = {:.6}, {} workers, {:.2}s wall",
                cfg.problem.name(),
                out.steps,
                out.final_state.time,
                cfg.num_workers(),
                out.wall_seconds
            );
            if let Some(last) = out.diagnostics.last() {
                println!(
                    "final: max_r = {:.6}, mean_r = {:.6}, area = {:.6e}, |div u| = {:.3e}",
                    last.max_radius, last.mean_radius, last.area, last.div_l2
                );
            }
            println!("outputs in {}", out_dir.display());
            Ok(())
        }
        Command::Converge {
            config,
            out_dir,
            workers,
            n_list,
            ref_n,
            ref_solver,
        } => {
            let cfg = load_config(&config, workers)?;
            let ns: Vec<usize> = n_list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad n-list entry {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            let reference = if ref_n == 0 {
                None
            } else {
                let solver = match ref_solver.as_str() {
                    "gm" => SolverKind::Gm,
                    "bcm" => SolverKind::Bcm,
                    other => {
                        return Err(Error::Config(format!("unknown ref solver {other:?}")))
                    }
                };
                Some((ref_n, solver))
            };
            let study = convergence_study(&cfg, &ns, reference)?;
            let csv = study.csv();
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("convergence.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Bench {
            config,
            out_dir,
            workers,
            repeats,
        } => {
            let cfg = load_config(&config, workers)?;
            let report = bench(&cfg, repeats)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("bench.csv"), report.csv())?;
            print!("{}", report.csv());
            println!(
                "best wall: {:.3}s over {} steps ({} repeats)",
                report.wall_seconds, report.steps, report.repeats
            );
            Ok(())
        }
    }
}
