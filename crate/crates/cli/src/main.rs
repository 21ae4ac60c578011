use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sflcb_core::benchmarks::{build_toy, toy_grid_minimizers, toy_hyper_objective, TOY_X_RANGE};
use sflcb_core::experiment::{run_experiment, ExperimentConfig, ExperimentResult};
use sflcb_core::problem::{random_qp_instance, BilevelProblem};
use sflcb_core::solver::{run, SolverConfig, StepSizes};
use sflcb_core::verification::{check_grad_gap, check_value_gap, BoundReport};
use sflcb_core::{PenaltyConfig, SaddleState};

#[derive(Parser)]
#[command(name = "sflcb", version, about = "Single-loop bilevel solver: experiments, sweeps and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write per-run traces plus a summary.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a config over a grid of penalty parameters and seeds.
    Sweep {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated deltas; overrides the config.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Comma-separated seeds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Value-gap, solution-gap and gradient-gap reports as CSV.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyProblem::Quadratic)]
        problem: VerifyProblem,
        /// Number of seeded quadratic instances.
        #[arg(long, default_value_t = 3)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(short, long, default_value = "bounds.csv")]
        out: PathBuf,
    },
    /// Grid of f(x, x) on the toy box plus the points the solver converges to.
    ToyScan {
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
        #[arg(long, default_value_t = 200)]
        starts: usize,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyProblem {
    Toy,
    Quadratic,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            report(&run_experiment(&cfg, Some(&out))?, &out);
            Ok(true)
        }
        Command::Sweep {
            config,
            out,
            deltas,
            seeds,
        } => {
            let mut cfg = load(&config)?;
            if let Some(d) = deltas {
                cfg.sweep.deltas = Some(d);
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            report(&run_experiment(&cfg, Some(&out))?, &out);
            Ok(true)
        }
        Command::Verify {
            problem,
            instances,
            seed,
            tol,
            out,
        } => verify(problem, instances, seed, tol, &out),
        Command::ToyScan {
            out,
            grid,
            starts,
            iters,
            seed,
        } => toy_scan(&out, grid, starts, iters, seed),
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))
}

fn report(res: &ExperimentResult, out: &Path) {
    for row in &res.summary {
        println!(
            "delta {}: {} runs, {} diverged, score {:.6} ± {:.6}",
            row.delta, row.runs, row.diverged, row.score_mean, row.score_std
        );
    }
    for r in res.runs.iter().filter(|r| r.error.is_some()) {
        println!("seed {} delta {}: {}", r.seed, r.delta, r.error.as_deref().unwrap_or(""));
    }
    println!("wrote {}", out.display());
}

fn verify(problem: VerifyProblem, instances: u64, seed: u64, tol: f64, out: &Path) -> Result<bool> {
    let problems: Vec<BilevelProblem> = match problem {
        VerifyProblem::Toy => vec![build_toy()],
        VerifyProblem::Quadratic => (0..instances)
            .map(|k| random_qp_instance(seed + k, 3, 5, 3, 1.0, true))
            .collect::<sflcb_core::Result<_>>()?,
    };
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let mut all_ok = true;
    let mut header = true;
    for p in &problems {
        let xs: Vec<Vec<f64>> = match problem {
            VerifyProblem::Toy => [0.4, 1.0, 1.3, 2.2, 2.8].iter().map(|&x| vec![x]).collect(),
            VerifyProblem::Quadratic => (0..5)
                .map(|i| (0..p.dx).map(|j| ((i * p.dx + j) as f64 * 0.77).sin()).collect())
                .collect(),
        };
        let (value, sol) = check_value_gap(p, &xs, &[0.2, 0.1, 0.05, 0.025], tol)?;
        let grad = check_grad_gap(p, &xs, &[0.04, 0.02, 0.01], (0.01 * tol).max(1e-12))?;
        for r in [&value, &sol, &grad] {
            print_report(&p.name, r);
            all_ok &= r.passed();
            r.write_csv(&mut w, header)?;
            header = false;
        }
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(all_ok)
}

fn print_report(name: &str, r: &BoundReport) {
    let slope = r.slope.map(|s| format!(", slope {s:.3}")).unwrap_or_default();
    let verdict = if r.passed() { "pass" } else { "FAIL" };
    println!("{name} {}: {verdict} ({} samples{slope})", r.test, r.samples.len());
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn toy_scan(out: &Path, grid: usize, starts: usize, iters: usize, seed: u64) -> Result<bool> {
    if grid < 2 {
        bail!("grid needs at least two points");
    }
    std::fs::create_dir_all(out)?;
    let (lo, hi) = TOY_X_RANGE;
    let mut w = BufWriter::new(File::create(out.join("toy_grid.csv"))?);
    writeln!(w, "x,phi")?;
    for i in 0..grid {
        let x = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        writeln!(w, "{x:e},{:e}", toy_hyper_objective(x))?;
    }
    w.flush()?;

    let p = build_toy();
    let mins = toy_grid_minimizers(grid);
    let cfg = SolverConfig::new(PenaltyConfig::new(0.1, 1.0, 1.0), StepSizes::uniform(0.01), iters);
    let mut w = BufWriter::new(File::create(out.join("toy_converged.csv"))?);
    writeln!(w, "x0,x_final,phi_final,nearest_minimizer")?;
    let mut near = 0;
    for k in 0..starts {
        // Stratified starts across the box, jittered by the seed.
        let jitter = ((seed as f64 + 1.0) * (k as f64 + 1.0) * 0.618_033_988_75).fract();
        let x0 = lo + (hi - lo) * (k as f64 + jitter) / starts as f64;
        let (s, _) = run(&p, &cfg, SaddleState::primal_start(&p, vec![x0], vec![x0]))?;
        let xf = s.x[0];
        let nearest = mins
            .iter()
            .copied()
            .min_by(|a, b| (a - xf).abs().total_cmp(&(b - xf).abs()))
            .unwrap_or(f64::NAN);
        if (nearest - xf).abs() <= 1e-2 {
            near += 1;
        }
        writeln!(w, "{x0:e},{xf:e},{:e},{nearest:e}", toy_hyper_objective(xf))?;
    }
    w.flush()?;
    println!(
        "{near}/{starts} runs end within 1e-2 of one of {} grid minimizers; wrote {}",
        mins.len(),
        out.display()
    );
    Ok(true)
}
