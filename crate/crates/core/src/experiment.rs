//! Config-driven experiment runs over seeds and penalty parameters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::benchmarks::{
    build_svm, build_toy, build_transport, SvmDataset, TransportNetwork, TransportProblem,
    TOY_X_RANGE,
};
use crate::error::{Error, Result};
use crate::lagrangian::{PenaltyConfig, SaddleState};
use crate::problem::{random_qp_instance, BilevelProblem};
use crate::solver::{self, IterationTrace, SolverConfig, StepSizes, TheoryMode};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    Toy {},
    Quadratic {
        #[serde(default)]
        seed: u64,
        dx: usize,
        dy: usize,
        dh: usize,
        #[serde(default = "one")]
        mu_g: f64,
        #[serde(default = "yes")]
        coupled: bool,
    },
    Svm {
        /// CSV file; a synthetic dataset is generated per seed when absent.
        data: Option<PathBuf>,
        #[serde(default = "svm_features")]
        n_features: usize,
        #[serde(default = "svm_split")]
        n_train: usize,
        #[serde(default = "svm_split")]
        n_val: usize,
        #[serde(default = "svm_split")]
        n_test: usize,
        #[serde(default = "svm_mu_b")]
        mu_b: f64,
    },
    Transport {
        /// Network file; the built-in three-station network when absent.
        network: Option<PathBuf>,
        kappa: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn svm_features() -> usize {
    4
}
fn svm_split() -> usize {
    20
}
fn svm_mu_b() -> f64 {
    0.01
}
fn default_inner_tol() -> f64 {
    1e-10
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub delta: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Shared step size; the per-block keys override it.
    pub eta: Option<f64>,
    pub eta_x: Option<f64>,
    pub eta_y: Option<f64>,
    pub eta_z: Option<f64>,
    pub eta_u: Option<f64>,
    pub eta_v: Option<f64>,
    #[serde(default)]
    pub theory_steps: bool,
    pub max_iters: usize,
    #[serde(default)]
    pub stationarity_check_every: usize,
    #[serde(default)]
    pub stationarity_tol: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default)]
    pub record_potential: bool,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides `solver.delta` when present.
    pub deltas: Option<Vec<f64>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            seeds: default_seeds(),
            deltas: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.sweep.deltas.clone().unwrap_or_else(|| vec![self.solver.delta])
    }
}

/// A built benchmark plus the data needed to score it.
#[derive(Debug, Clone)]
pub enum Benchmark {
    Toy(BilevelProblem),
    Quadratic(BilevelProblem),
    Svm(BilevelProblem, SvmDataset),
    Transport(TransportProblem),
}

impl Benchmark {
    pub fn problem(&self) -> &BilevelProblem {
        match self {
            Benchmark::Toy(p) | Benchmark::Quadratic(p) | Benchmark::Svm(p, _) => p,
            Benchmark::Transport(t) => &t.problem,
        }
    }

    /// Score reported per run: `f` for toy and quadratic, validation loss for
    /// the SVM, operator profit for the network.
    pub fn score(&self, s: &SaddleState) -> Result<f64> {
        match self {
            Benchmark::Toy(p) | Benchmark::Quadratic(p) => Ok(p.eval_f(&s.x, &s.y)?.value),
            Benchmark::Svm(_, ds) => Ok(crate::benchmarks::validation_loss(ds, &s.y)),
            Benchmark::Transport(t) => Ok(t.utility(&s.x, &s.y)),
        }
    }

    /// Seeded initial iterate.
    pub fn initial_state(&self, seed: u64) -> SaddleState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Benchmark::Toy(p) => {
                let x = rng.random_range(TOY_X_RANGE.0..=TOY_X_RANGE.1);
                SaddleState::primal_start(p, vec![x], vec![x])
            }
            Benchmark::Quadratic(p) => {
                let x = (0..p.dx).map(|_| rng.random_range(-1.0..1.0)).collect();
                SaddleState::primal_start(p, x, vec![0.0; p.dy])
            }
            Benchmark::Svm(p, _) => SaddleState::primal_start(p, vec![1.0; p.dx], vec![0.0; p.dy]),
            Benchmark::Transport(t) => {
                let p = &t.problem;
                let x = (0..p.dx).map(|_| rng.random_range(0.0..1.0)).collect();
                SaddleState::primal_start(p, x, vec![0.5; p.dy])
            }
        }
    }
}

pub fn build_benchmark(spec: &ProblemSpec, seed: u64) -> Result<Benchmark> {
    Ok(match spec {
        ProblemSpec::Toy {} => Benchmark::Toy(build_toy()),
        ProblemSpec::Quadratic {
            seed: s,
            dx,
            dy,
            dh,
            mu_g,
            coupled,
        } => Benchmark::Quadratic(random_qp_instance(*s, *dx, *dy, *dh, *mu_g, *coupled)?),
        ProblemSpec::Svm {
            data,
            n_features,
            n_train,
            n_val,
            n_test,
            mu_b,
        } => {
            let ds = match data {
                Some(path) => SvmDataset::from_csv(path, *n_train, *n_val)?,
                None => SvmDataset::synthetic(seed, *n_features, *n_train, *n_val, *n_test)?,
            };
            Benchmark::Svm(build_svm(&ds, *mu_b)?, ds)
        }
        ProblemSpec::Transport { network, kappa } => {
            let mut net = match network {
                Some(path) => TransportNetwork::from_file(path)?,
                None => TransportNetwork::three_node(),
            };
            if let Some(k) = kappa {
                net.kappa = *k;
            }
            Benchmark::Transport(build_transport(&net)?)
        }
    })
}

pub fn solver_config(spec: &SolverSpec, p: &BilevelProblem, delta: f64) -> Result<SolverConfig> {
    let penalty = PenaltyConfig::new(delta, spec.rho1, spec.rho2);
    let steps = if spec.theory_steps {
        let mode = if p.constraint.is_coupled() {
            TheoryMode::Coupled
        } else {
            TheoryMode::Decoupled
        };
        solver::theory_step_sizes(p, &penalty, mode)?.steps
    } else {
        let base = spec.eta;
        let pick = |v: Option<f64>, name: &str| {
            v.or(base)
                .ok_or_else(|| Error::Config(format!("missing step size `{name}` (or `eta`)")))
        };
        StepSizes {
            eta_x: pick(spec.eta_x, "eta_x")?,
            eta_y: pick(spec.eta_y, "eta_y")?,
            eta_z: pick(spec.eta_z, "eta_z")?,
            eta_u: pick(spec.eta_u, "eta_u")?,
            eta_v: pick(spec.eta_v, "eta_v")?,
        }
    };
    let mut cfg = SolverConfig::new(penalty, steps, spec.max_iters);
    cfg.stationarity_check_every = spec.stationarity_check_every;
    cfg.stationarity_tol = spec.stationarity_tol;
    cfg.inner_tol = spec.inner_tol;
    cfg.record_potential = spec.record_potential;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub delta: f64,
    pub trace: Option<IterationTrace>,
    pub final_state: Option<SaddleState>,
    pub score: Option<f64>,
    /// Iteration of divergence, when the run blew up.
    pub diverged_at: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub delta: f64,
    pub runs: usize,
    pub diverged: usize,
    pub score_mean: f64,
    pub score_std: f64,
    pub res_mean: f64,
    pub res_std: f64,
    pub iters_mean: f64,
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "delta",
    "runs",
    "diverged",
    "score_mean",
    "score_std",
    "res_mean",
    "res_std",
    "iters_mean",
];

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

fn run_one(cfg: &ExperimentConfig, delta: f64, seed: u64) -> RunOutcome {
    let mut out = RunOutcome {
        seed,
        delta,
        trace: None,
        final_state: None,
        score: None,
        diverged_at: None,
        error: None,
    };
    let attempt = || -> Result<(SaddleState, IterationTrace, f64)> {
        let bench = build_benchmark(&cfg.problem, seed)?;
        let p = bench.problem();
        let scfg = solver_config(&cfg.solver, p, delta)?;
        let (s, trace) = solver::run(p, &scfg, bench.initial_state(seed))?;
        let score = bench.score(&s)?;
        Ok((s, trace, score))
    };
    match attempt() {
        Ok((s, trace, score)) => {
            out.final_state = Some(s);
            out.trace = Some(trace);
            out.score = Some(score);
        }
        Err(Error::Diverged { iteration, trace }) => {
            out.diverged_at = Some(iteration);
            out.trace = trace.map(|t| *t);
            out.error = Some(format!("diverged at iteration {iteration}"));
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn summarize(deltas: &[f64], runs: &[RunOutcome]) -> Vec<SummaryRow> {
    deltas
        .iter()
        .filter_map(|&d| {
            let group: Vec<&RunOutcome> = runs.iter().filter(|r| r.delta == d).collect();
            if group.is_empty() {
                return None;
            }
            let ok: Vec<&RunOutcome> = group.iter().copied().filter(|r| r.score.is_some()).collect();
            let scores: Vec<f64> = ok.iter().filter_map(|r| r.score).collect();
            let last = |r: &RunOutcome| r.trace.as_ref().and_then(|t| t.last().cloned());
            let res: Vec<f64> = ok
                .iter()
                .filter_map(|r| last(r).map(|l| l.res_y.max(l.res_z)))
                .collect();
            let iters: Vec<f64> = ok.iter().filter_map(|r| last(r).map(|l| l.iter as f64)).collect();
            let (score_mean, score_std) = mean_std(&scores);
            let (res_mean, res_std) = mean_std(&res);
            Some(SummaryRow {
                delta: d,
                runs: group.len(),
                diverged: group.iter().filter(|r| r.diverged_at.is_some()).count(),
                score_mean,
                score_std,
                res_mean,
                res_std,
                iters_mean: mean_std(&iters).0,
            })
        })
        .collect()
}

pub fn trace_file_name(delta: f64, seed: u64) -> String {
    format!("trace_delta{delta}_seed{seed}.csv")
}

/// Runs every `(δ, seed)` pair in parallel. With `out_dir`, each run writes
/// its own trace CSV and a `summary.csv` is written at the end.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    let deltas = cfg.deltas();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(f64, u64)> = deltas
        .iter()
        .flat_map(|&d| cfg.sweep.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(d, s)| -> Result<RunOutcome> {
            let run = run_one(cfg, d, s);
            if let (Some(dir), Some(trace)) = (out_dir, &run.trace) {
                let f = File::create(dir.join(trace_file_name(d, s)))?;
                trace.write_csv(BufWriter::new(f))?;
            }
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&deltas, &runs);
    if let Some(dir) = out_dir {
        write_summary(BufWriter::new(File::create(dir.join("summary.csv"))?), &summary)?;
        write_runs(BufWriter::new(File::create(dir.join("runs.csv"))?), &runs)?;
    }
    Ok(ExperimentResult { runs, summary })
}

pub fn write_summary<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "{}", SUMMARY_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e},{:e},{}",
            r.delta, r.runs, r.diverged, r.score_mean, r.score_std, r.res_mean, r.res_std, r.iters_mean
        )?;
    }
    w.flush()
}

/// One row per run with the final `x`, joined by `;`.
pub fn write_runs<W: Write>(mut w: W, runs: &[RunOutcome]) -> std::io::Result<()> {
    writeln!(w, "delta,seed,score,final_x,error")?;
    for r in runs {
        let x = r
            .final_state
            .as_ref()
            .map(|s| s.x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        let score = r.score.map(|s| format!("{s:e}")).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace(',', ";");
        writeln!(w, "{},{},{score},{x},{err}", r.delta, r.seed)?;
    }
    w.flush()
}
