use nalgebra::DVector;
use rayon::prelude::*;
use rma_core::analysis::{
    convergence_point, discrepancy_quotient, morozov_range, morozov_trial, trial_seed, tune_sketch_size,
    ConvergenceStudy, LinearOracle, MorozovSummary,
};
use rma_core::io::{write_elements, write_field, write_nodes};
use rma_core::optimizer::IterationRecord;
use rma_core::sketch::{derive_seed, failure_probability, SketchKind, DEFAULT_LD_CONSTANT};
use rma_core::{
    minimize, ExperimentConfig, InverseProblem, Objective, Result, RmaError, SketchDistribution, SketchMatrix,
    SolveReport,
};
use serde::Serialize;

use crate::args::{Command, RunArgs};
use crate::artifacts::{Artifacts, Provenance};

const SWEEP_SIZES: [usize; 6] = [10, 20, 50, 100, 200, 500];
const JLTEST_SIZES: [usize; 4] = [25, 50, 100, 200];
const SPECTRUM_THRESHOLD: f64 = 1.0;
const RANK_TOLERANCE: f64 = 1e-10;

/// Resolved configuration plus command-line parameters for one command.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    args: RunArgs,
    pool: rayon::ThreadPool,
}

impl Run {
    pub fn new(args: &RunArgs) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&args.config)?;
        if let Some(out) = &args.out {
            cfg.output = out.clone();
        }
        if let Some(seed) = args.seed {
            cfg.seeds.sketch = seed;
        }
        match args.dist.as_deref() {
            Some("full" | "deterministic" | "none") => cfg.sketch = None,
            Some(text) => {
                let dist: SketchDistribution = text.parse()?;
                let n = args.n.first().copied().or(cfg.sketch.as_ref().map(|s| s.n)).ok_or_else(|| {
                    RmaError::Config("--dist needs --n when the config has no sketch".into())
                })?;
                let s = (dist.kind() == SketchKind::SparseSign).then(|| dist.sparsity()).flatten();
                cfg.sketch = Some(rma_core::experiment::SketchConfig { kind: dist.kind(), s, n });
            }
            None => {}
        }
        if let (Some(sketch), [n]) = (cfg.sketch.as_mut(), args.n.as_slice()) {
            sketch.n = *n;
        }
        if args.trials == Some(0) {
            return Err(RmaError::InvalidParameter("--trials must be positive".into()));
        }
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs.max(1))
            .build()
            .map_err(|e| RmaError::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Self { seed: cfg.seeds.sketch, cfg, args: args.clone(), pool })
    }

    fn artifacts(&self, command: &'static str) -> Result<Artifacts> {
        let provenance = Provenance::new(command, &self.cfg, self.seed);
        Artifacts::create(&self.cfg.output, provenance, self.cfg.clone())
    }

    fn distribution(&self) -> Result<Option<SketchDistribution>> {
        self.cfg.sketch.as_ref().map(|s| s.distribution()).transpose()
    }

    fn sizes(&self, default: &[usize]) -> Vec<usize> {
        if self.args.n.is_empty() {
            default.to_vec()
        } else {
            self.args.n.clone()
        }
    }

    fn trials(&self, default: usize) -> usize {
        self.args.trials.unwrap_or(default)
    }
}

pub fn execute(command: &Command) -> Result<Vec<std::path::PathBuf>> {
    let run = Run::new(command.args())?;
    let mut out = run.artifacts(command.name())?;
    match command {
        Command::Synthesize(_) => synthesize(&run, &mut out)?,
        Command::Invert(_) => invert(&run, &mut out)?,
        Command::Sweep(_) => sweep(&run, &mut out)?,
        Command::Morozov(_) => morozov(&run, &mut out)?,
        Command::Spectrum(_) => spectrum(&run, &mut out)?,
        Command::Jltest(_) => jltest(&run, &mut out)?,
    }
    Ok(out.written().to_vec())
}

#[derive(Serialize)]
struct DataRow {
    index: usize,
    node: usize,
    x: f64,
    y: f64,
    clean: f64,
    data: f64,
}

#[derive(Serialize)]
struct SynthesisMeta {
    data_dim: usize,
    param_dim: usize,
    sigma: f64,
    noise_fraction: f64,
    max_abs_clean: f64,
}

fn synthesize(run: &Run, out: &mut Artifacts) -> Result<()> {
    let cfg = &run.cfg;
    let mesh = cfg.mesh()?;
    let forward = cfg.forward(&mesh)?;
    let syn = cfg.synthesize(&forward, &mesh)?;
    let rows: Vec<DataRow> = forward
        .observed_nodes()
        .iter()
        .enumerate()
        .map(|(index, &node)| {
            let [x, y] = mesh.coords()[node];
            DataRow { index, node, x, y, clean: syn.clean[index], data: syn.data[index] }
        })
        .collect();
    out.csv_rows("data.csv", &rows)?;
    out.csv_with("truth.csv", |w| write_field(w, &mesh, &syn.truth))?;
    out.csv_with("nodes.csv", |w| write_nodes(w, &mesh))?;
    out.csv_with("elements.csv", |w| write_elements(w, &mesh))?;
    out.json(
        "metadata.json",
        &SynthesisMeta {
            data_dim: syn.data.len(),
            param_dim: mesh.node_count(),
            sigma: syn.sigma,
            noise_fraction: cfg.noise_fraction,
            max_abs_clean: syn.clean.amax(),
        },
    )
}

#[derive(Serialize)]
struct InvertReport<'a> {
    mode: String,
    n: Option<usize>,
    data_dim: usize,
    param_dim: usize,
    tau: f64,
    tau_prime: Option<f64>,
    tau_range: Option<(f64, f64)>,
    p: Option<f64>,
    relative_error_to_truth: Option<f64>,
    solve: &'a SolveReport,
}

fn invert(run: &Run, out: &mut Artifacts) -> Result<()> {
    let (problem, _) = run.cfg.build()?;
    let big_n = problem.data_dim();
    let sketch = match (&run.cfg.sketch, run.distribution()?) {
        (Some(s), Some(dist)) => Some(SketchMatrix::build(dist, s.n, big_n, run.seed)?),
        _ => None,
    };
    let mut objective = match &sketch {
        Some(s) => Objective::sketched(&problem, s.clone())?,
        None => Objective::full(&problem),
    };
    let report = minimize(&mut objective, problem.prior().mean(), &run.cfg.solver)?;
    let u = report.u_final();
    let residual = objective.full_misfit_vector(&u)?;
    let tau = discrepancy_quotient(residual.norm_squared(), big_n);
    let (tau_prime, tau_range, p) = match &sketch {
        Some(s) => {
            let tp = discrepancy_quotient(s.apply(&residual)?.norm_squared(), big_n);
            let eps = run.args.epsilon;
            (Some(tp), Some(morozov_range(tp, eps)?), Some(1.0 - failure_probability(s.nrows(), eps, DEFAULT_LD_CONSTANT)))
        }
        None => (None, None, None),
    };
    let relative_error_to_truth = problem.truth().map(|t| (&u - t).norm() / t.norm().max(f64::MIN_POSITIVE));
    out.json(
        "report.json",
        &InvertReport {
            mode: sketch.as_ref().map_or("deterministic".into(), |s| s.distribution().label()),
            n: sketch.as_ref().map(SketchMatrix::nrows),
            data_dim: big_n,
            param_dim: problem.param_dim(),
            tau,
            tau_prime,
            tau_range,
            p,
            relative_error_to_truth,
            solve: &report,
        },
    )?;
    out.csv_rows::<IterationRecord>("history.csv", &report.history)?;
    let mesh = problem.prior().mesh().clone();
    out.csv_with("u_map.csv", |w| write_field(w, &mesh, &u))
}

#[derive(Serialize)]
struct SweepReport<'a> {
    distribution: String,
    trials: usize,
    linearization: &'static str,
    study: &'a ConvergenceStudy,
}

fn sweep(run: &Run, out: &mut Artifacts) -> Result<()> {
    let (problem, _) = run.cfg.build()?;
    let dist = run.distribution()?.unwrap_or_else(SketchDistribution::gaussian);
    let sizes = run.sizes(&SWEEP_SIZES);
    let trials = run.trials(5);
    let oracle = LinearOracle::build(&problem, problem.prior().mean())?;
    let exact = oracle.solve(None)?;
    let points = run.pool.install(|| {
        sizes
            .par_iter()
            .map(|&n| convergence_point(&oracle, &exact, dist, n, trials, run.seed))
            .collect::<Result<Vec<_>>>()
    })?;
    out.csv_rows("convergence.csv", &points)?;
    let study = ConvergenceStudy::from_points(&exact, points);
    out.json(
        "report.json",
        &SweepReport { distribution: dist.label(), trials, linearization: "prior mean", study: &study },
    )
}

#[derive(Serialize)]
struct MorozovReport {
    distribution: String,
    n: usize,
    tuned: bool,
    epsilon: f64,
    trials: usize,
    success_rate: f64,
    p: f64,
    mean_tau_prime: f64,
    mean_tau: f64,
}

fn morozov(run: &Run, out: &mut Artifacts) -> Result<()> {
    let (problem, _) = run.cfg.build()?;
    let (sketch, dist) = match (&run.cfg.sketch, run.distribution()?) {
        (Some(s), Some(d)) => (s, d),
        _ => return Err(RmaError::Config("morozov needs a sketch (config or --dist)".into())),
    };
    let eps = run.args.epsilon;
    let trials = run.trials(10);
    let solver = &run.cfg.solver;
    let n = if run.args.tune {
        let hi = (4 * problem.data_dim()).max(sketch.n);
        tune_sketch_size(&problem, dist, sketch.n, hi, 3, run.seed, solver)?
    } else {
        sketch.n
    };
    let records = run_trials(run, trials, |p, t| morozov_trial(p, dist, n, eps, trial_seed(run.seed, n, t), solver))?;
    out.csv_rows("table_morozov.csv", &records)?;
    let summary = MorozovSummary::from_records(records)?;
    out.json(
        "report.json",
        &MorozovReport {
            distribution: dist.label(),
            n,
            tuned: run.args.tune,
            epsilon: eps,
            trials,
            success_rate: summary.success_rate,
            p: summary.p,
            mean_tau_prime: summary.mean_tau_prime,
            mean_tau: summary.mean_tau,
        },
    )
}

/// Runs `trial(problem, t)` for `t < trials` on the pool. Problems carry
/// per-thread solver state, so each worker rebuilds its own from the config.
fn run_trials<T: Send>(
    run: &Run,
    trials: usize,
    trial: impl Fn(&InverseProblem, usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    run.pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map_init(
                || run.cfg.build().map(|(p, _)| p),
                |p, t| match p {
                    Ok(p) => trial(p, t),
                    Err(e) => Err(RmaError::Config(format!("rebuilding problem: {e}"))),
                },
            )
            .collect()
    })
}

#[derive(Serialize)]
struct SpectrumSeries {
    label: String,
    n: Option<usize>,
    above_threshold: usize,
    numerical_rank: usize,
    largest: f64,
}

#[derive(Serialize)]
struct SpectrumReport {
    evaluated_at: &'static str,
    threshold: f64,
    rank_tolerance: f64,
    series: Vec<SpectrumSeries>,
}

fn spectrum(run: &Run, out: &mut Artifacts) -> Result<()> {
    let (problem, _) = run.cfg.build()?;
    let m = problem.param_dim();
    let u = problem.prior().sample(run.seed);
    let mut columns = vec![("full".to_string(), None, Objective::full(&problem).misfit_hessian_spectrum(&u, m)?)];
    if let Some(dist) = run.distribution()? {
        let default = [run.cfg.sketch.as_ref().map_or(50, |s| s.n)];
        for n in run.sizes(&default) {
            let sketch = SketchMatrix::build(dist, n, problem.data_dim(), derive_seed(run.seed, n as u64))?;
            let eig = Objective::sketched(&problem, sketch)?.misfit_hessian_spectrum(&u, m)?;
            columns.push((format!("{dist}-n{n}"), Some(n), eig));
        }
    }
    out.csv_with("spectrum.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend(columns.iter().map(|c| c.0.clone()));
        csv.write_record(&header)?;
        for i in 0..m {
            let mut record = vec![(i + 1).to_string()];
            record.extend(columns.iter().map(|c| format!("{:e}", c.2[i])));
            csv.write_record(&record)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let series = columns
        .iter()
        .map(|(label, n, eig)| {
            let largest = eig.first().copied().unwrap_or(0.0);
            SpectrumSeries {
                label: label.clone(),
                n: *n,
                above_threshold: eig.iter().filter(|&&l| l > SPECTRUM_THRESHOLD).count(),
                numerical_rank: eig.iter().filter(|&&l| l > RANK_TOLERANCE * largest).count(),
                largest,
            }
        })
        .collect();
    out.json(
        "report.json",
        &SpectrumReport {
            evaluated_at: "prior sample",
            threshold: SPECTRUM_THRESHOLD,
            rank_tolerance: RANK_TOLERANCE,
            series,
        },
    )
}

#[derive(Serialize)]
struct JlRow {
    distribution: String,
    n: usize,
    trials: usize,
    epsilon: f64,
    violations: usize,
    rate: f64,
    theory: f64,
}

#[derive(Serialize)]
struct JlReport<'a> {
    evaluated_at: &'static str,
    data_dim: usize,
    rows: &'a [JlRow],
}

fn jltest(run: &Run, out: &mut Artifacts) -> Result<()> {
    let (problem, _) = run.cfg.build()?;
    let v = problem.misfit(&problem.prior().sample(run.seed))?;
    let dists = match (&run.args.dist, run.distribution()?) {
        (Some(_), Some(d)) => vec![d],
        _ => SketchDistribution::standard_suite().to_vec(),
    };
    let eps = run.args.epsilon;
    let trials = run.trials(2000);
    let mut rows = Vec::new();
    for (k, dist) in dists.into_iter().enumerate() {
        for n in run.sizes(&JLTEST_SIZES) {
            let base = derive_seed(run.seed, k as u64);
            let violations = run.pool.install(|| {
                (0..trials)
                    .into_par_iter()
                    .map(|t| violated(dist, n, &v, eps, trial_seed(base, n, t)))
                    .collect::<Result<Vec<bool>>>()
            })?;
            let count = violations.into_iter().filter(|&b| b).count();
            rows.push(JlRow {
                distribution: dist.label(),
                n,
                trials,
                epsilon: eps,
                violations: count,
                rate: count as f64 / trials as f64,
                theory: failure_probability(n, eps, DEFAULT_LD_CONSTANT),
            });
        }
    }
    out.csv_rows("jltest.csv", &rows)?;
    out.json("report.json", &JlReport { evaluated_at: "misfit at a prior sample", data_dim: v.len(), rows: &rows })
}

fn violated(dist: SketchDistribution, n: usize, v: &DVector<f64>, eps: f64, seed: u64) -> Result<bool> {
    Ok(SketchMatrix::build(dist, n, v.len(), seed)?.distortion(v)?.abs() > eps)
}
