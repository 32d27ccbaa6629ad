//! Convergence-study harness: error metrics, parameter sweeps over
//! `(degree, noise, trial)`, log-log rate fits, and CSV emission.
//!
//! Sweep rows are generated in deterministic `(n, noise, trial)` order
//! with per-trial seeds derived from the master seed, so identical
//! configurations yield byte-identical CSV output apart from the wall-time
//! column.

use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::data::{
    canonical_interleave_shifts, make_dataset, shard_interleaved, Dataset, NoiseModel,
    SamplingKind, TargetFunction, RNG_ALGORITHM_ID,
};
use crate::estimator::{fit_dfh, fit_ndfh, Estimator};
use crate::filter::Filter;
use crate::manifold::{reference_grid, TWO_PI};
use crate::numerics::{derive_seed, pairwise_sum_by};
use crate::quadrature::{grid_rule, restrict_rule, shifted_grid_rule, solve_random_weights, SolveOptions};

#[derive(Debug, Error)]
pub enum ExperimentsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("generalization error did not stabilize under grid refinement: {at_g:.6e} at G, {at_2g:.6e} at 2G")]
    NonConvergentRefinement { at_g: f64, at_2g: f64 },
    #[error("rate fit needs at least 3 rows with distinct N ({0} usable)")]
    InsufficientRows(usize),
}

/// Noise family applied at each sweep level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepNoiseKind {
    Gaussian,
    BoundedUniform,
}

/// Input sampling for sweep cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepSampling {
    /// Equispaced grids with `N = 9n²` points per shard.
    Grid,
    /// Uniform random points with solved minimal-norm weights.
    Random,
}

/// Full description of a sweep.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub target: TargetFunction,
    /// Strictly increasing degree list.
    pub degrees: Vec<u32>,
    /// Noise levels; 0 means clean data (run once regardless of `trials`).
    pub noise_levels: Vec<f64>,
    pub noise_kind: SweepNoiseKind,
    /// Number of servers; 1 fits a single estimator, a perfect square
    /// `q² > 1` fits interleaved-grid shards.
    pub servers: u32,
    pub sampling: SweepSampling,
    /// Evaluation grid resolution; 0 selects `8 · max degree`.
    pub eval_resolution: u32,
    /// Trials per noisy cell.
    pub trials: u32,
    pub seed: u64,
    /// Echoed into the CSV header; the harness itself does not write files.
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentsError> {
        let bad = |msg: String| Err(ExperimentsError::InvalidConfig(msg));
        if self.degrees.is_empty() {
            return bad("degree list is empty".into());
        }
        if !self.degrees.windows(2).all(|w| w[0] < w[1]) {
            return bad("degree list must be strictly increasing".into());
        }
        if self.degrees[0] == 0 {
            return bad("degrees must be >= 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.servers == 0 {
            return bad("servers must be >= 1".into());
        }
        if self.noise_levels.is_empty() {
            return bad("noise list is empty".into());
        }
        if self.noise_levels.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return bad("noise levels must be finite and >= 0".into());
        }
        let max_n = *self.degrees.last().unwrap();
        if self.eval_resolution != 0 && self.eval_resolution < 4 * max_n {
            return bad(format!(
                "eval_resolution {} below 4·max degree = {}",
                self.eval_resolution,
                4 * max_n
            ));
        }
        Ok(())
    }

    /// The evaluation grid used for generalization errors.
    pub fn resolved_eval_resolution(&self) -> u32 {
        if self.eval_resolution == 0 {
            8 * self.degrees.last().copied().unwrap_or(1)
        } else {
            self.eval_resolution
        }
    }

    fn config_echo(&self) -> String {
        let degrees: Vec<String> = self.degrees.iter().map(|d| d.to_string()).collect();
        let noise: Vec<String> = self.noise_levels.iter().map(|s| s.to_string()).collect();
        format!(
            "target={:?} degrees={} noise={} kind={:?} servers={} sampling={:?} trials={} eval_resolution={} seed={} output={}",
            self.target,
            degrees.join(";"),
            noise.join(";"),
            self.noise_kind,
            self.servers,
            self.sampling,
            self.trials,
            self.resolved_eval_resolution(),
            self.seed,
            self.output.as_deref().unwrap_or("-"),
        )
    }
}

/// One sweep cell's results.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub n: u32,
    pub n_points: usize,
    pub m: u32,
    pub noise: f64,
    pub seed: u64,
    pub train_mse: f64,
    pub gen_l2sq: f64,
    pub imag_resid: f64,
    pub wall_ms: u64,
}

impl ResultRow {
    fn check(&self) -> Result<(), ExperimentsError> {
        let fields = [
            ("train_mse", self.train_mse),
            ("gen_l2sq", self.gen_l2sq),
            ("imag_resid", self.imag_resid),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ExperimentsError::InvalidConfig(format!(
                    "row produced non-finite or negative {name}: {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A cell that could not run, with the reason.
#[derive(Clone, Debug)]
pub struct SkippedCell {
    pub n: u32,
    pub noise: f64,
    pub trial: u32,
    pub reason: String,
}

/// Rows plus skipped cells from one sweep.
#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<SkippedCell>,
}

/// Generalization error with its refinement diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct L2Details {
    /// `Σ_G w (E(x) - f(x))²` at the requested resolution.
    pub value: f64,
    /// Same quantity at `2G`.
    pub refined: f64,
    pub rel_change: f64,
    /// Largest imaginary residual seen while evaluating at `G`.
    pub max_imag: f64,
}

/// Squared L₂ distance between an estimator and the ideal target on the
/// `G×G` reference grid (Lebesgue measure). The value is recomputed at
/// `2G`; a relative change above 10% is flagged as non-convergent.
pub fn l2_sq_error(
    est: &dyn Estimator,
    target: &TargetFunction,
    g: u32,
) -> Result<f64, ExperimentsError> {
    l2_sq_error_detailed(est, target, g).map(|d| d.value)
}

/// [`l2_sq_error`] with the refinement diagnostics exposed.
pub fn l2_sq_error_detailed(
    est: &dyn Estimator,
    target: &TargetFunction,
    g: u32,
) -> Result<L2Details, ExperimentsError> {
    let (value, max_imag) = l2_sq_at(est, target, g);
    let (refined, _) = l2_sq_at(est, target, 2 * g);
    let rel_change = (refined - value).abs() / value.max(1e-300);
    // ignore relative wobble at the floating-point noise floor
    if (refined - value).abs() > 0.1 * value + 1e-16 {
        return Err(ExperimentsError::NonConvergentRefinement {
            at_g: value,
            at_2g: refined,
        });
    }
    Ok(L2Details {
        value,
        refined,
        rel_change,
        max_imag,
    })
}

fn l2_sq_at(est: &dyn Estimator, target: &TargetFunction, g: u32) -> (f64, f64) {
    let field = est.eval_grid(g);
    let grid = reference_grid(g);
    let w = TWO_PI * TWO_PI / (g as f64 * g as f64);
    let value = pairwise_sum_by(0, grid.len(), &|i| {
        let d = field.values[i] - target.value(grid[i].0);
        w * d * d
    });
    (value, field.max_imag)
}

/// Mean squared error on the training data, `(1/N) Σ (E(x_i) - y_i)²`.
pub fn train_mse(est: &dyn Estimator, data: &Dataset) -> f64 {
    let pred = est.evaluate(data.points());
    pairwise_sum_by(0, data.len(), &|i| {
        let d = pred[i] - data.values()[i];
        d * d
    }) / data.len() as f64
}

/// Which error column a rate fit reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorField {
    TrainMse,
    GenL2Sq,
}

/// Least-squares fit of `log(error)` against `log(N)`.
#[derive(Clone, Copy, Debug)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Rows that entered the fit.
    pub used: usize,
    /// Rows excluded for zero/negative/non-finite error.
    pub excluded: usize,
}

/// Fit the convergence rate from sweep rows. Rows with non-positive or
/// non-finite error are excluded (and counted); at least 3 distinct `N`
/// must remain.
pub fn fit_rate(rows: &[ResultRow], field: ErrorField) -> Result<RateFit, ExperimentsError> {
    let select = |r: &ResultRow| match field {
        ErrorField::TrainMse => r.train_mse,
        ErrorField::GenL2Sq => r.gen_l2sq,
    };
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| select(r) > 0.0 && select(r).is_finite())
        .map(|r| ((r.n_points as f64).ln(), select(r).ln()))
        .collect();
    let excluded = rows.len() - usable.len();
    let distinct: std::collections::BTreeSet<u64> = rows
        .iter()
        .filter(|r| select(r) > 0.0 && select(r).is_finite())
        .map(|r| r.n_points as u64)
        .collect();
    if distinct.len() < 3 {
        return Err(ExperimentsError::InsufficientRows(distinct.len()));
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &usable {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: mean_y - slope * mean_x,
        used: usable.len(),
        excluded,
    })
}

/// The reporting convenience behind the noise-plateau readout: the
/// smallest degree whose mean generalization error exceeds 0.9× the
/// previous degree's, scanning the rows of one noise level.
pub fn noise_plateau_degree(rows: &[ResultRow], noise: f64) -> Option<u32> {
    let mut by_n: Vec<(u32, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.noise == noise) {
        match by_n.iter_mut().find(|(n, _, _)| *n == r.n) {
            Some((_, sum, count)) => {
                *sum += r.gen_l2sq;
                *count += 1;
            }
            None => by_n.push((r.n, r.gen_l2sq, 1)),
        }
    }
    by_n.sort_by_key(|(n, _, _)| *n);
    for w in by_n.windows(2) {
        let prev = w[0].1 / w[0].2 as f64;
        let cur = w[1].1 / w[1].2 as f64;
        if cur > 0.9 * prev {
            return Some(w[1].0);
        }
    }
    None
}

/// Run the full sweep. Cells run independently (in parallel when enabled)
/// and are collected in `(n, noise, trial)` order; infeasible cells are
/// recorded as skipped with their reason.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, ExperimentsError> {
    cfg.validate()?;
    let filter = Filter::c5_default();
    let g_eval = cfg.resolved_eval_resolution();

    // enumerate cells up front so ids (and thus seeds) are stable
    let mut cells: Vec<(u32, f64, u32, u64)> = Vec::new();
    for &n in &cfg.degrees {
        for &noise in &cfg.noise_levels {
            let trials = if noise == 0.0 { 1 } else { cfg.trials };
            for trial in 0..trials {
                let id = cells.len() as u64;
                cells.push((n, noise, trial, derive_seed(cfg.seed, id)));
            }
        }
    }

    let results: Vec<Result<ResultRow, SkippedCell>> =
        crate::numerics::par_map_indexed(cells.len(), |i| {
            let (n, noise, trial, cell_seed) = cells[i];
            run_cell(cfg, &filter, g_eval, n, noise, trial, cell_seed)
        });

    let mut out = SweepOutput::default();
    for r in results {
        match r {
            Ok(row) => {
                row.check()?;
                out.rows.push(row);
            }
            Err(skip) => out.skipped.push(skip),
        }
    }
    Ok(out)
}

fn run_cell(
    cfg: &ExperimentConfig,
    filter: &Filter,
    g_eval: u32,
    n: u32,
    noise_level: f64,
    trial: u32,
    cell_seed: u64,
) -> Result<ResultRow, SkippedCell> {
    let skip = |reason: String| SkippedCell {
        n,
        noise: noise_level,
        trial,
        reason,
    };
    let start = Instant::now();
    let noise = if noise_level == 0.0 {
        NoiseModel::none()
    } else {
        match cfg.noise_kind {
            SweepNoiseKind::Gaussian => NoiseModel::gaussian(noise_level, derive_seed(cell_seed, 1)),
            SweepNoiseKind::BoundedUniform => {
                NoiseModel::bounded_uniform(noise_level, derive_seed(cell_seed, 1))
            }
        }
    };

    let m = cfg.servers;
    let (est, data_for_train, n_points): (Box<dyn Estimator>, Vec<Dataset>, usize) =
        match (cfg.sampling, m) {
            (SweepSampling::Grid, 1) => {
                let data = make_dataset(&cfg.target, &SamplingKind::grid(n), &noise);
                let rule = grid_rule(n);
                let est = fit_ndfh(&data, n, &rule, filter).map_err(|e| skip(e.to_string()))?;
                let np = data.len();
                (Box::new(est), vec![data], np)
            }
            (SweepSampling::Grid, m) => {
                let q = (m as f64).sqrt().round() as u32;
                if q * q != m {
                    return Err(skip(format!(
                        "server count {m} is not a perfect square; interleaved grids need m = q²"
                    )));
                }
                let shifts = canonical_interleave_shifts(n, q);
                let shards = shard_interleaved(&cfg.target, n, &shifts, &noise)
                    .map_err(|e| skip(e.to_string()))?;
                let rules: Vec<_> = shifts.iter().map(|&s| shifted_grid_rule(n, s)).collect();
                let est =
                    fit_dfh(&shards, n, &rules, m, filter).map_err(|e| skip(e.to_string()))?;
                let np = shards.iter().map(Dataset::len).sum();
                (Box::new(est), shards, np)
            }
            (SweepSampling::Random, 1) => {
                let n_pts = 9 * (n as usize) * (n as usize);
                let data = make_dataset(
                    &cfg.target,
                    &SamplingKind::random(n_pts, derive_seed(cell_seed, 2)),
                    &noise,
                );
                let (rule, _) = solve_random_weights(
                    data.points(),
                    n,
                    1,
                    SolveOptions {
                        seed_label: derive_seed(cell_seed, 2),
                        nonneg_refine: false,
                    },
                )
                .map_err(|e| skip(e.to_string()))?;
                let est = fit_ndfh(&data, n, &rule, filter).map_err(|e| skip(e.to_string()))?;
                let np = data.len();
                (Box::new(est), vec![data], np)
            }
            (SweepSampling::Random, m) => {
                let per_shard = 9 * (n as usize) * (n as usize);
                let total = per_shard * m as usize;
                let data = make_dataset(
                    &cfg.target,
                    &SamplingKind::random(total, derive_seed(cell_seed, 2)),
                    &noise,
                );
                let (rule, _) = solve_random_weights(
                    data.points(),
                    n,
                    m,
                    SolveOptions {
                        seed_label: derive_seed(cell_seed, 2),
                        nonneg_refine: false,
                    },
                )
                .map_err(|e| skip(e.to_string()))?;
                let shards: Vec<Dataset> = (0..m as usize)
                    .map(|j| data.slice(j * per_shard, per_shard))
                    .collect();
                let rules: Vec<_> = (0..m as usize)
                    .map(|j| restrict_rule(&rule, j * per_shard, per_shard))
                    .collect();
                let est =
                    fit_dfh(&shards, n, &rules, m, filter).map_err(|e| skip(e.to_string()))?;
                (Box::new(est), shards, total)
            }
        };

    let train = {
        let mut acc = 0.0;
        for d in &data_for_train {
            acc += train_mse(est.as_ref(), d) * d.len() as f64;
        }
        acc / n_points as f64
    };
    let details = l2_sq_error_detailed(est.as_ref(), &cfg.target, g_eval)
        .map_err(|e| skip(e.to_string()))?;
    let row = ResultRow {
        n,
        n_points,
        m,
        noise: noise_level,
        seed: cell_seed,
        train_mse: train,
        gen_l2sq: details.value,
        imag_resid: details.max_imag,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(row)
}

/// Write the sweep CSV: `#`-prefixed header comments (config echo and RNG
/// id), the column list, then one row per cell. Everything except the
/// wall-time column is byte-deterministic for a fixed config and seed.
pub fn write_csv(
    w: &mut impl Write,
    cfg: &ExperimentConfig,
    output: &SweepOutput,
) -> io::Result<()> {
    writeln!(w, "# fhi-sweep v1")?;
    writeln!(w, "# rng={RNG_ALGORITHM_ID}")?;
    writeln!(w, "# config: {}", cfg.config_echo())?;
    writeln!(w, "# columns: n,N,m,noise,seed,train_mse,gen_l2sq,imag_resid,wall_ms")?;
    for r in &output.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n, r.n_points, r.m, r.noise, r.seed, r.train_mse, r.gen_l2sq, r.imag_resid, r.wall_ms
        )?;
    }
    for s in &output.skipped {
        writeln!(
            w,
            "# skipped: n={} noise={} trial={} reason={}",
            s.n, s.noise, s.trial, s.reason
        )?;
    }
    Ok(())
}

/// Companion plotting stub referencing a CSV written by [`write_csv`].
pub fn write_plot_stub(w: &mut impl Write, csv_name: &str) -> io::Result<()> {
    writeln!(w, "# plot stub for {csv_name}")?;
    writeln!(w, "# columns: n,N,m,noise,seed,train_mse,gen_l2sq,imag_resid,wall_ms")?;
    writeln!(w, "# gnuplot:")?;
    writeln!(w, "set datafile separator ','")?;
    writeln!(w, "set logscale xy")?;
    writeln!(w, "set xlabel 'N'")?;
    writeln!(w, "set ylabel 'squared L2 error'")?;
    writeln!(
        w,
        "plot '{csv_name}' using 2:7 with linespoints title 'generalization', \\"
    )?;
    writeln!(w, "     '{csv_name}' using 2:6 with linespoints title 'training'")?;
    Ok(())
}
