//! Grid runners behind each subcommand. Cells run on the ambient rayon pool
//! and are collected in grid order, so output does not depend on `--jobs`.

use anyhow::{bail, Result};
use choquet_emv::closedform::{
    classical_solution, cost_ratio, expected_wealth, exploration_cost, lagrange_multiplier, optimal_policy, value,
};
use choquet_emv::market::{
    path_rng, simulate_outcomes, simulate_sampled, McEstimate, OptimalSchedule, PolicySchedule, RunningReward,
};
use choquet_emv::rl::{actor_policy, train, Summary, TrainLog};
use choquet_emv::LocationScalePolicy;
use rayon::prelude::*;

use crate::config::{cell_seed, Cell, Config};
use crate::output::{sig6, Csv};

fn mode_label(cfg: &Config) -> String {
    cfg.problem.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
}

fn seed_of(cfg: &Config, cell: &Cell) -> u64 {
    cell_seed(cfg.seed, cell.mu, cell.sigma, cell.mode, cell.h)
}

fn cell_columns(cell: &Cell) -> Vec<String> {
    vec![sig6(cell.mu), sig6(cell.sigma), cell.h.name().into(), cell.mode.name().into(), sig6(cell.lambda)]
}

/// Error text for a status column, with commas swapped for semicolons so
/// the cell needs no quoting.
fn failure(e: &anyhow::Error) -> String {
    format!("failed: {e:#}").replace(',', ";")
}

/// Closed-form report per cell.
pub fn solve(cfg: &Config) -> Result<Csv> {
    let mut csv = Csv::new(
        &cfg.hash(),
        cfg.seed,
        &mode_label(cfg),
        &[
            "mu",
            "sigma",
            "h",
            "mode",
            "lambda",
            "rho",
            "w",
            "value",
            "classical_value",
            "exploration_cost",
            "cost_ratio",
            "location_0",
            "scale_0",
            "variance_0",
            "expected_terminal",
        ],
    );
    for cell in cfg.cells() {
        let market = cfg.market(&cell)?;
        let spec = cfg.spec(&cell)?;
        let w = lagrange_multiplier(&spec, &market)?;
        let x0 = spec.x0;
        let (_, v_cl) = classical_solution(0.0, x0, &spec, &market, w)?;
        let policy = optimal_policy(0.0, x0, &spec, &market, w)?;
        let (_, var) = policy.moments();
        let mut row = cell_columns(&cell);
        row.extend(
            [
                market.rho(),
                w,
                value(0.0, x0, &spec, &market, w)?,
                v_cl,
                exploration_cost(&spec, &market)?,
                cost_ratio(&spec, &market)?,
                policy.location,
                policy.scale,
                var,
                expected_wealth(spec.horizon, &spec, &market, w)?,
            ]
            .map(sig6),
        );
        csv.push(row);
    }
    Ok(csv)
}

struct SimulateCell {
    objective: McEstimate,
    value: f64,
    terminal: McEstimate,
}

fn simulate_cell(cfg: &Config, cell: &Cell) -> Result<SimulateCell> {
    let market = cfg.market(cell)?;
    let spec = cfg.spec(cell)?;
    let w = lagrange_multiplier(&spec, &market)?;
    let seed = seed_of(cfg, cell);
    let sim = cfg.sim_config(seed)?;
    let schedule = OptimalSchedule { spec: spec.clone(), market, w };
    let out = simulate_outcomes(&schedule, &spec, &market, &sim, w, cfg.simulation.dynamics)?;
    let objective = McEstimate::from_samples(&out.iter().map(|o| o.objective).collect::<Vec<_>>());
    let terminal = McEstimate::from_samples(&out.iter().map(|o| o.terminal).collect::<Vec<_>>());
    Ok(SimulateCell { objective, value: value(0.0, spec.x0, &spec, &market, w)?, terminal })
}

/// Monte Carlo objective and terminal mean under the optimal schedule.
pub fn simulate(cfg: &Config) -> Result<Csv> {
    let mut csv = Csv::new(
        &cfg.hash(),
        cfg.seed,
        &mode_label(cfg),
        &[
            "mu",
            "sigma",
            "h",
            "mode",
            "lambda",
            "seed",
            "paths",
            "objective",
            "objective_se",
            "value",
            "objective_z",
            "terminal_mean",
            "terminal_se",
            "target",
            "terminal_z",
            "status",
        ],
    );
    let cells = cfg.cells();
    let results: Vec<_> = cells.par_iter().map(|c| simulate_cell(cfg, c)).collect();
    let target = cfg.problem.target;
    for (cell, res) in cells.iter().zip(results) {
        let mut row = cell_columns(cell);
        row.push(seed_of(cfg, cell).to_string());
        row.push(cfg.simulation.paths.to_string());
        match res {
            Ok(r) => {
                row.extend(
                    [
                        r.objective.estimate,
                        r.objective.std_error,
                        r.value,
                        r.objective.z_score(r.value),
                        r.terminal.estimate,
                        r.terminal.std_error,
                        target,
                        r.terminal.z_score(target),
                    ]
                    .map(sig6),
                );
                row.push("ok".into());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n("nan".to_string(), 8));
                row.push(failure(&e));
            }
        }
        csv.push(row);
    }
    Ok(csv)
}

fn train_cell(cfg: &Config, cell: &Cell, seed: u64) -> Result<TrainLog> {
    let market = cfg.market(cell)?;
    let log = train(&cfg.train_config(cell, seed), &market)?;
    Ok(log)
}

/// One training run on a single-cell grid, seeded with the base seed.
/// Returns the per-episode log and the trailing-window summary.
pub fn train_single(cfg: &Config) -> Result<(Csv, Summary)> {
    let cell = cfg.single_cell()?;
    let log = train_cell(cfg, &cell, cfg.seed)?;
    let mut csv = Csv::new(
        &cfg.hash(),
        cfg.seed,
        cell.mode.name(),
        &["episode", "terminal_wealth", "w", "theta0", "theta1", "theta2", "phi0", "phi1", "phi2"],
    );
    for r in &log.records {
        let mut row = vec![r.episode.to_string()];
        let [t0, t1, t2] = r.theta.to_array();
        let [p0, p1, p2] = r.phi.to_array();
        row.extend([r.terminal_wealth, r.w, t0, t1, t2, p0, p1, p2].map(sig6));
        csv.push(row);
    }
    Ok((csv, log.summary(cfg.training.window)))
}

/// Trailing-window mean, variance and Sharpe ratio per cell, one row per
/// `(h, sigma, mu)` with a column group per mode. Failed cells keep their
/// row and carry the error in the status column.
pub fn table(cfg: &Config) -> Result<Csv> {
    let modes = &cfg.problem.modes;
    let mut columns = vec!["mu".to_string(), "sigma".into(), "h".into()];
    for m in modes {
        for stat in ["lambda", "seed", "mean", "variance", "sharpe", "status"] {
            columns.push(format!("{}_{stat}", m.name()));
        }
    }
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&cfg.hash(), cfg.seed, &mode_label(cfg), &columns);

    let cells = cfg.cells();
    let window = cfg.training.window;
    let results: Vec<Result<Summary>> =
        cells.par_iter().map(|c| train_cell(cfg, c, seed_of(cfg, c)).map(|log| log.summary(window))).collect();

    // cells come in (h, sigma, mu, mode) order, so each row is one chunk
    for (group, res) in cells.chunks(modes.len()).zip(results.chunks(modes.len())) {
        let first = group[0];
        let mut row = vec![sig6(first.mu), sig6(first.sigma), first.h.name().to_string()];
        for (cell, r) in group.iter().zip(res) {
            row.push(sig6(cell.lambda));
            row.push(seed_of(cfg, cell).to_string());
            match r {
                Ok(s) => {
                    row.extend([s.mean, s.variance, s.sharpe].map(sig6));
                    row.push("ok".into());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n("nan".to_string(), 3));
                    row.push(failure(e));
                }
            }
        }
        csv.push(row);
    }
    Ok(csv)
}

/// Block means of terminal wealth for every cell (series `grid`), then the
/// same for each configured lambda with the sweep distortion (series
/// `lambda_sweep`). A failed run emits one row with an empty block index.
pub fn figures(cfg: &Config) -> Result<Csv> {
    let mut csv = Csv::new(
        &cfg.hash(),
        cfg.seed,
        &mode_label(cfg),
        &["series", "mu", "sigma", "h", "mode", "lambda", "seed", "block", "episodes", "mean", "status"],
    );
    let mut runs: Vec<(&str, Cell)> = cfg.cells().into_iter().map(|c| ("grid", c)).collect();
    for &sigma in &cfg.market.sigma {
        for &mu in &cfg.market.mu {
            for &mode in &cfg.problem.modes {
                for &lambda in &cfg.figures.lambdas {
                    runs.push(("lambda_sweep", Cell { mu, sigma, mode, h: cfg.figures.sweep_distortion, lambda }));
                }
            }
        }
    }
    let block = cfg.figures.block;
    let results: Vec<Result<Vec<f64>>> =
        runs.par_iter().map(|(_, c)| train_cell(cfg, c, seed_of(cfg, c)).map(|log| log.block_means(block))).collect();
    for ((series, cell), res) in runs.iter().zip(results) {
        let seed = seed_of(cfg, cell).to_string();
        let prefix = |row: &mut Vec<String>| {
            row.push(series.to_string());
            row.extend(cell_columns(cell).into_iter().take(2));
            row.push(cell.h.name().into());
            row.push(cell.mode.name().into());
            row.push(sig6(cell.lambda));
            row.push(seed.clone());
        };
        match res {
            Ok(means) => {
                for (i, m) in means.iter().enumerate() {
                    let mut row = Vec::new();
                    prefix(&mut row);
                    row.extend([(i + 1).to_string(), ((i + 1) * block).to_string(), sig6(*m), "ok".into()]);
                    csv.push(row);
                }
            }
            Err(e) => {
                let mut row = Vec::new();
                prefix(&mut row);
                row.extend([String::new(), String::new(), "nan".into(), failure(&e)]);
                csv.push(row);
            }
        }
    }
    Ok(csv)
}

/// Which policy drives a sample trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrajectoryPolicy {
    /// Closed-form optimal policy.
    Optimal,
    /// Actor after a training run with the configured settings.
    Trained,
}

/// One sampled action path per configured distortion on a single
/// `(mu, sigma, mode)` setting.
pub fn trajectory(cfg: &Config, policy: TrajectoryPolicy) -> Result<Csv> {
    if cfg.market.mu.len() != 1 || cfg.market.sigma.len() != 1 || cfg.problem.modes.len() != 1 {
        bail!("trajectory needs a single mu, sigma and mode");
    }
    let mut csv = Csv::new(
        &cfg.hash(),
        cfg.seed,
        &mode_label(cfg),
        &["h", "seed", "step", "t", "x", "u", "location", "scale", "lower", "upper"],
    );
    let cells = cfg.cells();
    let paths: Vec<Result<Vec<Vec<String>>>> = cells.par_iter().map(|c| trajectory_rows(cfg, c, policy)).collect();
    for rows in paths {
        for row in rows? {
            csv.push(row);
        }
    }
    Ok(csv)
}

fn trajectory_rows(cfg: &Config, cell: &Cell, which: TrajectoryPolicy) -> Result<Vec<Vec<String>>> {
    let market = cfg.market(cell)?;
    let spec = cfg.spec(cell)?;
    let seed = seed_of(cfg, cell);
    let sim = cfg.sim_config(seed)?;
    let schedule: Box<dyn PolicySchedule> = match which {
        TrajectoryPolicy::Optimal => {
            let w = lagrange_multiplier(&spec, &market)?;
            Box::new(OptimalSchedule { spec: spec.clone(), market, w })
        }
        TrajectoryPolicy::Trained => {
            let log = train_cell(cfg, cell, seed)?;
            let last = *log.last().expect("at least one episode");
            let (horizon, h) = (spec.horizon, spec.h.clone());
            Box::new(move |t: f64, x: f64| actor_policy(&last.phi, t, x, last.w, horizon, &h))
        }
    };
    let path =
        simulate_sampled(schedule.as_ref(), &market, &sim, spec.x0, RunningReward::none(), &mut path_rng(seed, 0))?;
    let mut rows = Vec::with_capacity(path.len());
    for (i, &u) in path.actions.iter().enumerate() {
        let (t, x) = (path.times[i], path.states[i]);
        let pol: LocationScalePolicy = schedule.policy(t, x)?;
        let (lo, hi) = pol.support();
        let mut row = vec![cell.h.name().to_string(), seed.to_string(), i.to_string()];
        row.extend([t, x, u, pol.location, pol.scale, lo, hi].map(sig6));
        rows.push(row);
    }
    Ok(rows)
}
