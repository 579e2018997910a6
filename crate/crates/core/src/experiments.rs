//! Monte-Carlo harness: scenario sweeps, degenerate-mode baselines and
//! paired gap statistics.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ao_driver::{build_scene, run_fixed_selection, run_on_scene};
use crate::channel::SurfaceGeometry;
use crate::config::{perfect_square_side, Mode, RunConfig, ScenarioConfig, SweepVar};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::oracle::bfs;
use crate::reformulation::{PortSelection, ReflectVector};
use crate::rng::stream_rng;

pub const CSV_HEADER: [&str; 9] =
    ["scenario", "mode", "sweep_var", "sweep_value", "trial", "seed", "rate_bps_hz", "outer_iters", "wall_time_s"];

/// One trial at one sweep point. A failed trial carries `NaN` as its rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario: String,
    pub mode: String,
    pub sweep_var: String,
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub rate_bps_hz: f64,
    pub outer_iters: usize,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.rate_bps_hz.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub sweep_value: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub mode: String,
    pub sweep_var: String,
    pub points: Vec<SummaryPoint>,
}

/// Outcome of a single optimization in any mode.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub rate: f64,
    pub outer_iters: usize,
    pub selection: PortSelection,
    pub v: ReflectVector,
}

/// Copy of `cfg` with one sweep variable set.
pub fn apply_sweep(cfg: &RunConfig, var: SweepVar, value: Option<f64>) -> Result<RunConfig> {
    let mut out = cfg.clone();
    let Some(x) = value else { return Ok(out) };
    match var {
        SweepVar::TxPowerDbm => out.system.tx_power_dbm = x,
        SweepVar::WX => out.geometry.w_x = x,
        SweepVar::M => {
            let side = perfect_square_side(x)
                .ok_or_else(|| Error::Validation(format!("M = {x} is not a perfect square")))?;
            out.geometry.m_x = side;
            out.geometry.m_y = None;
        }
        SweepVar::None => {}
    }
    Ok(out)
}

/// `m_o` ports forming the block nearest the surface centre: a centred
/// `k × k` square when the grid is square and `m_o = k²`, otherwise the
/// `m_o` ports closest to the centre (lowest index among equal distances).
pub fn centered_block(geom: &SurfaceGeometry, m_o: usize) -> Result<PortSelection> {
    let m = geom.num_elements();
    if m_o == 0 || m_o > m {
        return Err(Error::Validation(format!("M_o = {m_o} must lie in 1..={m}")));
    }
    let k = (m_o as f64).sqrt().round() as usize;
    if geom.m_x == geom.m_y && k * k == m_o {
        let off = (geom.m_x - k) / 2;
        let idx: Vec<usize> =
            (0..k).flat_map(|r| (0..k).map(move |c| (r + off) * geom.m_x + c + off)).collect();
        return PortSelection::new(&idx, m);
    }
    let mut order: Vec<usize> = (0..m).collect();
    let dist = |i: usize| {
        let (x, y) = geom.position(i);
        x * x + y * y
    };
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    PortSelection::new(&order[..m_o], m)
}

/// Sets every non-zero coefficient to unit magnitude and zeros to `1`.
pub fn unit_modulus(v: &ReflectVector) -> ReflectVector {
    ReflectVector(v.0.map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }))
}

/// Runs one mode on the scene of `seed`. Every mode draws the same channel
/// samples for the same seed.
pub fn run_mode(cfg: &RunConfig, mode: Mode, m_o: usize, seed: u64) -> Result<TrialOutcome> {
    let geom = cfg.geometry.surface()?;
    let scene = build_scene(&geom, &cfg.system, cfg.outer.saa_samples, seed)?;
    let outer = cfg.outer_config(seed);
    match mode {
        Mode::Faris => {
            let r = run_on_scene(&scene, m_o, &outer)?;
            Ok(TrialOutcome { rate: r.rate_star, outer_iters: r.iteration_count, selection: r.selection_star, v: r.v_star })
        }
        Mode::FrisMode => {
            let mut budget = scene.budget;
            budget.g_max = 1.0;
            budget.p_max = f64::INFINITY;
            let unit = scene.with_budget(budget);
            let r = run_on_scene(&unit, m_o, &outer)?;
            let v = unit_modulus(&r.v_star);
            let rate = unit.rate(&r.selection_star, &v)?;
            Ok(TrialOutcome { rate, outer_iters: r.iteration_count, selection: r.selection_star, v })
        }
        Mode::ArisMode => {
            let sel = centered_block(&geom, m_o)?;
            let r = run_fixed_selection(&scene, &sel, &outer)?;
            Ok(TrialOutcome { rate: r.rate_star, outer_iters: 1, selection: sel, v: r.v_star })
        }
        Mode::Bfs => {
            let r = bfs(&scene, m_o, &cfg.bfs.config())?;
            Ok(TrialOutcome { rate: r.rate, outer_iters: 0, selection: r.selection, v: r.v })
        }
    }
}

fn check_bfs_size(cfg: &RunConfig, m_o: usize) -> Result<()> {
    let geom = cfg.geometry.surface()?;
    let bc = cfg.bfs.config();
    match bc.search_size(geom.num_elements(), m_o) {
        Some(n) if n <= bc.max_search_size as u128 => Ok(()),
        n => Err(Error::Config(format!(
            "exhaustive search over {} configurations exceeds max_search_size = {}",
            n.map_or_else(|| "more than 2^128".into(), |n| n.to_string()),
            bc.max_search_size
        ))),
    }
}

/// Runs every (sweep value, trial) pair of a scenario and returns the rows
/// in (sweep value, trial) order. Failed trials yield rows with a `NaN`
/// rate; they are logged and the scenario carries on.
pub fn scenario_rows(cfg: &RunConfig, sc: &ScenarioConfig) -> Result<Vec<ResultRow>> {
    sc.validate()?;
    let m_o = sc.m_o.unwrap_or(cfg.m_o);
    let mut jobs = Vec::new();
    for value in sc.points() {
        let point_cfg = apply_sweep(cfg, sc.sweep_var, value)?;
        point_cfg.validate_for(m_o)?;
        if sc.mode == Mode::Bfs {
            check_bfs_size(&point_cfg, m_o)?;
        }
        for trial in 0..sc.trials {
            jobs.push((value, trial, point_cfg.clone()));
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(value, trial, point_cfg)| {
            let seed = cfg.seed.wrapping_add(trial as u64);
            let start = Instant::now();
            let outcome = run_mode(&point_cfg, sc.mode, m_o, seed);
            let wall = start.elapsed().as_secs_f64();
            let (rate, iters) = match outcome {
                Ok(o) => (o.rate, o.outer_iters),
                Err(e) => {
                    log::error!("scenario {} value {:?} trial {trial} failed: {e}", sc.name, value);
                    (f64::NAN, 0)
                }
            };
            ResultRow {
                scenario: sc.name.clone(),
                mode: sc.mode.as_str().into(),
                sweep_var: sc.sweep_var.as_str().into(),
                sweep_value: value,
                trial,
                seed,
                rate_bps_hz: rate,
                outer_iters: iters,
                wall_time_s: wall,
            }
        })
        .collect();
    Ok(rows)
}

/// Per-sweep-value mean and sample standard deviation over successful trials.
pub fn summarize(sc: &ScenarioConfig, rows: &[ResultRow]) -> ScenarioSummary {
    let points = sc
        .points()
        .into_iter()
        .map(|value| {
            let at: Vec<&ResultRow> = rows.iter().filter(|r| r.sweep_value == value).collect();
            let ok: Vec<f64> = at.iter().filter(|r| !r.failed()).map(|r| r.rate_bps_hz).collect();
            let (mean, std) = mean_std(&ok);
            SummaryPoint { sweep_value: value, mean, std, trials: at.len(), failures: at.len() - ok.len() }
        })
        .collect();
    ScenarioSummary {
        scenario: sc.name.clone(),
        mode: sc.mode.as_str().into(),
        sweep_var: sc.sweep_var.as_str().into(),
        points,
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_rows<W: Write>(rows: &[ResultRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a scenario, writes its rows as CSV to `sink` and returns the summary.
pub fn run_scenario<W: Write>(cfg: &RunConfig, sc: &ScenarioConfig, sink: W) -> Result<(ScenarioSummary, Vec<ResultRow>)> {
    let rows = scenario_rows(cfg, sc)?;
    write_rows(&rows, sink)?;
    Ok((summarize(sc, &rows), rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub gap: f64,
    pub cumulative: f64,
}

/// Paired gaps `a − b` by (sweep value, trial), sorted into an empirical CDF.
pub fn gap_cdf(a: &[ResultRow], b: &[ResultRow]) -> Result<Vec<CdfPoint>> {
    let gaps = paired_gaps(a, b)?;
    let mut sorted = gaps;
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.into_iter().enumerate().map(|(i, gap)| CdfPoint { gap, cumulative: (i + 1) as f64 / n }).collect())
}

/// `a − b` for every pair of successful rows sharing sweep value and trial.
pub fn paired_gaps(a: &[ResultRow], b: &[ResultRow]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for ra in a {
        let rb = b
            .iter()
            .find(|rb| rb.sweep_value == ra.sweep_value && rb.trial == ra.trial)
            .ok_or_else(|| Error::Validation(format!("no partner row for trial {} at {:?}", ra.trial, ra.sweep_value)))?;
        if ra.seed != rb.seed {
            return Err(Error::Validation(format!(
                "trial {} uses seed {} in one scenario and {} in the other",
                ra.trial, ra.seed, rb.seed
            )));
        }
        if !ra.failed() && !rb.failed() {
            out.push(ra.rate_bps_hz - rb.rate_bps_hz);
        }
    }
    Ok(out)
}

/// Percentile bootstrap interval for the mean of `xs`.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = stream_rng(seed, 0);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let pick = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (pick(alpha), pick(1.0 - alpha))
}
