//! Command implementations behind the `faris` binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ao_driver::{run, OuterResult, OuterStep};
use crate::config::{Mode, RunConfig, ScenarioConfig, SweepVar};
use crate::error::{Error, Result};
use crate::experiments::{gap_cdf, mean_std, paired_gaps, run_scenario, scenario_rows, ScenarioSummary};

/// Exit status for an error: 2 for configuration and validation problems,
/// 3 for numerical failures, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::InvalidArgument(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}

/// Loads the config file (or the defaults when `path` is `None`) and
/// applies the overrides and the `--seed` flag.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    match path {
        Some(p) => RunConfig::load(p, &all),
        None => RunConfig::from_toml_str("", &all),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Coefficient {
    magnitude: f64,
    phase_rad: f64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    seed: u64,
    num_ports: usize,
    m_o: usize,
    rate_bps_hz: f64,
    converged: bool,
    iteration_count: usize,
    selection: &'a [usize],
    v: Vec<Coefficient>,
    radiated_power_w: f64,
    outer_trace: &'a [f64],
    steps: &'a [OuterStep],
}

/// Single joint optimization; writes `result.json` and `trace.csv`.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<OuterResult> {
    let geom = cfg.geometry.surface()?;
    let outer = cfg.outer_config(cfg.seed);
    let result = run(&geom, &cfg.system, cfg.m_o, &outer)?;
    let scene = crate::ao_driver::build_scene(&geom, &cfg.system, outer.saa_samples, cfg.seed)?;
    let power = scene.radiated_power(&result.selection_star, &result.v_star)?;
    fs::create_dir_all(out_dir)?;
    let report = RunReport {
        seed: cfg.seed,
        num_ports: geom.num_elements(),
        m_o: cfg.m_o,
        rate_bps_hz: result.rate_star,
        converged: result.converged,
        iteration_count: result.iteration_count,
        selection: result.selection_star.indices(),
        v: result.v_star.0.iter().map(|z| Coefficient { magnitude: z.norm(), phase_rad: z.arg() }).collect(),
        radiated_power_w: power,
        outer_trace: &result.outer_trace,
        steps: &result.steps,
    };
    write_json(&out_dir.join("result.json"), &report)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join("trace.csv"))?));
    w.write_record(["iteration", "rate_bps_hz"])?;
    for (i, r) in result.outer_trace.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(result)
}

/// Runs a named scenario; writes `<name>.csv` and `<name>_summary.json`.
pub fn cmd_sweep(cfg: &RunConfig, name: &str, out_dir: &Path) -> Result<ScenarioSummary> {
    let sc = cfg.scenario(name)?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{name}.csv"));
    let (summary, _) = run_scenario(cfg, sc, BufWriter::new(File::create(&csv_path)?))?;
    write_json(&out_dir.join(format!("{name}_summary.json")), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct CompareRow {
    trial: usize,
    seed: u64,
    ao_rate_bps_hz: f64,
    bfs_rate_bps_hz: f64,
    gap_bps_hz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub trials: usize,
    pub num_ports: usize,
    pub m_o: usize,
    pub phase_bits: u32,
    pub gain_levels: usize,
    /// Mean of AO minus BFS.
    pub mean_gap_bps_hz: f64,
    pub mean_abs_gap_bps_hz: f64,
    pub mean_ao_bps_hz: f64,
    pub mean_bfs_bps_hz: f64,
}

/// Paired AO and exhaustive-search runs over `bfs.trials` seeds; writes
/// `bfs_compare.csv`, `bfs_gap_cdf.csv` and `bfs_compare_summary.json`.
pub fn cmd_bfs_compare(cfg: &RunConfig, out_dir: &Path) -> Result<CompareSummary> {
    let scenario = |name: &str, mode| ScenarioConfig {
        name: name.into(),
        mode,
        sweep_var: SweepVar::None,
        sweep_values: Vec::new(),
        trials: cfg.bfs.trials,
        m_o: None,
    };
    let bfs_rows = scenario_rows(cfg, &scenario("bfs", Mode::Bfs))?;
    let ao_rows = scenario_rows(cfg, &scenario("ao", Mode::Faris))?;
    let gaps = paired_gaps(&ao_rows, &bfs_rows)?;
    let cdf = gap_cdf(&ao_rows, &bfs_rows)?;
    fs::create_dir_all(out_dir)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join("bfs_compare.csv"))?));
    for (a, b) in ao_rows.iter().zip(&bfs_rows) {
        w.serialize(CompareRow {
            trial: a.trial,
            seed: a.seed,
            ao_rate_bps_hz: a.rate_bps_hz,
            bfs_rate_bps_hz: b.rate_bps_hz,
            gap_bps_hz: a.rate_bps_hz - b.rate_bps_hz,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join("bfs_gap_cdf.csv"))?));
    for p in &cdf {
        w.serialize(p)?;
    }
    w.flush()?;

    let ok = |rows: &[crate::experiments::ResultRow]| -> Vec<f64> {
        rows.iter().filter(|r| !r.failed()).map(|r| r.rate_bps_hz).collect()
    };
    let abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
    let summary = CompareSummary {
        trials: cfg.bfs.trials,
        num_ports: cfg.geometry.surface()?.num_elements(),
        m_o: cfg.m_o,
        phase_bits: cfg.bfs.phase_bits,
        gain_levels: cfg.bfs.gain_levels,
        mean_gap_bps_hz: mean_std(&gaps).0,
        mean_abs_gap_bps_hz: mean_std(&abs).0,
        mean_ao_bps_hz: mean_std(&ok(&ao_rows)).0,
        mean_bfs_bps_hz: mean_std(&ok(&bfs_rows)).0,
    };
    write_json(&out_dir.join("bfs_compare_summary.json"), &summary)?;
    Ok(summary)
}

/// Quick numerical self-test on small random instances. Returns the list
/// of check names with their pass flags.
pub fn cmd_selfcheck(seed: u64) -> Result<Vec<(String, bool)>> {
    use crate::active_reflect::{inner_ao, surrogate_terms, InnerConfig};
    use crate::ao_driver::{build_scene, initial_selection};
    use crate::channel::{SurfaceGeometry, SystemParams};
    use crate::linalg::min_eigenvalue;
    use crate::port_select::{budget_sum, clamp_mu, solve_nu};
    use crate::reformulation::{radiated_power_direct, sinr_direct, sinr_lifted};
    use crate::rng::stream_rng;
    use rand::Rng;

    let geom = SurfaceGeometry::new(3, 2.0, 0.06)?;
    let params = SystemParams::default();
    let scene = build_scene(&geom, &params, 4, seed)?;
    let sel = initial_selection(9, 4, seed)?;
    let pre = scene.precompute(&sel)?;
    let mut rng = stream_rng(seed, 3);
    let out = inner_ao(&pre, &InnerConfig::default(), &mut rng)?;

    let mut checks = Vec::new();
    let mut equiv = true;
    for s in 0..scene.num_samples() {
        let d = sinr_direct(&out.v, &sel, &scene.corr, &scene.channels, &scene.budget, s)?;
        let l = sinr_lifted(&out.v.lift(), &pre, s);
        equiv &= (d - l).abs() <= 1e-9 * d.abs().max(l.abs());
    }
    let pd = radiated_power_direct(&out.v, &sel, &scene.corr, &scene.channels, &scene.budget)?;
    equiv &= (pd - pre.power(&out.v)).abs() <= 1e-9 * pd;
    checks.push(("direct and lifted forms agree".to_string(), equiv));

    let mut psd = true;
    for m in pre.c.iter().chain([&pre.q1, &pre.q2, &pre.f]) {
        let top = crate::linalg::max_eigenvalue(m)?;
        psd &= min_eigenvalue(m)? >= -1e-9 * top.abs();
    }
    checks.push(("lifted matrices are PSD".to_string(), psd));

    let tight = surrogate_terms(&out.v_mat, &out.y, &pre)
        .iter()
        .enumerate()
        .all(|(s, &x)| (x - pre.sinr(&out.v, s)).abs() <= 1e-9 * (1.0 + pre.sinr(&out.v, s)));
    checks.push(("quadratic transform is tight after the y update".to_string(), tight));
    let monotone = out.rate_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    checks.push(("inner rate trace is non-decreasing".to_string(), monotone));
    let feasible = out.v.max_gain() <= pre.g_max * (1.0 + 1e-9) && pre.power(&out.v) <= pre.p_max * (1.0 + 1e-9);
    checks.push(("reflect vector is feasible".to_string(), feasible));

    let mu = clamp_mu(&(0..9).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
    let nu = solve_nu(&mu, 4, 1e-12)?;
    checks.push(("multiplier meets the budget".to_string(), (budget_sum(&mu, nu)? - 4.0).abs() <= 1e-8));
    Ok(checks)
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
