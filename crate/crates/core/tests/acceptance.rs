//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use faris::active_reflect::{inner_ao, surrogate_terms, InnerConfig};
use faris::ao_driver::{build_scene, initial_selection, run, run_on_scene, OuterConfig};
use faris::channel::{ChannelSet, CorrelationModel, SurfaceGeometry, SystemParams};
use faris::config::{Mode, RunConfig};
use faris::experiments::{bootstrap_mean_ci, mean_std, run_mode};
use faris::linalg::{complex_gaussian, eigen_extremes, CMat, C64};
use faris::oracle::{bfs, BfsConfig};
use faris::port_select::{budget_sum, clamp_mu, evaluate_sample, p_of_nu, run_cem, solve_nu, CemConfig};
use faris::reformulation::{
    precompute, radiated_power, radiated_power_direct, sinr_direct, sinr_lifted, PortSelection, ReflectVector,
};
use faris::rng::stream_rng;
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn psd_ok(m: &CMat) -> bool {
    let (min, max) = eigen_extremes(m).expect("eigendecomposition");
    min >= -1e-9 * max.abs().max(f64::MIN_POSITIVE)
}

struct Instance {
    corr: CorrelationModel,
    channels: ChannelSet,
    params: SystemParams,
    geom: SurfaceGeometry,
    sel: PortSelection,
    v: ReflectVector,
}

fn random_instance(k: u64) -> Instance {
    let mut rng = stream_rng(k, 77);
    let (m_x, m_y) = loop {
        let m_x = rng.random_range(2..=4);
        let m_y = rng.random_range(1..=4);
        if m_x * m_y <= 16 {
            break (m_x, m_y);
        }
    };
    let geom = SurfaceGeometry::rectangular(m_x, m_y, rng.random_range(0.5..3.0), 0.06).unwrap();
    let m = geom.num_elements();
    let m_o = rng.random_range(1..=m.min(8));
    let s = rng.random_range(1..=4);
    let params = SystemParams {
        tx_power_dbm: rng.random_range(0.0..30.0),
        rician_k: rng.random_range(0.0..5.0),
        ..Default::default()
    };
    let corr = CorrelationModel::build(&geom).unwrap();
    let channels = ChannelSet::draw(&geom, &params, s, k).unwrap();
    let sel = PortSelection::new(&sample(&mut rng, m, m_o).into_vec(), m).unwrap();
    let scale = rng.random_range(0.1..100.0);
    let v = ReflectVector(complex_gaussian(&mut rng, m_o) * C64::new(scale, 0.0));
    Instance { corr, channels, params, geom, sel, v }
}

fn criterion_1_2() -> (Outcome, Outcome) {
    let mut worst = 0.0_f64;
    let mut eq_fail = 0;
    let mut psd_fail = 0;
    for k in 0..200 {
        let inst = random_instance(k);
        let budget = inst.params.link_budget(&inst.geom).unwrap();
        let pre = precompute(&inst.corr, &inst.sel, &inst.channels, &budget).unwrap();
        let vm = inst.v.lift();
        for s in 0..inst.channels.num_samples() {
            let d = sinr_direct(&inst.v, &inst.sel, &inst.corr, &inst.channels, &budget, s).unwrap();
            let l = sinr_lifted(&vm, &pre, s);
            worst = worst.max((d - l).abs() / d.abs().max(l.abs()));
            if !rel_close(d, l, 1e-9) {
                eq_fail += 1;
            }
        }
        let pd = radiated_power_direct(&inst.v, &inst.sel, &inst.corr, &inst.channels, &budget).unwrap();
        let pl = radiated_power(&inst.v, &pre);
        worst = worst.max((pd - pl).abs() / pd.abs().max(pl.abs()));
        if !rel_close(pd, pl, 1e-9) {
            eq_fail += 1;
        }
        let all_psd = pre.c.iter().all(psd_ok) && psd_ok(&pre.q1) && psd_ok(&pre.q2) && psd_ok(&pre.f);
        if !all_psd {
            psd_fail += 1;
        }
    }
    (
        Outcome { pass: eq_fail == 0, detail: format!("200 instances, {eq_fail} mismatches, worst relative error {worst:.2e}") },
        Outcome { pass: psd_fail == 0, detail: format!("{psd_fail} of 200 instances with a non-PSD matrix") },
    )
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for k in 0..50u64 {
        let inst = random_instance(1000 + k);
        let budget = inst.params.link_budget(&inst.geom).unwrap();
        let pre = precompute(&inst.corr, &inst.sel, &inst.channels, &budget).unwrap();
        let cfg = InnerConfig { max_inner_iters: 1 + (k as usize % 5), ..Default::default() };
        let out = inner_ao(&pre, &cfg, &mut stream_rng(k, 5)).unwrap();
        let xi = surrogate_terms(&out.v_mat, &out.y, &pre);
        for (s, &x) in xi.iter().enumerate() {
            let g = pre.sinr(&out.v, s);
            worst = worst.max((x - g).abs() / (1.0 + g));
            checked += 1;
        }
    }
    Outcome { pass: worst <= 1e-9, detail: format!("{checked} samples, worst |xi - gamma|/(1+gamma) = {worst:.2e}") }
}

fn criterion_4() -> Outcome {
    let geom = SurfaceGeometry::new(4, 2.0, 0.06).unwrap();
    let params = SystemParams::default();
    let mut worst_drop = 0.0_f64;
    let mut lengths = Vec::new();
    for seed in 0..20u64 {
        let scene = build_scene(&geom, &params, 32, seed).unwrap();
        let sel = initial_selection(16, 4, seed).unwrap();
        let pre = scene.precompute(&sel).unwrap();
        let out = inner_ao(&pre, &InnerConfig::default(), &mut stream_rng(seed, 9)).unwrap();
        for w in out.rate_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        lengths.push(out.rate_trace.len());
    }
    Outcome {
        pass: worst_drop <= 1e-9,
        detail: format!("20 seeds, largest decrease {worst_drop:.2e}, trace lengths {lengths:?}"),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(55, 0);
    let mut kkt = 0.0_f64;
    let mut budget_err = 0.0_f64;
    let mut g_monotone = true;
    for _ in 0..200 {
        let m = rng.random_range(3..=40);
        let m_o = rng.random_range(1..m);
        let mu = clamp_mu(&(0..m).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let nu = solve_nu(&mu, m_o, 1e-12).unwrap();
        for &x in &mu {
            let p = p_of_nu(x, nu).unwrap();
            kkt = kkt.max((nu * p * p - (nu + 1.0) * p + x).abs());
        }
        budget_err = budget_err.max((budget_sum(&mu, nu).unwrap() - m_o as f64).abs());
        let grid: Vec<f64> = (0..100).map(|i| -50.0 + i as f64 * (100.0 / 99.0)).collect();
        let g: Vec<f64> = grid.iter().map(|&n| budget_sum(&mu, n).unwrap()).collect();
        g_monotone &= g.windows(2).all(|w| w[1] < w[0]);
    }
    let geom = SurfaceGeometry::new(4, 2.0, 0.06).unwrap();
    let params = SystemParams::default();
    let mut phi_drop = 0.0_f64;
    let mut iters = 0;
    for seed in 0..20u64 {
        let scene = build_scene(&geom, &params, 8, seed).unwrap();
        let sel = initial_selection(16, 4, seed).unwrap();
        let pre = scene.precompute(&sel).unwrap();
        let v = faris::active_reflect::init_v(&pre, &mut stream_rng(seed, 3));
        let out = run_cem(&v, &scene, &CemConfig::default(), &mut stream_rng(seed, 4)).unwrap();
        for row in &out.trace {
            phi_drop = phi_drop.max(row.phi_before - row.phi_after);
            iters += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Outcome {
        pass: kkt <= 1e-10 && budget_err <= 1e-8 && g_monotone && phi_drop <= 1e-9 && elapsed < 30.0,
        detail: format!(
            "(a) KKT residual {kkt:.1e}, (b) budget error {budget_err:.1e}, (c) g decreasing {g_monotone}, \
             (d) largest likelihood drop {phi_drop:.1e} over {iters} iterations, {elapsed:.1}s"
        ),
    }
}

fn criterion_6() -> Outcome {
    let geom = SurfaceGeometry::rectangular(3, 2, 2.0, 0.06).unwrap();
    let params = SystemParams::default();
    let cfg = CemConfig { n_mc: Some(60), max_cem_iters: 30, ..Default::default() };
    let mut hits = 0;
    for seed in 0..50u64 {
        let scene = build_scene(&geom, &params, 16, seed).unwrap();
        let pre = scene.precompute(&initial_selection(6, 2, seed).unwrap()).unwrap();
        let v = inner_ao(&pre, &InnerConfig::default(), &mut stream_rng(seed, 3)).unwrap().v;
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for i in 0..6 {
            for j in i + 1..6 {
                let mut z = vec![false; 6];
                z[i] = true;
                z[j] = true;
                let r = evaluate_sample(&z, &v, &scene).unwrap();
                if r > best.0 {
                    best = (r, vec![i, j]);
                }
            }
        }
        let out = run_cem(&v, &scene, &cfg, &mut stream_rng(seed, 4)).unwrap();
        if out.selection.indices() == best.1.as_slice() {
            hits += 1;
        }
    }
    Outcome { pass: hits >= 45, detail: format!("exhaustive-best pair recovered on {hits} of 50 seeds") }
}

fn criterion_7() -> Outcome {
    let geom = SurfaceGeometry::new(6, 2.0, 0.06).unwrap();
    let params = SystemParams::default();
    let mut monotone = true;
    let mut within = 0;
    let mut counts = Vec::new();
    for seed in 0..20u64 {
        let cfg = OuterConfig { seed, saa_samples: 32, ..Default::default() };
        let out = run(&geom, &params, 9, &cfg).unwrap();
        monotone &= out.outer_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        if out.converged && out.iteration_count <= 30 {
            within += 1;
        }
        counts.push(out.iteration_count);
    }
    Outcome {
        pass: monotone && within >= 18,
        detail: format!("monotone {monotone}, converged within 30 on {within} of 20 seeds, iterations {counts:?}"),
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let geom = SurfaceGeometry::rectangular(4, 2, 2.0, 0.06).unwrap();
    let params = SystemParams::default();
    let bc = BfsConfig { phase_bits: 2, gain_levels: 4, max_search_size: 1_000_000 };
    let mut gaps = Vec::new();
    for trial in 0..30u64 {
        let scene = build_scene(&geom, &params, 16, trial).unwrap();
        let ao = run_on_scene(&scene, 2, &OuterConfig { seed: trial, saa_samples: 16, ..Default::default() }).unwrap();
        let b = bfs(&scene, 2, &bc).unwrap();
        gaps.push(ao.rate_star - b.rate);
    }
    let abs: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
    let (mean_abs, _) = mean_std(&abs);
    let (mean_signed, _) = mean_std(&gaps);
    let elapsed = start.elapsed().as_secs_f64();
    Outcome {
        pass: mean_abs <= 1.0 && elapsed < 600.0,
        detail: format!(
            "30 trials, mean |AO - BFS| = {mean_abs:.3} bps/Hz (signed mean {mean_signed:+.3}), {elapsed:.1}s"
        ),
    }
}

fn criterion_9() -> Outcome {
    let cfg = RunConfig::default();
    let mut rates = [Vec::new(), Vec::new(), Vec::new()];
    for trial in 0..50u64 {
        for (k, mode) in [Mode::Faris, Mode::ArisMode, Mode::FrisMode].into_iter().enumerate() {
            rates[k].push(run_mode(&cfg, mode, 9, trial).unwrap().rate);
        }
    }
    let (faris, _) = mean_std(&rates[0]);
    let (aris, _) = mean_std(&rates[1]);
    let (fris, _) = mean_std(&rates[2]);
    let margin: Vec<f64> = rates[0].iter().zip(&rates[2]).map(|(a, b)| a - b).collect();
    let (lo, hi) = bootstrap_mean_ci(&margin, 10_000, 0.95, 9);
    Outcome {
        pass: faris >= aris && faris >= fris && lo > 0.0,
        detail: format!(
            "means faris {faris:.3}, aris_mode {aris:.3}, fris_mode {fris:.3}; faris - fris_mode 95% CI [{lo:.3}, {hi:.3}]"
        ),
    }
}

fn faris(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_faris")).args(args).output().expect("binary runs")
}

fn strip_wall_time(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.toml");
    std::fs::write(
        &config,
        "m_o = 3\n[geometry]\nm_x = 3\n[outer]\nsaa_samples = 8\n[bfs]\ntrials = 2\ngain_levels = 3\n\
         [[scenario]]\nname = \"sw\"\nmode = \"faris\"\nsweep_var = \"tx_power_dbm\"\nsweep_values = [10.0, 20.0]\ntrials = 2\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let mut problems = Vec::new();
    let mut outputs = Vec::new();
    for rep in 0..2 {
        let dir = tmp.path().join(format!("out{rep}"));
        let d = dir.to_str().unwrap();
        for args in [
            vec!["run", "--config", cfg, "--seed", "7", "--out-dir", d],
            vec!["sweep", "--config", cfg, "--scenario", "sw", "--out-dir", d],
            vec!["bfs-compare", "--config", cfg, "--set", "m_o=2", "--out-dir", d],
        ] {
            let out = faris(&args);
            if !out.status.success() {
                problems.push(format!("{} exited {:?}: {}", args[0], out.status.code(), String::from_utf8_lossy(&out.stderr)));
            }
        }
        outputs.push(dir);
    }
    let read = |dir: &Path, name: &str| std::fs::read_to_string(dir.join(name)).unwrap_or_default();
    for name in ["result.json", "trace.csv", "sw_summary.json", "bfs_compare.csv", "bfs_gap_cdf.csv", "bfs_compare_summary.json"] {
        let (a, b) = (read(&outputs[0], name), read(&outputs[1], name));
        if a.is_empty() || a != b {
            problems.push(format!("{name} differs or is missing"));
        }
    }
    let (a, b) = (read(&outputs[0], "sw.csv"), read(&outputs[1], "sw.csv"));
    if a.is_empty() || strip_wall_time(&a) != strip_wall_time(&b) {
        problems.push("sw.csv differs outside wall_time_s".into());
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            "run, sweep and bfs-compare outputs identical across repeated invocations".into()
        } else {
            problems.join("; ")
        },
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, out: Outcome, secs: f64| {
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("[{tag}] criterion {id:>2} {name}: {} ({secs:.1}s)", out.detail);
    };
    let t = Instant::now();
    let (c1, c2) = criterion_1_2();
    let secs = t.elapsed().as_secs_f64();
    report("1", "direct vs lifted SINR and power", c1, secs);
    report("2", "PSD structure of C_s, Q1, Q2, F", c2, secs);
    let checks: [(&str, &str, fn() -> Outcome); 8] = [
        ("3", "quadratic-transform tightness", criterion_3),
        ("4", "inner-loop monotonicity", criterion_4),
        ("5", "CEM algebra", criterion_5),
        ("6", "small-instance CEM optimality", criterion_6),
        ("7", "outer monotonicity and convergence", criterion_7),
        ("8", "exhaustive-search gap", criterion_8),
        ("9", "baseline ordering", criterion_9),
        ("10", "determinism of CLI outputs", criterion_10),
    ];
    for (id, name, f) in checks {
        let t = Instant::now();
        let out = f();
        report(id, name, out, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
