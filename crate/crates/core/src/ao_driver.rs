//! Outer alternation between the reflect-vector design and port selection.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::active_reflect::{init_v, inner_ao_from, power_scale_on, InnerConfig};
use crate::channel::{ChannelSet, CorrelationModel, SurfaceGeometry, SystemParams};
use crate::error::{Error, Result};
use crate::port_select::{run_cem, CemConfig};
use crate::reformulation::{PortSelection, ReflectVector, Scene};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterConfig {
    /// Stop once the rate moves by less than this (bits/s/Hz, absolute).
    pub eps_out: f64,
    pub max_outer_iters: usize,
    /// Number of frozen fading samples `S`.
    pub saa_samples: usize,
    pub seed: u64,
    pub inner: InnerConfig,
    pub cem: CemConfig,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            eps_out: 1e-3,
            max_outer_iters: 40,
            saa_samples: 32,
            seed: 0,
            inner: InnerConfig::default(),
            cem: CemConfig::default(),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self, num_ports: usize) -> Result<()> {
        if !(self.eps_out > 0.0) || self.max_outer_iters == 0 || self.saa_samples == 0 {
            return Err(Error::Config(
                "eps_out, max_outer_iters and saa_samples must be positive".into(),
            ));
        }
        self.inner.validate()?;
        self.cem.validate(num_ports)
    }
}

/// What happened in one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterStep {
    pub iteration: usize,
    /// Rate after the reflect-vector update on the incumbent selection.
    pub inner_rate: f64,
    /// Rate of the selection proposed by CEM with the updated vector.
    pub cem_rate: f64,
    /// Rate kept at the end of the iteration.
    pub rate: f64,
    pub inner_iterations: usize,
    pub cem_iterations: usize,
    pub selection_changed: bool,
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub v_star: ReflectVector,
    pub selection_star: PortSelection,
    pub rate_star: f64,
    /// Rate at initialization followed by the rate after every iteration.
    pub outer_trace: Vec<f64>,
    pub steps: Vec<OuterStep>,
    pub iteration_count: usize,
    pub converged: bool,
}

/// Builds the scene of one run: correlation, budget and the `S` frozen
/// samples drawn from the channel stream of `seed`.
pub fn build_scene(geom: &SurfaceGeometry, params: &SystemParams, samples: usize, seed: u64) -> Result<Scene> {
    let corr = CorrelationModel::build(geom)?;
    let channels = ChannelSet::draw(geom, params, samples, seed)?;
    Scene::new(corr, channels, params.link_budget(geom)?)
}

/// Full joint optimization of `M_o` active ports and their coefficients.
pub fn run(geom: &SurfaceGeometry, params: &SystemParams, m_o: usize, cfg: &OuterConfig) -> Result<OuterResult> {
    let scene = build_scene(geom, params, cfg.saa_samples, cfg.seed)?;
    run_on_scene(&scene, m_o, cfg)
}

/// Uniformly random `m_o`-subset from the selection stream of `seed`.
pub fn initial_selection(num_ports: usize, m_o: usize, seed: u64) -> Result<PortSelection> {
    let mut rng = stream_rng(seed, stream::INIT_SELECTION);
    let idx = sample(&mut rng, num_ports, m_o).into_vec();
    PortSelection::new(&idx, num_ports)
}

fn check_cardinality(scene: &Scene, m_o: usize) -> Result<()> {
    let m = scene.num_ports();
    if m_o == 0 || m_o > m {
        return Err(Error::Validation(format!("M_o = {m_o} must lie in 1..={m}")));
    }
    Ok(())
}

/// [`run`] on a prebuilt scene; the scene's samples stay frozen throughout.
///
/// A CEM proposal replaces the incumbent selection only if it does not
/// lower the rate, so `outer_trace` never decreases.
pub fn run_on_scene(scene: &Scene, m_o: usize, cfg: &OuterConfig) -> Result<OuterResult> {
    check_cardinality(scene, m_o)?;
    cfg.validate(scene.num_ports())?;
    let mut sel = initial_selection(scene.num_ports(), m_o, cfg.seed)?;
    let mut pre = scene.precompute(&sel)?;
    let mut v = init_v(&pre, &mut stream_rng(cfg.seed, stream::INIT_REFLECT));
    let mut rate = scene.rate(&sel, &v)?;
    let mut trace = vec![rate];
    let mut steps = Vec::new();
    let mut converged = false;

    for t in 0..cfg.max_outer_iters {
        let t64 = t as u64;
        let mut inner_rng = stream_rng(cfg.seed, stream::INNER_BASE + 2 * t64);
        let inner = inner_ao_from(&pre, &v, &cfg.inner, &mut inner_rng)?;
        let inner_rate = scene.rate(&sel, &inner.v)?;
        let (v_inner, inner_rate) = if inner_rate >= rate { (inner.v, inner_rate) } else { (v.clone(), rate) };

        let mut cem_rng = stream_rng(cfg.seed, stream::CEM_BASE + 2 * t64);
        let cem = run_cem(&v_inner, scene, &cfg.cem, &mut cem_rng)?;
        let cem_v = power_scale_on(&v_inner, scene, &cem.selection)?;
        let cem_rate = scene.rate(&cem.selection, &cem_v)?;
        let changed = cem.selection != sel && cem_rate >= inner_rate;
        if changed {
            sel = cem.selection;
            v = cem_v;
            pre = scene.precompute(&sel)?;
        } else {
            v = v_inner;
        }
        let prev = rate;
        rate = scene.rate(&sel, &v)?;
        trace.push(rate);
        steps.push(OuterStep {
            iteration: t,
            inner_rate,
            cem_rate,
            rate,
            inner_iterations: inner.iterations,
            cem_iterations: cem.iterations,
            selection_changed: changed,
        });
        if (rate - prev).abs() < cfg.eps_out {
            converged = true;
            break;
        }
    }

    Ok(OuterResult {
        v_star: v,
        selection_star: sel,
        rate_star: rate,
        iteration_count: steps.len(),
        outer_trace: trace,
        steps,
        converged,
    })
}

/// Reflect-vector design only, on a fixed selection. The trace is the
/// inner-loop rate trace and the iteration count that of the inner loop.
pub fn run_fixed_selection(scene: &Scene, sel: &PortSelection, cfg: &OuterConfig) -> Result<OuterResult> {
    cfg.inner.validate()?;
    let pre = scene.precompute(sel)?;
    let v0 = init_v(&pre, &mut stream_rng(cfg.seed, stream::INIT_REFLECT));
    let inner = inner_ao_from(&pre, &v0, &cfg.inner, &mut stream_rng(cfg.seed, stream::INNER_BASE))?;
    let rate = scene.rate(sel, &inner.v)?;
    Ok(OuterResult {
        v_star: inner.v,
        selection_star: sel.clone(),
        rate_star: rate,
        outer_trace: inner.rate_trace,
        steps: Vec::new(),
        iteration_count: inner.iterations,
        converged: inner.converged,
    })
}
