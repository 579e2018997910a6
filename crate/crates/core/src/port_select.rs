//! Cross-entropy selection of the active port set for a fixed reflect vector.
//!
//! Each port is switched on independently with probability `p_i`,
//! `Σ p_i = M_o`. After every batch the elite samples' empirical means `μ`
//! are fitted by the budget-constrained maximum-likelihood update
//! `p_i(ν) = ((ν+1) − √((ν+1)² − 4νμ_i)) / 2ν`, with `ν` chosen so that the
//! budget holds, and blended into the old probabilities.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active_reflect::power_scale_on;
use crate::error::{Error, Result};
use crate::reformulation::{PortSelection, ReflectVector, Scene};

pub const P_FLOOR: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    /// Samples per iteration; `None` means five per port.
    pub n_mc: Option<usize>,
    pub rho: f64,
    pub omega: f64,
    /// Stop once `‖p_{t+1} − p_t‖₂` falls below this.
    pub eps_c: f64,
    pub max_cem_iters: usize,
    pub nu_bisect_tol: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self { n_mc: None, rho: 0.1, omega: 0.7, eps_c: 1e-3, max_cem_iters: 50, nu_bisect_tol: 1e-12 }
    }
}

impl CemConfig {
    pub fn samples(&self, num_ports: usize) -> usize {
        self.n_mc.unwrap_or(5 * num_ports)
    }

    pub fn validate(&self, num_ports: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad(format!("omega must lie in (0, 1], got {}", self.omega));
        }
        if !(self.eps_c > 0.0 && self.nu_bisect_tol > 0.0) || self.max_cem_iters == 0 {
            return bad("cem tolerances and iteration cap must be positive".into());
        }
        let n = self.samples(num_ports);
        if elite_count(n, self.rho) == 0 {
            return bad(format!("n_mc = {n} leaves an empty elite set at rho = {}", self.rho));
        }
        Ok(())
    }
}

/// `⌈ρ N⌉`, robust to `ρ N` landing a rounding error above an integer.
pub fn elite_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Bernoulli activation probabilities with `Σ p_i = M_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbabilities {
    pub p: Vec<f64>,
}

impl ActivationProbabilities {
    pub fn uniform(num_ports: usize, m_o: usize) -> Self {
        Self { p: vec![m_o as f64 / num_ports as f64; num_ports] }
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Binary entropy summed over ports, in nats.
    pub fn entropy(&self) -> f64 {
        self.p
            .iter()
            .map(|&q| {
                let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
                h(q) + h(1.0 - q)
            })
            .sum()
    }

    /// Indices of the `m_o` largest probabilities, ascending.
    pub fn top(&self, m_o: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.p.len()).collect();
        order.sort_by(|&a, &b| self.p[b].total_cmp(&self.p[a]).then(a.cmp(&b)));
        let mut top = order[..m_o].to_vec();
        top.sort_unstable();
        top
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliteStats {
    pub mu: Vec<f64>,
    pub threshold_rate: f64,
}

/// Draws independent Bernoulli activations and repairs them to exactly
/// `m_o` ones: surplus ones go at the lowest-probability active ports,
/// missing ones are added at the highest-probability inactive ports.
/// Equal probabilities are ordered by a random key drawn from `rng`.
pub fn sample_activation<R: Rng + ?Sized>(p: &[f64], m_o: usize, rng: &mut R) -> Vec<bool> {
    let mut zeta: Vec<bool> = p.iter().map(|&q| rng.random::<f64>() < q).collect();
    let count = zeta.iter().filter(|&&z| z).count();
    if count == m_o {
        return zeta;
    }
    let key: Vec<u64> = (0..p.len()).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(key[a].cmp(&key[b])).then(a.cmp(&b)));
    if count > m_o {
        let drop: Vec<usize> = order.into_iter().filter(|&i| zeta[i]).take(count - m_o).collect();
        drop.into_iter().for_each(|i| zeta[i] = false);
    } else {
        let add: Vec<usize> = order.into_iter().rev().filter(|&i| !zeta[i]).take(m_o - count).collect();
        add.into_iter().for_each(|i| zeta[i] = true);
    }
    zeta
}

/// SAA rate of `v` placed on the ports of `zeta` in ascending order, scaled
/// down first if it breaks the power budget of that selection.
pub fn evaluate_sample(zeta: &[bool], v: &ReflectVector, scene: &Scene) -> Result<f64> {
    let sel = PortSelection::from_mask(zeta)?;
    if sel.len() != v.len() {
        return Err(Error::Validation(format!(
            "activation has {} ports but the reflect vector has {} entries",
            sel.len(),
            v.len()
        )));
    }
    let v = power_scale_on(v, scene, &sel)?;
    scene.rate(&sel, &v)
}

/// Top `⌈ρN⌉` sample indices by rate (lowest index first among ties).
pub fn elite_select(rates: &[f64], rho: f64) -> (Vec<usize>, f64) {
    let n_e = elite_count(rates.len(), rho).max(1).min(rates.len());
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]).then(a.cmp(&b)));
    order.truncate(n_e);
    let threshold = order.last().map(|&i| rates[i]).unwrap_or(f64::NAN);
    (order, threshold)
}

/// Elite means and cutoff of one batch, with the elite indices.
pub fn elite_stats(samples: &[Vec<bool>], rates: &[f64], rho: f64) -> (EliteStats, Vec<usize>) {
    let (elite, threshold_rate) = elite_select(rates, rho);
    (EliteStats { mu: elite_mean(samples, &elite), threshold_rate }, elite)
}

pub fn elite_mean(samples: &[Vec<bool>], elite: &[usize]) -> Vec<f64> {
    let m = samples.first().map_or(0, Vec::len);
    let mut mu = vec![0.0; m];
    for &n in elite {
        for (acc, &z) in mu.iter_mut().zip(&samples[n]) {
            if z {
                *acc += 1.0;
            }
        }
    }
    let n_e = elite.len() as f64;
    mu.iter_mut().for_each(|x| *x /= n_e);
    mu
}

/// Root in `(0, 1)` of `ν p² − (ν+1) p + μ = 0`.
pub fn p_of_nu(mu: f64, nu: f64) -> Result<f64> {
    if nu == 0.0 {
        return Ok(mu);
    }
    let b = nu + 1.0;
    let disc = b * b - 4.0 * nu * mu;
    if !(disc >= 0.0) {
        return Err(Error::Numerical(format!("negative discriminant at mu = {mu}, nu = {nu}")));
    }
    let root = disc.sqrt();
    // the two algebraically equal forms, each free of cancellation on its side
    Ok(if b >= 0.0 { 2.0 * mu / (b + root) } else { (b - root) / (2.0 * nu) })
}

/// `g(ν) = Σ_i p_i(ν)`.
pub fn budget_sum(mu: &[f64], nu: f64) -> Result<f64> {
    mu.iter().map(|&m| p_of_nu(m, nu)).sum()
}

/// Multiplier `ν` with `g(ν) = M_o` by bracket doubling then bisection.
pub fn solve_nu(mu: &[f64], m_o: usize, tol: f64) -> Result<f64> {
    let m = mu.len();
    if m_o == 0 || m_o >= m {
        return Err(Error::InvalidArgument(format!("need 0 < M_o < M, got M_o = {m_o}, M = {m}")));
    }
    let target = m_o as f64;
    let g = |nu: f64| budget_sum(mu, nu).map(|s| s - target);
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut doublings = 0;
    while g(lo)? < 0.0 {
        lo *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Numerical("multiplier bracket did not close below".into()));
        }
    }
    while g(hi)? > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Numerical("multiplier bracket did not close above".into()));
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let r = g(mid)?;
        if r.abs() <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Log-likelihood `Σ μ_i ln p_i + (1−μ_i) ln(1−p_i)`.
pub fn phi(p: &[f64], mu: &[f64]) -> f64 {
    p.iter().zip(mu).map(|(&q, &m)| m * q.ln() + (1.0 - m) * (1.0 - q).ln()).sum()
}

pub fn clamp_mu(mu: &[f64]) -> Vec<f64> {
    mu.iter().map(|&m| m.clamp(P_FLOOR, 1.0 - P_FLOOR)).collect()
}

/// Smoothed update `(1−ω) p + ω p(ν†)`, `μ` clamped away from 0 and 1.
pub fn ce_update(
    p_old: &ActivationProbabilities,
    mu: &[f64],
    omega: f64,
    m_o: usize,
    tol: f64,
) -> Result<ActivationProbabilities> {
    let mu = clamp_mu(mu);
    let nu = solve_nu(&mu, m_o, tol)?;
    let p = p_old
        .p
        .iter()
        .zip(&mu)
        .map(|(&q, &m)| Ok((1.0 - omega) * q + omega * p_of_nu(m, nu)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationProbabilities { p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CemTraceRow {
    pub iteration: usize,
    /// Likelihood of the elite means under the probabilities before and
    /// after the update.
    pub phi_before: f64,
    pub phi_after: f64,
    pub best_rate: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct CemOutcome {
    pub selection: PortSelection,
    pub rate: f64,
    pub probabilities: ActivationProbabilities,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<CemTraceRow>,
}

/// Cross-entropy search for the best `M_o`-subset under a fixed `v`.
///
/// Returns the better of the top-`M_o` probabilities and the best sampled
/// selection.
pub fn run_cem<R: Rng + ?Sized>(
    v: &ReflectVector,
    scene: &Scene,
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<CemOutcome> {
    let m = scene.num_ports();
    let m_o = v.len();
    if m_o == 0 || m_o > m {
        return Err(Error::Validation(format!("cannot select {m_o} of {m} ports")));
    }
    if m_o == m {
        let selection = PortSelection::full(m);
        let rate = evaluate_sample(&selection.mask(), v, scene)?;
        return Ok(CemOutcome {
            selection,
            rate,
            probabilities: ActivationProbabilities { p: vec![1.0; m] },
            iterations: 0,
            converged: true,
            trace: Vec::new(),
        });
    }
    cfg.validate(m)?;
    let n_mc = cfg.samples(m);
    let mut p = ActivationProbabilities::uniform(m, m_o);
    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 0..cfg.max_cem_iters {
        let samples: Vec<Vec<bool>> = (0..n_mc).map(|_| sample_activation(&p.p, m_o, rng)).collect();
        let rates = samples
            .par_iter()
            .map(|z| evaluate_sample(z, v, scene))
            .collect::<Result<Vec<f64>>>()?;
        let (stats, elite) = elite_stats(&samples, &rates, cfg.rho);
        let lead = elite[0];
        if best.as_ref().is_none_or(|(r, _)| rates[lead] > *r) {
            best = Some((rates[lead], samples[lead].clone()));
        }
        let next = ce_update(&p, &stats.mu, cfg.omega, m_o, cfg.nu_bisect_tol)?;
        let mu_c = clamp_mu(&stats.mu);
        let step = p.p.iter().zip(&next.p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        trace.push(CemTraceRow {
            iteration: t,
            phi_before: phi(&p.p, &mu_c),
            phi_after: phi(&next.p, &mu_c),
            best_rate: best.as_ref().map_or(f64::NAN, |b| b.0),
            entropy: next.entropy(),
        });
        p = next;
        iterations = t + 1;
        if step < cfg.eps_c {
            converged = true;
            break;
        }
    }

    let top = PortSelection::new(&p.top(m_o), m)?;
    let top_rate = evaluate_sample(&top.mask(), v, scene)?;
    let (selection, rate) = match best {
        Some((r, z)) if r > top_rate => (PortSelection::from_mask(&z)?, r),
        _ => (top, top_rate),
    };
    Ok(CemOutcome { selection, rate, probabilities: p, iterations, converged, trace })
}
