//! Amplification-reflection design for a fixed port selection.
//!
//! Alternates between the lifted convex subproblem (see [`subproblem`]) and
//! the closed-form auxiliary update `y_s = √tr(a_s a_sᴴ V) / (σ₀² + tr(C_s V))`,
//! extracting a feasible vector after every solve either as the principal
//! eigenvector or by Gaussian randomization.

pub mod subproblem;

use nalgebra::Cholesky;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, hermitian_eigen, quad_form, reconstruct, CMat, CVec, C64};
use crate::reformulation::{LiftedMatrix, PortSelection, PrecomputedQuantities, ReflectVector, Scene};

pub use subproblem::{solve_v_subproblem, surrogate_rate, surrogate_terms, SubproblemSolution};

/// Inner-loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerConfig {
    /// Stop once the rate moves by less than this (bits/s/Hz, absolute).
    pub eps_v: f64,
    /// Number of Gaussian-randomization candidates.
    pub n_rand: usize,
    pub max_inner_iters: usize,
    /// Relative objective gain below which the subproblem solver stops.
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub projection_max_iters: usize,
    /// `λ₂/λ₁` at or below which a lifted solution counts as rank one.
    pub rank_one_ratio_threshold: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            eps_v: 1e-3,
            n_rand: 50,
            max_inner_iters: 50,
            solver_tol: 1e-7,
            solver_max_iters: 200,
            projection_max_iters: 100,
            rank_one_ratio_threshold: 1e-6,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_v > 0.0
            && self.n_rand > 0
            && self.max_inner_iters > 0
            && self.solver_tol > 0.0
            && self.solver_max_iters > 0
            && self.projection_max_iters > 0
            && self.rank_one_ratio_threshold > 0.0
            && self.rank_one_ratio_threshold < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid inner-loop settings: {self:?}")))
        }
    }
}

/// Random-phase start at full gain, shrunk onto the power budget.
pub fn init_v<R: Rng + ?Sized>(pre: &PrecomputedQuantities, rng: &mut R) -> ReflectVector {
    let n = pre.num_ports();
    let v = CVec::from_fn(n, |_, _| {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        C64::from_polar(pre.g_max, theta)
    });
    power_scale(&ReflectVector(v), pre)
}

/// Closed-form auxiliary update. Plugging the result back makes every
/// `ξ_s` equal to the SINR `γ_s`.
pub fn update_y(v_mat: &LiftedMatrix, pre: &PrecomputedQuantities) -> Vec<f64> {
    (0..pre.num_samples())
        .map(|s| pre.signal_trace(v_mat, s).sqrt() / (pre.sigma_02 + pre.noise_trace(v_mat, s)))
        .collect()
}

/// Principal direction of `V`, scaled so that `‖w‖² = tr(V)`.
///
/// Returns `(is_rank_one, w)`, where `is_rank_one` means `λ₂/λ₁` is at most
/// the configured ratio.
pub fn extract_rank_one(v_mat: &LiftedMatrix, cfg: &InnerConfig) -> Result<(bool, CVec)> {
    let n = v_mat.dim();
    let (values, vectors) = hermitian_eigen(&v_mat.0)?;
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok((true, CVec::zeros(n)));
    }
    let second = values.get(1).copied().unwrap_or(0.0).max(0.0);
    let is_rank_one = second / top <= cfg.rank_one_ratio_threshold;
    let scale = v_mat.trace().max(0.0).sqrt();
    let w = vectors.column(0).into_owned() * C64::new(scale, 0.0);
    Ok((is_rank_one, w))
}

/// Clamps every magnitude to `g_max`, keeping phases.
pub fn magnitude_project(v: &ReflectVector, g_max: f64) -> ReflectVector {
    ReflectVector(v.0.map(|z| {
        let mag = z.norm();
        if mag > g_max {
            z * (g_max / mag)
        } else {
            z
        }
    }))
}

/// Scales `v` down onto the power budget if it exceeds it.
pub fn power_scale(v: &ReflectVector, pre: &PrecomputedQuantities) -> ReflectVector {
    if !pre.p_max.is_finite() {
        return v.clone();
    }
    let p = pre.power(v);
    if p > pre.p_max {
        ReflectVector(&v.0 * C64::new((pre.p_max / p).sqrt(), 0.0))
    } else {
        v.clone()
    }
}

/// [`power_scale`] against the budget of `sel` on a whole scene.
pub fn power_scale_on(v: &ReflectVector, scene: &Scene, sel: &PortSelection) -> Result<ReflectVector> {
    let p_max = scene.budget.p_max;
    if !p_max.is_finite() {
        return Ok(v.clone());
    }
    let p = scene.radiated_power(sel, v)?;
    Ok(if p > p_max { ReflectVector(&v.0 * C64::new((p_max / p).sqrt(), 0.0)) } else { v.clone() })
}

/// Magnitude projection followed by power scaling; the result satisfies both
/// constraints.
pub fn make_feasible(v: &ReflectVector, pre: &PrecomputedQuantities) -> ReflectVector {
    power_scale(&magnitude_project(v, pre.g_max), pre)
}

/// Reduced objective of a fixed candidate: slack at its cone bound and each
/// `ξ_s` clamped at zero.
pub fn reduced_objective(v: &ReflectVector, y: &[f64], pre: &PrecomputedQuantities) -> f64 {
    let s_count = pre.num_samples();
    (0..s_count)
        .map(|s| {
            let w = pre.a[s].dotc(&v.0).norm();
            let den = pre.sigma_02 + quad_form(&pre.c[s], &v.0).max(0.0);
            let xi = pre.signal_coeff * (2.0 * y[s] * w - y[s] * y[s] * den);
            (1.0 + xi.max(0.0)).log2()
        })
        .sum::<f64>()
        / s_count as f64
}

fn gaussian_factor(v0: &CMat) -> Result<CMat> {
    let n = v0.nrows();
    let mean_diag = (0..n).map(|i| v0[(i, i)].re).sum::<f64>().max(0.0) / n.max(1) as f64;
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut m = v0.clone();
        for i in 0..n {
            m[(i, i)] += C64::new(jitter * mean_diag, 0.0);
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(chol.l());
        }
    }
    let (values, vectors) = hermitian_eigen(v0)?;
    let mut factor = vectors.clone();
    for (k, &l) in values.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        for i in 0..n {
            factor[(i, k)] *= s;
        }
    }
    Ok(factor)
}

/// Draws `n_rand` candidates `L z_n` with `V₀ = L Lᴴ`, makes each feasible
/// and returns the one with the best reduced objective (lowest index wins
/// ties).
pub fn gaussian_randomization<R: Rng + ?Sized>(
    v0: &LiftedMatrix,
    pre: &PrecomputedQuantities,
    y: &[f64],
    cfg: &InnerConfig,
    rng: &mut R,
) -> Result<ReflectVector> {
    let factor = gaussian_factor(&v0.0)?;
    let n = v0.dim();
    let mut best: Option<(f64, ReflectVector)> = None;
    for _ in 0..cfg.n_rand {
        let z = complex_gaussian(rng, n);
        let cand = make_feasible(&ReflectVector(&factor * z), pre);
        let score = reduced_objective(&cand, y, pre);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, cand));
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidArgument("n_rand must be >= 1".into()))
}

/// Result of the inner loop.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub v: ReflectVector,
    /// `v vᴴ` of the returned vector.
    pub v_mat: LiftedMatrix,
    pub y: Vec<f64>,
    /// SAA rate after initialization and after every iteration.
    pub rate_trace: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose extracted vector was rejected by the keep-best rule.
    pub stalled: usize,
    pub converged: bool,
}

impl InnerOutcome {
    pub fn rate(&self) -> f64 {
        *self.rate_trace.last().expect("trace holds the initial rate")
    }
}

/// Inner loop from a random start.
pub fn inner_ao<R: Rng + ?Sized>(
    pre: &PrecomputedQuantities,
    cfg: &InnerConfig,
    rng: &mut R,
) -> Result<InnerOutcome> {
    let v0 = init_v(pre, rng);
    inner_ao_from(pre, &v0, cfg, rng)
}

/// Inner loop warm-started at `v0`.
///
/// The rate trace never decreases: an extracted vector that would lower the
/// rate is discarded and the incumbent kept.
pub fn inner_ao_from<R: Rng + ?Sized>(
    pre: &PrecomputedQuantities,
    v0: &ReflectVector,
    cfg: &InnerConfig,
    rng: &mut R,
) -> Result<InnerOutcome> {
    cfg.validate()?;
    if v0.len() != pre.num_ports() {
        return Err(Error::Validation(format!(
            "initial vector has {} entries for {} ports",
            v0.len(),
            pre.num_ports()
        )));
    }
    let mut v = make_feasible(v0, pre);
    let mut rate = pre.rate(&v);
    let mut trace = vec![rate];
    let mut v_mat = v.lift();
    let mut y = update_y(&v_mat, pre);
    let mut iterations = 0;
    let mut stalled = 0;
    let mut converged = false;

    for _ in 0..cfg.max_inner_iters {
        let sol = solve_v_subproblem(pre, &y, &v_mat, cfg)?;
        if sol.surrogate_end <= sol.surrogate_start && sol.v_mat == v_mat {
            converged = true;
            break;
        }
        iterations += 1;
        let (rank_one, principal) = extract_rank_one(&sol.v_mat, cfg)?;
        let principal = make_feasible(&ReflectVector(principal), pre);
        let cand = if rank_one {
            principal
        } else {
            let randomized = gaussian_randomization(&sol.v_mat, pre, &y, cfg, rng)?;
            if pre.rate(&principal) > pre.rate(&randomized) {
                principal
            } else {
                randomized
            }
        };
        let cand_rate = pre.rate(&cand);
        let prev = rate;
        if cand_rate >= rate {
            v = cand;
            rate = cand_rate;
        } else {
            stalled += 1;
        }
        trace.push(rate);
        v_mat = v.lift();
        y = update_y(&v_mat, pre);
        if (rate - prev).abs() < cfg.eps_v {
            converged = true;
            break;
        }
    }

    Ok(InnerOutcome { v, v_mat, y, rate_trace: trace, iterations, stalled, converged })
}

/// Rebuilds a PSD matrix from its spectrum, used by tests that need a
/// prescribed eigenvalue ratio.
pub fn lifted_from_spectrum(values: &[f64], vectors: &CMat) -> LiftedMatrix {
    LiftedMatrix(reconstruct(values, vectors, |l| l))
}
