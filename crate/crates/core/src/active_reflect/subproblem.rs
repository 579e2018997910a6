//! Convex subproblem in the lifted variable for fixed auxiliaries `y`.
//!
//! The surrogate `Σ_s log2(1 + ξ_s(V))` with
//! `ξ_s = κ(2 y_s √(a_sᴴ V a_s) − y_s² (σ₀² + tr(C_s V)))` is concave in `V`.
//! It is maximized by projected gradient ascent with backtracking over
//! `{V ⪰ 0} ∩ {tr(F V) ≤ P_max} ∩ {V_ii ≤ g_max²}`, the projection computed
//! by Dykstra's alternating scheme.
//!
//! Internally the problem is rescaled so that `X = V / g_max²` has unit
//! diagonal bound and the power constraint reads `tr(F̃ X) ≤ 1`; this keeps
//! every quantity within a few orders of magnitude of one.

use crate::error::Result;
use crate::linalg::{hermitian_eigen, hermitize, inner, quad_form, reconstruct, trace_product, CMat, C64};
use crate::reformulation::{LiftedMatrix, PrecomputedQuantities};

use super::InnerConfig;

const BACKTRACK_LIMIT: usize = 40;
const SQRT_FLOOR: f64 = 1e-10;

/// Outcome of one subproblem solve.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub v_mat: LiftedMatrix,
    /// `false` when the iteration cap was hit before the ascent stalled.
    pub converged: bool,
    pub iterations: usize,
    /// Surrogate rate at the starting point.
    pub surrogate_start: f64,
    /// Surrogate rate at the returned point.
    pub surrogate_end: f64,
}

/// Per-sample quadratic-transform terms `ξ_s(V; y)` (not clamped).
pub fn surrogate_terms(v_mat: &LiftedMatrix, y: &[f64], pre: &PrecomputedQuantities) -> Vec<f64> {
    (0..pre.num_samples())
        .map(|s| {
            let sig = pre.signal_trace(v_mat, s).sqrt();
            let den = pre.sigma_02 + pre.noise_trace(v_mat, s);
            pre.signal_coeff * (2.0 * y[s] * sig - y[s] * y[s] * den)
        })
        .collect()
}

/// Surrogate rate `(1/S) Σ log2(1 + max(0, ξ_s))`.
pub fn surrogate_rate(v_mat: &LiftedMatrix, y: &[f64], pre: &PrecomputedQuantities) -> f64 {
    let terms = surrogate_terms(v_mat, y, pre);
    terms.iter().map(|&x| (1.0 + x.max(0.0)).log2()).sum::<f64>() / terms.len() as f64
}

struct Scaled<'a> {
    pre: &'a PrecomputedQuantities,
    g2: f64,
    coeff: f64,
    noise_scale: f64,
    y: Vec<f64>,
    f: Option<CMat>,
    f_norm2: f64,
}

impl<'a> Scaled<'a> {
    fn new(pre: &'a PrecomputedQuantities, y: &[f64]) -> Self {
        let g2 = pre.g_max * pre.g_max;
        let f = pre.p_max.is_finite().then(|| &pre.f * C64::new(g2 / pre.p_max, 0.0));
        let f_norm2 = f.as_ref().map_or(0.0, |f| f.norm_squared());
        Self {
            pre,
            g2,
            coeff: pre.signal_coeff * g2 / pre.sigma_02,
            noise_scale: g2 / pre.sigma_02,
            y: y.iter().map(|&ys| ys * pre.sigma_02 / pre.g_max).collect(),
            f,
            f_norm2,
        }
    }

    fn xi(&self, x: &CMat, s: usize) -> (f64, f64) {
        let sig = quad_form(x, &self.pre.a[s]).max(0.0).sqrt();
        let noise = 1.0 + self.noise_scale * trace_product(&self.pre.c[s], x).max(0.0);
        let y = self.y[s];
        (self.coeff * (2.0 * y * sig - y * y * noise), sig)
    }

    /// Concave minorant of the clamped surrogate: `ln(1+ξ)` for `ξ ≥ 0`,
    /// `ξ` below. Natural-log units.
    fn objective(&self, x: &CMat) -> f64 {
        let s = self.pre.num_samples();
        (0..s)
            .map(|i| {
                let (xi, _) = self.xi(x, i);
                if xi >= 0.0 {
                    xi.ln_1p()
                } else {
                    xi
                }
            })
            .sum::<f64>()
            / s as f64
    }

    fn gradient(&self, x: &CMat) -> CMat {
        let n = x.nrows();
        let s_count = self.pre.num_samples();
        let mut g = CMat::zeros(n, n);
        for s in 0..s_count {
            let y = self.y[s];
            if y == 0.0 {
                continue;
            }
            let (xi, sig) = self.xi(x, s);
            let outer_w = if xi >= 0.0 { 1.0 / (1.0 + xi) } else { 1.0 };
            let w = outer_w * self.coeff / s_count as f64;
            let sig_w = w * y / sig.max(SQRT_FLOOR);
            let noise_w = w * y * y * self.noise_scale;
            let a = &self.pre.a[s];
            let c = &self.pre.c[s];
            for j in 0..n {
                let aj = a[j].conj() * sig_w;
                for i in 0..n {
                    g[(i, j)] += a[i] * aj - c[(i, j)] * noise_w;
                }
            }
        }
        hermitize(&mut g);
        g
    }

    fn feasible(&self, x: &CMat, slack: f64) -> bool {
        let n = x.nrows();
        if (0..n).any(|i| x[(i, i)].re > 1.0 + slack) {
            return false;
        }
        match &self.f {
            Some(f) => trace_product(f, x) <= 1.0 + slack,
            None => true,
        }
    }

    fn project_box(x: &mut CMat) {
        for i in 0..x.nrows() {
            let d = x[(i, i)].re.min(1.0);
            x[(i, i)] = C64::new(d, 0.0);
        }
    }

    fn project_halfspace(&self, x: &mut CMat) {
        if let Some(f) = &self.f {
            let excess = trace_product(f, x) - 1.0;
            if excess > 0.0 {
                *x -= f * C64::new(excess / self.f_norm2, 0.0);
            }
        }
    }

    fn project_psd(x: &CMat) -> Result<CMat> {
        let (values, vectors) = hermitian_eigen(x)?;
        Ok(reconstruct(&values, &vectors, |l| l.max(0.0)))
    }

    /// Dykstra projection followed by a shrink that makes the point exactly
    /// feasible.
    fn project(&self, point: &CMat, max_iters: usize) -> Result<CMat> {
        let mut x = Self::project_psd(point)?;
        if !self.feasible(&x, 1e-12) {
            let n = x.nrows();
            let mut x = point.clone();
            let mut p = CMat::zeros(n, n);
            let mut q = CMat::zeros(n, n);
            let mut r = CMat::zeros(n, n);
            let mut out = x.clone();
            for _ in 0..max_iters {
                let mut y = &x + &p;
                Self::project_box(&mut y);
                p = &x + &p - &y;
                let mut z = &y + &q;
                self.project_halfspace(&mut z);
                q = &y + &q - &z;
                let w = Self::project_psd(&(&z + &r))?;
                r = &z + &r - &w;
                let change = (&w - &out).norm();
                out = w.clone();
                x = w;
                if change <= 1e-12 * (1.0 + out.norm()) {
                    break;
                }
            }
            return Ok(self.shrink(out));
        }
        hermitize(&mut x);
        Ok(x)
    }

    fn shrink(&self, mut x: CMat) -> CMat {
        let n = x.nrows();
        let mut worst = (0..n).map(|i| x[(i, i)].re).fold(0.0, f64::max);
        if let Some(f) = &self.f {
            worst = worst.max(trace_product(f, &x));
        }
        if worst > 1.0 {
            x *= C64::new(1.0 / worst, 0.0);
        }
        hermitize(&mut x);
        x
    }
}

/// Maximizes the surrogate over the feasible set starting from `v_init`.
///
/// Never returns a point with a lower surrogate than `v_init`; if the ascent
/// cannot improve, `v_init` comes back unchanged.
pub fn solve_v_subproblem(
    pre: &PrecomputedQuantities,
    y: &[f64],
    v_init: &LiftedMatrix,
    cfg: &InnerConfig,
) -> Result<SubproblemSolution> {
    let scaled = Scaled::new(pre, y);
    let start_value = surrogate_rate(v_init, y, pre);
    let unchanged = |iterations, converged| SubproblemSolution {
        v_mat: v_init.clone(),
        converged,
        iterations,
        surrogate_start: start_value,
        surrogate_end: start_value,
    };

    let x0 = &v_init.0 * C64::new(1.0 / scaled.g2, 0.0);
    let mut x = if scaled.feasible(&x0, 1e-9) {
        x0
    } else {
        scaled.project(&x0, cfg.projection_max_iters)?
    };
    let mut fx = scaled.objective(&x);
    let mut step = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.solver_max_iters {
        let g = scaled.gradient(&x);
        let gnorm = g.norm();
        if gnorm == 0.0 || !gnorm.is_finite() {
            converged = true;
            break;
        }
        if step == 0.0 {
            step = 1.0 / gnorm;
        }
        let mut accepted = None;
        for _ in 0..BACKTRACK_LIMIT {
            let trial = &x + &g * C64::new(step, 0.0);
            let cand = scaled.project(&trial, cfg.projection_max_iters)?;
            let d = &cand - &x;
            let fc = scaled.objective(&cand);
            let model = fx + inner(&g, &d) - d.norm_squared() / (2.0 * step);
            if fc >= fx && fc >= model - 1e-14 * fx.abs() {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        let gain = fc - fx;
        x = cand;
        fx = fc;
        if gain <= cfg.solver_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        step *= 2.0;
    }

    let mut v = &x * C64::new(scaled.g2, 0.0);
    hermitize(&mut v);
    let v_mat = LiftedMatrix(v);
    let end_value = surrogate_rate(&v_mat, y, pre);
    if end_value < start_value {
        return Ok(unchanged(iterations, converged));
    }
    Ok(SubproblemSolution {
        v_mat,
        converged,
        iterations,
        surrogate_start: start_value,
        surrogate_end: end_value,
    })
}
