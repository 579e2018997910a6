//! Lifted reformulation of the rate objective for a fixed port selection.
//!
//! For selected ports the SINR of fading sample `s` is
//! `κ·|a_sᴴ v|² / (σ₀² + vᴴ C_s v)` with `κ = P·L_f·L_u`, and the radiated
//! power is `vᴴ F v`. [`PrecomputedQuantities`] holds `b`, `u_s`, `K`, `a_s`,
//! `C_s`, `Q1`, `Q2` and `F`; the `*_direct` functions evaluate the same
//! quantities from the physical operator `A = J^½ Sᵀ diag(v) S J^½` and
//! serve as an independent check.

use crate::channel::{ChannelSet, CorrelationModel, LinkBudget};
use crate::error::{Error, Result};
use crate::linalg::{hermitize, quad_form, trace_product, CMat, CVec, RMat, C64};

/// Sorted set of active ports.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortSelection {
    indices: Vec<usize>,
    total: usize,
}

impl PortSelection {
    /// Builds a selection of distinct ports out of `total`. Indices are
    /// stored in ascending order.
    pub fn new(indices: &[usize], total: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("port selection must not be empty".into()));
        }
        if indices.len() > total {
            return Err(Error::Validation(format!(
                "cannot activate {} of {total} ports",
                indices.len()
            )));
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        if let Some(&bad) = sorted.iter().find(|&&i| i >= total) {
            return Err(Error::Validation(format!("port {bad} out of range for {total} ports")));
        }
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("port {} selected twice", w[0])));
        }
        Ok(Self { indices: sorted, total })
    }

    /// Selection from an activation mask.
    pub fn from_mask(mask: &[bool]) -> Result<Self> {
        let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect();
        Self::new(&idx, mask.len())
    }

    /// Every port active.
    pub fn full(total: usize) -> Self {
        Self { indices: (0..total).collect(), total }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    /// Extracts the selected rows of `x` (the action of `S_{M_o}`).
    pub fn extract(&self, x: &CVec) -> CVec {
        CVec::from_fn(self.len(), |n, _| x[self.indices[n]])
    }

    /// Selected principal submatrix of a real matrix.
    pub fn submatrix(&self, m: &RMat) -> RMat {
        RMat::from_fn(self.len(), self.len(), |a, b| m[(self.indices[a], self.indices[b])])
    }
}

/// Amplification-reflection coefficients of the active ports, in ascending
/// port order. Magnitude is the gain, argument the phase shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectVector(pub CVec);

impl ReflectVector {
    pub fn zeros(n: usize) -> Self {
        Self(CVec::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn lift(&self) -> LiftedMatrix {
        LiftedMatrix(crate::linalg::outer(&self.0))
    }

    /// Largest element magnitude.
    pub fn max_gain(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Lifted variable `V = v vᴴ` (or its rank-relaxed counterpart).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix(pub CMat);

impl LiftedMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(CMat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }
}

/// Quantities of the lifted problem for one port selection.
#[derive(Debug, Clone)]
pub struct PrecomputedQuantities {
    pub b: CVec,
    pub k_sel: RMat,
    pub u: Vec<CVec>,
    pub a: Vec<CVec>,
    pub c: Vec<CMat>,
    pub q1: CMat,
    pub q2: CMat,
    pub f: CMat,
    /// `κ = P·L_f·L_u`.
    pub signal_coeff: f64,
    pub sigma_02: f64,
    pub p_max: f64,
    pub g_max: f64,
}

impl PrecomputedQuantities {
    pub fn num_ports(&self) -> usize {
        self.b.len()
    }

    pub fn num_samples(&self) -> usize {
        self.u.len()
    }

    /// `tr(a_s a_sᴴ V)`.
    pub fn signal_trace(&self, v_mat: &LiftedMatrix, s: usize) -> f64 {
        quad_form(&v_mat.0, &self.a[s]).max(0.0)
    }

    /// `tr(C_s V)`.
    pub fn noise_trace(&self, v_mat: &LiftedMatrix, s: usize) -> f64 {
        trace_product(&self.c[s], &v_mat.0).max(0.0)
    }

    /// SINR of sample `s` in vector form.
    pub fn sinr(&self, v: &ReflectVector, s: usize) -> f64 {
        let sig = self.a[s].dotc(&v.0).norm_sqr();
        let noise = quad_form(&self.c[s], &v.0).max(0.0);
        self.signal_coeff * sig / (self.sigma_02 + noise)
    }

    /// SAA rate in bits/s/Hz.
    pub fn rate(&self, v: &ReflectVector) -> f64 {
        let s = self.num_samples();
        (0..s).map(|i| (1.0 + self.sinr(v, i)).log2()).sum::<f64>() / s as f64
    }

    /// SAA rate of a lifted matrix.
    pub fn rate_lifted(&self, v_mat: &LiftedMatrix) -> f64 {
        let s = self.num_samples();
        (0..s).map(|i| (1.0 + sinr_lifted(v_mat, self, i)).log2()).sum::<f64>() / s as f64
    }

    /// `vᴴ F v`.
    pub fn power(&self, v: &ReflectVector) -> f64 {
        quad_form(&self.f, &v.0).max(0.0)
    }

    /// `tr(F V)`.
    pub fn power_lifted(&self, v_mat: &LiftedMatrix) -> f64 {
        trace_product(&self.f, &v_mat.0).max(0.0)
    }
}

fn check_dims(corr: &CorrelationModel, sel: &PortSelection, channels: &ChannelSet) -> Result<()> {
    let m = corr.num_elements();
    if sel.total() != m {
        return Err(Error::Validation(format!(
            "selection is over {} ports but the surface has {m}",
            sel.total()
        )));
    }
    if channels.h_f_los.len() != m || channels.samples.iter().any(|h| h.len() != m) {
        return Err(Error::Validation(format!("channel vectors do not have length {m}")));
    }
    Ok(())
}

fn projected_rows(j_sqrt: &RMat, sel: &PortSelection, h: &CVec) -> CVec {
    CVec::from_fn(sel.len(), |n, _| {
        let row = sel.indices()[n];
        (0..h.len()).map(|k| h[k] * j_sqrt[(row, k)]).sum()
    })
}

/// Builds the lifted-problem quantities for `sel`.
pub fn precompute(
    corr: &CorrelationModel,
    sel: &PortSelection,
    channels: &ChannelSet,
    budget: &LinkBudget,
) -> Result<PrecomputedQuantities> {
    check_dims(corr, sel, channels)?;
    let b = projected_rows(&corr.j_sqrt, sel, &channels.h_f_los);
    let u: Vec<CVec> = channels.samples.iter().map(|h| projected_rows(&corr.j_sqrt, sel, h)).collect();
    Ok(assemble(sel.submatrix(&corr.j), b, u, budget))
}

fn assemble(k_sel: RMat, b: CVec, u: Vec<CVec>, budget: &LinkBudget) -> PrecomputedQuantities {
    let n = b.len();
    let noise_coeff = budget.l_u * budget.sigma_r2;
    let a: Vec<CVec> = u.iter().map(|us| us.component_mul(&b.map(|z| z.conj()))).collect();
    let c: Vec<CMat> = u
        .iter()
        .map(|us| {
            let mut m = CMat::from_fn(n, n, |i, j| us[i] * us[j].conj() * (k_sel[(i, j)] * noise_coeff));
            hermitize(&mut m);
            m
        })
        .collect();
    let mut q1 = CMat::from_fn(n, n, |i, j| b[i].conj() * b[j] * k_sel[(i, j)]);
    hermitize(&mut q1);
    let mut q2 = CMat::from_fn(n, n, |i, j| C64::new(k_sel[(i, j)] * k_sel[(i, j)], 0.0));
    hermitize(&mut q2);
    let feed = budget.tx_power * budget.l_f;
    let mut f = &q1 * C64::new(feed, 0.0) + &q2 * C64::new(budget.sigma_r2, 0.0);
    hermitize(&mut f);
    PrecomputedQuantities {
        b,
        k_sel,
        u,
        a,
        c,
        q1,
        q2,
        f,
        signal_coeff: budget.tx_power * budget.l_f * budget.l_u,
        sigma_02: budget.sigma_02,
        p_max: budget.p_max,
        g_max: budget.g_max,
    }
}

/// `Q1` in its `diag(bᴴ) K diag(b)` form.
pub fn q1_diag_form(b: &CVec, k_sel: &RMat) -> CMat {
    let kc = k_sel.map(|x| C64::new(x, 0.0));
    let left = CMat::from_diagonal(&b.map(|z| z.conj()));
    let right = CMat::from_diagonal(b);
    left * kc * right
}

/// Effective surface operator `A = J^½ Sᵀ diag(v) S J^½` (dense `M × M`).
pub fn surface_operator(v: &ReflectVector, sel: &PortSelection, corr: &CorrelationModel) -> CMat {
    let m = corr.num_elements();
    let mut a = CMat::zeros(m, m);
    for (n, &port) in sel.indices().iter().enumerate() {
        let row = corr.j_sqrt.row(port);
        for i in 0..m {
            let left = v.0[n] * row[i];
            for j in 0..m {
                a[(i, j)] += left * row[j];
            }
        }
    }
    a
}

/// SINR of sample `s` evaluated from the physical operator.
pub fn sinr_direct(
    v: &ReflectVector,
    sel: &PortSelection,
    corr: &CorrelationModel,
    channels: &ChannelSet,
    budget: &LinkBudget,
    s: usize,
) -> Result<f64> {
    check_dims(corr, sel, channels)?;
    if v.len() != sel.len() {
        return Err(Error::Validation(format!(
            "reflect vector has {} entries for {} ports",
            v.len(),
            sel.len()
        )));
    }
    let h = channels
        .samples
        .get(s)
        .ok_or_else(|| Error::InvalidArgument(format!("sample index {s} out of range")))?;
    let a = surface_operator(v, sel, corr);
    let signal = h.dotc(&(&a * &channels.h_f_los)).norm_sqr();
    let ah = a.adjoint() * h;
    let noise = budget.l_u * budget.sigma_r2 * ah.norm_squared();
    Ok(budget.tx_power * budget.l_f * budget.l_u * signal / (budget.sigma_02 + noise))
}

/// `κ·tr(a_s a_sᴴ V) / (σ₀² + tr(C_s V))`.
pub fn sinr_lifted(v_mat: &LiftedMatrix, pre: &PrecomputedQuantities, s: usize) -> f64 {
    pre.signal_coeff * pre.signal_trace(v_mat, s) / (pre.sigma_02 + pre.noise_trace(v_mat, s))
}

/// Radiated power `vᴴ F v`.
pub fn radiated_power(v: &ReflectVector, pre: &PrecomputedQuantities) -> f64 {
    pre.power(v)
}

/// Radiated power `P·L_f·‖A h_f‖² + σ_r²·tr(A Aᴴ)` from the physical operator.
pub fn radiated_power_direct(
    v: &ReflectVector,
    sel: &PortSelection,
    corr: &CorrelationModel,
    channels: &ChannelSet,
    budget: &LinkBudget,
) -> Result<f64> {
    check_dims(corr, sel, channels)?;
    let a = surface_operator(v, sel, corr);
    let feed = (&a * &channels.h_f_los).norm_squared();
    let amp = a.norm_squared();
    Ok(budget.tx_power * budget.l_f * feed + budget.sigma_r2 * amp)
}

/// SAA ergodic rate `(1/S) Σ log2(1 + γ_s)`.
pub fn saa_rate(v: &ReflectVector, pre: &PrecomputedQuantities) -> f64 {
    pre.rate(v)
}

/// Correlation, frozen channel samples and link budget of one problem
/// instance, with `J^½ h` cached for every port so that evaluating a new
/// selection only gathers rows.
#[derive(Debug, Clone)]
pub struct Scene {
    pub corr: CorrelationModel,
    pub channels: ChannelSet,
    pub budget: LinkBudget,
    b_full: CVec,
    u_full: Vec<CVec>,
}

impl Scene {
    pub fn new(corr: CorrelationModel, channels: ChannelSet, budget: LinkBudget) -> Result<Self> {
        let m = corr.num_elements();
        check_dims(&corr, &PortSelection::full(m), &channels)?;
        let j_sqrt = corr.j_sqrt.map(|x| C64::new(x, 0.0));
        let b_full = &j_sqrt * &channels.h_f_los;
        let u_full = channels.samples.iter().map(|h| &j_sqrt * h).collect();
        Ok(Self { corr, channels, budget, b_full, u_full })
    }

    pub fn num_ports(&self) -> usize {
        self.corr.num_elements()
    }

    pub fn num_samples(&self) -> usize {
        self.u_full.len()
    }

    /// Same budget, different scene parameters (used by degenerate modes).
    pub fn with_budget(&self, budget: LinkBudget) -> Self {
        Self { budget, ..self.clone() }
    }

    pub fn precompute(&self, sel: &PortSelection) -> Result<PrecomputedQuantities> {
        if sel.total() != self.num_ports() {
            return Err(Error::Validation(format!(
                "selection is over {} ports but the surface has {}",
                sel.total(),
                self.num_ports()
            )));
        }
        let b = sel.extract(&self.b_full);
        let u = self.u_full.iter().map(|us| sel.extract(us)).collect();
        Ok(assemble(sel.submatrix(&self.corr.j), b, u, &self.budget))
    }

    fn check_len(&self, sel: &PortSelection, v: &ReflectVector) -> Result<()> {
        if sel.total() != self.num_ports() || v.len() != sel.len() {
            return Err(Error::Validation(format!(
                "reflect vector of length {} does not fit a selection of {} out of {} ports",
                v.len(),
                sel.len(),
                sel.total()
            )));
        }
        Ok(())
    }

    /// SAA rate without materializing the `C_s` matrices.
    pub fn rate(&self, sel: &PortSelection, v: &ReflectVector) -> Result<f64> {
        self.check_len(sel, v)?;
        let idx = sel.indices();
        let n = idx.len();
        let k_sel = sel.submatrix(&self.corr.j);
        let weighted: Vec<C64> = (0..n).map(|i| self.b_full[idx[i]] * v.0[i]).collect();
        let kappa = self.budget.tx_power * self.budget.l_f * self.budget.l_u;
        let noise_coeff = self.budget.l_u * self.budget.sigma_r2;
        let mut z = vec![C64::new(0.0, 0.0); n];
        let mut total = 0.0;
        for us in &self.u_full {
            let mut sig = C64::new(0.0, 0.0);
            for i in 0..n {
                let ui = us[idx[i]].conj();
                sig += ui * weighted[i];
                z[i] = ui * v.0[i];
            }
            let mut quad = 0.0;
            for i in 0..n {
                let mut row = C64::new(0.0, 0.0);
                for j in 0..n {
                    row += z[j] * k_sel[(i, j)];
                }
                quad += (z[i].conj() * row).re;
            }
            let sinr = kappa * sig.norm_sqr() / (self.budget.sigma_02 + noise_coeff * quad.max(0.0));
            total += (1.0 + sinr).log2();
        }
        Ok(total / self.num_samples() as f64)
    }

    /// Radiated power without materializing `F`.
    pub fn radiated_power(&self, sel: &PortSelection, v: &ReflectVector) -> Result<f64> {
        self.check_len(sel, v)?;
        let idx = sel.indices();
        let n = idx.len();
        let mut feed = 0.0;
        let mut amp = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = self.corr.j[(idx[i], idx[j])];
                let x = v.0[i].conj() * v.0[j];
                feed += (x * self.b_full[idx[i]].conj() * self.b_full[idx[j]]).re * k;
                amp += x.re * k * k;
            }
        }
        Ok(self.budget.tx_power * self.budget.l_f * feed.max(0.0) + self.budget.sigma_r2 * amp.max(0.0))
    }
}
