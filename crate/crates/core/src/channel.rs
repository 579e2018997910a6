//! Surface geometry, spatial correlation and channel synthesis.
//!
//! Elements sit on a rectangular grid in the `z = 0` plane, centred on the
//! origin. Element `i` lives at row `i / m_x` and column `i % m_x`
//! (0-based, row-major). The BS sits on boresight at `(0, 0, l_f)`.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, CVec, RMat, C64};
use crate::rng::{stream, stream_rng};

/// Relative eigenvalue floor used when taking the PSD square root of `J`.
pub const EIGEN_CLIP_RELATIVE: f64 = 1e-12;

/// Element grid of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGeometry {
    /// Elements per row.
    pub m_x: usize,
    /// Number of rows. Square surfaces have `m_y == m_x`.
    pub m_y: usize,
    /// Aperture width normalized to the wavelength.
    pub w_x: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl SurfaceGeometry {
    /// Square `m_x × m_x` surface.
    pub fn new(m_x: usize, w_x: f64, wavelength: f64) -> Result<Self> {
        Self::rectangular(m_x, m_x, w_x, wavelength)
    }

    /// `m_y` rows of `m_x` elements. The spacing is set by the row width, so
    /// a rectangular surface keeps the same pitch along both axes.
    pub fn rectangular(m_x: usize, m_y: usize, w_x: f64, wavelength: f64) -> Result<Self> {
        if m_x < 2 || m_y < 1 || m_x * m_y < 2 {
            return Err(Error::InvalidArgument(format!(
                "surface needs at least 2 elements per row and 2 elements total, got {m_x}x{m_y}"
            )));
        }
        if !(w_x > 0.0 && w_x.is_finite()) {
            return Err(Error::InvalidArgument(format!("aperture w_x must be > 0, got {w_x}")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wavelength must be > 0, got {wavelength}"
            )));
        }
        Ok(Self { m_x, m_y, w_x, wavelength })
    }

    pub fn num_elements(&self) -> usize {
        self.m_x * self.m_y
    }

    /// Inter-element spacing `d = w_x·λ / m_x`.
    pub fn spacing(&self) -> f64 {
        self.w_x * self.wavelength / self.m_x as f64
    }

    /// `(row, col)` of element `i`.
    pub fn grid_position(&self, i: usize) -> (usize, usize) {
        (i / self.m_x, i % self.m_x)
    }

    /// Cartesian `(x, y)` of element `i`, with the grid centred on the origin.
    pub fn position(&self, i: usize) -> (f64, f64) {
        let (row, col) = self.grid_position(i);
        let d = self.spacing();
        let x = (col as f64 - (self.m_x as f64 - 1.0) / 2.0) * d;
        let y = (row as f64 - (self.m_y as f64 - 1.0) / 2.0) * d;
        (x, y)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_elements() {
            return Err(Error::InvalidArgument(format!(
                "element index {i} out of range for {} elements",
                self.num_elements()
            )));
        }
        Ok(())
    }
}

/// Distance between elements `i` and `j` in meters.
pub fn element_distance(i: usize, j: usize, geom: &SurfaceGeometry) -> Result<f64> {
    geom.check_index(i)?;
    geom.check_index(j)?;
    let (ri, ci) = geom.grid_position(i);
    let (rj, cj) = geom.grid_position(j);
    let dc = ci as f64 - cj as f64;
    let dr = ri as f64 - rj as f64;
    Ok(geom.spacing() * (dc * dc + dr * dr).sqrt())
}

/// Zero-order spherical Bessel function of the first kind, `sin(x)/x`.
pub fn spherical_j0(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Link parameters as they appear in configuration files (logarithmic units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    pub tx_power_dbm: f64,
    pub p_max_dbm: f64,
    /// Maximum amplitude gain per element, in dB.
    pub g_max_db: f64,
    pub noise_ris_dbm: f64,
    pub noise_mu_dbm: f64,
    pub rician_k: f64,
    pub l_f_m: f64,
    pub l_u_m: f64,
    pub pl_exp_f: f64,
    pub pl_exp_u: f64,
    /// Angle of the MU direction from the surface normal, degrees.
    pub mu_theta_deg: f64,
    /// Azimuth of the MU direction in the surface plane, degrees.
    pub mu_phi_deg: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 15.0,
            p_max_dbm: 25.0,
            g_max_db: 40.0,
            noise_ris_dbm: -90.0,
            noise_mu_dbm: -90.0,
            rician_k: 1.0,
            l_f_m: 3.0,
            l_u_m: 15.0,
            pl_exp_f: 2.0,
            pl_exp_u: 2.2,
            mu_theta_deg: 0.0,
            mu_phi_deg: 0.0,
        }
    }
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Power ratio in dB to a linear amplitude ratio.
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Linear-unit link budget. Every dB conversion happens in
/// [`SystemParams::link_budget`]; the optimizer only sees this struct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Transmit power `P` in watts.
    pub tx_power: f64,
    /// Reflection power budget `P_max` in watts. `f64::INFINITY` drops the
    /// constraint.
    pub p_max: f64,
    /// Amplitude gain bound `g_max`.
    pub g_max: f64,
    /// Amplifier noise power at the surface, watts.
    pub sigma_r2: f64,
    /// Receiver noise power, watts.
    pub sigma_02: f64,
    pub rician_k: f64,
    /// BS→surface path gain `L_f`.
    pub l_f: f64,
    /// Surface→MU path gain `L_u`.
    pub l_u: f64,
    /// Whether `l_f < λM`, the near-field LoS validity condition.
    pub los_valid: bool,
}

impl SystemParams {
    /// Converts to linear units and validates against the geometry.
    pub fn link_budget(&self, geom: &SurfaceGeometry) -> Result<LinkBudget> {
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("p_max_dbm", self.p_max_dbm),
            ("g_max_db", self.g_max_db),
            ("noise_ris_dbm", self.noise_ris_dbm),
            ("noise_mu_dbm", self.noise_mu_dbm),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite, got {value}")));
            }
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rician_k must be >= 0, got {}",
                self.rician_k
            )));
        }
        let l_f = path_loss(self.l_f_m, self.pl_exp_f, geom.wavelength)?;
        let l_u = path_loss(self.l_u_m, self.pl_exp_u, geom.wavelength)?;
        let rayleigh_distance = geom.wavelength * geom.num_elements() as f64;
        let los_valid = self.l_f_m < rayleigh_distance;
        if !los_valid {
            log::warn!(
                "l_f = {} m is not below the LoS validity distance λM = {:.3} m",
                self.l_f_m,
                rayleigh_distance
            );
        }
        Ok(LinkBudget {
            tx_power: dbm_to_watts(self.tx_power_dbm),
            p_max: dbm_to_watts(self.p_max_dbm),
            g_max: db_to_amplitude(self.g_max_db),
            sigma_r2: dbm_to_watts(self.noise_ris_dbm),
            sigma_02: dbm_to_watts(self.noise_mu_dbm),
            rician_k: self.rician_k,
            l_f,
            l_u,
            los_valid,
        })
    }
}

/// Free-space-referenced path gain `(λ/4π)²·distance^(−exponent)`.
pub fn path_loss(distance: f64, exponent: f64, wavelength: f64) -> Result<f64> {
    if !(distance >= 1.0) || !distance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "path-loss model needs distance >= 1 m, got {distance}"
        )));
    }
    if !(exponent > 0.0) {
        return Err(Error::InvalidArgument(format!("path-loss exponent must be > 0, got {exponent}")));
    }
    if !(wavelength > 0.0) {
        return Err(Error::InvalidArgument(format!("wavelength must be > 0, got {wavelength}")));
    }
    let reference = (wavelength / (4.0 * PI)).powi(2);
    Ok(reference * distance.powf(-exponent))
}

/// Spatial correlation `J` of the element grid and its PSD square root.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub j: RMat,
    pub j_sqrt: RMat,
}

impl CorrelationModel {
    /// Jakes correlation `J_ij = j0(2π d_ij / λ)`.
    pub fn build(geom: &SurfaceGeometry) -> Result<Self> {
        let m = geom.num_elements();
        let k = 2.0 * PI / geom.wavelength;
        let mut j = RMat::zeros(m, m);
        for a in 0..m {
            j[(a, a)] = 1.0;
            for b in (a + 1)..m {
                let value = spherical_j0(k * element_distance(a, b, geom)?);
                j[(a, b)] = value;
                j[(b, a)] = value;
            }
        }
        let j_sqrt = psd_sqrt(&j)?;
        Ok(Self { j, j_sqrt })
    }

    pub fn num_elements(&self) -> usize {
        self.j.nrows()
    }
}

fn psd_sqrt(j: &RMat) -> Result<RMat> {
    let n = j.nrows();
    let eig = SymmetricEigen::try_new(j.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        let diag_min = (0..n).map(|i| j[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::Numerical(format!(
            "eigendecomposition of the {n}x{n} correlation matrix failed \
             (frobenius norm {:.3e}, min diagonal {diag_min:.3e})",
            j.norm()
        ))
    })?;
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = EIGEN_CLIP_RELATIVE * lambda_max;
    let mut out = RMat::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= floor {
            continue;
        }
        let s = l.sqrt();
        let q = eig.eigenvectors.column(k);
        for a in 0..n {
            for b in 0..n {
                out[(a, b)] += s * q[a] * q[b];
            }
        }
    }
    // exact symmetry
    for a in 0..n {
        for b in (a + 1)..n {
            let avg = 0.5 * (out[(a, b)] + out[(b, a)]);
            out[(a, b)] = avg;
            out[(b, a)] = avg;
        }
    }
    Ok(out)
}

/// Spherical-wave LoS channel from a boresight BS at distance `l_f`.
pub fn los_bs_faris(geom: &SurfaceGeometry, l_f: f64) -> Result<CVec> {
    if !(l_f > 0.0) {
        return Err(Error::InvalidArgument(format!("l_f must be > 0, got {l_f}")));
    }
    let k = 2.0 * PI / geom.wavelength;
    Ok(CVec::from_fn(geom.num_elements(), |i, _| {
        let (x, y) = geom.position(i);
        let r = (x * x + y * y + l_f * l_f).sqrt();
        C64::from_polar(1.0, -k * r)
    }))
}

/// Far-field planar steering vector towards direction `(theta, phi)` in
/// radians, `theta` measured from the surface normal.
pub fn los_far_field(geom: &SurfaceGeometry, theta: f64, phi: f64) -> CVec {
    let k = 2.0 * PI / geom.wavelength;
    let (ux, uy) = (theta.sin() * phi.cos(), theta.sin() * phi.sin());
    CVec::from_fn(geom.num_elements(), |i, _| {
        let (x, y) = geom.position(i);
        C64::from_polar(1.0, k * (x * ux + y * uy))
    })
}

/// Rician draws `sqrt(K/(K+1))·h_los + sqrt(1/(K+1))·CN(0, I)`.
pub fn sample_rician<R: Rng + ?Sized>(
    h_los: &CVec,
    rician_k: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<CVec>> {
    if !(rician_k >= 0.0) {
        return Err(Error::InvalidArgument(format!("rician_k must be >= 0, got {rician_k}")));
    }
    let los_w = (rician_k / (rician_k + 1.0)).sqrt();
    let nlos_w = (1.0 / (rician_k + 1.0)).sqrt();
    Ok((0..count)
        .map(|_| {
            let nlos = complex_gaussian(rng, h_los.len());
            h_los * C64::new(los_w, 0.0) + nlos * C64::new(nlos_w, 0.0)
        })
        .collect())
}

/// Deterministic LoS parts plus the frozen fading samples of the surface→MU
/// link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_f_los: CVec,
    pub h_u_los: CVec,
    pub samples: Vec<CVec>,
}

impl ChannelSet {
    /// Draws `count` fading samples from the channel stream of `seed`.
    pub fn draw(
        geom: &SurfaceGeometry,
        params: &SystemParams,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count S must be >= 1".into()));
        }
        let h_f_los = los_bs_faris(geom, params.l_f_m)?;
        let h_u_los = los_far_field(
            geom,
            params.mu_theta_deg.to_radians(),
            params.mu_phi_deg.to_radians(),
        );
        let mut rng = stream_rng(seed, stream::CHANNELS);
        let samples = sample_rician(&h_u_los, params.rician_k, count, &mut rng)?;
        Ok(Self { h_f_los, h_u_los, samples })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_geometry() -> SurfaceGeometry {
        SurfaceGeometry::new(10, 2.0, 0.06).unwrap()
    }

    #[test]
    fn distance_examples() {
        let g = desk_geometry();
        assert_eq!(element_distance(0, 0, &g).unwrap(), 0.0);
        let d01 = element_distance(0, 1, &g).unwrap();
        assert!((d01 - 2.0 * 0.06 / 10.0).abs() < 1e-15);
        assert_eq!(element_distance(0, 10, &g).unwrap(), d01);
        assert!(element_distance(0, 100, &g).is_err());
        assert_eq!(element_distance(3, 57, &g).unwrap(), element_distance(57, 3, &g).unwrap());
    }

    #[test]
    fn jakes_special_values() {
        assert_eq!(spherical_j0(0.0), 1.0);
        assert!(spherical_j0(PI).abs() < 1e-15);
        assert!((spherical_j0(1e-5) - (1e-5f64).sin() / 1e-5).abs() < 1e-15);
    }

    #[test]
    fn correlation_matches_scalar_loop() {
        let g = SurfaceGeometry::new(4, 2.0, 0.06).unwrap();
        let corr = CorrelationModel::build(&g).unwrap();
        let d = 2.0 * 0.06 / 4.0;
        for i in 0..16 {
            for j in 0..16 {
                let (ri, ci) = ((i / 4) as f64, (i % 4) as f64);
                let (rj, cj) = ((j / 4) as f64, (j % 4) as f64);
                let dist = d * ((ci - cj).powi(2) + (ri - rj).powi(2)).sqrt();
                let x = 2.0 * PI * dist / 0.06;
                let expected = if x == 0.0 { 1.0 } else { x.sin() / x };
                assert!((corr.j[(i, j)] - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn correlation_sqrt_reconstructs() {
        let corr = CorrelationModel::build(&desk_geometry()).unwrap();
        assert_eq!(corr.j, corr.j.transpose());
        let back = &corr.j_sqrt * &corr.j_sqrt;
        assert!((back - &corr.j).norm() / corr.j.norm() <= 1e-8);
        for i in 0..corr.num_elements() {
            assert_eq!(corr.j[(i, i)], 1.0);
        }
    }

    #[test]
    fn half_wavelength_grid_is_nearly_uncorrelated_along_axes() {
        // spacing λ/2 puts adjacent elements at 2πd/λ = π
        let g = SurfaceGeometry::new(4, 2.0, 0.06).unwrap();
        let corr = CorrelationModel::build(&g).unwrap();
        assert!(corr.j[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn bs_channel_is_unit_modulus_with_boresight_phase() {
        let g = SurfaceGeometry::new(5, 2.0, 0.06).unwrap();
        let h = los_bs_faris(&g, 3.0).unwrap();
        assert!(h.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let expected = C64::from_polar(1.0, -2.0 * PI * 3.0 / 0.06);
        assert!((h[12] - expected).norm() < 1e-9);
        assert!(los_bs_faris(&g, 0.0).is_err());
    }

    #[test]
    fn bs_channel_approaches_plane_wave() {
        let g = SurfaceGeometry::new(4, 2.0, 0.06).unwrap();
        let h = los_bs_faris(&g, 1e6).unwrap();
        let far = los_far_field(&g, 0.0, 0.0);
        // the boresight plane wave has equal phase at every element
        let reference = h[0] / far[0];
        for i in 1..16 {
            let rel = (h[i] / far[i]) / reference;
            assert!(rel.arg().abs() < 1e-3);
        }
    }

    #[test]
    fn rician_los_limit() {
        let g = SurfaceGeometry::new(3, 1.0, 0.06).unwrap();
        let los = los_far_field(&g, 0.3, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_rician(&los, 1e12, 10, &mut rng).unwrap() {
            assert!((s - &los).iter().all(|z| z.norm() < 1e-5));
        }
    }

    #[test]
    fn rician_nlos_is_zero_mean() {
        let los = CVec::from_element(4, C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = sample_rician(&los, 0.0, 100_000, &mut rng).unwrap();
        let mut mean = CVec::zeros(4);
        for d in &draws {
            mean += d;
        }
        mean /= C64::new(draws.len() as f64, 0.0);
        assert!(mean.iter().all(|z| z.norm() < 0.02));
    }

    #[test]
    fn rician_k1_variance_and_second_moment() {
        let los = los_far_field(&SurfaceGeometry::new(2, 1.0, 0.06).unwrap(), 0.4, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws = sample_rician(&los, 1.0, n, &mut rng).unwrap();
        let los_part = &los * C64::new(0.5f64.sqrt(), 0.0);
        let mut var = vec![0.0; 4];
        let mut energy = 0.0;
        for d in &draws {
            for (i, v) in var.iter_mut().enumerate() {
                *v += (d[i] - los_part[i]).norm_sqr();
            }
            energy += d.norm_squared();
        }
        for v in var {
            assert!((v / n as f64 - 0.5).abs() < 0.5 * 0.05);
        }
        assert!((energy / n as f64 - 4.0).abs() < 4.0 * 0.02);
    }

    #[test]
    fn seeded_draws_are_identical() {
        let g = SurfaceGeometry::new(3, 2.0, 0.06).unwrap();
        let p = SystemParams::default();
        let a = ChannelSet::draw(&g, &p, 5, 42).unwrap();
        let b = ChannelSet::draw(&g, &p, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = ChannelSet::draw(&g, &p, 5, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn path_loss_examples() {
        let a = path_loss(2.0, 2.0, 0.06).unwrap();
        let b = path_loss(4.0, 2.0, 0.06).unwrap();
        assert!((b / a - 0.25).abs() < 1e-15);
        let ratio = path_loss(15.0, 2.2, 0.06).unwrap() / path_loss(3.0, 2.2, 0.06).unwrap();
        assert!((ratio - 5f64.powf(-2.2)).abs() < 1e-14);
        let unit = path_loss(1.0, 2.0, 0.06).unwrap();
        assert!((unit - 2.279e-5).abs() < 1e-8);
        assert!(path_loss(0.5, 2.0, 0.06).is_err());
    }

    #[test]
    fn link_budget_units() {
        let g = desk_geometry();
        let lb = SystemParams::default().link_budget(&g).unwrap();
        assert!((lb.tx_power - 10f64.powf(-1.5)).abs() < 1e-15);
        assert!((lb.g_max - 100.0).abs() < 1e-12);
        assert!((lb.sigma_02 - 1e-12).abs() < 1e-24);
        // λM = 6 m at M = 100
        assert!(lb.los_valid);
    }
}
