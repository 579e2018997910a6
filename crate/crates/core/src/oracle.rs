//! Exhaustive search over port subsets, discrete phases and a gain grid.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVec, C64};
use crate::reformulation::{PortSelection, ReflectVector, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfsConfig {
    /// Phases are the `2^phase_bits` points `2πk / 2^phase_bits`.
    pub phase_bits: u32,
    /// Gains are `gain_levels` points spread uniformly over `[0, g_max]`.
    pub gain_levels: usize,
    /// Upper bound on the number of configurations evaluated.
    pub max_search_size: u64,
}

impl Default for BfsConfig {
    fn default() -> Self {
        Self { phase_bits: 2, gain_levels: 8, max_search_size: 50_000_000 }
    }
}

impl BfsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phase_bits == 0 || self.phase_bits > 16 || self.gain_levels < 2 {
            return Err(Error::Config(format!(
                "need 1 <= phase_bits <= 16 and gain_levels >= 2, got {} and {}",
                self.phase_bits, self.gain_levels
            )));
        }
        Ok(())
    }

    fn per_element(&self) -> usize {
        (1usize << self.phase_bits) * self.gain_levels
    }

    /// `C(M, M_o)·(2^b·L)^{M_o}`, or `None` if it overflows `u128`.
    pub fn search_size(&self, m: usize, m_o: usize) -> Option<u128> {
        let mut subsets: u128 = 1;
        for k in 0..m_o as u128 {
            subsets = subsets.checked_mul(m as u128 - k)? / (k + 1);
        }
        let per = (self.per_element() as u128).checked_pow(m_o as u32)?;
        subsets.checked_mul(per)
    }
}

#[derive(Debug, Clone)]
pub struct BfsResult {
    pub selection: PortSelection,
    pub v: ReflectVector,
    pub rate: f64,
    pub evaluated: u128,
    /// Configurations skipped for breaking the power budget.
    pub infeasible: u128,
}

/// Grid point `(phase index, gain index)` as a complex coefficient.
fn grid_value(code: usize, cfg: &BfsConfig, g_max: f64) -> C64 {
    let phases = 1usize << cfg.phase_bits;
    let (phase, gain) = (code % phases, code / phases);
    let g = g_max * gain as f64 / (cfg.gain_levels - 1) as f64;
    C64::from_polar(g, std::f64::consts::TAU * phase as f64 / phases as f64)
}

struct SubsetBest {
    rate: f64,
    codes: Vec<usize>,
    infeasible: u128,
}

fn search_subset(scene: &Scene, sel: &PortSelection, cfg: &BfsConfig) -> Result<SubsetBest> {
    let pre = scene.precompute(sel)?;
    let n = sel.len();
    let per = cfg.per_element();
    let table: Vec<C64> = (0..per).map(|c| grid_value(c, cfg, pre.g_max)).collect();
    let mut codes = vec![0usize; n];
    let mut best = SubsetBest { rate: f64::NEG_INFINITY, codes: codes.clone(), infeasible: 0 };
    loop {
        let v = ReflectVector(CVec::from_iterator(n, codes.iter().map(|&c| table[c])));
        if pre.power(&v) > pre.p_max {
            best.infeasible += 1;
        } else {
            let r = pre.rate(&v);
            if r > best.rate {
                best.rate = r;
                best.codes.clone_from(&codes);
            }
        }
        // mixed-radix increment, first element fastest
        let mut k = 0;
        while k < n {
            codes[k] += 1;
            if codes[k] < per {
                break;
            }
            codes[k] = 0;
            k += 1;
        }
        if k == n {
            return Ok(best);
        }
    }
}

/// Best feasible grid configuration over every `m_o`-subset.
///
/// Ties go to the lexicographically first subset, then to the first
/// configuration in enumeration order.
pub fn bfs(scene: &Scene, m_o: usize, cfg: &BfsConfig) -> Result<BfsResult> {
    cfg.validate()?;
    let m = scene.num_ports();
    if m_o == 0 || m_o > m {
        return Err(Error::Validation(format!("M_o = {m_o} must lie in 1..={m}")));
    }
    let total = cfg.search_size(m, m_o);
    match total {
        Some(t) if t <= cfg.max_search_size as u128 => {}
        _ => {
            let shown = total.map_or_else(|| "more than 2^128".to_string(), |t| t.to_string());
            return Err(Error::Validation(format!(
                "exhaustive search over {shown} configurations exceeds the cap of {}",
                cfg.max_search_size
            )));
        }
    }
    let subsets: Vec<Vec<usize>> = (0..m).combinations(m_o).collect();
    let results = subsets
        .par_iter()
        .map(|idx| search_subset(scene, &PortSelection::new(idx, m)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.rate > results[best].rate {
            best = i;
        }
    }
    let selection = PortSelection::new(&subsets[best], m)?;
    let g_max = scene.budget.g_max;
    let v = ReflectVector(CVec::from_iterator(m_o, results[best].codes.iter().map(|&c| grid_value(c, cfg, g_max))));
    Ok(BfsResult {
        selection,
        v,
        rate: results[best].rate,
        evaluated: total.unwrap_or(0),
        infeasible: results.iter().map(|r| r.infeasible).sum(),
    })
}

/// Rounds `v` to the nearest grid point per element (phase and gain
/// independently). The result may break the power budget.
pub fn quantize(v: &ReflectVector, cfg: &BfsConfig, g_max: f64) -> ReflectVector {
    let phases = (1usize << cfg.phase_bits) as f64;
    let levels = (cfg.gain_levels - 1) as f64;
    ReflectVector(v.0.map(|z| {
        let k = (z.arg().rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * phases).round() % phases;
        let g = ((z.norm() / g_max).min(1.0) * levels).round() / levels * g_max;
        C64::from_polar(g, std::f64::consts::TAU * k / phases)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active_reflect::{inner_ao, InnerConfig};
    use crate::ao_driver::build_scene;
    use crate::channel::{SurfaceGeometry, SystemParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(m_x: usize, m_y: usize, s: usize, seed: u64) -> Scene {
        let g = SurfaceGeometry::rectangular(m_x, m_y, 2.0, 0.06).unwrap();
        build_scene(&g, &SystemParams::default(), s, seed).unwrap()
    }

    #[test]
    fn search_size_and_cap() {
        let cfg = BfsConfig { phase_bits: 2, gain_levels: 4, max_search_size: 100 };
        assert_eq!(cfg.search_size(4, 2), Some(6 * 256));
        assert_eq!(cfg.search_size(100, 50), None);
        match bfs(&scene(2, 2, 2, 0), 2, &cfg) {
            Err(Error::Validation(msg)) => assert!(msg.contains("1536") && msg.contains("100")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_port_by_hand() {
        let sc = scene(2, 1, 2, 3);
        let cfg = BfsConfig { phase_bits: 1, gain_levels: 2, max_search_size: 100 };
        let out = bfs(&sc, 1, &cfg).unwrap();
        assert_eq!(out.evaluated, 2 * 4);
        let mut best = f64::NEG_INFINITY;
        for port in 0..2 {
            let sel = PortSelection::new(&[port], 2).unwrap();
            for v in [C64::new(0.0, 0.0), C64::new(sc.budget.g_max, 0.0), C64::new(-sc.budget.g_max, 0.0)] {
                let v = ReflectVector(CVec::from_element(1, v));
                if sc.radiated_power(&sel, &v).unwrap() <= sc.budget.p_max {
                    best = best.max(sc.rate(&sel, &v).unwrap());
                }
            }
        }
        assert!((out.rate - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn exhaustive_over_its_grid_and_feasible() {
        let sc = scene(2, 2, 8, 4);
        let cfg = BfsConfig { phase_bits: 2, gain_levels: 4, max_search_size: 10_000 };
        let out = bfs(&sc, 2, &cfg).unwrap();
        assert!(sc.radiated_power(&out.selection, &out.v).unwrap() <= sc.budget.p_max);
        assert!(out.v.max_gain() <= sc.budget.g_max);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let idx = rand::seq::index::sample(&mut rng, 4, 2).into_vec();
            let sel = PortSelection::new(&idx, 4).unwrap();
            let codes: Vec<usize> = (0..2).map(|_| rand::Rng::random_range(&mut rng, 0..16)).collect();
            let v = ReflectVector(CVec::from_iterator(2, codes.iter().map(|&c| grid_value(c, &cfg, sc.budget.g_max))));
            if sc.radiated_power(&sel, &v).unwrap() <= sc.budget.p_max {
                assert!(out.rate >= sc.rate(&sel, &v).unwrap());
            }
        }
        // the quantized AO solution is one such grid configuration
        let pre = sc.precompute(&out.selection).unwrap();
        let ao = inner_ao(&pre, &InnerConfig::default(), &mut rng).unwrap();
        let q = quantize(&ao.v, &cfg, sc.budget.g_max);
        if pre.power(&q) <= pre.p_max {
            assert!(out.rate >= pre.rate(&q));
        }
    }

    #[test]
    fn pinned_fixture() {
        let sc = scene(2, 2, 8, 2024);
        let cfg = BfsConfig { phase_bits: 2, gain_levels: 4, max_search_size: 10_000 };
        let out = bfs(&sc, 2, &cfg).unwrap();
        assert_eq!(out.selection.indices(), &[2, 3]);
        assert!((out.rate - 6.959728529643107).abs() <= 1e-9 * out.rate, "{:.15}", out.rate);
        let again = bfs(&sc, 2, &cfg).unwrap();
        assert_eq!(out.rate, again.rate);
        assert_eq!(out.v, again.v);
    }

    /// Dense search over `(g₁, g₂, θ)` for `v = (g₁, g₂ e^{jθ})`, polished by
    /// a shrinking pattern search.
    fn two_port_reference(pre: &crate::reformulation::PrecomputedQuantities) -> f64 {
        let g = pre.g_max;
        let eval = |x: [f64; 3]| {
            if x[0] < 0.0 || x[1] < 0.0 || x[0] > g || x[1] > g {
                return f64::NEG_INFINITY;
            }
            let v = ReflectVector(CVec::from_vec(vec![C64::new(x[0], 0.0), C64::from_polar(x[1], x[2])]));
            if pre.power(&v) > pre.p_max {
                return f64::NEG_INFINITY;
            }
            pre.rate(&v)
        };
        let mut best = ([0.0; 3], f64::NEG_INFINITY);
        let n = 40;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..72 {
                    let x = [g * i as f64 / n as f64, g * j as f64 / n as f64, std::f64::consts::TAU * k as f64 / 72.0];
                    let r = eval(x);
                    if r > best.1 {
                        best = (x, r);
                    }
                }
            }
        }
        let mut step = [g / n as f64, g / n as f64, std::f64::consts::TAU / 72.0];
        for _ in 0..60 {
            let mut moved = false;
            for d in 0..3 {
                for s in [-1.0, 1.0] {
                    let mut x = best.0;
                    x[d] += s * step[d];
                    let r = eval(x);
                    if r > best.1 {
                        best = (x, r);
                        moved = true;
                    }
                }
            }
            if !moved {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        best.1
    }

    #[test]
    fn inner_loop_near_dense_reference() {
        let mut ratios = Vec::new();
        for seed in 0..6 {
            let sc = scene(2, 2, 8, 100 + seed);
            let pre = sc.precompute(&PortSelection::new(&[0, 3], 4).unwrap()).unwrap();
            let reference = two_port_reference(&pre);
            let ao = inner_ao(&pre, &InnerConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            ratios.push(ao.rate() / reference);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        eprintln!("inner / reference: {ratios:?}");
        assert!(mean >= 0.95, "{ratios:?}");
    }
}
