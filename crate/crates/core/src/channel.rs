//! Clustered broadband mmWave channel: UPA steering vectors, seeded draws of
//! ray parameters, per-subcarrier frequency responses, block-fading
//! evolution and imperfect-CSI perturbation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{fro_norm_sq, CMat, CVec};
use crate::{Error, Result};

/// Uniform planar array of `n_vertical x n_horizontal` elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_vertical: usize,
    pub n_horizontal: usize,
    /// Element spacing in wavelengths (both axes).
    pub spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_vertical: usize, n_horizontal: usize) -> Self {
        ArrayGeometry {
            n_vertical,
            n_horizontal,
            spacing_over_wavelength: 0.5,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.n_vertical * self.n_horizontal
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vertical == 0 || self.n_horizontal == 0 {
            return Err(Error::config("array dimensions must be positive"));
        }
        if !(self.spacing_over_wavelength > 0.0) || !self.spacing_over_wavelength.is_finite() {
            return Err(Error::config("antenna spacing must be positive"));
        }
        Ok(())
    }
}

/// Array response `e^v(Omega^v) ⊗ e^h(Omega^h)`, unit norm.
///
/// `Omega^h = sin(elevation) sin(azimuth) d/lambda`, `Omega^v = cos(elevation) d/lambda`,
/// and entry `a = v * N^h + h` is `exp(-j 2 pi (v Omega^v + h Omega^h)) / sqrt(N)`.
pub fn steering_vector(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> Result<CVec> {
    if !azimuth.is_finite() || !elevation.is_finite() {
        return Err(Error::input("steering angles must be finite"));
    }
    let d = geometry.spacing_over_wavelength;
    let omega_h = elevation.sin() * azimuth.sin() * d;
    let omega_v = elevation.cos() * d;
    Ok(steering_from_spatial_freq(geometry, omega_v, omega_h))
}

pub(crate) fn steering_from_spatial_freq(
    geometry: &ArrayGeometry,
    omega_v: f64,
    omega_h: f64,
) -> CVec {
    let nh = geometry.n_horizontal;
    let n = geometry.n_antennas();
    let scale = 1.0 / (n as f64).sqrt();
    DVector::from_fn(n, |a, _| {
        let v = (a / nh) as f64;
        let h = (a % nh) as f64;
        Complex64::from_polar(scale, -2.0 * PI * (v * omega_v + h * omega_h))
    })
}

/// Statistics of the clustered channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub n_clusters: usize,
    pub n_rays: usize,
    /// Half-width of the uniform intra-cluster angle offsets, radians.
    pub angle_spread: f64,
    pub n_subcarriers: usize,
    pub n_taps: usize,
    /// Sampling period `T_s = 1 / B_s`, seconds.
    pub symbol_period: f64,
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats {
            n_clusters: 8,
            n_rays: 10,
            angle_spread: 7.5f64.to_radians(),
            n_subcarriers: 64,
            n_taps: 16,
            symbol_period: 1.0 / 500e6,
        }
    }
}

impl ChannelStats {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_rays == 0 {
            return Err(Error::config("need at least one cluster and one ray"));
        }
        if self.n_taps == 0 || self.n_subcarriers == 0 {
            return Err(Error::config("need at least one tap and one subcarrier"));
        }
        if self.n_taps > self.n_subcarriers {
            return Err(Error::config(format!(
                "delay taps D = {} exceed subcarriers K = {}",
                self.n_taps, self.n_subcarriers
            )));
        }
        if !(self.angle_spread >= 0.0) || !(self.symbol_period > 0.0) {
            return Err(Error::config("angle spread must be >= 0 and T_s > 0"));
        }
        Ok(())
    }
}

/// One propagation ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub cluster: usize,
    pub index: usize,
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub geometry_tx: ArrayGeometry,
    pub geometry_rx: ArrayGeometry,
    pub stats: ChannelStats,
    pub rays: Vec<Ray>,
    pub seed: u64,
    /// `H[k]`, `N_r x N_t`, for `k = 0..K`.
    pub freq_response: Vec<CMat>,
    /// Set when `freq_response` carries additive CSI error and no longer
    /// follows from `rays`.
    pub perturbation: Option<Perturbation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub target_ncpe: f64,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn n_t(&self) -> usize {
        self.geometry_tx.n_antennas()
    }

    pub fn n_r(&self) -> usize {
        self.geometry_rx.n_antennas()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.freq_response.len()
    }

    /// Builds a realization from explicit rays.
    pub fn from_rays(
        geometry_tx: ArrayGeometry,
        geometry_rx: ArrayGeometry,
        stats: ChannelStats,
        rays: Vec<Ray>,
        seed: u64,
    ) -> Result<Self> {
        geometry_tx.validate()?;
        geometry_rx.validate()?;
        stats.validate()?;
        if rays.is_empty() {
            return Err(Error::input("a channel needs at least one ray"));
        }
        let mut out = ChannelRealization {
            geometry_tx,
            geometry_rx,
            stats,
            rays,
            seed,
            freq_response: Vec::new(),
            perturbation: None,
        };
        out.freq_response = out.response_from_rays()?;
        Ok(out)
    }

    /// Transmit steering vectors of all rays as columns (`N_t x L`).
    pub fn tx_steering_matrix(&self) -> Result<CMat> {
        let cols = self
            .rays
            .iter()
            .map(|r| steering_vector(&self.geometry_tx, r.aod_azimuth, r.aod_elevation))
            .collect::<Result<Vec<_>>>()?;
        Ok(CMat::from_columns(&cols))
    }

    /// Receive steering vectors of all rays as columns (`N_r x L`).
    pub fn rx_steering_matrix(&self) -> Result<CMat> {
        let cols = self
            .rays
            .iter()
            .map(|r| steering_vector(&self.geometry_rx, r.aoa_azimuth, r.aoa_elevation))
            .collect::<Result<Vec<_>>>()?;
        Ok(CMat::from_columns(&cols))
    }

    fn normalization(&self) -> f64 {
        ((self.n_t() * self.n_r()) as f64 / self.rays.len() as f64).sqrt()
    }

    /// Tap a ray lands on: nearest sample of `tau / T_s`, clamped to `D - 1`.
    pub fn tap_of(&self, ray: &Ray) -> usize {
        let tap = (ray.delay / self.stats.symbol_period).round();
        (tap.max(0.0) as usize).min(self.stats.n_taps - 1)
    }

    /// Delay-domain matrices `H~[d]`, `d = 0..D`.
    pub fn delay_taps(&self) -> Result<Vec<CMat>> {
        let a_t = self.tx_steering_matrix()?;
        let a_r = self.rx_steering_matrix()?;
        let c = self.normalization();
        let mut taps = vec![CMat::zeros(self.n_r(), self.n_t()); self.stats.n_taps];
        for (l, ray) in self.rays.iter().enumerate() {
            let coeff = ray.gain * c;
            let outer = a_r.column(l) * a_t.column(l).adjoint();
            taps[self.tap_of(ray)] += outer * coeff;
        }
        Ok(taps)
    }

    fn response_from_rays(&self) -> Result<Vec<CMat>> {
        let a_t_h = self.tx_steering_matrix()?.adjoint();
        let a_r = self.rx_steering_matrix()?;
        let k_total = self.stats.n_subcarriers;
        let c = self.normalization();
        let taps: Vec<usize> = self.rays.iter().map(|r| self.tap_of(r)).collect();
        let mut out = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let mut scaled = a_r.clone();
            for (l, ray) in self.rays.iter().enumerate() {
                let phase = -2.0 * PI * (k * taps[l]) as f64 / k_total as f64;
                let p = ray.gain * c * Complex64::from_polar(1.0, phase);
                for z in scaled.column_mut(l).iter_mut() {
                    *z *= p;
                }
            }
            out.push(&scaled * &a_t_h);
        }
        Ok(out)
    }
}

/// `H[k] = sum_d H~[d] exp(-j 2 pi k d / K)`.
pub fn freq_response_from_taps(taps: &[CMat], n_subcarriers: usize) -> Vec<CMat> {
    (0..n_subcarriers)
        .map(|k| {
            let mut h = CMat::zeros(taps[0].nrows(), taps[0].ncols());
            for (d, tap) in taps.iter().enumerate() {
                let phase = -2.0 * PI * ((k * d) % n_subcarriers) as f64 / n_subcarriers as f64;
                h += tap * Complex64::from_polar(1.0, phase);
            }
            h
        })
        .collect()
}

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Standard circular complex Gaussian, `CN(0, variance)`.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws a clustered channel.
///
/// Cluster-centre azimuths are uniform in `[0, 2 pi)`, elevations uniform in
/// `[pi/4, 3pi/4]`; rays scatter uniformly within `±angle_spread` around their
/// centre in all four angles. Gains are `CN(0, 1)`, delays uniform in
/// `[0, D T_s]`.
pub fn draw_channel(
    stats: &ChannelStats,
    geometry_tx: &ArrayGeometry,
    geometry_rx: &ArrayGeometry,
    seed: u64,
) -> Result<ChannelRealization> {
    stats.validate()?;
    let mut rng = rng_from_seed(seed);
    let spread = stats.angle_spread;
    let offset = |rng: &mut ChaCha20Rng| -> f64 {
        if spread > 0.0 {
            rng.random_range(-spread..=spread)
        } else {
            0.0
        }
    };
    let max_delay = stats.n_taps as f64 * stats.symbol_period;
    let mut rays = Vec::with_capacity(stats.n_clusters * stats.n_rays);
    for cluster in 0..stats.n_clusters {
        let aod_az = rng.random_range(0.0..2.0 * PI);
        let aod_el = rng.random_range(PI / 4.0..=3.0 * PI / 4.0);
        let aoa_az = rng.random_range(0.0..2.0 * PI);
        let aoa_el = rng.random_range(PI / 4.0..=3.0 * PI / 4.0);
        for index in 0..stats.n_rays {
            let gain = complex_gaussian(&mut rng, 1.0);
            let delay = rng.random_range(0.0..=max_delay);
            let ray = Ray {
                cluster,
                index,
                gain,
                delay,
                aod_azimuth: aod_az + offset(&mut rng),
                aod_elevation: aod_el + offset(&mut rng),
                aoa_azimuth: aoa_az + offset(&mut rng),
                aoa_elevation: aoa_el + offset(&mut rng),
            };
            rays.push(ray);
        }
    }
    ChannelRealization::from_rays(*geometry_tx, *geometry_rx, *stats, rays, seed)
}

/// Imperfect CSI: `H_per[k] = H[k] + N[k]`, `N` entries i.i.d.
/// `CN(0, target * sum_k ||H[k]||^2 / (K N_r N_t))`.
pub fn perturb(
    realization: &ChannelRealization,
    target_ncpe: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    if !(target_ncpe >= 0.0) || !target_ncpe.is_finite() {
        return Err(Error::input("target NCPE must be finite and non-negative"));
    }
    if target_ncpe == 0.0 {
        return Ok(realization.clone());
    }
    let k_total = realization.n_subcarriers();
    let energy: f64 = realization.freq_response.iter().map(fro_norm_sq).sum();
    let variance = target_ncpe * energy / (k_total * realization.n_r() * realization.n_t()) as f64;
    let mut rng = rng_from_seed(seed);
    let mut out = realization.clone();
    for h in out.freq_response.iter_mut() {
        for z in h.iter_mut() {
            *z += complex_gaussian(&mut rng, variance);
        }
    }
    out.perturbation = Some(Perturbation { target_ncpe, seed });
    Ok(out)
}

/// Next symbol of a block-fading channel: same angles, delays and gain moduli,
/// fresh uniform gain phases.
pub fn evolve_block(realization: &ChannelRealization, seed: u64) -> Result<ChannelRealization> {
    let mut rng = rng_from_seed(seed);
    let rays = realization
        .rays
        .iter()
        .map(|r| Ray {
            gain: Complex64::from_polar(r.gain.norm(), rng.random_range(0.0..2.0 * PI)),
            ..*r
        })
        .collect();
    ChannelRealization::from_rays(
        realization.geometry_tx,
        realization.geometry_rx,
        realization.stats,
        rays,
        seed,
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDump {
    seed: u64,
    n_subcarriers: usize,
    n_taps: usize,
    symbol_period: f64,
    angle_spread: f64,
    n_clusters: usize,
    n_rays: usize,
    tx: ArrayGeometry,
    rx: ArrayGeometry,
    paths: Vec<PathRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathRecord {
    i: usize,
    l: usize,
    re_alpha: f64,
    im_alpha: f64,
    tau: f64,
    aod_azimuth: f64,
    aod_elevation: f64,
    aoa_azimuth: f64,
    aoa_elevation: f64,
}

impl ChannelRealization {
    /// TOML text with the dimensions, the seed and the full path table.
    /// Floats are written in shortest round-trip form, so loading restores
    /// the path parameters bit-for-bit.
    pub fn to_text(&self) -> Result<String> {
        let dump = ChannelDump {
            seed: self.seed,
            n_subcarriers: self.stats.n_subcarriers,
            n_taps: self.stats.n_taps,
            symbol_period: self.stats.symbol_period,
            angle_spread: self.stats.angle_spread,
            n_clusters: self.stats.n_clusters,
            n_rays: self.stats.n_rays,
            tx: self.geometry_tx,
            rx: self.geometry_rx,
            paths: self
                .rays
                .iter()
                .map(|r| PathRecord {
                    i: r.cluster,
                    l: r.index,
                    re_alpha: r.gain.re,
                    im_alpha: r.gain.im,
                    tau: r.delay,
                    aod_azimuth: r.aod_azimuth,
                    aod_elevation: r.aod_elevation,
                    aoa_azimuth: r.aoa_azimuth,
                    aoa_elevation: r.aoa_elevation,
                })
                .collect(),
        };
        toml::to_string(&dump).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let dump: ChannelDump = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let stats = ChannelStats {
            n_clusters: dump.n_clusters,
            n_rays: dump.n_rays,
            angle_spread: dump.angle_spread,
            n_subcarriers: dump.n_subcarriers,
            n_taps: dump.n_taps,
            symbol_period: dump.symbol_period,
        };
        let rays = dump
            .paths
            .into_iter()
            .map(|p| Ray {
                cluster: p.i,
                index: p.l,
                gain: Complex64::new(p.re_alpha, p.im_alpha),
                delay: p.tau,
                aod_azimuth: p.aod_azimuth,
                aod_elevation: p.aod_elevation,
                aoa_azimuth: p.aoa_azimuth,
                aoa_elevation: p.aoa_elevation,
            })
            .collect();
        ChannelRealization::from_rays(dump.tx, dump.rx, stats, rays, dump.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn broadside_steering_is_uniform() {
        let g = ArrayGeometry::new(1, 4);
        let a = steering_vector(&g, 0.0, PI / 2.0).unwrap();
        for z in a.iter() {
            assert!((z - c(0.5, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn half_cycle_spatial_frequency_alternates() {
        let g = ArrayGeometry::new(1, 4);
        // sin(pi/2) sin(pi/2) * 0.5 = 0.5
        let a = steering_vector(&g, PI / 2.0, PI / 2.0).unwrap();
        let want = [0.5, -0.5, 0.5, -0.5];
        for (z, w) in a.iter().zip(want) {
            assert!((z - c(w, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn upa_steering_is_kronecker_of_axes() {
        let g = ArrayGeometry::new(2, 2);
        let (az, el) = (0.7, 1.1);
        let a = steering_vector(&g, az, el).unwrap();
        let ov = el.cos() * 0.5;
        let oh = el.sin() * az.sin() * 0.5;
        let ev = [c(1.0, 0.0), Complex64::from_polar(1.0, -2.0 * PI * ov)].map(|z| z / 2f64.sqrt());
        let eh = [c(1.0, 0.0), Complex64::from_polar(1.0, -2.0 * PI * oh)].map(|z| z / 2f64.sqrt());
        for v in 0..2 {
            for h in 0..2 {
                assert!((a[v * 2 + h] - ev[v] * eh[h]).norm() < 1e-12);
            }
        }
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_more_taps_than_subcarriers() {
        let stats = ChannelStats {
            n_taps: 8,
            n_subcarriers: 4,
            ..ChannelStats::default()
        };
        let g = ArrayGeometry::new(2, 2);
        assert!(matches!(
            draw_channel(&stats, &g, &g, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn single_zero_delay_path_is_flat_rank_one() {
        let stats = ChannelStats {
            n_clusters: 1,
            n_rays: 1,
            angle_spread: 0.0,
            n_subcarriers: 8,
            n_taps: 4,
            ..ChannelStats::default()
        };
        let g = ArrayGeometry::new(2, 2);
        let mut ch = draw_channel(&stats, &g, &g, 3).unwrap();
        ch.rays[0].delay = 0.0;
        let ch = ChannelRealization::from_rays(g, g, stats, ch.rays.clone(), 3).unwrap();
        for h in &ch.freq_response[1..] {
            assert!((h - &ch.freq_response[0]).norm() < 1e-12);
        }
        let svd = crate::numerics::svd_econ(&ch.freq_response[0]).unwrap();
        assert_eq!(svd.rank(1e-9), 1);
    }

    #[test]
    fn same_seed_same_channel() {
        let stats = ChannelStats::default();
        let g = ArrayGeometry::new(4, 4);
        let a = draw_channel(&stats, &g, &g, 17).unwrap();
        let b = draw_channel(&stats, &g, &g, 17).unwrap();
        assert_eq!(a, b);
        let other = draw_channel(&stats, &g, &g, 18).unwrap();
        assert_ne!(a.rays, other.rays);
    }

    #[test]
    fn delay_taps_reproduce_response() {
        let stats = ChannelStats {
            n_subcarriers: 16,
            n_taps: 4,
            ..ChannelStats::default()
        };
        let g = ArrayGeometry::new(2, 4);
        let ch = draw_channel(&stats, &g, &g, 5).unwrap();
        let rebuilt = freq_response_from_taps(&ch.delay_taps().unwrap(), 16);
        for (a, b) in rebuilt.iter().zip(&ch.freq_response) {
            assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let stats = ChannelStats {
            n_subcarriers: 8,
            n_taps: 2,
            ..ChannelStats::default()
        };
        let g = ArrayGeometry::new(2, 2);
        let ch = draw_channel(&stats, &g, &g, 2).unwrap();
        assert_eq!(perturb(&ch, 0.0, 9).unwrap(), ch);
        assert!(perturb(&ch, -0.1, 9).is_err());
        let p1 = perturb(&ch, 0.1, 1).unwrap();
        let p2 = perturb(&ch, 0.1, 2).unwrap();
        assert_ne!(p1.freq_response, p2.freq_response);
    }

    #[test]
    fn evolution_keeps_geometry_and_moduli() {
        let stats = ChannelStats {
            n_subcarriers: 8,
            n_taps: 2,
            ..ChannelStats::default()
        };
        let g = ArrayGeometry::new(2, 2);
        let ch = draw_channel(&stats, &g, &g, 4).unwrap();
        let next = evolve_block(&ch, 77).unwrap();
        for (a, b) in ch.rays.iter().zip(&next.rays) {
            // polar round trip: equal up to rounding
            assert!((a.gain.norm() - b.gain.norm()).abs() <= 1e-14 * a.gain.norm());
            assert_eq!(a.aod_azimuth, b.aod_azimuth);
            assert_eq!(a.aod_elevation, b.aod_elevation);
            assert_eq!(a.aoa_azimuth, b.aoa_azimuth);
            assert_eq!(a.aoa_elevation, b.aoa_elevation);
            assert_eq!(a.delay, b.delay);
        }
        assert_ne!(ch.freq_response, next.freq_response);
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let stats = ChannelStats {
            n_subcarriers: 8,
            n_taps: 4,
            n_clusters: 2,
            n_rays: 3,
            ..ChannelStats::default()
        };
        let ch = draw_channel(
            &stats,
            &ArrayGeometry::new(2, 4),
            &ArrayGeometry::new(2, 2),
            12,
        )
        .unwrap();
        let back = ChannelRealization::from_text(&ch.to_text().unwrap()).unwrap();
        assert_eq!(back.rays, ch.rays);
        assert_eq!(back, ch);
    }
}
