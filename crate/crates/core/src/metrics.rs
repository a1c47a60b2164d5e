//! Figures of merit: spectral efficiency, transceiver power and energy
//! efficiency, Monte-Carlo 16-QAM bit error rate and the normalized channel
//! perturbation error.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, rng_from_seed, ChannelRealization};
use crate::fca::{Architecture, HybridDesign};
use crate::numerics::{fro_norm_sq, CMat};
use crate::{Error, Result};

/// Default signal bandwidth in Hz.
pub const DEFAULT_BANDWIDTH: f64 = 500e6;

/// Achievable rate in bps/Hz averaged over subcarriers:
/// `(1/K) sum_k log2 det(I + R_n[k]^{-1} W^H H F F^H H^H W)` with
/// `R_n[k] = noise_var W^H W`, `F = F_RF F_BB[k]`, `W = W_RF W_BB[k]`.
pub fn spectral_efficiency(
    realization: &ChannelRealization,
    design: &HybridDesign,
    noise_var: f64,
) -> Result<f64> {
    spectral_efficiency_on(&realization.freq_response, design, noise_var)
}

/// [`spectral_efficiency`] on explicit channel matrices, e.g. the true
/// channel when the design came from imperfect CSI.
pub fn spectral_efficiency_on(
    channels: &[CMat],
    design: &HybridDesign,
    noise_var: f64,
) -> Result<f64> {
    let (n_r, n_t) = channels
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .shape();
    design.check_dimensions(n_t, n_r, channels.len())?;
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::input("noise variance must be positive"));
    }
    let mut total = 0.0;
    for (k, h) in channels.iter().enumerate() {
        let f = design.precoder(k);
        let w = design.combiner(k);
        let g = w.adjoint() * h * f;
        let r_n = (w.adjoint() * &w).scale(noise_var);
        total += log2_det_ratio(&r_n, &g);
    }
    Ok(total / channels.len() as f64)
}

/// `log2 det(I + R^{-1} G G^H)` via `log2 det(R + G G^H) - log2 det(R)`,
/// both from Cholesky factors.
fn log2_det_ratio(r_n: &CMat, g: &CMat) -> f64 {
    let r_n = regularized(r_n);
    let signal = &r_n + g * g.adjoint();
    log2_det_hpd(&signal) - log2_det_hpd(&r_n)
}

fn regularized(r_n: &CMat) -> CMat {
    if r_n.clone().cholesky().is_some() {
        return r_n.clone();
    }
    log::warn!("noise covariance is singular; adding 1e-12 I");
    let mut out = r_n.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += Complex64::new(1e-12, 0.0);
    }
    out
}

fn log2_det_hpd(a: &CMat) -> f64 {
    let chol = a
        .clone()
        .cholesky()
        .expect("regularized covariance plus PSD term is positive definite");
    let l = chol.l_dirty();
    2.0 * (0..a.nrows()).map(|i| l[(i, i)].re.log2()).sum::<f64>()
}

/// Per-component power draws in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    pub p_ps: f64,
    pub p_ad: f64,
    pub p_da: f64,
    pub p_mix: f64,
    pub p_pa: f64,
    pub p_lna: f64,
    pub p_lo: f64,
    pub p_syn: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            p_ps: 0.015,
            p_ad: 0.200,
            p_da: 0.200,
            p_mix: 0.039,
            p_pa: 0.138,
            p_lna: 0.039,
            p_lo: 0.005,
            p_syn: 0.050,
        }
    }
}

impl PowerModel {
    pub fn zero() -> Self {
        PowerModel {
            p_ps: 0.0,
            p_ad: 0.0,
            p_da: 0.0,
            p_mix: 0.0,
            p_pa: 0.0,
            p_lna: 0.0,
            p_lo: 0.0,
            p_syn: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.p_ps, self.p_ad, self.p_da, self.p_mix, self.p_pa, self.p_lna, self.p_lo,
            self.p_syn,
        ];
        if all.iter().all(|p| p.is_finite() && *p >= 0.0) {
            Ok(())
        } else {
            Err(Error::config("component powers must be finite and >= 0"))
        }
    }
}

/// Hardware family for the power count. Fixed and adaptive subarrays share
/// the partially-connected count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerArchitecture {
    FullyConnected,
    PartiallyConnected,
    FullyDigital,
}

impl From<Architecture> for PowerArchitecture {
    fn from(a: Architecture) -> Self {
        match a {
            Architecture::FullyConnected => PowerArchitecture::FullyConnected,
            Architecture::FixedSubarray | Architecture::AdaptiveSubarray => {
                PowerArchitecture::PartiallyConnected
            }
            Architecture::FullyDigital => PowerArchitecture::FullyDigital,
        }
    }
}

/// Passive antennas share one PA/LNA per RF chain; active antennas carry one
/// per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AntennaType {
    Passive,
    Active,
}

impl fmt::Display for AntennaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AntennaType::Passive => "passive",
            AntennaType::Active => "active",
        })
    }
}

impl FromStr for AntennaType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passive" => Ok(AntennaType::Passive),
            "active" => Ok(AntennaType::Active),
            other => Err(Error::Parse(format!("unknown antenna type {other:?}"))),
        }
    }
}

/// Total transmitter plus receiver power in watts.
pub fn power_consumption(
    arch: PowerArchitecture,
    antenna: AntennaType,
    n_t: usize,
    n_r: usize,
    n_rf_tx: usize,
    n_rf_rx: usize,
    m: &PowerModel,
) -> f64 {
    let (nt, nr) = (n_t as f64, n_r as f64);
    let (rt, rr) = (n_rf_tx as f64, n_rf_rx as f64);
    let sync = 2.0 * m.p_syn;
    match arch {
        PowerArchitecture::FullyDigital => {
            nt * (m.p_pa + m.p_da + m.p_mix + m.p_lo)
                + sync
                + nr * (m.p_lna + m.p_ad + m.p_mix + m.p_lo)
        }
        PowerArchitecture::FullyConnected | PowerArchitecture::PartiallyConnected => {
            let (ps_tx, ps_rx) = if arch == PowerArchitecture::FullyConnected {
                (nt * rt, nr * rr)
            } else {
                (nt, nr)
            };
            match antenna {
                AntennaType::Passive => {
                    rt * (m.p_da + m.p_mix + m.p_lo + m.p_pa)
                        + ps_tx * m.p_ps
                        + sync
                        + rr * (m.p_ad + m.p_mix + m.p_lo + m.p_lna)
                        + ps_rx * m.p_ps
                }
                AntennaType::Active => {
                    rt * (m.p_da + m.p_mix + m.p_lo)
                        + ps_tx * m.p_ps
                        + nt * m.p_pa
                        + sync
                        + rr * (m.p_ad + m.p_mix + m.p_lo)
                        + ps_rx * m.p_ps
                        + nr * m.p_lna
                }
            }
        }
    }
}

/// Bits per joule, `se * bandwidth / power`.
pub fn energy_efficiency(se: f64, bandwidth: f64, power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::input("power must be positive"));
    }
    Ok(se * bandwidth / power)
}

/// Gray-coded 4-PAM levels per quadrature axis: bits `00, 01, 11, 10` map to
/// `-3, -1, +1, +3`, scaled so that the 16-QAM symbol has unit energy.
const PAM_LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];
const GRAY: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

fn qam_scale() -> f64 {
    1.0 / 10f64.sqrt()
}

fn pam_decide(x: f64) -> usize {
    let x = x / qam_scale();
    if x < -2.0 {
        0
    } else if x < 0.0 {
        1
    } else if x < 2.0 {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerEstimate {
    pub bit_errors: u64,
    pub bits: u64,
}

impl BerEstimate {
    pub fn rate(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }
}

/// Monte-Carlo 16-QAM bit error rate of a design.
///
/// Every subcarrier carries `n_symbols` symbol vectors with independent
/// unit-energy Gray 16-QAM entries. The receiver forms `W^H (H F s + n)`,
/// divides stream `i` by `[W^H H F]_{ii}` and slices each axis. Noise enters
/// through `W^H n`, drawn directly from `CN(0, noise_var W^H W)`.
pub fn ber_16qam(
    realization: &ChannelRealization,
    design: &HybridDesign,
    noise_var: f64,
    n_symbols: usize,
    seed: u64,
) -> Result<BerEstimate> {
    ber_16qam_on(
        &realization.freq_response,
        design,
        noise_var,
        n_symbols,
        seed,
    )
}

pub fn ber_16qam_on(
    channels: &[CMat],
    design: &HybridDesign,
    noise_var: f64,
    n_symbols: usize,
    seed: u64,
) -> Result<BerEstimate> {
    if n_symbols == 0 {
        return Err(Error::input("need at least one symbol"));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::input("noise variance must be non-negative"));
    }
    let (n_r, n_t) = channels
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .shape();
    design.check_dimensions(n_t, n_r, channels.len())?;
    let ns = design.n_streams();
    let mut rng = rng_from_seed(seed);
    let scale = qam_scale();
    let mut errors = 0u64;
    let mut bits = 0u64;

    for (k, h) in channels.iter().enumerate() {
        let w = design.combiner(k);
        let g = w.adjoint() * h * design.precoder(k);
        let noise_cov = (w.adjoint() * &w).scale(noise_var);
        let noise_factor = noise_cov
            .clone()
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| CMat::zeros(ns, ns));
        let mut symbols = CMat::zeros(ns, 1);
        let mut labels = vec![(0usize, 0usize); ns];
        for _ in 0..n_symbols {
            for (i, label) in labels.iter_mut().enumerate() {
                let re = rand::Rng::random_range(&mut rng, 0..4usize);
                let im = rand::Rng::random_range(&mut rng, 0..4usize);
                *label = (re, im);
                symbols[(i, 0)] = Complex64::new(PAM_LEVELS[re], PAM_LEVELS[im]) * scale;
            }
            let white = CMat::from_fn(ns, 1, |_, _| complex_gaussian(&mut rng, 1.0));
            let received = &g * &symbols + &noise_factor * white;
            for (i, &(re, im)) in labels.iter().enumerate() {
                let gain = g[(i, i)];
                let z = if gain.norm() > 0.0 {
                    received[(i, 0)] / gain
                } else {
                    Complex64::new(0.0, 0.0)
                };
                errors += (GRAY[re] ^ GRAY[pam_decide(z.re)]).count_ones() as u64;
                errors += (GRAY[im] ^ GRAY[pam_decide(z.im)]).count_ones() as u64;
                bits += 4;
            }
        }
    }
    Ok(BerEstimate {
        bit_errors: errors,
        bits,
    })
}

/// `sum_k ||H[k] - H_per[k]||^2 / sum_k ||H[k]||^2`.
pub fn ncpe(realization: &ChannelRealization, perturbed: &ChannelRealization) -> Result<f64> {
    ncpe_on(&realization.freq_response, &perturbed.freq_response)
}

pub fn ncpe_on(channels: &[CMat], perturbed: &[CMat]) -> Result<f64> {
    if channels.len() != perturbed.len()
        || channels
            .iter()
            .zip(perturbed)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::input("channel dimensions differ"));
    }
    let energy: f64 = channels.iter().map(fro_norm_sq).sum();
    if !(energy > 0.0) {
        return Err(Error::input("reference channel has zero energy"));
    }
    let err: f64 = channels
        .iter()
        .zip(perturbed)
        .map(|(a, b)| fro_norm_sq(&(a - b)))
        .sum();
    Ok(err / energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::PhaseResolution;

    fn identity_design(n: usize, k: usize) -> HybridDesign {
        HybridDesign {
            rf_precoder: CMat::identity(n, n),
            bb_precoders: vec![CMat::identity(n, n); k],
            rf_combiner: CMat::identity(n, n),
            bb_combiners: vec![CMat::identity(n, n); k],
            architecture: Architecture::FullyDigital,
            quantization: PhaseResolution::Unquantized,
        }
    }

    #[test]
    fn identity_link_has_one_bit_per_stream() {
        let d = identity_design(3, 2);
        let h = vec![CMat::identity(3, 3); 2];
        let se = spectral_efficiency_on(&h, &d, 1.0).unwrap();
        assert!((se - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_channel_has_zero_rate() {
        let d = identity_design(2, 1);
        let se = spectral_efficiency_on(&[CMat::zeros(2, 2)], &d, 0.5).unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn power_examples() {
        let m = PowerModel::default();
        let fca = power_consumption(
            PowerArchitecture::FullyConnected,
            AntennaType::Passive,
            64,
            64,
            4,
            4,
            &m,
        );
        let by_hand = 4.0 * (0.200 + 0.039 + 0.005 + 0.138)
            + 64.0 * 4.0 * 0.015
            + 2.0 * 0.050
            + 4.0 * (0.200 + 0.039 + 0.005 + 0.039)
            + 64.0 * 4.0 * 0.015;
        assert!((fca - by_hand).abs() < 1e-12);
        assert!((fca - 10.440).abs() < 1e-12);
        let pcs = power_consumption(
            PowerArchitecture::PartiallyConnected,
            AntennaType::Passive,
            64,
            64,
            4,
            4,
            &m,
        );
        assert!((pcs - 4.680).abs() < 1e-12);
        let zero = PowerModel::zero();
        for arch in [
            PowerArchitecture::FullyConnected,
            PowerArchitecture::PartiallyConnected,
            PowerArchitecture::FullyDigital,
        ] {
            for ant in [AntennaType::Passive, AntennaType::Active] {
                assert_eq!(power_consumption(arch, ant, 64, 64, 4, 4, &zero), 0.0);
            }
        }
    }

    #[test]
    fn power_is_linear_in_each_component() {
        let base = PowerModel::default();
        let fields: [fn(&mut PowerModel) -> &mut f64; 8] = [
            |m| &mut m.p_ps,
            |m| &mut m.p_ad,
            |m| &mut m.p_da,
            |m| &mut m.p_mix,
            |m| &mut m.p_pa,
            |m| &mut m.p_lna,
            |m| &mut m.p_lo,
            |m| &mut m.p_syn,
        ];
        for arch in [
            PowerArchitecture::FullyConnected,
            PowerArchitecture::PartiallyConnected,
            PowerArchitecture::FullyDigital,
        ] {
            for ant in [AntennaType::Passive, AntennaType::Active] {
                for field in fields {
                    let p = |v: f64| {
                        let mut m = base;
                        *field(&mut m) = v;
                        power_consumption(arch, ant, 16, 32, 2, 3, &m)
                    };
                    let (a, b, c) = (p(0.0), p(1.0), p(2.0));
                    assert!(((c - b) - (b - a)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn energy_efficiency_arithmetic() {
        assert_eq!(energy_efficiency(10.0, 5e8, 5.0).unwrap(), 1e9);
        let a = energy_efficiency(3.0, DEFAULT_BANDWIDTH, 2.0).unwrap();
        let b = energy_efficiency(3.0, DEFAULT_BANDWIDTH, 4.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-3);
        assert!(energy_efficiency(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ncpe_examples() {
        let h = vec![
            CMat::identity(2, 2),
            CMat::from_element(2, 2, Complex64::new(0.5, 0.1)),
        ];
        assert_eq!(ncpe_on(&h, &h).unwrap(), 0.0);
        let doubled: Vec<CMat> = h.iter().map(|m| m * Complex64::new(2.0, 0.0)).collect();
        assert!((ncpe_on(&h, &doubled).unwrap() - 1.0).abs() < 1e-15);
        assert!(ncpe_on(&[CMat::zeros(2, 2)], &h[..1]).is_err());
    }

    #[test]
    fn noiseless_identity_link_is_error_free() {
        let d = identity_design(2, 3);
        let h = vec![CMat::identity(2, 2); 3];
        let ber = ber_16qam_on(&h, &d, 0.0, 200, 5).unwrap();
        assert_eq!(ber.bit_errors, 0);
        assert_eq!(ber.bits, 3 * 200 * 2 * 4);
    }

    #[test]
    fn gray_mapping_neighbours_differ_in_one_bit() {
        for i in 0..3 {
            assert_eq!((GRAY[i] ^ GRAY[i + 1]).count_ones(), 1);
        }
        for (i, &level) in PAM_LEVELS.iter().enumerate() {
            assert_eq!(pam_decide(level * qam_scale()), i);
        }
    }
}
