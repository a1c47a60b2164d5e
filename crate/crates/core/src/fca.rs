//! PCA hybrid precoder and weighted-PCA hybrid combiner for the
//! fully-connected array, plus the [`HybridDesign`] container shared by every
//! scheme.

use std::fmt;

use crate::baselines::{fully_digital, mmse_combiners, FullyDigitalDesign};
use crate::channel::ChannelRealization;
use crate::numerics::{
    fro_norm_sq, hermitian_inv_sqrt, hstack, leading_left_vectors, phase_quantize, solve_hpd,
    svd_econ, water_fill, CMat, PhaseResolution, SignalCovariance,
};
use crate::{Error, Result};

/// How the analog stage connects RF chains to antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    FullyConnected,
    FixedSubarray,
    AdaptiveSubarray,
    FullyDigital,
}

impl Architecture {
    pub fn label(self) -> &'static str {
        match self {
            Architecture::FullyConnected => "fca",
            Architecture::FixedSubarray => "fs",
            Architecture::AdaptiveSubarray => "as",
            Architecture::FullyDigital => "fda",
        }
    }

    pub fn is_subarray(self) -> bool {
        matches!(
            self,
            Architecture::FixedSubarray | Architecture::AdaptiveSubarray
        )
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Analog + per-subcarrier digital precoder and combiner.
///
/// For [`Architecture::FullyDigital`] the RF stages are identity matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridDesign {
    pub rf_precoder: CMat,
    pub bb_precoders: Vec<CMat>,
    pub rf_combiner: CMat,
    pub bb_combiners: Vec<CMat>,
    pub architecture: Architecture,
    pub quantization: PhaseResolution,
}

impl HybridDesign {
    pub fn n_subcarriers(&self) -> usize {
        self.bb_precoders.len()
    }

    pub fn n_streams(&self) -> usize {
        self.bb_precoders.first().map_or(0, |b| b.ncols())
    }

    pub fn n_rf_tx(&self) -> usize {
        self.rf_precoder.ncols()
    }

    pub fn n_rf_rx(&self) -> usize {
        self.rf_combiner.ncols()
    }

    /// `F_RF F_BB[k]`.
    pub fn precoder(&self, k: usize) -> CMat {
        &self.rf_precoder * &self.bb_precoders[k]
    }

    /// `W_RF W_BB[k]`.
    pub fn combiner(&self, k: usize) -> CMat {
        &self.rf_combiner * &self.bb_combiners[k]
    }

    /// `sum_k ||F_RF F_BB[k]||_F^2`.
    pub fn transmit_power(&self) -> f64 {
        (0..self.n_subcarriers())
            .map(|k| fro_norm_sq(&self.precoder(k)))
            .sum()
    }

    /// Largest deviation of an RF entry from its required modulus, over both
    /// RF stages. Entries outside a subarray support must be exactly zero;
    /// a nonzero one counts as an infinite deviation.
    pub fn cmc_violation(&self) -> f64 {
        match self.architecture {
            Architecture::FullyDigital => 0.0,
            arch => rf_cmc_violation(&self.rf_precoder, arch.is_subarray())
                .max(rf_cmc_violation(&self.rf_combiner, arch.is_subarray())),
        }
    }

    pub fn check_dimensions(&self, n_t: usize, n_r: usize, k_total: usize) -> Result<()> {
        if self.rf_precoder.nrows() != n_t || self.rf_combiner.nrows() != n_r {
            return Err(Error::input(format!(
                "design is for a {}x{} link, channel is {}x{}",
                self.rf_combiner.nrows(),
                self.rf_precoder.nrows(),
                n_r,
                n_t
            )));
        }
        if self.bb_precoders.len() != k_total || self.bb_combiners.len() != k_total {
            return Err(Error::input("design and channel disagree on K"));
        }
        let ns = self.n_streams();
        let ok = self
            .bb_precoders
            .iter()
            .all(|b| b.nrows() == self.n_rf_tx() && b.ncols() == ns)
            && self
                .bb_combiners
                .iter()
                .all(|b| b.nrows() == self.n_rf_rx() && b.ncols() == ns);
        if !ok {
            return Err(Error::input("inconsistent baseband dimensions"));
        }
        Ok(())
    }
}

fn rf_cmc_violation(rf: &CMat, subarray: bool) -> f64 {
    let mut worst = 0.0f64;
    for col in rf.column_iter() {
        let support = col.iter().filter(|z| z.norm() > 0.0).count();
        if support == 0 {
            return f64::INFINITY;
        }
        let target = if subarray {
            1.0 / (support as f64).sqrt()
        } else {
            if support != rf.nrows() {
                return f64::INFINITY;
            }
            1.0 / (rf.nrows() as f64).sqrt()
        };
        for z in col.iter().filter(|z| z.norm() > 0.0) {
            worst = worst.max((z.norm() - target).abs());
        }
    }
    worst
}

/// Frequency-flat RF precoder from the PCA of the stacked fully-digital
/// precoders `[F_FD[1] ... F_FD[K]]`: phases of the `n_rf` dominant left
/// singular vectors, modulus `1/sqrt(N_t)`, quantized to `resolution`.
pub fn pca_rf_precoder(
    fd_precoders: &[CMat],
    n_rf: usize,
    resolution: PhaseResolution,
) -> Result<CMat> {
    let stacked = hstack(fd_precoders)?;
    let n = stacked.nrows();
    if n_rf == 0 || n_rf > n {
        return Err(Error::input(format!("n_rf = {n_rf} must lie in 1..={n}")));
    }
    let u = leading_left_vectors(&stacked, n_rf)?;
    phase_quantize(&u, resolution, 1.0 / (n as f64).sqrt())
}

/// Baseband precoders for a fixed RF precoder: per subcarrier the dominant
/// right singular directions of `H[k] F_RF (F_RF^H F_RF)^{-1/2}`, with power
/// water-filled jointly over all `K N_s` effective channels and a total
/// budget of `K N_s`.
pub fn bb_precoder(
    rf_precoder: &CMat,
    channels: &[CMat],
    n_streams: usize,
    noise_var: f64,
) -> Result<Vec<CMat>> {
    let n_rf = rf_precoder.ncols();
    if n_streams == 0 || n_streams > n_rf {
        return Err(Error::input(format!(
            "need 1 <= N_s <= N_RF, got N_s = {n_streams}, N_RF = {n_rf}"
        )));
    }
    if channels.is_empty() {
        return Err(Error::input("no subcarriers"));
    }
    let gram_inv_sqrt = hermitian_inv_sqrt(&(rf_precoder.adjoint() * rf_precoder))?;
    let whitened = rf_precoder * &gram_inv_sqrt;

    // H[k] = U S V^H, so H F~ and S V^H F~ share singular values and right
    // singular vectors; the smaller left factor is cheaper to decompose.
    let mut directions = Vec::with_capacity(channels.len());
    let mut gains = Vec::with_capacity(channels.len() * n_streams);
    for h in channels {
        let svd = svd_econ(&(h * &whitened))?;
        for i in 0..n_streams {
            let s = svd.singular_values.get(i).copied().unwrap_or(0.0);
            gains.push(s * s);
        }
        directions.push(svd.right_vectors.columns(0, n_streams).into_owned());
    }
    let budget = (channels.len() * n_streams) as f64;
    let wf = water_fill(&gains, noise_var, budget)?;

    Ok(directions
        .into_iter()
        .enumerate()
        .map(|(k, mut v)| {
            for i in 0..n_streams {
                let amp = wf.allocations[k * n_streams + i].sqrt();
                v.column_mut(i).scale_mut(amp);
            }
            &gram_inv_sqrt * v
        })
        .collect())
}

/// Received-signal covariances `E[y y^H][k] = H F F^H H^H + noise_var I` for
/// the precoders `F[k]`.
pub fn received_covariances(
    channels: &[CMat],
    precoders: &[CMat],
    noise_var: f64,
) -> Result<Vec<SignalCovariance>> {
    if channels.len() != precoders.len() {
        return Err(Error::input("one precoder per subcarrier expected"));
    }
    channels
        .iter()
        .zip(precoders)
        .map(|(h, f)| SignalCovariance::new(h * f, noise_var))
        .collect()
}

/// Weighted PCA: phases of the `n_rf` dominant left singular vectors of
/// `[C[1]^{1/2} W_FD[1] ... C[K]^{1/2} W_FD[K]]`, modulus `1/sqrt(N_r)`.
pub fn weighted_pca_rf_combiner(
    fd_combiners: &[CMat],
    covariances: &[SignalCovariance],
    n_rf: usize,
    resolution: PhaseResolution,
) -> Result<CMat> {
    if fd_combiners.len() != covariances.len() {
        return Err(Error::input("one covariance per subcarrier expected"));
    }
    let weighted: Vec<CMat> = fd_combiners
        .iter()
        .zip(covariances)
        .map(|(w, c)| weighted_block(w, c))
        .collect::<Result<_>>()?;
    pca_rf_precoder(&weighted, n_rf, resolution)
}

fn weighted_block(w: &CMat, c: &SignalCovariance) -> Result<CMat> {
    if c.noise_var() <= 0.0 {
        return Err(Error::input(
            "covariance is only positive semidefinite (zero noise variance)",
        ));
    }
    if c.dim() != w.nrows() {
        return Err(Error::input("covariance and combiner dimensions differ"));
    }
    Ok(c.sqrt_apply(w))
}

/// Weighted least squares `W_BB = (W_RF^H C W_RF)^{-1} W_RF^H C W_FD`.
pub fn wls_bb_combiner(
    rf_combiner: &CMat,
    covariance: &SignalCovariance,
    fd_combiner: &CMat,
) -> Result<CMat> {
    let gram = covariance.quadratic(rf_combiner);
    check_gram(&gram)?;
    let rhs = rf_combiner.adjoint() * covariance.apply(fd_combiner);
    solve_hpd(&gram, &rhs)
}

pub(crate) fn check_gram(gram: &CMat) -> Result<()> {
    let top = (0..gram.nrows())
        .map(|i| gram[(i, i)].re)
        .fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Err(Error::IllConditioned("zero weighted Gram matrix".into()));
    }
    // Cheap rank screen: the smallest Cholesky pivot relative to the diagonal.
    match gram.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let min_pivot = (0..l.nrows())
                .map(|i| l[(i, i)].re * l[(i, i)].re)
                .fold(f64::INFINITY, f64::min);
            if min_pivot <= 1e-13 * top {
                Err(Error::IllConditioned(format!(
                    "weighted Gram matrix is numerically singular (pivot {min_pivot:e})"
                )))
            } else {
                Ok(())
            }
        }
        None => Err(Error::IllConditioned(
            "weighted Gram matrix is not positive definite".into(),
        )),
    }
}

/// Full PCA/weighted-PCA hybrid transceiver for the fully-connected array.
pub fn design_fca(
    realization: &ChannelRealization,
    n_rf_tx: usize,
    n_rf_rx: usize,
    n_streams: usize,
    noise_var: f64,
    resolution: PhaseResolution,
) -> Result<HybridDesign> {
    let fd = fully_digital(realization, n_streams)?;
    design_fca_with(realization, &fd, n_rf_tx, n_rf_rx, noise_var, resolution)
}

/// [`design_fca`] reusing precomputed fully-digital precoders.
pub fn design_fca_with(
    realization: &ChannelRealization,
    fd: &FullyDigitalDesign,
    n_rf_tx: usize,
    n_rf_rx: usize,
    noise_var: f64,
    resolution: PhaseResolution,
) -> Result<HybridDesign> {
    let n_streams = fd.n_streams();
    check_stream_budget(n_streams, n_rf_tx, n_rf_rx)?;
    let channels = &realization.freq_response;
    let rf_precoder = pca_rf_precoder(&fd.precoders, n_rf_tx, resolution)?;
    let bb_precoders = bb_precoder(&rf_precoder, channels, n_streams, noise_var)?;
    let precoders: Vec<CMat> = bb_precoders.iter().map(|b| &rf_precoder * b).collect();

    let w_fd = mmse_combiners(channels, &precoders, noise_var)?;
    let covariances = received_covariances(channels, &precoders, noise_var)?;
    let rf_combiner = weighted_pca_rf_combiner(&w_fd, &covariances, n_rf_rx, resolution)?;
    let bb_combiners = w_fd
        .iter()
        .zip(&covariances)
        .map(|(w, c)| wls_bb_combiner(&rf_combiner, c, w))
        .collect::<Result<_>>()?;

    Ok(HybridDesign {
        rf_precoder,
        bb_precoders,
        rf_combiner,
        bb_combiners,
        architecture: Architecture::FullyConnected,
        quantization: resolution,
    })
}

pub(crate) fn check_stream_budget(n_streams: usize, n_rf_tx: usize, n_rf_rx: usize) -> Result<()> {
    if n_streams == 0 || n_streams > n_rf_tx.min(n_rf_rx) {
        return Err(Error::config(format!(
            "N_s = {n_streams} must satisfy 1 <= N_s <= min(N_RF_tx, N_RF_rx) = {}",
            n_rf_tx.min(n_rf_rx)
        )));
    }
    Ok(())
}

/// Sum over subcarriers of `||F_FD[k]^H F||_F^2` for an RF matrix with
/// orthonormal columns, the quantity the PCA step maximizes.
pub fn pca_objective(fd_precoders: &[CMat], rf: &CMat) -> f64 {
    fd_precoders
        .iter()
        .map(|f| fro_norm_sq(&(f.adjoint() * rf)))
        .sum()
}
