//! Partially-connected (subarray) hybrid transceivers: antenna partitions,
//! the four fixed subarray patterns, and per-subarray rank-one PCA for the
//! RF precoder and combiner.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{fully_digital, mmse_combiners, FullyDigitalDesign};
use crate::channel::{ArrayGeometry, ChannelRealization};
use crate::fca::{
    bb_precoder, check_stream_budget, received_covariances, wls_bb_combiner, Architecture,
    HybridDesign,
};
use crate::numerics::{
    fro_norm_sq, hstack, leading_left_vectors, phase_quantize, select_rows, CMat, PhaseResolution,
    SignalCovariance,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Tx,
    Rx,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Tx => "tx",
            Side::Rx => "rx",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tx" => Ok(Side::Tx),
            "rx" => Ok(Side::Rx),
            other => Err(Error::Parse(format!("unknown side {other:?}"))),
        }
    }
}

/// Disjoint cover of the antenna indices `0..n` by nonempty clusters, one
/// per RF chain.
///
/// Clusters are kept canonical: indices ascending inside each cluster,
/// clusters ordered by their smallest index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    clusters: Vec<Vec<usize>>,
    n_antennas: usize,
    side: Side,
}

impl Partition {
    pub fn new(clusters: Vec<Vec<usize>>, n_antennas: usize, side: Side) -> Result<Self> {
        let mut clusters = clusters;
        let mut seen = vec![false; n_antennas];
        for (l, c) in clusters.iter_mut().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidPartition(format!("cluster {l} is empty")));
            }
            c.sort_unstable();
            for &a in c.iter() {
                if a >= n_antennas {
                    return Err(Error::InvalidPartition(format!(
                        "antenna {a} out of range 0..{n_antennas}"
                    )));
                }
                if std::mem::replace(&mut seen[a], true) {
                    return Err(Error::InvalidPartition(format!(
                        "antenna {a} appears twice"
                    )));
                }
            }
        }
        if let Some(a) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("antenna {a} is uncovered")));
        }
        clusters.sort_by_key(|c| c[0]);
        Ok(Partition {
            clusters,
            n_antennas,
            side,
        })
    }

    /// Every antenna in a cluster of its own.
    pub fn singletons(n_antennas: usize, side: Side) -> Self {
        Partition {
            clusters: (0..n_antennas).map(|a| vec![a]).collect(),
            n_antennas,
            side,
        }
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Cluster index of every antenna.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n_antennas];
        for (l, c) in self.clusters.iter().enumerate() {
            for &a in c {
                labels[a] = l;
            }
        }
        labels
    }
}

/// One line of header, then one line per cluster:
///
/// ```text
/// tx 8 2
/// 0: 0 1 2 3
/// 1: 4 5 6 7
/// ```
impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} {}",
            self.side,
            self.n_antennas,
            self.clusters.len()
        )?;
        for (l, c) in self.clusters.iter().enumerate() {
            write!(f, "{l}:")?;
            for a in c {
                write!(f, " {a}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty partition text".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [side, n, count] = fields[..] else {
            return Err(Error::Parse(format!("bad partition header {header:?}")));
        };
        let side: Side = side.parse()?;
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
        };
        let n = parse_usize(n)?;
        let count = parse_usize(count)?;
        let mut clusters = Vec::with_capacity(count);
        for (expected, line) in lines.enumerate() {
            let (label, members) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("missing ':' in {line:?}")))?;
            if parse_usize(label.trim())? != expected {
                return Err(Error::Parse(format!(
                    "cluster labels out of order at {line:?}"
                )));
            }
            clusters.push(
                members
                    .split_whitespace()
                    .map(parse_usize)
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if clusters.len() != count {
            return Err(Error::Parse(format!(
                "header announces {count} clusters, found {}",
                clusters.len()
            )));
        }
        Partition::new(clusters, n, side)
    }
}

/// Fixed subarray layouts on a planar array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FixedPattern {
    /// Contiguous bands of columns.
    Vertical,
    /// Contiguous bands of rows.
    Horizontal,
    /// Rectangular tiles.
    Squared,
    /// Antennas striped across RF chains by `(row mod s, col mod s)`.
    Interlaced,
}

impl FixedPattern {
    pub const ALL: [FixedPattern; 4] = [
        FixedPattern::Vertical,
        FixedPattern::Horizontal,
        FixedPattern::Squared,
        FixedPattern::Interlaced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixedPattern::Vertical => "vertical",
            FixedPattern::Horizontal => "horizontal",
            FixedPattern::Squared => "squared",
            FixedPattern::Interlaced => "interlaced",
        }
    }
}

impl fmt::Display for FixedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixedPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixedPattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown subarray pattern {s:?}")))
    }
}

/// Partition of a planar array into `n_rf` equal fixed subarrays. Antenna
/// `(v, h)` has index `v * N^h + h`.
pub fn fixed_pattern(
    kind: FixedPattern,
    geometry: &ArrayGeometry,
    n_rf: usize,
    side: Side,
) -> Result<Partition> {
    geometry.validate()?;
    let nv = geometry.n_vertical;
    let nh = geometry.n_horizontal;
    let n = nv * nh;
    if n_rf == 0 || n % n_rf != 0 {
        return Err(Error::config(format!(
            "{n} antennas cannot be split into {n_rf} equal subarrays"
        )));
    }
    let size = n / n_rf;
    let label: Box<dyn Fn(usize, usize) -> usize> = match kind {
        // Column-major scan cut into equal runs: whole columns when N^v | size.
        FixedPattern::Vertical => Box::new(move |v, h| (h * nv + v) / size),
        FixedPattern::Horizontal => Box::new(move |v, h| (v * nh + h) / size),
        FixedPattern::Squared => {
            let (tv, th) = tiling(nv, nh, n_rf).ok_or_else(|| {
                Error::config(format!(
                    "a {nv}x{nh} array has no tiling into {n_rf} equal rectangles"
                ))
            })?;
            let (bv, bh) = (nv / tv, nh / th);
            Box::new(move |v, h| (v / bv) * th + h / bh)
        }
        FixedPattern::Interlaced => {
            let s = (n_rf as f64).sqrt().round() as usize;
            if s * s == n_rf {
                if nv % s != 0 || nh % s != 0 {
                    return Err(Error::config(format!(
                        "interlacing a {nv}x{nh} array with stride {s} gives unequal subarrays"
                    )));
                }
                Box::new(move |v, h| (v % s) * s + h % s)
            } else {
                Box::new(move |v, h| (v * nh + h) % n_rf)
            }
        }
    };
    let mut clusters = vec![Vec::with_capacity(size); n_rf];
    for v in 0..nv {
        for h in 0..nh {
            clusters[label(v, h)].push(v * nh + h);
        }
    }
    Partition::new(clusters, n, side)
}

/// Tile grid `(rows, cols)` with `rows * cols = n_rf` dividing the array,
/// preferring the most square tile grid.
fn tiling(nv: usize, nh: usize, n_rf: usize) -> Option<(usize, usize)> {
    (1..=n_rf)
        .filter(|tv| n_rf % tv == 0)
        .map(|tv| (tv, n_rf / tv))
        .filter(|&(tv, th)| nv % tv == 0 && nh % th == 0)
        .min_by_key(|&(tv, th)| (tv.abs_diff(th), tv))
}

fn check_partition(partition: &Partition, n: usize) -> Result<()> {
    if partition.n_antennas() != n {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} antennas, array has {n}",
            partition.n_antennas()
        )));
    }
    Ok(())
}

/// Block RF matrix from per-cluster blocks: column `l` carries the rank-one
/// PCA direction of `blocks(l)`, supported on cluster `l` with modulus
/// `1/sqrt(card(S_l))`.
fn subarray_rf(
    partition: &Partition,
    mut blocks: impl FnMut(usize, &[usize]) -> Result<CMat>,
    resolution: PhaseResolution,
) -> Result<CMat> {
    let mut rf = CMat::zeros(partition.n_antennas(), partition.n_clusters());
    for (l, cluster) in partition.clusters().iter().enumerate() {
        let stacked = blocks(l, cluster)?;
        let u = leading_left_vectors(&stacked, 1)?;
        let col = phase_quantize(&u, resolution, 1.0 / (cluster.len() as f64).sqrt())?;
        for (i, &a) in cluster.iter().enumerate() {
            rf[(a, l)] = col[(i, 0)];
        }
    }
    Ok(rf)
}

/// Rows `cluster` of every block, stacked side by side.
pub fn stacked_rows(blocks: &[CMat], cluster: &[usize]) -> Result<CMat> {
    let rows: Vec<CMat> = blocks.iter().map(|b| select_rows(b, cluster)).collect();
    hstack(&rows)
}

/// Subarray RF precoder: for each cluster `S_l`, the phases of the dominant
/// left singular vector of `[F_FD[1](S_l, :) ... F_FD[K](S_l, :)]`.
pub fn subarray_rf_precoder(
    partition: &Partition,
    fd_precoders: &[CMat],
    resolution: PhaseResolution,
) -> Result<CMat> {
    let n = fd_precoders
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .nrows();
    check_partition(partition, n)?;
    subarray_rf(
        partition,
        |_, cluster| stacked_rows(fd_precoders, cluster),
        resolution,
    )
}

/// Per-cluster covariances `E[y_T y_T^H][k]` for every cluster `T`.
pub fn cluster_covariances(
    partition: &Partition,
    covariances: &[SignalCovariance],
) -> Result<Vec<Vec<SignalCovariance>>> {
    partition
        .clusters()
        .iter()
        .map(|cluster| covariances.iter().map(|c| c.restrict(cluster)).collect())
        .collect()
}

/// Subarray RF combiner: for each cluster `T_l`, the phases of the dominant
/// left singular vector of `[C_T[1]^{1/2} W_FD[1](T_l, :) ...]` where
/// `C_T[k]` is the covariance of the cluster's received signal.
pub fn subarray_rf_combiner(
    partition: &Partition,
    fd_combiners: &[CMat],
    covariances: &[SignalCovariance],
    resolution: PhaseResolution,
) -> Result<CMat> {
    if fd_combiners.len() != covariances.len() {
        return Err(Error::input("one covariance per subcarrier expected"));
    }
    let n = fd_combiners
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .nrows();
    check_partition(partition, n)?;
    if covariances.iter().any(|c| c.noise_var() <= 0.0) {
        return Err(Error::input("covariances must be positive definite"));
    }
    subarray_rf(
        partition,
        |_, cluster| {
            let blocks: Vec<CMat> = fd_combiners
                .iter()
                .zip(covariances)
                .map(|(w, c)| Ok(c.restrict(cluster)?.sqrt_apply(&select_rows(w, cluster))))
                .collect::<Result<_>>()?;
            hstack(&blocks)
        },
        resolution,
    )
}

/// Per-cluster weighted LS baseband rows: row `l` of `W_BB[k]` (as
/// `W_BB^H` row) is `(w^H C_T w)^{-1} w^H C_T W_FD[k](T_l, :)` with `w` the
/// cluster's RF weights and `C_T` its covariance.
pub fn subarray_bb_combiner(
    partition: &Partition,
    rf_combiner: &CMat,
    fd_combiners: &[CMat],
    covariances: &[SignalCovariance],
) -> Result<Vec<CMat>> {
    let n_s = fd_combiners
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .ncols();
    let per_cluster = cluster_covariances(partition, covariances)?;
    let mut out = vec![CMat::zeros(partition.n_clusters(), n_s); fd_combiners.len()];
    for (l, cluster) in partition.clusters().iter().enumerate() {
        let w = select_rows(&rf_combiner.columns(l, 1).into_owned(), cluster);
        for (k, w_fd) in fd_combiners.iter().enumerate() {
            let row = wls_bb_combiner(&w, &per_cluster[l][k], &select_rows(w_fd, cluster))?;
            out[k].set_row(l, &row.row(0));
        }
    }
    Ok(out)
}

/// `sum_k sum_l ||C_T[k]^{1/2} (W_FD[k](T_l, :) - w_l w_BB,l[k])||_F^2`, the
/// per-cluster weighted residual the baseband rows minimize.
pub fn subarray_combiner_residual(
    partition: &Partition,
    rf_combiner: &CMat,
    bb_combiners: &[CMat],
    fd_combiners: &[CMat],
    covariances: &[SignalCovariance],
) -> Result<f64> {
    let per_cluster = cluster_covariances(partition, covariances)?;
    let mut total = 0.0;
    for (l, cluster) in partition.clusters().iter().enumerate() {
        let w = select_rows(&rf_combiner.columns(l, 1).into_owned(), cluster);
        for (k, w_fd) in fd_combiners.iter().enumerate() {
            let fit = &w * bb_combiners[k].rows(l, 1);
            let r = select_rows(w_fd, cluster) - fit;
            total += fro_norm_sq(&per_cluster[l][k].sqrt_apply(&r));
        }
    }
    Ok(total)
}

/// Subarray hybrid transceiver for given transmit and receive partitions.
///
/// The baseband combiner is the full weighted LS fit of the MMSE combiner,
/// i.e. the MMSE combiner of the effective channel behind `W_RF`.
#[allow(clippy::too_many_arguments)]
pub fn design_pcs(
    realization: &ChannelRealization,
    partition_tx: &Partition,
    partition_rx: &Partition,
    n_streams: usize,
    noise_var: f64,
    resolution: PhaseResolution,
    architecture: Architecture,
) -> Result<HybridDesign> {
    let fd = fully_digital(realization, n_streams)?;
    design_pcs_with(
        realization,
        &fd,
        partition_tx,
        partition_rx,
        noise_var,
        resolution,
        architecture,
    )
}

/// [`design_pcs`] reusing precomputed fully-digital precoders.
pub fn design_pcs_with(
    realization: &ChannelRealization,
    fd: &FullyDigitalDesign,
    partition_tx: &Partition,
    partition_rx: &Partition,
    noise_var: f64,
    resolution: PhaseResolution,
    architecture: Architecture,
) -> Result<HybridDesign> {
    let n_streams = fd.n_streams();
    check_stream_budget(
        n_streams,
        partition_tx.n_clusters(),
        partition_rx.n_clusters(),
    )?;
    check_partition(partition_rx, realization.n_r())?;
    let channels = &realization.freq_response;
    let rf_precoder = subarray_rf_precoder(partition_tx, &fd.precoders, resolution)?;
    let (bb_precoders, w_fd, covariances) =
        transmit_stage(channels, &rf_precoder, n_streams, noise_var)?;
    let rf_combiner = subarray_rf_combiner(partition_rx, &w_fd, &covariances, resolution)?;
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
        architecture,
        quantization: resolution,
    })
}

/// Baseband precoders for a fixed RF precoder, followed by the MMSE
/// combiners and received covariances they induce.
pub(crate) fn transmit_stage(
    channels: &[CMat],
    rf_precoder: &CMat,
    n_streams: usize,
    noise_var: f64,
) -> Result<(Vec<CMat>, Vec<CMat>, Vec<SignalCovariance>)> {
    let bb_precoders = bb_precoder(rf_precoder, channels, n_streams, noise_var)?;
    let precoders: Vec<CMat> = bb_precoders.iter().map(|b| rf_precoder * b).collect();
    let w_fd = mmse_combiners(channels, &precoders, noise_var)?;
    let covariances = received_covariances(channels, &precoders, noise_var)?;
    Ok((bb_precoders, w_fd, covariances))
}
