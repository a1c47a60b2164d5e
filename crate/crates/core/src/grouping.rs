//! Adaptive subarrays: antenna correlation matrices, the shared
//! agglomerative clustering that groups antennas onto RF chains, and an
//! exhaustive oracle for small arrays.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::baselines::{fully_digital, FullyDigitalDesign};
use crate::channel::{
    complex_gaussian, draw_channel, rng_from_seed, ArrayGeometry, ChannelRealization, ChannelStats,
};
use crate::fca::{check_stream_budget, wls_bb_combiner, Architecture, HybridDesign};
use crate::numerics::{
    ensure_finite, fro_norm_sq, largest_eigenvalue, principal_submatrix, CMat, PhaseResolution,
    SignalCovariance,
};
use crate::pcs::{subarray_rf_combiner, subarray_rf_precoder, transmit_stage, Partition, Side};
use crate::{Error, Result};

/// Antenna correlation `R = F F^H` of a stacked matrix `F`, with the entry
/// moduli `|R|` cached for the clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    values: CMat,
    moduli: DMatrix<f64>,
    side: Side,
}

impl CorrelationMatrix {
    pub fn new(values: CMat, side: Side) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(Error::input(
                "correlation matrix must be square and nonempty",
            ));
        }
        ensure_finite(&values, "correlation matrix")?;
        let scale = values.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
        if (&values - values.adjoint()).camax() > 1e-10 * scale {
            return Err(Error::input("correlation matrix is not Hermitian"));
        }
        let moduli = values.map(|z| z.norm());
        Ok(CorrelationMatrix {
            values,
            moduli,
            side,
        })
    }

    /// Correlation of an arbitrary stacked matrix, `R = M M^H`.
    pub fn from_stack(stack: &CMat, side: Side) -> Result<Self> {
        let r = stack * stack.adjoint();
        CorrelationMatrix::new((&r + r.adjoint()).scale(0.5), side)
    }

    pub fn values(&self) -> &CMat {
        &self.values
    }

    pub fn moduli(&self) -> &DMatrix<f64> {
        &self.moduli
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn side(&self) -> Side {
        self.side
    }
}

/// Test instance `R = G G^H` with `G` an `n x n` matrix of i.i.d. `CN(0, 1)`
/// entries drawn from `seed`.
pub fn random_correlation(n: usize, seed: u64, side: Side) -> Result<CorrelationMatrix> {
    if n == 0 {
        return Err(Error::input("need at least one antenna"));
    }
    let mut rng = rng_from_seed(seed);
    let g = CMat::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0));
    CorrelationMatrix::from_stack(&g, side)
}

/// Test instance from the channel model: `R_F` of the fully-digital
/// precoders of `draw_channel(ChannelStats::default(), g, g, seed)`, where
/// `g` is the most nearly square planar array with `n` elements.
pub fn channel_correlation(n: usize, n_streams: usize, seed: u64) -> Result<CorrelationMatrix> {
    if n == 0 {
        return Err(Error::input("need at least one antenna"));
    }
    let rows = (1..=n)
        .filter(|v| n % v == 0 && v * v <= n)
        .max()
        .unwrap_or(1);
    let geometry = ArrayGeometry::new(rows, n / rows);
    let realization = draw_channel(&ChannelStats::default(), &geometry, &geometry, seed)?;
    precoder_correlation(&fully_digital(&realization, n_streams)?.precoders)
}

/// `R_F = sum_k F_FD[k] F_FD[k]^H`, the correlation of the stacked
/// fully-digital precoders.
pub fn precoder_correlation(fd_precoders: &[CMat]) -> Result<CorrelationMatrix> {
    let n = fd_precoders
        .first()
        .ok_or_else(|| Error::input("no subcarriers"))?
        .nrows();
    let mut r = CMat::zeros(n, n);
    for f in fd_precoders {
        r += f * f.adjoint();
    }
    CorrelationMatrix::new((&r + r.adjoint()).scale(0.5), Side::Tx)
}

/// `R_W = W W^H` with `W = [C[1]^{1/2} W_FD[1] ... C[K]^{1/2} W_FD[K]]`,
/// weighted by the full-array received covariances.
pub fn combiner_correlation(
    fd_combiners: &[CMat],
    covariances: &[SignalCovariance],
) -> Result<CorrelationMatrix> {
    if fd_combiners.len() != covariances.len() || fd_combiners.is_empty() {
        return Err(Error::input("one covariance per subcarrier expected"));
    }
    let n = fd_combiners[0].nrows();
    let mut r = CMat::zeros(n, n);
    for (w, c) in fd_combiners.iter().zip(covariances) {
        let b = c.sqrt_apply(w);
        r += &b * b.adjoint();
    }
    CorrelationMatrix::new((&r + r.adjoint()).scale(0.5), Side::Rx)
}

/// Mean modulus of the cross-correlation between two disjoint clusters,
/// `g(a, b) = sum_{i in a, j in b} |R_ij| / (card(a) card(b))`.
pub fn mutual_correlation(a: &[usize], b: &[usize], corr: &CorrelationMatrix) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("clusters must be nonempty"));
    }
    let n = corr.dim();
    if a.iter().chain(b).any(|&i| i >= n) {
        return Err(Error::input("cluster index out of range"));
    }
    if a.iter().any(|i| b.contains(i)) {
        return Err(Error::input("clusters overlap"));
    }
    Ok(block_mean(corr.moduli(), a, b))
}

fn block_mean(moduli: &DMatrix<f64>, a: &[usize], b: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in a {
        for &j in b {
            s += moduli[(i, j)];
        }
    }
    s / (a.len() * b.len()) as f64
}

/// All pairwise `g` values between clusters.
fn mutual_table(moduli: &DMatrix<f64>, clusters: &[Vec<usize>]) -> DMatrix<f64> {
    let m = clusters.len();
    let n = moduli.nrows();
    // Row sums per cluster first: O(m n) instead of O(n^2) per pair.
    let mut partial = DMatrix::<f64>::zeros(m, n);
    for (a, ca) in clusters.iter().enumerate() {
        for &i in ca {
            for j in 0..n {
                partial[(a, j)] += moduli[(i, j)];
            }
        }
    }
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            return f64::NEG_INFINITY;
        }
        let s: f64 = clusters[b].iter().map(|&j| partial[(a, j)]).sum();
        s / (clusters[a].len() * clusters[b].len()) as f64
    })
}

/// First index of the maximum over `candidates` (lowest index wins ties).
fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Shared agglomerative clustering of the antennas into `n_rf` groups.
///
/// Starting from singletons, each pass scans the clusters in order. Target
/// `S_i` picks `j = argmax_{l > i} g(S_i, S_l)`; the pair merges only if
/// `S_i` is in turn the best partner of `S_j` among all other clusters.
/// All `g` values of a pass are taken on the clusters as they were at its
/// start. A pass that would leave fewer than `n_rf` clusters is discarded
/// and ends the loop. If more than `n_rf` clusters remain, the smallest ones
/// are merged, smallest first, into whichever of the `n_rf` largest has the
/// highest `g` with them.
pub fn shared_ahc(corr: &CorrelationMatrix, n_rf: usize) -> Result<Partition> {
    let n = corr.dim();
    if n_rf == 0 || n < n_rf {
        return Err(Error::config(format!(
            "cannot group {n} antennas into {n_rf} nonempty clusters"
        )));
    }
    let moduli = corr.moduli();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|a| vec![a]).collect();

    while clusters.len() > n_rf {
        let m = clusters.len();
        let g = mutual_table(moduli, &clusters);
        let mut absorbed = vec![false; m];
        let mut next = clusters.clone();
        for i in 0..m {
            if absorbed[i] {
                continue;
            }
            let Some(j) = argmax(((i + 1)..m).map(|l| (l, g[(i, l)]))) else {
                continue;
            };
            let i0 = argmax((0..m).filter(|&l| l != j).map(|l| (l, g[(j, l)])));
            if i0 == Some(i) && !absorbed[j] {
                let taken = std::mem::take(&mut next[j]);
                next[i].extend(taken);
                absorbed[j] = true;
            }
        }
        next.retain(|c| !c.is_empty());
        if next.len() < n_rf || next.len() == m {
            break;
        }
        clusters = next;
    }

    if clusters.len() > n_rf {
        // Stable sort: equal sizes keep their index order.
        clusters.sort_by_key(|c| c.len());
        let extra = clusters.len() - n_rf;
        let mut large = clusters.split_off(extra);
        for small in clusters {
            let target = argmax(
                large
                    .iter()
                    .enumerate()
                    .map(|(l, c)| (l, block_mean(moduli, &small, c))),
            )
            .expect("n_rf >= 1");
            large[target].extend(small);
        }
        clusters = large;
    }
    Partition::new(clusters, n, corr.side())
}

/// Quantity an antenna grouping maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupingObjective {
    /// `sum_l lambda_1(R_{S_l})`, the captured energy of per-cluster PCA.
    ExactLambda,
    /// `sum_l (1/card(S_l)) sum_{i,j in S_l} |R_ij|`.
    ApproxSum,
}

impl fmt::Display for GroupingObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingObjective::ExactLambda => "exact",
            GroupingObjective::ApproxSum => "approx",
        })
    }
}

impl FromStr for GroupingObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GroupingObjective::ExactLambda),
            "approx" => Ok(GroupingObjective::ApproxSum),
            other => Err(Error::Parse(format!(
                "unknown grouping objective {other:?}; expected exact or approx"
            ))),
        }
    }
}

pub fn cluster_objective(
    cluster: &[usize],
    corr: &CorrelationMatrix,
    objective: GroupingObjective,
) -> Result<f64> {
    match objective {
        GroupingObjective::ExactLambda => {
            largest_eigenvalue(&principal_submatrix(corr.values(), cluster))
        }
        GroupingObjective::ApproxSum => {
            Ok(block_mean(corr.moduli(), cluster, cluster) * cluster.len() as f64)
        }
    }
}

pub fn grouping_objective(
    partition: &Partition,
    corr: &CorrelationMatrix,
    objective: GroupingObjective,
) -> Result<f64> {
    if partition.n_antennas() != corr.dim() {
        return Err(Error::input("partition and correlation sizes differ"));
    }
    partition
        .clusters()
        .iter()
        .map(|c| cluster_objective(c, corr, objective))
        .sum()
}

/// Number of partitions of `n` items into exactly `k` nonempty blocks,
/// saturating at `u128::MAX`.
pub fn stirling2(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for i in 1..=n {
        for j in (1..=k.min(i)).rev() {
            row[j] = (j as u128)
                .saturating_mul(row[j])
                .saturating_add(row[j - 1]);
        }
        row[0] = 0;
    }
    row[k]
}

pub const EXHAUSTIVE_LIMIT: u128 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub partition: Partition,
    pub objective: f64,
    pub candidates: u128,
}

/// Best partition into exactly `n_rf` clusters by enumeration of every
/// candidate in lexicographic restricted-growth order; the first maximum
/// wins. Refuses instances with more than [`EXHAUSTIVE_LIMIT`] candidates.
pub fn exhaustive_grouping(
    corr: &CorrelationMatrix,
    n_rf: usize,
    objective: GroupingObjective,
) -> Result<ExhaustiveResult> {
    let n = corr.dim();
    if n_rf == 0 || n_rf > n {
        return Err(Error::config(format!(
            "cannot group {n} antennas into {n_rf} nonempty clusters"
        )));
    }
    let count = stirling2(n, n_rf);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }

    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut seen = 0u128;
    let mut labels = vec![0usize; n];
    let mut failure: Option<Error> = None;
    enumerate_rgs(&mut labels, 1, 1, n_rf, &mut |labels| {
        if failure.is_some() {
            return;
        }
        seen += 1;
        let mut value = 0.0;
        for cluster in clusters_of(labels, n_rf) {
            let v = match cache.get(&cluster) {
                Some(&v) => v,
                None => match cluster_objective(&cluster, corr, objective) {
                    Ok(v) => {
                        cache.insert(cluster, v);
                        v
                    }
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                },
            };
            value += v;
        }
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((labels.to_vec(), value));
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (labels, value) = best.expect("at least one candidate");
    Ok(ExhaustiveResult {
        partition: Partition::new(clusters_of(&labels, n_rf), n, corr.side())?,
        objective: value,
        candidates: seen,
    })
}

fn clusters_of(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (a, &l) in labels.iter().enumerate() {
        out[l].push(a);
    }
    out
}

/// Visits restricted growth strings (`labels[0] = 0`, each label at most one
/// above the running maximum) that use exactly `k` labels.
fn enumerate_rgs(
    labels: &mut [usize],
    pos: usize,
    used: usize,
    k: usize,
    visit: &mut dyn FnMut(&[usize]),
) {
    let n = labels.len();
    if pos == n {
        if used == k {
            visit(labels);
        }
        return;
    }
    // Not enough positions left to open the missing labels.
    if k - used > n - pos {
        return;
    }
    for l in 0..used {
        labels[pos] = l;
        enumerate_rgs(labels, pos + 1, used, k, visit);
    }
    if used < k {
        labels[pos] = used;
        enumerate_rgs(labels, pos + 1, used + 1, k, visit);
    }
}

/// Adaptive-subarray design together with the groupings it used.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDesign {
    pub design: HybridDesign,
    pub partition_tx: Partition,
    pub partition_rx: Partition,
}

/// Groups transmit antennas on `R_F`, designs the subarray precoder, then
/// groups receive antennas on `R_W` of the induced MMSE combiners and
/// designs the subarray combiner.
pub fn design_adaptive(
    realization: &ChannelRealization,
    n_rf_tx: usize,
    n_rf_rx: usize,
    n_streams: usize,
    noise_var: f64,
    resolution: PhaseResolution,
) -> Result<AdaptiveDesign> {
    let fd = fully_digital(realization, n_streams)?;
    design_adaptive_with(realization, &fd, n_rf_tx, n_rf_rx, noise_var, resolution)
}

pub fn design_adaptive_with(
    realization: &ChannelRealization,
    fd: &FullyDigitalDesign,
    n_rf_tx: usize,
    n_rf_rx: usize,
    noise_var: f64,
    resolution: PhaseResolution,
) -> Result<AdaptiveDesign> {
    let n_streams = fd.n_streams();
    check_stream_budget(n_streams, n_rf_tx, n_rf_rx)?;
    let channels = &realization.freq_response;
    let partition_tx = shared_ahc(&precoder_correlation(&fd.precoders)?, n_rf_tx)?;
    let rf_precoder = subarray_rf_precoder(&partition_tx, &fd.precoders, resolution)?;
    let (bb_precoders, w_fd, covariances) =
        transmit_stage(channels, &rf_precoder, n_streams, noise_var)?;
    let partition_rx = shared_ahc(&combiner_correlation(&w_fd, &covariances)?, n_rf_rx)?;
    let rf_combiner = subarray_rf_combiner(&partition_rx, &w_fd, &covariances, resolution)?;
    let bb_combiners = w_fd
        .iter()
        .zip(&covariances)
        .map(|(w, c)| wls_bb_combiner(&rf_combiner, c, w))
        .collect::<Result<_>>()?;
    Ok(AdaptiveDesign {
        design: HybridDesign {
            rf_precoder,
            bb_precoders,
            rf_combiner,
            bb_combiners,
            architecture: Architecture::AdaptiveSubarray,
            quantization: resolution,
        },
        partition_tx,
        partition_rx,
    })
}

/// Relative Frobenius distance `||A - B||_F / ||B||_F`.
pub fn relative_distance(a: &CMat, b: &CMat) -> f64 {
    (fro_norm_sq(&(a - b)) / fro_norm_sq(b)).sqrt()
}

/// Whether two partitions group the antennas identically, ignoring labels.
pub fn same_grouping(a: &Partition, b: &Partition) -> bool {
    a.n_antennas() == b.n_antennas() && a.clusters() == b.clusters()
}
