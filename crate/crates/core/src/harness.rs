//! Seeded experiment sweeps.
//!
//! An [`ExperimentConfig`] (TOML) fixes the arrays, channel statistics, RF
//! budget and the sweep axes. [`run_sweep`] emits one [`Row`] per
//! `(realization, scheme, Q, SNR)`, followed by the optional NCPE and
//! time-block expansions of [`robustness_sweep`]. Rows are sorted by their
//! coordinates before writing, so a fixed config always yields the same CSV
//! bytes whatever the thread count.
//!
//! # Seeds
//!
//! Realization `r` (zero-based) draws its channel from
//! `seed = base_seed + r` (wrapping); this is the `seed` column. Every other
//! random stream of a row is [`derive_seed`] of that seed:
//!
//! * BER symbols and noise: `derive_seed(seed, &[TAG_BER, snr_db.to_bits()])`,
//!   shared by all schemes and resolutions of the realization;
//! * CSI perturbation: `derive_seed(seed, &[TAG_NCPE])`, shared by every NCPE
//!   target so the error direction is common and only its scale changes;
//! * symbol `t >= 1` of a time block: `derive_seed(seed, &[TAG_BLOCK, t])`,
//!   and its BER stream `derive_seed(seed, &[TAG_BER, snr_db.to_bits(), t])`.
//!
//! Any single row can therefore be recomputed from `base_seed` and its
//! coordinates alone.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    covariance_evd_design, fully_digital, fully_digital_design, somp_design, Dictionaries,
    FullyDigitalDesign,
};
use crate::channel::{
    draw_channel, evolve_block, perturb, ArrayGeometry, ChannelRealization, ChannelStats,
};
use crate::fca::{design_fca_with, Architecture, HybridDesign};
use crate::grouping::design_adaptive_with;
use crate::metrics::{
    ber_16qam_on, energy_efficiency, power_consumption, spectral_efficiency_on, AntennaType,
    BerEstimate, PowerModel,
};
use crate::numerics::{CMat, PhaseResolution};
use crate::pcs::{design_pcs_with, fixed_pattern, FixedPattern, Side};
use crate::{Error, Result};

pub const TAG_BER: u64 = 1;
pub const TAG_NCPE: u64 = 2;
pub const TAG_BLOCK: u64 = 3;

/// Output columns, in order.
pub const CSV_COLUMNS: [&str; 19] = [
    "seed",
    "scheme",
    "architecture",
    "Q",
    "snr_db",
    "k_subcarriers",
    "n_t",
    "n_r",
    "n_rf_tx",
    "n_rf_rx",
    "n_s",
    "se_bpshz",
    "power_w_passive",
    "power_w_active",
    "ee_passive",
    "ee_active",
    "ber",
    "ncpe",
    "wall_ms",
];

/// Scheme labels of the two time-block robustness variants.
pub const ROBUSTNESS_INSTANTANEOUS: &str = "as/instantaneous";
pub const ROBUSTNESS_BLOCK: &str = "as/block";

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64` chained over `path`, starting from `parent`.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |h, &c| splitmix64(h ^ c))
}

/// Channel seed of realization `r`.
pub fn realization_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add(r as u64)
}

/// A precoder/combiner scheme that the sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    FullyDigital,
    PcaFca,
    CovEvd,
    Somp,
    DftCodebook,
    Fixed(FixedPattern),
    Adaptive,
}

impl Scheme {
    pub fn all() -> Vec<Scheme> {
        let mut out = vec![
            Scheme::FullyDigital,
            Scheme::PcaFca,
            Scheme::CovEvd,
            Scheme::Somp,
            Scheme::DftCodebook,
        ];
        out.extend(FixedPattern::ALL.into_iter().map(Scheme::Fixed));
        out.push(Scheme::Adaptive);
        out
    }

    pub fn valid_names() -> Vec<String> {
        Scheme::all().iter().map(|s| s.to_string()).collect()
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Scheme::FullyDigital => Architecture::FullyDigital,
            Scheme::PcaFca | Scheme::CovEvd | Scheme::Somp | Scheme::DftCodebook => {
                Architecture::FullyConnected
            }
            Scheme::Fixed(_) => Architecture::FixedSubarray,
            Scheme::Adaptive => Architecture::AdaptiveSubarray,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::FullyDigital => f.write_str("fully-digital"),
            Scheme::PcaFca => f.write_str("pca-fca"),
            Scheme::CovEvd => f.write_str("cov-evd"),
            Scheme::Somp => f.write_str("somp"),
            Scheme::DftCodebook => f.write_str("dft-codebook"),
            Scheme::Fixed(p) => write!(f, "fs:{p}"),
            Scheme::Adaptive => f.write_str("as"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::all()
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown scheme {s:?}; valid schemes: {}",
                    Scheme::valid_names().join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Se,
    Ee,
    Ber,
    NcpeSweep,
    Robustness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub n_vertical: usize,
    pub n_horizontal: usize,
    pub spacing_over_wavelength: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_vertical: 8,
            n_horizontal: 8,
            spacing_over_wavelength: 0.5,
        }
    }
}

impl ArrayConfig {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            n_vertical: self.n_vertical,
            n_horizontal: self.n_horizontal,
            spacing_over_wavelength: self.spacing_over_wavelength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub n_clusters: usize,
    pub n_rays: usize,
    pub angle_spread_deg: f64,
    pub n_subcarriers: usize,
    pub n_taps: usize,
    pub bandwidth_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_clusters: 8,
            n_rays: 10,
            angle_spread_deg: 7.5,
            n_subcarriers: 64,
            n_taps: 16,
            bandwidth_hz: 500e6,
        }
    }
}

impl ChannelConfig {
    pub fn stats(&self) -> ChannelStats {
        ChannelStats {
            n_clusters: self.n_clusters,
            n_rays: self.n_rays,
            angle_spread: self.angle_spread_deg.to_radians(),
            n_subcarriers: self.n_subcarriers,
            n_taps: self.n_taps,
            symbol_period: 1.0 / self.bandwidth_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub tx: usize,
    pub rx: usize,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig { tx: 4, rx: 4 }
    }
}

/// Sweep description. Every section and key is optional; missing ones take
/// the desk-scale defaults, unknown ones are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_realizations: usize,
    pub base_seed: u64,
    pub n_streams: usize,
    pub schemes: Vec<String>,
    pub snr_grid_db: Vec<f64>,
    /// Phase-shifter bits; an integer or `"inf"`.
    #[serde(with = "quantization_list")]
    pub quantization: Vec<PhaseResolution>,
    pub metrics: Vec<Metric>,
    /// Target NCPE values of the `ncpe-sweep` expansion.
    pub ncpe_grid: Vec<f64>,
    /// OFDM symbols per time block in the `robustness` expansion.
    pub block_length: usize,
    /// 16-QAM symbol vectors per subcarrier for each BER estimate.
    pub ber_symbols: usize,
    /// Record wall-clock milliseconds per row. Breaks byte-determinism.
    pub timing: bool,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
    pub channel: ChannelConfig,
    pub rf: RfConfig,
    pub power: PowerModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_realizations: 50,
            base_seed: 1,
            n_streams: 3,
            schemes: [
                "fully-digital",
                "pca-fca",
                "cov-evd",
                "somp",
                "fs:squared",
                "as",
            ]
            .map(String::from)
            .to_vec(),
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            quantization: vec![PhaseResolution::Bits(3)],
            metrics: vec![Metric::Se, Metric::Ee, Metric::Ber],
            ncpe_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            block_length: 10,
            ber_symbols: 64,
            timing: false,
            tx: ArrayConfig::default(),
            rx: ArrayConfig::default(),
            channel: ChannelConfig::default(),
            rf: RfConfig::default(),
            power: PowerModel::default(),
        }
    }
}

mod quantization_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numerics::PhaseResolution;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Bits(u32),
        Name(String),
    }

    pub fn serialize<S: Serializer>(v: &[PhaseResolution], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|q| match q {
                PhaseResolution::Bits(b) => Entry::Bits(*b),
                PhaseResolution::Unquantized => Entry::Name(q.to_string()),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<PhaseResolution>, D::Error> {
        Vec::<Entry>::deserialize(d)?
            .into_iter()
            .map(|e| {
                let text = match e {
                    Entry::Bits(b) => b.to_string(),
                    Entry::Name(n) => n,
                };
                text.parse().map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub fn parsed_schemes(&self) -> Result<Vec<Scheme>> {
        self.schemes.iter().map(|s| s.parse()).collect()
    }

    pub fn has_metric(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    /// Keeps only the schemes named in a `scheme=a,b` filter.
    pub fn apply_filter(&mut self, filter: &str) -> Result<()> {
        let (key, value) = filter
            .split_once('=')
            .ok_or_else(|| Error::config(format!("filter {filter:?} is not key=value")))?;
        if key.trim() != "scheme" {
            return Err(Error::config(format!(
                "unsupported filter key {:?}; supported: scheme",
                key.trim()
            )));
        }
        let wanted: Vec<Scheme> = value
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?;
        let current = self.parsed_schemes()?;
        self.schemes = current
            .into_iter()
            .filter(|s| wanted.contains(s))
            .map(|s| s.to_string())
            .collect();
        if self.schemes.is_empty() {
            return Err(Error::config(format!(
                "filter {filter:?} leaves no scheme to run"
            )));
        }
        Ok(())
    }

    /// Rows a sweep of this config produces.
    pub fn expected_rows(&self) -> usize {
        let per_real = self.snr_grid_db.len() * self.quantization.len();
        let mut n = self.schemes.len() * per_real;
        if self.has_metric(Metric::NcpeSweep) {
            n += self.schemes.len() * per_real * self.ncpe_grid.len();
        }
        if self.has_metric(Metric::Robustness) {
            n += 2 * per_real;
        }
        n * self.n_realizations
    }

    fn plan(&self) -> Result<Plan> {
        let schemes = self.parsed_schemes()?;
        if schemes.is_empty() {
            return Err(Error::config(format!(
                "no schemes given; valid schemes: {}",
                Scheme::valid_names().join(", ")
            )));
        }
        for (i, s) in schemes.iter().enumerate() {
            if schemes[..i].contains(s) {
                return Err(Error::config(format!("scheme {s} listed twice")));
            }
        }
        if self.n_realizations == 0 {
            return Err(Error::config("n_realizations must be at least 1"));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config(
                "snr_grid_db must be a non-empty list of finite values",
            ));
        }
        if self.quantization.is_empty() {
            return Err(Error::config(
                "quantization must list at least one resolution",
            ));
        }
        if self.n_streams == 0 || self.n_streams > self.rf.tx.min(self.rf.rx) {
            return Err(Error::config(format!(
                "need 1 <= n_streams <= min(rf.tx, rf.rx), got n_streams = {} with rf {}/{}",
                self.n_streams, self.rf.tx, self.rf.rx
            )));
        }
        if self.has_metric(Metric::NcpeSweep)
            && (self.ncpe_grid.is_empty()
                || self.ncpe_grid.iter().any(|x| !x.is_finite() || *x < 0.0))
        {
            return Err(Error::config(
                "ncpe_grid must list finite non-negative targets",
            ));
        }
        if self.has_metric(Metric::Robustness) && self.block_length == 0 {
            return Err(Error::config("block_length must be at least 1"));
        }
        if self.has_metric(Metric::Ber) && self.ber_symbols == 0 {
            return Err(Error::config("ber_symbols must be at least 1"));
        }
        if !(self.channel.bandwidth_hz > 0.0) || !self.channel.bandwidth_hz.is_finite() {
            return Err(Error::config("bandwidth_hz must be positive"));
        }
        let geometry_tx = self.tx.geometry();
        let geometry_rx = self.rx.geometry();
        geometry_tx.validate()?;
        geometry_rx.validate()?;
        let n_t = geometry_tx.n_antennas();
        let n_r = geometry_rx.n_antennas();
        if self.rf.tx > n_t || self.rf.rx > n_r {
            return Err(Error::config("more RF chains than antennas"));
        }
        let stats = self.channel.stats();
        stats.validate()?;
        self.power.validate()?;
        Ok(Plan {
            cfg: self.clone(),
            schemes,
            stats,
            geometry_tx,
            geometry_rx,
        })
    }
}

/// Validated config with parsed fields.
struct Plan {
    cfg: ExperimentConfig,
    schemes: Vec<Scheme>,
    stats: ChannelStats,
    geometry_tx: ArrayGeometry,
    geometry_rx: ArrayGeometry,
}

impl Plan {
    fn wants_se(&self) -> bool {
        self.cfg.has_metric(Metric::Se) || self.cfg.has_metric(Metric::Ee)
    }
}

/// One line of the output table. Metric fields are `None` when not
/// requested or when the row failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub seed: u64,
    pub scheme: String,
    pub architecture: String,
    pub quantization: PhaseResolution,
    pub snr_db: f64,
    pub k_subcarriers: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub n_rf_tx: usize,
    pub n_rf_rx: usize,
    pub n_s: usize,
    pub se_bpshz: Option<f64>,
    pub power_w_passive: Option<f64>,
    pub power_w_active: Option<f64>,
    pub ee_passive: Option<f64>,
    pub ee_active: Option<f64>,
    pub ber: Option<f64>,
    pub ncpe: f64,
    pub wall_ms: f64,
}

impl Row {
    fn fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.seed.to_string(),
            self.scheme.clone(),
            self.architecture.clone(),
            self.quantization.to_string(),
            self.snr_db.to_string(),
            self.k_subcarriers.to_string(),
            self.n_t.to_string(),
            self.n_r.to_string(),
            self.n_rf_tx.to_string(),
            self.n_rf_rx.to_string(),
            self.n_s.to_string(),
            opt(self.se_bpshz),
            opt(self.power_w_passive),
            opt(self.power_w_active),
            opt(self.ee_passive),
            opt(self.ee_active),
            opt(self.ber),
            self.ncpe.to_string(),
            self.wall_ms.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord, line: u64) -> Result<Row> {
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize, e: &dyn fmt::Display| {
            Error::Parse(format!("line {line}, column {}: {e}", CSV_COLUMNS[i]))
        };
        let num = |i: usize| -> Result<f64> { field(i).parse::<f64>().map_err(|e| bad(i, &e)) };
        let int = |i: usize| -> Result<usize> { field(i).parse::<usize>().map_err(|e| bad(i, &e)) };
        let opt = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        if rec.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse(format!(
                "line {line}: expected {} fields, found {}",
                CSV_COLUMNS.len(),
                rec.len()
            )));
        }
        Ok(Row {
            seed: field(0).parse().map_err(|e| bad(0, &e))?,
            scheme: field(1).to_string(),
            architecture: field(2).to_string(),
            quantization: field(3).parse().map_err(|e: Error| bad(3, &e))?,
            snr_db: num(4)?,
            k_subcarriers: int(5)?,
            n_t: int(6)?,
            n_r: int(7)?,
            n_rf_tx: int(8)?,
            n_rf_rx: int(9)?,
            n_s: int(10)?,
            se_bpshz: opt(11)?,
            power_w_passive: opt(12)?,
            power_w_active: opt(13)?,
            ee_passive: opt(14)?,
            ee_active: opt(15)?,
            ber: opt(16)?,
            ncpe: num(17)?,
            wall_ms: num(18)?,
        })
    }
}

/// A row whose design or evaluation failed; the row itself is kept with
/// empty metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub seed: u64,
    pub scheme: String,
    pub quantization: PhaseResolution,
    pub snr_db: f64,
    pub ncpe: f64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed {} scheme {} Q {} snr {} dB ncpe {}: {}",
            self.seed, self.scheme, self.quantization, self.snr_db, self.ncpe, self.message
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<Row>,
    pub errors: Vec<RowError>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` or `Some(1)` runs sequentially.
    pub threads: Option<usize>,
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a sweep CSV, insisting on the exact column set and order.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != CSV_COLUMNS.len() {
        return Err(Error::Parse(format!(
            "expected {} columns, found {}",
            CSV_COLUMNS.len(),
            header.len()
        )));
    }
    for (i, (got, want)) in header.iter().zip(CSV_COLUMNS).enumerate() {
        if got != want {
            return Err(Error::Parse(format!(
                "column {} should be {want:?}, found {got:?}",
                i + 1
            )));
        }
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| Row::from_record(&rec?, i as u64 + 2))
        .collect()
}

/// Sort key: realization, scheme slot, Q slot, SNR slot, NCPE slot.
type Key = (usize, usize, usize, usize, usize);

struct Cell {
    key: Key,
    row: Row,
    error: Option<RowError>,
}

/// Clean rows for every coordinate plus whatever expansions the metrics ask
/// for.
pub fn run_sweep(config: &ExperimentConfig, options: RunOptions) -> Result<SweepResult> {
    sweep(config, options, true)
}

/// Only the `ncpe-sweep` and `robustness` expansions.
pub fn robustness_sweep(config: &ExperimentConfig, options: RunOptions) -> Result<SweepResult> {
    if !config.has_metric(Metric::NcpeSweep) && !config.has_metric(Metric::Robustness) {
        return Err(Error::config(
            "robustness_sweep needs ncpe-sweep or robustness among the metrics",
        ));
    }
    sweep(config, options, false)
}

fn sweep(config: &ExperimentConfig, options: RunOptions, clean: bool) -> Result<SweepResult> {
    let plan = config.plan()?;
    let n = plan.cfg.n_realizations;
    let work = |r: usize| realization_cells(&plan, r, clean);
    let per_real: Vec<Vec<Cell>> = match options.threads {
        Some(t) if t > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| (0..n).into_par_iter().map(work).collect()),
        Some(0) => return Err(Error::config("thread count must be at least 1")),
        _ => (0..n).map(work).collect(),
    };
    let mut cells: Vec<Cell> = per_real.into_iter().flatten().collect();
    cells.sort_by_key(|c| c.key);
    let mut out = SweepResult::default();
    for c in cells {
        if let Some(e) = c.error {
            log::warn!("{e}");
            out.errors.push(e);
        }
        out.rows.push(c.row);
    }
    Ok(out)
}

fn noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn ber_seed(seed: u64, snr_db: f64, symbol: Option<u64>) -> u64 {
    match symbol {
        None => derive_seed(seed, &[TAG_BER, snr_db.to_bits()]),
        Some(t) => derive_seed(seed, &[TAG_BER, snr_db.to_bits(), t]),
    }
}

fn design_for(
    plan: &Plan,
    scheme: Scheme,
    csi: &ChannelRealization,
    fd: &FullyDigitalDesign,
    nv: f64,
    q: PhaseResolution,
) -> Result<HybridDesign> {
    let (rt, rr) = (plan.cfg.rf.tx, plan.cfg.rf.rx);
    match scheme {
        Scheme::FullyDigital => fully_digital_design(csi, fd, nv),
        Scheme::PcaFca => design_fca_with(csi, fd, rt, rr, nv, q),
        Scheme::CovEvd => covariance_evd_design(csi, rt, rr, fd.n_streams(), nv, q),
        Scheme::Somp => somp_design(csi, fd, &Dictionaries::from_paths(csi)?, rt, rr, nv, q),
        Scheme::DftCodebook => somp_design(csi, fd, &Dictionaries::dft(csi), rt, rr, nv, q),
        Scheme::Fixed(kind) => {
            let ptx = fixed_pattern(kind, &plan.geometry_tx, rt, Side::Tx)?;
            let prx = fixed_pattern(kind, &plan.geometry_rx, rr, Side::Rx)?;
            design_pcs_with(csi, fd, &ptx, &prx, nv, q, Architecture::FixedSubarray)
        }
        Scheme::Adaptive => Ok(design_adaptive_with(csi, fd, rt, rr, nv, q)?.design),
    }
}

/// Metrics gathered for one row before the power bookkeeping.
struct Measured {
    se: Option<f64>,
    ber: Option<BerEstimate>,
}

fn measure(
    plan: &Plan,
    truth: &[CMat],
    design: &HybridDesign,
    nv: f64,
    ber_seed: u64,
) -> Result<Measured> {
    let se = if plan.wants_se() {
        Some(spectral_efficiency_on(truth, design, nv)?)
    } else {
        None
    };
    let ber = if plan.cfg.has_metric(Metric::Ber) {
        Some(ber_16qam_on(
            truth,
            design,
            nv,
            plan.cfg.ber_symbols,
            ber_seed,
        )?)
    } else {
        None
    };
    Ok(Measured { se, ber })
}

fn blank_row(
    plan: &Plan,
    seed: u64,
    label: String,
    arch: Architecture,
    q: PhaseResolution,
    snr_db: f64,
    ncpe: f64,
) -> Row {
    let cfg = &plan.cfg;
    Row {
        seed,
        scheme: label,
        architecture: arch.label().to_string(),
        quantization: q,
        snr_db,
        k_subcarriers: plan.stats.n_subcarriers,
        n_t: plan.geometry_tx.n_antennas(),
        n_r: plan.geometry_rx.n_antennas(),
        n_rf_tx: cfg.rf.tx,
        n_rf_rx: cfg.rf.rx,
        n_s: cfg.n_streams,
        se_bpshz: None,
        power_w_passive: None,
        power_w_active: None,
        ee_passive: None,
        ee_active: None,
        ber: None,
        ncpe,
        wall_ms: 0.0,
    }
}

fn fill_row(plan: &Plan, row: &mut Row, arch: Architecture, m: &Measured) -> Result<()> {
    let cfg = &plan.cfg;
    let power = |antenna| {
        power_consumption(
            arch.into(),
            antenna,
            row.n_t,
            row.n_r,
            cfg.rf.tx,
            cfg.rf.rx,
            &cfg.power,
        )
    };
    let (pp, pa) = (power(AntennaType::Passive), power(AntennaType::Active));
    row.power_w_passive = Some(pp);
    row.power_w_active = Some(pa);
    if cfg.has_metric(Metric::Se) {
        row.se_bpshz = m.se;
    }
    if cfg.has_metric(Metric::Ee) {
        let se = m.se.expect("se is computed whenever ee is requested");
        let bw = cfg.channel.bandwidth_hz;
        row.ee_passive = Some(energy_efficiency(se, bw, pp)?);
        row.ee_active = Some(energy_efficiency(se, bw, pa)?);
    }
    row.ber = m.ber.map(|b| b.rate());
    Ok(())
}

fn realization_cells(plan: &Plan, r: usize, clean: bool) -> Vec<Cell> {
    let cfg = &plan.cfg;
    let seed = realization_seed(cfg.base_seed, r);
    let mut cells = Vec::new();
    let truth = draw_channel(&plan.stats, &plan.geometry_tx, &plan.geometry_rx, seed);
    let n_schemes = plan.schemes.len();

    // Runs one design/evaluation and records it under `key`.
    let mut record =
        |key: Key, mut row: Row, arch: Architecture, f: &mut dyn FnMut() -> Result<Measured>| {
            let start = Instant::now();
            let outcome = f().and_then(|m| fill_row(plan, &mut row, arch, &m));
            if cfg.timing {
                row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            }
            let error = outcome.err().map(|e| {
                row.se_bpshz = None;
                row.power_w_passive = None;
                row.power_w_active = None;
                row.ee_passive = None;
                row.ee_active = None;
                row.ber = None;
                RowError {
                    seed,
                    scheme: row.scheme.clone(),
                    quantization: row.quantization,
                    snr_db: row.snr_db,
                    ncpe: row.ncpe,
                    message: e.to_string(),
                }
            });
            cells.push(Cell { key, row, error });
        };

    let truth_fd = truth
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|t| fully_digital(t, cfg.n_streams).map_err(|e| e.to_string()));
    let with_truth =
        |f: &dyn Fn(&ChannelRealization, &FullyDigitalDesign) -> Result<Measured>| match (
            &truth, &truth_fd,
        ) {
            (Ok(t), Ok(fd)) => f(t, fd),
            (Err(e), _) => Err(Error::input(format!("channel draw failed: {e}"))),
            (_, Err(e)) => Err(Error::input(format!("fully-digital design failed: {e}"))),
        };

    // Imperfect CSI per NCPE target, shared by every scheme, Q and SNR.
    let perturbed: Vec<
        std::result::Result<Option<(ChannelRealization, FullyDigitalDesign)>, String>,
    > = if cfg.has_metric(Metric::NcpeSweep) {
        cfg.ncpe_grid
            .iter()
            .map(|&target| match &truth {
                Ok(t) if target > 0.0 => perturb(t, target, derive_seed(seed, &[TAG_NCPE]))
                    .and_then(|csi| {
                        let fd = fully_digital(&csi, cfg.n_streams)?;
                        Ok(Some((csi, fd)))
                    })
                    .map_err(|e| e.to_string()),
                _ => Ok(None),
            })
            .collect()
    } else {
        Vec::new()
    };

    for (qi, &q) in cfg.quantization.iter().enumerate() {
        for (si, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
            let nv = noise_var(snr_db);
            let bseed = ber_seed(seed, snr_db, None);
            for (ci, &scheme) in plan.schemes.iter().enumerate() {
                let arch = scheme.architecture();
                if clean {
                    let row = blank_row(plan, seed, scheme.to_string(), arch, q, snr_db, 0.0);
                    record((r, ci, qi, si, 0), row, arch, &mut || {
                        with_truth(&|t, fd| {
                            let d = design_for(plan, scheme, t, fd, nv, q)?;
                            measure(plan, &t.freq_response, &d, nv, bseed)
                        })
                    });
                }
                if cfg.has_metric(Metric::NcpeSweep) {
                    for (ni, &target) in cfg.ncpe_grid.iter().enumerate() {
                        let row =
                            blank_row(plan, seed, scheme.to_string(), arch, q, snr_db, target);
                        record((r, ci, qi, si, ni + 1), row, arch, &mut || {
                            with_truth(&|t, fd| {
                                let d = match &perturbed[ni] {
                                    Ok(None) => design_for(plan, scheme, t, fd, nv, q)?,
                                    Ok(Some((csi, fd_csi))) => {
                                        design_for(plan, scheme, csi, fd_csi, nv, q)?
                                    }
                                    Err(e) => {
                                        return Err(Error::input(format!(
                                            "perturbed CSI failed: {e}"
                                        )))
                                    }
                                };
                                measure(plan, &t.freq_response, &d, nv, bseed)
                            })
                        });
                    }
                }
            }
        }
    }

    if cfg.has_metric(Metric::Robustness) {
        let block = truth.as_ref().map_err(|e| e.to_string()).and_then(|t| {
            time_block(t, seed, cfg.block_length, cfg.n_streams).map_err(|e| e.to_string())
        });
        let arch = Architecture::AdaptiveSubarray;
        for (qi, &q) in cfg.quantization.iter().enumerate() {
            for (si, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
                let nv = noise_var(snr_db);
                for (vi, label) in [ROBUSTNESS_INSTANTANEOUS, ROBUSTNESS_BLOCK]
                    .iter()
                    .enumerate()
                {
                    let row = blank_row(plan, seed, label.to_string(), arch, q, snr_db, 0.0);
                    let regroup = vi == 0;
                    record(
                        (r, n_schemes + vi, qi, si, 0),
                        row,
                        arch,
                        &mut || match &block {
                            Ok(b) => block_metrics(plan, b, seed, nv, snr_db, q, regroup),
                            Err(e) => Err(Error::input(format!("time block failed: {e}"))),
                        },
                    );
                }
            }
        }
    }
    cells
}

/// Symbols of one time block with their fully-digital designs. Symbol 0 is
/// the realization itself.
fn time_block(
    first: &ChannelRealization,
    seed: u64,
    length: usize,
    n_streams: usize,
) -> Result<Vec<(ChannelRealization, FullyDigitalDesign)>> {
    (0..length)
        .map(|t| {
            let sym = if t == 0 {
                first.clone()
            } else {
                evolve_block(first, derive_seed(seed, &[TAG_BLOCK, t as u64]))?
            };
            let fd = fully_digital(&sym, n_streams)?;
            Ok((sym, fd))
        })
        .collect()
}

/// Adaptive subarrays over a time block: either regrouped on every symbol or
/// grouped once on symbol 0. SE is averaged and BER pooled over the block.
fn block_metrics(
    plan: &Plan,
    block: &[(ChannelRealization, FullyDigitalDesign)],
    seed: u64,
    nv: f64,
    snr_db: f64,
    q: PhaseResolution,
    regroup: bool,
) -> Result<Measured> {
    let (rt, rr) = (plan.cfg.rf.tx, plan.cfg.rf.rx);
    let (first, first_fd) = &block[0];
    let grouped = design_adaptive_with(first, first_fd, rt, rr, nv, q)?;
    let mut se_sum = 0.0;
    let mut ber = BerEstimate {
        bit_errors: 0,
        bits: 0,
    };
    for (t, (sym, fd)) in block.iter().enumerate() {
        let design = if t == 0 {
            grouped.design.clone()
        } else if regroup {
            design_adaptive_with(sym, fd, rt, rr, nv, q)?.design
        } else {
            design_pcs_with(
                sym,
                fd,
                &grouped.partition_tx,
                &grouped.partition_rx,
                nv,
                q,
                Architecture::AdaptiveSubarray,
            )?
        };
        let m = measure(
            plan,
            &sym.freq_response,
            &design,
            nv,
            ber_seed(seed, snr_db, Some(t as u64)),
        )?;
        se_sum += m.se.unwrap_or(0.0);
        if let Some(b) = m.ber {
            ber.bit_errors += b.bit_errors;
            ber.bits += b.bits;
        }
    }
    Ok(Measured {
        se: plan.wants_se().then(|| se_sum / block.len() as f64),
        ber: plan.cfg.has_metric(Metric::Ber).then_some(ber),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_realizations: 2,
            schemes: vec!["fully-digital".into(), "pca-fca".into()],
            snr_grid_db: vec![0.0, 10.0],
            metrics: vec![Metric::Se, Metric::Ee],
            tx: ArrayConfig {
                n_vertical: 4,
                n_horizontal: 4,
                ..ArrayConfig::default()
            },
            rx: ArrayConfig {
                n_vertical: 4,
                n_horizontal: 4,
                ..ArrayConfig::default()
            },
            channel: ChannelConfig {
                n_clusters: 3,
                n_rays: 2,
                n_subcarriers: 8,
                n_taps: 4,
                ..ChannelConfig::default()
            },
            rf: RfConfig { tx: 2, rx: 2 },
            n_streams: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn quantization_accepts_integers_and_inf() {
        let cfg = ExperimentConfig::from_toml_str(r#"quantization = [1, 3, "inf"]"#).unwrap();
        assert_eq!(
            cfg.quantization,
            vec![
                PhaseResolution::Bits(1),
                PhaseResolution::Bits(3),
                PhaseResolution::Unquantized
            ]
        );
        assert!(ExperimentConfig::from_toml_str("quantization = [0]").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("n_realisations = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[channel]\nclusters = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[power]\np_foo = 1.0").is_err());
    }

    #[test]
    fn unknown_scheme_lists_valid_names() {
        let err = ExperimentConfig::from_toml_str(r#"schemes = ["pca"]"#).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let msg = err.to_string();
        for name in Scheme::valid_names() {
            assert!(msg.contains(&name), "{msg} misses {name}");
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::all() {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn derive_seed_separates_paths() {
        assert_ne!(derive_seed(7, &[1]), derive_seed(7, &[2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
    }

    #[test]
    fn single_row_config() {
        let cfg = ExperimentConfig {
            n_realizations: 1,
            schemes: vec!["fully-digital".into()],
            snr_grid_db: vec![5.0],
            ..tiny()
        };
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert!(out.errors.is_empty());
        let row = &out.rows[0];
        assert_eq!(row.scheme, "fully-digital");
        assert_eq!(row.architecture, "fda");
        assert!(row.se_bpshz.unwrap() > 0.0);
        assert_eq!(row.ber, None);
        assert_eq!(row.wall_ms, 0.0);
    }

    #[test]
    fn row_count_and_order() {
        let cfg = ExperimentConfig {
            quantization: vec![PhaseResolution::Bits(1), PhaseResolution::Unquantized],
            ..tiny()
        };
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), cfg.expected_rows());
        assert_eq!(out.rows.len(), 2 * 2 * 2 * 2);
        assert_eq!(out.rows[0].seed, cfg.base_seed);
        assert_eq!(out.rows.last().unwrap().seed, cfg.base_seed + 1);
        assert_eq!(out.rows[0].scheme, "fully-digital");
        assert_eq!(out.rows[0].snr_db, 0.0);
        assert_eq!(out.rows[1].snr_db, 10.0);
    }

    #[test]
    fn csv_is_byte_identical_across_runs_and_threads() {
        let cfg = tiny();
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_sweep(&cfg, RunOptions::default())
            .unwrap()
            .write_csv(&mut a)
            .unwrap();
        run_sweep(&cfg, RunOptions { threads: Some(2) })
            .unwrap()
            .write_csv(&mut b)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = ExperimentConfig {
            metrics: vec![Metric::Se],
            ..tiny()
        };
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with(&CSV_COLUMNS.join(",")));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), out.rows);
    }

    #[test]
    fn read_rows_names_the_bad_column() {
        let mut text = CSV_COLUMNS.join(",").replace("snr_db", "snr");
        text.push('\n');
        let err = read_rows(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("snr_db"), "{err}");
    }

    #[test]
    fn infeasible_pattern_gives_error_row_and_run_continues() {
        // 16 antennas cannot be split into 3 equal subarrays.
        let cfg = ExperimentConfig {
            n_realizations: 1,
            schemes: vec!["fs:vertical".into(), "pca-fca".into()],
            snr_grid_db: vec![0.0],
            rf: RfConfig { tx: 3, rx: 3 },
            ..tiny()
        };
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].scheme, "fs:vertical");
        let bad = &out.rows[0];
        assert_eq!(bad.se_bpshz, None);
        assert_eq!(bad.power_w_passive, None);
        assert!(out.rows[1].se_bpshz.is_some());
    }

    #[test]
    fn ncpe_zero_row_matches_clean_row() {
        let cfg = ExperimentConfig {
            n_realizations: 1,
            metrics: vec![Metric::Se, Metric::Ber, Metric::NcpeSweep],
            ber_symbols: 4,
            ncpe_grid: vec![0.0, 0.3],
            ..tiny()
        };
        let out = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.rows.len(), cfg.expected_rows());
        let clean: Vec<&Row> = out.rows.iter().filter(|r| r.ncpe == 0.0).collect();
        assert_eq!(clean.len() % 2, 0);
        for pair in clean.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        assert!(out.rows.iter().any(|r| r.ncpe == 0.3));
    }

    #[test]
    fn robustness_rows_are_labelled() {
        let cfg = ExperimentConfig {
            n_realizations: 1,
            schemes: vec!["as".into()],
            snr_grid_db: vec![10.0],
            metrics: vec![Metric::Se, Metric::Robustness],
            block_length: 3,
            ..tiny()
        };
        let only = robustness_sweep(&cfg, RunOptions::default()).unwrap();
        let names: Vec<&str> = only.rows.iter().map(|r| r.scheme.as_str()).collect();
        assert_eq!(names, vec![ROBUSTNESS_INSTANTANEOUS, ROBUSTNESS_BLOCK]);
        let all = run_sweep(&cfg, RunOptions::default()).unwrap();
        assert_eq!(all.rows.len(), cfg.expected_rows());
        assert_eq!(all.rows.len(), 3);
        for r in &only.rows {
            assert_eq!(r.architecture, "as");
            assert!(r.se_bpshz.unwrap() > 0.0);
        }
    }

    #[test]
    fn filter_keeps_named_schemes() {
        let mut cfg = tiny();
        cfg.apply_filter("scheme=pca-fca").unwrap();
        assert_eq!(cfg.schemes, vec!["pca-fca".to_string()]);
        assert!(tiny().apply_filter("scheme=as").is_err());
        assert!(tiny().apply_filter("q=3").is_err());
        assert!(tiny().apply_filter("scheme=nope").is_err());
    }

    #[test]
    fn validation_rejects_bad_axes() {
        let bad = [
            ExperimentConfig {
                n_realizations: 0,
                ..tiny()
            },
            ExperimentConfig {
                snr_grid_db: vec![],
                ..tiny()
            },
            ExperimentConfig {
                quantization: vec![],
                ..tiny()
            },
            ExperimentConfig {
                n_streams: 3,
                ..tiny()
            },
            ExperimentConfig {
                schemes: vec![],
                ..tiny()
            },
            ExperimentConfig {
                schemes: vec!["as".into(), "as".into()],
                ..tiny()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(cfg.validate(), Err(Error::InvalidConfig(_))),
                "{cfg:?}"
            );
        }
    }
}
