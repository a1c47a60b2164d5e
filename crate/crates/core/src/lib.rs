//! Broadband hybrid analog/digital precoding for mmWave massive MIMO-OFDM.
//!
//! The crate builds frequency-flat RF precoders/combiners from the per-subcarrier
//! optimal fully-digital solutions by principal component analysis, for
//! fully-connected arrays ([`fca`]), fixed subarrays ([`pcs`]) and adaptive
//! subarrays whose antenna groups come from correlation clustering
//! ([`grouping`]). [`baselines`] holds the reference schemes, [`metrics`] the
//! SE/EE/BER figures of merit and [`harness`] the seeded sweep runner behind the
//! `hybridsim` CLI.
//!
//! Conventions used throughout:
//!
//! * antennas of a `N^v x N^h` planar array are indexed row-major,
//!   `a = v * N^h + h` (zero-based);
//! * SNR is `1 / noise_var` with the transmit power fixed to
//!   `sum_k ||F_RF F_BB[k]||_F^2 = K * N_s`;
//! * every random draw flows from an explicit `u64` seed.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod fca;
pub mod grouping;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod pcs;

pub use error::{Error, Result};
pub use numerics::{CMat, PhaseResolution};
