//! Training losses and evaluation metrics.
//!
//! The losses are built from graph operations so they differentiate through
//! the same engine the models train on; the image-level metrics evaluate the
//! identical expressions in double precision on untracked graphs.

mod losses;
mod metrics;
mod report;

pub use losses::{gaussian_window, hybrid_loss, l1_loss, ssim_graph};
pub use metrics::{band_report, mean_report, psnr, ssim, BandPsnr, ChannelSel, Db, MetricsReport};
pub use report::{format_band_table, format_channel_table, ChannelRow};

use serde::{Deserialize, Serialize};

/// Weighting and SSIM internals. `alpha` weights L1 against the SSIM term;
/// the window is Gaussian 11x11 with sigma 1.5 and the stabilizers are
/// (0.01)^2 and (0.03)^2 for unit dynamic range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.5, window: 11, sigma: 1.5, c1: 0.01 * 0.01, c2: 0.03 * 0.03 }
    }
}

impl LossConfig {
    pub fn with_alpha(alpha: f64) -> crate::Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(crate::Error::Metrics(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha, ..Self::default() })
    }
}
