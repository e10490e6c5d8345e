//! Image-quality metrics and the per-band report.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{losses, LossConfig};
use crate::imaging::PlanarImage;
use crate::spectral::{split_bands, BandSpec};
use crate::tensor::Graph;
use crate::{Error, Result};

/// Decibel value; +infinity (identical images) serializes as the string
/// "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Db(f64::INFINITY)),
            Raw::Text(t) => Err(D::Error::custom(format!("not a dB value: {t}"))),
        }
    }
}

impl Db {
    pub fn render(&self) -> String {
        if self.0.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.2}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelSel {
    R,
    G,
    B,
    All,
}

/// Peak signal-to-noise ratio over the selected channels, for unit dynamic
/// range: `10 * log10(1 / MSE)`. Samples are clamped to [0, 1] first;
/// identical images give +infinity.
pub fn psnr(pred: &PlanarImage, target: &PlanarImage, sel: ChannelSel) -> Result<f64> {
    if pred.channels() != target.channels()
        || pred.height() != target.height()
        || pred.width() != target.width()
    {
        return Err(Error::Metrics(format!(
            "psnr shape mismatch: {}x{}x{} vs {}x{}x{}",
            pred.channels(),
            pred.height(),
            pred.width(),
            target.channels(),
            target.height(),
            target.width()
        )));
    }
    let channels: Vec<usize> = match sel {
        ChannelSel::R => vec![0],
        ChannelSel::G => vec![1],
        ChannelSel::B => vec![2],
        ChannelSel::All => (0..pred.channels()).collect(),
    };
    if channels.iter().any(|&c| c >= pred.channels()) {
        return Err(Error::Metrics("channel selector out of range".into()));
    }
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for &c in &channels {
        for (&p, &t) in pred.plane(c).iter().zip(target.plane(c)) {
            let d = p.clamp(0.0, 1.0) as f64 - t.clamp(0.0, 1.0) as f64;
            acc += d * d;
            count += 1;
        }
    }
    let mse = acc / count as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Mean structural similarity between two images, evaluated in double
/// precision through the same expression the differentiable loss uses.
pub fn ssim(pred: &PlanarImage, target: &PlanarImage, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let a = g.leaf_detached(&pred.to_tensor());
    let b = g.leaf_detached(&target.to_tensor());
    let s = losses::ssim_graph(&mut g, a, b, cfg)?;
    Ok(g.scalar_value(s))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandPsnr {
    pub low: Db,
    pub mid: Db,
    pub high: Db,
}

/// Per-channel and joint PSNR, SSIM, and optionally per-band PSNR.
/// `psnr_avg` is the joint-MSE PSNR over all three channels, not the average
/// of the per-channel values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_r: Db,
    pub psnr_g: Db,
    pub psnr_b: Db,
    pub psnr_avg: Db,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandPsnr>,
    /// Band PSNRs are computed after the affine display map v*0.5 + 0.5, so
    /// the unit dynamic range is well defined for signed band values.
    #[serde(default)]
    pub band_display_map: bool,
}

impl MetricsReport {
    pub fn channel_metrics(pred: &PlanarImage, target: &PlanarImage, cfg: &LossConfig) -> Result<Self> {
        Ok(Self {
            psnr_r: Db(psnr(pred, target, ChannelSel::R)?),
            psnr_g: Db(psnr(pred, target, ChannelSel::G)?),
            psnr_b: Db(psnr(pred, target, ChannelSel::B)?),
            psnr_avg: Db(psnr(pred, target, ChannelSel::All)?),
            ssim: ssim(pred, target, cfg)?,
            bands: None,
            band_display_map: false,
        })
    }
}

/// Full report including per-band PSNR: both images are split with `spec`,
/// each band pair is display-mapped onto [0, 1], and PSNR is taken jointly
/// over the three channels of each band.
pub fn band_report(
    pred: &PlanarImage,
    target: &PlanarImage,
    spec: &BandSpec,
    cfg: &LossConfig,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::channel_metrics(pred, target, cfg)?;
    let pred_bands = split_bands(pred, spec)?;
    let target_bands = split_bands(target, spec)?;
    let band_psnr = |a: &PlanarImage, b: &PlanarImage| -> Result<Db> {
        Ok(Db(psnr(&a.display_map(), &b.display_map(), ChannelSel::All)?))
    };
    report.bands = Some(BandPsnr {
        low: band_psnr(&pred_bands.low, &target_bands.low)?,
        mid: band_psnr(&pred_bands.mid, &target_bands.mid)?,
        high: band_psnr(&pred_bands.high, &target_bands.high)?,
    });
    report.band_display_map = true;
    Ok(report)
}

/// Arithmetic mean of reports, field by field; infinities propagate.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Metrics("cannot aggregate an empty report list".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let all_bands = reports.iter().all(|r| r.bands.is_some());
    Ok(MetricsReport {
        psnr_r: Db(mean(&|r| r.psnr_r.0)),
        psnr_g: Db(mean(&|r| r.psnr_g.0)),
        psnr_b: Db(mean(&|r| r.psnr_b.0)),
        psnr_avg: Db(mean(&|r| r.psnr_avg.0)),
        ssim: mean(&|r| r.ssim),
        bands: if all_bands {
            Some(BandPsnr {
                low: Db(mean(&|r| r.bands.as_ref().unwrap().low.0)),
                mid: Db(mean(&|r| r.bands.as_ref().unwrap().mid.0)),
                high: Db(mean(&|r| r.bands.as_ref().unwrap().high.0)),
            })
        } else {
            None
        },
        band_display_map: reports[0].band_display_map,
    })
}
