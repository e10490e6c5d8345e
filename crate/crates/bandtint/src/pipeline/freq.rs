//! Frequency-pipeline assembly: three band stubs feed a summed prediction
//! into the artifact remover. The low stub emits the natural-domain low
//! band; the mid and high stubs emit signed band residuals, so recombination
//! is a plain sum.

use crate::imaging::{to_gray, PlanarImage};
use crate::models::{CastConfig, CastModel, StubConfig, StubModel, UNetConfig, UNetModel};
use crate::regions::{build_partition, extract_means, MeanVector, SchemeKind};
use crate::spectral::{split_bands, sum_images, Band, BandSpec};
use crate::{Error, Result};

/// Width configuration for one pipeline's models.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelSizes {
    pub stub: StubConfig,
    pub unet: UNetConfig,
}

#[derive(Debug, Clone)]
pub struct FreqPipeline {
    pub spec: BandSpec,
    /// Band stubs in (low, mid, high) order; low is natural-domain.
    pub stubs: [StubModel<f32>; 3],
    pub unet: UNetModel<f32>,
}

impl FreqPipeline {
    pub fn init(
        spec: BandSpec,
        stub_cfg: StubConfig,
        unet_cfg: UNetConfig,
        seed: u64,
    ) -> Result<Self> {
        let stub = |band: Band, seed_off: u64| {
            let cfg = StubConfig {
                widths: stub_cfg.widths,
                signed_output: !matches!(band, Band::Low),
            };
            StubModel::init(cfg, seed.wrapping_add(seed_off))
        };
        Ok(Self {
            spec,
            stubs: [stub(Band::Low, 1), stub(Band::Mid, 2), stub(Band::High, 3)],
            unet: UNetModel::init(unet_cfg, seed.wrapping_add(4))?,
        })
    }

    /// Gray input split into its three bands (single-plane each).
    pub fn band_inputs(&self, gray: &PlanarImage) -> Result<[PlanarImage; 3]> {
        if gray.channels() != 1 {
            return Err(Error::Pipeline("the frequency pipeline colorizes single-plane input".into()));
        }
        let bands = split_bands(gray, &self.spec)?;
        Ok([bands.low, bands.mid, bands.high])
    }

    /// Per-band color predictions from the three stubs.
    pub fn stub_predictions(&self, gray: &PlanarImage) -> Result<[PlanarImage; 3]> {
        let inputs = self.band_inputs(gray)?;
        Ok([
            self.stubs[0].forward(&inputs[0])?,
            self.stubs[1].forward(&inputs[1])?,
            self.stubs[2].forward(&inputs[2])?,
        ])
    }

    /// Summed band predictions, before artifact removal.
    pub fn pre_unet(&self, gray: &PlanarImage) -> Result<PlanarImage> {
        let preds = self.stub_predictions(gray)?;
        combine_band_outputs(&preds[0], &preds[1], &preds[2])
    }

    /// Full pipeline: split, colorize per band, sum, remove artifacts,
    /// clamp to the display domain.
    pub fn colorize(&self, gray: &PlanarImage) -> Result<PlanarImage> {
        let combined = self.pre_unet(gray)?;
        Ok(self.unet.forward(&combined)?.clamp01())
    }
}

/// The combination wiring: pointwise sum of the three band-model outputs.
/// Feeding it the true bands of an image reconstructs that image exactly
/// (up to transform rounding), independent of any learning.
pub fn combine_band_outputs(
    low: &PlanarImage,
    mid: &PlanarImage,
    high: &PlanarImage,
) -> Result<PlanarImage> {
    sum_images(&[low, mid, high])
}

/// Training pairs for every band stub: (gray band, color band of the
/// target), for each corpus target.
#[allow(clippy::type_complexity)]
pub fn band_training_pairs(
    targets: &[&PlanarImage],
    spec: &BandSpec,
) -> Result<[Vec<(PlanarImage, PlanarImage)>; 3]> {
    let mut out: [Vec<(PlanarImage, PlanarImage)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for target in targets {
        let gray = to_gray(target)?;
        let gray_bands = split_bands(&gray, spec)?;
        let color_bands = split_bands(target, spec)?;
        for (i, band) in Band::ALL.into_iter().enumerate() {
            out[i].push((gray_bands.band(band).clone(), color_bands.band(band).clone()));
        }
    }
    Ok(out)
}

/// Cast corrector plus the partition scheme its conditioning comes from.
#[derive(Debug, Clone)]
pub struct CastStage {
    pub kind: SchemeKind,
    pub model: CastModel<f32>,
}

impl CastStage {
    pub fn init(kind: SchemeKind, seed: u64) -> Self {
        Self { kind, model: CastModel::init(CastConfig::for_scheme(kind), seed) }
    }

    /// Ground-truth conditioning: region means taken from `reference`.
    pub fn means_for(&self, reference: &PlanarImage) -> Result<MeanVector> {
        let scheme = build_partition(self.kind, reference.height(), reference.width())?;
        extract_means(reference, &scheme)
    }

    /// Apply the corrector; output stays unclamped (residual domain).
    pub fn correct(&self, img: &PlanarImage, means: &MeanVector) -> Result<PlanarImage> {
        self.model.forward(img, means)
    }
}
