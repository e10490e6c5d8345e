//! Evaluation of assembled systems over a held-out corpus.

use super::freq::{CastStage, FreqPipeline};
use crate::imaging::{to_gray, PlanarImage};
use crate::models::StubModel;
use crate::objectives::{band_report, mean_report, LossConfig, MetricsReport};
use crate::spectral::BandSpec;
use crate::{Error, Result};

/// A colorization/correction system under evaluation. Systems that colorize
/// start from the gray version of the target; systems that only correct
/// start from the degraded variant. Ground-truth conditioning means come
/// from the target, standing in for the user's hint.
pub enum System<'a> {
    /// Emit the degraded input unchanged.
    Identity,
    /// Full-image colorizer stub alone.
    Baseline(&'a StubModel<f32>),
    /// Band-separated colorization plus artifact removal.
    Freq(&'a FreqPipeline),
    /// Cast correction applied to the degraded input.
    CastOnly(&'a CastStage),
    /// Cast correction applied to the frequency pipeline's output.
    FreqCast(&'a FreqPipeline, &'a CastStage),
}

impl System<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            System::Identity => "identity",
            System::Baseline(_) => "baseline",
            System::Freq(_) => "freq",
            System::CastOnly(_) => "cast",
            System::FreqCast(..) => "freq+cast",
        }
    }

    pub fn predict(&self, target: &PlanarImage, degraded: &PlanarImage) -> Result<PlanarImage> {
        match self {
            System::Identity => Ok(degraded.clone()),
            System::Baseline(stub) => stub.forward(&to_gray(target)?),
            System::Freq(fp) => fp.colorize(&to_gray(target)?),
            System::CastOnly(stage) => {
                let means = stage.means_for(target)?;
                Ok(stage.correct(degraded, &means)?.clamp01())
            }
            System::FreqCast(fp, stage) => {
                let colorized = fp.colorize(&to_gray(target)?)?;
                let means = stage.means_for(target)?;
                Ok(stage.correct(&colorized, &means)?.clamp01())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub per_image: Vec<MetricsReport>,
    pub mean: MetricsReport,
}

/// Evaluate a system image by image against the corpus targets; per-band
/// PSNR is included when `band_spec` is given.
pub fn evaluate(
    system: &System<'_>,
    corpus: &[(PlanarImage, PlanarImage)],
    band_spec: Option<&BandSpec>,
    cfg: &LossConfig,
) -> Result<EvalOutcome> {
    if corpus.is_empty() {
        return Err(Error::Pipeline("evaluation corpus is empty".into()));
    }
    let mut per_image = Vec::with_capacity(corpus.len());
    for (target, degraded) in corpus {
        let pred = system.predict(target, degraded)?;
        let report = match band_spec {
            Some(spec) => band_report(&pred, target, spec, cfg)?,
            None => MetricsReport::channel_metrics(&pred, target, cfg)?,
        };
        per_image.push(report);
    }
    let mean = mean_report(&per_image)?;
    Ok(EvalOutcome { per_image, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{gen_corpus, CorpusSpec};

    #[test]
    fn identity_on_a_clean_corpus_scores_infinite_everywhere() {
        let corpus = gen_corpus(&CorpusSpec::new(3, 32, 9, 0.0).unwrap());
        let spec = BandSpec::default_for(32, 32);
        let outcome =
            evaluate(&System::Identity, &corpus, Some(&spec), &LossConfig::default()).unwrap();
        assert!(outcome.mean.psnr_avg.0.is_infinite());
        for r in &outcome.per_image {
            assert!(r.psnr_r.0.is_infinite());
            let b = r.bands.as_ref().unwrap();
            assert!(b.low.0.is_infinite() && b.mid.0.is_infinite() && b.high.0.is_infinite());
            assert!((r.ssim - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(evaluate(&System::Identity, &[], None, &LossConfig::default()).is_err());
    }
}
