//! On-disk run artifacts: model directories (snapshot + `arch.json`),
//! loss curves, and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::freq::{CastStage, FreqPipeline};
use super::TrainConfig;
use crate::imaging::CorpusSpec;
use crate::models::{
    load_params, save_params, CastConfig, CastModel, StubConfig, StubModel, UNetConfig,
};
#[cfg(test)]
use crate::models::ModelParams;
use crate::regions::SchemeKind;
use crate::spectral::BandSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ArchSpec {
    Stub { widths: [usize; 3], signed_output: bool },
    Unet { widths: [usize; 4], seb_reduction: usize },
    Cast { widths: [usize; 3], scheme: String },
    FreqPipeline {
        r_low: f64,
        r_mid: f64,
        stub_widths: [usize; 3],
        unet_widths: [usize; 4],
        seb_reduction: usize,
    },
}

fn write_arch(dir: &Path, arch: &ArchSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("arch.json"), serde_json::to_string_pretty(arch)?)?;
    Ok(())
}

fn read_arch(dir: &Path) -> Result<ArchSpec> {
    let text = std::fs::read_to_string(dir.join("arch.json")).map_err(|e| {
        Error::Pipeline(format!("cannot read arch.json in {}: {e}", dir.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_stub_dir(dir: &Path, model: &StubModel<f32>) -> Result<()> {
    write_arch(
        dir,
        &ArchSpec::Stub { widths: model.cfg.widths, signed_output: model.cfg.signed_output },
    )?;
    save_params(model, &dir.join("params.btw"))
}

pub fn load_stub_dir(dir: &Path) -> Result<StubModel<f32>> {
    let ArchSpec::Stub { widths, signed_output } = read_arch(dir)? else {
        return Err(Error::Pipeline(format!("{} does not hold a colorizer stub", dir.display())));
    };
    let mut model = StubModel::init(StubConfig { widths, signed_output }, 0);
    load_params(&mut model, &dir.join("params.btw"))?;
    Ok(model)
}

pub fn save_cast_dir(dir: &Path, stage: &CastStage) -> Result<()> {
    write_arch(
        dir,
        &ArchSpec::Cast { widths: stage.model.cfg.widths, scheme: stage.kind.to_string() },
    )?;
    save_params(&stage.model, &dir.join("params.btw"))
}

pub fn load_cast_dir(dir: &Path) -> Result<CastStage> {
    let ArchSpec::Cast { widths, scheme } = read_arch(dir)? else {
        return Err(Error::Pipeline(format!("{} does not hold a cast corrector", dir.display())));
    };
    let kind: SchemeKind = scheme.parse()?;
    let mut model = CastModel::init(CastConfig { widths, mean_len: kind.mean_len() }, 0);
    load_params(&mut model, &dir.join("params.btw"))?;
    Ok(CastStage { kind, model })
}

pub fn save_pipeline_dir(dir: &Path, fp: &FreqPipeline) -> Result<()> {
    write_arch(
        dir,
        &ArchSpec::FreqPipeline {
            r_low: fp.spec.r_low,
            r_mid: fp.spec.r_mid,
            stub_widths: fp.stubs[0].cfg.widths,
            unet_widths: fp.unet.cfg.widths,
            seb_reduction: fp.unet.cfg.seb_reduction,
        },
    )?;
    for (stub, name) in fp.stubs.iter().zip(["stub_low.btw", "stub_mid.btw", "stub_high.btw"]) {
        save_params(stub, &dir.join(name))?;
    }
    save_params(&fp.unet, &dir.join("unet.btw"))
}

pub fn load_pipeline_dir(dir: &Path) -> Result<FreqPipeline> {
    let ArchSpec::FreqPipeline { r_low, r_mid, stub_widths, unet_widths, seb_reduction } =
        read_arch(dir)?
    else {
        return Err(Error::Pipeline(format!(
            "{} does not hold a frequency pipeline",
            dir.display()
        )));
    };
    let spec = BandSpec::new(r_low, r_mid)?;
    let mut fp = FreqPipeline::init(
        spec,
        StubConfig { widths: stub_widths, signed_output: false },
        UNetConfig { widths: unet_widths, seb_reduction },
        0,
    )?;
    for (stub, name) in
        fp.stubs.iter_mut().zip(["stub_low.btw", "stub_mid.btw", "stub_high.btw"])
    {
        load_params(stub, &dir.join(name))?;
    }
    load_params(&mut fp.unet, &dir.join("unet.btw"))?;
    Ok(fp)
}

/// Everything a run needs to be reproduced: configuration, corpus spec,
/// effective radii, scheme, and outcome summaries. Wall time is the one
/// field exempt from byte-identical re-runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<BandSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    /// Band-domain PNGs are written through the affine display map
    /// v*0.5 + 0.5.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_display_map: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub final_losses: Vec<(String, f64)>,
    pub wall_secs: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            train: None,
            corpus: None,
            radii: None,
            scheme: None,
            band_display_map: None,
            final_losses: Vec::new(),
            wall_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Loss curve as `step,loss` CSV.
pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for (i, loss) in curve.iter().enumerate() {
        text.push_str(&format!("{i},{loss}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}
