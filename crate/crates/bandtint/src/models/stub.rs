//! Desk-scale colorizer stub: a small encoder-decoder that predicts a
//! 3-channel image from a single gray (or gray-band) plane. The natural
//! variant ends in a sigmoid; the band variant emits signed values.

use super::{check_divisible, Conv, ModelParams, ParamCursor};
use crate::imaging::PlanarImage;
use crate::rng::SeededRng;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, TensorId};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StubConfig {
    pub widths: [usize; 3],
    /// Band-domain variant: skip the output sigmoid so targets may be signed.
    pub signed_output: bool,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self { widths: [8, 16, 32], signed_output: false }
    }
}

impl StubConfig {
    pub fn band() -> Self {
        Self { signed_output: true, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct StubModel<S: Scalar = f32> {
    pub cfg: StubConfig,
    enc: [Conv<S>; 3],
    bott: Conv<S>,
    dec: [Conv<S>; 3],
    out: Conv<S>,
}

impl<S: Scalar> StubModel<S> {
    pub fn init(cfg: StubConfig, seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, 0x5754_4255); // "UBTW"
        let [w0, w1, w2] = cfg.widths;
        Self {
            cfg,
            enc: [
                Conv::init(1, w0, 3, &mut rng),
                Conv::init(w0, w1, 3, &mut rng),
                Conv::init(w1, w2, 3, &mut rng),
            ],
            bott: Conv::init(w2, w2, 3, &mut rng),
            dec: [
                Conv::init(w2, w1, 3, &mut rng),
                Conv::init(w1, w0, 3, &mut rng),
                Conv::init(w0, w0, 3, &mut rng),
            ],
            out: Conv::init(w0, 3, 3, &mut rng),
        }
    }

    pub fn forward_ids(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        gray: TensorId,
    ) -> std::result::Result<TensorId, TensorError> {
        let mut cur = ParamCursor::new(ids);
        let mut x = cur.conv_relu(g, gray, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?; // bottleneck
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        let y = cur.conv(g, x, 1)?;
        cur.finish();
        if self.cfg.signed_output {
            Ok(y)
        } else {
            g.sigmoid(y)
        }
    }

    /// Inference on a single gray plane; records nothing.
    pub fn forward(&self, gray: &PlanarImage) -> Result<PlanarImage> {
        if gray.channels() != 1 {
            return Err(crate::Error::Model(format!(
                "colorizer stub expects a single-channel input, got {} channels",
                gray.channels()
            )));
        }
        check_divisible(gray.height(), gray.width(), 8, "colorizer stub")?;
        let mut g = Graph::new();
        let ids = self.bind(&mut g, false);
        let x = g.leaf_detached(&gray.to_tensor());
        let y = self.forward_ids(&mut g, &ids, x)?;
        let t = Tensor::<S>::new(g.shape(y).to_vec(), g.value(y).to_vec())?;
        PlanarImage::from_tensor(&t, self.cfg.signed_output)
    }
}

impl<S: Scalar> ModelParams<S> for StubModel<S> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (i, c) in self.enc.iter().enumerate() {
            c.visit(&format!("enc{i}"), f);
        }
        self.bott.visit("bott", f);
        for (i, c) in self.dec.iter().enumerate() {
            c.visit(&format!("dec{i}"), f);
        }
        self.out.visit("out", f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<S>)) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            c.visit_mut(&format!("enc{i}"), f);
        }
        self.bott.visit_mut("bott", f);
        for (i, c) in self.dec.iter_mut().enumerate() {
            c.visit_mut(&format!("dec{i}"), f);
        }
        self.out.visit_mut("out", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(size: usize, seed: u64) -> PlanarImage {
        let mut rng = SeededRng::new(seed);
        let planes = (0..size * size).map(|_| rng.next_f64() as f32).collect();
        PlanarImage::new(1, size, size, planes).unwrap()
    }

    #[test]
    fn output_is_three_channels_at_input_extents() {
        let model = StubModel::<f32>::init(StubConfig::default(), 1);
        let out = model.forward(&gray(16, 2)).unwrap();
        assert_eq!((out.channels(), out.height(), out.width()), (3, 16, 16));
        assert!(out.samples().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(!out.band_domain());
    }

    #[test]
    fn band_variant_emits_signed_values() {
        let model = StubModel::<f32>::init(StubConfig::band(), 3);
        let out = model.forward(&gray(16, 4)).unwrap();
        assert!(out.band_domain());
    }

    #[test]
    fn same_weights_and_input_give_identical_outputs() {
        let model = StubModel::<f32>::init(StubConfig::default(), 5);
        let img = gray(16, 6);
        let a = model.forward(&img).unwrap();
        let b = model.forward(&img).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn indivisible_extents_are_rejected_naming_the_multiple() {
        let model = StubModel::<f32>::init(StubConfig::default(), 7);
        let err = model.forward(&gray(12, 8)).unwrap_err();
        assert!(err.to_string().contains("divisible by 8"));
    }

    #[test]
    fn snapshot_round_trip_restores_every_parameter() {
        let dir = std::env::temp_dir().join("bandtint_stub_params");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stub.btw");
        let model = StubModel::<f32>::init(StubConfig::default(), 11);
        super::super::save_params(&model, &path).unwrap();
        let mut fresh = StubModel::<f32>::init(StubConfig::default(), 999);
        assert_ne!(model.param_bits(), fresh.param_bits());
        super::super::load_params(&mut fresh, &path).unwrap();
        assert_eq!(model.param_bits(), fresh.param_bits());
        std::fs::remove_file(&path).ok();
    }
}
