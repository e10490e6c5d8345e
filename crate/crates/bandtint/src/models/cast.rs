//! Color-cast corrector: an encoder-decoder over the colorized image whose
//! bottleneck is conditioned on per-region mean colors through a fully
//! connected injection, added per spatial position. Residual output, so the
//! zero-initialized corrector is an exact identity.

use super::{check_divisible, Conv, ModelParams, ParamCursor};
use crate::imaging::PlanarImage;
use crate::regions::MeanVector;
use crate::rng::SeededRng;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, TensorId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CastConfig {
    pub widths: [usize; 3],
    /// Length of the conditioning vector: 3 values per region.
    pub mean_len: usize,
}

impl CastConfig {
    pub fn new(widths: [usize; 3], mean_len: usize) -> Self {
        Self { widths, mean_len }
    }

    pub fn for_scheme(scheme: crate::regions::SchemeKind) -> Self {
        Self { widths: [8, 16, 32], mean_len: scheme.mean_len() }
    }
}

#[derive(Debug, Clone)]
pub struct CastModel<S: Scalar = f32> {
    pub cfg: CastConfig,
    enc: [Conv<S>; 3],
    bott: Conv<S>,
    pub fc_w: Tensor<S>,
    pub fc_b: Tensor<S>,
    dec: [Conv<S>; 3],
    out: Conv<S>,
}

impl<S: Scalar> CastModel<S> {
    pub fn init(cfg: CastConfig, seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, 0x4341_5354); // "CAST"
        let [w0, w1, w2] = cfg.widths;
        Self {
            cfg,
            enc: [
                Conv::init(3, w0, 3, &mut rng),
                Conv::init(w0, w1, 3, &mut rng),
                Conv::init(w1, w2, 3, &mut rng),
            ],
            bott: Conv::init(w2, w2, 3, &mut rng),
            fc_w: Tensor::uniform_init(vec![w2, cfg.mean_len], cfg.mean_len, &mut rng).with_grad(),
            fc_b: Tensor::zeros(vec![w2]).with_grad(),
            dec: [
                Conv::init(w2, w1, 3, &mut rng),
                Conv::init(w1, w0, 3, &mut rng),
                Conv::init(w0, w0, 3, &mut rng),
            ],
            // zero-init residual head: the corrector starts as the identity
            out: Conv::zeros(w0, 3, 3),
        }
    }

    pub fn zeros(cfg: CastConfig) -> Self {
        let [w0, w1, w2] = cfg.widths;
        Self {
            cfg,
            enc: [Conv::zeros(3, w0, 3), Conv::zeros(w0, w1, 3), Conv::zeros(w1, w2, 3)],
            bott: Conv::zeros(w2, w2, 3),
            fc_w: Tensor::zeros(vec![w2, cfg.mean_len]).with_grad(),
            fc_b: Tensor::zeros(vec![w2]).with_grad(),
            dec: [Conv::zeros(w2, w1, 3), Conv::zeros(w1, w0, 3), Conv::zeros(w0, w0, 3)],
            out: Conv::zeros(w0, 3, 3),
        }
    }

    pub fn check_means(&self, means: &MeanVector) -> Result<()> {
        if means.len() != self.cfg.mean_len {
            return Err(Error::Model(format!(
                "mean vector length mismatch: expected {}, got {}",
                self.cfg.mean_len,
                means.len()
            )));
        }
        Ok(())
    }

    pub fn forward_ids(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        input: TensorId,
        means: TensorId,
    ) -> std::result::Result<TensorId, TensorError> {
        let mut cur = ParamCursor::new(ids);
        let mut x = cur.conv_relu(g, input, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.down2_mean(x)?;
        x = cur.conv_relu(g, x, 1)?; // bottleneck features
        let fc_w = cur.take();
        let fc_b = cur.take();
        let injected = g.linear(means, fc_w, fc_b)?;
        x = g.add_channel_bias(x, injected)?;
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        x = g.up2_nearest(x)?;
        x = cur.conv_relu(g, x, 1)?;
        let residual = cur.conv(g, x, 1)?;
        cur.finish();
        g.add(input, residual)
    }

    /// Inference: `input + residual(input, means)`, unclamped.
    pub fn forward(&self, img: &PlanarImage, means: &MeanVector) -> Result<PlanarImage> {
        if img.channels() != 3 {
            return Err(Error::Model(format!(
                "cast corrector expects a 3-channel input, got {}",
                img.channels()
            )));
        }
        check_divisible(img.height(), img.width(), 8, "cast corrector")?;
        self.check_means(means)?;
        let mut g = Graph::new();
        let ids = self.bind(&mut g, false);
        let x = g.leaf_detached(&img.to_tensor());
        let m = g.leaf_detached(&means_tensor::<S>(means));
        let y = self.forward_ids(&mut g, &ids, x, m)?;
        let t = Tensor::<S>::new(g.shape(y).to_vec(), g.value(y).to_vec())?;
        PlanarImage::from_tensor(&t, false)
    }
}

/// Mean vector as a rank-1 conditioning tensor.
pub fn means_tensor<S: Scalar>(means: &MeanVector) -> Tensor<S> {
    let data = means.values().iter().map(|&v| S::from_f64(v as f64)).collect();
    Tensor::new(vec![means.len()], data).expect("means are finite")
}

impl<S: Scalar> ModelParams<S> for CastModel<S> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (i, c) in self.enc.iter().enumerate() {
            c.visit(&format!("enc{i}"), f);
        }
        self.bott.visit("bott", f);
        f("fc.w".into(), &self.fc_w);
        f("fc.b".into(), &self.fc_b);
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
        f("fc.w".into(), &mut self.fc_w);
        f("fc.b".into(), &mut self.fc_b);
        for (i, c) in self.dec.iter_mut().enumerate() {
            c.visit_mut(&format!("dec{i}"), f);
        }
        self.out.visit_mut("out", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::{build_partition, extract_means, SchemeKind};

    fn rgb(size: usize, seed: u64) -> PlanarImage {
        let mut rng = SeededRng::new(seed);
        let planes = (0..3 * size * size).map(|_| rng.next_f64() as f32).collect();
        PlanarImage::new(3, size, size, planes).unwrap()
    }

    fn means_of(img: &PlanarImage, kind: SchemeKind) -> MeanVector {
        let scheme = build_partition(kind, img.height(), img.width()).unwrap();
        extract_means(img, &scheme).unwrap()
    }

    #[test]
    fn zero_parameters_make_an_exact_identity() {
        let cfg = CastConfig::for_scheme(SchemeKind::Grid(1));
        let model = CastModel::<f32>::zeros(cfg);
        let img = rgb(16, 1);
        let out = model.forward(&img, &means_of(&img, SchemeKind::Grid(1))).unwrap();
        assert_eq!(out.samples(), img.samples());
    }

    #[test]
    fn zero_fc_weights_sever_the_conditioning() {
        let cfg = CastConfig::for_scheme(SchemeKind::Grid(1));
        let mut model = CastModel::<f32>::init(cfg, 2);
        model.fc_w = Tensor::zeros(vec![cfg.widths[2], cfg.mean_len]).with_grad();
        let img = rgb(16, 3);
        let a = model.forward(&img, &means_of(&img, SchemeKind::Grid(1))).unwrap();
        let other = MeanVector::new(SchemeKind::Grid(1), vec![0.9; 12]).unwrap();
        let b = model.forward(&img, &other).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn mean_length_mismatch_states_expected_and_actual() {
        let model = CastModel::<f32>::init(CastConfig::for_scheme(SchemeKind::Grid(1)), 4);
        let img = rgb(16, 5);
        let wrong = means_of(&img, SchemeKind::FiveRegion);
        let err = model.forward(&img, &wrong).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 12") && msg.contains("got 15"), "{msg}");
    }

    #[test]
    fn conditioning_path_is_live_in_the_gradient() {
        let cfg = CastConfig::for_scheme(SchemeKind::Grid(0));
        let mut model = CastModel::<f32>::init(cfg, 6);
        // move off the zero-initialized residual head to a generic point
        let mut rng = SeededRng::new(60);
        for (_, t) in model.named_params_mut() {
            for v in t.data_mut() {
                *v += rng.uniform(-0.05, 0.05) as f32;
            }
        }
        let model = model;
        let img = rgb(16, 7);
        let means = means_of(&img, SchemeKind::Grid(0));
        let target = rgb(16, 8);

        let mut g = Graph::new();
        let ids = model.bind(&mut g, true);
        let x = g.leaf_detached(&img.to_tensor::<f32>());
        let m = g.leaf_detached(&means_tensor::<f32>(&means));
        let y = model.forward_ids(&mut g, &ids, x, m).unwrap();
        let t = g.leaf_detached(&target.to_tensor::<f32>());
        let diff = g.sub(y, t).unwrap();
        let a = g.abs(diff).unwrap();
        let loss = g.mean(a).unwrap();
        g.backward(loss).unwrap();

        // fc.w sits right after the four encoder/bottleneck convs
        let fc_w_slot = 8;
        let fc_grad = g.grad(ids[fc_w_slot]).expect("fc.w must receive a gradient");
        assert!(fc_grad.iter().any(|&v| v != 0.0), "conditioning gradient is all zero");
    }
}
