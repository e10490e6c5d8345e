//! Artifact-removal network: a 4-level U-Net (four downsampling stages) that
//! predicts a residual correction. Each skip connection passes through a
//! sparse-encoding gate before concatenation, and the network output is
//! `input + residual`, so the zero-initialized network is an exact identity.

use super::{check_divisible, seb_block_on, Conv, ModelParams, ParamCursor, SebParams};
use crate::imaging::PlanarImage;
use crate::rng::SeededRng;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, TensorId};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UNetConfig {
    pub widths: [usize; 4],
    pub seb_reduction: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { widths: [16, 32, 64, 128], seb_reduction: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct UNetModel<S: Scalar = f32> {
    pub cfg: UNetConfig,
    enc: Vec<(Conv<S>, Conv<S>)>,
    seb: Vec<SebParams<S>>,
    up: Vec<Conv<S>>,
    dec: Vec<(Conv<S>, Conv<S>)>,
    out: Conv<S>,
}

impl<S: Scalar> UNetModel<S> {
    pub fn init(cfg: UNetConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, Some(seed))
    }

    pub fn zeros(cfg: UNetConfig) -> Result<Self> {
        Self::build(cfg, None)
    }

    fn build(cfg: UNetConfig, seed: Option<u64>) -> Result<Self> {
        let mut rng = SeededRng::stream(seed.unwrap_or(0), 0x554e_4554); // "UNET"
        let w = cfg.widths;
        let conv = |c_in: usize, c_out: usize, rng: &mut SeededRng| match seed {
            Some(_) => Conv::init(c_in, c_out, 3, rng),
            None => Conv::zeros(c_in, c_out, 3),
        };
        let mut enc = Vec::new();
        let mut seb = Vec::new();
        let mut in_ch = 3;
        for &width in &w {
            enc.push((conv(in_ch, width, &mut rng), conv(width, width, &mut rng)));
            let s = match seed {
                Some(_) => SebParams::init(width, cfg.seb_reduction, &mut rng)?,
                None => SebParams::zeros(width, cfg.seb_reduction)?,
            };
            seb.push(s);
            in_ch = width;
        }
        // up[l] maps the features arriving from below back to width l;
        // the bottom features carry width w[3]
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..4 {
            let from_below = if l == 3 { w[3] } else { w[l + 1] };
            up.push(conv(from_below, w[l], &mut rng));
            dec.push((conv(2 * w[l], w[l], &mut rng), conv(w[l], w[l], &mut rng)));
        }
        // zero-init residual head: the remover starts as the identity
        let out = Conv::zeros(w[0], 3, 3);
        Ok(Self { cfg, enc, seb, up, dec, out })
    }

    pub fn forward_ids(
        &self,
        g: &mut Graph<S>,
        ids: &[TensorId],
        input: TensorId,
    ) -> std::result::Result<TensorId, TensorError> {
        let mut cur = ParamCursor::new(ids);
        // encoder: two convs per level, mean-pool between levels
        let mut skips = Vec::with_capacity(4);
        let mut x = input;
        for l in 0..4 {
            if l > 0 {
                x = g.down2_mean(x)?;
            }
            x = cur.conv_relu(g, x, 1)?;
            x = cur.conv_relu(g, x, 1)?;
            skips.push(x);
        }
        // parameter-free bottom: the fourth downsampling stage
        let mut below = g.down2_mean(x)?;
        // decoder: upsample, gate the skip, concatenate, fuse
        for l in (0..4).rev() {
            let upsampled = g.up2_nearest(below)?;
            let lifted = cur.conv_relu(g, upsampled, 1)?;
            let w1 = cur.take();
            let w2 = cur.take();
            let gated = seb_block_on(g, skips[l], w1, w2)?;
            let merged = g.concat_channels(lifted, gated)?;
            let d = cur.conv_relu(g, merged, 1)?;
            below = cur.conv_relu(g, d, 1)?;
        }
        let residual = cur.conv(g, below, 1)?;
        cur.finish();
        g.add(input, residual)
    }

    /// Inference: `input + residual(input)`, unclamped; records nothing.
    pub fn forward(&self, img: &PlanarImage) -> Result<PlanarImage> {
        if img.channels() != 3 {
            return Err(crate::Error::Model(format!(
                "artifact remover expects a 3-channel input, got {}",
                img.channels()
            )));
        }
        check_divisible(img.height(), img.width(), 16, "artifact remover")?;
        let mut g = Graph::new();
        let ids = self.bind(&mut g, false);
        let x = g.leaf_detached(&img.to_tensor());
        let y = self.forward_ids(&mut g, &ids, x)?;
        let t = Tensor::<S>::new(g.shape(y).to_vec(), g.value(y).to_vec())?;
        PlanarImage::from_tensor(&t, false)
    }
}

impl<S: Scalar> ModelParams<S> for UNetModel<S> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        for (l, (a, b)) in self.enc.iter().enumerate() {
            a.visit(&format!("enc{l}a"), f);
            b.visit(&format!("enc{l}b"), f);
        }
        for l in (0..4).rev() {
            self.up[l].visit(&format!("up{l}"), f);
            self.seb[l].visit(&format!("seb{l}"), f);
            self.dec[l].0.visit(&format!("dec{l}a"), f);
            self.dec[l].1.visit(&format!("dec{l}b"), f);
        }
        self.out.visit("out", f);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor<S>)) {
        for (l, (a, b)) in self.enc.iter_mut().enumerate() {
            a.visit_mut(&format!("enc{l}a"), f);
            b.visit_mut(&format!("enc{l}b"), f);
        }
        let levels = self
            .up
            .iter_mut()
            .zip(self.seb.iter_mut())
            .zip(self.dec.iter_mut())
            .enumerate()
            .rev();
        for (l, ((up, seb), dec)) in levels {
            up.visit_mut(&format!("up{l}"), f);
            seb.visit_mut(&format!("seb{l}"), f);
            dec.0.visit_mut(&format!("dec{l}a"), f);
            dec.1.visit_mut(&format!("dec{l}b"), f);
        }
        self.out.visit_mut("out", f);
    }
}
