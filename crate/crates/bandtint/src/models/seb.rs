//! Sparse encoding block: a channel-spatial gate computed as
//! `sigma(W2(ReLU(W1 X)))` with 1x1 convolutions and zero biases, applied
//! multiplicatively to the features it gates.

use crate::rng::SeededRng;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, TensorId};
use crate::{Error, Result};

/// Gate weights: `w1` reduces channels by the reduction ratio, `w2` restores
/// them. Biases are zero by definition and not learnable.
#[derive(Debug, Clone)]
pub struct SebParams<S: Scalar = f32> {
    pub w1: Tensor<S>,
    pub w2: Tensor<S>,
}

impl<S: Scalar> SebParams<S> {
    pub fn init(channels: usize, reduction: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::check(channels, reduction)?;
        let hidden = channels / reduction;
        Ok(Self {
            w1: Tensor::uniform_init(vec![hidden, channels, 1, 1], channels, rng).with_grad(),
            w2: Tensor::uniform_init(vec![channels, hidden, 1, 1], hidden, rng).with_grad(),
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        Self::check(channels, reduction)?;
        let hidden = channels / reduction;
        Ok(Self {
            w1: Tensor::zeros(vec![hidden, channels, 1, 1]).with_grad(),
            w2: Tensor::zeros(vec![channels, hidden, 1, 1]).with_grad(),
        })
    }

    fn check(channels: usize, reduction: usize) -> Result<()> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels / reduction == 0 {
            return Err(Error::Model(format!(
                "reduction ratio {reduction} must divide the channel count {channels}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.w2.shape()[0]
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.w2"), &self.w2);
    }

    pub(crate) fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut Tensor<S>),
    ) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.w2"), &mut self.w2);
    }

    /// Evaluate the gate on a bare tensor (no recording).
    pub fn gate(&self, x: &Tensor<S>) -> std::result::Result<Tensor<S>, TensorError> {
        let mut g = Graph::new();
        let xi = g.leaf_detached(x);
        let w1 = g.leaf_detached(&self.w1);
        let w2 = g.leaf_detached(&self.w2);
        let out = seb_gate_on(&mut g, xi, w1, w2)?;
        Tensor::new(g.shape(out).to_vec(), g.value(out).to_vec())
    }

    /// Evaluate the gated features `X * gate(X)` on a bare tensor.
    pub fn block(&self, x: &Tensor<S>) -> std::result::Result<Tensor<S>, TensorError> {
        let mut g = Graph::new();
        let xi = g.leaf_detached(x);
        let w1 = g.leaf_detached(&self.w1);
        let w2 = g.leaf_detached(&self.w2);
        let out = seb_block_on(&mut g, xi, w1, w2)?;
        Tensor::new(g.shape(out).to_vec(), g.value(out).to_vec())
    }
}

/// Gate on a graph: `sigma(W2(ReLU(W1 X)))`, outputs strictly in (0, 1).
pub fn seb_gate_on<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    w1: TensorId,
    w2: TensorId,
) -> std::result::Result<TensorId, TensorError> {
    let hidden = g.shape(w1)[0];
    let channels = g.shape(w2)[0];
    let zero_hidden = g.constant(vec![hidden], vec![S::ZERO; hidden])?;
    let zero_out = g.constant(vec![channels], vec![S::ZERO; channels])?;
    let a = g.conv2d(x, w1, zero_hidden, 1, 0)?;
    let a = g.relu(a)?;
    let b = g.conv2d(a, w2, zero_out, 1, 0)?;
    g.sigmoid(b)
}

/// Gated features on a graph: `X * gate(X)`.
pub fn seb_block_on<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    w1: TensorId,
    w2: TensorId,
) -> std::result::Result<TensorId, TensorError> {
    let gate = seb_gate_on(g, x, w1, w2)?;
    g.mul(x, gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn rand_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SeededRng::new(seed);
        let data = (0..c * h * w).map(|_| rng.uniform(-1.5, 1.5)).collect();
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn zero_weights_gate_is_exactly_half() {
        let p = SebParams::<f64>::zeros(8, 4).unwrap();
        let x = rand_input(8, 4, 4, 1);
        let gate = p.gate(&x).unwrap();
        assert!(gate.data().iter().all(|&v| v == 0.5));
        let block = p.block(&x).unwrap();
        for (b, x) in block.data().iter().zip(x.data()) {
            assert_eq!(*b, 0.5 * x);
        }
    }

    #[test]
    fn gate_stays_strictly_inside_unit_interval() {
        let mut rng = SeededRng::new(2);
        let p = SebParams::<f64>::init(8, 4, &mut rng).unwrap();
        let x = rand_input(8, 6, 6, 3);
        let gate = p.gate(&x).unwrap();
        assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_input_gives_zero_block() {
        let mut rng = SeededRng::new(4);
        let p = SebParams::<f64>::init(4, 4, &mut rng).unwrap();
        let x = Tensor::zeros(vec![4, 3, 3]);
        let block = p.block(&x).unwrap();
        assert!(block.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_gate_on_single_pixel() {
        // C = 4, 1x1 spatial, reduction 4: hidden = [relu(w1 . x)],
        // out_c = sigmoid(w2_c * hidden)
        let w1 = Tensor::new(vec![1, 4, 1, 1], vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        let w2 = Tensor::new(vec![4, 1, 1, 1], vec![1.0, -0.5, 0.0, 3.0]).unwrap();
        let p = SebParams { w1, w2 };
        let x = Tensor::new(vec![4, 1, 1], vec![1.0f64, 0.5, -2.0, 0.25]).unwrap();
        let gate = p.gate(&x).unwrap();

        let hidden = (0.5 * 1.0 - 1.0 * 0.5 + 0.25 * -2.0 + 2.0 * 0.25f64).max(0.0);
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expect = [
            sigmoid(1.0 * hidden),
            sigmoid(-0.5 * hidden),
            sigmoid(0.0),
            sigmoid(3.0 * hidden),
        ];
        for (got, want) in gate.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = SeededRng::new(5);
        let p = SebParams::<f64>::init(8, 4, &mut rng).unwrap();
        let x = rand_input(4, 4, 4, 6);
        assert!(p.gate(&x).is_err());
    }

    #[test]
    fn reduction_must_divide_channels() {
        let mut rng = SeededRng::new(7);
        assert!(SebParams::<f32>::init(6, 4, &mut rng).is_err());
    }

    #[test]
    fn block_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(8);
        let p = SebParams::<f64>::init(4, 4, &mut rng).unwrap();
        let mut params = vec![
            ("seb.w1".to_string(), p.w1.clone()),
            ("seb.w2".to_string(), p.w2.clone()),
        ];
        let x = rand_input(4, 4, 4, 9);
        let report = grad_check(
            |g: &mut Graph<f64>, ids: &[TensorId], x: TensorId| {
                let y = seb_block_on(g, x, ids[0], ids[1])?;
                g.mean(y)
            },
            &mut params,
            &x,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "rel error {}", report.max_rel_error);
    }
}
