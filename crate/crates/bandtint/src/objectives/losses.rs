//! Differentiable losses on graph tensors.

use super::LossConfig;
use crate::tensor::{Graph, Scalar, TensorError, TensorId};

/// Mean absolute deviation, `(1/N) * sum |pred - target|`.
pub fn l1_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: TensorId,
    target: TensorId,
) -> Result<TensorId, TensorError> {
    let diff = g.sub(pred, target)?;
    let a = g.abs(diff)?;
    g.mean(a)
}

/// Normalized 2-D Gaussian window.
pub fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..window * window)
        .map(|i| {
            let y = (i / window) as f64 - c;
            let x = (i % window) as f64 - c;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Per-channel Gaussian windowing as one convolution: a block-diagonal
/// `[C, C, win, win]` kernel with the window on the diagonal.
fn window_kernel<S: Scalar>(
    g: &mut Graph<S>,
    channels: usize,
    cfg: &LossConfig,
) -> Result<(TensorId, TensorId), TensorError> {
    let win = gaussian_window(cfg.window, cfg.sigma);
    let mut data = vec![S::ZERO; channels * channels * cfg.window * cfg.window];
    for c in 0..channels {
        let base = (c * channels + c) * cfg.window * cfg.window;
        for (i, &v) in win.iter().enumerate() {
            data[base + i] = S::from_f64(v);
        }
    }
    let kernel = g.constant(vec![channels, channels, cfg.window, cfg.window], data)?;
    let bias = g.constant(vec![channels], vec![S::ZERO; channels])?;
    Ok((kernel, bias))
}

/// Mean structural similarity over all valid windows, differentiable.
/// Output is a scalar in [-1, 1]; identical inputs give exactly 1.
pub fn ssim_graph<S: Scalar>(
    g: &mut Graph<S>,
    pred: TensorId,
    target: TensorId,
    cfg: &LossConfig,
) -> Result<TensorId, TensorError> {
    let shape = g.shape(pred).to_vec();
    if shape != g.shape(target) {
        return Err(TensorError::DimMismatch {
            op: "ssim",
            what: "operand",
            lhs: shape,
            rhs: g.shape(target).to_vec(),
        });
    }
    if shape.len() != 3 {
        return Err(TensorError::BadRank { op: "ssim", expected: 3, shape });
    }
    if shape[1] < cfg.window || shape[2] < cfg.window {
        return Err(TensorError::BadArgument {
            op: "ssim",
            msg: format!(
                "image {}x{} is smaller than the {}x{} window",
                shape[1], shape[2], cfg.window, cfg.window
            ),
        });
    }
    let (kernel, kbias) = window_kernel(g, shape[0], cfg)?;
    let conv = |g: &mut Graph<S>, x: TensorId| g.conv2d(x, kernel, kbias, 1, 0);

    let mu_p = conv(g, pred)?;
    let mu_t = conv(g, target)?;
    let pp = g.mul(pred, pred)?;
    let tt = g.mul(target, target)?;
    let pt = g.mul(pred, target)?;
    let m_pp = conv(g, pp)?;
    let m_tt = conv(g, tt)?;
    let m_pt = conv(g, pt)?;

    let mu_p_sq = g.mul(mu_p, mu_p)?;
    let mu_t_sq = g.mul(mu_t, mu_t)?;
    let mu_pt = g.mul(mu_p, mu_t)?;
    let var_p = g.sub(m_pp, mu_p_sq)?;
    let var_t = g.sub(m_tt, mu_t_sq)?;
    let cov = g.sub(m_pt, mu_pt)?;

    let lum_num = {
        let t = g.mul_scalar(mu_pt, 2.0)?;
        g.add_scalar(t, cfg.c1)?
    };
    let lum_den = {
        let t = g.add(mu_p_sq, mu_t_sq)?;
        g.add_scalar(t, cfg.c1)?
    };
    let str_num = {
        let t = g.mul_scalar(cov, 2.0)?;
        g.add_scalar(t, cfg.c2)?
    };
    let str_den = {
        let t = g.add(var_p, var_t)?;
        g.add_scalar(t, cfg.c2)?
    };
    let num = g.mul(lum_num, str_num)?;
    let den = g.mul(lum_den, str_den)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// `alpha * L1 + (1 - alpha) * (1 - SSIM)`.
pub fn hybrid_loss<S: Scalar>(
    g: &mut Graph<S>,
    pred: TensorId,
    target: TensorId,
    cfg: &LossConfig,
) -> Result<TensorId, TensorError> {
    let l1 = l1_loss(g, pred, target)?;
    if cfg.alpha == 1.0 {
        return Ok(l1);
    }
    let s = ssim_graph(g, pred, target, cfg)?;
    let neg = g.mul_scalar(s, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let left = g.mul_scalar(l1, cfg.alpha)?;
    let right = g.mul_scalar(one_minus, 1.0 - cfg.alpha)?;
    g.add(left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::{grad_check, Tensor};

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = SeededRng::new(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn l1_of_identical_inputs_is_zero() {
        let x = rand_tensor(vec![3, 8, 8], 1);
        let mut g = Graph::new();
        let a = g.leaf(&x);
        let b = g.leaf(&x);
        let l = l1_loss(&mut g, a, b).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
    }

    #[test]
    fn l1_of_constant_deviation() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![2, 4, 4], vec![0.0; 32]).unwrap();
        let b = g.constant(vec![2, 4, 4], vec![0.5; 32]).unwrap();
        let l = l1_loss(&mut g, a, b).unwrap();
        assert!((g.scalar_value(l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for y in 0..11 {
            for x in 0..11 {
                assert_eq!(w[y * 11 + x], w[(10 - y) * 11 + (10 - x)]);
            }
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let x = rand_tensor(vec![3, 16, 16], 2);
        let mut g = Graph::new();
        let a = g.leaf(&x);
        let b = g.leaf(&x);
        let s = ssim_graph(&mut g, a, b, &LossConfig::default()).unwrap();
        assert!((g.scalar_value(s) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn ssim_of_constant_zero_vs_one_matches_closed_form() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![1, 16, 16], vec![0.0; 256]).unwrap();
        let b = g.constant(vec![1, 16, 16], vec![1.0; 256]).unwrap();
        let s = ssim_graph(&mut g, a, b, &LossConfig::default()).unwrap();
        let c1 = 0.01 * 0.01;
        let expect = c1 / (1.0 + c1); // luminance term; structure term is 1
        assert!((g.scalar_value(s) - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_images_smaller_than_the_window() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![1, 8, 8], vec![0.5; 64]).unwrap();
        let b = g.constant(vec![1, 8, 8], vec![0.5; 64]).unwrap();
        assert!(ssim_graph(&mut g, a, b, &LossConfig::default()).is_err());
    }

    #[test]
    fn hybrid_vanishes_on_identical_inputs_and_degenerates_to_l1() {
        let x = rand_tensor(vec![3, 16, 16], 3);
        let y = rand_tensor(vec![3, 16, 16], 4);
        let mut g = Graph::new();
        let a = g.leaf(&x);
        let b = g.leaf(&x);
        let h = hybrid_loss(&mut g, a, b, &LossConfig::default()).unwrap();
        assert!(g.scalar_value(h).abs() < 1e-7);

        let c = g.leaf(&y);
        let cfg1 = LossConfig::with_alpha(1.0).unwrap();
        let h1 = hybrid_loss(&mut g, a, c, &cfg1).unwrap();
        let l1 = l1_loss(&mut g, a, c).unwrap();
        assert_eq!(g.scalar_value(h1), g.scalar_value(l1));
    }

    #[test]
    fn hybrid_loss_gradient_matches_finite_differences() {
        // treat the prediction itself as the parameter
        let pred = rand_tensor(vec![3, 16, 16], 5);
        let target = rand_tensor(vec![3, 16, 16], 6);
        let mut params = vec![("pred".to_string(), pred)];
        let report = grad_check(
            |g: &mut Graph<f64>, ids: &[crate::tensor::TensorId], x| {
                let _ = x;
                let t = g.leaf_detached(&target);
                hybrid_loss(g, ids[0], t, &LossConfig::default())
            },
            &mut params,
            &Tensor::scalar(0.0),
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "rel error {}", report.max_rel_error);
    }
}
