//! Layer-primitive oracles: every structured op is checked against a naive
//! loop implementation written independently of the graph kernels, and every
//! primitive's gradient is checked against central finite differences.

use bandtint::rng::SeededRng;
use bandtint::tensor::{grad_check, Graph, Tensor, TensorError, TensorId};

fn rand_tensor<const N: usize>(shape: [usize; N], rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct six-nested-loop cross-correlation, the reference for conv2d.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    ker: &[f64],
    c_out: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let h_out = (h + 2 * padding - k) / stride + 1;
    let w_out = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; c_out * h_out * w_out];
    for co in 0..c_out {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for kh in 0..k {
                        for kw in 0..k {
                            let ih = (oh * stride + kh) as isize - padding as isize;
                            let iw = (ow * stride + kw) as isize - padding as isize;
                            if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < w {
                                acc += inp[ci * h * w + ih as usize * w + iw as usize]
                                    * ker[((co * c_in + ci) * k + kh) * k + kw];
                            }
                        }
                    }
                }
                out[co * h_out * w_out + oh * w_out + ow] = acc;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_identity_kernel_passes_input_through() {
    let mut rng = SeededRng::new(1);
    let x = rand_tensor([2, 4, 4], &mut rng);
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    // two output channels, each picking one input channel
    let ker = g
        .constant(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0])
        .unwrap();
    let bias = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let out = g.conv2d(xi, ker, bias, 1, 0).unwrap();
    assert_eq!(g.shape(out), x.shape());
    assert_eq!(g.value(out), x.data());
}

#[test]
fn conv2d_impulse_reproduces_kernel() {
    let mut data = vec![0.0f64; 25];
    data[2 * 5 + 2] = 1.0;
    let x = Tensor::new(vec![1, 5, 5], data).unwrap();
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    let ker = g.constant(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let bias = g.constant(vec![1], vec![0.0]).unwrap();
    let out = g.conv2d(xi, ker, bias, 1, 1).unwrap();
    let v = g.value(out);
    for oh in 0..5 {
        for ow in 0..5 {
            let expect = if (1..=3).contains(&oh) && (1..=3).contains(&ow) { 1.0 } else { 0.0 };
            assert_eq!(v[oh * 5 + ow], expect, "at ({oh},{ow})");
        }
    }
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = SeededRng::new(42);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let x = rand_tensor([2, 5, 5], &mut rng);
        let k = rand_tensor([3, 2, 3, 3], &mut rng);
        let b = rand_tensor([3], &mut rng);
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        let ki = g.leaf(&k);
        let bi = g.leaf(&b);
        let out = g.conv2d(xi, ki, bi, stride, padding).unwrap();
        let expect =
            conv_oracle(x.data(), 2, 5, 5, k.data(), 3, 3, b.data(), stride, padding);
        assert!(
            max_abs_diff(g.value(out), &expect) < 1e-6,
            "stride {stride} padding {padding}"
        );
    }
}

#[test]
fn conv2d_rejects_channel_mismatch_with_diagnostic() {
    let mut rng = SeededRng::new(3);
    let x = rand_tensor([2, 4, 4], &mut rng);
    let k = rand_tensor([3, 4, 3, 3], &mut rng);
    let b = rand_tensor([3], &mut rng);
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    let ki = g.leaf(&k);
    let bi = g.leaf(&b);
    let err = g.conv2d(xi, ki, bi, 1, 1).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("channel"), "diagnostic should name the dimension: {msg}");
}

#[test]
fn linear_identity_and_zero_weight() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
    let eye = g
        .constant(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
        .unwrap();
    let zero_b = g.constant(vec![3], vec![0.0; 3]).unwrap();
    let out = g.linear(x, eye, zero_b).unwrap();
    assert_eq!(g.value(out), &[0.5, -1.5, 2.0]);

    let zeros = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(vec![2], vec![3.5, -0.25]).unwrap();
    let out = g.linear(x, zeros, b).unwrap();
    assert_eq!(g.value(out), &[3.5, -0.25]);
}

#[test]
fn linear_matches_dot_product_oracle() {
    let mut rng = SeededRng::new(9);
    let x = rand_tensor([3], &mut rng);
    let w = rand_tensor([4, 3], &mut rng);
    let b = rand_tensor([4], &mut rng);
    let mut g = Graph::new();
    let (xi, wi, bi) = (g.leaf(&x), g.leaf(&w), g.leaf(&b));
    let out = g.linear(xi, wi, bi).unwrap();
    let mut expect = b.data().to_vec();
    for (i, e) in expect.iter_mut().enumerate() {
        for j in 0..3 {
            *e += w.data()[i * 3 + j] * x.data()[j];
        }
    }
    assert!(max_abs_diff(g.value(out), &expect) < 1e-6);
}

#[test]
fn linear_rejects_dimension_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![3], vec![0.0; 3]).unwrap();
    let w = g.constant(vec![2, 4], vec![0.0; 8]).unwrap();
    let b = g.constant(vec![2], vec![0.0; 2]).unwrap();
    assert!(g.linear(x, w, b).is_err());
}

#[test]
fn activations_hit_known_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![3], vec![0.0, -2.5, 3.0]).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r), &[0.0, 0.0, 3.0]);
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s)[0], 0.5);
}

#[test]
fn sigmoid_symmetry_identity() {
    let mut rng = SeededRng::new(4);
    let mut g = Graph::<f64>::new();
    for _ in 0..32 {
        let v = rng.uniform(-20.0, 20.0);
        let x = g.constant(vec![1], vec![v]).unwrap();
        let nx = g.constant(vec![1], vec![-v]).unwrap();
        let s = g.sigmoid(x).unwrap();
        let sn = g.sigmoid(nx).unwrap();
        let total = g.value(s)[0] + g.value(sn)[0];
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.value(s)[0] > 0.0 && g.value(s)[0] < 1.0);
    }
}

#[test]
fn resample_round_trip_on_block_constant() {
    let mut rng = SeededRng::new(5);
    // constant on every 2x2 block
    let mut data = vec![0.0f64; 2 * 6 * 6];
    for c in 0..2 {
        for bh in 0..3 {
            for bw in 0..3 {
                let v = rng.uniform(0.0, 1.0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        data[c * 36 + (2 * bh + dy) * 6 + (2 * bw + dx)] = v;
                    }
                }
            }
        }
    }
    let x = Tensor::new(vec![2, 6, 6], data.clone()).unwrap();
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    let down = g.down2_mean(xi).unwrap();
    let up = g.up2_nearest(down).unwrap();
    assert!(max_abs_diff(g.value(up), &data) < 1e-12);
}

#[test]
fn down2_mean_of_known_quad() {
    let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    let d = g.down2_mean(xi).unwrap();
    assert_eq!(g.shape(d), &[1, 1, 1]);
    assert_eq!(g.value(d), &[1.5]);
}

#[test]
fn down2_mean_rejects_odd_extents() {
    let x = Tensor::<f64>::zeros(vec![1, 3, 4]);
    let mut g = Graph::new();
    let xi = g.leaf(&x);
    let err = g.down2_mean(xi).unwrap_err();
    assert!(err.to_string().contains("even"));
}

#[test]
fn backward_linear_map_grad_equals_input() {
    // loss = sum(w .* x), x constant => dloss/dw == x
    let mut rng = SeededRng::new(6);
    let w = rand_tensor([2, 3, 3], &mut rng).with_grad();
    let x = rand_tensor([2, 3, 3], &mut rng);
    let mut g = Graph::new();
    let wi = g.leaf(&w);
    let xi = g.leaf(&x);
    let prod = g.mul(wi, xi).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();
    assert!(max_abs_diff(g.grad(wi).unwrap(), x.data()) < 1e-12);
    assert!(g.grad(xi).is_none(), "detached input must not receive a gradient");
}

#[test]
fn backward_sigmoid_at_zero() {
    let w = Tensor::new(vec![1], vec![0.0f64]).unwrap().with_grad();
    let mut g = Graph::new();
    let wi = g.leaf(&w);
    let s = g.sigmoid(wi).unwrap();
    g.backward(s).unwrap();
    assert!((g.grad(wi).unwrap()[0] - 0.25).abs() < 1e-12);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut g = Graph::new();
    let wi = g.leaf(&w);
    let y = g.mul(wi, wi).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::LossNotScalar(_))));
}

#[test]
fn backward_rejects_loss_from_another_graph() {
    let w = Tensor::new(vec![1], vec![1.0]).unwrap().with_grad();
    let mut big = Graph::new();
    let wi = big.leaf(&w);
    let mut id_far = wi;
    for _ in 0..4 {
        id_far = big.mul_scalar(id_far, 2.0).unwrap();
    }
    let mut small = Graph::<f64>::new();
    small.leaf(&w);
    assert!(matches!(small.backward(id_far), Err(TensorError::NotOnGraph(_))));
}

#[test]
fn composite_conv_relu_mean_matches_finite_differences() {
    let mut rng = SeededRng::new(7);
    let mut params = vec![
        ("kernel".to_string(), rand_tensor([3, 2, 3, 3], &mut rng)),
        ("bias".to_string(), rand_tensor([3], &mut rng)),
    ];
    let input = rand_tensor([2, 6, 6], &mut rng);
    let report = grad_check(
        |g: &mut Graph<f64>, ids: &[TensorId], x: TensorId| {
            let c = g.conv2d(x, ids[0], ids[1], 1, 1)?;
            let r = g.relu(c)?;
            g.mean(r)
        },
        &mut params,
        &input,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "rel error {}", report.max_rel_error);
}

#[test]
fn linear_gradients_are_near_exact() {
    let mut rng = SeededRng::new(8);
    let mut params = vec![
        ("w".to_string(), rand_tensor([4, 6], &mut rng)),
        ("b".to_string(), rand_tensor([4], &mut rng)),
    ];
    let input = rand_tensor([6], &mut rng);
    let report = grad_check(
        |g: &mut Graph<f64>, ids: &[TensorId], x: TensorId| {
            let y = g.linear(x, ids[0], ids[1])?;
            g.mean(y)
        },
        &mut params,
        &input,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "rel error {}", report.max_rel_error);
}

#[test]
fn every_primitive_passes_grad_check_on_randomized_shapes() {
    let mut rng = SeededRng::new(100);
    for trial in 0..4 {
        let c = 1 + rng.below(3);
        let h = 2 * (1 + rng.below(4));
        let w = 2 * (1 + rng.below(4));
        let input = rand_tensor([c, h, w], &mut rng);
        let other = rand_tensor([c, h, w], &mut rng);
        // offset denominators away from zero for div
        let denom = Tensor::new(
            other.shape().to_vec(),
            other.data().iter().map(|v| v + if *v >= 0.0 { 1.5 } else { -1.5 }).collect(),
        )
        .unwrap();

        type Builder = Box<
            dyn Fn(&mut Graph<f64>, &[TensorId], TensorId) -> Result<TensorId, TensorError>,
        >;
        let cases: Vec<(&str, Builder, Tensor<f64>)> = vec![
            ("add", Box::new(|g, ids, x| g.add(ids[0], x)), other.clone()),
            ("sub", Box::new(|g, ids, x| g.sub(ids[0], x)), other.clone()),
            ("mul", Box::new(|g, ids, x| g.mul(ids[0], x)), other.clone()),
            ("div", Box::new(|g, ids, x| g.div(x, ids[0])), denom),
            ("abs", Box::new(|g, ids, _x| g.abs(ids[0])), other.clone()),
            ("relu", Box::new(|g, ids, _x| g.relu(ids[0])), other.clone()),
            ("sigmoid", Box::new(|g, ids, _x| g.sigmoid(ids[0])), other.clone()),
            ("down2_mean", Box::new(|g, ids, _x| g.down2_mean(ids[0])), other.clone()),
            ("up2_nearest", Box::new(|g, ids, _x| g.up2_nearest(ids[0])), other.clone()),
            ("concat", Box::new(|g, ids, x| g.concat_channels(ids[0], x)), other.clone()),
            ("mean", Box::new(|g, ids, _x| g.mean(ids[0])), other.clone()),
            ("sum", Box::new(|g, ids, _x| g.sum(ids[0])), other.clone()),
            (
                "add_scalar",
                Box::new(|g, ids, _x| g.add_scalar(ids[0], 0.7)),
                other.clone(),
            ),
            (
                "mul_scalar",
                Box::new(|g, ids, _x| g.mul_scalar(ids[0], -1.3)),
                other.clone(),
            ),
        ];
        for (name, build, param) in cases {
            let mut params = vec![(name.to_string(), param)];
            let report = grad_check(&build, &mut params, &input, 1e-4).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{name} trial {trial}: rel error {}",
                report.max_rel_error
            );
        }
        // channel bias needs its own input shape
        let bias = rand_tensor([c], &mut rng);
        let mut params = vec![("chbias".to_string(), bias)];
        let report = grad_check(
            |g: &mut Graph<f64>, ids: &[TensorId], x: TensorId| g.add_channel_bias(x, ids[0]),
            &mut params,
            &input,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "add_channel_bias trial {trial}");
    }
}

#[test]
fn conv_grad_check_on_larger_randomized_shape() {
    let mut rng = SeededRng::new(200);
    let input = rand_tensor([8, 16, 16], &mut rng);
    let mut params = vec![
        ("k".to_string(), rand_tensor([4, 8, 3, 3], &mut rng)),
        ("b".to_string(), rand_tensor([4], &mut rng)),
    ];
    let report = grad_check(
        |g: &mut Graph<f64>, ids: &[TensorId], x: TensorId| {
            let y = g.conv2d(x, ids[0], ids[1], 1, 1)?;
            g.mean(y)
        },
        &mut params,
        &input,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "rel error {}", report.max_rel_error);
}

#[test]
fn non_finite_results_are_rejected_not_propagated() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let zero = g.constant(vec![2], vec![0.0, 1.0]).unwrap();
    let err = g.div(a, zero).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "div", index: 0 }));

    let mut g = Graph::<f32>::new();
    let big = g.constant(vec![1], vec![3e38]).unwrap();
    let err = g.mul(big, big).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "mul", .. }));
}

#[test]
fn inference_records_nothing() {
    let x = Tensor::<f64>::new(vec![1, 4, 4], vec![0.25; 16]).unwrap();
    let mut g = Graph::new();
    let xi = g.leaf(&x); // requires_grad is false
    let y = g.relu(xi).unwrap();
    let _ = g.mean(y).unwrap();
    assert_eq!(g.num_recorded_ops(), 0);

    let tracked = x.clone().with_grad();
    let mut g = Graph::new();
    let xi = g.leaf(&tracked);
    let y = g.relu(xi).unwrap();
    let _ = g.mean(y).unwrap();
    assert_eq!(g.num_recorded_ops(), 2);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let run = || {
        let mut rng = SeededRng::new(77);
        let x = rand_tensor([2, 4, 4], &mut rng).with_grad();
        let k = rand_tensor([2, 2, 3, 3], &mut rng).with_grad();
        let b = rand_tensor([2], &mut rng).with_grad();
        let mut g = Graph::new();
        let (xi, ki, bi) = (g.leaf(&x), g.leaf(&k), g.leaf(&b));
        let c = g.conv2d(xi, ki, bi, 1, 1).unwrap();
        let s = g.sigmoid(c).unwrap();
        let loss = g.mean(s).unwrap();
        g.backward(loss).unwrap();
        let out: Vec<u64> = g
            .value(s)
            .iter()
            .chain(g.grad(ki).unwrap())
            .map(|v| v.to_bits())
            .collect();
        out
    };
    assert_eq!(run(), run());
}
