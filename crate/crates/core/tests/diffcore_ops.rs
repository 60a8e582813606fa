use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdown::diffcore::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct quadruple-loop convolution used as an oracle.
fn naive_conv2d(x: &Tensor, k: &Tensor, d: usize, same: bool) -> (Vec<usize>, Vec<f64>) {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (ph, pw) = if same { (d * (kh - 1) / 2, d * (kw - 1) / 2) } else { (0, 0) };
    let ho = h + 2 * ph - d * (kh - 1);
    let wo = w + 2 * pw - d * (kw - 1);
    let mut y = vec![0.0; ho * wo * cout];
    for i in 0..ho {
        for j in 0..wo {
            for a in 0..kh {
                for b in 0..kw {
                    let ii = (i + a * d) as isize - ph as isize;
                    let jj = (j + b * d) as isize - pw as isize;
                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        let xv = x.data()[((ii as usize) * w + jj as usize) * cin + ci];
                        for co in 0..cout {
                            y[(i * wo + j) * cout + co] += xv * k.data()[((a * kw + b) * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
    }
    (vec![ho, wo, cout], y)
}

fn conv(x: &Tensor, k: &Tensor, d: usize, p: Padding2d) -> Tensor {
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, None, d, p).unwrap();
    g.value(y).clone()
}

#[test]
fn conv2d_identity_kernel_same_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[6, 5, 1]);
    let mut k = Tensor::zeros(&[3, 3, 1, 1]);
    k.data_mut()[4] = 1.0;
    assert_eq!(conv(&x, &k, 1, Padding2d::Same), x);
}

#[test]
fn conv2d_ones_kernel_on_constant_field() {
    let x = Tensor::full(&[5, 5, 1], 0.7);
    let k = Tensor::full(&[3, 3, 1, 1], 1.0);
    let y = conv(&x, &k, 1, Padding2d::Valid);
    assert_eq!(y.shape(), &[3, 3, 1]);
    assert!(y.data().iter().all(|&v| (v - 9.0 * 0.7).abs() < 1e-14));
}

#[test]
fn conv2d_dilated_valid_shape_and_undersized_rejection() {
    let x = Tensor::zeros(&[8, 8, 2]);
    let k = Tensor::zeros(&[3, 3, 2, 4]);
    assert_eq!(conv(&x, &k, 2, Padding2d::Valid).shape(), &[4, 4, 4]);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(Tensor::zeros(&[4, 8, 2])), g.constant(k));
    assert!(g.conv2d(xv, kv, None, 2, Padding2d::Valid).is_err());
    let even = g.constant(Tensor::zeros(&[2, 2, 2, 1]));
    assert!(g.conv2d(xv, even, None, 1, Padding2d::Same).is_err());
}

#[test]
fn conv_time_examples() {
    let (a, b, c) = (0.3, -1.2, 2.5);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[3, 1], vec![a, b, c]).unwrap());
    let k2 = g.constant(Tensor::new(&[2, 1, 1], vec![1.0, 1.0]).unwrap());
    let y = g.conv_time(x, k2, None, 1, TimePadding::Causal).unwrap();
    assert_eq!(g.value(y).data(), &[a, a + b, b + c]);

    let x5 = g.constant(Tensor::new(&[5, 2, 3], (0..30).map(|v| v as f64).collect()).unwrap());
    let mut eye = Tensor::zeros(&[1, 3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let eye = g.constant(eye);
    let y = g.conv_time(x5, eye, None, 1, TimePadding::Causal).unwrap();
    assert_eq!(g.value(y), g.value(x5));

    let k3 = g.constant(Tensor::zeros(&[3, 3, 4]));
    let y = g.conv_time(x5, k3, None, 1, TimePadding::Valid).unwrap();
    assert_eq!(g.shape(y), &[3, 2, 4]);
    let y = g.conv_time(x5, k3, None, 3, TimePadding::Valid);
    assert!(y.is_err());
    let y = g.conv_time(x5, k3, None, 3, TimePadding::Last).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 4]);
}

#[test]
fn last_padding_equals_final_causal_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[4, 3, 2, 3]);
    let k = rand_tensor(&mut rng, &[3, 3, 2]);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x), g.constant(k));
    let causal = g.conv_time(xv, kv, None, 2, TimePadding::Causal).unwrap();
    let last = g.conv_time(xv, kv, None, 2, TimePadding::Last).unwrap();
    let tail = &g.value(causal).data()[3 * 6 * 2..];
    assert_eq!(g.value(last).data(), tail);
}

#[test]
fn activations_and_pooling() {
    assert_eq!(gelu_scalar(0.0), 0.0);
    let oracle = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715)).tanh());
    assert!((gelu_scalar(1.0) - oracle).abs() < 1e-15);
    assert!((gelu_scalar(1.0) - 0.84119).abs() < 1e-5);
    assert_eq!(sigmoid_scalar(0.0), 0.5);
    assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) == 1.0);

    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[2, 3, 2], [0.4, -1.0].repeat(6)).unwrap());
    let p = g.global_avg_pool(x).unwrap();
    let pooled = g.value(p).data();
    assert!((pooled[0] - 0.4).abs() < 1e-15 && (pooled[1] + 1.0).abs() < 1e-15);
    let b = g.box_avg_pool(x, 1).unwrap();
    assert!(g.value(b).data().iter().zip(g.value(x).data()).all(|(a, b)| (a - b).abs() < 1e-15));
    let s = g.sqrt_eps(p);
    assert!((g.value(s).data()[0] - (g.value(p).data()[0] + 1e-12).sqrt()).abs() == 0.0);
}

#[test]
fn backward_basic_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(&[4], vec![1.0, 5.0, -2.0, 0.5]).unwrap());
    let m = g.reduce_mean(x);
    let gr = g.backward(m).unwrap();
    assert_eq!(gr.get(x).unwrap().data(), &[0.25; 4]);

    let mut g = Graph::new();
    let x = g.param(Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[2.0, -4.0]);
    assert!(g.backward(sq).is_err(), "non-scalar loss must be rejected");
}

#[test]
fn nonfinite_values_are_reported() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    let y = g.param(Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
    let q = g.div(x, y).unwrap();
    let s = g.sum(q);
    assert_eq!(g.first_nonfinite().map(|(_, n)| n), Some("div"));
    assert!(matches!(g.backward(s), Err(stdown::Error::NonFinite(_))));
}

#[test]
fn gradient_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.param(rand_tensor(&mut rng, &[7, 6, 3]));
    let k = g.param(rand_tensor(&mut rng, &[3, 1, 3, 5]));
    let y = g.conv2d(x, k, None, 2, Padding2d::Same).unwrap();
    let y = g.gelu(y);
    let p = g.box_avg_pool(y, 2).unwrap();
    let s = g.reduce_mean(p);
    let a = g.backward(s).unwrap();
    let b = g.backward(s).unwrap();
    assert_eq!(a.get(x), b.get(x));
    assert_eq!(a.get(k), b.get(k));
}

#[test]
fn grad_check_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 4, 2]);
    let err = grad_check_unary(|g, v| Ok(g.sum(v)), &x, FD_STEP).unwrap();
    assert!(err < 1e-10, "{err}");
    let err = grad_check_unary(
        |g, v| {
            let y = g.gelu(v);
            Ok(g.sum(y))
        },
        &x,
        FD_STEP,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
    let k = rand_tensor(&mut rng, &[3, 3, 2, 3]);
    let rep = grad_check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, Padding2d::Same)?;
            let y = g.sigmoid(y);
            Ok(g.sum(y))
        },
        &[x, k],
        FD_STEP,
        Coords::All,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

#[test]
fn params_round_trip_both_dtypes() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = ParamSet::new();
    set.push("a.weight", Tensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 1.0 / 3.0]).unwrap()).unwrap();
    set.push("a.bias", Tensor::zeros(&[2])).unwrap();
    assert!(set.push("a.bias", Tensor::zeros(&[1])).is_err());
    let m = set.save(dir.path(), stdown::geodata::Dtype::F64Le).unwrap();
    assert_eq!(ParamSet::load(dir.path(), &m).unwrap(), set);
    let m = set.save(dir.path(), stdown::geodata::Dtype::F32Le).unwrap();
    let back = ParamSet::load(dir.path(), &m).unwrap();
    assert_eq!(std::fs::metadata(dir.path().join(PARAMS_FILE)).unwrap().len(), 6 * 4);
    assert_eq!(back.get("a.weight").unwrap().data()[3], (1.0f32 / 3.0) as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_naive_oracle(
        seed in any::<u64>(), h in 3usize..12, w in 3usize..12, cin in 1usize..4, cout in 1usize..4,
        kh in prop::sample::select(vec![1usize, 3, 5]), kw in prop::sample::select(vec![1usize, 3]),
        d in 1usize..3, same in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assume!(same || (h >= d * (kh - 1) + 1 && w >= d * (kw - 1) + 1));
        let x = rand_tensor(&mut rng, &[h, w, cin]);
        let k = rand_tensor(&mut rng, &[kh, kw, cin, cout]);
        let (shape, want) = naive_conv2d(&x, &k, d, same);
        let got = conv(&x, &k, d, if same { Padding2d::Same } else { Padding2d::Valid });
        prop_assert_eq!(got.shape(), shape.as_slice());
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, d in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[9, 7, 3]);
        let y = rand_tensor(&mut rng, &[9, 7, 3]);
        let k = rand_tensor(&mut rng, &[3, 3, 3, 2]);
        let mix = Tensor::new(&[9, 7, 3], x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
        let lhs = conv(&mix, &k, d, Padding2d::Same);
        let (cx, cy) = (conv(&x, &k, d, Padding2d::Same), conv(&y, &k, d, Padding2d::Same));
        for ((l, a), b) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (alpha * a + beta * b)).abs() < 1e-10);
        }
    }

    #[test]
    fn causal_conv_never_looks_ahead(seed in any::<u64>(), t in 1usize..9, tp in 0usize..9, d in 1usize..4, k in 1usize..4) {
        let tp = tp % t;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[t, 3, 2]);
        let kern = rand_tensor(&mut rng, &[k, 2, 2]);
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[tp * 6..(tp + 1) * 6] {
            *v += 1.0;
        }
        let run = |x: Tensor| {
            let mut g = Graph::new();
            let (xv, kv) = (g.constant(x), g.constant(kern.clone()));
            let y = g.conv_time(xv, kv, None, d, TimePadding::Causal).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(x), run(x2));
        for step in 0..tp {
            prop_assert_eq!(&a.data()[step * 6..(step + 1) * 6], &b.data()[step * 6..(step + 1) * 6]);
        }
    }
}
