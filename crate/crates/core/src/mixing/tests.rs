use super::*;
use crate::nn::gradcheck::check_module;
use crate::nn::{depthwise_conv1d, param_count, DepthwiseConv1d};
use crate::spectral::circular_convolve_naive;
use crate::tensor::rand_normal;

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::filled(&[rows, cols], 1.0)
}

fn halves(xr: &Tensor, xg: &Tensor) -> Tensor {
    Tensor::concat_rows(&[xr, xg]).unwrap()
}

fn run(m: &TokenMixer, x: &Tensor) -> Tensor {
    let ctx = Tensor::zeros(&[4, x.cols()]);
    m.forward(x, &ctx).unwrap().0
}

fn gate_mut(m: &mut TokenMixer) -> &mut Gate {
    match m {
        TokenMixer::Gated(u) => &mut u.gate,
        _ => panic!("not gated"),
    }
}

fn mixer_gradcheck(m: &TokenMixer, d_in: usize, d_ctx: usize, n: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed ^ 0x5eed);
    let x = rand_normal(&mut rng, &[d_in, n], 1.0);
    let ctx = rand_normal(&mut rng, &[d_ctx, n], 1.0);
    let out_rows = run_ctx(m, &x, &ctx).rows();
    let probe = rand_normal(&mut rng, &[out_rows, n], 1.0);
    check_module(
        m,
        &[x, ctx],
        &probe,
        1e-5,
        |m, xs| Ok(m.forward(&xs[0], &xs[1])?.0),
        |m, xs, dy| {
            let (_, c) = m.forward(&xs[0], &xs[1])?;
            let (dx, dctx) = m.backward(&c, dy)?;
            Ok(vec![
                dx,
                dctx.unwrap_or_else(|| Tensor::zeros(xs[1].shape())),
            ])
        },
    )
    .unwrap()
}

fn run_ctx(m: &TokenMixer, x: &Tensor, ctx: &Tensor) -> Tensor {
    m.forward(x, ctx).unwrap().0
}

/// Perturb every parameter so gradients do not sit at the near-passthrough init.
fn randomize(m: &mut TokenMixer, seed: u64) {
    let mut rng = Rng::new(seed);
    m.visit_mut("", &mut |_, p| {
        p.value = rand_normal(&mut rng, p.value.shape(), 0.5);
    });
}

#[test]
fn sgu_identity_and_zero_gate() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Sgu);
    cfg.n_max = 5;
    let mut m = TokenMixer::new(&cfg, 6, 4, &mut Rng::new(0)).unwrap();
    *gate_mut(&mut m) = Gate::Spatial {
        proj: Parameter::new(Tensor::identity(5)),
        bias: Parameter::new(Tensor::zeros(&[5])),
    };
    let xg = rand_normal(&mut Rng::new(1), &[3, 5], 1.0);
    assert_eq!(run(&m, &halves(&ones(3, 5), &xg)), xg);
    let xr = rand_normal(&mut Rng::new(2), &[3, 5], 1.0);
    let out = run(&m, &halves(&xr, &Tensor::zeros(&[3, 5])));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sgu_matches_direct_formula() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Sgu);
    cfg.n_max = 6;
    let mut m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 3);
    let x = rand_normal(&mut Rng::new(4), &[8, 6], 1.0);
    let (w, b) = match gate_mut(&mut m) {
        Gate::Spatial { proj, bias } => (proj.value.clone(), bias.value.clone()),
        _ => unreachable!(),
    };
    let got = run(&m, &x);
    for c in 0..4 {
        for i in 0..6 {
            let h: f64 = (0..6).map(|j| w.at(i, j) * x.at(4 + c, j)).sum::<f64>() + b.data()[i];
            assert!((got.at(c, i) - x.at(c, i) * h).abs() < 1e-12);
        }
    }
}

#[test]
fn sgu_rejects_other_lengths() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Sgu);
    cfg.n_max = 6;
    let m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    let err = m.forward(&Tensor::zeros(&[8, 5]), &Tensor::zeros(&[4, 5]));
    assert!(matches!(
        err,
        Err(Error::FixedLength {
            expected: 6,
            got: 5
        })
    ));
}

#[test]
fn fgu_identity_filter_and_rotation() {
    let cfg = TokenMixerConfig::new(MixerKind::Fgu);
    let mut m = TokenMixer::new(&cfg, 6, 4, &mut Rng::new(0)).unwrap();
    let mut delta = Tensor::zeros(&[3, 15]);
    for r in 0..3 {
        delta.set(r, 0, 1.0);
    }
    *gate_mut(&mut m) = Gate::Fourier {
        filter: Parameter::new(delta),
        bias: Parameter::new(Tensor::zeros(&[3])),
    };
    let xg = rand_normal(&mut Rng::new(1), &[3, 20], 1.0);
    let out = run(&m, &halves(&ones(3, 20), &xg));
    assert!(out.max_abs_diff(&xg).unwrap() < 1e-12);

    randomize(&mut m, 9);
    let base = run(&m, &halves(&ones(3, 20), &xg));
    for s in [1, 7, 19] {
        let rotated = run(&m, &halves(&ones(3, 20), &xg.rotate_tokens(s)));
        assert!(rotated.max_abs_diff(&base.rotate_tokens(s)).unwrap() < 1e-12);
    }
}

#[test]
fn fgu_matches_naive_circular_sum() {
    let cfg = TokenMixerConfig::new(MixerKind::Fgu);
    let mut m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 5);
    let (filter, bias) = match gate_mut(&mut m) {
        Gate::Fourier { filter, bias } => (filter.value.clone(), bias.value.clone()),
        _ => unreachable!(),
    };
    let xg = rand_normal(&mut Rng::new(6), &[4, 37], 1.0);
    let out = run(&m, &halves(&ones(4, 37), &xg));
    for c in 0..4 {
        let h = circular_convolve_naive(xg.row(c), filter.row(c)).unwrap();
        for i in 0..37 {
            assert!((out.at(c, i) - (h[i] + bias.data()[c])).abs() < 1e-9);
        }
    }
}

#[test]
fn fgu_circular_equivariance_both_halves() {
    let cfg = TokenMixerConfig::new(MixerKind::Fgu);
    let mut m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 1);
    let x = rand_normal(&mut Rng::new(2), &[8, 23], 1.0);
    let base = run(&m, &x);
    for s in 0..23 {
        let got = run(&m, &x.rotate_tokens(s));
        assert!(got.max_abs_diff(&base.rotate_tokens(s)).unwrap() < 1e-9);
    }
}

#[test]
fn ungated_fgu_filters_every_channel() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Fgu);
    cfg.gated = false;
    cfg.filter_len = 3;
    let mut m = TokenMixer::new(&cfg, 4, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 2);
    let x = rand_normal(&mut Rng::new(3), &[4, 9], 1.0);
    let out = run(&m, &x);
    assert_eq!(out.shape(), &[4, 9]);
    let TokenMixer::Filter { filter } = &m else {
        unreachable!()
    };
    for c in 0..4 {
        let h = circular_convolve_naive(x.row(c), filter.value.row(c)).unwrap();
        for i in 0..9 {
            assert!((out.at(c, i) - h[i]).abs() < 1e-12);
        }
    }
    assert!(mixer_gradcheck(&m, 4, 4, 9, 1) < 1e-5);
}

#[test]
fn cgu_delta_and_zero_residual() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Cgu);
    cfg.kernel_size = 3;
    let mut m = TokenMixer::new(&cfg, 4, 4, &mut Rng::new(0)).unwrap();
    *gate_mut(&mut m) = Gate::Conv {
        conv: DepthwiseConv1d::new(Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]))
            .unwrap(),
        bias: Parameter::new(Tensor::zeros(&[2])),
    };
    let xg = rand_normal(&mut Rng::new(1), &[2, 7], 1.0);
    assert_eq!(run(&m, &halves(&ones(2, 7), &xg)), xg);
    randomize(&mut m, 4);
    let out = run(&m, &halves(&Tensor::zeros(&[2, 7]), &xg));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn cgu_interior_shift_equivariance() {
    let cfg = TokenMixerConfig::new(MixerKind::Cgu);
    let mut m = TokenMixer::new(&cfg, 6, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 8);
    let n = 50;
    let s = 4;
    let x = rand_normal(&mut Rng::new(9), &[6, n], 1.0);
    let base = run(&m, &x);
    let shifted = run(&m, &x.shift_tokens(s));
    // receptive field ±7: compare columns fully inside both signals
    for c in 0..3 {
        for i in (7 + s as usize)..(n - 7) {
            assert_eq!(shifted.at(c, i), base.at(c, i - s as usize));
        }
    }
}

#[test]
fn cgu_prime_reductions() {
    let mut cfg = TokenMixerConfig::new(MixerKind::CguPrime);
    cfg.kernel_size = 5;
    let mut m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 10);
    let (conv, bias) = match gate_mut(&mut m) {
        Gate::ConvProj { conv, bias, proj } => {
            proj.weight.value = Tensor::identity(4);
            proj.bias.value.fill(0.0);
            (conv.clone(), bias.clone())
        }
        _ => unreachable!(),
    };
    let mut cgu = TokenMixer::new(
        &TokenMixerConfig {
            kind: MixerKind::Cgu,
            ..cfg.clone()
        },
        8,
        4,
        &mut Rng::new(0),
    )
    .unwrap();
    *gate_mut(&mut cgu) = Gate::Conv { conv, bias };
    let x = rand_normal(&mut Rng::new(11), &[8, 12], 1.0);
    assert!(run(&m, &x).max_abs_diff(&run(&cgu, &x)).unwrap() < 1e-15);

    if let Gate::ConvProj { proj, .. } = gate_mut(&mut m) {
        proj.weight.value.fill(0.0);
    }
    assert!(run(&m, &x).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cgu_prime_matches_composed_oracles() {
    let mut cfg = TokenMixerConfig::new(MixerKind::CguPrime);
    cfg.kernel_size = 5;
    let mut m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 12);
    let x = rand_normal(&mut Rng::new(13), &[8, 10], 1.0);
    let got = run(&m, &x);
    let Gate::ConvProj { conv, bias, proj } = gate_mut(&mut m) else {
        unreachable!()
    };
    let xr = x.slice_rows(0, 4).unwrap();
    let xg = x.slice_rows(4, 8).unwrap();
    let mut c = depthwise_conv1d(&conv.kernel.value, &xg).unwrap();
    for r in 0..4 {
        let b = bias.value.data()[r];
        c.row_mut(r).iter_mut().for_each(|v| *v += b);
    }
    let mut h = proj.weight.value.matmul(&c).unwrap();
    for r in 0..4 {
        let b = proj.bias.value.data()[r];
        h.row_mut(r).iter_mut().for_each(|v| *v += b);
    }
    assert!(got.max_abs_diff(&xr.mul(&h).unwrap()).unwrap() < 1e-12);
}

#[test]
fn tsgu_examples() {
    let g = Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]]);
    let h = shift_gate(&g, 2);
    assert_eq!(h.row(0), &[3.0, 4.0, 0.0, 0.0]);
    assert_eq!(h.row(1), &[0.0, 0.0, 1.0, 2.0]);
    assert_eq!(shift_gate(&g, 0), g);
    assert_eq!(shift_kernel(2, 2).row(0), &[0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(shift_kernel(2, 2).row(1), &[1.0, 0.0, 0.0, 0.0, 0.0]);

    let m = TokenMixer::new(
        &TokenMixerConfig::new(MixerKind::Tsgu),
        8,
        4,
        &mut Rng::new(0),
    )
    .unwrap();
    assert_eq!(param_count(&m), 0);
    let x = rand_normal(&mut Rng::new(1), &[8, 9], 1.0);
    let expect = x
        .slice_rows(0, 4)
        .unwrap()
        .mul(&shift_gate_via_conv(&x.slice_rows(4, 8).unwrap(), 2).unwrap())
        .unwrap();
    assert!(run(&m, &x).max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn tsgu_rejects_odd_gate_width() {
    let cfg = TokenMixerConfig::new(MixerKind::Tsgu);
    assert!(TokenMixer::new(&cfg, 6, 4, &mut Rng::new(0)).is_err());
}

#[test]
fn tiny_attention_is_additive() {
    let mut cfg = TokenMixerConfig::new(MixerKind::Cgu);
    cfg.kernel_size = 3;
    cfg.tiny_attention = Some(TinyAttentionConfig { heads: 1, dim: 4 });
    let mut with_tiny = TokenMixer::new(&cfg, 6, 5, &mut Rng::new(0)).unwrap();
    randomize(&mut with_tiny, 3);
    let x = rand_normal(&mut Rng::new(4), &[6, 7], 1.0);
    let ctx = rand_normal(&mut Rng::new(5), &[5, 7], 1.0);

    let TokenMixer::Gated(unit) = &mut with_tiny else {
        unreachable!()
    };
    let base = TokenMixer::Gated(GatingUnit {
        gate: unit.gate.clone(),
        tiny: None,
    });
    let tiny = unit.tiny.as_mut().unwrap();
    tiny.output.weight.value.fill(0.0);
    tiny.output.bias.value.fill(0.0);
    assert_eq!(run_ctx(&with_tiny, &x, &ctx), run_ctx(&base, &x, &ctx));

    // zero gate path: output is exactly the tiny attention branch
    let mut m = TokenMixer::new(&cfg, 6, 5, &mut Rng::new(0)).unwrap();
    randomize(&mut m, 6);
    let TokenMixer::Gated(unit) = &mut m else {
        unreachable!()
    };
    unit.gate = Gate::Conv {
        conv: DepthwiseConv1d::new(Tensor::zeros(&[3, 3])).unwrap(),
        bias: Parameter::new(Tensor::zeros(&[3])),
    };
    let branch = unit.tiny.as_ref().unwrap().forward(&ctx, 7).unwrap().0;
    let xg = x.slice_rows(3, 6).unwrap();
    let out = run_ctx(&m, &halves(&ones(3, 7), &xg), &ctx);
    assert!(out.max_abs_diff(&branch).unwrap() < 1e-15);
}

#[test]
fn gradients_for_every_kind() {
    let mut kinds: Vec<TokenMixerConfig> = Vec::new();
    for kind in MixerKind::ALL {
        let mut cfg = TokenMixerConfig::new(kind);
        cfg.n_max = 6;
        cfg.kernel_size = 5;
        cfg.filter_len = 4;
        cfg.attn_heads = 2;
        cfg.attn_dim = 4;
        kinds.push(cfg.clone());
        if kind.in_gated_block() {
            cfg.tiny_attention = Some(TinyAttentionConfig { heads: 1, dim: 4 });
            kinds.push(cfg);
        }
    }
    for cfg in kinds {
        for seed in 0..2 {
            let mut m = TokenMixer::new(&cfg, 8, 5, &mut Rng::new(seed)).unwrap();
            randomize(&mut m, seed + 100);
            let err = mixer_gradcheck(&m, 8, 5, 6, seed);
            assert!(err < 1e-5, "{:?} seed {seed}: {err}", cfg.kind);
        }
    }
}

#[test]
fn variable_length_with_one_parameter_set() {
    for kind in MixerKind::ALL {
        let mut cfg = TokenMixerConfig::new(kind);
        cfg.n_max = 64;
        cfg.attn_heads = 2;
        cfg.attn_dim = 8;
        let m = TokenMixer::new(&cfg, 8, 4, &mut Rng::new(1)).unwrap();
        for n in [1, 5, 64, 509, 1024] {
            let res = m.forward(&Tensor::filled(&[8, n], 0.5), &Tensor::zeros(&[4, n]));
            if kind == MixerKind::Sgu && n != 64 {
                assert!(matches!(res, Err(Error::FixedLength { .. })));
            } else {
                let (y, _) = res.unwrap();
                assert_eq!(y.shape(), &[cfg.output_dim(8), n]);
            }
        }
    }
}

#[test]
fn output_dimensions() {
    for kind in [
        MixerKind::Sgu,
        MixerKind::Fgu,
        MixerKind::Cgu,
        MixerKind::CguPrime,
        MixerKind::Tsgu,
    ] {
        assert_eq!(TokenMixerConfig::new(kind).output_dim(1024), 512);
    }
    let mut ungated = TokenMixerConfig::new(MixerKind::Fgu);
    ungated.gated = false;
    assert_eq!(ungated.output_dim(1024), 1024);
    assert_eq!(TokenMixerConfig::new(MixerKind::Fnet).output_dim(256), 256);
}

#[test]
fn kind_names_round_trip() {
    for kind in MixerKind::ALL {
        assert_eq!(kind.name().parse::<MixerKind>().unwrap(), kind);
    }
    assert!("cgu2".parse::<MixerKind>().is_err());
}
