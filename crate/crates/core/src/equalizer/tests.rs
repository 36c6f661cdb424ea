use super::*;
use crate::seed;
use crate::spline::ulp;

fn random_input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

/// Direct nested-loop evaluation of one layer at one output position.
fn naive_layer(spec: &ConvLayerSpec, params: &LayerParams, x: &[Vec<f64>], p: usize, c: usize) -> f64 {
    let mut acc = match params {
        LayerParams::Conv { bias, .. } => bias.get(c).copied().unwrap_or(0.0),
        LayerParams::Kan(_) => 0.0,
    };
    for (ci, row) in x.iter().enumerate() {
        for j in 0..spec.k {
            let v = row[p * spec.s + j];
            match params {
                LayerParams::Conv { weights, mask, .. } => {
                    let f = (c * spec.c_in + ci) * spec.k + j;
                    if mask[f] {
                        acc += weights[f] * v;
                    }
                }
                LayerParams::Kan(l) => {
                    if l.mask[c * l.n_in + ci * spec.k + j] {
                        acc += l.function(c, ci * spec.k + j).eval(v);
                    }
                }
            }
        }
    }
    if spec.kind == LayerKind::ReluLinear {
        acc.max(0.0)
    } else {
        acc
    }
}

fn naive_forward(model: &EqualizerModel, input: &[f64]) -> Vec<f64> {
    let mut x = vec![input.to_vec()];
    for (spec, params) in model.arch.layers.iter().zip(&model.layers) {
        let len = x[0].len();
        let out_len = (len - spec.k) / spec.s + 1;
        x = (0..spec.c_out)
            .map(|c| (0..out_len).map(|p| naive_layer(spec, params, &x, p, c)).collect())
            .collect();
    }
    let c = x.len();
    let len = x[0].len();
    let mut out = Vec::new();
    for p in 0..len {
        for row in x.iter().take(c) {
            out.push(row[p]);
        }
    }
    out
}

fn all_families(seed: u64) -> Vec<EqualizerModel> {
    let mut rng = seed::rng(seed);
    vec![
        EqualizerModel::new(Architecture::fir(9).unwrap(), &mut rng).unwrap(),
        EqualizerModel::new(Architecture::kan1(7, 17).unwrap(), &mut rng).unwrap(),
        EqualizerModel::new(Architecture::cnn2(3, 6, 2, 4, 4).unwrap(), &mut rng).unwrap(),
        EqualizerModel::new(Architecture::kan2(2, 5, 1, 9, 3, 2, 5).unwrap(), &mut rng).unwrap(),
    ]
}

#[test]
fn last_layer_channel_rule() {
    assert_eq!(last_layer_channels(&[2, 4], 2).unwrap(), 4);
    assert_eq!(last_layer_channels(&[1, 2], 2).unwrap(), 1);
    assert!(matches!(last_layer_channels(&[1, 1], 2), Err(Error::Config(_))));
    assert!(Architecture::cnn2(2, 8, 1, 8, 1).is_err());
    assert_eq!(Architecture::kan2(4, 8, 2, 5, 8, 4, 9).unwrap().out_channels(), 4);
}

#[test]
fn rejects_broken_chaining() {
    let mut arch = Architecture::cnn2(4, 8, 2, 8, 2).unwrap();
    arch.layers[1].c_in = 3;
    assert!(validate_architecture(arch.layers, 2).is_err());
    let mut arch = Architecture::kan1(21, 17).unwrap();
    arch.layers[0].kind = LayerKind::Kan { grid: 6 };
    assert!(validate_architecture(arch.layers, 2).is_err());
}

#[test]
fn fir_center_tap_is_identity() {
    let arch = Architecture::fir(21).unwrap();
    let mut model = EqualizerModel::new(arch, &mut seed::rng(0)).unwrap();
    if let LayerParams::Conv { weights, .. } = &mut model.layers[0] {
        weights.fill(0.0);
        weights[10] = 1.0;
    }
    let x = random_input(200, 1);
    let y = model.forward(&x).unwrap();
    assert_eq!(y.len(), (200 - 21) / 2 + 1);
    for (p, v) in y.iter().enumerate() {
        assert_eq!(*v, x[2 * p + 10]);
    }
    // lag 5: output p estimates symbol p + 5, whose center sample is 2p + 10
    assert_eq!(model.arch.symbol_lag(), 5);
}

#[test]
fn kan1_identity_ramp_reduces_to_fir() {
    let arch = Architecture::kan1(1, 17).unwrap();
    let grid = SplineGrid::new(17).unwrap();
    let model =
        EqualizerModel::from_parts(arch, vec![LayerParams::Kan(KanLayerDense::identity(1, 1, grid))]).unwrap();
    let x: Vec<f64> = random_input(101, 2).iter().map(|v| v * 2.0).collect();
    let y = model.forward(&x).unwrap();
    for (p, v) in y.iter().enumerate() {
        assert_eq!(*v, x[2 * p].clamp(-4.0, 4.0));
    }
}

#[test]
fn identity_kan_layer_equals_all_ones_linear_layer() {
    let kan_arch = Architecture::kan1(11, 9).unwrap();
    let kan = EqualizerModel::from_parts(
        kan_arch,
        vec![LayerParams::Kan(KanLayerDense::identity(11, 1, SplineGrid::new(9).unwrap()))],
    )
    .unwrap();
    let fir = EqualizerModel::from_parts(
        Architecture::fir(11).unwrap(),
        vec![LayerParams::Conv {
            weights: vec![1.0; 11],
            bias: vec![],
            mask: vec![true; 11],
        }],
    )
    .unwrap();
    let x = random_input(300, 3);
    let a = kan.forward(&x).unwrap();
    let b = fir.forward(&x).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 4.0 * ulp(11.0 * 3.0), "{u} vs {v}");
    }
}

#[test]
fn forward_matches_naive_oracle() {
    for s in 0..5 {
        for model in all_families(100 + s) {
            let x = random_input(160, 200 + s);
            let fast = model.forward(&x).unwrap();
            let slow = naive_forward(&model, &x);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() <= 4.0 * ulp(scale), "{:?}: {a} vs {b}", model.family());
            }
        }
    }
}

#[test]
fn short_input_is_rejected() {
    let model = &all_families(1)[2];
    let rf = model.arch.receptive_field();
    assert!(matches!(model.forward(&vec![0.0; rf - 1]), Err(Error::Contract(_))));
    assert!(model.forward(&vec![0.0; rf]).is_ok());
}

#[test]
fn one_estimate_per_symbol() {
    for model in all_families(7) {
        let n_sym = 500;
        let usable = model.arch.usable_symbols(n_sym);
        let x = random_input(2 * n_sym, 8);
        let est = model.estimate(&x, usable.start, usable.len()).unwrap();
        assert_eq!(est.len(), usable.len());
        // steady state: every usable symbol comes from a full window
        let full = model.forward(&x).unwrap();
        assert!(full.len() >= usable.len());
        assert!(usable.len() + model.arch.receptive_field() / 2 + 2 * model.arch.out_channels() >= n_sym);
    }
}

#[test]
fn window_maps_outputs_to_symbols() {
    for model in all_families(9) {
        let x = random_input(2 * 400, 10);
        let usable = model.arch.usable_symbols(400);
        let all = model.estimate(&x, usable.start, usable.len()).unwrap();
        let start = usable.start + 37;
        let part = model.estimate(&x, start, 50).unwrap();
        assert_eq!(&part[..], &all[37..87]);
        assert!(model.arch.window(usable.start.saturating_sub(1), 1, 800).is_err() || usable.start == 0);
        assert!(model.arch.window(usable.end, 1, 800).is_err());
    }
}

fn loss(model: &EqualizerModel, x: &[f64], target: &[f64]) -> f64 {
    let y = model.forward(x).unwrap();
    y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

#[test]
fn gradients_match_finite_differences() {
    let h = 1e-4;
    for s in 0..3 {
        for model in all_families(300 + s) {
            let x = random_input(60, 400 + s);
            let cache = model.forward_cached(&x).unwrap();
            let n = cache.output().len();
            let target = random_input(n, 500 + s);
            let up: Vec<f64> = cache
                .output()
                .iter()
                .zip(&target)
                .map(|(a, b)| 2.0 * (a - b) / n as f64)
                .collect();
            let grads = model.backward(&cache, &up).unwrap();
            let pattern = cache.activation_pattern();
            for (li, layer_grads) in grads.iter().enumerate() {
                for which in 0..2 {
                    let len = if which == 0 {
                        model.layers[li].weights().len()
                    } else {
                        model.layers[li].bias().len()
                    };
                    for pi in 0..len {
                        let mut plus = model.clone();
                        let mut minus = model.clone();
                        if which == 0 {
                            plus.layers[li].weights_mut()[pi] += h;
                            minus.layers[li].weights_mut()[pi] -= h;
                        } else {
                            plus.layers[li].bias_mut()[pi] += h;
                            minus.layers[li].bias_mut()[pi] -= h;
                        }
                        let pp = plus.forward_cached(&x).unwrap().activation_pattern();
                        let pm = minus.forward_cached(&x).unwrap().activation_pattern();
                        if pp != pattern || pm != pattern {
                            continue;
                        }
                        let fd = (loss(&plus, &x, &target) - loss(&minus, &x, &target)) / (2.0 * h);
                        let an = if which == 0 {
                            layer_grads.weights[pi]
                        } else {
                            layer_grads.bias[pi]
                        };
                        let denom = an.abs().max(fd.abs()).max(1e-6);
                        assert!((an - fd).abs() / denom < 1e-4, "{:?} layer {li}: {an} vs {fd}", model.family());
                    }
                }
            }
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    for model in all_families(11) {
        let x = random_input(80, 12);
        let cache = model.forward_cached(&x).unwrap();
        let grads = model.backward(&cache, &vec![0.0; cache.output().len()]).unwrap();
        assert!(grads.iter().all(|g| g.weights.iter().chain(&g.bias).all(|&v| v == 0.0)));
    }
}

#[test]
fn masked_connections_get_zero_gradient() {
    for mut model in all_families(13) {
        for layer in model.layers.iter_mut() {
            layer.prune_connection(0);
        }
        let x = random_input(80, 14);
        let cache = model.forward_cached(&x).unwrap();
        let grads = model.backward(&cache, &vec![1.0; cache.output().len()]).unwrap();
        for (layer, g) in model.layers.iter().zip(&grads) {
            let per = layer.params_per_connection();
            assert!(g.weights[..per].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn rvms_of_unpruned_fir_and_kan1() {
    for taps in [21, 51, 121, 321] {
        let fir = EqualizerModel::new(Architecture::fir(taps).unwrap(), &mut seed::rng(0)).unwrap();
        assert_eq!(fir.count_rvms().total, taps as f64);
        let kan = EqualizerModel::new(Architecture::kan1(taps, 17).unwrap(), &mut seed::rng(0)).unwrap();
        assert_eq!(kan.count_rvms().total, taps as f64);
    }
}

#[test]
fn rvms_of_two_layer_models() {
    // 2 * c1 * k1 / s1 + c1 * k2
    let m = EqualizerModel::new(Architecture::kan2(2, 64, 1, 9, 32, 2, 9).unwrap(), &mut seed::rng(0)).unwrap();
    let r = m.count_rvms();
    assert_eq!(r.per_layer, vec![256.0, 64.0]);
    assert_eq!(r.total, 320.0);
    let m = EqualizerModel::new(Architecture::cnn2(8, 64, 4, 8, 2).unwrap(), &mut seed::rng(0)).unwrap();
    assert_eq!(m.count_rvms().total, 2.0 * 8.0 * 64.0 / 4.0 + 8.0 * 8.0);
}

#[test]
fn pruning_half_the_weights_halves_rvms() {
    let mut fir = EqualizerModel::new(Architecture::fir(20).unwrap(), &mut seed::rng(0)).unwrap();
    for conn in 0..10 {
        fir.layers[0].prune_connection(conn);
    }
    let r = fir.count_rvms();
    assert_eq!(r.total, 10.0);
    assert_eq!(r.pruned_fraction, 0.5);
}

#[test]
fn checkpoint_round_trip() {
    for mut model in all_families(21) {
        model.layers[0].prune_connection(1);
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        let back = EqualizerModel::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }
    assert!(EqualizerModel::read_checkpoint(&b"garbage!garbage!"[..]).is_err());
}

#[test]
fn architecture_toml_round_trip() {
    let arch = Architecture::kan2(4, 32, 2, 9, 8, 4, 5).unwrap();
    let text = arch.to_toml().unwrap();
    assert_eq!(Architecture::from_toml(&text).unwrap(), arch);
    let hand = "sps = 2\n[[layers]]\ntype = \"linear\"\nc_in = 1\nc_out = 0\nk = 21\ns = 2\n";
    assert_eq!(Architecture::from_toml(hand).unwrap(), Architecture::fir(21).unwrap());
}

#[test]
fn family_and_descriptor() {
    let a = Architecture::kan2(4, 32, 2, 9, 8, 4, 5).unwrap();
    assert_eq!(a.family(), Family::Kan2);
    assert_eq!(a.descriptor(), "kan2-c4-k32-s2-g9-k8-s4-g5");
    assert_eq!(Architecture::fir(21).unwrap().descriptor(), "fir-k21-s2");
    assert_eq!(Architecture::cnn2(2, 8, 1, 8, 2).unwrap().family(), Family::Cnn2);
}

#[test]
fn descriptor_round_trip() {
    for model in all_families(0) {
        let arch = model.architecture();
        assert_eq!(&Architecture::from_descriptor(&arch.descriptor()).unwrap(), arch);
    }
    let a: Architecture = "cnn2-c8-k64-s4-k8-s2".parse().unwrap();
    assert_eq!(a, Architecture::cnn2(8, 64, 4, 8, 2).unwrap());
    for bad in ["", "fir", "fir-k21-s3", "kan2-c4-k32", "mlp-k3-s2", "fir-kx-s2"] {
        assert!(Architecture::from_descriptor(bad).is_err(), "{bad}");
    }
}
