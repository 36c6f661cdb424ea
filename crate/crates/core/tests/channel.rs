use kaneq::channel::build_frame;
use kaneq::LinkConfig;

fn slicer_ber(cfg: &LinkConfig, n: usize, seed: u64) -> f64 {
    build_frame(cfg, n, seed).unwrap().slicer_ber()
}

fn linear_at(rop: f64) -> LinkConfig {
    let mut cfg = LinkConfig::linear();
    cfg.rop = rop;
    cfg
}

#[test]
fn linear_channel_is_calibrated_at_minus_20_dbm() {
    let ber = slicer_ber(&linear_at(-20.0), 400_000, 11);
    assert!((ber - 1e-2).abs() < 1.5e-3, "slicer BER {ber}");
}

#[test]
fn linear_channel_ber_falls_with_rop() {
    let bers: Vec<f64> = (0..6)
        .map(|i| slicer_ber(&linear_at(-28.0 + 2.0 * i as f64), 100_000, 12))
        .collect();
    assert!(bers.windows(2).all(|w| w[1] < w[0]), "{bers:?}");
}

#[test]
fn each_impairment_alone_raises_ber() {
    let n = 200_000;
    let base = linear_at(-20.0);
    let reference = slicer_ber(&base, n, 13);
    type Switch = (&'static str, fn(&mut LinkConfig));
    let switches: [Switch; 3] = [
        ("eam", |c| c.impairments.eam_nonlinear = true),
        ("tx filter", |c| c.impairments.tx_filter = true),
        ("dispersion", |c| c.impairments.dispersion = true),
    ];
    for (name, enable) in switches {
        let mut cfg = base.clone();
        enable(&mut cfg);
        let ber = slicer_ber(&cfg, n, 13);
        assert!(ber > reference, "{name}: {ber} vs {reference}");
    }
}

#[test]
fn saturated_soa_raises_ber() {
    let n = 200_000;
    let base = linear_at(0.0);
    let mut soa = base.clone();
    soa.impairments.soa = true;
    let (without, with) = (slicer_ber(&base, n, 14), slicer_ber(&soa, n, 14));
    assert!(with > without, "{with} vs {without}");
}

#[test]
fn same_seed_same_frame_other_seed_other_noise() {
    let cfg = LinkConfig::default();
    let a = build_frame(&cfg, 5_000, 21).unwrap();
    let b = build_frame(&cfg, 5_000, 21).unwrap();
    let c = build_frame(&cfg, 5_000, 22).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
    assert_ne!(a.symbols, c.symbols);
}

#[test]
fn frames_are_standardized() {
    let frame = build_frame(&LinkConfig::default(), 50_000, 23).unwrap();
    let x = frame.samples_f64();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6, "{mean} {var}");
}
