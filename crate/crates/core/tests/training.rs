use kaneq::channel::build_frame;
use kaneq::pruning::PruneConfig;
use kaneq::search::{read_rows, run_campaign, with_lrs, CampaignConfig, RESULTS_FILE};
use kaneq::seed::rng;
use kaneq::training::{evaluate_ber, train, DataSplit};
use kaneq::{Architecture, EqualizerModel, LinkConfig, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

fn quick() -> TrainConfig {
    TrainConfig {
        iterations: 300,
        test_blocks: 10,
        ..TrainConfig::default()
    }
}

fn families() -> Vec<Architecture> {
    vec![
        Architecture::fir(21).unwrap(),
        Architecture::kan1(21, 9).unwrap(),
        Architecture::cnn2(4, 32, 2, 8, 2).unwrap(),
        Architecture::kan2(2, 32, 1, 9, 16, 2, 9).unwrap(),
    ]
}

#[test]
fn loss_drops_over_the_first_100_iterations() {
    let frame = build_frame(&LinkConfig::default(), 60_000, 1).unwrap();
    let cfg = TrainConfig { iterations: 100, ..quick() };
    for arch in families() {
        let mut model = EqualizerModel::new(arch.clone(), &mut rng(2)).unwrap();
        let record = train(&mut model, &frame, &cfg).unwrap();
        let head: f64 = record.loss[..10].iter().sum();
        let tail: f64 = record.loss[90..].iter().sum();
        assert!(tail < 0.7 * head, "{}: {head} -> {tail}", arch.descriptor());
    }
}

#[test]
fn shuffled_symbols_give_coin_flip_ber() {
    let mut frame = build_frame(&LinkConfig::default(), 60_000, 3).unwrap();
    frame.symbols.shuffle(&mut rng(4));
    let mut model = EqualizerModel::new(Architecture::fir(21).unwrap(), &mut rng(5)).unwrap();
    let record = train(&mut model, &frame, &quick()).unwrap();
    assert!((record.final_mean_ber - 0.5).abs() < 0.03, "{}", record.final_mean_ber);
}

#[test]
fn clean_channel_is_equalized_without_errors() {
    let frame = build_frame(&LinkConfig::clean(), 30_000, 6).unwrap();
    for arch in families() {
        let mut model = EqualizerModel::new(arch.clone(), &mut rng(7)).unwrap();
        let record = train(&mut model, &frame, &TrainConfig { iterations: 800, ..quick() }).unwrap();
        assert_eq!(record.final_mean_ber, 0.0, "{}", arch.descriptor());
    }
}

#[test]
fn fir_converges_to_the_wiener_solution() {
    let mut link = LinkConfig::linear();
    link.rop = -18.0;
    let frame = build_frame(&link, 200_000, 8).unwrap();
    let cfg = TrainConfig {
        l1_weight: 0.0,
        iterations: 1500,
        ..quick()
    };
    let arch = Architecture::fir(21).unwrap();
    let mut model = EqualizerModel::new(arch.clone(), &mut rng(9)).unwrap();
    train(&mut model, &frame, &cfg).unwrap();

    let split = DataSplit::new(&arch, frame.len(), &cfg).unwrap();
    let samples = frame.samples_f64();
    let mut x = DMatrix::zeros(split.train.len(), 21);
    for j in 0..21 {
        let mut probe = model.clone();
        let w = probe.layers_mut()[0].weights_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        w[j] = 1.0;
        let col = probe.estimate(&samples, split.train.start, split.train.len()).unwrap();
        x.set_column(j, &DVector::from_vec(col));
    }
    let y = DVector::from_iterator(
        split.train.len(),
        frame.symbols[split.train.clone()].iter().map(|&s| kaneq::pam4::level(s)),
    );
    let ls = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let trained = DVector::from_column_slice(model.layers()[0].weights());
    let ls_mse = (&x * &ls - &y).norm_squared() / y.len() as f64;
    let mse = (&x * &trained - &y).norm_squared() / y.len() as f64;
    assert!(mse >= ls_mse * (1.0 - 1e-9) && mse <= 1.03 * ls_mse, "{mse} vs {ls_mse}");
    let ls_ber = {
        let mut m = model.clone();
        m.layers_mut()[0].weights_mut().copy_from_slice(ls.as_slice());
        evaluate_ber(&m, &frame, split.test.clone()).unwrap()
    };
    let ber = evaluate_ber(&model, &frame, split.test.clone()).unwrap();
    assert!(ber <= 1.1 * ls_ber + 1e-4, "{ber} vs {ls_ber}");
}

fn tiny_campaign() -> CampaignConfig {
    let train = TrainConfig {
        iterations: 40,
        test_blocks: 4,
        ..TrainConfig::default()
    };
    CampaignConfig {
        link: LinkConfig::default(),
        frames: 2,
        symbols_per_frame: 5_000,
        prune: PruneConfig {
            thresholds: vec![0.0, 10.0, 50.0],
            retrain: train.clone(),
        },
        train,
        seed: 3,
    }
}

#[test]
fn campaign_rows_resume_and_determinism() {
    let archs = vec![Architecture::fir(21).unwrap(), Architecture::kan1(5, 5).unwrap()];
    let candidates = with_lrs(archs, &[1e-3, 3.16e-3]);
    let cfg = tiny_campaign();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();

    let first = run_campaign(&candidates, &cfg, a.path()).unwrap();
    assert_eq!((first.trained, first.skipped, first.failed), (4, 0, 0));
    let rows = read_rows(&a.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(rows.len(), 4 * (1 + 3));

    let again = run_campaign(&candidates, &cfg, a.path()).unwrap();
    assert_eq!((again.trained, again.skipped), (0, 4));

    run_campaign(&candidates, &cfg, b.path()).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join(RESULTS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let changed = CampaignConfig { seed: 4, ..cfg };
    assert!(run_campaign(&candidates, &changed, a.path()).is_err());
}
