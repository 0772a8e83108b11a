use ragc::csada::TauSchedule;
use ragc::graph::{generate_sbm, SbmParams};
use ragc::hca::perturb_attributes;
use ragc::metrics::clustering_accuracy;
use ragc::objective::{train, train_with_observer, RunConfig, Variant};
use ragc::tensor::DenseMatrix;
use ragc::Error;

fn quick(k: usize, epochs: usize) -> RunConfig {
    RunConfig {
        k,
        epochs,
        embed_dim: 16,
        final_restarts: 2,
        ..RunConfig::default()
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let g = generate_sbm(&SbmParams { per_block: 12, seed: 1, ..SbmParams::default() }).unwrap();
    let cfg = quick(3, 6);
    let a = train(&g, &cfg).unwrap();
    let b = train(&g, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.x_aug_digest, b.x_aug_digest);

    let c = train(&g, &RunConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(bits(&a.loss_history), bits(&c.loss_history));
}

#[test]
fn two_disjoint_cliques_are_recovered() {
    let g = generate_sbm(&SbmParams {
        blocks: 2,
        per_block: 10,
        p_in: 1.0,
        p_out: 0.0,
        feature_dim: 8,
        feature_shift: 1.0,
        seed: 2,
    })
    .unwrap();
    let out = train(&g, &RunConfig { lr: 1e-2, ..quick(2, 50) }).unwrap();
    assert_eq!(clustering_accuracy(&out.labels, g.labels().unwrap()).unwrap(), 1.0);
    assert!(out.loss_history.iter().all(|l| l.is_finite()));
}

#[test]
fn more_clusters_than_nodes_is_rejected() {
    let g = generate_sbm(&SbmParams { blocks: 2, per_block: 2, ..SbmParams::default() }).unwrap();
    assert!(matches!(train(&g, &quick(5, 2)), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        RunConfig { beta: 1.0, ..RunConfig::default() },
        RunConfig { gamma: 0.5, ..RunConfig::default() },
        RunConfig { tau_start: 0.1, tau_end: 0.5, ..RunConfig::default() },
        RunConfig { mask_ratio: 1.5, ..RunConfig::default() },
        RunConfig { epochs: 0, ..RunConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    RunConfig::default().validate().unwrap();
}

#[test]
fn mask_fraction_matches_ratio() {
    let x = DenseMatrix::filled(1000, 100, 1.0);
    for seed in 0..10 {
        let (_, masked) = perturb_attributes(&x, 0.0, 0.005, seed).unwrap();
        let zeros = masked.data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / masked.len() as f64;
        assert!((frac - 0.005).abs() <= 0.003, "seed {seed}: {frac}");
    }
}

#[test]
fn tau_decays_linearly_unless_fixed() {
    let s = TauSchedule::new(0.8, 0.2, 4).unwrap();
    let taus: Vec<f64> = (0..4).map(|e| s.at(e)).collect();
    for (got, want) in taus.iter().zip([0.8, 0.6, 0.4, 0.2]) {
        assert!((got - want).abs() < 1e-12);
    }

    let g = generate_sbm(&SbmParams { per_block: 8, ..SbmParams::default() }).unwrap();
    let mut seen = Vec::new();
    let cfg = RunConfig { variant: Variant::NoDynamicTau, ..quick(3, 4) };
    train_with_observer(&g, &cfg, |snap| seen.push(snap.tau)).unwrap();
    assert_eq!(seen, vec![0.8; 4]);
}

#[test]
fn every_variant_trains() {
    let g = generate_sbm(&SbmParams { per_block: 8, seed: 5, ..SbmParams::default() }).unwrap();
    for variant in Variant::ALL {
        let out = train(&g, &RunConfig { variant, ..quick(3, 3) }).unwrap();
        assert_eq!(out.loss_history.len(), 3, "{variant}");
        assert_eq!(out.labels.len(), g.node_count());
        assert_eq!(out.embedding.shape(), (g.node_count(), 16));
    }
}
