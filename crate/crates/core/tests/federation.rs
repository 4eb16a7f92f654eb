mod common;

use common::{max_rel_err, wide_mean, ProtocolObserver};
use fedunet::federation::{aggregate_bottleneck, select_clients, AggregationStrategy};
use fedunet::runner::{build_federation, preset, run_experiment, write_outputs, BackboneAssignment, ExperimentConfig};
use fedunet::Error;
use proptest::prelude::*;

fn small(strategy: AggregationStrategy) -> ExperimentConfig {
    let mut cfg = preset("desk-smoke").unwrap();
    cfg.strategy = strategy;
    cfg.rounds = 3;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_matches_wide_mean_and_ignores_order(
        vectors in (1usize..6, 1usize..40).prop_flat_map(|(n, len)| {
            proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, len), n)
        }),
        rotate in 0usize..6,
    ) {
        let got = aggregate_bottleneck(&vectors).unwrap();
        prop_assert!(max_rel_err(&got, &wide_mean(&vectors)) <= 1e-6);
        let mut shuffled = vectors.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(aggregate_bottleneck(&shuffled).unwrap(), got);
    }

    #[test]
    fn selection_is_sorted_distinct_and_reproducible(seed in any::<u64>(), round in 1usize..100, total in 1usize..30, frac in 0.0f64..1.0) {
        let n = 1 + (frac * (total - 1) as f64) as usize;
        let a = select_clients(seed, round, total, n).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.iter().all(|&i| i < total));
        prop_assert_eq!(a, select_clients(seed, round, total, n).unwrap());
    }
}

#[test]
fn aggregation_edge_cases() {
    assert_eq!(
        aggregate_bottleneck(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]).unwrap(),
        vec![2.0, 3.0]
    );
    assert_eq!(aggregate_bottleneck(&[vec![0.1f32, -7.5]]).unwrap(), vec![0.1, -7.5]);
    assert!(matches!(aggregate_bottleneck::<Vec<f32>>(&[]), Err(Error::Protocol(_))));
    assert!(matches!(
        aggregate_bottleneck(&[vec![1.0f32], vec![1.0, 2.0]]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn heterogeneous_rounds_keep_protocol_invariants() {
    let mut cfg = small(AggregationStrategy::FedunetBottleneck);
    cfg.backbones = BackboneAssignment::List(vec!["plain-s2".into(), "plain-s3".into(), "residual-s2".into()]);
    cfg.clients = 6;
    cfg.participants_per_round = 3;
    let mut fed = build_federation(&cfg).unwrap();
    let mut obs = ProtocolObserver::new(fed.vector_len());
    fed.run(4, &mut obs).unwrap();
    assert_eq!(obs.rounds, 4);
    assert!(obs.violations.is_empty(), "{:?}", obs.violations);
}

#[test]
fn fedavg_moves_the_whole_model() {
    let mut cfg = small(AggregationStrategy::FedavgFull);
    cfg.backbones = BackboneAssignment::List(vec!["plain-s2".into()]);
    let fed = build_federation(&cfg).unwrap();
    let total = fed.clients()[0].params().count_params();
    assert_eq!(fed.vector_len(), total);
    let out = run_experiment(&cfg).unwrap();
    for r in &out.records {
        assert_eq!(r.uploaded_bytes, 4 * total as u64 * r.participants.len() as u64);
    }
}

#[test]
fn local_only_is_silent_and_bytes_sum() {
    let out = run_experiment(&small(AggregationStrategy::LocalOnly)).unwrap();
    assert!(out
        .records
        .iter()
        .all(|r| r.uploaded_bytes == 0 && r.downloaded_bytes == 0));
    assert_eq!(out.summary.total_uploaded_mb, "0.00 MB");
    let fed = run_experiment(&small(AggregationStrategy::FedunetBottleneck)).unwrap();
    assert_eq!(
        fed.summary.total_uploaded_bytes,
        fed.records.iter().map(|r| r.uploaded_bytes).sum::<u64>()
    );
}

#[test]
fn smaller_unet_sends_fewer_bytes() {
    let mut compact = small(AggregationStrategy::FedunetBottleneck);
    compact.unet_width = None;
    let mut shallow = compact.clone();
    shallow.unet_variant = "shallow".into();
    let a = run_experiment(&compact).unwrap().summary.total_uploaded_bytes;
    let b = run_experiment(&shallow).unwrap().summary.total_uploaded_bytes;
    assert!(a < b, "compact {a} vs shallow {b}");
}

#[test]
fn identical_seeds_write_identical_files() {
    let cfg = small(AggregationStrategy::FedunetBottleneck);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(d1.path(), &cfg, &run_experiment(&cfg).unwrap()).unwrap();
    write_outputs(d2.path(), &cfg, &run_experiment(&cfg).unwrap()).unwrap();
    for f in ["metrics.jsonl", "accuracy.tsv", "communication.tsv", "config.toml"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(
        run_experiment(&other).unwrap().records,
        run_experiment(&cfg).unwrap().records
    );
}

#[test]
fn incompatible_manifest_is_a_protocol_error() {
    use fedunet::autodiff::OptimizerKind;
    use fedunet::data::generate_synthetic;
    use fedunet::federation::{ClientState, Federation, FederationSettings, LocalTraining};
    use fedunet::models::{backbone_preset, Fusion, UNetSpec};

    let train = generate_synthetic(3, 4, [3, 8, 8], 0.2, 1).unwrap();
    let spec = backbone_preset("plain-s2", [3, 8, 8], 3).unwrap();
    let narrow = UNetSpec::preset("compact", 8, Fusion::Add).unwrap();
    let wide = UNetSpec::preset("shallow", 8, Fusion::Add).unwrap();
    let clients = vec![
        ClientState::new(0, "plain-s2", &spec, &narrow, vec![0, 1], OptimizerKind::Adam, 1e-3, 1).unwrap(),
        ClientState::new(1, "plain-s2", &spec, &wide, vec![2, 3], OptimizerKind::Adam, 1e-3, 1).unwrap(),
    ];
    let settings = FederationSettings {
        strategy: AggregationStrategy::FedunetBottleneck,
        participants: 2,
        local: LocalTraining {
            epochs: 1,
            batch_size: 2,
            lr: 1e-3,
        },
        seed: 1,
        eval_batch_size: 8,
    };
    let err = Federation::new(clients, train.clone(), train, &narrow, settings).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}
