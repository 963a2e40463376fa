use hamnet::checkpoint;
use hamnet::config::PipelineConfig;
use hamnet::data::{gen_synthetic, SyntheticConfig, SyntheticCorpus};
use hamnet::eval::{evaluate, predict_all, score_labels, sweep_l};
use hamnet::train::{train, TrainedModel};
use hamnet::Error;

fn corpus(seed: u64, n: usize) -> SyntheticCorpus {
    let syn = SyntheticConfig {
        n_sentences: n,
        d: 16,
        ..Default::default()
    };
    gen_synthetic(seed, &syn).unwrap()
}

fn config(epochs: usize) -> PipelineConfig {
    PipelineConfig {
        d: 16,
        heads: 2,
        epochs,
        seed: 13,
        ..PipelineConfig::small()
    }
}

#[test]
fn same_seed_gives_identical_loss_curves_and_checkpoints() {
    let c = corpus(1, 12);
    let (a, ra) = train(&config(4), &c.meta, &c.examples, &c.examples).unwrap();
    let (b, rb) = train(&config(4), &c.meta, &c.examples, &c.examples).unwrap();
    assert_eq!(ra, rb);
    for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let c = corpus(2, 4);
    let cfg = config(0);
    let (trained, report) = train(&cfg, &c.meta, &c.examples, &[]).unwrap();
    let init = TrainedModel::init(&cfg, &c.meta).unwrap();
    assert!(report.history.is_empty());
    assert_eq!(trained.training.epoch, 0);
    for ((_, p), (_, q)) in trained.params.iter().zip(init.params.iter()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn untrained_model_scores_near_chance() {
    let syn = SyntheticConfig {
        n_sentences: 64,
        ..Default::default()
    };
    let c = gen_synthetic(3, &syn).unwrap();
    let init = TrainedModel::init(&PipelineConfig::small(), &c.meta).unwrap();
    let r = evaluate(&init.model, &init.params, &c.examples).unwrap();
    assert!(r.scores.overall.f1 < 0.3, "{}", r.scores.overall.f1);
}

#[test]
fn gold_labels_score_perfectly() {
    let c = corpus(4, 10);
    let gold: Vec<Vec<usize>> = c.examples.iter().map(|e| e.sentence.labels.clone()).collect();
    let s = score_labels(&gold, &c.examples);
    assert_eq!(s.overall.f1, 1.0);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let c = corpus(5, 8);
    let (trained, _) = train(&config(3), &c.meta, &c.examples, &c.examples).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &trained).unwrap();
    let loaded = checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.config, trained.config);
    assert_eq!(loaded.training, trained.training);
    assert_eq!(
        predict_all(&loaded.model, &loaded.params, &c.examples).unwrap(),
        predict_all(&trained.model, &trained.params, &c.examples).unwrap()
    );
}

#[test]
fn non_finite_parameter_is_reported_with_its_stage() {
    let c = corpus(6, 2);
    let mut m = TrainedModel::init(&config(1), &c.meta).unwrap();
    let id = m.params.id("cross.bridge.up.bias").expect("bridge bias exists");
    m.params.get_mut(id).data_mut()[0] = f64::NAN;
    match m.model.predict(&m.params, &c.examples[0]) {
        Err(Error::NonFinite { stage, .. }) => assert_eq!(stage, "cross"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn single_depth_sweep_gives_one_row() {
    let c = corpus(7, 6);
    let rows = sweep_l(&config(1), &c.meta, &c.examples, &c.examples, &c.examples, &[1]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].rounds, 1);
    assert!(matches!(
        sweep_l(&config(1), &c.meta, &c.examples, &[], &c.examples, &[]),
        Err(Error::Config(_))
    ));
}

#[test]
fn width_mismatch_between_model_and_data_is_an_error() {
    let c = corpus(8, 2);
    let cfg = PipelineConfig {
        d: 8,
        ..config(1)
    };
    assert!(matches!(train(&cfg, &c.meta, &c.examples, &[]), Err(Error::Data(_))));
}
