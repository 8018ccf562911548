use slagnet::dataset::{generate_synthetic, DatasetIndex, Stage, SyntheticSpec};
use slagnet::experiments::{ablation_suite, prepare_fold, run_repeat, ExperimentConfig, FoldData, FoldSpec};
use slagnet::loading::{make_batches, LoadedSample};
use slagnet::models::{load_checkpoint, save_checkpoint, Model, ModelError, ModelKind, ModelSpec, ModelState};
use slagnet::nn::softmax_cross_entropy;
use slagnet::training::{evaluate, split_train_val, train_one_run, TrainError, TrainSettings};

fn index() -> DatasetIndex {
    generate_synthetic(&SyntheticSpec {
        num_domains: 3,
        samples_per_recording: 1024,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn config(id: &str) -> ExperimentConfig {
    let mut c = ablation_suite().into_iter().find(|c| c.id == id).unwrap();
    c.fold = FoldSpec {
        test_domain: 3,
        train_domains: [1, 2].into(),
    };
    c.window_length = 128;
    c.repeats = 2;
    c.settings.epochs = 3;
    c.settings.batch_size = 8;
    c
}

fn fold(id: &str) -> (ExperimentConfig, FoldData<f32>) {
    let c = config(id);
    let data = prepare_fold(&c, &index()).unwrap();
    (c, data)
}

/// Hash of every weight and running statistic, bit for bit.
fn state_hash(state: &ModelState<f32>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in state.params.iter().chain(&state.buffers).flatten() {
        for b in v.to_bits().to_le_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

fn run(c: &ExperimentConfig, train: &[LoadedSample<f32>], val: &[LoadedSample<f32>], test: &[LoadedSample<f32>], s: &TrainSettings) -> slagnet::training::TrainedRun<f32> {
    train_one_run(&c.model_spec(), &c.classes, train, val, test, s).unwrap()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (c, data) = fold("A2");
    let (train, val) = split_train_val(data.train_pool.clone(), 0.2, 7).unwrap();
    let s = c.repeat_settings(0);
    let a = run(&c, &train, &val, &data.test, &s);
    let b = run(&c, &train, &val, &data.test, &s);
    assert_eq!(a.result, b.result);
    assert_eq!(a.model.state(), b.model.state());
    for e in &a.result.per_epoch {
        for acc in [e.train_acc, e.val_acc, e.test_acc.unwrap()] {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let total: u64 = a.result.confusion_at_best.iter().flatten().sum();
    assert_eq!(total as usize, data.test.len());
}

#[test]
fn test_set_never_touches_the_weights() {
    let (c, data) = fold("A5");
    let (train, val) = split_train_val(data.train_pool.clone(), 0.2, 3).unwrap();
    let on = c.repeat_settings(0);
    let off = TrainSettings {
        evaluate_test_each_epoch: false,
        ..on.clone()
    };
    let a = run(&c, &train, &val, &data.test, &on);
    let b = run(&c, &train, &val, &data.test, &off);
    // A different test set of the same shape, also evaluated every epoch.
    let mut other = data.test.clone();
    other.reverse();
    for s in &mut other {
        s.data.iter_mut().for_each(|v| *v = -*v * 3.0);
    }
    let d = run(&c, &train, &val, &other, &on);
    assert_eq!(state_hash(&a.model.state()), state_hash(&b.model.state()));
    assert_eq!(state_hash(&a.model.state()), state_hash(&d.model.state()));
    assert_eq!(a.result.best_epoch, b.result.best_epoch);
    for ((x, y), z) in a.result.per_epoch.iter().zip(&b.result.per_epoch).zip(&d.result.per_epoch) {
        assert_eq!((x.train_loss, x.val_acc), (y.train_loss, y.val_acc));
        assert_eq!((x.train_loss, x.val_acc), (z.train_loss, z.val_acc));
        assert!(y.test_acc.is_none());
    }
}

#[test]
fn best_checkpoint_reproduces_test_accuracy() {
    let (c, data) = fold("M10");
    let (record, model) = run_repeat(&c, &data, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&model, &path, serde_json::json!({"best_epoch": record.result.best_epoch})).unwrap();
    let (restored, header) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(restored.spec(), model.spec());
    assert_eq!(header.meta["best_epoch"], record.result.best_epoch);
    let eval = evaluate(&restored, &data.test, &c.classes, 5).unwrap();
    assert_eq!(eval.accuracy, record.result.test_acc_at_best);
    assert_eq!(eval.confusion, record.result.confusion_at_best);
}

#[test]
fn repeats_do_not_depend_on_execution_order() {
    let (c, data) = fold("A2");
    let forward: Vec<_> = (0..2).map(|r| run_repeat(&c, &data, r).unwrap().0).collect();
    let backward: Vec<_> = (0..2).rev().map(|r| run_repeat(&c, &data, r).unwrap().0).collect();
    assert_eq!(forward[0], backward[1]);
    assert_eq!(forward[1], backward[0]);
    assert_eq!(forward[1].result.seed, c.base_seed() + 1);
    assert_ne!(forward[0].result, forward[1].result);
}

#[test]
fn single_epoch_is_its_own_best() {
    let (mut c, data) = fold("A2");
    c.settings.epochs = 1;
    let (record, _) = run_repeat(&c, &data, 0).unwrap();
    assert_eq!(record.result.best_epoch, 1);
    assert_eq!(record.result.per_epoch.len(), 1);
}

#[test]
fn initial_loss_is_near_ln_k() {
    let index = index();
    for (id, kind) in [("A2", ModelKind::Cnn), ("A8", ModelKind::CnnLstm), ("A5", ModelKind::CnnLstm)] {
        let mut c = config(id);
        c.model_kind = kind;
        let data = prepare_fold::<f32>(&c, &index).unwrap();
        let k = c.classes.len();
        for seed in 0..3 {
            let model = Model::<f32>::build(&c.model_spec(), seed).unwrap();
            let batch = &make_batches(&data.train_pool, data.train_pool.len(), None, &c.classes).unwrap()[0];
            let logits = model.infer(&batch.inputs).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &batch.labels).unwrap();
            let ln_k = (k as f32).ln();
            assert!((loss - ln_k).abs() <= 0.2 * ln_k, "{id} {kind:?} seed {seed}: loss {loss}, ln K {ln_k}");
        }
        let per_class: Vec<usize> = c.classes.iter().map(|&s| data.train_pool.iter().filter(|x| x.label == s).count()).collect();
        assert!(per_class.windows(2).all(|w| w[0] == w[1]), "balanced: {per_class:?}");
    }
}

#[test]
fn nan_input_is_rejected() {
    let (c, data) = fold("A2");
    let (mut train, val) = split_train_val(data.train_pool.clone(), 0.2, 1).unwrap();
    train.iter_mut().for_each(|s| s.data[0] = f32::NAN);
    let err = train_one_run(&c.model_spec(), &c.classes, &train, &val, &data.test, &c.repeat_settings(0));
    assert!(matches!(err, Err(TrainError::Model(ModelError::NonFiniteInput))), "{:?}", err.err());
}

#[test]
fn divergence_aborts_with_non_finite_loss() {
    let (c, data) = fold("A2");
    let (train, val) = split_train_val(data.train_pool.clone(), 0.2, 1).unwrap();
    let s = TrainSettings {
        learning_rate: 1e30,
        ..c.repeat_settings(0)
    };
    let err = train_one_run(&c.model_spec(), &c.classes, &train, &val, &data.test, &s);
    assert!(matches!(err, Err(TrainError::NonFiniteLoss { epoch: 1, .. })), "{:?}", err.err());
}

#[test]
fn double_precision_runs_too() {
    let c = config("A2");
    let data = prepare_fold::<f64>(&c, &index()).unwrap();
    let (train, val) = split_train_val(data.train_pool.clone(), 0.2, 1).unwrap();
    let s = TrainSettings { epochs: 1, ..c.repeat_settings(0) };
    let r = train_one_run(&c.model_spec(), &c.classes, &train, &val, &data.test, &s).unwrap();
    assert!(r.result.per_epoch[0].train_loss.is_finite());
    let spec = ModelSpec::new(ModelKind::Cnn, 1, 2);
    assert_eq!(r.model.spec(), &spec);
    assert_eq!(r.result.classes, vec![Stage::BeforeSlag, Stage::DuringSlag]);
}
