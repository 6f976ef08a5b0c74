use gatenet::data::{Dataset, SynthSpec};
use gatenet::train::*;
use gatenet::Error;

fn tiny(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::preset("tiny").unwrap();
    c.epochs = epochs;
    c.batch = 2;
    c.base_lr = 0.01;
    c.seed = 5;
    c
}

fn data(seed: u64, n: usize) -> Dataset {
    Dataset::synthetic(&SynthSpec::new(seed, n, 32)).unwrap()
}

#[test]
fn identical_runs_write_identical_logs_and_weights() {
    let (train_set, test_set) = (data(1, 6), data(2, 2));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outs = Vec::new();
    for d in &dirs {
        let opts = RunOptions { out_dir: Some(d.path().into()), ..Default::default() };
        outs.push(train(&tiny(2), &train_set, Some(&test_set), opts).unwrap());
    }
    assert_eq!(outs[0].net.params(), outs[1].net.params());
    for f in ["train_log.csv", "eval_log.csv", CHECKPOINT_FILE, "config.txt"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        assert_eq!(a, std::fs::read(dirs[1].path().join(f)).unwrap(), "{f}");
    }
    let log = std::fs::read_to_string(dirs[0].path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert_eq!(log.lines().next().unwrap(), ITER_CSV_HEADER);
    assert_eq!(outs[0].log.evals.len(), 2);
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let set = data(3, 6);
    let full = train(&tiny(2), &set, None, RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = tiny(2);
    first.max_iters = Some(4);
    let opts = RunOptions { out_dir: Some(dir.path().into()), ..Default::default() };
    let part = train(&first, &set, None, opts).unwrap();
    assert_eq!(part.log.iters.len(), 4);

    let ckpt = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.iteration, 4);
    let opts = RunOptions { out_dir: Some(dir.path().into()), resume: Some(ckpt), ..Default::default() };
    let rest = train(&tiny(2), &set, None, opts).unwrap();
    assert_eq!(rest.log.iters.len(), 2);

    assert_eq!(rest.net.params(), full.net.params());
    let joined: Vec<_> = part.log.iters.iter().chain(&rest.log.iters).cloned().collect();
    assert_eq!(joined, full.log.iters);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
}

#[test]
fn checkpoint_round_trip_gives_bitwise_equal_forward() {
    let set = data(4, 4);
    let out = train(&tiny(1), &set, None, RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gnet");
    let ck = Checkpoint {
        config: tiny(1).to_text(),
        iteration: 2,
        params: out.net.params().clone(),
        momentum: out.net.params().zeros_like(),
    };
    ck.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ck);
    let net = gatenet::model::GateNet::from_params(tiny(1).model, back.params).unwrap();
    let x = &set.samples[0].image;
    assert_eq!(net.forward(x).unwrap().final_map, out.net.forward(x).unwrap().final_map);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[40] ^= 1;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
}

#[test]
fn divergence_aborts_and_keeps_the_last_good_checkpoint() {
    let set = data(5, 8);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(3);
    cfg.base_lr = 1e30;
    cfg.checkpoint_every = 1;
    let opts = RunOptions { out_dir: Some(dir.path().into()), ..Default::default() };
    let err = train(&cfg, &set, None, opts).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let path = dir.path().join(CHECKPOINT_FILE);
    if path.exists() {
        let ck = Checkpoint::<f32>::load(&path).unwrap();
        assert!(ck.params.iter().all(|(_, t)| t.all_finite()));
        assert!(ck.momentum.iter().all(|(_, t)| t.all_finite()));
    }
}

#[test]
fn resume_rejects_a_different_configuration() {
    let set = data(6, 4);
    let mut t = Trainer::new(tiny(1), set.len()).unwrap();
    t.step(&set).unwrap();
    let ck = t.checkpoint();
    let mut other = tiny(1);
    other.base_lr = 0.02;
    let e = Trainer::resume(other, set.len(), ck.clone()).unwrap_err().to_string();
    assert!(e.contains("incompatible") && e.contains("lr"), "{e}");
    let mut wider = tiny(1);
    wider.model.backbone.block_channels = [3; 5];
    assert!(Trainer::resume(wider, set.len(), ck).is_err());
}

#[test]
fn schedule_decays_to_zero_and_loss_falls() {
    let set = data(7, 8);
    let mut cfg = tiny(6);
    cfg.augment = false;
    let out = train(&cfg, &set, None, RunOptions::default()).unwrap();
    let lrs: Vec<f64> = out.log.iters.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], cfg.base_lr);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.log.iters.iter().all(|r| r.loss.is_finite()));
    let (start, end) = out.log.loss_ends(4).unwrap();
    assert!(end < start, "{start} -> {end}");
}
