use hoi_contact::checkpoint::Checkpoint;
use hoi_contact::config::RunConfig;
use hoi_contact::harness::{cmd_gen, cmd_train, train_model, TRAIN_LOG_FILE};
use hoi_contact::model::{AblationFlags, Model, ModelOutputs};
use hoi_contact::nn::Ctx;
use hoi_contact::scene::{generate_scene, ContactMap, SceneConfig, SceneSample};
use ndarray::{s, Array2};
use hoi_contact::train::Trainer;
use hoi_contact::{Error, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenes(n: u64) -> Vec<SceneSample> {
    (0..n).map(|i| generate_scene(100 + i, &SceneConfig::default()).unwrap()).collect()
}

fn config() -> RunConfig {
    let mut c = RunConfig::default();
    c.train.optimizer.lr = 1e-3;
    c
}

fn outputs<T: Scalar>(model: &Model<T>, s: &SceneSample) -> ModelOutputs<T> {
    model.predict(&s.image).unwrap()
}

#[test]
fn output_shapes() {
    let cfg = config();
    let m = Model::<f32>::new(&cfg.model, &cfg.scene.vocab, 0).unwrap();
    let s = &scenes(1)[0];
    let o = outputs(&m, s);
    assert_eq!(o.seg.dim(), (128, 128, 18));
    assert_eq!(o.contact_prior.len(), 17);
    assert_eq!(o.predictions.human_boxes.dim(), (16, 4));
    assert_eq!(o.predictions.object_logits.dim(), (16, 6));
    assert_eq!(o.predictions.action_logits.dim(), (16, 9));
    assert!(o.predictions.human_boxes.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(o.contact_prior.iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn flags_never_change_parameter_shapes() {
    let cfg = config();
    let full = Model::<f32>::new(&cfg.model, &cfg.scene.vocab, 0).unwrap();
    let mut c = cfg.model.clone();
    c.ablation = AblationFlags::baseline();
    let base = Model::<f32>::new(&c, &cfg.scene.vocab, 0).unwrap();
    assert_eq!(full.params.len(), base.params.len());
    for ((_, a), (_, b)) in full.params.iter().zip(base.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
}

/// Contact map with one labelled block.
fn block_map(y0: usize, x0: usize, part: u8) -> ContactMap {
    let mut m = ContactMap::zeros(128, 128);
    m.labels.slice_mut(s![y0..y0 + 24, x0..x0 + 24]).fill(part);
    m
}

fn action_logits_for(model: &Model<f64>, s: &SceneSample, seg: &ContactMap) -> Array2<f64> {
    let mut cx = Ctx::inference(&model.params);
    let img = Model::image_input(&mut cx, &s.image);
    let f = model.backbone.forward(&mut cx, img).unwrap();
    let memory = model.iim.encode(&mut cx, f);
    let st = model.iim.run_stacked_decoders(&mut cx, memory, model.config.iim.stages).unwrap();
    let (m, _) = model.region_feature(&mut cx, f, seg);
    let logits = model.iim.predict_actions(&mut cx, st.d_a, m);
    cx.g.value(logits).clone().into_dimensionality().unwrap()
}

#[test]
fn action_logits_ignore_segmentation_without_mask_guidance() {
    let cfg = config();
    let s = &scenes(1)[0];
    let (a, b) = (block_map(0, 0, 3), block_map(96, 96, 11));
    let mut mc = cfg.model.clone();
    mc.ablation.mask_guided_enabled = false;
    let off = Model::<f64>::new(&mc, &cfg.scene.vocab, 4).unwrap();
    assert_eq!(action_logits_for(&off, s, &a), action_logits_for(&off, s, &b));

    let on = Model::<f64>::new(&cfg.model, &cfg.scene.vocab, 4).unwrap();
    assert_ne!(action_logits_for(&on, s, &a), action_logits_for(&on, s, &b));
}

#[test]
fn precision_cast_agrees() {
    let cfg = config();
    let m64 = Model::<f64>::new(&cfg.model, &cfg.scene.vocab, 2).unwrap();
    let m32: Model<f32> = m64.cast();
    let s = &scenes(1)[0];
    let (a, b) = (outputs(&m64, s), outputs(&m32, s));
    for (x, y) in a.predictions.action_logits.iter().zip(b.predictions.action_logits.iter()) {
        assert!((x - *y as f64).abs() < 1e-3, "{x} vs {y}");
    }
    for (x, y) in a.seg.iter().zip(b.seg.iter()) {
        assert!((x - *y as f64).abs() < 1e-3);
    }
}

fn losses(trainer: &mut Trainer<f32>, data: &[SceneSample]) -> Vec<f64> {
    trainer.fit(data, |_| Ok(())).unwrap().iter().map(|r| r.loss.total).collect()
}

#[test]
fn fixed_seed_reproduces_loss_curve() {
    let mut cfg = config();
    cfg.train.max_steps = Some(4);
    let data = scenes(6);
    let run = |cfg: &RunConfig| {
        let mut curve = Vec::new();
        train_model::<f32>(cfg, &data, |r| {
            curve.push(r.loss.total);
            Ok(())
        })
        .unwrap();
        curve
    };
    let (a, b) = (run(&cfg), run(&cfg));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    cfg.seed = 1;
    let c = run(&cfg);
    assert_ne!(a, c);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut cfg = config();
    cfg.train.max_steps = Some(5);
    cfg.train.teacher_force_epochs = 1;
    let data = scenes(6);
    let full = {
        let m = Model::<f32>::new(&cfg.model, &cfg.scene.vocab, cfg.seed).unwrap();
        let mut t = Trainer::new(m, cfg.train.clone(), cfg.loss, cfg.seed).unwrap();
        losses(&mut t, &data)
    };
    let mut first = cfg.clone();
    first.train.max_steps = Some(3);
    let m = Model::<f32>::new(&cfg.model, &cfg.scene.vocab, cfg.seed).unwrap();
    let mut t = Trainer::new(m, first.train.clone(), cfg.loss, cfg.seed).unwrap();
    let mut curve = losses(&mut t, &data);
    let bytes = Checkpoint::from_trainer(&t, &cfg).to_bytes().unwrap();
    let mut resumed = Checkpoint::<f32>::from_bytes(&bytes).unwrap().into_trainer().unwrap();
    assert_eq!(resumed.step, 3);
    curve.extend(losses(&mut resumed, &data));
    assert_eq!(curve, full);
}

#[test]
fn checkpoint_reproduces_logits() {
    let cfg = config();
    let data = scenes(4);
    let mut small = cfg.clone();
    small.train.max_steps = Some(2);
    let t = train_model::<f64>(&small, &data, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    Checkpoint::from_trainer(&t, &small).save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    for s in &data {
        assert_eq!(outputs(&t.model, s), outputs(&back.model, s));
    }
    let t32 = train_model::<f32>(&small, &data, |_| Ok(())).unwrap();
    Checkpoint::from_trainer(&t32, &small).save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    let (a, b) = (outputs(&t32.model, &data[0]), outputs(&back.model, &data[0]));
    for (x, y) in a.predictions.action_logits.iter().zip(b.predictions.action_logits.iter()) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn alpha_zero_drops_matching_term() {
    let mut cfg = config();
    cfg.loss.alpha = 0.0;
    let data = scenes(2);
    let m = Model::<f64>::new(&cfg.model, &cfg.scene.vocab, 0).unwrap();
    let mut cx = Ctx::new(&m.params, true, ChaCha8Rng::seed_from_u64(0));
    let refs: Vec<&SceneSample> = data.iter().collect();
    let out = m.batch_loss(&mut cx, &refs, false, &cfg.loss).unwrap();
    for r in &out.per_sample {
        assert!(r.match_loss > 0.0);
        assert!((r.total - 0.5 * (r.bce_loss + r.ce_loss)).abs() < 1e-12);
    }
    let mean: f64 = out.per_sample.iter().map(|r| r.total).sum::<f64>() / 2.0;
    assert!((out.mean.total - mean).abs() < 1e-12);
}

#[test]
fn cpam_off_drops_bce() {
    let mut cfg = config();
    cfg.model.ablation.cpam_enabled = false;
    let data = scenes(1);
    let m = Model::<f64>::new(&cfg.model, &cfg.scene.vocab, 0).unwrap();
    let mut cx = Ctx::new(&m.params, true, ChaCha8Rng::seed_from_u64(0));
    let out = m.batch_loss(&mut cx, &[&data[0]], true, &cfg.loss).unwrap();
    let r = &out.per_sample[0];
    assert_eq!(r.bce_loss, 0.0);
    assert!((r.total - (0.1 * r.match_loss + 0.5 * r.ce_loss)).abs() < 1e-12);
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let cfg = config();
    let data = scenes(4);
    let mut m = Model::<f32>::new(&cfg.model, &cfg.scene.vocab, 0).unwrap();
    let id = m.params.id("cpam.head.bias").unwrap();
    m.params.set(id, m.params.get(id).mapv(|_| f32::NAN));
    let mut t = Trainer::new(m, cfg.train.clone(), cfg.loss, 0).unwrap();
    let err = t.fit(&data, |_| Ok(())).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, breakdown } => {
            assert_eq!(step, 0);
            assert!(breakdown.contains("bce=NaN"), "{breakdown}");
        }
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn one_step_writes_a_complete_log_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.data.dir = dir.path().join("data");
    cfg.data.train_samples = 1;
    cfg.data.eval_samples = 1;
    cfg.out_dir = dir.path().join("run");
    cfg.train.max_steps = Some(1);
    cmd_gen(&cfg).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    assert_eq!(summary.steps, 1);
    let text = std::fs::read_to_string(cfg.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for k in ["match_loss", "bce_loss", "ce_loss", "total"] {
        assert!(v[k].as_f64().unwrap().is_finite(), "{k}");
    }
    assert!(summary.checkpoint.exists());
}
