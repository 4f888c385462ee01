mod common;

use std::path::Path;

use autograd::{Graph, Tensor};
use common::{rng, uniform};
use thermofront::data::{generate_synthetic_dataset, load_manifest, Dataset, PairBatch};
use thermofront::losses::domain_classification_loss;
use thermofront::nets::{domain_classifier_forward, encoder_forward, ParamStore};
use thermofront::training::*;
use thermofront::Error;

/// A 32 px model small enough to train for hundreds of steps in a test.
fn small_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            image_size: 32,
            encoder_channels: vec![4, 8, 8],
            critic_channels: vec![4, 8],
            classifier_hidden: [16, 8],
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

/// Hand-built batch of `pairs` pairs at `size` px with half of them same-identity.
fn batch(pairs: usize, size: usize, seed: u64) -> PairBatch {
    let mut r = rng(seed);
    let mut img = || uniform::<f32>(&[pairs, 3, size, size], &mut r);
    let (x1, x2, y1, y2) = (img(), img(), img(), img());
    let gate = |k: usize| {
        let data: Vec<f32> = (0..pairs * 3 * size * size)
            .map(|i| if (i / size + k).is_multiple_of(3) { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(&[pairs, 3, size, size], data)
    };
    PairBatch {
        x1,
        x2,
        y1,
        y2,
        m1: gate(0),
        m2: gate(1),
        same: (0..pairs).map(|i| (i % 2) as f64).collect(),
        identities: (0..pairs).map(|i| (format!("a{i}"), format!("b{i}"))).collect(),
    }
}

fn only(flags: impl FnOnce(&mut AblationFlags)) -> AblationFlags {
    let mut f = AblationFlags {
        pixel: false,
        multiscale_pixel: false,
        identity_loss: false,
        self_attention: false,
        local_critic: false,
        equalization: false,
        cls_loss: false,
        contrastive_loss: false,
    };
    flags(&mut f);
    f
}

fn same_store<T: autograd::Float>(a: &ParamStore<T>, b: &ParamStore<T>) -> bool {
    a.names() == b.names() && a.tensors() == b.tensors()
}

#[test]
fn ten_steps_keep_books() {
    let mut state = init_trainer::<f32>(small_config()).unwrap();
    let b = batch(2, 32, 1);
    let records: Vec<_> = (0..10).map(|_| state.train_step(&b).unwrap()).collect();
    assert_eq!(state.step, 10);
    assert_eq!(
        records.iter().map(|r| r.step).collect::<Vec<_>>(),
        (1..=10).collect::<Vec<_>>()
    );
    assert!(records.iter().all(|r| r.non_finite_term().is_none()));
}

#[test]
fn pixel_only_regression_halves_its_loss() {
    let data = tempfile::tempdir().unwrap();
    let ds = synthetic(data.path(), 4);
    let mut cfg = tiny_full_size();
    cfg.model.encoder_channels = vec![8, 16, 16, 32, 32];
    cfg.ablation = only(|f| f.pixel = true);
    cfg.loss.lambda_adv = 0.0;
    cfg.loss.lambda_tv = 0.0;
    let mut state = init_trainer::<f32>(cfg).unwrap();
    let b = state.sample_batch(&ds).unwrap();
    let records: Vec<_> = (0..200).map(|_| state.train_step(&b).unwrap()).collect();
    for r in &records {
        assert!(
            (r.total - r.pixel).abs() <= 1e-6 * r.pixel,
            "{} vs {}",
            r.total,
            r.pixel
        );
        assert_eq!((r.id, r.adv_g, r.cls, r.contrastive, r.gp), (0.0, 0.0, 0.0, 0.0, 0.0));
    }
    let (first, last) = (records[0].pixel, records[199].pixel);
    assert!(last <= 0.5 * first, "pixel loss {first} -> {last}");
}

fn cls_only_config(lambda_grl: f64) -> TrainConfig {
    let mut cfg = small_config();
    cfg.ablation = only(|f| f.cls_loss = true);
    cfg.loss.lambda_adv = 0.0;
    cfg.loss.lambda_tv = 0.0;
    cfg.loss.lambda_grl = lambda_grl;
    cfg
}

fn encoder_names(p: &ParamStore<f64>) -> Vec<String> {
    p.names().iter().filter(|n| n.starts_with("enc")).cloned().collect()
}

#[test]
fn zero_reversal_scale_freezes_encoder() {
    let mut state = init_trainer::<f64>(cls_only_config(0.0)).unwrap();
    let before = state.clone();
    state.train_step(&batch(2, 32, 3)).unwrap();
    assert!(same_store(&state.generator.params, &before.generator.params));
    assert!(!same_store(&state.classifier.params, &before.classifier.params));

    let mut state = init_trainer::<f64>(cls_only_config(0.01)).unwrap();
    state.train_step(&batch(2, 32, 3)).unwrap();
    for n in encoder_names(&state.generator.params) {
        assert_ne!(state.generator.params.get(&n), before.generator.params.get(&n), "{n}");
    }
}

/// Classifier loss on the bottlenecks of a batch, as a function of one generator parameter.
fn cls_loss_at(state: &TrainerState<f64>, b: &PairBatch, name: &str, value: &Tensor<f64>) -> f64 {
    let mut gen = state.generator.clone();
    *gen.params.get_mut(name).unwrap() = value.clone();
    let g = Graph::new();
    let p = gen.bind(&g, false);
    let c = state.classifier.bind(&g, false);
    let latents: Vec<_> = [&b.x1, &b.x2, &b.y1, &b.y2]
        .iter()
        .map(|x| encoder_forward(g.constant(x.cast::<f64>()), &p).unwrap().bottleneck)
        .collect();
    let n = b.len();
    let labels: Vec<f64> = [0.0, 1.0].iter().flat_map(|&k| std::iter::repeat_n(k, 2 * n)).collect();
    let prob = domain_classifier_forward(autograd::Var::concat(&latents, 0), &c).unwrap();
    domain_classification_loss(prob, &labels).unwrap().value().item()
}

#[test]
fn reversal_step_ascends_classifier_loss() {
    let (lambda_grl, lr) = (0.5, 0.1);
    let mut cfg = cls_only_config(lambda_grl);
    cfg.optimizer.kind = OptimizerKind::Sgd;
    cfg.learning_rate = lr;
    let mut state = init_trainer::<f64>(cfg).unwrap();
    let before = state.clone();
    let b = batch(2, 32, 4);
    state.train_step(&b).unwrap();

    for name in ["enc0.weight", "enc1.bias", "enc2.weight"] {
        let theta = before.generator.params.get(name).unwrap().clone();
        let fd = autograd::check::central_difference(|v| cls_loss_at(&before, &b, name, v), &theta, 1e-4);
        let expected = fd.map(|d| lr * lambda_grl * d);
        let delta = state.generator.params.get(name).unwrap().zip_map(&theta, |a, b| a - b);
        let err = autograd::check::relative_error(&delta, &expected, 1e-12);
        assert!(err < 1e-3, "{name}: relative error {err}");
    }
    for name in before.generator.params.names().iter().filter(|n| !n.starts_with("enc")) {
        assert_eq!(
            state.generator.params.get(name),
            before.generator.params.get(name),
            "{name}"
        );
    }
}

#[test]
fn phases_touch_only_their_own_parameters() {
    let mut cfg = small_config();
    cfg.critic_steps = 2;
    let mut state = init_trainer::<f32>(cfg).unwrap();
    let b = batch(2, 32, 5);
    for _ in 0..3 {
        let before = state.clone();
        let mut after_critic = None;
        state
            .train_step_observed(&b, &mut |phase, s| match phase {
                Phase::Critic => {
                    assert!(same_store(&s.generator.params, &before.generator.params));
                    assert!(same_store(&s.classifier.params, &before.classifier.params));
                    assert!(!same_store(&s.global_critic.params, &before.global_critic.params));
                    assert!(!same_store(&s.local_critic.params, &before.local_critic.params));
                    after_critic = Some(s.clone());
                }
                Phase::Generator => {
                    let c = after_critic.as_ref().expect("critic phase ran first");
                    assert!(same_store(&s.global_critic.params, &c.global_critic.params));
                    assert!(same_store(&s.local_critic.params, &c.local_critic.params));
                    assert!(!same_store(&s.generator.params, &c.generator.params));
                }
            })
            .unwrap();
    }
}

#[test]
fn both_paths_share_one_generator() {
    let mut state = init_trainer::<f32>(small_config()).unwrap();
    let b = batch(2, 32, 6);
    for _ in 0..5 {
        state.train_step(&b).unwrap();
    }
    let x = uniform::<f32>(&[2, 3, 32, 32], &mut rng(7));
    let (a, c) = state.dual_path_forward(&x, &x).unwrap();
    assert_eq!(a, c);
}

#[test]
fn init_is_deterministic_with_zero_gamma() {
    let a = init_trainer::<f32>(small_config()).unwrap();
    let b = init_trainer::<f32>(small_config()).unwrap();
    for (x, y) in [
        (&a.generator.params, &b.generator.params),
        (&a.global_critic.params, &b.global_critic.params),
        (&a.local_critic.params, &b.local_critic.params),
        (&a.classifier.params, &b.classifier.params),
    ] {
        assert!(same_store(x, y));
    }
    assert_eq!(a.generator.params.get("attn.gamma").unwrap().item(), 0.0);
    assert!(!same_store(&a.global_critic.params, &a.local_critic.params));

    let mut other = small_config();
    other.seed = 8;
    let c = init_trainer::<f32>(other).unwrap();
    assert!(!same_store(&a.generator.params, &c.generator.params));
}

#[test]
fn default_parameter_counts_match_closed_form() {
    let state = init_trainer::<f32>(TrainConfig::default()).unwrap();
    let counts = state.parameter_counts();
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let linear = |i: usize, o: usize| i * o + o;
    let enc = [(3, 32), (32, 64), (64, 128), (128, 256), (256, 512)];
    let dec = [(512, 256), (512, 128), (256, 64), (128, 32), (64, 32)];
    let generator = enc.iter().chain(&dec).map(|&(i, o)| conv(i, o, 3)).sum::<usize>()
        + conv(128, 3, 1)
        + conv(64, 3, 1)
        + conv(32, 3, 3)
        + 2 * conv(512, 64, 1)
        + conv(512, 512, 1)
        + 1;
    let critic = [(3, 16), (16, 32), (32, 64), (64, 128), (128, 256)]
        .iter()
        .map(|&(i, o)| conv(i, o, 3))
        .sum::<usize>()
        + linear(256 * 4 * 4, 1);
    let classifier = linear(512 * 4 * 4, 128) + linear(128, 64) + linear(64, 1);
    assert_eq!(
        counts,
        ParameterCounts {
            generator,
            global_critic: critic,
            local_critic: critic,
            classifier,
        }
    );
    assert_eq!(counts.total(), generator + 2 * critic + classifier);
}

#[test]
fn non_finite_loss_names_the_term() {
    let mut cfg = small_config();
    cfg.loss.lambda_adv = 0.0;
    // The classifier flow would reject the target at the encoder input instead.
    cfg.ablation.cls_loss = false;
    let mut state = init_trainer::<f32>(cfg).unwrap();
    let mut b = batch(2, 32, 8);
    b.y1.data_mut()[17] = f32::NAN;
    match state.train_step(&b) {
        Err(e @ Error::NonFiniteLoss { step: 1, .. }) => assert!(e.to_string().contains("`pixel`"), "{e}"),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

// ---- configuration ----

#[test]
fn config_defaults_and_toml_round_trip() {
    let c = TrainConfig::default();
    assert_eq!(
        (c.learning_rate, c.batch_size, c.critic_steps, c.same_id_fraction),
        (0.01, 8, 1, 0.5)
    );
    assert_eq!((c.optimizer.beta1, c.optimizer.beta2), (0.0, 0.99));
    assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    let partial = TrainConfig::from_toml("steps = 12\n[loss]\nlambda_id = 3.0\n").unwrap();
    assert_eq!((partial.steps, partial.loss.lambda_id, partial.seed), (12, 3.0, c.seed));
    assert!(matches!(TrainConfig::from_toml("stepz = 1"), Err(Error::Config(_))));
}

#[test]
fn overrides_edit_existing_keys_only() {
    let mut c = TrainConfig::default();
    c.apply_override("loss.lambda_id=0").unwrap();
    assert_eq!(c.loss.lambda_id, 0.0);
    c.apply_override("ablation.self_attention = false").unwrap();
    assert!(!c.ablation.self_attention);
    c.apply_override("steps=42").unwrap();
    assert_eq!(c.steps, 42);
    c.apply_override("optimizer.kind=sgd").unwrap();
    assert_eq!(c.optimizer.kind, OptimizerKind::Sgd);
    for bad in ["loss.lambda_nope=1", "loss=1", "steps", "steps=abc"] {
        assert!(matches!(c.apply_override(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let edits: [fn(&mut TrainConfig); 5] = [
        |c| c.learning_rate = 0.0,
        |c| c.batch_size = 7,
        |c| c.critic_steps = 0,
        |c| c.same_id_fraction = 1.5,
        |c| c.model.image_size = 100,
    ];
    for edit in edits {
        let mut c = TrainConfig::default();
        edit(&mut c);
        assert!(c.validate().is_err());
        assert!(init_trainer::<f32>(c).is_err());
    }
}

// ---- runs, logs and checkpoints ----

/// A 128 px model with few channels, for end-to-end runs on generated data.
fn tiny_full_size() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            image_size: 128,
            encoder_channels: vec![4, 4, 8, 8, 8],
            critic_channels: vec![4, 4, 4, 4, 4],
            classifier_hidden: [8, 4],
        },
        batch_size: 4,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

fn synthetic(dir: &Path, identities: usize) -> Dataset {
    let m = generate_synthetic_dataset(identities, &[-30.0, 30.0], dir, 7).unwrap();
    Dataset::load(&load_manifest(&m).unwrap()).unwrap()
}

fn checkpoints(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir.join(CHECKPOINT_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn zero_steps_write_only_initial_checkpoint() {
    let data = tempfile::tempdir().unwrap();
    let ds = synthetic(data.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let mut c = tiny_full_size();
    c.steps = 0;
    let run = train(&c, &ds, out.path()).unwrap();
    assert_eq!(checkpoints(out.path()), vec!["step_000000.ckpt"]);
    assert!(run.records.is_empty());
    assert!(read_loss_log(&run.log).unwrap().is_empty());
}

#[test]
fn runs_are_reproducible_and_checkpoints_round_trip() {
    let data = tempfile::tempdir().unwrap();
    let ds = synthetic(data.path(), 4);
    let mut c = tiny_full_size();
    c.steps = 5;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&c, &ds, a.path()).unwrap();
    let rb = train(&c, &ds, b.path()).unwrap();
    assert_eq!(std::fs::read(&ra.log).unwrap(), std::fs::read(&rb.log).unwrap());
    assert_eq!(read_loss_log(&ra.log).unwrap(), ra.records);
    assert_eq!(ra.records.len(), 5);
    assert_eq!(
        checkpoints(a.path()),
        vec![
            "step_000000.ckpt",
            "step_000002.ckpt",
            "step_000004.ckpt",
            "step_000005.ckpt"
        ]
    );
    assert_eq!(ra.checkpoint, checkpoint_path(&a.path().join(CHECKPOINT_DIR), 5));

    let ck = load_checkpoint(&ra.checkpoint).unwrap();
    assert_eq!(ck.step, 5);
    assert_eq!(ck.config, c);
    assert!(same_store(&ck.generator.params, &ra.state.generator.params));
    assert!(same_store(&ck.global_critic.params, &ra.state.global_critic.params));
    assert!(same_store(&ck.local_critic.params, &ra.state.local_critic.params));
    assert!(same_store(&ck.classifier.params, &ra.state.classifier.params));

    let bytes = std::fs::read(&ra.checkpoint).unwrap();
    let broken = a.path().join("broken.ckpt");
    std::fs::write(&broken, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&broken), Err(Error::Checkpoint { .. })));
    std::fs::write(&broken, b"garbage").unwrap();
    assert!(matches!(load_checkpoint(&broken), Err(Error::Checkpoint { .. })));
}

#[test]
fn training_needs_two_identities() {
    let data = tempfile::tempdir().unwrap();
    let ds = synthetic(data.path(), 4).subset(&["id000"]);
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&tiny_full_size(), &ds, out.path()),
        Err(Error::InvalidArgument(_))
    ));
}

// ---- ablation ladder ----

fn flag_vector(f: &AblationFlags) -> [bool; 8] {
    [
        f.pixel,
        f.multiscale_pixel,
        f.identity_loss,
        f.self_attention,
        f.local_critic,
        f.equalization,
        f.cls_loss,
        f.contrastive_loss,
    ]
}

#[test]
fn ladder_adds_one_component_per_rung() {
    let rungs = ablation_ladder(&TrainConfig::default());
    assert_eq!(rungs.len(), 8);
    assert_eq!(rungs.iter().map(|r| r.name).collect::<Vec<_>>(), LADDER.to_vec());
    assert_eq!(
        flag_vector(&rungs[0].config.ablation),
        [true, false, false, false, false, false, false, false]
    );
    assert_eq!(rungs[7].config.ablation, AblationFlags::default());
    for w in rungs.windows(2) {
        let (a, b) = (flag_vector(&w[0].config.ablation), flag_vector(&w[1].config.ablation));
        let changed: Vec<usize> = (0..8).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(changed.len(), 1, "{} -> {}", w[0].name, w[1].name);
        assert!(b[changed[0]]);
    }
}

#[test]
fn ablation_grid_runs_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    let ds = synthetic(data.path(), 8);
    let (train_set, test_set) = ds.split_by_identity();
    let out = tempfile::tempdir().unwrap();
    let mut c = tiny_full_size();
    c.steps = 1;
    let mut seen = Vec::new();
    let results = run_ablation(&c, &train_set, &test_set, out.path(), &mut |r| {
        seen.push(r.name.clone())
    })
    .unwrap();
    assert_eq!(seen, LADDER.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for r in &results {
        let m = r.report.as_ref().unwrap();
        assert!((0.0..=100.0).contains(&m.auc));
    }
    let mut csv = Vec::new();
    write_ablation_csv(&mut csv, &results).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rung,auc,eer,tar_at_far_1,tar_at_far_5,error");
    assert_eq!(lines.len(), 9);
    assert!(out.path().join("0_baseline").join(LOG_NAME).exists());
    assert!(out.path().join("7_contrastive").join(LOG_NAME).exists());
}
