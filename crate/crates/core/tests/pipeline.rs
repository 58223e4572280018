use transmat::data::glyphs::synth_digits;
use transmat::data::{
    generate_toy_lane_changes, label_and_weight, make_rotated_domain, GeneratorConfig, LabelConfig, ToyDomain,
};
use transmat::models::{build_converter, build_model, ConverterSpec, Model, ModelSpec};
use transmat::pipeline::{
    build_correspondences, execute_plan, pretrain_converter, train_correspondence, train_model, Domain, Mode,
    PretrainTarget, StageConfig, Step, TrainPlan,
};
use transmat::transforms::{make_euclidean, TransformMatrix};

fn toy(domain: ToyDomain, count: usize, seed: u64) -> Domain {
    let cfg = GeneratorConfig::default();
    let raw = generate_toy_lane_changes(&cfg, domain, count, seed).unwrap();
    Domain::Sequences(label_and_weight(&raw, &LabelConfig::default()).unwrap())
}

fn stage(epochs: usize, lr: f64) -> StageConfig {
    StageConfig { epochs, clip_norm: Some(5.0), ..StageConfig::with_lr(lr) }
}

fn base_tagger(source: &Domain) -> Model {
    let mut m = build_model(&ModelSpec::toy_tagger(), 1).unwrap();
    train_model(&mut m, source, &stage(3, 1e-2), 1).unwrap();
    m
}

fn plan(mode: Mode, steps: Vec<Step>, lambda: f64) -> TrainPlan {
    TrainPlan {
        mode,
        steps,
        lambda_corr: lambda,
        pretrain: stage(2, 1e-2),
        correspondence: stage(2, 1e-3),
        finetune: stage(3, 1e-2),
        seed: 9,
        ..TrainPlan::default()
    }
}

fn frob(a: &TransformMatrix, b: &TransformMatrix) -> f64 {
    a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn zero_epochs_leave_the_converter_unchanged() {
    let data = toy(ToyDomain::Noisy, 8, 3);
    let mut c = build_converter(&ConverterSpec::sequence(1), 4).unwrap();
    let before = c.clone();
    let log = pretrain_converter(&mut c, &data, PretrainTarget::DomainKnowledge, &stage(0, 1e-2), false, 1).unwrap();
    assert_eq!(c, before);
    assert!(log.train_loss.is_empty());
}

#[test]
fn mode1_without_correspondence_weight_equals_mode2() {
    let source = toy(ToyDomain::Clean, 30, 1);
    let target = toy(ToyDomain::Noisy, 12, 2);
    let base = base_tagger(&source);
    let conv = build_converter(&ConverterSpec::sequence(1), 5).unwrap();
    let steps = vec![Step::Pretrain, Step::Finetune];
    let m1 = execute_plan(&plan(Mode::Mode1, steps.clone(), 0.0), &base, Some(conv.clone()), &target, &source).unwrap();
    let m2 = execute_plan(&plan(Mode::Mode2, steps, 0.0), &base, Some(conv), &target, &source).unwrap();
    assert_eq!(m1.model, m2.model);
    assert_eq!(m1.converter, m2.converter);
    assert_eq!(m1.logs, m2.logs);
}

#[test]
fn frozen_identity_converter_matches_finetune_only() {
    let source = toy(ToyDomain::Clean, 30, 1);
    let target = toy(ToyDomain::Noisy, 12, 2);
    let test = toy(ToyDomain::Noisy, 10, 7);
    let base = base_tagger(&source);
    let mut conv = build_converter(&ConverterSpec::sequence(1), 5).unwrap();
    conv.zero_head();
    let ours = execute_plan(&plan(Mode::Mode0, vec![Step::Finetune], 0.0), &base, Some(conv.clone()), &target, &source)
        .unwrap();
    let ft = execute_plan(&plan(Mode::FinetuneOnly, vec![Step::Finetune], 0.0), &base, None, &target, &source).unwrap();
    assert_eq!(ours.model, ft.model);
    assert_eq!(ours.converter.as_ref(), Some(&conv));
    assert_eq!(ours.predict(&test).unwrap(), ft.predict(&test).unwrap());
}

#[test]
fn only_declared_parts_are_trained() {
    let source = toy(ToyDomain::Clean, 30, 1);
    let target = toy(ToyDomain::Noisy, 12, 2);
    let base = base_tagger(&source);
    let conv = build_converter(&ConverterSpec::sequence(1), 5).unwrap();
    let direct = build_converter(&ConverterSpec::DirectSequence { features: 1, hidden: 8 }, 5).unwrap();
    let all = vec![Step::Pretrain, Step::Correspondence, Step::Finetune];
    let cases = [
        (plan(Mode::Mode0, vec![Step::Finetune], 1.0), Some(conv.clone())),
        (plan(Mode::Mode1, all, 1.0), Some(conv.clone())),
        (plan(Mode::FinetuneOnly, vec![Step::Finetune], 1.0), None),
        (plan(Mode::Coral, vec![Step::Finetune], 1.0), None),
        (plan(Mode::Imp, vec![Step::Correspondence, Step::Finetune], 1.0), Some(direct)),
    ];
    for (p, c) in cases {
        let t = execute_plan(&p, &base, c.clone(), &target, &source).unwrap();
        for (before, after) in base.params.iter().zip(t.model.params.iter()) {
            if !before.name.starts_with("head.") {
                assert_eq!(before.value, after.value, "{} changed in mode {}", before.name, p.mode.name());
            }
        }
        assert_ne!(base.params.get("head.w"), t.model.params.get("head.w"));
        if p.mode == Mode::Mode0 {
            assert_eq!(t.converter, c);
        }
    }
}

#[test]
fn identity_pretraining_converges() {
    let data = toy(ToyDomain::Noisy, 40, 2);
    let held = toy(ToyDomain::Noisy, 10, 8);
    let mut c = build_converter(&ConverterSpec::sequence(1), 4).unwrap();
    pretrain_converter(&mut c, &data, PretrainTarget::Identity, &stage(10, 1e-2), false, 1).unwrap();
    let Domain::Sequences(s) = &held else { unreachable!() };
    let id = TransformMatrix::identity(1);
    let mut total = 0.0;
    let mut count = 0.0;
    for q in s {
        let x = transmat::Tensor::new(&[1, q.len(), 1], q.frames.clone()).unwrap();
        for m in c.matrices(&x).unwrap() {
            total += frob(&m, &id);
            count += 1.0;
        }
    }
    assert!(total / count < 0.05, "mean Frobenius error {}", total / count);
}

#[test]
fn rotation_pretraining_reaches_the_rotation() {
    let data = Domain::Images(make_rotated_domain(&synth_digits(200, 16, 3, "B").unwrap()));
    let mut c = build_converter(&ConverterSpec::image(16), 4).unwrap();
    let cfg = StageConfig { epochs: 20, patience: 0, ..StageConfig::with_lr(3e-2) };
    pretrain_converter(&mut c, &data, PretrainTarget::DomainKnowledge, &cfg, false, 1).unwrap();
    let held = make_rotated_domain(&synth_digits(20, 16, 11, "B").unwrap());
    let x = transmat::Tensor::new(&[20, 16, 16], held.pixels().to_vec()).unwrap();
    let rot = make_euclidean(std::f64::consts::PI, 0.0, 0.0);
    for m in c.matrices(&x).unwrap() {
        assert!(frob(&m, &rot) < 0.1, "{:?}", m.entries());
    }
}

#[test]
fn correspondence_training_descends() {
    let source = toy(ToyDomain::Clean, 40, 1);
    let target = toy(ToyDomain::Noisy, 20, 2);
    let set = build_correspondences(&target, &source, 5, 3).unwrap();
    let mut c = build_converter(&ConverterSpec::sequence(1), 4).unwrap();
    let cfg = StageConfig { batch_size: 4, ..stage(8, 1e-2) };
    let log = train_correspondence(&mut c, &target, &source, &set, &cfg, false, 1).unwrap();
    assert_eq!(log.train_loss.len(), log.val_loss.len());
    assert!(!log.train_loss.is_empty());
    assert!(log.train_loss.last().unwrap() < &log.initial_loss, "{log:?}");
    let best = log.val_loss.iter().cloned().fold(f64::INFINITY, f64::min).min(log.initial_loss);
    let kept = if log.best_epoch == 0 { log.initial_loss } else { log.val_loss[log.best_epoch - 1] };
    assert!(kept <= best * 1.1);
}

#[test]
fn identical_partners_keep_an_identity_converter() {
    let data = toy(ToyDomain::Clean, 12, 2);
    let set = build_correspondences(&data, &data, 1, 3).unwrap();
    // pair each sequence with itself
    let set = transmat::correspondence::CorrespondenceSet {
        n: 1,
        entries: set
            .entries
            .iter()
            .map(|e| transmat::correspondence::CorrespondenceEntry {
                target: e.target,
                partners: vec![e.target],
                offsets: vec![0],
            })
            .collect(),
    };
    let mut c = build_converter(&ConverterSpec::sequence(1), 4).unwrap();
    c.zero_head();
    let before = c.clone();
    let log = train_correspondence(&mut c, &data, &data, &set, &stage(2, 1e-3), false, 1).unwrap();
    assert!(log.initial_loss < 1e-12);
    for (a, b) in before.params.iter().zip(c.params.iter()) {
        let d = a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-6, "{} moved by {d}", a.name);
    }
}

#[test]
fn plans_reject_missing_components() {
    let source = toy(ToyDomain::Clean, 10, 1);
    let target = toy(ToyDomain::Noisy, 6, 2);
    let base = build_model(&ModelSpec::toy_tagger(), 1).unwrap();
    let conv = build_converter(&ConverterSpec::sequence(1), 5).unwrap();
    assert!(execute_plan(&plan(Mode::Mode2, vec![Step::Finetune], 0.0), &base, None, &target, &source).is_err());
    let imp = plan(Mode::Imp, vec![Step::Correspondence, Step::Finetune], 1.0);
    assert!(execute_plan(&imp, &base, Some(conv), &target, &source).is_err());
}
