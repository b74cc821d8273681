use std::collections::BTreeSet;

use super::*;
use crate::compiler::{GraphNode, NodeKind};
use crate::grounding::GroundingResult;
use crate::scene::{BoundingBox, Split};
use crate::synth::{gen_dataset_scene, generate_dataset, SplitCounts, WorldSpec};
use crate::treebank::Span;

fn tiny_config() -> TrainConfig {
    TrainConfig { hidden: 4, embed: 6, epochs: 2, seed: 5, ..TrainConfig::default() }
}

fn tiny_dataset(train: usize, val: usize, test: usize) -> Vec<Scene> {
    generate_dataset(&WorldSpec { split: SplitCounts { train, val, test }, seed: 11, ..WorldSpec::default() }).unwrap()
}

fn model_for(scenes: &[Scene], config: &TrainConfig) -> GroundNet {
    let model_config = ModelConfig { hidden: config.hidden, embed: config.embed, vis_dim: 10, ..ModelConfig::default() };
    GroundNet::new(model_config, Vocabulary::from_words(scenes.iter().flat_map(|s| s.expression.iter())), config.seed)
}

#[test]
fn paper_schedule() {
    let want = [0.01, 0.004, 0.0016, 0.00064, 0.000256, 0.0001024];
    let got = TrainConfig::default().lr_schedule();
    assert_eq!(got.len(), 6);
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-15 * b.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn config_validation_and_toml() {
    let c = TrainConfig::from_toml("epochs = 3\nseed = 7\nsupporting_from = \"locate_only\"\n").unwrap();
    assert_eq!((c.epochs, c.seed, c.supporting_from), (3, 7, SupportingFrom::LocateOnly));
    assert_eq!(c.lr0, 0.01);
    assert!(TrainConfig::from_toml("lr_decay = 1.5").is_err());
    assert!(TrainConfig::from_toml("epochs = 0").is_err());
    assert!(TrainConfig::from_toml("learning_rate = 0.1").is_err());
    let text = toml::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(TrainConfig::from_toml(&text).unwrap(), TrainConfig::default());
}

#[test]
fn weight_decay_gradient_matches_differences() {
    let w = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.5, 2.0, -0.1, 0.7]).unwrap();
    let lambda = 0.0005;
    let (_, grad) = weight_decay_term(&w, lambda);
    let h = 1e-5;
    for k in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[k] += h;
        let mut minus = w.clone();
        minus.data_mut()[k] -= h;
        let fd = (weight_decay_term(&plus, lambda).0 - weight_decay_term(&minus, lambda).0) / (2.0 * h);
        assert!((fd - grad.data()[k]).abs() < 1e-9);
        assert!((grad.data()[k] - 2.0 * lambda * w.data()[k]).abs() < 1e-18);
    }
}

#[test]
fn instance_gradient_includes_decay() {
    let scenes = tiny_dataset(12, 0, 0);
    let scene = scenes.iter().find(|s| s.supporting.len() == 2).expect("a depth-3 scene");
    let config = TrainConfig { weight_decay: 0.05, ..tiny_config() };
    let trainer = Trainer::new(model_for(&scenes, &config), config);
    let instance = Instance { scene, graph: compile_scene(scene, &Lexicon::default()).unwrap() };
    let (_, grads) = trainer.gradients(&instance).unwrap();
    let h = 1e-5;
    let names: Vec<String> = trainer.model.named_params().into_iter().map(|(n, _)| n).collect();
    for (p, name) in names.iter().enumerate() {
        for k in [0, grads[p].len() / 2, grads[p].len() - 1] {
            let loss_at = |delta: f64| {
                let mut t = trainer.clone();
                t.model.params_mut()[p].data_mut()[k] += delta;
                t.gradients(&instance).unwrap().0
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let analytic = grads[p].data()[k];
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(rel < 1e-4, "{name}[{k}]: fd {fd} analytic {analytic}");
        }
    }
}

#[test]
fn overfits_one_instance() {
    let spec = WorldSpec { max_depth: 2, ..WorldSpec::default() };
    let scene = (0..)
        .map(|id| gen_dataset_scene(&spec, id).unwrap().scene)
        .find(|s| s.supporting.len() == 1)
        .unwrap();
    let scenes = vec![scene];
    let config = TrainConfig { hidden: 8, embed: 8, grad_clip: 0.0, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model_for(&scenes, &config), config);
    let instance = Instance { scene: &scenes[0], graph: compile_scene(&scenes[0], &Lexicon::default()).unwrap() };
    let losses: Vec<f64> = (0..200).map(|_| trainer.step(&instance, 0.1).unwrap().loss).collect();
    let smoothed: Vec<f64> = losses.chunks(20).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for pair in smoothed.windows(2) {
        assert!(pair[1] < pair[0], "{smoothed:?}");
    }
    let result = grounding::execute(&trainer.model, &instance.graph, &scenes[0]).unwrap();
    assert!(result.root_distribution()[scenes[0].target_index()] > 0.9);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let scenes = tiny_dataset(6, 0, 0);
    let config = TrainConfig { lr0: 0.0, ..tiny_config() };
    let before = model_for(&scenes, &config).to_named_tensors();
    let checkpoint = train(&scenes, &config, |_| {}).unwrap();
    assert_eq!(checkpoint.params, before);
}

#[test]
fn training_is_reproducible() {
    let scenes = tiny_dataset(8, 2, 2);
    let mut lines = Vec::new();
    let a = train(&scenes, &tiny_config(), |s| lines.push(s.clone())).unwrap();
    let b = train(&scenes, &tiny_config(), |_| {}).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(lines, a.history);
    assert_eq!(a.history.len(), 2);
    assert!(a.history.iter().all(|h| h.val_accuracy.is_some()));
    assert_eq!(a.history[1].lr, 0.004);
    let c = train(&scenes, &TrainConfig { seed: 6, ..tiny_config() }, |_| {}).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn empty_training_split() {
    let scenes = tiny_dataset(0, 0, 3);
    assert!(matches!(train(&scenes, &tiny_config(), |_| {}), Err(TrainError::EmptyTrainingSet)));
}

#[test]
fn checkpoint_round_trip() {
    let scenes = tiny_dataset(4, 0, 0);
    let checkpoint = train(&scenes, &TrainConfig { epochs: 1, ..tiny_config() }, |_| {}).unwrap();
    let text = checkpoint.to_text();
    let back = Checkpoint::from_text(&text).unwrap();
    assert_eq!(back, checkpoint);
    assert_eq!(back.to_model().unwrap().to_named_tensors(), checkpoint.params);
    let wrong = text.replace("\"version\":1", "\"version\":9");
    assert!(matches!(Checkpoint::from_text(&wrong), Err(TrainError::Checkpoint(_))));
}

#[test]
fn evaluate_is_pure() {
    let scenes = tiny_dataset(4, 0, 20);
    let checkpoint = train(&scenes, &TrainConfig { epochs: 1, ..tiny_config() }, |_| {}).unwrap();
    let model = checkpoint.to_model().unwrap();
    let a = evaluate(&model, &scenes, SupportingFrom::AllIntermediate).unwrap();
    let b = evaluate(&model, &scenes, SupportingFrom::AllIntermediate).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.instances, 24);
    assert_eq!(a.supporting_instances, scenes.iter().filter(|s| !s.supporting.is_empty()).count());
    let table = a.table();
    assert!(table.contains(&format!("{:>9}", a.supporting_instances)));
}

fn four_box_scene(supporting: &[u32]) -> Scene {
    let boxes = (0..4)
        .map(|i| BoundingBox {
            id: [2, 3, 5, 8][i],
            xmin: 10.0 * i as f64,
            ymin: 0.0,
            xmax: 10.0 * i as f64 + 5.0,
            ymax: 5.0,
            features: vec![0.0],
        })
        .collect();
    Scene {
        id: 0,
        split: Split::Test,
        width: 50.0,
        height: 10.0,
        expression: vec![],
        parse: String::new(),
        boxes,
        target: 2,
        supporting: supporting.iter().copied().collect(),
    }
}

fn three_node_graph() -> ComputationGraph {
    let node = |id, kind, inputs| GraphNode { id, kind, phrase: vec![], inputs, source_span: Span::new(0, 1) };
    ComputationGraph {
        expression: vec![],
        root: 3,
        nodes: vec![
            node(0, NodeKind::Locate, vec![]),
            node(1, NodeKind::Locate, vec![]),
            node(2, NodeKind::Relate, vec![1]),
            node(3, NodeKind::Intersect, vec![0, 2]),
        ],
    }
}

fn one_hot(k: usize) -> Vec<f64> {
    let mut v = vec![0.0; 4];
    v[k] = 1.0;
    v
}

#[test]
fn supporting_is_any_intermediate_hit() {
    // Intermediate argmaxes are boxes 3 and 5; the root picks box 2.
    let result = GroundingResult::new(3, vec![one_hot(1), one_hot(2), one_hot(1), one_hot(0)]);
    let scene = four_box_scene(&[5]);
    let r = score_instance(&scene, &three_node_graph(), &result, SupportingFrom::AllIntermediate);
    assert_eq!(r.supporting_predicted, BTreeSet::from([3, 5]));
    assert_eq!(r.supporting_correct, Some(true));
    assert!(r.target_correct);

    let result = GroundingResult::new(3, vec![one_hot(1), one_hot(1), one_hot(2), one_hot(0)]);
    let relate_only = score_instance(&scene, &three_node_graph(), &result, SupportingFrom::LocateOnly);
    assert_eq!(relate_only.supporting_correct, Some(false));

    let none = score_instance(&four_box_scene(&[]), &three_node_graph(), &result, SupportingFrom::AllIntermediate);
    assert_eq!(none.supporting_correct, None);
    let report = EvalReport::from_records(vec![r, none]);
    assert_eq!((report.supporting_instances, report.supporting_correct), (1, 1));
    assert_eq!(report.target_accuracy, 1.0);
}
