use criterion::{criterion_group, criterion_main, Criterion};
use groundwork_core::dcg::{infer, load_corpus, train, FactorGraph, TrainConfig};
use groundwork_core::parse::load_parse_tree;
use groundwork_core::percept::{run_perception, PerceptionConfig, PerceptionMode};
use groundwork_core::pipeline::{bundled, infer_detectors, run, Assets, RunOptions};
use std::hint::black_box;

fn grounding(c: &mut Criterion) {
    let assets = Assets::bundled().unwrap();
    let model = assets.perception_model().unwrap();
    let tree = load_parse_tree(bundled::OPEN_THE_DOOR).unwrap();
    let graph = FactorGraph::perception(&tree, &assets.space);
    c.bench_function("infer open the door", |b| b.iter(|| infer(black_box(&graph), model).unwrap()));
    let examples = load_corpus(bundled::PERCEPTION_CORPUS, &assets.space).unwrap();
    c.bench_function("train perception corpus", |b| {
        b.iter(|| train(black_box(&examples), &assets.space, &TrainConfig::default()).unwrap())
    });
}

fn perception(c: &mut Criterion) {
    let assets = Assets::bundled().unwrap();
    let tree = load_parse_tree(bundled::OPEN_THE_DOOR).unwrap();
    let active = infer_detectors(&tree, &assets.space, assets.perception_model().unwrap()).unwrap().detectors;
    let poses = vec![assets.scene.robot_start; assets.frame_budget];
    for mode in [PerceptionMode::Adaptive, PerceptionMode::Exhaustive] {
        let config =
            PerceptionConfig { active: active.clone(), mode, seed: 0, frame_budget: assets.frame_budget, association: assets.association };
        c.bench_function(&format!("perceive {} frames {}", assets.frame_budget, mode.tag()), |b| {
            b.iter(|| run_perception(&assets.scene, &assets.registry, black_box(&config), &poses).unwrap())
        });
    }
    c.bench_function("run open the door", |b| b.iter(|| run(black_box(&tree), &assets, &RunOptions::default())));
}

criterion_group!(benches, grounding, perception);
criterion_main!(benches);
