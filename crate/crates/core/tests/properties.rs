use std::collections::BTreeSet;

use groundwork_core::dcg::{infer, FactorGraph};
use groundwork_core::parse::{load_parse_tree, phrases_bottom_up};
use groundwork_core::percept::{
    run_perception, DetectorRegistry, PerceptionConfig, PerceptionLoop, PerceptionMode, Scene, SceneObject, Visibility,
};
use groundwork_core::pipeline::{bundled, infer_detectors, run, Assets, RunOptions};
use groundwork_core::symbols::{DetectorId, DetectorSet, SemanticLabel};
use groundwork_core::world::{Aabb, Association, Detection, LabelLink, Pose, WorldModel};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    ("[A-Z]{2,3}", "[a-z]{1,6}").prop_map(|(tag, w)| format!("({tag} {w})"))
}

fn phrase() -> impl Strategy<Value = String> {
    let leaf = (prop::sample::select(vec!["NP", "VP", "PP", "S"]), prop::collection::vec(word(), 1..3))
        .prop_map(|(label, items)| format!("({label} {})", items.join(" ")));
    leaf.prop_recursive(3, 16, 3, |inner| {
        (prop::sample::select(vec!["NP", "VP", "PP", "S"]), prop::collection::vec(prop_oneof![word(), inner], 1..4))
            .prop_map(|(label, items)| format!("({label} {})", items.join(" ")))
    })
}

proptest! {
    #[test]
    fn bracketed_round_trip(text in phrase(), pad in "[ \n\t]{0,3}") {
        let tree = load_parse_tree(&text).unwrap();
        prop_assert_eq!(tree.to_string(), text.clone());
        let spaced = text.replace(' ', &format!(" {pad}")).replace('(', &format!("{pad}("));
        prop_assert_eq!(load_parse_tree(&spaced).unwrap(), tree.clone());
        prop_assert_eq!(load_parse_tree(&tree.to_string()).unwrap(), tree);
    }

    #[test]
    fn indices_are_preorder_and_bottom_up_is_topological(text in phrase()) {
        let tree = load_parse_tree(&text).unwrap();
        let n = tree.phrase_count();
        let pre: Vec<usize> = tree.phrases().iter().map(|p| p.index()).collect();
        prop_assert_eq!(pre, (0..n).collect::<Vec<_>>());
        let order: Vec<usize> = phrases_bottom_up(&tree).iter().map(|p| p.index()).collect();
        let mut pos = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        for (i, p) in tree.parents().into_iter().enumerate() {
            if let Some(p) = p {
                prop_assert!(pos[i] < pos[p]);
                prop_assert!(p < i);
            }
        }
    }
}

fn registry(zero_fp: bool) -> DetectorRegistry {
    let mut r: DetectorRegistry = serde_json::from_str(bundled::DETECTORS).unwrap();
    if zero_fp {
        let ids: Vec<String> = r.detectors().iter().map(|d| d.id.to_string()).collect();
        for id in ids {
            r.get_mut(&id).unwrap().false_positive_rate = 0.0;
        }
    }
    r
}

const LABELS: [&str; 6] = ["pitcher", "cracker_box", "door", "ball", "suitcase", "door_handle"];

fn scene_strategy() -> impl Strategy<Value = Scene> {
    prop::collection::vec((0..5usize, 0.5f64..5.5, -3.0f64..3.0), 1..6).prop_map(|objs| {
        let objects = objs
            .into_iter()
            .enumerate()
            .map(|(i, (k, x, y))| SceneObject {
                name: format!("o{i}"),
                label: SemanticLabel::new(LABELS[k]).unwrap(),
                pose: Pose::planar(x, y, 0.0),
                bbox: Aabb::around([x, y, 0.5], [0.1, 0.1, 0.5]),
                parent: None,
            })
            .collect();
        Scene::new(objects, Visibility::default(), Pose::planar(0.0, 0.0, 0.0), vec![]).unwrap()
    })
}

fn subset_strategy() -> impl Strategy<Value = BTreeSet<usize>> {
    prop::collection::btree_set(0..6usize, 1..6)
}

fn set_of(ids: &BTreeSet<usize>) -> DetectorSet {
    DetectorSet { detectors: ids.iter().map(|&i| DetectorId::from(LABELS[i])).collect(), links: BTreeSet::new() }
}

fn poses(n: usize) -> Vec<Pose> {
    vec![Pose::planar(0.0, 0.0, 0.0); n]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perception_cost_is_additive(scene in scene_strategy(), a in subset_strategy(), b in subset_strategy(), seed in any::<u64>()) {
        let reg = registry(false);
        let only_a: BTreeSet<usize> = a.difference(&b).copied().collect();
        prop_assume!(!only_a.is_empty());
        let run = |s: &BTreeSet<usize>| run_perception(&scene, &reg, &PerceptionConfig::adaptive(set_of(s), seed, 10), &poses(10)).unwrap().1;
        let expected: f64 = a.iter().map(|&i| reg.get(LABELS[i]).unwrap().frame_cost).sum();
        let ma = run(&a);
        prop_assert!((ma.avg_period - expected).abs() < 1e-12);
        prop_assert!((ma.total_cost - 10.0 * expected).abs() < 1e-9);
        let union: BTreeSet<usize> = only_a.union(&b).copied().collect();
        let sum = run(&only_a).avg_period + run(&b).avg_period;
        prop_assert!((run(&union).avg_period - sum).abs() < 1e-12);
    }

    /// Activating more detectors never takes a true detection away.
    #[test]
    fn more_detectors_keep_true_detections(scene in scene_strategy(), a in subset_strategy(), extra in subset_strategy(), seed in any::<u64>()) {
        let reg = registry(false);
        let union: BTreeSet<usize> = a.union(&extra).copied().collect();
        let small_cfg = PerceptionConfig::adaptive(set_of(&a), seed, 5);
        let big_cfg = PerceptionConfig::adaptive(set_of(&union), seed, 5);
        let mut small = PerceptionLoop::new(&scene, &reg, &small_cfg).unwrap();
        let mut big = PerceptionLoop::new(&scene, &reg, &big_cfg).unwrap();
        let key = |d: &Detection| (d.source_detector.clone(), d.label.clone(), d.bbox.center().map(f64::to_bits));
        for p in poses(5) {
            let s: BTreeSet<_> = small.frame(&p).iter().filter(|d| !d.spurious).map(key).collect();
            let b: BTreeSet<_> = big.frame(&p).iter().filter(|d| !d.spurious).map(key).collect();
            prop_assert!(s.is_subset(&b));
        }
        let (wa, _) = run_perception(&scene, &reg, &small_cfg, &poses(5)).unwrap();
        let (wb, _) = run_perception(&scene, &reg, &big_cfg, &poses(5)).unwrap();
        prop_assert!(wa.labels().is_subset(&wb.labels()));
    }

    #[test]
    fn perception_is_seed_deterministic(scene in scene_strategy(), a in subset_strategy(), seed in any::<u64>(), exhaustive in any::<bool>()) {
        let reg = registry(false);
        let mut cfg = PerceptionConfig::adaptive(set_of(&a), seed, 20);
        if exhaustive {
            cfg.mode = PerceptionMode::Exhaustive;
        }
        let one = run_perception(&scene, &reg, &cfg, &poses(20)).unwrap();
        let two = run_perception(&scene, &reg, &cfg, &poses(20)).unwrap();
        prop_assert_eq!(serde_json::to_string(&one.0).unwrap(), serde_json::to_string(&two.0).unwrap());
        prop_assert_eq!(one.1, two.1);
    }

    /// Without false positives the world holds only labels the active
    /// detectors emit.
    #[test]
    fn adaptive_world_is_minimal(scene in scene_strategy(), a in subset_strategy(), seed in any::<u64>()) {
        let reg = registry(true);
        let (world, _) = run_perception(&scene, &reg, &PerceptionConfig::adaptive(set_of(&a), seed, 10), &poses(10)).unwrap();
        let emitted: BTreeSet<&str> = a.iter().map(|&i| LABELS[i]).collect();
        prop_assert!(world.labels().is_subset(&emitted));
    }

    /// Integration keeps the hierarchy a single layer whatever arrives.
    #[test]
    fn world_hierarchy_stays_flat(dets in prop::collection::vec((0..3usize, 0.0f64..3.0, 0.0f64..3.0), 1..40)) {
        let labels = ["door", "door_handle", "ball"];
        let links = [LabelLink::new(SemanticLabel::new("door").unwrap(), SemanticLabel::new("door_handle").unwrap()).unwrap()];
        let mut w = WorldModel::new();
        for (t, (k, x, y)) in dets.into_iter().enumerate() {
            let d = Detection {
                label: SemanticLabel::new(labels[k]).unwrap(),
                bbox: Aabb::around([x, y, 1.0], [0.3, 0.3, 0.5]),
                pose: Pose::planar(x, y, 0.0),
                timestamp: t as f64,
                source_detector: DetectorId::from(labels[k]),
                spurious: false,
            };
            w.integrate(&d, &links, &Association::default());
            prop_assert!(w.check_hierarchy().is_ok());
        }
        for o in w.objects() {
            if let Some(p) = o.parent {
                prop_assert_eq!(o.label.as_str(), "door_handle");
                prop_assert_eq!(w.get(p).unwrap().label.as_str(), "door");
            }
        }
    }
}

/// Detector inference is a function of the parse and the model alone.
#[test]
fn detector_inference_ignores_world_and_scene() {
    let assets = Assets::bundled().unwrap();
    let model = assets.perception_model().unwrap();
    let mut other_scene = assets.scene.clone();
    other_scene.objects.truncate(1);
    other_scene.objects[0].pose = Pose::planar(2.0, 1.0, 0.0);
    let mut worlds = vec![WorldModel::new()];
    let mut busy = WorldModel::new();
    for (i, l) in LABELS.iter().enumerate() {
        busy.insert(SemanticLabel::new(*l).unwrap(), Pose::planar(i as f64, 0.0, 0.0), Aabb::around([i as f64, 0.0, 0.5], [0.1; 3]), None)
            .unwrap();
    }
    worlds.push(busy);
    for text in [bundled::DRIVE_TO_THE_DOOR, bundled::OPEN_THE_DOOR, "(VP (VB turn) (NP (DT the) (NN handle)))"] {
        let tree = load_parse_tree(text).unwrap();
        let plain = infer(&FactorGraph::perception(&tree, &assets.space), model).unwrap();
        for w in &worlds {
            let with_world = FactorGraph::perception(&tree, &assets.space).with_world(Some(w.clone()));
            assert_eq!(infer(&with_world, model).unwrap(), plain);
        }
        let base = run(&tree, &assets, &RunOptions::default());
        let mut moved = Assets::bundled().unwrap();
        moved.scene = other_scene.clone();
        let shifted = run(&tree, &moved, &RunOptions::default());
        assert_eq!(base.grounding, shifted.grounding);
        assert_eq!(base.grounding.unwrap(), infer_detectors(&tree, &assets.space, model).unwrap());
    }
}
