//! Simulated perception loop.
//!
//! Only the inferred detector set runs. Each frame every active detector
//! pays its fixed cost, reports every visible ground-truth object carrying
//! its label (with seeded pose jitter) and, with its false-positive rate,
//! one spurious detection somewhere in view. Cost is bookkept in integer
//! nanoseconds so periods add exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbols::{DetectorId, DetectorSet, SemanticLabel};
use crate::world::{normalize_angle, Aabb, Association, Detection, LabelLink, Pose, SharedWorld, WorldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("nothing to perceive: the active detector set is empty")]
    NothingToPerceive,
    #[error("detector `{0}` is not in the registry")]
    UnknownDetector(String),
    #[error("pose stream has {got} poses but {need} frames were requested")]
    ShortPoseStream { need: usize, got: usize },
    #[error("detector `{id}`: {message}")]
    BadDetector { id: String, message: String },
    #[error("duplicate detector `{0}` in registry")]
    DuplicateDetector(String),
    #[error("scene: {0}")]
    BadScene(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub id: DetectorId,
    pub emits_label: SemanticLabel,
    /// Seconds per frame.
    pub frame_cost: f64,
    #[serde(default)]
    pub false_positive_rate: f64,
    /// Standard deviation of pose jitter, meters.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Part of the exhaustive baseline pipeline.
    #[serde(default = "yes")]
    pub baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

fn yes() -> bool {
    true
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |message: &str| PerceptionError::BadDetector { id: self.id.to_string(), message: message.into() };
        if !(self.frame_cost > 0.0 && self.frame_cost.is_finite()) {
            return Err(bad("frame_cost must be positive"));
        }
        if !(0.0..1.0).contains(&self.false_positive_rate) {
            return Err(bad("false_positive_rate must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(bad("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn display(&self) -> &str {
        self.display_name.as_deref().unwrap_or(self.id.as_str())
    }

    fn cost_ns(&self) -> u64 {
        (self.frame_cost * 1e9).round() as u64
    }
}

/// Registered detectors in file order; that order is also the report order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DetectorSpec>", into = "Vec<DetectorSpec>")]
pub struct DetectorRegistry {
    detectors: Vec<DetectorSpec>,
}

impl TryFrom<Vec<DetectorSpec>> for DetectorRegistry {
    type Error = PerceptionError;

    fn try_from(detectors: Vec<DetectorSpec>) -> Result<Self, Self::Error> {
        DetectorRegistry::new(detectors)
    }
}

impl From<DetectorRegistry> for Vec<DetectorSpec> {
    fn from(r: DetectorRegistry) -> Self {
        r.detectors
    }
}

impl DetectorRegistry {
    pub fn new(detectors: Vec<DetectorSpec>) -> Result<Self, PerceptionError> {
        let mut seen = BTreeSet::new();
        for d in &detectors {
            d.validate()?;
            if !seen.insert(d.id.clone()) {
                return Err(PerceptionError::DuplicateDetector(d.id.to_string()));
            }
        }
        Ok(DetectorRegistry { detectors })
    }

    pub fn detectors(&self) -> &[DetectorSpec] {
        &self.detectors
    }

    pub fn get(&self, id: &str) -> Option<&DetectorSpec> {
        self.detectors.iter().find(|d| d.id.as_str() == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut DetectorSpec> {
        self.detectors.iter_mut().find(|d| d.id.as_str() == id)
    }

    /// Overwrites frame costs, e.g. with the output of [`calibrate_costs`].
    pub fn apply_costs(&mut self, costs: &BTreeMap<DetectorId, f64>) -> Result<(), PerceptionError> {
        for (id, &c) in costs {
            let d = self.get_mut(id.as_str()).ok_or_else(|| PerceptionError::UnknownDetector(id.to_string()))?;
            d.frame_cost = c;
            d.validate()?;
        }
        Ok(())
    }
}

/// Sensing gate applied to bounding-box centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    pub range_m: f64,
    pub fov_deg: f64,
}

impl Default for Visibility {
    fn default() -> Self {
        Visibility { range_m: 6.0, fov_deg: 87.0 }
    }
}

impl Visibility {
    pub fn sees(&self, robot: &Pose, point: [f64; 3]) -> bool {
        let dx = point[0] - robot.x;
        let dy = point[1] - robot.y;
        let dist = dx.hypot(dy);
        if dist > self.range_m {
            return false;
        }
        if dist == 0.0 {
            return true;
        }
        let bearing = normalize_angle(dy.atan2(dx) - robot.yaw);
        bearing.abs() <= 0.5 * self.fov_deg.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(default)]
    pub name: String,
    pub label: SemanticLabel,
    pub pose: Pose,
    pub bbox: Aabb,
    /// Index of the parent object in the scene list.
    #[serde(default)]
    pub parent: Option<usize>,
}

/// Ground truth the simulated sensors observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile")]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub visibility: Visibility,
    pub robot_start: Pose,
    /// Regions the base cannot enter.
    pub obstacles: Vec<Aabb>,
}

#[derive(Deserialize)]
struct SceneFile {
    objects: Vec<SceneObject>,
    #[serde(default)]
    visibility: Visibility,
    #[serde(default = "origin")]
    robot_start: Pose,
    #[serde(default)]
    obstacles: Vec<Aabb>,
}

fn origin() -> Pose {
    Pose::planar(0.0, 0.0, 0.0)
}

impl TryFrom<SceneFile> for Scene {
    type Error = PerceptionError;

    fn try_from(f: SceneFile) -> Result<Self, Self::Error> {
        Scene::new(f.objects, f.visibility, f.robot_start, f.obstacles)
    }
}

impl Scene {
    pub fn new(
        objects: Vec<SceneObject>,
        visibility: Visibility,
        robot_start: Pose,
        obstacles: Vec<Aabb>,
    ) -> Result<Self, PerceptionError> {
        for (i, o) in objects.iter().enumerate() {
            let Some(p) = o.parent else { continue };
            let parent = objects.get(p).ok_or_else(|| PerceptionError::BadScene(format!("object {i} has unknown parent {p}")))?;
            if p == i || parent.label == o.label {
                return Err(PerceptionError::BadScene(format!("object {i} cannot be its own kind's parent")));
            }
            if parent.parent.is_some() {
                return Err(PerceptionError::BadScene(format!("object {i} nests more than one level deep")));
            }
        }
        Ok(Scene { objects, visibility, robot_start, obstacles })
    }

    /// Scene object by name.
    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn children_of(&self, index: usize) -> impl Iterator<Item = &SceneObject> + '_ {
        self.objects.iter().filter(move |o| o.parent == Some(index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    Adaptive,
    Exhaustive,
}

impl PerceptionMode {
    pub fn tag(self) -> &'static str {
        match self {
            PerceptionMode::Adaptive => "AP",
            PerceptionMode::Exhaustive => "EP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionConfig {
    /// Inferred detectors and hierarchy links. Exhaustive mode ignores the
    /// detector list and runs every baseline detector instead.
    pub active: DetectorSet,
    pub mode: PerceptionMode,
    pub seed: u64,
    pub frame_budget: usize,
    pub association: Association,
}

impl PerceptionConfig {
    pub fn adaptive(active: DetectorSet, seed: u64, frame_budget: usize) -> Self {
        PerceptionConfig { active, mode: PerceptionMode::Adaptive, seed, frame_budget, association: Association::default() }
    }

    pub fn exhaustive(active: DetectorSet, seed: u64, frame_budget: usize) -> Self {
        PerceptionConfig { mode: PerceptionMode::Exhaustive, ..Self::adaptive(active, seed, frame_budget) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionMetrics {
    pub frames: usize,
    /// Seconds.
    pub total_cost: f64,
    /// Seconds per frame.
    pub avg_period: f64,
    pub detections_emitted: usize,
    pub spurious_emitted: usize,
    /// Detectors that ran, in registry order.
    pub active_detectors: Vec<DetectorId>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Running<'a> {
    spec: &'a DetectorSpec,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

/// Frame-by-frame perception state. [`run_perception`] drives it to completion.
pub struct PerceptionLoop<'a> {
    scene: &'a Scene,
    running: Vec<Running<'a>>,
    links: Vec<LabelLink>,
    association: Association,
    frame_cost_ns: u64,
    elapsed_ns: u64,
    frames: usize,
    detections: usize,
    spurious: usize,
    active_ids: Vec<DetectorId>,
}

impl<'a> PerceptionLoop<'a> {
    pub fn new(scene: &'a Scene, registry: &'a DetectorRegistry, config: &PerceptionConfig) -> Result<Self, PerceptionError> {
        let chosen: Vec<&DetectorSpec> = match config.mode {
            PerceptionMode::Adaptive => {
                if config.active.is_empty() {
                    return Err(PerceptionError::NothingToPerceive);
                }
                for id in &config.active.detectors {
                    registry.get(id.as_str()).ok_or_else(|| PerceptionError::UnknownDetector(id.to_string()))?;
                }
                registry.detectors().iter().filter(|d| config.active.detectors.contains(&d.id)).collect()
            }
            PerceptionMode::Exhaustive => registry.detectors().iter().filter(|d| d.baseline).collect(),
        };
        if chosen.is_empty() {
            return Err(PerceptionError::NothingToPerceive);
        }
        let active_ids: Vec<DetectorId> = chosen.iter().map(|d| d.id.clone()).collect();

        let mut links = Vec::new();
        for (p, c) in &config.active.links {
            if let (Some(p), Some(c)) = (registry.get(p.as_str()), registry.get(c.as_str())) {
                if active_ids.contains(&p.id) && active_ids.contains(&c.id) && p.emits_label != c.emits_label {
                    links.push(LabelLink { parent: p.emits_label.clone(), child: c.emits_label.clone() });
                }
            }
        }

        // parents report before their children within a frame
        let mut ordered = chosen;
        ordered.sort_by_key(|d| links.iter().any(|l| l.child == d.emits_label));
        let running = ordered
            .into_iter()
            .map(|spec| Running {
                spec,
                rng: ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a(spec.id.as_str())),
                noise: Normal::new(0.0, spec.noise_sigma).expect("validated sigma"),
            })
            .collect::<Vec<_>>();
        let frame_cost_ns = running.iter().map(|r| r.spec.cost_ns()).sum();
        Ok(PerceptionLoop {
            scene,
            running,
            links,
            association: config.association,
            frame_cost_ns,
            elapsed_ns: 0,
            frames: 0,
            detections: 0,
            spurious: 0,
            active_ids,
        })
    }

    /// Detections produced by one frame observed from `robot`.
    pub fn frame(&mut self, robot: &Pose) -> Vec<Detection> {
        self.elapsed_ns += self.frame_cost_ns;
        self.frames += 1;
        let stamp = self.elapsed_ns as f64 / 1e9;
        let vis = self.scene.visibility;
        let mut out = Vec::new();
        for r in &mut self.running {
            for obj in self.scene.objects.iter().filter(|o| o.label == r.spec.emits_label) {
                let jitter = [r.noise.sample(&mut r.rng), r.noise.sample(&mut r.rng), r.noise.sample(&mut r.rng)];
                if !vis.sees(robot, obj.bbox.center()) {
                    continue;
                }
                let pose = Pose { x: obj.pose.x + jitter[0], y: obj.pose.y + jitter[1], z: obj.pose.z + jitter[2], yaw: obj.pose.yaw };
                out.push(Detection {
                    label: obj.label.clone(),
                    bbox: obj.bbox.translated(jitter),
                    pose,
                    timestamp: stamp,
                    source_detector: r.spec.id.clone(),
                    spurious: false,
                });
            }
            let roll: f64 = r.rng.random();
            if roll < r.spec.false_positive_rate {
                let dist = r.rng.random_range(1.0..vis.range_m.max(1.0 + 1e-9));
                let half_fov = 0.5 * vis.fov_deg.to_radians();
                let bearing = robot.yaw + r.rng.random_range(-half_fov..=half_fov);
                let z = r.rng.random_range(0.0..1.0);
                let c = [robot.x + dist * bearing.cos(), robot.y + dist * bearing.sin(), z];
                out.push(Detection {
                    label: r.spec.emits_label.clone(),
                    bbox: Aabb::around(c, [0.1, 0.1, 0.1]),
                    pose: Pose::new(c[0], c[1], c[2], 0.0).expect("finite"),
                    timestamp: stamp,
                    source_detector: r.spec.id.clone(),
                    spurious: true,
                });
            }
        }
        self.detections += out.len();
        self.spurious += out.iter().filter(|d| d.spurious).count();
        out
    }

    pub fn links(&self) -> &[LabelLink] {
        &self.links
    }

    pub fn association(&self) -> &Association {
        &self.association
    }

    pub fn metrics(&self) -> PerceptionMetrics {
        let total_cost = self.elapsed_ns as f64 / 1e9;
        let avg_period = if self.frames == 0 { 0.0 } else { self.elapsed_ns as f64 / self.frames as f64 / 1e9 };
        PerceptionMetrics {
            frames: self.frames,
            total_cost,
            avg_period,
            detections_emitted: self.detections,
            spurious_emitted: self.spurious,
            active_detectors: self.active_ids.clone(),
        }
    }
}

fn check_poses(config: &PerceptionConfig, poses: &[Pose]) -> Result<(), PerceptionError> {
    if poses.len() < config.frame_budget {
        return Err(PerceptionError::ShortPoseStream { need: config.frame_budget, got: poses.len() });
    }
    Ok(())
}

/// Runs `frame_budget` frames and returns the resulting world and metrics.
pub fn run_perception(
    scene: &Scene,
    registry: &DetectorRegistry,
    config: &PerceptionConfig,
    poses: &[Pose],
) -> Result<(WorldModel, PerceptionMetrics), PerceptionError> {
    check_poses(config, poses)?;
    let mut lp = PerceptionLoop::new(scene, registry, config)?;
    let mut world = WorldModel::new();
    for pose in &poses[..config.frame_budget] {
        for d in lp.frame(pose) {
            world.integrate(&d, &lp.links, &lp.association);
        }
    }
    Ok((world, lp.metrics()))
}

/// Same as [`run_perception`] but publishes each frame into a shared world,
/// one whole frame per write.
pub fn run_perception_shared(
    scene: &Scene,
    registry: &DetectorRegistry,
    config: &PerceptionConfig,
    poses: &[Pose],
    world: &SharedWorld,
) -> Result<PerceptionMetrics, PerceptionError> {
    check_poses(config, poses)?;
    let mut lp = PerceptionLoop::new(scene, registry, config)?;
    for pose in &poses[..config.frame_budget] {
        let dets = lp.frame(pose);
        world.update(|w| {
            for d in &dets {
                w.integrate(d, &lp.links, &lp.association);
            }
        });
    }
    Ok(lp.metrics())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("row `{0}` has a non-positive period")]
    NonPositive(String),
    #[error("row `{0}` lists no detectors")]
    EmptyRow(String),
    #[error("row `{row}` is inconsistent: known costs sum to {known:.6} s against {period:.6} s")]
    Inconsistent { row: String, known: f64, period: f64 },
}

/// One measured configuration: detectors that ran and the observed period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub name: String,
    pub detectors: Vec<DetectorId>,
    pub period: f64,
}

/// Relative tolerance used to accept a row that is already fully determined.
const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Solves per-detector frame costs from measured periods. Rows are resolved
/// greedily, always taking the row with the fewest unknown detectors; the
/// residual of a row is split evenly over its unknowns.
pub fn calibrate_costs(rows: &[CalibrationRow]) -> Result<BTreeMap<DetectorId, f64>, CalibrationError> {
    for r in rows {
        if !(r.period > 0.0 && r.period.is_finite()) {
            return Err(CalibrationError::NonPositive(r.name.clone()));
        }
        if r.detectors.is_empty() {
            return Err(CalibrationError::EmptyRow(r.name.clone()));
        }
    }
    let mut costs: BTreeMap<DetectorId, f64> = BTreeMap::new();
    let mut pending: Vec<&CalibrationRow> = rows.iter().collect();
    while !pending.is_empty() {
        let unknown =
            |r: &CalibrationRow| -> BTreeSet<DetectorId> { r.detectors.iter().filter(|d| !costs.contains_key(*d)).cloned().collect() };
        let (pos, _) = pending.iter().enumerate().min_by_key(|(i, r)| (unknown(r).len(), *i)).expect("non-empty");
        let row = pending.remove(pos);
        let unk = unknown(row);
        let distinct: BTreeSet<&DetectorId> = row.detectors.iter().collect();
        let known: f64 = distinct.iter().filter_map(|d| costs.get(*d)).sum();
        let residual = row.period - known;
        if unk.is_empty() {
            if (residual / row.period).abs() > CALIBRATION_TOLERANCE {
                return Err(CalibrationError::Inconsistent { row: row.name.clone(), known, period: row.period });
            }
            continue;
        }
        if residual <= 0.0 {
            return Err(CalibrationError::Inconsistent { row: row.name.clone(), known, period: row.period });
        }
        let share = residual / unk.len() as f64;
        for d in unk {
            costs.insert(d, share);
        }
    }
    Ok(costs)
}
