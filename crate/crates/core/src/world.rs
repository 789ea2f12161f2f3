//! World models built from detections.
//!
//! A [`WorldModel`] holds detected objects with poses, boxes and at most one
//! level of parent links (a handle belongs to a door, nothing belongs to the
//! handle). The perception loop is the only writer; everybody else reads
//! snapshots, either plain clones or through [`SharedWorld`].

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbols::{DetectorId, SemanticLabel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("non-finite pose component")]
    NonFinitePose,
    #[error("bounding box min {min:?} exceeds max {max:?}")]
    InvertedBox { min: [f64; 3], max: [f64; 3] },
    #[error("association radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("duplicate object id {0}")]
    DuplicateId(ObjectId),
    #[error("object {child} has unknown parent {parent}")]
    DanglingParent { child: ObjectId, parent: ObjectId },
    #[error("object {0} violates the single-layer hierarchy")]
    NestedParent(ObjectId),
    #[error("object {0} is linked to a parent with the same label")]
    SameLabelParent(ObjectId),
    #[error("hierarchy link pairs `{0}` with itself")]
    SelfLink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        -PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Deserialize)]
struct PoseRepr {
    x: f64,
    y: f64,
    #[serde(default)]
    z: f64,
    #[serde(default)]
    yaw: f64,
}

impl TryFrom<PoseRepr> for Pose {
    type Error = WorldError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose::new(r.x, r.y, r.z, r.yaw)
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, WorldError> {
        if ![x, y, z, yaw].iter().all(|v| v.is_finite()) {
            return Err(WorldError::NonFinitePose);
        }
        Ok(Pose { x, y, z, yaw: normalize_angle(yaw) })
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose { x, y, z: 0.0, yaw: normalize_angle(yaw) }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        dist3(self.position(), other.position())
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub(crate) fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Axis-aligned box in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr")]
pub struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Deserialize)]
struct AabbRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<AabbRepr> for Aabb {
    type Error = WorldError;

    fn try_from(r: AabbRepr) -> Result<Self, Self::Error> {
        Aabb::new(r.min, r.max)
    }
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, WorldError> {
        if (0..3).any(|i| !min[i].is_finite() || !max[i].is_finite() || min[i] > max[i]) {
            return Err(WorldError::InvertedBox { min, max });
        }
        Ok(Aabb { min, max })
    }

    /// Box centred on `center` with the given half extents (clamped at zero).
    pub fn around(center: [f64; 3], half: [f64; 3]) -> Self {
        let h = half.map(|v| v.max(0.0));
        Aabb { min: [center[0] - h[0], center[1] - h[1], center[2] - h[2]], max: [center[0] + h[0], center[1] + h[1], center[2] + h[2]] }
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn half_extents(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| 0.5 * (self.max[i] - self.min[i]))
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    pub fn is_degenerate(&self) -> bool {
        self.volume() == 0.0
    }

    /// Point containment with every face pushed outwards by `margin`.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - margin && p[i] <= self.max[i] + margin)
    }

    /// Closest point of the box footprint to `(x, y)`.
    pub fn closest_planar_point(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min[0], self.max[0]), y.clamp(self.min[1], self.max[1]))
    }

    pub fn contains_planar(&self, x: f64, y: f64) -> bool {
        x > self.min[0] && x < self.max[0] && y > self.min[1] && y < self.max[1]
    }

    pub fn translated(&self, d: [f64; 3]) -> Self {
        Aabb { min: [0, 1, 2].map(|i| self.min[i] + d[i]), max: [0, 1, 2].map(|i| self.max[i] + d[i]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: ObjectId,
    pub label: SemanticLabel,
    pub pose: Pose,
    pub bbox: Aabb,
    #[serde(default)]
    pub parent: Option<ObjectId>,
    #[serde(default)]
    pub first_seen: f64,
    #[serde(default)]
    pub last_seen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: SemanticLabel,
    pub bbox: Aabb,
    pub pose: Pose,
    pub timestamp: f64,
    pub source_detector: DetectorId,
    /// Simulation ground truth: the detection has no real object behind it.
    #[serde(default)]
    pub spurious: bool,
}

/// Parent→child label pair used when linking detections.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelLink {
    pub parent: SemanticLabel,
    pub child: SemanticLabel,
}

impl LabelLink {
    pub fn new(parent: SemanticLabel, child: SemanticLabel) -> Result<Self, WorldError> {
        if parent == child {
            return Err(WorldError::SelfLink(parent.to_string()));
        }
        Ok(LabelLink { parent, child })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    radius: f64,
    /// Margin added to the parent box when testing child-center containment.
    pub contain_margin: f64,
    /// Fallback: nearest parent-label object within this distance.
    pub parent_radius: f64,
}

impl Association {
    pub fn new(radius: f64) -> Result<Self, WorldError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(WorldError::BadRadius(radius));
        }
        Ok(Association { radius, contain_margin: 0.1, parent_radius: 0.75 })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Default for Association {
    fn default() -> Self {
        Association { radius: 0.5, contain_margin: 0.1, parent_radius: 0.75 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct WorldModel {
    objects: Vec<WorldObject>,
    next_id: u64,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    objects: Vec<WorldObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_id: Option<u64>,
}

impl TryFrom<WorldFile> for WorldModel {
    type Error = WorldError;

    fn try_from(f: WorldFile) -> Result<Self, Self::Error> {
        WorldModel::from_objects(f.objects, f.next_id)
    }
}

impl From<WorldModel> for WorldFile {
    fn from(w: WorldModel) -> Self {
        WorldFile { objects: w.objects, next_id: Some(w.next_id) }
    }
}

impl WorldModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a world from explicit objects, checking ids and hierarchy.
    pub fn from_objects(mut objects: Vec<WorldObject>, next_id: Option<u64>) -> Result<Self, WorldError> {
        objects.sort_by_key(|o| o.id);
        for pair in objects.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(WorldError::DuplicateId(pair[0].id));
            }
        }
        let max_id = objects.last().map(|o| o.id.0 + 1).unwrap_or(0);
        let world = WorldModel { objects, next_id: next_id.unwrap_or(max_id).max(max_id) };
        world.check_hierarchy()?;
        Ok(world)
    }

    pub fn objects(&self) -> &[WorldObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: ObjectId) -> Option<&WorldObject> {
        self.objects.binary_search_by_key(&id, |o| o.id).ok().map(|i| &self.objects[i])
    }

    /// All objects with `label`, ordered by id.
    pub fn query(&self, label: &str) -> Vec<&WorldObject> {
        self.objects.iter().filter(|o| o.label.as_str() == label).collect()
    }

    pub fn children_of(&self, id: ObjectId) -> Vec<&WorldObject> {
        self.objects.iter().filter(|o| o.parent == Some(id)).collect()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.label.as_str()).collect()
    }

    /// Immutable copy unaffected by later integrations.
    pub fn snapshot(&self) -> WorldModel {
        self.clone()
    }

    /// Inserts an object directly (scene setup, corpus worlds).
    pub fn insert(&mut self, label: SemanticLabel, pose: Pose, bbox: Aabb, parent: Option<ObjectId>) -> Result<ObjectId, WorldError> {
        let id = ObjectId(self.next_id);
        self.objects.push(WorldObject { id, label, pose, bbox, parent, first_seen: 0.0, last_seen: 0.0 });
        if let Err(e) = self.check_hierarchy() {
            self.objects.pop();
            return Err(e);
        }
        self.next_id += 1;
        Ok(id)
    }

    pub fn check_hierarchy(&self) -> Result<(), WorldError> {
        for o in &self.objects {
            let Some(pid) = o.parent else { continue };
            let parent = self.get(pid).ok_or(WorldError::DanglingParent { child: o.id, parent: pid })?;
            if parent.parent.is_some() {
                return Err(WorldError::NestedParent(o.id));
            }
            if parent.label == o.label {
                return Err(WorldError::SameLabelParent(o.id));
            }
        }
        Ok(())
    }

    /// Fuses one detection into the world and returns the id of the object it
    /// landed on.
    pub fn integrate(&mut self, d: &Detection, links: &[LabelLink], assoc: &Association) -> ObjectId {
        let center = d.pose.position();
        let nearest = self
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.label == d.label)
            .map(|(i, o)| (i, dist3(o.pose.position(), center)))
            .filter(|&(_, dist)| dist <= assoc.radius)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let idx = match nearest {
            Some((i, _)) => {
                let o = &mut self.objects[i];
                o.pose = d.pose;
                o.bbox = d.bbox;
                o.last_seen = o.last_seen.max(d.timestamp);
                i
            }
            None => {
                let id = ObjectId(self.next_id);
                self.next_id += 1;
                self.objects.push(WorldObject {
                    id,
                    label: d.label.clone(),
                    pose: d.pose,
                    bbox: d.bbox,
                    parent: None,
                    first_seen: d.timestamp,
                    last_seen: d.timestamp,
                });
                self.objects.len() - 1
            }
        };
        let id = self.objects[idx].id;

        // link as a child
        for link in links.iter().filter(|l| l.child == d.label) {
            if self.objects[idx].parent.is_some() {
                break;
            }
            if let Some(pid) = self.best_parent(&self.objects[idx], &link.parent, assoc) {
                self.objects[idx].parent = Some(pid);
            }
        }
        // adopt orphans once a parent appears after its children
        for link in links.iter().filter(|l| l.parent == d.label) {
            let orphans: Vec<usize> =
                (0..self.objects.len()).filter(|&i| self.objects[i].label == link.child && self.objects[i].parent.is_none()).collect();
            for i in orphans {
                if let Some(pid) = self.best_parent(&self.objects[i], &link.parent, assoc) {
                    self.objects[i].parent = Some(pid);
                }
            }
        }
        debug_assert!(self.check_hierarchy().is_ok());
        id
    }

    fn best_parent(&self, child: &WorldObject, parent_label: &SemanticLabel, assoc: &Association) -> Option<ObjectId> {
        if self.objects.iter().any(|o| o.parent == Some(child.id)) {
            // the child is itself a parent; linking it would nest
            return None;
        }
        let c = child.bbox.center();
        let candidates: Vec<(&WorldObject, f64)> = self
            .objects
            .iter()
            .filter(|o| &o.label == parent_label && o.parent.is_none() && o.id != child.id)
            .map(|o| (o, dist3(o.bbox.center(), c)))
            .collect();
        let pick = |it: &mut dyn Iterator<Item = &(&WorldObject, f64)>| {
            it.min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id))).map(|(o, _)| o.id)
        };
        pick(&mut candidates.iter().filter(|(o, _)| o.bbox.contains(c, assoc.contain_margin)))
            .or_else(|| pick(&mut candidates.iter().filter(|(_, dist)| *dist <= assoc.parent_radius)))
    }
}

/// Anything that can hand out a consistent copy of the current world.
pub trait WorldProvider {
    fn snapshot(&self) -> WorldModel;
}

impl WorldProvider for WorldModel {
    fn snapshot(&self) -> WorldModel {
        self.clone()
    }
}

/// Single-writer, many-reader live world.
#[derive(Debug, Clone, Default)]
pub struct SharedWorld {
    inner: Arc<RwLock<WorldModel>>,
}

impl SharedWorld {
    pub fn new(world: WorldModel) -> Self {
        SharedWorld { inner: Arc::new(RwLock::new(world)) }
    }

    /// Applies `f` under the write lock, so readers never see half an update.
    pub fn update<R>(&self, f: impl FnOnce(&mut WorldModel) -> R) -> R {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }
}

impl WorldProvider for SharedWorld {
    fn snapshot(&self) -> WorldModel {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
