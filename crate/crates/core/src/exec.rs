//! Executive: turns a grounded behavior into navigation and manipulation
//! primitives against a kinematic robot and an articulated door.
//!
//! `navigate` is NAVIGATE(A). `open` runs NAVIGATE(A), DETECT(B), LOCALIZE(B),
//! TURN(B) and PUSH(A), where B is looked up among A's constituents in the
//! world at DETECT time. Every other action fails on receipt.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbols::{Action, BehaviorSymbol, Target};
use crate::world::{normalize_angle, Aabb, ObjectId, Pose, WorldObject, WorldProvider};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("standoff must be positive, got {0}")]
    BadStandoff(f64),
    #[error("target {0} is unreachable")]
    Unreachable(ObjectId),
    #[error("behavior target `{0}` is not a world object")]
    UnboundTarget(String),
    #[error("{0}")]
    BadConfig(String),
}

/// Grounded behavior handed to the executive: `(action, A, B?)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRequest {
    pub action: Action,
    pub target_a: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_b: Option<ObjectId>,
}

impl BehaviorRequest {
    pub fn from_symbol(sym: &BehaviorSymbol) -> Result<Self, ExecError> {
        let object = |t: &Target| match t {
            Target::Object(id) => Ok(*id),
            other => Err(ExecError::UnboundTarget(other.to_string())),
        };
        Ok(BehaviorRequest { action: sym.action(), target_a: object(sym.target_a())?, target_b: sym.target_b().map(object).transpose()? })
    }
}

impl fmt::Display for BehaviorRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.action, self.target_a)?;
        if let Some(b) = self.target_b {
            write!(f, ", {b}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base: Pose,
    pub arm_extended: bool,
    /// Newtons.
    pub contact_force: f64,
    /// Newton-meters.
    pub applied_torque: f64,
    /// Seconds.
    pub time: f64,
}

impl RobotState {
    pub fn at(base: Pose) -> Self {
        RobotState { base, arm_extended: false, contact_force: 0.0, applied_torque: 0.0, time: 0.0 }
    }
}

/// Articulated door with a spring-loaded latch handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorSim {
    pub handle_angle: f64,
    pub handle_limit: f64,
    pub handle_torque_limit: f64,
    pub open_fraction: f64,
    pub latched: bool,
    /// Handle return spring, N·m per radian.
    #[serde(default = "default_spring")]
    pub handle_spring: f64,
    /// True handle position; the world only holds the perceived one.
    pub handle_position: [f64; 3],
    /// Fault injection: the handle binds at this angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jam_angle: Option<f64>,
}

fn default_spring() -> f64 {
    1.5
}

impl DoorSim {
    pub fn latched_at(handle_position: [f64; 3]) -> Self {
        DoorSim {
            handle_angle: 0.0,
            handle_limit: 0.6,
            handle_torque_limit: 2.0,
            open_fraction: 0.0,
            latched: true,
            handle_spring: default_spring(),
            handle_position,
            jam_angle: None,
        }
    }

    pub fn check(&self) -> Result<(), ExecError> {
        if !(self.handle_limit > 0.0 && self.handle_torque_limit > 0.0 && self.handle_spring >= 0.0) {
            return Err(ExecError::BadConfig("door limits must be positive".into()));
        }
        if !(0.0..=self.handle_limit).contains(&self.handle_angle) || !(0.0..=1.0).contains(&self.open_fraction) {
            return Err(ExecError::BadConfig("door state out of range".into()));
        }
        if self.latched && self.open_fraction != 0.0 {
            return Err(ExecError::BadConfig("a latched door cannot be open".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub standoff: f64,
    /// Base speed, m/s.
    pub speed: f64,
    pub arm_reach: f64,
    /// Largest perceived-vs-true handle offset the arm can absorb.
    pub localize_tolerance: f64,
    pub contact_threshold: f64,
    /// Contact stiffness, N/m.
    pub contact_stiffness: f64,
    /// Height above the handle where the descent starts.
    pub approach_height: f64,
    /// Arm speed, m/s.
    pub arm_speed: f64,
    /// Handle turning rate, rad/s.
    pub turn_rate: f64,
    pub push_fraction: f64,
    /// Door travel per unit open fraction, meters.
    pub push_distance: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            standoff: 0.6,
            speed: 0.5,
            arm_reach: 0.9,
            localize_tolerance: 0.1,
            contact_threshold: 5.0,
            contact_stiffness: 2000.0,
            approach_height: 0.1,
            arm_speed: 0.05,
            turn_rate: 0.5,
            push_fraction: 0.3,
            push_distance: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecState {
    Received,
    Navigating,
    Detecting,
    Localizing,
    Turning,
    Pushing,
    Complete,
    Failure,
}

impl ExecState {
    pub const ALL: [ExecState; 8] = [
        ExecState::Received,
        ExecState::Navigating,
        ExecState::Detecting,
        ExecState::Localizing,
        ExecState::Turning,
        ExecState::Pushing,
        ExecState::Complete,
        ExecState::Failure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExecState::Received => "RECEIVED",
            ExecState::Navigating => "NAVIGATING",
            ExecState::Detecting => "DETECTING",
            ExecState::Localizing => "LOCALIZING",
            ExecState::Turning => "TURNING",
            ExecState::Pushing => "PUSHING",
            ExecState::Complete => "COMPLETE",
            ExecState::Failure => "FAILURE",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ExecState::Complete | ExecState::Failure)
    }
}

impl fmt::Display for ExecState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Edges of the executive flow chart.
pub fn allowed_transition(from: ExecState, to: ExecState) -> bool {
    use ExecState::*;
    matches!(
        (from, to),
        (Received, Navigating)
            | (Received, Failure)
            | (Navigating, Complete)
            | (Navigating, Detecting)
            | (Detecting, Localizing)
            | (Detecting, Failure)
            | (Localizing, Turning)
            | (Localizing, Failure)
            | (Turning, Pushing)
            | (Turning, Failure)
            | (Pushing, Complete)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub state: ExecState,
    /// Simulated time on entry.
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecStatus {
    pub state: ExecState,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

impl ExecStatus {
    fn received(time: f64) -> Self {
        ExecStatus {
            state: ExecState::Received,
            trace: vec![TraceEntry { state: ExecState::Received, time, reason: None }],
            failure_reason: None,
        }
    }

    fn enter(&mut self, state: ExecState, time: f64) {
        debug_assert!(!self.state.is_terminal() && allowed_transition(self.state, state), "{} -> {}", self.state, state);
        self.state = state;
        self.trace.push(TraceEntry { state, time, reason: None });
    }

    fn fail(&mut self, time: f64, reason: impl Into<String>) {
        let reason = reason.into();
        self.enter(ExecState::Failure, time);
        self.trace.last_mut().expect("entered").reason = Some(reason.clone());
        self.failure_reason = Some(reason);
    }

    pub fn states(&self) -> Vec<ExecState> {
        self.trace.iter().map(|e| e.state).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.state == ExecState::Complete
    }

    /// Checks the trace against the flow chart.
    pub fn is_valid_path(&self) -> bool {
        let s = self.states();
        s.first() == Some(&ExecState::Received)
            && s.windows(2).all(|w| allowed_transition(w[0], w[1]))
            && s.last().is_some_and(|l| l.is_terminal())
            && s.last() == Some(&self.state)
    }

    /// One line per state, as an operator would read it.
    pub fn log(&self, request: &BehaviorRequest) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let note = match (e.state, &e.reason) {
                (ExecState::Received, _) => format!("behavior {request}"),
                (ExecState::Navigating, _) => format!("navigating to {}", request.target_a),
                (ExecState::Detecting, _) => format!("checking world for a constituent of {}", request.target_a),
                (ExecState::Localizing, _) => "descending onto handle".to_string(),
                (ExecState::Turning, _) => "turning handle".to_string(),
                (ExecState::Pushing, _) => format!("pushing {}", request.target_a),
                (ExecState::Complete, _) => "done".to_string(),
                (ExecState::Failure, r) => r.clone().unwrap_or_default(),
            };
            out.push_str(&format!("[{:>8.3}s] {:<10} {}\n", e.time, e.state.name(), note));
        }
        out
    }
}

fn obstructed(p: [f64; 3], obstacles: &[Aabb]) -> bool {
    obstacles.iter().any(|o| o.contains_planar(p[0], p[1]))
}

/// Drives the base to the point `standoff` meters out from the face of
/// `target` nearest the robot, facing the target. Motion is a straight line
/// at constant speed.
pub fn navigate(robot: &RobotState, target: &WorldObject, standoff: f64, speed: f64, obstacles: &[Aabb]) -> Result<RobotState, ExecError> {
    if !(standoff > 0.0 && standoff.is_finite()) {
        return Err(ExecError::BadStandoff(standoff));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(ExecError::BadConfig(format!("speed must be positive, got {speed}")));
    }
    if obstructed(target.bbox.center(), obstacles) {
        return Err(ExecError::Unreachable(target.id));
    }
    let (rx, ry) = (robot.base.x, robot.base.y);
    let (fx, fy) = target.bbox.closest_planar_point(rx, ry);
    let (dx, dy) = (rx - fx, ry - fy);
    let d = dx.hypot(dy);
    let (ux, uy) = if d > 1e-12 {
        (dx / d, dy / d)
    } else {
        // inside the footprint: back out the way the robot is facing
        (-robot.base.yaw.cos(), -robot.base.yaw.sin())
    };
    let (gx, gy) = (fx + standoff * ux, fy + standoff * uy);
    let yaw = normalize_angle((-uy).atan2(-ux));
    if obstructed([gx, gy, 0.0], obstacles) {
        return Err(ExecError::Unreachable(target.id));
    }
    let path = (gx - rx).hypot(gy - ry);
    if path < 1e-9 && normalize_angle(yaw - robot.base.yaw).abs() < 1e-9 {
        return Ok(robot.clone());
    }
    let mut next = robot.clone();
    next.base = Pose { x: gx, y: gy, z: robot.base.z, yaw };
    next.time += path / speed;
    Ok(next)
}

/// Why a manipulation primitive stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManipulationFault {
    Localize(String),
    Turn(String),
}

/// LOCALIZE, TURN and PUSH against the door. Returns the state at the point
/// of failure alongside the fault, if any.
pub fn localize_turn_push(
    robot: &RobotState,
    door: &DoorSim,
    handle: &WorldObject,
    config: &ExecConfig,
) -> (RobotState, DoorSim, Option<ManipulationFault>) {
    let mut r = robot.clone();
    let mut d = door.clone();
    if let Err(f) = localize(&mut r, &d, handle, config) {
        return (r, d, Some(f));
    }
    if let Err(f) = turn(&mut r, &mut d, config) {
        return (r, d, Some(f));
    }
    push(&mut r, &mut d, config);
    (r, d, None)
}

const ARM_STEP: f64 = 0.001;
const TURN_STEP: f64 = 0.005;

fn localize(r: &mut RobotState, door: &DoorSim, handle: &WorldObject, config: &ExecConfig) -> Result<(), ManipulationFault> {
    let perceived = handle.bbox.center();
    let reach = (perceived[0] - r.base.x).hypot(perceived[1] - r.base.y);
    if reach > config.arm_reach {
        return Err(ManipulationFault::Localize(format!("handle {reach:.2} m away, beyond arm reach")));
    }
    let truth = door.handle_position;
    let offset = (perceived[0] - truth[0]).hypot(perceived[1] - truth[1]);
    r.arm_extended = true;
    let start = perceived[2] + config.approach_height;
    if offset > config.localize_tolerance {
        // the arm sweeps down through empty air
        r.time += (start - (perceived[2] - config.approach_height)) / config.arm_speed;
        r.contact_force = 0.0;
        return Err(ManipulationFault::Localize(format!("no contact: handle is {offset:.2} m from where it was perceived")));
    }
    let mut z = start;
    let floor = truth[2] - config.approach_height;
    loop {
        z -= ARM_STEP;
        r.time += ARM_STEP / config.arm_speed;
        r.contact_force = (config.contact_stiffness * (truth[2] - z)).max(0.0);
        if r.contact_force > config.contact_threshold {
            return Ok(());
        }
        if z < floor {
            return Err(ManipulationFault::Localize("descent finished without contact".into()));
        }
    }
}

fn turn(r: &mut RobotState, d: &mut DoorSim, config: &ExecConfig) -> Result<(), ManipulationFault> {
    if !d.latched {
        return Ok(());
    }
    loop {
        let next = (d.handle_angle + TURN_STEP).min(d.handle_limit);
        r.time += (next - d.handle_angle) / config.turn_rate;
        d.handle_angle = next;
        let jammed = d.jam_angle.is_some_and(|j| d.handle_angle >= j);
        let at_stop = d.handle_angle >= d.handle_limit;
        r.applied_torque = if jammed || at_stop { d.handle_torque_limit } else { d.handle_spring * d.handle_angle };
        if r.applied_torque >= d.handle_torque_limit {
            if at_stop && !jammed {
                d.latched = false;
                return Ok(());
            }
            return Err(ManipulationFault::Turn(format!("torque limit reached at {:.3} rad before the handle released", d.handle_angle)));
        }
    }
}

fn push(r: &mut RobotState, d: &mut DoorSim, config: &ExecConfig) {
    let target = config.push_fraction.clamp(0.0, 1.0);
    let travel = (target - d.open_fraction).abs() * config.push_distance;
    r.time += travel / config.arm_speed;
    d.open_fraction = target;
}

/// Which of A's constituents plays B. Handles first, then lowest id.
fn resolve_b<'a>(world: &'a crate::world::WorldModel, request: &BehaviorRequest) -> Option<&'a WorldObject> {
    if let Some(b) = request.target_b {
        return world.get(b).filter(|o| o.parent == Some(request.target_a));
    }
    let mut kids = world.children_of(request.target_a);
    kids.sort_by_key(|o| (!o.label.as_str().contains("handle"), o.id));
    kids.into_iter().next()
}

/// Runs one behavior to a terminal state. The world is sampled at dispatch and
/// again at DETECT; robot and door are advanced in place.
pub fn receive_behavior(
    request: &BehaviorRequest,
    world: &dyn WorldProvider,
    robot: &mut RobotState,
    door: &mut DoorSim,
    config: &ExecConfig,
    obstacles: &[Aabb],
) -> ExecStatus {
    let mut status = ExecStatus::received(robot.time);
    let is_open = match request.action {
        Action::Navigate => false,
        Action::Open => true,
        other => {
            status.fail(robot.time, format!("no executive behavior for `{other}`"));
            return status;
        }
    };
    let snapshot = world.snapshot();
    let Some(a) = snapshot.get(request.target_a) else {
        status.fail(robot.time, "target not in world");
        return status;
    };
    let moved = match navigate(robot, a, config.standoff, config.speed, obstacles) {
        Ok(m) => m,
        Err(e) => {
            status.fail(robot.time, e.to_string());
            return status;
        }
    };
    status.enter(ExecState::Navigating, robot.time);
    *robot = moved;
    if !is_open {
        status.enter(ExecState::Complete, robot.time);
        return status;
    }

    status.enter(ExecState::Detecting, robot.time);
    let snapshot = world.snapshot();
    let Some(handle) = resolve_b(&snapshot, request).cloned() else {
        status.fail(robot.time, format!("no constituent of {} in world", request.target_a));
        return status;
    };

    status.enter(ExecState::Localizing, robot.time);
    let mut r = robot.clone();
    let res = localize(&mut r, door, &handle, config);
    *robot = r;
    if let Err(ManipulationFault::Localize(msg) | ManipulationFault::Turn(msg)) = res {
        status.fail(robot.time, msg);
        return status;
    }

    status.enter(ExecState::Turning, robot.time);
    if let Err(ManipulationFault::Localize(msg) | ManipulationFault::Turn(msg)) = turn(robot, door, config) {
        status.fail(robot.time, msg);
        return status;
    }

    status.enter(ExecState::Pushing, robot.time);
    push(robot, door, config);
    status.enter(ExecState::Complete, robot.time);
    status
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::SemanticLabel;
    use crate::world::WorldModel;

    const HANDLE: [f64; 3] = [4.94, 0.35, 1.0];

    fn door_box() -> Aabb {
        Aabb::new([4.975, -0.45, 0.0], [5.025, 0.45, 2.0]).unwrap()
    }

    fn world(with_handle: bool, handle_at: [f64; 3]) -> (WorldModel, ObjectId) {
        let mut w = WorldModel::new();
        let door = w.insert(SemanticLabel::new("door").unwrap(), Pose::planar(5.0, 0.0, 0.0), door_box(), None).unwrap();
        if with_handle {
            w.insert(
                SemanticLabel::new("door_handle").unwrap(),
                Pose::new(handle_at[0], handle_at[1], handle_at[2], 0.0).unwrap(),
                Aabb::around(handle_at, [0.03, 0.06, 0.02]),
                Some(door),
            )
            .unwrap();
        }
        (w, door)
    }

    fn req(action: Action, a: ObjectId) -> BehaviorRequest {
        BehaviorRequest { action, target_a: a, target_b: None }
    }

    fn run(action: Action, w: &WorldModel, a: ObjectId, door: &mut DoorSim) -> (ExecStatus, RobotState) {
        let mut robot = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
        let s = receive_behavior(&req(action, a), w, &mut robot, door, &ExecConfig::default(), &[]);
        (s, robot)
    }

    use ExecState::*;

    #[test]
    fn navigate_only() {
        let (w, door) = world(false, HANDLE);
        let (s, robot) = run(Action::Navigate, &w, door, &mut DoorSim::latched_at(HANDLE));
        assert_eq!(s.states(), [Received, Navigating, Complete]);
        assert!((robot.base.x - (4.975 - 0.6)).abs() < 1e-12);
        assert!(robot.time > 0.0);
    }

    #[test]
    fn open_full_sequence() {
        let (w, door) = world(true, HANDLE);
        let mut sim = DoorSim::latched_at(HANDLE);
        let (s, robot) = run(Action::Open, &w, door, &mut sim);
        assert_eq!(s.states(), [Received, Navigating, Detecting, Localizing, Turning, Pushing, Complete]);
        assert!(!sim.latched);
        assert_eq!(sim.handle_angle, sim.handle_limit);
        assert_eq!(sim.open_fraction, 0.3);
        assert_eq!(robot.applied_torque, sim.handle_torque_limit);
        assert!(robot.contact_force > 5.0);
        sim.check().unwrap();
        // motion primitives take time; DETECT is a world lookup
        for w in s.trace.windows(2) {
            if matches!(w[0].state, Navigating | Localizing | Turning | Pushing) {
                assert!(w[1].time > w[0].time, "{:?}", s.trace);
            }
        }
        assert!(s.log(&req(Action::Open, door)).contains("PUSHING"));
    }

    #[test]
    fn open_without_handle_fails_at_detect() {
        let (w, door) = world(false, HANDLE);
        let (s, _) = run(Action::Open, &w, door, &mut DoorSim::latched_at(HANDLE));
        assert_eq!(s.states(), [Received, Navigating, Detecting, Failure]);
    }

    #[test]
    fn missing_target_and_unknown_action() {
        let (w, _) = world(false, HANDLE);
        let (s, _) = run(Action::Navigate, &w, ObjectId(99), &mut DoorSim::latched_at(HANDLE));
        assert_eq!(s.states(), [Received, Failure]);
        assert_eq!(s.failure_reason.as_deref(), Some("target not in world"));
        let (s, _) = run(Action::Turn, &w, ObjectId(1), &mut DoorSim::latched_at(HANDLE));
        assert_eq!(s.states(), [Received, Failure]);
    }

    #[test]
    fn localize_gate() {
        let (w, door) = world(true, HANDLE);
        let off = [HANDLE[0], HANDLE[1] - 0.3, HANDLE[2]];
        let (s, _) = run(Action::Open, &w, door, &mut DoorSim::latched_at(off));
        assert_eq!(s.states(), [Received, Navigating, Detecting, Localizing, Failure]);
    }

    #[test]
    fn jammed_handle_fails_turn() {
        let (w, door) = world(true, HANDLE);
        let mut sim = DoorSim { jam_angle: Some(0.2), ..DoorSim::latched_at(HANDLE) };
        let (s, _) = run(Action::Open, &w, door, &mut sim);
        assert_eq!(s.state, Failure);
        assert_eq!(s.states()[s.trace.len() - 2], Turning);
        assert!(sim.latched);
        assert!(sim.handle_angle < sim.handle_limit);
    }

    #[test]
    fn unlatched_door_skips_turn() {
        let (w, door) = world(true, HANDLE);
        let mut sim = DoorSim { latched: false, ..DoorSim::latched_at(HANDLE) };
        let mut robot = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
        let s = receive_behavior(&req(Action::Open, door), &w, &mut robot, &mut sim, &ExecConfig::default(), &[]);
        assert!(s.is_complete());
        assert_eq!(sim.handle_angle, 0.0);
        let t_turn = s.trace[4].time;
        assert_eq!(s.trace[5].time, t_turn);
        assert_eq!(sim.open_fraction, 0.3);
    }

    #[test]
    fn navigate_geometry() {
        let (w, door) = world(false, HANDLE);
        let target = w.get(door).unwrap();
        let r0 = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
        let r1 = navigate(&r0, target, 1.0, 0.5, &[]).unwrap();
        assert!((r1.base.x - 4.0).abs() < 0.05 && r1.base.y.abs() < 1e-12);
        assert_eq!(r1.base.yaw, 0.0);
        assert!((r1.time - 3.975 / 0.5).abs() < 1e-12);
        let r2 = navigate(&r1, target, 1.0, 0.5, &[]).unwrap();
        assert_eq!(r2, r1);
        assert!(matches!(navigate(&r0, target, 0.0, 0.5, &[]), Err(ExecError::BadStandoff(_))));
        let wall = Aabb::new([4.0, -1.0, 0.0], [6.0, 1.0, 2.0]).unwrap();
        assert!(matches!(navigate(&r0, target, 1.0, 0.5, &[wall]), Err(ExecError::Unreachable(_))));
    }

    #[test]
    fn unreachable_fails_on_receipt() {
        let (w, door) = world(true, HANDLE);
        let wall = Aabb::new([4.0, -1.0, 0.0], [6.0, 1.0, 2.0]).unwrap();
        let mut robot = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
        let s =
            receive_behavior(&req(Action::Open, door), &w, &mut robot, &mut DoorSim::latched_at(HANDLE), &ExecConfig::default(), &[wall]);
        assert_eq!(s.states(), [Received, Failure]);
    }

    #[test]
    fn localize_turn_push_standalone() {
        let (w, door) = world(true, HANDLE);
        let robot = navigate(&RobotState::at(Pose::planar(0.0, 0.0, 0.0)), w.get(door).unwrap(), 0.6, 0.5, &[]).unwrap();
        let handle = w.children_of(door)[0].clone();
        let (_, d, fault) = localize_turn_push(&robot, &DoorSim::latched_at(HANDLE), &handle, &ExecConfig::default());
        assert_eq!(fault, None);
        assert!(!d.latched && d.handle_angle == 0.6 && d.open_fraction == 0.3);
        let far = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
        let (_, _, fault) = localize_turn_push(&far, &DoorSim::latched_at(HANDLE), &handle, &ExecConfig::default());
        assert!(matches!(fault, Some(ManipulationFault::Localize(_))));
    }

    #[test]
    fn trace_json_round_trip() {
        let (w, door) = world(true, HANDLE);
        let (s, _) = run(Action::Open, &w, door, &mut DoorSim::latched_at(HANDLE));
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"LOCALIZING\""));
        assert_eq!(serde_json::from_str::<ExecStatus>(&json).unwrap(), s);
    }

    /// Every fault combination yields a path in the flow chart.
    #[test]
    fn fault_injection_model_check() {
        let wall = Aabb::new([4.0, -1.0, 0.0], [6.0, 1.0, 2.0]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for action in [Action::Navigate, Action::Open, Action::Turn, Action::Look] {
            for present in [true, false] {
                for handle in [true, false] {
                    for offset in [0.0, 0.05, 0.3] {
                        for jam in [None, Some(0.0), Some(0.3), Some(0.6)] {
                            for latched in [true, false] {
                                for blocked in [false, true] {
                                    for reach in [0.9, 0.3] {
                                        let (w, door) = world(handle, HANDLE);
                                        let a = if present { door } else { ObjectId(42) };
                                        let truth = [HANDLE[0], HANDLE[1] + offset, HANDLE[2]];
                                        let mut sim = DoorSim { jam_angle: jam, latched, ..DoorSim::latched_at(truth) };
                                        let cfg = ExecConfig { arm_reach: reach, ..ExecConfig::default() };
                                        let mut robot = RobotState::at(Pose::planar(0.0, 0.0, 0.0));
                                        let obstacles = if blocked { vec![wall] } else { vec![] };
                                        let s = receive_behavior(&req(action, a), &w, &mut robot, &mut sim, &cfg, &obstacles);
                                        assert!(s.is_valid_path(), "{:?}", s.states());
                                        sim.check().unwrap();
                                        assert!(robot.contact_force >= 0.0 && robot.applied_torque >= 0.0);
                                        // open needs a constituent at DETECT
                                        if action == Action::Open && s.is_complete() {
                                            assert!(handle);
                                        }
                                        seen.extend(s.states().windows(2).map(|w| (w[0], w[1])));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // the enumeration reaches every edge of the chart
        let all: Vec<_> = ExecState::ALL
            .iter()
            .flat_map(|&a| ExecState::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| allowed_transition(a, b))
            .collect();
        assert_eq!(seen.len(), all.len());
    }
}
