//! End-to-end wiring: parse → detector inference → perception → behavior
//! inference → executive, plus configuration loading and the benchmark
//! harness. The CLI is a thin shell over this module.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dcg::{infer, load_corpus, train, FactorGraph, GraphKind, GroundingSymbol, Model, TrainConfig, TrainReport, TrainingExample};
use crate::exec::{receive_behavior, BehaviorRequest, DoorSim, ExecConfig, ExecState, ExecStatus, RobotState};
use crate::parse::{load_parse_tree, validate_against_lexicon, Lexicon, ParseTree};
use crate::percept::{
    calibrate_costs, run_perception_shared, CalibrationRow, DetectorRegistry, PerceptionConfig, PerceptionMetrics, PerceptionMode, Scene,
};
use crate::symbols::{detectors_from_groundings, DetectorSet, PerceptionSymbol, SymbolSpace, SymbolSpaceDef};
use crate::world::{Association, SharedWorld, WorldModel, WorldProvider};

/// Asset files compiled into the library, used whenever a config omits a path.
pub mod bundled {
    pub const LEXICON: &str = include_str!("../assets/lexicon.txt");
    pub const SYMBOL_SPACE: &str = include_str!("../assets/symbol_space.json");
    pub const PERCEPTION_CORPUS: &str = include_str!("../assets/perception_corpus.json");
    pub const BEHAVIOR_CORPUS: &str = include_str!("../assets/behavior_corpus.json");
    pub const DETECTORS: &str = include_str!("../assets/detectors.json");
    pub const DOOR_SCENE: &str = include_str!("../assets/door_scene.json");
    pub const CALIBRATION: &str = include_str!("../assets/calibration.json");
    pub const DRIVE_TO_THE_DOOR: &str = include_str!("../assets/instructions/drive_to_the_door.tree");
    pub const OPEN_THE_DOOR: &str = include_str!("../assets/instructions/open_the_door.tree");
    pub const DOOR_PLAN: &str = include_str!("../assets/instructions/door.plan");
}

/// Frames simulated per run unless configured otherwise.
pub const DEFAULT_FRAME_BUDGET: usize = 100;

/// Pipeline stage, which also fixes the process exit code on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Io,
    Grounding,
    Perception,
    Execution,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Io => 1,
            Stage::Grounding => 2,
            Stage::Perception => 3,
            Stage::Execution => 4,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Io => "io",
            Stage::Grounding => "grounding",
            Stage::Perception => "perception",
            Stage::Execution => "execution",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError { stage, message: message.to_string() }
    }

    fn io(what: &str, e: impl fmt::Display) -> Self {
        Self::new(Stage::Io, format!("{what}: {e}"))
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

/// Run configuration file. Paths are relative to the file; anything left
/// out falls back to the bundled asset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub symbol_space: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    /// Measured periods; when present, detector costs are solved from them.
    pub calibration: Option<PathBuf>,
    pub perception_model: Option<PathBuf>,
    pub behavior_model: Option<PathBuf>,
    /// Used to train a model on load when no model file is given.
    pub perception_corpus: Option<PathBuf>,
    pub behavior_corpus: Option<PathBuf>,
    pub frame_budget: Option<usize>,
    pub association_radius: Option<f64>,
    pub exec: Option<ExecConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(&path.display().to_string(), e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::io(&path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.symbol_space,
            &mut cfg.lexicon,
            &mut cfg.registry,
            &mut cfg.scene,
            &mut cfg.calibration,
            &mut cfg.perception_model,
            &mut cfg.behavior_model,
            &mut cfg.perception_corpus,
            &mut cfg.behavior_corpus,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

fn read_or(path: &Option<PathBuf>, fallback: &str) -> Result<String, PipelineError> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| PipelineError::io(&p.display().to_string(), e)),
        None => Ok(fallback.to_string()),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::io(what, e))
}

enum ModelSource {
    Loaded(Model),
    Corpus(Vec<TrainingExample>),
}

/// A model that is either read from disk or trained on first use.
struct ModelSlot {
    kind: GraphKind,
    source: ModelSource,
    trained: OnceLock<Result<Model, String>>,
}

impl ModelSlot {
    fn get(&self, space: &SymbolSpace) -> Result<&Model, PipelineError> {
        match &self.source {
            ModelSource::Loaded(m) => Ok(m),
            ModelSource::Corpus(c) => self
                .trained
                .get_or_init(|| train(c, space, &TrainConfig::default()).map(|r| r.model).map_err(|e| e.to_string()))
                .as_ref()
                .map_err(|e| PipelineError::new(Stage::Grounding, format!("training {} model: {e}", self.kind))),
        }
    }
}

/// Everything a run needs, validated up front.
pub struct Assets {
    pub space: SymbolSpace,
    pub lexicon: Lexicon,
    pub registry: DetectorRegistry,
    pub scene: Scene,
    pub exec: ExecConfig,
    pub frame_budget: usize,
    pub association: Association,
    perception: ModelSlot,
    behavior: ModelSlot,
}

fn model_slot(
    kind: GraphKind,
    model: &Option<PathBuf>,
    corpus: &Option<PathBuf>,
    fallback: &str,
    space: &SymbolSpace,
) -> Result<ModelSlot, PipelineError> {
    let source = match model {
        Some(p) => {
            let text = read_or(model, "")?;
            let m = Model::from_json(&text).map_err(|e| PipelineError::io(&p.display().to_string(), e))?;
            if m.kind() != kind {
                return Err(PipelineError::io(&p.display().to_string(), format!("expected a {kind} model, found {}", m.kind())));
            }
            ModelSource::Loaded(m)
        }
        None => {
            let text = read_or(corpus, fallback)?;
            let examples = load_corpus(&text, space).map_err(|e| PipelineError::io(&format!("{kind} corpus"), e))?;
            if let Some(bad) = examples.iter().position(|e| e.kind() != kind) {
                return Err(PipelineError::io(&format!("{kind} corpus"), format!("example {bad} is a {} example", examples[bad].kind())));
            }
            ModelSource::Corpus(examples)
        }
    };
    Ok(ModelSlot { kind, source, trained: OnceLock::new() })
}

impl Assets {
    pub fn bundled() -> Result<Self, PipelineError> {
        Self::from_config(&RunConfig::default())
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let def: SymbolSpaceDef = parse_json("symbol space", &read_or(&cfg.symbol_space, bundled::SYMBOL_SPACE)?)?;
        let space = SymbolSpace::from_def(&def).map_err(|e| PipelineError::io("symbol space", e))?;
        let lexicon = Lexicon::from_rules(&read_or(&cfg.lexicon, bundled::LEXICON)?).map_err(|e| PipelineError::io("lexicon", e))?;
        let mut registry: DetectorRegistry = parse_json("detector registry", &read_or(&cfg.registry, bundled::DETECTORS)?)?;
        let scene: Scene = parse_json("scene", &read_or(&cfg.scene, bundled::DOOR_SCENE)?)?;
        let calibration = match (&cfg.calibration, &cfg.registry) {
            (Some(_), _) => Some(read_or(&cfg.calibration, "")?),
            // a custom registry keeps its own costs unless told otherwise
            (None, Some(_)) => None,
            (None, None) => Some(bundled::CALIBRATION.to_string()),
        };
        if let Some(text) = calibration {
            let rows: Vec<CalibrationRow> = parse_json("calibration", &text)?;
            let costs = calibrate_costs(&rows).map_err(|e| PipelineError::io("calibration", e))?;
            registry.apply_costs(&costs).map_err(|e| PipelineError::io("calibration", e))?;
        }
        let association = match cfg.association_radius {
            Some(r) => Association::new(r).map_err(|e| PipelineError::io("association radius", e))?,
            None => Association::default(),
        };
        let frame_budget = cfg.frame_budget.unwrap_or(DEFAULT_FRAME_BUDGET);
        if frame_budget == 0 {
            return Err(PipelineError::io("frame_budget", "must be at least 1"));
        }
        let perception =
            model_slot(GraphKind::Perception, &cfg.perception_model, &cfg.perception_corpus, bundled::PERCEPTION_CORPUS, &space)?;
        let behavior = model_slot(GraphKind::Behavior, &cfg.behavior_model, &cfg.behavior_corpus, bundled::BEHAVIOR_CORPUS, &space)?;
        Ok(Assets {
            space,
            lexicon,
            registry,
            scene,
            exec: cfg.exec.clone().unwrap_or_default(),
            frame_budget,
            association,
            perception,
            behavior,
        })
    }

    pub fn perception_model(&self) -> Result<&Model, PipelineError> {
        self.perception.get(&self.space)
    }

    pub fn behavior_model(&self) -> Result<&Model, PipelineError> {
        self.behavior.get(&self.space)
    }
}

/// Trains a model from corpus text, rejecting examples of the wrong kind
/// before any optimisation happens.
pub fn train_corpus(text: &str, kind: GraphKind, space: &SymbolSpace, config: &TrainConfig) -> Result<TrainReport, PipelineError> {
    let examples = load_corpus(text, space).map_err(|e| PipelineError::io("corpus", e))?;
    if let Some(bad) = examples.iter().position(|e| e.kind() != kind) {
        return Err(PipelineError::io("corpus", format!("example {bad} does not match a {kind} corpus")));
    }
    train(&examples, space, config).map_err(|e| PipelineError::new(Stage::Grounding, e))
}

/// Output of detector inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGrounding {
    /// Expressed perception symbols, by key.
    pub symbols: Vec<String>,
    pub detectors: DetectorSet,
}

/// Infers P*: the perception symbols any phrase expresses and the detectors
/// they require. Never looks at a world.
pub fn infer_detectors(tree: &ParseTree, space: &SymbolSpace, model: &Model) -> Result<DetectorGrounding, PipelineError> {
    let graph = FactorGraph::perception(tree, space);
    let a = infer(&graph, model).map_err(|e| PipelineError::new(Stage::Grounding, e))?;
    let symbols: Vec<&PerceptionSymbol> = a
        .union()
        .into_iter()
        .filter_map(|j| match &graph.symbols()[j] {
            GroundingSymbol::Perception(p) => Some(p),
            _ => None,
        })
        .collect();
    Ok(DetectorGrounding {
        symbols: symbols.iter().map(|s| s.to_string()).collect(),
        detectors: detectors_from_groundings(symbols.iter().copied()),
    })
}

/// Infers the behavior request against a world snapshot. Behaviors expressed
/// by the root phrase win; among several, the one with the largest factor
/// margin. `None` when no behavior is grounded.
pub fn infer_behavior(
    tree: &ParseTree,
    space: &SymbolSpace,
    model: &Model,
    world: &WorldModel,
) -> Result<Option<BehaviorRequest>, PipelineError> {
    let graph = FactorGraph::behavior(tree, space, world);
    let a = infer(&graph, model).map_err(|e| PipelineError::new(Stage::Grounding, e))?;
    let is_behavior = |j: &usize| matches!(graph.symbols()[*j], GroundingSymbol::Behavior(_));
    let root = tree.root().index();
    let mut candidates: Vec<(usize, usize)> = a.expressed[root].iter().filter(|j| is_behavior(j)).map(|&j| (root, j)).collect();
    if candidates.is_empty() {
        candidates = a.pairs().into_iter().filter(|(_, j)| is_behavior(j)).collect();
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, j) in candidates {
        let child = graph.child_summary(i, &a.expressed);
        let t = model.vectorize(&graph.features(i, j, true, &child));
        let f = model.vectorize(&graph.features(i, j, false, &child));
        let margin = model.weights().dot(&t) - model.weights().dot(&f);
        if best.is_none_or(|(m, _)| margin > m) {
            best = Some((margin, j));
        }
    }
    let Some((_, j)) = best else { return Ok(None) };
    let GroundingSymbol::Behavior(b) = &graph.symbols()[j] else { unreachable!("filtered to behaviors") };
    BehaviorRequest::from_symbol(b).map(Some).map_err(|e| PipelineError::new(Stage::Grounding, e))
}

/// Door state implied by the scene: the first parented handle is the one the
/// arm will meet.
pub fn door_for(scene: &Scene) -> DoorSim {
    let handle = scene
        .objects
        .iter()
        .find(|o| o.parent.is_some() && o.label.as_str().contains("handle"))
        .map(|o| o.bbox.center())
        .unwrap_or([f64::MAX, f64::MAX, 0.0]);
    DoorSim::latched_at(handle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub mode: PerceptionMode,
    /// Detectors forcibly dropped from P* before perception.
    pub without: Vec<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: 0, mode: PerceptionMode::Adaptive, without: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instruction: String,
    pub mode: PerceptionMode,
    pub seed: u64,
    pub lexicon_violations: Vec<String>,
    pub grounding: Option<DetectorGrounding>,
    pub metrics: Option<PerceptionMetrics>,
    pub world: Option<WorldModel>,
    pub behavior: Option<BehaviorRequest>,
    pub status: Option<ExecStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<PipelineError>,
}

impl Serialize for PipelineError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("PipelineError", 2)?;
        st.serialize_field("stage", &self.stage)?;
        st.serialize_field("message", &self.message)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for PipelineError {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            stage: Stage,
            message: String,
        }
        let r = Repr::deserialize(d)?;
        Ok(PipelineError { stage: r.stage, message: r.message })
    }
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        match &self.error {
            Some(e) => e.stage.exit_code(),
            None => 0,
        }
    }

    /// Human-readable execution log, empty if execution never started.
    pub fn log(&self) -> String {
        match (&self.status, &self.behavior) {
            (Some(s), Some(b)) => s.log(b),
            _ => String::new(),
        }
    }
}

/// Runs the full pipeline on one instruction. Stage failures are recorded in
/// the report rather than returned, so partial artifacts survive.
pub fn run(tree: &ParseTree, assets: &Assets, opts: &RunOptions) -> RunReport {
    let mut report = RunReport {
        instruction: tree.instruction().to_string(),
        mode: opts.mode,
        seed: opts.seed,
        lexicon_violations: validate_against_lexicon(tree, &assets.lexicon).iter().map(|v| v.to_string()).collect(),
        grounding: None,
        metrics: None,
        world: None,
        behavior: None,
        status: None,
        error: None,
    };
    if let Err(e) = run_stages(tree, assets, opts, &mut report) {
        report.error = Some(e);
    }
    report
}

fn run_stages(tree: &ParseTree, assets: &Assets, opts: &RunOptions, report: &mut RunReport) -> Result<(), PipelineError> {
    let mut grounding = infer_detectors(tree, &assets.space, assets.perception_model()?)?;
    for id in &opts.without {
        grounding.detectors.remove(id);
    }
    report.grounding = Some(grounding.clone());

    let config = PerceptionConfig {
        active: grounding.detectors,
        mode: opts.mode,
        seed: opts.seed,
        frame_budget: assets.frame_budget,
        association: assets.association,
    };
    let poses = vec![assets.scene.robot_start; assets.frame_budget];
    let world = SharedWorld::default();
    // the perception loop is the world's only writer
    let metrics =
        std::thread::scope(|s| s.spawn(|| run_perception_shared(&assets.scene, &assets.registry, &config, &poses, &world)).join())
            .expect("perception thread panicked")
            .map_err(|e| PipelineError::new(Stage::Perception, e))?;
    report.metrics = Some(metrics);
    let snapshot = world.snapshot();
    report.world = Some(snapshot.clone());

    let behavior = infer_behavior(tree, &assets.space, assets.behavior_model()?, &snapshot)?
        .ok_or_else(|| PipelineError::new(Stage::Grounding, "no behavior grounded for the instruction"))?;
    report.behavior = Some(behavior.clone());

    let mut robot = RobotState::at(assets.scene.robot_start);
    let mut door = door_for(&assets.scene);
    let status = receive_behavior(&behavior, &world, &mut robot, &mut door, &assets.exec, &assets.scene.obstacles);
    let failed = status.state == ExecState::Failure;
    let reason = status.failure_reason.clone().unwrap_or_default();
    report.status = Some(status);
    if failed {
        return Err(PipelineError::new(Stage::Execution, reason));
    }
    Ok(())
}

/// One line of a benchmark plan.
#[derive(Debug, Clone)]
pub struct BenchItem {
    pub mode: PerceptionMode,
    pub tree: ParseTree,
}

/// Plan format: one `adaptive|exhaustive <tree>` per line; `#` starts a comment.
pub fn parse_plan(text: &str) -> Result<Vec<BenchItem>, PipelineError> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (mode, tree) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let mode = match mode {
            "adaptive" => PerceptionMode::Adaptive,
            "exhaustive" => PerceptionMode::Exhaustive,
            other => return Err(PipelineError::io("plan", format!("line {}: unknown mode `{other}`", n + 1))),
        };
        let tree = load_parse_tree(tree).map_err(|e| PipelineError::io("plan", format!("line {}: {e}", n + 1)))?;
        items.push(BenchItem { mode, tree });
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instruction: String,
    /// `EP` or `AP`.
    pub mode: String,
    pub avg_period: f64,
    /// Display names in registry order.
    pub active_detectors: Vec<String>,
    pub world_objects: usize,
    pub outcome: String,
}

pub fn bench(items: &[BenchItem], assets: &Assets, seed: u64) -> Result<Vec<BenchRow>, PipelineError> {
    let mut rows = Vec::new();
    for item in items {
        let r = run(&item.tree, assets, &RunOptions { seed, mode: item.mode, without: Vec::new() });
        let Some(metrics) = &r.metrics else {
            return Err(r.error.unwrap_or_else(|| PipelineError::new(Stage::Perception, "no metrics")));
        };
        let names = metrics
            .active_detectors
            .iter()
            .map(|id| assets.registry.get(id.as_str()).map_or(id.to_string(), |d| d.display().to_string()))
            .collect();
        rows.push(BenchRow {
            instruction: r.instruction.clone(),
            mode: item.mode.tag().to_string(),
            avg_period: metrics.avg_period,
            active_detectors: names,
            world_objects: r.world.as_ref().map_or(0, |w| w.len()),
            outcome: r.status.as_ref().map_or_else(|| "NOT RUN".to_string(), |s| s.state.to_string()),
        });
    }
    Ok(rows)
}

/// Text table with one row per run.
pub fn bench_table(rows: &[BenchRow]) -> String {
    let width = rows.iter().map(|r| r.instruction.len() + 2).max().unwrap_or(0).max("instruction".len());
    let mut out = format!("{:<width$}  {:<4}  {:>12}  {}\n", "instruction", "mode", "avg period s", "active detectors");
    for r in rows {
        let quoted = format!("\"{}\"", r.instruction);
        out.push_str(&format!("{:<width$}  {:<4}  {:>12.3}  {}\n", quoted, r.mode, r.avg_period, r.active_detectors.join(", ")));
    }
    out
}

pub fn bench_json(rows: &[BenchRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Detector sets named in a report, handy for assertions and printing.
pub fn detector_names(set: &DetectorSet) -> BTreeSet<&str> {
    set.detectors.iter().map(|d| d.as_str()).collect()
}
