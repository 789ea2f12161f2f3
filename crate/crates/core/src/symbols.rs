//! Grounding symbol spaces: detector symbols and behavior symbols.
//!
//! Every symbol has a compact textual key used in corpus and model files:
//!
//! | symbol                         | key                          |
//! |--------------------------------|------------------------------|
//! | semantic-label detector        | `label:door`                 |
//! | other independent detector     | `color:red`, `pose:upright`  |
//! | conditionally dependent pair   | `pair(color:red,label:box)`  |
//! | hierarchical detector          | `hier:door/handle`           |
//! | behavior over a label          | `open:door`                  |
//! | behavior over a world object   | `navigate:@3`                |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::ObjectId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolError {
    #[error("invalid semantic label `{0}`: expected lowercase letters, digits or `_`")]
    InvalidLabel(String),
    #[error("label `{0}` is not registered")]
    UnknownLabel(String),
    #[error("hierarchy `{0}/{0}` pairs a label with itself")]
    SelfPair(String),
    #[error("conditional pair needs two different categories, got `{0}` twice")]
    SameCategory(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed symbol key `{0}`")]
    BadKey(String),
    #[error("{0} behaviors take a single target")]
    UnexpectedSecondTarget(Action),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SemanticLabel(String);

impl SemanticLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, SymbolError> {
        let name = name.into();
        let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if ok {
            Ok(SemanticLabel(name))
        } else {
            Err(SymbolError::InvalidLabel(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SemanticLabel {
    type Error = SymbolError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SemanticLabel::new(value)
    }
}

impl From<SemanticLabel> for String {
    fn from(l: SemanticLabel) -> String {
        l.0
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorCategory {
    Color,
    Geometry,
    SemanticLabel,
    BoundingBox,
    SpatialRelation,
    Pose,
}

impl DetectorCategory {
    pub const ALL: [DetectorCategory; 6] = [
        DetectorCategory::Color,
        DetectorCategory::Geometry,
        DetectorCategory::SemanticLabel,
        DetectorCategory::BoundingBox,
        DetectorCategory::SpatialRelation,
        DetectorCategory::Pose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorCategory::Color => "color",
            DetectorCategory::Geometry => "geometry",
            DetectorCategory::SemanticLabel => "semantic_label",
            DetectorCategory::BoundingBox => "bounding_box",
            DetectorCategory::SpatialRelation => "spatial_relation",
            DetectorCategory::Pose => "pose",
        }
    }

    /// Prefix used in symbol keys.
    fn key_prefix(self) -> &'static str {
        match self {
            DetectorCategory::SemanticLabel => "label",
            other => other.name(),
        }
    }

    fn from_key_prefix(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key_prefix() == s)
    }
}

/// Member of the independent detector symbols. Only the semantic-label
/// category drives real detectors; the rest are typed placeholders.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndependentDetectorSymbol {
    pub category: DetectorCategory,
    pub value: String,
}

impl IndependentDetectorSymbol {
    pub fn label(label: SemanticLabel) -> Self {
        IndependentDetectorSymbol { category: DetectorCategory::SemanticLabel, value: label.0 }
    }

    pub fn semantic_label(&self) -> Option<SemanticLabel> {
        (self.category == DetectorCategory::SemanticLabel).then(|| SemanticLabel(self.value.clone()))
    }
}

impl fmt::Display for IndependentDetectorSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category.key_prefix(), self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionalPairSymbol {
    first: IndependentDetectorSymbol,
    second: IndependentDetectorSymbol,
}

impl ConditionalPairSymbol {
    pub fn new(first: IndependentDetectorSymbol, second: IndependentDetectorSymbol) -> Result<Self, SymbolError> {
        if first.category == second.category {
            return Err(SymbolError::SameCategory(first.category.name().into()));
        }
        Ok(ConditionalPairSymbol { first, second })
    }

    pub fn first(&self) -> &IndependentDetectorSymbol {
        &self.first
    }

    pub fn second(&self) -> &IndependentDetectorSymbol {
        &self.second
    }
}

/// A detector for `subtype` that only operates as a constituent of
/// `parent_type` (a door handle rather than any handle). One level deep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HierarchicalDetectorSymbol {
    parent_type: SemanticLabel,
    subtype: SemanticLabel,
}

impl HierarchicalDetectorSymbol {
    pub fn new(parent_type: SemanticLabel, subtype: SemanticLabel) -> Result<Self, SymbolError> {
        if parent_type == subtype {
            return Err(SymbolError::SelfPair(parent_type.0));
        }
        Ok(HierarchicalDetectorSymbol { parent_type, subtype })
    }

    pub fn parent_type(&self) -> &SemanticLabel {
        &self.parent_type
    }

    pub fn subtype(&self) -> &SemanticLabel {
        &self.subtype
    }

    pub fn parent_detector(&self) -> DetectorId {
        DetectorId(self.parent_type.0.clone())
    }

    /// The specialised detector, e.g. `door_handle`.
    pub fn child_detector(&self) -> DetectorId {
        DetectorId(format!("{}_{}", self.parent_type, self.subtype))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PerceptionSymbol {
    Independent(IndependentDetectorSymbol),
    Conditional(ConditionalPairSymbol),
    Hierarchical(HierarchicalDetectorSymbol),
}

impl PerceptionSymbol {
    pub fn label(label: SemanticLabel) -> Self {
        PerceptionSymbol::Independent(IndependentDetectorSymbol::label(label))
    }

    pub fn hierarchical(parent: SemanticLabel, subtype: SemanticLabel) -> Result<Self, SymbolError> {
        HierarchicalDetectorSymbol::new(parent, subtype).map(PerceptionSymbol::Hierarchical)
    }
}

impl fmt::Display for PerceptionSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerceptionSymbol::Independent(s) => write!(f, "{s}"),
            PerceptionSymbol::Conditional(p) => write!(f, "pair({},{})", p.first, p.second),
            PerceptionSymbol::Hierarchical(h) => write!(f, "hier:{}/{}", h.parent_type, h.subtype),
        }
    }
}

fn parse_independent(s: &str) -> Result<IndependentDetectorSymbol, SymbolError> {
    let bad = || SymbolError::BadKey(s.to_string());
    let (prefix, value) = s.split_once(':').ok_or_else(bad)?;
    let category = DetectorCategory::from_key_prefix(prefix).ok_or_else(bad)?;
    if value.is_empty() {
        return Err(bad());
    }
    if category == DetectorCategory::SemanticLabel {
        SemanticLabel::new(value)?;
    }
    Ok(IndependentDetectorSymbol { category, value: value.to_string() })
}

impl FromStr for PerceptionSymbol {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SymbolError::BadKey(s.to_string());
        if let Some(rest) = s.strip_prefix("hier:") {
            let (p, c) = rest.split_once('/').ok_or_else(bad)?;
            return PerceptionSymbol::hierarchical(SemanticLabel::new(p)?, SemanticLabel::new(c)?);
        }
        if let Some(rest) = s.strip_prefix("pair(").and_then(|r| r.strip_suffix(')')) {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            let pair = ConditionalPairSymbol::new(parse_independent(a.trim())?, parse_independent(b.trim())?)?;
            return Ok(PerceptionSymbol::Conditional(pair));
        }
        parse_independent(s).map(PerceptionSymbol::Independent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Navigate,
    Open,
    Turn,
    Look,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Navigate, Action::Open, Action::Turn, Action::Look];

    pub fn name(self) -> &'static str {
        match self {
            Action::Navigate => "navigate",
            Action::Open => "open",
            Action::Turn => "turn",
            Action::Look => "look",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| SymbolError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Label(SemanticLabel),
    Object(ObjectId),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Label(l) => write!(f, "{l}"),
            Target::Object(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for Target {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix('@') {
            Some(n) => n.parse().map(|n| Target::Object(ObjectId(n))).map_err(|_| SymbolError::BadKey(s.to_string())),
            None => SemanticLabel::new(s).map(Target::Label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BehaviorSymbol {
    action: Action,
    target_a: Target,
    target_b: Option<Target>,
}

impl BehaviorSymbol {
    pub fn new(action: Action, target_a: Target, target_b: Option<Target>) -> Result<Self, SymbolError> {
        if matches!(action, Action::Navigate | Action::Open) && target_b.is_some() {
            // open's second target is resolved by the executive from the world hierarchy
            return Err(SymbolError::UnexpectedSecondTarget(action));
        }
        Ok(BehaviorSymbol { action, target_a, target_b })
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn target_a(&self) -> &Target {
        &self.target_a
    }

    pub fn target_b(&self) -> Option<&Target> {
        self.target_b.as_ref()
    }
}

impl fmt::Display for BehaviorSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.action, self.target_a)?;
        if let Some(b) = &self.target_b {
            write!(f, ",{b}")?;
        }
        Ok(())
    }
}

impl FromStr for BehaviorSymbol {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (action, rest) = s.split_once(':').ok_or_else(|| SymbolError::BadKey(s.to_string()))?;
        let action: Action = action.parse()?;
        let (a, b) = match rest.split_once(',') {
            Some((a, b)) => (a.parse()?, Some(b.parse()?)),
            None => (rest.parse()?, None),
        };
        BehaviorSymbol::new(action, a, b)
    }
}

/// Name of a perception detector, e.g. `door` or `door_handle`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectorId(pub String);

impl DetectorId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DetectorId {
    fn from(s: &str) -> Self {
        DetectorId(s.to_string())
    }
}

/// The inferred detector subset together with parent→child detector links.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub detectors: BTreeSet<DetectorId>,
    /// `(parent detector, child detector)`
    pub links: BTreeSet<(DetectorId, DetectorId)>,
}

impl DetectorSet {
    pub fn is_empty(&self) -> bool {
        self.detectors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.detectors.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.detectors.iter().any(|d| d.0 == id)
    }

    /// Drops a detector and every link that mentions it.
    pub fn remove(&mut self, id: &str) -> bool {
        self.links.retain(|(p, c)| p.0 != id && c.0 != id);
        let before = self.detectors.len();
        self.detectors.retain(|d| d.0 != id);
        before != self.detectors.len()
    }
}

fn independent_detector(s: &IndependentDetectorSymbol) -> DetectorId {
    match s.category {
        DetectorCategory::SemanticLabel => DetectorId(s.value.clone()),
        _ => DetectorId(s.to_string()),
    }
}

/// Maps expressed perception symbols to the detectors that must run.
pub fn detectors_from_groundings<'a, I>(expressed: I) -> DetectorSet
where
    I: IntoIterator<Item = &'a PerceptionSymbol>,
{
    let mut set = DetectorSet::default();
    for sym in expressed {
        match sym {
            PerceptionSymbol::Independent(s) => {
                set.detectors.insert(independent_detector(s));
            }
            PerceptionSymbol::Conditional(p) => {
                set.detectors.insert(independent_detector(&p.first));
                set.detectors.insert(independent_detector(&p.second));
            }
            PerceptionSymbol::Hierarchical(h) => {
                set.detectors.insert(h.parent_detector());
                set.detectors.insert(h.child_detector());
                set.links.insert((h.parent_detector(), h.child_detector()));
            }
        }
    }
    set
}

/// On-disk definition of a symbol space.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSpaceDef {
    pub labels: Vec<String>,
    #[serde(default)]
    pub hierarchy: Vec<(String, String)>,
    #[serde(default)]
    pub actions: Vec<String>,
    /// Extra placeholder perception symbols by key, e.g. `color:red`.
    #[serde(default)]
    pub extra: Vec<String>,
}

/// The full grounding symbol space. Symbol ids are positions in the
/// perception and behavior lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSpace {
    labels: Vec<SemanticLabel>,
    actions: Vec<Action>,
    perception: Vec<PerceptionSymbol>,
    behavior: Vec<BehaviorSymbol>,
}

pub fn build_symbol_space<L, H, A>(labels: L, hierarchy_pairs: H, actions: A) -> Result<SymbolSpace, SymbolError>
where
    L: IntoIterator<Item = SemanticLabel>,
    H: IntoIterator<Item = (SemanticLabel, SemanticLabel)>,
    A: IntoIterator<Item = Action>,
{
    let labels: BTreeSet<SemanticLabel> = labels.into_iter().collect();
    let actions: BTreeSet<Action> = actions.into_iter().collect();
    let mut hier = BTreeSet::new();
    for (parent, sub) in hierarchy_pairs {
        for l in [&parent, &sub] {
            if !labels.contains(l) {
                return Err(SymbolError::UnknownLabel(l.0.clone()));
            }
        }
        hier.insert(HierarchicalDetectorSymbol::new(parent, sub)?);
    }

    let perception =
        labels.iter().cloned().map(PerceptionSymbol::label).chain(hier.into_iter().map(PerceptionSymbol::Hierarchical)).collect();
    let behavior = actions
        .iter()
        .flat_map(|&a| labels.iter().map(move |l| BehaviorSymbol { action: a, target_a: Target::Label(l.clone()), target_b: None }))
        .collect();
    Ok(SymbolSpace { labels: labels.into_iter().collect(), actions: actions.into_iter().collect(), perception, behavior })
}

impl SymbolSpace {
    pub fn from_def(def: &SymbolSpaceDef) -> Result<Self, SymbolError> {
        let labels = def.labels.iter().map(|l| SemanticLabel::new(l.as_str())).collect::<Result<Vec<_>, _>>()?;
        let pairs = def
            .hierarchy
            .iter()
            .map(|(p, c)| Ok((SemanticLabel::new(p.as_str())?, SemanticLabel::new(c.as_str())?)))
            .collect::<Result<Vec<_>, SymbolError>>()?;
        let actions = def.actions.iter().map(|a| a.parse()).collect::<Result<Vec<Action>, _>>()?;
        let mut space = build_symbol_space(labels, pairs, actions)?;
        let mut extra = BTreeSet::new();
        for key in &def.extra {
            let sym: PerceptionSymbol = key.parse()?;
            if !space.perception.contains(&sym) {
                extra.insert(sym);
            }
        }
        space.perception.extend(extra);
        Ok(space)
    }

    pub fn labels(&self) -> &[SemanticLabel] {
        &self.labels
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn perception_symbols(&self) -> &[PerceptionSymbol] {
        &self.perception
    }

    pub fn behavior_symbols(&self) -> &[BehaviorSymbol] {
        &self.behavior
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.binary_search_by(|l| l.0.as_str().cmp(label)).is_ok()
    }

    pub fn perception_id(&self, sym: &PerceptionSymbol) -> Option<usize> {
        self.perception.iter().position(|s| s == sym)
    }
}
