//! Distributed Correspondence Graphs.
//!
//! A [`FactorGraph`] pairs every phrase of a parse with every grounding symbol
//! through a boolean correspondence variable. Each variable has one
//! log-linear factor conditioned on the phrase, the symbol and the union of
//! symbols expressed by the phrase's children. Inference walks phrases bottom
//! up and fixes each variable to its more probable value.
//!
//! Two graph flavours exist: detector inference over perception symbols,
//! which never reads the world, and behavior inference over object and
//! behavior symbols instantiated from a world snapshot.

mod corpus;
mod features;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{phrases_bottom_up, ParseTree};
use crate::symbols::{BehaviorSymbol, PerceptionSymbol, SymbolError, SymbolSpace, Target};
use crate::world::{ObjectId, WorldModel};

pub use corpus::{load_corpus, CorpusEntry, CorpusError};
pub use features::{featurize, FeatureIndex, FeatureVector, PhraseContext, TEMPLATE_VERSION};
pub use train::{log_likelihood, train, CompiledCorpus, TrainConfig, TrainError, TrainReport, TrainingExample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DcgError {
    #[error("non-finite factor score")]
    NonFinite,
    #[error("feature dimension {got} does not match weight dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("weight {0} is not finite")]
    NonFiniteWeight(usize),
    #[error("model template version `{found}` does not match `{expected}`")]
    TemplateVersion { found: String, expected: String },
    #[error("{model} model cannot score a {graph} graph")]
    KindMismatch { model: GraphKind, graph: GraphKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Detector inference: perception symbols, world-free.
    Perception,
    /// Behavior inference: object and behavior symbols over a world.
    Behavior,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Perception => "perception",
            GraphKind::Behavior => "behavior",
        })
    }
}

impl FromStr for GraphKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perception" => Ok(GraphKind::Perception),
            "behavior" => Ok(GraphKind::Behavior),
            other => Err(format!("unknown graph kind `{other}`")),
        }
    }
}

/// Anything a phrase can correspond to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroundingSymbol {
    Perception(PerceptionSymbol),
    /// A concrete world object, as referred to by a noun phrase.
    Object(ObjectId),
    Behavior(BehaviorSymbol),
}

impl fmt::Display for GroundingSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundingSymbol::Perception(p) => write!(f, "{p}"),
            GroundingSymbol::Object(id) => write!(f, "object:{id}"),
            GroundingSymbol::Behavior(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for GroundingSymbol {
    type Err = SymbolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("object:") {
            return match rest.parse::<Target>()? {
                Target::Object(id) => Ok(GroundingSymbol::Object(id)),
                Target::Label(_) => Err(SymbolError::BadKey(s.to_string())),
            };
        }
        match s.parse::<PerceptionSymbol>() {
            Ok(p) => Ok(GroundingSymbol::Perception(p)),
            Err(_) => s.parse::<BehaviorSymbol>().map(GroundingSymbol::Behavior),
        }
    }
}

/// One correspondence variable per (phrase, symbol) pair, each with a factor.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    tree: ParseTree,
    kind: GraphKind,
    symbols: Vec<GroundingSymbol>,
    contexts: Vec<PhraseContext>,
    order: Vec<usize>,
    world: Option<WorldModel>,
}

impl FactorGraph {
    /// Detector-inference graph over the space's perception symbols.
    pub fn perception(tree: &ParseTree, space: &SymbolSpace) -> Self {
        let symbols = space.perception_symbols().iter().cloned().map(GroundingSymbol::Perception).collect();
        Self::with_symbols(tree, GraphKind::Perception, symbols, None)
    }

    /// Behavior-inference graph: one object symbol per world object and one
    /// behavior symbol per (action, object) pair.
    pub fn behavior(tree: &ParseTree, space: &SymbolSpace, world: &WorldModel) -> Self {
        let mut symbols: Vec<GroundingSymbol> = world.objects().iter().map(|o| GroundingSymbol::Object(o.id)).collect();
        for &action in space.actions() {
            for o in world.objects() {
                let b = BehaviorSymbol::new(action, Target::Object(o.id), None).expect("single target");
                symbols.push(GroundingSymbol::Behavior(b));
            }
        }
        Self::with_symbols(tree, GraphKind::Behavior, symbols, Some(world.clone()))
    }

    pub fn with_symbols(tree: &ParseTree, kind: GraphKind, symbols: Vec<GroundingSymbol>, world: Option<WorldModel>) -> Self {
        FactorGraph {
            tree: tree.clone(),
            kind,
            symbols,
            contexts: PhraseContext::for_tree(tree),
            order: phrases_bottom_up(tree).iter().map(|p| p.index()).collect(),
            world,
        }
    }

    /// Attaches a world; perception factors still ignore it.
    pub fn with_world(mut self, world: Option<WorldModel>) -> Self {
        self.world = world;
        self
    }

    pub fn tree(&self) -> &ParseTree {
        &self.tree
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn symbols(&self) -> &[GroundingSymbol] {
        &self.symbols
    }

    pub fn world(&self) -> Option<&WorldModel> {
        self.world.as_ref()
    }

    pub fn phrase_count(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> &[PhraseContext] {
        &self.contexts
    }

    /// Phrase indices, children before parents.
    pub fn bottom_up_order(&self) -> &[usize] {
        &self.order
    }

    pub fn factor_count(&self) -> usize {
        self.phrase_count() * self.symbols.len()
    }

    pub fn symbol_id(&self, sym: &GroundingSymbol) -> Option<usize> {
        self.symbols.iter().position(|s| s == sym)
    }

    /// Union of the symbols expressed by the children of `phrase`.
    pub fn child_summary(&self, phrase: usize, expressed: &[BTreeSet<usize>]) -> BTreeSet<usize> {
        self.contexts[phrase].children.iter().flat_map(|&c| expressed[c].iter().copied()).collect()
    }

    pub fn features(&self, phrase: usize, symbol: usize, phi: bool, child: &BTreeSet<usize>) -> Vec<String> {
        let kids: Vec<&GroundingSymbol> = child.iter().map(|&j| &self.symbols[j]).collect();
        featurize(&self.contexts[phrase], &self.symbols[symbol], phi, &kids, self.world.as_ref())
    }
}

/// Dense weights; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, DcgError> {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(DcgError::NonFiniteWeight(i));
        }
        Ok(WeightVector(w))
    }

    pub fn zeros(dim: usize) -> Self {
        WeightVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, f: &FeatureVector) -> f64 {
        f.indices().iter().map(|&i| self.0[i as usize]).sum()
    }

    pub(crate) fn dot_indices(&self, idx: &[u32]) -> f64 {
        idx.iter().map(|&i| self.0[i as usize]).sum()
    }
}

/// Logistic function arranged so that `p(d) + p(-d) == 1` exactly.
pub(crate) fn logistic(delta: f64) -> f64 {
    if delta >= 0.0 {
        1.0 / (1.0 + (-delta).exp())
    } else {
        1.0 - 1.0 / (1.0 + delta.exp())
    }
}

/// `ln σ(d)` without overflow.
pub(crate) fn log_logistic(delta: f64) -> f64 {
    if delta >= 0.0 {
        -(-delta).exp().ln_1p()
    } else {
        delta - delta.exp().ln_1p()
    }
}

/// Probability that the correspondence variable is true:
/// `exp(w·f_true) / (exp(w·f_true) + exp(w·f_false))`.
pub fn factor_prob(fv_true: &FeatureVector, fv_false: &FeatureVector, w: &WeightVector) -> Result<f64, DcgError> {
    for fv in [fv_true, fv_false] {
        if fv.dim() != w.len() {
            return Err(DcgError::DimensionMismatch { expected: w.len(), got: fv.dim() });
        }
    }
    let delta = w.dot(fv_true) - w.dot(fv_false);
    if !delta.is_finite() {
        return Err(DcgError::NonFinite);
    }
    Ok(logistic(delta))
}

/// Trained factor parameters: feature names with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: GraphKind,
    index: FeatureIndex,
    weights: WeightVector,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    kind: GraphKind,
    weights: BTreeMap<String, f64>,
}

impl Model {
    pub fn new(kind: GraphKind, index: FeatureIndex, weights: WeightVector) -> Result<Self, DcgError> {
        if index.len() != weights.len() {
            return Err(DcgError::DimensionMismatch { expected: index.len(), got: weights.len() });
        }
        Ok(Model { kind, index, weights })
    }

    /// Model that scores every factor at zero.
    pub fn empty(kind: GraphKind) -> Self {
        Model { kind, index: FeatureIndex::default(), weights: WeightVector::zeros(0) }
    }

    pub fn from_weights<I>(kind: GraphKind, weights: I) -> Result<Self, DcgError>
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut index = FeatureIndex::default();
        let mut w = Vec::new();
        for (name, v) in weights {
            let i = index.intern_one(&name) as usize;
            if i == w.len() {
                w.push(v);
            } else {
                w[i] = v;
            }
        }
        Model::new(kind, index, WeightVector::new(w)?)
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn weight(&self, name: &str) -> f64 {
        self.index.get(name).map(|i| self.weights.0[i as usize]).unwrap_or(0.0)
    }

    pub fn vectorize(&self, names: &[String]) -> FeatureVector {
        self.index.lookup(names)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: TEMPLATE_VERSION.to_string(),
            kind: self.kind,
            weights: self.index.names().iter().cloned().zip(self.weights.0.iter().copied()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelLoadError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != TEMPLATE_VERSION {
            return Err(DcgError::TemplateVersion { found: file.version, expected: TEMPLATE_VERSION.into() }.into());
        }
        Ok(Model::from_weights(file.kind, file.weights)?)
    }
}

#[derive(Debug, Error)]
pub enum ModelLoadError {
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] DcgError),
}

/// Result of inference: expressed symbol ids per phrase plus the summed
/// log-probability of the chosen values.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub expressed: Vec<BTreeSet<usize>>,
    pub log_score: f64,
}

impl Assignment {
    pub fn is_expressed(&self, phrase: usize, symbol: usize) -> bool {
        self.expressed[phrase].contains(&symbol)
    }

    /// Every symbol expressed by any phrase.
    pub fn union(&self) -> BTreeSet<usize> {
        self.expressed.iter().flatten().copied().collect()
    }

    /// All `(phrase, symbol)` pairs set to true.
    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.expressed.iter().enumerate().flat_map(|(i, set)| set.iter().map(move |&j| (i, j))).collect()
    }
}

/// Bottom-up argmax: each variable takes the value its factor prefers given
/// the already-fixed children; ties resolve to "not expressed".
pub fn infer(graph: &FactorGraph, model: &Model) -> Result<Assignment, DcgError> {
    if graph.kind != model.kind {
        return Err(DcgError::KindMismatch { model: model.kind, graph: graph.kind });
    }
    let mut expressed = vec![BTreeSet::new(); graph.phrase_count()];
    let mut log_score = 0.0;
    for &i in &graph.order {
        let child = graph.child_summary(i, &expressed);
        for j in 0..graph.symbols.len() {
            let t = model.vectorize(&graph.features(i, j, true, &child));
            let f = model.vectorize(&graph.features(i, j, false, &child));
            let delta = model.weights.dot(&t) - model.weights.dot(&f);
            if !delta.is_finite() {
                return Err(DcgError::NonFinite);
            }
            if delta > 0.0 {
                expressed[i].insert(j);
                log_score += log_logistic(delta);
            } else {
                log_score += log_logistic(-delta);
            }
        }
    }
    Ok(Assignment { expressed, log_score })
}
