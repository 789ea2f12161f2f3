//! Maximum-likelihood training of the factor weights.
//!
//! The objective is the conditional log-likelihood of every gold
//! correspondence value given the gold child assignment, minus an L2 penalty.
//! It is concave, so plain gradient ascent with a backtracking line search
//! is enough at corpus sizes of a few hundred factors.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::parse::ParseTree;
use crate::symbols::SymbolSpace;
use crate::world::WorldModel;

use super::{infer, log_logistic, logistic, DcgError, FactorGraph, FeatureIndex, GraphKind, Model, WeightVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("corpus mixes world-free and world-conditioned examples")]
    MixedKinds,
    #[error("example {example}: gold pair ({phrase}, {symbol}) is out of range")]
    GoldOutOfRange { example: usize, phrase: usize, symbol: usize },
    #[error("objective diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Dcg(#[from] DcgError),
}

/// An annotated parse. Examples with a world train behavior inference,
/// examples without one train detector inference.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub tree: ParseTree,
    pub world: Option<WorldModel>,
    /// `(phrase index, symbol id)` pairs whose correspondence is true.
    pub gold: BTreeSet<(usize, usize)>,
}

impl TrainingExample {
    pub fn new(
        tree: ParseTree,
        world: Option<WorldModel>,
        gold: BTreeSet<(usize, usize)>,
        space: &SymbolSpace,
    ) -> Result<Self, TrainError> {
        let ex = TrainingExample { tree, world, gold };
        ex.check(0, space)?;
        Ok(ex)
    }

    fn check(&self, example: usize, space: &SymbolSpace) -> Result<(), TrainError> {
        let g = self.graph(space);
        for &(phrase, symbol) in &self.gold {
            if phrase >= g.phrase_count() || symbol >= g.symbols().len() {
                return Err(TrainError::GoldOutOfRange { example, phrase, symbol });
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> GraphKind {
        if self.world.is_some() {
            GraphKind::Behavior
        } else {
            GraphKind::Perception
        }
    }

    pub fn graph(&self, space: &SymbolSpace) -> FactorGraph {
        match &self.world {
            Some(w) => FactorGraph::behavior(&self.tree, space, w),
            None => FactorGraph::perception(&self.tree, space),
        }
    }

    /// Gold expressed sets per phrase.
    pub fn gold_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut sets = vec![BTreeSet::new(); self.tree.phrase_count()];
        for &(i, j) in &self.gold {
            sets[i].insert(j);
        }
        sets
    }

    /// Whether inference under `model` reproduces the gold assignment exactly.
    pub fn recovered(&self, space: &SymbolSpace, model: &Model) -> Result<bool, DcgError> {
        Ok(infer(&self.graph(space), model)?.pairs() == self.gold)
    }
}

#[derive(Debug, Clone)]
struct CompiledFactor {
    on: Vec<u32>,
    off: Vec<u32>,
    gold: bool,
}

/// A corpus featurized once against a growing feature index.
#[derive(Debug, Clone)]
pub struct CompiledCorpus {
    kind: GraphKind,
    index: FeatureIndex,
    factors: Vec<CompiledFactor>,
}

impl CompiledCorpus {
    pub fn compile(corpus: &[TrainingExample], space: &SymbolSpace) -> Result<Self, TrainError> {
        let first = corpus.first().ok_or(TrainError::EmptyCorpus)?;
        let kind = first.kind();
        let mut index = FeatureIndex::default();
        let mut factors = Vec::new();
        for (n, ex) in corpus.iter().enumerate() {
            if ex.kind() != kind {
                return Err(TrainError::MixedKinds);
            }
            ex.check(n, space)?;
            let g = ex.graph(space);
            let gold = ex.gold_sets();
            for &i in g.bottom_up_order() {
                let child = g.child_summary(i, &gold);
                for j in 0..g.symbols().len() {
                    let on = index.intern(&g.features(i, j, true, &child));
                    let off = index.intern(&g.features(i, j, false, &child));
                    factors.push(CompiledFactor { on, off, gold: gold[i].contains(&j) });
                }
            }
        }
        Ok(CompiledCorpus { kind, index, factors })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    fn delta(&self, f: &CompiledFactor, w: &WeightVector) -> f64 {
        w.dot_indices(&f.on) - w.dot_indices(&f.off)
    }

    /// Regularized conditional log-likelihood.
    pub fn objective(&self, w: &WeightVector, l2: f64) -> f64 {
        let ll: f64 = self
            .factors
            .iter()
            .map(|f| {
                let d = self.delta(f, w);
                if f.gold {
                    log_logistic(d)
                } else {
                    log_logistic(-d)
                }
            })
            .sum();
        let norm2: f64 = w.as_slice().iter().map(|v| v * v).sum();
        ll - 0.5 * l2 * norm2
    }

    /// `Σ (1[gold] − p(true)) (f_true − f_false) − l2·w`.
    pub fn gradient(&self, w: &WeightVector, l2: f64) -> Vec<f64> {
        let mut g: Vec<f64> = w.as_slice().iter().map(|v| -l2 * v).collect();
        for f in &self.factors {
            let p = logistic(self.delta(f, w));
            let r = if f.gold { 1.0 - p } else { -p };
            for &i in &f.on {
                g[i as usize] += r;
            }
            for &i in &f.off {
                g[i as usize] -= r;
            }
        }
        g
    }
}

/// Log-likelihood of `corpus` under a trained model. Features the model has
/// never seen score zero.
pub fn log_likelihood(corpus: &[TrainingExample], space: &SymbolSpace, model: &Model, l2: f64) -> f64 {
    let w = model.weights();
    let mut ll = 0.0;
    for ex in corpus {
        let g = ex.graph(space);
        let gold = ex.gold_sets();
        for i in 0..g.phrase_count() {
            let child = g.child_summary(i, &gold);
            for j in 0..g.symbols().len() {
                let d =
                    w.dot(&model.vectorize(&g.features(i, j, true, &child))) - w.dot(&model.vectorize(&g.features(i, j, false, &child)));
                ll += if gold[i].contains(&j) { log_logistic(d) } else { log_logistic(-d) };
            }
        }
    }
    let norm2: f64 = w.as_slice().iter().map(|v| v * v).sum();
    ll - 0.5 * l2 * norm2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub l2: f64,
    pub initial_step: f64,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 500, l2: 1e-3, initial_step: 1.0, armijo: 1e-4, tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("history starts with the initial objective")
    }
}

pub fn train(corpus: &[TrainingExample], space: &SymbolSpace, config: &TrainConfig) -> Result<TrainReport, TrainError> {
    if !(config.l2 >= 0.0 && config.initial_step > 0.0 && config.armijo > 0.0 && config.armijo < 1.0) {
        return Err(TrainError::BadConfig("need l2 >= 0, step > 0 and 0 < armijo < 1"));
    }
    let compiled = CompiledCorpus::compile(corpus, space)?;
    let mut w = WeightVector::zeros(compiled.dim());
    let mut obj = compiled.objective(&w, config.l2);
    let mut history = vec![obj];
    let mut step = config.initial_step;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for it in 1..=config.iterations {
        iterations = it;
        let g = compiled.gradient(&w, config.l2);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < config.tolerance {
            converged = true;
            break;
        }
        loop {
            let cand: Vec<f64> = w.as_slice().iter().zip(&g).map(|(a, b)| a + step * b).collect();
            let cand = WeightVector::new(cand).map_err(|_| TrainError::Diverged { iteration: it })?;
            let c = compiled.objective(&cand, config.l2);
            if c.is_nan() {
                return Err(TrainError::Diverged { iteration: it });
            }
            if c >= obj + config.armijo * step * gnorm2 {
                w = cand;
                obj = c;
                history.push(obj);
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // no ascent direction left at machine precision
                converged = true;
                break 'outer;
            }
        }
    }

    let model = Model::new(compiled.kind, compiled.index, w)?;
    Ok(TrainReport { model, objective_history: history, iterations, converged })
}
