//! Brute-force inference oracle shared with the acceptance target.
//!
//! The oracle enumerates all 2^n correspondence assignments of a small graph
//! and scores each one with the factored objective, conditioning every
//! phrase on the children's values *within that same assignment*. Candidates
//! are ranked lexicographically by per-phrase log-probability, deepest phrase
//! first, which is the order in which bottom-up search commits to values.

use std::collections::{BTreeSet, HashMap};

use groundwork_core::dcg::{infer, FactorGraph, FeatureIndex, GraphKind, GroundingSymbol, Model, WeightVector};
use groundwork_core::parse::{load_parse_tree, ParseTree};
use groundwork_core::symbols::{build_symbol_space, SemanticLabel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const NOUNS: [&str; 5] = ["door", "handle", "drawer", "box", "top"];
const VERBS: [&str; 4] = ["drive", "open", "turn", "look"];
const PREPS: [&str; 2] = ["through", "of"];

fn noun_phrase(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let n = NOUNS[rng.random_range(0..NOUNS.len())];
    if depth > 0 && rng.random_bool(0.3) {
        let p = PREPS[rng.random_range(0..PREPS.len())];
        format!("(NP (NP (DT the) (NN {n})) (PP (IN {p}) {}))", noun_phrase(rng, depth - 1))
    } else {
        format!("(NP (DT the) (NN {n}))")
    }
}

fn random_tree(rng: &mut ChaCha8Rng) -> ParseTree {
    let v = VERBS[rng.random_range(0..VERBS.len())];
    let text = match rng.random_range(0..4) {
        0 => noun_phrase(rng, 1),
        1 => format!("(VP (VB {v}) {})", noun_phrase(rng, 1)),
        2 => format!("(VP (VB {v}) (PP (IN {}) {}))", PREPS[rng.random_range(0..2)], noun_phrase(rng, 0)),
        _ => format!("(VP (VB {v}) {} (PP (IN through) {}))", noun_phrase(rng, 0), noun_phrase(rng, 0)),
    };
    load_parse_tree(&text).unwrap()
}

fn candidate_symbols() -> Vec<GroundingSymbol> {
    let l = |s: &str| SemanticLabel::new(s).unwrap();
    let space = build_symbol_space(NOUNS.map(l), [(l("door"), l("handle")), (l("drawer"), l("handle")), (l("box"), l("top"))], []).unwrap();
    space.perception_symbols().iter().cloned().map(GroundingSymbol::Perception).collect()
}

/// Every subset of `0..m`.
fn subsets(m: usize) -> Vec<BTreeSet<usize>> {
    (0..1u32 << m).map(|mask| (0..m).filter(|j| mask >> j & 1 == 1).collect()).collect()
}

pub struct Case {
    pub graph: FactorGraph,
    pub model: Model,
    weights: HashMap<String, f64>,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tree, m) = loop {
        let t = random_tree(&mut rng);
        let max_m = 12 / t.phrase_count();
        if max_m >= 1 {
            break (t, rng.random_range(1..=max_m.min(4)));
        }
    };
    let mut pool = candidate_symbols();
    pool.shuffle(&mut rng);
    pool.truncate(m);
    let graph = FactorGraph::with_symbols(&tree, GraphKind::Perception, pool, None);

    // weight every feature any assignment could fire
    let mut index = FeatureIndex::default();
    for i in 0..graph.phrase_count() {
        for child in subsets(m) {
            for j in 0..m {
                for phi in [true, false] {
                    index.intern(&graph.features(i, j, phi, &child));
                }
            }
        }
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let w: Vec<f64> = (0..index.len()).map(|_| normal.sample(&mut rng)).collect();
    let weights = index.names().iter().cloned().zip(w.iter().copied()).collect();
    let model = Model::new(GraphKind::Perception, index, WeightVector::new(w).unwrap()).unwrap();
    Case { graph, model, weights }
}

struct Oracle<'a> {
    case: &'a Case,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    cache: HashMap<(usize, usize, bool, BTreeSet<usize>), f64>,
}

impl<'a> Oracle<'a> {
    fn new(case: &'a Case) -> Self {
        let parents = case.graph.tree().parents();
        let n = parents.len();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let depth = |mut i: usize| {
            let mut d = 0;
            while let Some(p) = parents[i] {
                i = p;
                d += 1;
            }
            d
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(depth(i)), i));
        Oracle { case, children, order, cache: HashMap::new() }
    }

    fn score(&self, names: &[String]) -> f64 {
        names.iter().map(|n| self.case.weights.get(n).copied().unwrap_or(0.0)).sum()
    }

    /// `ln p(phi_ij = value | child)` from the raw exponentiated scores.
    fn log_p(&mut self, i: usize, j: usize, value: bool, child: &BTreeSet<usize>) -> f64 {
        let key = (i, j, value, child.clone());
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let g = &self.case.graph;
        let s1 = self.score(&g.features(i, j, true, child));
        let s0 = self.score(&g.features(i, j, false, child));
        let top = s1.max(s0);
        let (e1, e0) = ((s1 - top).exp(), (s0 - top).exp());
        let v = (if value { e1 } else { e0 } / (e1 + e0)).ln();
        self.cache.insert(key, v);
        v
    }

    fn per_phrase(&mut self, a: &[BTreeSet<usize>]) -> Vec<f64> {
        let m = self.case.graph.symbols().len();
        self.order
            .clone()
            .into_iter()
            .map(|i| {
                let child: BTreeSet<usize> = self.children[i].iter().flat_map(|&c| a[c].iter().copied()).collect();
                (0..m).map(|j| self.log_p(i, j, a[i].contains(&j), &child)).sum()
            })
            .collect()
    }

    fn best(&mut self) -> (Vec<BTreeSet<usize>>, Vec<f64>) {
        let n = self.children.len();
        let m = self.case.graph.symbols().len();
        let mut best: Option<(Vec<BTreeSet<usize>>, Vec<f64>)> = None;
        for mask in 0u32..1 << (n * m) {
            let a: Vec<BTreeSet<usize>> = (0..n).map(|i| (0..m).filter(|j| mask >> (i * m + j) & 1 == 1).collect()).collect();
            let s = self.per_phrase(&a);
            let better = match &best {
                None => true,
                Some((_, b)) => s.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y),
            };
            if better {
                best = Some((a, s));
            }
        }
        best.unwrap()
    }
}

pub fn check(seed: u64) -> Result<(), String> {
    let case = random_case(seed);
    let n = case.graph.factor_count();
    if n > 12 {
        return Err(format!("graph has {n} variables"));
    }
    let got = infer(&case.graph, &case.model).map_err(|e| e.to_string())?;
    let mut oracle = Oracle::new(&case);
    let (want, scores) = oracle.best();
    if got.expressed != want {
        return Err(format!("seed {seed}: infer {:?} vs oracle {:?}", got.expressed, want));
    }
    let total: f64 = scores.iter().sum();
    if (total - got.log_score).abs() > 1e-9 * total.abs().max(1.0) {
        return Err(format!("seed {seed}: log score {} vs oracle {total}", got.log_score));
    }
    Ok(())
}
