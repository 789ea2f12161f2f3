//! Feature templates for the log-linear correspondence factors.
//!
//! Every feature is a binary conjunction rendered as `key=value` atoms joined
//! by `&`, always ending in the correspondence value (`phi=1` / `phi=0`).
//! Perception symbols never look at the world model.

use std::collections::{BTreeSet, HashMap};

use crate::parse::{ParseTree, Phrase};
use crate::symbols::{DetectorCategory, PerceptionSymbol, Target};
use crate::world::{ObjectId, WorldModel};

use super::{DcgError, GroundingSymbol};

/// Bumped whenever the templates below change meaning.
pub const TEMPLATE_VERSION: &str = "dcg-templates-v1";

/// What the templates need to know about one phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseContext {
    pub index: usize,
    pub label: String,
    /// Directly attached `(word, tag)` pairs.
    pub words: Vec<(String, String)>,
    /// Verb of the nearest phrase (self included) that carries one.
    pub verb: Option<String>,
    pub children: Vec<usize>,
}

impl PhraseContext {
    /// Contexts for every phrase of `tree`, indexed by phrase index.
    pub fn for_tree(tree: &ParseTree) -> Vec<PhraseContext> {
        fn visit(p: &Phrase, inherited: Option<&str>, out: &mut Vec<Option<PhraseContext>>) {
            let words: Vec<(String, String)> = p.words().map(|w| (w.text.clone(), w.tag.to_string())).collect();
            let own = p.words().find(|w| w.tag.is_verb()).map(|w| w.text.clone());
            let verb = own.or_else(|| inherited.map(str::to_string));
            for c in p.children() {
                visit(c, verb.as_deref(), out);
            }
            out[p.index()] = Some(PhraseContext {
                index: p.index(),
                label: p.label().to_string(),
                words,
                verb,
                children: p.children().map(|c| c.index()).collect(),
            });
        }
        let mut out = vec![None; tree.phrase_count()];
        visit(tree.root(), None, &mut out);
        out.into_iter().map(|c| c.expect("indices are contiguous")).collect()
    }
}

struct SymbolView {
    kind: &'static str,
    category: String,
    roles: Vec<(&'static str, String)>,
}

fn object_label(world: Option<&WorldModel>, id: ObjectId) -> String {
    world.and_then(|w| w.get(id)).map(|o| o.label.to_string()).unwrap_or_else(|| "unknown".into())
}

fn target_label(world: Option<&WorldModel>, t: &Target) -> String {
    match t {
        Target::Label(l) => l.to_string(),
        Target::Object(id) => object_label(world, *id),
    }
}

fn view(symbol: &GroundingSymbol, world: Option<&WorldModel>) -> SymbolView {
    match symbol {
        GroundingSymbol::Perception(PerceptionSymbol::Independent(s)) => match s.category {
            DetectorCategory::SemanticLabel => {
                SymbolView { kind: "label", category: s.category.name().into(), roles: vec![("label", s.value.clone())] }
            }
            other => SymbolView {
                kind: other.name(),
                category: other.name().into(),
                roles: vec![("value", format!("{}:{}", other.name(), s.value))],
            },
        },
        GroundingSymbol::Perception(PerceptionSymbol::Conditional(p)) => SymbolView {
            kind: "pair",
            category: "conditional".into(),
            roles: vec![("pair_first", p.first().to_string()), ("pair_second", p.second().to_string())],
        },
        GroundingSymbol::Perception(PerceptionSymbol::Hierarchical(h)) => SymbolView {
            kind: "hier",
            category: "hierarchical".into(),
            roles: vec![("hier_parent", h.parent_type().to_string()), ("hier_subtype", h.subtype().to_string())],
        },
        GroundingSymbol::Object(id) => {
            SymbolView { kind: "object", category: "object".into(), roles: vec![("obj", object_label(world, *id))] }
        }
        GroundingSymbol::Behavior(b) => SymbolView {
            kind: "behavior",
            category: "behavior".into(),
            roles: vec![("action", b.action().to_string()), ("target", target_label(world, b.target_a()))],
        },
    }
}

/// Reads the world only for object and behavior symbols.
fn world_for<'a>(symbol: &GroundingSymbol, world: Option<&'a WorldModel>) -> Option<&'a WorldModel> {
    match symbol {
        GroundingSymbol::Perception(_) => None,
        _ => world,
    }
}

/// Summary of what the child phrases expressed.
struct ChildSummary {
    labels: BTreeSet<String>,
    hier: BTreeSet<String>,
    objects: BTreeSet<ObjectId>,
    contains_self: bool,
}

fn summarize(symbol: &GroundingSymbol, child: &[&GroundingSymbol], world: Option<&WorldModel>) -> ChildSummary {
    let mut s = ChildSummary { labels: BTreeSet::new(), hier: BTreeSet::new(), objects: BTreeSet::new(), contains_self: false };
    for &c in child {
        if c == symbol {
            s.contains_self = true;
        }
        match c {
            GroundingSymbol::Perception(PerceptionSymbol::Independent(i)) => {
                if let Some(l) = i.semantic_label() {
                    s.labels.insert(l.to_string());
                }
            }
            GroundingSymbol::Perception(PerceptionSymbol::Hierarchical(h)) => {
                s.labels.insert(h.parent_type().to_string());
                s.hier.insert(format!("{}/{}", h.parent_type(), h.subtype()));
            }
            GroundingSymbol::Perception(PerceptionSymbol::Conditional(_)) => {}
            GroundingSymbol::Object(id) => {
                s.objects.insert(*id);
                s.labels.insert(object_label(world, *id));
            }
            GroundingSymbol::Behavior(_) => {}
        }
    }
    s
}

/// Expands every template for one factor side. Output is sorted and free of
/// duplicates, so identical inputs give identical vectors.
pub fn featurize(
    ctx: &PhraseContext,
    symbol: &GroundingSymbol,
    phi: bool,
    child: &[&GroundingSymbol],
    world: Option<&WorldModel>,
) -> Vec<String> {
    let world = world_for(symbol, world);
    let v = view(symbol, world);
    let kid = summarize(symbol, child, world);
    let p = &ctx.label;
    let k = v.kind;
    let mut f: BTreeSet<String> = BTreeSet::new();

    f.insert(format!("bias&kind={k}"));
    f.insert(format!("phrase={p}&kind={k}"));
    for (role, val) in &v.roles {
        f.insert(format!("phrase={p}&{role}={val}"));
        for (w, _) in &ctx.words {
            f.insert(format!("word={w}&{role}={val}"));
        }
    }
    for (_, tag) in &ctx.words {
        f.insert(format!("tag={tag}&category={}", v.category));
    }

    if kid.labels.is_empty() && kid.hier.is_empty() && !kid.contains_self {
        f.insert(format!("child=none&kind={k}"));
        f.insert(format!("phrase={p}&child=none&kind={k}"));
    }
    if kid.contains_self {
        f.insert(format!("child_same&kind={k}"));
        f.insert(format!("phrase={p}&child_same&kind={k}"));
    }
    for c in &kid.labels {
        for (role, val) in &v.roles {
            f.insert(format!("child_has={c}&{role}={val}"));
            f.insert(format!("phrase={p}&child_has={c}&{role}={val}"));
        }
    }
    for h in &kid.hier {
        for (role, val) in &v.roles {
            f.insert(format!("child_hier={h}&{role}={val}"));
        }
    }

    match &ctx.verb {
        Some(verb) => {
            f.insert(format!("verb={verb}&kind={k}&phrase={p}"));
            for (role, val) in &v.roles {
                f.insert(format!("verb={verb}&{role}={val}"));
                for c in &kid.labels {
                    f.insert(format!("verb={verb}&{role}={val}&child_has={c}"));
                }
            }
        }
        None => {
            f.insert(format!("verb=none&kind={k}"));
        }
    }

    match symbol {
        GroundingSymbol::Behavior(b) => {
            let a = b.action();
            let yes = match b.target_a() {
                Target::Object(id) => kid.objects.contains(id),
                Target::Label(l) => kid.labels.contains(l.as_str()),
            };
            let ct = if yes { "yes" } else { "no" };
            f.insert(format!("action={a}&child_target={ct}"));
            f.insert(format!("phrase={p}&action={a}&child_target={ct}"));
            if let Some(verb) = &ctx.verb {
                f.insert(format!("verb={verb}&action={a}&child_target={ct}"));
            }
            if let (Some(w), Target::Object(id)) = (world, b.target_a()) {
                let parts = !w.children_of(*id).is_empty();
                f.insert(format!("action={a}&target_has_parts={parts}"));
            }
        }
        GroundingSymbol::Object(id) => {
            let yes = kid.objects.contains(id);
            f.insert(format!("kind=object&child_target={}", if yes { "yes" } else { "no" }));
            f.insert(format!("phrase={p}&kind=object&child_target={}", if yes { "yes" } else { "no" }));
            if let Some(o) = world.and_then(|w| w.get(*id)) {
                let ambiguous = world.is_some_and(|w| w.query(o.label.as_str()).len() > 1);
                f.insert(format!("obj={}&has_parent={}", o.label, o.parent.is_some()));
                f.insert(format!("obj={}&ambiguous={ambiguous}", o.label));
            }
        }
        GroundingSymbol::Perception(_) => {}
    }

    let suffix = if phi { "&phi=1" } else { "&phi=0" };
    f.into_iter()
        .map(|mut s| {
            s.push_str(suffix);
            s
        })
        .collect()
}

/// Sparse binary feature vector: sorted, unique indices below `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    indices: Vec<u32>,
    dim: usize,
}

impl FeatureVector {
    pub fn new(mut indices: Vec<u32>, dim: usize) -> Result<Self, DcgError> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(DcgError::IndexOutOfRange { index: last as usize, dim });
            }
        }
        Ok(FeatureVector { indices, dim })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Feature-name interner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureIndex {
    names: Vec<String>,
    map: HashMap<String, u32>,
}

impl FeatureIndex {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.map.get(name).copied()
    }

    pub fn intern_one(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.map.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.map.insert(name.to_string(), i);
        i
    }

    /// Indices for `names`, adding unseen names. Dimension is taken after
    /// interning, so callers re-read [`FeatureIndex::len`] before sizing weights.
    pub fn intern(&mut self, names: &[String]) -> Vec<u32> {
        let mut idx: Vec<u32> = names.iter().map(|n| self.intern_one(n)).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Vector over known names only; unseen features carry zero weight anyway.
    pub fn lookup(&self, names: &[String]) -> FeatureVector {
        let mut idx: Vec<u32> = names.iter().filter_map(|n| self.get(n)).collect();
        idx.sort_unstable();
        idx.dedup();
        FeatureVector { indices: idx, dim: self.len() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::load_parse_tree;
    use crate::symbols::SemanticLabel;

    fn l(s: &str) -> SemanticLabel {
        SemanticLabel::new(s).unwrap()
    }

    #[test]
    fn contexts_inherit_verb() {
        let t = load_parse_tree("(VP (VB drive) (PP (TO to) (NP (DT the) (NN door))))").unwrap();
        let ctx = PhraseContext::for_tree(&t);
        assert_eq!(ctx.len(), 3);
        assert_eq!(ctx[2].verb.as_deref(), Some("drive"));
        assert_eq!(ctx[2].words, vec![("the".into(), "DT".into()), ("door".into(), "NN".into())]);
        assert_eq!(ctx[0].children, vec![1]);
        let np = load_parse_tree("(NP (DT the) (NN door))").unwrap();
        assert_eq!(PhraseContext::for_tree(&np)[0].verb, None);
    }

    #[test]
    fn label_symbol_in_noun_phrase() {
        let t = load_parse_tree("(NP (DT the) (NN door))").unwrap();
        let ctx = &PhraseContext::for_tree(&t)[0];
        let door = GroundingSymbol::Perception(PerceptionSymbol::label(l("door")));
        let f = featurize(ctx, &door, true, &[], None);
        assert!(f.contains(&"word=door&label=door&phi=1".to_string()));
        assert!(f.contains(&"tag=NN&category=semantic_label&phi=1".to_string()));
        assert!(f.iter().all(|s| s.ends_with("&phi=1")));
        assert_eq!(f, featurize(ctx, &door, true, &[], None));
        let off = featurize(ctx, &door, false, &[], None);
        assert!(off.iter().all(|s| s.ends_with("&phi=0")));
        assert_eq!(off.len(), f.len());
    }

    #[test]
    fn hierarchical_symbol_under_open() {
        let t = load_parse_tree("(VP (VB open) (NP (DT the) (NN door)))").unwrap();
        let ctx = &PhraseContext::for_tree(&t)[0];
        let door = GroundingSymbol::Perception(PerceptionSymbol::label(l("door")));
        let hier = GroundingSymbol::Perception(PerceptionSymbol::hierarchical(l("door"), l("handle")).unwrap());
        let f = featurize(ctx, &hier, true, &[&door], None);
        for want in [
            "verb=open&hier_subtype=handle&child_has=door&phi=1",
            "verb=open&hier_parent=door&child_has=door&phi=1",
            "child_has=door&hier_subtype=handle&phi=1",
            "word=open&hier_subtype=handle&phi=1",
        ] {
            assert!(f.contains(&want.to_string()), "missing {want}: {f:#?}");
        }
    }

    #[test]
    fn interning_and_lookup() {
        let mut idx = FeatureIndex::default();
        let a = idx.intern(&["b".into(), "a".into(), "b".into()]);
        assert_eq!(a, vec![0, 1]);
        let v = idx.lookup(&["a".into(), "zzz".into()]);
        assert_eq!(v.indices(), &[1]);
        assert_eq!(v.dim(), 2);
        assert!(FeatureVector::new(vec![3], 2).is_err());
        assert_eq!(FeatureVector::new(vec![1, 0, 1], 2).unwrap().indices(), &[0, 1]);
    }
}
