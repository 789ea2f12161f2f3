//! Constituency parse trees of instructions.
//!
//! Trees are read from PTB-style bracketed text such as
//! `(VP (VB open) (NP (DT the) (NN door)))`. Pre-terminals `(TAG word)` become
//! [`Word`]s of their enclosing phrase; every other bracket is a [`Phrase`].
//! Phrase indices follow a pre-order walk, so the root is always phrase 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("empty phrase `{label}` at offset {offset}")]
    EmptyPhrase { offset: usize, label: String },
    #[error("invalid part-of-speech tag `{tag}` at offset {offset}")]
    InvalidTag { offset: usize, tag: String },
    #[error("structural error at offset {offset}: {message}")]
    Structure { offset: usize, message: String },
}

impl ParseError {
    /// Character offset into the source text where the problem was found.
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::EmptyPhrase { offset, .. }
            | ParseError::InvalidTag { offset, .. }
            | ParseError::Structure { offset, .. } => *offset,
        }
    }
}

/// Part-of-speech tag of a leaf word. Any non-empty uppercase ASCII word is
/// accepted; whether the tag is known is a lexicon question.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PosTag(String);

impl PosTag {
    pub fn new(tag: impl Into<String>) -> Result<Self, String> {
        let tag = tag.into();
        if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_uppercase()) {
            return Err(tag);
        }
        Ok(PosTag(tag))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_verb(&self) -> bool {
        self.0.starts_with("VB")
    }
}

impl TryFrom<String> for PosTag {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        PosTag::new(value).map_err(|t| format!("invalid part-of-speech tag `{t}`"))
    }
}

impl From<PosTag> for String {
    fn from(tag: PosTag) -> String {
        tag.0
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub tag: PosTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constituent {
    Word(Word),
    Phrase(Phrase),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phrase {
    label: String,
    index: usize,
    items: Vec<Constituent>,
}

impl Phrase {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Words and child phrases in surface order.
    pub fn constituents(&self) -> &[Constituent] {
        &self.items
    }

    /// Words attached directly to this phrase (not to its children).
    pub fn words(&self) -> impl Iterator<Item = &Word> + '_ {
        self.items.iter().filter_map(|c| match c {
            Constituent::Word(w) => Some(w),
            Constituent::Phrase(_) => None,
        })
    }

    pub fn children(&self) -> impl Iterator<Item = &Phrase> + '_ {
        self.items.iter().filter_map(|c| match c {
            Constituent::Phrase(p) => Some(p),
            Constituent::Word(_) => None,
        })
    }

    /// Every word under this phrase, left to right.
    pub fn leaves(&self) -> Vec<&Word> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Word>) {
        for item in &self.items {
            match item {
                Constituent::Word(w) => out.push(w),
                Constituent::Phrase(p) => p.collect_leaves(out),
            }
        }
    }

    fn render(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        for item in &self.items {
            out.push(' ');
            match item {
                Constituent::Word(w) => {
                    out.push('(');
                    out.push_str(w.tag.as_str());
                    out.push(' ');
                    out.push_str(&w.text);
                    out.push(')');
                }
                Constituent::Phrase(p) => p.render(out),
            }
        }
        out.push(')');
    }
}

/// A constituency parse of one instruction. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    root: Phrase,
    instruction: String,
    phrase_count: usize,
}

impl ParseTree {
    pub fn root(&self) -> &Phrase {
        &self.root
    }

    /// The instruction text: leaf words joined by single spaces.
    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn phrase_count(&self) -> usize {
        self.phrase_count
    }

    /// Phrases in index (pre-order) order.
    pub fn phrases(&self) -> Vec<&Phrase> {
        let mut out = Vec::with_capacity(self.phrase_count);
        let mut stack = vec![&self.root];
        while let Some(p) = stack.pop() {
            out.push(p);
            let children: Vec<_> = p.children().collect();
            stack.extend(children.into_iter().rev());
        }
        out
    }

    pub fn phrase(&self, index: usize) -> Option<&Phrase> {
        self.phrases().into_iter().find(|p| p.index == index)
    }

    /// Parent index for every phrase, indexed by phrase index. The root maps to `None`.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.phrase_count];
        for p in self.phrases() {
            for c in p.children() {
                parents[c.index] = Some(p.index);
            }
        }
        parents
    }

    pub fn leaves(&self) -> Vec<&Word> {
        self.root.leaves()
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.root.render(&mut out);
        f.write_str(&out)
    }
}

impl FromStr for ParseTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        load_parse_tree(s)
    }
}

/// Reads exactly one bracketed tree.
pub fn load_parse_tree(text: &str) -> Result<ParseTree, ParseError> {
    let mut parser = Parser::new(text);
    let tree = parser.tree()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax { offset: tok.offset, message: "trailing input after tree".into() });
    }
    Ok(tree)
}

/// Reads any number of whitespace-separated trees, so both one-tree-per-line
/// files and single multi-line trees load the same way.
pub fn load_parse_trees(text: &str) -> Result<Vec<ParseTree>, ParseError> {
    let mut parser = Parser::new(text);
    let mut trees = Vec::new();
    while parser.peek().is_some() {
        trees.push(parser.tree()?);
    }
    Ok(trees)
}

/// Phrases ordered so that each appears after all of its descendants.
pub fn phrases_bottom_up(tree: &ParseTree) -> Vec<&Phrase> {
    fn visit<'a>(p: &'a Phrase, out: &mut Vec<&'a Phrase>) {
        for c in p.children() {
            visit(c, out);
        }
        out.push(p);
    }
    let mut out = Vec::with_capacity(tree.phrase_count);
    visit(&tree.root, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Open,
    Close,
    Atom,
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    kind: TokKind,
    offset: usize,
    text: &'a str,
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token<'a>>,
    pos: usize,
}

enum RawNode {
    Leaf(Word),
    Phrase { label: String, items: Vec<RawNode> },
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut chars = src.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            match c {
                '(' => {
                    tokens.push(Token { kind: TokKind::Open, offset: i, text: "(" });
                    chars.next();
                }
                ')' => {
                    tokens.push(Token { kind: TokKind::Close, offset: i, text: ")" });
                    chars.next();
                }
                c if c.is_whitespace() => {
                    chars.next();
                }
                _ => {
                    let start = i;
                    let mut end = src.len();
                    while let Some(&(j, c)) = chars.peek() {
                        if c == '(' || c == ')' || c.is_whitespace() {
                            end = j;
                            break;
                        }
                        chars.next();
                    }
                    tokens.push(Token { kind: TokKind::Atom, offset: start, text: &src[start..end] });
                }
            }
        }
        Parser { src, tokens, pos: 0 }
    }

    fn peek(&self) -> Option<Token<'a>> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<Token<'a>> {
        let tok = self.peek();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn eof_error(&self, message: &str) -> ParseError {
        ParseError::Syntax { offset: self.src.len(), message: message.into() }
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<Token<'a>, ParseError> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(t),
            Some(t) => Err(ParseError::Syntax { offset: t.offset, message: format!("expected {what}, found `{}`", t.text) }),
            None => Err(self.eof_error(&format!("unbalanced brackets: expected {what}"))),
        }
    }

    fn tree(&mut self) -> Result<ParseTree, ParseError> {
        let start = self.peek().map(|t| t.offset).unwrap_or(self.src.len());
        let raw = self.node()?;
        let RawNode::Phrase { label, items } = raw else {
            return Err(ParseError::Structure { offset: start, message: "tree root must be a phrase, not a tagged word".into() });
        };
        let mut counter = 0;
        let root = build_phrase(label, items, &mut counter);
        let instruction = root.leaves().iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
        Ok(ParseTree { root, instruction, phrase_count: counter })
    }

    fn node(&mut self) -> Result<RawNode, ParseError> {
        let open = self.expect(TokKind::Open, "`(`")?;
        let label = self.expect(TokKind::Atom, "a label")?;
        match self.peek() {
            None => Err(self.eof_error("unbalanced brackets: expected `)`")),
            Some(t) if t.kind == TokKind::Atom => {
                // pre-terminal: (TAG word)
                self.next();
                let tag = PosTag::new(label.text).map_err(|tag| ParseError::InvalidTag { offset: label.offset, tag })?;
                self.expect(TokKind::Close, "`)` after tagged word")?;
                Ok(RawNode::Leaf(Word { text: t.text.to_lowercase(), tag }))
            }
            Some(t) if t.kind == TokKind::Close => Err(ParseError::EmptyPhrase { offset: open.offset, label: label.text.to_string() }),
            Some(_) => {
                let mut items = Vec::new();
                loop {
                    match self.peek() {
                        None => return Err(self.eof_error("unbalanced brackets: expected `)`")),
                        Some(t) if t.kind == TokKind::Close => {
                            self.next();
                            break;
                        }
                        Some(_) => items.push(self.node()?),
                    }
                }
                Ok(RawNode::Phrase { label: label.text.to_string(), items })
            }
        }
    }
}

fn build_phrase(label: String, items: Vec<RawNode>, counter: &mut usize) -> Phrase {
    let index = *counter;
    *counter += 1;
    let items = items
        .into_iter()
        .map(|n| match n {
            RawNode::Leaf(w) => Constituent::Word(w),
            RawNode::Phrase { label, items } => Constituent::Phrase(build_phrase(label, items, counter)),
        })
        .collect();
    Phrase { label, index, items }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("tag `{0}` has an empty word set")]
    EmptySet(String),
}

/// Allowed surface words per part-of-speech tag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<PosTag, BTreeSet<String>>", into = "BTreeMap<PosTag, BTreeSet<String>>")]
pub struct Lexicon {
    entries: BTreeMap<PosTag, BTreeSet<String>>,
}

impl TryFrom<BTreeMap<PosTag, BTreeSet<String>>> for Lexicon {
    type Error = LexiconError;

    fn try_from(entries: BTreeMap<PosTag, BTreeSet<String>>) -> Result<Self, Self::Error> {
        let mut lex = Lexicon::default();
        for (tag, words) in entries {
            lex.insert(tag, words)?;
        }
        Ok(lex)
    }
}

impl From<Lexicon> for BTreeMap<PosTag, BTreeSet<String>> {
    fn from(lex: Lexicon) -> Self {
        lex.entries
    }
}

impl Lexicon {
    pub fn insert<I, S>(&mut self, tag: PosTag, words: I) -> Result<(), LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: BTreeSet<String> = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        if words.is_empty() {
            return Err(LexiconError::EmptySet(tag.0));
        }
        self.entries.entry(tag).or_default().extend(words);
        Ok(())
    }

    /// Parses rules of the form `VB -> {drive|open|turn|look}`, one per line.
    /// Blank lines and `#` comments are skipped.
    pub fn from_rules(text: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| LexiconError::Rule { line: n + 1, message: message.into() };
            let (lhs, rhs) = line.split_once("->").or_else(|| line.split_once('→')).ok_or_else(|| err("expected `TAG -> {words}`"))?;
            let tag = PosTag::new(lhs.trim()).map_err(|_| err("invalid tag"))?;
            let body =
                rhs.trim().strip_prefix('{').and_then(|r| r.strip_suffix('}')).ok_or_else(|| err("word set must be wrapped in braces"))?;
            let words: Vec<&str> = body.split('|').map(str::trim).filter(|w| !w.is_empty()).collect();
            lex.insert(tag, words)?;
        }
        Ok(lex)
    }

    pub fn words(&self, tag: &PosTag) -> Option<&BTreeSet<String>> {
        self.entries.get(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &PosTag> + '_ {
        self.entries.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconViolation {
    /// Position of the offending leaf in left-to-right order.
    pub position: usize,
    pub tag: PosTag,
    pub word: String,
    pub unknown_tag: bool,
}

impl fmt::Display for LexiconViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.unknown_tag {
            write!(f, "word {} `{}`: tag {} not in lexicon", self.position, self.word, self.tag)
        } else {
            write!(f, "word {} `{}`: not listed under {}", self.position, self.word, self.tag)
        }
    }
}

pub fn validate_against_lexicon(tree: &ParseTree, lex: &Lexicon) -> Vec<LexiconViolation> {
    tree.leaves()
        .into_iter()
        .enumerate()
        .filter_map(|(position, w)| {
            let allowed = lex.words(&w.tag);
            if allowed.is_some_and(|set| set.contains(&w.text)) {
                return None;
            }
            Some(LexiconViolation { position, tag: w.tag.clone(), word: w.text.clone(), unknown_tag: allowed.is_none() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRIVE: &str = "(VP (VB drive) (PP (TO to) (NP (DT the) (NN door))))";
    const OPEN: &str = "(VP (VB open) (NP (DT the) (NN door)))";
    const TURN: &str = "(VP (VB turn) (NP (NP (DT the) (NN handle)) (PP (IN of) (NP (DT the) (NN door)))))";

    fn labels(ps: &[&Phrase]) -> Vec<(String, usize)> {
        ps.iter().map(|p| (p.label().to_string(), p.index())).collect()
    }

    #[test]
    fn loads_drive_tree() {
        let t = load_parse_tree(DRIVE).unwrap();
        assert_eq!(t.phrase_count(), 3);
        assert_eq!(labels(&t.phrases()), vec![("VP".into(), 0), ("PP".into(), 1), ("NP".into(), 2)]);
        assert_eq!(t.instruction(), "drive to the door");
    }

    #[test]
    fn loads_open_tree() {
        let t = load_parse_tree(OPEN).unwrap();
        assert_eq!(labels(&t.phrases()), vec![("VP".into(), 0), ("NP".into(), 1)]);
    }

    #[test]
    fn missing_bracket_reports_end_offset() {
        let src = "(NP (DT the) (NN door)";
        let err = load_parse_tree(src).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
        assert_eq!(err.offset(), src.len());
    }

    #[test]
    fn empty_phrase_is_structural_error() {
        let err = load_parse_tree("(VP (VB go) (NP))").unwrap_err();
        assert_eq!(err, ParseError::EmptyPhrase { offset: 12, label: "NP".into() });
    }

    #[test]
    fn stray_close_and_trailing_input() {
        assert!(matches!(load_parse_tree(")"), Err(ParseError::Syntax { offset: 0, .. })));
        let err = load_parse_tree("(NP (NN door)) (NP (NN box))").unwrap_err();
        assert_eq!(err.offset(), 15);
    }

    #[test]
    fn root_must_be_phrase() {
        assert!(matches!(load_parse_tree("(NN door)"), Err(ParseError::Structure { .. })));
    }

    #[test]
    fn lowercase_tags_rejected() {
        let err = load_parse_tree("(NP (nn door))").unwrap_err();
        assert_eq!(err, ParseError::InvalidTag { offset: 5, tag: "nn".into() });
    }

    #[test]
    fn words_are_lowercased_and_rendered_normalized() {
        let t = load_parse_tree("(VP\n  (VB Open)\n  (NP (DT The)   (NN DOOR)))").unwrap();
        assert_eq!(t.to_string(), OPEN);
    }

    #[test]
    fn bottom_up_order() {
        let t = load_parse_tree(DRIVE).unwrap();
        let idx: Vec<_> = phrases_bottom_up(&t).iter().map(|p| p.index()).collect();
        assert_eq!(idx, vec![2, 1, 0]);

        let single = load_parse_tree("(NP (DT the) (NN door))").unwrap();
        assert_eq!(phrases_bottom_up(&single).len(), 1);

        let t = load_parse_tree(TURN).unwrap();
        assert_eq!(t.phrase_count(), 5);
        let order: Vec<_> = phrases_bottom_up(&t).iter().map(|p| p.index()).collect();
        let pos = |i: usize| order.iter().position(|&x| x == i).unwrap();
        assert!(pos(4) < pos(3) && pos(3) < pos(1) && pos(1) < pos(0));
        assert!(pos(2) < pos(1));
    }

    #[test]
    fn many_trees_per_file() {
        let text = format!("{DRIVE}\n{OPEN}\n\n");
        let trees = load_parse_trees(&text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[1].instruction(), "open the door");
    }

    fn paper_lexicon() -> Lexicon {
        Lexicon::from_rules("VB -> {drive|open|turn|look}\nDT -> {the}\nNN -> {door|handle|drawer|box|top}\nIN -> {through|of}\nTO -> {to}")
            .unwrap()
    }

    #[test]
    fn lexicon_validation() {
        let lex = paper_lexicon();
        assert!(validate_against_lexicon(&load_parse_tree(OPEN).unwrap(), &lex).is_empty());

        let t = load_parse_tree("(VP (VB open) (NP (DT the) (NN window)))").unwrap();
        let v = validate_against_lexicon(&t, &lex);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].tag.as_str(), v[0].word.as_str(), v[0].unknown_tag), ("NN", "window", false));

        let v = validate_against_lexicon(&load_parse_tree(DRIVE).unwrap(), &Lexicon::default());
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| x.unknown_tag));
    }

    #[test]
    fn lexicon_rule_errors() {
        assert!(matches!(Lexicon::from_rules("VB {go}"), Err(LexiconError::Rule { line: 1, .. })));
        assert!(matches!(Lexicon::from_rules("VB -> {}"), Err(LexiconError::EmptySet(_))));
        assert!(Lexicon::from_rules("NN → {door}").is_ok());
    }

    #[test]
    fn lexicon_json_roundtrip() {
        let lex = paper_lexicon();
        let json = serde_json::to_string(&lex).unwrap();
        let back: Lexicon = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lex);
        assert!(serde_json::from_str::<Lexicon>(r#"{"NN": []}"#).is_err());
    }
}
