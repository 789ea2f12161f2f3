//! Corpus files: a JSON list of annotated parses.
//!
//! ```json
//! [{"parse": "(VP (VB open) (NP (DT the) (NN door)))",
//!   "gold": [[1, "label:door"], [0, "label:door"], [0, "hier:door/handle"]]}]
//! ```
//!
//! Entries with a `"world"` snapshot train behavior inference; their gold
//! symbols refer to world objects (`object:@1`, `open:@1`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{load_parse_tree, ParseError};
use crate::symbols::{SymbolError, SymbolSpace};
use crate::world::WorldModel;

use super::{GroundingSymbol, TrainError, TrainingExample};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed corpus file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("example {example}: {source}")]
    Parse { example: usize, source: ParseError },
    #[error("example {example}: {source}")]
    Symbol { example: usize, source: SymbolError },
    #[error("example {example}: symbol `{symbol}` is not in this example's graph")]
    UnknownSymbol { example: usize, symbol: String },
    #[error("example {example}: phrase {phrase} does not exist")]
    UnknownPhrase { example: usize, phrase: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub parse: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldModel>,
    /// `[phrase index, symbol key]` pairs whose correspondence is true.
    pub gold: Vec<(usize, String)>,
}

pub fn load_corpus(json: &str, space: &SymbolSpace) -> Result<Vec<TrainingExample>, CorpusError> {
    let entries: Vec<CorpusEntry> = serde_json::from_str(json)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(example, e)| {
            let tree = load_parse_tree(&e.parse).map_err(|source| CorpusError::Parse { example, source })?;
            let proto = TrainingExample { tree, world: e.world, gold: BTreeSet::new() };
            let graph = proto.graph(space);
            let mut gold = BTreeSet::new();
            for (phrase, key) in &e.gold {
                if *phrase >= graph.phrase_count() {
                    return Err(CorpusError::UnknownPhrase { example, phrase: *phrase });
                }
                let sym: GroundingSymbol = key.parse().map_err(|source| CorpusError::Symbol { example, source })?;
                let id = graph.symbol_id(&sym).ok_or_else(|| CorpusError::UnknownSymbol { example, symbol: key.clone() })?;
                gold.insert((*phrase, id));
            }
            Ok(TrainingExample { gold, ..proto })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{build_symbol_space, SemanticLabel};

    fn space() -> SymbolSpace {
        let l = |s: &str| SemanticLabel::new(s).unwrap();
        build_symbol_space([l("door"), l("handle")], [(l("door"), l("handle"))], []).unwrap()
    }

    #[test]
    fn loads_and_resolves_keys() {
        let json = r#"[{"parse":"(VP (VB open) (NP (DT the) (NN door)))",
                        "gold":[[1,"label:door"],[0,"label:door"],[0,"hier:door/handle"]]}]"#;
        let c = load_corpus(json, &space()).unwrap();
        assert_eq!(c.len(), 1);
        // ids: label:door 0, label:handle 1, hier 2
        assert_eq!(c[0].gold, BTreeSet::from([(0, 0), (0, 2), (1, 0)]));
    }

    #[test]
    fn rejects_bad_entries() {
        let unknown = r#"[{"parse":"(NP (NN door))","gold":[[0,"label:box"]]}]"#;
        assert!(matches!(load_corpus(unknown, &space()), Err(CorpusError::UnknownSymbol { .. })));
        let phrase = r#"[{"parse":"(NP (NN door))","gold":[[3,"label:door"]]}]"#;
        assert!(matches!(load_corpus(phrase, &space()), Err(CorpusError::UnknownPhrase { phrase: 3, .. })));
        let parse = r#"[{"parse":"(NP (NN door)","gold":[]}]"#;
        assert!(matches!(load_corpus(parse, &space()), Err(CorpusError::Parse { .. })));
    }
}
