//! Grounding natural-language instructions to perception and behavior.
//!
//! Instructions are parsed into constituency trees, grounded into a detector
//! set that drives a simulated perception loop, then grounded again against
//! the resulting world model to produce a behavior request for the executive.

pub mod dcg;
pub mod exec;
pub mod parse;
pub mod percept;
pub mod pipeline;
pub mod symbols;
pub mod world;

pub use dcg::{infer, Assignment, FactorGraph, GraphKind, GroundingSymbol, Model};
pub use parse::{load_parse_tree, Lexicon, ParseTree};
pub use percept::{run_perception, DetectorRegistry, PerceptionConfig, PerceptionMetrics, PerceptionMode, Scene};
pub use symbols::{BehaviorSymbol, DetectorId, DetectorSet, PerceptionSymbol, SymbolSpace};
pub use world::{ObjectId, Pose, SharedWorld, WorldModel, WorldProvider};
