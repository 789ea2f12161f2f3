use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundwork_core::dcg::{GraphKind, TrainConfig};
use groundwork_core::parse::{load_parse_tree, ParseTree};
use groundwork_core::percept::{run_perception, PerceptionConfig, PerceptionMode};
use groundwork_core::pipeline::{
    bench, bench_json, bench_table, bundled, infer_behavior, infer_detectors, parse_plan, run, train_corpus, Assets, PipelineError,
    RunConfig, RunOptions, Stage,
};
use groundwork_core::symbols::{DetectorId, DetectorSet};
use groundwork_core::world::WorldModel;

#[derive(Parser)]
#[command(name = "groundwork", version, about = "Ground instructions to detectors and behaviors, then simulate the task")]
struct Cli {
    /// Run configuration (JSON); bundled assets fill in anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Perception,
    Behavior,
}

#[derive(Args)]
struct TreeArg {
    /// Bracketed parse, or a file holding one.
    tree: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grounding model from an annotated corpus.
    Train {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Corpus file; defaults to the bundled corpus of that kind.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the inferred detector set, or the behavior given a world.
    Ground {
        #[command(flatten)]
        tree: TreeArg,
        /// Ground a behavior against this world snapshot instead.
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Simulate perception for a detector set over the configured scene.
    Perceive {
        /// Instruction whose detector set to use.
        tree: Option<String>,
        /// Explicit detector ids instead of an instruction.
        #[arg(long, value_delimiter = ',')]
        detectors: Vec<String>,
        /// Parent:child detector link, e.g. door:door_handle.
        #[arg(long)]
        link: Vec<String>,
        #[arg(long)]
        exhaustive: bool,
        /// Directory for world.json and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline on one instruction.
    Run {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long)]
        exhaustive: bool,
        /// Drop a detector from the inferred set before perception.
        #[arg(long)]
        without: Vec<String>,
        /// Directory for world.json, metrics.json, trace.json and trace.log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perception-period report over a plan of runs.
    Bench {
        /// Plan file (`adaptive|exhaustive <tree>` per line); defaults to the bundled table.
        plan: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("groundwork: {e}");
            ExitCode::from(e.stage.exit_code())
        }
    }
}

fn io_err(what: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Io, format!("{}: {e}", what.display()))
}

fn read_tree(arg: &str) -> Result<ParseTree, PipelineError> {
    let text = if arg.trim_start().starts_with('(') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| io_err(Path::new(arg), e))?
    };
    load_parse_tree(&text).map_err(|e| PipelineError::new(Stage::Io, format!("parse tree: {e}")))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| io_err(&path, e))
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn assets(cli: &Cli) -> Result<Assets, PipelineError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Assets::from_config(&cfg)
}

fn dispatch(cli: &Cli) -> Result<u8, PipelineError> {
    match &cli.command {
        Command::Train { kind, corpus, out } => {
            let assets = assets(cli)?;
            let (kind, fallback) = match kind {
                Kind::Perception => (GraphKind::Perception, bundled::PERCEPTION_CORPUS),
                Kind::Behavior => (GraphKind::Behavior, bundled::BEHAVIOR_CORPUS),
            };
            let text = match corpus {
                Some(p) => std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
                None => fallback.to_string(),
            };
            let report = train_corpus(&text, kind, &assets.space, &TrainConfig::default())?;
            std::fs::write(out, report.model.to_json()).map_err(|e| io_err(out, e))?;
            if cli.json {
                let summary = serde_json::json!({
                    "kind": kind.to_string(),
                    "final_objective": report.final_objective(),
                    "iterations": report.iterations,
                    "converged": report.converged,
                    "features": report.model.index().len(),
                });
                println!("{}", to_json(&summary));
            } else {
                println!(
                    "trained {kind} model: objective {:.6} after {} iterations{} ({} features) -> {}",
                    report.final_objective(),
                    report.iterations,
                    if report.converged { ", converged" } else { "" },
                    report.model.index().len(),
                    out.display()
                );
            }
            Ok(0)
        }
        Command::Ground { tree, world } => {
            let assets = assets(cli)?;
            let tree = read_tree(&tree.tree)?;
            match world {
                None => {
                    let g = infer_detectors(&tree, &assets.space, assets.perception_model()?)?;
                    if cli.json {
                        println!("{}", to_json(&g));
                    } else {
                        println!("symbols:   {}", g.symbols.join(" "));
                        println!("detectors: {}", g.detectors.detectors.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(" "));
                        for (p, c) in &g.detectors.links {
                            println!("link:      {p} -> {c}");
                        }
                    }
                    if g.detectors.is_empty() {
                        return Err(PipelineError::new(Stage::Grounding, "no detectors grounded"));
                    }
                    Ok(0)
                }
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    let w: WorldModel = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
                    let b = infer_behavior(&tree, &assets.space, assets.behavior_model()?, &w)?
                        .ok_or_else(|| PipelineError::new(Stage::Grounding, "no behavior grounded"))?;
                    if cli.json {
                        println!("{}", to_json(&b));
                    } else {
                        println!("{b}");
                    }
                    Ok(0)
                }
            }
        }
        Command::Perceive { tree, detectors, link, exhaustive, out } => {
            let assets = assets(cli)?;
            let active = match tree {
                Some(t) => infer_detectors(&read_tree(t)?, &assets.space, assets.perception_model()?)?.detectors,
                None => explicit_set(detectors, link)?,
            };
            let mode = if *exhaustive { PerceptionMode::Exhaustive } else { PerceptionMode::Adaptive };
            let config =
                PerceptionConfig { active, mode, seed: cli.seed, frame_budget: assets.frame_budget, association: assets.association };
            let poses = vec![assets.scene.robot_start; assets.frame_budget];
            let (world, metrics) =
                run_perception(&assets.scene, &assets.registry, &config, &poses).map_err(|e| PipelineError::new(Stage::Perception, e))?;
            if let Some(dir) = out {
                write(dir, "world.json", &to_json(&world))?;
                write(dir, "metrics.json", &to_json(&metrics))?;
            }
            if cli.json {
                println!("{}", to_json(&serde_json::json!({ "world": world, "metrics": metrics })));
            } else {
                println!("avg period {:.3} s over {} frames", metrics.avg_period, metrics.frames);
                println!("active:    {}", metrics.active_detectors.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(" "));
                for o in world.objects() {
                    let parent = o.parent.map(|p| format!(" (part of {p})")).unwrap_or_default();
                    println!("  {} {}{}", o.id, o.label, parent);
                }
            }
            Ok(0)
        }
        Command::Run { tree, exhaustive, without, out } => {
            let assets = assets(cli)?;
            let tree = read_tree(&tree.tree)?;
            let mode = if *exhaustive { PerceptionMode::Exhaustive } else { PerceptionMode::Adaptive };
            let report = run(&tree, &assets, &RunOptions { seed: cli.seed, mode, without: without.clone() });
            for v in &report.lexicon_violations {
                eprintln!("warning: {v}");
            }
            if let Some(dir) = out {
                if let Some(w) = &report.world {
                    write(dir, "world.json", &to_json(w))?;
                }
                if let Some(m) = &report.metrics {
                    write(dir, "metrics.json", &to_json(m))?;
                }
                if let Some(s) = &report.status {
                    write(dir, "trace.json", &to_json(s))?;
                    write(dir, "trace.log", &report.log())?;
                }
            }
            if cli.json {
                println!("{}", to_json(&report));
            } else {
                if let Some(g) = &report.grounding {
                    println!("detectors: {}", g.detectors.detectors.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(" "));
                }
                if let Some(m) = &report.metrics {
                    println!("avg perception period {:.3} s ({} frames)", m.avg_period, m.frames);
                }
                if let Some(w) = &report.world {
                    println!("world: {}", w.objects().iter().map(|o| format!("{}:{}", o.id, o.label)).collect::<Vec<_>>().join(" "));
                }
                if let Some(b) = &report.behavior {
                    println!("behavior: {b}");
                }
                print!("{}", report.log());
            }
            if let Some(e) = &report.error {
                eprintln!("groundwork: {e}");
            }
            Ok(report.exit_code())
        }
        Command::Bench { plan } => {
            let assets = assets(cli)?;
            let text = match plan {
                Some(p) => std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
                None => bundled::DOOR_PLAN.to_string(),
            };
            let rows = bench(&parse_plan(&text)?, &assets, cli.seed)?;
            if cli.json {
                println!("{}", bench_json(&rows));
            } else {
                print!("{}", bench_table(&rows));
            }
            Ok(0)
        }
    }
}

fn explicit_set(detectors: &[String], links: &[String]) -> Result<DetectorSet, PipelineError> {
    let mut set = DetectorSet::default();
    for d in detectors {
        set.detectors.insert(DetectorId::from(d.as_str()));
    }
    for l in links {
        let (p, c) = l.split_once(':').ok_or_else(|| PipelineError::new(Stage::Io, format!("link `{l}` is not parent:child")))?;
        set.detectors.insert(DetectorId::from(p));
        set.detectors.insert(DetectorId::from(c));
        set.links.insert((DetectorId::from(p), DetectorId::from(c)));
    }
    Ok(set)
}
