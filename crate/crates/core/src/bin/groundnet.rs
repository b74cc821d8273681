use std::error::Error;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use groundnet::compiler::{export_graph, generate_computation_graph, GraphFormat, Lexicon};
use groundnet::grounding;
use groundnet::scene::{load_dataset, save_dataset, Split};
use groundnet::selfcheck::{gradient_self_check, TOLERANCE};
use groundnet::synth::{generate_dataset, WorldSpec};
use groundnet::training::{compile_scene, evaluate, train, Checkpoint, SupportingFrom, TrainConfig};
use groundnet::treebank::read_ptb;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "groundnet", version, about = "Compile parses into module graphs and ground them in scenes")]
struct Cli {
    /// Overrides the seed of the world spec or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a bracketed parse into a computation graph.
    Compile {
        /// File holding one bracketed tree; `-` reads stdin.
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Gen {
        /// World spec (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Training config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground one scene and report every node's distribution.
    Ground {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Scene id; the first scene when omitted.
        #[arg(long)]
        scene: Option<u64>,
        /// Parse to ground instead of the scene's own expression.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Target and supporting-object accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Count only `Locate` nodes as supporting predictions.
        #[arg(long)]
        locate_only: bool,
        /// Structured report destination; the table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every operation and module loss.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile { tree, format, out } => {
            let tree = read_ptb(&read_text(&tree)?)?;
            let graph = generate_computation_graph(&tree, &Lexicon::default())?;
            let format = match format {
                Format::Dot => GraphFormat::Dot,
                Format::Json => GraphFormat::Json,
            };
            eprintln!("compiled {} nodes", graph.len());
            emit(out.as_deref(), &export_graph(&graph, format))
        }
        Command::Gen { config, out } => {
            let mut spec = match config {
                Some(path) => WorldSpec::from_toml(&read_text(&path)?)?,
                None => WorldSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let start = Instant::now();
            let scenes = generate_dataset(&spec)?;
            save_dataset(&scenes, &out)?;
            eprintln!("wrote {} scenes to {} in {:.1?}", scenes.len(), out.display(), start.elapsed());
            Ok(())
        }
        Command::Train { dataset, config, epochs, out } => {
            let mut config = match config {
                Some(path) => TrainConfig::from_toml(&read_text(&path)?)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(epochs) = epochs {
                config.epochs = epochs;
            }
            let scenes = load_dataset(&dataset)?;
            let start = Instant::now();
            let checkpoint = train(&scenes, &config, |e| {
                let val = e.val_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
                eprintln!(
                    "epoch {} lr {:.7} loss {:.4} clipped {} val_acc {} ({:.1?})",
                    e.epoch,
                    e.lr,
                    e.mean_loss,
                    e.clipped_steps,
                    val,
                    start.elapsed()
                );
            })?;
            checkpoint.save(&out)?;
            eprintln!("saved {}", out.display());
            Ok(())
        }
        Command::Ground { checkpoint, dataset, scene, tree, format, out } => {
            let model = Checkpoint::load(&checkpoint)?.to_model()?;
            let scenes = load_dataset(&dataset)?;
            let scene = match scene {
                Some(id) => scenes.iter().find(|s| s.id == id).ok_or(format!("no scene with id {id}"))?,
                None => scenes.first().ok_or("dataset is empty")?,
            };
            let graph = match tree {
                Some(path) => generate_computation_graph(&read_ptb(&read_text(&path)?)?, &Lexicon::default())?,
                None => compile_scene(scene, &Lexicon::default())?,
            };
            let result = grounding::execute(&model, &graph, scene)?;
            eprintln!("scene {}: predicted box {}", scene.id, scene.boxes[result.prediction()].id);
            let text = match format {
                Format::Dot => result.annotated_dot(&graph, scene),
                Format::Json => serde_json::to_string_pretty(&result.to_report(&graph, scene))? + "\n",
            };
            emit(out.as_deref(), &text)
        }
        Command::Eval { checkpoint, dataset, split, locate_only, out } => {
            let model = Checkpoint::load(&checkpoint)?.to_model()?;
            let mut scenes = load_dataset(&dataset)?;
            let keep = match split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Val => Some(Split::Val),
                SplitArg::Test => Some(Split::Test),
                SplitArg::All => None,
            };
            scenes.retain(|s| keep.is_none_or(|k| s.split == k));
            let from = if locate_only { SupportingFrom::LocateOnly } else { SupportingFrom::AllIntermediate };
            let report = evaluate(&model, &scenes, from)?;
            print!("{}", report.table());
            if let Some(path) = out {
                emit(Some(&path), &report.to_json())?;
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Gradcheck { points, out } => {
            let results = gradient_self_check(cli.seed.unwrap_or(0), points)?;
            let mut worst: f64 = 0.0;
            for r in &results {
                println!("{:<18} points {:>3} max_rel_err {:.3e}", r.name, r.points, r.max_error);
                worst = worst.max(r.max_error);
            }
            println!("max rel err {worst:.3e} (tolerance {TOLERANCE:e})");
            if let Some(path) = out {
                emit(Some(&path), &serde_json::to_string_pretty(&results)?)?;
            }
            if worst >= TOLERANCE {
                return Err(format!("gradient check failed: {worst:e} >= {TOLERANCE:e}").into());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
