use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semfield::harness::{
    collect_demos, evaluate, evaluate_expert, export_heatmap, load_selection, run_gradcheck,
    train_policy, Perception, RunConfig, Trained,
};
use semfield::semantics::ReferenceSelection;
use semfield::sim::Split;
use semfield::{Error, Result};

#[derive(Parser)]
#[command(
    name = "semfield",
    version,
    about = "Semantic-field diffusion policy on a simulated tabletop"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero the semantic channels of every observation.
    #[arg(long)]
    ablate_semantics: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.ablate_semantics |= self.ablate_semantics;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations on train instances.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Read feature images from `ep{e:04}_step{t:04}_view{v}.f32` files
        /// instead of the renderer.
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Train a policy on a collected dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation; writes `report.json`.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long, required_unless_present = "expert")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the scripted expert instead of a checkpoint.
        #[arg(long)]
        expert: bool,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Episode count; defaults to `eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-part semantic-field heatmaps of one scene as PPM files.
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// Reference-selection JSON; defaults to the configured selection.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of the configured networks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Entries probed per tensor.
        #[arg(long, default_value_t = 4)]
        entries: usize,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::Path {
        path: path.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Collect {
            common,
            out,
            features_dir,
        } => {
            let cfg = common.load()?;
            let m = collect_demos(&cfg, &out, features_dir.as_deref())?;
            println!(
                "collected {} episodes ({} expert failures in {} attempts) into {}",
                m.episodes.len(),
                m.failures,
                m.attempts,
                out.display()
            );
        }
        Command::Train {
            common,
            dataset,
            out,
        } => {
            let cfg = common.load()?;
            let every = (cfg.train_steps / 20).max(1);
            let t = train_policy(&cfg, &dataset, &out, |s, l| {
                if s % every == 0 {
                    println!("step {s:>6} loss {l:.5}");
                }
            })?;
            println!(
                "final loss {:.5}; checkpoint in {}",
                t.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            expert,
            split,
            episodes,
            out,
        } => {
            let cfg = common.load()?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let report = if expert {
                evaluate_expert(&cfg, split, n)?
            } else {
                let dir = checkpoint.expect("required unless --expert");
                let trained = Trained::load(&cfg, &dir)?;
                if common.ablate_semantics && !trained.sidecar.ablate_semantics {
                    return Err(Error::Config(
                        "--ablate-semantics given but the checkpoint was trained with semantics"
                            .into(),
                    ));
                }
                let (sel, _) = load_selection(&cfg)?;
                evaluate(&cfg, &trained, &Perception::new(&cfg, &sel)?, split, n)?
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::Path {
                path: out.clone(),
                source: e,
            })?;
            write_json(&out.join("report.json"), &report)?;
            match report.success_rate {
                Some(r) => println!(
                    "{split}: {}/{} succeeded ({:.1}%)",
                    report.successes(),
                    n,
                    100.0 * r
                ),
                None => println!("{split}: no episodes; success rate undefined"),
            }
        }
        Command::Heatmap {
            common,
            refs,
            split,
            out,
        } => {
            let cfg = common.load()?;
            let sel = match refs {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Error::Path { path: p, source: e })?;
                    ReferenceSelection::from_json(&text)?
                }
                None => load_selection(&cfg)?.0,
            };
            for p in export_heatmap(&cfg, split, cfg.seed, &sel, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { common, entries } => {
            let cfg = common.load()?;
            let s = run_gradcheck(&cfg, entries)?;
            let mut ok = true;
            for (name, r, flipped) in [
                ("encoder", &s.encoder, false),
                ("encoder (sign-flip control)", &s.encoder_flipped, true),
                ("denoiser", &s.denoiser, false),
                ("denoiser (sign-flip control)", &s.denoiser_flipped, true),
            ] {
                let pass = if flipped {
                    r.max_rel_error > 1e-1
                } else {
                    r.max_rel_error < 1e-3
                };
                ok &= pass;
                println!(
                    "{} {name}: max relative error {:.3e} over {} entries",
                    if pass { "PASS" } else { "FAIL" },
                    r.max_rel_error,
                    r.entries_checked
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
