use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stancemap::pipeline::{self, AggregateStage, PipelineConfig, RunOptions, RunReport, Stage};
use stancemap::synthetic::SynthParams;
use stancemap::Error;

#[derive(Parser)]
#[command(name = "stancemap", version, about = "Stance clusters, influencer valence and media bias from retweet data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (TOML). For `synth`, optional generator parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Only run this topic.
    #[arg(long, global = true)]
    topic: Option<String>,

    /// Skip stages whose outputs already match the current config.
    #[arg(long, global = true)]
    resume: bool,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Filter posts per topic.
    Ingest,
    /// Build user vectors, project and cluster.
    Cluster,
    /// Train the stance classifier and expand the clusters.
    Expand,
    /// Score influencer valence per topic.
    Valence,
    /// Align topics and train graph embeddings from existing topic outputs.
    Embed,
    /// Align topics, embed and evaluate the bias classifier.
    Bias,
    /// Every stage for every topic, then the aggregate.
    All,
    /// Write a synthetic corpus with ground truth and a config.
    Synth,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_STAGE),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn print_report(report: &RunReport) {
    for (name, r) in &report.topics {
        match r {
            Ok(s) => {
                let holdout = s.holdout_accuracy.map_or("NA".to_string(), |a| format!("{a:.3}"));
                println!(
                    "topic {name}: ok posts={} active={} clusters={} clustered={}/{} expanded={}/{} holdout={holdout} media={} accounts={}",
                    s.n_posts,
                    s.n_active,
                    s.n_clusters,
                    s.clustered[0],
                    s.clustered[1],
                    s.expanded[0],
                    s.expanded[1],
                    s.media_records,
                    s.account_records,
                );
            }
            Err(e) => println!("topic {name}: FAILED {e}"),
        }
    }
    if let Some(agg) = &report.aggregate {
        print_aggregate(agg);
    }
}

fn print_aggregate(agg: &Result<pipeline::AggregateSummary, Error>) {
    match agg {
        Ok(a) => {
            println!(
                "aggregate: ok aligned={} unaligned={} media={}",
                a.aligned_topics.join(","),
                a.unaligned_topics.join(","),
                a.media_averages
            );
            for r in &a.report {
                println!("  {:<40} n={:<4} acc={:.3} mae={:.3}", r.config, r.n_media, r.accuracy, r.mae);
            }
        }
        Err(e) => println!("aggregate: FAILED {e}"),
    }
}

fn synth(cli: &Cli) -> Result<(), Error> {
    let out = cli.out.as_ref().ok_or_else(|| Error::Config("synth needs --out".into()))?;
    let mut params = match &cli.config {
        Some(p) => SynthParams::from_toml_file(p)?,
        None => SynthParams::default(),
    };
    if let Some(s) = cli.seed {
        params.seed = s;
    }
    let corpus = pipeline::write_synth_bundle(out, &params)?;
    println!(
        "wrote {} posts, {} users, {} media to {}",
        corpus.posts.len(),
        corpus.communities.len(),
        corpus.media.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Command::Synth = cli.command {
        return match synth(&cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                exit_for(&e)
            }
        };
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };

    if let Command::Embed | Command::Bias = cli.command {
        let until = if let Command::Embed = cli.command { AggregateStage::Embed } else { AggregateStage::Bias };
        let r = pipeline::run_aggregate(&cfg, until, cli.resume);
        print_aggregate(&r);
        return match r {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        };
    }

    let (until, aggregate) = match cli.command {
        Command::Ingest => (Stage::Ingest, None),
        Command::Cluster => (Stage::Clustering, None),
        Command::Expand => (Stage::Stance, None),
        Command::Valence => (Stage::Valence, None),
        _ => (Stage::Valence, if cli.topic.is_some() { None } else { Some(AggregateStage::Bias) }),
    };
    let opts = RunOptions {
        until,
        aggregate,
        topic: cli.topic.clone(),
        resume: cli.resume,
    };
    match pipeline::run(&cfg, &opts) {
        Ok(report) => {
            print_report(&report);
            if report.failed() {
                ExitCode::from(EXIT_STAGE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
