mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "scimgan", version, about = "Multi-domain translation and quartet-loss re-identification on synthetic people")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalProtocol {
    /// One gallery image per identity, all probe-camera images as probes.
    SingleShot,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rows {
    /// Three losses without translation, then each translator with the improved quartet loss.
    Standard,
    /// Every loss with every translator.
    Lattice,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus described by a config into a dataset file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-domain translator; checkpoints after every epoch.
    TrainGan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset file to train on instead of generating the corpus.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from this translator checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the re-identification network, optionally with translated positives.
    TrainReid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gan_ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Translate every image of a dataset file from one domain to another or to all others.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        src: u16,
        /// Target domain id, or `all`.
        #[arg(long)]
        dst: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank a dataset's probe camera against its gallery camera; JSON, or CSV for a `.csv` output.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "single-shot")]
        protocol: EvalProtocol,
        #[arg(long)]
        out: PathBuf,
        /// Domain to evaluate; defaults to the lowest domain id in the data.
        #[arg(long)]
        domain: Option<u16>,
        #[arg(long, default_value_t = 0)]
        probe_camera: u16,
        #[arg(long, default_value_t = 1)]
        gallery_camera: u16,
        /// Seed of the gallery draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        max_rank: usize,
        /// Also write gallery and probe embeddings as a dataset file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run the ablation rows over `seeds` consecutive seeds starting at the config seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        rows: Rows,
    },
    /// Finite-difference check of every layer and loss.
    CheckGrads {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config, &out),
        Command::TrainGan { config, out, data, resume } => commands::train_gan(&config, &out, data.as_deref(), resume.as_deref()),
        Command::TrainReid { config, out, gan_ckpt, data } => {
            commands::train_reid(&config, &out, gan_ckpt.as_deref(), data.as_deref())
        }
        Command::Translate { ckpt, input, src, dst, out } => commands::translate(&ckpt, &input, src, &dst, &out),
        Command::Evaluate { ckpt, data, protocol, out, domain, probe_camera, gallery_camera, seed, max_rank, embeddings } => {
            commands::evaluate(&commands::EvaluateArgs {
                ckpt,
                data,
                protocol,
                out,
                domain,
                probe_camera,
                gallery_camera,
                seed,
                max_rank,
                embeddings,
            })
        }
        Command::Ablate { config, seeds, out, rows } => commands::ablate(&config, seeds, &out, rows),
        Command::CheckGrads { seeds, out } => commands::check_grads(seeds, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
