//! The `dsgrl` command line: `train`, `embed`, `eval`, `gen-sbm`, `inspect`.
//!
//! Every command reads an optional JSON [`JobConfig`] (`--config`); flags
//! override the corresponding keys. Relative paths inside the config file
//! resolve against the config file's directory, relative paths on the
//! command line against the working directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentMode;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{run_protocol, ProbeConfig};
use crate::graph::io::{
    load_graph, load_manifest, read_features, read_labels, read_splits, write_edges, write_features_binary,
    write_features_csv, write_labels, LoadOptions,
};
use crate::graph::{batch_graphs, generate_sbm, make_splits, make_stratified_splits, SbmConfig, Split};
use crate::trainer::{
    embed, embed_graphs, load_checkpoint, save_checkpoint, train, train_graphs, Checkpoint, TrainConfig,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.dsgc";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Declarative job description shared by all commands. Unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobConfig {
    /// Overrides `train.seed`, `sbm.seed` and `split_seed` when set.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Write embeddings (and generated features) as CSV instead of `DSGF`.
    pub csv: bool,
    pub directed: bool,
    pub header: bool,
    pub row_normalize: bool,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Graph-collection manifest; switches train/embed to graph level.
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Split file; when absent, `split_count` splits are generated.
    pub splits: Option<PathBuf>,
    pub split_count: usize,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    /// Draw generated splits per class.
    pub stratified: bool,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub sbm: SbmConfig,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("."),
            csv: false,
            directed: false,
            header: false,
            row_normalize: false,
            edges: None,
            features: None,
            labels: None,
            manifest: None,
            checkpoint: None,
            embeddings: None,
            splits: None,
            split_count: 10,
            split_ratios: crate::graph::DEFAULT_SPLIT_RATIOS,
            split_seed: 0,
            stratified: true,
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            sbm: SbmConfig::default(),
        }
    }
}

impl JobConfig {
    /// Parses and validates a config file; paths are made relative to its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: JobConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.out);
        for p in [
            &mut self.edges,
            &mut self.features,
            &mut self.labels,
            &mut self.manifest,
            &mut self.checkpoint,
            &mut self.embeddings,
            &mut self.splits,
            &mut self.train.log,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.sbm.seed = s;
            self.split_seed = s;
        }
    }

    fn load_options(&self) -> LoadOptions {
        LoadOptions {
            directed: self.directed,
            header: self.header,
            row_normalize: self.row_normalize,
        }
    }

    fn embeddings_path(&self) -> PathBuf {
        self.out.join(if self.csv { "embeddings.csv" } else { "embeddings.dsgf" })
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsgrl", version, about = "Self-supervised graph representation learning")]
pub struct Cli {
    /// JSON job config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Treat edge files as directed.
    #[arg(long, global = true)]
    pub directed: bool,
    /// Skip the first line of CSV feature files.
    #[arg(long, global = true)]
    pub header: bool,
    /// Write CSV instead of DSGF.
    #[arg(long, global = true)]
    pub csv: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Graph-collection manifest (graph-level embeddings).
    #[arg(long, conflicts_with_all = ["edges", "features"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint, embeddings and a loss log.
    Train {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Keep the initial parameters (no optimization).
        #[arg(long)]
        untrained: bool,
    },
    /// Embed a graph with a trained checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// Linear-probe evaluation of embeddings; writes metrics.json.
    Eval {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Number of generated splits.
        #[arg(long)]
        split_count: Option<usize>,
        /// Generate splits uniformly instead of per class.
        #[arg(long)]
        uniform: bool,
    },
    /// Generate a stochastic block model graph.
    GenSbm {
        /// Comma-separated block sizes.
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<usize>>,
        #[arg(long)]
        p_in: Option<f64>,
        #[arg(long)]
        p_out: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Print a checkpoint's config and tensor shapes.
    Inspect { checkpoint: Option<PathBuf> },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ModeArg {
    Feature,
    Topology,
    Combined,
}

impl From<ModeArg> for AugmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Feature => AugmentMode::Feature,
            ModeArg::Topology => AugmentMode::Topology,
            ModeArg::Combined => AugmentMode::Combined,
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors go to stderr as
/// `ERROR <category>: <detail>`.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR usage: {first}");
            return 1;
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("ERROR {}: {detail}", e.category());
            1
        }
    }
}

/// Runs a parsed command and returns what it prints on success.
pub fn run(cli: Cli) -> Result<String> {
    let mut job = match &cli.config {
        Some(p) => JobConfig::from_file(p)?,
        None => JobConfig::default(),
    };
    if cli.seed.is_some() {
        job.seed = cli.seed;
    }
    job.apply_seed();
    if let Some(out) = cli.out {
        job.out = out;
    }
    job.directed |= cli.directed;
    job.header |= cli.header;
    job.csv |= cli.csv;

    match cli.command {
        Command::Train {
            graph,
            mode,
            epochs,
            untrained,
        } => {
            apply_graph_args(&mut job, graph);
            if let Some(m) = mode {
                job.train.mode = m.into();
            }
            if let Some(e) = epochs {
                job.train.epochs = e;
            }
            job.train.untrained |= untrained;
            cmd_train(&job)
        }
        Command::Embed { checkpoint, graph } => {
            apply_graph_args(&mut job, graph);
            if checkpoint.is_some() {
                job.checkpoint = checkpoint;
            }
            cmd_embed(&job)
        }
        Command::Eval {
            embeddings,
            labels,
            splits,
            split_count,
            uniform,
        } => {
            if embeddings.is_some() {
                job.embeddings = embeddings;
            }
            if labels.is_some() {
                job.labels = labels;
            }
            if splits.is_some() {
                job.splits = splits;
            }
            if let Some(k) = split_count {
                job.split_count = k;
            }
            if uniform {
                job.stratified = false;
            }
            cmd_eval(&job)
        }
        Command::GenSbm {
            blocks,
            p_in,
            p_out,
            noise,
        } => {
            if let Some(b) = blocks {
                job.sbm.block_sizes = b;
            }
            if let Some(p) = p_in {
                job.sbm.p_in = p;
            }
            if let Some(p) = p_out {
                job.sbm.p_out = p;
            }
            if let Some(n) = noise {
                job.sbm.feature_noise = n;
            }
            cmd_gen_sbm(&job)
        }
        Command::Inspect { checkpoint } => {
            if checkpoint.is_some() {
                job.checkpoint = checkpoint;
            }
            cmd_inspect(&job)
        }
    }
}

fn apply_graph_args(job: &mut JobConfig, g: GraphArgs) {
    if g.manifest.is_some() {
        job.manifest = g.manifest;
        job.edges = None;
        job.features = None;
    }
    if g.edges.is_some() {
        job.edges = g.edges;
    }
    if g.features.is_some() {
        job.features = g.features;
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing `{key}` (config key or --{key} flag)")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key} file {} does not exist", p.display())));
    }
    Ok(p)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_embeddings(path: &Path, z: &Tensor, csv: bool) -> Result<()> {
    if csv {
        write_features_csv(path, z)
    } else {
        write_features_binary(path, z)
    }
}

enum Input {
    Nodes(crate::graph::Graph),
    Graphs(crate::graph::GraphBatch),
}

/// Checks every input path before any file is parsed.
fn resolve_input(job: &JobConfig) -> Result<Input> {
    if job.manifest.is_some() {
        let m = require(&job.manifest, "manifest")?;
        let graphs = load_manifest(m, job.load_options())?;
        return Ok(Input::Graphs(batch_graphs(graphs)?));
    }
    let edges = require(&job.edges, "edges")?;
    let features = require(&job.features, "features")?;
    Ok(Input::Nodes(load_graph(edges, features, None, job.load_options())?))
}

pub fn cmd_train(job: &JobConfig) -> Result<String> {
    job.train.validate()?;
    if job.manifest.is_none() {
        require(&job.edges, "edges")?;
        require(&job.features, "features")?;
    }
    let input = resolve_input(job)?;
    create_out(&job.out)?;
    let mut cfg = job.train.clone();
    if cfg.log.is_none() {
        cfg.log = Some(job.out.join(LOG_FILE));
    }
    let mut outcome = match &input {
        Input::Nodes(g) => train(g, &cfg)?,
        Input::Graphs(b) => train_graphs(b, &cfg)?,
    };
    // The default log location depends on --out; keep it out of the snapshot.
    outcome.checkpoint.config.log = job.train.log.clone();
    let ckpt_path = job.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &outcome.checkpoint)?;
    let emb_path = job.embeddings_path();
    write_embeddings(&emb_path, &outcome.embeddings, job.csv)?;

    let mut s = String::new();
    let _ = writeln!(s, "epochs      {}", outcome.checkpoint.epoch);
    if let Some(l) = &outcome.checkpoint.loss {
        let _ = writeln!(s, "final loss  {:.6}", l.total);
    }
    let _ = writeln!(s, "checkpoint  {}", ckpt_path.display());
    let _ = writeln!(s, "embeddings  {}", emb_path.display());
    Ok(s)
}

pub fn cmd_embed(job: &JobConfig) -> Result<String> {
    let ckpt_path = require(&job.checkpoint, "checkpoint")?;
    let ckpt: Checkpoint = load_checkpoint(ckpt_path)?;
    let input = resolve_input(job)?;
    let z = match &input {
        Input::Nodes(g) => embed(g, &ckpt)?,
        Input::Graphs(b) => embed_graphs(b, &ckpt)?,
    };
    create_out(&job.out)?;
    let path = job.embeddings_path();
    write_embeddings(&path, &z, job.csv)?;
    Ok(format!("embeddings  {} ({}x{})\n", path.display(), z.rows(), z.cols()))
}

pub fn cmd_eval(job: &JobConfig) -> Result<String> {
    let emb_path = require(&job.embeddings, "embeddings")?;
    let label_path = require(&job.labels, "labels")?;
    let split_path = match &job.splits {
        Some(_) => Some(require(&job.splits, "splits")?),
        None => None,
    };
    let z = read_features(emb_path, job.header)?;
    let labels = read_labels(label_path, z.rows())?;
    let splits: Vec<Split> = match split_path {
        Some(p) => read_splits(p)?,
        None => {
            if job.split_count == 0 {
                return Err(Error::Config("split_count must be >= 1".into()));
            }
            (0..job.split_count as u64)
                .map(|k| {
                    let seed = job.split_seed.wrapping_add(k);
                    if job.stratified {
                        make_stratified_splits(&labels, job.split_ratios, seed)
                    } else {
                        make_splits(z.rows(), job.split_ratios, seed)
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let report = run_protocol(&z, &labels, &splits, &job.probe)?;
    create_out(&job.out)?;
    let path = job.out.join(METRICS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report.to_table())
}

pub fn cmd_gen_sbm(job: &JobConfig) -> Result<String> {
    let g = generate_sbm(&job.sbm)?;
    create_out(&job.out)?;
    let edges = job.out.join("edges.tsv");
    let features = job.out.join(if job.csv { "features.csv" } else { "features.dsgf" });
    let labels = job.out.join("labels.tsv");
    write_edges(&edges, g.adjacency(), false)?;
    write_embeddings(&features, g.features(), job.csv)?;
    write_labels(&labels, g.labels().unwrap_or(&[]))?;
    Ok(format!(
        "nodes {} arcs {} features {}\n{}\n{}\n{}\n",
        g.n(),
        g.m(),
        g.f(),
        edges.display(),
        features.display(),
        labels.display()
    ))
}

pub fn cmd_inspect(job: &JobConfig) -> Result<String> {
    let ckpt = load_checkpoint(require(&job.checkpoint, "checkpoint")?)?;
    let mut s = String::new();
    let _ = writeln!(s, "{}", serde_json::to_string_pretty(&ckpt.config)?);
    let _ = writeln!(s, "epoch {}", ckpt.epoch);
    if let Some(l) = &ckpt.loss {
        let _ = writeln!(s, "loss {:.6}", l.total);
    }
    for (name, t) in ckpt.model.named_tensors() {
        let _ = writeln!(s, "{name}\t{}x{}", t.rows(), t.cols());
    }
    Ok(s)
}
