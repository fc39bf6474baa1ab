//! The `embedplan` command line: one subcommand per pipeline stage, each
//! reading the previous stage's artifacts under the output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DomainSummary, GenOptions};
use crate::embed::{check_coverage, embed_corpus, encode_all, goal_items, BuiltinEncoder, BuiltinEncoderSpec, EmbedError, EmbeddingTable};
use crate::eval::probe::pca_csv;
use crate::eval::{
    aggregate_seeds, lda_probe, lda_samples, mean, pca_2d, stats_compare, stderr, Comparison, CrossDomainMatrix,
    Evaluator, MetricReport, PcaRow,
};
use crate::io::{file_digest, read_json, sha256_hex, write_json, write_jsonl, IoError};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::model::TransitionModel;
use crate::pipeline::{evaluate_split, train_split, PipelineError};
use crate::protocols::{
    check_split, make_cross_domain, make_loo, make_multi_domain, split_extrapolation, split_interpolation,
    split_plan_variant, Protocol, ProtocolError, SplitResult,
};
use crate::train::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ARTIFACT: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("stale artifact: {0}")]
    StaleArtifact(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::MissingArtifact(_) | CliError::StaleArtifact(_) => EXIT_ARTIFACT,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

/// Reading an artifact: a missing file is a missing artifact, anything
/// else is bad input.
fn artifact_err(e: IoError) -> CliError {
    if e.is_not_found() {
        CliError::MissingArtifact(e.to_string())
    } else {
        CliError::Input(e.to_string())
    }
}

fn write_err(e: IoError) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "embedplan", version, about = "Latent transition learning over STRIPS planning domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate state spaces and optimal plans; write the transition corpus.
    Gen(CommonArgs),
    /// Embed every state, action and goal text.
    Embed(CommonArgs),
    /// Train one model per protocol, scope and seed.
    Train(CommonArgs),
    /// Evaluate trained and untrained models on each split's test set.
    Eval(CommonArgs),
    /// Build the cross-domain transfer matrix.
    Matrix(CommonArgs),
    /// Aggregate seeds and write the summary tables.
    Report(CommonArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Runs a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    Builtin(BuiltinEncoderSpec),
    /// Precomputed tables, e.g. from the external encoder bridge.
    Table { path: PathBuf, goals: Option<PathBuf> },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Builtin(BuiltinEncoderSpec::default())
    }
}

fn default_protocols() -> Vec<Protocol> {
    Protocol::ALL.to_vec()
}

fn default_ratio() -> f64 {
    0.8
}

fn default_seeds() -> Vec<u64> {
    vec![42, 123, 456]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Domain directories, each with `domain.pddl`, problem files and
    /// `templates.json`.
    pub domains: Vec<PathBuf>,
    #[serde(default)]
    pub gen: GenOptions,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<Protocol>,
    /// Train fraction for interpolation and extrapolation splits.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a config file; relative paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.domains.iter_mut().for_each(resolve);
        resolve(&mut cfg.out_dir);
        if let EncoderConfig::Table { path, goals } = &mut cfg.encoder {
            resolve(path);
            if let Some(g) = goals {
                resolve(g);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.domains.is_empty() {
            return Err(CliError::Input("config lists no domains".into()));
        }
        for d in &self.domains {
            if !d.is_dir() {
                return Err(CliError::Input(format!("domain directory {} does not exist", d.display())));
            }
        }
        if let EncoderConfig::Table { path, goals } = &self.encoder {
            for p in std::iter::once(path).chain(goals) {
                if !p.is_file() {
                    return Err(CliError::Input(format!("embedding table {} does not exist", p.display())));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::Input("seeds must be non-empty".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(CliError::Input(format!("ratio {} outside (0, 1)", self.ratio)));
        }
        if self.protocols.is_empty() {
            return Err(CliError::Input("protocols must be non-empty".into()));
        }
        self.train.validate().map_err(|e| CliError::Input(e.to_string()))
    }
}

/// Per-stage config hashes. Each covers its stage's settings and the hash
/// of the stage before, so editing a late stage does not invalidate early
/// artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub gen: String,
    pub embed: String,
    pub train: String,
}

fn json_hash(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

fn dir_digests(dir: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::Input(e.to_string()))?.path();
        if path.is_file() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.push((name, file_digest(&path).map_err(|e| CliError::Input(e.to_string()))?));
        }
    }
    out.sort();
    Ok(out)
}

impl StageHashes {
    pub fn compute(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let domains = cfg
            .domains
            .iter()
            .map(|d| dir_digests(d))
            .collect::<Result<Vec<_>, _>>()?;
        let gen = json_hash(&serde_json::json!({ "domains": domains, "gen": cfg.gen }));
        let table_digest = match &cfg.encoder {
            EncoderConfig::Builtin(_) => None,
            EncoderConfig::Table { path, goals } => Some((
                file_digest(path).map_err(|e| CliError::Input(e.to_string()))?,
                goals
                    .as_ref()
                    .map(|g| file_digest(g))
                    .transpose()
                    .map_err(|e| CliError::Input(e.to_string()))?,
            )),
        };
        let encoder = match &cfg.encoder {
            EncoderConfig::Builtin(spec) => serde_json::to_value(spec).expect("spec serializes"),
            EncoderConfig::Table { .. } => serde_json::Value::Null,
        };
        let embed = json_hash(&serde_json::json!({ "gen": gen, "encoder": encoder, "tables": table_digest }));
        let train = json_hash(&serde_json::json!({
            "embed": embed,
            "train": cfg.train,
            "protocols": cfg.protocols,
            "ratio": cfg.ratio,
        }));
        Ok(StageHashes { gen, embed, train })
    }
}

/// Written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// File name → SHA-256 of the stage's outputs in the same directory.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    fn write(dir: &Path, stage: &str, hash: &str, files: &[&str]) -> Result<(), CliError> {
        let mut outputs = BTreeMap::new();
        for f in files {
            outputs.insert(f.to_string(), file_digest(&dir.join(f)).map_err(write_err)?);
        }
        let m = Manifest {
            stage: stage.into(),
            config_hash: hash.into(),
            outputs,
        };
        write_json(&dir.join(format!("{stage}.{MANIFEST}")), &m).map_err(write_err)
    }

    /// Loads and validates a stage manifest: the hash must match the current
    /// config and every listed output must be unchanged on disk.
    fn verify(dir: &Path, stage: &str, hash: &str) -> Result<Manifest, CliError> {
        let path = dir.join(format!("{stage}.{MANIFEST}"));
        let m: Manifest = read_json(&path).map_err(|e| {
            if e.is_not_found() {
                CliError::MissingArtifact(format!("{} (run `embedplan {stage}` first)", path.display()))
            } else {
                CliError::Input(e.to_string())
            }
        })?;
        if m.config_hash != hash {
            return Err(CliError::StaleArtifact(format!(
                "{} was produced by a different config",
                path.display()
            )));
        }
        for (file, digest) in &m.outputs {
            let p = dir.join(file);
            let now = file_digest(&p).map_err(artifact_err)?;
            if &now != digest {
                return Err(CliError::StaleArtifact(format!("{} changed since {stage}", p.display())));
            }
        }
        Ok(m)
    }
}

/// Where one (protocol, scope) run lives and how its split is built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Domain(String),
    All,
    Pair(String, String),
    Held(String),
}

impl Scope {
    pub fn dir_name(&self) -> String {
        match self {
            Scope::Domain(d) => d.clone(),
            Scope::All => "all".into(),
            Scope::Pair(s, t) => format!("{s}__{t}"),
            Scope::Held(d) => format!("held-{d}"),
        }
    }
}

pub fn scopes(protocol: Protocol, domains: &[String]) -> Vec<Scope> {
    match protocol {
        Protocol::Interpolation | Protocol::PlanVariant | Protocol::Extrapolation => {
            domains.iter().cloned().map(Scope::Domain).collect()
        }
        Protocol::MultiDomain => vec![Scope::All],
        Protocol::CrossDomain => domains
            .iter()
            .flat_map(|s| {
                domains
                    .iter()
                    .filter(move |t| *t != s)
                    .map(move |t| Scope::Pair(s.clone(), t.clone()))
            })
            .collect(),
        Protocol::Loo => {
            if domains.len() < 2 {
                Vec::new()
            } else {
                domains.iter().cloned().map(Scope::Held).collect()
            }
        }
    }
}

pub fn make_split(
    ds: &Dataset,
    domains: &[String],
    protocol: Protocol,
    scope: &Scope,
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, ProtocolError> {
    let ts = &ds.transitions;
    match (protocol, scope) {
        (Protocol::Interpolation, Scope::Domain(d)) => split_interpolation(ts, d, ratio, seed),
        (Protocol::PlanVariant, Scope::Domain(d)) => split_plan_variant(ts, d, seed),
        (Protocol::Extrapolation, Scope::Domain(d)) => split_extrapolation(ts, d, ratio, seed),
        (Protocol::MultiDomain, _) => make_multi_domain(ts, domains, seed),
        (Protocol::CrossDomain, Scope::Pair(s, t)) => make_cross_domain(ts, s, t, seed),
        (Protocol::Loo, Scope::Held(d)) => make_loo(ts, domains, d, seed),
        (_, s) => Err(ProtocolError::UnknownDomain(s.dir_name())),
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    seeds: Vec<u64>,
    hashes: StageHashes,
}

const DATA_DIR: &str = "data";
const EMBED_DIR: &str = "embed";
const RUNS_DIR: &str = "runs";
const TABLE_FILE: &str = "embeddings.embt";
const GOALS_FILE: &str = "goals.embt";
const SPLIT_FILE: &str = "split.json";
const CKPT_FILE: &str = "model.ckpt";
const HISTORY_FILE: &str = "history.jsonl";
const REPORT_FILE: &str = "report.json";

impl Ctx {
    fn new(args: &CommonArgs) -> Result<Self, CliError> {
        let cfg = ExperimentConfig::load(&args.config)?;
        let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        let seeds = args.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
        let hashes = StageHashes::compute(&cfg)?;
        Ok(Ctx {
            cfg,
            out,
            seeds,
            hashes,
        })
    }

    fn data_dir(&self) -> PathBuf {
        self.out.join(DATA_DIR)
    }

    fn embed_dir(&self) -> PathBuf {
        self.out.join(EMBED_DIR)
    }

    fn run_dir(&self, protocol: Protocol, scope: &Scope, seed: u64) -> PathBuf {
        self.out
            .join(RUNS_DIR)
            .join(protocol.name())
            .join(scope.dir_name())
            .join(format!("seed-{seed}"))
    }

    fn load_dataset(&self) -> Result<Dataset, CliError> {
        let dir = self.data_dir();
        Manifest::verify(&dir, "gen", &self.hashes.gen)?;
        Dataset::read(&dir).map_err(artifact_err)
    }

    fn load_tables(&self) -> Result<(EmbeddingTable, Option<EmbeddingTable>), CliError> {
        let dir = self.embed_dir();
        let m = Manifest::verify(&dir, "embed", &self.hashes.embed)?;
        let load = |f: &str| EmbeddingTable::load(&dir.join(f)).map_err(|e| CliError::Input(e.to_string()));
        let table = load(TABLE_FILE)?;
        let goals = if m.outputs.contains_key(GOALS_FILE) {
            Some(load(GOALS_FILE)?)
        } else {
            None
        };
        Ok((table, goals))
    }

    /// Every (protocol, scope, seed, split) the config asks for. Splits a
    /// protocol cannot form on this data are skipped with a warning.
    fn runs(&self, ds: &Dataset) -> Vec<(Protocol, Scope, u64, SplitResult)> {
        let domains = domain_names(ds);
        let mut out = Vec::new();
        for &p in &self.cfg.protocols {
            let scopes = scopes(p, &domains);
            if scopes.is_empty() {
                log::warn!("{p}: needs at least two domains; skipped");
            }
            for scope in scopes {
                for &seed in &self.seeds {
                    match make_split(ds, &domains, p, &scope, self.cfg.ratio, seed) {
                        Ok(s) => out.push((p, scope.clone(), seed, s)),
                        Err(e) => log::warn!("{p}/{}: {e}; skipped", scope.dir_name()),
                    }
                }
            }
        }
        out
    }
}

fn domain_names(ds: &Dataset) -> Vec<String> {
    let mut d: Vec<String> = ds.transitions.iter().map(|t| t.domain.clone()).collect();
    d.sort();
    d.dedup();
    d
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_gen(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let (ds, summaries) = Dataset::generate(&ctx.cfg.domains, &ctx.cfg.gen)?;
    let dir = ctx.data_dir();
    create_dir(&dir)?;
    ds.write(&dir).map_err(write_err)?;
    Manifest::write(&dir, "gen", &ctx.hashes.gen, &Dataset::artifact_files())?;
    println!("{}", DomainSummary::header());
    for s in &summaries {
        println!("{}", s.row());
    }
    Ok(())
}

pub fn cmd_embed(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let ds = ctx.load_dataset()?;
    let embed_err = |e: EmbedError| CliError::Input(e.to_string());
    let (table, goals) = match &ctx.cfg.encoder {
        EncoderConfig::Builtin(spec) => {
            let enc = BuiltinEncoder::new(spec.clone());
            let table = embed_corpus(&ds, &enc).map_err(embed_err)?;
            let goals = encode_all(&enc, &goal_items(&ds)).map_err(embed_err)?;
            (table, Some(goals))
        }
        EncoderConfig::Table { path, goals } => {
            let table = EmbeddingTable::load(path).map_err(embed_err)?;
            let goals = goals
                .as_ref()
                .map(|g| EmbeddingTable::load_with_dim(g, table.dim()))
                .transpose()
                .map_err(embed_err)?;
            (table, goals)
        }
    };
    check_coverage(&ds, &table).map_err(embed_err)?;
    let dir = ctx.embed_dir();
    create_dir(&dir)?;
    table.save(&dir.join(TABLE_FILE)).map_err(embed_err)?;
    let mut files = vec![TABLE_FILE];
    if let Some(g) = &goals {
        g.save(&dir.join(GOALS_FILE)).map_err(embed_err)?;
        files.push(GOALS_FILE);
    }
    Manifest::write(&dir, "embed", &ctx.hashes.embed, &files)?;
    println!(
        "embedded {} entries (dim {}), {} goals",
        table.len(),
        table.dim(),
        goals.as_ref().map_or(0, EmbeddingTable::len)
    );
    Ok(())
}

pub fn cmd_train(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let ds = ctx.load_dataset()?;
    let (table, _) = ctx.load_tables()?;
    let idx = ds.index();
    for (p, scope, seed, mut split) in ctx.runs(&ds) {
        let violations = check_split(&split, &ds.transitions);
        if !violations.is_empty() {
            return Err(CliError::Invariant(format!("{p}/{}: {}", scope.dir_name(), violations.join("; "))));
        }
        split.metadata.config_hash = Some(ctx.hashes.train.clone());
        let cfg = TrainConfig {
            seed,
            ..ctx.cfg.train.clone()
        };
        let (model, fit) = train_split(&ds, &idx, &table, &split, &cfg)?;
        let train_set: std::collections::BTreeSet<usize> = split.train_ids.iter().copied().collect();
        if let Some(leak) = fit.audit.iter().find(|i| !train_set.contains(i)) {
            return Err(CliError::Invariant(format!("training read test transition {leak}")));
        }
        let dir = ctx.run_dir(p, &scope, seed);
        create_dir(&dir)?;
        write_json(&dir.join(SPLIT_FILE), &split).map_err(write_err)?;
        save_checkpoint(&dir.join(CKPT_FILE), &model, fit.steps, fit.best_epoch, &ctx.hashes.train)
            .map_err(|e| CliError::Input(e.to_string()))?;
        write_jsonl(&dir.join(HISTORY_FILE), &fit.history).map_err(write_err)?;
        Manifest::write(&dir, "train", &ctx.hashes.train, &[SPLIT_FILE, CKPT_FILE, HISTORY_FILE])?;
        let last = fit.history.last();
        println!(
            "{p}/{} seed {seed}: {} train / {} test, best epoch {} of {}, val Hit@5 {:.1}",
            scope.dir_name(),
            split.train_ids.len(),
            split.test_ids.len(),
            fit.best_epoch,
            last.map_or(0, |h| h.epoch),
            fit.history
                .iter()
                .find(|h| h.epoch == fit.best_epoch)
                .map_or(0.0, |h| h.val_hit5)
        );
    }
    Ok(())
}

/// Name under which untrained-model rows are reported for `protocol`.
pub fn untrained_label(protocol: Protocol) -> String {
    format!("untrained-{}", protocol.name())
}

pub fn cmd_eval(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let ds = ctx.load_dataset()?;
    let (table, _) = ctx.load_tables()?;
    let idx = ds.index();
    let checksum = table.checksum();
    for (p, scope, seed, _) in ctx.runs(&ds) {
        let dir = ctx.run_dir(p, &scope, seed);
        Manifest::verify(&dir, "train", &ctx.hashes.train)?;
        let split: SplitResult = read_json(&dir.join(SPLIT_FILE)).map_err(artifact_err)?;
        let (model, header) =
            load_checkpoint(&dir.join(CKPT_FILE)).map_err(|e| CliError::Input(e.to_string()))?;
        if header.config_hash != ctx.hashes.train {
            return Err(CliError::StaleArtifact(format!("{}", dir.join(CKPT_FILE).display())));
        }
        let before = model.params.to_le_bytes();
        let (mut reports, _) = evaluate_split(&model, &ds, &idx, &table, &split, seed)?;
        let untrained = TransitionModel::init(model.arch(), table.dim(), table.dim(), seed)
            .map_err(|e| CliError::Invariant(e.to_string()))?;
        let (base, _) = evaluate_split(&untrained, &ds, &idx, &table, &split, seed)?;
        reports.extend(base.into_iter().map(|mut r| {
            r.protocol = untrained_label(p);
            r
        }));
        if model.params.to_le_bytes() != before || table.checksum() != checksum {
            return Err(CliError::Invariant("evaluation modified its inputs".into()));
        }
        for r in &reports {
            let v = r.check();
            if !v.is_empty() {
                return Err(CliError::Invariant(v.join("; ")));
            }
        }
        write_json(&dir.join(REPORT_FILE), &reports).map_err(write_err)?;
        Manifest::write(&dir, "eval", &ctx.hashes.train, &[REPORT_FILE])?;
        for r in reports.iter().filter(|r| r.protocol == p.name()) {
            println!(
                "{p}/{} seed {seed} [{}]: Hit@1/5/10 {:.1}/{:.1}/{:.1}  Acc@5 {:.1}",
                scope.dir_name(),
                r.domain,
                r.hit1,
                r.hit5,
                r.hit10,
                r.acc5
            );
        }
    }
    Ok(())
}

fn load_run_reports(ctx: &Ctx, p: Protocol, scope: &Scope, seed: u64) -> Result<Vec<MetricReport>, CliError> {
    let dir = ctx.run_dir(p, scope, seed);
    Manifest::verify(&dir, "eval", &ctx.hashes.train)?;
    read_json(&dir.join(REPORT_FILE)).map_err(artifact_err)
}

pub fn build_matrix(ctx_args: &CommonArgs) -> Result<CrossDomainMatrix, CliError> {
    let ctx = Ctx::new(ctx_args)?;
    let ds = ctx.load_dataset()?;
    matrix_from_runs(&ctx, &ds)
}

fn matrix_from_runs(ctx: &Ctx, ds: &Dataset) -> Result<CrossDomainMatrix, CliError> {
    if !ctx.cfg.protocols.contains(&Protocol::CrossDomain) {
        return Err(CliError::Input("config does not include the cross_domain protocol".into()));
    }
    let domains = domain_names(ds);
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (p, scope, seed, _) in ctx.runs(ds) {
        if p != Protocol::CrossDomain {
            continue;
        }
        let Scope::Pair(s, t) = &scope else { continue };
        let reports = load_run_reports(ctx, p, &scope, seed)?;
        if let Some(r) = reports.iter().find(|r| r.protocol == p.name()) {
            cells.entry((s.clone(), t.clone())).or_default().push(r.hit5);
        }
    }
    let cells = cells.into_iter().map(|(k, v)| (k, mean(&v))).collect();
    CrossDomainMatrix::new(domains, cells).map_err(|e| CliError::MissingArtifact(e.to_string()))
}

pub fn cmd_matrix(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let ds = ctx.load_dataset()?;
    let m = matrix_from_runs(&ctx, &ds)?;
    let csv = m.to_csv();
    write_text(&ctx.out.join("matrix.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// One row of the generalization-hierarchy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRow {
    pub setting: String,
    /// Mean over seeds of the per-seed mean Hit@5 across scopes.
    #[serde(serialize_with = "crate::eval::ser_sig6")]
    pub hit5: f64,
    #[serde(serialize_with = "crate::eval::ser_sig6")]
    pub stderr: f64,
    /// Difference from the untrained baseline, in percentage points.
    #[serde(serialize_with = "crate::eval::ser_sig6_opt")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub domain: String,
    #[serde(serialize_with = "crate::eval::ser_sig6")]
    pub interpolation: f64,
    #[serde(serialize_with = "crate::eval::ser_sig6")]
    pub extrapolation: f64,
    #[serde(serialize_with = "crate::eval::ser_sig6")]
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub hierarchy: Vec<HierarchyRow>,
    pub gaps: Vec<GapRow>,
    /// Paired t-test of interpolation against extrapolation Hit@5 over
    /// domains; absent with fewer than two domains.
    pub interp_vs_extrap: Option<Comparison>,
    pub interp_vs_extrap_note: Option<String>,
}

fn title(setting: &str) -> String {
    match setting {
        "interpolation" => "Interpolation".into(),
        "plan_variant" => "Plan-Variant".into(),
        "extrapolation" => "Extrapolation".into(),
        "multi_domain" => "Multi-Domain".into(),
        "cross_domain" => "Cross-Domain".into(),
        "loo" => "Leave-One-Out".into(),
        other => other.into(),
    }
}

pub fn cmd_report(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args)?;
    let ds = ctx.load_dataset()?;
    let runs = ctx.runs(&ds);

    // (protocol label, domain) → per-seed reports; label → seed → hit5s.
    let mut groups: BTreeMap<(String, String), Vec<MetricReport>> = BTreeMap::new();
    let mut per_seed: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for (p, scope, seed, _) in &runs {
        for r in load_run_reports(&ctx, *p, scope, *seed)? {
            per_seed.entry(r.protocol.clone()).or_default().entry(*seed).or_default().push(r.hit5);
            groups.entry((r.protocol.clone(), r.domain.clone())).or_default().push(r);
        }
    }
    let aggregated: Vec<MetricReport> = groups.values().filter_map(|g| aggregate_seeds(g)).collect();
    write_json(&ctx.out.join(REPORT_FILE), &aggregated).map_err(write_err)?;

    let setting_stats = |label: &str| -> Option<(f64, f64)> {
        let seeds = per_seed.get(label)?;
        let means: Vec<f64> = seeds.values().map(|v| mean(v)).collect();
        Some((mean(&means), stderr(&means)))
    };
    let baseline_label = ctx
        .cfg
        .protocols
        .iter()
        .map(|&p| untrained_label(p))
        .find(|l| per_seed.contains_key(l));
    let baseline = baseline_label.as_deref().and_then(setting_stats);
    let mut hierarchy = Vec::new();
    if let Some((m, se)) = baseline {
        hierarchy.push(HierarchyRow {
            setting: "Untrained".into(),
            hit5: m,
            stderr: se,
            delta: None,
        });
    }
    for p in Protocol::ALL {
        if let Some((m, se)) = setting_stats(p.name()) {
            hierarchy.push(HierarchyRow {
                setting: title(p.name()),
                hit5: m,
                stderr: se,
                delta: baseline.map(|(b, _)| m - b),
            });
        }
    }

    let hit5_of = |label: &str, domain: &str| {
        aggregated
            .iter()
            .find(|r| r.protocol == label && r.domain == domain)
            .map(|r| r.hit5)
    };
    let gaps: Vec<GapRow> = domain_names(&ds)
        .into_iter()
        .filter_map(|d| {
            let i = hit5_of("interpolation", &d)?;
            let e = hit5_of("extrapolation", &d)?;
            Some(GapRow {
                domain: d,
                interpolation: i,
                extrapolation: e,
                gap: i - e,
            })
        })
        .collect();
    let (cmp, note) = if gaps.is_empty() {
        (None, None)
    } else {
        let a: Vec<f64> = gaps.iter().map(|g| g.interpolation).collect();
        let b: Vec<f64> = gaps.iter().map(|g| g.extrapolation).collect();
        match stats_compare(&a, &b, true) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let summary = Summary {
        hierarchy,
        gaps,
        interp_vs_extrap: cmp,
        interp_vs_extrap_note: note,
    };
    write_json(&ctx.out.join("summary.json"), &summary).map_err(write_err)?;
    let text = render_summary(&summary, &aggregated);
    write_text(&ctx.out.join("report.txt"), &text)?;
    print!("{text}");

    let (table, goals) = ctx.load_tables()?;
    if let Some(goals) = goals {
        let lda = lda_samples(&ds, &table, &goals)
            .map_err(|e| e.to_string())
            .and_then(|s| lda_probe(&s).map_err(|e| e.to_string()));
        let value = match lda {
            Ok(r) => serde_json::to_value(r).expect("serializes"),
            Err(e) => serde_json::json!({ "error": e }),
        };
        write_json(&ctx.out.join("lda.json"), &value).map_err(write_err)?;
    }
    if let Some((p, scope, seed, split)) = runs.first() {
        let dir = ctx.run_dir(*p, scope, *seed);
        let (model, _) = load_checkpoint(&dir.join(CKPT_FILE)).map_err(|e| CliError::Input(e.to_string()))?;
        let rows = pca_rows(&model, &table, &ds, &split.test_ids[..split.test_ids.len().min(100)])?;
        write_text(&ctx.out.join("pca.csv"), &pca_csv(&rows))?;
    }
    Ok(())
}

/// PCA of projected current, predicted and true next states for `ids`.
pub fn pca_rows(
    model: &TransitionModel,
    table: &EmbeddingTable,
    ds: &Dataset,
    ids: &[usize],
) -> Result<Vec<PcaRow>, CliError> {
    let idx = ds.index();
    let ev = Evaluator::new(model, table, ds, &idx).map_err(|e| CliError::Input(e.to_string()))?;
    let mut vecs = Vec::new();
    let mut meta = Vec::new();
    for &i in ids {
        let t = &ds.transitions[i];
        let pred = ev.predict(t.s, &[t.a.as_str()]).map_err(|e| CliError::Input(e.to_string()))?;
        let norm = pred.row(0).iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let items = [
            ("s", ev.projected_state(t.s).map(<[f64]>::to_vec)),
            ("s_pred", Ok(pred.row(0).iter().map(|x| x / norm).collect())),
            ("s_next", ev.projected_state(t.s_next).map(<[f64]>::to_vec)),
        ];
        for (kind, v) in items {
            vecs.push(v.map_err(|e| CliError::Input(e.to_string()))?);
            meta.push((i.to_string(), kind, format!("{}/{}", t.domain, t.problem)));
        }
    }
    let (coords, _) = pca_2d(&vecs);
    Ok(meta
        .into_iter()
        .zip(coords)
        .map(|((id, kind, problem), c)| PcaRow {
            id,
            kind: kind.into(),
            problem,
            pc1: c[0],
            pc2: c[1],
        })
        .collect())
}

fn render_summary(s: &Summary, rows: &[MetricReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:>14} {:>10}\n", "Setting", "Hit@5", "Δ"));
    for h in &s.hierarchy {
        let delta = h.delta.map_or("-".to_string(), |d| format!("{d:+.1}"));
        out.push_str(&format!(
            "{:<16} {:>14} {:>10}\n",
            h.setting,
            format!("{:.1} ± {:.1}", h.hit5, h.stderr),
            delta
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<24} {:<14} {:>12} {:>12} {:>12} {:>8} {:>8} {:>10} {:>10}\n",
        "Protocol", "Domain", "Hit@1", "Hit@5", "Hit@10", "Acc@5", "Plan@5", "Exact@5", "n"
    ));
    for r in rows {
        let se = |k: &str| r.stderr.get(k).copied().unwrap_or(0.0);
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
        out.push_str(&format!(
            "{:<24} {:<14} {:>12} {:>12} {:>12} {:>8.1} {:>8} {:>10} {:>10}\n",
            r.protocol,
            r.domain,
            format!("{:.1}±{:.1}", r.hit1, se("hit1")),
            format!("{:.1}±{:.1}", r.hit5, se("hit5")),
            format!("{:.1}±{:.1}", r.hit10, se("hit10")),
            r.acc5,
            opt(r.plan_mean5),
            opt(r.plan_exact5),
            r.n_queries
        ));
    }
    if !s.gaps.is_empty() {
        out.push('\n');
        out.push_str(&format!("{:<14} {:>8} {:>8} {:>8}\n", "Domain", "Interp", "Extrap", "Gap"));
        for g in &s.gaps {
            out.push_str(&format!(
                "{:<14} {:>8.1} {:>8.1} {:>8.1}\n",
                g.domain, g.interpolation, g.extrapolation, g.gap
            ));
        }
        match (&s.interp_vs_extrap, &s.interp_vs_extrap_note) {
            (Some(c), _) => out.push_str(&format!(
                "paired t({}) = {:.2}, p = {:.3e}, d = {:.2}\n",
                c.df, c.t, c.p, c.cohen_d
            )),
            (None, Some(note)) => out.push_str(&format!("paired t-test unavailable: {note}\n")),
            _ => {}
        }
    }
    out
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn verbosity(cli: &Cli) -> u8 {
    match &cli.command {
        Command::Gen(a)
        | Command::Embed(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Matrix(a)
        | Command::Report(a) => a.verbose,
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = match verbosity(&cli) {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
