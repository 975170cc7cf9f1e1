//! The subcommands. Each reads and writes artifacts in the run's `out`
//! directory; every file carries the config hash and seed.

use crate::config::{HyperChoice, RunConfig};
use crate::error::{CliError, Result};
use fairppm::encoding::{EncodedPrefix, EncoderSpec};
use fairppm::eventlog::{generate_synthetic_log, parse_event_log, write_event_log};
use fairppm::metrics::{DensityCurve, EvalReport, GroupedScores};
use fairppm::train::{
    self, grid_search, lambda_sweep, pareto_front, prepare_dataset, train_model,
    write_report_csv, write_sweep_csv, Checkpoint, FairnessKey, GridResult, Hyper, ParetoFront,
    ReportRow, SplitSummary, CHECKPOINT_VERSION,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const LOG_FILE: &str = "log.csv";
pub const TRAIN_FILE: &str = "train.json";
pub const VALID_FILE: &str = "valid.json";
pub const TEST_FILE: &str = "test.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const GRID_FILE: &str = "grid.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVAL_FILE: &str = "eval.json";
pub const SCORES_FILE: &str = "scores.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const PARETO_FILE: &str = "pareto.json";
pub const REPORT_CSV: &str = "report.csv";

/// Grid points kept in density CSVs (every 50th of the integration grid).
const DENSITY_STRIDE: usize = 50;

/// Provenance wrapper around every JSON artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Scores {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Fronts {
    pub abpc: ParetoFront,
    pub abcc: ParetoFront,
}

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Ctx> {
        let hash = cfg.hash()?;
        Ok(Ctx { cfg, hash })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| {
            CliError::config(format!("out: cannot create `{}`: {e}", self.cfg.out.display()))
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, data: T) -> Result<PathBuf> {
        let env = Envelope {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            data,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(CliError::internal)?;
        text.push('\n');
        let path = self.path(name);
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.path(name);
        let file = File::create(&path)?;
        Ok((path, BufWriter::new(file)))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::artifact(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::artifact(path, format!("unreadable: {e}")))
}

struct Dataset {
    train: Vec<EncodedPrefix>,
    valid: Vec<EncodedPrefix>,
    test: Vec<EncodedPrefix>,
    encoder: EncoderSpec,
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    let load = |name| -> Result<Vec<EncodedPrefix>> { Ok(read_json(&ctx.path(name))?.data) };
    Ok(Dataset {
        train: load(TRAIN_FILE)?,
        valid: load(VALID_FILE)?,
        test: load(TEST_FILE)?,
        encoder: read_json(&ctx.path(ENCODER_FILE))?.data,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let env: Envelope<Checkpoint> = read_json(path)?;
    if env.data.version != CHECKPOINT_VERSION {
        return Err(CliError::artifact(
            path,
            format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                env.data.version
            ),
        ));
    }
    Ok(env.data)
}

fn say(what: &str, path: &Path) {
    println!("{what}: {}", path.display());
}

/// Writes a synthetic hiring-style log.
pub fn synth(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.synth.bias_spec();
    let log = generate_synthetic_log(&spec, ctx.cfg.seed)?;
    ctx.out_dir()?;
    let (path, mut w) = ctx.create(LOG_FILE)?;
    writeln!(w, "# config_hash={} seed={}", ctx.hash, ctx.cfg.seed)?;
    write_event_log(&log, &mut w)?;
    w.flush()?;
    say("log", &path);
    Ok(())
}

/// Splits, encodes and summarises a log.
pub fn ingest(ctx: &Ctx) -> Result<()> {
    let log_path = ctx.cfg.log_path()?;
    let log = parse_event_log(log_path, &ctx.cfg.schema)?;
    let prep = prepare_dataset(&log, &ctx.cfg.prepare_config(), ctx.cfg.seed)?;
    ctx.out_dir()?;
    ctx.write_json(TRAIN_FILE, &prep.train)?;
    ctx.write_json(VALID_FILE, &prep.valid)?;
    ctx.write_json(TEST_FILE, &prep.test)?;
    ctx.write_json(ENCODER_FILE, &prep.encoder)?;

    let splits = [
        ("train", SplitSummary::of(&prep.train)),
        ("valid", SplitSummary::of(&prep.valid)),
        ("test", SplitSummary::of(&prep.test)),
    ];
    let by_name: BTreeMap<&str, SplitSummary> = splits.iter().copied().collect();
    let json = ctx.write_json(SUMMARY_JSON, &by_name)?;
    let (csv, mut w) = ctx.create(SUMMARY_CSV)?;
    writeln!(
        w,
        "split,prefixes,pct_positive,pct_s1,pct_s0_positive,pct_s1_positive,seed,config_hash"
    )?;
    for (name, s) in &splits {
        writeln!(
            w,
            "{name},{},{},{},{},{},{},{}",
            s.prefixes,
            s.pct_positive,
            s.pct_s1,
            s.pct_s0_positive,
            s.pct_s1_positive,
            ctx.cfg.seed,
            ctx.hash
        )?;
    }
    w.flush()?;
    for (name, s) in &splits {
        println!(
            "{name}: {} prefixes, {:.2}% positive, {:.2}% S1, {:.2}% S0+, {:.2}% S1+",
            s.prefixes, s.pct_positive, s.pct_s1, s.pct_s0_positive, s.pct_s1_positive
        );
    }
    say("summary", &json);
    say("summary", &csv);
    Ok(())
}

/// Explicit hyperparameters, or the grid winner (written to `grid.json`).
fn resolve_hyper(ctx: &Ctx, data: &Dataset) -> Result<Hyper> {
    match &ctx.cfg.hyper {
        HyperChoice::Explicit(h) => Ok(*h),
        HyperChoice::Grid(_) => {
            let base = ctx.cfg.train_config(0.0);
            let grid: GridResult = grid_search(
                &data.train,
                &data.valid,
                &data.encoder,
                &ctx.cfg.grid,
                &base,
                ctx.cfg.seed,
                ctx.cfg.jobs,
            )?;
            let path = ctx.write_json(GRID_FILE, &grid)?;
            say("grid", &path);
            Ok(grid.best)
        }
    }
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let data = load_dataset(ctx)?;
    let hyper = resolve_hyper(ctx, &data)?;
    let ckpt = train_model(
        &data.train,
        &data.valid,
        &data.encoder,
        &hyper,
        &ctx.cfg.train_config(ctx.cfg.lambda),
        ctx.cfg.seed,
    )?;
    let path = ctx.write_json(CHECKPOINT_FILE, &ckpt)?;
    println!(
        "lambda {}: {} epochs, best epoch {}, validation loss {}",
        ctx.cfg.lambda, ckpt.epochs_run, ckpt.best_epoch, ckpt.best_valid_loss
    );
    say("checkpoint", &path);
    Ok(())
}

pub fn evaluate(ctx: &Ctx) -> Result<()> {
    let ckpt = load_checkpoint(&ctx.path(CHECKPOINT_FILE))?;
    let test: Vec<EncodedPrefix> = read_json(&ctx.path(TEST_FILE))?.data;
    let scores = train::score(&ckpt, &test)?;
    let labels: Vec<u8> = test.iter().map(|s| s.outcome).collect();
    let sensitive: Vec<u8> = test.iter().map(|s| s.sensitive).collect();
    let threshold = ckpt.optimal_threshold()?;
    let report = EvalReport::compute(&scores, &labels, &sensitive, threshold)?;
    ctx.out_dir()?;
    let path = ctx.write_json(EVAL_FILE, &report)?;
    ctx.write_json(
        SCORES_FILE,
        Scores {
            scores,
            labels,
            sensitive,
        },
    )?;
    for (name, v) in EvalReport::FIELDS.iter().zip(report.values()) {
        println!("{name}: {v:.4}");
    }
    say("report", &path);
    Ok(())
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let data = load_dataset(ctx)?;
    let lambdas = ctx.cfg.sweep.lambdas()?;
    let hyper = resolve_hyper(ctx, &data)?;
    let points = lambda_sweep(
        &data.train,
        &data.valid,
        &data.test,
        &data.encoder,
        &hyper,
        &ctx.cfg.train_config(0.0),
        &lambdas,
        ctx.cfg.seed,
        ctx.cfg.jobs,
    )?;
    let (csv, w) = ctx.create(SWEEP_CSV)?;
    write_sweep_csv(&points, &ctx.hash, w)?;
    let fronts = Fronts {
        abpc: pareto_front(&points, FairnessKey::Abpc),
        abcc: pareto_front(&points, FairnessKey::Abcc),
    };
    let json = ctx.write_json(PARETO_FILE, &fronts)?;
    for p in &points {
        match &p.error {
            None => println!(
                "lambda {}: auc {:.4} abpc {:.4} abcc {:.4}",
                p.lambda, p.auc, p.abpc, p.abcc
            ),
            Some(e) => println!("lambda {}: failed: {e}", p.lambda),
        }
    }
    say("sweep", &csv);
    say("pareto", &json);
    Ok(())
}

fn file_stem_ok(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !name.starts_with('.')
}

/// Merges the evaluation reports of several runs and writes their density
/// curves.
pub fn report(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.runs.is_empty() {
        return Err(CliError::config("runs: no runs to report"));
    }
    if let Some(r) = ctx.cfg.runs.iter().find(|r| !file_stem_ok(&r.name)) {
        return Err(CliError::config(format!(
            "runs: name `{}` must be non-empty and use only letters, digits, `-`, `_` and `.`",
            r.name
        )));
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for run in &ctx.cfg.runs {
        let eval: Envelope<EvalReport> = read_json(&run.dir.join(EVAL_FILE))?;
        let scores: Envelope<Scores> = read_json(&run.dir.join(SCORES_FILE))?;
        let groups = GroupedScores::from_sensitive(&scores.data.scores, &scores.data.sensitive);
        curves.push((run, DensityCurve::compute(&groups)?, eval.seed, eval.config_hash.clone()));
        rows.push(ReportRow {
            run: run.name.clone(),
            seed: eval.seed,
            config_hash: eval.config_hash,
            report: eval.data,
        });
    }
    ctx.out_dir()?;
    let (path, w) = ctx.create(REPORT_CSV)?;
    write_report_csv(&rows, w)?;
    say("report", &path);
    for (run, curve, seed, hash) in curves {
        let (path, mut w) = ctx.create(&format!("density_{}.csv", run.name))?;
        writeln!(w, "x,f0,f1,F0,F1,seed,config_hash")?;
        for k in (0..curve.grid.len()).step_by(DENSITY_STRIDE) {
            writeln!(
                w,
                "{},{},{},{},{},{seed},{hash}",
                curve.grid[k], curve.pdf0[k], curve.pdf1[k], curve.cdf0[k], curve.cdf1[k]
            )?;
        }
        w.flush()?;
        say("density", &path);
    }
    Ok(())
}
