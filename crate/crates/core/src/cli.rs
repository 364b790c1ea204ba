//! Config-driven front end: `simulate`, `identify`, `fit` and `mc`.
//!
//! Each command has a `run_*` function returning its results, and [`run`]
//! writes the artifacts and prints plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::draw::{stream_rng, ThetaGenerator};
use crate::error::{Error, Result};
use crate::estimate::{self, FitInput, FitOptions, FitResult};
use crate::ident::{self, CheckOptions, IdentReport};
use crate::minors;
use crate::model::{Theta, Variant};
use crate::par;
use crate::simulate::{self, PanelSample, PanelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Identify,
    Fit,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// A fixed parameter point or a distribution to draw one per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    Fixed(Theta),
    Generator(ThetaGenerator),
}

impl ThetaSource {
    /// The point for replication `rep`.
    pub fn get(&self, seed: u64, rep: usize) -> Result<Theta> {
        match self {
            ThetaSource::Fixed(t) => Ok(t.clone()),
            ThetaSource::Generator(g) => g.draw(seed, rep as u64),
        }
    }

    fn shape(&self) -> (Variant, usize) {
        match self {
            ThetaSource::Fixed(t) => (t.variant, t.r_bar),
            ThetaSource::Generator(g) => (g.variant, g.r_bar),
        }
    }
}

fn default_n_units() -> usize {
    1000
}

fn default_one() -> usize {
    1
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

fn default_n_minors() -> usize {
    CheckOptions::default().n_minors
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must agree with the subcommand when given.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub theta: Option<ThetaSource>,
    #[serde(default = "default_n_units")]
    pub n_units: usize,
    #[serde(default = "default_one")]
    pub n_replications: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// No files are written when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Sample sizes swept by `mc`; defaults to `[n_units]`.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Intercepts `δ`; zeros when absent.
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    #[serde(default)]
    pub panel: PanelSpec,
    #[serde(default)]
    pub fit: FitOptions,
    /// Minors intersected by `identify`; 0 uses all.
    #[serde(default = "default_n_minors")]
    pub n_minors: usize,
    /// `fit` reads this CSV panel instead of simulating.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Model shape for `fit` on an input panel.
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub r_bar: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config does not parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("seed is required for randomized commands".into()))
    }

    fn theta_source(&self) -> Result<&ThetaSource> {
        self.theta.as_ref().ok_or_else(|| Error::Config("theta (fixed point or generator) is required".into()))
    }

    fn fit_shape(&self) -> Result<(Variant, usize)> {
        match (self.variant, self.r_bar, &self.theta) {
            (Some(v), Some(r), _) => Ok((v, r)),
            (v, r, Some(src)) => {
                let (sv, sr) = src.shape();
                Ok((v.unwrap_or(sv), r.unwrap_or(sr)))
            }
            _ => Err(Error::Config("fit on an input panel needs variant and r_bar".into())),
        }
    }

    /// Checks the preconditions of `command`; every failure is a config error.
    pub fn validate(&self, command: Command) -> Result<()> {
        if let Some(c) = self.command {
            if c != command {
                return Err(Error::Config(format!("config command {c:?} does not match subcommand {command:?}")));
            }
        }
        if self.n_replications < 1 {
            return Err(Error::Config("n_replications must be at least 1".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("formats must not be empty".into()));
        }
        let needs_panel = matches!(command, Command::Simulate | Command::Mc) || (command == Command::Fit && self.input.is_none());
        if needs_panel && self.n_units < 2 {
            return Err(Error::Config("n_units must be at least 2".into()));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("every n_grid entry must be at least 2".into()));
        }
        if self.fit.n_starts < 1 {
            return Err(Error::Config("fit.n_starts must be at least 1".into()));
        }
        if command == Command::Fit && self.input.is_some() {
            self.fit_shape()?;
            return Ok(());
        }
        let src = self.theta_source()?;
        let randomized = needs_panel || matches!(src, ThetaSource::Generator(_));
        if randomized {
            self.seed()?;
        }
        let probe = match src {
            ThetaSource::Fixed(t) => t.validate().map(|_| t.clone()),
            ThetaSource::Generator(g) => g.check().and_then(|_| g.draw(self.seed.unwrap_or(0), 0)),
        }
        .map_err(|e| Error::Config(format!("theta: {e}")))?;
        if let Some(d) = &self.delta {
            if d.len() != probe.big_t {
                return Err(Error::Config(format!("delta has length {}, expected T = {}", d.len(), probe.big_t)));
            }
        }
        if command == Command::Fit || command == Command::Mc {
            estimate::Layout::new(probe.variant, self.r_bar.unwrap_or(probe.r_bar), probe.big_t)
                .map_err(|e| Error::Config(format!("fit shape: {e}")))?;
        }
        Ok(())
    }

    fn delta_for(&self, theta: &Theta) -> Vec<f64> {
        self.delta.clone().unwrap_or_else(|| vec![0.0; theta.big_t])
    }
}

/// Seed for replication `rep` at grid position `cell`.
pub fn replication_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    stream_rng(seed, ((cell as u64) << 32) | rep as u64).next_u64()
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<PanelSample>> {
    cfg.validate(Command::Simulate)?;
    let seed = cfg.seed()?;
    let src = cfg.theta_source()?;
    let out = par::map_indexed(cfg.n_replications, |rep| {
        let theta = src.get(seed, rep)?;
        simulate::gen_panel(&theta, &cfg.delta_for(&theta), cfg.n_units, replication_seed(seed, 0, rep), &cfg.panel)
    });
    out.into_iter().collect()
}

pub fn run_identify(cfg: &ExperimentConfig) -> Result<Vec<IdentReport>> {
    cfg.validate(Command::Identify)?;
    let seed = cfg.seed.unwrap_or(0);
    let src = cfg.theta_source()?;
    let opts = CheckOptions { n_minors: cfg.n_minors };
    let out = par::map_indexed(cfg.n_replications, |rep| ident::check(&src.get(seed, rep)?, opts));
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub replication: usize,
    pub seed: u64,
    pub n_units: usize,
    /// Generating point; absent for input panels.
    pub theta_true: Option<Theta>,
    pub result: FitResult,
}

pub fn run_fit(cfg: &ExperimentConfig) -> Result<Vec<FitRecord>> {
    cfg.validate(Command::Fit)?;
    if let Some(path) = &cfg.input {
        let (variant, r_bar) = cfg.fit_shape()?;
        let file = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        let y = simulate::read_csv(BufReader::new(file))?;
        let s = simulate::sample_cov_matrix(&y, simulate::Divisor::N)?;
        let opts = FitOptions { seed: cfg.seed.unwrap_or(cfg.fit.seed), ..cfg.fit };
        let result = estimate::fit(FitInput::Covariance { s: &s, n_units: y.nrows() }, r_bar, variant, &opts)?;
        return Ok(vec![FitRecord { replication: 0, seed: opts.seed, n_units: y.nrows(), theta_true: None, result }]);
    }
    let seed = cfg.seed()?;
    fit_replications(cfg, seed, 0, cfg.n_units)
}

fn fit_replications(cfg: &ExperimentConfig, seed: u64, cell: usize, n_units: usize) -> Result<Vec<FitRecord>> {
    let src = cfg.theta_source()?;
    let out = par::map_indexed(cfg.n_replications, |rep| {
        let theta = src.get(seed, rep)?;
        let rep_seed = replication_seed(seed, cell, rep);
        let panel = simulate::gen_panel(&theta, &cfg.delta_for(&theta), n_units, rep_seed, &cfg.panel)?;
        let opts = FitOptions { seed: rep_seed, ..cfg.fit };
        let r_bar = cfg.r_bar.unwrap_or(theta.r_bar);
        let result = estimate::fit(FitInput::Panel(&panel), r_bar, theta.variant, &opts)?;
        Ok(FitRecord { replication: rep, seed: rep_seed, n_units, theta_true: Some(theta), result })
    });
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub name: String,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub n_units: usize,
    pub replications: usize,
    pub converged: usize,
    pub mean_alpha_hat: f64,
    pub bias: f64,
    pub rmse: f64,
    pub params: Vec<ParamStat>,
}

/// Names matching [`estimate::natural_parameters`].
pub fn parameter_names(theta: &Theta) -> Vec<String> {
    let mut names = vec!["alpha".to_string()];
    for t in 0..theta.big_t {
        for j in 0..theta.r_bar {
            names.push(format!("F[{},{}]", t + 1, j + 1));
        }
    }
    // nalgebra stores column-major.
    for j in 0..theta.r_bar {
        for i in 0..theta.r_bar {
            names.push(format!("Psi[{},{}]", i + 1, j + 1));
        }
    }
    match theta.variant {
        Variant::Differenced => names.extend(["sigma2", "sigma1_sq", "sigma_c"].map(String::from)),
        _ => names.extend((1..=theta.big_t).map(|t| format!("d[{t}]"))),
    }
    names
}

fn summarize(n_units: usize, records: &[FitRecord]) -> McRow {
    let n = records.len() as f64;
    let mut names = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for r in records {
        let Some(truth) = &r.theta_true else { continue };
        let (a, b) = (estimate::natural_parameters(&r.result.theta_hat), estimate::natural_parameters(truth));
        if names.is_empty() {
            names = parameter_names(truth);
            sums = vec![(0.0, 0.0); a.len()];
        }
        for (k, (x, y)) in a.iter().zip(&b).enumerate().take(sums.len()) {
            sums[k].0 += x - y;
            sums[k].1 += (x - y) * (x - y);
        }
    }
    let params: Vec<ParamStat> = names
        .into_iter()
        .zip(&sums)
        .map(|(name, &(s, ss))| ParamStat { name, bias: s / n, rmse: (ss / n).sqrt() })
        .collect();
    let mean_alpha_hat = records.iter().map(|r| r.result.theta_hat.alpha).sum::<f64>() / n;
    let (bias, rmse) = params.first().map_or((f64::NAN, f64::NAN), |p| (p.bias, p.rmse));
    McRow {
        n_units,
        replications: records.len(),
        converged: records.iter().filter(|r| r.result.converged).count(),
        mean_alpha_hat,
        bias,
        rmse,
        params,
    }
}

/// One row per entry of `n_grid`, each from `n_replications` fits.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<Vec<McRow>> {
    cfg.validate(Command::Mc)?;
    let seed = cfg.seed()?;
    let grid = if cfg.n_grid.is_empty() { vec![cfg.n_units] } else { cfg.n_grid.clone() };
    grid.iter()
        .enumerate()
        .map(|(cell, &n)| fit_replications(cfg, seed, cell, n).map(|recs| summarize(n, &recs)))
        .collect()
}

/// Plain-text table with right-aligned columns.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(header.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// `identified X/Y` followed by the degree histogram of `J̃` per minor
/// dimension against the admissible range.
pub fn identify_summary(reports: &[IdentReport]) -> String {
    let ok = reports.iter().filter(|r| r.identified).count();
    let mut out = format!("identified {ok}/{}\n", reports.len());
    let mut hist: BTreeMap<(usize, Option<usize>), usize> = BTreeMap::new();
    let mut r_bar_of_k: BTreeMap<usize, usize> = BTreeMap::new();
    for r in reports {
        for f in &r.per_minor {
            *hist.entry((f.minor.dim(), f.degree)).or_default() += 1;
            // dim = r_bar + 1 for every checked minor
            r_bar_of_k.insert(f.minor.dim(), f.minor.dim().saturating_sub(1));
        }
    }
    let rows: Vec<Vec<String>> = hist
        .iter()
        .map(|(&(k, deg), &count)| {
            let (lo, hi) = minors::degree_bounds(k, r_bar_of_k[&k]);
            let within = deg.is_some_and(|d| d >= lo && d <= hi);
            vec![
                k.to_string(),
                deg.map_or("zero".into(), |d| d.to_string()),
                count.to_string(),
                format!("[{lo},{hi}]"),
                if within { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    out.push_str(&format_table(&["k", "degree", "count", "bounds", "within"], &rows));
    out
}

pub fn mc_tables(rows: &[McRow]) -> String {
    let alpha: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n_units.to_string(),
                r.replications.to_string(),
                r.converged.to_string(),
                format!("{:.6}", r.mean_alpha_hat),
                format!("{:+.6}", r.bias),
                format!("{:.6}", r.rmse),
            ]
        })
        .collect();
    let mut out = format_table(&["N", "reps", "converged", "mean_alpha_hat", "bias", "rmse"], &alpha);
    out.push('\n');
    let params: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            r.params.iter().map(move |p| {
                vec![r.n_units.to_string(), p.name.clone(), format!("{:+.6}", p.bias), format!("{:.6}", p.rmse)]
            })
        })
        .collect();
    out.push_str(&format_table(&["N", "parameter", "bias", "rmse"], &params));
    out
}

fn fit_rows(records: &[FitRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                r.n_units.to_string(),
                r.theta_true.as_ref().map_or("".into(), |t| format!("{:.6}", t.alpha)),
                format!("{:.6}", r.result.theta_hat.alpha),
                format!("{:.8}", r.result.loglik),
                r.result.converged.to_string(),
                format!("{:.2e}", r.result.gradient_norm),
            ]
        })
        .collect()
}

const FIT_HEADER: [&str; 7] = ["rep", "N", "alpha", "alpha_hat", "loglik", "converged", "grad_norm"];

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn write_csv_rows(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name)).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PanelDoc<'a> {
    theta: &'a Theta,
    delta: &'a [f64],
    seed: u64,
    y: Vec<Vec<f64>>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Runs `command`, writes artifacts under `output_dir` and returns the text
/// printed to standard output.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<String> {
    let dir = cfg.output_dir.as_deref();
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::Config(format!("cannot create {}: {e}", d.display())))?;
    }
    let json = cfg.formats.contains(&Format::Json);
    let csv_out = cfg.formats.contains(&Format::Csv);
    match command {
        Command::Simulate => {
            let panels = run_simulate(cfg)?;
            if let Some(d) = dir {
                for (rep, p) in panels.iter().enumerate() {
                    if csv_out {
                        simulate::write_csv(&p.y, BufWriter::new(File::create(d.join(format!("panel_{rep:04}.csv")))?))?;
                    }
                    if json {
                        let doc = PanelDoc { theta: &p.theta_used, delta: &p.delta, seed: p.seed, y: matrix_rows(&p.y) };
                        write_json(d, &format!("panel_{rep:04}.json"), &doc)?;
                    }
                }
            }
            let rows: Vec<Vec<String>> = panels
                .iter()
                .enumerate()
                .map(|(rep, p)| {
                    vec![rep.to_string(), p.n_units().to_string(), p.big_t().to_string(), p.seed.to_string(), format!("{:.6}", p.theta_used.alpha)]
                })
                .collect();
            Ok(format_table(&["rep", "N", "T", "seed", "alpha"], &rows))
        }
        Command::Identify => {
            let reports = run_identify(cfg)?;
            if let Some(d) = dir {
                if json {
                    write_json(d, "ident_reports.json", &reports)?;
                }
                if csv_out {
                    let rows: Vec<Vec<String>> = reports
                        .iter()
                        .enumerate()
                        .map(|(rep, r)| {
                            let roots: Vec<String> = r.common_roots.iter().map(|x| format!("{x:.12}")).collect();
                            let flagged = r.case_log.iter().filter(|c| c.outcome == ident::CaseOutcome::Flagged).count();
                            vec![rep.to_string(), format!("{:.12}", r.alpha_true), r.identified.to_string(), roots.join(";"), flagged.to_string()]
                        })
                        .collect();
                    write_csv_rows(d, "ident_summary.csv", &["rep", "alpha", "identified", "common_roots", "flagged_cases"], &rows)?;
                }
            }
            Ok(identify_summary(&reports))
        }
        Command::Fit => {
            let records = run_fit(cfg)?;
            if let Some(d) = dir {
                if json {
                    write_json(d, "fits.json", &records)?;
                }
                if csv_out {
                    write_csv_rows(d, "fits.csv", &FIT_HEADER, &fit_rows(&records))?;
                }
            }
            Ok(format_table(&FIT_HEADER, &fit_rows(&records)))
        }
        Command::Mc => {
            let rows = run_mc(cfg)?;
            if let Some(d) = dir {
                if json {
                    write_json(d, "mc.json", &rows)?;
                }
                if csv_out {
                    let alpha: Vec<Vec<String>> = rows
                        .iter()
                        .map(|r| {
                            vec![r.n_units.to_string(), r.replications.to_string(), r.converged.to_string(), r.mean_alpha_hat.to_string(), r.bias.to_string(), r.rmse.to_string()]
                        })
                        .collect();
                    write_csv_rows(d, "mc_alpha.csv", &["N", "reps", "converged", "mean_alpha_hat", "bias", "rmse"], &alpha)?;
                    let params: Vec<Vec<String>> = rows
                        .iter()
                        .flat_map(|r| r.params.iter().map(move |p| vec![r.n_units.to_string(), p.name.clone(), p.bias.to_string(), p.rmse.to_string()]))
                        .collect();
                    write_csv_rows(d, "mc_params.csv", &["N", "parameter", "bias", "rmse"], &params)?;
                }
            }
            Ok(mc_tables(&rows))
        }
    }
}

/// 1 for configuration and input errors, 2 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotPositiveDefinite { .. }
        | Error::NonVanishingOmegaMinor { .. }
        | Error::ZeroPolynomial
        | Error::Estimation(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "panel-ident", version, about = "Identification checks, simulation and quasi-ML fits for dynamic panels with interactive effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Restricts written artifacts to one format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CliCommand {
    /// Simulate panels.
    Simulate,
    /// Check identification of alpha.
    Identify,
    /// Fit by concentrated quasi-ML.
    Fit,
    /// Monte Carlo sweep over sample sizes.
    Mc,
}

impl From<CliCommand> for Command {
    fn from(c: CliCommand) -> Self {
        match c {
            CliCommand::Simulate => Command::Simulate,
            CliCommand::Identify => Command::Identify,
            CliCommand::Fit => Command::Fit,
            CliCommand::Mc => Command::Mc,
        }
    }
}

impl Cli {
    /// Loads the config and applies the flag overrides.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().ok_or_else(|| Error::Config("--config <path> is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(f) = self.format {
            cfg.formats = vec![f];
        }
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<String> {
        let cfg = self.config()?;
        if self.workers == Some(0) {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        par::with_workers(self.workers, || run(self.command.into(), &cfg))
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = cfg(r#"{"theta": {"generator": {"variant": "Baseline", "r_bar": 1, "T": 4}}, "seed": 3}"#);
        assert_eq!(c.n_replications, 1);
        assert_eq!(c.formats, vec![Format::Json, Format::Csv]);
        c.validate(Command::Identify).unwrap();
        let no_seed = cfg(r#"{"theta": {"generator": {"variant": "Baseline", "r_bar": 1, "T": 4}}}"#);
        assert!(matches!(no_seed.validate(Command::Simulate), Err(Error::Config(_))));
        let zero = cfg(r#"{"theta": {"generator": {}}, "seed": 1, "n_replications": 0}"#);
        assert!(matches!(zero.validate(Command::Identify), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let wrong = cfg(r#"{"command": "fit", "theta": {"generator": {}}, "seed": 1}"#);
        assert!(matches!(wrong.validate(Command::Mc), Err(Error::Config(_))));
    }

    #[test]
    fn identify_summary_counts() {
        let c = cfg(r#"{"theta": {"generator": {"variant": "Baseline", "r_bar": 1, "T": 4}}, "seed": 9, "n_replications": 20}"#);
        let reports = run_identify(&c).unwrap();
        let text = identify_summary(&reports);
        assert!(text.starts_with("identified 20/20\n"), "{text}");
        assert!(!text.contains(" no\n"));
    }

    #[test]
    fn simulate_is_deterministic_across_workers() {
        let c = cfg(r#"{"theta": {"generator": {"variant": "Baseline", "r_bar": 1, "T": 4}}, "seed": 5, "n_units": 50, "n_replications": 3}"#);
        let a = par::with_workers(Some(1), || run_simulate(&c)).unwrap();
        let b = par::with_workers(Some(4), || run_simulate(&c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_names_align() {
        for v in Variant::ALL {
            let theta = crate::testutil::random_theta(v, 2, 7, 1);
            assert_eq!(parameter_names(&theta).len(), estimate::natural_parameters(&theta).len(), "{v:?}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Estimation("x".into())), 2);
        assert_eq!(main_with_args(["panel-ident", "identify"]), 1);
        assert_eq!(main_with_args(["panel-ident", "nonsense"]), 1);
    }
}
