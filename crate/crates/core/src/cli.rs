//! Command-line front end.
//!
//! Every flag except `--config` and `--dump-config` has a same-named key
//! (with `_` for `-`) in the JSON config file; flags given on the command
//! line override the file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytics::ScalarScenario;
use crate::error::{Error, Result};
use crate::error_models::{DistSpec, ScalarKernel, TransformSpec};
use crate::lab::{self, Estimand, EstimateResult, ExperimentConfig, GridSpec, LemmaParams, MapCell};
use crate::linalg::Mat;
use crate::pipeline::{combine, transform_stage, CombineOutput, Construction, DataBatch, ErrorBatch};
use crate::rng::RngStream;

pub const DEFAULT_SEED: u64 = 0;
const PIPELINE_TAG: u64 = 10;

#[derive(Debug, Parser)]
#[command(name = "mcprop", version, about = "Monte Carlo uncertainty propagation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Transform + Combine on measured data (`--data`).
    Pipeline(Settings),
    /// Relative bias of a construction's replicate variance over a Q sweep.
    BiasSweep(Settings),
    /// Psi on an (a, b) grid of uniform data laws.
    PsiMap(Settings),
    /// Current-construction relative bias on an (a, b) grid.
    RelbiasMap(Settings),
    /// Relative difference of the variances of the replicate sample
    /// variances, per Q.
    Vardiff(Settings),
    /// Empirical checks of the covariance lemmas.
    Lemmas(Settings),
    /// Variance gap of the replicate means between the constructions, per Q.
    MeanVar(Settings),
}

impl Command {
    fn settings(&self) -> &Settings {
        match self {
            Command::Pipeline(s)
            | Command::BiasSweep(s)
            | Command::PsiMap(s)
            | Command::RelbiasMap(s)
            | Command::Vardiff(s)
            | Command::Lemmas(s)
            | Command::MeanVar(s) => s,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print the effective settings as JSON and exit.
    #[arg(long)]
    #[serde(skip)]
    pub dump_config: bool,

    /// Error model: additive, multiplicative, phase or exponential.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Data law: `normal:MEAN,VAR`, `uniform:LO,HI` or `two-point:A,B,P`
    /// (P = probability of A). Default `normal:0,1`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    /// Error law, same syntax as `--y`. Default `normal:0,1`. Applied to
    /// every component for K > 1 data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<String>,
    /// Number of data vectors J.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    /// Replicate counts: `N`, a list `3,10,30`, a linear range `LO:HI:N`
    /// or a log-spaced range `LO:HI:logN` (rounded, duplicates dropped).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    /// Independent trials per estimate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// current or alternative.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction: Option<String>,
    /// Master seed (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// csv or json; inferred from the `--out` extension when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Error half-widths for the maps, comma separated. Default 0.95.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    /// Map axis `LO:HI:N` used for both a and b. Default `0:8:161`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Data CSV with header `y_1,...,y_K`, one vector per line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Nominal error values, comma separated (default: the error law mean).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<String>,
    /// Blocks for block-based standard errors.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    /// Lemma ids to check, comma separated. Default `1,2,3,4,5`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
    /// Common variance for the sample-variance lemma.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Sample variance of the fixed means for the sample-variance lemma.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u2: Option<f64>,
    /// Sample size for the sample-variance lemma.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Settings {
            config: None,
            dump_config: $flags.dump_config,
            $($f: $flags.$f.clone().or($file.$f),)*
        }
    };
}

impl Settings {
    /// Flags layered over the config file, if any.
    pub fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str::<Settings>(&text)
                    .map_err(|e| Error::config(format!("bad config {}: {e}", p.display())))?
            }
            None => Settings::default(),
        };
        Ok(overlay!(
            self, file, model, y, s, j, q, trials, construction, seed, out, format, threads, alpha, grid, data, nu,
            blocks, lemma, sigma2, u2, n
        ))
    }

    fn model(&self, default: Option<&str>) -> Result<ScalarKernel> {
        match self.model.as_deref().or(default) {
            Some(m) => m.parse(),
            None => Err(Error::config("missing --model")),
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn construction(&self, default: Construction) -> Result<Construction> {
        self.construction.as_deref().map_or(Ok(default), str::parse)
    }

    fn scenario(&self, default_model: Option<&str>, j: usize) -> Result<ScalarScenario> {
        Ok(ScalarScenario::new(
            self.model(default_model)?,
            parse_dist(self.y.as_deref().unwrap_or("normal:0,1"), 1)?,
            parse_dist(self.s.as_deref().unwrap_or("normal:0,1"), 1)?,
            self.j.unwrap_or(j),
            1,
        ))
    }

    fn qs(&self, default: &str) -> Result<Vec<usize>> {
        parse_q_range(self.q.as_deref().unwrap_or(default))
    }

    fn format(&self) -> Result<Format> {
        match self.format.as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("json") => Ok(Format::Json),
            Some(other) => Err(Error::config(format!("unknown format `{other}` (csv or json)"))),
            None => Ok(match self.out.as_ref().and_then(|p| p.extension()) {
                Some(e) if e == "json" => Format::Json,
                _ => Format::Csv,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::config(format!("`{s}` is not a number")))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

/// `normal:MEAN,VAR`, `uniform:LO,HI`, `two-point:A,B,P`, broadcast to `k`
/// independent identically distributed components.
pub fn parse_dist(s: &str, k: usize) -> Result<DistSpec> {
    let (kind, args) = s
        .split_once(':')
        .ok_or_else(|| Error::config(format!("distribution `{s}` needs KIND:ARGS")))?;
    let v = parse_list(args)?;
    let want = |n: usize| {
        if v.len() == n {
            Ok(())
        } else {
            Err(Error::config(format!("`{kind}` takes {n} parameters, got {}", v.len())))
        }
    };
    let d = match kind {
        "normal" => {
            want(2)?;
            DistSpec::Normal {
                mean: vec![v[0]; k],
                cov: Mat::diag(&vec![v[1]; k]),
            }
        }
        "uniform" => {
            want(2)?;
            DistSpec::Uniform {
                lo: vec![v[0]; k],
                hi: vec![v[1]; k],
            }
        }
        "two-point" | "two_point" => {
            want(3)?;
            DistSpec::TwoPoint {
                a: vec![v[0]; k],
                b: vec![v[1]; k],
                p: v[2],
            }
        }
        other => return Err(Error::config(format!("unknown distribution `{other}`"))),
    };
    d.validate().map_err(|e| Error::config(e.to_string()))?;
    Ok(d)
}

/// `N`, `A,B,C`, `LO:HI:N` or `LO:HI:logN` as real points.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [single] => parse_list(single),
        [lo, hi, n] => {
            let (lo, hi) = (parse_f64(lo)?, parse_f64(hi)?);
            let (log, n) = match n.strip_prefix("log") {
                Some(rest) => (true, rest),
                None => (false, *n),
            };
            let n: usize = n
                .parse()
                .map_err(|_| Error::config(format!("bad point count in range `{s}`")))?;
            if n == 0 || hi < lo || (log && !(lo > 0.0)) {
                return Err(Error::config(format!("invalid range `{s}`")));
            }
            if n == 1 {
                return Ok(vec![lo]);
            }
            Ok((0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    if i + 1 == n {
                        hi
                    } else if log {
                        (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                    } else {
                        lo + t * (hi - lo)
                    }
                })
                .collect())
        }
        _ => Err(Error::config(format!("invalid range `{s}`"))),
    }
}

/// Integer replicate counts from [`parse_range`], rounded, deduplicated.
pub fn parse_q_range(s: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    for x in parse_range(s)? {
        let q = x.round();
        if !(q >= 1.0) || q > u32::MAX as f64 {
            return Err(Error::config(format!("replicate count {x} out of range")));
        }
        if out.last() != Some(&(q as usize)) {
            out.push(q as usize);
        }
    }
    Ok(out)
}

/// Data CSV with header `y_1,...,y_K`.
pub fn read_data(path: &Path) -> Result<Mat> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| Error::config(e.to_string()))?.clone();
    let k = header.len();
    for (i, h) in header.iter().enumerate() {
        if h.trim() != format!("y_{}", i + 1) {
            return Err(Error::config(format!("data header must be y_1,...,y_K; found `{h}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::config(e.to_string()))?;
        if rec.len() != k {
            return Err(Error::config("ragged data row"));
        }
        rows.push(rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?);
    }
    Mat::from_rows(&rows).map_err(|e| Error::config(e.to_string()))
}

struct Artifact {
    bytes: Vec<u8>,
    summary: String,
}

fn results_artifact(results: &[EstimateResult], fmt: Format, summary: String) -> Result<Artifact> {
    let bytes = match fmt {
        Format::Csv => {
            let mut buf = Vec::new();
            lab::write_results_csv(results, &mut buf)?;
            buf
        }
        Format::Json => json_bytes(&results)?,
    };
    Ok(Artifact { bytes, summary })
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    b.push(b'\n');
    Ok(b)
}

fn last_summary(cmd: &str, results: &[EstimateResult]) -> String {
    match results.last() {
        Some(r) => {
            let at: Vec<String> = r.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!(
                "{cmd}: {} point(s); last {} [{}] = {} ± {}",
                results.len(),
                r.label,
                at.join(" "),
                lab::format_float(r.point),
                lab::format_float(r.std_error)
            )
        }
        None => format!("{cmd}: no results"),
    }
}

fn experiment(s: &Settings, scenario: ScalarScenario, estimand: Estimand, trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(scenario, estimand, s.trials.unwrap_or(trials), s.seed());
    if let Some(b) = s.blocks {
        cfg.blocks = b;
    }
    cfg
}

fn per_q(
    s: &Settings,
    estimand: Estimand,
    trials: usize,
    default_q: &str,
    f: fn(&ExperimentConfig) -> Result<EstimateResult>,
) -> Result<Vec<EstimateResult>> {
    let base = experiment(s, s.scenario(None, 4)?, estimand, trials);
    s.qs(default_q)?
        .into_iter()
        .map(|q| {
            let mut c = base.clone();
            c.scenario.q = q;
            f(&c)
        })
        .collect()
}

fn run_pipeline(s: &Settings, fmt: Format) -> Result<Artifact> {
    let path = s.data.as_ref().ok_or_else(|| Error::config("pipeline needs --data"))?;
    let data = DataBatch::new(read_data(path)?).map_err(|e| Error::config(e.to_string()))?;
    let k = data.k();
    let spec = TransformSpec::new(s.model(None)?);
    let s_dist = parse_dist(s.s.as_deref().unwrap_or("normal:0,1"), k)?;
    let nu = match &s.nu {
        Some(v) => parse_list(v)?,
        None => s_dist.mean(),
    };
    if nu.len() != k {
        return Err(Error::config(format!("--nu has {} values, data have K = {k}", nu.len())));
    }
    let qs = s.qs("1000")?;
    let [q] = qs.as_slice() else {
        return Err(Error::config("pipeline takes a single --q"));
    };
    let construction = s.construction(Construction::Current)?;
    let seed = s.seed();
    let errors = s_dist.prepare()?.sample(*q, &mut RngStream::at_path(seed, vec![PIPELINE_TAG, 0]));
    let t = transform_stage(&data, &ErrorBatch::shared(errors)?, &spec, &nu)?;
    let out = combine(&t, construction, &mut RngStream::at_path(seed, vec![PIPELINE_TAG, 1]))?;
    let bytes = match fmt {
        Format::Json => json_bytes(&out)?,
        Format::Csv => combine_csv(&out)?,
    };
    let nominal: Vec<String> = out.nominal.iter().map(|v| lab::format_float(*v)).collect();
    Ok(Artifact {
        bytes,
        summary: format!(
            "pipeline: J={} K={k} Q={q} construction={construction:?}; nominal=[{}]",
            t.j(),
            nominal.join(", ")
        ),
    })
}

fn combine_csv(out: &CombineOutput) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let k = out.replicates.cols();
        w.write_record((1..=k).map(|i| format!("m_{i}")))
            .map_err(|e| Error::Io(e.to_string()))?;
        for r in out.replicates.row_iter() {
            w.write_record(r.iter().map(|v| lab::format_float(*v)))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn run_map_command(s: &Settings, fmt: Format, estimand: Estimand) -> Result<Artifact> {
    let scenario = ScalarScenario::new(
        s.model(Some("exponential"))?,
        DistSpec::uniform_scalar(0.0, 1.0),
        DistSpec::uniform_scalar(0.0, 1.0),
        s.j.unwrap_or(2),
        1,
    );
    let axis = parse_range(s.grid.as_deref().unwrap_or("0:8:161"))?;
    let (lo, hi) = (axis[0], *axis.last().expect("non-empty"));
    let alphas = parse_list(s.alpha.as_deref().unwrap_or("0.95"))?;
    let cfg = experiment(s, scenario, estimand, 0).with_grid(GridSpec::square(lo, hi, axis.len(), alphas));
    let cells: Vec<MapCell> = lab::run_map(&cfg)?;
    let name = if estimand == Estimand::PsiMap { "psi" } else { "relbias_current" };
    let bytes = match fmt {
        Format::Csv => {
            let mut buf = Vec::new();
            lab::write_map_csv(&cells, name, &mut buf)?;
            buf
        }
        Format::Json => json_bytes(&cells)?,
    };
    let (min, max) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.value), b.max(c.value)));
    Ok(Artifact {
        bytes,
        summary: format!(
            "{}: {} cells ({} alpha x {} points per axis, a < b); {name} in [{}, {}]",
            if estimand == Estimand::PsiMap { "psi-map" } else { "relbias-map" },
            cells.len(),
            cfg.grid.as_ref().map_or(0, |g| g.alphas.len()),
            axis.len(),
            lab::format_float(min),
            lab::format_float(max)
        ),
    })
}

fn run_lemmas(s: &Settings, fmt: Format) -> Result<Artifact> {
    let ids: Vec<u8> = parse_list(s.lemma.as_deref().unwrap_or("1,2,3,4,5"))?
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && (1.0..=5.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::config(format!("unknown lemma id {v} (expected 1..5)")))
            }
        })
        .collect::<Result<_>>()?;
    let mut cfg = experiment(
        s,
        s.scenario(Some("multiplicative"), 4)?,
        Estimand::LemmaCheck(1),
        lab::DEFAULT_VARDIFF_TRIALS,
    );
    let d = LemmaParams::default();
    cfg.lemma = Some(LemmaParams {
        sigma2: s.sigma2.unwrap_or(d.sigma2),
        u2: s.u2.unwrap_or(d.u2),
        n: s.n.unwrap_or(d.n),
    });
    cfg.scenario.q = 2;
    let results = ids
        .iter()
        .map(|&id| {
            let mut c = cfg.clone();
            c.estimand = Estimand::LemmaCheck(id);
            c.validate()?;
            lab::verify_lemma(id, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = results
        .iter()
        .filter_map(|r| r.z_score)
        .fold(0.0_f64, |m, z| m.max(z.abs()));
    let summary = format!("lemmas: {} checked; max |z| = {:.3}", results.len(), worst);
    results_artifact(&results, fmt, summary)
}

fn execute(cmd: &Command, s: &Settings) -> Result<Artifact> {
    let fmt = s.format()?;
    match cmd {
        Command::Pipeline(_) => run_pipeline(s, fmt),
        Command::BiasSweep(_) => {
            let estimand = match s.construction(Construction::Alternative)? {
                Construction::Current => Estimand::CombineBiasCurrent,
                Construction::Alternative => Estimand::CombineBiasAlternative,
            };
            let r = per_q(s, estimand, lab::DEFAULT_BIAS_TRIALS, "3:300:log25", lab::estimate_combine_bias)?;
            results_artifact(&r, fmt, last_summary("bias-sweep", &r))
        }
        Command::Vardiff(_) => {
            let r = per_q(s, Estimand::VardiffReldiff, lab::DEFAULT_VARDIFF_TRIALS, "5,50,500", lab::estimate_vardiff)?;
            results_artifact(&r, fmt, last_summary("vardiff", &r))
        }
        Command::MeanVar(_) => {
            let r = per_q(s, Estimand::MeanVariance, lab::DEFAULT_VARDIFF_TRIALS, "10", lab::estimate_mean_variance)?;
            results_artifact(&r, fmt, last_summary("mean-var", &r))
        }
        Command::PsiMap(_) => run_map_command(s, fmt, Estimand::PsiMap),
        Command::RelbiasMap(_) => run_map_command(s, fmt, Estimand::RelbiasMap),
        Command::Lemmas(_) => run_lemmas(s, fmt),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::config("--threads must be at least 1")),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::config(e.to_string())),
        _ => Ok(f()),
    }
}

/// Parse `args` (including the program name), run, and return the exit
/// status: 0 success, 1 bad input or I/O, 2 numerical failure.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 1;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let settings = cli.command.settings().resolve()?;
    if settings.dump_config {
        stdout.write_all(&json_bytes(&settings)?)?;
        return Ok(());
    }
    let art = with_threads(settings.threads, || execute(&cli.command, &settings))??;
    match &settings.out {
        Some(p) => {
            std::fs::write(p, &art.bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            writeln!(stdout, "{}", art.summary)?;
        }
        None => stdout.write_all(&art.bytes)?,
    }
    Ok(())
}
