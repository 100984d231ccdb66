//! `kornlab`: command-line front end for the korn-lab experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use korn_lab::constants::{self, BlowupVerdict, EstimateOptions, QuotientKind, QuotientProblem};
use korn_lab::divsolve;
use korn_lab::error::LabError;
use korn_lab::fields::{self, ExponentParams, Grid};
use korn_lab::gallery::{self, PlacementTable, RoomsSpec};
use korn_lab::geom::{Point, Rect, RectDomain, Truncation, WhitneyDecomposition};
use korn_lab::io::{self, PlotKind, PlotSource};
use korn_lab::par::{self, Execution};
use korn_lab::qhyp::{self, FitVerdict, QhGraph};
use korn_lab::scaling::{self, HPolicy, Quantity, Verdict};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Parser, Debug)]
#[command(name = "kornlab", version, about = "Weighted Korn and Poincaré experiments on planar domains")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone, Default)]
struct Global {
    /// Seed for randomized searches; recorded in every report.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving the run report.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Expected verdict; a disagreeing verdict exits with status 2.
    #[arg(long, global = true, value_enum)]
    expect: Option<Expect>,
    /// JSON experiment configuration replacing the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Expect {
    Holds,
    Fails,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Whitney decompositions.
    #[command(subcommand)]
    Geom(GeomCmd),
    /// Quasihyperbolic distances and domain classification.
    #[command(subcommand)]
    Qhyp(QhypCmd),
    /// Domain generators.
    #[command(subcommand)]
    Gallery(GalleryCmd),
    /// Field dumps.
    #[command(subcommand)]
    Fields(FieldsCmd),
    /// Exponent predictions and measured slopes.
    #[command(subcommand)]
    Scaling(ScalingCmd),
    /// Weighted divergence solver.
    #[command(subcommand)]
    Divsolve(DivCmd),
    /// Constant estimates and blow-up sequences.
    #[command(subcommand)]
    Constants(ConstantsCmd),
}

#[derive(Subcommand, Debug)]
enum GeomCmd {
    Whitney {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        min_level: i32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum QhypCmd {
    Dist {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, value_parser = parse_point)]
        from: Point,
        #[arg(long, value_parser = parse_point)]
        to: Point,
        #[arg(long, default_value_t = 7)]
        min_level: i32,
    },
    Classify {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        min_level: i32,
        /// Placement sidecar; refines the decomposition near corridors.
        #[arg(long)]
        placement: Option<PathBuf>,
        /// Base point; defaults to the base cube center.
        #[arg(long, value_parser = parse_point)]
        x0: Option<Point>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log-log plot data of the fitted samples.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Qhbc,
    Sjohn,
}

#[derive(Subcommand, Debug)]
enum GalleryCmd {
    Rooms {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 4.0)]
        ratio: f64,
        #[arg(long)]
        rooms: usize,
        #[arg(long)]
        out: PathBuf,
        /// Placement sidecar path; defaults to `<out stem>.placement.json`.
        #[arg(long)]
        placement: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum FieldsCmd {
    EvalExample {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        placement: PathBuf,
        #[arg(long)]
        room: usize,
        #[arg(long, value_parser = parse_number)]
        h: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ScalingCmd {
    Predict {
        #[arg(long)]
        params: PathBuf,
    },
    Measure {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        placement: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        quantity: Quantity,
        #[arg(long, value_parser = parse_range)]
        rooms: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DivCmd {
    /// Solves `div u = (x − x̄)ρ^a` restricted to the retained cubes.
    Run {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_level: i32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ConstantsCmd {
    Estimate {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        a: f64,
        #[arg(long, default_value_t = 0.0)]
        b: f64,
        #[arg(long, value_parser = parse_rect)]
        q_cube: Option<Rect>,
        #[arg(long, value_parser = parse_number)]
        h: f64,
        /// Iterations per search.
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Blowup {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_parser = parse_range)]
        rooms: (usize, usize),
        #[arg(long, value_enum, default_value_t = Kind::Korn)]
        kind: Kind,
        #[arg(long, value_parser = parse_rect)]
        q_cube: Option<Rect>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Poincare,
    Korn,
    KornTilde,
}

fn numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| io::parse_coord(t).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if v.len() == n {
        Ok(v)
    } else {
        Err(format!("expected {n} comma-separated numbers"))
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    io::parse_coord(s).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> Result<Point, String> {
    let v = numbers(s, 2)?;
    Ok(Point::new(v[0], v[1]))
}

fn parse_rect(s: &str) -> Result<Rect, String> {
    let v = numbers(s, 4)?;
    Ok(Rect::new(v[0], v[1], v[2], v[3]))
}

/// `i..j` (inclusive) or a single index.
fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("bad range {s:?}; expected i..j");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a, b))
}

/// Everything a command produces besides the files it writes.
struct Outcome {
    results: Value,
    verdicts: Map<String, Value>,
    /// Whether the command's headline verdict is a failure.
    fails: Option<bool>,
    /// Verdict contradicts its own prediction.
    mismatch: bool,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Outcome {
            results,
            verdicts: Map::new(),
            fails: None,
            mismatch: false,
        }
    }

    fn verdict(mut self, name: &str, v: impl Serialize, fails: bool) -> Self {
        self.verdicts.insert(name.into(), serde_json::to_value(v).unwrap_or(Value::Null));
        self.fails = Some(fails);
        self
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    argv: &'a [String],
    seed: u64,
    /// Wall-clock milliseconds; not part of the deterministic payload.
    timings_ms: Map<String, Value>,
    results: &'a Value,
    verdicts: &'a Map<String, Value>,
}

type CliResult<T> = Result<T, LabError>;

struct Timer(Map<String, Value>);

impl Timer {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.insert(step.into(), json!(t.elapsed().as_secs_f64() * 1e3));
        out
    }
}

fn write_out(path: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_domain(path: &Path) -> CliResult<RectDomain> {
    io::read_domain(path)
}

fn read_pair(domain: &Path, placement: &Path) -> CliResult<(RectDomain, PlacementTable)> {
    Ok((read_domain(domain)?, io::read_json(placement)?))
}

fn quotient_kind(kind: Kind, cube: Option<Rect>) -> CliResult<QuotientKind> {
    Ok(match kind {
        Kind::Poincare => QuotientKind::Poincare,
        Kind::Korn => QuotientKind::Korn,
        Kind::KornTilde => QuotientKind::KornTilde {
            cube: cube.ok_or_else(|| LabError::InvalidParameter("korn-tilde needs --q-cube".into()))?,
        },
    })
}

fn fit_fails(v: FitVerdict) -> bool {
    v == FitVerdict::Fails
}

fn run(cmd: &Command, global: &Global, timer: &mut Timer) -> CliResult<Outcome> {
    let seed = global.seed.unwrap_or(0);
    let exec = Execution::default();
    match cmd {
        Command::Geom(GeomCmd::Whitney { domain, min_level, out }) => {
            let d = read_domain(domain)?;
            let w = timer.time("decompose", || WhitneyDecomposition::new(&d, *min_level))?;
            write_out(out, &io::cubes_csv(&w)?)?;
            let levels: Vec<i32> = w.cubes().iter().map(|c| c.level).collect();
            Ok(Outcome::new(json!({
                "cubes": w.len(),
                "min_level": min_level,
                "coarsest": levels.iter().min(),
                "finest": levels.iter().max(),
            })))
        }
        Command::Qhyp(QhypCmd::Dist { domain, from, to, min_level }) => {
            let d = read_domain(domain)?;
            let k = timer.time("distance", || qhyp::qh_distance(&d, *from, *to, *min_level))?;
            let out = Outcome::new(serde_json::to_value(k)?);
            println!("{}", io::to_json(&k)?.trim_end());
            Ok(out)
        }
        Command::Qhyp(QhypCmd::Classify { domain, mode, samples, min_level, placement, x0, out, plot }) => {
            let d = read_domain(domain)?;
            let trunc = match placement {
                Some(p) => gallery::rooms_truncation(&io::read_json(p)?, *min_level),
                None => Truncation::uniform(*min_level),
            };
            let w = timer.time("decompose", || WhitneyDecomposition::build(&d, &trunc, *x0))?;
            let g = timer.time("graph", || QhGraph::with_execution(&d, &w, exec));
            let (value, fit) = match mode {
                Mode::Qhbc => {
                    let e = timer.time("classify", || qhyp::check_qhbc_graph(&g, *samples))?;
                    (serde_json::to_value(&e)?, e.fit)
                }
                Mode::Sjohn => {
                    let e = timer.time("classify", || qhyp::check_sjohn_graph(&g, *samples))?;
                    (serde_json::to_value(&e)?, e.fit)
                }
            };
            write_out(out, &io::to_json(&value)?)?;
            if let Some(p) = plot {
                io::write_text(p, &io::emit_plot_data(PlotSource::Fit(&fit), PlotKind::Loglog)?)?;
            }
            Ok(Outcome::new(value).verdict("fit", fit.verdict, fit_fails(fit.verdict)))
        }
        Command::Gallery(GalleryCmd::Rooms { sigma, tau, ratio, rooms, out, placement }) => {
            let spec = RoomsSpec::geometric(*sigma, *tau, *ratio, *rooms);
            let (d, table) = timer.time("build", || gallery::rooms_and_corridors(&spec))?;
            io::write_text(out, &io::domain_to_json(&d)?)?;
            let side = placement.clone().unwrap_or_else(|| out.with_extension("placement.json"));
            io::write_text(&side, &io::to_json(&table)?)?;
            Ok(Outcome::new(json!({
                "domain": d.name(),
                "rects": d.rects().len(),
                "placement": side.display().to_string(),
                "rescaled": table.rescaled,
            })))
        }
        Command::Fields(FieldsCmd::EvalExample { domain, placement, room, h, out }) => {
            let (d, table) = read_pair(domain, placement)?;
            let g = Grid::uniform(&d, *h)?;
            let u = timer.time("sample", || fields::example_field(&table, *room, &g))?;
            write_out(out, &io::vector_field_csv(&g, &u)?)?;
            Ok(Outcome::new(json!({ "cells": g.len(), "room": room, "h": h })))
        }
        Command::Scaling(ScalingCmd::Predict { params }) => {
            let p: ExponentParams = io::read_json(params)?;
            p.validate()?;
            let e = scaling::predicted_exponents(&p);
            println!("{}", io::to_json(&e)?.trim_end());
            let sj = scaling::korn_verdict_sjohn(&p);
            let qb = scaling::korn_verdict_qhbc(&p);
            let mut o = Outcome::new(serde_json::to_value(e)?);
            o.verdicts.insert("korn_verdict_sjohn".into(), serde_json::to_value(sj)?);
            o.verdicts.insert("korn_verdict_qhbc".into(), serde_json::to_value(qb)?);
            o.verdicts.insert("poincare_verdict_sjohn".into(), serde_json::to_value(scaling::poincare_verdict_sjohn(&p))?);
            if let Ok(v) = scaling::poincare_verdict_qhbc(&p) {
                o.verdicts.insert("poincare_verdict_qhbc".into(), serde_json::to_value(v)?);
            }
            let example = scaling::korn_failure_predicted(&p);
            o.verdicts.insert("korn_failure_predicted".into(), json!(example));
            o.fails = Some(example || sj == Verdict::Fails || qb == Verdict::Fails);
            Ok(o)
        }
        Command::Scaling(ScalingCmd::Measure { domain, placement, params, quantity, rooms, out, plot }) => {
            let (d, table) = read_pair(domain, placement)?;
            let p: ExponentParams = io::read_json(params)?;
            let (lo, hi) = rooms.unwrap_or((1, table.rooms.len()));
            let r = timer.time("measure", || {
                scaling::measure_scaling_with(&d, &table, &p, *quantity, &HPolicy::default(), lo..=hi, exec)
            })?;
            write_out(out, &io::to_json(&r)?)?;
            if let Some(path) = plot {
                io::write_text(path, &io::emit_plot_data(PlotSource::Scaling(&r), PlotKind::Loglog)?)?;
            }
            Ok(Outcome::new(serde_json::to_value(&r)?).verdict("slope", r.verdict, fit_fails(r.verdict)))
        }
        Command::Divsolve(DivCmd::Run { domain, params, min_level, out }) => {
            let d = read_domain(domain)?;
            let p: ExponentParams = io::read_json(params)?;
            let w = timer.time("decompose", || WhitneyDecomposition::new(&d, *min_level))?;
            let chains = timer.time("chains", || qhyp::geodesic_chains(&d, &w, w.base_center()))?;
            let g = divsolve::solver_grid(&d, &w)?;
            let f = divsolve::truncate_datum(&g, &w, &g.sample(|x| x.x), p.a)?;
            let (datum, sol) = timer.time("solve", || divsolve::solve(&g, &f, &w, &chains, &p, exec))?;
            let value = json!({
                "summary": sol.summary,
                "leak_fraction": datum.leak_fraction,
                "pieces": datum.pieces.len(),
                "transfers": datum.transfers.len(),
            });
            write_out(out, &io::to_json(&value)?)?;
            let ok = sol.summary.worst_weak <= divsolve::WEAK_TOLERANCE;
            Ok(Outcome::new(value).verdict("weak_form", if ok { "holds" } else { "fails" }, !ok))
        }
        Command::Constants(ConstantsCmd::Estimate { domain, kind, p, a, b, q_cube, h, budget, out }) => {
            let d = read_domain(domain)?;
            let problem = QuotientProblem {
                kind: quotient_kind(*kind, *q_cube)?,
                params: ExponentParams { p: *p, a: *a, b: *b, ..Default::default() },
            };
            problem.validate(&d)?;
            let g = Grid::uniform(&d, *h)?;
            let opts = EstimateOptions { iterations: *budget, seed, ..Default::default() };
            let e = timer.time("estimate", || constants::estimate_constant(&g, &problem, &opts, &[], exec))?;
            write_out(out, &io::to_json(&e)?)?;
            Ok(Outcome::new(serde_json::to_value(&e)?))
        }
        Command::Constants(ConstantsCmd::Blowup { spec, params, rooms, kind, q_cube, out, plot }) => {
            let s: RoomsSpec = io::read_json(spec)?;
            let p: ExponentParams = io::read_json(params)?;
            let k = quotient_kind(*kind, *q_cube)?;
            let r = timer.time("blowup", || {
                constants::blowup_experiment(&s, &p, &k, rooms.0..=rooms.1, &HPolicy::default())
            })?;
            write_out(out, &io::blowup_csv(&r)?)?;
            if let Some(path) = plot {
                io::write_text(path, &io::emit_plot_data(PlotSource::Blowup(&r), PlotKind::Sequence)?)?;
            }
            let mut o = Outcome::new(serde_json::to_value(&r)?).verdict("blowup", r.verdict, r.verdict == BlowupVerdict::Fails);
            o.mismatch = r.verdict == BlowupVerdict::Mismatch;
            Ok(o)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    /// Subcommand path, e.g. `["scaling", "predict"]`.
    command: Vec<String>,
    #[serde(default)]
    options: Map<String, Value>,
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
    expect: Option<Expect>,
}

/// Command line equivalent to a configuration file.
fn config_argv(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))?;
    let mut argv = vec!["kornlab".to_string()];
    argv.extend(cfg.command.iter().cloned());
    let flag = |k: &str| format!("--{}", k.replace('_', "-"));
    for (k, v) in &cfg.options {
        match v {
            Value::Bool(true) => argv.push(flag(k)),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => argv.extend([flag(k), s.clone()]),
            Value::Number(n) => argv.extend([flag(k), n.to_string()]),
            _ => return Err(LabError::Parse(format!("options.{k}: expected a string, number or boolean"))),
        }
    }
    if let Some(s) = cfg.seed {
        argv.extend(["--seed".into(), s.to_string()]);
    }
    if let Some(t) = cfg.threads {
        argv.extend(["--threads".into(), t.to_string()]);
    }
    if let Some(d) = &cfg.out_dir {
        argv.extend(["--out-dir".into(), d.display().to_string()]);
    }
    if let Some(e) = cfg.expect {
        let e = if e == Expect::Holds { "holds" } else { "fails" };
        argv.extend(["--expect".into(), e.into()]);
    }
    Ok(argv)
}

fn parse(argv: &[String]) -> Result<Cli, ExitCode> {
    Cli::try_parse_from(argv).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        }
    })
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Geom(GeomCmd::Whitney { .. }) => "geom whitney",
        Command::Qhyp(QhypCmd::Dist { .. }) => "qhyp dist",
        Command::Qhyp(QhypCmd::Classify { .. }) => "qhyp classify",
        Command::Gallery(GalleryCmd::Rooms { .. }) => "gallery rooms",
        Command::Fields(FieldsCmd::EvalExample { .. }) => "fields eval-example",
        Command::Scaling(ScalingCmd::Predict { .. }) => "scaling predict",
        Command::Scaling(ScalingCmd::Measure { .. }) => "scaling measure",
        Command::Divsolve(DivCmd::Run { .. }) => "divsolve run",
        Command::Constants(ConstantsCmd::Estimate { .. }) => "constants estimate",
        Command::Constants(ConstantsCmd::Blowup { .. }) => "constants blowup",
    }
}

fn main() -> ExitCode {
    let mut argv: Vec<String> = std::env::args().collect();
    let mut cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(path) = cli.global.config.clone() {
        argv = match config_argv(&path) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        };
        cli = match parse(&argv) {
            Ok(c) => c,
            Err(code) => return code,
        };
    }
    let Some(cmd) = &cli.command else {
        eprintln!("error: no command given; see --help");
        return ExitCode::from(1);
    };
    if let Some(t) = cli.global.threads {
        par::set_threads(t);
    }
    let name = command_name(cmd);
    let mut timer = Timer(Map::new());
    let t = Instant::now();
    let outcome = match run(cmd, &cli.global, &mut timer) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    timer.0.insert("total".into(), json!(t.elapsed().as_secs_f64() * 1e3));
    if let Some(dir) = &cli.global.out_dir {
        let report = RunReport {
            tool: "kornlab",
            version: env!("CARGO_PKG_VERSION"),
            command: name,
            argv: &argv[1..],
            seed: cli.global.seed.unwrap_or(0),
            timings_ms: timer.0,
            results: &outcome.results,
            verdicts: &outcome.verdicts,
        };
        let path = dir.join(format!("{}.report.json", name.replace(' ', "-")));
        if let Err(e) = io::to_json(&report).and_then(|t| io::write_text(&path, &t)) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if let Some(expect) = cli.global.expect {
        let agrees = match outcome.fails {
            Some(f) => !outcome.mismatch && f == (expect == Expect::Fails),
            None => true,
        };
        if !agrees {
            eprintln!("verdict disagrees with --expect {expect:?}");
            return ExitCode::from(2);
        }
    }
    ExitCode::SUCCESS
}
