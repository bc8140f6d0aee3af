use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use overpoll::branching::to_rows;
use overpoll::fluid::{total_slopes, write_trajectory_csv, FluidSkeleton};
use overpoll::model::NetworkSpec;
use overpoll::optimizer::{candidate_set, exhaustive_search, genetic_search, GaParams, OptimizationResult};
use overpoll::simulator::{estimate_xi, run, scaled, SimConfig, SimError, DEFAULT_EVENT_CAP};
use overpoll::{analyze as analyze_spec, Analysis, AnalysisSummary};

use crate::input::{parse_n_list, parse_window, read_document, Document};
use crate::output::{ensure_dir, write_atomic, write_json, write_manifest, RunManifest};
use crate::{AnalyzeArgs, CliError, FluidArgs, Mode, OptimizeArgs, SimArgs};

const DEFAULT_WINDOW: &str = "0.5:5:0.01";

/// Reads the document and refuses anything that is invalid or not
/// overloaded before any numerics run.
fn load(path: &Path) -> Result<(Document, Vec<String>), CliError> {
    let doc = read_document(path)?;
    let report = doc.spec.validate();
    if let Some(e) = report.first_error {
        return Err(e.into());
    }
    Ok((doc, report.warnings))
}

fn manifest(command: &str, spec: &Path, out: &Path, seed: Option<u64>, reps: Option<u64>, args: serde_json::Value, start: Instant) -> Result<(), CliError> {
    write_manifest(&RunManifest {
        command: command.to_string(),
        spec_path: spec.to_path_buf(),
        seed,
        replications: reps,
        out_dir: out.to_path_buf(),
        tool_version: env!("CARGO_PKG_VERSION"),
        args,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct AnalyzeReport<'a> {
    spec: &'a NetworkSpec,
    warnings: &'a [String],
    #[serde(flatten)]
    summary: AnalysisSummary<'a>,
    /// Per-visit matrices `M_1, ..., M_N`.
    m_k: Vec<Vec<Vec<f64>>>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (doc, warnings) = load(&args.spec)?;
    let an = analyze_spec(&doc.spec)?;
    let report = AnalyzeReport {
        spec: &doc.spec,
        warnings: &warnings,
        summary: an.summary(),
        m_k: an.matrices.per_visit.iter().map(to_rows).collect(),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_atomic(&out.join("analysis.json"), |w| writeln!(w, "{text}"))?;
        manifest("analyze", &args.spec, out, None, None, json!({}), start)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FluidReport<'a> {
    #[serde(flatten)]
    skeleton: &'a FluidSkeleton,
    beta: f64,
    /// Growth rate of the total population on each segment.
    slopes: Vec<f64>,
    xi: f64,
}

pub fn fluid(args: &FluidArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (doc, _) = load(&args.spec)?;
    let grid = parse_window(&args.window)?;
    let an = analyze_spec(&doc.spec)?;
    let rows = an
        .skeleton
        .sample_trajectory(args.xi, &grid)
        .map_err(|e| CliError::from(overpoll::Error::Fluid(e)))?;
    ensure_dir(&args.out)?;
    write_json(
        &args.out.join("skeleton.json"),
        &FluidReport {
            skeleton: &an.skeleton,
            beta: an.beta,
            slopes: total_slopes(&doc.spec),
            xi: args.xi,
        },
    )?;
    write_atomic(&args.out.join("trajectory.csv"), |w| write_trajectory_csv(w, &rows))?;
    let flags = json!({ "window": args.window, "xi": args.xi });
    manifest("fluid", &args.spec, &args.out, None, None, flags, start)
}

/// Effective simulation settings after merging flags, the document's `sim`
/// section and defaults.
#[derive(Debug, Clone, Serialize)]
struct SimSettings {
    seed: u64,
    seeds: u64,
    n: Vec<i32>,
    window: String,
    event_cap: u64,
    #[serde(skip)]
    grid: Vec<f64>,
}

fn sim_settings(args: &SimArgs, doc: &Document, default_n: &[i32], default_seeds: u64) -> Result<SimSettings, CliError> {
    let n = match &args.n {
        Some(s) => parse_n_list(s)?,
        None => doc.sim.n.clone().unwrap_or_else(|| default_n.to_vec()),
    };
    if n.is_empty() {
        return Err(CliError::Usage("empty n list".into()));
    }
    let window = args
        .window
        .clone()
        .or_else(|| doc.sim.window.clone())
        .unwrap_or_else(|| DEFAULT_WINDOW.to_string());
    let grid = parse_window(&window)?;
    if grid.iter().all(|&t| t <= 0.0) {
        return Err(CliError::Usage(format!("empty grid: window {window:?} has no positive time")));
    }
    let seeds = args.seeds.or(doc.sim.seeds).unwrap_or(default_seeds);
    if seeds == 0 {
        return Err(CliError::Usage("seeds must be at least 1".into()));
    }
    Ok(SimSettings {
        seed: args.seed.or(doc.sim.seed).unwrap_or(0),
        seeds,
        n,
        window,
        event_cap: args.event_cap.or(doc.sim.event_cap).unwrap_or(DEFAULT_EVENT_CAP),
        grid,
    })
}

#[derive(Debug, Clone, Serialize)]
struct RunRecord {
    n: i32,
    replication: u64,
    ok: bool,
    error: Option<String>,
    xi: Option<f64>,
    fit_error: Option<f64>,
    /// Why no phase was fitted on a successful run.
    fit_note: Option<String>,
    events: Option<u64>,
    cycles: Option<usize>,
    csv: Option<String>,
}

/// One replication at one scale. With `csv_dir` the scaled path is written
/// as `trace_n{n}_r{rep}.csv`.
fn one_run(spec: &NetworkSpec, an: &Analysis, s: &SimSettings, n: i32, rep: u64, csv_dir: Option<&Path>) -> Result<RunRecord, CliError> {
    let theta = an.eigen.theta;
    let mut rec = RunRecord {
        n,
        replication: rep,
        ok: false,
        error: None,
        xi: None,
        fit_error: None,
        fit_note: None,
        events: None,
        cycles: None,
        csv: None,
    };
    let mut cfg = SimConfig::scaled(s.seed, rep, theta, n, &s.grid);
    cfg.event_cap = s.event_cap;
    let trace = match run(spec, &cfg) {
        Ok(t) => t,
        Err(e @ (SimError::HorizonTooLarge(_) | SimError::InsufficientHorizon { .. } | SimError::OffGrid(_))) => {
            rec.error = Some(e.to_string());
            return Ok(rec);
        }
        Err(e) => return Err(e.into()),
    };
    rec.ok = true;
    rec.events = Some(trace.event_count);
    rec.cycles = Some(trace.cycle_instants.len());
    let sc = scaled(&trace, theta, n, &s.grid)?;
    match estimate_xi(&sc, &an.skeleton) {
        Ok(fit) => {
            rec.xi = Some(fit.xi);
            rec.fit_error = Some(fit.error);
        }
        Err(e) => rec.fit_note = Some(e.to_string()),
    }
    if let Some(dir) = csv_dir {
        let name = format!("trace_n{n}_r{rep}.csv");
        let rows: Vec<(f64, &Vec<f64>)> = sc.grid.iter().copied().zip(&sc.values).collect();
        write_atomic(&dir.join(&name), |w| write_trajectory_csv(w, &rows))?;
        rec.csv = Some(name);
    }
    Ok(rec)
}

/// Order-preserving map over a thread pool sized to the machine. Every job
/// carries its own seed stream, so the result does not depend on scheduling.
fn par_map<J: Sync, R: Send>(jobs: &[J], f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut done: Vec<(usize, R)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if k >= jobs.len() {
                            return mine;
                        }
                        mine.push((k, f(&jobs[k])));
                    }
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("worker panicked")).collect()
    });
    done.sort_by_key(|(k, _)| *k);
    done.into_iter().map(|(_, r)| r).collect()
}

fn run_all(spec: &NetworkSpec, an: &Analysis, s: &SimSettings, csv_dir: Option<&Path>) -> Result<Vec<RunRecord>, CliError> {
    let jobs: Vec<(i32, u64)> = s.n.iter().flat_map(|&n| (0..s.seeds).map(move |r| (n, r))).collect();
    par_map(&jobs, |&(n, r)| one_run(spec, an, s, n, r, csv_dir)).into_iter().collect()
}

fn all_failed(records: &[RunRecord]) -> Option<CliError> {
    if records.iter().any(|r| r.ok) {
        return None;
    }
    let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
    Some(CliError::Numeric(format!("every run failed; first error: {first}")))
}

pub fn simulate(args: &SimArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (doc, _) = load(&args.spec)?;
    let s = sim_settings(args, &doc, &[1, 5, 8], 3)?;
    let an = analyze_spec(&doc.spec)?;
    ensure_dir(&args.out)?;
    let runs = run_all(&doc.spec, &an, &s, Some(&args.out))?;
    write_json(
        &args.out.join("summary.json"),
        &json!({ "theta": an.eigen.theta, "settings": &s, "runs": &runs }),
    )?;
    manifest("simulate", &args.spec, &args.out, Some(s.seed), Some(s.seeds), json!(&s), start)?;
    for r in &runs {
        match (&r.error, r.xi) {
            (Some(e), _) => println!("n = {} r = {}: failed: {e}", r.n, r.replication),
            (None, Some(xi)) => println!(
                "n = {} r = {}: xi = {xi:.6}, fit error = {:.6}",
                r.n,
                r.replication,
                r.fit_error.unwrap_or(f64::NAN)
            ),
            (None, None) => println!("n = {} r = {}: no fit", r.n, r.replication),
        }
    }
    match all_failed(&runs) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct ValidateRow {
    n: i32,
    /// Median over replications with a fitted phase; `None` if none fitted.
    median_distance: Option<f64>,
    distances: Vec<f64>,
    xi: Vec<f64>,
    failures: usize,
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

pub fn validate(args: &SimArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (doc, _) = load(&args.spec)?;
    let s = sim_settings(args, &doc, &[2, 4, 6, 8], 20)?;
    let an = analyze_spec(&doc.spec)?;
    ensure_dir(&args.out)?;
    let runs = run_all(&doc.spec, &an, &s, None)?;
    let rows: Vec<ValidateRow> = s
        .n
        .iter()
        .map(|&n| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.n == n).collect();
            let distances: Vec<f64> = mine.iter().filter_map(|r| r.fit_error).collect();
            ValidateRow {
                n,
                median_distance: median(&distances),
                xi: mine.iter().filter_map(|r| r.xi).collect(),
                failures: mine.iter().filter(|r| r.fit_error.is_none()).count(),
                distances,
            }
        })
        .collect();
    let medians: Vec<f64> = rows.iter().filter_map(|r| r.median_distance).collect();
    let nonincreasing = medians.windows(2).all(|w| w[1] <= w[0]);
    write_json(
        &args.out.join("validate.json"),
        &json!({ "theta": an.eigen.theta, "settings": &s, "rows": &rows, "nonincreasing": nonincreasing }),
    )?;
    manifest("validate", &args.spec, &args.out, Some(s.seed), Some(s.seeds), json!(&s), start)?;
    println!("n,median_distance,fitted,failures");
    for r in &rows {
        let m = r.median_distance.map_or("NA".to_string(), |m| m.to_string());
        println!("{},{m},{},{}", r.n, r.distances.len(), r.failures);
    }
    match all_failed(&runs) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    mode: Mode,
    kmax: u32,
    ga: Option<&'a GaParams>,
    #[serde(flatten)]
    result: &'a OptimizationResult,
}

pub fn optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (doc, _) = load(&args.spec)?;
    let candidates = vec![candidate_set(args.kmax); doc.spec.n];
    let params = GaParams {
        population: args.population,
        generations: args.generations,
        mutation: args.mutation,
        crossover: args.crossover,
        seed: args.seed,
    };
    let result = match args.mode {
        Mode::Exhaustive => exhaustive_search(&doc.spec, &candidates)?,
        Mode::Ga => genetic_search(&doc.spec, &candidates, &params, None)?,
    };
    let ga = matches!(args.mode, Mode::Ga).then_some(&params);
    ensure_dir(&args.out)?;
    write_json(
        &args.out.join("optimize.json"),
        &OptimizeReport {
            mode: args.mode,
            kmax: args.kmax,
            ga,
            result: &result,
        },
    )?;
    write_atomic(&args.out.join("history.csv"), |w| {
        writeln!(w, "iteration,best_beta")?;
        for (it, b) in &result.history {
            writeln!(w, "{it},{b}")?;
        }
        Ok(())
    })?;
    let best: Vec<String> = result.best.iter().map(|k| k.to_string()).collect();
    println!("best = ({}), beta = {}, evaluations = {}", best.join(", "), result.best_beta, result.evaluations);
    let flags = json!({ "mode": args.mode, "kmax": args.kmax, "ga": ga });
    let seed = ga.map(|p| p.seed);
    manifest("optimize", &args.spec, &args.out, seed, None, flags, start)
}
