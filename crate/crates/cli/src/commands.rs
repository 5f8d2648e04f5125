//! Subcommand bodies. Each one is a pure function of its resolved config and seed.
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use quadsel::analysis::{self, SweepRow};
use quadsel::model::{load_problem, Problem};
use quadsel::output::{to_json_string, write_csv};
use quadsel::phase_retrieval::{self, PhaseConfig};
use quadsel::select::{self, SelectionMethod};
use quadsel::tracking::{self, RadiusSpec, TrackingConfig};
use quadsel::{stats, Criterion, Design, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, SelectConfig, VerifyConfig, WscConfig};
use crate::{Cli, Command, Suite};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Select {
            problem,
            k,
            criterion,
            method,
        } => run_select(cli, problem.clone(), *k, *criterion, *method),
        Command::Verify { suite } => run_verify(cli, *suite),
        Command::Phase => run_phase(cli),
        Command::Track => run_track(cli),
        Command::Wsc => run_wsc(cli),
    }
}

fn out_file(cli: &Cli, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cli.out).map_err(|e| io_err(&cli.out, e))?;
    Ok(cli.out.join(name))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_text(cli: &Cli, name: &str, text: &str) -> Result<()> {
    let path = out_file(cli, name)?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn write_rows<T: Serialize>(cli: &Cli, name: &str, rows: &[T]) -> Result<()> {
    let path = out_file(cli, name)?;
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

fn write_manifest<C: Serialize>(cli: &Cli, command: &str, seed: u64, config: &C) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
    });
    write_text(cli, "manifest.json", &to_json_string(&manifest))
}

fn run_select(
    cli: &Cli,
    problem: Option<PathBuf>,
    k: Option<usize>,
    criterion: Option<Criterion>,
    method: Option<SelectionMethod>,
) -> Result<()> {
    let mut cfg: SelectConfig = config::load(cli.config.as_deref())?;
    match problem {
        Some(p) => cfg.problem = Some(std::path::absolute(&p).unwrap_or(p)),
        None => {
            cfg.problem = cfg
                .problem
                .map(|p| config::resolve_path(cli.config.as_deref(), &p))
                .map(|p| std::path::absolute(&p).unwrap_or(p))
        }
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(c) = criterion {
        cfg.criterion = c;
    }
    if let Some(m) = method {
        cfg.method = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let path = cfg
        .problem
        .clone()
        .ok_or_else(|| Error::Config("no problem file given (--problem or config `problem`)".into()))?;
    let problem = load_problem(&path)?;
    let result = select_with(&problem, &cfg)?;
    write_text(cli, "selection.json", &to_json_string(&result.to_json()))?;
    write_manifest(cli, "select", cfg.seed, &cfg)?;
    println!(
        "selected k={} criterion={} method={} f={:.6e} chosen={:?}",
        cfg.k,
        cfg.criterion,
        serde_json::to_value(result.method).expect("method serializes").as_str().unwrap_or(""),
        result.final_utility,
        result.chosen
    );
    Ok(())
}

fn select_with(problem: &Problem, cfg: &SelectConfig) -> Result<select::SelectionResult> {
    let (k, c) = (cfg.k, cfg.criterion);
    if cfg.method == SelectionMethod::LinearizedGreedy {
        let theta0 = cfg
            .theta0
            .as_ref()
            .map(|v| {
                if v.len() != problem.dimension() {
                    return Err(Error::Dimension(format!(
                        "theta0 has length {} but dimension is {}",
                        v.len(),
                        problem.dimension()
                    )));
                }
                Ok(DVector::from_column_slice(v))
            })
            .transpose()?;
        return select::linearized(problem, k, c, theta0.as_ref());
    }
    let design = Design::from_problem(problem)?;
    match cfg.method {
        SelectionMethod::Greedy => select::greedy(&design, k, c),
        SelectionMethod::LazyGreedy | SelectionMethod::LazyGreedyFallback => {
            let c_bound = match c {
                Criterion::A | Criterion::E => Some(analysis::wsc_bounds(problem, &design, c)?.0),
                Criterion::D | Criterion::T => None,
            };
            select::lazy_greedy(&design, k, c, c_bound)
        }
        SelectionMethod::Exhaustive => select::exhaustive(&design, k, c, cfg.exhaustive_cap),
        SelectionMethod::Random => select::random(&design, k, c, cfg.seed),
        SelectionMethod::LinearizedGreedy => unreachable!(),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn run_verify(cli: &Cli, suite: Suite) -> Result<()> {
    let mut cfg: VerifyConfig = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cfg.criteria.is_empty() {
        return Err(Error::Config("criteria must not be empty".into()));
    }
    let problems = cfg.spec().problems(cli.config.as_deref(), cfg.seed)?;
    let (name, report) = match suite {
        Suite::Bound => ("bound", verify_bound(&cfg, &problems)?),
        Suite::Wsc => ("wsc", verify_wsc(&cfg, &problems)?),
        Suite::Prop => ("prop", verify_prop(&cfg, &problems)?),
        Suite::Guarantee => ("guarantee", verify_guarantee(&cfg, &problems)?),
    };
    let failed = report["failures"].as_u64().unwrap_or(0);
    write_text(cli, &format!("verify_{name}.json"), &to_json_string(&report))?;
    write_manifest(cli, &format!("verify {name}"), cfg.seed, &cfg)?;
    println!(
        "verify {name}: {} checks, {failed} failures",
        report["checks"].as_u64().unwrap_or(0)
    );
    if failed > 0 {
        return Err(Error::TheoremViolation(format!(
            "{failed} {name} invariant(s) failed; see verify_{name}.json"
        )));
    }
    Ok(())
}

fn verify_bound(cfg: &VerifyConfig, problems: &[Problem]) -> Result<serde_json::Value> {
    if cfg.samples == 0 || cfg.tolerance <= 0.0 || cfg.tolerance.is_nan() {
        return Err(Error::Config("samples and tolerance must be positive".into()));
    }
    let mut entries = Vec::new();
    let mut failures = 0;
    for (i, p) in problems.iter().enumerate() {
        let subset = cfg
            .subset
            .clone()
            .unwrap_or_else(|| (0..p.len().min(4)).collect());
        let mc = analysis::mc_fisher_oracle(p, &subset, cfg.samples, cfg.seed.wrapping_add(i as u64))?;
        let rel_ok = mc.rel_error <= cfg.tolerance;
        let score_ok = mc.mean_score_norm <= mc.mean_score_limit;
        failures += usize::from(!rel_ok) + usize::from(!score_ok);
        entries.push(json!({
            "instance": i,
            "subset": subset,
            "samples": mc.samples,
            "rel_error": mc.rel_error,
            "tolerance": cfg.tolerance,
            "rel_error_margin": cfg.tolerance - mc.rel_error,
            "rel_error_ok": rel_ok,
            "mean_score_norm": mc.mean_score_norm,
            "mean_score_limit": mc.mean_score_limit,
            "mean_score_margin": mc.mean_score_limit - mc.mean_score_norm,
            "mean_score_ok": score_ok,
        }));
    }
    Ok(json!({
        "suite": "bound",
        "checks": 2 * entries.len(),
        "failures": failures,
        "instances": entries,
    }))
}

fn verify_wsc(cfg: &VerifyConfig, problems: &[Problem]) -> Result<serde_json::Value> {
    let mut entries = Vec::new();
    let mut failures = 0;
    for (i, p) in problems.iter().enumerate() {
        for &c in &cfg.criteria {
            let r = analysis::wsc_bruteforce(p, c, cfg.n_cap)?;
            let sound = r.is_sound();
            failures += usize::from(!sound);
            entries.push(json!({
                "instance": i,
                "report": r,
                "c_margin": finite(r.c_bound - r.c_empirical),
                "eps_margin": finite(r.eps_bound - r.eps_empirical),
                "sound": sound,
            }));
        }
    }
    Ok(json!({
        "suite": "wsc",
        "checks": entries.len(),
        "failures": failures,
        "instances": entries,
    }))
}

fn verify_prop(cfg: &VerifyConfig, problems: &[Problem]) -> Result<serde_json::Value> {
    let mut entries = Vec::new();
    let mut failures = 0;
    let mut checks = 0;
    for (i, p) in problems.iter().enumerate() {
        for &c in &cfg.criteria {
            let r = analysis::prop1_check(p, c, cfg.trials, cfg.seed.wrapping_add(i as u64), cfg.n_cap)?;
            failures += r.violations;
            checks += r.pairs;
            entries.push(json!({
                "instance": i,
                "report": r,
                "multiplicative_margin": finite(-r.max_violation_multiplicative),
                "additive_margin": finite(-r.max_violation_additive),
            }));
        }
    }
    Ok(json!({
        "suite": "prop",
        "checks": checks,
        "failures": failures,
        "instances": entries,
    }))
}

fn verify_guarantee(cfg: &VerifyConfig, problems: &[Problem]) -> Result<serde_json::Value> {
    let mut entries = Vec::new();
    let mut failures = 0;
    let one_minus_inv_e = 1.0 - (-1.0f64).exp();
    for (i, p) in problems.iter().enumerate() {
        for &c in &cfg.criteria {
            let r = analysis::guarantee_check(p, cfg.k, c, cfg.n_cap)?;
            let ratio = if r.optimum > 0.0 { r.greedy / r.optimum } else { 1.0 };
            let submodular_ok = c != Criterion::D || r.greedy >= one_minus_inv_e * r.optimum - 1e-8;
            failures += usize::from(!r.multiplicative_ok)
                + usize::from(!r.additive_ok)
                + usize::from(!submodular_ok);
            entries.push(json!({
                "instance": i,
                "report": r,
                "ratio": ratio,
                "ratio_bound": r.certificate.ratio_bound,
                "multiplicative_margin": r.greedy - r.certificate.ratio_bound * r.optimum,
                "additive_margin": r.certificate.additive_bound.map(|b| r.greedy - b),
                "submodular_ok": submodular_ok,
            }));
        }
    }
    Ok(json!({
        "suite": "guarantee",
        "checks": 3 * entries.len(),
        "failures": failures,
        "instances": entries,
    }))
}

fn run_phase(cli: &Cli) -> Result<()> {
    let mut cfg: PhaseConfig = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let rows = phase_retrieval::nrmse_experiment(&cfg)?;
    let summary = phase_retrieval::summarize(&rows);
    write_rows(cli, "phase.csv", &rows)?;
    write_rows(cli, "phase_summary.csv", &summary)?;
    write_manifest(cli, "phase", cfg.seed, &cfg)?;
    for s in &summary {
        println!(
            "{:<14} k={:<4} median={:.4e} q25={:.4e} q75={:.4e}",
            s.scheme, s.k, s.median, s.q25, s.q75
        );
    }
    Ok(())
}

fn run_track(cli: &Cli) -> Result<()> {
    let mut cfg: TrackingConfig = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    cfg.radius = RadiusSpec::Fixed(tracking::resolve_radius(&cfg));
    let out = tracking::run_tracking(&cfg)?;
    let means = tracking::mean_curves(&out.rows);
    write_rows(cli, "tracking.csv", &out.rows)?;
    write_rows(cli, "tracking_mean.csv", &means)?;
    write_manifest(cli, "track", cfg.seed, &cfg)?;
    let from = cfg.steps.saturating_sub(15);
    println!("radius={:.6} mean batch={:.1}", out.radius, out.mean_batch);
    for scheme in cfg.schemes.iter().map(ToString::to_string) {
        println!(
            "{scheme:<14} mean MSE over steps {from}..{}: {:.4e}",
            cfg.steps,
            tracking::window_mean(&out.rows, &scheme, from)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct GapTrend {
    criterion: Criterion,
    snr: Vec<f64>,
    median_c_gap: Vec<Option<f64>>,
    median_eps_gap: Vec<Option<f64>>,
    spearman_c_gap: Option<f64>,
    spearman_eps_gap: Option<f64>,
}

/// Spearman correlation of SNR against the median bound-to-empirical gap.
pub fn gap_trends(rows: &[SweepRow], snrs: &[f64], criteria: &[Criterion]) -> Vec<serde_json::Value> {
    criteria
        .iter()
        .map(|&c| {
            let med = |f: fn(&SweepRow) -> f64| -> Vec<f64> {
                snrs.iter()
                    .map(|&s| {
                        let v: Vec<f64> = rows
                            .iter()
                            .filter(|r| r.criterion == c && r.snr == s)
                            .map(f)
                            .collect();
                        stats::median(&v)
                    })
                    .collect()
            };
            let cg = med(SweepRow::c_gap);
            let eg = med(SweepRow::eps_gap);
            let rho = |g: &[f64]| {
                if snrs.len() > 1 && g.iter().all(|v| v.is_finite()) {
                    finite(stats::spearman(snrs, g))
                } else {
                    None
                }
            };
            serde_json::to_value(GapTrend {
                criterion: c,
                snr: snrs.to_vec(),
                spearman_c_gap: rho(&cg),
                spearman_eps_gap: rho(&eg),
                median_c_gap: cg.into_iter().map(finite).collect(),
                median_eps_gap: eg.into_iter().map(finite).collect(),
            })
            .expect("trend serializes")
        })
        .collect()
}

fn run_wsc(cli: &Cli) -> Result<()> {
    let mut cfg: WscConfig = config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let problems = cfg.spec().problems(cli.config.as_deref(), cfg.seed)?;
    let rows = analysis::snr_sweep(&problems, &cfg.snr, &cfg.criteria, cfg.n_cap)?;
    let unsound = rows.iter().filter(|r| !r.is_sound()).count();
    let summary = json!({
        "evaluations": rows.len(),
        "unsound": unsound,
        "trends": gap_trends(&rows, &cfg.snr, &cfg.criteria),
    });
    write_rows(cli, "wsc.csv", &rows)?;
    write_text(cli, "wsc_summary.json", &to_json_string(&summary))?;
    write_manifest(cli, "wsc", cfg.seed, &cfg)?;
    println!("wsc: {} evaluations, {unsound} unsound", rows.len());
    for t in summary["trends"].as_array().into_iter().flatten() {
        println!(
            "{} spearman(snr, c gap)={} spearman(snr, eps gap)={}",
            t["criterion"], t["spearman_c_gap"], t["spearman_eps_gap"]
        );
    }
    if unsound > 0 {
        return Err(Error::TheoremViolation(format!(
            "{unsound} empirical constant(s) exceed their bound; see wsc.csv"
        )));
    }
    Ok(())
}
