//! Pipeline stages: env -> algebra -> occupation -> walker -> traps -> stats,
//! with deterministic replica parallelism and artifact emission.

use std::time::Instant;

use serde_json::{json, Value};
use striprw_core::algebra::{
    build_chain, contraction_probe, lyapunov_exponent, moment_curve, solve_s,
};
use striprw_core::env::sample_iid_environment;
use striprw_core::occupation::{m1_w_rho, rho_profile};
use striprw_core::rng::{derive_key, CounterRng};
use striprw_core::stats::{dispersion_test, exponentiality_test, ks_one_sample, TestReport};
use striprw_core::traps::{detect_traps, normalize_tn_un, theta_gamma, trap_look_ahead, PointEntry, TrapRecord};
use striprw_core::walker::{edge_crossing_run, occupation_time};
use striprw_core::{EnvironmentWindow, Error, Site, StableIndex};

use crate::artifacts::{fmt_f64, ArtifactDir};
use crate::config::ExperimentConfig;

// fixed internal stage parameters, reported by `describe`
const LYAP_N: usize = 1000;
const LYAP_REPLICAS: usize = 100;
// short product horizon with many replicas: the alpha-moments are dominated
// by rare large products, so a long horizon with few replicas under-counts
// them and r_hat saturates below 1
const CURVE_N: usize = 24;
const CURVE_REPLICAS: usize = 30_000;
const S_TOL: f64 = 1e-4;
/// left margin below layer 0 so leftward excursions stay inside the window
const LEFT_MARGIN: i64 = 300;
/// extra layers past N + M for tail seeding of the w recursion
const RIGHT_MARGIN: i64 = 400;
const MAX_STEPS: u64 = 200_000_000;

// derivation keys for the per-stage random streams
const KEY_LYAP: u64 = 1;
const KEY_CURVE: u64 = 2;
const KEY_SOLVE: u64 = 3;
const KEY_ENV: u64 = 4;
const KEY_WALK: u64 = 5;

pub struct StageClock {
    pub timings: Vec<(String, f64)>,
}

impl StageClock {
    pub fn new() -> Self {
        StageClock { timings: Vec::new() }
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
        let t0 = Instant::now();
        let out = f();
        self.timings.push((name.to_string(), t0.elapsed().as_secs_f64()));
        out.map_err(|e| format!("stage {name}: {e}"))
    }
}

/// Everything one (environment, walk) replica contributes to the artifacts.
pub struct ReplicaOutcome {
    pub replica: usize,
    /// occupation time of the box [L_0, L_{N-1}] up to the certified cutoff
    pub t_box: f64,
    /// steps until the first entry of L_N
    pub hit_steps: u64,
    pub cutoff_l: usize,
    pub cutoff_certificate: f64,
    /// quenched expected box occupation, sum of rho over [0, N)
    pub e_t: f64,
    pub records: Vec<TrapRecord>,
    pub points: Vec<PointEntry>,
}

fn err_str(e: Error) -> String {
    e.to_string()
}

/// The quenched profile of one replica's environment: w over [0, N+M) and
/// the per-layer / per-rung expected occupations over [0, N).
fn quenched_profile(
    cfg: &ExperimentConfig,
    env: &EnvironmentWindow,
    m_ahead: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>), Error> {
    let top = cfg.n - 1 + m_ahead as i64;
    if cfg.law.m() == 1 {
        // scalar fast path; the backward recursion is seeded at the window's
        // right edge, so the RIGHT_MARGIN layers act as burn-in slack
        let (w_all, rho_all) = m1_w_rho(env, 0, env.last_layer())?;
        let w: Vec<f64> = w_all[..=top as usize].to_vec();
        let rho: Vec<f64> = rho_all[..cfg.n as usize].to_vec();
        let rho_y = rho.iter().map(|&r| vec![r]).collect();
        Ok((w, rho, rho_y))
    } else {
        let chain = build_chain(env, env.first_layer + LEFT_MARGIN / 2, 1e-9)?;
        let prof = rho_profile(&chain, env, (0, top), cfg.tail_tol)?;
        let w = prof.w.clone();
        let rho = prof.rho[..cfg.n as usize].to_vec();
        let rho_y = prof.rho_y[..cfg.n as usize].to_vec();
        Ok((w, rho, rho_y))
    }
}

fn run_replica(
    cfg: &ExperimentConfig,
    rep: usize,
    s_hat: Option<f64>,
) -> Result<ReplicaOutcome, Error> {
    let m_ahead = trap_look_ahead(cfg.n);
    let env_seed = derive_key(derive_key(cfg.seed, KEY_ENV), rep as u64);
    let right = cfg.n + m_ahead as i64 + RIGHT_MARGIN;
    let env = sample_iid_environment(&cfg.law, -LEFT_MARGIN, right, env_seed)?;
    let (w, rho, rho_y) = quenched_profile(cfg, &env, m_ahead)?;
    let e_t: f64 = rho.iter().sum();

    let walk_key = derive_key(derive_key(cfg.seed, KEY_WALK), rep as u64);
    let mut rng = CounterRng::new(walk_key);

    let (t_box, hit_steps, cutoff_l, cutoff_certificate, xi_at): (
        f64,
        u64,
        usize,
        f64,
        Box<dyn Fn(i64, usize) -> u64>,
    ) = if cfg.law.m() == 1 {
        let sample = edge_crossing_run(&env, 0, cfg.n, &mut rng)?;
        let t_box = sample.time_in(0, cfg.n - 1) as f64;
        let total = sample.total;
        (t_box, total, 0, 0.0, Box::new(move |n, _| sample.xi_at(n)))
    } else {
        let chain = build_chain(&env, env.first_layer + LEFT_MARGIN / 2, 1e-9)?;
        let summary = occupation_time(
            &env,
            &chain,
            Site { layer: 0, rung: 1 },
            cfg.n,
            &mut rng,
            cfg.tail_eps,
            MAX_STEPS,
        )?;
        let t_box = summary.occupation_time as f64;
        let hit = summary.hit_time;
        let l = summary.cutoff_l;
        let cert = summary.cutoff_certificate;
        let xi = summary.xi_site;
        (t_box, hit, l, cert, Box::new(move |n, y| *xi.get(&(n, y)).unwrap_or(&0)))
    };

    let (records, points) = match s_hat {
        Some(s) => {
            let records = detect_traps(&w, &rho, cfg.n, cfg.delta, s)?;
            let points = theta_gamma(&records, &xi_at, &rho_y, cfg.n, s)?.points;
            (records, points)
        }
        None => (Vec::new(), Vec::new()),
    };

    Ok(ReplicaOutcome {
        replica: rep,
        t_box,
        hit_steps,
        cutoff_l,
        cutoff_certificate,
        e_t,
        records,
        points,
    })
}

/// Runs all replicas on a pool of `cfg.workers` threads. Outputs are keyed
/// by replica index and every random stream is a pure function of
/// (seed, replica), so the artifacts cannot depend on the worker count.
pub fn run_replicas(
    cfg: &ExperimentConfig,
    s_hat: Option<f64>,
) -> Result<Vec<ReplicaOutcome>, (Vec<ReplicaOutcome>, String)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| (Vec::new(), e.to_string()))?;
    let results: Vec<(usize, Result<ReplicaOutcome, Error>)> = pool.install(|| {
        use rayon::prelude::*;
        (0..cfg.replicas).into_par_iter().map(|rep| (rep, run_replica(cfg, rep, s_hat))).collect()
    });
    let mut ok = Vec::new();
    let mut first_err = None;
    for (rep, r) in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                first_err.get_or_insert(format!("replica {rep}: {e}"));
            }
        }
    }
    ok.sort_by_key(|o| o.replica);
    match first_err {
        None => Ok(ok),
        Some(e) => Err((ok, e)),
    }
}

pub fn lyapunov_stage(cfg: &ExperimentConfig, dir: &ArtifactDir) -> Result<Value, String> {
    let est = lyapunov_exponent(&cfg.law, LYAP_N, LYAP_REPLICAS, derive_key(cfg.seed, KEY_LYAP))
        .map_err(err_str)?;
    let value = json!({
        "lambda_hat": est.value,
        "stderr": est.stderr,
        "n": LYAP_N,
        "replicas": LYAP_REPLICAS,
    });
    dir.write_json("lyap.json", &value).map_err(|e| e.to_string())?;
    Ok(value)
}

pub fn rcurve_stage(cfg: &ExperimentConfig, dir: &ArtifactDir) -> Result<(), String> {
    let curve = moment_curve(
        &cfg.law,
        &cfg.alpha_grid,
        CURVE_N,
        CURVE_REPLICAS,
        derive_key(cfg.seed, KEY_CURVE),
    )
    .map_err(err_str)?;
    let rows: Vec<Vec<String>> = curve
        .alphas
        .iter()
        .zip(&curve.r_values)
        .map(|(a, r)| vec![fmt_f64(*a), fmt_f64(r.value), fmt_f64(r.stderr)])
        .collect();
    dir.write_csv("rcurve.csv", &["alpha", "r_hat", "stderr"], &rows)
        .map_err(|e| e.to_string())
}

pub fn solve_s_stage(cfg: &ExperimentConfig) -> Result<StableIndex, String> {
    solve_s(&cfg.law, S_TOL, CURVE_N, CURVE_REPLICAS, derive_key(cfg.seed, KEY_SOLVE))
        .map_err(err_str)
}

pub fn profile_stage(cfg: &ExperimentConfig, dir: &ArtifactDir) -> Result<(), String> {
    // the quenched profile artifact describes replica 0's environment
    let m_ahead = trap_look_ahead(cfg.n);
    let env_seed = derive_key(derive_key(cfg.seed, KEY_ENV), 0);
    let right = cfg.n + m_ahead as i64 + RIGHT_MARGIN;
    let env =
        sample_iid_environment(&cfg.law, -LEFT_MARGIN, right, env_seed).map_err(err_str)?;
    let (w, rho, _) = quenched_profile(cfg, &env, m_ahead).map_err(err_str)?;
    let rows: Vec<Vec<String>> = (0..cfg.n as usize)
        .map(|n| vec![n.to_string(), fmt_f64(w[n]), fmt_f64(rho[n])])
        .collect();
    dir.write_csv("profile.csv", &["n", "w", "rho"], &rows).map_err(|e| e.to_string())
}

pub fn runs_rows(outcomes: &[ReplicaOutcome]) -> Vec<Vec<String>> {
    outcomes
        .iter()
        .map(|o| {
            vec![
                o.replica.to_string(),
                fmt_f64(o.t_box),
                o.hit_steps.to_string(),
                o.cutoff_l.to_string(),
                fmt_f64(o.cutoff_certificate),
                fmt_f64(o.e_t),
                o.records.iter().filter(|r| !r.clipped).count().to_string(),
            ]
        })
        .collect()
}

pub const RUNS_HEADER: [&str; 7] =
    ["replica", "t_box", "hit_steps", "cutoff_l", "cutoff_certificate", "e_t", "trap_count"];

pub fn traps_rows(outcomes: &[ReplicaOutcome]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for o in outcomes {
        for r in &o.records {
            rows.push(vec![
                o.replica.to_string(),
                r.marked_n.to_string(),
                r.window.0.to_string(),
                r.window.1.to_string(),
                fmt_f64(r.mass),
                r.center.to_string(),
                r.clipped.to_string(),
            ]);
        }
    }
    rows
}

pub const TRAPS_HEADER: [&str; 7] =
    ["replica", "marked_n", "left", "right", "mass", "center", "clipped"];

pub fn points_rows(outcomes: &[ReplicaOutcome]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for o in outcomes {
        for p in &o.points {
            rows.push(vec![
                o.replica.to_string(),
                fmt_f64(p.loc),
                fmt_f64(p.theta),
                p.gamma.map(fmt_f64).unwrap_or_default(),
                p.flagged.to_string(),
            ]);
        }
    }
    rows
}

pub const POINTS_HEADER: [&str; 5] = ["replica", "loc", "theta", "gamma", "flagged"];

pub fn tn_rows(
    cfg: &ExperimentConfig,
    outcomes: &[ReplicaOutcome],
    s: f64,
) -> Result<Vec<Vec<String>>, String> {
    let mut rows = Vec::new();
    for o in outcomes {
        let norm = normalize_tn_un(&[o.t_box], o.e_t, cfg.n, s, None).map_err(err_str)?;
        rows.push(vec![o.replica.to_string(), fmt_f64(norm.t[0])]);
    }
    Ok(rows)
}

pub const TN_HEADER: [&str; 2] = ["replica", "t_norm"];

fn report_json(name: &str, r: &Result<TestReport, Error>) -> Value {
    match r {
        Ok(t) => json!({
            "name": name,
            "statistic": t.statistic,
            "p_value": t.p_value,
            "n_samples": t.n_samples,
            "method": format!("{:?}", t.method),
        }),
        Err(e) => json!({ "name": name, "error": e.to_string() }),
    }
}

/// Diagnostic test battery over the finished replica set. These are
/// reported, not gated: small configs legitimately carry too little data.
pub fn test_reports(outcomes: &[ReplicaOutcome]) -> Vec<Value> {
    let counts: Vec<u64> =
        outcomes.iter().map(|o| o.records.iter().filter(|r| !r.clipped).count() as u64).collect();
    let locs: Vec<f64> =
        outcomes.iter().flat_map(|o| o.points.iter().map(|p| p.loc)).collect();
    let gammas: Vec<f64> = outcomes
        .iter()
        .flat_map(|o| o.points.iter().filter(|p| !p.flagged).filter_map(|p| p.gamma))
        .collect();
    vec![
        report_json("trap_count_dispersion", &dispersion_test(&counts)),
        report_json("trap_location_uniformity", &ks_one_sample(&locs, |x| x.clamp(0.0, 1.0))),
        report_json("gamma_exponentiality", &exponentiality_test(&gammas)),
    ]
}

pub struct PipelineResult {
    pub manifest: Value,
}

/// The full pipeline. Artifact files land in cfg.output_dir; a failing
/// stage leaves whatever it produced with a `.partial` suffix and aborts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PipelineResult, String> {
    let diags = cfg.diagnostics();
    if !diags.is_empty() {
        return Err(format!("invalid config: {}", diags.join("; ")));
    }
    let dir = ArtifactDir::new(&cfg.output_dir).map_err(|e| e.to_string())?;
    let mut clock = StageClock::new();

    let lyap = clock.run("lyapunov", || lyapunov_stage(cfg, &dir))?;
    clock.run("rcurve", || rcurve_stage(cfg, &dir))?;
    let s_index = clock.run("solve_s", || solve_s_stage(cfg))?;
    clock.run("profile", || profile_stage(cfg, &dir))?;

    let s_hat = (!s_index.diffusive).then_some(s_index.s_hat);
    let outcomes = clock.run("replicas", || {
        run_replicas(cfg, s_hat).map_err(|(done, e)| {
            // keep the completed prefix as evidence, clearly marked partial
            let _ = dir.write_partial_csv("runs.csv", &RUNS_HEADER, &runs_rows(&done));
            let _ = dir.write_partial_csv("traps.csv", &TRAPS_HEADER, &traps_rows(&done));
            let _ = dir.write_partial_csv("points.csv", &POINTS_HEADER, &points_rows(&done));
            e
        })
    })?;

    clock.run("runs_csv", || {
        dir.write_csv("runs.csv", &RUNS_HEADER, &runs_rows(&outcomes)).map_err(|e| e.to_string())
    })?;
    clock.run("traps_csv", || {
        dir.write_csv("traps.csv", &TRAPS_HEADER, &traps_rows(&outcomes))
            .map_err(|e| e.to_string())?;
        dir.write_csv("points.csv", &POINTS_HEADER, &points_rows(&outcomes))
            .map_err(|e| e.to_string())
    })?;
    let tn_written = match s_hat {
        Some(s) => {
            let rows = clock.run("tn_csv", || tn_rows(cfg, &outcomes, s))?;
            dir.write_csv("tn.csv", &TN_HEADER, &rows).map_err(|e| e.to_string())?;
            true
        }
        None => {
            // diffusive regime: the stable normalization does not apply
            dir.write_csv("tn.csv", &TN_HEADER, &[]).map_err(|e| e.to_string())?;
            false
        }
    };

    let reports = test_reports(&outcomes);
    let trap_total: usize =
        outcomes.iter().map(|o| o.records.iter().filter(|r| !r.clipped).count()).sum();
    let clipped_total: usize =
        outcomes.iter().map(|o| o.records.iter().filter(|r| r.clipped).count()).sum();

    let manifest = json!({
        "config_hash": cfg.config_hash(),
        "code_version": env!("CARGO_PKG_VERSION"),
        "timings": clock.timings.iter().map(|(n, s)| json!({"stage": n, "seconds": s})).collect::<Vec<_>>(),
        "lambda_hat": lyap["lambda_hat"],
        "lambda_stderr": lyap["stderr"],
        "s_hat": s_index.s_hat,
        "s_ci": [s_index.ci_lo, s_index.ci_hi],
        "diffusive": s_index.diffusive,
        "trap_count": trap_total,
        "clipped_trap_count": clipped_total,
        "tn_normalized": tn_written,
        "replicas": cfg.replicas,
        "test_reports": reports,
        "artifacts": ["lyap.json", "rcurve.csv", "profile.csv", "runs.csv", "traps.csv", "points.csv", "tn.csv"],
    });
    dir.write_json("manifest.json", &manifest).map_err(|e| e.to_string())?;
    Ok(PipelineResult { manifest })
}

/// Dry-run plan: the window sizes, burn-ins, and cutoffs `run` would use.
pub fn describe(cfg: &ExperimentConfig) -> Result<Value, String> {
    let diags = cfg.diagnostics();
    if !diags.is_empty() {
        return Err(format!("invalid config:\n  {}", diags.join("\n  ")));
    }
    let m = cfg.law.m();
    let m_ahead = trap_look_ahead(cfg.n);
    let lyap = lyapunov_exponent(&cfg.law, 400, 32, derive_key(cfg.seed, KEY_LYAP))
        .map_err(err_str)?;
    let cutoff_estimate = if lyap.value < 0.0 {
        ((1.0 / cfg.tail_eps).ln() / -lyap.value).ceil()
    } else {
        f64::NAN
    };
    let burn_in = if m == 1 {
        1.0
    } else {
        let fit = contraction_probe(&cfg.law, 40, 200, derive_key(cfg.seed, KEY_SOLVE))
            .map_err(err_str)?;
        (cfg.tail_tol.ln() / fit.theta.ln()).ceil()
    };
    let window_len = (LEFT_MARGIN + cfg.n + m_ahead as i64 + RIGHT_MARGIN) as usize;
    // chain state holds zeta, A (m x m) and pi, v (m) per layer, f64 each
    let bytes_per_layer = (2 * m * m + 2 * m + 2) * 8;
    let memory_estimate = window_len * bytes_per_layer * cfg.workers.max(1);
    Ok(json!({
        "stages": ["lyapunov", "rcurve", "solve_s", "profile", "replicas", "runs_csv", "traps_csv", "tn_csv", "manifest"],
        "m": m,
        "n_horizon": cfg.n,
        "trap_look_ahead": m_ahead,
        "window": { "first": -LEFT_MARGIN, "last": cfg.n + m_ahead as i64 + RIGHT_MARGIN },
        "lambda_quick_estimate": lyap.value,
        "certified_cutoff_estimate": cutoff_estimate,
        "burn_in_estimate": burn_in,
        "memory_estimate_bytes": memory_estimate,
        "streaming": cfg.n > 1_000_000,
        "replicas": cfg.replicas,
        "workers": cfg.workers,
    }))
}
