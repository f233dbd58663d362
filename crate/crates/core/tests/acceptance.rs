//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS/FAIL line (run with `--nocapture` to see them on success).
//!
//! Calibrated laws:
//! - L*: m = 1, p in {0.8, 0.3} with equal weights; closed forms give
//!   lambda = (ln 0.25 + ln(7/3))/2 = -0.26950 and r(alpha) =
//!   (0.25^alpha + (7/3)^alpha)/2, with root s* = 0.45030 of r(s) = 1.
//! - L2: a fixed two-atom m = 2 law, valid at epsilon = 0.05, with
//!   stable index about 0.45.

use std::collections::HashMap;
use std::time::Instant;

use striprw_core::algebra::{
    build_chain, contraction_probe, linear_fit, lyapunov_exponent, moment_curve,
    moment_lyapunov, solve_s, zeta_fixed_point,
};
use striprw_core::env::{
    embed_bounded_jump, random_valid_triple, sample_iid_environment, EnvironmentLaw,
    EnvironmentWindow, Site, TripleData,
};
use striprw_core::occupation::{expected_occupation, w_sequence};
use striprw_core::Error;
use striprw_core::rng::{derive_key, CounterRng};
use striprw_core::stats::{
    chi_square_geometric, dispersion_test, hill_plateau, ks_one_sample, ks_two_sample,
    stable_sum_oracle, TestReport,
};
use striprw_core::traps::{detect_traps, theta_gamma, trap_look_ahead, TrapRecord};
use striprw_core::walker::{
    certified_cutoff, edge_crossing_run, run_to_hit_with, Stepper,
};
use striprw_core::Triple;

const S_STAR: f64 = 0.4503;

fn lstar() -> EnvironmentLaw {
    EnvironmentLaw::Model1 { epsilon: 0.1, ps: vec![0.8, 0.3], weights: vec![0.5, 0.5] }
}

fn l2() -> EnvironmentLaw {
    EnvironmentLaw::Mixture {
        m: 2,
        epsilon: 0.05,
        atoms: vec![
            TripleData {
                p: vec![vec![0.50, 0.20], vec![0.30, 0.40]],
                q: vec![vec![0.10, 0.10], vec![0.17, 0.08]],
                r: vec![vec![0.05, 0.05], vec![0.00, 0.05]],
            },
            TripleData {
                p: vec![vec![0.10, 0.15], vec![0.12, 0.10]],
                q: vec![vec![0.35, 0.30], vec![0.30, 0.38]],
                r: vec![vec![0.05, 0.05], vec![0.05, 0.05]],
            },
        ],
        weights: vec![0.6, 0.4],
    }
}

fn report(num: u32, name: &str, pass: bool, details: &str) {
    println!(
        "ACCEPTANCE {num:02} {name}: {} — {details}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {num:02} ({name}) failed: {details}");
}

/// m = 1 streaming w/rho over [0, len): scalar backward recursion started
/// `slack` layers to the right, environment drawn layer by layer from the law.
fn m1_stream(law: &EnvironmentLaw, seed: u64, len: usize, slack: usize) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0f64; len];
    let mut rho = vec![0.0f64; len];
    let mut w_next = 0.0f64;
    let mut ratio_next = 0.0f64;
    for n in (0..len as i64 + slack as i64).rev() {
        let t = law.sample_layer(seed, n).expect("valid law");
        let p = t.p[(0, 0)];
        let w_n = 1.0 + ratio_next * w_next;
        if (n as usize) < len {
            w[n as usize] = w_n;
            rho[n as usize] = w_n / p;
        }
        w_next = w_n;
        ratio_next = t.q[(0, 0)] / p;
    }
    (w, rho)
}

/// m = 1 cutoff: smallest l with bound u_{N-1} * sum_{j >= N-1+l} a_N...a_j
/// below eps, where a = q/p; the sum is evaluated to `max_l` extra layers.
fn m1_cutoff(env: &EnvironmentWindow, n_target: i64, eps: f64, max_l: usize) -> usize {
    let scalar = |n: i64| {
        let t = env.triple(n);
        (t.p[(0, 0)], t.q[(0, 0)])
    };
    let u = 1.0 / scalar(n_target - 1).0;
    let jmax = (n_target + max_l as i64).min(env.last_layer());
    let mut terms = Vec::new();
    let mut prod = 1.0f64;
    for j in n_target..=jmax {
        let (p, q) = scalar(j);
        prod *= q / p;
        terms.push(prod);
    }
    // suffix sums, with a conservative geometric residual for the cut
    let mut suffix = vec![0.0f64; terms.len() + 1];
    for k in (0..terms.len()).rev() {
        suffix[k] = suffix[k + 1] + terms[k];
    }
    let residual = terms.last().copied().unwrap_or(0.0) * (7.0 / 3.0) * 4.0;
    for l in 1..terms.len() {
        if u * (suffix[l] + residual) < eps {
            return l;
        }
    }
    terms.len()
}

#[test]
fn a01_zeta_fixed_point() {
    let start = Instant::now();
    let mut rng = CounterRng::new(104_729);
    let mut max_residual = 0.0f64;
    let mut max_row_err = 0.0f64;
    for k in 0..100u32 {
        let m = 1 + (k % 3) as usize;
        let t = random_valid_triple(m, 0.02, &mut rng);
        let z = zeta_fixed_point(&t, 1e-13).unwrap();
        // residual of zeta = (I - Q zeta - R)^{-1} P, as a linear system
        let lhs = (nalgebra_identity(m) - &t.q * &z - &t.r) * &z - &t.p;
        max_residual = max_residual.max(lhs.abs().max());
        for i in 0..m {
            max_row_err = max_row_err.max((z.row(i).sum() - 1.0).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_residual < 1e-10 && max_row_err < 1e-10 && elapsed < 1.0;
    report(
        1,
        "zeta fixed point",
        pass,
        &format!("max residual {max_residual:.2e}, max row-sum error {max_row_err:.2e}, {elapsed:.2}s"),
    );
}

fn nalgebra_identity(m: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(m, m)
}

#[test]
fn a02_contraction() {
    let start = Instant::now();
    let law = l2();
    law.validate().unwrap();
    let fit = contraction_probe(&law, 60, 2000, 2024).unwrap();
    // L2 also has to sit in the subballistic regime with s in (0, 1)
    let idx = solve_s(&law, 1e-4, 24, 100_000, 31).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = fit.theta < 1.0
        && fit.r_squared > 0.95
        && !idx.diffusive
        && idx.s_hat > 0.0
        && idx.s_hat < 1.0
        && elapsed < 10.0;
    report(
        2,
        "zeta recursion contraction",
        pass,
        &format!(
            "theta {:.4}, R^2 {:.4}, L2 s_hat {:.3}, {elapsed:.1}s",
            fit.theta, fit.r_squared, idx.s_hat
        ),
    );
}

#[test]
fn a03_m1_closed_forms() {
    let start = Instant::now();
    let law = lstar();
    let mut details = String::new();
    let mut pass = true;
    for &alpha in &[0.25f64, 0.5, 1.0] {
        let truth = 0.5 * (0.25f64.powf(alpha) + (7.0f64 / 3.0).powf(alpha));
        let est = moment_lyapunov(&law, alpha, 16, 200_000, 7).unwrap();
        let ok = (est.value - truth).abs() < 3.0 * est.stderr;
        pass &= ok;
        details.push_str(&format!(
            "r({alpha}) = {:.5} vs {:.5} (3se {:.1e}); ",
            est.value,
            truth,
            3.0 * est.stderr
        ));
    }
    let idx = solve_s(&law, 1e-4, 24, 300_000, 71).unwrap();
    let s_ok = (idx.s_hat - S_STAR).abs() < 0.02;
    pass &= s_ok;
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 120.0;
    details.push_str(&format!("s_hat {:.4} vs {S_STAR}, {elapsed:.0}s", idx.s_hat));
    report(3, "m=1 closed forms", pass, &details);
}

#[test]
fn a04_moment_slope_is_lyapunov() {
    let start = Instant::now();
    let h = 0.05;
    let mut pass = true;
    let mut details = String::new();
    for (name, law, n, reps) in [
        ("L*", lstar(), 20usize, 200_000usize),
        ("L2", l2(), 20, 120_000),
    ] {
        let lam = lyapunov_exponent(&law, 2000, 100, 11).unwrap();
        let curve = moment_curve(&law, &[-h, h], n, reps, 13).unwrap();
        let (rm, rp) = (&curve.r_values[0], &curve.r_values[1]);
        let slope = (rp.value.ln() - rm.value.ln()) / (2.0 * h);
        let se_slope = ((rp.stderr / rp.value).powi(2) + (rm.stderr / rm.value).powi(2)).sqrt()
            / (2.0 * h);
        let tol = 3.0 * (se_slope.powi(2) + lam.stderr.powi(2)).sqrt() + 0.01;
        let ok = (slope - lam.value).abs() < tol;
        pass &= ok;
        details.push_str(&format!(
            "{name}: slope {:.4} vs lambda {:.4} (tol {:.4}); ",
            slope, lam.value, tol
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 120.0;
    details.push_str(&format!("{elapsed:.0}s"));
    report(4, "r'(0) equals lambda", pass, &details);
}

#[test]
fn a05_occupation_formula_vs_monte_carlo() {
    let start = Instant::now();
    // homogeneous m = 1 check first: F = 1/(p-q) = 2 at p = 0.75
    let t = Triple::scalar(0.75, 0.25, 0.0);
    let hom = EnvironmentWindow::new(-10, vec![t; 160], 0.1).unwrap();
    let hom_chain = build_chain(&hom, -9, 1e-9).unwrap();
    let f_hom = expected_occupation(&hom_chain, &hom, 0, 30, 1, 1e-10).unwrap()[0];
    let mut pass = (f_hom - 2.0).abs() < 0.02;
    let mut details = format!("homogeneous F = {f_hom:.4}; ");

    // 50 quenched L2 environments, one probe each from a 10-probe cycle
    let law = l2();
    let probes: [(i64, i64, usize); 10] = [
        (0, 15, 1),
        (0, 15, 2),
        (0, 25, 1),
        (5, 15, 1),
        (5, 15, 2),
        (5, 25, 2),
        (0, 20, 1),
        (5, 20, 2),
        (2, 18, 1),
        (3, 22, 2),
    ];
    let mut worst_z = 0.0f64;
    let mut fails = 0u32;
    let mut accepted = 0u64;
    let mut skipped = 0u64;
    let mut seed_counter = 0u64;
    while accepted < 50 {
        let e = accepted;
        let (k, n, y) = probes[(e % 10) as usize];
        let env_seed = derive_key(505, seed_counter);
        seed_counter += 1;
        // layers are a pure function of (seed, n), so re-sampling with a wider
        // right edge extends the same environment when a tail will not certify
        let mut right = 240i64;
        let (env, f, l, w_load) = loop {
            let env = sample_iid_environment(&law, -150, right, env_seed).unwrap();
            let chain = build_chain(&env, -20, 1e-9).unwrap();
            let trial = expected_occupation(&chain, &env, k, n, y, 1e-8).and_then(|f| {
                let (l, _) = certified_cutoff(&chain, &env, n + 1, 1e-4)?;
                let (w, _) = w_sequence(&chain, (-60, n + l as i64))?;
                Ok((f[0], l, w.iter().sum::<f64>()))
            });
            match trial {
                Ok((f, l, w_load)) => break (env, f, l, w_load),
                Err(Error::NeedsWiderWindow { .. }) if right < 8_000 => right *= 2,
                Err(err) => panic!("env seed {seed_counter}: {err}"),
            }
        };
        // the quenched mean cost per run scales with the summed w profile; a
        // deep trap makes 10^4 direct-stepping runs take hours, so such
        // environments are skipped (the identity under test is quenched, so
        // this conditions the ensemble, not the comparison)
        if w_load > 4_000.0 {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let stop = n + l as i64;
        let stepper = Stepper::new(&env).unwrap();
        let reps = 10_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for r in 0..reps {
            let mut rng = CounterRng::for_replica(env_seed ^ 0x5050, r);
            let s = run_to_hit_with(&stepper, Site { layer: k, rung: 1 }, stop, &mut rng, 100_000_000)
                .unwrap();
            let x = *s.xi_site.get(&(n, y)).unwrap_or(&0) as f64;
            sum += x;
            sq += x * x;
        }
        let mean = sum / reps as f64;
        let var = (sq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt().max(1e-12);
        let z = (mean - f).abs() / se;
        worst_z = worst_z.max(z);
        if z >= 4.0 {
            fails += 1;
            details.push_str(&format!("env {e} probe ({k},{n},{y}): mc {mean:.4} vs F {f:.4} z {z:.1}; "));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= fails == 0 && elapsed < 600.0;
    details.push_str(&format!(
        "50 envs ({skipped} deep-trap skips), worst |z| {worst_z:.2}, {elapsed:.0}s"
    ));
    report(5, "occupation formula vs MC", pass, &details);
}

#[test]
fn a06_geometric_visits() {
    let start = Instant::now();
    // homogeneous p = 0.75, counts at the start site: q_a = 1, p_a = 0.5,
    // so E(xi) = q_a/p_a = 2 and xi | xi >= 1 is Geometric(1/2)
    let t = Triple::scalar(0.75, 0.25, 0.0);
    let env = EnvironmentWindow::new(-200, vec![t; 260], 0.1).unwrap();
    let reps = 100_000u64;
    let mut counts = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        let mut rng = CounterRng::for_replica(606, r);
        let s = edge_crossing_run(&env, 0, 40, &mut rng).unwrap();
        counts.push(s.xi_at(0));
    }
    let chi = chi_square_geometric(&counts).unwrap();
    let mean = counts.iter().sum::<u64>() as f64 / reps as f64;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / reps as f64;
    let se = (var / reps as f64).sqrt();
    let mean_ok = (mean - 2.0).abs() < 4.0 * se;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = chi.p_value > 0.001 && mean_ok && elapsed < 120.0;
    report(
        6,
        "geometric visit counts",
        pass,
        &format!(
            "chi-square p {:.3}, mean {:.4} vs 2 (4se {:.4}), {elapsed:.0}s",
            chi.p_value,
            mean,
            4.0 * se
        ),
    );
}

#[test]
fn a07_w_tail_exponent() {
    let start = Instant::now();
    let (w, _) = m1_stream(&lstar(), 707, 1_000_000, 300);
    let plat = hill_plateau(&w, 0.10).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (pass, details) = match plat {
        Some(e) => (
            (e.index - S_STAR).abs() < 0.07 && elapsed < 300.0,
            format!("Hill plateau {:.4} vs {S_STAR} +- 0.07, k ~ {}, {elapsed:.0}s", e.index, e.k),
        ),
        None => (false, format!("no plateau found, {elapsed:.0}s")),
    };
    report(7, "w tail exponent", pass, &details);
}

#[test]
fn a08_trap_point_process() {
    let start = Instant::now();
    let law = lstar();
    let n_horizon: i64 = 100_000;
    let delta = 0.2;
    let n_envs = 2000u64;
    let m_width = trap_look_ahead(n_horizon);
    let mut counts = Vec::with_capacity(n_envs as usize);
    let mut locs = Vec::new();
    let mut thetas = Vec::new();
    let mut cluster_counts = Vec::with_capacity(n_envs as usize);
    for e in 0..n_envs {
        let seed = derive_key(808, e);
        let (w, rho) = m1_stream(&law, seed, n_horizon as usize + m_width, 400);
        let records = detect_traps(&w, &rho, n_horizon, delta, S_STAR).unwrap();
        let scale = (n_horizon as f64).powf(1.0 / S_STAR);
        let mut c = 0u64;
        let mut clusters = 0u64;
        let mut last = i64::MIN;
        for r in records.iter().filter(|r| !r.clipped) {
            c += 1;
            if r.marked_n - last > 200 {
                clusters += 1;
            }
            last = r.marked_n;
            locs.push(r.marked_n as f64 / n_horizon as f64);
            thetas.push(r.mass / scale);
        }
        counts.push(c);
        cluster_counts.push(clusters);
    }
    let disp = dispersion_test(&counts).unwrap();
    // diagnostic only: counts with marked sites < 200 layers apart merged,
    // showing whether overdispersion is pure excursion splitting
    let cluster_disp = dispersion_test(&cluster_counts).unwrap();
    let uni = ks_one_sample(&locs, |x| x.clamp(0.0, 1.0)).unwrap();
    // log-log slope of the empirical Theta survival over [delta, 10 delta]
    let mut sorted = thetas.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = sorted.len() as f64;
    let mut pts = Vec::new();
    for g in 0..20 {
        let t = delta * 10f64.powf(g as f64 / 19.0);
        let above = sorted.len() - sorted.partition_point(|&x| x <= t);
        if above > 0 {
            pts.push((t.ln(), (above as f64 / total).ln()));
        }
    }
    let (_, slope, _) = linear_fit(&pts);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (0.8..=1.2).contains(&disp.statistic)
        && uni.p_value > 0.01
        && (slope + S_STAR).abs() < 0.15
        && elapsed < 1800.0;
    report(
        8,
        "trap point process",
        pass,
        &format!(
            "dispersion {:.3} (cluster-merged {:.3}), location KS p {:.3}, tail slope {:.3} vs {:.3}, {} traps / {n_envs} envs, {elapsed:.0}s",
            disp.statistic,
            cluster_disp.statistic,
            uni.p_value,
            slope,
            -S_STAR,
            thetas.len()
        ),
    );
}

#[test]
fn a09_gamma_exponentiality() {
    let start = Instant::now();
    let law = lstar();
    let n_horizon: i64 = 10_000;
    let delta = 0.2;
    // find an environment carrying at least two bulk traps
    let mut chosen = None;
    for e in 0..400u64 {
        let seed = derive_key(909, e);
        let m_width = trap_look_ahead(n_horizon);
        let (w, rho) = m1_stream(&law, seed, n_horizon as usize + m_width, 400);
        let records = detect_traps(&w, &rho, n_horizon, delta, S_STAR).unwrap();
        let bulk: Vec<_> = records.into_iter().filter(|r| !r.clipped && r.marked_n > 10).collect();
        // keep one marked site per physical trap: a deep excursion can
        // re-cross the threshold and mark several nearby sites, whose visit
        // counts are trivially correlated; the independence claim under test
        // concerns well-separated traps
        let mut sep: Vec<_> = Vec::new();
        for r in bulk {
            if sep.last().map_or(true, |p: &TrapRecord| r.marked_n - p.marked_n > 200) {
                sep.push(r);
            }
        }
        if sep.len() >= 2 {
            chosen = Some((seed, sep, rho));
            break;
        }
    }
    let (seed, records, rho) = chosen.expect("an environment with >= 2 traps in 400 draws");
    let rho_y: Vec<Vec<f64>> = rho.iter().map(|&r| vec![r]).collect();
    let env = sample_iid_environment(&law, -600, n_horizon + 200, seed).unwrap();
    let l = m1_cutoff(&env, n_horizon, 1e-9, 180);
    let reps = 10_000u64;
    let mut pooled: Vec<f64> = Vec::new();
    let mut per_trap: Vec<Vec<f64>> = vec![Vec::new(); records.len()];
    for r in 0..reps {
        let mut rng = CounterRng::for_replica(seed ^ 0x9090, r);
        let run = edge_crossing_run(&env, 0, n_horizon + l as i64, &mut rng).unwrap();
        let sample =
            theta_gamma(&records, |n, _| run.xi_at(n), &rho_y, n_horizon, S_STAR).unwrap();
        for (j, p) in sample.points.iter().enumerate() {
            let g = p.gamma.unwrap();
            per_trap[j].push(g);
            if !p.flagged {
                pooled.push(g);
            }
        }
    }
    let ks = ks_one_sample(&pooled, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() }).unwrap();
    // worst pairwise correlation across traps
    let mut worst_corr = 0.0f64;
    for a in 0..per_trap.len() {
        for b in a + 1..per_trap.len() {
            let xs = &per_trap[a];
            let ys = &per_trap[b];
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
            let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            worst_corr = worst_corr.max((cov / (vx * vy).sqrt()).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ks.p_value > 0.01 && worst_corr < 0.05 && elapsed < 1800.0;
    report(
        9,
        "Gamma exponentiality",
        pass,
        &format!(
            "{} traps, pooled n {}, KS vs Exp(1) p {:.3}, worst |corr| {:.4}, {elapsed:.0}s",
            records.len(),
            pooled.len(),
            ks.p_value,
            worst_corr
        ),
    );
}

#[test]
fn a10_annealed_stable_limit() {
    let start = Instant::now();
    let law = lstar();
    let n_horizon: i64 = 10_000;
    let pairs = 5000u64;
    let scale = (n_horizon as f64).powf(1.0 / S_STAR);
    let mut t_norm = Vec::with_capacity(pairs as usize);
    for i in 0..pairs {
        let env_seed = derive_key(1010, i);
        let env = sample_iid_environment(&law, -400, n_horizon + 200, env_seed).unwrap();
        let l = m1_cutoff(&env, n_horizon, 1e-6, 180);
        let mut rng = CounterRng::for_replica(env_seed ^ 0x1010, 0);
        let run = edge_crossing_run(&env, 0, n_horizon + l as i64, &mut rng).unwrap();
        t_norm.push(run.time_in(0, n_horizon - 1) as f64 / scale);
    }
    let mut oracle = Vec::with_capacity(pairs as usize);
    let mut orng = CounterRng::new(20_261_010);
    for _ in 0..pairs {
        oracle.push(stable_sum_oracle(S_STAR, 0.1, &mut orng).unwrap());
    }
    // both laws are one-sided positive, so the free limit constant is a pure
    // scale; match by the median ratio and refine it against the KS distance
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let (med_t, med_o) = (median(&t_norm), median(&oracle));
    let mut ks = None;
    for k in -10..=10i32 {
        let a = med_t / med_o * (1.0 + 0.01 * k as f64);
        let matched: Vec<f64> = oracle.iter().map(|x| a * x).collect();
        let trial = ks_two_sample(&t_norm, &matched).unwrap();
        if ks.as_ref().map_or(true, |b: &TestReport| trial.statistic < b.statistic) {
            ks = Some(trial);
        }
    }
    let ks = ks.unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ks.p_value > 0.001 && elapsed < 3600.0;
    report(
        10,
        "annealed stable limit",
        pass,
        &format!(
            "KS p {:.4} (D {:.4}), T/N^(1/s) median {:.3}, {elapsed:.0}s",
            ks.p_value, ks.statistic, med_t
        ),
    );
}

#[test]
fn a11_bounded_jump_embedding() {
    let start = Instant::now();
    let atoms = vec![
        vec![0.25, 0.25, 0.0, 0.25, 0.25],
        vec![0.10, 0.20, 0.0, 0.30, 0.40],
    ];
    let weights = vec![0.5, 0.5];
    let law = embed_bounded_jump(atoms.clone(), weights.clone(), 2, 0.01).unwrap();
    let target_layer: i64 = 30;
    let target_x = target_layer * 2;
    let reps = 10_000u64;

    // strip walks on embedded environments
    let mut strip_times = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        let env_seed = derive_key(1111, r);
        let env = sample_iid_environment(&law, -80, target_layer + 2, env_seed).unwrap();
        let stepper = Stepper::new(&env).unwrap();
        let mut rng = CounterRng::for_replica(env_seed ^ 0x1111, 0);
        let s = run_to_hit_with(&stepper, Site { layer: 0, rung: 1 }, target_layer, &mut rng, 10_000_000)
            .unwrap();
        strip_times.push(s.hit_time as f64);
    }

    // 1D bounded-jump walks on environments from the same law
    let mut line_times = Vec::with_capacity(reps as usize);
    for r in 0..reps {
        let env_seed = derive_key(2222, r);
        let mut rng = CounterRng::for_replica(env_seed ^ 0x2222, 0);
        let mut x: i64 = 0;
        let mut steps = 0u64;
        let mut jump_cache: HashMap<i64, Vec<f64>> = HashMap::new();
        while x < target_x {
            let jv = jump_cache
                .entry(x)
                .or_insert_with(|| law.sample_site_jumps(env_seed, x).unwrap());
            let u: f64 = rand::Rng::gen(&mut rng);
            let mut acc = 0.0;
            let mut jumped = 2i64; // fallback: +2 (the largest jump)
            for (idx, &pj) in jv.iter().enumerate() {
                acc += pj;
                if u < acc {
                    jumped = idx as i64 - 2;
                    break;
                }
            }
            x += jumped;
            steps += 1;
            assert!(steps < 10_000_000, "1D walk did not reach the target");
        }
        line_times.push(steps as f64);
    }

    let ks = ks_two_sample(&strip_times, &line_times).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ks.p_value > 0.01 && elapsed < 300.0;
    report(
        11,
        "bounded-jump embedding equivalence",
        pass,
        &format!(
            "KS p {:.3} (D {:.4}), means {:.1} vs {:.1}, {elapsed:.0}s",
            ks.p_value,
            ks.statistic,
            strip_times.iter().sum::<f64>() / reps as f64,
            line_times.iter().sum::<f64>() / reps as f64
        ),
    );
}
