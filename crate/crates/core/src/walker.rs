//! Quenched trajectory simulation: hitting times, occupation times in the box
//! [L_0, L_{N-1}], visit-count statistics, and an exact edge-crossing sampler
//! for m = 1 that skips step-by-step simulation.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::algebra::ChainState;
use crate::env::{transition_distribution, EnvironmentWindow, Site};
use crate::error::{Error, Result};
use crate::occupation::return_probability_bound;
use crate::rng::CounterRng;

/// One quenched run: counts over the box [L_0, L_{N-1}].
#[derive(Clone, Debug)]
pub struct TrajectorySummary {
    pub start: Site,
    /// steps to first entry of L_N
    pub hit_time: u64,
    /// total steps spent in the box, up to the certified cutoff
    pub occupation_time: u64,
    /// per-layer visit counts xi_n for n in [0, N-1]
    pub xi_layer: Vec<u64>,
    /// sparse per-site counts xi_{(n,i)}, including sites left of 0
    pub xi_site: HashMap<(i64, usize), u64>,
    /// residual return-probability bound backing the cutoff (0 for pure hitting runs)
    pub cutoff_certificate: f64,
    pub cutoff_l: usize,
}

/// Precomputed per-site cumulative transition tables for fast stepping.
pub struct Stepper {
    first: i64,
    m: usize,
    // [layer][rung-1] -> cumulative (threshold, next site)
    tables: Vec<Vec<Vec<(f64, Site)>>>,
}

impl Stepper {
    pub fn new(env: &EnvironmentWindow) -> Result<Self> {
        let mut tables = Vec::with_capacity((env.last_layer() - env.first_layer + 1) as usize);
        for n in env.first_layer..=env.last_layer() {
            let mut per_rung = Vec::with_capacity(env.m);
            for i in 1..=env.m {
                // interior layers only; edge layers get empty tables and step() errors there
                let dist = if n > env.first_layer && n < env.last_layer() {
                    transition_distribution(env, Site { layer: n, rung: i })?
                } else {
                    Vec::new()
                };
                let mut cum = Vec::with_capacity(dist.len());
                let mut acc = 0.0;
                for (site, p) in dist {
                    if p > 0.0 {
                        acc += p;
                        cum.push((acc, site));
                    }
                }
                if let Some(last) = cum.last_mut() {
                    last.0 = f64::INFINITY; // absorb rounding in the final band
                }
                per_rung.push(cum);
            }
            tables.push(per_rung);
        }
        Ok(Stepper { first: env.first_layer, m: env.m, tables })
    }

    #[inline]
    pub fn step(&self, z: Site, rng: &mut CounterRng) -> Result<Site> {
        let idx = (z.layer - self.first) as usize;
        let cum = self
            .tables
            .get(idx)
            .and_then(|r| r.get(z.rung - 1))
            .ok_or(Error::Boundary { layer: z.layer, rung: z.rung })?;
        if cum.is_empty() {
            return Err(Error::Boundary { layer: z.layer, rung: z.rung });
        }
        let u: f64 = rng.gen();
        for &(threshold, site) in cum {
            if u < threshold {
                return Ok(site);
            }
        }
        Ok(cum.last().unwrap().1)
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

/// One transition of the quenched walk.
pub fn step(env: &EnvironmentWindow, z: Site, rng: &mut CounterRng) -> Result<Site> {
    let dist = transition_distribution(env, z)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (site, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(*site);
        }
    }
    Ok(dist.last().expect("stochastic row").0)
}

fn walk_until(
    stepper: &Stepper,
    start: Site,
    n_target: i64,
    stop_layer: i64,
    rng: &mut CounterRng,
    max_steps: u64,
) -> Result<(TrajectorySummary, Site)> {
    let n_box = n_target.max(0) as usize;
    let mut xi_layer = vec![0u64; n_box];
    let mut xi_site: HashMap<(i64, usize), u64> = HashMap::new();
    let mut z = start;
    let mut steps = 0u64;
    let mut in_box = 0u64;
    let mut hit_time: Option<u64> = None;
    loop {
        if z.layer >= stop_layer {
            if hit_time.is_none() && z.layer >= n_target {
                hit_time = Some(steps);
            }
            break;
        }
        if hit_time.is_none() && z.layer >= n_target {
            hit_time = Some(steps);
        }
        // the walk spends this time unit at z
        if z.layer >= 0 && z.layer < n_target {
            in_box += 1;
            xi_layer[z.layer as usize] += 1;
        }
        *xi_site.entry((z.layer, z.rung)).or_insert(0) += 1;
        if steps >= max_steps {
            return Err(Error::Timeout { max_steps, target: stop_layer });
        }
        z = stepper.step(z, rng)?;
        steps += 1;
    }
    let summary = TrajectorySummary {
        start,
        hit_time: hit_time.unwrap_or(steps),
        occupation_time: in_box,
        xi_layer,
        xi_site,
        cutoff_certificate: 0.0,
        cutoff_l: 0,
    };
    Ok((summary, z))
}

/// Run until the first entry of L_N; counts cover the pre-hit segment only.
pub fn run_to_hit(
    env: &EnvironmentWindow,
    start: Site,
    n_target: i64,
    rng: &mut CounterRng,
    max_steps: u64,
) -> Result<TrajectorySummary> {
    let stepper = Stepper::new(env)?;
    run_to_hit_with(&stepper, start, n_target, rng, max_steps)
}

/// `run_to_hit` against a prebuilt stepper (for replica loops).
pub fn run_to_hit_with(
    stepper: &Stepper,
    start: Site,
    n_target: i64,
    rng: &mut CounterRng,
    max_steps: u64,
) -> Result<TrajectorySummary> {
    let (summary, _) = walk_until(stepper, start, n_target, n_target, rng, max_steps)?;
    Ok(summary)
}

/// Smallest cutoff l with return_probability_bound(n = N-1, l) < tail_eps.
pub fn certified_cutoff(
    chain: &ChainState,
    env: &EnvironmentWindow,
    n_target: i64,
    tail_eps: f64,
) -> Result<(usize, f64)> {
    let n = n_target - 1;
    let mut l = 1usize;
    loop {
        let bound = return_probability_bound(chain, env, n, l)?;
        if bound < tail_eps {
            // first l in the doubling bracket that certifies
            let mut lo = l / 2 + 1;
            while lo < l {
                let b = return_probability_bound(chain, env, n, lo)?;
                if b < tail_eps {
                    return Ok((lo, b));
                }
                lo += 1;
            }
            return Ok((l, bound));
        }
        l *= 2;
        if l > (chain.last() - n_target).max(0) as usize + 1 {
            return Err(Error::NeedsWiderWindow { need: 2 * l, side: "right" });
        }
    }
}

/// Full occupation time T_N of the box [L_0, L_{N-1}]: simulate until the
/// walk reaches L_{N + l*}, where l* certifies that a later return to the box
/// has probability < tail_eps.
pub fn occupation_time(
    env: &EnvironmentWindow,
    chain: &ChainState,
    start: Site,
    n_target: i64,
    rng: &mut CounterRng,
    tail_eps: f64,
    max_steps: u64,
) -> Result<TrajectorySummary> {
    let (l, certificate) = certified_cutoff(chain, env, n_target, tail_eps)?;
    let stepper = Stepper::new(env)?;
    let (mut summary, _) =
        walk_until(&stepper, start, n_target, n_target + l as i64, rng, max_steps)?;
    summary.cutoff_certificate = certificate;
    summary.cutoff_l = l;
    Ok(summary)
}

/// Empirical visit-count statistics at sites a (and optionally b) across replicas.
#[derive(Clone, Debug)]
pub struct VisitStatistics {
    pub n_replicas: usize,
    pub mean_a: f64,
    pub var_a: f64,
    /// implied no-return probability p_a from E = q/p, Var = q(2-q-p)/p^2
    pub implied_p: f64,
    /// implied at-least-one-visit probability q_a
    pub implied_q: f64,
    pub corr_ab: Option<f64>,
    /// conditioned counts xi_a | xi_a >= 1, for the geometric fit
    pub conditioned_counts: Vec<u64>,
    pub wide_ci: bool,
}

pub fn visit_statistics(
    summaries: &[TrajectorySummary],
    a: Site,
    b: Option<Site>,
) -> Result<VisitStatistics> {
    if summaries.is_empty() {
        return Err(Error::InsufficientData("no replicas".into()));
    }
    let key_a = (a.layer, a.rung);
    let xs: Vec<f64> = summaries
        .iter()
        .map(|s| *s.xi_site.get(&key_a).unwrap_or(&0) as f64)
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    // invert E = q/p, Var = q(2-q-p)/p^2: p = 2E/(Var + E^2 + E), q = pE
    let denom = var + mean * mean + mean;
    let implied_p = if denom > 0.0 { (2.0 * mean / denom).clamp(0.0, 1.0) } else { f64::NAN };
    let implied_q = (implied_p * mean).clamp(0.0, 1.0);
    let corr_ab = b.map(|b| {
        let key_b = (b.layer, b.rung);
        let ys: Vec<f64> = summaries
            .iter()
            .map(|s| *s.xi_site.get(&key_b).unwrap_or(&0) as f64)
            .collect();
        let mean_b = ys.iter().sum::<f64>() / n;
        let var_b = ys.iter().map(|y| (y - mean_b).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mean) * (y - mean_b))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        cov / (var * var_b).sqrt()
    });
    let conditioned_counts: Vec<u64> = summaries
        .iter()
        .filter_map(|s| s.xi_site.get(&key_a).copied())
        .filter(|&c| c >= 1)
        .collect();
    Ok(VisitStatistics {
        n_replicas: xs.len(),
        mean_a: mean,
        var_a: var,
        implied_p,
        implied_q,
        corr_ab,
        conditioned_counts,
        wide_ci: xs.len() < 1000,
    })
}

/// Exact per-site visit counts for one m = 1 run, via the edge-crossing
/// (branching) decomposition instead of step-by-step simulation.
#[derive(Clone, Debug)]
pub struct CrossingSample {
    /// leftmost visited layer
    pub first: i64,
    /// xi[idx] is the visit count at layer first + idx; covers [first, target-1]
    pub xi: Vec<u64>,
    /// total steps until the first entry of the target layer
    pub total: u64,
}

impl CrossingSample {
    pub fn xi_at(&self, n: i64) -> u64 {
        let idx = n - self.first;
        if idx < 0 || idx as usize >= self.xi.len() {
            0
        } else {
            self.xi[idx as usize]
        }
    }

    /// total time spent in [lo, hi]
    pub fn time_in(&self, lo: i64, hi: i64) -> u64 {
        (lo.max(self.first)..=hi.min(self.first + self.xi.len() as i64 - 1))
            .map(|n| self.xi[(n - self.first) as usize])
            .sum()
    }
}

/// NegBin(r, p): failures before the r-th success, exact via the
/// Gamma–Poisson mixture (handles r up to ~1e9 without looping).
fn neg_binomial(r: u64, p: f64, rng: &mut CounterRng) -> u64 {
    if r == 0 {
        return 0;
    }
    if r <= 32 {
        // sum of r geometric(p) failure counts by inversion
        let lq = (1.0 - p).ln();
        let mut total = 0u64;
        for _ in 0..r {
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            total += (u.ln() / lq).floor() as u64;
        }
        return total;
    }
    let gamma = Gamma::new(r as f64, (1.0 - p) / p).expect("valid gamma");
    let lambda: f64 = gamma.sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("valid poisson").sample(rng) as u64
}

/// Walk from (start, 1) to the first entry of layer `target` for an m = 1
/// environment with no lazy component: sample every per-layer visit count
/// exactly by the backward crossing recursion.
pub fn edge_crossing_run(
    env: &EnvironmentWindow,
    start: i64,
    target: i64,
    rng: &mut CounterRng,
) -> Result<CrossingSample> {
    if env.m != 1 {
        return Err(Error::OutOfRegime("edge-crossing sampler requires m = 1".into()));
    }
    if start >= target || start < env.first_layer || target > env.last_layer() {
        return Err(Error::Config(format!(
            "need first_layer <= start < target <= last_layer, got {start}, {target}"
        )));
    }
    let p_at = |n: i64| -> Result<f64> {
        let t = env.triple(n);
        if t.r[(0, 0)] > 1e-12 {
            return Err(Error::OutOfRegime("edge-crossing sampler requires R = 0".into()));
        }
        Ok(t.p[(0, 0)])
    };
    // d[n] = jumps n -> n-1; u[n] = jumps n -> n+1; xi_n = u[n] + d[n].
    // Between start and target the edge above n is crossed net once, so
    // u[n] = d[n+1] + 1; left of start the net is zero, so u[n] = d[n+1].
    let mut xi_rev: Vec<u64> = Vec::with_capacity((target - start) as usize + 8);
    let mut d_next: u64 = 0; // d[target] = 0: the walk stops on arrival
    let mut total: u64 = 0;
    for n in (start..target).rev() {
        let up = d_next + 1;
        let down = neg_binomial(up, p_at(n)?, rng);
        xi_rev.push(up + down);
        total += up + down;
        d_next = down;
    }
    let mut first = start;
    let mut n = start - 1;
    while d_next > 0 {
        if n < env.first_layer {
            return Err(Error::NeedsWiderWindow {
                need: 2 * (start - env.first_layer).max(4) as usize,
                side: "left",
            });
        }
        let up = d_next;
        let down = neg_binomial(up, p_at(n)?, rng);
        xi_rev.push(up + down);
        total += up + down;
        d_next = down;
        first = n;
        n -= 1;
    }
    xi_rev.reverse();
    Ok(CrossingSample { first, xi: xi_rev, total })
}

/// Quenched expected visit counts for the m = 1 crossing decomposition:
/// E xi_n with e_n = E d_n following e_n = (e_{n+1} + 1) q_n / p_n inside
/// [start, target) and e_n = e_{n+1} q_n / p_n to the left. Exact oracle for
/// the sampler's mean.
pub fn expected_crossings(
    env: &EnvironmentWindow,
    start: i64,
    target: i64,
) -> Result<HashMap<i64, f64>> {
    if env.m != 1 {
        return Err(Error::OutOfRegime("m = 1 only".into()));
    }
    let ratio = |n: i64| {
        let t = env.triple(n);
        t.q[(0, 0)] / t.p[(0, 0)]
    };
    let mut out = HashMap::new();
    let mut e_next = 0.0f64;
    for n in (start..target).rev() {
        let e = (e_next + 1.0) * ratio(n);
        out.insert(n, e_next + 1.0 + e);
        e_next = e;
    }
    let mut n = start - 1;
    while e_next > 1e-14 && n >= env.first_layer {
        let e = e_next * ratio(n);
        out.insert(n, e_next + e);
        e_next = e;
        n -= 1;
    }
    Ok(out)
}
