//! Trap detection and the normalized point process: massive/marked sites of
//! the w-sequence, trap windows and masses, R-centers, and the Theta/Gamma
//! decomposition of normalized occupation times.

use crate::algebra::ChainState;
use crate::env::EnvironmentWindow;
use crate::error::{Error, Result};
use crate::occupation::{limit_functional, u_vector, w_sequence, Rung};

/// One marked trap: window [marked_n - M, marked_n], its rho-mass and center.
#[derive(Clone, Debug)]
pub struct TrapRecord {
    pub marked_n: i64,
    /// inclusive [left, right] with right = marked_n
    pub window: (i64, i64),
    /// mass = sum of rho over the window
    pub mass: f64,
    /// R-center (R = 1: rightmost argmax of w)
    pub center: i64,
    pub delta: f64,
    pub n_horizon: i64,
    /// true when the window was clipped at layer 0 (marked_n < M)
    pub clipped: bool,
}

/// M = floor(ln ln N), the look-ahead / window width.
pub fn trap_look_ahead(n_horizon: i64) -> usize {
    if n_horizon < 16 {
        return 0;
    }
    (n_horizon as f64).ln().ln().floor().max(0.0) as usize
}

/// Scan w over [0, N-1] for marked massive sites. `w` is indexed from layer 0
/// and must cover [0, N-1+M]; `rho` must cover [0, N-1].
pub fn detect_traps(
    w: &[f64],
    rho: &[f64],
    n_horizon: i64,
    delta: f64,
    s: f64,
) -> Result<Vec<TrapRecord>> {
    detect_traps_with_m(w, rho, n_horizon, delta, s, trap_look_ahead(n_horizon))
}

/// `detect_traps` with an explicit window width M (exposed for calibration
/// and oracle tests; production callers use `detect_traps`).
pub fn detect_traps_with_m(
    w: &[f64],
    rho: &[f64],
    n_horizon: i64,
    delta: f64,
    s: f64,
    m_width: usize,
) -> Result<Vec<TrapRecord>> {
    if n_horizon < 1 || delta <= 0.0 || s <= 0.0 {
        return Err(Error::Config("need N >= 1, delta > 0, s > 0".into()));
    }
    let n = n_horizon as usize;
    if w.len() < n + m_width {
        return Err(Error::Config(format!(
            "w covers {} layers, need {} (N + M look-ahead)",
            w.len(),
            n + m_width
        )));
    }
    if rho.len() < n {
        return Err(Error::Config(format!("rho covers {} layers, need {n}", rho.len())));
    }
    let threshold = delta * (n_horizon as f64).powf(1.0 / s);
    let mut records = Vec::new();
    for site in 0..n {
        if w[site] < threshold {
            continue;
        }
        if (1..=m_width).any(|j| w[site + j] >= threshold) {
            continue; // massive but not marked
        }
        let left = site as i64 - m_width as i64;
        let clipped = left < 0;
        let lo = left.max(0);
        let mass: f64 = rho[lo as usize..=site].iter().sum();
        let window = (lo, site as i64);
        records.push(TrapRecord {
            marked_n: site as i64,
            window,
            mass,
            center: trap_center(w, window, 1.0),
            delta,
            n_horizon,
            clipped,
        });
    }
    debug_assert!(records.windows(2).all(|p| p[0].window.1 < p[1].window.0));
    Ok(records)
}

/// Rightmost point of the window dominating the rest up to a factor R:
/// the largest index nb in the window with R * w[nb] >= w[n] for all n.
/// With R = 1 this is the argmax with rightmost tie-breaking.
pub fn trap_center(w: &[f64], window: (i64, i64), r: f64) -> i64 {
    let (lo, hi) = window;
    let max = (lo..=hi).map(|n| w[n as usize]).fold(f64::NEG_INFINITY, f64::max);
    (lo..=hi)
        .rev()
        .find(|&n| r * w[n as usize] >= max)
        .unwrap_or(hi)
}

/// One point of the normalized trap process, with an optional Gamma mark.
#[derive(Clone, Debug)]
pub struct PointEntry {
    pub marked_n: i64,
    /// location n_j / N in [0, 1]
    pub loc: f64,
    /// Theta_j = mass / N^{1/s}
    pub theta: f64,
    /// Gamma_j = xi at the trap's heaviest site over its rho (when attached)
    pub gamma: Option<f64>,
    /// the walk never visited the trap's reference site
    pub flagged: bool,
}

#[derive(Clone, Debug, Default)]
pub struct PointSample {
    pub points: Vec<PointEntry>,
}

/// Normalized (location, Theta) pairs, sorted by location. Clipped records
/// are excluded (boundary windows distort the limit statistics).
pub fn point_process(records: &[TrapRecord], n_horizon: i64, s: f64) -> PointSample {
    let scale = (n_horizon as f64).powf(1.0 / s);
    let mut points: Vec<PointEntry> = records
        .iter()
        .filter(|r| !r.clipped)
        .map(|r| PointEntry {
            marked_n: r.marked_n,
            loc: r.marked_n as f64 / n_horizon as f64,
            theta: r.mass / scale,
            gamma: None,
            flagged: false,
        })
        .collect();
    points.sort_by(|a, b| a.loc.partial_cmp(&b.loc).unwrap());
    PointSample { points }
}

/// Attach Gamma marks from one trajectory: for each record, the reference
/// rung k_j is the argmax over y of rho_{n_j,y} (lowest index on ties) and
/// Gamma_j = xi_{(n_j,k_j)} / rho_{n_j,k_j}. A missed trap records a flagged
/// zero.
pub fn theta_gamma(
    records: &[TrapRecord],
    xi_at: impl Fn(i64, usize) -> u64,
    rho_y: &[Vec<f64>],
    n_horizon: i64,
    s: f64,
) -> Result<PointSample> {
    let scale = (n_horizon as f64).powf(1.0 / s);
    let mut points = Vec::new();
    for r in records.iter().filter(|r| !r.clipped) {
        let row = rho_y
            .get(r.marked_n as usize)
            .ok_or_else(|| Error::Config(format!("rho_y missing layer {}", r.marked_n)))?;
        let mut k = 1usize;
        for (y, &v) in row.iter().enumerate() {
            if v > row[k - 1] {
                k = y + 1;
            }
        }
        let rho_nk = row[k - 1];
        if !(rho_nk > 0.0) {
            return Err(Error::Numeric(format!("rho at ({}, {k}) not positive", r.marked_n)));
        }
        let xi = xi_at(r.marked_n, k);
        let flagged = xi == 0;
        points.push(PointEntry {
            marked_n: r.marked_n,
            loc: r.marked_n as f64 / n_horizon as f64,
            theta: r.mass / scale,
            gamma: Some(xi as f64 / rho_nk),
            flagged,
        });
    }
    points.sort_by(|a, b| a.loc.partial_cmp(&b.loc).unwrap());
    Ok(PointSample { points })
}

/// Normalized occupation-time statistics for one environment.
#[derive(Clone, Debug)]
pub struct Normalized {
    /// t_N per replica
    pub t: Vec<f64>,
    /// centering u_N used (0 for s < 1)
    pub u: f64,
}

/// Empirical (1 - 1/N) quantile of the rho pool, the threshold x_N.
pub fn x_n_quantile(rho_pool: &[f64], n_horizon: i64) -> Result<f64> {
    if rho_pool.is_empty() {
        return Err(Error::InsufficientData("empty rho pool".into()));
    }
    let mut pool = rho_pool.to_vec();
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = 1.0 - 1.0 / n_horizon as f64;
    let idx = ((pool.len() as f64 - 1.0) * q).round() as usize;
    Ok(pool[idx.min(pool.len() - 1)])
}

/// Case split of the normalization of T_N by the stable index:
/// - 0 < s < 1: t = T / N^{1/s};
/// - s = 1: t = (T - u_N) / N with u_N = N E(rho; rho < x_N) from the pool;
/// - 1 < s < 2: t = (T - quenched mean) / N^{1/s}.
pub fn normalize_tn_un(
    t_samples: &[f64],
    e_omega_t: f64,
    n_horizon: i64,
    s: f64,
    rho_pool: Option<&[f64]>,
) -> Result<Normalized> {
    if !(s > 0.0 && s < 2.0) {
        return Err(Error::OutOfRegime(format!("s = {s} outside (0, 2)")));
    }
    let nf = n_horizon as f64;
    if s < 1.0 - 1e-9 {
        let scale = nf.powf(1.0 / s);
        return Ok(Normalized { t: t_samples.iter().map(|t| t / scale).collect(), u: 0.0 });
    }
    if (s - 1.0).abs() <= 1e-9 {
        let pool = rho_pool
            .ok_or_else(|| Error::InsufficientData("s = 1 needs a rho pool".into()))?;
        if (pool.len() as i64) < 100 * n_horizon {
            return Err(Error::InsufficientData(format!(
                "s = 1 needs >= {} rho samples, got {}",
                100 * n_horizon,
                pool.len()
            )));
        }
        let x_n = x_n_quantile(pool, n_horizon)?;
        let trunc_mean = pool.iter().filter(|&&r| r < x_n).sum::<f64>() / pool.len() as f64;
        let u = nf * trunc_mean;
        return Ok(Normalized { t: t_samples.iter().map(|t| (t - u) / nf).collect(), u });
    }
    let scale = nf.powf(1.0 / s);
    Ok(Normalized {
        t: t_samples.iter().map(|t| (t - e_omega_t) / scale).collect(),
        u: e_omega_t,
    })
}

/// Backward lambda-product mass profile of a trap window.
#[derive(Clone, Debug)]
pub struct MassProfile {
    /// a[k] = sum_{j=0..k} (lambda_{n-j+1} .. lambda_n) l_{n-j}(u_{n-j}),
    /// the predicted mass of [n-k, n] in units of w_n
    pub a: Vec<f64>,
    /// record.mass / (w_n * a.last()): near 1 for deep traps
    pub mass_ratio: f64,
}

/// Evaluate the backward profile for a trap window against the chain.
pub fn mass_profile(
    chain: &ChainState,
    env: &EnvironmentWindow,
    record: &TrapRecord,
    radius: usize,
) -> Result<MassProfile> {
    let (lo, n) = record.window;
    if lo <= chain.first || n > chain.last() {
        return Err(Error::Config("chain does not cover the trap window".into()));
    }
    let radius = radius.min((chain.last() - n) as usize);
    let mut a = Vec::with_capacity((n - lo + 1) as usize);
    let mut lam_prod = 1.0;
    let mut acc = 0.0;
    for j in 0..=(n - lo) {
        let site = n - j;
        if j > 0 {
            lam_prod *= chain.lambda(site + 1);
        }
        let u = u_vector(env.triple(site), chain.zeta(site - 1), Rung::All)?;
        acc += lam_prod * limit_functional(chain, site, &u, radius);
        a.push(acc);
    }
    let (w, _) = w_sequence(chain, (n, n))?;
    let predicted = w[0] * acc;
    let mass_ratio = if predicted > 0.0 { record.mass / predicted } else { f64::NAN };
    Ok(MassProfile { a, mass_ratio })
}
