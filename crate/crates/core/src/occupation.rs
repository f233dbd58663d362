//! Closed-form expected occupation times.
//!
//! For a walk started at (k, i), the expected time spent at site (n, y) is
//! the series F_k(n,y) = sum_j zeta_k..zeta_{j-1} A_j..A_{n+1} u_{n,y} with
//! u_{n,y} = (I - Q_n zeta_{n-1} - R_n)^{-1} e_y. Layer expectations rho_n
//! replace the zeta products by the limiting row vector pi_j, and w_n is the
//! scalar shadow of rho_n along the (pi, v, lambda) factorization.

use nalgebra::{DMatrix, DVector};

use crate::algebra::ChainState;
use crate::env::{row_sum_norm, EnvironmentWindow, Triple};
use crate::error::{Error, Result};

/// Right-hand side selector for `u_vector`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rung {
    /// single rung y (1-based): solves for e_y
    One(usize),
    /// all rungs: solves for the ones vector, giving the bold u_n
    All,
}

/// u_{n,y} = (I - Q_n zeta_{n-1} - R_n)^{-1} e_y, or the bold u_n for `All`.
pub fn u_vector(t: &Triple, zeta_prev: &DMatrix<f64>, y: Rung) -> Result<DVector<f64>> {
    let m = t.m();
    let rhs = match y {
        Rung::One(y) => {
            if y < 1 || y > m {
                return Err(Error::Structural(format!("rung {y} outside [1,{m}]")));
            }
            DVector::from_fn(m, |i, _| if i + 1 == y { 1.0 } else { 0.0 })
        }
        Rung::All => DVector::from_element(m, 1.0),
    };
    let sys = DMatrix::identity(m, m) - &t.r - &t.q * zeta_prev;
    sys.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Ellipticity("I - Q*zeta - R is singular".into()))
}

/// All u_{n,y} at once: column y-1 of the returned matrix is u_{n,y}.
pub fn u_matrix(t: &Triple, zeta_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = t.m();
    let sys = DMatrix::identity(m, m) - &t.r - &t.q * zeta_prev;
    sys.lu()
        .try_inverse()
        .ok_or_else(|| Error::Ellipticity("I - Q*zeta - R is singular".into()))
}

const TAIL_RATIO_WINDOW: usize = 10;
const TAIL_SAFETY: f64 = 10.0;

/// Truncation state for the A-product series: tracks a recent decay ratio and
/// certifies the remaining sum once the running term is small enough.
struct TailTracker {
    tol: f64,
    recent: Vec<f64>,
}

impl TailTracker {
    fn new(tol: f64) -> Self {
        TailTracker { tol, recent: Vec::new() }
    }

    /// Feed the next term norm; returns certified remaining-sum bound once
    /// the series may stop.
    fn push(&mut self, norm: f64) -> Option<f64> {
        self.recent.push(norm);
        if self.recent.len() > TAIL_RATIO_WINDOW + 1 {
            self.recent.remove(0);
        }
        if self.recent.len() < TAIL_RATIO_WINDOW + 1 {
            return None;
        }
        let first = self.recent[0];
        if norm == 0.0 {
            return Some(0.0); // underflowed product: the remaining sum is numerically zero
        }
        if !(first > 0.0) {
            return None;
        }
        // windowed geometric-mean decay rate (single-step ratios fluctuate
        // above 1 for mixture laws, so a max-ratio certificate never fires)
        let ratio = (norm / first).powf(1.0 / TAIL_RATIO_WINDOW as f64);
        if !(ratio < 1.0) {
            return None;
        }
        let bound = norm * ratio / (1.0 - ratio);
        (bound * TAIL_SAFETY < self.tol).then_some(bound)
    }
}

/// Expected occupation times F_k(n,y): component i is the expected time at
/// (n,y) for the walk started at (k, i+1). Truncated with a certified tail.
pub fn expected_occupation(
    chain: &ChainState,
    env: &EnvironmentWindow,
    k: i64,
    n: i64,
    y: usize,
    tail_tol: f64,
) -> Result<DVector<f64>> {
    let lo = chain.first + 1;
    if k < lo || n < lo {
        return Err(Error::Config(format!("k = {k}, n = {n} must be >= {lo}")));
    }
    let u = u_vector(env.triple(n), chain.zeta(n - 1), Rung::One(y))?;
    let m = env.m;
    let start = k.max(n); // series starts at n for k < n, at k for k >= n
    // g_j = A_j .. A_{n+1} u  (identity product when j <= n)
    let mut g = u.clone();
    for j in n + 1..=start {
        g = chain.a(j) * g;
    }
    // left zeta product zeta_k .. zeta_{j-1}, identity when k >= j
    let mut left = DMatrix::identity(m, m);
    for j in k..start {
        left = &left * chain.zeta(j);
    }
    let mut total = &left * &g;
    let mut tracker = TailTracker::new(tail_tol);
    let mut j = start;
    loop {
        j += 1;
        if j > chain.last() {
            return Err(Error::NeedsWiderWindow { need: 2 * (j - n) as usize, side: "right" });
        }
        left = &left * chain.zeta(j - 1);
        g = chain.a(j) * g;
        total += &left * &g;
        if let Some(_bound) = tracker.push(g.amax()) {
            return Ok(total);
        }
    }
}

/// Per-layer occupation expectations over a range of layers.
#[derive(Clone, Debug)]
pub struct OccupationProfile {
    pub first: i64,
    /// rho_{n,y} indexed [n - first][y - 1]
    pub rho_y: Vec<Vec<f64>>,
    /// rho_n = sum_y rho_{n,y}
    pub rho: Vec<f64>,
    /// w_n scalars over the same range
    pub w: Vec<f64>,
    /// l_n(bold u_n), the limiting A-product functional at the bold u
    pub l_u: Vec<f64>,
    /// remainder rho_n - l_n(u_n) w_n, computed by subtraction
    pub remainder: Vec<f64>,
    pub truncation_used: usize,
    pub tail_bound: f64,
}

/// rho_{n,y} and rho_n for n in `range`, with certified truncation.
pub fn rho_profile(
    chain: &ChainState,
    env: &EnvironmentWindow,
    range: (i64, i64),
    tail_tol: f64,
) -> Result<OccupationProfile> {
    let (lo, hi) = range;
    if lo > hi || lo <= chain.first || hi > chain.last() {
        return Err(Error::Config(format!(
            "range [{lo},{hi}] must lie in ({}, {}]",
            chain.first,
            chain.last()
        )));
    }
    let mut rho_y = Vec::with_capacity((hi - lo + 1) as usize);
    let mut rho = Vec::with_capacity(rho_y.capacity());
    let mut max_trunc = 0usize;
    let mut max_tail = 0.0f64;
    for n in lo..=hi {
        // G_j = A_j .. A_{n+1} U_n, columns indexed by y
        let mut g = u_matrix(env.triple(n), chain.zeta(n - 1))?;
        let mut acc = (chain.pi(n) * &g).transpose();
        let mut tracker = TailTracker::new(tail_tol);
        let mut j = n;
        let tail = loop {
            j += 1;
            if j > chain.last() {
                return Err(Error::NeedsWiderWindow { need: 2 * (j - n) as usize, side: "right" });
            }
            g = chain.a(j) * g;
            acc += (chain.pi(j) * &g).transpose();
            if let Some(bound) = tracker.push(row_sum_norm(&g)) {
                break bound;
            }
        };
        max_trunc = max_trunc.max((j - n) as usize);
        max_tail = max_tail.max(tail);
        rho.push(acc.iter().sum());
        rho_y.push(acc.iter().copied().collect());
    }
    let (w, w_tail) = w_sequence(chain, (lo, hi))?;
    max_tail = max_tail.max(w_tail);
    // l_n(u_n) via the A-product / lambda-product ratio at a finite radius
    let mut l_u = Vec::with_capacity(rho.len());
    let mut remainder = Vec::with_capacity(rho.len());
    for (idx, n) in (lo..=hi).enumerate() {
        let u = u_vector(env.triple(n), chain.zeta(n - 1), Rung::All)?;
        let radius = 30.min((chain.last() - n) as usize);
        let l = limit_functional(chain, n, &u, radius);
        l_u.push(l);
        remainder.push(rho[idx] - l * w[idx]);
    }
    Ok(OccupationProfile {
        first: lo,
        rho_y,
        rho,
        w,
        l_u,
        remainder,
        truncation_used: max_trunc,
        tail_bound: max_tail,
    })
}

/// l_n(u) approximated at radius r: ||A_{n+r}..A_{n+1} u|| / (lambda_{n+1}..lambda_{n+r}).
pub fn limit_functional(chain: &ChainState, n: i64, u: &DVector<f64>, r: usize) -> f64 {
    let mut g = u.clone();
    let mut log_lam = 0.0;
    let mut log_g = 0.0;
    for j in n + 1..=n + r as i64 {
        g = chain.a(j) * g;
        let norm = g.amax();
        g /= norm;
        log_g += norm.ln();
        log_lam += chain.lambda(j).ln();
    }
    (log_g - log_lam).exp()
}

/// w_n over `range` by the backward recursion w_n = (pi_n, v_n) + lambda_{n+1} w_{n+1},
/// seeded 0 at the chain's right edge. The index convention follows the series
/// form of w (each term j > n carries lambda_j .. lambda_{n+1}); the recursion
/// as printed with lambda_n is inconsistent with that series and is not used.
/// Returns the values and a tail bound for the truncation at the right edge.
pub fn w_sequence(chain: &ChainState, range: (i64, i64)) -> Result<(Vec<f64>, f64)> {
    let (lo, hi) = range;
    if lo > hi || lo <= chain.first || hi > chain.last() {
        return Err(Error::Config(format!(
            "range [{lo},{hi}] must lie in ({}, {}]",
            chain.first,
            chain.last()
        )));
    }
    let right = chain.last();
    let mut w = 0.0;
    let mut out = vec![0.0; (hi - lo + 1) as usize];
    // log lambda-product from hi+1 to the right edge, for the tail bound
    let mut log_prod_tail = 0.0;
    let mut sum_log_lambda = 0.0;
    let mut count = 0usize;
    for n in (lo..=right).rev() {
        if n < right {
            let lam = chain.lambda(n + 1);
            w = lam * w + pi_dot_v(chain, n);
            sum_log_lambda += lam.ln();
            count += 1;
            if n >= hi {
                log_prod_tail += lam.ln();
            }
        } else {
            w = pi_dot_v(chain, n);
        }
        if n <= hi {
            out[(n - lo) as usize] = w;
        }
    }
    // geometric tail estimate for the lambda-products past the right edge
    let mean_rate = (sum_log_lambda / count.max(1) as f64).exp();
    let tail = if mean_rate < 1.0 {
        // (pi, v) <= 1, products from hi decay by log_prod_tail then ~ mean_rate
        TAIL_SAFETY * log_prod_tail.exp() * mean_rate / (1.0 - mean_rate)
    } else {
        f64::INFINITY
    };
    Ok((out, tail))
}

/// m = 1 fast path: w_n and rho_n over [lo, hi] by the scalar backward
/// recursions w_n = 1 + (q_{n+1}/p_{n+1}) w_{n+1} and rho_n = w_n / p_n
/// (zeta = 1, pi = 1, v = 1, lambda_n = A_n = q_n/p_n, u_n = 1/p_n, so the
/// series for rho collapses to u_n * w_n with zero remainder).
/// The recursion is seeded 0 at the window's right edge; callers must leave
/// enough right slack that the products of q/p decay below their tolerance.
pub fn m1_w_rho(env: &EnvironmentWindow, lo: i64, hi: i64) -> Result<(Vec<f64>, Vec<f64>)> {
    if env.m != 1 {
        return Err(Error::OutOfRegime("m1_w_rho requires m = 1".into()));
    }
    if lo > hi || lo < env.first_layer || hi > env.last_layer() {
        return Err(Error::Config(format!(
            "range [{lo},{hi}] outside window [{}, {}]",
            env.first_layer,
            env.last_layer()
        )));
    }
    let len = (hi - lo + 1) as usize;
    let mut w = vec![0.0f64; len];
    let mut rho = vec![0.0f64; len];
    let mut w_next = 0.0f64;
    let mut ratio_next = 0.0f64; // q/p at layer n+1
    for n in (lo..=env.last_layer()).rev() {
        let t = env.triple(n);
        let p = t.p[(0, 0)];
        let q = t.q[(0, 0)];
        let w_n = 1.0 + ratio_next * w_next;
        if n <= hi {
            let idx = (n - lo) as usize;
            w[idx] = w_n;
            rho[idx] = w_n / p; // u_n = 1/(1 - q zeta - r) = 1/p with zeta = 1
        }
        w_next = w_n;
        ratio_next = q / p;
    }
    Ok((w, rho))
}

#[inline]
fn pi_dot_v(chain: &ChainState, n: i64) -> f64 {
    chain.pi(n).iter().zip(chain.v(n).iter()).map(|(a, b)| a * b).sum()
}

/// Upper bound on the probability that the walk ever revisits layer n after
/// reaching layer n+l: ||bold u_n|| * sum_{j >= n+l} ||A_j .. A_{n+1}||,
/// evaluated with certified truncation. Vacuous (>= 1) for small l.
pub fn return_probability_bound(
    chain: &ChainState,
    env: &EnvironmentWindow,
    n: i64,
    l: usize,
) -> Result<f64> {
    if n <= chain.first {
        return Err(Error::Config(format!("n = {n} must be > {}", chain.first)));
    }
    let u = u_vector(env.triple(n), chain.zeta(n - 1), Rung::All)?;
    let u_norm = u.amax();
    let m = env.m;
    let mut prod = DMatrix::<f64>::identity(m, m);
    let mut log_norm = 0.0f64;
    // the j = n term of the sum is the identity product
    let mut total = if l == 0 { 1.0 } else { 0.0 };
    let mut tracker = TailTracker::new(1e-3); // relative tail on the sum
    let mut j = n;
    loop {
        j += 1;
        if j > chain.last() {
            return Err(Error::NeedsWiderWindow { need: 2 * (j - n) as usize, side: "right" });
        }
        prod = chain.a(j) * prod;
        let norm = row_sum_norm(&prod);
        prod /= norm;
        log_norm += norm.ln();
        let term = log_norm.exp();
        if j >= n + l as i64 {
            total += term;
        }
        if let Some(bound) = tracker.push(term) {
            if j >= n + l as i64 {
                total += bound;
                break;
            }
        }
    }
    Ok(u_norm * total)
}
