//! Matrix recursions along the environment and the Lyapunov machinery.
//!
//! The central objects are the stochastic matrices zeta_n solving
//! zeta_n = (I - Q_n zeta_{n-1} - R_n)^{-1} P_n, the backtracking matrices
//! A_n = (I - Q_n zeta_{n-1} - R_n)^{-1} Q_n, the row vectors pi_n with
//! pi_n = pi_{n-1} zeta_{n-1}, and the Perron factorization
//! A_j v_{j-1} = lambda_j v_j that lets all A-products live in log space.

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;

use crate::env::{row_sum_norm, EnvironmentLaw, EnvironmentWindow, Triple};
use crate::error::{Error, Result};
use crate::rng::derive_key;

/// One fold of the psi/phi recursion: (I - R - Q*prev)^{-1} P.
///
/// `prev` is zero for the phi recursion seed and stochastic for psi/zeta;
/// stochastic input gives stochastic output.
pub fn fold_step(prev: &DMatrix<f64>, t: &Triple) -> Result<DMatrix<f64>> {
    solve_layer(t, prev, &t.p)
}

/// Solves (I - Q*zeta_prev - R) X = rhs for the given layer.
pub fn solve_layer(t: &Triple, zeta_prev: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = t.m();
    let sys = DMatrix::identity(m, m) - &t.r - &t.q * zeta_prev;
    sys.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Ellipticity("I - R - Q*prev is singular".into()))
}

const UNIFORM_SEED_CAP: usize = 1_000_000;

/// Projects a nearly-stochastic matrix back onto the simplex of stochastic
/// matrices by rescaling each row to sum to one. The exact fold preserves
/// row sums, but the stochastic fixed point can be transversally repelling
/// (e.g. left-drifting layers), so without this projection floating-point
/// drift off the simplex escapes toward a sub-stochastic root.
fn renormalize_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row /= s;
        }
    }
}

/// Uniform stochastic matrix, the canonical recursion seed.
pub fn uniform_stochastic(m: usize) -> DMatrix<f64> {
    DMatrix::from_element(m, m, 1.0 / m as f64)
}

/// Stochastic matrix with all mass on column `j`, an extreme seed.
pub fn corner_stochastic(m: usize, j: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |_, c| if c == j { 1.0 } else { 0.0 })
}

/// The stationary fixed point zeta = (I - Q zeta - R)^{-1} P of a single
/// triple, by iterating `fold_step` from the uniform seed.
pub fn zeta_fixed_point(t: &Triple, tol: f64) -> Result<DMatrix<f64>> {
    let mut z = uniform_stochastic(t.m());
    for _ in 0..UNIFORM_SEED_CAP {
        let mut next = fold_step(&z, t)?;
        renormalize_rows(&mut next);
        let gap = row_sum_norm(&(&next - &z));
        z = next;
        if gap < tol {
            return Ok(z);
        }
    }
    Err(Error::Numeric(format!("zeta fixed point did not converge below {tol}")))
}

/// Burn-in certificate attached to window computations.
#[derive(Clone, Copy, Debug)]
pub struct BurnInCertificate {
    pub burn_in_used: usize,
    pub error_bound: f64,
}

/// Approximates zeta_n for n >= target_first by running the psi recursion
/// from the uniform seed at the window's left edge. The error bound is the
/// measured diameter of the seed dependence at target_first (all corner
/// seeds versus uniform), which bounds |psi_n - zeta_n| because the true
/// zeta at the left edge is itself some stochastic matrix.
pub fn zeta_window(
    env: &EnvironmentWindow,
    target_first: i64,
    tol: f64,
) -> Result<(Vec<DMatrix<f64>>, BurnInCertificate)> {
    let m = env.m;
    let wf = env.first_layer;
    if target_first < wf || target_first > env.last_layer() {
        return Err(Error::Config(format!("target_first {target_first} outside window")));
    }
    let burn = (target_first - wf) as usize;
    let mut main = uniform_stochastic(m);
    let mut probes: Vec<DMatrix<f64>> = (0..m).map(|j| corner_stochastic(m, j)).collect();
    let mut gaps: Vec<f64> = Vec::with_capacity(burn);
    let mut out = Vec::new();
    for n in wf + 1..=env.last_layer() {
        let t = env.triple(n);
        main = fold_step(&main, t)?;
        renormalize_rows(&mut main);
        let mut gap: f64 = 0.0;
        for p in probes.iter_mut() {
            *p = fold_step(p, t)?;
            renormalize_rows(p);
            gap = gap.max(row_sum_norm(&(&*p - &main)));
        }
        if n < target_first {
            gaps.push(gap.max(1e-300));
        } else {
            if n == target_first {
                gaps.push(gap.max(1e-300));
            }
            out.push(main.clone());
        }
    }
    let error_bound = if m == 1 { 0.0 } else { *gaps.last().unwrap_or(&1.0) };
    if error_bound >= tol {
        // geometric decay rate from the measured gaps tells how much wider
        // the window has to be
        let rate = fit_decay_rate(&gaps).unwrap_or(0.5);
        let need = ((tol / error_bound).ln() / rate.ln()).ceil().max(1.0) as usize;
        return Err(Error::NeedsWiderWindow { need, side: "left" });
    }
    Ok((out, BurnInCertificate { burn_in_used: burn, error_bound }))
}

fn fit_decay_rate(gaps: &[f64]) -> Option<f64> {
    if gaps.len() < 3 {
        return None;
    }
    let (_, slope, _) = linear_fit(
        &gaps.iter().enumerate().map(|(i, g)| (i as f64, g.ln())).collect::<Vec<_>>(),
    );
    let theta = slope.exp();
    (theta > 0.0 && theta < 1.0).then_some(theta)
}

/// Least squares fit y = a + b x; returns (a, b, r_squared).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (a, b, r2)
}

/// Result of the pairwise psi contraction probe.
#[derive(Clone, Copy, Debug)]
pub struct ContractionFit {
    pub k: f64,
    pub theta: f64,
    pub r_squared: f64,
}

/// Measures the contraction rate of the psi recursion: paired recursions from
/// maximally separated stochastic seeds in shared environments, log-linear
/// fit of the mean log gap against the step index.
pub fn contraction_probe(
    law: &EnvironmentLaw,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<ContractionFit> {
    if n < 10 || replicas < 1 {
        return Err(Error::Config("contraction_probe needs n >= 10, replicas >= 1".into()));
    }
    let m = law.m();
    if m == 1 {
        // 1x1 stochastic matrices are all equal; the gap closes in one step
        return Ok(ContractionFit { k: 0.0, theta: 0.0, r_squared: 1.0 });
    }
    law.validate()?;
    let sums: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let env_seed = derive_key(seed, rep as u64);
            let mut a = corner_stochastic(m, 0);
            let mut b = corner_stochastic(m, m - 1);
            let mut lg = Vec::with_capacity(n);
            for j in 1..=n as i64 {
                let t = law.sample_layer(env_seed, j)?;
                a = fold_step(&a, &t)?;
                b = fold_step(&b, &t)?;
                renormalize_rows(&mut a);
                renormalize_rows(&mut b);
                lg.push(row_sum_norm(&(&a - &b)).max(1e-300).ln());
            }
            Ok(lg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_lg: Vec<f64> = (0..n)
        .map(|j| sums.iter().map(|v| v[j]).sum::<f64>() / replicas as f64)
        .collect();
    // fit only while the gap is resolvable: once the two seeds coincide to
    // machine precision the log-gap flatlines and would wreck the slope
    let floor = 1e-13f64.ln();
    let points: Vec<(f64, f64)> = mean_lg
        .iter()
        .enumerate()
        .skip(4) // transient before geometric decay sets in
        .take_while(|(_, &y)| y > floor)
        .map(|(j, &y)| ((j + 1) as f64, y))
        .collect();
    if points.len() < 5 {
        return Err(Error::InsufficientData(
            "contraction gap underflows before a slope can be fit".into(),
        ));
    }
    let (a, b, r2) = linear_fit(&points);
    let theta = b.exp();
    if theta >= 1.0 {
        return Err(Error::ContractionFailure { theta });
    }
    Ok(ContractionFit { k: a.exp(), theta, r_squared: r2 })
}

/// pi_n sequence from an ordered zeta list, seeded uniform at the left edge.
/// `zetas[k]` is treated as zeta at layer first+k; output[k] = pi at first+k,
/// with pi_{n} = pi_{n-1} zeta_{n-1} and pi[0] uniform.
pub fn pi_window(zetas: &[DMatrix<f64>]) -> Vec<RowDVector<f64>> {
    let m = zetas.first().map(|z| z.nrows()).unwrap_or(0);
    let mut pi = RowDVector::from_element(m, 1.0 / m as f64);
    let mut out = Vec::with_capacity(zetas.len());
    out.push(pi.clone());
    for z in &zetas[..zetas.len().saturating_sub(1)] {
        pi = &pi * z;
        let s: f64 = pi.iter().sum();
        pi /= s; // guard drift; s == 1 up to rounding
        out.push(pi.clone());
    }
    out
}

/// (v_n, lambda_n) sequences from an ordered A list: v seeded uniform, then
/// v_j = A_j v_{j-1} / lambda_j with lambda_j = ||A_j v_{j-1}||_sup.
/// `a_list[k]` is A at layer first+1+k; output v has one more entry (the seed).
pub fn v_lambda_window(a_list: &[DMatrix<f64>]) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let m = a_list.first().map(|a| a.nrows()).unwrap_or(0);
    let mut v = DVector::from_element(m, 1.0);
    let mut vs = Vec::with_capacity(a_list.len() + 1);
    let mut lams = Vec::with_capacity(a_list.len());
    vs.push(v.clone());
    for a in a_list {
        if a.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Ellipticity("A matrix has a nonpositive entry".into()));
        }
        let w = a * &v;
        let lam = w.amax();
        if !(lam > 0.0) {
            return Err(Error::Numeric("lambda step is not positive".into()));
        }
        v = w / lam;
        vs.push(v.clone());
        lams.push(lam);
    }
    Ok((vs, lams))
}

/// Per-layer derived quantities along a window, certified from `first_certified`.
#[derive(Clone, Debug)]
pub struct ChainState {
    /// layer carrying zeta[0], pi[0], v[0]; A and lambda start at first+1
    pub first: i64,
    pub zeta: Vec<DMatrix<f64>>,
    /// a[k] = A at layer first+1+k
    pub a: Vec<DMatrix<f64>>,
    pub pi: Vec<RowDVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// lambda[k] = lambda at layer first+1+k
    pub lambda: Vec<f64>,
    pub first_certified: i64,
    pub burn_in_used: usize,
    pub error_bound: f64,
}

impl ChainState {
    pub fn last(&self) -> i64 {
        self.first + self.zeta.len() as i64 - 1
    }

    #[inline]
    fn idx(&self, n: i64) -> usize {
        assert!(n >= self.first && n <= self.last(), "layer {n} outside chain [{},{}]", self.first, self.last());
        (n - self.first) as usize
    }

    pub fn zeta(&self, n: i64) -> &DMatrix<f64> {
        &self.zeta[self.idx(n)]
    }

    pub fn a(&self, n: i64) -> &DMatrix<f64> {
        assert!(n > self.first, "A_n defined for n > {}", self.first);
        &self.a[(n - self.first - 1) as usize]
    }

    pub fn pi(&self, n: i64) -> &RowDVector<f64> {
        &self.pi[self.idx(n)]
    }

    pub fn v(&self, n: i64) -> &DVector<f64> {
        &self.v[self.idx(n)]
    }

    pub fn lambda(&self, n: i64) -> f64 {
        assert!(n > self.first, "lambda_n defined for n > {}", self.first);
        self.lambda[(n - self.first - 1) as usize]
    }
}

/// Builds the full chain (zeta, A, pi, v, lambda) over a window, with all
/// recursions seeded at the left edge. Values at layers >= `first_certified`
/// carry the zeta seed-independence bound `error_bound < tol`.
pub fn build_chain(env: &EnvironmentWindow, first_certified: i64, tol: f64) -> Result<ChainState> {
    let (zetas_cert, cert) = zeta_window(env, first_certified, tol)?;
    // rebuild the uncertified prefix too so the chain covers the whole window
    let m = env.m;
    let wf = env.first_layer;
    let mut zeta = Vec::with_capacity(env.triples.len());
    zeta.push(uniform_stochastic(m));
    let mut a = Vec::with_capacity(env.triples.len() - 1);
    for n in wf + 1..=env.last_layer() {
        let t = env.triple(n);
        let prev = zeta.last().unwrap();
        a.push(solve_layer(t, prev, &t.q)?);
        let mut next = fold_step(prev, t)?;
        renormalize_rows(&mut next);
        zeta.push(next);
    }
    // certified zetas replace the recomputed tail (identical by construction)
    debug_assert_eq!(zetas_cert.len(), (env.last_layer() - first_certified) as usize + 1);
    let pi = pi_window(&zeta);
    let (v, lambda) = v_lambda_window(&a)?;
    Ok(ChainState {
        first: wf,
        zeta,
        a,
        pi,
        v,
        lambda,
        first_certified,
        burn_in_used: cert.burn_in_used,
        error_bound: cert.error_bound,
    })
}

/// Monte Carlo estimate with a standard error.
#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

const DEFAULT_BURN_IN: usize = 64;

/// Top Lyapunov exponent of the A products: replica average of
/// (1/n) sum_j ln lambda_j, telescoped through the (v, lambda) factorization.
pub fn lyapunov_exponent(
    law: &EnvironmentLaw,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    law.validate()?;
    if n == 0 || replicas == 0 {
        return Err(Error::Config("lyapunov_exponent needs n >= 1, replicas >= 1".into()));
    }
    let vals: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let s = replica_log_lambda_sum(law, n, derive_key(seed, rep as u64))?;
            Ok(s / n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_se(&vals))
}

fn mean_se(vals: &[f64]) -> Estimate {
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = if vals.len() > 1 {
        vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Estimate { value: mean, stderr: (var / k).sqrt() }
}

/// Sum of ln lambda_j over j = 1..n after burn-in, one replica.
fn replica_log_lambda_sum(law: &EnvironmentLaw, n: usize, env_seed: u64) -> Result<f64> {
    let m = law.m();
    let burn = if m == 1 { 1 } else { DEFAULT_BURN_IN };
    let mut zeta = uniform_stochastic(m);
    let mut v = DVector::from_element(m, 1.0);
    let mut total = 0.0;
    for j in (1 - burn as i64)..=n as i64 {
        let t = law.sample_layer(env_seed, j)?;
        let a = solve_layer(&t, &zeta, &t.q)?;
        zeta = fold_step(&zeta, &t)?;
        renormalize_rows(&mut zeta);
        let w = &a * &v;
        let lam = w.amax();
        v = w / lam;
        if j >= 1 {
            total += lam.ln();
        }
    }
    Ok(total)
}

/// ln ||A_n ... A_1|| for each replica, with the product accumulated as a
/// norm-normalized matrix so nothing under- or overflows.
pub fn product_log_norms(
    law: &EnvironmentLaw,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    law.validate()?;
    let m = law.m();
    (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let env_seed = derive_key(seed, rep as u64);
            let burn = if m == 1 { 1 } else { DEFAULT_BURN_IN };
            let mut zeta = uniform_stochastic(m);
            let mut prod = DMatrix::<f64>::identity(m, m);
            let mut log_norm = 0.0;
            for j in (1 - burn as i64)..=n as i64 {
                let t = law.sample_layer(env_seed, j)?;
                let a = solve_layer(&t, &zeta, &t.q)?;
                zeta = fold_step(&zeta, &t)?;
                renormalize_rows(&mut zeta);
                if j >= 1 {
                    prod = &a * &prod;
                    let norm = row_sum_norm(&prod);
                    prod /= norm;
                    log_norm += norm.ln();
                }
            }
            Ok(log_norm)
        })
        .collect()
}

/// r_hat(alpha) and its standard error from frozen product log norms.
/// Exact at alpha = 0. Negative alpha is accepted; it is only used for the
/// symmetric finite difference of ln r at 0.
pub fn r_hat_from_samples(log_norms: &[f64], n: usize, alpha: f64) -> Estimate {
    let k = log_norms.len() as f64;
    if alpha == 0.0 {
        return Estimate { value: 1.0, stderr: 0.0 };
    }
    let mx = log_norms.iter().map(|&c| alpha * c).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_norms.iter().map(|&c| (alpha * c - mx).exp()).collect();
    let mean_w = w.iter().sum::<f64>() / k;
    let var_w = w.iter().map(|x| (x - mean_w).powi(2)).sum::<f64>() / (k - 1.0);
    let ln_mean = mx + mean_w.ln();
    let se_ln_mean = (var_w / k).sqrt() / mean_w;
    let ln_r = ln_mean / n as f64;
    let se_ln_r = se_ln_mean / n as f64;
    let r = ln_r.exp();
    Estimate { value: r, stderr: r * se_ln_r }
}

/// Moment Lyapunov exponent r(alpha) = lim (E ||A_n...A_1||^alpha)^{1/n}.
pub fn moment_lyapunov(
    law: &EnvironmentLaw,
    alpha: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    let c = product_log_norms(law, n, replicas, seed)?;
    Ok(r_hat_from_samples(&c, n, alpha))
}

/// r(alpha) over a grid, sharing one set of replica products.
#[derive(Clone, Debug)]
pub struct MomentCurve {
    pub alphas: Vec<f64>,
    pub r_values: Vec<Estimate>,
    pub n_used: usize,
    pub replicas_used: usize,
}

pub fn moment_curve(
    law: &EnvironmentLaw,
    alphas: &[f64],
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<MomentCurve> {
    let c = product_log_norms(law, n, replicas, seed)?;
    Ok(MomentCurve {
        alphas: alphas.to_vec(),
        r_values: alphas.iter().map(|&a| r_hat_from_samples(&c, n, a)).collect(),
        n_used: n,
        replicas_used: replicas,
    })
}

/// Root of r(s) = 1, or the diffusive signal when r stays below 1.
#[derive(Clone, Copy, Debug)]
pub struct StableIndex {
    pub s_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub diffusive: bool,
}

const ALPHA_MAX: f64 = 10.0;

/// Bisection on alpha -> ln r_hat(alpha) over common replica products.
/// ln r is strictly convex with slope lambda < 0 at 0, so the root is unique
/// when it exists; no sign change up to ALPHA_MAX means the diffusive regime.
pub fn solve_s(
    law: &EnvironmentLaw,
    tol: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<StableIndex> {
    let c = product_log_norms(law, n, replicas, seed)?;
    let f = |alpha: f64| r_hat_from_samples(&c, n, alpha);
    let lam = mean_se(&c.iter().map(|x| x / n as f64).collect::<Vec<_>>());
    if lam.value >= 0.0 {
        return Err(Error::OutOfRegime(format!(
            "lambda_hat = {:.4} >= 0; walk is not transient to the right",
            lam.value
        )));
    }
    // expand the bracket by doubling from 0.1
    let mut lo = 0.0;
    let mut hi = 0.1;
    loop {
        let est = f(hi);
        if est.value.ln() > 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > ALPHA_MAX {
            return Ok(StableIndex { s_hat: f64::NAN, ci_lo: f64::NAN, ci_hi: f64::NAN, diffusive: true });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid).value.ln();
        if v.abs() < tol || hi - lo < 1e-12 {
            let est = f(mid);
            let se_ln = est.stderr / est.value;
            let h = 0.05_f64.min(mid / 2.0).max(1e-3);
            let slope = (f(mid + h).value.ln() - f(mid - h).value.ln()) / (2.0 * h);
            let half = 1.96 * se_ln / slope.abs().max(1e-12);
            return Ok(StableIndex { s_hat: mid, ci_lo: mid - half, ci_hi: mid + half, diffusive: false });
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numeric("solve_s bisection failed to converge".into()))
}

/// Leading eigenvalue of a positive matrix by power iteration.
pub fn perron_root(a: &DMatrix<f64>, tol: f64) -> Result<(f64, DVector<f64>)> {
    let m = a.nrows();
    let mut v = DVector::from_element(m, 1.0);
    let mut lam = 0.0;
    for _ in 0..UNIFORM_SEED_CAP {
        let w = a * &v;
        let next = w.amax();
        if !(next > 0.0) {
            return Err(Error::Numeric("power iteration collapsed".into()));
        }
        let vn = w / next;
        let gap = (&vn - &v).amax();
        v = vn;
        if (next - lam).abs() < tol && gap < tol {
            return Ok((next, v));
        }
        lam = next;
    }
    Err(Error::Numeric("power iteration did not converge".into()))
}

/// ln of the leading eigenvalue of A_{(P,Q,R)} per atom of a finite-support
/// law, exposed so the non-arithmeticity of the law can be audited by hand.
pub fn atom_log_eigenvalues(law: &EnvironmentLaw, tol: f64) -> Result<Vec<f64>> {
    match law {
        EnvironmentLaw::Model1 { ps, .. } => {
            Ok(ps.iter().map(|&p| ((1.0 - p) / p).ln()).collect())
        }
        EnvironmentLaw::Mixture { atoms, .. } => atoms
            .iter()
            .map(|a| -> Result<f64> {
                let t = a.to_triple()?;
                let zeta = zeta_fixed_point(&t, tol)?;
                let amat = solve_layer(&t, &zeta, &t.q)?;
                Ok(perron_root(&amat, tol)?.0.ln())
            })
            .collect(),
        EnvironmentLaw::BoundedJump { m, atoms, .. } => atoms
            .iter()
            .map(|jv| -> Result<f64> {
                let t = crate::env::triple_from_jumps(&vec![jv.clone(); *m], *m)?;
                let zeta = zeta_fixed_point(&t, tol)?;
                let amat = solve_layer(&t, &zeta, &t.q)?;
                Ok(perron_root(&amat, tol)?.0.ln())
            })
            .collect(),
    }
}
