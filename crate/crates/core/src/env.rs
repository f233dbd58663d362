//! Random environments on the strip Z x {1..m}.
//!
//! An environment is a sequence of triples (P_n, Q_n, R_n) of m x m matrices:
//! P_n holds jump probabilities from layer n to layer n+1, Q_n to layer n-1,
//! R_n within layer n. P_n + Q_n + R_n is row-stochastic and the triples are
//! i.i.d. across layers.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Row-sum tolerance for stochasticity.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Row-sum defects up to this size may be repaired by explicit renormalization.
pub const RENORM_TOL: f64 = 1e-9;

/// One layer of jump probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// A site (n, i) on the strip, rungs are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub layer: i64,
    pub rung: usize,
}

impl Site {
    pub fn new(layer: i64, rung: usize) -> Self {
        Site { layer, rung }
    }
}

impl Triple {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = p.nrows();
        for (name, mat) in [("P", &p), ("Q", &q), ("R", &r)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Structural(format!(
                    "{name} is {}x{}, expected {m}x{m}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        Ok(Triple { p, q, r })
    }

    /// Scalar triple for the nearest-neighbour walk on Z (m = 1).
    pub fn scalar(p: f64, q: f64, r: f64) -> Self {
        Triple {
            p: DMatrix::from_element(1, 1, p),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
        }
    }

    pub fn m(&self) -> usize {
        self.p.nrows()
    }

    /// Row-wise renormalization of P+Q+R to exact stochasticity. Fails if any
    /// row is off by more than `RENORM_TOL`.
    pub fn renormalize_rows(&mut self) -> Result<()> {
        let m = self.m();
        for i in 0..m {
            let s: f64 = (0..m).map(|j| self.p[(i, j)] + self.q[(i, j)] + self.r[(i, j)]).sum();
            if (s - 1.0).abs() > RENORM_TOL {
                return Err(Error::Structural(format!(
                    "row {} sums to {s}, too far from 1 to renormalize",
                    i + 1
                )));
            }
            for j in 0..m {
                self.p[(i, j)] /= s;
                self.q[(i, j)] /= s;
                self.r[(i, j)] /= s;
            }
        }
        Ok(())
    }

    /// Violations of the triple invariants at ellipticity `eps`.
    pub fn violations(&self, eps: f64, layer: i64) -> Vec<Violation> {
        let m = self.m();
        let mut out = Vec::new();
        for (name, mat) in [("P", &self.p), ("Q", &self.q), ("R", &self.r)] {
            for i in 0..m {
                for j in 0..m {
                    let v = mat[(i, j)];
                    if !(v >= 0.0) {
                        out.push(Violation {
                            layer,
                            detail: format!("{name}({},{}) negative", i + 1, j + 1),
                            observed: v,
                        });
                    }
                }
            }
        }
        for i in 0..m {
            let s: f64 = (0..m).map(|j| self.p[(i, j)] + self.q[(i, j)] + self.r[(i, j)]).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation {
                    layer,
                    detail: format!("row sum of P+Q+R at row {}", i + 1),
                    observed: s,
                });
            }
        }
        let r_norm = row_sum_norm(&self.r);
        if !(r_norm < 1.0 - eps) {
            out.push(Violation {
                layer,
                detail: "||R|| >= 1 - eps".into(),
                observed: r_norm,
            });
        } else {
            // (I-R)^{-1} exists once ||R|| < 1
            let id = DMatrix::identity(m, m);
            match (&id - &self.r).clone().lu().try_inverse() {
                Some(inv) => {
                    for (name, mat) in [("(I-R)^-1 P", &(&inv * &self.p)), ("(I-R)^-1 Q", &(&inv * &self.q))] {
                        for i in 0..m {
                            for j in 0..m {
                                let v = mat[(i, j)];
                                if !(v > eps) {
                                    out.push(Violation {
                                        layer,
                                        detail: format!("{name}({},{}) <= eps", i + 1, j + 1),
                                        observed: v,
                                    });
                                }
                            }
                        }
                    }
                }
                None => out.push(Violation {
                    layer,
                    detail: "I - R singular".into(),
                    observed: f64::NAN,
                }),
            }
        }
        out
    }

    pub fn is_valid(&self, eps: f64) -> bool {
        self.violations(eps, 0).is_empty()
    }
}

/// Max absolute row sum, the matrix norm used throughout.
pub fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// One invariant violation found by `validate_environment`.
#[derive(Clone, Debug)]
pub struct Violation {
    pub layer: i64,
    pub detail: String,
    pub observed: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer {}: {} (observed {})", self.layer, self.detail, self.observed)
    }
}

/// A finite slab of quenched disorder: triples for layers `first_layer..=last_layer`.
#[derive(Clone, Debug)]
pub struct EnvironmentWindow {
    pub first_layer: i64,
    pub triples: Vec<Triple>,
    pub epsilon: f64,
    pub m: usize,
}

impl EnvironmentWindow {
    pub fn new(first_layer: i64, triples: Vec<Triple>, epsilon: f64) -> Result<Self> {
        let m = triples
            .first()
            .ok_or_else(|| Error::Structural("empty environment window".into()))?
            .m();
        if let Some(bad) = triples.iter().position(|t| t.m() != m) {
            return Err(Error::Structural(format!(
                "layer {} has width {}, expected {m}",
                first_layer + bad as i64,
                triples[bad].m()
            )));
        }
        Ok(EnvironmentWindow { first_layer, triples, epsilon, m })
    }

    pub fn last_layer(&self) -> i64 {
        self.first_layer + self.triples.len() as i64 - 1
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.first_layer && n <= self.last_layer()
    }

    pub fn triple(&self, n: i64) -> &Triple {
        assert!(self.contains(n), "layer {n} outside window [{}, {}]", self.first_layer, self.last_layer());
        &self.triples[(n - self.first_layer) as usize]
    }

    /// JSONL export, one layer per line: `{"n":..,"P":[[..]],"Q":[[..]],"R":[[..]]}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (k, t) in self.triples.iter().enumerate() {
            let line = LayerRecord {
                n: self.first_layer + k as i64,
                p: matrix_rows(&t.p),
                q: matrix_rows(&t.q),
                r: matrix_rows(&t.r),
            };
            out.push_str(&serde_json::to_string(&line).expect("layer serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, epsilon: f64) -> Result<Self> {
        let mut layers: Vec<(i64, Triple)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: LayerRecord = serde_json::from_str(line)
                .map_err(|e| Error::Structural(format!("line {}: {e}", ln + 1)))?;
            layers.push((rec.n, Triple::new(rows_matrix(&rec.p)?, rows_matrix(&rec.q)?, rows_matrix(&rec.r)?)?));
        }
        layers.sort_by_key(|(n, _)| *n);
        let first = layers.first().ok_or_else(|| Error::Structural("empty JSONL".into()))?.0;
        for (k, (n, _)) in layers.iter().enumerate() {
            if *n != first + k as i64 {
                return Err(Error::Structural(format!("missing layer {}", first + k as i64)));
            }
        }
        EnvironmentWindow::new(first, layers.into_iter().map(|(_, t)| t).collect(), epsilon)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    n: i64,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

pub fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Structural("matrix rows must be square and non-empty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// The law of one i.i.d. layer. Only finite-support laws are implemented.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvironmentLaw {
    /// Finite mixture of explicit strip triples.
    Mixture {
        m: usize,
        epsilon: f64,
        atoms: Vec<TripleData>,
        weights: Vec<f64>,
    },
    /// Model 1: nearest-neighbour walk on Z, p_n drawn from a finite set.
    Model1 {
        epsilon: f64,
        ps: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Model 3: walk on Z with jumps bounded by m; each site draws a jump
    /// distribution (vector over k = -m..m) from a finite set, and blocks of
    /// m sites are folded onto strip layers.
    BoundedJump {
        m: usize,
        epsilon: f64,
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

/// Row-major serializable form of a `Triple`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TripleData {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl TripleData {
    pub fn to_triple(&self) -> Result<Triple> {
        Triple::new(rows_matrix(&self.p)?, rows_matrix(&self.q)?, rows_matrix(&self.r)?)
    }

    pub fn from_triple(t: &Triple) -> Self {
        TripleData {
            p: matrix_rows(&t.p),
            q: matrix_rows(&t.q),
            r: matrix_rows(&t.r),
        }
    }
}

impl EnvironmentLaw {
    pub fn epsilon(&self) -> f64 {
        match self {
            EnvironmentLaw::Mixture { epsilon, .. }
            | EnvironmentLaw::Model1 { epsilon, .. }
            | EnvironmentLaw::BoundedJump { epsilon, .. } => *epsilon,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            EnvironmentLaw::Mixture { m, .. } | EnvironmentLaw::BoundedJump { m, .. } => *m,
            EnvironmentLaw::Model1 { .. } => 1,
        }
    }

    fn weights(&self) -> &[f64] {
        match self {
            EnvironmentLaw::Mixture { weights, .. }
            | EnvironmentLaw::Model1 { weights, .. }
            | EnvironmentLaw::BoundedJump { weights, .. } => weights,
        }
    }

    /// Checks weights and that every atom (after embedding for Model 3)
    /// satisfies the triple invariants at the law's epsilon.
    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.is_empty() {
            return Err(Error::Config("law has no atoms".into()));
        }
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!(
                "weights must be nonnegative and sum to 1 (sum = {})",
                w.iter().sum::<f64>()
            )));
        }
        let eps = self.epsilon();
        match self {
            EnvironmentLaw::Mixture { atoms, weights, .. } => {
                if atoms.len() != weights.len() {
                    return Err(Error::Config("atoms/weights length mismatch".into()));
                }
                for (k, a) in atoms.iter().enumerate() {
                    let t = a.to_triple()?;
                    if t.m() != self.m() {
                        return Err(Error::Config(format!("atom {k} has width {}", t.m())));
                    }
                    let v = t.violations(eps, 0);
                    if !v.is_empty() {
                        return Err(Error::Config(format!("atom {k} invalid: {}", v[0])));
                    }
                }
            }
            EnvironmentLaw::Model1 { ps, weights, .. } => {
                if ps.len() != weights.len() {
                    return Err(Error::Config("ps/weights length mismatch".into()));
                }
                for &p in ps {
                    if !(p > eps && 1.0 - p > eps) {
                        return Err(Error::Config(format!("p = {p} violates ellipticity {eps}")));
                    }
                }
            }
            EnvironmentLaw::BoundedJump { m, atoms, weights, .. } => {
                if atoms.len() != weights.len() {
                    return Err(Error::Config("atoms/weights length mismatch".into()));
                }
                for (k, jv) in atoms.iter().enumerate() {
                    if jv.len() != 2 * m + 1 {
                        return Err(Error::Config(format!(
                            "jump atom {k} has {} entries, expected {}",
                            jv.len(),
                            2 * m + 1
                        )));
                    }
                    if jv.iter().any(|&x| x < 0.0) || (jv.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                        return Err(Error::Config(format!("jump atom {k} is not a distribution")));
                    }
                }
                // worst-case single-atom layer must satisfy the strip invariants
                for (k, jv) in atoms.iter().enumerate() {
                    let t = triple_from_jumps(&vec![jv.clone(); *m], *m)?;
                    let v = t.violations(eps, 0);
                    if !v.is_empty() {
                        return Err(Error::Config(format!("embedded jump atom {k} invalid: {}", v[0])));
                    }
                }
            }
        }
        Ok(())
    }

    fn pick_atom(&self, rng: &mut impl Rng) -> usize {
        let w = self.weights();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            acc += wk;
            if u < acc {
                return k;
            }
        }
        w.len() - 1
    }

    /// Draws the triple of layer `n`; a pure function of (seed, n).
    pub fn sample_layer(&self, seed: u64, n: i64) -> Result<Triple> {
        let mut rng = CounterRng::for_layer(seed, n);
        match self {
            EnvironmentLaw::Mixture { atoms, .. } => atoms[self.pick_atom(&mut rng)].to_triple(),
            EnvironmentLaw::Model1 { ps, .. } => {
                let p = ps[self.pick_atom(&mut rng)];
                Ok(Triple::scalar(p, 1.0 - p, 0.0))
            }
            EnvironmentLaw::BoundedJump { m, atoms, .. } => {
                // one draw per site of the block; site i uses its own counter offset
                let jumps: Vec<Vec<f64>> =
                    (0..*m).map(|_| atoms[self.pick_atom(&mut rng)].clone()).collect();
                triple_from_jumps(&jumps, *m)
            }
        }
    }

    /// Draws the per-site jump vector of integer site `x` (Model 3 only).
    /// Uses the same stream as `sample_layer` of the block containing `x`, so
    /// the 1D walk and its strip embedding see identical disorder.
    pub fn sample_site_jumps(&self, seed: u64, x: i64) -> Result<Vec<f64>> {
        match self {
            EnvironmentLaw::BoundedJump { m, atoms, .. } => {
                let mi = *m as i64;
                let n = x.div_euclid(mi);
                let i = x.rem_euclid(mi) as usize; // 0-based rung
                let mut rng = CounterRng::for_layer(seed, n);
                let mut atom = 0;
                for _ in 0..=i {
                    atom = self.pick_atom(&mut rng);
                }
                Ok(atoms[atom].clone())
            }
            _ => Err(Error::Config("sample_site_jumps requires a bounded-jump law".into())),
        }
    }
}

/// Folds per-site jump vectors of one block onto a strip triple.
///
/// Strip site (n, i) represents the integer x = n*m + (i-1); `jumps[i-1]` is
/// the jump distribution at x, indexed by k + m for k = -m..m. P(i,j) is the
/// mass of the jump landing in block n+1 at rung j, Q for block n-1, R within
/// the block.
pub fn triple_from_jumps(jumps: &[Vec<f64>], m: usize) -> Result<Triple> {
    if jumps.len() != m {
        return Err(Error::Structural(format!("need {m} site vectors, got {}", jumps.len())));
    }
    for jv in jumps {
        if jv.len() != 2 * m + 1 {
            return Err(Error::Structural("jump vector length must be 2m+1".into()));
        }
    }
    let mut p = DMatrix::zeros(m, m);
    let mut q = DMatrix::zeros(m, m);
    let mut r = DMatrix::zeros(m, m);
    let mi = m as i64;
    for i in 0..m {
        let jv = &jumps[i];
        for k in -mi..=mi {
            let mass = jv[(k + mi) as usize];
            if mass == 0.0 {
                continue;
            }
            let target = i as i64 + k; // 0-based offset within blocks n-1..n+1
            let (block, j) = (target.div_euclid(mi), target.rem_euclid(mi) as usize);
            match block {
                1 => p[(i, j)] += mass,
                0 => r[(i, j)] += mass,
                -1 => q[(i, j)] += mass,
                _ => return Err(Error::Structural(format!("jump {k} exceeds bound {m}"))),
            }
        }
    }
    Triple::new(p, q, r)
}

/// Builds the strip law induced by a 1D bounded-jump law. Returns the law
/// unchanged if it already is one; this is the Model 3 embedding entry point.
pub fn embed_bounded_jump(atoms: Vec<Vec<f64>>, weights: Vec<f64>, m: usize, epsilon: f64) -> Result<EnvironmentLaw> {
    if m < 1 {
        return Err(Error::Config("jump bound m must be >= 1".into()));
    }
    let law = EnvironmentLaw::BoundedJump { m, epsilon, atoms, weights };
    law.validate()?;
    Ok(law)
}

/// Validation report for a whole window; empty means valid.
pub fn validate_environment(env: &EnvironmentWindow) -> Vec<Violation> {
    let mut out = Vec::new();
    for (k, t) in env.triples.iter().enumerate() {
        out.extend(t.violations(env.epsilon, env.first_layer + k as i64));
    }
    out
}

/// Samples an i.i.d. window covering layers a..=b. Layer n depends only on
/// (seed, n), so enlarging the window preserves shared layers.
pub fn sample_iid_environment(law: &EnvironmentLaw, a: i64, b: i64, seed: u64) -> Result<EnvironmentWindow> {
    if a > b {
        return Err(Error::Config(format!("a = {a} > b = {b}")));
    }
    law.validate()?;
    let triples: Result<Vec<Triple>> = (a..=b).map(|n| law.sample_layer(seed, n)).collect();
    EnvironmentWindow::new(a, triples?, law.epsilon())
}

/// Jump distribution from site z: masses to layer n+1 (rows of P), n-1 (Q)
/// and n (R). Requires both neighbour layers inside the window.
pub fn transition_distribution(env: &EnvironmentWindow, z: Site) -> Result<Vec<(Site, f64)>> {
    if !(env.contains(z.layer - 1) && env.contains(z.layer + 1)) {
        return Err(Error::Boundary { layer: z.layer, rung: z.rung });
    }
    if z.rung < 1 || z.rung > env.m {
        return Err(Error::Structural(format!("rung {} outside [1,{}]", z.rung, env.m)));
    }
    let t = env.triple(z.layer);
    let i = z.rung - 1;
    let mut out = Vec::with_capacity(3 * env.m);
    for j in 0..env.m {
        let mass = t.p[(i, j)];
        if mass > 0.0 {
            out.push((Site::new(z.layer + 1, j + 1), mass));
        }
    }
    for j in 0..env.m {
        let mass = t.q[(i, j)];
        if mass > 0.0 {
            out.push((Site::new(z.layer - 1, j + 1), mass));
        }
    }
    for j in 0..env.m {
        let mass = t.r[(i, j)];
        if mass > 0.0 {
            out.push((Site::new(z.layer, j + 1), mass));
        }
    }
    Ok(out)
}

/// Random valid triple for property tests and probes: Dirichlet-style rows
/// with the R part damped until the ellipticity margins hold.
pub fn random_valid_triple(m: usize, eps: f64, rng: &mut impl Rng) -> Triple {
    loop {
        let mut p = DMatrix::zeros(m, m);
        let mut q = DMatrix::zeros(m, m);
        let mut r = DMatrix::zeros(m, m);
        for i in 0..m {
            let mut w = Vec::with_capacity(3 * m);
            for _ in 0..3 * m {
                let u: f64 = rng.gen::<f64>().max(1e-9);
                w.push(-u.ln());
            }
            // damp the R block so ||R|| stays small
            for x in w[2 * m..].iter_mut() {
                *x *= 0.3;
            }
            let s: f64 = w.iter().sum();
            for j in 0..m {
                p[(i, j)] = w[j] / s;
                q[(i, j)] = w[m + j] / s;
                r[(i, j)] = w[2 * m + j] / s;
            }
        }
        let t = Triple { p, q, r };
        if t.is_valid(eps) {
            return t;
        }
    }
}
