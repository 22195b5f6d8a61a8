//! Recursive detection over a Kronecker product of rectangular factors.
//!
//! Write `R = R' ⊗ F_L` with `R'` of size `M' x K'`. Received sample
//! `y[i m_L + a]` only involves the `k_L` auxiliary unknowns
//! `Z_i[j] = Σ_c R'[i][c] x[c k_L + j]`, so the first recursion solves `M'`
//! small systems on `F_L`. For each `j` the vector `(Z_0[j], …, Z_{M'-1}[j])`
//! equals `R' x_j` with `x_j[c] = x[c k_L + j]`, a noiseless instance of the same
//! problem one factor shorter. The users of sub-problem `j` are the original
//! users `users[j + c k_L]`.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::patterns::{kronecker_all, BinaryMatrix, DEFAULT_SIZE_CAP};
use crate::{Error, Result};

/// Most auxiliary combinations tried when a noiseless stage has several exact solutions.
pub const MAX_BRANCHES: usize = 64;

/// Default cap on candidate tuples per MUD call.
pub const DEFAULT_SEARCH_CAP: u128 = 10_000_000;

/// Relative tolerance for exact matches in noiseless systems.
pub const NOISELESS_TOLERANCE: f64 = 1e-9;

/// Ordered finite symbol alphabet. Index bits map to points by the labeling of each constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    bits: u32,
}

impl Constellation {
    /// Points `[-a, +a]`; index equals the bit.
    pub fn bpsk(amplitude: f64) -> Self {
        Self {
            points: vec![Complex64::new(-amplitude, 0.0), Complex64::new(amplitude, 0.0)],
            bits: 1,
        }
    }

    /// Gray-labelled QPSK with average energy `a^2`; index `2 b_I + b_Q`.
    pub fn qpsk(amplitude: f64) -> Self {
        let s = amplitude / std::f64::consts::SQRT_2;
        let points = (0..4)
            .map(|i| {
                let (bi, bq) = ((i >> 1) & 1, i & 1);
                Complex64::new((2 * bi - 1) as f64 * s, (2 * bq - 1) as f64 * s)
            })
            .collect();
        Self { points, bits: 2 }
    }

    /// Arbitrary distinct points; labels are the point indices.
    pub fn from_points(points: Vec<Complex64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("constellation is empty".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::InvalidConfig(format!("duplicate point {}", points[i])));
                }
            }
        }
        let bits = usize::BITS - (points.len() - 1).leading_zeros();
        Ok(Self { points, bits })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits
    }

    pub fn point(&self, i: usize) -> Complex64 {
        self.points[i]
    }

    /// Mean of `|p|^2` over the points.
    pub fn energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Index of the closest point; ties go to the smaller index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn scale(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Quantized key for deduplicating sums of lattice-like points.
fn point_key(p: Complex64, quantum: f64) -> (i64, i64) {
    ((p.re / quantum).round() as i64, (p.im / quantum).round() as i64)
}

/// Distinct values of `a + b`, sorted by real then imaginary part.
fn minkowski(a: &[Complex64], b: &[Complex64], quantum: f64) -> Vec<Complex64> {
    let mut seen = HashMap::new();
    for &p in a {
        for &q in b {
            let s = p + q;
            seen.entry(point_key(s, quantum)).or_insert(s);
        }
    }
    let mut out: Vec<Complex64> = seen.into_values().collect();
    out.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    out
}

fn quantum_for(scale: f64) -> f64 {
    NOISELESS_TOLERANCE * scale.max(f64::MIN_POSITIVE)
}

/// All values of a sum of `order` symbols from `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumsetConstellation {
    base: Constellation,
    order: usize,
    points: Vec<Complex64>,
}

impl SumsetConstellation {
    pub fn new(base: &Constellation, order: usize) -> Self {
        let q = quantum_for(base.scale());
        let points = if order == 0 {
            vec![Complex64::new(0.0, 0.0)]
        } else {
            (1..order).fold(base.points.clone(), |acc, _| minkowski(&acc, &base.points, q))
        };
        Self {
            base: base.clone(),
            order,
            points,
        }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn base(&self) -> &Constellation {
        &self.base
    }

    /// Addend multisets (non-decreasing base index tuples) summing to `point`.
    pub fn preimage(&self, point: Complex64) -> Vec<Vec<usize>> {
        let tol = quantum_for(self.base.scale() * self.order.max(1) as f64);
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(self.order);
        #[allow(clippy::too_many_arguments)]
        fn walk(
            base: &[Complex64],
            start: usize,
            left: usize,
            acc: Complex64,
            target: Complex64,
            tol: f64,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if left == 0 {
                if (acc - target).norm() <= tol {
                    out.push(cur.clone());
                }
                return;
            }
            for i in start..base.len() {
                cur.push(i);
                walk(base, i, left - 1, acc + base[i], target, tol, cur, out);
                cur.pop();
            }
        }
        walk(
            &self.base.points,
            0,
            self.order,
            Complex64::new(0.0, 0.0),
            point,
            tol,
            &mut cur,
            &mut out,
        );
        out
    }
}

/// One system `y = F z + n` with a finite space per unknown.
#[derive(Debug, Clone)]
pub struct MudProblem<'a> {
    pub f: &'a BinaryMatrix,
    pub observations: &'a [Complex64],
    pub spaces: Vec<&'a [Complex64]>,
    /// Zero selects exact-match (noiseless) mode.
    pub noise_variance: f64,
}

impl<'a> MudProblem<'a> {
    pub fn uniform(
        f: &'a BinaryMatrix,
        observations: &'a [Complex64],
        space: &'a [Complex64],
        noise_variance: f64,
    ) -> Self {
        Self {
            f,
            observations,
            spaces: vec![space; f.cols()],
            noise_variance,
        }
    }

    /// Number of candidate tuples.
    pub fn size(&self) -> u128 {
        self.spaces
            .iter()
            .try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
            .unwrap_or(u128::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MudSolution {
    /// Index into each unknown's space.
    pub indices: Vec<usize>,
    #[serde(skip)]
    pub values: Vec<Complex64>,
    /// Squared residual of the chosen tuple.
    pub score: f64,
    /// More than one tuple attains the best score.
    pub ambiguous: bool,
    /// False only for a noiseless system solved by the nearest fallback.
    pub exact: bool,
    /// Candidate tuples evaluated.
    pub candidates: u64,
}

/// What a noiseless system does when no tuple matches exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    #[default]
    Fail,
    Nearest,
}

/// A multiuser detector for one small system.
pub trait Mud: Send + Sync {
    fn solve(&self, p: &MudProblem<'_>) -> Result<MudSolution>;

    /// Every tuple that matches a noiseless system exactly, keeping at most `limit`.
    ///
    /// The default reports only what [`Mud::solve`] returns, so a detector
    /// without enumeration treats every tie as unresolvable.
    fn solve_all(&self, p: &MudProblem<'_>, limit: usize) -> Result<ExactSet> {
        let _ = limit;
        match self.solve(p) {
            Ok(s) => Ok(ExactSet {
                truncated: s.ambiguous,
                candidates: s.candidates,
                tuples: vec![s.values],
            }),
            Err(Error::NoiselessInfeasible) => Ok(ExactSet::default()),
            Err(e) => Err(e),
        }
    }
}

/// Exact solutions of a noiseless system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExactSet {
    /// Values of each matching tuple, in search order.
    pub tuples: Vec<Vec<Complex64>>,
    /// More tuples match than were kept.
    pub truncated: bool,
    pub candidates: u64,
}

/// Exhaustive minimum-distance search, which is MAP for equiprobable symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceMap {
    pub cap: u128,
    pub fallback: Fallback,
}

impl Default for BruteForceMap {
    fn default() -> Self {
        Self {
            cap: DEFAULT_SEARCH_CAP,
            fallback: Fallback::Fail,
        }
    }
}

impl BruteForceMap {
    fn search<'a>(
        &self,
        p: &'a MudProblem<'a>,
        support: &'a [Vec<usize>],
        keep: Option<usize>,
    ) -> Result<Search<'a>> {
        let (m, k) = (p.f.rows(), p.f.cols());
        if p.observations.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: p.observations.len(),
            });
        }
        if p.spaces.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: p.spaces.len(),
            });
        }
        let size = p.size();
        if size > self.cap {
            return Err(Error::SearchSpaceCapExceeded { size, cap: self.cap });
        }
        if p.spaces.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig("empty symbol space".into()));
        }
        let point_scale = p
            .spaces
            .iter()
            .flat_map(|s| s.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let obs_scale = p.observations.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = point_scale.max(obs_scale).max(1.0);

        let mut s = Search {
            spaces: &p.spaces,
            support,
            residual: vec![p.observations.to_vec(); k + 1],
            cur: vec![0; k],
            best: Vec::new(),
            best_score: f64::INFINITY,
            ties: 0,
            exact_count: 0,
            tie: (NOISELESS_TOLERANCE * scale).powi(2),
            noiseless: p.noise_variance == 0.0,
            candidates: 0,
            all: keep.map(|_| Vec::new()),
            keep: keep.unwrap_or(0),
        };
        s.walk(0);
        Ok(s)
    }
}

fn supports(f: &BinaryMatrix) -> Vec<Vec<usize>> {
    (0..f.cols())
        .map(|j| (0..f.rows()).filter(|&a| f.get(a, j) == 1).collect())
        .collect()
}

impl Mud for BruteForceMap {
    fn solve(&self, p: &MudProblem<'_>) -> Result<MudSolution> {
        let support = supports(p.f);
        let s = self.search(p, &support, None)?;
        let exact = s.best_score <= s.tie;
        if s.noiseless && !exact && self.fallback == Fallback::Fail {
            return Err(Error::NoiselessInfeasible);
        }
        let values = s.best.iter().enumerate().map(|(j, &i)| p.spaces[j][i]).collect();
        Ok(MudSolution {
            indices: s.best,
            values,
            score: s.best_score,
            ambiguous: s.ties > 1,
            exact: !s.noiseless || exact,
            candidates: s.candidates,
        })
    }

    fn solve_all(&self, p: &MudProblem<'_>, limit: usize) -> Result<ExactSet> {
        if p.noise_variance != 0.0 {
            let s = self.solve(p)?;
            return Ok(ExactSet {
                truncated: s.ambiguous,
                candidates: s.candidates,
                tuples: vec![s.values],
            });
        }
        let support = supports(p.f);
        let s = self.search(p, &support, Some(limit))?;
        let mut all = s.all.unwrap_or_default();
        let truncated = all.len() > limit;
        all.truncate(limit);
        Ok(ExactSet {
            tuples: all
                .iter()
                .map(|t| t.iter().enumerate().map(|(j, &i)| p.spaces[j][i]).collect())
                .collect(),
            truncated,
            candidates: s.candidates,
        })
    }
}

struct Search<'a> {
    spaces: &'a [&'a [Complex64]],
    support: &'a [Vec<usize>],
    residual: Vec<Vec<Complex64>>,
    cur: Vec<usize>,
    best: Vec<usize>,
    best_score: f64,
    ties: usize,
    exact_count: usize,
    tie: f64,
    noiseless: bool,
    candidates: u64,
    /// Collects every exact tuple when set, stopping past `keep`.
    all: Option<Vec<Vec<usize>>>,
    keep: usize,
}

impl Search<'_> {
    /// Returns false once a noiseless search has seen two exact tuples.
    fn walk(&mut self, depth: usize) -> bool {
        if depth == self.cur.len() {
            self.candidates += 1;
            let score: f64 = self.residual[depth].iter().map(|z| z.norm_sqr()).sum();
            if score < self.best_score - self.tie {
                self.best_score = score;
                self.best = self.cur.clone();
                self.ties = 1;
            } else if score <= self.best_score + self.tie {
                self.ties += 1;
            }
            if self.noiseless && score <= self.tie {
                if let Some(all) = self.all.as_mut() {
                    all.push(self.cur.clone());
                    return all.len() <= self.keep;
                }
                self.exact_count += 1;
                if self.exact_count >= 2 {
                    return false;
                }
            }
            return true;
        }
        for (i, &z) in self.spaces[depth].iter().enumerate() {
            self.cur[depth] = i;
            let (head, tail) = self.residual.split_at_mut(depth + 1);
            let next = &mut tail[0];
            next.copy_from_slice(&head[depth]);
            for &a in &self.support[depth] {
                next[a] -= z;
            }
            if !self.walk(depth + 1) {
                return false;
            }
        }
        true
    }
}

pub fn mud_map(p: &MudProblem<'_>) -> Result<MudSolution> {
    BruteForceMap::default().solve(p)
}

/// Index bookkeeping for recursion `l_prime` along `path = (j_L, j_{L-1}, …)`.
///
/// Returns the one-based super-group index `psi`, the one-based offset `tau` of
/// the first original symbol it contains, and the stride `kappa` between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexMap {
    pub psi: usize,
    pub tau: usize,
    pub kappa: usize,
}

pub fn index_map(factors: &[BinaryMatrix], l_prime: usize, path: &[usize]) -> Result<IndexMap> {
    let l = factors.len();
    if l_prime == 0 || l_prime > l {
        return Err(Error::IndexOutOfRange {
            index: l_prime,
            max: l,
        });
    }
    if path.len() != l_prime - 1 {
        return Err(Error::DimensionMismatch {
            expected: l_prime - 1,
            actual: path.len(),
        });
    }
    let ks: Vec<usize> = factors.iter().map(|f| f.cols()).collect();
    for (n, &j) in path.iter().enumerate() {
        let k = ks[l - 1 - n];
        if j == 0 || j > k {
            return Err(Error::IndexOutOfRange { index: j, max: k });
        }
    }
    // psi: the latest digit is least significant
    let mut psi = 0;
    for (n, &j) in path.iter().enumerate() {
        psi = psi * ks[l - 1 - n] + (j - 1);
    }
    // tau: j_L is least significant
    let mut tau = 0;
    let mut kappa = 1;
    for (n, &j) in path.iter().enumerate() {
        tau += (j - 1) * kappa;
        kappa *= ks[l - 1 - n];
    }
    Ok(IndexMap {
        psi: psi + 1,
        tau: tau + 1,
        kappa,
    })
}

/// One solved system in a rectangular detection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    /// One-based recursion number.
    pub recursion: usize,
    /// `(j_L, j_{L-1}, …)` of the enclosing super-group, one-based.
    pub path: Vec<usize>,
    /// One-based system index within the super-group.
    pub system: usize,
    /// Original users (zero-based) covered by each unknown.
    pub unknown_users: Vec<Vec<usize>>,
    #[serde(skip)]
    pub values: Vec<Complex64>,
    pub ambiguous: bool,
}

/// Decisions for every user of a rectangular sub-pattern, in user order.
#[derive(Debug, Clone, PartialEq)]
pub struct RectDetection {
    /// Base-constellation index per user.
    pub symbols: Vec<usize>,
    /// True where the decision came from an ambiguous or failed system.
    pub flagged: Vec<bool>,
    pub ambiguous: bool,
    pub candidates: u64,
    pub trace: Vec<TraceEntry>,
}

/// Detector for a fixed list of rectangular factors.
///
/// Symbol spaces are precomputed from the structure, so one detector can be
/// reused across many received vectors.
pub struct RectDetector<M: Mud = BruteForceMap> {
    factors: Vec<BinaryMatrix>,
    /// `partials[d - 1]` is the product of the first `d` factors.
    partials: Vec<BinaryMatrix>,
    base: Constellation,
    gains: Option<Vec<Complex64>>,
    spaces: HashMap<Vec<usize>, Arc<[Complex64]>>,
    mud: M,
    flag_failures: bool,
}

impl RectDetector<BruteForceMap> {
    pub fn new(factors: Vec<BinaryMatrix>, base: Constellation) -> Result<Self> {
        Self::with_mud(factors, base, None, BruteForceMap::default())
    }
}

impl<M: Mud> RectDetector<M> {
    /// `gains[u]` scales the symbol of global user `u` (uplink fading).
    pub fn with_mud(
        factors: Vec<BinaryMatrix>,
        base: Constellation,
        gains: Option<Vec<Complex64>>,
        mud: M,
    ) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidPattern("no rectangular factors".into()));
        }
        let partials = (1..factors.len())
            .map(|d| kronecker_all(&factors[..d], DEFAULT_SIZE_CAP))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            factors,
            partials,
            base,
            gains,
            spaces: HashMap::new(),
            mud,
            flag_failures: false,
        })
    }

    /// Report failed systems through `flagged` instead of returning an error.
    pub fn flag_failures(mut self, on: bool) -> Self {
        self.flag_failures = on;
        self
    }

    pub fn factors(&self) -> &[BinaryMatrix] {
        &self.factors
    }

    pub fn m(&self) -> usize {
        self.factors.iter().map(|f| f.rows()).product()
    }

    pub fn k(&self) -> usize {
        self.factors.iter().map(|f| f.cols()).product()
    }

    /// Precomputes every symbol space needed for the given user layouts.
    pub fn prepare(&mut self, layouts: &[Vec<usize>]) -> Result<()> {
        for users in layouts {
            self.prepare_node(self.factors.len(), users)?;
        }
        Ok(())
    }

    fn prepare_node(&mut self, depth: usize, users: &[usize]) -> Result<()> {
        let f = &self.factors[depth - 1];
        let k = f.cols();
        if depth == 1 {
            for &u in users {
                self.space_for(&[u]);
            }
            return Ok(());
        }
        let r = self.partials[depth - 2].clone();
        for i in 0..r.rows() {
            for j in 0..k {
                let set: Vec<usize> = (0..r.cols())
                    .filter(|&c| r.get(i, c) == 1)
                    .map(|c| users[j + c * k])
                    .collect();
                self.space_for(&set);
            }
        }
        for j in 0..k {
            let sub: Vec<usize> = (0..r.cols()).map(|c| users[j + c * k]).collect();
            self.prepare_node(depth - 1, &sub)?;
        }
        Ok(())
    }

    fn key(&self, users: &[usize]) -> Vec<usize> {
        match self.gains {
            // without per-user gains a space depends only on how many symbols are summed
            None => vec![users.len()],
            Some(_) => {
                let mut v = users.to_vec();
                v.sort_unstable();
                v
            }
        }
    }

    fn space_for(&mut self, users: &[usize]) -> Arc<[Complex64]> {
        let key = self.key(users);
        if let Some(s) = self.spaces.get(&key) {
            return s.clone();
        }
        let s = self.build_space(users);
        self.spaces.insert(key, s.clone());
        s
    }

    fn scaled_base(&self, u: usize) -> Vec<Complex64> {
        let h = self.gains.as_ref().map_or(Complex64::new(1.0, 0.0), |g| g[u]);
        self.base.points.iter().map(|&p| p * h).collect()
    }

    fn build_space(&self, users: &[usize]) -> Arc<[Complex64]> {
        if users.is_empty() {
            // an all-zero row of R' sums nothing
            return vec![Complex64::new(0.0, 0.0)].into();
        }
        if users.len() == 1 {
            return self.scaled_base(users[0]).into();
        }
        let gmax = self
            .gains
            .as_ref()
            .map_or(1.0, |g| users.iter().map(|&u| g[u].norm()).fold(0.0, f64::max));
        let q = quantum_for(self.base.scale() * gmax.max(1e-300));
        let mut acc = self.scaled_base(users[0]);
        acc.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        for &u in &users[1..] {
            acc = minkowski(&acc, &self.scaled_base(u), q);
        }
        acc.into()
    }

    fn lookup(&self, users: &[usize]) -> Result<Arc<[Complex64]>> {
        self.spaces
            .get(&self.key(users))
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("detector used before prepare".into()))
    }

    /// Detects all users. `users[c]` is the global index of local symbol `c`.
    pub fn detect(
        &self,
        y: &[Complex64],
        noise_variance: f64,
        users: &[usize],
        trace: bool,
    ) -> Result<RectDetection> {
        if y.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                actual: y.len(),
            });
        }
        if users.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                actual: users.len(),
            });
        }
        let n = self.k();
        let local: HashMap<usize, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let mut out = RectDetection {
            symbols: vec![0; n],
            flagged: vec![false; n],
            ambiguous: false,
            candidates: 0,
            trace: Vec::new(),
        };
        let mut path = Vec::new();
        let status = self.node(
            self.factors.len(),
            y,
            noise_variance,
            users,
            &local,
            &mut path,
            trace,
            &mut out,
        )?;
        if status == Status::Infeasible && !self.flag_failures {
            return Err(Error::NoiselessInfeasible);
        }
        out.ambiguous = status == Status::Ambiguous;
        Ok(out)
    }

    fn flag_all(users: &[usize], local: &HashMap<usize, usize>, out: &mut RectDetection) {
        for &u in users {
            out.flagged[local[&u]] = true;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn node(
        &self,
        depth: usize,
        y: &[Complex64],
        noise_variance: f64,
        users: &[usize],
        local: &HashMap<usize, usize>,
        path: &mut Vec<usize>,
        trace: bool,
        out: &mut RectDetection,
    ) -> Result<Status> {
        let recursion = self.factors.len() - depth + 1;
        let f = &self.factors[depth - 1];
        let (m, k) = (f.rows(), f.cols());

        if depth == 1 {
            let spaces: Vec<Arc<[Complex64]>> =
                users.iter().map(|&u| self.lookup(&[u])).collect::<Result<_>>()?;
            let problem = MudProblem {
                f,
                observations: y,
                spaces: spaces.iter().map(|s| &s[..]).collect(),
                noise_variance,
            };
            let sol = match self.mud.solve(&problem) {
                Ok(sol) => sol,
                Err(Error::NoiselessInfeasible) => {
                    Self::flag_all(users, local, out);
                    return Ok(Status::Infeasible);
                }
                Err(e) => return Err(e.at(recursion, path.clone())),
            };
            out.candidates += sol.candidates;
            let status = if !sol.exact {
                Status::Infeasible
            } else if sol.ambiguous {
                Status::Ambiguous
            } else {
                Status::Unique
            };
            for (c, &u) in users.iter().enumerate() {
                out.symbols[local[&u]] = sol.indices[c];
                out.flagged[local[&u]] = status != Status::Unique;
            }
            if trace {
                out.trace.push(TraceEntry {
                    recursion,
                    path: path.clone(),
                    system: 1,
                    unknown_users: users.iter().map(|&u| vec![u]).collect(),
                    values: sol.values,
                    ambiguous: sol.ambiguous,
                });
            }
            return Ok(status);
        }

        let r = &self.partials[depth - 2];
        let (mp, kp) = (r.rows(), r.cols());
        let mut status = Status::Unique;
        // options[i] lists the auxiliary vectors that solve system i
        let mut options: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(mp);
        for i in 0..mp {
            let sets: Vec<Vec<usize>> = (0..k)
                .map(|j| {
                    (0..kp)
                        .filter(|&c| r.get(i, c) == 1)
                        .map(|c| users[j + c * k])
                        .collect()
                })
                .collect();
            let spaces: Vec<Arc<[Complex64]>> = sets.iter().map(|s| self.lookup(s)).collect::<Result<_>>()?;
            let problem = MudProblem {
                f,
                observations: &y[i * m..(i + 1) * m],
                spaces: spaces.iter().map(|s| &s[..]).collect(),
                noise_variance,
            };
            let found = self.mud.solve_all(&problem, MAX_BRANCHES).map_err(|e| {
                let mut p = path.clone();
                p.push(i + 1);
                e.at(recursion, p)
            })?;
            out.candidates += found.candidates;
            if found.truncated {
                status = Status::Ambiguous;
            }
            if trace {
                out.trace.push(TraceEntry {
                    recursion,
                    path: path.clone(),
                    system: i + 1,
                    unknown_users: sets,
                    values: found.tuples.first().cloned().unwrap_or_default(),
                    ambiguous: found.truncated || found.tuples.len() > 1,
                });
            }
            if found.tuples.is_empty() {
                Self::flag_all(users, local, out);
                return Ok(Status::Infeasible);
            }
            options.push(found.tuples);
        }

        let branches = match options
            .iter()
            .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
            .filter(|&b| b <= MAX_BRANCHES)
        {
            Some(b) => b,
            None => {
                for o in &mut options {
                    o.truncate(1);
                }
                status = Status::Ambiguous;
                1
            }
        };

        let mut choice = vec![0usize; mp];
        let verdict = if branches == 1 {
            self.children(depth, &options, &choice, users, local, path, trace, out)?
        } else {
            // try every combination and keep the ones whose sub-problems stay consistent
            let mut first: Option<RectDetection> = None;
            let mut kept: Option<(Status, RectDetection)> = None;
            let mut feasible = 0;
            for b in 0..branches {
                let mut rem = b;
                for i in (0..mp).rev() {
                    choice[i] = rem % options[i].len();
                    rem /= options[i].len();
                }
                let mut scratch = RectDetection {
                    symbols: out.symbols.clone(),
                    flagged: out.flagged.clone(),
                    ambiguous: false,
                    candidates: 0,
                    trace: Vec::new(),
                };
                let s = self.children(depth, &options, &choice, users, local, path, trace, &mut scratch)?;
                out.candidates += scratch.candidates;
                if s == Status::Infeasible {
                    first.get_or_insert(scratch);
                    continue;
                }
                feasible += 1;
                if kept.is_none() {
                    kept = Some((s, scratch));
                }
            }
            let (verdict, chosen) = match (feasible, kept) {
                (1, Some((s, d))) => (s, d),
                (_, Some((_, d))) => (Status::Ambiguous, d),
                (_, None) => (Status::Infeasible, first.expect("at least one branch")),
            };
            for &u in users {
                let l = local[&u];
                out.symbols[l] = chosen.symbols[l];
                out.flagged[l] = chosen.flagged[l];
            }
            out.trace.extend(chosen.trace);
            verdict
        };
        let status = status.max(verdict);
        if status != Status::Unique {
            Self::flag_all(users, local, out);
        }
        Ok(status)
    }

    /// Solves the `k_L` sub-problems for one choice of auxiliary vectors.
    #[allow(clippy::too_many_arguments)]
    fn children(
        &self,
        depth: usize,
        options: &[Vec<Vec<Complex64>>],
        choice: &[usize],
        users: &[usize],
        local: &HashMap<usize, usize>,
        path: &mut Vec<usize>,
        trace: bool,
        out: &mut RectDetection,
    ) -> Result<Status> {
        let k = self.factors[depth - 1].cols();
        let kp = self.partials[depth - 2].cols();
        let mut status = Status::Unique;
        for j in 0..k {
            let z: Vec<Complex64> = options.iter().zip(choice).map(|(o, &c)| o[c][j]).collect();
            let sub: Vec<usize> = (0..kp).map(|c| users[j + c * k]).collect();
            path.push(j + 1);
            let s = self.node(depth - 1, &z, 0.0, &sub, local, path, trace, out);
            path.pop();
            status = status.max(s?);
            if status == Status::Infeasible {
                break;
            }
        }
        Ok(status)
    }
}

/// Outcome of one node, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Unique,
    Ambiguous,
    Infeasible,
}

/// Convenience wrapper: builds a detector, prepares it and runs once with trace.
pub fn detect_rect(
    y: &[Complex64],
    factors: &[BinaryMatrix],
    base: &Constellation,
    noise_variance: f64,
) -> Result<RectDetection> {
    let mut d = RectDetector::new(factors.to_vec(), base.clone())?;
    let users: Vec<usize> = (0..d.k()).collect();
    d.prepare(std::slice::from_ref(&users))?;
    d.detect(y, noise_variance, &users, true)
}
