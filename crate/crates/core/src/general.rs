//! Two-phase detection for `G = R ⊗ S` with `R` rectangular and `S` a product of
//! square factors.
//!
//! With `y[a M_s + b]` and `x[c M_s + d]`, running the square recursions on each
//! contiguous slice `a` leaves `W_b Σ_c R[a][c] x[c M_s + b]`. Super-group `b`
//! is therefore the rectangular system `R x_b` over users `b, b + M_s, …` with
//! noise variance `σ² / γ_b`.
//!
//! Cancellation acts on the leftmost square factor `P(1)`. Before that factor is
//! combined, row `j` of super-group `rest` carries `W_rest Σ_c P(1)[j][c] R x_(c,rest)`.
//! A reform step adds rows `from`, subtracts decided groups and keeps the target.

use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::designer::SquareFactorDesign;
use crate::patterns::{BinaryMatrix, KroneckerPattern};
use crate::rect::{BruteForceMap, Constellation, RectDetector};
use crate::square::{combine_axes, gain_tree, OpCount};
use crate::{Error, Gain, Result};

/// One super-group after the square phase.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperGroup {
    /// One-based super-group index.
    pub index: usize,
    /// Combined observations divided by the path scale, length `M_r`.
    pub observations: Vec<Complex64>,
    pub gain: Gain,
    /// Zero-based users `b, b + M_s, …`.
    pub users: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneOutput {
    pub groups: Vec<SuperGroup>,
    pub ops: OpCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralDetection {
    /// Base-constellation index per user.
    pub symbols: Vec<usize>,
    /// Decisions taken from ambiguous or failed systems.
    pub flagged: Vec<bool>,
    pub ops: OpCount,
    pub candidates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SicMode {
    /// Cancel with the detector's own decisions.
    #[default]
    Imperfect,
    /// Cancel with the transmitted symbols.
    Genie,
}

impl FromStr for SicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imperfect" => Ok(Self::Imperfect),
            "genie" | "perfect" => Ok(Self::Genie),
            _ => Err(Error::InvalidConfig(format!("unknown SIC mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reform {
    pub target: usize,
    pub from: Vec<usize>,
    #[serde(default)]
    pub subtract: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SicStep {
    #[serde(default)]
    pub detect: Vec<usize>,
    #[serde(default)]
    pub reform: Vec<Reform>,
}

/// Ordered cancellation steps over the rows (one-based) of the leftmost square factor.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SicPolicy {
    pub steps: Vec<SicStep>,
}

impl SicPolicy {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the policy against `p1` and returns the compiled reform steps.
    pub fn compile(&self, p1: &BinaryMatrix) -> Result<Vec<CompiledStep>> {
        let m = p1.rows();
        let mut decided = vec![false; m];
        let in_range = |i: usize, what: &str| {
            if i == 0 || i > m {
                Err(Error::InvalidPolicy(format!("{what} row {i} is outside 1..{m}")))
            } else {
                Ok(i - 1)
            }
        };
        let mut out = Vec::new();
        for (n, step) in self.steps.iter().enumerate() {
            let mut detect = Vec::new();
            for &i in &step.detect {
                let r = in_range(i, "detect")?;
                if decided[r] {
                    return Err(Error::InvalidPolicy(format!(
                        "step {}: row {i} is already decided",
                        n + 1
                    )));
                }
                decided[r] = true;
                detect.push(r);
            }
            let mut reforms = Vec::new();
            for rf in &step.reform {
                let t = in_range(rf.target, "target")?;
                if decided[t] {
                    return Err(Error::InvalidPolicy(format!(
                        "step {}: target row {} is already decided",
                        n + 1,
                        rf.target
                    )));
                }
                if rf.from.is_empty() {
                    return Err(Error::InvalidPolicy(format!(
                        "step {}: reform of row {} has no source rows",
                        n + 1,
                        rf.target
                    )));
                }
                let from = rf
                    .from
                    .iter()
                    .map(|&i| in_range(i, "source"))
                    .collect::<Result<Vec<_>>>()?;
                let mut sorted = from.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != from.len() {
                    return Err(Error::InvalidPolicy("repeated source row".into()));
                }
                let subtract = rf
                    .subtract
                    .iter()
                    .map(|&i| in_range(i, "subtract"))
                    .collect::<Result<Vec<_>>>()?;
                for (&s, &orig) in subtract.iter().zip(&rf.subtract) {
                    if !decided[s] {
                        return Err(Error::InvalidPolicy(format!(
                            "step {}: subtracted row {orig} is not decided yet",
                            n + 1
                        )));
                    }
                }
                let coef: Vec<i64> = (0..m)
                    .map(|c| from.iter().map(|&j| i64::from(p1.get(j, c))).sum())
                    .collect();
                if coef[t] == 0 {
                    return Err(Error::InvalidPolicy(format!(
                        "step {}: source rows do not contain target {}",
                        n + 1,
                        rf.target
                    )));
                }
                for (c, &v) in coef.iter().enumerate() {
                    if c != t && v != 0 && !subtract.contains(&c) {
                        return Err(Error::InvalidPolicy(format!(
                            "step {}: symbol group {} remains after cancellation",
                            n + 1,
                            c + 1
                        )));
                    }
                }
                decided[t] = true;
                reforms.push(CompiledReform {
                    target: t,
                    from,
                    subtract: subtract.iter().map(|&c| (c, coef[c])).collect(),
                    coef: coef[t],
                });
            }
            out.push(CompiledStep { detect, reforms });
        }
        Ok(out)
    }
}

/// Validated reform with zero-based rows and the coefficient of each subtracted group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledReform {
    pub target: usize,
    pub from: Vec<usize>,
    pub subtract: Vec<(usize, i64)>,
    pub coef: i64,
}

impl CompiledReform {
    /// Revised gain for the target row of the leftmost factor.
    pub fn gain(&self) -> Gain {
        Gain::new(self.coef * self.coef, self.from.len() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledStep {
    pub detect: Vec<usize>,
    pub reforms: Vec<CompiledReform>,
}

/// Per-path gains for `designs` after applying `policy`, ordered by super-group.
pub fn revised_gains(designs: &[SquareFactorDesign], policy: &SicPolicy) -> Result<Vec<Gain>> {
    let mut gains = gain_tree(designs);
    let Some(first) = designs.first() else {
        if policy.is_empty() {
            return Ok(gains);
        }
        return Err(Error::InvalidPolicy("pattern has no square factor".into()));
    };
    let rest = gain_tree(&designs[1..]);
    for step in policy.compile(first.p())? {
        for rf in &step.reforms {
            for (r, &g) in rest.iter().enumerate() {
                gains[rf.target * rest.len() + r] = rf.gain() * g;
            }
        }
    }
    Ok(gains)
}

/// Reusable two-phase detector for one pattern and constellation.
pub struct GeneralDetector {
    pattern: KroneckerPattern,
    base: Constellation,
    gains: Option<Vec<Complex64>>,
    rect: Option<RectDetector<BruteForceMap>>,
    rect_matrix: BinaryMatrix,
}

impl GeneralDetector {
    pub fn new(pattern: KroneckerPattern, base: Constellation) -> Result<Self> {
        Self::with_gains(pattern, base, None)
    }

    /// `gains[u]` multiplies the symbol of user `u` before the channel.
    pub fn with_gains(
        pattern: KroneckerPattern,
        base: Constellation,
        gains: Option<Vec<Complex64>>,
    ) -> Result<Self> {
        if let Some(g) = &gains {
            if g.len() != pattern.k() {
                return Err(Error::DimensionMismatch {
                    expected: pattern.k(),
                    actual: g.len(),
                });
            }
            if let Some(u) = g.iter().position(|h| h.norm_sqr() == 0.0) {
                return Err(Error::ZeroGain(u + 1));
            }
        }
        let ms = pattern.m_square();
        let rect = if pattern.rect_factors().is_empty() {
            None
        } else {
            let mut d = RectDetector::with_mud(
                pattern.rect_factors().to_vec(),
                base.clone(),
                gains.clone(),
                BruteForceMap::default(),
            )?
            .flag_failures(true);
            let layouts: Vec<Vec<usize>> = (0..ms)
                .map(|b| (0..pattern.k_rect()).map(|c| b + c * ms).collect())
                .collect();
            d.prepare(&layouts)?;
            Some(d)
        };
        let rect_matrix = pattern.rect_product()?;
        Ok(Self {
            pattern,
            base,
            gains,
            rect,
            rect_matrix,
        })
    }

    pub fn pattern(&self) -> &KroneckerPattern {
        &self.pattern
    }

    pub fn base(&self) -> &Constellation {
        &self.base
    }

    fn gain_of(&self, u: usize) -> Complex64 {
        self.gains.as_ref().map_or(Complex64::new(1.0, 0.0), |g| g[u])
    }

    /// Square recursions on every slice, split so the leftmost factor can be applied separately.
    fn combine(&self, y: &[Complex64]) -> Result<Combined> {
        let designs = self.pattern.square_designs();
        let ms = self.pattern.m_square();
        let mr = self.pattern.m_rect();
        if y.len() != mr * ms {
            return Err(Error::DimensionMismatch {
                expected: mr * ms,
                actual: y.len(),
            });
        }
        let rest_axes: Vec<usize> = (1..designs.len()).rev().collect();
        let mut partial = Vec::with_capacity(y.len());
        let mut full = Vec::with_capacity(y.len());
        let mut ops = OpCount::default();
        let mut scales = vec![1i64; ms];
        let mut noise = vec![1i64; ms];
        let mut rest_scales = vec![1i64; ms];
        let mut rest_noise = vec![1i64; ms];
        for a in 0..mr {
            let slice = &y[a * ms..(a + 1) * ms];
            if designs.is_empty() {
                partial.extend_from_slice(slice);
                full.extend_from_slice(slice);
                continue;
            }
            let p = combine_axes(slice, designs, &rest_axes)?;
            let f = combine_axes(&p.values, designs, &[0])?;
            if a == 0 {
                for b in 0..ms {
                    rest_scales[b] = p.scales[b];
                    rest_noise[b] = p.noise_factors[b];
                    scales[b] = p.scales[b] * f.scales[b];
                    noise[b] = p.noise_factors[b] * f.noise_factors[b];
                }
            }
            let mut step = p.ops;
            step.adds += f.ops.adds;
            step.per_recursion.extend(f.ops.per_recursion);
            ops.merge(&step);
            partial.extend_from_slice(&p.values);
            full.extend_from_slice(&f.values);
        }
        Ok(Combined {
            partial,
            full,
            scales,
            noise,
            rest_scales,
            rest_noise,
            ops,
        })
    }

    pub fn phase_one(&self, y: &[Complex64]) -> Result<PhaseOneOutput> {
        let c = self.combine(y)?;
        let ms = self.pattern.m_square();
        let mr = self.pattern.m_rect();
        let kr = self.pattern.k_rect();
        let groups = (0..ms)
            .map(|b| SuperGroup {
                index: b + 1,
                observations: (0..mr).map(|a| c.full[a * ms + b] / c.scales[b] as f64).collect(),
                gain: Gain::new(c.scales[b] * c.scales[b], c.noise[b]),
                users: (0..kr).map(|cc| b + cc * ms).collect(),
            })
            .collect();
        Ok(PhaseOneOutput { groups, ops: c.ops })
    }

    /// Decides the users of one super-group from normalized observations.
    fn solve_group(
        &self,
        obs: &[Complex64],
        noise_variance: f64,
        users: &[usize],
        out: &mut GeneralDetection,
    ) -> Result<()> {
        match &self.rect {
            None => {
                let u = users[0];
                out.symbols[u] = self.base.nearest(obs[0] / self.gain_of(u));
            }
            Some(d) => {
                let r = d.detect(obs, noise_variance, users, false)?;
                out.candidates += r.candidates;
                for (i, &u) in users.iter().enumerate() {
                    // rect results are indexed by position in `users`
                    out.symbols[u] = r.symbols[i];
                    out.flagged[u] = r.flagged[i];
                }
            }
        }
        Ok(())
    }

    fn empty_detection(&self, ops: OpCount) -> GeneralDetection {
        let k = self.pattern.k();
        GeneralDetection {
            symbols: vec![0; k],
            flagged: vec![false; k],
            ops,
            candidates: 0,
        }
    }

    pub fn detect(&self, y: &[Complex64], noise_variance: f64) -> Result<GeneralDetection> {
        let c = self.combine(y)?;
        let mut out = self.empty_detection(c.ops.clone());
        for b in 0..self.pattern.m_square() {
            self.solve_standard(&c, b, noise_variance, &mut out)
                .map_err(|e| e.at(0, vec![b + 1]))?;
        }
        Ok(out)
    }

    fn solve_standard(
        &self,
        c: &Combined,
        b: usize,
        noise_variance: f64,
        out: &mut GeneralDetection,
    ) -> Result<()> {
        let ms = self.pattern.m_square();
        let mr = self.pattern.m_rect();
        let kr = self.pattern.k_rect();
        let obs: Vec<Complex64> = (0..mr).map(|a| c.full[a * ms + b] / c.scales[b] as f64).collect();
        let nv = noise_variance * c.noise[b] as f64 / (c.scales[b] * c.scales[b]) as f64;
        let users: Vec<usize> = (0..kr).map(|cc| b + cc * ms).collect();
        self.solve_group(&obs, nv, &users, out)
    }

    /// Detection with cancellation. `truth` is required in genie mode.
    pub fn detect_with_sic(
        &self,
        y: &[Complex64],
        noise_variance: f64,
        policy: &SicPolicy,
        mode: SicMode,
        truth: Option<&[usize]>,
    ) -> Result<GeneralDetection> {
        if policy.is_empty() {
            return self.detect(y, noise_variance);
        }
        let designs = self.pattern.square_designs();
        let Some(first) = designs.first() else {
            return Err(Error::InvalidPolicy("pattern has no square factor".into()));
        };
        let steps = policy.compile(first.p())?;
        if mode == SicMode::Genie && truth.is_none_or(|t| t.len() != self.pattern.k()) {
            return Err(Error::InvalidConfig(
                "genie cancellation needs the transmitted symbols".into(),
            ));
        }
        let c = self.combine(y)?;
        let mut out = self.empty_detection(c.ops.clone());
        let ms = self.pattern.m_square();
        let mr = self.pattern.m_rect();
        let kr = self.pattern.k_rect();
        let m1 = first.m();
        let stride = ms / m1;
        let mut decided = vec![false; m1];

        for step in &steps {
            for &j in &step.detect {
                for rest in 0..stride {
                    let b = j * stride + rest;
                    self.solve_standard(&c, b, noise_variance, &mut out)
                        .map_err(|e| e.at(0, vec![b + 1]))?;
                }
                decided[j] = true;
            }
            for rf in &step.reforms {
                for rest in 0..stride {
                    let w = c.rest_scales[rest];
                    let mut e: Vec<Complex64> = (0..mr)
                        .map(|a| {
                            rf.from
                                .iter()
                                .map(|&j| c.partial[a * ms + j * stride + rest])
                                .sum()
                        })
                        .collect();
                    for &(g, coef) in &rf.subtract {
                        if coef == 0 {
                            continue;
                        }
                        let b = g * stride + rest;
                        let known: Vec<Complex64> = (0..kr)
                            .map(|cc| {
                                let u = b + cc * ms;
                                let s = match (mode, truth) {
                                    (SicMode::Genie, Some(t)) => t[u],
                                    _ => out.symbols[u],
                                };
                                self.base.point(s) * self.gain_of(u)
                            })
                            .collect();
                        let rx = self.rect_matrix.mul_vec(&known);
                        let f = (coef * w) as f64;
                        for (ea, ra) in e.iter_mut().zip(rx) {
                            *ea -= ra * f;
                        }
                    }
                    let scale = (rf.coef * w) as f64;
                    let obs: Vec<Complex64> = e.iter().map(|v| v / scale).collect();
                    let nv =
                        noise_variance * (rf.from.len() as i64 * c.rest_noise[rest]) as f64 / (scale * scale);
                    let b = rf.target * stride + rest;
                    let users: Vec<usize> = (0..kr).map(|cc| b + cc * ms).collect();
                    self.solve_group(&obs, nv, &users, &mut out)
                        .map_err(|e| e.at(0, vec![b + 1]))?;
                }
                decided[rf.target] = true;
            }
        }
        for j in (0..m1).filter(|&j| !decided[j]) {
            for rest in 0..stride {
                let b = j * stride + rest;
                self.solve_standard(&c, b, noise_variance, &mut out)
                    .map_err(|e| e.at(0, vec![b + 1]))?;
            }
        }
        Ok(out)
    }
}

struct Combined {
    /// Samples before the leftmost square factor is applied.
    partial: Vec<Complex64>,
    full: Vec<Complex64>,
    scales: Vec<i64>,
    noise: Vec<i64>,
    rest_scales: Vec<i64>,
    rest_noise: Vec<i64>,
    ops: OpCount,
}

pub fn detect_general(
    y: &[Complex64],
    pattern: &KroneckerPattern,
    base: &Constellation,
    noise_variance: f64,
) -> Result<GeneralDetection> {
    GeneralDetector::new(pattern.clone(), base.clone())?.detect(y, noise_variance)
}

/// Detection with cancellation plus the revised per-path gain table.
pub fn detect_with_sic(
    y: &[Complex64],
    pattern: &KroneckerPattern,
    base: &Constellation,
    noise_variance: f64,
    policy: &SicPolicy,
    mode: SicMode,
    truth: Option<&[usize]>,
) -> Result<(GeneralDetection, Vec<Gain>)> {
    let gains = revised_gains(pattern.square_designs(), policy)?;
    let d = GeneralDetector::new(pattern.clone(), base.clone())?;
    Ok((d.detect_with_sic(y, noise_variance, policy, mode, truth)?, gains))
}
