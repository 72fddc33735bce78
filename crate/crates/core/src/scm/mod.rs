//! Discrete-time structural causal models with independent noise.

mod expr;
mod sim;

pub use expr::{Expr, Inputs, Seed};
pub use sim::{Plan, Rollout};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::trend::TrendSpec;

pub type VarId = usize;

/// Parent lists are read into a fixed buffer of this size.
pub const MAX_PARENTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(default)]
    pub actionable: bool,
    #[serde(default)]
    pub monotone: bool,
    #[serde(default)]
    pub categorical: bool,
}

impl Variable {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), actionable: false, monotone: false, categorical: false }
    }
    pub fn actionable(mut self) -> Self {
        self.actionable = true;
        self
    }
    pub fn categorical(mut self) -> Self {
        self.categorical = true;
        self
    }
    pub fn monotone(mut self) -> Self {
        self.monotone = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parent {
    pub var: VarId,
    pub lag: usize,
}

impl Parent {
    pub fn now(var: VarId) -> Self {
        Self { var, lag: 0 }
    }
    pub fn lagged(var: VarId, lag: usize) -> Self {
        Self { var, lag }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEquation {
    pub target: VarId,
    pub parents: Vec<Parent>,
    pub expr: Expr,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendSpec>,
    /// Sampled at the first simulated step, then copied forward.
    #[serde(default)]
    pub frozen: bool,
}

impl StructuralEquation {
    pub fn new(target: VarId, parents: Vec<Parent>, expr: Expr, noise: NoiseSpec) -> Self {
        Self { target, parents, expr, noise, trend: None, frozen: false }
    }
    pub fn with_trend(mut self, trend: TrendSpec) -> Self {
        self.trend = Some(trend);
        self
    }
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: VarId,
    pub b: VarId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Normalizer {
    Fixed(f64),
    /// Magnitude of the sample mean of the linear score, measured on the
    /// states passed to the label sampler.
    EmpiricalMean,
}

/// `P(Y=1 | x) = sigmoid(scale * score(x) / normalizer)` with
/// `score = intercept + w.x + sum of pairwise interactions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub intercept: f64,
    pub scale: f64,
    pub normalizer: Normalizer,
}

impl LabelSpec {
    pub fn score(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        let inter: f64 = self.interactions.iter().map(|i| i.weight * x[i.a] * x[i.b]).sum();
        self.intercept + lin + inter
    }

    pub fn probability(&self, x: &[f64], normalizer: f64) -> f64 {
        let z = self.scale * self.score(x) / normalizer;
        1.0 / (1.0 + (-z).exp())
    }
}

/// Time-indexed realisation of one individual. `rows` starts with `lead`
/// pre-origin rows (the burn-in tail the lags at `t = 0` refer to), then one
/// row per time `0..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub individual: u64,
    pub seed: u64,
    pub lead: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Option<u8>>,
}

impl Trajectory {
    /// Trajectory without pre-origin history, e.g. read back from disk.
    pub fn from_states(individual: u64, seed: u64, states: Vec<Vec<f64>>) -> Self {
        Self { individual, seed, lead: 0, labels: vec![None; states.len()], rows: states }
    }

    /// States at times `0..`.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.rows[self.lead..]
    }

    /// Rows up to and including `t`, usable as an observed history.
    pub fn observed(&self, t: usize) -> Observed<'_> {
        Observed { rows: &self.rows[..=self.lead + t], t: t as i64 }
    }
}

/// Observed history: `rows` ordered oldest to newest, the newest at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct Observed<'a> {
    pub rows: &'a [Vec<f64>],
    pub t: i64,
}

impl<'a> Observed<'a> {
    pub fn new(rows: &'a [Vec<f64>], t: i64) -> Self {
        Self { rows, t }
    }
    pub fn last(&self) -> &'a [f64] {
        self.rows.last().expect("observed history is never empty")
    }
    /// Rows strictly before the newest one.
    pub fn window(&self) -> &'a [Vec<f64>] {
        &self.rows[..self.rows.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub features: Vec<VarId>,
    /// Offsets aligned with `features`.
    pub theta: Vec<f64>,
    pub mode: Mode,
    pub apply_at: i64,
}

impl Intervention {
    pub fn soft(features: Vec<VarId>, theta: Vec<f64>, apply_at: i64) -> Self {
        Self { features, theta, mode: Mode::Soft, apply_at }
    }
    pub fn hard(features: Vec<VarId>, theta: Vec<f64>, apply_at: i64) -> Self {
        Self { features, theta, mode: Mode::Hard, apply_at }
    }

    /// Offsets scattered into a length-`d` vector.
    pub fn dense_theta(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (&f, &v) in self.features.iter().zip(&self.theta) {
            out[f] = v;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawScm {
    variables: Vec<Variable>,
    equations: Vec<StructuralEquation>,
    #[serde(default)]
    label: Option<LabelSpec>,
    horizon: usize,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
}

fn default_burn_in() -> usize {
    10
}

/// A validated SCM. Equations are stored by target id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScm", into = "RawScm")]
pub struct ScmSpec {
    variables: Vec<Variable>,
    equations: Vec<StructuralEquation>,
    label: Option<LabelSpec>,
    horizon: usize,
    burn_in: usize,
    order: Vec<VarId>,
    children: Vec<Vec<VarId>>,
}

impl TryFrom<RawScm> for ScmSpec {
    type Error = Error;
    fn try_from(r: RawScm) -> Result<Self> {
        ScmSpec::new(r.variables, r.equations, r.label, r.horizon, r.burn_in)
    }
}

impl From<ScmSpec> for RawScm {
    fn from(s: ScmSpec) -> Self {
        RawScm {
            variables: s.variables,
            equations: s.equations,
            label: s.label,
            horizon: s.horizon,
            burn_in: s.burn_in,
        }
    }
}

impl ScmSpec {
    pub fn new(
        variables: Vec<Variable>,
        mut equations: Vec<StructuralEquation>,
        label: Option<LabelSpec>,
        horizon: usize,
        burn_in: usize,
    ) -> Result<Self> {
        let d = variables.len();
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if d == 0 {
            return bad("no variables".into());
        }
        if horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if equations.len() != d {
            return bad(format!("{} equations for {} variables", equations.len(), d));
        }
        equations.sort_by_key(|e| e.target);
        for (i, eq) in equations.iter().enumerate() {
            let name = &variables.get(i).map(|v| v.name.clone()).unwrap_or_default();
            if eq.target != i {
                return bad(format!("exactly one equation per variable required (missing {i})"));
            }
            if eq.parents.len() > MAX_PARENTS {
                return bad(format!("`{name}` has more than {MAX_PARENTS} parents"));
            }
            for p in &eq.parents {
                if p.var >= d {
                    return Err(Error::UnknownVariable(p.var));
                }
                if p.lag > horizon {
                    return bad(format!("`{name}` has lag {} beyond horizon {horizon}", p.lag));
                }
                if p.lag == 0 && p.var == i {
                    return bad(format!("`{name}` depends on itself instantaneously"));
                }
            }
            if let Some(m) = eq.expr.max_parent_index() {
                if m >= eq.parents.len() {
                    return bad(format!("`{name}` expression refers to parent slot {m}"));
                }
            }
            if eq.expr.noise_count() > 1 {
                return bad(format!("`{name}` uses its noise term more than once"));
            }
            if eq.expr.noise_count() == 0 && !eq.noise.is_degenerate() && !eq.frozen {
                return bad(format!("`{name}` has random noise that never enters its equation"));
            }
            eq.noise.validate()?;
            if let Some(tr) = &eq.trend {
                tr.validate().map_err(|m| Error::InvalidSpec(format!("`{name}`: {m}")))?;
            }
            if variables[i].actionable && eq.frozen {
                return bad(format!("`{name}` is actionable but frozen"));
            }
            if variables[i].actionable && variables[i].categorical {
                return bad(format!("`{name}` is actionable but categorical"));
            }
        }
        if let Some(l) = &label {
            if l.weights.len() != d || l.interactions.iter().any(|i| i.a >= d || i.b >= d) {
                return bad("label spec dimensionality does not match".into());
            }
        }
        let mut children = vec![Vec::new(); d];
        for eq in &equations {
            for p in eq.parents.iter().filter(|p| p.lag == 0) {
                if !children[p.var].contains(&eq.target) {
                    children[p.var].push(eq.target);
                }
            }
        }
        let order = topological_order(d, &equations)
            .ok_or_else(|| Error::InvalidSpec("instantaneous graph has a cycle".into()))?;
        Ok(Self { variables, equations, label, horizon, burn_in, order, children })
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }
    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }
    pub fn equations(&self) -> &[StructuralEquation] {
        &self.equations
    }
    pub fn equation(&self, i: VarId) -> &StructuralEquation {
        &self.equations[i]
    }
    pub fn label(&self) -> Option<&LabelSpec> {
        self.label.as_ref()
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn burn_in(&self) -> usize {
        self.burn_in
    }
    pub fn order(&self) -> &[VarId] {
        &self.order
    }
    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }
    pub fn index_of(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name)
    }
    pub fn actionable(&self) -> Vec<VarId> {
        (0..self.dim()).filter(|&i| self.variables[i].actionable).collect()
    }

    /// Rebuilds with modified parts; re-validates.
    pub fn rebuild(
        &self,
        f: impl FnOnce(&mut Vec<Variable>, &mut Vec<StructuralEquation>, &mut Option<LabelSpec>),
    ) -> Result<Self> {
        let mut v = self.variables.clone();
        let mut e = self.equations.clone();
        let mut l = self.label.clone();
        f(&mut v, &mut e, &mut l);
        Self::new(v, e, l, self.horizon, self.burn_in)
    }

    pub fn with_burn_in(&self, burn_in: usize) -> Self {
        let mut s = self.clone();
        s.burn_in = burn_in;
        s
    }

    /// Replaces every non-frozen variable's noise with `noise`.
    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        self.rebuild(|_, eqs, _| {
            for eq in eqs.iter_mut().filter(|e| !e.frozen && e.expr.noise_count() == 1) {
                eq.noise = noise.clone();
            }
        })
    }

    /// Sets the trend of variable `i` (replacing any existing one).
    pub fn with_trend(&self, i: VarId, trend: Option<TrendSpec>) -> Result<Self> {
        if i >= self.dim() {
            return Err(Error::UnknownVariable(i));
        }
        self.rebuild(|_, eqs, _| eqs[i].trend = trend)
    }

    /// Variables reachable from `set` along instantaneous edges, excluding
    /// members of `set` unless reachable from another member.
    pub fn descendants(&self, set: &[VarId]) -> Result<Vec<bool>> {
        let d = self.dim();
        let mut seen = vec![false; d];
        let mut stack = Vec::new();
        for &s in set {
            if s >= d {
                return Err(Error::UnknownVariable(s));
            }
            stack.extend(self.children[s].iter().copied());
        }
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.children[v].iter().copied());
            }
        }
        Ok(seen)
    }

    /// Variables with no instantaneous directed path from any member of
    /// `set`; members themselves are excluded.
    pub fn non_descendants(&self, set: &[VarId]) -> Result<Vec<VarId>> {
        let desc = self.descendants(set)?;
        Ok((0..self.dim()).filter(|&v| !desc[v] && !set.contains(&v)).collect())
    }
}

/// Kahn's algorithm; among ready nodes the smallest declared index goes first.
fn topological_order(d: usize, eqs: &[StructuralEquation]) -> Option<Vec<VarId>> {
    let mut indeg = vec![0usize; d];
    let mut children = vec![Vec::new(); d];
    for eq in eqs {
        let mut ps: Vec<VarId> = eq.parents.iter().filter(|p| p.lag == 0).map(|p| p.var).collect();
        ps.sort_unstable();
        ps.dedup();
        for p in ps {
            indeg[eq.target] += 1;
            children[p].push(eq.target);
        }
    }
    let mut ready: std::collections::BTreeSet<VarId> = (0..d).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(&v) = ready.iter().next() {
        ready.remove(&v);
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == d).then_some(order)
}
