//! Sampling, interventions, abduction and forecasting.

use serde::{Deserialize, Serialize};

use super::{Intervention, Mode, Observed, ScmSpec, Trajectory, VarId, MAX_PARENTS};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::scm::expr::{Inputs, Seed};

/// One forward simulation ending at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub t: i64,
    /// Up to `horizon` rows preceding `state`, oldest first.
    pub window: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    /// Exogenous values that produced `state`.
    pub noise: Vec<f64>,
}

/// Precomputed structure of an intervention set.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    members: Vec<VarId>,
    column: Vec<Option<usize>>,
    reeval: Vec<bool>,
    hard: bool,
    noisy: bool,
}

impl Plan {
    /// Members are re-evaluated only when they descend from another member;
    /// all descendants of the set are re-evaluated.
    pub fn new(scm: &ScmSpec, features: &[VarId], mode: Mode) -> Result<Self> {
        let d = scm.dim();
        let mut column = vec![None; d];
        for (c, &f) in features.iter().enumerate() {
            if f >= d {
                return Err(Error::UnknownVariable(f));
            }
            if column[f].replace(c).is_some() {
                return Err(Error::InvalidIntervention(format!("feature {f} listed twice")));
            }
        }
        let reeval = scm.descendants(features)?;
        let mut p = Self { members: features.to_vec(), column, reeval, hard: mode == Mode::Hard, noisy: false };
        p.noisy = p.reevaluates_noise(scm);
        Ok(p)
    }

    fn reevaluates_noise(&self, scm: &ScmSpec) -> bool {
        (0..scm.dim()).any(|i| {
            let eq = scm.equation(i);
            self.reeval[i] && !eq.frozen && !eq.noise.is_degenerate() && !(self.hard && self.column[i].is_some())
        })
    }

    /// Soft shifts on every variable with all equations re-evaluated, as used
    /// by counterfactual evaluation of perturbed states. Jacobian columns are
    /// `features`.
    pub fn counterfactual(scm: &ScmSpec, features: &[VarId], mode: Mode) -> Result<Self> {
        let mut p = Self::new(scm, features, mode)?;
        p.reeval = vec![true; scm.dim()];
        p.noisy = p.reevaluates_noise(scm);
        Ok(p)
    }

    /// Whether the result depends on the exogenous values passed in.
    pub fn needs_noise(&self) -> bool {
        self.noisy
    }

    pub fn members(&self) -> &[VarId] {
        &self.members
    }
    pub fn is_hard(&self) -> bool {
        self.hard
    }
}

fn lag_row(window: &[Vec<f64>], lag: usize) -> Option<&[f64]> {
    (window.len() >= lag).then(|| window[window.len() - lag].as_slice())
}

fn tail(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    rows[rows.len().saturating_sub(n)..].to_vec()
}

impl ScmSpec {
    pub fn trend_at(&self, i: VarId, t: i64) -> f64 {
        // Burn-in steps see the trend value at t = 0.
        self.equations[i].trend.as_ref().map_or(0.0, |tr| tr.contribution(t.max(0) as u64))
    }

    /// Parent values for equation `i`; missing lags read as 0.
    fn gather(&self, i: VarId, window: &[Vec<f64>], current: &[f64], buf: &mut [f64; MAX_PARENTS]) -> usize {
        let ps = &self.equations[i].parents;
        for (slot, p) in ps.iter().enumerate() {
            buf[slot] = if p.lag == 0 {
                current[p.var]
            } else {
                lag_row(window, p.lag).map_or(0.0, |r| r[p.var])
            };
        }
        ps.len()
    }

    /// Structural value of variable `i` (trend included) given parents in
    /// `current` and the lag window.
    pub fn structural(&self, i: VarId, window: &[Vec<f64>], t: i64, current: &[f64], u: f64) -> f64 {
        let mut buf = [0.0; MAX_PARENTS];
        let n = self.gather(i, window, current, &mut buf);
        let x = Inputs { parents: &buf[..n], t: t as f64, noise: u };
        self.equations[i].expr.eval(&x) + self.trend_at(i, t)
    }

    fn check(&self, i: VarId, t: i64, v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Divergence { var: self.variables[i].name.clone(), t })
        }
    }

    /// One timestep from exogenous values `u`. Frozen variables copy the
    /// newest window row when there is one.
    pub fn step(&self, window: &[Vec<f64>], t: i64, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        for &i in &self.order {
            out[i] = match window.last() {
                Some(prev) if self.equations[i].frozen => prev[i],
                _ => self.check(i, t, self.structural(i, window, t, &out, u[i]))?,
            };
        }
        Ok(out)
    }

    /// Fresh exogenous draws for one timestep of one stream.
    pub fn draw_noise(&self, master: u64, stream: u64, t: i64, purpose: u64) -> Vec<f64> {
        self.equations
            .iter()
            .enumerate()
            .map(|(i, eq)| eq.noise.sample(&mut rng::cell(master, stream, i, t, purpose)))
            .collect()
    }

    pub fn sample_trajectory(&self, t_max: usize, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        (0..n as u64).map(|ind| self.sample_one(t_max, ind, seed)).collect()
    }

    fn sample_one(&self, t_max: usize, individual: u64, seed: u64) -> Result<Trajectory> {
        let mut window: Vec<Vec<f64>> = Vec::with_capacity(self.horizon + 1);
        let mut rows = Vec::with_capacity(t_max + 1 + self.horizon);
        let mut lead = 0;
        for t in -(self.burn_in as i64)..=t_max as i64 {
            let u = self.draw_noise(seed, individual, t, purpose::ROLLOUT);
            let x = self.step(&window, t, &u)?;
            if window.len() == self.horizon {
                window.remove(0);
            }
            window.push(x.clone());
            if t >= 0 {
                rows.push(x);
            } else if t >= -(self.horizon as i64) {
                rows.push(x);
                lead += 1;
            }
        }
        Ok(Trajectory { individual, seed, lead, labels: vec![None; rows.len() - lead], rows })
    }

    /// Forward simulation from `obs` for `steps` timesteps with fresh noise
    /// drawn from stream `(master, stream)`. With `steps == 0` the observed
    /// state is returned together with its abducted noise.
    pub fn rollout(&self, obs: Observed, steps: usize, master: u64, stream: u64) -> Result<Rollout> {
        if steps == 0 {
            let window = tail(obs.window(), self.horizon);
            let noise = self.abduct(&window, obs.t, obs.last())?;
            return Ok(Rollout { t: obs.t, window, state: obs.last().to_vec(), noise });
        }
        let mut window = tail(obs.rows, self.horizon);
        let mut t = obs.t;
        loop {
            t += 1;
            let noise = self.draw_noise(master, stream, t, purpose::ROLLOUT);
            let state = self.step(&window, t, &noise)?;
            if t == obs.t + steps as i64 {
                return Ok(Rollout { t, window, state, noise });
            }
            if window.len() == self.horizon {
                window.remove(0);
            }
            window.push(state);
        }
    }

    /// `n` rollouts of length `tau` conditioned on the observed history.
    pub fn forecast(&self, obs: Observed, tau: usize, n: usize, seed: u64) -> Result<Vec<Rollout>> {
        if tau == 0 || n == 0 {
            return Err(Error::InvalidArgument("forecast needs tau > 0 and n >= 1".into()));
        }
        (0..n as u64).map(|k| self.rollout(obs, tau, seed, k)).collect()
    }

    /// States of [`Self::forecast`].
    pub fn forecast_uncertainty_set(&self, obs: Observed, tau: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.forecast(obs, tau, n, seed)?.into_iter().map(|r| r.state).collect())
    }

    /// Re-evaluates the state `base` at time `t` under an intervention.
    ///
    /// Hard members are set to `shift`. Variables flagged for re-evaluation
    /// are recomputed from the (possibly modified) parents and `u`, then
    /// shifted; frozen ones keep `base`. All others keep `base + shift`.
    /// When `jac` is given it receives the `d x |members|` row-major
    /// derivative of the output with respect to the members' offsets.
    #[allow(clippy::too_many_arguments)]
    pub fn propagate(
        &self,
        window: &[Vec<f64>],
        t: i64,
        base: &[f64],
        u: &[f64],
        plan: &Plan,
        shift: &[f64],
        mut jac: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let d = self.dim();
        let m = plan.members.len();
        if base.len() != d || u.len() != d || shift.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: base.len().min(u.len()).min(shift.len()) });
        }
        if let Some(j) = jac.as_deref_mut() {
            if j.len() != d * m {
                return Err(Error::DimensionMismatch { expected: d * m, got: j.len() });
            }
            j.fill(0.0);
        }
        let mut out = vec![0.0; d];
        let mut buf = [0.0; MAX_PARENTS];
        for &i in &self.order {
            let col = plan.column[i];
            let eq = &self.equations[i];
            if plan.hard && col.is_some() {
                out[i] = shift[i];
            } else if plan.reeval[i] && !eq.frozen {
                let n = self.gather(i, window, &out, &mut buf);
                let x = Inputs { parents: &buf[..n], t: t as f64, noise: u[i] };
                out[i] = self.check(i, t, eq.expr.eval(&x) + self.trend_at(i, t) + shift[i])?;
                if let Some(j) = jac.as_deref_mut() {
                    for (slot, p) in eq.parents.iter().enumerate() {
                        if p.lag != 0 || j[p.var * m..(p.var + 1) * m].iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let (_, df) = eq.expr.eval_dual(&x, Seed::Parent(slot));
                        if df != 0.0 {
                            for c in 0..m {
                                j[i * m + c] += df * j[p.var * m + c];
                            }
                        }
                    }
                }
            } else {
                out[i] = base[i] + shift[i];
            }
            if let (Some(c), Some(j)) = (col, jac.as_deref_mut()) {
                j[i * m + c] += 1.0;
            }
        }
        Ok(out)
    }

    /// Exogenous values reproducing `x` at time `t` given the lag window.
    /// Frozen and noise-free variables get their noise mean.
    pub fn abduct(&self, window: &[Vec<f64>], t: i64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut u = vec![0.0; self.dim()];
        let mut buf = [0.0; MAX_PARENTS];
        for &i in &self.order {
            let eq = &self.equations[i];
            if eq.frozen || eq.expr.noise_count() == 0 {
                u[i] = eq.noise.mean();
                continue;
            }
            let n = self.gather(i, window, x, &mut buf);
            let target = x[i] - self.trend_at(i, t);
            let mut inp = Inputs { parents: &buf[..n], t: t as f64, noise: 0.0 };
            u[i] = if eq.expr.noise_is_additive() {
                target - eq.expr.eval(&inp)
            } else {
                invert(|v| {
                    inp.noise = v;
                    eq.expr.eval_dual(&inp, Seed::Noise)
                }, target)
                .ok_or_else(|| {
                    Error::UnsupportedAbduction(format!(
                        "cannot invert equation of `{}` at value {}",
                        self.variables[i].name, x[i]
                    ))
                })?
            };
        }
        Ok(u)
    }

    /// Counterfactual state at the observed time under `iv`, which must be
    /// applied at `obs.t`.
    pub fn abduct_and_counterfactual(&self, obs: Observed, iv: &Intervention) -> Result<Vec<f64>> {
        if iv.apply_at != obs.t {
            return Err(Error::InvalidIntervention(format!(
                "counterfactual at t={} but intervention applies at t={}",
                obs.t, iv.apply_at
            )));
        }
        self.validate_intervention(iv)?;
        let window = obs.window();
        let u = self.abduct(window, obs.t, obs.last())?;
        let plan = Plan::new(self, &iv.features, iv.mode)?;
        self.propagate(window, obs.t, obs.last(), &u, &plan, &iv.dense_theta(self.dim()), None)
    }

    /// Draws from the interventional distribution at `iv.apply_at`: each
    /// sample rolls forward with fresh noise, keeps the non-descendants of
    /// the set and re-evaluates the rest with fresh noise.
    pub fn interventional_sample(&self, obs: Observed, iv: &Intervention, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if iv.apply_at < obs.t {
            return Err(Error::InvalidIntervention("intervention precedes the observation".into()));
        }
        self.validate_intervention(iv)?;
        let steps = (iv.apply_at - obs.t) as usize;
        let plan = Plan::new(self, &iv.features, iv.mode)?;
        let shift = iv.dense_theta(self.dim());
        (0..n as u64)
            .map(|k| {
                let r = self.rollout(obs, steps, seed, k)?;
                let u = self.draw_noise(seed, k, r.t, purpose::INTERVENE);
                self.propagate(&r.window, r.t, &r.state, &u, &plan, &shift, None)
            })
            .collect()
    }

    pub fn validate_intervention(&self, iv: &Intervention) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidIntervention(m));
        if iv.features.is_empty() {
            return bad("empty feature set".into());
        }
        if iv.features.len() != iv.theta.len() {
            return bad("theta length differs from feature count".into());
        }
        for (&f, &th) in iv.features.iter().zip(&iv.theta) {
            let v = self.variables.get(f).ok_or(Error::UnknownVariable(f))?;
            if !v.actionable {
                return bad(format!("`{}` is not actionable", v.name));
            }
            if iv.mode == Mode::Soft && v.monotone && th < 0.0 {
                return bad(format!("`{}` only admits non-negative offsets", v.name));
            }
            if !th.is_finite() {
                return bad(format!("non-finite offset for `{}`", v.name));
            }
        }
        Ok(())
    }
}

/// Solves `g(u) = target` for monotone `g` by bracketing, then safeguarded
/// Newton steps.
fn invert(mut g: impl FnMut(f64) -> (f64, f64), target: f64) -> Option<f64> {
    let f = |v: (f64, f64)| (v.0 - target, v.1);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let (mut flo, mut fhi) = (f(g(lo)).0, f(g(hi)).0);
    let mut grow = 0;
    while flo.signum() == fhi.signum() && flo != 0.0 && fhi != 0.0 {
        grow += 1;
        if grow > 60 {
            return None;
        }
        lo *= 2.0;
        hi *= 2.0;
        flo = f(g(lo)).0;
        fhi = f(g(hi)).0;
    }
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    let increasing = fhi > 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(g(x));
        if fx.abs() <= 4.0 * f64::EPSILON * (1.0 + target.abs()) {
            return Some(x);
        }
        if (fx > 0.0) == increasing {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dfx;
        x = if dfx != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    let fx = f(g(x)).0;
    (fx.abs() <= 1e-9 * (1.0 + target.abs())).then_some(x)
}
