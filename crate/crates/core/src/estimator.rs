//! Linear approximate SCM learned from trajectories over a known graph:
//! `X_i^t = f_i(X_i^{t-1}, Pa_i^t, t) + U`, `U ~ N(0, 1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::scm::{Expr, Parent, ScmSpec, StructuralEquation, Trajectory, VarId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEquation {
    pub target: VarId,
    /// Names of the regressor inputs, aligned with `coefficients`.
    pub inputs: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residual_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub spec: ScmSpec,
    pub equations: Vec<FittedEquation>,
    /// Last timestep used for fitting.
    pub cutoff: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub cutoff: usize,
    /// Feed `t` to the regressors.
    pub use_time: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { cutoff: 50, use_time: true }
    }
}

const RANK_TOL: f64 = 1e-10;

/// Fits one equation per non-frozen variable by least squares on
/// timesteps `1..=cutoff`. Frozen variables keep a copy equation whose
/// initial draw matches the data at `t = 0`.
pub fn fit(trajs: &[Trajectory], graph: &ScmSpec, cfg: &FitConfig) -> Result<Estimator> {
    let d = graph.dim();
    if trajs.is_empty() {
        return Err(Error::DegenerateData("no trajectories".into()));
    }
    if let Some(bad) = trajs.iter().flat_map(|t| t.states()).find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let last = cfg.cutoff.min(trajs.iter().map(|t| t.states().len()).min().unwrap_or(0).saturating_sub(1));
    if last == 0 {
        return Err(Error::DegenerateData("trajectories need at least two timesteps before the cutoff".into()));
    }
    let names = graph.names();
    let mut eqs = Vec::with_capacity(d);
    let mut fitted = Vec::new();
    for i in 0..d {
        let values: Vec<f64> = trajs.iter().flat_map(|tr| tr.states()[..=last].iter().map(move |x| x[i])).collect();
        if graph.equation(i).frozen {
            let first: Vec<f64> = trajs.iter().map(|tr| tr.states()[0][i]).collect();
            eqs.push(StructuralEquation::new(i, vec![], Expr::Noise, initial_noise(&first)).frozen());
            continue;
        }
        if values.iter().all(|&v| v == values[0]) {
            let eq = StructuralEquation::new(i, vec![], Expr::sum(vec![Expr::c(values[0]), Expr::Noise]), NoiseSpec::zero());
            eqs.push(eq);
            fitted.push(FittedEquation {
                target: i,
                inputs: vec!["intercept".into()],
                coefficients: vec![values[0]],
                std_errors: vec![0.0],
                residual_variance: 0.0,
            });
            continue;
        }
        let mut parents = vec![Parent::lagged(i, 1)];
        for p in &graph.equation(i).parents {
            if p.lag == 0 && !parents.contains(p) {
                parents.push(*p);
            }
        }
        let (eq, fe) = fit_equation(trajs, i, &parents, &names, last, cfg.use_time)?;
        eqs.push(eq);
        fitted.push(fe);
    }
    let spec = ScmSpec::new(graph.variables().to_vec(), eqs, graph.label().cloned(), 1, graph.burn_in())?;
    Ok(Estimator { spec, equations: fitted, cutoff: last })
}

fn initial_noise(values: &[f64]) -> NoiseSpec {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == 0.0 || v == 1.0) {
        return NoiseSpec::Bernoulli { p: mean };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    NoiseSpec::gaussian(mean, var.sqrt())
}

fn fit_equation(
    trajs: &[Trajectory],
    i: VarId,
    parents: &[Parent],
    names: &[String],
    last: usize,
    use_time: bool,
) -> Result<(StructuralEquation, FittedEquation)> {
    // Column layout: intercept, parents in order, then time.
    let p = 1 + parents.len() + usize::from(use_time);
    let mut rows: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    for tr in trajs {
        for t in 1..=last {
            rows.push(1.0);
            for par in parents {
                rows.push(tr.states()[t - par.lag][par.var]);
            }
            if use_time {
                rows.push(t as f64);
            }
            ys.push(tr.states()[t][i]);
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, p, &rows);
    // Zero-variance regressors are dropped (the intercept absorbs them).
    let keep: Vec<usize> = (0..p)
        .filter(|&c| {
            if c == 0 {
                return true;
            }
            let col = x.column(c);
            col.iter().any(|&v| v != col[0])
        })
        .collect();
    let xk = x.select_columns(&keep);
    let y = DVector::from_vec(ys);
    let target = &names[i];
    let svd = xk.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= RANK_TOL * smax {
        return Err(Error::FitDegenerate(format!("design for `{target}` is rank deficient")));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| Error::FitDegenerate(format!("`{target}`: {e}")))?;
    let resid = &y - &xk * &beta;
    let dof = n.saturating_sub(keep.len()).max(1) as f64;
    let sigma2 = resid.norm_squared() / dof;
    let xtx_inv = (xk.transpose() * &xk)
        .try_inverse()
        .ok_or_else(|| Error::FitDegenerate(format!("design for `{target}` is rank deficient")))?;
    let mut coef = vec![0.0; p];
    let mut se = vec![0.0; p];
    for (j, &c) in keep.iter().enumerate() {
        coef[c] = beta[j];
        se[c] = (sigma2 * xtx_inv[(j, j)]).sqrt();
    }
    let mut inputs = vec!["intercept".to_string()];
    inputs.extend(parents.iter().map(|par| {
        if par.lag == 0 { names[par.var].clone() } else { format!("{}[t-{}]", names[par.var], par.lag) }
    }));
    if use_time {
        inputs.push("t".into());
    }
    let mut terms = vec![Expr::c(coef[0])];
    terms.extend((0..parents.len()).map(|s| Expr::scaled(coef[1 + s], Expr::p(s))));
    if use_time {
        terms.push(Expr::scaled(coef[p - 1], Expr::Time));
    }
    terms.push(Expr::Noise);
    let eq = StructuralEquation::new(i, parents.to_vec(), Expr::sum(terms), NoiseSpec::gaussian(0.0, 1.0));
    Ok((eq, FittedEquation { target: i, inputs, coefficients: coef, std_errors: se, residual_variance: sigma2 }))
}

/// One-step-ahead forecast error of `model` on data from `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastQuality {
    /// `mse[s][i]`: squared error for feature `i` at timestep `s + 1`.
    pub mse: Vec<Vec<f64>>,
}

impl ForecastQuality {
    pub fn per_feature(&self) -> Vec<f64> {
        let d = self.mse[0].len();
        (0..d).map(|i| self.mse.iter().map(|r| r[i]).sum::<f64>() / self.mse.len() as f64).collect()
    }

    /// Average over features and timesteps.
    pub fn overall(&self) -> f64 {
        let f = self.per_feature();
        f.iter().sum::<f64>() / f.len() as f64
    }
}

/// Samples `n` truth trajectories up to `horizon` and, at every step,
/// compares the model's noise-at-mean prediction from the true history
/// with the realised state.
pub fn forecast_quality(model: &ScmSpec, truth: &ScmSpec, horizon: usize, n: usize, seed: u64) -> Result<ForecastQuality> {
    if model.names() != truth.names() {
        return Err(Error::InvalidArgument("model and truth variables differ".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let d = truth.dim();
    let trajs = truth.sample_trajectory(horizon, n, seed)?;
    let u: Vec<f64> = model.equations().iter().map(|e| e.noise.mean()).collect();
    let mut mse = vec![vec![0.0; d]; horizon];
    for tr in &trajs {
        for t in 1..=horizon {
            let obs = tr.observed(t - 1);
            let window = &obs.rows[obs.rows.len().saturating_sub(model.horizon())..];
            let pred = model.step(window, t as i64, &u)?;
            for i in 0..d {
                mse[t - 1][i] += (pred[i] - tr.states()[t][i]).powi(2) / n as f64;
            }
        }
    }
    Ok(ForecastQuality { mse })
}
