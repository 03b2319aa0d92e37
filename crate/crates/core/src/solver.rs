//! Inexact proximal DC Newton-type method.
//!
//! Each outer iteration linearizes `h2` at `x_k` with `ξ_k ∈ ∂h2(x_k)`,
//! approximately minimizes
//!
//! ```text
//! (∇g(x_k) − ξ_k)ᵀ(x − x_k) + ½‖x − x_k‖²_{B_k} + h1(x)
//! ```
//!
//! with the semi-smooth Newton scaled prox, and backtracks along
//! `d_k = x_k⁺ − x_k` until
//! `f(x_k + ηd_k) ≤ f(x_k) + δη((∇g − ξ)ᵀd_k + h1(x_k⁺) − h1(x_k))`.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DcError, Result};
use crate::metric::{bfgs_metric, dependence_check, make_pair, MetricConfig, RankTwoMetric};
use crate::problem::{soft_threshold, DcProblem};
use crate::scaled_prox::{solve_subproblem, InnerConfig, InnerStatus, ProxSubproblem};

/// How `B_k` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricMode {
    /// Memoryless BFGS from the latest curvature pair (`L·I` on the first step).
    MemorylessBfgs,
    /// `B_k = L·I` throughout, which makes every subproblem an exact prox step.
    ScaledIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    /// Sufficient-decrease constant in `(0, 1)`.
    pub delta: f64,
    /// Backtracking factor in `(0, 1)`.
    pub beta: f64,
    /// Stop when `‖d_k‖ ≤ eps·max(1, ‖x_k‖)`.
    pub eps: f64,
    pub max_outer: usize,
    pub max_backtracks: usize,
    pub inner: InnerConfig,
    pub metric: MetricConfig,
    pub metric_mode: MetricMode,
    /// Take `η_k = 1` without a line search.
    pub unit_step: bool,
    /// Store every iterate in the trace.
    pub keep_iterates: bool,
    /// Fixed restart period of the extrapolated baseline.
    pub restart_period: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            beta: 0.5,
            eps: 1e-5,
            max_outer: 10_000,
            max_backtracks: 50,
            inner: InnerConfig::default(),
            metric: MetricConfig::default(),
            metric_mode: MetricMode::MemorylessBfgs,
            unit_step: false,
            keep_iterates: false,
            restart_period: 200,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta > 0.0
            && self.delta < 1.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.eps >= 0.0
            && self.restart_period >= 1;
        if !ok {
            return Err(DcError::InvalidParameter(format!(
                "outer configuration out of range: delta={} beta={} eps={} restart={}",
                self.delta, self.beta, self.eps, self.restart_period
            )));
        }
        self.inner.validate()?;
        self.metric.validate()
    }

    pub(crate) fn tolerance(&self, x: &DVector<f64>) -> f64 {
        self.eps * x.norm().max(1.0)
    }
}

/// Everything known at `x_k`: the product `Ax_k`, `f`, `∇g`, `ξ` and `h1`.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x: DVector<f64>,
    pub ax: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub xi: DVector<f64>,
    pub h1: f64,
    pub k: usize,
}

impl IterateState {
    pub fn new(prob: &DcProblem, x: DVector<f64>) -> Result<Self> {
        prob.smooth.check_dim(&x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DcError::NonFinite("initial point"));
        }
        let ax = prob.smooth.apply(&x);
        Self::from_product(prob, x, ax, 0)
    }

    pub(crate) fn from_product(
        prob: &DcProblem,
        x: DVector<f64>,
        ax: DVector<f64>,
        k: usize,
    ) -> Result<Self> {
        let (g, grad) = prob.smooth.value_grad_from_product(&ax);
        let h = prob.reg.h_oracle(&x);
        let f = g + h.h1 - h.h2;
        if !f.is_finite() {
            return Err(DcError::NonFinite("objective value"));
        }
        Ok(Self {
            x,
            ax,
            f,
            grad,
            xi: h.xi,
            h1: h.h1,
            k,
        })
    }

    /// `∇g(x_k) − ξ_k`.
    pub fn linear_term(&self) -> DVector<f64> {
        &self.grad - &self.xi
    }
}

/// Exact minimizer of `vᵀ(x − y) + (c/2)‖x − y‖² + w‖x‖₁`.
pub(crate) fn prox_gradient_point(y: &DVector<f64>, v: &DVector<f64>, c: f64, w: f64) -> DVector<f64> {
    let level = w / c;
    y.zip_map(v, |yi, vi| soft_threshold(yi - vi / c, level))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIter,
    LineSearchFail,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "Converged",
            Self::MaxIter => "MaxIter",
            Self::LineSearchFail => "LineSearchFail",
        }
    }
}

/// One accepted outer step `x_{k+1} = x_k + η_k d_k`.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub k: usize,
    /// `f(x_{k+1})`.
    pub f: f64,
    pub d_norm: f64,
    pub eta: f64,
    pub inner_iters: usize,
    pub line_search_backtracks: usize,
    pub model_decrease: f64,
    /// Subproblem solved by an exact `L·I` step after an inner failure.
    pub fallback: bool,
    /// Milliseconds since the run started.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub f_initial: f64,
    pub records: Vec<IterRecord>,
    pub status: RunStatus,
    /// `‖d‖` at the last computed direction.
    pub final_d_norm: f64,
    pub total_inner_iters: usize,
    pub fallback_steps: usize,
    /// `x_0, x_1, …` when `keep_iterates` is set.
    pub iterates: Vec<DVector<f64>>,
}

impl RunTrace {
    pub(crate) fn new(f_initial: f64, x0: &DVector<f64>, keep: bool) -> Self {
        Self {
            f_initial,
            records: Vec::new(),
            status: RunStatus::MaxIter,
            final_d_norm: f64::NAN,
            total_inner_iters: 0,
            fallback_steps: 0,
            iterates: if keep { vec![x0.clone()] } else { Vec::new() },
        }
    }

    pub fn outer_iters(&self) -> usize {
        self.records.len()
    }

    pub fn f_final(&self) -> f64 {
        self.records.last().map_or(self.f_initial, |r| r.f)
    }

    pub(crate) fn push(&mut self, rec: IterRecord, x: &DVector<f64>, keep: bool) {
        self.total_inner_iters += rec.inner_iters;
        self.fallback_steps += rec.fallback as usize;
        self.records.push(rec);
        if keep {
            self.iterates.push(x.clone());
        }
    }
}

/// Direction data handed to the line search.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x_plus: DVector<f64>,
    pub d: DVector<f64>,
    /// `(∇g − ξ)ᵀd + h1(x⁺) − h1(x)`.
    pub model_decrease: f64,
}

impl StepOutcome {
    pub fn new(prob: &DcProblem, state: &IterateState, x_plus: DVector<f64>) -> Self {
        let d = &x_plus - &state.x;
        let model_decrease =
            state.linear_term().dot(&d) + prob.reg.h1(&x_plus) - state.h1;
        Self {
            x_plus,
            d,
            model_decrease,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub eta: f64,
    pub f_new: f64,
    pub x_new: DVector<f64>,
    pub ax_new: DVector<f64>,
    pub backtracks: usize,
}

/// Backtracking over `η ∈ {1, β, β², …}` for the sufficient-decrease test.
///
/// The full step evaluates at `x⁺` itself rather than `x + 1·d`.
pub fn line_search(
    prob: &DcProblem,
    state: &IterateState,
    step: &StepOutcome,
    cfg: &OuterConfig,
) -> Result<LineSearchResult> {
    let mut eta = 1.0;
    for backtracks in 0..=cfg.max_backtracks {
        let x_new = if backtracks == 0 {
            step.x_plus.clone()
        } else {
            &state.x + &step.d * eta
        };
        let ax_new = prob.smooth.apply(&x_new);
        let g = prob.smooth.value_from_product(&ax_new);
        let h = prob.reg.h_oracle(&x_new);
        let f_new = g + h.h1 - h.h2;
        if !f_new.is_finite() {
            return Err(DcError::NonFinite("objective value in line search"));
        }
        if f_new <= state.f + cfg.delta * eta * step.model_decrease {
            return Ok(LineSearchResult {
                eta,
                f_new,
                x_new,
                ax_new,
                backtracks,
            });
        }
        eta *= cfg.beta;
    }
    Err(DcError::LineSearchFailed(cfg.max_backtracks))
}

/// Largest componentwise distance of `−(∇g(x) − ξ)` from `∂(w‖·‖₁)(x)`.
pub fn criticality_residual(prob: &DcProblem, x: &DVector<f64>) -> Result<f64> {
    let (_, grad) = prob.smooth_oracle(x)?;
    let xi = prob.h_oracle(x).xi;
    let w = prob.reg.l1_weight();
    Ok((0..x.len())
        .map(|i| {
            let v = grad[i] - xi[i];
            if x[i] != 0.0 {
                (v + w * x[i].signum()).abs()
            } else {
                (v.abs() - w).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

enum Metric {
    Scaled(f64),
    RankTwo(Box<RankTwoMetric>),
}

fn choose_metric(
    prob: &DcProblem,
    prev: Option<&(DVector<f64>, DVector<f64>)>,
    state: &IterateState,
    cfg: &OuterConfig,
) -> Metric {
    let lip = prob.lipschitz();
    if cfg.metric_mode == MetricMode::ScaledIdentity {
        return Metric::Scaled(lip);
    }
    let Some((x_prev, g_prev)) = prev else {
        return Metric::Scaled(lip);
    };
    match make_pair(x_prev, &state.x, g_prev, &state.grad, &cfg.metric) {
        None => Metric::Scaled(lip),
        Some(pair) if dependence_check(&pair) => {
            Metric::Scaled(cfg.metric.tau.clamp(cfg.metric.tau_bounds[0], cfg.metric.tau_bounds[1]))
        }
        Some(pair) => Metric::RankTwo(Box::new(bfgs_metric(pair, &cfg.metric))),
    }
}

/// Runs the inexact proximal DC Newton-type method from `x0`.
pub fn solve(prob: &DcProblem, x0: &DVector<f64>, cfg: &OuterConfig) -> Result<(DVector<f64>, RunTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let lip = prob.lipschitz();
    let w = prob.reg.l1_weight();
    let mut state = IterateState::new(prob, x0.clone())?;
    let mut trace = RunTrace::new(state.f, &state.x, cfg.keep_iterates);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for k in 0..cfg.max_outer {
        let tol = cfg.tolerance(&state.x);
        let lin = state.linear_term();
        let mut inner_iters = 0;
        let mut fallback = false;

        let x_plus = match choose_metric(prob, prev.as_ref(), &state, cfg) {
            Metric::Scaled(c) => prox_gradient_point(&state.x, &lin, c, w),
            Metric::RankTwo(metric) => {
                let xbar = &state.x - metric.apply_h(&lin);
                let sub = ProxSubproblem::from_metric(xbar, &metric, w)?;
                let inner_cfg = InnerConfig { eps: tol, ..cfg.inner };
                let res = solve_subproblem(&sub, &state.x, &metric, &inner_cfg);
                inner_iters = res.newton_iters;
                match res.status {
                    InnerStatus::InexactSatisfied | InnerStatus::DkSmall => res.x_plus,
                    InnerStatus::MaxIter | InnerStatus::JacobianSingular => {
                        fallback = true;
                        prox_gradient_point(&state.x, &lin, lip, w)
                    }
                }
            }
        };

        let step = StepOutcome::new(prob, &state, x_plus);
        let d_norm = step.d.norm();
        trace.final_d_norm = d_norm;
        if d_norm <= tol {
            trace.total_inner_iters += inner_iters;
            trace.status = RunStatus::Converged;
            break;
        }

        let (eta, x_new, ax_new, backtracks) = if cfg.unit_step {
            let ax_new = prob.smooth.apply(&step.x_plus);
            (1.0, step.x_plus.clone(), ax_new, 0)
        } else {
            match line_search(prob, &state, &step, cfg) {
                Ok(ls) => (ls.eta, ls.x_new, ls.ax_new, ls.backtracks),
                Err(DcError::LineSearchFailed(_)) => {
                    trace.total_inner_iters += inner_iters;
                    trace.status = RunStatus::LineSearchFail;
                    break;
                }
                Err(e) => return Err(e),
            }
        };

        let next = IterateState::from_product(prob, x_new, ax_new, k + 1)?;
        trace.push(
            IterRecord {
                k,
                f: next.f,
                d_norm,
                eta,
                inner_iters,
                line_search_backtracks: backtracks,
                model_decrease: step.model_decrease,
                fallback,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            &next.x,
            cfg.keep_iterates,
        );
        let old = std::mem::replace(&mut state, next);
        prev = Some((old.x, old.grad));
    }
    Ok((state.x, trace))
}
