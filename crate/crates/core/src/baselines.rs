//! Proximal DCA baselines.
//!
//! `pdca_solve` iterates `x_{k+1} = prox_{w/L}(x_k − (∇g(x_k) − ξ_k)/L)`.
//! `pdcae_solve` applies the same step at the extrapolated point
//! `y_k = x_k + ((t_{k−1} − 1)/t_k)(x_k − x_{k−1})` with the accelerated
//! sequence `t_{k+1} = (1 + sqrt(1 + 4t_k²))/2`, reset to `t = 1` every
//! `restart_period` iterations. Both stop on the same
//! `‖x_{k+1} − x_k‖ ≤ eps·max(1, ‖x_k‖)` test as [`crate::solve`].

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{DcError, Result};
use crate::problem::DcProblem;
use crate::solver::{
    prox_gradient_point, IterRecord, IterateState, OuterConfig, RunStatus, RunTrace,
};

pub fn pdca_solve(prob: &DcProblem, x0: &DVector<f64>, cfg: &OuterConfig) -> Result<(DVector<f64>, RunTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let lip = prob.lipschitz();
    let w = prob.reg.l1_weight();
    let mut state = IterateState::new(prob, x0.clone())?;
    let mut trace = RunTrace::new(state.f, &state.x, cfg.keep_iterates);

    for k in 0..cfg.max_outer {
        let tol = cfg.tolerance(&state.x);
        let x_new = prox_gradient_point(&state.x, &state.linear_term(), lip, w);
        let d = &x_new - &state.x;
        let d_norm = d.norm();
        trace.final_d_norm = d_norm;
        if d_norm <= tol {
            trace.status = RunStatus::Converged;
            break;
        }
        let ax_new = prob.smooth.apply(&x_new);
        state = IterateState::from_product(prob, x_new, ax_new, k + 1)?;
        trace.push(
            IterRecord {
                k,
                f: state.f,
                d_norm,
                eta: 1.0,
                inner_iters: 0,
                line_search_backtracks: 0,
                model_decrease: f64::NAN,
                fallback: false,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            &state.x,
            cfg.keep_iterates,
        );
    }
    Ok((state.x, trace))
}

pub fn pdcae_solve(prob: &DcProblem, x0: &DVector<f64>, cfg: &OuterConfig) -> Result<(DVector<f64>, RunTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let lip = prob.lipschitz();
    let w = prob.reg.l1_weight();
    let state = IterateState::new(prob, x0.clone())?;
    let mut trace = RunTrace::new(state.f, &state.x, cfg.keep_iterates);
    // Only x, Ax and ξ are carried; the gradient is taken at the extrapolated point.
    let (mut x, mut ax, mut xi) = (state.x, state.ax, state.xi);
    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let (mut t_prev, mut t) = (1.0_f64, 1.0_f64);

    for k in 0..cfg.max_outer {
        if k % cfg.restart_period == 0 {
            t_prev = 1.0;
            t = 1.0;
        }
        let tol = cfg.tolerance(&x);
        let momentum = (t_prev - 1.0) / t;
        let (y, ay) = if momentum == 0.0 {
            (x.clone(), ax.clone())
        } else {
            (
                &x + (&x - &x_prev) * momentum,
                &ax + (&ax - &ax_prev) * momentum,
            )
        };
        let (_, grad_y) = prob.smooth.value_grad_from_product(&ay);
        let x_new = prox_gradient_point(&y, &(grad_y - &xi), lip, w);
        let d_norm = (&x_new - &x).norm();
        trace.final_d_norm = d_norm;
        if d_norm <= tol {
            trace.status = RunStatus::Converged;
            break;
        }
        let ax_new = prob.smooth.apply(&x_new);
        let h = prob.reg.h_oracle(&x_new);
        let f = prob.smooth.value_from_product(&ax_new) + h.h1 - h.h2;
        if !f.is_finite() {
            return Err(DcError::NonFinite("objective value"));
        }
        trace.push(
            IterRecord {
                k,
                f,
                d_norm,
                eta: 1.0,
                inner_iters: 0,
                line_search_backtracks: 0,
                model_decrease: f64::NAN,
                fallback: false,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            &x_new,
            cfg.keep_iterates,
        );
        x_prev = std::mem::replace(&mut x, x_new);
        ax_prev = std::mem::replace(&mut ax, ax_new);
        xi = h.xi;
        t_prev = t;
        t = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
    }
    Ok((x, trace))
}
