//! Scaled proximal mapping of a weighted ℓ1 norm under a rank-two metric.
//!
//! For `B = τI + u1u1ᵀ − u2u2ᵀ`, the minimizer of `h1(x) + ½‖x − x̄‖²_B` is
//! `prox_{h1/τ}(ζ(α*))` with
//!
//! ```text
//! ζ(α) = x̄ − (α₁/τ)u1 + α₂ P⁻¹u2,           P = τI + u1u1ᵀ,
//! 𝓛(α) = ( u1ᵀ(x̄ + α₂P⁻¹u2 − prox(ζ(α))) + α₁ ,
//!          u2ᵀ(x̄ − prox(ζ(α))) + α₂ ),
//! ```
//!
//! and `α*` the unique root of `𝓛`. The root is found with a globalized
//! semi-smooth Newton method on the merit `Ψ = ½‖𝓛‖²`. Every evaluation is
//! `O(n)`.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{DcError, Result};
use crate::metric::RankTwoMetric;
use crate::problem::soft_threshold;

/// `(τI + u1u1ᵀ)⁻¹ v`.
pub fn sherman_morrison_apply(tau: f64, u1: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let coef = u1.dot(v) / (tau * tau + tau * u1.norm_squared());
    let mut out = v / tau;
    out.axpy(-coef, u1, 1.0);
    out
}

#[derive(Debug, Clone)]
pub struct ProxSubproblem {
    pub xbar: DVector<f64>,
    pub tau: f64,
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
    /// Weight of the ℓ1 norm in `h1`.
    pub l1_level: f64,
    /// `P⁻¹u2`.
    pub p_u2: DVector<f64>,
    u1u1: f64,
    u1u2: f64,
    u2u2: f64,
    u1x: f64,
    u2x: f64,
    u1p: f64,
}

/// One evaluation of `𝓛` with the intermediates the solver reuses.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub zeta: DVector<f64>,
    pub x_plus: DVector<f64>,
    pub ell: Vector2<f64>,
}

impl ProxSubproblem {
    pub fn new(
        xbar: DVector<f64>,
        tau: f64,
        u1: DVector<f64>,
        u2: DVector<f64>,
        l1_level: f64,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(DcError::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(l1_level >= 0.0) {
            return Err(DcError::InvalidParameter(format!(
                "l1 level must be non-negative, got {l1_level}"
            )));
        }
        for v in [&u1, &u2] {
            if v.len() != xbar.len() {
                return Err(DcError::DimensionMismatch {
                    expected: xbar.len(),
                    got: v.len(),
                });
            }
        }
        let p_u2 = sherman_morrison_apply(tau, &u1, &u2);
        Ok(Self {
            u1u1: u1.norm_squared(),
            u1u2: u1.dot(&u2),
            u2u2: u2.norm_squared(),
            u1x: u1.dot(&xbar),
            u2x: u2.dot(&xbar),
            u1p: u1.dot(&p_u2),
            xbar,
            tau,
            u1,
            u2,
            l1_level,
            p_u2,
        })
    }

    pub fn from_metric(xbar: DVector<f64>, metric: &RankTwoMetric, l1_level: f64) -> Result<Self> {
        Self::new(xbar, metric.tau, metric.u1.clone(), metric.u2.clone(), l1_level)
    }

    pub fn dim(&self) -> usize {
        self.xbar.len()
    }

    /// Soft-threshold level of `prox_{h1/τ}`.
    pub fn threshold(&self) -> f64 {
        self.l1_level / self.tau
    }

    pub fn inner_products(&self) -> (f64, f64, f64) {
        (self.u1u1, self.u1u2, self.u2u2)
    }

    pub fn zeta(&self, alpha: &Vector2<f64>) -> DVector<f64> {
        let mut z = self.xbar.clone();
        z.axpy(-alpha[0] / self.tau, &self.u1, 1.0);
        z.axpy(alpha[1], &self.p_u2, 1.0);
        z
    }

    pub fn evaluate(&self, alpha: &Vector2<f64>) -> Evaluation {
        let zeta = self.zeta(alpha);
        let thr = self.threshold();
        let x_plus = zeta.map(|v| soft_threshold(v, thr));
        let l1 = self.u1x + alpha[1] * self.u1p - self.u1.dot(&x_plus) + alpha[0];
        let l2 = self.u2x - self.u2.dot(&x_plus) + alpha[1];
        Evaluation {
            zeta,
            x_plus,
            ell: Vector2::new(l1, l2),
        }
    }

    pub fn ell(&self, alpha: &Vector2<f64>) -> Vector2<f64> {
        self.evaluate(alpha).ell
    }

    /// `U𝓛(α)` with `U = [−u1, u2]`.
    pub fn residual_from_ell(&self, ell: &Vector2<f64>) -> DVector<f64> {
        let mut r = &self.u2 * ell[1];
        r.axpy(-ell[0], &self.u1, 1.0);
        r
    }

    pub fn residual_ul(&self, alpha: &Vector2<f64>) -> DVector<f64> {
        self.residual_from_ell(&self.ell(alpha))
    }

    /// Clarke generalized Jacobian element in the transposed layout
    /// (`V[(i, j)] = ∂𝓛_j/∂α_i`), so the Newton direction solves `Vᵀp = −𝓛`.
    ///
    /// The selection uses `wᵢ = 1` iff `|ζᵢ| > threshold`; ties take `wᵢ = 0`.
    pub fn clarke_jacobian(&self, alpha: &Vector2<f64>) -> Matrix2<f64> {
        self.jacobian_at(&self.zeta(alpha))
    }

    fn jacobian_at(&self, zeta: &DVector<f64>) -> Matrix2<f64> {
        let thr = self.threshold();
        let (mut w11, mut w21, mut w1p, mut w2p) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..zeta.len() {
            if zeta[i].abs() > thr {
                let (a, b, p) = (self.u1[i], self.u2[i], self.p_u2[i]);
                w11 += a * a;
                w21 += b * a;
                w1p += a * p;
                w2p += b * p;
            }
        }
        Matrix2::new(
            1.0 + w11 / self.tau,
            w21 / self.tau,
            self.u1p - w1p,
            1.0 - w2p,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    /// Armijo constant on the merit, in `(0, 1/2)`.
    pub sigma: f64,
    /// Backtracking factor in `(0, 1)`.
    pub rho: f64,
    /// Inexactness parameter in `(0, 1]`.
    pub theta: f64,
    /// Absolute stop on `‖x⁺ − x_k‖`. The outer solver overwrites this with
    /// its own scaled tolerance.
    pub eps: f64,
    pub max_newton: usize,
    pub max_backtracks: usize,
    pub det_floor: f64,
    /// Absolute slack on the inexactness test so that `θ = 1` can terminate
    /// at a root computed in floating point.
    pub residual_floor: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            rho: 0.5,
            theta: 0.99,
            eps: 0.0,
            max_newton: 100,
            max_backtracks: 50,
            det_floor: 1e-12,
            residual_floor: 1e-12,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.sigma < 0.5
            && self.rho > 0.0
            && self.rho < 1.0
            && self.theta > 0.0
            && self.theta <= 1.0
            && self.eps >= 0.0
            && self.det_floor >= 0.0
            && self.residual_floor >= 0.0;
        if !ok {
            return Err(DcError::InvalidParameter(format!(
                "inner configuration out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerStatus {
    InexactSatisfied,
    DkSmall,
    MaxIter,
    JacobianSingular,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x_plus: DVector<f64>,
    /// `U𝓛(α)` at the returned `α`.
    pub residual: DVector<f64>,
    pub alpha: Vector2<f64>,
    pub newton_iters: usize,
    pub status: InnerStatus,
    /// `‖𝓛(α_j)‖` for every visited `α_j`.
    pub ell_norms: Vec<f64>,
    /// Accepted step lengths `t_j`.
    pub steps: Vec<f64>,
    pub backtracks: usize,
    /// Iterations where the full Newton step failed the merit test.
    pub full_step_rejections: usize,
}

impl InnerResult {
    /// `(‖r‖_H, ‖x⁺ − x_k‖_B)` under `metric`.
    pub fn inexactness_norms(&self, x_k: &DVector<f64>, metric: &RankTwoMetric) -> (f64, f64) {
        let d = &self.x_plus - x_k;
        (
            metric.h_quad(&self.residual).max(0.0).sqrt(),
            metric.b_quad(&d).max(0.0).sqrt(),
        )
    }
}

/// Semi-smooth Newton with merit backtracking, started from `α = 0`.
///
/// Stops as soon as `‖U𝓛(α)‖_H ≤ (1−θ)‖x⁺ − x_k‖_B` or `‖x⁺ − x_k‖ ≤ ε`.
pub fn solve_subproblem(
    sub: &ProxSubproblem,
    x_k: &DVector<f64>,
    metric: &RankTwoMetric,
    cfg: &InnerConfig,
) -> InnerResult {
    let mut alpha = Vector2::zeros();
    let mut ev = sub.evaluate(&alpha);
    let mut ell_norms = Vec::new();
    let mut steps = Vec::new();
    let mut backtracks = 0;
    let mut full_step_rejections = 0;
    let mut j = 0;

    let status = loop {
        ell_norms.push(ev.ell.norm());
        let residual = sub.residual_from_ell(&ev.ell);
        let d = &ev.x_plus - x_k;
        let r_h = metric.h_quad(&residual).max(0.0).sqrt();
        let d_b = metric.b_quad(&d).max(0.0).sqrt();
        if r_h <= (1.0 - cfg.theta) * d_b + cfg.residual_floor {
            break InnerStatus::InexactSatisfied;
        }
        if d.norm() <= cfg.eps {
            break InnerStatus::DkSmall;
        }
        if j >= cfg.max_newton {
            break InnerStatus::MaxIter;
        }

        let v = sub.jacobian_at(&ev.zeta);
        if v.determinant().abs() < cfg.det_floor {
            break InnerStatus::JacobianSingular;
        }
        let Some(p) = v.transpose().lu().solve(&(-ev.ell)) else {
            break InnerStatus::JacobianSingular;
        };

        let psi = 0.5 * ev.ell.norm_squared();
        let mut t = 1.0;
        let mut accepted = None;
        for l in 0..=cfg.max_backtracks {
            let trial_alpha = alpha + p * t;
            let trial = sub.evaluate(&trial_alpha);
            if 0.5 * trial.ell.norm_squared() <= (1.0 - 2.0 * cfg.sigma * t) * psi {
                backtracks += l;
                if l > 0 {
                    full_step_rejections += 1;
                }
                accepted = Some((trial_alpha, trial));
                break;
            }
            t *= cfg.rho;
        }
        let Some((next_alpha, next_ev)) = accepted else {
            backtracks += cfg.max_backtracks;
            full_step_rejections += 1;
            break InnerStatus::MaxIter;
        };
        steps.push(t);
        alpha = next_alpha;
        ev = next_ev;
        j += 1;
    };

    InnerResult {
        residual: sub.residual_from_ell(&ev.ell),
        x_plus: ev.x_plus,
        alpha,
        newton_iters: j,
        status,
        ell_norms,
        steps,
        backtracks,
        full_step_rejections,
    }
}
