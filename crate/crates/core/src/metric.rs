//! Memoryless BFGS metric with sizing and spectral scaling.
//!
//! With curvature pair `(s, z)`, sizing `τ` and scaling `γ`, the metric is
//!
//! ```text
//! B = τI − τ ssᵀ/sᵀs + γ zzᵀ/sᵀz = τI + u1u1ᵀ − u2u2ᵀ,
//! u1 = sqrt(γ/sᵀz)·z,   u2 = (sqrt(τ)/‖s‖)·s,
//! ```
//!
//! so that `Bs = γz`. Its inverse is applied in closed form. Only the BFGS
//! member of the Broyden family is provided; the family's extra rank-one
//! term (and its parameter bounds) vanishes for it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DcError, Result};

/// Cosine threshold above which `s` and `z` are treated as parallel.
pub const PARALLEL_COS: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Li–Fukushima regularization constant.
    pub nu_tilde: f64,
    pub gamma_bounds: [f64; 2],
    pub tau_bounds: [f64; 2],
    /// Sizing value before clamping.
    pub tau: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            nu_tilde: 1e-6,
            gamma_bounds: [1e-8, 1e8],
            tau_bounds: [1e-4, 1e4],
            tau: 1.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let [glo, ghi] = self.gamma_bounds;
        let [tlo, thi] = self.tau_bounds;
        let ok = self.nu_tilde > 0.0
            && glo > 0.0
            && glo <= ghi
            && tlo > 0.0
            && tlo <= thi
            && self.tau > 0.0;
        if !ok {
            return Err(DcError::InvalidParameter(format!(
                "metric configuration out of range: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `s = x_k − x_{k−1}`, `y` the gradient gap and `z = y + νs`.
#[derive(Debug, Clone)]
pub struct CurvaturePair {
    pub s: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub nu: f64,
    pub sz: f64,
    pub ss: f64,
}

/// Builds the regularized pair, or `None` when the step is zero.
pub fn make_pair(
    x_prev: &DVector<f64>,
    x_cur: &DVector<f64>,
    g_prev: &DVector<f64>,
    g_cur: &DVector<f64>,
    cfg: &MetricConfig,
) -> Option<CurvaturePair> {
    let s = x_cur - x_prev;
    let ss = s.norm_squared();
    if ss == 0.0 {
        return None;
    }
    let y = g_cur - g_prev;
    let sy = s.dot(&y);
    let mut nu = if sy >= cfg.nu_tilde * ss {
        0.0
    } else {
        (-sy / ss).max(0.0) + cfg.nu_tilde
    };
    let mut z = if nu == 0.0 { y.clone() } else { &y + &s * nu };
    let mut sz = s.dot(&z);
    // Cancellation between sᵀy and νsᵀs can leave the computed sᵀz short of
    // the bound by the dot product's rounding error; widen the shift until it
    // is met.
    let mut tries = 0;
    while nu > 0.0 && sz < cfg.nu_tilde * ss && tries < 16 {
        let floor = f64::EPSILON * (z.norm_squared() / ss).sqrt();
        let extra = (2.0 * (cfg.nu_tilde * ss - sz) / ss).max(floor) * f64::from(1u32 << tries);
        nu += extra;
        z.axpy(extra, &s, 1.0);
        sz = s.dot(&z);
        tries += 1;
    }
    Some(CurvaturePair {
        s,
        y,
        z,
        nu,
        sz,
        ss,
    })
}

/// True when `u1` and `u2` are (numerically) parallel.
pub fn dependence_check(pair: &CurvaturePair) -> bool {
    let zz = pair.z.norm_squared();
    if zz == 0.0 {
        return true;
    }
    pair.sz.abs() / (pair.ss.sqrt() * zz.sqrt()) > PARALLEL_COS
}

/// `B = τI + u1u1ᵀ − u2u2ᵀ` together with what `H = B⁻¹` needs.
#[derive(Debug, Clone)]
pub struct RankTwoMetric {
    pub tau: f64,
    pub gamma: f64,
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
    pub pair: CurvaturePair,
    zz: f64,
    w: DVector<f64>,
}

pub fn bfgs_metric(pair: CurvaturePair, cfg: &MetricConfig) -> RankTwoMetric {
    debug_assert!(pair.sz > 0.0);
    let zz = pair.z.norm_squared();
    let gamma = (pair.sz / zz).clamp(cfg.gamma_bounds[0], cfg.gamma_bounds[1]);
    let tau = cfg.tau.clamp(cfg.tau_bounds[0], cfg.tau_bounds[1]);
    let u1 = &pair.z * (gamma / pair.sz).sqrt();
    let u2 = &pair.s * (tau.sqrt() / pair.ss.sqrt());
    let w = (&pair.s / pair.sz - &pair.z / zz) * zz.sqrt();
    RankTwoMetric {
        tau,
        gamma,
        u1,
        u2,
        pair,
        zz,
        w,
    }
}

impl RankTwoMetric {
    pub fn dim(&self) -> usize {
        self.u1.len()
    }

    pub fn apply_b(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v * self.tau;
        out.axpy(self.u1.dot(v), &self.u1, 1.0);
        out.axpy(-self.u2.dot(v), &self.u2, 1.0);
        out
    }

    /// `H v = (1/τ)(v − z zᵀv/zᵀz + w wᵀv) + s sᵀv/(γ sᵀz)`.
    pub fn apply_h(&self, v: &DVector<f64>) -> DVector<f64> {
        let z = &self.pair.z;
        let s = &self.pair.s;
        let mut out = v.clone();
        out.axpy(-z.dot(v) / self.zz, z, 1.0);
        out.axpy(self.w.dot(v), &self.w, 1.0);
        out /= self.tau;
        out.axpy(s.dot(v) / (self.gamma * self.pair.sz), s, 1.0);
        out
    }

    /// `vᵀBv`.
    pub fn b_quad(&self, v: &DVector<f64>) -> f64 {
        let a = self.u1.dot(v);
        let b = self.u2.dot(v);
        self.tau * v.norm_squared() + a * a - b * b
    }

    /// `vᵀHv`.
    pub fn h_quad(&self, v: &DVector<f64>) -> f64 {
        let zv = self.pair.z.dot(v);
        let wv = self.w.dot(v);
        let sv = self.pair.s.dot(v);
        (v.norm_squared() - zv * zv / self.zz + wv * wv) / self.tau
            + sv * sv / (self.gamma * self.pair.sz)
    }
}
