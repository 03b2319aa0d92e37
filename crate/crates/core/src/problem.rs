//! Composite objective `f = g + h1 - h2` for sparse least squares.
//!
//! `g(x) = ½‖Ax − b‖²` is the smooth part. The regularizer is split into a
//! weighted ℓ1 norm `h1` and a convex `h2`, so every variant shares the same
//! soft-threshold prox.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{DcError, Result};

const POWER_MAX_SWEEPS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-10;

/// Componentwise soft threshold at `level`.
pub fn prox_l1(v: &DVector<f64>, level: f64) -> Result<DVector<f64>> {
    if !(level >= 0.0) {
        return Err(DcError::InvalidParameter(format!(
            "soft-threshold level must be non-negative, got {level}"
        )));
    }
    Ok(v.map(|vi| soft_threshold(vi, level)))
}

#[inline]
pub(crate) fn soft_threshold(v: f64, level: f64) -> f64 {
    if v >= level {
        v - level
    } else if v <= -level {
        v + level
    } else {
        0.0
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration.
///
/// Starts from the normalized all-ones vector and stops once the Rayleigh
/// quotient changes by less than `1e-10` relative.
pub fn estimate_lipschitz(a: &DMatrix<f64>) -> Result<f64> {
    if a.iter().all(|&v| v == 0.0) {
        return Err(DcError::ZeroOperator);
    }
    let n = a.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    if (a * &v).norm() == 0.0 {
        // The all-ones direction lies in the null space; start from the
        // heaviest column instead.
        let j = (0..n)
            .max_by(|&i, &k| a.column(i).norm().total_cmp(&a.column(k).norm()))
            .unwrap_or(0);
        v.fill(0.0);
        v[j] = 1.0;
    }
    let mut prev = 0.0;
    for _ in 0..POWER_MAX_SWEEPS {
        let av = a * &v;
        let z = a.tr_mul(&av);
        let rq = av.norm_squared();
        let zn = z.norm();
        if (rq - prev).abs() <= POWER_REL_TOL * rq {
            return Ok(rq);
        }
        prev = rq;
        v = z / zn;
    }
    Ok(prev)
}

/// `g(x) = ½‖Ax − b‖²` with a cached Lipschitz constant of its gradient.
#[derive(Debug, Clone)]
pub struct LeastSquaresSmooth {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lip: f64,
}

impl LeastSquaresSmooth {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(DcError::InvalidParameter("empty design matrix".into()));
        }
        if b.len() != a.nrows() {
            return Err(DcError::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        let lip = estimate_lipschitz(&a)?;
        Ok(Self { a, b, lip })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lipschitz(&self) -> f64 {
        self.lip
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ncols() {
            return Err(DcError::DimensionMismatch {
                expected: self.ncols(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Ax`, the quantity solvers cache between iterations.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    /// Value and gradient from a cached product `ax = A·x`.
    pub fn value_grad_from_product(&self, ax: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = ax - &self.b;
        let grad = self.a.tr_mul(&r);
        (0.5 * r.norm_squared(), grad)
    }

    pub fn value_from_product(&self, ax: &DVector<f64>) -> f64 {
        0.5 * (ax - &self.b).norm_squared()
    }

    /// Value and gradient at `x`, one product with `A` and one with `Aᵀ`.
    pub fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_dim(x)?;
        Ok(self.value_grad_from_product(&self.apply(x)))
    }
}

/// The DC regularizer `h = h1 − h2`, with `h1 = l1_weight·‖x‖₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// `λ(‖x‖₁ − ‖x‖)`.
    L1MinusL2 { lambda: f64 },
    /// `λ Σ log(1 + |xᵢ|/ε)`, split as `(λ/ε)‖x‖₁ − λ Σ(|xᵢ|/ε − log(|xᵢ|+ε) + log ε)`.
    LogSumPenalty { lambda: f64, eps: f64 },
    /// Plain `λ‖x‖₁` (`h2 = 0`), the convex special case.
    L1 { lambda: f64 },
}

/// `h1(x)`, `h2(x)` and a subgradient `xi ∈ ∂h2(x)`.
#[derive(Debug, Clone)]
pub struct HValues {
    pub h1: f64,
    pub h2: f64,
    pub xi: DVector<f64>,
}

fn check_weight(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(DcError::InvalidParameter(format!(
            "regularization weight must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

impl Regularizer {
    pub fn l1_minus_l2(lambda: f64) -> Result<Self> {
        check_weight(lambda)?;
        Ok(Self::L1MinusL2 { lambda })
    }

    pub fn log_sum(lambda: f64, eps: f64) -> Result<Self> {
        check_weight(lambda)?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(DcError::InvalidParameter(format!(
                "log-sum shift must be positive, got {eps}"
            )));
        }
        Ok(Self::LogSumPenalty { lambda, eps })
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        check_weight(lambda)?;
        Ok(Self::L1 { lambda })
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Self::L1MinusL2 { lambda } | Self::LogSumPenalty { lambda, .. } | Self::L1 { lambda } => {
                lambda
            }
        }
    }

    /// Weight of the ℓ1 norm making up `h1`.
    pub fn l1_weight(&self) -> f64 {
        match *self {
            Self::L1MinusL2 { lambda } | Self::L1 { lambda } => lambda,
            Self::LogSumPenalty { lambda, eps } => lambda / eps,
        }
    }

    pub fn h1(&self, x: &DVector<f64>) -> f64 {
        self.l1_weight() * x.lp_norm(1)
    }

    pub fn h_oracle(&self, x: &DVector<f64>) -> HValues {
        let h1 = self.h1(x);
        match *self {
            Self::L1MinusL2 { lambda } => {
                let nrm = x.norm();
                let xi = if nrm > 0.0 {
                    x * (lambda / nrm)
                } else {
                    DVector::zeros(x.len())
                };
                HValues {
                    h1,
                    h2: lambda * nrm,
                    xi,
                }
            }
            Self::LogSumPenalty { lambda, eps } => {
                let ln_eps = eps.ln();
                let h2 = lambda
                    * x.iter()
                        .map(|&v| v.abs() / eps - (v.abs() + eps).ln() + ln_eps)
                        .sum::<f64>();
                let xi = x.map(|v| {
                    if v == 0.0 {
                        0.0
                    } else {
                        lambda * v.signum() * (1.0 / eps - 1.0 / (v.abs() + eps))
                    }
                });
                HValues { h1, h2, xi }
            }
            Self::L1 { .. } => HValues {
                h1,
                h2: 0.0,
                xi: DVector::zeros(x.len()),
            },
        }
    }

    /// The penalty in its undecomposed closed form.
    pub fn penalty(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Self::L1MinusL2 { lambda } => lambda * (x.lp_norm(1) - x.norm()),
            Self::LogSumPenalty { lambda, eps } => {
                lambda * x.iter().map(|v| (v.abs() / eps).ln_1p()).sum::<f64>()
            }
            Self::L1 { lambda } => lambda * x.lp_norm(1),
        }
    }
}

/// `f = g + h1 − h2`. The smooth part is shared so one design matrix can
/// back several regularizer settings.
#[derive(Debug, Clone)]
pub struct DcProblem {
    pub smooth: Arc<LeastSquaresSmooth>,
    pub reg: Regularizer,
}

impl DcProblem {
    pub fn new(smooth: impl Into<Arc<LeastSquaresSmooth>>, reg: Regularizer) -> Self {
        Self {
            smooth: smooth.into(),
            reg,
        }
    }

    pub fn dim(&self) -> usize {
        self.smooth.ncols()
    }

    pub fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz()
    }

    pub fn smooth_oracle(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.smooth.value_grad(x)
    }

    pub fn h_oracle(&self, x: &DVector<f64>) -> HValues {
        self.reg.h_oracle(x)
    }

    pub fn f_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.smooth.check_dim(x)?;
        let g = self.smooth.value_from_product(&self.smooth.apply(x));
        let h = self.reg.h_oracle(x);
        Ok(g + h.h1 - h.h2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::InstanceRng::new(seed);
        DMatrix::from_fn(m, n, |_, _| rng.gaussian())
    }

    #[test]
    fn smooth_identity_design() {
        let s = LeastSquaresSmooth::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let (v, g) = s.value_grad(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(g.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn smooth_exact_fit() {
        let a = small_random(5, 8, 1);
        let xhat = DVector::from_fn(8, |i, _| i as f64 - 3.0);
        let s = LeastSquaresSmooth::new(a.clone(), &a * &xhat).unwrap();
        let (v, g) = s.value_grad(&xhat).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&gi| gi == 0.0));
    }

    #[test]
    fn smooth_dimension_mismatch() {
        let s = LeastSquaresSmooth::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(
            s.value_grad(&DVector::zeros(3)),
            Err(DcError::DimensionMismatch { .. })
        ));
        assert!(LeastSquaresSmooth::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }

    #[test]
    fn smooth_gradient_matches_central_differences() {
        let a = small_random(5, 8, 2);
        let b = DVector::from_fn(5, |i, _| (i as f64).sin());
        let s = LeastSquaresSmooth::new(a, b).unwrap();
        let mut rng = crate::rng::InstanceRng::new(9);
        for _ in 0..20 {
            let x = DVector::from_fn(8, |_, _| rng.gaussian());
            let (_, g) = s.value_grad(&x).unwrap();
            let fd = DVector::from_fn(8, |i, _| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (s.value_grad(&xp).unwrap().0 - s.value_grad(&xm).unwrap().0) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-6, "relative FD error {rel}");
        }
    }

    #[test]
    fn lipschitz_closed_forms() {
        let l = estimate_lipschitz(&DMatrix::identity(4, 4)).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let l = estimate_lipschitz(&d).unwrap();
        assert!((l - 9.0).abs() <= 9.0 * 1e-8, "{l}");
    }

    #[test]
    fn lipschitz_null_space_start() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let l = estimate_lipschitz(&a).unwrap();
        assert!((l - 2.0).abs() < 1e-8, "{l}");
    }

    #[test]
    fn lipschitz_matches_dense_eigensolver() {
        let a = small_random(20, 50, 5);
        let l = estimate_lipschitz(&a).unwrap();
        let ata = a.transpose() * &a;
        let eig = nalgebra::SymmetricEigen::new(ata);
        let lmax = eig.eigenvalues.max();
        assert!((l - lmax).abs() <= 1e-6 * lmax, "{l} vs {lmax}");
        assert!(l >= lmax - 1e-8 * lmax);
    }

    #[test]
    fn lipschitz_zero_operator() {
        let err = estimate_lipschitz(&DMatrix::zeros(3, 3)).unwrap_err();
        assert_eq!(err.to_string(), "zero operator");
    }

    #[test]
    fn h_oracle_l1_minus_l2() {
        let r = Regularizer::l1_minus_l2(1.0).unwrap();
        let h = r.h_oracle(&DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(h.h1, 7.0);
        assert_eq!(h.h2, 5.0);
        assert!((h.xi[0] - 0.6).abs() < 1e-15 && (h.xi[1] - 0.8).abs() < 1e-15);

        let h = r.h_oracle(&DVector::zeros(3));
        assert_eq!((h.h1, h.h2), (0.0, 0.0));
        assert!(h.xi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn h_oracle_log_sum() {
        let r = Regularizer::log_sum(1.0, 0.5).unwrap();
        let h = r.h_oracle(&DVector::from_vec(vec![0.5, 0.0]));
        assert!((h.h1 - 1.0).abs() < 1e-15);
        assert!((h.h2 - 0.306853).abs() < 1e-6, "{}", h.h2);
        assert!((h.xi[0] - 1.0).abs() < 1e-15);
        assert_eq!(h.xi[1], 0.0);
        assert!((h.h1 - h.h2 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decomposition_matches_closed_form_penalty() {
        let mut rng = crate::rng::InstanceRng::new(4);
        for reg in [
            Regularizer::l1_minus_l2(0.7).unwrap(),
            Regularizer::log_sum(0.3, 0.5).unwrap(),
            Regularizer::l1(0.2).unwrap(),
        ] {
            for _ in 0..50 {
                let x = DVector::from_fn(12, |_, _| {
                    let g = rng.gaussian();
                    if rng.uniform() < 0.3 { 0.0 } else { g }
                });
                let h = reg.h_oracle(&x);
                let closed = reg.penalty(&x);
                assert!(
                    (h.h1 - h.h2 - closed).abs() <= 1e-12 * closed.abs().max(1.0),
                    "{reg:?}: {} vs {closed}",
                    h.h1 - h.h2
                );
            }
        }
    }

    #[test]
    fn subgradient_inequality() {
        let mut rng = crate::rng::InstanceRng::new(6);
        for reg in [
            Regularizer::l1_minus_l2(1.3).unwrap(),
            Regularizer::log_sum(0.8, 0.5).unwrap(),
        ] {
            for trial in 0..100 {
                let x = DVector::from_fn(10, |_, _| {
                    if rng.uniform() < 0.2 { 0.0 } else { rng.gaussian() }
                });
                let x = if trial == 0 { DVector::zeros(10) } else { x };
                let y = DVector::from_fn(10, |_, _| rng.gaussian());
                let hx = reg.h_oracle(&x);
                let hy = reg.h_oracle(&y);
                assert!(hy.h2 >= hx.h2 + hx.xi.dot(&(&y - &x)) - 1e-10);
            }
        }
    }

    #[test]
    fn prox_l1_cases() {
        let v = DVector::from_vec(vec![2.5, -0.3, -4.0]);
        let out = prox_l1(&v, 1.0).unwrap();
        assert_eq!(out.as_slice(), &[1.5, 0.0, -3.0]);
        assert!(prox_l1(&v, -0.1).is_err());
    }

    #[test]
    fn prox_l1_matches_grid_search() {
        let mut rng = crate::rng::InstanceRng::new(8);
        let level = 0.7;
        let v = DVector::from_fn(6, |_, _| 2.0 * rng.gaussian());
        let out = prox_l1(&v, level).unwrap();
        for i in 0..6 {
            let (mut best_t, mut best) = (0.0, f64::INFINITY);
            let lo = v[i] - 3.0;
            let steps = (6.0 / 1e-5) as usize;
            for k in 0..=steps {
                let t = lo + k as f64 * 1e-5;
                let obj = level * t.abs() + 0.5 * (t - v[i]).powi(2);
                if obj < best {
                    best = obj;
                    best_t = t;
                }
            }
            // The objective is flat to O(h²) near the kink, so allow one grid step.
            assert!((out[i] - best_t).abs() <= 1e-5 + 1e-12, "{} vs {best_t}", out[i]);
        }
    }

    #[test]
    fn soft_threshold_optimality() {
        let mut rng = crate::rng::InstanceRng::new(10);
        for _ in 0..200 {
            let s = rng.uniform() * 2.0;
            let v = DVector::from_fn(8, |_, _| 2.0 * rng.gaussian());
            let t = prox_l1(&v, s).unwrap();
            for i in 0..8 {
                if t[i] == 0.0 {
                    assert!((t[i] - v[i]).abs() <= s);
                } else {
                    assert!((t[i] - v[i] + s * t[i].signum()).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn f_value_cases() {
        let smooth = LeastSquaresSmooth::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        for reg in [
            Regularizer::l1_minus_l2(1.0).unwrap(),
            Regularizer::log_sum(1.0, 0.5).unwrap(),
        ] {
            let p = DcProblem::new(smooth.clone(), reg);
            assert_eq!(p.f_value(&DVector::zeros(2)).unwrap(), 0.0);
        }
        let p = DcProblem::new(smooth, Regularizer::l1_minus_l2(1.0).unwrap());
        assert_eq!(p.f_value(&DVector::from_vec(vec![3.0, 4.0])).unwrap(), 14.5);
    }

    #[test]
    fn f_value_is_compositional() {
        let a = small_random(6, 9, 12);
        let b = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        let p = DcProblem::new(
            LeastSquaresSmooth::new(a, b).unwrap(),
            Regularizer::log_sum(0.05, 0.5).unwrap(),
        );
        let x = DVector::from_fn(9, |i, _| (i as f64).cos());
        let (g, _) = p.smooth_oracle(&x).unwrap();
        let h = p.h_oracle(&x);
        assert!((p.f_value(&x).unwrap() - (g + h.h1 - h.h2)).abs() <= 1e-12);
    }
}
