//! Scalar functions on a tangent-bundle chart with exact derivative jets.
//!
//! A Lagrangian is written as a closure over [`Jet`] arithmetic. Each `Jet`
//! propagates the value, the gradient with respect to all chart coordinates
//! `x^j` and fibre coordinates `u^j`, and the second-derivative rows
//! `d²f/du_i dz_j` (z ranging over x then u). Those are exactly the blocks
//! the quasi-velocity dynamics assembly consumes; the (x,x) block is never
//! formed.
//!
//! Non-finite intermediates poison the evaluation and surface as
//! [`Error::NonFinite`] instead of propagating NaN into the integrators.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Chart-level value types
// ---------------------------------------------------------------------------

/// A point of the configuration chart: coordinates `x^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint(DVector<f64>);

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords))
    }

    pub fn from_vector(coords: DVector<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "chart point",
            });
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Fibre coordinates `u^j` paired with the coordinate basis `d/dx^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalVelocity(DVector<f64>);

impl NaturalVelocity {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(components))
    }

    pub fn from_vector(components: DVector<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "natural velocity",
            });
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &DVector<f64> {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// The propagating jet scalar
// ---------------------------------------------------------------------------

/// A second-order forward jet over the 2n variables (x^0..x^{n-1}, u^0..u^{n-1}).
///
/// `grad` has length 2n (x block then u block). `hess` stores n rows of
/// length 2n: row i holds d²f/du_i dz_j for all 2n variables z_j. Rules for
/// `+ x / powers sin cos exp ln sqrt` are exact to roundoff.
#[derive(Clone, Debug)]
pub struct Jet {
    nx: usize,
    val: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    ok: bool,
}

impl Jet {
    /// A constant: zero derivatives.
    pub fn constant(nx: usize, value: f64) -> Self {
        Self {
            nx,
            val: value,
            grad: vec![0.0; 2 * nx],
            hess: vec![0.0; nx * 2 * nx],
            ok: value.is_finite(),
        }
    }

    /// Seed for chart coordinate `x^index`.
    pub fn chart_var(nx: usize, index: usize, value: f64) -> Self {
        assert!(index < nx);
        let mut j = Self::constant(nx, value);
        j.grad[index] = 1.0;
        j
    }

    /// Seed for fibre coordinate `u^index`.
    pub fn fibre_var(nx: usize, index: usize, value: f64) -> Self {
        assert!(index < nx);
        let mut j = Self::constant(nx, value);
        j.grad[nx + index] = 1.0;
        j
    }

    /// A constant with the same dimension as `self`; convenient inside
    /// evaluator closures.
    pub fn c(&self, value: f64) -> Self {
        Self::constant(self.nx, value)
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    fn width(&self) -> usize {
        2 * self.nx
    }

    #[inline]
    fn gu(&self, i: usize) -> f64 {
        self.grad[self.nx + i]
    }

    fn poisoned(mut self) -> Self {
        self.ok = false;
        self
    }

    fn settle(mut self) -> Self {
        if !self.val.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            self.ok = false;
        }
        self
    }

    fn add_impl(a: &Jet, b: &Jet) -> Jet {
        debug_assert_eq!(a.nx, b.nx);
        let mut out = a.clone();
        out.val += b.val;
        for (o, g) in out.grad.iter_mut().zip(&b.grad) {
            *o += g;
        }
        for (o, h) in out.hess.iter_mut().zip(&b.hess) {
            *o += h;
        }
        out.ok = a.ok && b.ok && out.val.is_finite();
        out
    }

    fn sub_impl(a: &Jet, b: &Jet) -> Jet {
        debug_assert_eq!(a.nx, b.nx);
        let mut out = a.clone();
        out.val -= b.val;
        for (o, g) in out.grad.iter_mut().zip(&b.grad) {
            *o -= g;
        }
        for (o, h) in out.hess.iter_mut().zip(&b.hess) {
            *o -= h;
        }
        out.ok = a.ok && b.ok && out.val.is_finite();
        out
    }

    fn mul_impl(a: &Jet, b: &Jet) -> Jet {
        debug_assert_eq!(a.nx, b.nx);
        let nx = a.nx;
        let w = a.width();
        let mut out = Jet::constant(nx, a.val * b.val);
        for j in 0..w {
            out.grad[j] = a.val * b.grad[j] + b.val * a.grad[j];
        }
        for i in 0..nx {
            let (agu, bgu) = (a.gu(i), b.gu(i));
            let row = i * w;
            for j in 0..w {
                out.hess[row + j] = a.val * b.hess[row + j]
                    + b.val * a.hess[row + j]
                    + agu * b.grad[j]
                    + bgu * a.grad[j];
            }
        }
        out.ok = a.ok && b.ok;
        out.settle()
    }

    fn div_impl(a: &Jet, b: &Jet) -> Jet {
        debug_assert_eq!(a.nx, b.nx);
        if b.val == 0.0 {
            return Jet::constant(a.nx, f64::NAN).poisoned();
        }
        let nx = a.nx;
        let w = a.width();
        let inv = 1.0 / b.val;
        let fa = inv;
        let fb = -a.val * inv * inv;
        let fab = -inv * inv;
        let fbb = 2.0 * a.val * inv * inv * inv;
        let mut out = Jet::constant(nx, a.val * inv);
        for j in 0..w {
            out.grad[j] = fa * a.grad[j] + fb * b.grad[j];
        }
        for i in 0..nx {
            let (agu, bgu) = (a.gu(i), b.gu(i));
            let row = i * w;
            for j in 0..w {
                out.hess[row + j] = fa * a.hess[row + j]
                    + fb * b.hess[row + j]
                    + fab * (agu * b.grad[j] + bgu * a.grad[j])
                    + fbb * bgu * b.grad[j];
            }
        }
        out.ok = a.ok && b.ok;
        out.settle()
    }

    /// Chain rule for a smooth primitive with value `f`, derivative `df`,
    /// second derivative `ddf` at `self.val`.
    fn unary(&self, f: f64, df: f64, ddf: f64) -> Jet {
        let nx = self.nx;
        let w = self.width();
        let mut out = Jet::constant(nx, f);
        for j in 0..w {
            out.grad[j] = df * self.grad[j];
        }
        for i in 0..nx {
            let gu = self.gu(i);
            let row = i * w;
            for j in 0..w {
                out.hess[row + j] = df * self.hess[row + j] + ddf * gu * self.grad[j];
            }
        }
        out.ok = self.ok;
        out.settle()
    }

    pub fn sin(&self) -> Jet {
        self.unary(self.val.sin(), self.val.cos(), -self.val.sin())
    }

    pub fn cos(&self) -> Jet {
        self.unary(self.val.cos(), -self.val.sin(), -self.val.cos())
    }

    pub fn exp(&self) -> Jet {
        let e = self.val.exp();
        self.unary(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        if self.val <= 0.0 {
            return Jet::constant(self.nx, f64::NAN).poisoned();
        }
        let inv = 1.0 / self.val;
        self.unary(self.val.ln(), inv, -inv * inv)
    }

    pub fn sqrt(&self) -> Jet {
        if self.val < 0.0 {
            return Jet::constant(self.nx, f64::NAN).poisoned();
        }
        let s = self.val.sqrt();
        // derivative has a pole at 0; the settle() scan poisons it there
        self.unary(s, 0.5 / s, -0.25 / (s * self.val))
    }

    pub fn recip(&self) -> Jet {
        if self.val == 0.0 {
            return Jet::constant(self.nx, f64::NAN).poisoned();
        }
        let inv = 1.0 / self.val;
        self.unary(inv, -inv * inv, 2.0 * inv * inv * inv)
    }

    pub fn powi(&self, n: i32) -> Jet {
        match n {
            0 => self.c(1.0),
            1 => self.clone(),
            _ => {
                let v = self.val;
                self.unary(
                    v.powi(n),
                    f64::from(n) * v.powi(n - 1),
                    f64::from(n) * f64::from(n - 1) * v.powi(n - 2),
                )
            }
        }
    }

    pub fn powf(&self, p: f64) -> Jet {
        if self.val <= 0.0 {
            return Jet::constant(self.nx, f64::NAN).poisoned();
        }
        let v = self.val;
        self.unary(v.powf(p), p * v.powf(p - 1.0), p * (p - 1.0) * v.powf(p - 2.0))
    }

    pub fn sq(&self) -> Jet {
        Jet::mul_impl(self, self)
    }

    fn all_finite(&self) -> bool {
        self.ok
            && self.val.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().all(|h| h.is_finite())
    }
}

macro_rules! impl_jet_binop {
    ($trait:ident, $method:ident, $func:ident) => {
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                Jet::$func(&self, &rhs)
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                Jet::$func(&self, rhs)
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                Jet::$func(self, &rhs)
            }
        }
        impl $trait<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                Jet::$func(self, rhs)
            }
        }
    };
}

impl_jet_binop!(Add, add, add_impl);
impl_jet_binop!(Sub, sub, sub_impl);
impl_jet_binop!(Mul, mul, mul_impl);
impl_jet_binop!(Div, div, div_impl);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -&self
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        let mut out = self.clone();
        out.val = -out.val;
        for g in &mut out.grad {
            *g = -*g;
        }
        for h in &mut out.hess {
            *h = -*h;
        }
        out
    }
}

macro_rules! impl_jet_scalar_ops {
    ($jet:ty) => {
        impl Add<f64> for $jet {
            type Output = Jet;
            fn add(self, rhs: f64) -> Jet {
                let mut out = self.clone();
                out.val += rhs;
                out.ok = out.ok && out.val.is_finite();
                out
            }
        }
        impl Sub<f64> for $jet {
            type Output = Jet;
            fn sub(self, rhs: f64) -> Jet {
                let mut out = self.clone();
                out.val -= rhs;
                out.ok = out.ok && out.val.is_finite();
                out
            }
        }
        impl Mul<f64> for $jet {
            type Output = Jet;
            fn mul(self, rhs: f64) -> Jet {
                let mut out = self.clone();
                out.val *= rhs;
                for g in &mut out.grad {
                    *g *= rhs;
                }
                for h in &mut out.hess {
                    *h *= rhs;
                }
                out.settle()
            }
        }
        impl Div<f64> for $jet {
            type Output = Jet;
            #[allow(clippy::suspicious_arithmetic_impl)]
            fn div(self, rhs: f64) -> Jet {
                self * (1.0 / rhs)
            }
        }
        impl Add<$jet> for f64 {
            type Output = Jet;
            fn add(self, rhs: $jet) -> Jet {
                rhs + self
            }
        }
        impl Sub<$jet> for f64 {
            type Output = Jet;
            fn sub(self, rhs: $jet) -> Jet {
                -rhs + self
            }
        }
        impl Mul<$jet> for f64 {
            type Output = Jet;
            fn mul(self, rhs: $jet) -> Jet {
                rhs * self
            }
        }
        impl Div<$jet> for f64 {
            type Output = Jet;
            #[allow(clippy::suspicious_arithmetic_impl)]
            fn div(self, rhs: $jet) -> Jet {
                rhs.recip() * self
            }
        }
    };
}

impl_jet_scalar_ops!(Jet);
impl_jet_scalar_ops!(&Jet);

// ---------------------------------------------------------------------------
// Evaluation records
// ---------------------------------------------------------------------------

/// Value and derivative blocks of a scalar on TQ at one state.
///
/// `d_uu[(i,j)] = d²f/du_i du_j` and `d_ux[(i,j)] = d²f/du_i dx_j`.
#[derive(Clone, Debug)]
pub struct Jet2 {
    pub value: f64,
    pub d_x: DVector<f64>,
    pub d_u: DVector<f64>,
    pub d_uu: DMatrix<f64>,
    pub d_ux: DMatrix<f64>,
}

impl Jet2 {
    /// Validates finiteness and the symmetry of the (u,u) block
    /// (relative tolerance 1e-12).
    pub fn new(
        value: f64,
        d_x: DVector<f64>,
        d_u: DVector<f64>,
        d_uu: DMatrix<f64>,
        d_ux: DMatrix<f64>,
    ) -> Result<Self> {
        let finite = value.is_finite()
            && d_x.iter().all(|v| v.is_finite())
            && d_u.iter().all(|v| v.is_finite())
            && d_uu.iter().all(|v| v.is_finite())
            && d_ux.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: "jet evaluation",
            });
        }
        let n = d_uu.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (d_uu[(i, j)], d_uu[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NonFinite {
                        context: "asymmetric velocity Hessian",
                    });
                }
            }
        }
        Ok(Self {
            value,
            d_x,
            d_u,
            d_uu,
            d_ux,
        })
    }
}

/// A scalar function on a tangent-bundle chart, evaluable with jets.
///
/// The evaluator must be pure: repeated evaluation at identical inputs is
/// bit-identical, and no interior mutability is permitted.
/// Evaluator signature of a scalar on TQ: chart jets and fibre jets in,
/// one jet out.
pub type ScalarEval = Arc<dyn Fn(&[Jet], &[Jet]) -> Jet + Send + Sync>;

#[derive(Clone)]
pub struct ScalarOnTq {
    dim: usize,
    eval: ScalarEval,
}

impl fmt::Debug for ScalarOnTq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarOnTq").field("dim", &self.dim).finish()
    }
}

impl ScalarOnTq {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&[Jet], &[Jet]) -> Jet + Send + Sync + 'static,
    {
        assert!(dim > 0, "chart dimension must be positive");
        Self {
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Plain value at a state.
    pub fn value(&self, x: &ChartPoint, u: &NaturalVelocity) -> Result<f64> {
        Ok(eval_jet(self, x, u)?.value)
    }
}

fn check_dims(f: &ScalarOnTq, x: &ChartPoint, u: &NaturalVelocity) -> Result<()> {
    if x.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: x.dim(),
        });
    }
    if u.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: u.dim(),
        });
    }
    Ok(())
}

/// Evaluate `f` with exact first derivatives and the (u,u), (u,x)
/// second-derivative blocks.
pub fn eval_jet(f: &ScalarOnTq, x: &ChartPoint, u: &NaturalVelocity) -> Result<Jet2> {
    check_dims(f, x, u)?;
    let n = f.dim();
    let xs: Vec<Jet> = (0..n).map(|j| Jet::chart_var(n, j, x.coords()[j])).collect();
    let us: Vec<Jet> = (0..n)
        .map(|j| Jet::fibre_var(n, j, u.components()[j]))
        .collect();
    let out = (f.eval)(&xs, &us);
    if !out.all_finite() {
        return Err(Error::NonFinite {
            context: "scalar evaluation",
        });
    }
    let w = 2 * n;
    let d_x = DVector::from_fn(n, |j, _| out.grad[j]);
    let d_u = DVector::from_fn(n, |j, _| out.grad[n + j]);
    let d_uu = DMatrix::from_fn(n, n, |i, j| out.hess[i * w + n + j]);
    let d_ux = DMatrix::from_fn(n, n, |i, j| out.hess[i * w + j]);
    Jet2::new(out.val, d_x, d_u, d_uu, d_ux)
}

/// Maximum absolute discrepancy between the jet derivatives of `f` and
/// central finite differences with step `h`.
///
/// First-derivative blocks are differenced from plain values; the second
/// derivative blocks are differenced from the jet gradients (pure
/// value-based second differences lose too much precision at small h to be
/// a useful oracle).
pub fn fd_check(f: &ScalarOnTq, x: &ChartPoint, u: &NaturalVelocity, h: f64) -> Result<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    check_dims(f, x, u)?;
    let n = f.dim();
    let center = eval_jet(f, x, u)?;
    let mut worst: f64 = 0.0;

    let shift = |v: &DVector<f64>, j: usize, delta: f64| {
        let mut out = v.clone();
        out[j] += delta;
        out
    };

    for j in 0..n {
        let xp = ChartPoint::from_vector(shift(x.coords(), j, h))?;
        let xm = ChartPoint::from_vector(shift(x.coords(), j, -h))?;
        let plus = eval_jet(f, &xp, u)?;
        let minus = eval_jet(f, &xm, u)?;
        worst = worst.max(((plus.value - minus.value) / (2.0 * h) - center.d_x[j]).abs());
        for i in 0..n {
            let fd = (plus.d_u[i] - minus.d_u[i]) / (2.0 * h);
            worst = worst.max((fd - center.d_ux[(i, j)]).abs());
        }
    }
    for j in 0..n {
        let up = NaturalVelocity::from_vector(shift(u.components(), j, h))?;
        let um = NaturalVelocity::from_vector(shift(u.components(), j, -h))?;
        let plus = eval_jet(f, x, &up)?;
        let minus = eval_jet(f, x, &um)?;
        worst = worst.max(((plus.value - minus.value) / (2.0 * h) - center.d_u[j]).abs());
        for i in 0..n {
            let fd = (plus.d_u[i] - minus.d_u[i]) / (2.0 * h);
            worst = worst.max((fd - center.d_uu[(i, j)]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kinetic3() -> ScalarOnTq {
        ScalarOnTq::new(3, |_, u| {
            0.5 * (u[0].sq() + u[1].sq() + u[2].sq())
        })
    }

    #[test]
    fn quadratic_form_identity_hessian() {
        let f = kinetic3();
        let x = ChartPoint::new(vec![0.3, -1.0, 2.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0, 0.0, 2.0]).unwrap();
        let j = eval_jet(&f, &x, &u).unwrap();
        assert_abs_diff_eq!(j.value, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(j.d_u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j.d_u[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j.d_u[2], 2.0, epsilon = 1e-15);
        assert!(j.d_x.amax() == 0.0);
        for i in 0..3 {
            for k in 0..3 {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(j.d_uu[(i, k)], expect, epsilon = 1e-15);
                assert_abs_diff_eq!(j.d_ux[(i, k)], 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn constrained_lagrangian_x_part() {
        // f = 1/2 (1 + x^2) u^2 on a 1-chart
        let f = ScalarOnTq::new(1, |x, u| 0.5 * ((1.0 + x[0].sq()) * u[0].sq()));
        let x = ChartPoint::new(vec![1.0]).unwrap();
        let u = NaturalVelocity::new(vec![3.0]).unwrap();
        let j = eval_jet(&f, &x, &u).unwrap();
        assert_abs_diff_eq!(j.value, 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(j.d_u[0], 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(j.d_x[0], 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(j.d_uu[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(j.d_ux[(0, 0)], 6.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let f = ScalarOnTq::new(2, |x, _| x[0].c(7.0));
        let x = ChartPoint::new(vec![0.5, -0.5]).unwrap();
        let u = NaturalVelocity::new(vec![1.5, 2.5]).unwrap();
        let j = eval_jet(&f, &x, &u).unwrap();
        assert_eq!(j.value, 7.0);
        assert_eq!(j.d_x.amax(), 0.0);
        assert_eq!(j.d_u.amax(), 0.0);
        assert_eq!(j.d_uu.amax(), 0.0);
        assert_eq!(j.d_ux.amax(), 0.0);
        assert_eq!(fd_check(&f, &x, &u, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn fd_check_quadratic_tight() {
        let f = kinetic3();
        let x = ChartPoint::new(vec![0.1, 0.2, 0.3]).unwrap();
        let u = NaturalVelocity::new(vec![-0.4, 1.1, 0.7]).unwrap();
        assert!(fd_check(&f, &x, &u, 1e-5).unwrap() <= 1e-9);
    }

    #[test]
    fn fd_check_trig_mixed() {
        // f = sin(x1) u1
        let f = ScalarOnTq::new(2, |x, u| x[0].sin() * &u[0]);
        let x = ChartPoint::new(vec![0.8, -0.3]).unwrap();
        let u = NaturalVelocity::new(vec![1.2, 0.4]).unwrap();
        assert!(fd_check(&f, &x, &u, 1e-5).unwrap() <= 1e-8);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let f = ScalarOnTq::new(1, |x, u| &u[0] / &x[0]);
        let x = ChartPoint::new(vec![0.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0]).unwrap();
        assert!(matches!(
            eval_jet(&f, &x, &u),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn masked_pole_is_still_an_error() {
        // exp(-1/x^2) has finite value at small x but the pole poisons the
        // evaluation before exp can mask it at x = 0.
        let f = ScalarOnTq::new(1, |x, _| (-1.0 / x[0].sq()).exp());
        let x = ChartPoint::new(vec![0.0]).unwrap();
        let u = NaturalVelocity::new(vec![0.0]).unwrap();
        assert!(eval_jet(&f, &x, &u).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let f = kinetic3();
        let x = ChartPoint::new(vec![0.0, 0.0]).unwrap();
        let u = NaturalVelocity::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            eval_jet(&f, &x, &u),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transcendental_second_derivatives() {
        // f = exp(x) sin(u) + ln(2 + x) sqrt(1 + u^2)
        let f = ScalarOnTq::new(1, |x, u| {
            x[0].exp() * u[0].sin() + (2.0 + &x[0]).ln() * (1.0 + u[0].sq()).sqrt()
        });
        let x = ChartPoint::new(vec![0.4]).unwrap();
        let u = NaturalVelocity::new(vec![-0.9]).unwrap();
        assert!(fd_check(&f, &x, &u, 1e-5).unwrap() <= 1e-8);
    }

    #[test]
    fn velocity_hessian_exactly_symmetric() {
        let f = ScalarOnTq::new(3, |x, u| {
            (&u[0] * &u[1]) * x[2].cos() + u[2].sq() * &u[0] + (&x[0] * &u[1]).exp()
        });
        let x = ChartPoint::new(vec![0.3, 0.1, -0.7]).unwrap();
        let u = NaturalVelocity::new(vec![0.9, -0.2, 0.5]).unwrap();
        let j = eval_jet(&f, &x, &u).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(j.d_uu[(i, k)], j.d_uu[(k, i)]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn linearity_of_eval(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            xs in proptest::collection::vec(-2.0f64..2.0, 2),
            us in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let f = ScalarOnTq::new(2, |x, u| x[0].sin() * &u[0] + u[1].sq() * &x[1]);
            let g = ScalarOnTq::new(2, |x, u| x[1].cos() * u[0].sq() + &u[1] * &x[0]);
            let combo = {
                let (fa, fb) = (a, b);
                ScalarOnTq::new(2, move |x, u| {
                    (x[0].sin() * &u[0] + u[1].sq() * &x[1]) * fa
                        + (x[1].cos() * u[0].sq() + &u[1] * &x[0]) * fb
                })
            };
            let x = ChartPoint::new(xs).unwrap();
            let u = NaturalVelocity::new(us).unwrap();
            let jf = eval_jet(&f, &x, &u).unwrap();
            let jg = eval_jet(&g, &x, &u).unwrap();
            let jc = eval_jet(&combo, &x, &u).unwrap();
            let tol = |v: f64| 1e-12 * v.abs().max(1.0);
            proptest::prop_assert!((jc.value - (a * jf.value + b * jg.value)).abs() <= tol(jc.value));
            for j in 0..2 {
                proptest::prop_assert!((jc.d_x[j] - (a * jf.d_x[j] + b * jg.d_x[j])).abs() <= tol(jc.d_x[j]));
                proptest::prop_assert!((jc.d_u[j] - (a * jf.d_u[j] + b * jg.d_u[j])).abs() <= tol(jc.d_u[j]));
                for i in 0..2 {
                    proptest::prop_assert!(
                        (jc.d_uu[(i, j)] - (a * jf.d_uu[(i, j)] + b * jg.d_uu[(i, j)])).abs()
                            <= tol(jc.d_uu[(i, j)])
                    );
                    proptest::prop_assert!(
                        (jc.d_ux[(i, j)] - (a * jf.d_ux[(i, j)] + b * jg.d_ux[(i, j)])).abs()
                            <= tol(jc.d_ux[(i, j)])
                    );
                }
            }
        }
    }
}
