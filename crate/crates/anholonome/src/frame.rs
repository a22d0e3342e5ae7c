//! Vector fields, anholonomic frames, and quasi-velocity transforms.
//!
//! Frame coefficient functions are written as closures over first-order
//! [`Dual`] numbers, so component values and Jacobians come from the same
//! evaluation and structure functions are exact to roundoff (never finite
//! differences).

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::{eval_jet, ChartPoint, NaturalVelocity, ScalarOnTq};
use crate::linalg;
use crate::tensor::Tensor3;

/// Library-wide default for the frame invertibility check `|det| > tol`.
pub const FRAME_DET_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// First-order duals for frame coefficients
// ---------------------------------------------------------------------------

/// A first-order forward dual over the chart coordinates.
#[derive(Clone, Debug)]
pub struct Dual {
    val: f64,
    grad: Vec<f64>,
    ok: bool,
}

impl Dual {
    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            val: value,
            grad: vec![0.0; dim],
            ok: value.is_finite(),
        }
    }

    pub fn variable(dim: usize, index: usize, value: f64) -> Self {
        assert!(index < dim);
        let mut d = Self::constant(dim, value);
        d.grad[index] = 1.0;
        d
    }

    /// A constant with the same dimension as `self`.
    pub fn c(&self, value: f64) -> Self {
        Self::constant(self.grad.len(), value)
    }

    pub fn value(&self) -> f64 {
        self.val
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

    fn add_impl(a: &Dual, b: &Dual) -> Dual {
        let mut out = a.clone();
        out.val += b.val;
        for (o, g) in out.grad.iter_mut().zip(&b.grad) {
            *o += g;
        }
        out.ok = a.ok && b.ok && out.val.is_finite();
        out
    }

    fn sub_impl(a: &Dual, b: &Dual) -> Dual {
        let mut out = a.clone();
        out.val -= b.val;
        for (o, g) in out.grad.iter_mut().zip(&b.grad) {
            *o -= g;
        }
        out.ok = a.ok && b.ok && out.val.is_finite();
        out
    }

    fn mul_impl(a: &Dual, b: &Dual) -> Dual {
        let mut out = Dual::constant(a.grad.len(), a.val * b.val);
        for (j, o) in out.grad.iter_mut().enumerate() {
            *o = a.val * b.grad[j] + b.val * a.grad[j];
        }
        out.ok = a.ok && b.ok;
        out.settle()
    }

    fn div_impl(a: &Dual, b: &Dual) -> Dual {
        if b.val == 0.0 {
            return Dual::constant(a.grad.len(), f64::NAN).poisoned();
        }
        let inv = 1.0 / b.val;
        let mut out = Dual::constant(a.grad.len(), a.val * inv);
        for (j, o) in out.grad.iter_mut().enumerate() {
            *o = (a.grad[j] - out.val * b.grad[j]) * inv;
        }
        out.ok = a.ok && b.ok;
        out.settle()
    }

    fn unary(&self, f: f64, df: f64) -> Dual {
        let mut out = Dual::constant(self.grad.len(), f);
        for (j, o) in out.grad.iter_mut().enumerate() {
            *o = df * self.grad[j];
        }
        out.ok = self.ok;
        out.settle()
    }

    pub fn sin(&self) -> Dual {
        self.unary(self.val.sin(), self.val.cos())
    }

    pub fn cos(&self) -> Dual {
        self.unary(self.val.cos(), -self.val.sin())
    }

    pub fn exp(&self) -> Dual {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(&self) -> Dual {
        if self.val <= 0.0 {
            return self.clone().poisoned();
        }
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn sqrt(&self) -> Dual {
        if self.val < 0.0 {
            return self.clone().poisoned();
        }
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn powi(&self, n: i32) -> Dual {
        match n {
            0 => self.c(1.0),
            1 => self.clone(),
            _ => self.unary(self.val.powi(n), f64::from(n) * self.val.powi(n - 1)),
        }
    }

    pub fn sq(&self) -> Dual {
        Dual::mul_impl(self, self)
    }
}

macro_rules! impl_dual_binop {
    ($trait:ident, $method:ident, $func:ident) => {
        impl $trait<Dual> for Dual {
            type Output = Dual;
            fn $method(self, rhs: Dual) -> Dual {
                Dual::$func(&self, &rhs)
            }
        }
        impl $trait<&Dual> for Dual {
            type Output = Dual;
            fn $method(self, rhs: &Dual) -> Dual {
                Dual::$func(&self, rhs)
            }
        }
        impl $trait<Dual> for &Dual {
            type Output = Dual;
            fn $method(self, rhs: Dual) -> Dual {
                Dual::$func(self, &rhs)
            }
        }
        impl $trait<&Dual> for &Dual {
            type Output = Dual;
            fn $method(self, rhs: &Dual) -> Dual {
                Dual::$func(self, rhs)
            }
        }
    };
}

impl_dual_binop!(Add, add, add_impl);
impl_dual_binop!(Sub, sub, sub_impl);
impl_dual_binop!(Mul, mul, mul_impl);
impl_dual_binop!(Div, div, div_impl);

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        -&self
    }
}

impl Neg for &Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let mut out = self.clone();
        out.val = -out.val;
        for g in &mut out.grad {
            *g = -*g;
        }
        out
    }
}

macro_rules! impl_dual_scalar_ops {
    ($dual:ty) => {
        impl Add<f64> for $dual {
            type Output = Dual;
            fn add(self, rhs: f64) -> Dual {
                let mut out = self.clone();
                out.val += rhs;
                out.ok = out.ok && out.val.is_finite();
                out
            }
        }
        impl Sub<f64> for $dual {
            type Output = Dual;
            fn sub(self, rhs: f64) -> Dual {
                self + (-rhs)
            }
        }
        impl Mul<f64> for $dual {
            type Output = Dual;
            fn mul(self, rhs: f64) -> Dual {
                let mut out = self.clone();
                out.val *= rhs;
                for g in &mut out.grad {
                    *g *= rhs;
                }
                out.settle()
            }
        }
        impl Div<f64> for $dual {
            type Output = Dual;
            #[allow(clippy::suspicious_arithmetic_impl)]
            fn div(self, rhs: f64) -> Dual {
                self * (1.0 / rhs)
            }
        }
        impl Add<$dual> for f64 {
            type Output = Dual;
            fn add(self, rhs: $dual) -> Dual {
                rhs + self
            }
        }
        impl Sub<$dual> for f64 {
            type Output = Dual;
            fn sub(self, rhs: $dual) -> Dual {
                -rhs + self
            }
        }
        impl Mul<$dual> for f64 {
            type Output = Dual;
            fn mul(self, rhs: $dual) -> Dual {
                rhs * self
            }
        }
    };
}

impl_dual_scalar_ops!(Dual);
impl_dual_scalar_ops!(&Dual);

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// The value and Jacobian of a vector field at a chart point.
/// `jacobian[(l, k)] = dX^l/dx^k`.
#[derive(Clone, Debug)]
pub struct FieldJet {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// A vector field `X = X^j(x) d/dx^j` on a chart, with closed-form
/// coefficient functions.
/// Evaluator signature of vector-field coefficients: chart duals in,
/// component duals out.
pub type FieldEval = Arc<dyn Fn(&[Dual]) -> Vec<Dual> + Send + Sync>;

#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    comps: FieldEval,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).finish()
    }
}

impl VectorField {
    pub fn new<F>(dim: usize, comps: F) -> Self
    where
        F: Fn(&[Dual]) -> Vec<Dual> + Send + Sync + 'static,
    {
        Self {
            dim,
            comps: Arc::new(comps),
        }
    }

    /// The coordinate field `d/dx^axis`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        assert!(axis < dim);
        Self::new(dim, move |x| {
            (0..x.len())
                .map(|j| x[0].c(if j == axis { 1.0 } else { 0.0 }))
                .collect()
        })
    }

    /// A constant-coefficient field.
    pub fn constant(components: Vec<f64>) -> Self {
        let dim = components.len();
        Self::new(dim, move |x| {
            components.iter().map(|&c| x[0].c(c)).collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Components and Jacobian in one pass.
    pub fn eval(&self, x: &ChartPoint) -> Result<FieldJet> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.dim(),
            });
        }
        let n = self.dim;
        let seeds: Vec<Dual> = (0..n)
            .map(|j| Dual::variable(n, j, x.coords()[j]))
            .collect();
        let out = (self.comps)(&seeds);
        if out.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: out.len(),
            });
        }
        if out.iter().any(|d| !d.ok || !d.val.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector field evaluation",
            });
        }
        let value = DVector::from_fn(n, |l, _| out[l].val);
        let jacobian = DMatrix::from_fn(n, n, |l, k| out[l].grad[k]);
        if jacobian.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector field Jacobian",
            });
        }
        Ok(FieldJet { value, jacobian })
    }

    pub fn components(&self, x: &ChartPoint) -> Result<DVector<f64>> {
        Ok(self.eval(x)?.value)
    }

    pub fn jacobian(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        Ok(self.eval(x)?.jacobian)
    }
}

/// Components of the Lie bracket `[X, Y]` at a point:
/// `X^j dY^k/dx^j - Y^j dX^k/dx^j`.
pub fn bracket(xf: &VectorField, yf: &VectorField, x: &ChartPoint) -> Result<DVector<f64>> {
    if xf.dim() != yf.dim() {
        return Err(Error::DimensionMismatch {
            expected: xf.dim(),
            actual: yf.dim(),
        });
    }
    let a = xf.eval(x)?;
    let b = yf.eval(x)?;
    Ok(&b.jacobian * &a.value - &a.jacobian * &b.value)
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// Quasi-velocity components `v^i` with respect to a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiVelocity(DVector<f64>);

impl QuasiVelocity {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(components))
    }

    pub fn from_vector(components: DVector<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "quasi-velocity",
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

/// A frame: n pointwise-independent vector fields on a chart region.
#[derive(Clone, Debug)]
pub struct Frame {
    fields: Vec<VectorField>,
    domain: String,
    det_tol: f64,
}

impl Frame {
    pub fn new(fields: Vec<VectorField>, domain: impl Into<String>) -> Result<Self> {
        let n = fields.len();
        if n == 0 {
            return Err(Error::InvalidConfig("frame must have at least one field".into()));
        }
        if fields.iter().any(|f| f.dim() != n) {
            return Err(Error::InvalidConfig(
                "frame fields must match the chart dimension".into(),
            ));
        }
        Ok(Self {
            fields,
            domain: domain.into(),
            det_tol: FRAME_DET_TOL,
        })
    }

    /// Override the invertibility tolerance for this frame.
    pub fn with_det_tol(mut self, det_tol: f64) -> Self {
        self.det_tol = det_tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &VectorField {
        &self.fields[i]
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// Value and Jacobian of every frame field at `x`.
    pub fn eval_all(&self, x: &ChartPoint) -> Result<Vec<FieldJet>> {
        self.fields.iter().map(|f| f.eval(x)).collect()
    }

    /// The frame matrix with column i holding the components of X_i.
    pub fn matrix(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let jets = self.eval_all(x)?;
        Ok(DMatrix::from_fn(n, n, |j, i| jets[i].value[j]))
    }

    fn checked_matrix(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        let m = self.matrix(x)?;
        let det = linalg::det(&m);
        if det.abs() <= self.det_tol {
            return Err(Error::FrameDegenerate {
                det: det.abs(),
                tol: self.det_tol,
            });
        }
        Ok(m)
    }

    /// Quasi-velocities solving `u^j = v^i X_i^j(x)`.
    pub fn quasi_from_natural(&self, x: &ChartPoint, u: &NaturalVelocity) -> Result<QuasiVelocity> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: u.dim(),
            });
        }
        let m = self.checked_matrix(x)?;
        let v = linalg::solve(&m, u.components(), "quasi-velocity transform")?;
        QuasiVelocity::from_vector(v)
    }

    /// Natural velocity `u^j = v^i X_i^j(x)`.
    pub fn natural_from_quasi(&self, x: &ChartPoint, v: &QuasiVelocity) -> Result<NaturalVelocity> {
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.dim(),
            });
        }
        let m = self.matrix(x)?;
        NaturalVelocity::from_vector(&m * v.components())
    }

    /// The object of anholonomity: `R^k_{ij}(x)` solving
    /// `[X_i, X_j] = R^k_{ij} X_k`, antisymmetric in (i, j) exactly.
    ///
    /// Indexing: `result.get(i, j, k) = R^k_{ij}`.
    pub fn structure_functions(&self, x: &ChartPoint) -> Result<Tensor3> {
        let n = self.dim();
        let jets = self.eval_all(x)?;
        let m = self.checked_matrix(x)?;
        let mut out = Tensor3::zeros(n, n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let br = &jets[j].jacobian * &jets[i].value - &jets[i].jacobian * &jets[j].value;
                let r = linalg::solve(&m, &br, "structure functions")?;
                for k in 0..n {
                    out.set(i, j, k, r[k]);
                    out.set(j, i, k, -r[k]);
                }
            }
        }
        Ok(out)
    }
}

/// A frame whose first `m` fields form a local basis of the constraint
/// distribution D.
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub frame: Frame,
    pub m: usize,
}

impl AdaptedFrame {
    pub fn new(frame: Frame, m: usize) -> Result<Self> {
        if m == 0 || m > frame.dim() {
            return Err(Error::InvalidConfig(format!(
                "constraint rank m = {m} must satisfy 1 <= m <= {}",
                frame.dim()
            )));
        }
        Ok(Self { frame, m })
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }
}

// ---------------------------------------------------------------------------
// Lifts
// ---------------------------------------------------------------------------

/// Which lift of a vector field acts on a function on TQ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftMode {
    /// Complete (tangent) lift: `X^j df/dx^j + u^k (dX^j/dx^k) df/du^j`.
    Complete,
    /// Vertical lift: `X^j df/du^j`.
    Vertical,
}

/// Apply the complete or vertical lift of `X` to a scalar on TQ at `(x, u)`.
pub fn lift_apply(
    xf: &VectorField,
    f: &ScalarOnTq,
    x: &ChartPoint,
    u: &NaturalVelocity,
    mode: LiftMode,
) -> Result<f64> {
    if xf.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: xf.dim(),
        });
    }
    let jet = eval_jet(f, x, u)?;
    let field = xf.eval(x)?;
    match mode {
        LiftMode::Vertical => Ok(field.value.dot(&jet.d_u)),
        LiftMode::Complete => {
            let transported = &field.jacobian * u.components();
            Ok(field.value.dot(&jet.d_x) + transported.dot(&jet.d_u))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::rng::SplitMix64;

    /// The frame {d/dx + x d/dz, d/dy, d/dz} on a 3-chart.
    pub(crate) fn shear_frame() -> Frame {
        let x1 = VectorField::new(3, |x| vec![x[0].c(1.0), x[0].c(0.0), x[0].clone()]);
        let x2 = VectorField::coordinate(3, 1);
        let x3 = VectorField::coordinate(3, 2);
        Frame::new(vec![x1, x2, x3], "all of R^3").unwrap()
    }

    fn coordinate_frame(n: usize) -> Frame {
        Frame::new((0..n).map(|j| VectorField::coordinate(n, j)).collect(), "R^n").unwrap()
    }

    #[test]
    fn bracket_of_shear_fields() {
        // X = d/dx, Y = x d/dy at (5, 0): [X, Y] = d/dy
        let xf = VectorField::coordinate(2, 0);
        let yf = VectorField::new(2, |x| vec![x[0].c(0.0), x[0].clone()]);
        let p = ChartPoint::new(vec![5.0, 0.0]).unwrap();
        let b = bracket(&xf, &yf, &p).unwrap();
        assert_abs_diff_eq!(b[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bracket_with_vertical_translation_vanishes() {
        let frame = shear_frame();
        let p = ChartPoint::new(vec![1.7, -0.3, 4.0]).unwrap();
        let b = bracket(frame.field(0), frame.field(2), &p).unwrap();
        assert!(b.amax() <= 1e-15);
    }

    #[test]
    fn bracket_antisymmetry_on_diagonal() {
        let xf = VectorField::new(2, |x| vec![x[1].sin(), x[0].sq()]);
        let p = ChartPoint::new(vec![0.4, 1.2]).unwrap();
        let b = bracket(&xf, &xf, &p).unwrap();
        assert_eq!(b.amax(), 0.0);
    }

    #[test]
    fn structure_functions_coordinate_frame() {
        let frame = coordinate_frame(3);
        let p = ChartPoint::new(vec![0.2, 0.4, -1.0]).unwrap();
        let r = frame.structure_functions(&p).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn structure_functions_scaled_field() {
        // {d/dx, x d/dy} on x > 0: [X1, X2] = d/dy = (1/x) X2
        let x1 = VectorField::coordinate(2, 0);
        let x2 = VectorField::new(2, |x| vec![x[0].c(0.0), x[0].clone()]);
        let frame = Frame::new(vec![x1, x2], "x > 0").unwrap();
        let p = ChartPoint::new(vec![2.0, 0.0]).unwrap();
        let r = frame.structure_functions(&p).unwrap();
        assert_abs_diff_eq!(r.get(0, 1, 1), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.get(1, 0, 1), -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.get(0, 1, 0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn structure_functions_shear_frame_vanish() {
        let frame = shear_frame();
        let p = ChartPoint::new(vec![1.3, 0.5, -2.0]).unwrap();
        let r = frame.structure_functions(&p).unwrap();
        assert!(r.max_abs() <= 1e-14);
    }

    #[test]
    fn quasi_from_natural_shear() {
        let frame = shear_frame();
        let p = ChartPoint::new(vec![1.0, 7.0, -3.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0, 2.0, 3.0]).unwrap();
        let v = frame.quasi_from_natural(&p, &u).unwrap();
        assert_abs_diff_eq!(v.components()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v.components()[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v.components()[2], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn quasi_is_identity_on_coordinate_frame() {
        let frame = coordinate_frame(3);
        let p = ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap();
        let u = NaturalVelocity::new(vec![0.3, -0.4, 0.9]).unwrap();
        let v = frame.quasi_from_natural(&p, &u).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(v.components()[j], u.components()[j], epsilon = 1e-15);
        }
        let zero = NaturalVelocity::new(vec![0.0; 3]).unwrap();
        let vz = frame.quasi_from_natural(&p, &zero).unwrap();
        assert_eq!(vz.components().amax(), 0.0);
    }

    #[test]
    fn natural_from_quasi_constrained_lift() {
        let frame = shear_frame();
        let p = ChartPoint::new(vec![1.0, 0.0, 0.0]).unwrap();
        let v = QuasiVelocity::new(vec![1.0, 2.0, 0.0]).unwrap();
        let u = frame.natural_from_quasi(&p, &v).unwrap();
        assert_abs_diff_eq!(u.components()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.components()[1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.components()[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_quasi_reproduces_frame_columns() {
        let frame = shear_frame();
        let p = ChartPoint::new(vec![-0.7, 0.2, 1.1]).unwrap();
        for i in 0..3 {
            let mut comps = vec![0.0; 3];
            comps[i] = 1.0;
            let v = QuasiVelocity::new(comps).unwrap();
            let u = frame.natural_from_quasi(&p, &v).unwrap();
            let col = frame.field(i).components(&p).unwrap();
            assert!((u.components() - col).amax() <= 1e-15);
        }
    }

    #[test]
    fn degenerate_frame_detected() {
        let x1 = VectorField::coordinate(2, 0);
        let x2 = VectorField::new(2, |x| vec![x[0].c(0.0), x[0].clone()]);
        let frame = Frame::new(vec![x1, x2], "x > 0").unwrap();
        let p = ChartPoint::new(vec![0.0, 0.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            frame.quasi_from_natural(&p, &u),
            Err(Error::FrameDegenerate { .. })
        ));
    }

    #[test]
    fn lift_apply_vertical_kinetic() {
        let xf = VectorField::new(3, |x| vec![x[0].c(1.0), x[0].c(0.0), x[0].clone()]);
        let f = ScalarOnTq::new(3, |_, u| 0.5 * (u[0].sq() + u[1].sq() + u[2].sq()));
        let p = ChartPoint::new(vec![1.0, 0.0, 0.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0, 0.0, 2.0]).unwrap();
        let v = lift_apply(&xf, &f, &p, &u, LiftMode::Vertical).unwrap();
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lift_apply_complete_distributes_through_jacobian() {
        let xf = VectorField::new(3, |x| vec![x[0].c(1.0), x[0].c(0.0), x[0].clone()]);
        let f = ScalarOnTq::new(3, |_, u| 0.5 * (u[0].sq() + u[1].sq() + u[2].sq()));
        let p = ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap();
        let u = NaturalVelocity::new(vec![1.0, 0.0, 1.0]).unwrap();
        let v = lift_apply(&xf, &f, &p, &u, LiftMode::Complete).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn vertical_lift_of_base_function_vanishes() {
        let xf = VectorField::new(2, |x| vec![x[1].cos(), x[0].exp()]);
        let f = ScalarOnTq::new(2, |x, _| x[0].sin() * &x[1]);
        let p = ChartPoint::new(vec![0.3, 0.9]).unwrap();
        let u = NaturalVelocity::new(vec![5.0, -2.0]).unwrap();
        let v = lift_apply(&xf, &f, &p, &u, LiftMode::Vertical).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn leibniz_rule_for_lifts() {
        let xf = VectorField::new(2, |x| vec![x[1].sin(), x[0].sq()]);
        let f = ScalarOnTq::new(2, |x, u| x[0].cos() * &u[0] + u[1].sq());
        let g = ScalarOnTq::new(2, |x, u| x[1].exp() + &u[0] * &u[1]);
        let fg = ScalarOnTq::new(2, |x, u| {
            (x[0].cos() * &u[0] + u[1].sq()) * (x[1].exp() + &u[0] * &u[1])
        });
        let p = ChartPoint::new(vec![0.4, -0.2]).unwrap();
        let u = NaturalVelocity::new(vec![0.8, 1.1]).unwrap();
        for mode in [LiftMode::Vertical, LiftMode::Complete] {
            let lhs = lift_apply(&xf, &fg, &p, &u, mode).unwrap();
            let fv = f.value(&p, &u).unwrap();
            let gv = g.value(&p, &u).unwrap();
            let rhs = fv * lift_apply(&xf, &g, &p, &u, mode).unwrap()
                + gv * lift_apply(&xf, &f, &p, &u, mode).unwrap();
            let tol = 1e-12 * lhs.abs().max(1.0);
            assert!((lhs - rhs).abs() <= tol, "mode {mode:?}: {lhs} vs {rhs}");
        }
    }

    proptest::proptest! {
        #[test]
        fn quasi_natural_roundtrip(
            coords in proptest::collection::vec(-2.0f64..2.0, 3),
            vels in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let frame = shear_frame();
            let p = ChartPoint::new(coords).unwrap();
            let u = NaturalVelocity::new(vels).unwrap();
            let v = frame.quasi_from_natural(&p, &u).unwrap();
            let back = frame.natural_from_quasi(&p, &v).unwrap();
            let err = (back.components() - u.components()).amax();
            proptest::prop_assert!(err <= 1e-12 * u.components().amax().max(1.0));
        }
    }

    #[test]
    fn jacobi_identity_numerically() {
        // Cyclic sum of [[X,Y],Z] with the outer derivative taken by central
        // differences of the inner bracket components.
        let fields = [
            VectorField::new(3, |x| vec![x[1].sin(), x[2].clone(), x[0].sq()]),
            VectorField::new(3, |x| vec![x[0].c(1.0), &x[0] * &x[2], x[1].cos()]),
            VectorField::new(3, |x| vec![x[2].exp() * 0.1, x[0].c(0.5), &x[0] + &x[1]]),
        ];
        let fd_outer = |a: &VectorField, b: &VectorField, c: &VectorField, p: &ChartPoint| {
            // [[a,b], c] ~= d/dx([a,b]) c - Jc [a,b], via FD on [a,b]
            let h = 1e-5;
            let n = 3;
            let ab = |q: &ChartPoint| bracket(a, b, q).unwrap();
            let mut jac = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut cp = p.coords().clone();
                cp[k] += h;
                let mut cm = p.coords().clone();
                cm[k] -= h;
                let bp = ab(&ChartPoint::from_vector(cp).unwrap());
                let bm = ab(&ChartPoint::from_vector(cm).unwrap());
                for l in 0..n {
                    jac[(l, k)] = (bp[l] - bm[l]) / (2.0 * h);
                }
            }
            let cj = c.eval(p).unwrap();
            &jac * &cj.value - &cj.jacobian * &ab(p)
        };
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let p = ChartPoint::new(rng.uniform_vec(3, -1.0, 1.0)).unwrap();
            let total = fd_outer(&fields[0], &fields[1], &fields[2], &p)
                + fd_outer(&fields[1], &fields[2], &fields[0], &p)
                + fd_outer(&fields[2], &fields[0], &fields[1], &p);
            assert!(total.amax() <= 1e-8, "Jacobi residual {}", total.amax());
        }
    }

    #[test]
    fn lift_rules_for_quasi_velocity_functions() {
        // Complete lift: X_i(v^j) = -R^j_{ik} v^k; vertical lift gives delta.
        let frame = shear_frame();
        let n = 3;
        let mut rng = SplitMix64::new(5);
        for _ in 0..10 {
            let p = ChartPoint::new(rng.uniform_vec(n, -1.5, 1.5)).unwrap();
            let u = NaturalVelocity::new(rng.uniform_vec(n, -1.5, 1.5)).unwrap();
            let m = frame.matrix(&p).unwrap();
            let minv = crate::linalg::inverse(&m, "frame").unwrap();
            let v = frame.quasi_from_natural(&p, &u).unwrap();
            let r = frame.structure_functions(&p).unwrap();
            let jets = frame.eval_all(&p).unwrap();
            // dv^j/dx^k = -(Minv dM/dx^k Minv u)^j; dM/dx^k columns from field Jacobians
            for i in 0..n {
                for j in 0..n {
                    // vertical: X_i^V(v^j) = (Minv X_i)^j = delta^j_i
                    let vert = (&minv * &jets[i].value)[j];
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(vert, expect, epsilon = 1e-12);
                    // complete: X_i^k dv^j/dx^k + u^l (dX_i/dx^l)^k dv^j/du^k
                    let mut total = 0.0;
                    for k in 0..n {
                        let mut dm = DMatrix::zeros(n, n);
                        for (col, jet) in jets.iter().enumerate() {
                            for row in 0..n {
                                dm[(row, col)] = jet.jacobian[(row, k)];
                            }
                        }
                        let dv = -(&minv * dm * &minv * u.components());
                        total += jets[i].value[k] * dv[j];
                    }
                    let transported = &jets[i].jacobian * u.components();
                    total += (&minv * transported)[j];
                    let mut rhs = 0.0;
                    for k in 0..n {
                        rhs -= r.get(i, k, j) * v.components()[k];
                    }
                    assert!((total - rhs).abs() <= 1e-8, "lift rule i={i} j={j}");
                }
            }
        }
    }
}
