//! Routh reduction for systems with horizontal symmetries.
//!
//! When a subalgebra h of the symmetry algebra has all of its fundamental
//! fields inside the constraint distribution, the corresponding momentum
//! components are genuinely conserved. On a level set of that momentum the
//! conserved velocities can be eliminated through the momentum relation,
//! and the remaining dynamics is governed by the Routhian
//! `R = L - v~^rho p_rho`.
//!
//! The elimination works in the coordinates `(x, v^kappa)` where tangency
//! to the level set is automatic; the eliminated velocities enter through
//! implicit differentiation of the momentum relation, never by symbolic
//! substitution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frame::{FieldJet, VectorField};
use crate::hamel::{plan_steps, CState, Method};
use crate::jet::{eval_jet, ChartPoint, Jet2, NaturalVelocity};
use crate::linalg;
use crate::reduction::InvariantFrameSplit;
use crate::tensor::Tensor3;

/// Tolerance for `E~_rho in D` at the model's sample points.
const HORIZONTAL_MEMBERSHIP_TOL: f64 = 1e-10;

/// Convergence tolerance and iteration cap of the momentum Newton solve.
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;

/// A value of the conserved momentum `E~_rho^V(L) = mu_rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumLevel(DVector<f64>);

impl MomentumLevel {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "momentum level",
            });
        }
        Ok(Self(DVector::from_vec(mu)))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A point of the level set N_mu after eliminating the conserved
/// velocities: chart point plus the transverse quasi-velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct RouthState {
    pub x: ChartPoint,
    pub v_kappa: DVector<f64>,
}

impl RouthState {
    pub fn new(x: ChartPoint, v_kappa: Vec<f64>) -> Result<Self> {
        let v = DVector::from_vec(v_kappa);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "Routh state",
            });
        }
        Ok(Self { x, v_kappa: v })
    }
}

/// An invariant system whose rho-block of vertical constrained directions
/// is spanned by fundamental vector fields (horizontal symmetries).
#[derive(Clone, Debug)]
pub struct HorizontalSymmetryModel {
    split: InvariantFrameSplit,
    /// Group-basis indices spanning the horizontal subalgebra h.
    h_indices: Vec<usize>,
    /// Group-basis indices reordered as [h..., complement...].
    group_order: Vec<usize>,
}

impl HorizontalSymmetryModel {
    /// Validates, in order: the dimension assumption (empty k-block), the
    /// block count, the ideal condition `C^c_{rho r} = 0` on the structure
    /// constants, and membership `E~_rho in D` at the given sample points.
    pub fn new(
        split: InvariantFrameSplit,
        h_indices: Vec<usize>,
        samples: &[ChartPoint],
    ) -> Result<Self> {
        if split.n_k() != 0 {
            return Err(Error::InvalidConfig(
                "Routh reduction requires D + V = TQ (no transverse non-D directions)".into(),
            ));
        }
        let kdim = split.group().dim();
        let mut sorted = h_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != h_indices.len() || h_indices.iter().any(|&i| i >= kdim) {
            return Err(Error::InvalidConfig(
                "horizontal symmetry indices must be distinct group-basis indices".into(),
            ));
        }
        if h_indices.len() != split.n_rho() {
            return Err(Error::InvalidConfig(format!(
                "horizontal symmetry algebra must have the dimension of the rho-block ({})",
                split.n_rho()
            )));
        }
        // ideal condition: brackets of h with anything stay in h
        let consts = split.group().constants();
        for &rho in &h_indices {
            for r in 0..kdim {
                for c in 0..kdim {
                    if !h_indices.contains(&c) && consts.get(c, rho, r).abs() > 1e-12 {
                        return Err(Error::InvalidConfig(
                            "horizontal symmetry algebra is not an ideal".into(),
                        ));
                    }
                }
            }
        }
        // membership: E~_rho lies in D at the sample points
        if samples.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one sample point is required to check E~_rho in D".into(),
            ));
        }
        let sys = split.system();
        let m = sys.constraint_rank();
        let n = sys.dim();
        for x in samples {
            for &rho in &h_indices {
                let e = split.group().fundamental()[rho].components(x)?;
                let v = sys
                    .adapted()
                    .frame
                    .quasi_from_natural(x, &NaturalVelocity::from_vector(e)?)?;
                for a in m..n {
                    if v.components()[a].abs() > HORIZONTAL_MEMBERSHIP_TOL {
                        return Err(Error::InvalidConfig(format!(
                            "fundamental field {rho} leaves the constraint distribution \
                             (component {:e})",
                            v.components()[a]
                        )));
                    }
                }
            }
        }
        let mut group_order = h_indices.clone();
        group_order.extend((0..kdim).filter(|i| !h_indices.contains(i)));
        Ok(Self {
            split,
            h_indices,
            group_order,
        })
    }

    pub fn split(&self) -> &InvariantFrameSplit {
        &self.split
    }

    pub fn h_indices(&self) -> &[usize] {
        &self.h_indices
    }

    fn n_h(&self) -> usize {
        self.h_indices.len()
    }

    fn n_kappa(&self) -> usize {
        self.split.n_kappa()
    }

    /// kappa-block fields (transverse constrained directions).
    fn kappa_fields(&self) -> Vec<VectorField> {
        self.split
            .blocks()
            .kappa
            .iter()
            .map(|&i| self.split.system().adapted().frame.field(i).clone())
            .collect()
    }

    /// Fundamental fields reordered as [h..., complement...].
    fn ordered_fundamental(&self) -> Vec<VectorField> {
        self.group_order
            .iter()
            .map(|&i| self.split.group().fundamental()[i].clone())
            .collect()
    }

    /// Checks whether an algebra element preserves the level set mu; with
    /// `restrict_to_h` the coefficients range over the h-basis only (the
    /// h_mu test), otherwise over the full group basis (the g_mu test).
    pub fn lies_in_isotropy(
        &self,
        mu: &MomentumLevel,
        coeffs: &DVector<f64>,
        restrict_to_h: bool,
    ) -> Result<bool> {
        let basis: Vec<usize> = if restrict_to_h {
            self.h_indices.clone()
        } else {
            (0..self.split.group().dim()).collect()
        };
        if coeffs.len() != basis.len() || mu.dim() != self.n_h() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                actual: coeffs.len(),
            });
        }
        Ok(lies_in_isotropy(
            self.split.group().constants(),
            &self.h_indices,
            mu,
            &basis,
            coeffs,
        ))
    }
}

/// Level-set preservation test on structure constants: the element with
/// the given coefficients over `basis` satisfies
/// `sum_r a^r C^sigma_{r rho} mu_sigma = 0` for every rho in h.
pub fn lies_in_isotropy(
    constants: &Tensor3,
    h_indices: &[usize],
    mu: &MomentumLevel,
    basis: &[usize],
    coeffs: &DVector<f64>,
) -> bool {
    for &rho in h_indices {
        let mut total = 0.0;
        for (slot, &r) in basis.iter().enumerate() {
            for (mi, &sigma) in h_indices.iter().enumerate() {
                total += coeffs[slot] * constants.get(sigma, r, rho) * mu.values()[mi];
            }
        }
        if total.abs() > 1e-12 {
            return false;
        }
    }
    true
}

struct RouthData {
    xk: Vec<FieldJet>,
    eh: Vec<FieldJet>,
    ec: Vec<FieldJet>,
    u: DVector<f64>,
    lagr: Jet2,
}

fn routh_data(
    model: &HorizontalSymmetryModel,
    x: &ChartPoint,
    w: &DVector<f64>,
    vtilde: &DVector<f64>,
) -> Result<RouthData> {
    let n = model.split.system().dim();
    let fields = model.kappa_fields();
    let fund = model.ordered_fundamental();
    let nh = model.n_h();
    let xk: Vec<FieldJet> = fields.iter().map(|f| f.eval(x)).collect::<Result<_>>()?;
    let eh: Vec<FieldJet> = fund[..nh].iter().map(|f| f.eval(x)).collect::<Result<_>>()?;
    let ec: Vec<FieldJet> = fund[nh..].iter().map(|f| f.eval(x)).collect::<Result<_>>()?;
    let mut u = DVector::zeros(n);
    for (l, jet) in xk.iter().enumerate() {
        u.axpy(w[l], &jet.value, 1.0);
    }
    for (r, jet) in eh.iter().enumerate() {
        u.axpy(vtilde[r], &jet.value, 1.0);
    }
    let lagr = eval_jet(
        model.split.system().lagrangian(),
        x,
        &NaturalVelocity::from_vector(u.clone())?,
    )?;
    Ok(RouthData {
        xk,
        eh,
        ec,
        u,
        lagr,
    })
}

fn momentum_values(data: &RouthData) -> DVector<f64> {
    DVector::from_fn(data.eh.len(), |r, _| data.eh[r].value.dot(&data.lagr.d_u))
}

fn momentum_gram(data: &RouthData) -> DMatrix<f64> {
    let nh = data.eh.len();
    DMatrix::from_fn(nh, nh, |r, s| {
        (&data.lagr.d_uu * &data.eh[r].value).dot(&data.eh[s].value)
    })
}

/// Solve the momentum relation `E~_rho^V(L) = mu_rho` for the eliminated
/// velocities `v~^rho` at fixed `(x, v^kappa)` by damped Newton iteration
/// (one step for velocity-quadratic Lagrangians). The remaining vertical
/// velocities are held at zero (the state is on C).
pub fn momentum_solve(
    model: &HorizontalSymmetryModel,
    mu: &MomentumLevel,
    x: &ChartPoint,
    v_kappa: &DVector<f64>,
) -> Result<DVector<f64>> {
    let nh = model.n_h();
    if mu.dim() != nh {
        return Err(Error::DimensionMismatch {
            expected: nh,
            actual: mu.dim(),
        });
    }
    if v_kappa.len() != model.n_kappa() {
        return Err(Error::DimensionMismatch {
            expected: model.n_kappa(),
            actual: v_kappa.len(),
        });
    }
    let mut vtilde = DVector::zeros(nh);
    let mut data = routh_data(model, x, v_kappa, &vtilde)?;
    let mut residual = momentum_values(&data) - mu.values();
    if residual.amax() <= NEWTON_TOL {
        return Ok(vtilde);
    }
    for _ in 0..NEWTON_MAX_ITER {
        let gram = momentum_gram(&data);
        let step = linalg::solve(&gram, &(-&residual), "momentum relation")?;
        // damped update: halve until the residual shrinks
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &vtilde + scale * &step;
            let cand_data = routh_data(model, x, v_kappa, &candidate)?;
            let cand_res = momentum_values(&cand_data) - mu.values();
            if cand_res.amax() < residual.amax() {
                vtilde = candidate;
                data = cand_data;
                residual = cand_res;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if residual.amax() <= NEWTON_TOL {
            return Ok(vtilde);
        }
    }
    Err(Error::NewtonDivergence {
        iterations: NEWTON_MAX_ITER,
        residual: residual.amax(),
    })
}

/// The Routhian `R = L - iota^rho mu_rho` evaluated on `C` intersected
/// with the level set.
pub fn routhian(
    model: &HorizontalSymmetryModel,
    mu: &MomentumLevel,
    x: &ChartPoint,
    v_kappa: &DVector<f64>,
) -> Result<f64> {
    let iota = momentum_solve(model, mu, x, v_kappa)?;
    let data = routh_data(model, x, v_kappa, &iota)?;
    Ok(data.lagr.value - iota.dot(mu.values()))
}

/// Transverse quasi-accelerations `f^kappa` of the dynamics restricted to
/// the level set, in the eliminated coordinates `(x, v^kappa)`.
///
/// The assembly runs the quasi-velocity solver on the kappa-block of the
/// Routhian: the effective mass matrix is the implicit-differentiation
/// (Schur complement) Hessian of the Routhian, the left side carries the
/// corrected complete lift tangent to C, and the right side the forcing
/// `-R~^c_{kappa lambda} v^lambda E~_c^V(L) - R~^rho_{kappa lambda} v^lambda mu_rho`
/// built from the E~_r-components of the brackets `[X_kappa, X_lambda]`.
pub fn routh_rhs(
    model: &HorizontalSymmetryModel,
    mu: &MomentumLevel,
    s: &RouthState,
) -> Result<DVector<f64>> {
    let nk = model.n_kappa();
    let nh = model.n_h();
    if s.v_kappa.len() != nk {
        return Err(Error::DimensionMismatch {
            expected: nk,
            actual: s.v_kappa.len(),
        });
    }
    let n = model.split.system().dim();
    let iota = momentum_solve(model, mu, &s.x, &s.v_kappa)?;
    let data = routh_data(model, &s.x, &s.v_kappa, &iota)?;
    let lagr = &data.lagr;

    // blocks of the velocity Hessian in the Routh frame
    let gram = momentum_gram(&data);
    let mut mxk = DMatrix::zeros(nk, nk);
    let mut mxe = DMatrix::zeros(nk, nh);
    for kx in 0..nk {
        let h_xk = &lagr.d_uu * &data.xk[kx].value;
        for l in 0..nk {
            mxk[(kx, l)] = h_xk.dot(&data.xk[l].value);
        }
        for r in 0..nh {
            mxe[(kx, r)] = h_xk.dot(&data.eh[r].value);
        }
    }
    // effective mass: Hessian of the Routhian via implicit differentiation
    let gram_inv_mex = linalg::solve_matrix(&gram, &mxe.transpose(), "momentum block")?;
    let eff_mass = &mxk - &mxe * &gram_inv_mex;

    // d iota / dx^j from  g . diota_j = -dP_rho/dx^j |_{velocities fixed}
    let mut du_fixed = DMatrix::zeros(n, n); // column j = dU/dx^j at fixed (w, vtilde)
    for (l, jet) in data.xk.iter().enumerate() {
        du_fixed += s.v_kappa[l] * &jet.jacobian;
    }
    for (r, jet) in data.eh.iter().enumerate() {
        du_fixed += iota[r] * &jet.jacobian;
    }
    let mut dp_fixed = DMatrix::zeros(nh, n);
    for r in 0..nh {
        let row = data.eh[r].jacobian.transpose() * &lagr.d_u
            + lagr.d_ux.transpose() * &data.eh[r].value
            + du_fixed.transpose() * (&lagr.d_uu * &data.eh[r].value);
        dp_fixed.row_mut(r).copy_from(&row.transpose());
    }
    let diota_dx = linalg::solve_matrix(&gram, &(-&dp_fixed), "momentum relation")?;

    // dU/dx^j including the implicit motion of iota
    let mut du_full = du_fixed.clone();
    for r in 0..nh {
        for j in 0..n {
            for l in 0..n {
                du_full[(l, j)] += data.eh[r].value[l] * diota_dx[(r, j)];
            }
        }
    }

    // brackets [X_kappa, X_lambda] expanded in the Routh frame
    // {X_kappa, E~_h, E~_c}; R~^r components sit past the kappa block
    let mut frame_mat = DMatrix::zeros(n, n);
    for (i, jet) in data.xk.iter().enumerate() {
        frame_mat.set_column(i, &jet.value);
    }
    for (r, jet) in data.eh.iter().enumerate() {
        frame_mat.set_column(nk + r, &jet.value);
    }
    for (c, jet) in data.ec.iter().enumerate() {
        frame_mat.set_column(nk + nh + c, &jet.value);
    }
    let mut rtilde = vec![DMatrix::zeros(nk, nk); nh + data.ec.len()];
    for kx in 0..nk {
        for l in (kx + 1)..nk {
            let br = &data.xk[l].jacobian * &data.xk[kx].value
                - &data.xk[kx].jacobian * &data.xk[l].value;
            let comps = linalg::solve(&frame_mat, &br, "Routh frame")?;
            for r in 0..(nh + data.ec.len()) {
                rtilde[r][(kx, l)] = comps[nk + r];
                rtilde[r][(l, kx)] = -comps[nk + r];
            }
        }
    }

    // vertical momenta p~_r = E~_r^V(L) in [h..., complement...] order
    let p_h: Vec<f64> = (0..nh).map(|r| data.eh[r].value.dot(&lagr.d_u)).collect();
    let p_c: Vec<f64> = data.ec.iter().map(|jet| jet.value.dot(&lagr.d_u)).collect();

    let mut rhs = DVector::zeros(nk);
    for kx in 0..nk {
        let xkj = &data.xk[kx];
        // complete lift of X_kappa on L
        let complete = xkj.value.dot(&lagr.d_x) + (&xkj.jacobian * &data.u).dot(&lagr.d_u);
        // correction making the lift tangent to C:
        // Xbar^C(L) = X^C(L) + R~^r_{kappa lambda} v^lambda p~_r
        let mut corrected = complete;
        for l in 0..nk {
            for r in 0..nh {
                corrected += rtilde[r][(kx, l)] * s.v_kappa[l] * p_h[r];
            }
            for c in 0..p_c.len() {
                corrected += rtilde[nh + c][(kx, l)] * s.v_kappa[l] * p_c[c];
            }
        }
        // forcing on the level set
        let mut forcing = 0.0;
        for l in 0..nk {
            for c in 0..p_c.len() {
                forcing -= rtilde[nh + c][(kx, l)] * s.v_kappa[l] * p_c[c];
            }
            for r in 0..nh {
                forcing -= rtilde[r][(kx, l)] * s.v_kappa[l] * mu.values()[r];
            }
        }
        // drift of the Routhian momentum d(dR/dw^kappa)/dx . u
        let dp = xkj.jacobian.transpose() * &lagr.d_u
            + lagr.d_ux.transpose() * &xkj.value
            + du_full.transpose() * (&lagr.d_uu * &xkj.value);
        rhs[kx] = corrected + forcing - dp.dot(&data.u);
    }

    linalg::solve(&eff_mass, &rhs, "Routhian mass matrix").map_err(|_| Error::RegularityFailure)
}

/// A trajectory on the level set in eliminated coordinates, with the
/// (conserved) energy diagnostic.
#[derive(Clone, Debug)]
pub struct RouthTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<RouthState>,
    pub energy: Vec<f64>,
}

impl RouthTrajectory {
    pub fn last_state(&self) -> &RouthState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().fold(0.0f64, |m, e| m.max((e - e0).abs()))
    }
}

/// Integrate the level-set dynamics `(x, v^kappa)`; the configuration moves
/// with the full velocity `u = v^kappa X_kappa + iota^rho E~_rho`.
pub fn integrate_routh(
    model: &HorizontalSymmetryModel,
    mu: &MomentumLevel,
    s0: &RouthState,
    h: f64,
    t_final: f64,
    method: Method,
) -> Result<RouthTrajectory> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    if t_final < 0.0 || !t_final.is_finite() {
        return Err(Error::InvalidConfig("final time must be nonnegative".into()));
    }
    let (steps, h) = plan_steps(h, t_final);
    let n = model.split.system().dim();
    let nk = model.n_kappa();

    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = ChartPoint::from_vector(y.rows(0, n).into_owned())?;
        let w = y.rows(n, nk).into_owned();
        let state = RouthState {
            x: x.clone(),
            v_kappa: w.clone(),
        };
        let iota = momentum_solve(model, mu, &x, &w)?;
        let data = routh_data(model, &x, &w, &iota)?;
        let f = routh_rhs(model, mu, &state)?;
        let mut dy = DVector::zeros(n + nk);
        dy.rows_mut(0, n).copy_from(&data.u);
        dy.rows_mut(n, nk).copy_from(&f);
        Ok(dy)
    };
    let energy_at = |x: &ChartPoint, w: &DVector<f64>| -> Result<f64> {
        let iota = momentum_solve(model, mu, x, w)?;
        let data = routh_data(model, x, w, &iota)?;
        Ok(data.u.dot(&data.lagr.d_u) - data.lagr.value)
    };
    let wrap = |r: Result<DVector<f64>>, t: f64| -> Result<DVector<f64>> {
        r.map_err(|e| Error::DynamicsFailure {
            t,
            source: Box::new(e),
        })
    };

    let mut y = DVector::zeros(n + nk);
    y.rows_mut(0, n).copy_from(s0.x.coords());
    y.rows_mut(n, nk).copy_from(&s0.v_kappa);
    let mut traj = RouthTrajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
    };
    for step in 0..=steps {
        let t = step as f64 * h;
        let x = ChartPoint::from_vector(y.rows(0, n).into_owned())?;
        let w = y.rows(n, nk).into_owned();
        traj.times.push(t);
        traj.energy.push(energy_at(&x, &w).map_err(|e| Error::DynamicsFailure {
            t,
            source: Box::new(e),
        })?);
        traj.states.push(RouthState { x, v_kappa: w });
        if step == steps {
            break;
        }
        match method {
            Method::Euler => {
                let k1 = wrap(rhs(&y), t)?;
                y += h * k1;
            }
            Method::Rk4 => {
                let k1 = wrap(rhs(&y), t)?;
                let k2 = wrap(rhs(&(&y + 0.5 * h * &k1)), t)?;
                let k3 = wrap(rhs(&(&y + 0.5 * h * &k2)), t)?;
                let k4 = wrap(rhs(&(&y + h * &k3)), t)?;
                y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(Error::DynamicsFailure {
                t,
                source: Box::new(Error::NonFinite {
                    context: "Routh integration state",
                }),
            });
        }
    }
    Ok(traj)
}

/// Full constrained initial state on the level set matching a Routh state:
/// the rho-velocities come from the momentum relation. Velocities are in
/// the original system's frame order.
pub fn full_state_on_level(
    model: &HorizontalSymmetryModel,
    mu: &MomentumLevel,
    s: &RouthState,
) -> Result<CState> {
    let split = model.split();
    let sys = split.system();
    let iota = momentum_solve(model, mu, &s.x, &s.v_kappa)?;
    let data = routh_data(model, &s.x, &s.v_kappa, &iota)?;
    // convert the natural velocity to system quasi-velocities
    let v = sys
        .adapted()
        .frame
        .quasi_from_natural(&s.x, &NaturalVelocity::from_vector(data.u.clone())?)?;
    CState::from_vector(s.x.clone(), v.components().rows(0, sys.constraint_rank()).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{AdaptedFrame, Frame};
    use crate::hamel::{integrate, ConstrainedSystem};
    use crate::jet::ScalarOnTq;
    use crate::reduction::{reduced_rhs, GroupModel, ReducedState, SplitBlocks};
    use crate::rng::SplitMix64;
    use crate::zoo;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn paper_model() -> HorizontalSymmetryModel {
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        built.horizontal_model(77).unwrap().unwrap()
    }

    fn mu(values: Vec<f64>) -> MomentumLevel {
        MomentumLevel::new(values).unwrap()
    }

    #[test]
    fn momentum_solve_paper_is_identity() {
        let model = paper_model();
        let x = ChartPoint::new(vec![0.7, 1.0, -2.0]).unwrap();
        let w = DVector::from_vec(vec![1.3]);
        let iota = momentum_solve(&model, &mu(vec![2.0]), &x, &w).unwrap();
        assert_abs_diff_eq!(iota[0], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn momentum_solve_even_lagrangian_at_zero_level() {
        let model = paper_model();
        let x = ChartPoint::new(vec![-0.4, 0.0, 0.0]).unwrap();
        let w = DVector::from_vec(vec![0.9]);
        let iota = momentum_solve(&model, &mu(vec![0.0]), &x, &w).unwrap();
        assert_eq!(iota[0], 0.0);
    }

    /// Unconstrained system on R^3 with two cyclic directions and a
    /// velocity coupling: p_1 = d1 y1dot + eps xdot, p_2 = d2 y2dot.
    fn coupled_cyclic_model(d1: f64, d2: f64, eps: f64) -> HorizontalSymmetryModel {
        let frame = Frame::new(
            (0..3).map(|j| crate::frame::VectorField::coordinate(3, j)).collect(),
            "R^3",
        )
        .unwrap();
        let lagr = ScalarOnTq::new(3, move |_, u| {
            0.5 * u[0].sq() + u[1].sq() * (0.5 * d1) + u[2].sq() * (0.5 * d2)
                + (&u[0] * &u[1]) * eps
        });
        let sys = ConstrainedSystem::new("coupled", lagr, AdaptedFrame::new(frame, 3).unwrap())
            .unwrap();
        let group = GroupModel::abelian(vec![
            crate::frame::VectorField::coordinate(3, 1),
            crate::frame::VectorField::coordinate(3, 2),
        ])
        .unwrap();
        let split = crate::reduction::InvariantFrameSplit::new(
            sys,
            group,
            SplitBlocks {
                rho: vec![1, 2],
                kappa: vec![0],
                c: vec![],
                k: vec![],
            },
            vec![1, 2],
            vec![0.0, 0.0],
        )
        .unwrap();
        let samples = vec![ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap()];
        HorizontalSymmetryModel::new(split, vec![0, 1], &samples).unwrap()
    }

    #[test]
    fn momentum_solve_matches_direct_linear_solve() {
        let (d1, d2, eps) = (2.0, 0.5, 0.3);
        let model = coupled_cyclic_model(d1, d2, eps);
        let mut rng = SplitMix64::new(15);
        for _ in 0..50 {
            let w = DVector::from_vec(vec![rng.uniform(-2.0, 2.0)]);
            let m1 = rng.uniform(-2.0, 2.0);
            let m2 = rng.uniform(-2.0, 2.0);
            let x = ChartPoint::new(rng.uniform_vec(3, -2.0, 2.0)).unwrap();
            let iota = momentum_solve(&model, &mu(vec![m1, m2]), &x, &w).unwrap();
            assert_abs_diff_eq!(iota[0], (m1 - eps * w[0]) / d1, epsilon = 1e-12);
            assert_abs_diff_eq!(iota[1], m2 / d2, epsilon = 1e-12);
        }
    }

    #[test]
    fn newton_handles_quartic_velocity_terms() {
        // p = ydot + ydot^3 = mu has a unique real root; compare against a
        // bisection oracle
        let frame = Frame::new(
            (0..2).map(|j| crate::frame::VectorField::coordinate(2, j)).collect(),
            "R^2",
        )
        .unwrap();
        let lagr = ScalarOnTq::new(2, |_, u| {
            0.5 * (u[0].sq() + u[1].sq()) + u[1].sq().sq() * 0.25
        });
        let sys = ConstrainedSystem::new("quartic", lagr, AdaptedFrame::new(frame, 2).unwrap())
            .unwrap();
        let group =
            GroupModel::abelian(vec![crate::frame::VectorField::coordinate(2, 1)]).unwrap();
        let split = crate::reduction::InvariantFrameSplit::new(
            sys,
            group,
            SplitBlocks {
                rho: vec![1],
                kappa: vec![0],
                c: vec![],
                k: vec![],
            },
            vec![1],
            vec![0.0],
        )
        .unwrap();
        let samples = vec![ChartPoint::new(vec![0.0, 0.0]).unwrap()];
        let model = HorizontalSymmetryModel::new(split, vec![0], &samples).unwrap();

        let bisect = |target: f64| {
            let f = |v: f64| v + v * v * v;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let x = ChartPoint::new(vec![0.2, -0.1]).unwrap();
        let w = DVector::from_vec(vec![0.6]);
        for target in [0.0, 0.7, -2.3, 5.0] {
            let iota = momentum_solve(&model, &mu(vec![target]), &x, &w).unwrap();
            assert_abs_diff_eq!(iota[0], bisect(target), epsilon = 1e-9);
        }
    }

    #[test]
    fn routhian_closed_form_paper() {
        let model = paper_model();
        let mut rng = SplitMix64::new(21);
        for m_val in [0.0, 1.0, 2.0] {
            let level = mu(vec![m_val]);
            for _ in 0..20 {
                let x = rng.uniform(-2.0, 2.0);
                let w = rng.uniform(-2.0, 2.0);
                let r = routhian(
                    &model,
                    &level,
                    &ChartPoint::new(vec![x, 0.3, -0.8]).unwrap(),
                    &DVector::from_vec(vec![w]),
                )
                .unwrap();
                let expect = 0.5 * ((1.0 + x * x) * w * w - m_val * m_val);
                assert!((r - expect).abs() <= 1e-12, "Routhian {r} vs {expect}");
            }
        }
        // spot value from the closed form
        let r = routhian(
            &model,
            &mu(vec![1.0]),
            &ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap(),
            &DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(r, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn routhian_at_zero_level_is_restricted_lagrangian() {
        let model = paper_model();
        let x = ChartPoint::new(vec![1.2, 0.0, 0.0]).unwrap();
        let w = DVector::from_vec(vec![0.8]);
        let r = routhian(&model, &mu(vec![0.0]), &x, &w).unwrap();
        let expect = 0.5 * (1.0 + 1.2 * 1.2) * 0.8 * 0.8;
        assert_abs_diff_eq!(r, expect, epsilon = 1e-13);
    }

    #[test]
    fn routh_rhs_is_mu_independent_euler_lagrange_equation() {
        let model = paper_model();
        let mut rng = SplitMix64::new(44);
        for m_val in [0.0, 1.0, 2.0] {
            let level = mu(vec![m_val]);
            for _ in 0..20 {
                let x = rng.uniform(-2.0, 2.0);
                let w = rng.uniform(-2.0, 2.0);
                let s = RouthState::new(
                    ChartPoint::new(vec![x, 0.5, 1.0]).unwrap(),
                    vec![w],
                )
                .unwrap();
                let f = routh_rhs(&model, &level, &s).unwrap();
                let expect = -x * w * w / (1.0 + x * x);
                assert!((f[0] - expect).abs() <= 1e-12, "{} vs {expect}", f[0]);
            }
        }
    }

    #[test]
    fn zero_level_routh_matches_eliminated_reduced_dynamics() {
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        let model = built.horizontal_model(77).unwrap().unwrap();
        let split = built.split.as_ref().unwrap();
        let level = mu(vec![0.0]);
        let mut rng = SplitMix64::new(3);
        for _ in 0..30 {
            let x = rng.uniform(-2.0, 2.0);
            let w = rng.uniform(-2.0, 2.0);
            let s = RouthState::new(ChartPoint::new(vec![x, 0.0, 0.0]).unwrap(), vec![w]).unwrap();
            let f = routh_rhs(&model, &level, &s).unwrap();
            let (_, f_kappa) =
                reduced_rhs(split, &ReducedState::new(vec![x], vec![0.0], vec![w])).unwrap();
            assert!((f[0] - f_kappa[0]).abs() <= 1e-9);
        }
    }

    #[test]
    fn level_set_is_preserved_along_full_trajectories() {
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        let model = built.horizontal_model(77).unwrap().unwrap();
        let level = mu(vec![2.0]);
        let s = RouthState::new(ChartPoint::new(vec![0.1, 0.0, 0.0]).unwrap(), vec![1.0]).unwrap();
        let full0 = full_state_on_level(&model, &level, &s).unwrap();
        let traj = integrate(&built.sys, &full0, 1e-3, 5.0, crate::hamel::Method::Rk4)
            .unwrap()
            .with_momenta(&built.sys, &built.momentum_fields())
            .unwrap();
        let drift = traj.max_momentum_drift();
        assert!(drift[0] <= 1e-10, "momentum drift {}", drift[0]);
    }

    #[test]
    fn routh_trajectory_matches_projected_full_trajectory() {
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        let model = built.horizontal_model(77).unwrap().unwrap();
        let level = mu(vec![1.5]);
        let s0 = RouthState::new(ChartPoint::new(vec![0.3, 0.0, 0.0]).unwrap(), vec![1.0]).unwrap();
        let full0 = full_state_on_level(&model, &level, &s0).unwrap();
        let full = integrate(&built.sys, &full0, 1e-3, 1.0, crate::hamel::Method::Rk4).unwrap();
        let routh = integrate_routh(&model, &level, &s0, 1e-3, 1.0, crate::hamel::Method::Rk4)
            .unwrap();
        let mut worst = 0.0f64;
        for (f, r) in full.states.iter().zip(&routh.states) {
            worst = worst.max((f.x.coords()[0] - r.x.coords()[0]).abs());
            // v_kappa is the first quasi-velocity in this system's frame order
            worst = worst.max((f.v[0] - r.v_kappa[0]).abs());
        }
        assert!(worst <= 1e-6, "Routh/full gap {worst}");
    }

    #[test]
    fn non_ideal_subalgebra_is_rejected() {
        // Heisenberg-type constants: [E1, E2] = E3, and h = {E1} is not an
        // ideal. The frame is irrelevant; rejection happens on the algebra.
        let mut c = Tensor3::zeros(3, 3, 3);
        c.set(2, 0, 1, 1.0);
        c.set(2, 1, 0, -1.0);
        let e1 = crate::frame::VectorField::new(3, |x| {
            vec![x[0].c(1.0), x[0].c(0.0), x[1].clone()]
        });
        let e2 = crate::frame::VectorField::coordinate(3, 1);
        let e3 = crate::frame::VectorField::coordinate(3, 2);
        let group = GroupModel::new(c, vec![e1.clone(), e2, e3]).unwrap();
        let frame = Frame::new(
            vec![
                e1,
                crate::frame::VectorField::coordinate(3, 1),
                crate::frame::VectorField::coordinate(3, 2),
            ],
            "heisenberg",
        )
        .unwrap();
        let lagr = ScalarOnTq::new(3, |_, u| 0.5 * (u[0].sq() + u[1].sq() + u[2].sq()));
        let sys =
            ConstrainedSystem::new("heis", lagr, AdaptedFrame::new(frame, 1).unwrap()).unwrap();
        let split = crate::reduction::InvariantFrameSplit::new(
            sys,
            group,
            SplitBlocks {
                rho: vec![0],
                kappa: vec![],
                c: vec![1, 2],
                k: vec![],
            },
            vec![0, 1, 2],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap();
        let samples = vec![ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap()];
        let err = HorizontalSymmetryModel::new(split, vec![0], &samples);
        match err {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("ideal"), "{msg}"),
            other => panic!("expected ideal rejection, got {other:?}"),
        }
    }

    #[test]
    fn isotropy_predicate_on_se2_translations() {
        // h = translations of SE(2): rotations preserve the level set only
        // at mu = 0, translations always do.
        let mut c = Tensor3::zeros(3, 3, 3);
        c.set(1, 2, 0, 1.0);
        c.set(1, 0, 2, -1.0);
        c.set(0, 2, 1, -1.0);
        c.set(0, 1, 2, 1.0);
        let h = vec![0usize, 1];
        let rotation = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let translation = DVector::from_vec(vec![1.0, -2.0, 0.0]);
        let mu_nonzero = mu(vec![1.0, 0.0]);
        let mu_zero = mu(vec![0.0, 0.0]);
        let basis: Vec<usize> = vec![0, 1, 2];
        assert!(!lies_in_isotropy(&c, &h, &mu_nonzero, &basis, &rotation));
        assert!(lies_in_isotropy(&c, &h, &mu_zero, &basis, &rotation));
        assert!(lies_in_isotropy(&c, &h, &mu_nonzero, &basis, &translation));
    }

    #[test]
    fn dimension_assumption_is_required() {
        // paper-particle reduced only by the y-translation leaves d/dz in
        // the k-block; Routh reduction must refuse it.
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        let group = GroupModel::abelian(vec![crate::frame::VectorField::coordinate(3, 1)]).unwrap();
        let split = crate::reduction::InvariantFrameSplit::new(
            built.sys.clone(),
            group,
            SplitBlocks {
                rho: vec![1],
                kappa: vec![0],
                c: vec![],
                k: vec![2],
            },
            vec![1],
            vec![0.0],
        )
        .unwrap();
        let samples = vec![ChartPoint::new(vec![0.0, 0.0, 0.0]).unwrap()];
        assert!(matches!(
            HorizontalSymmetryModel::new(split, vec![0], &samples),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn rho_block_must_match_horizontal_algebra() {
        let built = zoo::build("nonholonomic-particle", &BTreeMap::new()).unwrap();
        // the nonholonomic particle's S is spanned by d/dy + x d/dz, which
        // is not a fundamental field; membership fails at generic samples
        let split = built.split.clone().unwrap();
        let samples = vec![ChartPoint::new(vec![0.7, 0.0, 0.0]).unwrap()];
        assert!(matches!(
            HorizontalSymmetryModel::new(split, vec![0], &samples),
            Err(Error::InvalidConfig(_))
        ));
    }
}
