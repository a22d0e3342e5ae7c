//! Constrained second-order dynamics on the constraint submanifold.
//!
//! A state of the constraint submanifold C stores only the chart point and
//! the constrained quasi-velocities `v^alpha`; the transverse components
//! `v^a` are identically zero by construction, so the constraint is
//! structural rather than penalized or projected.
//!
//! The dynamics solves, for each D-frame field `X_alpha`,
//!
//! ```text
//! Gamma(X_alpha^V(L)) - X_alpha^C(L) = 0   on C,
//! ```
//!
//! expanded into the linear system `M_{ab} f^b = b_a` with
//! `M_{ab} = X_a^i X_b^j d2L/du_i du_j` and the drift terms assembled from
//! exact jets. An independent Lagrange-multiplier formulation in natural
//! coordinates serves as a verification oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frame::{AdaptedFrame, FieldJet, VectorField};
use crate::jet::{eval_jet, ChartPoint, Jet2, NaturalVelocity, ScalarOnTq};
use crate::linalg;

/// A Lagrangian system with (possibly trivial) linear nonholonomic
/// constraints given by an adapted frame. `m = n` means unconstrained.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    name: String,
    lagrangian: ScalarOnTq,
    adapted: AdaptedFrame,
}

impl ConstrainedSystem {
    pub fn new(name: impl Into<String>, lagrangian: ScalarOnTq, adapted: AdaptedFrame) -> Result<Self> {
        if lagrangian.dim() != adapted.dim() {
            return Err(Error::DimensionMismatch {
                expected: adapted.dim(),
                actual: lagrangian.dim(),
            });
        }
        Ok(Self {
            name: name.into(),
            lagrangian,
            adapted,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Chart dimension n.
    pub fn dim(&self) -> usize {
        self.adapted.dim()
    }

    /// Rank m of the constraint distribution.
    pub fn constraint_rank(&self) -> usize {
        self.adapted.m
    }

    pub fn lagrangian(&self) -> &ScalarOnTq {
        &self.lagrangian
    }

    pub fn adapted(&self) -> &AdaptedFrame {
        &self.adapted
    }

    /// Natural velocity of a constrained state: `u = v^alpha X_alpha(x)`.
    pub fn natural_velocity(&self, s: &CState) -> Result<NaturalVelocity> {
        let jets = self.adapted.frame.eval_all(&s.x)?;
        NaturalVelocity::from_vector(assemble_velocity(&jets, &s.v))
    }
}

fn assemble_velocity(jets: &[FieldJet], v: &DVector<f64>) -> DVector<f64> {
    let n = jets[0].value.len();
    let mut u = DVector::zeros(n);
    for (alpha, value) in v.iter().enumerate() {
        u.axpy(*value, &jets[alpha].value, 1.0);
    }
    u
}

/// A point of the constraint submanifold in the adapted quasi-velocity
/// chart: `(x, v^alpha)` with the `v^a = 0` block implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct CState {
    pub x: ChartPoint,
    pub v: DVector<f64>,
}

impl CState {
    pub fn new(x: ChartPoint, v: Vec<f64>) -> Result<Self> {
        Self::from_vector(x, DVector::from_vec(v))
    }

    pub fn from_vector(x: ChartPoint, v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "constrained state",
            });
        }
        Ok(Self { x, v })
    }
}

/// Everything the dynamics assembly needs at one constrained state.
struct StateData {
    jets: Vec<FieldJet>,
    u: DVector<f64>,
    lagr: Jet2,
    /// `transport[j] = sum_gamma v^gamma (dX_gamma^j/dx^k) u^k`
    transport: DVector<f64>,
}

fn state_data(sys: &ConstrainedSystem, s: &CState) -> Result<StateData> {
    let m = sys.constraint_rank();
    if s.v.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: s.v.len(),
        });
    }
    let jets = sys.adapted.frame.eval_all(&s.x)?;
    let u = assemble_velocity(&jets, &s.v);
    let uvel = NaturalVelocity::from_vector(u.clone())?;
    let lagr = eval_jet(&sys.lagrangian, &s.x, &uvel)?;
    let n = sys.dim();
    let mut jv = DMatrix::zeros(n, n);
    for (gamma, value) in s.v.iter().enumerate() {
        jv += *value * &jets[gamma].jacobian;
    }
    let transport = &jv * &u;
    Ok(StateData {
        jets,
        u,
        lagr,
        transport,
    })
}

/// The constrained mass matrix `M_{ab} = X_a^V(X_b^V(L))` on C.
pub fn mass_matrix(sys: &ConstrainedSystem, s: &CState) -> Result<DMatrix<f64>> {
    let data = state_data(sys, s)?;
    Ok(mass_from_data(sys, &data))
}

fn mass_from_data(sys: &ConstrainedSystem, data: &StateData) -> DMatrix<f64> {
    let m = sys.constraint_rank();
    let mut mat = DMatrix::zeros(m, m);
    for a in 0..m {
        let ha = &data.lagr.d_uu * &data.jets[a].value;
        for b in 0..m {
            mat[(a, b)] = ha.dot(&data.jets[b].value);
        }
    }
    // congruence transforms can pick up roundoff asymmetry; restore exactly
    for a in 0..m {
        for b in (a + 1)..m {
            let avg = 0.5 * (mat[(a, b)] + mat[(b, a)]);
            mat[(a, b)] = avg;
            mat[(b, a)] = avg;
        }
    }
    mat
}

fn rhs_from_data(sys: &ConstrainedSystem, data: &StateData) -> DVector<f64> {
    let m = sys.constraint_rank();
    let lagr = &data.lagr;
    let mut b = DVector::zeros(m);
    for alpha in 0..m {
        let xa = &data.jets[alpha].value;
        let ja = &data.jets[alpha].jacobian;
        // complete lift of X_alpha applied to L
        let complete = xa.dot(&lagr.d_x) + (ja * &data.u).dot(&lagr.d_u);
        // (dp_alpha/dx^k) u^k at fixed u
        let dpdx_u = (ja.transpose() * &lagr.d_u).dot(&data.u) + xa.dot(&(&lagr.d_ux * &data.u));
        // chain through u(x, v): (dp_alpha/du) . transport
        let chain = (&lagr.d_uu * xa).dot(&data.transport);
        b[alpha] = complete - dpdx_u - chain;
    }
    b
}

/// Quasi-accelerations `f^alpha` of the Lagrange-d'Alembert field on C.
/// With `m = n` this is the unconstrained dynamics in Hamel form.
pub fn constrained_dynamics(sys: &ConstrainedSystem, s: &CState) -> Result<DVector<f64>> {
    let data = state_data(sys, s)?;
    let mass = mass_from_data(sys, &data);
    let b = rhs_from_data(sys, &data);
    linalg::solve(&mass, &b, "constrained mass matrix").map_err(|_| Error::RegularityFailure)
}

/// Natural-coordinate acceleration implied by quasi-accelerations:
/// `a^j = f^alpha X_alpha^j + v^gamma (dX_gamma^j/dx^k) u^k`.
pub fn push_acceleration(sys: &ConstrainedSystem, s: &CState, f: &DVector<f64>) -> Result<DVector<f64>> {
    let data = state_data(sys, s)?;
    let mut a = data.transport.clone();
    for (alpha, value) in f.iter().enumerate() {
        a.axpy(*value, &data.jets[alpha].value, 1.0);
    }
    Ok(a)
}

/// Classical Lagrange-multiplier formulation in natural coordinates, used
/// as an independent oracle: solve
///
/// ```text
/// [ H   -A^T ] [a     ]   [ dL/dx - (d2L/du dx) u ]
/// [ A    0   ] [lambda] = [ -(dA/dt) u            ]
/// ```
///
/// where the constraint rows `A` are the last n-m rows of the inverse frame
/// matrix (so both formulations describe the same distribution).
pub fn multiplier_oracle_natural(
    sys: &ConstrainedSystem,
    x: &ChartPoint,
    u: &NaturalVelocity,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = sys.dim();
    let m = sys.constraint_rank();
    let c = n - m;
    let jets = sys.adapted.frame.eval_all(x)?;
    let lagr = eval_jet(&sys.lagrangian, x, u)?;
    let uc = u.components();

    let force = &lagr.d_x - &lagr.d_ux * uc;
    if c == 0 {
        let a = linalg::solve(&lagr.d_uu, &force, "velocity Hessian")?;
        return Ok((a, DVector::zeros(0)));
    }

    let fmat = DMatrix::from_fn(n, n, |j, i| jets[i].value[j]);
    let finv = linalg::inverse(&fmat, "frame matrix")?;
    // dF/dt with column i = (dX_i/dx^k) u^k, then d(F^-1)/dt = -F^-1 dF/dt F^-1
    let mut fdot = DMatrix::zeros(n, n);
    for (i, jet) in jets.iter().enumerate() {
        let col = &jet.jacobian * uc;
        fdot.set_column(i, &col);
    }
    let finv_dot = -(&finv * &fdot * &finv);

    let mut saddle = DMatrix::zeros(n + c, n + c);
    saddle.view_mut((0, 0), (n, n)).copy_from(&lagr.d_uu);
    for a in 0..c {
        for j in 0..n {
            saddle[(j, n + a)] = -finv[(m + a, j)];
            saddle[(n + a, j)] = finv[(m + a, j)];
        }
    }
    let mut rhs = DVector::zeros(n + c);
    rhs.rows_mut(0, n).copy_from(&force);
    for a in 0..c {
        let mut adot_u = 0.0;
        for j in 0..n {
            adot_u += finv_dot[(m + a, j)] * uc[j];
        }
        rhs[n + a] = -adot_u;
    }
    let sol = linalg::solve(&saddle, &rhs, "multiplier saddle system")?;
    Ok((
        sol.rows(0, n).into_owned(),
        sol.rows(n, c).into_owned(),
    ))
}

/// Natural acceleration of the multiplier oracle at a constrained state.
pub fn multiplier_oracle(sys: &ConstrainedSystem, s: &CState) -> Result<DVector<f64>> {
    let u = sys.natural_velocity(s)?;
    Ok(multiplier_oracle_natural(sys, &s.x, &u)?.0)
}

/// The energy `E = u^j dL/du^j - L` at a constrained state.
pub fn energy(sys: &ConstrainedSystem, s: &CState) -> Result<f64> {
    let data = state_data(sys, s)?;
    Ok(data.u.dot(&data.lagr.d_u) - data.lagr.value)
}

/// Pointwise derivative of the energy along the dynamics, `Gamma(E)`,
/// assembled from jets rather than trajectories. Vanishes identically for
/// the Lagrange-d'Alembert field.
pub fn energy_rate(sys: &ConstrainedSystem, s: &CState) -> Result<f64> {
    let data = state_data(sys, s)?;
    let mass = mass_from_data(sys, &data);
    let b = rhs_from_data(sys, &data);
    let f = linalg::solve(&mass, &b, "constrained mass matrix").map_err(|_| Error::RegularityFailure)?;
    let lagr = &data.lagr;
    // dE/du|_x = L_uu u ; dE/dx|_u = L_ux^T u - L_x
    let de_du = &lagr.d_uu * &data.u;
    let de_dx_fixed_u = lagr.d_ux.transpose() * &data.u - &lagr.d_x;
    let n = sys.dim();
    let mut jv = DMatrix::zeros(n, n);
    for (gamma, value) in data.jets.iter().enumerate().take(sys.constraint_rank()) {
        jv += s.v[gamma] * &value.jacobian;
    }
    // dE~/dx = dE/dx|_u + Jv^T dE/du ; dE~/dv_alpha = X_alpha . dE/du
    let grad_x = de_dx_fixed_u + jv.transpose() * &de_du;
    let mut rate = data.u.dot(&grad_x);
    for alpha in 0..sys.constraint_rank() {
        rate += f[alpha] * data.jets[alpha].value.dot(&de_du);
    }
    Ok(rate)
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Fixed-step integration methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected rk4 or euler)"
            ))),
        }
    }
}

/// A time-stamped constrained trajectory with per-sample diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CState>,
    pub energy: Vec<f64>,
    /// One row per sample; column labels in `momentum_labels`.
    pub momenta: Vec<Vec<f64>>,
    pub momentum_labels: Vec<String>,
    /// Residual of the natural constraint `A u = 0` per sample. Exactly zero
    /// for quasi-velocity integration (the state never stores `v^a`).
    pub constraint_residual: Vec<f64>,
}

impl Trajectory {
    /// Attach momentum diagnostics `P = X^V(L)` for the given labelled fields.
    pub fn with_momenta(
        mut self,
        sys: &ConstrainedSystem,
        fields: &[(String, VectorField)],
    ) -> Result<Self> {
        self.momentum_labels = fields.iter().map(|(l, _)| l.clone()).collect();
        self.momenta = self
            .states
            .iter()
            .map(|s| {
                let data = state_data(sys, s)?;
                fields
                    .iter()
                    .map(|(_, xf)| Ok(xf.components(&s.x)?.dot(&data.lagr.d_u)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self)
    }

    pub fn last_state(&self) -> &CState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Maximum drift of the energy diagnostic from its initial value.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().fold(0.0f64, |m, e| m.max((e - e0).abs()))
    }

    /// Maximum drift of each momentum column from its initial value.
    pub fn max_momentum_drift(&self) -> Vec<f64> {
        if self.momenta.is_empty() {
            return Vec::new();
        }
        let first = &self.momenta[0];
        let mut drift = vec![0.0f64; first.len()];
        for row in &self.momenta {
            for (d, (p, p0)) in drift.iter_mut().zip(row.iter().zip(first.iter())) {
                *d = d.max((p - p0).abs());
            }
        }
        drift
    }
}

fn wrap_dynamics_failure<T>(r: Result<T>, t: f64) -> Result<T> {
    r.map_err(|e| Error::DynamicsFailure {
        t,
        source: Box::new(e),
    })
}

/// Fixed-step plan covering `[0, T]` exactly: the number of steps closest
/// to `T / h` and the actual uniform step `T / steps`.
pub fn plan_steps(h: f64, t_final: f64) -> (usize, f64) {
    if t_final == 0.0 {
        return (0, h);
    }
    let steps = (t_final / h).round().max(1.0) as usize;
    (steps, t_final / steps as f64)
}

/// Integrate the constrained dynamics from `s0` with fixed step `h` up to
/// time `T`, filling energy and constraint-residual diagnostics at every
/// sample. `T = 0` yields the single sample `s0`.
pub fn integrate(
    sys: &ConstrainedSystem,
    s0: &CState,
    h: f64,
    t_final: f64,
    method: Method,
) -> Result<Trajectory> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    if t_final < 0.0 || !t_final.is_finite() {
        return Err(Error::InvalidConfig("final time must be nonnegative".into()));
    }
    let (steps, h) = plan_steps(h, t_final);
    let m = sys.constraint_rank();
    if s0.v.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: s0.v.len(),
        });
    }

    let rhs = |x: &DVector<f64>, v: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let state = CState::from_vector(ChartPoint::from_vector(x.clone())?, v.clone())?;
        let data = state_data(sys, &state)?;
        let mass = mass_from_data(sys, &data);
        let b = rhs_from_data(sys, &data);
        let f = linalg::solve(&mass, &b, "constrained mass matrix")
            .map_err(|_| Error::RegularityFailure)?;
        Ok((data.u, f))
    };

    let mut x = s0.x.coords().clone();
    let mut v = s0.v.clone();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
        momenta: Vec::new(),
        momentum_labels: Vec::new(),
        constraint_residual: Vec::with_capacity(steps + 1),
    };

    for step in 0..=steps {
        let t = step as f64 * h;
        let state = CState::from_vector(ChartPoint::from_vector(x.clone())?, v.clone())?;
        traj.times.push(t);
        traj.energy.push(wrap_dynamics_failure(energy(sys, &state), t)?);
        traj.constraint_residual.push(0.0);
        traj.states.push(state);
        if step == steps {
            break;
        }

        match method {
            Method::Euler => {
                let (dx, dv) = wrap_dynamics_failure(rhs(&x, &v), t)?;
                x += h * dx;
                v += h * dv;
            }
            Method::Rk4 => {
                let (k1x, k1v) = wrap_dynamics_failure(rhs(&x, &v), t)?;
                let (k2x, k2v) =
                    wrap_dynamics_failure(rhs(&(&x + 0.5 * h * &k1x), &(&v + 0.5 * h * &k1v)), t)?;
                let (k3x, k3v) =
                    wrap_dynamics_failure(rhs(&(&x + 0.5 * h * &k2x), &(&v + 0.5 * h * &k2v)), t)?;
                let (k4x, k4v) =
                    wrap_dynamics_failure(rhs(&(&x + h * &k3x), &(&v + h * &k3v)), t)?;
                x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                v += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            }
        }
        if x.iter().any(|c| !c.is_finite()) || v.iter().any(|c| !c.is_finite()) {
            return Err(Error::DynamicsFailure {
                t,
                source: Box::new(Error::NonFinite {
                    context: "integration state",
                }),
            });
        }
    }
    Ok(traj)
}

/// A trajectory of the multiplier oracle in natural coordinates `(x, u)`.
/// Unlike the quasi-velocity integration this drifts off the constraint
/// submanifold; `constraint_residual` records `max |v^a|` per sample.
#[derive(Clone, Debug)]
pub struct NaturalTrajectory {
    pub times: Vec<f64>,
    pub points: Vec<ChartPoint>,
    pub velocities: Vec<NaturalVelocity>,
}

impl NaturalTrajectory {
    /// Project each sample onto C: quasi-velocities of the adapted frame
    /// with the transverse block dropped. Returns the states and the
    /// largest dropped component per sample.
    pub fn project(&self, sys: &ConstrainedSystem) -> Result<(Vec<CState>, Vec<f64>)> {
        let m = sys.constraint_rank();
        let n = sys.dim();
        let mut states = Vec::with_capacity(self.points.len());
        let mut residuals = Vec::with_capacity(self.points.len());
        for (x, u) in self.points.iter().zip(&self.velocities) {
            let v = sys.adapted.frame.quasi_from_natural(x, u)?;
            let mut res = 0.0f64;
            for a in m..n {
                res = res.max(v.components()[a].abs());
            }
            residuals.push(res);
            states.push(CState::from_vector(
                x.clone(),
                v.components().rows(0, m).into_owned(),
            )?);
        }
        Ok((states, residuals))
    }
}

/// Integrate the multiplier oracle in natural coordinates.
pub fn integrate_natural_oracle(
    sys: &ConstrainedSystem,
    x0: &ChartPoint,
    u0: &NaturalVelocity,
    h: f64,
    t_final: f64,
    method: Method,
) -> Result<NaturalTrajectory> {
    if h <= 0.0 || t_final < 0.0 {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    let (steps, h) = plan_steps(h, t_final);
    let rhs = |x: &DVector<f64>, u: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let xp = ChartPoint::from_vector(x.clone())?;
        let uv = NaturalVelocity::from_vector(u.clone())?;
        let (a, _) = multiplier_oracle_natural(sys, &xp, &uv)?;
        Ok((u.clone(), a))
    };
    let mut x = x0.coords().clone();
    let mut u = u0.components().clone();
    let mut traj = NaturalTrajectory {
        times: Vec::with_capacity(steps + 1),
        points: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
    };
    for step in 0..=steps {
        let t = step as f64 * h;
        traj.times.push(t);
        traj.points.push(ChartPoint::from_vector(x.clone())?);
        traj.velocities.push(NaturalVelocity::from_vector(u.clone())?);
        if step == steps {
            break;
        }
        match method {
            Method::Euler => {
                let (dx, du) = wrap_dynamics_failure(rhs(&x, &u), t)?;
                x += h * dx;
                u += h * du;
            }
            Method::Rk4 => {
                let (k1x, k1u) = wrap_dynamics_failure(rhs(&x, &u), t)?;
                let (k2x, k2u) =
                    wrap_dynamics_failure(rhs(&(&x + 0.5 * h * &k1x), &(&u + 0.5 * h * &k1u)), t)?;
                let (k3x, k3u) =
                    wrap_dynamics_failure(rhs(&(&x + 0.5 * h * &k2x), &(&u + 0.5 * h * &k2u)), t)?;
                let (k4x, k4u) =
                    wrap_dynamics_failure(rhs(&(&x + h * &k3x), &(&u + h * &k3u)), t)?;
                x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                u += (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            }
        }
    }
    Ok(traj)
}
