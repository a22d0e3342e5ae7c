//! Symmetry reduction of invariant constrained systems.
//!
//! The group action enters through its fundamental vector fields and
//! structure constants; the user supplies an invariant adapted frame split
//! into four blocks
//!
//! ```text
//! {X_rho}   vertical fields inside D      (a basis of S = D n V)
//! {X_kappa} transverse fields inside D
//! {X_c}     vertical fields outside D
//! {X_k}     transverse fields outside D
//! ```
//!
//! so that `{X_rho, X_kappa}` is the D-basis and `{X_rho, X_c}` spans the
//! vertical distribution. The quotient is realized in a product
//! trivialization: designated chart coordinates are group coordinates, the
//! rest are base coordinates, and the section sits at fixed group
//! coordinates. Invariance is verified numerically, never assumed.
//!
//! The reduced equations on C/G are assembled from the coefficient arrays
//! Upsilon (connection coefficients on the vertical part), C-bar (structure
//! constants expressed in the invariant vertical frame), K (curvature
//! components), and the base structure functions; each of these can be
//! cross-validated against blocks of the full-frame structure functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frame::{bracket, AdaptedFrame, FieldJet, Frame, VectorField};
use crate::hamel::{constrained_dynamics, energy, plan_steps, CState, ConstrainedSystem, Method};
use crate::jet::{eval_jet, ChartPoint, Jet2, NaturalVelocity};
use crate::linalg;
use crate::rng::SplitMix64;
use crate::tensor::Tensor3;

/// Consistency tolerance for the least-squares expansion of vertical frame
/// fields in the fundamental fields.
const VERTICAL_CONSISTENCY_TOL: f64 = 1e-10;

/// Tolerance for the adaptation identity: brackets with vertical fields
/// must have no transverse component.
const ADAPTATION_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Group model
// ---------------------------------------------------------------------------

/// A Lie group action presented infinitesimally: fundamental vector fields
/// on the configuration chart and the structure constants of the algebra.
///
/// Conventions: `constants.get(t, r, s) = C^t_{rs}` with algebra bracket
/// `[E_r, E_s] = C^t_{rs} E_t`, so the fundamental fields satisfy
/// `[E~_r, E~_s] = -C^t_{rs} E~_t`.
#[derive(Clone, Debug)]
pub struct GroupModel {
    dim: usize,
    constants: Tensor3,
    fundamental: Vec<VectorField>,
}

impl GroupModel {
    pub fn new(constants: Tensor3, fundamental: Vec<VectorField>) -> Result<Self> {
        let k = fundamental.len();
        if k == 0 {
            return Err(Error::InvalidConfig("group must have positive dimension".into()));
        }
        if constants.dims() != (k, k, k) {
            return Err(Error::InvalidConfig(
                "structure constants must be a k x k x k array".into(),
            ));
        }
        // antisymmetry in the lower pair
        for t in 0..k {
            for r in 0..k {
                for s in 0..k {
                    if (constants.get(t, r, s) + constants.get(t, s, r)).abs() > 1e-12 {
                        return Err(Error::InvalidConfig(
                            "structure constants must be antisymmetric in the lower indices".into(),
                        ));
                    }
                }
            }
        }
        // Jacobi identity
        for r in 0..k {
            for s in 0..k {
                for u in 0..k {
                    for t in 0..k {
                        let mut total = 0.0;
                        for w in 0..k {
                            total += constants.get(w, r, s) * constants.get(t, w, u)
                                + constants.get(w, s, u) * constants.get(t, w, r)
                                + constants.get(w, u, r) * constants.get(t, w, s);
                        }
                        if total.abs() > 1e-12 {
                            return Err(Error::InvalidConfig(
                                "structure constants violate the Jacobi identity".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(Self {
            dim: k,
            constants,
            fundamental,
        })
    }

    /// An abelian group: all structure constants vanish.
    pub fn abelian(fundamental: Vec<VectorField>) -> Result<Self> {
        let k = fundamental.len();
        Self::new(Tensor3::zeros(k, k, k), fundamental)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &Tensor3 {
        &self.constants
    }

    pub fn fundamental(&self) -> &[VectorField] {
        &self.fundamental
    }
}

// ---------------------------------------------------------------------------
// Invariant frame split
// ---------------------------------------------------------------------------

/// Assignment of the adapted-frame indices to the four blocks.
/// Indices refer to positions in the system's own frame ordering;
/// `rho` and `kappa` must partition the D-indices `0..m`, `c` and `k`
/// the transverse indices `m..n`.
#[derive(Clone, Debug, Default)]
pub struct SplitBlocks {
    pub rho: Vec<usize>,
    pub kappa: Vec<usize>,
    pub c: Vec<usize>,
    pub k: Vec<usize>,
}

/// An invariant adapted frame split over a product trivialization
/// Q = (base chart) x (group chart), with the section at fixed group
/// coordinates.
#[derive(Clone, Debug)]
pub struct InvariantFrameSplit {
    sys: ConstrainedSystem,
    group: GroupModel,
    blocks: SplitBlocks,
    group_coords: Vec<usize>,
    base_coords: Vec<usize>,
    section: Vec<f64>,
    /// The system rebuilt over the frame reordered as [rho, kappa, c, k].
    split_sys: ConstrainedSystem,
    /// `order[p]` = original frame index at reordered position p.
    order: Vec<usize>,
}

impl InvariantFrameSplit {
    pub fn new(
        sys: ConstrainedSystem,
        group: GroupModel,
        blocks: SplitBlocks,
        group_coords: Vec<usize>,
        section: Vec<f64>,
    ) -> Result<Self> {
        let n = sys.dim();
        let m = sys.constraint_rank();
        let kdim = group.dim();

        let check_partition = |parts: [&[usize]; 2], lo: usize, hi: usize, what: &str| -> Result<()> {
            let mut seen: Vec<usize> = parts.concat();
            seen.sort_unstable();
            let expect: Vec<usize> = (lo..hi).collect();
            if seen != expect {
                return Err(Error::InvalidConfig(format!(
                    "{what} blocks must partition indices {lo}..{hi}"
                )));
            }
            Ok(())
        };
        check_partition([&blocks.rho, &blocks.kappa], 0, m, "rho/kappa")?;
        check_partition([&blocks.c, &blocks.k], m, n, "c/k")?;
        if blocks.rho.len() + blocks.c.len() != kdim {
            return Err(Error::InvalidConfig(format!(
                "|rho| + |c| = {} must equal the group dimension {kdim}",
                blocks.rho.len() + blocks.c.len()
            )));
        }
        if group_coords.len() != kdim {
            return Err(Error::InvalidConfig(
                "one group coordinate per group dimension is required".into(),
            ));
        }
        let mut sorted = group_coords.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != kdim || group_coords.iter().any(|&g| g >= n) {
            return Err(Error::InvalidConfig("group coordinates must be distinct chart indices".into()));
        }
        if section.len() != kdim || section.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "section values must be finite, one per group coordinate".into(),
            ));
        }
        if group.fundamental().iter().any(|f| f.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: group.fundamental()[0].dim(),
            });
        }

        let base_coords: Vec<usize> = (0..n).filter(|j| !group_coords.contains(j)).collect();
        let order: Vec<usize> = blocks
            .rho
            .iter()
            .chain(&blocks.kappa)
            .chain(&blocks.c)
            .chain(&blocks.k)
            .copied()
            .collect();
        let fields: Vec<VectorField> = order
            .iter()
            .map(|&i| sys.adapted().frame.field(i).clone())
            .collect();
        let split_frame = Frame::new(fields, sys.adapted().frame.domain().to_string())?;
        let split_sys = ConstrainedSystem::new(
            format!("{} (split order)", sys.name()),
            sys.lagrangian().clone(),
            AdaptedFrame::new(split_frame, m)?,
        )?;

        Ok(Self {
            sys,
            group,
            blocks,
            group_coords,
            base_coords,
            section,
            split_sys,
            order,
        })
    }

    pub fn system(&self) -> &ConstrainedSystem {
        &self.sys
    }

    /// The system with frame reordered as [rho, kappa, c, k].
    pub fn split_system(&self) -> &ConstrainedSystem {
        &self.split_sys
    }

    pub fn group(&self) -> &GroupModel {
        &self.group
    }

    pub fn blocks(&self) -> &SplitBlocks {
        &self.blocks
    }

    pub fn n_rho(&self) -> usize {
        self.blocks.rho.len()
    }

    pub fn n_kappa(&self) -> usize {
        self.blocks.kappa.len()
    }

    pub fn n_c(&self) -> usize {
        self.blocks.c.len()
    }

    pub fn n_k(&self) -> usize {
        self.blocks.k.len()
    }

    /// Number of transverse directions |kappa| + |k| (the base dimension).
    pub fn n_transverse(&self) -> usize {
        self.n_kappa() + self.n_k()
    }

    pub fn group_coords(&self) -> &[usize] {
        &self.group_coords
    }

    pub fn base_coords(&self) -> &[usize] {
        &self.base_coords
    }

    /// The rho-block fields in the original frame order, with their indices;
    /// their vertical lifts of L are the nonholonomic momentum components.
    pub fn rho_fields(&self) -> Vec<(usize, VectorField)> {
        self.blocks
            .rho
            .iter()
            .map(|&i| (i, self.sys.adapted().frame.field(i).clone()))
            .collect()
    }

    /// Reordered-frame position of vertical index r in [rho..., c...].
    fn vert_pos(&self, r: usize) -> usize {
        let nrho = self.n_rho();
        if r < nrho {
            r
        } else {
            self.sys.constraint_rank() + (r - nrho)
        }
    }

    /// Reordered-frame position of transverse index i in [kappa..., k...].
    fn transv_pos(&self, i: usize) -> usize {
        let nkappa = self.n_kappa();
        if i < nkappa {
            self.n_rho() + i
        } else {
            self.sys.constraint_rank() + self.n_c() + (i - nkappa)
        }
    }

    /// Map a constrained state of the original system into the split frame
    /// ordering.
    pub fn to_split_state(&self, s: &CState) -> Result<CState> {
        let m = self.sys.constraint_rank();
        if s.v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: s.v.len(),
            });
        }
        let v = DVector::from_fn(m, |p, _| s.v[self.order[p]]);
        CState::from_vector(s.x.clone(), v)
    }

    /// Embed base coordinates at the section (group coordinates fixed).
    pub fn embed(&self, base: &DVector<f64>) -> Result<ChartPoint> {
        if base.len() != self.base_coords.len() {
            return Err(Error::DimensionMismatch {
                expected: self.base_coords.len(),
                actual: base.len(),
            });
        }
        let mut coords = DVector::zeros(self.sys.dim());
        for (g, &idx) in self.group_coords.iter().enumerate() {
            coords[idx] = self.section[g];
        }
        for (b, &idx) in self.base_coords.iter().enumerate() {
            coords[idx] = base[b];
        }
        ChartPoint::from_vector(coords)
    }

    /// Vertical coefficient matrix `A[(r, s)]` with `X_r = A[(r,s)] E~_s`
    /// for the vertical fields in [rho..., c...] order, together with its
    /// coordinate derivatives `dA[j][(r, s)] = dA[(r,s)]/dx^j` and the
    /// worst expansion residual.
    pub fn vertical_coefficients(
        &self,
        x: &ChartPoint,
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>, f64)> {
        let n = self.sys.dim();
        let kdim = self.group.dim();
        let fund: Vec<FieldJet> = self
            .group
            .fundamental()
            .iter()
            .map(|f| f.eval(x))
            .collect::<Result<_>>()?;
        let emat = DMatrix::from_fn(n, kdim, |j, s| fund[s].value[j]);
        let frame = &self.split_sys.adapted().frame;
        let mut amat = DMatrix::zeros(kdim, kdim);
        let mut damat = vec![DMatrix::zeros(kdim, kdim); n];
        let mut worst = 0.0f64;
        for r in 0..kdim {
            let jet = frame.field(self.vert_pos(r)).eval(x)?;
            let (row, res) = linalg::least_squares(&emat, &jet.value, "vertical coefficients")?;
            worst = worst.max(res);
            for s in 0..kdim {
                amat[(r, s)] = row[s];
            }
            // d/dx^j of the expansion: E dA_row = dX_r/dx^j - A[(r,s)] dE_s/dx^j
            for j in 0..n {
                let mut rhs = jet.jacobian.column(j).into_owned();
                for s in 0..kdim {
                    rhs -= row[s] * fund[s].jacobian.column(j);
                }
                let (drow, _) = linalg::least_squares(&emat, &rhs, "vertical coefficient derivatives")?;
                for s in 0..kdim {
                    damat[j][(r, s)] = drow[s];
                }
            }
        }
        Ok((amat, damat, worst))
    }

    /// Project a constrained state of the original system to the reduced
    /// chart: drop group coordinates, keep `(v^rho, v^kappa)` unchanged.
    pub fn project_state(&self, s: &CState) -> Result<ReducedState> {
        let m = self.sys.constraint_rank();
        if s.v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: s.v.len(),
            });
        }
        let base = DVector::from_fn(self.base_coords.len(), |b, _| {
            s.x.coords()[self.base_coords[b]]
        });
        let v_rho = DVector::from_fn(self.n_rho(), |i, _| s.v[self.blocks.rho[i]]);
        let v_kappa = DVector::from_fn(self.n_kappa(), |i, _| s.v[self.blocks.kappa[i]]);
        Ok(ReducedState {
            base,
            v_rho,
            v_kappa,
        })
    }
}

/// A point of C/G in the product trivialization: base coordinates plus the
/// invariant quasi-velocities `(v^rho, v^kappa)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedState {
    pub base: DVector<f64>,
    pub v_rho: DVector<f64>,
    pub v_kappa: DVector<f64>,
}

impl ReducedState {
    pub fn new(base: Vec<f64>, v_rho: Vec<f64>, v_kappa: Vec<f64>) -> Self {
        Self {
            base: DVector::from_vec(base),
            v_rho: DVector::from_vec(v_rho),
            v_kappa: DVector::from_vec(v_kappa),
        }
    }

    /// Largest componentwise gap between two reduced states.
    pub fn distance(&self, other: &ReducedState) -> f64 {
        let mut d = 0.0f64;
        d = d.max((&self.base - &other.base).amax());
        if !self.v_rho.is_empty() {
            d = d.max((&self.v_rho - &other.v_rho).amax());
        }
        if !self.v_kappa.is_empty() {
            d = d.max((&self.v_kappa - &other.v_kappa).amax());
        }
        d
    }
}

/// The coefficient arrays of the reduced equations.
///
/// Index conventions: `upsilon.get(i, r, s)` is the connection coefficient
/// with transverse index i and vertical indices (r lower, s upper);
/// `cbar.get(t, r, s)` the frame-expressed structure constant with upper
/// index t; `curvature.get(r, i, j)` the curvature component `K^r_{IJ}`;
/// `base_structure.get(i, j, k)` the base object of anholonomity `R^K_{IJ}`.
#[derive(Clone, Debug)]
pub struct ReducedCoefficients {
    pub upsilon: Tensor3,
    pub cbar: Tensor3,
    pub curvature: Tensor3,
    pub base_structure: Tensor3,
}

/// Compute the reduced coefficient arrays at a chart point, cross-checking
/// the adaptation identity (brackets with vertical fields have no
/// transverse component) before trusting the split.
pub fn reduced_coefficients(split: &InvariantFrameSplit, x: &ChartPoint) -> Result<ReducedCoefficients> {
    let n = split.system().dim();
    let kdim = split.group().dim();
    let nt = split.n_transverse();

    let (amat, damat, res) = split.vertical_coefficients(x)?;
    if res > VERTICAL_CONSISTENCY_TOL {
        return Err(Error::InconsistentSplit(format!(
            "vertical frame fields are not in the span of the fundamental fields (residual {res:e})"
        )));
    }
    let ainv = linalg::inverse(&amat, "vertical coefficient matrix")?;

    let frame = &split.split_system().adapted().frame;
    let rfull = frame.structure_functions(x)?;

    // adaptation identity: R^I_{ir} = 0
    for i in 0..n {
        for r in 0..kdim {
            for t in 0..nt {
                let val = rfull.get(i, split.vert_pos(r), split.transv_pos(t));
                if val.abs() > ADAPTATION_TOL {
                    return Err(Error::InconsistentSplit(format!(
                        "bracket with a vertical field has transverse component {val:e}; \
                         the frame is not invariant or not adapted"
                    )));
                }
            }
        }
    }

    // Upsilon_{Ir}^s = (X_I(A) A^-1)[(r, s)]
    let mut upsilon = Tensor3::zeros(nt, kdim, kdim);
    for t in 0..nt {
        let xi = frame.field(split.transv_pos(t)).components(x)?;
        let mut dia = DMatrix::zeros(kdim, kdim);
        for j in 0..n {
            dia += xi[j] * &damat[j];
        }
        let prod = &dia * &ainv;
        for r in 0..kdim {
            for s in 0..kdim {
                upsilon.set(t, r, s, prod[(r, s)]);
            }
        }
    }

    // Cbar^t_{rs} = Ainv[(w, t)] C^w_{uv} A[(r, u)] A[(s, v)]
    let consts = split.group().constants();
    let mut cbar = Tensor3::zeros(kdim, kdim, kdim);
    for t in 0..kdim {
        for r in 0..kdim {
            for s in 0..kdim {
                let mut total = 0.0;
                for w in 0..kdim {
                    for u in 0..kdim {
                        for v in 0..kdim {
                            total += ainv[(w, t)] * consts.get(w, u, v) * amat[(r, u)] * amat[(s, v)];
                        }
                    }
                }
                cbar.set(t, r, s, total);
            }
        }
    }

    // K^r_{IJ} = -R^r_{IJ}; base structure functions from the transverse block
    let mut curvature = Tensor3::zeros(kdim, nt, nt);
    let mut base_structure = Tensor3::zeros(nt, nt, nt);
    for i in 0..nt {
        for j in 0..nt {
            for r in 0..kdim {
                curvature.set(
                    r,
                    i,
                    j,
                    -rfull.get(split.transv_pos(i), split.transv_pos(j), split.vert_pos(r)),
                );
            }
            for kk in 0..nt {
                base_structure.set(
                    i,
                    j,
                    kk,
                    rfull.get(split.transv_pos(i), split.transv_pos(j), split.transv_pos(kk)),
                );
            }
        }
    }

    Ok(ReducedCoefficients {
        upsilon,
        cbar,
        curvature,
        base_structure,
    })
}

/// Cross-validation residuals for the coefficient arrays, as used by the
/// verification harness: the worst gap between the dedicated formulas for
/// Upsilon and Cbar and the matching blocks of the full-frame structure
/// functions (the curvature block is extracted from those structure
/// functions directly, so its gap is zero by construction), and the worst
/// violation of the adaptation identity `R^I_{ir} = 0`.
pub fn coefficient_crossval(split: &InvariantFrameSplit, x: &ChartPoint) -> Result<(f64, f64)> {
    let n = split.system().dim();
    let kdim = split.group().dim();
    let nt = split.n_transverse();
    let (amat, damat, res) = split.vertical_coefficients(x)?;
    let ainv = linalg::inverse(&amat, "vertical coefficient matrix")?;
    let frame = &split.split_system().adapted().frame;
    let rfull = frame.structure_functions(x)?;

    let mut adaptation = res;
    for i in 0..n {
        for r in 0..kdim {
            for t in 0..nt {
                adaptation = adaptation
                    .max(rfull.get(i, split.vert_pos(r), split.transv_pos(t)).abs());
            }
        }
    }

    let mut gap = 0.0f64;
    // Upsilon_{Ir}^s vs R^s_{Ir}
    for t in 0..nt {
        let xi = frame.field(split.transv_pos(t)).components(x)?;
        let mut dia = DMatrix::zeros(kdim, kdim);
        for j in 0..n {
            dia += xi[j] * &damat[j];
        }
        let ups = &dia * &ainv;
        for r in 0..kdim {
            for s in 0..kdim {
                let block = rfull.get(split.transv_pos(t), split.vert_pos(r), split.vert_pos(s));
                gap = gap.max((ups[(r, s)] - block).abs());
            }
        }
    }
    // Cbar^t_{rs} vs R^t_{rs}
    let consts = split.group().constants();
    for t in 0..kdim {
        for r in 0..kdim {
            for s in 0..kdim {
                let mut total = 0.0;
                for w in 0..kdim {
                    for u in 0..kdim {
                        for v in 0..kdim {
                            total += ainv[(w, t)] * consts.get(w, u, v) * amat[(r, u)] * amat[(s, v)];
                        }
                    }
                }
                let block = rfull.get(split.vert_pos(r), split.vert_pos(s), split.vert_pos(t));
                gap = gap.max((total - block).abs());
            }
        }
    }
    Ok((gap, adaptation))
}

// ---------------------------------------------------------------------------
// Invariance verification
// ---------------------------------------------------------------------------

/// One row of an invariance report.
#[derive(Clone, Debug)]
pub struct InvarianceCheck {
    pub name: &'static str,
    pub samples: usize,
    pub max_residual: f64,
    pub tol: f64,
}

impl InvarianceCheck {
    pub fn pass(&self) -> bool {
        self.max_residual <= self.tol
    }
}

/// Numerical invariance report for a frame split.
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub checks: Vec<InvarianceCheck>,
}

impl InvarianceReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(InvarianceCheck::pass)
    }
}

/// Verify, at the given sample points, that the group model is coherent
/// (fundamental bracket relation), that the frame and the Lagrangian are
/// invariant, and that the dynamics itself is invariant (directional
/// derivative of the quasi-accelerations along each lifted generator,
/// computed by central differences along the lifted flow with step 1e-5).
///
/// A failed check is a report outcome, not an error; errors signal only
/// evaluator failures.
pub fn verify_invariance(
    split: &InvariantFrameSplit,
    samples: &[ChartPoint],
    tol: f64,
    seed: u64,
) -> Result<InvarianceReport> {
    let sys = split.split_system();
    let n = sys.dim();
    let m = sys.constraint_rank();
    let group = split.group();
    let kdim = group.dim();
    let mut rng = SplitMix64::new(seed);

    let mut bracket_res = 0.0f64;
    let mut frame_res = 0.0f64;
    let mut lagr_res = 0.0f64;
    let mut dyn_res = 0.0f64;

    for x in samples {
        // fundamental bracket relation [E~_r, E~_s] + C^t_{rs} E~_t = 0
        let fund: Vec<FieldJet> = group
            .fundamental()
            .iter()
            .map(|f| f.eval(x))
            .collect::<Result<_>>()?;
        for r in 0..kdim {
            for s in (r + 1)..kdim {
                let mut b = &fund[s].jacobian * &fund[r].value - &fund[r].jacobian * &fund[s].value;
                for t in 0..kdim {
                    b += group.constants().get(t, r, s) * &fund[t].value;
                }
                bracket_res = bracket_res.max(b.amax());
            }
        }

        // frame invariance [E~_r, X_i] = 0
        for ef in group.fundamental() {
            for i in 0..n {
                let b = bracket(ef, sys.adapted().frame.field(i), x)?;
                frame_res = frame_res.max(b.amax());
            }
        }

        // Lagrangian invariance E~_r^C(L) = 0 at random fibre points
        for _ in 0..3 {
            let u = NaturalVelocity::new(rng.uniform_vec(n, -2.0, 2.0))?;
            let jet = eval_jet(sys.lagrangian(), x, &u)?;
            for f in &fund {
                let lifted = f.value.dot(&jet.d_x) + (&f.jacobian * u.components()).dot(&jet.d_u);
                lagr_res = lagr_res.max(lifted.abs());
            }
        }

        // dynamics invariance: d f^alpha / d(E~_r^C) = 0 along the lifted flow
        let v = DVector::from_vec(rng.uniform_vec(m, -2.0, 2.0));
        let state = CState::from_vector(x.clone(), v)?;
        let u = sys.natural_velocity(&state)?;
        let eps = 1e-5;
        for f in &fund {
            let mut fs = [DVector::zeros(m), DVector::zeros(m)];
            for (slot, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                let xs = ChartPoint::from_vector(x.coords() + sign * eps * &f.value)?;
                let us = NaturalVelocity::from_vector(
                    u.components() + sign * eps * (&f.jacobian * u.components()),
                )?;
                let vfull = sys.adapted().frame.quasi_from_natural(&xs, &us)?;
                let state_s =
                    CState::from_vector(xs, vfull.components().rows(0, m).into_owned())?;
                fs[slot] = constrained_dynamics(sys, &state_s)?;
            }
            let deriv = (&fs[0] - &fs[1]) / (2.0 * eps);
            dyn_res = dyn_res.max(deriv.amax());
        }
    }

    Ok(InvarianceReport {
        checks: vec![
            InvarianceCheck {
                name: "fundamental-bracket",
                samples: samples.len(),
                max_residual: bracket_res,
                tol,
            },
            InvarianceCheck {
                name: "frame-invariance",
                samples: samples.len(),
                max_residual: frame_res,
                tol,
            },
            InvarianceCheck {
                name: "lagrangian-invariance",
                samples: samples.len(),
                max_residual: lagr_res,
                tol,
            },
            InvarianceCheck {
                name: "dynamics-invariance",
                samples: samples.len(),
                max_residual: dyn_res,
                tol,
            },
        ],
    })
}

// ---------------------------------------------------------------------------
// Reduced dynamics
// ---------------------------------------------------------------------------

struct SectionData {
    x_full: ChartPoint,
    jets: Vec<FieldJet>,
    u: DVector<f64>,
    lagr: Jet2,
    /// Jacobian transport matrix `sum_gamma v^gamma dX_gamma/dx` over D.
    jv: DMatrix<f64>,
    v_split: DVector<f64>,
}

fn section_data(split: &InvariantFrameSplit, rs: &ReducedState) -> Result<SectionData> {
    let sys = split.split_system();
    let m = sys.constraint_rank();
    if rs.v_rho.len() != split.n_rho() || rs.v_kappa.len() != split.n_kappa() {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: rs.v_rho.len() + rs.v_kappa.len(),
        });
    }
    let x_full = split.embed(&rs.base)?;
    let jets = sys.adapted().frame.eval_all(&x_full)?;
    let n = sys.dim();
    let mut v_split = DVector::zeros(m);
    for i in 0..split.n_rho() {
        v_split[i] = rs.v_rho[i];
    }
    for i in 0..split.n_kappa() {
        v_split[split.n_rho() + i] = rs.v_kappa[i];
    }
    let mut u = DVector::zeros(n);
    let mut jv = DMatrix::zeros(n, n);
    for alpha in 0..m {
        u.axpy(v_split[alpha], &jets[alpha].value, 1.0);
        jv += v_split[alpha] * &jets[alpha].jacobian;
    }
    let uvel = NaturalVelocity::from_vector(u.clone())?;
    let lagr = eval_jet(sys.lagrangian(), &x_full, &uvel)?;
    Ok(SectionData {
        x_full,
        jets,
        u,
        lagr,
        jv,
        v_split,
    })
}

/// Gradient (over all chart coordinates) of the momentum function
/// `P_alpha = X_alpha . dL/du` in the (x, v)-representation.
fn momentum_gradient(data: &SectionData, pos: usize) -> DVector<f64> {
    let jet = &data.jets[pos];
    jet.jacobian.transpose() * &data.lagr.d_u
        + data.lagr.d_ux.transpose() * &jet.value
        + data.jv.transpose() * (&data.lagr.d_uu * &jet.value)
}

/// Right-hand sides of the reduced equations on C/G at a reduced state:
/// the momentum-block and transverse-block quasi-accelerations
/// `(f^rho, f^kappa)`.
///
/// The momentum rows implement
/// `Gamma(dl_c/dv^rho) = (Upsilon_{kappa rho}^r v^kappa - Cbar^r_{rho sigma} v^sigma) dl/dv^r`
/// and the transverse rows the matching equation with base-frame structure
/// terms, curvature forcing, and the transverse momenta `dl/dv^k`; all
/// derivatives of the reduced Lagrangian are taken along the section with
/// the `v^a = 0` directions extended before differentiation.
pub fn reduced_rhs(split: &InvariantFrameSplit, rs: &ReducedState) -> Result<(DVector<f64>, DVector<f64>)> {
    let sys = split.split_system();
    let m = sys.constraint_rank();
    let nrho = split.n_rho();
    let nkappa = split.n_kappa();
    let nk = split.n_k();
    let kdim = split.group().dim();
    let data = section_data(split, rs)?;
    let coeffs = reduced_coefficients(split, &data.x_full)?;

    // reduced mass matrix: D-block of the constrained mass matrix
    let mut mass = DMatrix::zeros(m, m);
    for a in 0..m {
        let ha = &data.lagr.d_uu * &data.jets[a].value;
        for b in 0..m {
            mass[(a, b)] = ha.dot(&data.jets[b].value);
        }
    }
    for a in 0..m {
        for b in (a + 1)..m {
            let avg = 0.5 * (mass[(a, b)] + mass[(b, a)]);
            mass[(a, b)] = avg;
            mass[(b, a)] = avg;
        }
    }

    // momenta along the vertical fields, the kappa-fields, and the k-fields
    let p_vert: Vec<f64> = (0..kdim)
        .map(|r| data.jets[split.vert_pos(r)].value.dot(&data.lagr.d_u))
        .collect();
    let p_kappa: Vec<f64> = (0..nkappa)
        .map(|l| data.jets[nrho + l].value.dot(&data.lagr.d_u))
        .collect();
    let p_k: Vec<f64> = (0..nk)
        .map(|kk| data.jets[split.transv_pos(nkappa + kk)].value.dot(&data.lagr.d_u))
        .collect();

    // base velocity: xdot^j = v^kappa X_kappa^j on base coordinates only
    let n = sys.dim();
    let mut xdot_base = DVector::zeros(n);
    for &j in split.base_coords() {
        for l in 0..nkappa {
            xdot_base[j] += rs.v_kappa[l] * data.jets[nrho + l].value[j];
        }
    }

    // base-directional derivative of l_c at fixed quasi-velocities
    let g_lc = &data.lagr.d_x + data.jv.transpose() * &data.lagr.d_u;

    let mut rhs = DVector::zeros(m);
    for alpha in 0..m {
        let drift = momentum_gradient(&data, alpha).dot(&xdot_base);
        rhs[alpha] = -drift;
    }

    // momentum rows
    for rho in 0..nrho {
        let mut force = 0.0;
        for s in 0..kdim {
            let mut coeff = 0.0;
            for l in 0..nkappa {
                coeff += coeffs.upsilon.get(l, rho, s) * rs.v_kappa[l];
            }
            for sigma in 0..nrho {
                coeff -= coeffs.cbar.get(s, rho, sigma) * rs.v_rho[sigma];
            }
            force += coeff * p_vert[s];
        }
        rhs[rho] += force;
    }

    // transverse rows
    for lam in 0..nkappa {
        let alpha = nrho + lam;
        let mut force = 0.0;
        for &j in split.base_coords() {
            force += data.jets[alpha].value[j] * g_lc[j];
        }
        for mu in 0..nkappa {
            for lp in 0..nkappa {
                force -= coeffs.base_structure.get(lam, mu, lp) * rs.v_kappa[mu] * p_kappa[lp];
            }
            for kk in 0..nk {
                force -= coeffs.base_structure.get(lam, mu, nkappa + kk) * rs.v_kappa[mu] * p_k[kk];
            }
            for r in 0..kdim {
                force += coeffs.curvature.get(r, lam, mu) * rs.v_kappa[mu] * p_vert[r];
            }
        }
        for r in 0..kdim {
            for sigma in 0..nrho {
                force -= coeffs.upsilon.get(lam, sigma, r) * rs.v_rho[sigma] * p_vert[r];
            }
        }
        rhs[alpha] += force;
    }

    let f = linalg::solve(&mass, &rhs, "reduced mass matrix").map_err(|_| Error::RegularityFailure)?;
    Ok((
        f.rows(0, nrho).into_owned(),
        f.rows(nrho, nkappa).into_owned(),
    ))
}

/// The nonholonomic momentum components `P_rho = X_rho^V(L)` at a full
/// constrained state, together with the pointwise residual of the momentum
/// equation in the moving basis,
/// `Gamma(P_rho) - (Upsilon_{I rho}^s v^I - Cbar^s_{rho t} v^t) P_s`,
/// which vanishes identically along the dynamics.
pub fn momentum_and_residual(split: &InvariantFrameSplit, s: &CState) -> Result<(DVector<f64>, DVector<f64>)> {
    let sys = split.split_system();
    let s_split = split.to_split_state(s)?;
    let nrho = split.n_rho();
    let nkappa = split.n_kappa();
    let kdim = split.group().dim();

    let rs_like = ReducedState {
        base: DVector::zeros(split.base_coords().len()),
        v_rho: s_split.v.rows(0, nrho).into_owned(),
        v_kappa: s_split.v.rows(nrho, nkappa).into_owned(),
    };
    // same assembly as section_data but at the state's own chart point
    let jets = sys.adapted().frame.eval_all(&s.x)?;
    let n = sys.dim();
    let m = sys.constraint_rank();
    let mut u = DVector::zeros(n);
    let mut jv = DMatrix::zeros(n, n);
    for alpha in 0..m {
        u.axpy(s_split.v[alpha], &jets[alpha].value, 1.0);
        jv += s_split.v[alpha] * &jets[alpha].jacobian;
    }
    let uvel = NaturalVelocity::from_vector(u.clone())?;
    let lagr = eval_jet(sys.lagrangian(), &s.x, &uvel)?;
    let data = SectionData {
        x_full: s.x.clone(),
        jets,
        u,
        lagr,
        jv,
        v_split: s_split.v.clone(),
    };

    let momenta = DVector::from_fn(nrho, |rho, _| data.jets[rho].value.dot(&data.lagr.d_u));
    if nrho == 0 {
        return Ok((momenta, DVector::zeros(0)));
    }

    let f = constrained_dynamics(sys, &s_split)?;
    let coeffs = reduced_coefficients(split, &s.x)?;
    let p_vert: Vec<f64> = (0..kdim)
        .map(|r| data.jets[split.vert_pos(r)].value.dot(&data.lagr.d_u))
        .collect();

    let mut residual = DVector::zeros(nrho);
    for rho in 0..nrho {
        // Gamma(P_rho): full-chart drift plus acceleration part
        let mut gamma_p = momentum_gradient(&data, rho).dot(&data.u);
        let hx = &data.lagr.d_uu * &data.jets[rho].value;
        for beta in 0..m {
            gamma_p += hx.dot(&data.jets[beta].value) * f[beta];
        }
        let mut force = 0.0;
        for s in 0..kdim {
            let mut coeff = 0.0;
            for l in 0..nkappa {
                coeff += coeffs.upsilon.get(l, rho, s) * rs_like.v_kappa[l];
            }
            for sigma in 0..nrho {
                coeff -= coeffs.cbar.get(s, rho, sigma) * rs_like.v_rho[sigma];
            }
            force += coeff * p_vert[s];
        }
        residual[rho] = gamma_p - force;
    }
    Ok((momenta, residual))
}

// ---------------------------------------------------------------------------
// Reduced integration
// ---------------------------------------------------------------------------

/// A reduced trajectory on C/G with the (invariant) energy diagnostic.
#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ReducedState>,
    pub energy: Vec<f64>,
}

impl ReducedTrajectory {
    pub fn last_state(&self) -> &ReducedState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().fold(0.0f64, |m, e| m.max((e - e0).abs()))
    }
}

/// Integrate the reduced dynamics on C/G with the same fixed-step contract
/// as the full integrator.
pub fn integrate_reduced(
    split: &InvariantFrameSplit,
    rs0: &ReducedState,
    h: f64,
    t_final: f64,
    method: Method,
) -> Result<ReducedTrajectory> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    if t_final < 0.0 || !t_final.is_finite() {
        return Err(Error::InvalidConfig("final time must be nonnegative".into()));
    }
    let (steps, h) = plan_steps(h, t_final);
    let nb = split.base_coords().len();
    let nrho = split.n_rho();
    let nkappa = split.n_kappa();

    let pack = |rs: &ReducedState| -> DVector<f64> {
        let mut y = DVector::zeros(nb + nrho + nkappa);
        y.rows_mut(0, nb).copy_from(&rs.base);
        y.rows_mut(nb, nrho).copy_from(&rs.v_rho);
        y.rows_mut(nb + nrho, nkappa).copy_from(&rs.v_kappa);
        y
    };
    let unpack = |y: &DVector<f64>| ReducedState {
        base: y.rows(0, nb).into_owned(),
        v_rho: y.rows(nb, nrho).into_owned(),
        v_kappa: y.rows(nb + nrho, nkappa).into_owned(),
    };

    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let rs = unpack(y);
        let data = section_data(split, &rs)?;
        let (f_rho, f_kappa) = reduced_rhs(split, &rs)?;
        let mut dy = DVector::zeros(nb + nrho + nkappa);
        for (b, &j) in split.base_coords().iter().enumerate() {
            let mut xd = 0.0;
            for l in 0..nkappa {
                xd += rs.v_kappa[l] * data.jets[nrho + l].value[j];
            }
            dy[b] = xd;
        }
        dy.rows_mut(nb, nrho).copy_from(&f_rho);
        dy.rows_mut(nb + nrho, nkappa).copy_from(&f_kappa);
        Ok(dy)
    };

    let energy_at = |rs: &ReducedState| -> Result<f64> {
        let data = section_data(split, rs)?;
        let state = CState::from_vector(data.x_full.clone(), data.v_split.clone())?;
        energy(split.split_system(), &state)
    };

    let mut y = pack(rs0);
    let mut traj = ReducedTrajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
    };
    let wrap = |r: Result<DVector<f64>>, t: f64| -> Result<DVector<f64>> {
        r.map_err(|e| Error::DynamicsFailure {
            t,
            source: Box::new(e),
        })
    };
    for step in 0..=steps {
        let t = step as f64 * h;
        let rs = unpack(&y);
        traj.times.push(t);
        traj.energy.push(energy_at(&rs).map_err(|e| Error::DynamicsFailure {
            t,
            source: Box::new(e),
        })?);
        traj.states.push(rs);
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
                    context: "reduced integration state",
                }),
            });
        }
    }
    Ok(traj)
}
