//! Built-in example systems.
//!
//! Every entry carries a documented chart, frame, and (where applicable)
//! symmetry split; reference accelerations in the test suites always come
//! from the multiplier oracle, never from transcribed literature values.

use std::collections::BTreeMap;


use crate::error::{Error, Result};
use crate::frame::{AdaptedFrame, Frame, VectorField};
use crate::hamel::{CState, ConstrainedSystem};
use crate::jet::{ChartPoint, ScalarOnTq};
use crate::reduction::{GroupModel, InvariantFrameSplit, SplitBlocks};
use crate::rng::SplitMix64;
use crate::routh::HorizontalSymmetryModel;
use crate::tensor::Tensor3;

/// One tunable parameter of a zoo system.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub unit: &'static str,
    pub doc: &'static str,
}

/// A registry entry: name, parameter schema, and a deterministic builder.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamSpec>,
    builder: fn(&BTreeMap<String, f64>) -> Result<BuiltSystem>,
}

impl SystemSpec {
    /// Merge overrides into the defaults and build. Unknown parameter names
    /// and non-finite values are configuration errors.
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
        let mut values: BTreeMap<String, f64> = self
            .params
            .iter()
            .map(|p| (p.name.to_string(), p.default))
            .collect();
        for (key, value) in overrides {
            if !values.contains_key(key) {
                let known: Vec<&str> = self.params.iter().map(|p| p.name).collect();
                return Err(Error::InvalidConfig(format!(
                    "unknown parameter `{key}` for system `{}` (known: {})",
                    self.name,
                    if known.is_empty() {
                        "none".to_string()
                    } else {
                        known.join(", ")
                    }
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "parameter `{key}` must be finite"
                )));
            }
            values.insert(key.clone(), *value);
        }
        (self.builder)(&values)
    }
}

/// A fully assembled system with chart/velocity labels and, when the system
/// is symmetric, its invariant frame split and horizontal-symmetry data.
#[derive(Clone, Debug)]
pub struct BuiltSystem {
    pub sys: ConstrainedSystem,
    pub coord_names: Vec<&'static str>,
    pub vel_labels: Vec<&'static str>,
    pub split: Option<InvariantFrameSplit>,
    /// Group-basis indices of the horizontal symmetry algebra, when one
    /// exists (enables Routh reduction).
    pub h_indices: Option<Vec<usize>>,
    pub default_state: CState,
    pub params: BTreeMap<String, f64>,
}

impl BuiltSystem {
    /// Labelled momentum fields `P_<label> = X_rho^V(L)` from the split.
    pub fn momentum_fields(&self) -> Vec<(String, VectorField)> {
        match &self.split {
            None => Vec::new(),
            Some(split) => split
                .rho_fields()
                .into_iter()
                .map(|(idx, field)| (format!("P_{}", self.vel_labels[idx]), field))
                .collect(),
        }
    }

    /// Seeded chart sample points for verification suites.
    pub fn sample_points(&self, seed: u64, count: usize) -> Vec<ChartPoint> {
        let mut rng = SplitMix64::new(seed);
        (0..count)
            .map(|_| {
                ChartPoint::new(rng.uniform_vec(self.sys.dim(), -2.0, 2.0))
                    .expect("finite samples")
            })
            .collect()
    }

    /// Build the horizontal symmetry model, validating it at seeded sample
    /// points. `None` when the system declares no horizontal symmetries.
    pub fn horizontal_model(&self, seed: u64) -> Result<Option<HorizontalSymmetryModel>> {
        match (&self.split, &self.h_indices) {
            (Some(split), Some(h)) => {
                let samples = self.sample_points(seed, 8);
                Ok(Some(HorizontalSymmetryModel::new(
                    split.clone(),
                    h.clone(),
                    &samples,
                )?))
            }
            _ => Ok(None),
        }
    }
}

fn kinetic3(mass: f64) -> ScalarOnTq {
    ScalarOnTq::new(3, move |_, u| {
        (u[0].sq() + u[1].sq() + u[2].sq()) * (0.5 * mass)
    })
}

fn state(coords: Vec<f64>, v: Vec<f64>) -> CState {
    CState::new(ChartPoint::new(coords).expect("finite"), v).expect("finite")
}

// ---------------------------------------------------------------------------
// free-particle
// ---------------------------------------------------------------------------

fn build_free_particle(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let mass = params["mass"];
    let frame = Frame::new(
        (0..3).map(|j| VectorField::coordinate(3, j)).collect(),
        "all of R^3",
    )?;
    let sys = ConstrainedSystem::new("free-particle", kinetic3(mass), AdaptedFrame::new(frame, 3)?)?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "z"],
        vel_labels: vec!["x", "y", "z"],
        split: None,
        h_indices: None,
        default_state: state(vec![0.0; 3], vec![1.0, -0.5, 0.25]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// paper-particle
// ---------------------------------------------------------------------------

/// Free particle in R^3 with the constraint `zdot = x xdot`.
///
/// The frame is {d/dx + x d/dz, d/dy, d/dz}; the system is invariant under
/// translations in y and z, with `d/dy` a horizontal symmetry. The reduced
/// transverse equation produced here is `(1+x^2) xddot + x xdot^2 = 0`.
/// Some published treatments of this example print the opposite sign,
/// `(1+x^2) xddot - x xdot^2 = 0`; the Lagrange-multiplier elimination,
/// energy conservation, and the Euler-Lagrange equations of the restricted
/// Routhian `1/2 ((1+x^2) xdot^2 - mu^2)` all give the plus sign, which the
/// multiplier oracle pins down in the acceptance suite.
fn paper_particle_parts() -> Result<(ConstrainedSystem, GroupModel)> {
    let x1 = VectorField::new(3, |x| vec![x[0].c(1.0), x[0].c(0.0), x[0].clone()]);
    let frame = Frame::new(
        vec![x1, VectorField::coordinate(3, 1), VectorField::coordinate(3, 2)],
        "all of R^3",
    )?;
    let sys = ConstrainedSystem::new("paper-particle", kinetic3(1.0), AdaptedFrame::new(frame, 2)?)?;
    let group = GroupModel::abelian(vec![
        VectorField::coordinate(3, 1),
        VectorField::coordinate(3, 2),
    ])?;
    Ok((sys, group))
}

fn build_paper_particle(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let (sys, group) = paper_particle_parts()?;
    let split = InvariantFrameSplit::new(
        sys.clone(),
        group,
        SplitBlocks {
            rho: vec![1],
            kappa: vec![0],
            c: vec![2],
            k: vec![],
        },
        vec![1, 2],
        vec![0.0, 0.0],
    )?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "z"],
        vel_labels: vec!["x", "y"],
        split: Some(split),
        h_indices: Some(vec![0]),
        default_state: state(vec![0.0; 3], vec![1.0, 0.0]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// nonholonomic-particle
// ---------------------------------------------------------------------------

/// Free particle in R^3 with the constraint `zdot = x ydot`: the classical
/// nonholonomic particle. Invariant under translations in y and z but with
/// no horizontal symmetries, so the momentum `P_y = ydot + x zdot` obeys
/// the moving-basis momentum equation without being conserved.
fn build_nonholonomic_particle(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let x2 = VectorField::new(3, |x| vec![x[0].c(0.0), x[0].c(1.0), x[0].clone()]);
    let frame = Frame::new(
        vec![VectorField::coordinate(3, 0), x2, VectorField::coordinate(3, 2)],
        "all of R^3",
    )?;
    let sys = ConstrainedSystem::new(
        "nonholonomic-particle",
        kinetic3(1.0),
        AdaptedFrame::new(frame, 2)?,
    )?;
    let group = GroupModel::abelian(vec![
        VectorField::coordinate(3, 1),
        VectorField::coordinate(3, 2),
    ])?;
    let split = InvariantFrameSplit::new(
        sys.clone(),
        group,
        SplitBlocks {
            rho: vec![1],
            kappa: vec![0],
            c: vec![2],
            k: vec![],
        },
        vec![1, 2],
        vec![0.0, 0.0],
    )?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "z"],
        vel_labels: vec!["x", "y"],
        split: Some(split),
        h_indices: None,
        default_state: state(vec![0.0; 3], vec![1.0, 1.0]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// chaplygin-sleigh
// ---------------------------------------------------------------------------

/// se(2) structure constants for generators (x-translation, y-translation,
/// rotation): [E3, E1] = E2 and [E3, E2] = -E1.
fn se2_constants() -> Tensor3 {
    let mut c = Tensor3::zeros(3, 3, 3);
    c.set(1, 2, 0, 1.0);
    c.set(1, 0, 2, -1.0);
    c.set(0, 2, 1, -1.0);
    c.set(0, 1, 2, 1.0);
    c
}

/// Fundamental fields of the left SE(2) action on a chart whose first two
/// coordinates are planar position and whose `angle_index` coordinate is
/// the orientation.
fn se2_fundamental(dim: usize, angle_index: usize) -> Vec<VectorField> {
    let rot = VectorField::new(dim, move |x| {
        (0..x.len())
            .map(|j| {
                if j == 0 {
                    -&x[1]
                } else if j == 1 {
                    x[0].clone()
                } else if j == angle_index {
                    x[0].c(1.0)
                } else {
                    x[0].c(0.0)
                }
            })
            .collect()
    });
    vec![
        VectorField::coordinate(dim, 0),
        VectorField::coordinate(dim, 1),
        rot,
    ]
}

/// Knife-edge sleigh on the SE(2) chart (x, y, theta): the contact point
/// may slide along the blade and the body may spin about it, but lateral
/// sliding is forbidden. The center of mass sits `offset` ahead of the
/// contact point along the blade.
///
/// Both constrained directions are vertical (D inside the group
/// directions), so the reduced system is momentum-only.
fn build_chaplygin_sleigh(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let mass = params["mass"];
    let inertia = params["inertia"];
    let offset = params["offset"];
    let forward = VectorField::new(3, |x| vec![x[2].cos(), x[2].sin(), x[0].c(0.0)]);
    let spin = VectorField::coordinate(3, 2);
    let lateral = VectorField::new(3, |x| vec![-x[2].sin(), x[2].cos(), x[0].c(0.0)]);
    let frame = Frame::new(vec![forward, spin, lateral], "all of SE(2)")?;
    let lagr = ScalarOnTq::new(3, move |x, u| {
        let lateral_speed = -x[2].sin() * &u[0] + x[2].cos() * &u[1];
        (u[0].sq() + u[1].sq()) * (0.5 * mass)
            + u[2].sq() * (0.5 * (inertia + mass * offset * offset))
            + (&u[2] * lateral_speed) * (mass * offset)
    });
    let sys = ConstrainedSystem::new("chaplygin-sleigh", lagr, AdaptedFrame::new(frame, 2)?)?;
    let group = GroupModel::new(se2_constants(), se2_fundamental(3, 2))?;
    let split = InvariantFrameSplit::new(
        sys.clone(),
        group,
        SplitBlocks {
            rho: vec![0, 1],
            kappa: vec![],
            c: vec![2],
            k: vec![],
        },
        vec![0, 1, 2],
        vec![0.0, 0.0, 0.0],
    )?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "theta"],
        vel_labels: vec!["fwd", "ang"],
        split: Some(split),
        h_indices: None,
        default_state: state(vec![0.0; 3], vec![1.0, 0.8]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// vertical-rolling-disk
// ---------------------------------------------------------------------------

/// Vertically rolling disk on the chart (x, y, phi, psi): contact point,
/// heading, and rolling angle, with rolling constraints
/// `xdot = radius cos(phi) psidot`, `ydot = radius sin(phi) psidot`.
/// Invariant under SE(2) acting on (x, y, phi); the dimension assumption
/// D + V = TQ holds and the heading direction is the vertical constrained
/// block.
fn build_vertical_rolling_disk(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let mass = params["mass"];
    let i_heading = params["inertia_heading"];
    let i_rolling = params["inertia_rolling"];
    let radius = params["radius"];
    let roll = VectorField::new(4, move |x| {
        vec![
            x[2].cos() * radius,
            x[2].sin() * radius,
            x[0].c(0.0),
            x[0].c(1.0),
        ]
    });
    let heading = VectorField::coordinate(4, 2);
    let body1 = VectorField::new(4, |x| {
        vec![x[2].cos(), x[2].sin(), x[0].c(0.0), x[0].c(0.0)]
    });
    let body2 = VectorField::new(4, |x| {
        vec![-x[2].sin(), x[2].cos(), x[0].c(0.0), x[0].c(0.0)]
    });
    let frame = Frame::new(vec![roll, heading, body1, body2], "all of SE(2) x S^1")?;
    let lagr = ScalarOnTq::new(4, move |_, u| {
        (u[0].sq() + u[1].sq()) * (0.5 * mass)
            + u[2].sq() * (0.5 * i_heading)
            + u[3].sq() * (0.5 * i_rolling)
    });
    let sys = ConstrainedSystem::new("vertical-rolling-disk", lagr, AdaptedFrame::new(frame, 2)?)?;
    let group = GroupModel::new(se2_constants(), se2_fundamental(4, 2))?;
    let split = InvariantFrameSplit::new(
        sys.clone(),
        group,
        SplitBlocks {
            rho: vec![1],
            kappa: vec![0],
            c: vec![2, 3],
            k: vec![],
        },
        vec![0, 1, 2],
        vec![0.0, 0.0, 0.0],
    )?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "phi", "psi"],
        vel_labels: vec!["roll", "head"],
        split: Some(split),
        h_indices: None,
        default_state: state(vec![0.0; 4], vec![1.0, 0.5]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// broken-demo
// ---------------------------------------------------------------------------

/// Negative control: the paper-particle geometry with a deliberately
/// non-invariant Lagrangian (a bare `y` term). Exists so that `verify`
/// demonstrably fails; excluded from aggregate verification runs.
fn build_broken_demo(params: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    let x1 = VectorField::new(3, |x| vec![x[0].c(1.0), x[0].c(0.0), x[0].clone()]);
    let frame = Frame::new(
        vec![x1, VectorField::coordinate(3, 1), VectorField::coordinate(3, 2)],
        "all of R^3",
    )?;
    let lagr = ScalarOnTq::new(3, |x, u| {
        0.5 * (u[0].sq() + u[1].sq() + u[2].sq()) + &x[1]
    });
    let sys = ConstrainedSystem::new("broken-demo", lagr, AdaptedFrame::new(frame, 2)?)?;
    let group = GroupModel::abelian(vec![
        VectorField::coordinate(3, 1),
        VectorField::coordinate(3, 2),
    ])?;
    let split = InvariantFrameSplit::new(
        sys.clone(),
        group,
        SplitBlocks {
            rho: vec![1],
            kappa: vec![0],
            c: vec![2],
            k: vec![],
        },
        vec![1, 2],
        vec![0.0, 0.0],
    )?;
    Ok(BuiltSystem {
        sys,
        coord_names: vec!["x", "y", "z"],
        vel_labels: vec!["x", "y"],
        split: Some(split),
        h_indices: None,
        default_state: state(vec![0.0; 3], vec![1.0, 0.0]),
        params: params.clone(),
    })
}

// ---------------------------------------------------------------------------
// registry
// ---------------------------------------------------------------------------

/// All built-in systems. `broken-demo` is a negative control and is skipped
/// by aggregate verification.
pub fn registry() -> Vec<SystemSpec> {
    vec![
        SystemSpec {
            name: "paper-particle",
            summary: "free particle with zdot = x xdot; R^2-symmetric, horizontal symmetry in y",
            params: vec![],
            builder: build_paper_particle,
        },
        SystemSpec {
            name: "nonholonomic-particle",
            summary: "free particle with zdot = x ydot; R^2-symmetric, momentum not conserved",
            params: vec![],
            builder: build_nonholonomic_particle,
        },
        SystemSpec {
            name: "chaplygin-sleigh",
            summary: "knife-edge sleigh on SE(2); constrained directions all vertical",
            params: vec![
                ParamSpec {
                    name: "mass",
                    default: 1.0,
                    unit: "kg",
                    doc: "body mass",
                },
                ParamSpec {
                    name: "inertia",
                    default: 1.0,
                    unit: "kg m^2",
                    doc: "moment of inertia about the center of mass",
                },
                ParamSpec {
                    name: "offset",
                    default: 0.5,
                    unit: "m",
                    doc: "distance from the knife edge to the center of mass",
                },
            ],
            builder: build_chaplygin_sleigh,
        },
        SystemSpec {
            name: "vertical-rolling-disk",
            summary: "rolling disk on R^2 x S^1 x S^1; SE(2)-symmetric, dimension assumption holds",
            params: vec![
                ParamSpec {
                    name: "mass",
                    default: 1.0,
                    unit: "kg",
                    doc: "disk mass",
                },
                ParamSpec {
                    name: "inertia_heading",
                    default: 1.0,
                    unit: "kg m^2",
                    doc: "moment of inertia about the vertical axis",
                },
                ParamSpec {
                    name: "inertia_rolling",
                    default: 1.0,
                    unit: "kg m^2",
                    doc: "moment of inertia about the rolling axis",
                },
                ParamSpec {
                    name: "radius",
                    default: 1.0,
                    unit: "m",
                    doc: "disk radius",
                },
            ],
            builder: build_vertical_rolling_disk,
        },
        SystemSpec {
            name: "free-particle",
            summary: "unconstrained control case",
            params: vec![ParamSpec {
                name: "mass",
                default: 1.0,
                unit: "kg",
                doc: "particle mass",
            }],
            builder: build_free_particle,
        },
        SystemSpec {
            name: "broken-demo",
            summary: "negative control with a non-invariant Lagrangian; verify must fail",
            params: vec![],
            builder: build_broken_demo,
        },
    ]
}

/// Systems included in aggregate verification (the negative control is
/// exercised only when selected explicitly).
pub fn verified_names() -> Vec<&'static str> {
    registry()
        .into_iter()
        .map(|s| s.name)
        .filter(|&n| n != "broken-demo")
        .collect()
}

pub fn find(name: &str) -> Result<SystemSpec> {
    registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))
}

/// Build a system by name with parameter overrides.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<BuiltSystem> {
    find(name)?.build(overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamel::{
        constrained_dynamics, multiplier_oracle, push_acceleration,
    };
    use crate::linalg;
    use crate::reduction::{reduced_coefficients, reduced_rhs, verify_invariance, ReducedState};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn registry_builds_with_defaults() {
        for spec in registry() {
            let built = spec.build(&BTreeMap::new()).unwrap();
            assert_eq!(built.coord_names.len(), built.sys.dim());
            assert_eq!(built.vel_labels.len(), built.sys.constraint_rank());
            assert_eq!(built.default_state.v.len(), built.sys.constraint_rank());
            // the dynamics is evaluable at the default state
            constrained_dynamics(&built.sys, &built.default_state).unwrap();
        }
    }

    #[test]
    fn unknown_system_and_parameters_are_errors() {
        assert!(matches!(
            build("no-such-system", &BTreeMap::new()),
            Err(Error::UnknownSystem(_))
        ));
        let mut params = BTreeMap::new();
        params.insert("bogus".to_string(), 1.0);
        assert!(matches!(
            build("chaplygin-sleigh", &params),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn declared_splits_pass_invariance_at_1e6() {
        for name in verified_names() {
            let built = build(name, &BTreeMap::new()).unwrap();
            if let Some(split) = &built.split {
                let samples = built.sample_points(1234, 8);
                let report = verify_invariance(split, &samples, 1e-6, 55).unwrap();
                assert!(report.pass(), "{name}: {report:?}");
            }
        }
    }

    #[test]
    fn oracle_matches_hamel_for_every_system() {
        for name in verified_names() {
            let built = build(name, &BTreeMap::new()).unwrap();
            let mut rng = SplitMix64::new(2024);
            for _ in 0..50 {
                let s = state(
                    rng.uniform_vec(built.sys.dim(), -2.0, 2.0),
                    rng.uniform_vec(built.sys.constraint_rank(), -2.0, 2.0),
                );
                let f = constrained_dynamics(&built.sys, &s).unwrap();
                let push = push_acceleration(&built.sys, &s, &f).unwrap();
                let oracle = multiplier_oracle(&built.sys, &s).unwrap();
                let rel = (&push - &oracle).amax() / oracle.amax().max(1.0);
                assert!(rel <= 1e-9, "{name}: gap {rel}");
            }
        }
    }

    #[test]
    fn sleigh_momentum_equations_match_hand_elimination() {
        // Multiplier elimination with m = 1, I_c = 1, a = 1/2 gives
        //   vdot_fwd = a w^2,  wdot = -m a v w / (I_c + m a^2)
        let built = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let split = built.split.as_ref().unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..40 {
            let v = rng.uniform_vec(2, -2.0, 2.0);
            let rs = ReducedState::new(vec![], vec![v[0], v[1]], vec![]);
            let (f_rho, f_kappa) = reduced_rhs(split, &rs).unwrap();
            assert_eq!(f_kappa.len(), 0);
            let expect0 = 0.5 * v[1] * v[1];
            let expect1 = -0.5 * v[0] * v[1] / 1.25;
            assert_abs_diff_eq!(f_rho[0], expect0, epsilon = 1e-12);
            assert_abs_diff_eq!(f_rho[1], expect1, epsilon = 1e-12);
        }
    }

    #[test]
    fn sleigh_cbar_matches_structure_functions() {
        let built = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let split = built.split.as_ref().unwrap();
        let mut rng = SplitMix64::new(8);
        for _ in 0..20 {
            let x = ChartPoint::new(rng.uniform_vec(3, -2.0, 2.0)).unwrap();
            let coeffs = reduced_coefficients(split, &x).unwrap();
            let r = split.split_system().adapted().frame.structure_functions(&x).unwrap();
            // vertical order [rho0, rho1, c]; frame order matches here
            for t in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        assert!(
                            (coeffs.cbar.get(t, a, b) - r.get(a, b, t)).abs() <= 1e-8,
                            "Cbar mismatch at ({t},{a},{b})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sleigh_is_momentum_only_euler_poincare_suslov_form() {
        // independent assembly of the momentum-block equations:
        // M_{rho sigma} f^sigma = -Cbar^r_{rho sigma} v^sigma P_r
        let built = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let split = built.split.as_ref().unwrap();
        let mut rng = SplitMix64::new(12);
        for _ in 0..30 {
            let v = rng.uniform_vec(2, -2.0, 2.0);
            let rs = ReducedState::new(vec![], vec![v[0], v[1]], vec![]);
            let (f_rho, _) = reduced_rhs(split, &rs).unwrap();

            let x = split.embed(&rs.base).unwrap();
            let s = CState::new(x.clone(), vec![v[0], v[1]]).unwrap();
            let sys = split.split_system();
            let mass = crate::hamel::mass_matrix(sys, &s).unwrap();
            let jet = crate::jet::eval_jet(
                sys.lagrangian(),
                &x,
                &sys.natural_velocity(&s).unwrap(),
            )
            .unwrap();
            let coeffs = reduced_coefficients(split, &x).unwrap();
            let frame = &sys.adapted().frame;
            let p: Vec<f64> = (0..3)
                .map(|r| {
                    let pos = if r < 2 { r } else { 2 };
                    frame.field(pos).components(&x).unwrap().dot(&jet.d_u)
                })
                .collect();
            let mut rhs = nalgebra::DVector::zeros(2);
            for rho in 0..2 {
                for r in 0..3 {
                    for sigma in 0..2 {
                        rhs[rho] -= coeffs.cbar.get(r, rho, sigma) * v[sigma] * p[r];
                    }
                }
            }
            let f = linalg::solve(&mass, &rhs, "eps test").unwrap();
            assert!((&f - &f_rho).amax() <= 1e-9);
        }
    }

    #[test]
    fn disk_conserves_both_constrained_velocities() {
        let built = build("vertical-rolling-disk", &BTreeMap::new()).unwrap();
        let split = built.split.as_ref().unwrap();
        let mut rng = SplitMix64::new(99);
        for _ in 0..30 {
            let rs = ReducedState::new(
                rng.uniform_vec(1, -2.0, 2.0),
                rng.uniform_vec(1, -2.0, 2.0),
                rng.uniform_vec(1, -2.0, 2.0),
            );
            let (f_rho, f_kappa) = reduced_rhs(split, &rs).unwrap();
            assert!(f_rho.amax() <= 1e-12, "heading rate must stay constant");
            assert!(f_kappa.amax() <= 1e-12, "rolling rate must stay constant");
        }
    }

    #[test]
    fn disk_with_translation_group_is_chaplygin() {
        // Test-only split: reduce the disk by translations alone. S = 0,
        // D + V = TQ, so the reduced equations are Euler-Lagrange equations
        // of l_c plus a gyroscopic force; assemble that independently.
        let built = build("vertical-rolling-disk", &BTreeMap::new()).unwrap();
        let group = GroupModel::abelian(vec![
            VectorField::coordinate(4, 0),
            VectorField::coordinate(4, 1),
        ])
        .unwrap();
        let split = InvariantFrameSplit::new(
            built.sys.clone(),
            group,
            SplitBlocks {
                rho: vec![],
                kappa: vec![0, 1],
                c: vec![2, 3],
                k: vec![],
            },
            vec![0, 1],
            vec![0.0, 0.0],
        )
        .unwrap();
        // base chart (phi, psi); l_c = 1/2 (m R^2 + J) v_roll^2 + 1/2 I v_head^2
        let (m, i_h, i_r, rad) = (1.0, 1.0, 1.0, 1.0);
        let base_lagr = ScalarOnTq::new(2, move |_, u| {
            u[1].sq() * (0.5 * (m * rad * rad + i_r)) + u[0].sq() * (0.5 * i_h)
        });
        // base frame {Y_roll = d/dpsi, Y_head = d/dphi} over chart (phi, psi)
        let base_frame = Frame::new(
            vec![VectorField::coordinate(2, 1), VectorField::coordinate(2, 0)],
            "base chart",
        )
        .unwrap();
        let base_sys = ConstrainedSystem::new(
            "disk base",
            base_lagr,
            AdaptedFrame::new(base_frame, 2).unwrap(),
        )
        .unwrap();

        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let base = rng.uniform_vec(2, -2.0, 2.0);
            let v = rng.uniform_vec(2, -2.0, 2.0);
            let rs = ReducedState::new(base.clone(), vec![], v.clone());
            let (f_rho, f_kappa) = reduced_rhs(&split, &rs).unwrap();
            assert_eq!(f_rho.len(), 0);

            // purely kinematic: no momentum map, no momentum equation
            let any_state = CState::new(
                ChartPoint::new(rng.uniform_vec(4, -1.0, 1.0)).unwrap(),
                v.clone(),
            )
            .unwrap();
            let (p, res) =
                crate::reduction::momentum_and_residual(&split, &any_state).unwrap();
            assert_eq!(p.len(), 0);
            assert_eq!(res.len(), 0);

            // independent route: EL of l_c plus gyroscopic force
            let x_full = split.embed(&rs.base).unwrap();
            let coeffs = reduced_coefficients(&split, &x_full).unwrap();
            let jet = crate::jet::eval_jet(
                built.sys.lagrangian(),
                &x_full,
                &built
                    .sys
                    .natural_velocity(&CState::new(x_full.clone(), v.clone()).unwrap())
                    .unwrap(),
            )
            .unwrap();
            let frame = &split.split_system().adapted().frame;
            let p_vert: Vec<f64> = (0..2)
                .map(|c| frame.field(2 + c).components(&x_full).unwrap().dot(&jet.d_u))
                .collect();
            let base_state = CState::new(
                ChartPoint::new(base.clone()).unwrap(),
                v.clone(),
            )
            .unwrap();
            let mass = crate::hamel::mass_matrix(&base_sys, &base_state).unwrap();
            let mut gyro = nalgebra::DVector::zeros(2);
            for i in 0..2 {
                for j in 0..2 {
                    for r in 0..2 {
                        gyro[i] += coeffs.curvature.get(r, i, j) * v[j] * p_vert[r];
                    }
                }
            }
            let el = constrained_dynamics(&base_sys, &base_state).unwrap();
            let force = linalg::solve(&mass, &gyro, "gyro").unwrap();
            let combined = el + force;
            assert!(
                (&combined - &f_kappa).amax() <= 1e-9,
                "Chaplygin route disagrees: {combined:?} vs {f_kappa:?}"
            );
        }
    }

    #[test]
    fn broken_demo_fails_invariance_with_unit_residual() {
        let built = build("broken-demo", &BTreeMap::new()).unwrap();
        let split = built.split.as_ref().unwrap();
        let samples = built.sample_points(7, 5);
        let report = verify_invariance(split, &samples, 1e-6, 7).unwrap();
        assert!(!report.pass());
        let lag = report
            .checks
            .iter()
            .find(|c| c.name == "lagrangian-invariance")
            .unwrap();
        assert!(lag.max_residual >= 0.5);
    }

    #[test]
    fn builders_are_deterministic() {
        let a = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let b = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let s = state(vec![0.3, -0.2, 0.9], vec![1.1, -0.7]);
        let fa = constrained_dynamics(&a.sys, &s).unwrap();
        let fb = constrained_dynamics(&b.sys, &s).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn momentum_field_labels() {
        let built = build("paper-particle", &BTreeMap::new()).unwrap();
        let fields = built.momentum_fields();
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].0, "P_y");
        let sleigh = build("chaplygin-sleigh", &BTreeMap::new()).unwrap();
        let labels: Vec<String> = sleigh.momentum_fields().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, vec!["P_fwd", "P_ang"]);
    }

    #[test]
    fn se2_group_model_is_coherent() {
        // GroupModel::new validates antisymmetry and Jacobi; the bracket
        // relation against the fundamental fields is spot-checked here.
        let group = GroupModel::new(se2_constants(), se2_fundamental(3, 2)).unwrap();
        let mut rng = SplitMix64::new(31);
        for _ in 0..10 {
            let x = ChartPoint::new(rng.uniform_vec(3, -2.0, 2.0)).unwrap();
            for r in 0..3 {
                for s in 0..3 {
                    let mut b = crate::frame::bracket(
                        &group.fundamental()[r],
                        &group.fundamental()[s],
                        &x,
                    )
                    .unwrap();
                    for t in 0..3 {
                        b += group.constants().get(t, r, s)
                            * group.fundamental()[t].components(&x).unwrap();
                    }
                    assert!(b.amax() <= 1e-12, "bracket relation at ({r},{s})");
                }
            }
        }
    }

    #[test]
    fn disk_mass_matrix_shape() {
        let built = build("vertical-rolling-disk", &BTreeMap::new()).unwrap();
        let s = built.default_state.clone();
        let m = crate::hamel::mass_matrix(&built.sys, &s).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((m - expect).amax() <= 1e-13);
    }
}
