//! The verification harness behind `verify`: every invariant suite from
//! the library run against a built system, reported as one row per check.
//!
//! All tolerances are pinned here; reports are deterministic under a fixed
//! seed (sampling uses the splitmix64 generator documented in [`crate::rng`]).


use crate::error::Result;
use crate::hamel::{
    constrained_dynamics, energy_rate, multiplier_oracle, push_acceleration, CState,
};
use crate::jet::{fd_check, ChartPoint, NaturalVelocity};
use crate::reduction::{coefficient_crossval, momentum_and_residual, verify_invariance};
use crate::rng::SplitMix64;
use crate::zoo::{self, BuiltSystem};

/// One row of the verification report.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub system: String,
    pub check: &'static str,
    pub samples: usize,
    pub max_residual: f64,
    pub tol: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.max_residual <= self.tol
    }
}

/// Seeded constrained states with coordinates and quasi-velocities in
/// [-2, 2].
pub fn sample_states(built: &BuiltSystem, seed: u64, count: usize) -> Result<Vec<CState>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            CState::new(
                ChartPoint::new(rng.uniform_vec(built.sys.dim(), -2.0, 2.0))?,
                rng.uniform_vec(built.sys.constraint_rank(), -2.0, 2.0),
            )
        })
        .collect()
}

/// Run every applicable invariant suite for one system. The invariance
/// tolerance is configurable (default 1e-6); the remaining tolerances are
/// fixed properties of the library.
pub fn run_system_suite(
    built: &BuiltSystem,
    seed: u64,
    invariance_tol: f64,
) -> Result<Vec<CheckRow>> {
    let name = built.sys.name().to_string();
    let mut rows = Vec::new();
    let n = built.sys.dim();

    // derivative engine against central finite differences
    {
        let mut rng = SplitMix64::new(seed ^ 0x01);
        let mut worst = 0.0f64;
        let count = 100;
        for _ in 0..count {
            let x = ChartPoint::new(rng.uniform_vec(n, -2.0, 2.0))?;
            let u = NaturalVelocity::new(rng.uniform_vec(n, -2.0, 2.0))?;
            worst = worst.max(fd_check(built.sys.lagrangian(), &x, &u, 1e-5)?);
        }
        rows.push(CheckRow {
            system: name.clone(),
            check: "fd-check",
            samples: count,
            max_residual: worst,
            tol: 1e-6,
        });
    }

    // Hamel accelerations against the multiplier oracle
    {
        let states = sample_states(built, seed ^ 0x02, 200)?;
        let mut worst = 0.0f64;
        for s in &states {
            let f = constrained_dynamics(&built.sys, s)?;
            let push = push_acceleration(&built.sys, s, &f)?;
            let oracle = multiplier_oracle(&built.sys, s)?;
            worst = worst.max((&push - &oracle).amax() / oracle.amax().max(1.0));
        }
        rows.push(CheckRow {
            system: name.clone(),
            check: "oracle-equivalence",
            samples: states.len(),
            max_residual: worst,
            tol: 1e-9,
        });
    }

    // pointwise energy identity Gamma(E) = 0
    {
        let states = sample_states(built, seed ^ 0x03, 200)?;
        let mut worst = 0.0f64;
        for s in &states {
            worst = worst.max(energy_rate(&built.sys, s)?.abs());
        }
        rows.push(CheckRow {
            system: name.clone(),
            check: "energy-identity",
            samples: states.len(),
            max_residual: worst,
            tol: 1e-10,
        });
    }

    if let Some(split) = &built.split {
        // invariance of the group model, frame, Lagrangian, and dynamics
        let samples = built.sample_points(seed ^ 0x04, 10);
        let report = verify_invariance(split, &samples, invariance_tol, seed ^ 0x05)?;
        for check in report.checks {
            rows.push(CheckRow {
                system: name.clone(),
                check: check.name,
                samples: check.samples,
                max_residual: check.max_residual,
                tol: check.tol,
            });
        }

        // momentum equation in the moving basis
        {
            let states = sample_states(built, seed ^ 0x06, 100)?;
            let mut worst = 0.0f64;
            for s in &states {
                let (_, residual) = momentum_and_residual(split, s)?;
                if !residual.is_empty() {
                    worst = worst.max(residual.amax());
                }
            }
            rows.push(CheckRow {
                system: name.clone(),
                check: "momentum-residual",
                samples: states.len(),
                max_residual: worst,
                tol: 1e-9,
            });
        }

        // coefficient formulas against structure-function blocks
        {
            let points = built.sample_points(seed ^ 0x07, 50);
            let mut coeff_worst = 0.0f64;
            let mut adapt_worst = 0.0f64;
            for x in &points {
                let (gap, adaptation) = coefficient_crossval(split, x)?;
                coeff_worst = coeff_worst.max(gap);
                adapt_worst = adapt_worst.max(adaptation);
            }
            rows.push(CheckRow {
                system: name.clone(),
                check: "coefficient-crossval",
                samples: points.len(),
                max_residual: coeff_worst,
                tol: 1e-8,
            });
            rows.push(CheckRow {
                system: name.clone(),
                check: "adaptation-identity",
                samples: points.len(),
                max_residual: adapt_worst,
                tol: 1e-8,
            });
        }
    }

    Ok(rows)
}

/// Run the suites for every registry system except the negative control.
pub fn run_all(seed: u64, invariance_tol: f64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for name in zoo::verified_names() {
        let built = zoo::build(name, &Default::default())?;
        rows.extend(run_system_suite(&built, seed, invariance_tol)?);
    }
    Ok(rows)
}

/// Render a report; byte-identical for identical rows and seed.
pub fn render_report(rows: &[CheckRow], seed: u64) -> String {
    let mut out = String::new();
    out.push_str("# anholonome verify report\n");
    out.push_str(&format!("# seed: {seed}\n"));
    out.push_str(&format!("# version: {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str("system,check,samples,max_residual,tol,pass\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.3e},{:.3e},{}\n",
            row.system,
            row.check,
            row.samples,
            row.max_residual,
            row.tol,
            row.pass()
        ));
    }
    out
}

pub fn all_pass(rows: &[CheckRow]) -> bool {
    rows.iter().all(CheckRow::pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn paper_particle_suite_passes() {
        let built = zoo::build("paper-particle", &BTreeMap::new()).unwrap();
        let rows = run_system_suite(&built, 7, 1e-6).unwrap();
        assert!(all_pass(&rows), "{:#?}", rows);
        // all suites present for a symmetric system
        let names: Vec<&str> = rows.iter().map(|r| r.check).collect();
        for expected in [
            "fd-check",
            "oracle-equivalence",
            "energy-identity",
            "fundamental-bracket",
            "frame-invariance",
            "lagrangian-invariance",
            "dynamics-invariance",
            "momentum-residual",
            "coefficient-crossval",
            "adaptation-identity",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
    }

    #[test]
    fn free_particle_suite_has_no_symmetry_rows() {
        let built = zoo::build("free-particle", &BTreeMap::new()).unwrap();
        let rows = run_system_suite(&built, 7, 1e-6).unwrap();
        assert!(all_pass(&rows));
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn broken_demo_fails_with_reported_residual() {
        let built = zoo::build("broken-demo", &BTreeMap::new()).unwrap();
        let rows = run_system_suite(&built, 7, 1e-6).unwrap();
        assert!(!all_pass(&rows));
        let lag = rows
            .iter()
            .find(|r| r.check == "lagrangian-invariance")
            .unwrap();
        assert!(lag.max_residual >= 0.5);
    }

    #[test]
    fn reports_are_byte_identical_under_fixed_seed() {
        let a = render_report(&run_all(7, 1e-6).unwrap(), 7);
        let b = render_report(&run_all(7, 1e-6).unwrap(), 7);
        assert_eq!(a, b);
        assert!(a.contains("paper-particle"));
        assert!(!a.contains("broken-demo"));
    }
}
