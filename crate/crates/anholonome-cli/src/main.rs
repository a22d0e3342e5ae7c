//! `anholonome` — simulate, reduce, and verify nonholonomic Lagrangian
//! systems from the built-in zoo.
//!
//! Exit codes: 0 success, 1 verification failure, 2 bad configuration or
//! unknown system, 3 dynamics failure (with the failing time), 4 crosscheck
//! beyond tolerance.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;

use anholonome::csvio::{self, CsvMeta};
use anholonome::hamel::{integrate, CState, Method};
use anholonome::jet::ChartPoint;
use anholonome::nalgebra::DVector;
use anholonome::reduction::integrate_reduced;
use anholonome::routh::{full_state_on_level, integrate_routh, MomentumLevel, RouthState};
use anholonome::verify;
use anholonome::zoo::{self, BuiltSystem};
use anholonome::Error;

mod scenario;

use scenario::ScenarioFile;

const CROSSCHECK_TOL: f64 = 1e-6;
const DEFAULT_SEED: u64 = 7;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    ExitCode::from(run(&args))
}

fn run(args: &[String]) -> u8 {
    match args.first().map(String::as_str) {
        Some("simulate") => cmd_simulate(&args[1..]),
        Some("reduce") => cmd_reduce(&args[1..]),
        Some("verify") => cmd_verify(&args[1..]),
        Some("list-systems") => cmd_list_systems(),
        Some("--help") | Some("-h") | None => {
            print!("{}", usage());
            0
        }
        Some(other) => {
            eprintln!("unknown subcommand `{other}`\n");
            eprint!("{}", usage());
            2
        }
    }
}

fn usage() -> String {
    let mut out = String::new();
    out.push_str("anholonome — nonholonomic dynamics in anholonomic frames\n\n");
    out.push_str("USAGE: anholonome <subcommand> [--flag value ...]\n\n");
    out.push_str("SUBCOMMANDS\n");
    out.push_str("  simulate      integrate the constrained dynamics, write a trajectory CSV\n");
    out.push_str("  reduce        integrate the reduced dynamics (--routh for level-set reduction)\n");
    out.push_str("  verify        run the verification suites, print a report\n");
    out.push_str("  list-systems  show the built-in systems and their parameters\n\n");
    out.push_str("COMMON FLAGS\n");
    out.push_str("  --system NAME      system to run (see list-systems)\n");
    out.push_str("  --config FILE      JSON scenario; explicit flags override file values\n");
    out.push_str("  --h H --T T        fixed step and duration (defaults 1e-3, 5)\n");
    out.push_str("  --method M         rk4 (default) or euler\n");
    out.push_str("  --out PATH         write CSV here instead of stdout\n");
    out.push_str("  --<coord>0 V       initial chart coordinate, e.g. --x0 0.5\n");
    out.push_str("  --v<label>0 V      initial quasi-velocity, e.g. --vx0 1\n");
    out.push_str("  --<param> V        system parameter, e.g. --offset 0.3\n\n");
    out.push_str("REDUCE FLAGS\n");
    out.push_str("  --crosscheck       compare against the projected full flow (exit 4 beyond 1e-6)\n");
    out.push_str("  --routh --mu M     level-set reduction at momentum M (comma-separated list)\n\n");
    out.push_str("VERIFY FLAGS\n");
    out.push_str("  --all              all systems except the negative control\n");
    out.push_str("  --seed N           report seed (default: ANHOLONOME_SEED or 7)\n");
    out.push_str("  --tol X            invariance tolerance (default 1e-6)\n");
    out
}

// ---------------------------------------------------------------------------
// flag parsing
// ---------------------------------------------------------------------------

struct Flags {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
}

fn parse_flags(args: &[String], switch_names: &[&str]) -> Result<Flags, String> {
    let mut values = BTreeMap::new();
    let mut switches = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let name = arg
            .strip_prefix("--")
            .ok_or_else(|| format!("expected a --flag, got `{arg}`"))?;
        if switch_names.contains(&name) {
            switches.push(name.to_string());
            i += 1;
            continue;
        }
        let value = args
            .get(i + 1)
            .ok_or_else(|| format!("flag --{name} needs a value"))?;
        values.insert(name.to_string(), value.clone());
        i += 2;
    }
    Ok(Flags { values, switches })
}

impl Flags {
    fn take(&mut self, name: &str) -> Option<String> {
        self.values.remove(name)
    }

    fn take_f64(&mut self, name: &str) -> Result<Option<f64>, String> {
        match self.values.remove(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<f64>()
                .map(Some)
                .map_err(|_| format!("flag --{name} expects a number, got `{raw}`")),
        }
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }
}

fn config_error(msg: &str) -> u8 {
    eprintln!("error: {msg}");
    2
}

fn available_systems() -> String {
    zoo::registry()
        .iter()
        .map(|s| s.name)
        .collect::<Vec<_>>()
        .join(", ")
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::UnknownSystem(_) | Error::InvalidConfig(_) => 2,
        _ => 3,
    }
}

fn report_error(err: &Error) -> u8 {
    eprintln!("error: {err}");
    if let Error::UnknownSystem(_) = err {
        eprintln!("available systems: {}", available_systems());
    }
    exit_code_for(err)
}

// ---------------------------------------------------------------------------
// shared run assembly
// ---------------------------------------------------------------------------

struct RunSetup {
    built: BuiltSystem,
    system: String,
    state: CState,
    h: f64,
    t_final: f64,
    method: Method,
    method_name: String,
    out: Option<String>,
    scenario: ScenarioFile,
}

/// Resolve system, parameters, initial state, and integration settings from
/// an optional scenario file plus flags; leftover flags must name chart
/// coordinates (`--x0`), quasi-velocities (`--vx0`), or system parameters.
fn build_setup(mut flags: Flags) -> Result<RunSetup, u8> {
    let scenario = match flags.take("config") {
        None => ScenarioFile::default(),
        Some(path) => ScenarioFile::load(&path).map_err(|e| config_error(&e))?,
    };
    let system = flags
        .take("system")
        .or_else(|| scenario.system.clone())
        .ok_or_else(|| {
            config_error(&format!(
                "missing --system (available: {})",
                available_systems()
            ))
        })?;
    let spec = zoo::find(&system).map_err(|e| report_error(&e))?;

    let h = flags
        .take_f64("h")
        .map_err(|e| config_error(&e))?
        .or(scenario.h)
        .unwrap_or(1e-3);
    let t_final = flags
        .take_f64("T")
        .map_err(|e| config_error(&e))?
        .or(scenario.t_final)
        .unwrap_or(5.0);
    let method_name = flags
        .take("method")
        .or_else(|| scenario.method.clone())
        .unwrap_or_else(|| "rk4".to_string());
    let method: Method = method_name.parse().map_err(|e: Error| report_error(&e))?;
    let out = flags.take("out");

    // remaining value flags: parameters, --<coord>0, --v<label>0
    let mut params = scenario.parameters.clone();
    let mut coords = scenario.initial.coords.clone();
    let mut velocities = scenario.initial.velocities.clone();
    let coord_names: Vec<&str> = spec_coord_names(spec.name);
    let vel_names: Vec<&str> = spec_vel_labels(spec.name);
    let param_names: Vec<&str> = spec.params.iter().map(|p| p.name).collect();
    for (key, raw) in std::mem::take(&mut flags.values) {
        let value: f64 = raw
            .parse()
            .map_err(|_| config_error(&format!("flag --{key} expects a number, got `{raw}`")))?;
        if param_names.contains(&key.as_str()) {
            params.insert(key, value);
        } else if let Some(name) = key.strip_suffix('0') {
            if coord_names.contains(&name) {
                coords.insert(name.to_string(), value);
            } else if let Some(label) = name.strip_prefix('v') {
                if vel_names.contains(&label) {
                    velocities.insert(label.to_string(), value);
                } else {
                    return Err(config_error(&format!(
                        "unknown velocity label `{label}` (expected one of: {})",
                        vel_names.join(", ")
                    )));
                }
            } else {
                return Err(config_error(&format!(
                    "unknown coordinate `{name}` (expected one of: {})",
                    coord_names.join(", ")
                )));
            }
        } else {
            return Err(config_error(&format!(
                "unknown flag --{key} for system `{system}` (parameters: {}; state flags: {}, {})",
                if param_names.is_empty() {
                    "none".to_string()
                } else {
                    param_names.join(", ")
                },
                coord_names
                    .iter()
                    .map(|c| format!("--{c}0"))
                    .collect::<Vec<_>>()
                    .join(" "),
                vel_names
                    .iter()
                    .map(|l| format!("--v{l}0"))
                    .collect::<Vec<_>>()
                    .join(" "),
            )));
        }
    }

    let built = spec.build(&params).map_err(|e| report_error(&e))?;
    let state = assemble_state(&built, &coords, &velocities).map_err(|e| report_error(&e))?;

    Ok(RunSetup {
        built,
        system,
        state,
        h,
        t_final,
        method,
        method_name,
        out,
        scenario,
    })
}

fn spec_coord_names(name: &str) -> Vec<&'static str> {
    zoo::build(name, &BTreeMap::new())
        .map(|b| b.coord_names)
        .unwrap_or_default()
}

fn spec_vel_labels(name: &str) -> Vec<&'static str> {
    zoo::build(name, &BTreeMap::new())
        .map(|b| b.vel_labels)
        .unwrap_or_default()
}

fn assemble_state(
    built: &BuiltSystem,
    coords: &BTreeMap<String, f64>,
    velocities: &BTreeMap<String, f64>,
) -> Result<CState, Error> {
    let mut x = built.default_state.x.coords().clone();
    for (name, value) in coords {
        match built.coord_names.iter().position(|c| c == name) {
            Some(j) => x[j] = *value,
            None => {
                return Err(Error::InvalidConfig(format!(
                    "unknown coordinate `{name}` (expected: {})",
                    built.coord_names.join(", ")
                )))
            }
        }
    }
    let mut v = built.default_state.v.clone();
    for (label, value) in velocities {
        match built.vel_labels.iter().position(|l| l == label) {
            Some(a) => v[a] = *value,
            None => {
                return Err(Error::InvalidConfig(format!(
                    "unknown velocity label `{label}` (expected: {})",
                    built.vel_labels.join(", ")
                )))
            }
        }
    }
    CState::from_vector(ChartPoint::from_vector(x)?, v)
}

fn write_output(out: &Option<String>, bytes: &[u8]) -> Result<(), u8> {
    match out {
        None => std::io::stdout().write_all(bytes).map_err(|e| {
            eprintln!("error: {e}");
            3u8
        }),
        Some(path) => std::fs::write(path, bytes).map_err(|e| {
            eprintln!("error: cannot write {path}: {e}");
            2u8
        }),
    }
}

fn format_state_summary(built: &BuiltSystem, t: f64, state: &CState) -> String {
    let mut parts = vec![format!("t={}", t)];
    for (j, name) in built.coord_names.iter().enumerate() {
        parts.push(format!("{name}={:.6e}", state.x.coords()[j]));
    }
    for (a, label) in built.vel_labels.iter().enumerate() {
        parts.push(format!("v_{label}={:.6e}", state.v[a]));
    }
    parts.join(" ")
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &[String]) -> u8 {
    let flags = match parse_flags(args, &[]) {
        Ok(f) => f,
        Err(msg) => return config_error(&msg),
    };
    let setup = match build_setup(flags) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if setup.scenario.outputs.reduced || setup.scenario.outputs.routh {
        eprintln!("note: the scenario requests reduced outputs; use the `reduce` subcommand for those");
    }
    let traj = match integrate(
        &setup.built.sys,
        &setup.state,
        setup.h,
        setup.t_final,
        setup.method,
    )
    .and_then(|t| t.with_momenta(&setup.built.sys, &setup.built.momentum_fields()))
    {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };

    let meta = CsvMeta {
        system: &setup.system,
        params: &setup.built.params,
        reduced: false,
        h: setup.h,
        t_final: setup.t_final,
        method: &setup.method_name,
        extra: vec![],
    };
    let mut buf = Vec::new();
    if let Err(e) = csvio::write_trajectory(
        &mut buf,
        &meta,
        &setup.built.coord_names,
        &setup.built.vel_labels,
        &traj,
    ) {
        eprintln!("error: {e}");
        return 3;
    }
    if let Err(code) = write_output(&setup.out, &buf) {
        return code;
    }

    eprintln!(
        "final state: {}",
        format_state_summary(&setup.built, *traj.times.last().unwrap(), traj.last_state())
    );
    eprintln!("max |E - E0|: {:.3e}", traj.max_energy_drift());
    for (label, drift) in traj
        .momentum_labels
        .iter()
        .zip(traj.max_momentum_drift().iter())
    {
        eprintln!("max |{label} - {label}(0)|: {drift:.3e}");
    }
    0
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

fn cmd_reduce(args: &[String]) -> u8 {
    let flags = match parse_flags(args, &["crosscheck", "routh"]) {
        Ok(f) => f,
        Err(msg) => return config_error(&msg),
    };
    let crosscheck = flags.has("crosscheck") || {
        // scenario outputs may also request it; resolved after setup
        false
    };
    let routh_requested = flags.has("routh");
    let mut flags = flags;
    let mu_flag = flags.take("mu");
    let seed = match flags.take_f64("seed") {
        Ok(v) => v.map(|s| s as u64).unwrap_or_else(default_seed),
        Err(msg) => return config_error(&msg),
    };
    let setup = match build_setup(flags) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let crosscheck = crosscheck || setup.scenario.outputs.crosscheck;
    let routh_requested = routh_requested || setup.scenario.outputs.routh;

    let Some(split) = setup.built.split.clone() else {
        return config_error(&format!(
            "system `{}` declares no symmetry split; reduce does not apply",
            setup.system
        ));
    };

    if routh_requested {
        let mu_values: Vec<f64> = match mu_flag {
            Some(raw) => {
                match raw
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                {
                    Ok(v) => v,
                    Err(_) => return config_error(&format!("--mu expects numbers, got `{raw}`")),
                }
            }
            None if !setup.scenario.outputs.mu.is_empty() => setup.scenario.outputs.mu.clone(),
            None => return config_error("--routh requires --mu"),
        };
        return run_routh(&setup, mu_values, seed, crosscheck);
    }

    // plain reduced run
    let rs0 = match split.project_state(&setup.state) {
        Ok(rs) => rs,
        Err(e) => return report_error(&e),
    };
    let reduced = match integrate_reduced(&split, &rs0, setup.h, setup.t_final, setup.method) {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };

    let base_names: Vec<&str> = split
        .base_coords()
        .iter()
        .map(|&j| setup.built.coord_names[j])
        .collect();
    let rho_labels: Vec<&str> = split
        .blocks()
        .rho
        .iter()
        .map(|&i| setup.built.vel_labels[i])
        .collect();
    let kappa_labels: Vec<&str> = split
        .blocks()
        .kappa
        .iter()
        .map(|&i| setup.built.vel_labels[i])
        .collect();
    let meta = CsvMeta {
        system: &setup.system,
        params: &setup.built.params,
        reduced: true,
        h: setup.h,
        t_final: setup.t_final,
        method: &setup.method_name,
        extra: vec![],
    };
    let mut buf = Vec::new();
    if let Err(e) = csvio::write_reduced_trajectory(
        &mut buf,
        &meta,
        &base_names,
        &rho_labels,
        &kappa_labels,
        &reduced,
    ) {
        eprintln!("error: {e}");
        return 3;
    }
    if let Err(code) = write_output(&setup.out, &buf) {
        return code;
    }
    eprintln!("max |E - E0|: {:.3e}", reduced.max_energy_drift());

    if crosscheck {
        let full = match integrate(
            &setup.built.sys,
            &setup.state,
            setup.h,
            setup.t_final,
            setup.method,
        ) {
            Ok(t) => t,
            Err(e) => return report_error(&e),
        };
        let mut gap = 0.0f64;
        for (s, r) in full.states.iter().zip(&reduced.states) {
            match split.project_state(s) {
                Ok(p) => gap = gap.max(p.distance(r)),
                Err(e) => return report_error(&e),
            }
        }
        eprintln!("crosscheck: projection-commutes-with-flow gap {gap:.3e} (tol {CROSSCHECK_TOL:.1e})");
        if gap > CROSSCHECK_TOL {
            eprintln!("error: crosscheck failed");
            return 4;
        }
    }
    0
}

fn run_routh(setup: &RunSetup, mu_values: Vec<f64>, seed: u64, crosscheck: bool) -> u8 {
    let model = match setup.built.horizontal_model(seed) {
        Ok(Some(m)) => m,
        Ok(None) => {
            return config_error(&format!(
                "system `{}` declares no horizontal symmetries; --routh does not apply",
                setup.system
            ))
        }
        Err(e) => return report_error(&e),
    };
    let level = match MomentumLevel::new(mu_values.clone()) {
        Ok(l) => l,
        Err(e) => return report_error(&e),
    };
    if level.dim() != model.split().n_rho() {
        return config_error(&format!(
            "--mu needs {} value(s) for system `{}`",
            model.split().n_rho(),
            setup.system
        ));
    }

    // transverse initial velocities from the assembled full state
    let kappa_indices = model.split().blocks().kappa.clone();
    let v_kappa =
        DVector::from_fn(kappa_indices.len(), |i, _| setup.state.v[kappa_indices[i]]);
    let s0 = RouthState {
        x: setup.state.x.clone(),
        v_kappa,
    };
    let traj = match integrate_routh(&model, &level, &s0, setup.h, setup.t_final, setup.method) {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };

    let kappa_labels: Vec<&str> = kappa_indices
        .iter()
        .map(|&i| setup.built.vel_labels[i])
        .collect();
    let mu_rendered = mu_values
        .iter()
        .map(|m| csvio::format_float(*m))
        .collect::<Vec<_>>()
        .join(",");
    let meta = CsvMeta {
        system: &setup.system,
        params: &setup.built.params,
        reduced: true,
        h: setup.h,
        t_final: setup.t_final,
        method: &setup.method_name,
        extra: vec![("mu".to_string(), mu_rendered)],
    };
    let mut buf = Vec::new();
    if let Err(e) = csvio::write_routh_trajectory(
        &mut buf,
        &meta,
        &setup.built.coord_names,
        &kappa_labels,
        &traj,
    ) {
        eprintln!("error: {e}");
        return 3;
    }
    if let Err(code) = write_output(&setup.out, &buf) {
        return code;
    }
    eprintln!("max |E - E0|: {:.3e}", traj.max_energy_drift());

    if crosscheck {
        let full0 = match full_state_on_level(&model, &level, &s0) {
            Ok(s) => s,
            Err(e) => return report_error(&e),
        };
        let full = match integrate(
            &setup.built.sys,
            &full0,
            setup.h,
            setup.t_final,
            setup.method,
        ) {
            Ok(t) => t,
            Err(e) => return report_error(&e),
        };
        let mut gap = 0.0f64;
        for (f, r) in full.states.iter().zip(&traj.states) {
            gap = gap.max((f.x.coords() - r.x.coords()).amax());
            for (i, &idx) in kappa_indices.iter().enumerate() {
                gap = gap.max((f.v[idx] - r.v_kappa[i]).abs());
            }
        }
        eprintln!("crosscheck: level-set reduction gap {gap:.3e} (tol {CROSSCHECK_TOL:.1e})");
        if gap > CROSSCHECK_TOL {
            eprintln!("error: crosscheck failed");
            return 4;
        }
    }
    0
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn default_seed() -> u64 {
    std::env::var("ANHOLONOME_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

fn cmd_verify(args: &[String]) -> u8 {
    let mut flags = match parse_flags(args, &["all"]) {
        Ok(f) => f,
        Err(msg) => return config_error(&msg),
    };
    let all = flags.has("all");
    let system = flags.take("system");
    let seed = match flags.take_f64("seed") {
        Ok(v) => v.map(|s| s as u64).unwrap_or_else(default_seed),
        Err(msg) => return config_error(&msg),
    };
    let tol = match flags.take_f64("tol") {
        Ok(v) => v.unwrap_or(1e-6),
        Err(msg) => return config_error(&msg),
    };
    if !flags.values.is_empty() {
        let unknown: Vec<String> = flags.values.keys().map(|k| format!("--{k}")).collect();
        return config_error(&format!("unknown verify flags: {}", unknown.join(", ")));
    }

    let rows = if all {
        match verify::run_all(seed, tol) {
            Ok(r) => r,
            Err(e) => return report_error(&e),
        }
    } else {
        let Some(name) = system else {
            return config_error("verify needs --system NAME or --all");
        };
        let built = match zoo::build(&name, &BTreeMap::new()) {
            Ok(b) => b,
            Err(e) => return report_error(&e),
        };
        match verify::run_system_suite(&built, seed, tol) {
            Ok(r) => r,
            Err(e) => return report_error(&e),
        }
    };
    print!("{}", verify::render_report(&rows, seed));
    if verify::all_pass(&rows) {
        0
    } else {
        eprintln!("error: verification failed");
        1
    }
}

// ---------------------------------------------------------------------------
// list-systems
// ---------------------------------------------------------------------------

fn cmd_list_systems() -> u8 {
    for spec in zoo::registry() {
        let built = spec.build(&BTreeMap::new());
        match built {
            Ok(b) => {
                let symmetry = match (&b.split, &b.h_indices) {
                    (Some(s), Some(_)) => format!(
                        "group dim {} (horizontal symmetries, routh available)",
                        s.group().dim()
                    ),
                    (Some(s), None) => format!("group dim {}", s.group().dim()),
                    _ => "none".to_string(),
                };
                println!(
                    "{:<24} n={} m={} symmetry: {}",
                    spec.name,
                    b.sys.dim(),
                    b.sys.constraint_rank(),
                    symmetry
                );
                println!("    {}", spec.summary);
                for p in &spec.params {
                    println!(
                        "    --{} {} [{}] {}",
                        p.name, p.default, p.unit, p.doc
                    );
                }
            }
            Err(e) => println!("{:<24} (unavailable: {e})", spec.name),
        }
    }
    0
}
