//! Built-in experiment registry, run configuration, and the run driver with
//! its exporters (VTK snapshot series, CSV diagnostic trace, run summary).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::assembly::{Assembler, BoundaryData, CurvatureField, LoadField, PenaltyParams};
use crate::checkpoint::write_checkpoint;
use crate::flow::{FlowParams, FlowSystem, StepDiagnostics};
use crate::mesh::{build_rectangular_mesh, mark_dirichlet, BoundaryMarking, Mesh, Rectangle, Segment};
use crate::space::{interpolate, Space};
use crate::vtk::export_vtk;
use crate::{Error, Result};

/// A registered experiment: domain, curvature, clamping and defaults.
/// All scenarios start from the flat deformation `y0(x) = (x1, x2, 0)` with
/// zero load.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub domain: Rectangle,
    pub refinements: u32,
    pub curvature: CurvatureField,
    pub clamp: BoundaryMarking,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Zero-order metric weight: `0` for clamped plates, `1e-2` for free ones.
    pub epsilon: f64,
    pub tau: f64,
    pub energy_tol: f64,
}

impl ScenarioSpec {
    pub fn is_free(&self) -> bool {
        self.clamp.segments.is_empty()
    }
}

fn base(name: &'static str, description: &'static str, domain: Rectangle, clamp: BoundaryMarking, z: CurvatureField) -> ScenarioSpec {
    let free = clamp.segments.is_empty();
    ScenarioSpec {
        name,
        description,
        domain,
        refinements: 5,
        curvature: z,
        clamp,
        gamma0: 5.0e3,
        gamma1: 1.1e3,
        epsilon: if free { 1.0e-2 } else { 0.0 },
        tau: 5.0e-3,
        energy_tol: 5.0e-9,
    }
}

/// The seven built-in experiments.
pub fn registry() -> Vec<ScenarioSpec> {
    let rect = |a, b, c, d| Rectangle::new(a, b, c, d).unwrap();
    vec![
        base(
            "clamped_identity",
            "plate clamped on one short side, Z = I; rolls into a cylinder of radius 1",
            rect(-5.0, 5.0, -2.0, 2.0),
            BoundaryMarking::segment(Segment::Vertical { at: -5.0, lo: -2.0, hi: 2.0 }),
            CurvatureField::identity(),
        ),
        base(
            "clamped_aniso",
            "clamped plate with principal curvatures 5 and 1 at 45 degrees; rolls into a cone",
            rect(-2.0, 2.0, -3.0, 3.0),
            BoundaryMarking::segment(Segment::Horizontal { at: -3.0, lo: -2.0, hi: 2.0 }),
            CurvatureField::constant([[3.0, -2.0], [-2.0, 3.0]]),
        ),
        base(
            "clamped_opposite",
            "clamped plate with principal curvatures of opposite sign; the long side wins",
            rect(-2.0, 2.0, -3.0, 3.0),
            BoundaryMarking::segment(Segment::Horizontal { at: -3.0, lo: -2.0, hi: 2.0 }),
            CurvatureField::constant([[-5.0, 0.0], [0.0, 5.0]]),
        ),
        base(
            "middle_clamped",
            "plate clamped along the interior line x1 = 0 (crack treatment); two cylinders form",
            rect(-5.0, 5.0, -2.0, 2.0),
            BoundaryMarking::segment(Segment::Vertical { at: 0.0, lo: -2.0, hi: 2.0 }),
            CurvatureField::constant([[5.0, 0.0], [0.0, 1.0]]),
        ),
        base(
            "free_cigar",
            "free plate with anisotropic curvature; rolls into a cigar at 45 degrees",
            rect(-5.0, 5.0, -2.0, 2.0),
            BoundaryMarking::none(),
            CurvatureField::constant([[3.0, -2.0], [-2.0, 3.0]]),
        ),
        base(
            "free_wavy",
            "free plate, Z alternating between -I and +I on 8 equal strips; wave pattern",
            rect(-8.0, 8.0, -1.0, 1.0),
            BoundaryMarking::none(),
            // strips of width 2 along x1, leftmost strip gets -I
            CurvatureField::from_fn(|p| {
                let strip = (((p[0] + 8.0) / 2.0).floor() as i64).clamp(0, 7);
                let sign = if strip % 2 == 0 { -1.0 } else { 1.0 };
                [[sign, 0.0], [0.0, sign]]
            }),
        ),
        base(
            "free_helix",
            "high-aspect free plate with principal curvatures -1/2 and 5/2; DNA-like twist",
            rect(-8.0, 8.0, -0.5, 0.5),
            BoundaryMarking::none(),
            CurvatureField::constant([[1.0, -1.5], [-1.5, 1.0]]),
        ),
    ]
}

pub fn find_scenario(name: &str) -> Result<ScenarioSpec> {
    registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario {
            name: name.to_string(),
            available: registry().iter().map(|s| s.name).collect::<Vec<_>>().join(", "),
        })
}

/// Everything a run needs: scenario name, overrides, output locations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub refinements: Option<u32>,
    pub tau: Option<f64>,
    pub gamma0: Option<f64>,
    pub gamma1: Option<f64>,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    /// Steps between VTK snapshots.
    pub snapshot_every: usize,
    /// Steps between checkpoint writes.
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub deterministic: bool,
    /// Apply the clamped frame literally as `Phi = 0` instead of `grad g`.
    pub literal_phi_zero: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: String::new(),
            refinements: None,
            tau: None,
            gamma0: None,
            gamma1: None,
            epsilon: None,
            tol: None,
            max_steps: None,
            snapshot_every: 1000,
            checkpoint_every: 10_000,
            out_dir: PathBuf::from("out"),
            threads: 1,
            deterministic: false,
            literal_phi_zero: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "scenario",
    "refinements",
    "tau",
    "gamma0",
    "gamma1",
    "epsilon",
    "tol",
    "max_steps",
    "snapshot_every",
    "checkpoint_every",
    "out",
    "threads",
    "deterministic",
    "literal_phi_zero",
];

/// Parse a plain `key = value` config text. Lines starting with `#` and
/// blank lines are ignored. Unknown keys and malformed values are errors
/// (the latter with the line number).
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {lineno}: expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value)
            .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
    }
    Ok(cfg)
}

/// Apply one `key = value` pair. Shared by the file parser and the CLI
/// override path, so both enforce the same validation.
pub fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse::<T>()
            .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
    }
    match key {
        "scenario" => cfg.scenario = value.to_string(),
        "refinements" => cfg.refinements = Some(num(key, value)?),
        "tau" => {
            let v: f64 = num(key, value)?;
            if v <= 0.0 {
                return Err(format!("`tau` must be positive, got {v}"));
            }
            cfg.tau = Some(v);
        }
        "gamma0" => cfg.gamma0 = Some(num(key, value)?),
        "gamma1" => cfg.gamma1 = Some(num(key, value)?),
        "epsilon" => {
            let v: f64 = num(key, value)?;
            if v < 0.0 {
                return Err(format!("`epsilon` must be nonnegative, got {v}"));
            }
            cfg.epsilon = Some(v);
        }
        "tol" => {
            let v: f64 = num(key, value)?;
            if v <= 0.0 {
                return Err(format!("`tol` must be positive, got {v}"));
            }
            cfg.tol = Some(v);
        }
        "max_steps" => cfg.max_steps = Some(num(key, value)?),
        "snapshot_every" => {
            let v: usize = num(key, value)?;
            if v == 0 {
                return Err("`snapshot_every` must be at least 1".into());
            }
            cfg.snapshot_every = v;
        }
        "checkpoint_every" => {
            let v: usize = num(key, value)?;
            if v == 0 {
                return Err("`checkpoint_every` must be at least 1".into());
            }
            cfg.checkpoint_every = v;
        }
        "out" => cfg.out_dir = PathBuf::from(value),
        "threads" => {
            let v: usize = num(key, value)?;
            if v == 0 {
                return Err("`threads` must be at least 1".into());
            }
            cfg.threads = v;
        }
        "deterministic" => cfg.deterministic = num::<bool>(key, value)?,
        "literal_phi_zero" => cfg.literal_phi_zero = num::<bool>(key, value)?,
        _ => {
            return Err(format!(
                "unknown key `{key}`; valid keys: {}",
                CONFIG_KEYS.join(", ")
            ))
        }
    }
    Ok(())
}

/// Serialize a config back to the `key = value` format it parses from.
pub fn config_to_string(cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("scenario = {}\n", cfg.scenario));
    if let Some(v) = cfg.refinements {
        s.push_str(&format!("refinements = {v}\n"));
    }
    if let Some(v) = cfg.tau {
        s.push_str(&format!("tau = {v}\n"));
    }
    if let Some(v) = cfg.gamma0 {
        s.push_str(&format!("gamma0 = {v}\n"));
    }
    if let Some(v) = cfg.gamma1 {
        s.push_str(&format!("gamma1 = {v}\n"));
    }
    if let Some(v) = cfg.epsilon {
        s.push_str(&format!("epsilon = {v}\n"));
    }
    if let Some(v) = cfg.tol {
        s.push_str(&format!("tol = {v}\n"));
    }
    if let Some(v) = cfg.max_steps {
        s.push_str(&format!("max_steps = {v}\n"));
    }
    s.push_str(&format!("snapshot_every = {}\n", cfg.snapshot_every));
    s.push_str(&format!("checkpoint_every = {}\n", cfg.checkpoint_every));
    s.push_str(&format!("out = {}\n", cfg.out_dir.display()));
    s.push_str(&format!("threads = {}\n", cfg.threads));
    s.push_str(&format!("deterministic = {}\n", cfg.deterministic));
    s.push_str(&format!("literal_phi_zero = {}\n", cfg.literal_phi_zero));
    s
}

/// Scenario resolved against a config: concrete mesh, data and parameters.
pub struct ResolvedRun {
    pub spec: ScenarioSpec,
    pub mesh: Mesh,
    pub penalty: PenaltyParams,
    pub flow: FlowParams,
    pub data: BoundaryData,
    pub load: LoadField,
}

pub fn resolve(config: &RunConfig) -> Result<ResolvedRun> {
    let spec = find_scenario(&config.scenario)?;
    let refinements = config.refinements.unwrap_or(spec.refinements);
    let mesh = build_rectangular_mesh(spec.domain, refinements);
    let mesh = mark_dirichlet(&mesh, &spec.clamp)?;
    let penalty = PenaltyParams {
        gamma0: config.gamma0.unwrap_or(spec.gamma0),
        gamma1: config.gamma1.unwrap_or(spec.gamma1),
        epsilon: config.epsilon.unwrap_or(spec.epsilon),
    };
    let tau = config.tau.unwrap_or(spec.tau);
    let mut flow = FlowParams::with_tau(tau);
    // The default stopping tolerance tracks tau unless overridden.
    flow.energy_tol = config.tol.unwrap_or(1e-6 * tau);
    if let Some(ms) = config.max_steps {
        flow.max_steps = ms;
    }
    let data = if config.literal_phi_zero {
        BoundaryData::new(|p| [p[0], p[1], 0.0], |_| [[0.0; 3]; 2])
    } else {
        BoundaryData::flat_identity()
    };
    Ok(ResolvedRun { spec, mesh, penalty, flow, data, load: LoadField::zero() })
}

/// Result of a completed (or step-capped) run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub final_energy: f64,
    pub final_energy_no_constant: f64,
    pub steps: usize,
    pub wall_time_s: f64,
    pub final_defect: f64,
    pub converged: bool,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        format!(
            "scenario = {}\nconverged = {}\nsteps = {}\nfinal_energy = {:.17e}\n\
             final_energy_no_constant = {:.17e}\nfinal_defect = {:.17e}\nwall_time_s = {:.3}\n",
            self.scenario,
            self.converged,
            self.steps,
            self.final_energy,
            self.final_energy_no_constant,
            self.final_defect,
            self.wall_time_s
        )
    }
}

/// One CSV row per flow step.
pub fn trace_header() -> &'static str {
    "step,pseudo_time,energy_total,energy_no_constant,delta_norm_sq,defect,cg_iters,schur_residual"
}

pub fn trace_row(diag: &StepDiagnostics, tau: f64) -> String {
    format!(
        "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
        diag.step,
        diag.step as f64 * tau,
        diag.energy_after,
        diag.energy_after_no_constant,
        diag.delta_norm_sq,
        diag.defect,
        diag.cg_iters,
        diag.schur_residual
    )
}

/// Configure the global parallelism of the linear algebra backend.
///
/// One thread is the fast path for the system sizes this solver produces
/// (the per-step triangular solves are too small to amortize fork/join), and
/// the only mode with bitwise-reproducible traces.
pub fn configure_threads(threads: usize, deterministic: bool) {
    if deterministic || threads <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(threads));
    }
}

/// Build everything for a scenario, run the flow, and write the outputs:
/// `trace.csv`, `snapshot_<step>.vtk` (plus `final.vtk`), a rolling
/// `checkpoint.bin`, and `summary.txt`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let resolved = resolve(config)?;
    configure_threads(config.threads, config.deterministic);
    std::fs::create_dir_all(&config.out_dir)?;

    let mesh = &resolved.mesh;
    let space = Space::q2(mesh);
    let assembler = Assembler::new(mesh, &space);

    if mesh.has_dirichlet_edges() {
        let frame_defect = resolved.data.frame_defect(mesh, &space);
        if frame_defect > 1e-8 {
            eprintln!(
                "warning: clamped frame is not isometry-compatible \
                 (max |Phi^T Phi - I| = {frame_defect:.3e})"
            );
        }
    }

    let system = FlowSystem::new(
        &assembler,
        resolved.penalty,
        resolved.flow.clone(),
        &resolved.data,
        &resolved.load,
        &resolved.spec.curvature,
    )?;
    let y0 = interpolate(mesh, &space, |p| [p[0], p[1], 0.0]);

    let trace_path = config.out_dir.join("trace.csv");
    let mut trace = std::io::BufWriter::new(std::fs::File::create(&trace_path)?);
    writeln!(trace, "{}", trace_header())?;

    let snapshot = |y: &[f64], step: usize| -> Result<()> {
        let path = config.out_dir.join(format!("snapshot_{step:08}.vtk"));
        export_vtk(mesh, &space, &assembler, y, &path)
    };
    snapshot(&y0.y, 0)?;

    let tau = resolved.flow.tau;
    let start = Instant::now();
    let mut last_energy_total = system.energy_total(&y0.y);
    let mut last_energy_no_constant = last_energy_total - system.energy_constant;
    let mut last_defect = assembler.isometry_defect(&y0.y);

    let result = system.run(y0, |state, diag| {
        writeln!(trace, "{}", trace_row(diag, tau))?;
        if diag.step % config.snapshot_every == 0 {
            snapshot(&state.field.y, diag.step)?;
        }
        if diag.step % config.checkpoint_every == 0 {
            write_checkpoint(
                &config.out_dir.join("checkpoint.bin"),
                diag.step as u64,
                &state.field.y,
            )?;
        }
        last_energy_total = diag.energy_after;
        last_energy_no_constant = diag.energy_after_no_constant;
        last_defect = diag.defect;
        Ok(())
    })?;
    trace.flush()?;
    let wall_time_s = start.elapsed().as_secs_f64();

    export_vtk(
        mesh,
        &space,
        &assembler,
        &result.state.field.y,
        &config.out_dir.join("final.vtk"),
    )?;
    write_checkpoint(
        &config.out_dir.join("checkpoint.bin"),
        result.state.step as u64,
        &result.state.field.y,
    )?;

    let summary = RunSummary {
        scenario: config.scenario.clone(),
        final_energy: last_energy_total,
        final_energy_no_constant: last_energy_no_constant,
        steps: result.steps_taken,
        wall_time_s,
        final_defect: last_defect,
        converged: result.converged,
    };
    std::fs::write(config.out_dir.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}

/// Recompute the bilayer energy of a checkpointed state under a scenario's
/// operators (the `energy <checkpoint>` subcommand).
pub fn checkpoint_energy(config: &RunConfig, path: &Path) -> Result<(u64, f64, f64, f64)> {
    let resolved = resolve(config)?;
    let mesh = &resolved.mesh;
    let space = Space::q2(mesh);
    let assembler = Assembler::new(mesh, &space);
    let ck = crate::checkpoint::read_checkpoint(path)?;
    if ck.y.len() != space.dofs.n_displacement() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} coefficients but scenario `{}` at {} refinements needs {}",
            ck.y.len(),
            config.scenario,
            config.refinements.unwrap_or(resolved.spec.refinements),
            space.dofs.n_displacement()
        )));
    }
    let no_constant = assembler.energy_bilayer(
        &ck.y,
        &resolved.spec.curvature,
        &resolved.data,
        &resolved.load,
        &resolved.penalty,
        false,
    );
    let constant = resolved.spec.curvature.half_norm_sq_integral(mesh);
    let defect = assembler.isometry_defect(&ck.y);
    Ok((ck.step, no_constant + constant, no_constant, defect))
}
