//! Python bindings for the plate bending simulator.
//!
//! Exposes the scenario registry, mesh construction, energy evaluation and a
//! steppable simulation handle so the gradient flow can be driven from
//! Python:
//!
//! ```python
//! import platebend_py as pb
//! print(pb.list_scenarios())
//! sim = pb.Simulation("free_cigar", refinements=2)
//! diag = sim.step(100)
//! print(sim.energy(), sim.defect())
//! ```

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use platebend::assembly::{Assembler, BoundaryData, CurvatureField, LoadField, PenaltyParams};
use platebend::flow::{FlowParams, FlowState, FlowSystem};
use platebend::mesh::{build_rectangular_mesh, mark_dirichlet, Mesh as CoreMesh};
use platebend::scenario::{self, find_scenario, RunConfig};
use platebend::space::{interpolate, Space};
use platebend::vtk::export_vtk;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Mesh statistics for a scenario domain at a given refinement level.
#[pyclass]
struct Mesh {
    inner: CoreMesh,
}

#[pymethods]
impl Mesh {
    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.edges.len()
    }

    #[getter]
    fn n_interior_edges(&self) -> usize {
        platebend::mesh::skeleton(&self.inner).0.len()
    }

    #[getter]
    fn n_dirichlet_edges(&self) -> usize {
        platebend::mesh::skeleton(&self.inner).1.len()
    }

    #[getter]
    fn cell_size(&self) -> (f64, f64) {
        (self.inner.dx, self.inner.dy)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(cells={}, edges={}, dx={:.4}, dy={:.4})",
            self.inner.n_cells(),
            self.inner.edges.len(),
            self.inner.dx,
            self.inner.dy
        )
    }
}

/// A steppable gradient flow for one scenario.
///
/// The factorized operators borrow the mesh and space, so they are rebuilt
/// per `step` call; batch steps (`sim.step(500)`) to amortize the setup.
#[pyclass(unsendable)]
struct Simulation {
    mesh: CoreMesh,
    space: Space,
    penalty: PenaltyParams,
    data: BoundaryData,
    load: LoadField,
    curvature: CurvatureField,
    params: FlowParams,
    state: Option<FlowState>,
    converged: bool,
}

#[pymethods]
impl Simulation {
    /// Build a simulation for a registered scenario.
    ///
    /// Keyword overrides: refinements, tau, gamma0, gamma1, epsilon, tol.
    #[new]
    #[pyo3(signature = (scenario, refinements=None, tau=None, gamma0=None, gamma1=None, epsilon=None, tol=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        scenario: &str,
        refinements: Option<u32>,
        tau: Option<f64>,
        gamma0: Option<f64>,
        gamma1: Option<f64>,
        epsilon: Option<f64>,
        tol: Option<f64>,
    ) -> PyResult<Self> {
        scenario::configure_threads(1, true);
        let spec = find_scenario(scenario).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let refinements = refinements.unwrap_or(spec.refinements);
        let mesh = build_rectangular_mesh(spec.domain, refinements);
        let mesh = mark_dirichlet(&mesh, &spec.clamp).map_err(err)?;
        let space = Space::q2(&mesh);
        let penalty = PenaltyParams {
            gamma0: gamma0.unwrap_or(spec.gamma0),
            gamma1: gamma1.unwrap_or(spec.gamma1),
            epsilon: epsilon.unwrap_or(spec.epsilon),
        };
        if penalty.epsilon < 0.0 {
            return Err(PyValueError::new_err("epsilon must be nonnegative"));
        }
        let tau = tau.unwrap_or(spec.tau);
        if tau <= 0.0 {
            return Err(PyValueError::new_err("tau must be positive"));
        }
        let mut params = FlowParams::with_tau(tau);
        if let Some(tol) = tol {
            if tol <= 0.0 {
                return Err(PyValueError::new_err("tol must be positive"));
            }
            params.energy_tol = tol;
        }

        let data = BoundaryData::flat_identity();
        let load = LoadField::zero();
        let state = {
            let assembler = Assembler::new(&mesh, &space);
            let system = FlowSystem::new(
                &assembler,
                penalty,
                params.clone(),
                &data,
                &load,
                &spec.curvature,
            )
            .map_err(err)?;
            let y0 = interpolate(&mesh, &space, |p| [p[0], p[1], 0.0]);
            Some(system.initial_state(y0))
        };

        Ok(Simulation {
            mesh,
            space,
            penalty,
            data,
            load,
            curvature: spec.curvature.clone(),
            params,
            state,
            converged: false,
        })
    }

    /// Advance the flow by up to `n` steps; stops early on convergence.
    /// Returns the last step's diagnostics (empty dict if no step ran).
    fn step<'py>(&mut self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyDict>> {
        let assembler = Assembler::new(&self.mesh, &self.space);
        let system = FlowSystem::new(
            &assembler,
            self.penalty,
            self.params.clone(),
            &self.data,
            &self.load,
            &self.curvature,
        )
        .map_err(err)?;
        let mut current = self.state.take().expect("state initialized");
        let mut last_diag = None;
        for _ in 0..n {
            if self.converged {
                break;
            }
            let (next, diag) = system.step(&current).map_err(err)?;
            let increment = (diag.energy_after - diag.energy_before).abs();
            current = next;
            last_diag = Some(diag);
            if increment < self.params.energy_tol {
                self.converged = true;
            }
        }
        self.state = Some(current);

        let dict = PyDict::new(py);
        if let Some(d) = last_diag {
            dict.set_item("step", d.step)?;
            dict.set_item("energy", d.energy_after)?;
            dict.set_item("energy_no_constant", d.energy_after_no_constant)?;
            dict.set_item("delta_norm_sq", d.delta_norm_sq)?;
            dict.set_item("defect", d.defect)?;
            dict.set_item("cg_iters", d.cg_iters)?;
            dict.set_item("schur_residual", d.schur_residual)?;
        }
        dict.set_item("converged", self.converged)?;
        Ok(dict)
    }

    /// Bilayer energy (with the curvature constant) of the current state.
    fn energy(&self) -> f64 {
        self.state.as_ref().expect("state").energy
    }

    /// Isometry defect of the current state.
    fn defect(&self) -> f64 {
        let assembler = Assembler::new(&self.mesh, &self.space);
        assembler.isometry_defect(&self.state.as_ref().expect("state").field.y)
    }

    #[getter]
    fn current_step(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.step)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.converged
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.space.dofs.n_displacement() + self.space.dofs.n_multiplier()
    }

    /// Current deformation coefficients (flat list, cell-major layout).
    fn coefficients(&self) -> Vec<f64> {
        self.state.as_ref().expect("state").field.y.clone()
    }

    /// Write the current deformed geometry as a legacy VTK file.
    fn export_vtk(&self, path: PathBuf) -> PyResult<()> {
        let assembler = Assembler::new(&self.mesh, &self.space);
        export_vtk(
            &self.mesh,
            &self.space,
            &assembler,
            &self.state.as_ref().expect("state").field.y,
            &path,
        )
        .map_err(err)
    }

    fn mesh(&self) -> Mesh {
        Mesh { inner: self.mesh.clone() }
    }
}

/// Names of the built-in scenarios.
#[pyfunction]
fn list_scenarios() -> Vec<String> {
    scenario::registry().iter().map(|s| s.name.to_string()).collect()
}

/// Scenario metadata as a dict.
#[pyfunction]
fn scenario_info<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyDict>> {
    let spec = find_scenario(name).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let dict = PyDict::new(py);
    dict.set_item("name", spec.name)?;
    dict.set_item("description", spec.description)?;
    dict.set_item(
        "domain",
        (spec.domain.x_min, spec.domain.x_max, spec.domain.y_min, spec.domain.y_max),
    )?;
    dict.set_item("refinements", spec.refinements)?;
    dict.set_item("free", spec.is_free())?;
    dict.set_item("gamma0", spec.gamma0)?;
    dict.set_item("gamma1", spec.gamma1)?;
    dict.set_item("epsilon", spec.epsilon)?;
    dict.set_item("tau", spec.tau)?;
    dict.set_item("energy_tol", spec.energy_tol)?;
    Ok(dict)
}

/// Build the mesh a scenario would use.
#[pyfunction]
#[pyo3(signature = (scenario, refinements=None))]
fn scenario_mesh(scenario: &str, refinements: Option<u32>) -> PyResult<Mesh> {
    let spec = find_scenario(scenario).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mesh = build_rectangular_mesh(spec.domain, refinements.unwrap_or(spec.refinements));
    let mesh = mark_dirichlet(&mesh, &spec.clamp).map_err(err)?;
    Ok(Mesh { inner: mesh })
}

/// Run a scenario through the full driver, writing trace, snapshots,
/// checkpoint and summary into `out`. Returns the run summary as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, out, refinements=None, tau=None, gamma0=None, gamma1=None,
                    epsilon=None, tol=None, max_steps=None, snapshot_every=None, threads=None))]
#[allow(clippy::too_many_arguments)]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    out: PathBuf,
    refinements: Option<u32>,
    tau: Option<f64>,
    gamma0: Option<f64>,
    gamma1: Option<f64>,
    epsilon: Option<f64>,
    tol: Option<f64>,
    max_steps: Option<usize>,
    snapshot_every: Option<usize>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig {
        scenario: scenario.to_string(),
        refinements,
        tau,
        gamma0,
        gamma1,
        epsilon,
        tol,
        max_steps,
        out_dir: out,
        ..RunConfig::default()
    };
    if let Some(se) = snapshot_every {
        cfg.snapshot_every = se;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let summary = scenario::run(&cfg).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("scenario", &summary.scenario)?;
    dict.set_item("final_energy", summary.final_energy)?;
    dict.set_item("final_energy_no_constant", summary.final_energy_no_constant)?;
    dict.set_item("steps", summary.steps)?;
    dict.set_item("wall_time_s", summary.wall_time_s)?;
    dict.set_item("final_defect", summary.final_defect)?;
    dict.set_item("converged", summary.converged)?;
    Ok(dict)
}

#[pymodule]
fn platebend_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_info, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
