//! Python bindings for the homogwave core: coefficient fields, cell
//! problems, wave integration, boundary control, and the config-driven
//! experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use homogwave::analysis::{rate_sweep, Mode, SweepParams};
use homogwave::cell::{homogenize, solve_correctors};
use homogwave::coeff::{build_field, validate, FieldSpec, PeriodicCoefficientField};
use homogwave::config::ExperimentConfig;
use homogwave::elliptic::dirichlet_correctors;
use homogwave::fem::{Domain, Grid, TensorField};
use homogwave::hum::{solve_control, ControlProblem, SolveMethod};
use homogwave::spectral::eigenpairs;
use homogwave::wave::{integrate, stable_dt, WaveState};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_spec(spec_json: &str) -> PyResult<FieldSpec> {
    serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(format!("field spec: {e}")))
}

/// A periodic, symmetric, uniformly elliptic coefficient field on the
/// unit cell.
#[pyclass(name = "Field", unsendable)]
struct PyField {
    inner: PeriodicCoefficientField,
}

#[pymethods]
impl PyField {
    /// Build from a JSON spec, e.g. `{"kind": "preset", "name": "cosine-1d"}`.
    #[new]
    #[pyo3(signature = (spec_json, mu = 1.0 / 3.0, lipschitz = 7.0))]
    fn new(spec_json: &str, mu: f64, lipschitz: f64) -> PyResult<Self> {
        let spec = parse_spec(spec_json)?;
        Ok(PyField { inner: build_field(&spec, mu, lipschitz).map_err(err)? })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn smooth(&self) -> bool {
        self.inner.smooth
    }

    /// Coefficient matrix at a cell point, as a d x d nested list.
    fn eval(&self, y: Vec<f64>) -> Vec<Vec<f64>> {
        let mut p = [0.0; 2];
        for (i, &v) in y.iter().take(2).enumerate() {
            p[i] = v;
        }
        let a = self.inner.eval(p);
        let d = self.inner.d;
        (0..d).map(|i| (0..d).map(|j| a[i][j]).collect()).collect()
    }

    /// Symmetry/ellipticity/periodicity diagnostics over a sample grid.
    fn validate<'py>(&self, py: Python<'py>, samples: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = validate(&self.inner, samples);
        let d = PyDict::new(py);
        d.set_item("symmetry_defect", r.symmetry_defect)?;
        d.set_item("eig_min", r.eig_min)?;
        d.set_item("eig_max", r.eig_max)?;
        d.set_item("periodicity_mismatch", r.periodicity_mismatch)?;
        d.set_item("lipschitz_quotient", r.lipschitz_quotient)?;
        Ok(d)
    }

    /// Solve the cell problem and return the effective tensor with
    /// corrector diagnostics.
    #[pyo3(signature = (resolution = 256, tol = 1e-10))]
    fn homogenize<'py>(
        &self,
        py: Python<'py>,
        resolution: usize,
        tol: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cset = solve_correctors(&self.inner, resolution, tol).map_err(err)?;
        let hat = homogenize(&self.inner, &cset).map_err(err)?;
        let d = self.inner.d;
        let a: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| hat.a[i][j]).collect()).collect();
        let out = PyDict::new(py);
        out.set_item("a_hat", a)?;
        out.set_item("eig_min", hat.eig_min)?;
        out.set_item("eig_max", hat.eig_max)?;
        out.set_item("chi_sup_norms", cset.sup_norms.clone())?;
        out.set_item("solver_residuals", cset.residuals.clone())?;
        Ok(out)
    }

    /// Sup-norm deviation of the boundary-adapted correctors from the
    /// identity map, per direction, plus the boundary Jacobian floor.
    #[pyo3(signature = (eps, lengths, elements, tol = 1e-10))]
    fn dirichlet_correctors<'py>(
        &self,
        py: Python<'py>,
        eps: f64,
        lengths: Vec<f64>,
        elements: Vec<usize>,
        tol: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let grid = make_grid(&lengths, &elements)?;
        let corr = dirichlet_correctors(&self.inner, eps, &grid, tol).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("sup_norms", corr.sup_norms.clone())?;
        out.set_item("min_boundary_det", corr.min_boundary_det)?;
        Ok(out)
    }
}

fn make_grid(lengths: &[f64], elements: &[usize]) -> PyResult<Grid> {
    if lengths.is_empty() || lengths.len() > 2 || lengths.len() != elements.len() {
        return Err(PyValueError::new_err(
            "lengths and elements must both have 1 or 2 entries",
        ));
    }
    let domain = if lengths.len() == 1 {
        Domain::interval(lengths[0])
    } else {
        Domain::rectangle(lengths[0], lengths[1])
    };
    let mut n = [0usize; 2];
    for (i, &v) in elements.iter().enumerate() {
        n[i] = v;
    }
    Ok(Grid::domain(&domain, n))
}

/// Energy-norm convergence sweep against the two-scale expansion for a
/// field, over a decreasing epsilon list. Returns rows and the fitted
/// slope.
#[pyfunction]
#[pyo3(signature = (field, lengths, epsilons, t_end = 0.5, cell_resolution = 256))]
fn rate_table<'py>(
    py: Python<'py>,
    field: &PyField,
    lengths: Vec<f64>,
    epsilons: Vec<f64>,
    t_end: f64,
    cell_resolution: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let domain = if lengths.len() == 1 {
        Domain::interval(lengths[0])
    } else if lengths.len() == 2 {
        Domain::rectangle(lengths[0], lengths[1])
    } else {
        return Err(PyValueError::new_err("lengths must have 1 or 2 entries"));
    };
    let modes = if field.inner.d == 1 {
        vec![Mode { k: [1, 0], a: 1.0, b: 0.0 }, Mode { k: [2, 0], a: 0.3, b: 0.5 }]
    } else {
        vec![Mode { k: [1, 1], a: 1.0, b: 0.0 }, Mode { k: [2, 1], a: 0.3, b: 0.5 }]
    };
    let p = SweepParams { t_end, cell_resolution, ..SweepParams::default() };
    let table = rate_sweep(&field.inner, &domain, &epsilons, modes, &p).map_err(err)?;
    let rows: Vec<(f64, f64, f64, f64, f64)> = table
        .rows
        .iter()
        .map(|r| (r.eps, r.h, r.dt, r.energy_err, r.l2_err))
        .collect();
    let out = PyDict::new(py);
    out.set_item("rows", rows)?;
    out.set_item("floor", table.floor)?;
    out.set_item("slope_energy", table.slope_energy)?;
    out.set_item("slope_l2", table.slope_l2)?;
    Ok(out)
}

/// Integrate the wave equation with nodal initial data on a constant
/// coefficient grid; returns times and energies.
#[pyfunction]
#[pyo3(signature = (field, eps, lengths, elements, u0, v0, t_end, cfl = 0.5))]
#[allow(clippy::too_many_arguments)]
fn wave_energy<'py>(
    py: Python<'py>,
    field: &PyField,
    eps: f64,
    lengths: Vec<f64>,
    elements: Vec<usize>,
    u0: Vec<f64>,
    v0: Vec<f64>,
    t_end: f64,
    cfl: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = make_grid(&lengths, &elements)?;
    let a = homogwave::coeff::sample_epsilon(&field.inner, eps, &grid).map_err(err)?;
    let dt = stable_dt(&grid, field.inner.mu, cfl);
    let init = WaveState { t: 0.0, u: u0, v: v0 };
    let traj =
        integrate(&grid, &a, &init, None, None, t_end, dt, usize::MAX).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("times", traj.times.clone())?;
    out.set_item("energy", traj.energy.clone())?;
    out.set_item("boundary_grad_sq", traj.boundary_grad_sq.clone())?;
    Ok(out)
}

/// Lowest Dirichlet eigenvalues of -div(a(x/eps) grad .) on the domain.
#[pyfunction]
#[pyo3(signature = (field, eps, lengths, elements, count, tol = 1e-10))]
fn eigenvalues(
    field: &PyField,
    eps: f64,
    lengths: Vec<f64>,
    elements: Vec<usize>,
    count: usize,
    tol: f64,
) -> PyResult<Vec<f64>> {
    let grid = make_grid(&lengths, &elements)?;
    let a = homogwave::coeff::sample_epsilon(&field.inner, eps, &grid).map_err(err)?;
    let basis = eigenpairs(&grid, &a, count, tol).map_err(err)?;
    Ok(basis.lambdas)
}

/// N = c0 * T^(-2/3) * eps^(-2/3), the filtering threshold.
#[pyfunction]
fn frequency_threshold(eps: f64, t: f64, c0: f64) -> f64 {
    homogwave::spectral::frequency_threshold(eps, t, c0)
}

/// Solve the boundary control problem for the lowest modes of a constant
/// effective medium on an interval; returns residuals and norms.
#[pyfunction]
#[pyo3(signature = (a_value, elements, t_end, modes = 4, tol = 1e-12))]
fn control_interval<'py>(
    py: Python<'py>,
    a_value: f64,
    elements: usize,
    t_end: f64,
    modes: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let domain = Domain::interval(1.0);
    let grid = Grid::domain(&domain, [elements, 0]);
    let a = TensorField::constant(1, [[a_value, 0.0], [0.0, 0.0]], &grid);
    let basis = eigenpairs(&grid, &a, modes, tol).map_err(err)?;
    let threshold = basis.lambdas[modes - 1];
    let theta0: Vec<f64> = (0..grid.num_nodes())
        .map(|i| (std::f64::consts::PI * grid.node_coords(i)[0]).sin())
        .collect();
    let dt = stable_dt(&grid, 1.0f64.min(1.0 / a_value), 0.5);
    let problem = ControlProblem::new(
        &grid,
        &a,
        basis,
        threshold,
        t_end,
        dt,
        theta0,
        vec![0.0; grid.num_nodes()],
        false,
    )
    .map_err(err)?;
    let r = solve_control(&problem, SolveMethod::Dense, tol).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("retained_modes", problem.keep)?;
    out.set_item("condition", r.condition)?;
    out.set_item("normal_residual", r.normal_residual)?;
    out.set_item("residual_l2", r.residual_l2)?;
    out.set_item("residual_h1neg", r.residual_h1neg)?;
    out.set_item("control_norm", r.control_norm)?;
    out.set_item("data_norm", r.data_norm)?;
    Ok(out)
}

/// Run a full experiment from a JSON config string; returns the output
/// directory path. Artifacts and a manifest are written there.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let dir = homogwave::runner::run(&cfg).map_err(err)?;
    Ok(dir.display().to_string())
}

#[pymodule]
fn homogwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(rate_table, m)?)?;
    m.add_function(wrap_pyfunction!(wave_energy, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(control_interval, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
