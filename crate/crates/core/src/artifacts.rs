//! Run-directory files: CSV logs, JSON checkpoints and the value grid.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::density::DensityModel;
use crate::dynamics::EnsembleModel;
use crate::env::{EnvSpec, State, TaskId};
use crate::error::{Error, Result};
use crate::planner::{Models, TerminalValue};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const DEMOS_FILE: &str = "demos.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FAILED_FILE: &str = "FAILED";
pub const VALUE_GRID_FILE: &str = "value_grid.csv";

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "mode",
    "task",
    "episode_cost",
    "completed",
    "violated",
    "planner_feasible_rate",
    "wall_time_s",
];

pub const TRAJECTORY_HEADER: [&str; 10] = ["phase", "iteration", "step", "x", "vx", "y", "vy", "ax", "ay", "cost"];

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub mode: Mode,
    pub task: TaskId,
    pub episode_cost: f64,
    pub completed: bool,
    pub violated: bool,
    pub planner_feasible_rate: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

fn open_csv(path: &Path, header: &[&str], append: bool) -> Result<csv::Writer<File>> {
    let fresh = !append || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            inner: open_csv(path, &METRICS_HEADER, false)?,
        })
    }

    /// Appends to an existing file, writing the header only if it is new.
    pub fn append(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            inner: open_csv(path, &METRICS_HEADER, true)?,
        })
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        self.inner.serialize(r)?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub struct TrajectoryWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(TrajectoryWriter {
            path: path.to_path_buf(),
            inner: open_csv(path, &TRAJECTORY_HEADER, false)?,
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(TrajectoryWriter {
            path: path.to_path_buf(),
            inner: open_csv(path, &TRAJECTORY_HEADER, true)?,
        })
    }

    /// One row per state; the final state has empty action and cost fields.
    pub fn write<T: Scalar>(&mut self, phase: Phase, iteration: usize, traj: &Trajectory<T>) -> Result<()> {
        let it = iteration.to_string();
        for (step, s) in traj.states.iter().enumerate() {
            let s = s.to_array().map(|v| v.to_f64_lossy().to_string());
            let (ax, ay, c) = match (traj.actions.get(step), traj.costs.get(step)) {
                (Some(a), Some(c)) => (
                    a.ax.to_f64_lossy().to_string(),
                    a.ay.to_f64_lossy().to_string(),
                    c.to_f64_lossy().to_string(),
                ),
                _ => (String::new(), String::new(), String::new()),
            };
            let step = step.to_string();
            self.inner.write_record([
                phase.as_str(),
                &it,
                &step,
                &s[0],
                &s[1],
                &s[2],
                &s[3],
                &ax,
                &ay,
                &c,
            ])?;
        }
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, value)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

pub fn checkpoint_paths(run_dir: &Path) -> [PathBuf; 3] {
    let d = run_dir.join(CHECKPOINT_DIR);
    [d.join("dynamics.json"), d.join("terminal.json"), d.join("density.json")]
}

pub fn save_models<T: Scalar>(run_dir: &Path, models: &Models<T>) -> Result<()> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let [dyn_p, term_p, dens_p] = checkpoint_paths(run_dir);
    write_json(&dyn_p, &models.dynamics)?;
    write_json(&term_p, &models.terminal)?;
    write_json(&dens_p, &models.density)
}

pub fn load_models<T: Scalar>(run_dir: &Path) -> Result<Models<T>> {
    let [dyn_p, term_p, dens_p] = checkpoint_paths(run_dir);
    let dynamics: EnsembleModel<T> = read_json(&dyn_p)?;
    let terminal: TerminalValue<T> = read_json(&term_p)?;
    let density: DensityModel<T> = read_json(&dens_p)?;
    Ok(Models {
        dynamics,
        terminal,
        density,
    })
}

pub fn load_terminal<T: Scalar>(run_dir: &Path) -> Result<TerminalValue<T>> {
    read_json(&checkpoint_paths(run_dir)[1])
}

/// Axis-aligned position window sampled on an `nx × ny` lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_range: (-130.0, -80.0),
            y_range: (-10.0, 10.0),
            nx: 50,
            ny: 20,
        }
    }
}

fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Planner terminal term at zero velocity over the grid, row-major in `y`.
pub fn value_grid<T: Scalar>(env: &EnvSpec<T>, terminal: &TerminalValue<T>, grid: &GridSpec) -> Result<Vec<[f64; 3]>> {
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::Config("grid resolution must be at least 1x1".into()));
    }
    let xs = lattice(grid.x_range.0, grid.x_range.1, grid.nx);
    let ys = lattice(grid.y_range.0, grid.y_range.1, grid.ny);
    let mut flat = Vec::with_capacity(xs.len() * ys.len() * 4);
    for &y in &ys {
        for &x in &xs {
            flat.extend(State::new(T::cst(x), T::zero(), T::cst(y), T::zero()).to_array());
        }
    }
    let n = xs.len() * ys.len();
    let states = ndarray::Array2::from_shape_vec((n, 4), flat).expect("grid shape");
    let vals = terminal.evaluate_batch(env, states.view())?;
    let mut out = Vec::with_capacity(n);
    for (i, v) in vals.iter().enumerate() {
        out.push([xs[i % xs.len()], ys[i / xs.len()], v.to_f64_lossy()]);
    }
    Ok(out)
}

pub fn write_value_grid(path: &Path, rows: &[[f64; 3]]) -> Result<()> {
    let mut w = open_csv(path, &["x", "y", "value"], false)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
