//! Point-mass navigation benchmarks (Pointbot 1-4).
//!
//! A 2-D double integrator with state `(x, vx, y, vy)`, box-bounded
//! accelerations, a goal disk at the origin and axis-aligned rectangular
//! obstacles. Cost is sparse: 1 per step that ends outside the goal, 0 inside.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Pointbot1,
    Pointbot2,
    Pointbot3,
    Pointbot4,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [
        TaskId::Pointbot1,
        TaskId::Pointbot2,
        TaskId::Pointbot3,
        TaskId::Pointbot4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Pointbot1 => "pointbot1",
            TaskId::Pointbot2 => "pointbot2",
            TaskId::Pointbot3 => "pointbot3",
            TaskId::Pointbot4 => "pointbot4",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task id `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct State<T> {
    pub x: T,
    pub vx: T,
    pub y: T,
    pub vy: T,
}

impl<T: Scalar> State<T> {
    pub fn new(x: T, vx: T, y: T, vy: T) -> Self {
        State { x, vx, y, vy }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [T; STATE_DIM]) -> Self {
        State::new(a[0], a[1], a[2], a[3])
    }

    pub fn from_slice(s: &[T]) -> Self {
        State::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [T; STATE_DIM] {
        [self.x, self.vx, self.y, self.vy]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(self) -> State<U> {
        let a = self.to_array().map(|v| U::cst(v.to_f64_lossy()));
        State::from_array(a)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Action<T> {
    pub ax: T,
    pub ay: T,
}

impl<T: Scalar> Action<T> {
    pub fn new(ax: T, ay: T) -> Self {
        Action { ax, ay }
    }

    pub fn to_array(self) -> [T; ACTION_DIM] {
        [self.ax, self.ay]
    }

    pub fn clipped(self, u_max: T) -> Self {
        let c = |v: T| v.max(-u_max).min(u_max);
        Action::new(c(self.ax), c(self.ay))
    }
}

/// Axis-aligned obstacle in position space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Rect<T> {
    pub xmin: T,
    pub xmax: T,
    pub ymin: T,
    pub ymax: T,
}

impl<T: Scalar> Rect<T> {
    pub fn new(xmin: T, xmax: T, ymin: T, ymax: T) -> Self {
        Rect { xmin, xmax, ymin, ymax }
    }

    /// Strict interior membership; the boundary counts as free space.
    pub fn contains_strict(&self, x: T, y: T) -> bool {
        x > self.xmin && x < self.xmax && y > self.ymin && y < self.ymax
    }

    pub fn center(&self) -> (T, T) {
        let two = T::cst(2.0);
        ((self.xmin + self.xmax) / two, (self.ymin + self.ymax) / two)
    }

    pub fn scaled(&self, s: T) -> Self {
        Rect::new(self.xmin * s, self.xmax * s, self.ymin * s, self.ymax * s)
    }

    pub fn cast<U: Scalar>(self) -> Rect<U> {
        let c = |v: T| U::cst(v.to_f64_lossy());
        Rect::new(c(self.xmin), c(self.xmax), c(self.ymin), c(self.ymax))
    }
}

/// Which coordinates the goal ball is measured in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMetric {
    /// Ball over (x, y) only; velocities are ignored.
    #[default]
    Position,
    /// Ball over the full 4-D state.
    FullState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EnvSpec<T> {
    pub task_id: TaskId,
    pub start_state: State<T>,
    pub goal_radius: T,
    pub goal_metric: GoalMetric,
    pub obstacles: Vec<Rect<T>>,
    pub horizon_t: usize,
    pub noise_sigma: T,
    pub dt: T,
    pub u_max: T,
}

/// Partial environment description; `None` keeps the task's canonical value.
///
/// `scale` multiplies the canonical start position and obstacle geometry and
/// is applied before the explicit `start_state` / `obstacles` overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    pub scale: Option<f64>,
    pub start_state: Option<State<f64>>,
    pub goal_radius: Option<f64>,
    pub goal_metric: Option<GoalMetric>,
    pub obstacles: Option<Vec<Rect<f64>>>,
    pub horizon_t: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub dt: Option<f64>,
    pub u_max: Option<f64>,
}

impl EnvOverrides {
    /// Fully-populated overrides equivalent to `spec`, with `scale` folded in.
    pub fn resolved_from<T: Scalar>(spec: &EnvSpec<T>) -> Self {
        EnvOverrides {
            scale: None,
            start_state: Some(spec.start_state.cast()),
            goal_radius: Some(spec.goal_radius.to_f64_lossy()),
            goal_metric: Some(spec.goal_metric),
            obstacles: Some(spec.obstacles.iter().map(|r| r.cast()).collect()),
            horizon_t: Some(spec.horizon_t),
            noise_sigma: Some(spec.noise_sigma.to_f64_lossy()),
            dt: Some(spec.dt.to_f64_lossy()),
            u_max: Some(spec.u_max.to_f64_lossy()),
        }
    }
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const DEFAULT_HORIZON_T: usize = 100;

fn canonical_geometry(task: TaskId) -> ([f64; 4], Vec<[f64; 4]>) {
    match task {
        TaskId::Pointbot1 => ([-100.0, 0.0, 0.0, 0.0], vec![]),
        TaskId::Pointbot2 => ([-50.0, 0.0, 0.0, 0.0], vec![[-30.0, -20.0, -10.0, 10.0]]),
        TaskId::Pointbot3 => (
            [-50.0, 0.0, 0.0, 0.0],
            vec![[-30.0, -20.0, 1.0, 12.0], [-30.0, -20.0, -12.0, -1.0]],
        ),
        TaskId::Pointbot4 => (
            [-75.0, 0.0, 0.0, 0.0],
            vec![
                [-15.0, -5.0, -15.0, 15.0],
                [-5.0, 15.0, 5.0, 15.0],
                [-5.0, 15.0, -15.0, -5.0],
            ],
        ),
    }
}

pub fn make_env<T: Scalar>(task_id: TaskId, overrides: &EnvOverrides) -> Result<EnvSpec<T>> {
    let (start, rects) = canonical_geometry(task_id);
    let scale = overrides.scale.unwrap_or(1.0);
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("env scale must be positive, got {scale}")));
    }
    let start_state = match overrides.start_state {
        Some(s) => s.cast(),
        None => State::from_array(start.map(|v| T::cst(v * scale))),
    };
    let obstacles = match &overrides.obstacles {
        Some(list) => list.iter().map(|r| r.cast()).collect(),
        None => rects
            .iter()
            .map(|r| Rect::new(r[0], r[1], r[2], r[3]).scaled(scale).cast())
            .collect(),
    };
    let spec = EnvSpec {
        task_id,
        start_state,
        goal_radius: T::cst(overrides.goal_radius.unwrap_or(1.0)),
        goal_metric: overrides.goal_metric.unwrap_or_default(),
        obstacles,
        horizon_t: overrides.horizon_t.unwrap_or(DEFAULT_HORIZON_T),
        noise_sigma: T::cst(overrides.noise_sigma.unwrap_or(DEFAULT_NOISE_SIGMA)),
        dt: T::cst(overrides.dt.unwrap_or(1.0)),
        u_max: T::cst(overrides.u_max.unwrap_or(1.0)),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub next_state: State<T>,
    pub cost: T,
    pub done: bool,
    pub violated: bool,
}

impl<T: Scalar> EnvSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.goal_radius > T::zero()) {
            return Err(Error::Config("goal_radius must be > 0".into()));
        }
        if self.horizon_t < 1 {
            return Err(Error::Config("horizon_t must be >= 1".into()));
        }
        if !(self.u_max > T::zero()) {
            return Err(Error::Config("u_max must be > 0".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if self.noise_sigma < T::zero() {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !self.start_state.is_finite() {
            return Err(Error::Config("start_state must be finite".into()));
        }
        Ok(())
    }

    pub fn in_goal(&self, s: &State<T>) -> bool {
        let sq = match self.goal_metric {
            GoalMetric::Position => s.x * s.x + s.y * s.y,
            GoalMetric::FullState => s.x * s.x + s.y * s.y + s.vx * s.vx + s.vy * s.vy,
        };
        sq.sqrt() <= self.goal_radius
    }

    /// Same test on a raw `[x, vx, y, vy]` slice.
    pub fn in_goal_slice(&self, s: &[T]) -> bool {
        self.in_goal(&State::from_slice(s))
    }

    pub fn violates_constraints(&self, s: &State<T>) -> bool {
        self.violates_position(s.x, s.y)
    }

    pub fn violates_position(&self, x: T, y: T) -> bool {
        self.obstacles.iter().any(|r| r.contains_strict(x, y))
    }

    /// Noise-free semi-implicit Euler update with the action clipped to bounds.
    pub fn nominal_next(&self, s: &State<T>, a: &Action<T>) -> State<T> {
        let a = a.clipped(self.u_max);
        let vx = s.vx + a.ax * self.dt;
        let vy = s.vy + a.ay * self.dt;
        State::new(s.x + vx * self.dt, vx, s.y + vy * self.dt, vy)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &State<T>,
        action: &Action<T>,
        rng: &mut R,
    ) -> Result<StepOutcome<T>> {
        if !state.is_finite() {
            return Err(Error::Numeric(format!("non-finite state {state:?}")));
        }
        let a = action.clipped(self.u_max);
        let (mut nx, mut ny) = (T::zero(), T::zero());
        if self.noise_sigma > T::zero() {
            nx = self.noise_sigma * T::standard_normal(rng);
            ny = self.noise_sigma * T::standard_normal(rng);
        }
        let vx = state.vx + a.ax * self.dt + nx;
        let vy = state.vy + a.ay * self.dt + ny;
        let next = State::new(state.x + vx * self.dt, vx, state.y + vy * self.dt, vy);
        if !next.is_finite() {
            return Err(Error::Numeric(format!("non-finite successor of {state:?}")));
        }
        let reached = self.in_goal(&next);
        let violated = self.violates_constraints(&next);
        Ok(StepOutcome {
            next_state: next,
            cost: if reached { T::zero() } else { T::one() },
            done: reached || violated,
            violated,
        })
    }

    /// Goal-centred coordinates. The goal sits at the origin in every task.
    pub fn goal_centered(&self, s: &State<T>) -> State<T> {
        *s
    }
}
