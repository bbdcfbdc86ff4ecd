//! Sub-optimal demonstrations from a noisy PD controller that tracks
//! hand-placed waypoints and then the goal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvSpec, State, TaskId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::{rollout_controller, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub n_demos: usize,
    pub kp: f64,
    pub kd: f64,
    pub action_noise_sigma: f64,
    pub max_attempts: usize,
    /// Via points visited before the goal; `None` uses the task default.
    pub waypoints: Option<Vec<[f64; 2]>>,
    /// Distance at which the controller moves on to the next via point.
    pub waypoint_radius: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_demos: 20,
            kp: 0.2,
            kd: 0.5,
            action_noise_sigma: 0.2,
            max_attempts: 200,
            waypoints: None,
            waypoint_radius: 2.0,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_demos == 0 {
            return Err(Error::Config("demos: n_demos must be >= 1".into()));
        }
        if !(self.kp > 0.0 && self.kd > 0.0) {
            return Err(Error::Config("demos: gains must be > 0".into()));
        }
        if self.action_noise_sigma < 0.0 {
            return Err(Error::Config("demos: action_noise_sigma must be >= 0".into()));
        }
        if self.max_attempts < self.n_demos {
            return Err(Error::Config("demos: max_attempts must be >= n_demos".into()));
        }
        Ok(())
    }
}

/// Via points for the canonical (unscaled) task geometry.
pub fn default_waypoints(task: TaskId) -> Vec<[f64; 2]> {
    match task {
        TaskId::Pointbot1 => vec![],
        TaskId::Pointbot2 => vec![[-35.0, 15.0], [-15.0, 15.0]],
        TaskId::Pointbot3 => vec![[-35.0, 0.0]],
        TaskId::Pointbot4 => vec![[-25.0, 24.0], [24.0, 24.0], [24.0, 0.0]],
    }
}

/// PD tracking of `waypoints` followed by the goal at the origin.
pub struct WaypointController<T> {
    targets: Vec<[T; 2]>,
    next: usize,
    kp: T,
    kd: T,
    noise: T,
    radius: T,
}

impl<T: Scalar> WaypointController<T> {
    pub fn new(cfg: &DemoConfig, waypoints: &[[f64; 2]]) -> Self {
        let mut targets: Vec<[T; 2]> = waypoints.iter().map(|w| [T::cst(w[0]), T::cst(w[1])]).collect();
        targets.push([T::zero(), T::zero()]);
        WaypointController {
            targets,
            next: 0,
            kp: T::cst(cfg.kp),
            kd: T::cst(cfg.kd),
            noise: T::cst(cfg.action_noise_sigma),
            radius: T::cst(cfg.waypoint_radius),
        }
    }

    pub fn act<R: Rng + ?Sized>(&mut self, s: &State<T>, rng: &mut R) -> Action<T> {
        while self.next + 1 < self.targets.len() {
            let [wx, wy] = self.targets[self.next];
            let d = ((s.x - wx).powi(2) + (s.y - wy).powi(2)).sqrt();
            if d < self.radius {
                self.next += 1;
            } else {
                break;
            }
        }
        let [wx, wy] = self.targets[self.next];
        let mut ax = self.kp * (wx - s.x) - self.kd * s.vx;
        let mut ay = self.kp * (wy - s.y) - self.kd * s.vy;
        if self.noise > T::zero() {
            ax += self.noise * T::standard_normal(rng);
            ay += self.noise * T::standard_normal(rng);
        }
        Action::new(ax, ay)
    }
}

/// Successful, constraint-free demonstrations; failed attempts are retried.
pub fn generate_demos<T: Scalar, R: Rng + ?Sized>(
    env: &EnvSpec<T>,
    cfg: &DemoConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory<T>>> {
    cfg.validate()?;
    let waypoints = cfg.waypoints.clone().unwrap_or_else(|| default_waypoints(env.task_id));
    let mut demos = Vec::with_capacity(cfg.n_demos);
    let (mut violated, mut timed_out) = (0usize, 0usize);
    for _ in 0..cfg.max_attempts {
        let mut ctl = WaypointController::new(cfg, &waypoints);
        let traj = rollout_controller(env, env.start_state, |s, r| ctl.act(s, r), rng)?;
        if traj.is_success() {
            demos.push(traj);
            if demos.len() == cfg.n_demos {
                return Ok(demos);
            }
        } else if traj.violated {
            violated += 1;
        } else {
            timed_out += 1;
        }
    }
    Err(Error::Demo(format!(
        "{} of {} demonstrations after {} attempts on {} ({} violated a constraint, {} ran out of time)",
        demos.len(),
        cfg.n_demos,
        cfg.max_attempts,
        env.task_id,
        violated,
        timed_out
    )))
}
