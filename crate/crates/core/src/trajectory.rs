use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Transition;
use crate::env::{Action, EnvSpec, State};
use crate::error::Result;
use crate::scalar::Scalar;

/// One episode. `states` has one more entry than `actions` and `costs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trajectory<T> {
    pub states: Vec<State<T>>,
    pub actions: Vec<Action<T>>,
    pub costs: Vec<T>,
    pub completed: bool,
    pub violated: bool,
    /// Per-step planner feasibility; empty for demonstrations.
    #[serde(default)]
    pub plan_feasible: Vec<bool>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn start(s: State<T>) -> Self {
        Trajectory {
            states: vec![s],
            actions: Vec::new(),
            costs: Vec::new(),
            completed: false,
            violated: false,
            plan_feasible: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_state(&self) -> &State<T> {
        self.states.last().expect("trajectory has a start state")
    }

    pub fn is_success(&self) -> bool {
        self.completed && !self.violated
    }

    /// Sum of sparse step costs.
    pub fn total_cost(&self) -> T {
        self.costs.iter().copied().sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<T>> + '_ {
        self.actions.iter().enumerate().map(|(i, a)| Transition {
            state: self.states[i],
            action: *a,
            next_state: self.states[i + 1],
        })
    }
}

/// Runs a feedback controller from `start` until the episode ends.
pub fn rollout_controller<T, R, F>(env: &EnvSpec<T>, start: State<T>, mut controller: F, rng: &mut R) -> Result<Trajectory<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(&State<T>, &mut R) -> Action<T>,
{
    let mut traj = Trajectory::start(start);
    if env.in_goal(&start) {
        traj.completed = !env.violates_constraints(&start);
        return Ok(traj);
    }
    let mut s = start;
    for _ in 0..env.horizon_t {
        let a = controller(&s, rng).clipped(env.u_max);
        let out = env.step(&s, &a, rng)?;
        traj.actions.push(a);
        traj.costs.push(out.cost);
        traj.states.push(out.next_state);
        s = out.next_state;
        if out.violated {
            traj.violated = true;
            break;
        }
        if out.done {
            traj.completed = true;
            break;
        }
    }
    Ok(traj)
}
