//! Chance-constrained learning MPC with a Lyapunov-constrained terminal value.
//!
//! The agent plans with the cross-entropy method over a probabilistic
//! ensemble dynamics model. Its terminal cost is either a value-function
//! ensemble fitted to sparse cost-to-go (`saved` mode) or a Lyapunov network
//! `V(x) = xᵀ(l_l·I + M(x)ᵀM(x))x` (`salved` mode). Terminal states must stay
//! near previously safe states, and the planned state sequence must avoid
//! obstacles with probability at least β.
//!
//! Everything numeric is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below name the `f64` instantiations the command-line tool uses.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod demos;
pub mod density;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod nn;
pub mod planner;
pub mod scalar;
pub mod trajectory;
pub mod training;
pub mod value;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Loss trace of one fitting call.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    /// Mean training loss per epoch, averaged over ensemble members.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

impl FitStats {
    pub fn from_member_losses(per_member: &[Vec<f64>]) -> Self {
        let epochs = per_member.iter().map(|l| l.len()).max().unwrap_or(0);
        let epoch_losses: Vec<f64> = (0..epochs)
            .map(|e| {
                let vals: Vec<f64> = per_member.iter().filter_map(|l| l.get(e).copied()).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect();
        let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
        FitStats {
            epoch_losses,
            final_loss,
        }
    }
}

pub type StateF64 = env::State<f64>;
pub type StateF32 = env::State<f32>;
pub type ActionF64 = env::Action<f64>;
pub type EnvSpecF64 = env::EnvSpec<f64>;
pub type EnvSpecF32 = env::EnvSpec<f32>;
pub type MlpF64 = nn::Mlp<f64>;
pub type MlpF32 = nn::Mlp<f32>;
pub type EnsembleModelF64 = dynamics::EnsembleModel<f64>;
pub type EnsembleModelF32 = dynamics::EnsembleModel<f32>;
pub type LyapunovValueF64 = value::LyapunovValue<f64>;
pub type LyapunovValueF32 = value::LyapunovValue<f32>;
pub type ValueEnsembleF64 = value::ValueEnsemble<f64>;
pub type ValueEnsembleF32 = value::ValueEnsemble<f32>;
pub type DensityModelF64 = density::DensityModel<f64>;
pub type DensityModelF32 = density::DensityModel<f32>;
pub type ModelsF64 = planner::Models<f64>;
pub type ModelsF32 = planner::Models<f32>;
pub type TrajectoryF64 = trajectory::Trajectory<f64>;
pub type TrajectoryF32 = trajectory::Trajectory<f32>;
