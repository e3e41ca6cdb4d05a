//! The DiscoSyn trainer: multi-task PPO over latent actions with a shared
//! synergy decoder and a discriminator bonus.

mod bound;
mod config;
mod ppo;
mod rollout;
mod trainer;
mod vanilla;

pub use bound::{entropy_bound_gap, BoundGap, GaussianPosterior, LatentPosterior};
pub use config::TrainConfig;
pub use ppo::{clipped_objective, gae, normalize_advantages, ppo_update, surrogate, PpoReport, PpoState, STALE_RATIO};
pub use rollout::{
    collect, collect_with_heads, evaluate, extended_reward, reset_seed, EpisodeSummary, EvalResult, RolloutBatch,
    StepRecord,
};
pub use trainer::{
    converged, init_models, slope, train, train_frozen, train_with_observer, write_curves_csv, write_json,
    write_z_samples_csv, CurveRow, TrainLog, TrainOutput,
};
pub(crate) use rollout::obs_matrix;
pub(crate) use trainer::csv_err;
pub use vanilla::{vanilla_ppo, VanillaOutput, VanillaStep};
