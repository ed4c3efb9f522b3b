//! Experiment orchestration: run configs, per-seed training, per-object
//! evaluation, the scripted oracle and frame/mask/reward dumps.

mod config;
mod eval;
mod policy;
mod render;
mod run;

pub use config::{holdout_split, CameraSection, EnvSection, RunConfig, RunSection, Split};
pub use eval::{
    evaluate_objects, run_episodes, summarize, trial_seed, Episode, EvalReport, EvalSummary, TrialRecord, TrialResult,
    EVAL_BATCH,
};
pub use policy::{AgentPolicy, IdlePolicy, Policy, RandomPolicy, ScriptedOracle};
pub use render::{mask_with_roi, render_command, TraceRow};
pub use run::{
    checkpoint_split, evaluate_training_pool, load_agent, run_eval, run_pickup_eval, run_training, seed_dir,
    train_seed, EvalPoint, SeedOutcome,
};
