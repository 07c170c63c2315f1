//! MiniAppWorld: a procedurally generated, sparse-reward app-navigation environment.

mod demos;
mod sim;
pub mod text;
mod types;
mod world;

pub use demos::{generate_sft_dataset, optimal_actions, read_jsonl, write_jsonl, DemoRecord};
pub use sim::{EnvState, Location, STACK_CAP};
pub use types::*;
pub use world::{
    build_world, screen_depths, task_difficulty, TierCounts, World, WorldConfig,
    WORLD_FORMAT_VERSION,
};
