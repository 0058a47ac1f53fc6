pub mod explore;
pub mod learner;
pub mod nets;
pub mod nn;
pub mod playroom;
pub mod replay;
pub mod reward;
pub mod scalar;
pub mod harness;

pub use harness::{run_training, ExperimentConfig};
pub use learner::{IuAgent as GenericIuAgent, LearnerConfig};
pub use playroom::{ArenaConfig, WorldState};
pub use reward::{parse, RewardExpr, Suite, TaskSpec};
pub use scalar::Real;

pub type ActorNet = nets::ActorNet<f64>;
pub type CriticNet = nets::CriticNet<f64>;
pub type ParamStore = nn::ParamStore<f64>;
pub type ReplayBuffer = replay::ReplayBuffer<f64>;
pub type IuAgent = learner::IuAgent<f64>;

pub type ActorNetF32 = nets::ActorNet<f32>;
pub type CriticNetF32 = nets::CriticNet<f32>;
pub type ParamStoreF32 = nn::ParamStore<f32>;
pub type ReplayBufferF32 = replay::ReplayBuffer<f32>;
pub type IuAgentF32 = learner::IuAgent<f32>;
