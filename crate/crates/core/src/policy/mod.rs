//! Token-level action encoding, featurization and the actor-critic network.

mod features;
mod net;
mod vocab;

pub use features::{Features, Featurizer, FEATURE_DIM, GOAL_BUCKETS};
pub use net::{
    importance_ratio, Encoded, Policy, PolicyConfig, MAX_RESAMPLES, RATIO_MAX, RATIO_MIN,
};
pub use vocab::{
    ActionSpace, ActionTokenSequence, FullSpace, TokenClass, TokenId, Vocabulary, E_MAX, N_SLOTS,
};
