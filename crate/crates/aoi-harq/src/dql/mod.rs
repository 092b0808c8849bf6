//! Learning-based transmission policy for the unknown environment.

mod network;
mod replay;
mod train;

pub use network::{
    load_checkpoint, save_checkpoint, td_loss_and_grads, Adam, Gradients, QNetwork, Transition,
};
pub use replay::ReplayBuffer;
pub use train::{
    dpp_reward, episode_csv_line, epsilon_greedy, feasibility_mask, featurize, greedy_code, train,
    EpisodeStats, TrainConfig, TrainOutcome, Trainer, CURVE_CSV_HEADER, TRAIN_KEYS,
};
