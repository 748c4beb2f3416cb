pub mod baselines;
pub mod diffcore;
pub mod eval_metrics;
pub mod model;
pub mod navigator;
pub mod net_encoder;
pub mod roadnet;
pub mod search;
pub mod synth;
pub mod trainer;
pub mod traj_encoder;
pub mod trajectory;
