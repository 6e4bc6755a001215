pub mod ddqn;
pub mod network;
pub mod optimizer;
pub mod replay;
pub mod train;
