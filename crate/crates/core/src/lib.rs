pub mod analysis;
pub mod cli;
pub mod covsim;
pub mod graph;
pub mod protocol;
pub mod symbolic;
pub mod verify;
