pub mod agent;
pub mod digital;
pub mod genesis;
pub mod gm;
pub mod grounded;
pub mod kernel;
pub mod memory;
pub mod model;
pub mod runner;
