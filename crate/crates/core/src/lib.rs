pub mod dsl;
pub mod world;
pub mod http;
pub mod memory;
pub mod retrieval;
pub mod orchestrator;
pub mod replanner;
pub mod harness;
