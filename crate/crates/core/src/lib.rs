pub mod agent;
pub mod controller;
pub mod environment;
pub mod evaluation;
pub mod search;
pub mod statechart;
pub mod streetlight;
