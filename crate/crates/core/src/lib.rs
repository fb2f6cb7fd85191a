pub mod cot;
pub mod dataset;
pub mod expr;
pub mod features;
pub mod gateway;
pub mod harness;
pub mod instance;
pub mod metrics;
pub mod numeric;
pub mod refine;
pub mod render;
pub mod scenario;
pub mod template;
