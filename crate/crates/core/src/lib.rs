pub mod assess;
pub mod comm;
pub mod coordination;
pub mod executive;
pub mod facts;
pub mod geometry;
pub mod htn;
pub mod human;
pub mod intention;
pub mod mental;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod trace;
pub mod world;

pub use facts::{Fact, FactBase};
pub use htn::{PlanResponse, PolicyMode, SharedPlan};
pub use scenario::Scenario;
pub use session::{ClientMsg, ServerMsg, Session};
pub use sim::{Overrides, Sim, Terminal};
pub use trace::{replay, run, ReplayOutcome, RunReport, Trace};
