//! Supervisory control of assembly tasks with behavior trees.
//!
//! Demonstration transcripts are interpreted into subtasks, compiled into
//! behavior-tree subtrees, and executed reactively against a simulated
//! workcell with perception-driven state maintenance, self-recovery,
//! rollback and replanning.

pub mod atom;
pub mod bt;
pub mod executor;
pub mod fixtures;
pub mod planner;
pub mod sim;
pub mod world;
