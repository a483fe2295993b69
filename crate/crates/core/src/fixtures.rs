//! Bundled gearset fixtures: setup, workcell, demonstration transcripts with
//! gold annotations and mock scripts, and the scenario matrix.

use crate::sim::DisturbanceKind;

pub const SETUP: &str = include_str!("../fixtures/setup.json");
pub const WORKCELL: &str = include_str!("../fixtures/workcell.json");
pub const MINIMAL_TRANSCRIPT: &str = include_str!("../fixtures/minimal.transcript.json");
/// Faults for the 5-subtask task: one per stage kind, 20% of each.
pub const TASK5_FAULTS: &str = include_str!("../fixtures/task5.faults.json");

/// Task lengths with bundled fixtures.
pub const TASK_LENGTHS: [usize; 3] = [1, 3, 5];

macro_rules! per_task {
    ($name:ident, $suffix:literal) => {
        pub fn $name(len: usize) -> Option<&'static str> {
            match len {
                1 => Some(include_str!(concat!("../fixtures/task1", $suffix))),
                3 => Some(include_str!(concat!("../fixtures/task3", $suffix))),
                5 => Some(include_str!(concat!("../fixtures/task5", $suffix))),
                _ => None,
            }
        }
    };
}

per_task!(transcript, ".transcript.json");
per_task!(gold, ".gold.json");
per_task!(mock_script, ".mock.json");

macro_rules! scenarios {
    ($($len:literal),*) => {
        /// Scenario for a task length and disturbance kind (`None` for the
        /// undisturbed case).
        pub fn scenario(len: usize, kind: Option<DisturbanceKind>) -> Option<&'static str> {
            use DisturbanceKind::*;
            match (len, kind) {
                $(
                    ($len, None) => Some(include_str!(concat!("../fixtures/scenarios/task", $len, "_none.json"))),
                    ($len, Some(I)) => Some(include_str!(concat!("../fixtures/scenarios/task", $len, "_I.json"))),
                    ($len, Some(II)) => Some(include_str!(concat!("../fixtures/scenarios/task", $len, "_II.json"))),
                    ($len, Some(III)) => Some(include_str!(concat!("../fixtures/scenarios/task", $len, "_III.json"))),
                )*
                _ => None,
            }
        }
    };
}

scenarios!(1, 3, 5);

/// The plan the mock backend yields for a bundled task, approved as is.
pub fn mock_plan(len: usize) -> Option<crate::planner::PlanBundle> {
    use std::sync::Arc;

    use crate::planner::{
        generate_plan, AutoApprove, DemonstrationTranscript, MockBackend, PlanConfig,
    };
    use crate::world::{Domain, SetupDoc};

    let transcript = DemonstrationTranscript::from_json(transcript(len)?).ok()?;
    let setup = SetupDoc::from_json(SETUP).ok()?;
    let mut backend = MockBackend::from_json(mock_script(len)?).ok()?;
    generate_plan(
        &transcript,
        &setup,
        Arc::new(Domain::gearset()),
        &mut backend,
        &mut AutoApprove,
        &PlanConfig::default(),
    )
    .ok()
}
