//! Virtual lane clock: three lanes whose tasks are charged configured
//! durations, producing a deterministic task log.

use std::fmt;

/// The three pipeline lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Lane {
    Localization,
    Mapping,
    Segmentation,
}

impl Lane {
    fn index(self) -> usize {
        match self {
            Lane::Localization => 0,
            Lane::Mapping => 1,
            Lane::Segmentation => 2,
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Lane::Localization => "localization",
            Lane::Mapping => "mapping",
            Lane::Segmentation => "segmentation",
        };
        f.write_str(s)
    }
}

/// One executed task on a lane, in virtual milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub lane: Lane,
    pub task: &'static str,
    pub start_ms: f64,
    pub end_ms: f64,
    /// Stored charged duration; `end - start` re-derives it with
    /// accumulated rounding, which would break exact cost reporting.
    pub duration_ms: f64,
    pub frame_id: Option<u64>,
    pub keyframe: Option<usize>,
}

impl TaskRecord {
    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }
}

/// Per-lane virtual time with a task log. Tasks on one lane never
/// overlap and time is monotone.
#[derive(Debug, Clone, Default)]
pub struct LaneClock {
    free_at: [f64; 3],
    log: Vec<TaskRecord>,
}

impl LaneClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Earliest time the lane can start a new task.
    pub fn free_at(&self, lane: Lane) -> f64 {
        self.free_at[lane.index()]
    }

    /// Charges a task to a lane, starting no earlier than `at` and no
    /// earlier than the lane's previous task end. Returns (start, end).
    pub fn charge(
        &mut self,
        lane: Lane,
        task: &'static str,
        at: f64,
        duration_ms: f64,
        frame_id: Option<u64>,
        keyframe: Option<usize>,
    ) -> (f64, f64) {
        debug_assert!(duration_ms >= 0.0);
        let start = at.max(self.free_at[lane.index()]);
        let end = start + duration_ms;
        self.free_at[lane.index()] = end;
        self.log.push(TaskRecord {
            lane,
            task,
            start_ms: start,
            end_ms: end,
            duration_ms,
            frame_id,
            keyframe,
        });
        (start, end)
    }

    pub fn log(&self) -> &[TaskRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<TaskRecord> {
        self.log
    }
}
