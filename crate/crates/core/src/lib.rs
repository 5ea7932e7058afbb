//! Adaptive drilling and assessment: item generation, tapered grading,
//! drill and exam sessions, an integer reward ledger with tablet purchases,
//! and an event-sourced store that replays into the full platform state.

pub mod error;
pub mod grading;
pub mod itemgen;
pub mod ledger;
pub mod platform;
pub mod session;
pub mod simulate;
pub mod state;
pub mod stats;
pub mod storage;

pub use error::{Error, Result};
pub use grading::{
    collection_progress, course_grade, drill_grade, exam_grade, taper_length, AnswerHistory, CollectionProgress,
    CourseGradeConfig, CourseOutcome, GradeState, GradingConfig,
};
pub use itemgen::{DrillSet, GenConfig, Item, OptionKind, OptionPools, PoolEntry, PublicItem, Template};
pub use ledger::{AccountKind, Ledger, PaymentPayload, PurchaseReceipt, RewardRuleSet, Smly, Tablet, TabletStatus};
pub use platform::{Platform, PlatformConfig};
pub use session::{AnswerOutcome, StoppingCriteria};
pub use state::{replay, PlatformState};
pub use stats::{LibraryStats, StatsCache};
pub use storage::{Event, EventLog, EventRecord};
