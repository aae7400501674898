//! MAC layer: TDD frame timing, the tiered WRR scheduler and CBG-based HARQ.

pub mod frame;
pub mod harq;
pub mod scheduler;

pub use frame::{FeedbackTiming, SlotFormat, SlotKind, TddFrame};
pub use harq::{CbgStatus, FeedbackEvent, HarqError, HarqProcess};
pub use scheduler::{
    CellScheduler, DeferredRetx, Grant, GrantKind, NewDataCandidate, PriorityEntry, RbgLayout, RetxCandidate,
    SchedulingDecision, Tier, TrafficClass, WrrState,
};
