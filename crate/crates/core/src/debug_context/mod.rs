//! Debugger state as the assistant sees it: capture over a debug-adapter
//! connection and budgeted summaries for prompts.

mod adapter;
mod summarize;
mod types;
pub mod wire;

pub use adapter::{
    capture_context, capture_context_with, observe_at_breakpoint, AdapterError, CaptureLimits, ChildTransport,
    DapClient, DebugAdapter, SimulatedAdapterServer, SimulatedTransport, Transport,
};
pub use summarize::{summarize_context, SummaryError, TRUNCATION_MARKER};
pub use types::*;

/// Frames requested from the adapter when capturing.
pub const FRAME_FETCH_LIMIT: usize = 32;
/// Frames, from the top, whose locals are fetched.
pub const FETCH_LOCALS_DEPTH: usize = 3;
/// Rendered values longer than this are clipped.
pub const VALUE_RENDER_LIMIT: usize = 200;
/// Smallest budget the summarizer accepts.
pub const MIN_SUMMARY_BUDGET: usize = 128;
