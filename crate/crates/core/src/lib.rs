pub mod conversation;
pub mod debug_context;
pub mod eval;
pub mod followup;
pub mod ident;
pub mod llm;
pub mod orchestrator;
pub mod responders;
pub mod scenario;
