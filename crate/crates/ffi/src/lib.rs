//! C ABI over the dbgchat engine.
//!
//! Every function returns a [`DbgchatStatus`]. On failure the message is
//! available from [`dbgchat_last_error_message`] on the same thread. Strings
//! handed out through `out` parameters are owned by the caller and must be
//! released with [`dbgchat_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dbgchat_core::debug_context::{capture_context, summarize_context, DebugAdapter};
use dbgchat_core::eval::{aggregate, run_suite, write_csv, EvalMode, SimulatedUserPolicy};
use dbgchat_core::orchestrator::{Engine, OrchestratorError, SessionConfig, UserMessage};
use serde_json::json;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbgchatStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    SessionClosed = 5,
    IllegalTransition = 6,
    Backend = 7,
    Io = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque engine handle.
pub struct DbgchatEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DbgchatStatus, String);

impl Failure {
    fn new(status: DbgchatStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            OrchestratorError::SessionNotFound(_) => DbgchatStatus::NotFound,
            OrchestratorError::SessionClosed => DbgchatStatus::SessionClosed,
            OrchestratorError::UnknownScenario(_) | OrchestratorError::EmptyMessage => DbgchatStatus::InvalidArgument,
            OrchestratorError::IllegalTransition { .. } => DbgchatStatus::IllegalTransition,
            OrchestratorError::Gateway(_) | OrchestratorError::Adapter(_) => DbgchatStatus::Backend,
            OrchestratorError::Persistence(_) => DbgchatStatus::Io,
            OrchestratorError::Responder(_) => DbgchatStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard<F>(f: F) -> DbgchatStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            DbgchatStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("panic inside dbgchat".into()));
            DbgchatStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DbgchatStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DbgchatStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn engine_arg<'a>(p: *const DbgchatEngine) -> Result<&'a Engine, Failure> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Failure::new(DbgchatStatus::NullArgument, "engine is null"))
}

unsafe fn write_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(DbgchatStatus::NullArgument, "out is null"));
    }
    let c = CString::new(s).map_err(|e| Failure::new(DbgchatStatus::Internal, e))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure::new(DbgchatStatus::Internal, e))
}

/// Create an engine with the bundled scenarios. `sessions_dir` may be null;
/// when set, every session is persisted there as JSON Lines.
///
/// # Safety
/// `sessions_dir` must be null or a valid NUL-terminated string. `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_engine_new(
    sessions_dir: *const c_char,
    out: *mut *mut DbgchatEngine,
) -> DbgchatStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(DbgchatStatus::NullArgument, "out is null"));
        }
        let engine = match opt_str_arg(sessions_dir, "sessions_dir")? {
            Some(dir) => Engine::bundled()
                .with_store(dir)
                .map_err(|e| Failure::new(DbgchatStatus::Io, e))?,
            None => Engine::bundled(),
        };
        *out = Box::into_raw(Box::new(DbgchatEngine { inner: engine }));
        Ok(())
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`dbgchat_engine_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_engine_free(engine: *mut DbgchatEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Start a session. `config_json` is a session config object such as
/// `{"scenario_id":"task1"}`, or null for a session without a scenario.
/// The new session id is written to `out_session_id`.
///
/// # Safety
/// Pointers must be valid; `config_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_session_create(
    engine: *const DbgchatEngine,
    config_json: *const c_char,
    out_session_id: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let config: SessionConfig = match opt_str_arg(config_json, "config_json")? {
            Some(text) => serde_json::from_str(text).map_err(|e| Failure::new(DbgchatStatus::InvalidArgument, e))?,
            None => SessionConfig::default(),
        };
        let id = engine.create_session(config)?;
        write_out(out_session_id, id)
    })
}

/// Send a developer message, given as JSON (`{"text":"...","origin":"Typed"}`).
/// The outcome, including the assistant response and state view, is written
/// to `out_json`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_session_send(
    engine: *const DbgchatEngine,
    session_id: *const c_char,
    message_json: *const c_char,
    out_json: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let id = str_arg(session_id, "session_id")?;
        let msg: UserMessage = serde_json::from_str(str_arg(message_json, "message_json")?)
            .map_err(|e| Failure::new(DbgchatStatus::InvalidArgument, e))?;
        let outcome = engine.handle_user_message(id, &msg)?;
        write_out(out_json, to_json(&outcome)?)
    })
}

/// Current state view of a session as JSON.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_session_view(
    engine: *const DbgchatEngine,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let view = engine.view(str_arg(session_id, "session_id")?)?;
        write_out(out_json, to_json(&view)?)
    })
}

/// Bundled scenarios as a JSON array of `{id, title, exception}`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_scenarios_json(
    engine: *const DbgchatEngine,
    out_json: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let list: Vec<_> = engine
            .scenarios()
            .iter()
            .map(|s| json!({"id": s.id, "title": s.title, "exception": s.exception.type_name}))
            .collect();
        write_out(out_json, to_json(&list)?)
    })
}

/// Summarize a scenario's captured debug context within `budget` characters.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_summarize(
    engine: *const DbgchatEngine,
    scenario_id: *const c_char,
    budget: usize,
    out_text: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let sc = engine
            .scenarios()
            .get(str_arg(scenario_id, "scenario_id")?)
            .map_err(|e| Failure::new(DbgchatStatus::NotFound, e))?;
        let mut adapter = DebugAdapter::simulated(sc).map_err(|e| Failure::new(DbgchatStatus::Backend, e))?;
        let ctx = capture_context(&mut adapter).map_err(|e| Failure::new(DbgchatStatus::Backend, e))?;
        let text = summarize_context(&ctx, budget).map_err(|e| Failure::new(DbgchatStatus::InvalidArgument, e))?;
        write_out(out_text, text)
    })
}

/// Run the scripted evaluation with the cooperative persona and write the
/// aggregated CSV report to `out_csv`. `scenarios` and `modes` are
/// comma-separated; `scenarios` may be `all`. Seeds run from 1 to `seeds`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_eval_csv(
    engine: *const DbgchatEngine,
    scenarios: *const c_char,
    modes: *const c_char,
    seeds: u64,
    out_csv: *mut *mut c_char,
) -> DbgchatStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let scenarios = str_arg(scenarios, "scenarios")?;
        let ids: Vec<String> = if scenarios.trim() == "all" {
            engine.scenarios().ids()
        } else {
            scenarios
                .split(',')
                .map(|s| {
                    engine
                        .scenarios()
                        .get(s.trim())
                        .map(|sc| sc.id.clone())
                        .map_err(|e| Failure::new(DbgchatStatus::NotFound, e))
                })
                .collect::<Result<_, _>>()?
        };
        let modes: Vec<EvalMode> = str_arg(modes, "modes")?
            .split(',')
            .map(|m| {
                EvalMode::parse(m)
                    .ok_or_else(|| Failure::new(DbgchatStatus::InvalidArgument, format!("unknown mode {m}")))
            })
            .collect::<Result<_, _>>()?;
        if ids.is_empty() || modes.is_empty() || seeds == 0 {
            return Err(Failure::new(DbgchatStatus::InvalidArgument, "nothing to evaluate"));
        }
        let seeds: Vec<u64> = (1..=seeds).collect();
        let results = run_suite(engine, &ids, &modes, &seeds, SimulatedUserPolicy::default())
            .map_err(|e| Failure::new(DbgchatStatus::Internal, e))?;
        let mut buf = Vec::new();
        write_csv(&aggregate(&results), &mut buf).map_err(|e| Failure::new(DbgchatStatus::Internal, e))?;
        write_out(
            out_csv,
            String::from_utf8(buf).map_err(|e| Failure::new(DbgchatStatus::Internal, e))?,
        )
    })
}

/// Message for the last failure on this thread, or null after a success.
/// The pointer stays valid until the next dbgchat call on the same thread.
#[no_mangle]
pub extern "C" fn dbgchat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dbgchat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
