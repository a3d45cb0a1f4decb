//! Debug-adapter client plus a scenario-backed adapter that speaks the same
//! framed protocol over an in-process pipe.
//!
//! Besides the standard requests, the simulated adapter answers three
//! pseudo-expressions through `evaluate`:
//!
//! - `$exception`: the current exception; children `Message`, `ThrownAt`
//!   and `InnerException`.
//! - `$breakpoints`: the sites where a breakpoint can be hit.
//! - `$sources`: source excerpts keyed by `file:line`.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::wire::{encode_message, CodecError, Decoder, MessageKind, WireMessage};
use super::{
    DebugContext, ExceptionRecord, SourceLocation, StackFrame, VariableBinding, FETCH_LOCALS_DEPTH, FRAME_FETCH_LIMIT,
    VALUE_RENDER_LIMIT,
};
use crate::scenario::Scenario;

const THREAD_ID: i64 = 1;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("debug adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("debug adapter protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("no breakpoint can be set at {0}")]
    UnknownLocation(SourceLocation),
    #[error("variable {0:?} is not visible at the breakpoint")]
    UnknownVariable(String),
    #[error("{command} failed: {message}")]
    RequestFailed { command: String, message: String },
}

impl From<CodecError> for AdapterError {
    fn from(e: CodecError) -> Self {
        AdapterError::ProtocolViolation(e.to_string())
    }
}

/// A byte pipe to a debug adapter.
pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// Next chunk of bytes. `Ok(None)` when nothing arrived within
    /// `timeout`; an empty chunk means the adapter closed the pipe.
    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        (**self).send(bytes)
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        (**self).recv(timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureLimits {
    pub frame_fetch_limit: usize,
    pub fetch_locals_depth: usize,
    pub value_render_limit: usize,
}

impl Default for CaptureLimits {
    fn default() -> Self {
        Self {
            frame_fetch_limit: FRAME_FETCH_LIMIT,
            fetch_locals_depth: FETCH_LOCALS_DEPTH,
            value_render_limit: VALUE_RENDER_LIMIT,
        }
    }
}

// ------------------------------------------------------------------ client

/// Sequential request/response client. Events are queued until asked for.
pub struct DapClient<T: Transport> {
    transport: T,
    decoder: Decoder,
    inbox: VecDeque<WireMessage>,
    events: VecDeque<WireMessage>,
    next_seq: u64,
    last_seen_seq: u64,
    request_timeout: Duration,
}

impl<T: Transport> DapClient<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            decoder: Decoder::default(),
            inbox: VecDeque::new(),
            events: VecDeque::new(),
            next_seq: 1,
            last_seen_seq: 0,
            request_timeout: Duration::from_secs(10),
        }
    }

    pub fn with_request_timeout(mut self, timeout: Duration) -> Self {
        self.request_timeout = timeout;
        self
    }

    /// Pull one incoming message, reading from the transport if needed.
    fn next_message(&mut self, timeout: Duration) -> Result<Option<WireMessage>, AdapterError> {
        loop {
            if let Some(m) = self.inbox.pop_front() {
                if m.seq <= self.last_seen_seq {
                    return Err(AdapterError::ProtocolViolation(format!(
                        "adapter seq {} does not follow {}",
                        m.seq, self.last_seen_seq
                    )));
                }
                self.last_seen_seq = m.seq;
                return Ok(Some(m));
            }
            let chunk = self
                .transport
                .recv(timeout)
                .map_err(|e| AdapterError::AdapterUnavailable(e.to_string()))?;
            match chunk {
                None => return Ok(None),
                Some(bytes) if bytes.is_empty() => {
                    return Err(AdapterError::AdapterUnavailable("adapter closed the connection".into()))
                }
                Some(bytes) => self.inbox.extend(self.decoder.feed(&bytes)?),
            }
        }
    }

    /// Send a request and wait for its response body.
    pub fn request(&mut self, command: &str, arguments: Value) -> Result<Value, AdapterError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let msg = WireMessage::request(seq, command, arguments)?;
        self.transport
            .send(&encode_message(&msg)?)
            .map_err(|e| AdapterError::AdapterUnavailable(e.to_string()))?;
        loop {
            let Some(m) = self.next_message(self.request_timeout)? else {
                return Err(AdapterError::AdapterUnavailable(format!("no response to {command}")));
            };
            match m.kind {
                MessageKind::Event => self.events.push_back(m),
                MessageKind::Response {
                    request_seq,
                    success,
                    message,
                } => {
                    if request_seq != seq || m.command_or_event != command {
                        return Err(AdapterError::ProtocolViolation(format!(
                            "expected a response to {command} #{seq}, got {} #{request_seq}",
                            m.command_or_event
                        )));
                    }
                    if !success {
                        return Err(AdapterError::RequestFailed {
                            command: command.to_string(),
                            message: message.unwrap_or_default(),
                        });
                    }
                    return Ok(m.body);
                }
                MessageKind::Request => {
                    return Err(AdapterError::ProtocolViolation(format!(
                        "unsupported reverse request {}",
                        m.command_or_event
                    )))
                }
            }
        }
    }

    /// Wait up to `timeout` for the named event, returning its body.
    pub fn wait_event(&mut self, name: &str, timeout: Duration) -> Result<Option<Value>, AdapterError> {
        loop {
            if let Some(pos) = self.events.iter().position(|e| e.command_or_event == name) {
                let e = self.events.remove(pos).expect("position is in range");
                return Ok(Some(e.body));
            }
            match self.next_message(timeout)? {
                None => return Ok(None),
                Some(m) if m.kind == MessageKind::Event => self.events.push_back(m),
                Some(m) => {
                    return Err(AdapterError::ProtocolViolation(format!(
                        "unsolicited {}",
                        m.command_or_event
                    )))
                }
            }
        }
    }

    /// Forget queued events of the given name.
    pub fn discard_events(&mut self, name: &str) {
        self.events.retain(|e| e.command_or_event != name);
    }
}

// ------------------------------------------------------------------ handle

/// One adapter connection, initialized and ready for inspection.
pub struct DebugAdapter {
    client: DapClient<Box<dyn Transport>>,
    stop_reason: Option<String>,
    event_timeout: Duration,
    _child: Option<Child>,
}

impl DebugAdapter {
    /// A scenario-backed adapter over an in-process pipe.
    pub fn simulated(scenario: &Scenario) -> Result<Self, AdapterError> {
        let transport = SimulatedTransport::new(SimulatedAdapterServer::new(scenario.clone()));
        Self::connect(Box::new(transport), None, Duration::ZERO)
    }

    /// Spawn an adapter process and talk to it over stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, AdapterError> {
        let (transport, child) = ChildTransport::spawn(program, args)
            .map_err(|e| AdapterError::AdapterUnavailable(format!("{program}: {e}")))?;
        Self::connect(Box::new(transport), Some(child), Duration::from_secs(2))
    }

    pub fn connect(
        transport: Box<dyn Transport>,
        child: Option<Child>,
        event_timeout: Duration,
    ) -> Result<Self, AdapterError> {
        let mut adapter = Self {
            client: DapClient::new(transport),
            stop_reason: None,
            event_timeout,
            _child: child,
        };
        adapter.client.request(
            "initialize",
            json!({"clientID": "dbgchat", "adapterID": "dbgchat", "linesStartAt1": true}),
        )?;
        adapter.refresh_stop()?;
        Ok(adapter)
    }

    fn refresh_stop(&mut self) -> Result<(), AdapterError> {
        if let Some(body) = self.client.wait_event("stopped", self.event_timeout)? {
            self.stop_reason = body["reason"].as_str().map(str::to_string);
        }
        Ok(())
    }

    pub fn stop_reason(&self) -> Option<&str> {
        self.stop_reason.as_deref()
    }

    pub fn client(&mut self) -> &mut DapClient<Box<dyn Transport>> {
        &mut self.client
    }

    fn stack_trace(&mut self, levels: usize) -> Result<Vec<(i64, StackFrame)>, AdapterError> {
        let body = self.client.request(
            "stackTrace",
            json!({"threadId": THREAD_ID, "startFrame": 0, "levels": levels}),
        )?;
        let frames = body["stackFrames"]
            .as_array()
            .ok_or_else(|| violation("stackTrace response has no stackFrames"))?;
        if frames.len() > levels {
            return Err(violation(format!("asked for {levels} frames, got {}", frames.len())));
        }
        frames
            .iter()
            .enumerate()
            .map(|(index, f)| {
                let id = f["id"].as_i64().ok_or_else(|| violation("frame without id"))?;
                let name = f["name"].as_str().ok_or_else(|| violation("frame without name"))?;
                let file = f["source"]["path"].as_str().unwrap_or("<unknown>");
                let line = f["line"].as_u64().unwrap_or(0) as u32;
                let frame = StackFrame {
                    index,
                    function_name: name.to_string(),
                    location: SourceLocation::new(file, line),
                    locals: Vec::new(),
                    external: f["presentationHint"] == "subtle",
                };
                Ok((id, frame))
            })
            .collect()
    }

    fn variables(&mut self, reference: i64) -> Result<Vec<DapVariable>, AdapterError> {
        let body = self
            .client
            .request("variables", json!({"variablesReference": reference}))?;
        let vars = body["variables"]
            .as_array()
            .ok_or_else(|| violation("variables response has no variables"))?;
        vars.iter()
            .map(|v| {
                Ok(DapVariable {
                    name: v["name"]
                        .as_str()
                        .ok_or_else(|| violation("variable without name"))?
                        .to_string(),
                    value: v["value"].as_str().unwrap_or_default().to_string(),
                    reference: v["variablesReference"].as_i64().unwrap_or(0),
                })
            })
            .collect()
    }

    fn locals(&mut self, frame_id: i64) -> Result<Vec<DapVariable>, AdapterError> {
        let body = self.client.request("scopes", json!({"frameId": frame_id}))?;
        let scopes = body["scopes"]
            .as_array()
            .ok_or_else(|| violation("scopes response has no scopes"))?;
        let mut out = Vec::new();
        for s in scopes {
            let reference = s["variablesReference"].as_i64().unwrap_or(0);
            if reference > 0 {
                out.extend(self.variables(reference)?);
            }
        }
        Ok(out)
    }

    fn evaluate(&mut self, expression: &str, frame_id: Option<i64>) -> Result<DapVariable, AdapterError> {
        let mut args = json!({"expression": expression, "context": "repl"});
        if let Some(id) = frame_id {
            args["frameId"] = json!(id);
        }
        let body = self.client.request("evaluate", args)?;
        Ok(DapVariable {
            name: expression.to_string(),
            value: body["result"]
                .as_str()
                .ok_or_else(|| violation("evaluate response has no result"))?
                .to_string(),
            reference: body["variablesReference"].as_i64().unwrap_or(0),
        })
    }

    fn exception(&mut self, frame_id: Option<i64>) -> Result<ExceptionRecord, AdapterError> {
        let root = self.evaluate("$exception", frame_id)?;
        self.exception_from(root, 0)
    }

    fn exception_from(&mut self, var: DapVariable, depth: usize) -> Result<ExceptionRecord, AdapterError> {
        if depth > 64 {
            return Err(violation("exception chain is too deep"));
        }
        if var.value.is_empty() {
            return Err(violation("exception without a type name"));
        }
        let children = if var.reference > 0 {
            self.variables(var.reference)?
        } else {
            Vec::new()
        };
        let mut message = String::new();
        let mut thrown_at = SourceLocation::new("<unknown>", 0);
        let mut inner = None;
        for child in children {
            match child.name.as_str() {
                "Message" => message = child.value,
                "ThrownAt" => {
                    thrown_at =
                        parse_site(&child.value).ok_or_else(|| violation(format!("bad ThrownAt {:?}", child.value)))?
                }
                "InnerException" => {
                    inner = Some(Box::new(self.exception_from(child, depth + 1)?));
                }
                _ => {}
            }
        }
        Ok(ExceptionRecord {
            type_name: var.value,
            message,
            inner,
            thrown_at,
        })
    }

    fn pseudo_list(&mut self, expression: &str) -> Result<Vec<DapVariable>, AdapterError> {
        let root = match self.evaluate(expression, None) {
            Ok(v) => v,
            // Adapters without the extension simply have nothing to add.
            Err(AdapterError::RequestFailed { .. }) => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        if root.reference > 0 {
            self.variables(root.reference)
        } else {
            Ok(Vec::new())
        }
    }
}

struct DapVariable {
    name: String,
    value: String,
    reference: i64,
}

fn violation(msg: impl Into<String>) -> AdapterError {
    AdapterError::ProtocolViolation(msg.into())
}

/// `file:line` optionally followed by ` (function)`.
fn render_site(loc: &SourceLocation) -> String {
    match &loc.function {
        Some(f) => format!("{} ({f})", loc.key()),
        None => loc.key(),
    }
}

fn parse_site(text: &str) -> Option<SourceLocation> {
    match text.strip_suffix(')').and_then(|t| t.rsplit_once(" (")) {
        Some((key, function)) => Some(SourceLocation::parse_key(key)?.in_function(function)),
        None => SourceLocation::parse_key(text),
    }
}

/// Capture the exception, stack and locals with the default limits.
pub fn capture_context(adapter: &mut DebugAdapter) -> Result<DebugContext, AdapterError> {
    capture_context_with(adapter, CaptureLimits::default())
}

pub fn capture_context_with(adapter: &mut DebugAdapter, limits: CaptureLimits) -> Result<DebugContext, AdapterError> {
    if adapter.stop_reason() != Some("exception") {
        return Err(AdapterError::AdapterUnavailable(
            "the debuggee is not stopped at an exception".into(),
        ));
    }
    let frames = adapter.stack_trace(limits.frame_fetch_limit)?;
    let top_id = frames.first().map(|(id, _)| *id);
    let mut out_frames = Vec::with_capacity(frames.len());
    for (i, (id, mut frame)) in frames.into_iter().enumerate() {
        if i < limits.fetch_locals_depth {
            frame.locals = adapter
                .locals(id)?
                .into_iter()
                .map(|v| VariableBinding::new(v.name, v.value).clipped(limits.value_render_limit))
                .collect();
        }
        out_frames.push(frame);
    }
    let exception = adapter.exception(top_id)?;
    let breakpoints = adapter
        .pseudo_list("$breakpoints")?
        .iter()
        .map(|v| parse_site(&v.value).ok_or_else(|| violation(format!("bad site {:?}", v.value))))
        .collect::<Result<Vec<_>, _>>()?;
    // Excerpts for frames beyond the fetch limit have nothing to anchor to.
    let source_excerpts = adapter
        .pseudo_list("$sources")?
        .into_iter()
        .filter(|v| {
            out_frames
                .iter()
                .map(|f| &f.location)
                .chain(&breakpoints)
                .any(|l| l.key() == v.name)
        })
        .map(|v| (v.name, v.value))
        .collect::<BTreeMap<_, _>>();
    let ctx = DebugContext {
        exception,
        frames: out_frames,
        source_excerpts,
        breakpoints,
    };
    ctx.validate().map_err(AdapterError::ProtocolViolation)?;
    Ok(ctx)
}

/// Run to a breakpoint at `loc` and read the watched variables there.
pub fn observe_at_breakpoint(
    adapter: &mut DebugAdapter,
    loc: &SourceLocation,
    watch: &[String],
) -> Result<Vec<VariableBinding>, AdapterError> {
    let body = adapter.client.request(
        "setBreakpoints",
        json!({"source": {"path": loc.file}, "breakpoints": [{"line": loc.line}]}),
    )?;
    let verified = body["breakpoints"][0]["verified"].as_bool().unwrap_or(false);
    if !verified {
        return Err(AdapterError::UnknownLocation(loc.clone()));
    }
    adapter.client.discard_events("stopped");
    adapter.client.request("continue", json!({"threadId": THREAD_ID}))?;
    adapter.stop_reason = None;
    adapter.refresh_stop()?;
    if adapter.stop_reason() != Some("breakpoint") {
        return Err(AdapterError::UnknownLocation(loc.clone()));
    }
    let (top_id, top) = adapter
        .stack_trace(1)?
        .into_iter()
        .next()
        .ok_or_else(|| violation("stopped without a stack"))?;
    if !top.location.same_place(loc) {
        return Err(AdapterError::UnknownLocation(loc.clone()));
    }
    let locals = adapter.locals(top_id)?;
    watch
        .iter()
        .map(|name| {
            locals
                .iter()
                .find(|v| &v.name == name)
                .map(|v| VariableBinding::new(&v.name, &v.value))
                .ok_or_else(|| AdapterError::UnknownVariable(name.clone()))
        })
        .collect()
}

// --------------------------------------------------------------- simulated

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Exception,
    Breakpoint(usize),
    Exited,
}

/// A debug adapter whose program state comes from a scenario.
pub struct SimulatedAdapterServer {
    scenario: Scenario,
    decoder: Decoder,
    seq: u64,
    stop: Option<Stop>,
    breakpoints: BTreeMap<String, Vec<u32>>,
    refs: Vec<Vec<(String, String, i64)>>,
}

impl SimulatedAdapterServer {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            decoder: Decoder::default(),
            seq: 0,
            stop: None,
            breakpoints: BTreeMap::new(),
            refs: Vec::new(),
        }
    }

    /// Consume client bytes, returning the adapter's replies.
    pub fn handle_bytes(&mut self, bytes: &[u8]) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        for msg in self.decoder.feed(bytes)? {
            if msg.kind != MessageKind::Request {
                continue;
            }
            for reply in self.handle_request(&msg)? {
                out.extend(encode_message(&reply)?);
            }
        }
        Ok(out)
    }

    /// Serve the protocol over arbitrary byte streams until EOF.
    pub fn serve(mut self, mut input: impl Read, mut output: impl Write) -> io::Result<()> {
        let mut buf = [0u8; 4096];
        loop {
            let n = input.read(&mut buf)?;
            if n == 0 {
                return Ok(());
            }
            let replies = self
                .handle_bytes(&buf[..n])
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
            output.write_all(&replies)?;
            output.flush()?;
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn register(&mut self, vars: Vec<(String, String, i64)>) -> i64 {
        self.refs.push(vars);
        self.refs.len() as i64
    }

    fn ok(&mut self, req: &WireMessage, body: Value) -> Result<WireMessage, CodecError> {
        let seq = self.next_seq();
        WireMessage::response(seq, req.seq, &req.command_or_event, body)
    }

    fn fail(&mut self, req: &WireMessage, message: &str) -> WireMessage {
        let seq = self.next_seq();
        WireMessage::error_response(seq, req.seq, &req.command_or_event, message)
    }

    fn event(&mut self, name: &str, body: Value) -> Result<WireMessage, CodecError> {
        let seq = self.next_seq();
        WireMessage::event(seq, name, body)
    }

    /// Frames visible at the current stop, as (function, location, locals, external).
    fn current_frames(&self) -> Vec<(String, SourceLocation, Vec<VariableBinding>, bool)> {
        match self.stop {
            Some(Stop::Exception) => self
                .scenario
                .frames
                .iter()
                .map(|f| {
                    (
                        f.function_name.clone(),
                        f.location.clone(),
                        f.locals.clone(),
                        f.external,
                    )
                })
                .collect(),
            Some(Stop::Breakpoint(i)) => {
                let obs = &self.scenario.breakpoint_observations[i];
                let function = obs.location.function.clone().unwrap_or_else(|| "<unknown>".into());
                vec![(function, obs.location.clone(), obs.bindings.clone(), false)]
            }
            Some(Stop::Exited) | None => Vec::new(),
        }
    }

    fn handle_request(&mut self, req: &WireMessage) -> Result<Vec<WireMessage>, CodecError> {
        let args = &req.body;
        let stopped = matches!(self.stop, Some(Stop::Exception | Stop::Breakpoint(_)));
        let reply = match req.command_or_event.as_str() {
            "initialize" => {
                let mut out = vec![self.ok(
                    req,
                    json!({"supportsConfigurationDoneRequest": false, "supportsEvaluateForHovers": true}),
                )?];
                if self.stop.is_none() && self.scenario.stopped {
                    self.stop = Some(Stop::Exception);
                    let description = self.scenario.exception.type_name.clone();
                    out.push(self.event(
                        "stopped",
                        json!({"reason": "exception", "threadId": THREAD_ID, "description": description, "allThreadsStopped": true}),
                    )?);
                }
                return Ok(out);
            }
            "stackTrace" if stopped => {
                let frames = self.current_frames();
                let start = args["startFrame"].as_u64().unwrap_or(0) as usize;
                let levels = match args["levels"].as_u64() {
                    Some(0) | None => usize::MAX,
                    Some(n) => n as usize,
                };
                let total = frames.len();
                let listed: Vec<Value> = frames
                    .into_iter()
                    .enumerate()
                    .skip(start)
                    .take(levels)
                    .map(|(i, (name, loc, _, external))| {
                        let mut f = json!({
                            "id": i + 1,
                            "name": name,
                            "source": {"name": loc.file, "path": loc.file},
                            "line": loc.line,
                            "column": 1,
                        });
                        if external {
                            f["presentationHint"] = json!("subtle");
                        }
                        f
                    })
                    .collect();
                self.ok(req, json!({"stackFrames": listed, "totalFrames": total}))?
            }
            "scopes" if stopped => {
                let frames = self.current_frames();
                let id = args["frameId"].as_i64().unwrap_or(0);
                match usize::try_from(id - 1).ok().and_then(|i| frames.get(i)) {
                    Some((_, _, locals, _)) => {
                        let vars = locals
                            .iter()
                            .map(|b| (b.name.clone(), b.rendered_value.clone(), 0))
                            .collect();
                        let r = self.register(vars);
                        self.ok(
                            req,
                            json!({"scopes": [{"name": "Locals", "variablesReference": r, "expensive": false}]}),
                        )?
                    }
                    None => self.fail(req, "unknown frame"),
                }
            }
            "variables" => {
                let r = args["variablesReference"].as_i64().unwrap_or(0);
                match usize::try_from(r - 1).ok().and_then(|i| self.refs.get(i)) {
                    Some(vars) => {
                        let listed: Vec<Value> = vars
                            .iter()
                            .map(|(n, v, r)| json!({"name": n, "value": v, "variablesReference": r}))
                            .collect();
                        self.ok(req, json!({"variables": listed}))?
                    }
                    None => self.fail(req, "unknown variables reference"),
                }
            }
            "evaluate" => self.evaluate(req)?,
            "setBreakpoints" => {
                let path = args["source"]["path"].as_str().unwrap_or_default().to_string();
                let lines: Vec<u32> = args["breakpoints"]
                    .as_array()
                    .map(|bs| bs.iter().filter_map(|b| b["line"].as_u64()).map(|l| l as u32).collect())
                    .unwrap_or_default();
                let listed: Vec<Value> = lines
                    .iter()
                    .enumerate()
                    .map(|(i, &line)| {
                        let verified = self
                            .scenario
                            .observation_at(&SourceLocation::new(&path, line))
                            .is_some();
                        json!({"id": i + 1, "verified": verified, "line": line})
                    })
                    .collect();
                self.breakpoints.insert(path, lines);
                self.ok(req, json!({"breakpoints": listed}))?
            }
            "continue" if stopped => {
                let reply = self.ok(req, json!({"allThreadsContinued": true}))?;
                self.refs.clear();
                let hit = self.scenario.breakpoint_observations.iter().position(|o| {
                    self.breakpoints
                        .get(&o.location.file)
                        .is_some_and(|lines| lines.contains(&o.location.line))
                });
                let event = match hit {
                    Some(i) => {
                        self.stop = Some(Stop::Breakpoint(i));
                        self.event(
                            "stopped",
                            json!({"reason": "breakpoint", "threadId": THREAD_ID, "allThreadsStopped": true}),
                        )?
                    }
                    None => {
                        self.stop = Some(Stop::Exited);
                        self.event("terminated", json!({}))?
                    }
                };
                return Ok(vec![reply, event]);
            }
            "stackTrace" | "scopes" | "continue" => self.fail(req, "the debuggee is not stopped"),
            other => {
                let message = format!("unsupported command {other}");
                self.fail(req, &message)
            }
        };
        Ok(vec![reply])
    }

    fn evaluate(&mut self, req: &WireMessage) -> Result<WireMessage, CodecError> {
        let expr = req.body["expression"].as_str().unwrap_or_default().trim().to_string();
        match expr.as_str() {
            "$exception" if self.stop == Some(Stop::Exception) => {
                let exception = self.scenario.exception.clone();
                let r = self.register_exception(&exception);
                self.ok(req, json!({"result": exception.type_name, "variablesReference": r}))
            }
            "$breakpoints" => {
                let sites = self
                    .scenario
                    .breakpoint_observations
                    .iter()
                    .enumerate()
                    .map(|(i, o)| (i.to_string(), render_site(&o.location), 0))
                    .collect();
                let r = self.register(sites);
                self.ok(req, json!({"result": "breakpoint sites", "variablesReference": r}))
            }
            "$sources" => {
                let excerpts = self
                    .scenario
                    .source_excerpts
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone(), 0))
                    .collect();
                let r = self.register(excerpts);
                self.ok(req, json!({"result": "source excerpts", "variablesReference": r}))
            }
            name => {
                let frame = req.body["frameId"].as_i64().unwrap_or(1);
                let frames = self.current_frames();
                let value = usize::try_from(frame - 1)
                    .ok()
                    .and_then(|i| frames.get(i))
                    .and_then(|(_, _, locals, _)| locals.iter().find(|b| b.name == name))
                    .map(|b| b.rendered_value.clone());
                match value {
                    Some(v) => self.ok(req, json!({"result": v, "variablesReference": 0})),
                    None => Ok(self.fail(req, &format!("cannot evaluate {name:?}"))),
                }
            }
        }
    }

    fn register_exception(&mut self, e: &ExceptionRecord) -> i64 {
        let mut children = vec![
            ("Message".to_string(), e.message.clone(), 0),
            ("ThrownAt".to_string(), render_site(&e.thrown_at), 0),
        ];
        if let Some(inner) = &e.inner {
            let r = self.register_exception(inner);
            children.push(("InnerException".to_string(), inner.type_name.clone(), r));
        }
        self.register(children)
    }
}

/// In-process pipe to a [`SimulatedAdapterServer`]. Replies are handed
/// back in small chunks so the client's incremental decoder is exercised.
pub struct SimulatedTransport {
    server: SimulatedAdapterServer,
    pending: VecDeque<u8>,
    chunk: usize,
}

impl SimulatedTransport {
    pub fn new(server: SimulatedAdapterServer) -> Self {
        Self {
            server,
            pending: VecDeque::new(),
            chunk: 64,
        }
    }

    pub fn with_chunk_size(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }
}

impl Transport for SimulatedTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        let replies = self
            .server
            .handle_bytes(bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        self.pending.extend(replies);
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let n = self.chunk.min(self.pending.len());
        Ok(Some(self.pending.drain(..n).collect()))
    }
}

/// Stdio pipe to a spawned adapter process.
pub struct ChildTransport {
    stdin: ChildStdin,
    chunks: Receiver<io::Result<Vec<u8>>>,
}

impl ChildTransport {
    pub fn spawn(program: &str, args: &[String]) -> io::Result<(Self, Child)> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            loop {
                match stdout.read(&mut buf) {
                    Ok(n) => {
                        if tx.send(Ok(buf[..n].to_vec())).is_err() || n == 0 {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });
        Ok((Self { stdin, chunks: rx }, child))
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stdin.write_all(bytes)?;
        self.stdin.flush()
    }

    fn recv(&mut self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        match self.chunks.recv_timeout(timeout) {
            Ok(chunk) => chunk.map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Ok(Some(Vec::new())),
        }
    }
}

impl Drop for DebugAdapter {
    fn drop(&mut self) {
        if let Some(child) = self._child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioSet;

    fn adapter(id: &str) -> DebugAdapter {
        DebugAdapter::simulated(ScenarioSet::bundled().get(id).unwrap()).unwrap()
    }

    #[test]
    fn task1_context() {
        let ctx = capture_context(&mut adapter("task1")).unwrap();
        assert_eq!(ctx.exception.type_name, "SerializationException");
        assert!(ctx
            .frames
            .iter()
            .take(FETCH_LOCALS_DEPTH)
            .any(|f| f.locals.iter().any(|b| b.name == "serialized")));
        assert!(ctx.frames[0].external);
        assert!(!ctx.frames[1].external);
        assert_eq!(ctx.breakpoints.len(), 2);
        assert_eq!(ctx.breakpoints[0].function.as_deref(), Some("RoundTrip"));
    }

    #[test]
    fn capture_matches_scenario() {
        for s in ScenarioSet::bundled().iter() {
            let ctx = capture_context(&mut DebugAdapter::simulated(s).unwrap()).unwrap();
            assert_eq!(ctx.exception, s.exception);
            assert_eq!(ctx.source_excerpts, s.source_excerpts);
            assert_eq!(ctx.frames.len(), s.frames.len());
            for (got, want) in ctx.frames.iter().zip(&s.frames) {
                assert_eq!(got.function_name, want.function_name);
                assert!(got.location.same_place(&want.location));
                if got.index < FETCH_LOCALS_DEPTH {
                    assert_eq!(got.locals, want.locals);
                } else {
                    assert!(got.locals.is_empty());
                }
            }
        }
    }

    #[test]
    fn not_stopped_is_unavailable() {
        let mut s = ScenarioSet::bundled().get("task1").unwrap().clone();
        s.stopped = false;
        let mut a = DebugAdapter::simulated(&s).unwrap();
        assert!(matches!(
            capture_context(&mut a),
            Err(AdapterError::AdapterUnavailable(_))
        ));
    }

    #[test]
    fn deep_stack_is_limited() {
        let mut s = ScenarioSet::bundled().get("warmup").unwrap().clone();
        let template = s.frames[0].clone();
        s.frames = (0..50)
            .map(|i| StackFrame {
                index: i,
                function_name: format!("Demo.Recursive.Step{i}"),
                location: SourceLocation::new("Recursive.cs", 10 + i as u32),
                ..template.clone()
            })
            .collect();
        s.source_excerpts.clear();
        let ctx = capture_context(&mut DebugAdapter::simulated(&s).unwrap()).unwrap();
        assert_eq!(ctx.frames.len(), 32);
        assert!(ctx.frames.iter().enumerate().all(|(i, f)| f.index == i));
        assert_eq!(ctx.frames[31].function_name, "Demo.Recursive.Step31");
    }

    #[test]
    fn long_values_are_clipped() {
        let mut s = ScenarioSet::bundled().get("warmup").unwrap().clone();
        s.frames[0].locals[0].rendered_value = "x".repeat(500);
        let ctx = capture_context(&mut DebugAdapter::simulated(&s).unwrap()).unwrap();
        let b = &ctx.frames[0].locals[0];
        assert_eq!(b.rendered_value.chars().count(), VALUE_RENDER_LIMIT);
        assert!(b.value_truncated);
    }

    #[test]
    fn breakpoint_observations() {
        let mut a = adapter("task2");
        let loc = SourceLocation::new("ScalarNodeDeserializer.cs", 186);
        let got = observe_at_breakpoint(&mut a, &loc, &["result".into()]).unwrap();
        assert_eq!(got[0].rendered_value, "9223372036854775808");

        let mut a = adapter("task1");
        let loc = SourceLocation::new("PersonStore.cs", 17);
        let got = observe_at_breakpoint(&mut a, &loc, &["serialized".into()]).unwrap();
        assert_eq!(got[0].rendered_value, "");
    }

    #[test]
    fn breakpoint_errors() {
        let mut a = adapter("task2");
        let loc = SourceLocation::new("ScalarNodeDeserializer.cs", 186);
        assert!(matches!(
            observe_at_breakpoint(&mut a, &loc, &["nope".into()]),
            Err(AdapterError::UnknownVariable(v)) if v == "nope"
        ));
        let mut a = adapter("task2");
        let loc = SourceLocation::new("ScalarNodeDeserializer.cs", 1);
        assert!(matches!(
            observe_at_breakpoint(&mut a, &loc, &["result".into()]),
            Err(AdapterError::UnknownLocation(_))
        ));
    }

    #[test]
    fn sites_round_trip() {
        let loc = SourceLocation::new("A (copy).cs", 3).in_function("Go");
        assert_eq!(parse_site(&render_site(&loc)), Some(loc));
        let plain = SourceLocation::new("B.cs", 9);
        assert_eq!(parse_site(&render_site(&plain)), Some(plain));
    }

    #[test]
    fn mismatched_response_is_a_violation() {
        struct Liar(VecDeque<u8>);
        impl Transport for Liar {
            fn send(&mut self, _bytes: &[u8]) -> io::Result<()> {
                let m = WireMessage::response(1, 99, "initialize", json!({})).unwrap();
                self.0.extend(encode_message(&m).unwrap());
                Ok(())
            }
            fn recv(&mut self, _t: Duration) -> io::Result<Option<Vec<u8>>> {
                Ok((!self.0.is_empty()).then(|| self.0.drain(..).collect()))
            }
        }
        let r = DebugAdapter::connect(Box::new(Liar(VecDeque::new())), None, Duration::ZERO);
        assert!(matches!(r, Err(AdapterError::ProtocolViolation(_))));
    }
}
