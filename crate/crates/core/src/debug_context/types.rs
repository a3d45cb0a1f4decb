use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::identifiers;

/// A file/line position, optionally tagged with the enclosing function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
}

impl SourceLocation {
    pub fn new(file: impl Into<String>, line: u32) -> Self {
        Self {
            file: file.into(),
            line,
            function: None,
        }
    }

    pub fn in_function(mut self, function: impl Into<String>) -> Self {
        self.function = Some(function.into());
        self
    }

    /// `file:line`, the key used for source excerpts and breakpoint sites.
    pub fn key(&self) -> String {
        format!("{}:{}", self.file, self.line)
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let (file, line) = key.rsplit_once(':')?;
        Some(Self::new(file, line.trim().parse().ok()?))
    }

    pub fn same_place(&self, other: &SourceLocation) -> bool {
        self.file == other.file && self.line == other.line
    }
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionRecord {
    pub type_name: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<Box<ExceptionRecord>>,
    pub thrown_at: SourceLocation,
}

impl ExceptionRecord {
    /// This exception followed by its inner chain, outermost first.
    pub fn chain(&self) -> impl Iterator<Item = &ExceptionRecord> {
        std::iter::successors(Some(self), |e| e.inner.as_deref())
    }

    pub fn short_type_name(&self) -> &str {
        self.type_name.rsplit('.').next().unwrap_or(&self.type_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableBinding {
    pub name: String,
    pub rendered_value: String,
    #[serde(default)]
    pub value_truncated: bool,
}

impl VariableBinding {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            rendered_value: value.into(),
            value_truncated: false,
        }
    }

    /// Clip the rendered value to `limit` characters, marking it truncated.
    pub fn clipped(&self, limit: usize) -> Self {
        if self.rendered_value.chars().count() <= limit {
            return self.clone();
        }
        Self {
            name: self.name.clone(),
            rendered_value: self.rendered_value.chars().take(limit).collect(),
            value_truncated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    pub index: usize,
    pub function_name: String,
    pub location: SourceLocation,
    #[serde(default)]
    pub locals: Vec<VariableBinding>,
    /// Library or framework code rather than the developer's own.
    #[serde(default)]
    pub external: bool,
}

impl StackFrame {
    pub fn short_function_name(&self) -> &str {
        short_function(&self.function_name)
    }
}

/// Last dotted segment of a qualified function name.
pub fn short_function(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

/// Whether two function names refer to the same method, ignoring qualification.
pub fn same_function(a: &str, b: &str) -> bool {
    short_function(a) == short_function(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugContext {
    pub exception: ExceptionRecord,
    pub frames: Vec<StackFrame>,
    /// Keyed by [`SourceLocation::key`].
    #[serde(default)]
    pub source_excerpts: BTreeMap<String, String>,
    #[serde(default)]
    pub breakpoints: Vec<SourceLocation>,
}

impl DebugContext {
    pub fn top_frame(&self) -> Option<&StackFrame> {
        self.frames.first()
    }

    pub fn excerpt_at(&self, loc: &SourceLocation) -> Option<&str> {
        self.source_excerpts.get(&loc.key()).map(String::as_str)
    }

    /// Every location the context knows about: frames, exception throw
    /// sites and breakpoint sites.
    pub fn known_locations(&self) -> impl Iterator<Item = &SourceLocation> {
        self.frames
            .iter()
            .map(|f| &f.location)
            .chain(self.exception.chain().map(|e| &e.thrown_at))
            .chain(self.breakpoints.iter())
    }

    pub fn knows_location(&self, loc: &SourceLocation) -> bool {
        self.known_locations().any(|l| l.same_place(loc))
    }

    /// Function enclosing `loc`, if the context can tell.
    pub fn function_at(&self, loc: &SourceLocation) -> Option<String> {
        if let Some(f) = &loc.function {
            return Some(f.clone());
        }
        if let Some(frame) = self.frames.iter().find(|f| f.location.same_place(loc)) {
            return Some(frame.short_function_name().to_string());
        }
        self.known_locations()
            .find(|l| l.same_place(loc) && l.function.is_some())
            .and_then(|l| l.function.clone())
    }

    pub fn find_local(&self, name: &str) -> Option<&VariableBinding> {
        self.frames
            .iter()
            .flat_map(|f| f.locals.iter())
            .find(|b| b.name == name)
    }

    /// Code identifiers mentioned anywhere in the context.
    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for e in self.exception.chain() {
            out.extend(identifiers(&e.type_name));
            out.extend(identifiers(&e.message));
            out.extend(location_identifiers(&e.thrown_at));
        }
        for f in &self.frames {
            out.extend(identifiers(&f.function_name));
            out.extend(location_identifiers(&f.location));
            for b in &f.locals {
                out.insert(b.name.clone());
            }
        }
        for b in &self.breakpoints {
            out.extend(location_identifiers(b));
        }
        for code in self.source_excerpts.values() {
            out.extend(identifiers(code));
        }
        out
    }

    /// Identifiers from the top frame: its function, locals and excerpt.
    pub fn top_frame_identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(f) = self.top_frame() {
            out.extend(identifiers(&f.function_name));
            out.extend(f.locals.iter().map(|b| b.name.clone()));
            if let Some(code) = self.excerpt_at(&f.location) {
                out.extend(identifiers(code));
            }
        }
        out
    }

    /// Structural checks: contiguous frame indices, non-empty and acyclic
    /// exception chain, excerpts anchored at known locations.
    pub fn validate(&self) -> Result<(), String> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(format!("frame {i} has index {}", f.index));
            }
        }
        if self.exception.chain().any(|e| e.type_name.is_empty()) {
            return Err("exception type name is empty".into());
        }
        if self.exception.chain().count() > 64 {
            return Err("exception chain is implausibly deep".into());
        }
        for key in self.source_excerpts.keys() {
            let anchored = self
                .frames
                .iter()
                .map(|f| &f.location)
                .chain(self.breakpoints.iter())
                .any(|l| &l.key() == key);
            if !anchored {
                return Err(format!("excerpt {key} is not at a frame or breakpoint"));
            }
        }
        Ok(())
    }
}

pub(crate) fn location_identifiers(loc: &SourceLocation) -> BTreeSet<String> {
    let mut out = identifiers(&loc.file);
    if let Some(f) = &loc.function {
        out.extend(identifiers(f));
    }
    out
}
