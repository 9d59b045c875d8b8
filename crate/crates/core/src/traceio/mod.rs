//! Text trace format.
//!
//! One event per line, `#` starts a comment:
//!
//! ```text
//! alloc NAME SIZE [high]        realloc NAME NEW SIZE
//! store LOC PTREXPR             free PTREXPR
//! storei LOC INT                period
//! load LOC                      flush
//! expect-live NAME              expect-released NAME
//! expect-value LOC VALUE
//!
//! LOC     ::= stack:K | global:K | NAME[+OFF]
//! PTREXPR ::= NAME[+OFF] | null
//! VALUE   ::= PTREXPR | INT | absent
//! ```
//!
//! Numbers are decimal or `0x` hex. Names must be bound by `alloc` or
//! `realloc` before use, and offsets must fall inside the bound object.

mod corpus;
mod generate;

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::minfat::size_class;
use crate::simspace::{SLOT_COUNT, WORD_BYTES};

pub use corpus::{cwe416_corpus, CorpusTrace};
pub use generate::{generate, Pattern, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Loc {
    Stack(u64),
    Global(u64),
    Field { name: String, offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PtrExpr {
    Null,
    Name { name: String, offset: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ExpectedValue {
    Absent,
    Data(u64),
    Ptr(PtrExpr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Alloc { name: String, size: u64, high: bool },
    Store { loc: Loc, value: PtrExpr },
    StoreData { loc: Loc, value: u64 },
    Load { loc: Loc },
    Free { ptr: PtrExpr },
    Realloc { old: String, new: String, size: u64 },
    Period,
    Flush,
    ExpectLive(String),
    ExpectReleased(String),
    ExpectValue { loc: Loc, value: ExpectedValue },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub line: usize,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub events: Vec<TraceLine>,
}

impl Trace {
    pub fn from_events(events: impl IntoIterator<Item = TraceEvent>) -> Self {
        Trace { events: events.into_iter().enumerate().map(|(i, event)| TraceLine { line: i + 1, event }).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().map(|l| &l.event)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

struct LineParser<'a, 'n> {
    line: usize,
    tokens: Vec<Token<'a>>,
    pos: usize,
    end_column: usize,
    sizes: &'n HashMap<String, u64>,
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !matches!(s, "null" | "absent" | "high")
}

fn parse_number(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => s.replace('_', "").parse().ok(),
    }
}

impl<'a, 'n> LineParser<'a, 'n> {
    fn err<T>(&self, column: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: self.line, column, message: message.into() })
    }

    fn next(&mut self, what: &str) -> Result<Token<'a>, ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(Token { text: t.text, column: t.column })
            }
            None => self.err(self.end_column, format!("expected {what}")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) => self.err(t.column, format!("unexpected {:?}", t.text)),
            None => Ok(()),
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, ParseError> {
        let t = self.next(what)?;
        parse_number(t.text).map_or_else(|| self.err(t.column, format!("bad {what} {:?}", t.text)), Ok)
    }

    fn size(&mut self) -> Result<u64, ParseError> {
        let column = self.tokens.get(self.pos).map_or(self.end_column, |t| t.column);
        let size = self.number("size")?;
        match size_class(size) {
            Ok(_) => Ok(size),
            Err(e) => self.err(column, e.to_string()),
        }
    }

    fn fresh_name(&mut self) -> Result<String, ParseError> {
        let t = self.next("name")?;
        if !is_name(t.text) {
            return self.err(t.column, format!("bad name {:?}", t.text));
        }
        Ok(t.text.to_string())
    }

    fn known_name(&self, text: &str, column: usize) -> Result<u64, ParseError> {
        if !is_name(text) {
            return self.err(column, format!("bad name {text:?}"));
        }
        match self.sizes.get(text) {
            Some(&size) => Ok(size),
            None => self.err(column, format!("unknown name {text:?}")),
        }
    }

    fn bound_name(&mut self) -> Result<String, ParseError> {
        let t = self.next("name")?;
        self.known_name(t.text, t.column)?;
        Ok(t.text.to_string())
    }

    /// `NAME[+OFF]` with the offset checked against the bound object.
    fn name_offset(&self, t: &Token<'a>) -> Result<(String, u64), ParseError> {
        let (name, offset) = match t.text.split_once('+') {
            Some((name, off)) => match parse_number(off) {
                Some(off) => (name, off),
                None => return self.err(t.column + name.len() + 1, format!("bad offset {off:?}")),
            },
            None => (t.text, 0),
        };
        let alloc_size = self.known_name(name, t.column)?;
        if offset >= alloc_size {
            return self.err(t.column, format!("offset {offset:#x} outside {name} ({alloc_size} bytes)"));
        }
        Ok((name.to_string(), offset))
    }

    fn loc(&mut self) -> Result<Loc, ParseError> {
        let t = self.next("location")?;
        let slot = |s: &str| parse_number(s).filter(|&k| k < SLOT_COUNT);
        if let Some(k) = t.text.strip_prefix("stack:") {
            return slot(k).map_or_else(|| self.err(t.column, format!("bad stack slot {k:?}")), |k| Ok(Loc::Stack(k)));
        }
        if let Some(k) = t.text.strip_prefix("global:") {
            return slot(k)
                .map_or_else(|| self.err(t.column, format!("bad global slot {k:?}")), |k| Ok(Loc::Global(k)));
        }
        let (name, offset) = self.name_offset(&t)?;
        if offset % WORD_BYTES != 0 {
            return self.err(t.column, format!("location offset {offset:#x} is not word aligned"));
        }
        Ok(Loc::Field { name, offset })
    }

    fn ptr_token(&self, t: &Token<'a>) -> Result<PtrExpr, ParseError> {
        if t.text == "null" {
            return Ok(PtrExpr::Null);
        }
        let (name, offset) = self.name_offset(t)?;
        Ok(PtrExpr::Name { name, offset })
    }

    fn ptr(&mut self) -> Result<PtrExpr, ParseError> {
        let t = self.next("pointer")?;
        self.ptr_token(&t)
    }

    fn expected(&mut self) -> Result<ExpectedValue, ParseError> {
        let t = self.next("value")?;
        if t.text == "absent" {
            return Ok(ExpectedValue::Absent);
        }
        if t.text.starts_with(|c: char| c.is_ascii_digit()) {
            return parse_number(t.text)
                .map(ExpectedValue::Data)
                .map_or_else(|| self.err(t.column, format!("bad integer {:?}", t.text)), Ok);
        }
        self.ptr_token(&t).map(ExpectedValue::Ptr)
    }
}

/// Parses trace text into events, validating names and offsets as it goes.
pub fn parse(text: &str) -> Result<Trace, ParseError> {
    let mut sizes: HashMap<String, u64> = HashMap::new();
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    tokens.push(Token { text: &body[s..i], column: s + 1 });
                    start = None;
                }
                _ => {}
            }
        }
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser { line, tokens, pos: 0, end_column: body.trim_end().len() + 1, sizes: &sizes };
        let head = p.next("event")?;
        let event = match head.text {
            "alloc" => {
                let name = p.fresh_name()?;
                let size = p.size()?;
                let high = match p.tokens.get(p.pos) {
                    Some(t) if t.text == "high" => {
                        p.pos += 1;
                        true
                    }
                    _ => false,
                };
                TraceEvent::Alloc { name, size, high }
            }
            "store" => TraceEvent::Store { loc: p.loc()?, value: p.ptr()? },
            "storei" => TraceEvent::StoreData { loc: p.loc()?, value: p.number("integer")? },
            "load" => TraceEvent::Load { loc: p.loc()? },
            "free" => TraceEvent::Free { ptr: p.ptr()? },
            "realloc" => {
                let old = p.bound_name()?;
                let new = p.fresh_name()?;
                let size = p.size()?;
                TraceEvent::Realloc { old, new, size }
            }
            "period" => TraceEvent::Period,
            "flush" => TraceEvent::Flush,
            "expect-live" => TraceEvent::ExpectLive(p.bound_name()?),
            "expect-released" => TraceEvent::ExpectReleased(p.bound_name()?),
            "expect-value" => TraceEvent::ExpectValue { loc: p.loc()?, value: p.expected()? },
            other => return p.err(head.column, format!("unknown event {other:?}")),
        };
        p.finish()?;
        match &event {
            TraceEvent::Alloc { name, size, .. } | TraceEvent::Realloc { new: name, size, .. } => {
                let class = size_class(*size).expect("validated above");
                sizes.insert(name.clone(), class.alloc_size);
            }
            _ => {}
        }
        events.push(TraceLine { line, event });
    }
    Ok(Trace { events })
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loc::Stack(k) => write!(f, "stack:{k}"),
            Loc::Global(k) => write!(f, "global:{k}"),
            Loc::Field { name, offset } => write!(f, "{name}+{offset:#x}"),
        }
    }
}

impl fmt::Display for PtrExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PtrExpr::Null => f.write_str("null"),
            PtrExpr::Name { name, offset: 0 } => f.write_str(name),
            PtrExpr::Name { name, offset } => write!(f, "{name}+{offset:#x}"),
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Alloc { name, size, high } => {
                write!(f, "alloc {name} {size}{}", if *high { " high" } else { "" })
            }
            TraceEvent::Store { loc, value } => write!(f, "store {loc} {value}"),
            TraceEvent::StoreData { loc, value } => write!(f, "storei {loc} {value}"),
            TraceEvent::Load { loc } => write!(f, "load {loc}"),
            TraceEvent::Free { ptr } => write!(f, "free {ptr}"),
            TraceEvent::Realloc { old, new, size } => write!(f, "realloc {old} {new} {size}"),
            TraceEvent::Period => f.write_str("period"),
            TraceEvent::Flush => f.write_str("flush"),
            TraceEvent::ExpectLive(name) => write!(f, "expect-live {name}"),
            TraceEvent::ExpectReleased(name) => write!(f, "expect-released {name}"),
            TraceEvent::ExpectValue { loc, value } => match value {
                ExpectedValue::Absent => write!(f, "expect-value {loc} absent"),
                ExpectedValue::Data(v) => write!(f, "expect-value {loc} {v}"),
                ExpectedValue::Ptr(p) => write!(f, "expect-value {loc} {p}"),
            },
        }
    }
}

/// One event per line; parses back to the same events.
pub fn render<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> String {
    let mut out = String::new();
    for event in events {
        let _ = writeln!(out, "{event}");
    }
    out
}
