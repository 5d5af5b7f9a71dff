//! Tolerant extraction of state changes from generated SQL.
//!
//! Model output is noisy, so the parser works in tiers: the exact grammar,
//! then bare (unqualified) slot names when a single table is referenced,
//! then statements surrounded by junk text. The tier used is reported with
//! the result. Parsing is a single left-to-right scan bounded by the first
//! `;`, so runtime is linear in the input length.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Schema, SlotKey, SlotValue, StateChange, DELETE_MARKER, RESERVED_DOMAIN};

/// How many `SELECT` keywords are tried before giving up.
const MAX_CANDIDATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlErrorKind {
    Parse,
    UnknownDomain,
    UnknownSlot,
    AmbiguousBareSlot,
}

impl fmt::Display for SqlErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SqlErrorKind::Parse => "parse_error",
            SqlErrorKind::UnknownDomain => "unknown_domain",
            SqlErrorKind::UnknownSlot => "unknown_slot",
            SqlErrorKind::AmbiguousBareSlot => "ambiguous_bare_slot",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind} at {}..{}: {message}", span.start, span.end)]
pub struct SqlError {
    pub kind: SqlErrorKind,
    /// Byte range of the offending text in the parsed input.
    pub span: Range<usize>,
    pub message: String,
}

impl SqlError {
    fn new(kind: SqlErrorKind, span: Range<usize>, message: impl Into<String>) -> Self {
        Self {
            kind,
            span,
            message: message.into(),
        }
    }
}

/// Most tolerant rule that was needed to read the statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseTier {
    Exact,
    BareSlot,
    JunkStripped,
}

impl fmt::Display for ParseTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseTier::Exact => "exact",
            ParseTier::BareSlot => "bare_slot",
            ParseTier::JunkStripped => "junk_stripped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSql {
    /// `(alias, domain)` in `FROM` order; the alias is the table name when
    /// none was given.
    pub referenced_domains: Vec<(String, String)>,
    pub where_pairs: StateChange,
    pub tier: ParseTier,
    /// True for the `FROM none` no-change sentinel.
    pub sentinel: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    Str(String),
    Star,
    Comma,
    Dot,
    Eq,
    Other(char),
}

#[derive(Debug)]
struct Token<'a> {
    tok: Tok<'a>,
    span: Range<usize>,
}

/// Tokenizes `input[start..]` up to the first `;` outside quotes.
/// Returns the tokens and the byte offset just past the terminator.
fn tokenize(input: &str, start: usize) -> Result<(Vec<Token<'_>>, usize), SqlError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b';' => return Ok((tokens, i + 1)),
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'\'' | b'"' => {
                let quote = b;
                let mut value = Vec::new();
                let mut j = i + 1;
                loop {
                    match bytes.get(j) {
                        None => {
                            return Err(SqlError::new(
                                SqlErrorKind::Parse,
                                i..bytes.len(),
                                "unterminated string literal",
                            ))
                        }
                        Some(&c) if c == quote => {
                            if bytes.get(j + 1) == Some(&quote) {
                                value.push(quote);
                                j += 2;
                            } else {
                                break;
                            }
                        }
                        Some(&c) => {
                            value.push(c);
                            j += 1;
                        }
                    }
                }
                // Only ASCII quote bytes were removed, so this is valid UTF-8.
                let value = String::from_utf8(value).expect("slice of valid UTF-8 between ASCII quotes");
                tokens.push(Token {
                    tok: Tok::Str(value),
                    span: i..j + 1,
                });
                i = j + 1;
            }
            b'*' | b',' | b'.' | b'=' => {
                let tok = match b {
                    b'*' => Tok::Star,
                    b',' => Tok::Comma,
                    b'.' => Tok::Dot,
                    _ => Tok::Eq,
                };
                tokens.push(Token { tok, span: i..i + 1 });
                i += 1;
            }
            _ if b.is_ascii_alphanumeric() || b == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                tokens.push(Token {
                    tok: Tok::Word(&input[i..j]),
                    span: i..j,
                });
                i = j;
            }
            _ => {
                let c = input[i..].chars().next().expect("index on char boundary");
                tokens.push(Token {
                    tok: Tok::Other(c),
                    span: i..i + c.len_utf8(),
                });
                i += c.len_utf8();
            }
        }
    }
    Ok((tokens, bytes.len()))
}

fn is_kw(tok: &Tok<'_>, kw: &str) -> bool {
    matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
}

fn is_reserved(word: &str) -> bool {
    ["select", "from", "where", "and", "as"]
        .iter()
        .any(|k| word.eq_ignore_ascii_case(k))
}

struct Cursor<'t, 'a> {
    tokens: &'t [Token<'a>],
    pos: usize,
    end: usize,
}

impl<'t, 'a> Cursor<'t, 'a> {
    fn peek(&self) -> Option<&'t Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'t Token<'a>> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek().is_some_and(|t| is_kw(&t.tok, kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> Range<usize> {
        self.peek().map_or(self.end..self.end, |t| t.span.clone())
    }

    fn err(&self, msg: &str) -> SqlError {
        SqlError::new(SqlErrorKind::Parse, self.here(), msg)
    }

    fn word(&mut self, what: &str) -> Result<(&'a str, Range<usize>), SqlError> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), span }) => {
                self.pos += 1;
                Ok((w, span.clone()))
            }
            _ => Err(self.err(&format!("expected {what}"))),
        }
    }
}

struct Condition<'a> {
    qualifier: Option<(&'a str, Range<usize>)>,
    slot: (&'a str, Range<usize>),
    value: String,
    quoted: bool,
    value_span: Range<usize>,
}

struct Statement<'a> {
    tables: Vec<(&'a str, Option<&'a str>, Range<usize>)>,
    conditions: Vec<Condition<'a>>,
}

fn parse_statement<'a>(tokens: &[Token<'a>], end: usize) -> Result<Statement<'a>, SqlError> {
    let mut c = Cursor { tokens, pos: 0, end };
    if !c.eat_kw("select") {
        return Err(c.err("expected SELECT"));
    }
    while !c.eat_kw("from") {
        if c.next().is_none() {
            return Err(c.err("missing FROM"));
        }
    }
    let mut tables = Vec::new();
    loop {
        let (name, span) = c.word("table name")?;
        let mut alias = None;
        if c.eat_kw("as") {
            alias = Some(c.word("alias")?.0);
        } else if let Some(Token { tok: Tok::Word(w), .. }) = c.peek() {
            if !is_reserved(w) {
                alias = Some(*w);
                c.pos += 1;
            }
        }
        tables.push((name, alias, span));
        if !matches!(c.peek(), Some(Token { tok: Tok::Comma, .. })) {
            break;
        }
        c.pos += 1;
    }
    let mut conditions = Vec::new();
    if c.eat_kw("where") {
        loop {
            let first = c.word("column")?;
            let (qualifier, slot) = if matches!(c.peek(), Some(Token { tok: Tok::Dot, .. })) {
                c.pos += 1;
                (Some(first), c.word("column after '.'")?)
            } else {
                (None, first)
            };
            if !matches!(c.next(), Some(Token { tok: Tok::Eq, .. })) {
                c.pos -= 1;
                return Err(c.err("expected '='"));
            }
            let (value, quoted, value_span) = match c.next() {
                Some(Token { tok: Tok::Str(s), span }) => (s.clone(), true, span.clone()),
                Some(Token { tok: Tok::Word(w), span }) => (w.to_string(), false, span.clone()),
                _ => {
                    c.pos -= 1;
                    return Err(c.err("expected value"));
                }
            };
            conditions.push(Condition {
                qualifier,
                slot,
                value,
                quoted,
                value_span,
            });
            if !c.eat_kw("and") {
                break;
            }
        }
    }
    if c.peek().is_some() {
        return Err(c.err("unexpected token"));
    }
    Ok(Statement { tables, conditions })
}

fn resolve(stmt: Statement<'_>, schema: &Schema) -> Result<ParsedSql, SqlError> {
    if let [(name, _, _)] = stmt.tables.as_slice() {
        if name.eq_ignore_ascii_case(RESERVED_DOMAIN) {
            if let Some(c) = stmt.conditions.first() {
                return Err(SqlError::new(
                    SqlErrorKind::Parse,
                    c.slot.1.clone(),
                    "no-change sentinel cannot carry conditions",
                ));
            }
            return Ok(ParsedSql {
                referenced_domains: Vec::new(),
                where_pairs: StateChange::new(),
                tier: ParseTier::Exact,
                sentinel: true,
            });
        }
    }
    let mut aliases: BTreeMap<String, String> = BTreeMap::new();
    let mut referenced = Vec::new();
    for (name, alias, span) in &stmt.tables {
        let domain = name.to_ascii_lowercase();
        if !schema.has_domain(&domain) {
            return Err(SqlError::new(
                SqlErrorKind::UnknownDomain,
                span.clone(),
                format!("unknown table {name:?}"),
            ));
        }
        let alias = alias.map_or_else(|| domain.clone(), str::to_ascii_lowercase);
        if aliases.insert(alias.clone(), domain.clone()).is_some() {
            return Err(SqlError::new(
                SqlErrorKind::Parse,
                span.clone(),
                format!("duplicate alias {alias:?}"),
            ));
        }
        referenced.push((alias, domain));
    }
    // A table may also be qualified by its own name.
    for (_, domain) in &referenced {
        aliases.entry(domain.clone()).or_insert_with(|| domain.clone());
    }

    let mut pairs = StateChange::new();
    let mut bare = false;
    for cond in stmt.conditions {
        let domain = match &cond.qualifier {
            Some((q, span)) => aliases.get(&q.to_ascii_lowercase()).cloned().ok_or_else(|| {
                SqlError::new(SqlErrorKind::UnknownDomain, span.clone(), format!("unknown alias {q:?}"))
            })?,
            None => {
                if referenced.len() != 1 {
                    return Err(SqlError::new(
                        SqlErrorKind::AmbiguousBareSlot,
                        cond.slot.1.clone(),
                        format!("bare column {:?} with {} tables", cond.slot.0, referenced.len()),
                    ));
                }
                bare = true;
                referenced[0].1.clone()
            }
        };
        let key = SlotKey::new(domain, cond.slot.0.to_ascii_lowercase());
        if !schema.contains(&key) {
            return Err(SqlError::new(
                SqlErrorKind::UnknownSlot,
                cond.slot.1.clone(),
                format!("unknown column {key}"),
            ));
        }
        let value = if cond.quoted && cond.value == DELETE_MARKER {
            SlotValue::Delete
        } else {
            let v = schema.canonicalize(&key, &cond.value).map_err(|e| {
                SqlError::new(SqlErrorKind::Parse, cond.value_span.clone(), e.to_string())
            })?;
            SlotValue::Value(v)
        };
        pairs.insert(key, value);
    }
    Ok(ParsedSql {
        referenced_domains: referenced,
        where_pairs: pairs,
        tier: if bare { ParseTier::BareSlot } else { ParseTier::Exact },
        sentinel: false,
    })
}

/// Byte offsets of whole-word, case-insensitive `select` keywords.
fn select_positions(input: &str) -> impl Iterator<Item = usize> + '_ {
    let bytes = input.as_bytes();
    let word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    (0..bytes.len().saturating_sub(5)).filter(move |&i| {
        bytes[i..i + 6].eq_ignore_ascii_case(b"select")
            && (i == 0 || !word(bytes[i - 1]))
            && bytes.get(i + 6).is_none_or(|&b| !word(b))
    })
}

/// Extracts the state change expressed by the first recognizable
/// `SELECT ... FROM ... [WHERE ...]` statement in `generated`.
pub fn parse_sql(generated: &str, schema: &Schema) -> Result<ParsedSql, SqlError> {
    let lead = generated.len() - generated.trim_start().len();
    let mut first_err = None;
    for start in select_positions(generated).take(MAX_CANDIDATES) {
        let attempt = tokenize(generated, start).and_then(|(tokens, stop)| {
            let stmt = parse_statement(&tokens, stop)?;
            let mut parsed = resolve(stmt, schema)?;
            let junk = start != lead || !generated[stop..].trim().is_empty();
            if junk {
                parsed.tier = ParseTier::JunkStripped;
            }
            Ok(parsed)
        });
        match attempt {
            Ok(p) => return Ok(p),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or_else(|| {
        SqlError::new(SqlErrorKind::Parse, 0..generated.len(), "no SELECT statement found")
    }))
}
