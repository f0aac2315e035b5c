//! A line-oriented reader for the subset of N-Triples we ingest.
//!
//! Subjects and predicates must be IRIs. Objects are either IRIs (kept) or
//! literals (counted and dropped). Blank nodes are rejected.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One `(subject, predicate, object)` statement with IRI labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl LabeledTriple {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Self {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTriples {
    pub records: Vec<LabeledTriple>,
    pub dropped_literals: usize,
}

enum Object {
    Iri(String),
    Literal,
}

pub fn parse_ntriples<R: BufRead>(mut reader: R) -> Result<ParsedTriples> {
    let mut parsed = ParsedTriples::default();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let terminated = buf.ends_with('\n');
        match parse_line(buf.trim_end_matches(['\n', '\r'])) {
            Ok(None) => {}
            Ok(Some((s, p, Object::Iri(o)))) => parsed.records.push(LabeledTriple::new(s, p, o)),
            Ok(Some((_, _, Object::Literal))) => parsed.dropped_literals += 1,
            Err(message) => {
                let message = if terminated {
                    message
                } else {
                    format!("truncated final line ({message})")
                };
                return Err(Error::Parse {
                    line: line_no,
                    message,
                });
            }
        }
    }
    Ok(parsed)
}

type Statement = (String, String, Object);

fn parse_line(line: &str) -> std::result::Result<Option<Statement>, String> {
    let mut cur = Cursor { rest: line };
    cur.skip_ws();
    if cur.rest.is_empty() || cur.rest.starts_with('#') {
        return Ok(None);
    }
    let subject = cur.iri("subject")?;
    cur.skip_ws();
    let predicate = cur.iri("predicate")?;
    cur.skip_ws();
    let object = if cur.rest.starts_with('"') {
        cur.literal()?;
        Object::Literal
    } else {
        Object::Iri(cur.iri("object")?)
    };
    cur.skip_ws();
    if !cur.rest.starts_with('.') {
        return Err("expected `.` terminator".into());
    }
    cur.rest = &cur.rest[1..];
    cur.skip_ws();
    if !(cur.rest.is_empty() || cur.rest.starts_with('#')) {
        return Err(format!("unexpected trailing content `{}`", cur.rest));
    }
    Ok(Some((subject, predicate, object)))
}

struct Cursor<'a> {
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start_matches([' ', '\t']);
    }

    fn iri(&mut self, what: &str) -> std::result::Result<String, String> {
        let Some(body) = self.rest.strip_prefix('<') else {
            return Err(format!("expected IRI for {what}"));
        };
        let end = body
            .find('>')
            .ok_or_else(|| format!("unterminated IRI for {what}"))?;
        let iri = &body[..end];
        if iri.is_empty() || iri.contains([' ', '<', '"']) {
            return Err(format!("invalid IRI `{iri}` for {what}"));
        }
        self.rest = &body[end + 1..];
        Ok(iri.to_string())
    }

    fn literal(&mut self) -> std::result::Result<(), String> {
        let mut chars = self.rest.char_indices().skip(1);
        let mut close = None;
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    chars.next();
                }
                '"' => {
                    close = Some(i);
                    break;
                }
                _ => {}
            }
        }
        let close = close.ok_or("unterminated literal")?;
        self.rest = &self.rest[close + 1..];
        if let Some(tag) = self.rest.strip_prefix('@') {
            let end = tag
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
                .unwrap_or(tag.len());
            if end == 0 {
                return Err("empty language tag".into());
            }
            self.rest = &tag[end..];
        } else if let Some(dt) = self.rest.strip_prefix("^^") {
            self.rest = dt;
            self.iri("datatype")?;
        }
        Ok(())
    }
}

/// Writes statements as N-Triples, one per line.
pub fn write_ntriples<'a, W, I>(mut out: W, triples: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
{
    for (s, p, o) in triples {
        writeln!(out, "<{s}> <{p}> <{o}> .")?;
    }
    Ok(())
}
