//! Agent response grammar: landmark identification plus a discrete motion
//! command.
//!
//! Canonical wire form (one line, attribute order fixed, enums uppercase):
//!
//! ```text
//! <response><landmark index="I">NAME</landmark><reasoning>TEXT</reasoning><move x_dir="DX" x_mag="EX" y_dir="DY" y_mag="EY"/></response>
//! ```
//!
//! `NAME` and `TEXT` escape `&`, `<`, `>`, `"` as the usual XML entities and
//! line breaks as `&#10;` / `&#13;`. The parser accepts much more than this:
//! surrounding prose, any case in tag names and enum tokens, attributes in any
//! order with either quote style, optional whitespace between elements, and
//! a missing `<reasoning>` element.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::LandmarkSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HorizontalDirection {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerticalDirection {
    Up,
    Center,
    Down,
}

/// Step size token; 0, 30, 60 or 90 mm (see [`crate::geometry::magnitude_mm`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Magnitude {
    None,
    Small,
    Moderate,
    Large,
}

impl Magnitude {
    pub const ALL: [Magnitude; 4] = [Magnitude::None, Magnitude::Small, Magnitude::Moderate, Magnitude::Large];
}

macro_rules! token_enum {
    ($ty:ty { $($variant:ident => $tok:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $tok),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = ();

            /// Case-insensitive, surrounding whitespace ignored.
            fn from_str(s: &str) -> Result<Self, ()> {
                let s = s.trim();
                $(if s.eq_ignore_ascii_case($tok) { return Ok(Self::$variant); })+
                Err(())
            }
        }
    };
}

token_enum!(HorizontalDirection { Left => "LEFT", Center => "CENTER", Right => "RIGHT" });
token_enum!(VerticalDirection { Up => "UP", Center => "CENTER", Down => "DOWN" });
token_enum!(Magnitude { None => "NONE", Small => "SMALL", Moderate => "MODERATE", Large => "LARGE" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// `(d_x, e_x, d_y, e_y)`. Canonical commands satisfy CENTER ⇔ NONE per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionCommand {
    pub x_dir: HorizontalDirection,
    pub x_mag: Magnitude,
    pub y_dir: VerticalDirection,
    pub y_mag: Magnitude,
}

impl MotionCommand {
    pub fn zero() -> Self {
        Self {
            x_dir: HorizontalDirection::Center,
            x_mag: Magnitude::None,
            y_dir: VerticalDirection::Center,
            y_mag: Magnitude::None,
        }
    }

    pub fn is_canonical(&self) -> bool {
        (self.x_dir == HorizontalDirection::Center) == (self.x_mag == Magnitude::None)
            && (self.y_dir == VerticalDirection::Center) == (self.y_mag == Magnitude::None)
    }

    /// Collapse inconsistent axes to CENTER/NONE, reporting which ones changed.
    pub fn canonicalize(self) -> (Self, Vec<Axis>) {
        let mut out = self;
        let mut fixed = Vec::new();
        if (out.x_dir == HorizontalDirection::Center) != (out.x_mag == Magnitude::None) {
            out.x_dir = HorizontalDirection::Center;
            out.x_mag = Magnitude::None;
            fixed.push(Axis::X);
        }
        if (out.y_dir == VerticalDirection::Center) != (out.y_mag == Magnitude::None) {
            out.y_dir = VerticalDirection::Center;
            out.y_mag = Magnitude::None;
            fixed.push(Axis::Y);
        }
        (out, fixed)
    }
}

/// One agent turn: nearest landmark, free-text reasoning, motion command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub landmark_index: u8,
    pub landmark_name: String,
    pub reasoning: String,
    pub command: MotionCommand,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResponseError {
    #[error("landmark name {0:?} is not a registered variant")]
    UnknownName(String),
    #[error("landmark name {name:?} belongs to index {resolved}, not {index}")]
    Mismatch { index: u8, name: String, resolved: u8 },
    #[error("landmark name {0:?} has surrounding whitespace")]
    Untrimmed(String),
    #[error("motion command is not canonical (CENTER must pair with NONE)")]
    NonCanonical,
}

impl AgentResponse {
    pub fn validate(&self, schema: &LandmarkSchema) -> Result<(), ResponseError> {
        if self.landmark_name.trim() != self.landmark_name {
            return Err(ResponseError::Untrimmed(self.landmark_name.clone()));
        }
        let resolved = schema
            .resolve(&self.landmark_name)
            .ok_or_else(|| ResponseError::UnknownName(self.landmark_name.clone()))?;
        if resolved != self.landmark_index {
            return Err(ResponseError::Mismatch {
                index: self.landmark_index,
                name: self.landmark_name.clone(),
                resolved,
            });
        }
        if !self.command.is_canonical() {
            return Err(ResponseError::NonCanonical);
        }
        Ok(())
    }
}

fn escape(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let entity = &rest[1..semi];
            let ch = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ => {
                    let code = if let Some(hex) = entity.strip_prefix("#x").or_else(|| entity.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok()
                    } else if let Some(dec) = entity.strip_prefix('#') {
                        dec.parse::<u32>().ok()
                    } else {
                        None
                    };
                    code.and_then(char::from_u32)
                }
            };
            ch.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            // Unknown entity: keep the ampersand literally.
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Canonical single-line form.
pub fn serialize(resp: &AgentResponse) -> String {
    let mut out = String::with_capacity(160 + resp.reasoning.len());
    out.push_str("<response><landmark index=\"");
    out.push_str(&resp.landmark_index.to_string());
    out.push_str("\">");
    escape(&resp.landmark_name, &mut out);
    out.push_str("</landmark><reasoning>");
    escape(&resp.reasoning, &mut out);
    out.push_str("</reasoning><move x_dir=\"");
    out.push_str(resp.command.x_dir.as_str());
    out.push_str("\" x_mag=\"");
    out.push_str(resp.command.x_mag.as_str());
    out.push_str("\" y_dir=\"");
    out.push_str(resp.command.y_dir.as_str());
    out.push_str("\" y_mag=\"");
    out.push_str(resp.command.y_mag.as_str());
    out.push_str("\"/></response>");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingBlock,
    Unclosed { tag: String },
    MissingElement { element: String },
    MalformedAttribute,
    DuplicateAttribute { name: String },
    MissingAttribute { element: String, name: String },
    BadIndex { value: String },
    UnknownEnum { attribute: String, token: String },
    UnknownLandmark { name: String },
    IndexNameMismatch { index: u8, name: String, resolved: u8 },
}

impl ParseErrorKind {
    /// Stable snake-case category, used by the conformance vectors.
    pub fn category(&self) -> &'static str {
        match self {
            Self::MissingBlock => "missing_block",
            Self::Unclosed { .. } => "unclosed",
            Self::MissingElement { .. } => "missing_element",
            Self::MalformedAttribute => "malformed_attribute",
            Self::DuplicateAttribute { .. } => "duplicate_attribute",
            Self::MissingAttribute { .. } => "missing_attribute",
            Self::BadIndex { .. } => "bad_index",
            Self::UnknownEnum { .. } => "unknown_enum",
            Self::UnknownLandmark { .. } => "unknown_landmark",
            Self::IndexNameMismatch { .. } => "index_name_mismatch",
        }
    }

    /// Structural problems make the parser move on to the next candidate block.
    fn is_structural(&self) -> bool {
        matches!(
            self,
            Self::Unclosed { .. }
                | Self::MissingElement { .. }
                | Self::MalformedAttribute
                | Self::DuplicateAttribute { .. }
                | Self::MissingAttribute { .. }
        )
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingBlock => write!(f, "no <response> block found"),
            Self::Unclosed { tag } => write!(f, "<{tag}> is not closed"),
            Self::MissingElement { element } => write!(f, "missing <{element}> element"),
            Self::MalformedAttribute => write!(f, "malformed attribute list"),
            Self::DuplicateAttribute { name } => write!(f, "attribute {name} given twice"),
            Self::MissingAttribute { element, name } => write!(f, "<{element}> lacks attribute {name}"),
            Self::BadIndex { value } => write!(f, "landmark index {value:?} is not in 1..=14"),
            Self::UnknownEnum { attribute, token } => write!(f, "unknown {attribute} token {token:?}"),
            Self::UnknownLandmark { name } => write!(f, "unknown landmark name {name:?}"),
            Self::IndexNameMismatch { index, name, resolved } => {
                write!(f, "index {index} does not match {name:?} (landmark {resolved})")
            }
        }
    }
}

/// Parse failure with the byte offset into the original text.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Non-fatal note produced while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub offset: usize,
    /// Axis that was collapsed to CENTER/NONE.
    pub canonicalized: Axis,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.canonicalized {
            Axis::X => "x",
            Axis::Y => "y",
        };
        write!(f, "byte {}: {axis} axis had CENTER or NONE alone; read as no movement", self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub response: AgentResponse,
    pub warnings: Vec<ParseWarning>,
    /// Byte range of the accepted block.
    pub span: (usize, usize),
}

/// Parse against the standard landmark schema.
pub fn parse(text: &str) -> Result<ParsedResponse, ParseError> {
    parse_with_schema(text, &LandmarkSchema::standard())
}

pub fn parse_with_schema(text: &str, schema: &LandmarkSchema) -> Result<ParsedResponse, ParseError> {
    let scanner = Scanner { text, lower: text.to_ascii_lowercase() };
    let mut first_error = None;
    let mut from = 0;
    while let Some((open, body_start)) = scanner.find_open("response", from) {
        match scanner.parse_block(open, body_start, schema) {
            Ok(parsed) => return Ok(parsed),
            Err(err) if err.kind.is_structural() => {
                first_error.get_or_insert(err);
                from = body_start;
            }
            Err(err) => return Err(err),
        }
    }
    Err(first_error.unwrap_or(ParseError { offset: 0, kind: ParseErrorKind::MissingBlock }))
}

struct Scanner<'a> {
    text: &'a str,
    /// ASCII-lowercased copy; byte offsets coincide with `text`.
    lower: String,
}

struct Element<'a> {
    start: usize,
    attrs: Vec<(String, &'a str, usize)>,
    /// Content byte range; `None` for self-closing elements.
    content: Option<(usize, usize)>,
}

fn err(offset: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { offset, kind }
}

impl<'a> Scanner<'a> {
    /// Find `<tag` followed by whitespace, `>` or `/` at or after `from`.
    /// Returns the offset of `<` and the offset just past the tag name.
    fn find_open(&self, tag: &str, from: usize) -> Option<(usize, usize)> {
        let needle = format!("<{tag}");
        let mut pos = from;
        while let Some(rel) = self.lower.get(pos..)?.find(&needle) {
            let at = pos + rel;
            let after = at + needle.len();
            match self.lower.as_bytes().get(after) {
                Some(b'>' | b'/') | Some(b' ' | b'\t' | b'\n' | b'\r') => return Some((at, after)),
                _ => pos = after,
            }
        }
        None
    }

    fn find_close(&self, tag: &str, from: usize, limit: usize) -> Option<(usize, usize)> {
        let needle = format!("</{tag}");
        let rel = self.lower.get(from..limit)?.find(&needle)?;
        let at = from + rel;
        let mut end = at + needle.len();
        let bytes = self.lower.as_bytes();
        while end < limit && bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        (end < limit && bytes[end] == b'>').then_some((at, end + 1))
    }

    /// Parse attributes starting at `pos`; returns them with the position just
    /// past the closing `>` and whether the tag was self-closing.
    #[allow(clippy::type_complexity)]
    fn attributes(
        &self,
        mut pos: usize,
        limit: usize,
    ) -> Result<(Vec<(String, &'a str, usize)>, usize, bool), ParseError> {
        let bytes = self.text.as_bytes();
        let mut attrs: Vec<(String, &'a str, usize)> = Vec::new();
        loop {
            while pos < limit && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= limit {
                return Err(err(pos.min(self.text.len()), ParseErrorKind::MalformedAttribute));
            }
            match bytes[pos] {
                b'>' => return Ok((attrs, pos + 1, false)),
                b'/' if bytes.get(pos + 1) == Some(&b'>') && pos + 1 < limit => return Ok((attrs, pos + 2, true)),
                _ => {}
            }
            let name_start = pos;
            while pos < limit && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_' || bytes[pos] == b'-') {
                pos += 1;
            }
            if pos == name_start {
                return Err(err(pos, ParseErrorKind::MalformedAttribute));
            }
            let name = self.lower[name_start..pos].to_string();
            while pos < limit && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= limit || bytes[pos] != b'=' {
                return Err(err(pos.min(self.text.len()), ParseErrorKind::MalformedAttribute));
            }
            pos += 1;
            while pos < limit && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= limit || !matches!(bytes[pos], b'"' | b'\'') {
                return Err(err(pos.min(self.text.len()), ParseErrorKind::MalformedAttribute));
            }
            let quote = bytes[pos];
            let value_start = pos + 1;
            let Some(rel) = bytes[value_start..limit].iter().position(|&b| b == quote) else {
                return Err(err(pos, ParseErrorKind::MalformedAttribute));
            };
            let value_end = value_start + rel;
            if attrs.iter().any(|(n, _, _)| *n == name) {
                return Err(err(name_start, ParseErrorKind::DuplicateAttribute { name }));
            }
            attrs.push((name, &self.text[value_start..value_end], value_start));
            pos = value_end + 1;
        }
    }

    fn element(&self, tag: &str, from: usize, limit: usize) -> Result<Option<Element<'a>>, ParseError> {
        let Some((start, name_end)) = self.find_open(tag, from).filter(|(s, _)| *s < limit) else {
            return Ok(None);
        };
        let (attrs, after, self_closing) = self.attributes(name_end, limit)?;
        if self_closing {
            return Ok(Some(Element { start, attrs, content: None }));
        }
        let (close, _) = self
            .find_close(tag, after, limit)
            .ok_or_else(|| err(start, ParseErrorKind::Unclosed { tag: tag.into() }))?;
        Ok(Some(Element { start, attrs, content: Some((after, close)) }))
    }

    fn parse_block(&self, open: usize, name_end: usize, schema: &LandmarkSchema) -> Result<ParsedResponse, ParseError> {
        let (_, body_start, self_closing) = self.attributes(name_end, self.text.len())?;
        if self_closing {
            return Err(err(open, ParseErrorKind::MissingElement { element: "landmark".into() }));
        }
        let (body_end, block_end) = self
            .find_close("response", body_start, self.text.len())
            .ok_or_else(|| err(open, ParseErrorKind::Unclosed { tag: "response".into() }))?;

        let landmark = self
            .element("landmark", body_start, body_end)?
            .ok_or_else(|| err(body_start, ParseErrorKind::MissingElement { element: "landmark".into() }))?;
        let (name_from, name_to) =
            landmark.content.ok_or_else(|| err(landmark.start, ParseErrorKind::Unclosed { tag: "landmark".into() }))?;
        let index_attr = attr(&landmark, "landmark", "index")?;

        let reasoning = match self.element("reasoning", body_start, body_end)? {
            Some(Element { content: Some((a, b)), .. }) => unescape(&self.text[a..b]),
            Some(Element { start, content: None, .. }) => {
                return Err(err(start, ParseErrorKind::Unclosed { tag: "reasoning".into() }))
            }
            None => String::new(),
        };

        let mv = self
            .element("move", body_start, body_end)?
            .ok_or_else(|| err(body_start, ParseErrorKind::MissingElement { element: "move".into() }))?;
        let x_dir = attr(&mv, "move", "x_dir")?;
        let x_mag = attr(&mv, "move", "x_mag")?;
        let y_dir = attr(&mv, "move", "y_dir")?;
        let y_mag = attr(&mv, "move", "y_mag")?;

        // Semantic checks: the block is well formed from here on.
        let index_text = index_attr.0.trim();
        let index = index_text
            .parse::<u8>()
            .ok()
            .filter(|i| schema.get(*i).is_some())
            .ok_or_else(|| err(index_attr.1, ParseErrorKind::BadIndex { value: index_attr.0.into() }))?;
        let name = unescape(&self.text[name_from..name_to]).trim().to_string();
        let resolved = schema
            .resolve(&name)
            .ok_or_else(|| err(name_from, ParseErrorKind::UnknownLandmark { name: name.clone() }))?;
        if resolved != index {
            return Err(err(name_from, ParseErrorKind::IndexNameMismatch { index, name, resolved }));
        }
        fn token<T: FromStr>(a: (&str, usize), attribute: &str) -> Result<T, ParseError> {
            a.0.parse::<T>()
                .map_err(|_| err(a.1, ParseErrorKind::UnknownEnum { attribute: attribute.into(), token: a.0.into() }))
        }
        let raw = MotionCommand {
            x_dir: token(x_dir, "x_dir")?,
            x_mag: token(x_mag, "x_mag")?,
            y_dir: token(y_dir, "y_dir")?,
            y_mag: token(y_mag, "y_mag")?,
        };
        let (command, fixed) = raw.canonicalize();
        let warnings = fixed
            .into_iter()
            .map(|axis| ParseWarning {
                offset: match axis {
                    Axis::X => x_dir.1,
                    Axis::Y => y_dir.1,
                },
                canonicalized: axis,
            })
            .collect();
        Ok(ParsedResponse {
            response: AgentResponse { landmark_index: index, landmark_name: name, reasoning, command },
            warnings,
            span: (open, block_end),
        })
    }
}

fn attr<'a>(el: &Element<'a>, element: &str, name: &str) -> Result<(&'a str, usize), ParseError> {
    el.attrs
        .iter()
        .find(|(n, _, _)| n == name)
        .map(|(_, v, off)| (*v, *off))
        .ok_or_else(|| err(el.start, ParseErrorKind::MissingAttribute { element: element.into(), name: name.into() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use HorizontalDirection as H;
    use Magnitude as M;
    use VerticalDirection as V;

    fn skull(command: MotionCommand) -> AgentResponse {
        AgentResponse {
            landmark_index: 1,
            landmark_name: "Skull".into(),
            reasoning: "Cranial vault centred.".into(),
            command,
        }
    }

    #[test]
    fn zero_move_serialization() {
        let text = serialize(&skull(MotionCommand::zero()));
        assert_eq!(
            text,
            "<response><landmark index=\"1\">Skull</landmark><reasoning>Cranial vault centred.</reasoning>\
             <move x_dir=\"CENTER\" x_mag=\"NONE\" y_dir=\"CENTER\" y_mag=\"NONE\"/></response>"
        );
    }

    #[test]
    fn move_attributes_exact() {
        let cmd = MotionCommand { x_dir: H::Right, x_mag: M::Small, y_dir: V::Up, y_mag: M::Large };
        let text = serialize(&skull(cmd));
        assert!(text.contains("x_dir=\"RIGHT\" x_mag=\"SMALL\" y_dir=\"UP\" y_mag=\"LARGE\""));
        assert_eq!(parse(&text).unwrap().response.command, cmd);
    }

    #[test]
    fn tolerates_prose_case_and_layout() {
        let text = "Sure! Here is my answer:\n\n<Response>\n  <move y_mag='small' x_dir=\"left\" x_mag=\"Moderate\" y_dir=\"down\" />\n  \
                    <landmark index=\" 10 \"> first thoracic vertebra </landmark>\n</RESPONSE> trailing";
        let parsed = parse(text).unwrap();
        assert_eq!(parsed.response.landmark_index, 10);
        assert_eq!(parsed.response.landmark_name, "first thoracic vertebra");
        assert_eq!(parsed.response.reasoning, "");
        assert_eq!(
            parsed.response.command,
            MotionCommand { x_dir: H::Left, x_mag: M::Moderate, y_dir: V::Down, y_mag: M::Small }
        );
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.span.0, text.find("<Response>").unwrap());
    }

    #[test]
    fn canonicalization_rule_table() {
        // (dir, mag) -> (canonical dir, canonical mag, warned)
        let cases = [
            ("LEFT", "NONE", H::Center, M::None, true),
            ("RIGHT", "NONE", H::Center, M::None, true),
            ("CENTER", "LARGE", H::Center, M::None, true),
            ("CENTER", "SMALL", H::Center, M::None, true),
            ("CENTER", "NONE", H::Center, M::None, false),
            ("LEFT", "SMALL", H::Left, M::Small, false),
        ];
        for (d, m, cd, cm, warned) in cases {
            let text = format!(
                "<response><landmark index=\"1\">Skull</landmark><move x_dir=\"{d}\" x_mag=\"{m}\" y_dir=\"CENTER\" y_mag=\"NONE\"/></response>"
            );
            let parsed = parse(&text).unwrap();
            assert_eq!((parsed.response.command.x_dir, parsed.response.command.x_mag), (cd, cm), "{d}/{m}");
            assert_eq!(!parsed.warnings.is_empty(), warned, "{d}/{m}");
            if warned {
                assert_eq!(parsed.warnings[0].canonicalized, Axis::X);
                assert_eq!(parsed.warnings[0].offset, text.find(d).unwrap());
            }
        }
    }

    #[test]
    fn unknown_enum_is_reported_with_offset() {
        let text = "<response><landmark index=\"1\">Skull</landmark><move x_dir=\"LEFT\" x_mag=\"HUGE\" y_dir=\"UP\" y_mag=\"SMALL\"/></response>";
        let e = parse(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownEnum { attribute: "x_mag".into(), token: "HUGE".into() });
        assert_eq!(e.offset, text.find("HUGE").unwrap());
    }

    #[test]
    fn landmark_errors() {
        let e = parse("<response><landmark index=\"3\">Femur</landmark><move x_dir=\"CENTER\" x_mag=\"NONE\" y_dir=\"CENTER\" y_mag=\"NONE\"/></response>").unwrap_err();
        assert_eq!(e.kind.category(), "unknown_landmark");
        let e = parse("<response><landmark index=\"3\">Skull</landmark><move x_dir=\"CENTER\" x_mag=\"NONE\" y_dir=\"CENTER\" y_mag=\"NONE\"/></response>").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::IndexNameMismatch { index: 3, name: "Skull".into(), resolved: 1 });
        let e = parse("<response><landmark index=\"15\">Skull</landmark><move x_dir=\"CENTER\" x_mag=\"NONE\" y_dir=\"CENTER\" y_mag=\"NONE\"/></response>").unwrap_err();
        assert_eq!(e.kind.category(), "bad_index");
    }

    #[test]
    fn structural_errors() {
        assert_eq!(parse("no xml here").unwrap_err().kind, ParseErrorKind::MissingBlock);
        assert_eq!(parse("").unwrap_err().kind, ParseErrorKind::MissingBlock);
        assert_eq!(parse("<response><landmark index=\"1\">Skull</landmark>").unwrap_err().kind.category(), "unclosed");
        assert_eq!(
            parse("<response><landmark index=\"1\">Skull</landmark></response>").unwrap_err().kind,
            ParseErrorKind::MissingElement { element: "move".into() }
        );
        assert_eq!(
            parse("<response><landmark index=\"1\">Skull</landmark><move x_dir=\"LEFT\"/></response>")
                .unwrap_err()
                .kind,
            ParseErrorKind::MissingAttribute { element: "move".into(), name: "x_mag".into() }
        );
        assert_eq!(
            parse("<response><landmark index=1>Skull</landmark></response>").unwrap_err().kind,
            ParseErrorKind::MalformedAttribute
        );
    }

    #[test]
    fn skips_broken_block_for_later_well_formed_one() {
        let good = serialize(&skull(MotionCommand::zero()));
        let text = format!("draft: <response><landmark index=\"1\">Sk</response>\nfinal: {good}");
        let parsed = parse(&text).unwrap();
        assert_eq!(parsed.response, skull(MotionCommand::zero()));
    }

    #[test]
    fn reasoning_with_markup_round_trips() {
        let mut r = skull(MotionCommand::zero());
        r.reasoning = "a < b & \"c\" > d\nline two\r\n&amp; literal".into();
        let text = serialize(&r);
        assert!(!text.contains('\n'));
        assert_eq!(parse(&text).unwrap().response, r);
    }

    #[test]
    fn unescape_keeps_unknown_entities() {
        assert_eq!(unescape("&bogus; &#65;&#x42; &"), "&bogus; AB &");
        assert_eq!(unescape("&#xFFFFFFFF;"), "&#xFFFFFFFF;");
    }
}
