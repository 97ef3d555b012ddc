//! Conformance vectors for the response grammar and the wire frames.
//!
//! The vector files live in `vectors/` and are embedded at build time so any
//! build can check itself; other implementations can read the same files.

use serde::{Deserialize, Serialize};

use crate::gateway::{decode_frame, Frame};
use crate::protocol::{parse, serialize, Axis};

pub const PROTOCOL_VECTORS: &str = include_str!("../vectors/protocol.json");
pub const FRAME_VECTORS: &str = include_str!("../vectors/frames.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolExpectation {
    Parsed { canonical: String, warnings: Vec<String> },
    Rejected { error: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolVector {
    pub name: String,
    pub input: String,
    pub expect: ProtocolExpectation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameExpectation {
    /// Decodes to a frame of this type.
    Accepted(String),
    Rejected {
        reject: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameVector {
    pub name: String,
    pub line: String,
    pub expect: FrameExpectation,
}

#[derive(Deserialize)]
struct ProtocolFile {
    vectors: Vec<ProtocolVector>,
}

#[derive(Deserialize)]
struct FrameFile {
    frames: Vec<FrameVector>,
}

pub fn protocol_vectors() -> Vec<ProtocolVector> {
    serde_json::from_str::<ProtocolFile>(PROTOCOL_VECTORS).expect("embedded protocol vectors are valid").vectors
}

pub fn frame_vectors() -> Vec<FrameVector> {
    serde_json::from_str::<FrameFile>(FRAME_VECTORS).expect("embedded frame vectors are valid").frames
}

/// What the parser makes of `input`, in the vector file's terms.
pub fn describe_response(input: &str) -> ProtocolExpectation {
    match parse(input) {
        Ok(p) => ProtocolExpectation::Parsed {
            canonical: serialize(&p.response),
            warnings: p
                .warnings
                .iter()
                .map(|w| match w.canonicalized {
                    Axis::X => "x".to_string(),
                    Axis::Y => "y".to_string(),
                })
                .collect(),
        },
        Err(e) => ProtocolExpectation::Rejected { error: e.kind.category().to_string(), offset: e.offset },
    }
}

pub fn check_protocol_vector(v: &ProtocolVector) -> Result<(), String> {
    let got = describe_response(&v.input);
    if got == v.expect {
        Ok(())
    } else {
        Err(format!("{}: expected {:?}, got {:?}", v.name, v.expect, got))
    }
}

pub fn describe_frame(line: &str) -> FrameExpectation {
    match decode_frame(line) {
        Ok(Frame::Request(_)) => FrameExpectation::Accepted("request".into()),
        Ok(Frame::Reply(_)) => FrameExpectation::Accepted("reply".into()),
        Ok(Frame::Error(_)) => FrameExpectation::Accepted("error".into()),
        Err(e) => FrameExpectation::Rejected { reject: e.category().to_string() },
    }
}

pub fn check_frame_vector(v: &FrameVector) -> Result<(), String> {
    let got = describe_frame(&v.line);
    if got == v.expect {
        Ok(())
    } else {
        Err(format!("{}: expected {:?}, got {:?}", v.name, v.expect, got))
    }
}

/// Failures across both embedded vector sets.
pub fn run_embedded() -> Vec<String> {
    protocol_vectors()
        .iter()
        .filter_map(|v| check_protocol_vector(v).err())
        .chain(frame_vectors().iter().filter_map(|v| check_frame_vector(v).err()))
        .collect()
}
