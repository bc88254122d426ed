//! Message exchange with out-of-process mechanisms.
//!
//! External-command mechanisms read one request frame on stdin and write one
//! reply frame on stdout, one process per call. A frame is a 4-byte
//! big-endian length followed by that many bytes of JSON. HTTP endpoint
//! mechanisms receive the same JSON as a POST body, unframed.
//!
//! Requests are `PROBE {behavior, params}` and `SUPPLY {behavior, params,
//! inputs}`; replies are `NEEDS {labels}`, `RESULT {mime, body}` and
//! `FAULT {message}`. Byte payloads are base64.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{BehaviorResult, Input, Inputs, InvokeReply, Mechanism, Params};

/// Frames above this size are refused when no tighter limit applies.
pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireInput {
    pub mime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(with = "b64")]
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "UPPERCASE")]
pub enum WireMessage {
    Probe {
        behavior: String,
        #[serde(default)]
        params: Params,
    },
    Supply {
        behavior: String,
        #[serde(default)]
        params: Params,
        inputs: BTreeMap<String, WireInput>,
    },
    Needs {
        labels: Vec<String>,
    },
    Result {
        mime: String,
        #[serde(with = "b64")]
        body: Vec<u8>,
    },
    Fault {
        message: String,
    },
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireMessage {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("wire messages serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, WireError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn reply(reply: Result<InvokeReply, crate::mechanisms::MechanismFault>) -> Self {
        match reply {
            Ok(InvokeReply::NeedsInput(labels)) => WireMessage::Needs { labels },
            Ok(InvokeReply::Result(r)) => WireMessage::Result { mime: r.mime, body: r.body },
            Err(fault) => WireMessage::Fault { message: fault.0 },
        }
    }
}

pub fn to_wire_inputs(inputs: &Inputs) -> BTreeMap<String, WireInput> {
    inputs
        .iter()
        .map(|(k, v)| (k.clone(), WireInput { mime: v.mime.clone(), url: v.url.clone(), body: v.body.clone() }))
        .collect()
}

pub fn from_wire_inputs(inputs: BTreeMap<String, WireInput>) -> Inputs {
    inputs
        .into_iter()
        .map(|(k, v)| (k, Input { mime: v.mime, body: v.body, url: v.url }))
        .collect()
}

pub fn encode_frame(message: &WireMessage) -> Vec<u8> {
    let json = message.to_json();
    let mut frame = Vec::with_capacity(json.len() + 4);
    frame.extend_from_slice(&(json.len() as u32).to_be_bytes());
    frame.extend_from_slice(&json);
    frame
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(bytes: &[u8], max: usize) -> Result<(WireMessage, usize), WireError> {
    let header: [u8; 4] = bytes.get(..4).ok_or(WireError::Truncated)?.try_into().expect("4 bytes");
    let len = u32::from_be_bytes(header) as usize;
    if len > max {
        return Err(WireError::TooLarge(len));
    }
    let body = bytes.get(4..4 + len).ok_or(WireError::Truncated)?;
    Ok((WireMessage::from_json(body)?, 4 + len))
}

pub fn read_frame<R: Read>(reader: &mut R, max: usize) -> Result<WireMessage, WireError> {
    let mut header = [0u8; 4];
    reader.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    let len = u32::from_be_bytes(header) as usize;
    if len > max {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).map_err(|_| WireError::Truncated)?;
    WireMessage::from_json(&body)
}

pub fn write_frame<W: Write>(writer: &mut W, message: &WireMessage) -> io::Result<()> {
    writer.write_all(&encode_frame(message))?;
    writer.flush()
}

/// Answers a single request message with `mechanism`.
pub fn handle(mechanism: &dyn Mechanism, request: WireMessage) -> WireMessage {
    match request {
        WireMessage::Probe { behavior, params } => WireMessage::reply(mechanism.invoke(&behavior, &params, &Inputs::new())),
        WireMessage::Supply { behavior, params, inputs } => {
            WireMessage::reply(mechanism.invoke(&behavior, &params, &from_wire_inputs(inputs)))
        }
        other => WireMessage::Fault { message: format!("expected PROBE or SUPPLY, got {}", other.kind()) },
    }
}

/// Serves one request frame from `input`, writing the reply frame to `output`.
pub fn serve_one<R: Read, W: Write>(mechanism: &dyn Mechanism, input: &mut R, output: &mut W) -> Result<(), WireError> {
    let reply = match read_frame(input, DEFAULT_MAX_FRAME) {
        Ok(request) => handle(mechanism, request),
        Err(e) => WireMessage::Fault { message: e.to_string() },
    };
    write_frame(output, &reply)?;
    Ok(())
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Probe { .. } => "PROBE",
            WireMessage::Supply { .. } => "SUPPLY",
            WireMessage::Needs { .. } => "NEEDS",
            WireMessage::Result { .. } => "RESULT",
            WireMessage::Fault { .. } => "FAULT",
        }
    }

    /// Interprets a reply message; request kinds are protocol errors.
    pub fn into_reply(self) -> Result<InvokeReply, String> {
        match self {
            WireMessage::Needs { labels } => Ok(InvokeReply::NeedsInput(labels)),
            WireMessage::Result { mime, body } => Ok(InvokeReply::Result(BehaviorResult { mime, body })),
            WireMessage::Fault { message } => Err(message),
            other => Err(format!("mechanism replied with a {} message", other.kind())),
        }
    }
}

/// Base64 helper shared by the JSON renderings of results.
pub fn encode_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_base64(s: &str) -> Option<Vec<u8>> {
    base64::engine::general_purpose::STANDARD.decode(s.trim().as_bytes()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::Gallery;
    use proptest::prelude::*;

    #[test]
    fn probe_over_frames() {
        let req = encode_frame(&WireMessage::Probe { behavior: "Description".into(), params: Params::new() });
        let mut out = Vec::new();
        serve_one(&Gallery, &mut req.as_slice(), &mut out).unwrap();
        let (reply, used) = decode_frame(&out, DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(used, out.len());
        assert_eq!(reply, WireMessage::Needs { labels: vec!["description".into()] });
    }

    #[test]
    fn junk_yields_fault() {
        let mut out = Vec::new();
        serve_one(&Gallery, &mut &b"\x00\x00\x00\x03abc"[..], &mut out).unwrap();
        assert!(matches!(decode_frame(&out, 1 << 20).unwrap().0, WireMessage::Fault { .. }));
        assert!(matches!(decode_frame(&[0, 0, 0, 9, b'{'], 1 << 20), Err(WireError::Truncated)));
        assert!(matches!(decode_frame(&[0, 0, 1, 0], 16), Err(WireError::TooLarge(256))));
    }

    #[test]
    fn json_shape() {
        let msg = WireMessage::Result { mime: "text/plain".into(), body: b"hi".to_vec() };
        assert_eq!(String::from_utf8(msg.to_json()).unwrap(), r#"{"type":"RESULT","mime":"text/plain","body":"aGk="}"#);
    }

    proptest! {
        #[test]
        fn frames_round_trip(body in proptest::collection::vec(any::<u8>(), 0..256), mime in "[a-z]{1,8}/[a-z]{1,8}", label in "[a-zA-Z]{1,10}") {
            let msg = WireMessage::Supply {
                behavior: "B".into(),
                params: Params::new(),
                inputs: BTreeMap::from([(label, WireInput { mime, url: None, body })]),
            };
            let frame = encode_frame(&msg);
            let (back, used) = decode_frame(&frame, DEFAULT_MAX_FRAME).unwrap();
            prop_assert_eq!(used, frame.len());
            prop_assert_eq!(back, msg);
        }
    }
}
