//! Debug-adapter wire framing: `Content-Length: <n>\r\n\r\n<json>`.

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Refuse headers longer than this without a terminating blank line.
const MAX_HEADER_BYTES: usize = 8 * 1024;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("body cannot be serialized: {0}")]
    SerializationFailure(String),
    #[error("malformed frame header: {0}")]
    FramingError(String),
    #[error("malformed message body: {0}")]
    MalformedBody(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    Request,
    Response {
        request_seq: u64,
        success: bool,
        message: Option<String>,
    },
    Event,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub seq: u64,
    pub kind: MessageKind,
    pub command_or_event: String,
    /// `arguments` for requests, `body` otherwise. `Null` when absent.
    pub body: Value,
}

fn to_body(value: impl Serialize) -> Result<Value, CodecError> {
    let v = serde_json::to_value(value).map_err(|e| CodecError::SerializationFailure(e.to_string()))?;
    match v {
        Value::Object(_) | Value::Null => Ok(v),
        other => Err(CodecError::SerializationFailure(format!(
            "body must be a JSON object, got {other}"
        ))),
    }
}

impl WireMessage {
    pub fn request(seq: u64, command: &str, arguments: impl Serialize) -> Result<Self, CodecError> {
        Ok(Self {
            seq,
            kind: MessageKind::Request,
            command_or_event: command.to_string(),
            body: to_body(arguments)?,
        })
    }

    pub fn response(seq: u64, request_seq: u64, command: &str, body: impl Serialize) -> Result<Self, CodecError> {
        Ok(Self {
            seq,
            kind: MessageKind::Response {
                request_seq,
                success: true,
                message: None,
            },
            command_or_event: command.to_string(),
            body: to_body(body)?,
        })
    }

    pub fn error_response(seq: u64, request_seq: u64, command: &str, message: &str) -> Self {
        Self {
            seq,
            kind: MessageKind::Response {
                request_seq,
                success: false,
                message: Some(message.to_string()),
            },
            command_or_event: command.to_string(),
            body: Value::Null,
        }
    }

    pub fn event(seq: u64, event: &str, body: impl Serialize) -> Result<Self, CodecError> {
        Ok(Self {
            seq,
            kind: MessageKind::Event,
            command_or_event: event.to_string(),
            body: to_body(body)?,
        })
    }

    fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("seq".into(), json!(self.seq));
        let body_key = match &self.kind {
            MessageKind::Request => {
                obj.insert("type".into(), json!("request"));
                obj.insert("command".into(), json!(self.command_or_event));
                "arguments"
            }
            MessageKind::Response {
                request_seq,
                success,
                message,
            } => {
                obj.insert("type".into(), json!("response"));
                obj.insert("request_seq".into(), json!(request_seq));
                obj.insert("success".into(), json!(success));
                obj.insert("command".into(), json!(self.command_or_event));
                if let Some(m) = message {
                    obj.insert("message".into(), json!(m));
                }
                "body"
            }
            MessageKind::Event => {
                obj.insert("type".into(), json!("event"));
                obj.insert("event".into(), json!(self.command_or_event));
                "body"
            }
        };
        if !self.body.is_null() {
            obj.insert(body_key.into(), self.body.clone());
        }
        Value::Object(obj)
    }

    fn from_json(v: Value) -> Result<Self, CodecError> {
        let bad = |what: &str| CodecError::MalformedBody(what.to_string());
        let Value::Object(mut obj) = v else {
            return Err(bad("message is not a JSON object"));
        };
        let seq = obj
            .get("seq")
            .and_then(Value::as_u64)
            .filter(|s| *s > 0)
            .ok_or_else(|| bad("missing or non-positive seq"))?;
        let ty = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing type"))?
            .to_string();
        let mut take_str = |key: &str| -> Result<String, CodecError> {
            match obj.remove(key) {
                Some(Value::String(s)) => Ok(s),
                _ => Err(bad(&format!("missing {key}"))),
            }
        };
        let (kind, name, body_key) = match ty.as_str() {
            "request" => (MessageKind::Request, take_str("command")?, "arguments"),
            "event" => (MessageKind::Event, take_str("event")?, "body"),
            "response" => {
                let command = take_str("command")?;
                let message = match obj.remove("message") {
                    Some(Value::String(s)) => Some(s),
                    None | Some(Value::Null) => None,
                    Some(_) => return Err(bad("message must be a string")),
                };
                let request_seq = obj
                    .get("request_seq")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| bad("missing request_seq"))?;
                let success = obj
                    .get("success")
                    .and_then(Value::as_bool)
                    .ok_or_else(|| bad("missing success"))?;
                (
                    MessageKind::Response {
                        request_seq,
                        success,
                        message,
                    },
                    command,
                    "body",
                )
            }
            other => return Err(bad(&format!("unknown message type {other:?}"))),
        };
        Ok(Self {
            seq,
            kind,
            command_or_event: name,
            body: obj.remove(body_key).unwrap_or(Value::Null),
        })
    }
}

/// Frame a message for the wire.
pub fn encode_message(m: &WireMessage) -> Result<Vec<u8>, CodecError> {
    if !(m.body.is_object() || m.body.is_null()) {
        return Err(CodecError::SerializationFailure("body must be a JSON object".into()));
    }
    let payload = serde_json::to_vec(&m.to_json()).map_err(|e| CodecError::SerializationFailure(e.to_string()))?;
    let mut out = format!("Content-Length: {}\r\n\r\n", payload.len()).into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parse every complete frame in `bytes`; the unconsumed suffix is returned
/// alongside the messages.
pub fn decode_stream(bytes: &[u8]) -> Result<(Vec<WireMessage>, Vec<u8>), CodecError> {
    let mut decoder = Decoder::default();
    let messages = decoder.feed(bytes)?;
    Ok((messages, decoder.into_remainder()))
}

/// Incremental single-consumer decoder.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
}

impl Decoder {
    pub fn feed(&mut self, bytes: &[u8]) -> Result<Vec<WireMessage>, CodecError> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        while let Some(m) = self.next_message()? {
            out.push(m);
        }
        Ok(out)
    }

    pub fn remainder(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_remainder(self) -> Vec<u8> {
        self.buf
    }

    fn next_message(&mut self) -> Result<Option<WireMessage>, CodecError> {
        let Some(header_end) = find(&self.buf, b"\r\n\r\n") else {
            if self.buf.len() > MAX_HEADER_BYTES {
                return Err(CodecError::FramingError("header too long".into()));
            }
            return Ok(None);
        };
        let header = std::str::from_utf8(&self.buf[..header_end])
            .map_err(|_| CodecError::FramingError("header is not UTF-8".into()))?;
        let mut length = None;
        for line in header.split("\r\n") {
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| CodecError::FramingError(format!("bad header line {line:?}")))?;
            if name.trim().eq_ignore_ascii_case("Content-Length") {
                let n: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| CodecError::FramingError(format!("bad Content-Length {:?}", value.trim())))?;
                length = Some(n);
            }
        }
        let length = length.ok_or_else(|| CodecError::FramingError("missing Content-Length".into()))?;
        let body_start = header_end + 4;
        if self.buf.len() < body_start + length {
            return Ok(None);
        }
        let payload: Vec<u8> = self.buf[body_start..body_start + length].to_vec();
        self.buf.drain(..body_start + length);
        let value: Value = serde_json::from_slice(&payload).map_err(|e| CodecError::MalformedBody(e.to_string()))?;
        WireMessage::from_json(value).map(Some)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn minimal_request_round_trips() {
        let m = WireMessage::request(1, "initialize", json!({})).unwrap();
        let bytes = encode_message(&m).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let (header, payload) = text.split_once("\r\n\r\n").unwrap();
        assert_eq!(header, format!("Content-Length: {}", payload.len()));
        let (msgs, rest) = decode_stream(&bytes).unwrap();
        assert_eq!(msgs, vec![m]);
        assert!(rest.is_empty());
    }

    #[test]
    fn content_length_counts_bytes() {
        let m = WireMessage::event(3, "output", json!({"output": "naïve — ünïcödé ✓"})).unwrap();
        let bytes = encode_message(&m).unwrap();
        let sep = find(&bytes, b"\r\n\r\n").unwrap();
        let payload = &bytes[sep + 4..];
        // Oracle: length of the payload as raw bytes, independent of the encoder.
        let declared: usize = std::str::from_utf8(&bytes[..sep])
            .unwrap()
            .trim_start_matches("Content-Length: ")
            .parse()
            .unwrap();
        assert_eq!(declared, payload.len());
        assert!(declared > String::from_utf8(payload.to_vec()).unwrap().chars().count());
        assert_eq!(decode_stream(&bytes).unwrap().0, vec![m]);
    }

    #[test]
    fn unserializable_body_is_rejected() {
        let mut weird = HashMap::new();
        weird.insert((1, 2), "tuple keys are not JSON");
        assert!(matches!(
            WireMessage::request(1, "evaluate", weird),
            Err(CodecError::SerializationFailure(_))
        ));
        let m = WireMessage {
            seq: 1,
            kind: MessageKind::Event,
            command_or_event: "x".into(),
            body: json!([1, 2]),
        };
        assert!(matches!(encode_message(&m), Err(CodecError::SerializationFailure(_))));
    }

    #[test]
    fn two_frames_decode_with_empty_remainder() {
        let a = WireMessage::request(1, "initialize", json!({"adapterID": "sim"})).unwrap();
        let b = WireMessage::response(2, 1, "initialize", json!({})).unwrap();
        let mut bytes = encode_message(&a).unwrap();
        bytes.extend(encode_message(&b).unwrap());
        let (msgs, rest) = decode_stream(&bytes).unwrap();
        assert_eq!(msgs, vec![a, b]);
        assert!(rest.is_empty());
    }

    #[test]
    fn partial_frame_stays_in_remainder() {
        let a = WireMessage::request(1, "continue", json!({"threadId": 1})).unwrap();
        let bytes = encode_message(&a).unwrap();
        let (msgs, rest) = decode_stream(&bytes[..bytes.len() - 3]).unwrap();
        assert!(msgs.is_empty());
        assert_eq!(rest, &bytes[..bytes.len() - 3]);
    }

    #[test]
    fn non_numeric_length_is_a_framing_error() {
        let err = decode_stream(b"Content-Length: abc\r\n\r\n{}").unwrap_err();
        assert!(matches!(err, CodecError::FramingError(_)));
        let err = decode_stream(b"Content-Type: json\r\n\r\n{}").unwrap_err();
        assert!(matches!(err, CodecError::FramingError(_)));
    }

    #[test]
    fn invalid_json_is_a_body_error() {
        let err = decode_stream(b"Content-Length: 5\r\n\r\n{nope").unwrap_err();
        assert!(matches!(err, CodecError::MalformedBody(_)));
        let err = decode_stream(b"Content-Length: 2\r\n\r\n{}").unwrap_err();
        assert!(matches!(err, CodecError::MalformedBody(_)));
    }

    #[test]
    fn extra_headers_are_tolerated() {
        let body = br#"{"seq":4,"type":"event","event":"initialized"}"#;
        let mut bytes = format!(
            "Content-Type: application/vscode-jsonrpc; charset=utf-8\r\nContent-Length: {}\r\n\r\n",
            body.len()
        )
        .into_bytes();
        bytes.extend_from_slice(body);
        let (msgs, _) = decode_stream(&bytes).unwrap();
        assert_eq!(msgs[0].command_or_event, "initialized");
        assert_eq!(msgs[0].body, Value::Null);
    }
}
