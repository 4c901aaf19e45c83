//! Length-prefixed binary framing for the TCP transport, documented
//! bit-exactly in docs/wire-format.md.
//!
//! Frame layout:
//!   u32 BE  frame length (bytes after this field)
//!   u8      pattern opcode
//!   u8      message kind
//!   u64 BE  correlation id
//!   u16 BE  type-name length, then that many UTF-8 bytes
//!   payload (canonical communication-object encoding)
//!
//! Payload encoding: fields in declared order; primitives little-endian
//! fixed width; strings/bytes/lists are u32 LE length-prefixed; nested
//! objects are encoded inline.

use crate::model::{FieldType, Pattern};
use crate::runtime::{CommObject, TypeTable, Value};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown type: {0}")]
    UnknownType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Send = 1,
    Query = 2,
    PushNewest = 3,
    PushTimed = 4,
    Event = 5,
    State = 6,
    Wiring = 7,
    Param = 8,
}

impl Opcode {
    pub fn from_pattern(p: Pattern) -> Self {
        match p {
            Pattern::Send => Opcode::Send,
            Pattern::Query => Opcode::Query,
            Pattern::PushNewest => Opcode::PushNewest,
            Pattern::PushTimed => Opcode::PushTimed,
            Pattern::Event => Opcode::Event,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Opcode::Send,
            2 => Opcode::Query,
            3 => Opcode::PushNewest,
            4 => Opcode::PushTimed,
            5 => Opcode::Event,
            6 => Opcode::State,
            7 => Opcode::Wiring,
            8 => Opcode::Param,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Request = 1,
    Answer = 2,
    Update = 3,
    Event = 4,
    Ack = 5,
    Control = 6,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageKind::Request,
            2 => MessageKind::Answer,
            3 => MessageKind::Update,
            4 => MessageKind::Event,
            5 => MessageKind::Ack,
            6 => MessageKind::Control,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub opcode: Opcode,
    pub kind: MessageKind,
    pub correlation: u64,
    pub type_name: String,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let name = self.type_name.as_bytes();
        let body_len = 1 + 1 + 8 + 2 + name.len() + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.opcode as u8);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.correlation.to_be_bytes());
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), WireError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Frame, WireError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        if len < 12 {
            return Err(WireError::Malformed(format!("frame too short: {len}")));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        let opcode = Opcode::from_u8(body[0])
            .ok_or_else(|| WireError::Malformed(format!("opcode {}", body[0])))?;
        let kind = MessageKind::from_u8(body[1])
            .ok_or_else(|| WireError::Malformed(format!("kind {}", body[1])))?;
        let correlation = u64::from_be_bytes(body[2..10].try_into().unwrap());
        let name_len = u16::from_be_bytes(body[10..12].try_into().unwrap()) as usize;
        if body.len() < 12 + name_len {
            return Err(WireError::Malformed("type name overruns frame".into()));
        }
        let type_name = String::from_utf8(body[12..12 + name_len].to_vec())
            .map_err(|_| WireError::Malformed("type name not UTF-8".into()))?;
        let payload = body[12 + name_len..].to_vec();
        Ok(Frame { opcode, kind, correlation, type_name, payload })
    }
}

fn encode_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Bool(b) => out.push(*b as u8),
        Value::Int(i) => out.extend_from_slice(&i.to_le_bytes()),
        Value::Float(f) => out.extend_from_slice(&f.to_le_bytes()),
        Value::Str(s) => {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(b);
        }
        Value::Object(o) => {
            for (_, fv) in &o.fields {
                encode_value(fv, out);
            }
        }
        Value::List(items) => {
            out.extend_from_slice(&(items.len() as u32).to_le_bytes());
            for item in items {
                encode_value(item, out);
            }
        }
    }
}

/// Canonical payload encoding: field values in declared order.
pub fn encode_payload(obj: &CommObject) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, v) in &obj.fields {
        encode_value(v, &mut out);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Malformed("payload truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32le(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_value(
    cur: &mut Cursor,
    ftype: &FieldType,
    types: &TypeTable,
) -> Result<Value, WireError> {
    Ok(match ftype {
        FieldType::Bool => Value::Bool(cur.take(1)?[0] != 0),
        FieldType::Int64 => Value::Int(i64::from_le_bytes(cur.take(8)?.try_into().unwrap())),
        FieldType::Float64 => Value::Float(f64::from_le_bytes(cur.take(8)?.try_into().unwrap())),
        FieldType::Str => {
            let len = cur.u32le()? as usize;
            Value::Str(
                String::from_utf8(cur.take(len)?.to_vec())
                    .map_err(|_| WireError::Malformed("string not UTF-8".into()))?,
            )
        }
        FieldType::Bytes => {
            let len = cur.u32le()? as usize;
            Value::Bytes(cur.take(len)?.to_vec())
        }
        FieldType::Object(name) => Value::Object(decode_object(cur, name, types)?),
        FieldType::List(inner) => {
            let len = cur.u32le()? as usize;
            let mut items = Vec::with_capacity(len.min(1024));
            for _ in 0..len {
                items.push(decode_value(cur, inner, types)?);
            }
            Value::List(items)
        }
    })
}

fn decode_object(
    cur: &mut Cursor,
    type_name: &str,
    types: &TypeTable,
) -> Result<CommObject, WireError> {
    let ty = types
        .get(type_name)
        .ok_or_else(|| WireError::UnknownType(type_name.to_string()))?;
    let mut fields = Vec::with_capacity(ty.fields.len());
    for (fname, ftype) in &ty.fields {
        fields.push((fname.clone(), decode_value(cur, ftype, types)?));
    }
    Ok(CommObject { type_name: type_name.to_string(), fields })
}

/// Decode a canonical payload against the declared type.
pub fn decode_payload(
    type_name: &str,
    payload: &[u8],
    types: &TypeTable,
) -> Result<CommObject, WireError> {
    let mut cur = Cursor { buf: payload, pos: 0 };
    let obj = decode_object(&mut cur, type_name, types)?;
    if cur.pos != payload.len() {
        return Err(WireError::Malformed(format!(
            "{} trailing bytes after payload",
            payload.len() - cur.pos
        )));
    }
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CommObjectType;

    fn table() -> TypeTable {
        let mut t = TypeTable::default();
        t.insert(CommObjectType {
            name: "Inner".into(),
            fields: vec![("flag".into(), FieldType::Bool)],
        });
        t.insert(CommObjectType {
            name: "Everything".into(),
            fields: vec![
                ("i".into(), FieldType::Int64),
                ("f".into(), FieldType::Float64),
                ("s".into(), FieldType::Str),
                ("b".into(), FieldType::Bytes),
                ("o".into(), FieldType::Object("Inner".into())),
                ("l".into(), FieldType::List(Box::new(FieldType::Int64))),
            ],
        });
        t
    }

    fn sample() -> CommObject {
        CommObject::new(
            "Everything",
            vec![
                ("i", Value::Int(-5)),
                ("f", Value::Float(1.5)),
                ("s", Value::Str("hi".into())),
                ("b", Value::Bytes(vec![0xde, 0xad])),
                (
                    "o",
                    Value::Object(CommObject::new("Inner", vec![("flag", Value::Bool(true))])),
                ),
                ("l", Value::List(vec![Value::Int(1), Value::Int(2)])),
            ],
        )
    }

    #[test]
    fn payload_round_trip() {
        let t = table();
        let obj = sample();
        let bytes = encode_payload(&obj);
        let back = decode_payload("Everything", &bytes, &t).unwrap();
        assert_eq!(obj, back);
    }

    #[test]
    fn frame_round_trip_and_layout() {
        let frame = Frame {
            opcode: Opcode::Query,
            kind: MessageKind::Request,
            correlation: 0x0102030405060708,
            type_name: "Inner".into(),
            payload: vec![1],
        };
        let bytes = frame.encode();
        // 4-byte BE length of everything after it
        assert_eq!(&bytes[0..4], &(18u32).to_be_bytes());
        assert_eq!(bytes[4], 2); // query opcode
        assert_eq!(bytes[5], 1); // request kind
        assert_eq!(&bytes[6..14], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(&bytes[14..16], &[0, 5]); // type-name length BE
        assert_eq!(&bytes[16..21], b"Inner");
        assert_eq!(bytes[21], 1);
        let back = Frame::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(frame, back);
    }

    #[test]
    fn truncated_payload_rejected() {
        let t = table();
        let bytes = encode_payload(&sample());
        assert!(decode_payload("Everything", &bytes[..bytes.len() - 1], &t).is_err());
    }
}
