//! Wire messages and their canonical byte layout.
//!
//! ```text
//! message   = protocol:u8 index:u8 from:u8 to:u8 count:u16 field*
//! plaintext = count:u16 field*
//! field     = tag:u8 len:u32 value[len]
//! sealed    = binding_len:u32 binding body
//! ```
//!
//! All integers are big-endian. Field order is fixed per message type, and
//! decoders reject trailing bytes, so equal messages have equal encodings.

use std::fmt;

use thiserror::Error;

use crate::crypto::{Ciphertext, Nonce};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolId {
    P1 = 1,
    P2,
    P3,
    P4,
    P5,
    P6,
    P7,
    P8,
    P9,
    P10,
    P11,
    P12,
    P13,
    P14,
    P15,
    P16,
    P17,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 17] = [
        ProtocolId::P1,
        ProtocolId::P2,
        ProtocolId::P3,
        ProtocolId::P4,
        ProtocolId::P5,
        ProtocolId::P6,
        ProtocolId::P7,
        ProtocolId::P8,
        ProtocolId::P9,
        ProtocolId::P10,
        ProtocolId::P11,
        ProtocolId::P12,
        ProtocolId::P13,
        ProtocolId::P14,
        ProtocolId::P15,
        ProtocolId::P16,
        ProtocolId::P17,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get((n as usize).checked_sub(1)?).copied()
    }

    /// Accepts `p6`, `P6` or `6`.
    pub fn parse(text: &str) -> Option<Self> {
        let digits = text.trim_start_matches(['p', 'P']);
        Self::from_number(digits.parse().ok()?)
    }

    /// Baselines run on a pairwise shared key rather than the key hierarchy.
    pub fn is_baseline(self) -> bool {
        self.number() <= 5
    }

    pub fn uses_ttp(self) -> bool {
        matches!(self, ProtocolId::P16 | ProtocolId::P17)
    }

    pub fn is_time_release(self) -> bool {
        matches!(self, ProtocolId::P14 | ProtocolId::P15)
    }

    pub fn uses_freshness(self) -> bool {
        matches!(self, ProtocolId::P4 | ProtocolId::P5 | ProtocolId::P12 | ProtocolId::P13)
    }

    /// Number of messages in an honest run.
    pub fn message_count(self) -> u8 {
        use ProtocolId::*;
        match self {
            P4 | P12 => 1,
            P5 | P13 => 2,
            P16 | P17 => 5,
            _ => 3,
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Claimant,
    Verifier,
    Ttp,
    Tts,
    Board,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Claimant => 1,
            Role::Verifier => 2,
            Role::Ttp => 3,
            Role::Tts => 4,
            Role::Board => 5,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => Role::Claimant,
            2 => Role::Verifier,
            3 => Role::Ttp,
            4 => Role::Tts,
            5 => Role::Board,
            _ => return None,
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Claimant => "A",
            Role::Verifier => "B",
            Role::Ttp => "TTP",
            Role::Tts => "TTS",
            Role::Board => "BOARD",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Field {
    Hello,
    Label(String),
    Nonce(Nonce),
    Timestamp(u64),
    Sequence(u64),
    Identity(String),
    Digest(Vec<u8>),
    Key(Vec<u8>),
    TokenRef(String),
    Sealed(Ciphertext),
}

impl Field {
    fn tag(&self) -> u8 {
        match self {
            Field::Hello => 1,
            Field::Label(_) => 2,
            Field::Nonce(_) => 3,
            Field::Timestamp(_) => 4,
            Field::Sequence(_) => 5,
            Field::Identity(_) => 6,
            Field::Digest(_) => 7,
            Field::Key(_) => 8,
            Field::TokenRef(_) => 9,
            Field::Sealed(_) => 10,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Field::Hello => "hello",
            Field::Label(_) => "label",
            Field::Nonce(_) => "nonce",
            Field::Timestamp(_) => "time",
            Field::Sequence(_) => "seq",
            Field::Identity(_) => "id",
            Field::Digest(_) => "digest",
            Field::Key(_) => "key",
            Field::TokenRef(_) => "token",
            Field::Sealed(_) => "sealed",
        }
    }

    fn value(&self) -> Vec<u8> {
        match self {
            Field::Hello => Vec::new(),
            Field::Label(s) | Field::Identity(s) | Field::TokenRef(s) => s.as_bytes().to_vec(),
            Field::Nonce(n) => n.0.to_vec(),
            Field::Timestamp(t) | Field::Sequence(t) => t.to_be_bytes().to_vec(),
            Field::Digest(d) | Field::Key(d) => d.clone(),
            Field::Sealed(ct) => {
                let mut out = Vec::with_capacity(4 + ct.binding.len() + ct.body.len());
                out.extend_from_slice(&(ct.binding.len() as u32).to_be_bytes());
                out.extend_from_slice(&ct.binding);
                out.extend_from_slice(&ct.body);
                out
            }
        }
    }

    /// Compact rendering for logs. Secrets inside `Key` fields are elided.
    pub fn summary(&self) -> String {
        match self {
            Field::Hello => "hi".into(),
            Field::Label(s) => format!("label={s}"),
            Field::Nonce(n) => format!("nonce={}", &n.to_string()[..8]),
            Field::Timestamp(t) => format!("time={t}"),
            Field::Sequence(s) => format!("seq={s}"),
            Field::Identity(s) => format!("id={s}"),
            Field::Digest(d) => format!("digest={}", hex::encode(&d[..d.len().min(4)])),
            Field::Key(k) => format!("key[{}]", k.len()),
            Field::TokenRef(s) => format!("token={s}"),
            Field::Sealed(ct) => format!("sealed[{}]", ct.body.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input")]
    Truncated,
    #[error("unknown protocol {0}")]
    UnknownProtocol(u8),
    #[error("unknown role {0}")]
    UnknownRole(u8),
    #[error("unknown field tag {0}")]
    UnknownTag(u8),
    #[error("field `{0}` has a bad length")]
    BadLength(&'static str),
    #[error("field is not valid UTF-8")]
    Utf8,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn text(bytes: &[u8]) -> Result<String, WireError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| WireError::Utf8)
}

fn u64_value(bytes: &[u8], kind: &'static str) -> Result<u64, WireError> {
    Ok(u64::from_be_bytes(bytes.try_into().map_err(|_| WireError::BadLength(kind))?))
}

fn decode_field(r: &mut Reader<'_>) -> Result<Field, WireError> {
    let tag = r.u8()?;
    let len = r.u32()? as usize;
    let v = r.take(len)?;
    Ok(match tag {
        1 if v.is_empty() => Field::Hello,
        1 => return Err(WireError::BadLength("hello")),
        2 => Field::Label(text(v)?),
        3 => Field::Nonce(Nonce::from_slice(v).map_err(|_| WireError::BadLength("nonce"))?),
        4 => Field::Timestamp(u64_value(v, "time")?),
        5 => Field::Sequence(u64_value(v, "seq")?),
        6 => Field::Identity(text(v)?),
        7 => Field::Digest(v.to_vec()),
        8 => Field::Key(v.to_vec()),
        9 => Field::TokenRef(text(v)?),
        10 => {
            let mut inner = Reader { buf: v };
            let blen = inner.u32()? as usize;
            let binding = inner.take(blen)?.to_vec();
            Field::Sealed(Ciphertext { binding, body: inner.buf.to_vec() })
        }
        other => return Err(WireError::UnknownTag(other)),
    })
}

fn encode_fields(out: &mut Vec<u8>, fields: &[Field]) {
    out.extend_from_slice(&(fields.len() as u16).to_be_bytes());
    for f in fields {
        let v = f.value();
        out.push(f.tag());
        out.extend_from_slice(&(v.len() as u32).to_be_bytes());
        out.extend_from_slice(&v);
    }
}

fn decode_fields(r: &mut Reader<'_>) -> Result<Vec<Field>, WireError> {
    let count = r.u16()?;
    (0..count).map(|_| decode_field(r)).collect()
}

/// Plaintext layout used inside sealed fields.
pub fn encode_plaintext(fields: &[Field]) -> Vec<u8> {
    let mut out = Vec::new();
    encode_fields(&mut out, fields);
    out
}

pub fn decode_plaintext(bytes: &[u8]) -> Result<Vec<Field>, WireError> {
    let mut r = Reader { buf: bytes };
    let fields = decode_fields(&mut r)?;
    r.finish()?;
    Ok(fields)
}

/// `A -> B: m`, with the protocol position made explicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub protocol: ProtocolId,
    pub index: u8,
    pub from: Role,
    pub to: Role,
    pub fields: Vec<Field>,
}

impl ProtocolMessage {
    pub fn new(protocol: ProtocolId, index: u8, from: Role, to: Role, fields: Vec<Field>) -> Self {
        ProtocolMessage { protocol, index, from, to, fields }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.protocol.number(), self.index, self.from.code(), self.to.code()];
        encode_fields(&mut out, &self.fields);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: bytes };
        let p = r.u8()?;
        let protocol = ProtocolId::from_number(p).ok_or(WireError::UnknownProtocol(p))?;
        let index = r.u8()?;
        let from = r.u8()?;
        let from = Role::from_code(from).ok_or(WireError::UnknownRole(from))?;
        let to = r.u8()?;
        let to = Role::from_code(to).ok_or(WireError::UnknownRole(to))?;
        let fields = decode_fields(&mut r)?;
        r.finish()?;
        Ok(ProtocolMessage { protocol, index, from, to, fields })
    }

    pub fn summary(&self) -> String {
        self.fields.iter().map(Field::summary).collect::<Vec<_>>().join(" ")
    }

    /// Context bytes every ciphertext in this position is bound to.
    pub fn context(&self) -> Vec<u8> {
        context(self.protocol, self.index, self.from, self.to)
    }
}

/// Domain separation for a ciphertext at `(protocol, index, from -> to)`.
pub fn context(protocol: ProtocolId, index: u8, from: Role, to: Role) -> Vec<u8> {
    format!("kas-auth/{protocol}/m{index}/{from}>{to}").into_bytes()
}
