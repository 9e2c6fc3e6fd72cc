//! Public classical-channel messages and the append-only transcript.
//!
//! On disk a transcript is JSON Lines, one message per line:
//!
//! ```text
//! {"sender":"Alice","round_id":17,"kind":"PhiReveal","payload":{"phi":3}}
//! {"sender":"Referee","round_id":17,"kind":"RoleAssignment","payload":{"chosen":"Bob"}}
//! {"sender":"Bob","round_id":17,"kind":"EncodedBit","payload":{"c":4,"m":1}}
//! {"sender":"Alice","round_id":17,"kind":"Discard"}
//! {"sender":"Alice","round_id":null,"kind":"Abort","payload":{"reason":"ChshOutOfRange"}}
//! ```
//!
//! Angles are grid indices `k` (angle `kπ/8`), outcomes are `1` / `-1`, bits are `0` / `1`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::quantum::{Angle, Outcome};

pub type RoundId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Party::Alice => "Alice",
            Party::Bob => "Bob",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sender {
    Alice,
    Bob,
    Referee,
}

impl From<Party> for Sender {
    fn from(p: Party) -> Sender {
        match p {
            Party::Alice => Sender::Alice,
            Party::Bob => Sender::Bob,
        }
    }
}

impl Sender {
    pub fn party(self) -> Option<Party> {
        match self {
            Sender::Alice => Some(Party::Alice),
            Sender::Bob => Some(Party::Bob),
            Sender::Referee => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbortReason {
    /// `|S|` is too far from `2√2`.
    ChshOutOfRange,
    /// A same-angle cell is not perfectly anti-correlated.
    SameBasisCorrelation,
    /// A quarter-turn cell is not perfectly correlated.
    QuarterTurnCorrelation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    /// Full basis of a test round.
    BasisRevealFull { phi: Angle, c: Angle },
    /// Outcome of a test round.
    OutcomeReveal { outcome: Outcome },
    /// φ of a key round; never carries `c`.
    PhiReveal { phi: Angle },
    /// Which party encodes in this key round.
    RoleAssignment { chosen: Party },
    /// The chosen party's `c` and its masked bit `m = r ⊕ bit(outcome)`.
    EncodedBit { c: Angle, m: u8 },
    /// The decoder could not decode; the round contributes no bit.
    Discard,
    Abort { reason: AbortReason },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::BasisRevealFull { .. } => "BasisRevealFull",
            Payload::OutcomeReveal { .. } => "OutcomeReveal",
            Payload::PhiReveal { .. } => "PhiReveal",
            Payload::RoleAssignment { .. } => "RoleAssignment",
            Payload::EncodedBit { .. } => "EncodedBit",
            Payload::Discard => "Discard",
            Payload::Abort { .. } => "Abort",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMessage {
    pub sender: Sender,
    /// `None` only for protocol-wide messages (aborts).
    pub round_id: Option<RoundId>,
    #[serde(flatten)]
    pub payload: Payload,
}

impl TranscriptMessage {
    pub fn new(sender: impl Into<Sender>, round_id: RoundId, payload: Payload) -> Self {
        TranscriptMessage { sender: sender.into(), round_id: Some(round_id), payload }
    }

    pub fn abort(sender: Party, reason: AbortReason) -> Self {
        TranscriptMessage { sender: sender.into(), round_id: None, payload: Payload::Abort { reason } }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<TranscriptMessage>,
}

impl Transcript {
    pub fn push(&mut self, msg: TranscriptMessage) {
        self.messages.push(msg);
    }

    pub fn messages(&self) -> &[TranscriptMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TranscriptMessage> {
        self.messages.iter()
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_jsonl(out, &self.messages)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, JsonlError> {
        Ok(Transcript { messages: read_jsonl(input)? })
    }
}

impl FromIterator<TranscriptMessage> for Transcript {
    fn from_iter<I: IntoIterator<Item = TranscriptMessage>>(iter: I) -> Self {
        Transcript { messages: iter.into_iter().collect() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead, T: serde::de::DeserializeOwned>(input: R) -> Result<Vec<T>, JsonlError> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(items)
}
