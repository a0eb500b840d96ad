//! Synchronous message bus with a byte ledger and a recorded trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::codec::{decode, encode, Message, MessageKind, NodeId, Payload, HEADER_LEN};
use super::transport::{InProcess, Transport};
use super::FederationError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub messages: u64,
    pub payload_bytes: u64,
    pub frame_bytes: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.messages += other.messages;
        self.payload_bytes += other.payload_bytes;
        self.frame_bytes += other.frame_bytes;
    }
}

/// Cumulative traffic per `(from, to, kind)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferLedger {
    entries: BTreeMap<(NodeId, NodeId, MessageKind), Tally>,
}

impl TransferLedger {
    pub fn record(&mut self, msg: &Message, frame_bytes: usize) {
        let t = self
            .entries
            .entry((msg.from, msg.to, msg.kind()))
            .or_default();
        t.messages += 1;
        t.frame_bytes += frame_bytes as u64;
        t.payload_bytes += (frame_bytes - HEADER_LEN) as u64;
    }

    pub fn total(&self) -> Tally {
        let mut t = Tally::default();
        self.entries.values().for_each(|v| t.add(*v));
        t
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Tally {
        let mut t = Tally::default();
        self.entries
            .iter()
            .filter(|((f, to_, _), _)| *f == from && *to_ == to)
            .for_each(|(_, v)| t.add(*v));
        t
    }

    pub fn kind(&self, kind: MessageKind) -> Tally {
        let mut t = Tally::default();
        self.entries
            .iter()
            .filter(|((_, _, k), _)| *k == kind)
            .for_each(|(_, v)| t.add(*v));
        t
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(NodeId, NodeId, MessageKind), &Tally)> {
        self.entries.iter()
    }

    /// Recomputes a ledger from a trace.
    pub fn from_trace(trace: &[Message]) -> Self {
        let mut l = Self::default();
        for m in trace {
            l.record(m, m.frame_len());
        }
        l
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("from,to,kind,messages,payload_bytes,frame_bytes\n");
        for ((f, t, k), v) in &self.entries {
            let _ = writeln!(
                s,
                "{f},{t},{},{},{},{}",
                k.name(),
                v.messages,
                v.payload_bytes,
                v.frame_bytes
            );
        }
        s
    }
}

/// Every send is encoded, carried by the transport, decoded, recorded and
/// delivered as the decoded value.
pub struct Bus {
    seqs: BTreeMap<(NodeId, NodeId), u64>,
    ledger: TransferLedger,
    trace: Vec<Message>,
    transport: Box<dyn Transport>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(Box::new(InProcess))
    }
}

impl Bus {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            seqs: BTreeMap::new(),
            ledger: TransferLedger::default(),
            trace: Vec::new(),
            transport,
        }
    }

    pub fn send(
        &mut self,
        from: NodeId,
        to: NodeId,
        payload: Payload,
    ) -> Result<Message, FederationError> {
        let seq = self.seqs.entry((from, to)).or_insert(0);
        let msg = Message {
            from,
            to,
            seq: *seq,
            payload,
        };
        *seq += 1;
        let frame = encode(&msg);
        let delivered = self.transport.carry(&frame)?;
        let received = decode(&delivered)?;
        self.ledger.record(&received, delivered.len());
        self.trace.push(received.clone());
        Ok(received)
    }

    pub fn ledger(&self) -> &TransferLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[Message] {
        &self.trace
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub fn trace_csv(trace: &[Message]) -> String {
    let mut s = String::from("index,from,to,seq,kind,payload_bytes\n");
    for (i, m) in trace.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            m.from,
            m.to,
            m.seq,
            m.kind().name(),
            m.payload.encoded_len()
        );
    }
    s
}
