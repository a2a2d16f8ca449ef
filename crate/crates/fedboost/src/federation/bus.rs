//! In-process message bus with a recordable transcript.
//!
//! Every inter-party message is one of six kinds: id list, encrypted-gradient
//! batch, histogram, split-ownership notice, child-subspace notice, or
//! prediction token. The bus records each message with its virtual send time;
//! the exported log keeps `{time, from, to, kind, byte_size}` per line.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::Ciphertext;
use crate::error::Result;
use crate::gbdt::BinEdges;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartyClass {
    /// Label-holding party (weather features, labels, private key).
    C,
    /// Secondary party (demographic features only).
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub district: u32,
    pub class: PartyClass,
}

impl PartyId {
    pub fn c(district: u32) -> PartyId {
        PartyId { district, class: PartyClass::C }
    }

    pub fn d(district: u32) -> PartyId {
        PartyId { district, class: PartyClass::D }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let class = match self.class {
            PartyClass::C => 'C',
            PartyClass::D => 'D',
        };
        write!(f, "{class}{}", self.district)
    }
}

/// A single scalar statistic in transit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradValue {
    Plain(f64),
    Encrypted(Ciphertext),
}

/// A per-bin statistic vector in transit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradVector {
    Plain(Vec<f64>),
    Encrypted(Vec<Ciphertext>),
}

impl GradVector {
    pub fn len(&self) -> usize {
        match self {
            GradVector::Plain(v) => v.len(),
            GradVector::Encrypted(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-bin gradient statistics of one (globally indexed) feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub feature: usize,
    pub g: GradVector,
    pub h: GradVector,
}

/// The histogram message family: per-node gradient statistics, bin
/// construction summaries, and the resulting bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramContent {
    /// One district's per-feature node statistics plus its sample-order
    /// gradient totals (the totals feed leaf values).
    NodeStats {
        tree: u32,
        node: u64,
        features: Vec<FeatureHistogram>,
        totals: Option<(GradValue, GradValue)>,
    },
    /// Local per-feature value multiset, sent to the bin-construction leader.
    ValueCounts { features: Vec<(usize, Vec<(f64, u64)>)> },
    /// Final bin edges, broadcast back to the owning class.
    Edges { edges: Vec<BinEdges> },
}

/// Content of a split-ownership notice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeNotice {
    /// The winning criterion, sent to the class that owns the feature. The
    /// threshold value is resolved locally from that class's bin edges.
    Split { feature: usize, edge_index: usize, gain: f64 },
    /// A leaf value, replicated to the label-holding class only.
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    IdList { ids: Vec<String> },
    GradientBatch { ids: Vec<String>, g: GradVector, h: GradVector },
    Histogram(HistogramContent),
    SplitNotice { tree: u32, node: u64, notice: NodeNotice },
    SubspaceNotice { tree: u32, node: u64, left: Vec<String>, right: Vec<String> },
    Token { tree: u32, node: u64, sample: String },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::IdList { .. } => "id_list",
            Payload::GradientBatch { .. } => "gradient_batch",
            Payload::Histogram(_) => "histogram",
            Payload::SplitNotice { .. } => "split_notice",
            Payload::SubspaceNotice { .. } => "subspace_notice",
            Payload::Token { .. } => "token",
        }
    }
}

/// One recorded message.
#[derive(Debug, Clone)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub time_us: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub payload: Payload,
    pub byte_size: usize,
}

/// Records every message in send order. Virtual time is stamped by the
/// orchestrator from the schedule; the exported log is sorted by time with
/// send order breaking ties.
#[derive(Debug, Default)]
pub struct MessageBus {
    records: Vec<TranscriptRecord>,
    time_us: u64,
    seq: u64,
}

impl MessageBus {
    pub fn new() -> MessageBus {
        MessageBus::default()
    }

    pub fn set_time(&mut self, time_us: u64) {
        self.time_us = time_us;
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    /// Records one message. The caller delivers the payload to the recipient.
    pub fn send(&mut self, from: PartyId, to: PartyId, payload: &Payload) {
        let byte_size = serde_json::to_vec(payload).map(|v| v.len()).unwrap_or(0);
        self.seq += 1;
        self.records.push(TranscriptRecord {
            seq: self.seq,
            time_us: self.time_us,
            from,
            to,
            payload: payload.clone(),
            byte_size,
        });
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn message_count(&self) -> usize {
        self.records.len()
    }

    /// Writes the line-delimited transcript log.
    pub fn write_log<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut ordered: Vec<&TranscriptRecord> = self.records.iter().collect();
        ordered.sort_by_key(|r| (r.time_us, r.seq));
        for r in ordered {
            let line = serde_json::json!({
                "time": r.time_us,
                "from": r.from.to_string(),
                "to": r.to.to_string(),
                "kind": r.payload.kind(),
                "byte_size": r.byte_size,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
