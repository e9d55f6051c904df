//! Append-only event log, written as one JSON object per line.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llmopt::Origin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The candidate pool was emptied at the start of a round.
    PoolReset,
    /// A discretized gradient snapshot was evaluated (one per gradient step).
    Snapshot,
    /// A manual or LLM-generated candidate was evaluated.
    Candidate,
    /// The LLM answered; `note` carries the attempt count.
    LlmQuery,
    /// The LLM query failed after all retries.
    LlmFailure,
    /// Theta was reinitialized.
    Restart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub seq: usize,
    pub round: usize,
    pub iteration: usize,
    pub kind: EventKind,
    pub origin: Option<Origin>,
    pub prompt: String,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TrajectoryEvent {
    /// Events that carry an evaluated prompt score.
    pub fn is_evaluation(&self) -> bool {
        matches!(self.kind, EventKind::Snapshot | EventKind::Candidate)
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory line {line}: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    events: Vec<TrajectoryEvent>,
    flushed: usize,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `event`, overwriting its `seq` with the arrival index.
    pub fn append(&mut self, mut event: TrajectoryEvent) {
        event.seq = self.events.len();
        self.events.push(event);
    }

    pub fn events(&self) -> &[TrajectoryEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TrajectoryEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Writes the events not yet flushed, one per line. Returns how many.
    pub fn flush(&mut self, sink: &mut dyn Write) -> io::Result<usize> {
        let pending = &self.events[self.flushed..];
        for e in pending {
            serde_json::to_writer(&mut *sink, e)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        let n = pending.len();
        self.flushed = self.events.len();
        Ok(n)
    }
}

/// Writes every event of `events`, one per line.
pub fn write_events(events: &[TrajectoryEvent], sink: &mut dyn Write) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut *sink, e)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

/// Parses a trajectory file; blank lines are skipped.
pub fn read_events(reader: impl BufRead) -> Result<Vec<TrajectoryEvent>, TrajectoryError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|source| TrajectoryError::Malformed { line: i + 1, source })?;
        out.push(event);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(loss: f64) -> TrajectoryEvent {
        TrajectoryEvent {
            seq: 99,
            round: 1,
            iteration: 2,
            kind: EventKind::Snapshot,
            origin: Some(Origin::Gradient),
            prompt: "a \"quoted\" photo".into(),
            loss: Some(loss),
            accuracy: Some(25.0),
            wall_time: 0.0,
            note: None,
        }
    }

    #[test]
    fn flush_preserves_order_and_is_incremental() {
        let mut log = TrajectoryLog::new();
        for l in [3.0, 2.0, 1.0] {
            log.append(ev(l));
        }
        let mut buf = Vec::new();
        assert_eq!(log.flush(&mut buf).unwrap(), 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back = read_events(text.as_bytes()).unwrap();
        assert_eq!(back.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(back.iter().map(|e| e.loss.unwrap()).collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);

        assert_eq!(log.flush(&mut buf).unwrap(), 0);
        log.append(ev(0.5));
        assert_eq!(log.flush(&mut buf).unwrap(), 1);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn malformed_line_number() {
        let input = format!("{}\nnot json\n", serde_json::to_string(&ev(1.0)).unwrap());
        match read_events(input.as_bytes()) {
            Err(TrajectoryError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn loss_round_trips_exactly(loss in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let e = ev(loss);
            let line = serde_json::to_string(&e).unwrap();
            let back: TrajectoryEvent = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back.loss.unwrap().to_bits(), loss.to_bits());
        }
    }
}
