//! Newline-delimited ledger snapshots.
//!
//! One block per line, attachment order, space separated:
//!
//! ```text
//! <id hex> <parent hex,parent hex,...|-> <issuer u32> <issued_at µs> <payload hex|->
//! ```
//!
//! Lines starting with `#` are comments. Ids are stored, not re-derived, so
//! a tampered snapshot still loads and [`super::verify_chain_integrity`]
//! can report it.

use std::io::{BufRead, Write};

use super::{Block, BlockId, NodeId, NodeState};
use crate::time::SimTime;

pub const SNAPSHOT_HEADER: &str = "# tanglefl ledger snapshot v1";

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_snapshot<W: Write>(state: &NodeState, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SNAPSHOT_HEADER}")?;
    for b in state.blocks() {
        let parents = if b.parents.is_empty() {
            "-".to_owned()
        } else {
            b.parents.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
        };
        let payload = if b.payload.is_empty() { "-".to_owned() } else { hex::encode(&b.payload) };
        writeln!(w, "{} {} {} {} {}", b.id, parents, b.issuer.0, b.issued_at.as_micros(), payload)?;
    }
    Ok(())
}

/// Reads snapshot lines into blocks, keeping stored ids.
pub fn read_snapshot<R: BufRead>(r: R) -> Result<Vec<Block>, SnapshotError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let bad = |reason: &str| SnapshotError::Malformed { line: line_no, reason: reason.to_owned() };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(' ').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let id = BlockId(fields[0].parse().map_err(|_| bad("bad block id"))?);
        let parents = if fields[1] == "-" {
            Vec::new()
        } else {
            fields[1]
                .split(',')
                .map(|p| p.parse().map(BlockId))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad parent id"))?
        };
        let issuer = NodeId(fields[2].parse().map_err(|_| bad("bad issuer"))?);
        let issued_at = SimTime::from_micros(fields[3].parse().map_err(|_| bad("bad timestamp"))?);
        let payload = if fields[4] == "-" { Vec::new() } else { hex::decode(fields[4]).map_err(|_| bad("bad payload hex"))? };
        out.push(Block { parents, payload, issuer, issued_at, id });
    }
    Ok(out)
}
