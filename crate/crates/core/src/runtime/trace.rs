// SPDX-License-Identifier: Apache-2.0
//! Execution traces: one JSON object per task, then one edge-list object.
//!
//! ```text
//! {"id":0,"kind":"Task0","iter":0,"queue":0,"vstart":0,"vend":1,"worker":0}
//! ...
//! {"edges":[[0,1],[0,2]]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: usize,
    pub kind: String,
    pub iter: usize,
    pub queue: usize,
    pub vstart: u64,
    pub vend: u64,
    pub worker: usize,
    /// Extents of the feature map a CNN task produced. Not serialized.
    #[serde(skip)]
    pub out_dims: Option<Vec<usize>>,
}

impl TraceRecord {
    pub fn duration(&self) -> u64 {
        self.vend.saturating_sub(self.vstart)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    /// Sorted by `(vstart, id)`.
    pub records: Vec<TraceRecord>,
    /// `(prerequisite, dependent)` pairs.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    edges: Vec<(usize, usize)>,
}

impl ExecutionTrace {
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if self.records.is_empty() && self.edges.is_empty() {
            return Ok(());
        }
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &EdgeLine { edges: self.edges.clone() })?;
        out.write_all(b"\n")
    }

    pub fn parse<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut trace = ExecutionTrace::default();
        let mut saw_edges = false;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let err = |msg: String| TraceError::Parse { line: line_no, msg };
            let value: serde_json::Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
            if value.get("edges").is_some() {
                if saw_edges {
                    return Err(err("duplicate edge list".into()));
                }
                saw_edges = true;
                let edges: EdgeLine = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
                trace.edges = edges.edges;
            } else {
                if saw_edges {
                    return Err(err("task record after edge list".into()));
                }
                let record: TraceRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
                trace.records.push(record);
            }
        }
        if !trace.records.is_empty() && !saw_edges {
            return Err(TraceError::Parse {
                line: 0,
                msg: "missing edge list".into(),
            });
        }
        Ok(trace)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file))
    }

    /// All rule violations found in the trace; empty when it is a valid
    /// schedule of its own edge list.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut position: HashMap<usize, usize> = HashMap::new();
        for (pos, r) in self.records.iter().enumerate() {
            if position.insert(r.id, pos).is_some() {
                problems.push(format!("task {} appears more than once", r.id));
            }
            if r.vend < r.vstart {
                problems.push(format!("task {} ends ({}) before it starts ({})", r.id, r.vend, r.vstart));
            }
        }
        for w in self.records.windows(2) {
            if w[1].vstart < w[0].vstart {
                problems.push(format!("records {} and {} are not in start order", w[0].id, w[1].id));
            }
        }
        for &(pre, dep) in &self.edges {
            match (position.get(&pre), position.get(&dep)) {
                (Some(&a), Some(&b)) => {
                    let (ra, rb) = (&self.records[a], &self.records[b]);
                    if ra.vend > rb.vstart {
                        problems.push(format!(
                            "edge {pre}->{dep}: prerequisite ends at {} after dependent starts at {}",
                            ra.vend, rb.vstart
                        ));
                    }
                    if a >= b {
                        problems.push(format!("edge {pre}->{dep}: order is not a linear extension"));
                    }
                }
                _ => problems.push(format!("edge {pre}->{dep} names a task missing from the trace")),
            }
        }
        let mut by_queue: BTreeMap<usize, Vec<&TraceRecord>> = BTreeMap::new();
        for r in &self.records {
            by_queue.entry(r.queue).or_default().push(r);
        }
        for (q, mut recs) in by_queue {
            recs.sort_by_key(|r| r.id);
            for w in recs.windows(2) {
                if w[0].vend > w[1].vstart {
                    problems.push(format!(
                        "queue {q}: task {} [{}, {}) overlaps or follows task {} [{}, {})",
                        w[0].id, w[0].vstart, w[0].vend, w[1].id, w[1].vstart, w[1].vend
                    ));
                }
            }
        }
        problems
    }

    pub fn summary(&self) -> TraceSummary {
        let start = self.records.iter().map(|r| r.vstart).min().unwrap_or(0);
        let end = self.records.iter().map(|r| r.vend).max().unwrap_or(0);
        let span = end.saturating_sub(start);
        let mut queues: BTreeMap<usize, Utilization> = BTreeMap::new();
        let mut workers: BTreeMap<usize, Utilization> = BTreeMap::new();
        for r in &self.records {
            for u in [queues.entry(r.queue).or_default(), workers.entry(r.worker).or_default()] {
                u.tasks += 1;
                u.busy += r.duration();
            }
        }
        for u in queues.values_mut().chain(workers.values_mut()) {
            u.fraction = if span == 0 { 0.0 } else { u.busy as f64 / span as f64 };
        }
        TraceSummary {
            tasks: self.records.len(),
            edges: self.edges.len(),
            span,
            critical_path: self.critical_path(),
            queues,
            workers,
        }
    }

    /// Longest duration-weighted path through the edge list. Cycles and
    /// dangling edges are ignored.
    pub fn critical_path(&self) -> u64 {
        let index: HashMap<usize, usize> = self.records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let n = self.records.len();
        let mut succs = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for &(a, b) in &self.edges {
            if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
                succs[ia].push(ib);
                indegree[ib] += 1;
            }
        }
        let mut finish: Vec<u64> = self.records.iter().map(TraceRecord::duration).collect();
        let mut stack: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(u) = stack.pop() {
            for &s in &succs[u] {
                finish[s] = finish[s].max(finish[u] + self.records[s].duration());
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    stack.push(s);
                }
            }
        }
        finish.into_iter().max().unwrap_or(0)
    }
}

pub fn emit_trace(trace: &ExecutionTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    trace.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Utilization {
    pub tasks: usize,
    pub busy: u64,
    /// `busy / span`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub tasks: usize,
    pub edges: usize,
    pub span: u64,
    pub critical_path: u64,
    pub queues: BTreeMap<usize, Utilization>,
    pub workers: BTreeMap<usize, Utilization>,
}

impl fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tasks: {}  edges: {}", self.tasks, self.edges)?;
        writeln!(f, "span: {}  critical path: {}", self.span, self.critical_path)?;
        for (q, u) in &self.queues {
            writeln!(f, "queue {q}: {} tasks, busy {} ({:.1}%)", u.tasks, u.busy, 100.0 * u.fraction)?;
        }
        for (w, u) in &self.workers {
            writeln!(f, "worker {w}: {} tasks, busy {} ({:.1}%)", u.tasks, u.busy, 100.0 * u.fraction)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, queue: usize, vstart: u64, vend: u64, worker: usize) -> TraceRecord {
        TraceRecord {
            id,
            kind: format!("K{queue}"),
            iter: 0,
            queue,
            vstart,
            vend,
            worker,
            out_dims: None,
        }
    }

    fn sample() -> ExecutionTrace {
        ExecutionTrace {
            records: vec![rec(0, 0, 0, 2, 0), rec(1, 1, 2, 3, 0), rec(2, 0, 3, 5, 0)],
            edges: vec![(0, 1), (0, 2), (1, 2)],
        }
    }

    #[test]
    fn empty_trace_is_empty_file() {
        let mut out = Vec::new();
        ExecutionTrace::default().write_to(&mut out).unwrap();
        assert!(out.is_empty());
        assert_eq!(ExecutionTrace::parse(&b""[..]).unwrap(), ExecutionTrace::default());
    }

    #[test]
    fn schema_and_round_trip() {
        let t = sample();
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"id":0,"kind":"K0","iter":0,"queue":0,"vstart":0,"vend":2,"worker":0}"#
        );
        assert_eq!(text.lines().last().unwrap(), r#"{"edges":[[0,1],[0,2],[1,2]]}"#);
        assert_eq!(ExecutionTrace::parse(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn serial_trace_summary() {
        let t = sample();
        assert!(t.validate().is_empty());
        let s = t.summary();
        assert_eq!(s.span, 5);
        assert_eq!(s.critical_path, 5);
        assert_eq!(s.workers[&0].fraction, 1.0);
        assert_eq!(s.queues[&0].busy, 4);
    }

    #[test]
    fn swapped_times_fail_validation() {
        let mut t = sample();
        let r = &mut t.records[1];
        std::mem::swap(&mut r.vstart, &mut r.vend);
        assert!(!t.validate().is_empty());
    }

    #[test]
    fn queue_overlap_and_edge_violations() {
        let t = ExecutionTrace {
            records: vec![rec(0, 0, 0, 3, 0), rec(1, 0, 2, 4, 1)],
            edges: vec![],
        };
        assert!(t.validate().iter().any(|p| p.contains("queue 0")));
        let t = ExecutionTrace {
            records: vec![rec(0, 0, 0, 3, 0), rec(1, 1, 1, 4, 1)],
            edges: vec![(0, 1)],
        };
        assert!(t.validate().iter().any(|p| p.contains("edge 0->1")));
        let t = ExecutionTrace {
            records: vec![rec(0, 0, 0, 3, 0)],
            edges: vec![(0, 7)],
        };
        assert!(!t.validate().is_empty());
    }

    #[test]
    fn malformed_lines() {
        assert!(ExecutionTrace::parse(&b"{\"id\":1}\n"[..]).is_err());
        assert!(ExecutionTrace::parse(&b"not json\n"[..]).is_err());
        let no_edges = br#"{"id":0,"kind":"a","iter":0,"queue":0,"vstart":0,"vend":1,"worker":0}"#;
        assert!(ExecutionTrace::parse(&no_edges[..]).is_err());
    }
}
