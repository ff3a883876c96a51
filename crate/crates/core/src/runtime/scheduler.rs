// SPDX-License-Identifier: Apache-2.0
//! Dependence-respecting execution of a task graph over per-queue workers.
//!
//! Each queue behaves as one logical worker: its tasks run one at a time in
//! FIFO order. A task may start once every graph predecessor has completed
//! and it sits at the head of its queue. At most `workers` tasks run at once.
//!
//! Buffers are shared between running tasks without locks; an empty conflict
//! report from [`check_dependence_sufficiency`] is what makes that sound.
//! Traces carry virtual time so they are reproducible for a fixed worker
//! count even though wall-clock interleaving is not.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};

use crate::element::Element;
use crate::error::RunError;
use crate::overlay::{dispatch, Overlay};

use super::{check_dependence_sufficiency, ExecutionTrace, TaskGraph, TaskId, TraceRecord};

/// Floating-point operations per virtual time unit.
pub const FLOPS_PER_TIME_UNIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Run even when the conflict report is non-empty.
    pub allow_unsafe: bool,
}

impl RunOptions {
    pub fn new(workers: usize) -> Self {
        RunOptions {
            workers,
            allow_unsafe: false,
        }
    }
}

pub fn virtual_duration(flops: u64) -> u64 {
    (flops / FLOPS_PER_TIME_UNIT).max(1)
}

struct State {
    remaining_preds: Vec<usize>,
    queue_heads: Vec<usize>,
    queue_busy: Vec<bool>,
    finished_at: Vec<Option<u64>>,
    worker_clock: Vec<u64>,
    records: Vec<TraceRecord>,
    completed: usize,
    failure: Option<RunError>,
}

/// Execute every task of `graph` once with up to `workers` concurrent tasks.
pub fn run<T: Element>(overlay: &Overlay<T>, graph: &TaskGraph<T>, workers: usize) -> Result<ExecutionTrace, RunError> {
    run_with(overlay, graph, RunOptions::new(workers))
}

pub fn run_with<T: Element>(overlay: &Overlay<T>, graph: &TaskGraph<T>, opts: RunOptions) -> Result<ExecutionTrace, RunError> {
    if !opts.allow_unsafe {
        let report = check_dependence_sufficiency(graph);
        if !report.is_empty() {
            return Err(RunError::Unsafe {
                count: report.pair_count(),
                report: report.to_string(),
            });
        }
    }
    let n = graph.len();
    let mut edges: Vec<(usize, usize)> = graph.edge_pairs().into_iter().map(|(a, b)| (a.0, b.0)).collect();
    edges.sort_unstable();
    if n == 0 {
        return Ok(ExecutionTrace::default());
    }

    let queues = graph.queues();
    let threads = opts.workers.max(1).min(queues.len().max(1));
    let state = Mutex::new(State {
        remaining_preds: (0..n).map(|i| graph.predecessors(TaskId(i)).len()).collect(),
        queue_heads: vec![0; queues.len()],
        queue_busy: vec![false; queues.len()],
        finished_at: vec![None; n],
        worker_clock: vec![0; threads],
        records: Vec::with_capacity(n),
        completed: 0,
        failure: None,
    });
    let wake = Condvar::new();
    let fb = overlay.feature_buffer();

    let lock = || state.lock().unwrap_or_else(|e| e.into_inner());

    std::thread::scope(|scope| {
        for worker in 0..threads {
            let (state_lock, wake, queues) = (&lock, &wake, &queues);
            scope.spawn(move || {
                let mut guard: MutexGuard<'_, State> = state_lock();
                loop {
                    if guard.failure.is_some() || guard.completed == n {
                        break;
                    }
                    let Some((q, id)) = pick_ready(&guard, queues) else {
                        guard = wake.wait(guard).unwrap_or_else(|e| e.into_inner());
                        continue;
                    };
                    guard.queue_busy[q] = true;
                    let vstart = graph
                        .predecessors(id)
                        .iter()
                        .map(|p| guard.finished_at[p.0].expect("predecessor finished"))
                        .fold(guard.worker_clock[worker], u64::max);
                    drop(guard);

                    let task = graph.task(id);
                    let outcome = catch_unwind(AssertUnwindSafe(|| dispatch(task, fb)));

                    guard = state_lock();
                    guard.queue_busy[q] = false;
                    match outcome {
                        Ok(Ok(report)) => {
                            let vend = vstart + virtual_duration(report.flops);
                            guard.finished_at[id.0] = Some(vend);
                            guard.worker_clock[worker] = vend;
                            guard.queue_heads[q] += 1;
                            guard.completed += 1;
                            for s in graph.successors(id) {
                                guard.remaining_preds[s.0] -= 1;
                            }
                            guard.records.push(TraceRecord {
                                id: id.0,
                                kind: task.kind.to_string(),
                                iter: task.iteration,
                                queue: task.queue,
                                vstart,
                                vend,
                                worker,
                                out_dims: report.out_dims,
                            });
                        }
                        Ok(Err(source)) => {
                            guard.failure.get_or_insert(RunError::Kernel {
                                task: id,
                                kind: task.label(),
                                source,
                            });
                        }
                        Err(_) => {
                            guard.failure.get_or_insert(RunError::WorkerPanic);
                        }
                    }
                    wake.notify_all();
                }
                // let siblings observe completion or failure
                wake.notify_all();
            });
        }
    });

    let state = state.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(err) = state.failure {
        return Err(err);
    }
    let mut records = state.records;
    records.sort_by_key(|r| (r.vstart, r.id));
    Ok(ExecutionTrace { records, edges })
}

/// Lowest-numbered idle queue whose head task has no pending predecessor.
fn pick_ready(state: &State, queues: &[Vec<TaskId>]) -> Option<(usize, TaskId)> {
    queues.iter().enumerate().find_map(|(q, ids)| {
        if state.queue_busy[q] {
            return None;
        }
        let id = *ids.get(state.queue_heads[q])?;
        (state.remaining_preds[id.0] == 0).then_some((q, id))
    })
}
