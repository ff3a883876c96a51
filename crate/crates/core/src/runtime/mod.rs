// SPDX-License-Identifier: Apache-2.0
//! Task graph construction, safety checking and scheduled execution.

mod graph;
mod rules;
mod safety;
mod scheduler;
mod task;
mod trace;

pub use graph::{build_task_graph, Edge, EdgeSource, Reachability, TaskGraph};
pub use rules::{depend, Condition, DependenceRule, DependentRules, RuleSet};
pub use safety::{check_dependence_sufficiency, Conflict, ConflictReport};
pub use scheduler::{run, run_with, virtual_duration, RunOptions, FLOPS_PER_TIME_UNIT};
pub use task::{Arg, TaskHandle, TaskId, TaskInstance, TaskKind};
pub use trace::{emit_trace, ExecutionTrace, TraceRecord, TraceSummary, Utilization};
