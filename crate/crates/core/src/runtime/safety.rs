// SPDX-License-Identifier: Apache-2.0
use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use crate::element::Element;
use crate::par;
use crate::tensor::{fmt_ranges, AccessMode, BufferId};

use super::{TaskGraph, TaskId};

/// Two tasks touch overlapping elements, at least one writes, and neither is
/// ordered before the other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub first: TaskId,
    pub second: TaskId,
    pub first_label: String,
    pub second_label: String,
    pub first_mode: AccessMode,
    pub second_mode: AccessMode,
    pub buffer: BufferId,
    pub overlap: Vec<Range<usize>>,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}#{} [{}] vs {}#{} [{}] on buffer {}{}",
            self.first_label,
            self.first,
            self.first_mode,
            self.second_label,
            self.second,
            self.second_mode,
            self.buffer,
            fmt_ranges(&self.overlap)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictReport {
    pub conflicts: Vec<Conflict>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.conflicts.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs().len()
    }

    /// Conflicting task pairs, smaller id first.
    pub fn pairs(&self) -> BTreeSet<(TaskId, TaskId)> {
        self.conflicts.iter().map(|c| (c.first, c.second)).collect()
    }
}

impl fmt::Display for ConflictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conflicts.is_empty() {
            return f.write_str("no conflicts");
        }
        for c in &self.conflicts {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Report every pair of tasks whose footprints conflict but which the graph
/// leaves unordered. An empty report means any admissible schedule computes
/// the same values.
pub fn check_dependence_sufficiency<T: Element>(graph: &TaskGraph<T>) -> ConflictReport {
    let reach = graph.reachability();
    let tasks = graph.tasks();
    let per_task = par::map_indices(tasks.len(), |i| {
        let a = &tasks[i];
        let mut found = Vec::new();
        for b in &tasks[i + 1..] {
            if reach.ordered(a.id, b.id) {
                continue;
            }
            for sa in &a.access_sets {
                for sb in &b.access_sets {
                    if !sa.conflicts_with(sb) {
                        continue;
                    }
                    found.push(Conflict {
                        first: a.id,
                        second: b.id,
                        first_label: a.label(),
                        second_label: b.label(),
                        first_mode: sa.mode,
                        second_mode: sb.mode,
                        buffer: sa.buffer,
                        overlap: sa.overlap(sb).unwrap_or_default(),
                    });
                }
            }
        }
        found
    });
    ConflictReport {
        conflicts: per_task.into_iter().flatten().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{lu_generate_tasks, lu_overlay, LuProblem};
    use crate::oracle::element_race_check;
    use crate::runtime::build_task_graph;

    #[test]
    fn lu_rules_are_sufficient() {
        let p = LuProblem::<f64>::generate(4, 2, 0).unwrap();
        let (tasks, rules) = lu_generate_tasks(&p, &lu_overlay().unwrap()).unwrap();
        let g = build_task_graph(tasks, &rules).unwrap();
        assert!(check_dependence_sufficiency(&g).is_empty());
        assert!(element_race_check(&g).is_empty());
    }

    #[test]
    fn dropping_cross_iteration_rule_exposes_diagonal_block() {
        let (n, m) = (3, 2);
        let p = LuProblem::<f64>::generate(n, m, 0).unwrap();
        let (tasks, rules) = lu_generate_tasks(&p, &lu_overlay().unwrap()).unwrap();
        let weakened = rules.without(|r| r.dependent.as_str() == "Task0" && r.prerequisite.as_str() == "Task3");
        let g = build_task_graph(tasks, &weakened).unwrap();
        let report = check_dependence_sufficiency(&g);
        assert!(!report.is_empty());
        for i in 1..n {
            let block = vec![i * m..(i + 1) * m, i * m..(i + 1) * m];
            assert!(
                report
                    .conflicts
                    .iter()
                    .any(|c| c.second_label == format!("Task0({i})") && c.overlap == block),
                "no conflict on block ({i},{i}):\n{report}"
            );
        }
        assert_eq!(report.pairs(), element_race_check(&g));
        assert!(report.to_string().contains("Task0(1)"));
    }
}
