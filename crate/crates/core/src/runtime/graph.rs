// SPDX-License-Identifier: Apache-2.0
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::GraphError;

use super::{RuleSet, TaskId, TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeSource {
    Rule,
    QueueOrder,
}

/// `from` must complete before `to` starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: TaskId,
    pub to: TaskId,
    pub source: EdgeSource,
}

/// Tasks plus the edges derived from dependence rules and queue order.
pub struct TaskGraph<T: Element> {
    tasks: Vec<TaskInstance<T>>,
    edges: Vec<Edge>,
    preds: Vec<Vec<TaskId>>,
    succs: Vec<Vec<TaskId>>,
    topo: Vec<TaskId>,
}

impl<T: Element> std::fmt::Debug for TaskGraph<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskGraph")
            .field("tasks", &self.tasks.len())
            .field("edges", &self.edges)
            .finish()
    }
}

/// Instantiate `rules` over `tasks` and chain each queue in FIFO order.
///
/// A rule whose prerequisite instance does not exist (iteration before 0, or
/// a task that was never enqueued) contributes no edge.
pub fn build_task_graph<T: Element>(tasks: Vec<TaskInstance<T>>, rules: &RuleSet) -> Result<TaskGraph<T>, GraphError> {
    for (i, t) in tasks.iter().enumerate() {
        if t.id.0 != i {
            return Err(GraphError::Rule(format!(
                "task ids must be dense and ordered; position {i} holds id {}",
                t.id
            )));
        }
    }
    let mut by_instance: HashMap<(&TaskKind, usize), Vec<TaskId>> = HashMap::new();
    for t in &tasks {
        by_instance.entry((&t.kind, t.iteration)).or_default().push(t.id);
    }

    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |from: TaskId, to: TaskId, source: EdgeSource, edges: &mut Vec<Edge>| {
        if seen.insert((from, to)) {
            edges.push(Edge { from, to, source });
        }
    };

    for rule in rules.rules() {
        for t in tasks.iter().filter(|t| t.kind == rule.dependent) {
            if !rule.condition.holds(t.iteration) {
                continue;
            }
            let Some(iter) = t.iteration.checked_sub(rule.distance) else {
                continue;
            };
            if let Some(pres) = by_instance.get(&(&rule.prerequisite, iter)) {
                for &p in pres {
                    push(p, t.id, EdgeSource::Rule, &mut edges);
                }
            }
        }
    }

    let queue_count = tasks.iter().map(|t| t.queue + 1).max().unwrap_or(0);
    let mut last_in_queue: Vec<Option<TaskId>> = vec![None; queue_count];
    for t in &tasks {
        if let Some(prev) = last_in_queue[t.queue].replace(t.id) {
            push(prev, t.id, EdgeSource::QueueOrder, &mut edges);
        }
    }

    let n = tasks.len();
    let mut preds = vec![Vec::new(); n];
    let mut succs = vec![Vec::new(); n];
    for e in &edges {
        preds[e.to.0].push(e.from);
        succs[e.from.0].push(e.to);
    }

    let topo = topological_order(&preds, &succs).map_err(|remaining| {
        let witness = find_cycle(&preds, &remaining);
        GraphError::Cycle(witness.iter().map(|id| format!("{}#{}", tasks[id.0].label(), id)).collect())
    })?;

    Ok(TaskGraph {
        tasks,
        edges,
        preds,
        succs,
        topo,
    })
}

/// Kahn's algorithm, smallest id first. On failure returns the nodes that
/// could not be ordered.
fn topological_order(preds: &[Vec<TaskId>], succs: &[Vec<TaskId>]) -> Result<Vec<TaskId>, Vec<TaskId>> {
    let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..preds.len()).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(preds.len());
    while let Some(Reverse(u)) = ready.pop() {
        order.push(TaskId(u));
        for s in &succs[u] {
            indegree[s.0] -= 1;
            if indegree[s.0] == 0 {
                ready.push(Reverse(s.0));
            }
        }
    }
    if order.len() == preds.len() {
        Ok(order)
    } else {
        Err((0..preds.len()).filter(|&i| indegree[i] > 0).map(TaskId).collect())
    }
}

/// A cycle among `remaining`, first node repeated at the end. Every node Kahn
/// leaves behind has a predecessor that was also left behind, so walking
/// predecessors inside the remainder must revisit a node.
fn find_cycle(preds: &[Vec<TaskId>], remaining: &[TaskId]) -> Vec<TaskId> {
    let in_rest: HashSet<TaskId> = remaining.iter().copied().collect();
    let mut on_path: HashMap<TaskId, usize> = HashMap::new();
    let mut path = Vec::new();
    let mut cur = remaining[0];
    while !on_path.contains_key(&cur) {
        on_path.insert(cur, path.len());
        path.push(cur);
        cur = *preds[cur.0]
            .iter()
            .find(|p| in_rest.contains(p))
            .expect("leftover node has a leftover predecessor");
    }
    let mut cycle = path[on_path[&cur]..].to_vec();
    cycle.push(cur);
    cycle.reverse();
    cycle
}

impl<T: Element> TaskGraph<T> {
    pub fn tasks(&self) -> &[TaskInstance<T>] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &TaskInstance<T> {
        &self.tasks[id.0]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(from, to)` pairs, sorted.
    pub fn edge_pairs(&self) -> Vec<(TaskId, TaskId)> {
        let mut pairs: Vec<_> = self.edges.iter().map(|e| (e.from, e.to)).collect();
        pairs.sort();
        pairs
    }

    pub fn predecessors(&self, id: TaskId) -> &[TaskId] {
        &self.preds[id.0]
    }

    pub fn successors(&self, id: TaskId) -> &[TaskId] {
        &self.succs[id.0]
    }

    pub fn topological_order(&self) -> &[TaskId] {
        &self.topo
    }

    pub fn queue_count(&self) -> usize {
        self.tasks.iter().map(|t| t.queue + 1).max().unwrap_or(0)
    }

    /// Task ids per queue, FIFO order.
    pub fn queues(&self) -> Vec<Vec<TaskId>> {
        let mut queues = vec![Vec::new(); self.queue_count()];
        for t in &self.tasks {
            queues[t.queue].push(t.id);
        }
        queues
    }

    /// Transitive closure of the edge relation.
    pub fn reachability(&self) -> Reachability {
        let n = self.tasks.len();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for &u in self.topo.iter().rev() {
            for &s in &self.succs[u.0] {
                bits[u.0 * words + s.0 / 64] |= 1 << (s.0 % 64);
                for w in 0..words {
                    let v = bits[s.0 * words + w];
                    bits[u.0 * words + w] |= v;
                }
            }
        }
        Reachability { words, bits }
    }
}

/// Bit matrix: `reaches(a, b)` iff a path leads from `a` to `b`.
#[derive(Debug, Clone)]
pub struct Reachability {
    words: usize,
    bits: Vec<u64>,
}

impl Reachability {
    pub fn reaches(&self, from: TaskId, to: TaskId) -> bool {
        self.bits[from.0 * self.words + to.0 / 64] & (1 << (to.0 % 64)) != 0
    }

    /// True when either task must finish before the other starts.
    pub fn ordered(&self, a: TaskId, b: TaskId) -> bool {
        self.reaches(a, b) || self.reaches(b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{lu_overlay, lu_task_graph, LuProblem};
    use crate::runtime::Condition;

    fn lu_graph(n: usize) -> TaskGraph<f64> {
        let p = LuProblem::<f64>::generate(n, 2, 1).unwrap();
        lu_task_graph(&p, &lu_overlay().unwrap()).unwrap()
    }

    #[test]
    fn lu_n3_exact_edges() {
        let g = lu_graph(3);
        assert_eq!(g.len(), 9);
        let label = |id: TaskId| g.task(id).label();
        let mut got: Vec<(String, String, EdgeSource)> =
            g.edges().iter().map(|e| (label(e.from), label(e.to), e.source)).collect();
        got.sort();
        // hand enumeration: four rules over i = 0..2, plus FIFO chains
        let mut want: Vec<(String, String, EdgeSource)> = [
            ("Task0(0)", "Task1(0)", EdgeSource::Rule),
            ("Task0(0)", "Task2(0)", EdgeSource::Rule),
            ("Task1(0)", "Task3(0)", EdgeSource::Rule),
            ("Task2(0)", "Task3(0)", EdgeSource::Rule),
            ("Task3(0)", "Task0(1)", EdgeSource::Rule),
            ("Task0(1)", "Task1(1)", EdgeSource::Rule),
            ("Task0(1)", "Task2(1)", EdgeSource::Rule),
            ("Task1(1)", "Task3(1)", EdgeSource::Rule),
            ("Task2(1)", "Task3(1)", EdgeSource::Rule),
            ("Task3(1)", "Task0(2)", EdgeSource::Rule),
            ("Task0(0)", "Task0(1)", EdgeSource::QueueOrder),
            ("Task0(1)", "Task0(2)", EdgeSource::QueueOrder),
            ("Task1(0)", "Task1(1)", EdgeSource::QueueOrder),
            ("Task2(0)", "Task2(1)", EdgeSource::QueueOrder),
            ("Task3(0)", "Task3(1)", EdgeSource::QueueOrder),
        ]
        .iter()
        .map(|&(a, b, s)| (a.to_string(), b.to_string(), s))
        .collect();
        want.sort();
        assert_eq!(got, want);
        assert!(!got.iter().any(|(a, b, _)| a == "Task3(0)" && b == "Task0(0)"));
    }

    #[test]
    fn topological_order_respects_edges() {
        let g = lu_graph(4);
        let pos: HashMap<TaskId, usize> = g.topological_order().iter().enumerate().map(|(i, &t)| (t, i)).collect();
        assert_eq!(pos.len(), g.len());
        for e in g.edges() {
            assert!(pos[&e.from] < pos[&e.to]);
        }
        let r = g.reachability();
        assert!(r.reaches(TaskId(0), TaskId(g.len() - 1)));
        assert!(!r.reaches(TaskId(g.len() - 1), TaskId(0)));
    }

    #[test]
    fn cycle_is_reported_with_witness() {
        let o = lu_overlay::<f64>().unwrap();
        let a = crate::tensor::TensorBuffer::<f64>::zeros(&[2, 2]).unwrap();
        o.enqueue(0, "Task0", 0, vec![a.view().into()]).unwrap();
        o.enqueue(1, "Task1", 0, vec![a.view().into()]).unwrap();
        let mut rules = RuleSet::with_kinds(["Task0", "Task1"]);
        rules.depend("Task0", "Task1", 0, None).unwrap();
        rules.depend("Task1", "Task0", 0, Some(Condition::Always)).unwrap();
        match build_task_graph(o.drain(), &rules) {
            Err(GraphError::Cycle(w)) => {
                assert_eq!(w.first(), w.last());
                assert_eq!(w.len(), 3);
            }
            other => panic!("expected a cycle, got {other:?}"),
        }
    }

    #[test]
    fn missing_prerequisite_adds_no_edge() {
        let o = lu_overlay::<f64>().unwrap();
        let a = crate::tensor::TensorBuffer::<f64>::zeros(&[2, 2]).unwrap();
        o.enqueue(1, "Task1", 0, vec![a.view().into()]).unwrap();
        let mut rules = RuleSet::with_kinds(["Task0", "Task1"]);
        rules.depend("Task1", "Task0", 0, None).unwrap();
        let g = build_task_graph(o.drain(), &rules).unwrap();
        assert!(g.edges().is_empty());
    }
}
