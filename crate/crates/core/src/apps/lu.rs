// SPDX-License-Identifier: Apache-2.0
//! Blocked right-looking LU over a four-IP overlay.
//!
//! Step `i` factors the diagonal block, solves the row and column panels
//! against it, and applies a rank-`m` update to the trailing submatrix:
//!
//! ```text
//! Task0(i): A_ii          -> L_ii U_ii                   queue 0
//! Task1(i): A_i,i+1..     -> L_ii^-1 A_i,i+1..           queue 1
//! Task2(i): A_i+1..,i     -> A_i+1..,i U_ii^-1           queue 2
//! Task3(i): A_i+1..,i+1.. -= L_i+1..,i U_i,i+1..         queue 3
//! ```
//!
//! At `i = n - 1` the panels are empty, so only Task0 is enqueued.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::overlay::{IpDescriptor, IpKind, Overlay, OverlayBuilder};
use crate::runtime::{
    build_task_graph, run_with, Arg, Condition, ExecutionTrace, RuleSet, RunOptions, TaskGraph, TaskInstance,
};
use crate::tensor::{Fill, TensorBuffer};

use super::require_layout;

const LAYOUT: [IpKind; 4] = [
    IpKind::Lu,
    IpKind::TransformRowPanel,
    IpKind::TransformColumnPanel,
    IpKind::Gemm,
];

#[derive(Debug, Clone)]
pub struct LuProblem<T: Element = f64> {
    pub a: TensorBuffer<T>,
    /// Blocks along the diagonal.
    pub n: usize,
    /// Block edge length.
    pub m: usize,
}

impl<T: Element> LuProblem<T> {
    /// `U(-1, 1) + n·m·I`, strictly diagonally dominant.
    pub fn generate(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config(format!("LU sizes must be positive, got n={n} m={m}")));
        }
        let size = n * m;
        let a = TensorBuffer::new(
            &[size, size],
            Fill::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed,
            },
        )?;
        let shift = T::from_f64(size as f64);
        for d in 0..size {
            a.set(&[d, d], a.get(&[d, d]) + shift);
        }
        Ok(LuProblem { a, n, m })
    }

    pub fn from_buffer(a: TensorBuffer<T>, m: usize) -> Result<Self> {
        let shape = a.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Config(format!("LU needs a square matrix, got shape {shape:?}")));
        }
        if m == 0 || !shape[0].is_multiple_of(m) {
            return Err(Error::Config(format!("block size {m} does not divide extent {}", shape[0])));
        }
        let n = shape[0] / m;
        Ok(LuProblem { a, n, m })
    }

    pub fn size(&self) -> usize {
        self.n * self.m
    }
}

pub fn lu_overlay<T: Element>() -> Result<Overlay<T>> {
    let mut b = OverlayBuilder::new("lu");
    for (q, kind) in LAYOUT.into_iter().enumerate() {
        b.command(&IpDescriptor::new(kind), q, kind.formal_signature())?;
    }
    Ok(b.build()?)
}

/// The four dependence declarations of the blocked algorithm.
pub fn lu_rules() -> RuleSet {
    let mut rules = RuleSet::with_kinds(["Task0", "Task1", "Task2", "Task3"]);
    let built = (|| {
        rules.depend("Task0", "Task3", 1, Some(Condition::IterGreaterThan(0)))?;
        rules.depend("Task1", "Task0", 0, None)?;
        rules.depend("Task2", "Task0", 0, None)?;
        rules.depend("Task3", "Task1", 0, None)?.depend("Task2", 0, None)?;
        Ok::<_, crate::error::GraphError>(())
    })();
    built.expect("rules only name declared kinds");
    rules
}

/// Enqueue every step's tasks on `overlay` and hand them back with the rules.
pub fn lu_generate_tasks<T: Element>(
    problem: &LuProblem<T>,
    overlay: &Overlay<T>,
) -> Result<(Vec<TaskInstance<T>>, RuleSet)> {
    let (n, m, a) = (problem.n, problem.m, &problem.a);
    if n < 1 {
        return Err(Error::Config("LU needs at least one block".into()));
    }
    require_layout(overlay, &LAYOUT)?;
    let one = T::one();
    for i in 0..n {
        overlay.enqueue(0, "Task0", i, vec![a.bcropped(m, i, i, i, i)?.into()])?;
        if i + 1 < n {
            let row_panel = a.bcropped(m, i, i, i, n - 1)?;
            let column_panel = a.bcropped(m, i, n - 1, i, i)?;
            let column_panel1 = a.bcropped(m, i + 1, n - 1, i, i)?;
            let row_panel1 = a.bcropped(m, i, i, i + 1, n - 1)?;
            let trailing = a.bcropped(m, i + 1, n - 1, i + 1, n - 1)?;
            overlay.enqueue(1, "Task1", i, vec![row_panel.into()])?;
            overlay.enqueue(2, "Task2", i, vec![column_panel.into()])?;
            overlay.enqueue(
                3,
                "Task3",
                i,
                vec![
                    trailing.into(),
                    column_panel1.into(),
                    row_panel1.into(),
                    Arg::Scalar(one),
                    Arg::Scalar(-one),
                    Arg::Scalar(one),
                ],
            )?;
        }
    }
    Ok((overlay.drain(), lu_rules()))
}

pub fn lu_task_graph<T: Element>(problem: &LuProblem<T>, overlay: &Overlay<T>) -> Result<TaskGraph<T>> {
    let (tasks, rules) = lu_generate_tasks(problem, overlay)?;
    Ok(build_task_graph(tasks, &rules)?)
}

/// Factor `problem.a` in place into packed `L\U` form.
pub fn lu_decompose<T: Element>(problem: &LuProblem<T>, workers: usize) -> Result<ExecutionTrace> {
    lu_decompose_with(problem, &lu_overlay()?, RunOptions::new(workers))
}

pub fn lu_decompose_with<T: Element>(
    problem: &LuProblem<T>,
    overlay: &Overlay<T>,
    opts: RunOptions,
) -> Result<ExecutionTrace> {
    let graph = lu_task_graph(problem, overlay)?;
    Ok(run_with(overlay, &graph, opts)?)
}
