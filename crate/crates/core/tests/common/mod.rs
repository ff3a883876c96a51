// SPDX-License-Identifier: Apache-2.0
//! Random GEMM-only task graphs for scheduler and checker properties.

#![allow(dead_code)]

use overlay_sim::overlay::{IpDescriptor, IpKind, Overlay, OverlayBuilder};
use overlay_sim::runtime::{build_task_graph, Arg, Condition, RuleSet, TaskGraph, TaskKind};
use overlay_sim::tensor::{Fill, TensorBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomGraph {
    pub overlay: Overlay<f64>,
    pub graph: TaskGraph<f64>,
    pub out: TensorBuffer<f64>,
}

pub fn gemm_overlay(queues: usize) -> Overlay<f64> {
    let ip = IpDescriptor::new(IpKind::Gemm);
    let mut b = OverlayBuilder::new("gemm");
    for q in 0..queues {
        b.command(&ip, q, &ip.signature).unwrap();
    }
    b.build().unwrap()
}

/// Up to 4 queues, 4 task kinds and 4 iterations. Every task accumulates into
/// one 2x2 block of a shared 4x4 output; rules are random but always point
/// from an earlier enqueue to a later one, so the graph is acyclic.
pub fn random_gemm_graph(seed: u64) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queues = rng.gen_range(1..=4);
    let kinds = rng.gen_range(1..=4);
    let iterations = rng.gen_range(1..=4);
    let kind_queue: Vec<usize> = (0..kinds).map(|_| rng.gen_range(0..queues)).collect();
    let overlay = gemm_overlay(queues);
    let out = TensorBuffer::<f64>::new(&[4, 4], Fill::Uniform { lo: -1.0, hi: 1.0, seed }).unwrap();
    let a = TensorBuffer::<f64>::new(&[2, 2], Fill::Uniform { lo: -0.5, hi: 0.5, seed: seed + 1 }).unwrap();
    let name = |k: usize| TaskKind::new(format!("K{k}"));

    for i in 0..iterations {
        for k in 0..kinds {
            if rng.gen_bool(0.2) {
                continue;
            }
            let (br, bc) = (rng.gen_range(0..2), rng.gen_range(0..2));
            let args = vec![
                out.bcropped(2, br, br, bc, bc).unwrap().into(),
                a.view().into(),
                a.view().into(),
                Arg::Scalar(1.0),
                Arg::Scalar(1.0),
                Arg::Scalar(1.0),
            ];
            overlay.enqueue(kind_queue[k], name(k), i, args).unwrap();
        }
    }

    let mut rules = RuleSet::with_kinds((0..kinds).map(name));
    for _ in 0..rng.gen_range(0..=6) {
        let dep = rng.gen_range(0..kinds);
        let pre = rng.gen_range(0..kinds);
        let distance = if pre < dep && rng.gen_bool(0.5) { 0 } else { 1 };
        let condition = if rng.gen_bool(0.3) { Some(Condition::IterGreaterThan(1)) } else { None };
        rules.depend(name(dep), name(pre), distance, condition).unwrap();
    }
    let graph = build_task_graph(overlay.drain(), &rules).unwrap();
    RandomGraph { overlay, graph, out }
}
