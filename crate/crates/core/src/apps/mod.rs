// SPDX-License-Identifier: Apache-2.0
//! The two applications, written as task generators over their overlays.

mod lu;
mod vgg;

pub use lu::{lu_decompose, lu_decompose_with, lu_generate_tasks, lu_overlay, lu_rules, lu_task_graph, LuProblem};
pub use vgg::{
    vgg_forward, vgg_forward_with, vgg_generate_tasks, vgg_input, vgg_overlay, vgg_rules, vgg_task_graph, VggConfig,
    VggRun, VggWeights,
};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::overlay::{IpKind, Overlay};

/// Fail unless queue `q` of `overlay` is bound to `expected[q]` for every `q`.
fn require_layout<T: Element>(overlay: &Overlay<T>, expected: &[IpKind]) -> Result<()> {
    let actual: Vec<IpKind> = overlay.interfaces().iter().map(|i| i.ip.kind).collect();
    if actual != expected {
        return Err(Error::Config(format!(
            "overlay `{}` binds {:?}, this application needs {:?}",
            overlay.name(),
            actual,
            expected
        )));
    }
    if overlay.pending() != 0 {
        return Err(Error::Config(format!(
            "overlay `{}` already holds {} pending tasks",
            overlay.name(),
            overlay.pending()
        )));
    }
    Ok(())
}
