// SPDX-License-Identifier: Apache-2.0
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::overlay::{IpKind, ParamKind};
use crate::tensor::{AccessSet, BlockView};

/// Dense task identifier, assigned in enqueue order starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub usize);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Application-level label that dependence rules refer to (`Task0`,
/// `ConvLayers[3]`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskKind(pub String);

impl TaskKind {
    pub fn new(name: impl Into<String>) -> Self {
        TaskKind(name.into())
    }

    /// `family[index]`, the naming used for arrays of task kinds.
    pub fn indexed(family: &str, index: usize) -> Self {
        TaskKind(format!("{family}[{index}]"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for TaskKind {
    fn from(s: &str) -> Self {
        TaskKind(s.to_owned())
    }
}

impl From<String> for TaskKind {
    fn from(s: String) -> Self {
        TaskKind(s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One bound parameter of a command.
pub enum Arg<T: Element> {
    View(BlockView<T>),
    Scalar(T),
    Flag(bool),
}

impl<T: Element> Clone for Arg<T> {
    fn clone(&self) -> Self {
        match self {
            Arg::View(v) => Arg::View(v.clone()),
            Arg::Scalar(s) => Arg::Scalar(*s),
            Arg::Flag(b) => Arg::Flag(*b),
        }
    }
}

impl<T: Element> fmt::Debug for Arg<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::View(v) => write!(f, "View({}{})", v.buffer().id(), crate::tensor::fmt_ranges(v.ranges())),
            Arg::Scalar(s) => write!(f, "Scalar({s})"),
            Arg::Flag(b) => write!(f, "Flag({b})"),
        }
    }
}

impl<T: Element> Arg<T> {
    pub fn kind(&self) -> ParamKind {
        match self {
            Arg::View(_) => ParamKind::View,
            Arg::Scalar(_) => ParamKind::Scalar,
            Arg::Flag(_) => ParamKind::Flag,
        }
    }

    pub fn as_view(&self) -> Option<&BlockView<T>> {
        match self {
            Arg::View(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<T> {
        match self {
            Arg::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_flag(&self) -> Option<bool> {
        match self {
            Arg::Flag(b) => Some(*b),
            _ => None,
        }
    }
}

impl<T: Element> From<BlockView<T>> for Arg<T> {
    fn from(v: BlockView<T>) -> Self {
        Arg::View(v)
    }
}

impl<T: Element> From<bool> for Arg<T> {
    fn from(b: bool) -> Self {
        Arg::Flag(b)
    }
}

/// One enqueued command.
pub struct TaskInstance<T: Element> {
    pub id: TaskId,
    pub kind: TaskKind,
    pub queue: usize,
    pub iteration: usize,
    pub ip: IpKind,
    pub args: Vec<Arg<T>>,
    pub access_sets: Vec<AccessSet>,
}

impl<T: Element> Clone for TaskInstance<T> {
    fn clone(&self) -> Self {
        TaskInstance {
            id: self.id,
            kind: self.kind.clone(),
            queue: self.queue,
            iteration: self.iteration,
            ip: self.ip,
            args: self.args.clone(),
            access_sets: self.access_sets.clone(),
        }
    }
}

impl<T: Element> fmt::Debug for TaskInstance<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskInstance")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("queue", &self.queue)
            .field("iteration", &self.iteration)
            .field("ip", &self.ip)
            .field("args", &self.args)
            .finish()
    }
}

impl<T: Element> TaskInstance<T> {
    /// `Kind(i)`, as used in diagnostics.
    pub fn label(&self) -> String {
        format!("{}({})", self.kind, self.iteration)
    }
}

/// Returned by enqueue so the caller can refer to the task.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskHandle {
    pub id: TaskId,
    pub kind: TaskKind,
    pub queue: usize,
    pub iteration: usize,
}
