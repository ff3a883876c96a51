// SPDX-License-Identifier: Apache-2.0
//! The overlay container: IPs bound to command queues, and the enqueue
//! surface applications program against.
//!
//! Building an overlay produces a JSON manifest (`*.overlay.json`) that plays
//! the role of the compiled bitstream. Loading a manifest re-binds every IP
//! name to its kernel in [`crate::kernels`].

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{KernelError, OverlayError};
use crate::kernels::{self, ConvControlFlags, FeatureBuffer, GemmCoefficients};
use crate::runtime::{Arg, TaskHandle, TaskId, TaskInstance, TaskKind};
use crate::tensor::{AccessMode, AccessSet, BlockView};

/// The kernels an IP name can be bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IpKind {
    #[serde(rename = "LU")]
    Lu,
    TransformRowPanel,
    TransformColumnPanel,
    #[serde(rename = "GEMM")]
    Gemm,
    Convolution,
    Maxpool,
}

impl IpKind {
    pub const ALL: [IpKind; 6] = [
        IpKind::Lu,
        IpKind::TransformRowPanel,
        IpKind::TransformColumnPanel,
        IpKind::Gemm,
        IpKind::Convolution,
        IpKind::Maxpool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IpKind::Lu => "LU",
            IpKind::TransformRowPanel => "TransformRowPanel",
            IpKind::TransformColumnPanel => "TransformColumnPanel",
            IpKind::Gemm => "GEMM",
            IpKind::Convolution => "Convolution",
            IpKind::Maxpool => "Maxpool",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Formal parameters of the kernel behind this IP.
    pub fn formal_signature(self) -> &'static [ParamKind] {
        use ParamKind::*;
        match self {
            IpKind::Lu | IpKind::TransformRowPanel | IpKind::TransformColumnPanel => &[View],
            IpKind::Gemm => &[View, View, View, Scalar, Scalar, Scalar],
            IpKind::Convolution => &[View, View, View, Flag, Flag, Flag, Flag],
            IpKind::Maxpool => &[View, Flag],
        }
    }
}

impl fmt::Display for IpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    View,
    Scalar,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IpDescriptor {
    pub name: String,
    pub kind: IpKind,
    pub signature: Vec<ParamKind>,
}

impl IpDescriptor {
    pub fn new(kind: IpKind) -> Self {
        IpDescriptor {
            name: kind.name().to_owned(),
            kind,
            signature: kind.formal_signature().to_vec(),
        }
    }

    /// Resolve a registered IP by name.
    pub fn lookup(name: &str) -> Result<Self, OverlayError> {
        IpKind::from_name(name)
            .map(Self::new)
            .ok_or_else(|| OverlayError::Config(format!("no kernel registered for IP `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommandInterface {
    pub queue_no: usize,
    pub ip: IpDescriptor,
}

/// Declare that `ip` is driven by command queue `queue_no` with the given
/// parameter list.
pub fn command(ip: &IpDescriptor, queue_no: usize, signature: &[ParamKind]) -> Result<CommandInterface, OverlayError> {
    if signature != ip.kind.formal_signature() {
        return Err(OverlayError::Config(format!(
            "{} takes {:?}, interface declares {:?}",
            ip.name,
            ip.kind.formal_signature(),
            signature
        )));
    }
    Ok(CommandInterface {
        queue_no,
        ip: IpDescriptor {
            signature: signature.to_vec(),
            ..ip.clone()
        },
    })
}

/// Incremental overlay construction; rejects duplicate queue numbers as they
/// are declared.
#[derive(Debug, Clone)]
pub struct OverlayBuilder {
    name: String,
    interfaces: Vec<CommandInterface>,
}

impl OverlayBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        OverlayBuilder {
            name: name.into(),
            interfaces: Vec::new(),
        }
    }

    pub fn command(&mut self, ip: &IpDescriptor, queue_no: usize, signature: &[ParamKind]) -> Result<&mut Self, OverlayError> {
        if self.interfaces.iter().any(|i| i.queue_no == queue_no) {
            return Err(OverlayError::Config(format!("queue {queue_no} is already bound")));
        }
        self.interfaces.push(command(ip, queue_no, signature)?);
        Ok(self)
    }

    pub fn build<T: Element>(&self) -> Result<Overlay<T>, OverlayError> {
        build_overlay(self.name.clone(), self.interfaces.clone())
    }
}

pub fn build_overlay<T: Element>(name: impl Into<String>, mut interfaces: Vec<CommandInterface>) -> Result<Overlay<T>, OverlayError> {
    if interfaces.is_empty() {
        return Err(OverlayError::Config("an overlay needs at least one IP".into()));
    }
    interfaces.sort_by_key(|i| i.queue_no);
    for (expected, iface) in interfaces.iter().enumerate() {
        if iface.queue_no != expected {
            return Err(OverlayError::Config(format!(
                "queue numbers must be contiguous from 0; expected {expected}, found {}",
                iface.queue_no
            )));
        }
        if iface.ip.signature != iface.ip.kind.formal_signature() {
            return Err(OverlayError::Config(format!("signature mismatch for {}", iface.ip.name)));
        }
    }
    let queues = vec![Vec::new(); interfaces.len()];
    Ok(Overlay {
        shared: Arc::new(Shared {
            name: name.into(),
            interfaces,
            state: Mutex::new(QueueState {
                tasks: Vec::new(),
                queues,
            }),
            feature_buffer: FeatureBuffer::new(),
        }),
    })
}

/// Serialized form of an overlay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub ips: Vec<ManifestIp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestIp {
    pub name: String,
    pub queue: usize,
    pub signature: Vec<ParamKind>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OverlayError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OverlayError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

struct QueueState<T: Element> {
    tasks: Vec<TaskInstance<T>>,
    queues: Vec<Vec<TaskId>>,
}

struct Shared<T: Element> {
    name: String,
    interfaces: Vec<CommandInterface>,
    state: Mutex<QueueState<T>>,
    feature_buffer: FeatureBuffer<T>,
}

/// Handle to a runnable overlay. Clones share queue state.
pub struct Overlay<T: Element = f64> {
    shared: Arc<Shared<T>>,
}

impl<T: Element> Clone for Overlay<T> {
    fn clone(&self) -> Self {
        Overlay {
            shared: Arc::clone(&self.shared),
        }
    }
}

impl<T: Element> fmt::Debug for Overlay<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Overlay")
            .field("name", &self.shared.name)
            .field("queues", &self.shared.interfaces.iter().map(|i| i.ip.name.as_str()).collect::<Vec<_>>())
            .finish()
    }
}

impl<T: Element> Overlay<T> {
    pub fn name(&self) -> &str {
        &self.shared.name
    }

    /// Interfaces ordered by queue number.
    pub fn interfaces(&self) -> &[CommandInterface] {
        &self.shared.interfaces
    }

    pub fn queue_count(&self) -> usize {
        self.shared.interfaces.len()
    }

    pub fn feature_buffer(&self) -> &FeatureBuffer<T> {
        &self.shared.feature_buffer
    }

    pub fn shares_state_with(&self, other: &Overlay<T>) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.shared.name.clone(),
            ips: self
                .shared
                .interfaces
                .iter()
                .map(|i| ManifestIp {
                    name: i.ip.name.clone(),
                    queue: i.queue_no,
                    signature: i.ip.signature.clone(),
                })
                .collect(),
        }
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<(), OverlayError> {
        self.manifest().save(path)
    }

    pub fn from_manifest(manifest: &Manifest) -> Result<Self, OverlayError> {
        let interfaces = manifest
            .ips
            .iter()
            .map(|ip| command(&IpDescriptor::lookup(&ip.name)?, ip.queue, &ip.signature))
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = vec![false; interfaces.len()];
        for i in &interfaces {
            match seen.get_mut(i.queue_no) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(OverlayError::Config(format!("queue {} is bound twice", i.queue_no))),
                None => {}
            }
        }
        build_overlay(manifest.name.clone(), interfaces)
    }

    fn state(&self) -> MutexGuard<'_, QueueState<T>> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Append a command to queue `queue_no`. Nothing executes until the
    /// drained tasks are handed to the scheduler.
    pub fn enqueue(
        &self,
        queue_no: usize,
        kind: impl Into<TaskKind>,
        iteration: usize,
        args: Vec<Arg<T>>,
    ) -> Result<TaskHandle, OverlayError> {
        let iface = self.shared.interfaces.get(queue_no).ok_or_else(|| {
            OverlayError::Invocation(format!(
                "queue {queue_no} does not exist; overlay `{}` has {} queues",
                self.shared.name,
                self.queue_count()
            ))
        })?;
        let kinds: Vec<ParamKind> = args.iter().map(Arg::kind).collect();
        if kinds != iface.ip.signature {
            return Err(OverlayError::Invocation(format!(
                "{} on queue {queue_no} takes {:?}, got {:?}",
                iface.ip.name, iface.ip.signature, kinds
            )));
        }
        let access_sets = derive_access_sets(iface.ip.kind, &args, &self.shared.feature_buffer);
        let kind = kind.into();
        let mut state = self.state();
        let id = TaskId(state.tasks.len());
        state.queues[queue_no].push(id);
        state.tasks.push(TaskInstance {
            id,
            kind: kind.clone(),
            queue: queue_no,
            iteration,
            ip: iface.ip.kind,
            args,
            access_sets,
        });
        Ok(TaskHandle {
            id,
            kind,
            queue: queue_no,
            iteration,
        })
    }

    pub fn queue_len(&self, queue_no: usize) -> usize {
        self.state().queues.get(queue_no).map_or(0, Vec::len)
    }

    /// Ids in queue `queue_no`, front first.
    pub fn queue_ids(&self, queue_no: usize) -> Vec<TaskId> {
        self.state().queues.get(queue_no).cloned().unwrap_or_default()
    }

    pub fn pending(&self) -> usize {
        self.state().tasks.len()
    }

    /// Hand every pending task over (in id order) and reset the queues. Ids of
    /// later enqueues start again at 0.
    pub fn drain(&self) -> Vec<TaskInstance<T>> {
        let mut state = self.state();
        for q in state.queues.iter_mut() {
            q.clear();
        }
        std::mem::take(&mut state.tasks)
    }
}

impl<T: Element> PartialEq for Overlay<T> {
    fn eq(&self, other: &Self) -> bool {
        self.manifest() == other.manifest()
    }
}

/// Fresh overlay handle from a manifest file.
pub fn load_overlay<T: Element>(path: impl AsRef<Path>) -> Result<Overlay<T>, OverlayError> {
    let text = std::fs::read_to_string(path)?;
    Overlay::from_manifest(&Manifest::from_json(&text)?)
}

/// Keeps loaded overlays so that loading the same manifest again returns the
/// already-live handle.
pub struct OverlayRegistry<T: Element> {
    loaded: HashMap<PathBuf, Overlay<T>>,
}

impl<T: Element> Default for OverlayRegistry<T> {
    fn default() -> Self {
        OverlayRegistry { loaded: HashMap::new() }
    }
}

impl<T: Element> OverlayRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<Overlay<T>, OverlayError> {
        let key = std::fs::canonicalize(path.as_ref())?;
        if let Some(o) = self.loaded.get(&key) {
            return Ok(o.clone());
        }
        let overlay = load_overlay(&key)?;
        self.loaded.insert(key, overlay.clone());
        Ok(overlay)
    }
}

fn conv_flags<T: Element>(args: &[Arg<T>]) -> ConvControlFlags {
    let f = |i: usize| args[i].as_flag().unwrap_or(false);
    ConvControlFlags::new(f(3), f(4), f(5), f(6))
}

/// Footprints of a command, derived from its IP and bound arguments.
/// Operands routed through the feature buffer contribute the buffer's slot
/// instead of their (unused) views.
pub fn derive_access_sets<T: Element>(ip: IpKind, args: &[Arg<T>], fb: &FeatureBuffer<T>) -> Vec<AccessSet> {
    let view = |i: usize| args[i].as_view().expect("signature checked");
    match ip {
        IpKind::Lu => vec![view(0).access_set(AccessMode::ReadWrite)],
        IpKind::TransformRowPanel | IpKind::TransformColumnPanel => {
            let p = view(0);
            let shape = p.shape();
            // the first block is read, the rest rewritten
            let (axis, m) = if ip == IpKind::TransformRowPanel {
                (1, shape[0])
            } else {
                (0, shape[1])
            };
            match (p.crop(axis, 0, m), p.crop(axis, m, shape[axis].saturating_sub(m))) {
                (Ok(first), Ok(rest)) => vec![
                    first.access_set(AccessMode::Read),
                    rest.access_set(AccessMode::ReadWrite),
                ],
                _ => vec![p.access_set(AccessMode::ReadWrite)],
            }
        }
        IpKind::Gemm => vec![
            view(0).access_set(AccessMode::ReadWrite),
            view(1).access_set(AccessMode::Read),
            view(2).access_set(AccessMode::Read),
        ],
        IpKind::Convolution => {
            let flags = conv_flags(args);
            let mut sets = Vec::with_capacity(3);
            match (flags.read_input_from_buffer, flags.store_output_to_buffer) {
                (true, true) => sets.push(fb.access_set(AccessMode::ReadWrite)),
                (true, false) => {
                    sets.push(fb.access_set(AccessMode::Read));
                    sets.push(view(1).access_set(AccessMode::Write));
                }
                (false, true) => {
                    sets.push(view(0).access_set(AccessMode::Read));
                    sets.push(fb.access_set(AccessMode::Write));
                }
                (false, false) => {
                    sets.push(view(0).access_set(AccessMode::Read));
                    sets.push(view(1).access_set(AccessMode::Write));
                }
            }
            sets.push(view(2).access_set(AccessMode::Read));
            sets
        }
        IpKind::Maxpool => {
            if args[1].as_flag().unwrap_or(false) {
                vec![fb.access_set(AccessMode::ReadWrite)]
            } else {
                vec![
                    fb.access_set(AccessMode::Read),
                    view(0).access_set(AccessMode::Write),
                ]
            }
        }
    }
}

/// What a kernel reports back to the scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KernelReport {
    /// Extents of the produced feature map (CNN kernels only).
    pub out_dims: Option<Vec<usize>>,
    /// Floating-point operation estimate, used for virtual time.
    pub flops: u64,
}

fn view_arg<T: Element>(task: &TaskInstance<T>, i: usize) -> Result<&BlockView<T>, KernelError> {
    task.args
        .get(i)
        .and_then(Arg::as_view)
        .ok_or_else(|| KernelError::Shape(format!("argument {i} of {} is not a view", task.label())))
}

fn scalar_arg<T: Element>(task: &TaskInstance<T>, i: usize) -> Result<T, KernelError> {
    task.args
        .get(i)
        .and_then(Arg::as_scalar)
        .ok_or_else(|| KernelError::Shape(format!("argument {i} of {} is not a scalar", task.label())))
}

/// Run the kernel bound to a task's IP.
pub fn dispatch<T: Element>(task: &TaskInstance<T>, fb: &FeatureBuffer<T>) -> Result<KernelReport, KernelError> {
    let v0 = view_arg(task, 0)?;
    let shape = v0.shape();
    let flops = |n: usize| n as u64;
    match task.ip {
        IpKind::Lu => {
            kernels::lu_factor_block(v0)?;
            let m = shape[0];
            Ok(KernelReport {
                out_dims: None,
                flops: flops(2 * m * m * m / 3),
            })
        }
        IpKind::TransformRowPanel => {
            kernels::transform_row_panel(v0)?;
            let (m, cols) = (shape[0], shape[1]);
            Ok(KernelReport {
                out_dims: None,
                flops: flops(m * m * cols.saturating_sub(m)),
            })
        }
        IpKind::TransformColumnPanel => {
            kernels::transform_column_panel(v0)?;
            let (rows, m) = (shape[0], shape[1]);
            Ok(KernelReport {
                out_dims: None,
                flops: flops(m * m * rows.saturating_sub(m)),
            })
        }
        IpKind::Gemm => {
            let (a, b) = (view_arg(task, 1)?, view_arg(task, 2)?);
            let co = GemmCoefficients::new(scalar_arg(task, 3)?, scalar_arg(task, 4)?, scalar_arg(task, 5)?);
            kernels::gemm(v0, a, b, co)?;
            Ok(KernelReport {
                out_dims: None,
                flops: flops(2 * shape[0] * shape[1] * a.shape()[1]),
            })
        }
        IpKind::Convolution => {
            let (y, w) = (view_arg(task, 1)?, view_arg(task, 2)?);
            let flags = conv_flags(&task.args);
            let dims = kernels::convolution(v0, y, w, flags, fb)?;
            // every output element costs one multiply-add per weight feeding it
            let fan_in = w.len() / dims.last().copied().unwrap_or(1).max(1);
            let outputs: usize = dims.iter().product();
            Ok(KernelReport {
                out_dims: Some(dims),
                flops: flops(2 * outputs * fan_in),
            })
        }
        IpKind::Maxpool => {
            let store = task.args.get(1).and_then(Arg::as_flag).unwrap_or(false);
            let dims = kernels::maxpool(v0, store, fb)?;
            let outputs: usize = dims.iter().product();
            Ok(KernelReport {
                out_dims: Some(dims),
                flops: flops(4 * outputs),
            })
        }
    }
}
