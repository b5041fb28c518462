use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// What a backward closure sees: the incoming gradient, the forward output
/// and the op inputs.
pub(crate) struct GradCtx<'a> {
    pub grad: &'a [f64],
    pub output: &'a [f64],
    pub inputs: &'a [Tensor],
}

impl GradCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Dense row-major `f64` array with optional reverse-mode gradient tracking.
///
/// Cloning is shallow: clones share data, gradient and graph position.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if shape.contains(&0) {
        return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
    }
    if n != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} holds {n} values, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            node,
        }))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A leaf that participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Builds an op output. The node is only recorded when gradients are
    /// enabled and at least one input requires them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if track {
            Self::build(shape, data, true, Some(Node { inputs, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    /// Direct write access; used by optimizers on leaf parameters.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.0.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data()[0]
    }

    fn grad_slot(&self) -> MutexGuard<'_, Option<Vec<f64>>> {
        self.0.grad.lock().expect("tensor grad lock poisoned")
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad_slot().clone()
    }

    pub fn set_grad(&self, grad: Option<Vec<f64>>) {
        *self.grad_slot() = grad;
    }

    pub fn zero_grad(&self) {
        self.set_grad(None);
    }

    /// Same data, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse-mode sweep from this scalar. Every reachable tensor that
    /// requires grad receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Rank(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.0.id) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let output = t.data();
                let ctx = GradCtx {
                    grad: &g,
                    output: &output,
                    inputs: &node.inputs,
                };
                let grads = (node.backward)(&ctx);
                drop(output);
                debug_assert_eq!(grads.len(), node.inputs.len());
                for (input, grad) in node.inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(grad.len(), input.numel());
                    match pending.get_mut(&input.0.id) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.0.id, grad);
                        }
                    }
                }
            }
            let mut slot = t.grad_slot();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph rooted here.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.requires_grad() && !seen.contains(&input.0.id) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(6).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}
