//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is an immutable node in a dynamically built graph. Leaves
//! created with [`Tensor::param`] own a gradient buffer which [`Tensor::backward`]
//! accumulates into; interior nodes hold a closure mapping the upstream
//! gradient to one gradient per parent. Shapes never broadcast except for the
//! scalar-with-tensor kernels, so callers reshape explicitly.

mod ops;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::TensorError;
use crate::scalar::Scalar;

pub use ops::gelu_scalar;

pub type TensorResult<T> = std::result::Result<T, TensorError>;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording a graph on this thread: every result is a
/// constant. Used for evaluation and pseudo-labelling.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(NO_GRAD.with(|c| c.replace(true)));
    f()
}

struct GradOp<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: AtomicBool,
    op: Option<GradOp<T>>,
}

/// Reference-counted handle to a graph node. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn new_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Option<GradOp<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad: AtomicBool::new(requires_grad),
            op,
        }))
    }

    /// A constant tensor; it never receives a gradient.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> TensorResult<Self> {
        check_len("from_vec", shape, data.len())?;
        check_finite("from_vec", &data)?;
        Ok(Self::new_node(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], data: Vec<T>) -> TensorResult<Self> {
        let t = Self::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_node(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::new_node(shape.to_vec(), vec![T::one(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::new_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_node(vec![], vec![value], false, None)
    }

    /// Builds an interior node from a precomputed value and a backward closure.
    ///
    /// The closure receives the upstream gradient and returns one entry per
    /// parent (`None` for parents that need no gradient). Used by kernels here
    /// and by loss modules that need a bespoke derivative (gradient reversal,
    /// absolute value).
    pub fn from_op(
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> TensorResult<Self> {
        check_len(op_name, &shape, data.len())?;
        check_finite(op_name, &data)?;
        let requires_grad = !NO_GRAD.with(Cell::get) && parents.iter().any(|p| p.requires_grad());
        let op = if requires_grad {
            Some(GradOp {
                parents,
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Ok(Self::new_node(shape, data, requires_grad, op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.load(Ordering::Relaxed)
    }

    /// Toggles gradient tracking on a leaf. Interior nodes keep the flag they
    /// were built with.
    pub fn set_requires_grad(&self, on: bool) {
        if self.0.op.is_none() {
            self.0.requires_grad.store(on, Ordering::Relaxed);
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Overwrites a leaf's values in place (optimizer updates, checkpoint loads).
    pub fn set_data(&self, data: Vec<T>) -> TensorResult<()> {
        if !self.is_leaf() {
            return Err(TensorError::Invalid {
                op: "set_data",
                msg: "only leaves can be overwritten".into(),
            });
        }
        check_len("set_data", &self.0.shape, data.len())?;
        check_finite("set_data", &data)?;
        *self.0.data.write().expect("tensor data lock poisoned") = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// A constant copy cut from the graph.
    pub fn detach(&self) -> Self {
        Self::new_node(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> TensorResult<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.0.id, vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.op {
                None => {
                    if node.requires_grad() {
                        let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(op) => {
                    let parent_grads = (op.backward)(&g);
                    if parent_grads.iter().flatten().any(|pg| !pg.iter().all(|v| v.is_finite())) {
                        return Err(TensorError::NonFinite { op: "backward" });
                    }
                    debug_assert_eq!(parent_grads.len(), op.parents.len());
                    for (parent, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match grads.get_mut(&parent.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                grads.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<T>> {
        // Iterative DFS; post-order gives parents before children.
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.0.op {
                for p in &op.parents {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

pub(crate) fn check_len(op: &'static str, shape: &[usize], len: usize) -> TensorResult<()> {
    if numel(shape) != len {
        return Err(TensorError::Invalid {
            op,
            msg: format!("shape {shape:?} needs {} values, got {len}", numel(shape)),
        });
    }
    Ok(())
}

pub(crate) fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> TensorResult<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}
