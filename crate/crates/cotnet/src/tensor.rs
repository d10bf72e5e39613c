//! Dense N-dimensional tensors with a reverse-mode autodiff tape.
//!
//! Storage is a flat row-major buffer; image tensors use NCHW layout.
//! `Tensor` is a cheap handle (`Rc` inside): cloning shares storage, and the
//! tape hangs off each op output as a node holding the input handles plus a
//! backward closure. The graph is a DAG (edges from outputs to inputs), so
//! no reference cycles arise and memory is reclaimed as handles drop.
//!
//! Threading contract: tensors and tapes are single-thread objects (`Rc`,
//! `RefCell`, thread-local grad mode). Data-parallel callers must give each
//! worker its own tensors and its own tape; nothing here is `Send`.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True when newly created op outputs should record tape nodes.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with tape recording disabled (inference mode). Nested calls are
/// fine; the previous mode is restored on exit.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Backward closure: given the gradient of the loss w.r.t. this op's output
/// (and the output's forward value, for ops like softmax that reuse it),
/// produce per-input gradients aligned with the node's input list. `None`
/// marks inputs that do not require grad.
type BackwardFn<E> = Box<dyn Fn(&[E], &[E]) -> Vec<Option<Vec<E>>>>;

/// One recorded operation on the tape.
pub(crate) struct GradNode<E: Element> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct TensorInner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    node: Option<GradNode<E>>,
}

/// Shared handle to a tensor. Clones are O(1) and alias the same storage.
pub struct Tensor<E: Element> {
    inner: Rc<TensorInner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.node.as_ref().map(|n| n.op))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<E>,
        requires_grad: bool,
        node: Option<GradNode<E>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf tensor from existing data. Fails if the extents do not multiply
    /// out to `data.len()`.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!(
                    "shape {:?} implies {} elements, data has {}",
                    shape,
                    numel(shape),
                    data.len()
                ),
            });
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_inner(shape.to_vec(), vec![E::ZERO; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::new_inner(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::ONE)
    }

    pub fn scalar(value: E) -> Self {
        Self::new_inner(vec![], vec![value], false, None)
    }

    /// Marks a leaf as a gradient target. Calling this on an op output is a
    /// programming error: tape nodes fix their grad flags at creation.
    pub fn with_grad(self) -> Self {
        assert!(
            self.inner.node.is_none(),
            "with_grad() must be applied to leaf tensors"
        );
        // The handle may already be shared; rebuild only when needed.
        if self.inner.requires_grad {
            return self;
        }
        let data = self.inner.data.borrow().clone();
        Tensor::new_inner(self.inner.shape.clone(), data, true, None)
    }

    /// Internal constructor for op outputs; records a tape node when grad
    /// mode is on and any input requires grad, otherwise returns a plain
    /// tensor and lets the closure drop.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        op: &'static str,
        inputs: Vec<Tensor<E>>,
        backward: impl Fn(&[E], &[E]) -> Vec<Option<Vec<E>>> + 'static,
    ) -> Self {
        let tracked = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if tracked {
            let node = GradNode { op, inputs, backward: Box::new(backward) };
            Self::new_inner(shape, data, true, Some(node))
        } else {
            Self::new_inner(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    /// Extent along `axis`; scalar tensors have no axes.
    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&GradNode<E>> {
        self.inner.node.as_ref()
    }

    /// Read access to the flat buffer (row-major).
    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    /// In-place write access. Meant for optimizers and checkpoint loading;
    /// mutating an op output after the fact invalidates recorded gradients.
    pub fn data_mut(&self) -> RefMut<'_, Vec<E>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> E {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor with {} elements", data.len());
        data[0]
    }

    /// Accumulated gradient, if backward() deposited one.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy of the forward value with no tape behind it.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::new_inner(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse-mode sweep from a scalar loss. Each op node runs exactly
    /// once; every reachable tensor with `requires_grad` receives its
    /// accumulated gradient (repeated uses sum). Gradients add to existing
    /// `.grad` buffers, so callers zero them between steps.
    pub fn backward(&self) -> Result<()> {
        // Shapes [] and [1, 1, ...] both count as scalar.
        if self.len() != 1 {
            return Err(Error::NonScalarLoss { shape: self.inner.shape.clone() });
        }
        if !self.requires_grad() {
            return Err(Error::NoGradPath);
        }

        // Iterative post-order DFS; reversed, it is a topological order with
        // every consumer visited before its producer.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<E>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, idx)) = stack.pop() {
            let children = t.node().map(|n| n.inputs.as_slice()).unwrap_or(&[]);
            if idx < children.len() {
                let child = children[idx].clone();
                stack.push((t, idx + 1));
                // Frozen subgraphs contribute nothing; skip them entirely.
                if child.requires_grad() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }

        let mut pending: HashMap<u64, Vec<E>> = HashMap::new();
        pending.insert(self.id(), vec![E::ONE]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            t.accumulate_grad(&g);
            let Some(node) = t.node() else {
                continue;
            };
            let input_grads = (node.backward)(&g, &t.data());
            debug_assert_eq!(
                input_grads.len(),
                node.inputs.len(),
                "op '{}' returned a misaligned gradient list",
                node.op
            );
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(
                    ig.len(),
                    input.len(),
                    "op '{}' produced a gradient of wrong size",
                    node.op
                );
                match pending.get_mut(&input.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(ig) {
                            *a += b;
                        }
                    }
                    None => {
                        pending.insert(input.id(), ig);
                    }
                }
            }
        }
        Ok(())
    }
}
