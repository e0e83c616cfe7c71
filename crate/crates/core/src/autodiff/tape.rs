use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor4};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    epoch: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// What a backward rule sees: the forward inputs, the forward output and the
/// gradient flowing into that output.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor4<T>>,
    pub output: &'a Tensor4<T>,
    pub grad: &'a [T],
}

/// Per-input gradients returned by a backward rule, aligned with the inputs.
/// `None` means "no contribution".
pub type InputGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> InputGrads<T>>;

struct Recorded<T> {
    name: &'static str,
    inputs: Vec<Var>,
    backward: BackwardFn<T>,
}

struct Node<T> {
    value: Tensor4<T>,
    requires_grad: bool,
    op: Option<Recorded<T>>,
    param: Option<ParamId>,
}

/// Linear record of operations, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    epoch: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, ParamId)>,
    epoch: u64,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        assert_eq!(v.epoch, self.epoch, "variable from a different tape epoch");
        self.grads[v.index].as_deref()
    }

    /// Gradient for `v`, zero-filled when nothing reached it.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); len])
    }

    /// Adds the gradient of every bound parameter into the store and makes
    /// sure unreached parameters carry a zero gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate(id, g)?;
            }
        }
        store.ensure_grads();
        Ok(())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            epoch: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes carrying a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.epoch += 1;
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var {
            index: self.nodes.len() - 1,
            epoch: self.epoch,
        }
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.epoch, self.epoch, "stale variable used after the tape was cleared");
        &self.nodes[v.index]
    }

    /// Adds a constant (non-differentiable) input.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(Node {
            value,
            requires_grad: false,
            op: None,
            param: None,
        })
    }

    /// Adds a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor4<T>) -> Var {
        self.push(Node {
            value,
            requires_grad: true,
            op: None,
            param: None,
        })
    }

    /// Binds a parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Node {
            value: store.value(id).clone(),
            requires_grad: true,
            op: None,
            param: Some(id),
        })
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.node(v).value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.node(v).value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Records the result of an operation together with its backward rule.
    /// The rule is dropped when no input requires a gradient.
    pub fn record<F>(&mut self, name: &'static str, inputs: &[Var], value: Tensor4<T>, backward: F) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_, T>) -> InputGrads<T> + 'static,
    {
        if !value.all_finite() {
            return Err(Error::Numeric { op: name.to_string() });
        }
        let requires_grad = inputs.iter().any(|&v| self.node(v).requires_grad);
        let op = requires_grad.then(|| Recorded {
            name,
            inputs: inputs.to_vec(),
            backward: Box::new(backward) as BackwardFn<T>,
        });
        Ok(self.push(Node {
            value,
            requires_grad,
            op,
            param: None,
        }))
    }

    /// Reverse pass from a (1,1,1,1) loss. Clears the tape afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let dims = self.dims(loss);
        if dims != Dims::SCALAR {
            return Err(Error::arg(format!("backward requires a (1,1,1,1) loss, got {dims}")));
        }
        if self.nodes.is_empty() {
            return Err(Error::arg("backward on an empty tape"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![T::one()]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let input_grads = {
                let ctx = BackwardCtx {
                    inputs: op.inputs.iter().map(|v| &self.nodes[v.index].value).collect(),
                    output: &node.value,
                    grad: &grad,
                };
                (op.backward)(&ctx)
            };
            debug_assert_eq!(input_grads.len(), op.inputs.len(), "{}", op.name);
            for (input, g) in op.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.index].requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        op: format!("{} (backward)", op.name),
                    });
                }
                match &mut grads[input.index] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        let out = Gradients {
            grads,
            params,
            epoch: self.epoch,
        };
        self.clear();
        Ok(out)
    }

    /// Runs [`Tape::backward`] and accumulates parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store)?;
        Ok(grads)
    }
}
