//! Tape recording for reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node holding its output value and
//! the rule needed to push gradients back to its inputs. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use std::cell::{Ref, RefCell};
use std::fmt;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Backward rule for an operation defined outside this crate.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (same length as that input), or `None`
    /// where `needs_grad` is false or the input does not influence the output.
    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        grad_out: &[f64],
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub(crate) enum Op {
    Leaf,
    /// Gradient flows through unchanged (reshape, constant shifts).
    Identity(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Vec<f64>),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    LogSigmoid(usize),
    Softplus(usize),
    Sqrt(usize),
    Softmax { input: usize, dim: usize },
    Sum(usize),
    Mean(usize),
    Cumsum(usize),
    Concat { a: usize, b: usize, outer: usize, ca: usize, cb: usize },
    Narrow { input: usize, outer: usize, dim: usize, start: usize, len: usize, inner: usize },
    Conv { input: usize, weight: usize, bias: Option<usize>, geom: ConvGeom },
    MaxPoolLast { input: usize, argmax: Vec<usize> },
    UpsampleLast { input: usize, factor: usize, w_in: usize },
    Dense { input: usize, weight: usize, bias: usize, batch: usize, fan_in: usize, units: usize },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    L1Mean(usize, usize),
    MaskedL1 { a: usize, b: usize, mask: Vec<f64>, denom: f64 },
    CrossEntropy { probs: usize, target: Vec<f64> },
    ToWindows { input: usize, cols: usize, valid: usize, width: usize },
    FromWindows { input: usize, rows: usize, valid: usize, width: usize },
    Custom { inputs: Vec<usize>, op: Box<dyn CustomOp> },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Records operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, requires_grad, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records a tensor as a leaf; gradients are tracked iff the tensor requires them.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.values().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records a tensor as a leaf that never receives gradients.
    pub fn frozen(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.values().to_vec(), false, Op::Leaf)
    }

    pub fn constant(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape().to_vec(), t.into_values(), false, Op::Leaf))
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    /// Records the output of an externally defined operation.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Box<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(TensorError::Dimension(format!(
                "custom op {} produced {} values for shape {shape:?}",
                op.name(),
                value.len()
            )));
        }
        let rg = inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(shape, value, rg, Op::Custom { inputs: ids, op }))
    }

    /// Propagates d(loss)/d(node) to every gradient-tracking leaf reachable from `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.value[0].is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            crate::backward::propagate(&nodes, id, &g, &mut grads);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *g = None;
            } else if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite(format!("gradient of leaf #{id}")));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf, `None` if it was unreachable or does not track gradients.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient for a leaf, zeros if it was not reached.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.len()],
        }
    }

    /// Adds each var's gradient into the matching tensor's gradient buffer.
    pub fn accumulate_into(&self, vars: &[Var<'_>], tensors: &mut [&mut Tensor]) -> Result<()> {
        if vars.len() != tensors.len() {
            return Err(TensorError::Contract(format!(
                "{} vars bound to {} tensors",
                vars.len(),
                tensors.len()
            )));
        }
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            if let Some(g) = self.get(*v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub(crate) fn node(&self) -> Ref<'t, Node> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.node().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    pub fn value(&self) -> Vec<f64> {
        self.node().value.clone()
    }

    /// Runs `f` on the value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node().value)
    }

    /// First element; the whole value for scalars.
    pub fn item(&self) -> f64 {
        self.node().value[0]
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.node();
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded nodes have consistent shapes")
    }

    /// Same value as a gradient-free leaf; cuts the graph.
    pub fn detach(&self) -> Var<'t> {
        let (shape, value) = {
            let n = self.node();
            (n.shape.clone(), n.value.clone())
        };
        self.tape.push(shape, value, false, Op::Leaf)
    }
}
