//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each recorded node keeps
//! its value, its input ids and a backward rule. Node ids grow monotonically,
//! so walking the tape backwards from the loss is a valid reverse topological
//! order.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian rule of a recorded operation.
///
/// Returns one entry per input, `None` where the input receives no gradient.
pub(crate) trait Backward<T: Real> {
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    param_vars: HashMap<ParamId, Var>,
    /// Running hash of piecewise-op decisions, when tracking is on.
    branches: Option<u64>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), param_vars: HashMap::new(), branches: None }
    }

    /// A graph that fingerprints the branch taken by every piecewise op
    /// (activation sign, pooling argmax). Two evaluations with equal
    /// fingerprints lie on the same smooth piece.
    pub fn with_branch_tracking() -> Self {
        Self { branches: Some(0xcbf2_9ce4_8422_2325), ..Self::new() }
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branches
    }

    pub(crate) fn tracks_branches(&self) -> bool {
        self.branches.is_some()
    }

    pub(crate) fn note_branches(&mut self, decisions: impl IntoIterator<Item = u64>) {
        if let Some(h) = &mut self.branches {
            for d in decisions {
                *h = (*h ^ d).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that is not a parameter (inputs, targets, constants).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Node { op: "input", value, inputs: Vec::new(), rule: None })
    }

    /// Leaf holding a copy of a parameter value. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = store.get(id).value.clone();
        let v = self.push(Node { op: "param", value, inputs: Vec::new(), rule: None });
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameters that appear as leaves on this tape, in id order.
    pub fn touched_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.param_vars.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Records a computed node. Outputs are validated: a non-finite value is an
    /// error rather than something to propagate.
    pub(crate) fn record(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        inputs: Vec<Var>,
        rule: Box<dyn Backward<T>>,
    ) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite { op, index });
        }
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        Ok(self.push(Node { op, value, inputs, rule: Some(rule) }))
    }

    /// Backpropagates from a scalar loss, filling the per-node gradients
    /// returned by [`Graph::grad`]. Previous per-node gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let (Some(rule), Some(grad)) = (&node.rule, &grads[id]) else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = rule.backward(&inputs, &node.value, grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (var, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if var.0 >= id {
                    return Err(Error::Config(format!("cycle at node {id} ({})", node.op)));
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Backpropagates and adds every parameter gradient onto `store`'s grad
    /// buffers. Parameters not on the tape are left untouched.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?;
        for (&id, &var) in &self.param_vars {
            if let Some(g) = &self.grads[var.0] {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch { op: "add", left: ta.shape(), right: tb.shape() });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        self.record("add", out, vec![a, b], Box::new(AddRule))
    }

    /// Sum of any number of same-shaped nodes.
    pub fn sum_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or_else(|| Error::InvalidShape("sum of zero tensors".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Element-wise product. `b` may have a single channel, in which case it
    /// is broadcast across all channels of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let out = if sa == sb {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
            Tensor::from_vec(sa, data)?
        } else if sb.c == 1 && (sb.n, sb.h, sb.w) == (sa.n, sa.h, sa.w) {
            let plane = sa.plane();
            let mut data = Vec::with_capacity(sa.numel());
            for n in 0..sa.n {
                let m = &tb.data()[n * plane..(n + 1) * plane];
                for c in 0..sa.c {
                    let start = sa.index(n, c, 0, 0);
                    data.extend(ta.data()[start..start + plane].iter().zip(m).map(|(&x, &y)| x * y));
                }
            }
            Tensor::from_vec(sa, data)?
        } else {
            return Err(Error::ShapeMismatch { op: "mul", left: sa, right: sb });
        };
        self.record("mul", out, vec![a, b], Box::new(MulRule))
    }

    /// Sum of all elements, as a 1x1x1x1 tensor.
    pub fn reduce_sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.record("reduce_sum", out, vec![a], Box::new(SumRule))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = T::from_f64(k);
        let out = self.value(a).map(|v| v * k);
        self.record("scale", out, vec![a], Box::new(ScaleRule(k)))
    }

    /// Channel concatenation of two tensors with equal batch and spatial extents.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::ShapeMismatch { op: "concat", left: sa, right: sb });
        }
        let out_shape = sa.with_c(sa.c + sb.c);
        let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&ta.data()[n * la..(n + 1) * la]);
            data.extend_from_slice(&tb.data()[n * lb..(n + 1) * lb]);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        self.record("concat", out, vec![a, b], Box::new(ConcatRule { ca: sa.c, cb: sb.c }))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).clone();
        self.record("detach", out, vec![a], Box::new(DetachRule))
    }
}

struct AddRule;

impl<T: Real> Backward<T> for AddRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct MulRule;

impl<T: Real> Backward<T> for MulRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (sa, sb) = (a.shape(), b.shape());
        if sa == sb {
            let ga = grad.data().iter().zip(b.data()).map(|(&g, &y)| g * y).collect();
            let gb = grad.data().iter().zip(a.data()).map(|(&g, &x)| g * x).collect();
            return vec![Tensor::from_vec(sa, ga).ok(), Tensor::from_vec(sb, gb).ok()];
        }
        let plane = sa.plane();
        let mut ga = vec![T::zero(); sa.numel()];
        let mut gb = vec![T::zero(); sb.numel()];
        for n in 0..sa.n {
            let m = &b.data()[n * plane..(n + 1) * plane];
            let gm = &mut gb[n * plane..(n + 1) * plane];
            for c in 0..sa.c {
                let start = sa.index(n, c, 0, 0);
                let g = &grad.data()[start..start + plane];
                let x = &a.data()[start..start + plane];
                for i in 0..plane {
                    ga[start + i] = g[i] * m[i];
                    gm[i] += g[i] * x[i];
                }
            }
        }
        vec![Tensor::from_vec(sa, ga).ok(), Tensor::from_vec(sb, gb).ok()]
    }
}

struct SumRule;

impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(inputs[0].shape(), grad.item()))]
    }
}

struct ScaleRule<T>(T);

impl<T: Real> Backward<T> for ScaleRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.map(|g| g * self.0))]
    }
}

struct ConcatRule {
    ca: usize,
    cb: usize,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (sa, sb) = (inputs[0].shape(), inputs[1].shape());
        let (la, lb) = (self.ca * sa.plane(), self.cb * sb.plane());
        let mut ga = Vec::with_capacity(sa.numel());
        let mut gb = Vec::with_capacity(sb.numel());
        for chunk in grad.data().chunks(la + lb) {
            ga.extend_from_slice(&chunk[..la]);
            gb.extend_from_slice(&chunk[la..]);
        }
        vec![Tensor::from_vec(sa, ga).ok(), Tensor::from_vec(sb, gb).ok()]
    }
}

struct DetachRule;

impl<T: Real> Backward<T> for DetachRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, _: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![None]
    }
}
