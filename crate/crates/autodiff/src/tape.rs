use std::cell::RefCell;
use std::fmt;

use crate::AdError;

/// Parent slot marker for unary and nullary nodes.
pub(crate) const NONE: u32 = u32::MAX;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Primitive recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Constant,
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    PowI(i32),
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Relu,
    Sqrt,
    /// Externally evaluated scalar map; value and local derivative are supplied by the caller.
    Apply,
    /// `Σ c_k x_k` over any number of operands, kept in the tape's term list.
    Linear,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Constant | Op::Leaf | Op::Linear => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }
}

/// One recorded operation. Local partials are stored at record time so the
/// reverse sweep never re-evaluates primitives. For [`Op::Linear`] the
/// parent slots hold the start and length of its run in the term list.
#[derive(Clone, Copy, Debug)]
pub struct AdNode {
    pub op: Op,
    pub parents: [u32; 2],
    pub partials: [f64; 2],
    pub value: f64,
}

impl AdNode {
    /// Operands of a fixed-arity node; empty for [`Op::Linear`] (see
    /// [`Tape::operands`]).
    pub fn parent_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        let fixed = self.op != Op::Linear;
        self.parents
            .iter()
            .filter(move |&&p| fixed && p != NONE)
            .map(|&p| NodeId(p))
    }
}

#[derive(Default)]
struct Inner {
    nodes: Vec<AdNode>,
    terms: Vec<(u32, f64)>,
    tangents: Option<Vec<f64>>,
    leaves: Vec<u32>,
    error: Option<AdError>,
}

/// Append-only record of scalar operations.
///
/// A tape is single-owner while recording. Tangent mode, when enabled, stores
/// a forward directional derivative for every node (all or none).
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("leaves", &inner.leaves.len())
            .field("tangent_mode", &inner.tangents.is_some())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        let tape = Self::default();
        tape.inner.borrow_mut().nodes.reserve(n);
        tape
    }

    /// Tape whose nodes all carry a forward tangent.
    pub fn with_tangents() -> Self {
        let tape = Self::default();
        tape.inner.borrow_mut().tangents = Some(Vec::new());
        tape
    }

    pub fn tangent_mode(&self) -> bool {
        self.inner.borrow().tangents.is_some()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop every node while keeping the allocation. Tangent mode is preserved.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.terms.clear();
        inner.leaves.clear();
        inner.error = None;
        if let Some(t) = inner.tangents.as_mut() {
            t.clear();
        }
    }

    pub fn node(&self, id: NodeId) -> Option<AdNode> {
        self.inner.borrow().nodes.get(id.index()).copied()
    }

    pub fn value(&self, id: NodeId) -> Result<f64, AdError> {
        self.node(id).map(|n| n.value).ok_or(AdError::Index {
            id: id.0,
            len: self.len(),
        })
    }

    pub fn tangent(&self, id: NodeId) -> Result<f64, AdError> {
        let inner = self.inner.borrow();
        let t = inner.tangents.as_ref().ok_or(AdError::TangentInactive)?;
        t.get(id.index()).copied().ok_or(AdError::Index {
            id: id.0,
            len: inner.nodes.len(),
        })
    }

    pub fn leaf_ids(&self) -> Vec<NodeId> {
        self.inner.borrow().leaves.iter().map(|&i| NodeId(i)).collect()
    }

    /// First domain error raised while recording through operator overloads.
    pub fn error(&self) -> Option<AdError> {
        self.inner.borrow().error.clone()
    }

    /// Fails with the first recorded domain error, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.error() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn leaf(&self, value: f64) -> NodeId {
        self.leaf_with_tangent(value, 0.0)
    }

    /// Leaf seeded with a tangent; the seed is ignored outside tangent mode.
    pub fn leaf_with_tangent(&self, value: f64, tangent: f64) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        inner.nodes.push(AdNode {
            op: Op::Leaf,
            parents: [NONE; 2],
            partials: [0.0; 2],
            value,
        });
        if let Some(t) = inner.tangents.as_mut() {
            t.push(tangent);
        }
        inner.leaves.push(id);
        NodeId(id)
    }

    pub fn constant(&self, value: f64) -> NodeId {
        self.push(Op::Constant, [NONE; 2], [0.0; 2], value)
    }

    /// Record `op` applied to operand nodes. Binary ops take two operands,
    /// unary ops one. `Apply` cannot be recorded here; use [`Tape::apply`].
    pub fn record(&self, op: Op, operands: &[NodeId]) -> Result<NodeId, AdError> {
        let len = self.len();
        for o in operands {
            if o.index() >= len {
                return Err(AdError::Index { id: o.0, len });
            }
        }
        if operands.len() != op.arity() || matches!(op, Op::Apply | Op::Leaf | Op::Linear) {
            return Err(AdError::Arity {
                op,
                got: operands.len(),
            });
        }
        if op == Op::Constant {
            return Err(AdError::Arity { op, got: 0 });
        }
        let a = self.value(operands[0])?;
        let id = len as u32;
        let (value, partials) = match op.arity() {
            2 => {
                let b = self.value(operands[1])?;
                binary_rule(op, a, b, id)?
            }
            _ => {
                let (v, d) = unary_rule(op, a, id)?;
                (v, [d, 0.0])
            }
        };
        let mut parents = [NONE; 2];
        for (slot, o) in parents.iter_mut().zip(operands) {
            *slot = o.0;
        }
        Ok(self.push(op, parents, partials, value))
    }

    /// Record an externally evaluated map of `x` with the given value and derivative.
    pub fn apply(&self, x: NodeId, value: f64, derivative: f64) -> NodeId {
        self.push(Op::Apply, [x.0, NONE], [derivative, 0.0], value)
    }

    /// Record `value = Σ c_k x_k + const` from `(x_k, c_k)` pairs written by
    /// `fill`. Returns `None` when `fill` writes nothing.
    pub fn linear(&self, value: f64, fill: impl FnOnce(&mut Vec<(u32, f64)>)) -> Option<NodeId> {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        let start = inner.terms.len();
        fill(&mut inner.terms);
        let count = inner.terms.len() - start;
        if count == 0 {
            return None;
        }
        let id = inner.nodes.len() as u32;
        if let Some(t) = inner.tangents.as_mut() {
            let tan = inner.terms[start..].iter().map(|&(p, c)| c * t[p as usize]).sum();
            t.push(tan);
        }
        inner.nodes.push(AdNode {
            op: Op::Linear,
            parents: [start as u32, count as u32],
            partials: [0.0; 2],
            value,
        });
        Some(NodeId(id))
    }

    /// Operands of any node with their local partials.
    pub fn operands(&self, id: NodeId) -> Vec<(NodeId, f64)> {
        let inner = self.inner.borrow();
        let Some(n) = inner.nodes.get(id.index()) else {
            return Vec::new();
        };
        if n.op == Op::Linear {
            let (s, c) = (n.parents[0] as usize, n.parents[1] as usize);
            return inner.terms[s..s + c].iter().map(|&(p, d)| (NodeId(p), d)).collect();
        }
        n.parents
            .iter()
            .zip(n.partials)
            .filter(|(&p, _)| p != NONE)
            .map(|(&p, d)| (NodeId(p), d))
            .collect()
    }

    pub(crate) fn push(&self, op: Op, parents: [u32; 2], partials: [f64; 2], value: f64) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        let id = inner.nodes.len() as u32;
        if let Some(t) = inner.tangents.as_mut() {
            let mut tan = 0.0;
            for k in 0..2 {
                if parents[k] != NONE {
                    tan += partials[k] * t[parents[k] as usize];
                }
            }
            t.push(tan);
        }
        inner.nodes.push(AdNode {
            op,
            parents,
            partials,
            value,
        });
        NodeId(id)
    }

    pub(crate) fn flag(&self, err: AdError) {
        let mut inner = self.inner.borrow_mut();
        if inner.error.is_none() {
            inner.error = Some(err);
        }
    }

    pub(crate) fn next_id(&self) -> u32 {
        self.inner.borrow().nodes.len() as u32
    }

    /// Reverse sweep from a scalar output. Adjoints are indexed by node id.
    pub fn backward(&self, output: NodeId) -> Result<Adjoints, AdError> {
        let mut adj = Vec::new();
        self.backward_seeded(&[(output, 1.0)], &mut adj)?;
        Ok(Adjoints { adj })
    }

    /// Reverse sweep with several seeded outputs, reusing `adj` as storage.
    /// On return `adj.len()` equals the node count.
    pub fn backward_seeded(&self, seeds: &[(NodeId, f64)], adj: &mut Vec<f64>) -> Result<(), AdError> {
        self.check()?;
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let terms = &inner.terms;
        let len = nodes.len();
        let mut top = 0usize;
        for &(id, _) in seeds {
            if id.index() >= len {
                return Err(AdError::Index { id: id.0, len });
            }
            top = top.max(id.index() + 1);
        }
        adj.clear();
        adj.resize(len, 0.0);
        for &(id, s) in seeds {
            adj[id.index()] += s;
        }
        for i in (0..top).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            let [p0, p1] = n.parents;
            if n.op == Op::Linear {
                for &(p, c) in &terms[p0 as usize..(p0 + p1) as usize] {
                    adj[p as usize] += c * a;
                }
            } else if p0 != NONE {
                adj[p0 as usize] += n.partials[0] * a;
                if p1 != NONE {
                    adj[p1 as usize] += n.partials[1] * a;
                }
            }
        }
        Ok(())
    }
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    pub fn wrt(&self, id: NodeId) -> f64 {
        self.adj.get(id.index()).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adj
    }

    /// Adjoints of the given leaves, in order.
    pub fn of(&self, ids: &[NodeId]) -> Vec<f64> {
        ids.iter().map(|&i| self.wrt(i)).collect()
    }
}

pub(crate) fn binary_rule(op: Op, a: f64, b: f64, id: u32) -> Result<(f64, [f64; 2]), AdError> {
    Ok(match op {
        Op::Add => (a + b, [1.0, 1.0]),
        Op::Sub => (a - b, [1.0, -1.0]),
        Op::Mul => (a * b, [b, a]),
        Op::Div => {
            if b == 0.0 {
                return Err(AdError::Domain { op, node: id, input: b });
            }
            let v = a / b;
            (v, [1.0 / b, -v / b])
        }
        _ => return Err(AdError::Arity { op, got: 2 }),
    })
}

pub(crate) fn unary_rule(op: Op, a: f64, id: u32) -> Result<(f64, f64), AdError> {
    Ok(match op {
        Op::Neg => (-a, -1.0),
        Op::PowI(0) => (1.0, 0.0),
        Op::PowI(n) => (a.powi(n), f64::from(n) * a.powi(n - 1)),
        Op::Exp => {
            let e = a.exp();
            (e, e)
        }
        Op::Log => {
            if a <= 0.0 {
                return Err(AdError::Domain { op, node: id, input: a });
            }
            (a.ln(), 1.0 / a)
        }
        Op::Sin => (a.sin(), a.cos()),
        Op::Cos => (a.cos(), -a.sin()),
        Op::Tanh => {
            let y = a.tanh();
            (y, 1.0 - y * y)
        }
        // subgradient 0 at the kink
        Op::Relu => {
            if a > 0.0 {
                (a, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        Op::Sqrt => {
            if a < 0.0 {
                return Err(AdError::Domain { op, node: id, input: a });
            }
            let s = a.sqrt();
            (s, 0.5 / s)
        }
        _ => return Err(AdError::Arity { op, got: 1 }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_mul_square() {
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let y = tape.record(Op::Mul, &[x, x]).unwrap();
        assert_eq!(tape.value(y).unwrap(), 9.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x), 6.0);
    }

    #[test]
    fn record_tanh_tangent_at_origin() {
        let tape = Tape::with_tangents();
        let x = tape.leaf_with_tangent(0.0, 1.0);
        let y = tape.record(Op::Tanh, &[x]).unwrap();
        assert_eq!(tape.value(y).unwrap(), 0.0);
        assert_eq!(tape.tangent(y).unwrap(), 1.0);
    }

    #[test]
    fn record_exp_one() {
        let tape = Tape::new();
        let x = tape.leaf(1.0);
        let y = tape.record(Op::Exp, &[x]).unwrap();
        // e from its series, independent of libm
        let mut e = 0.0;
        let mut term = 1.0;
        for k in 1..30 {
            e += term;
            term /= k as f64;
        }
        assert!((tape.value(y).unwrap() - e).abs() < 1e-15);
        assert!((e - 2.718281828459045).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_carry_node_id() {
        let tape = Tape::new();
        let z = tape.leaf(0.0);
        let one = tape.constant(1.0);
        match tape.record(Op::Div, &[one, z]) {
            Err(AdError::Domain { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, Op::Div);
            }
            other => panic!("unexpected {other:?}"),
        }
        let neg = tape.leaf(-1.0);
        assert!(matches!(tape.record(Op::Log, &[z]), Err(AdError::Domain { op: Op::Log, .. })));
        assert!(matches!(tape.record(Op::Sqrt, &[neg]), Err(AdError::Domain { op: Op::Sqrt, .. })));
    }

    #[test]
    fn index_errors() {
        let tape = Tape::new();
        let x = tape.leaf(1.0);
        assert!(matches!(tape.record(Op::Neg, &[NodeId(7)]), Err(AdError::Index { id: 7, .. })));
        assert!(matches!(tape.backward(NodeId(3)), Err(AdError::Index { .. })));
        assert!(matches!(tape.record(Op::Add, &[x]), Err(AdError::Arity { .. })));
    }

    #[test]
    fn tangent_inactive_is_state_error() {
        let tape = Tape::new();
        let x = tape.leaf(1.0);
        assert!(matches!(tape.tangent(x), Err(AdError::TangentInactive)));
    }

    #[test]
    fn untouched_leaves_get_zero() {
        let tape = Tape::new();
        let x = tape.leaf(2.0);
        let w = tape.leaf(5.0);
        let y = tape.record(Op::Sin, &[x]).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(w), 0.0);
    }

    #[test]
    fn relu_kink_subgradient_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(0.0);
        let y = tape.record(Op::Relu, &[x]).unwrap();
        assert_eq!(tape.backward(y).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn parents_precede_children() {
        let tape = Tape::new();
        let x = tape.leaf(0.3);
        let a = tape.record(Op::Sin, &[x]).unwrap();
        let b = tape.record(Op::Mul, &[a, x]).unwrap();
        let c = tape.record(Op::Add, &[b, a]).unwrap();
        let d = tape.linear(0.0, |t| t.extend([(c.0, 2.0), (x.0, -1.0)])).unwrap();
        for id in [a, b, c, d] {
            assert!(tape.operands(id).iter().all(|&(p, _)| p < id));
        }
        assert_eq!(tape.operands(d), vec![(c, 2.0), (x, -1.0)]);
    }

    #[test]
    fn linear_node_adjoints_and_tangents() {
        let tape = Tape::with_tangents();
        let x = tape.leaf_with_tangent(2.0, 1.0);
        let y = tape.leaf_with_tangent(-1.0, 0.5);
        let z = tape.linear(3.0 * 2.0 - 4.0 + 7.0, |t| t.extend([(x.0, 3.0), (y.0, 4.0)])).unwrap();
        assert_eq!(tape.value(z).unwrap(), 9.0);
        assert_eq!(tape.tangent(z).unwrap(), 3.0 + 2.0);
        let g = tape.backward(z).unwrap();
        assert_eq!((g.wrt(x), g.wrt(y)), (3.0, 4.0));
        assert!(tape.linear(1.0, |_| {}).is_none());
        assert!(tape.record(Op::Linear, &[]).is_err());
    }
}
