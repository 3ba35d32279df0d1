//! A small scalar reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for back-propagation.

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Ln(usize),
    Softplus(usize),
    LogSumExp(Vec<usize>),
    Sum(Vec<usize>),
    Clamp(usize, f64, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: f64,
    op: Op,
}

/// Records scalar operations and evaluates their gradients.
#[derive(Clone, Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    leaves: Vec<usize>,
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn eval(&self, op: &Op) -> f64 {
        let v = |i: &usize| self.nodes[*i].value;
        match op {
            Op::Leaf | Op::Const => unreachable!("leaves carry their own value"),
            Op::Add(a, b) => v(a) + v(b),
            Op::Sub(a, b) => v(a) - v(b),
            Op::Mul(a, b) => v(a) * v(b),
            Op::Scale(a, s) => v(a) * s,
            Op::Exp(a) => v(a).exp(),
            Op::Ln(a) => v(a).ln(),
            Op::Softplus(a) => softplus(v(a)),
            Op::LogSumExp(xs) => lse(xs.iter().map(v)),
            Op::Sum(xs) => tree_sum(&xs.iter().map(v).collect::<Vec<_>>()),
            Op::Clamp(a, lo, hi) => v(a).clamp(*lo, *hi),
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        self.leaves.push(self.nodes.len() - 1);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.nodes.push(Node { value, op: Op::Const });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a.0, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.push(Op::Ln(a.0))
    }

    /// ln(1 + e^a), the two-term max* with zero.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a.0))
    }

    /// Jacobian logarithm ln Σ exp(xᵢ).
    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        self.push(Op::LogSumExp(xs.iter().map(|v| v.0).collect()))
    }

    /// Pairwise-ordered sum.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        self.push(Op::Sum(xs.iter().map(|v| v.0).collect()))
    }

    /// Saturation; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.push(Op::Clamp(a.0, lo, hi))
    }

    /// Re-evaluates every node with new leaf values (in leaf creation order).
    pub fn replay(&mut self, leaf_values: &[f64]) {
        assert_eq!(leaf_values.len(), self.leaves.len(), "leaf count");
        for (&i, &v) in self.leaves.iter().zip(leaf_values) {
            self.nodes[i].value = v;
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf | Op::Const) {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Const);
            self.nodes[i].value = self.eval(&op);
            self.nodes[i].op = op;
        }
    }

    /// Gradients of `output` with respect to every recorded node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut g = vec![0.0; self.nodes.len()];
        g[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let val = |j: usize| self.nodes[j].value;
            match &self.nodes[i].op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    g[*a] += gi;
                    g[*b] += gi;
                }
                Op::Sub(a, b) => {
                    g[*a] += gi;
                    g[*b] -= gi;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    g[*a] += gi * vb;
                    g[*b] += gi * va;
                }
                Op::Scale(a, s) => g[*a] += gi * s,
                Op::Exp(a) => g[*a] += gi * self.nodes[i].value,
                Op::Ln(a) => g[*a] += gi / val(*a),
                Op::Softplus(a) => g[*a] += gi * sigmoid(val(*a)),
                Op::LogSumExp(xs) => {
                    let out = self.nodes[i].value;
                    for &x in xs {
                        g[x] += gi * (val(x) - out).exp();
                    }
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        g[x] += gi;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let v = val(*a);
                    if v > *lo && v < *hi {
                        g[*a] += gi;
                    }
                }
            }
        }
        Gradients(g)
    }
}

/// Result of [`GradientTape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn wrt(&self, v: Var) -> f64 {
        self.0[v.0]
    }
}
