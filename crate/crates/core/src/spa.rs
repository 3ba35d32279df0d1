//! Log-domain sum-product message passing with a flooding schedule.
//!
//! Every message is a length-M vector of log-domain values, normalized after
//! each update so that its largest entry is zero. Edges carry one weight per
//! direction and iteration; a weight multiplies the message where it is
//! consumed (VN→FN messages inside the factor update, FN→VN messages inside
//! the next variable update and the final belief readout).
//!
//! Factor log-tables are linear in a small set of per-iteration coefficients:
//! `ln f^{(n)}(X) = Σ_r θ^{(n)}_r · φ_r(X)`. Plain detectors use one basis with
//! θ = 1; weighted factors put their multiplicative weights into θ.
//!
//! [`forward`] records all messages in a [`Trace`]; [`backward`] runs the exact
//! adjoint of the unrolled iterations and returns gradients with respect to
//! edge weights, coefficients and (optionally) basis tables.

use crate::error::{Error, Result};

/// Log-value standing in for −∞ on clamped (known) variables.
pub const CLAMP_LOG_ZERO: f64 = -1e9;

/// Largest factor table (entries per basis) accepted by [`FactorGraph::add_factor`].
pub const MAX_TABLE_LEN: usize = 1 << 24;

fn maxstar2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Jacobian logarithm ln(Σ exp(vᵢ)) evaluated as a running pairwise max*.
///
/// Panics on an empty slice.
pub fn maxstar(values: &[f64]) -> f64 {
    let (first, rest) = values.split_first().expect("maxstar of an empty list");
    rest.iter().fold(*first, |acc, &v| maxstar2(acc, v))
}

/// ln(Σ exp(vᵢ)) via the max-shift form used by the message kernels.
#[inline]
pub(crate) fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[inline]
fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Subtracts the maximum entry in place.
#[inline]
fn normalize_in_place(values: &mut [f64]) {
    let m = values[first_argmax(values)];
    for v in values.iter_mut() {
        *v -= m;
    }
}

/// Adjoint of [`normalize_in_place`]: the normalized vector has a zero at the
/// first argmax of its input.
#[inline]
fn normalize_backward(normalized: &[f64], grad: &mut [f64]) {
    let total: f64 = grad.iter().sum();
    let a = normalized
        .iter()
        .position(|&v| v == 0.0)
        .unwrap_or_else(|| first_argmax(normalized));
    grad[a] -= total;
}

fn clamp_message(alphabet: usize, value: usize) -> Vec<f64> {
    let mut m = vec![CLAMP_LOG_ZERO; alphabet];
    m[value] = 0.0;
    m
}

/// A length-M log-domain message.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMessage(pub Vec<f64>);

impl LogMessage {
    /// The initial message −ln(M) in every entry.
    pub fn uniform(alphabet: usize) -> Self {
        LogMessage(vec![-(alphabet as f64).ln(); alphabet])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn normalized(mut self) -> Self {
        normalize_in_place(&mut self.0);
        self
    }

    /// Exponentiates and rescales to a probability vector.
    pub fn to_probabilities(&self) -> Vec<f64> {
        let z = logsumexp(&self.0);
        self.0.iter().map(|v| (v - z).exp()).collect()
    }
}

/// Variable-node update: weighted sum of the incoming FN→VN messages, normalized.
pub fn vn_update(incoming: &[LogMessage], weights: &[f64]) -> LogMessage {
    assert_eq!(incoming.len(), weights.len());
    let alphabet = incoming.first().map_or(0, LogMessage::len);
    let mut out = vec![0.0; alphabet];
    for (msg, &w) in incoming.iter().zip(weights) {
        assert_eq!(msg.len(), alphabet, "message lengths differ");
        for (o, v) in out.iter_mut().zip(&msg.0) {
            *o += w * v;
        }
    }
    if alphabet > 0 {
        normalize_in_place(&mut out);
    }
    LogMessage(out)
}

/// Factor-node update toward neighbor `target`.
///
/// `table` holds ln f over all joint assignments with the first neighbor as
/// the most significant digit. `incoming` lists the VN→FN messages of every
/// neighbor except `target`, in neighbor order.
pub fn fn_update(
    table: &[f64],
    alphabet: usize,
    target: usize,
    incoming: &[LogMessage],
    weights: &[f64],
) -> LogMessage {
    let degree = incoming.len() + 1;
    assert_eq!(table.len(), alphabet.pow(degree as u32), "table size");
    assert_eq!(incoming.len(), weights.len());
    let mut per_value: Vec<Vec<f64>> = vec![Vec::new(); alphabet];
    let mut digits = vec![0usize; degree];
    for (x, &t) in table.iter().enumerate() {
        let mut rem = x;
        for d in (0..degree).rev() {
            digits[d] = rem % alphabet;
            rem /= alphabet;
        }
        let mut term = t;
        let mut k = 0;
        for (d, &digit) in digits.iter().enumerate() {
            if d == target {
                continue;
            }
            term += weights[k] * incoming[k].0[digit];
            k += 1;
        }
        per_value[digits[target]].push(term);
    }
    LogMessage(per_value.iter().map(|v| maxstar(v)).collect()).normalized()
}

#[derive(Clone, Debug)]
struct FactorNode {
    vars: Vec<usize>,
    first_edge: usize,
    first_basis: usize,
    basis_count: usize,
    table_offset: usize,
    table_len: usize,
}

/// Bipartite graph of variable nodes and factor nodes with log-domain factors.
#[derive(Clone, Debug)]
pub struct FactorGraph {
    alphabet: usize,
    clamps: Vec<Option<usize>>,
    var_edges: Vec<Vec<usize>>,
    factors: Vec<FactorNode>,
    edge_factor: Vec<usize>,
    edge_var: Vec<usize>,
    tables: Vec<f64>,
    basis_total: usize,
}

impl FactorGraph {
    pub fn new(alphabet: usize) -> Self {
        assert!(alphabet >= 1);
        FactorGraph {
            alphabet,
            clamps: Vec::new(),
            var_edges: Vec::new(),
            factors: Vec::new(),
            edge_factor: Vec::new(),
            edge_var: Vec::new(),
            tables: Vec::new(),
            basis_total: 0,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn add_variable(&mut self) -> usize {
        self.clamps.push(None);
        self.var_edges.push(Vec::new());
        self.clamps.len() - 1
    }

    /// Adds a variable whose value is known; its outgoing messages are fixed.
    pub fn add_clamped_variable(&mut self, value: usize) -> usize {
        assert!(value < self.alphabet);
        self.clamps.push(Some(value));
        self.var_edges.push(Vec::new());
        self.clamps.len() - 1
    }

    /// Adds a factor with a single log-table.
    pub fn add_factor(&mut self, vars: &[usize], table: Vec<f64>) -> Result<usize> {
        self.add_factor_with_bases(vars, &[table])
    }

    /// Adds a factor whose log-table is a per-iteration combination of `bases`.
    pub fn add_factor_with_bases(&mut self, vars: &[usize], bases: &[Vec<f64>]) -> Result<usize> {
        if vars.is_empty() {
            return Err(Error::Argument("factor without neighbors".into()));
        }
        if bases.is_empty() {
            return Err(Error::Argument("factor without a table".into()));
        }
        let table_len = (self.alphabet as u128).pow(vars.len() as u32);
        if table_len > MAX_TABLE_LEN as u128 {
            return Err(Error::Capability(format!(
                "factor table with {table_len} entries exceeds the limit of {MAX_TABLE_LEN}"
            )));
        }
        let table_len = table_len as usize;
        for &v in vars {
            if v >= self.clamps.len() {
                return Err(Error::Argument(format!("unknown variable {v}")));
            }
        }
        for b in bases {
            if b.len() != table_len {
                return Err(Error::Argument(format!(
                    "table has {} entries, expected {table_len}",
                    b.len()
                )));
            }
        }
        let id = self.factors.len();
        let first_edge = self.edge_factor.len();
        for &v in vars {
            let e = self.edge_factor.len();
            self.edge_factor.push(id);
            self.edge_var.push(v);
            self.var_edges[v].push(e);
        }
        let table_offset = self.tables.len();
        for b in bases {
            self.tables.extend_from_slice(b);
        }
        self.factors.push(FactorNode {
            vars: vars.to_vec(),
            first_edge,
            first_basis: self.basis_total,
            basis_count: bases.len(),
            table_offset,
            table_len,
        });
        self.basis_total += bases.len();
        Ok(id)
    }

    pub fn variable_count(&self) -> usize {
        self.clamps.len()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_factor.len()
    }

    /// Total number of basis tables (length of one iteration's coefficient block).
    pub fn basis_count(&self) -> usize {
        self.basis_total
    }

    pub fn clamp(&self, var: usize) -> Option<usize> {
        self.clamps[var]
    }

    pub fn factor_neighbors(&self, factor: usize) -> &[usize] {
        &self.factors[factor].vars
    }

    pub fn variable_edges(&self, var: usize) -> &[usize] {
        &self.var_edges[var]
    }

    /// `(factor, variable)` endpoints of an edge.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        (self.edge_factor[e], self.edge_var[e])
    }

    /// Edge id joining `factor` to its `slot`-th neighbor.
    pub fn factor_edge(&self, factor: usize, slot: usize) -> usize {
        self.factors[factor].first_edge + slot
    }

    /// First global basis index of a factor.
    pub fn factor_basis(&self, factor: usize) -> usize {
        self.factors[factor].first_basis
    }

    /// The stored basis table `r` of a factor.
    pub fn basis_table(&self, factor: usize, r: usize) -> &[f64] {
        let f = &self.factors[factor];
        let start = f.table_offset + r * f.table_len;
        &self.tables[start..start + f.table_len]
    }

    /// Offset of a factor's basis block inside the flat table storage.
    pub fn table_offset(&self, factor: usize) -> usize {
        self.factors[factor].table_offset
    }

    pub fn table_storage_len(&self) -> usize {
        self.tables.len()
    }

    /// True when variable `var` lists factor `factor` exactly as often as the
    /// factor lists the variable.
    pub fn is_consistent(&self) -> bool {
        for (v, edges) in self.var_edges.iter().enumerate() {
            for &e in edges {
                if self.edge_var[e] != v {
                    return false;
                }
            }
        }
        for (f, node) in self.factors.iter().enumerate() {
            for (slot, &v) in node.vars.iter().enumerate() {
                let e = node.first_edge + slot;
                if self.edge_factor[e] != f || !self.var_edges[v].contains(&e) {
                    return false;
                }
            }
        }
        true
    }

    /// Number of factor-table terms one flooding iteration evaluates: M^deg
    /// for every factor→variable message toward an unclamped variable.
    pub fn terms_per_iteration(&self) -> u64 {
        self.factors
            .iter()
            .map(|f| {
                let free = f.vars.iter().filter(|&&v| self.clamps[v].is_none()).count();
                free as u64 * f.table_len as u64
            })
            .sum()
    }
}

/// Per-iteration edge weights and factor coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageWeights {
    pub iterations: usize,
    pub edges: usize,
    pub bases: usize,
    /// `[n * edges + e]`: weight of μ^{(n+1)}_{x→f} on edge e.
    pub to_factor: Vec<f64>,
    /// `[n * edges + e]`: weight of μ^{(n+1)}_{f→x} on edge e.
    pub to_variable: Vec<f64>,
    /// `[n * bases + b]`: coefficient θ^{(n+1)}_b.
    pub coefficients: Vec<f64>,
}

impl MessageWeights {
    /// All weights and coefficients equal to one (plain sum-product).
    pub fn unit(graph: &FactorGraph, iterations: usize) -> Self {
        let e = graph.edge_count();
        let b = graph.basis_count();
        MessageWeights {
            iterations,
            edges: e,
            bases: b,
            to_factor: vec![1.0; iterations * e],
            to_variable: vec![1.0; iterations * e],
            coefficients: vec![1.0; iterations * b],
        }
    }

    fn check(&self, graph: &FactorGraph) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Argument("at least one iteration is required".into()));
        }
        let e = graph.edge_count();
        let b = graph.basis_count();
        if self.edges != e
            || self.bases != b
            || self.to_factor.len() != self.iterations * e
            || self.to_variable.len() != self.iterations * e
            || self.coefficients.len() != self.iterations * b
        {
            return Err(Error::Argument("weight shapes do not match the graph".into()));
        }
        Ok(())
    }
}

/// All messages of one unrolled run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub iterations: usize,
    /// `to_factor[n]`: VN→FN messages of iteration n+1, `edges × M`.
    pub to_factor: Vec<Vec<f64>>,
    /// `to_variable[n]`: FN→VN messages after iteration n (index 0 is the
    /// uniform initialization), `edges × M`.
    pub to_variable: Vec<Vec<f64>>,
    /// Normalized log-beliefs ln P̂(x = v), `variables × M`.
    pub log_beliefs: Vec<f64>,
    /// Factor-table terms evaluated.
    pub terms: u64,
}

impl Trace {
    pub fn log_belief(&self, var: usize, alphabet: usize) -> &[f64] {
        &self.log_beliefs[var * alphabet..(var + 1) * alphabet]
    }

    pub fn belief(&self, var: usize, alphabet: usize) -> Vec<f64> {
        self.log_belief(var, alphabet).iter().map(|v| v.exp()).collect()
    }
}

/// Gradients returned by [`backward`], laid out like [`MessageWeights`].
#[derive(Clone, Debug)]
pub struct EngineGradients {
    pub to_factor: Vec<f64>,
    pub to_variable: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Gradient of every stored basis entry, when requested.
    pub tables: Option<Vec<f64>>,
}

/// Scratch buffers reused across factors.
struct FactorScratch {
    table: Vec<f64>,
    inputs: Vec<f64>,
    sums: Vec<f64>,
    bins: Vec<f64>,
}

impl FactorScratch {
    fn new(alphabet: usize) -> Self {
        FactorScratch {
            table: Vec::new(),
            inputs: Vec::new(),
            sums: Vec::new(),
            bins: vec![0.0; alphabet],
        }
    }
}

impl FactorGraph {
    /// Combined log-table of `factor` for iteration index `n`.
    fn fill_table(&self, factor: usize, n: usize, weights: &MessageWeights, out: &mut Vec<f64>) {
        let f = &self.factors[factor];
        out.clear();
        out.resize(f.table_len, 0.0);
        for r in 0..f.basis_count {
            let theta = weights.coefficients[n * self.basis_total + f.first_basis + r];
            let basis = &self.tables[f.table_offset + r * f.table_len..][..f.table_len];
            if r == 0 {
                for (o, b) in out.iter_mut().zip(basis) {
                    *o = theta * b;
                }
            } else {
                for (o, b) in out.iter_mut().zip(basis) {
                    *o += theta * b;
                }
            }
        }
    }

    /// Weighted VN→FN inputs of a factor, `degree × M`.
    fn fill_inputs(
        &self,
        factor: usize,
        n: usize,
        weights: &MessageWeights,
        to_factor: &[f64],
        out: &mut Vec<f64>,
    ) {
        let m = self.alphabet;
        let f = &self.factors[factor];
        out.clear();
        for (slot, &v) in f.vars.iter().enumerate() {
            let e = f.first_edge + slot;
            match self.clamps[v] {
                Some(_) => out.extend_from_slice(&to_factor[e * m..(e + 1) * m]),
                None => {
                    let w = weights.to_factor[n * self.edge_factor.len() + e];
                    out.extend(to_factor[e * m..(e + 1) * m].iter().map(|x| w * x));
                }
            }
        }
    }
}

/// Runs `weights.iterations` flooding iterations and records every message.
pub fn forward(graph: &FactorGraph, weights: &MessageWeights) -> Result<Trace> {
    weights.check(graph)?;
    let m = graph.alphabet;
    let edges = graph.edge_count();
    let iterations = weights.iterations;
    let mut trace = Trace {
        iterations,
        to_factor: Vec::with_capacity(iterations),
        to_variable: Vec::with_capacity(iterations + 1),
        log_beliefs: Vec::new(),
        terms: 0,
    };
    trace
        .to_variable
        .push(vec![-(m as f64).ln(); edges * m]);
    let mut scratch = FactorScratch::new(m);
    let mut total = vec![0.0; m];

    for n in 0..iterations {
        let prev = trace.to_variable.last().expect("initialized");
        let mut vf = vec![0.0; edges * m];
        for (v, var_edges) in graph.var_edges.iter().enumerate() {
            if let Some(value) = graph.clamps[v] {
                let msg = clamp_message(m, value);
                for &e in var_edges {
                    vf[e * m..(e + 1) * m].copy_from_slice(&msg);
                }
                continue;
            }
            total.iter_mut().for_each(|t| *t = 0.0);
            for &e in var_edges {
                let w = if n == 0 { 1.0 } else { weights.to_variable[(n - 1) * edges + e] };
                for (t, x) in total.iter_mut().zip(&prev[e * m..(e + 1) * m]) {
                    *t += w * x;
                }
            }
            for &e in var_edges {
                let w = if n == 0 { 1.0 } else { weights.to_variable[(n - 1) * edges + e] };
                let out = &mut vf[e * m..(e + 1) * m];
                for ((o, t), x) in out.iter_mut().zip(&total).zip(&prev[e * m..(e + 1) * m]) {
                    *o = t - w * x;
                }
                normalize_in_place(out);
            }
        }

        let mut fv = vec![0.0; edges * m];
        for f in 0..graph.factors.len() {
            trace.terms += factor_forward(graph, f, n, weights, &vf, &mut fv, &mut scratch);
        }
        trace.to_factor.push(vf);
        trace.to_variable.push(fv);
    }

    let last = trace.to_variable.last().expect("at least one iteration");
    let mut log_beliefs = vec![0.0; graph.variable_count() * m];
    for (v, var_edges) in graph.var_edges.iter().enumerate() {
        let z = &mut log_beliefs[v * m..(v + 1) * m];
        if let Some(value) = graph.clamps[v] {
            z.copy_from_slice(&clamp_message(m, value));
        } else {
            for &e in var_edges {
                let w = weights.to_variable[(iterations - 1) * edges + e];
                for (zi, x) in z.iter_mut().zip(&last[e * m..(e + 1) * m]) {
                    *zi += w * x;
                }
            }
        }
        let lse = logsumexp(z);
        z.iter_mut().for_each(|zi| *zi -= lse);
    }
    trace.log_beliefs = log_beliefs;
    Ok(trace)
}

/// Computes all messages of one factor toward its free neighbors.
/// Returns the number of table terms evaluated.
fn factor_forward(
    graph: &FactorGraph,
    f: usize,
    n: usize,
    weights: &MessageWeights,
    vf: &[f64],
    fv: &mut [f64],
    s: &mut FactorScratch,
) -> u64 {
    let m = graph.alphabet;
    let node = &graph.factors[f];
    let degree = node.vars.len();
    let free: Vec<usize> = (0..degree)
        .filter(|&slot| graph.clamps[node.vars[slot]].is_none())
        .collect();
    if free.is_empty() {
        return 0;
    }
    graph.fill_table(f, n, weights, &mut s.table);
    let mut terms = 0u64;
    match degree {
        1 => {
            let e = node.first_edge;
            let out = &mut fv[e * m..(e + 1) * m];
            out.copy_from_slice(&s.table);
            normalize_in_place(out);
            terms += m as u64;
        }
        2 => {
            graph.fill_inputs(f, n, weights, vf, &mut s.inputs);
            let (in0, in1) = s.inputs.split_at(m);
            for &slot in &free {
                let e = node.first_edge + slot;
                let out = &mut fv[e * m..(e + 1) * m];
                for (v, o) in out.iter_mut().enumerate() {
                    let bins = &mut s.bins;
                    for (u, b) in bins.iter_mut().enumerate() {
                        *b = if slot == 0 {
                            s.table[v * m + u] + in1[u]
                        } else {
                            s.table[u * m + v] + in0[u]
                        };
                    }
                    *o = logsumexp(bins);
                }
                normalize_in_place(out);
                terms += (m * m) as u64;
            }
        }
        _ => {
            graph.fill_inputs(f, n, weights, vf, &mut s.inputs);
            joint_sums(&s.table, &s.inputs, m, degree, &mut s.sums);
            for &slot in &free {
                let e = node.first_edge + slot;
                let stride = m.pow((degree - 1 - slot) as u32);
                let out = &mut fv[e * m..(e + 1) * m];
                for (v, o) in out.iter_mut().enumerate() {
                    *o = slice_logsumexp(&s.sums, m, stride, v) - s.inputs[slot * m + v];
                }
                normalize_in_place(out);
                terms += s.table.len() as u64;
            }
        }
    }
    terms
}

/// S(X) = T(X) + Σ_j in_j(x_j) for every joint assignment X.
fn joint_sums(table: &[f64], inputs: &[f64], m: usize, degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(table);
    for j in 0..degree {
        let stride = m.pow((degree - 1 - j) as u32);
        let input = &inputs[j * m..(j + 1) * m];
        for (x, s) in out.iter_mut().enumerate() {
            *s += input[(x / stride) % m];
        }
    }
}

/// ln Σ exp(S(X)) over the assignments whose digit at `stride` equals `v`.
fn slice_logsumexp(sums: &[f64], m: usize, stride: usize, v: usize) -> f64 {
    let block = stride * m;
    let mut mx = f64::NEG_INFINITY;
    for base in (0..sums.len()).step_by(block) {
        for s in &sums[base + v * stride..base + (v + 1) * stride] {
            mx = mx.max(*s);
        }
    }
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let mut acc = 0.0;
    for base in (0..sums.len()).step_by(block) {
        for s in &sums[base + v * stride..base + (v + 1) * stride] {
            acc += (s - mx).exp();
        }
    }
    mx + acc.ln()
}

/// Sum-product beliefs (probability vectors, one per variable).
pub fn run_flooding(graph: &FactorGraph, weights: &MessageWeights) -> Result<Vec<Vec<f64>>> {
    let trace = forward(graph, weights)?;
    let m = graph.alphabet;
    Ok((0..graph.variable_count())
        .map(|v| trace.belief(v, m))
        .collect())
}

/// Reverse pass through a recorded run.
///
/// `grad_log_beliefs` is ∂ℓ/∂ ln P̂(x = v) laid out like [`Trace::log_beliefs`].
pub fn backward(
    graph: &FactorGraph,
    weights: &MessageWeights,
    trace: &Trace,
    grad_log_beliefs: &[f64],
    want_tables: bool,
) -> Result<EngineGradients> {
    weights.check(graph)?;
    let m = graph.alphabet;
    let edges = graph.edge_count();
    let iterations = weights.iterations;
    if trace.iterations != iterations || grad_log_beliefs.len() != graph.variable_count() * m {
        return Err(Error::Argument("trace does not match the weights".into()));
    }
    let mut grads = EngineGradients {
        to_factor: vec![0.0; iterations * edges],
        to_variable: vec![0.0; iterations * edges],
        coefficients: vec![0.0; iterations * graph.basis_total],
        tables: want_tables.then(|| vec![0.0; graph.tables.len()]),
    };

    // Readout: ln P̂ = z - lse(z), z = Σ_e w_e μ_e.
    let last = &trace.to_variable[iterations];
    let mut g_fv = vec![0.0; edges * m];
    let mut gz = vec![0.0; m];
    for (v, var_edges) in graph.var_edges.iter().enumerate() {
        if graph.clamps[v].is_some() {
            continue;
        }
        let lp = trace.log_belief(v, m);
        let g = &grad_log_beliefs[v * m..(v + 1) * m];
        let gsum: f64 = g.iter().sum();
        for i in 0..m {
            gz[i] = g[i] - lp[i].exp() * gsum;
        }
        for &e in var_edges {
            let idx = (iterations - 1) * edges + e;
            let w = weights.to_variable[idx];
            let msg = &last[e * m..(e + 1) * m];
            grads.to_variable[idx] += gz.iter().zip(msg).map(|(a, b)| a * b).sum::<f64>();
            for (gi, zi) in g_fv[e * m..(e + 1) * m].iter_mut().zip(&gz) {
                *gi += w * zi;
            }
        }
    }

    let mut scratch = FactorScratch::new(m);
    let mut g_in = Vec::new();
    let mut g_table = Vec::new();
    for n in (0..iterations).rev() {
        let vf = &trace.to_factor[n];
        let fv = &trace.to_variable[n + 1];
        let mut g_vf = vec![0.0; edges * m];
        for f in 0..graph.factors.len() {
            factor_backward(
                graph,
                f,
                n,
                weights,
                vf,
                fv,
                &mut g_fv,
                &mut g_vf,
                &mut grads,
                &mut scratch,
                &mut g_in,
                &mut g_table,
            );
        }

        // Variable updates of iteration n+1 consumed to_variable[n].
        let prev = &trace.to_variable[n];
        let mut g_prev = vec![0.0; edges * m];
        let mut g_total = vec![0.0; m];
        for (v, var_edges) in graph.var_edges.iter().enumerate() {
            if graph.clamps[v].is_some() {
                continue;
            }
            g_total.iter_mut().for_each(|g| *g = 0.0);
            for &e in var_edges {
                let g = &mut g_vf[e * m..(e + 1) * m];
                normalize_backward(&vf[e * m..(e + 1) * m], g);
                for (t, gi) in g_total.iter_mut().zip(g.iter()) {
                    *t += gi;
                }
            }
            if n == 0 {
                continue;
            }
            for &e in var_edges {
                let idx = (n - 1) * edges + e;
                let w = weights.to_variable[idx];
                let msg = &prev[e * m..(e + 1) * m];
                let own = &g_vf[e * m..(e + 1) * m];
                let mut gw = 0.0;
                for i in 0..m {
                    let gc = g_total[i] - own[i];
                    gw += gc * msg[i];
                    g_prev[e * m + i] += w * gc;
                }
                grads.to_variable[idx] += gw;
            }
        }
        g_fv = g_prev;
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn factor_backward(
    graph: &FactorGraph,
    f: usize,
    n: usize,
    weights: &MessageWeights,
    vf: &[f64],
    fv: &[f64],
    g_fv: &mut [f64],
    g_vf: &mut [f64],
    grads: &mut EngineGradients,
    s: &mut FactorScratch,
    g_in: &mut Vec<f64>,
    g_table: &mut Vec<f64>,
) {
    let m = graph.alphabet;
    let edges = graph.edge_count();
    let node = &graph.factors[f];
    let degree = node.vars.len();
    let free: Vec<usize> = (0..degree)
        .filter(|&slot| graph.clamps[node.vars[slot]].is_none())
        .collect();
    if free.is_empty() {
        return;
    }
    // Gradients w.r.t. the raw (pre-normalization) outputs.
    let mut any = false;
    for &slot in &free {
        let e = node.first_edge + slot;
        let g = &mut g_fv[e * m..(e + 1) * m];
        if g.iter().any(|&x| x != 0.0) {
            any = true;
            normalize_backward(&fv[e * m..(e + 1) * m], g);
        }
    }
    if !any {
        return;
    }
    graph.fill_table(f, n, weights, &mut s.table);
    g_table.clear();
    g_table.resize(node.table_len, 0.0);
    g_in.clear();
    g_in.resize(degree * m, 0.0);

    match degree {
        1 => {
            let e = node.first_edge;
            g_table.copy_from_slice(&g_fv[e * m..(e + 1) * m]);
        }
        2 => {
            graph.fill_inputs(f, n, weights, vf, &mut s.inputs);
            for &slot in &free {
                let e = node.first_edge + slot;
                let other = 1 - slot;
                for v in 0..m {
                    let gv = g_fv[e * m + v];
                    if gv == 0.0 {
                        continue;
                    }
                    let idx = |u: usize| if slot == 0 { v * m + u } else { u * m + v };
                    for u in 0..m {
                        s.bins[u] = s.table[idx(u)] + s.inputs[other * m + u];
                    }
                    let raw = logsumexp(&s.bins);
                    for u in 0..m {
                        let g = gv * (s.bins[u] - raw).exp();
                        g_table[idx(u)] += g;
                        g_in[other * m + u] += g;
                    }
                }
            }
        }
        _ => {
            graph.fill_inputs(f, n, weights, vf, &mut s.inputs);
            joint_sums(&s.table, &s.inputs, m, degree, &mut s.sums);
            let len = node.table_len;
            for &slot in &free {
                let e = node.first_edge + slot;
                let stride = m.pow((degree - 1 - slot) as u32);
                let mut lse = vec![0.0; m];
                for (v, l) in lse.iter_mut().enumerate() {
                    *l = slice_logsumexp(&s.sums, m, stride, v);
                }
                for v in 0..m {
                    // raw_t(v) = A_t(v) - in_t(v)
                    g_in[slot * m + v] -= g_fv[e * m + v];
                }
                for x in 0..len {
                    let v = (x / stride) % m;
                    let gv = g_fv[e * m + v];
                    if gv != 0.0 {
                        g_table[x] += gv * (s.sums[x] - lse[v]).exp();
                    }
                }
            }
            // S(X) depends on every input; route g_S to each digit.
            for j in 0..degree {
                let stride = m.pow((degree - 1 - j) as u32);
                for (x, g) in g_table.iter().enumerate() {
                    g_in[j * m + (x / stride) % m] += g;
                }
            }
        }
    }

    for r in 0..node.basis_count {
        let bidx = n * graph.basis_total + node.first_basis + r;
        let basis = &graph.tables[node.table_offset + r * node.table_len..][..node.table_len];
        grads.coefficients[bidx] += g_table.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>();
        if let Some(tables) = grads.tables.as_mut() {
            let theta = weights.coefficients[bidx];
            let dst = &mut tables[node.table_offset + r * node.table_len..][..node.table_len];
            for (d, g) in dst.iter_mut().zip(g_table.iter()) {
                *d += theta * g;
            }
        }
    }
    if degree == 1 {
        return;
    }
    for (slot, &v) in node.vars.iter().enumerate() {
        if graph.clamps[v].is_some() {
            continue;
        }
        let e = node.first_edge + slot;
        let idx = n * edges + e;
        let w = weights.to_factor[idx];
        let msg = &vf[e * m..(e + 1) * m];
        let gi = &g_in[slot * m..(slot + 1) * m];
        grads.to_factor[idx] += gi.iter().zip(msg).map(|(a, b)| a * b).sum::<f64>();
        for (d, g) in g_vf[e * m..(e + 1) * m].iter_mut().zip(gi) {
            *d += w * g;
        }
    }
}
