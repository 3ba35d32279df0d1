//! Forney (FFG), Ungerboeck (UFG) and generalized (GFG) factor-graph detectors.
//!
//! Variable nodes cover transmit positions `1-L ..= K+L`; positions outside
//! `1..=K` are clamped to the boundary symbol. Only edges touching an unclamped
//! variable carry trainable weights.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::channel::{ChannelModel, TransmissionFrame, BOUNDARY_SYMBOL};
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::observation::{matched_filter_model, preprocessed_model, BandMatrix, ObservationModel, Preprocessor};
use crate::spa::{self, EngineGradients, FactorGraph, MessageWeights, Trace};

/// Default number of flooding iterations.
pub const DEFAULT_ITERATIONS: usize = 10;

thread_local! {
    static FLIP_INTERACTION_SIGN: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Test fixture: while alive, interaction factors built on this thread get
/// the wrong sign.
#[doc(hidden)]
pub struct FaultGuard(bool);

impl FaultGuard {
    pub fn set(active: bool) -> Self {
        FaultGuard(FLIP_INTERACTION_SIGN.with(|f| f.replace(active)))
    }
}

impl Drop for FaultGuard {
    fn drop(&mut self) {
        FLIP_INTERACTION_SIGN.with(|f| f.set(self.0));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Ffg,
    Ufg,
    Gfg,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Ffg => "ffg",
            DetectorKind::Ufg => "ufg",
            DetectorKind::Gfg => "gfg",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ffg" => Ok(DetectorKind::Ffg),
            "ufg" => Ok(DetectorKind::Ufg),
            "gfg" => Ok(DetectorKind::Gfg),
            other => Err(Error::Config(format!("unknown detector `{other}`"))),
        }
    }
}

/// Interaction pairs `(k, l)`, `k > l`, `k - l <= band`, both in `1-L..=K+L`
/// and at least one in `1..=K`. Ordered by `k`, then by distance.
pub fn interaction_pairs(block_len: usize, memory: usize, band: usize) -> Vec<(isize, isize)> {
    let k_max = (block_len + memory) as isize;
    let lowest = 1 - memory as isize;
    let free = |j: isize| j >= 1 && j <= block_len as isize;
    let mut pairs = Vec::new();
    for k in lowest..=k_max {
        for d in 1..=band as isize {
            let l = k - d;
            if l < lowest {
                break;
            }
            if free(k) || free(l) {
                pairs.push((k, l));
            }
        }
    }
    pairs
}

fn free_endpoints(pairs: &[(isize, isize)], block_len: usize) -> usize {
    let free = |j: isize| j >= 1 && j <= block_len as isize;
    pairs
        .iter()
        .map(|&(k, l)| free(k) as usize + free(l) as usize)
        .sum()
}

/// Number of trainable edges per iteration.
pub fn trainable_edge_count(kind: DetectorKind, block_len: usize, memory: usize, band: usize) -> usize {
    match kind {
        DetectorKind::Ffg => block_len * (memory + 1),
        DetectorKind::Ufg | DetectorKind::Gfg => {
            free_endpoints(&interaction_pairs(block_len, memory, band), block_len)
        }
    }
}

/// Trainable parameters of one detector instance.
///
/// Flat layouts: `edge_weights[(n * edges + e) * 2 + dir]` with `dir` 0 for
/// VN→FN and 1 for FN→VN; `kappa[(n * K + k - 1) * 3 + i]`;
/// `lambda[n * pairs + p]` in [`interaction_pairs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams {
    pub kind: DetectorKind,
    pub iterations: usize,
    pub block_len: usize,
    pub memory: usize,
    pub band: usize,
    pub edge_weights: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<f64>,
    pub preprocessor: Option<Preprocessor>,
    pub channel: String,
    pub modulation: String,
    pub train_ebn0_db: Option<f64>,
}

impl DetectorParams {
    /// Unit weights for an FFG or UFG detector (the plain sum-product detectors).
    pub fn unit(
        kind: DetectorKind,
        iterations: usize,
        block_len: usize,
        ch: &ChannelModel,
        cons: &Constellation,
    ) -> Result<Self> {
        if kind == DetectorKind::Gfg {
            return Err(Error::Config("gfg parameters need a preprocessor".into()));
        }
        Self::with_band(kind, iterations, block_len, ch, cons, ch.memory(), None)
    }

    /// Unit weights and κ = λ = 1 around a given preprocessor.
    pub fn gfg(
        iterations: usize,
        block_len: usize,
        ch: &ChannelModel,
        cons: &Constellation,
        pre: Preprocessor,
    ) -> Result<Self> {
        let band = pre.structural_band(ch.memory());
        Self::with_band(DetectorKind::Gfg, iterations, block_len, ch, cons, band, Some(pre))
    }

    fn with_band(
        kind: DetectorKind,
        iterations: usize,
        block_len: usize,
        ch: &ChannelModel,
        cons: &Constellation,
        band: usize,
        preprocessor: Option<Preprocessor>,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if block_len == 0 {
            return Err(Error::Config("block length must be at least 1".into()));
        }
        let memory = ch.memory();
        let edges = trainable_edge_count(kind, block_len, memory, band);
        let (kappa, lambda) = if kind == DetectorKind::Gfg {
            let pairs = interaction_pairs(block_len, memory, band).len();
            (
                vec![1.0; iterations * block_len * 3],
                vec![1.0; iterations * pairs],
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(DetectorParams {
            kind,
            iterations,
            block_len,
            memory,
            band,
            edge_weights: vec![1.0; iterations * edges * 2],
            kappa,
            lambda,
            preprocessor,
            channel: ch.name().to_string(),
            modulation: cons.name().to_string(),
            train_ebn0_db: None,
        })
    }

    pub fn edges_per_iteration(&self) -> usize {
        trainable_edge_count(self.kind, self.block_len, self.memory, self.band)
    }

    /// Total number of trainable scalars.
    pub fn len(&self) -> usize {
        self.edge_weights.len()
            + self.kappa.len()
            + self.lambda.len()
            + self.preprocessor.as_ref().map_or(0, |p| p.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation `edge_weights ‖ kappa ‖ lambda ‖ taps`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.edge_weights);
        v.extend_from_slice(&self.kappa);
        v.extend_from_slice(&self.lambda);
        if let Some(p) = &self.preprocessor {
            v.extend_from_slice(&p.taps);
        }
        v
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.edge_weights.len());
        self.edge_weights.copy_from_slice(a);
        let (a, rest) = rest.split_at(self.kappa.len());
        self.kappa.copy_from_slice(a);
        let (a, rest) = rest.split_at(self.lambda.len());
        self.lambda.copy_from_slice(a);
        if let Some(p) = self.preprocessor.as_mut() {
            p.taps.copy_from_slice(rest);
        }
        Ok(())
    }

    /// Checks internal shape consistency.
    pub fn validate(&self) -> Result<()> {
        let shape = |field: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(format!("{field}: expected {want} values, found {got}")))
            }
        };
        if self.iterations == 0 || self.block_len == 0 {
            return Err(Error::Config("iterations and block length must be positive".into()));
        }
        let edges = self.edges_per_iteration();
        shape("edge_weights", self.edge_weights.len(), self.iterations * edges * 2)?;
        match self.kind {
            DetectorKind::Gfg => {
                let pre = self
                    .preprocessor
                    .as_ref()
                    .ok_or_else(|| Error::Config("gfg parameters need a preprocessor".into()))?;
                if pre.structural_band(self.memory) > self.band {
                    return Err(Error::Config("preprocessor exceeds the parameter band".into()));
                }
                shape("kappa", self.kappa.len(), self.iterations * self.block_len * 3)?;
                let pairs = interaction_pairs(self.block_len, self.memory, self.band).len();
                shape("lambda", self.lambda.len(), self.iterations * pairs)?;
            }
            DetectorKind::Ffg | DetectorKind::Ufg => {
                shape("kappa", self.kappa.len(), 0)?;
                shape("lambda", self.lambda.len(), 0)?;
                if self.band != self.memory {
                    return Err(Error::Config("band must equal the channel memory".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks that the parameters fit a channel and block length.
    pub fn check_compatible(&self, ch: &ChannelModel, block_len: usize) -> Result<()> {
        if ch.memory() != self.memory {
            return Err(Error::Config(format!(
                "parameters are for channel memory {}, channel `{}` has memory {}",
                self.memory,
                ch.name(),
                ch.memory()
            )));
        }
        if block_len != self.block_len {
            return Err(Error::Config(format!(
                "parameters are for block length {}, frame has {block_len}",
                self.block_len
            )));
        }
        Ok(())
    }
}

/// Parameter gradients in the layout of [`DetectorParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub edge_weights: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda: Vec<f64>,
    pub taps: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros(params: &DetectorParams) -> Self {
        ParamGradients {
            edge_weights: vec![0.0; params.edge_weights.len()],
            kappa: vec![0.0; params.kappa.len()],
            lambda: vec![0.0; params.lambda.len()],
            taps: vec![0.0; params.preprocessor.as_ref().map_or(0, |p| p.len())],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.edge_weights.clone();
        v.extend_from_slice(&self.kappa);
        v.extend_from_slice(&self.lambda);
        v.extend_from_slice(&self.taps);
        v
    }

    pub fn add_assign(&mut self, other: &ParamGradients) {
        for (a, b) in [
            (&mut self.edge_weights, &other.edge_weights),
            (&mut self.kappa, &other.kappa),
            (&mut self.lambda, &other.lambda),
            (&mut self.taps, &other.taps),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// A detector factor graph for one frame together with its parameter map.
#[derive(Clone, Debug)]
pub struct DetectorGraph {
    pub kind: DetectorKind,
    pub graph: FactorGraph,
    pub block_len: usize,
    pub memory: usize,
    pub band: usize,
    pub sigma2: f64,
    trainable: Vec<usize>,
    single: Vec<usize>,
    pairs: Vec<(isize, isize)>,
    pair_factors: Vec<usize>,
    points: Vec<Complex64>,
}

fn variable_nodes(graph: &mut FactorGraph, block_len: usize, memory: usize) {
    let lowest = 1 - memory as isize;
    for j in lowest..=(block_len + memory) as isize {
        if j >= 1 && j <= block_len as isize {
            graph.add_variable();
        } else {
            graph.add_clamped_variable(BOUNDARY_SYMBOL);
        }
    }
}

impl DetectorGraph {
    /// Variable index of transmit position `j` (`1-L ..= K+L`).
    pub fn var(&self, j: isize) -> usize {
        (j + self.memory as isize - 1) as usize
    }

    fn is_free(&self, j: isize) -> bool {
        j >= 1 && j <= self.block_len as isize
    }

    /// Forney graph: one factor per observation, neighbors `c_k, c_{k-1}, …, c_{k-L}`.
    pub fn ffg(
        ch: &ChannelModel,
        cons: &Constellation,
        observations: &[Complex64],
        sigma2: f64,
    ) -> Result<Self> {
        check_sigma2(sigma2)?;
        let memory = ch.memory();
        if observations.len() <= memory {
            return Err(Error::Argument("observation shorter than the channel memory".into()));
        }
        let block_len = observations.len() - memory;
        let m = cons.size();
        let mut graph = FactorGraph::new(m);
        variable_nodes(&mut graph, block_len, memory);
        let mut dg = DetectorGraph {
            kind: DetectorKind::Ffg,
            graph: FactorGraph::new(m),
            block_len,
            memory,
            band: memory,
            sigma2,
            trainable: Vec::new(),
            single: Vec::new(),
            pairs: Vec::new(),
            pair_factors: Vec::new(),
            points: cons.points().to_vec(),
        };
        let degree = memory + 1;
        let len = m.checked_pow(degree as u32).ok_or_else(|| {
            Error::Capability(format!("FFG table of {m}^{degree} entries"))
        })?;
        if len > spa::MAX_TABLE_LEN {
            return Err(Error::Capability(format!(
                "FFG factor with {m}^{degree} entries exceeds the table limit"
            )));
        }
        let taps = ch.taps();
        let mut table = vec![0.0; len];
        for k in 1..=(block_len + memory) as isize {
            let vars: Vec<usize> = (0..=memory).map(|l| dg.var(k - l as isize)).collect();
            let y = observations[(k - 1) as usize];
            fill_forney_table(&mut table, taps, &dg.points, y, sigma2);
            let f = graph.add_factor(&vars, table.clone())?;
            for l in 0..=memory {
                if dg.is_free(k - l as isize) {
                    dg.trainable.push(graph.factor_edge(f, l));
                }
            }
        }
        dg.graph = graph;
        Ok(dg)
    }

    /// Ungerboeck-type graph over an observation model with interaction band `band`.
    pub fn generalized(
        kind: DetectorKind,
        cons: &Constellation,
        memory: usize,
        obs: &ObservationModel,
        band: usize,
        sigma2: f64,
    ) -> Result<Self> {
        check_sigma2(sigma2)?;
        if obs.band > band {
            return Err(Error::Config(format!(
                "observation model band {} exceeds the detector band {band}",
                obs.band
            )));
        }
        let positions = obs.x.len();
        if positions < 2 * memory + 1 {
            return Err(Error::Argument("observation model has no data positions".into()));
        }
        let block_len = positions - 2 * memory;
        let m = cons.size();
        let mut graph = FactorGraph::new(m);
        variable_nodes(&mut graph, block_len, memory);
        let mut dg = DetectorGraph {
            kind,
            graph: FactorGraph::new(m),
            block_len,
            memory,
            band,
            sigma2,
            trainable: Vec::new(),
            single: Vec::new(),
            pairs: interaction_pairs(block_len, memory, band),
            pair_factors: Vec::new(),
            points: cons.points().to_vec(),
        };
        let points = cons.points();
        for k in 1..=block_len as isize {
            let i = dg.var(k);
            let x = obs.x[i];
            let gkk = obs.gmat.get(i, i).re;
            let phi_a: Vec<f64> = points
                .iter()
                .map(|c| 2.0 * (x * c.conj()).re / sigma2)
                .collect();
            let phi_b: Vec<f64> = points.iter().map(|c| gkk * c.norm_sqr() / sigma2).collect();
            dg.single.push(graph.add_factor_with_bases(&[i], &[phi_a, phi_b])?);
        }
        let mut table = vec![0.0; m * m];
        let sign = if FLIP_INTERACTION_SIGN.with(|f| f.get()) { -1.0 } else { 1.0 };
        for &(k, l) in &dg.pairs {
            let (a, b) = (dg.var(k), dg.var(l));
            let gkl = obs.gmat.get(a, b);
            let glk = obs.gmat.get(b, a);
            for (u, cu) in points.iter().enumerate() {
                for (v, cv) in points.iter().enumerate() {
                    table[u * m + v] =
                        sign * (-(gkl * cv * cu.conj()).re - (glk * cu * cv.conj()).re) / sigma2;
                }
            }
            let f = graph.add_factor(&[a, b], table.clone())?;
            dg.pair_factors.push(f);
            if dg.is_free(k) {
                dg.trainable.push(graph.factor_edge(f, 0));
            }
            if dg.is_free(l) {
                dg.trainable.push(graph.factor_edge(f, 1));
            }
        }
        dg.graph = graph;
        Ok(dg)
    }

    /// Builds the graph a parameter set describes for one frame.
    pub fn for_params(
        params: &DetectorParams,
        ch: &ChannelModel,
        cons: &Constellation,
        observations: &[Complex64],
        sigma2: f64,
    ) -> Result<Self> {
        params.validate()?;
        if observations.len() != params.block_len + params.memory {
            return Err(Error::Config(format!(
                "parameters are for block length {}, frame has {}",
                params.block_len,
                observations.len().saturating_sub(params.memory)
            )));
        }
        params.check_compatible(ch, params.block_len)?;
        match params.kind {
            DetectorKind::Ffg => Self::ffg(ch, cons, observations, sigma2),
            DetectorKind::Ufg => {
                let obs = matched_filter_model(ch, observations)?;
                Self::generalized(DetectorKind::Ufg, cons, ch.memory(), &obs, params.band, sigma2)
            }
            DetectorKind::Gfg => {
                let pre = params.preprocessor.as_ref().expect("validated");
                let obs = preprocessed_model(pre, ch, observations)?;
                Self::generalized(DetectorKind::Gfg, cons, ch.memory(), &obs, params.band, sigma2)
            }
        }
    }

    /// Engine weights for a parameter set.
    pub fn weights(&self, params: &DetectorParams) -> Result<MessageWeights> {
        let iterations = params.iterations;
        let edges_per_iter = self.trainable.len();
        if params.edge_weights.len() != iterations * edges_per_iter * 2 {
            return Err(Error::Config("edge weights do not match the graph".into()));
        }
        let mut w = MessageWeights::unit(&self.graph, iterations);
        let e_total = self.graph.edge_count();
        for n in 0..iterations {
            for (t, &e) in self.trainable.iter().enumerate() {
                let base = (n * edges_per_iter + t) * 2;
                w.to_factor[n * e_total + e] = params.edge_weights[base];
                w.to_variable[n * e_total + e] = params.edge_weights[base + 1];
            }
        }
        if params.kind == DetectorKind::Gfg {
            let b_total = self.graph.basis_count();
            let k_len = self.block_len;
            let p_len = self.pairs.len();
            if params.kappa.len() != iterations * k_len * 3
                || params.lambda.len() != iterations * p_len
            {
                return Err(Error::Config("kappa/lambda do not match the graph".into()));
            }
            for n in 0..iterations {
                for (k, &f) in self.single.iter().enumerate() {
                    let kap = &params.kappa[(n * k_len + k) * 3..][..3];
                    let b = n * b_total + self.graph.factor_basis(f);
                    w.coefficients[b] = kap[0] * kap[1];
                    w.coefficients[b + 1] = -kap[0] * kap[2];
                }
                for (p, &f) in self.pair_factors.iter().enumerate() {
                    w.coefficients[n * b_total + self.graph.factor_basis(f)] =
                        params.lambda[n * p_len + p];
                }
            }
        } else if self.kind != DetectorKind::Ffg {
            for n in 0..iterations {
                let b_total = self.graph.basis_count();
                for &f in &self.single {
                    let b = n * b_total + self.graph.factor_basis(f);
                    w.coefficients[b] = 1.0;
                    w.coefficients[b + 1] = -1.0;
                }
            }
        }
        Ok(w)
    }

    /// Symbol posteriors `P̂(c_k | y)`, `k = 1..=K`, from a trace.
    pub fn symbol_beliefs(&self, trace: &Trace) -> Vec<Vec<f64>> {
        let m = self.graph.alphabet();
        (1..=self.block_len as isize)
            .map(|k| trace.belief(self.var(k), m))
            .collect()
    }

    /// Log-beliefs of the data symbols, `K × M` row-major.
    pub fn symbol_log_beliefs(&self, trace: &Trace) -> Vec<f64> {
        let m = self.graph.alphabet();
        let start = self.var(1) * m;
        trace.log_beliefs[start..start + self.block_len * m].to_vec()
    }

    /// Expands a gradient over data-symbol log-beliefs to all variables.
    pub fn expand_belief_gradient(&self, grad: &[f64]) -> Vec<f64> {
        let m = self.graph.alphabet();
        let mut full = vec![0.0; self.graph.variable_count() * m];
        let start = self.var(1) * m;
        full[start..start + grad.len()].copy_from_slice(grad);
        full
    }

    /// Maps engine gradients back to the parameter layout. For GFG the
    /// preprocessor gradient needs `h` and `y`; pass them through `chain`.
    pub fn param_gradients(
        &self,
        params: &DetectorParams,
        engine: &EngineGradients,
        chain: Option<(&BandMatrix, &[Complex64])>,
    ) -> Result<ParamGradients> {
        let mut out = ParamGradients::zeros(params);
        let iterations = params.iterations;
        let edges_per_iter = self.trainable.len();
        let e_total = self.graph.edge_count();
        for n in 0..iterations {
            for (t, &e) in self.trainable.iter().enumerate() {
                let base = (n * edges_per_iter + t) * 2;
                out.edge_weights[base] = engine.to_factor[n * e_total + e];
                out.edge_weights[base + 1] = engine.to_variable[n * e_total + e];
            }
        }
        if params.kind != DetectorKind::Gfg {
            return Ok(out);
        }
        let b_total = self.graph.basis_count();
        let k_len = self.block_len;
        let p_len = self.pairs.len();
        for n in 0..iterations {
            for (k, &f) in self.single.iter().enumerate() {
                let kap = &params.kappa[(n * k_len + k) * 3..][..3];
                let b = n * b_total + self.graph.factor_basis(f);
                let (ga, gb) = (engine.coefficients[b], engine.coefficients[b + 1]);
                let dst = &mut out.kappa[(n * k_len + k) * 3..][..3];
                dst[0] = ga * kap[1] - gb * kap[2];
                dst[1] = ga * kap[0];
                dst[2] = -gb * kap[0];
            }
            for (p, &f) in self.pair_factors.iter().enumerate() {
                out.lambda[n * p_len + p] =
                    engine.coefficients[n * b_total + self.graph.factor_basis(f)];
            }
        }
        if let (Some(tables), Some((h, y)), Some(pre)) =
            (engine.tables.as_ref(), chain, params.preprocessor.as_ref())
        {
            let (gx, gg) = self.observation_gradients(tables);
            out.taps = pre.backward(h, y, &gx, &gg);
        }
        Ok(out)
    }

    /// Chains basis-table gradients to gradients of x̃ and G̃.
    pub fn observation_gradients(&self, tables: &[f64]) -> (Vec<Complex64>, BandMatrix) {
        let m = self.graph.alphabet();
        let positions = self.block_len + 2 * self.memory;
        let band = self.band as isize;
        let mut gx = vec![Complex64::new(0.0, 0.0); positions];
        let mut gg = BandMatrix::zeros(positions, positions, -band, band);
        let s2 = self.sigma2;
        for (k, &f) in self.single.iter().enumerate() {
            let off = self.graph.table_offset(f);
            let ga = &tables[off..off + m];
            let gb = &tables[off + m..off + 2 * m];
            let i = self.var(k as isize + 1);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut acc_g = 0.0;
            for (c, p) in self.points.iter().enumerate() {
                acc += p * (2.0 * ga[c] / s2);
                acc_g += gb[c] * p.norm_sqr() / s2;
            }
            gx[i] += acc;
            gg.add_to(i, i, Complex64::new(acc_g, 0.0));
        }
        for (&(k, l), &f) in self.pairs.iter().zip(&self.pair_factors) {
            let off = self.graph.table_offset(f);
            let g = &tables[off..off + m * m];
            let (a, b) = (self.var(k), self.var(l));
            let mut gkl = Complex64::new(0.0, 0.0);
            let mut glk = Complex64::new(0.0, 0.0);
            for (u, cu) in self.points.iter().enumerate() {
                for (v, cv) in self.points.iter().enumerate() {
                    let gt = g[u * m + v];
                    if gt != 0.0 {
                        let z = cu * cv.conj();
                        gkl -= z * (gt / s2);
                        glk -= z.conj() * (gt / s2);
                    }
                }
            }
            gg.add_to(a, b, gkl);
            gg.add_to(b, a, glk);
        }
        (gx, gg)
    }

    /// Factor-table terms evaluated by `iterations` iterations.
    pub fn operation_count(&self, iterations: usize) -> u64 {
        self.graph.terms_per_iteration() * iterations as u64
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("noise variance {sigma2} must be positive")))
    }
}

/// `ln q_k` over all neighbor assignments (first neighbor most significant).
fn fill_forney_table(table: &mut [f64], taps: &[Complex64], points: &[Complex64], y: Complex64, sigma2: f64) {
    let m = points.len();
    let degree = taps.len();
    for (x, t) in table.iter_mut().enumerate() {
        let mut rem = x;
        let mut s = Complex64::new(0.0, 0.0);
        for l in (0..degree).rev() {
            s += taps[l] * points[rem % m];
            rem /= m;
        }
        *t = -(y - s).norm_sqr() / sigma2;
    }
}

/// Per-symbol posteriors of the data symbols of one frame.
pub fn detect(
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
    params: &DetectorParams,
) -> Result<Vec<Vec<f64>>> {
    let dg = DetectorGraph::for_params(params, ch, cons, &frame.observations, frame.sigma2)?;
    let w = dg.weights(params)?;
    let trace = spa::forward(&dg.graph, &w)?;
    Ok(dg.symbol_beliefs(&trace))
}

/// Plain (unit-weight) FFG or UFG detection.
pub fn detect_unweighted(
    kind: DetectorKind,
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    let params = DetectorParams::unit(kind, iterations, frame.block_len(), ch, cons)?;
    detect(frame, ch, cons, &params)
}

/// Exact number of factor-table terms N flooding iterations evaluate.
///
/// `span` is the channel memory for FFG and UFG, and the band of G̃ for GFG
/// (whose boundary still spans the channel memory `memory`).
pub fn count_fn_operations(
    kind: DetectorKind,
    block_len: usize,
    memory: usize,
    span: usize,
    alphabet: usize,
    iterations: usize,
) -> u64 {
    let m = alphabet as u64;
    let per_iter = match kind {
        DetectorKind::Ffg => (block_len * (memory + 1)) as u64 * m.pow(memory as u32 + 1),
        DetectorKind::Ufg | DetectorKind::Gfg => {
            let band = if kind == DetectorKind::Ufg { memory } else { span };
            let pairs = interaction_pairs(block_len, memory, band);
            block_len as u64 * m + free_endpoints(&pairs, block_len) as u64 * m * m
        }
    };
    per_iter * iterations as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{random_symbols, transmit};
    use crate::constellation::{ebn0_to_sigma2, Modulation};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(ch: &ChannelModel, cons: &Constellation, k: usize, db: f64, seed: u64) -> TransmissionFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let syms = random_symbols(&mut rng, cons, k);
        transmit(&syms, ch, cons, ebn0_to_sigma2(db, cons), &mut rng).unwrap()
    }

    #[test]
    fn ffg_structure_for_memory_two() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::proakis_b();
        let f = frame(&ch, &cons, 3, 5.0, 1);
        let dg = DetectorGraph::ffg(&ch, &cons, &f.observations, f.sigma2).unwrap();
        assert_eq!(dg.graph.factor_count(), 5);
        // q_3 connects c_3, c_2, c_1
        let n: Vec<usize> = dg.graph.factor_neighbors(2).to_vec();
        assert_eq!(n, vec![dg.var(3), dg.var(2), dg.var(1)]);
        assert!(dg.graph.is_consistent());
        assert_eq!(dg.trainable.len(), 3 * 3);
    }

    #[test]
    fn ffg_memoryless_graph_is_degree_one() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::identity();
        let f = frame(&ch, &cons, 4, 3.0, 2);
        let dg = DetectorGraph::ffg(&ch, &cons, &f.observations, f.sigma2).unwrap();
        for fi in 0..dg.graph.factor_count() {
            assert_eq!(dg.graph.factor_neighbors(fi).len(), 1);
        }
    }

    #[test]
    fn ufg_structure_for_memory_two() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::proakis_b();
        let f = frame(&ch, &cons, 6, 5.0, 3);
        let obs = matched_filter_model(&ch, &f.observations).unwrap();
        let dg = DetectorGraph::generalized(DetectorKind::Ufg, &cons, 2, &obs, 2, f.sigma2).unwrap();
        let c4 = dg.var(4);
        let mut partners: Vec<isize> = Vec::new();
        for fi in 0..dg.graph.factor_count() {
            let nb = dg.graph.factor_neighbors(fi);
            if nb.len() == 2 && nb.contains(&c4) {
                let other = if nb[0] == c4 { nb[1] } else { nb[0] };
                partners.push(other as isize - 1);
            }
        }
        partners.sort_unstable();
        assert_eq!(partners, vec![2, 3, 5, 6]);
        assert_eq!(dg.single.len(), 6);
    }

    #[test]
    fn factor_tables_match_closed_form() {
        let cons = Constellation::new(Modulation::Qam16);
        let ch = ChannelModel::proakis_b();
        let f = frame(&ch, &cons, 5, 8.0, 4);
        let obs = matched_filter_model(&ch, &f.observations).unwrap();
        let dg = DetectorGraph::generalized(DetectorKind::Ufg, &cons, 2, &obs, 2, f.sigma2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s2 = f.sigma2;
        let params = DetectorParams::unit(DetectorKind::Ufg, 1, 5, &ch, &cons).unwrap();
        let w = dg.weights(&params).unwrap();
        for _ in 0..20 {
            let k = rng.gen_range(1..=5isize);
            let u = rng.gen_range(0..16);
            let c = cons.point(u);
            let i = dg.var(k);
            let fi = dg.single[(k - 1) as usize];
            let b = dg.graph.factor_basis(fi);
            let table = w.coefficients[b] * dg.graph.basis_table(fi, 0)[u]
                + w.coefficients[b + 1] * dg.graph.basis_table(fi, 1)[u];
            let direct = (2.0 * obs.x[i] * c.conj() - obs.gmat.get(i, i) * c.norm_sqr()).re / s2;
            assert_abs_diff_eq!(table, direct, epsilon = 1e-9);
        }
        for (p, &(k, l)) in dg.pairs.iter().enumerate() {
            let fi = dg.pair_factors[p];
            let (u, v) = (rng.gen_range(0..16), rng.gen_range(0..16));
            let (ck, cl) = (cons.point(u), cons.point(v));
            let (a, b) = (dg.var(k), dg.var(l));
            let direct = (-(obs.gmat.get(a, b) * cl * ck.conj()).re
                - (obs.gmat.get(b, a) * ck * cl.conj()).re)
                / s2;
            assert_abs_diff_eq!(dg.graph.basis_table(fi, 0)[u * 16 + v], direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn band_zero_has_no_pair_factors() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::identity();
        let f = frame(&ch, &cons, 7, 2.0, 6);
        let obs = matched_filter_model(&ch, &f.observations).unwrap();
        assert_eq!(obs.band, 0);
        let dg = DetectorGraph::generalized(DetectorKind::Ufg, &cons, 0, &obs, 0, f.sigma2).unwrap();
        assert_eq!(dg.graph.factor_count(), 7);
    }

    #[test]
    fn memoryless_detectors_give_gaussian_posterior() {
        let cons = Constellation::new(Modulation::Qam16);
        let ch = ChannelModel::identity();
        let f = frame(&ch, &cons, 10, 4.0, 7);
        for kind in [DetectorKind::Ffg, DetectorKind::Ufg] {
            let post = detect_unweighted(kind, &f, &ch, &cons, 3).unwrap();
            for (k, p) in post.iter().enumerate() {
                let y = f.observations[k];
                let lin: Vec<f64> = cons
                    .points()
                    .iter()
                    .map(|c| (-(y - c).norm_sqr() / f.sigma2).exp())
                    .collect();
                let z: f64 = lin.iter().sum();
                for (a, b) in p.iter().zip(&lin) {
                    assert_abs_diff_eq!(*a, b / z, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn ufg_equals_gfg_with_matched_filter_taps() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::proakis_b();
        let f = frame(&ch, &cons, 20, 6.0, 8);
        let ufg = detect_unweighted(DetectorKind::Ufg, &f, &ch, &cons, 5).unwrap();
        let taps: Vec<f64> = ch.taps().iter().rev().map(|t| t.re).collect();
        let pre = Preprocessor::new(taps, 2).unwrap();
        let params = DetectorParams::gfg(5, 20, &ch, &cons, pre).unwrap();
        let gfg = detect(&f, &ch, &cons, &params).unwrap();
        assert_eq!(ufg, gfg);
    }

    #[test]
    fn noiseless_ffg_recovers_symbols() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::proakis_b();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let syms = random_symbols(&mut rng, &cons, 20);
        let f = transmit(&syms, &ch, &cons, 1e-4, &mut rng).unwrap();
        let post = detect_unweighted(DetectorKind::Ffg, &f, &ch, &cons, 10).unwrap();
        for (p, &s) in post.iter().zip(&syms) {
            let arg = if p[0] >= p[1] { 0 } else { 1 };
            assert_eq!(arg, s);
        }
    }

    #[test]
    fn kappa_scaling_keeps_argmax_on_band_zero() {
        let cons = Constellation::new(Modulation::Qam16);
        let ch = ChannelModel::identity();
        let f = frame(&ch, &cons, 12, 3.0, 10);
        let pre = Preprocessor::new(vec![1.0], 0).unwrap();
        let mut params = DetectorParams::gfg(2, 12, &ch, &cons, pre).unwrap();
        let base = detect(&f, &ch, &cons, &params).unwrap();
        params.kappa.chunks_mut(3).for_each(|c| c[0] = 3.7);
        let scaled = detect(&f, &ch, &cons, &params).unwrap();
        let argmax = |p: &Vec<f64>| {
            p.iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > p[b] { i } else { b })
        };
        for (a, b) in base.iter().zip(&scaled) {
            assert_eq!(argmax(a), argmax(b));
        }
    }

    #[test]
    fn operation_counts_match_engine() {
        let cons = Constellation::new(Modulation::Bpsk);
        for ch in [ChannelModel::proakis_b(), ChannelModel::identity()] {
            let f = frame(&ch, &cons, 9, 4.0, 11);
            let l = ch.memory();
            let dg = DetectorGraph::ffg(&ch, &cons, &f.observations, f.sigma2).unwrap();
            let w = MessageWeights::unit(&dg.graph, 3);
            let t = spa::forward(&dg.graph, &w).unwrap();
            assert_eq!(t.terms, count_fn_operations(DetectorKind::Ffg, 9, l, l, 2, 3));
            let obs = matched_filter_model(&ch, &f.observations).unwrap();
            let dg = DetectorGraph::generalized(DetectorKind::Ufg, &cons, l, &obs, l, f.sigma2).unwrap();
            let w = MessageWeights::unit(&dg.graph, 3);
            let t = spa::forward(&dg.graph, &w).unwrap();
            assert_eq!(t.terms, count_fn_operations(DetectorKind::Ufg, 9, l, l, 2, 3));
        }
        assert!(count_fn_operations(DetectorKind::Ufg, 1, 0, 0, 2, 1) > 0);
    }

    #[test]
    fn wrong_block_length_is_config_error() {
        let cons = Constellation::new(Modulation::Bpsk);
        let ch = ChannelModel::proakis_b();
        let f = frame(&ch, &cons, 10, 4.0, 12);
        let params = DetectorParams::unit(DetectorKind::Ufg, 2, 11, &ch, &cons).unwrap();
        assert!(matches!(detect(&f, &ch, &cons, &params), Err(Error::Config(_))));
    }

    #[test]
    fn sixteen_qam_ffg_on_long_channel_is_a_capability_error() {
        let cons = Constellation::new(Modulation::Qam16);
        let ch = ChannelModel::proakis_a();
        let f = frame(&ch, &cons, 3, 10.0, 13);
        assert!(matches!(
            DetectorGraph::ffg(&ch, &cons, &f.observations, f.sigma2),
            Err(Error::Capability(_))
        ));
    }
}
