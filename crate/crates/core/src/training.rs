//! End-to-end training of detector parameters by maximizing the BMI estimate.
//!
//! Gradients are exact: the bit-metric loss head is differentiated on a
//! [`GradientTape`], the unrolled message passing by the engine's reverse
//! pass, and the preprocessor taps through the (linear) observation model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::{GradientTape, Var};
use crate::channel::{random_symbols, transmit, ChannelModel, TransmissionFrame};
use crate::constellation::{ebn0_to_sigma2, Constellation};
use crate::detectors::{DetectorGraph, DetectorKind, DetectorParams, ParamGradients, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::metrics::{pairwise_sum, DEFAULT_LLR_CLAMP};
use crate::observation::{channel_matrix, Preprocessor};
use crate::spa;

/// Per-frame random stream: frame `index` of master `seed`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Labeled frames at one operating point.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub frames: Vec<TransmissionFrame>,
    pub ebn0_db: f64,
    pub sigma2: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Draws `count` i.i.d. uniform frames.
pub fn generate_dataset<R: rand::Rng + ?Sized>(
    ch: &ChannelModel,
    cons: &Constellation,
    block_len: usize,
    ebn0_db: f64,
    count: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Argument("dataset needs at least one frame".into()));
    }
    let sigma2 = ebn0_to_sigma2(ebn0_db, cons);
    let frames = (0..count)
        .map(|_| {
            let syms = random_symbols(rng, cons, block_len);
            transmit(&syms, ch, cons, sigma2, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        frames,
        ebn0_db,
        sigma2,
    })
}

/// Frames `first..first+count` of a seeded stream, each from its own [`frame_rng`].
pub fn seeded_frames(
    ch: &ChannelModel,
    cons: &Constellation,
    block_len: usize,
    sigma2: f64,
    seed: u64,
    first: u64,
    count: usize,
) -> Result<Vec<TransmissionFrame>> {
    (0..count as u64)
        .map(|i| {
            let mut rng = frame_rng(seed, first + i);
            let syms = random_symbols(&mut rng, cons, block_len);
            transmit(&syms, ch, cons, sigma2, &mut rng)
        })
        .collect()
}

/// Sum over bits of log2(1 + exp(−(−1)^b L)) for one frame, with gradients
/// with respect to the symbol log-beliefs.
pub fn bit_penalty_and_gradient(
    log_beliefs: &[f64],
    symbols: &[usize],
    cons: &Constellation,
    clamp: f64,
) -> (f64, Vec<f64>) {
    let size = cons.size();
    let m = cons.bits_per_symbol();
    let mut tape = GradientTape::new();
    let leaves: Vec<Var> = log_beliefs.iter().map(|&v| tape.leaf(v)).collect();
    let mut penalties = Vec::with_capacity(symbols.len() * m);
    let mut zero = Vec::with_capacity(size);
    let mut one = Vec::with_capacity(size);
    for (k, &sent) in symbols.iter().enumerate() {
        let row = &leaves[k * size..(k + 1) * size];
        for bit in 0..m {
            zero.clear();
            one.clear();
            for (s, &v) in row.iter().enumerate() {
                if cons.label_bit(s, bit) == 0 {
                    zero.push(v);
                } else {
                    one.push(v);
                }
            }
            let l0 = tape.logsumexp(&zero);
            let l1 = tape.logsumexp(&one);
            let llr = tape.sub(l0, l1);
            let llr = tape.clamp(llr, -clamp, clamp);
            // bit 0: softplus(−L); bit 1: softplus(L)
            let sign = if cons.label_bit(sent, bit) == 0 { -1.0 } else { 1.0 };
            let arg = tape.scale(llr, sign);
            let sp = tape.softplus(arg);
            penalties.push(tape.scale(sp, 1.0 / std::f64::consts::LN_2));
        }
    }
    let total = tape.sum(&penalties);
    let grads = tape.backward(total);
    (
        tape.value(total),
        leaves.iter().map(|&v| grads.wrt(v)).collect(),
    )
}

/// Penalty sum and parameter gradients of one frame.
pub fn frame_penalty_and_gradients(
    params: &DetectorParams,
    frame: &TransmissionFrame,
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<(f64, ParamGradients)> {
    let dg = DetectorGraph::for_params(params, ch, cons, &frame.observations, frame.sigma2)?;
    let weights = dg.weights(params)?;
    let trace = spa::forward(&dg.graph, &weights)?;
    let logb = dg.symbol_log_beliefs(&trace);
    let (penalty, g_logb) = bit_penalty_and_gradient(&logb, &frame.symbols, cons, DEFAULT_LLR_CLAMP);
    let full = dg.expand_belief_gradient(&g_logb);
    let gfg = params.kind == DetectorKind::Gfg;
    let eg = spa::backward(&dg.graph, &weights, &trace, &full, gfg)?;
    let h = gfg.then(|| channel_matrix(ch, frame.block_len()));
    let chain = h.as_ref().map(|h| (h, frame.observations.as_slice()));
    let grads = dg.param_gradients(params, &eg, chain)?;
    Ok((penalty, grads))
}

fn tree_reduce(mut items: Vec<ParamGradients>) -> ParamGradients {
    while items.len() > 1 {
        let mut next = Vec::with_capacity((items.len() + 1) / 2);
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop().expect("nonempty")
}

/// Loss −BMI over a batch and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    params: &DetectorParams,
    batch: &[TransmissionFrame],
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<(f64, ParamGradients)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let results: Vec<Result<(f64, ParamGradients)>> = batch
        .par_iter()
        .map(|f| frame_penalty_and_gradients(params, f, ch, cons))
        .collect();
    let mut penalties = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for (i, r) in results.into_iter().enumerate() {
        let (p, g) = r?;
        if !p.is_finite() {
            return Err(Error::Training {
                frame: i,
                message: format!("non-finite loss {p}"),
            });
        }
        penalties.push(p);
        grads.push(g);
    }
    let symbols: usize = batch.iter().map(|f| f.block_len()).sum();
    let scale = 1.0 / symbols as f64;
    let loss = pairwise_sum(&penalties) * scale - cons.bits_per_symbol() as f64;
    let mut g = tree_reduce(grads);
    for v in g
        .edge_weights
        .iter_mut()
        .chain(g.kappa.iter_mut())
        .chain(g.lambda.iter_mut())
        .chain(g.taps.iter_mut())
    {
        *v *= scale;
    }
    if let Some((i, _)) = g.flatten().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Training {
            frame: 0,
            message: format!("non-finite gradient at parameter {i}"),
        });
    }
    Ok((loss, g))
}

/// Loss only (no reverse pass).
pub fn evaluate_loss(
    params: &DetectorParams,
    frames: &[TransmissionFrame],
    ch: &ChannelModel,
    cons: &Constellation,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let penalties: Vec<f64> = frames
        .par_iter()
        .map(|f| -> Result<f64> {
            let dg = DetectorGraph::for_params(params, ch, cons, &f.observations, f.sigma2)?;
            let trace = spa::forward(&dg.graph, &dg.weights(params)?)?;
            let llrs = crate::metrics::bmd_llrs_from_log(&dg.symbol_log_beliefs(&trace), cons, DEFAULT_LLR_CLAMP);
            Ok(pairwise_sum(&crate::metrics::bit_penalties(&llrs, &f.bits(cons))))
        })
        .collect::<Result<Vec<_>>>()?;
    let symbols: usize = frames.iter().map(|f| f.block_len()).sum();
    Ok(pairwise_sum(&penalties) / symbols as f64 - cons.bits_per_symbol() as f64)
}

/// Adam optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Argument("Adam shapes do not match".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub block_len: usize,
    pub ebn0_db: f64,
    /// Preprocessor length (GFG only).
    pub preprocessor_len: usize,
    /// Preprocessor alignment; `None` selects [`Preprocessor::default_advance`].
    pub preprocessor_advance: Option<usize>,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Frames in a fixed validation set used to pick the best parameters;
    /// 0 selects on the training-batch loss.
    pub validation_frames: usize,
    /// Steps between validation evaluations.
    pub validation_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: DEFAULT_ITERATIONS,
            block_len: 500,
            ebn0_db: 10.0,
            preprocessor_len: 7,
            preprocessor_advance: None,
            batch_size: 32,
            steps: 2000,
            learning_rate: 1e-3,
            seed: 1,
            validation_frames: 0,
            validation_every: 50,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub params: DetectorParams,
    pub log: Vec<StepRecord>,
    pub best_loss: f64,
    pub best_step: usize,
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const VALID_STREAM: u64 = 0x7661_6c69_6400_0000;

/// Initial parameters: unit weights, standard-normal preprocessor taps.
pub fn initial_params(
    kind: DetectorKind,
    ch: &ChannelModel,
    cons: &Constellation,
    config: &TrainingConfig,
) -> Result<DetectorParams> {
    let mut params = match kind {
        DetectorKind::Gfg => {
            if config.preprocessor_len == 0 {
                return Err(Error::Config("preprocessor length must be at least 1".into()));
            }
            let mut rng = frame_rng(config.seed, u64::MAX);
            let taps: Vec<f64> = (0..config.preprocessor_len)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let advance = config
                .preprocessor_advance
                .unwrap_or_else(|| Preprocessor::default_advance(config.preprocessor_len, ch.memory()));
            let pre = Preprocessor::new(taps, advance)?;
            DetectorParams::gfg(config.iterations, config.block_len, ch, cons, pre)?
        }
        _ => DetectorParams::unit(kind, config.iterations, config.block_len, ch, cons)?,
    };
    params.train_ebn0_db = Some(config.ebn0_db);
    Ok(params)
}

/// Trains a detector with Adam and returns the best parameters seen.
pub fn train(
    kind: DetectorKind,
    ch: &ChannelModel,
    cons: &Constellation,
    config: &TrainingConfig,
    mut progress: impl FnMut(&StepRecord),
) -> Result<TrainingOutcome> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut params = initial_params(kind, ch, cons, config)?;
    let sigma2 = ebn0_to_sigma2(config.ebn0_db, cons);
    let validation = if config.validation_frames > 0 {
        seeded_frames(
            ch,
            cons,
            config.block_len,
            sigma2,
            config.seed ^ VALID_STREAM,
            0,
            config.validation_frames,
        )?
    } else {
        Vec::new()
    };
    let every = config.validation_every.max(1);
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut flat = params.flatten();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        params.assign(&flat)?;
        let batch = seeded_frames(
            ch,
            cons,
            config.block_len,
            sigma2,
            config.seed ^ TRAIN_STREAM,
            (step * config.batch_size) as u64,
            config.batch_size,
        )?;
        let (loss, grads) = loss_and_gradients(&params, &batch, ch, cons).map_err(|e| match e {
            Error::Training { frame, message } => Error::Training {
                frame: step * config.batch_size + frame,
                message,
            },
            other => other,
        })?;
        let validation_loss = if !validation.is_empty() && step % every == 0 {
            Some(evaluate_loss(&params, &validation, ch, cons)?)
        } else {
            None
        };
        let score = if validation.is_empty() { Some(loss) } else { validation_loss };
        if let Some(s) = score {
            if s < best_loss {
                best_loss = s;
                best_step = step;
                best = params.clone();
            }
        }
        let record = StepRecord {
            step,
            loss,
            validation_loss,
        };
        progress(&record);
        log.push(record);
        adam_step(&mut adam, &mut flat, &grads.flatten())?;
    }
    if config.steps > 0 && !validation.is_empty() {
        params.assign(&flat)?;
        let last = evaluate_loss(&params, &validation, ch, cons)?;
        if last < best_loss {
            best_loss = last;
            best_step = config.steps;
            best = params.clone();
        }
    }
    if config.steps == 0 {
        best = params;
    }
    Ok(TrainingOutcome {
        params: best,
        log,
        best_loss,
        best_step,
    })
}

/// Training log as CSV (`step,loss,validation_loss`).
pub fn log_to_csv(log: &[StepRecord]) -> String {
    let mut s = String::from("step,loss,validation_loss\n");
    for r in log {
        let v = r.validation_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, v));
    }
    s
}
