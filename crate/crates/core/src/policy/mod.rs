//! Recurrent policy over expression tokens and the risk-seeking
//! training loop.
//!
//! The model embeds the (parent, sibling) context of the next tree slot,
//! feeds it through one LSTM layer, and projects to token logits. The
//! feasibility mask from [`crate::expr`] zeroes illegal tokens before the
//! categorical draw. Training maximizes the reward conditioned on
//! exceeding the batch (1-eps)-quantile, plus an entropy bonus, by plain
//! gradient ascent; all gradients come from manual backprop through time.

mod lstm;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::ParamDataset;
use crate::derive_seed;
use crate::expr::{
    arity, constraint_mask_with_bounds, optimize_constants, reward_detailed, Expression, Library,
    TokenId, TraversalState, MAX_EXPR_LEN, MIN_EXPR_LEN,
};
use crate::par;
use lstm::{lstm_backward, lstm_forward, LstmGrad, LstmParams, LstmStep};

// ---------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------

/// Policy parameters. The embedding table has one extra row (index
/// `library.size()`) for the empty parent/sibling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub library: Library,
    pub embed_dim: usize,
    pub hidden: usize,
    /// (|L|+1) x E.
    pub embedding: Vec<f64>,
    pub lstm: LstmParams,
    /// |L| x H.
    pub w_out: Vec<f64>,
    /// |L|.
    pub b_out: Vec<f64>,
}

impl PolicyModel {
    pub fn zeros(library: Library, embed_dim: usize, hidden: usize) -> Self {
        PolicyModel {
            library,
            embed_dim,
            hidden,
            embedding: vec![0.0; (library.size() + 1) * embed_dim],
            lstm: LstmParams::zeros(2 * embed_dim, hidden),
            w_out: vec![0.0; library.size() * hidden],
            b_out: vec![0.0; library.size()],
        }
    }

    /// Small-uniform initialization in [-scale, scale].
    pub fn new_seeded(
        library: Library,
        embed_dim: usize,
        hidden: usize,
        scale: f64,
        seed: u64,
    ) -> Self {
        let mut m = Self::zeros(library, embed_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in [
            &mut m.embedding,
            &mut m.lstm.w_ih,
            &mut m.lstm.w_hh,
            &mut m.lstm.bias,
            &mut m.w_out,
            &mut m.b_out,
        ] {
            for v in block.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        m
    }

    fn empty_id(&self) -> usize {
        self.library.size()
    }

    fn embed_of(&self, id: usize) -> &[f64] {
        &self.embedding[id * self.embed_dim..(id + 1) * self.embed_dim]
    }

    fn context_input(&self, parent: Option<TokenId>, sibling: Option<TokenId>) -> Vec<f64> {
        let p = parent.unwrap_or(self.empty_id());
        let s = sibling.unwrap_or(self.empty_id());
        let mut x = Vec::with_capacity(2 * self.embed_dim);
        x.extend_from_slice(self.embed_of(p));
        x.extend_from_slice(self.embed_of(s));
        x
    }

    pub fn param_count(&self) -> usize {
        self.embedding.len()
            + self.lstm.w_ih.len()
            + self.lstm.w_hh.len()
            + self.lstm.bias.len()
            + self.w_out.len()
            + self.b_out.len()
    }

    fn blocks(&self) -> [&Vec<f64>; 6] {
        [
            &self.embedding,
            &self.lstm.w_ih,
            &self.lstm.w_hh,
            &self.lstm.bias,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.embedding,
            &mut self.lstm.w_ih,
            &mut self.lstm.w_hh,
            &mut self.lstm.bias,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// Flat parameter view in block order (embedding, w_ih, w_hh, bias,
    /// w_out, b_out); used by finite-difference checks.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for b in self.blocks() {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for b in self.blocks_mut() {
            if idx < b.len() {
                b[idx] = v;
                return;
            }
            idx -= b.len();
        }
        panic!("flat index out of range");
    }

    /// theta += lr * grad.
    pub fn ascend(&mut self, grad: &PolicyGrad, lr: f64) {
        let gb = [
            &grad.embedding,
            &grad.w_ih,
            &grad.w_hh,
            &grad.bias,
            &grad.w_out,
            &grad.b_out,
        ];
        for (dst, src) in self.blocks_mut().into_iter().zip(gb) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += lr * s;
            }
        }
    }
}

/// Gradient with the same shapes as [`PolicyModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub embedding: Vec<f64>,
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(model: &PolicyModel) -> Self {
        PolicyGrad {
            embedding: vec![0.0; model.embedding.len()],
            w_ih: vec![0.0; model.lstm.w_ih.len()],
            w_hh: vec![0.0; model.lstm.w_hh.len()],
            bias: vec![0.0; model.lstm.bias.len()],
            w_out: vec![0.0; model.w_out.len()],
            b_out: vec![0.0; model.b_out.len()],
        }
    }

    pub fn add(&mut self, other: &PolicyGrad) {
        for (dst, src) in [
            (&mut self.embedding, &other.embedding),
            (&mut self.w_ih, &other.w_ih),
            (&mut self.w_hh, &other.w_hh),
            (&mut self.bias, &other.bias),
            (&mut self.w_out, &other.w_out),
            (&mut self.b_out, &other.b_out),
        ] {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in [
            &self.embedding,
            &self.w_ih,
            &self.w_hh,
            &self.bias,
            &self.w_out,
            &self.b_out,
        ] {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&v| v == 0.0)
    }
}

// ---------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    /// Count of steps where the constraint mask had to be relaxed.
    pub relaxed_steps: usize,
}

struct StepEval {
    parent: usize,
    sibling: usize,
    lstm: LstmStep,
    allowed: Vec<bool>,
    /// Masked log-softmax; meaningful only where allowed.
    logp: Vec<f64>,
}

/// One step of the shared forward path.
fn eval_step(
    model: &PolicyModel,
    state: &TraversalState,
    h: &[f64],
    c: &[f64],
    min_len: usize,
    max_len: usize,
) -> (StepEval, bool) {
    let (parent, sibling) = state.parent_sibling();
    let x = model.context_input(parent, sibling);
    let step = lstm_forward(&model.lstm, &x, h, c);
    let nl = model.library.size();
    let mut logits = vec![0.0; nl];
    for (i, l) in logits.iter_mut().enumerate() {
        let row = &model.w_out[i * model.hidden..(i + 1) * model.hidden];
        let mut acc = model.b_out[i];
        for (w, hv) in row.iter().zip(&step.h) {
            acc += w * hv;
        }
        *l = acc;
    }
    let mask = constraint_mask_with_bounds(state, &model.library, min_len, max_len);
    let mut mx = f64::NEG_INFINITY;
    for i in 0..nl {
        if mask.allowed[i] && logits[i] > mx {
            mx = logits[i];
        }
    }
    let mut lse = 0.0;
    for i in 0..nl {
        if mask.allowed[i] {
            lse += (logits[i] - mx).exp();
        }
    }
    let lse = mx + lse.ln();
    let logp: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
    let relaxed = mask.relaxed;
    (
        StepEval {
            parent: parent.unwrap_or(model.empty_id()),
            sibling: sibling.unwrap_or(model.empty_id()),
            lstm: step,
            allowed: mask.allowed,
            logp,
        },
        relaxed,
    )
}

/// Autoregressive rollout under the constraint mask; the mask's length
/// budget guarantees termination by `max_len`.
pub fn sample_expression_bounded(
    model: &PolicyModel,
    rng: &mut ChaCha8Rng,
    min_len: usize,
    max_len: usize,
) -> Rollout {
    let mut state = TraversalState::new();
    let mut h = vec![0.0; model.hidden];
    let mut c = vec![0.0; model.hidden];
    let mut log_prob = 0.0;
    let mut relaxed_steps = 0;
    while !state.is_complete() {
        let (eval, relaxed) = eval_step(model, &state, &h, &c, min_len, max_len);
        if relaxed {
            relaxed_steps += 1;
        }
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        let mut chosen = None;
        for i in 0..model.library.size() {
            if eval.allowed[i] {
                acc += eval.logp[i].exp();
                if u < acc {
                    chosen = Some(i);
                    break;
                }
            }
        }
        // rounding may leave a sliver above the last cumulative bucket
        let chosen = chosen.unwrap_or_else(|| {
            (0..model.library.size())
                .rev()
                .find(|&i| eval.allowed[i])
                .expect("mask never empties")
        });
        log_prob += eval.logp[chosen];
        h = eval.lstm.h.clone();
        c = eval.lstm.c.clone();
        state
            .step(&model.library, chosen)
            .expect("sampled token is legal");
    }
    Rollout {
        tokens: state.tokens().to_vec(),
        log_prob,
        relaxed_steps,
    }
}

pub fn sample_expression(model: &PolicyModel, rng: &mut ChaCha8Rng) -> Rollout {
    sample_expression_bounded(model, rng, MIN_EXPR_LEN, MAX_EXPR_LEN)
}

/// Replay a fixed token sequence and return its log-probability under
/// the current parameters (masks are reconstructed from the prefix, so
/// they match the sampling-time masks).
pub fn log_prob_of(model: &PolicyModel, tokens: &[TokenId]) -> f64 {
    log_prob_of_bounded(model, tokens, MIN_EXPR_LEN, MAX_EXPR_LEN)
}

pub fn log_prob_of_bounded(
    model: &PolicyModel,
    tokens: &[TokenId],
    min_len: usize,
    max_len: usize,
) -> f64 {
    let mut state = TraversalState::new();
    let mut h = vec![0.0; model.hidden];
    let mut c = vec![0.0; model.hidden];
    let mut total = 0.0;
    for &t in tokens {
        let (eval, _) = eval_step(model, &state, &h, &c, min_len, max_len);
        total += eval.logp[t];
        h = eval.lstm.h.clone();
        c = eval.lstm.c.clone();
        state.step(&model.library, t).expect("token in library");
    }
    total
}

/// Per-step entropies of the masked categorical distributions along a
/// fixed rollout.
pub fn rollout_entropies(model: &PolicyModel, tokens: &[TokenId]) -> Vec<f64> {
    let mut state = TraversalState::new();
    let mut h = vec![0.0; model.hidden];
    let mut c = vec![0.0; model.hidden];
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let (eval, _) = eval_step(model, &state, &h, &c, MIN_EXPR_LEN, MAX_EXPR_LEN);
        let mut ent = 0.0;
        for i in 0..model.library.size() {
            if eval.allowed[i] {
                let p = eval.logp[i].exp();
                if p > 0.0 {
                    ent -= p * eval.logp[i];
                }
            }
        }
        out.push(ent);
        h = eval.lstm.h.clone();
        c = eval.lstm.c.clone();
        state.step(&model.library, t).expect("token in library");
    }
    out
}

/// Backprop through time along one rollout, accumulating
/// `coef_logp * grad(log p(tau))` plus `coef_entropy * grad(sum_t H_t)`.
pub fn backward_rollout(
    model: &PolicyModel,
    tokens: &[TokenId],
    coef_logp: f64,
    coef_entropy: f64,
    min_len: usize,
    max_len: usize,
) -> PolicyGrad {
    let mut grad = PolicyGrad::zeros(model);
    if coef_logp == 0.0 && coef_entropy == 0.0 {
        return grad;
    }
    // forward pass with cached activations
    let mut state = TraversalState::new();
    let mut h = vec![0.0; model.hidden];
    let mut c = vec![0.0; model.hidden];
    let mut steps: Vec<StepEval> = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let (eval, _) = eval_step(model, &state, &h, &c, min_len, max_len);
        h = eval.lstm.h.clone();
        c = eval.lstm.c.clone();
        steps.push(eval);
        state.step(&model.library, t).expect("token in library");
    }

    let nl = model.library.size();
    let hn = model.hidden;
    let mut lstm_grad = LstmGrad::zeros(&model.lstm);
    let mut dh_next = vec![0.0; hn];
    let mut dc_next = vec![0.0; hn];
    let mut dx = vec![0.0; 2 * model.embed_dim];
    for (t, eval) in steps.iter().enumerate().rev() {
        let chosen = tokens[t];
        // distribution and entropy at this step
        let mut probs = vec![0.0; nl];
        let mut entropy = 0.0;
        for i in 0..nl {
            if eval.allowed[i] {
                let p = eval.logp[i].exp();
                probs[i] = p;
                if p > 0.0 {
                    entropy -= p * eval.logp[i];
                }
            }
        }
        let mut dlogits = vec![0.0; nl];
        for i in 0..nl {
            if !eval.allowed[i] {
                continue;
            }
            let indicator = if i == chosen { 1.0 } else { 0.0 };
            let mut d = coef_logp * (indicator - probs[i]);
            if coef_entropy != 0.0 && probs[i] > 0.0 {
                d -= coef_entropy * probs[i] * (eval.logp[i] + entropy);
            }
            dlogits[i] = d;
        }
        // output projection
        let mut dh = dh_next.clone();
        for i in 0..nl {
            let d = dlogits[i];
            if d == 0.0 {
                continue;
            }
            let row = &model.w_out[i * hn..(i + 1) * hn];
            let grow = &mut grad.w_out[i * hn..(i + 1) * hn];
            for k in 0..hn {
                grow[k] += d * eval.lstm.h[k];
                dh[k] += d * row[k];
            }
            grad.b_out[i] += d;
        }
        let (dh_prev, dc_prev) =
            lstm_backward(&model.lstm, &eval.lstm, &dh, &dc_next, &mut lstm_grad, &mut dx);
        let e = model.embed_dim;
        let pe = &mut grad.embedding[eval.parent * e..(eval.parent + 1) * e];
        for k in 0..e {
            pe[k] += dx[k];
        }
        let se = &mut grad.embedding[eval.sibling * e..(eval.sibling + 1) * e];
        for k in 0..e {
            se[k] += dx[e + k];
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    grad.w_ih = lstm_grad.w_ih;
    grad.w_hh = lstm_grad.w_hh;
    grad.bias = lstm_grad.bias;
    grad
}

/// Gradient of log p(tau) alone.
pub fn grad_log_prob(model: &PolicyModel, tokens: &[TokenId]) -> PolicyGrad {
    backward_rollout(model, tokens, 1.0, 0.0, MIN_EXPR_LEN, MAX_EXPR_LEN)
}

// ---------------------------------------------------------------------
// Risk-seeking estimator pieces
// ---------------------------------------------------------------------

/// Empirical (1-eps)-quantile: the ascending order statistic at index
/// ceil((1-eps) N), 1-based and clamped into [1, N]. With eps = 1 this
/// degenerates to the batch minimum.
pub fn empirical_quantile(rewards: &[f64], epsilon: f64) -> f64 {
    assert!(!rewards.is_empty());
    let n = rewards.len();
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((1.0 - epsilon) * n as f64).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// Per-sample weights of the Monte Carlo gradient estimator:
/// (R - q) / (eps N) for strictly-elite samples, zero otherwise.
pub fn risk_gradient_coefficients(rewards: &[f64], quantile: f64, epsilon: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    rewards
        .iter()
        .map(|&r| {
            if r > quantile {
                (r - quantile) / (epsilon * n)
            } else {
                0.0
            }
        })
        .collect()
}

/// Risk-seeking REINFORCE gradient over a batch of rollouts with their
/// (post-constant-optimization) rewards. Empty elite set gives zeros.
pub fn risk_seeking_gradient(
    model: &PolicyModel,
    batch: &[Rollout],
    rewards: &[f64],
    quantile: f64,
    epsilon: f64,
) -> PolicyGrad {
    let coefs = risk_gradient_coefficients(rewards, quantile, epsilon);
    let parts = par::map_indices(batch.len(), |i| {
        if coefs[i] == 0.0 {
            None
        } else {
            Some(backward_rollout(
                model,
                &batch[i].tokens,
                coefs[i],
                0.0,
                MIN_EXPR_LEN,
                MAX_EXPR_LEN,
            ))
        }
    });
    let mut total = PolicyGrad::zeros(model);
    for p in parts.into_iter().flatten() {
        total.add(&p);
    }
    total
}

/// Gradient of `weight * mean per-step entropy` over the batch (the mean
/// runs over every step of every rollout).
pub fn entropy_gradient(model: &PolicyModel, batch: &[Rollout], weight: f64) -> PolicyGrad {
    let total_steps: usize = batch.iter().map(|r| r.tokens.len()).sum();
    let mut total = PolicyGrad::zeros(model);
    if weight == 0.0 || total_steps == 0 {
        return total;
    }
    let coef = weight / total_steps as f64;
    let parts = par::map_slice(batch, |r| {
        backward_rollout(model, &r.tokens, 0.0, coef, MIN_EXPR_LEN, MAX_EXPR_LEN)
    });
    for p in &parts {
        total.add(p);
    }
    total
}

// ---------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstOptMode {
    /// Fit constants in every sampled expression (default).
    All,
    /// Fit constants only in the provisional elite (cheaper on small
    /// machines; the shortlist is picked by unit-constant rewards).
    EliteOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_samples: usize,
    pub risk_factor: f64,
    pub learning_rate: f64,
    pub entropy_weight: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub const_opt_iters: usize,
    pub const_opt_mode: ConstOptMode,
    /// Stop once the best reward reaches this value (exact fits).
    pub early_stop_reward: f64,
}

impl TrainConfig {
    /// Full-scale defaults: batch 1000, 2M samples, eps 0.05, lr 5e-4,
    /// entropy weight 0.03, one 32-unit LSTM layer.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            batch_size: 1000,
            total_samples: 2_000_000,
            risk_factor: 0.05,
            learning_rate: 0.0005,
            entropy_weight: 0.03,
            seed,
            embed_dim: 8,
            hidden: 32,
            min_len: MIN_EXPR_LEN,
            max_len: MAX_EXPR_LEN,
            const_opt_iters: 200,
            const_opt_mode: ConstOptMode::All,
            early_stop_reward: 1.0,
        }
    }

    /// Scaled-down preset for CPU desk runs: batch 200, 100k samples.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            batch_size: 200,
            total_samples: 100_000,
            ..Self::paper(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub best_reward: f64,
    pub mean_reward: f64,
    pub quantile: f64,
    pub best_infix: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,best_R,mean_R,quantile,best_expr_infix")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},\"{}\"",
                r.iter, r.best_reward, r.mean_reward, r.quantile, r.best_infix
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best: Expression,
    pub best_reward: f64,
    pub iterations: usize,
    pub samples_used: usize,
    pub trace: TrainTrace,
    /// NRMSE / reward of the best expression on the held-out split, when
    /// one was provided.
    pub test_nrmse: Option<f64>,
    pub test_reward: Option<f64>,
}

/// Serialized training state: parameter arrays, config, and the sampling
/// position (master seed lives in the config; with the next iteration it
/// regenerates every rollout stream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: PolicyModel,
    pub config: TrainConfig,
    pub next_iteration: usize,
}

pub fn save_checkpoint(path: &std::path::Path, ckpt: &Checkpoint) -> std::io::Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, ckpt).map_err(std::io::Error::other)
}

pub fn load_checkpoint(path: &std::path::Path) -> std::io::Result<Checkpoint> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    serde_json::from_reader(f).map_err(std::io::Error::other)
}

/// Train on explicit feature/target rows; returns the best expression by
/// training reward along with the per-iteration trace, plus the final
/// model for checkpointing.
pub fn train_on_rows(
    features: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
) -> (TrainReport, PolicyModel) {
    assert_eq!(features.len(), targets.len());
    assert!(!features.is_empty(), "training set is empty");
    let num_vars = features[0].len();
    let lib = Library::new(num_vars);
    let mut model = PolicyModel::new_seeded(
        lib,
        cfg.embed_dim,
        cfg.hidden,
        0.08,
        derive_seed(cfg.seed, 0),
    );
    let iters = (cfg.total_samples / cfg.batch_size).max(1);
    let batch = cfg.batch_size;
    let mut best: Option<(f64, Expression)> = None;
    let mut trace = TrainTrace::default();
    let mut samples_used = 0usize;
    let mut iterations = 0usize;

    for iter in 0..iters {
        // sample the batch; per-rollout RNG streams keep results
        // independent of scheduling
        let seeds: Vec<u64> = (0..batch)
            .map(|i| derive_seed(cfg.seed, 1 + (iter * batch + i) as u64))
            .collect();
        let rollouts: Vec<Rollout> = par::map_slice(&seeds, |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(*s);
            sample_expression_bounded(&model, &mut rng, cfg.min_len, cfg.max_len)
        });
        samples_used += batch;
        iterations = iter + 1;

        // constant optimization then rewards
        let exprs: Vec<Expression> = rollouts
            .iter()
            .map(|r| Expression::with_unit_constants(r.tokens.clone()).expect("rollout complete"))
            .collect();
        let optimize_flags: Vec<bool> = match cfg.const_opt_mode {
            ConstOptMode::All => vec![true; batch],
            ConstOptMode::EliteOnly => {
                let base: Vec<f64> =
                    par::map_slice(&exprs, |e| crate::expr::reward(e, features, targets));
                let q = empirical_quantile(&base, cfg.risk_factor);
                base.iter().map(|&r| r >= q).collect()
            }
        };
        let fitted: Vec<Expression> = par::map_indices(batch, |i| {
            if optimize_flags[i] && exprs[i].num_placeholders() > 0 {
                optimize_constants(&exprs[i], features, targets, cfg.const_opt_iters)
            } else {
                exprs[i].clone()
            }
        });
        let rewards: Vec<f64> =
            par::map_slice(&fitted, |e| crate::expr::reward(e, features, targets));

        // quantile, elite + entropy gradients (fused per rollout), ascent
        let quantile = empirical_quantile(&rewards, cfg.risk_factor);
        let total_steps: usize = rollouts.iter().map(|r| r.tokens.len()).sum();
        let ent_coef = if total_steps > 0 {
            cfg.entropy_weight / total_steps as f64
        } else {
            0.0
        };
        let coefs = risk_gradient_coefficients(&rewards, quantile, cfg.risk_factor);
        let parts = par::map_indices(batch, |i| {
            if coefs[i] == 0.0 && ent_coef == 0.0 {
                None
            } else {
                Some(backward_rollout(
                    &model,
                    &rollouts[i].tokens,
                    coefs[i],
                    ent_coef,
                    cfg.min_len,
                    cfg.max_len,
                ))
            }
        });
        let mut grad = PolicyGrad::zeros(&model);
        for p in parts.into_iter().flatten() {
            grad.add(&p);
        }
        model.ascend(&grad, cfg.learning_rate);

        // bookkeeping
        let mean_reward = rewards.iter().sum::<f64>() / batch as f64;
        let mut best_idx = 0;
        for i in 1..batch {
            if rewards[i] > rewards[best_idx] {
                best_idx = i;
            }
        }
        if best.is_none() || rewards[best_idx] > best.as_ref().unwrap().0 {
            best = Some((rewards[best_idx], fitted[best_idx].clone()));
        }
        let (best_r, best_e) = best.as_ref().unwrap();
        trace.rows.push(TraceRow {
            iter,
            best_reward: *best_r,
            mean_reward,
            quantile,
            best_infix: best_e.infix(),
        });
        if *best_r >= cfg.early_stop_reward {
            break;
        }
    }

    let (best_reward, best_expr) = best.expect("at least one iteration ran");
    (
        TrainReport {
            best: best_expr,
            best_reward,
            iterations,
            samples_used,
            trace,
            test_nrmse: None,
            test_reward: None,
        },
        model,
    )
}

/// Train on a dataset's train split and score the winner on its test
/// split.
pub fn train(dataset: &ParamDataset, cfg: &TrainConfig) -> (TrainReport, PolicyModel) {
    let (fx, fy) = dataset.rows_at(&dataset.train_indices);
    let (mut report, model) = train_on_rows(&fx, &fy, cfg);
    if !dataset.test_indices.is_empty() {
        let (tx, ty) = dataset.rows_at(&dataset.test_indices);
        let ev = reward_detailed(&report.best, &tx, &ty);
        report.test_nrmse = ev.nrmse;
        report.test_reward = Some(ev.reward);
    }
    (report, model)
}

/// Structural sanity for sampled sequences; testing helper.
pub fn sequence_is_well_formed(tokens: &[TokenId]) -> bool {
    crate::expr::is_complete_sequence(tokens) && tokens.iter().all(|&t| arity(t) <= 2)
}
