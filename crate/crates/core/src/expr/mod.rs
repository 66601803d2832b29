//! Prefix-notation expressions over a fixed operator library plus
//! problem features: traversal bookkeeping for autoregressive sampling,
//! feasibility masks, protected evaluation, constant fitting, and the
//! squashed-NRMSE reward.
//!
//! Token ids are stable regardless of how many variables a problem
//! exposes: ids below [`VAR_BASE`] are operators and constants, id
//! `VAR_BASE + k` is the variable `x_{k+1}`.

mod optimize;
mod text;

pub use optimize::optimize_constants;
pub use text::{parse, ParseError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = usize;

pub const TOK_ADD: TokenId = 0;
pub const TOK_SUB: TokenId = 1;
pub const TOK_MUL: TokenId = 2;
pub const TOK_DIV: TokenId = 3;
pub const TOK_POW: TokenId = 4;
pub const TOK_SQRT: TokenId = 5;
pub const TOK_EXP: TokenId = 6;
pub const TOK_LOG: TokenId = 7;
pub const TOK_ONE: TokenId = 8;
pub const TOK_CONST: TokenId = 9;
pub const VAR_BASE: TokenId = 10;

/// Length bounds enforced during sampling.
pub const MIN_EXPR_LEN: usize = 4;
pub const MAX_EXPR_LEN: usize = 64;

/// Division guard for protected evaluation.
const DIV_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("token sequence is not a complete prefix traversal")]
    Incomplete,
    #[error("step on an already-complete expression")]
    StepAfterComplete,
    #[error("expression has {placeholders} constant placeholders but {given} values")]
    ConstantCount { placeholders: usize, given: usize },
    #[error("token id {0} outside the library of size {1}")]
    UnknownToken(TokenId, usize),
}

/// The token library: fixed operators/constants plus `num_vars` feature
/// variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Library {
    pub num_vars: usize,
}

impl Library {
    pub fn new(num_vars: usize) -> Self {
        assert!(num_vars >= 1, "library needs at least one variable");
        Library { num_vars }
    }

    pub fn size(&self) -> usize {
        VAR_BASE + self.num_vars
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.size()
    }

    pub fn all_ids(&self) -> impl Iterator<Item = TokenId> {
        0..self.size()
    }
}

pub fn arity(id: TokenId) -> usize {
    match id {
        TOK_ADD | TOK_SUB | TOK_MUL | TOK_DIV | TOK_POW => 2,
        TOK_SQRT | TOK_EXP | TOK_LOG => 1,
        _ => 0,
    }
}

pub fn is_binary(id: TokenId) -> bool {
    arity(id) == 2
}

pub fn is_unary(id: TokenId) -> bool {
    arity(id) == 1
}

pub fn is_terminal(id: TokenId) -> bool {
    arity(id) == 0
}

/// Constant tokens in the sense of the constant-combination rule.
pub fn is_constant(id: TokenId) -> bool {
    id == TOK_ONE || id == TOK_CONST
}

pub fn var_index(id: TokenId) -> Option<usize> {
    if id >= VAR_BASE {
        Some(id - VAR_BASE)
    } else {
        None
    }
}

/// A complete prefix expression; `constants` holds one value per
/// placeholder occurrence, in traversal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub tokens: Vec<TokenId>,
    pub constants: Vec<f64>,
}

impl Expression {
    pub fn new(tokens: Vec<TokenId>, constants: Vec<f64>) -> Result<Expression, ExprError> {
        if !is_complete_sequence(&tokens) {
            return Err(ExprError::Incomplete);
        }
        let placeholders = tokens.iter().filter(|&&t| t == TOK_CONST).count();
        if placeholders != constants.len() {
            return Err(ExprError::ConstantCount {
                placeholders,
                given: constants.len(),
            });
        }
        Ok(Expression { tokens, constants })
    }

    /// Same tokens with every placeholder set to 1.0.
    pub fn with_unit_constants(tokens: Vec<TokenId>) -> Result<Expression, ExprError> {
        let placeholders = tokens.iter().filter(|&&t| t == TOK_CONST).count();
        Expression::new(tokens, vec![1.0; placeholders])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_placeholders(&self) -> usize {
        self.constants.len()
    }

    /// Highest variable index referenced, if any.
    pub fn max_var_index(&self) -> Option<usize> {
        self.tokens.iter().filter_map(|&t| var_index(t)).max()
    }

    /// Protected evaluation; `None` marks a domain violation anywhere in
    /// the tree (division by near-zero, log/sqrt/pow out of domain, or a
    /// non-finite intermediate).
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        let mut pos = 0usize;
        let mut const_idx = 0usize;
        let v = eval_rec(&self.tokens, &self.constants, x, &mut pos, &mut const_idx)?;
        if pos != self.tokens.len() {
            return None;
        }
        Some(v)
    }

    pub fn infix(&self) -> String {
        text::to_infix(self)
    }
}

fn eval_rec(
    tokens: &[TokenId],
    constants: &[f64],
    x: &[f64],
    pos: &mut usize,
    const_idx: &mut usize,
) -> Option<f64> {
    let id = *tokens.get(*pos)?;
    *pos += 1;
    let v = match id {
        TOK_ADD | TOK_SUB | TOK_MUL | TOK_DIV | TOK_POW => {
            let a = eval_rec(tokens, constants, x, pos, const_idx)?;
            let b = eval_rec(tokens, constants, x, pos, const_idx)?;
            match id {
                TOK_ADD => a + b,
                TOK_SUB => a - b,
                TOK_MUL => a * b,
                TOK_DIV => {
                    if b.abs() < DIV_EPS {
                        return None;
                    }
                    a / b
                }
                _ => {
                    // pow(a, b) = exp(b ln a), defined for a > 0
                    if a <= 0.0 {
                        return None;
                    }
                    (b * a.ln()).exp()
                }
            }
        }
        TOK_SQRT => {
            let a = eval_rec(tokens, constants, x, pos, const_idx)?;
            if a < 0.0 {
                return None;
            }
            a.sqrt()
        }
        TOK_EXP => {
            let a = eval_rec(tokens, constants, x, pos, const_idx)?;
            a.exp()
        }
        TOK_LOG => {
            let a = eval_rec(tokens, constants, x, pos, const_idx)?;
            if a <= 0.0 {
                return None;
            }
            a.ln()
        }
        TOK_ONE => 1.0,
        TOK_CONST => {
            let v = *constants.get(*const_idx)?;
            *const_idx += 1;
            v
        }
        _ => {
            let k = var_index(id)?;
            *x.get(k)?
        }
    };
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

/// A sequence is complete when the running arity count first reaches zero
/// open slots, exactly at the end.
pub fn is_complete_sequence(tokens: &[TokenId]) -> bool {
    if tokens.is_empty() {
        return false;
    }
    let mut open = 1usize;
    for (i, &t) in tokens.iter().enumerate() {
        open = open + arity(t) - 1;
        if open == 0 {
            return i + 1 == tokens.len();
        }
    }
    false
}

// ---------------------------------------------------------------------
// Traversal state
// ---------------------------------------------------------------------

/// Prefix-traversal bookkeeping for autoregressive generation: appended
/// tokens, the remaining open operand slots, and the parent/sibling
/// context for the next position.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalState {
    tokens: Vec<TokenId>,
    open_slots: usize,
}

impl Default for TraversalState {
    fn default() -> Self {
        Self::new()
    }
}

impl TraversalState {
    pub fn new() -> Self {
        TraversalState {
            tokens: Vec::new(),
            open_slots: 1,
        }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn open_slots(&self) -> usize {
        self.open_slots
    }

    pub fn is_complete(&self) -> bool {
        !self.tokens.is_empty() && self.open_slots == 0
    }

    /// Append a token; open slots change by arity - 1.
    pub fn step(&mut self, lib: &Library, token: TokenId) -> Result<(), ExprError> {
        if !lib.contains(token) {
            return Err(ExprError::UnknownToken(token, lib.size()));
        }
        if self.is_complete() {
            return Err(ExprError::StepAfterComplete);
        }
        self.open_slots = self.open_slots + arity(token) - 1;
        self.tokens.push(token);
        Ok(())
    }

    /// Parent (last incomplete operator) and sibling (root of its
    /// already-placed first operand) for the next position. Both empty at
    /// the root; sibling empty while the parent still awaits its first
    /// operand.
    pub fn parent_sibling(&self) -> (Option<TokenId>, Option<TokenId>) {
        if self.tokens.is_empty() || self.is_complete() {
            return (None, None);
        }
        let last = *self.tokens.last().unwrap();
        if arity(last) > 0 {
            return (Some(last), None);
        }
        // backward scan: the first position where the arity balance
        // returns to zero is the last incomplete operator
        let mut count: i64 = 0;
        for i in (0..self.tokens.len()).rev() {
            count += arity(self.tokens[i]) as i64 - 1;
            if count == 0 {
                return (Some(self.tokens[i]), Some(self.tokens[i + 1]));
            }
        }
        (None, None)
    }
}

// ---------------------------------------------------------------------
// Constraint mask
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutcome {
    pub allowed: Vec<bool>,
    /// Set when every token was masked and rules had to be relaxed
    /// (last-applied first) to keep sampling alive.
    pub relaxed: bool,
}

/// Feasibility mask over the library for the next token: length bounds,
/// no binary operator with two constant operands, no exp/log directly
/// under its inverse.
pub fn constraint_mask(state: &TraversalState, lib: &Library) -> MaskOutcome {
    constraint_mask_with_bounds(state, lib, MIN_EXPR_LEN, MAX_EXPR_LEN)
}

pub fn constraint_mask_with_bounds(
    state: &TraversalState,
    lib: &Library,
    min_len: usize,
    max_len: usize,
) -> MaskOutcome {
    let used = state.len();
    let open = state.open_slots();
    let (parent, sibling) = state.parent_sibling();

    // rules are closures so relaxation can drop them in reverse order
    let rule_len = |id: TokenId| -> bool {
        // minimal completed length if this token is chosen
        if used + open + arity(id) > max_len {
            return false;
        }
        // choosing a terminal in the last open slot ends the expression
        if is_terminal(id) && open == 1 && used + 1 < min_len {
            return false;
        }
        true
    };
    let rule_const = |id: TokenId| -> bool {
        if let (Some(p), Some(s)) = (parent, sibling) {
            if is_binary(p) && is_constant(s) && is_constant(id) {
                return false;
            }
        }
        true
    };
    let rule_inverse = |id: TokenId| -> bool {
        match parent {
            Some(TOK_LOG) => id != TOK_EXP,
            Some(TOK_EXP) => id != TOK_LOG,
            _ => true,
        }
    };

    let build = |use_len: bool, use_const: bool, use_inverse: bool| -> Vec<bool> {
        lib.all_ids()
            .map(|id| {
                (!use_len || rule_len(id))
                    && (!use_const || rule_const(id))
                    && (!use_inverse || rule_inverse(id))
            })
            .collect()
    };

    let full = build(true, true, true);
    if full.iter().any(|&a| a) {
        return MaskOutcome {
            allowed: full,
            relaxed: false,
        };
    }
    // relax last-in-first-out: inverse rule, then constants, then length
    for (use_len, use_const) in [(true, true), (true, false), (false, false)] {
        let m = build(use_len, use_const, false);
        if m.iter().any(|&a| a) {
            log::warn!("constraint mask emptied; relaxed rules to continue");
            return MaskOutcome {
                allowed: m,
                relaxed: true,
            };
        }
    }
    MaskOutcome {
        allowed: vec![true; lib.size()],
        relaxed: true,
    }
}

// ---------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEval {
    pub reward: f64,
    /// NRMSE when every prediction was valid and the targets are not
    /// degenerate.
    pub nrmse: Option<f64>,
    pub invalid: bool,
    /// Target standard deviation was zero (or fewer than two rows).
    pub degenerate: bool,
}

/// R = 1 / (1 + NRMSE) with NRMSE = RMSE / sigma_y (population
/// convention). Any invalid prediction zeroes the reward.
pub fn reward_detailed(expr: &Expression, features: &[Vec<f64>], targets: &[f64]) -> RewardEval {
    debug_assert_eq!(features.len(), targets.len());
    let n = targets.len();
    if n < 2 {
        return RewardEval {
            reward: 0.0,
            nrmse: None,
            invalid: false,
            degenerate: true,
        };
    }
    let mean = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return RewardEval {
            reward: 0.0,
            nrmse: None,
            invalid: false,
            degenerate: true,
        };
    }
    let mut sq_sum = 0.0;
    for (x, &y) in features.iter().zip(targets) {
        match expr.eval(x) {
            Some(pred) => {
                let d = pred - y;
                sq_sum += d * d;
            }
            None => {
                return RewardEval {
                    reward: 0.0,
                    nrmse: None,
                    invalid: true,
                    degenerate: false,
                }
            }
        }
    }
    let nrmse = (sq_sum / n as f64).sqrt() / sigma;
    if !nrmse.is_finite() {
        return RewardEval {
            reward: 0.0,
            nrmse: None,
            invalid: true,
            degenerate: false,
        };
    }
    RewardEval {
        reward: 1.0 / (1.0 + nrmse),
        nrmse: Some(nrmse),
        invalid: false,
        degenerate: false,
    }
}

pub fn reward(expr: &Expression, features: &[Vec<f64>], targets: &[f64]) -> f64 {
    reward_detailed(expr, features, targets).reward
}

// ---------------------------------------------------------------------
// Expression files
// ---------------------------------------------------------------------

/// On-disk expression format. The token/constant arrays are canonical;
/// the infix string is display-only and regenerated on write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFile {
    pub tokens: Vec<TokenId>,
    pub constants: Vec<f64>,
    pub infix: String,
}

pub fn write_expression_json(
    path: &std::path::Path,
    expr: &Expression,
) -> std::io::Result<()> {
    let artifact = ExpressionFile {
        tokens: expr.tokens.clone(),
        constants: expr.constants.clone(),
        infix: expr.infix(),
    };
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, &artifact).map_err(std::io::Error::other)
}

pub fn read_expression_json(path: &std::path::Path) -> std::io::Result<Expression> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let artifact: ExpressionFile =
        serde_json::from_reader(f).map_err(std::io::Error::other)?;
    Expression::new(artifact.tokens, artifact.constants)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}
