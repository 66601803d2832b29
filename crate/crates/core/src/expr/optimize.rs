//! Derivative-free fitting of constant placeholders: Nelder-Mead simplex
//! descent on the NRMSE over a dataset, started from all-ones.

use super::{Expression, TOK_CONST};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// NRMSE of the expression with the given constants; infinite when any
/// row evaluates invalid (stops the row loop early).
fn nrmse_with(
    tokens: &[usize],
    constants: &[f64],
    features: &[Vec<f64>],
    targets: &[f64],
    sigma: f64,
) -> f64 {
    let e = Expression {
        tokens: tokens.to_vec(),
        constants: constants.to_vec(),
    };
    let mut sq = 0.0;
    for (x, &y) in features.iter().zip(targets) {
        match e.eval(x) {
            Some(p) => {
                let d = p - y;
                sq += d * d;
            }
            None => return f64::INFINITY,
        }
    }
    let v = (sq / targets.len() as f64).sqrt() / sigma;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Fit the constant placeholders of `expr` to the data by simplex
/// descent, at most `max_iters` reflection cycles. Placeholders start at
/// 1.0; the best visited point is returned, so the result never scores
/// worse than that start. Expressions without placeholders, degenerate
/// targets, and all-invalid landscapes come back unchanged.
pub fn optimize_constants(
    expr: &Expression,
    features: &[Vec<f64>],
    targets: &[f64],
    max_iters: usize,
) -> Expression {
    let k = expr.tokens.iter().filter(|&&t| t == TOK_CONST).count();
    if k == 0 || targets.len() < 2 {
        return expr.clone();
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / targets.len() as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return expr.clone();
    }
    let f = |c: &[f64]| nrmse_with(&expr.tokens, c, features, targets, sigma);

    // initial simplex around the all-ones start
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    simplex.push(vec![1.0; k]);
    for i in 0..k {
        let mut v = vec![1.0; k];
        v[i] += 0.25;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    if values.iter().all(|v| v.is_infinite()) {
        return expr.clone();
    }

    let order = |simplex: &mut Vec<Vec<f64>>, values: &mut Vec<f64>| {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let new_s: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let new_v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        *simplex = new_s;
        *values = new_v;
    };
    order(&mut simplex, &mut values);

    for _ in 0..max_iters {
        if values[0] < 1e-14 {
            break;
        }
        // flat simplex: nothing left to gain
        let worst_finite = values.iter().rev().find(|v| v.is_finite()).copied();
        if let Some(wf) = worst_finite {
            if (wf - values[0]).abs() <= 1e-12 * (1.0 + values[0]) {
                break;
            }
        }
        let n = k;
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected: Vec<f64> = (0..n)
            .map(|d| centroid[d] + REFLECT * (centroid[d] - worst[d]))
            .collect();
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded: Vec<f64> = (0..n)
                .map(|d| centroid[d] + EXPAND * (reflected[d] - centroid[d]))
                .collect();
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted: Vec<f64> = (0..n)
                .map(|d| centroid[d] + CONTRACT * (worst[d] - centroid[d]))
                .collect();
            let fc = f(&contracted);
            if fc < values[n] {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..n {
                        v[d] = best[d] + SHRINK * (v[d] - best[d]);
                    }
                }
                // recompute shrunk vertices
                for i in 1..=n {
                    values[i] = f(&simplex[i]);
                }
            }
        }
        order(&mut simplex, &mut values);
    }

    if values[0].is_finite() {
        Expression {
            tokens: expr.tokens.clone(),
            constants: simplex[0].clone(),
        }
    } else {
        expr.clone()
    }
}
