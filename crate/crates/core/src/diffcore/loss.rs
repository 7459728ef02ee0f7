//! Rényi divergence `D_α(target ‖ predicted)` used as the training loss.
//!
//! `α = 1` is the Kullback–Leibler limit, which for one-hot targets is the
//! cross-entropy. Predicted probabilities below [`CLAMP_EPS`] are lifted to it
//! so the loss stays finite; each lift is counted as a clamp event.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub clamp_events: usize,
}

fn normalized_target(target: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = target.iter().sum();
    if !(total > 0.0) || target.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidArgument(
            "target must be non-negative with positive mass".into(),
        ));
    }
    Ok(target.iter().map(|t| t / total).collect())
}

/// Single-head divergence. A multi-hot target is normalized to a distribution.
pub fn renyi_loss(predicted: &[f64], target: &[f64], alpha: f64) -> Result<Divergence> {
    if predicted.len() != target.len() {
        return Err(Error::WidthMismatch {
            expected: target.len(),
            got: predicted.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let mass: f64 = predicted.iter().sum();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "predicted distribution sums to {mass}"
        )));
    }
    let t = normalized_target(target)?;
    let mut clamp_events = 0;
    let mut p_of = |p: f64| {
        if p < CLAMP_EPS {
            clamp_events += 1;
            CLAMP_EPS
        } else {
            p
        }
    };
    let value = if alpha == 1.0 {
        let mut acc = 0.0;
        for (&ti, &pi) in t.iter().zip(predicted) {
            if ti > 0.0 {
                acc += ti * (ti.ln() - p_of(pi).ln());
            }
        }
        acc
    } else {
        let mut acc = 0.0;
        for (&ti, &pi) in t.iter().zip(predicted) {
            if ti > 0.0 {
                acc += ti.powf(alpha) * p_of(pi).powf(1.0 - alpha);
            }
        }
        acc.ln() / (alpha - 1.0)
    };
    Ok(Divergence {
        value: value.max(0.0),
        clamp_events,
    })
}

/// Sum of per-head divergences (multi-label outputs).
pub fn renyi_loss_heads(heads: &[(&[f64], &[f64])], alpha: f64) -> Result<Divergence> {
    let mut out = Divergence {
        value: 0.0,
        clamp_events: 0,
    };
    for (p, t) in heads {
        let d = renyi_loss(p, t, alpha)?;
        out.value += d.value;
        out.clamp_events += d.clamp_events;
    }
    Ok(out)
}

/// Records the divergence on a tape.
///
/// Returns the loss node and the predicted nodes that enter the loss; after
/// `forward`, [`clamp_count`] reports how many of them were lifted to `ε`.
pub fn renyi_loss_tape(
    tape: &mut Tape,
    predicted: &[Var],
    target: &[f64],
    alpha: f64,
) -> Result<(Var, Vec<Var>)> {
    if predicted.len() != target.len() {
        return Err(Error::WidthMismatch {
            expected: target.len(),
            got: predicted.len(),
        });
    }
    let t = normalized_target(target)?;
    let eps = tape.constant(CLAMP_EPS);
    let mut watched = Vec::new();
    let mut terms = Vec::new();
    for (&ti, &p) in t.iter().zip(predicted) {
        if ti <= 0.0 {
            continue;
        }
        watched.push(p);
        let pc = tape.max(p, eps);
        let lp = tape.log(pc);
        if alpha == 1.0 {
            let k = tape.constant(-ti);
            let term = tape.mul(k, lp);
            let entropy = tape.constant(ti * ti.ln());
            terms.push(tape.add(term, entropy));
        } else {
            let k = tape.constant(1.0 - alpha);
            let scaled = tape.mul(k, lp);
            let pw = tape.exp(scaled);
            let w = tape.constant(ti.powf(alpha));
            terms.push(tape.mul(w, pw));
        }
    }
    let total = tape.sum(&terms);
    let loss = if alpha == 1.0 {
        total
    } else {
        let l = tape.log(total);
        let k = tape.constant(1.0 / (alpha - 1.0));
        tape.mul(k, l)
    };
    Ok((loss, watched))
}

pub fn clamp_count(tape: &Tape, watched: &[Var]) -> usize {
    watched
        .iter()
        .filter(|&&v| tape.value(v) < CLAMP_EPS)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;

    #[test]
    fn identical_distributions_have_zero_loss() {
        for alpha in [0.5, 1.0, 2.0, 3.0] {
            let d = renyi_loss(&[1.0, 0.0], &[1.0, 0.0], alpha).unwrap();
            assert!(d.value.abs() < 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn kl_limit_is_cross_entropy() {
        let d = renyi_loss(&[0.5, 0.5], &[1.0, 0.0], 1.0).unwrap();
        assert!((d.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn order_two_matches_hand_value() {
        // (1/(2-1)) ln(1^2 * 0.5^-1) = ln 2
        let d = renyi_loss(&[0.5, 0.5], &[1.0, 0.0], 2.0).unwrap();
        assert!((d.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_on_target_is_clamped() {
        let d = renyi_loss(&[0.0, 1.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(d.clamp_events, 1);
        assert!((d.value + CLAMP_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn unnormalized_prediction_is_rejected() {
        assert!(renyi_loss(&[0.5, 0.6], &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn heads_are_summed() {
        let a: &[f64] = &[0.5, 0.5];
        let t: &[f64] = &[1.0, 0.0];
        let d = renyi_loss_heads(&[(a, t), (a, t)], 1.0).unwrap();
        assert!((d.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn tape_loss_agrees_with_direct_evaluation() {
        for alpha in [1.0, 2.0, 0.5] {
            let mut tape = Tape::new();
            let a = tape.input(0);
            let b = tape.input(1);
            let c = tape.input(2);
            let p = tape.softmax(&[a, b, c]);
            let (loss, watched) = renyi_loss_tape(&mut tape, &p, &[0.0, 1.0, 1.0], alpha).unwrap();
            tape.output(loss);
            for o in &p {
                tape.output(*o);
            }
            let out = tape.forward(&[0.3, -1.2, 0.4], &ParamStore::new()).unwrap();
            let direct = renyi_loss(&out[1..], &[0.0, 1.0, 1.0], alpha).unwrap();
            assert!((out[0] - direct.value).abs() < 1e-12);
            assert_eq!(clamp_count(&tape, &watched), 0);
        }
    }
}
