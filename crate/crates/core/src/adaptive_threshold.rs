//! Adaptive loss threshold (AT) sample selection.
//!
//! Server side, the threshold for the next round interpolates between the
//! smallest client minimum loss and the mean client maximum loss, with the
//! interpolation ratio `ltr` nudged up or down every `window` rounds depending
//! on whether the round utility (mean selected-sample loss) is falling.
//! Client side, samples at or above the threshold are kept only with
//! probability `retain_prob`.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AtState<T> {
    /// Interpolation ratio in `[0, 1]`.
    pub ltr: T,
    pub loss_step: T,
    pub window: usize,
    pub retain_prob: f64,
    /// `(round, utility)` entries, append-only.
    pub utility: Vec<(usize, T)>,
    /// Threshold for the upcoming round, once computed.
    pub lt: Option<T>,
}

impl<T: Real> Default for AtState<T> {
    fn default() -> Self {
        Self::new(0.1, 5, 0.75)
    }
}

impl<T: Real> AtState<T> {
    pub fn new(loss_step: f64, window: usize, retain_prob: f64) -> Self {
        Self {
            ltr: T::zero(),
            loss_step: T::lit(loss_step),
            window,
            retain_prob,
            utility: Vec::new(),
            lt: None,
        }
    }

    /// Appends this round's utility and, on window boundaries with enough
    /// history, moves `ltr` by one step. Rounds with no selected samples are
    /// not recorded.
    pub fn control_ltr(&mut self, loss_sum: T, selected: usize, round: usize) {
        if selected == 0 {
            return;
        }
        self.utility
            .push((round, loss_sum / T::from_count(selected)));

        let w = self.window;
        if w == 0 || !round.is_multiple_of(w) || round < 2 * w || self.utility.len() < 2 * w {
            return;
        }
        let window_sum = |lo: usize, hi: usize| {
            self.utility
                .iter()
                .filter(|(r, _)| *r > lo && *r <= hi)
                .fold(T::zero(), |acc, &(_, u)| acc + u)
        };
        let older = window_sum(round - 2 * w, round - w);
        let newer = window_sum(round - w, round);
        self.ltr = if older > newer {
            (self.ltr + self.loss_step).min(T::one())
        } else {
            (self.ltr - self.loss_step).max(T::zero())
        };
    }
}

/// Loss statistics a client reports after computing its per-sample losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeta<T> {
    pub low: T,
    pub high: T,
    /// Total loss of the samples the client trained on.
    pub selected_loss_sum: T,
    pub selected_count: usize,
}

/// `lt = ll + (lh − ll) · ltr` with `ll = min(low)` and `lh = mean(high)`.
pub fn calculate_lt<T: Real>(low: &[T], high: &[T], ltr: T) -> Result<T> {
    if low.is_empty() || high.is_empty() {
        return Err(Error::Protocol("no client reported loss metadata".into()));
    }
    if low.len() != high.len() {
        return Err(Error::Protocol(format!(
            "{} minimum losses but {} maximum losses",
            low.len(),
            high.len()
        )));
    }
    let ll = low.iter().copied().fold(T::infinity(), T::min);
    let lh = high.iter().copied().sum::<T>() / T::from_count(high.len());
    Ok(ll + (lh - ll) * ltr)
}

/// Indices kept for training: every loss below `lt`, plus a uniform sample
/// without replacement of `floor(p · |over|)` of the rest. Ascending order.
pub fn select_samples<T: Real, R: Rng + ?Sized>(
    losses: &[T],
    lt: T,
    retain_prob: f64,
    rng: &mut R,
) -> Vec<usize> {
    let (over, mut kept): (Vec<usize>, Vec<usize>) =
        (0..losses.len()).partition(|&j| losses[j] >= lt);
    let quota = ((retain_prob * over.len() as f64) + 1e-9).floor() as usize;
    let quota = quota.min(over.len());
    kept.extend(
        index::sample(rng, over.len(), quota)
            .into_iter()
            .map(|i| over[i]),
    );
    kept.sort_unstable();
    kept
}
