use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cumulative signal levels `alpha_1 .. alpha_T`, strictly decreasing in `(0, 1]`.
/// `alpha_0` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Schedule("schedule needs at least one step".into()));
        }
        if let Some((t, a)) = alphas.iter().enumerate().find(|(_, a)| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Schedule(format!("alpha_{} = {a} outside (0, 1]", t + 1)));
        }
        if let Some(t) = alphas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::Schedule(format!(
                "schedule not strictly decreasing at t = {}: {} then {}",
                t + 1,
                alphas[t],
                alphas[t + 1]
            )));
        }
        Ok(Self { alphas })
    }

    /// `alpha_t = 1 - t / (T + 1)`.
    pub fn linear(steps: usize) -> Result<Self> {
        let denom = steps as f64 + 1.0;
        Self::new((1..=steps).map(|t| 1.0 - t as f64 / denom).collect())
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Signal level at step `t` in `[0, T]`; panics past `T`.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `t -> t - 1`.
    Denoise,
    /// `t -> t + 1`.
    Invert,
}

/// Deterministic DDIM update between two signal levels.
///
/// `x0 = (z - sqrt(1 - a_t) eps) / sqrt(a_t)`, then
/// `z' = sqrt(a_next) x0 + sqrt(1 - a_next) eps`. Computed in `f64`.
pub fn ddim_update<T: Scalar>(z: &[T], eps: &[T], alpha_t: f64, alpha_next: f64) -> Result<Vec<T>> {
    if z.len() != eps.len() {
        return Err(Error::Dimension {
            expected: z.len(),
            actual: eps.len(),
        });
    }
    if !(alpha_t > 0.0) || !(alpha_next > 0.0) {
        return Err(Error::Schedule(format!(
            "signal levels must be positive, got {alpha_t} -> {alpha_next}"
        )));
    }
    let (sa, sb) = (alpha_t.sqrt(), (1.0 - alpha_t).max(0.0).sqrt());
    let (na, nb) = (alpha_next.sqrt(), (1.0 - alpha_next).max(0.0).sqrt());
    let out: Vec<T> = z
        .iter()
        .zip(eps)
        .map(|(&z, &e)| {
            let (z, e) = (z.as_f64(), e.as_f64());
            let x0 = (z - sb * e) / sa;
            T::lit(na * x0 + nb * e)
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "ddim update" });
    }
    Ok(out)
}

/// One DDIM step from `t` in the given direction.
pub fn ddim_step<T: Scalar>(
    z: &[T],
    eps: &[T],
    t: usize,
    schedule: &NoiseSchedule,
    direction: Direction,
) -> Result<Vec<T>> {
    let steps = schedule.steps();
    let next = match direction {
        Direction::Denoise if (1..=steps).contains(&t) => t - 1,
        Direction::Invert if t < steps => t + 1,
        _ => {
            return Err(Error::Schedule(format!(
                "step {t} invalid for {direction:?} with T = {steps}"
            )))
        }
    };
    ddim_update(z, eps, schedule.alpha(t), schedule.alpha(next))
}
