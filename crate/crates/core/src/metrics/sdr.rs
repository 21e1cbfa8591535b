//! Scale-invariant SDR and its permutation-invariant aggregate.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// SDR values are clamped to `[-SDR_CLAMP_DB, SDR_CLAMP_DB]`.
pub const SDR_CLAMP_DB: f64 = 60.0;

/// Largest source count accepted by the exhaustive permutation search.
pub const MAX_PIT_SOURCES: usize = 6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SDR in dB of `estimate` against `reference`, over the whole signal.
///
/// The estimate `s` is projected onto the reference `x`
/// (`x̃ = <x,s>/<x,x> · x`) and the distortion is `x̃ - s`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    si_sdr_with_grad(estimate, reference).map(|(v, _)| v)
}

/// Clamped SI-SDR and, when the value is not clamped, its gradient with respect to the estimate.
pub(crate) fn si_sdr_with_grad(estimate: &[f64], reference: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = dot(reference, reference);
    if ref_energy == 0.0 {
        return Err(Error::Degenerate("reference has zero energy".into()));
    }
    if dot(estimate, estimate) == 0.0 {
        return Ok((-SDR_CLAMP_DB, None));
    }
    let alpha = dot(reference, estimate) / ref_energy;
    let target: Vec<f64> = reference.iter().map(|x| alpha * x).collect();
    let error: Vec<f64> = target.iter().zip(estimate).map(|(t, s)| t - s).collect();
    let p = dot(&target, &target);
    let q = dot(&error, &error);
    if q == 0.0 {
        return Ok((SDR_CLAMP_DB, None));
    }
    if p == 0.0 {
        return Ok((-SDR_CLAMP_DB, None));
    }
    let raw = 10.0 * (p / q).log10();
    if raw >= SDR_CLAMP_DB {
        return Ok((SDR_CLAMP_DB, None));
    }
    if raw <= -SDR_CLAMP_DB {
        return Ok((-SDR_CLAMP_DB, None));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let grad = target
        .iter()
        .zip(&error)
        .map(|(t, e)| k * (2.0 * t / p + 2.0 * e / q))
        .collect();
    Ok((raw, Some(grad)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    /// Negative mean SDR of the best assignment.
    pub loss: f64,
    /// `permutation[s]` is the estimate matched to target `s`.
    pub permutation: Vec<usize>,
    /// SDR of each target under the chosen assignment.
    pub sdrs: Vec<f64>,
}

/// `matrix[e][t]` = SI-SDR of estimate `e` against target `t`.
fn pair_matrix<E: AsRef<[f64]>, T: AsRef<[f64]>>(estimates: &[E], targets: &[T]) -> Result<Vec<Vec<f64>>> {
    check_counts(estimates.len(), targets.len())?;
    estimates
        .iter()
        .map(|e| targets.iter().map(|t| si_sdr(e.as_ref(), t.as_ref())).collect())
        .collect()
}

fn check_counts(estimates: usize, targets: usize) -> Result<()> {
    if estimates != targets {
        return Err(Error::Shape(format!("{estimates} estimates for {targets} targets")));
    }
    if targets == 0 {
        return Err(Error::Precondition("no sources".into()));
    }
    if targets > MAX_PIT_SOURCES {
        return Err(Error::Precondition(format!(
            "{targets} sources exceeds the permutation search limit of {MAX_PIT_SOURCES}"
        )));
    }
    Ok(())
}

/// Best assignment by mean SDR; ties keep the lexicographically smallest permutation.
fn best_assignment(matrix: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = matrix.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let mean = perm.iter().enumerate().map(|(t, &e)| matrix[e][t]).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(_, b)| mean > *b) {
            best = Some((perm, mean));
        }
    }
    best.expect("at least one permutation")
}

/// Utterance-level permutation-invariant SDR loss.
pub fn usdr_pit_loss<E: AsRef<[f64]>, T: AsRef<[f64]>>(estimates: &[E], targets: &[T]) -> Result<PitResult> {
    let matrix = pair_matrix(estimates, targets)?;
    let (permutation, mean) = best_assignment(&matrix);
    let sdrs = permutation.iter().enumerate().map(|(t, &e)| matrix[e][t]).collect();
    Ok(PitResult { loss: -mean, permutation, sdrs })
}

/// SDR improvement of the best-assigned estimates over the mixture itself.
pub fn sdri<E: AsRef<[f64]>, T: AsRef<[f64]>>(estimates: &[E], targets: &[T], mixture: &[f64]) -> Result<f64> {
    let pit = usdr_pit_loss(estimates, targets)?;
    Ok(-pit.loss - mixture_baseline(targets, mixture)?)
}

/// Mean SDR obtained by using the mixture as every source's estimate.
pub fn mixture_baseline<T: AsRef<[f64]>>(targets: &[T], mixture: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for t in targets {
        total += si_sdr(mixture, t.as_ref())?;
    }
    Ok(total / targets.len() as f64)
}

/// Builds the uSDR loss on the graph. The assignment is chosen from the
/// current values and gradients flow through the chosen pairs only.
pub fn pit_loss_node<T: AsRef<[f64]>>(
    g: &mut Graph,
    estimates: &[NodeId],
    targets: &[T],
) -> Result<(NodeId, Vec<usize>)> {
    let rows: Vec<Vec<f64>> = estimates.iter().map(|e| g.row(*e)).collect();
    let matrix = pair_matrix(&rows, targets)?;
    let (perm, _) = best_assignment(&matrix);
    let mut terms = Vec::with_capacity(perm.len());
    for (t, &e) in perm.iter().enumerate() {
        terms.push(g.si_sdr(estimates[e], targets[t].as_ref())?);
    }
    let mean = g.mean(&terms);
    Ok((g.scale(mean, -1.0), perm))
}
