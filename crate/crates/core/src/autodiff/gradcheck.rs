//! Gradient verification against central finite differences.

use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Denominator floor for the relative error, so coordinates whose analytic
/// and numeric gradients are both ~0 compare in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Compare tape gradients of a scalar-valued function against central finite
/// differences `(f(x + h·e) − f(x − h·e)) / 2h`, coordinate by coordinate over
/// every input. Returns the maximum relative error
/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
///
/// The probe evaluations are independent and run on all available cores; the
/// result does not depend on the scheduling.
pub fn grad_check<T, F>(build: F, inputs: &[Tensor<T>], h: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId> + Sync,
{
    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::contract("grad_check", "function must be scalar-valued"));
    }
    // Inputs the function never touches have zero gradient and no tape entry.
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = ids
        .iter()
        .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.dims(id))))
        .collect();
    drop(tape);

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.len()).map(move |c| (ti, c)))
        .collect();

    let eval = |points: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = points.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).scalar_value().to_f64())
    };

    let sweep = |chunk: &[(usize, usize)]| -> Result<f64> {
        let mut work: Vec<Tensor<T>> = inputs.to_vec();
        let mut max_rel = 0.0f64;
        for &(ti, c) in chunk {
            let orig = work[ti].as_slice()[c];
            work[ti].as_mut_slice()[c] = T::from_f64(orig.to_f64() + h);
            let f_plus = eval(&work)?;
            work[ti].as_mut_slice()[c] = T::from_f64(orig.to_f64() - h);
            let f_minus = eval(&work)?;
            work[ti].as_mut_slice()[c] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[ti].as_slice()[c].to_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        Ok(max_rel)
    };

    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(coords.len().max(1));
    if threads <= 1 {
        return sweep(&coords);
    }
    let chunk_len = coords.len().div_ceil(threads);
    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = coords
            .chunks(chunk_len)
            .map(|chunk| scope.spawn(|| sweep(chunk)))
            .collect();
        handles.into_iter().map(|handle| handle.join().expect("probe thread panicked")).collect()
    });
    let mut max_rel = 0.0f64;
    for r in results {
        max_rel = max_rel.max(r?);
    }
    Ok(max_rel)
}
