//! Central-finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Parameter, Tensor};

/// Compares analytic gradients against central differences on a random
/// subset of parameter entries (5% of all entries, at least 20) and returns
/// the maximum relative error.
///
/// `forward` must re-evaluate the loss from the current parameter values;
/// `analytic` pairs with `params` by index and is left untouched.
pub fn grad_check_entries(
    params: &mut [Parameter],
    analytic: &[Tensor],
    mut forward: impl FnMut(&[Parameter]) -> Result<f64, NumericsError>,
    seed: u64,
    h: f64,
) -> Result<f64, NumericsError> {
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.value.len() {
            entries.push((pi, ei));
        }
    }
    let total = entries.len();
    let sample = ((total as f64 * 0.05).ceil() as usize).clamp(20.min(total), total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    entries.truncate(sample);

    let mut max_rel = 0.0f64;
    for (pi, ei) in entries {
        let orig = params[pi].value.data()[ei];
        params[pi].value.data_mut()[ei] = orig + h;
        let plus = forward(params)?;
        params[pi].value.data_mut()[ei] = orig - h;
        let minus = forward(params)?;
        params[pi].value.data_mut()[ei] = orig;

        let fd = (plus - minus) / (2.0 * h);
        let an = analytic[pi].data()[ei];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
