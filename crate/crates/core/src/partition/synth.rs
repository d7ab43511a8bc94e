use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FullDataset, VerticalSlice};
use crate::dims::Dims;
use crate::error::{Error, Result};

fn ar1_correlation(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| rho.powi(a.abs_diff(b) as i32))
}

/// Synthetic wind output with separable spatial and temporal correlation.
///
/// Latent draws `z ~ N(0, R_s (x) R_t)` with `R_s[m][n] = rho_s^|m-n|` and
/// `R_t[t][v] = rho_t^|t-v|` are squashed through `cap / (1 + e^-z)`.
/// Only `M`, `T` and `I` of `dims` are used.
pub fn synth_generate(
    dims: &Dims,
    capacities: &[f64],
    rho_t: f64,
    rho_s: f64,
    seed: u64,
) -> Result<FullDataset> {
    let (m, t, rows) = (dims.num_farms, dims.num_periods, dims.num_obs);
    if capacities.len() != m {
        return Err(Error::DimensionMismatch {
            context: "capacities",
            expected: m,
            found: capacities.len(),
        });
    }
    for (name, rho) in [("temporal", rho_t), ("spatial", rho_s)] {
        if !(rho.abs() < 1.0) {
            return Err(Error::Generation(format!(
                "{name} correlation {rho} must lie in (-1, 1)"
            )));
        }
    }
    let spatial = crate::linalg::cholesky(&ar1_correlation(m, rho_s))
        .ok_or_else(|| Error::Generation("spatial correlation is not positive definite".into()))?
        .l();
    let temporal = crate::linalg::cholesky(&ar1_correlation(t, rho_t))
        .ok_or_else(|| Error::Generation("temporal correlation is not positive definite".into()))?
        .l();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks: Vec<DMatrix<f64>> = capacities.iter().map(|_| DMatrix::zeros(rows, t)).collect();
    for i in 0..rows {
        let eps = DMatrix::from_fn(m, t, |_, _| StandardNormal.sample(&mut rng));
        // (L_s (x) L_t) vec(E) = vec(L_s E L_t') in farm-major order.
        let latent = &spatial * eps * temporal.transpose();
        for (farm, block) in blocks.iter_mut().enumerate() {
            let cap = capacities[farm];
            for p in 0..t {
                let z: f64 = latent[(farm, p)];
                block[(i, p)] = (cap / (1.0 + (-z).exp())).clamp(0.0, cap);
            }
        }
    }
    let slices = blocks
        .into_iter()
        .enumerate()
        .map(|(k, values)| VerticalSlice::new(k + 1, capacities[k], values))
        .collect::<Result<Vec<_>>>()?;
    FullDataset::new(slices)
}
