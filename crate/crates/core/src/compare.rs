//! Element-wise comparison of two fitted mixtures.

use std::fmt;

use crate::dims::{FlatIndex, Layout};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;

/// `|a - b| / max(|a|, |b|, 1)`: relative for entries of magnitude above one,
/// absolute below.
pub fn relative_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// `pairing[j]` is the component of the second mixture matched to
    /// component `j` of the first.
    pub pairing: Vec<usize>,
    pub max_diff: f64,
    /// Field holding the largest difference, e.g. `sigma[2][(1,3),(2,3)]`.
    pub worst_field: String,
}

impl Comparison {
    pub fn within(&self, rtol: f64) -> bool {
        self.max_diff <= rtol
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "max relative difference {:.3e} at {}", self.max_diff, self.worst_field)
    }
}

/// Matches components greedily by closest means, keeping the given order
/// when it is already the closest assignment.
pub fn pair_components(a: &GmmParams, b: &GmmParams) -> Vec<usize> {
    let k = a.num_components();
    let mut dist: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let d = (&a.component(i).mean - &b.component(j).mean).norm();
            dist.push((d, usize::from(i != j), i * k + j));
        }
    }
    dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut pairing = vec![usize::MAX; k];
    let mut taken = vec![false; k];
    for (_, _, ij) in dist {
        let (i, j) = (ij / k, ij % k);
        if pairing[i] == usize::MAX && !taken[j] {
            pairing[i] = j;
            taken[j] = true;
        }
    }
    pairing
}

fn coord(layout: Layout, flat: usize) -> String {
    match FlatIndex::from_flat(layout, flat) {
        Ok(ix) => format!("({},{})", ix.farm, ix.period),
        Err(_) => format!("({flat})"),
    }
}

pub fn compare_params(layout: Layout, a: &GmmParams, b: &GmmParams) -> Result<Comparison> {
    if a.dim() != b.dim() || a.dim() != layout.dim() {
        return Err(Error::DimensionMismatch {
            context: "compared parameter dimension",
            expected: a.dim(),
            found: if a.dim() != b.dim() { b.dim() } else { layout.dim() },
        });
    }
    if a.num_components() != b.num_components() {
        return Err(Error::DimensionMismatch {
            context: "compared component count",
            expected: a.num_components(),
            found: b.num_components(),
        });
    }
    let pairing = pair_components(a, b);
    let mut max_diff = 0.0;
    let mut worst_field = String::from("w[1]");
    let mut note = |d: f64, field: &dyn Fn() -> String| {
        if d > max_diff || d.is_nan() {
            max_diff = if d.is_nan() { f64::INFINITY } else { d };
            worst_field = field();
        }
    };
    let dim = a.dim();
    for (i, &j) in pairing.iter().enumerate() {
        let (ca, cb) = (a.component(i), b.component(j));
        note(relative_diff(ca.weight, cb.weight), &|| format!("w[{}]", i + 1));
        for r in 0..dim {
            note(relative_diff(ca.mean[r], cb.mean[r]), &|| {
                format!("mu[{}][{}]", i + 1, coord(layout, r))
            });
        }
        for r in 0..dim {
            for c in r..dim {
                let d = relative_diff(ca.covariance[(r, c)], cb.covariance[(r, c)]);
                note(d, &|| format!("sigma[{}][{},{}]", i + 1, coord(layout, r), coord(layout, c)));
            }
        }
    }
    Ok(Comparison {
        pairing,
        max_diff,
        worst_field,
    })
}
