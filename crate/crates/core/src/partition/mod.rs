//! Vertically partitioned observations: every farm holds all `I` rows but only
//! its own `T` columns.

mod csv_io;
mod synth;

pub use csv_io::{load_dataset, load_slice_csv, slice_file_name, write_dataset, write_slice_csv};
pub use synth::synth_generate;

use nalgebra::DMatrix;

use crate::dims::Layout;
use crate::error::{Error, Result};

/// One farm's private `I x T` block of outputs in MW.
#[derive(Clone, Debug, PartialEq)]
pub struct VerticalSlice {
    farm: usize,
    capacity: f64,
    values: DMatrix<f64>,
}

impl VerticalSlice {
    /// `farm` is 1-based. Values must lie in `[0, capacity]`.
    pub fn new(farm: usize, capacity: f64, values: DMatrix<f64>) -> Result<Self> {
        if farm == 0 {
            return Err(Error::InvalidIndex("farms are numbered from 1".into()));
        }
        if !(capacity > 0.0) {
            return Err(Error::InvalidParams(format!(
                "capacity of farm {farm} must be positive"
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && **v <= capacity)) {
            return Err(Error::InvalidParams(format!(
                "farm {farm} value {bad} outside [0, {capacity}]"
            )));
        }
        Ok(Self {
            farm,
            capacity,
            values,
        })
    }

    pub fn farm(&self) -> usize {
        self.farm
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn num_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `y_{m,t}^i` with 0-based `obs` and `period`.
    pub fn get(&self, obs: usize, period: usize) -> f64 {
        self.values[(obs, period)]
    }

    /// The column `y_{m,t}` over all observations, 0-based `period`.
    pub fn column(&self, period: usize) -> &[f64] {
        let n = self.values.nrows();
        &self.values.as_slice()[period * n..(period + 1) * n]
    }
}

/// All farms' slices, joined by observation index.
#[derive(Clone, Debug, PartialEq)]
pub struct FullDataset {
    layout: Layout,
    num_obs: usize,
    slices: Vec<VerticalSlice>,
}

impl FullDataset {
    pub fn new(slices: Vec<VerticalSlice>) -> Result<Self> {
        let first = slices.first().ok_or(Error::InvalidDims("no farms".into()))?;
        let (rows, periods) = (first.num_obs(), first.num_periods());
        for (k, s) in slices.iter().enumerate() {
            if s.farm() != k + 1 {
                return Err(Error::InvalidIndex(format!(
                    "slice {k} belongs to farm {}, expected {}",
                    s.farm(),
                    k + 1
                )));
            }
            if s.num_obs() != rows {
                return Err(Error::DimensionMismatch {
                    context: "slice row count",
                    expected: rows,
                    found: s.num_obs(),
                });
            }
            if s.num_periods() != periods {
                return Err(Error::DimensionMismatch {
                    context: "slice period count",
                    expected: periods,
                    found: s.num_periods(),
                });
            }
        }
        Ok(Self {
            layout: Layout::new(slices.len(), periods)?,
            num_obs: rows,
            slices,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn slices(&self) -> &[VerticalSlice] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<VerticalSlice> {
        self.slices
    }

    /// 1-based `farm`.
    pub fn slice(&self, farm: usize) -> &VerticalSlice {
        &self.slices[farm - 1]
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.capacity()).collect()
    }

    /// Every farm's output at 1-based `period` for 0-based observation `obs`.
    pub fn period_row(&self, obs: usize, period: usize) -> Vec<f64> {
        self.slices.iter().map(|s| s.get(obs, period - 1)).collect()
    }
}

/// Joins all slices into the `I x D` matrix in farm-major layout.
///
/// This gathers every farm's raw data in one place; it exists only to feed
/// the centralized reference fit.
pub fn assemble(dataset: &FullDataset) -> Result<DMatrix<f64>> {
    let layout = dataset.layout();
    let rows = dataset.num_obs();
    let mut out = DMatrix::zeros(rows, layout.dim());
    for s in dataset.slices() {
        if s.num_obs() != rows {
            return Err(Error::DimensionMismatch {
                context: "slice row count",
                expected: rows,
                found: s.num_obs(),
            });
        }
        let cols = layout.farm_range(s.farm());
        out.columns_mut(cols.start, cols.len()).copy_from(s.values());
    }
    Ok(out)
}

/// Splits an `I x D` matrix into per-farm slices; inverse of [`assemble`].
pub fn partition(data: &DMatrix<f64>, layout: Layout, capacities: &[f64]) -> Result<FullDataset> {
    if data.ncols() != layout.dim() {
        return Err(Error::DimensionMismatch {
            context: "data columns",
            expected: layout.dim(),
            found: data.ncols(),
        });
    }
    if capacities.len() != layout.num_farms() {
        return Err(Error::DimensionMismatch {
            context: "capacities",
            expected: layout.num_farms(),
            found: capacities.len(),
        });
    }
    let slices = (1..=layout.num_farms())
        .map(|m| {
            let cols = layout.farm_range(m);
            VerticalSlice::new(
                m,
                capacities[m - 1],
                data.columns(cols.start, cols.len()).into_owned(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    FullDataset::new(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn assemble_places_farms_side_by_side() {
        let a = VerticalSlice::new(1, 10.0, DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap();
        let b = VerticalSlice::new(2, 10.0, DMatrix::from_row_slice(2, 1, &[3.0, 4.0])).unwrap();
        let data = assemble(&FullDataset::new(vec![a, b]).unwrap()).unwrap();
        assert_eq!(data, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn single_farm_assembles_to_itself() {
        let values = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = VerticalSlice::new(1, 6.0, values.clone()).unwrap();
        assert_eq!(assemble(&FullDataset::new(vec![s]).unwrap()).unwrap(), values);
    }

    #[test]
    fn mismatched_slices_are_rejected() {
        let a = VerticalSlice::new(1, 10.0, DMatrix::zeros(2, 1)).unwrap();
        let b = VerticalSlice::new(2, 10.0, DMatrix::zeros(3, 1)).unwrap();
        assert!(FullDataset::new(vec![a.clone(), b]).is_err());
        let c = VerticalSlice::new(3, 10.0, DMatrix::zeros(2, 1)).unwrap();
        assert!(FullDataset::new(vec![a, c]).is_err());
        assert!(VerticalSlice::new(1, 1.0, DMatrix::from_element(1, 1, 1.5)).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_assemble_are_inverse(
            m in 1usize..4, t in 1usize..4, rows in 1usize..6,
            seed in any::<u64>(),
        ) {
            let layout = Layout::new(m, t).unwrap();
            let mut state = seed;
            let data = DMatrix::from_fn(rows, m * t, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 5.0
            });
            let caps = vec![5.0; m];
            let ds = partition(&data, layout, &caps).unwrap();
            prop_assert_eq!(&assemble(&ds).unwrap(), &data);
            prop_assert_eq!(partition(&assemble(&ds).unwrap(), layout, &caps).unwrap(), ds);
        }
    }
}
