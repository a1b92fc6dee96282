use serde::{Deserialize, Serialize};

use super::Flow;
use crate::error::FlowError;
use crate::grid::Grid;
use crate::scalar::Real;

/// Component-wise median of a flow field over all cells, or over the cells
/// where `valid_mask` is true. Even counts average the two middle values.
pub fn median_flow<T: Real>(flow: &Flow<T>, valid_mask: Option<&Grid<bool>>) -> Result<(T, T), FlowError> {
    let (h, w) = flow.dims();
    if let Some(mask) = valid_mask {
        if mask.dims() != (h, w) {
            let (mh, mw) = mask.dims();
            return Err(FlowError::DimensionMismatch(h, w, mh, mw));
        }
    }
    let mut us = Vec::with_capacity(h * w);
    let mut vs = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            if valid_mask.is_none_or(|m| m.get(y, x, 0)) {
                let (u, v) = flow.at(y, x);
                us.push(u);
                vs.push(v);
            }
        }
    }
    if us.is_empty() {
        return Err(FlowError::EmptyMask);
    }
    Ok((median_in_place(&mut us), median_in_place(&mut vs)))
}

fn median_in_place<T: Real>(values: &mut [T]) -> T {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    }
}

/// Cumulative camera offsets, zero at the center frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Track<T> {
    pub offsets: Vec<[T; 2]>,
    pub center_index: usize,
}

impl<T: Real> Track<T> {
    pub fn zeros(len: usize, center_index: usize) -> Self {
        Self {
            offsets: vec![[T::zero(); 2]; len],
            center_index,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Track<U> {
        Track {
            offsets: self
                .offsets
                .iter()
                .map(|o| [U::lit(o[0].to_f64_lossy()), U::lit(o[1].to_f64_lossy())])
                .collect(),
            center_index: self.center_index,
        }
    }
}

/// Integrates `T - 1` per-pair median flows into `T` offsets relative to
/// `center_index`: forward by addition after the center, backward by
/// subtraction before it.
pub fn integrate_camera<T: Real>(medians: &[(T, T)], center_index: usize) -> Result<Track<T>, FlowError> {
    let len = medians.len() + 1;
    if center_index >= len {
        return Err(FlowError::CenterOutOfRange {
            center: center_index,
            len,
        });
    }
    let mut offsets = vec![[T::zero(); 2]; len];
    for t in center_index..medians.len() {
        let (du, dv) = medians[t];
        offsets[t + 1] = [offsets[t][0] + du, offsets[t][1] + dv];
    }
    for t in (0..center_index).rev() {
        let (du, dv) = medians[t];
        offsets[t] = [offsets[t + 1][0] - du, offsets[t + 1][1] - dv];
    }
    Ok(Track {
        offsets,
        center_index,
    })
}
