//! Dense optical flow and camera-motion estimation.

mod camera;
mod flo;
mod tvl1;

pub use camera::{integrate_camera, median_flow, Track};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use tvl1::{tvl1_flow, TvL1Params, MIN_SOLVER_SIDE};

use crate::grid::Grid;
use crate::scalar::Real;

/// Per-pixel displacement `(u, v)` in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow<T> {
    vectors: Grid<T>,
}

impl<T: Real> Flow<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            vectors: Grid::filled(height, width, 2, T::zero()),
        }
    }

    pub fn constant(height: usize, width: usize, u: T, v: T) -> Self {
        Self {
            vectors: Grid::from_fn(height, width, 2, |_, _, c| if c == 0 { u } else { v }),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        Self {
            vectors: Grid::from_vec(height, width, 2, data),
        }
    }

    /// Panics unless `grid` has two channels.
    pub fn from_grid(grid: Grid<T>) -> Self {
        assert_eq!(grid.channels(), 2, "flow grids carry (u, v)");
        Self { vectors: grid }
    }

    pub fn vectors(&self) -> &Grid<T> {
        &self.vectors
    }

    pub fn into_grid(self) -> Grid<T> {
        self.vectors
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.vectors.dims()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        let p = self.vectors.pixel(y, x);
        (p[0], p[1])
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.data().iter().all(|v| v.is_finite())
    }

    /// Mean Euclidean distance between every vector and `(u, v)`.
    pub fn mean_endpoint_error(&self, u: T, v: T) -> T {
        let n = self.height() * self.width();
        let sum = self
            .vectors
            .data()
            .chunks_exact(2)
            .fold(T::zero(), |acc, p| acc + ((p[0] - u).powi(2) + (p[1] - v).powi(2)).sqrt());
        sum / T::lit(n as f64)
    }

    pub fn cast<U: Real>(&self) -> Flow<U> {
        Flow {
            vectors: self.vectors.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Divisor that brings flow into roughly the RGB input range.
pub const FLOW_NET_DIVISOR: f64 = 20.0;

/// Network encoding of a flow field: `(u/20, v/20, |(u, v)|/20)` per pixel.
pub fn flow_to_net_input<T: Real>(flow: &Flow<T>) -> Grid<T> {
    let d = T::lit(FLOW_NET_DIVISOR);
    let (h, w) = flow.dims();
    let mut out = Grid::filled(h, w, 3, T::zero());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(y, x);
            let px = out.pixel_mut(y, x);
            px[0] = u / d;
            px[1] = v / d;
            px[2] = u.hypot(v) / d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode_one(u: f64, v: f64) -> [f64; 3] {
        let g = flow_to_net_input(&Flow::constant(1, 1, u, v));
        [g.get(0, 0, 0), g.get(0, 0, 1), g.get(0, 0, 2)]
    }

    #[test]
    fn net_input_examples() {
        assert_eq!(encode_one(20.0, 0.0), [1.0, 0.0, 1.0]);
        assert_eq!(encode_one(0.0, 0.0), [0.0, 0.0, 0.0]);
        assert_eq!(encode_one(-40.0, 30.0), [-2.0, 1.5, 2.5]);
    }

    proptest! {
        #[test]
        fn magnitude_channel_is_consistent(u in -500.0f64..500.0, v in -500.0f64..500.0) {
            let [a, b, m] = encode_one(u, v);
            prop_assert!(m >= 0.0);
            let lhs = m * m;
            let rhs = a * a + b * b;
            prop_assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1e-30));
        }
    }

    #[test]
    fn endpoint_error_of_constant_field() {
        let f = Flow::constant(4, 4, 3.0f64, 4.0);
        assert!((f.mean_endpoint_error(0.0, 0.0) - 5.0).abs() < 1e-12);
    }
}
