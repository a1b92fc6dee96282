//! Dense row-major H × W × C grids and the resampling helpers built on them.

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit RGB frame (3 channels).
pub type RgbFrame = Grid<u8>;
/// 8-bit RGBA frame (4 channels).
pub type RgbaFrame = Grid<u8>;
/// Single-channel depth in meters.
pub type DepthMap = Grid<f32>;
/// Single-channel intensity image.
pub type GrayImage<T> = Grid<T>;

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Panics if `data.len() != height * width * channels`.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            height * width * channels,
            "grid buffer length does not match {height}x{width}x{channels}"
        );
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(y, x) + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        let o = self.offset(y, x) + c;
        self.data[o] = value;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let o = self.offset(y, x);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let o = self.offset(y, x);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl<T: Real> Grid<T> {
    /// Bilinear sample with coordinates clamped to the grid border.
    pub fn sample_clamped(&self, x: T, y: T, c: usize) -> T {
        let max_x = T::lit((self.width - 1) as f64);
        let max_y = T::lit((self.height - 1) as f64);
        let x = x.max(T::zero()).min(max_x);
        let y = y.max(T::zero()).min(max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap_or(0);
        let yi = y0.to_usize().unwrap_or(0);
        let xj = (xi + 1).min(self.width - 1);
        let yj = (yi + 1).min(self.height - 1);
        let one = T::one();
        (one - fy) * ((one - fx) * self.get(yi, xi, c) + fx * self.get(yi, xj, c))
            + fy * ((one - fx) * self.get(yj, xi, c) + fx * self.get(yj, xj, c))
    }
}

/// Bilinear interpolation weights for a point, or `None` when it lies outside
/// `[0, w-1] × [0, h-1]`. Returns the four taps as `(y, x, weight)`.
pub(crate) fn bilinear_taps(
    x: f64,
    y: f64,
    height: usize,
    width: usize,
) -> Option<[(usize, usize, f64); 4]> {
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return None;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as usize;
    let yi = y0 as usize;
    let xj = (xi + 1).min(width - 1);
    let yj = (yi + 1).min(height - 1);
    Some([
        (yi, xi, (1.0 - fx) * (1.0 - fy)),
        (yi, xj, fx * (1.0 - fy)),
        (yj, xi, (1.0 - fx) * fy),
        (yj, xj, fx * fy),
    ])
}

#[inline]
pub(crate) fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resamples an 8-bit grid to a new size by bilinear interpolation of pixel
/// centers (the usual half-pixel convention).
pub fn resize_bilinear(src: &Grid<u8>, height: usize, width: usize) -> Grid<u8> {
    if src.dims() == (height, width) {
        return src.clone();
    }
    let sy = src.height() as f64 / height as f64;
    let sx = src.width() as f64 / width as f64;
    let channels = src.channels();
    let mut out = Grid::filled(height, width, channels, 0u8);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height() - 1) as f64);
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width() - 1) as f64);
            let taps = bilinear_taps(fx, fy, src.height(), src.width()).expect("clamped");
            for c in 0..channels {
                let v: f64 = taps
                    .iter()
                    .map(|&(ty, tx, w)| w * src.get(ty, tx, c) as f64)
                    .sum();
                out.set(y, x, c, round_u8(v));
            }
        }
    }
    out
}

/// Copies the `height × width` window whose top-left corner is `(top, left)`.
pub fn crop_window<T: Copy>(src: &Grid<T>, top: usize, left: usize, height: usize, width: usize) -> Grid<T> {
    assert!(top + height <= src.height() && left + width <= src.width());
    Grid::from_fn(height, width, src.channels(), |y, x, c| src.get(top + y, left + x, c))
}

/// Luma of an RGB(A) frame normalized to `[0, 1]`: 0.299 R + 0.587 G + 0.114 B.
pub fn luma<T: Real>(frame: &Grid<u8>) -> GrayImage<T> {
    assert!(frame.channels() >= 3);
    let (h, w) = frame.dims();
    Grid::from_fn(h, w, 1, |y, x, _| {
        let p = frame.pixel(y, x);
        let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        T::lit(l / 255.0)
    })
}
