//! Coarse-to-fine TV-L1 optical flow: duality-based primal–dual iteration
//! with thresholded linearized data term, fixed-point warping per level.

use serde::{Deserialize, Serialize};

use super::Flow;
use crate::error::FlowError;
use crate::grid::{GrayImage, Grid};
use crate::scalar::Real;

/// Smallest image side the solver accepts and the coarsest pyramid side.
pub const MIN_SOLVER_SIDE: usize = 16;

/// Intensities are normalized to `[0, 1]` at the interface; internally the
/// solver works on the 8-bit range so `lambda_data` keeps its usual meaning.
const INTENSITY_RANGE: f64 = 255.0;

const GRAD_IS_ZERO: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvL1Params {
    pub lambda_data: f64,
    pub theta: f64,
    pub tau: f64,
    pub pyramid_scale: f64,
    /// Upper bound; levels whose shorter side would drop below 16 px are skipped.
    pub levels: usize,
    pub warps: usize,
    pub iterations: usize,
    pub epsilon: f64,
}

impl Default for TvL1Params {
    fn default() -> Self {
        Self {
            lambda_data: 0.15,
            theta: 0.3,
            tau: 0.25,
            pyramid_scale: 0.5,
            levels: 8,
            warps: 5,
            iterations: 50,
            epsilon: 0.01,
        }
    }
}

impl TvL1Params {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("lambda_data", self.lambda_data),
            ("theta", self.theta),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FlowError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(FlowError::InvalidParams(format!(
                "pyramid_scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.levels == 0 || self.warps == 0 || self.iterations == 0 {
            return Err(FlowError::InvalidParams(
                "levels, warps and iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Pyramid level sizes (finest first) actually used for a `height × width` input.
    pub fn level_sizes(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let mut sizes = vec![(height, width)];
        while sizes.len() < self.levels {
            let (h, w) = *sizes.last().expect("non-empty");
            let nh = (h as f64 * self.pyramid_scale).round() as usize;
            let nw = (w as f64 * self.pyramid_scale).round() as usize;
            if nh.min(nw) < MIN_SOLVER_SIDE {
                break;
            }
            sizes.push((nh, nw));
        }
        sizes
    }
}

/// Estimates the flow from `prev` to `next` (so `next(x + flow(x)) ≈ prev(x)`).
pub fn tvl1_flow<T: Real>(
    prev: &GrayImage<T>,
    next: &GrayImage<T>,
    params: &TvL1Params,
) -> Result<Flow<T>, FlowError> {
    params.validate()?;
    if prev.dims() != next.dims() {
        let (h0, w0) = prev.dims();
        let (h1, w1) = next.dims();
        return Err(FlowError::DimensionMismatch(h0, w0, h1, w1));
    }
    let (h, w) = prev.dims();
    if h < MIN_SOLVER_SIDE || w < MIN_SOLVER_SIDE {
        return Err(FlowError::TooSmall(h, w));
    }
    if prev.channels() != 1 || next.channels() != 1 {
        return Err(FlowError::InvalidParams("solver expects single-channel images".into()));
    }
    if !prev.data().iter().chain(next.data()).all(|v| v.is_finite()) {
        return Err(FlowError::NonFinite);
    }

    let range = T::lit(INTENSITY_RANGE);
    let sizes = params.level_sizes(h, w);
    let mut pyr0 = vec![prev.map(|v| v * range)];
    let mut pyr1 = vec![next.map(|v| v * range)];
    for &(lh, lw) in &sizes[1..] {
        pyr0.push(downsample(pyr0.last().expect("level"), lh, lw, params.pyramid_scale));
        pyr1.push(downsample(pyr1.last().expect("level"), lh, lw, params.pyramid_scale));
    }

    let mut u1: Option<Grid<T>> = None;
    let mut u2: Option<Grid<T>> = None;
    for level in (0..sizes.len()).rev() {
        let (lh, lw) = sizes[level];
        let (mut a, mut b) = match (u1.take(), u2.take()) {
            (Some(a), Some(b)) => (upsample_flow(&a, lh, lw), upsample_flow(&b, lh, lw)),
            _ => (Grid::filled(lh, lw, 1, T::zero()), Grid::filled(lh, lw, 1, T::zero())),
        };
        if level + 1 < sizes.len() {
            let (ch, cw) = sizes[level + 1];
            let sx = T::lit(lw as f64 / cw as f64);
            let sy = T::lit(lh as f64 / ch as f64);
            a.data_mut().iter_mut().for_each(|v| *v = *v * sx);
            b.data_mut().iter_mut().for_each(|v| *v = *v * sy);
        }
        solve_level(&pyr0[level], &pyr1[level], &mut a, &mut b, params);
        u1 = Some(a);
        u2 = Some(b);
    }

    let u1 = u1.expect("at least one level");
    let u2 = u2.expect("at least one level");
    Ok(Flow::from_fn(h, w, |y, x| (u1.get(y, x, 0), u2.get(y, x, 0))))
}

fn solve_level<T: Real>(i0: &Grid<T>, i1: &Grid<T>, u1: &mut Grid<T>, u2: &mut Grid<T>, params: &TvL1Params) {
    let (h, w) = i0.dims();
    let n = h * w;
    let lt = T::lit(params.lambda_data * params.theta);
    let theta = T::lit(params.theta);
    let taut = T::lit(params.tau / params.theta);
    let eps2 = T::lit(params.epsilon * params.epsilon);
    let zero_grad = T::lit(GRAD_IS_ZERO);

    let (i1x, i1y) = centered_gradient(i1);
    let max_x = T::lit((w - 1) as f64);
    let max_y = T::lit((h - 1) as f64);
    let mut p11 = vec![T::zero(); n];
    let mut p12 = vec![T::zero(); n];
    let mut p21 = vec![T::zero(); n];
    let mut p22 = vec![T::zero(); n];
    let mut v1 = vec![T::zero(); n];
    let mut v2 = vec![T::zero(); n];
    let mut i1w = vec![T::zero(); n];
    let mut i1wx = vec![T::zero(); n];
    let mut i1wy = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut rho_c = vec![T::zero(); n];
    let mut div1 = vec![T::zero(); n];
    let mut div2 = vec![T::zero(); n];

    for _ in 0..params.warps {
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                let a = u1.data()[k];
                let b = u2.data()[k];
                let sx = T::lit(x as f64) + a;
                let sy = T::lit(y as f64) + b;
                // Matches outside the frame carry no data; regularization fills them.
                if sx < T::zero() || sy < T::zero() || sx > max_x || sy > max_y {
                    i1w[k] = T::zero();
                    i1wx[k] = T::zero();
                    i1wy[k] = T::zero();
                    grad[k] = T::zero();
                    rho_c[k] = T::zero();
                    continue;
                }
                i1w[k] = i1.sample_clamped(sx, sy, 0);
                i1wx[k] = i1x.sample_clamped(sx, sy, 0);
                i1wy[k] = i1y.sample_clamped(sx, sy, 0);
                grad[k] = i1wx[k] * i1wx[k] + i1wy[k] * i1wy[k];
                rho_c[k] = i1w[k] - i1wx[k] * a - i1wy[k] * b - i0.data()[k];
            }
        }

        for _ in 0..params.iterations {
            {
                let a = u1.data();
                let b = u2.data();
                for k in 0..n {
                    let rho = rho_c[k] + i1wx[k] * a[k] + i1wy[k] * b[k];
                    let g = grad[k];
                    let (d1, d2) = if rho < -lt * g {
                        (lt * i1wx[k], lt * i1wy[k])
                    } else if rho > lt * g {
                        (-lt * i1wx[k], -lt * i1wy[k])
                    } else if g < zero_grad {
                        (T::zero(), T::zero())
                    } else {
                        let fi = -rho / g;
                        (fi * i1wx[k], fi * i1wy[k])
                    };
                    v1[k] = a[k] + d1;
                    v2[k] = b[k] + d2;
                }
            }

            divergence(&p11, &p12, h, w, &mut div1);
            divergence(&p21, &p22, h, w, &mut div2);

            let mut error = T::zero();
            {
                let a = u1.data_mut();
                for k in 0..n {
                    let next = v1[k] + theta * div1[k];
                    error = error + (next - a[k]) * (next - a[k]);
                    a[k] = next;
                }
                let b = u2.data_mut();
                for k in 0..n {
                    let next = v2[k] + theta * div2[k];
                    error = error + (next - b[k]) * (next - b[k]);
                    b[k] = next;
                }
            }
            error = error / T::lit(n as f64);

            dual_step(u1.data(), &mut p11, &mut p12, h, w, taut);
            dual_step(u2.data(), &mut p21, &mut p22, h, w, taut);

            if error < eps2 {
                break;
            }
        }
    }
}

/// Forward-difference gradient of `u` feeding the projected dual ascent.
fn dual_step<T: Real>(u: &[T], p1: &mut [T], p2: &mut [T], h: usize, w: usize, taut: T) {
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let ux = if x + 1 < w { u[k + 1] - u[k] } else { T::zero() };
            let uy = if y + 1 < h { u[k + w] - u[k] } else { T::zero() };
            let norm = T::one() + taut * (ux * ux + uy * uy).sqrt();
            p1[k] = (p1[k] + taut * ux) / norm;
            p2[k] = (p2[k] + taut * uy) / norm;
        }
    }
}

/// Backward-difference divergence, the negative adjoint of the forward gradient.
fn divergence<T: Real>(p1: &[T], p2: &[T], h: usize, w: usize, out: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let dx = if w == 1 {
                T::zero()
            } else if x == 0 {
                p1[k]
            } else if x + 1 == w {
                -p1[k - 1]
            } else {
                p1[k] - p1[k - 1]
            };
            let dy = if h == 1 {
                T::zero()
            } else if y == 0 {
                p2[k]
            } else if y + 1 == h {
                -p2[k - w]
            } else {
                p2[k] - p2[k - w]
            };
            out[k] = dx + dy;
        }
    }
}

fn centered_gradient<T: Real>(img: &Grid<T>) -> (Grid<T>, Grid<T>) {
    let (h, w) = img.dims();
    let half = T::lit(0.5);
    let gx = Grid::from_fn(h, w, 1, |y, x, _| {
        let l = img.get(y, x.saturating_sub(1), 0);
        let r = img.get(y, (x + 1).min(w - 1), 0);
        let span = if x == 0 || x + 1 == w { T::one() } else { half };
        if w == 1 { T::zero() } else { (r - l) * span }
    });
    let gy = Grid::from_fn(h, w, 1, |y, x, _| {
        let u = img.get(y.saturating_sub(1), x, 0);
        let d = img.get((y + 1).min(h - 1), x, 0);
        let span = if y == 0 || y + 1 == h { T::one() } else { half };
        if h == 1 { T::zero() } else { (d - u) * span }
    });
    (gx, gy)
}

fn gaussian_blur<T: Real>(img: &Grid<T>, sigma: f64) -> Grid<T> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<T> = (-radius..=radius)
        .map(|i| T::lit((-(i * i) as f64 / (2.0 * sigma * sigma)).exp()))
        .collect();
    let total = kernel.iter().fold(T::zero(), |a, &b| a + b);
    kernel.iter_mut().for_each(|k| *k = *k / total);
    let (h, w) = img.dims();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let horiz = Grid::from_fn(h, w, 1, |y, x, _| {
        kernel.iter().enumerate().fold(T::zero(), |acc, (i, &k)| {
            acc + k * img.get(y, clamp(x as isize + i as isize - radius, w), 0)
        })
    });
    Grid::from_fn(h, w, 1, |y, x, _| {
        kernel.iter().enumerate().fold(T::zero(), |acc, (i, &k)| {
            acc + k * horiz.get(clamp(y as isize + i as isize - radius, h), x, 0)
        })
    })
}

fn downsample<T: Real>(img: &Grid<T>, height: usize, width: usize, scale: f64) -> Grid<T> {
    let sigma = 0.6 * (1.0 / (scale * scale) - 1.0).sqrt();
    let smooth = gaussian_blur(img, sigma);
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    Grid::from_fn(height, width, 1, |y, x, _| {
        smooth.sample_clamped(
            T::lit((x as f64 + 0.5) * sx - 0.5),
            T::lit((y as f64 + 0.5) * sy - 0.5),
            0,
        )
    })
}

fn upsample_flow<T: Real>(u: &Grid<T>, height: usize, width: usize) -> Grid<T> {
    let sy = u.height() as f64 / height as f64;
    let sx = u.width() as f64 / width as f64;
    Grid::from_fn(height, width, 1, |y, x, _| {
        u.sample_clamped(
            T::lit((x as f64 + 0.5) * sx - 0.5),
            T::lit((y as f64 + 0.5) * sy - 0.5),
            0,
        )
    })
}
