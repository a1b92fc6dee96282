//! Procrustes alignment and the PA-MPJPE protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::scalar::Real;
use crate::schema::EVAL_JOINT_COUNT;
use crate::types::Pose;

pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

/// Minimum visible keypoints for a frame to count.
pub const MIN_VISIBLE_KEYPOINTS: usize = 7;
const METERS_TO_MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    /// Scale, proper rotation and translation.
    #[default]
    Similarity,
    /// Proper rotation and translation only.
    Rigid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment<T> {
    pub scale: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub aligned: Pose<T>,
}

impl<T: Real> Alignment<T> {
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let r = mat_vec(&self.rotation, p);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }

    /// Sum of squared distances between the aligned source and `target`.
    pub fn residual(&self, target: &Pose<T>) -> T {
        sum_sq_dist(&self.aligned, target)
    }
}

pub fn mat_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

fn scale3<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn column<T: Real>(m: &Mat3<T>, j: usize) -> Vec3<T> {
    [m[0][j], m[1][j], m[2][j]]
}

fn from_columns<T: Real>(c: [Vec3<T>; 3]) -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (j, col) in c.iter().enumerate() {
        for i in 0..3 {
            m[i][j] = col[i];
        }
    }
    m
}

/// A unit vector orthogonal to unit vector `u`.
fn any_perpendicular<T: Real>(u: Vec3<T>) -> Vec3<T> {
    let axis = if u[0].abs() <= u[1].abs() && u[0].abs() <= u[2].abs() {
        [T::one(), T::zero(), T::zero()]
    } else if u[1].abs() <= u[2].abs() {
        [T::zero(), T::one(), T::zero()]
    } else {
        [T::zero(), T::zero(), T::one()]
    };
    let p = cross(u, axis);
    scale3(p, T::one() / norm(p))
}

/// Signed singular decomposition `m = U · diag(σ) · Vᵀ` with `U`, `V`
/// orthonormal, `det U = +1`, `σ₀ ≥ σ₁ ≥ |σ₂|`; the last value carries the
/// sign of `det m · det V`. One-sided Jacobi on the columns of `m`.
pub fn signed_svd3<T: Real>(m: &Mat3<T>) -> (Mat3<T>, Vec3<T>, Mat3<T>) {
    let mut a = *m;
    let mut v = [[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()], [T::zero(), T::zero(), T::one()]];
    let eps = T::epsilon();
    for _sweep in 0..64 {
        let mut rotated = false;
        for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let ai = column(&a, i);
            let aj = column(&a, j);
            let alpha = dot(ai, ai);
            let beta = dot(aj, aj);
            let gamma = dot(ai, aj);
            if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
            let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            for row in a.iter_mut().chain(v.iter_mut()) {
                let (x, y) = (row[i], row[j]);
                row[i] = c * x - s * y;
                row[j] = s * x + c * y;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [norm(column(&a, 0)), norm(column(&a, 1)), norm(column(&a, 2))];
    order.sort_by(|&p, &q| norms[q].partial_cmp(&norms[p]).unwrap_or(std::cmp::Ordering::Equal));
    let cols = [column(&a, order[0]), column(&a, order[1]), column(&a, order[2])];
    let vcols = [column(&v, order[0]), column(&v, order[1]), column(&v, order[2])];

    let s0 = norm(cols[0]);
    let tiny = T::min_positive_value().sqrt();
    let u0 = if s0 > tiny {
        scale3(cols[0], T::one() / s0)
    } else {
        [T::one(), T::zero(), T::zero()]
    };
    let proj = dot(u0, cols[1]);
    let rest = [cols[1][0] - proj * u0[0], cols[1][1] - proj * u0[1], cols[1][2] - proj * u0[2]];
    let rest_norm = norm(rest);
    let u1 = if rest_norm > tiny && rest_norm > eps * s0 {
        scale3(rest, T::one() / rest_norm)
    } else {
        any_perpendicular(u0)
    };
    let u2 = cross(u0, u1);
    let sigma = [s0, dot(u1, cols[1]), dot(u2, cols[2])];
    (from_columns([u0, u1, u2]), sigma, from_columns(vcols))
}

fn centroid<T: Real>(p: &Pose<T>) -> Vec3<T> {
    let mut c = [T::zero(); 3];
    for j in &p.joints {
        for k in 0..3 {
            c[k] = c[k] + j[k];
        }
    }
    scale3(c, T::one() / T::lit(EVAL_JOINT_COUNT as f64))
}

fn sum_sq_dist<T: Real>(a: &Pose<T>, b: &Pose<T>) -> T {
    a.joints.iter().zip(&b.joints).fold(T::zero(), |acc, (p, q)| {
        acc + (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
    })
}

/// Closed-form least-squares similarity (or rigid) transform taking `source` onto `target`.
pub fn procrustes_align<T: Real>(source: &Pose<T>, target: &Pose<T>, mode: AlignMode) -> Result<Alignment<T>, EvalError> {
    if !source.is_finite() || !target.is_finite() {
        return Err(EvalError::NonFinite);
    }
    let mu_x = centroid(source);
    let mu_y = centroid(target);
    let mut cov = [[T::zero(); 3]; 3];
    let mut var_x = T::zero();
    let mut magnitude = T::zero();
    for (x, y) in source.joints.iter().zip(&target.joints) {
        let xc = [x[0] - mu_x[0], x[1] - mu_x[1], x[2] - mu_x[2]];
        let yc = [y[0] - mu_y[0], y[1] - mu_y[1], y[2] - mu_y[2]];
        var_x = var_x + dot(xc, xc);
        magnitude = magnitude + dot(*x, *x);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = cov[i][j] + yc[i] * xc[j];
            }
        }
    }
    if !(var_x > T::epsilon() * magnitude) || var_x == T::zero() {
        return Err(EvalError::Degenerate);
    }

    let (u, sigma, v) = signed_svd3(&cov);
    let d = if det3(&v) < T::zero() { -T::one() } else { T::one() };
    let mut us = u;
    for row in us.iter_mut() {
        row[2] = row[2] * d;
    }
    let rotation = mat_mul(&us, &transpose(&v));
    let scale = match mode {
        AlignMode::Similarity => ((sigma[0] + sigma[1] + d * sigma[2]) / var_x).max(T::zero()),
        AlignMode::Rigid => T::one(),
    };
    let r_mu = mat_vec(&rotation, mu_x);
    let translation = [
        mu_y[0] - scale * r_mu[0],
        mu_y[1] - scale * r_mu[1],
        mu_y[2] - scale * r_mu[2],
    ];
    let mut aligned = *source;
    for j in aligned.joints.iter_mut() {
        let r = mat_vec(&rotation, *j);
        *j = [
            scale * r[0] + translation[0],
            scale * r[1] + translation[1],
            scale * r[2] + translation[2],
        ];
    }
    Ok(Alignment {
        scale,
        rotation,
        translation,
        aligned,
    })
}

fn mean_joint_distance<T: Real>(a: &Pose<T>, b: &Pose<T>) -> T {
    let total = a.joints.iter().zip(&b.joints).fold(T::zero(), |acc, (p, q)| {
        acc + ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    });
    total / T::lit(EVAL_JOINT_COUNT as f64)
}

/// Mean per-joint error without alignment, in millimeters.
pub fn mpjpe<T: Real>(pred: &Pose<T>, gt: &Pose<T>) -> T {
    mean_joint_distance(pred, gt) * T::lit(METERS_TO_MM)
}

/// Mean per-joint error after aligning `pred` onto `gt`, in millimeters.
pub fn pa_mpjpe<T: Real>(pred: &Pose<T>, gt: &Pose<T>) -> Result<T, EvalError> {
    pa_mpjpe_with(pred, gt, AlignMode::Similarity)
}

pub fn pa_mpjpe_with<T: Real>(pred: &Pose<T>, gt: &Pose<T>, mode: AlignMode) -> Result<T, EvalError> {
    let a = procrustes_align(pred, gt, mode)?;
    Ok(mean_joint_distance(&a.aligned, gt) * T::lit(METERS_TO_MM))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFrame<T> {
    pub pose: Pose<T>,
    pub visible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonResult {
    pub person_id: String,
    /// `None` when the person had no usable frame.
    pub mean_pa_mpjpe_mm: Option<f64>,
    pub frames_used: usize,
    pub frames_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_person: Vec<PersonResult>,
    /// Unweighted mean of the per-person means, in millimeters.
    pub dataset_mean_mm: f64,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("person_id\tpa_mpjpe_mm\tframes_used\tframes_skipped\n");
        for p in &self.per_person {
            let mean = p
                .mean_pa_mpjpe_mm
                .map(|m| format!("{m:.1}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!("{}\t{}\t{}\t{}\n", p.person_id, mean, p.frames_used, p.frames_skipped));
        }
        out.push_str(&format!("dataset\t{:.1}\n", self.dataset_mean_mm));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub min_visible: usize,
    pub mode: AlignMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_visible: MIN_VISIBLE_KEYPOINTS,
            mode: AlignMode::Similarity,
        }
    }
}

/// Per-person PA-MPJPE over frames with enough visible keypoints, then the
/// unweighted mean over persons.
pub fn evaluate_dataset<T: Real>(
    predictions: &BTreeMap<String, Vec<Pose<T>>>,
    ground_truth: &BTreeMap<String, Vec<GroundTruthFrame<T>>>,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let pred_ids: BTreeSet<&String> = predictions.keys().collect();
    let gt_ids: BTreeSet<&String> = ground_truth.keys().collect();
    if pred_ids != gt_ids {
        return Err(EvalError::UnmatchedIds {
            only_pred: pred_ids.difference(&gt_ids).map(|s| s.to_string()).collect(),
            only_gt: gt_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut per_person = Vec::with_capacity(predictions.len());
    let mut warnings = Vec::new();
    for (id, preds) in predictions {
        let gts = &ground_truth[id];
        if preds.len() != gts.len() {
            return Err(EvalError::ShapeMismatch(format!(
                "person {id}: {} predicted frames vs {} ground-truth frames",
                preds.len(),
                gts.len()
            )));
        }
        let mut sum = 0.0f64;
        let mut used = 0;
        let mut skipped = 0;
        for (pred, gt) in preds.iter().zip(gts) {
            if gt.visible < options.min_visible {
                skipped += 1;
                continue;
            }
            sum += pa_mpjpe_with(pred, &gt.pose, options.mode)?.to_f64_lossy();
            used += 1;
        }
        let mean = (used > 0).then(|| sum / used as f64);
        if mean.is_none() {
            warnings.push(format!("person {id} has no frame with >= {} visible keypoints; excluded", options.min_visible));
        }
        per_person.push(PersonResult {
            person_id: id.clone(),
            mean_pa_mpjpe_mm: mean,
            frames_used: used,
            frames_skipped: skipped,
        });
    }
    let means: Vec<f64> = per_person.iter().filter_map(|p| p.mean_pa_mpjpe_mm).collect();
    if means.is_empty() {
        return Err(EvalError::NoUsableFrames);
    }
    Ok(EvalReport {
        dataset_mean_mm: means.iter().sum::<f64>() / means.len() as f64,
        per_person,
        warnings,
    })
}

/// One line of a prediction or ground-truth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub person_id: String,
    pub frame_index: usize,
    /// 14 × 3 joints in meters, row-major.
    pub joints: Vec<f64>,
    /// Visible keypoint count; required for ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<usize>,
}

pub fn parse_records(text: &str) -> Result<Vec<PoseRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.joints.len() != EVAL_JOINT_COUNT * 3 {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!("expected 42 joint values, found {}", rec.joints.len()),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Groups records by person, ordered by frame index. Predictions and ground
/// truth must cover the same frame indices per person.
#[allow(clippy::type_complexity)]
pub fn group_records(
    predictions: &[PoseRecord],
    ground_truth: &[PoseRecord],
) -> Result<(BTreeMap<String, Vec<Pose<f64>>>, BTreeMap<String, Vec<GroundTruthFrame<f64>>>), EvalError> {
    fn by_person(records: &[PoseRecord]) -> Result<BTreeMap<String, BTreeMap<usize, &PoseRecord>>, EvalError> {
        let mut map: BTreeMap<String, BTreeMap<usize, &PoseRecord>> = BTreeMap::new();
        for r in records {
            if map.entry(r.person_id.clone()).or_default().insert(r.frame_index, r).is_some() {
                return Err(EvalError::ShapeMismatch(format!(
                    "duplicate frame {} for person {}",
                    r.frame_index, r.person_id
                )));
            }
        }
        Ok(map)
    }
    let preds = by_person(predictions)?;
    let gts = by_person(ground_truth)?;
    let pred_ids: BTreeSet<&String> = preds.keys().collect();
    let gt_ids: BTreeSet<&String> = gts.keys().collect();
    if pred_ids != gt_ids {
        return Err(EvalError::UnmatchedIds {
            only_pred: pred_ids.difference(&gt_ids).map(|s| s.to_string()).collect(),
            only_gt: gt_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut pred_out = BTreeMap::new();
    let mut gt_out = BTreeMap::new();
    for (id, frames) in &preds {
        let gt_frames = &gts[id];
        if frames.keys().ne(gt_frames.keys()) {
            return Err(EvalError::ShapeMismatch(format!("person {id}: frame indices differ between files")));
        }
        pred_out.insert(id.clone(), frames.values().map(|r| Pose::from_flat(&r.joints)).collect());
        let mut gt_list = Vec::with_capacity(gt_frames.len());
        for r in gt_frames.values() {
            let visible = r.visible.ok_or_else(|| {
                EvalError::ShapeMismatch(format!("ground truth for {id} frame {} lacks a visible count", r.frame_index))
            })?;
            gt_list.push(GroundTruthFrame {
                pose: Pose::from_flat(&r.joints),
                visible,
            });
        }
        gt_out.insert(id.clone(), gt_list);
    }
    Ok((pred_out, gt_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(seed: u64) -> Pose<f64> {
        let mut s = seed;
        let vals: Vec<f64> = (0..42)
            .map(|_| {
                s = crate::seed::splitmix64_mix(s.wrapping_add(0x9E37));
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Pose::from_flat(&vals)
    }

    fn rot_z(deg: f64) -> Mat3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    fn transform(p: &Pose<f64>, s: f64, r: &Mat3<f64>, t: Vec3<f64>) -> Pose<f64> {
        let mut out = *p;
        for j in out.joints.iter_mut() {
            let v = mat_vec(r, *j);
            *j = [s * v[0] + t[0], s * v[1] + t[1], s * v[2] + t[2]];
        }
        out
    }

    #[test]
    fn svd_reconstructs() {
        let m: Mat3<f64> = [[1.0, 2.0, 3.0], [-4.0, 0.5, 2.0], [0.3, -0.2, 7.0]];
        let (u, s, v) = signed_svd3(&m);
        let us = mat_mul(&u, &[[s[0], 0.0, 0.0], [0.0, s[1], 0.0], [0.0, 0.0, s[2]]]);
        let back = mat_mul(&us, &transpose(&v));
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - m[i][j]).abs() < 1e-12);
            }
        }
        assert!((det3(&u) - 1.0).abs() < 1e-12);
        assert!(s[0] >= s[1] && s[1] >= s[2].abs());
    }

    #[test]
    fn svd_of_rank_one_and_zero() {
        let m: Mat3<f64> = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]];
        let (u, s, v) = signed_svd3(&m);
        let back = mat_mul(&mat_mul(&u, &[[s[0], 0.0, 0.0], [0.0, s[1], 0.0], [0.0, 0.0, s[2]]]), &transpose(&v));
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - m[i][j]).abs() < 1e-12);
            }
        }
        let (_, s, _) = signed_svd3(&[[0.0f64; 3]; 3]);
        assert_eq!(s, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_alignment() {
        let p = pose(1);
        let a = procrustes_align(&p, &p, AlignMode::Similarity).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a.rotation[i][j] - want).abs() < 1e-12);
            }
            assert!(a.translation[i].abs() < 1e-12);
        }
        assert!(a.residual(&p) < 1e-24);
    }

    #[test]
    fn recovers_exact_similarity() {
        let p = pose(2);
        let q = transform(&p, 2.0, &rot_z(90.0), [0.1, 0.0, 0.0]);
        let a = procrustes_align(&p, &q, AlignMode::Similarity).unwrap();
        assert!(a.residual(&q).sqrt() < 1e-9);
        assert!((a.scale - 2.0).abs() < 1e-12);
        let rt = mat_mul(&transpose(&a.rotation), &a.rotation);
        for i in 0..3 {
            for j in 0..3 {
                assert!((rt[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!((det3(&a.rotation) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reflections_are_excluded() {
        let p = pose(3);
        let mut mirrored = p;
        for j in mirrored.joints.iter_mut() {
            j[0] = -j[0];
        }
        let a = procrustes_align(&p, &mirrored, AlignMode::Similarity).unwrap();
        assert!((det3(&a.rotation) - 1.0).abs() < 1e-12);
        assert!(a.residual(&mirrored) > 1e-6);
    }

    #[test]
    fn rigid_mode_keeps_unit_scale() {
        let p = pose(4);
        let q = transform(&p, 0.5, &rot_z(30.0), [1.0, 2.0, 3.0]);
        let a = procrustes_align(&p, &q, AlignMode::Rigid).unwrap();
        assert_eq!(a.scale, 1.0);
        assert!(pa_mpjpe_with(&p, &q, AlignMode::Rigid).unwrap() > 1.0);
        assert!(pa_mpjpe(&p, &q).unwrap() < 1e-6);
    }

    #[test]
    fn degenerate_source() {
        let p = Pose::new([[0.3f64, 0.1, 2.0]; 14]);
        assert_eq!(procrustes_align(&p, &pose(5), AlignMode::Similarity), Err(EvalError::Degenerate));
        let mut bad = pose(6);
        bad.joints[0][0] = f64::NAN;
        assert_eq!(pa_mpjpe(&bad, &pose(6)), Err(EvalError::NonFinite));
    }

    #[test]
    fn pa_mpjpe_zero_on_self_and_in_millimeters() {
        let p = pose(7);
        assert!(pa_mpjpe(&p, &p).unwrap() < 1e-9);
        let mut q = p;
        for j in q.joints.iter_mut() {
            j[0] += 0.01;
        }
        assert!((mpjpe(&q, &p) - 10.0).abs() < 1e-9);
    }

    fn flat(p: &Pose<f64>) -> Vec<f64> {
        p.joints.iter().flatten().copied().collect()
    }

    #[test]
    fn per_person_averaging_is_unweighted() {
        let gt = pose(8);
        let (pa, pb) = (pose(20), pose(21));
        let ea = pa_mpjpe(&pa, &gt).unwrap();
        let eb = pa_mpjpe(&pb, &gt).unwrap();
        let mut preds = BTreeMap::new();
        preds.insert("a".to_string(), vec![pa; 1]);
        preds.insert("b".to_string(), vec![pb; 9]);
        let mut gts = BTreeMap::new();
        gts.insert("a".to_string(), vec![GroundTruthFrame { pose: gt, visible: 12 }; 1]);
        gts.insert("b".to_string(), vec![GroundTruthFrame { pose: gt, visible: 12 }; 9]);
        let report = evaluate_dataset(&preds, &gts, &EvalOptions::default()).unwrap();
        assert!((report.dataset_mean_mm - (ea + eb) / 2.0).abs() < 1e-9);
        assert_eq!(report.per_person[1].frames_used, 9);
    }

    #[test]
    fn low_visibility_frames_are_skipped() {
        let gt = pose(9);
        let noisy = transform(&pose(10), 1.0, &rot_z(0.0), [0.0; 3]);
        let mut preds = BTreeMap::new();
        preds.insert("p".to_string(), vec![gt, noisy, gt]);
        let mut gts = BTreeMap::new();
        gts.insert(
            "p".to_string(),
            vec![
                GroundTruthFrame { pose: gt, visible: 7 },
                GroundTruthFrame { pose: gt, visible: 6 },
                GroundTruthFrame { pose: gt, visible: 12 },
            ],
        );
        let report = evaluate_dataset(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(report.per_person[0].frames_skipped, 1);
        assert_eq!(report.per_person[0].frames_used, 2);
        assert!(report.dataset_mean_mm < 1e-9);
    }

    #[test]
    fn unusable_person_is_excluded_with_warning() {
        let gt = pose(11);
        let mut preds = BTreeMap::new();
        preds.insert("ok".to_string(), vec![gt]);
        preds.insert("dark".to_string(), vec![gt]);
        let mut gts = BTreeMap::new();
        gts.insert("ok".to_string(), vec![GroundTruthFrame { pose: gt, visible: 12 }]);
        gts.insert("dark".to_string(), vec![GroundTruthFrame { pose: gt, visible: 0 }]);
        let report = evaluate_dataset(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.per_person[0].mean_pa_mpjpe_mm, None);
        assert!(report.to_table().contains("dark\t-\t0\t1"));
    }

    #[test]
    fn record_parsing_and_grouping() {
        let gt = pose(12);
        let line = |id: &str, f: usize, vis: Option<usize>| {
            serde_json::to_string(&PoseRecord { person_id: id.into(), frame_index: f, joints: flat(&gt), visible: vis }).unwrap()
        };
        let preds = parse_records(&format!("{}\n{}\n", line("x", 1, None), line("x", 0, None))).unwrap();
        let gts = parse_records(&format!("{}\n\n{}\n", line("x", 0, Some(9)), line("x", 1, Some(3)))).unwrap();
        let (p, g) = group_records(&preds, &gts).unwrap();
        assert_eq!(p["x"].len(), 2);
        assert_eq!(g["x"][1].visible, 3);

        let other = parse_records(&line("y", 0, Some(9))).unwrap();
        match group_records(&preds, &other) {
            Err(EvalError::UnmatchedIds { only_pred, only_gt }) => {
                assert_eq!(only_pred, vec!["x".to_string()]);
                assert_eq!(only_gt, vec!["y".to_string()]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_records("{\"person_id\":\"a\",\"frame_index\":0,\"joints\":[1.0]}"), Err(EvalError::Parse { line: 1, .. })));
    }
}
