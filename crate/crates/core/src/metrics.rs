//! Quantitative evaluation: nearest-neighbor alignment metrics over frame
//! embeddings, rank correlation, depth correlation with Fisher averaging,
//! and Procrustes disparity for camera trajectories.

use crate::error::{Error, Result};
use crate::geometry::CameraExtrinsics;
use nalgebra::Matrix3;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub alignment_error: f64,
    pub cycle_error: f64,
    pub kendall_tau: f64,
    /// j(i): nearest neighbor of u_i among v.
    pub nn_map_ab: Vec<usize>,
    /// k(i): nearest neighbor of v_{j(i)} back among u.
    pub nn_map_ba: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityReport {
    pub position_disparity: f64,
    pub orientation_disparity: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(query: &[f64], rows: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (t, row) in rows.iter().enumerate() {
        let d = sq_dist(query, row);
        if d < best_d {
            best_d = d;
            best = t;
        }
    }
    best
}

/// Nearest-neighbor maps between two equally long embedding sequences:
/// j(i) = argmin_t |u_i - v_t|, then k(i) = argmin_t |v_{j(i)} - u_t|.
/// Ties break toward the lowest index.
pub fn nn_align(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<usize>)> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::InvalidArgument("nn_align on empty sequence".into()));
    }
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "nn_align length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let j: Vec<usize> = u.iter().map(|ui| nearest(ui, v)).collect();
    let k: Vec<usize> = j.iter().map(|&ji| nearest(&v[ji], u)).collect();
    Ok((j, k))
}

/// Mean over i of |i - j(i)| / N.
pub fn alignment_error(j_map: &[usize], n: usize) -> f64 {
    let total: f64 = j_map
        .iter()
        .enumerate()
        .map(|(i, &j)| (i as f64 - j as f64).abs())
        .sum();
    total / j_map.len() as f64 / n as f64
}

/// Mean over i of |i - k(i)| / N; zero when every round trip is
/// cycle-consistent (k(i) = i).
pub fn cycle_error(k_map: &[usize], n: usize) -> f64 {
    alignment_error(k_map, n)
}

/// Rank correlation of the nearest-neighbor frame ordering:
/// (#concordant - #discordant) / (N (N-1) / 2). Pairs whose neighbors
/// coincide count as neither.
pub fn kendall_tau(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::InvalidArgument(
            "kendall_tau needs at least 2 frames".into(),
        ));
    }
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "kendall_tau length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nn: Vec<usize> = u.iter().map(|ui| nearest(ui, v)).collect();
    let n = u.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if nn[i] < nn[j] {
                concordant += 1;
            } else if nn[i] > nn[j] {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((concordant - discordant) as f64 / pairs)
}

/// Full alignment report for one video pair, measured in the U -> V
/// direction.
pub fn align_report(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<AlignmentReport> {
    let (j, k) = nn_align(u, v)?;
    let n = u.len();
    Ok(AlignmentReport {
        alignment_error: alignment_error(&j, n),
        cycle_error: cycle_error(&k, n),
        kendall_tau: kendall_tau(u, v)?,
        nn_map_ab: j,
        nn_map_ba: k,
    })
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson_r needs two equal sequences of length >= 2, got {} / {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate(
            "degenerate map: zero variance in pearson_r input".into(),
        ));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Fisher-z average of correlations: tanh(mean(atanh(r_i))).
pub fn fisher_mean_r(rs: &[f64]) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::InvalidArgument("fisher_mean_r of nothing".into()));
    }
    let mut z = 0.0;
    for &r in rs {
        if r.abs() >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "fisher_mean_r requires |r| < 1, got {r}"
            )));
        }
        z += r.atanh();
    }
    Ok((z / rs.len() as f64).tanh())
}

/// Procrustes disparity between two point sets in correspondence: both are
/// centered and scaled to unit Frobenius norm, the optimal orthogonal
/// alignment (reflections permitted) with optimal scale is applied, and
/// the summed squared residual is returned. Ranges over [0, 1];
/// 0 means the sets agree up to a similarity transform.
pub fn procrustes_disparity(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "procrustes length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(
            "procrustes needs at least 3 points".into(),
        ));
    }
    let xs = standardize(x)?;
    let ys = standardize(y)?;
    // cross-covariance of the standardized sets
    let mut m = [[0.0; 3]; 3];
    for (px, py) in xs.iter().zip(&ys) {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += px[i] * py[j];
            }
        }
    }
    let mat = Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    );
    let s: f64 = mat.svd(false, false).singular_values.iter().sum();
    // with both sets at unit norm, the aligned residual is 1 - s^2
    Ok((1.0 - s * s).clamp(0.0, 1.0))
}

fn standardize(points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d] / n;
        }
    }
    let mut out: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect();
    let norm: f64 = out
        .iter()
        .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        .sum::<f64>()
        .sqrt();
    if norm < 1e-12 {
        return Err(Error::Degenerate(
            "procrustes: all points coincident".into(),
        ));
    }
    for p in out.iter_mut() {
        for d in 0..3 {
            p[d] /= norm;
        }
    }
    Ok(out)
}

/// Camera-trajectory disparity: Procrustes over camera centers and over
/// unit looking-at vectors.
pub fn camera_eval(
    est: &[CameraExtrinsics],
    gt: &[CameraExtrinsics],
) -> Result<DisparityReport> {
    if est.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "camera_eval length mismatch: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    let centers = |seq: &[CameraExtrinsics]| -> Vec<[f64; 3]> {
        seq.iter().map(|e| e.center().to_array()).collect()
    };
    let lookats = |seq: &[CameraExtrinsics]| -> Vec<[f64; 3]> {
        seq.iter().map(|e| e.looking_at()).collect()
    };
    Ok(DisparityReport {
        position_disparity: procrustes_disparity(&centers(est), &centers(gt))?,
        orientation_disparity: procrustes_disparity(&lookats(est), &lookats(gt))?,
    })
}
