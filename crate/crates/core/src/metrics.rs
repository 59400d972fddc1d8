//! Trajectory error metrics: absolute pose error after alignment, relative
//! scale error and gravity direction error.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Rotation, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    /// Rigid alignment.
    #[serde(rename = "se3_align")]
    Se3,
    /// Rigid alignment with a scale factor.
    #[serde(rename = "sim3_align")]
    Sim3,
    #[serde(rename = "none")]
    None,
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::Se3 => "se3_align",
            Alignment::Sim3 => "sim3_align",
            Alignment::None => "none",
        })
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se3_align" | "se3" => Ok(Alignment::Se3),
            "sim3_align" | "sim3" => Ok(Alignment::Sim3),
            "none" => Ok(Alignment::None),
            _ => Err(Error::invalid(format!("unknown alignment mode '{s}'"))),
        }
    }
}

/// Translational error statistics (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApeStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub max: f64,
    pub matched: usize,
    pub alignment: Alignment,
}

/// Similarity `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p * self.scale + self.translation
    }
}

/// Closed-form least-squares similarity (or rigid transform when
/// `with_scale` is false) taking `src` onto `dst`.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::invalid("point sets differ in length"));
    }
    if src.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 point pairs, got {}", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vec3>() / n;
    let mu_d = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("computed"), svd.v_t.expect("computed"));
    let mut d = Mat3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = if with_scale {
        if !(var_s > 0.0) {
            return Err(Error::invalid("source points are coincident; scale undefined"));
        }
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let rotation = Rotation::from_matrix_unchecked(r);
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}

fn median_step(times: &[f64]) -> f64 {
    let mut d: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Pairs each ground-truth sample with the nearest estimate, keeping pairs
/// closer than half the ground-truth sample period. Both inputs must be
/// sorted by time.
pub fn associate(est: &[f64], gt: &[f64]) -> Vec<(usize, usize)> {
    let tol = 0.5 * median_step(gt) + 1e-9;
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, &t) in gt.iter().enumerate() {
        if est.is_empty() {
            break;
        }
        while j + 1 < est.len() && (est[j + 1] - t).abs() <= (est[j] - t).abs() {
            j += 1;
        }
        if (est[j] - t).abs() <= tol {
            pairs.push((j, i));
        }
    }
    pairs
}

fn matched_positions(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let te: Vec<f64> = est.iter().map(|x| x.0).collect();
    let tg: Vec<f64> = gt.iter().map(|x| x.0).collect();
    let pairs = associate(&te, &tg);
    if pairs.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} timestamp matches between trajectories; need at least 3",
            pairs.len()
        )));
    }
    Ok(pairs
        .iter()
        .map(|&(i, j)| (est[i].1.translation, gt[j].1.translation))
        .unzip())
}

/// Alignment of `est` onto `gt` under the given mode.
pub fn align(est: &[(f64, Pose)], gt: &[(f64, Pose)], mode: Alignment) -> Result<Similarity> {
    let (e, g) = matched_positions(est, gt)?;
    match mode {
        Alignment::None => Ok(Similarity::identity()),
        Alignment::Se3 => umeyama(&e, &g, false),
        Alignment::Sim3 => umeyama(&e, &g, true),
    }
}

/// Absolute translational error of `est` against `gt` after alignment.
pub fn ape(est: &[(f64, Pose)], gt: &[(f64, Pose)], mode: Alignment) -> Result<ApeStats> {
    let (e, g) = matched_positions(est, gt)?;
    let sim = match mode {
        Alignment::None => Similarity::identity(),
        Alignment::Se3 => umeyama(&e, &g, false)?,
        Alignment::Sim3 => umeyama(&e, &g, true)?,
    };
    let mut errs: Vec<f64> = e.iter().zip(&g).map(|(a, b)| (sim.apply(a) - b).norm()).collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let std = (errs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    let median = if m % 2 == 1 {
        errs[m / 2]
    } else {
        0.5 * (errs[m / 2 - 1] + errs[m / 2])
    };
    Ok(ApeStats {
        mean,
        median,
        std,
        max: errs[m - 1],
        matched: m,
        alignment: mode,
    })
}

/// `|λ_gt − λ| / λ_gt`.
pub fn scale_error(lambda_opt: f64, lambda_gt: f64) -> Result<f64> {
    if !(lambda_gt > 0.0) || !lambda_gt.is_finite() {
        return Err(Error::invalid(format!("reference scale must be positive, got {lambda_gt}")));
    }
    Ok((lambda_gt - lambda_opt).abs() / lambda_gt)
}

/// Angle between two gravity vectors, in degrees.
pub fn gravity_error(g_opt: &Vec3, g_gt: &Vec3) -> Result<f64> {
    if !(g_opt.norm() > 0.0 && g_gt.norm() > 0.0) {
        return Err(Error::invalid("gravity vectors must be nonzero"));
    }
    Ok(g_opt.cross(g_gt).norm().atan2(g_opt.dot(g_gt)).to_degrees())
}

/// Scale of the similarity taking the VO camera positions onto metric ground
/// truth.
pub fn reference_scale(vo: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<f64> {
    Ok(align(vo, gt, Alignment::Sim3)?.scale)
}

/// Rotation `R` minimizing `Σ‖R·R_est,i − R_gt,i‖²_F` over matched samples:
/// the frame change taking estimated orientations onto ground truth.
pub fn rotation_alignment(est: &[(f64, Pose)], gt: &[(f64, Pose)]) -> Result<Rotation> {
    let te: Vec<f64> = est.iter().map(|x| x.0).collect();
    let tg: Vec<f64> = gt.iter().map(|x| x.0).collect();
    let pairs = associate(&te, &tg);
    if pairs.is_empty() {
        return Err(Error::invalid("no timestamp matches between trajectories"));
    }
    let mut m = Mat3::zeros();
    for (i, j) in pairs {
        m += gt[j].1.rotation.matrix() * est[i].1.rotation.matrix().transpose();
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("computed"), svd.v_t.expect("computed"));
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(u * d * v_t))
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ape: ApeStats,
    pub err_lambda: f64,
    pub err_g_deg: f64,
    pub lambda_opt: f64,
    pub lambda_gt: f64,
    /// APE of the similarity-aligned VO track, when available.
    pub vo_ape: Option<ApeStats>,
}
