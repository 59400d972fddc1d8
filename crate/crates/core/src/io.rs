//! Trajectory CSV files.
//!
//! Header `t,tx,ty,tz,qx,qy,qz,qw` optionally followed by
//! `ax,ay,az,wx,wy,wz,alx,aly,alz` (world linear acceleration, body angular
//! velocity, body angular acceleration). Numbers are written in shortest
//! round-trip form, quaternions with `qw >= 0`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation, Vec3};
use crate::spline::KinematicSample;

const POSE_COLUMNS: [&str; 8] = ["t", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
const KINEMATIC_COLUMNS: [&str; 9] = ["ax", "ay", "az", "wx", "wy", "wz", "alx", "aly", "alz"];

pub fn header(kinematics: bool) -> String {
    let mut cols: Vec<&str> = POSE_COLUMNS.to_vec();
    if kinematics {
        cols.extend(KINEMATIC_COLUMNS);
    }
    cols.join(",")
}

pub fn trajectory_to_csv(samples: &[KinematicSample], kinematics: bool) -> String {
    let mut out = header(kinematics);
    out.push('\n');
    for s in samples {
        let q = s.pose.rotation.to_quaternion();
        let p = s.pose.translation;
        let mut row = vec![s.t, p.x, p.y, p.z, q.i, q.j, q.k, q.w];
        if kinematics {
            row.extend(s.acceleration.iter());
            row.extend(s.angular_velocity.iter());
            row.extend(s.angular_acceleration.iter());
        }
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Parses a trajectory CSV. Velocity is not stored and comes back as zero,
/// as do the kinematic columns when the file has none.
pub fn trajectory_from_csv(text: &str, context: &str) -> Result<Vec<KinematicSample>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        context: format!("{context}:{line}"),
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    let kinematics = if cols == header(false).split(',').collect::<Vec<_>>() {
        false
    } else if cols == header(true).split(',').collect::<Vec<_>>() {
        true
    } else {
        return Err(parse_err(1, format!("unexpected header '{head}', expected '{}[,...]'", header(false))));
    };
    let width = cols.len();
    let mut samples = Vec::new();
    for (i, line) in lines {
        let values = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        if values.len() != width {
            return Err(parse_err(i + 1, format!("expected {width} fields, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(i + 1, "non-finite value".into()));
        }
        let q = Quaternion::new(values[7], values[4], values[5], values[6]);
        if !(q.norm() > 1e-6) {
            return Err(parse_err(i + 1, "zero quaternion".into()));
        }
        let rotation = Rotation::from_quaternion(&UnitQuaternion::from_quaternion(q));
        let mut s = KinematicSample::at_rest(values[0], Pose::new(rotation, Vec3::new(values[1], values[2], values[3])));
        if kinematics {
            s.acceleration = Vec3::new(values[8], values[9], values[10]);
            s.angular_velocity = Vec3::new(values[11], values[12], values[13]);
            s.angular_acceleration = Vec3::new(values[14], values[15], values[16]);
        }
        if let Some(prev) = samples.last().map(|p: &KinematicSample| p.t) {
            if !(s.t > prev) {
                return Err(parse_err(i + 1, "timestamps must be strictly increasing".into()));
            }
        }
        samples.push(s);
    }
    Ok(samples)
}

pub fn write_trajectory(path: impl AsRef<Path>, samples: &[KinematicSample], kinematics: bool) -> Result<()> {
    write_text(path, &trajectory_to_csv(samples, kinematics))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<KinematicSample>> {
    let path = path.as_ref();
    trajectory_from_csv(&read_text(path)?, &path.display().to_string())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating missing parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
