//! Line-oriented pose-graph text format.
//!
//! ```text
//! NODE id tx ty tz qw qx qy qz
//! EDGE_SE3 from to tx ty tz qw qx qy qz c00 c01 … c55   (21 upper-tri floats)
//! EDGE_ROT from to qw qx qy qz c00 c01 c02 c11 c12 c22  (6 upper-tri floats)
//! ```
//!
//! Poses are world-frame for nodes and to-from relative for edges;
//! covariances are row-major upper triangles. Floats are written with
//! shortest-roundtrip formatting, so write → read is bit-exact.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector4};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::se3::PoseSE3;
use crate::so3::UnitQuaternion;
use crate::uncertainty::CovSO3;

use super::{OdomEdge, PoseGraph, RotEdge};

fn parse_floats(parts: &[&str], line: usize) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("bad float {p:?}: {e}"),
            })
        })
        .collect()
}

fn parse_id(part: &str, line: usize) -> Result<usize> {
    part.parse::<usize>()
        .map_err(|e| Error::Parse { line, message: format!("bad node id {part:?}: {e}") })
}

fn pose_from_floats(v: &[f64], line: usize) -> Result<PoseSE3> {
    let rotation = UnitQuaternion::normalize(Vector4::new(v[3], v[4], v[5], v[6]))
        .map_err(|e| Error::Parse { line, message: format!("bad quaternion: {e}") })?;
    Ok(PoseSE3::new(rotation, Vector3::new(v[0], v[1], v[2])))
}

fn upper_tri_6(v: &[f64]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

fn upper_tri_3(v: &[f64]) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    let mut k = 0;
    for i in 0..3 {
        for j in i..3 {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Parses a pose graph; the fixed node is the smallest node id.
pub fn read_graph<R: BufRead>(reader: R) -> Result<PoseGraph> {
    let mut graph = PoseGraph::default();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        match parts[0] {
            "NODE" => {
                if parts.len() != 9 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("NODE expects 8 fields, got {}", parts.len() - 1),
                    });
                }
                let id = parse_id(parts[1], line_no)?;
                let v = parse_floats(&parts[2..], line_no)?;
                graph.nodes.insert(id, pose_from_floats(&v, line_no)?);
            }
            "EDGE_SE3" => {
                if parts.len() != 3 + 7 + 21 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("EDGE_SE3 expects 30 fields, got {}", parts.len() - 1),
                    });
                }
                let from = parse_id(parts[1], line_no)?;
                let to = parse_id(parts[2], line_no)?;
                let v = parse_floats(&parts[3..], line_no)?;
                let transform = pose_from_floats(&v[..7], line_no)?;
                let cov = upper_tri_6(&v[7..]);
                graph.odom_edges.push(
                    OdomEdge::new(from, to, transform, cov).map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad covariance: {e}"),
                    })?,
                );
            }
            "EDGE_ROT" => {
                if parts.len() != 3 + 4 + 6 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("EDGE_ROT expects 13 fields, got {}", parts.len() - 1),
                    });
                }
                let from = parse_id(parts[1], line_no)?;
                let to = parse_id(parts[2], line_no)?;
                let v = parse_floats(&parts[3..], line_no)?;
                let rotation = UnitQuaternion::normalize(Vector4::new(v[0], v[1], v[2], v[3]))
                    .map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad quaternion: {e}"),
                    })?;
                let cov = CovSO3::new(upper_tri_3(&v[4..])).map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad covariance: {e}"),
                })?;
                graph.rot_edges.push(RotEdge { from, to, rotation, cov });
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown record {other:?}"),
                });
            }
        }
    }
    graph.fixed = graph.nodes.keys().next().copied().unwrap_or(0);
    Ok(graph)
}

fn write_pose<W: Write>(w: &mut W, pose: &PoseSE3) -> Result<()> {
    let t = pose.translation;
    let q = pose.rotation;
    write!(w, "{} {} {} {} {} {} {}", t[0], t[1], t[2], q.w(), q.x(), q.y(), q.z())?;
    Ok(())
}

/// Writes a pose graph in the line format above.
pub fn write_graph<W: Write>(w: &mut W, graph: &PoseGraph) -> Result<()> {
    for (id, pose) in &graph.nodes {
        write!(w, "NODE {id} ")?;
        write_pose(w, pose)?;
        writeln!(w)?;
    }
    for e in &graph.odom_edges {
        write!(w, "EDGE_SE3 {} {} ", e.from, e.to)?;
        write_pose(w, &e.transform)?;
        for i in 0..6 {
            for j in i..6 {
                write!(w, " {}", e.cov[(i, j)])?;
            }
        }
        writeln!(w)?;
    }
    for e in &graph.rot_edges {
        let q = e.rotation;
        write!(w, "EDGE_ROT {} {} {} {} {} {}", e.from, e.to, q.w(), q.x(), q.y(), q.z())?;
        let m = e.cov.matrix();
        for i in 0..3 {
            for j in i..3 {
                write!(w, " {}", m[(i, j)])?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes a trajectory as NODE lines.
pub fn write_trajectory<W: Write>(w: &mut W, trajectory: &[(usize, PoseSE3)]) -> Result<()> {
    for (id, pose) in trajectory {
        write!(w, "NODE {id} ")?;
        write_pose(w, pose)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads NODE lines into an id-ordered trajectory.
pub fn read_trajectory<R: BufRead>(reader: R) -> Result<Vec<(usize, PoseSE3)>> {
    let graph = read_graph(reader)?;
    Ok(graph.nodes.into_iter().collect())
}
