//! OBJ / OFF mesh files and ASCII XYZ point clouds.
//!
//! Coordinates are written with 9 significant digits. Only triangle meshes
//! are supported; texture and normal records in OBJ files are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Face, Mesh, Point3, PointCloud};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("off") => Ok(MeshFormat::Off),
            _ => Err(Error::Config(format!(
                "{}: unknown mesh format (expected .obj or .off)",
                path.display()
            ))),
        }
    }
}

fn fmt_coord(out: &mut String, x: f64) {
    // 9 significant digits
    let _ = write!(out, "{x:.8e}");
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite {what} {tok:?}"),
        });
    }
    Ok(v)
}

fn parse_point<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Point3> {
    Ok([
        parse_f64(toks.next(), line, "x coordinate")?,
        parse_f64(toks.next(), line, "y coordinate")?,
        parse_f64(toks.next(), line, "z coordinate")?,
    ])
}

fn finish(vertices: Vec<Point3>, faces: Vec<Face>, line: usize) -> Result<Mesh> {
    Mesh::new(vertices, faces).map_err(|e| match e {
        Error::InvalidMesh(msg) => Error::Parse { line, msg },
        other => other,
    })
}

/// Parse Wavefront OBJ text (`v` and `f` records, 1-based or negative indices).
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => vertices.push(parse_point(toks, line)?),
            Some("f") => {
                let refs: Vec<&str> = toks.collect();
                if refs.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face with {} vertices", refs.len()),
                    });
                }
                if refs.len() > 3 {
                    return Err(Error::UnsupportedTopology {
                        line,
                        msg: format!("{}-sided face; only triangles are supported", refs.len()),
                    });
                }
                let mut face = [0usize; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let idx_tok = r.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("invalid face index {r:?}"),
                    })?;
                    let n = vertices.len() as i64;
                    let resolved = match idx {
                        0 => -1,
                        i if i > 0 => i - 1,
                        i => n + i,
                    };
                    if resolved < 0 || resolved >= n {
                        return Err(Error::Parse {
                            line,
                            msg: format!("face index {idx} out of range ({n} vertices so far)"),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    finish(vertices, faces, last_line)
}

/// Parse OFF text. The counts may follow the `OFF` keyword on the same line.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let rest = header.strip_prefix("OFF").ok_or_else(|| Error::Parse {
        line,
        msg: "missing OFF header".into(),
    })?;
    let (count_line, counts) = if rest.trim().is_empty() {
        lines.next().ok_or(Error::Parse {
            line,
            msg: "missing element counts".into(),
        })?
    } else {
        (line, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: count_line,
            msg: format!("invalid element counts {counts:?}"),
        })?;
    if counts.len() < 2 {
        return Err(Error::Parse {
            line: count_line,
            msg: "expected vertex and face counts".into(),
        });
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    let mut last_line = count_line;
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or(Error::Parse {
            line: last_line + 1,
            msg: format!("expected {nv} vertices, found {}", vertices.len()),
        })?;
        last_line = line;
        vertices.push(parse_point(l.split_whitespace(), line)?);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines.next().ok_or(Error::Parse {
            line: last_line + 1,
            msg: format!("expected {nf} faces, found {}", faces.len()),
        })?;
        last_line = line;
        let nums: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line,
                msg: format!("invalid face record {l:?}"),
            })?;
        let (&k, idx) = nums.split_first().ok_or(Error::Parse {
            line,
            msg: "empty face record".into(),
        })?;
        if k != 3 {
            return Err(Error::UnsupportedTopology {
                line,
                msg: format!("{k}-sided face; only triangles are supported"),
            });
        }
        if idx.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: "face record has fewer indices than declared".into(),
            });
        }
        if let Some(&bad) = idx[..3].iter().find(|&&i| i >= nv) {
            return Err(Error::Parse {
                line,
                msg: format!("face index {bad} out of range ({nv} vertices)"),
            });
        }
        faces.push([idx[0], idx[1], idx[2]]);
    }
    finish(vertices, faces, last_line)
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices().len() * 48 + mesh.faces().len() * 24);
    for v in mesh.vertices() {
        out.push('v');
        for &c in v {
            out.push(' ');
            fmt_coord(&mut out, c);
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn format_off(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices().len() * 48 + mesh.faces().len() * 24);
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.vertices().len(), mesh.faces().len());
    for v in mesh.vertices() {
        for (k, &c) in v.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            fmt_coord(&mut out, c);
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    match format {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Off => parse_off(&text),
    }
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let path = path.as_ref();
    let text = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => format_obj(mesh),
        MeshFormat::Off => format_off(mesh),
    };
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        points.push(parse_point(content.split_whitespace(), i + 1)?);
    }
    PointCloud::new(points)
}

pub fn format_xyz(points: &[Point3]) -> String {
    let mut out = String::with_capacity(points.len() * 48);
    for p in points {
        for (k, &c) in p.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            fmt_coord(&mut out, c);
        }
        out.push('\n');
    }
    out
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_xyz(&text)
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud.points())).map_err(|e| Error::file(path, e))
}
