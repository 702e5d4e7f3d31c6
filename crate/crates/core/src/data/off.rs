use std::fmt::Write;

use crate::error::{Error, Result};

/// Triangle mesh; polygons are fan-triangulated on load.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::invalid(format!(
                "face {f:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * cross.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses an OFF document.
///
/// Comments (`#` to end of line) and blank lines are skipped. The counts
/// may share the header line (`OFF 8 6 0` or `OFF8 6 0`). Faces with more
/// than three vertices are fanned from their first vertex; trailing colour
/// values on a face line are ignored.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "empty document"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(header_line, format!("expected OFF header, found {header:?}")))?
        .trim();
    let (counts_line, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(header_line + 1, "missing counts line"))?
    } else {
        (header_line, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(counts_line, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(counts_line, "counts line needs vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(counts_line, format!("expected {nv} vertices, found {}", vertices.len())))?;
        let coords: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad coordinate {t:?}"))))
            .collect::<Result<_>>()?;
        if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(ln, "vertex needs three finite coordinates"));
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for read in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(counts_line, format!("expected {nf} faces, found {read}")))?;
        let mut tokens = l.split_whitespace();
        let k: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "face line must start with a vertex count"))?;
        if k < 3 {
            return Err(parse_err(ln, format!("face with {k} vertices")));
        }
        let idx: Vec<usize> = tokens
            .by_ref()
            .take(k)
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad vertex index {t:?}"))))
            .collect::<Result<_>>()?;
        if idx.len() != k {
            return Err(parse_err(ln, format!("face declares {k} vertices but lists {}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range for {nv} vertices")));
        }
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected content after the declared faces"));
    }
    TriangleMesh::new(vertices, faces)
}

/// Writes a mesh as OFF; [`parse_off`] reads it back exactly.
pub fn emit_off(mesh: &TriangleMesh) -> String {
    let mut s = String::from("OFF\n");
    let _ = writeln!(s, "{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}
