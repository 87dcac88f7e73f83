//! OFF mesh text format, as distributed with ModelNet.

use std::fmt::Write;

use crate::geometry::TriMesh;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OffErrorKind {
    #[error("missing `OFF` header")]
    MissingHeader,
    #[error("expected a number, found `{0}`")]
    NonNumeric(String),
    #[error("header needs vertex and face counts")]
    MissingCounts,
    #[error("declared {expected} {what} but found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("vertex line has {0} coordinates, need 3")]
    ShortVertex(usize),
    #[error("face declares {declared} vertices but lists {listed}")]
    ShortFace { declared: usize, listed: usize },
    #[error("face with {0} vertices; need at least 3")]
    DegenerateFace(usize),
    #[error("face index {index} out of range for {vertices} vertices")]
    FaceIndex { index: usize, vertices: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("OFF line {line}: {kind}")]
pub struct OffError {
    pub line: usize,
    pub kind: OffErrorKind,
}

fn err(line: usize, kind: OffErrorKind) -> OffError {
    OffError { line, kind }
}

fn number<N: std::str::FromStr>(line: usize, tok: &str) -> Result<N, OffError> {
    tok.parse()
        .map_err(|_| err(line, OffErrorKind::NonNumeric(tok.to_string())))
}

/// Parses OFF text into a triangle mesh. Accepts the `OFF492 1000 0`
/// variant where the counts are glued to the header; polygons are
/// fan-triangulated around their first vertex.
pub fn parse_off<T: Scalar>(text: &str) -> Result<TriMesh<T>, OffError> {
    // (1-based line number, tokens) for every line with content
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    });

    let (hline, htoks) = lines.next().ok_or(err(1, OffErrorKind::MissingHeader))?;
    let first = htoks[0];
    let glued = first
        .strip_prefix("OFF")
        .ok_or(err(hline, OffErrorKind::MissingHeader))?;
    let mut count_toks: Vec<&str> = Vec::new();
    if !glued.is_empty() {
        count_toks.push(glued);
    }
    count_toks.extend(&htoks[1..]);
    let count_line = if count_toks.is_empty() {
        let (l, toks) = lines.next().ok_or(err(hline + 1, OffErrorKind::MissingCounts))?;
        count_toks = toks;
        l
    } else {
        hline
    };
    if count_toks.len() < 2 {
        return Err(err(count_line, OffErrorKind::MissingCounts));
    }
    let nv: usize = number(count_line, count_toks[0])?;
    let nf: usize = number(count_line, count_toks[1])?;

    let mut last_line = count_line;
    let mut vertices = Vec::with_capacity(nv);
    for found in 0..nv {
        let (l, toks) = lines.next().ok_or(err(
            last_line + 1,
            OffErrorKind::CountMismatch {
                what: "vertices",
                expected: nv,
                found,
            },
        ))?;
        last_line = l;
        if toks.len() < 3 {
            return Err(err(l, OffErrorKind::ShortVertex(toks.len())));
        }
        let mut p = [T::zero(); 3];
        for (c, tok) in p.iter_mut().zip(&toks) {
            *c = T::lit(number::<f64>(l, tok)?);
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(nf);
    for found in 0..nf {
        let (l, toks) = lines.next().ok_or(err(
            last_line + 1,
            OffErrorKind::CountMismatch {
                what: "faces",
                expected: nf,
                found,
            },
        ))?;
        last_line = l;
        let arity: usize = number(l, toks[0])?;
        if arity < 3 {
            return Err(err(l, OffErrorKind::DegenerateFace(arity)));
        }
        if toks.len() < arity + 1 {
            return Err(err(
                l,
                OffErrorKind::ShortFace {
                    declared: arity,
                    listed: toks.len() - 1,
                },
            ));
        }
        // tokens past the index list (per-face colors) are ignored
        let mut idx = Vec::with_capacity(arity);
        for tok in &toks[1..=arity] {
            let i: usize = number(l, tok)?;
            if i >= nv {
                return Err(err(l, OffErrorKind::FaceIndex { index: i, vertices: nv }));
            }
            idx.push(i);
        }
        for j in 1..arity - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }

    if let Some((l, _)) = lines.next() {
        return Err(err(
            l,
            OffErrorKind::CountMismatch {
                what: "faces",
                expected: nf,
                found: nf + 1,
            },
        ));
    }
    Ok(TriMesh { vertices, faces })
}

/// Emits OFF text that [`parse_off`] reads back exactly (shortest
/// round-trip decimal for every coordinate).
pub fn write_off<T: Scalar>(mesh: &TriMesh<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let [x, y, z] = v.map(|c| c.to_f64_lossless());
        let _ = writeln!(out, "{x:?} {y:?} {z:?}");
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}
