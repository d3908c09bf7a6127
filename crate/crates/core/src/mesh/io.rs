//! Plain-text mesh format.
//!
//! ```text
//! # comment
//! nnodes nedges ntris
//! x z              (nnodes lines)
//! n0 n1 tag        (nedges lines, tag: 0 interior, 1 top, 2 bottom, 3 lateral)
//! n0 n1 n2         (ntris lines, counter-clockwise)
//! ```

use std::fmt::Write as _;

use super::{EdgeSource, EdgeTag, MeshError, TriMesh};

pub fn export_mesh(mesh: &TriMesh) -> String {
    let mut out = String::new();
    writeln!(out, "# nnodes nedges ntris").unwrap();
    writeln!(
        out,
        "{} {} {}",
        mesh.n_nodes(),
        mesh.n_edges(),
        mesh.n_cells()
    )
    .unwrap();
    writeln!(out, "# nodes: x z").unwrap();
    for p in mesh.nodes() {
        writeln!(out, "{} {}", p[0], p[1]).unwrap();
    }
    writeln!(out, "# edges: n0 n1 tag").unwrap();
    for (e, pair) in mesh.edges().iter().enumerate() {
        writeln!(out, "{} {} {}", pair[0], pair[1], mesh.tag(e).code()).unwrap();
    }
    writeln!(out, "# triangles: n0 n1 n2").unwrap();
    for t in mesh.triangles() {
        writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next non-empty, comment-stripped line with its 1-based number.
    fn next_record(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            self.last = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            let fields: Vec<&str> = body.split_whitespace().collect();
            if !fields.is_empty() {
                return Some((i + 1, fields));
            }
        }
        None
    }

    fn expect(&mut self, what: &str, count: usize) -> Result<(usize, Vec<&'a str>), MeshError> {
        let (line, fields) = self.next_record().ok_or_else(|| MeshError::Parse {
            line: self.last + 1,
            message: format!("unexpected end of file, expected {what}"),
        })?;
        if fields.len() != count {
            return Err(MeshError::Parse {
                line,
                message: format!("expected {count} fields for {what}, found {}", fields.len()),
            });
        }
        Ok((line, fields))
    }
}

fn parse<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T, MeshError> {
    field.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("cannot parse {what} from `{field}`"),
    })
}

pub fn import_mesh(text: &str) -> Result<TriMesh, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, header) = lines.expect("header `nnodes nedges ntris`", 3)?;
    let nn: usize = parse(header[0], line, "node count")?;
    let ne: usize = parse(header[1], line, "edge count")?;
    let nt: usize = parse(header[2], line, "triangle count")?;

    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let (line, f) = lines.expect("node `x z`", 2)?;
        nodes.push([parse(f[0], line, "x")?, parse(f[1], line, "z")?]);
    }
    let mut edges = Vec::with_capacity(ne);
    let mut edge_lines = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (line, f) = lines.expect("edge `n0 n1 tag`", 3)?;
        let a: usize = parse(f[0], line, "node index")?;
        let b: usize = parse(f[1], line, "node index")?;
        let code: u8 = parse(f[2], line, "tag")?;
        let tag = EdgeTag::from_code(code).ok_or_else(|| MeshError::Parse {
            line,
            message: format!("unknown edge tag {code}"),
        })?;
        if a >= nn || b >= nn {
            return Err(MeshError::Parse {
                line,
                message: format!("dangling node index in edge ({a}, {b})"),
            });
        }
        edges.push(([a, b], tag));
        edge_lines.push(line);
    }
    let mut tris = Vec::with_capacity(nt);
    let mut tri_lines = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, f) = lines.expect("triangle `n0 n1 n2`", 3)?;
        let t = [
            parse(f[0], line, "node index")?,
            parse(f[1], line, "node index")?,
            parse(f[2], line, "node index")?,
        ];
        tris.push(t);
        tri_lines.push(line);
    }
    if let Some((line, _)) = lines.next_record() {
        return Err(MeshError::Parse {
            line,
            message: "trailing data after the declared records".into(),
        });
    }

    TriMesh::new(nodes, tris, EdgeSource::Explicit(edges)).map_err(|err| match err {
        MeshError::Triangle { triangle, message } => MeshError::Parse {
            line: tri_lines[triangle],
            message,
        },
        MeshError::Edge { edge, message } => MeshError::Parse {
            line: edge_lines[edge],
            message,
        },
        other => other,
    })
}
