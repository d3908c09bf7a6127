//! Conforming triangulations of vertical soil sections.
//!
//! Local edge `i` of a triangle is the edge opposite its local vertex `i`.
//! Every edge carries one global unit normal: for an interior edge it is the
//! outward normal of the lower-indexed adjacent triangle, for a boundary edge
//! it is the outward normal of the domain. `cell_signs` relates the two:
//! `+1` when the global normal is the cell's outward normal, `-1` otherwise.

mod generate;
mod io;

pub use generate::{build_profile_mesh, build_rectangle_mesh, Polyline};
pub use io::{export_mesh, import_mesh};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid mesh configuration: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {triangle}: {message}")]
    Triangle { triangle: usize, message: String },
    #[error("edge {edge}: {message}")]
    Edge { edge: usize, message: String },
}

/// Boundary classification of an edge. Numeric values match the mesh file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    Interior = 0,
    Top = 1,
    Bottom = 2,
    Lateral = 3,
}

impl EdgeTag {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Interior),
            1 => Some(Self::Top),
            2 => Some(Self::Bottom),
            3 => Some(Self::Lateral),
            _ => None,
        }
    }
}

type EdgePredicate = Box<dyn Fn(Point, Point) -> bool + Send + Sync>;

/// Assigns a tag to each boundary edge from its midpoint and outward normal.
/// Exactly one predicate must hold for every boundary edge.
pub struct BoundaryClassifier {
    top: EdgePredicate,
    bottom: EdgePredicate,
    lateral: EdgePredicate,
}

impl BoundaryClassifier {
    pub fn new(
        top: impl Fn(Point, Point) -> bool + Send + Sync + 'static,
        bottom: impl Fn(Point, Point) -> bool + Send + Sync + 'static,
        lateral: impl Fn(Point, Point) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            top: Box::new(top),
            bottom: Box::new(bottom),
            lateral: Box::new(lateral),
        }
    }

    /// Tags an axis-aligned box `[x0, x1] x [z0, z1]`.
    pub fn rectangle(x0: f64, x1: f64, z0: f64, z1: f64) -> Self {
        let tol = 1e-9 * (x1 - x0).abs().max((z1 - z0).abs());
        Self::new(
            move |m, _| (m[1] - z1).abs() <= tol,
            move |m, _| (m[1] - z0).abs() <= tol,
            move |m, _| {
                ((m[0] - x0).abs() <= tol || (m[0] - x1).abs() <= tol)
                    && (m[1] - z1).abs() > tol
                    && (m[1] - z0).abs() > tol
            },
        )
    }

    pub fn classify(&self, midpoint: Point, normal: Point) -> Option<EdgeTag> {
        let hits = [
            ((self.top)(midpoint, normal), EdgeTag::Top),
            ((self.bottom)(midpoint, normal), EdgeTag::Bottom),
            ((self.lateral)(midpoint, normal), EdgeTag::Lateral),
        ];
        let mut found = None;
        for (hit, tag) in hits {
            if hit {
                if found.is_some() {
                    return None;
                }
                found = Some(tag);
            }
        }
        found
    }
}

/// How edges and their tags are obtained when building a mesh.
pub enum EdgeSource<'a> {
    /// Edges discovered from the triangles, boundary tags from a classifier.
    Classify(&'a BoundaryClassifier),
    /// An explicit edge list with tags, in the order given.
    Explicit(Vec<([usize; 2], EdgeTag)>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    pub length: f64,
    pub normal: Point,
    pub midpoint: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    edge_cells: Vec<(usize, Option<usize>)>,
    cell_edges: Vec<[usize; 3]>,
    cell_signs: Vec<[f64; 3]>,
    tags: Vec<EdgeTag>,
    edge_geom: Vec<EdgeGeometry>,
    cell_area: Vec<f64>,
    top_edges: Vec<usize>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriMesh {
    /// Builds the connectivity and validates every invariant.
    pub fn new(
        nodes: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        edge_source: EdgeSource<'_>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Config("mesh has no triangles".into()));
        }
        if let Some(i) = nodes
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(MeshError::Config(format!(
                "node {i} has non-finite coordinates"
            )));
        }
        let mut cell_area = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= nodes.len()) {
                return Err(MeshError::Triangle {
                    triangle: t,
                    message: format!("dangling node index {v}"),
                });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Triangle {
                    triangle: t,
                    message: "repeated vertex".into(),
                });
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area <= 0.0 {
                return Err(MeshError::Triangle {
                    triangle: t,
                    message: format!("non-positive signed area {area:e} (clockwise or degenerate)"),
                });
            }
            cell_area.push(area);
        }

        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut explicit_tags: Option<Vec<EdgeTag>> = None;
        let explicit = matches!(edge_source, EdgeSource::Explicit(_));
        if let EdgeSource::Explicit(list) = &edge_source {
            let mut tags = Vec::with_capacity(list.len());
            for (e, &(pair, tag)) in list.iter().enumerate() {
                if pair[0] >= nodes.len() || pair[1] >= nodes.len() || pair[0] == pair[1] {
                    return Err(MeshError::Edge {
                        edge: e,
                        message: format!("invalid node pair {pair:?}"),
                    });
                }
                if index.insert(key(pair[0], pair[1]), e).is_some() {
                    return Err(MeshError::Edge {
                        edge: e,
                        message: "duplicate edge".into(),
                    });
                }
                edges.push(pair);
                tags.push(tag);
            }
            explicit_tags = Some(tags);
        }

        let mut cell_edges = Vec::with_capacity(triangles.len());
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); edges.len()];
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let e = match index.get(&key(a, b)) {
                    Some(&e) => e,
                    None if explicit => {
                        return Err(MeshError::Triangle {
                            triangle: t,
                            message: format!("edge ({a}, {b}) missing from edge list"),
                        })
                    }
                    None => {
                        let e = edges.len();
                        edges.push([a, b]);
                        adjacency.push(Vec::new());
                        index.insert(key(a, b), e);
                        e
                    }
                };
                adjacency[e].push(t);
                if adjacency[e].len() > 2 {
                    return Err(MeshError::Triangle {
                        triangle: t,
                        message: format!("non-manifold edge {e}"),
                    });
                }
                local[i] = e;
            }
            cell_edges.push(local);
        }
        if let Some(e) = adjacency.iter().position(|c| c.is_empty()) {
            return Err(MeshError::Edge {
                edge: e,
                message: "dangling edge not used by any triangle".into(),
            });
        }
        let edge_cells: Vec<(usize, Option<usize>)> = adjacency
            .iter()
            .map(|c| {
                if c.len() == 2 {
                    (c[0].min(c[1]), Some(c[0].max(c[1])))
                } else {
                    (c[0], None)
                }
            })
            .collect();

        // global normal = outward normal of the first (lower-index) cell
        let mut edge_geom = Vec::with_capacity(edges.len());
        for (e, &(c0, _)) in edge_cells.iter().enumerate() {
            let tri = triangles[c0];
            let i = cell_edges[c0].iter().position(|&x| x == e).unwrap();
            let a = nodes[tri[(i + 1) % 3]];
            let b = nodes[tri[(i + 2) % 3]];
            let dx = b[0] - a[0];
            let dz = b[1] - a[1];
            let length = dx.hypot(dz);
            edge_geom.push(EdgeGeometry {
                length,
                normal: [dz / length, -dx / length],
                midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
            });
        }
        let cell_signs = cell_edges
            .iter()
            .enumerate()
            .map(|(t, local)| local.map(|e| if edge_cells[e].0 == t { 1.0 } else { -1.0 }))
            .collect();

        let tags = match explicit_tags {
            Some(tags) => {
                for (e, (&tag, cells)) in tags.iter().zip(&edge_cells).enumerate() {
                    let boundary = cells.1.is_none();
                    if boundary == (tag == EdgeTag::Interior) {
                        return Err(MeshError::Edge {
                            edge: e,
                            message: if boundary {
                                "boundary edge tagged interior".into()
                            } else {
                                format!("interior edge tagged {tag:?}")
                            },
                        });
                    }
                }
                tags
            }
            None => {
                let EdgeSource::Classify(classifier) = edge_source else {
                    unreachable!()
                };
                let mut tags = Vec::with_capacity(edges.len());
                for (e, cells) in edge_cells.iter().enumerate() {
                    if cells.1.is_some() {
                        tags.push(EdgeTag::Interior);
                        continue;
                    }
                    let g = edge_geom[e];
                    let tag = classifier.classify(g.midpoint, g.normal).ok_or_else(|| {
                        MeshError::Edge {
                            edge: e,
                            message: format!(
                                "boundary edge at {:?} does not match exactly one boundary part",
                                g.midpoint
                            ),
                        }
                    })?;
                    tags.push(tag);
                }
                tags
            }
        };

        let mut top_edges: Vec<usize> = (0..edges.len())
            .filter(|&e| tags[e] == EdgeTag::Top)
            .collect();
        top_edges.sort_by(|&a, &b| {
            let ma = edge_geom[a].midpoint;
            let mb = edge_geom[b].midpoint;
            ma[0].total_cmp(&mb[0]).then(ma[1].total_cmp(&mb[1]))
        });

        Ok(Self {
            nodes,
            triangles,
            edges,
            edge_cells,
            cell_edges,
            cell_signs,
            tags,
            edge_geom,
            cell_area,
            top_edges,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_cells(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Adjacent cells of an edge; the first is the lower index.
    pub fn edge_cells(&self, e: usize) -> (usize, Option<usize>) {
        self.edge_cells[e]
    }

    pub fn cell_edges(&self, t: usize) -> [usize; 3] {
        self.cell_edges[t]
    }

    pub fn cell_signs(&self, t: usize) -> [f64; 3] {
        self.cell_signs[t]
    }

    pub fn tag(&self, e: usize) -> EdgeTag {
        self.tags[e]
    }

    pub fn tags(&self) -> &[EdgeTag] {
        &self.tags
    }

    pub fn is_boundary(&self, e: usize) -> bool {
        self.edge_cells[e].1.is_none()
    }

    /// TOP edges ordered by midpoint abscissa.
    pub fn top_edges(&self) -> &[usize] {
        &self.top_edges
    }

    pub fn edge_geometry(&self, e: usize) -> EdgeGeometry {
        self.edge_geom[e]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        self.edge_geom[e].length
    }

    pub fn cell_area(&self, t: usize) -> f64 {
        self.cell_area[t]
    }

    pub fn cell_vertices(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.nodes[v])
    }

    pub fn cell_centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.cell_vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Bounding box `(min, max)` of the nodes.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_geom.iter().map(|g| g.length).fold(0.0, f64::max)
    }

    /// Elevation of the BOTTOM boundary at abscissa `x`, interpolated
    /// linearly along BOTTOM edges. `None` if no BOTTOM edge spans `x`.
    pub fn bottom_elevation(&self, x: f64) -> Option<f64> {
        let tol = 1e-12 * (1.0 + x.abs());
        self.edges
            .iter()
            .zip(&self.tags)
            .filter(|(_, &t)| t == EdgeTag::Bottom)
            .find_map(|(&[a, b], _)| {
                let (pa, pb) = (self.nodes[a], self.nodes[b]);
                let (lo, hi) = if pa[0] <= pb[0] { (pa, pb) } else { (pb, pa) };
                if x < lo[0] - tol || x > hi[0] + tol || hi[0] - lo[0] <= 0.0 {
                    return None;
                }
                let s = ((x - lo[0]) / (hi[0] - lo[0])).clamp(0.0, 1.0);
                Some(lo[1] + s * (hi[1] - lo[1]))
            })
    }
}
