//! Triangular plate meshes with boundary edge labels.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use spade::handles::FixedFaceHandle;
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use crate::geometry::{self, Point, Polygon};
use crate::{Error, Result};

/// Minimum node count for a usable plate mesh.
pub const MIN_NODES: usize = 100;

/// Default target edge length in meters.
pub const DEFAULT_EDGE_LENGTH: f64 = 0.03;

/// Distance within which a boundary node is considered to lie on a polygon edge.
pub const EDGE_TOLERANCE: f64 = 1e-9;

const REFINE_ANGLE_DEG: f64 = 25.0;
const MAX_REFINE_RETRIES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    E1,
    E2,
    E3,
    E4,
    E5,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 5] = [Self::E1, Self::E2, Self::E3, Self::E4, Self::E5];

    /// 0-based edge index; `E1` joins polygon vertices 0 and 1.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}", self.index() + 1)
    }
}

/// Subset of `{E1..E5}` stored as a bitmask (bit `k` is edge `E(k+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EdgeSet(u8);

impl EdgeSet {
    pub const EMPTY: EdgeSet = EdgeSet(0);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits < 32).then_some(EdgeSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn of(labels: &[EdgeLabel]) -> Self {
        labels.iter().fold(Self::EMPTY, |s, &l| s.with(l))
    }

    pub fn with(self, label: EdgeLabel) -> Self {
        EdgeSet(self.0 | (1 << label.index()))
    }

    pub fn contains(self, label: EdgeLabel) -> bool {
        self.0 & (1 << label.index()) != 0
    }

    pub fn intersects(self, other: EdgeSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = EdgeLabel> {
        EdgeLabel::ALL.into_iter().filter(move |&l| self.contains(l))
    }
}

impl fmt::Display for EdgeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in self.iter() {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Conforming triangulation of a plate.
///
/// `edge_labels[n]` is empty for interior nodes and non-empty for boundary
/// nodes once [`tag_edges`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub edge_labels: Vec<EdgeSet>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangles[e].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.num_triangles()).map(|e| self.triangle_signed_area(e)).sum()
    }

    /// Edges used by exactly one triangle, as sorted node pairs.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        let mut edges: Vec<_> = count.into_iter().filter(|&(_, c)| c == 1).map(|(e, _)| e).collect();
        edges.sort_unstable();
        edges
    }

    pub fn boundary_nodes(&self) -> Vec<bool> {
        let mut on = vec![false; self.num_nodes()];
        for [a, b] in self.boundary_edges() {
            on[a] = true;
            on[b] = true;
        }
        on
    }

    /// One third of the area of every incident triangle, per node.
    pub fn tributary_areas(&self) -> Vec<f64> {
        let mut area = vec![0.0; self.num_nodes()];
        for (e, t) in self.triangles.iter().enumerate() {
            let a = self.triangle_signed_area(e).abs() / 3.0;
            for &n in t {
                area[n] += a;
            }
        }
        area
    }

    /// Nodes carrying any label in `edges`.
    pub fn nodes_on(&self, edges: EdgeSet) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| self.edge_labels[n].intersects(edges))
            .collect()
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in &self.triangles {
            let p = t.map(|i| self.nodes[i]);
            for k in 0..3 {
                let (a, b, c) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
                min = min.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        min
    }

    /// Plain-text node/element export: `N K`, then `x y labels-bitmask` per
    /// node, then `i j k` (0-based) per triangle.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.num_nodes(), self.num_triangles())?;
        for (p, l) in self.nodes.iter().zip(&self.edge_labels) {
            writeln!(w, "{:e} {:e} {}", p[0], p[1], l.bits())?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("mesh text", m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(Error::from)
        };
        let header = next()?;
        let mut it = header.split_whitespace().map(|s| s.parse::<usize>());
        let (n, k) = match (it.next(), it.next()) {
            (Some(Ok(n)), Some(Ok(k))) => (n, k),
            _ => return Err(bad("header must be `N K`")),
        };
        let mut nodes = Vec::with_capacity(n);
        let mut edge_labels = Vec::with_capacity(n);
        for _ in 0..n {
            let line = next()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("node line must be `x y bitmask`"));
            }
            let x = f[0].parse::<f64>().map_err(|_| bad("bad x"))?;
            let y = f[1].parse::<f64>().map_err(|_| bad("bad y"))?;
            let bits = f[2].parse::<u8>().map_err(|_| bad("bad bitmask"))?;
            nodes.push([x, y]);
            edge_labels.push(EdgeSet::from_bits(bits).ok_or_else(|| bad("bitmask out of range"))?);
        }
        let mut triangles = Vec::with_capacity(k);
        for _ in 0..k {
            let line = next()?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|_| bad("bad index")))
                .collect::<Result<_>>()?;
            if idx.len() != 3 || idx.iter().any(|&i| i >= n) {
                return Err(bad("triangle line must hold three valid node indices"));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        Ok(Mesh {
            nodes,
            triangles,
            edge_labels,
        })
    }
}

/// Mesh a pentagon and tag its boundary, refining until it has at least
/// [`MIN_NODES`] nodes.
pub fn triangulate(polygon: &Polygon, target_edge_length: f64) -> Result<Mesh> {
    polygon.validate()?;
    let mut h = target_edge_length;
    for _ in 0..MAX_REFINE_RETRIES {
        let mesh = triangulate_outline(&polygon.vertices, h)?;
        if mesh.num_nodes() >= MIN_NODES {
            return tag_edges(mesh, polygon);
        }
        h *= 0.85;
    }
    Err(Error::Geometry(format!(
        "polygon {} yields fewer than {MIN_NODES} nodes even at edge length {h:.4} m",
        polygon.index
    )))
}

/// Constrained Delaunay refinement of an arbitrary simple counter-clockwise
/// outline. Outline edges are pre-split into segments no longer than
/// `target_edge_length`; interior triangles are refined to the equilateral
/// area of that length with a minimum-angle bound.
///
/// The returned mesh carries no edge labels.
pub fn triangulate_outline(outline: &[Point], target_edge_length: f64) -> Result<Mesh> {
    if !(target_edge_length > 0.0) || !target_edge_length.is_finite() {
        return Err(Error::config("target edge length must be positive"));
    }
    if outline.len() < 3 || geometry::signed_area(outline) <= 0.0 || !geometry::is_simple(outline) {
        return Err(Error::Geometry(
            "outline must be a simple counter-clockwise polygon".into(),
        ));
    }

    let mut points: Vec<Point2<f64>> = Vec::new();
    for (i, &a) in outline.iter().enumerate() {
        let b = outline[(i + 1) % outline.len()];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let segs = (len / target_edge_length).ceil().max(1.0) as usize;
        for s in 0..segs {
            let t = s as f64 / segs as f64;
            points.push(Point2::new(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])));
        }
    }
    let n_boundary = points.len();
    let edges: Vec<[usize; 2]> = (0..n_boundary).map(|i| [i, (i + 1) % n_boundary]).collect();

    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(points, edges)
        .map_err(|e| Error::Geometry(format!("triangulation failed: {e:?}")))?;
    let max_area = 3f64.sqrt() / 4.0 * target_edge_length * target_edge_length;
    let result = cdt.refine(
        RefinementParameters::<f64>::new()
            .exclude_outer_faces(true)
            .with_angle_limit(AngleLimit::from_deg(REFINE_ANGLE_DEG))
            .with_max_allowed_area(max_area)
            .with_max_additional_vertices(200_000),
    );
    if !result.refinement_complete {
        return Err(Error::Geometry("mesh refinement did not complete".into()));
    }
    let excluded: std::collections::HashSet<FixedFaceHandle<spade::handles::InnerTag>> =
        result.excluded_faces.into_iter().collect();

    // Keep inner faces, renumber vertices in insertion order skipping any
    // that only touch excluded faces.
    let mut tris = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix()) {
            continue;
        }
        tris.push(face.vertices().map(|v| v.fix().index()));
    }
    let mut used = vec![false; cdt.num_vertices()];
    for t in &tris {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    for (v, vertex) in cdt.vertices().enumerate() {
        if used[v] {
            remap[v] = nodes.len();
            let p = vertex.position();
            nodes.push([p.x, p.y]);
        }
    }
    let mut triangles: Vec<[usize; 3]> = tris.into_iter().map(|t| t.map(|v| remap[v])).collect();
    triangles.sort_unstable_by_key(|t| {
        let mut s = *t;
        s.sort_unstable();
        s
    });
    let n = nodes.len();
    let mesh = Mesh {
        nodes,
        triangles,
        edge_labels: vec![EdgeSet::EMPTY; n],
    };
    for e in 0..mesh.num_triangles() {
        if mesh.triangle_signed_area(e) <= 0.0 {
            return Err(Error::Geometry(format!("triangle {e} has nonpositive area")));
        }
    }
    Ok(mesh)
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Label every boundary node with the polygon edge(s) it lies on.
pub fn tag_edges(mut mesh: Mesh, polygon: &Polygon) -> Result<Mesh> {
    let on_boundary = mesh.boundary_nodes();
    for (n, &b) in on_boundary.iter().enumerate() {
        let mut set = EdgeSet::EMPTY;
        if b {
            for label in EdgeLabel::ALL {
                let (a, c) = polygon.edge(label.index());
                if point_segment_distance(mesh.nodes[n], a, c) <= EDGE_TOLERANCE {
                    set = set.with(label);
                }
            }
            if set.is_empty() {
                let p = mesh.nodes[n];
                return Err(Error::Consistency(format!(
                    "boundary node {n} at ({:.6}, {:.6}) lies on no polygon edge",
                    p[0], p[1]
                )));
            }
        }
        mesh.edge_labels[n] = set;
    }
    Ok(mesh)
}
