//! Conforming triangulations of polygonal domains.
//!
//! Meshes are immutable once built. Uniform refinement keeps every parent
//! node at the same index in the child, appends edge midpoints after them, and
//! records which parent triangle each child came from, so functions can be
//! moved exactly between levels of a nested hierarchy.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

/// Errors raised while building, validating or parsing a mesh.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh resolution must be at least 1, got {0}")]
    ZeroResolution(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}", match .line { Some(l) => format!("line {l}: invalid mesh: {message}"), None => format!("invalid mesh: {message}") })]
    Invalid {
        line: Option<usize>,
        message: String,
    },
}

impl MeshError {
    fn invalid(line: Option<usize>, message: impl Into<String>) -> Self {
        MeshError::Invalid {
            line,
            message: message.into(),
        }
    }
}

/// Link from a refined mesh back to the mesh it was produced from.
#[derive(Debug, Clone)]
pub struct Lineage {
    parent: Arc<Mesh>,
    parent_element: Vec<usize>,
}

impl Lineage {
    pub fn parent(&self) -> &Arc<Mesh> {
        &self.parent
    }

    /// Parent triangle index for every child triangle.
    pub fn parent_element(&self) -> &[usize] {
        &self.parent_element
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: f64,
    resolution: f64,
    lineage: Option<Lineage>,
}

impl PartialEq for Mesh {
    /// Geometric equality: coordinates, connectivity and boundary flags.
    /// Lineage is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.triangles == other.triangles
            && self.boundary == other.boundary
    }
}

impl Mesh {
    /// Builds a mesh from raw parts after full validation.
    pub fn from_parts(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let boundary = validate(&nodes, &triangles, None)?;
        Ok(Self::assemble(nodes, triangles, boundary, None))
    }

    fn assemble(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<bool>,
        resolution: Option<f64>,
    ) -> Self {
        let h = triangles
            .iter()
            .map(|t| diameter(&nodes, t))
            .fold(0.0, f64::max);
        Self {
            nodes,
            triangles,
            boundary,
            h,
            resolution: resolution.unwrap_or(h),
            lineage: None,
        }
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Indices of all boundary nodes in ascending order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.boundary[i])
            .collect()
    }

    /// Maximum element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Refinement parameter used in rate computations: `1/n` for the
    /// structured unit-square family, the diameter `h` for loaded meshes.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn lineage(&self) -> Option<&Lineage> {
        self.lineage.as_ref()
    }

    pub fn parent(&self) -> Option<&Arc<Mesh>> {
        self.lineage.as_ref().map(|l| &l.parent)
    }

    pub fn vertices(&self, element: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[element];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of an element (positive for counterclockwise ordering).
    pub fn signed_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.vertices(element);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|e| self.signed_area(e)).sum()
    }

    pub fn centroid(&self, element: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(element);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Unique undirected edges, in order of first appearance in the
    /// triangle list, each stored as `(min, max)`.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashMap::with_capacity(self.triangles.len() * 2);
        let mut out = Vec::new();
        for t in &self.triangles {
            for k in 0..3 {
                let key = edge_key(t[k], t[(k + 1) % 3]);
                seen.entry(key).or_insert_with(|| {
                    out.push(key);
                    out.len() - 1
                });
            }
        }
        out
    }

    /// Maps each triangle of this mesh to the triangle of `ancestor`
    /// containing it. `ancestor` must appear in the lineage chain (or be
    /// geometrically equal to this mesh).
    pub fn ancestor_elements(&self, ancestor: &Mesh) -> Option<Vec<usize>> {
        let mut map: Vec<usize> = (0..self.triangles.len()).collect();
        let mut current = self;
        loop {
            if std::ptr::eq(current, ancestor) || current == ancestor {
                return Some(map);
            }
            let lineage = current.lineage.as_ref()?;
            for e in map.iter_mut() {
                *e = lineage.parent_element[*e];
            }
            current = &lineage.parent;
        }
    }

    /// Checks every structural invariant: positive areas, index bounds,
    /// edge ownership, consistent orientation, no hanging nodes and
    /// boundary flags agreeing with topology.
    pub fn check_conformity(&self) -> Result<(), MeshError> {
        let boundary = validate(&self.nodes, &self.triangles, None)?;
        if boundary != self.boundary {
            return Err(MeshError::invalid(
                None,
                "boundary mask disagrees with topology",
            ));
        }
        Ok(())
    }
}

fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn diameter(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let d = |i: usize, j: usize| {
        let (p, q) = (nodes[t[i]], nodes[t[j]]);
        (p[0] - q[0]).hypot(p[1] - q[1])
    };
    d(0, 1).max(d(1, 2)).max(d(2, 0))
}

/// Boundary mask from edge ownership, assuming a conforming mesh.
fn boundary_from_topology(num_nodes: usize, triangles: &[[usize; 3]]) -> Vec<bool> {
    let mut count: HashMap<[usize; 2], u32> = HashMap::with_capacity(triangles.len() * 2);
    for t in triangles {
        for k in 0..3 {
            *count.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut boundary = vec![false; num_nodes];
    for (e, c) in count {
        if c == 1 {
            boundary[e[0]] = true;
            boundary[e[1]] = true;
        }
    }
    boundary
}

/// Validates raw mesh data and returns the boundary mask derived from
/// topology. `tri_lines` carries source line numbers for error messages.
fn validate(
    nodes: &[[f64; 2]],
    triangles: &[[usize; 3]],
    tri_lines: Option<&[usize]>,
) -> Result<Vec<bool>, MeshError> {
    let line_of = |e: usize| tri_lines.map(|l| l[e]);
    if triangles.is_empty() {
        return Err(MeshError::invalid(None, "mesh has no triangles"));
    }
    for (i, p) in nodes.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(MeshError::invalid(
                None,
                format!("node {i} has non-finite coordinates"),
            ));
        }
    }
    let mut used = vec![false; nodes.len()];
    for (e, t) in triangles.iter().enumerate() {
        for &v in t {
            if v >= nodes.len() {
                return Err(MeshError::invalid(
                    line_of(e),
                    format!(
                        "triangle {e} references node {v} but the mesh has {} nodes",
                        nodes.len()
                    ),
                ));
            }
            used[v] = true;
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(MeshError::invalid(
                line_of(e),
                format!("triangle {e} repeats a vertex"),
            ));
        }
        let area = signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
        if !(area > 0.0) {
            return Err(MeshError::invalid(
                line_of(e),
                format!("triangle {e} has non-positive signed area {area:e} (vertices must be counterclockwise)"),
            ));
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(MeshError::invalid(
            None,
            format!("node {i} is not used by any triangle"),
        ));
    }

    // Each directed edge may appear once; an interior edge appears once in
    // each direction.
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 3);
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let d = (t[k], t[(k + 1) % 3]);
            if let Some(&other) = directed.get(&d) {
                return Err(MeshError::invalid(
                    line_of(e),
                    format!(
                        "edge ({}, {}) is traversed in the same direction by triangles {other} and {e} (overlap or inconsistent orientation)",
                        d.0, d.1
                    ),
                ));
            }
            directed.insert(d, e);
        }
    }

    check_hanging_nodes(nodes, triangles, line_of)?;
    Ok(boundary_from_topology(nodes.len(), triangles))
}

/// Rejects nodes lying strictly inside an edge they are not an endpoint of.
fn check_hanging_nodes(
    nodes: &[[f64; 2]],
    triangles: &[[usize; 3]],
    line_of: impl Fn(usize) -> Option<usize>,
) -> Result<(), MeshError> {
    let mut by_x: Vec<usize> = (0..nodes.len()).collect();
    by_x.sort_by(|&a, &b| nodes[a][0].total_cmp(&nodes[b][0]));
    let xs: Vec<f64> = by_x.iter().map(|&i| nodes[i][0]).collect();

    let mut checked = HashMap::new();
    for (e, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if checked.insert(edge_key(a, b), ()).is_some() {
                continue;
            }
            let (p, q) = (nodes[a], nodes[b]);
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            let tol = 1e-12 * len.max(1.0);
            let (xmin, xmax) = (p[0].min(q[0]) - tol, p[0].max(q[0]) + tol);
            let lo = xs.partition_point(|&x| x < xmin);
            let hi = xs.partition_point(|&x| x <= xmax);
            for &v in &by_x[lo..hi] {
                if v == a || v == b {
                    continue;
                }
                let r = nodes[v];
                let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
                if cross.abs() > tol * len {
                    continue;
                }
                let s =
                    ((r[0] - p[0]) * (q[0] - p[0]) + (r[1] - p[1]) * (q[1] - p[1])) / (len * len);
                if s > 0.0 && s < 1.0 {
                    return Err(MeshError::invalid(
                        line_of(e),
                        format!(
                            "node {v} lies inside edge ({a}, {b}) of triangle {e} (hanging node)"
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Uniform triangulation of the unit square with `n` cells per side, each
/// cell split along its positive-slope diagonal.
pub fn unit_square_mesh(n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::ZeroResolution(n));
    }
    let nf = n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (sw, se, ne, nw) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    let boundary = (0..nodes.len())
        .map(|k| {
            let (i, j) = (k % (n + 1), k / (n + 1));
            i == 0 || j == 0 || i == n || j == n
        })
        .collect();
    let mut mesh = Mesh::assemble(nodes, triangles, boundary, Some(1.0 / nf));
    // Exact value rather than the floating diameter of the last element.
    mesh.h = std::f64::consts::SQRT_2 / nf;
    Ok(mesh)
}

/// Splits every triangle into four through its edge midpoints.
pub fn refine_uniform(mesh: &Arc<Mesh>) -> Mesh {
    let old = mesh.num_nodes();
    let mut nodes = mesh.nodes.clone();
    let mut midpoint: HashMap<[usize; 2], usize> = HashMap::with_capacity(mesh.triangles.len() * 2);
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
            let (p, q) = (nodes[a], nodes[b]);
            nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            nodes.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    let mut parent_element = Vec::with_capacity(4 * mesh.triangles.len());
    for (e, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let ab = mid(a, b, &mut nodes);
        let bc = mid(b, c, &mut nodes);
        let ca = mid(c, a, &mut nodes);
        triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        parent_element.extend_from_slice(&[e; 4]);
    }
    debug_assert_eq!(nodes.len(), old + mesh.edges().len());
    let boundary = boundary_from_topology(nodes.len(), &triangles);
    Mesh {
        h: 0.5 * mesh.h,
        resolution: 0.5 * mesh.resolution,
        nodes,
        triangles,
        boundary,
        lineage: Some(Lineage {
            parent: Arc::clone(mesh),
            parent_element,
        }),
    }
}

/// Serializes a mesh in the plain-text node/triangle format.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    writeln!(out, "nodes {}", mesh.num_nodes()).unwrap();
    for (i, p) in mesh.nodes.iter().enumerate() {
        writeln!(
            out,
            "{i} {:?} {:?} {}",
            p[0],
            p[1],
            u8::from(mesh.boundary[i])
        )
        .unwrap();
    }
    writeln!(out, "triangles {}", mesh.num_triangles()).unwrap();
    for (i, t) in mesh.triangles.iter().enumerate() {
        writeln!(out, "{i} {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    out
}

/// Parses and validates the plain-text mesh format.
///
/// ```text
/// # optional comments
/// nodes N
/// 0 x y flag
/// ...
/// triangles M
/// 0 a b c
/// ...
/// ```
pub fn read_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let parse_err = |line: usize, message: String| MeshError::Parse { line, message };

    let (_, n_nodes) = parse_header(&mut lines, "nodes", text)?;
    let mut nodes = Vec::new();
    let mut flags = Vec::new();
    let mut node_lines = Vec::new();
    for i in 0..n_nodes {
        let (line, l) = next_record(&mut lines, "node", i, text)?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(
                line,
                format!("node line needs `index x y flag`, found `{l}`"),
            ));
        }
        expect_index(line, f[0], i)?;
        let coord = |s: &str| -> Result<f64, MeshError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid coordinate `{s}`")))
        };
        nodes.push([coord(f[1])?, coord(f[2])?]);
        flags.push(match f[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    line,
                    format!("boundary flag must be 0 or 1, found `{other}`"),
                ))
            }
        });
        node_lines.push(line);
    }

    let (_, n_tris) = parse_header(&mut lines, "triangles", text)?;
    let mut triangles = Vec::new();
    let mut tri_lines = Vec::new();
    for i in 0..n_tris {
        let (line, l) = next_record(&mut lines, "triangle", i, text)?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(
                line,
                format!("triangle line needs `index a b c`, found `{l}`"),
            ));
        }
        expect_index(line, f[0], i)?;
        let mut t = [0usize; 3];
        for (slot, s) in t.iter_mut().zip(&f[1..]) {
            *slot = s
                .parse()
                .map_err(|_| parse_err(line, format!("invalid node index `{s}`")))?;
        }
        triangles.push(t);
        tri_lines.push(line);
    }
    if let Some((line, l)) = lines.next() {
        return Err(parse_err(
            line,
            format!("unexpected trailing content `{l}`"),
        ));
    }

    let boundary = validate(&nodes, &triangles, Some(&tri_lines))?;
    if let Some(i) = (0..nodes.len()).find(|&i| boundary[i] != flags[i]) {
        return Err(MeshError::invalid(
            Some(node_lines[i]),
            format!(
                "node {i} has boundary flag {} but topology says {}",
                u8::from(flags[i]),
                u8::from(boundary[i])
            ),
        ));
    }
    Ok(Mesh::assemble(nodes, triangles, boundary, None))
}

fn parse_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    keyword: &str,
    text: &str,
) -> Result<(usize, usize), MeshError> {
    let parse_err = |line: usize, message: String| MeshError::Parse { line, message };
    let (line, l) = lines
        .next()
        .ok_or_else(|| parse_err(text.lines().count(), format!("missing `{keyword}` header")))?;
    let mut parts = l.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(count), None) if k == keyword => count
            .parse::<usize>()
            .map(|c| (line, c))
            .map_err(|_| parse_err(line, format!("invalid {keyword} count `{count}`"))),
        _ => Err(parse_err(
            line,
            format!("expected `{keyword} <count>`, found `{l}`"),
        )),
    }
}

fn next_record<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    what: &str,
    index: usize,
    text: &str,
) -> Result<(usize, &'a str), MeshError> {
    lines.next().ok_or_else(|| MeshError::Parse {
        line: text.lines().count(),
        message: format!("unexpected end of input: missing {what} {index}"),
    })
}

fn expect_index(line: usize, field: &str, expected: usize) -> Result<(), MeshError> {
    match field.parse::<usize>() {
        Ok(v) if v == expected => Ok(()),
        _ => Err(MeshError::Parse {
            line,
            message: format!("expected index {expected}, found `{field}`"),
        }),
    }
}
