use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::Adjacency;
use crate::{Error, Result};

/// Adjacency of the Delaunay triangulation of `coords`.
///
/// Co-circular configurations have several valid triangulations; one of them
/// is returned deterministically.
pub fn delaunay_adjacency(coords: &[[f64; 2]]) -> Result<Adjacency> {
    let n = coords.len();
    if n < 3 {
        return Err(Error::DegeneratePoints(format!("need at least 3 points, got {n}")));
    }
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::DegeneratePoints("non-finite coordinate".into()));
    }
    let mut sorted: Vec<[f64; 2]> = coords.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegeneratePoints("duplicate points".into()));
    }

    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_node = vec![usize::MAX; n];
    for (i, c) in coords.iter().enumerate() {
        let h = tri
            .insert(Point2::new(c[0], c[1]))
            .map_err(|e| Error::DegeneratePoints(format!("point {i}: {e:?}")))?;
        handle_to_node[h.index()] = i;
    }
    if tri.num_vertices() != n {
        return Err(Error::DegeneratePoints("duplicate points".into()));
    }
    if tri.num_inner_faces() == 0 {
        return Err(Error::DegeneratePoints("all points are collinear".into()));
    }
    let mut adj = Adjacency::empty(n);
    for e in tri.undirected_edges() {
        let [a, b] = e.vertices();
        adj.insert(handle_to_node[a.fix().index()], handle_to_node[b.fix().index()]);
    }
    Ok(adj)
}

pub fn fully_connected_adjacency(n: usize) -> Result<Adjacency> {
    if n == 0 {
        return Err(Error::InvalidGraph("fully connected graph needs at least one node".into()));
    }
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            adj.insert(i, j);
        }
    }
    Ok(adj)
}
