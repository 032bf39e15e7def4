//! JSON Lines dataset files, one matching pair per line. See `docs/formats.md`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adjacency, EdgeFeatures, KeypointGraph, MatchingPair};
use crate::assign::Permutation;
use crate::diffcore::Tensor;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    n: usize,
    coords1: Vec<[f64; 2]>,
    coords2: Vec<[f64; 2]>,
    features1: Vec<Vec<f64>>,
    features2: Vec<Vec<f64>>,
    edges1: Vec<[usize; 2]>,
    edges2: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features2: Option<Vec<Vec<f64>>>,
    gt: Vec<usize>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn tensor_of(rows: &[Vec<f64>], what: &str) -> std::result::Result<Tensor, String> {
    if rows.is_empty() {
        return Err(format!("{what} is empty"));
    }
    Tensor::from_rows(rows).map_err(|e| format!("{what}: {e}"))
}

impl Record {
    fn from_pair(p: &MatchingPair) -> Self {
        let edges = |g: &KeypointGraph| g.adjacency().edges().iter().map(|&(i, j)| [i, j]).collect();
        let ef = |g: &KeypointGraph| g.edge_features().map(|e| rows_of(e.features()));
        Record {
            n: p.n(),
            coords1: p.g1.coords().to_vec(),
            coords2: p.g2.coords().to_vec(),
            features1: rows_of(p.g1.node_features()),
            features2: rows_of(p.g2.node_features()),
            edges1: edges(&p.g1),
            edges2: edges(&p.g2),
            edge_features1: ef(&p.g1),
            edge_features2: ef(&p.g2),
            gt: p.gt.as_slice().to_vec(),
        }
    }

    fn graph(
        n: usize,
        coords: Vec<[f64; 2]>,
        features: &[Vec<f64>],
        edges: &[[usize; 2]],
        edge_features: Option<&[Vec<f64>]>,
        side: usize,
    ) -> std::result::Result<KeypointGraph, String> {
        if coords.len() != n {
            return Err(format!("coords{side} has {} points, expected n = {n}", coords.len()));
        }
        if features.len() != n {
            return Err(format!("features{side} has {} rows, expected n = {n}", features.len()));
        }
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
        let adjacency = Adjacency::from_edges(n, &pairs).map_err(|e| format!("edges{side}: {e}"))?;
        let node_features = tensor_of(features, &format!("features{side}"))?;
        let edge_features = match edge_features {
            None => None,
            Some(rows) => {
                if rows.len() != edges.len() {
                    return Err(format!(
                        "edge_features{side} has {} rows for {} edges",
                        rows.len(),
                        edges.len()
                    ));
                }
                // Rows follow the listed edge order; reorder to the canonical edge order.
                let mut keyed: Vec<((usize, usize), &Vec<f64>)> = pairs
                    .iter()
                    .map(|&(i, j)| (i.min(j), i.max(j)))
                    .zip(rows.iter())
                    .collect();
                keyed.sort_by_key(|(e, _)| *e);
                let canon = adjacency.edges();
                let listed: Vec<(usize, usize)> = keyed.iter().map(|(e, _)| *e).collect();
                if listed != canon {
                    return Err(format!("edges{side} contains duplicate edges"));
                }
                let sorted: Vec<Vec<f64>> = keyed.into_iter().map(|(_, r)| r.clone()).collect();
                let t = if sorted.is_empty() {
                    Tensor::zeros(vec![0, 0])
                } else {
                    tensor_of(&sorted, &format!("edge_features{side}"))?
                };
                Some(EdgeFeatures::new(canon, t).map_err(|e| e.to_string())?)
            }
        };
        KeypointGraph::new(coords, node_features, adjacency, edge_features).map_err(|e| e.to_string())
    }

    fn into_pair(self) -> std::result::Result<MatchingPair, String> {
        let n = self.n;
        if self.gt.len() != n {
            return Err(format!("gt has {} entries, expected n = {n}", self.gt.len()));
        }
        let gt = Permutation::new(self.gt).map_err(|e| format!("gt: {e}"))?;
        let g1 = Self::graph(
            n,
            self.coords1,
            &self.features1,
            &self.edges1,
            self.edge_features1.as_deref(),
            1,
        )?;
        let g2 = Self::graph(
            n,
            self.coords2,
            &self.features2,
            &self.edges2,
            self.edge_features2.as_deref(),
            2,
        )?;
        MatchingPair::new(g1, g2, gt).map_err(|e| e.to_string())
    }
}

/// Writes one JSON record per pair, newline-terminated.
pub fn write_pairs<W: Write>(mut w: W, pairs: &[MatchingPair]) -> Result<()> {
    for p in pairs {
        let line = serde_json::to_string(&Record::from_pair(p))
            .map_err(|e| Error::InvalidArgument(format!("serialising pair: {e}")))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads pairs from JSON Lines. Blank lines are skipped; record indices count
/// non-blank lines from 0, line numbers count from 1.
pub fn read_pairs<R: Read>(r: R) -> Result<Vec<MatchingPair>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = out.len();
        let err = |message: String| Error::Dataset {
            record,
            line: idx + 1,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        out.push(rec.into_pair().map_err(err)?);
    }
    Ok(out)
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[MatchingPair]) -> Result<()> {
    write_pairs(BufWriter::new(File::create(path)?), pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<MatchingPair>> {
    read_pairs(File::open(path)?)
}
