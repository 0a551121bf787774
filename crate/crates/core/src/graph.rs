//! Areal units and their first-order neighbourhood structure.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SPAIN47_EDGES: &str = include_str!("../data/spain47.edges");
const SPAIN47_LABELS: &str = include_str!("../data/spain47.labels");
const SPAIN47_CENTROIDS: &str = include_str!("../data/spain47.centroids");

/// Partition of a study region into `G` areal units with symmetric,
/// unweighted adjacency.
///
/// Areas are stored 0-based internally; all constructors and file formats
/// use 1-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealGraph {
    num_areas: usize,
    /// Sorted unordered pairs `(i, k)` with `i < k`, 0-based.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    neighbor_counts: Vec<usize>,
    labels: Option<Vec<String>>,
}

impl ArealGraph {
    /// Builds a graph from 1-based index pairs. Duplicates and reversed
    /// orientations collapse to a single edge.
    pub fn from_edge_list(edges: &[(usize, usize)], num_areas: usize) -> Result<Self> {
        if num_areas < 2 {
            return Err(Error::Graph(format!("need at least 2 areas, got {num_areas}")));
        }
        let mut set = BTreeSet::new();
        for &(i, k) in edges {
            for idx in [i, k] {
                if idx == 0 || idx > num_areas {
                    return Err(Error::Graph(format!("area index {idx} out of range 1..={num_areas}")));
                }
            }
            if i == k {
                return Err(Error::Graph(format!("self-loop on area {i}")));
            }
            set.insert((i.min(k) - 1, i.max(k) - 1));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); num_areas];
        for &(i, k) in &edges {
            neighbors[i].push(k);
            neighbors[k].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        let neighbor_counts = neighbors.iter().map(Vec::len).collect();
        Ok(Self {
            num_areas,
            edges,
            neighbors,
            neighbor_counts,
            labels: None,
        })
    }

    /// Rook-adjacency lattice; area `r * cols + c + 1` sits in row `r`,
    /// column `c`.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::Graph(format!("degenerate lattice {rows}x{cols}")));
        }
        let id = |r: usize, c: usize| r * cols + c + 1;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Self::from_edge_list(&edges, rows * cols)
    }

    /// The bundled first-order adjacency of the 47 continental Spanish
    /// provinces, with province names as labels.
    pub fn spain47() -> Self {
        let edges = parse_edge_text(SPAIN47_EDGES, Path::new("spain47.edges")).expect("bundled edge list parses");
        let graph = Self::from_edge_list(&edges, 47).expect("bundled edge list is valid");
        let labels = SPAIN47_LABELS.lines().map(str::to_owned).collect();
        graph.with_labels(labels).expect("47 bundled labels")
    }

    /// Approximate province centroids (longitude, latitude) for
    /// [`ArealGraph::spain47`].
    pub fn spain47_centroids() -> Vec<(f64, f64)> {
        parse_centroid_text(SPAIN47_CENTROIDS, Path::new("spain47.centroids")).expect("bundled centroids parse")
    }

    /// Reads a whitespace-separated edge-list file; `num_areas` defaults to
    /// the largest index present.
    pub fn read_edge_list(path: &Path, num_areas: Option<usize>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        let edges = parse_edge_text(&text, path)?;
        let max_idx = edges.iter().map(|&(i, k)| i.max(k)).max().unwrap_or(0);
        let g = num_areas.unwrap_or(max_idx);
        Self::from_edge_list(&edges, g).map_err(|e| Error::input(path, e.to_string()))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_areas {
            return Err(Error::Graph(format!(
                "{} labels for {} areas",
                labels.len(),
                self.num_areas
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn read_labels(self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        let labels = text
            .lines()
            .map(|l| l.trim().to_owned())
            .filter(|l| !l.is_empty())
            .collect();
        self.with_labels(labels).map_err(|e| Error::input(path, e.to_string()))
    }

    pub fn num_areas(&self) -> usize {
        self.num_areas
    }

    /// 0-based sorted edge pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// 0-based neighbours of 0-based area `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// The vector w⁺ of neighbour counts.
    pub fn neighbor_counts(&self) -> &[usize] {
        &self.neighbor_counts
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => (i + 1).to_string(),
        }
    }

    /// Number of connected components (isolated areas count as one each).
    pub fn num_components(&self) -> usize {
        let mut seen = vec![false; self.num_areas];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_areas {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.num_components() == 1
    }

    /// R = D − W as a dense matrix.
    pub fn structure_matrix(&self) -> DMatrix<f64> {
        let g = self.num_areas;
        let mut r = DMatrix::zeros(g, g);
        for i in 0..g {
            r[(i, i)] = self.neighbor_counts[i] as f64;
        }
        for &(i, k) in &self.edges {
            r[(i, k)] = -1.0;
            r[(k, i)] = -1.0;
        }
        r
    }

    /// Writes the graph back out in edge-list format.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = String::new();
        for &(i, k) in &self.edges {
            out.push_str(&format!("{} {}\n", i + 1, k + 1));
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn parse_edge_text(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::input(
                path,
                format!("line {}: expected two indices, got {:?}", lineno + 1, line),
            ));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::input(path, format!("line {}: bad index {s:?}", lineno + 1)))
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

fn parse_centroid_text(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::input(path, format!("line {}: bad coordinate", lineno + 1)))?;
        if v.len() != 2 {
            return Err(Error::input(
                path,
                format!("line {}: expected two coordinates", lineno + 1),
            ));
        }
        out.push((v[0], v[1]));
    }
    Ok(out)
}

/// Reads a centroid file (`x y` per line, line order = area index).
pub fn read_centroids(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
    parse_centroid_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    #[test]
    fn path_graph_counts() {
        let g = ArealGraph::from_edge_list(&[(1, 2), (2, 3)], 3).unwrap();
        assert_eq!(g.neighbor_counts(), &[1, 2, 1]);
    }

    #[test]
    fn duplicate_orientations_collapse() {
        let g = ArealGraph::from_edge_list(&[(1, 2), (2, 1)], 2).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.neighbor_counts(), &[1, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ArealGraph::from_edge_list(&[(1, 5)], 4).is_err());
        assert!(ArealGraph::from_edge_list(&[(0, 1)], 4).is_err());
        assert!(ArealGraph::from_edge_list(&[(2, 2)], 4).is_err());
        assert!(ArealGraph::from_edge_list(&[], 1).is_err());
        assert!(ArealGraph::lattice(1, 1).is_err());
        assert!(ArealGraph::lattice(0, 4).is_err());
    }

    #[test]
    fn structure_matrix_of_path() {
        let g = ArealGraph::from_edge_list(&[(1, 2), (2, 3)], 3).unwrap();
        let r = g.structure_matrix();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(r, expected);
    }

    #[test]
    fn four_cycle_has_single_null_direction() {
        let g = ArealGraph::lattice(2, 2).unwrap();
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.neighbor_counts(), &[2, 2, 2, 2]);
        let r = g.structure_matrix();
        let eig = SymmetricEigen::new(r);
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 1);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10));
    }

    #[test]
    fn lattice_shapes() {
        let line = ArealGraph::lattice(1, 3).unwrap();
        let path = ArealGraph::from_edge_list(&[(1, 2), (2, 3)], 3).unwrap();
        assert_eq!(line, path);

        let g = ArealGraph::lattice(10, 10).unwrap();
        assert_eq!(g.num_areas(), 100);
        let w = g.neighbor_counts();
        assert_eq!(w[0], 2);
        assert_eq!(w[99], 2);
        assert_eq!(w[5 * 10 + 5], 4);
        assert_eq!(w[5], 3);
    }

    #[test]
    fn spain47_is_connected() {
        let g = ArealGraph::spain47();
        assert_eq!(g.num_areas(), 47);
        assert!(g.is_connected());
        assert!(g.neighbor_counts().iter().all(|&w| w >= 1));
        assert_eq!(g.label(27), "Madrid");
        assert_eq!(ArealGraph::spain47_centroids().len(), 47);
    }

    #[test]
    fn components_are_counted() {
        let g = ArealGraph::from_edge_list(&[(1, 2), (3, 4)], 5).unwrap();
        assert_eq!(g.num_components(), 3);
        assert!(!g.is_connected());
    }

    #[test]
    fn edge_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.edges");
        fs::write(&path, "# header\n1 2  # inline\n\n2 3\n3 1\n").unwrap();
        let g = ArealGraph::read_edge_list(&path, None).unwrap();
        assert_eq!(g.num_areas(), 3);
        assert_eq!(g.edges().len(), 3);
        fs::write(&path, "1 x\n").unwrap();
        assert!(ArealGraph::read_edge_list(&path, None).is_err());
    }

    proptest! {
        #[test]
        fn dedup_is_orientation_invariant(
            pairs in proptest::collection::vec((1usize..=8, 1usize..=8), 1..30)
        ) {
            let pairs: Vec<_> = pairs.into_iter().filter(|(a, b)| a != b).collect();
            let g1 = ArealGraph::from_edge_list(&pairs, 8).unwrap();
            let mut doubled: Vec<_> = pairs.iter().map(|&(a, b)| (b, a)).collect();
            doubled.extend(pairs.iter().copied());
            let g2 = ArealGraph::from_edge_list(&doubled, 8).unwrap();
            prop_assert_eq!(&g1, &g2);
            let r = g1.structure_matrix();
            for i in 0..8 {
                let row_sum: f64 = r.row(i).iter().sum();
                prop_assert_eq!(row_sum, 0.0);
                prop_assert_eq!(r[(i, i)] as usize, g1.neighbor_counts()[i]);
            }
            prop_assert_eq!(&r, &r.transpose());
        }
    }
}
