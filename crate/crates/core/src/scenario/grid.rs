use std::path::Path;

use crate::error::{Error, Result};

/// High-resolution point set over the study window with an areal partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<(f64, f64)>,
    assignment: Vec<usize>,
    points_per_area: Vec<usize>,
    /// Side length when the points are the cell centres of a regular
    /// `resolution × resolution` grid on the unit square, row-major in y.
    resolution: Option<usize>,
}

fn regular_points(resolution: usize) -> Vec<(f64, f64)> {
    let h = 1.0 / resolution as f64;
    let mut pts = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            pts.push(((c as f64 + 0.5) * h, (r as f64 + 0.5) * h));
        }
    }
    pts
}

impl Grid {
    /// Builds a grid from explicit points and 0-based area indices.
    pub fn new(points: Vec<(f64, f64)>, assignment: Vec<usize>, num_areas: usize) -> Result<Self> {
        Self::build(points, assignment, num_areas, None)
    }

    fn build(
        points: Vec<(f64, f64)>,
        assignment: Vec<usize>,
        num_areas: usize,
        resolution: Option<usize>,
    ) -> Result<Self> {
        if points.len() != assignment.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} area assignments",
                points.len(),
                assignment.len()
            )));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Parameter("grid coordinates must be finite".into()));
        }
        let mut counts = vec![0usize; num_areas];
        for &a in &assignment {
            if a >= num_areas {
                return Err(Error::Parameter(format!(
                    "grid point assigned to area {} but there are {num_areas} areas",
                    a + 1
                )));
            }
            counts[a] += 1;
        }
        if let Some(empty) = counts.iter().position(|&h| h == 0) {
            return Err(Error::Degenerate(format!("area {} contains no grid points", empty + 1)));
        }
        Ok(Self {
            points,
            assignment,
            points_per_area: counts,
            resolution,
        })
    }

    /// Regular grid on the unit square partitioned into a `rows × cols` block
    /// lattice, matching the area numbering of [`ArealGraph::lattice`].
    ///
    /// [`ArealGraph::lattice`]: crate::graph::ArealGraph::lattice
    pub fn lattice_partition(resolution: usize, rows: usize, cols: usize) -> Result<Self> {
        if resolution < rows.max(cols) {
            return Err(Error::Parameter(format!(
                "grid resolution {resolution} is coarser than the {rows}x{cols} lattice"
            )));
        }
        let pts = regular_points(resolution);
        let assignment = pts
            .iter()
            .map(|&(x, y)| {
                let c = ((x * cols as f64) as usize).min(cols - 1);
                let r = ((y * rows as f64) as usize).min(rows - 1);
                r * cols + c
            })
            .collect();
        Self::build(pts, assignment, rows * cols, Some(resolution))
    }

    /// Regular grid assigned to the nearest of the given area centroids after
    /// rescaling the centroids' bounding box into `[0.05, 0.95]²`.
    pub fn nearest_centroid(resolution: usize, centroids: &[(f64, f64)]) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::Parameter("need at least two centroids".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in centroids {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let sx = if x1 > x0 { 0.9 / (x1 - x0) } else { 0.0 };
        let sy = if y1 > y0 { 0.9 / (y1 - y0) } else { 0.0 };
        let scaled: Vec<(f64, f64)> = centroids
            .iter()
            .map(|&(x, y)| (0.05 + (x - x0) * sx, 0.05 + (y - y0) * sy))
            .collect();
        let pts = regular_points(resolution);
        let assignment = pts
            .iter()
            .map(|&(px, py)| {
                let mut best = 0;
                let mut best_d = f64::MAX;
                for (a, &(cx, cy)) in scaled.iter().enumerate() {
                    let d = (px - cx).powi(2) + (py - cy).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = a;
                    }
                }
                best
            })
            .collect();
        Self::build(pts, assignment, centroids.len(), Some(resolution))
    }

    /// Reads `x,y,area` rows (1-based area, `#` comments and an optional header).
    pub fn read(path: &Path, num_areas: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        let mut pts = Vec::new();
        let mut assignment = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with(char::is_alphabetic) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (|| {
                if fields.len() != 3 {
                    return None;
                }
                let x: f64 = fields[0].parse().ok()?;
                let y: f64 = fields[1].parse().ok()?;
                let a: usize = fields[2].parse().ok()?;
                Some((x, y, a))
            })();
            match parsed {
                Some((x, y, a)) if a >= 1 => {
                    pts.push((x, y));
                    assignment.push(a - 1);
                }
                _ => {
                    return Err(Error::input(
                        path,
                        format!("line {}: expected `x,y,area` with 1-based area", lineno + 1),
                    ))
                }
            }
        }
        Self::new(pts, assignment, num_areas).map_err(|e| Error::input(path, e.to_string()))
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_areas(&self) -> usize {
        self.points_per_area.len()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// 0-based area of each point.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn points_per_area(&self) -> &[usize] {
        &self.points_per_area
    }

    pub fn resolution(&self) -> Option<usize> {
        self.resolution
    }
}
