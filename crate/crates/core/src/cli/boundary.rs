//! Zero level sets of the metric on a planar grid, by marching squares.

use std::collections::HashMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::alpha::{SearchBox, SmoothMetric};
use crate::format::sig17;

/// Axis-aligned plotting window, split into `cells x cells` squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub cells: usize,
}

impl Grid {
    fn vertex(&self, i: usize, j: usize) -> [f64; 2] {
        let n = self.cells as f64;
        [
            self.x.0 + (self.x.1 - self.x.0) * i as f64 / n,
            self.y.0 + (self.y.1 - self.y.0) * j as f64 / n,
        ]
    }

    pub fn cell_diagonal(&self) -> f64 {
        let n = self.cells as f64;
        ((self.x.1 - self.x.0) / n).hypot((self.y.1 - self.y.0) / n)
    }
}

/// Samples `f` at every grid vertex, row by row along `y`.
pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    let side = grid.cells + 1;
    (0..side)
        .into_par_iter()
        .flat_map_iter(|j| {
            let f = &f;
            (0..side).map(move |i| {
                let [x, y] = grid.vertex(i, j);
                f(x, y)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chain {
    pub points: Vec<[f64; 2]>,
    /// The last point connects back to the first.
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// From vertex `(i, j)` to `(i + 1, j)`.
    Horizontal(usize, usize),
    /// From vertex `(i, j)` to `(i, j + 1)`.
    Vertical(usize, usize),
}

/// Polylines separating `value > level` from the rest. Non-finite samples
/// count as outside.
pub fn contour(grid: &Grid, values: &[f64], level: f64) -> Vec<Chain> {
    let side = grid.cells + 1;
    assert_eq!(values.len(), side * side, "one value per grid vertex");
    let at = |i: usize, j: usize| {
        let v = values[j * side + i];
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let inside = |i: usize, j: usize| at(i, j) > level;
    let point = |e: Edge| {
        let (a, b) = match e {
            Edge::Horizontal(i, j) => ((i, j), (i + 1, j)),
            Edge::Vertical(i, j) => ((i, j), (i, j + 1)),
        };
        let (va, vb) = (at(a.0, a.1), at(b.0, b.1));
        let s = if va.is_infinite() {
            1.0
        } else if vb.is_infinite() {
            0.0
        } else {
            ((level - va) / (vb - va)).clamp(0.0, 1.0)
        };
        let (pa, pb) = (grid.vertex(a.0, a.1), grid.vertex(b.0, b.1));
        [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..grid.cells {
        for i in 0..grid.cells {
            let corners = [inside(i, j), inside(i + 1, j), inside(i + 1, j + 1), inside(i, j + 1)];
            let bottom = Edge::Horizontal(i, j);
            let right = Edge::Vertical(i + 1, j);
            let top = Edge::Horizontal(i, j + 1);
            let left = Edge::Vertical(i, j);
            let sides = [(bottom, 0, 1), (right, 1, 2), (top, 2, 3), (left, 3, 0)];
            let crossed: Vec<Edge> = sides
                .iter()
                .filter(|(_, a, b)| corners[*a] != corners[*b])
                .map(|(e, _, _)| *e)
                .collect();
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let centre = 0.25 * (at(i, j) + at(i + 1, j) + at(i + 1, j + 1) + at(i, j + 1));
                    // cut off the two corners that disagree with the centre
                    let cut_lower_left = corners[0] != (centre > level);
                    if cut_lower_left {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();
    let walk = |start: usize, from: Edge, used: &mut Vec<bool>| -> (Vec<Edge>, bool) {
        let mut edges = vec![from];
        let mut seg = start;
        let mut here = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == here { b } else { a };
            if next == from {
                return (edges, true);
            }
            edges.push(next);
            here = next;
            match by_edge[&next].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => return (edges, false),
            }
        }
    };
    // open chains start at edges touched once, i.e. on the window border
    let mut ends: Vec<(Edge, usize)> = by_edge
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(e, segs)| (*e, segs[0]))
        .collect();
    ends.sort_by_key(|(e, _)| match e {
        Edge::Horizontal(i, j) => (0, *j, *i),
        Edge::Vertical(i, j) => (1, *j, *i),
    });
    for (edge, seg) in ends {
        if !used[seg] {
            let (edges, closed) = walk(seg, edge, &mut used);
            chains.push((edges, closed));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            let (edges, closed) = walk(k, segments[k].0, &mut used);
            chains.push((edges, closed));
        }
    }
    chains
        .into_iter()
        .map(|(edges, closed)| Chain {
            points: edges.into_iter().map(point).collect(),
            closed,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Alpha,
    AlphaBar,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Alpha => "alpha",
            Level::AlphaBar => "alpha_bar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPolyline {
    pub t: f64,
    pub level: Level,
    pub grid: Grid,
    pub chains: Vec<Chain>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BoundaryError {
    #[error("boundary extraction needs a planar state, this one has dimension {0}")]
    Unsupported(usize),
    #[error("grid needs at least one cell and a window of positive size")]
    Grid,
}

/// Window covering every coordinate funnel with a margin of 1; coordinates
/// without one span `±10`.
pub fn default_window(metric: &SmoothMetric, t: f64, cells: usize) -> Grid {
    let free = 10.0;
    let SearchBox(sides) = SearchBox::infer(metric, t, free);
    let widen = |(lo, hi): (f64, f64)| if lo == -free && hi == free { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    Grid {
        x: widen(sides[0]),
        y: widen(sides[1]),
        cells,
    }
}

pub fn extract(metric: &SmoothMetric, t: f64, grid: &Grid, level: Level) -> Result<BoundaryPolyline, BoundaryError> {
    if metric.dim() != 2 {
        return Err(BoundaryError::Unsupported(metric.dim()));
    }
    if grid.cells == 0 || !(grid.x.1 > grid.x.0) || !(grid.y.1 > grid.y.0) {
        return Err(BoundaryError::Grid);
    }
    let values = sample(grid, |x, y| {
        let p = [x, y];
        let v = match level {
            Level::Alpha => metric.alpha(t, &p),
            Level::AlphaBar => metric.alpha_bar(t, &p),
        };
        v.unwrap_or(f64::NAN)
    });
    Ok(BoundaryPolyline {
        t,
        level,
        grid: *grid,
        chains: contour(grid, &values, 0.0),
    })
}

pub fn write_csv<W: Write>(polylines: &[BoundaryPolyline], mut out: W) -> io::Result<()> {
    writeln!(out, "t,level,chain,closed,x1,x2")?;
    for p in polylines {
        for (k, c) in p.chains.iter().enumerate() {
            for [x, y] in &c.points {
                writeln!(
                    out,
                    "{},{},{k},{},{},{}",
                    sig17(p.t),
                    p.level.name(),
                    u8::from(c.closed),
                    sig17(*x),
                    sig17(*y)
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_window(cells: usize) -> Grid {
        Grid {
            x: (-2.0, 2.0),
            y: (-2.0, 2.0),
            cells,
        }
    }

    #[test]
    fn circle_is_one_closed_chain() {
        let g = unit_window(64);
        let v = sample(&g, |x, y| 1.0 - x * x - y * y);
        let chains = contour(&g, &v, 0.0);
        assert_eq!(chains.len(), 1);
        assert!(chains[0].closed);
        for [x, y] in &chains[0].points {
            assert!((x.hypot(*y) - 1.0).abs() < 2e-3);
        }
        // each crossed edge appears once
        assert!(chains[0].points.len() > 100);
    }

    #[test]
    fn half_plane_is_open_at_the_border() {
        let g = unit_window(10);
        let v = sample(&g, |x, _| x - 0.35);
        let chains = contour(&g, &v, 0.0);
        assert_eq!(chains.len(), 1);
        assert!(!chains[0].closed);
        assert_eq!(chains[0].points.len(), 11);
        assert!(chains[0].points.iter().all(|p| (p[0] - 0.35).abs() < 1e-12));
    }

    #[test]
    fn two_blobs_and_nothing() {
        let g = unit_window(80);
        let v = sample(&g, |x, y| (0.25 - (x - 1.0).powi(2) - y * y).max(0.25 - (x + 1.0).powi(2) - y * y));
        let chains = contour(&g, &v, 0.0);
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| c.closed));
        let none = sample(&g, |_, _| 1.0);
        assert!(contour(&g, &none, 0.0).is_empty());
    }

    #[test]
    fn saddles_resolve_consistently() {
        let g = unit_window(1);
        // corners alternate in sign
        for centre_inside in [true, false] {
            let c = if centre_inside { 0.5 } else { -0.5 };
            // row-major: (0,0), (1,0), (0,1), (1,1)
            let values = vec![1.0 + c, -1.0 + c, -1.0 + c, 1.0 + c];
            let chains = contour(&g, &values, 0.0);
            assert_eq!(chains.len(), 2);
        }
    }
}
