//! Tree receptive fields and the connectivity masks they induce.
//!
//! A field is the ball of `radius` hops around a center node of the Chow-Liu
//! tree. Centers are laid out greedily with a hop `stride`: after a seeded
//! first center, the next center is the lowest-indexed node whose minimum hop
//! distance to the current center set is exactly `stride`, until no such node
//! is left. Nodes that end up outside every ball (possible once the stride
//! exceeds `radius + 1`) are attached to their nearest field.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng as _;

use crate::rng::{self, Stream};
use crate::tree::{hop_distances, ChowLiuTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Trf,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveFieldPlan {
    pub radius: usize,
    pub stride: usize,
    pub node_count: usize,
    pub centers: Vec<usize>,
    /// Exact `radius`-balls, sorted, one per center.
    pub fields: Vec<Vec<usize>>,
    /// Uncovered nodes attached to each field after center selection.
    pub patched: Vec<Vec<usize>>,
    pub global_count: usize,
}

impl ReceptiveFieldPlan {
    /// Sorted input units of trf row `i`: the ball plus any patched nodes.
    pub fn members(&self, i: usize) -> Vec<usize> {
        let mut m: Vec<usize> = self.fields[i].iter().chain(&self.patched[i]).copied().collect();
        m.sort_unstable();
        m
    }

    pub fn hidden_count(&self) -> usize {
        self.centers.len() + self.global_count
    }

    /// One line per hidden unit, trf rows first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.centers.iter().enumerate() {
            let members: Vec<String> = self.members(i).iter().map(usize::to_string).collect();
            let _ = writeln!(out, "center={c} r={} members=[{}]", self.radius, members.join(","));
        }
        for _ in 0..self.global_count {
            out.push_str("global\n");
        }
        out
    }
}

/// H×V binary matrix: row `i` is connected to input `v` iff `matrix[[i, v]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMask {
    matrix: Array2<bool>,
    row_kinds: Vec<RowKind>,
}

impl ConnectivityMask {
    pub fn new(matrix: Array2<bool>, row_kinds: Vec<RowKind>) -> Result<Self> {
        if matrix.nrows() != row_kinds.len() {
            return Err(Error::Shape(format!(
                "{} row kinds for {} rows",
                row_kinds.len(),
                matrix.nrows()
            )));
        }
        if matrix.nrows() == 0 {
            return Err(Error::EmptyStructure("mask has no rows".into()));
        }
        for (i, (row, kind)) in matrix.outer_iter().zip(&row_kinds).enumerate() {
            if !row.iter().any(|&b| b) {
                return Err(Error::EmptyStructure(format!("mask row {i} has no connections")));
            }
            if *kind == RowKind::Global && !row.iter().all(|&b| b) {
                return Err(Error::Argument(format!("global row {i} is not fully connected")));
            }
        }
        Ok(ConnectivityMask { matrix, row_kinds })
    }

    pub fn matrix(&self) -> &Array2<bool> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<bool> {
        self.matrix
    }

    pub fn row_kinds(&self) -> &[RowKind] {
        &self.row_kinds
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.rows() * self.cols()) as f64
    }
}

/// Greedy stride layout starting from a given first center.
pub fn select_centers_from(t: &ChowLiuTree, stride: usize, first: usize) -> Result<Vec<usize>> {
    if stride < 1 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    if first >= t.node_count() {
        return Err(Error::Argument(format!("first center {first} out of range")));
    }
    let mut dist = hop_distances(t, first);
    let mut centers = vec![first];
    while let Some(next) = dist.iter().position(|&d| d == stride) {
        centers.push(next);
        for (d, e) in dist.iter_mut().zip(hop_distances(t, next)) {
            *d = (*d).min(e);
        }
    }
    Ok(centers)
}

/// Greedy stride layout with a seeded uniform first center.
pub fn select_centers(t: &ChowLiuTree, stride: usize, seed: u64) -> Result<Vec<usize>> {
    let first = rng::stream(seed, Stream::Centers).random_range(0..t.node_count());
    select_centers_from(t, stride, first)
}

/// All nodes within `radius` hops of `center`, sorted.
pub fn extract_field(t: &ChowLiuTree, center: usize, radius: usize) -> Vec<usize> {
    hop_distances(t, center)
        .into_iter()
        .enumerate()
        .filter(|&(_, d)| d <= radius)
        .map(|(v, _)| v)
        .collect()
}

/// Number of global units for a layer: `global_fraction × centers` rounded
/// half up, and at least one whenever the fraction is positive.
pub fn global_count(global_fraction: f64, centers: usize) -> usize {
    if global_fraction <= 0.0 || centers == 0 {
        return 0;
    }
    ((global_fraction * centers as f64 + 0.5).floor() as usize).max(1)
}

fn validate(stride: usize, global_fraction: f64) -> Result<()> {
    if stride < 1 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&global_fraction) {
        return Err(Error::Argument(format!(
            "global fraction {global_fraction} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Plan and mask from an explicit center list.
pub fn build_masks_from_centers(
    t: &ChowLiuTree,
    radius: usize,
    stride: usize,
    global_fraction: f64,
    centers: Vec<usize>,
) -> Result<(ReceptiveFieldPlan, ConnectivityMask)> {
    validate(stride, global_fraction)?;
    let v = t.node_count();
    if centers.is_empty() {
        return Err(Error::EmptyStructure("no receptive field centers".into()));
    }
    let distances: Vec<Vec<usize>> = centers.iter().map(|&c| hop_distances(t, c)).collect();
    let fields: Vec<Vec<usize>> = distances
        .iter()
        .map(|d| (0..v).filter(|&x| d[x] <= radius).collect())
        .collect();

    let mut covered = vec![false; v];
    for f in &fields {
        for &x in f {
            covered[x] = true;
        }
    }
    let mut patched = vec![Vec::new(); centers.len()];
    for x in (0..v).filter(|&x| !covered[x]) {
        let nearest = (0..centers.len())
            .min_by_key(|&i| (distances[i][x], i))
            .expect("at least one center");
        patched[nearest].push(x);
    }

    let globals = global_count(global_fraction, centers.len());
    let plan = ReceptiveFieldPlan {
        radius,
        stride,
        node_count: v,
        centers,
        fields,
        patched,
        global_count: globals,
    };
    let h = plan.hidden_count();
    let mut matrix = Array2::from_elem((h, v), false);
    for i in 0..plan.centers.len() {
        for x in plan.members(i) {
            matrix[[i, x]] = true;
        }
    }
    for i in plan.centers.len()..h {
        matrix.row_mut(i).fill(true);
    }
    let mut kinds = vec![RowKind::Trf; plan.centers.len()];
    kinds.resize(h, RowKind::Global);
    let mask = ConnectivityMask::new(matrix, kinds)?;
    Ok((plan, mask))
}

/// Cover the tree with receptive fields and emit the layer's connectivity
/// mask: trf rows in center order, then `global_count` all-ones rows.
pub fn build_masks(
    t: &ChowLiuTree,
    radius: usize,
    stride: usize,
    global_fraction: f64,
    seed: u64,
) -> Result<(ReceptiveFieldPlan, ConnectivityMask)> {
    validate(stride, global_fraction)?;
    let centers = select_centers(t, stride, seed)?;
    build_masks_from_centers(t, radius, stride, global_fraction, centers)
}
