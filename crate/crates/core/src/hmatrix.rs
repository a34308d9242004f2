//! Hierarchical matrices with ACA-compressed admissible blocks.
//!
//! Dofs are organised in binary cluster trees (median split along the
//! longest axis of the node's bounding box). A block of the row/column
//! product is admissible when the bounding boxes of the two clusters are
//! separated (`dist > 0`); admissible blocks farther apart than the
//! near-field cutoff `χ` are dropped, the others are compressed with
//! partially pivoted ACA. Non-separated blocks are refined until both
//! clusters are leaves and then stored densely.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{BemError, Result};
use crate::geometry::{BoundingBox, Point3};
use crate::C64;

/// Source of matrix entries addressed by original (unpermuted) indices.
pub trait BlockEvaluator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Dense sub-block `rows × cols`.
    fn evaluate(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64>;
}

impl BlockEvaluator for DMatrix<C64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn evaluate(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }
}

/// Geometric footprint of one dof.
#[derive(Debug, Clone, Copy)]
pub struct DofGeometry {
    pub center: Point3,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct ClusterNode {
    /// Positions in the permuted ordering.
    pub range: Range<usize>,
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
    pub depth: usize,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterTree {
    pub nodes: Vec<ClusterNode>,
    /// `perm[position] = original dof index`.
    pub perm: Vec<usize>,
    pub leaf_size: usize,
}

impl ClusterTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

pub fn build_cluster_tree(dofs: &[DofGeometry], leaf_size: usize) -> Result<ClusterTree> {
    if leaf_size == 0 {
        return Err(BemError::InvalidArgument("leaf_size must be at least 1".into()));
    }
    let mut perm: Vec<usize> = (0..dofs.len()).collect();
    let mut nodes = Vec::new();
    split(dofs, &mut perm, 0..dofs.len(), 0, leaf_size, &mut nodes);
    Ok(ClusterTree { nodes, perm, leaf_size })
}

fn split(
    dofs: &[DofGeometry],
    perm: &mut [usize],
    range: Range<usize>,
    depth: usize,
    leaf_size: usize,
    nodes: &mut Vec<ClusterNode>,
) -> usize {
    let mut bbox = BoundingBox::empty();
    for &d in &perm[range.clone()] {
        bbox.include_box(&dofs[d].bbox);
    }
    let id = nodes.len();
    nodes.push(ClusterNode { range: range.clone(), bbox, children: None, depth });
    if range.len() <= leaf_size {
        return id;
    }
    let axis = bbox.longest_axis();
    perm[range.clone()].sort_by(|&a, &b| {
        dofs[a].center[axis]
            .total_cmp(&dofs[b].center[axis])
            .then(a.cmp(&b))
    });
    let mid = range.start + range.len() / 2;
    let left = split(dofs, perm, range.start..mid, depth + 1, leaf_size, nodes);
    let right = split(dofs, perm, mid..range.end, depth + 1, leaf_size, nodes);
    nodes[id].children = Some([left, right]);
    id
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Stored densely.
    Inadmissible,
    /// Separated and within the cutoff: compressed.
    Admissible,
    /// Separated beyond the cutoff: dropped.
    AdmissibleZero,
}

#[derive(Debug, Clone)]
pub struct BlockLeaf {
    pub row_node: usize,
    pub col_node: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub kind: BlockKind,
    pub dist: f64,
}

#[derive(Debug, Clone)]
pub struct BlockTree {
    pub leaves: Vec<BlockLeaf>,
    pub chi: f64,
}

pub fn build_block_tree(rows: &ClusterTree, cols: &ClusterTree, chi: f64) -> Result<BlockTree> {
    if chi.is_nan() || chi < 0.0 {
        return Err(BemError::InvalidArgument(format!("near-field cutoff must be >= 0, got {chi}")));
    }
    let mut leaves = Vec::new();
    if !rows.is_empty() && !cols.is_empty() {
        descend(rows, cols, rows.root(), cols.root(), chi, &mut leaves);
    }
    Ok(BlockTree { leaves, chi })
}

fn descend(rt: &ClusterTree, ct: &ClusterTree, r: usize, c: usize, chi: f64, out: &mut Vec<BlockLeaf>) {
    let (rn, cn) = (&rt.nodes[r], &ct.nodes[c]);
    let dist = rn.bbox.distance(&cn.bbox);
    let leaf = |kind| BlockLeaf {
        row_node: r,
        col_node: c,
        rows: rn.range.clone(),
        cols: cn.range.clone(),
        kind,
        dist,
    };
    if dist > 0.0 {
        out.push(leaf(if dist > chi { BlockKind::AdmissibleZero } else { BlockKind::Admissible }));
        return;
    }
    match (rn.children, cn.children) {
        (None, None) => out.push(leaf(BlockKind::Inadmissible)),
        (Some(rc), None) => rc.iter().for_each(|&x| descend(rt, ct, x, c, chi, out)),
        (None, Some(cc)) => cc.iter().for_each(|&y| descend(rt, ct, r, y, chi, out)),
        (Some(rc), Some(cc)) => {
            for &x in &rc {
                for &y in &cc {
                    descend(rt, ct, x, y, chi, out);
                }
            }
        }
    }
}

/// Low-rank factorisation `B ≈ U V` with `U: n×r`, `V: r×m`.
#[derive(Debug, Clone)]
pub struct LowRankBlock {
    pub u: DMatrix<C64>,
    pub v: DMatrix<C64>,
}

impl LowRankBlock {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn stored_entries(&self) -> usize {
        self.rank() * (self.u.nrows() + self.v.ncols())
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        &self.u * &self.v
    }
}

#[derive(Debug, Clone)]
pub struct AcaResult {
    pub block: LowRankBlock,
    pub cap_hit: bool,
    /// Last `‖u_r‖‖v_r‖ / ‖B_r‖_F` estimate (0 for exactly captured blocks).
    pub estimate: f64,
}

/// Partially pivoted adaptive cross approximation of `rows × cols`.
///
/// Rows and columns are addressed by original indices. The iteration stops
/// when `‖u_r‖‖v_r‖ ≤ ν ‖Σ u_l v_l‖_F`, when the residual vanishes, or when
/// `max_rank` is reached (flagged).
pub fn aca(
    evaluator: &dyn BlockEvaluator,
    rows: &[usize],
    cols: &[usize],
    nu: f64,
    max_rank: usize,
) -> Result<AcaResult> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(BemError::InvalidArgument(format!("ACA tolerance must lie in (0, 1), got {nu}")));
    }
    let (n, m) = (rows.len(), cols.len());
    let max_rank = max_rank.min(n).min(m);
    let mut us: Vec<DVector<C64>> = Vec::new();
    let mut vs: Vec<DVector<C64>> = Vec::new();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    let mut frob_sq = 0.0f64;
    let mut estimate = 0.0;
    let mut pivot_row = 0usize;
    let mut scale = 0.0f64;

    while us.len() < max_rank {
        row_used[pivot_row] = true;
        let mut row = DVector::from_iterator(m, evaluator.evaluate(&rows[pivot_row..=pivot_row], cols).iter().copied());
        for (u, v) in us.iter().zip(&vs) {
            row.axpy(-u[pivot_row], v, C64::new(1.0, 0.0));
        }
        let best_col = (0..m)
            .filter(|&j| !col_used[j])
            .max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm()));
        let Some(jc) = best_col else { break };
        let pivot = row[jc];
        scale = scale.max(row.iter().map(|z| z.norm()).fold(0.0, f64::max));
        if pivot.norm() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            // Residual row vanishes: try the next unused row.
            match (0..n).find(|&i| !row_used[i]) {
                Some(i) => {
                    pivot_row = i;
                    continue;
                }
                None => {
                    estimate = 0.0;
                    break;
                }
            }
        }
        col_used[jc] = true;
        let v = row / pivot;
        let mut col = DVector::from_iterator(n, evaluator.evaluate(rows, &cols[jc..=jc]).iter().copied());
        for (u, vv) in us.iter().zip(&vs) {
            col.axpy(-vv[jc], u, C64::new(1.0, 0.0));
        }
        let u = col;
        let (un, vn) = (u.norm(), v.norm());
        let mut cross = 0.0;
        for (ul, vl) in us.iter().zip(&vs) {
            cross += (ul.dotc(&u) * vl.dotc(&v)).re;
        }
        frob_sq += 2.0 * cross + un * un * vn * vn;
        us.push(u);
        vs.push(v);
        estimate = un * vn / frob_sq.max(f64::MIN_POSITIVE).sqrt();
        if un * vn <= nu * frob_sq.max(0.0).sqrt() {
            break;
        }
        let last = us.last().expect("just pushed");
        match (0..n)
            .filter(|&i| !row_used[i])
            .max_by(|&a, &b| last[a].norm().total_cmp(&last[b].norm()))
        {
            Some(i) => pivot_row = i,
            None => break,
        }
    }
    let r = us.len();
    let cap_hit = r >= max_rank && estimate > nu;
    let u = DMatrix::from_fn(n, r, |i, l| us[l][i]);
    let v = DMatrix::from_fn(r, m, |l, j| vs[l][j]);
    Ok(AcaResult { block: LowRankBlock { u, v }, cap_hit, estimate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HParams {
    /// ACA tolerance ν.
    pub nu: f64,
    /// Near-field cutoff χ (may be infinite).
    pub chi: f64,
    pub leaf_size: usize,
    /// Rank cap per block; `None` means `min(n, m) / 2`.
    pub max_rank: Option<usize>,
}

impl Default for HParams {
    fn default() -> Self {
        Self { nu: 1e-3, chi: f64::INFINITY, leaf_size: 32, max_rank: None }
    }
}

impl HParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(BemError::InvalidArgument(format!("ACA tolerance must lie in (0, 1), got {}", self.nu)));
        }
        if self.chi.is_nan() || self.chi < 0.0 {
            return Err(BemError::InvalidArgument(format!("near-field cutoff must be >= 0, got {}", self.chi)));
        }
        if self.leaf_size == 0 {
            return Err(BemError::InvalidArgument("leaf_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum LeafData {
    Dense(DMatrix<C64>),
    LowRank(LowRankBlock),
    Zero,
}

#[derive(Debug, Clone)]
pub struct HLeaf {
    pub block: BlockLeaf,
    pub data: LeafData,
    /// Admissible block stored densely because ACA did not pay off.
    pub fallback: bool,
}

impl HLeaf {
    pub fn stored_entries(&self) -> usize {
        match &self.data {
            LeafData::Dense(d) => d.len(),
            LeafData::LowRank(lr) => lr.stored_entries(),
            LeafData::Zero => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HMatrix {
    nrows: usize,
    ncols: usize,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
    leaves: Vec<HLeaf>,
    params: HParams,
}

/// Leaf counts, ranks and storage of an [`HMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct HStats {
    pub rows: usize,
    pub cols: usize,
    pub dense_leaves: usize,
    pub low_rank_leaves: usize,
    pub zero_leaves: usize,
    pub dense_fallbacks: usize,
    pub stored_entries: usize,
    pub compression_ratio: f64,
    pub max_rank: usize,
    /// `(rank, count)` pairs in increasing rank order.
    pub rank_histogram: Vec<(usize, usize)>,
}

impl HMatrix {
    pub fn assemble(
        evaluator: &dyn BlockEvaluator,
        row_geometry: &[DofGeometry],
        col_geometry: &[DofGeometry],
        params: HParams,
    ) -> Result<HMatrix> {
        params.validate()?;
        if row_geometry.len() != evaluator.nrows() || col_geometry.len() != evaluator.ncols() {
            return Err(BemError::DimensionMismatch {
                expected: evaluator.nrows() * evaluator.ncols(),
                actual: row_geometry.len() * col_geometry.len(),
            });
        }
        let row_tree = build_cluster_tree(row_geometry, params.leaf_size)?;
        let col_tree = build_cluster_tree(col_geometry, params.leaf_size)?;
        let blocks = build_block_tree(&row_tree, &col_tree, params.chi)?;
        Self::assemble_with_trees(evaluator, &row_tree, &col_tree, &blocks, params)
    }

    pub fn assemble_with_trees(
        evaluator: &dyn BlockEvaluator,
        row_tree: &ClusterTree,
        col_tree: &ClusterTree,
        blocks: &BlockTree,
        params: HParams,
    ) -> Result<HMatrix> {
        let build = |b: &BlockLeaf| -> Result<HLeaf> {
            let rows = &row_tree.perm[b.rows.clone()];
            let cols = &col_tree.perm[b.cols.clone()];
            let dense = |fallback| HLeaf {
                block: b.clone(),
                data: LeafData::Dense(evaluator.evaluate(rows, cols)),
                fallback,
            };
            Ok(match b.kind {
                BlockKind::Inadmissible => dense(false),
                BlockKind::AdmissibleZero => HLeaf { block: b.clone(), data: LeafData::Zero, fallback: false },
                BlockKind::Admissible => {
                    let (n, m) = (rows.len(), cols.len());
                    let cap = params.max_rank.unwrap_or((n.min(m) / 2).max(1));
                    let res = aca(evaluator, rows, cols, params.nu, cap)?;
                    if res.cap_hit || res.block.stored_entries() >= n * m {
                        dense(true)
                    } else {
                        HLeaf { block: b.clone(), data: LeafData::LowRank(res.block), fallback: false }
                    }
                }
            })
        };
        let leaves: Result<Vec<HLeaf>> = if rayon::current_num_threads() > 1 {
            blocks.leaves.par_iter().map(build).collect()
        } else {
            blocks.leaves.iter().map(build).collect()
        };
        Ok(HMatrix {
            nrows: row_tree.len(),
            ncols: col_tree.len(),
            row_perm: row_tree.perm.clone(),
            col_perm: col_tree.perm.clone(),
            leaves: leaves?,
            params,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn params(&self) -> &HParams {
        &self.params
    }

    pub fn leaves(&self) -> &[HLeaf] {
        &self.leaves
    }

    pub fn row_perm(&self) -> &[usize] {
        &self.row_perm
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    /// `y = H x` with a fixed leaf order (bit-reproducible).
    pub fn matvec(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.ncols {
            return Err(BemError::DimensionMismatch { expected: self.ncols, actual: x.len() });
        }
        let xp: Vec<C64> = self.col_perm.iter().map(|&j| x[j]).collect();
        let mut yp = vec![C64::new(0.0, 0.0); self.nrows];
        for leaf in &self.leaves {
            let xs = &xp[leaf.block.cols.clone()];
            let ys = &mut yp[leaf.block.rows.clone()];
            match &leaf.data {
                LeafData::Dense(d) => {
                    for j in 0..d.ncols() {
                        let xj = xs[j];
                        for (i, y) in ys.iter_mut().enumerate() {
                            *y += d[(i, j)] * xj;
                        }
                    }
                }
                LeafData::LowRank(lr) => {
                    let mut t = vec![C64::new(0.0, 0.0); lr.rank()];
                    for (j, &xj) in xs.iter().enumerate() {
                        for (l, tl) in t.iter_mut().enumerate() {
                            *tl += lr.v[(l, j)] * xj;
                        }
                    }
                    for (l, &tl) in t.iter().enumerate() {
                        for (i, y) in ys.iter_mut().enumerate() {
                            *y += lr.u[(i, l)] * tl;
                        }
                    }
                }
                LeafData::Zero => {}
            }
        }
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        for (pos, &i) in self.row_perm.iter().enumerate() {
            y[i] = yp[pos];
        }
        Ok(y)
    }

    /// Expands to a dense matrix in original ordering.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for leaf in &self.leaves {
            let block = match &leaf.data {
                LeafData::Dense(d) => d.clone(),
                LeafData::LowRank(lr) => lr.to_dense(),
                LeafData::Zero => continue,
            };
            for (bi, pi) in leaf.block.rows.clone().enumerate() {
                for (bj, pj) in leaf.block.cols.clone().enumerate() {
                    out[(self.row_perm[pi], self.col_perm[pj])] = block[(bi, bj)];
                }
            }
        }
        out
    }

    pub fn stored_entries(&self) -> usize {
        self.leaves.iter().map(HLeaf::stored_entries).sum()
    }

    pub fn compression_ratio(&self) -> f64 {
        let total = self.nrows * self.ncols;
        if total == 0 {
            return 1.0;
        }
        self.stored_entries() as f64 / total as f64
    }

    pub fn stats(&self) -> HStats {
        let mut hist = std::collections::BTreeMap::new();
        let mut s = HStats {
            rows: self.nrows,
            cols: self.ncols,
            dense_leaves: 0,
            low_rank_leaves: 0,
            zero_leaves: 0,
            dense_fallbacks: 0,
            stored_entries: self.stored_entries(),
            compression_ratio: self.compression_ratio(),
            max_rank: 0,
            rank_histogram: Vec::new(),
        };
        for leaf in &self.leaves {
            match &leaf.data {
                LeafData::Dense(_) => {
                    s.dense_leaves += 1;
                    s.dense_fallbacks += usize::from(leaf.fallback);
                }
                LeafData::LowRank(lr) => {
                    s.low_rank_leaves += 1;
                    s.max_rank = s.max_rank.max(lr.rank());
                    *hist.entry(lr.rank()).or_insert(0) += 1;
                }
                LeafData::Zero => s.zero_leaves += 1,
            }
        }
        s.rank_histogram = hist.into_iter().collect();
        s
    }

    /// True relative errors `‖B_ν − B‖₂ / ‖B‖_F` of the low-rank leaves
    /// against dense evaluation (debug/verification aid).
    pub fn low_rank_errors(&self, evaluator: &dyn BlockEvaluator) -> Vec<f64> {
        self.leaves
            .iter()
            .filter_map(|leaf| match &leaf.data {
                LeafData::LowRank(lr) => {
                    let rows: Vec<usize> = leaf.block.rows.clone().map(|p| self.row_perm[p]).collect();
                    let cols: Vec<usize> = leaf.block.cols.clone().map(|p| self.col_perm[p]).collect();
                    Some(relative_block_error(&evaluator.evaluate(&rows, &cols), &lr.to_dense()))
                }
                _ => None,
            })
            .collect()
    }
}

/// `‖approx − exact‖₂ / ‖exact‖_F`.
pub fn relative_block_error(exact: &DMatrix<C64>, approx: &DMatrix<C64>) -> f64 {
    let diff = approx - exact;
    let spectral = diff.singular_values().iter().copied().fold(0.0, f64::max);
    spectral / exact.norm()
}

impl std::fmt::Display for HStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "size: {} x {}", self.rows, self.cols)?;
        writeln!(
            f,
            "leaves: dense {} (fallbacks {}), low-rank {}, zero {}",
            self.dense_leaves, self.dense_fallbacks, self.low_rank_leaves, self.zero_leaves
        )?;
        writeln!(f, "stored entries: {}", self.stored_entries)?;
        writeln!(f, "compression ratio: {:.4}", self.compression_ratio)?;
        write!(f, "ranks:")?;
        for (r, c) in &self.rank_histogram {
            write!(f, " {r}x{c}")?;
        }
        writeln!(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_dofs(points: &[Point3]) -> Vec<DofGeometry> {
        points
            .iter()
            .map(|&p| DofGeometry { center: p, bbox: BoundingBox::from_points([p].iter()) })
            .collect()
    }

    fn random_points(n: usize, seed: u64, offset: Point3) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| offset + Point3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    struct Kernel {
        x: Vec<Point3>,
        y: Vec<Point3>,
        k: f64,
    }

    impl BlockEvaluator for Kernel {
        fn nrows(&self) -> usize {
            self.x.len()
        }
        fn ncols(&self) -> usize {
            self.y.len()
        }
        fn evaluate(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
                let r = (self.x[rows[i]] - self.y[cols[j]]).norm().max(1e-3);
                C64::new(0.0, self.k * r).exp() / (4.0 * std::f64::consts::PI * r)
            })
        }
    }

    #[test]
    fn small_sets_give_single_node() {
        let tree = build_cluster_tree(&point_dofs(&random_points(20, 1, Point3::zeros())), 32).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert!(build_cluster_tree(&[], 0).is_err());
    }

    #[test]
    fn cluster_depth_bound() {
        let tree = build_cluster_tree(&point_dofs(&random_points(378, 2, Point3::zeros())), 32).unwrap();
        assert!(tree.depth() <= 6, "depth {}", tree.depth());
        assert!(tree.leaves().all(|l| l.len() <= 32));
    }

    #[test]
    fn rank_one_block_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<C64> = (0..30).map(|_| C64::new(rng.random(), rng.random())).collect();
        let b: Vec<C64> = (0..25).map(|_| C64::new(rng.random(), rng.random())).collect();
        let m = DMatrix::from_fn(30, 25, |i, j| a[i] * b[j]);
        let rows: Vec<usize> = (0..30).collect();
        let cols: Vec<usize> = (0..25).collect();
        let res = aca(&m, &rows, &cols, 1e-6, 12).unwrap();
        assert_eq!(res.block.rank(), 1);
        assert!(!res.cap_hit);
        assert!((res.block.to_dense() - &m).norm() < 1e-12 * m.norm());
        assert_eq!(res.estimate, 0.0);
    }

    #[test]
    fn separated_clusters_meet_tolerance() {
        let x = random_points(60, 4, Point3::zeros());
        let y = random_points(50, 5, Point3::new(10.0, 0.0, 0.0));
        let kernel = Kernel { x, y, k: 1.0 };
        let rows: Vec<usize> = (0..60).collect();
        let cols: Vec<usize> = (0..50).collect();
        let exact = kernel.evaluate(&rows, &cols);
        let tight = aca(&kernel, &rows, &cols, 1e-3, 25).unwrap();
        let loose = aca(&kernel, &rows, &cols, 0.5, 25).unwrap();
        let err = relative_block_error(&exact, &tight.block.to_dense());
        // The stopping test is an estimate; allow a factor 2 on one block.
        assert!(err <= 2e-3, "{err:e} at rank {}", tight.block.rank());
        assert!(loose.block.rank() <= tight.block.rank());
        assert!(aca(&kernel, &rows, &cols, 0.0, 5).is_err());
    }

    #[test]
    fn cutoff_extremes() {
        let x = random_points(200, 6, Point3::zeros());
        let tree = build_cluster_tree(&point_dofs(&x), 16).unwrap();
        let inf = build_block_tree(&tree, &tree, f64::INFINITY).unwrap();
        assert!(inf.leaves.iter().all(|l| l.kind != BlockKind::AdmissibleZero));
        let zero = build_block_tree(&tree, &tree, 0.0).unwrap();
        assert!(zero.leaves.iter().all(|l| l.kind != BlockKind::Admissible));
        assert!(zero.leaves.iter().any(|l| l.kind == BlockKind::AdmissibleZero));
        for leaf in inf.leaves.iter().chain(&zero.leaves) {
            assert_eq!(leaf.kind != BlockKind::Inadmissible, leaf.dist > 0.0);
        }
    }

    #[test]
    fn hmatvec_against_dense() {
        let x = random_points(300, 7, Point3::zeros());
        let y = random_points(250, 8, Point3::new(0.5, 0.2, 0.0));
        let kernel = Kernel { x: x.clone(), y: y.clone(), k: 2.0 };
        let dense = kernel.evaluate(&(0..300).collect::<Vec<_>>(), &(0..250).collect::<Vec<_>>());
        let params = HParams { nu: 1e-4, leaf_size: 16, ..HParams::default() };
        let h = HMatrix::assemble(&kernel, &point_dofs(&x), &point_dofs(&y), params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<C64> = (0..250).map(|_| C64::new(rng.random(), rng.random())).collect();
        let hv = h.matvec(&v).unwrap();
        let dv = &dense * DVector::from_vec(v.clone());
        let err = hv.iter().zip(dv.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / dv.norm();
        assert!(err <= 10.0 * params.nu, "{err}");
        assert!(h.compression_ratio() > 0.0 && h.compression_ratio() <= 1.0);
        let zero = h.matvec(&vec![C64::new(0.0, 0.0); 250]).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
        assert!(h.matvec(&v[..10]).is_err());
    }

    #[test]
    fn single_leaf_equals_dense_exactly() {
        let x = random_points(40, 10, Point3::zeros());
        let kernel = Kernel { x: x.clone(), y: x.clone(), k: 1.0 };
        let params = HParams { leaf_size: 100, ..HParams::default() };
        let h = HMatrix::assemble(&kernel, &point_dofs(&x), &point_dofs(&x), params).unwrap();
        assert_eq!(h.compression_ratio(), 1.0);
        let all: Vec<usize> = (0..40).collect();
        assert_eq!(h.to_dense(), kernel.evaluate(&all, &all));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn leaves_tile_the_product(n in 1usize..150, m in 1usize..150, leaf in 1usize..40, seed in 0u64..1000, chi in 0.0f64..2.0) {
            let rt = build_cluster_tree(&point_dofs(&random_points(n, seed, Point3::zeros())), leaf).unwrap();
            let ct = build_cluster_tree(&point_dofs(&random_points(m, seed + 1, Point3::new(0.7, 0.0, 0.0))), leaf).unwrap();
            // Every dof in exactly one leaf.
            let mut seen = vec![0; n];
            for l in rt.leaves() {
                prop_assert!(l.len() <= leaf);
                for p in l.range.clone() { seen[rt.perm[p]] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let bt = build_block_tree(&rt, &ct, chi).unwrap();
            let mut cover = vec![0u8; n * m];
            for b in &bt.leaves {
                for i in b.rows.clone() { for j in b.cols.clone() { cover[i * m + j] += 1; } }
            }
            prop_assert!(cover.iter().all(|&c| c == 1));
            // Zero leaves grow monotonically as χ shrinks.
            let smaller = build_block_tree(&rt, &ct, chi / 2.0).unwrap();
            let zeros = |t: &BlockTree| t.leaves.iter().filter(|l| l.kind == BlockKind::AdmissibleZero)
                .map(|l| (l.row_node, l.col_node)).collect::<std::collections::BTreeSet<_>>();
            prop_assert!(zeros(&bt).is_subset(&zeros(&smaller)));
        }

        #[test]
        fn aca_respects_rank_cap(cap in 1usize..6, seed in 0u64..100) {
            let x = random_points(30, seed, Point3::zeros());
            let y = random_points(30, seed + 7, Point3::new(1.5, 0.0, 0.0));
            let kernel = Kernel { x, y, k: 3.0 };
            let idx: Vec<usize> = (0..30).collect();
            let res = aca(&kernel, &idx, &idx, 1e-10, cap).unwrap();
            prop_assert!(res.block.rank() <= cap);
        }
    }
}
