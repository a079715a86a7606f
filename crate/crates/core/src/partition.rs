//! Superpoint partition by region growing and the superpoint adjacency graph.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::{Point3, PointCloud, Rgb, SupervisionMask};
use crate::geometry::{dist2, dot, knn_excluding, sym_eigen3};

const NORMAL_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("voxel size must be positive and finite, got {0}")]
    BadVoxelSize(f64),
    #[error("tolerances must be non-negative")]
    BadTolerance,
    #[error("no superpoints to connect")]
    NoSuperpoints,
    #[error("neighbor count must be at least 1")]
    ZeroNeighbors,
    #[error("mask covers {mask} points but cloud has {cloud}")]
    MaskLength { mask: usize, cloud: usize },
}

/// Region-growing thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionParams {
    /// Growth radius and voxel edge length, meters.
    pub voxel_size: f64,
    /// Largest unoriented normal deviation from the region seed, radians.
    pub normal_angle_tol: f64,
    /// Largest RGB Euclidean distance from the region seed.
    pub color_tol: f64,
    /// Regions with fewer points are merged into the nearest region.
    pub min_sp_size: usize,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self { voxel_size: 0.3, normal_angle_tol: 0.35, color_tol: 0.12, min_sp_size: 4 }
    }
}

/// A group of points treated as one segmentation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Superpoint {
    pub id: usize,
    /// Sorted, non-empty.
    pub point_indices: Vec<usize>,
    pub centroid: Point3,
    pub mean_color: Rgb,
    /// Largest axis-aligned extent of the members.
    pub diameter: f64,
}

impl Superpoint {
    pub fn from_points(id: usize, cloud: &PointCloud, mut point_indices: Vec<usize>) -> Self {
        assert!(!point_indices.is_empty(), "superpoint {id} has no points");
        point_indices.sort_unstable();
        let n = point_indices.len() as f64;
        let mut centroid = [0.0; 3];
        let mut mean_color = [0.0; 3];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &point_indices {
            let p = cloud.positions()[i];
            let c = cloud.colors()[i];
            for a in 0..3 {
                centroid[a] += p[a];
                mean_color[a] += c[a];
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..3 {
            centroid[a] /= n;
            mean_color[a] /= n;
        }
        let diameter = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        Self { id, point_indices, centroid, mean_color, diameter }
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// Unit normals from a plane fit over each point and its nearest neighbors.
///
/// Signs point toward `+z`; horizontal normals break the tie on `x`, then `y`.
pub fn estimate_normals(positions: &[Point3]) -> Vec<Point3> {
    (0..positions.len())
        .map(|i| {
            let mut members = knn_excluding(positions, i, NORMAL_NEIGHBORS);
            members.push(i);
            if members.len() < 3 {
                return [0.0, 0.0, 1.0];
            }
            let m = members.len() as f64;
            let mut mean = [0.0; 3];
            for &j in &members {
                for a in 0..3 {
                    mean[a] += positions[j][a] / m;
                }
            }
            let mut cov = [[0.0; 3]; 3];
            for &j in &members {
                let d = [positions[j][0] - mean[0], positions[j][1] - mean[1], positions[j][2] - mean[2]];
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] += d[r] * d[c] / m;
                    }
                }
            }
            orient(sym_eigen3(cov).1[0])
        })
        .collect()
}

fn orient(n: Point3) -> Point3 {
    let flip = if n[2] != 0.0 {
        n[2] < 0.0
    } else if n[0] != 0.0 {
        n[0] < 0.0
    } else {
        n[1] < 0.0
    };
    if flip {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

type VoxelKey = (i64, i64, i64);

fn voxel_of(p: Point3, size: f64) -> VoxelKey {
    let f = |v: f64| libm::floor(v / size) as i64;
    (f(p[0]), f(p[1]), f(p[2]))
}

/// Splits the cloud into superpoints by seeded region growing.
///
/// Seeds are taken in (voxel, index) order. A region grows to unassigned
/// points within `voxel_size` of a member whose normal and color stay within
/// tolerance of the seed's. Undersized regions are then absorbed by the
/// region owning their nearest outside point. Superpoint ids follow the
/// smallest member index.
pub fn partition_cloud(cloud: &PointCloud, params: &PartitionParams) -> Result<Vec<Superpoint>, PartitionError> {
    if !(params.voxel_size.is_finite() && params.voxel_size > 0.0) {
        return Err(PartitionError::BadVoxelSize(params.voxel_size));
    }
    if !(params.normal_angle_tol >= 0.0 && params.color_tol >= 0.0) {
        return Err(PartitionError::BadTolerance);
    }
    let positions = cloud.positions();
    let colors = cloud.colors();
    let n = positions.len();
    let normals = estimate_normals(positions);
    let cos_tol = libm::cos(params.normal_angle_tol.min(core::f64::consts::FRAC_PI_2));
    let color_tol2 = params.color_tol * params.color_tol;
    let radius2 = params.voxel_size * params.voxel_size;

    let mut grid: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
    for (i, &p) in positions.iter().enumerate() {
        grid.entry(voxel_of(p, params.voxel_size)).or_default().push(i);
    }

    const UNASSIGNED: usize = usize::MAX;
    let mut region = vec![UNASSIGNED; n];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in grid.values().flatten().copied() {
        if region[seed] != UNASSIGNED {
            continue;
        }
        let rid = regions.len();
        let mut members = vec![seed];
        region[seed] = rid;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            let (vx, vy, vz) = voxel_of(positions[p], params.voxel_size);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = grid.get(&(vx + dx, vy + dy, vz + dz)) else { continue };
                        for &q in bucket {
                            if region[q] != UNASSIGNED || dist2(positions[p], positions[q]) > radius2 {
                                continue;
                            }
                            if dot(normals[q], normals[seed]).abs() < cos_tol {
                                continue;
                            }
                            if dist2(colors[q], colors[seed]) >= color_tol2 {
                                continue;
                            }
                            region[q] = rid;
                            members.push(q);
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        regions.push(members);
    }

    merge_small_regions(positions, &mut region, &mut regions, params.min_sp_size);

    let mut groups: Vec<Vec<usize>> = regions.into_iter().filter(|r| !r.is_empty()).collect();
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, members)| Superpoint::from_points(id, cloud, members))
        .collect())
}

fn merge_small_regions(positions: &[Point3], region: &mut [usize], regions: &mut [Vec<usize>], min_size: usize) {
    loop {
        let alive = regions.iter().filter(|r| !r.is_empty()).count();
        if alive <= 1 {
            return;
        }
        let Some(small) = (0..regions.len())
            .filter(|&r| !regions[r].is_empty() && regions[r].len() < min_size)
            .min_by_key(|&r| (regions[r].len(), r))
        else {
            return;
        };
        let mut best: Option<(f64, usize)> = None;
        for &p in &regions[small] {
            for (q, &rq) in region.iter().enumerate() {
                if rq == small {
                    continue;
                }
                let d = dist2(positions[p], positions[q]);
                if best.map_or(true, |(bd, bq)| d < bd || (d == bd && q < bq)) {
                    best = Some((d, q));
                }
            }
        }
        let target = region[best.expect("another region exists").1];
        let moved = core::mem::take(&mut regions[small]);
        for &p in &moved {
            region[p] = target;
        }
        regions[target].extend(moved);
    }
}

/// Superpoint id of every point.
pub fn point_assignment(superpoints: &[Superpoint], num_points: usize) -> Vec<usize> {
    let mut out = vec![usize::MAX; num_points];
    for sp in superpoints {
        for &i in &sp.point_indices {
            out[i] = sp.id;
        }
    }
    out
}

/// Geometric attributes of an edge, oriented from its first to its second endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttr {
    /// `centroid[to] - centroid[from]`
    pub offset: Point3,
    /// `ln(|to| / |from|)` in point counts.
    pub log_size_ratio: f64,
}

impl EdgeAttr {
    pub const WIDTH: usize = 4;

    pub fn reversed(self) -> Self {
        Self {
            offset: [-self.offset[0], -self.offset[1], -self.offset[2]],
            log_size_ratio: -self.log_size_ratio,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.offset[0], self.offset[1], self.offset[2], self.log_size_ratio]
    }
}

/// Directed message lists: message `m` flows from `sources[m]` into `targets[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdges {
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    /// Row-major `[messages, EdgeAttr::WIDTH]`.
    pub attrs: Vec<f64>,
}

/// Superpoints joined by undirected adjacency edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointGraph {
    nodes: Vec<Superpoint>,
    /// Sorted pairs with `i < j`.
    edges: Vec<(usize, usize)>,
    edge_attrs: Vec<EdgeAttr>,
    adjacency: Vec<Vec<usize>>,
}

impl SuperpointGraph {
    pub fn from_edges(nodes: Vec<Superpoint>, mut edges: Vec<(usize, usize)>) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.retain(|e| e.0 != e.1);
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        let edge_attrs = edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (&nodes[i], &nodes[j]);
                EdgeAttr {
                    offset: [b.centroid[0] - a.centroid[0], b.centroid[1] - a.centroid[1], b.centroid[2] - a.centroid[2]],
                    log_size_ratio: libm::log(b.len() as f64 / a.len() as f64),
                }
            })
            .collect();
        Self { nodes, edges, edge_attrs, adjacency }
    }

    pub fn nodes(&self) -> &[Superpoint] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_attrs(&self) -> &[EdgeAttr] {
        &self.edge_attrs
    }

    /// Sorted neighbor ids.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i).is_some_and(|a| a.binary_search(&j).is_ok())
    }

    /// Both orientations of every edge, grouped by edge.
    pub fn directed(&self) -> DirectedEdges {
        let mut out = DirectedEdges {
            targets: Vec::with_capacity(2 * self.edges.len()),
            sources: Vec::with_capacity(2 * self.edges.len()),
            attrs: Vec::with_capacity(2 * self.edges.len() * EdgeAttr::WIDTH),
        };
        for (&(i, j), attr) in self.edges.iter().zip(&self.edge_attrs) {
            // i receives from j: geometry seen from i
            out.targets.push(i);
            out.sources.push(j);
            out.attrs.extend(attr.to_array());
            out.targets.push(j);
            out.sources.push(i);
            out.attrs.extend(attr.reversed().to_array());
        }
        out
    }

    pub fn num_components(&self) -> usize {
        let mut seen = vec![false; self.nodes.len()];
        let mut count = 0;
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

/// Symmetrized k-nearest-neighbor graph over superpoint centroids.
pub fn build_graph(superpoints: Vec<Superpoint>, k: usize) -> Result<SuperpointGraph, PartitionError> {
    if superpoints.is_empty() {
        return Err(PartitionError::NoSuperpoints);
    }
    if k == 0 {
        return Err(PartitionError::ZeroNeighbors);
    }
    let centroids: Vec<Point3> = superpoints.iter().map(|s| s.centroid).collect();
    let mut edges = Vec::new();
    for i in 0..centroids.len() {
        for j in knn_excluding(&centroids, i, k) {
            edges.push((i, j));
        }
    }
    Ok(SuperpointGraph::from_edges(superpoints, edges))
}

/// Superpoint-level supervision derived from annotated points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointLabels {
    labels: Vec<Option<usize>>,
}

impl SuperpointLabels {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        Self { labels }
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn is_supervised(&self, i: usize) -> bool {
        self.labels[i].is_some()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of supervised superpoints.
    pub fn supervised_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Labels each superpoint with the most frequent class among its annotated
/// points (ties to the smallest class id); superpoints without annotated
/// points stay unlabeled.
pub fn superpoint_labels(superpoints: &[Superpoint], cloud: &PointCloud, mask: &SupervisionMask) -> Result<SuperpointLabels, PartitionError> {
    if mask.len() != cloud.len() {
        return Err(PartitionError::MaskLength { mask: mask.len(), cloud: cloud.len() });
    }
    let mut votes = vec![0usize; cloud.num_classes()];
    let labels = superpoints
        .iter()
        .map(|sp| {
            votes.iter_mut().for_each(|v| *v = 0);
            for &i in sp.point_indices.iter().filter(|&&i| mask.is_supervised(i)) {
                votes[cloud.gt_labels()[i]] += 1;
            }
            let best = votes.iter().enumerate().fold((0, 0), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc });
            (best.1 > 0).then_some(best.0)
        })
        .collect();
    Ok(SuperpointLabels::new(labels))
}
