//! Lesion instances from binary annotation masks.
//!
//! Non-zero voxels are grouped into connected components with a two-pass
//! union-find labeling. Each component becomes a [`LesionInstance`] with a
//! tight voxel box and an unweighted center of mass.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3;
use crate::volume::Volume3;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("center of mass of an empty voxel set")]
    EmptyInstance,
    #[error("connectivity must be 6 or 26, got {0}")]
    BadConnectivity(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl TryFrom<u32> for Connectivity {
    type Error = LabelError;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        match n {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            other => Err(LabelError::BadConnectivity(other)),
        }
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in x-fastest raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let precedes = (dz, dy, dx) < (0, 0, 0);
                    let adjacent = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if precedes && adjacent {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionInstance {
    /// 1-based, in order of decreasing size.
    pub id: u32,
    pub voxel_count: usize,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub center: [f64; 3],
    pub volume_mm3: f64,
    /// Member voxels in raster order.
    #[serde(skip)]
    pub voxels: Vec<[usize; 3]>,
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        Self {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
        hi
    }
}

/// Component label per voxel (0 = background, otherwise an arbitrary
/// positive id). Components are numbered in order of their first voxel.
pub fn label_volume(mask: &Volume3, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let [nx, ny, nz] = mask.dims();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; mask.len()];
    let mut uf = UnionFind::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = mask.linear_index(x, y, z);
                if mask.data()[idx] == 0.0 {
                    continue;
                }
                let mut label: Option<u32> = None;
                for &[dx, dy, dz] in &offsets {
                    let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let q = mask.linear_index(qx as usize, qy as usize, qz as usize);
                    let ql = provisional[q];
                    if ql == u32::MAX {
                        continue;
                    }
                    label = Some(match label {
                        None => ql,
                        Some(l) => uf.union(l, ql),
                    });
                }
                provisional[idx] = label.unwrap_or_else(|| uf.make_set());
            }
        }
    }

    let mut compact: HashMap<u32, u32> = HashMap::new();
    let mut labels = vec![0u32; mask.len()];
    for (idx, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = uf.find(p);
        let next = compact.len() as u32 + 1;
        labels[idx] = *compact.entry(root).or_insert(next);
    }
    (labels, compact.len())
}

/// Partition the non-zero voxels of `mask` into connected lesions.
///
/// Instances are sorted by descending voxel count (ties by first voxel in
/// raster order) and numbered from 1.
pub fn connected_components(mask: &Volume3, connectivity: Connectivity) -> Vec<LesionInstance> {
    let (labels, count) = label_volume(mask, connectivity);
    let mut members: Vec<Vec<[usize; 3]>> = vec![Vec::new(); count];
    for (idx, &l) in labels.iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(mask.coords(idx));
        }
    }
    // Labels are already in first-voxel order, so a stable sort breaks ties.
    members.sort_by_key(|m| std::cmp::Reverse(m.len()));

    let spacing = mask.spacing();
    let voxel_mm3 = spacing[0] * spacing[1] * spacing[2];
    members
        .into_iter()
        .enumerate()
        .map(|(i, voxels)| {
            let center = center_of_mass(&voxels).expect("components are non-empty");
            LesionInstance {
                id: i as u32 + 1,
                voxel_count: voxels.len(),
                bbox: tight_box(&voxels),
                center,
                volume_mm3: voxels.len() as f64 * voxel_mm3,
                voxels,
            }
        })
        .collect()
}

/// [`connected_components`] with instances smaller than `min_voxels` dropped.
pub fn extract_instances(
    mask: &Volume3,
    connectivity: Connectivity,
    min_voxels: usize,
) -> Vec<LesionInstance> {
    let mut all = connected_components(mask, connectivity);
    all.retain(|inst| inst.voxel_count >= min_voxels);
    all
}

fn tight_box(voxels: &[[usize; 3]]) -> Box3 {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for v in voxels {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    Box3 {
        min: lo.map(|c| c as f64),
        max: hi.map(|c| (c + 1) as f64),
    }
}

/// Unweighted mean of voxel indices per axis.
pub fn center_of_mass(voxels: &[[usize; 3]]) -> Result<[f64; 3], LabelError> {
    if voxels.is_empty() {
        return Err(LabelError::EmptyInstance);
    }
    let mut sum = [0u128; 3];
    for v in voxels {
        for a in 0..3 {
            sum[a] += v[a] as u128;
        }
    }
    let n = voxels.len() as f64;
    Ok(sum.map(|s| s as f64 / n))
}

/// Euclidean distance in mm between two voxel-space points.
pub fn compare_centers(predicted: [f64; 3], truth: [f64; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| ((predicted[a] - truth[a]) * spacing[a]).powi(2))
        .sum::<f64>()
        .sqrt()
}
