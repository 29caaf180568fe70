//! Hexagonal grid world: axial cells, the neighbor relation, district
//! partition (manager = district, worker = grid), and hop distances.
//!
//! Cells use axial coordinates with pointy-top orientation. Dense integer
//! ids are assigned by a row-major scan (sorted by `r`, then `q`) so the
//! ordering of observation vectors is stable across runs.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::error::CoreError;

pub type GridId = usize;
pub type DistrictId = usize;

/// Axial hex coordinate (pointy-top).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Axial {
    pub q: i32,
    pub r: i32,
}

impl Axial {
    pub fn new(q: i32, r: i32) -> Self {
        Axial { q, r }
    }
}

/// The six axial direction offsets, fixed order.
pub const HEX_DIRS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Default physical cell radius in km. Stored as metadata only; movement is
/// hop-based and vehicles never drift between grids on their own.
pub const DEFAULT_CELL_RADIUS_KM: f64 = 1.3;

/// How a world is described before construction.
#[derive(Clone, Debug)]
pub enum WorldShape {
    /// Hex-of-hexes of the given radius around the origin (radius 0 = 1 cell).
    Radius(u32),
    /// Explicit cell list, with optional district labels aligned to `cells`.
    Explicit {
        cells: Vec<Axial>,
        districts: Option<Vec<usize>>,
    },
}

/// Immutable hexagonal grid world. Safe for unrestricted concurrent reads.
#[derive(Clone, Debug)]
pub struct GridWorld {
    coords: Vec<Axial>,
    index: BTreeMap<Axial, GridId>,
    neighbors: Vec<Vec<GridId>>,
    districts: Vec<DistrictId>,
    district_members: Vec<Vec<GridId>>,
    district_adjacency: Vec<Vec<DistrictId>>,
    distance: Vec<Vec<u32>>,
    cell_radius_km: f64,
}

/// Builds a world from a shape descriptor.
///
/// Cell ids are dense `0..N-1` in row-major axial order. When no explicit
/// district labels are given, districting follows the 7-cell flower pattern:
/// flower centers lie on the sub-lattice spanned by (1,2) and (3,-1) relative
/// to the anchor cell, and every cell joins the nearest center by hop
/// distance (ties to the lowest district id).
pub fn build_world(shape: &WorldShape) -> Result<GridWorld, CoreError> {
    let (mut coords, labels) = match shape {
        WorldShape::Radius(radius) => {
            let r = *radius as i32;
            let mut cells = Vec::new();
            for rr in -r..=r {
                for qq in -r..=r {
                    if (qq + rr).abs() <= r {
                        cells.push(Axial::new(qq, rr));
                    }
                }
            }
            (cells, None)
        }
        WorldShape::Explicit { cells, districts } => (cells.clone(), districts.clone()),
    };
    if coords.is_empty() {
        return Err(CoreError::EmptyWorldSpec);
    }

    // Row-major id assignment. Explicit district labels must stay aligned
    // with their cells, so sort them together.
    match labels {
        None => {
            coords.sort();
            coords.dedup();
            build_from_cells(coords, None)
        }
        Some(labels) => {
            if labels.len() != coords.len() {
                return Err(CoreError::InvalidConfig(format!(
                    "districts list has {} labels for {} cells",
                    labels.len(),
                    coords.len()
                )));
            }
            let mut paired: Vec<(Axial, usize)> = coords.into_iter().zip(labels).collect();
            paired.sort();
            paired.dedup_by_key(|(c, _)| *c);
            let (coords, labels): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
            build_from_cells(coords, Some(labels))
        }
    }
}

fn build_from_cells(
    coords: Vec<Axial>,
    labels: Option<Vec<usize>>,
) -> Result<GridWorld, CoreError> {
    let n = coords.len();
    let index: BTreeMap<Axial, GridId> = coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();

    let mut neighbors = vec![Vec::new(); n];
    for (id, c) in coords.iter().enumerate() {
        for (dq, dr) in HEX_DIRS {
            if let Some(&other) = index.get(&Axial::new(c.q + dq, c.r + dr)) {
                neighbors[id].push(other);
            }
        }
    }

    // Connectivity check over the neighbor relation.
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reachable = 1usize;
    while let Some(v) = queue.pop_front() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                reachable += 1;
                queue.push_back(w);
            }
        }
    }
    if reachable != n {
        return Err(CoreError::DisconnectedWorld {
            reachable,
            total: n,
        });
    }

    let distance = all_pairs_distance(&neighbors);

    let (districts, district_members) = match labels {
        Some(labels) => explicit_districts(&labels)?,
        None => flower_districts(&coords, &index, &distance),
    };

    let mut district_adjacency = vec![Vec::new(); district_members.len()];
    for (id, nbrs) in neighbors.iter().enumerate() {
        for &w in nbrs {
            let (a, b) = (districts[id], districts[w]);
            if a != b && !district_adjacency[a].contains(&b) {
                district_adjacency[a].push(b);
            }
        }
    }
    for adj in &mut district_adjacency {
        adj.sort_unstable();
    }

    Ok(GridWorld {
        coords,
        index,
        neighbors,
        districts,
        district_members,
        district_adjacency,
        distance,
        cell_radius_km: DEFAULT_CELL_RADIUS_KM,
    })
}

fn all_pairs_distance(neighbors: &[Vec<GridId>]) -> Vec<Vec<u32>> {
    let n = neighbors.len();
    let mut dist = vec![vec![u32::MAX; n]; n];
    for src in 0..n {
        dist[src][src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            for &w in &neighbors[v] {
                if dist[src][w] == u32::MAX {
                    dist[src][w] = dist[src][v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    dist
}

fn explicit_districts(labels: &[usize]) -> Result<(Vec<DistrictId>, Vec<Vec<GridId>>), CoreError> {
    // Remap arbitrary labels to dense district ids in ascending label order.
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let remap: BTreeMap<usize, DistrictId> =
        distinct.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let districts: Vec<DistrictId> = labels.iter().map(|l| remap[l]).collect();
    let mut members = vec![Vec::new(); distinct.len()];
    for (id, &d) in districts.iter().enumerate() {
        members[d].push(id);
    }
    Ok((districts, members))
}

/// Is `delta` on the flower-center sub-lattice spanned by (1,2) and (3,-1)?
fn on_center_lattice(dq: i32, dr: i32) -> bool {
    (dq + 3 * dr).rem_euclid(7) == 0 && (2 * dq - dr).rem_euclid(7) == 0
}

fn flower_districts(
    coords: &[Axial],
    index: &BTreeMap<Axial, GridId>,
    distance: &[Vec<u32>],
) -> (Vec<DistrictId>, Vec<Vec<GridId>>) {
    let anchor = if index.contains_key(&Axial::new(0, 0)) {
        Axial::new(0, 0)
    } else {
        coords[0]
    };
    let mut centers: Vec<GridId> = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| on_center_lattice(c.q - anchor.q, c.r - anchor.r))
        .map(|(id, _)| id)
        .collect();
    if centers.is_empty() {
        centers.push(index[&anchor]);
    }

    let mut districts = vec![0usize; coords.len()];
    for (id, d) in districts.iter_mut().enumerate() {
        let mut best = (u32::MAX, 0usize);
        for (di, &center) in centers.iter().enumerate() {
            let hops = distance[id][center];
            if hops < best.0 {
                best = (hops, di);
            }
        }
        *d = best.1;
    }
    let mut members = vec![Vec::new(); centers.len()];
    for (id, &d) in districts.iter().enumerate() {
        members[d].push(id);
    }
    // A lattice center can end up with an empty district only if another
    // center is strictly closer to every one of its cells, which cannot
    // happen (it is distance 0 from itself), so members are all nonempty.
    (districts, members)
}

impl GridWorld {
    pub fn num_cells(&self) -> usize {
        self.coords.len()
    }

    pub fn num_districts(&self) -> usize {
        self.district_members.len()
    }

    pub fn cell_radius_km(&self) -> f64 {
        self.cell_radius_km
    }

    pub fn axial_of(&self, id: GridId) -> Result<Axial, CoreError> {
        self.coords
            .get(id)
            .copied()
            .ok_or(CoreError::UnknownGrid(id))
    }

    pub fn id_of(&self, axial: Axial) -> Option<GridId> {
        self.index.get(&axial).copied()
    }

    pub fn neighbors(&self, id: GridId) -> Result<&[GridId], CoreError> {
        self.neighbors
            .get(id)
            .map(|v| v.as_slice())
            .ok_or(CoreError::UnknownGrid(id))
    }

    pub fn district_of(&self, id: GridId) -> Result<DistrictId, CoreError> {
        self.districts
            .get(id)
            .copied()
            .ok_or(CoreError::UnknownGrid(id))
    }

    /// Member grids of a district in canonical (ascending id) order.
    pub fn members(&self, district: DistrictId) -> Result<&[GridId], CoreError> {
        self.district_members
            .get(district)
            .map(|v| v.as_slice())
            .ok_or(CoreError::UnknownDistrict(district))
    }

    pub fn max_district_size(&self) -> usize {
        self.district_members
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }

    /// Districts adjacent to `district` (excluding itself), ascending.
    pub fn district_neighbors(&self, district: DistrictId) -> Result<&[DistrictId], CoreError> {
        self.district_adjacency
            .get(district)
            .map(|v| v.as_slice())
            .ok_or(CoreError::UnknownDistrict(district))
    }

    /// Minimal hop count between two cells under the neighbor relation.
    pub fn grid_distance(&self, a: GridId, b: GridId) -> Result<u32, CoreError> {
        if a >= self.num_cells() {
            return Err(CoreError::UnknownGrid(a));
        }
        if b >= self.num_cells() {
            return Err(CoreError::UnknownGrid(b));
        }
        Ok(self.distance[a][b])
    }

    pub fn grid_ids(&self) -> impl Iterator<Item = GridId> {
        0..self.coords.len()
    }

    /// Serializes the world back to the plain-text spec schema.
    pub fn to_spec_text(&self) -> String {
        let mut out = String::new();
        let cells: Vec<String> = self
            .coords
            .iter()
            .map(|c| format!("({},{})", c.q, c.r))
            .collect();
        let districts: Vec<String> = self.districts.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "cells = {}", cells.join(" "));
        let _ = writeln!(out, "districts = {}", districts.join(" "));
        out
    }
}

/// Parses the plain-text world spec schema.
///
/// ```text
/// # either a hex-of-hexes radius ...
/// radius = 2
/// # ... or an explicit listing (districts optional)
/// cells = (0,0) (1,0) (0,1)
/// districts = 0 0 1
/// ```
///
/// Lines starting with `#` and blank lines are ignored. Unknown keys are
/// rejected. `radius` and `cells` are mutually exclusive.
pub fn parse_world_spec(text: &str) -> Result<WorldShape, CoreError> {
    let mut radius: Option<u32> = None;
    let mut cells: Option<Vec<Axial>> = None;
    let mut districts: Option<Vec<usize>> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CoreError::Parse {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "radius" => {
                radius = Some(value.parse::<u32>().map_err(|_| CoreError::Parse {
                    line,
                    msg: format!("radius must be a nonnegative integer, got `{value}`"),
                })?);
            }
            "cells" => {
                let mut parsed = Vec::new();
                for tok in value.split_whitespace() {
                    let inner = tok
                        .strip_prefix('(')
                        .and_then(|s| s.strip_suffix(')'))
                        .ok_or_else(|| CoreError::Parse {
                            line,
                            msg: format!("cell must look like (q,r), got `{tok}`"),
                        })?;
                    let (q, r) = inner.split_once(',').ok_or_else(|| CoreError::Parse {
                        line,
                        msg: format!("cell must look like (q,r), got `{tok}`"),
                    })?;
                    let q = q.trim().parse::<i32>().map_err(|_| CoreError::Parse {
                        line,
                        msg: format!("bad q coordinate in `{tok}`"),
                    })?;
                    let r = r.trim().parse::<i32>().map_err(|_| CoreError::Parse {
                        line,
                        msg: format!("bad r coordinate in `{tok}`"),
                    })?;
                    parsed.push(Axial::new(q, r));
                }
                cells = Some(parsed);
            }
            "districts" => {
                let mut parsed = Vec::new();
                for tok in value.split_whitespace() {
                    parsed.push(tok.parse::<usize>().map_err(|_| CoreError::Parse {
                        line,
                        msg: format!("district label must be an integer, got `{tok}`"),
                    })?);
                }
                districts = Some(parsed);
            }
            other => {
                return Err(CoreError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
    }

    match (radius, cells) {
        (Some(_), Some(_)) => Err(CoreError::InvalidConfig(
            "world spec must give either `radius` or `cells`, not both".into(),
        )),
        (Some(r), None) => {
            if districts.is_some() {
                return Err(CoreError::InvalidConfig(
                    "`districts` requires an explicit `cells` list".into(),
                ));
            }
            Ok(WorldShape::Radius(r))
        }
        (None, Some(c)) => Ok(WorldShape::Explicit {
            cells: c,
            districts,
        }),
        (None, None) => Err(CoreError::EmptyWorldSpec),
    }
}
