//! Connected components by union-find.

use std::collections::HashMap;

use super::grid::GridSpec;

pub enum Adjacency<'a> {
    /// Points are grid cell centres; cells sharing a face are adjacent, or
    /// any touching cells when `diagonal` is set.
    Grid { spec: &'a GridSpec, diagonal: bool },
    /// Points within this Euclidean distance are adjacent.
    Radius(f64),
    /// Per-point radii; two points are adjacent when their distance is at
    /// most the larger of their radii.
    PerPoint(&'a [f64]),
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn lex_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Component labels `0..C`, numbered by first appearance in lexicographic
/// point order, returned in input order.
pub fn cluster_components(points: &[Vec<f64>], adjacency: &Adjacency<'_>) -> Vec<usize> {
    let n = points.len();
    let mut uf = UnionFind::new(n);
    match adjacency {
        Adjacency::Grid { spec, diagonal } => link_grid(points, spec, *diagonal, &mut uf),
        Adjacency::Radius(r) => link_radius(points, &vec![*r; n], &mut uf),
        Adjacency::PerPoint(radii) => {
            assert_eq!(radii.len(), n, "one radius per point");
            link_radius(points, radii, &mut uf)
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label: HashMap<usize, usize> = HashMap::new();
    for i in lex_order(points) {
        let root = uf.find(i);
        let next = root_label.len();
        labels[i] = *root_label.entry(root).or_insert(next);
    }
    labels
}

fn neighbour_offsets(dim: usize, diagonal: bool) -> Vec<Vec<i64>> {
    if diagonal {
        let total = 3usize.pow(dim as u32);
        (0..total)
            .map(|mut k| {
                (0..dim)
                    .map(|_| {
                        let o = (k % 3) as i64 - 1;
                        k /= 3;
                        o
                    })
                    .collect::<Vec<_>>()
            })
            .filter(|o| o.iter().any(|&v| v != 0))
            .collect()
    } else {
        let mut out = Vec::new();
        for k in 0..dim {
            for s in [-1, 1] {
                let mut o = vec![0; dim];
                o[k] = s;
                out.push(o);
            }
        }
        out
    }
}

fn link_grid(points: &[Vec<f64>], spec: &GridSpec, diagonal: bool, uf: &mut UnionFind) {
    let cells: Vec<Option<Vec<i64>>> = points
        .iter()
        .map(|p| spec.cell_of(p).map(|c| c.into_iter().map(|v| v as i64).collect()))
        .collect();
    let mut index: HashMap<&[i64], usize> = HashMap::new();
    for (i, c) in cells.iter().enumerate() {
        if let Some(c) = c {
            index.entry(c.as_slice()).or_insert(i);
        }
    }
    let offsets = neighbour_offsets(spec.dim(), diagonal);
    let mut probe = vec![0i64; spec.dim()];
    for (i, c) in cells.iter().enumerate() {
        let Some(c) = c else { continue };
        // Duplicate points in one cell belong together.
        if let Some(&first) = index.get(c.as_slice()) {
            uf.union(i, first);
        }
        for off in &offsets {
            for ((p, &v), &o) in probe.iter_mut().zip(c).zip(off) {
                *p = v + o;
            }
            if let Some(&j) = index.get(probe.as_slice()) {
                uf.union(i, j);
            }
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Buckets on the first (up to three) coordinates with side equal to the
/// largest radius; any linked pair lands in neighbouring buckets.
fn link_radius(points: &[Vec<f64>], radii: &[f64], uf: &mut UnionFind) {
    let r = radii.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max);
    if points.is_empty() || r <= 0.0 {
        return;
    }
    let k = points[0].len().min(3);
    let key = |p: &[f64]| -> Vec<i64> { p[..k].iter().map(|v| (v / r).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let mut offsets = vec![vec![0; k]];
    offsets.extend(neighbour_offsets(k, true));
    let mut probe = vec![0i64; k];
    for (i, p) in points.iter().enumerate() {
        let home = key(p);
        for off in &offsets {
            for ((q, h), o) in probe.iter_mut().zip(&home).zip(off) {
                *q = h + o;
            }
            let Some(members) = buckets.get(&probe) else { continue };
            for &j in members {
                if j <= i || uf.find(i) == uf.find(j) {
                    continue;
                }
                let reach = radii[i].max(radii[j]).min(r);
                if dist2(p, &points[j]) <= reach * reach {
                    uf.union(i, j);
                }
            }
        }
    }
}

/// Median over query points of the distance to the nearest other point.
///
/// At most `max_queries` evenly spaced points (in first-coordinate order)
/// are queried; each query is exact, scanning outward along the first
/// coordinate until no closer point is possible.
pub fn median_nearest_neighbour_distance(points: &[Vec<f64>], max_queries: usize) -> Option<f64> {
    let n = points.len();
    if n < 2 || max_queries == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let q = max_queries.min(n);
    let mut dists: Vec<f64> = (0..q)
        .map(|k| {
            let pos = k * n / q;
            let me = &points[order[pos]];
            let mut best = f64::INFINITY;
            for dir in [-1i64, 1] {
                let mut at = pos as i64 + dir;
                while at >= 0 && (at as usize) < n {
                    let other = &points[order[at as usize]];
                    let dx = other[0] - me[0];
                    if dx * dx > best {
                        break;
                    }
                    best = best.min(dist2(me, other));
                    at += dir;
                }
            }
            best.sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    Some(if q % 2 == 1 {
        dists[q / 2]
    } else {
        0.5 * (dists[q / 2 - 1] + dists[q / 2])
    })
}
