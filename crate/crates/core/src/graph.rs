//! Skeleton-to-graph extraction, main/lateral classification, and
//! frame-to-frame lateral identity.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{PipelineError, Result};
use crate::grid::NEIGHBORS8;
use crate::skeleton::SkeletonGrid;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Base,
    Branch,
    Tip,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    Unclassified,
    Main,
    Lateral,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: usize,
    pub node_a: usize,
    pub node_b: usize,
    /// Exact pixel path from node_a to node_b, endpoints included.
    pub polyline: Vec<(usize, usize)>,
    pub length_mm: f64,
    pub class: EdgeClass,
}

#[derive(Debug, Clone)]
pub struct RootGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub seed_position: (usize, usize),
    pub base_node: usize,
    pub mm_per_pixel: f64,
}

/// Pixel-step length of a polyline: 1 per orthogonal step, sqrt(2) per
/// diagonal step.
pub fn path_length_px(polyline: &[(usize, usize)]) -> f64 {
    polyline
        .windows(2)
        .map(|w| {
            let dx = (w[1].0 as i64 - w[0].0 as i64).abs();
            let dy = (w[1].1 as i64 - w[0].1 as i64).abs();
            if dx + dy == 2 {
                SQRT2
            } else {
                1.0
            }
        })
        .sum()
}

/// Builds the node/edge graph of a thinned skeleton. Node pixels are
/// those whose 8-neighbor count differs from 2, plus the base pixel
/// nearest the seed hint. Adjacent node pixels (the small clusters a
/// branch point leaves in an 8-connected skeleton) collapse into one
/// junction node; incident edge polylines are routed through the cluster
/// to its representative pixel so no path length is lost.
pub fn build_graph(
    skel: &SkeletonGrid,
    seed: (usize, usize),
    mm_per_pixel: f64,
    snap_radius_px: f64,
) -> Result<RootGraph> {
    let on = skel.on_pixels();
    if on.is_empty() {
        return Err(PipelineError::EmptySkeleton);
    }
    // base pixel: nearest on-pixel to the seed hint
    let (base_px, base_d2) = on
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x as f64 - seed.0 as f64, y as f64 - seed.1 as f64);
            ((x, y), dx * dx + dy * dy)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    if base_d2.sqrt() > snap_radius_px {
        return Err(PipelineError::SeedTooFar {
            x: seed.0 as i64,
            y: seed.1 as i64,
            radius_px: snap_radius_px,
        });
    }

    let mut node_pixels: Vec<(usize, usize)> = on
        .iter()
        .copied()
        .filter(|&(x, y)| skel.neighbor_count(x, y) != 2)
        .collect();
    if !node_pixels.contains(&base_px) {
        node_pixels.push(base_px);
        node_pixels.sort();
    }
    let raw_index: HashMap<(usize, usize), usize> = node_pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();

    // cluster 8-adjacent node pixels
    let clusters = cluster_node_pixels(&node_pixels);
    let mut rep_of_cluster: Vec<(usize, usize)> = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let rep = if cluster.contains(&base_px) {
            base_px
        } else {
            // centroid-closest pixel keeps extensions short and symmetric
            *cluster
                .iter()
                .min_by(|&&a, &&b| {
                    let score = |(x, y): (usize, usize)| -> f64 {
                        cluster
                            .iter()
                            .map(|&(qx, qy)| {
                                let (dx, dy) = (x as f64 - qx as f64, y as f64 - qy as f64);
                                dx * dx + dy * dy
                            })
                            .sum()
                    };
                    score(a).total_cmp(&score(b)).then(a.cmp(&b))
                })
                .unwrap()
        };
        rep_of_cluster.push(rep);
    }
    let mut cluster_of_pixel: HashMap<(usize, usize), usize> = HashMap::new();
    for (ci, cluster) in clusters.iter().enumerate() {
        for &p in cluster {
            cluster_of_pixel.insert(p, ci);
        }
    }

    // trace raw edges between node pixels
    let mut raw_edges: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut used: HashSet<((usize, usize), (usize, usize))> = HashSet::new();
    let mut interior_seen: HashSet<(usize, usize)> = HashSet::new();
    for &start in &node_pixels {
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (start.0 as i64 + dx, start.1 as i64 + dy);
            if !skel.get_i(nx, ny) {
                continue;
            }
            let first = (nx as usize, ny as usize);
            if used.contains(&(start, first)) {
                continue;
            }
            if !raw_index.contains_key(&first) && interior_seen.contains(&first) {
                continue;
            }
            let mut polyline = vec![start, first];
            let mut prev = start;
            let mut cur = first;
            while !raw_index.contains_key(&cur) {
                interior_seen.insert(cur);
                let mut next = None;
                for (dx2, dy2) in NEIGHBORS8 {
                    let (mx, my) = (cur.0 as i64 + dx2, cur.1 as i64 + dy2);
                    if skel.get_i(mx, my) {
                        let m = (mx as usize, my as usize);
                        if m != prev {
                            next = Some(m);
                            break;
                        }
                    }
                }
                match next {
                    Some(m) => {
                        polyline.push(m);
                        prev = cur;
                        cur = m;
                    }
                    None => break, // isolated stub; cannot happen on thinned input
                }
            }
            used.insert((start, first));
            used.insert((cur, prev));
            raw_edges.push(polyline);
        }
    }

    // collapse clusters: drop intra-cluster hops, extend real edges to reps
    let mut edges: Vec<Edge> = Vec::new();
    for polyline in raw_edges {
        let start = polyline[0];
        let end = *polyline.last().unwrap();
        let (ca, cb) = (cluster_of_pixel[&start], cluster_of_pixel[&end]);
        let intra = ca == cb
            && polyline
                .iter()
                .all(|p| cluster_of_pixel.get(p) == Some(&ca));
        if intra {
            continue;
        }
        let mut pl = Vec::new();
        let head = cluster_path(&clusters[ca], rep_of_cluster[ca], start);
        pl.extend_from_slice(&head[..head.len() - 1]);
        pl.extend_from_slice(&polyline);
        let mut tail = cluster_path(&clusters[cb], rep_of_cluster[cb], end);
        tail.reverse();
        pl.extend_from_slice(&tail[1..]);
        let length_mm = path_length_px(&pl) * mm_per_pixel;
        edges.push(Edge {
            id: edges.len(),
            node_a: ca,
            node_b: cb,
            polyline: pl,
            length_mm,
            class: EdgeClass::Unclassified,
        });
    }

    let base_node = cluster_of_pixel[&base_px];
    let mut degree = vec![0usize; clusters.len()];
    for e in &edges {
        degree[e.node_a] += 1;
        degree[e.node_b] += 1; // self-loops count twice
    }
    let nodes = rep_of_cluster
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| Node {
            id,
            x,
            y,
            kind: if id == base_node {
                NodeKind::Base
            } else if degree[id] >= 3 {
                NodeKind::Branch
            } else {
                NodeKind::Tip
            },
        })
        .collect();

    Ok(RootGraph {
        nodes,
        edges,
        seed_position: seed,
        base_node,
        mm_per_pixel,
    })
}

/// Groups node pixels into 8-connected clusters (sorted, deterministic).
fn cluster_node_pixels(node_pixels: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let set: HashSet<(usize, usize)> = node_pixels.iter().copied().collect();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut clusters = Vec::new();
    for &p in node_pixels {
        if seen.contains(&p) {
            continue;
        }
        let mut cluster = Vec::new();
        let mut stack = vec![p];
        seen.insert(p);
        while let Some(q) = stack.pop() {
            cluster.push(q);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (q.0 as i64 + dx, q.1 as i64 + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                let n = (nx as usize, ny as usize);
                if set.contains(&n) && !seen.contains(&n) {
                    seen.insert(n);
                    stack.push(n);
                }
            }
        }
        cluster.sort();
        clusters.push(cluster);
    }
    clusters
}

/// Shortest pixel path from `from` to `to` staying inside the cluster.
fn cluster_path(
    cluster: &[(usize, usize)],
    from: (usize, usize),
    to: (usize, usize),
) -> Vec<(usize, usize)> {
    if from == to {
        return vec![from];
    }
    let set: HashSet<(usize, usize)> = cluster.iter().copied().collect();
    let mut prev: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(q) = queue.pop_front() {
        if q == to {
            break;
        }
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (q.0 as i64 + dx, q.1 as i64 + dy);
            if nx < 0 || ny < 0 {
                continue;
            }
            let n = (nx as usize, ny as usize);
            if set.contains(&n) && n != from && !prev.contains_key(&n) {
                prev.insert(n, q);
                queue.push_back(n);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

impl RootGraph {
    pub fn total_length_mm(&self) -> f64 {
        self.edges.iter().map(|e| e.length_mm).sum()
    }

    pub fn main_length_mm(&self) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.class == EdgeClass::Main)
            .map(|e| e.length_mm)
            .sum()
    }

    pub fn lateral_length_mm(&self) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.class == EdgeClass::Lateral)
            .map(|e| e.length_mm)
            .sum()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.node_a].push(e.id);
            if e.node_b != e.node_a {
                adj[e.node_b].push(e.id);
            }
        }
        adj
    }

    /// Pixel path of the main root from base to tip; empty when
    /// unclassified.
    pub fn main_polyline(&self) -> Vec<(usize, usize)> {
        let mut main_edges: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Main)
            .collect();
        if main_edges.is_empty() {
            return Vec::new();
        }
        // chain the edges starting from the base node
        let mut path = Vec::new();
        let mut cur = self.base_node;
        while let Some(pos) = main_edges
            .iter()
            .position(|e| e.node_a == cur || e.node_b == cur)
        {
            let e = main_edges.remove(pos);
            let mut pl = e.polyline.clone();
            if e.node_b == cur && e.node_a != cur {
                pl.reverse();
            }
            if !path.is_empty() {
                pl.remove(0);
            }
            cur = if e.node_a == cur { e.node_b } else { e.node_a };
            path.extend(pl);
        }
        path
    }

    /// Marks the main path: the base-to-tip simple path maximizing overlap
    /// with the previous main polyline, then total length, with a
    /// deterministic lexicographic tie-break. All other edges become
    /// lateral.
    pub fn classify_main(&mut self, previous_main: Option<&[(usize, usize)]>) {
        for e in &mut self.edges {
            e.class = EdgeClass::Lateral;
        }
        if self.edges.is_empty() {
            return;
        }
        let adj = self.adjacency();
        let prev_set: Option<HashSet<(i64, i64)>> = previous_main.map(|pl| {
            pl.iter().map(|&(x, y)| (x as i64, y as i64)).collect()
        });

        // enumerate simple base-to-tip paths (edge sequences, no repeated nodes)
        let mut best: Option<(f64, f64, Vec<usize>, Vec<usize>)> = None;
        let mut node_visited = vec![false; self.nodes.len()];
        node_visited[self.base_node] = true;
        let mut edge_stack: Vec<usize> = Vec::new();
        self.dfs_paths(
            self.base_node,
            &adj,
            &mut node_visited,
            &mut edge_stack,
            &mut vec![self.base_node],
            &prev_set,
            &mut best,
        );
        if let Some((_, _, _, edge_ids)) = best {
            for id in edge_ids {
                self.edges[id].class = EdgeClass::Main;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs_paths(
        &self,
        cur: usize,
        adj: &[Vec<usize>],
        node_visited: &mut Vec<bool>,
        edge_stack: &mut Vec<usize>,
        node_stack: &mut Vec<usize>,
        prev_set: &Option<HashSet<(i64, i64)>>,
        best: &mut Option<(f64, f64, Vec<usize>, Vec<usize>)>,
    ) {
        // every node with no onward move is a path terminus candidate
        let mut extended = false;
        for &eid in &adj[cur] {
            let e = &self.edges[eid];
            let other = if e.node_a == cur { e.node_b } else { e.node_a };
            if other == cur || node_visited[other] {
                continue;
            }
            extended = true;
            node_visited[other] = true;
            edge_stack.push(eid);
            node_stack.push(other);
            self.dfs_paths(other, adj, node_visited, edge_stack, node_stack, prev_set, best);
            node_stack.pop();
            edge_stack.pop();
            node_visited[other] = false;
        }
        if !extended && !edge_stack.is_empty() {
            let length: f64 = edge_stack.iter().map(|&i| self.edges[i].length_mm).sum();
            let overlap = match prev_set {
                Some(set) => {
                    let mut hits = 0usize;
                    for &eid in edge_stack.iter() {
                        for &(x, y) in &self.edges[eid].polyline {
                            if near_set(set, x as i64, y as i64, 3) {
                                hits += 1;
                            }
                        }
                    }
                    hits as f64 * self.mm_per_pixel
                }
                None => 0.0,
            };
            let candidate = (overlap, length, node_stack.clone(), edge_stack.clone());
            let better = match best {
                None => true,
                Some((bo, bl, bn, _)) => {
                    (candidate.0, candidate.1)
                        .partial_cmp(&(*bo, *bl))
                        .unwrap()
                        .then_with(|| bn.as_slice().cmp(candidate.2.as_slice()))
                        .is_gt()
                }
            };
            if better {
                *best = Some(candidate);
            }
        }
    }

    /// Distinct lateral chains: connected components of the lateral edge
    /// subgraph that attach to the main path.
    pub fn laterals(&self) -> Vec<LateralChain> {
        let main_nodes: HashSet<usize> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Main)
            .flat_map(|e| [e.node_a, e.node_b])
            .collect();
        let lat_edges: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Lateral)
            .collect();
        if lat_edges.is_empty() {
            return Vec::new();
        }
        // union-find over nodes through lateral edges, but two laterals
        // that merely share a main-path node are distinct chains
        let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
        fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let p = *parent.entry(x).or_insert(x);
            if p == x {
                x
            } else {
                let r = find(parent, p);
                parent.insert(x, r);
                r
            }
        }
        for e in &lat_edges {
            if main_nodes.contains(&e.node_a) || main_nodes.contains(&e.node_b) {
                continue; // attachment handled separately
            }
            let (ra, rb) = (find(&mut parent, e.node_a), find(&mut parent, e.node_b));
            parent.insert(ra, rb);
        }
        // group edges: edges sharing a non-main node are one chain; an edge
        // touching main on both ends (or isolated) is its own chain
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut solo = Vec::new();
        for e in &lat_edges {
            let a_main = main_nodes.contains(&e.node_a);
            let b_main = main_nodes.contains(&e.node_b);
            if a_main && b_main {
                solo.push(vec![e.id]);
            } else {
                let anchor = if a_main { e.node_b } else { e.node_a };
                let root = find(&mut parent, anchor);
                groups.entry(root).or_default().push(e.id);
            }
        }
        let mut chains: Vec<Vec<usize>> = groups.into_values().collect();
        chains.extend(solo);

        let mut out = Vec::new();
        for edge_ids in chains {
            if let Some(chain) = self.lateral_chain(&edge_ids, &main_nodes) {
                out.push(chain);
            }
        }
        // stable ordering by base position
        out.sort_by_key(|c| (c.base_px.1, c.base_px.0));
        out
    }

    fn lateral_chain(
        &self,
        edge_ids: &[usize],
        main_nodes: &HashSet<usize>,
    ) -> Option<LateralChain> {
        // attachment node: a main-path node touched by the chain
        let attach = edge_ids
            .iter()
            .flat_map(|&i| [self.edges[i].node_a, self.edges[i].node_b])
            .filter(|n| main_nodes.contains(n))
            .min()?;
        // longest path within the chain starting at the attachment
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for &i in edge_ids {
            let e = &self.edges[i];
            adj.entry(e.node_a).or_default().push(i);
            if e.node_b != e.node_a {
                adj.entry(e.node_b).or_default().push(i);
            }
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut visited: HashSet<usize> = [attach].into();
        let mut stack = Vec::new();
        self.longest_chain_path(attach, &adj, &mut visited, &mut stack, 0.0, &mut best);
        let (length_mm, path_edges) = best?;
        // assemble pixel polyline from attachment outward
        let mut polyline: Vec<(usize, usize)> = Vec::new();
        let mut cur = attach;
        for &eid in &path_edges {
            let e = &self.edges[eid];
            let mut pl = e.polyline.clone();
            if e.node_b == cur && e.node_a != cur {
                pl.reverse();
            }
            if !polyline.is_empty() {
                pl.remove(0);
            }
            cur = if e.node_a == cur { e.node_b } else { e.node_a };
            polyline.extend(pl);
        }
        let base_px = *polyline.first()?;
        let tip_px = *polyline.last()?;
        let total_length_mm: f64 = edge_ids.iter().map(|&i| self.edges[i].length_mm).sum();
        Some(LateralChain {
            base_px,
            tip_px,
            polyline,
            length_mm,
            total_length_mm,
        })
    }

    fn longest_chain_path(
        &self,
        cur: usize,
        adj: &HashMap<usize, Vec<usize>>,
        visited: &mut HashSet<usize>,
        stack: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let mut extended = false;
        if let Some(eids) = adj.get(&cur) {
            for &eid in eids {
                let e = &self.edges[eid];
                let other = if e.node_a == cur { e.node_b } else { e.node_a };
                if other == cur || visited.contains(&other) {
                    continue;
                }
                extended = true;
                visited.insert(other);
                stack.push(eid);
                self.longest_chain_path(other, adj, visited, stack, acc + e.length_mm, best);
                stack.pop();
                visited.remove(&other);
            }
        }
        if !extended && !stack.is_empty() {
            let better = match best {
                None => true,
                Some((bl, _)) => acc > *bl,
            };
            if better {
                *best = Some((acc, stack.clone()));
            }
        }
    }
}

/// One lateral root chain: its attachment point, dominant path, and length.
#[derive(Debug, Clone)]
pub struct LateralChain {
    pub base_px: (usize, usize),
    pub tip_px: (usize, usize),
    /// Pixel path from attachment to the farthest tip.
    pub polyline: Vec<(usize, usize)>,
    /// Length of the dominant path, mm.
    pub length_mm: f64,
    /// Summed length of every edge in the chain, mm.
    pub total_length_mm: f64,
}

fn near_set(set: &HashSet<(i64, i64)>, x: i64, y: i64, r: i64) -> bool {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r && set.contains(&(x + dx, y + dy)) {
                return true;
            }
        }
    }
    false
}

/// Stable lateral identities across frames.
#[derive(Debug, Clone, Default)]
pub struct LateralIdentityMap {
    /// stable id -> last seen base position (px)
    pub assignments: BTreeMap<usize, (usize, usize)>,
    next_id: usize,
}

impl LateralIdentityMap {
    /// Greedy nearest-base matching within `tolerance_px`; unmatched
    /// laterals get fresh ids. Returns the per-chain stable ids in the
    /// order of `laterals`.
    pub fn match_laterals(&mut self, laterals: &[LateralChain], tolerance_px: f64) -> Vec<usize> {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new(); // (dist, chain_idx, stable_id)
        for (ci, chain) in laterals.iter().enumerate() {
            for (&sid, &(px, py)) in &self.assignments {
                let dx = chain.base_px.0 as f64 - px as f64;
                let dy = chain.base_px.1 as f64 - py as f64;
                let d = (dx * dx + dy * dy).sqrt();
                if d <= tolerance_px {
                    candidates.push((d, ci, sid));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut chain_assigned: HashMap<usize, usize> = HashMap::new();
        let mut id_taken: HashSet<usize> = HashSet::new();
        for (_, ci, sid) in candidates {
            if chain_assigned.contains_key(&ci) || id_taken.contains(&sid) {
                continue;
            }
            chain_assigned.insert(ci, sid);
            id_taken.insert(sid);
        }
        let mut ids = Vec::with_capacity(laterals.len());
        for (ci, chain) in laterals.iter().enumerate() {
            let sid = match chain_assigned.get(&ci) {
                Some(&sid) => sid,
                None => {
                    let sid = self.next_id;
                    self.next_id += 1;
                    sid
                }
            };
            self.assignments.insert(sid, chain.base_px);
            ids.push(sid);
        }
        ids
    }
}
