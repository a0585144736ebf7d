//! Zhang-Suen thinning and spur pruning.

use crate::grid::{BinaryGrid, NEIGHBORS8};

/// A 1-pixel-wide skeleton; thin() is the only constructor that
/// guarantees the thinned invariant.
pub type SkeletonGrid = BinaryGrid;

/// Zhang-Suen two-subiteration thinning to a fixed point.
pub fn thin(mask: &BinaryGrid) -> SkeletonGrid {
    let mut grid = mask.clone();
    let mut to_delete: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut changed = false;
        for sub in 0..2 {
            to_delete.clear();
            // restrict scanning to the occupied region
            let Some((x0, y0, x1, y1)) = grid.bounding_box() else {
                return grid;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if grid.get(x, y) && zhang_suen_deletable(&grid, x, y, sub) {
                        to_delete.push((x, y));
                    }
                }
            }
            if !to_delete.is_empty() {
                changed = true;
                for &(x, y) in &to_delete {
                    grid.set(x, y, false);
                }
            }
        }
        if !changed {
            return grid;
        }
    }
}

/// Neighbors P2..P9 clockwise starting north, per the Zhang-Suen paper.
#[inline]
fn ring(grid: &BinaryGrid, x: usize, y: usize) -> [bool; 8] {
    let (xi, yi) = (x as i64, y as i64);
    [
        grid.get_i(xi, yi - 1),     // P2
        grid.get_i(xi + 1, yi - 1), // P3
        grid.get_i(xi + 1, yi),     // P4
        grid.get_i(xi + 1, yi + 1), // P5
        grid.get_i(xi, yi + 1),     // P6
        grid.get_i(xi - 1, yi + 1), // P7
        grid.get_i(xi - 1, yi),     // P8
        grid.get_i(xi - 1, yi - 1), // P9
    ]
}

#[inline]
fn zhang_suen_deletable(grid: &BinaryGrid, x: usize, y: usize, sub: usize) -> bool {
    let p = ring(grid, x, y);
    let b: usize = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
    if sub == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Removes dangling tip-to-junction paths shorter than `min_branch_px`,
/// iterating to a fixed point, then re-thins.
pub fn prune_spurs(skel: &SkeletonGrid, min_branch_px: usize) -> SkeletonGrid {
    let mut grid = skel.clone();
    loop {
        let mut removed_any = false;
        let tips: Vec<(usize, usize)> = grid
            .on_pixels()
            .into_iter()
            .filter(|&(x, y)| grid.neighbor_count(x, y) == 1)
            .collect();
        for tip in tips {
            if !grid.get(tip.0, tip.1) {
                continue; // consumed by an earlier removal this round
            }
            let (path, terminal) = walk_from_tip(&grid, tip);
            // a path ending at another tip is the whole component, not a spur
            let Terminal::Junction = terminal else {
                continue;
            };
            if path.len() < min_branch_px {
                for (x, y) in path {
                    grid.set(x, y, false);
                }
                removed_any = true;
            }
        }
        if !removed_any {
            break;
        }
    }
    thin(&grid)
}

enum Terminal {
    Junction,
    Tip,
}

/// Walks from a degree-1 pixel through degree-2 pixels; returns the
/// traversed pixels (junction excluded) and what stopped the walk.
fn walk_from_tip(grid: &BinaryGrid, tip: (usize, usize)) -> (Vec<(usize, usize)>, Terminal) {
    let mut path = vec![tip];
    let mut prev: Option<(usize, usize)> = None;
    let mut cur = tip;
    loop {
        let mut next = None;
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (cur.0 as i64 + dx, cur.1 as i64 + dy);
            if !grid.get_i(nx, ny) {
                continue;
            }
            let n = (nx as usize, ny as usize);
            if Some(n) != prev {
                next = Some(n);
                if grid.neighbor_count(n.0, n.1) >= 3 {
                    return (path, Terminal::Junction);
                }
            }
        }
        match next {
            Some(n) if grid.neighbor_count(n.0, n.1) <= 2 => {
                if grid.neighbor_count(n.0, n.1) == 1 {
                    path.push(n);
                    return (path, Terminal::Tip);
                }
                path.push(n);
                prev = Some(cur);
                cur = n;
            }
            _ => return (path, Terminal::Tip),
        }
    }
}
