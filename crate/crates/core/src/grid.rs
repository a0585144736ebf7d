//! Binary pixel grids with the morphology and connected-component
//! primitives the rest of the pipeline is built on.

/// A dense row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

/// Offsets of the 8-neighborhood, clockwise from north.
pub const NEIGHBORS8: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

impl BinaryGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut g = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                g.set(x, y, f(x, y));
            }
        }
        g
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    #[inline]
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn on_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Number of on-pixels among the 8 neighbors.
    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS8
            .iter()
            .filter(|(dx, dy)| self.get_i(x as i64 + dx, y as i64 + dy))
            .count()
    }

    /// Tight bounding box of on-pixels as (x0, y0, x1, y1) inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }

    pub fn dilate3x3(&self) -> BinaryGrid {
        let mut out = BinaryGrid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64
                            {
                                out.set(nx as usize, ny as usize, true);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn erode3x3(&self) -> BinaryGrid {
        let mut out = BinaryGrid::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut all = true;
                'probe: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if !self.get_i(x as i64 + dx, y as i64 + dy) {
                            all = false;
                            break 'probe;
                        }
                    }
                }
                out.set(x, y, all);
            }
        }
        out
    }

    /// Morphological closing with a 3x3 structuring element.
    pub fn close3x3(&self) -> BinaryGrid {
        self.dilate3x3().erode3x3()
    }
}

/// One 8-connected component of on-pixels.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    /// (x0, y0, x1, y1) inclusive
    pub bbox: (usize, usize, usize, usize),
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
        (sx / n, sy / n)
    }
}

/// 8-connected component labelling via iterative flood fill.
pub fn connected_components(grid: &BinaryGrid) -> Vec<Component> {
    let mut seen = vec![false; grid.width * grid.height];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for y in 0..grid.height {
        for x in 0..grid.width {
            if !grid.get(x, y) || seen[y * grid.width + x] {
                continue;
            }
            let mut pixels = Vec::new();
            let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
            stack.push((x, y));
            seen[y * grid.width + x] = true;
            while let Some((cx, cy)) = stack.pop() {
                pixels.push((cx, cy));
                x0 = x0.min(cx);
                y0 = y0.min(cy);
                x1 = x1.max(cx);
                y1 = y1.max(cy);
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if grid.get_i(nx, ny) {
                        let idx = ny as usize * grid.width + nx as usize;
                        if !seen[idx] {
                            seen[idx] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
            comps.push(Component {
                pixels,
                bbox: (x0, y0, x1, y1),
            });
        }
    }
    comps
}

/// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher).
/// Each output element is the squared distance in pixels to the nearest
/// on-pixel; `f64::INFINITY` when the grid is empty.
pub fn distance_transform_sq(grid: &BinaryGrid) -> Vec<f64> {
    let (w, h) = (grid.width, grid.height);
    if grid.is_empty() {
        return vec![f64::INFINITY; w * h];
    }
    // large finite sentinel keeps the parabola intersections well-defined
    let inf = 1e20;
    let mut d: Vec<f64> = (0..w * h)
        .map(|i| if grid.data[i] { 0.0 } else { inf })
        .collect();

    let mut col = vec![0.0; h.max(w)];
    // columns
    for x in 0..w {
        for y in 0..h {
            col[y] = d[y * w + x];
        }
        let t = dt_1d(&col[..h]);
        for y in 0..h {
            d[y * w + x] = t[y];
        }
    }
    // rows
    for y in 0..h {
        let row = dt_1d(&d[y * w..(y + 1) * w]);
        d[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    d
}

/// 1-D squared distance transform of a sampled function.
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut d = vec![0.0f64; n];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        d[q] = diff * diff + f[p];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closing_preserves_solid_block() {
        let g = BinaryGrid::from_fn(10, 10, |x, y| (2..5).contains(&x) && (2..5).contains(&y));
        assert_eq!(g.close3x3(), g);
    }

    #[test]
    fn components_split_and_counted() {
        let mut g = BinaryGrid::new(10, 10);
        g.set(1, 1, true);
        g.set(2, 2, true); // diagonal, same component
        g.set(8, 8, true);
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 2);
        let mut areas: Vec<usize> = comps.iter().map(|c| c.area()).collect();
        areas.sort();
        assert_eq!(areas, vec![1, 2]);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = BinaryGrid::from_fn(17, 13, |x, y| (x * 7 + y * 3) % 11 == 0);
        let dt = distance_transform_sq(&g);
        let on = g.on_pixels();
        for y in 0..g.height {
            for x in 0..g.width {
                let brute = on
                    .iter()
                    .map(|&(ox, oy)| {
                        let (dx, dy) = (x as f64 - ox as f64, y as f64 - oy as f64);
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((dt[y * g.width + x] - brute).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distance_transform_empty_is_infinite() {
        let g = BinaryGrid::new(4, 4);
        assert!(distance_transform_sq(&g).iter().all(|d| d.is_infinite()));
    }
}
