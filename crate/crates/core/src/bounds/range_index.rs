//! Uniform-grid bucketing of the first-view keypoints for rectangle counts
//! and radius queries.

use crate::geometry::Pixel;

/// Upper limit on cells per indexed point before the cell size is grown.
const MAX_CELLS_PER_POINT: usize = 16;
const MIN_CELL_BUDGET: usize = 4096;

#[derive(Debug, Clone)]
struct Cell {
    start: u32,
    end: u32,
    // tight bounds of the points stored in the cell
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

/// Static 2D grid over a point set. Each point is stored in exactly one cell.
#[derive(Debug, Clone)]
pub struct RangeIndex {
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Cell>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    ids: Vec<u32>,
    // bounding rectangle of all points
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl RangeIndex {
    /// Buckets `points` into square cells of side `cell_size` pixels.
    ///
    /// The cell size is enlarged when the requested size would allocate
    /// far more cells than there are points.
    pub fn build(points: &[Pixel], cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        if points.is_empty() {
            return Self::empty(cell_size);
        }
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }

        let budget = (points.len() * MAX_CELLS_PER_POINT).max(MIN_CELL_BUDGET);
        let mut cell = cell_size;
        let (mut cols, mut rows);
        loop {
            cols = ((max_x - min_x) / cell).floor() as usize + 1;
            rows = ((max_y - min_y) / cell).floor() as usize + 1;
            if cols.saturating_mul(rows) <= budget {
                break;
            }
            cell *= 2.0;
        }

        let cell_of = |p: &Pixel| -> usize {
            let c = (((p.x - min_x) / cell) as usize).min(cols - 1);
            let r = (((p.y - min_y) / cell) as usize).min(rows - 1);
            r * cols + c
        };

        // counting sort into CSR layout
        let mut counts = vec![0u32; cols * rows + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut xs = vec![0.0; points.len()];
        let mut ys = vec![0.0; points.len()];
        let mut ids = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            let slot = fill[c] as usize;
            fill[c] += 1;
            xs[slot] = p.x;
            ys[slot] = p.y;
            ids[slot] = i as u32;
        }
        let cells = (0..cols * rows)
            .map(|c| {
                let (start, end) = (counts[c], counts[c + 1]);
                let mut cell = Cell {
                    start,
                    end,
                    min_x: f64::INFINITY,
                    max_x: f64::NEG_INFINITY,
                    min_y: f64::INFINITY,
                    max_y: f64::NEG_INFINITY,
                };
                for k in start as usize..end as usize {
                    cell.min_x = cell.min_x.min(xs[k]);
                    cell.max_x = cell.max_x.max(xs[k]);
                    cell.min_y = cell.min_y.min(ys[k]);
                    cell.max_y = cell.max_y.max(ys[k]);
                }
                cell
            })
            .collect();

        Self {
            origin_x: min_x,
            origin_y: min_y,
            cell_size: cell,
            cols,
            rows,
            cells,
            xs,
            ys,
            ids,
            min_x,
            max_x,
            min_y,
            max_y,
        }
    }

    fn empty(cell_size: f64) -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            cell_size,
            cols: 0,
            rows: 0,
            cells: Vec::new(),
            xs: Vec::new(),
            ys: Vec::new(),
            ids: Vec::new(),
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Effective cell side in pixels (may exceed the requested size).
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    #[inline]
    fn cell_span(&self, lo: f64, hi: f64, origin: f64, n: usize) -> (usize, usize) {
        let a = ((lo - origin) / self.cell_size).floor().max(0.0) as usize;
        let b = ((hi - origin) / self.cell_size).floor().max(0.0) as usize;
        (a.min(n - 1), b.min(n - 1))
    }

    /// Number of points inside the closed rectangle `[x0, x1] x [y0, y1]`.
    pub fn count_in_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> usize {
        if self.is_empty() || x1 < self.min_x || x0 > self.max_x || y1 < self.min_y || y0 > self.max_y
        {
            return 0;
        }
        let (c0, c1) = self.cell_span(x0, x1, self.origin_x, self.cols);
        let (r0, r1) = self.cell_span(y0, y1, self.origin_y, self.rows);
        let mut count = 0usize;
        for r in r0..=r1 {
            let row = &self.cells[r * self.cols..(r + 1) * self.cols];
            for cell in &row[c0..=c1] {
                if cell.start == cell.end {
                    continue;
                }
                if cell.min_x >= x0 && cell.max_x <= x1 && cell.min_y >= y0 && cell.max_y <= y1 {
                    count += (cell.end - cell.start) as usize;
                } else if !(cell.max_x < x0 || cell.min_x > x1 || cell.max_y < y0 || cell.min_y > y1) {
                    for k in cell.start as usize..cell.end as usize {
                        let (x, y) = (self.xs[k], self.ys[k]);
                        if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    /// Number of points strictly closer than `radius` to the closed rectangle
    /// `[x0, x1] x [y0, y1]`.
    pub fn count_near_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64, radius: f64) -> usize {
        let (qx0, qx1, qy0, qy1) = (x0 - radius, x1 + radius, y0 - radius, y1 + radius);
        if self.is_empty() || qx1 < self.min_x || qx0 > self.max_x || qy1 < self.min_y || qy0 > self.max_y {
            return 0;
        }
        let r2 = radius * radius;
        let (c0, c1) = self.cell_span(qx0, qx1, self.origin_x, self.cols);
        let (r0, r1) = self.cell_span(qy0, qy1, self.origin_y, self.rows);
        let mut count = 0usize;
        for r in r0..=r1 {
            let row = &self.cells[r * self.cols..(r + 1) * self.cols];
            for cell in &row[c0..=c1] {
                if cell.start == cell.end {
                    continue;
                }
                if cell.min_x >= x0 && cell.max_x <= x1 && cell.min_y >= y0 && cell.max_y <= y1 {
                    count += (cell.end - cell.start) as usize;
                    continue;
                }
                let gx = (x0 - cell.max_x).max(cell.min_x - x1).max(0.0);
                let gy = (y0 - cell.max_y).max(cell.min_y - y1).max(0.0);
                if gx * gx + gy * gy >= r2 {
                    continue;
                }
                for k in cell.start as usize..cell.end as usize {
                    let dx = (x0 - self.xs[k]).max(self.xs[k] - x1).max(0.0);
                    let dy = (y0 - self.ys[k]).max(self.ys[k] - y1).max(0.0);
                    if dx * dx + dy * dy < r2 {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Calls `visit(index, x, y)` for every point inside the closed rectangle.
    pub fn for_each_in_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64, mut visit: impl FnMut(usize, f64, f64)) {
        if self.is_empty() || x1 < self.min_x || x0 > self.max_x || y1 < self.min_y || y0 > self.max_y {
            return;
        }
        let (c0, c1) = self.cell_span(x0, x1, self.origin_x, self.cols);
        let (r0, r1) = self.cell_span(y0, y1, self.origin_y, self.rows);
        for r in r0..=r1 {
            let row = &self.cells[r * self.cols..(r + 1) * self.cols];
            for cell in &row[c0..=c1] {
                if cell.max_x < x0 || cell.min_x > x1 || cell.max_y < y0 || cell.min_y > y1 {
                    continue;
                }
                for k in cell.start as usize..cell.end as usize {
                    let (x, y) = (self.xs[k], self.ys[k]);
                    if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                        visit(self.ids[k] as usize, x, y);
                    }
                }
            }
        }
    }

    /// Calls `visit(index, squared_distance)` for every point strictly
    /// closer than `radius` to `centre`.
    #[inline]
    pub fn for_each_within(&self, centre: &Pixel, radius: f64, mut visit: impl FnMut(usize, f64)) {
        let (x0, x1, y0, y1) = (centre.x - radius, centre.x + radius, centre.y - radius, centre.y + radius);
        if self.is_empty() || x1 < self.min_x || x0 > self.max_x || y1 < self.min_y || y0 > self.max_y
        {
            return;
        }
        let r2 = radius * radius;
        let (c0, c1) = self.cell_span(x0, x1, self.origin_x, self.cols);
        let (r0, r1) = self.cell_span(y0, y1, self.origin_y, self.rows);
        for r in r0..=r1 {
            let row = &self.cells[r * self.cols..(r + 1) * self.cols];
            for cell in &row[c0..=c1] {
                for k in cell.start as usize..cell.end as usize {
                    let dx = self.xs[k] - centre.x;
                    let dy = self.ys[k] - centre.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 < r2 {
                        visit(self.ids[k] as usize, d2);
                    }
                }
            }
        }
    }

    pub fn count_within(&self, centre: &Pixel, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_within(centre, radius, |_, _| n += 1);
        n
    }
}
