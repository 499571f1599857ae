use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scalar::Scalar;
use crate::sim::LidarScan;

/// Grid geometry shared by every map in an observation stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostmapParams<T> {
    pub height: usize,
    pub width: usize,
    /// Meters per cell.
    pub cell_size: T,
    /// Chebyshev radius, in cells, marked around each return. Two cells at
    /// 0.1 m roughly matches the robot radius.
    #[serde(default)]
    pub inflation: usize,
}

impl<T: Scalar> Default for CostmapParams<T> {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            cell_size: T::lit(0.1),
            inflation: 2,
        }
    }
}

/// Egocentric binary occupancy grid.
///
/// The robot sits at the grid center with its heading pointing "up". Row 0
/// is the farthest-forward row and column 0 the leftmost column, so image
/// axes run u = right (robot -y) and v = up (robot +x). Robot-frame
/// coordinates are (x forward, y left) in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costmap<T> {
    pub height: usize,
    pub width: usize,
    pub cell_size: T,
    pub cells: Vec<u8>,
}

impl<T: Scalar> Costmap<T> {
    pub fn empty(params: &CostmapParams<T>) -> Self {
        Self {
            height: params.height,
            width: params.width,
            cell_size: params.cell_size,
            cells: vec![0; params.height * params.width],
        }
    }

    pub fn params(&self) -> CostmapParams<T> {
        CostmapParams {
            height: self.height,
            width: self.width,
            cell_size: self.cell_size,
            inflation: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.cell_size == other.cell_size
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[self.index(row, col)] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, occupied: bool) {
        let i = self.index(row, col);
        self.cells[i] = occupied as u8;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn occupied_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c != 0).map(|(i, _)| i)
    }

    /// Robot-frame position of a cell center.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2<T> {
        let h2 = T::from_usize_lossy(self.height) * T::half();
        let w2 = T::from_usize_lossy(self.width) * T::half();
        let r = T::from_usize_lossy(row);
        let c = T::from_usize_lossy(col);
        Vec2::new(
            (h2 - r - T::half()) * self.cell_size,
            (w2 - c - T::half()) * self.cell_size,
        )
    }

    #[inline]
    pub fn index_center(&self, idx: usize) -> Vec2<T> {
        self.cell_center(idx / self.width, idx % self.width)
    }

    /// Continuous grid coordinates (row, col) of a robot-frame point; integer
    /// values land on cell centers.
    #[inline]
    pub fn grid_coords(&self, p: Vec2<T>) -> (T, T) {
        let h2 = T::from_usize_lossy(self.height) * T::half();
        let w2 = T::from_usize_lossy(self.width) * T::half();
        (
            h2 - T::half() - p.x / self.cell_size,
            w2 - T::half() - p.y / self.cell_size,
        )
    }

    /// Cell containing a robot-frame point.
    pub fn cell_of(&self, p: Vec2<T>) -> Option<(usize, usize)> {
        let h2 = T::from_usize_lossy(self.height) * T::half();
        let w2 = T::from_usize_lossy(self.width) * T::half();
        let r = (h2 - p.x / self.cell_size).floor();
        let c = (w2 - p.y / self.cell_size).floor();
        if r < T::zero() || c < T::zero() {
            return None;
        }
        let (r, c) = (r.to_usize()?, c.to_usize()?);
        (r < self.height && c < self.width).then_some((r, c))
    }

    /// Bilinear occupancy at continuous grid coordinates; cells outside the
    /// map read as free.
    #[inline]
    pub fn bilinear(&self, row_f: T, col_f: T) -> T {
        let r0f = row_f.floor();
        let c0f = col_f.floor();
        let fr = row_f - r0f;
        let fc = col_f - c0f;
        let (Some(r0), Some(c0)) = (r0f.to_i64(), c0f.to_i64()) else {
            return T::zero();
        };
        let read = |r: i64, c: i64| -> T {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                T::zero()
            } else if self.cells[r as usize * self.width + c as usize] != 0 {
                T::one()
            } else {
                T::zero()
            }
        };
        let one = T::one();
        read(r0, c0) * (one - fr) * (one - fc)
            + read(r0, c0 + 1) * (one - fr) * fc
            + read(r0 + 1, c0) * fr * (one - fc)
            + read(r0 + 1, c0 + 1) * fr * fc
    }

    /// Intersection over union of occupied cells; 1 when both maps are empty.
    pub fn iou(&self, other: &Self) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.cells.iter().zip(&other.cells) {
            let (a, b) = (*a != 0, *b != 0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// IoU restricted to cells at least `margin` cells away from the border.
    pub fn iou_interior(&self, other: &Self, margin: usize) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for r in margin..self.height.saturating_sub(margin) {
            for c in margin..self.width.saturating_sub(margin) {
                let (a, b) = (self.get(r, c), other.get(r, c));
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Number of cells occupied in exactly one of the two maps.
    pub fn symmetric_difference(&self, other: &Self) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| (**a != 0) != (**b != 0))
            .count()
    }

    /// Binary PGM (P5), one byte per cell: 255 occupied, 0 free. Row 0 is
    /// the top of the image (ahead of the robot).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.cells.iter().map(|&c| if c != 0 { 255u8 } else { 0 }));
        out
    }
}

/// Marks the cell containing every lidar return shorter than max range,
/// together with its `inflation` neighbourhood. Free space is not carved.
pub fn scan_to_costmap<T: Scalar>(scan: &LidarScan<T>, params: &CostmapParams<T>) -> Costmap<T> {
    let mut map = Costmap::empty(params);
    for (i, &range) in scan.ranges.iter().enumerate() {
        if range >= scan.max_range {
            continue;
        }
        let (s, c) = scan.beam_angle(i).sin_cos();
        if let Some((r, col)) = map.cell_of(Vec2::new(range * c, range * s)) {
            let k = params.inflation;
            for rr in r.saturating_sub(k)..=(r + k).min(map.height - 1) {
                for cc in col.saturating_sub(k)..=(col + k).min(map.width - 1) {
                    map.set(rr, cc, true);
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::LidarConfig;

    fn scan_with(hits: &[(usize, f64)]) -> LidarScan<f64> {
        let mut scan = LidarScan::empty(&LidarConfig::default());
        for &(i, r) in hits {
            scan.ranges[i] = r;
        }
        scan
    }

    fn endpoint_params() -> CostmapParams<f64> {
        CostmapParams {
            inflation: 0,
            ..CostmapParams::default()
        }
    }

    #[test]
    fn max_range_scan_is_empty() {
        let map = scan_to_costmap(&scan_with(&[]), &CostmapParams::default());
        assert_eq!(map.occupied_count(), 0);
    }

    #[test]
    fn hit_ahead_lands_ten_rows_up() {
        // Beam 180 points straight ahead.
        let scan = scan_with(&[(180, 1.0)]);
        assert_eq!(scan.beam_angle(180), 0.0);
        let map = scan_to_costmap(&scan, &endpoint_params());
        assert_eq!(map.occupied_count(), 1);
        // Row 24 is the first row at/behind the robot; 10 rows up is row 14.
        assert!(map.get(14, 24));
    }

    #[test]
    fn hits_in_same_cell_are_idempotent() {
        let scan = scan_with(&[(181, 1.01), (182, 1.02)]);
        let map = scan_to_costmap(&scan, &endpoint_params());
        assert_eq!(map.occupied_count(), 1);
    }

    #[test]
    fn inflation_marks_square_footprint() {
        let map = scan_to_costmap(&scan_with(&[(180, 1.0)]), &CostmapParams::default());
        assert_eq!(map.occupied_count(), 25);
        assert!(map.get(12, 22) && map.get(16, 26));
        assert!(!map.get(11, 24) && !map.get(14, 27));
    }

    #[test]
    fn cell_center_round_trip() {
        let map = Costmap::<f64>::empty(&CostmapParams::default());
        for (r, c) in [(0, 0), (23, 24), (47, 47), (10, 3)] {
            assert_eq!(map.cell_of(map.cell_center(r, c)), Some((r, c)));
            let (rf, cf) = map.grid_coords(map.cell_center(r, c));
            assert!((rf - r as f64).abs() < 1e-9 && (cf - c as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn pgm_header_and_size() {
        let mut map = Costmap::<f64>::empty(&CostmapParams::default());
        map.set(0, 0, true);
        let pgm = map.to_pgm();
        assert!(pgm.starts_with(b"P5\n48 48\n255\n"));
        assert_eq!(pgm.len(), "P5\n48 48\n255\n".len() + 48 * 48);
        assert_eq!(pgm["P5\n48 48\n255\n".len()], 255);
    }
}
