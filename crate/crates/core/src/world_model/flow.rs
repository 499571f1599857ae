use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::observation::Costmap;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams<T> {
    /// Largest centroid displacement accepted as a match (cells/step).
    pub cap: T,
    /// Flows shorter than this are treated as registration jitter and zeroed
    /// (cells/step).
    pub deadzone: T,
    /// Smallest accepted size ratio between matched blobs.
    pub min_size_ratio: T,
}

impl<T: Scalar> Default for FlowParams<T> {
    fn default() -> Self {
        Self {
            cap: T::lit(3.0),
            deadzone: T::lit(0.3),
            min_size_ratio: T::lit(0.5),
        }
    }
}

impl<T: Scalar> FlowParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.cap > T::zero()
            && self.deadzone >= T::zero()
            && self.min_size_ratio > T::zero()
            && self.min_size_ratio <= T::one()
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid flow params {self:?}")))
        }
    }
}

/// Per-cell displacement of the newest frame's obstacle cells in grid units
/// per frame interval: `x` counts columns (rightward positive), `y` counts
/// rows (downward, i.e. toward the rear, positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel<T> {
    pub height: usize,
    pub width: usize,
    pub flow: Vec<Vec2<T>>,
    /// Fraction of newest-frame blobs matched in the previous frame.
    pub confidence: T,
}

impl<T: Scalar> FlowModel<T> {
    pub fn zero(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            flow: vec![Vec2::zero(); height * width],
            confidence: T::one(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Vec2<T> {
        self.flow[row * self.width + col]
    }

    pub fn is_zero(&self) -> bool {
        self.flow.iter().all(|f| f.x == T::zero() && f.y == T::zero())
    }

    pub fn max_magnitude(&self) -> T {
        self.flow.iter().map(|f| f.norm()).fold(T::zero(), T::max)
    }
}

/// 8-connected group of occupied cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob<T> {
    pub cells: Vec<usize>,
    /// (column, row) mean of the member cells.
    pub centroid: Vec2<T>,
    pub touches_border: bool,
}

pub fn connected_blobs<T: Scalar>(map: &Costmap<T>) -> Vec<Blob<T>> {
    let (h, w) = map.shape();
    let mut label = vec![usize::MAX; h * w];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for start in map.occupied_indices() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = blobs.len();
        label[start] = id;
        stack.push(start);
        let mut cells = Vec::new();
        let mut touches_border = false;
        let (mut sr, mut sc) = (0usize, 0usize);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            cells.push(i);
            sr += r;
            sc += c;
            touches_border |= r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = nr * w + nc;
                    if map.cells[j] != 0 && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        cells.sort_unstable();
        let n = T::from_usize_lossy(cells.len());
        blobs.push(Blob {
            centroid: Vec2::new(T::from_usize_lossy(sc) / n, T::from_usize_lossy(sr) / n),
            cells,
            touches_border,
        });
    }
    blobs
}

/// Greedy nearest-centroid association of `cur` blobs to `prev` blobs.
/// Candidate pairs farther apart than the cap or with mismatched sizes are
/// discarded; remaining pairs are taken nearest first, larger blobs first on
/// ties.
pub fn match_blobs<T: Scalar>(prev: &[Blob<T>], cur: &[Blob<T>], params: &FlowParams<T>) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (j, b) in cur.iter().enumerate() {
        for (i, a) in prev.iter().enumerate() {
            let d = (b.centroid - a.centroid).norm();
            let (na, nb) = (a.cells.len(), b.cells.len());
            let ratio = T::from_usize_lossy(na.min(nb)) / T::from_usize_lossy(na.max(nb));
            if d <= params.cap && ratio >= params.min_size_ratio {
                pairs.push((d, nb, j, i));
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.1.cmp(&x.1))
            .then(x.2.cmp(&y.2))
            .then(x.3.cmp(&y.3))
    });
    let mut matched = vec![None; cur.len()];
    let mut used = vec![false; prev.len()];
    for (_, _, j, i) in pairs {
        if matched[j].is_none() && !used[i] {
            matched[j] = Some(i);
            used[i] = true;
        }
    }
    matched
}

/// Estimates per-blob flow over an aligned frame stack (oldest first).
///
/// Each newest-frame blob is followed back through its chain of matches and
/// receives the mean per-frame centroid displacement along it. Unmatched
/// blobs and blobs clipped by the map border get zero flow.
pub fn estimate_flow<T: Scalar>(frames: &[Costmap<T>], params: &FlowParams<T>) -> Result<FlowModel<T>> {
    if frames.len() < 2 {
        return Err(Error::History(format!(
            "flow needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let newest = &frames[frames.len() - 1];
    for f in frames {
        if f.shape() != newest.shape() {
            return Err(Error::ShapeMismatch {
                left: f.shape(),
                right: newest.shape(),
            });
        }
    }
    let blobs: Vec<Vec<Blob<T>>> = frames.iter().map(connected_blobs).collect();
    let links: Vec<Vec<Option<usize>>> = (1..frames.len())
        .map(|k| match_blobs(&blobs[k - 1], &blobs[k], params))
        .collect();

    let (h, w) = newest.shape();
    let mut model = FlowModel::zero(h, w);
    let last = frames.len() - 1;
    let mut matched = 0usize;
    for (j, blob) in blobs[last].iter().enumerate() {
        let Some(first) = links[last - 1][j] else {
            continue;
        };
        matched += 1;
        if blob.touches_border || blobs[last - 1][first].touches_border {
            continue;
        }
        let (mut k, mut idx, mut steps) = (last - 1, first, 1usize);
        while k > 0 {
            match links[k - 1][idx] {
                Some(prev) if !blobs[k - 1][prev].touches_border => {
                    idx = prev;
                    k -= 1;
                    steps += 1;
                }
                _ => break,
            }
        }
        let f = (blob.centroid - blobs[k][idx].centroid) * (T::one() / T::from_usize_lossy(steps));
        let n = f.norm();
        if n < params.deadzone {
            continue;
        }
        let f = if n > params.cap { f * (params.cap / n) } else { f };
        for &c in &blob.cells {
            model.flow[c] = f;
        }
    }
    model.confidence = if blobs[last].is_empty() {
        T::one()
    } else {
        T::from_usize_lossy(matched) / T::from_usize_lossy(blobs[last].len())
    };
    Ok(model)
}

/// Moves every occupied cell by its flow times `steps` frame intervals,
/// rounding to the nearest cell. Cells leaving the map are dropped.
pub fn advect<T: Scalar>(map: &Costmap<T>, flow: &FlowModel<T>, steps: T) -> Costmap<T> {
    let mut out = Costmap::empty(&map.params());
    let (h, w) = (map.height as i64, map.width as i64);
    for idx in map.occupied_indices() {
        let f = flow.flow[idx];
        let r = (idx / map.width) as i64 + (f.y * steps).round().to_i64().unwrap_or(i64::MAX / 2);
        let c = (idx % map.width) as i64 + (f.x * steps).round().to_i64().unwrap_or(i64::MAX / 2);
        if (0..h).contains(&r) && (0..w).contains(&c) {
            out.set(r as usize, c as usize, true);
        }
    }
    out
}
