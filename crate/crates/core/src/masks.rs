//! Binary structure masks and the handful of raster operations the pipeline
//! needs: positivity, patch-grid downsampling, contours, centroids and
//! connected components.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Segmented structures, in canonical order: anatomy, support devices, pathology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureId {
    LeftLung,
    RightLung,
    Heart,
    Cvc,
    Ett,
    Ngt,
    Sgc,
    ChestTube,
    Pneumothorax,
}

impl StructureId {
    pub const ALL: [StructureId; 9] = [
        StructureId::LeftLung,
        StructureId::RightLung,
        StructureId::Heart,
        StructureId::Cvc,
        StructureId::Ett,
        StructureId::Ngt,
        StructureId::Sgc,
        StructureId::ChestTube,
        StructureId::Pneumothorax,
    ];

    /// Plain-English name used in prompts and mark listings.
    pub fn name(self) -> &'static str {
        match self {
            StructureId::LeftLung => "left lung",
            StructureId::RightLung => "right lung",
            StructureId::Heart => "heart",
            StructureId::Cvc => "central venous catheter",
            StructureId::Ett => "endotracheal tube",
            StructureId::Ngt => "nasogastric tube",
            StructureId::Sgc => "swan ganz catheter",
            StructureId::ChestTube => "chest tube",
            StructureId::Pneumothorax => "pneumothorax",
        }
    }

    /// File-name friendly key, identical to the serde representation.
    pub fn key(self) -> &'static str {
        match self {
            StructureId::LeftLung => "left_lung",
            StructureId::RightLung => "right_lung",
            StructureId::Heart => "heart",
            StructureId::Cvc => "cvc",
            StructureId::Ett => "ett",
            StructureId::Ngt => "ngt",
            StructureId::Sgc => "sgc",
            StructureId::ChestTube => "chest_tube",
            StructureId::Pneumothorax => "pneumothorax",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.key() == key)
    }

    pub fn is_tube(self) -> bool {
        matches!(
            self,
            StructureId::Cvc | StructureId::Ett | StructureId::Ngt | StructureId::Sgc | StructureId::ChestTube
        )
    }
}

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A `height × width` raster with values in `{0, 1}`, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.height, self.width)?;
        for r in 0..self.height {
            let line: String = self.row(r).iter().map(|&p| if p == 1 { '#' } else { '.' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

const N4: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

impl BinaryMask {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        ensure!(
            pixels.len() == height * width,
            "mask of {height}x{width} needs {} pixels, got {}",
            height * width,
            pixels.len()
        );
        ensure!(pixels.iter().all(|&p| p <= 1), "mask pixels must be 0 or 1");
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                m.pixels[r * width + c] = u8::from(f(r, c));
            }
        }
        m
    }

    /// Mask with exactly the listed `(row, col)` pixels set.
    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::zeros(height, width);
        for &(r, c) in points {
            ensure!(r < height && c < width, "point ({r},{c}) outside {height}x{width}");
            m.set(r, c, true);
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.pixels[r * self.width..(r + 1) * self.width]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.pixels[r * self.width + c] == 1
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_signed(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width && self.get(r as usize, c as usize)
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.pixels[r * self.width + c] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Foreground coordinates in raster order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == 1)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// A mask is positive when it has at least one foreground pixel.
    pub fn is_positive(&self) -> bool {
        self.pixels.contains(&1)
    }

    /// `(min_row, min_col, max_row, max_col)` of the foreground, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.points().fold(None, |acc, (r, c)| {
            Some(match acc {
                None => (r, c, r, c),
                Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
            })
        })
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        ensure!(
            self.extents() == other.extents(),
            "mask extents differ: {:?} vs {:?}",
            self.extents(),
            other.extents()
        );
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| **a == 1 && **b == 1)
            .count())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        ensure!(self.extents() == other.extents(), "mask extents differ");
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(a, b)| a | b).collect();
        BinaryMask::new(self.height, self.width, pixels)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.extents() == other.extents() && self.pixels.iter().zip(&other.pixels).all(|(a, b)| a <= b)
    }

    /// Downsamples to the `patch × patch` lattice: a cell is set iff its window
    /// holds at least one foreground pixel, so one-pixel tubes survive.
    pub fn to_grid(&self, patch: usize) -> Result<GridMask> {
        ensure!(patch > 0, "patch size must be positive");
        ensure!(
            self.height.is_multiple_of(patch) && self.width.is_multiple_of(patch),
            "mask {}x{} is not divisible by patch size {patch}",
            self.height,
            self.width
        );
        let (rows, cols) = (self.height / patch, self.width / patch);
        let mut cells = vec![0u8; rows * cols];
        for (r, c) in self.points() {
            cells[(r / patch) * cols + c / patch] = 1;
        }
        Ok(GridMask { rows, cols, cells })
    }

    /// Resamples to `side × side`; each target cell covers a source window and
    /// is set iff that window contains foreground. Works for up- and
    /// down-sampling and non-divisible extents.
    pub fn resample_any(&self, side: usize) -> BinaryMask {
        let window = |i: usize, src: usize| {
            let start = i * src / side;
            let end = ((i + 1) * src / side).max(start + 1).min(src);
            start..end
        };
        BinaryMask::from_fn(side, side, |r, c| {
            window(r, self.height).any(|sr| window(c, self.width).any(|sc| self.get(sr, sc)))
        })
    }

    /// Foreground pixels with at least one 4-neighbour in the background
    /// (out-of-bounds counts as background).
    pub fn contour(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| {
            self.get(r, c)
                && N4
                    .iter()
                    .any(|(dr, dc)| !self.get_signed(r as isize + dr, c as isize + dc))
        })
    }

    /// Mean foreground coordinate `(row, col)`.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        ensure!(self.is_positive(), "centroid of an empty mask");
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
        for (r, c) in self.points() {
            sr += r as f64;
            sc += c as f64;
            n += 1.0;
        }
        Ok((sr / n, sc / n))
    }

    /// 8-connected components, largest first; ties go to the component whose
    /// first pixel in raster order comes first.
    pub fn connected_components(&self) -> Vec<BinaryMask> {
        let mut label = vec![usize::MAX; self.pixels.len()];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for start in 0..self.pixels.len() {
            if self.pixels[start] == 0 || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let i = members[head];
                head += 1;
                let (r, c) = ((i / self.width) as isize, (i % self.width) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nr, nc) = (r + dr, c + dc);
                        if self.get_signed(nr, nc) {
                            let j = nr as usize * self.width + nc as usize;
                            if label[j] == usize::MAX {
                                label[j] = id;
                                members.push(j);
                            }
                        }
                    }
                }
            }
            comps.push(members);
        }
        // stable sort keeps raster order of first pixels among equal sizes
        comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
        comps
            .into_iter()
            .map(|members| {
                let mut m = BinaryMask::zeros(self.height, self.width);
                for i in members {
                    m.pixels[i] = 1;
                }
                m
            })
            .collect()
    }
}

/// A mask on the encoder's patch lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl GridMask {
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        ensure!(cells.len() == rows * cols, "grid mask needs {} cells", rows * cols);
        ensure!(cells.iter().all(|&c| c <= 1), "grid cells must be 0 or 1");
        Ok(Self { rows, cols, cells })
    }

    pub fn from_cells(rows: usize, cols: usize, set: &[usize]) -> Result<Self> {
        let mut cells = vec![0; rows * cols];
        for &i in set {
            ensure!(i < cells.len(), "grid cell {i} out of range");
            cells[i] = 1;
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Row-major indices of set cells.
    pub fn set_cells(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_positive(&self) -> bool {
        self.cells.contains(&1)
    }
}

/// Masks for one image view, at most one per structure. Structures without an
/// entry are treated as empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    height: usize,
    width: usize,
    masks: BTreeMap<StructureId, BinaryMask>,
}

impl MaskSet {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            masks: BTreeMap::new(),
        }
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn insert(&mut self, id: StructureId, mask: BinaryMask) -> Result<()> {
        ensure!(
            mask.extents() == self.extents(),
            "{id} mask is {:?}, view is {:?}",
            mask.extents(),
            self.extents()
        );
        self.masks.insert(id, mask);
        Ok(())
    }

    pub fn get(&self, id: StructureId) -> Option<&BinaryMask> {
        self.masks.get(&id)
    }

    pub fn remove(&mut self, id: StructureId) -> Option<BinaryMask> {
        self.masks.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (StructureId, &BinaryMask)> {
        self.masks.iter().map(|(k, v)| (*k, v))
    }

    /// Positive masks in canonical structure order.
    pub fn positives(&self) -> impl Iterator<Item = (StructureId, &BinaryMask)> {
        self.iter().filter(|(_, m)| m.is_positive())
    }

    pub fn positive_ids(&self) -> Vec<StructureId> {
        self.positives().map(|(id, _)| id).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }
}
