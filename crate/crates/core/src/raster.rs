//! Row-major 2D rasters and the disparity grid built on top of them.

use std::ops::{Index, IndexMut};

/// A dense `height × width` grid stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Wraps an existing row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index_of(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Keeps every `factor`-th pixel in both directions, starting at (0, 0).
    pub fn subsample(&self, factor: usize) -> Raster<T>
    where
        T: Clone,
    {
        let width = self.width / factor;
        let height = self.height / factor;
        Raster::from_fn(width, height, |x, y| {
            self.get(x * factor, y * factor).clone()
        })
    }
}

impl<T> Index<usize> for Raster<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Raster<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Which resolution a disparity raster lives at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridLevel {
    /// The 1/8-scale grid bundle adjustment runs on.
    LowRes,
    FullRes,
}

/// Per-frame inverse depth with a validity mask.
///
/// Values are strictly positive wherever `valid` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityGrid {
    pub values: Raster<f64>,
    pub valid: Raster<bool>,
    pub level: GridLevel,
}

impl DisparityGrid {
    /// Builds a grid from raw values; non-finite or non-positive entries are masked out.
    pub fn from_values(values: Raster<f64>, level: GridLevel) -> Self {
        let valid = values.map(|&v| v.is_finite() && v > 0.0);
        Self {
            values,
            valid,
            level,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64, level: GridLevel) -> Self {
        Self::from_values(Raster::filled(width, height, value), level)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Disparity at a flat index, if valid.
    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.map(|&v| v * s),
            valid: self.valid.clone(),
            level: self.level,
        }
    }

    pub fn subsample(&self, factor: usize) -> Self {
        Self {
            values: self.values.subsample(factor),
            valid: self.valid.subsample(factor),
            level: GridLevel::LowRes,
        }
    }
}

/// Median of a slice of finite values; `None` when empty. Averages the two
/// middle elements for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Linear-interpolated percentile (`q` in [0, 100]) of a non-empty slice.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(v[lo] + (v[hi] - v[lo]) * frac)
}
