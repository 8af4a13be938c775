//! Row-major per-pixel maps.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A `width x height` grid of values, row-major, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Map<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ScalarMap = Map<f64>;
pub type RgbMap = Map<[f64; 3]>;
pub type NormalMap = Map<Vector3<f64>>;
pub type Mask = Map<bool>;

impl<T: Clone> Map<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Columns rotated right by `k` (pixel `u` moves to `u + k mod W`).
    pub fn shift_columns(&self, k: usize) -> Self {
        let mut out = self.clone();
        let w = self.width;
        for v in 0..self.height {
            for u in 0..w {
                out.data[v * w + (u + k) % w] = self.data[v * w + u].clone();
            }
        }
        out
    }
}

impl<T> Map<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape {
                expected: format!("{} values for {width}x{height}", width * height),
                actual: format!("{}", data.len()),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Map<U> {
        Map {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Map<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_shape<U>(&self, other: &Map<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            })
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Map {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }
}

impl RgbMap {
    /// Per-pixel channel mean.
    pub fn gray(&self) -> ScalarMap {
        self.map(|c| (c[0] + c[1] + c[2]) / 3.0)
    }

    /// Single channel as a scalar map.
    pub fn channel(&self, c: usize) -> ScalarMap {
        self.map(|p| p[c])
    }
}

/// Largest absolute difference between two equally shaped scalar maps.
pub fn max_abs_diff(a: &ScalarMap, b: &ScalarMap) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
