//! Real-valued functions on finite sets of lattice sites.

use std::io::Write;

use crate::error::{IdlaError, Result};
use crate::lattice::Site;
use crate::snapshot::lex_next;

/// Anything that can be evaluated at lattice sites of a fixed dimension.
pub trait LatticeFunction {
    fn dim(&self) -> usize;
    /// Value at `x`, or `OutsideDomain` where undefined.
    fn value(&self, x: &[i32]) -> Result<f64>;
}

/// Values on a subset of a box `[lo, hi]`, stored densely with a domain mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    lo: Vec<i32>,
    hi: Vec<i32>,
    strides: Vec<usize>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl GridFunction {
    /// Empty function on the box `[lo, hi]`.
    pub fn new(lo: Vec<i32>, hi: Vec<i32>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(IdlaError::InvalidDomain(format!("bad box {lo:?}..{hi:?}")));
        }
        let d = lo.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (hi[i + 1] - lo[i + 1] + 1) as usize;
        }
        let cells = if d == 0 { 0 } else { strides[0] * (hi[0] - lo[0] + 1) as usize };
        Ok(GridFunction {
            lo,
            hi,
            strides,
            values: vec![0.0; cells],
            mask: vec![false; cells],
        })
    }

    /// Empty function on the cube `[-half, half]^d`.
    pub fn cube(d: usize, half: i32) -> Result<Self> {
        GridFunction::new(vec![-half; d], vec![half; d])
    }

    pub fn lo(&self) -> &[i32] {
        &self.lo
    }

    pub fn hi(&self) -> &[i32] {
        &self.hi
    }

    pub fn index(&self, x: &[i32]) -> Option<usize> {
        if x.len() != self.lo.len() {
            return None;
        }
        let mut idx = 0;
        for (i, &v) in x.iter().enumerate() {
            if v < self.lo[i] || v > self.hi[i] {
                return None;
            }
            idx += (v - self.lo[i]) as usize * self.strides[i];
        }
        Some(idx)
    }

    pub fn contains(&self, x: &[i32]) -> bool {
        self.index(x).is_some_and(|i| self.mask[i])
    }

    pub fn get(&self, x: &[i32]) -> Result<f64> {
        match self.index(x) {
            Some(i) if self.mask[i] => Ok(self.values[i]),
            _ => Err(IdlaError::OutsideDomain(x.to_vec())),
        }
    }

    /// Sets `x`, adding it to the domain; `x` must lie in the box.
    pub fn set(&mut self, x: &[i32], v: f64) -> Result<()> {
        let i = self.index(x).ok_or_else(|| IdlaError::OutsideDomain(x.to_vec()))?;
        self.values[i] = v;
        self.mask[i] = true;
        Ok(())
    }

    /// Number of sites in the domain.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Domain sites with values, lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        let mut cur = self.lo.clone();
        let mut done = self.values.is_empty();
        let mut idx = 0usize;
        std::iter::from_fn(move || {
            while !done {
                let here = (idx, cur.clone());
                idx += 1;
                done = !lex_next(&mut cur, &self.lo, &self.hi);
                if self.mask[here.0] {
                    return Some((Site::new(here.1), self.values[here.0]));
                }
            }
            None
        })
    }

    pub fn sum(&self) -> f64 {
        self.iter().map(|(_, v)| v).sum()
    }

    /// CSV with header `x1,..,xd,value`, one domain site per row.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_field_csv(self.lo.len(), self.iter(), w)
    }
}

impl LatticeFunction for GridFunction {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        self.get(x)
    }
}

/// Field CSV shared by every exported function.
pub fn write_field_csv(d: usize, rows: impl Iterator<Item = (Site, f64)>, mut w: impl Write) -> Result<()> {
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(w, "{},value", header.join(","))?;
    for (s, v) in rows {
        for c in s.coords() {
            write!(w, "{c},")?;
        }
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}

/// `x -> f(x - shift)`.
#[derive(Clone, Debug)]
pub struct Translated<F> {
    pub inner: F,
    pub shift: Vec<i32>,
}

impl<F: LatticeFunction> LatticeFunction for Translated<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        let y: Vec<i32> = x.iter().zip(&self.shift).map(|(a, b)| a - b).collect();
        self.inner.value(&y)
    }
}

impl<F: LatticeFunction + ?Sized> LatticeFunction for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        (**self).value(x)
    }
}

/// A closure defined on all of `Z^d`.
#[derive(Clone, Debug)]
pub struct Everywhere<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[i32]) -> f64> LatticeFunction for Everywhere<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[i32]) -> Result<f64> {
        Ok((self.f)(x))
    }
}
