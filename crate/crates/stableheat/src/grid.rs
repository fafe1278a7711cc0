//! Space-time windows and lattice density fields.
//!
//! A [`SpaceTimeWindow`] fixes a time pair $t < s$ and a uniform cubic
//! spatial lattice $\{-L, \dots, -h, 0, h, \dots, L\}^d$; a
//! [`DensityField`] holds heat-kernel values on that lattice together with
//! the base point, the construction route, and a numerical tolerance
//! estimate. Fields serialize to CSV (one row per lattice point, columns
//! coordinates then value) with a JSON sidecar for the metadata.

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// A time pair and a symmetric cubic lattice around the origin.
///
/// The lattice has `2 half_points + 1` nodes per axis at spacing `spacing`,
/// so it always contains the origin and extends to
/// `half_points * spacing` in every direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeWindow {
    pub t: f64,
    pub s: f64,
    pub d: usize,
    pub spacing: f64,
    pub half_points: usize,
}

impl SpaceTimeWindow {
    /// Builds a window whose lattice covers at least `[-extent, extent]^d`.
    pub fn new(t: f64, s: f64, d: usize, extent: f64, spacing: f64) -> Result<SpaceTimeWindow> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::config(format!(
                "field `spacing`: must be positive, got {spacing}"
            )));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::config(format!(
                "field `extent`: must be positive, got {extent}"
            )));
        }
        let half_points = (extent / spacing - 1e-9).ceil().max(1.0) as usize;
        let w = SpaceTimeWindow { t, s, d, spacing, half_points };
        w.validate_shape()?;
        Ok(w)
    }

    /// Basic well-formedness: times, dimension, lattice size.
    pub fn validate_shape(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::config(format!(
                "field `d`: dimension must be 1, 2, or 3, got {}",
                self.d
            )));
        }
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::config(format!(
                "field `t`: start time must be >= 0, got {}",
                self.t
            )));
        }
        if !self.s.is_finite() || !(self.s > self.t) {
            return Err(Error::config(format!(
                "field `s`: end time must exceed t = {}, got {}",
                self.t, self.s
            )));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::config(format!(
                "field `spacing`: must be positive, got {}",
                self.spacing
            )));
        }
        if self.half_points == 0 {
            return Err(Error::config("field `half_points`: lattice needs at least one shell"));
        }
        Ok(())
    }

    /// Full validity for a given stability index: shape plus the coverage
    /// requirement `extent >= 4 (s-t)^{1/alpha}`, which keeps the bulk of
    /// the density inside the window.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        self.validate_shape()?;
        let need = 4.0 * (self.s - self.t).powf(1.0 / alpha);
        if self.extent() < need - 1e-12 {
            return Err(Error::config(format!(
                "field `extent`: window reaches {:.6} but must cover 4 (s-t)^{{1/alpha}} = {:.6}",
                self.extent(),
                need
            )));
        }
        Ok(())
    }

    /// Lattice reach per axis.
    pub fn extent(&self) -> f64 {
        self.half_points as f64 * self.spacing
    }

    /// Nodes per axis.
    pub fn points_per_axis(&self) -> usize {
        2 * self.half_points + 1
    }

    /// Total lattice size.
    pub fn len(&self) -> usize {
        self.points_per_axis().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The coordinates of one axis, ascending through 0.
    pub fn axis(&self) -> Vec<f64> {
        let k = self.half_points as i64;
        (-k..=k).map(|i| i as f64 * self.spacing).collect()
    }

    /// The lattice offset for a row-major flat index.
    pub fn offset(&self, idx: usize) -> Point {
        let n = self.points_per_axis();
        debug_assert!(idx < self.len());
        let k = self.half_points as i64;
        let mut rem = idx;
        let mut out = geom::ZERO;
        for axis in (0..self.d).rev() {
            let i = (rem % n) as i64;
            rem /= n;
            out[axis] = (i - k) as f64 * self.spacing;
        }
        out
    }

    /// Row-major flat index of integer lattice coordinates in
    /// `-half_points..=half_points` per axis.
    pub fn index_of(&self, coords: [i64; 3]) -> usize {
        let n = self.points_per_axis();
        let k = self.half_points as i64;
        let mut idx = 0usize;
        for axis in 0..self.d {
            debug_assert!(coords[axis].abs() <= k);
            idx = idx * n + (coords[axis] + k) as usize;
        }
        idx
    }

    /// Cell volume `spacing^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.d as i32)
    }
}

/// Construction route of a density field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fourier,
    Parametrix,
    Empirical,
}

/// Heat-kernel values $p_{t,s}(\mathrm{base} + u, \mathrm{base})$ on the
/// window lattice of offsets u (displacement form when base = 0).
#[derive(Debug, Clone)]
pub struct DensityField {
    pub window: SpaceTimeWindow,
    pub base: Point,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Estimated absolute numerical tolerance of the values.
    pub tolerance: f64,
    /// Number of negative inversion artifacts clamped to zero.
    pub clamped: usize,
    /// Estimated probability mass outside the window.
    pub tail_mass: f64,
}

impl DensityField {
    /// The absolute spatial location of a lattice index.
    pub fn location(&self, idx: usize) -> Point {
        geom::add(self.base, self.window.offset(idx))
    }

    /// Lattice sum times cell volume: the mass inside the window.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.window.cell_volume()
    }

    /// Multilinear interpolation at the absolute location x; None outside
    /// the window.
    pub fn value_at(&self, x: Point) -> Option<f64> {
        let w = &self.window;
        let h = w.spacing;
        let k = w.half_points as i64;
        let mut lo = [0i64; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..w.d {
            let u = (x[axis] - self.base[axis]) / h;
            if !(u >= -(k as f64) - 1e-9 && u <= k as f64 + 1e-9) {
                return None;
            }
            let f = u.floor().clamp(-(k as f64), (k - 1).max(-k) as f64);
            lo[axis] = f as i64;
            frac[axis] = (u - f).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << w.d) {
            let mut coords = [0i64; 3];
            let mut weight = 1.0;
            for axis in 0..w.d {
                let up = (corner >> axis) & 1 == 1;
                coords[axis] = lo[axis] + up as i64;
                weight *= if up { frac[axis] } else { 1.0 - frac[axis] };
            }
            if weight > 0.0 {
                acc += weight * self.values[w.index_of(coords)];
            }
        }
        Some(acc)
    }

    /// Writes the lattice as CSV with coordinate columns then the value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names = ["x1", "x2", "x3"];
        writeln!(out, "{},value", names[..self.window.d].join(","))?;
        for (idx, v) in self.values.iter().enumerate() {
            let loc = self.location(idx);
            for c in loc.iter().take(self.window.d) {
                write!(out, "{c:.12e},")?;
            }
            writeln!(out, "{v:.12e}")?;
        }
        Ok(())
    }

    /// The JSON sidecar object; callers may insert further keys (config
    /// hash, route-specific diagnostics) before writing.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "window": self.window,
            "base": self.base,
            "provenance": self.provenance,
            "tolerance": self.tolerance,
            "clamped": self.clamped,
            "tail_mass": self.tail_mass,
        })
    }

    /// Writes the sidecar (with optional extra fields) next to a CSV.
    pub fn write_sidecar(
        &self,
        path: &Path,
        extra: &[(&str, serde_json::Value)],
    ) -> Result<()> {
        let mut doc = self.sidecar_json();
        let map = doc.as_object_mut().expect("sidecar is an object");
        for (key, value) in extra {
            map.insert((*key).to_string(), value.clone());
        }
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
