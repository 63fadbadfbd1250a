use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, Objective};

/// Fraction of the anchors' bounding box added on every side.
pub const MARGIN: f64 = 0.2;

/// Loss and accuracy over the plane through three models.
///
/// Point `(x, y)` is `origin + x·e1 + y·e2` with `origin = a`,
/// `e1 ∝ b − a` and `e2 ∝` the part of `c − a` orthogonal to `e1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeGrid {
    /// Not serialized: the three vectors are as large as the models.
    #[serde(skip)]
    pub origin: Option<ModelParams>,
    #[serde(skip)]
    pub basis: Option<(ModelParams, ModelParams)>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `losses[iy][ix]` is the loss at `(xs[ix], ys[iy])`.
    pub losses: Vec<Vec<f64>>,
    pub accuracies: Option<Vec<Vec<f64>>>,
    /// Coordinates of `a`, `b` and `c`.
    pub anchors: [(f64, f64); 3],
}

impl LandscapeGrid {
    /// Parameters at plane coordinates `(x, y)`.
    pub fn point(&self, x: f64, y: f64) -> ModelParams {
        let origin = self.origin.as_ref().expect("landscape basis was not kept");
        let (e1, e2) = self.basis.as_ref().expect("landscape basis was not kept");
        origin.zip_map(e1, |o, u| o + x * u).zip_map(e2, |p, v| p + y * v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `x,y,loss,accuracy` rows in row-major order over `(y, x)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,loss,accuracy\n");
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                let acc = self
                    .accuracies
                    .as_ref()
                    .map(|a| a[iy][ix].to_string())
                    .unwrap_or_default();
                writeln!(out, "{x},{y},{},{acc}", self.losses[iy][ix]).unwrap();
            }
        }
        out
    }
}

fn span(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let pad = MARGIN * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Evaluates `objective` on a `resolution × resolution` grid covering the
/// triangle `a, b, c` with a 20% margin.
pub fn landscape<O: Objective + ?Sized>(
    a: &ModelParams,
    b: &ModelParams,
    c: &ModelParams,
    objective: &O,
    resolution: usize,
) -> Result<LandscapeGrid> {
    a.check_same_shape(b, "landscape")?;
    a.check_same_shape(c, "landscape")?;
    if resolution < 2 {
        return Err(Error::invalid(format!("landscape resolution must be at least 2, got {resolution}")));
    }
    let db = b.sub(a);
    let dc = c.sub(a);
    let nb = db.norm();
    if nb == 0.0 {
        return Err(Error::DegeneratePlane("first and second models coincide".into()));
    }
    let e1 = db.scale(1.0 / nb);
    let cx = dc.dot(&e1);
    let rest = dc.sub(&e1.scale(cx));
    let ny = rest.norm();
    if ny <= 1e-12 * dc.norm().max(nb) {
        return Err(Error::DegeneratePlane("the three models are collinear".into()));
    }
    let e2 = rest.scale(1.0 / ny);
    // one re-orthogonalization pass keeps the basis orthonormal to rounding
    let e2 = {
        let fix = e2.sub(&e1.scale(e2.dot(&e1)));
        let n = fix.norm();
        fix.scale(1.0 / n)
    };
    let cy = dc.dot(&e2);
    let anchors = [(0.0, 0.0), (nb, 0.0), (cx, cy)];

    let (xmin, xmax) = anchors.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (ymin, ymax) = anchors.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let mut grid = LandscapeGrid {
        origin: Some(a.clone()),
        basis: Some((e1, e2)),
        xs: span(xmin, xmax, resolution),
        ys: span(ymin, ymax, resolution),
        losses: Vec::with_capacity(resolution),
        accuracies: None,
        anchors,
    };
    let mut accs = Vec::with_capacity(resolution);
    for &y in &grid.ys {
        let mut row = Vec::with_capacity(resolution);
        let mut acc_row = Vec::with_capacity(resolution);
        for &x in &grid.xs {
            let (l, acc) = objective.value_and_accuracy(&grid.point(x, y))?;
            row.push(l);
            acc_row.push(acc);
        }
        grid.losses.push(row);
        accs.push(acc_row.into_iter().collect::<Option<Vec<f64>>>());
    }
    grid.accuracies = accs.into_iter().collect();
    Ok(grid)
}
