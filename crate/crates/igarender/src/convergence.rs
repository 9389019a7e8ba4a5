//! Convergence study of the inversion methods on an analytic map: the
//! largest distance of the sample images from the exact view ray, per
//! method and sample distance.

use std::fmt::Write as _;

use crate::camera::{RaySegment, Vec3};
use crate::inversion::{ray_distance, sample_segment, IntegratorSpec, InversionError, Method};
use crate::spline::JetOrder;
use crate::testmaps::AnalyticMap;
use crate::inversion::GeometryMap;

/// Default sample distances `2⁻⁶ … 2⁻⁹` (printed as 1.6e-2 … 2.0e-3).
pub fn default_ds() -> Vec<f64> {
    (6..=9).map(|k| 0.5f64.powi(k)).collect()
}

pub const DEFAULT_P_FRONT: [f64; 3] = [0.0, 0.3, 0.5];
pub const DEFAULT_P_BACK: [f64; 3] = [1.0, 0.7, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub method: Method,
    pub c: f64,
    pub tolerance: Option<f64>,
    /// Largest ray distance per sample distance; `NaN` on failure.
    pub errors: Vec<f64>,
}

impl StudyRow {
    pub fn label(&self) -> String {
        match self.tolerance {
            Some(t) => format!("{} (tol={t:e})", self.method),
            None => format!("{} (c={})", self.method, self.c),
        }
    }

    /// Observed orders `log(e_k/e_{k+1}) / log(Δs_k/Δs_{k+1})`.
    pub fn orders(&self, ds: &[f64]) -> Vec<f64> {
        self.errors
            .windows(2)
            .zip(ds.windows(2))
            .map(|(e, d)| (e[0] / e[1]).ln() / (d[0] / d[1]).ln())
            .collect()
    }

    /// Least-squares slope of `log e` against `log Δs`.
    pub fn fitted_order(&self, ds: &[f64]) -> f64 {
        let pts: Vec<(f64, f64)> = ds.iter().zip(&self.errors).map(|(d, e)| (d.ln(), e.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub map: String,
    pub ds: Vec<f64>,
    pub rows: Vec<StudyRow>,
}

impl ConvergenceTable {
    pub fn row(&self, method: Method) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Comma-separated table: one line per row, errors then observed orders.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,c,tol");
        for d in &self.ds {
            let _ = write!(out, ",e@{d:e}");
        }
        for i in 1..self.ds.len() {
            let _ = write!(out, ",order{i}");
        }
        out.push('\n');
        for r in &self.rows {
            let tol = r.tolerance.map(|t| format!("{t:e}")).unwrap_or_default();
            let _ = write!(out, "{},{},{}", r.method, r.c, tol);
            for e in &r.errors {
                let _ = write!(out, ",{e:.3e}");
            }
            for o in r.orders(&self.ds) {
                let _ = write!(out, ",{o:.3}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<22}", "ds");
        for d in &self.ds {
            let _ = write!(out, " {d:>10.1e}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<22}", r.label());
            for e in &r.errors {
                let _ = write!(out, " {e:>10.1e}");
            }
            if r.tolerance.is_none() {
                let _ = write!(out, "   order {:.2}", r.fitted_order(&self.ds));
            }
            out.push('\n');
        }
        out
    }
}

/// Integrates from `p_front` to `p_back` and returns the largest distance
/// of a sample image from the line through `φ(p_front)` and `φ(p_back)`.
pub fn run_case<M: GeometryMap + ?Sized>(
    map: &M,
    p_front: &Vec3,
    p_back: &Vec3,
    spec: &IntegratorSpec,
) -> Result<f64, InversionError> {
    let g_front = map.jet(p_front, JetOrder::Value)?.value;
    let g_back = map.jet(p_back, JetOrder::Value)?.value;
    let seg = RaySegment::new(g_front, g_back).expect("distinct endpoints");
    let tol = spec.tolerance.unwrap_or(1e-12);
    let out = sample_segment(map, &seg, p_front, p_back, spec, &|_| tol)?;
    Ok(out.samples.iter().map(|s| ray_distance(&seg, &s.jet.value)).fold(0.0, f64::max))
}

/// Runs every ODE method in `methods` at each `ds` (with `c` or the
/// method's default) and root finding once per entry of `tolerances`.
pub fn convergence_study(
    map: &AnalyticMap,
    methods: &[Method],
    ds: &[f64],
    c: Option<f64>,
    tolerances: &[f64],
) -> ConvergenceTable {
    let pf = Vec3::from(DEFAULT_P_FRONT);
    let pb = Vec3::from(DEFAULT_P_BACK);
    let mut rows = Vec::new();
    for &m in methods {
        let specs: Vec<(f64, Option<f64>)> = if m == Method::RootFinding {
            tolerances.iter().map(|&t| (0.0, Some(t))).collect()
        } else {
            vec![(c.unwrap_or(m.default_c()), None)]
        };
        for (cv, tol) in specs {
            let errors = ds
                .iter()
                .map(|&d| {
                    let spec = IntegratorSpec { method: m, c: cv, ds: d, tolerance: tol };
                    run_case(map, &pf, &pb, &spec).unwrap_or(f64::NAN)
                })
                .collect();
            rows.push(StudyRow { method: m, c: cv, tolerance: tol, errors });
        }
    }
    ConvergenceTable { map: map.name().to_string(), ds: ds.to_vec(), rows }
}
