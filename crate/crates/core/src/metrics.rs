//! Time series and field snapshots produced by a run, and their CSV layouts.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::geometry::Field;

/// One logged control step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: f64,
    #[serde(rename = "l2_err_F")]
    pub l2_err_f: f64,
    #[serde(rename = "l2_err_L")]
    pub l2_err_l: f64,
    #[serde(rename = "V_F")]
    pub v_f: f64,
    #[serde(rename = "V_L")]
    pub v_l: f64,
    pub alpha: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "mass_F")]
    pub mass_f: f64,
    #[serde(rename = "mass_L")]
    pub mass_l: f64,
    /// Switching-gain lower bound at the current `alpha`.
    #[serde(skip)]
    pub ks_bound_active: f64,
    /// Instantaneous leader-mass lower bound.
    #[serde(skip)]
    pub min_mass_estimate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Time must increase and every entry must be finite.
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self.rows.last().is_none_or(|r| row.t > r.t));
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn first(&self) -> Option<&MetricsRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Largest instantaneous leader-mass bound along the run.
    pub fn sup_min_mass(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.min_mass_estimate)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Error norm at the first logged time `>= t`.
    pub fn l2_err_f_at(&self, t: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.t >= t - 1e-12).map(|r| r.l2_err_f)
    }

    /// `timeseries.csv`: `t,l2_err_F,l2_err_L,V_F,V_L,alpha,C,mass_F,mass_L`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        if self.rows.is_empty() {
            wtr.write_record(TIMESERIES_HEADER)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub const TIMESERIES_HEADER: [&str; 9] = [
    "t", "l2_err_F", "l2_err_L", "V_F", "V_L", "alpha", "C", "mass_F", "mass_L",
];

pub const FIELDS_HEADER: [&str; 6] = ["x", "rho_F", "rho_bar_F", "rho_L", "rho_bar_L", "u"];

/// Densities and control field at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub t: f64,
    pub rho_f: Field,
    pub rho_bar_f: Field,
    pub rho_l: Field,
    pub rho_bar_l: Field,
    pub u: Field,
}

impl FieldSnapshot {
    /// `fields_final.csv`: `x,rho_F,rho_bar_F,rho_L,rho_bar_L,u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(FIELDS_HEADER)?;
        let g = self.rho_f.grid();
        for (j, x) in g.nodes().enumerate() {
            let row = [
                x,
                self.rho_f.values()[j],
                self.rho_bar_f.values()[j],
                self.rho_l.values()[j],
                self.rho_bar_l.values()[j],
                self.u.values()[j],
            ];
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;

    fn row(t: f64) -> MetricsRow {
        MetricsRow {
            t,
            l2_err_f: 0.5 - t,
            l2_err_l: 1.0,
            v_f: 0.1,
            v_l: 0.5,
            alpha: 1.0,
            c: 0.2,
            mass_f: 1.0,
            mass_l: 30.0,
            ks_bound_active: 0.2,
            min_mass_estimate: 10.0 + t,
        }
    }

    #[test]
    fn timeseries_csv_layout() {
        let mut log = MetricsLog::new();
        log.push(row(0.0));
        log.push(row(0.25));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TIMESERIES_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "0.0,0.5,1.0,0.1,0.5,1.0,0.2,1.0,30.0");
        assert_eq!(lines.count(), 1);
        assert_eq!(log.sup_min_mass(), 10.25);
        assert_eq!(log.l2_err_f_at(0.1), Some(0.25));
    }

    #[test]
    fn empty_log_still_has_header() {
        let mut buf = Vec::new();
        MetricsLog::new().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            TIMESERIES_HEADER.join(",")
        );
    }

    #[test]
    fn fields_csv_layout() {
        let g = Grid::new(4).unwrap();
        let f = Field::constant(g, 1.0);
        let snap = FieldSnapshot {
            t: 1.0,
            rho_f: f.clone(),
            rho_bar_f: f.clone(),
            rho_l: f.clone(),
            rho_bar_l: f.clone(),
            u: f,
        };
        let mut buf = Vec::new();
        snap.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), FIELDS_HEADER.join(","));
        assert_eq!(text.lines().count(), 5);
    }
}
