//! Per-step metrics stream as CSV.
//!
//! Columns: `t,x,y,psi,v,v_ref,beta,r,action,reward`, then
//! `ttz_veh_i,ttz_ped_i` for each actor, then `band_i` for each actor.
//! Infinite TTZ values are written as `inf`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::sim::safety::{Band, SafetyMetrics};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub v_ref: f64,
    pub beta: f64,
    pub r: f64,
    pub action: usize,
    pub reward: f64,
    /// (ttz_vehicle, ttz_actor) per actor.
    pub ttz: Vec<(f64, f64)>,
    pub bands: Vec<Band>,
}

impl MetricsRow {
    pub fn new(t: f64, ego: &VehicleState, v_ref: f64, action: usize, reward: f64, m: &SafetyMetrics) -> Self {
        MetricsRow {
            t,
            x: ego.x,
            y: ego.y,
            psi: ego.psi,
            v: ego.v,
            v_ref,
            beta: ego.beta,
            r: ego.r,
            action,
            reward,
            ttz: m.actors.iter().map(|a| (a.ttz_vehicle, a.ttz_actor)).collect(),
            bands: m.actors.iter().map(|a| a.band).collect(),
        }
    }

    pub fn worst_band(&self) -> Band {
        self.bands.iter().copied().max().unwrap_or(Band::Clear)
    }
}

pub fn header(actors: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "x", "y", "psi", "v", "v_ref", "beta", "r", "action", "reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 1..=actors {
        h.push(format!("ttz_veh_{i}"));
        h.push(format!("ttz_ped_{i}"));
    }
    for i in 1..=actors {
        h.push(format!("band_{i}"));
    }
    h
}

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    actors: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W, actors: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header(actors))?;
        Ok(MetricsWriter { inner, actors })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.ttz.len() != self.actors || row.bands.len() != self.actors {
            return Err(CoreError::invalid("metrics row actor count differs from header"));
        }
        let mut rec: Vec<String> = [row.t, row.x, row.y, row.psi, row.v, row.v_ref, row.beta, row.r]
            .iter()
            .map(|v| v.to_string())
            .collect();
        rec.push(row.action.to_string());
        rec.push(row.reward.to_string());
        for (tv, ta) in &row.ttz {
            rec.push(tv.to_string());
            rec.push(ta.to_string());
        }
        for b in &row.bands {
            rec.push(b.as_str().to_string());
        }
        self.inner.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| CoreError::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() < 10 || (headers.len() - 10) % 3 != 0 {
        return Err(CoreError::invalid("metrics header has an unexpected column count"));
    }
    let actors = (headers.len() - 10) / 3;
    let expected = header(actors);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CoreError::invalid("metrics header does not match the expected columns"));
    }
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
        rec[i]
            .parse::<f64>()
            .map_err(|e| CoreError::invalid(format!("column {}: {e}", expected[i])))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut ttz = Vec::with_capacity(actors);
        for i in 0..actors {
            ttz.push((num(&rec, 10 + 2 * i)?, num(&rec, 11 + 2 * i)?));
        }
        let mut bands = Vec::with_capacity(actors);
        for i in 0..actors {
            let s = &rec[10 + 2 * actors + i];
            bands.push(Band::parse(s).ok_or_else(|| CoreError::invalid(format!("unknown band `{s}`")))?);
        }
        rows.push(MetricsRow {
            t: num(&rec, 0)?,
            x: num(&rec, 1)?,
            y: num(&rec, 2)?,
            psi: num(&rec, 3)?,
            v: num(&rec, 4)?,
            v_ref: num(&rec, 5)?,
            beta: num(&rec, 6)?,
            r: num(&rec, 7)?,
            action: rec[8]
                .parse()
                .map_err(|e| CoreError::invalid(format!("column action: {e}")))?,
            reward: num(&rec, 9)?,
            ttz,
            bands,
        });
    }
    Ok(rows)
}
