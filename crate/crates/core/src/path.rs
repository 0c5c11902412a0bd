//! Time-ordered movement paths and the `id,time,x,y` CSV schema.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct MovementPath {
    id: String,
    times: Vec<f64>,
    positions: Vec<[f64; 2]>,
}

impl MovementPath {
    /// Requires at least two observations and strictly increasing times.
    pub fn new(id: impl Into<String>, times: Vec<f64>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(Error::Shape(format!(
                "{} times but {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::TooShort {
                len: times.len(),
                min: 2,
            });
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::DegenerateStep { index: i + 1 });
            }
        }
        Ok(MovementPath {
            id: id.into(),
            times,
            positions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time steps `h_τ = t_{τ+1} − t_τ`.
    pub fn steps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Copy with x and y exchanged.
    pub fn swap_xy(&self) -> Self {
        MovementPath {
            id: self.id.clone(),
            times: self.times.clone(),
            positions: self.positions.iter().map(|p| [p[1], p[0]]).collect(),
        }
    }
}

/// Writes paths as `id,time,x,y` rows in the order given.
pub fn write_paths_csv<W: Write>(w: W, paths: &[MovementPath]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "time", "x", "y"])?;
    for p in paths {
        for (t, r) in p.times.iter().zip(&p.positions) {
            out.write_record([p.id.clone(), fmt_f64(*t), fmt_f64(r[0]), fmt_f64(r[1])])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads `id,time,x,y` rows; rows of one id must be contiguous and time-sorted.
pub fn read_paths_csv<R: Read>(r: R) -> Result<Vec<MovementPath>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let expected = ["id", "time", "x", "y"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header id,time,x,y, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    // id, times, positions, first line of the group
    type Group = (String, Vec<f64>, Vec<[f64; 2]>, u64);
    let mut groups: Vec<Group> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 4 fields, got {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("field `{}` = `{}`: {e}", expected[k], &rec[k]),
            })
        };
        let (t, x, y) = (num(1)?, num(2)?, num(3)?);
        let id = &rec[0];
        match groups.last_mut() {
            Some(g) if g.0 == id => {
                g.1.push(t);
                g.2.push([x, y]);
            }
            _ => {
                if groups.iter().any(|g| g.0 == id) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("rows for id `{id}` are not contiguous"),
                    });
                }
                groups.push((id.to_string(), vec![t], vec![[x, y]], line));
            }
        }
    }
    groups
        .into_iter()
        .map(|(id, t, p, line)| {
            MovementPath::new(id, t, p).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}
