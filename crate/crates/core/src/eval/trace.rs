use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvdpPoint {
    pub epoch: usize,
    pub dvdp: f64,
    pub map: f64,
}

/// Per-epoch mean DVDP with the validation mAP of that epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DvdpTrace {
    points: Vec<DvdpPoint>,
}

impl DvdpTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[DvdpPoint] {
        &self.points
    }

    pub fn last(&self) -> Option<&DvdpPoint> {
        self.points.last()
    }

    /// Appends a point; epochs must be strictly increasing.
    pub fn push(&mut self, epoch: usize, dvdp: f64, map: f64) -> Result<()> {
        if let Some(last) = self.points.last() {
            if epoch <= last.epoch {
                return Err(Error::Config(format!(
                    "epoch {epoch} does not follow epoch {}",
                    last.epoch
                )));
            }
        }
        self.points.push(DvdpPoint { epoch, dvdp, map });
        Ok(())
    }

    /// Writes `epoch,dvdp,map` rows. Floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut trace = Self::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let p: DvdpPoint = row?;
            trace.push(p.epoch, p.dvdp, p.map)?;
        }
        Ok(trace)
    }
}

/// Accumulates per-batch DVDP values within an epoch.
#[derive(Debug, Clone, Default)]
pub struct DvdpAccumulator {
    sum: f64,
    batches: usize,
}

impl DvdpAccumulator {
    /// `per_anchor_mean` is one batch's DVDP averaged over its anchors.
    pub fn add(&mut self, per_anchor_mean: f64) {
        self.sum += per_anchor_mean;
        self.batches += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.batches == 0 {
            0.0
        } else {
            self.sum / self.batches as f64
        }
    }
}
