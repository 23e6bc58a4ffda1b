//! First-arrival time matrices.
//!
//! An `ArrivalMatrix` holds one travel time per (source, receiver) pair with
//! a validity mask, whether the times were picked from waveforms, modelled by
//! the eikonal solver, or synthesized directly.
//!
//! # CSV format
//!
//! A header row of receiver ids (`0,1,...,n-1`), then one row per source with
//! times in seconds in scientific notation; masked pairs are written as
//! `NaN`.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArrivalError {
    #[error("matrix shape {0}x{1} does not match buffer length {2}")]
    BadShape(usize, usize, usize),
    #[error("invalid arrival CSV: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where the times came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Picked from measured/simulated waveforms.
    Picked,
    /// Computed by the eikonal forward model.
    Modelled,
    /// Synthesized without waveforms (inverse-crime shortcuts).
    Synthetic,
}

/// Travel times tau[src, rcv] in seconds with a validity mask.
#[derive(Debug, Clone)]
pub struct ArrivalMatrix {
    n_src: usize,
    n_rcv: usize,
    tau: Vec<f64>,
    mask: Vec<bool>,
    provenance: Provenance,
}

impl ArrivalMatrix {
    pub fn new(
        n_src: usize,
        n_rcv: usize,
        tau: Vec<f64>,
        mask: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self, ArrivalError> {
        if tau.len() != n_src * n_rcv || mask.len() != n_src * n_rcv {
            return Err(ArrivalError::BadShape(n_src, n_rcv, tau.len()));
        }
        Ok(Self {
            n_src,
            n_rcv,
            tau,
            mask,
            provenance,
        })
    }

    /// All-masked matrix of the given shape.
    pub fn empty(n_src: usize, n_rcv: usize, provenance: Provenance) -> Self {
        Self {
            n_src,
            n_rcv,
            tau: vec![f64::NAN; n_src * n_rcv],
            mask: vec![false; n_src * n_rcv],
            provenance,
        }
    }

    pub fn n_src(&self) -> usize {
        self.n_src
    }
    pub fn n_rcv(&self) -> usize {
        self.n_rcv
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    #[inline]
    pub fn get(&self, src: usize, rcv: usize) -> Option<f64> {
        let i = src * self.n_rcv + rcv;
        self.mask[i].then(|| self.tau[i])
    }

    #[inline]
    pub fn set(&mut self, src: usize, rcv: usize, tau: f64) {
        let i = src * self.n_rcv + rcv;
        self.tau[i] = tau;
        self.mask[i] = true;
    }

    #[inline]
    pub fn mask_out(&mut self, src: usize, rcv: usize) {
        let i = src * self.n_rcv + rcv;
        self.mask[i] = false;
    }

    pub fn is_valid(&self, src: usize, rcv: usize) -> bool {
        self.mask[src * self.n_rcv + rcv]
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Iterate over valid `(src, rcv, tau)` triples in row-major order.
    pub fn valid_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_src).flat_map(move |i| {
            (0..self.n_rcv).filter_map(move |l| self.get(i, l).map(|t| (i, l, t)))
        })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), ArrivalError> {
        let header: Vec<String> = (0..self.n_rcv).map(|l| l.to_string()).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n_src {
            let row: Vec<String> = (0..self.n_rcv)
                .map(|l| match self.get(i, l) {
                    Some(t) => format!("{t:e}"),
                    None => "NaN".to_string(),
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parse the CSV format; the provenance is supplied by the caller since
    /// the file does not carry it.
    pub fn read_csv<R: Read>(r: &mut R, provenance: Provenance) -> Result<Self, ArrivalError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| ArrivalError::Format("empty file".into()))?;
        let n_rcv = header.split(',').count();
        let mut tau = Vec::new();
        let mut mask = Vec::new();
        let mut n_src = 0;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n_rcv {
                return Err(ArrivalError::Format(format!(
                    "row {} has {} cells, expected {n_rcv}",
                    n_src,
                    cells.len()
                )));
            }
            for c in cells {
                let v: f64 = c
                    .parse()
                    .map_err(|_| ArrivalError::Format(format!("bad number {c:?}")))?;
                mask.push(v.is_finite());
                tau.push(v);
            }
            n_src += 1;
        }
        Self::new(n_src, n_rcv, tau, mask, provenance)
    }
}
