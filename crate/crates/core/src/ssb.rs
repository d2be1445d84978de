//! 5G NR SSB resource grid: 240 subcarriers × 4 OFDM symbols.
//!
//! Layout follows the NR convention: PSS on the central 127 subcarriers of
//! symbol 0, SSS on the same subcarriers of symbol 2, PBCH on symbols 1 and 3
//! and on subcarriers 0..48 and 192..240 of symbol 2. One PBCH subcarrier in
//! four carries DMRS, starting at `v = pci mod 4`. Signal content is seeded
//! QPSK, not the 3GPP sequences.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::waveform::ModulationSymbols;
use crate::{Error, Result, C64};

pub const SSB_SUBCARRIERS: usize = 240;
pub const SSB_SYMBOLS: usize = 4;
pub const SYNC_LEN: usize = 127;
/// Number of physical cell identities (3 × 336).
pub const NUM_PCI: u16 = 1008;

const SYNC_START: usize = 56;
const PBCH_EDGE: usize = 48;
const DMRS_COMB: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReLabel {
    Empty,
    Pss,
    Sss,
    Pbch,
    Dmrs,
}

impl ReLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ReLabel::Empty => "EMPTY",
            ReLabel::Pss => "PSS",
            ReLabel::Sss => "SSS",
            ReLabel::Pbch => "PBCH",
            ReLabel::Dmrs => "DMRS",
        }
    }
}

/// Populated SSB grid. Indexed `[symbol][subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsbGrid {
    pub grid: [[C64; SSB_SUBCARRIERS]; SSB_SYMBOLS],
    pub occupancy: [[ReLabel; SSB_SUBCARRIERS]; SSB_SYMBOLS],
    pub pci: u16,
    pub dmrs_shift: usize,
}

fn layout_label(symbol: usize, k: usize, shift: usize) -> ReLabel {
    let in_sync = (SYNC_START..SYNC_START + SYNC_LEN).contains(&k);
    let pbch = match symbol {
        0 => {
            return if in_sync { ReLabel::Pss } else { ReLabel::Empty };
        }
        2 => {
            if in_sync {
                return ReLabel::Sss;
            }
            k < PBCH_EDGE || k >= SSB_SUBCARRIERS - PBCH_EDGE
        }
        _ => true,
    };
    match (pbch, k % DMRS_COMB == shift) {
        (true, true) => ReLabel::Dmrs,
        (true, false) => ReLabel::Pbch,
        (false, _) => ReLabel::Empty,
    }
}

/// Builds the SSB for a physical cell ID with seeded unit-power QPSK content.
pub fn build_ssb(pci: u16, seed: u64) -> Result<SsbGrid> {
    if pci >= NUM_PCI {
        return Err(Error::Argument(format!("pci must be < {NUM_PCI}, got {pci}")));
    }
    let shift = pci as usize % DMRS_COMB;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((pci as u64) << 32));
    let zero = C64::new(0.0, 0.0);
    let mut grid = [[zero; SSB_SUBCARRIERS]; SSB_SYMBOLS];
    let mut occupancy = [[ReLabel::Empty; SSB_SUBCARRIERS]; SSB_SYMBOLS];
    for l in 0..SSB_SYMBOLS {
        for k in 0..SSB_SUBCARRIERS {
            let label = layout_label(l, k, shift);
            occupancy[l][k] = label;
            if label != ReLabel::Empty {
                let q: u8 = rng.random_range(0..4);
                grid[l][k] = C64::from_polar(1.0, PI / 4.0 + PI / 2.0 * q as f64);
            }
        }
    }
    Ok(SsbGrid {
        grid,
        occupancy,
        pci,
        dmrs_shift: shift,
    })
}

/// DMRS resource elements as `(subcarrier, symbol)`, sorted lexicographically.
pub fn dmrs_positions(grid: &SsbGrid) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..SSB_SUBCARRIERS)
        .flat_map(|k| (0..SSB_SYMBOLS).map(move |l| (k, l)))
        .filter(|&(k, l)| grid.occupancy[l][k] == ReLabel::Dmrs)
        .collect();
    out.sort_unstable();
    out
}

impl SsbGrid {
    pub fn count(&self, label: ReLabel) -> usize {
        self.occupancy
            .iter()
            .flat_map(|row| row.iter())
            .filter(|&&l| l == label)
            .count()
    }

    /// Maps one SSB symbol onto the centre of an `n`-subcarrier OFDM grid.
    /// Empty REs and subcarriers outside the SSB are unoccupied.
    pub fn to_symbols(&self, symbol: usize, n: usize) -> Result<ModulationSymbols> {
        if symbol >= SSB_SYMBOLS {
            return Err(Error::Argument(format!("SSB has 4 symbols, asked for {symbol}")));
        }
        if n < SSB_SUBCARRIERS {
            return Err(Error::Argument(format!(
                "need at least {SSB_SUBCARRIERS} subcarriers, got {n}"
            )));
        }
        let first = (n - SSB_SUBCARRIERS) / 2;
        let mut s = vec![C64::new(0.0, 0.0); n];
        s[first..first + SSB_SUBCARRIERS].copy_from_slice(&self.grid[symbol]);
        ModulationSymbols::from_symbols(s)
    }

    /// Writes `subcarrier,symbol,label,re,im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subcarrier", "symbol", "label", "re", "im"])?;
        for k in 0..SSB_SUBCARRIERS {
            for l in 0..SSB_SYMBOLS {
                let v = self.grid[l][k];
                w.write_record([
                    k.to_string(),
                    l.to_string(),
                    self.occupancy[l][k].as_str().to_string(),
                    v.re.to_string(),
                    v.im.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
