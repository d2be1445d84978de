//! Binary I/Q dump format.
//!
//! An 80-byte little-endian header followed by interleaved `f32` I/Q pairs in
//! column-major order (all rows of column 0 first).
//!
//! | offset | type     | field                |
//! |--------|----------|----------------------|
//! | 0      | [u8; 8]  | magic `ISACIQ1\0`    |
//! | 8      | u32      | kind (0 waveform, 1 echo cube, 2 image) |
//! | 12     | u32      | rows                 |
//! | 16     | u32      | cols                 |
//! | 20     | u32      | subcarriers          |
//! | 24     | f64      | subcarrier spacing, Hz |
//! | 32     | f64      | sample rate, Hz      |
//! | 40     | f64      | CP duration, s       |
//! | 48     | f64      | axis 0 origin        |
//! | 56     | f64      | axis 0 step          |
//! | 64     | f64      | axis 1 origin        |
//! | 72     | f64      | axis 1 step          |

use std::io::{Read, Write};

use ndarray::Array2;

use crate::imaging::SarImage;
use crate::scene::{EchoCube, PlatformTrajectory};
use crate::waveform::{BasebandSignal, OfdmConfig};
use crate::{Error, Result, C64};

pub const MAGIC: [u8; 8] = *b"ISACIQ1\0";
pub const HEADER_LEN: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IqKind {
    Waveform = 0,
    Cube = 1,
    Image = 2,
}

impl IqKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(Self::Waveform),
            1 => Ok(Self::Cube),
            2 => Ok(Self::Image),
            other => Err(Error::Format(format!("unknown kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqHeader {
    pub kind: IqKind,
    pub rows: u32,
    pub cols: u32,
    pub subcarriers: u32,
    pub subcarrier_spacing: f64,
    pub sample_rate: f64,
    pub cp_duration: f64,
    pub axis0_origin: f64,
    pub axis0_step: f64,
    pub axis1_origin: f64,
    pub axis1_step: f64,
}

impl IqHeader {
    fn with_config(kind: IqKind, cfg: &OfdmConfig, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            rows: rows as u32,
            cols: cols as u32,
            subcarriers: cfg.subcarriers as u32,
            subcarrier_spacing: cfg.subcarrier_spacing,
            sample_rate: cfg.sample_rate,
            cp_duration: cfg.cp_duration,
            axis0_origin: 0.0,
            axis0_step: 0.0,
            axis1_origin: 0.0,
            axis1_step: 0.0,
        }
    }

    /// One row; axis 1 is time, s.
    pub fn waveform(cfg: &OfdmConfig, sig: &BasebandSignal) -> Self {
        Self {
            axis1_origin: sig.t0,
            axis1_step: sig.dt,
            ..Self::with_config(IqKind::Waveform, cfg, 1, sig.samples.len())
        }
    }

    /// Rows are pulses (axis 0 slow time, s); columns fast time, s.
    pub fn cube(cfg: &OfdmConfig, traj: &PlatformTrajectory, cube: &EchoCube) -> Self {
        Self {
            axis0_origin: traj.slow_time(0),
            axis0_step: 1.0 / traj.prf,
            axis1_origin: cube.fast_time_origin.first().copied().unwrap_or(0.0),
            axis1_step: cube.dt,
            ..Self::with_config(IqKind::Cube, cfg, cube.num_pulses(), cube.n_samples())
        }
    }

    /// Rows are slant range, m; columns along-track position, m.
    pub fn image(cfg: &OfdmConfig, img: &SarImage) -> Self {
        let (rows, cols) = img.pixels.dim();
        Self {
            axis0_origin: img.range_origin,
            axis0_step: img.range_step,
            axis1_origin: img.azimuth_origin,
            axis1_step: img.azimuth_step,
            ..Self::with_config(IqKind::Image, cfg, rows, cols)
        }
    }

    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..8].copy_from_slice(&MAGIC);
        for (i, v) in [self.kind as u32, self.rows, self.cols, self.subcarriers].iter().enumerate() {
            b[8 + 4 * i..12 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        let floats = [
            self.subcarrier_spacing,
            self.sample_rate,
            self.cp_duration,
            self.axis0_origin,
            self.axis0_step,
            self.axis1_origin,
            self.axis1_step,
        ];
        for (i, v) in floats.iter().enumerate() {
            b[24 + 8 * i..32 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u = |i: usize| u32::from_le_bytes(b[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let f = |i: usize| f64::from_le_bytes(b[24 + 8 * i..32 + 8 * i].try_into().expect("8 bytes"));
        Ok(Self {
            kind: IqKind::from_u32(u(0))?,
            rows: u(1),
            cols: u(2),
            subcarriers: u(3),
            subcarrier_spacing: f(0),
            sample_rate: f(1),
            cp_duration: f(2),
            axis0_origin: f(3),
            axis0_step: f(4),
            axis1_origin: f(5),
            axis1_step: f(6),
        })
    }
}

pub fn write_iq<W: Write>(mut out: W, header: &IqHeader, data: &Array2<C64>) -> Result<()> {
    if data.dim() != (header.rows as usize, header.cols as usize) {
        return Err(Error::Dimension(format!(
            "header says {}x{}, data is {:?}",
            header.rows,
            header.cols,
            data.dim()
        )));
    }
    out.write_all(&header.to_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data.t().iter() {
        buf.extend_from_slice(&(v.re as f32).to_le_bytes());
        buf.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_iq<R: Read>(mut input: R) -> Result<(IqHeader, Array2<C64>)> {
    let mut hb = [0u8; HEADER_LEN];
    input
        .read_exact(&mut hb)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let header = IqHeader::from_bytes(&hb)?;
    let (rows, cols) = (header.rows as usize, header.cols as usize);
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let want = rows * cols * 8;
    if body.len() != want {
        return Err(Error::Format(format!("expected {want} data bytes, found {}", body.len())));
    }
    let mut data = Array2::zeros((rows, cols));
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        let re = f32::from_le_bytes(chunk[..4].try_into().expect("4 bytes"));
        let im = f32::from_le_bytes(chunk[4..].try_into().expect("4 bytes"));
        data[[k % rows, k / rows]] = C64::new(re as f64, im as f64);
    }
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn header(kind: IqKind, rows: u32, cols: u32) -> IqHeader {
        IqHeader {
            kind,
            rows,
            cols,
            subcarriers: 256,
            subcarrier_spacing: 120e3,
            sample_rate: 30.72e6,
            cp_duration: 32.0 / 30.72e6,
            axis0_origin: -0.08,
            axis0_step: 1.25e-3,
            axis1_origin: 6.9e-6,
            axis1_step: 1.0 / 30.72e6,
        }
    }

    #[test]
    fn layout_is_column_major() {
        let data = Array2::from_shape_fn((2, 3), |(r, c)| C64::new((10 * r + c) as f64, -1.0));
        let mut buf = Vec::new();
        write_iq(&mut buf, &header(IqKind::Cube, 2, 3), &data).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 6 * 8);
        assert_eq!(&buf[..8], b"ISACIQ1\0");
        let second = f32::from_le_bytes(buf[HEADER_LEN + 8..HEADER_LEN + 12].try_into().unwrap());
        assert_eq!(second, 10.0);
    }

    #[test]
    fn rejects_malformed_input() {
        let data = Array2::zeros((2, 2));
        let mut buf = Vec::new();
        write_iq(&mut buf, &header(IqKind::Image, 2, 2), &data).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_iq(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_iq(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(read_iq(&buf[..10]), Err(Error::Format(_))));
        let mut kind = buf.clone();
        kind[8] = 9;
        assert!(read_iq(&kind[..]).is_err());
        assert!(write_iq(Vec::new(), &header(IqKind::Image, 3, 2), &data).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data = Array2::from_shape_fn((rows, cols), |(r, c)| {
                let x = (seed as f64 * 1e-12 + (r * 7 + c) as f64).sin();
                C64::new(x * 1e3, -x)
            });
            let h = header(IqKind::Waveform, rows as u32, cols as u32);
            let mut buf = Vec::new();
            write_iq(&mut buf, &h, &data).unwrap();
            let (h2, d2) = read_iq(&buf[..]).unwrap();
            prop_assert_eq!(h2, h);
            for (a, b) in data.iter().zip(d2.iter()) {
                prop_assert_eq!(a.re as f32 as f64, b.re);
                prop_assert_eq!(a.im as f32 as f64, b.im);
            }
        }
    }
}
