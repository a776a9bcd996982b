//! Binary persistence formats.
//!
//! State streams: header `"SNSL"`, format version (u32), basis cutoff (u32),
//! mode count (u32), endianness tag (one byte, `0x4C` for little-endian),
//! followed by records of 64-bit floats: the snapshot time, then one
//! coefficient per mode. Density grids: header `"DENS"`, version, dimension
//! (u32), endianness tag, per-axis `(origin f64, spacing f64, count u64)`,
//! then the cell values. All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::besov::{Grid, GriddedFunction};
use crate::error::CoreError;
use crate::Result;

pub const STATE_MAGIC: [u8; 4] = *b"SNSL";
pub const DENSITY_MAGIC: [u8; 4] = *b"DENS";
pub const FORMAT_VERSION: u32 = 1;
pub const LITTLE_ENDIAN_TAG: u8 = 0x4C;

fn io_err(e: std::io::Error) -> CoreError {
    CoreError::Snapshot(e.to_string())
}

/// Writes state-stream records. Each record is the snapshot time followed by
/// the coefficients.
pub struct StateStreamWriter<W: Write> {
    sink: W,
    mode_count: u32,
}

impl<W: Write> StateStreamWriter<W> {
    pub fn new(mut sink: W, cutoff: u32, mode_count: u32) -> Result<Self> {
        sink.write_all(&STATE_MAGIC).map_err(io_err)?;
        sink.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        sink.write_all(&cutoff.to_le_bytes()).map_err(io_err)?;
        sink.write_all(&mode_count.to_le_bytes()).map_err(io_err)?;
        sink.write_all(&[LITTLE_ENDIAN_TAG]).map_err(io_err)?;
        Ok(StateStreamWriter { sink, mode_count })
    }

    pub fn write_record(&mut self, time: f64, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.mode_count as usize {
            return Err(CoreError::Snapshot(format!(
                "record has {} coefficients, header says {}",
                coeffs.len(),
                self.mode_count
            )));
        }
        self.sink.write_all(&time.to_le_bytes()).map_err(io_err)?;
        for c in coeffs {
            self.sink.write_all(&c.to_le_bytes()).map_err(io_err)?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

/// Parsed state-stream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateStreamHeader {
    pub version: u32,
    pub cutoff: u32,
    pub mode_count: u32,
}

fn read_u32<R: Read>(source: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    source.read_exact(&mut buf).map_err(io_err)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(source: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    source.read_exact(&mut buf).map_err(io_err)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(source: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    source.read_exact(&mut buf).map_err(io_err)?;
    Ok(f64::from_le_bytes(buf))
}

/// One snapshot record: the time stamp and the per-mode coefficients.
pub type StateRecord = (f64, Vec<f64>);

/// Reads a whole state stream back.
pub fn read_state_stream<R: Read>(
    mut source: R,
) -> Result<(StateStreamHeader, Vec<StateRecord>)> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic).map_err(io_err)?;
    if magic != STATE_MAGIC {
        return Err(CoreError::Snapshot("bad magic for a state stream".into()));
    }
    let version = read_u32(&mut source)?;
    if version != FORMAT_VERSION {
        return Err(CoreError::Snapshot(format!(
            "unsupported state-stream version {version}"
        )));
    }
    let cutoff = read_u32(&mut source)?;
    let mode_count = read_u32(&mut source)?;
    let mut tag = [0u8; 1];
    source.read_exact(&mut tag).map_err(io_err)?;
    if tag[0] != LITTLE_ENDIAN_TAG {
        return Err(CoreError::Snapshot("unsupported endianness tag".into()));
    }
    let mut records = Vec::new();
    loop {
        let mut first = [0u8; 8];
        match source.read_exact(&mut first) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(e)),
        }
        let time = f64::from_le_bytes(first);
        let mut coeffs = Vec::with_capacity(mode_count as usize);
        for _ in 0..mode_count {
            coeffs.push(read_f64(&mut source)?);
        }
        records.push((time, coeffs));
    }
    Ok((
        StateStreamHeader {
            version,
            cutoff,
            mode_count,
        },
        records,
    ))
}

/// Writes a density grid.
pub fn write_density<W: Write>(mut sink: W, f: &GriddedFunction) -> Result<()> {
    sink.write_all(&DENSITY_MAGIC).map_err(io_err)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    sink.write_all(&(f.grid.dim() as u32).to_le_bytes())
        .map_err(io_err)?;
    sink.write_all(&[LITTLE_ENDIAN_TAG]).map_err(io_err)?;
    for a in 0..f.grid.dim() {
        sink.write_all(&f.grid.origin[a].to_le_bytes()).map_err(io_err)?;
        sink.write_all(&f.grid.spacing[a].to_le_bytes()).map_err(io_err)?;
        sink.write_all(&(f.grid.counts[a] as u64).to_le_bytes())
            .map_err(io_err)?;
    }
    for v in &f.values {
        sink.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

/// Reads a density grid back.
pub fn read_density<R: Read>(mut source: R) -> Result<GriddedFunction> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic).map_err(io_err)?;
    if magic != DENSITY_MAGIC {
        return Err(CoreError::Snapshot("bad magic for a density grid".into()));
    }
    let version = read_u32(&mut source)?;
    if version != FORMAT_VERSION {
        return Err(CoreError::Snapshot(format!(
            "unsupported density version {version}"
        )));
    }
    let d = read_u32(&mut source)? as usize;
    let mut tag = [0u8; 1];
    source.read_exact(&mut tag).map_err(io_err)?;
    if tag[0] != LITTLE_ENDIAN_TAG {
        return Err(CoreError::Snapshot("unsupported endianness tag".into()));
    }
    let mut origin = Vec::with_capacity(d);
    let mut spacing = Vec::with_capacity(d);
    let mut counts = Vec::with_capacity(d);
    for _ in 0..d {
        origin.push(read_f64(&mut source)?);
        spacing.push(read_f64(&mut source)?);
        counts.push(read_u64(&mut source)? as usize);
    }
    let grid = Grid::new(origin, spacing, counts).map_err(|e| {
        CoreError::Snapshot(format!("density header describes a bad grid: {e}"))
    })?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(read_f64(&mut source)?);
    }
    Ok(GriddedFunction { grid, values })
}
