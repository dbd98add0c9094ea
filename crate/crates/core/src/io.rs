//! Binary stack files, PGM previews and CSV curves.
//!
//! Layout (all little-endian): magic `SIMS`, version u16, kind u16, count u32,
//! width u32, height u32, pitch f64, then for stacks `count` shift pairs
//! (f64, f64) in µm, then `count·width·height` f32 samples, row-major and
//! member-contiguous.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image};
use crate::metrics::MtfCurve;
use crate::patterns::Stack;

pub const MAGIC: &[u8; 4] = b"SIMS";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum FileKind {
    Image = 0,
    Stack = 1,
    Kernel = 2,
}

impl FileKind {
    fn from_u16(v: u16) -> Result<Self> {
        match v {
            0 => Ok(FileKind::Image),
            1 => Ok(FileKind::Stack),
            2 => Ok(FileKind::Kernel),
            other => Err(Error::Format(format!("unknown kind {other}"))),
        }
    }
}

/// In-memory form of one file.
#[derive(Debug, Clone, PartialEq)]
pub struct StackFile {
    pub kind: FileKind,
    pub grid: GridSpec,
    pub shifts: Vec<(f64, f64)>,
    /// `count` members of `width·height` samples each.
    pub data: Vec<f32>,
}

impl StackFile {
    pub fn count(&self) -> usize {
        self.data.len() / self.grid.len()
    }

    pub fn from_stack(stack: &Stack) -> Self {
        let mut data = Vec::with_capacity(stack.len() * stack.grid().len());
        for img in stack.iter() {
            data.extend(img.values().iter().map(|&v| v as f32));
        }
        Self {
            kind: FileKind::Stack,
            grid: *stack.grid(),
            shifts: stack.shifts().to_vec(),
            data,
        }
    }

    pub fn from_image(img: &Image, kind: FileKind) -> Self {
        Self {
            kind,
            grid: *img.grid(),
            shifts: Vec::new(),
            data: img.values().iter().map(|&v| v as f32).collect(),
        }
    }

    fn member(&self, i: usize) -> Result<Image> {
        let n = self.grid.len();
        let values: Vec<f64> = self.data[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect();
        let arr = Array2::from_shape_vec(self.grid.shape(), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Image::from_array(self.grid, arr)
    }

    pub fn to_stack(&self) -> Result<Stack> {
        let images = (0..self.count()).map(|i| self.member(i)).collect::<Result<Vec<_>>>()?;
        let shifts = if self.kind == FileKind::Stack {
            self.shifts.clone()
        } else {
            vec![(0.0, 0.0); images.len()]
        };
        Stack::new(images, shifts)
    }

    /// The single member of an image or kernel file.
    pub fn to_image(&self) -> Result<Image> {
        if self.count() != 1 {
            return Err(Error::Format(format!("expected one image, found {}", self.count())));
        }
        self.member(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let count = self.count();
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * self.shifts.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u16).to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.height as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.pitch.to_le_bytes());
        if self.kind == FileKind::Stack {
            for &(x, y) in &self.shifts {
                out.extend_from_slice(&x.to_le_bytes());
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("file shorter than header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = FileKind::from_u16(u16_at(6))?;
        let (count, width, height) = (u32_at(8), u32_at(12), u32_at(16));
        let grid = GridSpec::new(width, height, f64_at(20)).map_err(|e| Error::Format(e.to_string()))?;
        if kind != FileKind::Stack && count != 1 {
            return Err(Error::Format(format!("{kind:?} file with {count} members")));
        }
        let shift_len = if kind == FileKind::Stack { 16 * count } else { 0 };
        let expected = HEADER_LEN + shift_len + 4 * count * width * height;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "length {} does not match header (expected {expected})",
                bytes.len()
            )));
        }
        let shifts = (0..if kind == FileKind::Stack { count } else { 0 })
            .map(|i| {
                let o = HEADER_LEN + 16 * i;
                (f64_at(o), f64_at(o + 8))
            })
            .collect();
        let data = bytes[HEADER_LEN + shift_len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect::<Vec<_>>();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite sample".into()));
        }
        Ok(Self {
            kind,
            grid,
            shifts,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_stack(path: &Path, stack: &Stack) -> Result<()> {
    StackFile::from_stack(stack).write(path)
}

pub fn read_stack(path: &Path) -> Result<Stack> {
    StackFile::read(path)?.to_stack()
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    StackFile::from_image(img, FileKind::Image).write(path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    StackFile::read(path)?.to_image()
}

/// 16-bit binary PGM scaled linearly from the image minimum to its maximum.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let g = img.grid();
    let (lo, hi) = (img.min(), img.max());
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{} {}\n65535\n", g.width, g.height).into_bytes();
    for &v in img.values().iter() {
        let q = ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    write_atomic(path, &out)
}

/// MTF curve as CSV with columns `radius_um,period_um,period_over_abbe,contrast`.
pub fn mtf_csv(curve: &MtfCurve, abbe: f64) -> String {
    let mut s = String::from("radius_um,period_um,period_over_abbe,contrast\n");
    for p in &curve.samples {
        s.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6e}\n",
            p.radius,
            p.period,
            p.period / abbe,
            p.contrast
        ));
    }
    s
}
