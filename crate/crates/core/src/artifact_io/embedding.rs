//! STCE embedding matrix files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "STCE"
//! 4       4     version (u32) = 1
//! 8       8     vocab_size V (u64)
//! 16      8     dim D (u64)
//! 24      4*V*D row-major f32 payload, row index = token_id
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{open, ArtifactError, Locus};

pub const STCE_MAGIC: [u8; 4] = *b"STCE";
pub const STCE_VERSION: u32 = 1;
pub const STCE_HEADER_LEN: u64 = 24;

/// A `V x D` matrix of token representations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab_size: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data, checking shape and finiteness.
    pub fn new(vocab_size: usize, dim: usize, data: Vec<f32>) -> Result<Self, ArtifactError> {
        if vocab_size == 0 || dim == 0 {
            return Err(ArtifactError::Invalid(format!(
                "embedding matrix must be non-empty, got {vocab_size}x{dim}"
            )));
        }
        if data.len() != vocab_size * dim {
            return Err(ArtifactError::Invalid(format!(
                "expected {} values for a {vocab_size}x{dim} matrix, got {}",
                vocab_size * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ArtifactError::Invalid(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingMatrix {
            vocab_size,
            dim,
            data,
        })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, ArtifactError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().position(|r| r.as_ref().len() != dim) {
            return Err(ArtifactError::Invalid(format!(
                "row {bad} has {} columns, expected {dim}",
                rows[bad].as_ref().len()
            )));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), dim, data)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

fn read_header_field<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    offset: u64,
    path: &Path,
    what: &str,
) -> Result<(), ArtifactError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ArtifactError::format(path, Locus::Offset(offset), format!("truncated header: missing {what}"))
        } else {
            ArtifactError::io(path, e)
        }
    })
}

/// Reads an STCE stream. `path` is only used to label errors.
pub fn read_embedding_matrix<R: Read>(
    mut reader: R,
    path: &Path,
) -> Result<EmbeddingMatrix, ArtifactError> {
    let mut magic = [0u8; 4];
    read_header_field(&mut reader, &mut magic, 0, path, "magic")?;
    if magic != STCE_MAGIC {
        return Err(ArtifactError::format(
            path,
            Locus::Offset(0),
            format!("bad magic {magic:02x?}, expected \"STCE\""),
        ));
    }
    let mut b4 = [0u8; 4];
    read_header_field(&mut reader, &mut b4, 4, path, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != STCE_VERSION {
        return Err(ArtifactError::format(
            path,
            Locus::Offset(4),
            format!("unsupported version {version}"),
        ));
    }
    let mut b8 = [0u8; 8];
    read_header_field(&mut reader, &mut b8, 8, path, "vocab_size")?;
    let vocab_size = u64::from_le_bytes(b8);
    read_header_field(&mut reader, &mut b8, 16, path, "dim")?;
    let dim = u64::from_le_bytes(b8);
    if vocab_size == 0 {
        return Err(ArtifactError::format(path, Locus::Offset(8), "vocab_size must be >= 1"));
    }
    if dim == 0 {
        return Err(ArtifactError::format(path, Locus::Offset(16), "dim must be >= 1"));
    }
    let total = vocab_size
        .checked_mul(dim)
        .filter(|n| n.checked_mul(4).is_some() && usize::try_from(*n).is_ok())
        .ok_or_else(|| {
            ArtifactError::format(path, Locus::Offset(8), "header dimensions overflow")
        })?;
    let (v, d) = (vocab_size as usize, dim as usize);

    let mut data = Vec::with_capacity(total as usize);
    let mut row_buf = vec![0u8; d * 4];
    for row in 0..v {
        let row_offset = STCE_HEADER_LEN + (row as u64) * (d as u64) * 4;
        let mut filled = 0;
        while filled < row_buf.len() {
            match reader.read(&mut row_buf[filled..]) {
                Ok(0) => {
                    return Err(ArtifactError::format(
                        path,
                        Locus::Offset(row_offset + filled as u64),
                        format!(
                            "truncated payload: expected {} bytes after header",
                            total * 4
                        ),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(ArtifactError::io(path, e)),
            }
        }
        for (col, chunk) in row_buf.chunks_exact(4).enumerate() {
            let value = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !value.is_finite() {
                return Err(ArtifactError::format(
                    path,
                    Locus::Offset(row_offset + 4 * col as u64),
                    format!("non-finite value {value} at row {row}, column {col}"),
                ));
            }
            data.push(value);
        }
    }
    let mut probe = [0u8; 1];
    match reader.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(ArtifactError::format(
                path,
                Locus::Offset(STCE_HEADER_LEN + total * 4),
                "trailing bytes after payload",
            ))
        }
        Err(e) => return Err(ArtifactError::io(path, e)),
    }
    Ok(EmbeddingMatrix {
        vocab_size: v,
        dim: d,
        data,
    })
}

pub fn load_embedding_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, ArtifactError> {
    let path = path.as_ref();
    read_embedding_matrix(open(path)?, path)
}

pub fn write_embedding_matrix<W: Write>(mut w: W, m: &EmbeddingMatrix) -> std::io::Result<()> {
    w.write_all(&STCE_MAGIC)?;
    w.write_all(&STCE_VERSION.to_le_bytes())?;
    w.write_all(&(m.vocab_size as u64).to_le_bytes())?;
    w.write_all(&(m.dim as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn save_embedding_matrix(
    m: &EmbeddingMatrix,
    path: impl AsRef<Path>,
) -> Result<(), ArtifactError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    write_embedding_matrix(BufWriter::new(file), m).map_err(|e| ArtifactError::io(path, e))
}
