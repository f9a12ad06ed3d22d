//! Construction of the additive grammatical bias matrices from per-token
//! POS tags and a rule set, the sparse per-row form of hard masks, padding
//! combination, density statistics, and mask file export.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::matrix::Matrix;
use crate::pos::{PosTag, RuleSet};
use crate::scalar::Scalar;

/// Bias assigned to disallowed pairs. After max-subtraction in stable
/// softmax this underflows to probability zero in 32- and 64-bit arithmetic.
pub const NEG_BIAS: f64 = -10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Hard,
    Soft,
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskKind::Hard => f.write_str("hard"),
            MaskKind::Soft => f.write_str("soft"),
        }
    }
}

/// L×L additive bias matrix added to attention scores after QK^T.
///
/// Hard masks hold entries in {0, [`NEG_BIAS`]}, soft masks in {0, alpha}.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammaticalMask<T> {
    kind: MaskKind,
    bias: Matrix<T>,
}

impl<T: Scalar> GrammaticalMask<T> {
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.bias.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.bias.rows() == 0
    }

    pub fn bias(&self) -> &Matrix<T> {
        &self.bias
    }

    pub fn at(&self, query: usize, key: usize) -> T {
        self.bias[(query, key)]
    }

    /// Assembles a mask from raw parts; used by readers and tests.
    pub fn from_parts(kind: MaskKind, bias: Matrix<T>) -> Self {
        assert_eq!(bias.rows(), bias.cols(), "mask must be square");
        GrammaticalMask { kind, bias }
    }
}

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("operation requires a hard mask, got {0}")]
    NotHard(MaskKind),
    #[error("padding flags length {flags} does not match mask length {mask}")]
    PaddingLength { flags: usize, mask: usize },
    #[error("sparse mask row {0} is empty")]
    EmptyRow(usize),
    #[error("mask i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad mask file: {0}")]
    Format(String),
}

/// Builds the hard mask: entry (i, j) is 0 when the connection is allowed
/// (self position, CLS query row, or a hard rule pair) and [`NEG_BIAS`]
/// otherwise.
pub fn build_hard_mask<T: Scalar>(rules: &RuleSet, tags: &[PosTag]) -> GrammaticalMask<T> {
    let l = tags.len();
    let zero = T::zero();
    let neg = T::from_f64c(NEG_BIAS);
    let mut bias = Matrix::filled(l, l, neg);
    for i in 0..l {
        let row = bias.row_mut(i);
        if rules.cls_attends_all() && tags[i] == PosTag::CLS {
            for entry in row.iter_mut() {
                *entry = zero;
            }
            continue;
        }
        for (j, entry) in row.iter_mut().enumerate() {
            if rules.hard_allowed(tags[i], tags[j]) {
                *entry = zero;
            }
        }
        if rules.self_always_allowed() {
            row[i] = zero;
        }
    }
    GrammaticalMask {
        kind: MaskKind::Hard,
        bias,
    }
}

/// Builds the soft mask: entry (i, j) is alpha for soft-only rule pairs and
/// 0 everywhere else. Self positions and CLS rows are unconditionally
/// allowed, never biased, so they stay 0 regardless of soft rules.
pub fn build_soft_mask<T: Scalar>(rules: &RuleSet, tags: &[PosTag]) -> GrammaticalMask<T> {
    let l = tags.len();
    let alpha = T::from_f64c(rules.alpha());
    let mut bias = Matrix::zeros(l, l);
    for i in 0..l {
        if rules.cls_attends_all() && tags[i] == PosTag::CLS {
            continue;
        }
        let row = bias.row_mut(i);
        for (j, entry) in row.iter_mut().enumerate() {
            if i != j && rules.soft_bias(tags[i], tags[j]) != 0.0 {
                *entry = alpha;
            }
        }
    }
    GrammaticalMask {
        kind: MaskKind::Soft,
        bias,
    }
}

/// Per-row allowed key indices of a hard mask, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMask {
    rows: Vec<Vec<u32>>,
}

impl SparseMask {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        SparseMask { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Total allowed (query, key) pairs, the Σ|row| behind the O(L·C) cost.
    pub fn allowed_pairs(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Extracts the allowed-index rows of a hard mask.
pub fn to_sparse<T: Scalar>(mask: &GrammaticalMask<T>) -> Result<SparseMask, MaskError> {
    if mask.kind != MaskKind::Hard {
        return Err(MaskError::NotHard(mask.kind));
    }
    let zero = T::zero();
    let rows = (0..mask.len())
        .map(|i| {
            mask.bias
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(_, &b)| b == zero)
                .map(|(j, _)| j as u32)
                .collect()
        })
        .collect();
    Ok(SparseMask { rows })
}

/// Rebuilds the dense hard mask from its sparse form.
pub fn densify<T: Scalar>(sparse: &SparseMask) -> GrammaticalMask<T> {
    let l = sparse.len();
    let neg = T::from_f64c(NEG_BIAS);
    let mut bias = Matrix::filled(l, l, neg);
    for (i, row) in sparse.rows.iter().enumerate() {
        for &j in row {
            bias[(i, j as usize)] = T::zero();
        }
    }
    GrammaticalMask {
        kind: MaskKind::Hard,
        bias,
    }
}

/// Applies the padding mask after the grammatical mask: every padded key
/// column is overwritten to [`NEG_BIAS`], saturating rather than summing so
/// entries never drop below the sentinel.
pub fn combine_padding<T: Scalar>(
    mask: &GrammaticalMask<T>,
    pad_flags: &[bool],
) -> Result<GrammaticalMask<T>, MaskError> {
    if pad_flags.len() != mask.len() {
        return Err(MaskError::PaddingLength {
            flags: pad_flags.len(),
            mask: mask.len(),
        });
    }
    let neg = T::from_f64c(NEG_BIAS);
    let mut bias = mask.bias.clone();
    for i in 0..bias.rows() {
        let row = bias.row_mut(i);
        for (entry, &padded) in row.iter_mut().zip(pad_flags) {
            if padded {
                *entry = neg;
            }
        }
    }
    Ok(GrammaticalMask {
        kind: mask.kind,
        bias,
    })
}

/// Allowed-pair counts and density of a hard mask.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskStats {
    pub len: usize,
    pub allowed_pairs: usize,
    /// allowed_pairs / L².
    pub density: f64,
    /// Mean allowed keys per query row: allowed_pairs / L.
    pub mean_connectivity: f64,
    /// Allowed key count per row.
    pub per_row: Vec<usize>,
}

pub fn mask_stats<T: Scalar>(mask: &GrammaticalMask<T>) -> Result<MaskStats, MaskError> {
    if mask.kind != MaskKind::Hard {
        return Err(MaskError::NotHard(mask.kind));
    }
    let zero = T::zero();
    let l = mask.len();
    let per_row: Vec<usize> = (0..l)
        .map(|i| mask.bias.row(i).iter().filter(|&&b| b == zero).count())
        .collect();
    let allowed: usize = per_row.iter().sum();
    Ok(MaskStats {
        len: l,
        allowed_pairs: allowed,
        density: allowed as f64 / (l * l) as f64,
        mean_connectivity: allowed as f64 / l as f64,
        per_row,
    })
}

const MASK_MAGIC: &[u8; 4] = b"GAM1";
const KIND_HARD_DENSE: u8 = 0;
const KIND_SOFT_DENSE: u8 = 1;
const KIND_HARD_SPARSE: u8 = 2;

/// Dense bias matrix as CSV, one row per line.
pub fn write_csv<T: Scalar, W: Write>(mask: &GrammaticalMask<T>, mut w: W) -> io::Result<()> {
    for i in 0..mask.len() {
        let line = mask
            .bias
            .row(i)
            .iter()
            .map(|b| format!("{}", b.to_f64c()))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_csv(kind: MaskKind, text: &str) -> Result<GrammaticalMask<f32>, MaskError> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row: Result<Vec<f32>, _> = line.split(',').map(|v| v.trim().parse()).collect();
        let row = row.map_err(|e| MaskError::Format(format!("line {}: {e}", idx + 1)))?;
        rows.push(row);
    }
    let l = rows.len();
    if rows.iter().any(|r| r.len() != l) {
        return Err(MaskError::Format("mask CSV is not square".into()));
    }
    let mut bias = Matrix::zeros(l, l);
    for (i, row) in rows.into_iter().enumerate() {
        bias.row_mut(i).copy_from_slice(&row);
    }
    Ok(GrammaticalMask { kind, bias })
}

/// Binary dense mask: magic `GAM1`, u32 L, u8 kind, then row-major f32
/// biases, all little-endian.
pub fn write_binary<T: Scalar, W: Write>(mask: &GrammaticalMask<T>, mut w: W) -> io::Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(mask.len() as u32).to_le_bytes())?;
    let kind = match mask.kind {
        MaskKind::Hard => KIND_HARD_DENSE,
        MaskKind::Soft => KIND_SOFT_DENSE,
    };
    w.write_all(&[kind])?;
    for value in mask.bias.data() {
        w.write_all(&(value.to_f64c() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Binary sparse mask: same header with its own kind byte, then per row a
/// u32 count followed by that many u32 key indices.
pub fn write_binary_sparse<W: Write>(sparse: &SparseMask, mut w: W) -> io::Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(sparse.len() as u32).to_le_bytes())?;
    w.write_all(&[KIND_HARD_SPARSE])?;
    for row in &sparse.rows {
        w.write_all(&(row.len() as u32).to_le_bytes())?;
        for &j in row {
            w.write_all(&j.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Contents of a `GAM1` mask file.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskFile {
    Dense(GrammaticalMask<f32>),
    Sparse(SparseMask),
}

pub fn read_binary<R: Read>(mut r: R) -> Result<MaskFile, MaskError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MASK_MAGIC {
        return Err(MaskError::Format("bad magic".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let l = u32::from_le_bytes(buf4) as usize;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    match kind[0] {
        KIND_HARD_DENSE | KIND_SOFT_DENSE => {
            let mut bias = Matrix::zeros(l, l);
            for i in 0..l {
                for j in 0..l {
                    r.read_exact(&mut buf4)?;
                    bias[(i, j)] = f32::from_le_bytes(buf4);
                }
            }
            let kind = if kind[0] == KIND_HARD_DENSE {
                MaskKind::Hard
            } else {
                MaskKind::Soft
            };
            Ok(MaskFile::Dense(GrammaticalMask { kind, bias }))
        }
        KIND_HARD_SPARSE => {
            let mut rows = Vec::with_capacity(l);
            for _ in 0..l {
                r.read_exact(&mut buf4)?;
                let count = u32::from_le_bytes(buf4) as usize;
                let mut row = Vec::with_capacity(count);
                for _ in 0..count {
                    r.read_exact(&mut buf4)?;
                    row.push(u32::from_le_bytes(buf4));
                }
                rows.push(row);
            }
            Ok(MaskFile::Sparse(SparseMask { rows }))
        }
        other => Err(MaskError::Format(format!("unknown kind byte {other}"))),
    }
}

/// Hard-mask variant that additionally allows subword tokens of the same
/// parent word to attend to each other. Off by default everywhere; exists
/// because rule-less tags otherwise become self-only rows.
pub fn build_hard_mask_same_word<T: Scalar>(
    rules: &RuleSet,
    tags: &[PosTag],
    parent_word: &[Option<usize>],
) -> GrammaticalMask<T> {
    assert_eq!(tags.len(), parent_word.len());
    let mut mask = build_hard_mask::<T>(rules, tags);
    let zero = T::zero();
    for i in 0..tags.len() {
        let Some(word) = parent_word[i] else { continue };
        for j in 0..tags.len() {
            if parent_word[j] == Some(word) {
                mask.bias[(i, j)] = zero;
            }
        }
    }
    mask
}
