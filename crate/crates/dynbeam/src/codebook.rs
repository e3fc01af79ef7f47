//! Low-resolution phase-shifter codebook and the dynamic-subarray analog
//! beamformer.
//!
//! An analog beamformer assigns every antenna to exactly one RF chain and one
//! quantized phase, so the materialized `Nt x N_RF` matrix has one nonzero of
//! magnitude `1/sqrt(Nt)` per row. The same object is dually representable as
//! a binary selection matrix `S` of shape `Nt x (N_RF * 2^B)` with a single 1
//! per row, so that `F_RF = S * F_set`.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("phase-shifter resolution must be at least 1 bit")]
    ZeroBits,
    #[error("antenna count must be at least 1")]
    ZeroAntennas,
    #[error("assignment for antenna {antenna} is out of range: {detail}")]
    InvalidAssignment { antenna: usize, detail: String },
    #[error("selection matrix row {row} sums to {sum}, expected exactly 1")]
    BadSelectionRow { row: usize, sum: usize },
    #[error("selection matrix has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    BadSelectionShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("malformed beamformer text: {0}")]
    Parse(String),
}

/// The quantized phase set of a B-bit phase shifter.
///
/// Entry `b` is `(1/sqrt(Nt)) * exp(j*2*pi*b / 2^B)`, so the entries are
/// distinct and sorted by phase, with index 0 mapping to phase 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodebook {
    bits: u32,
    nt: usize,
    entries: Vec<C64>,
}

impl PhaseCodebook {
    pub fn new(bits: u32, nt: usize) -> Result<Self, CodebookError> {
        if bits == 0 {
            return Err(CodebookError::ZeroBits);
        }
        if nt == 0 {
            return Err(CodebookError::ZeroAntennas);
        }
        let size = 1usize << bits;
        let mag = 1.0 / (nt as f64).sqrt();
        let entries = (0..size)
            .map(|b| C64::from_polar(mag, TAU * b as f64 / size as f64))
            .collect();
        Ok(Self { bits, nt, entries })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Number of entries, `2^B`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn entry(&self, phase_index: usize) -> C64 {
        self.entries[phase_index]
    }

    /// Index of the codebook phase nearest to `phase` (radians), rounding
    /// half-way cases up and wrapping modulo `2^B`.
    pub fn nearest_phase_index(&self, phase: f64) -> usize {
        let n = self.len() as f64;
        let step = phase.rem_euclid(TAU) / TAU * n;
        (step.round() as usize) % self.len()
    }
}

/// Per-antenna (RF chain, phase index) pair.
pub type Assignment = (usize, usize);

/// Dynamic-subarray analog beamformer in compact assignment form.
///
/// Canonical storage is the assignment list; the dense matrix is materialized
/// on demand since it is row-sparse by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBeamformer {
    nt: usize,
    n_rf: usize,
    assignment: Vec<Assignment>,
    codebook: PhaseCodebook,
}

impl AnalogBeamformer {
    pub fn new(
        n_rf: usize,
        assignment: Vec<Assignment>,
        codebook: PhaseCodebook,
    ) -> Result<Self, CodebookError> {
        let nt = codebook.nt();
        if assignment.len() != nt {
            return Err(CodebookError::InvalidAssignment {
                antenna: assignment.len(),
                detail: format!("expected {} assignments, got {}", nt, assignment.len()),
            });
        }
        for (i, &(rf, phase)) in assignment.iter().enumerate() {
            if rf >= n_rf {
                return Err(CodebookError::InvalidAssignment {
                    antenna: i,
                    detail: format!("rf index {} out of range 0..{}", rf, n_rf),
                });
            }
            if phase >= codebook.len() {
                return Err(CodebookError::InvalidAssignment {
                    antenna: i,
                    detail: format!("phase index {} out of range 0..{}", phase, codebook.len()),
                });
            }
        }
        Ok(Self {
            nt,
            n_rf,
            assignment,
            codebook,
        })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn n_rf(&self) -> usize {
        self.n_rf
    }

    pub fn assignment(&self) -> &[Assignment] {
        &self.assignment
    }

    pub fn codebook(&self) -> &PhaseCodebook {
        &self.codebook
    }

    /// Replace the assignment of one antenna.
    pub fn set(&mut self, antenna: usize, rf_index: usize, phase_index: usize) {
        debug_assert!(rf_index < self.n_rf && phase_index < self.codebook.len());
        self.assignment[antenna] = (rf_index, phase_index);
    }

    /// The complex value carried by antenna `i`.
    pub fn value(&self, antenna: usize) -> C64 {
        self.codebook.entry(self.assignment[antenna].1)
    }

    /// Dense `Nt x N_RF` matrix with one nonzero per row.
    pub fn materialize(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nt, self.n_rf);
        for (i, &(rf, phase)) in self.assignment.iter().enumerate() {
            m[(i, rf)] = self.codebook.entry(phase);
        }
        m
    }

    /// Subarray size of each RF chain. Empty subarrays are permitted.
    pub fn subarray_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_rf];
        for &(rf, _) in &self.assignment {
            sizes[rf] += 1;
        }
        sizes
    }

    /// Binary selection-matrix encoding: antenna `i` maps to column
    /// `rf * 2^B + phase`.
    pub fn to_selection(&self) -> SelectionMatrix {
        let width = self.n_rf * self.codebook.len();
        let mut columns = Vec::with_capacity(self.nt);
        for &(rf, phase) in &self.assignment {
            columns.push(rf * self.codebook.len() + phase);
        }
        SelectionMatrix {
            nt: self.nt,
            width,
            columns,
        }
    }

    pub fn from_selection(
        s: &SelectionMatrix,
        n_rf: usize,
        codebook: PhaseCodebook,
    ) -> Result<Self, CodebookError> {
        let block = codebook.len();
        if s.width != n_rf * block || s.nt != codebook.nt() {
            return Err(CodebookError::BadSelectionShape {
                rows: s.nt,
                cols: s.width,
                expected_rows: codebook.nt(),
                expected_cols: n_rf * block,
            });
        }
        let assignment = s
            .columns
            .iter()
            .map(|&c| (c / block, c % block))
            .collect();
        Self::new(n_rf, assignment, codebook)
    }

    /// Textual round-trip format: a `nt n_rf bits` header followed by one
    /// `antenna rf_index phase_index` triple per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.nt, self.n_rf, self.codebook.bits());
        for (i, &(rf, phase)) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{} {} {}\n", i, rf, phase));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CodebookError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CodebookError::Parse("empty input".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| CodebookError::Parse(format!("bad header token `{t}`"))))
            .collect::<Result<_, _>>()?;
        let [nt, n_rf, bits] = head[..] else {
            return Err(CodebookError::Parse("header must be `nt n_rf bits`".into()));
        };
        let codebook = PhaseCodebook::new(bits as u32, nt)?;
        let mut assignment = vec![None; nt];
        for line in lines {
            let tok: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| CodebookError::Parse(format!("bad token `{t}`"))))
                .collect::<Result<_, _>>()?;
            let [antenna, rf, phase] = tok[..] else {
                return Err(CodebookError::Parse(format!("bad line `{line}`")));
            };
            if antenna >= nt {
                return Err(CodebookError::Parse(format!("antenna {antenna} out of range")));
            }
            if assignment[antenna].replace((rf, phase)).is_some() {
                return Err(CodebookError::Parse(format!("duplicate antenna {antenna}")));
            }
        }
        let assignment: Vec<Assignment> = assignment
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or(CodebookError::Parse(format!("missing antenna {i}"))))
            .collect::<Result<_, _>>()?;
        Self::new(n_rf, assignment, codebook)
    }
}

/// Binary matrix `S` of shape `Nt x (N_RF * 2^B)` with exactly one 1 per row,
/// stored as the column index of each row's 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    nt: usize,
    width: usize,
    columns: Vec<usize>,
}

impl SelectionMatrix {
    /// Build from a dense 0/1 matrix, rejecting rows that do not sum to 1.
    pub fn from_dense(dense: &DMatrix<f64>) -> Result<Self, CodebookError> {
        let (nt, width) = dense.shape();
        let mut columns = Vec::with_capacity(nt);
        for i in 0..nt {
            let ones: Vec<usize> = (0..width).filter(|&j| dense[(i, j)] != 0.0).collect();
            if ones.len() != 1 {
                return Err(CodebookError::BadSelectionRow {
                    row: i,
                    sum: ones.len(),
                });
            }
            columns.push(ones[0]);
        }
        Ok(Self { nt, width, columns })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nt, self.width);
        for (i, &c) in self.columns.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }
}

/// The block-diagonal `F_set` matrix pairing each selection column with its
/// codebook value, so that `F_RF = S * F_set`.
pub fn f_set_matrix(n_rf: usize, codebook: &PhaseCodebook) -> DMatrix<C64> {
    let block = codebook.len();
    let mut m = DMatrix::zeros(n_rf * block, n_rf);
    for rf in 0..n_rf {
        for b in 0..block {
            m[(rf * block + b, rf)] = codebook.entry(b);
        }
    }
    m
}

impl AnalogBeamformer {
    /// `F_RF^H F_RF`, which is diagonal with entry `(j,j) = n_j / Nt` by the
    /// disjoint-row structure. Returned as the real diagonal.
    pub fn gram_diagonal(&self) -> DVector<f64> {
        let sizes = self.subarray_sizes();
        DVector::from_iterator(
            self.n_rf,
            sizes.iter().map(|&n| n as f64 / self.nt as f64),
        )
    }
}
