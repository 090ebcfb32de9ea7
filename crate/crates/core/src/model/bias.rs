//! 3D relative position bias.
//!
//! One learnable table per head, indexed by the offset `(Δt, Δi, Δj)`
//! between two tubelet tokens. Pairs involving the CLS token get no bias.

use super::tokens::PositionTag;
use crate::data::GridShape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Geometry of a bias table for windows of `clips` clips over `grid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiasLayout {
    pub clips: usize,
    pub grid: GridShape,
}

impl BiasLayout {
    pub fn new(clips: usize, grid: GridShape) -> Self {
        Self { clips, grid }
    }

    fn spans(&self) -> [usize; 3] {
        [2 * self.clips - 1, 2 * self.grid.rows - 1, 2 * self.grid.cols - 1]
    }

    /// `(2C−1)(2P_h−1)(2P_w−1)`.
    pub fn entries(&self) -> usize {
        self.spans().iter().product()
    }

    /// Table slot of an offset, or `None` when it is out of range.
    pub fn offset_index(&self, dt: isize, di: isize, dj: isize) -> Option<usize> {
        let [st, si, sj] = self.spans();
        let t = dt + self.clips as isize - 1;
        let i = di + self.grid.rows as isize - 1;
        let j = dj + self.grid.cols as isize - 1;
        let inside = |v: isize, span: usize| v >= 0 && (v as usize) < span;
        (inside(t, st) && inside(i, si) && inside(j, sj)).then(|| (t as usize * si + i as usize) * sj + j as usize)
    }

    /// Slot for the ordered pair `(p, q)`: offset `tag(p) − tag(q)`.
    pub fn pair_index(&self, p: PositionTag, q: PositionTag) -> Result<Option<usize>> {
        match (p, q) {
            (
                PositionTag::Tubelet { clip: tp, row: ip, col: jp },
                PositionTag::Tubelet { clip: tq, row: iq, col: jq },
            ) => {
                let (dt, di, dj) = (
                    tp as isize - tq as isize,
                    ip as isize - iq as isize,
                    jp as isize - jq as isize,
                );
                self.offset_index(dt, di, dj).map(Some).ok_or_else(|| {
                    Error::Data(format!("offset ({dt}, {di}, {dj}) outside the bias table"))
                })
            }
            _ => Ok(None),
        }
    }

    /// Row-major `N × N` slot matrix for a token sequence.
    pub fn index_matrix(&self, tags: &[PositionTag]) -> Result<Vec<Option<usize>>> {
        let mut out = Vec::with_capacity(tags.len() * tags.len());
        for &p in tags {
            for &q in tags {
                out.push(self.pair_index(p, q)?);
            }
        }
        Ok(out)
    }
}

/// Per-head bias values over the offsets of one layout: `[heads, entries]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasTable {
    pub layout: BiasLayout,
    pub values: Tensor,
}

impl BiasTable {
    pub fn heads(&self) -> usize {
        self.values.dims()[0]
    }

    /// Bias for the ordered pair `(p, q)`, one value per head.
    pub fn lookup(&self, p: PositionTag, q: PositionTag) -> Result<Vec<f64>> {
        let entries = self.layout.entries();
        Ok(match self.layout.pair_index(p, q)? {
            Some(i) => (0..self.heads()).map(|h| self.values.data()[h * entries + i]).collect(),
            None => vec![0.0; self.heads()],
        })
    }
}

/// Bias for the ordered pair `(p, q)`, one value per head.
pub fn bias_lookup(table: &BiasTable, p: PositionTag, q: PositionTag) -> Result<Vec<f64>> {
    table.lookup(p, q)
}
