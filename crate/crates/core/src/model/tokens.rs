use serde::{Deserialize, Serialize};

use crate::data::{FeatureVolume, GridShape};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// How a clip of `H × W` frames is cut into `H_t × W_t` tubelets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeletGrid {
    pub frame_height: usize,
    pub frame_width: usize,
    pub tubelet_height: usize,
    pub tubelet_width: usize,
    pub shape: GridShape,
}

impl TubeletGrid {
    pub fn tubelets(&self) -> usize {
        self.shape.tubelets()
    }
}

/// Non-overlapping tubelet partition; pixels past the last whole tubelet
/// are dropped.
pub fn tubelet_partition(height: usize, width: usize, tubelet_height: usize, tubelet_width: usize) -> Result<TubeletGrid> {
    if height == 0 || width == 0 || tubelet_height == 0 || tubelet_width == 0 {
        return Err(Error::config("tubelet", "frame and tubelet extents must be positive"));
    }
    if tubelet_height > height || tubelet_width > width {
        return Err(Error::config(
            "tubelet",
            format!("{tubelet_height}x{tubelet_width} tubelet is larger than the {height}x{width} frame"),
        ));
    }
    Ok(TubeletGrid {
        frame_height: height,
        frame_width: width,
        tubelet_height,
        tubelet_width,
        shape: GridShape::new(height / tubelet_height, width / tubelet_width),
    })
}

/// Position of a token: the classification token, or a tubelet at
/// (clip within the window, grid row, grid col).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PositionTag {
    Cls,
    Tubelet { clip: usize, row: usize, col: usize },
}

/// Tags for a window of `clips` clips: CLS first, then clip-major, row-major.
pub fn window_tags(clips: usize, grid: GridShape) -> Vec<PositionTag> {
    let mut tags = Vec::with_capacity(1 + clips * grid.tubelets());
    tags.push(PositionTag::Cls);
    for clip in 0..clips {
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                tags.push(PositionTag::Tubelet { clip, row, col });
            }
        }
    }
    tags
}

/// Tubelet features of one window plus the position tag of every token.
///
/// `features` is `[C·N_t, d]` and holds the raw tubelet features in token
/// order; the model's input projection and `z_cls` are applied when the
/// sequence is scored. `tags[0]` is always [`PositionTag::Cls`].
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub features: Tensor,
    pub tags: Vec<PositionTag>,
}

impl TokenSequence {
    /// Number of tokens including CLS.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Swaps tubelet tokens `a` and `b` (1-based token positions) together
    /// with their tags.
    pub fn swap_tokens(&mut self, a: usize, b: usize) {
        assert!(a >= 1 && b >= 1, "CLS stays in place");
        let d = self.features.dims()[1];
        let data = self.features.data_mut();
        for c in 0..d {
            data.swap((a - 1) * d + c, (b - 1) * d + c);
        }
        self.tags.swap(a, b);
    }
}

/// Tokens for clips `[start, start + clips)` of a video.
pub fn tokenize(features: &FeatureVolume, start: usize, clips: usize) -> Result<TokenSequence> {
    let slice = features.clips(start, clips)?;
    let tokens = clips * features.grid().tubelets();
    Ok(TokenSequence {
        features: Tensor::new(vec![tokens, features.d()], slice.to_vec())?,
        tags: window_tags(clips, features.grid()),
    })
}
