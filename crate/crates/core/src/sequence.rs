use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Visual tokens followed by text tokens, with the frame layout of the visual prefix.
///
/// Visual token `i` sits at sequence position `i` and belongs to frame `i / tokens_per_frame`;
/// text tokens follow at positions `N_v..N_v + N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    visual: Matrix,
    text: Matrix,
    frames: usize,
    tokens_per_frame: usize,
}

impl TokenSequence {
    pub fn new(visual: Matrix, text: Matrix, frames: usize, tokens_per_frame: usize) -> Result<Self> {
        if visual.rows() != frames * tokens_per_frame {
            return Err(Error::Shape {
                what: "visual tokens (frames x tokens_per_frame)",
                expected: frames * tokens_per_frame,
                got: visual.rows(),
            });
        }
        if text.rows() > 0 && visual.rows() > 0 && text.cols() != visual.cols() {
            return Err(Error::Shape {
                what: "text hidden width",
                expected: visual.cols(),
                got: text.cols(),
            });
        }
        Ok(Self {
            visual,
            text,
            frames,
            tokens_per_frame,
        })
    }

    #[inline]
    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    #[inline]
    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn visual_mut(&mut self) -> &mut Matrix {
        &mut self.visual
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    #[inline]
    pub fn visual_len(&self) -> usize {
        self.visual.rows()
    }

    #[inline]
    pub fn text_len(&self) -> usize {
        self.text.rows()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.visual_len() + self.text_len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        if self.visual.rows() > 0 {
            self.visual.cols()
        } else {
            self.text.cols()
        }
    }

    #[inline]
    pub fn frame_of(&self, visual_index: usize) -> usize {
        visual_index / self.tokens_per_frame
    }

    /// The concatenated hidden-state matrix `H`.
    pub fn concat(&self) -> Matrix {
        self.visual
            .vstack(&self.text)
            .expect("widths validated at construction")
    }

    /// Same layout with new text tokens.
    pub fn with_text(&self, text: Matrix) -> Result<Self> {
        Self::new(self.visual.clone(), text, self.frames, self.tokens_per_frame)
    }

    pub fn positions(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Pre-softmax logits from the last text token to every visual token, averaged over heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f32>,
    /// 1-based decoder layer the logits were read from.
    pub layer: usize,
    pub debiased: bool,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
