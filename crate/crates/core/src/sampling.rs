//! Evenly spaced frame subsampling.
//!
//! For a video of `N` frames and a target length `T`, the stride is
//! `t' = trunc(N / T)` and the selected 1-based frame numbers are
//! `t', 2t', ..., T·t'`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ShortVideo {
    /// `N < T` is an error.
    #[default]
    Strict,
    /// `N < T` yields `1..=N` followed by frame `N` repeated.
    PadRepeat,
}

/// 1-based frame numbers of the `target` selected frames.
pub fn select_frame_indices(frames: usize, target: usize, short: ShortVideo) -> Result<Vec<usize>> {
    if target == 0 {
        return Err(Error::Config("target frame count must be at least 1".into()));
    }
    if frames < target {
        return match short {
            ShortVideo::PadRepeat if frames > 0 => Ok((1..=frames)
                .chain(std::iter::repeat_n(frames, target - frames))
                .collect()),
            _ => Err(Error::InsufficientFrames { frames, target }),
        };
    }
    let stride = frames / target;
    Ok((1..=target).map(|k| k * stride).collect())
}

/// Picks the selected frames out of a 0-based sequence.
pub fn subsample_sequence<T: Clone>(frames: &[T], target: usize, short: ShortVideo) -> Result<Vec<T>> {
    Ok(select_frame_indices(frames.len(), target, short)?
        .into_iter()
        .map(|i| frames[i - 1].clone())
        .collect())
}
