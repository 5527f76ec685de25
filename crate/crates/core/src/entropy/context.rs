//! Context windows around latent position `(k, l)`.
//!
//! `k` is the column and `l` the row of the latent grid, origin top-left,
//! raster order row-major. Each window is 4 columns wide (`k-2 ..= k+1`) and
//! 4 rows tall (`l-3 ..= l`), all channels. Window cell `(r, q)` maps to grid
//! cell `(l + r - 3, k + q - 2)`; cells outside the grid are zero.
//!
//! The causal window additionally zeroes every cell that is not strictly
//! before `(k, l)` in raster order, which in window coordinates is exactly
//! the last row's columns 2 and 3.

use crate::tensor::TensorF;

pub const WINDOW: usize = 4;
const ROWS_ABOVE: usize = 3;
const COLS_LEFT: usize = 2;

#[inline]
fn grid_cell(k: usize, l: usize, r: usize, q: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    let y = (l + r).checked_sub(ROWS_ABOVE)?;
    let x = (k + q).checked_sub(COLS_LEFT)?;
    (y < h && x < w).then_some((y, x))
}

/// Whether window cell `(r, q)` is visible to the causal extractor.
#[inline]
pub fn causal_visible(r: usize, q: usize) -> bool {
    r < WINDOW - 1 || q < COLS_LEFT
}

fn extract(src: &TensorF, k: usize, l: usize, causal: bool) -> TensorF {
    let (h, w, c) = src.shape();
    let mut out = TensorF::zeros(WINDOW, WINDOW, c);
    for r in 0..WINDOW {
        for q in 0..WINDOW {
            if causal && !causal_visible(r, q) {
                continue;
            }
            if let Some((y, x)) = grid_cell(k, l, r, q, h, w) {
                out.pixel_mut(r, q).copy_from_slice(src.pixel(y, x));
            }
        }
    }
    out
}

/// `c'_i`: the bit-consuming context window at `(k, l)`.
pub fn extract_ctx_prime(context: &TensorF, k: usize, l: usize) -> TensorF {
    extract(context, k, l, false)
}

/// `c''_i`: the window over already-coded latents with the causal mask
/// applied. Never reads a position at or after `(k, l)` in raster order.
pub fn extract_ctx_known(known: &TensorF, k: usize, l: usize) -> TensorF {
    extract(known, k, l, true)
}

/// Adds a window gradient back onto the full grid (adjoint of extraction).
pub fn scatter_window_grad(window_grad: &TensorF, k: usize, l: usize, causal: bool, target: &mut TensorF) {
    let (h, w, _) = target.shape();
    for r in 0..WINDOW {
        for q in 0..WINDOW {
            if causal && !causal_visible(r, q) {
                continue;
            }
            if let Some((y, x)) = grid_cell(k, l, r, q, h, w) {
                for (t, g) in target.pixel_mut(y, x).iter_mut().zip(window_grad.pixel(r, q)) {
                    *t += g;
                }
            }
        }
    }
}
