//! Row-wise discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 FFT. Any other length uses
//! the direct O(n²) sum, evaluated as a product with cached cosine/sine
//! tables. The default patch count (125) takes the direct path, so both paths
//! are production code. Transforms here are unnormalized in both directions;
//! callers apply `1/n` where needed.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use super::gemm::gemm;

struct Tables {
    cos: Vec<f64>,
    sin: Vec<f64>,
    neg_sin: Vec<f64>,
}

thread_local! {
    static TABLES: RefCell<HashMap<usize, Rc<Tables>>> = RefCell::new(HashMap::new());
}

fn tables(n: usize) -> Rc<Tables> {
    TABLES.with(|cell| {
        cell.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut cos = vec![0.0; n * n];
                let mut sin = vec![0.0; n * n];
                for t in 0..n {
                    for k in 0..n {
                        // reduce the phase index first so large n keeps full precision
                        let theta = 2.0 * PI * ((t * k) % n) as f64 / n as f64;
                        cos[t * n + k] = theta.cos();
                        sin[t * n + k] = theta.sin();
                    }
                }
                let neg_sin = sin.iter().map(|v| -v).collect();
                Rc::new(Tables { cos, sin, neg_sin })
            })
            .clone()
    })
}

/// Transforms each length-`n` row of the input. Forward uses `e^{-2πikt/n}`,
/// inverse uses `e^{+2πikt/n}`; neither is scaled.
pub fn dft_rows(
    re_in: &[f64],
    im_in: Option<&[f64]>,
    re_out: &mut [f64],
    im_out: &mut [f64],
    n: usize,
    inverse: bool,
) {
    if n.is_power_of_two() {
        dft_rows_fft(re_in, im_in, re_out, im_out, n, inverse);
    } else {
        dft_rows_direct(re_in, im_in, re_out, im_out, n, inverse);
    }
}

/// Direct O(n²) evaluation, valid for every `n`.
pub fn dft_rows_direct(
    re_in: &[f64],
    im_in: Option<&[f64]>,
    re_out: &mut [f64],
    im_out: &mut [f64],
    n: usize,
    inverse: bool,
) {
    let rows = re_in.len() / n;
    let tab = tables(n);
    // forward: Re = xr·C + xi·S, Im = xi·C − xr·S
    // inverse: Re = xr·C − xi·S, Im = xi·C + xr·S
    let (s_re, s_im) = if inverse {
        (&tab.neg_sin, &tab.sin)
    } else {
        (&tab.sin, &tab.neg_sin)
    };
    gemm(rows, n, n, re_in, false, &tab.cos, false, re_out, false);
    gemm(rows, n, n, re_in, false, s_im, false, im_out, false);
    if let Some(im_in) = im_in {
        gemm(rows, n, n, im_in, false, s_re, false, re_out, true);
        gemm(rows, n, n, im_in, false, &tab.cos, false, im_out, true);
    }
}

/// Radix-2 path. Panics unless `n` is a power of two.
pub fn dft_rows_fft(
    re_in: &[f64],
    im_in: Option<&[f64]>,
    re_out: &mut [f64],
    im_out: &mut [f64],
    n: usize,
    inverse: bool,
) {
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length");
    let rows = re_in.len() / n;
    let twiddles: Vec<(f64, f64)> = (0..n / 2)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / n as f64;
            (theta.cos(), if inverse { theta.sin() } else { -theta.sin() })
        })
        .collect();
    for r in 0..rows {
        let span = r * n..(r + 1) * n;
        re_out[span.clone()].copy_from_slice(&re_in[span.clone()]);
        match im_in {
            Some(im) => im_out[span.clone()].copy_from_slice(&im[span.clone()]),
            None => im_out[span.clone()].iter_mut().for_each(|v| *v = 0.0),
        }
        fft_in_place(&mut re_out[span.clone()], &mut im_out[span], &twiddles);
    }
}

fn fft_in_place(re: &mut [f64], im: &mut [f64], twiddles: &[(f64, f64)]) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let (wr, wi) = twiddles[j * step];
                let a = start + j;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len *= 2;
    }
}
