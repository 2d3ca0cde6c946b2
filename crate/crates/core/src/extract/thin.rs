use crate::error::{Error, Result};
use crate::filters::Integral;
use crate::image::RasterImage;

pub const RIDGE: u8 = 0;
pub const BACKGROUND: u8 = 255;

/// Side of the local-mean window used by [`binarize`].
pub const LOCAL_MEAN_WINDOW: usize = 16;

/// Local-mean threshold: pixels strictly darker than the mean of the
/// surrounding 16x16 window become ridge (0), everything else 255.
pub fn binarize(img: &RasterImage) -> Result<RasterImage> {
    if !img.is_gray() {
        return Err(Error::invalid("binarize expects a single-channel image"));
    }
    let (w, h) = (img.width(), img.height());
    let integral = Integral::new(img.data(), w, h);
    let half = LOCAL_MEAN_WINDOW / 2;
    let mut out = vec![BACKGROUND; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(half), (y + half).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(half), (x + half).min(w));
            let (sum, _) = integral.rect(x0, y0, x1, y1);
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            if f64::from(img.get(x, y)) * n < sum {
                out[y * w + x] = RIDGE;
            }
        }
    }
    RasterImage::gray(w, h, out)?.with_ppi(img.ppi())
}

/// Zhang-Suen thinning of the ridge (0) pixels of a binary image, followed
/// by removal of staircase corner pixels so the skeleton is strictly
/// 8-connected.
pub fn thin(binary: &RasterImage) -> Result<RasterImage> {
    if !binary.is_gray() {
        return Err(Error::invalid("thin expects a single-channel image"));
    }
    let (w, h) = (binary.width(), binary.height());
    // One pixel of padding keeps neighbourhood reads branch-free.
    let pw = w + 2;
    let ph = h + 2;
    let mut grid = vec![0u8; pw * ph];
    for y in 0..h {
        for x in 0..w {
            grid[(y + 1) * pw + x + 1] = u8::from(binary.get(x, y) == RIDGE);
        }
    }

    let mut marked = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            marked.clear();
            for y in 1..ph - 1 {
                for x in 1..pw - 1 {
                    let i = y * pw + x;
                    if grid[i] == 0 {
                        continue;
                    }
                    let p = neighbours(&grid, pw, x, y);
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) || transitions(&p) != 1 {
                        continue;
                    }
                    // p[0]=N p[2]=E p[4]=S p[6]=W
                    let ok = if step == 0 {
                        p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0
                    } else {
                        p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0
                    };
                    if ok {
                        marked.push(i);
                    }
                }
            }
            for &i in &marked {
                grid[i] = 0;
            }
            changed |= !marked.is_empty();
        }
        if !changed {
            break;
        }
    }

    // A pixel whose two adjacent 4-neighbours are set while the opposite
    // side is empty only adds a staircase step.
    for y in 1..ph - 1 {
        for x in 1..pw - 1 {
            let i = y * pw + x;
            if grid[i] == 0 {
                continue;
            }
            let p = neighbours(&grid, pw, x, y);
            for r in 0..4 {
                let a = p[(2 * r) % 8];
                let b = p[(2 * r + 2) % 8];
                let opp1 = p[(2 * r + 4) % 8];
                let opp_diag = p[(2 * r + 5) % 8];
                let opp2 = p[(2 * r + 6) % 8];
                if a == 1 && b == 1 && opp1 == 0 && opp_diag == 0 && opp2 == 0 {
                    grid[i] = 0;
                    break;
                }
            }
        }
    }

    let mut out = vec![BACKGROUND; w * h];
    for y in 0..h {
        for x in 0..w {
            if grid[(y + 1) * pw + x + 1] == 1 {
                out[y * w + x] = RIDGE;
            }
        }
    }
    RasterImage::gray(w, h, out)?.with_ppi(binary.ppi())
}

/// [`binarize`] followed by [`thin`].
pub fn binarize_thin(img: &RasterImage) -> Result<RasterImage> {
    thin(&binarize(img)?)
}

/// Clockwise 8-neighbourhood starting north: N, NE, E, SE, S, SW, W, NW.
#[inline]
fn neighbours(grid: &[u8], pw: usize, x: usize, y: usize) -> [u8; 8] {
    let i = y * pw + x;
    [
        grid[i - pw],
        grid[i - pw + 1],
        grid[i + 1],
        grid[i + pw + 1],
        grid[i + pw],
        grid[i + pw - 1],
        grid[i - 1],
        grid[i - pw - 1],
    ]
}

#[inline]
fn transitions(p: &[u8; 8]) -> usize {
    (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count()
}
