//! Raster figures of a localization: city, vote heat, localization set and
//! markers (stations magenta circles, true device green cross, estimate red
//! X), plus the grayscale vote-sum image.

use crate::HarnessError;
use image::{Rgb, RgbImage};
use levelvote::gridmap::{write_pgm, Cell, CityMap};
use levelvote::locengine::{LocalizationResult, VoteGrid};
use std::path::Path;

pub const O_SET: Rgb<u8> = Rgb([255, 220, 0]);
pub const BS_MARKER: Rgb<u8> = Rgb([255, 0, 255]);
pub const TRUE_MARKER: Rgb<u8> = Rgb([0, 200, 0]);
pub const EST_MARKER: Rgb<u8> = Rgb([230, 0, 0]);
const BUILDING: Rgb<u8> = Rgb([70, 70, 70]);

pub struct RenderInput<'a> {
    pub city: &'a CityMap,
    pub stations: &'a [Cell],
    pub votes: Option<&'a VoteGrid>,
    pub result: &'a LocalizationResult,
    pub truth: Option<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderSummary {
    pub scale: u32,
    pub bs_markers: usize,
    pub highlighted_cells: usize,
}

fn heat(t: f64) -> Rgb<u8> {
    // dark blue → teal → light
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(20.0, 190.0), lerp(30.0, 240.0), lerp(90.0, 230.0)])
}

/// One pixel per cell: buildings, vote heat on free cells, and the
/// localization set on top.
pub fn cell_layer(input: &RenderInput<'_>) -> RgbImage {
    let spec = input.city.spec();
    let mut img = RgbImage::new(spec.width() as u32, spec.height() as u32);
    let k = input.votes.map(|v| v.k_total().max(1) as f64).unwrap_or(1.0);
    for cell in spec.cells() {
        let px = if input.result.o_set.contains(cell) {
            O_SET
        } else if input.city.is_occupied(cell) {
            BUILDING
        } else {
            match input.votes {
                Some(v) => heat(v.at(cell) as f64 / k),
                None => Rgb([235, 235, 235]),
            }
        };
        img.put_pixel(cell.col as u32, cell.row as u32, px);
    }
    img
}

fn default_scale(height: usize, width: usize) -> u32 {
    (512 / height.max(width)).clamp(1, 16) as u32
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_circle(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    let r2o = (r * r) as f64;
    let r2i = ((r - 1).max(0) * (r - 1).max(0)) as f64;
    for dy in -r..=r {
        for dx in -r..=r {
            let d = (dx * dx + dy * dy) as f64;
            if d <= r2o + r as f64 && d >= r2i - (r as f64) {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

fn draw_cross(img: &mut RgbImage, cx: i64, cy: i64, r: i64, diagonal: bool, c: Rgb<u8>) {
    for t in -r..=r {
        if diagonal {
            put(img, cx + t, cy + t, c);
            put(img, cx + t, cy - t, c);
        } else {
            put(img, cx + t, cy, c);
            put(img, cx, cy + t, c);
        }
    }
}

/// Upscales the cell layer and draws markers at cell-center pixels.
pub fn compose(input: &RenderInput<'_>, scale: u32) -> (RgbImage, RenderSummary) {
    let layer = cell_layer(input);
    let highlighted_cells = layer.pixels().filter(|p| **p == O_SET).count();
    let mut img = image::imageops::resize(
        &layer,
        layer.width() * scale,
        layer.height() * scale,
        image::imageops::FilterType::Nearest,
    );
    let s = scale as f64;
    let center = |row: f64, col: f64| (((col + 0.5) * s) as i64, ((row + 0.5) * s) as i64);
    let r = (scale as i64 * 3 / 2).max(3);
    for bs in input.stations {
        let (x, y) = center(bs.row as f64, bs.col as f64);
        draw_circle(&mut img, x, y, r, BS_MARKER);
    }
    if let Some(t) = input.truth {
        let (x, y) = center(t.row as f64, t.col as f64);
        draw_cross(&mut img, x, y, r, false, TRUE_MARKER);
    }
    let est = input.result.estimate;
    let (x, y) = center(est.row, est.col);
    draw_cross(&mut img, x, y, r, true, EST_MARKER);
    (
        img,
        RenderSummary {
            scale,
            bs_markers: input.stations.len(),
            highlighted_cells,
        },
    )
}

pub fn render_result(input: &RenderInput<'_>, path: impl AsRef<Path>) -> Result<RenderSummary, HarnessError> {
    let path = path.as_ref();
    let spec = input.city.spec();
    let (img, summary) = compose(input, default_scale(spec.height(), spec.width()));
    img.save(path).map_err(|e| HarnessError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(summary)
}

/// Grayscale vote sum, votes scaled by 255 / K.
pub fn render_vote_sum(votes: &VoteGrid, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    Ok(write_pgm(path, &votes.to_raster())?)
}
