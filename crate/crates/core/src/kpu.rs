//! Multi-pixel KPU variants.
//!
//! With `P` pixels arriving per step, pixel `n` (raster index) travels on
//! lane `n mod P` and arrives at step `floor(n / P)`. A sliding window is
//! computed at the step its anchor arrives; every kernel tap is fed from a
//! fixed lane through a fixed delay so that all taps line up with the anchor.
//! Windows whose anchors share a lane share one delay/connectivity pattern,
//! giving `P` variants per layer. A variant none of whose windows survive the
//! stride is never instantiated.
//!
//! The anchor of a window is its bottom-right cell in raster order. When
//! zero padding pushes that cell past the right edge, the raster index wraps
//! into the next row (and past the last row, into the next frame); those
//! positions never deliver a real pixel to the window because every such tap
//! is padding-selected. This keeps exactly one window per anchor position
//! and one delay pattern per lane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{axis_geometry, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapAssignment {
    pub row: usize,
    pub col: usize,
    pub lane: usize,
    /// Steps of input buffering between the tap's arrival and the anchor's.
    pub delay: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowPos {
    pub out_row: usize,
    pub out_col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KpuVariantSchedule {
    /// Anchor lane served by this variant.
    pub variant_id: usize,
    pub elided: bool,
    /// One entry per kernel cell, row-major.
    pub taps: Vec<TapAssignment>,
    /// Stride-valid windows computed by this variant, in output order.
    pub windows: Vec<WindowPos>,
    /// Step (relative to the frame's first step) at which each window in
    /// `windows` is produced. Steps past the end of the frame fall into the
    /// next frame's arrival.
    pub valid_output_cycles: Vec<usize>,
    /// For each kernel column, the steps at which that column is zeroed.
    pub padding_select: Vec<Vec<usize>>,
    /// For each kernel row, the steps at which that row is zeroed.
    pub row_select: Vec<Vec<usize>>,
}

impl KpuVariantSchedule {
    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|t| t.delay).max().unwrap_or(0)
    }

    /// Lane and delay for kernel cell `(row, col)`.
    #[inline]
    pub fn route(&self, row: usize, col: usize, kernel_w: usize) -> (usize, usize) {
        let t = &self.taps[row * kernel_w + col];
        (t.lane, t.delay)
    }
}

/// Sliding-window geometry of one layer at a given pixel parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub map_h: usize,
    pub map_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pixels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl WindowGeometry {
    pub fn new(
        map_h: usize,
        map_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        pixels: usize,
    ) -> Result<Self> {
        if pixels == 0 {
            return Err(Error::Validation(
                "pixels per cycle must be at least 1".into(),
            ));
        }
        let rows = axis_geometry(map_h, kernel_h, stride, padding);
        let cols = axis_geometry(map_w, kernel_w, stride, padding);
        let (Some((out_h, pad_top)), Some((out_w, pad_left))) = (rows, cols) else {
            return Err(Error::Shape {
                layer: 0,
                msg: format!("{kernel_h}x{kernel_w} kernel does not fit a {map_h}x{map_w} map"),
            });
        };
        Ok(WindowGeometry {
            map_h,
            map_w,
            kernel_h,
            kernel_w,
            stride,
            pixels,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn frame_pixels(&self) -> usize {
        self.map_h * self.map_w
    }

    /// Raster distance from tap `(row, col)` back from the anchor.
    #[inline]
    pub fn tap_offset(&self, row: usize, col: usize) -> usize {
        (self.kernel_h - 1 - row) * self.map_w + (self.kernel_w - 1 - col)
    }

    /// Frame-relative raster index of the anchor of output `(oy, ox)`.
    pub fn anchor(&self, oy: usize, ox: usize) -> usize {
        let row = oy * self.stride + self.kernel_h - 1 - self.pad_top;
        let col = ox * self.stride + self.kernel_w - 1 - self.pad_left;
        row * self.map_w + col
    }

    /// Top-left map coordinate of output `(oy, ox)`; may be negative.
    #[inline]
    pub fn origin(&self, oy: usize, ox: usize) -> (isize, isize) {
        (
            (oy * self.stride) as isize - self.pad_top as isize,
            (ox * self.stride) as isize - self.pad_left as isize,
        )
    }

    #[inline]
    pub fn row_outside(&self, oy: usize, row: usize) -> bool {
        let y = self.origin(oy, 0).0 + row as isize;
        y < 0 || y >= self.map_h as isize
    }

    #[inline]
    pub fn col_outside(&self, ox: usize, col: usize) -> bool {
        let x = self.origin(0, ox).1 + col as isize;
        x < 0 || x >= self.map_w as isize
    }

    fn out_index(&self, corner: usize, kernel: usize, pad: usize, out: usize) -> Option<usize> {
        let base = (corner + pad).checked_sub(kernel - 1)?;
        if base % self.stride != 0 {
            return None;
        }
        let o = base / self.stride;
        (o < out).then_some(o)
    }

    /// The stride-valid window anchored at global stream position `n`, as
    /// `(frame, out_row, out_col)`.
    ///
    /// This is the window-position counter: it only needs the current row
    /// and column of the stream, plus the two wrapped alternatives.
    pub fn window_at(&self, n: u64) -> Option<(u64, usize, usize)> {
        let frame_px = self.frame_pixels() as u64;
        let frame = n / frame_px;
        let local = (n % frame_px) as usize;
        let (row, col) = (local / self.map_w, local % self.map_w);
        let (h, w) = (self.map_h, self.map_w);
        let mut candidates = [(frame, row, col, true); 4];
        candidates[1] = (frame, row.wrapping_sub(1), col + w, row >= 1);
        candidates[2] = (frame.wrapping_sub(1), row + h, col, frame >= 1);
        candidates[3] = (frame.wrapping_sub(1), row + h - 1, col + w, frame >= 1);
        candidates
            .into_iter()
            .filter(|c| c.3)
            .find_map(|(f, r, c, _)| {
                let oy = self.out_index(r, self.kernel_h, self.pad_top, self.out_h)?;
                let ox = self.out_index(c, self.kernel_w, self.pad_left, self.out_w)?;
                Some((f, oy, ox))
            })
    }

    fn tap_pattern(&self, anchor: usize) -> Vec<TapAssignment> {
        let p = self.pixels as i64;
        let a = anchor as i64;
        let mut taps = Vec::with_capacity(self.kernel_h * self.kernel_w);
        for row in 0..self.kernel_h {
            for col in 0..self.kernel_w {
                let n = a - self.tap_offset(row, col) as i64;
                taps.push(TapAssignment {
                    row,
                    col,
                    lane: n.rem_euclid(p) as usize,
                    delay: (a.div_euclid(p) - n.div_euclid(p)) as usize,
                });
            }
        }
        taps
    }
}

/// Build the `P` KPU variants of a layer.
pub fn derive_variants(
    map_h: usize,
    map_w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: Padding,
    pixels: usize,
) -> Result<Vec<KpuVariantSchedule>> {
    let geom = WindowGeometry::new(map_h, map_w, kernel_h, kernel_w, stride, padding, pixels)?;
    derive_for(&geom)
}

pub fn derive_for(geom: &WindowGeometry) -> Result<Vec<KpuVariantSchedule>> {
    let p = geom.pixels;
    let mut variants: Vec<KpuVariantSchedule> = (0..p)
        .map(|m| KpuVariantSchedule {
            variant_id: m,
            elided: true,
            taps: Vec::new(),
            windows: Vec::new(),
            valid_output_cycles: Vec::new(),
            padding_select: vec![Vec::new(); geom.kernel_w],
            row_select: vec![Vec::new(); geom.kernel_h],
        })
        .collect();

    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let anchor = geom.anchor(oy, ox);
            let v = &mut variants[anchor % p];
            let step = anchor / p;
            if v.windows.is_empty() {
                v.taps = geom.tap_pattern(anchor);
                v.elided = false;
            } else if geom.tap_pattern(anchor) != v.taps {
                return Err(Error::InconsistentLanePattern {
                    map_w: geom.map_w,
                    pixels: p,
                    suggested: geom.map_w.next_multiple_of(p),
                });
            }
            v.windows.push(WindowPos {
                out_row: oy,
                out_col: ox,
            });
            v.valid_output_cycles.push(step);
            for col in 0..geom.kernel_w {
                if geom.col_outside(ox, col) {
                    v.padding_select[col].push(step);
                }
            }
            for row in 0..geom.kernel_h {
                if geom.row_outside(oy, row) {
                    v.row_select[row].push(step);
                }
            }
        }
    }

    // elided variants still get a pattern for reporting
    let last_offset = geom.tap_offset(0, 0);
    for v in variants.iter_mut().filter(|v| v.elided) {
        let anchor = (last_offset..)
            .find(|n| n % p == v.variant_id)
            .expect("some index has this lane");
        v.taps = geom.tap_pattern(anchor);
    }
    Ok(variants)
}

/// Which anchor lanes own at least one stride-valid window in a continuous
/// stream of frames. When the frame size is not a multiple of `P`, later
/// frames shift every anchor to another lane, so all `P` frame offsets count.
pub fn live_variants(geom: &WindowGeometry) -> Vec<bool> {
    let p = geom.pixels;
    let hw = geom.frame_pixels();
    let mut live = vec![false; p];
    for f in 0..p {
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                live[(f * hw + geom.anchor(oy, ox)) % p] = true;
            }
        }
    }
    live
}

/// [`derive_for`] for a continuous stream: variants that are idle in the
/// first frame but own windows of a later one stay instantiated.
pub fn derive_streaming(geom: &WindowGeometry) -> Result<Vec<KpuVariantSchedule>> {
    let mut variants = derive_for(geom)?;
    for (v, live) in variants.iter_mut().zip(live_variants(geom)) {
        v.elided = !live;
    }
    Ok(variants)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub windows: usize,
    pub per_variant: Vec<usize>,
}

/// Check that every stride-valid window is claimed by exactly one live
/// variant, at the step its anchor arrives.
pub fn window_coverage(
    schedules: &[KpuVariantSchedule],
    geom: &WindowGeometry,
) -> Result<CoverageReport> {
    let mut claims = vec![0u32; geom.out_h * geom.out_w];
    for v in schedules {
        if v.elided && !v.windows.is_empty() {
            return Err(Error::Partition(format!(
                "elided variant {} claims windows",
                v.variant_id
            )));
        }
        if v.windows.len() != v.valid_output_cycles.len() {
            return Err(Error::Partition(format!(
                "variant {} window/cycle lists differ",
                v.variant_id
            )));
        }
        for (w, &step) in v.windows.iter().zip(&v.valid_output_cycles) {
            if w.out_row >= geom.out_h || w.out_col >= geom.out_w {
                return Err(Error::Partition(format!(
                    "variant {} claims out-of-range {w:?}",
                    v.variant_id
                )));
            }
            // the anchor's raster index must land on this variant's lane and step
            let row = w.out_row * geom.stride + geom.kernel_h - 1 - geom.pad_top;
            let col = w.out_col * geom.stride + geom.kernel_w - 1 - geom.pad_left;
            let n = row * geom.map_w + col;
            if n % geom.pixels != v.variant_id || n / geom.pixels != step {
                return Err(Error::Partition(format!(
                    "variant {} claims {w:?} at step {step}, anchor {n} belongs elsewhere",
                    v.variant_id
                )));
            }
            claims[w.out_row * geom.out_w + w.out_col] += 1;
        }
    }
    if let Some(i) = claims.iter().position(|&c| c != 1) {
        return Err(Error::Partition(format!(
            "window ({}, {}) claimed {} times",
            i / geom.out_w,
            i % geom.out_w,
            claims[i]
        )));
    }
    Ok(CoverageReport {
        windows: claims.len(),
        per_variant: schedules.iter().map(|v| v.windows.len()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tap(s: &KpuVariantSchedule, row: usize, col: usize) -> (usize, usize) {
        let t = s
            .taps
            .iter()
            .find(|t| t.row == row && t.col == col)
            .unwrap();
        (t.lane, t.delay)
    }

    #[test]
    fn two_pixel_five_by_five() {
        let v = derive_variants(5, 5, 3, 3, 1, Padding::None, 2).unwrap();
        assert_eq!(tap(&v[0], 2, 2), (0, 0));
        assert_eq!(tap(&v[0], 0, 0), (0, 6));
        assert_eq!(tap(&v[0], 0, 1), (1, 6));
        assert_eq!(v[0].window_count() + v[1].window_count(), 9);
        assert_eq!(v[0].window_count(), 5);

        let v = derive_variants(5, 5, 3, 3, 2, Padding::None, 2).unwrap();
        let anchors: Vec<usize> = v[0].valid_output_cycles.iter().map(|s| s * 2).collect();
        assert_eq!(anchors, vec![12, 14, 22, 24]);
        assert!(v[1].elided);

        // frame 1 starts on pixel 25, so its anchors land on lane 1
        let geom = WindowGeometry::new(5, 5, 3, 3, 2, Padding::None, 2).unwrap();
        assert_eq!(live_variants(&geom), vec![true, true]);
        let s = derive_streaming(&geom).unwrap();
        assert!(!s[1].elided);
        assert_eq!(s[1].window_count(), 0);
        let geom = WindowGeometry::new(6, 6, 3, 3, 2, Padding::None, 2).unwrap();
        assert_eq!(live_variants(&geom), vec![true, false]);
    }

    #[test]
    fn two_pixel_anchor_delays() {
        // Raster arrival-time oracle on the first window of a 5x5 map: the
        // anchor is pixel 12; arrival step of pixel n is floor(n / 2).
        let geom = WindowGeometry {
            map_h: 5,
            map_w: 5,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            pixels: 2,
            out_h: 3,
            out_w: 3,
            pad_top: 0,
            pad_left: 0,
        };
        assert_eq!(geom.anchor(0, 0), 12);
        let taps = geom.tap_pattern(12);
        let at = |r: usize, c: usize| {
            let t = taps[r * 3 + c];
            (t.lane, t.delay)
        };
        assert_eq!(at(2, 2), (0, 0));
        assert_eq!(at(0, 0), (0, 6));
        assert_eq!(at(0, 1), (1, 6));
        for r in 0..3 {
            for c in 0..3 {
                let n = r * 5 + c;
                assert_eq!(at(r, c), (n % 2, 12 / 2 - n / 2));
            }
        }
    }

    #[test]
    fn stride_two_elides_odd_lane() {
        // 6x6 keeps the row length even; stride-2 anchors at rows/cols {2, 4}
        let v = derive_variants(6, 6, 3, 3, 2, Padding::None, 2).unwrap();
        assert!(!v[0].elided);
        assert!(v[1].elided);
        assert_eq!(v[0].window_count(), 4);
        let anchors: Vec<usize> = v[0].valid_output_cycles.iter().map(|s| s * 2).collect();
        assert_eq!(anchors, vec![14, 16, 26, 28]);
    }

    #[test]
    fn stride_one_splits_windows() {
        let geom = WindowGeometry::new(6, 6, 3, 3, 1, Padding::None, 2).unwrap();
        let v = derive_for(&geom).unwrap();
        let report = window_coverage(&v, &geom).unwrap();
        assert_eq!(live_variants(&geom), vec![true, true]);
        assert_eq!(report.windows, 16);
        assert_eq!(report.per_variant, vec![8, 8]);
    }

    #[test]
    fn single_pixel_is_plain_raster_distance() {
        let geom = WindowGeometry::new(5, 5, 3, 3, 1, Padding::None, 1).unwrap();
        let v = derive_for(&geom).unwrap();
        assert_eq!(v.len(), 1);
        assert!(!v[0].elided);
        for t in &v[0].taps {
            assert_eq!(t.lane, 0);
            assert_eq!(t.delay, geom.tap_offset(t.row, t.col));
        }
        assert_eq!(window_coverage(&v, &geom).unwrap().per_variant, vec![9]);
        let v2 = derive_variants(5, 5, 3, 3, 2, Padding::None, 1).unwrap();
        assert_eq!(v2[0].window_count(), 4);
    }

    #[test]
    fn same_padding_selects() {
        let geom = WindowGeometry::new(4, 4, 3, 3, 1, Padding::Same, 1).unwrap();
        let v = derive_for(&geom).unwrap();
        let s = &v[0];
        // output (0, 0) has its top row and left column in the padding
        let step0 = s.valid_output_cycles[0];
        assert!(s.row_select[0].contains(&step0));
        assert!(s.padding_select[0].contains(&step0));
        assert!(!s.padding_select[1].contains(&step0));
        // the last window's anchor lies past the end of the frame
        assert!(*s.valid_output_cycles.last().unwrap() >= 16);
        window_coverage(&v, &geom).unwrap();
    }

    #[test]
    fn counter_matches_schedule() {
        for (h, w, k, s, pad, p) in [
            (6, 6, 3, 3, Padding::Same, 2),
            (7, 8, 3, 2, Padding::Same, 2),
            (8, 8, 5, 1, Padding::Same, 4),
            (5, 4, 2, 2, Padding::None, 2),
            (7, 7, 7, 1, Padding::None, 1),
        ] {
            let geom = WindowGeometry::new(h, w, k, k, s, pad, p).unwrap();
            let v = derive_for(&geom).unwrap();
            let mut from_schedule = Vec::new();
            for var in &v {
                for (win, &step) in var.windows.iter().zip(&var.valid_output_cycles) {
                    from_schedule.push((
                        (step * p + var.variant_id) as u64,
                        win.out_row,
                        win.out_col,
                    ));
                }
            }
            from_schedule.sort();
            // counter over three frames must find exactly the same windows, repeated
            let frame = (h * w) as u64;
            let mut from_counter = Vec::new();
            for n in 0..3 * frame {
                if let Some((f, oy, ox)) = geom.window_at(n) {
                    from_counter.push((f, n - f * frame, oy, ox));
                }
            }
            for f in 0..2u64 {
                let mut got: Vec<_> = from_counter
                    .iter()
                    .filter(|w| w.0 == f)
                    .map(|w| (w.1, w.2, w.3))
                    .collect();
                got.sort();
                assert_eq!(
                    got, from_schedule,
                    "geometry {h}x{w} k{k} s{s} {pad:?} P{p} frame {f}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn partition_and_causality(
            h in 1usize..=16, half_w in 1usize..=8, k in 1usize..=5, s in 1usize..=3,
            same in any::<bool>(), p_pow in 0u32..=2
        ) {
            let p = 1usize << p_pow;
            let w = half_w * 2;
            let pad = if same { Padding::Same } else { Padding::None };
            let Ok(geom) = WindowGeometry::new(h, w, k, k, s, pad, p) else {
                // only a kernel larger than an unpadded map is rejected
                prop_assert!(pad == Padding::None && (h < k || w < k));
                return Ok(());
            };
            let v = derive_for(&geom).unwrap();
            prop_assert_eq!(v.len(), p);
            let report = window_coverage(&v, &geom).unwrap();
            prop_assert_eq!(report.per_variant.iter().sum::<usize>(), geom.out_h * geom.out_w);
            let bound = ((k - 1) * w + (k - 1)).div_ceil(p) + 1;
            for var in &v {
                for t in &var.taps {
                    prop_assert!(t.delay <= bound);
                }
                // causality: every tap arrives no later than the output step
                for &step in &var.valid_output_cycles {
                    for t in &var.taps {
                        prop_assert!(step as i64 - t.delay as i64 >= -(bound as i64));
                        prop_assert!(t.delay <= step + bound);
                    }
                }
            }
        }
    }
}
