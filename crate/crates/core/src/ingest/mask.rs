use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Frame;

/// A binary foreground mask for one frame, run-length encoded over the
/// row-major raster. Runs alternate background/foreground and always start
/// with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFrame {
    pub video_id: String,
    pub frame: Frame,
    pub width: u32,
    pub height: u32,
    pub rle: Vec<u32>,
}

impl MaskFrame {
    pub fn from_raster(
        video_id: impl Into<String>,
        frame: Frame,
        width: u32,
        height: u32,
        raster: &[bool],
    ) -> Result<Self> {
        let cells = width as usize * height as usize;
        if raster.len() != cells {
            return Err(Error::Shape(format!(
                "raster has {} cells, expected {width}x{height}",
                raster.len()
            )));
        }
        Ok(MaskFrame {
            video_id: video_id.into(),
            frame,
            width,
            height,
            rle: encode_runs(raster),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.rle.iter().map(|&r| u64::from(r)).sum();
        let cells = u64::from(self.width) * u64::from(self.height);
        if total != cells {
            return Err(Error::InvalidRecord(format!(
                "mask runs cover {total} cells, expected {cells}"
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &run in &self.rle {
            out.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        out
    }

    pub fn foreground_cells(&self) -> u64 {
        self.rle.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }
}

pub fn encode_runs(raster: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &v in raster {
        if v == current {
            len += 1;
        } else {
            runs.push(len);
            current = v;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

/// Per-row foreground intervals with prefix lengths, for counting foreground
/// cells inside a rectangle in `O(rows * log runs)`.
#[derive(Debug, Clone)]
pub struct RowRuns {
    width: u32,
    height: u32,
    // For each row: sorted disjoint intervals [start, end) and the running
    // total of foreground cells before each interval.
    rows: Vec<Vec<(u32, u32, u32)>>,
}

impl RowRuns {
    pub fn from_mask(mask: &MaskFrame) -> Self {
        let width = mask.width;
        let mut rows: Vec<Vec<(u32, u32, u32)>> = vec![Vec::new(); mask.height as usize];
        let mut pos: u64 = 0;
        let mut value = false;
        for &run in &mask.rle {
            if value && run > 0 && width > 0 {
                let mut start = pos;
                let end = pos + u64::from(run);
                while start < end {
                    let row = (start / u64::from(width)) as usize;
                    let row_end = (row as u64 + 1) * u64::from(width);
                    let stop = end.min(row_end);
                    let c0 = (start - row as u64 * u64::from(width)) as u32;
                    let c1 = (stop - row as u64 * u64::from(width)) as u32;
                    let before = rows[row].last().map(|&(s, e, b)| b + (e - s)).unwrap_or(0);
                    rows[row].push((c0, c1, before));
                    start = stop;
                }
            }
            pos += u64::from(run);
            value = !value;
        }
        RowRuns {
            width,
            height: mask.height,
            rows,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Foreground cells in row `row` with column in `[c0, c1)`.
    fn row_count(&self, row: usize, c0: u32, c1: u32) -> u32 {
        let runs = &self.rows[row];
        prefix(runs, c1) - prefix(runs, c0)
    }

    /// Foreground cells in the cell rectangle `[c0, c1) x [r0, r1)`, clipped to the raster.
    pub fn count(&self, c0: u32, c1: u32, r0: u32, r1: u32) -> u64 {
        let c1 = c1.min(self.width);
        let r1 = r1.min(self.height);
        if c0 >= c1 || r0 >= r1 {
            return 0;
        }
        (r0..r1)
            .map(|r| u64::from(self.row_count(r as usize, c0, c1)))
            .sum()
    }
}

/// Foreground cells strictly before column `c` in a row.
fn prefix(runs: &[(u32, u32, u32)], c: u32) -> u32 {
    // first interval whose end is > c
    let idx = runs.partition_point(|&(_, end, _)| end <= c);
    match runs.get(idx) {
        None => runs.last().map(|&(s, e, b)| b + (e - s)).unwrap_or(0),
        Some(&(start, _, before)) => before + c.saturating_sub(start),
    }
}
