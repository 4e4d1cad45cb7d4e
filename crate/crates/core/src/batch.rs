//! Parallel indicator computation over a road network.

use rayon::prelude::*;

use crate::geometry::{assign_segment_to_sheet, RoadSegment, SheetFootprint};
use crate::raster::GeoRaster;
use crate::roi::{compute_roi_traced, RoiOptions, RoiRecord, RoiTrace};

/// A map sheet with the polygon used for segment assignment.
#[derive(Debug, Clone)]
pub struct Sheet {
    pub raster: GeoRaster,
    pub footprint: SheetFootprint,
}

impl Sheet {
    /// Sheet whose footprint is the full raster extent.
    pub fn from_raster(raster: GeoRaster) -> crate::geometry::Result<Self> {
        let footprint = raster.footprint()?;
        Ok(Self { raster, footprint })
    }
}

pub fn thread_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to start worker threads")
}

fn one(segment: &RoadSegment, sheets: &[Sheet], footprints: &[SheetFootprint], opts: &RoiOptions, epoch_year: i32) -> (RoiRecord, Option<RoiTrace>) {
    let Some(sheet_id) = assign_segment_to_sheet(segment, footprints) else {
        return (RoiRecord::unassigned(segment.id(), epoch_year), None);
    };
    let sheet = sheets
        .iter()
        .find(|s| s.footprint.sheet_id == sheet_id)
        .expect("footprint belongs to a sheet");
    match compute_roi_traced(segment, &sheet.raster, opts, epoch_year) {
        Ok(trace) => (trace.record.clone(), Some(trace)),
        Err(e) => {
            log::warn!("segment {}: {e}", segment.id());
            let mut rec = RoiRecord::unassigned(segment.id(), epoch_year);
            rec.sheet_id = Some(sheet_id.to_string());
            rec.map_year = sheet.raster.epoch_year;
            (rec, None)
        }
    }
}

/// Indicator records for every segment, sorted by segment id. Segments
/// outside all sheets get an invalid record without a sheet.
pub fn roi_batch(
    segments: &[RoadSegment],
    sheets: &[Sheet],
    opts: &RoiOptions,
    epoch_year: i32,
    pool: &rayon::ThreadPool,
) -> Vec<RoiRecord> {
    let footprints: Vec<SheetFootprint> = sheets.iter().map(|s| s.footprint.clone()).collect();
    let mut records: Vec<RoiRecord> = pool.install(|| {
        segments
            .par_iter()
            .map(|seg| one(seg, sheets, &footprints, opts, epoch_year).0)
            .collect()
    });
    records.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    records
}

/// Like [`roi_batch`] but keeps the intermediate images, for debug dumps.
pub fn roi_batch_traced(
    segments: &[RoadSegment],
    sheets: &[Sheet],
    opts: &RoiOptions,
    epoch_year: i32,
    pool: &rayon::ThreadPool,
) -> Vec<(RoiRecord, Option<RoiTrace>)> {
    let footprints: Vec<SheetFootprint> = sheets.iter().map(|s| s.footprint.clone()).collect();
    let mut out: Vec<(RoiRecord, Option<RoiTrace>)> = pool.install(|| {
        segments
            .par_iter()
            .map(|seg| one(seg, sheets, &footprints, opts, epoch_year))
            .collect()
    });
    out.sort_by(|a, b| a.0.segment_id.cmp(&b.0.segment_id));
    out
}
