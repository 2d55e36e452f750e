//! Rejection filter over salient ratio and occlusion.

use super::{BannerRecord, FilterCriteria};
use crate::metrics::{occlusion, salient_ratio};

/// True iff the record's salient ratio lies inside the criteria band and its
/// occlusion (fraction, not x100) is below the bound. Pure function.
pub fn filter_record(record: &BannerRecord, criteria: &FilterCriteria) -> bool {
    let ratio = salient_ratio(&record.saliency) as f32;
    if ratio < criteria.salient_ratio_min || ratio > criteria.salient_ratio_max {
        return false;
    }
    let occ = (occlusion(&record.elements, &record.saliency) / 100.0) as f32;
    occ < criteria.occlusion_max
}
