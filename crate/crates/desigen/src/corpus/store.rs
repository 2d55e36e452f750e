//! Corpus persistence: per-record PNG/JSON triplets plus a checksummed
//! manifest, and rejection-sampled corpus construction.
//!
//! Layout on disk:
//! ```text
//! <root>/records/<id>.png        background, 8-bit RGB
//! <root>/records/<id>.sal.png    saliency, 8-bit grayscale
//! <root>/records/<id>.meta.json  prompt, elements, split, canvas
//! <root>/manifest.json           ids, criteria, seed, checksums, stats
//! ```

use super::{filter_record, BannerRecord, FilterCriteria, LayoutElement, Split, StyleSpace};
use crate::error::{DesigenError, Result};
use crate::raster;
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const MANIFEST_VERSION: u32 = 1;
/// Stop and report an infeasible style space once acceptance drops below 1%.
const MIN_ACCEPT_RATE: f64 = 0.01;
const FEASIBILITY_WINDOW: usize = 1000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CanvasSize {
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RecordMeta {
    pub id: String,
    pub prompt: String,
    pub split: Split,
    pub canvas: CanvasSize,
    pub elements: Vec<LayoutElement>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RejectionStats {
    pub candidates: usize,
    pub accepted: usize,
    pub placement_failures: usize,
}

impl RejectionStats {
    pub fn rejection_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            1.0 - self.accepted as f64 / self.candidates as f64
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub n: usize,
    pub canvas: CanvasSize,
    pub criteria: FilterCriteria,
    pub split_fracs: [f64; 3],
    pub ids: Vec<String>,
    pub splits: BTreeMap<String, Split>,
    pub checksums: BTreeMap<String, String>,
    pub corpus_checksum: String,
    pub rejection: RejectionStats,
}

fn records_dir(root: &Path) -> PathBuf {
    root.join("records")
}

fn meta_path(root: &Path, id: &str) -> PathBuf {
    records_dir(root).join(format!("{id}.meta.json"))
}

/// Writes the record triplet; returns the record's content checksum.
pub fn write_record(record: &BannerRecord, root: &Path, id: &str) -> Result<String> {
    let dir = records_dir(root);
    std::fs::create_dir_all(&dir).map_err(|e| DesigenError::io(dir.display().to_string(), e))?;
    let img_path = dir.join(format!("{id}.png"));
    let sal_path = dir.join(format!("{id}.sal.png"));
    raster::save_rgb(&record.image, &img_path)?;
    raster::save_gray(&record.saliency, &sal_path)?;
    let meta = RecordMeta {
        id: id.to_string(),
        prompt: record.prompt.clone(),
        split: record.split,
        canvas: CanvasSize { h: record.saliency.dim().0, w: record.saliency.dim().1 },
        elements: record.elements.clone(),
    };
    let meta_p = meta_path(root, id);
    let mut bytes = serde_json::to_vec_pretty(&meta)
        .map_err(|e| DesigenError::Internal(format!("meta encode: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&meta_p, &bytes).map_err(|e| DesigenError::io(meta_p.display().to_string(), e))?;
    record_checksum(root, id)
}

fn record_checksum(root: &Path, id: &str) -> Result<String> {
    let dir = records_dir(root);
    let mut hasher = Sha256::new();
    for name in [format!("{id}.png"), format!("{id}.sal.png"), format!("{id}.meta.json")] {
        let p = dir.join(&name);
        let bytes = std::fs::read(&p).map_err(|e| DesigenError::io(p.display().to_string(), e))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn schema_err(path: &Path, detail: impl Into<String>) -> DesigenError {
    DesigenError::SchemaViolation { path: path.display().to_string(), detail: detail.into() }
}

/// Reads one record triplet back; schema violations name the offending field.
pub fn read_record(root: &Path, id: &str) -> Result<BannerRecord> {
    let meta_p = meta_path(root, id);
    let bytes = std::fs::read(&meta_p).map_err(|e| DesigenError::io(meta_p.display().to_string(), e))?;
    let meta: RecordMeta =
        serde_json::from_slice(&bytes).map_err(|e| schema_err(&meta_p, e.to_string()))?;
    if meta.prompt.trim().is_empty() {
        return Err(schema_err(&meta_p, "field `prompt` must be non-empty"));
    }
    for (i, e) in meta.elements.iter().enumerate() {
        e.validate()
            .map_err(|err| schema_err(&meta_p, format!("field `elements[{i}]`: {err}")))?;
    }
    let dir = records_dir(root);
    let image = raster::load_rgb(&dir.join(format!("{id}.png")))?;
    let saliency = raster::load_gray(&dir.join(format!("{id}.sal.png")))?;
    if (image.shape()[1], image.shape()[2]) != (meta.canvas.h, meta.canvas.w) {
        return Err(schema_err(&meta_p, "field `canvas` does not match image dimensions"));
    }
    if saliency.dim() != (meta.canvas.h, meta.canvas.w) {
        return Err(schema_err(&meta_p, "saliency dimensions do not match field `canvas`"));
    }
    let record = BannerRecord {
        image,
        saliency,
        elements: meta.elements,
        prompt: meta.prompt,
        split: meta.split,
    };
    record.validate().map_err(|e| schema_err(&meta_p, e.to_string()))?;
    Ok(record)
}

/// Largest-remainder apportionment of `n` into the three split fractions.
fn split_targets(n: usize, fracs: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rem: usize = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor()).partial_cmp(&(raw[a] - raw[a].floor())).unwrap()
    });
    for &i in order.iter().cycle().take(3 * 2) {
        if rem == 0 {
            break;
        }
        counts[i] += 1;
        rem -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Builds a corpus by rejection sampling until `n` records pass the filter.
/// Deterministic in `seed`: per-record seeds derive from (seed, candidate
/// index) and splits are assigned by hash order, so rebuilding reproduces the
/// manifest checksum bit-for-bit.
pub fn build_corpus(
    root: &Path,
    n: usize,
    criteria: &FilterCriteria,
    split_fracs: [f64; 3],
    seed: u64,
    canvas: (usize, usize),
    space: &StyleSpace,
) -> Result<CorpusManifest> {
    criteria.validate()?;
    let frac_sum: f64 = split_fracs.iter().sum();
    if (frac_sum - 1.0).abs() > 1e-6 {
        return Err(DesigenError::InvalidArgument(format!(
            "split fractions must sum to 1, got {frac_sum}"
        )));
    }
    if n == 0 {
        return Err(DesigenError::InvalidArgument("corpus size must be positive".into()));
    }
    let mut accepted: Vec<BannerRecord> = Vec::with_capacity(n);
    let mut candidates = 0usize;
    let mut placement_failures = 0usize;
    const BLOCK: usize = 64;
    while accepted.len() < n {
        let base = candidates;
        let block: Vec<(usize, Result<BannerRecord>)> = (0..BLOCK)
            .into_par_iter()
            .map(|k| {
                let idx = base + k;
                (idx, super::synth_record(derive_seed(seed, "record", idx as u64), canvas, space))
            })
            .collect();
        for (_, res) in block {
            candidates += 1;
            match res {
                Ok(rec) => {
                    if filter_record(&rec, criteria) && accepted.len() < n {
                        accepted.push(rec);
                    }
                }
                Err(DesigenError::PlacementFailure(_)) => placement_failures += 1,
                Err(e) => return Err(e),
            }
        }
        if candidates >= FEASIBILITY_WINDOW {
            let rate = accepted.len() as f64 / candidates as f64;
            if rate < MIN_ACCEPT_RATE {
                return Err(DesigenError::InfeasibleStyleSpace(format!(
                    "acceptance rate {:.4} after {candidates} candidates",
                    rate
                )));
            }
        }
    }
    accepted.truncate(n);

    // split assignment: order records by hash(seed, index), then apportion
    let targets = split_targets(n, split_fracs);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (derive_seed(seed, "split", i as u64), i));
    for (rank, &i) in order.iter().enumerate() {
        accepted[i].split = if rank < targets[0] {
            Split::Train
        } else if rank < targets[0] + targets[1] {
            Split::Val
        } else {
            Split::Test
        };
    }

    std::fs::create_dir_all(root).map_err(|e| DesigenError::io(root.display().to_string(), e))?;
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:06}")).collect();
    let checksums: Vec<String> = accepted
        .par_iter()
        .zip(ids.par_iter())
        .map(|(rec, id)| write_record(rec, root, id))
        .collect::<Result<Vec<_>>>()?;

    let mut checksum_map = BTreeMap::new();
    let mut splits = BTreeMap::new();
    let mut corpus_hasher = Sha256::new();
    for (i, id) in ids.iter().enumerate() {
        checksum_map.insert(id.clone(), checksums[i].clone());
        splits.insert(id.clone(), accepted[i].split);
        corpus_hasher.update(id.as_bytes());
        corpus_hasher.update(checksums[i].as_bytes());
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        seed,
        n,
        canvas: CanvasSize { h: canvas.0, w: canvas.1 },
        criteria: *criteria,
        split_fracs,
        ids,
        splits,
        checksums: checksum_map,
        corpus_checksum: hex::encode(corpus_hasher.finalize()),
        rejection: RejectionStats { candidates, accepted: n, placement_failures },
    };
    let manifest_path = root.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DesigenError::Internal(format!("manifest encode: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&manifest_path, &bytes)
        .map_err(|e| DesigenError::io(manifest_path.display().to_string(), e))?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<CorpusManifest> {
    let p = root.join("manifest.json");
    let bytes = std::fs::read(&p).map_err(|e| DesigenError::io(p.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| schema_err(&p, e.to_string()))
}

/// Loads the whole corpus, re-validating every record against the manifest
/// criteria and split assignment.
pub fn load_corpus(root: &Path) -> Result<(CorpusManifest, Vec<(String, BannerRecord)>)> {
    let manifest = load_manifest(root)?;
    let records: Vec<(String, BannerRecord)> = manifest
        .ids
        .par_iter()
        .map(|id| {
            let rec = read_record(root, id)?;
            if !filter_record(&rec, &manifest.criteria) {
                return Err(schema_err(
                    &meta_path(root, id),
                    "record no longer satisfies the corpus filter criteria",
                ));
            }
            if manifest.splits.get(id) != Some(&rec.split) {
                return Err(schema_err(&meta_path(root, id), "field `split` disagrees with manifest"));
            }
            Ok((id.clone(), rec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusStats {
    pub n: usize,
    pub split_counts: BTreeMap<String, usize>,
    pub mean_salient_ratio: f64,
    pub mean_occlusion: f64,
    pub mean_elements: f64,
    pub rejection_rate: f64,
}

pub fn corpus_stats(root: &Path) -> Result<CorpusStats> {
    let (manifest, records) = load_corpus(root)?;
    let mut split_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut ratio = 0.0;
    let mut occ = 0.0;
    let mut elems = 0.0;
    for (_, rec) in &records {
        *split_counts.entry(rec.split.as_str().to_string()).or_insert(0) += 1;
        ratio += crate::metrics::salient_ratio(&rec.saliency);
        occ += crate::metrics::occlusion(&rec.elements, &rec.saliency);
        elems += rec.elements.len() as f64;
    }
    let n = records.len().max(1) as f64;
    Ok(CorpusStats {
        n: records.len(),
        split_counts,
        mean_salient_ratio: ratio / n,
        mean_occlusion: occ / n,
        mean_elements: elems / n,
        rejection_rate: manifest.rejection.rejection_rate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_record() {
        let rec = super::super::synth_record(5, (64, 64), &StyleSpace::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_record(&rec, dir.path(), "r000000").unwrap();
        let back = read_record(dir.path(), "r000000").unwrap();
        // synth quantizes to the 8-bit grid, so the round-trip is exact
        assert_eq!(rec.image, back.image);
        assert_eq!(rec.saliency, back.saliency);
        assert_eq!(rec.elements, back.elements);
        assert_eq!(rec.prompt, back.prompt);
    }

    #[test]
    fn truncated_meta_is_schema_violation() {
        let rec = super::super::synth_record(5, (64, 64), &StyleSpace::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_record(&rec, dir.path(), "r000000").unwrap();
        let p = meta_path(dir.path(), "r000000");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            read_record(dir.path(), "r000000"),
            Err(DesigenError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn missing_field_names_it() {
        let rec = super::super::synth_record(6, (64, 64), &StyleSpace::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_record(&rec, dir.path(), "r000000").unwrap();
        let p = meta_path(dir.path(), "r000000");
        let text = std::fs::read_to_string(&p).unwrap().replace("\"prompt\"", "\"promptx\"");
        std::fs::write(&p, text).unwrap();
        match read_record(dir.path(), "r000000") {
            Err(DesigenError::SchemaViolation { detail, .. }) => {
                assert!(detail.contains("prompt"), "detail should name the field: {detail}");
            }
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn build_small_corpus_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_corpus(
            dir.path(),
            20,
            &FilterCriteria::default(),
            [0.8, 0.1, 0.1],
            9,
            (32, 32),
            &StyleSpace::default(),
        )
        .unwrap();
        assert_eq!(manifest.ids.len(), 20);
        let counts = [Split::Train, Split::Val, Split::Test]
            .map(|s| manifest.splits.values().filter(|&&v| v == s).count());
        assert_eq!(counts, [16, 2, 2]);
        let (_, records) = load_corpus(dir.path()).unwrap();
        assert_eq!(records.len(), 20);
        for (_, rec) in &records {
            assert!(filter_record(rec, &manifest.criteria));
        }
    }

    #[test]
    fn rebuild_reproduces_checksum() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let space = StyleSpace::default();
        let m1 = build_corpus(d1.path(), 8, &FilterCriteria::default(), [0.5, 0.25, 0.25], 3, (32, 32), &space)
            .unwrap();
        let m2 = build_corpus(d2.path(), 8, &FilterCriteria::default(), [0.5, 0.25, 0.25], 3, (32, 32), &space)
            .unwrap();
        assert_eq!(m1.corpus_checksum, m2.corpus_checksum);
        assert_eq!(m1, m2);
    }

    #[test]
    fn infeasible_space_is_reported() {
        // zero objects -> salient ratio 0 -> nothing can pass the 0.05 floor
        let dir = tempfile::tempdir().unwrap();
        let err = build_corpus(
            dir.path(),
            5,
            &FilterCriteria::default(),
            [1.0, 0.0, 0.0],
            1,
            (32, 32),
            &StyleSpace::background_only(),
        );
        assert!(matches!(err, Err(DesigenError::InfeasibleStyleSpace(_))));
    }

    #[test]
    fn split_targets_apportion_exactly() {
        assert_eq!(split_targets(100, [0.8, 0.1, 0.1]), [80, 10, 10]);
        assert_eq!(split_targets(10, [0.34, 0.33, 0.33]), [4, 3, 3]);
        assert_eq!(split_targets(1, [0.8, 0.1, 0.1]), [1, 0, 0]);
    }
}
