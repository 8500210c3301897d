use anyhow::{bail, Context, Result};
use depthkit::io::{read_pfm, read_pgm16, PfmContent};
use depthkit::DepthMap;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// One prediction/ground-truth pair matched by file stem.
pub struct Pair {
    pub stem: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

fn is_depth_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("pfm") | Some("pgm")
    )
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut by_stem = BTreeMap::new();
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() || !is_depth_file(&path) {
            continue;
        }
        let Some(stem) = stem_of(&path) else { continue };
        if let Some(previous) = by_stem.insert(stem.clone(), path.clone()) {
            bail!(
                "ambiguous stem {:?} in {}: {} vs {}",
                stem,
                dir.display(),
                previous.display(),
                path.display()
            );
        }
    }
    Ok(by_stem)
}

/// Matches prediction files to ground-truth files by identical stem.
///
/// Both paths must be two files or two directories. Directory pairing scans
/// for .pfm/.pgm files and fails if either side has stems the other lacks,
/// naming all of them. Pairs come back sorted by stem, which fixes the order
/// of every downstream report.
pub fn collect_pairs(pred: &Path, gt: &Path) -> Result<Vec<Pair>> {
    if pred.is_file() && gt.is_file() {
        let stem = stem_of(pred).unwrap_or_else(|| "pair".to_owned());
        return Ok(vec![Pair {
            stem,
            pred: pred.to_owned(),
            gt: gt.to_owned(),
        }]);
    }
    if !(pred.is_dir() && gt.is_dir()) {
        bail!(
            "--pred and --gt must both be files or both be directories (got {} and {})",
            pred.display(),
            gt.display()
        );
    }
    let preds = index_dir(pred)?;
    let gts = index_dir(gt)?;
    let only_pred: Vec<&str> = preds
        .keys()
        .filter(|s| !gts.contains_key(*s))
        .map(String::as_str)
        .collect();
    let only_gt: Vec<&str> = gts
        .keys()
        .filter(|s| !preds.contains_key(*s))
        .map(String::as_str)
        .collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        bail!(
            "unmatched file stems: missing from --gt: [{}]; missing from --pred: [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        );
    }
    if preds.is_empty() {
        bail!("no .pfm or .pgm files found in {}", pred.display());
    }
    Ok(preds
        .into_iter()
        .map(|(stem, pred_path)| {
            let gt_path = gts[&stem].clone();
            Pair {
                stem,
                pred: pred_path,
                gt: gt_path,
            }
        })
        .collect())
}

/// Reads one depth map, dispatching on the file extension. PGM samples are
/// multiplied by `pgm_scale` to get meters.
pub fn load_depth(path: &Path, pgm_scale: f64) -> Result<DepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pfm") => match read_pfm(&bytes).with_context(|| format!("parsing {}", path.display()))? {
            PfmContent::Depth(map) => Ok(map),
            PfmContent::Normals(_) => bail!(
                "{} holds a 3-channel normal field, expected single-channel depth",
                path.display()
            ),
        },
        Some("pgm") => read_pgm16(&bytes, pgm_scale)
            .with_context(|| format!("parsing {}", path.display())),
        _ => bail!(
            "{}: unsupported extension, expected .pfm or .pgm",
            path.display()
        ),
    }
}

/// Folds the base seed and a file stem into one per-file seed (FNV-1a over
/// the seed bytes then the stem bytes). Each file gets the same stream no
/// matter how files are batched or scheduled across threads.
pub fn stem_seed(base_seed: u64, stem: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for byte in base_seed.to_le_bytes().into_iter().chain(stem.bytes()) {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Runs `work` over all pairs, in parallel when the `parallel` feature is on.
/// Results always come back in input order.
#[cfg(feature = "parallel")]
pub fn process_pairs<T: Send>(pairs: &[Pair], work: impl Fn(&Pair) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    pairs.par_iter().map(work).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn process_pairs<T>(pairs: &[Pair], work: impl Fn(&Pair) -> T) -> Vec<T> {
    pairs.iter().map(work).collect()
}
