//! CSV files exchanged between pipeline stages.
//!
//! Floats are written in Rust's shortest round-trip notation, so reading a
//! file back yields bit-identical values. Infinite thresholds appear as
//! `inf`.

use std::fs::File;
use std::path::Path;

use tcfa_core::cnn::TrainLog;
use tcfa_core::eval::RocCurve;
use tcfa_core::features::{FeatureMatrix, FeatureRow, NormalizationParams};
use tcfa_core::selection::{FeatureRanking, RankedFeature};
use tcfa_core::sweep::SweepPoint;
use tcfa_core::synth::ManifestEntry;
use tcfa_core::Class;

use crate::error::{FormatError, FormatResult};

fn writer(path: &Path) -> FormatResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn reader(path: &Path) -> FormatResult<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> FormatError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::io(path, io),
        other => FormatError::parse(path, format!("{other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> FormatResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Header and records of a CSV file, checking the header against `expected`
/// when given.
fn read_rows(path: &Path, expected: Option<&[&str]>) -> FormatResult<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = reader(path)?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    if let Some(exp) = expected {
        if header != exp {
            return Err(FormatError::parse(path, format!("header {header:?}, expected {exp:?}")));
        }
    }
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> FormatResult<T> {
    field.trim().parse().map_err(|_| FormatError::parse(path, format!("record {line}: cannot parse {field:?}")))
}

fn label(path: &Path, line: usize, field: &str) -> FormatResult<Class> {
    let bit: u8 = num(path, line, field)?;
    Class::from_bit(bit).map_err(|e| FormatError::core(path, e))
}

fn feature_name(id: usize) -> String {
    format!("F{id}")
}

fn parse_feature_name(path: &Path, name: &str) -> FormatResult<usize> {
    name.strip_prefix('F')
        .and_then(|n| n.parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| FormatError::parse(path, format!("column {name:?} is not a feature name")))
}

/// `id,label,F..` with one row per frame.
pub fn write_features(path: &Path, m: &FeatureMatrix) -> FormatResult<()> {
    let mut header = vec!["id".to_owned(), "label".to_owned()];
    header.extend(m.feature_ids().iter().map(|&f| feature_name(f)));
    write_rows(
        path,
        &header,
        m.rows().iter().map(|r| {
            [r.id.clone(), r.class.bit().to_string()].into_iter().chain(r.values.iter().map(f64::to_string))
        }),
    )
}

pub fn read_features(path: &Path) -> FormatResult<FeatureMatrix> {
    let (header, records) = read_rows(path, None)?;
    if header.len() < 3 || header[0] != "id" || header[1] != "label" {
        return Err(FormatError::parse(path, "expected header id,label,F.."));
    }
    let ids = header[2..].iter().map(|h| parse_feature_name(path, h)).collect::<FormatResult<Vec<_>>>()?;
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            if rec.len() != header.len() {
                return Err(FormatError::parse(path, format!("record {} has {} fields", i + 1, rec.len())));
            }
            Ok(FeatureRow {
                id: rec[0].to_owned(),
                class: label(path, i + 1, &rec[1])?,
                values: rec.iter().skip(2).map(|v| num(path, i + 1, v)).collect::<FormatResult<_>>()?,
            })
        })
        .collect::<FormatResult<Vec<_>>>()?;
    FeatureMatrix::new(ids, rows).map_err(|e| FormatError::core(path, e))
}

/// Two rows, `min` and `max`, under a `stat,F..` header.
pub fn write_normalization(path: &Path, feature_ids: &[usize], p: &NormalizationParams) -> FormatResult<()> {
    let mut header = vec!["stat".to_owned()];
    header.extend(feature_ids.iter().map(|&f| feature_name(f)));
    let row = |name: &str, v: &[f64]| std::iter::once(name.to_owned()).chain(v.iter().map(f64::to_string)).collect::<Vec<_>>();
    write_rows(path, &header, [row("min", &p.min), row("max", &p.max)])
}

/// Feature ids and parameters.
pub fn read_normalization(path: &Path) -> FormatResult<(Vec<usize>, NormalizationParams)> {
    let (header, records) = read_rows(path, None)?;
    if header.first().map(String::as_str) != Some("stat") {
        return Err(FormatError::parse(path, "expected header stat,F.."));
    }
    let ids = header[1..].iter().map(|h| parse_feature_name(path, h)).collect::<FormatResult<Vec<_>>>()?;
    let mut min = None;
    let mut max = None;
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(FormatError::parse(path, format!("record {} has {} fields", i + 1, rec.len())));
        }
        let values: Vec<f64> = rec.iter().skip(1).map(|v| num(path, i + 1, v)).collect::<FormatResult<_>>()?;
        match &rec[0] {
            "min" if min.is_none() => min = Some(values),
            "max" if max.is_none() => max = Some(values),
            other => return Err(FormatError::parse(path, format!("unexpected row {other:?}"))),
        }
    }
    match (min, max) {
        (Some(min), Some(max)) => Ok((ids, NormalizationParams { min, max })),
        _ => Err(FormatError::parse(path, "need one min row and one max row")),
    }
}

const RANKING_HEADER: [&str; 4] = ["rank", "feature", "score", "share_pct"];

/// `rank,feature,score,share_pct`; features are written as `F<id>`.
pub fn write_ranking(path: &Path, ranking: &FeatureRanking) -> FormatResult<()> {
    write_rows(
        path,
        &RANKING_HEADER.map(String::from),
        ranking.entries.iter().enumerate().map(|(i, e)| {
            [(i + 1).to_string(), feature_name(e.feature), e.score.to_string(), e.share_pct.to_string()]
        }),
    )
}

/// Reads a ranking back. Column positions are recovered from
/// `feature_ids`, the columns of the matrix the ranking will be applied to.
pub fn read_ranking(path: &Path, feature_ids: &[usize]) -> FormatResult<FeatureRanking> {
    let (_, records) = read_rows(path, Some(&RANKING_HEADER))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let rank: usize = num(path, i + 1, &rec[0])?;
        if rank != i + 1 {
            return Err(FormatError::parse(path, format!("record {} has rank {rank}", i + 1)));
        }
        let feature = parse_feature_name(path, &rec[1])?;
        let column = feature_ids
            .iter()
            .position(|&f| f == feature)
            .ok_or_else(|| FormatError::parse(path, format!("F{feature} is not a column of the matrix")))?;
        entries.push(RankedFeature {
            feature,
            column,
            score: num(path, i + 1, &rec[2])?,
            share_pct: num(path, i + 1, &rec[3])?,
        });
    }
    let all_zero = entries.iter().all(|e| e.score == 0.0);
    Ok(FeatureRanking { entries, all_zero })
}

pub fn write_roc(path: &Path, curve: &RocCurve) -> FormatResult<()> {
    write_rows(
        path,
        &["threshold", "fpr", "tpr"].map(String::from),
        curve.points.iter().map(|p| [p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()]),
    )
}

/// `(threshold, fpr, tpr)` triples.
pub fn read_roc(path: &Path) -> FormatResult<Vec<(f64, f64, f64)>> {
    let (_, records) = read_rows(path, Some(&["threshold", "fpr", "tpr"]))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| Ok((num(path, i + 1, &r[0])?, num(path, i + 1, &r[1])?, num(path, i + 1, &r[2])?)))
        .collect()
}

pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> FormatResult<()> {
    write_rows(path, &["n", "auc"].map(String::from), points.iter().map(|p| [p.n.to_string(), p.auc.to_string()]))
}

pub fn read_sweep(path: &Path) -> FormatResult<Vec<SweepPoint>> {
    let (_, records) = read_rows(path, Some(&["n", "auc"]))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(SweepPoint { n: num(path, i + 1, &r[0])?, auc: num(path, i + 1, &r[1])? }))
        .collect()
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> FormatResult<()> {
    write_rows(
        path,
        &["epoch", "train_loss", "val_loss", "val_acc", "lr"].map(String::from),
        log.epochs.iter().map(|e| {
            [e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string(), e.val_acc.to_string(), e.lr.to_string()]
        }),
    )
}

/// Per-epoch mean training loss of a feature network with its learning rate.
pub fn write_fnn_log(path: &Path, losses: &[f64], lr0: f64, decay: f64) -> FormatResult<()> {
    write_rows(
        path,
        &["epoch", "train_loss", "lr"].map(String::from),
        losses.iter().enumerate().map(|(i, l)| [(i + 1).to_string(), l.to_string(), (lr0 * decay.powi(i as i32)).to_string()]),
    )
}

const MANIFEST_HEADER: [&str; 4] = ["id", "label", "seed", "index"];

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> FormatResult<()> {
    write_rows(
        path,
        &MANIFEST_HEADER.map(String::from),
        entries.iter().map(|e| [e.id.clone(), e.class.bit().to_string(), e.seed.to_string(), e.index.to_string()]),
    )
}

/// Manifest rows as `(id, class)`. The `seed` and `index` columns may be
/// left empty for frames that did not come from the phantom generator.
pub fn read_manifest(path: &Path) -> FormatResult<Vec<(String, Class)>> {
    let (_, records) = read_rows(path, Some(&MANIFEST_HEADER))?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r[0].is_empty() || r[0].contains(['/', '\\']) {
                return Err(FormatError::parse(path, format!("record {}: bad id {:?}", i + 1, &r[0])));
            }
            Ok((r[0].to_owned(), label(path, i + 1, &r[1])?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcfa_core::eval::roc_curve;

    #[test]
    fn feature_csv_round_trips_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let rows = vec![
            FeatureRow { id: "a".into(), class: Class::Tcfa, values: vec![0.1 + 0.2, 1e-300, 1.0 / 3.0] },
            FeatureRow { id: "b".into(), class: Class::Normal, values: vec![0.0, 5e-324, 12345.678901234567] },
        ];
        let m = FeatureMatrix::new(vec![1, 7, 105], rows).unwrap();
        write_features(&p, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,label,F1,F7,F105\n"));
        assert_eq!(read_features(&p).unwrap(), m);
    }

    #[test]
    fn normalization_and_ranking_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        let params = NormalizationParams { min: vec![0.0, 0.25], max: vec![1.0, 0.75] };
        write_normalization(&p, &[3, 9], &params).unwrap();
        assert_eq!(read_normalization(&p).unwrap(), (vec![3, 9], params));

        let ranking = tcfa_core::selection::rank_scores(&[1.0, 3.0, 2.0], &[4, 5, 6]);
        let r = dir.path().join("r.csv");
        write_ranking(&r, &ranking).unwrap();
        assert!(std::fs::read_to_string(&r).unwrap().starts_with("rank,feature,score,share_pct\n1,F5,3,50\n"));
        assert_eq!(read_ranking(&r, &[4, 5, 6]).unwrap(), ranking);
        assert!(read_ranking(&r, &[4, 5]).is_err());
    }

    #[test]
    fn roc_keeps_infinite_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.csv");
        let curve = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[Class::Normal, Class::Normal, Class::Tcfa, Class::Tcfa]).unwrap();
        write_roc(&p, &curve).unwrap();
        let back = read_roc(&p).unwrap();
        assert_eq!(back.len(), curve.points.len());
        assert_eq!(back[0].0, f64::INFINITY);
        assert!(back.iter().zip(&curve.points).all(|(b, p)| *b == (p.threshold, p.fpr, p.tpr)));
    }

    #[test]
    fn manifest_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,label,seed,index\na,1,,\nb,0,4,2\n").unwrap();
        assert_eq!(read_manifest(&p).unwrap(), vec![("a".into(), Class::Tcfa), ("b".into(), Class::Normal)]);
        std::fs::write(&p, "id,label,seed,index\na,2,,\n").unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, "id,label,seed,index\n../x,1,,\n").unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, "id,class\na,1\n").unwrap();
        assert!(read_manifest(&p).is_err());
    }

    #[test]
    fn sweep_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let pts = vec![SweepPoint { n: 1, auc: 0.5 }, SweepPoint { n: 2, auc: 0.91234567891234 }];
        write_sweep(&p, &pts).unwrap();
        assert_eq!(read_sweep(&p).unwrap(), pts);
    }
}
