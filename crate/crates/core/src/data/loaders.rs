//! File-format loaders: MovieLens rating lines, Last.FM event logs,
//! and the item-metadata sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{ItemMeta, RawInteraction};
use crate::error::{Error, Result};

/// Parse outcome bookkeeping; callers decide how to surface warnings.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub lines: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub first_malformed: Option<(usize, String)>,
}

impl LoadReport {
    fn note_malformed(&mut self, line_no: usize, reason: String) {
        self.malformed += 1;
        if self.first_malformed.is_none() {
            self.first_malformed = Some((line_no, reason));
        }
    }

    /// More than 1% malformed lines means the file is the wrong format.
    fn check_threshold(&self) -> Result<()> {
        if self.lines > 0 && self.malformed as f64 > self.lines as f64 * 0.01 {
            let (line, reason) = self
                .first_malformed
                .clone()
                .unwrap_or((0, "unknown".into()));
            return Err(Error::Format {
                line,
                message: format!(
                    "{} of {} lines malformed (first: {reason})",
                    self.malformed, self.lines
                ),
            });
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Load `user::item::rating::timestamp` lines. Every rated item is a
/// positive; ratings are kept as values for provenance only.
pub fn load_movielens(path: &Path) -> Result<(Vec<RawInteraction>, LoadReport)> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut report = LoadReport::default();
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        report.lines += 1;
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            report.note_malformed(line_no, format!("expected 4 '::' fields, got {}", fields.len()));
            continue;
        }
        let value: f64 = match fields[2].parse() {
            Ok(v) if v >= 0.0 => v,
            _ => {
                report.note_malformed(line_no, format!("bad rating '{}'", fields[2]));
                continue;
            }
        };
        let timestamp: i64 = match fields[3].trim().parse() {
            Ok(t) => t,
            Err(_) => {
                report.note_malformed(line_no, format!("bad timestamp '{}'", fields[3]));
                continue;
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            report.note_malformed(line_no, "empty user or item id".into());
            continue;
        }
        out.push(RawInteraction {
            user_id: fields[0].to_owned(),
            item_id: fields[1].to_owned(),
            value,
            timestamp: Some(timestamp),
        });
        report.parsed += 1;
    }
    report.check_threshold()?;
    Ok((out, report))
}

/// Column indices into a tab-separated Last.FM event log.
#[derive(Clone, Copy, Debug)]
pub struct LastFmColumns {
    pub user: usize,
    pub artist: usize,
}

impl Default for LastFmColumns {
    fn default() -> Self {
        // user-id \t timestamp \t artist-id \t artist-name \t ...
        LastFmColumns { user: 0, artist: 2 }
    }
}

/// Aggregate Last.FM events at the artist level: one interaction per
/// (user, artist) pair, valued by its event count.
pub fn load_lastfm(
    path: &Path,
    columns: &LastFmColumns,
) -> Result<(Vec<RawInteraction>, LoadReport)> {
    let lines = read_lines(path)?;
    let needed = columns.user.max(columns.artist) + 1;
    let mut report = LoadReport::default();
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < needed {
            report.note_malformed(line_no, format!("expected ≥{needed} tab fields, got {}", fields.len()));
            continue;
        }
        let user = fields[columns.user].trim();
        let artist = fields[columns.artist].trim();
        if user.is_empty() || artist.is_empty() {
            report.note_malformed(line_no, "empty user or artist".into());
            continue;
        }
        let key = (user.to_owned(), artist.to_owned());
        match counts.get_mut(&key) {
            Some(c) => *c += 1,
            None => {
                counts.insert(key.clone(), 1);
                order.push(key);
            }
        }
        report.parsed += 1;
    }
    report.check_threshold()?;
    let out = order
        .into_iter()
        .map(|key| {
            let value = counts[&key] as f64;
            RawInteraction {
                user_id: key.0,
                item_id: key.1,
                value,
                timestamp: None,
            }
        })
        .collect();
    Ok((out, report))
}

/// Sidecar metadata: `item_id <tab> title <tab> label1|label2|... <tab> year`
/// with the year column optional.
pub fn load_metadata(path: &Path) -> Result<(BTreeMap<String, ItemMeta>, LoadReport)> {
    let lines = read_lines(path)?;
    let mut report = LoadReport::default();
    let mut out = BTreeMap::new();
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields[0].is_empty() {
            report.note_malformed(line_no, "expected ≥3 tab fields with non-empty item id".into());
            continue;
        }
        let labels = fields[2]
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        let year = match fields.get(3).map(|s| s.trim()) {
            None | Some("") => None,
            Some(y) => match y.parse::<i32>() {
                Ok(v) => Some(v),
                Err(_) => {
                    report.note_malformed(line_no, format!("bad year '{y}'"));
                    continue;
                }
            },
        };
        out.insert(
            fields[0].to_owned(),
            ItemMeta {
                title: fields[1].to_owned(),
                labels,
                year,
            },
        );
        report.parsed += 1;
    }
    report.check_threshold()?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpfile(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("recsae-loader-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn movielens_line_parses() {
        let path = tmpfile("ml_ok.dat", "1::1193::5::978300760\n");
        let (rows, report) = load_movielens(&path).unwrap();
        assert_eq!(report.parsed, 1);
        assert_eq!(
            rows[0],
            RawInteraction {
                user_id: "1".into(),
                item_id: "1193".into(),
                value: 5.0,
                timestamp: Some(978300760),
            }
        );
    }

    #[test]
    fn low_rating_is_still_a_positive_row() {
        let path = tmpfile("ml_low.dat", "1::1193::1::978300760\n");
        let (rows, _) = load_movielens(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].value, 1.0);
    }

    #[test]
    fn empty_file_empty_list() {
        let path = tmpfile("ml_empty.dat", "");
        let (rows, report) = load_movielens(&path).unwrap();
        assert!(rows.is_empty());
        assert_eq!(report.lines, 0);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_movielens(Path::new("/nonexistent/ml.dat")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn malformed_over_one_percent_fails_with_line() {
        let mut contents = String::from("garbage line\n");
        for i in 0..50 {
            contents.push_str(&format!("{i}::{i}::3::100\n"));
        }
        let err = load_movielens(&tmpfile("ml_bad.dat", &contents)).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_under_one_percent_tolerated() {
        let mut contents = String::new();
        for i in 0..200 {
            contents.push_str(&format!("{i}::{i}::3::100\n"));
        }
        contents.push_str("garbage\n");
        let (rows, report) = load_movielens(&tmpfile("ml_ok2.dat", &contents)).unwrap();
        assert_eq!(rows.len(), 200);
        assert_eq!(report.malformed, 1);
    }

    #[test]
    fn lastfm_aggregates_events_per_artist() {
        let contents = "u1\t2009\taA\tArtist A\n\
                        u1\t2009\taA\tArtist A\n\
                        u1\t2009\taA\tArtist A\n\
                        u1\t2009\taB\tArtist B\n";
        let (rows, _) = load_lastfm(
            &tmpfile("fm.tsv", contents),
            &LastFmColumns::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].item_id, "aA");
        assert_eq!(rows[0].value, 3.0);
        assert_eq!(rows[1].value, 1.0);
    }

    #[test]
    fn lastfm_custom_columns() {
        let contents = "x\tu1\tA\nx\tu1\tA\nx\tu2\tB\n";
        let (rows, _) = load_lastfm(
            &tmpfile("fm2.tsv", contents),
            &LastFmColumns { user: 1, artist: 2 },
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].value, 2.0);
    }

    #[test]
    fn metadata_roundtrip() {
        let contents = "m1\tThe Movie\tHorror|Comedy\t1994\nm2\tOther\tDrama\n";
        let (meta, report) = load_metadata(&tmpfile("meta.tsv", contents)).unwrap();
        assert_eq!(report.parsed, 2);
        let m1 = &meta["m1"];
        assert_eq!(m1.title, "The Movie");
        assert!(m1.labels.contains("Horror") && m1.labels.contains("Comedy"));
        assert_eq!(m1.year, Some(1994));
        assert_eq!(meta["m2"].year, None);
    }
}
