use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;
pub type CategoryId = u16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
    pub categories: Vec<CategoryId>,
}

/// Raw interaction records in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.item as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn num_users(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.user as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Number of distinct category ids mentioned anywhere in the log.
    pub fn distinct_categories(&self) -> usize {
        let mut seen: Vec<CategoryId> = self
            .records
            .iter()
            .flat_map(|r| r.categories.iter().copied())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Tab-separated `user item timestamp cat1,cat2,...`, one record per line.
    /// Lines starting with `#` carry provenance comments and are skipped on load.
    pub fn to_tsv(&self, header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        for r in &self.records {
            let cats: Vec<String> = r.categories.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.user,
                r.item,
                r.timestamp,
                cats.join(",")
            ));
        }
        out
    }

    pub fn save(&self, path: &Path, header: Option<&str>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_tsv(header).as_bytes())?;
        Ok(())
    }
}

pub fn parse_interactions(text: &str, path: &Path) -> Result<InteractionLog> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let user = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad user id {:?}", fields[0])))?;
        let item = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad item id {:?}", fields[1])))?;
        let timestamp = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad timestamp {:?}", fields[2])))?;
        let categories = fields[3]
            .split(',')
            .map(|c| c.trim().parse::<CategoryId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(lineno, format!("bad category list {:?}", fields[3])))?;
        if categories.is_empty() {
            return Err(err(lineno, "empty category set".into()));
        }
        records.push(Interaction {
            user,
            item,
            timestamp,
            categories,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(InteractionLog { records })
}

pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let text = fs::read_to_string(path)?;
    parse_interactions(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.tsv")
    }

    #[test]
    fn three_valid_lines() {
        let log = parse_interactions("1\t10\t100\t0\n1\t11\t101\t0,2\n2\t10\t5\t1\n", p()).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.records[1].categories, vec![0, 2]);
    }

    #[test]
    fn bad_timestamp_names_line() {
        let e = parse_interactions("1\t10\t100\t0\n1\t11\tnoon\t0\n", p()).unwrap_err();
        match e {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("timestamp"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(
            parse_interactions("# only a comment\n", p()),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn negative_ids_rejected() {
        assert!(parse_interactions("-1\t10\t100\t0\n", p()).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let log = parse_interactions("1\t10\t100\t0\n3\t11\t101\t4,2\n", p()).unwrap();
        let again = parse_interactions(&log.to_tsv(Some("cfg abc")), p()).unwrap();
        assert_eq!(log, again);
    }
}
