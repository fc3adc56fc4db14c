//! Pair list CSV: `id_a,id_b,label,fold`, label 1 (genuine) or 0, optional
//! header row.

use std::path::Path;

use rrf_core::{PairEntry, PairList};

use crate::error::{Error, Result};

pub const HEADER: [&str; 4] = ["id_a", "id_b", "label", "fold"];

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

pub fn parse_pairs<R: std::io::Read>(reader: R, path: &Path) -> Result<PairList> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut entries = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        if n == 0 && record.iter().eq(HEADER) {
            continue;
        }
        if record.len() != 4 {
            return Err(parse_error(
                path,
                line,
                format!("expected 4 columns, found {}", record.len()),
            ));
        }
        let genuine = match &record[2] {
            "1" => true,
            "0" => false,
            other => return Err(parse_error(path, line, format!("label must be 1 or 0, got {other:?}"))),
        };
        let fold: u32 = record[3]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad fold {:?}", &record[3])))?;
        if record[0].is_empty() || record[1].is_empty() {
            return Err(parse_error(path, line, "empty image id"));
        }
        entries.push(PairEntry {
            id_a: record[0].to_string(),
            id_b: record[1].to_string(),
            genuine,
            fold,
        });
    }
    Ok(PairList::new(entries)?)
}

pub fn load_pairs(path: &Path) -> Result<PairList> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(std::io::BufReader::new(file), path)
}

pub fn pairs_to_csv(pairs: &PairList) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(HEADER).expect("in-memory write");
    for e in pairs.entries() {
        let label = if e.genuine { "1" } else { "0" };
        wtr.write_record([e.id_a.as_str(), e.id_b.as_str(), label, &e.fold.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_pairs(pairs: &PairList, path: &Path) -> Result<()> {
    std::fs::write(path, pairs_to_csv(pairs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PairList> {
        parse_pairs(text.as_bytes(), Path::new("pairs.csv"))
    }

    #[test]
    fn four_lines_two_folds() {
        let p = parse("a,b,1,0\na,c,0,0\nd,e,1,1\nd,f,0,1\n").unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.folds(), 2);
        assert_eq!(p.labels(), vec![true, false, true, false]);
    }

    #[test]
    fn header_is_optional() {
        let p = parse("id_a,id_b,label,fold\na,b,1,0\na,c,0,1\n").unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn bad_label_names_line() {
        let err = parse("a,b,1,0\na,c,2,1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e:?}"),
        }
        assert!(parse("a,b,1,0\na,c,0,1\n").is_ok());
    }

    #[test]
    fn strict_column_count() {
        let err = parse("a,b,1,0\na,c,0,1,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(parse("a,b,1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip() {
        let p = parse("a,b,1,0\na,c,0,0\nd,e,1,1\nd,f,0,1\n").unwrap();
        assert_eq!(parse(&pairs_to_csv(&p)).unwrap(), p);
    }
}
