use std::io::Write;
use std::path::Path;

use linkmerge::{ColumnKind, ContextValue, Dataset};

use crate::config::CONFIG_LINE_PREFIX;
use crate::error::CliError;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_f64(s: &str, path: &Path, row: usize, col: &str) -> Result<f64, CliError> {
    s.parse::<f64>().map_err(|_| {
        CliError::Input(format!(
            "{}: row {row}, column {col}: not a number: {s:?}",
            path.display()
        ))
    })
}

/// A dataset file: a `value` column followed by `cat_*` / `num_*` context columns.
pub struct Table {
    pub dataset: Dataset,
    pub context_names: Vec<String>,
}

pub fn read_dataset(path: &Path) -> Result<Table, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("value") {
        return Err(CliError::Input(format!(
            "{}: first column must be `value`",
            path.display()
        )));
    }
    let schema = names[1..]
        .iter()
        .map(|c| {
            if c.starts_with("cat_") {
                Ok(ColumnKind::Categorical)
            } else if c.starts_with("num_") {
                Ok(ColumnKind::Numeric)
            } else {
                Err(CliError::Input(format!(
                    "{}: context column {c:?} needs a cat_ or num_ prefix",
                    path.display()
                )))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut values = Vec::new();
    let mut context = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        values.push(parse_f64(&rec[0], path, row, "value")?);
        let ctx = schema
            .iter()
            .enumerate()
            .map(|(j, kind)| {
                let field = &rec[j + 1];
                match kind {
                    ColumnKind::Categorical => Ok(ContextValue::Categorical(field.to_string())),
                    ColumnKind::Numeric => {
                        parse_f64(field, path, row, &names[j + 1]).map(ContextValue::Numeric)
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        context.push(ctx);
    }
    if values.is_empty() {
        return Err(CliError::Input(format!("{}: no rows", path.display())));
    }
    let dataset = Dataset::new(values, schema, context)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Table {
        dataset,
        context_names: names[1..].to_vec(),
    })
}

/// Rows of a link file belonging to one group: `(u, h_hat)`.
pub fn read_link(
    path: &Path,
    group: Option<&str>,
) -> Result<(String, Vec<f64>, Vec<f64>), CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column {name}", path.display())))
    };
    let (gk, cu, ch) = (col("group_key")?, col("u")?, col("h_hat")?);
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push((
            rec[gk].to_string(),
            parse_f64(&rec[cu], path, i + 1, "u")?,
            parse_f64(&rec[ch], path, i + 1, "h_hat")?,
        ));
    }
    let mut keys: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    keys.dedup();
    let key = match group {
        Some(g) => g.to_string(),
        None if keys.len() == 1 => keys[0].to_string(),
        None => {
            return Err(CliError::Input(format!(
                "{}: holds {} groups, choose one with --group",
                path.display(),
                keys.len()
            )))
        }
    };
    let (u, h): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.0 == key)
        .map(|r| (r.1, r.2))
        .unzip();
    if u.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no rows for group {key:?}",
            path.display()
        )));
    }
    if u.windows(2).any(|w| w[0] > w[1]) {
        return Err(CliError::Input(format!(
            "{}: u must be non-decreasing within a group",
            path.display()
        )));
    }
    Ok((key, u, h))
}

/// Holdout pairs from a file with `x` and `y` columns.
pub fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column {name}", path.display())))
    };
    let (cx, cy) = (col("x")?, col("y")?);
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            Ok((
                parse_f64(&rec[cx], path, i + 1, "x")?,
                parse_f64(&rec[cy], path, i + 1, "y")?,
            ))
        })
        .collect()
}

/// CSV text with the provenance line on top.
pub fn csv_text<I, R>(config_line: &str, header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = format!("{CONFIG_LINE_PREFIX}{config_line}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.into_iter().collect::<Vec<_>>())?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn json_text<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_schema_and_skips_comments() {
        let d = tempfile::tempdir().unwrap();
        let p = file(
            d.path(),
            "x.csv",
            "# note\nvalue,cat_a,num_b\n1.5,A,2\n-3,B,0.5\n",
        );
        let t = read_dataset(&p).unwrap();
        assert_eq!(t.dataset.values(), &[1.5, -3.0]);
        assert_eq!(
            t.dataset.schema(),
            &[ColumnKind::Categorical, ColumnKind::Numeric]
        );
        assert_eq!(t.context_names, vec!["cat_a", "num_b"]);
    }

    #[test]
    fn schema_errors() {
        let d = tempfile::tempdir().unwrap();
        for body in [
            "v,cat_a\n1,A\n",
            "value,zone\n1,A\n",
            "value,num_a\n1,A\n",
            "value\nabc\n",
            "value\n",
            "value\ninf\n",
        ] {
            let p = file(d.path(), "x.csv", body);
            assert!(
                matches!(read_dataset(&p), Err(CliError::Input(_))),
                "{body}"
            );
        }
    }

    #[test]
    fn link_group_selection() {
        let d = tempfile::tempdir().unwrap();
        let p = file(
            d.path(),
            "l.csv",
            "group_key,u,h_hat,band_lo,band_hi\nA,0,1,,\nA,1,2,,\nB,0,5,,\n",
        );
        assert!(read_link(&p, None).is_err());
        let (k, u, h) = read_link(&p, Some("A")).unwrap();
        assert_eq!((k.as_str(), u, h), ("A", vec![0.0, 1.0], vec![1.0, 2.0]));
        assert!(read_link(&p, Some("C")).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(d.path().join("sub")).unwrap().count(), 1);
    }
}
