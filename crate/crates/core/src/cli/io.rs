use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossfit::Dataset;
use crate::error::{PteError, Result};
use crate::learners::DesignMatrix;

/// Explicit column roles; overrides the `y`/`a`/`x*`/`s*` naming
/// convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub y: String,
    pub a: String,
    #[serde(default)]
    pub x: Vec<String>,
    pub s: Vec<String>,
    #[serde(default)]
    pub id: Option<String>,
}

impl Schema {
    /// Roles by prefix: `y`, `a`, optional `id`, then every `x…` and `s…`
    /// column in file order.
    pub fn infer(headers: &[String]) -> Self {
        let pick = |prefix: char| -> Vec<String> {
            headers.iter().filter(|h| h.len() > 1 && h.starts_with(prefix)).cloned().collect()
        };
        Self {
            y: "y".into(),
            a: "a".into(),
            x: pick('x'),
            s: pick('s'),
            id: headers.iter().any(|h| h == "id").then(|| "id".into()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PteError::Parse {
            path: path.display().to_string(),
            line: e.line() as u64,
            column: e.column(),
            message: e.to_string(),
        })
    }
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> PteError {
    PteError::Parse { path: path.display().to_string(), line, column, message: message.into() }
}

/// Reads a delimited file with a header row. Line numbers in errors are
/// 1-based file lines; columns are 1-based field positions.
pub fn read_dataset(path: &Path, schema: Option<&Schema>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| parse_err(path, 1, 1, e.to_string()))?.iter().map(str::to_string).collect();
    let schema = schema.cloned().unwrap_or_else(|| Schema::infer(&headers));
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, headers.len().max(1), format!("required column `{name}` not found")))
    };
    let iy = index(&schema.y)?;
    let ia = index(&schema.a)?;
    let ix: Vec<usize> = schema.x.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let is: Vec<usize> = schema.s.iter().map(|c| index(c)).collect::<Result<_>>()?;
    if is.is_empty() {
        return Err(parse_err(path, 1, 1, "no surrogate columns (`s…`)"));
    }
    let iid = schema.id.as_deref().map(index).transpose()?;

    let (mut y, mut a, mut xv, mut sv, mut ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |j: usize| -> Result<f64> {
            let field = rec.get(j).unwrap_or("");
            let v: f64 =
                field.parse().map_err(|_| parse_err(path, line, j + 1, format!("`{}` is not a number", field)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, j + 1, format!("`{field}` is not finite")));
            }
            Ok(v)
        };
        y.push(num(iy)?);
        let av = num(ia)?;
        if av != 0.0 && av != 1.0 {
            return Err(parse_err(path, line, ia + 1, format!("treatment must be 0 or 1, got {av}")));
        }
        a.push(av as u8);
        for &j in &ix {
            xv.push(num(j)?);
        }
        for &j in &is {
            sv.push(num(j)?);
        }
        ids.push(match iid {
            Some(j) => rec.get(j).unwrap_or("").to_string(),
            None => (ids.len() + 1).to_string(),
        });
    }
    let n = y.len();
    if n == 0 {
        return Err(parse_err(path, 2, 1, "no data rows"));
    }
    Dataset::with_ids(
        DesignMatrix::from_row_major(n, ix.len(), &xv)?,
        DesignMatrix::from_row_major(n, is.len(), &sv)?,
        a,
        y,
        ids,
    )
}

/// Writes `data` with columns `id, y, a, x1.., s1..`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    atomic_write(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "y".into(), "a".into()];
        header.extend((1..=data.x.cols()).map(|j| format!("x{j}")));
        header.extend((1..=data.s.cols()).map(|j| format!("s{j}")));
        out.write_record(&header).map_err(csv_io)?;
        for i in 0..data.n() {
            let mut row = vec![data.ids[i].clone(), data.y[i].to_string(), data.a[i].to_string()];
            row.extend(data.x.row(i).iter().map(f64::to_string));
            row.extend(data.s.row(i).iter().map(f64::to_string));
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub(crate) fn csv_io(e: csv::Error) -> PteError {
    PteError::Io(std::io::Error::other(e))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failure leaves no partial output.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| PteError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_prefixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "y,a,x1,s1,s2\n1.5,1,0.1,2,3\n-2,0,0.2,4,5\n");
        let d = read_dataset(&p, None).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.y, vec![1.5, -2.0]);
        assert_eq!(d.a, vec![1, 0]);
        assert_eq!(d.s.row(1), vec![4.0, 5.0]);
        assert_eq!(d.ids, vec!["1", "2"]);
    }

    #[test]
    fn reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "y,a,x1,s1\n1,1,0,2\n1,0,oops,2\n");
        match read_dataset(&p, None) {
            Err(PteError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "e.csv", "y,a,s1\n1,2,0\n");
        assert!(matches!(read_dataset(&p, None), Err(PteError::Parse { line: 2, column: 2, .. })));
        let p = write(dir.path(), "f.csv", "y,s1\n1,0\n");
        assert!(matches!(read_dataset(&p, None), Err(PteError::Parse { line: 1, .. })));
    }

    #[test]
    fn schema_overrides_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "out,trt,age,marker\n1,1,30,2\n2,0,40,3\n");
        let schema =
            Schema { y: "out".into(), a: "trt".into(), x: vec!["age".into()], s: vec!["marker".into()], id: None };
        let d = read_dataset(&p, Some(&schema)).unwrap();
        assert_eq!(d.x.column(0), &[30.0, 40.0]);
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let x = DesignMatrix::from_columns(3, &[vec![0.1, 1.0 / 3.0, -7e-12]]).unwrap();
        let s = DesignMatrix::from_columns(3, &[vec![std::f64::consts::PI, 2.0, 3.0]]).unwrap();
        let d = Dataset::new(x, s, vec![1, 0, 1], vec![0.2, 0.30000000000000004, 9.0]).unwrap();
        let p = dir.path().join("rt.csv");
        write_dataset(&p, &d).unwrap();
        assert_eq!(read_dataset(&p, None).unwrap(), d);
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        let r = atomic_write(&p, |w| {
            w.write_all(b"partial")?;
            Err(PteError::Config("boom".into()))
        });
        assert!(r.is_err());
        assert!(!p.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[cfg(unix)]
    #[test]
    fn output_is_not_private() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, |w| Ok(w.write_all(b"x")?)).unwrap();
        assert_ne!(fs::metadata(&p).unwrap().permissions().mode() & 0o044, 0);
    }
}
