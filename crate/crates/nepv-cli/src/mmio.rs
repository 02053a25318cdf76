//! Matrix Market reading and writing for dense real matrices.
//!
//! Reads `coordinate` and `array` formats with `general`, `symmetric` or
//! `skew-symmetric` structure; writes `array real general` with 17
//! significant digits so values round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nepv_core::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

pub fn read_matrix_market(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read matrix file {}", path.display()))?;
    parse_matrix_market(&text)
        .with_context(|| format!("malformed Matrix Market file {}", path.display()))
}

pub fn parse_matrix_market(text: &str) -> Result<Mat> {
    let mut lines = text.lines();
    let header = lines.next().context("empty file")?;
    let words: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if words.len() < 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        bail!("missing %%MatrixMarket matrix header");
    }
    let layout = match words[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => bail!("unsupported format {other:?}"),
    };
    if !matches!(words[3].as_str(), "real" | "integer" | "double") {
        bail!(
            "unsupported field {:?}, only real matrices are read",
            words[3]
        );
    }
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        other => bail!("unsupported symmetry {other:?}"),
    };
    let mut body = lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size: Vec<usize> = body
        .next()
        .context("missing size line")?
        .split_whitespace()
        .map(|t| t.parse().with_context(|| format!("bad size entry {t:?}")))
        .collect::<Result<_>>()?;
    let mut m;
    match layout {
        Layout::Array => {
            let [rows, cols] = size[..] else {
                bail!("array size line needs 2 entries")
            };
            m = Mat::zeros(rows, cols);
            let mut slots = Vec::with_capacity(rows * cols);
            for j in 0..cols {
                let start = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::Skew => j + 1,
                };
                slots.extend((start..rows).map(|i| (i, j)));
            }
            let mut count = 0;
            for line in body {
                for tok in line.split_whitespace() {
                    let &(i, j) = slots.get(count).context("too many values")?;
                    let v: f64 = tok.parse().with_context(|| format!("bad value {tok:?}"))?;
                    place(&mut m, symmetry, i, j, v);
                    count += 1;
                }
            }
            if count != slots.len() {
                bail!("expected {} values, found {count}", slots.len());
            }
        }
        Layout::Coordinate => {
            let [rows, cols, nnz] = size[..] else {
                bail!("coordinate size line needs 3 entries")
            };
            m = Mat::zeros(rows, cols);
            let mut count = 0;
            for line in body {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let [i, j, v] = toks[..] else {
                    bail!("bad entry line {line:?}")
                };
                let i: usize = i.parse().with_context(|| format!("bad row index {i:?}"))?;
                let j: usize = j
                    .parse()
                    .with_context(|| format!("bad column index {j:?}"))?;
                let v: f64 = v.parse().with_context(|| format!("bad value {v:?}"))?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    bail!("entry ({i}, {j}) outside {rows}x{cols}");
                }
                place(&mut m, symmetry, i - 1, j - 1, v);
                count += 1;
            }
            if count != nnz {
                bail!("header announces {nnz} entries, found {count}");
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        bail!("non-finite value");
    }
    Ok(m)
}

fn place(m: &mut Mat, symmetry: Symmetry, i: usize, j: usize, v: f64) {
    m[(i, j)] = v;
    match symmetry {
        Symmetry::General => {}
        Symmetry::Symmetric => m[(j, i)] = v,
        Symmetry::Skew => m[(j, i)] = -v,
    }
}

pub fn format_matrix_market(m: &Mat) -> String {
    let mut s = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    // Column-major, as the format requires.
    for v in m.iter() {
        let _ = writeln!(s, "{v:.16e}");
    }
    s
}

pub fn write_matrix_market(path: &Path, m: &Mat) -> Result<()> {
    std::fs::write(path, format_matrix_market(m))
        .with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_symmetric() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2.0\n2 1 -1\n2 2 2\n3 3 5e-1\n";
        let m = parse_matrix_market(text).unwrap();
        assert_eq!(
            m,
            Mat::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.5])
        );
    }

    #[test]
    fn array_roundtrip_is_exact() {
        let m = Mat::from_fn(4, 3, |i, j| {
            (i as f64 + 0.1).powi(3) / (j as f64 + 3.0) - 1e-17 * j as f64
        });
        assert_eq!(parse_matrix_market(&format_matrix_market(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_matrix_market("").is_err());
        assert!(
            parse_matrix_market("%%MatrixMarket matrix array complex general\n1 1\n1 0\n").is_err()
        );
        assert!(parse_matrix_market("%%MatrixMarket matrix array real general\n2 1\n1\n").is_err());
        assert!(parse_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n"
        )
        .is_err());
    }
}
