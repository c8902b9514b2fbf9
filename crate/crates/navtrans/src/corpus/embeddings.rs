//! Loader for pretrained word vectors in the usual text format:
//! one line per word, token followed by D space-separated reals.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::{CorpusError, Vocabulary};
use crate::seeding::derive_rng;
use crate::tensor::Tensor;

/// Builds a |vocab| × D matrix. Vocabulary words found in the file keep
/// their pretrained rows; everything else (including the reserved tokens)
/// gets a seeded random row whose per-dimension spread matches the file's.
pub fn load_pretrained_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Tensor, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut rows: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse().map_err(|_| CorpusError::Embeddings {
                    line: lineno,
                    msg: format!("bad number {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(CorpusError::Embeddings {
                    line: lineno,
                    msg: "no vector components".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::Embeddings {
                    line: lineno,
                    msg: format!("dimension {} does not match earlier {d}", values.len()),
                })
            }
            Some(_) => {}
        }
        rows.entry(token).or_insert(values);
    }
    let dim = dim.ok_or(CorpusError::Embeddings {
        line: 0,
        msg: "file contains no vectors".into(),
    })?;

    // Per-dimension standard deviation of the file's rows; random rows for
    // missing words are drawn uniform with the same spread.
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for row in rows.values() {
        for (d, &x) in row.iter().enumerate() {
            mean[d] += x / n;
            sq[d] += x * x / n;
        }
    }
    let std: Vec<f64> = (0..dim)
        .map(|d| (sq[d] - mean[d] * mean[d]).max(0.0).sqrt())
        .collect();

    let mut rng = derive_rng(seed, &["embeddings"]);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for idx in 0..vocab.len() {
        let token = vocab.token(idx).expect("index in range");
        match rows.get(token) {
            Some(row) => data.extend_from_slice(row),
            None => {
                // uniform on [-√3 σ, √3 σ] has standard deviation σ
                for &s in &std {
                    let half = 3.0f64.sqrt() * s;
                    data.push(if half > 0.0 { rng.random_range(-half..half) } else { 0.0 });
                }
            }
        }
    }
    Ok(Tensor::new(vec![vocab.len(), dim], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut tokens = vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            "<sop>".to_string(),
            "<eop>".to_string(),
        ];
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocabulary::from(tokens)
    }

    fn write_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn present_words_keep_their_rows() {
        let f = write_file(&["the 0.1 0.2", "hall -0.3 0.4"]);
        let v = vocab(&["the", "hall"]);
        let m = load_pretrained_embeddings(f.path(), &v, 0).unwrap();
        assert_eq!(m.shape(), &[6, 2]);
        assert_eq!(&m.data()[8..10], &[0.1, 0.2]);
        assert_eq!(&m.data()[10..12], &[-0.3, 0.4]);
    }

    #[test]
    fn missing_words_are_deterministic_under_seed() {
        let f = write_file(&["other 1.0 -1.0", "word -1.0 1.0"]);
        let v = vocab(&["the"]);
        let a = load_pretrained_embeddings(f.path(), &v, 9).unwrap();
        let b = load_pretrained_embeddings(f.path(), &v, 9).unwrap();
        let c = load_pretrained_embeddings(f.path(), &v, 10).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn dimension_mismatch_cites_line() {
        let f = write_file(&["a 0.1 0.2", "b 0.3"]);
        let err = load_pretrained_embeddings(f.path(), &vocab(&[]), 0).unwrap_err();
        match err {
            CorpusError::Embeddings { line: 2, msg } => assert!(msg.contains("dimension")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_rows_match_file_spread() {
        // 200 file rows with per-dimension std ~ {1, 3}; none overlap the
        // vocabulary, so every returned row is random.
        let mut rng = derive_rng(4, &["test"]);
        let lines: Vec<String> = (0..200)
            .map(|i| {
                let a: f64 = rng.random_range(-1.732..1.732);
                let b: f64 = rng.random_range(-5.196..5.196);
                format!("w{i} {a} {b}")
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_file(&refs);

        let words: Vec<String> = (0..400).map(|i| format!("v{i}")).collect();
        let refs2: Vec<&str> = words.iter().map(String::as_str).collect();
        let v = vocab(&refs2);
        let m = load_pretrained_embeddings(f.path(), &v, 1).unwrap();

        let col_std = |mat: &Tensor, d: usize| {
            let rows = mat.shape()[0];
            let vals: Vec<f64> = (0..rows).map(|r| mat.data()[r * 2 + d]).collect();
            let mean = vals.iter().sum::<f64>() / rows as f64;
            (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rows as f64).sqrt()
        };
        // oracle: std of the file itself
        let file_rows: Vec<Vec<f64>> = lines
            .iter()
            .map(|l| l.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect())
            .collect();
        for d in 0..2 {
            let mean = file_rows.iter().map(|r| r[d]).sum::<f64>() / 200.0;
            let file_std =
                (file_rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
            let got = col_std(&m, d);
            assert!(
                (got - file_std).abs() / file_std < 0.2,
                "dim {d}: {got} vs {file_std}"
            );
        }
    }
}
