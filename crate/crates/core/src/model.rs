//! Sample containers and the pooled standardization applied before every
//! statistic is computed.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, RksError};

/// Which side of the two-sample problem a set of observations belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    X,
    Y,
}

/// An `m x d` matrix of observations stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    label: Label,
    seed: Option<u64>,
}

impl SampleSet {
    /// Build from row-major `data` with `dim` columns.
    pub fn new(data: Vec<f64>, dim: usize, label: Label) -> Result<Self> {
        if dim == 0 {
            return Err(RksError::InvalidSample("dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(RksError::InvalidSample("at least one observation is required".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(RksError::InvalidSample(format!(
                "{} values do not fill rows of width {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(RksError::InvalidSample(format!(
                "non-finite entry in row {}",
                pos / dim
            )));
        }
        Ok(Self {
            rows: data.len() / dim,
            data,
            dim,
            label,
            seed: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], label: Label) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(RksError::EmptyInput)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(RksError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, dim, label)
    }

    /// Univariate sample.
    pub fn from_values(values: &[f64], label: Label) -> Result<Self> {
        Self::new(values.to_vec(), 1, label)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Apply `f` to every row in place of a copy.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.rows().zip(data.chunks_exact_mut(self.dim)) {
            f(src, dst);
        }
        let mut out = Self::new(data, self.dim, self.label)?;
        out.seed = self.seed;
        Ok(out)
    }

    /// Projections `w^T z` of every row.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        self.rows().map(|r| dot(r, w)).collect()
    }

    /// Read comma-separated rows. `header` skips the first line.
    pub fn read_csv<R: Read>(reader: R, header: bool, label: Label) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(header)
            .flexible(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut data = Vec::new();
        let mut dim = None;
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                RksError::Parse {
                    line,
                    msg: e.to_string(),
                }
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            match dim {
                None => dim = Some(record.len()),
                Some(d) if d != record.len() => {
                    return Err(RksError::Parse {
                        line,
                        msg: format!("expected {d} fields, found {}", record.len()),
                    })
                }
                _ => {}
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| RksError::Parse {
                    line,
                    msg: format!("`{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(RksError::Parse {
                        line,
                        msg: format!("`{field}` is not finite"),
                    });
                }
                data.push(v);
            }
        }
        let dim = dim.ok_or(RksError::EmptyInput)?;
        Self::new(data, dim, label)
    }

    pub fn load_csv(path: impl AsRef<Path>, header: bool, label: Label) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), header, label)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub(crate) fn ensure_same_dim(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(RksError::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(())
}

/// Center and scale that were applied to a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }
}

/// Both samples after pooled centering and scaling.
#[derive(Debug, Clone)]
pub struct StandardizedPair {
    pub x: SampleSet,
    pub y: SampleSet,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl StandardizedPair {
    /// Wrap data that is used as-is (center 0, scale 1).
    pub fn unscaled(x: SampleSet, y: SampleSet) -> Result<Self> {
        ensure_same_dim(&x, &y)?;
        let dim = x.dim();
        Ok(Self {
            x: x.with_label(Label::X),
            y: y.with_label(Label::Y),
            center: vec![0.0; dim],
            scale: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn summary(&self) -> Standardization {
        Standardization {
            center: self.center.clone(),
            scale: self.scale,
        }
    }
}

pub const DEGENERATE_SCALE: f64 = 1e-14;

/// Subtract the pooled mean and divide by the root mean squared pooled norm.
pub fn standardize(x: &SampleSet, y: &SampleSet) -> Result<StandardizedPair> {
    ensure_same_dim(x, y)?;
    let dim = x.dim();
    let total = (x.len() + y.len()) as f64;
    if x.len() + y.len() < 2 {
        return Err(RksError::TooFewSamples("standardization needs two points".into()));
    }
    // per-sample partial sums added last, so swapping x and y is bitwise neutral
    let column_sums = |s: &SampleSet| {
        let mut acc = vec![0.0; dim];
        for row in s.rows() {
            for (c, v) in acc.iter_mut().zip(row) {
                *c += v;
            }
        }
        acc
    };
    let (sx, sy) = (column_sums(x), column_sums(y));
    let center: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| (a + b) / total).collect();

    let sq_sum = |s: &SampleSet| {
        s.rows()
            .map(|row| row.iter().zip(&center).map(|(v, c)| (v - c).powi(2)).sum::<f64>())
            .sum::<f64>()
    };
    let sq = sq_sum(x) + sq_sum(y);
    let scale = (sq / total).sqrt();
    if !(scale >= DEGENERATE_SCALE) {
        return Err(RksError::DegenerateScale);
    }
    let apply = |src: &[f64], dst: &mut [f64]| {
        for ((d, s), c) in dst.iter_mut().zip(src).zip(&center) {
            *d = (s - c) / scale;
        }
    };
    Ok(StandardizedPair {
        x: x.map_rows(apply)?.with_label(Label::X),
        y: y.map_rows(apply)?.with_label(Label::Y),
        center,
        scale,
    })
}

/// Map a statistic computed on standardized data back to the original scale.
pub fn destandardize_value(v_std: f64, scale: f64, k: u32) -> f64 {
    v_std * scale.powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[&[f64]], label: Label) -> SampleSet {
        SampleSet::from_rows(rows, label).unwrap()
    }

    #[test]
    fn symmetric_pair_is_unchanged() {
        let p = standardize(&set(&[&[1.0, 0.0]], Label::X), &set(&[&[-1.0, 0.0]], Label::Y)).unwrap();
        assert_eq!(p.center, vec![0.0, 0.0]);
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.x.row(0), &[1.0, 0.0]);
        assert_eq!(p.y.row(0), &[-1.0, 0.0]);
    }

    #[test]
    fn translated_pair() {
        let p = standardize(&set(&[&[2.0, 0.0]], Label::X), &set(&[&[0.0, 0.0]], Label::Y)).unwrap();
        assert_eq!(p.center, vec![1.0, 0.0]);
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.x.row(0), &[1.0, 0.0]);
        assert_eq!(p.y.row(0), &[-1.0, 0.0]);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let x = set(&[&[5.0, 5.0]], Label::X);
        assert!(matches!(standardize(&x, &x), Err(RksError::DegenerateScale)));
    }

    #[test]
    fn dimension_mismatch() {
        let x = set(&[&[5.0, 5.0]], Label::X);
        let y = set(&[&[5.0]], Label::Y);
        assert!(matches!(standardize(&x, &y), Err(RksError::DimensionMismatch { .. })));
    }

    #[test]
    fn destandardize_examples() {
        assert_eq!(destandardize_value(0.5, 2.0, 0), 0.5);
        assert_eq!(destandardize_value(0.5, 2.0, 1), 1.0);
        assert_eq!(destandardize_value(0.5, 3.0, 2), 4.5);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(SampleSet::new(vec![], 1, Label::X).is_err());
        assert!(SampleSet::new(vec![1.0, 2.0, 3.0], 2, Label::X).is_err());
        assert!(SampleSet::new(vec![1.0, f64::NAN], 1, Label::X).is_err());
        assert!(SampleSet::new(vec![1.0], 0, Label::X).is_err());
    }

    #[test]
    fn csv_reports_line_of_bad_row() {
        let text = "1,2\n3,4\n5,oops\n";
        match SampleSet::read_csv(text.as_bytes(), false, Label::X) {
            Err(RksError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "x,y\n1,2\n3\n";
        match SampleSet::read_csv(ragged.as_bytes(), true, Label::X) {
            Err(RksError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ok = SampleSet::read_csv("a,b\n1,2\n3,4\n".as_bytes(), true, Label::Y).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.row(1), &[3.0, 4.0]);
    }

    fn pair_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (1usize..4).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0f64..10.0, d..=6 * d).prop_map(move |v| {
                    let n = v.len() / d * d;
                    v[..n].to_vec()
                }),
                prop::collection::vec(-10.0f64..10.0, d..=6 * d).prop_map(move |v| {
                    let n = v.len() / d * d;
                    v[..n].to_vec()
                }),
                Just(d),
            )
        })
    }

    proptest! {
        #[test]
        fn standardized_moments((xs, ys, d) in pair_strategy()) {
            let x = SampleSet::new(xs, d, Label::X).unwrap();
            let y = SampleSet::new(ys, d, Label::Y).unwrap();
            let Ok(p) = standardize(&x, &y) else { return Ok(()); };
            let total = (x.len() + y.len()) as f64;
            for j in 0..d {
                let mean: f64 = p.x.rows().chain(p.y.rows()).map(|r| r[j]).sum::<f64>() / total;
                prop_assert!(mean.abs() < 1e-10);
            }
            let msq: f64 = p.x.rows().chain(p.y.rows()).map(|r| dot(r, r)).sum::<f64>() / total;
            prop_assert!((msq - 1.0).abs() < 1e-10);
        }

        #[test]
        fn translation_invariance((xs, ys, d) in pair_strategy(), shift in -50.0f64..50.0) {
            let x = SampleSet::new(xs.clone(), d, Label::X).unwrap();
            let y = SampleSet::new(ys.clone(), d, Label::Y).unwrap();
            let xs2: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let ys2: Vec<f64> = ys.iter().map(|v| v + shift).collect();
            let x2 = SampleSet::new(xs2, d, Label::X).unwrap();
            let y2 = SampleSet::new(ys2, d, Label::Y).unwrap();
            let (Ok(a), Ok(b)) = (standardize(&x, &y), standardize(&x2, &y2)) else { return Ok(()); };
            for (u, v) in a.x.data().iter().chain(a.y.data()).zip(b.x.data().iter().chain(b.y.data())) {
                prop_assert!((u - v).abs() < 1e-10 * (1.0 + u.abs()));
            }
        }

        #[test]
        fn scale_round_trip(v in 0.0f64..1e3, scale in 1e-3f64..1e3, k in 0u32..4) {
            let back = destandardize_value(v / scale.powi(k as i32), scale, k);
            prop_assert!((back - v).abs() <= 1e-12 * v.max(1e-300));
        }
    }
}
