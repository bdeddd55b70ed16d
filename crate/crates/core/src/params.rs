//! Flat parameter vectors with shape metadata, and their text checkpoint
//! codec.
//!
//! All trainable state is carried as one `Vec<f64>` per network plus a
//! [`Layout`] describing how the flat vector maps to named weight matrices
//! and bias vectors. Gradients reuse the same layout, so parameter/gradient
//! arithmetic is plain slice arithmetic.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One named block of a flat parameter vector.
///
/// `dims` has one entry for a vector (bias) or two `(rows, cols)` for a
/// matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

impl LayoutEntry {
    pub fn matrix(name: &str, rows: usize, cols: usize) -> Self {
        LayoutEntry {
            name: name.to_string(),
            dims: alloc::vec![rows, cols],
        }
    }

    pub fn vector(name: &str, len: usize) -> Self {
        LayoutEntry {
            name: name.to_string(),
            dims: alloc::vec![len],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)` view: vectors are `1 × len`.
    pub fn shape2(&self) -> (usize, usize) {
        match self.dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("layout entries are 1- or 2-dimensional"),
        }
    }
}

/// Ordered list of blocks; owns the flat offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Self {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for e in &entries {
            offsets.push(total);
            total += e.len();
        }
        Layout {
            entries,
            offsets,
            total,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &LayoutEntry {
        &self.entries[idx]
    }

    pub fn offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    /// Byte range of block `idx` inside the flat vector.
    pub fn range(&self, idx: usize) -> core::ops::Range<usize> {
        let o = self.offsets[idx];
        o..o + self.entries[idx].len()
    }

    /// Header form: `name:32x256` / `name:256`, comma separated.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&e.name);
            s.push(':');
            let dims: Vec<String> = e.dims.iter().map(|d| d.to_string()).collect();
            s.push_str(&dims.join("x"));
        }
        s
    }

    fn parse_header(s: &str) -> Result<Layout> {
        let mut entries = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (name, dims_s) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("layout entry '{part}' has no ':'")))?;
            let mut dims = Vec::new();
            for d in dims_s.split('x') {
                let v: usize = d
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad dimension '{d}' in '{part}'")))?;
                dims.push(v);
            }
            if dims.is_empty() || dims.len() > 2 {
                return Err(Error::Parse(format!("entry '{part}' must be 1- or 2-dimensional")));
            }
            entries.push(LayoutEntry {
                name: name.to_string(),
                dims,
            });
        }
        if entries.is_empty() {
            return Err(Error::Parse("empty layout header".into()));
        }
        Ok(Layout::new(entries))
    }
}

/// Flat parameter (or gradient) vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: alloc::vec![0.0; n],
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slice of block `idx`.
    pub fn block(&self, idx: usize) -> &[f64] {
        &self.values[self.layout.range(idx)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    /// Checkpoint text: a header line `layout: name:shape,...` followed by
    /// one value per line at 17 significant digits, which round-trips `f64`
    /// exactly.
    pub fn encode(&self) -> String {
        let mut s = String::with_capacity(16 + self.values.len() * 26);
        s.push_str("layout: ");
        s.push_str(&self.layout.header());
        s.push('\n');
        for v in &self.values {
            s.push_str(&format!("{v:.16e}\n"));
        }
        s
    }

    /// Inverse of [`encode`](Self::encode); bit-exact.
    pub fn decode(text: &str) -> Result<ParamVector> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        let header = header
            .strip_prefix("layout:")
            .ok_or_else(|| Error::Parse("checkpoint must start with 'layout:'".into()))?
            .trim();
        let layout = Layout::parse_header(header)?;
        let mut values = Vec::with_capacity(layout.total_len());
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::Parse(format!("bad value on line {}: '{line}'", i + 2)))?;
            values.push(v);
        }
        ParamVector::from_values(Arc::new(layout), values)
    }
}
