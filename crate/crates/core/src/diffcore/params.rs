//! Flat named parameter storage.
//!
//! All trainable weights live in one `ParamStore` per component (one for the
//! value networks, one for the flow), as a flat `f64` array with named,
//! non-overlapping segments. Gradients and optimizer state use the same
//! layout, and checkpoints persist segments in registration order.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Handle to a registered segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a zero-initialized segment. Names must be unique.
    pub fn add_segment(&mut self, name: impl Into<String>, len: usize) -> SegmentId {
        let name = name.into();
        assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate segment name `{name}`"
        );
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.segments.push(Segment { name, offset, len });
        SegmentId(self.segments.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, id: SegmentId) -> &[f64] {
        let s = &self.segments[id.0];
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn segment_mut(&mut self, id: SegmentId) -> &mut [f64] {
        let s = &self.segments[id.0];
        &mut self.values[s.offset..s.offset + s.len]
    }

    pub fn segment_meta(&self, id: SegmentId) -> &Segment {
        &self.segments[id.0]
    }

    pub fn segments(&self) -> impl Iterator<Item = (SegmentId, &Segment)> {
        self.segments.iter().enumerate().map(|(i, s)| (SegmentId(i), s))
    }

    pub fn id_by_name(&self, name: &str) -> Option<SegmentId> {
        self.segments.iter().position(|s| s.name == name).map(SegmentId)
    }

    /// Segment ranges must be disjoint, cover the value array exactly, and
    /// every value must be finite.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.offset != cursor {
                return Err(Error::invalid(format!(
                    "segment `{}` starts at {} but previous segments end at {cursor}",
                    s.name, s.offset
                )));
            }
            cursor += s.len;
        }
        if cursor != self.values.len() {
            return Err(Error::invalid(format!(
                "segments cover {cursor} values but store holds {}",
                self.values.len()
            )));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric("param_store", format!("value {i} is {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_contiguous_and_named() {
        let mut s = ParamStore::new();
        let a = s.add_segment("a", 3);
        let b = s.add_segment("b", 2);
        assert_eq!(s.len(), 5);
        assert_eq!(s.segment_meta(a).offset, 0);
        assert_eq!(s.segment_meta(b).offset, 3);
        assert_eq!(s.id_by_name("b"), Some(b));
        s.validate().unwrap();
    }

    #[test]
    fn validate_rejects_non_finite() {
        let mut s = ParamStore::new();
        let a = s.add_segment("a", 2);
        s.segment_mut(a)[1] = f64::NAN;
        assert!(s.validate().is_err());
    }
}
