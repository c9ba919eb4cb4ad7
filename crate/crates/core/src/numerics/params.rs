use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{MrdgError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter storage split into named, contiguous segments that cover
/// the whole array in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vector from stored parts, checking the covering invariant.
    pub fn from_parts(segments: Vec<Segment>, data: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.offset != offset {
                return Err(MrdgError::contract("numerics", format!("segment {} is not contiguous", s.name)));
            }
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(MrdgError::contract("numerics", format!("duplicate segment {}", s.name)));
            }
            offset += s.len;
        }
        if offset != data.len() {
            return Err(MrdgError::contract(
                "numerics",
                format!("segments cover {offset} entries, data has {}", data.len()),
            ));
        }
        Ok(Self { segments, data })
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.segments.iter().any(|s| s.name == name) {
            return Err(MrdgError::contract("numerics", format!("duplicate segment {name}")));
        }
        self.segments.push(Segment {
            name,
            offset: self.data.len(),
            len: values.len(),
        });
        self.data.extend(values);
        Ok(())
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.offset..s.offset + s.len)
            .ok_or_else(|| MrdgError::contract("numerics", format!("no segment named {name}")))
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let r = self.range(name)?;
        Ok(&self.data[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.range(name)?;
        Ok(&mut self.data[r])
    }

    pub fn write(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let dst = self.segment_mut(name)?;
        if dst.len() != values.len() {
            return Err(MrdgError::contract(
                "numerics",
                format!("segment {name} has {} entries, got {}", dst.len(), values.len()),
            ));
        }
        dst.copy_from_slice(values);
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn has_segment(&self, name: &str) -> bool {
        self.segments.iter().any(|s| s.name == name)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self.segments.clone(),
            data: vec![0.0; self.data.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lookup_and_errors() {
        let mut p = ParameterVector::new();
        p.push("a", vec![1.0, 2.0]).unwrap();
        p.push("b", vec![3.0]).unwrap();
        assert!(p.push("a", vec![0.0]).is_err());
        assert_eq!(p.segment("b").unwrap(), &[3.0]);
        assert!(p.segment("c").is_err());
        assert!(p.write("a", &[1.0]).is_err());
        assert_eq!(p.range("b").unwrap(), 2..3);
    }

    #[test]
    fn from_parts_checks_cover() {
        let segs = vec![
            Segment { name: "x".into(), offset: 0, len: 1 },
            Segment { name: "y".into(), offset: 2, len: 1 },
        ];
        assert!(ParameterVector::from_parts(segs, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            lens in prop::collection::vec(1usize..6, 1..5),
            pick in 0usize..5,
            values in prop::collection::vec(-1e3f64..1e3, 6),
        ) {
            let mut p = ParameterVector::new();
            for (i, &l) in lens.iter().enumerate() {
                p.push(format!("s{i}"), vec![0.5; l]).unwrap();
            }
            let idx = pick % lens.len();
            let name = format!("s{idx}");
            let v = &values[..lens[idx]];
            let before: Vec<f64> = p.as_slice().to_vec();
            p.write(&name, v).unwrap();
            prop_assert_eq!(p.segment(&name).unwrap(), v);
            let r = p.range(&name).unwrap();
            for (i, (a, b)) in before.iter().zip(p.as_slice()).enumerate() {
                if !r.contains(&i) {
                    prop_assert_eq!(a, b);
                }
            }
        }
    }
}
