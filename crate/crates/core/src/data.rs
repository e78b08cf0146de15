//! Observation container and parameter points.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};

/// A fixed-width sample of `n` observation rows with named column roles.
///
/// Roles identify subvectors of each row (e.g. `x`, `z`, `y`, `s`, `a`,
/// `s_plus`) so losses can pull out what they need without caring about
/// the physical layout.
#[derive(Debug, Clone)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    width: usize,
    roles: BTreeMap<String, Range<usize>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, roles: Vec<(&str, Range<usize>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset must contain at least one row"));
        }
        let width = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {width}",
                    r.len()
                )));
            }
        }
        let mut map = BTreeMap::new();
        for (name, range) in roles {
            if range.end > width || range.start >= range.end {
                return Err(Error::invalid(format!(
                    "role '{name}' range {range:?} out of bounds for width {width}"
                )));
            }
            map.insert(name.to_string(), range);
        }
        Ok(Dataset {
            rows,
            width,
            roles: map,
        })
    }

    /// Single unnamed column from a flat vector of scalars.
    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        let rows = values.into_iter().map(|v| vec![v]).collect();
        Dataset::new(rows, vec![("y", 0..1)])
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn role(&self, name: &str) -> Result<Range<usize>> {
        self.roles
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("unknown column role '{name}'")))
    }

    pub fn has_role(&self, name: &str) -> bool {
        self.roles.contains_key(name)
    }

    /// Slice of one row identified by role.
    pub fn slice<'a>(&self, row: &'a [f64], name: &str) -> Result<&'a [f64]> {
        let r = self.role(name)?;
        Ok(&row[r])
    }

    /// Column of scalars for a width-1 role.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let r = self.role(name)?;
        if r.len() != 1 {
            return Err(Error::invalid(format!("role '{name}' is not scalar")));
        }
        Ok(self.rows.iter().map(|row| row[r.start]).collect())
    }
}

/// A point in a finite-dimensional parameter space, tagged with the id of
/// the space that owns it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub coords: Vec<f64>,
    pub space_id: String,
}

impl ParamPoint {
    pub fn new(coords: Vec<f64>, space_id: impl Into<String>) -> Self {
        ParamPoint {
            coords,
            space_id: space_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_rows() {
        let err = Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn rejects_empty() {
        assert!(Dataset::new(vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_out_of_bounds_role() {
        let err = Dataset::new(vec![vec![1.0, 2.0]], vec![("x", 1..3)]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn role_slicing() {
        let d = Dataset::new(
            vec![vec![1.0, 2.0, 3.0]],
            vec![("y", 0..1), ("x", 1..3)],
        )
        .unwrap();
        let row = d.row(0).to_vec();
        assert_eq!(d.slice(&row, "x").unwrap(), &[2.0, 3.0]);
        assert_eq!(d.column("y").unwrap(), vec![1.0]);
    }
}
