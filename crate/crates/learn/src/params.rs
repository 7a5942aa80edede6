//! Named parameter matrices with lossless JSON serialization.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::graph::Mat;

#[derive(Serialize, Deserialize)]
struct MatData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn serialize_mat<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    MatData {
        rows: m.nrows(),
        cols: m.ncols(),
        data: m.iter().copied().collect(),
    }
    .serialize(s)
}

pub fn deserialize_mat<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
    let raw = MatData::deserialize(d)?;
    Array2::from_shape_vec((raw.rows, raw.cols), raw.data).map_err(serde::de::Error::custom)
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    #[serde(serialize_with = "serialize_mat", deserialize_with = "deserialize_mat")]
    value: Mat,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a matrix and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// `self ← τ·online + (1 − τ)·self`.
    pub fn soft_update_from(&mut self, online: &Params, tau: f64) {
        assert_eq!(self.len(), online.len(), "parameter sets differ");
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            t.zip_mut_with(o, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }
}

impl Serialize for Params {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.len()))?;
        for (name, value) in self.names.iter().zip(&self.values) {
            seq.serialize_element(&EntryRef { name, value })?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct EntryRef<'a> {
    name: &'a str,
    #[serde(serialize_with = "serialize_mat")]
    value: &'a Mat,
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        let mut p = Params::new();
        for e in entries {
            p.add(e.name, e.value);
        }
        Ok(p)
    }
}

/// Uniform `±1/√fan_in` initialization.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}
