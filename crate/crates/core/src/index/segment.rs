//! Immutable index segments and query evaluation over them.

use std::collections::HashMap;

use crate::geohash;
use crate::model::GeoPoint;

use super::query::{Bound, Query, Scalar};
use super::value::{normalize_keyword, Document, FieldValue};

/// Above this many sampled grid points a bbox query scans the geo column
/// instead of enumerating covering cells.
const MAX_COVERING_SAMPLES: f64 = 4096.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Bits {
        Bits { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn ones(len: usize) -> Bits {
        let mut b = Bits { words: vec![u64::MAX; len.div_ceil(64)], len };
        b.trim();
        b
    }

    fn trim(&mut self) {
        let extra = self.words.len() * 64 - self.len;
        if extra > 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= u64::MAX >> extra;
            }
        }
    }

    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn and(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a &= b);
    }

    pub fn or(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a |= b);
    }

    pub fn and_not(&mut self, o: &Bits) {
        self.words.iter_mut().zip(&o.words).for_each(|(a, b)| *a &= !b);
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StoredDoc {
    pub id: String,
    pub version: u64,
    pub fields: Document,
}

#[derive(Debug)]
pub(crate) struct Segment {
    pub docs: Vec<StoredDoc>,
    /// field -> normalized term -> ordinals (ascending)
    keyword: HashMap<String, HashMap<String, Vec<u32>>>,
    /// field -> (value, ordinal) sorted by value; number and time fields
    numeric: HashMap<String, Vec<(f64, u32)>>,
    /// field -> geohash cell -> ordinals
    geo: HashMap<String, HashMap<String, Vec<u32>>>,
    geo_precision: usize,
}

impl Segment {
    pub fn build(docs: Vec<StoredDoc>, geo_precision: usize) -> Segment {
        let mut keyword: HashMap<String, HashMap<String, Vec<u32>>> = HashMap::new();
        let mut numeric: HashMap<String, Vec<(f64, u32)>> = HashMap::new();
        let mut geo: HashMap<String, HashMap<String, Vec<u32>>> = HashMap::new();
        for (ord, d) in docs.iter().enumerate() {
            let ord = ord as u32;
            for (field, v) in &d.fields {
                match v {
                    FieldValue::Str(s) => keyword
                        .entry(field.clone())
                        .or_default()
                        .entry(normalize_keyword(s))
                        .or_default()
                        .push(ord),
                    FieldValue::Num(_) | FieldValue::Time(_) => {
                        numeric.entry(field.clone()).or_default().push((v.as_f64().unwrap(), ord))
                    }
                    FieldValue::Geo(p) => geo
                        .entry(field.clone())
                        .or_default()
                        .entry(geohash::encode(*p, geo_precision))
                        .or_default()
                        .push(ord),
                }
            }
        }
        for col in numeric.values_mut() {
            col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Segment { docs, keyword, numeric, geo, geo_precision }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    fn bits_of<'a>(&self, ords: impl IntoIterator<Item = &'a u32>) -> Bits {
        let mut b = Bits::zeros(self.len());
        for &o in ords {
            b.set(o as usize);
        }
        b
    }

    /// Ordinals whose numeric value lies within the bounds.
    fn numeric_range(&self, field: &str, lo: Option<(f64, bool)>, hi: Option<(f64, bool)>) -> Bits {
        let Some(col) = self.numeric.get(field) else {
            return Bits::zeros(self.len());
        };
        let start = match lo {
            None => 0,
            Some((x, true)) => col.partition_point(|e| e.0 < x),
            Some((x, false)) => col.partition_point(|e| e.0 <= x),
        };
        let end = match hi {
            None => col.len(),
            Some((x, true)) => col.partition_point(|e| e.0 <= x),
            Some((x, false)) => col.partition_point(|e| e.0 < x),
        };
        let mut b = Bits::zeros(self.len());
        if start < end {
            for e in &col[start..end] {
                b.set(e.1 as usize);
            }
        }
        b
    }

    fn keyword_range(&self, field: &str, lo: Option<(&str, bool)>, hi: Option<(&str, bool)>) -> Bits {
        let mut b = Bits::zeros(self.len());
        let Some(terms) = self.keyword.get(field) else {
            return b;
        };
        let lo = lo.map(|(s, inc)| (normalize_keyword(s), inc));
        let hi = hi.map(|(s, inc)| (normalize_keyword(s), inc));
        for (term, ords) in terms {
            let above = lo.as_ref().is_none_or(|(l, inc)| if *inc { term >= l } else { term > l });
            let below = hi.as_ref().is_none_or(|(h, inc)| if *inc { term <= h } else { term < h });
            if above && below {
                ords.iter().for_each(|&o| b.set(o as usize));
            }
        }
        b
    }

    fn geo_bbox(&self, field: &str, top_left: GeoPoint, bottom_right: GeoPoint) -> Bits {
        let mut b = Bits::zeros(self.len());
        let Some(cells) = self.geo.get(field) else {
            return b;
        };
        let (lat_min, lat_max) = (bottom_right.lat, top_left.lat);
        let boxes: Vec<(f64, f64)> = if top_left.lng <= bottom_right.lng {
            vec![(top_left.lng, bottom_right.lng)]
        } else {
            vec![(top_left.lng, 180.0), (-180.0, bottom_right.lng)]
        };
        let inside = |p: &GeoPoint| {
            p.lat >= lat_min && p.lat <= lat_max && boxes.iter().any(|&(lo, hi)| p.lng >= lo && p.lng <= hi)
        };
        let mut check = |ords: &[u32]| {
            for &o in ords {
                if let Some(FieldValue::Geo(p)) = self.docs[o as usize].fields.get(field) {
                    if inside(p) {
                        b.set(o as usize);
                    }
                }
            }
        };
        let samples: f64 = boxes
            .iter()
            .map(|&(lo, hi)| geohash::covering_estimate(lat_min, lat_max, lo, hi, self.geo_precision))
            .sum();
        if samples > MAX_COVERING_SAMPLES || samples > cells.len() as f64 {
            cells.values().for_each(|ords| check(ords));
        } else {
            for &(lo, hi) in &boxes {
                for cell in geohash::covering_cells(lat_min, lat_max, lo, hi, self.geo_precision) {
                    if let Some(ords) = cells.get(&cell) {
                        check(ords);
                    }
                }
            }
        }
        b
    }

    /// Ordinals matching `q`, ignoring liveness.
    pub fn eval(&self, q: &Query) -> Bits {
        match q {
            Query::MatchAll => Bits::ones(self.len()),
            Query::Term { field, value: Scalar::Str(s) } => match self.keyword.get(field).and_then(|t| t.get(&normalize_keyword(s))) {
                Some(ords) => self.bits_of(ords),
                None => Bits::zeros(self.len()),
            },
            Query::Term { field, value: Scalar::Num(x) } => self.numeric_range(field, Some((*x, true)), Some((*x, true))),
            Query::Range { field, min, max } => {
                let mut out = Bits::zeros(self.len());
                if let (Some(lo), Some(hi)) = (num(min), num(max)) {
                    out.or(&self.numeric_range(field, lo, hi));
                }
                if let (Some(lo), Some(hi)) = (text(min), text(max)) {
                    out.or(&self.keyword_range(field, lo, hi));
                }
                out
            }
            Query::GeoBbox { field, top_left, bottom_right } => self.geo_bbox(field, *top_left, *bottom_right),
            Query::Bool { must, should, must_not } => {
                let mut out = Bits::ones(self.len());
                for q in must {
                    out.and(&self.eval(q));
                }
                if !should.is_empty() {
                    let mut any = Bits::zeros(self.len());
                    for q in should {
                        any.or(&self.eval(q));
                    }
                    out.and(&any);
                }
                for q in must_not {
                    out.and_not(&self.eval(q));
                }
                out
            }
        }
    }
}

/// `Some(bound)` when the bound is absent or numeric, `None` otherwise.
fn num(b: &Option<Bound>) -> Option<Option<(f64, bool)>> {
    match b {
        None => Some(None),
        Some(Bound { value: Scalar::Num(x), inclusive }) => Some(Some((*x, *inclusive))),
        Some(_) => None,
    }
}

fn text(b: &Option<Bound>) -> Option<Option<(&str, bool)>> {
    match b {
        None => Some(None),
        Some(Bound { value: Scalar::Str(s), inclusive }) => Some(Some((s.as_str(), *inclusive))),
        Some(_) => None,
    }
}
