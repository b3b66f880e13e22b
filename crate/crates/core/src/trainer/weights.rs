use std::collections::BTreeMap;

use crate::data::SampleKey;

/// Per-sample weights. Keys never written read as 1.0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightTable {
    values: BTreeMap<SampleKey, f64>,
}

impl WeightTable {
    pub const INITIAL: f64 = 1.0;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &SampleKey) -> f64 {
        self.values.get(key).copied().unwrap_or(Self::INITIAL)
    }

    pub fn set(&mut self, key: SampleKey, value: f64) {
        self.values.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SampleKey, &f64)> {
        self.values.iter()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.values().copied()
    }
}

impl FromIterator<(SampleKey, f64)> for WeightTable {
    fn from_iter<I: IntoIterator<Item = (SampleKey, f64)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_keys_read_as_one() {
        let mut t = WeightTable::new();
        let k = SampleKey { user: 3, cut: 7 };
        assert_eq!(t.get(&k), 1.0);
        t.set(k, 0.25);
        assert_eq!(t.get(&k), 0.25);
        assert_eq!(t.get(&SampleKey { user: 3, cut: 8 }), 1.0);
        assert_eq!(t.len(), 1);
    }
}
