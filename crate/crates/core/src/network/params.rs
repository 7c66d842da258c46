use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Subject to L2 regularization.
    pub decay: bool,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Canonical ordering of named parameter tensors inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub(crate) fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }

    pub fn get(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Mask marking parameters that carry weight decay.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total()];
        for e in self.entries.iter().filter(|e| e.decay) {
            mask[e.range()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    next: usize,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, decay: bool) -> usize {
        let offset = self.next;
        let entry = LayoutEntry {
            name: name.into(),
            shape,
            offset,
            decay,
        };
        self.next += entry.len();
        self.entries.push(entry);
        offset
    }

    pub fn finish(self) -> Layout {
        Layout {
            entries: self.entries,
        }
    }
}

/// Flat parameter values bound to a shared [`Layout`].
#[derive(Debug, Clone)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl PartialEq for ParameterVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParameterVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::LayoutMismatch(format!(
                "layout holds {} values, got {}",
                layout.total(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("parameter vectors have different layouts".into()))
        }
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.layout
            .entries
            .iter()
            .map(|e| (e.name.as_str(), e.shape.as_slice(), &self.values[e.range()]))
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        Self::new(layout, values)
    }
}
