//! Character-offset helpers. All public offsets in this crate count Unicode
//! scalar values, never bytes.

/// Byte offset of every char boundary in `text`, including the end.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bounds: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bounds.push(text.len());
        Self { bounds }
    }

    /// Number of chars in the indexed text.
    pub fn char_len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn byte_of(&self, char_offset: usize) -> Option<usize> {
        self.bounds.get(char_offset).copied()
    }

    /// Char offset of a byte offset, if it falls on a char boundary.
    pub fn char_of_byte(&self, byte_offset: usize) -> Option<usize> {
        self.bounds.binary_search(&byte_offset).ok()
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end {
            return None;
        }
        Some(&text[self.byte_of(start)?..self.byte_of(end)?])
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Slice by char offsets; `None` when out of range or inverted.
pub fn slice_chars(text: &str, start: usize, end: usize) -> Option<&str> {
    CharIndex::new(text).slice(text, start, end)
}
