use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_TAGS: usize = 5;

/// Position of a character relative to the token that contains it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B = 0,
    I = 1,
    E = 2,
    S = 3,
    X = 4,
}

impl Tag {
    /// All tags in index order. This order is also the decoding tie-break order.
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::I, Tag::E, Tag::S, Tag::X];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Tag::B => 'B',
            Tag::I => 'I',
            Tag::E => 'E',
            Tag::S => 'S',
            Tag::X => 'X',
        }
    }

    pub fn from_char(c: char) -> Option<Tag> {
        match c {
            'B' => Some(Tag::B),
            'I' => Some(Tag::I),
            'E' => Some(Tag::E),
            'S' => Some(Tag::S),
            'X' => Some(Tag::X),
            _ => None,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Tag::from_char(c).ok_or_else(|| format!("unknown tag {s:?}")),
            _ => Err(format!("unknown tag {s:?}")),
        }
    }
}

/// Per-character labels, aligned 1:1 with a character sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn new(tags: Vec<Tag>) -> Self {
        TagSequence(tags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tag> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Tag] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }

    pub fn from_indices(indices: &[usize]) -> Option<Self> {
        indices
            .iter()
            .map(|&i| Tag::from_index(i))
            .collect::<Option<Vec<_>>>()
            .map(TagSequence)
    }

    /// Whether the sequence is in the language `(X | S | B I* E)*`.
    pub fn is_well_formed(&self) -> bool {
        let mut inside = false;
        for tag in &self.0 {
            match (inside, tag) {
                (false, Tag::X | Tag::S) => {}
                (false, Tag::B) => inside = true,
                (true, Tag::I) => {}
                (true, Tag::E) => inside = false,
                _ => return false,
            }
        }
        !inside
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TagSequence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| Tag::from_char(c).ok_or_else(|| format!("unknown tag {c:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(TagSequence)
    }
}

impl From<Vec<Tag>> for TagSequence {
    fn from(v: Vec<Tag>) -> Self {
        TagSequence(v)
    }
}
