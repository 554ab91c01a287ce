use serde::Serialize;

/// Construction symbol for the delimiter; alphabet symbols are `1..=q`.
pub const DELIM: u32 = 0;

/// The six orthonormal families of the construction's coordinate space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// e: encoder coordinates read by block-1 head 1.
    E,
    /// e′: encoder coordinates read by the ordering heads.
    EPrime,
    /// ẽ: block-1 head-1 output.
    Tilde,
    /// ẽ′: block-1 MLP output.
    TildePrime,
    /// ê: block-2 head-1 output.
    Hat,
    /// ê′: ordering-head outputs.
    HatPrime,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::E, Family::EPrime, Family::Tilde, Family::TildePrime, Family::Hat, Family::HatPrime];

    pub fn offset(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::E => "e",
            Family::EPrime => "e'",
            Family::Tilde => "e~",
            Family::TildePrime => "e~'",
            Family::Hat => "e^",
            Family::HatPrime => "e^'",
        }
    }
}

/// One coordinate per (family, symbol) pair, `d = 6(q+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BasisAtlas {
    pub q: usize,
}

impl BasisAtlas {
    pub fn new(q: usize) -> Self {
        Self { q }
    }

    pub fn dim(&self) -> usize {
        6 * (self.q + 1)
    }

    /// Coordinate of `family` for symbol `s ∈ {⊥} ∪ 1..=q`.
    pub fn index(&self, family: Family, s: u32) -> usize {
        debug_assert!(s as usize <= self.q);
        family.offset() * (self.q + 1) + s as usize
    }

    /// Inverse of [`BasisAtlas::index`].
    pub fn locate(&self, index: usize) -> (Family, u32) {
        let w = self.q + 1;
        (Family::ALL[index / w], (index % w) as u32)
    }

    /// Input embedding `e_s + e′_s` as a dense vector.
    pub fn encode(&self, s: u32) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        x[self.index(Family::E, s)] = 1.0;
        x[self.index(Family::EPrime, s)] = 1.0;
        x
    }

    pub fn symbols(&self) -> impl Iterator<Item = u32> {
        1..=self.q as u32
    }
}
